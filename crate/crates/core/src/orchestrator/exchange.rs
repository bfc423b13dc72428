// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Host side of the exchange region: one slot per normal-world granule.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::granule::{GranuleError, GranuleId};
use crate::rmm::Machine;
use crate::runtime::exchange::{scan, Record};
use crate::GRANULE_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("exchange region is full ({0} pending requests)")]
    ExchangeFull(usize),
    #[error(transparent)]
    Granule(#[from] GranuleError),
}

#[derive(Clone, Debug)]
pub struct Exchange {
    slots: Vec<GranuleId>,
    /// Slot index -> request id waiting there.
    pending: BTreeMap<usize, u64>,
    next_id: u64,
}

impl Exchange {
    pub fn new(slots: Vec<GranuleId>) -> Self {
        Self {
            slots,
            pending: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn slots(&self) -> &[GranuleId] {
        &self.slots
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Write an input to a free slot and return its request id.
    pub fn put_input(&mut self, m: &mut Machine, features: &[i32]) -> Result<u64, ExchangeError> {
        let slot = (0..self.slots.len())
            .find(|i| !self.pending.contains_key(i))
            .ok_or(ExchangeError::ExchangeFull(self.pending.len()))?;
        let id = self.next_id;
        m.host_write(self.slots[slot], 0, &Record::input(id, features).encode())?;
        self.next_id += 1;
        self.pending.insert(slot, id);
        Ok(id)
    }

    /// Collect finished outputs as `(request id, class)` and free their
    /// slots.
    pub fn take_outputs(&mut self, m: &mut Machine) -> Result<Vec<(u64, u32)>, ExchangeError> {
        let mut out = Vec::new();
        let pending: Vec<(usize, u64)> = self.pending.iter().map(|(&s, &id)| (s, id)).collect();
        for (slot, id) in pending {
            let g = self.slots[slot];
            let page = m.host_read(g, 0, GRANULE_SIZE)?;
            let found = scan(&page)
                .records
                .into_iter()
                .find_map(|(_, r)| (r.request_id == id).then(|| r.class()).flatten());
            if let Some(class) = found {
                out.push((id, class));
                m.host_write(g, 0, &[0; GRANULE_SIZE])?;
                self.pending.remove(&slot);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}
