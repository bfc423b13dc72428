// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Simulated physical memory.
//!
//! Memory is an array of fixed-size granules. Each granule belongs to exactly
//! one physical address space at a time, and every read or write goes through
//! the inter-world access matrix in [`access_allowed`]. Isolation between two
//! realms is not decided here: the matrix is world-granular, and the RMM adds
//! per-realm ownership checks on top.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostLedger, EventKind};
use crate::rmm::RealmId;

pub const GRANULE_SIZE: usize = 4096;

pub type GranuleId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum World {
    Normal,
    Realm,
    Secure,
    Root,
}

impl World {
    pub const ALL: [World; 4] = [World::Normal, World::Realm, World::Secure, World::Root];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GranuleState {
    NormalWorld,
    DelegatedRealm,
    RealmOwned(RealmId),
    Root,
    Secure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GranuleError {
    #[error("granule {0} does not exist")]
    NotFound(GranuleId),
    #[error("granule {id} is {state:?}, expected {expected}")]
    Lifecycle {
        id: GranuleId,
        state: GranuleState,
        expected: &'static str,
    },
    #[error("{actor:?} world may not {kind:?} a {state:?} granule")]
    AccessViolation {
        actor: World,
        state: GranuleState,
        kind: AccessKind,
    },
    #[error("range {offset}+{len} exceeds the granule size")]
    Bounds { offset: usize, len: usize },
}

/// The inter-world access matrix.
///
/// Root may touch everything. Realm may touch normal memory and realm
/// memory. Secure may touch normal and secure memory. Normal may only touch
/// normal memory. Reads and writes are treated alike.
pub fn access_allowed(actor: World, state: GranuleState, _kind: AccessKind) -> Access {
    use GranuleState::*;
    let allowed = match actor {
        World::Root => true,
        World::Realm => matches!(state, NormalWorld | DelegatedRealm | RealmOwned(_)),
        World::Secure => matches!(state, NormalWorld | Secure),
        World::Normal => matches!(state, NormalWorld),
    };
    if allowed {
        Access::Allow
    } else {
        Access::Deny
    }
}

#[derive(Clone, Debug)]
pub struct Granule {
    pub index: GranuleId,
    pub state: GranuleState,
    // None means all zeroes; pages are materialised on first write.
    contents: Option<Box<[u8; GRANULE_SIZE]>>,
}

impl Granule {
    fn new(index: GranuleId, state: GranuleState) -> Self {
        Self {
            index,
            state,
            contents: None,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        static ZERO: [u8; GRANULE_SIZE] = [0; GRANULE_SIZE];
        match &self.contents {
            Some(page) => &page[..],
            None => &ZERO,
        }
    }

    pub fn is_zeroed(&self) -> bool {
        self.contents.as_ref().is_none_or(|p| p.iter().all(|&b| b == 0))
    }

    fn scrub(&mut self) {
        self.contents = None;
    }

    fn page_mut(&mut self) -> &mut [u8; GRANULE_SIZE] {
        self.contents.get_or_insert_with(|| Box::new([0; GRANULE_SIZE]))
    }
}

/// How the granule space is laid out at power-on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub root: u64,
    pub secure: u64,
    pub normal: u64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            root: 1,
            secure: 1,
            normal: 62,
        }
    }
}

/// All of physical memory.
#[derive(Clone, Debug)]
pub struct GranuleSpace {
    granules: Vec<Granule>,
}

impl GranuleSpace {
    /// Root granules come first, then secure, then normal-world memory.
    pub fn new(layout: Layout) -> Self {
        let mut granules = Vec::new();
        let mut push = |n: u64, state: GranuleState| {
            for _ in 0..n {
                let idx = granules.len() as GranuleId;
                granules.push(Granule::new(idx, state));
            }
        };
        push(layout.root, GranuleState::Root);
        push(layout.secure, GranuleState::Secure);
        push(layout.normal, GranuleState::NormalWorld);
        Self { granules }
    }

    pub fn len(&self) -> usize {
        self.granules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.granules.is_empty()
    }

    pub fn get(&self, id: GranuleId) -> Result<&Granule, GranuleError> {
        self.granules.get(id as usize).ok_or(GranuleError::NotFound(id))
    }

    fn get_mut(&mut self, id: GranuleId) -> Result<&mut Granule, GranuleError> {
        self.granules.get_mut(id as usize).ok_or(GranuleError::NotFound(id))
    }

    pub fn state(&self, id: GranuleId) -> Result<GranuleState, GranuleError> {
        Ok(self.get(id)?.state)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Granule> {
        self.granules.iter()
    }

    pub fn count_in(&self, state: GranuleState) -> usize {
        self.granules.iter().filter(|g| g.state == state).count()
    }

    /// Ids of granules currently in `state`, ascending.
    pub fn ids_in(&self, state: GranuleState) -> Vec<GranuleId> {
        self.granules
            .iter()
            .filter(|g| g.state == state)
            .map(|g| g.index)
            .collect()
    }

    pub fn check_access(&self, actor: World, id: GranuleId, kind: AccessKind) -> Result<Access, GranuleError> {
        Ok(access_allowed(actor, self.get(id)?.state, kind))
    }

    /// NormalWorld -> DelegatedRealm, scrubbing the contents.
    pub fn delegate(&mut self, id: GranuleId) -> Result<GranuleState, GranuleError> {
        let g = self.get_mut(id)?;
        if g.state != GranuleState::NormalWorld {
            return Err(GranuleError::Lifecycle {
                id,
                state: g.state,
                expected: "NormalWorld",
            });
        }
        g.state = GranuleState::DelegatedRealm;
        g.scrub();
        Ok(g.state)
    }

    /// DelegatedRealm -> NormalWorld, scrubbing the contents.
    pub fn undelegate(&mut self, id: GranuleId) -> Result<GranuleState, GranuleError> {
        let g = self.get_mut(id)?;
        if g.state != GranuleState::DelegatedRealm {
            return Err(GranuleError::Lifecycle {
                id,
                state: g.state,
                expected: "DelegatedRealm",
            });
        }
        g.state = GranuleState::NormalWorld;
        g.scrub();
        Ok(g.state)
    }

    /// DelegatedRealm -> RealmOwned, installing `content`. Only the RMM calls
    /// this, while populating a realm.
    pub(crate) fn claim(
        &mut self,
        id: GranuleId,
        owner: RealmId,
        content: &[u8; GRANULE_SIZE],
    ) -> Result<(), GranuleError> {
        let g = self.get_mut(id)?;
        if g.state != GranuleState::DelegatedRealm {
            return Err(GranuleError::Lifecycle {
                id,
                state: g.state,
                expected: "DelegatedRealm",
            });
        }
        g.state = GranuleState::RealmOwned(owner);
        if content.iter().all(|&b| b == 0) {
            g.scrub();
        } else {
            g.page_mut().copy_from_slice(content);
        }
        Ok(())
    }

    /// RealmOwned -> DelegatedRealm, scrubbing the contents. Used on realm
    /// destruction.
    pub(crate) fn release(&mut self, id: GranuleId) -> Result<(), GranuleError> {
        let g = self.get_mut(id)?;
        if !matches!(g.state, GranuleState::RealmOwned(_)) {
            return Err(GranuleError::Lifecycle {
                id,
                state: g.state,
                expected: "RealmOwned",
            });
        }
        g.state = GranuleState::DelegatedRealm;
        g.scrub();
        Ok(())
    }

    fn checked_range(offset: usize, len: usize) -> Result<(), GranuleError> {
        match offset.checked_add(len) {
            Some(end) if end <= GRANULE_SIZE => Ok(()),
            _ => Err(GranuleError::Bounds { offset, len }),
        }
    }

    /// Mediated read. Each call is charged to `ledger` as one memory access
    /// by `actor`.
    pub fn read(
        &self,
        ledger: &mut CostLedger,
        actor: World,
        id: GranuleId,
        offset: usize,
        len: usize,
    ) -> Result<Vec<u8>, GranuleError> {
        let g = self.get(id)?;
        if access_allowed(actor, g.state, AccessKind::Read) == Access::Deny {
            return Err(GranuleError::AccessViolation {
                actor,
                state: g.state,
                kind: AccessKind::Read,
            });
        }
        Self::checked_range(offset, len)?;
        ledger.charge(EventKind::MemoryAccess, actor);
        Ok(g.bytes()[offset..offset + len].to_vec())
    }

    /// Mediated write. Each call is charged to `ledger` as one memory access
    /// by `actor`.
    pub fn write(
        &mut self,
        ledger: &mut CostLedger,
        actor: World,
        id: GranuleId,
        offset: usize,
        data: &[u8],
    ) -> Result<(), GranuleError> {
        let g = self.get_mut(id)?;
        if access_allowed(actor, g.state, AccessKind::Write) == Access::Deny {
            return Err(GranuleError::AccessViolation {
                actor,
                state: g.state,
                kind: AccessKind::Write,
            });
        }
        Self::checked_range(offset, data.len())?;
        ledger.charge(EventKind::MemoryAccess, actor);
        if data.iter().all(|&b| b == 0) && g.contents.is_none() {
            return Ok(());
        }
        g.page_mut()[offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }
}
