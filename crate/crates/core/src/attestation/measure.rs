// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Measurement hash chains.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::Digest;

pub const ZERO_DIGEST: Digest = [0; 32];

pub fn sha256(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

/// One populated granule as it enters the initial measurement.
///
/// Encodes as `content_digest ‖ target_addr` (little-endian), 40 bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MeasurementRecord {
    pub content_digest: Digest,
    pub target_addr: u64,
}

impl MeasurementRecord {
    pub const ENCODED_LEN: usize = 40;

    pub fn for_content(content: &[u8], target_addr: u64) -> Self {
        Self {
            content_digest: sha256(content),
            target_addr,
        }
    }

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0; Self::ENCODED_LEN];
        out[..32].copy_from_slice(&self.content_digest);
        out[32..].copy_from_slice(&self.target_addr.to_le_bytes());
        out
    }
}

/// `H(digest ‖ record)`.
pub fn extend(digest: &Digest, record: &MeasurementRecord) -> Digest {
    let mut h = Sha256::new();
    h.update(digest);
    h.update(record.to_bytes());
    h.finalize().into()
}

/// `H(digest ‖ value)`, for creation records and runtime measurements.
pub fn extend_digest(digest: &Digest, value: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(digest);
    h.update(value);
    h.finalize().into()
}

/// Fold [`extend_digest`] over `values` starting from zero.
pub fn digest_chain<'a>(values: impl IntoIterator<Item = &'a Digest>) -> Digest {
    values.into_iter().fold(ZERO_DIGEST, |acc, v| extend_digest(&acc, v))
}

/// Where a realm starts executing: a page of its address space plus an
/// offset into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EntryPoint {
    pub granule: u64,
    pub offset: u32,
}

impl EntryPoint {
    /// `granule` (u64 LE) ‖ `offset` (u32 LE).
    pub fn to_bytes(&self) -> [u8; 12] {
        let mut out = [0; 12];
        out[..8].copy_from_slice(&self.granule.to_le_bytes());
        out[8..].copy_from_slice(&self.offset.to_le_bytes());
        out
    }

    /// Guest address of the entry page.
    pub fn target_addr(&self) -> u64 {
        self.granule * crate::GRANULE_SIZE as u64
    }
}

/// `H(personalization ‖ entry_point)`.
pub fn realm_params_digest(personalization: &[u8; 64], entry: &EntryPoint) -> Digest {
    let mut h = Sha256::new();
    h.update(personalization);
    h.update(entry.to_bytes());
    h.finalize().into()
}

/// Measurement of a freshly created realm: zero extended with the creation
/// record.
pub fn initial_rim(personalization: &[u8; 64], entry: &EntryPoint) -> Digest {
    extend_digest(&ZERO_DIGEST, &realm_params_digest(personalization, entry))
}

/// Initial measurement after creating a realm and populating `segments` in
/// order.
pub fn expected_rim<'a>(
    personalization: &[u8; 64],
    entry: &EntryPoint,
    segments: impl IntoIterator<Item = (u64, &'a [u8])>,
) -> Digest {
    segments
        .into_iter()
        .fold(initial_rim(personalization, entry), |rim, (addr, content)| {
            extend(&rim, &MeasurementRecord::for_content(content, addr))
        })
}
