// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Exchange records shared between the host and the realm runtime.
//!
//! The exchange region is a set of normal-world granules ("slots"). Each
//! record is laid out as:
//!
//! ```text
//! 0x47 0x54 | type u8 | request id u64 LE | payload len u16 LE | payload | consumed u8
//! ```
//!
//! Type 0 is an input (payload: features as `i32` LE), type 1 an output
//! (payload: class index as `u32` LE). The host writes an input at the
//! start of a free slot; the realm sets its consumed flag and appends the
//! output record right after it. Zero bytes past the last record are free
//! space. Anything else is garbage: a scan skips it and counts each
//! contiguous run once.

use crate::GRANULE_SIZE;

pub const MAGIC: [u8; 2] = [0x47, 0x54];
pub const HEADER_LEN: usize = 13;
pub const DEFAULT_SLOTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordType {
    Input = 0,
    Output = 1,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub kind: RecordType,
    pub request_id: u64,
    pub payload: Vec<u8>,
    pub consumed: bool,
}

impl Record {
    pub fn input(request_id: u64, features: &[i32]) -> Self {
        Self {
            kind: RecordType::Input,
            request_id,
            payload: features.iter().flat_map(|x| x.to_le_bytes()).collect(),
            consumed: false,
        }
    }

    pub fn output(request_id: u64, class: u32) -> Self {
        Self {
            kind: RecordType::Output,
            request_id,
            payload: class.to_le_bytes().to_vec(),
            consumed: false,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 1
    }

    /// Offset of the consumed flag relative to the record start.
    pub fn flag_offset(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.push(self.consumed as u8);
        out
    }

    fn parse_at(bytes: &[u8], pos: usize) -> Option<Self> {
        let b = bytes.get(pos..)?;
        if b.len() < HEADER_LEN + 1 || b[..2] != MAGIC {
            return None;
        }
        let kind = match b[2] {
            0 => RecordType::Input,
            1 => RecordType::Output,
            _ => return None,
        };
        let request_id = u64::from_le_bytes(b[3..11].try_into().unwrap());
        let len = u16::from_le_bytes(b[11..13].try_into().unwrap()) as usize;
        let flag = *b.get(HEADER_LEN + len)?;
        if flag > 1 {
            return None;
        }
        Some(Self {
            kind,
            request_id,
            payload: b[HEADER_LEN..HEADER_LEN + len].to_vec(),
            consumed: flag == 1,
        })
    }

    /// Features of an input record with `features` entries.
    pub fn features(&self, features: usize) -> Option<Vec<i32>> {
        if self.kind != RecordType::Input || self.payload.len() != features * 4 {
            return None;
        }
        Some(
            self.payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    pub fn class(&self) -> Option<u32> {
        if self.kind != RecordType::Output || self.payload.len() != 4 {
            return None;
        }
        Some(u32::from_le_bytes(self.payload[..].try_into().unwrap()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scan {
    /// Records with their byte offset in the slot.
    pub records: Vec<(usize, Record)>,
    pub malformed: usize,
    /// One past the last non-zero byte.
    pub used: usize,
}

/// Parse every record in one slot.
pub fn scan(bytes: &[u8]) -> Scan {
    debug_assert!(bytes.len() <= GRANULE_SIZE);
    let nonzero = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
    let mut out = Scan {
        used: nonzero,
        ..Scan::default()
    };
    let mut pos = 0;
    let mut in_garbage = false;
    while pos < nonzero {
        if let Some(rec) = Record::parse_at(bytes, pos) {
            let len = rec.encoded_len();
            out.records.push((pos, rec));
            pos += len;
            // A record may end in zero bytes past the last non-zero one.
            out.used = out.used.max(pos);
            in_garbage = false;
        } else {
            if !in_garbage {
                out.malformed += 1;
                in_garbage = true;
            }
            pos += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let rec = Record::input(0x0102, &[1, -1]);
        let enc = rec.encode();
        assert_eq!(
            enc,
            [0x47, 0x54, 0, 0x02, 0x01, 0, 0, 0, 0, 0, 0, 8, 0, 1, 0, 0, 0, 0xff, 0xff, 0xff, 0xff, 0]
        );
        assert_eq!(Record::output(5, 2).encode().len(), 18);
    }

    #[test]
    fn empty_slot() {
        assert_eq!(scan(&[0; 64]), Scan::default());
    }

    #[test]
    fn garbage_then_valid_record() {
        let mut page = vec![0u8; GRANULE_SIZE];
        page[..5].copy_from_slice(&[0xde, 0xad, 0x47, 0x00, 0x13]);
        let rec = Record::input(9, &[4, 5, 6, 7]);
        page[5..5 + rec.encoded_len()].copy_from_slice(&rec.encode());
        let s = scan(&page);
        assert_eq!(s.malformed, 1);
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.records[0].0, 5);
        assert_eq!(s.records[0].1.features(4), Some(vec![4, 5, 6, 7]));
    }

    #[test]
    fn input_then_output() {
        let mut page = Record::input(1, &[0; 4]).encode();
        page[HEADER_LEN + 16] = 1;
        page.extend(Record::output(1, 2).encode());
        let s = scan(&page);
        assert_eq!(s.malformed, 0);
        assert!(s.records[0].1.consumed);
        assert_eq!(s.records[1].1.class(), Some(2));
    }

    #[test]
    fn used_covers_trailing_zero_bytes() {
        let mut page = vec![0u8; GRANULE_SIZE];
        let rec = Record::input(0, &[0; 4]).encode();
        page[..rec.len()].copy_from_slice(&rec);
        assert_eq!(scan(&page).used, rec.len());
    }

    #[test]
    fn bad_flag_or_type_is_garbage() {
        let mut enc = Record::input(1, &[0; 4]).encode();
        *enc.last_mut().unwrap() = 7;
        assert_eq!(scan(&enc).records.len(), 0);
        let mut enc = Record::input(1, &[0; 4]).encode();
        enc[2] = 9;
        let s = scan(&enc);
        assert!(s.records.is_empty());
        assert_eq!(s.malformed, 1);
    }

    proptest! {
        #[test]
        fn scan_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let s = scan(&bytes);
            prop_assert!(s.used <= bytes.len());
            for (off, r) in &s.records {
                prop_assert!(off + r.encoded_len() <= s.used);
            }
        }

        #[test]
        fn records_survive_a_scan(ids in proptest::collection::vec(any::<u64>(), 1..20)) {
            let mut page = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                page.extend(Record::input(*id, &[i as i32; 4]).encode());
            }
            let s = scan(&page);
            prop_assert_eq!(s.malformed, 0);
            let got: Vec<u64> = s.records.iter().map(|(_, r)| r.request_id).collect();
            prop_assert_eq!(got, ids);
        }
    }
}
