// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Batch checks that fan out over [`crate::parallel`]: random lifecycle
//! command sequences and single-byte tampering of attestation reports.

use rand::Rng;

use crate::attestation::{Appraiser, Challenge, EntryPoint, ReferenceValues, Verdict};
use crate::granule::{GranuleState, Layout, World};
use crate::rmm::{Machine, MachineConfig, RealmId, RealmParams, RealmState, RmiCommand, RsiCall};
use crate::seed::derive_indexed;
use crate::{Digest, GRANULE_SIZE};

/// Sequential or data-parallel execution of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

fn run_indexed<U: Send, F: Fn(usize) -> U + Sync + Send>(mode: Mode, n: usize, f: F) -> Vec<U> {
    match mode {
        Mode::Sequential => crate::parallel::map_indexed_sequential(n, f),
        Mode::Parallel => crate::parallel::map_indexed(n, f),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuzzSummary {
    pub sequences: usize,
    pub commands: usize,
    pub rejected: usize,
    /// First violation of each failing sequence.
    pub violations: Vec<String>,
}

const FUZZ_LAYOUT: Layout = Layout {
    root: 1,
    secure: 1,
    normal: 6,
};

enum Cmd {
    Rmi(World, RmiCommand),
    Rsi(World, RealmId, RsiCall),
}

fn random_command(rng: &mut impl Rng) -> Cmd {
    let granule = rng.gen_range(0..FUZZ_LAYOUT.root + FUZZ_LAYOUT.secure + FUZZ_LAYOUT.normal + 1);
    let realm = RealmId(rng.gen_range(1..=3));
    let caller = match rng.gen_range(0..10) {
        0 => World::Realm,
        1 => World::Secure,
        2 => World::Root,
        _ => World::Normal,
    };
    let rmi = match rng.gen_range(0..10) {
        0 => {
            let digest: Digest = rng.gen();
            let call = match rng.gen_range(0..2) {
                0 => RsiCall::MeasurementExtend {
                    index: rng.gen_range(0..5),
                    digest,
                },
                _ => {
                    let mut challenge = [0u8; 64];
                    rng.fill(&mut challenge[..]);
                    RsiCall::AttestationToken { challenge }
                }
            };
            let rsi_caller = if rng.gen_bool(0.8) { World::Realm } else { caller };
            return Cmd::Rsi(rsi_caller, realm, call);
        }
        1 | 2 => RmiCommand::GranuleDelegate { granule },
        3 => RmiCommand::GranuleUndelegate { granule },
        4 => RmiCommand::RealmCreate(RealmParams {
            personalization: [rng.gen(); 64],
            entry_point: EntryPoint::default(),
            shared: None,
        }),
        5 | 6 => RmiCommand::DataCreate {
            realm,
            granule,
            content: vec![rng.gen(); if rng.gen_bool(0.95) { GRANULE_SIZE } else { 17 }],
            target_addr: rng.gen_range(0..4) * GRANULE_SIZE as u64 + if rng.gen_bool(0.95) { 0 } else { 1 },
        },
        7 => RmiCommand::RealmActivate { realm },
        8 => RmiCommand::RecEnter { realm },
        _ => RmiCommand::RealmDestroy { realm },
    };
    Cmd::Rmi(caller, rmi)
}

fn rank(s: RealmState) -> u8 {
    match s {
        RealmState::New => 0,
        RealmState::Active => 1,
        RealmState::Destroyed => 2,
    }
}

/// Run one random sequence; returns (commands, rejected, first violation).
fn fuzz_one(seed: u64, index: usize, max_len: usize) -> (usize, usize, Option<String>) {
    let mut rng = derive_indexed(seed, "lifecycle-fuzz", index as u64);
    let mut m = Machine::new(MachineConfig {
        layout: FUZZ_LAYOUT,
        ..MachineConfig::default()
    });
    let total = m.granules().len();
    let len = rng.gen_range(1..=max_len);
    let mut rejected = 0;
    let mut seen: Vec<(RealmId, RealmState, Digest)> = Vec::new();
    for step in 0..len {
        let ok = match random_command(&mut rng) {
            Cmd::Rmi(w, c) => m.rmi(w, c).is_ok(),
            Cmd::Rsi(w, r, c) => m.rsi(w, r, c).is_ok(),
        };
        rejected += usize::from(!ok);
        for d in m.realms() {
            if let Some(prev) = seen.iter_mut().find(|p| p.0 == d.realm_id) {
                if rank(d.state) < rank(prev.1) {
                    return (
                        step + 1,
                        rejected,
                        Some(format!("{}: {:?} -> {:?}", d.realm_id, prev.1, d.state)),
                    );
                }
                if prev.1 != RealmState::New && d.rim != prev.2 {
                    return (
                        step + 1,
                        rejected,
                        Some(format!("{}: rim changed after activation", d.realm_id)),
                    );
                }
                *prev = (d.realm_id, d.state, d.rim);
            } else {
                seen.push((d.realm_id, d.state, d.rim));
            }
            if d.state == RealmState::Destroyed && !d.granules.is_empty() {
                return (
                    step + 1,
                    rejected,
                    Some(format!("{} destroyed but holds granules", d.realm_id)),
                );
            }
        }
        let owned_ok = m.granules().iter().all(|g| match g.state {
            GranuleState::RealmOwned(r) => m
                .realm(r)
                .is_some_and(|d| d.state != RealmState::Destroyed && d.granules.contains(&g.index)),
            _ => true,
        });
        if !owned_ok || m.granules().len() != total {
            return (step + 1, rejected, Some("granule ownership out of sync".into()));
        }
    }
    (len, rejected, None)
}

/// Replay `sequences` random RMI/RSI command sequences of up to `max_len`
/// commands each and check the lifecycle invariants after every command.
pub fn lifecycle_fuzz(seed: u64, sequences: usize, max_len: usize, mode: Mode) -> FuzzSummary {
    let results = run_indexed(mode, sequences, |i| fuzz_one(seed, i, max_len));
    let mut s = FuzzSummary {
        sequences,
        ..FuzzSummary::default()
    };
    for (commands, rejected, violation) in results {
        s.commands += commands;
        s.rejected += rejected;
        s.violations.extend(violation);
    }
    s
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TamperSummary {
    pub mutations: usize,
    pub rejected: usize,
    /// `(offset, replacement)` of mutations that were accepted.
    pub accepted: Vec<(usize, u8)>,
}

/// Replace every byte of `report` with each of its 255 alternatives and
/// appraise the result.
pub fn tamper_sweep(report: &[u8], challenge: &Challenge, refs: &ReferenceValues, mode: Mode) -> TamperSummary {
    let appraiser = Appraiser::new(refs);
    let per_offset = run_indexed(mode, report.len(), |i| {
        let mut buf = report.to_vec();
        let mut accepted = Vec::new();
        for delta in 1..=255u8 {
            buf[i] = report[i] ^ delta;
            if appraiser.verify_bytes(&buf, challenge) == Verdict::Accept {
                accepted.push((i, buf[i]));
            }
        }
        accepted
    });
    let accepted: Vec<(usize, u8)> = per_offset.into_iter().flatten().collect();
    let mutations = report.len() * 255;
    TamperSummary {
        mutations,
        rejected: mutations - accepted.len(),
        accepted,
    }
}
