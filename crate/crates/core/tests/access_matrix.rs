// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

use realmsim::attestation::EntryPoint;
use realmsim::granule::{access_allowed, Access, AccessKind, GranuleError, GranuleSpace, Layout};
use realmsim::rmm::{Machine, MachineConfig, RealmParams};
use realmsim::{CostLedger, CostProfile, GranuleState, World, GRANULE_SIZE};

const WORLDS: [World; 4] = [World::Normal, World::Realm, World::Secure, World::Root];
const KINDS: [AccessKind; 2] = [AccessKind::Read, AccessKind::Write];

/// Expected outcome, one row per actor world in `WORLDS` order, one column
/// per state: NormalWorld, DelegatedRealm, RealmOwned, Root, Secure. Reads
/// and writes behave alike.
const TABLE: [[bool; 5]; 4] = [
    [true, false, false, false, false],
    [true, true, true, false, false],
    [true, false, false, false, true],
    [true, true, true, true, true],
];

/// Machine with one granule in each state: 0 Root, 1 Secure, 2 NormalWorld,
/// 3 DelegatedRealm, 4 RealmOwned.
fn machine() -> Machine {
    let mut m = Machine::new(MachineConfig {
        layout: Layout {
            root: 1,
            secure: 1,
            normal: 3,
        },
        ..MachineConfig::default()
    });
    let realm = m
        .realm_create(RealmParams {
            personalization: [0; 64],
            entry_point: EntryPoint::default(),
            shared: None,
        })
        .unwrap();
    m.delegate(3).unwrap();
    m.delegate(4).unwrap();
    m.data_create(realm, 4, &[1; GRANULE_SIZE], 0).unwrap();
    m
}

#[test]
fn exhaustive_forty_cases() {
    let m = machine();
    let ids = [2, 3, 4, 0, 1];
    let mut cases = 0;
    for (w, row) in WORLDS.iter().zip(TABLE) {
        for (&id, want) in ids.iter().zip(row) {
            let state = m.granules().state(id).unwrap();
            for kind in KINDS {
                let got = m.granules().check_access(*w, id, kind).unwrap();
                let expect = if want { Access::Allow } else { Access::Deny };
                assert_eq!(got, expect, "{w:?} {kind:?} on {state:?}");
                assert_eq!(access_allowed(*w, state, kind), expect);
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 40);
}

#[test]
fn memory_operations_follow_the_matrix() {
    let mut space = GranuleSpace::new(Layout {
        root: 1,
        secure: 1,
        normal: 2,
    });
    space.delegate(3).unwrap();
    let mut ledger = CostLedger::new(CostProfile::zero());
    let ids = [(2, 0), (3, 1), (0, 3), (1, 4)];
    for (w, row) in WORLDS.iter().zip(TABLE) {
        for (id, col) in ids {
            let read = space.read(&mut ledger, *w, id, 0, 8);
            let write = space.write(&mut ledger, *w, id, 0, &[9; 8]);
            if row[col] {
                assert!(read.is_ok() && write.is_ok(), "{w:?} on granule {id}");
            } else {
                assert!(matches!(read, Err(GranuleError::AccessViolation { .. })));
                assert!(matches!(write, Err(GranuleError::AccessViolation { .. })));
            }
        }
    }
    assert_eq!(space.state(3).unwrap(), GranuleState::DelegatedRealm);
}
