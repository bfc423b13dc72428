// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Scenario scripts: a JSON array of `{"op": ..., "args": {...}}` commands
//! replayed against a fresh [`Machine`].
//!
//! ```json
//! [ {"op": "realm_create", "args": {"personalization": "00..", "entry_point": {"granule": 0, "offset": 0}}},
//!   {"op": "granule_delegate", "args": {"granule": 2}},
//!   {"op": "data_create", "args": {"realm": 1, "granule": 2, "fill": 7, "target_addr": 0}},
//!   {"op": "realm_activate", "args": {"realm": 1}},
//!   {"op": "attestation_token", "args": {"realm": 1, "challenge": "00.."}} ]
//! ```
//!
//! Every command may name a `caller` world; RMI commands default to the
//! normal world and RSI calls to the realm world. Page contents are given
//! either as a hex string or as a single fill byte.

use serde::{Deserialize, Serialize};

use crate::attestation::EntryPoint;
use crate::granule::{GranuleId, World};
use crate::rmm::{Machine, RealmId, RealmParams, RmiCommand, RmiOutcome, RsiCall, RsiOutcome};
use crate::{Digest, GRANULE_SIZE};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptOp {
    GranuleDelegate {
        granule: GranuleId,
        #[serde(default)]
        caller: Option<World>,
    },
    GranuleUndelegate {
        granule: GranuleId,
        #[serde(default)]
        caller: Option<World>,
    },
    RealmCreate {
        #[serde(with = "crate::hexfmt::array")]
        personalization: [u8; 64],
        #[serde(default)]
        entry_point: EntryPoint,
        #[serde(default)]
        caller: Option<World>,
    },
    DataCreate {
        realm: RealmId,
        granule: GranuleId,
        #[serde(default)]
        content: Option<String>,
        #[serde(default)]
        fill: Option<u8>,
        target_addr: u64,
        #[serde(default)]
        caller: Option<World>,
    },
    RealmActivate {
        realm: RealmId,
        #[serde(default)]
        caller: Option<World>,
    },
    RecEnter {
        realm: RealmId,
        #[serde(default)]
        caller: Option<World>,
    },
    RealmDestroy {
        realm: RealmId,
        #[serde(default)]
        caller: Option<World>,
    },
    AttestationToken {
        realm: RealmId,
        #[serde(with = "crate::hexfmt::array")]
        challenge: [u8; 64],
        #[serde(default)]
        caller: Option<World>,
    },
    MeasurementExtend {
        realm: RealmId,
        index: usize,
        #[serde(with = "crate::hexfmt::array")]
        digest: Digest,
        #[serde(default)]
        caller: Option<World>,
    },
}

/// Outcome of one command, one JSON line each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub index: usize,
    pub op: String,
    pub tick: u64,
    pub ok: bool,
    pub detail: String,
}

fn page(content: &Option<String>, fill: Option<u8>) -> Result<Vec<u8>, String> {
    match (content, fill) {
        (Some(hexstr), None) => hex::decode(hexstr).map_err(|e| e.to_string()),
        (None, Some(b)) => Ok(vec![b; GRANULE_SIZE]),
        (None, None) => Ok(vec![0; GRANULE_SIZE]),
        (Some(_), Some(_)) => Err("give either content or fill, not both".into()),
    }
}

fn rmi_detail(outcome: RmiOutcome) -> String {
    match outcome {
        RmiOutcome::Done => "done".into(),
        RmiOutcome::Granule(s) => format!("{s:?}"),
        RmiOutcome::Realm(r) => r.to_string(),
        RmiOutcome::Exit(e) => format!("{e:?}"),
    }
}

impl ScriptOp {
    pub fn name(&self) -> &'static str {
        match self {
            ScriptOp::GranuleDelegate { .. } => "granule_delegate",
            ScriptOp::GranuleUndelegate { .. } => "granule_undelegate",
            ScriptOp::RealmCreate { .. } => "realm_create",
            ScriptOp::DataCreate { .. } => "data_create",
            ScriptOp::RealmActivate { .. } => "realm_activate",
            ScriptOp::RecEnter { .. } => "rec_enter",
            ScriptOp::RealmDestroy { .. } => "realm_destroy",
            ScriptOp::AttestationToken { .. } => "attestation_token",
            ScriptOp::MeasurementExtend { .. } => "measurement_extend",
        }
    }

    /// Execute against `m`; `Ok` carries a short description of the result.
    pub fn apply(&self, m: &mut Machine) -> Result<String, String> {
        let rmi = |m: &mut Machine, caller: &Option<World>, cmd| {
            m.rmi(caller.unwrap_or(World::Normal), cmd)
                .map(rmi_detail)
                .map_err(|e| e.to_string())
        };
        let rsi = |m: &mut Machine, caller: &Option<World>, realm, call| {
            m.rsi(caller.unwrap_or(World::Realm), realm, call)
                .map(|o| match o {
                    RsiOutcome::Done => "done".into(),
                    RsiOutcome::Report(r) => hex::encode(r.encode()),
                })
                .map_err(|e| e.to_string())
        };
        match self {
            ScriptOp::GranuleDelegate { granule, caller } => {
                rmi(m, caller, RmiCommand::GranuleDelegate { granule: *granule })
            }
            ScriptOp::GranuleUndelegate { granule, caller } => {
                rmi(m, caller, RmiCommand::GranuleUndelegate { granule: *granule })
            }
            ScriptOp::RealmCreate {
                personalization,
                entry_point,
                caller,
            } => rmi(
                m,
                caller,
                RmiCommand::RealmCreate(RealmParams {
                    personalization: *personalization,
                    entry_point: *entry_point,
                    shared: None,
                }),
            ),
            ScriptOp::DataCreate {
                realm,
                granule,
                content,
                fill,
                target_addr,
                caller,
            } => {
                let content = page(content, *fill)?;
                rmi(
                    m,
                    caller,
                    RmiCommand::DataCreate {
                        realm: *realm,
                        granule: *granule,
                        content,
                        target_addr: *target_addr,
                    },
                )
            }
            ScriptOp::RealmActivate { realm, caller } => rmi(m, caller, RmiCommand::RealmActivate { realm: *realm }),
            ScriptOp::RecEnter { realm, caller } => rmi(m, caller, RmiCommand::RecEnter { realm: *realm }),
            ScriptOp::RealmDestroy { realm, caller } => rmi(m, caller, RmiCommand::RealmDestroy { realm: *realm }),
            ScriptOp::AttestationToken {
                realm,
                challenge,
                caller,
            } => rsi(m, caller, *realm, RsiCall::AttestationToken { challenge: *challenge }),
            ScriptOp::MeasurementExtend {
                realm,
                index,
                digest,
                caller,
            } => rsi(
                m,
                caller,
                *realm,
                RsiCall::MeasurementExtend {
                    index: *index,
                    digest: *digest,
                },
            ),
        }
    }
}

/// Parse a script document.
pub fn parse(text: &str) -> Result<Vec<ScriptOp>, serde_json::Error> {
    serde_json::from_str(text)
}

/// Replay `ops` in order, recording every outcome. Failing commands are
/// recorded and the replay continues.
pub fn replay(m: &mut Machine, ops: &[ScriptOp]) -> Vec<StepResult> {
    ops.iter()
        .enumerate()
        .map(|(index, op)| {
            let r = op.apply(m);
            StepResult {
                index,
                op: op.name().into(),
                tick: m.clock(),
                ok: r.is_ok(),
                detail: r.unwrap_or_else(|e| e),
            }
        })
        .collect()
}
