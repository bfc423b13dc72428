// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CostError, CostProfile};
use crate::granule::World;

/// Every event the simulator can charge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    WorldSwitch,
    VmEnter,
    InferenceCompute,
    /// Per byte.
    Populate,
    BootBaseRealm,
    BootBaseNormal,
    TerminationBaseRealm,
    TerminationBaseNormal,
    /// Per tick.
    Idle,
    MemoryAccess,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::WorldSwitch,
        EventKind::VmEnter,
        EventKind::InferenceCompute,
        EventKind::Populate,
        EventKind::BootBaseRealm,
        EventKind::BootBaseNormal,
        EventKind::TerminationBaseRealm,
        EventKind::TerminationBaseNormal,
        EventKind::Idle,
        EventKind::MemoryAccess,
    ];

    /// Whether the profile entry is a per-unit rate.
    pub fn is_sized(self) -> bool {
        matches!(self, EventKind::Populate | EventKind::Idle)
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::WorldSwitch => "world_switch",
            EventKind::VmEnter => "vm_enter",
            EventKind::InferenceCompute => "inference_compute",
            EventKind::Populate => "populate",
            EventKind::BootBaseRealm => "boot_base_realm",
            EventKind::BootBaseNormal => "boot_base_normal",
            EventKind::TerminationBaseRealm => "termination_base_realm",
            EventKind::TerminationBaseNormal => "termination_base_normal",
            EventKind::Idle => "idle",
            EventKind::MemoryAccess => "memory_access",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CostError::Config(format!("unknown event type `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Boot,
    Provisioning,
    Inference,
    Termination,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Boot, Phase::Provisioning, Phase::Inference, Phase::Termination];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub kind: EventKind,
    pub actor: World,
    pub tick: u64,
    pub phase: Phase,
    pub units: u64,
    pub instructions: u64,
}

/// Append-only record of charged events with per-phase running totals.
#[derive(Clone, Debug)]
pub struct CostLedger {
    profile: CostProfile,
    events: Vec<LedgerEntry>,
    totals: [u64; 4],
    tick: u64,
    phase: Phase,
}

impl CostLedger {
    pub fn new(profile: CostProfile) -> Self {
        Self {
            profile,
            events: Vec::new(),
            totals: [0; 4],
            tick: 0,
            phase: Phase::Boot,
        }
    }

    pub fn profile(&self) -> &CostProfile {
        &self.profile
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Charge one event. Per-unit kinds need `size`, the others must not
    /// carry one.
    pub fn record_event(&mut self, kind: EventKind, actor: World, size: Option<u64>) -> Result<u64, CostError> {
        let units = match (kind.is_sized(), size) {
            (true, Some(n)) => n,
            (false, None) => 1,
            (true, None) => {
                return Err(CostError::Config(format!("event `{kind}` needs a size")));
            }
            (false, Some(_)) => {
                return Err(CostError::Config(format!("event `{kind}` takes no size")));
            }
        };
        Ok(self.push(kind, actor, units))
    }

    /// Charge a fixed-cost event.
    pub(crate) fn charge(&mut self, kind: EventKind, actor: World) -> u64 {
        self.push(kind, actor, 1)
    }

    /// Charge a per-unit event.
    pub(crate) fn charge_units(&mut self, kind: EventKind, actor: World, units: u64) -> u64 {
        self.push(kind, actor, units)
    }

    fn push(&mut self, kind: EventKind, actor: World, units: u64) -> u64 {
        let instructions = self.profile.cost_of(kind).saturating_mul(units);
        self.events.push(LedgerEntry {
            kind,
            actor,
            tick: self.tick,
            phase: self.phase,
            units,
            instructions,
        });
        self.totals[self.phase.slot()] = self.totals[self.phase.slot()].saturating_add(instructions);
        instructions
    }

    pub fn events(&self) -> &[LedgerEntry] {
        &self.events
    }

    pub fn phase_total(&self, phase: Phase) -> u64 {
        self.totals[phase.slot()]
    }

    pub fn total(&self) -> u64 {
        self.totals.iter().sum()
    }

    /// Idle instructions charged within `phase`.
    pub fn idle_in(&self, phase: Phase) -> u64 {
        self.sum_where(|e| e.phase == phase && e.kind == EventKind::Idle)
    }

    /// Number of ticks that elapsed within `phase`.
    pub fn ticks_in(&self, phase: Phase) -> u64 {
        self.events
            .iter()
            .filter(|e| e.phase == phase && e.kind == EventKind::Idle)
            .map(|e| e.units)
            .sum()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn count_in(&self, kind: EventKind, phase: Phase) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.phase == phase)
            .count()
    }

    pub fn sum_where(&self, pred: impl Fn(&LedgerEntry) -> bool) -> u64 {
        self.events.iter().filter(|e| pred(e)).map(|e| e.instructions).sum()
    }
}
