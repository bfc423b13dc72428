// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Instruction cost accounting.
//!
//! Simulator components charge events to a [`CostLedger`]. The
//! [`CostProfile`] prices each event kind in modeled instructions. The
//! experiment harness compares a realm VM against a normal-world VM using
//! idle-baseline subtraction. [`calibrate`] fits a profile to target
//! overhead ratios.

mod calibrate;
mod experiment;
mod ledger;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate, solve, CalibrationTargets};
pub use experiment::{
    phase_net, run_experiment, run_scenario, ExperimentConfig, ExperimentError, ExperimentReport, ImageScale, Jitter,
    Ratios, RunMeasurement, Scenario, ScenarioReport, Stat,
};
pub use ledger::{CostLedger, EventKind, LedgerEntry, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("cost configuration error: {0}")]
    Config(String),
    #[error("measurement error: idle baseline {idle} exceeds observed total {total}")]
    Measurement { total: u64, idle: u64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Modeled instruction cost of each event kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    pub world_switch_cost: u64,
    pub vm_enter_cost: u64,
    pub inference_compute_cost: u64,
    pub populate_cost_per_byte: u64,
    pub boot_base_realm: u64,
    pub boot_base_normal: u64,
    pub termination_base_realm: u64,
    pub termination_base_normal: u64,
    pub idle_cost_per_tick: u64,
    #[serde(default)]
    pub memory_access_cost: u64,
}

impl CostProfile {
    pub fn zero() -> Self {
        Self {
            world_switch_cost: 0,
            vm_enter_cost: 0,
            inference_compute_cost: 0,
            populate_cost_per_byte: 0,
            boot_base_realm: 0,
            boot_base_normal: 0,
            termination_base_realm: 0,
            termination_base_normal: 0,
            idle_cost_per_tick: 0,
            memory_access_cost: 0,
        }
    }

    /// Profile with every entry set to one. Ledger totals under this profile
    /// are plain event and unit counts.
    pub fn unit() -> Self {
        let mut p = Self::zero();
        for k in EventKind::ALL {
            p.set(k, 1);
        }
        p
    }

    /// The committed calibration fixture (`fixtures/calibrated.json`).
    pub fn calibrated() -> Self {
        serde_json::from_str(include_str!("../../../../fixtures/calibrated.json"))
            .expect("committed calibration profile is valid")
    }

    pub fn cost_of(&self, kind: EventKind) -> u64 {
        match kind {
            EventKind::WorldSwitch => self.world_switch_cost,
            EventKind::VmEnter => self.vm_enter_cost,
            EventKind::InferenceCompute => self.inference_compute_cost,
            EventKind::Populate => self.populate_cost_per_byte,
            EventKind::BootBaseRealm => self.boot_base_realm,
            EventKind::BootBaseNormal => self.boot_base_normal,
            EventKind::TerminationBaseRealm => self.termination_base_realm,
            EventKind::TerminationBaseNormal => self.termination_base_normal,
            EventKind::Idle => self.idle_cost_per_tick,
            EventKind::MemoryAccess => self.memory_access_cost,
        }
    }

    pub fn set(&mut self, kind: EventKind, value: u64) {
        let slot = match kind {
            EventKind::WorldSwitch => &mut self.world_switch_cost,
            EventKind::VmEnter => &mut self.vm_enter_cost,
            EventKind::InferenceCompute => &mut self.inference_compute_cost,
            EventKind::Populate => &mut self.populate_cost_per_byte,
            EventKind::BootBaseRealm => &mut self.boot_base_realm,
            EventKind::BootBaseNormal => &mut self.boot_base_normal,
            EventKind::TerminationBaseRealm => &mut self.termination_base_realm,
            EventKind::TerminationBaseNormal => &mut self.termination_base_normal,
            EventKind::Idle => &mut self.idle_cost_per_tick,
            EventKind::MemoryAccess => &mut self.memory_access_cost,
        };
        *slot = value;
    }

    pub fn with(mut self, kind: EventKind, value: u64) -> Self {
        self.set(kind, value);
        self
    }
}

/// Remove the idle baseline from an observed instruction total.
pub fn baseline_subtract(total: u64, idle: u64) -> Result<u64, CostError> {
    total.checked_sub(idle).ok_or(CostError::Measurement { total, idle })
}

/// Instructions an otherwise idle platform executes over `ticks` ticks.
///
/// This is the "workload not running" measurement: a fresh ledger charged
/// with nothing but elapsed time.
pub fn measure_idle(profile: &CostProfile, ticks: u64) -> u64 {
    let mut idle = CostLedger::new(profile.clone());
    for t in 0..ticks {
        idle.set_tick(t);
        idle.charge_units(EventKind::Idle, crate::granule::World::Root, 1);
    }
    idle.total()
}
