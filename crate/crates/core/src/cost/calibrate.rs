// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Fit a [`CostProfile`] to target measurements.
//!
//! Every measured quantity is linear in the profile entries, so the fit
//! first runs the harness once per basis profile to read off the
//! coefficients and then solves the resulting square system. World-switch
//! and VM-entry costs share one unknown; memory accesses are not priced.
//!
//! Equations, with `N` the normal-VM and `R` the realm-VM figures:
//!
//! ```text
//! N_inf                     = normal_inference
//! R_inf  - k_inf  * N_inf   = 0
//! N_boot(small)             = normal_boot
//! R_boot(small) - k_b1 * N_boot(small) = 0
//! R_boot(large) - k_b2 * N_boot(large) = 0
//! N_term                    = normal_termination
//! R_term - k_term * N_term  = 0
//! ```

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentConfig, ImageScale, RunMeasurement};
use super::{CostError, CostProfile, EventKind};

/// Reference figures the fitted profile must reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    pub normal_inference: f64,
    pub inference_ratio: f64,
    pub normal_boot: f64,
    pub small_image: ImageScale,
    pub boot_ratio_small: f64,
    pub large_image: ImageScale,
    pub boot_ratio_large: f64,
    pub normal_termination: f64,
    pub termination_ratio: f64,
    /// Not identifiable from net figures; copied into the profile.
    pub idle_cost_per_tick: u64,
}

impl Default for CalibrationTargets {
    /// The published 98MB and 139MB reference points, in instructions.
    fn default() -> Self {
        Self {
            normal_inference: 222.2e6,
            inference_ratio: 1.62,
            normal_boot: 709.8e6,
            small_image: ImageScale::MB98,
            boot_ratio_small: 26.62,
            large_image: ImageScale::MB139,
            boot_ratio_large: 37.50,
            normal_termination: 105.1e6,
            termination_ratio: 9.23,
            idle_cost_per_tick: 1_000_000,
        }
    }
}

/// Unknowns of the fit, in column order.
const UNKNOWNS: [&[EventKind]; 7] = [
    &[EventKind::WorldSwitch, EventKind::VmEnter],
    &[EventKind::InferenceCompute],
    &[EventKind::Populate],
    &[EventKind::BootBaseRealm],
    &[EventKind::BootBaseNormal],
    &[EventKind::TerminationBaseRealm],
    &[EventKind::TerminationBaseNormal],
];

/// Coefficients of one basis profile on each measured quantity.
struct Basis {
    small_normal: RunMeasurement,
    small_realm: RunMeasurement,
    large_normal: RunMeasurement,
    large_realm: RunMeasurement,
}

fn basis(column: usize, targets: &CalibrationTargets) -> Result<Basis, CostError> {
    let mut profile = CostProfile::zero();
    for &k in UNKNOWNS[column] {
        profile.set(k, 1);
    }
    let run = |scale| -> Result<_, CostError> {
        let cfg = ExperimentConfig {
            runs: 1,
            ..ExperimentConfig::new(profile.clone(), scale)
        };
        let r = run_experiment(&cfg).map_err(|e| CostError::Calibration(e.to_string()))?;
        Ok((r.normal_vm.runs[0], r.realm_vm.runs[0]))
    };
    let (small_normal, small_realm) = run(targets.small_image)?;
    let (large_normal, large_realm) = run(targets.large_image)?;
    Ok(Basis {
        small_normal,
        small_realm,
        large_normal,
        large_realm,
    })
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, CostError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(CostError::Calibration(format!("singular system at column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, y) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * y;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Fit a profile whose experiment figures hit `targets`.
pub fn calibrate(targets: &CalibrationTargets) -> Result<CostProfile, CostError> {
    let cols: Vec<Basis> = (0..UNKNOWNS.len())
        .map(|c| basis(c, targets))
        .collect::<Result<_, _>>()?;
    let row = |f: &dyn Fn(&Basis) -> f64| cols.iter().map(f).collect::<Vec<f64>>();
    let a = vec![
        row(&|c| c.small_normal.per_inference),
        row(&|c| c.small_realm.per_inference - targets.inference_ratio * c.small_normal.per_inference),
        row(&|c| c.small_normal.boot),
        row(&|c| c.small_realm.boot - targets.boot_ratio_small * c.small_normal.boot),
        row(&|c| c.large_realm.boot - targets.boot_ratio_large * c.large_normal.boot),
        row(&|c| c.small_normal.termination),
        row(&|c| c.small_realm.termination - targets.termination_ratio * c.small_normal.termination),
    ];
    let b = vec![
        targets.normal_inference,
        0.0,
        targets.normal_boot,
        0.0,
        0.0,
        targets.normal_termination,
        0.0,
    ];
    let x = solve(a, b)?;
    let mut profile = CostProfile::zero();
    for (kinds, value) in UNKNOWNS.iter().zip(&x) {
        if !value.is_finite() || *value < 0.0 {
            return Err(CostError::Calibration(format!(
                "fitted cost for {} is {value:.1}; targets are inconsistent with the model",
                kinds[0]
            )));
        }
        for &k in *kinds {
            profile.set(k, value.round() as u64);
        }
    }
    profile.idle_cost_per_tick = targets.idle_cost_per_tick;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_system() {
        let x = solve(vec![vec![0.0, 2.0], vec![1.0, 1.0]], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn inconsistent_targets_are_rejected() {
        let t = CalibrationTargets {
            inference_ratio: 0.5,
            ..CalibrationTargets::default()
        };
        assert!(matches!(calibrate(&t), Err(CostError::Calibration(_))));
    }
}
