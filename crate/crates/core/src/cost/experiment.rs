// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Realm VM versus normal-world VM comparison.
//!
//! Each run executes the whole batch once, then every phase is measured as
//! its observed total minus the idle baseline for the ticks it spanned. The
//! per-inference figure is the inference-phase net divided by the number of
//! outputs served.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{baseline_subtract, measure_idle, CostError, CostLedger, CostProfile, Phase};
use crate::orchestrator::{
    fixture_inputs, run_normal_vm, run_pipeline, Endpoint, ImageSpec, PipelineConfig, PipelineError, RealmImage,
};
use crate::runtime::Policy;
use crate::seed::derive_indexed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExperimentError {
    #[error("pipeline aborted at step {step}: {error}")]
    Pipeline { step: u8, error: PipelineError },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("batch served {served} of {expected} inputs")]
    Incomplete { served: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NormalVm,
    RealmVm,
}

/// Nominal image size. Named presets match the two reference images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageScale(pub u64);

impl ImageScale {
    pub const MB98: ImageScale = ImageScale(98_000_000);
    pub const MB139: ImageScale = ImageScale(139_000_000);

    pub fn bytes(self) -> u64 {
        self.0
    }

    /// Parse `98mb`, `139MB` or a plain byte count.
    pub fn parse(s: &str) -> Option<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.strip_suffix("mb") {
            Some(mb) => mb.trim().parse::<u64>().ok()?.checked_mul(1_000_000).map(ImageScale),
            None => lower.parse().ok().map(ImageScale),
        }
    }
}

/// Per-run standard deviations, in instructions, added as seeded Gaussian
/// noise to each measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub normal_inference: f64,
    pub realm_inference: f64,
    pub normal_boot: f64,
    pub realm_boot: f64,
    pub normal_termination: f64,
    pub realm_termination: f64,
}

impl Jitter {
    /// Deviations reported for the reference hardware runs.
    pub fn reference() -> Self {
        Self {
            realm_inference: 46.5e6,
            normal_inference: 4.4e6,
            realm_boot: 1_655.3e6,
            normal_boot: 6.7e6,
            realm_termination: 98.9e6,
            normal_termination: 0.2e6,
        }
    }

    fn for_scenario(&self, s: Scenario) -> [f64; 3] {
        match s {
            Scenario::NormalVm => [self.normal_boot, self.normal_inference, self.normal_termination],
            Scenario::RealmVm => [self.realm_boot, self.realm_inference, self.realm_termination],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: CostProfile,
    pub image: ImageScale,
    pub inferences: usize,
    pub runs: usize,
    pub seed: u64,
    #[serde(default)]
    pub jitter: Option<Jitter>,
    /// Transport only; not part of the serialized report.
    #[serde(skip)]
    pub endpoint: Endpoint,
}

impl ExperimentConfig {
    /// 40 inferences over 5 runs, no jitter.
    pub fn new(profile: CostProfile, image: ImageScale) -> Self {
        Self {
            profile,
            image,
            inferences: 40,
            runs: 5,
            seed: 0,
            jitter: None,
            endpoint: Endpoint::InProcess,
        }
    }
}

/// Net modeled instructions of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeasurement {
    pub boot: f64,
    pub per_inference: f64,
    pub termination: f64,
    pub outputs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std_dev: f64,
}

impl Stat {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count();
        if n == 0 {
            return Self {
                mean: 0.0,
                std_dev: 0.0,
            };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_dev: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub runs: Vec<RunMeasurement>,
    pub per_inference: Stat,
    pub boot: Stat,
    pub termination: Stat,
}

/// Realm over normal. `None` when the normal-world figure is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub per_inference: Option<f64>,
    pub boot: Option<f64>,
    pub termination: Option<f64>,
}

fn ratio(realm: f64, normal: f64) -> Option<f64> {
    (normal != 0.0).then(|| realm / normal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub normal_vm: ScenarioReport,
    pub realm_vm: ScenarioReport,
    pub ratios: Ratios,
    /// The profile is a fit to published endpoint figures; ratios reproduce
    /// calibration targets rather than predict them.
    pub calibrated: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// One row per measured quantity, in millions of instructions.
    pub fn to_csv(&self) -> String {
        let m = |x: f64| format!("{:.1}", x / 1e6);
        let r = |x: Option<f64>| x.map_or_else(|| "undefined".into(), |v| format!("{v:.2}"));
        let rows = [
            (
                "inference",
                &self.normal_vm.per_inference,
                &self.realm_vm.per_inference,
                self.ratios.per_inference,
            ),
            ("boot", &self.normal_vm.boot, &self.realm_vm.boot, self.ratios.boot),
            (
                "termination",
                &self.normal_vm.termination,
                &self.realm_vm.termination,
                self.ratios.termination,
            ),
        ];
        let mut out = String::from("phase,normal_vm_mean_m,normal_vm_std_m,realm_vm_mean_m,realm_vm_std_m,ratio\n");
        for (name, n, rv, ratio) in rows {
            out.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                m(n.mean),
                m(n.std_dev),
                m(rv.mean),
                m(rv.std_dev),
                r(ratio)
            ));
        }
        out
    }
}

/// Net instructions of `phase`: its total less the idle baseline.
pub fn phase_net(ledger: &CostLedger, phase: Phase) -> Result<u64, CostError> {
    baseline_subtract(
        ledger.phase_total(phase),
        measure_idle(ledger.profile(), ledger.ticks_in(phase)),
    )
}

fn pipeline_config(cfg: &ExperimentConfig, image: &[u8], run: usize) -> PipelineConfig {
    let seed = cfg.seed.wrapping_add(run as u64);
    let mut p = PipelineConfig::new(
        image.to_vec(),
        fixture_inputs(seed, cfg.inferences, 4),
        Policy::UNLIMITED,
    );
    p.profile = cfg.profile.clone();
    p.seed = seed;
    p.endpoint = cfg.endpoint;
    p
}

fn measure(
    scenario: Scenario,
    cfg: &ExperimentConfig,
    image: &[u8],
    run: usize,
) -> Result<RunMeasurement, ExperimentError> {
    let p = pipeline_config(cfg, image, run);
    let (ledger, outputs) = match scenario {
        Scenario::RealmVm => {
            let r = run_pipeline(&p);
            if let Some(a) = r.abort {
                return Err(ExperimentError::Pipeline {
                    step: a.step,
                    error: a.error,
                });
            }
            (r.machine.into_ledger(), r.outputs.len())
        }
        Scenario::NormalVm => {
            let r = run_normal_vm(&p).map_err(|error| ExperimentError::Pipeline { step: 0, error })?;
            (r.machine.into_ledger(), r.outputs.len())
        }
    };
    if outputs != cfg.inferences {
        return Err(ExperimentError::Incomplete {
            served: outputs,
            expected: cfg.inferences,
        });
    }
    let inference = phase_net(&ledger, Phase::Inference)? as f64;
    let mut m = RunMeasurement {
        boot: phase_net(&ledger, Phase::Boot)? as f64,
        per_inference: if outputs == 0 { 0.0 } else { inference / outputs as f64 },
        termination: phase_net(&ledger, Phase::Termination)? as f64,
        outputs,
    };
    if let Some(j) = cfg.jitter {
        let mut rng = derive_indexed(cfg.seed, &format!("jitter-{scenario:?}"), run as u64);
        let [b, i, t] = j.for_scenario(scenario);
        for (value, sd) in [(&mut m.boot, b), (&mut m.per_inference, i), (&mut m.termination, t)] {
            if sd > 0.0 {
                let noise = Normal::new(0.0, sd).expect("finite deviation").sample(&mut rng);
                *value = (*value + noise).max(0.0);
            }
        }
    }
    Ok(m)
}

fn fixture_image(scale: ImageScale) -> Vec<u8> {
    RealmImage::build(&ImageSpec::fixture(scale.bytes()), &crate::keys::verifier_signing_key()).encode()
}

/// Run one scenario `cfg.runs` times.
pub fn run_scenario(scenario: Scenario, cfg: &ExperimentConfig) -> Result<ScenarioReport, ExperimentError> {
    let image = fixture_image(cfg.image);
    let runs = crate::parallel::map_indexed(cfg.runs, |i| measure(scenario, cfg, &image, i))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioReport {
        scenario,
        per_inference: Stat::of(runs.iter().map(|r| r.per_inference)),
        boot: Stat::of(runs.iter().map(|r| r.boot)),
        termination: Stat::of(runs.iter().map(|r| r.termination)),
        runs,
    })
}

/// Run both scenarios and compare them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let normal_vm = run_scenario(Scenario::NormalVm, cfg)?;
    let realm_vm = run_scenario(Scenario::RealmVm, cfg)?;
    let ratios = Ratios {
        per_inference: ratio(realm_vm.per_inference.mean, normal_vm.per_inference.mean),
        boot: ratio(realm_vm.boot.mean, normal_vm.boot.mean),
        termination: ratio(realm_vm.termination.mean, normal_vm.termination.mean),
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        normal_vm,
        realm_vm,
        ratios,
        calibrated: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::EventKind;

    fn quick(profile: CostProfile) -> ExperimentConfig {
        ExperimentConfig {
            inferences: 4,
            runs: 2,
            ..ExperimentConfig::new(profile, ImageScale::MB98)
        }
    }

    #[test]
    fn scale_parsing() {
        assert_eq!(ImageScale::parse("98mb"), Some(ImageScale::MB98));
        assert_eq!(ImageScale::parse("139MB"), Some(ImageScale::MB139));
        assert_eq!(ImageScale::parse("4096"), Some(ImageScale(4096)));
        assert_eq!(ImageScale::parse("big"), None);
    }

    #[test]
    fn zero_profile_gives_zero_totals_and_no_ratios() {
        let r = run_experiment(&quick(CostProfile::zero())).unwrap();
        assert_eq!(r.realm_vm.boot.mean, 0.0);
        assert_eq!(r.normal_vm.per_inference.mean, 0.0);
        assert_eq!(r.ratios.per_inference, None);
        assert_eq!(r.ratios.boot, None);
        assert_eq!(r.ratios.termination, None);
    }

    #[test]
    fn unit_switch_costs_expose_the_switch_counts() {
        let p = CostProfile::zero()
            .with(EventKind::WorldSwitch, 1)
            .with(EventKind::VmEnter, 1)
            .with(EventKind::Idle, 5);
        let r = run_experiment(&quick(p)).unwrap();
        assert_eq!(r.normal_vm.per_inference.mean, 2.0);
        assert_eq!(r.realm_vm.per_inference.mean, 6.0);
        assert_eq!(r.realm_vm.termination.mean, 2.0);
        assert_eq!(r.realm_vm.boot.mean, 4.0);
    }

    #[test]
    fn jitter_is_seeded() {
        let mut cfg = quick(CostProfile::unit());
        cfg.jitter = Some(Jitter {
            realm_boot: 1000.0,
            ..Jitter::default()
        });
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a, run_experiment(&cfg).unwrap());
        assert!(a.realm_vm.boot.std_dev > 0.0);
        assert_eq!(a.normal_vm.boot.std_dev, 0.0);
    }

    #[test]
    fn csv_has_three_rows() {
        let r = run_experiment(&quick(CostProfile::unit())).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("inference,"));
    }
}
