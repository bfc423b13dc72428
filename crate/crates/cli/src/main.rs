// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! `realmsim` command-line driver.
//!
//! Exit status: 0 on success, 1 on a domain failure (rejected report,
//! aborted pipeline, refused provisioning), 2 on a usage or input error.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use realmsim::attestation::{sha256, verify_report_bytes, AttestationReport, EntryPoint, Verdict};
use realmsim::cost::{
    calibrate, run_experiment, CalibrationTargets, CostProfile, ExperimentConfig, ImageScale, Jitter,
};
use realmsim::granule::GranuleState;
use realmsim::keys;
use realmsim::orchestrator::config::load_profile;
use realmsim::orchestrator::{run_pipeline, Endpoint, ImageSpec, RealmImage, RunConfig};
use realmsim::rmm::{Machine, MachineConfig, RealmParams};
use realmsim::{script, ReferenceValues};

#[derive(Parser)]
#[command(name = "realmsim", version, about = "Realm-based confidential inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the end-to-end pipeline, or replay a command script.
    Run {
        #[arg(long, required_unless_present = "script", conflicts_with = "script")]
        config: Option<PathBuf>,
        /// JSON command script replayed against a fresh machine.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Override the cost profile named in the config.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Talk to the provider over a local TCP socket.
        #[arg(long)]
        tcp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a realm VM against a normal-world VM.
    Experiment {
        /// Cost profile; defaults to the committed calibration.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Nominal image size, e.g. `98mb`, `139mb` or a byte count.
        #[arg(long, default_value = "98mb")]
        image: String,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 40)]
        inferences: usize,
        /// Add per-run noise with the reference deviations.
        #[arg(long)]
        jitter: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tcp: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a cost profile to target measurements.
    Calibrate {
        /// Targets file; defaults to the published reference points.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Appraise an encoded attestation report against reference values.
    AttestVerify {
        report: PathBuf,
        refs: PathBuf,
        /// Expected challenge as hex; defaults to the one inside the report.
        #[arg(long)]
        challenge: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a signed realm image bundle.
    MakeImage {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "98mb")]
        image: String,
        /// Program bytes placed after the runtime manifest.
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        pages: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Also write the bundled reference values as JSON.
        #[arg(long)]
        refs_out: Option<PathBuf>,
        /// Also load the image into a fresh realm and write an attestation
        /// report for a seed-derived challenge.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

/// Failure that maps to exit status 1.
#[derive(Debug)]
struct DomainFailure(String);

impl std::fmt::Display for DomainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DomainFailure {}

fn domain(msg: impl Into<String>) -> anyhow::Error {
    DomainFailure(msg.into()).into()
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn scale(s: &str) -> anyhow::Result<ImageScale> {
    ImageScale::parse(s).ok_or_else(|| anyhow!("invalid image size `{s}`; use e.g. 98mb or a byte count"))
}

fn cmd_run(
    config: Option<PathBuf>,
    script_path: Option<PathBuf>,
    profile: Option<PathBuf>,
    seed: Option<u64>,
    tcp: bool,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    if let Some(path) = script_path {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let ops = script::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut cfg = MachineConfig {
            seed: seed.unwrap_or(0),
            ..MachineConfig::default()
        };
        if let Some(p) = profile {
            cfg.profile = load_profile(&p)?;
        }
        let mut m = Machine::new(cfg);
        let mut lines = String::new();
        for r in script::replay(&mut m, &ops) {
            lines.push_str(&serde_json::to_string(&r)?);
            lines.push('\n');
        }
        return emit(&out, &lines);
    }
    let path = config.expect("clap requires --config or --script");
    let (rc, base) = RunConfig::load(&path)?;
    let mut cfg = rc.to_pipeline(&base)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if tcp {
        cfg.endpoint = Endpoint::Tcp;
    }
    if let Some(p) = profile {
        cfg.profile = load_profile(&p)?;
    }
    let run = run_pipeline(&cfg);
    emit(&out, &run.transcript.to_json_lines())?;
    eprintln!(
        "served {} of {} inputs; normal-world granules {} -> {}",
        run.outputs.len(),
        cfg.inputs.len(),
        run.normal_world_before,
        run.normal_world_after
    );
    if let Some(reason) = &run.termination {
        eprintln!("workload requested termination: {reason}");
    }
    match run.abort {
        Some(a) => Err(domain(format!("pipeline aborted at step {}: {}", a.step, a.error))),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    profile: Option<PathBuf>,
    image: &str,
    runs: usize,
    inferences: usize,
    jitter: bool,
    seed: u64,
    tcp: bool,
    format: Format,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let profile = match profile {
        Some(p) => load_profile(&p)?,
        None => CostProfile::calibrated(),
    };
    let cfg = ExperimentConfig {
        profile,
        image: scale(image)?,
        inferences,
        runs,
        seed,
        jitter: jitter.then(Jitter::reference),
        endpoint: if tcp { Endpoint::Tcp } else { Endpoint::InProcess },
    };
    let report = run_experiment(&cfg).map_err(|e| domain(e.to_string()))?;
    let text = match format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    emit(&out, &text)
}

fn cmd_calibrate(targets: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let targets = match targets {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CalibrationTargets::default(),
    };
    let profile = calibrate(&targets).map_err(|e| domain(e.to_string()))?;
    emit(&out, &(serde_json::to_string_pretty(&profile)? + "\n"))
}

fn cmd_attest_verify(report: &Path, refs: &Path, challenge: Option<String>) -> anyhow::Result<()> {
    let bytes = std::fs::read(report).with_context(|| format!("reading {}", report.display()))?;
    let refs_text = std::fs::read_to_string(refs).with_context(|| format!("reading {}", refs.display()))?;
    let refs: ReferenceValues =
        serde_json::from_str(&refs_text).with_context(|| format!("parsing {}", refs.display()))?;
    let expected = match challenge {
        Some(h) => {
            let v = hex::decode(h.trim()).context("challenge is not hex")?;
            <[u8; 64]>::try_from(v.as_slice()).map_err(|_| anyhow!("challenge must be 64 bytes"))?
        }
        None => match AttestationReport::decode(&bytes) {
            Ok(r) => r.realm_token.challenge,
            Err(e) => {
                return Err(domain(format!(
                    "Reject: DecodeError at byte {}: {}",
                    e.offset, e.reason
                )))
            }
        },
    };
    match verify_report_bytes(&bytes, &expected, &refs) {
        Verdict::Accept => {
            println!("Accept");
            Ok(())
        }
        Verdict::Reject(reason) => Err(domain(format!("Reject: {reason}"))),
    }
}

fn cmd_make_image(
    out: &Path,
    image: &str,
    program: Option<PathBuf>,
    pages: usize,
    seed: u64,
    refs_out: Option<PathBuf>,
    report_out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut spec = ImageSpec::fixture(scale(image)?.bytes());
    spec.pages = pages;
    spec.seed = seed;
    if let Some(p) = program {
        spec.program = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
    }
    let img = RealmImage::build(&spec, &keys::verifier_signing_key());
    std::fs::write(out, img.encode()).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = refs_out {
        std::fs::write(&p, serde_json::to_string_pretty(&img.refs)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = report_out {
        let report = attest_image(&img, seed)?;
        std::fs::write(&p, report.encode()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Load `img` into a fresh realm and attest it.
fn attest_image(img: &RealmImage, seed: u64) -> anyhow::Result<AttestationReport> {
    let mut m = Machine::new(MachineConfig {
        seed,
        ..MachineConfig::default()
    });
    let realm = m.realm_create(RealmParams {
        personalization: img.personalization,
        entry_point: EntryPoint {
            granule: img.entry_point.granule,
            offset: img.entry_point.offset,
        },
        shared: None,
    })?;
    let free = m.granules().ids_in(GranuleState::NormalWorld);
    if free.len() < img.segments.len() {
        return Err(anyhow!("image has more pages than the simulated machine"));
    }
    for (seg, &g) in img.segments.iter().zip(&free) {
        m.delegate(g)?;
        m.data_create(realm, g, &seg.content, seg.target_addr)?;
    }
    m.activate(realm)?;
    let head = sha256(format!("realmsim cli challenge {seed}").as_bytes());
    let mut challenge = [0u8; 64];
    challenge[..32].copy_from_slice(&head);
    challenge[32..].copy_from_slice(&sha256(&head));
    Ok(m.rsi_attestation_token(realm, &challenge)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            script,
            profile,
            seed,
            tcp,
            out,
        } => cmd_run(config, script, profile, seed, tcp, out),
        Command::Experiment {
            profile,
            image,
            runs,
            inferences,
            jitter,
            seed,
            tcp,
            format,
            out,
        } => cmd_experiment(profile, &image, runs, inferences, jitter, seed, tcp, format, out),
        Command::Calibrate { targets, seed: _, out } => cmd_calibrate(targets, out),
        Command::AttestVerify {
            report,
            refs,
            challenge,
            seed: _,
        } => cmd_attest_verify(&report, &refs, challenge),
        Command::MakeImage {
            out,
            image,
            program,
            pages,
            seed,
            refs_out,
            report_out,
        } => cmd_make_image(&out, &image, program, pages, seed, refs_out, report_out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<DomainFailure>() => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
