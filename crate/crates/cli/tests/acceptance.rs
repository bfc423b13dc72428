// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use realmsim::attestation::{verify_report_bytes, AttestationReport, EntryPoint, RejectReason, Verdict};
use realmsim::cost::{run_experiment, run_scenario, ExperimentConfig, ImageScale, Scenario};
use realmsim::granule::{access_allowed, Access, AccessKind, Layout};
use realmsim::orchestrator::{fixture_inputs, run_pipeline, Endpoint, ImageSpec, PipelineConfig, RealmImage};
use realmsim::provider::channel::{initiate, ChannelKeys};
use realmsim::provider::protocol::Message;
use realmsim::provider::{Provider, Refusal, Reply};
use realmsim::rmm::{MachineConfig, RealmParams};
use realmsim::runtime::{ModelPackage, Policy, SharedRegion};
use realmsim::seed::derive_rng;
use realmsim::sweep::{lifecycle_fuzz, tamper_sweep, Mode};
use realmsim::{
    keys, CostProfile, EventKind, GranuleState, Machine, RealmId, RealmState, ReferenceValues, World, GRANULE_SIZE,
};
use sha2::{Digest as _, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_realmsim")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn image() -> Vec<u8> {
    RealmImage::build(&ImageSpec::fixture(98_000_000), &keys::verifier_signing_key()).encode()
}

/// Affine classifier in 128-bit arithmetic, lowest index on ties.
fn oracle_class(pkg: &ModelPackage, x: &[i32]) -> u32 {
    let d = pkg.features as usize;
    let scores: Vec<i128> = (0..pkg.classes as usize)
        .map(|c| {
            let dot: i128 = (0..d).map(|j| pkg.weights[c * d + j] as i128 * x[j] as i128).sum();
            dot + ((pkg.bias[c] as i128) << 16)
        })
        .collect();
    let max = *scores.iter().max().unwrap();
    scores.iter().position(|&s| s == max).unwrap() as u32
}

/// Measurement chain computed from the byte layout alone.
fn oracle_rim(pers: &[u8; 64], entry: &EntryPoint, pages: &[(u64, Vec<u8>)]) -> [u8; 32] {
    let mut params = pers.to_vec();
    params.extend_from_slice(&entry.granule.to_le_bytes());
    params.extend_from_slice(&entry.offset.to_le_bytes());
    let mut rim = sha(&[&[0u8; 32], &sha(&[&params])]);
    for (addr, content) in pages {
        rim = sha(&[&rim, &sha(&[content]), &addr.to_le_bytes()]);
    }
    rim
}

fn new_realm(m: &mut Machine, pers: [u8; 64], entry: EntryPoint) -> RealmId {
    m.realm_create(RealmParams {
        personalization: pers,
        entry_point: entry,
        shared: None,
    })
    .unwrap()
}

fn ac1() -> Outcome {
    let mut m = Machine::new(MachineConfig {
        layout: Layout {
            root: 1,
            secure: 1,
            normal: 3,
        },
        ..MachineConfig::default()
    });
    let realm = new_realm(&mut m, [0; 64], EntryPoint::default());
    m.delegate(3).unwrap();
    m.delegate(4).unwrap();
    m.data_create(realm, 4, &[1; GRANULE_SIZE], 0).unwrap();
    let allowed = |w: World, s: GranuleState| match w {
        World::Root => true,
        World::Realm => matches!(
            s,
            GranuleState::NormalWorld | GranuleState::DelegatedRealm | GranuleState::RealmOwned(_)
        ),
        World::Secure => matches!(s, GranuleState::NormalWorld | GranuleState::Secure),
        World::Normal => s == GranuleState::NormalWorld,
    };
    let mut cases = 0;
    for w in [World::Normal, World::Realm, World::Secure, World::Root] {
        for id in 0..5 {
            let s = m.granules().state(id).unwrap();
            for kind in [AccessKind::Read, AccessKind::Write] {
                let want = if allowed(w, s) { Access::Allow } else { Access::Deny };
                let got = m.granules().check_access(w, id, kind).unwrap();
                ensure!(got == want, "{w:?} {kind:?} on {s:?}: {got:?}");
                ensure!(access_allowed(w, s, kind) == want, "{w:?} {kind:?} on {s:?}");
                cases += 1;
            }
        }
    }
    ensure!(cases == 40, "{cases} cases");
    Ok("40/40 cases".into())
}

fn ac2() -> Outcome {
    let s = lifecycle_fuzz(2026, 100_000, 16, Mode::Parallel);
    ensure!(
        s.violations.is_empty(),
        "violations: {:?}",
        &s.violations[..s.violations.len().min(3)]
    );
    ensure!(s.rejected > 0, "no command was ever rejected");
    Ok(format!(
        "{} sequences, {} commands, {} rejected",
        s.sequences, s.commands, s.rejected
    ))
}

fn ac3() -> Outcome {
    let pers = [3u8; 64];
    let entry = EntryPoint {
        granule: 0x80000,
        offset: 0,
    };
    let pages: Vec<(u64, Vec<u8>)> = (0..10u64)
        .map(|i| ((0x80000 + i) * GRANULE_SIZE as u64, vec![0x10 + i as u8; GRANULE_SIZE]))
        .collect();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("populate.json");
    let mut ops = vec![serde_json::json!({"op": "realm_create", "args": {
        "personalization": hex::encode(pers),
        "entry_point": {"granule": entry.granule, "offset": entry.offset}}})];
    for (i, (addr, content)) in pages.iter().enumerate() {
        ops.push(serde_json::json!({"op": "granule_delegate", "args": {"granule": 2 + i}}));
        ops.push(serde_json::json!({"op": "data_create", "args": {
            "realm": 1, "granule": 2 + i, "fill": content[0], "target_addr": addr}}));
    }
    ops.push(serde_json::json!({"op": "realm_activate", "args": {"realm": 1}}));
    ops.push(serde_json::json!({"op": "attestation_token", "args": {"realm": 1, "challenge": hex::encode([7u8; 64])}}));
    std::fs::write(&path, serde_json::to_string(&ops).unwrap()).map_err(|e| e.to_string())?;
    let script = path.to_str().unwrap();
    let first = cli(&["run", "--script", script])?;
    let second = cli(&["run", "--script", script])?;
    ensure!(first == second, "two processes disagree");
    let last = String::from_utf8_lossy(&first)
        .lines()
        .last()
        .unwrap_or_default()
        .to_string();
    let line: serde_json::Value = serde_json::from_str(&last).map_err(|e| e.to_string())?;
    let report_hex = line["detail"].as_str().ok_or("no report")?;
    let report = AttestationReport::decode(&hex::decode(report_hex).map_err(|e| e.to_string())?)
        .map_err(|e| format!("{e:?}"))?;
    let base = oracle_rim(&pers, &entry, &pages);
    ensure!(report.realm_token.rim == base, "process rim differs from oracle");

    let populate = |pages: &[(u64, Vec<u8>)]| {
        let mut m = Machine::new(MachineConfig::default());
        let realm = new_realm(&mut m, pers, entry);
        let free = m.granules().ids_in(GranuleState::NormalWorld);
        for ((addr, content), &g) in pages.iter().zip(&free) {
            m.delegate(g).unwrap();
            m.data_create(realm, g, content, *addr).unwrap();
        }
        m.activate(realm).unwrap();
        m.realm(realm).unwrap().rim
    };
    ensure!(populate(&pages) == base, "in-process rim differs");
    let mut rng = derive_rng(77, "transpositions");
    let idx: Vec<usize> = (0..pages.len()).collect();
    for _ in 0..20 {
        let pair: Vec<usize> = idx.choose_multiple(&mut rng, 2).copied().collect();
        let mut swapped = pages.clone();
        swapped.swap(pair[0], pair[1]);
        let rim = populate(&swapped);
        ensure!(rim != base, "swap {pair:?} kept the rim");
        ensure!(
            rim == oracle_rim(&pers, &entry, &swapped),
            "swap {pair:?} disagrees with oracle"
        );
    }
    Ok("2 processes agree; 20/20 transpositions change rim and match oracle".into())
}

fn attested_machine() -> (Machine, RealmId, ReferenceValues) {
    let mut m = Machine::new(MachineConfig::default());
    let realm = new_realm(
        &mut m,
        [9; 64],
        EntryPoint {
            granule: 0x80000,
            offset: 0,
        },
    );
    let g = m.granules().ids_in(GranuleState::NormalWorld)[0];
    m.delegate(g).unwrap();
    m.data_create(realm, g, &[5; GRANULE_SIZE], 0x80000 * GRANULE_SIZE as u64)
        .unwrap();
    m.activate(realm).unwrap();
    let refs = ReferenceValues::for_fixture_platform(m.realm(realm).unwrap().rim);
    (m, realm, refs)
}

fn ac4() -> Outcome {
    let (mut m, realm, refs) = attested_machine();
    let challenge = [0x5a; 64];
    let bytes = m.rsi_attestation_token(realm, &challenge).unwrap().encode();
    ensure!(bytes.len() < 2048, "report is {} bytes", bytes.len());
    ensure!(
        verify_report_bytes(&bytes, &challenge, &refs) == Verdict::Accept,
        "honest report rejected"
    );
    let s = tamper_sweep(&bytes, &challenge, &refs, Mode::Parallel);
    ensure!(s.accepted.is_empty(), "accepted mutations: {:?}", s.accepted);
    let fresh = [0xa5; 64];
    let replay = verify_report_bytes(&bytes, &fresh, &refs);
    ensure!(
        replay == Verdict::Reject(RejectReason::ChallengeMismatch),
        "replay gave {replay:?}"
    );
    let honest = m.rsi_attestation_token(realm, &fresh).unwrap().encode();
    ensure!(
        verify_report_bytes(&honest, &fresh, &refs) == Verdict::Accept,
        "fresh report rejected"
    );
    Ok(format!(
        "{}-byte report, {}/{} mutations rejected",
        bytes.len(),
        s.rejected,
        s.mutations
    ))
}

fn ac5() -> Outcome {
    let mut cfg = PipelineConfig::new(image(), fixture_inputs(5, 40, 4), Policy::UNLIMITED);
    cfg.update_after = Some(20);
    let run = run_pipeline(&cfg);
    ensure!(run.is_ok(), "aborted: {:?}", run.abort);
    run.transcript.validate()?;
    let first: Vec<u8> = run
        .transcript
        .entries
        .iter()
        .filter_map(|e| e.step)
        .fold(Vec::new(), |mut v, s| {
            if !v.contains(&s) {
                v.push(s);
            }
            v
        });
    ensure!(first == [1, 2, 3, 4, 5, 6, 7, 8], "steps first seen in order {first:?}");
    ensure!(
        run.transcript.count_step(7) == 40,
        "{} inference steps",
        run.transcript.count_step(7)
    );
    let want: Vec<u32> = cfg
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| oracle_class(&cfg.models[usize::from(i >= 20)], x))
        .collect();
    let got: Vec<u32> = run.outputs.iter().map(|o| o.1).collect();
    ensure!(got == want, "outputs differ from oracle");
    ensure!(
        run.normal_world_after == run.normal_world_before,
        "NormalWorld {} -> {}",
        run.normal_world_before,
        run.normal_world_after
    );
    Ok(format!(
        "steps 1-8, 40/40 outputs match oracle, {} granules restored",
        run.normal_world_after
    ))
}

fn ac6() -> Outcome {
    let run = |policy| run_pipeline(&PipelineConfig::new(image(), fixture_inputs(5, 40, 4), policy));
    let limited = run(Policy {
        max_inferences: Some(5),
        valid_until: None,
    });
    ensure!(limited.is_ok(), "aborted: {:?}", limited.abort);
    ensure!(limited.outputs.len() == 5, "{} outputs", limited.outputs.len());
    ensure!(
        limited.termination.as_deref() == Some("inference-limit"),
        "{:?}",
        limited.termination
    );
    ensure!(
        limited.descriptor().map(|d| d.state) == Some(RealmState::Destroyed),
        "realm not destroyed"
    );
    ensure!(
        limited.normal_world_after == limited.normal_world_before,
        "not reclaimed"
    );
    let expired = run(Policy {
        max_inferences: None,
        valid_until: Some(35),
    });
    ensure!(expired.is_ok(), "aborted: {:?}", expired.abort);
    ensure!(
        expired.termination.as_deref() == Some("expired"),
        "{:?}",
        expired.termination
    );
    ensure!(
        expired.normal_world_after == expired.normal_world_before,
        "not reclaimed"
    );
    Ok(format!(
        "limit: 5 outputs then inference-limit; expiry after {} outputs",
        expired.outputs.len()
    ))
}

fn within(x: f64, target: f64) -> bool {
    (x / target - 1.0).abs() <= 0.10
}

fn ac7() -> Outcome {
    let p = CostProfile::calibrated();
    let small = run_experiment(&ExperimentConfig::new(p.clone(), ImageScale::MB98)).map_err(|e| e.to_string())?;
    let r = small.ratios;
    let (inf, boot, term) = (
        r.per_inference.ok_or("undefined")?,
        r.boot.ok_or("undefined")?,
        r.termination.ok_or("undefined")?,
    );
    let large = run_experiment(&ExperimentConfig::new(p, ImageScale::MB139)).map_err(|e| e.to_string())?;
    let boot_large = large.ratios.boot.ok_or("undefined")?;
    ensure!(within(inf, 1.62), "per-inference {inf:.3}");
    ensure!(within(boot, 26.62), "boot 98MB {boot:.3}");
    ensure!(within(term, 9.23), "termination {term:.3}");
    ensure!(within(boot_large, 37.50), "boot 139MB {boot_large:.3}");

    let mut rng = derive_rng(11, "positive-profiles");
    for i in 0..20 {
        let mut p = CostProfile::zero();
        for k in EventKind::ALL {
            p.set(k, rng.gen_range(1..1_000_000));
        }
        let (ws, ve) = switch_counts(p.clone());
        ensure!(
            ws == 4 && ve == 2,
            "profile {i}: realm entry {ws} switches, {ve} vm entries"
        );
        let quick = |scale| ExperimentConfig {
            inferences: 3,
            runs: 1,
            ..ExperimentConfig::new(p.clone(), scale)
        };
        let a = run_scenario(Scenario::RealmVm, &quick(ImageScale(2_000_000))).map_err(|e| e.to_string())?;
        let b = run_scenario(Scenario::RealmVm, &quick(ImageScale(3_000_000))).map_err(|e| e.to_string())?;
        ensure!(
            b.boot.mean > a.boot.mean,
            "profile {i}: boot not increasing in image size"
        );
    }
    Ok(format!(
        "ratios {inf:.2} / {boot:.2} / {term:.2} (98MB), boot {boot_large:.2} (139MB); \
         structure holds for 20 random profiles"
    ))
}

/// World switches and VM entries for one realm entry, then VM entries for
/// one normal VM entry (which must switch no worlds).
fn switch_counts(profile: CostProfile) -> (usize, usize) {
    let mut m = Machine::new(MachineConfig {
        profile,
        ..MachineConfig::default()
    });
    let realm = new_realm(&mut m, [0; 64], EntryPoint::default());
    m.activate(realm).unwrap();
    let count = |m: &Machine| {
        (
            m.ledger().count(EventKind::WorldSwitch),
            m.ledger().count(EventKind::VmEnter),
        )
    };
    let (ws0, ve0) = count(&m);
    m.rec_enter(realm).unwrap();
    let (ws1, ve1) = count(&m);
    let free = m.granules().ids_in(GranuleState::NormalWorld);
    let shared = SharedRegion {
        mailbox: free[0],
        inbox: free[1],
        outbox: free[2],
        exchange: vec![free[3]],
    };
    let mut vm = m
        .vm_boot(ModelPackage::fixture(42, 3, 4, 1, Policy::UNLIMITED), shared)
        .unwrap();
    let (ws2, ve2) = count(&m);
    m.vm_enter(&mut vm);
    let (ws3, ve3) = count(&m);
    if ws3 != ws2 || ve3 - ve2 != 2 {
        return (usize::MAX, usize::MAX);
    }
    (ws1 - ws0, ve1 - ve0)
}

fn ac8() -> Outcome {
    let mut cfg = PipelineConfig::new(image(), fixture_inputs(5, 40, 4), Policy::UNLIMITED);
    cfg.adversarial_reads = true;
    let mut run = run_pipeline(&cfg);
    ensure!(run.is_ok(), "aborted: {:?}", run.abort);
    ensure!(run.snoop_attempts > 0, "no snoop attempts made");
    ensure!(
        run.snoop_denied == run.snoop_attempts,
        "{} of {} snoops denied",
        run.snoop_denied,
        run.snoop_attempts
    );
    let secret = cfg.models[0].weight_encoding();
    let ids = run.machine.granules().ids_in(GranuleState::NormalWorld);
    for &g in &ids {
        let page = run.machine.host_read(g, 0, GRANULE_SIZE).map_err(|e| e.to_string())?;
        ensure!(
            !page.windows(secret.len()).any(|w| w == secret.as_slice()),
            "weights in granule {g}"
        );
    }
    Ok(format!(
        "{} normal-world granules clean; {}/{} snoops denied",
        ids.len(),
        run.snoop_denied,
        run.snoop_attempts
    ))
}

/// Minimal realm-side client speaking to a [`Provider`] in memory.
struct Client {
    m: Machine,
    realm: RealmId,
    keys: Option<ChannelKeys>,
}

fn one(reply: &Reply) -> Result<Message, String> {
    match reply.frames.as_slice() {
        [f] => Message::from_frame(f).map_err(|e| format!("{e:?}")),
        _ => Err(format!("expected one frame, got {reply:?}")),
    }
}

impl Client {
    fn provision(&mut self, p: &mut Provider) -> Result<ModelPackage, String> {
        p.connect();
        let (eph, keys) = initiate(&mut derive_rng(3, "client"), &keys::provider_static_public());
        let reply = p.handle(&Message::Hello { key: eph }.to_frame());
        let msgs: Vec<_> = reply
            .frames
            .iter()
            .filter_map(|f| Message::from_frame(f).ok())
            .collect();
        let [Message::Hello { key }, Message::Challenge { nonce }] = msgs.as_slice() else {
            return Err(format!("unexpected handshake {msgs:?}"));
        };
        keys.check_confirmation(key).map_err(|e| e.to_string())?;
        self.keys = Some(keys);
        let report = self.m.rsi_attestation_token(self.realm, nonce).unwrap().encode();
        let Message::Package { sealed } = one(&p.handle(&Message::Report { report }.to_frame()))? else {
            return Err("not provisioned".into());
        };
        let pkg = self.open(3, &sealed)?;
        self.m.rsi_measurement_extend(self.realm, 0, &pkg.digest).unwrap();
        Ok(pkg)
    }

    fn open(&mut self, code: u8, sealed: &[u8]) -> Result<ModelPackage, String> {
        let plain = self
            .keys
            .as_mut()
            .unwrap()
            .open(&[code], sealed)
            .map_err(|e| e.to_string())?;
        ModelPackage::decode(&plain).map_err(|e| format!("{e:?}"))
    }

    fn update(&mut self, p: &mut Provider, current: u32) -> Result<Reply, String> {
        let q = Message::UpdateQuery {
            current_version: current,
        };
        let Message::Challenge { nonce } = one(&p.handle(&q.to_frame()))? else {
            return Err("no update challenge".into());
        };
        let report = self.m.rsi_attestation_token(self.realm, &nonce).unwrap().encode();
        Ok(p.handle(&Message::Report { report }.to_frame()))
    }
}

fn provider_session() -> (Provider, Client) {
    let (m, realm, refs) = attested_machine();
    let v = |n: u32| ModelPackage::fixture(40 + n as u64, 3, 4, n, Policy::UNLIMITED);
    let provider = Provider::new(1, keys::provider_static_secret(), refs, vec![v(1), v(2)], 1);
    (provider, Client { m, realm, keys: None })
}

fn ac9() -> Outcome {
    let (mut p, mut c) = provider_session();
    c.provision(&mut p)?;
    c.m.rsi_measurement_extend(c.realm, 0, &sha(&[b"substituted model"]))
        .unwrap();
    p.publish_next();
    let reply = c.update(&mut p, 1)?;
    ensure!(
        reply.refusal == Some(Refusal::RuntimeStateMismatch),
        "mismatched rem gave {:?}",
        reply.refusal
    );

    let (mut p, mut c) = provider_session();
    let v1 = c.provision(&mut p)?;
    p.publish_next();
    let Message::Update { sealed } = one(&c.update(&mut p, 1)?)? else {
        return Err("matched rem did not yield an update".into());
    };
    let v2 = c.open(6, &sealed)?;
    ensure!(v2.version == 2, "update carried version {}", v2.version);
    c.m.rsi_measurement_extend(c.realm, 0, &v2.digest).unwrap();
    let chain = sha(&[&sha(&[&[0; 32], &v1.digest]), &v2.digest]);
    ensure!(
        c.m.realm(c.realm).unwrap().rem[0] == chain,
        "provider-session rem chain differs from oracle"
    );

    let mut cfg = PipelineConfig::new(image(), fixture_inputs(5, 40, 4), Policy::UNLIMITED);
    cfg.update_after = Some(20);
    let run = run_pipeline(&cfg);
    ensure!(run.is_ok(), "aborted: {:?}", run.abort);
    let chain = sha(&[&sha(&[&[0; 32], &cfg.models[0].digest]), &cfg.models[1].digest]);
    ensure!(
        run.descriptor().map(|d| d.rem[0]) == Some(chain),
        "pipeline rem chain differs from oracle"
    );
    Ok("mismatch refused with RuntimeStateMismatch; v2 delivered and rem = [d(v1), d(v2)]".into())
}

fn ac10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = fixtures().join("demo.json");
    let config = config.to_str().unwrap();
    let run_out = |name: &str, extra: &[&str]| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let mut args = vec!["run", "--config", config, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        cli(&args)?;
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let a = run_out("a.jsonl", &[])?;
    let b = run_out("b.jsonl", &[])?;
    let t = run_out("t.jsonl", &["--tcp"])?;
    ensure!(!a.is_empty(), "empty transcript");
    ensure!(a == b, "run differs across invocations");
    ensure!(a == t, "run differs between transports");

    let exp = |extra: &[&str]| {
        let mut args = vec![
            "experiment",
            "--runs",
            "2",
            "--inferences",
            "10",
            "--seed",
            "3",
            "--jitter",
        ];
        args.extend_from_slice(extra);
        cli(&args)
    };
    let x = exp(&[])?;
    let y = exp(&[])?;
    let z = exp(&["--tcp"])?;
    ensure!(x == y, "experiment differs across invocations");
    ensure!(x == z, "experiment differs between transports");

    let mut inproc = PipelineConfig::new(image(), fixture_inputs(8, 12, 4), Policy::UNLIMITED);
    inproc.seed = 8;
    let mut tcp = inproc.clone();
    tcp.endpoint = Endpoint::Tcp;
    let (i, t) = (run_pipeline(&inproc), run_pipeline(&tcp));
    ensure!(
        i.transcript == t.transcript && i.outputs == t.outputs,
        "library transports disagree"
    );
    Ok(format!(
        "run ({} bytes) and experiment ({} bytes) identical x2 and over TCP",
        a.len(),
        x.len()
    ))
}

struct Criterion {
    id: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: "AC1",
            limit: Some(Duration::from_secs(1)),
            check: ac1,
        },
        Criterion {
            id: "AC2",
            limit: Some(Duration::from_secs(30)),
            check: ac2,
        },
        Criterion {
            id: "AC3",
            limit: None,
            check: ac3,
        },
        Criterion {
            id: "AC4",
            limit: Some(Duration::from_secs(10)),
            check: ac4,
        },
        Criterion {
            id: "AC5",
            limit: None,
            check: ac5,
        },
        Criterion {
            id: "AC6",
            limit: None,
            check: ac6,
        },
        Criterion {
            id: "AC7",
            limit: None,
            check: ac7,
        },
        Criterion {
            id: "AC8",
            limit: None,
            check: ac8,
        },
        Criterion {
            id: "AC9",
            limit: None,
            check: ac9,
        },
        Criterion {
            id: "AC10",
            limit: None,
            check: ac10,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.iter().any(|f| f == c.id))
    {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:.0?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("{:<4} PASS  {:>8.2?}  {detail}", c.id, elapsed),
            Err(why) => {
                failed += 1;
                println!("{:<4} FAIL  {:>8.2?}  {why}", c.id, elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
