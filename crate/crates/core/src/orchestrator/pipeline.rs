// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! End-to-end pipeline driver: plays the normal-world app and hypervisor.
//!
//! Steps: (1) fetch and verify the realm image, (2) create, populate and
//! activate the realm, (3) open the provider channel, (4) attest, (5)
//! receive the model, (6) observe readiness, (7) serve inferences through
//! the exchange region, (8) check for updates; then terminate and reclaim.
//! Memory is reclaimed on every path, including aborts.

use std::sync::{Arc, Mutex};

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::exchange::{Exchange, ExchangeError};
use super::image::{ImageError, RealmImage};
use super::transcript::PipelineTranscript;
use crate::attestation::PlatformState;
use crate::cost::{CostProfile, EventKind, Phase};
use crate::granule::{GranuleError, GranuleId, GranuleState, Layout, World};
use crate::provider::protocol::Message;
use crate::provider::transport::{InProcess, TcpServer, TcpTransport, Transport};
use crate::provider::{Provider, SessionTranscript};
use crate::rmm::{ExitReason, Machine, MachineConfig, RealmDescriptor, RealmId, RealmParams, RmmError};
use crate::runtime::exchange::DEFAULT_SLOTS;
use crate::runtime::{inbox_page, outbox_frames, ModelError, ModelPackage, Policy, SharedRegion, INBOX_UPDATE_CHECK};
use crate::GRANULE_SIZE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    #[default]
    #[serde(rename = "inprocess")]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("image verification failed: {0}")]
    Image(#[from] ImageError),
    #[error(transparent)]
    Rmm(#[from] RmmError),
    #[error(transparent)]
    Granule(#[from] GranuleError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error("provider transport: {0}")]
    Transport(String),
    #[error("provider refused: {0}")]
    Refused(String),
    #[error("unexpected realm exit: {0:?}")]
    UnexpectedExit(ExitReason),
    #[error("setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub step: u8,
    pub error: PipelineError,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Encoded image bundle.
    pub image: Vec<u8>,
    pub verifier: VerifyingKey,
    pub endpoint: Endpoint,
    pub inputs: Vec<Vec<i32>>,
    /// Provider version history; the first one is published at start.
    pub models: Vec<ModelPackage>,
    pub profile: CostProfile,
    pub seed: u64,
    /// Publish the next model version and check for updates after this many
    /// inputs were submitted.
    pub update_after: Option<usize>,
    pub exchange_slots: usize,
    pub layout: Layout,
    pub platform: PlatformState,
    /// Test hook: after every inference the host tries to read each realm
    /// granule directly.
    pub adversarial_reads: bool,
}

impl PipelineConfig {
    /// Fixture models (seed 42 and 43, three classes, four features) under
    /// `policy`.
    pub fn fixture_models(policy: Policy) -> Vec<ModelPackage> {
        vec![
            ModelPackage::fixture(42, 3, 4, 1, policy),
            ModelPackage::fixture(43, 3, 4, 2, policy),
        ]
    }

    pub fn new(image: Vec<u8>, inputs: Vec<Vec<i32>>, policy: Policy) -> Self {
        Self {
            image,
            verifier: crate::keys::verifier_signing_key().verifying_key(),
            endpoint: Endpoint::InProcess,
            inputs,
            models: Self::fixture_models(policy),
            profile: CostProfile::zero(),
            seed: 0,
            update_after: None,
            exchange_slots: DEFAULT_SLOTS,
            layout: Layout::default(),
            platform: PlatformState::default(),
            adversarial_reads: false,
        }
    }
}

/// Result of a run, successful or not.
#[derive(Debug)]
pub struct PipelineRun {
    pub transcript: PipelineTranscript,
    /// `(request id, class)` in completion order.
    pub outputs: Vec<(u64, u32)>,
    /// Reason given by the workload when it asked to be terminated.
    pub termination: Option<String>,
    pub abort: Option<Abort>,
    pub machine: Machine,
    pub realm: Option<RealmId>,
    pub normal_world_before: usize,
    pub normal_world_after: usize,
    pub provider_transcript: SessionTranscript,
    /// Outcomes of the adversarial read hook.
    pub snoop_attempts: usize,
    pub snoop_denied: usize,
}

impl PipelineRun {
    pub fn descriptor(&self) -> Option<&RealmDescriptor> {
        self.realm.and_then(|r| self.machine.realm(r))
    }

    pub fn is_ok(&self) -> bool {
        self.abort.is_none()
    }
}

/// Fixture inputs: `n` vectors of `features` values in [-4, 4).
pub fn fixture_inputs(seed: u64, n: usize, features: usize) -> Vec<Vec<i32>> {
    use rand::Rng;
    let mut rng = crate::seed::derive_rng(seed, "fixture-inputs");
    (0..n)
        .map(|_| {
            (0..features)
                .map(|_| rng.gen_range(-4 * crate::runtime::model::FIXED_ONE..4 * crate::runtime::model::FIXED_ONE))
                .collect()
        })
        .collect()
}

struct Driver {
    m: Machine,
    transcript: PipelineTranscript,
    outputs: Vec<(u64, u32)>,
    termination: Option<String>,
    realm: Option<RealmId>,
    delegated: Vec<GranuleId>,
    shared: Option<SharedRegion>,
    snoop_attempts: usize,
    snoop_denied: usize,
    provider_transcript: SessionTranscript,
}

fn at(step: u8) -> impl FnOnce(PipelineError) -> Abort {
    move |error| Abort { step, error }
}

fn fail<E: Into<PipelineError>>(step: u8) -> impl FnOnce(E) -> Abort {
    move |e| Abort { step, error: e.into() }
}

enum Channel {
    InProcess(InProcess),
    Tcp(TcpTransport, TcpServer),
}

impl Channel {
    fn transport(&mut self) -> &mut dyn Transport {
        match self {
            Channel::InProcess(t) => t,
            Channel::Tcp(t, _) => t,
        }
    }

    fn close(self) -> Result<(), PipelineError> {
        match self {
            Channel::InProcess(_) => Ok(()),
            Channel::Tcp(t, server) => {
                drop(t);
                server.join().map_err(|e| PipelineError::Transport(e.to_string()))
            }
        }
    }
}

impl Driver {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            m: Machine::new(MachineConfig {
                layout: cfg.layout,
                profile: cfg.profile.clone(),
                platform: cfg.platform.clone(),
                seed: cfg.seed,
            }),
            transcript: PipelineTranscript::default(),
            outputs: Vec::new(),
            termination: None,
            realm: None,
            delegated: Vec::new(),
            shared: None,
            snoop_attempts: 0,
            snoop_denied: 0,
            provider_transcript: SessionTranscript::default(),
        }
    }

    fn log(&mut self, stage: &str, step: Option<u8>, outcome: impl Into<String>) {
        let tick = self.m.clock();
        self.transcript.push(stage, step, tick, outcome);
    }

    /// Reserve the shared pages: mailbox, inbox, outbox, then the exchange
    /// slots. Returns the remaining free normal-world granules.
    fn reserve_shared(&mut self, slots: usize, needed: usize) -> Result<Vec<GranuleId>, PipelineError> {
        let free = self.m.granules().ids_in(GranuleState::NormalWorld);
        if free.len() < 3 + slots + needed {
            return Err(PipelineError::Setup(format!(
                "need {} normal-world granules, have {}",
                3 + slots + needed,
                free.len()
            )));
        }
        self.shared = Some(SharedRegion {
            mailbox: free[0],
            inbox: free[1],
            outbox: free[2],
            exchange: free[3..3 + slots].to_vec(),
        });
        Ok(free[3 + slots..].to_vec())
    }

    fn region(&self) -> &SharedRegion {
        self.shared.as_ref().expect("shared region reserved")
    }

    /// Move the realm's outbox to the provider and the replies to its inbox.
    fn network(&mut self, channel: &mut Channel) -> Result<Vec<Message>, PipelineError> {
        let (inbox, outbox) = (self.region().inbox, self.region().outbox);
        let page = self.m.host_read(outbox, 0, GRANULE_SIZE)?;
        let frames = outbox_frames(&page).map_err(|e| PipelineError::Transport(e.0))?;
        self.m.host_write(outbox, 0, &[0; GRANULE_SIZE])?;
        let replies = channel
            .transport()
            .exchange(&frames)
            .map_err(|e| PipelineError::Transport(e.to_string()))?;
        let mut page = inbox_page(&replies).map_err(|e| PipelineError::Transport(e.0))?;
        page.resize(GRANULE_SIZE, 0);
        self.m.host_write(inbox, 0, &page)?;
        replies
            .iter()
            .map(|f| Message::from_frame(f).map_err(|e| PipelineError::Transport(e.to_string())))
            .collect()
    }

    fn enter(&mut self) -> Result<ExitReason, PipelineError> {
        Ok(self.m.rec_enter(self.realm.expect("realm created"))?)
    }

    fn expect_net(&mut self) -> Result<(), PipelineError> {
        match self.enter()? {
            ExitReason::HostCall(p) if p == "net" => Ok(()),
            other => Err(PipelineError::UnexpectedExit(other)),
        }
    }

    fn refusal(msgs: &[Message]) -> Option<String> {
        msgs.iter().find_map(|m| match m {
            Message::Refused { reason } => Some(reason.clone()),
            _ => None,
        })
    }

    fn snoop(&mut self) {
        let Some(d) = self.realm.and_then(|r| self.m.realm(r)) else {
            return;
        };
        let owned: Vec<GranuleId> = d.granules.iter().copied().collect();
        for g in owned {
            self.snoop_attempts += 1;
            if let Err(GranuleError::AccessViolation { .. }) = self.m.host_read(g, 0, GRANULE_SIZE) {
                self.snoop_denied += 1;
            }
        }
    }

    fn realm_pipeline(&mut self, cfg: &PipelineConfig) -> Result<(), Abort> {
        self.m.set_phase(Phase::Boot);
        let image = RealmImage::verify_bundle(&cfg.image, &cfg.verifier).map_err(fail(1))?;
        self.log(
            "fetch_image",
            Some(1),
            format!(
                "verified image: {} segments, {} bytes nominal",
                image.segments.len(),
                image.metadata.image_size_bytes
            ),
        );

        let free = self
            .reserve_shared(cfg.exchange_slots, image.segments.len())
            .map_err(at(2))?;
        let realm = self
            .m
            .realm_create(RealmParams {
                personalization: image.personalization,
                entry_point: image.entry_point,
                shared: self.shared.clone(),
            })
            .map_err(fail(2))?;
        self.realm = Some(realm);
        for (seg, &g) in image.segments.iter().zip(&free) {
            self.m.delegate(g).map_err(fail(2))?;
            self.delegated.push(g);
            self.m
                .data_create(realm, g, &seg.content, seg.target_addr)
                .map_err(fail(2))?;
        }
        let modeled = image
            .metadata
            .image_size_bytes
            .saturating_sub(image.materialised_bytes());
        self.m.charge_modeled(EventKind::Populate, World::Realm, modeled);
        self.m.activate(realm).map_err(fail(2))?;
        self.log(
            "create_realm",
            Some(2),
            format!("{realm} active with {} granules", image.segments.len()),
        );

        self.m.set_phase(Phase::Provisioning);
        let provider = Arc::new(Mutex::new(Provider::new(
            cfg.seed,
            crate::keys::provider_static_secret(),
            image.refs.clone(),
            cfg.models.clone(),
            1,
        )));
        let mut channel = match cfg.endpoint {
            Endpoint::InProcess => Channel::InProcess(InProcess::new(provider.clone())),
            Endpoint::Tcp => {
                let server = TcpServer::spawn(provider.clone()).map_err(|e| Abort {
                    step: 3,
                    error: PipelineError::Transport(e.to_string()),
                })?;
                let t = TcpTransport::connect(server.addr()).map_err(|e| Abort {
                    step: 3,
                    error: PipelineError::Transport(e.to_string()),
                })?;
                Channel::Tcp(t, server)
            }
        };
        let result = self.provision_and_serve(cfg, &mut channel, &provider);
        let closed = channel.close();
        self.provider_transcript = provider.lock().expect("provider lock").transcript().clone();
        result?;
        closed.map_err(at(7))
    }

    fn provision_and_serve(
        &mut self,
        cfg: &PipelineConfig,
        channel: &mut Channel,
        provider: &Arc<Mutex<Provider>>,
    ) -> Result<(), Abort> {
        self.expect_net().map_err(at(3))?;
        let replies = self.network(channel).map_err(at(3))?;
        if let Some(reason) = Self::refusal(&replies) {
            return Err(Abort {
                step: 3,
                error: PipelineError::Refused(reason),
            });
        }
        self.log("open_channel", Some(3), "channel handshake answered");

        self.expect_net().map_err(at(4))?;
        let replies = self.network(channel).map_err(at(4))?;
        if let Some(reason) = Self::refusal(&replies) {
            self.log("attestation", Some(4), format!("refused: {reason}"));
            let exit = self.enter().map_err(at(4))?;
            if let ExitReason::TerminationRequest(r) = exit {
                self.termination = Some(r);
            }
            return Err(Abort {
                step: 4,
                error: PipelineError::Refused(reason),
            });
        }
        self.log("attestation", Some(4), "report accepted");
        let sealed = replies.iter().map(|m| m.to_frame().len()).sum::<usize>();
        self.log(
            "model_delivery",
            Some(5),
            format!("sealed package delivered ({sealed} bytes)"),
        );

        match self.enter().map_err(at(6))? {
            ExitReason::HostCall(p) if p == "ready" => self.log("ready", Some(6), "realm announced readiness"),
            ExitReason::TerminationRequest(r) => {
                self.termination = Some(r.clone());
                return Err(Abort {
                    step: 5,
                    error: PipelineError::UnexpectedExit(ExitReason::TerminationRequest(r)),
                });
            }
            other => {
                return Err(Abort {
                    step: 6,
                    error: PipelineError::UnexpectedExit(other),
                })
            }
        }

        self.m.set_phase(Phase::Inference);
        let mut exchange = Exchange::new(self.region().exchange.clone());
        for (i, x) in cfg.inputs.iter().enumerate() {
            if cfg.update_after == Some(i) {
                self.update(channel, provider).map_err(at(8))?;
            }
            exchange.put_input(&mut self.m, x).map_err(fail(7))?;
            let exit = self.enter().map_err(at(7))?;
            for (id, class) in exchange.take_outputs(&mut self.m).map_err(fail(7))? {
                self.outputs.push((id, class));
                self.log("inference", Some(7), format!("request {id} -> class {class}"));
            }
            if cfg.adversarial_reads {
                self.snoop();
            }
            match exit {
                ExitReason::Yield => {}
                ExitReason::TerminationRequest(r) => {
                    self.termination = Some(r);
                    break;
                }
                other => {
                    return Err(Abort {
                        step: 7,
                        error: PipelineError::UnexpectedExit(other),
                    })
                }
            }
        }
        if cfg.update_after == Some(cfg.inputs.len()) && self.termination.is_none() {
            self.update(channel, provider).map_err(at(8))?;
        }
        Ok(())
    }

    fn update(&mut self, channel: &mut Channel, provider: &Arc<Mutex<Provider>>) -> Result<(), PipelineError> {
        let phase = self.m.ledger().phase();
        self.m.set_phase(Phase::Provisioning);
        provider.lock().expect("provider lock").publish_next();
        let inbox = self.region().inbox;
        self.m.host_write(inbox, 0, &[INBOX_UPDATE_CHECK, 0])?;
        self.expect_net()?;
        self.network(channel)?;
        let outcome = match self.enter()? {
            ExitReason::HostCall(p) if p == "net" => {
                self.network(channel)?;
                self.enter()?
            }
            other => other,
        };
        match outcome {
            ExitReason::HostCall(p) => self.log("update", Some(8), p),
            other => return Err(PipelineError::UnexpectedExit(other)),
        }
        self.m.set_phase(phase);
        Ok(())
    }

    /// Destroy the realm if it exists and return every delegated granule to
    /// the normal world.
    fn reclaim(&mut self) {
        self.m.set_phase(Phase::Termination);
        let reason = self
            .termination
            .clone()
            .map_or_else(|| "end of batch".to_string(), |r| format!("requested: {r}"));
        if let Some(realm) = self.realm {
            if let Some(d) = self.m.realm(realm) {
                if d.state != crate::rmm::RealmState::Destroyed {
                    let _ = self.m.destroy(realm);
                }
            }
        }
        let mut reclaimed = 0;
        for g in std::mem::take(&mut self.delegated) {
            if self.m.undelegate(g).is_ok() {
                reclaimed += 1;
            }
        }
        self.log(
            "terminate",
            None,
            format!("{reason}; destroyed and reclaimed {reclaimed} granules"),
        );
    }
}

/// Run the full realm pipeline.
pub fn run_pipeline(cfg: &PipelineConfig) -> PipelineRun {
    let mut d = Driver::new(cfg);
    let before = d.m.granules().count_in(GranuleState::NormalWorld);
    let abort = d.realm_pipeline(cfg).err();
    d.reclaim();
    let after = d.m.granules().count_in(GranuleState::NormalWorld);
    PipelineRun {
        transcript: d.transcript,
        outputs: d.outputs,
        termination: d.termination,
        abort,
        realm: d.realm,
        normal_world_before: before,
        normal_world_after: after,
        provider_transcript: d.provider_transcript,
        snoop_attempts: d.snoop_attempts,
        snoop_denied: d.snoop_denied,
        machine: d.m,
    }
}

/// Result of the ordinary-VM comparison run.
#[derive(Debug)]
pub struct NormalRun {
    pub outputs: Vec<(u64, u32)>,
    pub machine: Machine,
}

/// Serve the same batch from an ordinary normal-world VM with the model
/// preloaded: no realm, no attestation, no provider session.
pub fn run_normal_vm(cfg: &PipelineConfig) -> Result<NormalRun, PipelineError> {
    let mut d = Driver::new(cfg);
    d.reserve_shared(cfg.exchange_slots, 0)?;
    let shared = d.region().clone();
    let model = cfg
        .models
        .first()
        .cloned()
        .ok_or_else(|| PipelineError::Setup("no model to preload".into()))?;
    d.m.set_phase(Phase::Boot);
    let mut vm = d.m.vm_boot(model, shared.clone())?;

    d.m.set_phase(Phase::Provisioning);
    match d.m.vm_enter(&mut vm) {
        ExitReason::HostCall(p) if p == "ready" => {}
        other => return Err(PipelineError::UnexpectedExit(other)),
    }

    d.m.set_phase(Phase::Inference);
    let mut exchange = Exchange::new(shared.exchange);
    let mut outputs = Vec::new();
    for x in &cfg.inputs {
        exchange.put_input(&mut d.m, x)?;
        let exit = d.m.vm_enter(&mut vm);
        outputs.extend(exchange.take_outputs(&mut d.m)?);
        match exit {
            ExitReason::Yield => {}
            ExitReason::TerminationRequest(_) => break,
            other => return Err(PipelineError::UnexpectedExit(other)),
        }
    }

    d.m.set_phase(Phase::Termination);
    d.m.vm_destroy(&mut vm);
    Ok(NormalRun { outputs, machine: d.m })
}
