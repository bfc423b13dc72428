// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! The program that runs inside a realm.
//!
//! [`RealmRuntime`] is a step-function state machine. The RMM calls
//! [`RealmRuntime::step`] on every REC entry; the runtime does its work
//! through a [`RuntimeEnv`] and then yields, optionally with a host call.
//!
//! Host calls understood by the orchestrator:
//!
//! * `net`: the outbox holds frames for the provider; deliver them and put
//!   the replies in the inbox.
//! * `ready`: a model is loaded and inference requests are served.
//! * `updated`, `up-to-date`, `update-refused:<reason>`: outcome of an update
//!   check.
//! * `terminate:<reason>`: the realm asks to be torn down.
//!
//! Shared normal-world pages, all host-chosen and unmeasured:
//!
//! ```text
//! inbox   = kind u8 (0 empty, 1 provider frames, 2 update check) | count u8 | frames
//! outbox  = count u8 | frames
//! mailbox = len u16 LE | host-call payload      (written by the RMM)
//! ```
//!
//! The entry page begins with a manifest: the magic `RSIMRT01` followed by
//! the pinned provider channel key.

pub mod exchange;
pub mod model;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::granule::GranuleId;
use crate::provider::channel::{self, ChannelKeys};
use crate::provider::protocol::{split_frame, Message};
use crate::seed::SimRng;
use crate::{Digest, GRANULE_SIZE};
use exchange::{scan, Record, RecordType};
pub use model::{
    enforce_policy, InferError, InferenceEngine, ModelError, ModelPackage, Policy, PolicyDecision, TerminationReason,
};

pub const MANIFEST_MAGIC: &[u8; 8] = b"RSIMRT01";
pub const MANIFEST_LEN: usize = 40;
pub const MAX_HOST_CALL: usize = 256;

pub const INBOX_EMPTY: u8 = 0;
pub const INBOX_FRAMES: u8 = 1;
pub const INBOX_UPDATE_CHECK: u8 = 2;

/// Normal-world pages a realm shares with its host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedRegion {
    pub mailbox: GranuleId,
    pub inbox: GranuleId,
    pub outbox: GranuleId,
    pub exchange: Vec<GranuleId>,
}

impl SharedRegion {
    pub fn granules(&self) -> impl Iterator<Item = GranuleId> + '_ {
        [self.mailbox, self.inbox, self.outbox]
            .into_iter()
            .chain(self.exchange.iter().copied())
    }
}

/// Build a manifest page prefix.
pub fn manifest(provider_key: &[u8; 32]) -> [u8; MANIFEST_LEN] {
    let mut out = [0u8; MANIFEST_LEN];
    out[..8].copy_from_slice(MANIFEST_MAGIC);
    out[8..].copy_from_slice(provider_key);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct EnvError(pub String);

/// Services the runtime can use. Implemented by the RMM for realms and by
/// the host for ordinary normal-world VMs.
pub trait RuntimeEnv {
    fn now(&self) -> u64;
    fn shared(&self) -> Option<SharedRegion>;
    fn read(&mut self, granule: GranuleId, offset: usize, len: usize) -> Result<Vec<u8>, EnvError>;
    fn write(&mut self, granule: GranuleId, offset: usize, data: &[u8]) -> Result<(), EnvError>;
    /// Read from the runtime's own address space.
    fn read_own(&mut self, addr: u64, len: usize) -> Result<Vec<u8>, EnvError>;
    fn entry_addr(&self) -> u64;
    /// Encoded attestation report bound to `challenge`.
    fn attestation_token(&mut self, challenge: &[u8; 64]) -> Result<Vec<u8>, EnvError>;
    fn measurement_extend(&mut self, index: usize, digest: &Digest) -> Result<(), EnvError>;
    fn record_inference(&mut self);
}

/// How a step ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepExit {
    HostCall(Vec<u8>),
    Yield,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Stage {
    Start,
    AnnounceReady,
    AwaitServerHello,
    AwaitPackage,
    Serving,
    AwaitUpdateChallenge,
    AwaitUpdate,
    Terminated(String),
}

/// Counters useful when debugging a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub malformed_records: u64,
    pub served: u64,
}

pub struct RealmRuntime {
    stage: Stage,
    rng: SimRng,
    channel: Option<ChannelKeys>,
    engine: InferenceEngine,
    diagnostics: Diagnostics,
}

impl std::fmt::Debug for RealmRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealmRuntime")
            .field("stage", &self.stage)
            .field("diagnostics", &self.diagnostics)
            .finish_non_exhaustive()
    }
}

fn terminate(reason: &str) -> StepExit {
    StepExit::HostCall(format!("terminate:{reason}").into_bytes())
}

impl RealmRuntime {
    /// A runtime that provisions itself from the provider.
    pub fn new(entropy: [u8; 32]) -> Self {
        Self {
            stage: Stage::Start,
            rng: SimRng::from_seed(entropy),
            channel: None,
            engine: InferenceEngine::new(),
            diagnostics: Diagnostics::default(),
        }
    }

    /// A runtime whose model is loaded out of band, as in an ordinary VM.
    pub fn preloaded(package: ModelPackage) -> Result<Self, ModelError> {
        let mut rt = Self::new([0; 32]);
        rt.engine.install(package)?;
        rt.stage = Stage::AnnounceReady;
        Ok(rt)
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn model(&self) -> Option<&ModelPackage> {
        self.engine.model()
    }

    pub fn inference_count(&self) -> u64 {
        self.engine.inference_count()
    }

    pub fn is_serving(&self) -> bool {
        self.stage == Stage::Serving
    }

    pub fn termination_reason(&self) -> Option<&str> {
        match &self.stage {
            Stage::Terminated(r) => Some(r),
            _ => None,
        }
    }

    /// Run until the next yield.
    pub fn step(&mut self, env: &mut impl RuntimeEnv) -> StepExit {
        match self.try_step(env) {
            Ok(exit) => exit,
            Err(e) => self.halt(&format!("fault: {e}")),
        }
    }

    fn halt(&mut self, reason: &str) -> StepExit {
        self.stage = Stage::Terminated(reason.to_string());
        terminate(reason)
    }

    fn try_step(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        match self.stage.clone() {
            Stage::Start => self.start(env),
            Stage::AnnounceReady => {
                self.stage = Stage::Serving;
                Ok(StepExit::HostCall(b"ready".to_vec()))
            }
            Stage::AwaitServerHello => self.on_server_hello(env),
            Stage::AwaitPackage => self.on_package(env),
            Stage::Serving => self.serve(env),
            Stage::AwaitUpdateChallenge => self.on_update_challenge(env),
            Stage::AwaitUpdate => self.on_update(env),
            Stage::Terminated(reason) => Ok(terminate(&reason)),
        }
    }

    fn start(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        let m = env.read_own(env.entry_addr(), MANIFEST_LEN)?;
        if &m[..8] != MANIFEST_MAGIC {
            return Ok(self.halt("bad manifest"));
        }
        let pinned: [u8; 32] = m[8..].try_into().unwrap();
        let (ephemeral, keys) = channel::initiate(&mut self.rng, &pinned);
        self.channel = Some(keys);
        self.send(env, &[Message::Hello { key: ephemeral }])?;
        self.stage = Stage::AwaitServerHello;
        Ok(StepExit::HostCall(b"net".to_vec()))
    }

    fn on_server_hello(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        let msgs = match self.receive(env)? {
            Some(m) => m,
            None => return Ok(StepExit::Yield),
        };
        let keys = self.channel.as_ref().expect("channel initiated in Start");
        match msgs.as_slice() {
            [Message::Hello { key }, Message::Challenge { nonce }] => {
                if keys.check_confirmation(key).is_err() {
                    return Ok(self.halt("provider authentication failed"));
                }
                self.send_report(env, nonce)?;
                self.stage = Stage::AwaitPackage;
                Ok(StepExit::HostCall(b"net".to_vec()))
            }
            [Message::Refused { reason }] => Ok(self.halt(&format!("refused: {reason}"))),
            _ => Ok(self.halt("protocol")),
        }
    }

    fn send_report(&mut self, env: &mut impl RuntimeEnv, nonce: &[u8; 64]) -> Result<(), EnvError> {
        let report = env.attestation_token(nonce)?;
        self.send(env, &[Message::Report { report }])
    }

    fn open_package(&mut self, code: u64, sealed: &[u8]) -> Option<ModelPackage> {
        let keys = self.channel.as_mut()?;
        let plain = keys.open(&[code as u8], sealed).ok()?;
        ModelPackage::decode(&plain).ok()
    }

    fn load(&mut self, env: &mut impl RuntimeEnv, package: ModelPackage) -> Result<bool, EnvError> {
        let digest = package.digest;
        if self.engine.install(package).is_err() {
            return Ok(false);
        }
        env.measurement_extend(0, &digest)?;
        Ok(true)
    }

    fn on_package(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        let msgs = match self.receive(env)? {
            Some(m) => m,
            None => return Ok(StepExit::Yield),
        };
        match msgs.as_slice() {
            [m @ Message::Package { sealed }] => {
                let Some(pkg) = self.open_package(m.type_code(), sealed) else {
                    return Ok(self.halt("package rejected"));
                };
                if !self.load(env, pkg)? {
                    return Ok(self.halt("package integrity"));
                }
                self.stage = Stage::Serving;
                Ok(StepExit::HostCall(b"ready".to_vec()))
            }
            [Message::Refused { reason }] => Ok(self.halt(&format!("refused: {reason}"))),
            _ => Ok(self.halt("protocol")),
        }
    }

    fn serve(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        if let Some(region) = env.shared() {
            let inbox = env.read(region.inbox, 0, 1)?;
            if inbox[0] == INBOX_UPDATE_CHECK {
                env.write(region.inbox, 0, &[INBOX_EMPTY, 0])?;
                let version = self.engine.model().map_or(0, |m| m.version);
                self.send(
                    env,
                    &[Message::UpdateQuery {
                        current_version: version,
                    }],
                )?;
                self.stage = Stage::AwaitUpdateChallenge;
                return Ok(StepExit::HostCall(b"net".to_vec()));
            }
        }
        let now = env.now();
        if let Ok(PolicyDecision::RequestTermination(why)) = self.engine.enforce_policy(now) {
            return Ok(self.halt(why.as_str()));
        }
        match self.poll_exchange(env)? {
            Some(why) => Ok(self.halt(why.as_str())),
            None => Ok(StepExit::Yield),
        }
    }

    /// Serve every pending input in request-id order. Returns the policy
    /// verdict if it stopped serving.
    fn poll_exchange(&mut self, env: &mut impl RuntimeEnv) -> Result<Option<TerminationReason>, EnvError> {
        let Some(region) = env.shared() else {
            return Ok(None);
        };
        let features = self.engine.model().map_or(0, |m| m.features as usize);
        let mut pending = Vec::new();
        for &slot in &region.exchange {
            let page = env.read(slot, 0, GRANULE_SIZE)?;
            let s = scan(&page);
            self.diagnostics.malformed_records += s.malformed as u64;
            for (offset, rec) in s.records {
                if rec.kind == RecordType::Input && !rec.consumed {
                    pending.push((rec.request_id, slot, offset, rec, s.used));
                }
            }
        }
        pending.sort_by_key(|p| p.0);
        let now = env.now();
        for (id, slot, offset, rec, used) in pending {
            let Some(x) = rec.features(features) else {
                self.diagnostics.malformed_records += 1;
                env.write(slot, offset + rec.flag_offset(), &[1])?;
                continue;
            };
            let class = match self.engine.infer(&x, now) {
                Ok(c) => c,
                Err(InferError::PolicyExhausted(why)) => return Ok(Some(why)),
                Err(_) => {
                    self.diagnostics.malformed_records += 1;
                    env.write(slot, offset + rec.flag_offset(), &[1])?;
                    continue;
                }
            };
            env.record_inference();
            let out = Record::output(id, class).encode();
            env.write(slot, offset + rec.flag_offset(), &[1])?;
            if used + out.len() <= GRANULE_SIZE {
                env.write(slot, used, &out)?;
            }
            self.diagnostics.served += 1;
        }
        Ok(None)
    }

    fn on_update_challenge(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        let msgs = match self.receive(env)? {
            Some(m) => m,
            None => return Ok(StepExit::Yield),
        };
        match msgs.as_slice() {
            [Message::Challenge { nonce }] => {
                self.send_report(env, nonce)?;
                self.stage = Stage::AwaitUpdate;
                Ok(StepExit::HostCall(b"net".to_vec()))
            }
            [Message::Refused { reason }] => {
                self.stage = Stage::Serving;
                Ok(StepExit::HostCall(format!("update-refused:{reason}").into_bytes()))
            }
            _ => Ok(self.halt("protocol")),
        }
    }

    fn on_update(&mut self, env: &mut impl RuntimeEnv) -> Result<StepExit, EnvError> {
        let msgs = match self.receive(env)? {
            Some(m) => m,
            None => return Ok(StepExit::Yield),
        };
        self.stage = Stage::Serving;
        match msgs.as_slice() {
            [m @ Message::Update { sealed }] => {
                let Some(pkg) = self.open_package(m.type_code(), sealed) else {
                    return Ok(self.halt("update rejected"));
                };
                if !self.load(env, pkg)? {
                    return Ok(StepExit::HostCall(b"update-refused:integrity".to_vec()));
                }
                Ok(StepExit::HostCall(b"updated".to_vec()))
            }
            [Message::UpToDate] => Ok(StepExit::HostCall(b"up-to-date".to_vec())),
            [Message::Refused { reason }] => Ok(StepExit::HostCall(format!("update-refused:{reason}").into_bytes())),
            _ => Ok(self.halt("protocol")),
        }
    }

    fn send(&mut self, env: &mut impl RuntimeEnv, msgs: &[Message]) -> Result<(), EnvError> {
        let region = env.shared().ok_or_else(|| EnvError("no shared region".into()))?;
        let mut page = vec![msgs.len() as u8];
        for m in msgs {
            page.extend(m.to_frame());
        }
        if page.len() > GRANULE_SIZE {
            return Err(EnvError("outbox overflow".into()));
        }
        env.write(region.outbox, 0, &page)
    }

    /// Take the provider frames from the inbox, if any arrived.
    fn receive(&mut self, env: &mut impl RuntimeEnv) -> Result<Option<Vec<Message>>, EnvError> {
        let region = env.shared().ok_or_else(|| EnvError("no shared region".into()))?;
        let page = env.read(region.inbox, 0, GRANULE_SIZE)?;
        if page[0] != INBOX_FRAMES {
            return Ok(None);
        }
        env.write(region.inbox, 0, &[INBOX_EMPTY, 0])?;
        let count = page[1] as usize;
        let mut pos = 2;
        let mut msgs = Vec::with_capacity(count);
        for _ in 0..count {
            let parsed = split_frame(&page[pos..])
                .and_then(|(_, used)| Message::from_frame(&page[pos..pos + used]).map(|m| (m, used)));
            match parsed {
                Ok((m, used)) => {
                    msgs.push(m);
                    pos += used;
                }
                Err(_) => {
                    self.diagnostics.malformed_records += 1;
                    return Ok(Some(Vec::new()));
                }
            }
        }
        Ok(Some(msgs))
    }
}

/// Encode provider frames for the inbox page.
pub fn inbox_page(frames: &[Vec<u8>]) -> Result<Vec<u8>, EnvError> {
    let mut page = vec![INBOX_FRAMES, frames.len() as u8];
    for f in frames {
        page.extend_from_slice(f);
    }
    if page.len() > GRANULE_SIZE || frames.len() > u8::MAX as usize {
        return Err(EnvError("inbox overflow".into()));
    }
    Ok(page)
}

/// Split an outbox page into frames.
pub fn outbox_frames(page: &[u8]) -> Result<Vec<Vec<u8>>, EnvError> {
    let count = *page.first().unwrap_or(&0) as usize;
    let mut pos = 1;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (_, used) = split_frame(&page[pos..]).map_err(|e| EnvError(e.to_string()))?;
        out.push(page[pos..pos + used].to_vec());
        pos += used;
    }
    Ok(out)
}
