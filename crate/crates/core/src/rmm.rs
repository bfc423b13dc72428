// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! The Realm Management Monitor and the machine around it.
//!
//! [`Machine`] owns physical memory, the realm descriptors, the simulated
//! clock, and the cost ledger. The host drives it with [`RmiCommand`]s;
//! realm runtimes reach it through [`RsiCall`]s issued from inside
//! [`Machine::rmi`] with [`RmiCommand::RecEnter`]. Every command executes
//! atomically and advances the clock by one tick.
//!
//! Switch accounting: a REC entry/exit round trip costs four world switches
//! through the Secure Monitor on top of the two VM transitions an ordinary
//! VM entry costs. Realm create, activate and destroy each cost one round
//! trip to the RMM (two switches). Delegation and population are charged
//! only through their own events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ed25519_dalek::SigningKey;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::{
    assemble_report, extend, extend_digest, initial_rim, AttestationReport, Challenge, EntryPoint, MeasurementRecord,
    PlatformState, REM_SLOTS, ZERO_DIGEST,
};
use crate::cost::{CostLedger, CostProfile, EventKind, Phase};
use crate::granule::{GranuleError, GranuleId, GranuleSpace, GranuleState, Layout, World};
use crate::runtime::{
    EnvError, ModelError, ModelPackage, RealmRuntime, RuntimeEnv, SharedRegion, StepExit, MAX_HOST_CALL,
};
use crate::seed::derive_indexed;
use crate::{Digest, GRANULE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealmId(pub u32);

impl fmt::Display for RealmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "realm-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealmState {
    New,
    Active,
    Destroyed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealmDescriptor {
    pub realm_id: RealmId,
    pub state: RealmState,
    #[serde(with = "crate::hexfmt::array")]
    pub rim: Digest,
    #[serde(with = "hex_rem")]
    pub rem: [Digest; REM_SLOTS],
    pub granules: BTreeSet<GranuleId>,
    /// Guest page address -> granule.
    pub mappings: BTreeMap<u64, GranuleId>,
    pub entry_point: EntryPoint,
    #[serde(with = "crate::hexfmt::array")]
    pub personalization: [u8; 64],
    pub inference_count: u64,
    pub created_at: u64,
    pub shared: Option<SharedRegion>,
}

mod hex_rem {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Digest; REM_SLOTS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Digest; REM_SLOTS], D::Error> {
        use serde::de::Error as _;
        let v: Vec<String> = Vec::deserialize(d)?;
        let parsed = v
            .iter()
            .map(|s| crate::hexfmt::decode_array::<32>(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        parsed
            .try_into()
            .map_err(|_| D::Error::custom("expected four rem values"))
    }
}

impl RealmDescriptor {
    pub fn new(realm_id: RealmId, personalization: [u8; 64], entry_point: EntryPoint, created_at: u64) -> Self {
        Self {
            realm_id,
            state: RealmState::New,
            rim: initial_rim(&personalization, &entry_point),
            rem: [ZERO_DIGEST; REM_SLOTS],
            granules: BTreeSet::new(),
            mappings: BTreeMap::new(),
            entry_point,
            personalization,
            inference_count: 0,
            created_at,
            shared: None,
        }
    }
}

/// Parameters of `realm_create`. Only the personalization value and entry
/// point are measured; the shared region is host-chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealmParams {
    #[serde(with = "crate::hexfmt::array")]
    pub personalization: [u8; 64],
    pub entry_point: EntryPoint,
    #[serde(default)]
    pub shared: Option<SharedRegion>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RmiCommand {
    GranuleDelegate {
        granule: GranuleId,
    },
    GranuleUndelegate {
        granule: GranuleId,
    },
    RealmCreate(RealmParams),
    DataCreate {
        realm: RealmId,
        granule: GranuleId,
        content: Vec<u8>,
        target_addr: u64,
    },
    RealmActivate {
        realm: RealmId,
    },
    RecEnter {
        realm: RealmId,
    },
    RealmDestroy {
        realm: RealmId,
    },
}

impl RmiCommand {
    pub fn name(&self) -> &'static str {
        match self {
            RmiCommand::GranuleDelegate { .. } => "granule_delegate",
            RmiCommand::GranuleUndelegate { .. } => "granule_undelegate",
            RmiCommand::RealmCreate(_) => "realm_create",
            RmiCommand::DataCreate { .. } => "data_create",
            RmiCommand::RealmActivate { .. } => "realm_activate",
            RmiCommand::RecEnter { .. } => "rec_enter",
            RmiCommand::RealmDestroy { .. } => "realm_destroy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RsiCall {
    AttestationToken { challenge: Challenge },
    MeasurementExtend { index: usize, digest: Digest },
    HostCall { payload: Vec<u8> },
}

impl RsiCall {
    pub fn name(&self) -> &'static str {
        match self {
            RsiCall::AttestationToken { .. } => "attestation_token",
            RsiCall::MeasurementExtend { .. } => "measurement_extend",
            RsiCall::HostCall { .. } => "host_call",
        }
    }
}

/// Why a REC entry returned to the host.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    HostCall(String),
    Yield,
    TerminationRequest(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RmiOutcome {
    Done,
    Granule(GranuleState),
    Realm(RealmId),
    Exit(ExitReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RsiOutcome {
    Done,
    Report(Box<AttestationReport>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RmmError {
    #[error("{interface} command issued from the {caller:?} world")]
    Interface { caller: World, interface: &'static str },
    #[error("unknown realm {0}")]
    UnknownRealm(RealmId),
    #[error("{op} not allowed while {realm} is {state:?}")]
    Lifecycle {
        realm: RealmId,
        state: RealmState,
        op: &'static str,
    },
    #[error("granule {granule} is {state:?}, expected it to be delegated")]
    Ownership { granule: GranuleId, state: GranuleState },
    #[error(transparent)]
    Granule(#[from] GranuleError),
    #[error("out of bounds: {0}")]
    Bounds(String),
}

#[derive(Clone, Debug)]
pub struct MachineConfig {
    pub layout: Layout,
    pub profile: CostProfile,
    pub platform: PlatformState,
    pub seed: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            layout: Layout::default(),
            profile: CostProfile::zero(),
            platform: PlatformState::default(),
            seed: 0,
        }
    }
}

/// A model runtime in an ordinary normal-world VM: no RMM, no attestation.
#[derive(Debug)]
pub struct NormalVm {
    runtime: RealmRuntime,
    shared: SharedRegion,
    running: bool,
}

impl NormalVm {
    pub fn runtime(&self) -> &RealmRuntime {
        &self.runtime
    }

    pub fn shared(&self) -> &SharedRegion {
        &self.shared
    }

    pub fn is_running(&self) -> bool {
        self.running
    }
}

#[derive(Debug)]
pub struct Machine {
    granules: GranuleSpace,
    realms: BTreeMap<RealmId, RealmDescriptor>,
    runtimes: BTreeMap<RealmId, RealmRuntime>,
    next_realm: u32,
    clock: u64,
    ledger: CostLedger,
    platform: PlatformState,
    seed: u64,
}

const PLATFORM_KEY_GRANULE: GranuleId = 0;

impl Machine {
    pub fn new(config: MachineConfig) -> Self {
        let mut granules = GranuleSpace::new(config.layout);
        if config.layout.root > 0 {
            let mut setup = CostLedger::new(CostProfile::zero());
            granules
                .write(
                    &mut setup,
                    World::Root,
                    PLATFORM_KEY_GRANULE,
                    0,
                    &crate::keys::platform_key_seed(),
                )
                .expect("root granule 0 exists");
        }
        Self {
            granules,
            realms: BTreeMap::new(),
            runtimes: BTreeMap::new(),
            next_realm: 1,
            clock: 0,
            ledger: CostLedger::new(config.profile),
            platform: config.platform,
            seed: config.seed,
        }
    }

    pub fn granules(&self) -> &GranuleSpace {
        &self.granules
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> CostLedger {
        self.ledger
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.ledger.set_phase(phase);
    }

    pub fn realm(&self, id: RealmId) -> Option<&RealmDescriptor> {
        self.realms.get(&id)
    }

    pub fn realms(&self) -> impl Iterator<Item = &RealmDescriptor> {
        self.realms.values()
    }

    pub fn runtime(&self, id: RealmId) -> Option<&RealmRuntime> {
        self.runtimes.get(&id)
    }

    /// Charge a modeled event that has no simulated counterpart, such as the
    /// part of a large image that is not materialised page by page.
    pub fn charge_modeled(&mut self, kind: EventKind, actor: World, units: u64) {
        self.ledger.charge_units(kind, actor, units);
    }

    /// Read memory as the normal-world host.
    pub fn host_read(&mut self, id: GranuleId, offset: usize, len: usize) -> Result<Vec<u8>, GranuleError> {
        self.granules.read(&mut self.ledger, World::Normal, id, offset, len)
    }

    /// Write memory as the normal-world host.
    pub fn host_write(&mut self, id: GranuleId, offset: usize, data: &[u8]) -> Result<(), GranuleError> {
        self.granules.write(&mut self.ledger, World::Normal, id, offset, data)
    }

    fn tick(&mut self) {
        self.clock += 1;
        self.ledger.set_tick(self.clock);
        self.ledger.charge(EventKind::Idle, World::Root);
    }

    fn switches(&mut self, n: usize) {
        for _ in 0..n {
            self.ledger.charge(EventKind::WorldSwitch, World::Root);
        }
    }

    fn descriptor(&self, id: RealmId) -> Result<&RealmDescriptor, RmmError> {
        self.realms.get(&id).ok_or(RmmError::UnknownRealm(id))
    }

    fn descriptor_in(
        &mut self,
        id: RealmId,
        allowed: &[RealmState],
        op: &'static str,
    ) -> Result<&mut RealmDescriptor, RmmError> {
        let d = self.realms.get_mut(&id).ok_or(RmmError::UnknownRealm(id))?;
        if !allowed.contains(&d.state) {
            return Err(RmmError::Lifecycle {
                realm: id,
                state: d.state,
                op,
            });
        }
        Ok(d)
    }

    /// Execute a host command. Only the normal world may issue RMI commands.
    pub fn rmi(&mut self, caller: World, command: RmiCommand) -> Result<RmiOutcome, RmmError> {
        if caller != World::Normal {
            self.tick();
            return Err(RmmError::Interface {
                caller,
                interface: "RMI",
            });
        }
        match command {
            RmiCommand::GranuleDelegate { granule } => self.delegate(granule).map(RmiOutcome::Granule),
            RmiCommand::GranuleUndelegate { granule } => self.undelegate(granule).map(RmiOutcome::Granule),
            RmiCommand::RealmCreate(params) => self.realm_create(params).map(RmiOutcome::Realm),
            RmiCommand::DataCreate {
                realm,
                granule,
                content,
                target_addr,
            } => self
                .data_create(realm, granule, &content, target_addr)
                .map(|_| RmiOutcome::Done),
            RmiCommand::RealmActivate { realm } => self.activate(realm).map(|_| RmiOutcome::Done),
            RmiCommand::RecEnter { realm } => self.rec_enter(realm).map(RmiOutcome::Exit),
            RmiCommand::RealmDestroy { realm } => self.destroy(realm).map(|_| RmiOutcome::Done),
        }
    }

    /// Execute a realm service call. Only the realm world may issue RSI calls.
    pub fn rsi(&mut self, caller: World, realm: RealmId, call: RsiCall) -> Result<RsiOutcome, RmmError> {
        if caller != World::Realm {
            self.tick();
            return Err(RmmError::Interface {
                caller,
                interface: "RSI",
            });
        }
        match call {
            RsiCall::AttestationToken { challenge } => self
                .rsi_attestation_token(realm, &challenge)
                .map(|r| RsiOutcome::Report(Box::new(r))),
            RsiCall::MeasurementExtend { index, digest } => self
                .rsi_measurement_extend(realm, index, &digest)
                .map(|_| RsiOutcome::Done),
            RsiCall::HostCall { payload } => self.rsi_host_call(realm, &payload).map(|_| RsiOutcome::Done),
        }
    }

    pub fn delegate(&mut self, granule: GranuleId) -> Result<GranuleState, RmmError> {
        self.tick();
        Ok(self.granules.delegate(granule)?)
    }

    pub fn undelegate(&mut self, granule: GranuleId) -> Result<GranuleState, RmmError> {
        self.tick();
        Ok(self.granules.undelegate(granule)?)
    }

    pub fn realm_create(&mut self, params: RealmParams) -> Result<RealmId, RmmError> {
        self.tick();
        if let Some(shared) = &params.shared {
            for g in shared.granules() {
                let state = self.granules.state(g)?;
                if state != GranuleState::NormalWorld {
                    return Err(RmmError::Bounds(format!(
                        "shared granule {g} is {state:?}, not normal-world memory"
                    )));
                }
            }
        }
        let id = RealmId(self.next_realm);
        self.next_realm += 1;
        let mut d = RealmDescriptor::new(id, params.personalization, params.entry_point, self.clock);
        d.shared = params.shared;
        self.realms.insert(id, d);
        let mut entropy = [0u8; 32];
        derive_indexed(self.seed, "realm-entropy", id.0 as u64).fill_bytes(&mut entropy);
        self.runtimes.insert(id, RealmRuntime::new(entropy));
        self.ledger.charge(EventKind::BootBaseRealm, World::Realm);
        self.switches(2);
        Ok(id)
    }

    pub fn data_create(
        &mut self,
        realm: RealmId,
        granule: GranuleId,
        content: &[u8],
        target_addr: u64,
    ) -> Result<(), RmmError> {
        self.tick();
        let d = self.descriptor_in(realm, &[RealmState::New], "populate after activation")?;
        let content: &[u8; GRANULE_SIZE] = content
            .try_into()
            .map_err(|_| RmmError::Bounds(format!("content is {} bytes", content.len())))?;
        if !target_addr.is_multiple_of(GRANULE_SIZE as u64) || d.mappings.contains_key(&target_addr) {
            return Err(RmmError::Bounds(format!(
                "target address {target_addr:#x} is unaligned or already mapped"
            )));
        }
        let state = self.granules.state(granule)?;
        if state != GranuleState::DelegatedRealm {
            return Err(RmmError::Ownership { granule, state });
        }
        self.granules.claim(granule, realm, content)?;
        let d = self.realms.get_mut(&realm).expect("checked above");
        d.granules.insert(granule);
        d.mappings.insert(target_addr, granule);
        d.rim = extend(&d.rim, &MeasurementRecord::for_content(content, target_addr));
        self.ledger
            .charge_units(EventKind::Populate, World::Realm, GRANULE_SIZE as u64);
        Ok(())
    }

    pub fn activate(&mut self, realm: RealmId) -> Result<(), RmmError> {
        self.tick();
        self.descriptor_in(realm, &[RealmState::New], "activate")?.state = RealmState::Active;
        self.switches(2);
        Ok(())
    }

    pub fn rec_enter(&mut self, realm: RealmId) -> Result<ExitReason, RmmError> {
        self.tick();
        self.descriptor_in(realm, &[RealmState::Active], "rec_enter")?;
        self.ledger.charge(EventKind::VmEnter, World::Normal);
        self.switches(4);
        self.ledger.charge(EventKind::VmEnter, World::Normal);
        let mut runtime = self.runtimes.remove(&realm).expect("active realms have a runtime");
        let exit = runtime.step(&mut RealmEnv { m: self, realm });
        self.runtimes.insert(realm, runtime);
        match exit {
            StepExit::Yield => Ok(ExitReason::Yield),
            StepExit::HostCall(payload) => {
                if let Err(e) = self.rsi_host_call(realm, &payload) {
                    return Ok(ExitReason::TerminationRequest(format!("fault: {e}")));
                }
                Ok(exit_for(&payload))
            }
        }
    }

    pub fn destroy(&mut self, realm: RealmId) -> Result<(), RmmError> {
        self.tick();
        let d = self.descriptor_in(realm, &[RealmState::New, RealmState::Active], "destroy")?;
        d.state = RealmState::Destroyed;
        let owned = std::mem::take(&mut d.granules);
        d.mappings.clear();
        for g in owned {
            self.granules.release(g)?;
        }
        self.runtimes.remove(&realm);
        self.ledger.charge(EventKind::TerminationBaseRealm, World::Realm);
        self.switches(2);
        Ok(())
    }

    fn platform_key(&mut self) -> Result<SigningKey, RmmError> {
        let seed = self
            .granules
            .read(&mut self.ledger, World::Root, PLATFORM_KEY_GRANULE, 0, 32)?;
        Ok(SigningKey::from_bytes(&seed.try_into().expect("32 bytes")))
    }

    pub fn rsi_attestation_token(
        &mut self,
        realm: RealmId,
        challenge: &Challenge,
    ) -> Result<AttestationReport, RmmError> {
        self.tick();
        self.descriptor_in(realm, &[RealmState::Active], "attestation_token")?;
        let key = self.platform_key()?;
        let d = self.descriptor(realm)?;
        Ok(assemble_report(d, challenge, &self.platform, &key).expect("realm is active"))
    }

    pub fn rsi_measurement_extend(&mut self, realm: RealmId, index: usize, digest: &Digest) -> Result<(), RmmError> {
        self.tick();
        let d = self.descriptor_in(realm, &[RealmState::Active], "measurement_extend")?;
        let slot = d
            .rem
            .get_mut(index)
            .ok_or_else(|| RmmError::Bounds(format!("rem index {index}")))?;
        *slot = extend_digest(slot, digest);
        Ok(())
    }

    /// Copy a host-call payload to the realm's mailbox page.
    pub fn rsi_host_call(&mut self, realm: RealmId, payload: &[u8]) -> Result<(), RmmError> {
        self.tick();
        let d = self.descriptor_in(realm, &[RealmState::Active], "host_call")?;
        if payload.len() > MAX_HOST_CALL {
            return Err(RmmError::Bounds(format!(
                "host call payload is {} bytes",
                payload.len()
            )));
        }
        if let Some(mailbox) = d.shared.as_ref().map(|s| s.mailbox) {
            let mut page = (payload.len() as u16).to_le_bytes().to_vec();
            page.extend_from_slice(payload);
            self.granules.write(&mut self.ledger, World::Realm, mailbox, 0, &page)?;
        }
        Ok(())
    }

    /// Start an ordinary VM with a preloaded model.
    pub fn vm_boot(&mut self, package: ModelPackage, shared: SharedRegion) -> Result<NormalVm, ModelError> {
        self.tick();
        self.ledger.charge(EventKind::BootBaseNormal, World::Normal);
        Ok(NormalVm {
            runtime: RealmRuntime::preloaded(package)?,
            shared,
            running: true,
        })
    }

    /// Enter an ordinary VM: one transition in, one out.
    pub fn vm_enter(&mut self, vm: &mut NormalVm) -> ExitReason {
        self.tick();
        self.ledger.charge(EventKind::VmEnter, World::Normal);
        self.ledger.charge(EventKind::VmEnter, World::Normal);
        if !vm.running {
            return ExitReason::TerminationRequest("stopped".into());
        }
        let shared = vm.shared.clone();
        match vm.runtime.step(&mut VmEnv { m: self, shared }) {
            StepExit::Yield => ExitReason::Yield,
            StepExit::HostCall(payload) => exit_for(&payload),
        }
    }

    pub fn vm_destroy(&mut self, vm: &mut NormalVm) {
        self.tick();
        vm.running = false;
        self.ledger.charge(EventKind::TerminationBaseNormal, World::Normal);
    }
}

fn exit_for(payload: &[u8]) -> ExitReason {
    let text = String::from_utf8_lossy(payload).into_owned();
    match text.strip_prefix("terminate") {
        Some(rest) => ExitReason::TerminationRequest(rest.strip_prefix(':').unwrap_or(rest).to_string()),
        None => ExitReason::HostCall(text),
    }
}

/// The services the RMM offers a realm during a REC entry. Memory accesses
/// are limited to normal-world pages and the realm's own pages.
struct RealmEnv<'a> {
    m: &'a mut Machine,
    realm: RealmId,
}

impl RealmEnv<'_> {
    fn check(&self, granule: GranuleId) -> Result<(), EnvError> {
        let state = self.m.granules.state(granule).map_err(|e| EnvError(e.to_string()))?;
        match state {
            GranuleState::NormalWorld => Ok(()),
            GranuleState::RealmOwned(owner) if owner == self.realm => Ok(()),
            other => Err(EnvError(format!(
                "{} may not access granule {granule} ({other:?})",
                self.realm
            ))),
        }
    }
}

fn env_err(e: impl fmt::Display) -> EnvError {
    EnvError(e.to_string())
}

impl RuntimeEnv for RealmEnv<'_> {
    fn now(&self) -> u64 {
        self.m.clock
    }

    fn shared(&self) -> Option<SharedRegion> {
        self.m.realms[&self.realm].shared.clone()
    }

    fn read(&mut self, granule: GranuleId, offset: usize, len: usize) -> Result<Vec<u8>, EnvError> {
        self.check(granule)?;
        self.m
            .granules
            .read(&mut self.m.ledger, World::Realm, granule, offset, len)
            .map_err(env_err)
    }

    fn write(&mut self, granule: GranuleId, offset: usize, data: &[u8]) -> Result<(), EnvError> {
        self.check(granule)?;
        self.m
            .granules
            .write(&mut self.m.ledger, World::Realm, granule, offset, data)
            .map_err(env_err)
    }

    fn read_own(&mut self, addr: u64, len: usize) -> Result<Vec<u8>, EnvError> {
        let page = addr - addr % GRANULE_SIZE as u64;
        let offset = (addr - page) as usize;
        let granule = *self.m.realms[&self.realm]
            .mappings
            .get(&page)
            .ok_or_else(|| EnvError(format!("address {addr:#x} is not mapped")))?;
        self.read(granule, offset, len)
    }

    fn entry_addr(&self) -> u64 {
        let e = self.m.realms[&self.realm].entry_point;
        e.target_addr() + e.offset as u64
    }

    fn attestation_token(&mut self, challenge: &[u8; 64]) -> Result<Vec<u8>, EnvError> {
        self.m
            .rsi_attestation_token(self.realm, challenge)
            .map(|r| r.encode())
            .map_err(env_err)
    }

    fn measurement_extend(&mut self, index: usize, digest: &Digest) -> Result<(), EnvError> {
        self.m
            .rsi_measurement_extend(self.realm, index, digest)
            .map_err(env_err)
    }

    fn record_inference(&mut self) {
        self.m.ledger.charge(EventKind::InferenceCompute, World::Realm);
        if let Some(d) = self.m.realms.get_mut(&self.realm) {
            d.inference_count += 1;
        }
    }
}

/// Services available to an ordinary VM: normal-world memory only.
struct VmEnv<'a> {
    m: &'a mut Machine,
    shared: SharedRegion,
}

impl RuntimeEnv for VmEnv<'_> {
    fn now(&self) -> u64 {
        self.m.clock
    }

    fn shared(&self) -> Option<SharedRegion> {
        Some(self.shared.clone())
    }

    fn read(&mut self, granule: GranuleId, offset: usize, len: usize) -> Result<Vec<u8>, EnvError> {
        self.m
            .granules
            .read(&mut self.m.ledger, World::Normal, granule, offset, len)
            .map_err(env_err)
    }

    fn write(&mut self, granule: GranuleId, offset: usize, data: &[u8]) -> Result<(), EnvError> {
        self.m
            .granules
            .write(&mut self.m.ledger, World::Normal, granule, offset, data)
            .map_err(env_err)
    }

    fn read_own(&mut self, _addr: u64, _len: usize) -> Result<Vec<u8>, EnvError> {
        Err(EnvError("no guest address space".into()))
    }

    fn entry_addr(&self) -> u64 {
        0
    }

    fn attestation_token(&mut self, _challenge: &[u8; 64]) -> Result<Vec<u8>, EnvError> {
        Err(EnvError("attestation is unavailable outside a realm".into()))
    }

    fn measurement_extend(&mut self, _index: usize, _digest: &Digest) -> Result<(), EnvError> {
        Ok(())
    }

    fn record_inference(&mut self) {
        self.m.ledger.charge(EventKind::InferenceCompute, World::Normal);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{digest_chain, expected_rim, sha256, verify_report, ReferenceValues, Verdict};

    const P: [u8; 64] = [0x11; 64];
    const ENTRY: EntryPoint = EntryPoint {
        granule: 0x80000,
        offset: 0,
    };

    fn machine() -> Machine {
        Machine::new(MachineConfig {
            profile: CostProfile::unit(),
            ..MachineConfig::default()
        })
    }

    fn params() -> RealmParams {
        RealmParams {
            personalization: P,
            entry_point: ENTRY,
            shared: None,
        }
    }

    fn page(fill: u8) -> Vec<u8> {
        vec![fill; GRANULE_SIZE]
    }

    /// A realm with `n` populated pages, still New.
    fn populated(m: &mut Machine, n: u64) -> RealmId {
        let r = m.realm_create(params()).unwrap();
        for i in 0..n {
            let g = m.granules.ids_in(GranuleState::NormalWorld)[0];
            m.delegate(g).unwrap();
            m.data_create(r, g, &page(i as u8 + 1), ENTRY.target_addr() + i * 4096)
                .unwrap();
        }
        r
    }

    #[test]
    fn create_measures_the_parameters() {
        let mut m = machine();
        let r = m.realm_create(params()).unwrap();
        let d = m.realm(r).unwrap();
        assert_eq!(d.state, RealmState::New);
        assert_eq!(d.inference_count, 0);
        assert_eq!(
            hex::encode(d.rim),
            "f8aaefb0aa8abdfb7ce14e9329c66e3177dffc8ff2076730b183e7b7ee59c6c4"
        );
        assert_ne!(m.realm_create(params()).unwrap(), r);
    }

    #[test]
    fn populate_follows_the_digest_oracle() {
        let mut m = machine();
        let r = populated(&mut m, 3);
        let pages: Vec<_> = (0..3u64).map(|i| page(i as u8 + 1)).collect();
        let expect = expected_rim(
            &P,
            &ENTRY,
            pages
                .iter()
                .enumerate()
                .map(|(i, p)| (ENTRY.target_addr() + i as u64 * 4096, p.as_slice())),
        );
        assert_eq!(m.realm(r).unwrap().rim, expect);
        assert_eq!(m.realm(r).unwrap().granules.len(), 3);
        assert_eq!(m.ledger.count(EventKind::Populate), 3);
    }

    #[test]
    fn populate_guards() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        let g = m.granules.ids_in(GranuleState::NormalWorld)[0];
        assert!(matches!(
            m.data_create(r, g, &page(1), 0x1000),
            Err(RmmError::Ownership { .. })
        ));
        m.delegate(g).unwrap();
        assert!(matches!(
            m.data_create(r, g, &page(1), 0x1001),
            Err(RmmError::Bounds(_))
        ));
        assert!(matches!(
            m.data_create(r, g, &[0; 10], 0x1000),
            Err(RmmError::Bounds(_))
        ));
        m.activate(r).unwrap();
        assert!(matches!(
            m.data_create(r, g, &page(1), 0x1000),
            Err(RmmError::Lifecycle {
                op: "populate after activation",
                ..
            })
        ));
        assert_eq!(m.granules.state(g).unwrap(), GranuleState::DelegatedRealm);
    }

    #[test]
    fn lifecycle_is_linear() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        assert!(matches!(m.rec_enter(r), Err(RmmError::Lifecycle { .. })));
        m.activate(r).unwrap();
        assert!(matches!(m.activate(r), Err(RmmError::Lifecycle { .. })));
        m.destroy(r).unwrap();
        assert!(matches!(m.destroy(r), Err(RmmError::Lifecycle { .. })));
        assert!(matches!(m.rec_enter(r), Err(RmmError::Lifecycle { .. })));
        assert!(matches!(m.rec_enter(RealmId(99)), Err(RmmError::UnknownRealm(_))));
    }

    #[test]
    fn destroy_releases_and_undelegate_restores() {
        let mut m = machine();
        let before = m.granules.count_in(GranuleState::NormalWorld);
        let r = populated(&mut m, 3);
        m.activate(r).unwrap();
        m.destroy(r).unwrap();
        let released = m.granules.ids_in(GranuleState::DelegatedRealm);
        assert_eq!(released.len(), 3);
        assert!(released.iter().all(|&g| m.granules.get(g).unwrap().is_zeroed()));
        assert!(m.realm(r).unwrap().granules.is_empty());
        for g in released {
            m.undelegate(g).unwrap();
        }
        assert_eq!(m.granules.count_in(GranuleState::NormalWorld), before);
        assert_eq!(m.realm(r).unwrap().state, RealmState::Destroyed);
    }

    #[test]
    fn wrong_world_is_an_interface_error() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        m.activate(r).unwrap();
        let call = RsiCall::AttestationToken { challenge: [1; 64] };
        assert!(matches!(
            m.rsi(World::Normal, r, call.clone()),
            Err(RmmError::Interface { .. })
        ));
        assert!(matches!(
            m.rmi(World::Realm, RmiCommand::RealmActivate { realm: r }),
            Err(RmmError::Interface { .. })
        ));
        assert!(m.rsi(World::Realm, r, call).is_ok());
    }

    #[test]
    fn tokens_echo_the_challenge() {
        let mut m = machine();
        let r = populated(&mut m, 2);
        m.activate(r).unwrap();
        let rim = m.realm(r).unwrap().rim;
        let a = m.rsi_attestation_token(r, &[1; 64]).unwrap();
        let b = m.rsi_attestation_token(r, &[2; 64]).unwrap();
        assert_eq!(a.realm_token.challenge, [1; 64]);
        assert_eq!(a.realm_token.rim, b.realm_token.rim);
        assert_eq!(a.realm_token.rem, b.realm_token.rem);
        assert_eq!(a.platform_token.measurements, b.platform_token.measurements);
        assert_ne!(a.platform_token.signature, b.platform_token.signature);
        let refs = ReferenceValues::for_fixture_platform(rim);
        assert_eq!(verify_report(&a, &[1; 64], &refs), Verdict::Accept);
    }

    #[test]
    fn rem_extension_matches_the_oracle() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        let d = sha256(b"model");
        assert!(matches!(
            m.rsi_measurement_extend(r, 0, &d),
            Err(RmmError::Lifecycle { .. })
        ));
        m.activate(r).unwrap();
        m.rsi_measurement_extend(r, 0, &d).unwrap();
        assert_eq!(
            hex::encode(m.realm(r).unwrap().rem[0]),
            "db31b18e9583f7f061fbd7a811e86f3b0b533deb6a8bee33a791017ae4ee2d06"
        );
        m.rsi_measurement_extend(r, 0, &d).unwrap();
        assert_eq!(
            hex::encode(m.realm(r).unwrap().rem[0]),
            "5412d9a9589e24b7fc25207ee1c1229e6ba28702ec9b3f0da4b5072622271268"
        );
        assert_eq!(m.realm(r).unwrap().rem[0], digest_chain([&d, &d]));
        assert!(matches!(m.rsi_measurement_extend(r, 4, &d), Err(RmmError::Bounds(_))));
    }

    #[test]
    fn rec_enter_costs_four_switches() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        m.activate(r).unwrap();
        let before = m.ledger.count(EventKind::WorldSwitch);
        let exit = m.rec_enter(r).unwrap();
        assert_eq!(m.ledger.count(EventKind::WorldSwitch) - before, 4);
        assert_eq!(exit, ExitReason::TerminationRequest("bad manifest".into()));
    }

    #[test]
    fn host_call_bounds_and_mailbox() {
        let mut m = machine();
        let shared = SharedRegion {
            mailbox: 10,
            inbox: 11,
            outbox: 12,
            exchange: vec![13],
        };
        let r = m
            .realm_create(RealmParams {
                shared: Some(shared),
                ..params()
            })
            .unwrap();
        m.activate(r).unwrap();
        m.rsi_host_call(r, b"").unwrap();
        assert_eq!(m.host_read(10, 0, 2).unwrap(), vec![0, 0]);
        m.rsi_host_call(r, b"ready").unwrap();
        assert_eq!(m.host_read(10, 0, 7).unwrap(), b"\x05\x00ready");
        assert!(matches!(m.rsi_host_call(r, &[0; 257]), Err(RmmError::Bounds(_))));
    }

    #[test]
    fn host_cannot_read_realm_pages() {
        let mut m = machine();
        let r = populated(&mut m, 1);
        let g = *m.realm(r).unwrap().granules.iter().next().unwrap();
        assert!(matches!(
            m.host_read(g, 0, 1),
            Err(GranuleError::AccessViolation { .. })
        ));
    }

    #[test]
    fn exit_payload_mapping() {
        assert_eq!(exit_for(b"ready"), ExitReason::HostCall("ready".into()));
        assert_eq!(exit_for(b"terminate"), ExitReason::TerminationRequest(String::new()));
        assert_eq!(
            exit_for(b"terminate:expired"),
            ExitReason::TerminationRequest("expired".into())
        );
    }
}
