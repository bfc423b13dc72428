// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! The model provider.
//!
//! A [`Provider`] serves one session at a time. A session starts with the
//! realm's channel hello and proceeds:
//!
//! ```text
//! realm                         provider
//! Hello{ephemeral}        ->
//!                         <-    Hello{confirmation}, Challenge{nonce}
//! Report                  ->    verify against nonce and reference values
//!                         <-    Package (sealed) | Refused{reason}
//! UpdateQuery{version}    ->
//!                         <-    Challenge{nonce}
//! Report                  ->    verify, then check rem[0] against the
//!                               digests delivered in this session
//!                         <-    Update (sealed) | UpToDate | Refused{reason}
//! ```
//!
//! Anything out of order is answered with `Refused{ProtocolError}` and the
//! session closes. Model bytes only leave the provider sealed under the
//! session key and only after an `Accept` verdict in the same session.

pub mod channel;
pub mod protocol;
pub mod transport;

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use x25519_dalek::StaticSecret;

use crate::attestation::{
    digest_chain, verify_report, AttestationReport, Challenge, ReferenceValues, RejectReason, Verdict,
};
use crate::runtime::ModelPackage;
use crate::seed::{derive_rng, SimRng};
use crate::Digest;
use channel::ChannelKeys;
use protocol::Message;

/// Why the provider refused a session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refusal {
    Reject(RejectReason),
    ProtocolError,
    RuntimeStateMismatch,
}

impl Refusal {
    pub fn name(&self) -> &'static str {
        match self {
            Refusal::Reject(r) => r.name(),
            Refusal::ProtocolError => "ProtocolError",
            Refusal::RuntimeStateMismatch => "RuntimeStateMismatch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToProvider,
    FromProvider,
}

/// One protocol message as seen by the provider. Only metadata is kept,
/// never message plaintext.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub session: u64,
    pub direction: Direction,
    pub message: String,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl SessionTranscript {
    pub fn sent(&self, session: u64) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries
            .iter()
            .filter(move |e| e.session == session && e.direction == Direction::FromProvider)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum SessionState {
    AwaitHello,
    AwaitReport { nonce: Challenge },
    Provisioned,
    AwaitUpdateReport { nonce: Challenge },
    Closed,
}

#[derive(Debug)]
struct Session {
    id: u64,
    state: SessionState,
    keys: Option<ChannelKeys>,
    /// Digests of every package delivered in this session, in order.
    delivered: Vec<Digest>,
    delivered_version: u32,
}

/// What the provider did with one incoming frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub frames: Vec<Vec<u8>>,
    pub refusal: Option<Refusal>,
}

pub struct Provider {
    static_secret: StaticSecret,
    rng: SimRng,
    used_nonces: HashSet<Challenge>,
    /// Linear version history; the newest published package wins.
    history: Vec<ModelPackage>,
    published: usize,
    refs: ReferenceValues,
    session: Option<Session>,
    next_session: u64,
    seq: u64,
    transcript: SessionTranscript,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("published", &self.published)
            .field("sessions", &self.next_session)
            .finish_non_exhaustive()
    }
}

impl Provider {
    /// A provider holding `history`, of which the first `published` versions
    /// are available.
    pub fn new(
        seed: u64,
        static_secret: StaticSecret,
        refs: ReferenceValues,
        history: Vec<ModelPackage>,
        published: usize,
    ) -> Self {
        assert!(
            published >= 1 && published <= history.len(),
            "publish at least one held version"
        );
        Self {
            static_secret,
            rng: derive_rng(seed, "provider"),
            used_nonces: HashSet::new(),
            history,
            published,
            refs,
            session: None,
            next_session: 0,
            seq: 0,
            transcript: SessionTranscript::default(),
        }
    }

    /// Make the next held version available. Returns false if none is left.
    pub fn publish_next(&mut self) -> bool {
        if self.published < self.history.len() {
            self.published += 1;
            true
        } else {
            false
        }
    }

    pub fn latest(&self) -> &ModelPackage {
        &self.history[self.published - 1]
    }

    pub fn transcript(&self) -> &SessionTranscript {
        &self.transcript
    }

    pub fn current_session(&self) -> Option<u64> {
        self.session.as_ref().map(|s| s.id)
    }

    /// Digests delivered in the current session.
    pub fn delivered(&self) -> &[Digest] {
        self.session.as_ref().map_or(&[], |s| &s.delivered)
    }

    /// A fresh 64-byte nonce, never repeated within this provider's life.
    pub fn issue_challenge(&mut self) -> Challenge {
        loop {
            let mut nonce = [0u8; 64];
            self.rng.fill_bytes(&mut nonce);
            if self.used_nonces.insert(nonce) {
                return nonce;
            }
        }
    }

    /// Start a new session, dropping any previous one.
    pub fn connect(&mut self) -> u64 {
        let id = self.next_session;
        self.next_session += 1;
        self.session = Some(Session {
            id,
            state: SessionState::AwaitHello,
            keys: None,
            delivered: Vec::new(),
            delivered_version: 0,
        });
        id
    }

    fn log(&mut self, direction: Direction, message: &str, bytes: usize, note: Option<String>) {
        let session = self.session.as_ref().map_or(u64::MAX, |s| s.id);
        self.transcript.entries.push(TranscriptEntry {
            seq: self.seq,
            session,
            direction,
            message: message.to_string(),
            bytes,
            note,
        });
        self.seq += 1;
    }

    fn emit(&mut self, msgs: Vec<Message>, refusal: Option<Refusal>) -> Reply {
        let mut frames = Vec::with_capacity(msgs.len());
        for m in msgs {
            let frame = m.to_frame();
            let note = match &m {
                Message::Refused { reason } => Some(reason.clone()),
                Message::Update { .. } | Message::Package { .. } => Some(format!("version {}", self.latest().version)),
                _ => None,
            };
            self.log(Direction::FromProvider, m.name(), frame.len(), note);
            frames.push(frame);
        }
        Reply { frames, refusal }
    }

    fn refuse(&mut self, why: Refusal) -> Reply {
        if let Some(s) = self.session.as_mut() {
            s.state = SessionState::Closed;
        }
        let reason = why.name().to_string();
        self.emit(vec![Message::Refused { reason }], Some(why))
    }

    fn seal_latest(&mut self, code: u64) -> Vec<u8> {
        let pkg = self.latest().clone();
        let s = self.session.as_mut().expect("sealing inside a session");
        s.delivered.push(pkg.digest);
        s.delivered_version = pkg.version;
        s.keys
            .as_mut()
            .expect("keys exist after hello")
            .seal(&[code as u8], &pkg.encode())
    }

    /// Handle one frame from the realm.
    pub fn handle(&mut self, frame: &[u8]) -> Reply {
        if self.session.is_none() {
            self.connect();
        }
        let msg = match Message::from_frame(frame) {
            Ok(m) => m,
            Err(e) => {
                self.log(Direction::ToProvider, "Malformed", frame.len(), Some(e.to_string()));
                return self.refuse(Refusal::ProtocolError);
            }
        };
        self.log(Direction::ToProvider, msg.name(), frame.len(), None);
        let state = self.session.as_ref().expect("connected above").state.clone();
        match (state, msg) {
            (SessionState::AwaitHello, Message::Hello { key }) => {
                let keys = channel::respond(&self.static_secret, &key);
                let confirm = keys.confirmation();
                let nonce = self.issue_challenge();
                let s = self.session.as_mut().unwrap();
                s.keys = Some(keys);
                s.state = SessionState::AwaitReport { nonce };
                self.emit(
                    vec![Message::Hello { key: confirm }, Message::Challenge { nonce }],
                    None,
                )
            }
            (SessionState::AwaitReport { nonce }, Message::Report { report }) => match self.appraise(&report, &nonce) {
                Err(why) => self.refuse(why),
                Ok(_) => {
                    let sealed = self.seal_latest(3);
                    self.session.as_mut().unwrap().state = SessionState::Provisioned;
                    self.emit(vec![Message::Package { sealed }], None)
                }
            },
            (SessionState::Provisioned, Message::UpdateQuery { .. }) => {
                let nonce = self.issue_challenge();
                self.session.as_mut().unwrap().state = SessionState::AwaitUpdateReport { nonce };
                self.emit(vec![Message::Challenge { nonce }], None)
            }
            (SessionState::AwaitUpdateReport { nonce }, Message::Report { report }) => {
                let report = match self.appraise(&report, &nonce) {
                    Err(why) => return self.refuse(why),
                    Ok(r) => r,
                };
                let s = self.session.as_ref().unwrap();
                if report.realm_token.rem[0] != digest_chain(&s.delivered) {
                    return self.refuse(Refusal::RuntimeStateMismatch);
                }
                let newer = self.latest().version > s.delivered_version;
                self.session.as_mut().unwrap().state = SessionState::Provisioned;
                if newer {
                    let sealed = self.seal_latest(6);
                    self.emit(vec![Message::Update { sealed }], None)
                } else {
                    self.emit(vec![Message::UpToDate], None)
                }
            }
            _ => self.refuse(Refusal::ProtocolError),
        }
    }

    fn appraise(&self, bytes: &[u8], nonce: &Challenge) -> Result<AttestationReport, Refusal> {
        let report = AttestationReport::decode(bytes).map_err(|e| Refusal::Reject(e.into()))?;
        match verify_report(&report, nonce, &self.refs) {
            Verdict::Accept => Ok(report),
            Verdict::Reject(r) => Err(Refusal::Reject(r)),
        }
    }
}
