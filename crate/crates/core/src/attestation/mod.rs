// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Realm measurements, two-part attestation reports, and their appraisal.
//!
//! A report pairs a realm token (initial and runtime measurements,
//! personalization value, verifier challenge) with a platform token (firmware
//! measurements and lifecycle state) signed by the platform attestation key.
//! The signed platform payload carries the hash of the encoded realm token,
//! which binds the two halves together.
//!
//! The platform token is a simulation stand-in: the key is a fixed Ed25519
//! seed held in a Root-world granule rather than a hardware root of trust.
//!
//! Wire format (canonical CBOR, see [`crate::cbor`]):
//!
//! ```text
//! report   = { 0: scheme, 1: realm-token, 2: platform-token }
//! realm    = { 1: rim, 2: [rem x4], 3: personalization, 4: challenge, 5: public-key-hash }
//! platform = { 1: [measurements], 2: lifecycle, 3: realm-token-hash, 4: signature }
//! ```
//!
//! The platform signature covers the encoding of keys 1..=3 as a map of
//! three entries.

mod measure;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use measure::{
    digest_chain, expected_rim, extend, extend_digest, initial_rim, realm_params_digest, sha256, EntryPoint,
    MeasurementRecord, ZERO_DIGEST,
};

use crate::cbor::{DecodeError, Reader, Writer};
use crate::rmm::{RealmDescriptor, RealmState};
use crate::Digest;

/// Report header value for SHA-256 digests with Ed25519 platform signatures.
pub const SCHEME_SHA256_ED25519: u64 = 1;
pub const CHALLENGE_LEN: usize = 64;
pub const REM_SLOTS: usize = 4;

pub type Challenge = [u8; CHALLENGE_LEN];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Secured,
    Debug,
}

impl Lifecycle {
    fn code(self) -> u64 {
        match self {
            Lifecycle::Secured => 0,
            Lifecycle::Debug => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RealmToken {
    pub rim: Digest,
    pub rem: [Digest; REM_SLOTS],
    pub personalization: [u8; 64],
    pub challenge: Challenge,
    pub public_key_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlatformToken {
    pub measurements: Vec<Digest>,
    pub lifecycle: Lifecycle,
    pub realm_token_hash: Digest,
    pub signature: [u8; 64],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationReport {
    pub scheme: u64,
    pub realm_token: RealmToken,
    pub platform_token: PlatformToken,
}

/// What the platform reports about itself when asked for a token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlatformState {
    pub measurements: Vec<Digest>,
    pub lifecycle: Lifecycle,
}

impl Default for PlatformState {
    fn default() -> Self {
        Self {
            measurements: crate::keys::platform_measurements(),
            lifecycle: Lifecycle::Secured,
        }
    }
}

/// Appraisal policy published by the trusted verifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceValues {
    #[serde(with = "crate::hexfmt::array")]
    pub expected_rim: Digest,
    #[serde(with = "crate::hexfmt::digest_sets")]
    pub accepted_platforms: Vec<Vec<Digest>>,
    #[serde(with = "crate::hexfmt::array")]
    pub platform_public_key: [u8; 32],
    #[serde(default = "default_true")]
    pub require_secured: bool,
}

fn default_true() -> bool {
    true
}

impl ReferenceValues {
    /// References for the fixture platform and the given realm measurement.
    pub fn for_fixture_platform(expected_rim: Digest) -> Self {
        Self {
            expected_rim,
            accepted_platforms: vec![crate::keys::platform_measurements()],
            platform_public_key: crate::keys::platform_signing_key().verifying_key().to_bytes(),
            require_secured: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    DecodeError { offset: usize, reason: String },
    UnsupportedScheme,
    SignatureMismatch,
    BindingMismatch,
    ChallengeMismatch,
    RimMismatch,
    PlatformMismatch,
    DebugPlatform,
}

impl RejectReason {
    pub fn name(&self) -> &'static str {
        match self {
            RejectReason::DecodeError { .. } => "DecodeError",
            RejectReason::UnsupportedScheme => "UnsupportedScheme",
            RejectReason::SignatureMismatch => "SignatureMismatch",
            RejectReason::BindingMismatch => "BindingMismatch",
            RejectReason::ChallengeMismatch => "ChallengeMismatch",
            RejectReason::RimMismatch => "RimMismatch",
            RejectReason::PlatformMismatch => "PlatformMismatch",
            RejectReason::DebugPlatform => "DebugPlatform",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::DecodeError { offset, reason } => {
                write!(f, "DecodeError at byte {offset}: {reason}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl From<DecodeError> for RejectReason {
    fn from(e: DecodeError) -> Self {
        RejectReason::DecodeError {
            offset: e.offset,
            reason: e.reason,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("realm is {0:?}, attestation needs an active realm")]
    NotActive(RealmState),
}

impl RealmToken {
    pub fn encode_into(&self, w: &mut Writer) {
        w.map(5);
        w.uint(1).bytes(&self.rim);
        w.uint(2).array(REM_SLOTS);
        for slot in &self.rem {
            w.bytes(slot);
        }
        w.uint(3).bytes(&self.personalization);
        w.uint(4).bytes(&self.challenge);
        w.uint(5).bytes(&self.public_key_hash);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.map_exact(5)?;
        r.key(1)?;
        let rim = r.bytes_fixed()?;
        r.key(2)?;
        r.array_exact(REM_SLOTS)?;
        let mut rem = [ZERO_DIGEST; REM_SLOTS];
        for slot in rem.iter_mut() {
            *slot = r.bytes_fixed()?;
        }
        r.key(3)?;
        let personalization = r.bytes_fixed()?;
        r.key(4)?;
        let challenge = r.bytes_fixed()?;
        r.key(5)?;
        let public_key_hash = r.bytes_fixed()?;
        Ok(Self {
            rim,
            rem,
            personalization,
            challenge,
            public_key_hash,
        })
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.encode())
    }
}

impl PlatformToken {
    fn encode_claims(w: &mut Writer, entries: usize, m: &[Digest], lc: Lifecycle, h: &Digest) {
        w.map(entries);
        w.uint(1).array(m.len());
        for d in m {
            w.bytes(d);
        }
        w.uint(2).uint(lc.code());
        w.uint(3).bytes(h);
    }

    /// Bytes covered by the platform signature.
    pub fn signed_payload(measurements: &[Digest], lifecycle: Lifecycle, realm_hash: &Digest) -> Vec<u8> {
        let mut w = Writer::new();
        Self::encode_claims(&mut w, 3, measurements, lifecycle, realm_hash);
        w.into_bytes()
    }

    pub fn encode_into(&self, w: &mut Writer) {
        Self::encode_claims(w, 4, &self.measurements, self.lifecycle, &self.realm_token_hash);
        w.uint(4).bytes(&self.signature);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.map_exact(4)?;
        r.key(1)?;
        let n = r.array()?;
        let mut measurements = Vec::with_capacity(n);
        for _ in 0..n {
            measurements.push(r.bytes_fixed()?);
        }
        r.key(2)?;
        let at = r.position();
        let lifecycle = match r.uint()? {
            0 => Lifecycle::Secured,
            1 => Lifecycle::Debug,
            other => return Err(DecodeError::new(at, format!("unknown lifecycle state {other}"))),
        };
        r.key(3)?;
        let realm_token_hash = r.bytes_fixed()?;
        r.key(4)?;
        let signature = r.bytes_fixed()?;
        Ok(Self {
            measurements,
            lifecycle,
            realm_token_hash,
            signature,
        })
    }
}

impl AttestationReport {
    pub fn encode_into(&self, w: &mut Writer) {
        w.map(3);
        w.uint(0).uint(self.scheme);
        w.uint(1);
        self.realm_token.encode_into(w);
        w.uint(2);
        self.platform_token.encode_into(w);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.map_exact(3)?;
        r.key(0)?;
        let scheme = r.uint()?;
        r.key(1)?;
        let realm_token = RealmToken::decode_from(r)?;
        r.key(2)?;
        let platform_token = PlatformToken::decode_from(r)?;
        Ok(Self {
            scheme,
            realm_token,
            platform_token,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let report = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(report)
    }
}

/// Build and sign a report for an active realm.
pub fn assemble_report(
    descriptor: &RealmDescriptor,
    challenge: &Challenge,
    platform: &PlatformState,
    platform_key: &SigningKey,
) -> Result<AttestationReport, AssembleError> {
    if descriptor.state != RealmState::Active {
        return Err(AssembleError::NotActive(descriptor.state));
    }
    let realm_token = RealmToken {
        rim: descriptor.rim,
        rem: descriptor.rem,
        personalization: descriptor.personalization,
        challenge: *challenge,
        public_key_hash: sha256(platform_key.verifying_key().as_bytes()),
    };
    let realm_token_hash = realm_token.digest();
    let payload = PlatformToken::signed_payload(&platform.measurements, platform.lifecycle, &realm_token_hash);
    let signature = platform_key.sign(&payload).to_bytes();
    Ok(AttestationReport {
        scheme: SCHEME_SHA256_ED25519,
        realm_token,
        platform_token: PlatformToken {
            measurements: platform.measurements.clone(),
            lifecycle: platform.lifecycle,
            realm_token_hash,
            signature,
        },
    })
}

/// Appraise a decoded report. Checks run in a fixed order and the first
/// failure is reported: signature, binding, challenge, rim, platform,
/// lifecycle.
pub fn verify_report(report: &AttestationReport, expected_challenge: &Challenge, refs: &ReferenceValues) -> Verdict {
    Appraiser::new(refs).verify(report, expected_challenge)
}

/// Reference values with the platform key already parsed, for appraising
/// many reports against the same references.
pub struct Appraiser<'a> {
    refs: &'a ReferenceValues,
    key: Option<VerifyingKey>,
    key_hash: Digest,
}

impl<'a> Appraiser<'a> {
    pub fn new(refs: &'a ReferenceValues) -> Self {
        Self {
            refs,
            key: VerifyingKey::from_bytes(&refs.platform_public_key).ok(),
            key_hash: sha256(&refs.platform_public_key),
        }
    }

    pub fn verify(&self, report: &AttestationReport, expected_challenge: &Challenge) -> Verdict {
        use RejectReason::*;
        let refs = self.refs;
        if report.scheme != SCHEME_SHA256_ED25519 {
            return Verdict::Reject(UnsupportedScheme);
        }
        let pt = &report.platform_token;
        let rt = &report.realm_token;
        if pt.realm_token_hash != rt.digest() {
            return Verdict::Reject(BindingMismatch);
        }
        let signature_ok = self.key.is_some_and(|key| {
            let payload = PlatformToken::signed_payload(&pt.measurements, pt.lifecycle, &pt.realm_token_hash);
            key.verify_strict(&payload, &Signature::from_bytes(&pt.signature))
                .is_ok()
        });
        if !signature_ok {
            return Verdict::Reject(SignatureMismatch);
        }
        if rt.public_key_hash != self.key_hash {
            return Verdict::Reject(BindingMismatch);
        }
        if &rt.challenge != expected_challenge {
            return Verdict::Reject(ChallengeMismatch);
        }
        if rt.rim != refs.expected_rim {
            return Verdict::Reject(RimMismatch);
        }
        if !refs.accepted_platforms.contains(&pt.measurements) {
            return Verdict::Reject(PlatformMismatch);
        }
        if refs.require_secured && pt.lifecycle != Lifecycle::Secured {
            return Verdict::Reject(DebugPlatform);
        }
        Verdict::Accept
    }

    pub fn verify_bytes(&self, bytes: &[u8], expected_challenge: &Challenge) -> Verdict {
        match AttestationReport::decode(bytes) {
            Ok(report) => self.verify(&report, expected_challenge),
            Err(e) => Verdict::Reject(e.into()),
        }
    }
}

/// Decode and appraise an encoded report.
pub fn verify_report_bytes(bytes: &[u8], expected_challenge: &Challenge, refs: &ReferenceValues) -> Verdict {
    Appraiser::new(refs).verify_bytes(bytes, expected_challenge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmm::RealmId;

    fn active_descriptor(rim: Digest) -> RealmDescriptor {
        let mut d = RealmDescriptor::new(RealmId(1), [5; 64], EntryPoint::default(), 0);
        d.rim = rim;
        d.state = RealmState::Active;
        d
    }

    fn fixture() -> (AttestationReport, Challenge, ReferenceValues) {
        let rim = sha256(b"fixture rim");
        let challenge = [0x42; 64];
        let report = assemble_report(
            &active_descriptor(rim),
            &challenge,
            &PlatformState::default(),
            &crate::keys::platform_signing_key(),
        )
        .unwrap();
        (report, challenge, ReferenceValues::for_fixture_platform(rim))
    }

    // Oracle values computed independently with Python's hashlib.
    #[test]
    fn extend_zero_page_at_zero() {
        let rec = MeasurementRecord::for_content(&[0; 4096], 0);
        assert_eq!(
            hex::encode(extend(&ZERO_DIGEST, &rec)),
            "4bfe184c87920563b6e1f38c907fc50dd4acc63a04f369bada42ca84130b3ed7"
        );
    }

    #[test]
    fn extend_is_order_sensitive() {
        let a = MeasurementRecord::for_content(b"segment a", 0x1000);
        let b = MeasurementRecord::for_content(b"segment b", 0x2000);
        let ab = extend(&extend(&ZERO_DIGEST, &a), &b);
        let ba = extend(&extend(&ZERO_DIGEST, &b), &a);
        assert_ne!(ab, ba);
    }

    #[test]
    fn record_layout() {
        let rec = MeasurementRecord {
            content_digest: [9; 32],
            target_addr: 0x0102_0304_0506_0708,
        };
        let b = rec.to_bytes();
        assert_eq!(&b[..32], &[9; 32]);
        assert_eq!(&b[32..], &[8, 7, 6, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn honest_round_trip() {
        let (report, challenge, refs) = fixture();
        let enc = report.encode();
        assert!(enc.len() < 2048);
        assert_eq!(AttestationReport::decode(&enc).unwrap(), report);
        assert_eq!(AttestationReport::decode(&enc).unwrap().encode(), enc);
        assert_eq!(verify_report_bytes(&enc, &challenge, &refs), Verdict::Accept);
    }

    #[test]
    fn stale_challenge_rejected() {
        let (report, _, refs) = fixture();
        assert_eq!(
            verify_report(&report, &[0x43; 64], &refs),
            Verdict::Reject(RejectReason::ChallengeMismatch)
        );
    }

    #[test]
    fn rim_mismatch_rejected() {
        let (report, challenge, mut refs) = fixture();
        refs.expected_rim = sha256(b"other");
        assert_eq!(
            verify_report(&report, &challenge, &refs),
            Verdict::Reject(RejectReason::RimMismatch)
        );
    }

    #[test]
    fn debug_platform_rejected() {
        let rim = sha256(b"fixture rim");
        let platform = PlatformState {
            lifecycle: Lifecycle::Debug,
            ..PlatformState::default()
        };
        let report = assemble_report(
            &active_descriptor(rim),
            &[1; 64],
            &platform,
            &crate::keys::platform_signing_key(),
        )
        .unwrap();
        let mut refs = ReferenceValues::for_fixture_platform(rim);
        assert_eq!(
            verify_report(&report, &[1; 64], &refs),
            Verdict::Reject(RejectReason::DebugPlatform)
        );
        refs.require_secured = false;
        assert_eq!(verify_report(&report, &[1; 64], &refs), Verdict::Accept);
    }

    #[test]
    fn unknown_platform_rejected() {
        let (report, challenge, mut refs) = fixture();
        refs.accepted_platforms = vec![vec![sha256(b"other firmware")]];
        assert_eq!(
            verify_report(&report, &challenge, &refs),
            Verdict::Reject(RejectReason::PlatformMismatch)
        );
    }

    #[test]
    fn wrong_key_is_signature_mismatch() {
        let (report, challenge, mut refs) = fixture();
        refs.platform_public_key = crate::keys::verifier_signing_key().verifying_key().to_bytes();
        assert_eq!(
            verify_report(&report, &challenge, &refs),
            Verdict::Reject(RejectReason::SignatureMismatch)
        );
    }

    #[test]
    fn swapped_realm_token_breaks_binding() {
        let (mut report, challenge, refs) = fixture();
        report.realm_token.rem[2] = [1; 32];
        assert_eq!(
            verify_report(&report, &challenge, &refs),
            Verdict::Reject(RejectReason::BindingMismatch)
        );
    }

    #[test]
    fn not_active_cannot_assemble() {
        let mut d = active_descriptor(ZERO_DIGEST);
        d.state = RealmState::New;
        assert_eq!(
            assemble_report(
                &d,
                &[0; 64],
                &PlatformState::default(),
                &crate::keys::platform_signing_key()
            ),
            Err(AssembleError::NotActive(RealmState::New))
        );
    }

    #[test]
    fn byte_flip_sweep_rejects_everything() {
        let (report, challenge, refs) = fixture();
        let enc = report.encode();
        for i in 0..enc.len() {
            let mut m = enc.clone();
            m[i] ^= 0xff;
            let v = verify_report_bytes(&m, &challenge, &refs);
            assert!(!v.is_accept(), "flip at {i} accepted");
        }
    }

    #[test]
    fn truncated_buffer_is_decode_error() {
        let (report, challenge, refs) = fixture();
        let enc = report.encode();
        assert!(matches!(
            verify_report_bytes(&enc[..enc.len() - 1], &challenge, &refs),
            Verdict::Reject(RejectReason::DecodeError { .. })
        ));
        assert!(AttestationReport::decode(&[]).is_err());
    }

    #[test]
    fn rem_slots_are_encoding_sensitive() {
        let (report, _, _) = fixture();
        let base = report.realm_token.encode();
        for slot in 0..REM_SLOTS {
            let mut t = report.realm_token.clone();
            t.rem[slot][0] ^= 1;
            assert_ne!(t.encode(), base);
        }
    }
}
