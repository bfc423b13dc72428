// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Fixed identities of the simulated parties.
//!
//! These are manufacturing-time secrets, not per-run randomness: the platform
//! device key, the trusted verifier's image-signing key, and the provider's
//! static channel key are the same in every run so that published images and
//! reference values stay valid across runs.

use ed25519_dalek::SigningKey;
use sha2::{Digest as _, Sha256};
use x25519_dalek::{PublicKey as X25519Public, StaticSecret};

use crate::Digest;

fn seed_for(label: &str) -> [u8; 32] {
    Sha256::digest(format!("realmsim fixture identity: {label}").as_bytes()).into()
}

/// Device attestation key of the simulated platform. Lives in a Root granule.
pub fn platform_key_seed() -> [u8; 32] {
    seed_for("platform attestation key v1")
}

pub fn platform_signing_key() -> SigningKey {
    SigningKey::from_bytes(&platform_key_seed())
}

/// Key the trusted verifier signs realm image bundles with.
pub fn verifier_signing_key() -> SigningKey {
    SigningKey::from_bytes(&seed_for("trusted verifier image key v1"))
}

/// Provider's static channel secret. Its public half is pinned in realm images.
pub fn provider_static_secret() -> StaticSecret {
    StaticSecret::from(seed_for("model provider channel key v1"))
}

pub fn provider_static_public() -> [u8; 32] {
    X25519Public::from(&provider_static_secret()).to_bytes()
}

/// Digest of the simulated Secure Monitor firmware image.
pub fn secure_monitor_measurement() -> Digest {
    Sha256::digest(b"realmsim secure monitor firmware 1.0").into()
}

/// Digest of the simulated RMM firmware image.
pub fn rmm_measurement() -> Digest {
    Sha256::digest(b"realmsim realm management monitor firmware 1.0").into()
}

/// Firmware measurements reported by an untampered platform, in boot order.
pub fn platform_measurements() -> Vec<Digest> {
    vec![secure_monitor_measurement(), rmm_measurement()]
}
