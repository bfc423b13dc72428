// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Simulated authenticated channel between a realm and the provider.
//!
//! The realm image pins the provider's static X25519 key. The realm sends an
//! ephemeral public key; both sides derive a session key and a confirmation
//! value with HKDF-SHA256 over the shared secret. Only the holder of the
//! pinned static key can produce the confirmation or seal packages the realm
//! will accept. Packages are sealed with ChaCha20-Poly1305 under a
//! per-direction message counter.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("key confirmation mismatch")]
    Confirmation,
    #[error("sealed message failed authentication")]
    Authentication,
}

#[derive(Clone)]
pub struct ChannelKeys {
    key: [u8; 32],
    confirm: [u8; 32],
    send_counter: u64,
    recv_counter: u64,
}

impl std::fmt::Debug for ChannelKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelKeys").finish_non_exhaustive()
    }
}

fn derive(shared: &[u8; 32], ephemeral: &[u8; 32], static_pub: &[u8; 32]) -> ChannelKeys {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(static_pub);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = [0u8; 32];
    let mut confirm = [0u8; 32];
    hk.expand(b"realmsim channel key", &mut key).unwrap();
    hk.expand(b"realmsim key confirmation", &mut confirm).unwrap();
    ChannelKeys {
        key,
        confirm,
        send_counter: 0,
        recv_counter: 0,
    }
}

/// Realm side: a fresh ephemeral key and the keys it shares with the pinned
/// provider key.
pub fn initiate(rng: &mut impl RngCore, pinned_provider_key: &[u8; 32]) -> ([u8; 32], ChannelKeys) {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let secret = StaticSecret::from(seed);
    let ephemeral = PublicKey::from(&secret).to_bytes();
    let shared = secret.diffie_hellman(&PublicKey::from(*pinned_provider_key));
    (ephemeral, derive(shared.as_bytes(), &ephemeral, pinned_provider_key))
}

/// Provider side of the handshake.
pub fn respond(static_secret: &StaticSecret, ephemeral: &[u8; 32]) -> ChannelKeys {
    let static_pub = PublicKey::from(static_secret).to_bytes();
    let shared = static_secret.diffie_hellman(&PublicKey::from(*ephemeral));
    derive(shared.as_bytes(), ephemeral, &static_pub)
}

impl ChannelKeys {
    pub fn confirmation(&self) -> [u8; 32] {
        self.confirm
    }

    pub fn check_confirmation(&self, value: &[u8; 32]) -> Result<(), ChannelError> {
        if &self.confirm == value {
            Ok(())
        } else {
            Err(ChannelError::Confirmation)
        }
    }

    fn nonce(counter: u64) -> [u8; 12] {
        let mut n = [0u8; 12];
        n[4..].copy_from_slice(&counter.to_be_bytes());
        n
    }

    /// Seal `plaintext`; `aad` is the message type so a sealed package cannot
    /// be replayed as a different message.
    pub fn seal(&mut self, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.key));
        let nonce = Self::nonce(self.send_counter);
        self.send_counter += 1;
        cipher
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
            .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
    }

    pub fn open(&mut self, aad: &[u8], sealed: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.key));
        let nonce = Self::nonce(self.recv_counter);
        let out = cipher
            .decrypt(Nonce::from_slice(&nonce), Payload { msg: sealed, aad })
            .map_err(|_| ChannelError::Authentication)?;
        self.recv_counter += 1;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys;
    use crate::seed::derive_rng;

    #[test]
    fn both_sides_agree() {
        let mut rng = derive_rng(1, "t");
        let (eph, mut realm) = initiate(&mut rng, &keys::provider_static_public());
        let mut provider = respond(&keys::provider_static_secret(), &eph);
        realm.check_confirmation(&provider.confirmation()).unwrap();
        let sealed = provider.seal(b"pkg", b"weights");
        assert_eq!(realm.open(b"pkg", &sealed).unwrap(), b"weights");
    }

    #[test]
    fn wrong_provider_key_detected() {
        let mut rng = derive_rng(1, "t");
        let (eph, realm) = initiate(&mut rng, &keys::provider_static_public());
        let impostor = StaticSecret::from([9u8; 32]);
        let fake = respond(&impostor, &eph);
        assert_eq!(
            realm.check_confirmation(&fake.confirmation()),
            Err(ChannelError::Confirmation)
        );
    }

    #[test]
    fn tamper_and_reordering_rejected() {
        let mut rng = derive_rng(2, "t");
        let (eph, mut realm) = initiate(&mut rng, &keys::provider_static_public());
        let mut provider = respond(&keys::provider_static_secret(), &eph);
        let first = provider.seal(b"a", b"one");
        let second = provider.seal(b"a", b"two");
        assert!(realm.open(b"a", &second).is_err());
        let mut bad = first.clone();
        bad[0] ^= 1;
        assert!(realm.open(b"a", &bad).is_err());
        assert!(realm.open(b"b", &first).is_err());
        assert_eq!(realm.open(b"a", &first).unwrap(), b"one");
        assert_eq!(realm.open(b"a", &second).unwrap(), b"two");
    }
}
