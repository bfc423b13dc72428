// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Signed realm image bundles published by the trusted verifier.
//!
//! ```text
//! bundle = { 0: body, 1: signature }
//! body   = { 1: [[target_addr, page] ...], 2: [entry_granule, entry_offset],
//!            3: personalization, 4: { 1: image_size_bytes, 2: description },
//!            5: reference-values }
//! refs   = { 1: expected_rim, 2: [[measurement ...] ...], 3: platform_key,
//!            4: require_secured (0/1) }
//! ```
//!
//! The verifier's Ed25519 signature covers the encoded body.

use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::{expected_rim, EntryPoint, ReferenceValues};
use crate::cbor::{DecodeError, Reader, Writer};
use crate::runtime::{manifest, MANIFEST_LEN};
use crate::seed::derive_rng;
use crate::GRANULE_SIZE;

/// Guest page where fixture images start.
pub const IMAGE_BASE_PAGE: u64 = 0x80000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("cannot read image: {0}")]
    Io(String),
    #[error("malformed image bundle: {0}")]
    Decode(#[from] DecodeError),
    #[error("bundled reference measurement does not match the image contents")]
    RimMismatch,
    #[error("verifier signature does not verify")]
    BadSignature,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub target_addr: u64,
    pub content: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMetadata {
    /// Nominal size of the full image. Only the segments are materialised;
    /// the remainder is charged as modeled population cost.
    pub image_size_bytes: u64,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RealmImage {
    pub segments: Vec<Segment>,
    pub entry_point: EntryPoint,
    pub personalization: [u8; 64],
    pub metadata: ImageMetadata,
    pub refs: ReferenceValues,
    pub signature: [u8; 64],
}

/// What to put in a freshly built image.
#[derive(Clone, Debug)]
pub struct ImageSpec {
    /// Bytes placed after the manifest; stands in for the runtime binary.
    pub program: Vec<u8>,
    /// Total materialised pages, at least enough for the program.
    pub pages: usize,
    pub image_size_bytes: u64,
    pub description: String,
    pub personalization: [u8; 64],
    pub provider_key: [u8; 32],
    pub seed: u64,
}

impl ImageSpec {
    pub fn fixture(image_size_bytes: u64) -> Self {
        Self {
            program: b"realmsim inference runtime 0.1".to_vec(),
            pages: 8,
            image_size_bytes,
            description: format!("fixture realm image, {} MB", image_size_bytes / 1_000_000),
            personalization: *b"realmsim fixture realm image personalization value 0000000000001",
            provider_key: crate::keys::provider_static_public(),
            seed: 42,
        }
    }
}

fn encode_refs(w: &mut Writer, refs: &ReferenceValues) {
    w.map(4).uint(1).bytes(&refs.expected_rim).uint(2);
    w.array(refs.accepted_platforms.len());
    for set in &refs.accepted_platforms {
        w.array(set.len());
        for d in set {
            w.bytes(d);
        }
    }
    w.uint(3)
        .bytes(&refs.platform_public_key)
        .uint(4)
        .uint(refs.require_secured as u64);
}

fn decode_refs(r: &mut Reader<'_>) -> Result<ReferenceValues, DecodeError> {
    r.map_exact(4)?;
    r.key(1)?;
    let expected_rim = r.bytes_fixed()?;
    r.key(2)?;
    let sets = r.array()?;
    let mut accepted_platforms = Vec::new();
    for _ in 0..sets {
        let n = r.array()?;
        let mut set = Vec::new();
        for _ in 0..n {
            set.push(r.bytes_fixed()?);
        }
        accepted_platforms.push(set);
    }
    r.key(3)?;
    let platform_public_key = r.bytes_fixed()?;
    r.key(4)?;
    let at = r.position();
    let require_secured = match r.uint()? {
        0 => false,
        1 => true,
        _ => return Err(DecodeError::new(at, "require_secured must be 0 or 1")),
    };
    Ok(ReferenceValues {
        expected_rim,
        accepted_platforms,
        platform_public_key,
        require_secured,
    })
}

impl RealmImage {
    /// Build and sign an image. The bundled reference values accept the
    /// fixture platform.
    pub fn build(spec: &ImageSpec, verifier: &SigningKey) -> Self {
        let mut first = manifest(&spec.provider_key).to_vec();
        first.extend_from_slice(&spec.program);
        let pages = spec.pages.max(first.len().div_ceil(GRANULE_SIZE)).max(1);
        first.resize(pages * GRANULE_SIZE, 0);
        let mut filler = derive_rng(spec.seed, "image-filler");
        let segments: Vec<Segment> = (0..pages)
            .map(|i| {
                let mut content = first[i * GRANULE_SIZE..(i + 1) * GRANULE_SIZE].to_vec();
                if i * GRANULE_SIZE >= MANIFEST_LEN + spec.program.len() {
                    filler.fill_bytes(&mut content);
                }
                Segment {
                    target_addr: (IMAGE_BASE_PAGE + i as u64) * GRANULE_SIZE as u64,
                    content,
                }
            })
            .collect();
        let entry_point = EntryPoint {
            granule: IMAGE_BASE_PAGE,
            offset: 0,
        };
        let rim = expected_rim(
            &spec.personalization,
            &entry_point,
            segments.iter().map(|s| (s.target_addr, s.content.as_slice())),
        );
        let mut image = Self {
            segments,
            entry_point,
            personalization: spec.personalization,
            metadata: ImageMetadata {
                image_size_bytes: spec.image_size_bytes,
                description: spec.description.clone(),
            },
            refs: ReferenceValues::for_fixture_platform(rim),
            signature: [0; 64],
        };
        image.signature = verifier.sign(&image.encode_body()).to_bytes();
        image
    }

    /// Initial measurement implied by the image contents.
    pub fn computed_rim(&self) -> crate::Digest {
        expected_rim(
            &self.personalization,
            &self.entry_point,
            self.segments.iter().map(|s| (s.target_addr, s.content.as_slice())),
        )
    }

    /// Materialised bytes.
    pub fn materialised_bytes(&self) -> u64 {
        (self.segments.len() * GRANULE_SIZE) as u64
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.map(5).uint(1).array(self.segments.len());
        for s in &self.segments {
            w.array(2).uint(s.target_addr).bytes(&s.content);
        }
        w.uint(2)
            .array(2)
            .uint(self.entry_point.granule)
            .uint(self.entry_point.offset as u64);
        w.uint(3).bytes(&self.personalization);
        w.uint(4)
            .map(2)
            .uint(1)
            .uint(self.metadata.image_size_bytes)
            .uint(2)
            .text(&self.metadata.description);
        w.uint(5);
        encode_refs(&mut w, &self.refs);
        w.into_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.map(2).uint(0).raw(&self.encode_body()).uint(1).bytes(&self.signature);
        w.into_bytes()
    }

    /// Decode a bundle without checking it.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.map_exact(2)?;
        r.key(0)?;
        r.map_exact(5)?;
        r.key(1)?;
        let n = r.array()?;
        let mut segments = Vec::new();
        for _ in 0..n {
            r.array_exact(2)?;
            let target_addr = r.uint()?;
            let at = r.position();
            let content = r.bytes()?.to_vec();
            if content.len() != GRANULE_SIZE {
                return Err(DecodeError::new(at, "segment is not one granule"));
            }
            segments.push(Segment { target_addr, content });
        }
        r.key(2)?;
        r.array_exact(2)?;
        let granule = r.uint()?;
        let at = r.position();
        let offset = u32::try_from(r.uint()?).map_err(|_| DecodeError::new(at, "entry offset too large"))?;
        r.key(3)?;
        let personalization = r.bytes_fixed()?;
        r.key(4)?;
        r.map_exact(2)?;
        r.key(1)?;
        let image_size_bytes = r.uint()?;
        r.key(2)?;
        let description = r.text()?.to_string();
        r.key(5)?;
        let refs = decode_refs(&mut r)?;
        r.key(1)?;
        let signature = r.bytes_fixed()?;
        r.finish()?;
        Ok(Self {
            segments,
            entry_point: EntryPoint { granule, offset },
            personalization,
            metadata: ImageMetadata {
                image_size_bytes,
                description,
            },
            refs,
            signature,
        })
    }

    /// Decode and verify a bundle: the reference measurement must match the
    /// contents and the verifier signature must hold.
    pub fn verify_bundle(bytes: &[u8], verifier: &VerifyingKey) -> Result<Self, ImageError> {
        let image = Self::decode(bytes)?;
        if image.computed_rim() != image.refs.expected_rim {
            return Err(ImageError::RimMismatch);
        }
        verifier
            .verify_strict(&image.encode_body(), &Signature::from_bytes(&image.signature))
            .map_err(|_| ImageError::BadSignature)?;
        Ok(image)
    }
}

/// Step 1: obtain a verified image from disk.
pub fn fetch_realm_image(path: &Path, verifier: &VerifyingKey) -> Result<RealmImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|e| ImageError::Io(format!("{}: {e}", path.display())))?;
    RealmImage::verify_bundle(&bytes, verifier)
}
