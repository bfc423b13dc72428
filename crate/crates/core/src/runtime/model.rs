// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Fixed-point affine classifier and its usage policy.
//!
//! Weights, biases and inputs are `i32` at scale 2^-16. A class score is
//! `sum_d W[c][d] * x[d] + (b[c] << 16)`, accumulated in `i64` (scale
//! 2^-32); overflow is reported, never wrapped. The predicted class is the
//! highest score, lowest index on ties.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attestation::sha256;
use crate::cbor::{DecodeError, Reader, Writer};
use crate::seed::derive_rng;
use crate::Digest;

pub const FIXED_SHIFT: u32 = 16;
pub const FIXED_ONE: i32 = 1 << FIXED_SHIFT;
pub const MAX_FEATURES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model shape {classes}x{features} does not match {weights} weights and {bias} biases")]
    Shape {
        classes: usize,
        features: usize,
        weights: usize,
        bias: usize,
    },
    #[error("package digest does not match its contents")]
    Integrity,
    #[error("input has {got} features, model expects {want}")]
    InputShape { got: usize, want: usize },
    #[error("score accumulation overflowed")]
    Overflow,
    #[error("invalid policy: {0}")]
    Policy(&'static str),
}

/// Usage limits delivered with a model. `None` means unlimited.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Policy {
    pub max_inferences: Option<u64>,
    pub valid_until: Option<u64>,
}

impl Policy {
    pub const UNLIMITED: Policy = Policy {
        max_inferences: None,
        valid_until: None,
    };

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_inferences == Some(0) {
            return Err(ModelError::Policy("max_inferences must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    InferenceLimit,
    Expired,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::InferenceLimit => "inference-limit",
            TerminationReason::Expired => "expired",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    Continue,
    RequestTermination(TerminationReason),
}

/// Decide whether another inference may run.
pub fn enforce_policy(policy: &Policy, inference_count: u64, now: u64) -> PolicyDecision {
    if policy.max_inferences.is_some_and(|max| inference_count >= max) {
        return PolicyDecision::RequestTermination(TerminationReason::InferenceLimit);
    }
    if policy.valid_until.is_some_and(|until| now > until) {
        return PolicyDecision::RequestTermination(TerminationReason::Expired);
    }
    PolicyDecision::Continue
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelPackage {
    pub classes: u16,
    pub features: u16,
    /// Row-major, `classes x features`.
    pub weights: Vec<i32>,
    pub bias: Vec<i32>,
    pub version: u32,
    pub policy: Policy,
    pub digest: Digest,
}

impl ModelPackage {
    pub fn new(
        classes: u16,
        features: u16,
        weights: Vec<i32>,
        bias: Vec<i32>,
        version: u32,
        policy: Policy,
    ) -> Result<Self, ModelError> {
        let mut pkg = Self {
            classes,
            features,
            weights,
            bias,
            version,
            policy,
            digest: [0; 32],
        };
        pkg.check_shape()?;
        policy.validate()?;
        pkg.digest = pkg.compute_digest();
        Ok(pkg)
    }

    /// Pseudo-random weights in [-2, 2) and biases in [-1, 1), drawn from
    /// `seed`.
    pub fn fixture(seed: u64, classes: u16, features: u16, version: u32, policy: Policy) -> Self {
        let mut rng = derive_rng(seed, "model-fixture");
        let n = classes as usize * features as usize;
        let weights = (0..n).map(|_| rng.gen_range(-2 * FIXED_ONE..2 * FIXED_ONE)).collect();
        let bias = (0..classes).map(|_| rng.gen_range(-FIXED_ONE..FIXED_ONE)).collect();
        Self::new(classes, features, weights, bias, version, policy).expect("fixture shape is consistent")
    }

    fn check_shape(&self) -> Result<(), ModelError> {
        let (c, d) = (self.classes as usize, self.features as usize);
        if c == 0 || d == 0 || d > MAX_FEATURES || self.weights.len() != c * d || self.bias.len() != c {
            return Err(ModelError::Shape {
                classes: c,
                features: d,
                weights: self.weights.len(),
                bias: self.bias.len(),
            });
        }
        Ok(())
    }

    /// The weight matrix as little-endian `i32`s; what must never leak.
    pub fn weight_bytes(&self) -> Vec<u8> {
        self.weights.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// Canonical weight encoding: classes and features as `u16` LE, then the
    /// weights and biases as `i32` LE.
    pub fn weight_encoding(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(&self.classes.to_le_bytes());
        out.extend_from_slice(&self.features.to_le_bytes());
        out.extend(self.weight_bytes());
        out.extend(self.bias.iter().flat_map(|b| b.to_le_bytes()));
        out
    }

    pub fn compute_digest(&self) -> Digest {
        sha256(&self.weight_encoding())
    }

    pub fn check_integrity(&self) -> Result<(), ModelError> {
        self.check_shape()?;
        if self.compute_digest() != self.digest {
            return Err(ModelError::Integrity);
        }
        Ok(())
    }

    pub fn scores(&self, input: &[i32]) -> Result<Vec<i64>, ModelError> {
        let d = self.features as usize;
        if input.len() != d {
            return Err(ModelError::InputShape {
                got: input.len(),
                want: d,
            });
        }
        self.weights
            .chunks_exact(d)
            .zip(&self.bias)
            .map(|(row, &b)| {
                let mut acc = (b as i64) << FIXED_SHIFT;
                for (&w, &x) in row.iter().zip(input) {
                    let term = (w as i64).checked_mul(x as i64).ok_or(ModelError::Overflow)?;
                    acc = acc.checked_add(term).ok_or(ModelError::Overflow)?;
                }
                Ok(acc)
            })
            .collect()
    }

    pub fn classify(&self, input: &[i32]) -> Result<u32, ModelError> {
        let scores = self.scores(input)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }

    /// Canonical CBOR: `{1: classes, 2: features, 3: [weights], 4: [bias],
    /// 5: version, 6: max_inferences|null, 7: valid_until|null, 8: digest}`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.map(8);
        w.uint(1).uint(self.classes as u64);
        w.uint(2).uint(self.features as u64);
        w.uint(3).array(self.weights.len());
        for &x in &self.weights {
            w.int(x as i64);
        }
        w.uint(4).array(self.bias.len());
        for &x in &self.bias {
            w.int(x as i64);
        }
        w.uint(5).uint(self.version as u64);
        w.uint(6);
        match self.policy.max_inferences {
            Some(n) => w.uint(n),
            None => w.null(),
        };
        w.uint(7);
        match self.policy.valid_until {
            Some(n) => w.uint(n),
            None => w.null(),
        };
        w.uint(8).bytes(&self.digest);
        w.into_bytes()
    }

    /// Decode without checking the digest; see [`Self::check_integrity`].
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        fn small<T: TryFrom<u64>>(r: &mut Reader<'_>) -> Result<T, DecodeError> {
            let at = r.position();
            let v = r.uint()?;
            T::try_from(v).map_err(|_| DecodeError::new(at, "integer out of range"))
        }
        fn ints(r: &mut Reader<'_>) -> Result<Vec<i32>, DecodeError> {
            let n = r.array()?;
            (0..n)
                .map(|_| {
                    let at = r.position();
                    i32::try_from(r.int()?).map_err(|_| DecodeError::new(at, "integer out of range"))
                })
                .collect()
        }
        let mut r = Reader::new(bytes);
        r.map_exact(8)?;
        r.key(1)?;
        let classes = small(&mut r)?;
        r.key(2)?;
        let features = small(&mut r)?;
        r.key(3)?;
        let weights = ints(&mut r)?;
        r.key(4)?;
        let bias = ints(&mut r)?;
        r.key(5)?;
        let version = small(&mut r)?;
        r.key(6)?;
        let max_inferences = r.opt_uint()?;
        r.key(7)?;
        let valid_until = r.opt_uint()?;
        r.key(8)?;
        let digest = r.bytes_fixed()?;
        r.finish()?;
        Ok(Self {
            classes,
            features,
            weights,
            bias,
            version,
            policy: Policy {
                max_inferences,
                valid_until,
            },
            digest,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("no model loaded")]
    NoModel,
    #[error("usage policy exhausted: {0:?}")]
    PolicyExhausted(TerminationReason),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A loaded model together with its policy and usage counter. Every
/// inference is gated on the policy, so completed inferences can never
/// exceed the limit.
#[derive(Clone, Debug, Default)]
pub struct InferenceEngine {
    model: Option<ModelPackage>,
    inference_count: u64,
}

impl InferenceEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&mut self, package: ModelPackage) -> Result<(), ModelError> {
        package.check_integrity()?;
        self.model = Some(package);
        Ok(())
    }

    pub fn model(&self) -> Option<&ModelPackage> {
        self.model.as_ref()
    }

    pub fn inference_count(&self) -> u64 {
        self.inference_count
    }

    pub fn enforce_policy(&self, now: u64) -> Result<PolicyDecision, InferError> {
        let model = self.model.as_ref().ok_or(InferError::NoModel)?;
        Ok(enforce_policy(&model.policy, self.inference_count, now))
    }

    pub fn infer(&mut self, input: &[i32], now: u64) -> Result<u32, InferError> {
        if let PolicyDecision::RequestTermination(why) = self.enforce_policy(now)? {
            return Err(InferError::PolicyExhausted(why));
        }
        let class = self.model.as_ref().ok_or(InferError::NoModel)?.classify(input)?;
        self.inference_count += 1;
        Ok(class)
    }
}
