// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Deterministic desk-scale simulator of a confidential inference pipeline
//! built on a realm-style confidential computing architecture.
//!
//! The crate models four physical address spaces partitioned into granules,
//! a Realm Management Monitor that validates host commands and services
//! realm calls, measured realm construction with two-part attestation
//! reports, a model provider that only releases models to attested realms,
//! the inference runtime that executes inside a realm, the host-side
//! orchestrator that drives the end-to-end pipeline, and an instruction cost
//! model that compares realm VMs against ordinary normal-world VMs.
//!
//! Everything is single-threaded and seeded; identical inputs always give
//! byte-identical outputs. Batch workloads (fuzzing, tamper sweeps,
//! repeated experiment runs) fan out through [`parallel`], which uses rayon
//! when the `parallel` feature is enabled and plain iterators otherwise.

pub mod attestation;
pub mod cbor;
pub mod cost;
pub mod granule;
mod hexfmt;
pub mod keys;
pub mod orchestrator;
pub mod parallel;
pub mod provider;
pub mod rmm;
pub mod runtime;
pub mod script;
pub mod seed;
pub mod sweep;

pub use attestation::{AttestationReport, ReferenceValues, RejectReason, Verdict};
pub use cost::{CostLedger, CostProfile, EventKind, Phase};
pub use granule::{AccessKind, GranuleId, GranuleSpace, GranuleState, World, GRANULE_SIZE};
pub use rmm::{ExitReason, Machine, MachineConfig, RealmId, RealmState};

/// A SHA-256 digest.
pub type Digest = [u8; 32];
