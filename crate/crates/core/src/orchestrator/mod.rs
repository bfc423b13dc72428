// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Normal-world side of the pipeline: image fetch, realm setup, provider
//! traffic relay, the exchange region and teardown.

pub mod config;
pub mod exchange;
pub mod image;
pub mod pipeline;
pub mod transcript;

pub use config::{ConfigError, RunConfig};
pub use exchange::{Exchange, ExchangeError};
pub use image::{fetch_realm_image, ImageError, ImageSpec, RealmImage};
pub use pipeline::{
    fixture_inputs, run_normal_vm, run_pipeline, Abort, Endpoint, NormalRun, PipelineConfig, PipelineError, PipelineRun,
};
pub use transcript::{PipelineTranscript, StepEntry};
