// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

/// One line of the pipeline log. `step` is `None` for termination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEntry {
    pub stage: String,
    pub step: Option<u8>,
    pub tick: u64,
    pub outcome: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTranscript {
    pub entries: Vec<StepEntry>,
}

impl PipelineTranscript {
    pub fn push(&mut self, stage: &str, step: Option<u8>, tick: u64, outcome: impl Into<String>) {
        self.entries.push(StepEntry {
            stage: stage.to_string(),
            step,
            tick,
            outcome: outcome.into(),
        });
    }

    pub fn count_step(&self, step: u8) -> usize {
        self.entries.iter().filter(|e| e.step == Some(step)).count()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Check the shape of a completed run: steps 1 to 6 once each and in
    /// order, then any mix of 7 and 8, then termination entries only. Ticks
    /// never decrease.
    pub fn validate(&self) -> Result<(), String> {
        let mut expect_next = 1u8;
        let mut terminated = false;
        let mut last_tick = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.tick < last_tick {
                return Err(format!("entry {i}: tick goes backwards"));
            }
            last_tick = e.tick;
            match e.step {
                None => terminated = true,
                Some(_) if terminated => return Err(format!("entry {i}: step after termination")),
                Some(s @ 1..=6) => {
                    if s != expect_next {
                        return Err(format!("entry {i}: step {s} where step {expect_next} was due"));
                    }
                    expect_next += 1;
                }
                Some(7 | 8) => {
                    if expect_next != 7 {
                        return Err(format!("entry {i}: step {:?} before readiness", e.step));
                    }
                }
                Some(s) => return Err(format!("entry {i}: unknown step {s}")),
            }
        }
        if expect_next != 7 {
            return Err(format!("pipeline stopped before step {expect_next}"));
        }
        if !terminated {
            return Err("no termination entry".into());
        }
        Ok(())
    }
}
