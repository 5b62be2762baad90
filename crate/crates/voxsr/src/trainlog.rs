//! Newline-delimited JSON training log.

use std::io::Write;

use serde::{Deserialize, Serialize};
use voxsr_core::train::{StepRecord, ValMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub g_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_perc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub g_skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_skipped: Option<bool>,
}

/// One line: either a step's loss terms or a validation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr: Option<f64>,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub terms: Option<Terms>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val: Option<ValMetrics>,
}

impl LogRecord {
    pub fn from_step(r: &StepRecord, wall_ms: u64) -> Self {
        let terms = Terms {
            g_total: r.g_total,
            g_pixel: r.g_pixel,
            g_adv: r.g_adv,
            g_perc: r.g_perc,
            d_loss: r.d_loss,
            g_skipped: r.g_skipped,
            d_skipped: r.d_skipped,
        };
        LogRecord { step: r.step, lr: Some(r.lr), wall_ms, terms: Some(terms), val: None }
    }

    pub fn from_val(step: u64, val: ValMetrics, wall_ms: u64) -> Self {
        LogRecord { step, lr: None, wall_ms, terms: None, val: Some(val) }
    }

    pub fn write_line(&self, w: &mut impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, self)?;
        w.write_all(b"\n")
    }
}

pub fn parse_log(text: &str) -> serde_json::Result<Vec<LogRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
