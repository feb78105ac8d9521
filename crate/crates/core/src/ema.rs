//! Exponential moving average of flat parameter vectors and early-stop epoch
//! selection.
//!
//! The shadow is initialized to the first weights seen (no bias correction),
//! then `shadow = decay * shadow + (1 - decay) * weights`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DECAY: f64 = 0.999;

/// Magic bytes opening a flat checkpoint file.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FLATCKP1";

#[derive(Debug, Error)]
pub enum EmaError {
    #[error("shape error: expected {expected} parameters, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("config error: decay must be in [0, 1), got {0}")]
    Decay(f64),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("invalid AP curve: {0}")]
    Curve(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    decay: f64,
    shadow: Option<Vec<f64>>,
    step: u64,
}

impl EmaState {
    pub fn new(decay: f64) -> Result<Self, EmaError> {
        if !(0.0..1.0).contains(&decay) {
            return Err(EmaError::Decay(decay));
        }
        Ok(Self {
            decay,
            shadow: None,
            step: 0,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn shadow(&self) -> Option<&[f64]> {
        self.shadow.as_deref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Folds one weight vector into the shadow.
    pub fn update(&mut self, weights: &[f64]) -> Result<(), EmaError> {
        match &mut self.shadow {
            None => self.shadow = Some(weights.to_vec()),
            Some(shadow) => {
                if shadow.len() != weights.len() {
                    return Err(EmaError::Shape {
                        expected: shadow.len(),
                        got: weights.len(),
                    });
                }
                let keep = self.decay;
                let take = 1.0 - self.decay;
                for (s, &w) in shadow.iter_mut().zip(weights) {
                    *s = keep * *s + take * w;
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Value-returning form of [`EmaState::update`].
pub fn ema_update(state: &EmaState, weights: &[f64]) -> Result<EmaState, EmaError> {
    let mut next = state.clone();
    next.update(weights)?;
    Ok(next)
}

/// Writes `magic | param_count (u64 LE) | param_count f32 LE`.
pub fn write_checkpoint<W: Write>(mut out: W, params: &[f32]) -> Result<(), EmaError> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<f32>, EmaError> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| EmaError::Format("truncated header".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(EmaError::Format(format!("bad magic {magic:02x?}")));
    }
    let mut count = [0u8; 8];
    input
        .read_exact(&mut count)
        .map_err(|_| EmaError::Format("truncated header".into()))?;
    let count = u64::from_le_bytes(count);
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() as u64 != count.saturating_mul(4) {
        return Err(EmaError::Format(format!(
            "header declares {count} parameters but body holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// One evaluation point, APs in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApRecord {
    pub epoch: u32,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "APr")]
    pub ap_r: f64,
    #[serde(rename = "APc")]
    pub ap_c: f64,
    #[serde(rename = "APf")]
    pub ap_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApCurve {
    records: Vec<ApRecord>,
}

impl ApCurve {
    /// Checks that epochs strictly increase and every AP lies in `[0, 100]`.
    pub fn new(records: Vec<ApRecord>) -> Result<Self, EmaError> {
        for pair in records.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(EmaError::Curve(format!(
                    "epoch {} follows epoch {}",
                    pair[1].epoch, pair[0].epoch
                )));
            }
        }
        for r in &records {
            for v in [r.ap, r.ap_r, r.ap_c, r.ap_f] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(EmaError::Curve(format!(
                        "epoch {} has AP {v} outside [0, 100]",
                        r.epoch
                    )));
                }
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ApRecord] {
        &self.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionCriterion {
    MaxAp,
    /// Maximize the worst of AP_r, AP_c, AP_f.
    MaxMinBucket,
    Weighted {
        rare: f64,
        common: f64,
        frequent: f64,
    },
}

impl SelectionCriterion {
    pub fn score(&self, r: &ApRecord) -> f64 {
        match *self {
            SelectionCriterion::MaxAp => r.ap,
            SelectionCriterion::MaxMinBucket => r.ap_r.min(r.ap_c).min(r.ap_f),
            SelectionCriterion::Weighted {
                rare,
                common,
                frequent,
            } => rare * r.ap_r + common * r.ap_c + frequent * r.ap_f,
        }
    }
}

impl std::str::FromStr for SelectionCriterion {
    type Err = String;

    /// `max_ap`, `max_min_bucket`, or `weighted:w_r,w_c,w_f`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_ap" => Ok(Self::MaxAp),
            "max_min_bucket" => Ok(Self::MaxMinBucket),
            _ => {
                let weights = s
                    .strip_prefix("weighted:")
                    .ok_or_else(|| format!("unknown criterion {s:?}"))?;
                let w: Vec<f64> = weights
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| format!("weight {v:?}: {e}"))
                    })
                    .collect::<Result<_, _>>()?;
                match w[..] {
                    [rare, common, frequent] => Ok(Self::Weighted {
                        rare,
                        common,
                        frequent,
                    }),
                    _ => Err(format!("weighted needs 3 weights, got {}", w.len())),
                }
            }
        }
    }
}

/// Epoch with the highest criterion value; the earliest epoch wins ties.
pub fn select_epoch(curve: &ApCurve, criterion: SelectionCriterion) -> Result<u32, EmaError> {
    let mut best: Option<(f64, u32)> = None;
    for r in curve.records() {
        let v = criterion.score(r);
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, r.epoch));
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| EmaError::Selection("empty AP curve".into()))
}
