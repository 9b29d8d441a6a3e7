//! Timestep encodings and history stacking used to inject a temporal signal
//! into per-frame policy inputs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TempEncError {
    #[error("invalid encoding config: {0}")]
    InvalidConfig(String),
    #[error("row {row}: expected {expected} columns, got {got}")]
    ShapeMismatch { row: usize, expected: usize, got: usize },
}

impl TempEncError {
    pub fn kind(&self) -> &'static str {
        match self {
            TempEncError::InvalidConfig(_) => "InvalidConfig",
            TempEncError::ShapeMismatch { .. } => "ShapeMismatch",
        }
    }
}

/// Frequency ladder for the sinusoidal bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencySchedule {
    /// `theta_k = 2^k * pi * n / scale^k`.
    #[default]
    Geometric,
    /// Transformer-style `theta_k = n / scale^(k / bands)`. Ablation only.
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncodingConfig {
    pub bands: usize,
    pub scale: f64,
    #[serde(default)]
    pub schedule: FrequencySchedule,
}

impl Default for TemporalEncodingConfig {
    fn default() -> Self {
        Self {
            bands: 32,
            scale: 100.0,
            schedule: FrequencySchedule::Geometric,
        }
    }
}

impl TemporalEncodingConfig {
    pub fn new(bands: usize, scale: f64) -> Result<Self, TempEncError> {
        let c = Self {
            bands,
            scale,
            schedule: FrequencySchedule::Geometric,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TempEncError> {
        if self.bands == 0 {
            return Err(TempEncError::InvalidConfig("bands must be positive".into()));
        }
        if !(self.scale > 1.0) {
            return Err(TempEncError::InvalidConfig(format!(
                "scale must exceed 1, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.bands
    }

    fn angle(&self, n: u64, k: usize) -> f64 {
        let n = n as f64;
        match self.schedule {
            // (2/s)^k underflows gracefully to 0 for large k.
            FrequencySchedule::Geometric => PI * n * (2.0 / self.scale).powi(k as i32),
            FrequencySchedule::Classic => n / self.scale.powf(k as f64 / self.bands as f64),
        }
    }
}

/// `(sin θ_0, cos θ_0, …, sin θ_{B-1}, cos θ_{B-1})` for timestep `n`.
///
/// With the geometric schedule band 0 is `θ_0 = πn`, so for integer `n` its
/// sine is zero and its cosine alternates `±1`.
pub fn temporal_encode(n: u64, config: &TemporalEncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(config.output_dim());
    for k in 0..config.bands {
        let (s, c) = config.angle(n, k).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Per-frame `concat(features[n], proprio[n], γ(n))`.
pub fn augment_with_te(
    features: &[Vec<f64>],
    proprio: &[Vec<f64>],
    config: &TemporalEncodingConfig,
) -> Result<Vec<Vec<f64>>, TempEncError> {
    if features.len() != proprio.len() {
        return Err(TempEncError::ShapeMismatch {
            row: 0,
            expected: features.len(),
            got: proprio.len(),
        });
    }
    Ok(features
        .iter()
        .zip(proprio)
        .enumerate()
        .map(|(n, (f, p))| {
            let mut row = Vec::with_capacity(f.len() + p.len() + config.output_dim());
            row.extend_from_slice(f);
            row.extend_from_slice(p);
            row.extend(temporal_encode(n as u64, config));
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlareConfig {
    /// Number of stacked frames, current one included.
    pub history: usize,
    pub include_differences: bool,
}

impl Default for FlareConfig {
    fn default() -> Self {
        Self {
            history: 3,
            include_differences: true,
        }
    }
}

impl FlareConfig {
    pub fn output_dim(&self, feature_dim: usize) -> usize {
        let blocks = if self.include_differences {
            2 * self.history - 1
        } else {
            self.history
        };
        blocks * feature_dim
    }
}

/// One FLARE row from an oldest-first window of `history` frames:
/// the frames themselves followed by their consecutive differences.
pub fn flare_row(window: &[&[f64]], include_differences: bool) -> Vec<f64> {
    let d = window.first().map_or(0, |f| f.len());
    let blocks = if include_differences { 2 * window.len() - 1 } else { window.len() };
    let mut row = Vec::with_capacity(blocks * d);
    for f in window {
        row.extend_from_slice(f);
    }
    if include_differences {
        for pair in window.windows(2) {
            row.extend(pair[1].iter().zip(pair[0]).map(|(b, a)| b - a));
        }
    }
    row
}

/// FLARE augmentation of a whole trajectory. Indices before the episode
/// start are padded with frame 0.
pub fn augment_with_flare(
    features: &[Vec<f64>],
    config: &FlareConfig,
) -> Result<Vec<Vec<f64>>, TempEncError> {
    if config.history == 0 {
        return Err(TempEncError::InvalidConfig("history must be at least 1".into()));
    }
    let h = config.history as isize;
    Ok((0..features.len() as isize)
        .map(|t| {
            let window: Vec<&[f64]> = (t - h + 1..=t)
                .map(|i| features[i.max(0) as usize].as_slice())
                .collect();
            flare_row(&window, config.include_differences)
        })
        .collect())
}

/// Rolling buffer of the most recent frames for closed-loop use; mirrors
/// [`augment_with_flare`] including start-of-episode padding.
#[derive(Debug, Clone)]
pub struct FrameHistory {
    capacity: usize,
    frames: std::collections::VecDeque<Vec<f64>>,
}

impl FrameHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            frames: std::collections::VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Push a frame; while filling, the oldest frame is repeated as padding.
    pub fn push(&mut self, frame: &[f64]) {
        if self.frames.is_empty() {
            for _ in 0..self.capacity {
                self.frames.push_back(frame.to_vec());
            }
            return;
        }
        self.frames.pop_front();
        self.frames.push_back(frame.to_vec());
    }

    /// Oldest-first view of the buffered frames.
    pub fn window(&self) -> Vec<&[f64]> {
        self.frames.iter().map(|f| f.as_slice()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_is_sin0_cos1() {
        let g = temporal_encode(0, &TemporalEncodingConfig::default());
        assert_eq!(g.len(), 64);
        for pair in g.chunks(2) {
            assert_eq!(pair, [0.0, 1.0]);
        }
    }

    #[test]
    fn band_zero_at_one_is_pi() {
        let g = temporal_encode(1, &TemporalEncodingConfig::default());
        assert!(g[0].abs() < 1e-15);
        assert_eq!(g[1], -1.0);
    }

    #[test]
    fn quarter_period_band_one() {
        let g = temporal_encode(25, &TemporalEncodingConfig::default());
        assert!((g[2] - 1.0).abs() < 1e-15);
        assert!(g[3].abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        assert!(TemporalEncodingConfig::new(0, 100.0).is_err());
        assert!(TemporalEncodingConfig::new(4, 1.0).is_err());
        assert!(TemporalEncodingConfig::new(4, 2.0).is_ok());
    }

    #[test]
    fn te_concatenation() {
        let f = vec![vec![0.5, -0.25], vec![1.0, 2.0]];
        let p = vec![vec![0.1], vec![0.2]];
        let out = augment_with_te(&f, &p, &TemporalEncodingConfig::default()).unwrap();
        assert_eq!(out[0].len(), 67);
        assert_eq!(&out[1][..3], &[1.0, 2.0, 0.2]);
        assert!(out[0][3..].chunks(2).all(|c| c == [0.0, 1.0]));
    }

    #[test]
    fn flare_padding_and_definition() {
        let f = vec![vec![0.0], vec![1.0], vec![3.0]];
        let out = augment_with_flare(&f, &FlareConfig::default()).unwrap();
        assert_eq!(out[0], vec![0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(out[1], vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(out[2], vec![0.0, 1.0, 3.0, 1.0, 2.0]);
    }

    #[test]
    fn flare_without_differences() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let cfg = FlareConfig {
            history: 2,
            include_differences: false,
        };
        let out = augment_with_flare(&f, &cfg).unwrap();
        assert_eq!(out[1], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cfg.output_dim(2), 4);
        assert_eq!(FlareConfig::default().output_dim(7), 35);
    }

    #[test]
    fn rolling_history_matches_batch() {
        let f: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let batch = augment_with_flare(&f, &FlareConfig::default()).unwrap();
        let mut h = FrameHistory::new(3);
        for (t, frame) in f.iter().enumerate() {
            h.push(frame);
            assert_eq!(flare_row(&h.window(), true), batch[t]);
        }
    }
}
