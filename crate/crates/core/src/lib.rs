//! Measuring and mitigating temporal entanglement in frozen per-frame
//! features for behaviour cloning.
//!
//! * [`trajstore`]: demonstration corpora and their on-disk format.
//! * [`metrics`]: short/long-range entanglement metrics and PCA projection.
//! * [`tempenc`]: sinusoidal timestep encoding and FLARE-style stacking.
//! * [`neural`]: MLP and causal-transformer regressors, Adam, gradient checks.
//! * [`synthworld`]: a latent toy world with a tunable entanglement knob.
//! * [`analysis`]: probes, BC training, statistics and the study harness.

pub mod analysis;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod seeds;
pub mod synthworld;
pub mod tempenc;
pub mod trajstore;
