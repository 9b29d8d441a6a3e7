use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamView {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Builder for a flat parameter layout.
#[derive(Debug, Default, Clone)]
pub struct Layout {
    pub views: Vec<ParamView>,
    pub total: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamView {
        let v = ParamView {
            name: name.into(),
            offset: self.total,
            rows,
            cols,
        };
        self.total += rows * cols;
        self.views.push(v.clone());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Flat parameter vector with its optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub values: Vec<f64>,
    pub adam: AdamState,
    pub views: Vec<ParamView>,
}

impl NetworkParams {
    pub fn zeros(layout: &Layout) -> Self {
        let n = layout.total;
        Self {
            values: vec![0.0; n],
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
            views: layout.views.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn view(&self, name: &str) -> Option<&ParamView> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        let v = self.view(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
        &self.values[v.range()]
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self
            .view(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
            .range();
        &mut self.values[r]
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(out: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    out.iter_mut().for_each(|w| *w = rng.gen_range(-limit..limit));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut NetworkParams,
    grad: &[f64],
    cfg: &AdamConfig,
) -> Result<(), NeuralError> {
    if grad.len() != params.values.len() {
        return Err(NeuralError::LengthMismatch {
            expected: params.values.len(),
            got: grad.len(),
        });
    }
    let st = &mut params.adam;
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((w, g), m), v) in params
        .values
        .iter_mut()
        .zip(grad)
        .zip(st.m.iter_mut())
        .zip(st.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
