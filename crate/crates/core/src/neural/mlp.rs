use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mat::{matmul, matmul_nt, matmul_tn_acc, Mat};
use super::params::{glorot_uniform, Layout, NetworkParams};
use super::{NeuralError, Regressor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Tanh,
    Sigmoid,
    Identity,
}

impl OutputActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Tanh => x.tanh(),
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            OutputActivation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Tanh => 1.0 - y * y,
            OutputActivation::Sigmoid => y * (1.0 - y),
            OutputActivation::Identity => 1.0,
        }
    }
}

/// ReLU MLP: `n_hidden_layers` hidden layers of width `hidden_dim`, then a
/// linear layer and the output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    /// Fixed std-dev of the truncated Gaussian action distribution. Stored for
    /// completeness; the policy is trained and run as its mean.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn default_sigma() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    pub fn policy(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 256,
            n_hidden_layers: 4,
            output_dim,
            output_activation: OutputActivation::Tanh,
            sigma: default_sigma(),
            bias: true,
        }
    }

    pub fn probe(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 256,
            n_hidden_layers: 2,
            output_dim: 1,
            output_activation: OutputActivation::Sigmoid,
            sigma: default_sigma(),
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0
            || self.output_dim == 0
            || (self.n_hidden_layers > 0 && self.hidden_dim == 0)
        {
            return Err(NeuralError::InvalidSpec("MLP dimensions must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat_n(self.hidden_dim, self.n_hidden_layers));
        w.push(self.output_dim);
        w
    }

    pub fn layout(&self) -> Layout {
        let mut l = Layout::default();
        for (i, pair) in self.widths().windows(2).enumerate() {
            l.push(format!("w{i}"), pair[0], pair[1]);
            if self.bias {
                l.push(format!("b{i}"), 1, pair[1]);
            }
        }
        l
    }

    /// Seeded Glorot-uniform weights, zero biases.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> NetworkParams {
        let mut p = NetworkParams::zeros(&self.layout());
        for (i, pair) in self.widths().windows(2).enumerate() {
            glorot_uniform(p.slice_mut(&format!("w{i}")), pair[0], pair[1], rng);
        }
        p
    }

    fn n_layers(&self) -> usize {
        self.n_hidden_layers + 1
    }
}

struct Trace {
    /// Layer inputs; `acts[0]` is the batch itself.
    acts: Vec<Mat>,
    out: Mat,
}

fn forward_trace(params: &[f64], spec: &MlpSpec, x: &Mat) -> Result<Trace, NeuralError> {
    if x.cols != spec.input_dim {
        return Err(NeuralError::ShapeMismatch {
            expected: spec.input_dim,
            got: x.cols,
        });
    }
    let layout = spec.layout();
    let widths = spec.widths();
    let mut acts = Vec::with_capacity(spec.n_layers());
    let mut cur = x.clone();
    let mut vi = 0;
    for l in 0..spec.n_layers() {
        let w = &layout.views[vi];
        vi += 1;
        let mut z = matmul(&cur, &params[w.range()], widths[l + 1]);
        if spec.bias {
            z.add_row_vec(&params[layout.views[vi].range()]);
            vi += 1;
        }
        let last = l + 1 == spec.n_layers();
        if last {
            z.data
                .iter_mut()
                .for_each(|v| *v = spec.output_activation.apply(*v));
        } else {
            z.data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(std::mem::replace(&mut cur, z));
    }
    Ok(Trace { acts, out: cur })
}

pub fn mlp_forward(params: &NetworkParams, spec: &MlpSpec, x: &Mat) -> Result<Mat, NeuralError> {
    Ok(forward_trace(&params.values, spec, x)?.out)
}

/// Mean-over-batch squared error and its exact gradient.
pub fn mlp_backward(
    params: &[f64],
    spec: &MlpSpec,
    x: &Mat,
    targets: &Mat,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let trace = forward_trace(params, spec, x)?;
    if targets.rows != x.rows || targets.cols != spec.output_dim {
        return Err(NeuralError::ShapeMismatch {
            expected: spec.output_dim,
            got: targets.cols,
        });
    }
    let batch = x.rows.max(1) as f64;
    let layout = spec.layout();
    let widths = spec.widths();
    let mut grad = vec![0.0; layout.total];

    let mut loss = 0.0;
    let mut delta = Mat::zeros(trace.out.rows, trace.out.cols);
    for ((d, &y), &t) in delta.data.iter_mut().zip(&trace.out.data).zip(&targets.data) {
        let e = y - t;
        loss += e * e;
        *d = 2.0 * e / batch * spec.output_activation.grad_from_output(y);
    }
    loss /= batch;

    let per_layer = if spec.bias { 2 } else { 1 };
    for l in (0..spec.n_layers()).rev() {
        let w = &layout.views[l * per_layer];
        matmul_tn_acc(&trace.acts[l], &delta, &mut grad[w.range()]);
        if spec.bias {
            let b = &layout.views[l * per_layer + 1];
            delta.col_sums_into(&mut grad[b.range()]);
        }
        if l == 0 {
            break;
        }
        let mut prev = matmul_nt(&delta, &params[w.range()], widths[l]);
        // ReLU mask from the stored post-activation.
        for (p, &a) in prev.data.iter_mut().zip(&trace.acts[l].data) {
            if a <= 0.0 {
                *p = 0.0;
            }
        }
        delta = prev;
    }
    Ok((loss, grad))
}

impl Regressor for MlpSpec {
    fn n_params(&self) -> usize {
        self.layout().total
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict(&self, params: &[f64], x: &Mat) -> Result<Mat, NeuralError> {
        Ok(forward_trace(params, self, x)?.out)
    }

    fn loss_grad(&self, params: &[f64], x: &Mat, y: &Mat) -> Result<(f64, Vec<f64>), NeuralError> {
        mlp_backward(params, self, x, y)
    }
}
