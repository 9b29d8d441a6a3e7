//! Causal transformer policy with action chunking.
//!
//! Tokens are per-frame inputs. Each token is linearly embedded and given a
//! learned positional embedding, then passed through `n_layers` pre-norm
//! blocks (causal multi-head self-attention, GELU feed-forward). A final
//! layer norm and a tanh head map the last token's state to a chunk of
//! `chunk_len` future actions.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mat::{matmul, matmul_nt, matmul_tn_acc, Mat};
use super::params::{glorot_uniform, Layout, NetworkParams, ParamView};
use super::{NeuralError, Regressor};
use crate::par;

const LN_EPS: f64 = 1e-5;
/// Samples per gradient shard; shards are reduced in index order.
const SHARD: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalTransformerSpec {
    pub context_len: usize,
    pub chunk_len: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub input_dim: usize,
    pub action_dim: usize,
}

impl CausalTransformerSpec {
    pub fn new(input_dim: usize, action_dim: usize) -> Self {
        Self {
            context_len: 12,
            chunk_len: 12,
            embed_dim: 128,
            n_heads: 4,
            n_layers: 1,
            ffn_dim: 256,
            input_dim,
            action_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let dims = [
            self.context_len,
            self.chunk_len,
            self.embed_dim,
            self.n_heads,
            self.n_layers,
            self.ffn_dim,
            self.input_dim,
            self.action_dim,
        ];
        if dims.contains(&0) {
            return Err(NeuralError::InvalidSpec("transformer dimensions must be positive".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(NeuralError::InvalidSpec(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn out_dim(&self) -> usize {
        self.chunk_len * self.action_dim
    }

    pub fn layout(&self) -> Layout {
        let (d, f) = (self.embed_dim, self.ffn_dim);
        let mut l = Layout::default();
        l.push("embed.w", self.input_dim, d);
        l.push("embed.b", 1, d);
        l.push("pos", self.context_len, d);
        for b in 0..self.n_layers {
            l.push(format!("blk{b}.ln1.g"), 1, d);
            l.push(format!("blk{b}.ln1.b"), 1, d);
            for m in ["q", "k", "v", "o"] {
                l.push(format!("blk{b}.{m}.w"), d, d);
                l.push(format!("blk{b}.{m}.b"), 1, d);
            }
            l.push(format!("blk{b}.ln2.g"), 1, d);
            l.push(format!("blk{b}.ln2.b"), 1, d);
            l.push(format!("blk{b}.ff1.w"), d, f);
            l.push(format!("blk{b}.ff1.b"), 1, f);
            l.push(format!("blk{b}.ff2.w"), f, d);
            l.push(format!("blk{b}.ff2.b"), 1, d);
        }
        l.push("lnf.g", 1, d);
        l.push("lnf.b", 1, d);
        l.push("head.w", d, self.out_dim());
        l.push("head.b", 1, self.out_dim());
        l
    }

    /// Glorot-uniform matrices, unit layer-norm gains, small positional
    /// embeddings, zero biases.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> NetworkParams {
        let layout = self.layout();
        let mut p = NetworkParams::zeros(&layout);
        for v in &layout.views {
            let s = &mut p.values[v.range()];
            if v.name.ends_with(".g") {
                s.fill(1.0);
            } else if v.name == "pos" {
                glorot_uniform(s, v.rows, v.cols, rng);
                s.iter_mut().for_each(|x| *x *= 0.1);
            } else if v.name.ends_with(".w") {
                glorot_uniform(s, v.rows, v.cols, rng);
            }
        }
        p
    }
}

/// Resolved offsets of every tensor, to avoid string lookups in hot loops.
struct Views {
    embed_w: ParamView,
    embed_b: ParamView,
    pos: ParamView,
    blocks: Vec<BlockViews>,
    lnf_g: ParamView,
    lnf_b: ParamView,
    head_w: ParamView,
    head_b: ParamView,
}

struct BlockViews {
    ln1_g: ParamView,
    ln1_b: ParamView,
    q_w: ParamView,
    q_b: ParamView,
    k_w: ParamView,
    k_b: ParamView,
    v_w: ParamView,
    v_b: ParamView,
    o_w: ParamView,
    o_b: ParamView,
    ln2_g: ParamView,
    ln2_b: ParamView,
    ff1_w: ParamView,
    ff1_b: ParamView,
    ff2_w: ParamView,
    ff2_b: ParamView,
}

impl Views {
    fn new(spec: &CausalTransformerSpec) -> Self {
        let layout = spec.layout();
        let mut it = layout.views.into_iter();
        let mut next = || it.next().expect("layout order");
        let embed_w = next();
        let embed_b = next();
        let pos = next();
        let blocks = (0..spec.n_layers)
            .map(|_| BlockViews {
                ln1_g: next(),
                ln1_b: next(),
                q_w: next(),
                q_b: next(),
                k_w: next(),
                k_b: next(),
                v_w: next(),
                v_b: next(),
                o_w: next(),
                o_b: next(),
                ln2_g: next(),
                ln2_b: next(),
                ff1_w: next(),
                ff1_b: next(),
                ff2_w: next(),
                ff2_b: next(),
            })
            .collect();
        Self {
            embed_w,
            embed_b,
            pos,
            blocks,
            lnf_g: next(),
            lnf_b: next(),
            head_w: next(),
            head_b: next(),
        }
    }
}

struct LnCache {
    xhat: Mat,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> (Mat, LnCache) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let r = x.row(i);
        let mu = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(s);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (r[j] - mu) * s;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = g[j] * xh[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates dg and db.
fn layer_norm_backward(dy: &Mat, cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = cache.rstd[i] * (dyr[j] * g[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct BlockCache {
    input: Mat,
    ln1: LnCache,
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention probabilities per head, each `[L×L]` row-major.
    probs: Vec<Vec<f64>>,
    attn: Mat,
    ln2: LnCache,
    bn: Mat,
    u: Mat,
    gact: Mat,
}

struct Trace {
    x: Mat,
    blocks: Vec<BlockCache>,
    final_state: Mat,
    lnf: LnCache,
    lnf_out: Mat,
    out: Vec<f64>,
}

fn linear(x: &Mat, p: &[f64], w: &ParamView, b: &ParamView) -> Mat {
    let mut y = matmul(x, &p[w.range()], w.cols);
    y.add_row_vec(&p[b.range()]);
    y
}

fn block_forward(
    p: &[f64],
    bv: &BlockViews,
    spec: &CausalTransformerSpec,
    input: Mat,
) -> (Mat, BlockCache) {
    let l = input.rows;
    let (d, nh, dh) = (spec.embed_dim, spec.n_heads, spec.head_dim());
    let (a, ln1) = layer_norm(&input, &p[bv.ln1_g.range()], &p[bv.ln1_b.range()]);
    let q = linear(&a, p, &bv.q_w, &bv.q_b);
    let k = linear(&a, p, &bv.k_w, &bv.k_b);
    let v = linear(&a, p, &bv.v_w, &bv.v_b);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = Mat::zeros(l, d);
    let mut probs = Vec::with_capacity(nh);
    for h in 0..nh {
        let off = h * dh;
        let mut pr = vec![0.0; l * l];
        for i in 0..l {
            let qi = &q.row(i)[off..off + dh];
            let row = &mut pr[i * l..(i + 1) * l];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k.row(j)[off..off + dh];
                let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                row[j] = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for s in row.iter_mut().take(i + 1) {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in row.iter_mut().take(i + 1) {
                *s /= z;
            }
            let out = &mut attn.row_mut(i)[off..off + dh];
            for j in 0..=i {
                let vj = &v.row(j)[off..off + dh];
                let w = row[j];
                out.iter_mut().zip(vj).for_each(|(o, x)| *o += w * x);
            }
        }
        probs.push(pr);
    }
    let z = linear(&attn, p, &bv.o_w, &bv.o_b);
    let mut h1 = input.clone();
    h1.data.iter_mut().zip(&z.data).for_each(|(x, y)| *x += y);
    let (bn, ln2) = layer_norm(&h1, &p[bv.ln2_g.range()], &p[bv.ln2_b.range()]);
    let u = linear(&bn, p, &bv.ff1_w, &bv.ff1_b);
    let mut gact = u.clone();
    gact.data.iter_mut().for_each(|x| *x = gelu(*x));
    let y = linear(&gact, p, &bv.ff2_w, &bv.ff2_b);
    let mut h2 = h1.clone();
    h2.data.iter_mut().zip(&y.data).for_each(|(x, y)| *x += y);
    (
        h2,
        BlockCache {
            input,
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            bn,
            u,
            gact,
        },
    )
}

fn check_tokens(spec: &CausalTransformerSpec, tokens: &Mat) -> Result<(), NeuralError> {
    if tokens.cols != spec.input_dim {
        return Err(NeuralError::ShapeMismatch {
            expected: spec.input_dim,
            got: tokens.cols,
        });
    }
    if tokens.rows == 0 || tokens.rows > spec.context_len {
        return Err(NeuralError::ContextOverflow {
            len: tokens.rows,
            max: spec.context_len,
        });
    }
    Ok(())
}

fn forward_trace(p: &[f64], views: &Views, spec: &CausalTransformerSpec, tokens: &Mat) -> Trace {
    let l = tokens.rows;
    let d = spec.embed_dim;
    let mut e = linear(tokens, p, &views.embed_w, &views.embed_b);
    let pos = &p[views.pos.range()];
    e.data
        .iter_mut()
        .zip(&pos[..l * d])
        .for_each(|(x, q)| *x += q);
    let mut blocks = Vec::with_capacity(spec.n_layers);
    let mut state = e;
    for bv in &views.blocks {
        let (next, cache) = block_forward(p, bv, spec, state);
        blocks.push(cache);
        state = next;
    }
    let last = Mat::from_vec(1, d, state.row(l - 1).to_vec());
    let (lnf_out, lnf) = layer_norm(&last, &p[views.lnf_g.range()], &p[views.lnf_b.range()]);
    let mut out = linear(&lnf_out, p, &views.head_w, &views.head_b).data;
    out.iter_mut().for_each(|x| *x = x.tanh());
    Trace {
        x: tokens.clone(),
        blocks,
        final_state: state,
        lnf,
        lnf_out,
        out,
    }
}

/// Action chunk `[chunk_len × action_dim]` for a sequence of 1..=context_len tokens.
pub fn ct_forward(
    params: &NetworkParams,
    spec: &CausalTransformerSpec,
    tokens: &Mat,
) -> Result<Mat, NeuralError> {
    check_tokens(spec, tokens)?;
    let views = Views::new(spec);
    let t = forward_trace(&params.values, &views, spec, tokens);
    Ok(Mat::from_vec(spec.chunk_len, spec.action_dim, t.out))
}

/// Residual-stream state after every block, `[L × embed_dim]` per block.
/// Exposed to test the causal mask.
pub fn ct_hidden_states(
    params: &NetworkParams,
    spec: &CausalTransformerSpec,
    tokens: &Mat,
) -> Result<Vec<Mat>, NeuralError> {
    check_tokens(spec, tokens)?;
    let views = Views::new(spec);
    let t = forward_trace(&params.values, &views, spec, tokens);
    let mut states: Vec<Mat> = t.blocks.iter().skip(1).map(|b| b.input.clone()).collect();
    states.push(t.final_state);
    Ok(states)
}

fn add_into(dst: &mut Mat, src: &Mat) {
    dst.data.iter_mut().zip(&src.data).for_each(|(a, b)| *a += b);
}

fn linear_backward(
    x: &Mat,
    dy: &Mat,
    p: &[f64],
    w: &ParamView,
    b: &ParamView,
    grad: &mut [f64],
) -> Mat {
    matmul_tn_acc(x, dy, &mut grad[w.range()]);
    dy.col_sums_into(&mut grad[b.range()]);
    matmul_nt(dy, &p[w.range()], w.rows)
}

fn split_ln<'a>(grad: &'a mut [f64], g: &ParamView, b: &ParamView) -> (&'a mut [f64], &'a mut [f64]) {
    // gain and bias are adjacent in the layout
    debug_assert_eq!(g.offset + g.len(), b.offset);
    let (lo, hi) = grad[g.offset..b.offset + b.len()].split_at_mut(g.len());
    (lo, hi)
}

fn block_backward(
    p: &[f64],
    bv: &BlockViews,
    spec: &CausalTransformerSpec,
    c: &BlockCache,
    dh2: Mat,
    grad: &mut [f64],
) -> Mat {
    let l = dh2.rows;
    let (d, nh, dh) = (spec.embed_dim, spec.n_heads, spec.head_dim());
    // feed-forward branch
    let dgact = linear_backward(&c.gact, &dh2, p, &bv.ff2_w, &bv.ff2_b, grad);
    let mut du = dgact;
    du.data
        .iter_mut()
        .zip(&c.u.data)
        .for_each(|(g, &u)| *g *= gelu_grad(u));
    let dbn = linear_backward(&c.bn, &du, p, &bv.ff1_w, &bv.ff1_b, grad);
    let (dg2, db2) = split_ln(grad, &bv.ln2_g, &bv.ln2_b);
    let mut dh1 = layer_norm_backward(&dbn, &c.ln2, &p[bv.ln2_g.range()], dg2, db2);
    add_into(&mut dh1, &dh2);

    // attention branch
    let dattn = linear_backward(&c.attn, &dh1, p, &bv.o_w, &bv.o_b, grad);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros(l, d);
    let mut dk = Mat::zeros(l, d);
    let mut dv = Mat::zeros(l, d);
    for h in 0..nh {
        let off = h * dh;
        let pr = &c.probs[h];
        for i in 0..l {
            let doi = &dattn.row(i)[off..off + dh];
            // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
            let mut dp = vec![0.0; i + 1];
            for j in 0..=i {
                let vj = &c.v.row(j)[off..off + dh];
                dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                let pij = pr[i * l + j];
                let dvj = &mut dv.row_mut(j)[off..off + dh];
                dvj.iter_mut().zip(doi).for_each(|(x, g)| *x += pij * g);
            }
            let dot: f64 = (0..=i).map(|j| dp[j] * pr[i * l + j]).sum();
            for j in 0..=i {
                let ds = pr[i * l + j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &c.k.row(j)[off..off + dh];
                let qi = &c.q.row(i)[off..off + dh];
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                dqi.iter_mut().zip(kj).for_each(|(x, k)| *x += ds * k);
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                dkj.iter_mut().zip(qi).for_each(|(x, q)| *x += ds * q);
            }
        }
    }
    let mut da = linear_backward(&c.a, &dq, p, &bv.q_w, &bv.q_b, grad);
    add_into(&mut da, &linear_backward(&c.a, &dk, p, &bv.k_w, &bv.k_b, grad));
    add_into(&mut da, &linear_backward(&c.a, &dv, p, &bv.v_w, &bv.v_b, grad));
    let (dg1, db1) = split_ln(grad, &bv.ln1_g, &bv.ln1_b);
    let mut dinput = layer_norm_backward(&da, &c.ln1, &p[bv.ln1_g.range()], dg1, db1);
    add_into(&mut dinput, &dh1);
    dinput
}

/// Squared-error loss of one sequence, scaled by `weight`, with gradient
/// accumulated into `grad`.
fn sample_backward(
    p: &[f64],
    views: &Views,
    spec: &CausalTransformerSpec,
    tokens: &Mat,
    target: &[f64],
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let t = forward_trace(p, views, spec, tokens);
    let l = tokens.rows;
    let d = spec.embed_dim;
    let mut loss = 0.0;
    let mut dpre = Mat::zeros(1, spec.out_dim());
    for ((g, &y), &tg) in dpre.data.iter_mut().zip(&t.out).zip(target) {
        let e = y - tg;
        loss += e * e;
        *g = 2.0 * e * weight * (1.0 - y * y);
    }
    let dlnf = linear_backward(&t.lnf_out, &dpre, p, &views.head_w, &views.head_b, grad);
    let (dgf, dbf) = split_ln(grad, &views.lnf_g, &views.lnf_b);
    let dlast = layer_norm_backward(&dlnf, &t.lnf, &p[views.lnf_g.range()], dgf, dbf);
    let mut dstate = Mat::zeros(l, d);
    dstate.row_mut(l - 1).copy_from_slice(dlast.row(0));
    for (bv, cache) in views.blocks.iter().zip(&t.blocks).rev() {
        dstate = block_backward(p, bv, spec, cache, dstate, grad);
    }
    // embedding
    let pos_off = views.pos.offset;
    grad[pos_off..pos_off + l * d]
        .iter_mut()
        .zip(&dstate.data)
        .for_each(|(g, x)| *g += x);
    matmul_tn_acc(&t.x, &dstate, &mut grad[views.embed_w.range()]);
    dstate.col_sums_into(&mut grad[views.embed_b.range()]);
    loss * weight
}

/// Each row of `x` is a flattened `[context_len × input_dim]` token window.
impl Regressor for CausalTransformerSpec {
    fn n_params(&self) -> usize {
        self.layout().total
    }

    fn input_dim(&self) -> usize {
        self.context_len * self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.out_dim()
    }

    fn predict(&self, params: &[f64], x: &Mat) -> Result<Mat, NeuralError> {
        if x.cols != Regressor::input_dim(self) {
            return Err(NeuralError::ShapeMismatch {
                expected: Regressor::input_dim(self),
                got: x.cols,
            });
        }
        let views = Views::new(self);
        let rows = par::map_range(x.rows, |i| {
            let tokens = Mat::from_vec(self.context_len, self.input_dim, x.row(i).to_vec());
            forward_trace(params, &views, self, &tokens).out
        });
        Ok(Mat::from_rows(&rows))
    }

    fn loss_grad(&self, params: &[f64], x: &Mat, y: &Mat) -> Result<(f64, Vec<f64>), NeuralError> {
        if x.cols != Regressor::input_dim(self) || y.cols != self.out_dim() || x.rows != y.rows {
            return Err(NeuralError::ShapeMismatch {
                expected: Regressor::input_dim(self),
                got: x.cols,
            });
        }
        let views = Views::new(self);
        let n = params.len();
        let weight = 1.0 / x.rows.max(1) as f64;
        let shards = x.rows.div_ceil(SHARD);
        let parts = par::map_range(shards, |s| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            for i in s * SHARD..((s + 1) * SHARD).min(x.rows) {
                let tokens = Mat::from_vec(self.context_len, self.input_dim, x.row(i).to_vec());
                loss += sample_backward(params, &views, self, &tokens, y.row(i), weight, &mut g);
            }
            (loss, g)
        });
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }
}

/// Loss and gradient for sequences of arbitrary length `1..=context_len`.
pub fn ct_backward(
    params: &[f64],
    spec: &CausalTransformerSpec,
    sequences: &[Mat],
    targets: &Mat,
) -> Result<(f64, Vec<f64>), NeuralError> {
    if sequences.len() != targets.rows || targets.cols != spec.out_dim() {
        return Err(NeuralError::ShapeMismatch {
            expected: spec.out_dim(),
            got: targets.cols,
        });
    }
    for s in sequences {
        check_tokens(spec, s)?;
    }
    let views = Views::new(spec);
    let weight = 1.0 / sequences.len().max(1) as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (s, t) in sequences.iter().zip(0..) {
        loss += sample_backward(params, &views, spec, s, targets.row(t), weight, &mut grad);
    }
    Ok((loss, grad))
}
