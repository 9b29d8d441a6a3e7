use rand::seq::index::sample;

use crate::seeds;

/// A scalar objective with an analytic gradient.
pub trait Differentiable {
    fn loss(&self, params: &[f64]) -> f64;
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
}

impl<L, G> Differentiable for (L, G)
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn loss(&self, params: &[f64]) -> f64 {
        (self.0)(params)
    }

    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        (self.1)(params)
    }
}

/// Below this magnitude both gradients count as zero for relative error.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of `probes` randomly chosen coordinates (all of
/// them if `probes >= params.len()`). Returns the worst relative error.
pub fn grad_check<D: Differentiable + ?Sized>(
    objective: &D,
    params: &[f64],
    probes: usize,
    h: f64,
    seed: u64,
) -> f64 {
    let (_, grad) = objective.loss_and_grad(params);
    let n = params.len();
    let coords: Vec<usize> = if probes >= n {
        (0..n).collect()
    } else {
        let mut rng = seeds::rng(seed, &[seeds::tag("grad_check")]);
        sample(&mut rng, n, probes).into_vec()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let plus = objective.loss(&p);
        p[i] = orig - h;
        let minus = objective.loss(&p);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}
