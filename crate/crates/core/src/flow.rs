//! Straight-path flow convention `x_t = (1 - t)·x0 + t·ε` with noise
//! prediction, per-frame noise levels, and the Euler sampler step.

use omniview_nn::{Graph, Mat, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{CoreError, Result};

/// Cap on `t` inside the velocity denominator, so the first sampler step
/// from pure noise stays finite.
pub const SAMPLER_T_MAX: f64 = 0.98;

/// Clean latents, noise and noised latents for every frame of a sequence.
/// Reference frames sit at `t = 0`, so their noised latent is the clean one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBatch {
    pub times: Vec<f64>,
    pub x0: Vec<Mat>,
    pub noise: Vec<Mat>,
    pub xt: Vec<Mat>,
    pub reference: Vec<bool>,
}

pub fn interpolate(x0: &Mat, eps: &Mat, t: f64) -> Mat {
    Mat::from_vec(x0.rows(), x0.cols(), x0.data().iter().zip(eps.data()).map(|(a, e)| (1.0 - t) * a + t * e).collect())
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

impl FlowBatch {
    /// Draws an independent `t ~ U[0, 1]` for every non-reference frame
    /// and unit Gaussian noise for every frame.
    pub fn sample(x0: Vec<Mat>, reference: Vec<bool>, rng: &mut impl Rng) -> Result<Self> {
        let noise: Vec<Mat> = x0.iter().map(|m| gaussian(m.rows(), m.cols(), rng)).collect();
        let times = reference.iter().map(|&r| if r { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        Self::from_parts(x0, noise, times, reference)
    }

    /// Assembles a batch from explicit parts. Reference frames must have
    /// `t = 0`.
    pub fn from_parts(x0: Vec<Mat>, noise: Vec<Mat>, times: Vec<f64>, reference: Vec<bool>) -> Result<Self> {
        let n = x0.len();
        if noise.len() != n || times.len() != n || reference.len() != n {
            return Err(CoreError::Contract("flow batch parts disagree on frame count".into()));
        }
        for f in 0..n {
            if noise[f].shape() != x0[f].shape() {
                return Err(CoreError::Contract(format!("frame {f}: noise and latent shapes differ")));
            }
            if !(0.0..=1.0).contains(&times[f]) || (reference[f] && times[f] != 0.0) {
                return Err(CoreError::Contract(format!("frame {f}: invalid noise level {}", times[f])));
            }
        }
        let xt = (0..n).map(|f| if reference[f] { x0[f].clone() } else { interpolate(&x0[f], &noise[f], times[f]) }).collect();
        Ok(FlowBatch { times, x0, noise, xt, reference })
    }

    pub fn frames(&self) -> usize {
        self.x0.len()
    }
}

/// Data scale assumed by the output preconditioning.
pub const SIGMA_DATA: f64 = 0.5;

/// Gains of `ε̂ = c_skip·x_t + c_out·F`. `c_skip` is the posterior-mean gain
/// of ε given x_t for data of scale [`SIGMA_DATA`], `c_out` the remaining
/// standard deviation, so the network only models a unit-scale residual.
pub fn precondition(t: f64) -> (f64, f64) {
    let a = (1.0 - t) * SIGMA_DATA;
    let v = a * a + t * t;
    (t / v, a / v.sqrt())
}

/// Applies [`precondition`] frame by frame to a raw `[F·T, C]` network output.
pub fn precondition_output(g: &mut Graph, raw: Var, xt: &[Mat], times: &[f64]) -> Var {
    let mut parts = Vec::with_capacity(xt.len());
    let mut row = 0;
    for (x, &t) in xt.iter().zip(times) {
        let (skip, out) = precondition(t);
        let r = g.slice_rows(raw, row, x.rows());
        let r = g.scale(r, out);
        let s = g.constant(x.map(|v| skip * v));
        parts.push(g.add(r, s));
        row += x.rows();
    }
    g.concat_rows(&parts)
}

/// Uniform grid `1 = t_0 > t_1 > … > t_S = 0`.
pub fn time_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| 1.0 - k as f64 / steps as f64).collect()
}

/// One Euler step from `t` down to `t_next` given the predicted noise:
/// `x ← x + (t − t_next) · (x − ε̂) / (1 − min(t, SAMPLER_T_MAX))`.
pub fn euler_step(xt: &Mat, eps_hat: &Mat, t: f64, t_next: f64) -> Mat {
    let denom = 1.0 - t.min(SAMPLER_T_MAX);
    let dt = t - t_next;
    Mat::from_vec(
        xt.rows(),
        xt.cols(),
        xt.data().iter().zip(eps_hat.data()).map(|(x, e)| x + dt * (x - e) / denom).collect(),
    )
}
