//! Discrete variance-preserving noise schedule.
//!
//! `alpha_t = sqrt(prod(1 - beta_k))` and `sigma_t = sqrt(1 - alpha_t^2)`
//! with a linear beta ramp, so `alpha_t^2 + sigma_t^2 = 1` by construction,
//! `(alpha_0, sigma_0) = (1, 0)`, and the signal-to-noise ratio
//! `alpha_t^2 / sigma_t^2` is strictly decreasing in `t`.

use crate::error::{Error, Result};
use crate::matrix::Matrix2D;

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Total number of diffusion steps `T`; valid timesteps are `0..=T`.
    pub fn t_total(&self) -> usize {
        self.alpha.len() - 1
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// `alpha_t^2 / sigma_t^2`; infinite at `t = 0`.
    pub fn snr(&self, t: usize) -> f64 {
        let a = self.alpha[t];
        let s = self.sigma[t];
        a * a / (s * s)
    }
}

/// Builds the linear-beta schedule. `beta` ramps from `beta_start` at `t = 1`
/// to `beta_end` at `t = T`.
pub fn build_schedule(t_total: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_total < 1 {
        return Err(Error::Config("dpm.T must be at least 1".to_string()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "invalid beta range [{beta_start}, {beta_end}]: need 0 < start <= end < 1"
        )));
    }
    let mut alpha = Vec::with_capacity(t_total + 1);
    let mut sigma = Vec::with_capacity(t_total + 1);
    alpha.push(1.0);
    sigma.push(0.0);
    let mut alpha_bar = 1.0f64;
    for t in 1..=t_total {
        let frac = if t_total == 1 {
            0.0
        } else {
            (t - 1) as f64 / (t_total - 1) as f64
        };
        let beta = beta_start + frac * (beta_end - beta_start);
        alpha_bar *= 1.0 - beta;
        alpha.push(alpha_bar.sqrt());
        sigma.push((1.0 - alpha_bar).sqrt());
    }
    Ok(NoiseSchedule { alpha, sigma })
}

/// Forward corruption `alpha_t x0 + sigma_t eps` for a whole batch at one
/// timestep.
pub fn q_sample(sched: &NoiseSchedule, x0: &Matrix2D, t: usize, eps: &Matrix2D) -> Matrix2D {
    assert!(t <= sched.t_total(), "timestep {t} out of range 0..={}", sched.t_total());
    assert_eq!(
        (x0.rows(), x0.cols()),
        (eps.rows(), eps.cols()),
        "q_sample: x0 is {}x{} but eps is {}x{}",
        x0.rows(),
        x0.cols(),
        eps.rows(),
        eps.cols()
    );
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let mut out = x0.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = a * *o + s * e;
    }
    out
}

/// Forward corruption with a per-row timestep.
pub fn q_sample_rows(
    sched: &NoiseSchedule,
    x0: &Matrix2D,
    ts: &[usize],
    eps: &Matrix2D,
) -> Matrix2D {
    assert_eq!(ts.len(), x0.rows(), "one timestep per row required");
    assert_eq!(
        (x0.rows(), x0.cols()),
        (eps.rows(), eps.cols()),
        "q_sample_rows: x0 is {}x{} but eps is {}x{}",
        x0.rows(),
        x0.cols(),
        eps.rows(),
        eps.cols()
    );
    let mut out = x0.clone();
    for r in 0..out.rows() {
        let t = ts[r];
        assert!(t <= sched.t_total(), "timestep {t} out of range");
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        for c in 0..out.cols() {
            out.set(r, c, a * x0.get(r, c) + s * eps.get(r, c));
        }
    }
    out
}
