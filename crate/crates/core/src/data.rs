//! The 49-mode 2-D Gaussian-grid dataset.
//!
//! Centers sit on the integer grid `(i, j)`, `i, j in {-3..3}`, each mode an
//! isotropic Gaussian with a shared, very small standard deviation. Because
//! the per-mode variance is tiny relative to the unit spacing, the support is
//! idealized as the 49 centers for distance purposes; a sample within
//! `3*sigma` of a center counts as on-manifold.
//!
//! Alongside sampling, the type provides the exact diffused log-density
//! `log q_t` and the closed-form noise predictor `-sigma_t * grad log q_t`,
//! which serve as ground truth both for theorem checks and for validating
//! the learned predictor.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix2D;
use crate::schedule::NoiseSchedule;

/// Mixture of isotropic 2-D Gaussians with uniform weights.
#[derive(Debug, Clone)]
pub struct GridMixture {
    centers: Vec<[f64; 2]>,
    sigma_data: f64,
}

/// A batch of 2-D points with optional mode labels.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub points: Matrix2D,
    pub labels: Option<Vec<usize>>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

impl GridMixture {
    /// The canonical 7x7 grid with unit spacing.
    ///
    /// Requires `0 < sigma_data <= 0.1` so the modes stay well separated
    /// (spacing / 10).
    pub fn grid49(sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data <= 0.1) {
            return Err(Error::Config(format!(
                "data.sigma must lie in (0, 0.1], got {sigma_data}"
            )));
        }
        let mut centers = Vec::with_capacity(49);
        for i in -3..=3 {
            for j in -3..=3 {
                centers.push([i as f64, j as f64]);
            }
        }
        Ok(GridMixture { centers, sigma_data })
    }

    /// Arbitrary centers, for degenerate cases in tests and oracles
    /// (a single component, a point mass via `sigma_data = 0`, ...).
    pub fn from_centers(centers: Vec<[f64; 2]>, sigma_data: f64) -> Self {
        assert!(!centers.is_empty(), "mixture needs at least one center");
        assert!(sigma_data >= 0.0, "sigma_data must be nonnegative");
        GridMixture { centers, sigma_data }
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn label_count(&self) -> usize {
        self.centers.len()
    }

    /// Uniform mode choice, then isotropic Gaussian noise of scale
    /// `sigma_data`; the chosen mode index doubles as the class label.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R, with_labels: bool) -> LabeledBatch {
        assert!(n >= 1, "sample size must be at least 1");
        let mut points = Matrix2D::zeros(n, 2);
        let mut labels = with_labels.then(|| Vec::with_capacity(n));
        for r in 0..n {
            let mode = rng.gen_range(0..self.centers.len());
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            points.set(r, 0, self.centers[mode][0] + self.sigma_data * e0);
            points.set(r, 1, self.centers[mode][1] + self.sigma_data * e1);
            if let Some(ls) = labels.as_mut() {
                ls.push(mode);
            }
        }
        LabeledBatch { points, labels }
    }

    /// Euclidean distance from `x` to the nearest center.
    pub fn manifold_distance(&self, x: [f64; 2]) -> f64 {
        self.nearest_center(x).1
    }

    /// Index of and distance to the nearest center.
    pub fn nearest_center(&self, x: [f64; 2]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in self.centers.iter().enumerate() {
            let d2 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Mean distance to the nearest center over a batch.
    pub fn mean_manifold_distance(&self, batch: &Matrix2D) -> f64 {
        assert_eq!(batch.cols(), 2, "expected an n x 2 batch");
        let mut s = 0.0;
        for r in 0..batch.rows() {
            s += self.manifold_distance(batch.point(r));
        }
        s / batch.rows() as f64
    }

    /// Marginal variance of each diffused component at timestep `t`:
    /// `alpha_t^2 sigma_data^2 + sigma_t^2`.
    fn component_variance(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        let a = sched.alpha(t);
        let s = sched.sigma(t);
        a * a * self.sigma_data * self.sigma_data + s * s
    }

    /// Log-density of the diffused mixture `q_t` at `x_t`, via log-sum-exp
    /// over the components. With `label` given, the single-component
    /// conditional density `q_t(.|c)` instead.
    pub fn log_density_t(
        &self,
        x: [f64; 2],
        t: usize,
        sched: &NoiseSchedule,
        label: Option<usize>,
    ) -> f64 {
        let a = sched.alpha(t);
        let v = self.component_variance(t, sched);
        let log_norm = -(2.0 * std::f64::consts::PI * v).ln();
        match label {
            Some(c) => {
                let (dx, dy) = (x[0] - a * self.centers[c][0], x[1] - a * self.centers[c][1]);
                log_norm - (dx * dx + dy * dy) / (2.0 * v)
            }
            None => {
                let logw = -(self.centers.len() as f64).ln();
                let mut exps = Vec::with_capacity(self.centers.len());
                let mut max = f64::NEG_INFINITY;
                for c in &self.centers {
                    let (dx, dy) = (x[0] - a * c[0], x[1] - a * c[1]);
                    let e = -(dx * dx + dy * dy) / (2.0 * v);
                    if e > max {
                        max = e;
                    }
                    exps.push(e);
                }
                let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
                logw + log_norm + max + sum.ln()
            }
        }
    }

    /// Softmax responsibilities and displacements `x - alpha_t*mu_i` of each
    /// component at `x`.
    fn responsibilities(
        &self,
        x: [f64; 2],
        t: usize,
        sched: &NoiseSchedule,
    ) -> (Vec<f64>, Vec<[f64; 2]>, f64) {
        let a = sched.alpha(t);
        let v = self.component_variance(t, sched);
        let mut disp = Vec::with_capacity(self.centers.len());
        let mut logits = Vec::with_capacity(self.centers.len());
        let mut max = f64::NEG_INFINITY;
        for c in &self.centers {
            let d = [x[0] - a * c[0], x[1] - a * c[1]];
            let e = -(d[0] * d[0] + d[1] * d[1]) / (2.0 * v);
            if e > max {
                max = e;
            }
            logits.push(e);
            disp.push(d);
        }
        let mut w: Vec<f64> = logits.iter().map(|e| (e - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= sum;
        }
        (w, disp, v)
    }

    /// Exact noise prediction `-sigma_t * grad log q_t(x_t)`; conditional on
    /// a mode when `label` is given.
    ///
    /// Panics at `t = 0`, where `sigma_0 = 0` makes the noise formulation
    /// degenerate.
    pub fn oracle_noise(
        &self,
        x: [f64; 2],
        t: usize,
        sched: &NoiseSchedule,
        label: Option<usize>,
    ) -> [f64; 2] {
        assert!(t >= 1, "oracle noise predictor requires t >= 1 (sigma_0 = 0)");
        let s = sched.sigma(t);
        match label {
            Some(c) => {
                let a = sched.alpha(t);
                let v = self.component_variance(t, sched);
                [
                    s * (x[0] - a * self.centers[c][0]) / v,
                    s * (x[1] - a * self.centers[c][1]) / v,
                ]
            }
            None => {
                let (w, disp, v) = self.responsibilities(x, t, sched);
                let mut g = [0.0, 0.0];
                for (wi, d) in w.iter().zip(&disp) {
                    g[0] += wi * d[0];
                    g[1] += wi * d[1];
                }
                [s * g[0] / v, s * g[1] / v]
            }
        }
    }

    /// Vector-Jacobian product `cot · d(oracle_noise)/dx` at `x`, from the
    /// closed-form Hessian of `log q_t`. Drives the exact-backpropagation
    /// gradient mode when the regularity uses the analytic oracle.
    pub fn oracle_noise_vjp(
        &self,
        x: [f64; 2],
        t: usize,
        sched: &NoiseSchedule,
        label: Option<usize>,
        cot: [f64; 2],
    ) -> [f64; 2] {
        assert!(t >= 1, "oracle noise predictor requires t >= 1 (sigma_0 = 0)");
        let s = sched.sigma(t);
        match label {
            Some(_) => {
                // Single Gaussian: d eps*/dx = (sigma_t / v) I.
                let v = self.component_variance(t, sched);
                [s * cot[0] / v, s * cot[1] / v]
            }
            None => {
                let (w, disp, v) = self.responsibilities(x, t, sched);
                // H = -I/v + (E[ddT] - E[d]E[d]T)/v^2 with d_i = x - a*mu_i,
                // weights w; J = d eps*/dx = -sigma_t * H (symmetric 2x2).
                let mut m = [0.0, 0.0];
                let mut mm = [[0.0; 2]; 2];
                for (wi, d) in w.iter().zip(&disp) {
                    m[0] += wi * d[0];
                    m[1] += wi * d[1];
                    mm[0][0] += wi * d[0] * d[0];
                    mm[0][1] += wi * d[0] * d[1];
                    mm[1][1] += wi * d[1] * d[1];
                }
                mm[1][0] = mm[0][1];
                let mut h = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        h[i][j] = (mm[i][j] - m[i] * m[j]) / (v * v);
                    }
                    h[i][i] -= 1.0 / v;
                }
                [
                    -s * (cot[0] * h[0][0] + cot[1] * h[1][0]),
                    -s * (cot[0] * h[0][1] + cot[1] * h[1][1]),
                ]
            }
        }
    }
}
