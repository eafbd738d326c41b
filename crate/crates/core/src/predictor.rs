//! Noise predictors: the trainable MLP and the closed-form mixture oracle.
//!
//! Everything downstream (refinement, DDIM, the score regularity) talks to an
//! [`EpsPredictor`], so the analytic oracle and the learned network are
//! interchangeable. Both expose the prediction itself and an input-side
//! vector-Jacobian product for the exact-backpropagation gradient mode.

use crate::data::GridMixture;
use crate::matrix::Matrix2D;
use crate::nn::Mlp;
use crate::schedule::NoiseSchedule;

/// Number of sinusoidal time features fed to the network.
pub const TIME_FEATURES: usize = 16;

/// A frozen noise predictor `eps(x_t, t[, c])` over batches with per-row
/// timesteps. Implementations must be pure so sampling can shard across
/// threads.
pub trait EpsPredictor {
    /// Predicted noise for each row of `x` (an `n x 2` batch) at its
    /// timestep `ts[row]`.
    fn predict(&self, x: &Matrix2D, ts: &[usize], labels: Option<&[usize]>) -> Matrix2D;

    /// `cot · d(predict)/dx`: the gradient of `<cot, eps(x)>` with respect to
    /// `x`, same shape as `x`.
    fn input_vjp(
        &self,
        x: &Matrix2D,
        ts: &[usize],
        labels: Option<&[usize]>,
        cot: &Matrix2D,
    ) -> Matrix2D;

    /// Convenience for a single shared timestep.
    fn predict_at(&self, x: &Matrix2D, t: usize, labels: Option<&[usize]>) -> Matrix2D {
        self.predict(x, &vec![t; x.rows()], labels)
    }
}

/// Sinusoidal embedding of `t / t_total` at 8 geometric frequencies.
pub fn time_features(t: usize, t_total: usize, out: &mut [f64]) {
    assert_eq!(out.len(), TIME_FEATURES);
    let u = t as f64 / t_total as f64;
    for j in 0..TIME_FEATURES / 2 {
        let angle = 2.0 * std::f64::consts::PI * (1u64 << j) as f64 * u;
        out[2 * j] = angle.sin();
        out[2 * j + 1] = angle.cos();
    }
}

/// The trainable predictor: an MLP on `[x_t | time features | one-hot c]`.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    pub net: Mlp,
    t_total: usize,
    label_count: Option<usize>,
}

impl NoisePredictor {
    /// Fresh `(2 + 16 [+ labels]) -> 128 -> 128 -> 2` network.
    pub fn new<R: rand::Rng>(
        t_total: usize,
        label_count: Option<usize>,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let in_dim = 2 + TIME_FEATURES + label_count.unwrap_or(0);
        let net = Mlp::new(&[in_dim, hidden, hidden, 2], crate::nn::LEAKY_SLOPE, rng);
        NoisePredictor { net, t_total, label_count }
    }

    pub fn from_net(net: Mlp, t_total: usize, label_count: Option<usize>) -> Self {
        assert_eq!(
            net.in_dim(),
            2 + TIME_FEATURES + label_count.unwrap_or(0),
            "network input dim does not match 2 + {TIME_FEATURES} + labels"
        );
        assert_eq!(net.out_dim(), 2, "noise predictor must emit 2-D noise");
        NoisePredictor { net, t_total, label_count }
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn label_count(&self) -> Option<usize> {
        self.label_count
    }

    /// Assembles the network input `[x | time features | one-hot label]`.
    pub fn build_input(&self, x: &Matrix2D, ts: &[usize], labels: Option<&[usize]>) -> Matrix2D {
        assert_eq!(x.cols(), 2, "predictor expects n x 2 points");
        assert_eq!(x.rows(), ts.len(), "one timestep per row required");
        match (self.label_count, labels) {
            (Some(_), None) => panic!("conditional predictor called without labels"),
            (None, Some(_)) => panic!("unconditional predictor called with labels"),
            (Some(k), Some(ls)) => {
                assert_eq!(ls.len(), x.rows(), "one label per row required");
                assert!(ls.iter().all(|&l| l < k), "label out of range 0..{k}");
            }
            (None, None) => {}
        }
        for &t in ts {
            assert!(
                t >= 1 && t <= self.t_total,
                "predictor timestep {t} outside [1, {}]",
                self.t_total
            );
        }
        let extra = self.label_count.unwrap_or(0);
        let cols = 2 + TIME_FEATURES + extra;
        let mut input = Matrix2D::zeros(x.rows(), cols);
        let mut feat = [0.0; TIME_FEATURES];
        for r in 0..x.rows() {
            time_features(ts[r], self.t_total, &mut feat);
            let row = input.row_mut(r);
            row[0] = x.get(r, 0);
            row[1] = x.get(r, 1);
            row[2..2 + TIME_FEATURES].copy_from_slice(&feat);
            if let Some(ls) = labels {
                row[2 + TIME_FEATURES + ls[r]] = 1.0;
            }
        }
        input
    }
}

impl EpsPredictor for NoisePredictor {
    fn predict(&self, x: &Matrix2D, ts: &[usize], labels: Option<&[usize]>) -> Matrix2D {
        self.net.infer(&self.build_input(x, ts, labels))
    }

    fn input_vjp(
        &self,
        x: &Matrix2D,
        ts: &[usize],
        labels: Option<&[usize]>,
        cot: &Matrix2D,
    ) -> Matrix2D {
        let input = self.build_input(x, ts, labels);
        let (_, gin) = self.net.forward_and_input_grad(&input, cot);
        // Only the first two input columns depend on x_t.
        let mut out = Matrix2D::zeros(x.rows(), 2);
        for r in 0..x.rows() {
            out.set(r, 0, gin.get(r, 0));
            out.set(r, 1, gin.get(r, 1));
        }
        out
    }
}

/// The analytic predictor `-sigma_t * grad log q_t` for a known mixture.
#[derive(Debug, Clone, Copy)]
pub struct OracleEps<'a> {
    pub mix: &'a GridMixture,
    pub sched: &'a NoiseSchedule,
}

impl<'a> OracleEps<'a> {
    pub fn new(mix: &'a GridMixture, sched: &'a NoiseSchedule) -> Self {
        OracleEps { mix, sched }
    }
}

impl EpsPredictor for OracleEps<'_> {
    fn predict(&self, x: &Matrix2D, ts: &[usize], labels: Option<&[usize]>) -> Matrix2D {
        assert_eq!(x.rows(), ts.len(), "one timestep per row required");
        let mut out = Matrix2D::zeros(x.rows(), 2);
        for r in 0..x.rows() {
            let e = self.mix.oracle_noise(
                x.point(r),
                ts[r],
                self.sched,
                labels.map(|ls| ls[r]),
            );
            out.set(r, 0, e[0]);
            out.set(r, 1, e[1]);
        }
        out
    }

    fn input_vjp(
        &self,
        x: &Matrix2D,
        ts: &[usize],
        labels: Option<&[usize]>,
        cot: &Matrix2D,
    ) -> Matrix2D {
        assert_eq!(x.rows(), ts.len(), "one timestep per row required");
        assert_eq!(
            (cot.rows(), cot.cols()),
            (x.rows(), 2),
            "cotangent shape {}x{} does not match batch {}x2",
            cot.rows(),
            cot.cols(),
            x.rows()
        );
        let mut out = Matrix2D::zeros(x.rows(), 2);
        for r in 0..x.rows() {
            let g = self.mix.oracle_noise_vjp(
                x.point(r),
                ts[r],
                self.sched,
                labels.map(|ls| ls[r]),
                cot.point(r),
            );
            out.set(r, 0, g[0]);
            out.set(r, 1, g[1]);
        }
        out
    }
}
