//! Sample-quality metrics: mode coverage, high-quality fraction, mean
//! distance to the mode set.

use crate::data::GridMixture;
use crate::matrix::Matrix2D;

/// One evaluation row; the CSV schema is stable.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub score_loss: f64,
    pub mode_coverage: usize,
    pub hq_fraction: f64,
    pub mean_dist: f64,
}

pub const CSV_HEADER: &str = "iter,d_loss,g_loss,score_loss,mode_coverage,hq_fraction,mean_dist";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            self.iter,
            self.d_loss,
            self.g_loss,
            self.score_loss,
            self.mode_coverage,
            self.hq_fraction,
            self.mean_dist
        )
    }
}

/// Quality summary of a sample batch against the mixture.
///
/// A sample is high-quality iff it lies within `tau` of its nearest center.
/// A mode counts as covered iff it owns at least `max(1, n/4900)` high-quality
/// samples, so a single stray point cannot credit a mode at large `n`.
pub fn compute_metrics(samples: &Matrix2D, mix: &GridMixture, tau: f64) -> (usize, f64, f64) {
    assert!(tau > 0.0, "tau must be positive, got {tau}");
    assert_eq!(samples.cols(), 2, "expected an n x 2 sample batch");
    let n = samples.rows();
    let mut owned = vec![0usize; mix.label_count()];
    let mut hq = 0usize;
    let mut dist_sum = 0.0;
    for r in 0..n {
        let (idx, d) = mix.nearest_center(samples.point(r));
        dist_sum += d;
        if d <= tau {
            hq += 1;
            owned[idx] += 1;
        }
    }
    let threshold = (n / 4900).max(1);
    let coverage = owned.iter().filter(|&&c| c >= threshold).count();
    (coverage, hq as f64 / n as f64, dist_sum / n as f64)
}
