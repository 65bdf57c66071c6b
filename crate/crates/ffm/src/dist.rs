//! Scalar random variate helpers shared by the sampler blocks.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ContinuousCDF, Normal};

/// Draws from an inverse gamma with the given shape and rate, i.e. the
/// distribution of 1/Y where Y ~ Gamma(shape, rate).
pub fn sample_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    // rand_distr's Gamma takes a scale parameter.
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters");
    let y: f64 = g.sample(rng).max(f64::MIN_POSITIVE);
    (1.0 / y).min(1e300)
}

/// Draws from N(mean, sd^2) truncated to (lo, hi) by inverse-CDF sampling.
///
/// The returned value is strictly inside the interval. When the interval
/// carries essentially no mass under the untruncated normal, the draw
/// falls back to the nearer endpoint nudged inward.
pub fn sample_truncated_normal<R: Rng>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(lo < hi && sd > 0.0);
    let std = Normal::new(0.0, 1.0).unwrap();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let (pa, pb) = (std.cdf(a), std.cdf(b));
    let width = hi - lo;
    let guard = width * 1e-12;
    if pb - pa < 1e-300 {
        // All mass outside the window; land just inside the nearer edge.
        return if a > 0.0 { lo + guard } else { hi - guard };
    }
    let u: f64 = rng.random();
    let p = pa + u * (pb - pa);
    let x = mean + sd * std.inverse_cdf(p.clamp(1e-300, 1.0 - 1e-16));
    x.clamp(lo + guard, hi - guard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn inverse_gamma_matches_analytic_mean() {
        // IG(3, 4) has mean rate/(shape-1) = 2.
        let mut rng = stream(1, "ig-mean");
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_inverse_gamma(3.0, 4.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn truncated_normal_stays_inside() {
        let mut rng = stream(2, "tn-range");
        for _ in 0..10_000 {
            let x = sample_truncated_normal(0.95, 1.0, -1.0, 1.0, &mut rng);
            assert!(x > -1.0 && x < 1.0);
        }
    }

    #[test]
    fn truncated_normal_far_tail_guarded() {
        let mut rng = stream(3, "tn-tail");
        let x = sample_truncated_normal(60.0, 1.0, -1.0, 1.0, &mut rng);
        assert!(x > 0.999 && x < 1.0);
        let x = sample_truncated_normal(-60.0, 1.0, -1.0, 1.0, &mut rng);
        assert!(x < -0.999 && x > -1.0);
    }

    #[test]
    fn truncated_normal_symmetric_mean() {
        let mut rng = stream(4, "tn-mean");
        let n = 50_000;
        let mean: f64 = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, -1.0, 1.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }
}
