//! Synthetic data generator.
//!
//! Five factor districts evolve as AR(0.8) curves with smooth initial
//! draws; districts 3 and 4 mix in two thirds of factors 1 and 2;
//! districts beyond the fifth are random mixtures of districts 3 and 4
//! with band-correlated weights. Measurement noise is scaled to a fixed
//! signal-to-noise ratio per district.
//!
//! [`influence_graph`] reconstructs the adjacency used when fitting this
//! data: every mixture district borders districts 3 and 4, and
//! consecutive mixture districts border each other.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{AdjacencyGraph, Cube, DayType, FunctionalPanel};
use crate::error::{Error, Result};
use crate::kernel::{build_gram, MeasurementGrid, SpdFactor};
use crate::rng;

/// Number of factor districts in the generator.
pub const SIM_FACTORS: usize = 5;

/// Signal-to-noise regime: the measurement noise standard deviation as a
/// fraction of the signal standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Snr {
    High,
    Low,
}

impl Snr {
    pub fn noise_ratio(self) -> f64 {
        match self {
            Snr::High => 0.2,
            Snr::Low => 0.5,
        }
    }
}

/// Settings for one synthetic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// District count (excluding appended noise districts); at least 6.
    pub n: usize,
    /// Day count.
    pub t: usize,
    /// Grid points per day.
    pub k: usize,
    pub snr: Snr,
    pub seed: u64,
    /// Extra pure-noise districts appended after the structural ones.
    pub noise_districts: usize,
    /// Day types; all working when absent (no calendar effects).
    pub day_types: Option<Vec<DayType>>,
    /// Day-off effect curves (factor-major, 5 x K) injected into the
    /// factor evolution when day types are present.
    pub mu: Option<Vec<f64>>,
    /// Pre-day-off effect curves injected likewise.
    pub mu_prime: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn new(n: usize, t: usize, snr: Snr, seed: u64) -> Self {
        SimConfig {
            n,
            t,
            k: 24,
            snr,
            seed,
            noise_districts: 0,
            day_types: None,
            mu: None,
            mu_prime: None,
        }
    }

    /// Total districts including appended noise districts.
    pub fn total_districts(&self) -> usize {
        self.n + self.noise_districts
    }

    fn validate(&self) -> Result<()> {
        if self.n < 6 {
            return Err(Error::validation("the generator needs at least 6 districts"));
        }
        if self.t < 2 {
            return Err(Error::validation("the generator needs at least 2 days"));
        }
        if self.k < 2 {
            return Err(Error::validation("the generator needs at least 2 grid points"));
        }
        if let Some(days) = &self.day_types {
            if days.len() != self.t {
                return Err(Error::validation("day_types length must equal t"));
            }
        }
        for (name, eff) in [("mu", &self.mu), ("mu_prime", &self.mu_prime)] {
            if let Some(e) = eff {
                if e.len() != SIM_FACTORS * self.k {
                    return Err(Error::validation(format!(
                        "{name} must have 5 x {} entries",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything the generator drew besides the observed panel.
#[derive(Debug, Clone)]
pub struct SimTruth {
    /// Noiseless curves, (n + noise districts) x T x K.
    pub z: Cube,
    /// Factor curves, 5 x T x K.
    pub x: Cube,
    /// Mixture weights on district 3, length N-5.
    pub w1: Vec<f64>,
    /// Mixture weights on district 4, length N-5.
    pub w2: Vec<f64>,
    /// Measurement noise standard deviations per district.
    pub e: Vec<f64>,
}

/// Draws one panel from the generating process. Deterministic in the seed.
pub fn generate(config: &SimConfig) -> Result<(FunctionalPanel, SimTruth)> {
    config.validate()?;
    let (n, t, k) = (config.n, config.t, config.k);
    let total = config.total_districts();
    let grid = MeasurementGrid::hourly(k);
    let mut rng = rng::stream(config.seed, "simulate");

    // Factor curves: smooth initial draw, then AR(0.8) with white
    // innovations on the grid.
    let init_gram = build_gram(&grid, 25.0, 4.0)?;
    let zero = DVector::zeros(k);
    let mut x = Cube::zeros(SIM_FACTORS, t, k);
    for f in 0..SIM_FACTORS {
        let x0 = init_gram.factor().sample_covariance(&zero, &mut rng);
        x.set_lane(f, 0, &x0);
    }
    // Calendar effects enter the evolution only when day types are given.
    let dummies = config.day_types.as_ref().map(|days| {
        let cal = crate::domain::build_calendar(days, crate::domain::Extension::II)
            .expect("validated day types");
        (cal.d, cal.d_prime)
    });
    for tt in 1..t {
        for f in 0..SIM_FACTORS {
            let prev = x.lane_vector(f, tt - 1);
            let mut cur = prev * 0.8;
            if let Some((d, dp)) = &dummies {
                if d[tt] != 0.0 {
                    if let Some(mu) = &config.mu {
                        for i in 0..k {
                            cur[i] += d[tt] * mu[f * k + i];
                        }
                    }
                }
                if dp[tt] != 0.0 {
                    if let Some(mp) = &config.mu_prime {
                        for i in 0..k {
                            cur[i] += dp[tt] * mp[f * k + i];
                        }
                    }
                }
            }
            for i in 0..k {
                let innov: f64 = StandardNormal.sample(&mut rng);
                cur[i] += innov;
            }
            x.set_lane(f, tt, &cur);
        }
    }

    // Idiosyncratic curve noise: GP(0, R(1)/4).
    let noise_gram = build_gram(&grid, 0.25, 1.0)?;
    let mut gp_noise = |rng: &mut rng::Rng| noise_gram.factor().sample_covariance(&zero, rng);

    // Mixture weights over districts 6..N: band covariance with unit
    // diagonal and 1/2 on the first off-diagonals.
    let p = n - SIM_FACTORS;
    let mut band = DMatrix::identity(p, p);
    for i in 0..p.saturating_sub(1) {
        band[(i, i + 1)] = 0.5;
        band[(i + 1, i)] = 0.5;
    }
    let band_factor = SpdFactor::new(&band)?;
    let pzero = DVector::zeros(p);
    let w1 = band_factor.sample_covariance(&pzero, &mut rng);
    let w2 = band_factor.sample_covariance(&pzero, &mut rng);

    // Latent district curves.
    let mut z = Cube::zeros(total, t, k);
    for tt in 0..t {
        for s in [0usize, 1, 4] {
            let v = x.lane_vector(s, tt) + gp_noise(&mut rng);
            z.set_lane(s, tt, &v);
        }
        let z3 = x.lane_vector(0, tt) * (2.0 / 3.0) + x.lane_vector(2, tt) + gp_noise(&mut rng);
        z.set_lane(2, tt, &z3);
        let z4 = x.lane_vector(1, tt) * (2.0 / 3.0) + x.lane_vector(3, tt) + gp_noise(&mut rng);
        z.set_lane(3, tt, &z4);
        for s in SIM_FACTORS..n {
            let j = s - SIM_FACTORS;
            let v = z.lane_vector(2, tt) * w1[j] + z.lane_vector(3, tt) * w2[j]
                + gp_noise(&mut rng);
            z.set_lane(s, tt, &v);
        }
        for s in n..total {
            let v = gp_noise(&mut rng);
            z.set_lane(s, tt, &v);
        }
    }

    // Measurement noise at a fixed fraction of each district's signal
    // standard deviation (pooled over days and grid points).
    let ratio = config.snr.noise_ratio();
    let mut e = Vec::with_capacity(total);
    for s in 0..total {
        let mut mean = 0.0;
        for tt in 0..t {
            for v in z.lane(s, tt) {
                mean += v;
            }
        }
        mean /= (t * k) as f64;
        let mut var = 0.0;
        for tt in 0..t {
            for v in z.lane(s, tt) {
                var += (v - mean) * (v - mean);
            }
        }
        var /= (t * k) as f64;
        e.push(ratio * var.sqrt());
    }
    let mut y = z.clone();
    for s in 0..total {
        for tt in 0..t {
            for v in y.lane_mut(s, tt) {
                *v += e[s] * { let sn: f64 = StandardNormal.sample(&mut rng); sn };
            }
        }
    }

    let panel = FunctionalPanel::new(
        y,
        grid,
        (1..=total).map(|i| i.to_string()).collect(),
        (1..=t).map(|i| i.to_string()).collect(),
    )?;
    Ok((panel, SimTruth { z, x, w1: w1.as_slice().to_vec(), w2: w2.as_slice().to_vec(), e }))
}

/// The adjacency used when fitting generated data: districts 6..N border
/// both 3 and 4, consecutive mixture districts border each other, and any
/// districts beyond `n` (appended noise districts) are isolated.
pub fn influence_graph(n: usize) -> Result<AdjacencyGraph> {
    influence_graph_with_isolated(n, 0)
}

/// As [`influence_graph`] with `extra` isolated districts appended.
pub fn influence_graph_with_isolated(n: usize, extra: usize) -> Result<AdjacencyGraph> {
    if n < 6 {
        return Err(Error::validation("influence graph needs at least 6 districts"));
    }
    let mut edges = Vec::new();
    for s in SIM_FACTORS..n {
        edges.push((2, s));
        edges.push((3, s));
        if s + 1 < n {
            edges.push((s, s + 1));
        }
    }
    AdjacencyGraph::from_edges(n + extra, &edges)
}
