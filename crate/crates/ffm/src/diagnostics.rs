//! MCMC convergence assessment: potential scale reduction over parallel
//! chains and effective sample size via Geyer's initial-positive-sequence
//! truncation of the autocorrelation sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::DrawStore;

/// Classic potential scale reduction factor over two or more chains.
///
/// Chains are trimmed from the back to the shortest length. Degenerate
/// cases follow declared conventions: when every chain is the same
/// constant the statistic is 1; when the within-chain variance vanishes
/// but the chains disagree it is positive infinity.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::validation("potential scale reduction needs at least 2 chains"));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap();
    if n < 2 {
        return Err(Error::validation("each chain needs at least 2 draws"));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within =
        chains.iter().map(|c| sample_variance(&c[..n])).sum::<f64>() / m;
    let grand = mean(&means);
    let between_over_n =
        means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
    if within == 0.0 {
        return Ok(if between_over_n == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let v_hat = (nf - 1.0) / nf * within + between_over_n;
    Ok((v_hat / within).sqrt())
}

/// Split-chain variant: each chain is halved (dropping the middle draw of
/// odd-length chains) before the classic statistic is applied.
pub fn gelman_rubin_split(chains: &[Vec<f64>]) -> Result<f64> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    if half < 2 {
        return Err(Error::validation("split statistic needs chains of length >= 4"));
    }
    let mut split = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        split.push(c[..half].to_vec());
        split.push(c[n - half..n].to_vec());
    }
    gelman_rubin(&split)
}

/// Effective sample size of one chain: n / (1 + 2 sum of autocorrelations),
/// with the sum truncated at the first nonpositive consecutive pair.
/// Clipped to (0, n]; a constant chain counts as n by convention.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 2 {
        return n as f64;
    }
    let mu = mean(chain);
    let c0 = chain.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        if lag >= n {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += (chain[i] - mu) * (chain[i + lag] - mu);
        }
        acc / (n as f64 * c0)
    };
    // Geyer initial positive sequence: sum pair sums rho_{2m} + rho_{2m+1}
    // while they stay positive (the first pair includes rho_0 = 1).
    let mut tau = -1.0;
    let mut m = 0;
    loop {
        let pair = rho(2 * m) + rho(2 * m + 1);
        if pair <= 0.0 || 2 * m >= n {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    let tau = tau.max(1.0);
    (n as f64 / tau).min(n as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// One monitored scalar with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticEntry {
    pub name: String,
    pub rhat: f64,
    /// Total effective sample size summed over chains.
    pub ess: f64,
}

/// Diagnostics over the default monitored set of a draw store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub entries: Vec<DiagnosticEntry>,
    /// True when every monitored statistic has R-hat below the threshold.
    pub pass: bool,
    pub threshold: f64,
    pub mean_ess: f64,
}

const RHAT_THRESHOLD: f64 = 1.1;

/// Extracts the default monitored scalars from every chain and computes
/// R-hat and ESS for each.
///
/// Monitored: every AR coefficient, the spatial autocorrelation, the
/// global shrinkage scale and the per-district measurement variances on
/// the log scale (heavy-tailed raw scales destabilize the statistic), and
/// ten seeded-random entries each of the loadings, the day-off effects,
/// and the last-day factor state. With a single chain R-hat is skipped
/// (reported as 1) and only ESS is meaningful.
pub fn diagnose(store: &DrawStore) -> Result<DiagnosticsReport> {
    diagnose_with(store, false)
}

/// As [`diagnose`], optionally using the split-chain statistic.
pub fn diagnose_with(store: &DrawStore, split: bool) -> Result<DiagnosticsReport> {
    let layout = store.layout();
    let monitored = monitored_set(store);
    let mut entries = Vec::with_capacity(monitored.len());
    for (name, extract) in monitored {
        let chains: Vec<Vec<f64>> = store
            .chains
            .iter()
            .map(|c| c.draws().map(&extract).collect::<Vec<f64>>())
            .collect();
        let rhat = if chains.len() >= 2 {
            if split { gelman_rubin_split(&chains)? } else { gelman_rubin(&chains)? }
        } else {
            1.0
        };
        let ess: f64 = chains.iter().map(|c| effective_sample_size(c)).sum();
        entries.push(DiagnosticEntry { name, rhat, ess });
    }
    let _ = layout;
    let pass = entries.iter().all(|e| e.rhat < RHAT_THRESHOLD);
    let mean_ess = entries.iter().map(|e| e.ess).sum::<f64>() / entries.len().max(1) as f64;
    Ok(DiagnosticsReport { entries, pass, threshold: RHAT_THRESHOLD, mean_ess })
}

type Extractor = Box<dyn Fn(&[f64]) -> f64>;

fn monitored_set(store: &DrawStore) -> Vec<(String, Extractor)> {
    let l = store.layout();
    let mut out: Vec<(String, Extractor)> = Vec::new();
    for f in 0..l.m {
        let l2 = l.clone();
        out.push((format!("gamma[{f}]"), Box::new(move |d: &[f64]| l2.gamma_of(d)[f])));
    }
    {
        let l2 = l.clone();
        out.push(("psi".to_string(), Box::new(move |d: &[f64]| l2.psi_of(d))));
    }
    {
        let l2 = l.clone();
        out.push((
            "log_upsilon2".to_string(),
            Box::new(move |d: &[f64]| l2.upsilon2_of(d).ln()),
        ));
    }
    for s in 0..l.n {
        let l2 = l.clone();
        out.push((format!("log_e2[{s}]"), Box::new(move |d: &[f64]| l2.e2_of(d)[s].ln())));
    }
    // Ten seeded-random entries each of the free loadings, the day-off
    // effects, and the last-day factor state.
    let mut pick = rng::stream(store.meta.config.seed, "monitor");
    use rand::Rng as _;
    let b_total: usize = (0..l.m).map(|s| l.n - s - 1).sum();
    for _ in 0..10.min(b_total) {
        let s = pick.random_range(0..l.m);
        let j = pick.random_range(0..l.n - s - 1);
        let l2 = l.clone();
        out.push((
            format!("b[{},{}]", s + 1 + j, s),
            Box::new(move |d: &[f64]| l2.b_column(d, s)[j]),
        ));
    }
    for _ in 0..10 {
        let i = pick.random_range(0..l.m * l.k);
        let l2 = l.clone();
        out.push((format!("mu[{i}]"), Box::new(move |d: &[f64]| l2.mu_of(d)[i])));
    }
    for _ in 0..10 {
        let i = pick.random_range(0..l.m * l.k);
        let l2 = l.clone();
        out.push((format!("x_last[{i}]"), Box::new(move |d: &[f64]| l2.x_last_of(d)[i])));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_chains_near_one() {
        let mut rng = stream(21, "diag-iid");
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!((0.99..=1.02).contains(&r), "rhat {r}");
    }

    #[test]
    fn disjoint_chains_blow_up() {
        let mut rng = stream(22, "diag-disjoint");
        let a: Vec<f64> =
            (0..500).map(|_| 10.0 + 0.01 * { let sn: f64 = StandardNormal.sample(&mut rng); sn }).collect();
        let b: Vec<f64> =
            (0..500).map(|_| -10.0 + 0.01 * { let sn: f64 = StandardNormal.sample(&mut rng); sn }).collect();
        let r = gelman_rubin(&[a, b]).unwrap();
        assert!(r > 5.0, "rhat {r}");
    }

    #[test]
    fn constant_chains_conventions() {
        let c = vec![2.5; 100];
        assert_eq!(gelman_rubin(&[c.clone(), c.clone()]).unwrap(), 1.0);
        let d = vec![3.5; 100];
        assert_eq!(gelman_rubin(&[c.clone(), d]).unwrap(), f64::INFINITY);
        assert!(gelman_rubin(&[c]).is_err());
    }

    #[test]
    fn rhat_invariant_under_common_affine_transform() {
        let mut rng = stream(23, "diag-affine");
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..2000)
                    .map(|_| i as f64 * 0.05 + { let sn: f64 = StandardNormal.sample(&mut rng); sn })
                    .collect()
            })
            .collect();
        let r1 = gelman_rubin(&chains).unwrap();
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| 7.0 - 3.0 * x).collect())
            .collect();
        let r2 = gelman_rubin(&shifted).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn ess_iid_near_n() {
        let mut rng = stream(24, "diag-ess-iid");
        let n = 10_000;
        let chain: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&chain);
        assert!(ess >= 0.9 * n as f64 && ess <= 1.1 * n as f64, "ess {ess}");
    }

    #[test]
    fn ess_ar1_matches_closed_form() {
        let mut rng = stream(25, "diag-ess-ar1");
        let n = 20_000;
        let rho = 0.9;
        let mut chain = Vec::with_capacity(n);
        let mut x = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = rho * x + e * (1.0f64 - rho * rho).sqrt();
            chain.push(x);
        }
        let ess = effective_sample_size(&chain);
        let expect = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!(
            (ess - expect).abs() < 0.3 * expect,
            "ess {ess} vs AR(1) value {expect}"
        );
    }

    #[test]
    fn ess_constant_and_bounds() {
        assert_eq!(effective_sample_size(&[4.0; 50]), 50.0);
        let mut rng = stream(26, "diag-ess-clip");
        for _ in 0..20 {
            let chain: Vec<f64> =
                (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ess = effective_sample_size(&chain);
            assert!(ess > 0.0 && ess <= 300.0);
        }
    }

    #[test]
    fn ess_invariant_under_affine_transform() {
        let mut rng = stream(27, "diag-ess-affine");
        let chain: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mapped: Vec<f64> = chain.iter().map(|x| -2.0 * x + 11.0).collect();
        let a = effective_sample_size(&chain);
        let b = effective_sample_size(&mapped);
        assert!((a - b).abs() / a < 1e-10);
    }
}
