//! The Metropolis-within-Gibbs posterior sampler.
//!
//! One [`SweepEngine::sweep`] updates every block of
//! [`ModelState`](crate::domain::ModelState) from its full conditional, in
//! a fixed order: the latent curves `z_t`, the factor states `x_t`, the AR
//! coefficients, the variance parameters, the kernel ranges (random-walk
//! MH on the log scale), the calendar effects, the free loading columns,
//! the horseshoe scale hierarchy, and the spatial autocorrelation
//! (random-walk MH on the logit scale). [`run_chains`] runs several chains
//! from dispersed initializations in parallel and assembles a
//! [`DrawStore`].

mod mh;
mod store;
mod sweep;

pub use mh::{MhState, phi_log_target, psi_log_target};
pub use store::{ChainDraws, DrawLayout, DrawStore, StoreMeta};
pub use sweep::{EffectKind, SweepEngine, SweepOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AdjacencyGraph, Calendar, Extension, FunctionalPanel, Hyperparams, ModelState, Permutation,
};
use crate::error::{Error, Result};
use crate::rng;

/// Variance dispersion factors separating chain initializations.
const CHAIN_DISPERSION: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Prior placed on the free columns of the loading matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// CAR-horseshoe: per-column half-Cauchy local scales and a shared
    /// half-Cauchy global scale.
    #[default]
    Horseshoe,
    /// Non-sparse variant: one global IG(0.1, 0.1) column variance.
    NonSparse,
}

/// Chain and step-size settings for a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_burnin: usize,
    pub n_draws: usize,
    pub n_chains: usize,
    pub thin: usize,
    pub seed: u64,
    /// Random-walk scale for the kernel-range step (log scale).
    pub mh_step_phi: f64,
    /// Random-walk scale for the spatial-autocorrelation step (logit scale).
    pub mh_step_psi: f64,
    pub extension: Extension,
    pub prior: PriorKind,
    /// Drop the Gaussian-process prior on the calendar effects and use an
    /// improper flat prior instead.
    pub mu_flat_prior: bool,
    /// Tune MH step sizes toward a 30-45% acceptance rate during burn-in;
    /// steps are frozen afterwards.
    pub adapt: bool,
    /// Upper bound on retained latent-curve snapshots per chain (evenly
    /// strided over the kept draws); posterior means and variances of the
    /// curves are always accumulated over every kept draw.
    pub z_snapshots: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_burnin: 15_000,
            n_draws: 5_000,
            n_chains: 4,
            thin: 1,
            seed: 0,
            mh_step_phi: 0.3,
            mh_step_psi: 0.3,
            extension: Extension::None,
            prior: PriorKind::Horseshoe,
            mu_flat_prior: false,
            adapt: true,
            z_snapshots: 200,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::validation("n_chains must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::validation("thin must be positive"));
        }
        if !(self.mh_step_phi > 0.0) || !(self.mh_step_psi > 0.0) {
            return Err(Error::validation("MH step sizes must be positive"));
        }
        Ok(())
    }

    pub fn options(&self) -> SweepOptions {
        SweepOptions { prior: self.prior, mu_flat_prior: self.mu_flat_prior }
    }
}

/// One full Gibbs sweep with default options (horseshoe prior, proper
/// calendar-effect prior, default MH steps), returning the updated state.
///
/// [`run_chains`] drives the same engine with adaptation and draw
/// collection; this entry point exists for stepping a chain by hand.
pub fn gibbs_sweep(
    state: &ModelState,
    panel: &FunctionalPanel,
    calendar: &Calendar,
    graph: &AdjacencyGraph,
    hyper: &Hyperparams,
    rng: &mut rng::Rng,
) -> Result<ModelState> {
    let (_, m, _, _) = state.dims();
    let engine =
        SweepEngine::new(&panel.grid, calendar, graph, m, hyper, SweepOptions::default())?;
    let mut mh = MhState::new(graph.n(), 0.3, 0.3, false);
    let mut next = state.clone();
    engine.sweep(&mut next, &panel.values, &mut mh, rng)?;
    Ok(next)
}

/// Runs `config.n_chains` independent chains and collects post-burn-in,
/// thinned draws into a [`DrawStore`].
///
/// Chain c draws its randomness from the `chain-c` sub-stream of the
/// master seed and starts from the shared data-based initialization with
/// its variances scaled by 0.5, 1, 2, or 4. A chain that fails numerically
/// is dropped from the store and recorded in the metadata; the store is
/// then flagged partial.
pub fn run_chains(
    panel: &FunctionalPanel,
    calendar: &Calendar,
    graph: &AdjacencyGraph,
    m: usize,
    hyper: &Hyperparams,
    config: &SamplerConfig,
) -> Result<DrawStore> {
    config.validate()?;
    hyper.validate()?;
    let (n, t, _k) = panel.values.dims();
    if calendar.len() != t {
        return Err(Error::validation(format!(
            "calendar covers {} days but the panel has {t}",
            calendar.len()
        )));
    }
    if calendar.extension != config.extension {
        return Err(Error::validation(
            "calendar extension level does not match the sampler configuration",
        ));
    }
    if graph.n() != n {
        return Err(Error::validation("graph and panel district counts differ"));
    }
    if m == 0 || m >= n {
        return Err(Error::validation(format!("factor count {m} must be in 1..{n}")));
    }

    let engine = SweepEngine::new(&panel.grid, calendar, graph, m, hyper, config.options())?;

    let results: Vec<std::result::Result<ChainDraws, String>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_one_chain(&engine, panel, hyper, config, c).map_err(|e| e.to_string()))
        .collect();

    let mut chains = Vec::new();
    let mut chain_errors = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(ch) => chains.push(ch),
            Err(e) => chain_errors.push((c, e)),
        }
    }
    if chains.is_empty() {
        return Err(Error::numerical(format!(
            "all chains failed; first error: {}",
            chain_errors[0].1
        )));
    }
    let meta = StoreMeta::new(
        panel,
        calendar,
        m,
        hyper,
        config,
        Permutation::identity(n),
        vec![1.0; n],
        chain_errors,
    );
    Ok(DrawStore { meta, chains })
}

fn run_one_chain(
    engine: &SweepEngine,
    panel: &FunctionalPanel,
    hyper: &Hyperparams,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainDraws> {
    let (n, t, k) = panel.values.dims();
    let m = engine.m();
    let mut rng = rng::stream(config.seed, &format!("chain-{chain}"));
    let dispersion = CHAIN_DISPERSION[chain % CHAIN_DISPERSION.len()];
    let mut state = ModelState::init(panel, m, hyper, dispersion)?;
    let mut mh = MhState::new(n, config.mh_step_phi, config.mh_step_psi, config.adapt);

    let fail =
        |sweep: usize, e: Error| Error::numerical(format!("chain {chain}, sweep {sweep}: {e}"));

    for sweep in 0..config.n_burnin {
        engine
            .sweep(&mut state, &panel.values, &mut mh, &mut rng)
            .map_err(|e| fail(sweep, e))?;
    }
    mh.freeze();

    let layout = DrawLayout::new(n, m, k);
    let mut draws = ChainDraws::empty(&layout, n * t * k);
    let stride = if config.z_snapshots == 0 {
        usize::MAX
    } else {
        config.n_draws.div_ceil(config.z_snapshots)
    };
    for d in 0..config.n_draws {
        for inner in 0..config.thin {
            let idx = config.n_burnin + d * config.thin + inner;
            engine
                .sweep(&mut state, &panel.values, &mut mh, &mut rng)
                .map_err(|e| fail(idx, e))?;
        }
        state.check_invariants()?;
        draws.push_draw(&layout, &state);
        if stride != usize::MAX && d % stride.max(1) == 0 {
            draws.push_z_snapshot(&state);
        }
    }
    draws.accept_phi = mh.phi_acceptance();
    draws.accept_psi = mh.psi_acceptance();
    Ok(draws)
}
