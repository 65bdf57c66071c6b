//! One full Gibbs sweep over the model state.
//!
//! Every Gaussian block is assembled in precision/information form and
//! drawn through a Cholesky factorization; the latent-curve block never
//! forms the NK x NK matrix but works district by district, and the
//! factor-state block factorizes its MK x MK precision once per boundary
//! class (first day, interior, last day) since it does not depend on t.
//!
//! Time is indexed 0-based here; the evolution for day i >= 1 is
//! x[i] = gamma x[i-1] + d[i] mu + d'[i] mu' + d''[i] mu'' + noise,
//! and the first day carries a fixed Gaussian prior with the stationary
//! variance implied by the prior settings. Calendar-effect blocks are
//! skipped entirely (not drawn from their prior) when their dummy vector
//! is identically zero, so models that differ only in unused effects
//! consume identical randomness.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dist::{sample_inverse_gamma, sample_truncated_normal};
use crate::domain::{AdjacencyGraph, Calendar, CarPrecision, Cube, Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::kernel::{build_gram, MeasurementGrid, SpdFactor};
use crate::rng::Rng;

use super::mh::{phi_log_target, psi_log_target, MhState};
use super::PriorKind;

/// Sweep-level switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub prior: PriorKind,
    pub mu_flat_prior: bool,
}

/// Which calendar effect a mu-block update refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectKind {
    DayOff,
    PreDayOff,
    PreWorking,
}

/// Immutable context for sweeping one model: grid, calendar, adjacency,
/// priors, and derived constants.
pub struct SweepEngine<'a> {
    grid: &'a MeasurementGrid,
    calendar: &'a Calendar,
    graph: &'a AdjacencyGraph,
    hyper: &'a Hyperparams,
    options: SweepOptions,
    n: usize,
    m: usize,
    t: usize,
    k: usize,
    beta_phi: f64,
    /// Fixed precision of the first-day state prior.
    x1_prec: f64,
    /// Precision of the GP prior on calendar effects; `None` in flat mode.
    mu_prior_prec: Option<DMatrix<f64>>,
    has_d: bool,
    has_dp: bool,
    has_dpp: bool,
}

struct GramCache {
    rinv: Vec<DMatrix<f64>>,
}

impl<'a> SweepEngine<'a> {
    pub fn new(
        grid: &'a MeasurementGrid,
        calendar: &'a Calendar,
        graph: &'a AdjacencyGraph,
        m: usize,
        hyper: &'a Hyperparams,
        options: SweepOptions,
    ) -> Result<Self> {
        let n = graph.n();
        let t = calendar.len();
        let k = grid.len();
        if m == 0 || m > n {
            return Err(Error::validation(format!("factor count {m} out of range for N={n}")));
        }
        let beta_phi = hyper.beta_phi(k);
        let mu_prior_prec = if options.mu_flat_prior {
            None
        } else {
            let gram = build_gram(grid, hyper.eta_prime, hyper.phi_prime(k))?;
            Some(gram.factor().solve_mat(&DMatrix::identity(k, k)))
        };
        Ok(SweepEngine {
            grid,
            calendar,
            graph,
            hyper,
            options,
            n,
            m,
            t,
            k,
            beta_phi,
            x1_prec: 1.0 / hyper.x1_prior_var(),
            mu_prior_prec,
            has_d: calendar.d.iter().any(|&v| v != 0.0),
            has_dp: calendar.d_prime.iter().any(|&v| v != 0.0),
            has_dpp: calendar.d_dprime.iter().any(|&v| v != 0.0),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &MeasurementGrid {
        self.grid
    }

    /// Variance of the free part of loading column s under the current
    /// scale parameters.
    fn column_var(&self, state: &ModelState, s: usize) -> f64 {
        match self.options.prior {
            PriorKind::Horseshoe => state.upsilon2 * state.theta2[s],
            PriorKind::NonSparse => state.theta2[s],
        }
    }

    fn gram_cache(&self, state: &ModelState) -> Result<GramCache> {
        let eye = DMatrix::identity(self.k, self.k);
        let mut rinv = Vec::with_capacity(self.n);
        for s in 0..self.n {
            let g = build_gram(self.grid, state.eta2[s], state.phi[s])
                .map_err(|e| Error::numerical(format!("gram for district {s}: {e}")))?;
            rinv.push(g.factor().solve_mat(&eye));
        }
        Ok(GramCache { rinv })
    }

    fn qcar_all(&self, psi: f64) -> Result<Vec<CarPrecision>> {
        (0..self.m)
            .map(|s| crate::domain::car_precision(self.graph, s + 1, psi))
            .collect()
    }

    /// The loading-weighted factor mix (B x_t) for district s: a K-vector.
    fn loading_mix(&self, state: &ModelState, t: usize, s: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        for f in 0..self.m {
            let w = state.b.get(s, f);
            if w != 0.0 {
                add_scaled(out.as_mut_slice(), state.x.lane(f, t), w);
            }
        }
        out
    }

    /// Calendar-effect contribution to the evolution mean of factor f on
    /// day i, optionally excluding one effect kind.
    fn effect_sum(
        &self,
        state: &ModelState,
        i: usize,
        f: usize,
        exclude: Option<EffectKind>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        let kinds = [
            (EffectKind::DayOff, &self.calendar.d, &state.mu),
            (EffectKind::PreDayOff, &self.calendar.d_prime, &state.mu_prime),
            (EffectKind::PreWorking, &self.calendar.d_dprime, &state.mu_dprime),
        ];
        for (kind, dummy, effect) in kinds {
            if exclude == Some(kind) {
                continue;
            }
            let w = dummy[i];
            if w != 0.0 {
                add_scaled(out.as_mut_slice(), ModelState::effect_row(effect, f, self.k), w);
            }
        }
        out
    }

    // ------------------------------------------------------------------
    // Latent curves z
    // ------------------------------------------------------------------

    /// Posterior precision and information vector for district s of day t.
    fn z_prec_info_district(
        &self,
        state: &ModelState,
        y: &Cube,
        t: usize,
        s: usize,
        rinv_s: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let e_inv = 1.0 / state.e2[s];
        let mut prec = rinv_s.clone();
        for i in 0..self.k {
            prec[(i, i)] += e_inv;
        }
        let mix = self.loading_mix(state, t, s);
        let mut info = rinv_s * mix;
        let y_lane = y.lane(s, t);
        for i in 0..self.k {
            info[i] += e_inv * y_lane[i];
        }
        (prec, info)
    }

    /// Assembled per-district precision and information for the full
    /// NK-dimensional day-t block (block diagonal over districts).
    pub fn z_precision_info(
        &self,
        state: &ModelState,
        y: &Cube,
        t: usize,
        s: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let g = build_gram(self.grid, state.eta2[s], state.phi[s])?;
        let rinv = g.factor().solve_mat(&DMatrix::identity(self.k, self.k));
        Ok(self.z_prec_info_district(state, y, t, s, &rinv))
    }

    /// Draws the day-t latent curves for all districts, returning the
    /// concatenated NK-vector (district-major) without mutating the state.
    pub fn sample_z_day(
        &self,
        state: &ModelState,
        y: &Cube,
        t: usize,
        rng: &mut Rng,
    ) -> Result<DVector<f64>> {
        let cache = self.gram_cache(state)?;
        let mut out = DVector::zeros(self.n * self.k);
        for s in 0..self.n {
            let (prec, info) = self.z_prec_info_district(state, y, t, s, &cache.rinv[s]);
            let f = SpdFactor::new(&prec)?;
            let mean = f.solve_vec(&info);
            let draw = f.sample_precision(&mean, rng);
            out.rows_mut(s * self.k, self.k).copy_from(&draw);
        }
        Ok(out)
    }

    fn update_z(
        &self,
        state: &mut ModelState,
        y: &Cube,
        cache: &GramCache,
        rng: &mut Rng,
    ) -> Result<()> {
        // The per-district posterior precision does not depend on t.
        let mut factors = Vec::with_capacity(self.n);
        for s in 0..self.n {
            let e_inv = 1.0 / state.e2[s];
            let mut prec = cache.rinv[s].clone();
            for i in 0..self.k {
                prec[(i, i)] += e_inv;
            }
            factors.push(SpdFactor::new(&prec).map_err(|e| block_err("z", s, e))?);
        }
        for t in 0..self.t {
            for s in 0..self.n {
                let e_inv = 1.0 / state.e2[s];
                let mix = self.loading_mix(state, t, s);
                let mut info = &cache.rinv[s] * mix;
                let y_lane = y.lane(s, t);
                for i in 0..self.k {
                    info[i] += e_inv * y_lane[i];
                }
                let mean = factors[s].solve_vec(&info);
                let draw = factors[s].sample_precision(&mean, rng);
                state.z.set_lane(s, t, &draw);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Factor states x
    // ------------------------------------------------------------------

    /// The likelihood block (B' blockdiag(R^-1) B) as a dense MK x MK
    /// matrix.
    fn x_likelihood_block(&self, state: &ModelState, rinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mk = self.m * self.k;
        let mut h = DMatrix::zeros(mk, mk);
        for f1 in 0..self.m {
            for f2 in f1..self.m {
                let mut weight_sum = DMatrix::zeros(self.k, self.k);
                let mut any = false;
                for s in 0..self.n {
                    let w = state.b.get(s, f1) * state.b.get(s, f2);
                    if w != 0.0 {
                        weight_sum += &rinv[s] * w;
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                for i in 0..self.k {
                    for j in 0..self.k {
                        h[(f1 * self.k + i, f2 * self.k + j)] = weight_sum[(i, j)];
                        if f1 != f2 {
                            h[(f2 * self.k + j, f1 * self.k + i)] = weight_sum[(i, j)];
                        }
                    }
                }
            }
        }
        h
    }

    /// Adds the evolution precision for day t to the likelihood block.
    fn x_add_evolution_prec(&self, state: &ModelState, t: usize, prec: &mut DMatrix<f64>) {
        for f in 0..self.m {
            let lam_inv = 1.0 / state.lambda2[f];
            let g = state.gamma[f];
            let own = if t == 0 { self.x1_prec } else { lam_inv };
            let fwd = if t + 1 < self.t { g * g * lam_inv } else { 0.0 };
            for i in 0..self.k {
                let d = f * self.k + i;
                prec[(d, d)] += own + fwd;
            }
        }
    }

    fn x_info(
        &self,
        state: &ModelState,
        t: usize,
        u_t: &[DVector<f64>],
    ) -> DVector<f64> {
        let mut info = DVector::zeros(self.m * self.k);
        for f in 0..self.m {
            let mut block = DVector::zeros(self.k);
            for s in 0..self.n {
                let w = state.b.get(s, f);
                if w != 0.0 {
                    add_scaled(block.as_mut_slice(), u_t[s].as_slice(), w);
                }
            }
            let lam_inv = 1.0 / state.lambda2[f];
            let g = state.gamma[f];
            if t > 0 {
                // Backward: x[t] = gamma x[t-1] + effects + noise.
                let c = self.effect_sum(state, t, f, None);
                let prev = state.x.lane(f, t - 1);
                for i in 0..self.k {
                    block[i] += lam_inv * (g * prev[i] + c[i]);
                }
            }
            if t + 1 < self.t {
                // Forward: x[t+1] = gamma x[t] + effects + noise.
                let c = self.effect_sum(state, t + 1, f, None);
                let next = state.x.lane(f, t + 1);
                for i in 0..self.k {
                    block[i] += lam_inv * g * (next[i] - c[i]);
                }
            }
            info.rows_mut(f * self.k, self.k).copy_from(&block);
        }
        info
    }

    /// Full posterior precision and information for the day-t factor state.
    pub fn x_precision_info(
        &self,
        state: &ModelState,
        t: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let cache = self.gram_cache(state)?;
        let mut prec = self.x_likelihood_block(state, &cache.rinv);
        self.x_add_evolution_prec(state, t, &mut prec);
        let u_t: Vec<DVector<f64>> =
            (0..self.n).map(|s| &cache.rinv[s] * state.z.lane_vector(s, t)).collect();
        let info = self.x_info(state, t, &u_t);
        Ok((prec, info))
    }

    /// Draws the day-t factor state (MK-vector) without mutating anything.
    pub fn sample_x_day(&self, state: &ModelState, t: usize, rng: &mut Rng) -> Result<DVector<f64>> {
        let (prec, info) = self.x_precision_info(state, t)?;
        let f = SpdFactor::new(&prec)?;
        let mean = f.solve_vec(&info);
        Ok(f.sample_precision(&mean, rng))
    }

    fn update_x(&self, state: &mut ModelState, cache: &GramCache, rng: &mut Rng) -> Result<()> {
        let base = self.x_likelihood_block(state, &cache.rinv);
        // Precompute u_{t,s} = R_s^{-1} z_{t,s} for every day and district.
        let mut u: Vec<Vec<DVector<f64>>> = Vec::with_capacity(self.t);
        for t in 0..self.t {
            u.push(
                (0..self.n).map(|s| &cache.rinv[s] * state.z.lane_vector(s, t)).collect(),
            );
        }
        // Three precision classes: first day, interior, last day.
        let factor_for = |t: usize| -> Result<SpdFactor> {
            let mut prec = base.clone();
            self.x_add_evolution_prec(state, t, &mut prec);
            SpdFactor::new(&prec).map_err(|e| block_err("x", t, e))
        };
        let first = factor_for(0)?;
        let interior = if self.t > 2 { Some(factor_for(1)?) } else { None };
        let last = factor_for(self.t - 1)?;
        for t in 0..self.t {
            let f = if t == 0 {
                &first
            } else if t + 1 == self.t {
                &last
            } else {
                interior.as_ref().expect("interior factor exists when T > 2")
            };
            let info = self.x_info(state, t, &u[t]);
            let mean = f.solve_vec(&info);
            let draw = f.sample_precision(&mean, rng);
            for fa in 0..self.m {
                state.x.lane_mut(fa, t).copy_from_slice(draw.rows(fa * self.k, self.k).as_slice());
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // AR coefficients gamma
    // ------------------------------------------------------------------

    /// Posterior mean and variance of gamma_f before truncation to (-1, 1).
    pub fn gamma_mean_var(&self, state: &ModelState, f: usize) -> (f64, f64) {
        let lam_inv = 1.0 / state.lambda2[f];
        let mut quad = 0.0;
        let mut cross = 0.0;
        for t in 1..self.t {
            let prev = state.x.lane(f, t - 1);
            let cur = state.x.lane(f, t);
            let c = self.effect_sum(state, t, f, None);
            for i in 0..self.k {
                quad += prev[i] * prev[i];
                cross += (cur[i] - c[i]) * prev[i];
            }
        }
        let prior_prec = 1.0 / (self.hyper.sigma_gamma * self.hyper.sigma_gamma);
        let var = 1.0 / (quad * lam_inv + prior_prec);
        let mean = var * (cross * lam_inv + self.hyper.m_gamma * prior_prec);
        (mean, var)
    }

    pub fn sample_gamma(&self, state: &ModelState, f: usize, rng: &mut Rng) -> f64 {
        let (mean, var) = self.gamma_mean_var(state, f);
        sample_truncated_normal(mean, var.sqrt(), -1.0, 1.0, rng)
    }

    fn update_gamma(&self, state: &mut ModelState, rng: &mut Rng) {
        for f in 0..self.m {
            state.gamma[f] = self.sample_gamma(state, f, rng);
        }
    }

    // ------------------------------------------------------------------
    // Variances e2, lambda2
    // ------------------------------------------------------------------

    pub fn sample_e2(&self, state: &ModelState, y: &Cube, s: usize, rng: &mut Rng) -> f64 {
        let mut ss = 0.0;
        for t in 0..self.t {
            let yl = y.lane(s, t);
            let zl = state.z.lane(s, t);
            for i in 0..self.k {
                let d = yl[i] - zl[i];
                ss += d * d;
            }
        }
        let shape = 0.5 * (self.hyper.n_e + (self.t * self.k) as f64);
        let rate = 0.5 * (self.hyper.n_e * self.hyper.s_e + ss);
        sample_inverse_gamma(shape, rate, rng)
    }

    fn update_e2(&self, state: &mut ModelState, y: &Cube, rng: &mut Rng) {
        for s in 0..self.n {
            state.e2[s] = self.sample_e2(state, y, s, rng);
        }
    }

    pub fn sample_lambda2(&self, state: &ModelState, f: usize, rng: &mut Rng) -> f64 {
        let mut ss = 0.0;
        for t in 1..self.t {
            let cur = state.x.lane(f, t);
            let prev = state.x.lane(f, t - 1);
            let c = self.effect_sum(state, t, f, None);
            let g = state.gamma[f];
            for i in 0..self.k {
                let d = cur[i] - g * prev[i] - c[i];
                ss += d * d;
            }
        }
        let shape = 0.5 * (self.hyper.n_lambda + ((self.t - 1) * self.k) as f64);
        let rate = 0.5 * (self.hyper.n_lambda * self.hyper.s_lambda + ss);
        sample_inverse_gamma(shape, rate, rng)
    }

    fn update_lambda2(&self, state: &mut ModelState, rng: &mut Rng) {
        for f in 0..self.m {
            state.lambda2[f] = self.sample_lambda2(state, f, rng);
        }
    }

    // ------------------------------------------------------------------
    // GP residual scale eta2 and kernel range phi
    // ------------------------------------------------------------------

    fn gp_residuals(&self, state: &ModelState, s: usize) -> Vec<DVector<f64>> {
        (0..self.t)
            .map(|t| state.z.lane_vector(s, t) - self.loading_mix(state, t, s))
            .collect()
    }

    /// Draws eta2 conjugately at the current range, then proposes a
    /// random-walk move of log phi. Returns (eta2, phi, accepted).
    pub fn sample_eta2_phi(
        &self,
        state: &ModelState,
        s: usize,
        step: f64,
        rng: &mut Rng,
    ) -> Result<(f64, f64, bool)> {
        let resid = self.gp_residuals(state, s);
        let corr = build_gram(self.grid, 1.0, state.phi[s])?;
        let quad: f64 = resid.iter().map(|r| corr.inv_quad(r)).sum();
        let shape = 0.5 * (self.hyper.n_eta + (self.t * self.k) as f64);
        let rate = 0.5 * (self.hyper.n_eta * self.hyper.s_eta + quad);
        let eta2 = sample_inverse_gamma(shape, rate, rng);

        let phi = state.phi[s];
        let (log_cur, _) = phi_log_target(phi, self.beta_phi, eta2, &resid, self.grid)?;
        let z: f64 = StandardNormal.sample(rng);
        let proposal = (phi.ln() + step * z).exp();
        let u: f64 = rng.random();
        let accepted = match phi_log_target(proposal, self.beta_phi, eta2, &resid, self.grid) {
            Ok((log_prop, _)) => {
                // Jacobian of the log-scale walk: q(phi|prop)/q(prop|phi) = prop/phi.
                let log_acc = log_prop - log_cur + (proposal.ln() - phi.ln());
                u.ln() < log_acc
            }
            Err(_) => false,
        };
        Ok((eta2, if accepted { proposal } else { phi }, accepted))
    }

    fn update_eta2_phi(&self, state: &mut ModelState, mh: &mut MhState, rng: &mut Rng) -> Result<()> {
        for s in 0..self.n {
            let (eta2, phi, accepted) = self
                .sample_eta2_phi(state, s, mh.step_phi[s], rng)
                .map_err(|e| block_err("eta2/phi", s, e))?;
            state.eta2[s] = eta2;
            state.phi[s] = phi;
            mh.record_phi(s, accepted);
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Calendar effects mu, mu', mu''
    // ------------------------------------------------------------------

    fn effect_dummy(&self, kind: EffectKind) -> &[f64] {
        match kind {
            EffectKind::DayOff => &self.calendar.d,
            EffectKind::PreDayOff => &self.calendar.d_prime,
            EffectKind::PreWorking => &self.calendar.d_dprime,
        }
    }

    /// Posterior precision and information for the effect curve of factor f.
    pub fn mu_precision_info(
        &self,
        state: &ModelState,
        kind: EffectKind,
        f: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let dummy = self.effect_dummy(kind);
        let lam_inv = 1.0 / state.lambda2[f];
        let g = state.gamma[f];
        let mut weight = 0.0;
        let mut info = DVector::zeros(self.k);
        for t in 1..self.t {
            let w = dummy[t];
            if w == 0.0 {
                continue;
            }
            weight += w * w;
            let cur = state.x.lane(f, t);
            let prev = state.x.lane(f, t - 1);
            let other = self.effect_sum(state, t, f, Some(kind));
            for i in 0..self.k {
                info[i] += w * (cur[i] - g * prev[i] - other[i]) * lam_inv;
            }
        }
        let mut prec = match &self.mu_prior_prec {
            Some(p0) => p0.clone(),
            // Flat prior: no prior precision. With no active transitions
            // the conditional would be improper; fall back to the proper
            // GP prior in that case.
            None if weight > 0.0 => DMatrix::zeros(self.k, self.k),
            None => {
                let gram = build_gram(self.grid, self.hyper.eta_prime, self.hyper.phi_prime(self.k))
                    .expect("effect prior gram");
                gram.factor().solve_mat(&DMatrix::identity(self.k, self.k))
            }
        };
        let scale = weight * lam_inv;
        for i in 0..self.k {
            prec[(i, i)] += scale;
        }
        (prec, info)
    }

    pub fn sample_mu(
        &self,
        state: &ModelState,
        kind: EffectKind,
        f: usize,
        rng: &mut Rng,
    ) -> Result<DVector<f64>> {
        let (prec, info) = self.mu_precision_info(state, kind, f);
        let fa = SpdFactor::new(&prec)?;
        let mean = fa.solve_vec(&info);
        Ok(fa.sample_precision(&mean, rng))
    }

    fn update_mu_kind(&self, state: &mut ModelState, kind: EffectKind, rng: &mut Rng) -> Result<()> {
        for f in 0..self.m {
            let draw = self.sample_mu(state, kind, f, rng).map_err(|e| block_err("mu", f, e))?;
            let row = match kind {
                EffectKind::DayOff => &mut state.mu,
                EffectKind::PreDayOff => &mut state.mu_prime,
                EffectKind::PreWorking => &mut state.mu_dprime,
            };
            row[f * self.k..(f + 1) * self.k].copy_from_slice(draw.as_slice());
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Loading columns b
    // ------------------------------------------------------------------

    /// Posterior precision and information for the free part of column s,
    /// given the CAR precision at the current psi.
    fn b_prec_info(
        &self,
        state: &ModelState,
        s: usize,
        rinv: &[DMatrix<f64>],
        q_s: &CarPrecision,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let p = state.b.free_len(s);
        let coeff = 1.0 / self.column_var(state, s);
        let mut prec = &q_s.q * coeff;
        let mut info = DVector::zeros(p);
        for t in 0..self.t {
            let x_ts = state.x.lane_vector(s, t);
            for (jj, j) in (s + 1..self.n).enumerate() {
                let w = &rinv[j] * &x_ts;
                // Partial residual: district j minus every factor's
                // contribution except column s's own.
                let mut resid = state.z.lane_vector(j, t) - self.loading_mix(state, t, j);
                let b_js = state.b.get(j, s);
                if b_js != 0.0 {
                    resid += &x_ts * b_js;
                }
                prec[(jj, jj)] += x_ts.dot(&w);
                info[jj] += resid.dot(&w);
            }
        }
        (prec, info)
    }

    /// Assembled precision and information for loading column s.
    pub fn b_precision_info(
        &self,
        state: &ModelState,
        s: usize,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let cache = self.gram_cache(state)?;
        let q = crate::domain::car_precision(self.graph, s + 1, state.psi)?;
        Ok(self.b_prec_info(state, s, &cache.rinv, &q))
    }

    /// Draws the free part of loading column s without mutating the state.
    pub fn sample_b_column(&self, state: &ModelState, s: usize, rng: &mut Rng) -> Result<DVector<f64>> {
        let (prec, info) = self.b_precision_info(state, s)?;
        let f = SpdFactor::new(&prec)?;
        let mean = f.solve_vec(&info);
        Ok(f.sample_precision(&mean, rng))
    }

    fn update_b(
        &self,
        state: &mut ModelState,
        cache: &GramCache,
        qcar: &[CarPrecision],
        rng: &mut Rng,
    ) -> Result<()> {
        for s in 0..self.m {
            if state.b.free_len(s) == 0 {
                continue;
            }
            let (prec, info) = self.b_prec_info(state, s, &cache.rinv, &qcar[s]);
            let f = SpdFactor::new(&prec).map_err(|e| block_err("b", s, e))?;
            let mean = f.solve_vec(&info);
            let draw = f.sample_precision(&mean, rng);
            state.b.set_free_column(s, &draw)?;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Scale hierarchy
    // ------------------------------------------------------------------

    /// Draws the shrinkage scales given the current loading columns:
    /// (theta2, zeta, upsilon2, nu). In the non-sparse model the single
    /// global column variance is returned broadcast over theta2 and the
    /// augmentation variables pass through unchanged.
    pub fn sample_scales(
        &self,
        state: &ModelState,
        qcar: &[CarPrecision],
        rng: &mut Rng,
    ) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let quads: Vec<f64> =
            (0..self.m).map(|s| qcar[s].quad(&state.b.free_column(s))).collect();
        let free_total: usize = (0..self.m).map(|s| state.b.free_len(s)).sum();
        match self.options.prior {
            PriorKind::Horseshoe => {
                let mut theta2 = Vec::with_capacity(self.m);
                for s in 0..self.m {
                    let shape = 0.5 * (state.b.free_len(s) as f64 + 1.0);
                    let rate = quads[s] / (2.0 * state.upsilon2) + 1.0 / state.zeta[s];
                    theta2.push(sample_inverse_gamma(shape, rate, rng));
                }
                let mut zeta = Vec::with_capacity(self.m);
                for s in 0..self.m {
                    zeta.push(sample_inverse_gamma(1.0, 1.0 / theta2[s] + 1.0, rng));
                }
                let shape_u = 0.5 * (1.0 + free_total as f64);
                let rate_u: f64 = (0..self.m)
                    .map(|s| quads[s] / (2.0 * theta2[s]))
                    .sum::<f64>()
                    + 1.0 / state.nu;
                let upsilon2 = sample_inverse_gamma(shape_u, rate_u, rng);
                let nu = sample_inverse_gamma(1.0, 1.0 / upsilon2 + 1.0, rng);
                (theta2, zeta, upsilon2, nu)
            }
            PriorKind::NonSparse => {
                let shape = 0.1 + 0.5 * free_total as f64;
                let rate = 0.1 + 0.5 * quads.iter().sum::<f64>();
                let theta2 = sample_inverse_gamma(shape, rate, rng);
                (vec![theta2; self.m], state.zeta.clone(), state.upsilon2, state.nu)
            }
        }
    }

    fn update_scales(&self, state: &mut ModelState, qcar: &[CarPrecision], rng: &mut Rng) {
        let (theta2, zeta, upsilon2, nu) = self.sample_scales(state, qcar, rng);
        state.theta2 = theta2;
        state.zeta = zeta;
        state.upsilon2 = upsilon2;
        state.nu = nu;
    }

    // ------------------------------------------------------------------
    // Spatial autocorrelation psi
    // ------------------------------------------------------------------

    fn psi_columns(&self, state: &ModelState) -> Vec<(DVector<f64>, f64)> {
        (0..self.m)
            .map(|s| (state.b.free_column(s), self.column_var(state, s)))
            .collect()
    }

    /// One random-walk step of logit(psi). Returns (psi, accepted).
    pub fn sample_psi(&self, state: &ModelState, step: f64, rng: &mut Rng) -> Result<(f64, bool)> {
        let columns = self.psi_columns(state);
        let psi = state.psi;
        let (log_cur, _) =
            psi_log_target(psi, self.hyper.alpha_psi, self.hyper.beta_psi, &columns, self.graph)?;
        let z: f64 = StandardNormal.sample(rng);
        let logit = (psi / (1.0 - psi)).ln() + step * z;
        let proposal = 1.0 / (1.0 + (-logit).exp());
        let u: f64 = rng.random();
        if proposal <= 0.0 || proposal >= 1.0 {
            return Ok((psi, false));
        }
        let (log_prop, _) = psi_log_target(
            proposal,
            self.hyper.alpha_psi,
            self.hyper.beta_psi,
            &columns,
            self.graph,
        )?;
        // Jacobian of the logit walk: psi(1-psi) at each end.
        let log_acc = log_prop - log_cur + (proposal * (1.0 - proposal)).ln()
            - (psi * (1.0 - psi)).ln();
        let accepted = u.ln() < log_acc;
        Ok((if accepted { proposal } else { psi }, accepted))
    }

    fn update_psi(&self, state: &mut ModelState, mh: &mut MhState, rng: &mut Rng) -> Result<()> {
        let (psi, accepted) = self.sample_psi(state, mh.step_psi, rng)?;
        state.psi = psi;
        mh.record_psi(accepted);
        Ok(())
    }

    // ------------------------------------------------------------------
    // The sweep
    // ------------------------------------------------------------------

    /// Runs one systematic-scan sweep over all blocks, in the fixed order:
    /// z (all days), x (all days), gamma, e2, lambda2, (eta2, phi),
    /// calendar effects, loading columns, scale hierarchy, psi.
    pub fn sweep(
        &self,
        state: &mut ModelState,
        y: &Cube,
        mh: &mut MhState,
        rng: &mut Rng,
    ) -> Result<()> {
        let cache = self.gram_cache(state)?;
        let qcar = self.qcar_all(state.psi)?;

        self.update_z(state, y, &cache, rng)?;
        self.update_x(state, &cache, rng)?;
        self.update_gamma(state, rng);
        self.update_e2(state, y, rng);
        self.update_lambda2(state, rng);
        self.update_eta2_phi(state, mh, rng)?;
        if self.has_d {
            self.update_mu_kind(state, EffectKind::DayOff, rng)?;
        }
        if self.has_dp {
            self.update_mu_kind(state, EffectKind::PreDayOff, rng)?;
        }
        if self.has_dpp {
            self.update_mu_kind(state, EffectKind::PreWorking, rng)?;
        }
        // eta2/phi changed; the loading block needs current Gram inverses.
        let cache = self.gram_cache(state)?;
        self.update_b(state, &cache, &qcar, rng)?;
        self.update_scales(state, &qcar, rng);
        self.update_psi(state, mh, rng)?;
        mh.end_sweep();
        Ok(())
    }
}

fn block_err(block: &str, index: usize, e: Error) -> Error {
    Error::numerical(format!("{block} block, index {index}: {e}"))
}

#[inline]
fn add_scaled(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}
