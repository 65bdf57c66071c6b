//! Random-walk Metropolis-Hastings pieces: log target densities for the
//! kernel range and the spatial autocorrelation, and per-parameter step
//! sizes with burn-in adaptation.

use crate::domain::CarPrecision;
use crate::error::Result;
use crate::kernel::{build_gram, GramMatrix, MeasurementGrid};
use nalgebra::DVector;

/// Acceptance-rate window targeted by the step-size adaptation.
const ACCEPT_LO: f64 = 0.30;
const ACCEPT_HI: f64 = 0.45;
const ADAPT_WINDOW: u32 = 50;
const STEP_MIN: f64 = 1e-3;
const STEP_MAX: f64 = 10.0;

/// Unnormalized log conditional of the kernel range phi for one district:
/// IG(2, beta) prior plus the Gaussian-process likelihood of the residual
/// curves under the correlation-only Gram at that range.
///
/// Returns the log density and the correlation Gram it built, so the
/// caller can keep the factorization on acceptance.
pub fn phi_log_target(
    phi: f64,
    beta: f64,
    eta2: f64,
    residuals: &[DVector<f64>],
    grid: &MeasurementGrid,
) -> Result<(f64, GramMatrix)> {
    let corr = build_gram(grid, 1.0, phi)?;
    let mut quad = 0.0;
    for r in residuals {
        quad += corr.inv_quad(r);
    }
    let t = residuals.len() as f64;
    let log_prior = -3.0 * phi.ln() - beta / phi;
    let log_lik = -0.5 * t * crate::kernel::log_det(&corr) - 0.5 * quad / eta2;
    Ok((log_prior + log_lik, corr))
}

/// Unnormalized log conditional of the spatial autocorrelation psi:
/// Beta(alpha, beta) prior plus the CAR prior density of every free
/// loading column at the given column variances.
///
/// `columns[s]` pairs the free part of column s with its variance
/// `upsilon^2 * theta_s^2` (or the global variance in the non-sparse
/// model). Builds Q_s(psi) afresh; empty columns contribute nothing.
pub fn psi_log_target(
    psi: f64,
    alpha: f64,
    beta: f64,
    columns: &[(DVector<f64>, f64)],
    graph: &crate::domain::AdjacencyGraph,
) -> Result<(f64, Vec<CarPrecision>)> {
    let mut logp = (alpha - 1.0) * psi.ln() + (beta - 1.0) * (1.0 - psi).ln();
    let mut qs = Vec::with_capacity(columns.len());
    for (s, (b, var)) in columns.iter().enumerate() {
        let q = crate::domain::car_precision(graph, s + 1, psi)?;
        if b.len() > 0 {
            logp += 0.5 * q.log_det()? - q.quad(b) / (2.0 * var);
        }
        qs.push(q);
    }
    Ok((logp, qs))
}

/// MH step sizes, acceptance counters, and the burn-in adaptation policy.
///
/// Steps are multiplied by 1.1 when a window's acceptance rate exceeds
/// 45% and by 0.9 when it falls below 30%, once every 50 sweeps, and only
/// while adapting. [`MhState::freeze`] stops adaptation and resets the
/// counters so post-burn-in acceptance can be reported.
#[derive(Debug, Clone)]
pub struct MhState {
    pub step_phi: Vec<f64>,
    pub step_psi: f64,
    adapting: bool,
    sweeps: u32,
    phi_accepts: Vec<u32>,
    phi_tries: Vec<u32>,
    psi_accepts: u32,
    psi_tries: u32,
    phi_total_accepts: u64,
    phi_total_tries: u64,
    psi_total_accepts: u64,
    psi_total_tries: u64,
}

impl MhState {
    pub fn new(n_districts: usize, step_phi: f64, step_psi: f64, adapt: bool) -> Self {
        MhState {
            step_phi: vec![step_phi; n_districts],
            step_psi,
            adapting: adapt,
            sweeps: 0,
            phi_accepts: vec![0; n_districts],
            phi_tries: vec![0; n_districts],
            psi_accepts: 0,
            psi_tries: 0,
            phi_total_accepts: 0,
            phi_total_tries: 0,
            psi_total_accepts: 0,
            psi_total_tries: 0,
        }
    }

    pub fn record_phi(&mut self, district: usize, accepted: bool) {
        self.phi_tries[district] += 1;
        self.phi_total_tries += 1;
        if accepted {
            self.phi_accepts[district] += 1;
            self.phi_total_accepts += 1;
        }
    }

    pub fn record_psi(&mut self, accepted: bool) {
        self.psi_tries += 1;
        self.psi_total_tries += 1;
        if accepted {
            self.psi_accepts += 1;
            self.psi_total_accepts += 1;
        }
    }

    /// Called once per completed sweep; applies adaptation at window ends.
    pub fn end_sweep(&mut self) {
        self.sweeps += 1;
        if !self.adapting || self.sweeps % ADAPT_WINDOW != 0 {
            return;
        }
        for i in 0..self.step_phi.len() {
            if self.phi_tries[i] > 0 {
                let rate = f64::from(self.phi_accepts[i]) / f64::from(self.phi_tries[i]);
                self.step_phi[i] = tuned(self.step_phi[i], rate);
            }
            self.phi_accepts[i] = 0;
            self.phi_tries[i] = 0;
        }
        if self.psi_tries > 0 {
            let rate = f64::from(self.psi_accepts) / f64::from(self.psi_tries);
            self.step_psi = tuned(self.step_psi, rate);
        }
        self.psi_accepts = 0;
        self.psi_tries = 0;
    }

    /// Stops adaptation (detailed balance holds from here on) and resets
    /// the global counters so acceptance rates reflect kept draws only.
    pub fn freeze(&mut self) {
        self.adapting = false;
        self.phi_total_accepts = 0;
        self.phi_total_tries = 0;
        self.psi_total_accepts = 0;
        self.psi_total_tries = 0;
    }

    pub fn phi_acceptance(&self) -> f64 {
        if self.phi_total_tries == 0 {
            return f64::NAN;
        }
        self.phi_total_accepts as f64 / self.phi_total_tries as f64
    }

    pub fn psi_acceptance(&self) -> f64 {
        if self.psi_total_tries == 0 {
            return f64::NAN;
        }
        self.psi_total_accepts as f64 / self.psi_total_tries as f64
    }
}

fn tuned(step: f64, rate: f64) -> f64 {
    let next = if rate > ACCEPT_HI {
        step * 1.1
    } else if rate < ACCEPT_LO {
        step * 0.9
    } else {
        step
    };
    next.clamp(STEP_MIN, STEP_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptation_moves_steps_toward_band() {
        let mut mh = MhState::new(1, 0.3, 0.3, true);
        // 50 sweeps of always-accepted phi moves: step should grow.
        for _ in 0..ADAPT_WINDOW {
            mh.record_phi(0, true);
            mh.record_psi(false);
            mh.end_sweep();
        }
        assert!(mh.step_phi[0] > 0.3);
        assert!(mh.step_psi < 0.3);
    }

    #[test]
    fn frozen_state_stops_adapting() {
        let mut mh = MhState::new(1, 0.3, 0.3, true);
        mh.freeze();
        for _ in 0..(2 * ADAPT_WINDOW) {
            mh.record_phi(0, true);
            mh.end_sweep();
        }
        assert_eq!(mh.step_phi[0], 0.3);
        assert!((mh.phi_acceptance() - 1.0).abs() < 1e-12);
    }
}
