use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};

/// Prior hyperparameters.
///
/// Defaults follow the standard state-space settings: unit inverse-gamma
/// shapes and scales, a truncated-normal prior for the autoregressive
/// coefficients centered at 0.95, and a Beta(18, 2) prior on the spatial
/// autocorrelation. The kernel-range prior rate `beta_phi` and the
/// day-off-effect range `phi_prime` depend on the grid size and are
/// resolved lazily unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// IG prior shape/scale pair for the measurement variances.
    pub n_e: f64,
    pub s_e: f64,
    /// IG prior pair for the factor innovation variances.
    pub n_lambda: f64,
    pub s_lambda: f64,
    /// IG prior pair for the GP residual scales.
    pub n_eta: f64,
    pub s_eta: f64,
    /// Truncated-normal prior for the AR coefficients.
    pub m_gamma: f64,
    pub sigma_gamma: f64,
    /// Beta prior for the spatial autocorrelation.
    pub alpha_psi: f64,
    pub beta_psi: f64,
    /// Day-off-effect GP prior variance scale.
    pub eta_prime: f64,
    /// Day-off-effect GP prior range; defaults to the median of the
    /// kernel-range prior when absent.
    pub phi_prime: Option<f64>,
    /// Rate of the IG(2, beta_phi) prior on the kernel range; defaults to
    /// (K-1) / (-2 ln 0.05) when absent.
    pub beta_phi: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_e: 1.0,
            s_e: 1.0,
            n_lambda: 1.0,
            s_lambda: 1.0,
            n_eta: 1.0,
            s_eta: 1.0,
            m_gamma: 0.95,
            sigma_gamma: 1.0,
            alpha_psi: 18.0,
            beta_psi: 2.0,
            eta_prime: 1.0,
            phi_prime: None,
            beta_phi: None,
        }
    }
}

impl Hyperparams {
    /// The kernel-range prior rate for a K-point grid.
    pub fn beta_phi(&self, k: usize) -> f64 {
        self.beta_phi
            .unwrap_or_else(|| (k as f64 - 1.0) / (-2.0 * 0.05f64.ln()))
    }

    /// The day-off-effect GP range: the median of IG(2, beta_phi) unless set.
    pub fn phi_prime(&self, k: usize) -> f64 {
        self.phi_prime.unwrap_or_else(|| {
            let beta = self.beta_phi(k);
            // Median of IG(2, beta) = beta / median of Gamma(2, 1).
            let g = Gamma::new(2.0, 1.0).unwrap();
            beta / g.inverse_cdf(0.5)
        })
    }

    /// Variance of the fixed Gaussian prior on the first state, the
    /// stationary variance implied by the prior settings:
    /// s_lambda / (1 - m_gamma^2).
    pub fn x1_prior_var(&self) -> f64 {
        self.s_lambda / (1.0 - self.m_gamma * self.m_gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_e", self.n_e),
            ("s_e", self.s_e),
            ("n_lambda", self.n_lambda),
            ("s_lambda", self.s_lambda),
            ("n_eta", self.n_eta),
            ("s_eta", self.s_eta),
            ("sigma_gamma", self.sigma_gamma),
            ("alpha_psi", self.alpha_psi),
            ("beta_psi", self.beta_psi),
            ("eta_prime", self.eta_prime),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.m_gamma.abs() >= 1.0 {
            return Err(Error::validation("m_gamma must lie in (-1, 1)"));
        }
        for (name, v) in [("phi_prime", self.phi_prime), ("beta_phi", self.beta_phi)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::validation(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Parses a flat `key = value` configuration into hyperparameter overrides
/// applied on top of `base`. Lines starting with `#` and blank lines are
/// skipped; unknown keys are rejected.
pub fn parse_config(text: &str, base: &Hyperparams) -> Result<Hyperparams> {
    let mut out = base.clone();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("`{}` is not a number", value.trim()),
        })?;
        match key {
            "n_e" => out.n_e = value,
            "s_e" => out.s_e = value,
            "n_lambda" => out.n_lambda = value,
            "s_lambda" => out.s_lambda = value,
            "n_eta" => out.n_eta = value,
            "s_eta" => out.s_eta = value,
            "m_gamma" => out.m_gamma = value,
            "sigma_gamma" => out.sigma_gamma = value,
            "alpha_psi" => out.alpha_psi = value,
            "beta_psi" => out.beta_psi = value,
            "eta_prime" => out.eta_prime = value,
            "phi_prime" => out.phi_prime = Some(value),
            "beta_phi" => out.beta_phi = Some(value),
            other => return Err(Error::UnknownConfigKey(other.to_string())),
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_beta_phi_formula() {
        let h = Hyperparams::default();
        let k = 24;
        let expect = 23.0 / (-2.0 * 0.05f64.ln());
        assert_relative_eq!(h.beta_phi(k), expect, epsilon = 1e-12);
        assert_relative_eq!(h.beta_phi(k), 3.8387, epsilon = 1e-3);
    }

    #[test]
    fn phi_prime_defaults_to_prior_median() {
        let h = Hyperparams::default();
        let beta = h.beta_phi(24);
        let med = h.phi_prime(24);
        // Median of Gamma(2,1) is about 1.6783; IG median = beta / that.
        assert_relative_eq!(med, beta / 1.6783469900166605, epsilon = 1e-6);
    }

    #[test]
    fn config_overrides_and_rejects_unknown() {
        let base = Hyperparams::default();
        let cfg = "# comment\n m_gamma = 0.5 \n beta_psi=1\n";
        let h = parse_config(cfg, &base).unwrap();
        assert_eq!(h.m_gamma, 0.5);
        assert_eq!(h.beta_psi, 1.0);
        assert_eq!(h.n_e, 1.0);

        let err = parse_config("m_gama = 0.5", &base).unwrap_err();
        assert!(matches!(err, Error::UnknownConfigKey(k) if k == "m_gama"));

        assert!(parse_config("m_gamma = oops", &base).is_err());
        assert!(parse_config("just a line", &base).is_err());
        assert!(parse_config("sigma_gamma = -1", &base).is_err());
    }
}
