use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::hyper::Hyperparams;
use super::loading::FactorLoading;
use super::panel::{Cube, FunctionalPanel};

/// One complete parameter configuration of the model.
///
/// Curve-valued effects (`mu`, `mu_prime`, `mu_dprime`) are stored
/// factor-major as M x K; latent curves as cubes. The augmentation
/// variables `zeta` and `nu` carry the half-Cauchy hierarchy of the
/// horseshoe prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Latent smooth curves, N x T x K.
    pub z: Cube,
    /// Factor curves, M x T x K.
    pub x: Cube,
    pub b: FactorLoading,
    /// Per-factor AR coefficients, each in (-1, 1).
    pub gamma: Vec<f64>,
    /// Day-off effect curves, M x K row-major.
    pub mu: Vec<f64>,
    pub mu_prime: Vec<f64>,
    pub mu_dprime: Vec<f64>,
    /// Measurement error variances, length N.
    pub e2: Vec<f64>,
    /// Factor innovation variances, length M.
    pub lambda2: Vec<f64>,
    /// GP residual variance scales, length N.
    pub eta2: Vec<f64>,
    /// GP kernel ranges, length N.
    pub phi: Vec<f64>,
    /// Horseshoe local scales (squared), length M.
    pub theta2: Vec<f64>,
    /// Local augmentation variables, length M.
    pub zeta: Vec<f64>,
    /// Horseshoe global scale (squared).
    pub upsilon2: f64,
    /// Global augmentation variable.
    pub nu: f64,
    /// Spatial autocorrelation, in (0, 1).
    pub psi: f64,
}

impl ModelState {
    /// Initial state for a chain: z starts at the data, each factor curve
    /// at its own district's data, free loadings at zero, AR coefficients
    /// at the prior mean, variances at one (times `dispersion` to separate
    /// chains), and the kernel range at its prior mean.
    pub fn init(
        panel: &FunctionalPanel,
        m: usize,
        hyper: &Hyperparams,
        dispersion: f64,
    ) -> Result<ModelState> {
        let (n, t, k) = panel.values.dims();
        if m == 0 || m > n {
            return Err(Error::validation(format!("factor count {m} out of range for N={n}")));
        }
        let mut x = Cube::zeros(m, t, k);
        for f in 0..m {
            for d in 0..t {
                x.lane_mut(f, d).copy_from_slice(panel.values.lane(f, d));
            }
        }
        let beta_phi = hyper.beta_phi(k);
        // Prior mean of IG(2, beta) is beta.
        let phi0 = beta_phi;
        let v = dispersion;
        Ok(ModelState {
            z: panel.values.clone(),
            x,
            b: FactorLoading::new(n, m)?,
            gamma: vec![hyper.m_gamma; m],
            mu: vec![0.0; m * k],
            mu_prime: vec![0.0; m * k],
            mu_dprime: vec![0.0; m * k],
            e2: vec![v; n],
            lambda2: vec![v; m],
            eta2: vec![v; n],
            phi: vec![phi0; n],
            theta2: vec![v; m],
            zeta: vec![1.0; m],
            upsilon2: v,
            nu: 1.0,
            psi: 0.5,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let (n, t, k) = self.z.dims();
        (n, self.x.dims().0, t, k)
    }

    /// Row-slice of a factor-major M x K effect vector.
    pub fn effect_row(effect: &[f64], factor: usize, k: usize) -> &[f64] {
        &effect[factor * k..(factor + 1) * k]
    }

    /// Verifies the state invariants: AR coefficients strictly inside
    /// (-1, 1), variances positive, psi in (0, 1), loading structure intact.
    pub fn check_invariants(&self) -> Result<()> {
        if !self.b.structure_ok() {
            return Err(Error::validation("factor loading structure violated"));
        }
        if self.gamma.iter().any(|g| g.abs() >= 1.0) {
            return Err(Error::validation("gamma left (-1, 1)"));
        }
        if !(self.psi > 0.0 && self.psi < 1.0) {
            return Err(Error::validation(format!("psi left (0, 1): {}", self.psi)));
        }
        let all_positive = self
            .e2
            .iter()
            .chain(&self.lambda2)
            .chain(&self.eta2)
            .chain(&self.phi)
            .chain(&self.theta2)
            .chain(&self.zeta)
            .chain([&self.upsilon2, &self.nu])
            .all(|&v| v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::validation("a variance-type parameter is not positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::MeasurementGrid;

    #[test]
    fn init_copies_factor_curves_from_data() {
        let vals: Vec<f64> = (0..3 * 2 * 2).map(|i| i as f64).collect();
        let panel = FunctionalPanel::new(
            Cube::from_vec(3, 2, 2, vals).unwrap(),
            MeasurementGrid::hourly(2),
            vec!["a".into(), "b".into(), "c".into()],
            vec!["1".into(), "2".into()],
        )
        .unwrap();
        let st = ModelState::init(&panel, 2, &Hyperparams::default(), 1.0).unwrap();
        assert_eq!(st.z, panel.values);
        assert_eq!(st.x.lane(0, 1), panel.values.lane(0, 1));
        assert_eq!(st.x.lane(1, 0), panel.values.lane(1, 0));
        assert!(st.check_invariants().is_ok());
        assert_eq!(st.gamma, vec![0.95, 0.95]);
    }
}
