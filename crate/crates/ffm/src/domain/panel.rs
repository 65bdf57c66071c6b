use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::MeasurementGrid;

/// Dense row-major storage for an `n0 x n1 x n2` array of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Cube {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Cube { dims: (d0, d1, d2), data: vec![0.0; d0 * d1 * d2] }
    }

    pub fn from_vec(d0: usize, d1: usize, d2: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d0 * d1 * d2 {
            return Err(Error::validation(format!(
                "cube data length {} does not match {}x{}x{}",
                data.len(),
                d0,
                d1,
                d2
            )));
        }
        Ok(Cube { dims: (d0, d1, d2), data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims.0 && j < self.dims.1 && k < self.dims.2);
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// The contiguous length-d2 slice at (i, j).
    #[inline]
    pub fn lane(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j, 0);
        &self.data[o..o + self.dims.2]
    }

    #[inline]
    pub fn lane_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j, 0);
        let k = self.dims.2;
        &mut self.data[o..o + k]
    }

    pub fn lane_vector(&self, i: usize, j: usize) -> DVector<f64> {
        DVector::from_column_slice(self.lane(i, j))
    }

    pub fn set_lane(&mut self, i: usize, j: usize, v: &DVector<f64>) {
        self.lane_mut(i, j).copy_from_slice(v.as_slice());
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Observed functional data: an N x T x K array of curves with its
/// measurement grid and district/day labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalPanel {
    /// values(s, t, k): district s, day t, grid point k.
    pub values: Cube,
    #[serde(with = "grid_serde")]
    pub grid: MeasurementGrid,
    pub district_ids: Vec<String>,
    pub day_ids: Vec<String>,
}

mod grid_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(g: &MeasurementGrid, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(g.points(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MeasurementGrid, D::Error> {
        let pts: Vec<f64> = serde::Deserialize::deserialize(d)?;
        MeasurementGrid::new(pts).map_err(serde::de::Error::custom)
    }
}

impl FunctionalPanel {
    pub fn new(
        values: Cube,
        grid: MeasurementGrid,
        district_ids: Vec<String>,
        day_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t, k) = values.dims();
        if district_ids.len() != n || day_ids.len() != t || grid.len() != k {
            return Err(Error::validation(format!(
                "panel dimensions inconsistent: values {n}x{t}x{k}, {} districts, {} days, {} grid points",
                district_ids.len(),
                day_ids.len(),
                grid.len()
            )));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("panel contains non-finite values"));
        }
        Ok(FunctionalPanel { values, grid, district_ids, day_ids })
    }

    pub fn n_districts(&self) -> usize {
        self.values.dims().0
    }

    pub fn n_days(&self) -> usize {
        self.values.dims().1
    }

    pub fn n_grid(&self) -> usize {
        self.values.dims().2
    }
}

/// Divides each district by its root mean square over days and grid points,
/// returning the normalized panel and the per-district divisors.
pub fn normalize_panel(panel: &FunctionalPanel) -> Result<(FunctionalPanel, Vec<f64>)> {
    let (n, t, k) = panel.values.dims();
    let mut out = panel.clone();
    let mut scales = Vec::with_capacity(n);
    for s in 0..n {
        let mut sum_sq = 0.0;
        for d in 0..t {
            for v in panel.values.lane(s, d) {
                sum_sq += v * v;
            }
        }
        if sum_sq == 0.0 {
            return Err(Error::validation(format!(
                "district `{}` is identically zero and cannot be normalized",
                panel.district_ids[s]
            )));
        }
        let scale = (sum_sq / (t * k) as f64).sqrt();
        scales.push(scale);
        for d in 0..t {
            for v in out.values.lane_mut(s, d) {
                *v /= scale;
            }
        }
    }
    Ok((out, scales))
}

/// Inverse of [`normalize_panel`]: multiplies each district back by its scale.
pub fn denormalize_panel(panel: &FunctionalPanel, scales: &[f64]) -> Result<FunctionalPanel> {
    let (n, t, _) = panel.values.dims();
    if scales.len() != n {
        return Err(Error::validation("scale vector length does not match district count"));
    }
    let mut out = panel.clone();
    for s in 0..n {
        for d in 0..t {
            for v in out.values.lane_mut(s, d) {
                *v *= scales[s];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn panel_from(values: Vec<f64>, n: usize, t: usize, k: usize) -> FunctionalPanel {
        FunctionalPanel::new(
            Cube::from_vec(n, t, k, values).unwrap(),
            MeasurementGrid::hourly(k),
            (1..=n).map(|i| i.to_string()).collect(),
            (1..=t).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_panel_normalizes_to_ones() {
        let p = panel_from(vec![2.0; 2 * 3 * 2], 2, 3, 2);
        let (norm, scales) = normalize_panel(&p).unwrap();
        assert!(norm.values.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(scales.iter().all(|&s| (s - 2.0).abs() < 1e-15));
    }

    #[test]
    fn rms_divisor_matches_formula() {
        // One district, T*K = 2, values (3, 4): divisor sqrt(25/2).
        let p = panel_from(vec![3.0, 4.0], 1, 1, 2);
        let (norm, scales) = normalize_panel(&p).unwrap();
        let expect = (25.0f64 / 2.0).sqrt();
        assert_relative_eq!(scales[0], expect, epsilon = 1e-12);
        assert_relative_eq!(norm.values.get(0, 0, 0), 3.0 / expect, epsilon = 1e-12);
        assert_relative_eq!(norm.values.get(0, 0, 1), 4.0 / expect, epsilon = 1e-12);
    }

    #[test]
    fn unit_rms_district_is_unchanged() {
        let p = panel_from(vec![1.0, -1.0, 1.0, -1.0], 1, 2, 2);
        let (norm, scales) = normalize_panel(&p).unwrap();
        assert_relative_eq!(scales[0], 1.0, epsilon = 1e-15);
        assert_eq!(norm.values.as_slice(), p.values.as_slice());
    }

    #[test]
    fn zero_district_rejected() {
        let p = panel_from(vec![0.0, 0.0, 1.0, 2.0], 2, 1, 2);
        assert!(normalize_panel(&p).is_err());
    }

    #[test]
    fn normalize_denormalize_round_trips() {
        let vals: Vec<f64> = (0..3 * 4 * 2).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let p = panel_from(vals, 3, 4, 2);
        let (norm, scales) = normalize_panel(&p).unwrap();
        let back = denormalize_panel(&norm, &scales).unwrap();
        for (a, b) in back.values.as_slice().iter().zip(p.values.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
