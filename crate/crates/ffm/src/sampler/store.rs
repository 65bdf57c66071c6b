//! Persisted posterior draws.
//!
//! A [`DrawStore`] is saved as a directory:
//!
//! - `meta.json` — configuration snapshot, dimensions, district relabeling,
//!   normalization scales, calendar, and per-chain bookkeeping;
//! - `chain_<i>.params.bin` — the per-draw parameter vectors;
//! - `chain_<i>.zmean.bin`, `chain_<i>.zm2.bin` — running mean and sum of
//!   squared deviations of the latent curves over every kept draw;
//! - `chain_<i>.zsnap.bin` — evenly strided latent-curve snapshots used
//!   for pointwise posterior quantiles.
//!
//! Every `.bin` file shares one little-endian container layout:
//! magic bytes `STFF1`, a `u32` format version (1), a `u32` dimension
//! count, that many `u64` dimensions, then the payload as 64-bit floats
//! in draw-major (row-major) order.
//!
//! One parameter draw is the concatenation, in order: the free loading
//! entries (column-major: for each factor column s, rows s+1..N), the AR
//! coefficients, the three calendar-effect curve sets (each M x K), the
//! measurement variances, the factor innovation variances, the GP scales,
//! the kernel ranges, the horseshoe local scales, the local augmentation
//! variables, the global scale, its augmentation variable, the spatial
//! autocorrelation, and the last-day factor state (M x K).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Calendar, DayType, Extension, FunctionalPanel, Hyperparams, ModelState, Permutation,
};
use crate::error::{Error, Result};

use super::{PriorKind, SamplerConfig};

const MAGIC: &[u8; 5] = b"STFF1";
const FORMAT_VERSION: u32 = 1;

/// Offsets into one flattened parameter draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawLayout {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub b_free: usize,
    pub gamma: usize,
    pub mu: usize,
    pub mu_prime: usize,
    pub mu_dprime: usize,
    pub e2: usize,
    pub lambda2: usize,
    pub eta2: usize,
    pub phi: usize,
    pub theta2: usize,
    pub zeta: usize,
    pub upsilon2: usize,
    pub nu: usize,
    pub psi: usize,
    pub x_last: usize,
    pub len: usize,
}

impl DrawLayout {
    pub fn new(n: usize, m: usize, k: usize) -> Self {
        let b_free_len: usize = (0..m).map(|s| n - s - 1).sum();
        let mk = m * k;
        let b_free = 0;
        let gamma = b_free + b_free_len;
        let mu = gamma + m;
        let mu_prime = mu + mk;
        let mu_dprime = mu_prime + mk;
        let e2 = mu_dprime + mk;
        let lambda2 = e2 + n;
        let eta2 = lambda2 + m;
        let phi = eta2 + n;
        let theta2 = phi + n;
        let zeta = theta2 + m;
        let upsilon2 = zeta + m;
        let nu = upsilon2 + 1;
        let psi = nu + 1;
        let x_last = psi + 1;
        let len = x_last + mk;
        DrawLayout {
            n,
            m,
            k,
            b_free,
            gamma,
            mu,
            mu_prime,
            mu_dprime,
            e2,
            lambda2,
            eta2,
            phi,
            theta2,
            zeta,
            upsilon2,
            nu,
            psi,
            x_last,
            len,
        }
    }

    pub fn flatten(&self, state: &ModelState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for s in 0..self.m {
            let col = state.b.free_column(s);
            out.extend_from_slice(col.as_slice());
        }
        out.extend_from_slice(&state.gamma);
        out.extend_from_slice(&state.mu);
        out.extend_from_slice(&state.mu_prime);
        out.extend_from_slice(&state.mu_dprime);
        out.extend_from_slice(&state.e2);
        out.extend_from_slice(&state.lambda2);
        out.extend_from_slice(&state.eta2);
        out.extend_from_slice(&state.phi);
        out.extend_from_slice(&state.theta2);
        out.extend_from_slice(&state.zeta);
        out.push(state.upsilon2);
        out.push(state.nu);
        out.push(state.psi);
        let t = state.x.dims().1;
        for f in 0..self.m {
            out.extend_from_slice(state.x.lane(f, t - 1));
        }
        debug_assert_eq!(out.len(), self.len);
        out
    }

    /// Free entries of loading column s within a draw.
    pub fn b_column<'a>(&self, draw: &'a [f64], s: usize) -> &'a [f64] {
        let start: usize = (0..s).map(|i| self.n - i - 1).sum();
        &draw[self.b_free + start..self.b_free + start + (self.n - s - 1)]
    }

    pub fn gamma_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.gamma..self.gamma + self.m]
    }

    pub fn mu_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.mu..self.mu + self.m * self.k]
    }

    pub fn mu_prime_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.mu_prime..self.mu_prime + self.m * self.k]
    }

    pub fn mu_dprime_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.mu_dprime..self.mu_dprime + self.m * self.k]
    }

    pub fn e2_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.e2..self.e2 + self.n]
    }

    pub fn lambda2_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.lambda2..self.lambda2 + self.m]
    }

    pub fn eta2_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.eta2..self.eta2 + self.n]
    }

    pub fn phi_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.phi..self.phi + self.n]
    }

    pub fn theta2_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.theta2..self.theta2 + self.m]
    }

    pub fn upsilon2_of(&self, draw: &[f64]) -> f64 {
        draw[self.upsilon2]
    }

    pub fn psi_of(&self, draw: &[f64]) -> f64 {
        draw[self.psi]
    }

    pub fn x_last_of<'a>(&self, draw: &'a [f64]) -> &'a [f64] {
        &draw[self.x_last..self.x_last + self.m * self.k]
    }
}

/// Draws and latent-curve summaries from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub draw_len: usize,
    pub n_draws: usize,
    /// n_draws x draw_len, draw-major.
    pub params: Vec<f64>,
    /// Number of draws folded into the running curve statistics.
    pub z_count: u64,
    pub z_mean: Vec<f64>,
    /// Sum of squared deviations from the running mean (Welford).
    pub z_m2: Vec<f64>,
    pub n_snapshots: usize,
    /// n_snapshots x (N*T*K), draw-major.
    pub z_snapshots: Vec<f64>,
    pub accept_phi: f64,
    pub accept_psi: f64,
}

impl ChainDraws {
    pub fn empty(layout: &DrawLayout, z_len: usize) -> Self {
        ChainDraws {
            draw_len: layout.len,
            n_draws: 0,
            params: Vec::new(),
            z_count: 0,
            z_mean: vec![0.0; z_len],
            z_m2: vec![0.0; z_len],
            n_snapshots: 0,
            z_snapshots: Vec::new(),
            accept_phi: f64::NAN,
            accept_psi: f64::NAN,
        }
    }

    pub fn push_draw(&mut self, layout: &DrawLayout, state: &ModelState) {
        self.params.extend_from_slice(&layout.flatten(state));
        self.n_draws += 1;
        self.z_count += 1;
        let c = self.z_count as f64;
        for (i, &v) in state.z.as_slice().iter().enumerate() {
            let delta = v - self.z_mean[i];
            self.z_mean[i] += delta / c;
            self.z_m2[i] += delta * (v - self.z_mean[i]);
        }
    }

    pub fn push_z_snapshot(&mut self, state: &ModelState) {
        self.z_snapshots.extend_from_slice(state.z.as_slice());
        self.n_snapshots += 1;
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.params[i * self.draw_len..(i + 1) * self.draw_len]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.params.chunks_exact(self.draw_len)
    }

    pub fn snapshot(&self, i: usize) -> &[f64] {
        let z_len = self.z_mean.len();
        &self.z_snapshots[i * z_len..(i + 1) * z_len]
    }
}

/// Store-level metadata persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub grid: Vec<f64>,
    pub district_ids: Vec<String>,
    pub day_ids: Vec<String>,
    pub day_types: Vec<DayType>,
    pub extension: Extension,
    pub prior: PriorKind,
    pub config: SamplerConfig,
    pub hyper: Hyperparams,
    pub permutation: Permutation,
    /// Per-district normalization divisors (in permuted order).
    pub scales: Vec<f64>,
    /// True when at least one chain failed and was dropped.
    pub partial: bool,
    pub chain_errors: Vec<(usize, String)>,
}

impl StoreMeta {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        panel: &FunctionalPanel,
        calendar: &Calendar,
        m: usize,
        hyper: &Hyperparams,
        config: &SamplerConfig,
        permutation: Permutation,
        scales: Vec<f64>,
        chain_errors: Vec<(usize, String)>,
    ) -> Self {
        let (n, t, k) = panel.values.dims();
        StoreMeta {
            format_version: FORMAT_VERSION,
            n,
            m,
            t,
            k,
            grid: panel.grid.points().to_vec(),
            district_ids: panel.district_ids.clone(),
            day_ids: panel.day_ids.clone(),
            day_types: calendar.day_types.clone(),
            extension: calendar.extension,
            prior: config.prior,
            config: config.clone(),
            hyper: hyper.clone(),
            permutation,
            scales,
            partial: !chain_errors.is_empty(),
            chain_errors,
        }
    }

    pub fn layout(&self) -> DrawLayout {
        DrawLayout::new(self.n, self.m, self.k)
    }
}

/// Post-burn-in draws from one or more chains plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub meta: StoreMeta,
    pub chains: Vec<ChainDraws>,
}

impl DrawStore {
    pub fn layout(&self) -> DrawLayout {
        self.meta.layout()
    }

    /// Total kept draws across chains.
    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.n_draws).sum()
    }

    /// Iterates over every kept draw of every chain, chain-major.
    pub fn all_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws())
    }

    /// Combined posterior mean of the latent curves over all chains.
    pub fn z_posterior_mean(&self) -> Vec<f64> {
        let z_len = self.meta.n * self.meta.t * self.meta.k;
        let mut mean = vec![0.0; z_len];
        let total: f64 = self.chains.iter().map(|c| c.z_count as f64).sum();
        for c in &self.chains {
            let w = c.z_count as f64 / total;
            for i in 0..z_len {
                mean[i] += w * c.z_mean[i];
            }
        }
        mean
    }

    /// Combined per-coordinate population variance of the latent curves.
    pub fn z_posterior_variance(&self) -> Vec<f64> {
        let z_len = self.meta.n * self.meta.t * self.meta.k;
        let mean = self.z_posterior_mean();
        let total: f64 = self.chains.iter().map(|c| c.z_count as f64).sum();
        let mut var = vec![0.0; z_len];
        for c in &self.chains {
            let cnt = c.z_count as f64;
            for i in 0..z_len {
                let d = c.z_mean[i] - mean[i];
                var[i] += c.z_m2[i] + cnt * d * d;
            }
        }
        for v in &mut var {
            *v /= total;
        }
        var
    }

    /// All retained latent-curve snapshots, pooled over chains.
    pub fn z_snapshots(&self) -> Vec<&[f64]> {
        self.chains
            .iter()
            .flat_map(|c| (0..c.n_snapshots).map(move |i| c.snapshot(i)))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::validation(format!("meta serialization: {e}")))?;
        write_atomic(&dir.join("meta.json"), json.as_bytes())?;
        let z_len = self.meta.n * self.meta.t * self.meta.k;
        for (i, chain) in self.chains.iter().enumerate() {
            write_array(
                &dir.join(format!("chain_{i}.params.bin")),
                &[chain.n_draws as u64, chain.draw_len as u64],
                &chain.params,
            )?;
            write_array(&dir.join(format!("chain_{i}.zmean.bin")), &[z_len as u64], &chain.z_mean)?;
            write_array(&dir.join(format!("chain_{i}.zm2.bin")), &[z_len as u64], &chain.z_m2)?;
            write_array(
                &dir.join(format!("chain_{i}.zsnap.bin")),
                &[chain.n_snapshots as u64, z_len as u64],
                &chain.z_snapshots,
            )?;
            let extra = serde_json::json!({
                "z_count": chain.z_count,
                "accept_phi": chain.accept_phi,
                "accept_psi": chain.accept_psi,
            });
            write_atomic(
                &dir.join(format!("chain_{i}.json")),
                extra.to_string().as_bytes(),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DrawStore> {
        let meta_raw = fs::read_to_string(dir.join("meta.json"))?;
        let meta: StoreMeta = serde_json::from_str(&meta_raw)
            .map_err(|e| Error::validation(format!("meta.json: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported store format version {}",
                meta.format_version
            )));
        }
        let mut chains = Vec::new();
        let mut i = 0;
        loop {
            let params_path = dir.join(format!("chain_{i}.params.bin"));
            if !params_path.exists() {
                break;
            }
            let (dims, params) = read_array(&params_path)?;
            let (n_draws, draw_len) = (dims[0] as usize, dims[1] as usize);
            let (_, z_mean) = read_array(&dir.join(format!("chain_{i}.zmean.bin")))?;
            let (_, z_m2) = read_array(&dir.join(format!("chain_{i}.zm2.bin")))?;
            let (snap_dims, z_snapshots) = read_array(&dir.join(format!("chain_{i}.zsnap.bin")))?;
            let extra_raw = fs::read_to_string(dir.join(format!("chain_{i}.json")))?;
            let extra: serde_json::Value = serde_json::from_str(&extra_raw)
                .map_err(|e| Error::validation(format!("chain_{i}.json: {e}")))?;
            chains.push(ChainDraws {
                draw_len,
                n_draws,
                params,
                z_count: extra["z_count"].as_u64().unwrap_or(0),
                z_mean,
                z_m2,
                n_snapshots: snap_dims[0] as usize,
                z_snapshots,
                accept_phi: extra["accept_phi"].as_f64().unwrap_or(f64::NAN),
                accept_psi: extra["accept_psi"].as_f64().unwrap_or(f64::NAN),
            });
            i += 1;
        }
        if chains.is_empty() {
            return Err(Error::validation(format!(
                "no chain files found in {}",
                dir.display()
            )));
        }
        Ok(DrawStore { meta, chains })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_array(path: &Path, dims: &[u64], data: &[f64]) -> Result<()> {
    let expected: u64 = dims.iter().product();
    debug_assert_eq!(expected as usize, data.len());
    let mut bytes = Vec::with_capacity(5 + 4 + 4 + dims.len() * 8 + data.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

fn read_array(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut f = fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::validation(format!("{}: {msg}", path.display()));
    if bytes.len() < 13 || &bytes[0..5] != MAGIC {
        return Err(bad("missing STFF1 magic"));
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let ndim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let mut offset = 13;
    if bytes.len() < offset + ndim * 8 {
        return Err(bad("truncated dimension header"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
        offset += 8;
    }
    let count: u64 = dims.iter().product();
    if bytes.len() != offset + (count as usize) * 8 {
        return Err(bad("payload length does not match dimensions"));
    }
    let mut data = Vec::with_capacity(count as usize);
    for chunk in bytes[offset..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_lengths_line_up() {
        let l = DrawLayout::new(5, 2, 3);
        // b free: (5-1) + (5-2) = 7; gamma 2; mu blocks 3*6; e2 5; lambda2 2;
        // eta2 5; phi 5; theta2 2; zeta 2; scalars 3; x_last 6.
        assert_eq!(l.len, 7 + 2 + 18 + 5 + 2 + 5 + 5 + 2 + 2 + 3 + 6);
        assert_eq!(l.b_column(&vec![0.0; l.len], 1).len(), 3);
    }

    #[test]
    fn binary_container_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let data = vec![1.5, -2.25, f64::MIN_POSITIVE, 1e300, -0.0];
        write_array(&path, &[5], &data).unwrap();
        let (dims, back) = read_array(&path).unwrap();
        assert_eq!(dims, vec![5]);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_container_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(read_array(&path).is_err());
    }
}
