//! Torus discretization, periodic fields, FFT spectra and white noise.
//!
//! The torus is 𝕋^d = [0, 2π)^d sampled with N points per axis (N a power of
//! two), spacing h = 2π/N. Fourier conventions:
//!
//! ```text
//! f(x) = Σ_k f̂_k e^{i k·x},     f̂_k = (2π)^{-d} h^d Σ_x f(x) e^{-i k·x},
//! ```
//!
//! with integer frequencies k ∈ {-N/2, …, N/2-1}^d (Nyquist mapped to -N/2).
//! Parseval then reads h^d Σ_x |f|² = (2π)^d Σ_k |f̂_k|².

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

pub const TAU: f64 = 2.0 * PI;

/// Largest allowed number of lattice sites, N^d ≤ 2^24.
pub const MAX_SITES: usize = 1 << 24;

/// Uniform discretization of 𝕋^d = [0, 2π)^d with N points per axis.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    /// Field-grade grid: d ∈ {1,2,3}, N ≥ 8 a power of two, N^d ≤ 2^24.
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidGrid(format!("d = {d} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "N = {n} must be a power of two with N >= 8"
            )));
        }
        let sites = n.checked_pow(d as u32).filter(|&s| s <= MAX_SITES);
        if sites.is_none() {
            return Err(Error::InvalidGrid(format!("N^d = {n}^{d} exceeds 2^24 sites")));
        }
        let grid = Self { d, n };
        debug_assert!((grid.n as f64 * grid.h() - TAU).abs() <= 1e-15 * TAU);
        Ok(grid)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Lattice spacing h = 2π/N.
    pub fn h(&self) -> f64 {
        TAU / self.n as f64
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Total number of sites N^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Integer frequency of the per-axis index j ∈ 0..N.
    #[inline]
    pub fn freq_of_index(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Decodes a linear index into per-axis indices (axis 0 slowest).
    #[inline]
    pub fn decode(&self, lin: usize, out: &mut [usize; 3]) {
        let mut rest = lin;
        for a in (0..self.d).rev() {
            out[a] = rest % self.n;
            rest /= self.n;
        }
    }

    #[inline]
    pub fn encode(&self, idx: &[usize; 3]) -> usize {
        let mut lin = 0;
        for a in 0..self.d {
            lin = lin * self.n + idx[a];
        }
        lin
    }

    /// Integer frequency vector of a linear spectral index.
    #[inline]
    pub fn freq_vec(&self, lin: usize, out: &mut [i64; 3]) {
        let mut idx = [0usize; 3];
        self.decode(lin, &mut idx);
        for a in 0..self.d {
            out[a] = self.freq_of_index(idx[a]);
        }
    }

    /// Linear index of the frequency -k.
    #[inline]
    pub fn negate_freq(&self, lin: usize) -> usize {
        let mut idx = [0usize; 3];
        self.decode(lin, &mut idx);
        let mut neg = [0usize; 3];
        for a in 0..self.d {
            neg[a] = (self.n - idx[a]) % self.n;
        }
        self.encode(&neg)
    }

    /// Position coordinates x_j = j·h of a linear site index, in [0, 2π)^d.
    #[inline]
    pub fn position(&self, lin: usize, out: &mut [f64; 3]) {
        let mut idx = [0usize; 3];
        self.decode(lin, &mut idx);
        for a in 0..self.d {
            out[a] = idx[a] as f64 * self.h();
        }
    }

    /// Minimal-image representative of a coordinate difference, in (-π, π].
    #[inline]
    pub fn min_image(x: f64) -> f64 {
        let mut y = x.rem_euclid(TAU);
        if y > PI {
            y -= TAU;
        }
        y
    }

    /// Lattice index difference a - b modulo N per axis.
    #[inline]
    pub fn sub_sites(&self, a: usize, b: usize) -> usize {
        let mut ia = [0usize; 3];
        let mut ib = [0usize; 3];
        self.decode(a, &mut ia);
        self.decode(b, &mut ib);
        let mut out = [0usize; 3];
        for ax in 0..self.d {
            out[ax] = (ia[ax] + self.n - ib[ax]) % self.n;
        }
        self.encode(&out)
    }
}

/// Real scalar field sampled on a [`TorusGrid`].
#[derive(Clone, Debug)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field from position coordinates.
    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        let mut x = [0.0f64; 3];
        for (lin, v) in values.iter_mut().enumerate() {
            grid.position(lin, &mut x);
            *v = f(&x[..grid.d()]);
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// self += c · other
    pub fn axpy(&mut self, c: f64, other: &Field) {
        assert_eq!(self.grid, other.grid, "incompatible grids");
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += c * w;
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn mul_pointwise(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "incompatible grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Field { grid: self.grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// h^d Σ_x |f(x)|, the lattice L¹ norm.
    pub fn l1(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// h^d Σ_x f(x), the lattice integral over one period.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// h^d Σ_x f(x) g(x), the lattice L² pairing ⟨f, g⟩.
    pub fn pair(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "incompatible grids");
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "incompatible grids");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Rotates lattice indices by `shift` sites per axis (periodic translation).
    pub fn translate(&self, shift: &[usize]) -> Field {
        let grid = self.grid;
        let mut out = vec![0.0; grid.len()];
        let mut idx = [0usize; 3];
        for lin in 0..grid.len() {
            grid.decode(lin, &mut idx);
            let mut src = [0usize; 3];
            for a in 0..grid.d() {
                src[a] = (idx[a] + grid.n() - shift[a] % grid.n()) % grid.n();
            }
            out[lin] = self.values[grid.encode(&src)];
        }
        Field { grid, values: out }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// FFT machinery
// ---------------------------------------------------------------------------

type PlanKey = (usize, bool);

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place d-dimensional FFT over a row-major hypercube of side `n`.
pub(crate) fn fft_nd(data: &mut [Complex64], d: usize, n: usize, inverse: bool) {
    let len = data.len();
    debug_assert_eq!(len, n.pow(d as u32));
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for base in 0..len / block {
            for off in 0..stride {
                let start = base * block + off;
                if stride == 1 {
                    fft.process(&mut data[start..start + n]);
                } else {
                    for j in 0..n {
                        scratch[j] = data[start + j * stride];
                    }
                    fft.process(&mut scratch);
                    for j in 0..n {
                        data[start + j * stride] = scratch[j];
                    }
                }
            }
        }
    }
}

/// Fourier coefficients f̂_k of a real field (convention in the module docs).
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
}

/// Forward transform: returns f̂ with f(x) = Σ_k f̂_k e^{ik·x}.
pub fn forward(field: &Field) -> Spectrum {
    let grid = field.grid();
    let mut data: Vec<Complex64> =
        field.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut data, grid.d(), grid.n(), false);
    let scale = 1.0 / grid.len() as f64;
    for c in &mut data {
        *c *= scale;
    }
    Spectrum { grid, coeffs: data }
}

/// Inverse transform of [`forward`]; imaginary parts are dropped.
pub fn inverse(spec: &Spectrum) -> Field {
    let grid = spec.grid;
    let mut data = spec.coeffs.clone();
    fft_nd(&mut data, grid.d(), grid.n(), true);
    Field { grid, values: data.iter().map(|c| c.re).collect() }
}

/// Applies a real, even Fourier multiplier `symbol(k)` to a field.
///
/// Errors with "multiplier not real-symmetric" if symbol(k) ≠ symbol(-k)
/// anywhere on the represented frequencies.
pub fn apply_multiplier(
    field: &Field,
    symbol: impl Fn(&[i64]) -> f64,
) -> Result<Field> {
    let grid = field.grid();
    let table = multiplier_table(grid, &symbol)?;
    Ok(apply_multiplier_table(field, &table))
}

/// Tabulates an even symbol on all represented frequencies.
pub fn multiplier_table(
    grid: TorusGrid,
    symbol: &impl Fn(&[i64]) -> f64,
) -> Result<Vec<f64>> {
    let mut table = vec![0.0; grid.len()];
    let mut k = [0i64; 3];
    for (lin, t) in table.iter_mut().enumerate() {
        grid.freq_vec(lin, &mut k);
        let v = symbol(&k[..grid.d()]);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("symbol not finite at k = {:?}", &k[..grid.d()])));
        }
        *t = v;
    }
    for lin in 0..grid.len() {
        let neg = grid.negate_freq(lin);
        let (a, b) = (table[lin], table[neg]);
        if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
            return Err(Error::AsymmetricMultiplier);
        }
    }
    Ok(table)
}

pub fn apply_multiplier_table(field: &Field, table: &[f64]) -> Field {
    let mut spec = forward(field);
    for (c, &t) in spec.coeffs_mut().iter_mut().zip(table) {
        *c *= t;
    }
    inverse(&spec)
}

// ---------------------------------------------------------------------------
// White noise
// ---------------------------------------------------------------------------

/// Periodized white noise: independent centered Gaussians with per-site
/// variance h^{-d}, so that ⟨ξ, φ⟩ = h^d Σ ξφ has variance h^d Σ φ² → ∫φ².
///
/// Deterministic given the seed.
pub fn sample_white_noise(grid: TorusGrid, seed: u64) -> Field {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let std = grid.cell_volume().powf(-0.5);
    let values = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect();
    Field { grid, values }
}
