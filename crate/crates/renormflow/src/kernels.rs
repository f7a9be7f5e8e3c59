//! Cutoff Green kernels and regularizing kernels on the torus.
//!
//! The fundamental solution G of 𝐐 = 1 + (-Δ)^{σ/2} has Fourier symbol
//! Ĝ(k) = 1/(1+|k|^σ). Its cutoff variants
//!
//! ```text
//! G_κ(x)     = χ_κ(|x|^σ) G(x),
//! G_{κ,μ}(x) = χ_κ(|x|^σ) χ_μ(|x|^σ) G(x),      χ_μ(r) = χ(r(1-μ)/μ),
//! ```
//!
//! are defined on ℝ^d; only their periodizations 𝐓V(x) = Σ_{y∈(2πℤ)^d} V(x+y)
//! act on periodic fields (K∗f = 𝐓K⋆f). Cut kernels are built on an M-fold
//! oversampled box [-πM, πM)^d: the Green function of the large-period torus
//! is sampled via the symbol on the refined frequency lattice (spacing 1/M),
//! multiplied pointwise by the position-space cutoffs and folded back onto
//! the base period. Aliasing is controlled empirically by doubling M.
//!
//! The regularizing kernel K_μ is the inverse of 𝐏_μ = 1 - [μ]²Δ with
//! [μ] = μ^{1/σ}; convolution powers K_μ^{*g} have symbol (1+[μ]²|k|²)^{-g}
//! and unit total mass. Dirac components (K^{*0} = δ, the δ part of K_{μ,η})
//! are tracked symbolically so that ℓ¹ norms are free of h^{-d} artifacts.

use crate::error::{Error, Result};
use crate::grid::{self, Field, TorusGrid, TAU};
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

// ---------------------------------------------------------------------------
// Cutoff function
// ---------------------------------------------------------------------------

/// Smooth cutoff χ with χ(r)=0 for |r|≤1, χ(r)=1 for |r|≥2, monotone on (1,2).
///
/// Concrete shape: χ(r) = S(|r|-1) with S(t) = f(t)/(f(t)+f(1-t)),
/// f(t) = exp(-1/t) for t>0 and 0 otherwise.
#[derive(Clone, Copy, Debug, Default)]
pub struct CutoffFunction;

fn bump(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn bump_prime(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

impl CutoffFunction {
    pub fn chi(r: f64) -> f64 {
        let t = r.abs() - 1.0;
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            let a = bump(t);
            let b = bump(1.0 - t);
            a / (a + b)
        }
    }

    /// dχ/dr; vanishes outside 1 < |r| < 2.
    pub fn chi_prime(r: f64) -> f64 {
        let s = if r < 0.0 { -1.0 } else { 1.0 };
        let t = r.abs() - 1.0;
        if t <= 0.0 || t >= 1.0 {
            0.0
        } else {
            let a = bump(t);
            let b = bump(1.0 - t);
            let ap = bump_prime(t);
            let bp = bump_prime(1.0 - t);
            // d/dt [a/(a+b)] = (a'b + ab')/(a+b)^2
            s * (ap * b + a * bp) / ((a + b) * (a + b))
        }
    }

    /// χ_μ(r) = χ(r(1-μ)/μ) for μ ∈ (0,1]; χ_1 ≡ 0 since χ(0) = 0.
    pub fn chi_mu(r: f64, mu: f64) -> Result<f64> {
        if mu <= 0.0 || mu > 1.0 {
            return Err(Error::Domain(format!("mu = {mu} not in (0,1]")));
        }
        Ok(Self::chi(r * (1.0 - mu) / mu))
    }

    /// ∂_μ χ_μ(r) = χ'(r(1-μ)/μ) · (-r/μ²).
    pub fn d_mu_chi_mu(r: f64, mu: f64) -> Result<f64> {
        if mu <= 0.0 || mu > 1.0 {
            return Err(Error::Domain(format!("mu = {mu} not in (0,1]")));
        }
        Ok(Self::chi_prime(r * (1.0 - mu) / mu) * (-r / (mu * mu)))
    }
}

// ---------------------------------------------------------------------------
// Periodized kernels
// ---------------------------------------------------------------------------

/// A periodic convolution kernel: Fourier multiplier plus position values of
/// the non-Dirac part, with any Dirac component tracked symbolically.
///
/// The multiplier λ acts on Fourier coefficients, (K⋆f)^ = λ f̂; position
/// values satisfy 𝐓K(x) = delta_mass·δ_lattice(x) + smooth(x) where the
/// smooth part has Fourier coefficients (λ_k - delta_mass)(2π)^{-d}.
#[derive(Clone, Debug)]
pub struct PeriodizedKernel {
    grid: TorusGrid,
    multiplier: Vec<f64>,
    delta_mass: f64,
    smooth: Vec<f64>,
}

impl PeriodizedKernel {
    /// Kernel from an even real symbol on integer frequencies.
    pub fn from_symbol(grid: TorusGrid, symbol: impl Fn(&[i64]) -> f64) -> Result<Self> {
        let multiplier = grid::multiplier_table(grid, &symbol)?;
        Ok(Self::from_multiplier_delta(grid, multiplier, 0.0))
    }

    /// Pure Dirac: mass·δ_𝕄 (multiplier constant = mass).
    pub fn delta(grid: TorusGrid, mass: f64) -> Self {
        Self {
            grid,
            multiplier: vec![mass; grid.len()],
            delta_mass: mass,
            smooth: vec![0.0; grid.len()],
        }
    }

    fn from_multiplier_delta(grid: TorusGrid, multiplier: Vec<f64>, delta_mass: f64) -> Self {
        let scale = TAU.powi(-(grid.d() as i32));
        let mut coeffs: Vec<Complex64> = multiplier
            .iter()
            .map(|&l| Complex64::new((l - delta_mass) * scale, 0.0))
            .collect();
        grid::fft_nd(&mut coeffs, grid.d(), grid.n(), true);
        let smooth = coeffs.iter().map(|c| c.re).collect();
        Self { grid, multiplier, delta_mass, smooth }
    }

    /// Kernel from position values of 𝐓K (no Dirac part).
    pub fn from_position(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let field = Field::from_values(grid, values)?;
        let spec = grid::forward(&field);
        let vol = TAU.powi(grid.d() as i32);
        let mut multiplier = vec![0.0; grid.len()];
        // enforce the real-even symmetry exactly
        for lin in 0..grid.len() {
            let neg = grid.negate_freq(lin);
            multiplier[lin] = 0.5 * vol * (spec.coeffs()[lin].re + spec.coeffs()[neg].re);
        }
        Ok(Self { grid, multiplier, delta_mass: 0.0, smooth: field.into_values() })
    }

    /// mass·δ + smooth_scale·K for a given smooth kernel (used by K_{μ,η}).
    pub fn delta_plus(mass: f64, smooth_scale: f64, kernel: &PeriodizedKernel) -> Self {
        debug_assert_eq!(kernel.delta_mass, 0.0);
        let grid = kernel.grid;
        let multiplier = kernel
            .multiplier
            .iter()
            .map(|&l| mass + smooth_scale * l)
            .collect();
        let smooth = kernel.smooth.iter().map(|&v| smooth_scale * v).collect();
        Self { grid, multiplier, delta_mass: mass, smooth }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    pub fn delta_mass(&self) -> f64 {
        self.delta_mass
    }

    /// Position values of the non-Dirac part.
    pub fn smooth_values(&self) -> &[f64] {
        &self.smooth
    }

    /// Position values with the Dirac part materialized as an h^{-d} spike.
    pub fn dense_position(&self) -> Field {
        let mut values = self.smooth.clone();
        values[0] += self.delta_mass / self.grid.cell_volume();
        Field::from_values(self.grid, values).expect("kernel values finite")
    }

    /// Total mass h^d Σ 𝐓K = λ(0), exact by the zero mode.
    pub fn mass(&self) -> f64 {
        self.multiplier[0]
    }

    /// ℓ¹ proxy for the total-variation norm ‖·‖_𝒦:
    /// |delta_mass| + h^d Σ |smooth|.
    pub fn l1_norm(&self) -> f64 {
        self.delta_mass.abs()
            + self.grid.cell_volume() * self.smooth.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Torus convolution K⋆f via the multiplier; exact for band-limited f.
    pub fn convolve(&self, f: &Field) -> Result<Field> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(grid::apply_multiplier_table(f, &self.multiplier))
    }

    /// Pointwise in frequency: multiplies the kernel by an even symbol.
    /// The Dirac component is folded into the smooth part.
    pub fn apply_symbol(&self, symbol: impl Fn(&[i64]) -> f64) -> Result<Self> {
        let table = grid::multiplier_table(self.grid, &symbol)?;
        let multiplier: Vec<f64> = self
            .multiplier
            .iter()
            .zip(&table)
            .map(|(&l, &t)| l * t)
            .collect();
        Ok(Self::from_multiplier_delta(self.grid, multiplier, 0.0))
    }

    pub fn add_scaled(&self, c: f64, other: &PeriodizedKernel) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let multiplier = self
            .multiplier
            .iter()
            .zip(&other.multiplier)
            .map(|(&a, &b)| a + c * b)
            .collect();
        let smooth = self
            .smooth
            .iter()
            .zip(&other.smooth)
            .map(|(&a, &b)| a + c * b)
            .collect();
        Ok(Self {
            grid: self.grid,
            multiplier,
            delta_mass: self.delta_mass + c * other.delta_mass,
            smooth,
        })
    }

    pub fn sub(&self, other: &PeriodizedKernel) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            multiplier: self.multiplier.iter().map(|&v| c * v).collect(),
            delta_mass: c * self.delta_mass,
            smooth: self.smooth.iter().map(|&v| c * v).collect(),
        }
    }

    /// Position values of ∂^a 𝐓K (spectral derivative); Dirac parts are
    /// rejected since ∂^a δ has no position representation.
    pub fn derivative_position(&self, a: &[usize]) -> Result<Field> {
        if self.delta_mass != 0.0 && a.iter().any(|&o| o > 0) {
            return Err(Error::Unsupported(
                "position derivative of a Dirac component".into(),
            ));
        }
        let grid = self.grid;
        let scale = TAU.powi(-(grid.d() as i32));
        let mut coeffs: Vec<Complex64> = vec![Complex64::default(); grid.len()];
        let mut k = [0i64; 3];
        for (lin, c) in coeffs.iter_mut().enumerate() {
            grid.freq_vec(lin, &mut k);
            let mut factor = Complex64::new((self.multiplier[lin] - self.delta_mass) * scale, 0.0);
            for (ax, &ord) in a.iter().enumerate().take(grid.d()) {
                for _ in 0..ord {
                    factor *= Complex64::new(0.0, k[ax] as f64);
                }
            }
            *c = factor;
        }
        grid::fft_nd(&mut coeffs, grid.d(), grid.n(), true);
        Field::from_values(grid, coeffs.iter().map(|c| c.re).collect())
    }
}

// ---------------------------------------------------------------------------
// Kernel factory
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum KernelKind {
    Green,
    SingleCut,
    DoubleCut,
    DMuG,
    DKappaG,
    DKappaDMuG,
    KPow,
}

type CacheKey = (KernelKind, u64, u64, u32);

/// Builds and caches the kernel family for one (grid, σ, M) configuration.
///
/// Immutable kernels behind `Arc`; safe for concurrent read with
/// single-writer insertion.
pub struct KernelFactory {
    grid: TorusGrid,
    sigma: f64,
    oversample: usize,
    cache: RwLock<HashMap<CacheKey, Arc<PeriodizedKernel>>>,
}

/// Default oversampling factor per dimension: 8 / 4 / 2 for d = 1 / 2 / 3.
pub fn default_oversample(d: usize) -> usize {
    match d {
        1 => 8,
        2 => 4,
        _ => 2,
    }
}

impl KernelFactory {
    pub fn new(grid: TorusGrid, sigma: f64) -> Result<Self> {
        Self::with_oversample(grid, sigma, default_oversample(grid.d()))
    }

    pub fn with_oversample(grid: TorusGrid, sigma: f64, oversample: usize) -> Result<Self> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
        }
        if oversample == 0 || !oversample.is_power_of_two() {
            return Err(Error::Domain(format!(
                "oversample = {oversample} must be a power of two"
            )));
        }
        Ok(Self { grid, sigma, oversample, cache: RwLock::new(HashMap::new()) })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    /// [μ] = μ^{1/σ}.
    pub fn length_scale(&self, mu: f64) -> f64 {
        mu.powf(1.0 / self.sigma)
    }

    fn cached(
        &self,
        key: CacheKey,
        build: impl FnOnce() -> Result<PeriodizedKernel>,
    ) -> Result<Arc<PeriodizedKernel>> {
        if let Some(k) = self.cache.read().unwrap().get(&key) {
            return Ok(k.clone());
        }
        let built = Arc::new(build()?);
        let mut guard = self.cache.write().unwrap();
        Ok(guard.entry(key).or_insert(built).clone())
    }

    /// Exactly periodized uncut Green kernel: Ĝ(k) = 1/(1+|k|^σ).
    pub fn green(&self) -> Result<Arc<PeriodizedKernel>> {
        let sigma = self.sigma;
        self.cached((KernelKind::Green, 0, 0, 0), || {
            PeriodizedKernel::from_symbol(self.grid, |k| 1.0 / (1.0 + norm(k).powf(sigma)))
        })
    }

    fn check_kappa(kappa: f64) -> Result<()> {
        if !(kappa > 0.0 && kappa <= 0.5) {
            return Err(Error::Domain(format!("kappa = {kappa} not in (0, 1/2]")));
        }
        Ok(())
    }

    /// G_κ = 𝐓[χ_κ(|x|^σ) G], the single-cutoff kernel.
    pub fn g_kappa(&self, kappa: f64) -> Result<Arc<PeriodizedKernel>> {
        Self::check_kappa(kappa)?;
        self.single_cut(kappa)
    }

    /// Single-cutoff kernel G_μ for any μ ∈ (0,1] (G_κ without the κ-domain
    /// restriction); used by the plateau identity G_{κ,μ} = G_μ for μ ≥ 2κ.
    pub fn single_cut(&self, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::Domain(format!("cut parameter {mu} not in (0,1]")));
        }
        self.cached((KernelKind::SingleCut, mu.to_bits(), 0, 0), || {
            self.build_cut(|r| CutoffFunction::chi_mu(r, mu).unwrap())
        })
    }

    /// G_{κ,μ} = 𝐓[χ_κ(|x|^σ) χ_μ(|x|^σ) G]; μ = 0 omits the χ_μ factor and
    /// μ = 1 yields the zero kernel.
    pub fn g_cut(&self, kappa: f64, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        Self::check_kappa(kappa)?;
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Domain(format!("mu = {mu} not in [0,1]")));
        }
        if mu == 0.0 {
            return self.g_kappa(kappa);
        }
        self.cached((KernelKind::DoubleCut, kappa.to_bits(), mu.to_bits(), 0), || {
            if mu == 1.0 {
                return Ok(PeriodizedKernel::delta(self.grid, 0.0));
            }
            self.build_cut(|r| {
                CutoffFunction::chi_mu(r, kappa).unwrap() * CutoffFunction::chi_mu(r, mu).unwrap()
            })
        })
    }

    /// Fluctuation propagator G_{κ‖μ} = G_κ - G_{κ,μ}.
    pub fn fluctuation(&self, kappa: f64, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        let gk = self.g_kappa(kappa)?;
        let gkm = self.g_cut(kappa, mu)?;
        Ok(Arc::new(gk.sub(&gkm)?))
    }

    /// ∂_μ G_{κ,μ} built analytically from ∂_μχ_μ; compactly supported in
    /// |x|^σ ∈ (μ/(1-μ), 2μ/(1-μ)] before periodization.
    pub fn d_mu_g(&self, kappa: f64, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        Self::check_kappa(kappa)?;
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Domain(format!("mu = {mu} not in (0,1)")));
        }
        self.cached((KernelKind::DMuG, kappa.to_bits(), mu.to_bits(), 0), || {
            self.build_cut(|r| {
                CutoffFunction::chi_mu(r, kappa).unwrap()
                    * CutoffFunction::d_mu_chi_mu(r, mu).unwrap()
            })
        })
    }

    /// ∂_κ G_{κ,μ}; μ = 0 omits the χ_μ factor.
    pub fn d_kappa_g(&self, kappa: f64, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        Self::check_kappa(kappa)?;
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::Domain(format!("mu = {mu} not in [0,1)")));
        }
        self.cached((KernelKind::DKappaG, kappa.to_bits(), mu.to_bits(), 0), || {
            self.build_cut(|r| {
                let chi_mu_factor = if mu == 0.0 {
                    1.0
                } else {
                    CutoffFunction::chi_mu(r, mu).unwrap()
                };
                CutoffFunction::d_mu_chi_mu(r, kappa).unwrap() * chi_mu_factor
            })
        })
    }

    /// ∂_κ ∂_μ G_{κ,μ}.
    pub fn d_kappa_d_mu_g(&self, kappa: f64, mu: f64) -> Result<Arc<PeriodizedKernel>> {
        Self::check_kappa(kappa)?;
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Domain(format!("mu = {mu} not in (0,1)")));
        }
        self.cached((KernelKind::DKappaDMuG, kappa.to_bits(), mu.to_bits(), 0), || {
            self.build_cut(|r| {
                CutoffFunction::d_mu_chi_mu(r, kappa).unwrap()
                    * CutoffFunction::d_mu_chi_mu(r, mu).unwrap()
            })
        })
    }

    /// K_μ^{*g} with symbol (1+[μ]²|k|²)^{-g}; μ = 0 or g = 0 give δ.
    pub fn k_pow(&self, mu: f64, g: u32) -> Result<Arc<PeriodizedKernel>> {
        if mu < 0.0 {
            return Err(Error::Domain(format!("mu = {mu} must be >= 0")));
        }
        if g == 0 || mu == 0.0 {
            return Ok(Arc::new(PeriodizedKernel::delta(self.grid, 1.0)));
        }
        let l2 = self.length_scale(mu).powi(2);
        self.cached((KernelKind::KPow, mu.to_bits(), 0, g), || {
            PeriodizedKernel::from_symbol(self.grid, |k| {
                (1.0 + l2 * norm_sq(k)).powi(-(g as i32))
            })
        })
    }

    /// K_{μ,η} = [η/μ]²δ + (1-[η/μ]²)K_μ, the transfer kernel with
    /// K_μ = K_{μ,η} ∗ K_η and ‖K_{μ,η}‖ = 1 ∨ (2[η/μ]²-1).
    pub fn k_transfer(&self, mu: f64, eta: f64) -> Result<PeriodizedKernel> {
        if mu <= 0.0 || eta < 0.0 {
            return Err(Error::Domain(format!("need mu > 0, eta >= 0; got {mu}, {eta}")));
        }
        let rho = (eta / mu).powf(2.0 / self.sigma);
        let k_mu = self.k_pow(mu, 1)?;
        Ok(PeriodizedKernel::delta_plus(rho, 1.0 - rho, &k_mu))
    }

    /// Even symbol of 𝐏_μ^g = (1 - [μ]²Δ)^g.
    pub fn p_mu_symbol(&self, mu: f64, g: u32) -> impl Fn(&[i64]) -> f64 {
        let l2 = self.length_scale(mu).powi(2);
        move |k: &[i64]| (1.0 + l2 * norm_sq(k)).powi(g as i32)
    }

    /// High-accuracy samples of the true function 𝐓G(x) at grid points,
    /// obtained by alias-folding the symbol over `alias_terms` image bands
    /// per axis. Only meaningful pointwise for σ > 1 (for σ ≤ 1 the
    /// periodized Green function diverges at the origin).
    pub fn uncut_position_samples(&self, alias_terms: i64) -> Result<Field> {
        if self.sigma <= 1.0 {
            return Err(Error::Unsupported(
                "pointwise samples of 𝐓G diverge for sigma <= 1".into(),
            ));
        }
        let grid = self.grid;
        let n = grid.n() as i64;
        let sigma = self.sigma;
        let d = grid.d();
        let scale = TAU.powi(-(d as i32));
        let mut coeffs: Vec<Complex64> = vec![Complex64::default(); grid.len()];
        let mut k0 = [0i64; 3];
        let mut alias = [0i64; 3];
        let bands = (2 * alias_terms + 1).pow(d as u32);
        for (lin, c) in coeffs.iter_mut().enumerate() {
            grid.freq_vec(lin, &mut k0);
            let mut acc = 0.0;
            for b in 0..bands {
                let mut rest = b;
                for a in 0..d {
                    alias[a] = rest % (2 * alias_terms + 1) - alias_terms;
                    rest /= 2 * alias_terms + 1;
                }
                let mut k2 = 0.0;
                for a in 0..d {
                    let k = (k0[a] + alias[a] * n) as f64;
                    k2 += k * k;
                }
                acc += 1.0 / (1.0 + k2.sqrt().powf(sigma));
            }
            *c = Complex64::new(acc * scale, 0.0);
        }
        grid::fft_nd(&mut coeffs, d, grid.n(), true);
        Field::from_values(grid, coeffs.iter().map(|c| c.re).collect())
    }

    /// ∂_μ K_μ with symbol -(∂_μ[μ]²)|k|²(1+[μ]²|k|²)^{-2}.
    pub fn d_mu_k(&self, mu: f64) -> Result<PeriodizedKernel> {
        if mu <= 0.0 {
            return Err(Error::Domain(format!("mu = {mu} must be > 0")));
        }
        let l2 = self.length_scale(mu).powi(2);
        let dl2 = (2.0 / self.sigma) * mu.powf(2.0 / self.sigma - 1.0);
        PeriodizedKernel::from_symbol(self.grid, |k| {
            let k2 = norm_sq(k);
            -dl2 * k2 / (1.0 + l2 * k2).powi(2)
        })
    }

    /// Oversample–cutoff–fold pipeline: builds 𝐓[w(|x|^σ)·G] where `w` is a
    /// position-space weight (a cutoff product or its μ-derivative).
    fn build_cut(&self, weight: impl Fn(f64) -> f64) -> Result<PeriodizedKernel> {
        let d = self.grid.d();
        let n = self.grid.n();
        let m = self.oversample;
        let nb = n * m;
        let len_big = nb.pow(d as u32);
        let h = self.grid.h();
        let big_period = TAU * m as f64;
        let sigma = self.sigma;

        // Green function of the big-period torus via the refined symbol lattice.
        let mut data = vec![Complex64::default(); len_big];
        let inv_vol = big_period.powi(-(d as i32));
        let mut idx = [0usize; 3];
        for (lin, c) in data.iter_mut().enumerate() {
            decode(lin, nb, d, &mut idx);
            let mut k2 = 0.0;
            for &j in idx.iter().take(d) {
                let f = if j < nb / 2 { j as f64 } else { j as f64 - nb as f64 };
                let kf = f / m as f64;
                k2 += kf * kf;
            }
            let sym = 1.0 / (1.0 + k2.sqrt().powf(sigma));
            *c = Complex64::new(sym * inv_vol, 0.0);
        }
        grid::fft_nd(&mut data, d, nb, true);

        // Pointwise cutoff in position space (minimal image on the big box).
        let mut cutted = vec![0.0f64; len_big];
        for (lin, v) in cutted.iter_mut().enumerate() {
            decode(lin, nb, d, &mut idx);
            let mut x2 = 0.0;
            for &j in idx.iter().take(d) {
                let x = if j < nb / 2 {
                    j as f64 * h
                } else {
                    j as f64 * h - big_period
                };
                x2 += x * x;
            }
            let r = x2.sqrt().powf(sigma);
            *v = data[lin].re * weight(r);
        }

        // Fold the M^d translates onto the base period.
        let len = self.grid.len();
        let mut folded = vec![0.0f64; len];
        let mut base_idx = [0usize; 3];
        let mut shift = [0usize; 3];
        for (lin, out) in folded.iter_mut().enumerate() {
            self.grid.decode(lin, &mut base_idx);
            let translates = m.pow(d as u32);
            let mut acc = 0.0;
            for t in 0..translates {
                decode(t, m, d, &mut shift);
                let mut big = [0usize; 3];
                for a in 0..d {
                    big[a] = base_idx[a] + shift[a] * n;
                }
                acc += cutted[encode(&big, nb, d)];
            }
            *out = acc;
        }

        PeriodizedKernel::from_position(self.grid, folded)
    }
}

#[inline]
fn norm_sq(k: &[i64]) -> f64 {
    k.iter().map(|&v| (v * v) as f64).sum()
}

#[inline]
fn norm(k: &[i64]) -> f64 {
    norm_sq(k).sqrt()
}

#[inline]
fn decode(lin: usize, n: usize, d: usize, out: &mut [usize; 3]) {
    let mut rest = lin;
    for a in (0..d).rev() {
        out[a] = rest % n;
        rest /= n;
    }
}

#[inline]
fn encode(idx: &[usize; 3], n: usize, d: usize) -> usize {
    let mut lin = 0;
    for a in 0..d {
        lin = lin * n + idx[a];
    }
    lin
}

// ---------------------------------------------------------------------------
// ℓ¹ scaling tables
// ---------------------------------------------------------------------------

/// One row of a kernel-norm scaling table.
#[derive(Clone, Debug)]
pub struct L1Row {
    pub mu: f64,
    pub length_scale: f64,
    pub l1: f64,
    /// l1 · [μ]^{-expected_exponent}: flat when the lemma bound is sharp.
    pub compensated: f64,
}

/// Fitted ℓ¹ scaling of a kernel family across dyadic scales.
#[derive(Clone, Debug)]
pub struct L1Table {
    pub label: String,
    pub expected_exponent: f64,
    pub rows: Vec<L1Row>,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub max_residual: f64,
    /// max/min of the compensated column.
    pub flatness: f64,
}

/// Fits log(l1) against log([μ]) for a kernel family evaluated on the given
/// μ scales; requires at least 4 scales.
pub fn l1_scaling_table(
    label: &str,
    expected_exponent: f64,
    mus: &[f64],
    mut l1_of_mu: impl FnMut(f64) -> Result<f64>,
    length_scale: impl Fn(f64) -> f64,
) -> Result<L1Table> {
    if mus.len() < 4 {
        return Err(Error::InsufficientScales);
    }
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        let l1 = l1_of_mu(mu)?;
        let ls = length_scale(mu);
        rows.push(L1Row {
            mu,
            length_scale: ls,
            l1,
            compensated: l1 * ls.powf(-expected_exponent),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.length_scale.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.l1.max(f64::MIN_POSITIVE).ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0f64, f64::max);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for r in &rows {
        lo = lo.min(r.compensated);
        hi = hi.max(r.compensated);
    }
    Ok(L1Table {
        label: label.to_string(),
        expected_exponent,
        rows,
        fitted_slope: slope,
        fitted_intercept: intercept,
        max_residual,
        flatness: hi / lo,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

// ---------------------------------------------------------------------------
// Kernel dumps
// ---------------------------------------------------------------------------

/// Metadata recorded in a kernel dump header.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpHeader {
    pub kind: String,
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub kappa: f64,
    pub mu: f64,
    pub oversample: usize,
    pub delta_mass: f64,
}

/// Writes position values with a plain-text header and a sha256 checksum of
/// the binary payload (little-endian f64).
pub fn write_dump(path: &Path, header: &DumpHeader, kernel: &PeriodizedKernel) -> Result<()> {
    let mut payload = Vec::with_capacity(kernel.smooth.len() * 8);
    for v in &kernel.smooth {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&payload);
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "renormflow kernel dump v1")?;
    writeln!(file, "kind={}", header.kind)?;
    writeln!(file, "d={}", header.d)?;
    writeln!(file, "n={}", header.n)?;
    writeln!(file, "sigma={:.17e}", header.sigma)?;
    writeln!(file, "kappa={:.17e}", header.kappa)?;
    writeln!(file, "mu={:.17e}", header.mu)?;
    writeln!(file, "oversample={}", header.oversample)?;
    writeln!(file, "delta_mass={:.17e}", header.delta_mass)?;
    writeln!(file, "sha256={:x}", digest)?;
    writeln!(file, "end_header")?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, PeriodizedKernel)> {
    let bytes = std::fs::read(path)?;
    let header_end = find_header_end(&bytes)
        .ok_or_else(|| Error::MalformedDump("missing end_header marker".into()))?;
    let text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::MalformedDump("header is not utf-8".into()))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in text.lines().skip(1) {
        if line == "end_header" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedDump(format!("bad header line: {line}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::MalformedDump(format!("missing header field {k}")))
    };
    let header = DumpHeader {
        kind: get("kind")?.to_string(),
        d: get("d")?.parse().map_err(|_| Error::MalformedDump("bad d".into()))?,
        n: get("n")?.parse().map_err(|_| Error::MalformedDump("bad n".into()))?,
        sigma: get("sigma")?.parse().map_err(|_| Error::MalformedDump("bad sigma".into()))?,
        kappa: get("kappa")?.parse().map_err(|_| Error::MalformedDump("bad kappa".into()))?,
        mu: get("mu")?.parse().map_err(|_| Error::MalformedDump("bad mu".into()))?,
        oversample: get("oversample")?
            .parse()
            .map_err(|_| Error::MalformedDump("bad oversample".into()))?,
        delta_mass: get("delta_mass")?
            .parse()
            .map_err(|_| Error::MalformedDump("bad delta_mass".into()))?,
    };
    let payload = &bytes[header_end..];
    let declared = get("sha256")?.to_string();
    let digest = format!("{:x}", Sha256::digest(payload));
    if digest != declared {
        return Err(Error::MalformedDump(format!(
            "checksum mismatch: header {declared}, payload {digest}"
        )));
    }
    if payload.len() % 8 != 0 {
        return Err(Error::MalformedDump("payload length not a multiple of 8".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let grid = TorusGrid::new(header.d, header.n)?;
    let mut kernel = PeriodizedKernel::from_position(grid, values)?;
    if header.delta_mass != 0.0 {
        kernel = PeriodizedKernel::delta_plus(header.delta_mass, 1.0, &kernel);
    }
    Ok((header, kernel))
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}
