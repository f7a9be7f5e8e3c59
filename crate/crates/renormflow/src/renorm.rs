//! Counterterms from the renormalization conditions at μ_ref = 1/2.
//!
//! The conditions 𝔼f^{i,1,0}_{κ,1/2} = 𝔣^{[i]} determine c^{[i]}_κ order by
//! order (each enters its own condition affinely with unit coefficient):
//!
//! ```text
//! c⁽¹⁾ = 𝔣¹ - 3𝔼Ψ²_{κ,1/2},
//! c⁽²⁾ = 𝔣² - 𝔼f^{2,1,0}_{κ,1/2}|_{c²=0},
//! ```
//!
//! where the second-order expectation is an exact Gaussian computation: the
//! Wick pairings of up to six Ψ legs are enumerated programmatically with
//! covariance C(z) = 𝔼Ψ(x)Ψ(x+z) and reduced to mode/position sums. A
//! Monte Carlo estimator built from the closed-form coefficients
//! cross-checks both counterterms.

use crate::error::{Error, Result};
use crate::flow;
use crate::grid::{sample_white_noise, Field};
use crate::kernels::{KernelFactory, PeriodizedKernel};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    ModeSum,
    MonteCarlo,
}

/// Renormalization parameters 𝔣^{[i]} (default zero) at μ_ref = 1/2.
#[derive(Clone, Debug)]
pub struct RenormConditions {
    pub frak: Vec<f64>,
    pub mu_ref: f64,
}

impl Default for RenormConditions {
    fn default() -> Self {
        Self { frak: vec![0.0, 0.0], mu_ref: 0.5 }
    }
}

impl RenormConditions {
    pub fn frak_i(&self, i: usize) -> f64 {
        self.frak.get(i - 1).copied().unwrap_or(0.0)
    }
}

/// The counterterm family c^{[i]}_κ, i = 1..=i_♯.
#[derive(Clone, Debug)]
pub struct CountertermSet {
    pub kappa: f64,
    pub c: Vec<f64>,
    pub provenance: Provenance,
}

/// 𝔼Ψ²_{κ,μ}: computed as the position sum h^dΣ(𝐓G_{κ‖μ})² and reconciled
/// against the Parseval mode sum (2π)^{-d}Σλ² to 1e-10 relative.
pub fn expected_psi_sq(factory: &KernelFactory, kappa: f64, mu: f64) -> Result<f64> {
    let (pos, freq) = flow::expected_psi_sq_both(factory, kappa, mu)?;
    let scale = pos.abs().max(1e-300);
    if (pos - freq).abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::Numeric(format!(
            "Parseval reconciliation failed for E[Psi^2]: {pos} vs {freq}"
        )));
    }
    Ok(freq)
}

/// c⁽¹⁾_κ = 𝔣¹ - 3𝔼Ψ²_{κ,μ_ref}.
pub fn counterterm_c1(
    factory: &KernelFactory,
    kappa: f64,
    conditions: &RenormConditions,
) -> Result<f64> {
    Ok(conditions.frak_i(1) - 3.0 * expected_psi_sq(factory, kappa, conditions.mu_ref)?)
}

// ---------------------------------------------------------------------------
// Wick machinery
// ---------------------------------------------------------------------------

/// All perfect matchings of the set {0..n}; empty for odd n.
pub fn isserlis_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n % 2 != 0 {
        return vec![];
    }
    fn rec(free: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if free.is_empty() {
            out.push(cur.clone());
            return;
        }
        let a = free.remove(0);
        for idx in 0..free.len() {
            let b = free.remove(idx);
            cur.push((a, b));
            rec(free, cur, out);
            cur.pop();
            free.insert(idx, b);
        }
        free.insert(0, a);
    }
    let mut free: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&mut free, &mut Vec::new(), &mut out);
    out
}

/// 𝔼[Π_q Ψ(p_q)] for legs at two symbolic points (labels 0 and 1 a lattice
/// displacement z apart), organised as Σ coef·C(0)^α C(z)^β.
pub fn wick_two_point_table(legs: &[u8]) -> Vec<(u32, u32, f64)> {
    let mut table: std::collections::BTreeMap<(u32, u32), f64> = Default::default();
    for pairing in isserlis_pairings(legs.len()) {
        let mut alpha = 0u32;
        let mut beta = 0u32;
        for &(a, b) in &pairing {
            if legs[a] == legs[b] {
                alpha += 1;
            } else {
                beta += 1;
            }
        }
        *table.entry((alpha, beta)).or_insert(0.0) += 1.0;
    }
    table.into_iter().map(|((a, b), c)| (a, b, c)).collect()
}

/// Covariance kernel of Ψ_{κ,μ}: multiplier λ_{G_{κ‖μ}}², position values
/// C(z) = h^dΣ G_f(·)G_f(·+z).
pub fn psi_covariance(factory: &KernelFactory, kappa: f64, mu: f64) -> Result<PeriodizedKernel> {
    let fluct = factory.fluctuation(kappa, mu)?;
    let table: Vec<f64> = fluct.multiplier().iter().map(|l| l * l).collect();
    PeriodizedKernel::from_position(
        fluct.grid(),
        {
            // iFFT of the squared multiplier with the kernel normalization
            let tmp = fluct.apply_symbol(|_| 1.0)?; // clone via identity symbol
            let _ = tmp;
            let grid = fluct.grid();
            let scale = crate::grid::TAU.powi(-(grid.d() as i32));
            let mut coeffs: Vec<num_complex::Complex64> = table
                .iter()
                .map(|&l| num_complex::Complex64::new(l * scale, 0.0))
                .collect();
            crate::grid::fft_nd(&mut coeffs, grid.d(), grid.n(), true);
            coeffs.iter().map(|c| c.re).collect()
        },
    )
}

/// 𝔼f^{2,1,0}_{κ,μ} with c² = 0, by Wick pairings against the closed form
/// of F^{2,1}: the bilocal piece 𝔼[(3Ψ²+c¹)(x) G_f(x-y) (3Ψ²+c¹)(y)]
/// integrated over y, plus the local piece 6∫G_f(x-y)𝔼[Ψ(x)(Ψ³+c¹Ψ)(y)]dy.
pub fn expected_f210(
    factory: &KernelFactory,
    kappa: f64,
    mu: f64,
    c1: f64,
) -> Result<f64> {
    let grid = factory.grid();
    let fluct = factory.fluctuation(kappa, mu)?;
    let cov = psi_covariance(factory, kappa, mu)?;
    let c0 = cov.smooth_values()[0];
    let h_d = grid.cell_volume();
    // weighted moments h^dΣ_z G_f(z)·C(z)^β
    let moment = |beta: u32| -> f64 {
        h_d * fluct
            .smooth_values()
            .iter()
            .zip(cov.smooth_values())
            .map(|(g, c)| g * c.powi(beta as i32))
            .sum::<f64>()
    };

    // bilocal: 9𝔼[Ψ²Ψ²] + 3c¹(𝔼Ψ²(x)+𝔼Ψ²(y)) + c¹², paired at displacement z
    let mut bilocal = 0.0;
    for (alpha, beta, coef) in wick_two_point_table(&[0, 0, 1, 1]) {
        bilocal += 9.0 * coef * c0.powi(alpha as i32) * moment(beta);
    }
    bilocal += (6.0 * c1 * c0 + c1 * c1) * moment(0);

    // local: 6[3𝔼[Ψ(x)Ψ³(y)]-pairings + c¹C(z)] against G_f
    let mut local = 0.0;
    for (alpha, beta, coef) in wick_two_point_table(&[0, 1, 1, 1]) {
        local += 6.0 * coef * c0.powi(alpha as i32) * moment(beta);
    }
    local += 6.0 * c1 * moment(1);

    Ok(bilocal + local)
}

/// c⁽²⁾_κ = 𝔣² - 𝔼f^{2,1,0}_{κ,1/2}|_{c²=0}; requires i_♯ ≥ 2.
pub fn counterterm_c2(
    factory: &KernelFactory,
    kappa: f64,
    conditions: &RenormConditions,
    i_sharp: u32,
    c1: f64,
) -> Result<f64> {
    if i_sharp < 2 {
        return Err(Error::Unsupported(
            "no second counterterm for these (d, sigma)".into(),
        ));
    }
    Ok(conditions.frak_i(2) - expected_f210(factory, kappa, conditions.mu_ref, c1)?)
}

/// Counterterms with mode-sum provenance up to order i_♯ ∧ 2.
pub fn counterterms_mode_sum(
    factory: &KernelFactory,
    kappa: f64,
    conditions: &RenormConditions,
    i_sharp: u32,
) -> Result<CountertermSet> {
    let mut c = Vec::new();
    if i_sharp >= 1 {
        c.push(counterterm_c1(factory, kappa, conditions)?);
    }
    if i_sharp >= 2 {
        let c1 = c[0];
        c.push(counterterm_c2(factory, kappa, conditions, i_sharp, c1)?);
    }
    Ok(CountertermSet { kappa, c, provenance: Provenance::ModeSum })
}

// ---------------------------------------------------------------------------
// Continuum quadrature oracle (d = 1)
// ---------------------------------------------------------------------------

/// The d = 1 fundamental solution G(x) of 1+(-Δ)^{σ/2} evaluated by contour
/// rotation: for x > 0 and σ ∈ (0, 2),
///
/// ```text
/// G(x) = (1/π) Re[ i ∫₀^∞ e^{-tx} / (1 + t^σ e^{iπσ/2}) dt ],
/// ```
///
/// a damped non-oscillatory integral (the poles of the symbol lie outside
/// the rotation sector for σ < 2). Used by the deep-κ divergence oracle
/// where lattice resolution cannot reach.
pub fn continuum_green_d1(sigma: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain("continuum Green function needs x > 0".into()));
    }
    if !(sigma > 0.0 && sigma < 2.0) {
        return Err(Error::Domain(format!("contour rotation needs sigma in (0,2), got {sigma}")));
    }
    let phase = num_complex::Complex64::new(0.0, std::f64::consts::PI * sigma / 2.0).exp();
    // u = t·x, exponential scale 1; panels out to u = 60
    let (nodes, weights) = crate::tensor::taylor::gauss_legendre_01(48);
    let mut acc = num_complex::Complex64::default();
    let panels = [0.0, 1.0, 3.0, 8.0, 20.0, 60.0];
    for w in panels.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (&n, &wq) in nodes.iter().zip(&weights) {
            let u = a + (b - a) * n;
            let t = u / x;
            let denom = num_complex::Complex64::new(1.0, 0.0) + t.powf(sigma) * phase;
            acc += (b - a) * wq * (-u).exp() / denom;
        }
    }
    Ok((num_complex::Complex64::new(0.0, 1.0) * acc / x).re / std::f64::consts::PI)
}

/// Continuum 𝔼Ψ²_{κ,μ} in d = 1: the ℝ-integral 2∫₀^∞ G_{κ‖μ}(x)² dx with
/// G_{κ‖μ} = χ_κ(x^σ)(1-χ_μ(x^σ))G(x), by log-substituted quadrature over
/// the compact support. Free of lattice resolution limits, so κ may be
/// taken arbitrarily deep.
pub fn continuum_expected_psi_sq_d1(sigma: f64, kappa: f64, mu: f64) -> Result<f64> {
    use crate::kernels::CutoffFunction;
    let lo = (kappa / (1.0 - kappa)).powf(1.0 / sigma) * 0.999;
    let hi = (2.0 * mu / (1.0 - mu)).powf(1.0 / sigma) * 1.001;
    let (nodes, weights) = crate::tensor::taylor::gauss_legendre_01(24);
    // log-spaced panels resolve both the κ-edge and the μ-edge
    let panels = 80usize;
    let (ly0, ly1) = (lo.ln(), hi.ln());
    let mut acc = 0.0;
    for p in 0..panels {
        let a = ly0 + (ly1 - ly0) * p as f64 / panels as f64;
        let b = ly0 + (ly1 - ly0) * (p + 1) as f64 / panels as f64;
        for (&n, &wq) in nodes.iter().zip(&weights) {
            let y = a + (b - a) * n;
            let x = y.exp();
            let r = x.powf(sigma);
            let cut = CutoffFunction::chi_mu(r, kappa)?
                * (1.0 - CutoffFunction::chi_mu(r, mu)?);
            if cut == 0.0 {
                continue;
            }
            let g = continuum_green_d1(sigma, x)?;
            acc += (b - a) * wq * (cut * g).powi(2) * x;
        }
    }
    Ok(2.0 * acc)
}

/// One Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

fn mc_reduce(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    McEstimate { mean, stderr: (var / n as f64).sqrt(), samples: n }
}

/// Monte Carlo counterterms from the closed-form coefficients, solved order
/// by order: c⁽ⁱ⁾ = 𝔣ⁱ - 𝔼̂[f^{i,1,0}_{κ,1/2} with c⁽ⁱ⁾ = 0], where lower
/// orders are already fixed (c¹ enters the i = 2 estimator). Embarrassingly
/// parallel over per-sample seeds base_seed + index.
pub struct McCounterterms {
    pub c1: McEstimate,
    pub c2: Option<McEstimate>,
    pub set: CountertermSet,
}

pub fn counterterms_mc(
    factory: &KernelFactory,
    kappa: f64,
    conditions: &RenormConditions,
    i_sharp: u32,
    samples: usize,
    base_seed: u64,
    c1_for_second_order: Option<f64>,
) -> Result<McCounterterms> {
    if samples < 2 {
        return Err(Error::InsufficientSamples("need at least 2 MC samples".into()));
    }
    let grid = factory.grid();
    let mu = conditions.mu_ref;
    let fluct = factory.fluctuation(kappa, mu)?;

    // first order: f^{1,1,0}|_{c¹=0} = 3Ψ²
    let f1: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let xi = sample_white_noise(grid, base_seed + s as u64);
            let psi = fluct.convolve(&xi).expect("same grid");
            3.0 * psi.values().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64
        })
        .collect();
    let est1 = mc_reduce(&f1);
    let c1_mc = conditions.frak_i(1) - est1.mean;
    let c1_est = McEstimate { mean: c1_mc, stderr: est1.stderr, samples };

    let mut c2_est = None;
    let mut c = vec![c1_mc];
    if i_sharp >= 2 {
        let c1 = c1_for_second_order.unwrap_or(c1_mc);
        let f2: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|s| {
                let xi = sample_white_noise(grid, base_seed + s as u64);
                let psi = fluct.convolve(&xi).expect("same grid");
                let w11 = psi.map(|v| 3.0 * v * v + c1);
                let cubic = psi.map(|v| v * v * v + c1 * v);
                // f^{2,1,0} = (3Ψ²+c¹)·(G_f⋆(3Ψ²+c¹)) + 6Ψ·(G_f⋆(Ψ³+c¹Ψ))
                let conv_w = fluct.convolve(&w11).expect("grid");
                let conv_cubic = fluct.convolve(&cubic).expect("grid");
                let field = w11
                    .mul_pointwise(&conv_w)
                    .add(&psi.scaled(6.0).mul_pointwise(&conv_cubic));
                field.mean()
            })
            .collect();
        let est2 = mc_reduce(&f2);
        let c2_mc = conditions.frak_i(2) - est2.mean;
        c2_est = Some(McEstimate { mean: c2_mc, stderr: est2.stderr, samples });
        c.push(c2_mc);
    }
    Ok(McCounterterms {
        c1: c1_est,
        c2: c2_est,
        set: CountertermSet { kappa, c, provenance: Provenance::MonteCarlo },
    })
}

/// One row of the enhanced-noise expectation table.
#[derive(Clone, Debug)]
pub struct EnhancedRow {
    pub i: u32,
    pub m: u32,
    pub a_abs: u32,
    pub mu: f64,
    /// exact Gaussian value where available (None for MC-only entries)
    pub exact: Option<f64>,
    pub mc: McEstimate,
}

/// Tabulates 𝔼̂ f^{i,m,0}_{κ,μ} for the low-order enhanced noise across a
/// μ-grid: Monte Carlo from the closed forms with the exact mode-sum values
/// alongside where the parity/Wick computation provides them.
pub fn enhanced_noise_expectations(
    factory: &KernelFactory,
    kappa: f64,
    counterterms: &CountertermSet,
    mus: &[f64],
    samples: usize,
    base_seed: u64,
) -> Result<Vec<EnhancedRow>> {
    if samples < 2 {
        return Err(Error::InsufficientSamples("need at least 2 MC samples".into()));
    }
    let grid = factory.grid();
    let c1 = counterterms.c.first().copied().unwrap_or(0.0);
    let c2 = counterterms.c.get(1).copied();
    let mut rows = Vec::new();
    for &mu in mus {
        let fluct = factory.fluctuation(kappa, mu)?;
        let epsq = expected_psi_sq(factory, kappa, mu)?;
        #[derive(Clone, Copy)]
        struct Obs {
            f10: f64,
            f11: f64,
            f12: f64,
            f20: f64,
            f21: f64,
        }
        let per_sample: Vec<Obs> = (0..samples)
            .into_par_iter()
            .map(|s| {
                let xi = sample_white_noise(grid, base_seed + s as u64);
                let psi = fluct.convolve(&xi).expect("grid");
                let cubic = psi.map(|v| v * v * v + c1 * v);
                let w11 = psi.map(|v| 3.0 * v * v + c1);
                let conv_cubic = fluct.convolve(&cubic).expect("grid");
                let conv_w = fluct.convolve(&w11).expect("grid");
                let f21_field = w11
                    .mul_pointwise(&conv_w)
                    .add(&psi.scaled(6.0).mul_pointwise(&conv_cubic))
                    .map(|v| v + c2.unwrap_or(0.0));
                let f20_field =
                    w11.mul_pointwise(&conv_cubic).add(&psi.scaled(c2.unwrap_or(0.0)));
                Obs {
                    f10: cubic.mean(),
                    f11: w11.mean(),
                    f12: 3.0 * psi.mean(),
                    f20: f20_field.mean(),
                    f21: f21_field.mean(),
                }
            })
            .collect();
        let collect = |f: &dyn Fn(&Obs) -> f64| -> McEstimate {
            let vals: Vec<f64> = per_sample.iter().map(f).collect();
            mc_reduce(&vals)
        };
        rows.push(EnhancedRow {
            i: 1,
            m: 0,
            a_abs: 0,
            mu,
            exact: Some(0.0),
            mc: collect(&|o| o.f10),
        });
        rows.push(EnhancedRow {
            i: 1,
            m: 1,
            a_abs: 0,
            mu,
            exact: Some(3.0 * epsq + c1),
            mc: collect(&|o| o.f11),
        });
        rows.push(EnhancedRow {
            i: 1,
            m: 2,
            a_abs: 0,
            mu,
            exact: Some(0.0),
            mc: collect(&|o| o.f12),
        });
        rows.push(EnhancedRow {
            i: 1,
            m: 3,
            a_abs: 0,
            mu,
            exact: Some(1.0),
            mc: McEstimate { mean: 1.0, stderr: 0.0, samples },
        });
        rows.push(EnhancedRow {
            i: 2,
            m: 0,
            a_abs: 0,
            mu,
            exact: Some(0.0),
            mc: collect(&|o| o.f20),
        });
        let exact21 = expected_f210(factory, kappa, mu, c1)? + c2.unwrap_or(0.0);
        rows.push(EnhancedRow {
            i: 2,
            m: 1,
            a_abs: 0,
            mu,
            exact: Some(exact21),
            mc: collect(&|o| o.f21),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    fn factory(n: usize, sigma: f64) -> KernelFactory {
        KernelFactory::new(TorusGrid::new(1, n).unwrap(), sigma).unwrap()
    }

    #[test]
    fn pairing_counts() {
        assert_eq!(isserlis_pairings(2).len(), 1);
        assert_eq!(isserlis_pairings(4).len(), 3);
        assert_eq!(isserlis_pairings(6).len(), 15);
        assert!(isserlis_pairings(3).is_empty());
    }

    #[test]
    fn wick_tables() {
        // 𝔼[Ψ²(x)Ψ²(y)] = C0² + 2C(z)²
        let t = wick_two_point_table(&[0, 0, 1, 1]);
        assert_eq!(t, vec![(0, 2, 2.0), (2, 0, 1.0)]);
        // 𝔼[Ψ(x)Ψ³(y)] = 3C0·C(z)
        let t = wick_two_point_table(&[0, 1, 1, 1]);
        assert_eq!(t, vec![(1, 1, 3.0)]);
    }

    #[test]
    fn mode_sum_oracle_uncut_sigma2() {
        // (2π)^{-1} Σ_k (1+k²)^{-2}: truncated oracle |k| ≤ 10^4 and the
        // closed form (π/2)coth(π) + (π²/2)csch²(π), both ≈ 0.25683
        let mut oracle = 1.0f64;
        for k in 1..=10_000i64 {
            oracle += 2.0 / (1.0 + (k * k) as f64).powi(2);
        }
        oracle /= crate::grid::TAU;
        // closed form: Σ_k (1+k²)^{-2} = (π/2)coth π + (π²/2) csch² π
        let pi = std::f64::consts::PI;
        let sum_closed = (pi / 2.0) * (1.0 / pi.tanh()) + (pi * pi / 2.0) / pi.sinh().powi(2);
        let closed = sum_closed / crate::grid::TAU;
        assert!((oracle - closed).abs() < 1e-10, "{oracle} vs {closed}");
        assert!((oracle - 0.2568242).abs() < 2e-6, "oracle {oracle}");

        // the lattice mode sum approaches it as N grows (uncut surrogate:
        // the full Green multiplier squared)
        let fac = factory(4096, 2.0);
        let g = fac.green().unwrap();
        let lattice: f64 =
            g.multiplier().iter().map(|l| l * l).sum::<f64>() / crate::grid::TAU;
        assert!((lattice - oracle).abs() < 1e-6, "{lattice} vs {oracle}");
    }

    #[test]
    fn psi_sq_zero_at_mu_zero_and_monotone() {
        let fac = factory(256, 0.45);
        let kappa = 0.25;
        assert_eq!(expected_psi_sq(&fac, kappa, 0.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for j in (0..=6).rev() {
            let mu = 0.5f64.powi(j);
            let v = expected_psi_sq(&fac, kappa, mu).unwrap();
            assert!(v >= prev - 1e-12, "not monotone at mu={mu}");
            prev = v;
        }
    }

    #[test]
    fn c1_linearity_and_small_at_large_kappa() {
        let fac = factory(256, 0.45);
        let kappa = 0.5;
        let base = RenormConditions::default();
        let shifted = RenormConditions { frak: vec![1.0, 0.0], mu_ref: 0.5 };
        let c_base = counterterm_c1(&fac, kappa, &base).unwrap();
        let c_shift = counterterm_c1(&fac, kappa, &shifted).unwrap();
        assert!((c_shift - c_base - 1.0).abs() < 1e-12);
        // fluctuation propagator is small for κ near 1/2 at μ_ref = 1/2
        let deep = counterterm_c1(&fac, 0.0625, &base).unwrap();
        assert!(c_base.abs() < 0.2 * deep.abs(), "c1(1/2) = {c_base}, c1(2^-4) = {deep}");
    }

    #[test]
    fn c1_monotone_in_kappa() {
        let fac = factory(512, 0.45);
        let base = RenormConditions::default();
        let mut prev = 0.0;
        for j in 1..=5 {
            let kappa = 0.5f64.powi(j);
            let neg_c1 = -counterterm_c1(&fac, kappa, &base).unwrap();
            assert!(neg_c1 >= prev - 1e-12, "-c1 not nondecreasing at kappa={kappa}");
            prev = neg_c1;
        }
    }

    #[test]
    fn c1_divergence_slope() {
        // -c¹_κ ~ [κ]^{2σ-d}; resolvable scales need [κ] ≳ h
        let sigma = 0.4;
        let fac = factory(32768, sigma);
        let base = RenormConditions::default();
        let kappas: Vec<f64> = (1..=4).map(|j| 0.5f64.powi(j)).collect();
        let pts: Vec<(f64, f64)> = kappas
            .iter()
            .map(|&k| {
                let c1 = counterterm_c1(&fac, k, &base).unwrap();
                (k.powf(1.0 / sigma), -c1)
            })
            .collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let expect = 2.0 * sigma - 1.0;
        assert!(
            (slope - expect).abs() <= 0.15 * expect.abs(),
            "slope {slope} vs {expect}"
        );
    }

    #[test]
    fn c2_frak_linearity() {
        let fac = factory(128, 0.4);
        let kappa = 0.125;
        let base = RenormConditions { frak: vec![0.0, 0.0], mu_ref: 0.5 };
        let shifted = RenormConditions { frak: vec![0.0, 1.0], mu_ref: 0.5 };
        let c1 = counterterm_c1(&fac, kappa, &base).unwrap();
        let a = counterterm_c2(&fac, kappa, &base, 2, c1).unwrap();
        let b = counterterm_c2(&fac, kappa, &shifted, 2, c1).unwrap();
        assert!((b - a - 1.0).abs() < 1e-12);
        // no second counterterm when i_♯ < 2
        assert!(counterterm_c2(&fac, kappa, &base, 1, c1).is_err());
    }

    #[test]
    fn sunset_term_matches_direct_mode_sum() {
        // with 3C0 + c¹ = 0 all tadpole pairings cancel and
        // 𝔼f^{2,1,0}|_{c²=0} = 18 h^dΣ G_f C² ; cross-check the position
        // sum against the double mode sum Σ_{k₁,k₂} ĜF(k₁+k₂)Ĉ(k₁)Ĉ(k₂)
        let fac = factory(16, 0.4);
        let (kappa, mu) = (0.2, 0.5);
        let c1 = -3.0 * expected_psi_sq(&fac, kappa, mu).unwrap();
        let full = expected_f210(&fac, kappa, mu, c1).unwrap();
        let fluct = fac.fluctuation(kappa, mu).unwrap();
        let cov = psi_covariance(&fac, kappa, mu).unwrap();
        let h = fac.grid().cell_volume();
        let sunset = 18.0
            * h
            * fluct
                .smooth_values()
                .iter()
                .zip(cov.smooth_values())
                .map(|(g, c)| g * c * c)
                .sum::<f64>();
        assert!((full - sunset).abs() < 1e-10 * sunset.abs().max(1.0), "{full} vs {sunset}");

        // direct double mode sum (d = 1, N = 16)
        let n = fac.grid().len();
        let vol = crate::grid::TAU;
        let mut mode_sum = 0.0;
        for k1 in 0..n {
            for k2 in 0..n {
                // Ĉ_k = λ_C (2π)^{-d}; ĜF similarly; h^dΣ ABC = (2π)^{2d} Σ Â B̂ Ĉ
                let k12 = (k1 + k2) % n;
                mode_sum += fluct.multiplier()[k12]
                    * cov.multiplier()[k1]
                    * cov.multiplier()[k2];
            }
        }
        // h^dΣ ABD = (2π)^{-2d} Σ_{k₁,k₂} λ_A(k₁+k₂) λ_B(k₁) λ_D(k₂) in d = 1
        mode_sum *= 18.0 / (vol * vol);
        assert!(
            (mode_sum - sunset).abs() < 1e-9 * sunset.abs().max(1.0),
            "mode {mode_sum} vs position {sunset}"
        );
    }

    #[test]
    fn mc_cross_validates_mode_sums() {
        let fac = factory(64, 0.4);
        let kappa = 0.125;
        let cond = RenormConditions::default();
        let mode = counterterms_mode_sum(&fac, kappa, &cond, 2).unwrap();
        let mc = counterterms_mc(&fac, kappa, &cond, 2, 400, 9000, Some(mode.c[0])).unwrap();
        let d1 = (mc.c1.mean - mode.c[0]).abs();
        assert!(d1 <= 3.0 * mc.c1.stderr.max(1e-12), "c1: {d1} vs 3σ {}", 3.0 * mc.c1.stderr);
        let c2 = mc.c2.unwrap();
        let d2 = (c2.mean - mode.c[1]).abs();
        assert!(d2 <= 3.0 * c2.stderr.max(1e-12), "c2: {d2} vs 3σ {}", 3.0 * c2.stderr);
    }

    #[test]
    fn mc_affinity_in_counterterm() {
        // running the i=1 estimator with c¹ = 0 vs c¹ = 1 in the *boundary*
        // shifts 𝔼f^{1,1,0} by exactly 1: by construction of the estimator
        // the condition is affine with unit coefficient; check via the
        // second-order estimator's c¹ dependence instead
        let fac = factory(32, 0.4);
        let kappa = 0.2;
        let cond = RenormConditions::default();
        let a = counterterms_mc(&fac, kappa, &cond, 2, 50, 1, Some(0.0)).unwrap();
        let cond_shift = RenormConditions { frak: vec![1.0, 0.0], mu_ref: 0.5 };
        let b = counterterms_mc(&fac, kappa, &cond_shift, 2, 50, 1, Some(0.0)).unwrap();
        assert!((b.c1.mean - a.c1.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enhanced_noise_parity_and_exact_values() {
        let fac = factory(64, 0.45);
        let kappa = 0.25;
        let cond = RenormConditions::default();
        let cts = counterterms_mode_sum(&fac, kappa, &cond, 1).unwrap();
        let rows =
            enhanced_noise_expectations(&fac, kappa, &cts, &[0.5, 0.25], 300, 777).unwrap();
        for row in &rows {
            if let Some(exact) = row.exact {
                let tol = 3.0 * row.mc.stderr + 1e-9;
                assert!(
                    (row.mc.mean - exact).abs() <= tol,
                    "f^({},{},{}) at mu {}: mc {} vs exact {exact} (tol {tol})",
                    row.i,
                    row.m,
                    row.a_abs,
                    row.mu,
                    row.mc.mean
                );
            }
        }
        // f^{1,1,0} condition at μ_ref: exact = 𝔣¹ = 0
        let f11 = rows
            .iter()
            .find(|r| r.i == 1 && r.m == 1 && (r.mu - 0.5).abs() < 1e-12)
            .unwrap();
        assert!(f11.exact.unwrap().abs() < 1e-10);
    }
}
