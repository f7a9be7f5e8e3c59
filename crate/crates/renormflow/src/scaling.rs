//! Power-counting calculus: scaling dimensions, ϱ_ε, relevance
//! classification, the enhanced-noise enumeration and the counterterm count.
//!
//! All dimension arithmetic is linear in σ with small integer coefficients,
//! so it is carried out in exact rational arithmetic. σ enters as a
//! `Ratio<i64>` (decimal inputs like "0.45" are exactly rational), which
//! keeps boundary classifications such as ϱ(i,m) = 0 and counts like
//! i_♯ = ⌊σ/(3σ-d)⌋ free of floating-point edge cases.

use crate::error::{Error, Result};
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

pub type Rat = Ratio<i64>;

/// Parses a plain decimal string ("2", "0.45", "-1.2") into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Rat> {
    let t = s.trim();
    let (sign, t) = match t.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, t),
    };
    let (int_part, frac_part) = match t.split_once('.') {
        Some((a, b)) => (a, b),
        None => (t, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(Error::Domain(format!("cannot parse '{s}' as a decimal")));
    }
    let int: i64 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| Error::Domain(format!("cannot parse '{s}' as a decimal")))?
    };
    if frac_part.len() > 12 {
        return Err(Error::Domain(format!("'{s}' has too many decimal digits")));
    }
    let mut denom = 1i64;
    let mut num = 0i64;
    for c in frac_part.chars() {
        let digit = c
            .to_digit(10)
            .ok_or_else(|| Error::Domain(format!("cannot parse '{s}' as a decimal")))?;
        num = num * 10 + digit as i64;
        denom *= 10;
    }
    Ok(Ratio::new(sign * (int * denom + num), denom))
}

/// Scaling dimensions of the sub-critical regime σ ∈ (d/3, d/2].
///
/// dim(ξ) = d/2, dim(Φ) = d/2 - σ ≥ 0, dim(λ) = 3σ - d > 0; the fixed
/// regularity-loss parameter ε defaults to ε_⋄/6 ∈ (0, ε_⋄/3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dimensions {
    d: u32,
    sigma: Rat,
    epsilon: Rat,
}

impl Dimensions {
    /// Sub-critical dimensions with the default ε = ε_⋄/6.
    pub fn new(d: u32, sigma: Rat) -> Result<Self> {
        if !(1..=6).contains(&d) {
            return Err(Error::Domain(format!("d = {d} not in 1..=6")));
        }
        let dr = Ratio::from_integer(d as i64);
        if !(sigma > dr / 3 && sigma <= dr / 2) {
            return Err(Error::Domain(format!(
                "sigma = {sigma} not in the sub-critical window (d/3, d/2] for d = {d}"
            )));
        }
        let mut dims = Self { d, sigma, epsilon: Ratio::zero() };
        dims.epsilon = dims.epsilon_diamond() / 6;
        Ok(dims)
    }

    /// Overrides ε; must satisfy 0 < ε < ε_⋄/3.
    pub fn with_epsilon(mut self, epsilon: Rat) -> Result<Self> {
        if !(epsilon > Ratio::zero() && epsilon < self.epsilon_diamond() / 3) {
            return Err(Error::Domain(format!(
                "epsilon = {epsilon} not in (0, eps_diamond/3)"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn sigma(&self) -> Rat {
        self.sigma
    }

    pub fn sigma_f64(&self) -> f64 {
        self.sigma.to_f64().unwrap()
    }

    pub fn epsilon(&self) -> Rat {
        self.epsilon
    }

    pub fn epsilon_f64(&self) -> f64 {
        self.epsilon.to_f64().unwrap()
    }

    pub fn dim_xi(&self) -> Rat {
        Ratio::new(self.d as i64, 2)
    }

    pub fn dim_phi(&self) -> Rat {
        Ratio::new(self.d as i64, 2) - self.sigma
    }

    pub fn dim_lambda(&self) -> Rat {
        self.sigma * 3 - Ratio::from_integer(self.d as i64)
    }

    /// ϱ_ε(i, m) + |a| = -d/2 - ε + m(d/2 - σ + 2ε) + i(3σ - d - 6ε) + |a|.
    pub fn rho_eps(&self, i: u32, m: u32, a_abs: u32, eps: Rat) -> Rat {
        -self.dim_xi() - eps
            + (self.dim_phi() + eps * 2) * m as i64
            + (self.dim_lambda() - eps * 6) * i as i64
            + Ratio::from_integer(a_abs as i64)
    }

    /// ϱ(i, m) + |a| at ε = 0.
    pub fn rho(&self, i: u32, m: u32, a_abs: u32) -> Rat {
        self.rho_eps(i, m, a_abs, Ratio::zero())
    }

    pub fn rho_f64(&self, i: u32, m: u32, a_abs: u32, eps: f64) -> f64 {
        let r0 = self.rho(i, m, a_abs).to_f64().unwrap();
        r0 + eps * (-1.0 + 2.0 * m as f64 - 6.0 * i as f64)
    }

    /// Number of mass counterterms i_♯ = ⌊σ/(3σ-d)⌋.
    pub fn i_sharp(&self) -> u32 {
        (self.sigma / self.dim_lambda()).floor().to_integer() as u32
    }

    /// Smallest i with ϱ(i+1, 0) > 0.
    pub fn i_diamond(&self) -> u32 {
        let mut i = 0u32;
        while self.rho(i + 1, 0, 0) <= Ratio::zero() {
            i += 1;
        }
        i.max(1)
    }

    /// ϱ_⋄: minimum of ϱ(i,m)+l over i ≤ i_⋄, m ≤ 3i, l ∈ ℕ₊ with ϱ(i,m)+l > 0.
    ///
    /// Since ϱ(i,m)+l grows linearly in l with slope 1, only l ≤ 10 matter.
    pub fn rho_diamond(&self) -> Rat {
        let i_d = self.i_diamond();
        let mut best: Option<Rat> = None;
        for i in 0..=i_d {
            for m in 0..=(3 * i) {
                let rho = self.rho(i, m, 0);
                for l in 1..=10i64 {
                    let v = rho + Ratio::from_integer(l);
                    if v > Ratio::zero() {
                        best = Some(match best {
                            Some(b) if b <= v => b,
                            _ => v,
                        });
                        break;
                    }
                }
            }
        }
        best.expect("rho_diamond: enumeration non-empty")
    }

    /// ε_⋄ = dim(ξ)/3 ∧ dim(λ)/9 ∧ ϱ_⋄/(7+6i_⋄) ∧ σ.
    pub fn epsilon_diamond(&self) -> Rat {
        let c1 = self.dim_xi() / 3;
        let c2 = self.dim_lambda() / 9;
        let c3 = self.rho_diamond() / Ratio::from_integer(7 + 6 * self.i_diamond() as i64);
        let c4 = self.sigma;
        c1.min(c2).min(c3).min(c4)
    }
}

/// (i, m) label of a coefficient together with one multi-index per argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoeffIndex {
    pub i: u32,
    pub m: u32,
    /// One multi-index in ℕ₀^d per argument slot; length m.
    pub a: Vec<Vec<u32>>,
}

impl CoeffIndex {
    pub fn unweighted(i: u32, m: u32) -> Self {
        Self { i, m, a: vec![vec![]; m as usize] }
    }

    pub fn a_abs(&self) -> u32 {
        self.a.iter().flat_map(|mi| mi.iter()).sum()
    }

    /// True when the coefficient vanishes identically:
    /// i = 0 with m > 0, or m > 2(i-1)+3 for i ≥ 1, or a ≠ 0 with i ≤ 1
    /// (all order-one coefficients are Dirac-diagonal, so every polynomial
    /// weight (x-y)^a kills them).
    pub fn vanishes(&self) -> bool {
        if self.i == 0 {
            return self.m > 0;
        }
        if self.m > 2 * (self.i - 1) + 3 {
            return true;
        }
        self.i <= 1 && self.a_abs() > 0
    }
}

/// Relevance classification of the coefficient hierarchy.
#[derive(Clone, Debug)]
pub struct Classification {
    pub dims: Dimensions,
    pub i_max: u32,
    /// (i, m) with ϱ(i,m) ≤ 0, m ≤ 3i, non-vanishing, with the largest
    /// admissible polynomial degree max_a = ⌊-ϱ(i,m)⌋.
    pub relevant: Vec<RelevantEntry>,
    /// Enhanced noise: relevant f^{i,m,a} with m ≤ 3i that are not
    /// identically zero, listed by (i, m, |a|).
    pub enhanced_noise: Vec<EnhancedEntry>,
    pub i_sharp: u32,
    pub i_diamond: u32,
    pub epsilon_diamond: Rat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelevantEntry {
    pub i: u32,
    pub m: u32,
    pub rho_num: i64,
    pub rho_den: i64,
    pub max_a: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnhancedEntry {
    pub i: u32,
    pub m: u32,
    pub a_abs: u32,
}

/// Enumerates the relevant coefficients and the enhanced noise up to order
/// i_max (which must reach i_⋄ so the finite lists are complete).
pub fn classify(dims: &Dimensions, i_max: u32) -> Result<Classification> {
    if i_max < dims.i_diamond() {
        return Err(Error::Domain(format!(
            "i_max = {i_max} below i_diamond = {}",
            dims.i_diamond()
        )));
    }
    let mut relevant = Vec::new();
    let mut enhanced = Vec::new();
    for i in 0..=i_max {
        let m_hi = 3 * i;
        for m in 0..=m_hi {
            let idx = CoeffIndex::unweighted(i, m);
            if idx.vanishes() {
                continue;
            }
            let rho = dims.rho(i, m, 0);
            if rho > Ratio::zero() {
                continue;
            }
            let max_a = (-rho).floor().to_integer() as u32;
            relevant.push(RelevantEntry {
                i,
                m,
                rho_num: *rho.numer(),
                rho_den: *rho.denom(),
                max_a,
            });
            for a_abs in 0..=max_a {
                // a ≠ 0 on an order ≤ 1 coefficient vanishes identically
                if a_abs > 0 && i <= 1 {
                    continue;
                }
                enhanced.push(EnhancedEntry { i, m, a_abs });
            }
        }
    }
    Ok(Classification {
        dims: *dims,
        i_max,
        relevant,
        enhanced_noise: enhanced,
        i_sharp: dims.i_sharp(),
        i_diamond: dims.i_diamond(),
        epsilon_diamond: dims.epsilon_diamond(),
    })
}

/// One entry (i, m, a, s, r) of an index list for cumulants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub index: CoeffIndex,
    pub s: u32,
    pub r: u32,
}

/// A list 𝙸 of indices with the derived sums n, i(𝙸), m(𝙸), a(𝙸), s(𝙸), r(𝙸).
#[derive(Clone, Debug, Default)]
pub struct IndexList {
    pub entries: Vec<IndexEntry>,
}

impl IndexList {
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self> {
        for e in &entries {
            if e.s > 1 || e.r > 2 {
                return Err(Error::Domain(format!(
                    "index (s={}, r={}) outside s ∈ {{0,1}}, r ∈ {{0,1,2}}",
                    e.s, e.r
                )));
            }
            if e.index.a.len() != e.index.m as usize {
                return Err(Error::Domain("multi-index list length != m".into()));
            }
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn i_total(&self) -> u32 {
        self.entries.iter().map(|e| e.index.i).sum()
    }

    pub fn m_total(&self) -> u32 {
        self.entries.iter().map(|e| e.index.m).sum()
    }

    pub fn a_total(&self) -> u32 {
        self.entries.iter().map(|e| e.index.a_abs()).sum()
    }

    pub fn s_total(&self) -> u32 {
        self.entries.iter().map(|e| e.s).sum()
    }

    pub fn r_total(&self) -> u32 {
        self.entries.iter().map(|e| e.r).sum()
    }

    /// ϱ_ε(𝙸) = Σ_q ϱ_ε(i_q, m_q) + |a_q|.
    pub fn rho_eps(&self, dims: &Dimensions, eps: Rat) -> Rat {
        self.entries
            .iter()
            .map(|e| dims.rho_eps(e.index.i, e.index.m, e.index.a_abs(), eps))
            .sum()
    }

    /// Cumulant relevance: ϱ(𝙸) + (n-1)d ≤ 0.
    pub fn is_relevant(&self, dims: &Dimensions) -> bool {
        let rho = self.rho_eps(dims, Ratio::zero());
        let shift = Ratio::from_integer(((self.n() as i64) - 1) * dims.d() as i64);
        rho + shift <= Ratio::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(d: u32, sigma: &str) -> Dimensions {
        Dimensions::new(d, parse_decimal(sigma).unwrap()).unwrap()
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_decimal("2").unwrap(), Ratio::from_integer(2));
        assert_eq!(parse_decimal("0.45").unwrap(), Ratio::new(9, 20));
        assert_eq!(parse_decimal("0.4").unwrap(), Ratio::new(2, 5));
        assert_eq!(parse_decimal("-1.25").unwrap(), Ratio::new(-5, 4));
        assert!(parse_decimal("abc").is_err());
    }

    #[test]
    fn dimension_window_enforced() {
        assert!(Dimensions::new(5, Ratio::from_integer(2)).is_ok());
        // σ = d/2 boundary admitted, σ > d/2 rejected, σ ≤ d/3 rejected
        assert!(Dimensions::new(4, Ratio::from_integer(2)).is_ok());
        assert!(Dimensions::new(3, Ratio::from_integer(2)).is_err());
        assert!(Dimensions::new(3, Ratio::from_integer(1)).is_err());
        assert!(Dimensions::new(0, Ratio::from_integer(1)).is_err());
        assert!(Dimensions::new(7, Ratio::from_integer(3)).is_err());
    }

    #[test]
    fn rho_examples_d5() {
        let d5 = dims(5, "2");
        // boundary-relevant ϱ(1,3) = 0; ϱ(2,1) = 0; ϱ(2,2) = 1/2
        assert_eq!(d5.rho(1, 3, 0), Ratio::zero());
        assert_eq!(d5.rho(2, 1, 0), Ratio::zero());
        assert_eq!(d5.rho(2, 2, 0), Ratio::new(1, 2));
        // noise slot: ϱ(0,0) = -d/2
        assert_eq!(d5.rho(0, 0, 0), Ratio::new(-5, 2));
    }

    #[test]
    fn i_sharp_examples() {
        assert_eq!(dims(5, "2").i_sharp(), 2);
        assert_eq!(dims(1, "0.5").i_sharp(), 1);
        // exact rational arithmetic: 0.4/0.2 = 2 exactly
        assert_eq!(dims(1, "0.4").i_sharp(), 2);
        assert_eq!(dims(1, "0.45").i_sharp(), 1);
    }

    #[test]
    fn epsilon_diamond_d5_exact() {
        let d5 = dims(5, "2");
        assert_eq!(d5.i_diamond(), 2);
        assert_eq!(d5.rho_diamond(), Ratio::new(1, 2));
        // min(5/6, 1/9, (1/2)/19, 2) = 1/38
        assert_eq!(d5.epsilon_diamond(), Ratio::new(1, 38));
        // default ε = ε_⋄/6 lies strictly inside (0, ε_⋄/3)
        assert_eq!(d5.epsilon(), Ratio::new(1, 228));
        assert!(d5.epsilon() > Ratio::zero() && d5.epsilon() < d5.epsilon_diamond() / 3);
    }

    #[test]
    fn epsilon_diamond_positive_for_valid_dims() {
        for (d, s) in [(1, "0.45"), (1, "0.4"), (2, "0.8"), (3, "1.2"), (5, "2"), (6, "2.5")] {
            let dm = dims(d, s);
            assert!(dm.epsilon_diamond() > Ratio::zero(), "d={d} sigma={s}");
        }
    }

    #[test]
    fn rho_eps_preserves_positivity_below_epsilon_diamond() {
        // For ε ∈ (0, ε_⋄) and (i,m,l), l ≥ 1, with ϱ(i,m)+l > 0, also
        // ϱ_ε(i,m)+l > 0. The l = 0 instances can fail right below ε_⋄ when
        // dim(λ) is not an integer (e.g. d=1, σ=0.45, (i,m)=(2,0) where
        // ϱ = 1/5 but ϱ_ε = 1/5 - 13ε), so they are only checked at the
        // default ε = ε_⋄/6 used throughout the crate.
        for (d, s) in [(5, "2"), (1, "0.45"), (3, "1.2")] {
            let dm = dims(d, s);
            let near_diamond = dm.epsilon_diamond() * Ratio::new(99, 100);
            for i in 0..=6u32 {
                for m in 0..=(3 * i) {
                    for l in 1..=10i64 {
                        let base = dm.rho(i, m, 0) + Ratio::from_integer(l);
                        if base > Ratio::zero() {
                            let shifted =
                                dm.rho_eps(i, m, 0, near_diamond) + Ratio::from_integer(l);
                            assert!(
                                shifted > Ratio::zero(),
                                "d={d} sigma={s} (i,m,l)=({i},{m},{l})"
                            );
                        }
                    }
                    // l = 0 at the working ε
                    if dm.rho(i, m, 0) > Ratio::zero() {
                        assert!(
                            dm.rho_eps(i, m, 0, dm.epsilon()) > Ratio::zero(),
                            "d={d} sigma={s} (i,m)=({i},{m}) at default eps"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rho_eps_l0_gap_at_epsilon_diamond() {
        // documents the boundary behaviour: at d=1, σ=0.45 the irrelevant
        // coefficient (2,0) loses positivity for ε slightly below ε_⋄
        let dm = dims(1, "0.45");
        assert_eq!(dm.rho(2, 0, 0), Ratio::new(1, 5));
        let near = dm.epsilon_diamond() * Ratio::new(99, 100);
        assert!(dm.rho_eps(2, 0, 0, near) < Ratio::zero());
        assert!(dm.rho_eps(2, 0, 0, dm.epsilon()) > Ratio::zero());
    }

    #[test]
    fn rho_eps_strictly_below_rho() {
        // ϱ_ε(i,m) < ϱ(i,m) for ε > 0, m ≤ 3i (enumerated i ≤ 6).
        let dm = dims(5, "2");
        let eps = dm.epsilon();
        for i in 0..=6u32 {
            for m in 0..=(3 * i) {
                assert!(dm.rho_eps(i, m, 0, eps) < dm.rho(i, m, 0), "(i,m)=({i},{m})");
            }
        }
    }

    #[test]
    fn rho_monotone_in_i_and_m() {
        let dm = dims(5, "2");
        let eps = dm.epsilon();
        for i in 0..6u32 {
            for m in 0..18u32 {
                assert!(dm.rho_eps(i + 1, m, 0, eps) > dm.rho_eps(i, m, 0, eps));
                assert!(dm.rho_eps(i, m + 1, 0, eps) > dm.rho_eps(i, m, 0, eps));
            }
        }
    }

    #[test]
    fn classify_d5_sigma2_golden() {
        let dm = dims(5, "2");
        let c = classify(&dm, 2).unwrap();
        let pairs: Vec<(u32, u32)> = c.relevant.iter().map(|e| (e.i, e.m)).collect();
        assert_eq!(pairs, vec![(0, 0), (1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1)]);
        let noise: Vec<(u32, u32, u32)> =
            c.enhanced_noise.iter().map(|e| (e.i, e.m, e.a_abs)).collect();
        assert_eq!(
            noise,
            vec![
                (0, 0, 0),
                (1, 0, 0),
                (1, 1, 0),
                (1, 2, 0),
                (1, 3, 0),
                (2, 0, 0),
                (2, 1, 0)
            ]
        );
        assert_eq!(c.i_sharp, 2);
        assert_eq!(c.i_diamond, 2);
        assert_eq!(c.epsilon_diamond, Ratio::new(1, 38));
    }

    #[test]
    fn classify_stable_under_imax_increase() {
        let dm = dims(5, "2");
        let c2 = classify(&dm, 2).unwrap();
        let c6 = classify(&dm, 6).unwrap();
        assert_eq!(c2.relevant, c6.relevant);
        assert_eq!(c2.enhanced_noise, c6.enhanced_noise);
    }

    #[test]
    fn classify_includes_weighted_entries_when_admissible() {
        // d=4, σ=1.38: ϱ(2,1) = 5σ-2d = -1.1, so |a| = 1 is admissible on a
        // genuinely non-Dirac order-2 coefficient.
        let dm = dims(4, "1.38");
        let c = classify(&dm, dm.i_diamond().max(2)).unwrap();
        assert!(c
            .enhanced_noise
            .iter()
            .any(|e| e.i == 2 && e.m == 1 && e.a_abs == 1));
        // but never on the Dirac-diagonal order-1 coefficients
        assert!(!c.enhanced_noise.iter().any(|e| e.i <= 1 && e.a_abs > 0));
    }

    #[test]
    fn always_relevant_noise_slot() {
        for (d, s) in [(1, "0.45"), (2, "0.8"), (5, "2")] {
            let dm = dims(d, s);
            let c = classify(&dm, dm.i_diamond()).unwrap();
            assert_eq!((c.relevant[0].i, c.relevant[0].m), (0, 0));
        }
    }

    #[test]
    fn index_list_sums_and_relevance() {
        let dm = dims(5, "2");
        // two copies of (0,0,0,0,0): ϱ(𝙸) + (2-1)·5 = -5+5 = 0 → relevant
        let pair = IndexList::new(vec![
            IndexEntry { index: CoeffIndex::unweighted(0, 0), s: 0, r: 0 },
            IndexEntry { index: CoeffIndex::unweighted(0, 0), s: 0, r: 0 },
        ])
        .unwrap();
        assert_eq!(pair.n(), 2);
        assert_eq!(pair.rho_eps(&dm, Ratio::zero()), Ratio::from_integer(-5));
        assert!(pair.is_relevant(&dm));

        // singleton reduces to ϱ(i,m)+|a|
        let single = IndexList::new(vec![IndexEntry {
            index: CoeffIndex::unweighted(1, 2),
            s: 0,
            r: 0,
        }])
        .unwrap();
        assert_eq!(single.rho_eps(&dm, Ratio::zero()), dm.rho(1, 2, 0));

        // ((1,0),(1,0)): -3/2 -3/2 + 5 = 2 > 0 → irrelevant
        let two = IndexList::new(vec![
            IndexEntry { index: CoeffIndex::unweighted(1, 0), s: 0, r: 0 },
            IndexEntry { index: CoeffIndex::unweighted(1, 0), s: 0, r: 0 },
        ])
        .unwrap();
        assert!(!two.is_relevant(&dm));

        // s/r validation
        assert!(IndexList::new(vec![IndexEntry {
            index: CoeffIndex::unweighted(0, 0),
            s: 2,
            r: 0
        }])
        .is_err());
    }

    #[test]
    fn vanishing_predicate() {
        assert!(CoeffIndex::unweighted(0, 1).vanishes());
        assert!(!CoeffIndex::unweighted(0, 0).vanishes());
        assert!(!CoeffIndex::unweighted(1, 3).vanishes());
        assert!(CoeffIndex::unweighted(1, 4).vanishes());
        assert!(!CoeffIndex::unweighted(2, 5).vanishes());
        assert!(CoeffIndex::unweighted(2, 6).vanishes());
        // weighted order-1 coefficients vanish
        let weighted = CoeffIndex { i: 1, m: 2, a: vec![vec![1], vec![]] };
        assert!(weighted.vanishes());
        let weighted2 = CoeffIndex { i: 2, m: 1, a: vec![vec![1]] };
        assert!(!weighted2.vanishes());
    }

    #[test]
    fn classify_requires_imax_at_least_i_diamond() {
        let dm = dims(5, "2");
        assert!(classify(&dm, 1).is_err());
    }
}
