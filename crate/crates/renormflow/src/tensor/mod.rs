//! Coefficient kernels F(x; y₁…y_m) on the grid.
//!
//! Two representations share the same operation set:
//!
//! * [`DenseTensor`] stores all N^{d(1+m)} values — the simple, obviously
//!   correct engine used for tests, oracles and the polynomially weighted
//!   flow at small N;
//! * [`ClusterTensor`] stores a sum of product structures
//!   `T(x, v₁…v_t) × Dirac pins` (weight arrays over the root and up to two
//!   anchored auxiliary vertices) — the exact representation in which the
//!   flow hierarchy closes at low order, with no h^{-dm} spike storage.
//!
//! Every cluster operation is cross-checked against its densified image in
//! the test suites. The Taylor reconstruction maps 𝐋^m, 𝐙_τ, 𝐈, 𝐗^a_l live
//! in [`taylor`].

pub mod cluster;
pub mod dense;
pub mod taylor;

pub use cluster::{ClusterTensor, Profile};
pub use dense::DenseTensor;

use crate::error::{Error, Result};

/// A multi-index in ℕ₀^d, stored per coordinate (missing entries are zero).
pub type MultiIndex = Vec<u32>;

pub fn multi_abs(a: &[u32]) -> u32 {
    a.iter().sum()
}

pub fn multi_factorial(a: &[u32]) -> f64 {
    a.iter().map(|&o| factorial(o)).product()
}

pub fn factorial(n: u32) -> f64 {
    (1..=n as u64).map(|v| v as f64).product()
}

/// Multi-binomial C(a+b, a) = Π_j C(a_j+b_j, a_j).
pub fn multi_binomial(a: &[u32], b: &[u32]) -> f64 {
    let len = a.len().max(b.len());
    let mut out = 1.0;
    for j in 0..len {
        let aj = a.get(j).copied().unwrap_or(0);
        let bj = b.get(j).copied().unwrap_or(0);
        out *= factorial(aj + bj) / (factorial(aj) * factorial(bj));
    }
    out
}

/// All multi-indices in ℕ₀^d with |b| = degree.
pub fn multi_indices_of_degree(d: usize, degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    fn rec(d: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if pos == d - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(d, pos + 1, left - v, cur, out);
        }
    }
    rec(d, 0, degree, &mut cur, &mut out);
    out
}

/// All slot lists b = (b₁…b_m) ∈ (ℕ₀^d)^m with |b| = degree.
pub fn slot_lists_of_degree(d: usize, m: usize, degree: u32) -> Vec<Vec<MultiIndex>> {
    if m == 0 {
        return if degree == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first_deg in 0..=degree {
        for first in multi_indices_of_degree(d, first_deg) {
            for rest in slot_lists_of_degree(d, m - 1, degree - first_deg) {
                let mut list = Vec::with_capacity(m);
                list.push(first.clone());
                list.extend(rest);
                out.push(list);
            }
        }
    }
    out
}

pub(crate) fn check_same_grid(
    a: crate::grid::TorusGrid,
    b: crate::grid::TorusGrid,
) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch);
    }
    Ok(())
}
