//! Numerical laboratory for the flow-equation renormalization of the
//! singular elliptic SPDE
//!
//! ```text
//! (1 + (-Δ)^{σ/2}) Φ = ξ + λ Φ³ - (λ c⁽¹⁾ + λ² c⁽²⁾ + …) Φ
//! ```
//!
//! on the d-dimensional torus 𝕋^d = [0, 2π)^d, driven by periodized white
//! noise ξ. The crate covers:
//!
//! * spectral torus fields, FFT convolution and white-noise sampling ([`grid`]),
//! * the cutoff Green kernels G_κ, G_{κ,μ}, the fluctuation propagator
//!   G_{κ‖μ} = G_κ - G_{κ,μ} and the regularizing kernels K_μ^{*g} ([`kernels`]),
//! * power counting: scaling dimensions, ϱ_ε, relevance classification and
//!   the enhanced-noise enumeration ([`scaling`]),
//! * coefficient kernels F^{i,m}(x; y₁…y_m) with dense and cluster
//!   (delta-structured) representations, the 𝒱^m norm, the 𝐁 contraction
//!   and the Taylor reconstruction maps 𝐋, 𝐙_τ, 𝐈, 𝐗^a_l ([`tensor`]),
//! * the effective-force flow hierarchy in the scale parameter μ together
//!   with its closed-form low-order oracles ([`flow`]),
//! * counterterms from the renormalization conditions at μ = 1/2, by exact
//!   Gaussian mode sums and by Monte Carlo ([`renorm`]),
//! * mild-equation solvers (Picard and flow series), Besov norms and κ→0
//!   convergence studies ([`solver`]),
//! * joint-cumulant estimation and scaling-exponent fits ([`stats`]).

pub mod error;
pub mod flow;
pub mod grid;
pub mod kernels;
pub mod renorm;
pub mod scaling;
pub mod solver;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
