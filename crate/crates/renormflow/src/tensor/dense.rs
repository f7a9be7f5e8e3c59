//! Dense grid representation of coefficient kernels V(x; y₁…y_m).
//!
//! Axis 0 is the distinguished x argument; axes 1..=m are the y slots, each
//! ranging over all N^d lattice sites (row-major, axis 0 slowest). Dense
//! storage scales like N^{d(1+m)} and is meant for m ≤ 3 at production sizes;
//! larger m is admitted only under the global site guard for small-N oracle
//! work (the polynomially weighted flow).

use crate::error::{Error, Result};
use crate::grid::{self, Field, TorusGrid};
use crate::kernels::PeriodizedKernel;
use crate::tensor::{check_same_grid, factorial, multi_factorial, MultiIndex};
use num_complex::Complex64;
use rand::Rng;

/// Hard cap on dense storage: size^{1+m} ≤ 2^24 values.
const MAX_DENSE: usize = 1 << 24;

#[derive(Clone, Debug)]
pub struct DenseTensor {
    grid: TorusGrid,
    m: usize,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(grid: TorusGrid, m: usize) -> Result<Self> {
        let size = grid.len();
        let total = size.checked_pow(1 + m as u32).filter(|&t| t <= MAX_DENSE);
        match total {
            Some(t) => Ok(Self { grid, m, values: vec![0.0; t] }),
            None => Err(Error::InvalidGrid(format!(
                "dense tensor with m = {m} on {} sites exceeds the {MAX_DENSE}-value cap",
                size
            ))),
        }
    }

    pub fn from_values(grid: TorusGrid, m: usize, values: Vec<f64>) -> Result<Self> {
        let expect = grid.len().pow(1 + m as u32);
        if values.len() != expect {
            return Err(Error::InvalidGrid(format!(
                "dense tensor length {} != {}",
                values.len(),
                expect
            )));
        }
        Ok(Self { grid, m, values })
    }

    /// Builds from a function of (x, y₁…y_m) lattice indices.
    pub fn from_fn(
        grid: TorusGrid,
        m: usize,
        mut f: impl FnMut(usize, &[usize]) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(grid, m)?;
        let size = grid.len();
        let mut slots = vec![0usize; m];
        for (lin, v) in t.values.iter_mut().enumerate() {
            let mut rest = lin;
            for j in (0..m).rev() {
                slots[j] = rest % size;
                rest /= size;
            }
            *v = f(rest, &slots);
        }
        Ok(t)
    }

    /// Random tensor with iid uniform entries in [-1, 1].
    pub fn random(grid: TorusGrid, m: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut t = Self::zeros(grid, m)?;
        for v in &mut t.values {
            *v = rng.gen_range(-1.0..1.0);
        }
        Ok(t)
    }

    /// Random tensor concentrated near the diagonal and band-limited to
    /// |k| ≤ band in every y-slot axis: a randomly modulated Gaussian bump
    /// of width `width` per displacement, projected onto the slot band.
    /// The x-axis keeps its natural (m-fold wider) spectrum, which stays
    /// well inside the Nyquist range. Width √(π/band) balances the spatial
    /// edge at |u| = π against the slot-band truncation.
    pub fn random_band_limited(
        grid: TorusGrid,
        m: usize,
        band: usize,
        width: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if grid.d() != 1 {
            return Err(Error::Unsupported("band-limited generator is d=1 only".into()));
        }
        let amp: Vec<(f64, f64)> =
            (0..=3).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut t = Self::from_fn(grid, m, |x, ys| {
            let xx = x as f64 * grid.h();
            let mut a = 1.5;
            for (k, (c, s)) in amp.iter().enumerate() {
                a += c * (k as f64 * xx).cos() + s * (k as f64 * xx).sin();
            }
            let mut bump = 1.0;
            for &y in ys {
                let u = TorusGrid::min_image((y as f64 - x as f64) * grid.h());
                bump *= (-0.5 * (u / width).powi(2)).exp();
            }
            a * bump
        })?;
        for axis in 1..=m {
            t.project_band_axis(axis, band);
        }
        Ok(t)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn size(&self) -> usize {
        self.grid.len()
    }

    fn axis_stride(&self, axis: usize) -> usize {
        self.size().pow((self.m - axis) as u32)
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, c: f64, other: &DenseTensor) {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.m, other.m);
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += c * w;
        }
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// ‖V‖_{𝒱^m} = sup_x h^{dm} Σ_y |V(x; y)|.
    pub fn vm_norm(&self) -> f64 {
        let block = self.size().pow(self.m as u32);
        let hm = self.grid.cell_volume().powi(self.m as i32);
        self.values
            .chunks_exact(block)
            .map(|c| hm * c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
    }

    /// 𝐈V(x) = h^{dm} Σ_y V(x; y).
    pub fn integrate(&self) -> Field {
        let block = self.size().pow(self.m as u32);
        let hm = self.grid.cell_volume().powi(self.m as i32);
        let values = self
            .values
            .chunks_exact(block)
            .map(|c| hm * c.iter().sum::<f64>())
            .collect();
        Field::from_values(self.grid, values).expect("finite")
    }

    /// Applies a permutation of the y slots: out(x; y_{π(1)}…y_{π(m)}) = V(x; y₁…).
    pub fn permute_slots(&self, perm: &[usize]) -> DenseTensor {
        assert_eq!(perm.len(), self.m);
        let size = self.size();
        let mut out = self.clone();
        if self.m <= 1 {
            return out;
        }
        let mut slots = vec![0usize; self.m];
        let block = size.pow(self.m as u32);
        for x in 0..size {
            let base = x * block;
            for lin in 0..block {
                let mut rest = lin;
                for j in (0..self.m).rev() {
                    slots[j] = rest % size;
                    rest /= size;
                }
                // destination index: slot j takes the value of slot perm[j]
                let mut dst = 0usize;
                for j in 0..self.m {
                    dst = dst * size + slots[perm[j]];
                }
                out.values[base + dst] = self.values[base + lin];
            }
        }
        out
    }

    /// Average over all m! slot permutations.
    pub fn symmetrize(&self) -> DenseTensor {
        if self.m <= 1 {
            return self.clone();
        }
        let perms = permutations(self.m);
        let mut out = Self::zeros(self.grid, self.m).unwrap();
        let w = 1.0 / perms.len() as f64;
        for p in &perms {
            out.axpy(w, &self.permute_slots(p));
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let perms = permutations(self.m);
        perms.iter().all(|p| self.permute_slots(p).max_abs_diff(self) <= tol)
    }

    /// V(x; y+x) = V(0; y) up to tol.
    pub fn is_translation_covariant(&self, tol: f64) -> bool {
        let size = self.size();
        let block = size.pow(self.m as u32);
        let mut slots = vec![0usize; self.m];
        for x in 0..size {
            for lin in 0..block {
                let mut rest = lin;
                for j in (0..self.m).rev() {
                    slots[j] = rest % size;
                    rest /= size;
                }
                let mut shifted = 0usize;
                for &s in &slots {
                    // y + x per slot
                    let t = self.grid.sub_sites(s, self.grid.sub_sites(0, x));
                    shifted = shifted * size + t;
                }
                if (self.values[x * block + shifted] - self.values[lin]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Multiplies by 𝒳^{m,a}(x; y) = Π_p (x-y_p)^{a_p}/a_p! with the
    /// minimal-image displacement in (-π, π]^d.
    pub fn weight_x(&self, a: &[MultiIndex]) -> Result<DenseTensor> {
        if a.len() != self.m {
            return Err(Error::Domain(format!(
                "weight list has {} entries for m = {}",
                a.len(),
                self.m
            )));
        }
        let size = self.size();
        let d = self.grid.d();
        let mut out = self.clone();
        let norm: f64 = a.iter().map(|mi| multi_factorial(mi)).product();
        let mut xi = [0.0f64; 3];
        let mut yi = [0.0f64; 3];
        let block = size.pow(self.m as u32);
        let mut slots = vec![0usize; self.m];
        for x in 0..size {
            self.grid.position(x, &mut xi);
            for lin in 0..block {
                let mut rest = lin;
                for j in (0..self.m).rev() {
                    slots[j] = rest % size;
                    rest /= size;
                }
                let mut w = 1.0;
                for (p, &slot) in slots.iter().enumerate() {
                    self.grid.position(slot, &mut yi);
                    for c in 0..d {
                        let ord = a[p].get(c).copied().unwrap_or(0);
                        if ord > 0 {
                            let u = TorusGrid::min_image(xi[c] - yi[c]);
                            w *= u.powi(ord as i32);
                        }
                    }
                }
                out.values[x * block + lin] *= w / norm;
            }
        }
        Ok(out)
    }

    /// Pairing ⟨V, ψ ⊗ φ₁ ⊗ … ⊗ φ_m⟩ with lattice measure h^{d(1+m)}.
    pub fn pair(&self, psi: &Field, phis: &[&Field]) -> Result<f64> {
        check_same_grid(self.grid, psi.grid())?;
        if phis.len() != self.m {
            return Err(Error::Domain("pairing needs one test function per slot".into()));
        }
        let size = self.size();
        let block = size.pow(self.m as u32);
        let mut acc = 0.0;
        let mut slots = vec![0usize; self.m];
        for x in 0..size {
            let mut inner = 0.0;
            for lin in 0..block {
                let mut rest = lin;
                for j in (0..self.m).rev() {
                    slots[j] = rest % size;
                    rest /= size;
                }
                let mut w = self.values[x * block + lin];
                for (p, &s) in slots.iter().enumerate() {
                    w *= phis[p].values()[s];
                }
                inner += w;
            }
            acc += inner * psi.values()[x];
        }
        Ok(acc * self.grid.cell_volume().powi(1 + self.m as i32))
    }

    /// ⟨V(x; ·), φ^{⊗m}⟩ as a field of x: h^{dm} Σ_y V(x;y) Π φ(y_p).
    pub fn apply_powers(&self, phi: &Field) -> Result<Field> {
        check_same_grid(self.grid, phi.grid())?;
        let size = self.size();
        let block = size.pow(self.m as u32);
        let hm = self.grid.cell_volume().powi(self.m as i32);
        let mut out = vec![0.0; size];
        let mut slots = vec![0usize; self.m];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for lin in 0..block {
                let mut rest = lin;
                for j in (0..self.m).rev() {
                    slots[j] = rest % size;
                    rest /= size;
                }
                let mut w = self.values[x * block + lin];
                for &s in &slots {
                    w *= phi.values()[s];
                }
                acc += w;
            }
            *o = acc * hm;
        }
        Field::from_values(self.grid, out)
    }

    /// Convolves one axis (0 = x, 1..=m the slots) with a periodic kernel.
    pub fn convolve_axis(&self, axis: usize, kern: &PeriodizedKernel) -> Result<DenseTensor> {
        check_same_grid(self.grid, kern.grid())?;
        let size = self.size();
        let stride = self.axis_stride(axis);
        let mut out = self.clone();
        let mut col = vec![Complex64::default(); size];
        let scale = 1.0 / size as f64;
        for_each_column(self.values.len(), size, stride, |base| {
            for (t, c) in col.iter_mut().enumerate() {
                *c = Complex64::new(self.values[base + t * stride], 0.0);
            }
            grid::fft_nd(&mut col, 1, size, false);
            for (j, c) in col.iter_mut().enumerate() {
                *c *= kern.multiplier()[j] * scale;
            }
            grid::fft_nd(&mut col, 1, size, true);
            for (t, c) in col.iter().enumerate() {
                out.values[base + t * stride] = c.re;
            }
        });
        Ok(out)
    }

    /// Spectral derivative ∂^{b} along one slot axis (orders per coordinate).
    pub fn derivative_axis(&self, axis: usize, b: &[u32]) -> Result<DenseTensor> {
        let size = self.size();
        let stride = self.axis_stride(axis);
        let mut out = self.clone();
        if b.iter().all(|&o| o == 0) {
            return Ok(out);
        }
        let grid = self.grid;
        let mut table = vec![Complex64::default(); size];
        let mut k = [0i64; 3];
        for (lin, t) in table.iter_mut().enumerate() {
            grid.freq_vec(lin, &mut k);
            let mut f = Complex64::new(1.0, 0.0);
            for (c, &ord) in b.iter().enumerate().take(grid.d()) {
                for _ in 0..ord {
                    f *= Complex64::new(0.0, k[c] as f64);
                }
            }
            *t = f;
        }
        let mut col = vec![Complex64::default(); size];
        let scale = 1.0 / size as f64;
        for_each_column(self.values.len(), size, stride, |base| {
            for (t, c) in col.iter_mut().enumerate() {
                *c = Complex64::new(self.values[base + t * stride], 0.0);
            }
            grid::fft_nd(&mut col, 1, size, false);
            for (j, c) in col.iter_mut().enumerate() {
                *c *= table[j] * scale;
            }
            grid::fft_nd(&mut col, 1, size, true);
            for (t, c) in col.iter().enumerate() {
                out.values[base + t * stride] = c.re;
            }
        });
        Ok(out)
    }

    /// Band projection: zeroes spectral content with |k| > band on one axis.
    pub fn project_band_axis(&mut self, axis: usize, band: usize) {
        let size = self.size();
        let stride = self.axis_stride(axis);
        let grid = self.grid;
        let mut keep = vec![false; size];
        let mut k = [0i64; 3];
        for (lin, kp) in keep.iter_mut().enumerate() {
            grid.freq_vec(lin, &mut k);
            *kp = k[..grid.d()].iter().all(|&v| v.unsigned_abs() as usize <= band);
        }
        let mut col = vec![Complex64::default(); size];
        let scale = 1.0 / size as f64;
        let values = std::mem::take(&mut self.values);
        let mut out = values.clone();
        for_each_column(out.len(), size, stride, |base| {
            for (t, c) in col.iter_mut().enumerate() {
                *c = Complex64::new(values[base + t * stride], 0.0);
            }
            grid::fft_nd(&mut col, 1, size, false);
            for (j, c) in col.iter_mut().enumerate() {
                *c *= if keep[j] { scale } else { 0.0 };
            }
            grid::fft_nd(&mut col, 1, size, true);
            for (t, c) in col.iter().enumerate() {
                out[base + t * stride] = c.re;
            }
        });
        self.values = out;
    }

    /// Mollifies every axis with the same kernel: K^{⊗(1+m)} ∗ V.
    pub fn mollify_all(&self, kern: &PeriodizedKernel) -> Result<DenseTensor> {
        let mut out = self.clone();
        for axis in 0..=self.m {
            out = out.convolve_axis(axis, kern)?;
        }
        Ok(out)
    }

    /// The contraction 𝐁(G, W, U)(x; y₁…y_m) =
    /// ∫ W(x; y₀, y₁…y_k) G(y₀-z) U(z; y_{k+1}…y_m) dy₀ dz,
    /// with m = k + m_U; bilinear in (W, U).
    pub fn contract_b(
        g: &PeriodizedKernel,
        w: &DenseTensor,
        u: &DenseTensor,
        k: usize,
    ) -> Result<DenseTensor> {
        check_same_grid(w.grid, u.grid)?;
        check_same_grid(w.grid, g.grid())?;
        if w.m != k + 1 {
            return Err(Error::Domain(format!("W has {} slots, expected 1+k = {}", w.m, k + 1)));
        }
        let m = k + u.m;
        if m > 3 {
            return Err(Error::Domain(format!(
                "contraction result has m = {m} > 3 arguments"
            )));
        }
        Self::contract_b_any(g, w, u, k)
    }

    /// Contraction without the public m ≤ 3 cap (the weighted flow carries
    /// Dirac-structured coefficients up to m = 5 at small N).
    pub(crate) fn contract_b_any(
        g: &PeriodizedKernel,
        w: &DenseTensor,
        u: &DenseTensor,
        k: usize,
    ) -> Result<DenseTensor> {
        check_same_grid(w.grid, u.grid)?;
        check_same_grid(w.grid, g.grid())?;
        if w.m != k + 1 {
            return Err(Error::Domain(format!("W has {} slots, expected 1+k = {}", w.m, k + 1)));
        }
        let m = k + u.m;
        let size = w.size();
        // CU(y₀; z-slots) = h^d Σ_z G(y₀-z) U(z; ·): convolve U's root axis
        let cu = u.convolve_axis(0, g)?;
        // result(x; y₁…y_k, u-slots) = h^d Σ_{y₀} W(x; y₀, y-rest) CU(y₀; ·)
        let mut out = DenseTensor::zeros(w.grid, m)?;
        let wrest = size.pow(k as u32);
        let ublock = size.pow(u.m as u32);
        let h_d = w.grid.cell_volume();
        for x in 0..size {
            for y0 in 0..size {
                let wbase = (x * size + y0) * wrest;
                let cubase = y0 * ublock;
                for yr in 0..wrest {
                    let wv = w.values[wbase + yr] * h_d;
                    if wv == 0.0 {
                        continue;
                    }
                    let obase = (x * wrest + yr) * ublock;
                    for uz in 0..ublock {
                        out.values[obase + uz] += wv * cu.values[cubase + uz];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Iterates bases of columns along an axis with the given stride.
pub(crate) fn for_each_column(
    total: usize,
    size: usize,
    stride: usize,
    mut f: impl FnMut(usize),
) {
    let block = stride * size;
    for outer in 0..total / block {
        for inner in 0..stride {
            f(outer * block + inner);
        }
    }
}

/// All permutations of 0..m (m ≤ 5).
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    fn heap(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, cur, out);
            if k % 2 == 0 {
                cur.swap(i, k - 1);
            } else {
                cur.swap(0, k - 1);
            }
        }
    }
    heap(m, &mut cur, &mut out);
    if m == 0 {
        return vec![vec![]];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_white_noise;
    use crate::kernels::KernelFactory;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn grid1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn vm_norm_m0_is_sup_norm() {
        let grid = grid1(16);
        let f = sample_white_noise(grid, 1);
        let t = DenseTensor::from_values(grid, 0, f.values().to_vec()).unwrap();
        assert_eq!(t.vm_norm(), f.linf());
    }

    #[test]
    fn vm_norm_conv_kernel_matches_l1() {
        // V(x;y) = 𝐓G(x-y) → vm_norm = h Σ |𝐓G| (d=1)
        let grid = grid1(32);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let gk = fac.fluctuation(0.25, 0.5).unwrap();
        let vals = gk.smooth_values().to_vec();
        let t = DenseTensor::from_fn(grid, 1, |x, ys| vals[grid.sub_sites(x, ys[0])]).unwrap();
        let expect = gk.l1_norm();
        assert!((t.vm_norm() - expect).abs() < 1e-12 * expect);
        assert!(t.is_translation_covariant(1e-12));

        // 𝐈V = Ĝ(0) · 1 for V(x;y) = 𝐓G(x-y) with the uncut kernel
        let g = fac.green().unwrap();
        let gv = g.smooth_values().to_vec();
        let tg = DenseTensor::from_fn(grid, 1, |x, ys| gv[grid.sub_sites(x, ys[0])]).unwrap();
        let integrated = tg.integrate();
        for v in integrated.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetrize_idempotent_and_product_rule() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(3);
        let v = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let s = v.symmetrize();
        assert!(s.is_symmetric(1e-15));
        assert!(s.symmetrize().max_abs_diff(&s) < 1e-15);

        // m=2 product: A⊗B → (A⊗B + B⊗A)/2
        let a = sample_white_noise(grid, 5);
        let b = sample_white_noise(grid, 6);
        let prod = DenseTensor::from_fn(grid, 2, |_x, ys| {
            a.values()[ys[0]] * b.values()[ys[1]]
        })
        .unwrap();
        let sym = prod.symmetrize();
        let expect = DenseTensor::from_fn(grid, 2, |_x, ys| {
            0.5 * (a.values()[ys[0]] * b.values()[ys[1]] + a.values()[ys[1]] * b.values()[ys[0]])
        })
        .unwrap();
        assert!(sym.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn symmetrize_does_not_increase_vm_norm() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..100 {
            let m = 1 + (trial % 3);
            let v = DenseTensor::random(grid, m, &mut rng).unwrap();
            assert!(v.symmetrize().vm_norm() <= v.vm_norm() * (1.0 + 1e-12), "trial {trial}");
        }
    }

    #[test]
    fn permutation_preserves_vm_norm() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(11);
        let v = DenseTensor::random(grid, 3, &mut rng).unwrap();
        for p in permutations(3) {
            assert!((v.permute_slots(&p).vm_norm() - v.vm_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn contract_b_delta_collapse() {
        // G = δ, W(x;y₀) = δ(x-y₀), U = u(z): result(x) = u(x)
        let grid = grid1(16);
        let h = grid.cell_volume();
        let u = sample_white_noise(grid, 9);
        let udt = DenseTensor::from_values(grid, 0, u.values().to_vec()).unwrap();
        let w = DenseTensor::from_fn(grid, 1, |x, ys| {
            if x == ys[0] {
                1.0 / h
            } else {
                0.0
            }
        })
        .unwrap();
        let delta = PeriodizedKernel::delta(grid, 1.0);
        let out = DenseTensor::contract_b(&delta, &w, &udt, 0).unwrap();
        let diff: f64 = out
            .values()
            .iter()
            .zip(u.values())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(diff < 1e-12 * u.linf());
    }

    #[test]
    fn contract_b_bilinear() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(21);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let g = fac.fluctuation(0.3, 0.7).unwrap();
        let w1 = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let w2 = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let u = DenseTensor::random(grid, 1, &mut rng).unwrap();
        let mut wsum = w1.clone();
        wsum.axpy(1.0, &w2);
        let lhs = DenseTensor::contract_b(&g, &wsum, &u, 1).unwrap();
        let mut rhs = DenseTensor::contract_b(&g, &w1, &u, 1).unwrap();
        rhs.axpy(1.0, &DenseTensor::contract_b(&g, &w2, &u, 1).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-12 * lhs.max_abs());
    }

    #[test]
    fn contract_b_norm_bound() {
        // ‖𝐁(G,W,U)‖ ≤ ‖G‖_𝒦 ‖W‖ ‖U‖ on random draws
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(33);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        for trial in 0..200 {
            let k = trial % 2;
            let mu = u32::from(trial % 3 == 0);
            let g = fac.fluctuation(0.2 + 0.1 * (trial % 3) as f64, 0.5 + 0.1 * mu as f64).unwrap();
            let w = DenseTensor::random(grid, 1 + k, &mut rng).unwrap();
            let u = DenseTensor::random(grid, 1, &mut rng).unwrap();
            let b = DenseTensor::contract_b(&g, &w, &u, k).unwrap();
            let bound = g.l1_norm() * w.vm_norm() * u.vm_norm();
            assert!(
                b.vm_norm() <= bound * (1.0 + 1e-12),
                "trial {trial}: {} vs {bound}",
                b.vm_norm()
            );
        }
    }

    #[test]
    fn contract_b_guards() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(1);
        let g = PeriodizedKernel::delta(grid, 1.0);
        let w = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let u = DenseTensor::random(grid, 3, &mut rng).unwrap();
        // result m = 1 + 3 > 3 rejected
        assert!(DenseTensor::contract_b(&g, &w, &u, 1).is_err());
        // grid mismatch rejected
        let u2 = DenseTensor::zeros(grid1(16), 0).unwrap();
        assert!(DenseTensor::contract_b(&g, &w, &u2, 1).is_err());
    }

    #[test]
    fn weight_x_identities() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(5);
        let v = DenseTensor::random(grid, 2, &mut rng).unwrap();
        // a = 0 is the identity
        let w0 = v.weight_x(&[vec![], vec![]]).unwrap();
        assert_eq!(w0.max_abs_diff(&v), 0.0);
        // weights kill the diagonal
        let w1 = v.weight_x(&[vec![1], vec![]]).unwrap();
        let size = grid.len();
        for x in 0..size {
            for y2 in 0..size {
                let idx = (x * size + x) * size + y2;
                assert_eq!(w1.values()[idx], 0.0);
            }
        }
    }

    #[test]
    fn mollification_commutes_with_integration() {
        // Lemma: 𝐈(K^{*g,⊗(1+m)} ∗ V) = K^{*g} ∗ 𝐈V
        let grid = grid1(16);
        let mut rng = StdRng::seed_from_u64(13);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let k = fac.k_pow(0.3, 2).unwrap();
        let v = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let lhs = v.mollify_all(&k).unwrap().integrate();
        let rhs = k.convolve(&v.integrate()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10 * rhs.linf().max(1.0));
    }

    #[test]
    fn mollification_commutes_with_contraction() {
        // K^{*g,⊗(1+m)} ∗ 𝐁(G,W,U) = 𝐁(𝐏^{2g}_μ G, K∗W, K∗U)
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(17);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let gk = fac.fluctuation(0.25, 0.6).unwrap();
        let mu = 0.4;
        let gpow = 1u32;
        let k = fac.k_pow(mu, gpow).unwrap();
        let w = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let u = DenseTensor::random(grid, 1, &mut rng).unwrap();

        let lhs = DenseTensor::contract_b(&gk, &w, &u, 1)
            .unwrap()
            .mollify_all(&k)
            .unwrap();
        let pg = gk.apply_symbol(fac.p_mu_symbol(mu, 2 * gpow)).unwrap();
        let rhs = DenseTensor::contract_b(
            &pg,
            &w.mollify_all(&k).unwrap(),
            &u.mollify_all(&k).unwrap(),
            1,
        )
        .unwrap();
        assert!(
            lhs.max_abs_diff(&rhs) < 1e-9 * lhs.max_abs().max(1.0),
            "diff {}",
            lhs.max_abs_diff(&rhs)
        );
    }

    #[test]
    fn poly_binom_splitting_exact() {
        // Per-slot trinomial identity behind the weighted flow equation:
        // (x-y_p)^{a_p}/a_p! = Σ_{b+c+d=a_p} (x-y₀)^b/b! (y₀-z)^c/c! (z-y_p)^d/d!
        // (since (x-y_p) = (x-y₀)+(y₀-z)+(z-y_p)), together with the
        // regrouping of the y₀ powers into 𝒳^{1+k,b}: Π_p (x-y₀)^{b_p}/b_p!
        // = (x-y₀)^{b₀}/b₀! · b₀!/Π b_p!, b₀ = Σ b_p. Points are drawn within
        // a half period so minimal-image displacements do not wrap.
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-0.7..0.7);
            let y0: f64 = rng.gen_range(-0.7..0.7);
            let z: f64 = rng.gen_range(-0.7..0.7);
            let ys: [f64; 2] = [rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)];
            for (a1, a2) in [(1u32, 1u32), (2, 0), (2, 1)] {
                let lhs = TorusGrid::min_image(x - ys[0]).powi(a1 as i32) / factorial(a1)
                    * TorusGrid::min_image(x - ys[1]).powi(a2 as i32) / factorial(a2);
                let mut rhs = 0.0;
                for b1 in 0..=a1 {
                    for c1 in 0..=(a1 - b1) {
                        let d1 = a1 - b1 - c1;
                        for b2 in 0..=a2 {
                            for c2 in 0..=(a2 - b2) {
                                let d2 = a2 - b2 - c2;
                                let slot = |b: u32, c: u32, d: u32, y: f64| {
                                    (x - y0).powi(b as i32) / factorial(b)
                                        * (y0 - z).powi(c as i32) / factorial(c)
                                        * (z - y).powi(d as i32) / factorial(d)
                                };
                                rhs += slot(b1, c1, d1, ys[0]) * slot(b2, c2, d2, ys[1]);
                            }
                        }
                    }
                }
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                    "a=({a1},{a2}): lhs {lhs} rhs {rhs}"
                );
                // regrouping factor for the aggregated y₀ power
                let (b1, b2) = (a1, a2);
                let regroup = (x - y0).powi(b1 as i32) / factorial(b1)
                    * (x - y0).powi(b2 as i32) / factorial(b2);
                let aggregated = (x - y0).powi((b1 + b2) as i32) / factorial(b1 + b2)
                    * (factorial(b1 + b2) / (factorial(b1) * factorial(b2)));
                assert!((regroup - aggregated).abs() <= 1e-12 * (1.0 + regroup.abs()));
            }
        }
    }

    #[test]
    fn apply_powers_matches_pairing() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(19);
        let v = DenseTensor::random(grid, 2, &mut rng).unwrap();
        let phi = sample_white_noise(grid, 3);
        let psi = sample_white_noise(grid, 4);
        let f = v.apply_powers(&phi).unwrap();
        let direct = v.pair(&psi, &[&phi, &phi]).unwrap();
        assert!((f.pair(&psi) - direct).abs() < 1e-10 * direct.abs().max(1.0));
    }
}
