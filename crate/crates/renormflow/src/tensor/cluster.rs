//! Cluster representation of coefficient kernels.
//!
//! A cluster part encodes, up to overall symmetrization in the y slots,
//!
//! ```text
//! T(x, v₁…v_t) · Π_{p ∈ root pins} δ(x-y_p) · Π_j Π_{p ∈ pins(j)} δ(v_j-y_p)
//! ```
//!
//! where each auxiliary vertex v_j is anchored by exactly one y slot and the
//! weight array T is dense over the 1+t vertex positions only. Every
//! coefficient of the flow hierarchy at order i ≤ 2 is a sum of parts with
//! t ≤ 1 (fields, Dirac diagonals, bilocal chains); order 3 brings t = 2.
//!
//! Tensors are stored implicitly symmetrized: a part stands for the average
//! of its distinct slot assignments. Sums, contractions and norms act on the
//! weight arrays; Dirac pins never materialize as h^{-d} spikes except in
//! [`ClusterTensor::densify`], which exists for cross-checking against the
//! dense engine.

use crate::error::{Error, Result};
use crate::grid::{self, Field, TorusGrid};
use crate::kernels::PeriodizedKernel;
use crate::tensor::dense::{for_each_column, permutations, DenseTensor};
use crate::tensor::{check_same_grid, multi_factorial, MultiIndex};
use num_complex::Complex64;
use std::collections::{BTreeMap, HashSet};

/// Largest weight-array size (size^{1+t} values).
const MAX_ARRAY: usize = 1 << 24;

/// Pin structure of one cluster part: pins at the root and at each anchored
/// auxiliary vertex (canonical: aux sorted ascending, arrays symmetrized
/// over equal-pin aux axes).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Profile {
    pub root_pins: u8,
    pub aux: Vec<u8>,
}

impl Profile {
    pub fn m(&self) -> usize {
        self.root_pins as usize + self.aux.iter().map(|&p| 1 + p as usize).sum::<usize>()
    }

    pub fn t(&self) -> usize {
        self.aux.len()
    }
}

#[derive(Clone, Debug)]
pub struct ClusterTensor {
    grid: TorusGrid,
    m: usize,
    parts: BTreeMap<Profile, Vec<f64>>,
}

impl ClusterTensor {
    pub fn zero(grid: TorusGrid, m: usize) -> Self {
        Self { grid, m, parts: BTreeMap::new() }
    }

    /// m = 0 tensor holding a plain field.
    pub fn from_field(f: &Field) -> Self {
        let mut t = Self::zero(f.grid(), 0);
        t.add_part(Profile { root_pins: 0, aux: vec![] }, f.values().to_vec());
        t
    }

    /// Dirac diagonal w(x)·δ(x-y₁)…δ(x-y_m).
    pub fn diag(weight: &Field, m: usize) -> Self {
        let mut t = Self::zero(weight.grid(), m);
        t.add_part(Profile { root_pins: m as u8, aux: vec![] }, weight.values().to_vec());
        t
    }

    /// Bilocal part: T(x, v) with `root_pins` slots pinned to x and
    /// `aux_pins` extra slots pinned to the anchored vertex v.
    pub fn bilocal(
        grid: TorusGrid,
        root_pins: usize,
        aux_pins: usize,
        array: Vec<f64>,
    ) -> Result<Self> {
        if array.len() != grid.len() * grid.len() {
            return Err(Error::InvalidGrid("bilocal array must have size² values".into()));
        }
        let m = root_pins + 1 + aux_pins;
        let mut t = Self::zero(grid, m);
        t.add_part(
            Profile { root_pins: root_pins as u8, aux: vec![aux_pins as u8] },
            array,
        );
        Ok(t)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn parts(&self) -> impl Iterator<Item = (&Profile, &[f64])> {
        self.parts.iter().map(|(p, v)| (p, v.as_slice()))
    }

    pub fn is_zero(&self) -> bool {
        self.parts.values().all(|arr| arr.iter().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.parts
            .values()
            .flat_map(|arr| arr.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn size(&self) -> usize {
        self.grid.len()
    }

    /// Inserts a part, canonicalizing the profile (aux sorted ascending,
    /// array symmetrized over equal-pin aux axes) and merging duplicates.
    pub fn add_part(&mut self, profile: Profile, array: Vec<f64>) {
        debug_assert_eq!(profile.m(), self.m, "profile slot count mismatch");
        let (profile, array) = canonicalize(self.size(), profile, array);
        match self.parts.get_mut(&profile) {
            Some(existing) => {
                for (e, a) in existing.iter_mut().zip(&array) {
                    *e += a;
                }
            }
            None => {
                self.parts.insert(profile, array);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for arr in self.parts.values_mut() {
            for v in arr.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn axpy(&mut self, c: f64, other: &ClusterTensor) {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.m, other.m);
        for (p, arr) in &other.parts {
            let scaled: Vec<f64> = arr.iter().map(|&v| c * v).collect();
            self.add_part(p.clone(), scaled);
        }
    }

    /// Drops parts whose arrays are uniformly below `tol` in magnitude.
    pub fn prune(&mut self, tol: f64) {
        self.parts.retain(|_, arr| arr.iter().any(|v| v.abs() > tol));
    }

    /// ‖V‖_{𝒱^m}: by mutual singularity of the distinct pin structures the
    /// norm adds over parts; each part contributes sup_x h^{dt} Σ_v |T|.
    pub fn vm_norm(&self) -> f64 {
        let size = self.size();
        let mut per_x = vec![0.0f64; size];
        for (p, arr) in &self.parts {
            let t = p.t();
            let ht = self.grid.cell_volume().powi(t as i32);
            let block = size.pow(t as u32);
            for x in 0..size {
                let sum: f64 = arr[x * block..(x + 1) * block].iter().map(|v| v.abs()).sum();
                per_x[x] += ht * sum;
            }
        }
        per_x.into_iter().fold(0.0, f64::max)
    }

    /// 𝐈V(x): pins integrate to one, anchors to h^d sums over aux axes.
    pub fn integrate(&self) -> Field {
        let size = self.size();
        let mut out = vec![0.0f64; size];
        for (p, arr) in &self.parts {
            let t = p.t();
            let ht = self.grid.cell_volume().powi(t as i32);
            let block = size.pow(t as u32);
            for (x, o) in out.iter_mut().enumerate() {
                let sum: f64 = arr[x * block..(x + 1) * block].iter().sum();
                *o += ht * sum;
            }
        }
        Field::from_values(self.grid, out).expect("finite")
    }

    /// ⟨V(x;·), φ^{⊗m}⟩: root pins give φ(x)^{p₀}, an aux vertex with p pins
    /// gives h^d Σ_v T φ(v)^{1+p}.
    pub fn apply_powers(&self, phi: &Field) -> Result<Field> {
        check_same_grid(self.grid, phi.grid())?;
        let size = self.size();
        let h_d = self.grid.cell_volume();
        let mut out = vec![0.0f64; size];
        for (p, arr) in &self.parts {
            // contract aux axes from the last to the first
            let mut cur = arr.clone();
            let mut axes = 1 + p.t();
            for &pins in p.aux.iter().rev() {
                let block = size.pow((axes - 1) as u32);
                let mut next = vec![0.0f64; block];
                for (outer, nv) in next.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for v in 0..size {
                        acc += cur[outer * size + v]
                            * phi.values()[v].powi(1 + pins as i32);
                    }
                    *nv = acc * h_d;
                }
                cur = next;
                axes -= 1;
            }
            debug_assert_eq!(axes, 1);
            for x in 0..size {
                out[x] += cur[x] * phi.values()[x].powi(p.root_pins as i32);
            }
        }
        Field::from_values(self.grid, out)
    }

    /// Upper-bound proxy for ‖K^{*g,⊗(1+m)} ∗ V‖_{𝒱^m}: each y-slot
    /// mollifier contributes its ℓ¹ mass ∫|𝐓K| (unity for positive
    /// well-resolved kernels), leaving |K| ∗ S with S the aux-ℓ¹ reduction
    /// of |T|. Exact for m = 0 (no absolute values needed); tight for
    /// sign-definite parts and positive kernels, otherwise an upper bound.
    pub fn mollified_vm_norm(&self, kern: &PeriodizedKernel) -> Result<f64> {
        check_same_grid(self.grid, kern.grid())?;
        let size = self.size();
        if self.m == 0 {
            if let Some(arr) = self.parts.get(&Profile { root_pins: 0, aux: vec![] }) {
                let field = Field::from_values(self.grid, arr.clone())?;
                return Ok(kern.convolve(&field)?.linf());
            }
            return Ok(0.0);
        }
        let abs_vals: Vec<f64> = kern.smooth_values().iter().map(|v| v.abs()).collect();
        let abs_kern = PeriodizedKernel::delta_plus(
            kern.delta_mass().abs(),
            1.0,
            &PeriodizedKernel::from_position(self.grid, abs_vals)?,
        );
        let slot_mass = abs_kern.mass();
        let mut total = 0.0;
        for (p, arr) in &self.parts {
            let t = p.t();
            let block = size.pow(t as u32);
            let ht = self.grid.cell_volume().powi(t as i32);
            let s: Vec<f64> = (0..size)
                .map(|x| {
                    ht * arr[x * block..(x + 1) * block]
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
                })
                .collect();
            let field = Field::from_values(self.grid, s)?;
            total += abs_kern.convolve(&field)?.linf() * slot_mass.powi(self.m as i32);
        }
        Ok(total)
    }

    /// Convolves the root axis of every part with a kernel (x-mollification).
    pub fn convolve_root(&self, kern: &PeriodizedKernel) -> Result<ClusterTensor> {
        check_same_grid(self.grid, kern.grid())?;
        let mut out = Self::zero(self.grid, self.m);
        for (p, arr) in &self.parts {
            let conv = conv_axis(arr, 1 + p.t(), 0, self.grid, kern);
            out.add_part(p.clone(), conv);
        }
        Ok(out)
    }

    /// Multiplies an m = 1 tensor by (x-y₁)^a/a! (minimal image). Dirac
    /// parts vanish for a ≠ 0; bilocal parts pick up the bond polynomial.
    pub fn weight_slot_poly(&self, a: &MultiIndex) -> Result<ClusterTensor> {
        if self.m != 1 {
            return Err(Error::Unsupported(
                "polynomial slot weights on cluster tensors are m = 1 only".into(),
            ));
        }
        if a.iter().all(|&o| o == 0) {
            return Ok(self.clone());
        }
        let size = self.size();
        let d = self.grid.d();
        let norm = multi_factorial(a);
        let mut out = Self::zero(self.grid, 1);
        let mut xi = [0.0f64; 3];
        let mut vi = [0.0f64; 3];
        for (p, arr) in &self.parts {
            if p.t() == 0 {
                continue; // (x-y)^a δ(x-y) = 0
            }
            let mut weighted = arr.clone();
            for x in 0..size {
                self.grid.position(x, &mut xi);
                for v in 0..size {
                    self.grid.position(v, &mut vi);
                    let mut w = 1.0;
                    for c in 0..d {
                        let ord = a.get(c).copied().unwrap_or(0);
                        if ord > 0 {
                            w *= TorusGrid::min_image(xi[c] - vi[c]).powi(ord as i32);
                        }
                    }
                    weighted[x * size + v] *= w / norm;
                }
            }
            out.add_part(p.clone(), weighted);
        }
        Ok(out)
    }

    /// Expands into the dense engine (Dirac pins become h^{-d} spikes and
    /// the implicit symmetrization is averaged out). Test-size only.
    pub fn densify(&self) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(self.grid, self.m)?;
        let size = self.size();
        let m = self.m;
        for (p, arr) in &self.parts {
            let t = p.t();
            let assignments = distinct_assignments(p);
            let n_assign = assignments.len() as f64;
            let spike = self
                .grid
                .cell_volume()
                .powi(-((m - t) as i32));
            let block = size.pow(t as u32);
            let mut vidx = vec![0usize; t];
            for x in 0..size {
                for lin in 0..block {
                    let val = arr[x * block + lin];
                    if val == 0.0 {
                        continue;
                    }
                    let mut rest = lin;
                    for j in (0..t).rev() {
                        vidx[j] = rest % size;
                        rest /= size;
                    }
                    for assign in &assignments {
                        // slot p gets x (root) or v_{label}
                        let mut dense_idx = x;
                        for &lab in assign {
                            let y = if lab == ROOT_LABEL {
                                x
                            } else {
                                vidx[lab as usize]
                            };
                            dense_idx = dense_idx * size + y;
                        }
                        out.values_mut()[dense_idx] += val * spike / n_assign;
                    }
                }
            }
        }
        Ok(out)
    }

    /// The contraction Sym 𝐁(G, W, U) for cluster operands:
    /// roles of W's contracted slot are enumerated with their symmetric
    /// multiplicities and U enters through its G-rooted fragments.
    pub fn contract_b(
        g: &PeriodizedKernel,
        w: &ClusterTensor,
        u: &ClusterTensor,
        k: usize,
    ) -> Result<ClusterTensor> {
        check_same_grid(w.grid, u.grid)?;
        check_same_grid(w.grid, g.grid())?;
        if w.m != k + 1 {
            return Err(Error::Domain(format!(
                "W has {} slots, expected 1+k = {}",
                w.m,
                k + 1
            )));
        }
        let m = k + u.m;
        let size = w.size();
        let h_d = w.grid.cell_volume();
        let m_w = w.m as f64;
        let mut out = ClusterTensor::zero(w.grid, m);

        let fragments = g_rooted_fragments(g, u)?;
        for (wp, warr) in &w.parts {
            // role: contracted slot is a root pin
            if wp.root_pins >= 1 {
                let weight = wp.root_pins as f64 / m_w;
                for frag in &fragments {
                    let joined = join_shared_axis(
                        warr,
                        1 + wp.t(),
                        0,
                        &frag.array,
                        1 + frag.aux.len(),
                        size,
                        false,
                        h_d,
                    )?;
                    let mut aux = wp.aux.clone();
                    aux.extend_from_slice(&frag.aux);
                    let profile = Profile { root_pins: wp.root_pins - 1, aux };
                    let mut scaled = joined;
                    for v in &mut scaled {
                        *v *= weight;
                    }
                    out.add_part(profile, scaled);
                }
            }
            // role: contracted slot belongs to aux vertex j (anchor or pin);
            // vertices with equal pins are interchangeable after
            // canonicalization, so process one representative per group.
            let mut seen_pins: Vec<u8> = Vec::new();
            for (j, &pins) in wp.aux.iter().enumerate() {
                if seen_pins.contains(&pins) {
                    continue;
                }
                seen_pins.push(pins);
                let group = wp.aux.iter().filter(|&&q| q == pins).count() as f64;
                let weight = group * (1.0 + pins as f64) / m_w;
                for frag in &fragments {
                    if pins >= 1 {
                        // vertex survives, re-anchored by one of its pins
                        let joined = join_shared_axis(
                            warr,
                            1 + wp.t(),
                            1 + j,
                            &frag.array,
                            1 + frag.aux.len(),
                            size,
                            false,
                            h_d,
                        )?;
                        let mut aux = wp.aux.clone();
                        aux[j] = pins - 1;
                        aux.extend_from_slice(&frag.aux);
                        let profile = Profile { root_pins: wp.root_pins, aux };
                        let mut scaled = joined;
                        for v in &mut scaled {
                            *v *= weight;
                        }
                        out.add_part(profile, scaled);
                    } else {
                        // lone anchor: the vertex position integrates out
                        let joined = join_shared_axis(
                            warr,
                            1 + wp.t(),
                            1 + j,
                            &frag.array,
                            1 + frag.aux.len(),
                            size,
                            true,
                            h_d,
                        )?;
                        let mut aux: Vec<u8> = wp
                            .aux
                            .iter()
                            .enumerate()
                            .filter(|&(q, _)| q != j)
                            .map(|(_, &p)| p)
                            .collect();
                        aux.extend_from_slice(&frag.aux);
                        let profile = Profile { root_pins: wp.root_pins, aux };
                        let mut scaled = joined;
                        for v in &mut scaled {
                            *v *= weight;
                        }
                        out.add_part(profile, scaled);
                    }
                }
            }
        }
        Ok(out)
    }
}

const ROOT_LABEL: u8 = 255;

/// Distinct slot assignments of a profile: per-slot labels (root or aux
/// vertex id), deduplicated up to the anchor/pin indistinction within a
/// vertex and the interchange of equal-pin vertices.
fn distinct_assignments(p: &Profile) -> Vec<Vec<u8>> {
    let m = p.m();
    // layout: root pins first, then each vertex's (anchor + pins) block
    let mut layout = Vec::with_capacity(m);
    for _ in 0..p.root_pins {
        layout.push(ROOT_LABEL);
    }
    for (j, &pins) in p.aux.iter().enumerate() {
        for _ in 0..=pins {
            layout.push(j as u8);
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for perm in permutations(m) {
        let mut assign = vec![0u8; m];
        for (pos, &slot) in perm.iter().enumerate() {
            assign[slot] = layout[pos];
        }
        // canonical relabel of equal-pin vertices by first occurrence
        let mut relabel: Vec<Option<u8>> = vec![None; p.aux.len()];
        let mut next_for_pins: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
        for (j, &pins) in p.aux.iter().enumerate() {
            next_for_pins.entry(pins).or_default().push(j as u8);
        }
        let mut canonical = Vec::with_capacity(m);
        for &lab in &assign {
            if lab == ROOT_LABEL {
                canonical.push(ROOT_LABEL);
            } else {
                let pins = p.aux[lab as usize];
                let id = match relabel[lab as usize] {
                    Some(id) => id,
                    None => {
                        let pool = next_for_pins.get_mut(&pins).unwrap();
                        let id = pool.remove(0);
                        relabel[lab as usize] = Some(id);
                        id
                    }
                };
                canonical.push(id);
            }
        }
        if seen.insert(canonical.clone()) {
            out.push(canonical);
        }
    }
    out
}

/// Canonical form: aux sorted ascending (axes permuted along) and the array
/// symmetrized over groups of equal-pin aux axes.
fn canonicalize(size: usize, profile: Profile, array: Vec<f64>) -> (Profile, Vec<f64>) {
    let t = profile.aux.len();
    if t == 0 {
        return (profile, array);
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by_key(|&j| profile.aux[j]);
    let sorted_aux: Vec<u8> = order.iter().map(|&j| profile.aux[j]).collect();
    let mut arr = if order.iter().enumerate().all(|(i, &j)| i == j) {
        array
    } else {
        permute_aux_axes(&array, size, t, &order)
    };
    // symmetrize over equal-pin groups
    let mut start = 0;
    while start < t {
        let mut end = start + 1;
        while end < t && sorted_aux[end] == sorted_aux[start] {
            end += 1;
        }
        if end - start > 1 {
            arr = symmetrize_aux_group(&arr, size, t, start, end);
        }
        start = end;
    }
    (Profile { root_pins: profile.root_pins, aux: sorted_aux }, arr)
}

/// Reorders aux axes: out(x, v_{order[0]}, v_{order[1]}, …) = in(x, v₁, …).
fn permute_aux_axes(arr: &[f64], size: usize, t: usize, order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0f64; arr.len()];
    let block = size.pow(t as u32);
    let mut v = vec![0usize; t];
    for x in 0..size {
        for lin in 0..block {
            let mut rest = lin;
            for j in (0..t).rev() {
                v[j] = rest % size;
                rest /= size;
            }
            let mut dst = 0usize;
            for j in 0..t {
                dst = dst * size + v[order[j]];
            }
            out[x * block + dst] = arr[x * block + lin];
        }
    }
    out
}

fn symmetrize_aux_group(
    arr: &[f64],
    size: usize,
    t: usize,
    start: usize,
    end: usize,
) -> Vec<f64> {
    let group: Vec<usize> = (start..end).collect();
    let perms = permutations(group.len());
    let mut out = vec![0.0f64; arr.len()];
    let w = 1.0 / perms.len() as f64;
    for perm in &perms {
        let mut order: Vec<usize> = (0..t).collect();
        for (i, &p) in perm.iter().enumerate() {
            order[group[i]] = group[p];
        }
        let permuted = permute_aux_axes(arr, size, t, &order);
        for (o, v) in out.iter_mut().zip(&permuted) {
            *o += w * v;
        }
    }
    out
}

/// A G-rooted fragment of U: the function ∫ G(pos-z) U(z; ·) dz organised as
/// an array over (pos, new aux…) with pins.
struct Fragment {
    aux: Vec<u8>,
    array: Vec<f64>,
}

fn g_rooted_fragments(g: &PeriodizedKernel, u: &ClusterTensor) -> Result<Vec<Fragment>> {
    let size = u.grid().len();
    let mut out = Vec::new();
    for (up, uarr) in u.parts() {
        let t = up.t();
        if up.root_pins >= 1 {
            // z survives, anchored by one of its root pins:
            // A(pos, z, w…) = G(pos-z)·T(z, w…)
            let gd = g.dense_position();
            let block = size.pow(t as u32);
            let total = size * size * block;
            if total > MAX_ARRAY {
                return Err(Error::InvalidGrid("cluster fragment exceeds array cap".into()));
            }
            let mut arr = vec![0.0f64; total];
            for pos in 0..size {
                for z in 0..size {
                    let gv = gd.values()[u.grid().sub_sites(pos, z)];
                    if gv == 0.0 {
                        continue;
                    }
                    let dst = (pos * size + z) * block;
                    let src = z * block;
                    for w in 0..block {
                        arr[dst + w] = gv * uarr[src + w];
                    }
                }
            }
            let mut aux = vec![up.root_pins - 1];
            aux.extend_from_slice(&up.aux);
            out.push(Fragment { aux, array: arr });
        } else {
            // z integrates out: convolve U's root axis with G
            let arr = conv_axis(uarr, 1 + t, 0, u.grid(), g);
            out.push(Fragment { aux: up.aux.to_vec(), array: arr });
        }
    }
    Ok(out)
}

/// FFT convolution along one axis of a (1+t)-axis array.
fn conv_axis(
    arr: &[f64],
    axes: usize,
    axis: usize,
    grid: TorusGrid,
    kern: &PeriodizedKernel,
) -> Vec<f64> {
    let size = grid.len();
    let stride = size.pow((axes - 1 - axis) as u32);
    let mut out = arr.to_vec();
    let mut col = vec![Complex64::default(); size];
    let scale = 1.0 / size as f64;
    for_each_column(arr.len(), size, stride, |base| {
        for (t, c) in col.iter_mut().enumerate() {
            *c = Complex64::new(arr[base + t * stride], 0.0);
        }
        grid::fft_nd(&mut col, 1, size, false);
        for (j, c) in col.iter_mut().enumerate() {
            *c *= kern.multiplier()[j] * scale;
        }
        grid::fft_nd(&mut col, 1, size, true);
        for (t, c) in col.iter().enumerate() {
            out[base + t * stride] = c.re;
        }
    });
    out
}

/// Joins two arrays along a shared axis: the result runs over a's axes
/// (shared axis dropped when integrating) followed by b's axes 1…; b's axis
/// 0 is identified with a's axis `ja`.
fn join_shared_axis(
    a: &[f64],
    a_axes: usize,
    ja: usize,
    b: &[f64],
    b_axes: usize,
    size: usize,
    integrate: bool,
    h_d: f64,
) -> Result<Vec<f64>> {
    let a_outer = size.pow(ja as u32);
    let a_inner = size.pow((a_axes - 1 - ja) as u32);
    let b_block = size.pow((b_axes - 1) as u32);
    let out_axes = a_axes + b_axes - 1 - usize::from(integrate);
    let total = size.pow(out_axes as u32);
    if total > MAX_ARRAY {
        return Err(Error::InvalidGrid(format!(
            "cluster join result with {out_axes} axes exceeds the array cap"
        )));
    }
    let mut out = vec![0.0f64; total];
    if !integrate {
        // out[o, s, i, w] = a[o, s, i] · b[s, w]
        for o in 0..a_outer {
            for s in 0..size {
                for i in 0..a_inner {
                    let av = a[(o * size + s) * a_inner + i];
                    if av == 0.0 {
                        continue;
                    }
                    let dst = (((o * size) + s) * a_inner + i) * b_block;
                    let src = s * b_block;
                    for w in 0..b_block {
                        out[dst + w] += av * b[src + w];
                    }
                }
            }
        }
    } else {
        // out[o, i, w] = h^d Σ_s a[o, s, i] · b[s, w]
        for o in 0..a_outer {
            for s in 0..size {
                for i in 0..a_inner {
                    let av = a[(o * size + s) * a_inner + i] * h_d;
                    if av == 0.0 {
                        continue;
                    }
                    let dst = (o * a_inner + i) * b_block;
                    let src = s * b_block;
                    for w in 0..b_block {
                        out[dst + w] += av * b[src + w];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_white_noise;
    use crate::kernels::KernelFactory;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    fn random_bilocal(
        grid: TorusGrid,
        root_pins: usize,
        aux_pins: usize,
        rng: &mut impl Rng,
        positive: bool,
    ) -> ClusterTensor {
        let arr: Vec<f64> = (0..grid.len() * grid.len())
            .map(|_| {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if positive {
                    v.abs() + 0.1
                } else {
                    v
                }
            })
            .collect();
        ClusterTensor::bilocal(grid, root_pins, aux_pins, arr).unwrap()
    }

    #[test]
    fn diag_triple_delta_norm_one() {
        let grid = grid1(8);
        let one = Field::constant(grid, 1.0);
        let t = ClusterTensor::diag(&one, 3);
        assert!((t.vm_norm() - 1.0).abs() < 1e-14);
        // 𝐈(Δ₃) = 1
        let i = t.integrate();
        assert!(i.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        // densified norm agrees
        let dense = t.densify().unwrap();
        assert!((dense.vm_norm() - 1.0).abs() < 1e-12);
        assert!(dense.is_symmetric(1e-12));
    }

    #[test]
    fn densify_matches_hand_built_diag() {
        let grid = grid1(8);
        let w = sample_white_noise(grid, 1);
        let t = ClusterTensor::diag(&w, 2);
        let dense = t.densify().unwrap();
        let h = grid.cell_volume();
        let expect = DenseTensor::from_fn(grid, 2, |x, ys| {
            if ys[0] == x && ys[1] == x {
                w.values()[x] / (h * h)
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(dense.max_abs_diff(&expect) < 1e-9 / (h * h));
    }

    #[test]
    fn bilocal_densify_is_symmetrized() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(2);
        // m = 2, profile (1,[0]): T(x,v)·δ(x-y_pin), slot roles averaged
        let t = random_bilocal(grid, 1, 0, &mut rng, false);
        let dense = t.densify().unwrap();
        assert!(dense.is_symmetric(1e-10));
        // vm norms agree for positive arrays (no sign cancellation at overlaps)
        let tp = random_bilocal(grid, 1, 0, &mut rng, true);
        let dp = tp.densify().unwrap();
        assert!(
            (tp.vm_norm() - dp.vm_norm()).abs() < 1e-10 * tp.vm_norm(),
            "{} vs {}",
            tp.vm_norm(),
            dp.vm_norm()
        );
    }

    #[test]
    fn integrate_matches_dense() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(3);
        for (rp, ap) in [(0usize, 0usize), (1, 0), (0, 1), (2, 1)] {
            let t = random_bilocal(grid, rp, ap, &mut rng, false);
            let lhs = t.integrate();
            let rhs = t.densify().unwrap().integrate();
            assert!(
                lhs.max_abs_diff(&rhs) < 1e-9 * lhs.linf().max(1.0),
                "profile ({rp},[{ap}])"
            );
        }
    }

    #[test]
    fn apply_powers_matches_dense() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(4);
        let phi = sample_white_noise(grid, 7);
        for (rp, ap) in [(1usize, 0usize), (0, 2), (2, 0)] {
            let t = random_bilocal(grid, rp, ap, &mut rng, false);
            let lhs = t.apply_powers(&phi).unwrap();
            let rhs = t.densify().unwrap().apply_powers(&phi).unwrap();
            assert!(
                lhs.max_abs_diff(&rhs) < 1e-8 * lhs.linf().max(1.0),
                "profile ({rp},[{ap}]): {}",
                lhs.max_abs_diff(&rhs)
            );
        }
        // diag case
        let w = sample_white_noise(grid, 9);
        let t = ClusterTensor::diag(&w, 3);
        let lhs = t.apply_powers(&phi).unwrap();
        let rhs = t.densify().unwrap().apply_powers(&phi).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-8 * lhs.linf().max(1.0));
    }

    #[test]
    fn contract_matches_dense_engine() {
        // Sym 𝐁(G, W, U) on clusters against symmetrize(𝐁(G, densify W, densify U))
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(5);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let g = fac.fluctuation(0.3, 0.7).unwrap();

        let xi = sample_white_noise(grid, 11);
        let u_field = ClusterTensor::from_field(&xi);
        let w_diag1 = ClusterTensor::diag(&sample_white_noise(grid, 12), 1);
        let w_diag3 = ClusterTensor::diag(&sample_white_noise(grid, 13), 3);
        let w_bilocal = random_bilocal(grid, 0, 0, &mut rng, false); // m = 1
        let w_bilocal21 = random_bilocal(grid, 1, 0, &mut rng, false); // m = 2
        let u_diag1 = ClusterTensor::diag(&sample_white_noise(grid, 14), 1);
        let u_bilocal = random_bilocal(grid, 0, 0, &mut rng, false);

        let cases: Vec<(&ClusterTensor, &ClusterTensor, usize, &str)> = vec![
            (&w_diag1, &u_field, 0, "diag1 x field"),
            (&w_diag3, &u_field, 2, "diag3 x field"),
            (&w_bilocal, &u_field, 0, "bilocal x field"),
            (&w_bilocal21, &u_field, 1, "bilocal(1,0) x field"),
            (&w_diag1, &u_diag1, 0, "diag1 x diag1"),
            (&w_diag3, &u_diag1, 2, "diag3 x diag1"),
            (&w_diag1, &u_bilocal, 0, "diag1 x bilocal"),
            (&w_bilocal21, &u_diag1, 1, "bilocal x diag (t=2 result)"),
        ];
        for (w, u, k, label) in cases {
            let cluster = ClusterTensor::contract_b(&g, w, u, k).unwrap();
            let dense = DenseTensor::contract_b(
                &g,
                &w.densify().unwrap(),
                &u.densify().unwrap(),
                k,
            )
            .unwrap()
            .symmetrize();
            let got = cluster.densify().unwrap();
            let scale = dense.max_abs().max(1e-12);
            assert!(
                got.max_abs_diff(&dense) < 1e-9 * scale,
                "{label}: rel diff {}",
                got.max_abs_diff(&dense) / scale
            );
        }
    }

    #[test]
    fn contract_norm_bound_on_clusters() {
        let grid = grid1(8);
        let mut rng = StdRng::seed_from_u64(6);
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let g = fac.fluctuation(0.25, 0.5).unwrap();
        let w = random_bilocal(grid, 1, 0, &mut rng, false);
        let u = ClusterTensor::diag(&sample_white_noise(grid, 15), 1);
        let b = ClusterTensor::contract_b(&g, &w, &u, 1).unwrap();
        assert!(b.vm_norm() <= g.l1_norm() * w.vm_norm() * u.vm_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn mollified_proxy_bounds_dense_norm() {
        let grid = grid1(16);
        let mut rng = StdRng::seed_from_u64(7);
        // well-resolved positive kernel ([μ] ≳ h): proxy is tight
        let fac = KernelFactory::new(grid, 2.0).unwrap();
        let k = fac.k_pow(0.5, 1).unwrap();
        let t = random_bilocal(grid, 1, 0, &mut rng, true);
        let proxy = t.mollified_vm_norm(&k).unwrap();
        let dense = t.densify().unwrap().mollify_all(&k).unwrap().vm_norm();
        assert!(
            proxy >= dense * (1.0 - 1e-10) && proxy <= dense * 1.05,
            "proxy {proxy} vs dense {dense}"
        );
        // signed parts and under-resolved kernels: still an upper bound
        let fac = KernelFactory::new(grid, 0.45).unwrap();
        let k = fac.k_pow(0.3, 1).unwrap();
        for positive in [true, false] {
            let ts = random_bilocal(grid, 1, 0, &mut rng, positive);
            let proxy = ts.mollified_vm_norm(&k).unwrap();
            let dense = ts.densify().unwrap().mollify_all(&k).unwrap().vm_norm();
            assert!(proxy >= dense * (1.0 - 1e-10), "proxy {proxy} < dense {dense}");
        }
        // m = 0 is exact
        let xi = sample_white_noise(grid, 3);
        let t0 = ClusterTensor::from_field(&xi);
        let proxy = t0.mollified_vm_norm(&k).unwrap();
        let exact = k.convolve(&xi).unwrap().linf();
        assert!((proxy - exact).abs() < 1e-14 * exact);
    }

    #[test]
    fn weight_slot_poly_kills_diag() {
        let grid = grid1(16);
        let w = sample_white_noise(grid, 8);
        let t = ClusterTensor::diag(&w, 1);
        let weighted = t.weight_slot_poly(&vec![1]).unwrap();
        assert!(weighted.is_zero());
        // bilocal picks up the bond polynomial; cross-check densely
        let mut rng = StdRng::seed_from_u64(9);
        let b = random_bilocal(grid, 0, 0, &mut rng, false);
        let lhs = b.weight_slot_poly(&vec![2]).unwrap().densify().unwrap();
        let rhs = b.densify().unwrap().weight_x(&[vec![2]]).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-9 * rhs.max_abs().max(1.0));
    }

    #[test]
    fn canonicalization_merges_equal_profiles() {
        let grid = grid1(8);
        let size = grid.len();
        let mut t = ClusterTensor::zero(grid, 3);
        // two-aux profile added with swapped pin order folds to one part
        let arr1: Vec<f64> = (0..size * size * size).map(|i| i as f64).collect();
        t.add_part(Profile { root_pins: 0, aux: vec![1, 0] }, arr1.clone());
        t.add_part(Profile { root_pins: 0, aux: vec![0, 1] }, vec![1.0; size * size * size]);
        assert_eq!(t.parts.len(), 1);
        let p = t.parts.keys().next().unwrap();
        assert_eq!(p.aux, vec![0, 1]);
    }

    #[test]
    fn distinct_assignment_counts() {
        // Δ₃ diag: a single assignment
        let p = Profile { root_pins: 3, aux: vec![] };
        assert_eq!(distinct_assignments(&p).len(), 1);
        // m=2 bilocal (1,[0]): which slot is pinned to x — 2 assignments
        let p = Profile { root_pins: 1, aux: vec![0] };
        assert_eq!(distinct_assignments(&p).len(), 2);
        // m=5 double cluster (1,[1,1]): 5!/(1!·2!·2!·2!) = 15
        let p = Profile { root_pins: 1, aux: vec![1, 1] };
        assert_eq!(distinct_assignments(&p).len(), 15);
        // m=3 (0,[0,1]): 3!/(1!·2!) = 3
        let p = Profile { root_pins: 0, aux: vec![0, 1] };
        assert_eq!(distinct_assignments(&p).len(), 3);
    }
}
