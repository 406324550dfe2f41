//! Dense Hermitian linear algebra and density matrices.
//!
//! Spectra are computed once per operator and cached, since nearly every
//! divergence formula consumes the eigendecomposition of its arguments.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, QR};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative tolerance for the Hermitian symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues with `|λ| <= KERNEL_TOL * ‖H‖` are treated as zero.
pub const KERNEL_TOL: f64 = 1e-12;
/// Negative eigenvalues of a density matrix above `-CLIP_TOL` are clipped to zero.
pub const CLIP_TOL: f64 = 1e-12;
/// Allowed trace defect before a normalized state is rejected instead of rescaled.
pub const TRACE_TOL: f64 = 1e-8;

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl Spectrum {
    /// Largest absolute eigenvalue.
    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn kernel_tol(&self) -> f64 {
        KERNEL_TOL * self.norm()
    }

    /// Rebuild `Σ w_i |v_i⟩⟨v_i|`, skipping zero weights.
    pub fn reconstruct(&self, weights: &[f64]) -> CMatrix {
        let n = self.vectors.nrows();
        let cols: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        if cols.is_empty() {
            return CMatrix::zeros(n, n);
        }
        let k = cols.len();
        let v = CMatrix::from_fn(n, k, |r, j| self.vectors[(r, cols[j])]);
        let w = CMatrix::from_fn(n, k, |r, j| self.vectors[(r, cols[j])] * weights[cols[j]]);
        let mut out = matmul(&w, &v.adjoint());
        symmetrize(&mut out);
        out
    }
}

fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = c(m[(i, i)].re);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn is_offdiag_zero(m: &CMatrix) -> bool {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

/// A complex Hermitian matrix with a lazily computed, cached spectrum.
#[derive(Clone, Debug)]
pub struct HermitianOperator {
    mat: CMatrix,
    spectrum: OnceLock<Arc<Spectrum>>,
}

impl HermitianOperator {
    /// Checks symmetry to `HERMITIAN_TOL` relative to the largest entry, then
    /// symmetrizes exactly.
    pub fn new(mut mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let scale = max_abs(&mat);
        let asym = max_abs(&(&mat - mat.adjoint()));
        if asym > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
            return Err(Error::NonHermitian { asymmetry: asym });
        }
        symmetrize(&mut mat);
        Ok(Self::from_trusted(mat))
    }

    pub(crate) fn from_trusted(mat: CMatrix) -> Self {
        Self {
            mat,
            spectrum: OnceLock::new(),
        }
    }

    fn with_spectrum(mat: CMatrix, spectrum: Spectrum) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Arc::new(spectrum));
        Self {
            mat,
            spectrum: cell,
        }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = c(d);
        }
        Self::from_trusted(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_trusted(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_trusted(CMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        is_offdiag_zero(&self.mat)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.mat.diagonal().iter().map(|z| z.re).collect()
    }

    /// Ascending eigenvalues with orthonormal eigenvectors, cached after the first call.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum
            .get_or_init(|| Arc::new(compute_spectrum(&self.mat)))
    }

    /// Largest absolute eigenvalue.
    pub fn norm(&self) -> f64 {
        self.spectrum().norm()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self::from_trusted(&self.mat + &other.mat))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self::from_trusted(&self.mat - &other.mat))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_trusted(&self.mat * c(s))
    }

    /// `Tr[self · other]`, real for Hermitian arguments.
    pub fn trace_product(&self, other: &Self) -> Result<f64> {
        self.same_dim(other)?;
        Ok(trace_product(&self.mat, &other.mat))
    }

    fn same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Real part of `Tr[A B]` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

fn compute_spectrum(mat: &CMatrix) -> Spectrum {
    let n = mat.nrows();
    if is_offdiag_zero(mat) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| mat[(a, a)].re.total_cmp(&mat[(b, b)].re));
        let values = idx.iter().map(|&i| mat[(i, i)].re).collect();
        let mut vectors = CMatrix::zeros(n, n);
        for (col, &i) in idx.iter().enumerate() {
            vectors[(i, col)] = c(1.0);
        }
        return Spectrum { values, vectors };
    }
    let fm = faer::Mat::<C64>::from_fn(n, n, |i, j| mat[(i, j)]);
    let eig = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("self-adjoint eigensolver converges");
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re));
    let values = idx.iter().map(|&i| s[i].re).collect();
    let vectors = CMatrix::from_fn(n, n, |r, col| u[(r, idx[col])]);
    Spectrum { values, vectors }
}

/// Dense product; large operands go through faer's blocked kernel.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    if a.nrows().max(a.ncols()).max(b.ncols()) < 48 {
        return a * b;
    }
    let fa = faer::Mat::<C64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let fb = faer::Mat::<C64>::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
    let fc = &fa * &fb;
    CMatrix::from_fn(a.nrows(), b.ncols(), |i, j| fc[(i, j)])
}

/// `Re v_k† M v_k` for every column `v_k` of `vectors`.
pub fn column_expectations(m: &CMatrix, vectors: &CMatrix) -> Vec<f64> {
    let mv = matmul(m, vectors);
    (0..vectors.ncols())
        .map(|k| (0..vectors.nrows()).map(|i| (vectors[(i, k)].conj() * mv[(i, k)]).re).sum())
        .collect()
}

/// Eigendecomposition with ascending eigenvalues.
pub fn eig_hermitian(h: &HermitianOperator) -> Spectrum {
    h.spectrum().clone()
}

/// `V f(Λ) V†`; eigenvalues inside the kernel tolerance map to `kernel_value`.
pub fn matrix_function<F: Fn(f64) -> f64>(
    h: &HermitianOperator,
    f: F,
    kernel_value: f64,
) -> Result<HermitianOperator> {
    let spec = h.spectrum();
    let tol = spec.kernel_tol();
    let mut out = Vec::with_capacity(spec.values.len());
    for &lam in &spec.values {
        let v = if lam.abs() <= tol { kernel_value } else { f(lam) };
        if v.is_nan() {
            return Err(Error::Domain { eigenvalue: lam });
        }
        out.push(v);
    }
    if h.is_diagonal() {
        // keep exact zeros off the diagonal so diagonal fast paths stay available
        let diag: Vec<f64> = h
            .diagonal()
            .into_iter()
            .map(|lam| if lam.abs() <= tol { kernel_value } else { f(lam) })
            .collect();
        return Ok(HermitianOperator::from_real_diag(&diag));
    }
    Ok(HermitianOperator::from_trusted(spec.reconstruct(&out)))
}

pub fn positive_part(h: &HermitianOperator) -> HermitianOperator {
    let tol = h.spectrum().kernel_tol();
    matrix_function(h, |x| if x > tol { x } else { 0.0 }, 0.0).expect("finite map")
}

/// The positive operator `H₋` with `H = H₊ − H₋`.
pub fn negative_part(h: &HermitianOperator) -> HermitianOperator {
    let tol = h.spectrum().kernel_tol();
    matrix_function(h, |x| if x < -tol { -x } else { 0.0 }, 0.0).expect("finite map")
}

pub fn support_projector(h: &HermitianOperator) -> HermitianOperator {
    matrix_function(h, |_| 1.0, 0.0).expect("finite map")
}

/// Kronecker product.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Matrix serialization shared by the CLI fixtures. Entries are row-major.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub dim: usize,
    #[serde(default)]
    pub subsystem_dims: Vec<usize>,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &CMatrix, subsystem_dims: &[usize]) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self {
            dim: n,
            subsystem_dims: subsystem_dims.to_vec(),
            re,
            im,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.dim;
        if self.re.len() != n * n || !(self.im.is_empty() || self.im.len() == n * n) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for dim {}",
                n * n,
                n
            )));
        }
        Ok(CMatrix::from_fn(n, n, |i, j| {
            let k = i * n + j;
            C64::new(self.re[k], self.im.get(k).copied().unwrap_or(0.0))
        }))
    }
}

/// A positive semidefinite operator with a declared tensor factorization.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    op: HermitianOperator,
    dims: Vec<usize>,
    normalized: bool,
}

impl DensityMatrix {
    /// A normalized state. Round-off negative eigenvalues are clipped and the
    /// trace is rescaled to one.
    pub fn new(mat: CMatrix, dims: &[usize]) -> Result<Self> {
        Self::build(HermitianOperator::new(mat)?, dims, true)
    }

    /// A positive operator of arbitrary trace.
    pub fn new_unnormalized(mat: CMatrix, dims: &[usize]) -> Result<Self> {
        Self::build(HermitianOperator::new(mat)?, dims, false)
    }

    pub fn from_operator(op: HermitianOperator, dims: &[usize], normalized: bool) -> Result<Self> {
        Self::build(op, dims, normalized)
    }

    fn build(op: HermitianOperator, dims: &[usize], normalized: bool) -> Result<Self> {
        let n = op.dim();
        let dims = if dims.is_empty() { vec![n] } else { dims.to_vec() };
        if dims.iter().product::<usize>() != n || dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!(
                "subsystem dims {:?} do not multiply to {}",
                dims, n
            )));
        }
        let spec = op.spectrum();
        let scale = spec.norm().max(1.0);
        let min = spec.values.first().copied().unwrap_or(0.0);
        if min < -CLIP_TOL * scale {
            return Err(Error::NotPositive { eigenvalue: min });
        }
        let tr: f64 = spec.values.iter().map(|v| v.max(0.0)).sum();
        if normalized && (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidInput(format!("trace {tr} is not 1")));
        }
        let clip = min < 0.0;
        let rescale = normalized && (op.trace() - 1.0).abs() > 1e-15;
        if !clip && !rescale {
            return Ok(Self {
                op,
                dims,
                normalized,
            });
        }
        let s = if normalized { 1.0 / tr } else { 1.0 };
        let fixed = if op.is_diagonal() {
            let d: Vec<f64> = op.diagonal().iter().map(|v| v.max(0.0) * s).collect();
            HermitianOperator::from_real_diag(&d)
        } else if !clip {
            let spectrum = Spectrum {
                vectors: spec.vectors.clone(),
                values: spec.values.iter().map(|v| v * s).collect(),
            };
            HermitianOperator::with_spectrum(op.matrix() * c(s), spectrum)
        } else {
            let values: Vec<f64> = spec.values.iter().map(|v| v.max(0.0) * s).collect();
            let spectrum = Spectrum {
                vectors: spec.vectors.clone(),
                values: values.clone(),
            };
            HermitianOperator::with_spectrum(spectrum.reconstruct(&values), spectrum)
        };
        Ok(Self {
            op: fixed,
            dims,
            normalized,
        })
    }

    pub fn from_diag(p: &[f64]) -> Result<Self> {
        Self::build(HermitianOperator::from_real_diag(p), &[p.len()], true)
    }

    pub fn from_diag_unnormalized(p: &[f64]) -> Result<Self> {
        Self::build(HermitianOperator::from_real_diag(p), &[p.len()], false)
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector, normalized.
    pub fn from_pure(psi: &[C64], dims: &[usize]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("zero state vector".into()));
        }
        let v = CVector::from_iterator(psi.len(), psi.iter().map(|z| z / norm));
        Self::new(&v * v.adjoint(), dims)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let p = vec![1.0 / dim as f64; dim];
        Self::from_diag(&p).expect("valid distribution")
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn trace(&self) -> f64 {
        self.op.trace()
    }

    pub fn spectrum(&self) -> &Spectrum {
        self.op.spectrum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.op.is_diagonal()
    }

    pub fn with_dims(&self, dims: &[usize]) -> Result<Self> {
        Self::build(self.op.clone(), dims, self.normalized)
    }

    /// `ρ ⊗ σ` with concatenated subsystem dims.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self {
            op: HermitianOperator::from_trusted(tensor(self.matrix(), other.matrix())),
            dims,
            normalized: self.normalized && other.normalized,
        }
    }

    /// n-fold tensor power.
    pub fn tensor_power(&self, n: usize) -> Self {
        assert!(n >= 1);
        let mut out = self.clone();
        for _ in 1..n {
            out = out.tensor(self);
        }
        out
    }

    /// Traces out every subsystem not listed in `keep` (0-based, any order;
    /// the kept factors stay in their original order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let k = self.dims.len();
        if keep.iter().any(|&i| i >= k) {
            return Err(Error::DimensionMismatch(format!(
                "subsystem index out of range for dims {:?}",
                self.dims
            )));
        }
        let mut kept = vec![false; k];
        for &i in keep {
            kept[i] = true;
        }
        let out_dims: Vec<usize> = (0..k).filter(|&i| kept[i]).map(|i| self.dims[i]).collect();
        let out_dim: usize = out_dims.iter().product();
        let traced_dim: usize = (0..k).filter(|&i| !kept[i]).map(|i| self.dims[i]).product();
        let n = self.dim();
        let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); traced_dim];
        for idx in 0..n {
            let mut rem = idx;
            let mut digits = vec![0; k];
            for s in (0..k).rev() {
                digits[s] = rem % self.dims[s];
                rem /= self.dims[s];
            }
            let (mut a, mut t) = (0, 0);
            for s in 0..k {
                if kept[s] {
                    a = a * self.dims[s] + digits[s];
                } else {
                    t = t * self.dims[s] + digits[s];
                }
            }
            groups[t].push((idx, a));
        }
        let m = self.matrix();
        let mut out = CMatrix::zeros(out_dim, out_dim);
        for g in &groups {
            for &(i, a) in g {
                for &(j, b) in g {
                    out[(a, b)] += m[(i, j)];
                }
            }
        }
        symmetrize(&mut out);
        let out_dims = if out_dims.is_empty() { vec![1] } else { out_dims };
        Self::build(HermitianOperator::from_trusted(out), &out_dims, self.normalized)
    }

    /// Reorders tensor factors: factor `i` of the result is factor `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let map = permutation_map(&self.dims, perm)?;
        let m = self.matrix();
        let n = self.dim();
        let out = CMatrix::from_fn(n, n, |i, j| m[(map[i], map[j])]);
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        Ok(Self {
            op: HermitianOperator::from_trusted(out),
            dims,
            normalized: self.normalized,
        })
    }

    /// Pure state on `A ⊗ R` with `dim R = rank ρ` whose `A` marginal is `ρ`.
    /// Returns the amplitude vector (A index major) and the rank.
    pub fn purify(&self) -> (Vec<C64>, usize) {
        let spec = self.spectrum();
        let tol = spec.kernel_tol();
        let support: Vec<usize> = (0..spec.values.len())
            .rev()
            .filter(|&i| spec.values[i] > tol)
            .collect();
        let r = support.len().max(1);
        let d = self.dim();
        let mut psi = vec![C64::new(0.0, 0.0); d * r];
        for (col, &i) in support.iter().enumerate() {
            let w = spec.values[i].sqrt();
            for a in 0..d {
                psi[a * r + col] += spec.vectors[(a, i)] * w;
            }
        }
        (psi, r)
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson::from_matrix(self.matrix(), &self.dims)
    }

    pub fn from_json(j: &MatrixJson) -> Result<Self> {
        Self::new(j.to_matrix()?, &j.subsystem_dims)
    }
}

/// For each index of the permuted space, the matching index of the original.
pub(crate) fn permutation_map(dims: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    let k = dims.len();
    let mut seen = vec![false; k];
    if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::DimensionMismatch(format!(
            "{:?} is not a permutation of {} factors",
            perm, k
        )));
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut old_strides = vec![1; k];
    for s in (0..k.saturating_sub(1)).rev() {
        old_strides[s] = old_strides[s + 1] * dims[s + 1];
    }
    let n: usize = dims.iter().product();
    let mut map = vec![0; n];
    for (idx, slot) in map.iter_mut().enumerate() {
        let mut rem = idx;
        let mut old = 0;
        for s in (0..k).rev() {
            let digit = rem % new_dims[s];
            rem /= new_dims[s];
            old += digit * old_strides[perm[s]];
        }
        *slot = old;
    }
    Ok(map)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn ginibre<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = C64::new(re, im);
        }
    }
    m
}

/// Haar-random unit vector.
pub fn random_unit_vector<R: rand::Rng>(dim: usize, rng: &mut R) -> Vec<C64> {
    let g = ginibre(dim, 1, rng);
    let norm = g.norm();
    g.iter().map(|z| z / norm).collect()
}

/// Matrix with orthonormal columns (`rows >= cols`), from the QR factor of a Ginibre matrix.
pub fn random_isometry<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(rows, cols, rng);
    let qr = QR::new(g.clone());
    let q = qr.q();
    // fix the phase ambiguity so the distribution is Haar
    let r = qr.r();
    let mut out = q;
    for j in 0..cols {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for i in 0..rows {
                out[(i, j)] *= phase;
            }
        }
    }
    out
}

/// GUE sample `(G + G†)/2`.
pub fn random_hermitian(dim: usize, seed: u64) -> HermitianOperator {
    let mut rng = rng_from_seed(seed);
    let g = ginibre(dim, dim, &mut rng);
    let mut h = (&g + g.adjoint()) * c(0.5);
    symmetrize(&mut h);
    HermitianOperator::from_trusted(h)
}

/// Smallest eigenvalue of full-rank random states.
pub const RANDOM_EIGEN_FLOOR: f64 = 1e-6;

/// Random state of the given rank from a `dim × rank` Ginibre matrix.
/// Full-rank outputs have their spectrum floored at `RANDOM_EIGEN_FLOOR`.
pub fn random_density(dim: usize, rank: usize, seed: u64) -> Result<DensityMatrix> {
    let mut rng = rng_from_seed(seed);
    random_density_with(dim, rank, &mut rng)
}

pub fn random_density_with<R: rand::Rng>(
    dim: usize,
    rank: usize,
    rng: &mut R,
) -> Result<DensityMatrix> {
    if rank == 0 || rank > dim {
        return Err(Error::InvalidInput(format!(
            "rank {rank} outside 1..={dim}"
        )));
    }
    let g = ginibre(dim, rank, rng);
    let w = &g * g.adjoint();
    let tr: f64 = w.diagonal().iter().map(|z| z.re).sum();
    let w = w * c(1.0 / tr);
    if rank < dim {
        return DensityMatrix::new(w, &[dim]);
    }
    let op = HermitianOperator::new(w)?;
    let spec = op.spectrum();
    let mut floor = RANDOM_EIGEN_FLOOR;
    let mut values: Vec<f64>;
    loop {
        values = spec.values.iter().map(|&v| v.max(floor)).collect();
        let s: f64 = values.iter().sum();
        if floor / s >= RANDOM_EIGEN_FLOOR {
            values.iter_mut().for_each(|v| *v /= s);
            break;
        }
        floor = RANDOM_EIGEN_FLOOR * s * (1.0 + 1e-12);
    }
    let spectrum = Spectrum {
        vectors: spec.vectors.clone(),
        values: values.clone(),
    };
    let m = spectrum.reconstruct(&values);
    DensityMatrix::from_operator(HermitianOperator::with_spectrum(m, spectrum), &[dim], true)
}

/// Random diagonal (classical) state with entries bounded below by `RANDOM_EIGEN_FLOOR`.
pub fn random_diagonal_density<R: rand::Rng>(dim: usize, rng: &mut R) -> DensityMatrix {
    let raw: Vec<f64> = (0..dim)
        .map(|_| {
            let e: f64 = rng.random::<f64>();
            -(e.max(1e-300)).ln()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|v| (v / s).max(RANDOM_EIGEN_FLOOR)).collect();
    let s2: f64 = p.iter().sum();
    let p: Vec<f64> = p.iter().map(|v| v / s2).collect();
    DensityMatrix::from_diag(&p).expect("valid distribution")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_entry_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    #[test]
    fn diagonal_spectrum_sorted() {
        let h = HermitianOperator::from_real_diag(&[3.0, 1.0, 2.0]);
        assert_eq!(h.spectrum().values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn pauli_x_spectrum() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0);
        m[(1, 0)] = c(1.0);
        let h = HermitianOperator::new(m).unwrap();
        let v = &h.spectrum().values;
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 1)] = c(1.0);
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NonHermitian { .. })
        ));
    }

    #[test]
    fn random_reconstruction() {
        let h = random_hermitian(8, 7);
        let s = h.spectrum();
        let rec = s.reconstruct(&s.values);
        let scale = max_abs(h.matrix());
        assert!(max_entry_diff(&rec, h.matrix()) < 1e-10 * scale);
        let gram = s.vectors.adjoint() * &s.vectors;
        assert!(max_entry_diff(&gram, &CMatrix::identity(8, 8)) < 1e-10);
    }

    #[test]
    fn sqrt_and_pseudo_inverse() {
        let h = HermitianOperator::from_real_diag(&[4.0, 9.0]);
        let r = matrix_function(&h, f64::sqrt, 0.0).unwrap();
        assert_eq!(r.diagonal(), vec![2.0, 3.0]);
        let h = HermitianOperator::from_real_diag(&[1.0, 0.0]);
        let r = matrix_function(&h, |x| 1.0 / x, 0.0).unwrap();
        assert_eq!(r.diagonal(), vec![1.0, 0.0]);
    }

    #[test]
    fn log_of_rotated_qubit() {
        // ½(1 + 0.6 X) has eigenvalues 0.8 (on |+⟩) and 0.2 (on |−⟩)
        let mut m = CMatrix::identity(2, 2) * c(0.5);
        m[(0, 1)] = c(0.3);
        m[(1, 0)] = c(0.3);
        let h = HermitianOperator::new(m).unwrap();
        let l = matrix_function(&h, f64::log2, 0.0).unwrap();
        let (a, b) = (0.8_f64.log2(), 0.2_f64.log2());
        let want_diag = (a + b) / 2.0;
        let want_off = (a - b) / 2.0;
        assert!((l.matrix()[(0, 0)].re - want_diag).abs() < 1e-12);
        assert!((l.matrix()[(0, 1)].re - want_off).abs() < 1e-12);
    }

    #[test]
    fn positive_part_examples() {
        let h = HermitianOperator::from_real_diag(&[2.0, -1.0]);
        assert_eq!(positive_part(&h).diagonal(), vec![2.0, 0.0]);
        assert_eq!(support_projector(&h).diagonal(), vec![1.0, 1.0]);
        let p = support_projector(&HermitianOperator::from_real_diag(&[2.0, 0.0]));
        assert_eq!(p.diagonal(), vec![1.0, 0.0]);
        let z = HermitianOperator::zeros(3);
        assert_eq!(positive_part(&z).trace(), 0.0);
        assert_eq!(support_projector(&z).trace(), 0.0);
        let d = HermitianOperator::from_real_diag(&[0.5, 0.5])
            .sub(&HermitianOperator::from_real_diag(&[0.25, 0.75]))
            .unwrap();
        assert_eq!(positive_part(&d).diagonal(), vec![0.25, 0.0]);
    }

    #[test]
    fn tensor_and_partial_trace() {
        let a = DensityMatrix::from_diag(&[1.0, 0.0]).unwrap();
        let b = DensityMatrix::from_diag(&[0.0, 1.0]).unwrap();
        let ab = a.tensor(&b);
        assert_eq!(ab.op().diagonal(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(ab.dims(), &[2, 2]);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = [c(s), c(0.0), c(0.0), c(s)];
        let rho = DensityMatrix::from_pure(&bell, &[2, 2]).unwrap();
        let red = rho.partial_trace(&[0]).unwrap();
        assert!(max_entry_diff(red.matrix(), &(CMatrix::identity(2, 2) * c(0.5))) < 1e-15);

        let r = random_density(2, 2, 3).unwrap();
        let q = random_density(2, 2, 4).unwrap();
        let back = r.tensor(&q).partial_trace(&[1]).unwrap();
        assert!(max_entry_diff(back.matrix(), q.matrix()) < 1e-12);
    }

    #[test]
    fn permutation_swaps_factors() {
        let r = random_density(2, 2, 10).unwrap();
        let q = random_density(3, 3, 11).unwrap();
        let swapped = r.tensor(&q).permute(&[1, 0]).unwrap();
        assert!(max_entry_diff(swapped.matrix(), q.tensor(&r).matrix()) < 1e-15);
        assert_eq!(swapped.dims(), &[3, 2]);
    }

    #[test]
    fn purification_examples() {
        let pure = DensityMatrix::from_pure(&[c(0.6), c(0.8)], &[2]).unwrap();
        let (_, r) = pure.purify();
        assert_eq!(r, 1);

        let rho = DensityMatrix::from_diag(&[0.9, 0.1]).unwrap();
        let (psi, r) = rho.purify();
        assert_eq!(r, 2);
        let mut coeffs: Vec<f64> = psi.iter().map(|z| z.norm()).filter(|v| *v > 0.0).collect();
        coeffs.sort_by(f64::total_cmp);
        assert!((coeffs[0] - 0.1_f64.sqrt()).abs() < 1e-12);
        assert!((coeffs[1] - 0.9_f64.sqrt()).abs() < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(2);
        let (psi, r) = mixed.purify();
        assert_eq!(r, 2);
        assert!(psi.iter().filter(|z| z.norm() > 0.0).all(|z| (z.norm() - 0.5_f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn purification_marginal() {
        let rho = random_density(3, 2, 21).unwrap();
        let (psi, r) = rho.purify();
        let joint = DensityMatrix::from_pure(&psi, &[3, r]).unwrap();
        let back = joint.partial_trace(&[0]).unwrap();
        assert!(max_entry_diff(back.matrix(), rho.matrix()) < 1e-10);
    }

    #[test]
    fn random_density_properties() {
        let rho = random_density(2, 2, 1).unwrap();
        assert!(rho.spectrum().values[0] >= RANDOM_EIGEN_FLOOR * (1.0 - 1e-9));
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        let pure = random_density(4, 1, 2).unwrap();
        let tol = pure.spectrum().kernel_tol();
        assert_eq!(pure.spectrum().values.iter().filter(|v| **v > tol).count(), 1);
        let again = random_density(4, 1, 2).unwrap();
        assert_eq!(pure.matrix(), again.matrix());
    }

    #[test]
    fn clipping_and_rejection() {
        let m = CMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0 + 1e-13), c(-1e-13)]));
        let rho = DensityMatrix::new(m, &[2]).unwrap();
        assert!(rho.spectrum().values[0] >= 0.0);
        assert!((rho.trace() - 1.0).abs() < 1e-15);
        let bad = CMatrix::from_diagonal(&DVector::from_vec(vec![c(1.1), c(-0.1)]));
        assert!(DensityMatrix::new(bad, &[2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let rho = random_density(3, 3, 5).unwrap();
        let j = rho.to_json();
        let text = serde_json::to_string(&j).unwrap();
        let back = DensityMatrix::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert!(max_entry_diff(back.matrix(), rho.matrix()) < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn reconstruction_residual(dim in 2usize..24, seed in any::<u64>()) {
                let h = random_hermitian(dim, seed);
                let s = h.spectrum();
                let scale = max_abs(h.matrix());
                prop_assert!(max_entry_diff(&s.reconstruct(&s.values), h.matrix()) < 1e-10 * scale);
            }

            #[test]
            fn identity_function_on_support(dim in 2usize..12, rank in 1usize..12, seed in any::<u64>()) {
                let rank = rank.min(dim);
                let rho = random_density(dim, rank, seed).unwrap();
                let f = matrix_function(rho.op(), |x| x, 0.0).unwrap();
                prop_assert!(max_entry_diff(f.matrix(), rho.matrix()) < 1e-10);
            }

            #[test]
            fn positive_negative_split(dim in 2usize..16, seed in any::<u64>()) {
                let h = random_hermitian(dim, seed);
                let p = positive_part(&h);
                let n = negative_part(&h);
                let scale = h.norm();
                prop_assert!(max_entry_diff(&(p.matrix() - n.matrix()), h.matrix()) < 1e-10 * scale);
                prop_assert!(max_abs(&(p.matrix() * n.matrix())) < 1e-10 * scale * scale);
                let proj = support_projector(&p);
                prop_assert!(max_entry_diff(&(proj.matrix() * proj.matrix()), proj.matrix()) < 1e-10);
            }

            #[test]
            fn partial_trace_recovers_factors(da in 1usize..5, db in 1usize..5, s1 in any::<u64>(), s2 in any::<u64>()) {
                let a = random_density(da, da, s1).unwrap();
                let b = random_density(db, db, s2).unwrap();
                let ab = a.tensor(&b);
                prop_assert!(max_entry_diff(ab.partial_trace(&[0]).unwrap().matrix(), a.matrix()) < 1e-12);
                prop_assert!(max_entry_diff(ab.partial_trace(&[1]).unwrap().matrix(), b.matrix()) < 1e-12);
                prop_assert!((ab.partial_trace(&[]).unwrap().trace() - 1.0).abs() < 1e-12);
            }
        }
    }
}
