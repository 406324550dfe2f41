//! CPTP maps stored as Kraus families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    c, permutation_map, random_isometry, rng_from_seed, tensor, CMatrix, DensityMatrix,
    HermitianOperator, C64,
};

/// Completeness tolerance `‖Σ K†K − 1‖`.
pub const COMPLETENESS_TOL: f64 = 1e-10;
const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct KrausChannel {
    dim_in: usize,
    dim_out: usize,
    kraus: Vec<CMatrix>,
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

impl KrausChannel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidInput("empty Kraus family".into()))?;
        let (dim_out, dim_in) = (first.nrows(), first.ncols());
        if kraus.iter().any(|k| k.nrows() != dim_out || k.ncols() != dim_in) {
            return Err(Error::DimensionMismatch("Kraus operators differ in shape".into()));
        }
        let ch = Self {
            dim_in,
            dim_out,
            kraus,
        };
        let defect = ch.completeness_defect();
        if defect > COMPLETENESS_TOL {
            return Err(Error::InvalidInput(format!(
                "Kraus family is not trace preserving (defect {defect:.3e})"
            )));
        }
        Ok(ch.pruned())
    }

    fn pruned(mut self) -> Self {
        if self.kraus.len() > 1 {
            let keep: Vec<CMatrix> = self
                .kraus
                .iter()
                .filter(|k| max_abs(k) > 0.0)
                .cloned()
                .collect();
            if !keep.is_empty() {
                self.kraus = keep;
            }
        }
        self
    }

    pub fn completeness_defect(&self) -> f64 {
        let mut s = CMatrix::zeros(self.dim_in, self.dim_in);
        for k in &self.kraus {
            s += k.adjoint() * k;
        }
        max_abs(&(s - CMatrix::identity(self.dim_in, self.dim_in)))
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim_in: dim,
            dim_out: dim,
            kraus: vec![CMatrix::identity(dim, dim)],
        }
    }

    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    /// Unitary reordering the tensor factors of a space with the given dims;
    /// output factor `i` is input factor `perm[i]`.
    pub fn permutation(dims: &[usize], perm: &[usize]) -> Result<Self> {
        let map = permutation_map(dims, perm)?;
        let n = map.len();
        let mut u = CMatrix::zeros(n, n);
        for (new, &old) in map.iter().enumerate() {
            u[(new, old)] = c(1.0);
        }
        Ok(Self {
            dim_in: n,
            dim_out: n,
            kraus: vec![u],
        })
    }

    /// `ω ↦ Tr(ω)·σ₀`.
    pub fn replacer(sigma0: &DensityMatrix, dim_in: usize) -> Self {
        let spec = sigma0.spectrum();
        let tol = spec.kernel_tol();
        let d_out = sigma0.dim();
        let mut kraus = Vec::new();
        for (k, &v) in spec.values.iter().enumerate() {
            if v <= tol {
                continue;
            }
            let w = v.sqrt();
            for i in 0..dim_in {
                let mut m = CMatrix::zeros(d_out, dim_in);
                for o in 0..d_out {
                    m[(o, i)] = spec.vectors[(o, k)] * w;
                }
                kraus.push(m);
            }
        }
        Self {
            dim_in,
            dim_out: d_out,
            kraus,
        }
    }

    /// `ω ↦ (1−λ)ω + λ·Tr(ω)·τ`.
    pub fn generalized_depolarizing(tau: &DensityMatrix, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("lambda {lambda} outside [0,1]")));
        }
        let d = tau.dim();
        let mut kraus = Vec::new();
        if lambda < 1.0 {
            kraus.push(CMatrix::identity(d, d) * c((1.0 - lambda).sqrt()));
        }
        if lambda > 0.0 {
            let rep = Self::replacer(tau, d);
            kraus.extend(rep.kraus.into_iter().map(|k| k * c(lambda.sqrt())));
        }
        Self::new(kraus)
    }

    /// Measure-and-prepare channel writing outcome probabilities onto a diagonal register.
    pub fn povm_to_cq_channel(povm: &[HermitianOperator]) -> Result<Self> {
        let d = povm
            .first()
            .ok_or_else(|| Error::InvalidPovm("empty POVM".into()))?
            .dim();
        let mut sum = CMatrix::zeros(d, d);
        for m in povm {
            if m.dim() != d {
                return Err(Error::InvalidPovm("elements differ in dimension".into()));
            }
            if m.spectrum().values[0] < -COMPLETENESS_TOL {
                return Err(Error::InvalidPovm("element is not positive".into()));
            }
            sum += m.matrix();
        }
        if max_abs(&(sum - CMatrix::identity(d, d))) > COMPLETENESS_TOL {
            return Err(Error::InvalidPovm("elements do not sum to identity".into()));
        }
        let n = povm.len();
        let mut kraus = Vec::new();
        for (i, m) in povm.iter().enumerate() {
            let spec = m.spectrum();
            for (k, &v) in spec.values.iter().enumerate() {
                if v <= 0.0 {
                    continue;
                }
                let w = v.sqrt();
                let mut op = CMatrix::zeros(n, d);
                for a in 0..d {
                    op[(i, a)] = spec.vectors[(a, k)].conj() * w;
                }
                kraus.push(op);
            }
        }
        Self::new(kraus)
    }

    /// `ν ↦ Σ Π ν Π` for orthogonal projectors summing to the identity.
    pub fn pinching(projectors: &[HermitianOperator]) -> Result<Self> {
        let d = projectors
            .first()
            .ok_or_else(|| Error::InvalidPovm("no projectors".into()))?
            .dim();
        for (i, p) in projectors.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::InvalidPovm("projectors differ in dimension".into()));
            }
            for q in &projectors[i..] {
                let prod = p.matrix() * q.matrix();
                let want = if std::ptr::eq(p, q) {
                    p.matrix().clone()
                } else {
                    CMatrix::zeros(d, d)
                };
                if max_abs(&(prod - want)) > COMPLETENESS_TOL {
                    return Err(Error::InvalidPovm(
                        "projectors are not orthogonal and idempotent".into(),
                    ));
                }
            }
        }
        Self::new(projectors.iter().map(|p| p.matrix().clone()).collect())
            .map_err(|_| Error::InvalidPovm("projectors do not sum to identity".into()))
    }

    /// Classical channel `P[y][x] = P(y|x)`: maps `δ_x` to the column `P(·|x)` and
    /// dephases off-diagonal input entries.
    pub fn classical_channel_embed(stochastic: &[Vec<f64>]) -> Result<Self> {
        let d_out = stochastic.len();
        let d_in = stochastic.first().map(|r| r.len()).unwrap_or(0);
        if d_out == 0 || d_in == 0 || stochastic.iter().any(|r| r.len() != d_in) {
            return Err(Error::NotStochastic("ragged or empty matrix".into()));
        }
        for x in 0..d_in {
            let mut s = 0.0;
            for row in stochastic {
                if !(row[x] >= 0.0) {
                    return Err(Error::NotStochastic(format!("negative entry in column {x}")));
                }
                s += row[x];
            }
            if (s - 1.0).abs() > COMPLETENESS_TOL {
                return Err(Error::NotStochastic(format!("column {x} sums to {s}")));
            }
        }
        let mut kraus = Vec::new();
        for (y, row) in stochastic.iter().enumerate() {
            for (x, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let mut m = CMatrix::zeros(d_out, d_in);
                    m[(y, x)] = c(p.sqrt());
                    kraus.push(m);
                }
            }
        }
        Self::new(kraus)
    }

    /// Stinespring dilation of a Haar-random isometry `A → B ⊗ E`.
    pub fn random_channel(dim_in: usize, dim_out: usize, env_dim: usize, seed: u64) -> Result<Self> {
        if env_dim == 0 || dim_out * env_dim < dim_in {
            return Err(Error::InvalidInput(format!(
                "cannot embed dimension {dim_in} into {dim_out}x{env_dim}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let v = random_isometry(dim_out * env_dim, dim_in, &mut rng);
        let kraus = (0..env_dim)
            .map(|e| CMatrix::from_fn(dim_out, dim_in, |o, i| v[(o * env_dim + e, i)]))
            .collect();
        Self::new(kraus)
    }

    /// Applies the channel to factor `target` of `rho`, identity elsewhere.
    pub fn apply(&self, rho: &DensityMatrix, target: usize) -> Result<DensityMatrix> {
        let dims = rho.dims();
        if target >= dims.len() || dims[target] != self.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "channel input {} does not match factor {} of {:?}",
                self.dim_in, target, dims
            )));
        }
        let left: usize = dims[..target].iter().product();
        let right: usize = dims[target + 1..].iter().product();
        let out = self.apply_matrix(rho.matrix(), left, right);
        let mut new_dims = dims.to_vec();
        new_dims[target] = self.dim_out;
        DensityMatrix::from_operator(
            HermitianOperator::new(out)?,
            &new_dims,
            rho.is_normalized(),
        )
    }

    /// Applies the channel to a state on exactly its input space.
    pub fn apply_full(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dim() != self.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "channel input {} vs state {}",
                self.dim_in,
                rho.dim()
            )));
        }
        let out = self.apply_matrix(rho.matrix(), 1, 1);
        DensityMatrix::from_operator(
            HermitianOperator::new(out)?,
            &[self.dim_out],
            rho.is_normalized(),
        )
    }

    /// Applies the channel to every listed factor in turn.
    pub fn apply_each(&self, rho: &DensityMatrix, targets: &[usize]) -> Result<DensityMatrix> {
        let mut out = rho.clone();
        for &t in targets {
            out = self.apply(&out, t)?;
        }
        Ok(out)
    }

    /// `(1_L ⊗ Λ ⊗ 1_R)(m)` on a raw matrix.
    fn apply_matrix(&self, m: &CMatrix, left: usize, right: usize) -> CMatrix {
        let (din, dout) = (self.dim_in, self.dim_out);
        let n_in = left * din * right;
        let n_out = left * dout * right;
        if left == 1 && right == 1 {
            let mut acc = CMatrix::zeros(dout, dout);
            for k in &self.kraus {
                acc += k * m * k.adjoint();
            }
            return acc;
        }
        let mut acc = CMatrix::zeros(n_out, n_out);
        let mut half = CMatrix::zeros(n_out, n_in);
        for k in &self.kraus {
            // half = (1 ⊗ K ⊗ 1) m
            half.fill(C64::new(0.0, 0.0));
            for col in 0..n_in {
                for l in 0..left {
                    for r in 0..right {
                        for i in 0..din {
                            let v = m[((l * din + i) * right + r, col)];
                            if v == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for o in 0..dout {
                                let kv = k[(o, i)];
                                if kv != C64::new(0.0, 0.0) {
                                    half[((l * dout + o) * right + r, col)] += kv * v;
                                }
                            }
                        }
                    }
                }
            }
            // acc += half (1 ⊗ K† ⊗ 1)
            for l in 0..left {
                for r in 0..right {
                    for i in 0..din {
                        let col_in = (l * din + i) * right + r;
                        for o in 0..dout {
                            let kc = k[(o, i)].conj();
                            if kc == C64::new(0.0, 0.0) {
                                continue;
                            }
                            let col_out = (l * dout + o) * right + r;
                            for row in 0..n_out {
                                let h = half[(row, col_in)];
                                if h != C64::new(0.0, 0.0) {
                                    acc[(row, col_out)] += h * kc;
                                }
                            }
                        }
                    }
                }
            }
        }
        acc
    }

    /// Heisenberg-picture map `F ↦ Σ K† F K`.
    pub fn adjoint_apply(&self, f: &HermitianOperator) -> Result<HermitianOperator> {
        if f.dim() != self.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "observable dim {} vs channel output {}",
                f.dim(),
                self.dim_out
            )));
        }
        let mut acc = CMatrix::zeros(self.dim_in, self.dim_in);
        for k in &self.kraus {
            acc += k.adjoint() * f.matrix() * k;
        }
        HermitianOperator::new(acc)
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: &Self, inner: &Self) -> Result<Self> {
        if outer.dim_in != inner.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose {}->{} after {}->{}",
                outer.dim_in, outer.dim_out, inner.dim_in, inner.dim_out
            )));
        }
        let mut kraus = Vec::with_capacity(outer.kraus.len() * inner.kraus.len());
        for a in &outer.kraus {
            for b in &inner.kraus {
                kraus.push(a * b);
            }
        }
        Ok(Self::new(kraus)?.compressed())
    }

    pub fn tensor_channels(a: &Self, b: &Self) -> Self {
        let mut kraus = Vec::with_capacity(a.kraus.len() * b.kraus.len());
        for x in &a.kraus {
            for y in &b.kraus {
                kraus.push(tensor(x, y));
            }
        }
        Self {
            dim_in: a.dim_in * b.dim_in,
            dim_out: a.dim_out * b.dim_out,
            kraus,
        }
        .pruned()
        .compressed()
    }

    pub fn tensor_power(&self, n: usize) -> Self {
        assert!(n >= 1);
        let mut out = self.clone();
        for _ in 1..n {
            out = Self::tensor_channels(&out, self);
        }
        out
    }

    /// Replaces an oversized Kraus family by the canonical one from the Choi spectrum.
    fn compressed(self) -> Self {
        if self.kraus.len() <= self.dim_in * self.dim_out {
            return self;
        }
        Self::from_choi(&self.choi_matrix(), self.dim_in, self.dim_out).unwrap_or(self)
    }

    fn choi_matrix(&self) -> CMatrix {
        let (din, dout) = (self.dim_in, self.dim_out);
        let n = din * dout;
        let mut j = CMatrix::zeros(n, n);
        for k in &self.kraus {
            let gamma = crate::operator::CVector::from_fn(n, |idx, _| k[(idx % dout, idx / dout)]);
            j += &gamma * gamma.adjoint();
        }
        j
    }

    /// Unnormalized Choi operator `Σ_ij |i⟩⟨j| ⊗ Λ(|i⟩⟨j|)` on `A ⊗ B`.
    pub fn choi(&self) -> DensityMatrix {
        DensityMatrix::from_operator(
            HermitianOperator::new(self.choi_matrix()).expect("Choi operator is Hermitian"),
            &[self.dim_in, self.dim_out],
            false,
        )
        .expect("Choi operator is positive")
    }

    /// Canonical Kraus family from a Choi operator on `A ⊗ B`.
    pub fn from_choi(choi: &CMatrix, dim_in: usize, dim_out: usize) -> Result<Self> {
        let op = HermitianOperator::new(choi.clone())?;
        let spec = op.spectrum();
        let tol = spec.kernel_tol();
        let mut kraus = Vec::new();
        for (col, &v) in spec.values.iter().enumerate() {
            if v <= tol {
                continue;
            }
            let w = v.sqrt();
            kraus.push(CMatrix::from_fn(dim_out, dim_in, |o, i| {
                spec.vectors[(i * dim_out + o, col)] * w
            }));
        }
        Self::new(kraus)
    }

    /// `Λ(|i⟩⟨j|)` as a raw matrix.
    pub fn image_of_unit(&self, i: usize, j: usize) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim_out, self.dim_out);
        for k in &self.kraus {
            let a = k.column(i);
            let b = k.column(j);
            acc += a * b.adjoint();
        }
        acc
    }

    /// The column-stochastic matrix `P[y][x]` if the channel is classical:
    /// it kills off-diagonal inputs and maps basis states to diagonal outputs.
    pub fn as_stochastic(&self) -> Option<Vec<Vec<f64>>> {
        let (din, dout) = (self.dim_in, self.dim_out);
        let mut p = vec![vec![0.0; din]; dout];
        for i in 0..din {
            for j in 0..din {
                let img = self.image_of_unit(i, j);
                for a in 0..dout {
                    for b in 0..dout {
                        let v = img[(a, b)];
                        if (i != j || a != b) && v.norm() > STRUCTURE_TOL {
                            return None;
                        }
                    }
                }
                if i == j {
                    for y in 0..dout {
                        p[y][i] = img[(y, y)].re.max(0.0);
                    }
                }
            }
        }
        Some(p)
    }

    pub fn is_classical(&self) -> bool {
        self.as_stochastic().is_some()
    }

    /// The replaced state if the channel is `ω ↦ Tr(ω)σ₀`.
    pub fn as_replacer(&self) -> Option<DensityMatrix> {
        let first = self.image_of_unit(0, 0);
        for i in 0..self.dim_in {
            for j in 0..self.dim_in {
                let img = self.image_of_unit(i, j);
                let want = if i == j {
                    first.clone()
                } else {
                    CMatrix::zeros(self.dim_out, self.dim_out)
                };
                if max_abs(&(img - want)) > STRUCTURE_TOL {
                    return None;
                }
            }
        }
        DensityMatrix::new(first, &[self.dim_out]).ok()
    }

    pub fn to_json(&self) -> ChannelJson {
        ChannelJson {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            kraus: self.kraus.iter().map(RectJson::from_matrix).collect(),
        }
    }

    pub fn from_json(j: &ChannelJson) -> Result<Self> {
        let kraus = j
            .kraus
            .iter()
            .map(RectJson::to_matrix)
            .collect::<Result<Vec<_>>>()?;
        let ch = Self::new(kraus)?;
        if ch.dim_in != j.dim_in || ch.dim_out != j.dim_out {
            return Err(Error::DimensionMismatch(
                "declared channel dims disagree with Kraus shapes".into(),
            ));
        }
        Ok(ch)
    }
}

/// Row-major rectangular matrix.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RectJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl RectJson {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self { rows, cols, re, im }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.rows * self.cols;
        if self.re.len() != n || !(self.im.is_empty() || self.im.len() == n) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {}x{} matrix",
                n, self.rows, self.cols
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = i * self.cols + j;
            C64::new(self.re[k], self.im.get(k).copied().unwrap_or(0.0))
        }))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChannelJson {
    pub dim_in: usize,
    pub dim_out: usize,
    pub kraus: Vec<RectJson>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{random_density, random_hermitian};

    fn diff(a: &CMatrix, b: &CMatrix) -> f64 {
        max_abs(&(a - b))
    }

    fn qubit_mixed() -> DensityMatrix {
        DensityMatrix::maximally_mixed(2)
    }

    #[test]
    fn identity_and_replacer() {
        let rho = random_density(3, 3, 1).unwrap();
        let id = KrausChannel::identity(3);
        assert!(diff(id.apply_full(&rho).unwrap().matrix(), rho.matrix()) < 1e-15);

        let s0 = random_density(2, 2, 2).unwrap();
        let rep = KrausChannel::replacer(&s0, 3);
        assert!(diff(rep.apply_full(&rho).unwrap().matrix(), s0.matrix()) < 1e-12);

        let other = random_density(2, 2, 3).unwrap();
        let joint = other.tensor(&rho);
        let out = rep.apply(&joint, 1).unwrap();
        assert!(diff(out.matrix(), other.tensor(&s0).matrix()) < 1e-12);
        assert_eq!(out.dims(), &[2, 2]);
    }

    #[test]
    fn full_depolarization() {
        let ch = KrausChannel::generalized_depolarizing(&qubit_mixed(), 1.0).unwrap();
        let zero = DensityMatrix::from_diag(&[1.0, 0.0]).unwrap();
        assert!(diff(ch.apply_full(&zero).unwrap().matrix(), qubit_mixed().matrix()) < 1e-15);
    }

    #[test]
    fn depolarizing_affine_example() {
        let tau = DensityMatrix::from_diag(&[0.25, 0.75]).unwrap();
        let ch = KrausChannel::generalized_depolarizing(&tau, 0.5).unwrap();
        let out = ch.apply_full(&DensityMatrix::from_diag(&[1.0, 0.0]).unwrap()).unwrap();
        assert!((out.op().diagonal()[0] - 0.625).abs() < 1e-15);
        assert!((out.op().diagonal()[1] - 0.375).abs() < 1e-15);
        let id = KrausChannel::generalized_depolarizing(&tau, 0.0).unwrap();
        let rho = random_density(2, 2, 4).unwrap();
        assert!(diff(id.apply_full(&rho).unwrap().matrix(), rho.matrix()) < 1e-15);
    }

    #[test]
    fn depolarizing_composition() {
        let tau = qubit_mixed();
        let (l1, l2) = (0.3, 0.45);
        let a = KrausChannel::generalized_depolarizing(&tau, l1).unwrap();
        let b = KrausChannel::generalized_depolarizing(&tau, l2).unwrap();
        let ab = KrausChannel::compose(&b, &a).unwrap();
        let direct =
            KrausChannel::generalized_depolarizing(&tau, 1.0 - (1.0 - l1) * (1.0 - l2)).unwrap();
        for seed in 0..20 {
            let rho = random_density(2, 2, 100 + seed).unwrap();
            let x = ab.apply_full(&rho).unwrap();
            let y = direct.apply_full(&rho).unwrap();
            assert!(diff(x.matrix(), y.matrix()) < 1e-12);
        }
        let id = KrausChannel::identity(2);
        let same = KrausChannel::compose(&id, &a).unwrap();
        let rho = random_density(2, 2, 9).unwrap();
        assert!(diff(same.apply_full(&rho).unwrap().matrix(), a.apply_full(&rho).unwrap().matrix()) < 1e-14);
    }

    #[test]
    fn tensor_of_replacers() {
        let r = random_density(2, 2, 5).unwrap();
        let s = random_density(2, 2, 6).unwrap();
        let t = KrausChannel::tensor_channels(
            &KrausChannel::replacer(&r, 2),
            &KrausChannel::replacer(&s, 2),
        );
        let want = r.tensor(&s);
        let input = random_density(4, 4, 7).unwrap().with_dims(&[2, 2]).unwrap();
        assert!(diff(t.apply_full(&input).unwrap().matrix(), want.matrix()) < 1e-12);
        assert!(t.completeness_defect() < 1e-12);
    }

    #[test]
    fn adjoint_examples() {
        let f = random_hermitian(2, 8);
        let id = KrausChannel::identity(2);
        assert!(diff(id.adjoint_apply(&f).unwrap().matrix(), f.matrix()) < 1e-15);

        let s0 = random_density(2, 2, 10).unwrap();
        let rep = KrausChannel::replacer(&s0, 3);
        let tr = f.trace_product(s0.op()).unwrap();
        let out = rep.adjoint_apply(&f).unwrap();
        assert!(diff(out.matrix(), &(CMatrix::identity(3, 3) * c(tr))) < 1e-12);

        let ch = KrausChannel::random_channel(3, 2, 2, 5).unwrap();
        let rho = random_density(3, 3, 11).unwrap();
        let lhs = f.trace_product(ch.apply_full(&rho).unwrap().op()).unwrap();
        let rhs = ch.adjoint_apply(&f).unwrap().trace_product(rho.op()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
        let unit = ch.adjoint_apply(&HermitianOperator::identity(2)).unwrap();
        assert!(diff(unit.matrix(), &CMatrix::identity(3, 3)) < 1e-10);
    }

    #[test]
    fn povm_and_pinching() {
        let comp = vec![
            HermitianOperator::from_real_diag(&[1.0, 0.0]),
            HermitianOperator::from_real_diag(&[0.0, 1.0]),
        ];
        let ch = KrausChannel::povm_to_cq_channel(&comp).unwrap();
        let rho = DensityMatrix::from_diag(&[0.3, 0.7]).unwrap();
        assert!(diff(ch.apply_full(&rho).unwrap().matrix(), rho.matrix()) < 1e-15);

        let pin = KrausChannel::pinching(&[HermitianOperator::identity(2)]).unwrap();
        let r = random_density(2, 2, 12).unwrap();
        assert!(diff(pin.apply_full(&r).unwrap().matrix(), r.matrix()) < 1e-15);

        let h = 0.5;
        let plus = HermitianOperator::new(CMatrix::from_element(2, 2, c(h))).unwrap();
        let mut mm = CMatrix::from_element(2, 2, c(-h));
        mm[(0, 0)] = c(h);
        mm[(1, 1)] = c(h);
        let minus = HermitianOperator::new(mm).unwrap();
        let ch = KrausChannel::povm_to_cq_channel(&[plus, minus]).unwrap();
        let out = ch.apply_full(&DensityMatrix::from_diag(&[1.0, 0.0]).unwrap()).unwrap();
        assert!(diff(out.matrix(), qubit_mixed().matrix()) < 1e-15);

        let bad = vec![HermitianOperator::from_real_diag(&[1.0, 0.5])];
        assert!(matches!(
            KrausChannel::povm_to_cq_channel(&bad),
            Err(Error::InvalidPovm(_))
        ));
    }

    #[test]
    fn classical_embedding() {
        let ch = KrausChannel::classical_channel_embed(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = random_density(2, 2, 13).unwrap();
        let out = ch.apply_full(&r).unwrap();
        assert!(out.is_diagonal());
        assert_eq!(out.op().diagonal(), r.op().diagonal());

        let flip = KrausChannel::classical_channel_embed(&[vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let out = flip.apply_full(&DensityMatrix::from_diag(&[1.0, 0.0]).unwrap()).unwrap();
        assert!((out.op().diagonal()[0] - 0.7).abs() < 1e-15);

        let q = [0.2, 0.8];
        let cols = KrausChannel::classical_channel_embed(&[vec![q[0]; 3], vec![q[1]; 3]]).unwrap();
        let rep = cols.as_replacer().unwrap();
        assert!(diff(rep.matrix(), DensityMatrix::from_diag(&q).unwrap().matrix()) < 1e-15);
        assert!(cols.is_classical());
        assert!(!KrausChannel::random_channel(2, 2, 2, 1).unwrap().is_classical());

        assert!(matches!(
            KrausChannel::classical_channel_embed(&[vec![0.5], vec![0.6]]),
            Err(Error::NotStochastic(_))
        ));
    }

    #[test]
    fn random_channel_properties() {
        let u = KrausChannel::random_channel(3, 3, 1, 4).unwrap();
        assert_eq!(u.kraus().len(), 1);
        let ku = &u.kraus()[0];
        assert!(diff(&(ku.adjoint() * ku), &CMatrix::identity(3, 3)) < 1e-12);
        let a = KrausChannel::random_channel(2, 2, 2, 9).unwrap();
        let b = KrausChannel::random_channel(2, 2, 2, 9).unwrap();
        assert_eq!(a.kraus(), b.kraus());
        assert!(a.completeness_defect() < 1e-10);
    }

    #[test]
    fn choi_round_trip() {
        let ch = KrausChannel::random_channel(2, 3, 2, 14).unwrap();
        let j = ch.choi();
        assert!((j.trace() - 2.0).abs() < 1e-12);
        let back = KrausChannel::from_choi(j.matrix(), 2, 3).unwrap();
        let rho = random_density(2, 2, 15).unwrap();
        assert!(diff(back.apply_full(&rho).unwrap().matrix(), ch.apply_full(&rho).unwrap().matrix()) < 1e-10);
    }

    #[test]
    fn apply_middle_factor_matches_kronecker() {
        let ch = KrausChannel::random_channel(2, 3, 2, 16).unwrap();
        let rho = random_density(12, 12, 17).unwrap().with_dims(&[3, 2, 2]).unwrap();
        let out = ch.apply(&rho, 1).unwrap();
        let mut want = CMatrix::zeros(18, 18);
        for k in ch.kraus() {
            let big = tensor(&tensor(&CMatrix::identity(3, 3), k), &CMatrix::identity(2, 2));
            want += &big * rho.matrix() * big.adjoint();
        }
        assert!(diff(out.matrix(), &want) < 1e-12);
        assert_eq!(out.dims(), &[3, 3, 2]);
    }

    #[test]
    fn json_round_trip() {
        let ch = KrausChannel::random_channel(2, 2, 2, 18).unwrap();
        let text = serde_json::to_string(&ch.to_json()).unwrap();
        let back = KrausChannel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.kraus(), ch.kraus());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn trace_and_positivity(din in 1usize..5, dout in 1usize..5, env in 1usize..4, seed in any::<u64>()) {
                prop_assume!(dout * env >= din);
                let ch = KrausChannel::random_channel(din, dout, env, seed).unwrap();
                let rho = random_density(din, din, seed ^ 0x5a5a).unwrap();
                let out = ch.apply_full(&rho).unwrap();
                prop_assert!((out.trace() - 1.0).abs() < 1e-9);
                prop_assert!(out.spectrum().values[0] >= -1e-9);
            }

            #[test]
            fn adjoint_duality(din in 1usize..5, dout in 1usize..5, seed in any::<u64>()) {
                let ch = KrausChannel::random_channel(din, dout, din, seed).unwrap();
                let rho = random_density(din, din, seed.wrapping_add(1)).unwrap();
                let f = random_hermitian(dout, seed.wrapping_add(2));
                let lhs = f.trace_product(ch.apply_full(&rho).unwrap().op()).unwrap();
                let rhs = ch.adjoint_apply(&f).unwrap().trace_product(rho.op()).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }

            #[test]
            fn depolarizing_affine(lambda in 0.0f64..=1.0, s1 in any::<u64>(), s2 in any::<u64>()) {
                let tau = random_density(3, 3, s1).unwrap();
                let ch = KrausChannel::generalized_depolarizing(&tau, lambda).unwrap();
                let w = random_density(3, 2, s2).unwrap();
                let want = w.matrix() * c(1.0 - lambda) + tau.matrix() * c(lambda);
                prop_assert!(diff(ch.apply_full(&w).unwrap().matrix(), &want) < 1e-10);
            }
        }
    }
}
