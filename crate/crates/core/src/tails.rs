//! Tail sequences with very different decay rates, the interleaved basis
//! pair built from them, and growth diagnostics for truncated divergences.
//!
//! With `ρ_p` diagonal in the computational basis `{a_i}` and `σ_q` diagonal
//! in the paired basis `{b_i}`, both are block diagonal with `N/2` blocks of
//! size two. Every divergence used here is then a sum, log-sum or max of
//! closed-form 2×2 terms. Weights are kept as logarithms of the form
//! `log₂ x = −2^dexp − lin`, so the doubly exponential `r` sequence can be
//! evaluated well past the index where its entries underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergences::DivergenceKind;
use crate::error::{Error, Result};
use crate::operator::{c, CMatrix, DensityMatrix};
use crate::util::{ext_real, ext_real_opt, ext_real_vec, fmt_real, log2_add};

pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const DIVERGENCE_STEP: f64 = 1e-3;
/// Largest truncation for `r` except with the relative entropy; `r_11` underflows.
pub const R_TRUNCATION_LIMIT: usize = 10;
pub const MAX_TRUNCATION: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceRule {
    P,
    Q,
    R,
    Custom,
}

/// Positive weight `x` with `log₂ x = −(2^dexp + lin)`; `dexp = −∞` drops the
/// doubly exponential part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogWeight {
    #[serde(with = "ext_real")]
    pub dexp: f64,
    #[serde(with = "ext_real")]
    pub lin: f64,
}

impl LogWeight {
    pub fn plain(log2_value: f64) -> Self {
        Self {
            dexp: f64::NEG_INFINITY,
            lin: -log2_value,
        }
    }

    pub fn neg_log2(&self) -> f64 {
        self.dexp.exp2() + self.lin
    }

    pub fn log2(&self) -> f64 {
        -self.neg_log2()
    }

    pub fn value(&self) -> f64 {
        self.log2().exp2()
    }

    fn times(self, log2_factor: f64) -> Self {
        Self {
            dexp: self.dexp,
            lin: self.lin - log2_factor,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassicalSequence {
    pub rule: SequenceRule,
    pub normalized: bool,
    pub values: Vec<f64>,
    pub weights: Vec<LogWeight>,
    /// First (1-based) index whose entry is positive but rounds to 0.
    pub underflow_index: Option<usize>,
    /// `log₂` of the partial sum before any normalization.
    pub log2_partial_sum: f64,
}

impl ClassicalSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn rule_weight(rule: SequenceRule, n: usize) -> LogWeight {
    let x = n as f64;
    let base = x + 2.0 * x.log2();
    match rule {
        SequenceRule::P | SequenceRule::Custom => LogWeight::plain(-base),
        SequenceRule::Q => LogWeight::plain(-base - x.log2()),
        SequenceRule::R => LogWeight { dexp: x, lin: base },
    }
}

fn rule_value(rule: SequenceRule, n: usize) -> f64 {
    let x = n as f64;
    let p = (-x).exp2() / (x * x);
    match rule {
        SequenceRule::P | SequenceRule::Custom => p,
        SequenceRule::Q => p / x,
        SequenceRule::R => p * (-x.exp2()).exp2(),
    }
}

/// Streaming `log₂ Σ 2^{x_i}`.
fn log2_sum_iter(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
    for x in xs {
        if x == f64::NEG_INFINITY {
            continue;
        }
        if x > m {
            s = s * (m - x).exp2() + 1.0;
            m = x;
        } else {
            s += (x - m).exp2();
        }
    }
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + s.log2()
    }
}

fn log2_partial_sum(rule: SequenceRule, n: usize) -> f64 {
    log2_sum_iter((1..=n).map(|i| rule_weight(rule, i).log2()))
}

fn finish(rule: SequenceRule, mut values: Vec<f64>, mut weights: Vec<LogWeight>, normalize: bool) -> ClassicalSequence {
    let log2_partial_sum = log2_sum_iter(weights.iter().map(LogWeight::log2));
    let underflow_index = values
        .iter()
        .zip(&weights)
        .position(|(&v, w)| v == 0.0 && w.log2() > f64::NEG_INFINITY)
        .map(|i| i + 1);
    if normalize {
        let z = log2_partial_sum.exp2();
        values.iter_mut().for_each(|v| *v /= z);
        weights.iter_mut().for_each(|w| w.lin += log2_partial_sum);
    }
    ClassicalSequence {
        rule,
        normalized: normalize,
        values,
        weights,
        underflow_index,
        log2_partial_sum,
    }
}

/// `p_n = 2^{−n}/n²`, `q_n = p_n/n`, `r_n = p_n 2^{−2^n}` for `n = 1..N`.
pub fn make_sequence(rule: SequenceRule, n: usize, normalize: bool) -> Result<ClassicalSequence> {
    if n == 0 {
        return Err(Error::PreconditionViolated("truncation must be at least 1".into()));
    }
    if rule == SequenceRule::Custom {
        return Err(Error::InvalidInput("custom sequences are built with custom_sequence".into()));
    }
    let values = (1..=n).map(|i| rule_value(rule, i)).collect();
    let weights = (1..=n).map(|i| rule_weight(rule, i)).collect();
    Ok(finish(rule, values, weights, normalize))
}

/// Sequence `f(1), …, f(N)` from a generator.
pub fn custom_sequence<F: Fn(usize) -> f64>(f: F, n: usize, normalize: bool) -> Result<ClassicalSequence> {
    if n == 0 {
        return Err(Error::PreconditionViolated("truncation must be at least 1".into()));
    }
    let values: Vec<f64> = (1..=n).map(f).collect();
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("sequence entry {bad} is not a finite non-negative number")));
    }
    let weights = values.iter().map(|v| LogWeight::plain(v.log2())).collect();
    Ok(finish(SequenceRule::Custom, values, weights, normalize))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicalKind {
    Kl,
    Renyi(f64),
    Dmax,
}

impl ClassicalKind {
    pub fn from_kind(kind: DivergenceKind) -> Result<Self> {
        match kind {
            DivergenceKind::Umegaki => Ok(Self::Kl),
            DivergenceKind::Petz(a) | DivergenceKind::Geometric(a) => Ok(Self::Renyi(a)),
            DivergenceKind::Dmax => Ok(Self::Dmax),
            DivergenceKind::Hypothesis(_) => Err(Error::InvalidInput(
                "hypothesis testing has no closed classical tail form here".into(),
            )),
        }
    }
}

/// Whether the relative entropy carries the `Σ(v − u)` term for unnormalized inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlConvention {
    Normalized,
    Unnormalized,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite() && alpha != 1.0) {
        return Err(Error::PreconditionViolated(format!("Rényi order {alpha} must be in [0,1)∪(1,∞)")));
    }
    Ok(())
}

/// Classical divergences of non-negative vectors.
pub fn classical_divergence(kind: ClassicalKind, u: &[f64], v: &[f64], convention: KlConvention) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} entries", u.len(), v.len())));
    }
    let pairs = u.iter().zip(v).filter(|(a, _)| **a > 0.0);
    Ok(match kind {
        ClassicalKind::Kl => {
            let mut acc = 0.0;
            for (&a, &b) in pairs {
                if b <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                acc += a * (a / b).log2();
            }
            if convention == KlConvention::Unnormalized {
                acc += v.iter().sum::<f64>() - u.iter().sum::<f64>();
            }
            acc
        }
        ClassicalKind::Renyi(alpha) => {
            check_alpha(alpha)?;
            let mut s = 0.0;
            for (&a, &b) in pairs {
                if b <= 0.0 {
                    if alpha > 1.0 {
                        return Ok(f64::INFINITY);
                    }
                    continue;
                }
                s += b * (a / b).powf(alpha);
            }
            if s <= 0.0 {
                f64::INFINITY
            } else {
                s.log2() / (alpha - 1.0)
            }
        }
        ClassicalKind::Dmax => pairs
            .map(|(&a, &b)| if b <= 0.0 { f64::INFINITY } else { (a / b).log2() })
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// [`classical_divergence`] on log-domain weights.
pub fn classical_divergence_log(
    kind: ClassicalKind,
    u: &[LogWeight],
    v: &[LogWeight],
    convention: KlConvention,
) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} entries", u.len(), v.len())));
    }
    let pairs = u.iter().zip(v).filter(|(a, _)| a.log2() > f64::NEG_INFINITY);
    Ok(match kind {
        ClassicalKind::Kl => {
            let mut acc = 0.0;
            for (a, b) in pairs {
                if b.log2() == f64::NEG_INFINITY {
                    return Ok(f64::INFINITY);
                }
                let la = a.log2();
                // u (log u − log v) = u 2^{dv} − u 2^{du} + u (lin_v − lin_u)
                acc += (la + b.dexp).exp2() - (la + a.dexp).exp2() + la.exp2() * (b.lin - a.lin);
            }
            if convention == KlConvention::Unnormalized {
                acc += v.iter().map(LogWeight::value).sum::<f64>() - u.iter().map(LogWeight::value).sum::<f64>();
            }
            acc
        }
        ClassicalKind::Renyi(alpha) => {
            check_alpha(alpha)?;
            let mut terms = Vec::new();
            for (a, b) in pairs {
                let lb = b.log2();
                if lb == f64::NEG_INFINITY {
                    if alpha > 1.0 {
                        return Ok(f64::INFINITY);
                    }
                    continue;
                }
                terms.push(alpha * a.log2() + (1.0 - alpha) * lb);
            }
            let lq = log2_sum_iter(terms.into_iter());
            if lq == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                lq / (alpha - 1.0)
            }
        }
        ClassicalKind::Dmax => pairs
            .map(|(a, b)| b.neg_log2() - a.neg_log2())
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Blockwise max (`q↑`) and min (`q↓`) over consecutive index pairs.
pub fn q_up_down(q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.len() % 2 != 0 {
        return Err(Error::OddLength(q.len()));
    }
    let mut up = Vec::with_capacity(q.len());
    let mut down = Vec::with_capacity(q.len());
    for pair in q.chunks(2) {
        let (hi, lo) = (pair[0].max(pair[1]), pair[0].min(pair[1]));
        up.extend([hi, hi]);
        down.extend([lo, lo]);
    }
    Ok((up, down))
}

/// Columns `b_{2k} = (a_{2k} + a_{2k+1})/√2`, `b_{2k+1} = (a_{2k} − a_{2k+1})/√2`.
pub fn basis_b(dim: usize) -> Result<CMatrix> {
    if dim % 2 != 0 {
        return Err(Error::OddDimension(dim));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = CMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        let (i, j) = (2 * k, 2 * k + 1);
        u[(i, i)] = c(h);
        u[(j, i)] = c(h);
        u[(i, j)] = c(h);
        u[(j, j)] = c(-h);
    }
    Ok(u)
}

/// `ρ = Σ a_i |a_i⟩⟨a_i|` and `σ = Σ b_i |b_i⟩⟨b_i|`.
pub fn rho_sigma_pair(dist_a: &[f64], dist_b: &[f64]) -> Result<(DensityMatrix, DensityMatrix)> {
    if dist_a.len() != dist_b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} entries", dist_a.len(), dist_b.len())));
    }
    let n = dist_a.len();
    let u = basis_b(n)?;
    let build = |m: CMatrix, total: f64| {
        if (total - 1.0).abs() < 1e-12 {
            DensityMatrix::new(m, &[n])
        } else {
            DensityMatrix::new_unnormalized(m, &[n])
        }
    };
    let diag = |d: &[f64]| CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, d.iter().map(|&x| c(x))));
    let rho = build(diag(dist_a), dist_a.iter().sum())?;
    let sigma = build(&u * diag(dist_b) * u.adjoint(), dist_b.iter().sum())?;
    Ok((rho, sigma))
}

// ---------------------------------------------------------------------------
// 2×2 block evaluator

/// One block in the `b` basis: `A = 2^s [[a0, a1], [a1, a2]]`, `B = diag(b)`.
#[derive(Clone, Copy, Debug)]
struct Block {
    s: f64,
    a: [f64; 3],
    b: [LogWeight; 2],
}

fn eig2(a: [f64; 3]) -> [f64; 2] {
    let mean = 0.5 * (a[0] + a[2]);
    let r = (0.5 * (a[0] - a[2])).hypot(a[1]);
    let mu1 = mean + r;
    let det = a[0].mul_add(a[2], -a[1] * a[1]).max(0.0);
    [mu1, if mu1 > 0.0 { det / mu1 } else { 0.0 }]
}

/// Unit eigenvectors of a symmetric 2×2 matrix, largest eigenvalue first,
/// computed without cancellation in the small component.
fn eigvec2(m: [f64; 3]) -> [[f64; 2]; 2] {
    let half = 0.5 * (m[0] - m[2]);
    let r = half.hypot(m[1]);
    let v = if half >= 0.0 { [half + r, m[1]] } else { [m[1], r - half] };
    let norm = v[0].hypot(v[1]);
    let v1 = if norm > 0.0 { [v[0] / norm, v[1] / norm] } else { [1.0, 0.0] };
    [v1, [-v1[1], v1[0]]]
}

impl Block {
    fn state(lp: [f64; 2], b: [LogWeight; 2]) -> Self {
        let s = lp[0].max(lp[1]);
        if s == f64::NEG_INFINITY {
            return Self { s: 0.0, a: [0.0; 3], b };
        }
        let (p0, p1) = ((lp[0] - s).exp2(), (lp[1] - s).exp2());
        Self {
            s,
            a: [0.5 * (p0 + p1), 0.5 * (p0 - p1), 0.5 * (p0 + p1)],
            b,
        }
    }

    fn amax(&self) -> f64 {
        self.a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `(λA, λB)`.
    fn scaled(&self, lambda: f64) -> Self {
        let l = lambda.log2();
        Self {
            s: self.s + l,
            a: self.a,
            b: self.b.map(|w| w.times(l)),
        }
    }

    /// `(λA + (1−λ)B, B)`.
    fn mix_sigma(&self, lambda: f64) -> Self {
        let (ll, lm) = (lambda.log2(), (1.0 - lambda).log2());
        let lb = [self.b[0].log2(), self.b[1].log2()];
        let s2 = (ll + self.s + self.amax().log2()).max(lm + lb[0]).max(lm + lb[1]);
        let f = (ll + self.s - s2).exp2();
        let a = [
            self.a[0] * f + (lm + lb[0] - s2).exp2(),
            self.a[1] * f,
            self.a[2] * f + (lm + lb[1] - s2).exp2(),
        ];
        Self { s: s2, a, b: self.b }
    }

    /// `(λA + (1−λ)|j⟩⟨j|, λB + (1−λ)|j⟩⟨j|)`.
    fn probe(&self, j: usize, lambda: f64) -> Self {
        let (ll, lm) = (lambda.log2(), (1.0 - lambda).log2());
        let s2 = (ll + self.s + self.amax().log2()).max(lm);
        let f = (ll + self.s - s2).exp2();
        let mut a = self.a.map(|x| x * f);
        a[2 * j] += (lm - s2).exp2();
        let mut b = self.b.map(|w| w.times(ll));
        if lambda < 1.0 {
            b[j] = LogWeight::plain(log2_add(ll + self.b[j].log2(), lm));
        }
        Self { s: s2, a, b }
    }

    fn umegaki(&self) -> Score {
        let mut x = 0.0;
        for mu in eig2(self.a) {
            if mu > 0.0 {
                let l = self.s + mu.log2();
                x += l.exp2() * l;
            }
        }
        for j in 0..2 {
            let ajj = self.a[2 * j];
            if ajj > 0.0 {
                let la = self.s + ajj.log2();
                x += (la + self.b[j].dexp).exp2() + la.exp2() * self.b[j].lin;
            }
        }
        Score {
            x,
            tr_a: self.s.exp2() * (self.a[0] + self.a[2]),
            tr_b: self.b[0].value() + self.b[1].value(),
        }
    }

    fn petz_log_q(&self, alpha: f64) -> f64 {
        let mu = eig2(self.a);
        let v = eigvec2(self.a);
        let mut terms = [f64::NEG_INFINITY; 2];
        for (j, t) in terms.iter_mut().enumerate() {
            let d: f64 = (0..2)
                .filter(|&k| mu[k] > 0.0)
                .map(|k| mu[k].powf(alpha) * v[k][j] * v[k][j])
                .sum();
            if d > 0.0 {
                *t = alpha * self.s + d.log2() + (alpha - 1.0) * self.b[j].neg_log2();
            }
        }
        log2_add(terms[0], terms[1])
    }

    /// `log₂` eigenvalues of `B^{−1/2} A B^{−1/2}` and `log₂ ‖B^{1/2} v_k‖²`.
    fn relative_spectrum(&self) -> ([f64; 2], [f64; 2]) {
        let nl = [self.b[0].neg_log2(), self.b[1].neg_log2()];
        if !(nl[0].is_finite() && nl[1].is_finite()) {
            return ([f64::INFINITY; 2], [0.0; 2]);
        }
        let lg = |x: f64| if x > 0.0 { x.log2() } else { f64::NEG_INFINITY };
        let lm11 = self.s + lg(self.a[0]) + nl[0];
        let lm22 = self.s + lg(self.a[2]) + nl[1];
        let lm12 = self.s + lg(self.a[1].abs()) + 0.5 * (nl[0] + nl[1]);
        let t = lm11.max(lm22);
        if t == f64::NEG_INFINITY {
            return ([f64::NEG_INFINITY; 2], [0.0; 2]);
        }
        let m = [
            (lm11 - t).exp2(),
            (lm12 - t).exp2().copysign(self.a[1]),
            (lm22 - t).exp2(),
        ];
        let det_a = self.a[0].mul_add(self.a[2], -self.a[1] * self.a[1]).max(0.0);
        let det = (2.0 * self.s + lg(det_a) + nl[0] + nl[1] - 2.0 * t).exp2();
        let mean = 0.5 * (m[0] + m[2]);
        let mu1 = mean + (0.5 * (m[0] - m[2])).hypot(m[1]);
        let mu2 = det / mu1;
        let v = eigvec2(m);
        let lw = |vk: [f64; 2]| log2_add(-nl[0] + 2.0 * lg(vk[0].abs()), -nl[1] + 2.0 * lg(vk[1].abs()));
        ([t + mu1.log2(), t + lg(mu2)], [lw(v[0]), lw(v[1])])
    }

    fn geometric_log_q(&self, alpha: f64) -> f64 {
        let (lmu, lw) = self.relative_spectrum();
        let term = |k: usize| {
            if lmu[k] == f64::NEG_INFINITY {
                if alpha == 0.0 { lw[k] } else { f64::NEG_INFINITY }
            } else {
                alpha * lmu[k] + lw[k]
            }
        };
        log2_add(term(0), term(1))
    }

    fn dmax(&self) -> f64 {
        self.relative_spectrum().0[0]
    }
}

#[derive(Clone, Copy, Debug)]
struct Score {
    x: f64,
    tr_a: f64,
    tr_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Eval {
    Umegaki,
    Petz(f64),
    Geometric(f64),
    Dmax,
}

impl Eval {
    fn from_kind(kind: DivergenceKind) -> Result<Self> {
        Ok(match kind {
            DivergenceKind::Umegaki => Self::Umegaki,
            DivergenceKind::Petz(a) => {
                check_alpha(a)?;
                Self::Petz(a)
            }
            DivergenceKind::Geometric(a) => {
                if !((0.0..1.0).contains(&a) || (a > 1.0 && a <= 2.0)) {
                    return Err(Error::PreconditionViolated(format!("geometric order {a} outside [0,1)∪(1,2]")));
                }
                Self::Geometric(a)
            }
            DivergenceKind::Dmax => Self::Dmax,
            DivergenceKind::Hypothesis(_) => {
                return Err(Error::InvalidInput("tail diagnostics support umegaki, petz, geometric and dmax".into()))
            }
        })
    }

    fn score(&self, b: &Block) -> Score {
        let x = match *self {
            Self::Umegaki => return b.umegaki(),
            Self::Petz(a) => b.petz_log_q(a),
            Self::Geometric(a) => b.geometric_log_q(a),
            Self::Dmax => b.dmax(),
        };
        Score { x, tr_a: 0.0, tr_b: 0.0 }
    }

    fn identity(&self) -> f64 {
        match self {
            Self::Umegaki => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }

    fn join(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Umegaki => a + b,
            Self::Petz(_) | Self::Geometric(_) => log2_add(a, b),
            Self::Dmax => a.max(b),
        }
    }

    /// Block score of `(λA, λB)` from that of `(A, B)`.
    fn scale(&self, x: f64, lambda: f64) -> f64 {
        match self {
            Self::Umegaki => lambda * x,
            Self::Petz(_) | Self::Geometric(_) => x + lambda.log2(),
            Self::Dmax => x,
        }
    }

    fn finish(&self, raw: f64) -> f64 {
        match *self {
            Self::Petz(a) | Self::Geometric(a) => {
                if raw == f64::NEG_INFINITY {
                    f64::INFINITY
                } else {
                    raw / (a - 1.0)
                }
            }
            _ => raw,
        }
    }

    fn evaluate(&self, blocks: impl Iterator<Item = Block>, lindblad: bool) -> f64 {
        let (mut raw, mut tr_a, mut tr_b) = (self.identity(), 0.0, 0.0);
        for b in blocks {
            let s = self.score(&b);
            raw = self.join(raw, s.x);
            tr_a += s.tr_a;
            tr_b += s.tr_b;
        }
        if lindblad && *self == Self::Umegaki {
            raw += tr_b - tr_a;
        }
        self.finish(raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailPair {
    Pq,
    Pr,
}

impl TailPair {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pq" => Ok(Self::Pq),
            "pr" => Ok(Self::Pr),
            other => Err(Error::InvalidInput(format!("unknown pair '{other}' (pq|pr)"))),
        }
    }

    pub fn second(&self) -> SequenceRule {
        match self {
            Self::Pq => SequenceRule::Q,
            Self::Pr => SequenceRule::R,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pq => "pq",
            Self::Pr => "pr",
        }
    }
}

/// Truncated `(ρ_p, σ_second)` at `n` levels, blocks generated lazily.
struct Setup {
    second: SequenceRule,
    n: usize,
    lz_p: f64,
    lz_s: f64,
}

impl Setup {
    fn new(pair: TailPair, n: usize, normalize: bool) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::OddDimension(n));
        }
        if n > MAX_TRUNCATION {
            return Err(Error::CapExceeded { dim: n, cap: MAX_TRUNCATION });
        }
        let second = pair.second();
        let (lz_p, lz_s) = if normalize {
            (log2_partial_sum(SequenceRule::P, n), log2_partial_sum(second, n))
        } else {
            (0.0, 0.0)
        };
        Ok(Self { second, n, lz_p, lz_s })
    }

    fn block(&self, k: usize) -> Block {
        let (i, j) = (2 * k + 1, 2 * k + 2);
        let lp = |m| rule_weight(SequenceRule::P, m).log2() - self.lz_p;
        let w = |m| {
            let mut x = rule_weight(self.second, m);
            x.lin += self.lz_s;
            x
        };
        Block::state([lp(i), lp(j)], [w(i), w(j)])
    }

    fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        (0..self.n / 2).map(|k| self.block(k))
    }
}

/// `D(ρ_p ‖ σ)` for the truncated pair, from the block evaluator.
pub fn state_divergence(pair: TailPair, kind: DivergenceKind, n: usize, normalize: bool) -> Result<f64> {
    let eval = Eval::from_kind(kind)?;
    let setup = Setup::new(pair, n, normalize)?;
    Ok(eval.evaluate(setup.blocks(), !normalize))
}

/// Inputs to the generalized depolarizing pair `Λ^λ_ρ`, `Λ^λ_σ` used as lower bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInput {
    Sigma,
    Basis(usize),
}

impl ProbeInput {
    pub fn label(&self) -> String {
        match self {
            Self::Sigma => "sigma".into(),
            Self::Basis(j) => format!("b{j}"),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::PreconditionViolated(format!("λ = {lambda} must lie in (0,1]")));
    }
    Ok(())
}

/// `D(Λ^λ_ρ(ω) ‖ Λ^λ_σ(ω))` for one input, normalized sequences, evaluated
/// block by block.
pub fn channel_probe_value(pair: TailPair, kind: DivergenceKind, n: usize, lambda: f64, input: ProbeInput) -> Result<f64> {
    check_lambda(lambda)?;
    let eval = Eval::from_kind(kind)?;
    let setup = Setup::new(pair, n, true)?;
    Ok(match input {
        ProbeInput::Sigma => eval.evaluate(setup.blocks().map(|b| b.mix_sigma(lambda)), false),
        ProbeInput::Basis(j) => {
            if j >= n {
                return Err(Error::InvalidInput(format!("basis index {j} ≥ {n}")));
            }
            let blocks = setup.blocks().enumerate().map(|(k, b)| {
                if k == j / 2 {
                    b.probe(j % 2, lambda)
                } else {
                    b.scaled(lambda)
                }
            });
            eval.evaluate(blocks, false)
        }
    })
}

/// Best of all probe inputs, in `O(N)` via prefix and suffix reductions.
pub fn channel_lower_bound(pair: TailPair, kind: DivergenceKind, n: usize, lambda: f64) -> Result<(f64, ProbeInput)> {
    check_lambda(lambda)?;
    let eval = Eval::from_kind(kind)?;
    let setup = Setup::new(pair, n, true)?;
    let mut best = (
        eval.evaluate(setup.blocks().map(|b| b.mix_sigma(lambda)), false),
        ProbeInput::Sigma,
    );
    let blocks: Vec<Block> = setup.blocks().collect();
    let xs: Vec<f64> = blocks.iter().map(|b| eval.scale(eval.score(b).x, lambda)).collect();
    let m = xs.len();
    let mut suffix = vec![eval.identity(); m + 1];
    for k in (0..m).rev() {
        suffix[k] = eval.join(xs[k], suffix[k + 1]);
    }
    let mut prefix = eval.identity();
    for (k, b) in blocks.iter().enumerate() {
        let rest = eval.join(prefix, suffix[k + 1]);
        for j in 0..2 {
            let v = eval.finish(eval.join(rest, eval.score(&b.probe(j, lambda)).x));
            if v > best.0 {
                best = (v, ProbeInput::Basis(2 * k + j));
            }
        }
        prefix = eval.join(prefix, xs[k]);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Converged,
    Diverging,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthFit {
    /// Extra truncation near `N_max/2` used for the convergence test.
    pub half_n: Option<usize>,
    #[serde(with = "ext_real_opt")]
    pub half_value: Option<f64>,
    /// Last-window slope against `log₂ N`.
    #[serde(with = "ext_real")]
    pub slope_log_n: f64,
    /// Last-window slope against `N`.
    #[serde(with = "ext_real")]
    pub slope_n: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthDiagnosis {
    pub divergence: String,
    pub pair: TailPair,
    pub normalized: bool,
    #[serde(with = "ext_real_opt")]
    pub lambda: Option<f64>,
    pub grid: Vec<usize>,
    /// State divergence, or in channel mode the best probe value (a lower bound).
    #[serde(with = "ext_real_vec")]
    pub values: Vec<f64>,
    /// Channel mode only: the state divergence, an upper bound on the channel one.
    #[serde(with = "ext_real_vec")]
    pub upper: Vec<f64>,
    pub witnesses: Vec<String>,
    /// Classical divergence of the sequences at the same truncations.
    #[serde(with = "ext_real_vec")]
    pub classical: Vec<f64>,
    pub classification: Classification,
    pub fit: GrowthFit,
    pub underflow_index: Option<usize>,
}

impl GrowthDiagnosis {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,value,classification\n");
        let class = serde_json::to_value(self.classification)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        for (n, v) in self.grid.iter().zip(&self.values) {
            out.push_str(&format!("{n},{},{class}\n", fmt_real(*v)));
        }
        out
    }
}

/// Truncations used when none are given.
pub fn default_grid(pair: TailPair, kind: DivergenceKind) -> Vec<usize> {
    match (pair, kind) {
        (TailPair::Pq, _) => vec![8, 16, 32, 64],
        (TailPair::Pr, DivergenceKind::Umegaki) => (1..=22).map(|k| 1 << k).collect(),
        (TailPair::Pr, _) => vec![2, 4, 6, 8, 10],
    }
}

fn validate_grid(pair: TailPair, eval: Eval, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::PreconditionViolated("empty truncation grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::PreconditionViolated("truncation grid must increase".into()));
    }
    for &n in grid {
        if n == 0 || n % 2 != 0 {
            return Err(Error::OddDimension(n));
        }
        if n > MAX_TRUNCATION {
            return Err(Error::CapExceeded { dim: n, cap: MAX_TRUNCATION });
        }
        if pair == TailPair::Pr && eval != Eval::Umegaki && n > R_TRUNCATION_LIMIT {
            return Err(Error::CapExceeded { dim: n, cap: R_TRUNCATION_LIMIT });
        }
    }
    Ok(())
}

/// Thresholds of the growth classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthThresholds {
    /// Converged when `|v(N_max) − v(half)|` is at most this.
    pub convergence_tol: f64,
    /// Diverging when each of the last two steps grows by at least this.
    pub divergence_step: f64,
}

impl Default for GrowthThresholds {
    fn default() -> Self {
        Self {
            convergence_tol: CONVERGENCE_TOL,
            divergence_step: DIVERGENCE_STEP,
        }
    }
}

fn classify(values: &[f64], half: Option<f64>, t: GrowthThresholds) -> Classification {
    let len = values.len();
    if len >= 3 {
        let w = &values[len - 3..];
        if w[2] == f64::INFINITY || (w[1] - w[0] >= t.divergence_step && w[2] - w[1] >= t.divergence_step) {
            return Classification::Diverging;
        }
    }
    if let (Some(h), Some(&last)) = (half, values.last()) {
        if h.is_finite() && last.is_finite() && (last - h).abs() <= t.convergence_tol {
            return Classification::Converged;
        }
    }
    Classification::Inconclusive
}

struct Point {
    value: f64,
    upper: f64,
    witness: Option<ProbeInput>,
    classical: f64,
}

/// Evaluates a truncated divergence along `grid` and classifies its growth.
/// With `channel_lambda` set the pair is the generalized depolarizing channels
/// `Λ^λ_ρ`, `Λ^λ_σ` (sequences are then normalized): the reported value is the
/// best probe input, the upper series is the state divergence, and the verdict
/// is diverging only if the lower series diverges, converged only if the upper
/// one converges.
pub fn finiteness_diagnostic(
    pair: TailPair,
    kind: DivergenceKind,
    grid: &[usize],
    channel_lambda: Option<f64>,
    normalize: bool,
) -> Result<GrowthDiagnosis> {
    finiteness_diagnostic_with(pair, kind, grid, channel_lambda, normalize, GrowthThresholds::default())
}

/// [`finiteness_diagnostic`] with explicit classifier thresholds.
pub fn finiteness_diagnostic_with(
    pair: TailPair,
    kind: DivergenceKind,
    grid: &[usize],
    channel_lambda: Option<f64>,
    normalize: bool,
    thresholds: GrowthThresholds,
) -> Result<GrowthDiagnosis> {
    let eval = Eval::from_kind(kind)?;
    validate_grid(pair, eval, grid)?;
    if let Some(l) = channel_lambda {
        check_lambda(l)?;
    }
    let normalize = normalize || channel_lambda.is_some();
    let ckind = ClassicalKind::from_kind(kind)?;
    let conv = if normalize { KlConvention::Normalized } else { KlConvention::Unnormalized };
    let n_max = *grid.last().expect("grid checked non-empty");
    let half_n = (n_max >= 4).then(|| ((n_max / 2) & !1).max(2));
    let mut points = grid.to_vec();
    if let Some(h) = half_n {
        if !points.contains(&h) {
            points.push(h);
            points.sort_unstable();
        }
    }
    let evaluated: Vec<(usize, Point)> = points
        .par_iter()
        .map(|&n| -> Result<(usize, Point)> {
            let state = state_divergence(pair, kind, n, normalize)?;
            let classical = if n <= 4096 {
                let p = make_sequence(SequenceRule::P, n, normalize)?;
                let s = make_sequence(pair.second(), n, normalize)?;
                classical_divergence_log(ckind, &p.weights, &s.weights, conv)?
            } else {
                f64::NAN
            };
            let point = match channel_lambda {
                Some(l) => {
                    let (v, w) = channel_lower_bound(pair, kind, n, l)?;
                    Point { value: v, upper: state, witness: Some(w), classical }
                }
                None => Point { value: state, upper: f64::NAN, witness: None, classical },
            };
            Ok((n, point))
        })
        .collect::<Result<_>>()?;
    let at = |n: usize| &evaluated.iter().find(|(m, _)| *m == n).expect("evaluated point").1;
    let pick = |f: fn(&Point) -> f64| grid.iter().map(|&n| f(at(n))).collect::<Vec<f64>>();
    let values = pick(|p| p.value);
    let upper = if channel_lambda.is_some() { pick(|p| p.upper) } else { Vec::new() };
    let classification = if channel_lambda.is_some() {
        let lower_class = classify(&values, half_n.map(|h| at(h).value), thresholds);
        let upper_class = classify(&upper, half_n.map(|h| at(h).upper), thresholds);
        if lower_class == Classification::Diverging {
            Classification::Diverging
        } else if upper_class == Classification::Converged {
            Classification::Converged
        } else {
            Classification::Inconclusive
        }
    } else {
        classify(&values, half_n.map(|h| at(h).value), thresholds)
    };
    let (slope_log_n, slope_n) = if grid.len() >= 2 {
        let (n0, n1) = (grid[grid.len() - 2] as f64, n_max as f64);
        let dv = values[values.len() - 1] - values[values.len() - 2];
        (dv / (n1.log2() - n0.log2()), dv / (n1 - n0))
    } else {
        (f64::NAN, f64::NAN)
    };
    let underflow_index = match pair {
        TailPair::Pr => make_sequence(SequenceRule::R, 64, false)?.underflow_index,
        TailPair::Pq => None,
    };
    Ok(GrowthDiagnosis {
        divergence: kind.name(),
        pair,
        normalized: normalize,
        lambda: channel_lambda,
        grid: grid.to_vec(),
        values,
        upper,
        witnesses: grid
            .iter()
            .filter_map(|&n| at(n).witness.map(|w| w.label()))
            .collect(),
        classical: pick(|p| p.classical),
        classification,
        fit: GrowthFit {
            half_n,
            half_value: half_n.map(|h| at(h).value),
            slope_log_n,
            slope_n,
        },
        underflow_index,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub n: usize,
    pub divergence: String,
    #[serde(with = "ext_real")]
    pub lower: f64,
    #[serde(with = "ext_real")]
    pub value: f64,
    #[serde(with = "ext_real")]
    pub upper: f64,
}

impl SandwichCheck {
    pub fn slack(&self) -> f64 {
        (self.value - self.lower).min(self.upper - self.value)
    }
}

/// `D(p‖q↑) ≤ D(ρ_p‖σ_q) ≤ D(p‖q↓)` for normalized `p`, `q` truncated at `n`.
pub fn sandwich_check(kind: DivergenceKind, n: usize) -> Result<SandwichCheck> {
    let ckind = ClassicalKind::from_kind(kind)?;
    let p = make_sequence(SequenceRule::P, n, true)?;
    let q = make_sequence(SequenceRule::Q, n, true)?;
    let (up, down) = q_up_down(&q.values)?;
    Ok(SandwichCheck {
        n,
        divergence: kind.name(),
        lower: classical_divergence(ckind, &p.values, &up, KlConvention::Normalized)?,
        value: state_divergence(TailPair::Pq, kind, n, true)?,
        upper: classical_divergence(ckind, &p.values, &down, KlConvention::Normalized)?,
    })
}

/// Three ways of writing the truncated `D(p‖r)` for the unnormalized sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DprConventions {
    pub n: usize,
    /// `Σ p log(p/r) = Σ 1/n²`.
    pub direct: f64,
    /// `direct − Σp + Σr`.
    pub lindblad: f64,
    /// `Σ n^{−2}(1 − 2^{−n})`, which equals `direct − Σp`.
    pub printed: f64,
    /// Set when `printed` and `lindblad` differ beyond rounding.
    pub flagged: bool,
}

pub fn dpr_conventions(n: usize) -> Result<DprConventions> {
    let p = make_sequence(SequenceRule::P, n, false)?;
    let r = make_sequence(SequenceRule::R, n, false)?;
    let direct = classical_divergence_log(ClassicalKind::Kl, &p.weights, &r.weights, KlConvention::Normalized)?;
    let lindblad = classical_divergence_log(ClassicalKind::Kl, &p.weights, &r.weights, KlConvention::Unnormalized)?;
    let printed = (1..=n)
        .map(|k| {
            let x = k as f64;
            (1.0 - (-x).exp2()) / (x * x)
        })
        .sum();
    Ok(DprConventions {
        n,
        direct,
        lindblad,
        printed,
        flagged: (printed - lindblad).abs() > 1e-12,
    })
}
