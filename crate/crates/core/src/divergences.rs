//! State divergences and distances, smoothing brackets and the inequality
//! checks built on them. Values are in bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    c, column_expectations, matrix_function, positive_part, CMatrix, DensityMatrix, HermitianOperator, Spectrum,
    KERNEL_TOL,
};
use crate::util::{ext_real, ext_real_opt};

pub use crate::util::binary_entropy;

/// Relative weight of `ρ` outside `supp σ` above which the support test fails.
pub const SUPPORT_TOL: f64 = 1e-10;
/// Boundary terms of f-divergences with smaller trace weight are dropped.
pub const BOUNDARY_WEIGHT_TOL: f64 = 1e-14;
/// Primal/dual gap (bits) above which hypothesis testing reports an error.
pub const GAP_ERROR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactSpectral,
    ExactPrimalDual,
    ConstructiveBound,
    Optimizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    #[serde(with = "ext_real")]
    pub value: f64,
    pub method: Method,
    #[serde(with = "ext_real_opt", default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(with = "ext_real_opt", default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl DivergenceResult {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            method: Method::ExactSpectral,
            lower: None,
            upper: None,
        }
    }

    pub fn width(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }
}

/// Divergences that can be evaluated on a state pair; used by the channel optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum DivergenceKind {
    Umegaki,
    Petz(f64),
    Geometric(f64),
    Dmax,
    Hypothesis(f64),
}

impl DivergenceKind {
    pub fn evaluate(&self, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
        Ok(match *self {
            Self::Umegaki => umegaki(rho, sigma)?.value,
            Self::Petz(a) => petz_renyi(a, rho, sigma)?.value,
            Self::Geometric(a) => geometric_renyi(a, rho, sigma)?.value,
            Self::Dmax => max_relative(rho, sigma)?.value,
            Self::Hypothesis(e) => hypothesis_testing(e, rho, sigma)?.result.value,
        })
    }

    pub fn name(&self) -> String {
        match *self {
            Self::Umegaki => "umegaki".into(),
            Self::Petz(a) => format!("petz({a})"),
            Self::Geometric(a) => format!("geometric({a})"),
            Self::Dmax => "dmax".into(),
            Self::Hypothesis(e) => format!("hypothesis({e})"),
        }
    }

    /// Parses `umegaki`, `petz`, `geometric`, `dmax`, `hypothesis` with the
    /// order/ε supplied separately.
    pub fn parse(name: &str, alpha: Option<f64>, eps: Option<f64>) -> Result<Self> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::InvalidInput(format!("{name} needs --{what}")))
        };
        Ok(match name {
            "umegaki" | "kl" => Self::Umegaki,
            "petz" | "petz_renyi" => Self::Petz(need(alpha, "alpha")?),
            "geometric" | "geometric_renyi" => Self::Geometric(need(alpha, "alpha")?),
            "dmax" | "max_relative" => Self::Dmax,
            "hypothesis" | "dh" | "hypothesis_testing" => Self::Hypothesis(need(eps, "eps")?),
            other => return Err(Error::InvalidInput(format!("unknown divergence '{other}'"))),
        })
    }
}

fn check_dims(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "states of dimension {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    Ok(())
}

/// Joint spectral data: eigenvalues of both arguments and the overlaps
/// `|⟨e_i|f_j⟩|²` between their eigenbases.
struct Pair {
    p: Vec<f64>,
    q: Vec<f64>,
    /// Row-major overlaps, or `None` when both operators are diagonal.
    w: Option<Vec<f64>>,
    tp: f64,
    tq: f64,
}

impl Pair {
    fn new(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<Self> {
        check_dims(rho, sigma)?;
        if rho.is_diagonal() && sigma.is_diagonal() {
            let p = rho.op().diagonal();
            let q = sigma.op().diagonal();
            let tp = KERNEL_TOL * p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let tq = KERNEL_TOL * q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            return Ok(Self {
                p,
                q,
                w: None,
                tp,
                tq,
            });
        }
        let (sr, ss) = (rho.spectrum(), sigma.spectrum());
        let n = rho.dim();
        let overlap = sr.vectors.adjoint() * &ss.vectors;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = overlap[(i, j)].norm_sqr();
            }
        }
        Ok(Self {
            p: sr.values.clone(),
            q: ss.values.clone(),
            w: Some(w),
            tp: sr.kernel_tol(),
            tq: ss.kernel_tol(),
        })
    }

    fn for_each<F: FnMut(usize, usize, f64)>(&self, mut f: F) {
        let n = self.p.len();
        match &self.w {
            None => (0..n).for_each(|i| f(i, i, 1.0)),
            Some(w) => {
                for i in 0..n {
                    for j in 0..n {
                        let x = w[i * n + j];
                        if x != 0.0 {
                            f(i, j, x);
                        }
                    }
                }
            }
        }
    }

    /// `Tr[ρ{σ=0}]`.
    fn rho_outside_sigma(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each(|i, j, w| {
            if self.q[j] <= self.tq {
                acc += self.p[i].max(0.0) * w;
            }
        });
        acc
    }

    /// `Tr[σ{ρ=0}]`.
    fn sigma_outside_rho(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each(|i, j, w| {
            if self.p[i] <= self.tp {
                acc += self.q[j].max(0.0) * w;
            }
        });
        acc
    }

    fn trace_p(&self) -> f64 {
        self.p.iter().map(|v| v.max(0.0)).sum()
    }

    fn supported(&self) -> bool {
        self.rho_outside_sigma() <= SUPPORT_TOL * self.trace_p()
    }
}

/// Tolerance-gated `supp ρ ⊆ supp σ`.
pub fn support_contained(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<bool> {
    Ok(Pair::new(rho, sigma)?.supported())
}

pub fn umegaki(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<DivergenceResult> {
    let pair = Pair::new(rho, sigma)?;
    if !pair.supported() {
        return Ok(DivergenceResult::exact(f64::INFINITY));
    }
    let mut v = 0.0;
    for &p in &pair.p {
        if p > pair.tp {
            v += p * p.log2();
        }
    }
    pair.for_each(|i, j, w| {
        let (p, q) = (pair.p[i], pair.q[j]);
        if p > pair.tp && q > pair.tq {
            v -= p * w * q.log2();
        }
    });
    if !(rho.is_normalized() && sigma.is_normalized()) {
        v += sigma.trace() - rho.trace();
    }
    Ok(DivergenceResult::exact(v))
}

/// `Tr[ρ^α σ^{1−α}]` over the supports; `α = 0` uses the support projector of `ρ`.
pub fn petz_trace_term(alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let pair = Pair::new(rho, sigma)?;
    Ok(petz_term(&pair, alpha))
}

fn petz_term(pair: &Pair, alpha: f64) -> f64 {
    let mut acc = 0.0;
    pair.for_each(|i, j, w| {
        let (p, q) = (pair.p[i], pair.q[j]);
        if p > pair.tp && q > pair.tq {
            let pa = if alpha == 0.0 { 1.0 } else { p.powf(alpha) };
            acc += pa * q.powf(1.0 - alpha) * w;
        }
    });
    acc
}

pub fn petz_renyi(alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<DivergenceResult> {
    if !(alpha >= 0.0) || alpha == 1.0 || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("Petz order {alpha} not allowed")));
    }
    let pair = Pair::new(rho, sigma)?;
    if alpha > 1.0 && !pair.supported() {
        return Ok(DivergenceResult::exact(f64::INFINITY));
    }
    let q = petz_term(&pair, alpha);
    let v = if q <= 0.0 {
        f64::INFINITY
    } else {
        q.log2() / (alpha - 1.0)
    };
    Ok(DivergenceResult::exact(v))
}

/// `Σ q_j |⟨e_i|f_j⟩|² f(p_i/q_j) + f(0)·Tr[σ{ρ=0}] + f'(∞)·Tr[ρ{σ=0}]`.
pub fn standard_f_divergence<F: Fn(f64) -> f64>(
    f: F,
    f_at_zero: f64,
    f_slope_at_infinity: f64,
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
) -> Result<DivergenceResult> {
    let pair = Pair::new(rho, sigma)?;
    let mut v = 0.0;
    pair.for_each(|i, j, w| {
        let (p, q) = (pair.p[i], pair.q[j]);
        if p > pair.tp && q > pair.tq {
            v += q * w * f(p / q);
        }
    });
    let boundary = |weight: f64, coeff: f64| {
        if weight < BOUNDARY_WEIGHT_TOL {
            0.0
        } else {
            coeff * weight
        }
    };
    v += boundary(pair.sigma_outside_rho(), f_at_zero);
    v += boundary(pair.rho_outside_sigma(), f_slope_at_infinity);
    Ok(DivergenceResult::exact(v))
}

/// Pseudo-inverse on the support.
pub fn pinv(h: &HermitianOperator) -> HermitianOperator {
    matrix_function(h, |x| 1.0 / x, 0.0).expect("finite map")
}

/// `ρ X σ⁺`.
pub fn relative_modular_apply(rho: &DensityMatrix, sigma: &DensityMatrix, x: &CMatrix) -> Result<CMatrix> {
    check_dims(rho, sigma)?;
    if x.nrows() != rho.dim() || x.ncols() != rho.dim() {
        return Err(Error::DimensionMismatch("operand shape".into()));
    }
    Ok(rho.matrix() * x * pinv(sigma.op()).matrix())
}

/// `σ^{-1/2} ρ σ^{-1/2}` written in σ's eigenbasis restricted to its support,
/// together with the support eigenvalues of σ.
fn sandwich_on_support(rho: &DensityMatrix, sigma: &DensityMatrix) -> (HermitianOperator, Vec<f64>) {
    let ss: &Spectrum = sigma.spectrum();
    let tq = ss.kernel_tol();
    let support: Vec<usize> = (0..ss.values.len()).filter(|&j| ss.values[j] > tq).collect();
    let k = support.len();
    let n = sigma.dim();
    let v = CMatrix::from_fn(n, k, |r, col| ss.vectors[(r, support[col])]);
    let inner = v.adjoint() * rho.matrix() * &v;
    let qs: Vec<f64> = support.iter().map(|&j| ss.values[j]).collect();
    let m = CMatrix::from_fn(k, k, |a, b| inner[(a, b)] / (qs[a] * qs[b]).sqrt());
    let m = (&m + m.adjoint()) * c(0.5);
    (HermitianOperator::from_trusted(m), qs)
}

pub fn max_relative(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<DivergenceResult> {
    let pair = Pair::new(rho, sigma)?;
    if !pair.supported() {
        return Ok(DivergenceResult::exact(f64::INFINITY));
    }
    if pair.w.is_none() {
        let mut best = 0.0_f64;
        for i in 0..pair.p.len() {
            if pair.p[i] > pair.tp && pair.q[i] > pair.tq {
                best = best.max(pair.p[i] / pair.q[i]);
            }
        }
        return Ok(DivergenceResult::exact(best.log2()));
    }
    let (m, _) = sandwich_on_support(rho, sigma);
    let top = m.spectrum().values.last().copied().unwrap_or(0.0);
    Ok(DivergenceResult::exact(top.log2()))
}

/// `Ŝ_α = Tr[σ (σ^{-1/2} ρ σ^{-1/2})^α]` on the support of σ.
pub fn geometric_trace_term(alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho, sigma)?;
    if rho.is_diagonal() && sigma.is_diagonal() {
        let (p, q) = (rho.op().diagonal(), sigma.op().diagonal());
        let tq = KERNEL_TOL * q.iter().fold(0.0_f64, |m, v| m.max(*v));
        let mut acc = 0.0;
        for i in 0..p.len() {
            if q[i] > tq && p[i] > 0.0 {
                acc += q[i] * (p[i] / q[i]).powf(alpha);
            }
        }
        return Ok(acc);
    }
    let (m, qs) = sandwich_on_support(rho, sigma);
    let ms = m.spectrum();
    let pw: Vec<f64> = ms
        .values
        .iter()
        .map(|&x| if x > 0.0 { x.powf(alpha) } else { 0.0 })
        .collect();
    let mut acc = 0.0;
    for (k, &wk) in pw.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        for (j, &q) in qs.iter().enumerate() {
            acc += q * wk * ms.vectors[(j, k)].norm_sqr();
        }
    }
    Ok(acc)
}

pub fn geometric_renyi(alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<DivergenceResult> {
    if !(alpha >= 0.0 && alpha <= 2.0) || alpha == 1.0 {
        return Err(Error::InvalidInput(format!(
            "geometric order {alpha} outside [0,1) ∪ (1,2]"
        )));
    }
    let supported = support_contained(rho, sigma)?;
    if !supported {
        if alpha > 1.0 {
            return Ok(DivergenceResult::exact(f64::INFINITY));
        }
        let s = geometric_regularized_term(alpha, 1e-10, rho, sigma)?;
        return Ok(DivergenceResult::exact(renyi_from_term(alpha, s)));
    }
    let s = geometric_trace_term(alpha, rho, sigma)?;
    Ok(DivergenceResult::exact(renyi_from_term(alpha, s)))
}

fn renyi_from_term(alpha: f64, s: f64) -> f64 {
    if s <= 0.0 {
        f64::INFINITY
    } else {
        s.log2() / (alpha - 1.0)
    }
}

/// `Ŝ_α(ρ + ε(ρ+σ) ‖ σ + ε(ρ+σ))`.
pub fn geometric_regularized_term(
    alpha: f64,
    eps: f64,
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
) -> Result<f64> {
    check_dims(rho, sigma)?;
    let mix = rho.matrix() + sigma.matrix();
    let r = DensityMatrix::new_unnormalized(rho.matrix() + &mix * c(eps), rho.dims())?;
    let s = DensityMatrix::new_unnormalized(sigma.matrix() + &mix * c(eps), sigma.dims())?;
    geometric_trace_term(alpha, &r, &s)
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularizedLimit {
    pub direct: f64,
    /// `(ε, D̂_α)` for the regularized pairs.
    pub regularized: Vec<(f64, f64)>,
    pub agrees: bool,
}

/// Compares the direct geometric formula with its ε-regularized versions.
pub fn geometric_limit_check(alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<RegularizedLimit> {
    let direct = geometric_renyi(alpha, rho, sigma)?.value;
    let regularized = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&e| Ok((e, renyi_from_term(alpha, geometric_regularized_term(alpha, e, rho, sigma)?))))
        .collect::<Result<Vec<_>>>()?;
    let last = regularized.last().expect("three points").1;
    let agrees = (last - direct).abs() <= 1e-6 || (last.is_infinite() && direct.is_infinite());
    Ok(RegularizedLimit {
        direct,
        regularized,
        agrees,
    })
}

pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho, sigma)?;
    if rho.is_diagonal() && sigma.is_diagonal() {
        let (p, q) = (rho.op().diagonal(), sigma.op().diagonal());
        let s: f64 = p.iter().zip(&q).map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt()).sum();
        return Ok((s * s).min(1.0));
    }
    let sq = matrix_function(rho.op(), |x| x.max(0.0).sqrt(), 0.0)?;
    // singular values of √ρ√σ avoid square roots of tiny eigenvalues
    let sq_sigma = matrix_function(sigma.op(), |x| x.max(0.0).sqrt(), 0.0)?;
    let s: f64 = (sq.matrix() * sq_sigma.matrix()).singular_values().iter().sum();
    Ok((s * s).clamp(0.0, 1.0))
}

pub fn sine_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    Ok((1.0 - fidelity(rho, sigma)?).max(0.0).sqrt())
}

pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho, sigma)?;
    let d = rho.op().sub(sigma.op())?;
    Ok(0.5 * d.spectrum().values.iter().map(|v| v.abs()).sum::<f64>())
}

#[derive(Clone, Debug)]
pub struct GentleMeasurement {
    pub post_state: DensityMatrix,
    pub bound: f64,
    pub sine_distance: f64,
}

/// `√F ρ √F / Tr[Fρ]` with the bound `√(1 − Tr[Fρ])`.
pub fn gentle_measurement_post_state(rho: &DensityMatrix, f: &HermitianOperator) -> Result<GentleMeasurement> {
    if f.dim() != rho.dim() {
        return Err(Error::DimensionMismatch("effect and state differ".into()));
    }
    let vals = &f.spectrum().values;
    if vals[0] < -1e-12 || *vals.last().unwrap() > 1.0 + 1e-12 {
        return Err(Error::InvalidInput("effect is not between 0 and 1".into()));
    }
    let acc = f.trace_product(rho.op())?;
    if acc <= 1e-14 {
        return Err(Error::ZeroAcceptance(acc));
    }
    let sq = matrix_function(f, |x| x.clamp(0.0, 1.0).sqrt(), 0.0)?;
    let post = sq.matrix() * rho.matrix() * sq.matrix() * c(1.0 / acc);
    let post_state = DensityMatrix::new(post, rho.dims())?;
    let bound = (1.0 - acc).max(0.0).sqrt();
    let sine_distance = sine_distance(rho, &post_state)?;
    Ok(GentleMeasurement {
        post_state,
        bound,
        sine_distance,
    })
}

#[derive(Clone, Debug)]
pub struct HypothesisTest {
    pub result: DivergenceResult,
    /// Optimal test operator `0 ≤ F ≤ 1` with `Tr[Fρ] = 1−ε`.
    pub test: HermitianOperator,
    /// Neyman–Pearson threshold `t` in `{ρ − tσ > 0}`.
    pub threshold: f64,
    /// Type-II error of the primal test.
    pub beta_primal: f64,
    /// Dual lower bound on the optimal type-II error.
    pub beta_dual: f64,
    /// Dual variable attaining `beta_dual`.
    pub dual_t: f64,
    /// `log₂(β_primal / β_dual)`.
    pub gap: f64,
}

fn positive_trace(h: &HermitianOperator) -> f64 {
    h.spectrum().values.iter().map(|v| v.max(0.0)).sum()
}

/// `g(t) = t(1−ε) − Tr(tρ − σ)₊`, a lower bound on the optimal type-II error for every `t ≥ 0`.
pub fn dual_objective(t: f64, eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    if rho.is_diagonal() && sigma.is_diagonal() {
        let (p, q) = (rho.op().diagonal(), sigma.op().diagonal());
        let plus: f64 = p.iter().zip(&q).map(|(a, b)| (t * a - b).max(0.0)).sum();
        return t * (1.0 - eps) - plus;
    }
    let h = HermitianOperator::from_trusted(rho.matrix() * c(t) - sigma.matrix());
    t * (1.0 - eps) - positive_trace(&h)
}

/// Golden-section maximization of a concave function on `[a, b]`.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
        if (b - a) <= 1e-15 * b.abs().max(1e-300) {
            break;
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Optimal type-II error at type-I error `ε`, from the Neyman–Pearson family,
/// certified by the Lagrange dual.
pub fn hypothesis_testing(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<HypothesisTest> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("ε = {eps} outside (0,1)")));
    }
    check_dims(rho, sigma)?;
    let out = if rho.is_diagonal() && sigma.is_diagonal() {
        np_classical(eps, &rho.op().diagonal(), &sigma.op().diagonal())
    } else {
        np_quantum(eps, rho, sigma)?
    };
    if out.gap > GAP_ERROR {
        return Err(Error::NumericalGap { gap: out.gap });
    }
    Ok(out)
}

fn finish(
    eps: f64,
    test: HermitianOperator,
    threshold: f64,
    beta_primal: f64,
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
) -> HypothesisTest {
    let (dual_t, beta_dual) = if threshold > 0.0 && threshold.is_finite() {
        let t0 = 1.0 / threshold;
        let g = |t: f64| dual_objective(t, eps, rho, sigma);
        let at = g(t0);
        let tight = beta_primal <= 0.0 || (at > 0.0 && (beta_primal / at).log2() <= 1e-12);
        let (ts, gs) = if tight {
            (t0, at)
        } else {
            golden_max(g, t0 * (1.0 - 1e-9), t0 * (1.0 + 1e-9), 60)
        };
        if gs > at {
            (ts, gs)
        } else {
            (t0, at)
        }
    } else {
        (0.0, 0.0)
    };
    let beta_dual = beta_dual.max(0.0).min(beta_primal);
    let gap = if beta_primal <= 0.0 {
        0.0
    } else if beta_dual <= 0.0 {
        f64::INFINITY
    } else {
        (beta_primal / beta_dual).log2()
    };
    let value = if beta_primal <= 0.0 {
        f64::INFINITY
    } else {
        -beta_primal.log2()
    };
    let upper = if beta_primal <= 0.0 {
        f64::INFINITY
    } else if beta_dual <= 0.0 {
        f64::INFINITY
    } else {
        -beta_dual.log2()
    };
    HypothesisTest {
        result: DivergenceResult {
            value,
            method: Method::ExactPrimalDual,
            lower: Some(value),
            upper: Some(upper),
        },
        test,
        threshold,
        beta_primal,
        beta_dual,
        dual_t,
        gap,
    }
}

/// `D_H^ε` for commuting inputs given as probability vectors, without
/// building matrices; certified by the dual at the optimal threshold.
pub fn hypothesis_testing_classical(eps: f64, p: &[f64], q: &[f64]) -> Result<DivergenceResult> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("ε = {eps} outside (0,1)")));
    }
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", p.len(), q.len())));
    }
    let target = 1.0 - eps;
    let ratio = |i: usize| if q[i] > 0.0 { p[i] / q[i] } else { f64::INFINITY };
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    idx.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)));
    let (mut mass, mut beta, mut threshold, mut k) = (0.0, 0.0, f64::INFINITY, 0);
    while k < idx.len() && mass < target {
        let r = ratio(idx[k]);
        let mut end = k;
        while end < idx.len() && ratio(idx[end]) == r {
            end += 1;
        }
        let group_p: f64 = idx[k..end].iter().map(|&i| p[i]).sum();
        let group_q: f64 = idx[k..end].iter().map(|&i| q[i]).sum();
        let x = ((target - mass) / group_p).min(1.0);
        mass += x * group_p;
        beta += x * group_q;
        threshold = r;
        k = end;
        if x < 1.0 {
            break;
        }
    }
    if beta <= 0.0 {
        return Ok(DivergenceResult::exact(f64::INFINITY));
    }
    let t = 1.0 / threshold;
    let plus: f64 = p.iter().zip(q).map(|(a, b)| (t * a - b).max(0.0)).sum();
    let dual = (t * target - plus).max(0.0).min(beta);
    let gap = if dual > 0.0 { (beta / dual).log2() } else { f64::INFINITY };
    if gap > GAP_ERROR {
        return Err(Error::NumericalGap { gap });
    }
    Ok(DivergenceResult {
        value: -beta.log2(),
        method: Method::ExactPrimalDual,
        lower: Some(-beta.log2()),
        upper: Some(-dual.log2()),
    })
}

/// `D_H^ε(a^{⊗n} ‖ b^{⊗n})`; commuting pairs are handled as product
/// distributions in a shared eigenbasis without forming the tensor powers.
pub fn hypothesis_testing_power(eps: f64, a: &DensityMatrix, b: &DensityMatrix, n: usize) -> Result<DivergenceResult> {
    check_dims(a, b)?;
    let (a, b) = &strip_shared_factors(a, b)?;
    match joint_diagonal(a, b) {
        Some((p, q)) => hypothesis_testing_classical(eps, &product_power(&p, n), &product_power(&q, n)),
        None => Ok(hypothesis_testing(eps, &a.tensor_power(n), &b.tensor_power(n))?.result),
    }
}

/// Drops an outer tensor factor that both states carry identically
/// (`τ ⊗ ρ` vs `τ ⊗ σ`); appending or discarding `τ` is a channel, so
/// `D_H` is unchanged.
fn strip_shared_factors(a: &DensityMatrix, b: &DensityMatrix) -> Result<(DensityMatrix, DensityMatrix)> {
    let close = |x: &CMatrix, y: &CMatrix| (x - y).iter().all(|z| z.norm() <= 1e-13);
    let (mut a, mut b) = (a.clone(), b.clone());
    'outer: while a.dims().len() >= 2 && a.dims() == b.dims() {
        let k = a.dims().len();
        for i in [0, k - 1] {
            let rest: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            let (ai, bi) = (a.partial_trace(&[i])?, b.partial_trace(&[i])?);
            if !close(ai.matrix(), bi.matrix()) {
                continue;
            }
            let (ar, br) = (a.partial_trace(&rest)?, b.partial_trace(&rest)?);
            let join = |f: &DensityMatrix, r: &DensityMatrix| if i == 0 { f.tensor(r) } else { r.tensor(f) };
            if close(join(&ai, &ar).matrix(), a.matrix()) && close(join(&bi, &br).matrix(), b.matrix()) {
                (a, b) = (ar, br);
                continue 'outer;
            }
        }
        break;
    }
    Ok((a, b))
}

/// Eigenvalue lists of two commuting states in a shared eigenbasis, or `None`
/// when a generic combination does not diagonalize both.
fn joint_diagonal(a: &DensityMatrix, b: &DensityMatrix) -> Option<(Vec<f64>, Vec<f64>)> {
    if a.is_diagonal() && b.is_diagonal() {
        return Some((a.op().diagonal(), b.op().diagonal()));
    }
    let mix = a.matrix() + b.matrix() * c(0.754_877_666_246_692_7);
    let basis = HermitianOperator::new((&mix + mix.adjoint()) * c(0.5))
        .ok()?
        .spectrum()
        .vectors
        .clone();
    let ra = basis.adjoint() * a.matrix() * &basis;
    let rb = basis.adjoint() * b.matrix() * &basis;
    let n = ra.nrows();
    let off = |m: &CMatrix| {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[(i, j)].norm()).fold(0.0, f64::max)
    };
    if off(&ra) > 1e-12 || off(&rb) > 1e-12 {
        return None;
    }
    let d = |m: &CMatrix| (0..n).map(|i| m[(i, i)].re.max(0.0)).collect();
    Some((d(&ra), d(&rb)))
}

/// Product distribution `p^{⊗n}`.
fn product_power(p: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..n {
        out = out.iter().flat_map(|&a| p.iter().map(move |&b| a * b)).collect();
    }
    out
}

fn np_classical(eps: f64, p: &[f64], q: &[f64]) -> HypothesisTest {
    let n = p.len();
    let target = 1.0 - eps;
    let rho = DensityMatrix::from_diag_unnormalized(p).expect("nonnegative");
    let sigma = DensityMatrix::from_diag_unnormalized(q).expect("nonnegative");
    // outcomes with q = 0 first, then by decreasing likelihood ratio
    let mut idx: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0).collect();
    let ratio = |i: usize| if q[i] > 0.0 { p[i] / q[i] } else { f64::INFINITY };
    idx.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)));
    let mut f = vec![0.0; n];
    let mut mass = 0.0;
    let mut beta = 0.0;
    let mut threshold = f64::INFINITY;
    let mut k = 0;
    while k < idx.len() && mass < target {
        // group of equal ratios is one eigenspace of ρ − tσ
        let r = ratio(idx[k]);
        let mut end = k;
        while end < idx.len() && ratio(idx[end]) == r {
            end += 1;
        }
        let group_p: f64 = idx[k..end].iter().map(|&i| p[i]).sum();
        let x = ((target - mass) / group_p).min(1.0);
        for &i in &idx[k..end] {
            f[i] = x;
            beta += x * q[i];
        }
        mass += x * group_p;
        threshold = r;
        k = end;
        if x < 1.0 {
            // rounding can leave mass a hair below target
            break;
        }
    }
    let test = HermitianOperator::from_real_diag(&f);
    finish(eps, test, threshold, beta, &rho, &sigma)
}

/// `(Tr[{H > 0} ρ], spectrum)` for `H = ρ − tσ`.
fn np_mass(t: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> (f64, HermitianOperator) {
    let h = HermitianOperator::from_trusted(rho.matrix() - sigma.matrix() * c(t));
    let s = h.spectrum();
    let first = s.values.iter().position(|&mu| mu > 0.0).unwrap_or(s.values.len());
    let top = s.vectors.columns(first, s.values.len() - first).into_owned();
    let mass = column_expectations(rho.matrix(), &top).iter().sum();
    (mass, h)
}

fn expectation(m: &CMatrix, vectors: &CMatrix, k: usize) -> f64 {
    let v = vectors.column(k);
    (v.adjoint() * m * v)[(0, 0)].re
}

/// Relative offset used to evaluate the mass just left and right of a jump.
const JUMP_REL: f64 = 1e-9;

/// Illinois false position for the mass crossing inside `(t_lo, t_hi]`,
/// bisecting whenever the bracket fails to halve; returns the right end.
fn refine_threshold(
    target: f64,
    mut t_lo: f64,
    mut f_lo: f64,
    mut t_hi: f64,
    mut hi: (f64, HermitianOperator),
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
) -> (f64, HermitianOperator) {
    let mut f_hi = hi.0 - target;
    let mut side = 0i8;
    let mut width = t_hi - t_lo;
    for it in 0..300 {
        if t_hi - t_lo <= 4.0 * f64::EPSILON * t_hi || f_hi.abs() <= 2.0 * f64::EPSILON {
            break;
        }
        let mut t = t_lo + (t_hi - t_lo) * f_lo / (f_lo - f_hi);
        if it % 3 == 2 {
            if t_hi - t_lo > 0.5 * width {
                t = 0.5 * (t_lo + t_hi);
            }
            width = t_hi - t_lo;
        }
        if !(t > t_lo && t < t_hi) {
            t = 0.5 * (t_lo + t_hi);
        }
        let m = np_mass(t, rho, sigma);
        let f = m.0 - target;
        if f <= 0.0 {
            (t_hi, f_hi, hi) = (t, f, m);
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            (t_lo, f_lo) = (t, f);
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
    }
    (t_hi, hi.1)
}

fn np_quantum(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<HypothesisTest> {
    let target = 1.0 - eps;
    let ss = sigma.spectrum();
    let tq = ss.kernel_tol();
    let n = rho.dim();

    // the part of ρ that σ never sees can be accepted for free
    let ker: Vec<usize> = (0..n).filter(|&j| ss.values[j] <= tq).collect();
    let p0: f64 = ker.iter().map(|&j| expectation(rho.matrix(), &ss.vectors, j)).sum();
    if !ker.is_empty() && p0 >= target * (1.0 - 1e-12) {
        let w: Vec<f64> = (0..n)
            .map(|j| if ss.values[j] <= tq { (target / p0).min(1.0) } else { 0.0 })
            .collect();
        let test = HermitianOperator::from_trusted(ss.reconstruct(&w));
        return Ok(finish(eps, test, f64::INFINITY, 0.0, rho, sigma));
    }

    // Tr[{ρ − θσ > 0}ρ] is nonincreasing in θ; it jumps at generalized
    // eigenvalues of (ρ, σ) and varies continuously in between, since the
    // positive eigenspace rotates with θ
    let (threshold, h) = if support_contained(rho, sigma)? {
        let (m, _) = sandwich_on_support(rho, sigma);
        let mut cands: Vec<f64> = m.spectrum().values.iter().copied().filter(|&v| v > 0.0).collect();
        cands.dedup_by(|a, b| *a - *b <= 4.0 * JUMP_REL * *b);
        // mass just right of the largest candidate is zero
        let (mut lo, mut hi) = (0, cands.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if np_mass(cands[mid] * (1.0 + JUMP_REL), rho, sigma).0 <= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let k = lo;
        let left = np_mass(cands[k] * (1.0 - JUMP_REL), rho, sigma);
        if left.0 > target {
            (cands[k], np_mass(cands[k], rho, sigma).1)
        } else {
            let (t0, f0) = if k == 0 {
                (0.0, 1.0 - target)
            } else {
                let t = cands[k - 1] * (1.0 + JUMP_REL);
                (t, np_mass(t, rho, sigma).0 - target)
            };
            refine_threshold(target, t0, f0, cands[k] * (1.0 - JUMP_REL), left, rho, sigma)
        }
    } else {
        let (mut t_lo, mut f_lo) = (0.0, 1.0 - target);
        let (mut t_hi, mut hi) = (1.0, np_mass(1.0, rho, sigma));
        let mut guard = 0;
        while hi.0 > target {
            (t_lo, f_lo) = (t_hi, hi.0 - target);
            t_hi *= 2.0;
            hi = np_mass(t_hi, rho, sigma);
            guard += 1;
            if guard > 2000 {
                return Err(Error::NumericalGap { gap: f64::INFINITY });
            }
        }
        refine_threshold(target, t_lo, f_lo, t_hi, hi, rho, sigma)
    };
    let s = h.spectrum();
    // accept eigendirections of ρ − θσ in decreasing eigenvalue order; at the
    // threshold the zero eigenspace satisfies Tr[T₀ (ρ − θσ)] = 0, so any
    // filling of it with the right mass is optimal, and ordering by the
    // computed eigenvalue also handles near-degenerate clusters
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.values[b].total_cmp(&s.values[a]));
    let weights_rho = column_expectations(rho.matrix(), &s.vectors);
    let mut w = vec![0.0; n];
    let mut mass = 0.0;
    // a deficit at the rounding level of Tr[Tρ] is not filled: the next
    // direction may carry a large negative eigenvalue and would inflate β
    let slack = 16.0 * f64::EPSILON * n as f64;
    for &k in &order {
        if mass >= target - slack {
            break;
        }
        let wk = weights_rho[k];
        if wk <= 0.0 {
            continue;
        }
        if mass + wk <= target {
            w[k] = 1.0;
            mass += wk;
        } else {
            w[k] = (target - mass) / wk;
            mass = target;
        }
    }
    let test = HermitianOperator::from_trusted(s.reconstruct(&w));
    let beta = if threshold >= 1.0 {
        // Tr[Tσ] = (Tr[Tρ] − Tr[T(ρ − θσ)])/θ avoids the absolute rounding of
        // the direct trace when β is tiny
        let tr_rho: f64 = (0..n).map(|k| w[k] * weights_rho[k]).sum();
        let tr_h: f64 = (0..n).map(|k| w[k] * s.values[k]).sum();
        (tr_rho - tr_h) / threshold
    } else {
        test.trace_product(sigma.op())?
    }
    .max(0.0);
    Ok(finish(eps, test, threshold, beta, rho, sigma))
}

#[derive(Clone, Debug)]
pub struct SmoothingWitness {
    pub smoothed_state: DensityMatrix,
    pub sine_distance_to_original: f64,
    pub dmax_to_sigma: f64,
}

#[derive(Clone, Debug)]
pub struct SmoothingConstruction {
    pub lambda: f64,
    /// `Tr(ρ − 2^λ σ)₊`.
    pub trace_sigma: f64,
    /// `√Tr Σ`, the smoothing radius the construction certifies.
    pub radius: f64,
    /// `λ − log₂(1 − Tr Σ)`.
    pub bound: f64,
    pub witness: Option<SmoothingWitness>,
}

fn excess_trace(lambda: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let t = lambda.exp2();
    if rho.is_diagonal() && sigma.is_diagonal() {
        let (p, q) = (rho.op().diagonal(), sigma.op().diagonal());
        return p.iter().zip(&q).map(|(a, b)| (a - t * b).max(0.0)).sum();
    }
    positive_trace(&HermitianOperator::from_trusted(rho.matrix() - sigma.matrix() * c(t)))
}

/// The smoothing construction for a fixed `λ`: with `Σ = (ρ − 2^λσ)₊` and
/// `G = Λ^{1/2}(Λ+Σ)^{-1/2}`, `Λ = 2^λσ`, the state `GρG†/Tr` lies within sine
/// distance `√TrΣ` of `ρ` and below `2^λ/(1−TrΣ) · σ`.
pub fn smoothing_construction(lambda: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<SmoothingConstruction> {
    check_dims(rho, sigma)?;
    let t = lambda.exp2();
    let diff = HermitianOperator::from_trusted(rho.matrix() - sigma.matrix() * c(t));
    let big_sigma = positive_part(&diff);
    let trace_sigma = big_sigma.trace().max(0.0);
    let bound = if trace_sigma >= 1.0 {
        f64::INFINITY
    } else {
        lambda - (1.0 - trace_sigma).log2()
    };
    let lam = sigma.op().scale(t);
    let lam_half = matrix_function(&lam, |x| x.max(0.0).sqrt(), 0.0)?;
    let total = lam.add(&big_sigma)?;
    let inv_half = matrix_function(&total, |x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }, 0.0)?;
    let g = lam_half.matrix() * inv_half.matrix();
    let out = &g * rho.matrix() * g.adjoint();
    let norm: f64 = out.diagonal().iter().map(|z| z.re).sum();
    let witness = if norm > 1e-300 {
        let smoothed = DensityMatrix::new(out * c(1.0 / norm), rho.dims())?;
        let dist = sine_distance(rho, &smoothed)?;
        let dm = max_relative(&smoothed, sigma)?.value;
        Some(SmoothingWitness {
            smoothed_state: smoothed,
            sine_distance_to_original: dist,
            dmax_to_sigma: dm,
        })
    } else {
        None
    };
    Ok(SmoothingConstruction {
        lambda,
        trace_sigma,
        radius: trace_sigma.sqrt(),
        bound,
        witness,
    })
}

/// Grid of orders used for the Rényi lower bound on the smoothed max-divergence.
pub const SMOOTHING_ALPHA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// `max_α D_α(ρ‖σ) + (2/(α−1)) log₂(1/(1−ε))` over [`SMOOTHING_ALPHA_GRID`].
pub fn smoothed_max_lower(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &a in &SMOOTHING_ALPHA_GRID {
        let d = petz_renyi(a, rho, sigma)?.value;
        best = best.max(d + (2.0 / (a - 1.0)) * (1.0 / (1.0 - eps)).log2());
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct SmoothedMax {
    pub result: DivergenceResult,
    /// Smallest `λ` (to bisection precision) with `Tr(ρ − 2^λσ)₊ ≤ ε²`.
    pub lambda: f64,
    pub witness: Option<SmoothingWitness>,
}

/// Certified bracket on the smoothed max-divergence over the sine-distance ball.
pub fn smoothed_max_bracket(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<SmoothedMax> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("ε = {eps} outside (0,1)")));
    }
    check_dims(rho, sigma)?;
    let e2 = eps * eps;
    let lower = smoothed_max_lower(eps, rho, sigma)?;
    let dmax = max_relative(rho, sigma)?.value;
    // Tr(ρ − 2^λσ)₊ ≥ 1 − 2^λ, so anything below log₂(1−ε²) is infeasible
    let mut lo = (1.0 - e2).log2() - 1.0;
    let mut hi = if dmax.is_finite() { dmax.max(lo + 1.0) } else { lo + 1.0 };
    let mut guard = 0;
    while excess_trace(hi, rho, sigma) > e2 {
        lo = hi;
        hi += (hi.abs()).max(1.0);
        guard += 1;
        if guard > 64 {
            return Ok(SmoothedMax {
                result: DivergenceResult {
                    value: f64::INFINITY,
                    method: Method::ConstructiveBound,
                    lower: Some(lower),
                    upper: Some(f64::INFINITY),
                },
                lambda: f64::INFINITY,
                witness: None,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess_trace(mid, rho, sigma) <= e2 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    let construction = smoothing_construction(hi, rho, sigma)?;
    let mut upper = construction.bound;
    if let Some(w) = &construction.witness {
        if w.sine_distance_to_original <= eps + 1e-12 {
            upper = upper.min(w.dmax_to_sigma);
        }
    }
    if lower > upper + 1e-9 {
        return Err(Error::BracketInverted { lower, upper });
    }
    Ok(SmoothedMax {
        result: DivergenceResult {
            value: upper,
            method: Method::ConstructiveBound,
            lower: Some(lower),
            upper: Some(upper),
        },
        lambda: hi,
        witness: construction.witness,
    })
}

/// `D_H^{1−ε²}(ρ‖σ) − log₂(1−ε²)`.
pub fn dh_from_dmax_bound(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let e2 = eps * eps;
    Ok(hypothesis_testing(1.0 - e2, rho, sigma)?.result.value - (1.0 - e2).log2())
}

/// `D_α(ρ‖σ) + (2/(α−1)) log₂(1/ε) + log₂(1/(1−ε²))` with the Petz divergence.
pub fn dmax_from_renyi_bound(eps: f64, alpha: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if alpha <= 1.0 {
        return Err(Error::PreconditionViolated(format!("order {alpha} must exceed 1")));
    }
    let d = petz_renyi(alpha, rho, sigma)?.value;
    Ok(d + (2.0 / (alpha - 1.0)) * (1.0 / eps).log2() + (1.0 / (1.0 - eps * eps)).log2())
}

/// `(1/γ) log₂(2^{γ D_{1+γ}} + 2^{−γ D_{1−γ}} + 1)`.
pub fn c_gamma(gamma: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("γ = {gamma} outside (0,1]")));
    }
    let up = petz_renyi(1.0 + gamma, rho, sigma)?.value;
    if !up.is_finite() {
        return Err(Error::InfiniteRenyi { alpha: 1.0 + gamma });
    }
    let down = petz_renyi(1.0 - gamma, rho, sigma)?.value;
    let terms = [gamma * up, -gamma * down, 0.0];
    Ok(crate::util::log2_sum_exp2(&terms) / gamma)
}

/// `D + δc_γ² − D_{1+δ}`; requires `δ ≤ γ/2`.
pub fn petz_continuity_upper(delta: f64, gamma: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if !(delta > 0.0 && delta <= gamma / 2.0) {
        return Err(Error::PreconditionViolated(format!("δ = {delta} exceeds γ/2 = {}", gamma / 2.0)));
    }
    let cg = c_gamma(gamma, rho, sigma)?;
    let d = umegaki(rho, sigma)?.value;
    Ok(d + delta * cg * cg - petz_renyi(1.0 + delta, rho, sigma)?.value)
}

/// `D_{1−δ} − D + δc_γ²`; requires `δ ≤ log₂3 / (2c_γ)`.
pub fn petz_continuity_lower(delta: f64, gamma: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let cg = c_gamma(gamma, rho, sigma)?;
    let limit = 3.0_f64.log2() / (2.0 * cg);
    if !(delta > 0.0 && delta <= limit) {
        return Err(Error::PreconditionViolated(format!("δ = {delta} exceeds log₂3/(2c) = {limit}")));
    }
    let d = umegaki(rho, sigma)?.value;
    Ok(petz_renyi(1.0 - delta, rho, sigma)?.value - d + delta * cg * cg)
}

/// Both continuity slacks; fails if either precondition does.
pub fn petz_continuity_check(delta: f64, gamma: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<(f64, f64)> {
    Ok((
        petz_continuity_upper(delta, gamma, rho, sigma)?,
        petz_continuity_lower(delta, gamma, rho, sigma)?,
    ))
}

/// Window around `D` containing the per-copy smoothed max-divergence of `n` copies.
pub fn aep_bounds(n: usize, eps: f64, gamma: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<(f64, f64)> {
    if n == 0 || !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput("need n ≥ 1 and ε ∈ (0,1]".into()));
    }
    let cg = c_gamma(gamma, rho, sigma)?;
    let d = umegaki(rho, sigma)?.value;
    let k = 4.0 * cg / (n as f64).sqrt();
    let lower = d - k * (2.0 / (1.0 - eps)).log2();
    let upper = d + k * (2.0 / eps).log2() + (1.0 / (1.0 - eps * eps)).log2() / n as f64;
    Ok((lower, upper))
}

/// `(D(ρ‖σ) + h(ε)) / (1−ε)`.
pub fn dh_upper_via_umegaki(eps: f64, rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    Ok((umegaki(rho, sigma)?.value + binary_entropy(eps)) / (1.0 - eps))
}

/// `D(Σλᵢρᵢ‖σ) + H(λ) − Σλᵢ D(ρᵢ‖σ)`.
pub fn almost_concavity_check(lambda: &[f64], rhos: &[DensityMatrix], sigma: &DensityMatrix) -> Result<f64> {
    if lambda.len() != rhos.len() || rhos.is_empty() {
        return Err(Error::InvalidInput("weights and states differ in number".into()));
    }
    if (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-10 || lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidInput("weights are not a probability vector".into()));
    }
    let d = rhos[0].dim();
    let mut mix = CMatrix::zeros(d, d);
    let mut avg = 0.0;
    for (l, r) in lambda.iter().zip(rhos) {
        mix += r.matrix() * c(*l);
        avg += l * umegaki(r, sigma)?.value;
    }
    let mixed = DensityMatrix::new(mix, rhos[0].dims())?;
    Ok(umegaki(&mixed, sigma)?.value + crate::util::shannon_entropy(lambda) - avg)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::operator::{random_density, C64};

    fn diag(p: &[f64]) -> DensityMatrix {
        DensityMatrix::from_diag(p).unwrap()
    }

    fn ket0() -> DensityMatrix {
        diag(&[1.0, 0.0])
    }

    fn plus() -> DensityMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DensityMatrix::from_pure(&[C64::new(s, 0.0), C64::new(s, 0.0)], &[2]).unwrap()
    }

    fn half() -> DensityMatrix {
        DensityMatrix::maximally_mixed(2)
    }

    fn kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).log2()).sum()
    }

    #[test]
    fn distances_examples() {
        let r = random_density(3, 3, 1).unwrap();
        assert!((fidelity(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&r, &r).unwrap() < 1e-12);
        let (a, b) = (ket0(), diag(&[0.0, 1.0]));
        assert_eq!(fidelity(&a, &b).unwrap(), 0.0);
        assert_eq!(sine_distance(&a, &b).unwrap(), 1.0);
        assert!((trace_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((fidelity(&ket0(), &plus()).unwrap() - 0.5).abs() < 1e-12);
        assert!((sine_distance(&ket0(), &plus()).unwrap() - 0.5_f64.sqrt()).abs() < 1e-12);
        // pure states: T = √(1 − F), eigenvalues of |0⟩⟨0| − |+⟩⟨+| are ±1/√2
        assert!((trace_distance(&ket0(), &plus()).unwrap() - 0.5_f64.sqrt()).abs() < 1e-12);
        let s = random_density(3, 3, 2).unwrap();
        assert!((fidelity(&r, &s).unwrap() - fidelity(&s, &r).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn gentle_examples() {
        let rho = diag(&[0.9, 0.1]);
        let g = gentle_measurement_post_state(&rho, &HermitianOperator::identity(2)).unwrap();
        assert!(g.bound.abs() < 1e-15);
        let g = gentle_measurement_post_state(&rho, &HermitianOperator::from_real_diag(&[1.0, 0.25])).unwrap();
        let d = g.post_state.op().diagonal();
        assert!((d[0] - 0.9 / 0.925).abs() < 1e-14 && (d[1] - 0.025 / 0.925).abs() < 1e-14);
        assert!((g.bound - 0.075_f64.sqrt()).abs() < 1e-14);
        assert!(g.sine_distance <= g.bound + 1e-9);
        let pure = ket0();
        let g = gentle_measurement_post_state(&pure, &HermitianOperator::from_real_diag(&[1.0, 0.0])).unwrap();
        assert!(g.bound.abs() < 1e-15);
        assert!(matches!(
            gentle_measurement_post_state(&pure, &HermitianOperator::from_real_diag(&[0.0, 1.0])),
            Err(Error::ZeroAcceptance(_))
        ));
    }

    #[test]
    fn umegaki_examples() {
        let r = random_density(3, 3, 3).unwrap();
        assert!(umegaki(&r, &r).unwrap().value.abs() < 1e-12);
        let v = umegaki(&diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap().value;
        assert!((v - kl(&[0.5, 0.5], &[0.25, 0.75])).abs() < 1e-15);
        assert!((v - 0.20752).abs() < 1e-5);
        assert_eq!(umegaki(&ket0(), &plus()).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn petz_examples() {
        let r = random_density(3, 3, 4).unwrap();
        for a in [0.3, 0.7, 1.5, 2.0] {
            assert!(petz_renyi(a, &r, &r).unwrap().value.abs() < 1e-12);
        }
        let v = petz_renyi(2.0, &diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap().value;
        assert!((v - (4.0_f64 / 3.0).log2()).abs() < 1e-14);
        let v = petz_renyi(2.0, &ket0(), &half()).unwrap().value;
        assert!((v - 1.0).abs() < 1e-14);
        // the support projector limit: −log₂ Tr[Π_ρ σ]
        let v = petz_renyi(0.0, &ket0(), &half()).unwrap().value;
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn f_divergence_examples() {
        let (r, s) = (random_density(3, 3, 5).unwrap(), random_density(3, 3, 6).unwrap());
        let fx = standard_f_divergence(|x| x * x.log2(), 0.0, f64::INFINITY, &r, &s).unwrap().value;
        assert!((fx - umegaki(&r, &s).unwrap().value).abs() < 1e-9);
        let sq = standard_f_divergence(|x| x * x, 0.0, f64::INFINITY, &diag(&[0.5, 0.5]), &diag(&[0.25, 0.75]))
            .unwrap()
            .value;
        assert!((sq - 4.0 / 3.0).abs() < 1e-14);
        let one = standard_f_divergence(|_| 1.0, 1.0, 0.0, &ket0(), &plus()).unwrap().value;
        assert!((one - 1.0).abs() < 1e-12);
        let s_un = DensityMatrix::new_unnormalized(s.matrix() * c(2.5), &[3]).unwrap();
        let one = standard_f_divergence(|_| 1.0, 1.0, 0.0, &r, &s_un).unwrap().value;
        assert!((one - 2.5).abs() < 1e-12);
    }

    #[test]
    fn relative_modular_examples() {
        let (r, s) = (random_density(3, 3, 7).unwrap(), random_density(3, 3, 8).unwrap());
        let out = relative_modular_apply(&r, &s, s.matrix()).unwrap();
        assert!((out - r.matrix()).iter().all(|z| z.norm() < 1e-10));
        let x = crate::operator::random_hermitian(2, 9).into_matrix();
        let out = relative_modular_apply(&half(), &half(), &x).unwrap();
        assert!((out - &x).iter().all(|z| z.norm() < 1e-14));
        let (p, q) = ([0.2, 0.8], [0.6, 0.4]);
        let mut unit = CMatrix::zeros(2, 2);
        unit[(0, 1)] = c(1.0);
        let out = relative_modular_apply(&diag(&p), &diag(&q), &unit).unwrap();
        assert!((out[(0, 1)].re - p[0] / q[1]).abs() < 1e-15);
    }

    #[test]
    fn dmax_examples() {
        let r = random_density(3, 3, 10).unwrap();
        assert!(max_relative(&r, &r).unwrap().value.abs() < 1e-10);
        assert!((max_relative(&diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap().value - 1.0).abs() < 1e-15);
        assert!((max_relative(&ket0(), &half()).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(max_relative(&ket0(), &plus()).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn geometric_examples() {
        let v = geometric_renyi(2.0, &diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap().value;
        assert!((v - (4.0_f64 / 3.0).log2()).abs() < 1e-14);
        let v = geometric_renyi(1.5, &ket0(), &half()).unwrap().value;
        assert!((v - 1.0).abs() < 1e-14);
        let r = random_density(3, 3, 11).unwrap();
        assert!(geometric_renyi(1.5, &r, &r).unwrap().value.abs() < 1e-10);
        let s = random_density(3, 3, 12).unwrap();
        let lim = geometric_limit_check(1.5, &r, &s).unwrap();
        assert!(lim.agrees, "{lim:?}");
    }

    #[test]
    fn hypothesis_examples() {
        let r = random_density(3, 3, 13).unwrap();
        let h = hypothesis_testing(0.5, &r, &r).unwrap();
        assert!((h.result.value - 1.0).abs() < 1e-9, "{}", h.result.value);
        assert!(h.gap <= 1e-8);
        let h = hypothesis_testing(0.1, &ket0(), &half()).unwrap();
        assert!((h.beta_primal - 0.45).abs() < 1e-12);
        assert!((h.result.value - (-(0.45_f64).log2())).abs() < 1e-12);
        // same pair presented in a rotated basis goes through the eigen path
        let rot = plus();
        let h2 = hypothesis_testing(0.1, &rot, &half()).unwrap();
        assert!((h2.beta_primal - 0.45).abs() < 1e-12, "{}", h2.beta_primal);
        assert!(h2.gap <= 1e-8);
        // orthogonal support: zero type-II error
        let h = hypothesis_testing(0.2, &ket0(), &diag(&[0.0, 1.0])).unwrap();
        assert_eq!(h.result.value, f64::INFINITY);
    }

    #[test]
    fn smoothing_construction_fixed_lambda() {
        let (r, s) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let l = smoothing_construction(0.5, &r, &s).unwrap();
        let want = 0.5 - 0.5_f64.exp2() * 0.25;
        assert!((l.trace_sigma - want).abs() < 1e-15);
        assert!((l.bound - (0.5 - (1.0 - want).log2())).abs() < 1e-14);
        assert!((l.bound - 0.7285).abs() < 1e-4);
        let w = l.witness.unwrap();
        assert!(w.sine_distance_to_original <= l.radius + 1e-9);
        assert!(w.dmax_to_sigma <= l.bound + 1e-9);
    }

    #[test]
    fn smoothed_bracket_equal_states() {
        let r = random_density(2, 2, 14).unwrap();
        let b = smoothed_max_bracket(0.2, &r, &r).unwrap();
        let (lo, hi) = (b.result.lower.unwrap(), b.result.upper.unwrap());
        assert!(lo <= 0.0 + 1e-12 && hi >= -1e-12, "{lo} {hi}");
    }

    #[test]
    fn c_gamma_examples() {
        let r = random_density(2, 2, 15).unwrap();
        assert!((c_gamma(1.0, &r, &r).unwrap() - 3.0_f64.log2()).abs() < 1e-10);
        // D₂ = 1 and D₀ = −log₂ Tr[Π_ρ σ] = 1 for |0⟩ against I/2
        let v = c_gamma(1.0, &ket0(), &half()).unwrap();
        assert!((v - 3.5_f64.log2()).abs() < 1e-14);
        assert!(matches!(c_gamma(1.0, &ket0(), &plus()), Err(Error::InfiniteRenyi { .. })));
    }

    #[test]
    fn continuity_preconditions() {
        let (r, s) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let (u, l) = petz_continuity_check(0.1, 1.0, &r, &s).unwrap();
        assert!(u > 0.0 && l > 0.0);
        assert!(matches!(
            petz_continuity_upper(0.6, 1.0, &r, &s),
            Err(Error::PreconditionViolated(_))
        ));
        let same = petz_continuity_check(0.1, 1.0, &r, &r).unwrap();
        let cg = 3.0_f64.log2();
        assert!((same.0 - 0.1 * cg * cg).abs() < 1e-12);
        assert!((same.1 - 0.1 * cg * cg).abs() < 1e-12);
    }

    #[test]
    fn aep_equal_states() {
        let r = random_density(2, 2, 16).unwrap();
        let (lo, hi) = aep_bounds(100, 0.5, 1.0, &r, &r).unwrap();
        let want = -4.0 * 3.0_f64.log2() / 10.0 * 2.0;
        assert!((lo - want).abs() < 1e-9);
        assert!(hi > 0.0);
    }

    #[test]
    fn dmax_from_renyi_formula() {
        let v = dmax_from_renyi_bound(0.3, 2.0, &diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap();
        let want = (4.0_f64 / 3.0).log2() + 2.0 * (1.0 / 0.3_f64).log2() - (1.0 - 0.09_f64).log2();
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn concavity_trivial_cases() {
        let s = random_density(2, 2, 17).unwrap();
        let r = random_density(2, 2, 18).unwrap();
        assert!(almost_concavity_check(&[1.0], &[r.clone()], &s).unwrap().abs() < 1e-12);
        let lam = [0.2, 0.3, 0.5];
        let slack = almost_concavity_check(&lam, &[r.clone(), r.clone(), r.clone()], &s).unwrap();
        assert!((slack - crate::util::shannon_entropy(&lam)).abs() < 1e-10);
    }

    #[test]
    fn result_json_has_bracket() {
        let h = hypothesis_testing(0.3, &diag(&[0.5, 0.5]), &diag(&[0.25, 0.75])).unwrap();
        let j = serde_json::to_value(&h.result).unwrap();
        assert!(j.get("lower").is_some() && j.get("upper").is_some());
        assert_eq!(j["method"], "exact_primal_dual");
        let inf = serde_json::to_value(DivergenceResult::exact(f64::INFINITY)).unwrap();
        assert_eq!(inf["value"], "inf");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(raw: &[f64]) -> Vec<f64> {
            let t: f64 = raw.iter().sum();
            raw.iter().map(|x| x / t).collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn np_gap_closes(d in 2usize..6, r in 1usize..6, eps in 0.01f64..0.9, seed in any::<u64>()) {
                let rho = random_density(d, r.min(d), seed).unwrap();
                let sigma = random_density(d, d, seed ^ 0x9e37).unwrap();
                let h = hypothesis_testing(eps, &rho, &sigma).unwrap();
                prop_assert!(h.beta_primal >= h.beta_dual - 1e-15);
                prop_assert!(h.gap <= 1e-8);
            }

            #[test]
            fn commuting_np_matches_vector_form(
                raw_p in prop::collection::vec(0.01f64..1.0, 2..7),
                raw_q in prop::collection::vec(0.01f64..1.0, 7),
                eps in 0.01f64..0.9,
            ) {
                let p = simplex(&raw_p);
                let q = simplex(&raw_q[..p.len()]);
                let dense = hypothesis_testing(eps, &DensityMatrix::from_diag(&p).unwrap(), &DensityMatrix::from_diag(&q).unwrap())
                    .unwrap()
                    .result
                    .value;
                let vector = hypothesis_testing_classical(eps, &p, &q).unwrap().value;
                prop_assert!((dense - vector).abs() <= 1e-9);
            }

            #[test]
            fn ordering_chain(d in 2usize..6, alpha in 1.05f64..2.0, seed in any::<u64>()) {
                let rho = random_density(d, d, seed).unwrap();
                let sigma = random_density(d, d, seed.wrapping_add(1)).unwrap();
                let u = umegaki(&rho, &sigma).unwrap().value;
                let p = petz_renyi(alpha, &rho, &sigma).unwrap().value;
                let g = geometric_renyi(alpha, &rho, &sigma).unwrap().value;
                let m = max_relative(&rho, &sigma).unwrap().value;
                prop_assert!(u <= p + 1e-9 && p <= g + 1e-9 && g <= m + 1e-9);
            }

            #[test]
            fn power_matches_dense(d in 2usize..4, n in 1usize..4, eps in 0.05f64..0.5, seed in any::<u64>()) {
                let a = random_density(d, d, seed).unwrap();
                let b = random_density(d, d, seed ^ 7).unwrap();
                let fast = hypothesis_testing_power(eps, &a, &b, n).unwrap().value;
                let dense = hypothesis_testing(eps, &a.tensor_power(n), &b.tensor_power(n)).unwrap().result.value;
                prop_assert!((fast - dense).abs() <= 1e-8);
            }
        }
    }
}
