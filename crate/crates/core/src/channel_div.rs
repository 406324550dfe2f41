//! Channel divergences: the stabilized supremum over entangled inputs
//! (multi-start ascent, so a lower bound), exact values for classical and
//! replacer pairs, the Choi D_max upper bound and the geometric chain-rule checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::KrausChannel;
use crate::divergences::{geometric_renyi, max_relative, DivergenceKind};
use crate::error::{Error, Result};
use crate::operator::{matmul, matrix_function, random_unit_vector, rng_from_seed, CMatrix, DensityMatrix, HermitianOperator, C64};
use crate::util::ext_real;

/// Joint dimension above which multi-copy computations abort.
pub const DEFAULT_DIM_CAP: usize = 4096;
/// Divergence values (bits) above this count as infinite.
pub const INFINITY_THRESHOLD: f64 = 1.152_921_504_606_847e18; // 2^60

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub tol: f64,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iterations: 500,
            initial_step: 0.1,
            tol: 1e-9,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    ExactClassical,
    ExactChoiDmax,
    OptimizerLowerBound,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub restarts: usize,
    pub iterations: usize,
    /// Best objective reached from each start, in start order.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDivergenceEstimate {
    #[serde(with = "ext_real")]
    pub value: f64,
    pub kind: EstimateKind,
    /// Input on `A' ⊗ A` (reference index major) as `[re, im]` pairs.
    #[serde(with = "witness_json", default, skip_serializing_if = "Option::is_none")]
    pub witness_state: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_report: Option<OptimizerReport>,
}

mod witness_json {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<C64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|w| w.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<C64>>, D::Error> {
        let v: Option<Vec<[f64; 2]>> = Option::deserialize(d)?;
        Ok(v.map(|w| w.into_iter().map(|[re, im]| C64::new(re, im)).collect()))
    }
}

fn same_shape(e: &KrausChannel, f: &KrausChannel) -> Result<()> {
    if e.dim_in() != f.dim_in() || e.dim_out() != f.dim_out() {
        return Err(Error::DimensionMismatch(format!(
            "channels {}→{} and {}→{}",
            e.dim_in(),
            e.dim_out(),
            f.dim_in(),
            f.dim_out()
        )));
    }
    Ok(())
}

fn normalize(v: &mut [C64]) {
    let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
}

/// Output pair `((id⊗E)(ψ), (id⊗F)(ψ))` for `ψ` on `A' ⊗ A` with `dim A' = dim A`.
pub fn output_pair(
    e: &KrausChannel,
    f: &KrausChannel,
    psi: &[C64],
) -> Result<(DensityMatrix, DensityMatrix)> {
    let d = e.dim_in();
    let rho = DensityMatrix::from_pure(psi, &[psi.len() / d, d])?;
    Ok((e.apply(&rho, 1)?, f.apply(&rho, 1)?))
}

fn objective(kind: &DivergenceKind, e: &KrausChannel, f: &KrausChannel, psi: &[C64]) -> Result<f64> {
    let (a, b) = output_pair(e, f, psi)?;
    kind.evaluate(&a, &b)
}

/// `M = Tr_B[J_F #_α J_E]` for a full-rank `J_F`. Writing the input as
/// `ψ = (C ⊗ 1)|Γ⟩`, covariance of the weighted geometric mean under
/// congruence gives `Q̂_α(E(ψ)‖F(ψ)) = Tr[C†C M]`, which stays accurate
/// when the reference marginal of `ψ` is nearly singular.
pub fn geometric_choi_marginal(alpha: f64, e: &KrausChannel, f: &KrausChannel) -> Result<Option<CMatrix>> {
    same_shape(e, f)?;
    let (je, jf) = (e.choi(), f.choi());
    let sf = jf.spectrum();
    if sf.values[0] <= 1e-10 * sf.norm() {
        return Ok(None);
    }
    let inv_sqrt = matrix_function(jf.op(), |x| x.powf(-0.5), 0.0)?;
    let sqrt = matrix_function(jf.op(), |x| x.sqrt(), 0.0)?;
    let inner = matmul(&matmul(inv_sqrt.matrix(), je.matrix()), inv_sqrt.matrix());
    let inner = HermitianOperator::new((&inner + inner.adjoint()) * C64::new(0.5, 0.0))?;
    let pw = matrix_function(&inner, |x| x.max(0.0).powf(alpha), 0.0)?;
    let g = matmul(&matmul(sqrt.matrix(), pw.matrix()), sqrt.matrix());
    let (din, dout) = (e.dim_in(), e.dim_out());
    Ok(Some(CMatrix::from_fn(din, din, |a, a2| {
        (0..dout).map(|b| g[(a * dout + b, a2 * dout + b)]).sum()
    })))
}

/// `D̂_α(E(ψ)‖F(ψ))` from the marginal of [`geometric_choi_marginal`].
fn geometric_objective(alpha: f64, m: &CMatrix, psi: &[C64]) -> f64 {
    let d = m.nrows();
    let c = CMatrix::from_fn(d, psi.len() / d, |a, b| psi[a * (psi.len() / d) + b]);
    let q = c.adjoint() * &c;
    let tr: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (q[(i, j)] * m[(j, i)]).re).sum();
    tr.max(0.0).log2() / (alpha - 1.0)
}

/// Exact `D̂_α(E‖F)` for `α ∈ (0,1) ∪ (1,2]` when `J_F` is full rank: the
/// extreme eigenvalue of `Tr_B[J_F #_α J_E]` (largest for `α > 1`, smallest below).
pub fn geometric_channel_exact(alpha: f64, e: &KrausChannel, f: &KrausChannel) -> Result<Option<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) || alpha == 1.0 {
        return Err(Error::InvalidInput(format!("geometric order {alpha} outside (0,1) ∪ (1,2]")));
    }
    let Some(m) = geometric_choi_marginal(alpha, e, f)? else {
        return Ok(None);
    };
    let m = HermitianOperator::new((&m + m.adjoint()) * C64::new(0.5, 0.0))?;
    let vals = &m.spectrum().values;
    let extreme = if alpha > 1.0 { vals[vals.len() - 1] } else { vals[0] };
    Ok(Some(extreme.max(0.0).log2() / (alpha - 1.0)))
}

pub fn maximally_entangled(d: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    let w = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        v[i * d + i] = C64::new(w, 0.0);
    }
    v
}

/// `|0⟩_{A'} ⊗ |x⟩_A`.
pub fn basis_product(d: usize, x: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    v[x] = C64::new(1.0, 0.0);
    v
}

/// `ψ^{⊗n}` for `ψ` on `A' ⊗ A`, reordered to `A'^n ⊗ A^n`.
pub fn interleaved_power(psi: &[C64], d_ref: usize, d: usize, n: usize) -> Vec<C64> {
    product_reordered(&vec![(psi, d_ref, d); n])
}

/// `⊗_k ψ_k` with each `ψ_k` on `A'_k ⊗ A_k`, reordered to `(⊗A'_k) ⊗ (⊗A_k)`.
pub fn product_reordered(parts: &[(&[C64], usize, usize)]) -> Vec<C64> {
    let ref_total: usize = parts.iter().map(|p| p.1).product();
    let sys_total: usize = parts.iter().map(|p| p.2).product();
    let mut out = vec![C64::new(0.0, 0.0); ref_total * sys_total];
    for r in 0..ref_total {
        for s in 0..sys_total {
            // digits of r and s, most significant first
            let (mut rr, mut ss) = (r, s);
            let mut amp = C64::new(1.0, 0.0);
            for (psi, dr, ds) in parts.iter().rev() {
                let (a, b) = (rr % dr, ss % ds);
                rr /= dr;
                ss /= ds;
                amp *= psi[a * ds + b];
                if amp == C64::new(0.0, 0.0) {
                    break;
                }
            }
            out[r * sys_total + s] = amp;
        }
    }
    out
}

fn random_start(cfg: &OptimizerConfig, idx: usize, dim: usize) -> Vec<C64> {
    let seed = cfg
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(idx as u64 + 1);
    random_unit_vector(dim, &mut rng_from_seed(seed))
}

struct Ascent {
    value: f64,
    psi: Vec<C64>,
    iterations: usize,
}

fn ascend<F: Fn(&[C64]) -> Result<f64>>(obj: &F, start: Vec<C64>, cfg: &OptimizerConfig) -> Result<Ascent> {
    let mut x = start;
    normalize(&mut x);
    let mut fx = obj(&x)?;
    let n = x.len();
    let mut iterations = 0;
    while iterations < cfg.max_iterations && fx.is_finite() && fx <= INFINITY_THRESHOLD {
        iterations += 1;
        let mut g = vec![0.0; 2 * n];
        for (k, gk) in g.iter_mut().enumerate() {
            let bump = |s: f64| {
                let mut y = x.clone();
                if k < n {
                    y[k].re += s;
                } else {
                    y[k - n].im += s;
                }
                normalize(&mut y);
                obj(&y)
            };
            let (up, down) = (bump(cfg.fd_step), bump(-cfg.fd_step));
            match (up, down) {
                (Ok(u), Ok(d)) if u.is_finite() && d.is_finite() => *gk = (u - d) / (2.0 * cfg.fd_step),
                (Ok(u), _) if !u.is_finite() || u > INFINITY_THRESHOLD => {
                    let mut y = x.clone();
                    if k < n {
                        y[k].re += cfg.fd_step;
                    } else {
                        y[k - n].im += cfg.fd_step;
                    }
                    normalize(&mut y);
                    return Ok(Ascent {
                        value: f64::INFINITY,
                        psi: y,
                        iterations,
                    });
                }
                _ => *gk = 0.0,
            }
        }
        // tangent projection at x on the real sphere
        let dot: f64 = (0..n).map(|i| g[i] * x[i].re + g[n + i] * x[i].im).sum();
        for i in 0..n {
            g[i] -= dot * x[i].re;
            g[n + i] -= dot * x[i].im;
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-12 {
            break;
        }
        let mut step = cfg.initial_step;
        let mut moved = false;
        while step > 1e-10 {
            let mut y: Vec<C64> = (0..n)
                .map(|i| x[i] + C64::new(g[i], g[n + i]) * (step / gn))
                .collect();
            normalize(&mut y);
            if let Ok(fy) = obj(&y) {
                if fy > fx {
                    let gain = fy - fx;
                    x = y;
                    fx = fy;
                    moved = gain >= cfg.tol;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(Ascent {
        value: fx,
        psi: x,
        iterations,
    })
}

/// Lower bound on `sup_ψ D((id⊗E)(ψ) ‖ (id⊗F)(ψ))` with `dim A' = dim A`.
pub fn stabilized_divergence(
    kind: DivergenceKind,
    e: &KrausChannel,
    f: &KrausChannel,
    cfg: &OptimizerConfig,
) -> Result<ChannelDivergenceEstimate> {
    stabilized_divergence_with_starts(kind, e, f, cfg, &[])
}

/// As [`stabilized_divergence`], with additional caller-supplied starting inputs.
pub fn stabilized_divergence_with_starts(
    kind: DivergenceKind,
    e: &KrausChannel,
    f: &KrausChannel,
    cfg: &OptimizerConfig,
    extra: &[Vec<C64>],
) -> Result<ChannelDivergenceEstimate> {
    same_shape(e, f)?;
    let d = e.dim_in();
    let dim = d * d;
    let mut starts = vec![maximally_entangled(d)];
    starts.extend((0..d).map(|x| basis_product(d, x)));
    for s in extra {
        if s.len() != dim {
            return Err(Error::DimensionMismatch(format!("start of length {} for dim {dim}", s.len())));
        }
        starts.push(s.clone());
    }
    starts.extend((0..cfg.restarts).map(|i| random_start(cfg, i, dim)));

    let marginal = match kind {
        DivergenceKind::Geometric(alpha) if alpha > 0.0 => geometric_choi_marginal(alpha, e, f)?,
        _ => None,
    };
    let obj = |psi: &[C64]| match (&marginal, kind) {
        (Some(m), DivergenceKind::Geometric(alpha)) => Ok(geometric_objective(alpha, m, psi)),
        _ => objective(&kind, e, f, psi),
    };
    let runs: Vec<Option<Ascent>> = starts
        .into_par_iter()
        .map(|s| ascend(&obj, s, cfg).ok())
        .collect();
    let mut best: Option<&Ascent> = None;
    let mut trace = Vec::with_capacity(runs.len());
    let mut iterations = 0;
    for run in runs.iter() {
        match run {
            Some(a) => {
                trace.push(a.value);
                iterations += a.iterations;
                if best.is_none_or(|b| a.value > b.value) {
                    best = Some(a);
                }
            }
            None => trace.push(f64::NAN),
        }
    }
    let best = best.ok_or_else(|| Error::InvalidInput("objective failed at every start".into()))?;
    let value = if best.value > INFINITY_THRESHOLD {
        f64::INFINITY
    } else {
        best.value
    };
    Ok(ChannelDivergenceEstimate {
        value,
        kind: EstimateKind::OptimizerLowerBound,
        witness_state: Some(best.psi.clone()),
        optimizer_report: Some(OptimizerReport {
            restarts: trace.len(),
            iterations,
            trace,
        }),
    })
}

/// `max_x D(E(δ_x) ‖ F(δ_x))` for classical channels.
pub fn exact_classical_channel_divergence(
    kind: DivergenceKind,
    e: &KrausChannel,
    f: &KrausChannel,
) -> Result<ChannelDivergenceEstimate> {
    same_shape(e, f)?;
    let pe = e.as_stochastic().ok_or(Error::NotClassical)?;
    let pf = f.as_stochastic().ok_or(Error::NotClassical)?;
    let d = e.dim_in();
    let mut best = (f64::NEG_INFINITY, 0);
    for x in 0..d {
        let col = |p: &Vec<Vec<f64>>| p.iter().map(|row| row[x]).collect::<Vec<_>>();
        let a = DensityMatrix::from_diag(&col(&pe))?;
        let b = DensityMatrix::from_diag(&col(&pf))?;
        let v = kind.evaluate(&a, &b)?;
        if v > best.0 {
            best = (v, x);
        }
    }
    Ok(ChannelDivergenceEstimate {
        value: best.0,
        kind: EstimateKind::ExactClassical,
        witness_state: Some(basis_product(d, best.1)),
        optimizer_report: None,
    })
}

/// `D_max(J_E ‖ J_F)` on the Choi operators.
pub fn dmax_channel_divergence_choi(e: &KrausChannel, f: &KrausChannel) -> Result<ChannelDivergenceEstimate> {
    same_shape(e, f)?;
    let v = max_relative(&e.choi(), &f.choi())?.value;
    Ok(ChannelDivergenceEstimate {
        value: v,
        kind: EstimateKind::ExactChoiDmax,
        witness_state: Some(maximally_entangled(e.dim_in())),
        optimizer_report: None,
    })
}

/// Per-copy stabilized estimates of `E^{⊗n}` against `F^{⊗n}` for `n = 1..=n_max`.
pub fn regularized_estimate(
    kind: DivergenceKind,
    e: &KrausChannel,
    f: &KrausChannel,
    n_max: usize,
    cfg: &OptimizerConfig,
    cap: usize,
) -> Result<Vec<(usize, f64)>> {
    same_shape(e, f)?;
    let (din, dout) = (e.dim_in(), e.dim_out());
    let joint = (din * din.max(dout)).checked_pow(n_max as u32).unwrap_or(usize::MAX);
    if joint > cap {
        return Err(Error::CapExceeded { dim: joint, cap });
    }
    let mut out = Vec::with_capacity(n_max);
    let mut single: Option<Vec<C64>> = None;
    for n in 1..=n_max {
        let (en, fn_) = (e.tensor_power(n), f.tensor_power(n));
        let extra: Vec<Vec<C64>> = single
            .iter()
            .map(|w| interleaved_power(w, din, din, n))
            .collect();
        let est = stabilized_divergence_with_starts(kind, &en, &fn_, cfg, &extra)?;
        if n == 1 {
            single = est.witness_state.clone();
        }
        out.push((n, est.value / n as f64));
    }
    Ok(out)
}

/// True when both channels have the same Choi operator.
pub fn channels_equal(e: &KrausChannel, f: &KrausChannel) -> bool {
    if e.dim_in() != f.dim_in() || e.dim_out() != f.dim_out() {
        return false;
    }
    let diff = e.choi().matrix() - f.choi().matrix();
    diff.iter().all(|z| z.norm() <= 1e-12)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperSource {
    Identical,
    ExactClassical,
    ExactReplacer,
    ChoiDmax,
}

/// Certified upper value of the geometric channel divergence: exact for equal,
/// classical and replacer pairs, otherwise the Choi D_max (which dominates it).
pub fn geometric_channel_upper(alpha: f64, e: &KrausChannel, f: &KrausChannel) -> Result<(f64, UpperSource)> {
    same_shape(e, f)?;
    if channels_equal(e, f) {
        return Ok((0.0, UpperSource::Identical));
    }
    if e.is_classical() && f.is_classical() {
        let v = exact_classical_channel_divergence(DivergenceKind::Geometric(alpha), e, f)?.value;
        return Ok((v, UpperSource::ExactClassical));
    }
    if let (Some(a), Some(b)) = (e.as_replacer(), f.as_replacer()) {
        return Ok((geometric_renyi(alpha, &a, &b)?.value, UpperSource::ExactReplacer));
    }
    Ok((dmax_channel_divergence_choi(e, f)?.value, UpperSource::ChoiDmax))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMode {
    Classical,
    QuantumCertified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Verified,
    Violated,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRuleReport {
    pub status: CheckStatus,
    #[serde(with = "ext_real")]
    pub slack: f64,
    #[serde(with = "ext_real")]
    pub state_term: f64,
    #[serde(with = "ext_real")]
    pub channel_term: f64,
    #[serde(with = "ext_real")]
    pub output_term: f64,
}

/// Slack of `D̂_α(E(ρ)‖F(σ)) ≤ D̂_α(ρ‖σ) + D̂_α(E‖F)`.
pub fn geometric_chain_rule_check(
    alpha: f64,
    e: &KrausChannel,
    f: &KrausChannel,
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
    mode: ChainMode,
) -> Result<ChainRuleReport> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::PreconditionViolated(format!("order {alpha} outside (1,2]")));
    }
    same_shape(e, f)?;
    let channel_term = match mode {
        ChainMode::Classical => {
            exact_classical_channel_divergence(DivergenceKind::Geometric(alpha), e, f)?.value
        }
        ChainMode::QuantumCertified => dmax_channel_divergence_choi(e, f)?.value,
    };
    let state_term = geometric_renyi(alpha, rho, sigma)?.value;
    let output_term = geometric_renyi(alpha, &e.apply_full(rho)?, &f.apply_full(sigma)?)?.value;
    let bound = state_term + channel_term;
    let (status, slack) = if bound.is_infinite() {
        (CheckStatus::Inconclusive, f64::INFINITY)
    } else if output_term.is_infinite() {
        (CheckStatus::Violated, f64::NEG_INFINITY)
    } else {
        let s = bound - output_term;
        (if s >= -1e-8 { CheckStatus::Verified } else { CheckStatus::Violated }, s)
    };
    Ok(ChainRuleReport {
        status,
        slack,
        state_term,
        channel_term,
        output_term,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AdditivityReport {
    pub exact: bool,
    #[serde(with = "ext_real")]
    pub joint: f64,
    #[serde(with = "ext_real")]
    pub sum: f64,
    /// `joint − sum`.
    #[serde(with = "ext_real")]
    pub gap: f64,
}

/// Compares the geometric channel divergence of `E₁⊗E₂` vs `F₁⊗F₂` with the sum
/// of the single ones. Exact for classical channels; otherwise optimizer
/// estimates seeded with the product of the single witnesses.
pub fn geometric_additivity_check(
    alpha: f64,
    e1: &KrausChannel,
    f1: &KrausChannel,
    e2: &KrausChannel,
    f2: &KrausChannel,
    cfg: &OptimizerConfig,
) -> Result<AdditivityReport> {
    let kind = DivergenceKind::Geometric(alpha);
    let (je, jf) = (
        KrausChannel::tensor_channels(e1, e2),
        KrausChannel::tensor_channels(f1, f2),
    );
    if [e1, f1, e2, f2].iter().all(|c| c.is_classical()) {
        let a = exact_classical_channel_divergence(kind, e1, f1)?.value;
        let b = exact_classical_channel_divergence(kind, e2, f2)?.value;
        let joint = exact_classical_channel_divergence(kind, &je, &jf)?.value;
        return Ok(AdditivityReport {
            exact: true,
            joint,
            sum: a + b,
            gap: joint - (a + b),
        });
    }
    let a = stabilized_divergence(kind, e1, f1, cfg)?;
    let b = stabilized_divergence(kind, e2, f2, cfg)?;
    let (wa, wb) = (a.witness_state.clone().unwrap(), b.witness_state.clone().unwrap());
    let (d1, d2) = (e1.dim_in(), e2.dim_in());
    let start = product_reordered(&[(&wa, d1, d1), (&wb, d2, d2)]);
    let joint = stabilized_divergence_with_starts(kind, &je, &jf, cfg, &[start])?.value;
    let sum = a.value + b.value;
    Ok(AdditivityReport {
        exact: false,
        joint,
        sum,
        gap: joint - sum,
    })
}

/// `(1/γ) log₂(2^{γ D̂_{1+γ}(E‖F)} + 2)` with the certified upper value.
pub fn c_hat_gamma(gamma: f64, e: &KrausChannel, f: &KrausChannel) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("γ = {gamma} outside (0,1]")));
    }
    let (d, _) = geometric_channel_upper(1.0 + gamma, e, f)?;
    if d.is_infinite() {
        return Err(Error::InfiniteDivergence);
    }
    Ok(crate::util::log2_sum_exp2(&[gamma * d, 1.0]) / gamma)
}

/// Orders used for the minimization in [`constant_c`].
pub const DEFAULT_ALPHA_GRID: [f64; 10] = [1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0];

#[derive(Clone, Debug, Serialize)]
pub struct ConstantC {
    #[serde(with = "ext_real")]
    pub value: f64,
    pub alpha: f64,
    pub source: UpperSource,
}

/// `8 min_α (1/(α−1)) log₂(2^{(α−1)D̂_α(E‖F)} + 2)` over the grid.
pub fn constant_c(e: &KrausChannel, f: &KrausChannel, alpha_grid: &[f64]) -> Result<ConstantC> {
    let mut best = ConstantC {
        value: f64::INFINITY,
        alpha: f64::NAN,
        source: UpperSource::ChoiDmax,
    };
    for &a in alpha_grid {
        if !(a > 1.0 && a <= 2.0) {
            return Err(Error::InvalidInput(format!("order {a} outside (1,2]")));
        }
        let (d, source) = geometric_channel_upper(a, e, f)?;
        if d.is_infinite() {
            continue;
        }
        let g = a - 1.0;
        let v = 8.0 * crate::util::log2_sum_exp2(&[g * d, 1.0]) / g;
        if v < best.value {
            best = ConstantC { value: v, alpha: a, source };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::umegaki;
    use crate::operator::random_density;

    fn quick() -> OptimizerConfig {
        OptimizerConfig {
            restarts: 3,
            max_iterations: 60,
            ..Default::default()
        }
    }

    fn diag(p: &[f64]) -> DensityMatrix {
        DensityMatrix::from_diag(p).unwrap()
    }

    #[test]
    fn equal_channels_give_zero() {
        let e = KrausChannel::random_channel(2, 2, 2, 1).unwrap();
        let est = stabilized_divergence(DivergenceKind::Umegaki, &e, &e, &quick()).unwrap();
        assert!(est.value.abs() < 1e-10);
        assert!(dmax_channel_divergence_choi(&e, &e).unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn replacer_is_input_independent() {
        let (r0, s0) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let (e, f) = (KrausChannel::replacer(&r0, 2), KrausChannel::replacer(&s0, 2));
        let est = stabilized_divergence(DivergenceKind::Umegaki, &e, &f, &quick()).unwrap();
        assert!((est.value - umegaki(&r0, &s0).unwrap().value).abs() < 1e-8);
        let choi = dmax_channel_divergence_choi(&e, &f).unwrap().value;
        assert!((choi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn classical_vertex_matches_optimizer() {
        let p = vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.3, 0.6]];
        let q = vec![vec![0.3, 0.3, 0.4], vec![0.3, 0.4, 0.2], vec![0.4, 0.3, 0.4]];
        let e = KrausChannel::classical_channel_embed(&p).unwrap();
        let f = KrausChannel::classical_channel_embed(&q).unwrap();
        let exact = exact_classical_channel_divergence(DivergenceKind::Umegaki, &e, &f).unwrap();
        let opt = stabilized_divergence(DivergenceKind::Umegaki, &e, &f, &quick()).unwrap();
        assert!((exact.value - opt.value).abs() < 1e-6, "{} {}", exact.value, opt.value);
    }

    #[test]
    fn witness_reproduces_value() {
        let e = KrausChannel::random_channel(2, 2, 4, 3).unwrap();
        let f = KrausChannel::random_channel(2, 2, 4, 4).unwrap();
        let kind = DivergenceKind::Petz(1.5);
        let est = stabilized_divergence(kind, &e, &f, &quick()).unwrap();
        let w = est.witness_state.unwrap();
        let (a, b) = output_pair(&e, &f, &w).unwrap();
        let again = kind.evaluate(&a, &b).unwrap();
        assert!((again - est.value).abs() < 1e-8, "{again} {}", est.value);
        let choi = dmax_channel_divergence_choi(&e, &f).unwrap().value;
        let opt = stabilized_divergence(DivergenceKind::Dmax, &e, &f, &quick()).unwrap().value;
        assert!(opt <= choi + 1e-8);
    }

    #[test]
    fn geometric_covariance_form_matches_direct() {
        let e = KrausChannel::random_channel(2, 3, 6, 5).unwrap();
        let f = KrausChannel::random_channel(2, 3, 6, 6).unwrap();
        let mut rng = rng_from_seed(7);
        for alpha in [0.5, 1.5, 2.0] {
            let m = geometric_choi_marginal(alpha, &e, &f).unwrap().unwrap();
            for _ in 0..5 {
                let psi = random_unit_vector(4, &mut rng);
                let (a, b) = output_pair(&e, &f, &psi).unwrap();
                let direct = geometric_renyi(alpha, &a, &b).unwrap().value;
                assert!((geometric_objective(alpha, &m, &psi) - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn geometric_exact_bounds_optimizer() {
        let e = KrausChannel::random_channel(2, 2, 4, 8).unwrap();
        let f = KrausChannel::random_channel(2, 2, 4, 9).unwrap();
        for alpha in [1.5, 2.0] {
            let exact = geometric_channel_exact(alpha, &e, &f).unwrap().unwrap();
            let opt = stabilized_divergence(DivergenceKind::Geometric(alpha), &e, &f, &quick()).unwrap().value;
            assert!(opt <= exact + 1e-9 && opt >= exact - 1e-5, "{opt} {exact}");
        }
        // replacer pair: input-independent
        let (r0, s0) = (random_density(3, 3, 1).unwrap(), random_density(3, 3, 2).unwrap());
        let (e, f) = (KrausChannel::replacer(&r0, 2), KrausChannel::replacer(&s0, 2));
        let exact = geometric_channel_exact(1.5, &e, &f).unwrap().unwrap();
        assert!((exact - geometric_renyi(1.5, &r0, &s0).unwrap().value).abs() < 1e-10);
    }

    #[test]
    fn product_reordering() {
        let a = vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(4.0, 0.0)];
        let p = interleaved_power(&a, 2, 2, 2);
        // amplitude of |r1 r2⟩|s1 s2⟩ is a[r1 s1]·a[r2 s2]
        for r1 in 0..2 {
            for r2 in 0..2 {
                for s1 in 0..2 {
                    for s2 in 0..2 {
                        let idx = ((r1 * 2 + r2) * 2 + s1) * 2 + s2;
                        assert_eq!(p[idx], a[r1 * 2 + s1] * a[r2 * 2 + s2]);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_c_examples() {
        let e = KrausChannel::identity(2);
        let c = constant_c(&e, &e, &DEFAULT_ALPHA_GRID).unwrap();
        assert!((c.value - 8.0 * 3.0_f64.log2()).abs() < 1e-10);
        assert_eq!(c.alpha, 2.0);
        // a replacer pair with D̂₂ = 1: |0⟩⟨0| against I/2
        let (r0, s0) = (diag(&[1.0, 0.0]), DensityMatrix::maximally_mixed(2));
        let (e, f) = (KrausChannel::replacer(&r0, 2), KrausChannel::replacer(&s0, 2));
        let (d2, src) = geometric_channel_upper(2.0, &e, &f).unwrap();
        // diagonal replaced states make the pair classical as well
        assert!(matches!(src, UpperSource::ExactReplacer | UpperSource::ExactClassical));
        assert!((d2 - 1.0).abs() < 1e-12);
        let c = constant_c(&e, &f, &[2.0]).unwrap();
        assert!((c.value - 16.0).abs() < 1e-12);
        assert!(constant_c(&e, &f, &DEFAULT_ALPHA_GRID).unwrap().value <= 16.0 + 1e-12);
        assert!((c_hat_gamma(1.0, &e, &f).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_identity_boundary() {
        let id = KrausChannel::classical_channel_embed(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (r, s) = (diag(&[0.3, 0.7]), diag(&[0.6, 0.4]));
        let rep = geometric_chain_rule_check(1.5, &id, &id, &r, &s, ChainMode::Classical).unwrap();
        assert_eq!(rep.status, CheckStatus::Verified);
        assert!(rep.slack.abs() < 1e-12 && rep.channel_term.abs() < 1e-12);
        assert!(matches!(
            geometric_chain_rule_check(0.5, &id, &id, &r, &s, ChainMode::Classical),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn regularized_replacer_constant() {
        let (r0, s0) = (diag(&[0.5, 0.5]), diag(&[0.25, 0.75]));
        let (e, f) = (KrausChannel::replacer(&r0, 2), KrausChannel::replacer(&s0, 2));
        let cfg = OptimizerConfig {
            restarts: 1,
            max_iterations: 5,
            ..Default::default()
        };
        let v = regularized_estimate(DivergenceKind::Umegaki, &e, &f, 2, &cfg, DEFAULT_DIM_CAP).unwrap();
        let d = umegaki(&r0, &s0).unwrap().value;
        for (_, x) in v {
            assert!((x - d).abs() < 1e-8);
        }
        assert!(matches!(
            regularized_estimate(DivergenceKind::Umegaki, &e, &f, 7, &cfg, DEFAULT_DIM_CAP),
            Err(Error::CapExceeded { .. })
        ));
    }
}
