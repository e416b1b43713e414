//! Empirical NTK spectrum via matrix-free Jacobian products, the
//! Hessian–Gram Weyl-bound check, and rank-one-perturbation alignment
//! analysis.
//!
//! The normalized Gram matrix is Θ̂ = (1/N)·J·Jᵀ, applied without ever
//! forming J: Θ̂v = (1/N)·jvp(vjp(v)). The Hessian of the MSE loss
//! decomposes as H = (1/N)·JᵀJ + R, so Weyl's inequality bounds
//! |λmax(H) − λmax(Θ̂)| by ‖R‖₂.

use crate::curvature::hessian_operator;
use crate::error::{Error, Result};
use crate::linalg::{
    dot, fix_sign, lanczos_topk, norm2, scale, EigenPair, FnOperator, LinearOperator, SolverConfig,
};
use crate::netfwd::{jvp, vjp, LabeledBatch, MlpSpec, ParamVector};
use serde::{Deserialize, Serialize};

/// How network outputs are flattened into the Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    /// M = N·C: every class output is its own Gram row (default).
    PerOutput,
    /// M = N: class outputs are summed per sample before the Gram product.
    PerSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtkReport {
    pub n_samples: usize,
    pub lambda_max_ntk: f64,
    pub lambda_max_hessian: f64,
    pub residual_norm: f64,
    pub weyl_satisfied: bool,
}

/// The normalized Gram matrix Θ̂ as a matrix-free operator.
pub fn gram_operator<'a>(
    params: &'a ParamVector,
    batch: &'a LabeledBatch,
    spec: &'a MlpSpec,
    mode: GramMode,
) -> FnOperator<impl Fn(&[f64]) -> Vec<f64> + Sync + 'a> {
    let n = batch.n();
    let c = spec.output_dim();
    let dim = match mode {
        GramMode::PerOutput => n * c,
        GramMode::PerSample => n,
    };
    FnOperator::new(dim, move |v| {
        let w = match mode {
            GramMode::PerOutput => v.to_vec(),
            GramMode::PerSample => {
                let mut w = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        w[i * c + j] = v[i];
                    }
                }
                w
            }
        };
        let p = vjp(params, batch, spec, &w).expect("vjp failed inside Gram operator");
        let out = jvp(params, batch, spec, &p).expect("jvp failed inside Gram operator");
        match mode {
            GramMode::PerOutput => out.iter().map(|x| x / n as f64).collect(),
            GramMode::PerSample => (0..n)
                .map(|i| out[i * c..(i + 1) * c].iter().sum::<f64>() / n as f64)
                .collect(),
        }
    })
}

/// Top eigenvalue of Θ̂ = (1/N)·J·Jᵀ. By Gram duality this equals the top
/// eigenvalue of (1/N)·JᵀJ.
pub fn ntk_lambda_max(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    mode: GramMode,
    cfg: &SolverConfig,
) -> Result<f64> {
    if batch.n() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let op = gram_operator(params, batch, spec, mode);
    Ok(lanczos_topk(&op, 1, cfg)?[0].value)
}

struct Negated<'a>(&'a dyn LinearOperator);

impl LinearOperator for Negated<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.0.apply(v);
        scale(&mut out, -1.0);
        out
    }
}

/// The residual operator R = H − (1/N)·JᵀJ (symmetric, generally
/// indefinite).
pub fn residual_operator<'a>(
    params: &'a ParamVector,
    batch: &'a LabeledBatch,
    spec: &'a MlpSpec,
) -> FnOperator<impl Fn(&[f64]) -> Vec<f64> + Sync + 'a> {
    let n = batch.n() as f64;
    FnOperator::new(params.len(), move |v| {
        let vp = ParamVector { values: v.to_vec() };
        let h = crate::netfwd::hvp(params, batch, spec, &vp)
            .expect("hvp failed inside residual operator");
        let jw = jvp(params, batch, spec, &vp).expect("jvp failed inside residual operator");
        let g = vjp(params, batch, spec, &jw).expect("vjp failed inside residual operator");
        h.values
            .iter()
            .zip(&g.values)
            .map(|(a, b)| a - b / n)
            .collect()
    })
}

/// ‖R‖₂ via Lanczos on R and on −R (R is indefinite, so the spectral norm is
/// max(|λmax|, |λmin|)).
pub fn residual_spectral_norm(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    cfg: &SolverConfig,
) -> Result<f64> {
    let op = residual_operator(params, batch, spec);
    let hi = lanczos_topk(&op, 1, cfg)?[0].value;
    let lo = lanczos_topk(&Negated(&op), 1, cfg)?[0].value;
    Ok(hi.abs().max(lo.abs()))
}

/// Compute λmax(H), λmax(Θ̂) and ‖R‖₂ with one shared solver config and
/// check |λmax(H) − λmax(Θ̂)| ≤ ‖R‖₂ (always per-output mode, where the
/// decomposition H = (1/N)JᵀJ + R is exact).
pub fn weyl_check(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    cfg: &SolverConfig,
) -> Result<NtkReport> {
    let lambda_max_ntk = ntk_lambda_max(params, batch, spec, GramMode::PerOutput, cfg)?;
    let hop = hessian_operator(params, batch, spec);
    let lambda_max_hessian = lanczos_topk(&hop, 1, cfg)?[0].value;
    let residual_norm = residual_spectral_norm(params, batch, spec, cfg)?;
    let tol = 1e-8 * lambda_max_hessian.abs().max(1.0);
    let weyl_satisfied =
        (lambda_max_hessian - lambda_max_ntk).abs() <= residual_norm + tol;
    Ok(NtkReport {
        n_samples: batch.n(),
        lambda_max_ntk,
        lambda_max_hessian,
        residual_norm,
        weyl_satisfied,
    })
}

/// The rank-one perturbation A(α) = diag(λ) + α·bbᵀ with λ descending and
/// ‖b‖ = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankOneModel {
    pub spectrum: Vec<f64>,
    pub b: Vec<f64>,
    pub alpha: f64,
}

impl RankOneModel {
    pub fn new(spectrum: Vec<f64>, b: Vec<f64>, alpha: f64) -> Result<Self> {
        if spectrum.len() != b.len() {
            return Err(Error::Dimension {
                context: "RankOneModel b".into(),
                expected: spectrum.len(),
                actual: b.len(),
            });
        }
        if spectrum.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "spectrum must be sorted descending".into(),
            ));
        }
        if alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        let nrm = norm2(&b);
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "b must be unit norm, got {nrm}"
            )));
        }
        Ok(Self { spectrum, b, alpha })
    }
}

/// One non-deflated pole of the secular equation: a distinct eigenvalue,
/// its combined weight, and a unit direction in the original basis carrying
/// that weight.
struct Pole {
    lambda: f64,
    weight: f64,
    direction: Vec<f64>,
}

const DEFLATE_TOL: f64 = 1e-14;

/// Eigenpairs of A(α) = diag(λ) + α·bbᵀ via the secular equation
/// 1 + α·Σ bᵢ²/(λᵢ − μ) = 0, with deflation of zero-weight coordinates and
/// repeated eigenvalues. Returned descending and sign-fixed.
pub fn rank_one_eigs(model: &RankOneModel) -> Result<Vec<EigenPair>> {
    let n = model.spectrum.len();
    let scale_ref = model
        .spectrum
        .iter()
        .fold(model.alpha.abs(), |m, v| m.max(v.abs()))
        .max(1.0);
    if model.alpha == 0.0 {
        let mut pairs: Vec<EigenPair> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                EigenPair {
                    value: model.spectrum[i],
                    vector: v,
                }
            })
            .collect();
        pairs.sort_by(|p, q| q.value.partial_cmp(&p.value).unwrap());
        return Ok(pairs);
    }

    let mut deflated: Vec<EigenPair> = Vec::new();
    let mut poles: Vec<Pole> = Vec::new();

    let mut i = 0;
    while i < n {
        // Group of (near-)equal eigenvalues.
        let mut j = i + 1;
        while j < n && (model.spectrum[i] - model.spectrum[j]).abs() <= DEFLATE_TOL * scale_ref {
            j += 1;
        }
        let group: Vec<usize> = (i..j).collect();
        let weights: Vec<f64> = group.iter().map(|&g| model.b[g]).collect();
        let w = norm2(&weights);
        if w <= DEFLATE_TOL {
            // Entire group untouched by the perturbation.
            for &g in &group {
                let mut v = vec![0.0; n];
                v[g] = 1.0;
                deflated.push(EigenPair {
                    value: model.spectrum[g],
                    vector: v,
                });
            }
        } else {
            // One effective coordinate along the group's b-direction; the
            // orthogonal complement within the group stays at λ.
            let dir: Vec<f64> = {
                let mut v = vec![0.0; n];
                for (&g, &bw) in group.iter().zip(&weights) {
                    v[g] = bw / w;
                }
                v
            };
            // Gram-Schmidt a basis of the complement of `dir` inside the
            // group coordinates.
            let mut basis: Vec<Vec<f64>> = vec![dir.clone()];
            for &g in &group {
                let mut cand = vec![0.0; n];
                cand[g] = 1.0;
                for b in &basis {
                    let c = dot(&cand, b);
                    for (x, y) in cand.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
                let nrm = norm2(&cand);
                if nrm > 1e-8 {
                    scale(&mut cand, 1.0 / nrm);
                    deflated.push(EigenPair {
                        value: model.spectrum[g],
                        vector: cand.clone(),
                    });
                    basis.push(cand);
                }
            }
            poles.push(Pole {
                lambda: model.spectrum[i],
                weight: w,
                direction: dir,
            });
        }
        i = j;
    }

    // Secular roots among the poles: one root per interval (λ_j, λ_{j-1}),
    // plus the top root in (λ_1, λ_1 + α·Σw²].
    let d = poles.len();
    let total_weight_sq: f64 = poles.iter().map(|p| p.weight * p.weight).sum();
    let secular = |mu: f64| -> f64 {
        1.0 + model.alpha
            * poles
                .iter()
                .map(|p| p.weight * p.weight / (p.lambda - mu))
                .sum::<f64>()
    };
    let mut solved: Vec<EigenPair> = Vec::with_capacity(d);
    for r in 0..d {
        let lo_pole = poles[r].lambda;
        let hi_pole = if r == 0 {
            lo_pole + model.alpha * total_weight_sq
        } else {
            poles[r - 1].lambda
        };
        // The secular function rises from −∞ at lo_pole⁺ to +∞ (or ≥ 0 at the
        // top bound); bisect on the open interval.
        let gap = hi_pole - lo_pole;
        let mut lo = lo_pole + 1e-300;
        let mut hi = hi_pole;
        // Shrink endpoints until the function is evaluable with the right signs.
        let mut step = gap * 1e-12;
        while secular(lo_pole + step) > 0.0 && step > f64::MIN_POSITIVE {
            step *= 0.5;
        }
        lo = lo.max(lo_pole + step);
        if r > 0 {
            let mut step = gap * 1e-12;
            while secular(hi_pole - step) < 0.0 && step > f64::MIN_POSITIVE {
                step *= 0.5;
            }
            hi = hi_pole - step;
        } else if secular(hi) < 0.0 {
            // Top root bound: widen until the sign flips (α·Σw² is already an
            // upper bound in exact arithmetic; guard against rounding).
            hi += gap.max(1e-6 * scale_ref);
        }
        let width_target = 1e-13 * scale_ref.max(1.0);
        for _ in 0..200 {
            if hi - lo <= width_target {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if secular(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        // Closed-form eigenvector: v ∝ Σ_j w_j/(λ_j − μ) · dir_j.
        let mut v = vec![0.0; n];
        for p in &poles {
            let coef = p.weight / (p.lambda - mu);
            for (x, y) in v.iter_mut().zip(&p.direction) {
                *x += coef * y;
            }
        }
        let nrm = norm2(&v);
        scale(&mut v, 1.0 / nrm);
        fix_sign(&mut v);
        solved.push(EigenPair { value: mu, vector: v });
    }

    let mut pairs = deflated;
    pairs.extend(solved);
    for p in pairs.iter_mut() {
        fix_sign(&mut p.vector);
    }
    pairs.sort_by(|p, q| q.value.partial_cmp(&p.value).unwrap());
    Ok(pairs)
}

/// For each α in the ascending grid: the (0-based) index of the eigenvector
/// of A(α) most aligned with the target, and that alignment value. In the
/// eigenbasis parameterization the target is ŷ = b itself.
pub fn alignment_sweep(
    spectrum: &[f64],
    b: &[f64],
    alpha_grid: &[f64],
) -> Result<Vec<(f64, usize, f64)>> {
    if alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "alpha grid must be strictly ascending".into(),
        ));
    }
    let mut out = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let model = RankOneModel::new(spectrum.to_vec(), b.to_vec(), alpha)?;
        let pairs = rank_one_eigs(&model)?;
        let mut best = 0;
        let mut best_val = 0.0f64;
        for (idx, p) in pairs.iter().enumerate() {
            let a = dot(&p.vector, b).abs();
            if a > best_val {
                best_val = a;
                best = idx;
            }
        }
        out.push((alpha, best, best_val));
    }
    Ok(out)
}
