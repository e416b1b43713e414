//! Sharpness and third-order instrumentation along a training trajectory:
//! top Hessian eigenvalues, the sharpness gradient ∇S, and the scalars
//! α = −⟨∇L, ∇S⟩, β = ‖∇S‖², c_x = ⟨u, θ⟩, c_y = ⟨∇S, θ⟩ and the
//! bifurcation threshold c_y^crit = α/γ + γ.

use crate::error::{Error, Result};
use crate::linalg::{dot, lanczos_topk, power_iteration, FnOperator, SolverConfig};
use crate::netfwd::{hvp, loss_and_grad, LabeledBatch, MlpSpec, ParamVector};
use serde::{Deserialize, Serialize};

/// One instrumentation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureProbe {
    pub step: usize,
    /// Top-k Hessian eigenvalues, descending.
    pub lambda_topk: Vec<f64>,
    pub u_available: bool,
    pub alpha: f64,
    pub beta: f64,
    pub c_x: f64,
    pub c_y: f64,
    /// +∞ sentinel when γ = 0 (serializes as null in JSON).
    pub c_y_crit: f64,
    pub loss: f64,
    pub delta_loss: f64,
    /// Early-training probes where α < 0 are flagged but retained.
    pub alpha_negative: bool,
}

/// Which matrix-free eigensolver backs the sharpness estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharpnessSolver {
    Lanczos,
    Power,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub solver: SolverConfig,
    pub method: SharpnessSolver,
    pub k: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            method: SharpnessSolver::Lanczos,
            k: 1,
        }
    }
}

/// The Hessian as a matrix-free operator v ↦ ∇²L·v.
pub fn hessian_operator<'a>(
    params: &'a ParamVector,
    batch: &'a LabeledBatch,
    spec: &'a MlpSpec,
) -> FnOperator<impl Fn(&[f64]) -> Vec<f64> + Sync + 'a> {
    FnOperator::new(params.len(), move |v| {
        let vp = ParamVector { values: v.to_vec() };
        hvp(params, batch, spec, &vp)
            .expect("hvp failed inside Hessian operator")
            .values
    })
}

/// Top-k eigenvalues of the loss Hessian and the leading eigenvector
/// (sign-normalized).
pub fn sharpness(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    cfg: &ProbeConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let op = hessian_operator(params, batch, spec);
    match cfg.method {
        SharpnessSolver::Lanczos => {
            let pairs = lanczos_topk(&op, cfg.k, &cfg.solver)?;
            let values = pairs.iter().map(|p| p.value).collect();
            Ok((values, pairs[0].vector.clone()))
        }
        SharpnessSolver::Power => {
            if cfg.k != 1 {
                return Err(Error::InvalidArgument(
                    "power iteration supports k = 1 only".into(),
                ));
            }
            let p = power_iteration(&op, &cfg.solver)?;
            Ok((vec![p.value], p.vector))
        }
    }
}

/// Scale-aware finite-difference step for the ∇S estimate.
pub fn sharpness_grad_eps(params: &ParamVector) -> f64 {
    1e-4 * (1.0 + params.norm() / (params.len() as f64).sqrt())
}

/// ∇S ≈ [H(θ+εu)·u − H(θ−εu)·u] / (2ε) — central differencing of
/// Hessian-vector products along the top eigenvector, which equals
/// ∇³L(u, u, ·) up to O(ε²).
pub fn sharpness_gradient(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    u: &[f64],
    eps: f64,
) -> Result<ParamVector> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    let unorm = crate::linalg::norm2(u);
    if (unorm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "u must be unit norm, got {unorm}"
        )));
    }
    let uv = ParamVector { values: u.to_vec() };
    let mut plus = params.clone();
    let mut minus = params.clone();
    for (i, &ui) in u.iter().enumerate() {
        plus.values[i] += eps * ui;
        minus.values[i] -= eps * ui;
    }
    let hp = hvp(&plus, batch, spec, &uv)?;
    let hm = hvp(&minus, batch, spec, &uv)?;
    // An exactly zero difference is legitimate (quadratic loss): the third
    // derivative vanishes and so does ∇S.
    let out = hp
        .values
        .iter()
        .zip(&hm.values)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect();
    Ok(ParamVector { values: out })
}

/// One full instrumentation record from a parameter snapshot.
pub fn probe(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    gamma: f64,
    step: usize,
    prev_loss: f64,
    cfg: &ProbeConfig,
) -> Result<CurvatureProbe> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument("gamma must be >= 0".into()));
    }
    let (loss, grad) = loss_and_grad(params, batch, spec)?;
    let (lambda_topk, u) = sharpness(params, batch, spec, cfg)?;
    let eps = sharpness_grad_eps(params);
    let grad_s = sharpness_gradient(params, batch, spec, &u, eps)?;
    let alpha = -grad.dot(&grad_s);
    let beta = grad_s.dot(&grad_s);
    let c_x = dot(&u, &params.values);
    let c_y = grad_s.dot(params);
    let c_y_crit = if gamma > 0.0 && alpha.is_finite() {
        let v = alpha / gamma + gamma;
        // AM-GM sanity: α/γ + γ >= 2√α whenever α > 0.
        debug_assert!(alpha <= 0.0 || v >= 2.0 * alpha.sqrt() - 1e-9);
        v
    } else {
        f64::INFINITY
    };
    Ok(CurvatureProbe {
        step,
        lambda_topk,
        u_available: true,
        alpha,
        beta,
        c_x,
        c_y,
        c_y_crit,
        loss,
        delta_loss: loss - prev_loss,
        alpha_negative: alpha < 0.0,
    })
}

impl CurvatureProbe {
    pub fn sharpness(&self) -> f64 {
        self.lambda_topk[0]
    }
}
