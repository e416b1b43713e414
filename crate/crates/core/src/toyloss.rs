//! Three-variable toy loss with exact derivatives:
//!   L(x, y, z) = (2/η + √β·y)·x²/2 − (α/√β)·y − z
//! trained by gradient descent with weight decay. Serves as an end-to-end
//! oracle for the curvature instrumentation.

use crate::error::{Error, Result};
use crate::linalg::{dense_sym_eig, dot, DenseMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    /// Step size appearing inside the loss (sets the 2/η curvature scale).
    pub eta_ref: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta_ref <= 0.0 || self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidArgument(
                "toy config requires eta_ref, alpha, beta > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToyState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One step of the toy training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyLogStep {
    pub step: usize,
    pub state: ToyState,
    pub loss: f64,
    pub sharpness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyRun {
    pub steps: Vec<ToyLogStep>,
    pub diverged: bool,
}

/// Exact loss, gradient and Hessian.
pub fn toy_eval(cfg: &ToyConfig, s: &ToyState) -> (f64, [f64; 3], DenseMatrix) {
    let sb = cfg.beta.sqrt();
    let a = 2.0 / cfg.eta_ref + sb * s.y;
    let loss = a * s.x * s.x / 2.0 - cfg.alpha / sb * s.y - s.z;
    let grad = [a * s.x, sb * s.x * s.x / 2.0 - cfg.alpha / sb, -1.0];
    let hessian = DenseMatrix::from_rows(
        3,
        3,
        vec![a, sb * s.x, 0.0, sb * s.x, 0.0, 0.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    (loss, grad, hessian)
}

/// Default initialization: sharpness starts just below the stability
/// threshold (so progressive sharpening is visible) with x at the scale of
/// the eventual cycle. Starting x much smaller makes it decay through the
/// sharpening phase and delays the onset by orders of magnitude.
pub fn default_init(cfg: &ToyConfig) -> ToyState {
    ToyState {
        x: (cfg.alpha / cfg.beta).sqrt(),
        y: -1.0 / cfg.beta.sqrt(),
        z: 0.0,
    }
}

/// Train with θ ← (1−ηγ)θ − η∇L, logging loss and the exact sharpness.
/// The z coordinate is logged but excluded from the divergence check (it
/// drifts linearly at γ=0 by construction).
pub fn train_toy(
    cfg: &ToyConfig,
    eta: f64,
    gamma: f64,
    steps: usize,
    init: ToyState,
) -> Result<ToyRun> {
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if eta <= 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument("need eta > 0, gamma >= 0".into()));
    }
    let mut state = init;
    let mut log = Vec::with_capacity(steps);
    let mut diverged = false;
    for step in 0..steps {
        let (loss, grad, hess) = toy_eval(cfg, &state);
        let sharpness = dense_sym_eig(&hess)?[0].value;
        log.push(ToyLogStep {
            step,
            state,
            loss,
            sharpness,
        });
        let shrink = 1.0 - eta * gamma;
        state = ToyState {
            x: shrink * state.x - eta * grad[0],
            y: shrink * state.y - eta * grad[1],
            z: shrink * state.z - eta * grad[2],
        };
        if !state.x.is_finite()
            || !state.y.is_finite()
            || state.x.abs() > 1e12
            || state.y.abs() > 1e12
        {
            diverged = true;
            break;
        }
    }
    Ok(ToyRun {
        steps: log,
        diverged,
    })
}

/// Curvature-style estimates recovered from toy states: for each state,
/// estimate ∇S by central differencing of Hessian-vector products along the
/// top eigenvector, then α̂ = −⟨∇L, ∇S⟩ and β̂ = ‖∇S‖².
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeCrosscheck {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub alpha_rel_err: f64,
    pub beta_rel_err: f64,
}

pub fn toy_probe_crosscheck(cfg: &ToyConfig, state: &ToyState) -> Result<ProbeCrosscheck> {
    cfg.validate()?;
    let (_, grad, hess) = toy_eval(cfg, state);
    let u = dense_sym_eig(&hess)?[0].vector.clone();
    let eps = 1e-5;
    let theta = [state.x, state.y, state.z];
    let grad_s = {
        let plus = ToyState {
            x: theta[0] + eps * u[0],
            y: theta[1] + eps * u[1],
            z: theta[2] + eps * u[2],
        };
        let minus = ToyState {
            x: theta[0] - eps * u[0],
            y: theta[1] - eps * u[1],
            z: theta[2] - eps * u[2],
        };
        let (_, _, hp) = toy_eval(cfg, &plus);
        let (_, _, hm) = toy_eval(cfg, &minus);
        let hpu = hp.matvec(&u);
        let hmu = hm.matvec(&u);
        [
            (hpu[0] - hmu[0]) / (2.0 * eps),
            (hpu[1] - hmu[1]) / (2.0 * eps),
            (hpu[2] - hmu[2]) / (2.0 * eps),
        ]
    };
    let alpha_hat = -dot(&grad, &grad_s);
    let beta_hat = dot(&grad_s, &grad_s);
    Ok(ProbeCrosscheck {
        alpha_hat,
        beta_hat,
        alpha_rel_err: (alpha_hat - cfg.alpha).abs() / cfg.alpha,
        beta_rel_err: (beta_hat - cfg.beta).abs() / cfg.beta,
    })
}
