//! Full-batch gradient descent with decoupled weight decay, scheduled
//! curvature probes, loss-rise onset detection, stabilization-level
//! estimation, and γ-sweeps.

use crate::curvature::{probe, CurvatureProbe, ProbeConfig};
use crate::error::{Error, Result};
use crate::netfwd::{init_params, loss_and_grad, LabeledBatch, MlpSpec, ParamVector};
use crate::parallel::map_collect;
use serde::{Deserialize, Serialize};

/// Losses above this are treated as divergence.
const DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: MlpSpec,
    /// Provenance label for the dataset backing this run (recorded in logs;
    /// resolution happens at the call site).
    pub data_source: String,
    pub eta: f64,
    pub gamma: f64,
    pub steps: usize,
    /// Probe cadence in steps; 0 disables probing.
    #[serde(default = "default_probe_every")]
    pub probe_every: usize,
    #[serde(default = "default_lanczos_k")]
    pub lanczos_k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Steps ignored at the start of onset detection.
    #[serde(default = "default_warmup_ignore")]
    pub warmup_ignore: usize,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn default_probe_every() -> usize {
    25
}

fn default_lanczos_k() -> usize {
    1
}

fn default_warmup_ignore() -> usize {
    50
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument("eta must be > 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    /// Loss at each executed step, evaluated before that step's update.
    pub losses: Vec<f64>,
    pub probes: Vec<CurvatureProbe>,
    /// FNV-1a digest of the final parameter bits.
    pub params_digest: u64,
    pub diverged: bool,
    pub diverged_step: Option<usize>,
    #[serde(skip)]
    pub final_params: ParamVector,
}

/// FNV-1a over the little-endian bit patterns of a parameter vector.
pub fn params_digest(params: &ParamVector) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in &params.values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// One decoupled-weight-decay step: θ' = (1−ηγ)θ − η∇L(θ).
///
/// Exactly one gradient evaluation; the decay is a multiplicative shrink,
/// never folded into the gradient of a regularized loss. Returns the updated
/// parameters together with the pre-update loss.
pub fn gd_wd_step(
    params: &ParamVector,
    batch: &LabeledBatch,
    spec: &MlpSpec,
    eta: f64,
    gamma: f64,
    step: usize,
) -> Result<(ParamVector, f64)> {
    params.check_finite()?;
    let (loss, grad) = loss_and_grad(params, batch, spec)?;
    if !loss.is_finite() || loss > DIVERGENCE_CAP {
        return Err(Error::Diverged { step });
    }
    let shrink = 1.0 - eta * gamma;
    let mut next = params.clone();
    for (p, g) in next.values.iter_mut().zip(&grad.values) {
        *p = shrink * *p - eta * g;
    }
    Ok((next, loss))
}

/// Train from the seeded initialization for `steps` full-batch updates,
/// probing frozen snapshots on the configured cadence. Divergence stops the
/// run early and sets the flag instead of erroring.
pub fn run(cfg: &RunConfig, batch: &LabeledBatch) -> Result<RunLog> {
    cfg.validate()?;
    let mut spec = cfg.spec.clone();
    spec.init_seed = cfg.seed;
    let mut params = init_params(&spec);
    let mut probe_cfg = cfg.probe;
    probe_cfg.k = cfg.lanczos_k.max(1);

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut probes = Vec::new();
    let mut diverged = false;
    let mut diverged_step = None;

    for t in 0..cfg.steps {
        if cfg.probe_every > 0 && t % cfg.probe_every == 0 {
            let prev = losses.last().copied();
            let mut pr = probe(&params, batch, &spec, cfg.gamma, t, prev.unwrap_or(0.0), &probe_cfg)?;
            if prev.is_none() {
                pr.delta_loss = 0.0;
            }
            probes.push(pr);
        }
        match gd_wd_step(&params, batch, &spec, cfg.eta, cfg.gamma, t) {
            Ok((next, loss)) => {
                losses.push(loss);
                params = next;
                if params.check_finite().is_err() {
                    diverged = true;
                    diverged_step = Some(t);
                    break;
                }
            }
            Err(Error::Diverged { step }) => {
                diverged = true;
                diverged_step = Some(step);
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(RunLog {
        losses,
        probes,
        params_digest: params_digest(&params),
        diverged,
        diverged_step,
        final_params: params,
    })
}

/// First step t ≥ warmup_ignore with L_{t+1} > L_t (strict), if any.
pub fn detect_onset(losses: &[f64], warmup_ignore: usize) -> Option<usize> {
    (warmup_ignore..losses.len().saturating_sub(1)).find(|&t| losses[t + 1] > losses[t])
}

/// Arithmetic mean over the final ⌈10%⌉ of the series.
pub fn stabilization_level(series: &[f64]) -> Result<f64> {
    if series.len() < 10 {
        return Err(Error::TailTooShort {
            len: series.len(),
            min: 10,
        });
    }
    let tail = series.len().div_ceil(10);
    let slice = &series[series.len() - tail..];
    Ok(slice.iter().sum::<f64>() / tail as f64)
}

/// Whether the crossing condition c_y > c_y^crit held at any probe taken at
/// or after `warmup_ignore` and before sharpness first reached 2/η.
pub fn crossing_flag(probes: &[CurvatureProbe], eta: f64, warmup_ignore: usize) -> bool {
    for p in probes {
        if p.sharpness() >= 2.0 / eta {
            return false;
        }
        // Negative-α probes make the threshold meaningless (and negative);
        // only a positive interaction strength can signal the transition.
        if p.step >= warmup_ignore && p.alpha > 0.0 && p.c_y > p.c_y_crit {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub seed: u64,
    pub onset: Option<usize>,
    pub stabilization: Option<f64>,
    pub crossing: bool,
    pub diverged: bool,
    /// Set when the run failed outright; the sweep continues past it.
    pub error: Option<String>,
}

/// One summary row per (γ, seed), computed in parallel when the feature is
/// enabled. Individual run failures are recorded in their row.
pub fn sweep(base: &RunConfig, gammas: &[f64], seeds: &[u64], batch: &LabeledBatch) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one gamma and one seed".into(),
        ));
    }
    base.validate()?;
    let cells: Vec<(f64, u64)> = gammas
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    Ok(map_collect(cells, |(gamma, seed)| {
        let mut cfg = base.clone();
        cfg.gamma = gamma;
        cfg.seed = seed;
        match run(&cfg, batch) {
            Ok(log) => {
                let sharp: Vec<f64> = log.probes.iter().map(|p| p.sharpness()).collect();
                SweepRow {
                    gamma,
                    seed,
                    onset: detect_onset(&log.losses, cfg.warmup_ignore),
                    stabilization: stabilization_level(&sharp).ok(),
                    crossing: crossing_flag(&log.probes, cfg.eta, cfg.warmup_ignore),
                    diverged: log.diverged,
                    error: None,
                }
            }
            Err(e) => SweepRow {
                gamma,
                seed,
                onset: None,
                stabilization: None,
                crossing: false,
                diverged: false,
                error: Some(e.to_string()),
            },
        }
    }))
}
