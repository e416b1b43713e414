//! Discrete two-variable map for sharpness dynamics under weight decay,
//! its continuous envelope ODE, closed-form steady-state predictions, and
//! limit-cycle / decay measurement.
//!
//! The discrete map is
//!   x_{t+1} = -x_t (1 + η y_t + ηγ) - ηγ c_x
//!   y_{t+1} = (1 - ηγ) y_t - ηγ c_y + ηα - ηβ x_t²/2
//! implemented with equality; the map itself is the object under study.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Divergence cap: beyond this magnitude the trajectory is truncated and
/// flagged. Divergence is a measured outcome, not an error.
const DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    pub eta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub x0: f64,
    pub y0: f64,
}

impl OscillatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::InvalidArgument("eta must be > 0".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidArgument("beta must be > 0".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Closed-form steady-state and bifurcation outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillatorPrediction {
    /// Resting value of y in the oscillating regime: -γ.
    pub y_star: f64,
    /// Mean of the x bounces: -ηγ c_x / 2.
    pub bounce_mean: f64,
    /// Resting amplitude Δ = sqrt(2(α + γ² - γ c_y)/β); absent when collapsed.
    pub amplitude: Option<f64>,
    /// Bifurcation threshold α/γ + γ; +∞ when γ = 0.
    pub c_y_crit: f64,
    pub collapsed: bool,
    /// Fixed point α/γ - c_y after collapse.
    pub y_star_collapsed: Option<f64>,
    /// Envelope decay rate γ/2 (in τ = ηt units).
    pub decay_rate: f64,
    /// Damped frequency sqrt(8α + 7γ²)/2.
    pub omega_d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Iterate the exact discrete map for `steps` steps. Times are τ = ηt.
pub fn simulate_discrete(cfg: &OscillatorConfig, steps: usize) -> Result<Trajectory> {
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (cfg.x0, cfg.y0);
    let mut diverged = false;
    for t in 0..=steps {
        times.push(cfg.eta * t as f64);
        xs.push(x);
        ys.push(y);
        if t == steps {
            break;
        }
        let xn = -x * (1.0 + cfg.eta * y + cfg.eta * cfg.gamma) - cfg.eta * cfg.gamma * cfg.c_x;
        let yn = (1.0 - cfg.eta * cfg.gamma) * y - cfg.eta * cfg.gamma * cfg.c_y
            + cfg.eta * (cfg.alpha - cfg.beta * x * x / 2.0);
        x = xn;
        y = yn;
        if !x.is_finite() || !y.is_finite() || x.abs() > DIVERGENCE_CAP || y.abs() > DIVERGENCE_CAP
        {
            diverged = true;
            times.push(cfg.eta * (t + 1) as f64);
            xs.push(x);
            ys.push(y);
            break;
        }
    }
    Ok(Trajectory {
        times,
        xs,
        ys,
        diverged,
    })
}

/// Closed-form predictions for a configuration.
pub fn predict(cfg: &OscillatorConfig) -> Result<OscillatorPrediction> {
    cfg.validate()?;
    let g = cfg.gamma;
    let c_y_crit = if g > 0.0 {
        cfg.alpha / g + g
    } else {
        f64::INFINITY
    };
    let delta_sq = 2.0 * (cfg.alpha + g * g - g * cfg.c_y) / cfg.beta;
    let collapsed = cfg.c_y >= c_y_crit;
    Ok(OscillatorPrediction {
        y_star: -g,
        bounce_mean: -cfg.eta * g * cfg.c_x / 2.0,
        amplitude: if collapsed { None } else { Some(delta_sq.sqrt()) },
        c_y_crit,
        collapsed,
        y_star_collapsed: if collapsed {
            Some(cfg.alpha / g - cfg.c_y)
        } else {
            None
        },
        decay_rate: g / 2.0,
        omega_d: (8.0 * cfg.alpha + 7.0 * g * g).sqrt() / 2.0,
    })
}

/// Integrate the envelope ODE
///   dX/dτ = X (Y + γ),  dY/dτ = α - βX²/2 - γY
/// with classical RK4 and fixed step. c_x and c_y are dropped here, matching
/// the continuum simplification.
pub fn simulate_envelope(cfg: &OscillatorConfig, tau_max: f64, dtau: f64) -> Result<Trajectory> {
    cfg.validate()?;
    if dtau <= 0.0 {
        return Err(Error::InvalidArgument("dtau must be > 0".into()));
    }
    if cfg.x0 < 0.0 {
        return Err(Error::InvalidArgument("envelope requires X(0) >= 0".into()));
    }
    let rhs = |x: f64, y: f64| -> (f64, f64) {
        (
            x * (y + cfg.gamma),
            cfg.alpha - cfg.beta * x * x / 2.0 - cfg.gamma * y,
        )
    };
    let steps = (tau_max / dtau).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (cfg.x0, cfg.y0);
    for t in 0..=steps {
        let tau = t as f64 * dtau;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::BlowUp { tau });
        }
        times.push(tau);
        xs.push(x);
        ys.push(y);
        if t == steps {
            break;
        }
        let (k1x, k1y) = rhs(x, y);
        let (k2x, k2y) = rhs(x + 0.5 * dtau * k1x, y + 0.5 * dtau * k1y);
        let (k3x, k3y) = rhs(x + 0.5 * dtau * k2x, y + 0.5 * dtau * k2y);
        let (k4x, k4y) = rhs(x + dtau * k3x, y + dtau * k3y);
        x += dtau / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        y += dtau / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    }
    Ok(Trajectory {
        times,
        xs,
        ys,
        diverged: false,
    })
}

/// Default envelope step: dτ = min(0.01, 1/(10 ω_d)).
pub fn default_envelope_step(cfg: &OscillatorConfig) -> f64 {
    let omega_d = (8.0 * cfg.alpha + 7.0 * cfg.gamma * cfg.gamma).sqrt() / 2.0;
    (0.01f64).min(1.0 / (10.0 * omega_d))
}

/// Tail statistics of a period-2 limit cycle: amplitude (half the mean
/// peak-to-peak of x, i.e. half the mean |x_{t+1} - x_t|), mean of x, and
/// the resting value of y.
pub fn measure_limit_cycle(
    traj: &Trajectory,
    tail_fraction: f64,
) -> Result<(f64, f64, f64)> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(
            "tail_fraction must be in (0, 1]".into(),
        ));
    }
    let n = traj.len();
    let start = n - ((n as f64 * tail_fraction).ceil() as usize).min(n);
    let tail_len = n - start;
    if tail_len < 100 {
        return Err(Error::TailTooShort {
            len: tail_len,
            min: 100,
        });
    }
    let xs = &traj.xs[start..];
    let ys = &traj.ys[start..];
    let mean_x = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_rest = ys.iter().sum::<f64>() / ys.len() as f64;
    let ptp: f64 = xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (xs.len() - 1) as f64;
    Ok((ptp / 2.0, mean_x, y_rest))
}

/// Strict local extrema of a series; plateaus broken by first index.
fn local_extrema(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        if (b > a && b > c) || (b < a && b < c) {
            out.push((times[i], b));
        }
    }
    out
}

/// Fit the exponential decay of oscillations in y around its resting value:
/// rate from least squares of log|extremum| vs τ, frequency from the mean
/// extremum spacing (half a period).
pub fn fit_decay(traj: &Trajectory) -> Result<(f64, f64)> {
    let n = traj.len();
    if n < 10 {
        return Err(Error::TailTooShort { len: n, min: 10 });
    }
    // Resting value from the final 10%.
    let tail = &traj.ys[n - (n / 10).max(1)..];
    let y_rest = tail.iter().sum::<f64>() / tail.len() as f64;
    let dev: Vec<f64> = traj.ys.iter().map(|y| y - y_rest).collect();
    let all = local_extrema(&traj.times, &dev);
    // Keep extrema before the oscillation settles into the numerical floor:
    // stop once magnitude drops below 5% of the first extremum.
    let mut extrema = Vec::new();
    if let Some(&(_, first)) = all.first() {
        let floor = first.abs() * 0.05;
        for &(t, v) in &all {
            if v.abs() < floor {
                break;
            }
            extrema.push((t, v.abs()));
        }
    }
    if extrema.len() < 5 {
        return Err(Error::TooFewExtrema {
            found: extrema.len(),
            min: 5,
        });
    }
    // Least squares of log|v| = log A - rate * τ.
    let m = extrema.len() as f64;
    let sx: f64 = extrema.iter().map(|(t, _)| t).sum();
    let sy: f64 = extrema.iter().map(|(_, v)| v.ln()).sum();
    let sxx: f64 = extrema.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = extrema.iter().map(|(t, v)| t * v.ln()).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let rate = -slope;
    let spacing: f64 = extrema
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .sum::<f64>()
        / (extrema.len() - 1) as f64;
    let frequency = std::f64::consts::PI / spacing;
    Ok((rate, frequency))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> OscillatorConfig {
        OscillatorConfig {
            eta: 0.01,
            gamma: 0.0,
            alpha: 1.0,
            beta: 1.0,
            c_x: 0.0,
            c_y: 0.0,
            x0: 0.01,
            y0: -1.0,
        }
    }

    #[test]
    fn undamped_fixed_point() {
        // γ = 0 is only neutrally stable: the envelope neither grows nor
        // decays, so the cycle amplitude is set by the start and slow
        // discretization pumping eventually walks the orbit away. Begin near
        // the cycle and check it holds the predicted values over a medium
        // horizon.
        let cfg = OscillatorConfig {
            x0: 1.4,
            y0: 0.0,
            ..base_cfg()
        };
        let p = predict(&cfg).unwrap();
        assert_eq!(p.y_star, 0.0);
        assert_eq!(p.decay_rate, 0.0);
        assert!(p.c_y_crit.is_infinite());
        let expect = (2.0f64).sqrt();
        assert!((p.amplitude.unwrap() - expect).abs() < 1e-12);

        let traj = simulate_discrete(&cfg, 5_000).unwrap();
        assert!(!traj.diverged);
        let (amp, _, y_rest) = measure_limit_cycle(&traj, 0.1).unwrap();
        assert!(y_rest.abs() < 0.01, "y_rest = {y_rest}");
        assert!((amp - expect).abs() / expect < 0.01, "amp = {amp}");
    }

    #[test]
    fn damped_fixed_point_matches_amplitude_formula() {
        let cfg = OscillatorConfig {
            gamma: 0.1,
            ..base_cfg()
        };
        let traj = simulate_discrete(&cfg, 200_000).unwrap();
        let (amp, _, y_rest) = measure_limit_cycle(&traj, 0.1).unwrap();
        assert!((y_rest + 0.1).abs() < 1e-3, "y_rest = {y_rest}");
        let expect = (2.02f64).sqrt();
        assert!((amp - expect).abs() / expect < 0.01, "amp = {amp}");
    }

    #[test]
    fn collapse_beyond_threshold() {
        let cfg = OscillatorConfig {
            gamma: 0.1,
            c_y: 12.0,
            ..base_cfg()
        };
        // c_y_crit = 1/0.1 + 0.1 = 10.1 < 12 → collapse to α/γ - c_y = -2.
        let traj = simulate_discrete(&cfg, 200_000).unwrap();
        let tail = &traj.ys[traj.len() - 1000..];
        let y_rest = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((y_rest + 2.0).abs() < 1e-3, "y_rest = {y_rest}");
        let x_tail = &traj.xs[traj.len() - 1000..];
        assert!(x_tail.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn predict_closed_forms() {
        let cfg = OscillatorConfig {
            gamma: 0.1,
            ..base_cfg()
        };
        let p = predict(&cfg).unwrap();
        assert!((p.y_star + 0.1).abs() < 1e-15);
        assert!((p.amplitude.unwrap() - (2.02f64).sqrt()).abs() < 1e-12);
        assert!((p.omega_d - (8.07f64).sqrt() / 2.0).abs() < 1e-12);
        assert!((p.decay_rate - 0.05).abs() < 1e-15);
        assert!((p.c_y_crit - 10.1).abs() < 1e-12);
        assert!(!p.collapsed);
    }

    #[test]
    fn predict_gamma_zero_reduces_to_plain_eos() {
        let p = predict(&base_cfg()).unwrap();
        assert_eq!(p.y_star, 0.0);
        assert!((p.amplitude.unwrap() - (2.0f64).sqrt()).abs() < 1e-12);
        assert_eq!(p.decay_rate, 0.0);
        assert!(p.c_y_crit.is_infinite());
    }

    #[test]
    fn predict_boundary_is_collapsed_with_zero_amplitude() {
        let cfg = OscillatorConfig {
            gamma: 0.1,
            c_y: 10.1,
            ..base_cfg()
        };
        let p = predict(&cfg).unwrap();
        assert!(p.collapsed);
        assert!(p.amplitude.is_none());
        // Δ² = 2(α + γ² - γ c_y)/β = 2(1 + 0.01 - 1.01)/1 = 0 exactly.
        let delta_sq = 2.0 * (cfg.alpha + cfg.gamma * cfg.gamma - cfg.gamma * cfg.c_y) / cfg.beta;
        assert!(delta_sq.abs() < 1e-12);
    }

    #[test]
    fn envelope_fixed_point_is_stationary() {
        let gamma = 0.1;
        let x_star = (2.0 * (1.0 + gamma * gamma) / 1.0f64).sqrt();
        let cfg = OscillatorConfig {
            gamma,
            x0: x_star,
            y0: -gamma,
            ..base_cfg()
        };
        let traj = simulate_envelope(&cfg, 50.0, default_envelope_step(&cfg)).unwrap();
        for (x, y) in traj.xs.iter().zip(&traj.ys) {
            assert!((x - x_star).abs() < 1e-9);
            assert!((y + gamma).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_decay_rate_and_period() {
        let gamma = 0.1;
        let cfg = OscillatorConfig {
            gamma,
            x0: (2.0 * (1.0 + gamma * gamma)).sqrt() * 1.2,
            y0: -gamma + 0.3,
            ..base_cfg()
        };
        let traj = simulate_envelope(&cfg, 200.0, default_envelope_step(&cfg)).unwrap();
        let (rate, freq) = fit_decay(&traj).unwrap();
        let p = predict(&cfg).unwrap();
        assert!(
            (rate - p.decay_rate).abs() / p.decay_rate < 0.10,
            "rate {rate} vs {}",
            p.decay_rate
        );
        assert!(
            (freq - p.omega_d).abs() / p.omega_d < 0.05,
            "freq {freq} vs {}",
            p.omega_d
        );
    }

    #[test]
    fn fit_decay_synthetic_damped_cosine() {
        let rate = 0.05;
        let omega = 1.42;
        let dt = 0.005;
        let n = 40_000;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let ys: Vec<f64> = times
            .iter()
            .map(|t| (-rate * t).exp() * (omega * t).cos())
            .collect();
        let traj = Trajectory {
            times,
            xs: vec![0.0; n],
            ys,
            diverged: false,
        };
        let (r, f) = fit_decay(&traj).unwrap();
        assert!((r - rate).abs() / rate < 0.02, "rate {r}");
        assert!((f - omega).abs() / omega < 0.02, "freq {f}");
    }

    #[test]
    fn fit_decay_too_few_extrema() {
        let n = 200;
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys: Vec<f64> = times.iter().map(|t| -t).collect();
        let traj = Trajectory {
            times,
            xs: vec![0.0; n],
            ys,
            diverged: false,
        };
        assert!(matches!(
            fit_decay(&traj),
            Err(Error::TooFewExtrema { .. })
        ));
    }

    #[test]
    fn measure_constructed_alternating_series() {
        let n = 500;
        let xs: Vec<f64> = (0..n)
            .map(|t| if t % 2 == 0 { 2.5 } else { -1.5 })
            .collect();
        let traj = Trajectory {
            times: (0..n).map(|t| t as f64).collect(),
            xs,
            ys: vec![0.0; n],
            diverged: false,
        };
        let (amp, mean, _) = measure_limit_cycle(&traj, 1.0).unwrap();
        assert!((amp - 2.0).abs() < 1e-12);
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn measure_constant_series() {
        let n = 200;
        let traj = Trajectory {
            times: (0..n).map(|t| t as f64).collect(),
            xs: vec![3.0; n],
            ys: vec![1.0; n],
            diverged: false,
        };
        let (amp, mean, y_rest) = measure_limit_cycle(&traj, 1.0).unwrap();
        assert_eq!(amp, 0.0);
        assert!((mean - 3.0).abs() < 1e-12);
        assert!((y_rest - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounce_mean_matches_cx_formula() {
        let cfg = OscillatorConfig {
            gamma: 0.1,
            c_x: 5.0,
            ..base_cfg()
        };
        let traj = simulate_discrete(&cfg, 200_000).unwrap();
        let (_, mean_x, _) = measure_limit_cycle(&traj, 0.1).unwrap();
        let expect = -cfg.eta * cfg.gamma * cfg.c_x / 2.0;
        assert!(
            (mean_x - expect).abs() / expect.abs() < 0.2,
            "mean_x {mean_x} vs {expect}"
        );
    }

    #[test]
    fn measure_tail_too_short() {
        let traj = Trajectory {
            times: vec![0.0; 50],
            xs: vec![0.0; 50],
            ys: vec![0.0; 50],
            diverged: false,
        };
        assert!(matches!(
            measure_limit_cycle(&traj, 1.0),
            Err(Error::TailTooShort { .. })
        ));
    }

    #[test]
    fn bifurcation_amplitude_monotone_to_zero() {
        let gamma = 0.1;
        let crit = 1.0 / gamma + gamma;
        let mut last = f64::INFINITY;
        for i in 0..8 {
            let c_y = crit * (i as f64) / 8.0;
            let cfg = OscillatorConfig {
                gamma,
                c_y,
                ..base_cfg()
            };
            let traj = simulate_discrete(&cfg, 100_000).unwrap();
            let (amp, _, _) = measure_limit_cycle(&traj, 0.1).unwrap();
            assert!(amp <= last + 1e-6, "amplitude not decreasing at c_y={c_y}");
            let predicted = predict(&cfg).unwrap().amplitude.unwrap();
            if predicted > 0.1 {
                assert!(
                    (amp - predicted).abs() / predicted < 0.01,
                    "c_y={c_y}: {amp} vs {predicted}"
                );
            }
            last = amp;
        }
        // Past the threshold the cycle is gone.
        let cfg = OscillatorConfig {
            gamma,
            c_y: crit * 1.2,
            ..base_cfg()
        };
        let traj = simulate_discrete(&cfg, 100_000).unwrap();
        let (amp, _, _) = measure_limit_cycle(&traj, 0.1).unwrap();
        assert!(amp < 1e-6);
    }

    #[test]
    fn gamma_monotone_damping() {
        let mut last = -1.0;
        for &gamma in &[0.02, 0.05, 0.1, 0.2] {
            let cfg = OscillatorConfig {
                gamma,
                x0: (2.0 * (1.0 + gamma * gamma)).sqrt() * 1.2,
                y0: -gamma + 0.3,
                ..base_cfg()
            };
            let traj = simulate_envelope(&cfg, 150.0, default_envelope_step(&cfg)).unwrap();
            let (rate, _) = fit_decay(&traj).unwrap();
            assert!(rate >= last, "decay rate not monotone at gamma={gamma}");
            last = rate;
        }
    }

    #[test]
    fn cx_does_not_shift_y_rest_or_amplitude() {
        let make = |c_x: f64| {
            let cfg = OscillatorConfig {
                gamma: 0.1,
                c_x,
                ..base_cfg()
            };
            let traj = simulate_discrete(&cfg, 150_000).unwrap();
            measure_limit_cycle(&traj, 0.1).unwrap()
        };
        let (a0, _, y0) = make(0.0);
        let (a10, _, y10) = make(10.0);
        // O(η) tolerance.
        assert!((a0 - a10).abs() < 10.0 * 0.01);
        assert!((y0 - y10).abs() < 10.0 * 0.01);
    }

    #[test]
    fn divergence_flagged_not_error() {
        let cfg = OscillatorConfig {
            x0: 1e11,
            y0: 5.0,
            ..base_cfg()
        };
        let traj = simulate_discrete(&cfg, 1000).unwrap();
        assert!(traj.diverged);
    }
}
