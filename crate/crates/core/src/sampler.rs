//! ODE and SDE sampling from a trained velocity field.
//!
//! Sampling integrates from `t = 1` (standard normal) down to `t = 0`. The
//! deterministic path uses Heun's predictor-corrector. The stochastic path
//! uses Euler-Maruyama on the reverse SDE associated with the linear
//! interpolant: for diffusion magnitude `g`, the drift is
//! `v(x, t) - (g^2 / 2) * s(x, t)` with score
//! `s(x, t) = -(x + (1 - t) v(x, t)) / t`, which shares the ODE's marginals
//! for every `g >= 0`. The final interval (of width `last_step_size`) is a
//! noise-free Euler step of the bare velocity field, so the score is never
//! evaluated at small `t`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_with_taps, DenoiserState};
use crate::rng::{stream_rng, streams};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// A time-dependent velocity field over batches of points.
pub trait VelocityField {
    fn dim(&self) -> usize;
    /// Velocity at every row of `x` (shape `[n, dim]`) at time `t`.
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

impl VelocityField for DenoiserState {
    fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.to_vars(&tape, false);
        let times = Tensor::new_unchecked(vec![x.rows()], vec![t; x.rows()]);
        Ok(forward_with_taps(&vars, x, &times)?.pred.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "heun_ode")]
    HeunOde,
    #[serde(rename = "euler_sde")]
    EulerSde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TimeSchedule {
    #[serde(rename = "linear")]
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Width of the final noise-free SDE step.
    #[serde(default = "default_last_step_size")]
    pub last_step_size: f64,
    #[serde(default)]
    pub t_schedule: TimeSchedule,
    /// SDE noise magnitude `g`; zero collapses the SDE to the Euler ODE.
    #[serde(default = "default_diffusion_scale")]
    pub diffusion_scale: f64,
}

fn default_steps() -> usize {
    250
}
fn default_last_step_size() -> f64 {
    0.04
}
fn default_diffusion_scale() -> f64 {
    1.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::HeunOde,
            steps: default_steps(),
            last_step_size: default_last_step_size(),
            t_schedule: TimeSchedule::Linear,
            diffusion_scale: default_diffusion_scale(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig {
                field: "sampler.steps",
                reason: "need at least one step".into(),
            });
        }
        if self.kind == SamplerKind::EulerSde {
            if !(self.last_step_size > 0.0 && self.last_step_size < 1.0) {
                return Err(Error::InvalidConfig {
                    field: "sampler.last_step_size",
                    reason: format!("must lie in (0, 1), got {}", self.last_step_size),
                });
            }
            if self.steps < 2 {
                return Err(Error::InvalidConfig {
                    field: "sampler.steps",
                    reason: "the SDE sampler needs at least 2 steps".into(),
                });
            }
        }
        if !(self.diffusion_scale >= 0.0 && self.diffusion_scale.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "sampler.diffusion_scale",
                reason: format!("must be a non-negative real, got {}", self.diffusion_scale),
            });
        }
        Ok(())
    }
}

/// Uniform grid of `steps + 1` nodes from 1 down to 0.
pub fn linear_grid(steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| 1.0 - k as f64 / steps as f64)
        .collect()
}

/// SDE grid: `steps - 1` uniform intervals from 1 down to `last`, then the
/// final interval `last -> 0`.
pub fn sde_grid(steps: usize, last: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..steps)
        .map(|k| 1.0 - k as f64 * (1.0 - last) / (steps - 1) as f64)
        .collect();
    grid.push(0.0);
    grid
}

fn checked_state(step: usize, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::SamplerDiverged {
            step,
            source: Box::new(Error::NonFinite {
                op: "sampler_state",
                index,
            }),
        });
    }
    Ok(Tensor::new_unchecked(shape, data))
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| Error::SamplerDiverged {
        step,
        source: Box::new(e),
    }
}

/// x + c * y, elementwise over equal shapes.
fn add_scaled(x: &Tensor, y: &Tensor, c: f64) -> Vec<f64> {
    x.data().iter().zip(y.data()).map(|(a, b)| a + c * b).collect()
}

/// Heun (explicit trapezoid) integration of `dx/dt = v(x, t)` over `grid`.
pub fn heun_integrate<F: VelocityField + ?Sized>(
    field: &F,
    x_init: &Tensor,
    grid: &[f64],
) -> Result<Tensor> {
    let mut x = x_init.clone();
    for step in 0..grid.len() - 1 {
        let (t0, t1) = (grid[step], grid[step + 1]);
        let dt = t1 - t0;
        let v0 = field.velocity(&x, t0).map_err(diverged(step))?;
        let x_pred = checked_state(step, x.shape().to_vec(), add_scaled(&x, &v0, dt))?;
        let v1 = field.velocity(&x_pred, t1).map_err(diverged(step))?;
        let avg: Vec<f64> = v0
            .data()
            .iter()
            .zip(v1.data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let avg = Tensor::new_unchecked(x.shape().to_vec(), avg);
        x = checked_state(step, x.shape().to_vec(), add_scaled(&x, &avg, dt))?;
    }
    Ok(x)
}

/// Euler integration of `dx/dt = v(x, t)` over `grid`.
pub fn euler_integrate<F: VelocityField + ?Sized>(
    field: &F,
    x_init: &Tensor,
    grid: &[f64],
) -> Result<Tensor> {
    let mut x = x_init.clone();
    for step in 0..grid.len() - 1 {
        let dt = grid[step + 1] - grid[step];
        let v = field.velocity(&x, grid[step]).map_err(diverged(step))?;
        x = checked_state(step, x.shape().to_vec(), add_scaled(&x, &v, dt))?;
    }
    Ok(x)
}

/// Euler-Maruyama for `dx = drift(x, t) dt + diffusion dW` over an arbitrary
/// monotone `grid`; per-step noise scales with sqrt(|dt|).
pub fn euler_maruyama<D>(
    drift: D,
    diffusion: f64,
    x_init: &Tensor,
    grid: &[f64],
    rng: &mut impl Rng,
) -> Result<Tensor>
where
    D: Fn(&Tensor, f64, usize) -> Result<Tensor>,
{
    let mut x = x_init.clone();
    for step in 0..grid.len() - 1 {
        let dt = grid[step + 1] - grid[step];
        let f = drift(&x, grid[step], step)?;
        let mut next = add_scaled(&x, &f, dt);
        if diffusion > 0.0 {
            let scale = diffusion * dt.abs().sqrt();
            for slot in next.iter_mut() {
                *slot += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        x = checked_state(step, x.shape().to_vec(), next)?;
    }
    Ok(x)
}

/// Standard normal draw of shape `[n, d]`, the starting state both samplers
/// integrate from.
pub fn initial_noise(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new_unchecked(vec![n, d], data)
}

/// Draws `n` samples by integrating the velocity ODE with Heun's method on a
/// linear grid; deterministic per seed.
pub fn sample_heun<F: VelocityField + ?Sized>(
    field: &F,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, streams::SAMPLER);
    let x1 = initial_noise(&mut rng, n, field.dim());
    if n == 0 {
        return Ok(x1);
    }
    heun_integrate(field, &x1, &linear_grid(cfg.steps))
}

/// Draws `n` samples from the reverse SDE with Euler-Maruyama, ending in a
/// noise-free Euler step of width `cfg.last_step_size`.
pub fn sample_euler_sde<F: VelocityField + ?Sized>(
    field: &F,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, streams::SAMPLER);
    let x1 = initial_noise(&mut rng, n, field.dim());
    if n == 0 {
        return Ok(x1);
    }
    let grid = sde_grid(cfg.steps, cfg.last_step_size);
    let g = cfg.diffusion_scale;

    let sde_steps = &grid[..grid.len() - 1];
    let drift = |x: &Tensor, t: f64, step: usize| -> Result<Tensor> {
        let v = field.velocity(x, t).map_err(diverged(step))?;
        if g == 0.0 {
            return Ok(v);
        }
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(xi, vi)| {
                let score = -(xi + (1.0 - t) * vi) / t;
                vi - 0.5 * g * g * score
            })
            .collect();
        Ok(Tensor::new_unchecked(x.shape().to_vec(), data))
    };
    let x_last = euler_maruyama(drift, g, &x1, sde_steps, &mut rng)?;

    // Final noise-free interval integrates the bare velocity field.
    let final_grid = [grid[grid.len() - 2], 0.0];
    euler_integrate(field, &x_last, &final_grid)
}
