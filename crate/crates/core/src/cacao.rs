//! Feedback-driven classical spin dynamics.
//!
//! Each spin is a Bloch vector confined to the X-Z great circle and rotates
//! about the Y axis with amplitude
//!
//! ```text
//! alpha_i = 2 (h_i + sum_j J_ij mz_j) mx_i
//! d mx_i / dt =  2 alpha_i mz_i
//! d mz_i / dt = -2 alpha_i mx_i
//! ```
//!
//! so that `dE/dt = -sum_i alpha_i^2` along exact trajectories.

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IsingModel, SpinConfig};

/// Default magnitude for [`random_tilts`].
pub const DEFAULT_TILT_AMPLITUDE: f64 = 0.01;

/// Product state on the X-Z great circle (`my` is identically zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    pub mx: Vec<f64>,
    pub mz: Vec<f64>,
    pub time: f64,
}

impl SpinState {
    pub fn new(mx: Vec<f64>, mz: Vec<f64>, time: f64) -> Result<Self> {
        if mx.len() != mz.len() {
            return Err(Error::length_mismatch("mz", mx.len(), mz.len()));
        }
        Ok(Self { mx, mz, time })
    }

    pub fn len(&self) -> usize {
        self.mx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mx.is_empty()
    }

    /// Largest `|mx^2 + mz^2 - 1|` over all spins.
    pub fn norm_error(&self) -> f64 {
        self.mx
            .iter()
            .zip(&self.mz)
            .map(|(x, z)| (x * x + z * z - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.mx.iter().chain(&self.mz).all(|v| v.is_finite())
    }
}

/// `mx = cos(delta_i)`, `mz = sin(delta_i)` with every tilt in `(-pi/2, pi/2)`.
pub fn initial_state(n: usize, tilts: &[f64]) -> Result<SpinState> {
    if tilts.len() != n {
        return Err(Error::length_mismatch("tilts", n, tilts.len()));
    }
    if let Some((i, d)) = tilts
        .iter()
        .enumerate()
        .find(|(_, d)| !(d.abs() < FRAC_PI_2))
    {
        return Err(Error::invalid(format!(
            "tilt {i} = {d} lies outside the open interval (-pi/2, pi/2)"
        )));
    }
    Ok(SpinState {
        mx: tilts.iter().map(|d| d.cos()).collect(),
        mz: tilts.iter().map(|d| d.sin()).collect(),
        time: 0.0,
    })
}

/// Every spin along +X.
pub fn default_initial_state(n: usize) -> SpinState {
    SpinState {
        mx: vec![1.0; n],
        mz: vec![0.0; n],
        time: 0.0,
    }
}

/// Tilts drawn uniformly from `[-amplitude, amplitude]`. Needed when every field
/// vanishes, since the untilted state is then a fixed point.
pub fn random_tilts(n: usize, seed: u64, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rng.gen_range(-amplitude..=amplitude))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Amplitudes frozen over the step, then an exact rotation of each spin.
    #[default]
    Rotation,
    /// Classical fourth-order Runge-Kutta on the coupled system.
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StopRule {
    #[default]
    HorizonOnly,
    /// Every spin has `mz > threshold` (signed) or `|mz| > threshold`.
    MagnetizationThreshold { threshold: f64, signed: bool },
    /// `sum_i alpha_i^2 < epsilon`.
    Stationary { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacaoConfig {
    pub dt: f64,
    pub t_max: f64,
    pub scheme: Scheme,
    pub stop: StopRule,
    /// Record every k-th step; `None` means `max(1, round(0.1 / dt))`.
    pub record_every: Option<usize>,
    pub record_controls: bool,
    pub record_spins: bool,
}

impl Default for CacaoConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 50.0,
            scheme: Scheme::Rotation,
            stop: StopRule::HorizonOnly,
            record_every: None,
            record_controls: false,
            record_spins: false,
        }
    }
}

impl CacaoConfig {
    pub fn with_horizon(t_max: f64) -> Self {
        Self {
            t_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        match self.stop {
            StopRule::MagnetizationThreshold { threshold, .. }
                if !(threshold > 0.0 && threshold < 1.0) =>
            {
                Err(Error::invalid(format!(
                    "magnetization threshold must lie in (0, 1), got {threshold}"
                )))
            }
            StopRule::Stationary { epsilon } if !(epsilon > 0.0) => Err(Error::invalid(format!(
                "stationarity epsilon must be positive, got {epsilon}"
            ))),
            _ if self.record_every == Some(0) => {
                Err(Error::invalid("record_every must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn effective_record_every(&self) -> usize {
        self.record_every
            .unwrap_or_else(|| ((0.1 / self.dt).round() as usize).max(1))
    }

    /// Number of steps needed to reach `t_max` at fixed `dt`.
    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// `alpha_i` at each recorded time, when requested.
    pub controls: Option<Vec<Vec<f64>>>,
    /// `mz_i` at each recorded time, when requested.
    pub spins: Option<Vec<Vec<f64>>>,
    pub final_state: SpinState,
    pub converged_at: Option<f64>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn final_energy(&self) -> f64 {
        *self
            .energies
            .last()
            .expect("trajectory always holds the initial point")
    }
}

pub fn compute_alpha(model: &IsingModel, state: &SpinState) -> Result<Vec<f64>> {
    check_lengths(model, state)?;
    let mut alpha = vec![0.0; state.len()];
    alpha_into(model, &state.mx, &state.mz, &mut alpha);
    Ok(alpha)
}

#[inline]
fn alpha_into(model: &IsingModel, mx: &[f64], mz: &[f64], out: &mut [f64]) {
    for (i, a) in out.iter_mut().enumerate() {
        *a = 2.0 * model.local_field(i, mz) * mx[i];
    }
}

fn check_lengths(model: &IsingModel, state: &SpinState) -> Result<()> {
    if state.mx.len() != model.n_vertices() || state.mz.len() != model.n_vertices() {
        return Err(Error::length_mismatch(
            "spin state",
            model.n_vertices(),
            state.mx.len().max(state.mz.len()),
        ));
    }
    Ok(())
}

/// Advance one step of size `dt`.
pub fn step(model: &IsingModel, state: &SpinState, dt: f64, scheme: Scheme) -> Result<SpinState> {
    check_lengths(model, state)?;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut engine = Engine::new(model, state.len());
    let mut next = state.clone();
    engine.advance(&mut next, dt, scheme);
    Ok(next)
}

/// Reusable scratch buffers for repeated steps.
struct Engine<'m> {
    model: &'m IsingModel,
    alpha: Vec<f64>,
    k: [Vec<f64>; 8],
    x_tmp: Vec<f64>,
    z_tmp: Vec<f64>,
}

impl<'m> Engine<'m> {
    fn new(model: &'m IsingModel, n: usize) -> Self {
        Self {
            model,
            alpha: vec![0.0; n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            x_tmp: vec![0.0; n],
            z_tmp: vec![0.0; n],
        }
    }

    fn advance(&mut self, state: &mut SpinState, dt: f64, scheme: Scheme) {
        match scheme {
            Scheme::Rotation => self.rotate(state, dt),
            Scheme::Rk4 => self.rk4(state, dt),
        }
        state.time += dt;
    }

    fn rotate(&mut self, state: &mut SpinState, dt: f64) {
        alpha_into(self.model, &state.mx, &state.mz, &mut self.alpha);
        rotate_spins(state, dt, &self.alpha);
    }

    fn derivative(
        model: &IsingModel,
        mx: &[f64],
        mz: &[f64],
        alpha: &mut [f64],
        dx: &mut [f64],
        dz: &mut [f64],
    ) {
        alpha_into(model, mx, mz, alpha);
        for i in 0..mx.len() {
            dx[i] = 2.0 * alpha[i] * mz[i];
            dz[i] = -2.0 * alpha[i] * mx[i];
        }
    }

    fn rk4(&mut self, state: &mut SpinState, dt: f64) {
        let n = state.len();
        let [k1x, k1z, k2x, k2z, k3x, k3z, k4x, k4z] = &mut self.k;
        let (xt, zt) = (&mut self.x_tmp, &mut self.z_tmp);
        let model = self.model;
        let alpha = &mut self.alpha;

        Self::derivative(model, &state.mx, &state.mz, alpha, k1x, k1z);
        for i in 0..n {
            xt[i] = state.mx[i] + 0.5 * dt * k1x[i];
            zt[i] = state.mz[i] + 0.5 * dt * k1z[i];
        }
        Self::derivative(model, xt, zt, alpha, k2x, k2z);
        for i in 0..n {
            xt[i] = state.mx[i] + 0.5 * dt * k2x[i];
            zt[i] = state.mz[i] + 0.5 * dt * k2z[i];
        }
        Self::derivative(model, xt, zt, alpha, k3x, k3z);
        for i in 0..n {
            xt[i] = state.mx[i] + dt * k3x[i];
            zt[i] = state.mz[i] + dt * k3z[i];
        }
        Self::derivative(model, xt, zt, alpha, k4x, k4z);
        for i in 0..n {
            state.mx[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            state.mz[i] += dt / 6.0 * (k1z[i] + 2.0 * k2z[i] + 2.0 * k3z[i] + k4z[i]);
        }
    }
}

/// Rotates every spin by `2 alpha_i dt` about Y.
fn rotate_spins(state: &mut SpinState, dt: f64, alpha: &[f64]) {
    for ((x, z), a) in state.mx.iter_mut().zip(state.mz.iter_mut()).zip(alpha) {
        let (s, c) = (2.0 * a * dt).sin_cos();
        let (x0, z0) = (*x, *z);
        *x = x0 * c + z0 * s;
        *z = -x0 * s + z0 * c;
    }
}

fn stop_fired(rule: StopRule, state: &SpinState, alpha: &[f64]) -> bool {
    match rule {
        StopRule::HorizonOnly => false,
        StopRule::MagnetizationThreshold { threshold, signed } => state.mz.iter().all(|&z| {
            if signed {
                z > threshold
            } else {
                z.abs() > threshold
            }
        }),
        StopRule::Stationary { epsilon } => alpha.iter().map(|a| a * a).sum::<f64>() < epsilon,
    }
}

/// Integrate from `init` until `t_max` or until the stop rule fires.
pub fn run(model: &IsingModel, init: &SpinState, cfg: &CacaoConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_lengths(model, init)?;

    let mut warnings = Vec::new();
    if model.fields().iter().all(|&h| h == 0.0) && init.mz.iter().all(|&z| z == 0.0) {
        warnings.push(
            "all fields and tilts are zero: the initial state is a fixed point; \
             use random tilts to start the dynamics"
                .to_string(),
        );
    }

    let n = model.n_vertices();
    let record_every = cfg.effective_record_every();
    let n_steps = cfg.n_steps();
    let t0 = init.time;

    let mut engine = Engine::new(model, n);
    let mut state = init.clone();
    let mut alpha = vec![0.0; n];
    let mut traj = Trajectory {
        times: Vec::new(),
        energies: Vec::new(),
        controls: cfg.record_controls.then(Vec::new),
        spins: cfg.record_spins.then(Vec::new),
        final_state: init.clone(),
        converged_at: None,
        steps: 0,
        warnings,
    };

    let record = |traj: &mut Trajectory, state: &SpinState, alpha: &[f64]| {
        traj.times.push(state.time);
        traj.energies
            .push(model.mean_field_energy_unchecked(&state.mz));
        if let Some(c) = traj.controls.as_mut() {
            c.push(alpha.to_vec());
        }
        if let Some(s) = traj.spins.as_mut() {
            s.push(state.mz.clone());
        }
    };

    alpha_into(model, &state.mx, &state.mz, &mut alpha);
    record(&mut traj, &state, &alpha);
    if stop_fired(cfg.stop, &state, &alpha) {
        traj.converged_at = Some(state.time);
    } else {
        // rotation reuses the amplitudes of the current state
        let rotation = cfg.scheme == Scheme::Rotation;
        for k in 1..=n_steps {
            if rotation {
                rotate_spins(&mut state, cfg.dt, &alpha);
            } else {
                engine.advance(&mut state, cfg.dt, cfg.scheme);
            }
            state.time = t0 + k as f64 * cfg.dt;
            traj.steps = k;
            if !state.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite spin components at t = {} (dt = {} too large for {:?}?)",
                    state.time, cfg.dt, cfg.scheme
                )));
            }
            let need_alpha = rotation
                || cfg.record_controls
                || matches!(cfg.stop, StopRule::Stationary { .. })
                || k % record_every == 0
                || k == n_steps;
            if need_alpha {
                alpha_into(model, &state.mx, &state.mz, &mut alpha);
            }
            if stop_fired(cfg.stop, &state, &alpha) {
                traj.converged_at = Some(state.time);
                record(&mut traj, &state, &alpha);
                break;
            }
            if k % record_every == 0 || k == n_steps {
                record(&mut traj, &state, &alpha);
            }
        }
    }
    traj.final_state = state;
    Ok(traj)
}

/// `+1` for positive `mz`, `-1` for negative; an exact zero rounds up.
pub fn round_solution(state: &SpinState) -> SpinConfig {
    SpinConfig::new(
        state
            .mz
            .iter()
            .map(|&z| if z < 0.0 { -1 } else { 1 })
            .collect(),
    )
    .expect("rounding only produces +1 or -1")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub wall_time: Duration,
    pub steps: usize,
    pub energy_change: f64,
}

impl ProbeResult {
    pub fn time_per_step(&self) -> Duration {
        self.wall_time / self.steps.max(1) as u32
    }
}

/// Times a run from the default initial state.
pub fn complexity_probe(model: &IsingModel, cfg: &CacaoConfig) -> Result<ProbeResult> {
    let init = default_initial_state(model.n_vertices());
    let start = Instant::now();
    let traj = run(model, &init, cfg)?;
    let wall_time = start.elapsed();
    Ok(ProbeResult {
        wall_time,
        steps: traj.steps,
        energy_change: traj.final_energy() - traj.energies[0],
    })
}
