//! Reproducible studies built on the engines: the two-spin trajectories and
//! gap scan, the small-lattice four-method benchmark, and large-lattice scaling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cacao::{self, CacaoConfig, StopRule, Trajectory};
use crate::error::{Error, Result};
use crate::model::{expand_clauses, generate_square_lattice_instance, IsingModel};
use crate::qsim::{self, DriverSpec, QuantumConfig};

pub const TWO_SPIN_COUPLING: f64 = -1.0;
pub const TWO_SPIN_FIELD_1: f64 = -1.0;

/// `J_12 z_1 z_2 + h_1 z_1 + h_2 z_2` with `J_12 = h_1 = -1`.
pub fn two_spin_model(h2: f64) -> Result<IsingModel> {
    IsingModel::new(
        2,
        vec![TWO_SPIN_FIELD_1, h2],
        [(0, 1, TWO_SPIN_COUPLING)],
        0.0,
    )
}

/// Gap between the all-up ground state and the (up, down) first excited state.
pub fn two_spin_gap(h2: f64) -> f64 {
    -2.0 * (TWO_SPIN_COUPLING + h2)
}

pub fn two_spin_h2_for_gap(gap: f64) -> f64 {
    -0.5 * gap - TWO_SPIN_COUPLING
}

fn two_spin_regime_warning(h2: f64) -> Option<String> {
    let ok = h2 > 0.0 && h2 < TWO_SPIN_COUPLING.abs() && TWO_SPIN_FIELD_1.abs() > h2;
    (!ok).then(|| {
        format!(
            "h2 = {h2} is outside 0 < h2 < min(|J12|, |h1|); the all-up state is no longer \
             the unique ground state with (up, down) first excited"
        )
    })
}

/// Runs from the untilted state, always recording `mz` of both spins.
pub fn two_spin_trajectory(h2: f64, cfg: &CacaoConfig) -> Result<Trajectory> {
    let model = two_spin_model(h2)?;
    let cfg = CacaoConfig {
        record_spins: true,
        ..cfg.clone()
    };
    let mut traj = cacao::run(&model, &cacao::default_initial_state(2), &cfg)?;
    traj.warnings.extend(two_spin_regime_warning(h2));
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// `a` in `ln y = a + b ln x`.
    pub log_prefactor: f64,
    pub exponent: f64,
    /// RMS residual in log space.
    pub rms: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        (self.log_prefactor + self.exponent * x.ln()).exp()
    }
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::length_mismatch("ys", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("a power-law fit needs at least two points"));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!(
            "log-log fit requires positive finite values, got {v}"
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid(
            "all abscissae are equal; slope is undetermined",
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let log_prefactor = my - exponent * mx;
    let rms = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - log_prefactor - exponent * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        log_prefactor,
        exponent,
        rms,
    })
}

/// `count` log-spaced gaps in `[lo, hi]`, ascending.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default scan: 20 log-spaced gaps in `[0.02, 0.5]`, given as `h2` values.
pub fn default_gap_scan_h2() -> Vec<f64> {
    log_spaced(0.02, 0.5, 20)
        .into_iter()
        .map(two_spin_h2_for_gap)
        .collect()
}

/// Default integration settings for the gap scan; the horizon covers the smallest default gap.
pub fn default_gap_scan_config() -> CacaoConfig {
    CacaoConfig::with_horizon(500.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub h2: f64,
    pub gap: f64,
    /// First time both `mz > threshold`; `None` when the horizon was reached first.
    pub t_conv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScanResult {
    pub points: Vec<GapPoint>,
    pub threshold: f64,
    /// Converged points only, in scan order.
    pub gaps: Vec<f64>,
    pub times: Vec<f64>,
    pub fit: Option<PowerLawFit>,
    pub config: CacaoConfig,
}

impl GapScanResult {
    pub fn excluded(&self) -> impl Iterator<Item = &GapPoint> {
        self.points.iter().filter(|p| p.t_conv.is_none())
    }
}

/// Convergence time versus gap for the two-spin problem, plus a power-law fit
/// over converged points. Non-converged points are reported and left out of the fit.
pub fn gap_scan(h2_values: &[f64], threshold: f64, cfg: &CacaoConfig) -> Result<GapScanResult> {
    if h2_values.is_empty() {
        return Err(Error::invalid("gap scan needs at least one h2 value"));
    }
    if let Some(w) = h2_values.iter().find_map(|&h2| two_spin_regime_warning(h2)) {
        return Err(Error::invalid(w));
    }
    let gaps: Vec<f64> = h2_values.iter().map(|&h2| two_spin_gap(h2)).collect();
    let increasing = gaps.windows(2).all(|w| w[1] > w[0]);
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::invalid("scanned gaps must be strictly monotone"));
    }
    let cfg = CacaoConfig {
        stop: StopRule::MagnetizationThreshold {
            threshold,
            signed: true,
        },
        record_spins: false,
        ..cfg.clone()
    };
    cfg.validate()?;

    let points = h2_values
        .par_iter()
        .map(|&h2| {
            let traj = two_spin_trajectory(h2, &cfg)?;
            Ok(GapPoint {
                h2,
                gap: two_spin_gap(h2),
                t_conv: traj.converged_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (gaps, times): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.t_conv.map(|t| (p.gap, t)))
        .unzip();
    let fit = if gaps.len() >= 2 {
        Some(loglog_fit(&gaps, &times)?)
    } else {
        None
    };
    Ok(GapScanResult {
        points,
        threshold,
        gaps,
        times,
        fit,
        config: cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cacao,
    Qa,
    Falqon,
    Cdfqa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cacao, Method::Qa, Method::Falqon, Method::Cdfqa];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cacao => "cacao",
            Method::Qa => "qa",
            Method::Falqon => "falqon",
            Method::Cdfqa => "cdfqa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!("unknown method `{s}` (cacao, qa, falqon, cdfqa)"))
            })
    }
}

/// Final energy of one method on one problem for horizon `t`.
pub fn solve_energy(
    method: Method,
    model: &IsingModel,
    t: f64,
    cacao_cfg: &CacaoConfig,
    quantum_cfg: &QuantumConfig,
) -> Result<f64> {
    match method {
        Method::Cacao => {
            let cfg = CacaoConfig {
                t_max: t,
                ..cacao_cfg.clone()
            };
            let init = cacao::default_initial_state(model.n_vertices());
            Ok(cacao::run(model, &init, &cfg)?.final_energy())
        }
        Method::Qa | Method::Falqon | Method::Cdfqa => {
            let driver = DriverSpec::for_model(model);
            let run = match method {
                Method::Qa => qsim::qa_run,
                Method::Falqon => qsim::falqon_run,
                _ => qsim::cdfqa_run,
            };
            Ok(run(model, &driver, t, quantum_cfg)?.final_energy())
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub operation_times: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub cacao: CacaoConfig,
    pub quantum: QuantumConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            operation_times: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            seeds: (1..=10).collect(),
            methods: Method::ALL.to_vec(),
            cacao: CacaoConfig::default(),
            quantum: QuantumConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn n_instances(&self) -> usize {
        self.seeds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    /// Indexed like `operation_times`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `energies[t][instance]`.
    pub energies: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub operation_times: Vec<f64>,
    pub per_method: Vec<MethodStats>,
    pub n_instances: usize,
    pub seeds: Vec<u64>,
    /// Model fingerprint per instance, identical across methods.
    pub fingerprints: Vec<u64>,
    pub config: BenchmarkConfig,
}

impl BenchmarkResult {
    pub fn stats(&self, method: Method) -> Option<&MethodStats> {
        self.per_method.iter().find(|s| s.method == method)
    }
}

/// Lattice length of the four-method comparison; larger lattices are out of statevector reach.
pub const BENCHMARK_L: usize = 3;

/// Every method on the same generated `3 x 3` instances at every operation time.
pub fn benchmark_l3(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("benchmark needs at least one instance seed"));
    }
    if cfg.operation_times.is_empty() || cfg.operation_times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid(
            "operation times must be non-empty and positive",
        ));
    }
    let models = cfg
        .seeds
        .iter()
        .map(|&seed| expand_clauses(&generate_square_lattice_instance(BENCHMARK_L, seed)?))
        .collect::<Result<Vec<_>>>()?;
    let fingerprints: Vec<u64> = models.iter().map(IsingModel::fingerprint).collect();

    let n_inst = models.len();
    let n_t = cfg.operation_times.len();
    let tasks: Vec<(usize, usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..n_t).flat_map(move |t| (0..n_inst).map(move |i| (m, t, i))))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(m, t, i)| {
            let model = &models[i];
            let energy = solve_energy(
                cfg.methods[m],
                model,
                cfg.operation_times[t],
                &cfg.cacao,
                &cfg.quantum,
            )?;
            Ok((energy, model.fingerprint()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_method = Vec::with_capacity(cfg.methods.len());
    for (m, &method) in cfg.methods.iter().enumerate() {
        let mut energies = Vec::with_capacity(n_t);
        for t in 0..n_t {
            let row: Vec<f64> = (0..n_inst)
                .map(|i| {
                    let (energy, fp) = results[(m * n_t + t) * n_inst + i];
                    assert_eq!(fp, fingerprints[i], "solver saw a different problem");
                    energy
                })
                .collect();
            energies.push(row);
        }
        let (mean, std) = energies.iter().map(|row| mean_std(row)).unzip();
        per_method.push(MethodStats {
            method,
            mean,
            std,
            energies,
        });
    }

    Ok(BenchmarkResult {
        operation_times: cfg.operation_times.clone(),
        per_method,
        n_instances: n_inst,
        seeds: cfg.seeds.clone(),
        fingerprints,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub l_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub cacao: CacaoConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            l_values: vec![10, 40, 70, 100],
            seeds: (1..=10).collect(),
            cacao: CacaoConfig {
                stop: StopRule::Stationary { epsilon: 1e-12 },
                ..CacaoConfig::with_horizon(30.0)
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub l: usize,
    pub n: usize,
    pub times: Vec<f64>,
    /// Mean and standard deviation of `E_P(t) / N` over instances.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    /// Best per-step wall time of repeated full-horizon runs on the first instance.
    pub seconds_per_step: f64,
    pub wall_seconds: f64,
    /// First time after which the mean stays within 5% of its final value.
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub sizes: Vec<usize>,
    pub per_size: Vec<SizeSummary>,
    pub seeds: Vec<u64>,
    pub config: ScalingConfig,
}

/// First time after which `values` stays within `fraction * |final|` of the final value.
pub fn settling_time(times: &[f64], values: &[f64], fraction: f64) -> Option<f64> {
    let last = *values.last()?;
    let band = fraction * last.abs();
    let outside = values.iter().rposition(|v| (v - last).abs() > band);
    match outside {
        None => times.first().copied(),
        Some(k) => times.get(k + 1).copied(),
    }
}

/// Rescaled-energy trajectories of the feedback dynamics across lattice sizes.
/// Fastest per-step wall time over repeated full-horizon runs, repeating until
/// at least `PROBE_MIN_SECONDS` have been spent.
fn probe_seconds_per_step(model: &IsingModel, cfg: &CacaoConfig) -> Result<f64> {
    let cfg = CacaoConfig {
        stop: StopRule::HorizonOnly,
        ..cfg.clone()
    };
    let mut best = f64::INFINITY;
    let mut spent = 0.0;
    let mut reps = 0;
    while reps < 3 || spent < PROBE_MIN_SECONDS {
        let probe = cacao::complexity_probe(model, &cfg)?;
        let wall = probe.wall_time.as_secs_f64();
        best = best.min(wall / probe.steps.max(1) as f64);
        spent += wall;
        reps += 1;
    }
    Ok(best)
}

const PROBE_MIN_SECONDS: f64 = 0.2;

pub fn scaling_study(cfg: &ScalingConfig) -> Result<ScalingResult> {
    if cfg.seeds.is_empty() || cfg.l_values.is_empty() {
        return Err(Error::invalid(
            "scaling study needs sizes and instance seeds",
        ));
    }
    cfg.cacao.validate()?;
    let record_every = cfg.cacao.effective_record_every();
    let n_steps = cfg.cacao.n_steps();
    // common time grid for every run
    let mut grid: Vec<usize> = (0..=n_steps).step_by(record_every).collect();
    if *grid.last().unwrap() != n_steps {
        grid.push(n_steps);
    }
    let times: Vec<f64> = grid.iter().map(|&k| k as f64 * cfg.cacao.dt).collect();

    let mut per_size = Vec::with_capacity(cfg.l_values.len());
    for &l in &cfg.l_values {
        let n = l * l;
        let runs = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let model = expand_clauses(&generate_square_lattice_instance(l, seed)?)?;
                let init = cacao::default_initial_state(n);
                let start = Instant::now();
                let traj = cacao::run(&model, &init, &cfg.cacao)?;
                let wall = start.elapsed().as_secs_f64();
                // stationary runs are padded with their final value
                let per_spin: Vec<f64> = times
                    .iter()
                    .map(|&t| {
                        let k = traj.times.partition_point(|&s| s <= t + 1e-9);
                        traj.energies[k.max(1) - 1] / n as f64
                    })
                    .collect();
                Ok((per_spin, wall))
            })
            .collect::<Result<Vec<_>>>()?;

        let (mean, std): (Vec<f64>, Vec<f64>) = (0..times.len())
            .map(|k| mean_std(&runs.iter().map(|r| r.0[k]).collect::<Vec<_>>()))
            .unzip();
        let wall_seconds: f64 = runs.iter().map(|r| r.1).sum();
        let probe_model = expand_clauses(&generate_square_lattice_instance(l, cfg.seeds[0])?)?;
        let seconds_per_step = probe_seconds_per_step(&probe_model, &cfg.cacao)?;
        per_size.push(SizeSummary {
            l,
            n,
            final_mean: *mean.last().unwrap(),
            final_std: *std.last().unwrap(),
            settling_time: settling_time(&times, &mean, 0.05),
            times: times.clone(),
            mean,
            std,
            seconds_per_step,
            wall_seconds,
        });
    }

    Ok(ScalingResult {
        sizes: cfg.l_values.clone(),
        per_size,
        seeds: cfg.seeds.clone(),
        config: cfg.clone(),
    })
}
