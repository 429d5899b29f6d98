use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use cacao_core::cacao::{self, default_initial_state, initial_state, random_tilts, round_solution};
use cacao_core::experiments::{
    benchmark_l3, gap_scan, log_spaced, scaling_study, two_spin_gap, two_spin_h2_for_gap,
    two_spin_trajectory, Method,
};
use cacao_core::io::{self, RunSummary};
use cacao_core::model::{expand_clauses, generate_square_lattice_instance};
use cacao_core::qsim;
use cacao_core::{DriverSpec, Scheme, StopRule};
use serde_json::json;

use crate::config::{
    BenchmarkFileConfig, FileConfig, GapScanConfig, GenerateConfig, ScalingFileConfig, SolveConfig,
    TwoSpinConfig,
};
use crate::manifest::Recorder;
use crate::{Cli, Command, ExperimentCmd, GenerateArgs, SeedArgs, SolveArgs, UsageError};

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let out = cli.out_dir;
    match cli.command {
        Command::Generate(args) => generate(args, &file, &out),
        Command::Solve(args) => solve(args, &file, &out),
        Command::Experiment(cmd) => experiment(cmd, &file, &out),
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| UsageError(format!("{flag} is required (flag or config file)")).into())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    io::write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))?;
    Ok(())
}

fn generate(args: GenerateArgs, file: &FileConfig, out_dir: &Path) -> anyhow::Result<()> {
    let mut cfg = file.apply(GenerateConfig::default())?;
    let g = &mut cfg.generate;
    g.l = args.l.or(g.l);
    g.seed = args.seed.or(g.seed);
    g.out = args.out.or(g.out.take());
    g.ising_out = args.ising_out.or(g.ising_out.take());
    let l = require(g.l, "--L")?;
    let seed = require(g.seed, "--seed")?;
    if l < 2 {
        bail!(UsageError(format!("L must be at least 2, got {l}")));
    }
    ensure_dir(out_dir)?;
    let mut rec = Recorder::start("generate");

    let inst = generate_square_lattice_instance(l, seed)?;
    let path = g
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("instance_L{l}_seed{seed}.json")));
    io::write_text(&path, &io::instance_to_json(&inst)?)?;
    rec.artifact(&path);
    if let Some(ising) = &g.ising_out {
        io::write_text(ising, &io::ising_to_json(&expand_clauses(&inst)?)?)?;
        rec.artifact(ising);
    }
    rec.finish(
        out_dir,
        "generate",
        &cfg,
        vec![seed],
        json!({ "clauses": inst.clauses().len() }),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn solve(args: SolveArgs, file: &FileConfig, out_dir: &Path) -> anyhow::Result<()> {
    let mut cfg = file.apply(SolveConfig::default())?;
    let s = &mut cfg.solve;
    s.method = args.method.or(s.method);
    s.instance = args.instance.or(s.instance.take());
    s.t = args.t.unwrap_or(s.t);
    s.seed = args.seed.or(s.seed);
    s.tilt_amplitude = args.tilt_amplitude.unwrap_or(s.tilt_amplitude);
    s.save_state |= args.save_state;
    if let Some(dt) = args.dt {
        cfg.cacao.dt = dt;
        cfg.quantum.dt = dt;
    }
    match args.scheme.as_deref() {
        Some("rk4") => cfg.cacao.scheme = Scheme::Rk4,
        Some(_) => cfg.cacao.scheme = Scheme::Rotation,
        None => {}
    }
    if let Some(threshold) = args.threshold {
        cfg.cacao.stop = StopRule::MagnetizationThreshold {
            threshold,
            signed: false,
        };
    }
    if let Some(epsilon) = args.stationary {
        cfg.cacao.stop = StopRule::Stationary { epsilon };
    }
    cfg.cacao.record_every = args.record_every.or(cfg.cacao.record_every);
    cfg.cacao.record_controls |= args.record_controls;
    cfg.quantum.force |= args.force;
    cfg.quantum.max_qubits = args.max_qubits.unwrap_or(cfg.quantum.max_qubits);
    cfg.cacao.t_max = cfg.solve.t;

    let method = require(cfg.solve.method, "--method")?;
    let instance = require(cfg.solve.instance.clone(), "--instance")?;
    let model = io::read_model(&instance)?;
    let n = model.n_vertices();
    let mut seeds: Vec<u64> = io::read_instance(&instance)
        .ok()
        .and_then(|i| i.seed)
        .into_iter()
        .collect();
    seeds.extend(cfg.solve.seed);

    ensure_dir(out_dir)?;
    let stem = instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    let stem = format!("{stem}_{method}");
    let mut rec = Recorder::start("solve");
    let start = Instant::now();

    let summary = if method == Method::Cacao {
        let init = match cfg.solve.seed {
            Some(seed) => initial_state(n, &random_tilts(n, seed, cfg.solve.tilt_amplitude))?,
            None => default_initial_state(n),
        };
        let traj = cacao::run(&model, &init, &cfg.cacao)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let rounded = round_solution(&traj.final_state);
        let path = out_dir.join(format!("{stem}_trajectory.csv"));
        io::write_csv_file(&path, |w| io::write_trajectory_csv(w, &traj))?;
        rec.artifact(&path);
        rec.warn(traj.warnings.iter().cloned());
        RunSummary {
            method: method.to_string(),
            n_vertices: n,
            final_energy: traj.final_energy(),
            rounded_energy: Some(model.energy(&rounded)?),
            rounded_bits: Some(
                rounded
                    .bits()
                    .iter()
                    .map(|b| char::from(b'0' + b))
                    .collect(),
            ),
            converged_at: traj.converged_at,
            steps: traj.steps,
            wall_seconds,
            config: serde_json::to_value(&cfg)?,
            seeds: seeds.clone(),
            warnings: traj.warnings,
        }
    } else {
        let driver = DriverSpec::for_model(&model);
        let run = match method {
            Method::Qa => qsim::qa_run,
            Method::Falqon => qsim::falqon_run,
            _ => qsim::cdfqa_run,
        };
        let trace = run(&model, &driver, cfg.solve.t, &cfg.quantum)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let path = out_dir.join(format!("{stem}_trace.csv"));
        io::write_csv_file(&path, |w| io::write_control_trace_csv(w, &trace))?;
        rec.artifact(&path);
        if cfg.solve.save_state {
            if let Some(psi) = &trace.final_state {
                let bin = out_dir.join(format!("{stem}_state.bin"));
                let sidecar = io::write_statevector(&bin, psi)?;
                rec.artifact(bin);
                rec.artifact(sidecar);
            }
        }
        RunSummary {
            method: method.to_string(),
            n_vertices: n,
            final_energy: trace.final_energy(),
            rounded_energy: None,
            rounded_bits: None,
            converged_at: None,
            steps: trace.times.len() - 1,
            wall_seconds,
            config: serde_json::to_value(&cfg)?,
            seeds: seeds.clone(),
            warnings: Vec::new(),
        }
    };

    let path = out_dir.join(format!("{stem}_summary.json"));
    write_json(&path, &summary)?;
    rec.artifact(&path);
    let results = json!({
        "final_energy": summary.final_energy,
        "rounded_energy": summary.rounded_energy,
    });
    rec.finish(out_dir, &stem, &cfg, seeds, results)?;
    match summary.rounded_energy {
        Some(r) => println!("{method}: E_P = {} (rounded {r})", summary.final_energy),
        None => println!("{method}: E_P = {}", summary.final_energy),
    }
    Ok(())
}

fn resolve_seeds(args: &SeedArgs, current: &[u64]) -> anyhow::Result<Vec<u64>> {
    match (args.instances, &args.seeds) {
        (Some(n), Some(s)) if s.len() != n => bail!(UsageError(format!(
            "--instances {n} does not match {} seeds",
            s.len()
        ))),
        (_, Some(s)) => Ok(s.clone()),
        (Some(n), None) => Ok((1..=n as u64).collect()),
        (None, None) => Ok(current.to_vec()),
    }
}

fn experiment(cmd: ExperimentCmd, file: &FileConfig, out_dir: &Path) -> anyhow::Result<()> {
    ensure_dir(out_dir)?;
    match cmd {
        ExperimentCmd::TwoSpin { h2, t, dt } => {
            let mut cfg = file.apply(TwoSpinConfig::default())?;
            cfg.two_spin.h2 = h2.unwrap_or(cfg.two_spin.h2);
            cfg.cacao.t_max = t.unwrap_or(cfg.cacao.t_max);
            cfg.cacao.dt = dt.unwrap_or(cfg.cacao.dt);
            let mut rec = Recorder::start("experiment two-spin");
            let mut results = Vec::new();
            for &h2 in &cfg.two_spin.h2 {
                let traj = two_spin_trajectory(h2, &cfg.cacao)?;
                let path = out_dir.join(format!("two_spin_h2_{h2}.csv"));
                io::write_csv_file(&path, |w| io::write_trajectory_csv(w, &traj))?;
                rec.artifact(&path);
                rec.warn(traj.warnings.iter().cloned());
                // first recorded time with both spins past 0.99
                let t_conv = traj.spins.as_ref().and_then(|s| {
                    s.iter()
                        .position(|mz| mz.iter().all(|&z| z > 0.99))
                        .map(|k| traj.times[k])
                });
                println!(
                    "h2 = {h2}: gap {}, both mz > 0.99 at {t_conv:?}",
                    two_spin_gap(h2)
                );
                results.push(json!({
                    "h2": h2,
                    "gap": two_spin_gap(h2),
                    "t_conv": t_conv,
                    "final_energy": traj.final_energy(),
                }));
            }
            rec.finish(out_dir, "two_spin", &cfg, Vec::new(), json!(results))?;
        }
        ExperimentCmd::GapScan {
            threshold,
            min_gap,
            max_gap,
            count,
            h2,
            t,
            dt,
        } => {
            let mut cfg = file.apply(GapScanConfig::default())?;
            let g = &mut cfg.gap_scan;
            g.threshold = threshold.unwrap_or(g.threshold);
            g.min_gap = min_gap.unwrap_or(g.min_gap);
            g.max_gap = max_gap.unwrap_or(g.max_gap);
            g.count = count.unwrap_or(g.count);
            g.h2 = h2.or(g.h2.take());
            cfg.cacao.t_max = t.unwrap_or(cfg.cacao.t_max);
            cfg.cacao.dt = dt.unwrap_or(cfg.cacao.dt);
            let h2_values = match &g.h2 {
                Some(v) => v.clone(),
                None => log_spaced(g.min_gap, g.max_gap, g.count)
                    .into_iter()
                    .map(two_spin_h2_for_gap)
                    .collect(),
            };
            let mut rec = Recorder::start("experiment gap-scan");
            let res = gap_scan(&h2_values, cfg.gap_scan.threshold, &cfg.cacao)?;
            let path = out_dir.join("gap_scan.csv");
            io::write_csv_file(&path, |w| io::write_gap_scan_csv(w, &res))?;
            rec.artifact(&path);
            let excluded: Vec<f64> = res.excluded().map(|p| p.gap).collect();
            rec.warn(
                excluded.iter().map(|g| {
                    format!("gap {g} did not converge within t_max; excluded from the fit")
                }),
            );
            match &res.fit {
                Some(fit) => println!(
                    "T = exp({:.4}) dE^{:.4} over {} points (rms {:.3e})",
                    fit.log_prefactor,
                    fit.exponent,
                    res.gaps.len(),
                    fit.rms
                ),
                None => println!("fewer than two converged points; no fit"),
            }
            let results = json!({ "fit": res.fit, "excluded_gaps": excluded });
            rec.finish(out_dir, "gap_scan", &cfg, Vec::new(), results)?;
        }
        ExperimentCmd::BenchmarkL3 {
            seeds,
            times,
            methods,
            dt,
        } => {
            let mut cfg = file.apply(BenchmarkFileConfig::default())?;
            let b = &mut cfg.benchmark;
            b.seeds = resolve_seeds(&seeds, &b.seeds)?;
            b.operation_times = times.unwrap_or(std::mem::take(&mut b.operation_times));
            b.methods = methods.unwrap_or(std::mem::take(&mut b.methods));
            if let Some(dt) = dt {
                b.cacao.dt = dt;
                b.quantum.dt = dt;
            }
            let mut rec = Recorder::start("experiment benchmark-l3");
            let res = benchmark_l3(&cfg.benchmark)?;
            let path = out_dir.join("benchmark_l3.csv");
            io::write_csv_file(&path, |w| io::write_benchmark_csv(w, &res))?;
            rec.artifact(&path);
            let last = res.operation_times.len() - 1;
            for m in &res.per_method {
                println!(
                    "{:>6}  T = {}: mean E_P {:.6} (std {:.6})",
                    m.method, res.operation_times[last], m.mean[last], m.std[last]
                );
            }
            let results = json!({
                "n_instances": res.n_instances,
                "fingerprints": res.fingerprints,
                "per_method": res.per_method,
            });
            let seeds = cfg.benchmark.seeds.clone();
            rec.finish(out_dir, "benchmark_l3", &cfg, seeds, results)?;
        }
        ExperimentCmd::Scaling { l, seeds, t, dt } => {
            let mut cfg = file.apply(ScalingFileConfig::default())?;
            let s = &mut cfg.scaling;
            s.l_values = l.unwrap_or(std::mem::take(&mut s.l_values));
            s.seeds = resolve_seeds(&seeds, &s.seeds)?;
            s.cacao.t_max = t.unwrap_or(s.cacao.t_max);
            s.cacao.dt = dt.unwrap_or(s.cacao.dt);
            let mut rec = Recorder::start("experiment scaling");
            let res = scaling_study(&cfg.scaling)?;
            let path = out_dir.join("scaling.csv");
            io::write_csv_file(&path, |w| io::write_scaling_csv(w, &res))?;
            rec.artifact(&path);
            let sizes: Vec<_> = res
                .per_size
                .iter()
                .map(|p| {
                    println!(
                        "L = {:>3}: E_P/N {:.6} (std {:.6}), {:.3e} s/step",
                        p.l, p.final_mean, p.final_std, p.seconds_per_step
                    );
                    json!({
                        "L": p.l,
                        "N": p.n,
                        "final_mean": p.final_mean,
                        "final_std": p.final_std,
                        "seconds_per_step": p.seconds_per_step,
                        "wall_seconds": p.wall_seconds,
                        "settling_time": p.settling_time,
                    })
                })
                .collect();
            let seeds = cfg.scaling.seeds.clone();
            rec.finish(out_dir, "scaling", &cfg, seeds, json!(sizes))?;
        }
    }
    Ok(())
}
