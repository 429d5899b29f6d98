//! Versioned JSON file formats, CSV writers, and the binary statevector dump.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cacao::Trajectory;
use crate::error::{Error, Result};
use crate::experiments::{BenchmarkResult, GapScanResult, ScalingResult};
use crate::model::{Clause, ClauseInstance, IsingModel};
use crate::qsim::{ControlTrace, StateVector};

pub const INSTANCE_FORMAT: &str = "cacao-instance-v1";
pub const ISING_FORMAT: &str = "cacao-ising-v1";
pub const STATEVECTOR_FORMAT: &str = "cacao-statevector-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LatticeInfo {
    #[serde(rename = "L")]
    l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    n_vertices: usize,
    lattice: LatticeInfo,
    seed: Option<u64>,
    clauses: Vec<(usize, usize, u8, u8)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IsingFile {
    format: String,
    n_vertices: usize,
    offset: f64,
    fields: Vec<f64>,
    couplings: Vec<(usize, usize, f64)>,
}

fn check_format(found: &str, expected: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::Format {
            found: found.to_string(),
            expected,
        });
    }
    Ok(())
}

pub fn instance_to_json(instance: &ClauseInstance) -> Result<String> {
    let file = InstanceFile {
        format: INSTANCE_FORMAT.to_string(),
        n_vertices: instance.n_vertices(),
        lattice: LatticeInfo {
            l: instance.lattice,
        },
        seed: instance.seed,
        clauses: instance
            .clauses()
            .iter()
            .map(|c| (c.i, c.j, c.wi, c.wj))
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn instance_from_json(text: &str) -> Result<ClauseInstance> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    check_format(probe["format"].as_str().unwrap_or(""), INSTANCE_FORMAT)?;
    let file: InstanceFile = serde_json::from_value(probe)?;
    let clauses = file
        .clauses
        .into_iter()
        .map(|(i, j, wi, wj)| Clause { i, j, wi, wj })
        .collect();
    let mut instance = ClauseInstance::new(file.n_vertices, clauses)?;
    instance.lattice = file.lattice.l;
    instance.seed = file.seed;
    Ok(instance)
}

pub fn ising_to_json(model: &IsingModel) -> Result<String> {
    let file = IsingFile {
        format: ISING_FORMAT.to_string(),
        n_vertices: model.n_vertices(),
        offset: model.offset(),
        fields: model.fields().to_vec(),
        couplings: model
            .couplings()
            .iter()
            .map(|c| (c.i, c.j, c.value))
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn ising_from_json(text: &str) -> Result<IsingModel> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    check_format(probe["format"].as_str().unwrap_or(""), ISING_FORMAT)?;
    let file: IsingFile = serde_json::from_value(probe)?;
    IsingModel::new(file.n_vertices, file.fields, file.couplings, file.offset)
}

/// Reads either an instance file (expanded on load) or an Ising export.
pub fn read_model(path: &Path) -> Result<IsingModel> {
    let text = read_with_context(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    match probe["format"].as_str().unwrap_or("") {
        ISING_FORMAT => ising_from_json(&text),
        _ => crate::model::expand_clauses(&instance_from_json(&text)?),
    }
}

pub fn read_instance(path: &Path) -> Result<ClauseInstance> {
    instance_from_json(&read_with_context(path)?)
}

fn read_with_context(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(e, path))
}

pub(crate) fn with_path(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| with_path(e, path))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| with_path(e, path))?,
    ))
}

/// `t,E_P[,alpha_0..][,mz_0..]`; `f64` `Display` output is shortest round-trip.
pub fn write_trajectory_csv<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.final_state.len();
    write!(w, "t,E_P")?;
    if traj.controls.is_some() {
        for i in 0..n {
            write!(w, ",alpha_{i}")?;
        }
    }
    if traj.spins.is_some() {
        for i in 0..n {
            write!(w, ",mz_{i}")?;
        }
    }
    writeln!(w)?;
    for k in 0..traj.times.len() {
        write!(w, "{},{}", traj.times[k], traj.energies[k])?;
        for extra in [&traj.controls, &traj.spins].into_iter().flatten() {
            for v in &extra[k] {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}

/// `t,E_P,beta[,gamma][,lambda]`.
pub fn write_control_trace_csv<W: Write>(mut w: W, trace: &ControlTrace) -> io::Result<()> {
    write!(w, "t,E_P,beta")?;
    if trace.gamma.is_some() {
        write!(w, ",gamma")?;
    }
    if trace.lambda.is_some() {
        write!(w, ",lambda")?;
    }
    writeln!(w)?;
    for k in 0..trace.times.len() {
        write!(
            w,
            "{},{},{}",
            trace.times[k], trace.energies[k], trace.beta[k]
        )?;
        for col in [&trace.gamma, &trace.lambda].into_iter().flatten() {
            write!(w, ",{}", col[k])?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_gap_scan_csv<W: Write>(mut w: W, res: &GapScanResult) -> io::Result<()> {
    writeln!(w, "dE,T_conv,converged")?;
    for p in &res.points {
        match p.t_conv {
            Some(t) => writeln!(w, "{},{},true", p.gap, t)?,
            None => writeln!(w, "{},,false", p.gap)?,
        }
    }
    w.flush()
}

pub fn write_benchmark_csv<W: Write>(mut w: W, res: &BenchmarkResult) -> io::Result<()> {
    writeln!(w, "method,T,mean_EP,std_EP,n")?;
    for stats in &res.per_method {
        for (k, t) in res.operation_times.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                stats.method, t, stats.mean[k], stats.std[k], res.n_instances
            )?;
        }
    }
    w.flush()
}

pub fn write_scaling_csv<W: Write>(mut w: W, res: &ScalingResult) -> io::Result<()> {
    writeln!(w, "L,t,mean_EP_over_N,std_EP_over_N")?;
    for size in &res.per_size {
        for k in 0..size.times.len() {
            writeln!(
                w,
                "{},{},{},{}",
                size.l, size.times[k], size.mean[k], size.std[k]
            )?;
        }
    }
    w.flush()
}

/// Writes any CSV producer to `path`, attaching the path to I/O errors.
pub fn write_csv_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| with_path(e, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVectorSidecar {
    pub format: String,
    pub n_qubits: usize,
    pub dim: usize,
    pub layout: String,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    let mut name = bin.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Little-endian interleaved `(re, im)` `f64` pairs plus a `<path>.json` sidecar.
/// Returns the sidecar path.
pub fn write_statevector(bin: &Path, psi: &StateVector) -> Result<PathBuf> {
    let mut w = create(bin)?;
    for a in psi.amplitudes() {
        w.write_all(&a.re.to_le_bytes())
            .and_then(|_| w.write_all(&a.im.to_le_bytes()))
            .map_err(|e| with_path(e, bin))?;
    }
    w.flush().map_err(|e| with_path(e, bin))?;
    let sidecar = StateVectorSidecar {
        format: STATEVECTOR_FORMAT.to_string(),
        n_qubits: psi.n_qubits(),
        dim: psi.dim(),
        layout: "f64-le interleaved re,im".to_string(),
    };
    let path = sidecar_path(bin);
    write_text(&path, &serde_json::to_string_pretty(&sidecar)?)?;
    Ok(path)
}

pub fn read_statevector(bin: &Path) -> Result<StateVector> {
    let sidecar: StateVectorSidecar =
        serde_json::from_str(&read_with_context(&sidecar_path(bin))?)?;
    check_format(&sidecar.format, STATEVECTOR_FORMAT)?;
    let bytes = fs::read(bin).map_err(|e| with_path(e, bin))?;
    if bytes.len() != sidecar.dim * 16 {
        return Err(Error::invalid(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            sidecar.dim * 16,
            bytes.len()
        )));
    }
    let amps = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    StateVector::from_amplitudes(sidecar.n_qubits, amps)
}

/// Per-run summary written next to a trajectory or control trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub n_vertices: usize,
    pub final_energy: f64,
    /// Energy of the sign-rounded configuration (feedback dynamics only).
    pub rounded_energy: Option<f64>,
    pub rounded_bits: Option<String>,
    pub converged_at: Option<f64>,
    pub steps: usize,
    pub wall_seconds: f64,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cacao::{self, CacaoConfig};
    use crate::model::{expand_clauses, generate_square_lattice_instance};
    use proptest::prelude::*;

    #[test]
    fn instance_file_layout() {
        let inst = generate_square_lattice_instance(3, 7).unwrap();
        let json = instance_to_json(&inst).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["format"], "cacao-instance-v1");
        assert_eq!(v["n_vertices"], 9);
        assert_eq!(v["lattice"]["L"], 3);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["clauses"].as_array().unwrap().len(), 18);
        assert_eq!(v["clauses"][0].as_array().unwrap().len(), 4);
        assert_eq!(instance_from_json(&json).unwrap(), inst);
    }

    #[test]
    fn hand_built_instance_has_null_metadata() {
        let inst = ClauseInstance::new(
            2,
            vec![Clause {
                i: 0,
                j: 1,
                wi: 1,
                wj: 0,
            }],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&instance_to_json(&inst).unwrap()).unwrap();
        assert!(v["lattice"]["L"].is_null());
        assert!(v["seed"].is_null());
    }

    #[test]
    fn unknown_versions_rejected() {
        let inst = generate_square_lattice_instance(2, 1).unwrap();
        let json = instance_to_json(&inst)
            .unwrap()
            .replace("cacao-instance-v1", "cacao-instance-v2");
        assert!(matches!(
            instance_from_json(&json),
            Err(Error::Format { .. })
        ));
        let model = expand_clauses(&inst).unwrap();
        let json = ising_to_json(&model).unwrap().replace("v1", "v9");
        assert!(matches!(ising_from_json(&json), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_clause_in_file_rejected() {
        let text = r#"{"format":"cacao-instance-v1","n_vertices":2,"lattice":{"L":null},"seed":null,"clauses":[[0,5,1,1]]}"#;
        assert!(instance_from_json(text).is_err());
    }

    proptest! {
        #[test]
        fn ising_export_round_trips_exactly(
            fields in proptest::collection::vec(-1e3f64..1e3, 3),
            j in -1e3f64..1e3,
            offset in -1e3f64..1e3,
        ) {
            let model = IsingModel::new(3, fields, [(0, 2, j), (1, 2, j / 3.0)], offset).unwrap();
            let back = ising_from_json(&ising_to_json(&model).unwrap()).unwrap();
            prop_assert_eq!(back, model);
        }
    }

    #[test]
    fn trajectory_csv_columns() {
        let m = IsingModel::new(2, vec![-1.0, 0.9], [(0, 1, -1.0)], 0.0).unwrap();
        let cfg = CacaoConfig {
            record_controls: true,
            ..CacaoConfig::with_horizon(0.5)
        };
        let traj = cacao::run(&m, &cacao::default_initial_state(2), &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,E_P,alpha_0,alpha_1");
        assert_eq!(lines.next().unwrap(), "0,0,-2,1.8");
        assert_eq!(text.lines().count(), traj.times.len() + 1);
    }

    #[test]
    fn control_trace_csv_columns() {
        let m = expand_clauses(&generate_square_lattice_instance(2, 3).unwrap()).unwrap();
        let d = crate::qsim::DriverSpec::for_model(&m);
        let cfg = crate::qsim::QuantumConfig::default();
        let mut buf = Vec::new();
        write_control_trace_csv(
            &mut buf,
            &crate::qsim::cdfqa_run(&m, &d, 0.05, &cfg).unwrap(),
        )
        .unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,E_P,beta,gamma\n"));
        let mut buf = Vec::new();
        write_control_trace_csv(&mut buf, &crate::qsim::qa_run(&m, &d, 0.05, &cfg).unwrap())
            .unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,E_P,beta,lambda\n"));
    }

    #[test]
    fn statevector_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("psi.bin");
        let psi = StateVector::product_from_bloch(&[0.6, 1.0], &[0.8, 0.0]).unwrap();
        let sidecar = write_statevector(&bin, &psi).unwrap();
        assert_eq!(sidecar, dir.path().join("psi.bin.json"));
        assert_eq!(fs::metadata(&bin).unwrap().len(), 4 * 16);
        assert_eq!(read_statevector(&bin).unwrap(), psi);
    }

    #[test]
    fn read_errors_name_the_path() {
        let err = read_model(Path::new("/nonexistent/inst.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/inst.json"));
    }
}
