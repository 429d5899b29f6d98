//! Exact statevector baselines: linear-schedule annealing and the two
//! Lyapunov-feedback schemes (transverse-field feedback, and the same with an
//! additional feedback-controlled local Pauli-Y term).
//!
//! Basis index bit `i` is qubit `i`, with bit 0 the spin-up Z eigenstate.
//! The driver is `V = -sum_i gamma_i X_i` and the local term is
//! `V_lcd = sum_i s_i Y_i` with `Y|up> = i|down>`, `Y|down> = -i|up>`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cacao::SpinState;
use crate::error::{Error, Result};
use crate::model::IsingModel;

pub const DEFAULT_MAX_QUBITS: usize = 20;

const I: Complex64 = Complex64::new(0.0, 1.0);
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(n_qubits: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = dimension(n_qubits)?;
        if amplitudes.len() != dim {
            return Err(Error::length_mismatch("amplitudes", dim, amplitudes.len()));
        }
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        let dim = dimension(n_qubits)?;
        if index >= dim {
            return Err(Error::invalid(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    /// `|+>^N`, the ground state of the transverse-field driver.
    pub fn plus_state(n_qubits: usize) -> Result<Self> {
        let dim = dimension(n_qubits)?;
        let a = Complex64::new((dim as f64).recip().sqrt(), 0.0);
        Ok(Self {
            n_qubits,
            amplitudes: vec![a; dim],
        })
    }

    /// Product state whose qubit `i` has Bloch vector `(mx_i, 0, mz_i)`.
    pub fn product_from_bloch(mx: &[f64], mz: &[f64]) -> Result<Self> {
        if mx.len() != mz.len() {
            return Err(Error::length_mismatch("mz", mx.len(), mz.len()));
        }
        let n = mx.len();
        let dim = dimension(n)?;
        // qubit i: cos(theta/2)|up> + sin(theta/2)|down>, theta = atan2(mx, mz)
        let factors: Vec<(f64, f64)> = mx
            .iter()
            .zip(mz)
            .map(|(&x, &z)| {
                let half = 0.5 * x.atan2(z);
                (half.cos(), half.sin())
            })
            .collect();
        let amplitudes = (0..dim)
            .map(|k| {
                let re = factors
                    .iter()
                    .enumerate()
                    .map(|(i, &(up, down))| if (k >> i) & 1 == 0 { up } else { down })
                    .product::<f64>();
                Complex64::new(re, 0.0)
            })
            .collect();
        Ok(Self {
            n_qubits: n,
            amplitudes,
        })
    }

    pub fn from_spin_state(state: &SpinState) -> Result<Self> {
        Self::product_from_bloch(&state.mx, &state.mz)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.check_same(other.n_qubits)?;
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn population(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    /// Single-qubit expectations `(<X_q>, <Y_q>, <Z_q>)`.
    pub fn bloch(&self, q: usize) -> Result<[f64; 3]> {
        if q >= self.n_qubits {
            return Err(Error::invalid(format!("qubit {q} out of range")));
        }
        let mask = 1usize << q;
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for k in (0..self.dim()).filter(|k| k & mask == 0) {
            let up = self.amplitudes[k];
            let down = self.amplitudes[k | mask];
            let cross = up.conj() * down;
            x += 2.0 * cross.re;
            y += 2.0 * cross.im;
            z += up.norm_sqr() - down.norm_sqr();
        }
        Ok([x, y, z])
    }

    fn check_same(&self, n_qubits: usize) -> Result<()> {
        if self.n_qubits != n_qubits {
            return Err(Error::invalid(format!(
                "qubit count mismatch: state has {}, operator acts on {n_qubits}",
                self.n_qubits
            )));
        }
        Ok(())
    }
}

fn dimension(n_qubits: usize) -> Result<usize> {
    if n_qubits == 0 || n_qubits > 30 {
        return Err(Error::Capacity(format!(
            "statevectors support 1..=30 qubits, got {n_qubits}"
        )));
    }
    Ok(1usize << n_qubits)
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Diagonal of the problem Hamiltonian in the computational basis, offset included.
pub fn problem_diagonal(model: &IsingModel) -> Result<Vec<f64>> {
    let n = model.n_vertices();
    let dim = dimension(n)?;
    let energy = |k: usize| {
        let z = |i: usize| if (k >> i) & 1 == 0 { 1.0 } else { -1.0 };
        let pair: f64 = model
            .couplings()
            .iter()
            .map(|c| c.value * z(c.i) * z(c.j))
            .sum();
        let single: f64 = model
            .fields()
            .iter()
            .enumerate()
            .map(|(i, h)| h * z(i))
            .sum();
        pair + single + model.offset()
    };
    Ok(if dim >= PAR_THRESHOLD {
        (0..dim).into_par_iter().map(energy).collect()
    } else {
        (0..dim).map(energy).collect()
    })
}

/// Coefficients of `H = p * H_P + x * V + y * V_lcd`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coefficients {
    p: f64,
    x: f64,
    y: f64,
}

/// Precomputed operator data for one problem and driver.
struct Operators {
    diag: Vec<f64>,
    gammas: Vec<f64>,
    ycoef: Vec<f64>,
    diag_max: f64,
}

impl Operators {
    fn new(model: &IsingModel, gammas: &[f64], ycoef: &[f64]) -> Result<Self> {
        let diag = problem_diagonal(model)?;
        let diag_max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        Ok(Self {
            diag,
            gammas: gammas.to_vec(),
            ycoef: ycoef.to_vec(),
            diag_max,
        })
    }

    /// Spectral-norm bound: the single-qubit parts commute, so their norms add exactly.
    fn norm_bound(&self, c: Coefficients) -> f64 {
        let local: f64 = self
            .gammas
            .iter()
            .zip(&self.ycoef)
            .map(|(g, s)| (c.x * g).hypot(c.y * s))
            .sum();
        c.p.abs() * self.diag_max + local
    }

    /// `out = H psi`.
    fn apply(&self, c: Coefficients, psi: &[Complex64], out: &mut [Complex64]) {
        // Off-diagonal weight of qubit i, indexed by the bit of the output row:
        // -x gamma_i -/+ i y s_i.
        let local: Vec<[Complex64; 2]> = self
            .gammas
            .iter()
            .zip(&self.ycoef)
            .map(|(&g, &s)| {
                let re = -c.x * g;
                let im = c.y * s;
                [Complex64::new(re, -im), Complex64::new(re, im)]
            })
            .collect();
        let active: Vec<(usize, [Complex64; 2])> = local
            .into_iter()
            .enumerate()
            .filter(|(_, w)| w[0] != Complex64::new(0.0, 0.0) || w[1] != Complex64::new(0.0, 0.0))
            .collect();
        let row = |k: usize| {
            let mut acc = psi[k] * (c.p * self.diag[k]);
            for &(i, w) in &active {
                acc += psi[k ^ (1 << i)] * w[(k >> i) & 1];
            }
            acc
        };
        if psi.len() >= PAR_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(k, o)| *o = row(k));
        } else {
            for (k, o) in out.iter_mut().enumerate() {
                *o = row(k);
            }
        }
    }

    fn energy(&self, psi: &[Complex64]) -> f64 {
        psi.iter()
            .zip(&self.diag)
            .map(|(a, d)| d * a.norm_sqr())
            .sum()
    }
}

/// Substepped RK4 for `d psi / dt = -i H(t) psi`.
struct Integrator {
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
    max_phase: f64,
}

impl Integrator {
    fn new(dim: usize, max_phase: f64) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); dim]),
            tmp: vec![Complex64::new(0.0, 0.0); dim],
            max_phase,
        }
    }

    fn substeps(&self, bound: f64, dt: f64) -> usize {
        ((bound * dt / self.max_phase).ceil() as usize).max(1)
    }

    /// Integrates over `[t, t + dt]` with time-dependent coefficients; returns the substep count.
    fn advance(
        &mut self,
        ops: &Operators,
        psi: &mut [Complex64],
        t: f64,
        dt: f64,
        bound: f64,
        coefficients: impl Fn(f64) -> Coefficients,
    ) -> usize {
        let m = self.substeps(bound, dt);
        let h = dt / m as f64;
        for s in 0..m {
            let t0 = t + s as f64 * h;
            self.rk4(
                ops,
                psi,
                h,
                [
                    coefficients(t0),
                    coefficients(t0 + 0.5 * h),
                    coefficients(t0 + h),
                ],
            );
        }
        m
    }

    fn rk4(&mut self, ops: &Operators, psi: &mut [Complex64], h: f64, c: [Coefficients; 3]) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let minus_i = -I;

        ops.apply(c[0], psi, k1);
        k1.iter_mut().for_each(|v| *v *= minus_i);
        for ((t, p), k) in tmp.iter_mut().zip(psi.iter()).zip(k1.iter()) {
            *t = p + k * (0.5 * h);
        }
        ops.apply(c[1], tmp, k2);
        k2.iter_mut().for_each(|v| *v *= minus_i);
        for ((t, p), k) in tmp.iter_mut().zip(psi.iter()).zip(k2.iter()) {
            *t = p + k * (0.5 * h);
        }
        ops.apply(c[1], tmp, k3);
        k3.iter_mut().for_each(|v| *v *= minus_i);
        for ((t, p), k) in tmp.iter_mut().zip(psi.iter()).zip(k3.iter()) {
            *t = p + k * h;
        }
        ops.apply(c[2], tmp, k4);
        k4.iter_mut().for_each(|v| *v *= minus_i);
        for (i, p) in psi.iter_mut().enumerate() {
            *p += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
}

/// `H_P |psi>`.
pub fn apply_hp(model: &IsingModel, psi: &StateVector) -> Result<StateVector> {
    psi.check_same(model.n_vertices())?;
    let diag = problem_diagonal(model)?;
    Ok(StateVector {
        n_qubits: psi.n_qubits,
        amplitudes: psi
            .amplitudes
            .iter()
            .zip(&diag)
            .map(|(a, d)| a * d)
            .collect(),
    })
}

/// `-sum_i gamma_i X_i |psi>`.
pub fn apply_xsum(gammas: &[f64], psi: &StateVector) -> Result<StateVector> {
    apply_local(
        psi,
        gammas,
        Coefficients {
            p: 0.0,
            x: 1.0,
            y: 0.0,
        },
    )
}

/// `sum_i s_i Y_i |psi>` for arbitrary real coefficients `s_i`.
pub fn apply_ysum(coefficients: &[f64], psi: &StateVector) -> Result<StateVector> {
    apply_local(
        psi,
        coefficients,
        Coefficients {
            p: 0.0,
            x: 0.0,
            y: 1.0,
        },
    )
}

fn apply_local(psi: &StateVector, coef: &[f64], c: Coefficients) -> Result<StateVector> {
    psi.check_same(coef.len())?;
    let out = (0..psi.dim())
        .map(|k| {
            coef.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (i, &s)| {
                    let partner = psi.amplitudes[k ^ (1 << i)];
                    let y_phase = if (k >> i) & 1 == 1 { I } else { -I };
                    acc + partner * (y_phase * (c.y * s) - c.x * s)
                })
        })
        .collect();
    Ok(StateVector {
        n_qubits: psi.n_qubits,
        amplitudes: out,
    })
}

pub fn expectation_energy(model: &IsingModel, psi: &StateVector) -> Result<f64> {
    psi.check_same(model.n_vertices())?;
    let diag = problem_diagonal(model)?;
    Ok(psi
        .amplitudes
        .iter()
        .zip(&diag)
        .map(|(a, d)| d * a.norm_sqr())
        .sum())
}

/// `i <psi|[H_P, O]|psi>` for a Hermitian `O` given by its action.
///
/// Evaluated as `i (<H_P psi|O psi> - <psi|O H_P psi>)`; the two products are
/// computed independently so a non-Hermitian `O` shows up as an imaginary
/// residue, which is rejected above `1e-10`.
pub fn lyapunov_coefficient<F>(model: &IsingModel, op_apply: F, psi: &StateVector) -> Result<f64>
where
    F: Fn(&StateVector) -> Result<StateVector>,
{
    let hpsi = apply_hp(model, psi)?;
    let opsi = op_apply(psi)?;
    let ohpsi = op_apply(&hpsi)?;
    let value =
        I * (inner(&hpsi.amplitudes, &opsi.amplitudes) - inner(&psi.amplitudes, &ohpsi.amplitudes));
    if value.im.abs() > 1e-10 * value.re.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "commutator expectation has imaginary residue {:e}; operator is not Hermitian",
            value.im
        )));
    }
    Ok(value.re)
}

/// Fast path used inside feedback loops: `-2 Im <H_P psi|O psi>` with `O psi` precomputed.
fn feedback_value(ops: &Operators, psi: &[Complex64], opsi: &[Complex64]) -> f64 {
    let z: Complex64 = psi
        .iter()
        .zip(opsi)
        .zip(&ops.diag)
        .map(|((a, b), d)| a.conj() * b * d)
        .sum();
    -2.0 * z.im
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub gammas: Vec<f64>,
    pub lcd_signs: Vec<i8>,
}

impl DriverSpec {
    pub fn new(gammas: Vec<f64>, lcd_signs: Vec<i8>) -> Result<Self> {
        if gammas.len() != lcd_signs.len() {
            return Err(Error::length_mismatch(
                "lcd_signs",
                gammas.len(),
                lcd_signs.len(),
            ));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::invalid(format!(
                "transverse field {g} must be positive"
            )));
        }
        if let Some(s) = lcd_signs.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(Error::invalid(format!("sign {s} is not -1, 0 or +1")));
        }
        Ok(Self { gammas, lcd_signs })
    }

    /// Unit transverse fields and `s_i = sgn(h_i)` with `sgn(0) = 0`.
    pub fn for_model(model: &IsingModel) -> Self {
        let lcd_signs = model
            .fields()
            .iter()
            .map(|&h| {
                if h > 0.0 {
                    1
                } else if h < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        Self {
            gammas: vec![1.0; model.n_vertices()],
            lcd_signs,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.gammas.len()
    }

    fn ycoef(&self) -> Vec<f64> {
        self.lcd_signs.iter().map(|&s| f64::from(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumConfig {
    /// Feedback / recording interval. Controls are frozen over each interval.
    pub dt: f64,
    pub max_qubits: usize,
    /// Ignore the qubit guard.
    pub force: bool,
    /// Largest `||H|| h` allowed for an RK4 substep.
    pub max_phase: f64,
    /// Abort when `| ||psi||^2 - 1 |` exceeds this.
    pub norm_tolerance: f64,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_qubits: DEFAULT_MAX_QUBITS,
            force: false,
            max_phase: 0.02,
            norm_tolerance: 1e-6,
        }
    }
}

impl QuantumConfig {
    fn validate(&self, n: usize, total_time: f64) -> Result<()> {
        if n > self.max_qubits && !self.force {
            return Err(Error::Capacity(format!(
                "{n} qubits exceeds the statevector guard of {} (2^{n} amplitudes); pass force to override",
                self.max_qubits
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(total_time > 0.0 && total_time.is_finite()) {
            return Err(Error::invalid(format!(
                "evolution time must be positive, got {total_time}"
            )));
        }
        if !(self.max_phase > 0.0) || !(self.norm_tolerance > 0.0) {
            return Err(Error::invalid(
                "max_phase and norm_tolerance must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrace {
    pub times: Vec<f64>,
    /// Coefficient on the driver `V` (for annealing this is `1 - lambda`).
    pub beta: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub energies: Vec<f64>,
    #[serde(skip)]
    pub final_state: Option<StateVector>,
    pub max_norm_drift: f64,
    pub substeps: usize,
}

impl ControlTrace {
    pub fn final_energy(&self) -> f64 {
        *self
            .energies
            .last()
            .expect("trace always holds the initial point")
    }

    fn new(with_gamma: bool, with_lambda: bool) -> Self {
        Self {
            times: Vec::new(),
            beta: Vec::new(),
            gamma: with_gamma.then(Vec::new),
            lambda: with_lambda.then(Vec::new),
            energies: Vec::new(),
            final_state: None,
            max_norm_drift: 0.0,
            substeps: 0,
        }
    }
}

fn steps_for(total_time: f64, dt: f64) -> (usize, f64) {
    let n = (total_time / dt - 1e-9).ceil().max(1.0) as usize;
    (n, total_time / n as f64)
}

fn check_norm(
    psi: &[Complex64],
    t: f64,
    cfg: &QuantumConfig,
    trace: &mut ControlTrace,
) -> Result<()> {
    let drift = (psi.iter().map(|a| a.norm_sqr()).sum::<f64>() - 1.0).abs();
    if !drift.is_finite() || drift > cfg.norm_tolerance {
        return Err(Error::Numerical(format!(
            "norm drift {drift:e} at t = {t} exceeds {:e}; reduce dt or max_phase",
            cfg.norm_tolerance
        )));
    }
    trace.max_norm_drift = trace.max_norm_drift.max(drift);
    Ok(())
}

fn check_driver(model: &IsingModel, driver: &DriverSpec) -> Result<()> {
    if driver.n_qubits() != model.n_vertices() {
        return Err(Error::length_mismatch(
            "driver",
            model.n_vertices(),
            driver.n_qubits(),
        ));
    }
    Ok(())
}

/// Linear-schedule annealing `lambda H_P + (1 - lambda) V`, `lambda = t / T`,
/// from `|+>^N`.
pub fn qa_run(
    model: &IsingModel,
    driver: &DriverSpec,
    total_time: f64,
    cfg: &QuantumConfig,
) -> Result<ControlTrace> {
    let n = model.n_vertices();
    cfg.validate(n, total_time)?;
    check_driver(model, driver)?;
    let ops = Operators::new(model, &driver.gammas, &driver.ycoef())?;
    let mut psi = StateVector::plus_state(n)?.amplitudes;
    let mut integrator = Integrator::new(psi.len(), cfg.max_phase);
    let (n_steps, h) = steps_for(total_time, cfg.dt);
    let schedule = |t: f64| {
        let lambda = (t / total_time).clamp(0.0, 1.0);
        Coefficients {
            p: lambda,
            x: 1.0 - lambda,
            y: 0.0,
        }
    };
    // max over lambda of the interpolated bound is attained at an endpoint
    let bound = ops
        .norm_bound(schedule(0.0))
        .max(ops.norm_bound(schedule(total_time)));

    let mut trace = ControlTrace::new(false, true);
    let record = |trace: &mut ControlTrace, t: f64, psi: &[Complex64]| {
        let c = schedule(t);
        trace.times.push(t);
        trace.beta.push(c.x);
        trace.lambda.as_mut().unwrap().push(c.p);
        trace.energies.push(ops.energy(psi));
    };
    record(&mut trace, 0.0, &psi);
    for k in 0..n_steps {
        let t = k as f64 * h;
        trace.substeps += integrator.advance(&ops, &mut psi, t, h, bound, schedule);
        let t_next = if k + 1 == n_steps {
            total_time
        } else {
            (k + 1) as f64 * h
        };
        check_norm(&psi, t_next, cfg, &mut trace)?;
        record(&mut trace, t_next, &psi);
    }
    trace.final_state = Some(StateVector {
        n_qubits: n,
        amplitudes: psi,
    });
    Ok(trace)
}

/// Feedback on the driver only: `H_P + beta V`.
pub fn falqon_run(
    model: &IsingModel,
    driver: &DriverSpec,
    total_time: f64,
    cfg: &QuantumConfig,
) -> Result<ControlTrace> {
    feedback_run(model, driver, total_time, cfg, false)
}

/// Feedback on the driver and the local Y term: `H_P + beta V + gamma V_lcd`.
pub fn cdfqa_run(
    model: &IsingModel,
    driver: &DriverSpec,
    total_time: f64,
    cfg: &QuantumConfig,
) -> Result<ControlTrace> {
    feedback_run(model, driver, total_time, cfg, true)
}

fn feedback_run(
    model: &IsingModel,
    driver: &DriverSpec,
    total_time: f64,
    cfg: &QuantumConfig,
    with_lcd: bool,
) -> Result<ControlTrace> {
    let n = model.n_vertices();
    cfg.validate(n, total_time)?;
    check_driver(model, driver)?;
    let ycoef = if with_lcd {
        driver.ycoef()
    } else {
        vec![0.0; n]
    };
    let ops = Operators::new(model, &driver.gammas, &ycoef)?;
    let mut psi = StateVector::plus_state(n)?.amplitudes;
    let mut integrator = Integrator::new(psi.len(), cfg.max_phase);
    let mut scratch = vec![Complex64::new(0.0, 0.0); psi.len()];
    let (n_steps, h) = steps_for(total_time, cfg.dt);

    let mut controls = |psi: &[Complex64]| {
        ops.apply(
            Coefficients {
                p: 0.0,
                x: 1.0,
                y: 0.0,
            },
            psi,
            &mut scratch,
        );
        let beta = feedback_value(&ops, psi, &scratch);
        let gamma = if with_lcd {
            ops.apply(
                Coefficients {
                    p: 0.0,
                    x: 0.0,
                    y: 1.0,
                },
                psi,
                &mut scratch,
            );
            feedback_value(&ops, psi, &scratch)
        } else {
            0.0
        };
        (beta, gamma)
    };

    let mut trace = ControlTrace::new(with_lcd, false);
    let record = |trace: &mut ControlTrace, t: f64, psi: &[Complex64], beta: f64, gamma: f64| {
        trace.times.push(t);
        trace.beta.push(beta);
        if let Some(g) = trace.gamma.as_mut() {
            g.push(gamma);
        }
        trace.energies.push(ops.energy(psi));
    };

    let (mut beta, mut gamma) = controls(&psi);
    record(&mut trace, 0.0, &psi, beta, gamma);
    for k in 0..n_steps {
        let c = Coefficients {
            p: 1.0,
            x: beta,
            y: gamma,
        };
        let bound = ops.norm_bound(c);
        trace.substeps += integrator.advance(&ops, &mut psi, k as f64 * h, h, bound, |_| c);
        let t_next = if k + 1 == n_steps {
            total_time
        } else {
            (k + 1) as f64 * h
        };
        check_norm(&psi, t_next, cfg, &mut trace)?;
        (beta, gamma) = controls(&psi);
        record(&mut trace, t_next, &psi, beta, gamma);
    }
    trace.final_state = Some(StateVector {
        n_qubits: n,
        amplitudes: psi,
    });
    Ok(trace)
}

/// Evolves `psi` for `duration` under `sum_i c_i Y_i` with fixed real coefficients.
pub fn evolve_local_y(
    psi: &mut StateVector,
    coefficients: &[f64],
    duration: f64,
    max_phase: f64,
) -> Result<()> {
    psi.check_same(coefficients.len())?;
    let n = psi.n_qubits;
    let ops = Operators {
        diag: vec![0.0; psi.dim()],
        gammas: vec![0.0; n],
        ycoef: coefficients.to_vec(),
        diag_max: 0.0,
    };
    let c = Coefficients {
        p: 0.0,
        x: 0.0,
        y: 1.0,
    };
    let mut integrator = Integrator::new(psi.dim(), max_phase);
    integrator.advance(
        &ops,
        &mut psi.amplitudes,
        0.0,
        duration,
        ops.norm_bound(c),
        |_| c,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expand_clauses, generate_square_lattice_instance, SpinConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_spin(h2: f64) -> IsingModel {
        IsingModel::new(2, vec![-1.0, h2], [(0, 1, -1.0)], 0.0).unwrap()
    }

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amps: Vec<Complex64> = (0..1 << n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        StateVector::from_amplitudes(n, amps).unwrap()
    }

    fn random_model(n: usize, seed: u64) -> IsingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, rng.gen_range(-1.0..1.0)))
            .collect();
        IsingModel::new(n, fields, edges, rng.gen_range(-1.0..1.0)).unwrap()
    }

    // Dense reference matrices built from Kronecker products.
    type Dense = Vec<Vec<Complex64>>;

    fn kron(a: &Dense, b: &Dense) -> Dense {
        let (ra, rb) = (a.len(), b.len());
        let mut out = vec![vec![c(0.0, 0.0); ra * rb]; ra * rb];
        for i in 0..ra {
            for j in 0..ra {
                for k in 0..rb {
                    for l in 0..rb {
                        out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    /// Single-qubit operator on qubit q of n, with qubit 0 the least significant index bit.
    fn embed(op: &Dense, q: usize, n: usize) -> Dense {
        let id = vec![
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
        ];
        let mut m: Dense = vec![vec![c(1.0, 0.0)]];
        for k in (0..n).rev() {
            m = kron(&m, if k == q { op } else { &id });
        }
        m
    }

    fn matvec(m: &Dense, v: &[Complex64]) -> Vec<Complex64> {
        m.iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn pauli_x() -> Dense {
        vec![
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
        ]
    }

    fn pauli_y() -> Dense {
        vec![
            vec![c(0.0, 0.0), c(0.0, -1.0)],
            vec![c(0.0, 1.0), c(0.0, 0.0)],
        ]
    }

    fn pauli_z() -> Dense {
        vec![
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(-1.0, 0.0)],
        ]
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn operators_match_dense_construction() {
        for n in 1..=4 {
            let model = random_model(n, n as u64);
            let psi = random_state(n, 100 + n as u64);
            let dim = 1 << n;
            let zero = || vec![vec![c(0.0, 0.0); dim]; dim];
            let add = |acc: &mut Dense, m: &Dense, s: f64| {
                for i in 0..dim {
                    for j in 0..dim {
                        acc[i][j] += m[i][j] * s;
                    }
                }
            };
            let mut hp = zero();
            for (i, h) in model.fields().iter().enumerate() {
                add(&mut hp, &embed(&pauli_z(), i, n), *h);
            }
            for cp in model.couplings() {
                let zz = {
                    let zi = embed(&pauli_z(), cp.i, n);
                    let zj = embed(&pauli_z(), cp.j, n);
                    (0..dim)
                        .map(|r| {
                            (0..dim)
                                .map(|col| (0..dim).map(|k| zi[r][k] * zj[k][col]).sum())
                                .collect()
                        })
                        .collect::<Dense>()
                };
                add(&mut hp, &zz, cp.value);
            }
            for d in 0..dim {
                hp[d][d] += model.offset();
            }
            let gammas: Vec<f64> = (0..n).map(|i| 0.5 + i as f64).collect();
            let signs: Vec<f64> = (0..n).map(|i| [1.0, -1.0, 0.0][i % 3]).collect();
            let mut xs = zero();
            let mut ys = zero();
            for q in 0..n {
                add(&mut xs, &embed(&pauli_x(), q, n), -gammas[q]);
                add(&mut ys, &embed(&pauli_y(), q, n), signs[q]);
            }
            let a = psi.amplitudes();
            assert!(
                max_diff(
                    apply_hp(&model, &psi).unwrap().amplitudes(),
                    &matvec(&hp, a)
                ) < 1e-12
            );
            assert!(
                max_diff(
                    apply_xsum(&gammas, &psi).unwrap().amplitudes(),
                    &matvec(&xs, a)
                ) < 1e-12
            );
            assert!(
                max_diff(
                    apply_ysum(&signs, &psi).unwrap().amplitudes(),
                    &matvec(&ys, a)
                ) < 1e-12
            );
        }
    }

    #[test]
    fn hp_on_basis_states() {
        let inst = generate_square_lattice_instance(3, 1).unwrap();
        let m = expand_clauses(&inst).unwrap();
        let up = StateVector::basis(9, 0).unwrap();
        assert!(apply_hp(&m, &up)
            .unwrap()
            .amplitudes()
            .iter()
            .all(|a| a.norm() == 0.0));

        let m2 = two_spin(0.9);
        let ud = SpinConfig::from_bits(&[0, 1]).unwrap().index() as usize;
        let out = apply_hp(&m2, &StateVector::basis(2, ud).unwrap()).unwrap();
        assert!((out.amplitudes()[ud] - c(-0.9, 0.0)).norm() < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![c(0.0, 0.0); 4];
        amps[0] = c(s, 0.0);
        amps[ud] = c(s, 0.0);
        let out = apply_hp(&m2, &StateVector::from_amplitudes(2, amps).unwrap()).unwrap();
        assert!((out.amplitudes()[0] - c(-1.1 * s, 0.0)).norm() < 1e-12);
        assert!((out.amplitudes()[ud] - c(-0.9 * s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn xsum_on_all_up() {
        let out = apply_xsum(&[1.0; 3], &StateVector::basis(3, 0).unwrap()).unwrap();
        for (k, a) in out.amplitudes().iter().enumerate() {
            let expected = if k.count_ones() == 1 { -1.0 } else { 0.0 };
            assert_eq!(*a, c(expected, 0.0));
        }
    }

    #[test]
    fn y_phase_convention() {
        let out = apply_ysum(&[1.0], &StateVector::basis(1, 0).unwrap()).unwrap();
        assert_eq!(out.amplitudes(), &[c(0.0, 0.0), c(0.0, 1.0)]);
        let out = apply_ysum(&[1.0], &StateVector::basis(1, 1).unwrap()).unwrap();
        assert_eq!(out.amplitudes(), &[c(0.0, -1.0), c(0.0, 0.0)]);
    }

    #[test]
    fn x_squared_is_identity() {
        let psi = random_state(1, 5);
        let twice = apply_xsum(&[1.0], &apply_xsum(&[1.0], &psi).unwrap()).unwrap();
        assert!(max_diff(twice.amplitudes(), psi.amplitudes()) < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let psi = random_state(2, 1);
        assert!(apply_xsum(&[1.0; 3], &psi).is_err());
        assert!(apply_hp(&random_model(3, 1), &psi).is_err());
        assert!(StateVector::from_amplitudes(2, vec![c(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn lyapunov_single_qubit() {
        let m = IsingModel::new(1, vec![1.0], [], 0.0).unwrap();
        let plus = StateVector::plus_state(1).unwrap();
        let v = lyapunov_coefficient(&m, |p| apply_ysum(&[1.0], p), &plus).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_on_plus_state() {
        let m = expand_clauses(&generate_square_lattice_instance(3, 4).unwrap()).unwrap();
        let plus = StateVector::plus_state(9).unwrap();
        let beta = lyapunov_coefficient(&m, |p| apply_xsum(&[1.0; 9], p), &plus).unwrap();
        assert!(beta.abs() < 1e-12);
        let driver = DriverSpec::for_model(&m);
        let signs = driver.ycoef();
        let gamma = lyapunov_coefficient(&m, |p| apply_ysum(&signs, p), &plus).unwrap();
        let expected: f64 = m.fields().iter().map(|h| 2.0 * h.abs()).sum();
        assert!((gamma - expected).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_is_real_on_random_states() {
        for seed in 0..10 {
            let m = random_model(4, seed);
            let psi = random_state(4, seed + 50);
            let coef = [0.3, -1.2, 0.7, 1.0];
            lyapunov_coefficient(&m, |p| apply_ysum(&coef, p), &psi).unwrap();
            lyapunov_coefficient(&m, |p| apply_xsum(&coef.map(f64::abs), p), &psi).unwrap();
        }
    }

    #[test]
    fn lyapunov_rejects_non_hermitian_operator() {
        let m = random_model(2, 3);
        let psi = random_state(2, 4);
        // i * X is anti-Hermitian
        let bad = |p: &StateVector| {
            let x = apply_xsum(&[1.0, 1.0], p)?;
            StateVector::from_amplitudes(2, x.amplitudes().iter().map(|a| a * I).collect())
        };
        assert!(lyapunov_coefficient(&m, bad, &psi).is_err());
    }

    #[test]
    fn expectation_values() {
        let m = expand_clauses(&generate_square_lattice_instance(3, 8).unwrap()).unwrap();
        let plus = StateVector::plus_state(9).unwrap();
        assert!((expectation_energy(&m, &plus).unwrap() - m.offset()).abs() < 1e-12);
        let m2 = two_spin(0.9);
        assert!(
            (expectation_energy(&m2, &StateVector::basis(2, 0).unwrap()).unwrap() + 1.1).abs()
                < 1e-12
        );
    }

    #[test]
    fn product_state_bloch_components() {
        let mx = [0.6, -0.8, 1.0];
        let mz = [0.8, 0.6, 0.0];
        let psi = StateVector::product_from_bloch(&mx, &mz).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-14);
        for q in 0..3 {
            let [x, y, z] = psi.bloch(q).unwrap();
            assert!((x - mx[q]).abs() < 1e-14);
            assert!(y.abs() < 1e-14);
            assert!((z - mz[q]).abs() < 1e-14);
        }
    }

    #[test]
    fn driver_signs() {
        let m = IsingModel::new(3, vec![0.5, 0.0, -0.25], [], 0.0).unwrap();
        let d = DriverSpec::for_model(&m);
        assert_eq!(d.lcd_signs, vec![1, 0, -1]);
        assert_eq!(d.gammas, vec![1.0; 3]);
        assert!(DriverSpec::new(vec![0.0], vec![1]).is_err());
        assert!(DriverSpec::new(vec![1.0], vec![2]).is_err());
    }

    #[test]
    fn qa_reaches_ground_state_adiabatically() {
        // the annealing gap closes to ~0.16, so T = 100 is not yet adiabatic (population ~0.82)
        let m = two_spin(0.9);
        let d = DriverSpec::for_model(&m);
        let cfg = QuantumConfig::default();
        let fidelity = |t: f64| {
            qa_run(&m, &d, t, &cfg)
                .unwrap()
                .final_state
                .unwrap()
                .population(0)
        };
        let (f1, f10, f100) = (fidelity(1.0), fidelity(10.0), fidelity(100.0));
        assert!(f1 < f10 && f10 < f100, "{f1} {f10} {f100}");
        assert!((f100 - 0.8176025).abs() < 1e-5, "{f100}");
        assert!(fidelity(1000.0) > 0.99);
    }

    #[test]
    fn qa_instantaneous_limit_keeps_plus_energy() {
        let m = expand_clauses(&generate_square_lattice_instance(3, 2).unwrap()).unwrap();
        let trace = qa_run(
            &m,
            &DriverSpec::for_model(&m),
            1e-9,
            &QuantumConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.times.len(), 2);
        assert!((trace.final_energy() - m.offset()).abs() < 1e-8);
    }

    #[test]
    fn traces_are_consistent() {
        let m = expand_clauses(&generate_square_lattice_instance(2, 2).unwrap()).unwrap();
        let d = DriverSpec::for_model(&m);
        let cfg = QuantumConfig::default();
        for trace in [
            qa_run(&m, &d, 3.0, &cfg).unwrap(),
            falqon_run(&m, &d, 3.0, &cfg).unwrap(),
            cdfqa_run(&m, &d, 3.0, &cfg).unwrap(),
        ] {
            assert_eq!(trace.times.len(), 301);
            assert_eq!(trace.beta.len(), trace.times.len());
            assert_eq!(trace.energies.len(), trace.times.len());
            assert!(trace.times.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(*trace.times.last().unwrap(), 3.0);
        }
    }

    #[test]
    fn falqon_starts_with_zero_beta_and_descends() {
        let m = expand_clauses(&generate_square_lattice_instance(2, 9).unwrap()).unwrap();
        let trace = falqon_run(
            &m,
            &DriverSpec::for_model(&m),
            10.0,
            &QuantumConfig::default(),
        )
        .unwrap();
        assert!(trace.beta[0].abs() < 1e-12);
        assert!(trace.final_energy() < trace.energies[0]);
    }

    #[test]
    fn cdfqa_initial_gamma() {
        let m = expand_clauses(&generate_square_lattice_instance(3, 6).unwrap()).unwrap();
        let trace = cdfqa_run(
            &m,
            &DriverSpec::for_model(&m),
            0.1,
            &QuantumConfig::default(),
        )
        .unwrap();
        let expected: f64 = m.fields().iter().map(|h| 2.0 * h.abs()).sum();
        assert!((trace.gamma.as_ref().unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn null_problem_freezes_feedback() {
        let m = IsingModel::new(3, vec![0.0; 3], [], 0.0).unwrap();
        let trace = falqon_run(
            &m,
            &DriverSpec::for_model(&m),
            2.0,
            &QuantumConfig::default(),
        )
        .unwrap();
        assert!(trace.beta.iter().all(|&b| b == 0.0));
        let plus = StateVector::plus_state(3).unwrap();
        assert!(max_diff(trace.final_state.unwrap().amplitudes(), plus.amplitudes()) < 1e-14);
    }

    #[test]
    fn zero_field_cdfqa_reproduces_falqon() {
        let m = IsingModel::new(
            3,
            vec![0.0; 3],
            [(0, 1, 1.0), (1, 2, -0.5), (0, 2, 0.25)],
            0.0,
        )
        .unwrap();
        let d = DriverSpec::for_model(&m);
        assert!(d.lcd_signs.iter().all(|&s| s == 0));
        let cfg = QuantumConfig::default();
        let a = falqon_run(&m, &d, 5.0, &cfg).unwrap();
        let b = cdfqa_run(&m, &d, 5.0, &cfg).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.energies, b.energies);
        assert!(b.gamma.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn qubit_guard() {
        let m = IsingModel::new(21, vec![0.0; 21], [], 0.0).unwrap();
        let d = DriverSpec::for_model(&m);
        let err = qa_run(&m, &d, 1.0, &QuantumConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn norm_tolerance_aborts() {
        let m = two_spin(0.9);
        let cfg = QuantumConfig {
            max_phase: 2.0,
            dt: 0.5,
            ..Default::default()
        };
        let err = falqon_run(&m, &DriverSpec::for_model(&m), 50.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn local_y_evolution_is_a_rotation() {
        // exp(-i a t Y)|up> = cos(a t)|up> + sin(a t)|down>
        let mut psi = StateVector::basis(1, 0).unwrap();
        evolve_local_y(&mut psi, &[0.7], 0.9, 0.01).unwrap();
        let [x, _, z] = psi.bloch(0).unwrap();
        assert!((z - (2.0 * 0.7 * 0.9f64).cos()).abs() < 1e-9);
        assert!((x - (2.0 * 0.7 * 0.9f64).sin()).abs() < 1e-9);
    }
}
