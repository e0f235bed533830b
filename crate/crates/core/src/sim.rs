//! Time-domain simulation of the closed-loop chain.
//!
//! Vehicle `k` obeys `ẍ_k = u_k + d_k` with
//!
//! ```text
//! u_0 = a2 (x_1 - x_0) + b2 (ẋ_1 - ẋ_0)
//! u_k = a2 (x_{k+1} - x_k) + b2 (ẋ_{k+1} - ẋ_k) + a1 (x_{k-1} - x_k) + b1 (ẋ_{k-1} - ẋ_k)
//! u_N = a1 (x_{N-1} - x_N) + b1 (ẋ_{N-1} - ẋ_N)
//! ```
//!
//! The integrator works on the leader's absolute state plus every other
//! vehicle's offset from the leader. Classical RK4 commutes with this
//! linear change of coordinates, and the spacing errors, which can be
//! many orders of magnitude below the platoon displacement far down the
//! chain, are then differences of small numbers.

use nalgebra::{DMatrix, Schur};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::ChainSize;
use crate::error::{Error, Result};
use crate::tf::ControllerGains;

/// `dt · sqrt(max(a1, a2) + max(b1, b2)²)` may not exceed this.
pub const STEP_GUARD: f64 = 0.1;

/// Default horizon: the slowest error mode decays by this factor after
/// the last disturbance ends.
pub const HORIZON_DECAY: f64 = 1e-4;

pub const MAX_HORIZON: f64 = 1e4;

/// Largest chain accepted by [`spectral_abscissa`].
pub const MAX_EIGEN_N: usize = 2000;

/// Absolute positions (m) and velocities (m/s) of vehicles `0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PlatoonState {
    pub fn at_rest(n: ChainSize) -> Self {
        Self {
            x: vec![0.0; n.get() + 1],
            v: vec![0.0; n.get() + 1],
        }
    }

    /// Spacing errors `e_k = x_{k-1} - x_k`, `k = 1..=N`.
    pub fn spacing_errors(&self) -> Vec<f64> {
        self.x.windows(2).map(|w| w[0] - w[1]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// One step wide, height `amplitude / dt`: unit area per unit amplitude.
    ImpulseApprox,
    Rectangular,
    /// `sin(ω τ)` under a Hann window spanning the duration.
    SineBurst {
        omega: f64,
    },
    /// Linear sweep from `omega_start` to `omega_end` under a Hann window.
    Chirp {
        omega_start: f64,
        omega_end: f64,
    },
}

impl Waveform {
    fn is_smooth(&self) -> bool {
        matches!(self, Waveform::SineBurst { .. } | Waveform::Chirp { .. })
    }
}

/// An acceleration disturbance `d_k(t)` (m/s²) on one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub vehicle: usize,
    pub waveform: Waveform,
    pub amplitude: f64,
    pub start: f64,
    pub duration: f64,
}

impl DisturbanceSpec {
    /// Rectangular pulse of 1 m/s² for 1 s starting at t = 1 s on the leader.
    pub fn default_pulse() -> Self {
        Self {
            vehicle: 0,
            waveform: Waveform::Rectangular,
            amplitude: 1.0,
            start: 1.0,
            duration: 1.0,
        }
    }

    pub fn on_vehicle(mut self, vehicle: usize) -> Self {
        self.vehicle = vehicle;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.amplitude *= factor;
        self
    }

    pub fn validate(&self, n: ChainSize) -> Result<()> {
        if self.vehicle > n.get() {
            return Err(Error::invalid(
                "disturbance.vehicle",
                format!("index {} outside 0..={}", self.vehicle, n.get()),
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(
                "disturbance.duration",
                format!("must be positive, got {}", self.duration),
            ));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("disturbance.amplitude", "must be finite"));
        }
        if !(self.start.is_finite() && self.start >= 0.0) {
            return Err(Error::invalid(
                "disturbance.start",
                format!("must be nonnegative, got {}", self.start),
            ));
        }
        match self.waveform {
            Waveform::SineBurst { omega } if !(omega.is_finite() && omega >= 0.0) => {
                Err(Error::invalid("disturbance.omega", "must be finite and nonnegative"))
            }
            Waveform::Chirp { omega_start, omega_end }
                if !(omega_start.is_finite() && omega_end.is_finite() && omega_start >= 0.0 && omega_end >= 0.0) =>
            {
                Err(Error::invalid(
                    "disturbance.omega",
                    "chirp frequencies must be finite and nonnegative",
                ))
            }
            _ => Ok(()),
        }
    }

    /// End of the support.
    pub fn end(&self, dt: f64) -> f64 {
        match self.waveform {
            Waveform::ImpulseApprox => self.start + dt,
            _ => self.start + self.duration,
        }
    }

    pub fn value(&self, t: f64, dt: f64) -> f64 {
        let tau = t - self.start;
        if tau < 0.0 {
            return 0.0;
        }
        match self.waveform {
            Waveform::ImpulseApprox => {
                if tau < dt {
                    self.amplitude / dt
                } else {
                    0.0
                }
            }
            Waveform::Rectangular => {
                if tau < self.duration {
                    self.amplitude
                } else {
                    0.0
                }
            }
            Waveform::SineBurst { omega } => {
                if tau > self.duration {
                    return 0.0;
                }
                self.amplitude * (omega * tau).sin() * hann(tau, self.duration)
            }
            Waveform::Chirp { omega_start, omega_end } => {
                if tau > self.duration {
                    return 0.0;
                }
                let phase = omega_start * tau + 0.5 * (omega_end - omega_start) * tau * tau / self.duration;
                self.amplitude * phase.sin() * hann(tau, self.duration)
            }
        }
    }

    /// Value as seen from inside the step `[lo, lo + dt]`: jumps that sit
    /// on a step boundary take the one-sided limit from within the step.
    fn value_in_step(&self, t: f64, lo: f64, dt: f64) -> f64 {
        if self.waveform.is_smooth() {
            return self.value(t, dt);
        }
        let eps = 1e-6 * dt;
        self.value(t.clamp(lo + eps, lo + dt - eps), dt)
    }
}

fn hann(tau: f64, duration: f64) -> f64 {
    let s = (std::f64::consts::PI * tau / duration).sin();
    s * s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n: ChainSize,
    pub gains: ControllerGains,
    pub dt: f64,
    pub t_end: f64,
    pub disturbances: Vec<DisturbanceSpec>,
    /// Starting state; all vehicles at rest at the origin when absent.
    pub initial: Option<PlatoonState>,
}

impl SimConfig {
    /// Configuration with the default step and horizon.
    pub fn new(n: ChainSize, gains: ControllerGains, disturbances: Vec<DisturbanceSpec>) -> Result<Self> {
        let dt = default_step(&gains);
        let t_end = default_horizon(&gains, &[n], &disturbances, dt)?;
        let cfg = Self {
            n,
            gains,
            dt,
            t_end,
            disturbances,
            initial: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_step(&self.gains, self.dt)?;
        if !(self.t_end.is_finite() && self.t_end >= 10.0 * self.dt) {
            return Err(Error::invalid(
                "t_end",
                format!("must be at least 10*dt, got {}", self.t_end),
            ));
        }
        for d in &self.disturbances {
            d.validate(self.n)?;
        }
        if let Some(state) = &self.initial {
            let len = self.n.get() + 1;
            if state.x.len() != len || state.v.len() != len {
                return Err(Error::invalid(
                    "initial",
                    format!("positions and velocities need {len} entries"),
                ));
            }
        }
        Ok(())
    }
}

/// Reject steps that are not positive or break [`STEP_GUARD`].
pub fn check_step(g: &ControllerGains, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let limit = STEP_GUARD / fast_rate(g);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "dt",
            format!(
                "step {dt} exceeds the stability guard dt*sqrt(max(a1,a2)+max(b1,b2)^2) <= {STEP_GUARD} (dt <= {limit:.6e})"
            ),
        ));
    }
    Ok(())
}

/// `sqrt(max(a1, a2) + max(b1, b2)²)`, the fastest closed-loop rate.
pub fn fast_rate(g: &ControllerGains) -> f64 {
    let (a1, b1, a2, b2) = g.coefficients();
    (a1.max(a2) + b1.max(b2).powi(2)).sqrt()
}

/// Largest step of the form `1/k` satisfying the step guard. Integer
/// instants then fall on the time grid, and so do pulse edges placed on
/// them.
pub fn default_step(g: &ControllerGains) -> f64 {
    1.0 / (fast_rate(g) / STEP_GUARD).ceil()
}

/// Time for every listed chain to settle to [`HORIZON_DECAY`] after the
/// last disturbance, capped at [`MAX_HORIZON`].
pub fn default_horizon(
    g: &ControllerGains,
    sizes: &[ChainSize],
    disturbances: &[DisturbanceSpec],
    dt: f64,
) -> Result<f64> {
    let last_end = disturbances.iter().map(|d| d.end(dt)).fold(0.0, f64::max);
    let mut slowest = f64::NEG_INFINITY;
    for &n in sizes {
        slowest = slowest.max(spectral_abscissa(g, n)?);
    }
    let settle = if slowest < 0.0 {
        -HORIZON_DECAY.ln() / -slowest
    } else {
        MAX_HORIZON
    };
    Ok((last_end + settle).min(MAX_HORIZON))
}

/// State matrix over `(x_0..x_N, v_0..v_N)`.
pub fn assemble_closed_loop(g: &ControllerGains, n: ChainSize) -> DMatrix<f64> {
    let n = n.get();
    let dim = n + 1;
    let (a1, b1, a2, b2) = g.coefficients();
    let mut a = DMatrix::zeros(2 * dim, 2 * dim);
    for k in 0..dim {
        a[(k, dim + k)] = 1.0;
        if k < n {
            // coupling to the follower
            a[(dim + k, k + 1)] += a2;
            a[(dim + k, k)] -= a2;
            a[(dim + k, dim + k + 1)] += b2;
            a[(dim + k, dim + k)] -= b2;
        }
        if k > 0 {
            // coupling to the predecessor
            a[(dim + k, k - 1)] += a1;
            a[(dim + k, k)] -= a1;
            a[(dim + k, dim + k - 1)] += b1;
            a[(dim + k, dim + k)] -= b1;
        }
    }
    a
}

/// State matrix over `(e_1..e_N, ė_1..ė_N)`: `ë = -L_a e - L_b ė + d'`,
/// with `L_a = tridiag(-a1, a1 + a2, -a2)` and likewise for the dampings.
pub fn error_dynamics_matrix(g: &ControllerGains, n: ChainSize) -> DMatrix<f64> {
    let n = n.get();
    let (a1, b1, a2, b2) = g.coefficients();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        a[(k, n + k)] = 1.0;
        a[(n + k, k)] = -(a1 + a2);
        a[(n + k, n + k)] = -(b1 + b2);
        if k > 0 {
            a[(n + k, k - 1)] = a1;
            a[(n + k, n + k - 1)] = b1;
        }
        if k + 1 < n {
            a[(n + k, k + 1)] = a2;
            a[(n + k, n + k + 1)] = b2;
        }
    }
    a
}

/// Largest real part among the `2N` eigenvalues of the error dynamics,
/// i.e. the closed loop without its double-zero translation mode.
/// Negative means the chain is asymptotically stable.
pub fn spectral_abscissa(g: &ControllerGains, n: ChainSize) -> Result<f64> {
    if n.get() > MAX_EIGEN_N {
        return Err(Error::invalid(
            "n",
            format!("dense eigenvalues capped at N = {MAX_EIGEN_N}"),
        ));
    }
    let a = error_dynamics_matrix(g, n);
    let dim = a.nrows();
    let schur = Schur::try_new(a, f64::EPSILON, 100 * dim.max(10)).ok_or(Error::EigenNoConvergence { dim })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Sample instants `i · dt`.
    pub t: Vec<f64>,
    /// `e[k-1][i] = e_k(t_i)`. Empty when traces are not recorded.
    pub e: Vec<Vec<f64>>,
    pub per_vehicle_l2: Vec<f64>,
    /// `(L2, l2)` norm of the spacing errors.
    pub total_norm: f64,
    /// `(L2, l2)` norm of the applied disturbances `d_0..d_N`.
    pub d_norm: f64,
    pub peak_abs: Vec<f64>,
    pub final_state: PlatoonState,
}

/// Integrate the chain and record every spacing-error sample.
pub fn integrate(cfg: &SimConfig) -> Result<SimResult> {
    run(cfg, true)
}

/// As [`integrate`], keeping only norms and peaks.
pub fn integrate_norms(cfg: &SimConfig) -> Result<SimResult> {
    run(cfg, false)
}

/// Leader-relative state: `[x_0, v_0, x_1 - x_0, …, x_N - x_0, v_1 - v_0, …, v_N - v_0]`.
struct Chain<'a> {
    n: usize,
    gains: (f64, f64, f64, f64),
    forcing: Vec<Vec<&'a DisturbanceSpec>>,
    dt: f64,
    acc: Vec<f64>,
}

impl Chain<'_> {
    fn position(y: &[f64], k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            y[1 + k]
        }
    }

    fn velocity(y: &[f64], n: usize, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            y[1 + n + k]
        }
    }

    fn disturbance(&self, k: usize, t: f64, step_lo: f64) -> f64 {
        self.forcing[k]
            .iter()
            .map(|d| d.value_in_step(t, step_lo, self.dt))
            .sum()
    }

    fn derivative(&mut self, t: f64, step_lo: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (a1, b1, a2, b2) = self.gains;
        for k in 0..=n {
            let xk = Self::position(y, k);
            let vk = Self::velocity(y, n, k);
            let mut u = 0.0;
            if k < n {
                u += a2 * (Self::position(y, k + 1) - xk) + b2 * (Self::velocity(y, n, k + 1) - vk);
            }
            if k > 0 {
                u += a1 * (Self::position(y, k - 1) - xk) + b1 * (Self::velocity(y, n, k - 1) - vk);
            }
            self.acc[k] = u + self.disturbance(k, t, step_lo);
        }
        dy[0] = y[1];
        dy[1] = self.acc[0];
        for k in 1..=n {
            dy[1 + k] = y[1 + n + k];
            dy[1 + n + k] = self.acc[k] - self.acc[0];
        }
    }

    fn spacing(y: &[f64], k: usize) -> f64 {
        Self::position(y, k - 1) - Self::position(y, k)
    }

    fn squared_forcing(&self, t: f64, step_lo: f64) -> f64 {
        (0..=self.n).map(|k| self.disturbance(k, t, step_lo).powi(2)).sum()
    }
}

fn run(cfg: &SimConfig, record: bool) -> Result<SimResult> {
    cfg.validate()?;
    run_unchecked(cfg, record)
}

fn run_unchecked(cfg: &SimConfig, record: bool) -> Result<SimResult> {
    let n = cfg.n.get();
    let dt = cfg.dt;
    let steps = (cfg.t_end / dt).round() as usize;

    let mut forcing = vec![Vec::new(); n + 1];
    for d in &cfg.disturbances {
        forcing[d.vehicle].push(d);
    }
    let mut chain = Chain {
        n,
        gains: cfg.gains.coefficients(),
        forcing,
        dt,
        acc: vec![0.0; n + 1],
    };

    let dim = 2 * n + 2;
    let mut y = vec![0.0; dim];
    if let Some(init) = &cfg.initial {
        y[0] = init.x[0];
        y[1] = init.v[0];
        for k in 1..=n {
            y[1 + k] = init.x[k] - init.x[0];
            y[1 + n + k] = init.v[k] - init.v[0];
        }
    }

    let mut t_samples = Vec::new();
    let mut traces = vec![Vec::new(); if record { n } else { 0 }];
    if record {
        t_samples.reserve(steps + 1);
        for tr in &mut traces {
            tr.reserve(steps + 1);
        }
    }
    let mut energy = vec![0.0; n];
    let mut peak = vec![0.0f64; n];
    let mut prev_sq = vec![0.0; n];
    let mut d_energy = 0.0;

    let mut sample = |i: usize, y: &[f64], prev_sq: &mut [f64]| {
        for k in 1..=n {
            let e = Chain::spacing(y, k);
            let sq = e * e;
            if i > 0 {
                energy[k - 1] += 0.5 * dt * (prev_sq[k - 1] + sq);
            }
            prev_sq[k - 1] = sq;
            peak[k - 1] = peak[k - 1].max(e.abs());
            if record {
                traces[k - 1].push(e);
            }
        }
        if record {
            t_samples.push(i as f64 * dt);
        }
    };
    sample(0, &y, &mut prev_sq);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for i in 0..steps {
        let t = i as f64 * dt;
        chain.derivative(t, t, &y, &mut k1);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * dt * k1[j];
        }
        chain.derivative(t + 0.5 * dt, t, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * dt * k2[j];
        }
        chain.derivative(t + 0.5 * dt, t, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + dt * k3[j];
        }
        chain.derivative(t + dt, t, &tmp, &mut k4);
        for j in 0..dim {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t + dt });
        }
        d_energy += 0.5 * dt * (chain.squared_forcing(t, t) + chain.squared_forcing(t + dt, t));
        sample(i + 1, &y, &mut prev_sq);
    }

    let per_vehicle_l2: Vec<f64> = energy.iter().map(|e| e.sqrt()).collect();
    let total_norm = energy.iter().sum::<f64>().sqrt();
    let final_state = PlatoonState {
        x: (0..=n).map(|k| y[0] + Chain::position(&y, k)).collect(),
        v: (0..=n).map(|k| y[1] + Chain::velocity(&y, n, k)).collect(),
    };
    Ok(SimResult {
        t: t_samples,
        e: traces,
        per_vehicle_l2,
        total_norm,
        d_norm: d_energy.sqrt(),
        peak_abs: peak,
        final_state,
    })
}

/// `(Σ_rows ∫ row(t)² dt)^{1/2}` by the trapezoidal rule on a uniform grid.
pub fn l2l2_norm(samples: &[Vec<f64>], dt: f64) -> f64 {
    samples
        .iter()
        .map(|row| {
            row.windows(2)
                .map(|w| 0.5 * dt * (w[0] * w[0] + w[1] * w[1]))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: ChainSize,
    pub total_norm: f64,
}

/// `(L2, l2)` norm of the spacing errors for each chain length, with the
/// disturbance on the leader. Rows come back in the order of `sizes`.
pub fn sweep_n(
    g: &ControllerGains,
    d: &DisturbanceSpec,
    sizes: &[ChainSize],
    dt: f64,
    t_end: f64,
) -> Result<Vec<SweepRow>> {
    if d.vehicle != 0 {
        return Err(Error::invalid(
            "disturbance.vehicle",
            format!(
                "the chain-length sweep disturbs the leader only, got vehicle {}",
                d.vehicle
            ),
        ));
    }
    sweep_with(g, sizes, dt, t_end, |_| *d)
}

/// As [`sweep_n`] but with the disturbance on the last vehicle of each
/// chain.
pub fn sweep_n_tail(
    g: &ControllerGains,
    d: &DisturbanceSpec,
    sizes: &[ChainSize],
    dt: f64,
    t_end: f64,
) -> Result<Vec<SweepRow>> {
    sweep_with(g, sizes, dt, t_end, |n| d.on_vehicle(n.get()))
}

fn sweep_with(
    g: &ControllerGains,
    sizes: &[ChainSize],
    dt: f64,
    t_end: f64,
    place: impl Fn(ChainSize) -> DisturbanceSpec + Sync,
) -> Result<Vec<SweepRow>> {
    sizes
        .par_iter()
        .map(|&n| {
            let cfg = SimConfig {
                n,
                gains: *g,
                dt,
                t_end,
                disturbances: vec![place(n)],
                initial: None,
            };
            let r = integrate_norms(&cfg)?;
            Ok(SweepRow {
                n,
                total_norm: r.total_norm,
            })
        })
        .collect()
}
