use num_complex::Complex64;
use serde::Serialize;
use stringstab_core::chain::{
    check_denominator_conditions, closedform_chain_response, solve_direct, ChainSize, DenominatorMinima,
    DisturbanceVector,
};
use stringstab_core::freq::{check_lemma1, tune_alpha, NormEstimate, TuneOutcome};
use stringstab_core::sim::{default_horizon, default_step, integrate, spectral_abscissa, sweep_n, SimConfig};
use stringstab_core::ControllerGains;

use crate::config::{in_section, RunConfig};
use crate::error::CliError;
use crate::output::{to_pretty_json, Cell, OutputDir, Table};

/// What a command printed and the exit code it asks for.
pub struct Completed {
    pub stdout: String,
    pub exit_code: u8,
}

impl Completed {
    fn ok(stdout: String) -> Self {
        Self { stdout, exit_code: 0 }
    }
}

#[derive(Debug, Serialize)]
struct Gains {
    a1: f64,
    b1: f64,
    a2: f64,
    b2: f64,
}

impl From<&ControllerGains> for Gains {
    fn from(g: &ControllerGains) -> Self {
        let (a1, b1, a2, b2) = g.coefficients();
        Self { a1, b1, a2, b2 }
    }
}

#[derive(Debug, Serialize)]
struct Norm {
    value: f64,
    argmax_omega: f64,
}

impl From<&NormEstimate> for Norm {
    fn from(e: &NormEstimate) -> Self {
        Self {
            value: e.value,
            argmax_omega: e.argmax_omega,
        }
    }
}

#[derive(Debug, Serialize)]
struct LemmaDocument {
    gains: Gains,
    n: usize,
    c1_norm: Norm,
    c2_norm: Norm,
    c1c2_norm: Norm,
    both_le_one: bool,
    product_le_one: bool,
    denominators: DenominatorMinima,
}

pub fn check_lemmas(cfg: &RunConfig) -> Result<Completed, CliError> {
    let report = check_lemma1(&cfg.gains, &cfg.grid)?;
    let doc = LemmaDocument {
        gains: (&cfg.gains).into(),
        n: cfg.n.get(),
        c1_norm: (&report.c1_norm).into(),
        c2_norm: (&report.c2_norm).into(),
        c1c2_norm: (&report.c1c2_norm).into(),
        both_le_one: report.both_le_one,
        product_le_one: report.product_le_one,
        denominators: check_denominator_conditions(&cfg.gains, cfg.n, &cfg.grid),
    };
    if let Some(dir) = &cfg.out_dir {
        OutputDir::new(Some(dir), cfg.format).json("lemmas.json", &doc)?;
    }
    Ok(Completed::ok(to_pretty_json(&doc)))
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum TuneDocument {
    Found { alpha: f64, gains: Gains, c1_norm: Norm },
    NotFound { best_alpha: f64, best_c1_norm: f64 },
}

pub fn tune(cfg: &RunConfig) -> Result<Completed, CliError> {
    let outcome =
        tune_alpha(cfg.tune_base, cfg.kappa, cfg.alpha_range, &cfg.grid).map_err(|e| in_section("tuning", e))?;
    let (doc, exit_code) = match outcome {
        TuneOutcome::Found(t) => (
            TuneDocument::Found {
                alpha: t.alpha,
                gains: (&t.gains).into(),
                c1_norm: (&t.c1_norm).into(),
            },
            0,
        ),
        TuneOutcome::NotFound {
            best_alpha,
            best_c1_norm,
        } => (
            TuneDocument::NotFound {
                best_alpha,
                best_c1_norm,
            },
            3,
        ),
    };
    if let Some(dir) = &cfg.out_dir {
        OutputDir::new(Some(dir), cfg.format).json("tune.json", &doc)?;
    }
    Ok(Completed {
        stdout: to_pretty_json(&doc),
        exit_code,
    })
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    gains: Gains,
    n: usize,
    dt: f64,
    t_end: f64,
    per_vehicle_l2: Vec<f64>,
    total_norm: f64,
    disturbance_norm: f64,
    peak_abs: Vec<f64>,
    spectral_abscissa: f64,
}

fn step_and_horizon(cfg: &RunConfig, sizes: &[ChainSize]) -> Result<(f64, f64), CliError> {
    let dt = cfg.dt.unwrap_or_else(|| default_step(&cfg.gains));
    let t_end = match cfg.t_end {
        Some(t) => t,
        None => default_horizon(&cfg.gains, sizes, &cfg.disturbances, dt)?,
    };
    Ok((dt, t_end))
}

fn warn_if_unstable(abscissa: f64, n: ChainSize) {
    if abscissa >= 0.0 {
        eprintln!(
            "warning: spectral abscissa {abscissa:.6e} >= 0 for N = {}; the error dynamics are not asymptotically stable",
            n.get()
        );
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Completed, CliError> {
    let (dt, t_end) = step_and_horizon(cfg, &[cfg.n])?;
    let sim = SimConfig {
        n: cfg.n,
        gains: cfg.gains,
        dt,
        t_end,
        disturbances: cfg.disturbances.clone(),
        initial: None,
    };
    sim.validate().map_err(|e| in_section("simulation", e))?;
    let abscissa = spectral_abscissa(&cfg.gains, cfg.n)?;
    warn_if_unstable(abscissa, cfg.n);

    let r = integrate(&sim)?;
    let n = cfg.n.get();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=n).map(|k| format!("e_{k}")));
    let mut table = Table::new(columns);
    for (i, &t) in r.t.iter().enumerate() {
        let mut row = Vec::with_capacity(n + 1);
        row.push(Cell::Float(t));
        row.extend(r.e.iter().map(|ek| Cell::Float(ek[i])));
        table.push(row);
    }

    let summary = SimulationSummary {
        gains: (&cfg.gains).into(),
        n,
        dt,
        t_end,
        per_vehicle_l2: r.per_vehicle_l2,
        total_norm: r.total_norm,
        disturbance_norm: r.d_norm,
        peak_abs: r.peak_abs,
        spectral_abscissa: abscissa,
    };
    let out = OutputDir::new(cfg.out_dir.as_deref(), cfg.format);
    out.table("errors", &table)?;
    out.json("summary.json", &summary)?;
    Ok(Completed::ok(to_pretty_json(&summary)))
}

pub fn sweep(cfg: &RunConfig) -> Result<Completed, CliError> {
    let d = match cfg.disturbances.as_slice() {
        [d] if d.vehicle == 0 => *d,
        _ => {
            return Err(CliError::Config {
                field: "simulation.disturbances".into(),
                reason: "sweep-n needs exactly one disturbance, on the leader (vehicle 0)".into(),
            })
        }
    };
    let (dt, t_end) = step_and_horizon(cfg, &cfg.n_list)?;
    let largest = *cfg.n_list.last().expect("n_list is never empty");
    SimConfig {
        n: largest,
        gains: cfg.gains,
        dt,
        t_end,
        disturbances: vec![d],
        initial: None,
    }
    .validate()
    .map_err(|e| in_section("simulation", e))?;
    for &n in &cfg.n_list {
        warn_if_unstable(spectral_abscissa(&cfg.gains, n)?, n);
    }

    let rows = sweep_n(&cfg.gains, &d, &cfg.n_list, dt, t_end)?;
    let mut table = Table::new(vec!["N".into(), "l2l2_norm".into()]);
    for row in &rows {
        table.push(vec![Cell::Int(row.n.get()), Cell::Float(row.total_norm)]);
    }
    let path = OutputDir::new(cfg.out_dir.as_deref(), cfg.format).table("sweep", &table)?;
    Ok(Completed::ok(format!("{}\n", path.display())))
}

pub fn freq_response(cfg: &RunConfig) -> Result<Completed, CliError> {
    let n = cfg.n;
    let k = cfg.vehicle;
    if !(1..=n.get()).contains(&k) {
        return Err(CliError::Config {
            field: "chain.vehicle".into(),
            reason: format!("must lie in 1..={}, got {k}", n.get()),
        });
    }
    let one = Complex64::new(1.0, 0.0);
    let leader = DisturbanceVector::leader(n, one);
    let mut table = Table::new(vec!["omega".into(), "abs_Hk".into(), "arg_Hk".into()]);
    for omega in cfg.grid.omegas() {
        let s = Complex64::new(0.0, omega);
        let h = if n.get() >= 2 {
            closedform_chain_response(&cfg.gains, n, s, one).map(|r| r.transfer[k - 1])
        } else {
            solve_direct(&cfg.gains, n, s, &leader).map(|e| e[k - 1])
        }
        .map_err(|source| CliError::Degenerate { omega, source })?;
        table.push(vec![Cell::Float(omega), Cell::Float(h.norm()), Cell::Float(h.arg())]);
    }
    let path = OutputDir::new(cfg.out_dir.as_deref(), cfg.format).table("bode", &table)?;
    Ok(Completed::ok(format!("{}\n", path.display())))
}
