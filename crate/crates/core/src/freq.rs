//! H-infinity estimation on the imaginary axis and the flow-norm
//! conditions that decide string stability towards the leader.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tf::{AffineTerm, ControllerGains, FlowTerms};

/// Slack on every "norm at most one" test. The product bound is attained
/// in the limit, so a strict numerical comparison needs room.
pub const NORM_TOL: f64 = 1e-6;

/// Golden-section iterations used by the lemma checks and the tuner.
pub const DEFAULT_REFINE_ITERS: usize = 40;

/// Required gap below one for a tuned `||C1||∞`.
pub const TUNE_MARGIN: f64 = 1e-3;

const TUNE_SCAN_POINTS: usize = 64;
const TUNE_BISECTION_ITERS: usize = 60;

/// Log-spaced sweep of `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyGrid {
    omega_min: f64,
    omega_max: f64,
    points: usize,
}

impl FrequencyGrid {
    pub fn new(omega_min: f64, omega_max: f64, points: usize) -> Result<Self> {
        if !(omega_min.is_finite() && omega_min > 0.0) {
            return Err(Error::invalid(
                "omega_min",
                format!("must be positive, got {omega_min}"),
            ));
        }
        if !(omega_max.is_finite() && omega_max > omega_min) {
            return Err(Error::invalid(
                "omega_max",
                format!("must exceed omega_min = {omega_min}, got {omega_max}"),
            ));
        }
        if points < 2 {
            return Err(Error::invalid("points", format!("need at least 2, got {points}")));
        }
        Ok(Self {
            omega_min,
            omega_max,
            points,
        })
    }

    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn omega(&self, i: usize) -> f64 {
        if i == 0 {
            return self.omega_min;
        }
        if i + 1 == self.points {
            return self.omega_max;
        }
        let lo = self.omega_min.ln();
        let hi = self.omega_max.ln();
        (lo + (hi - lo) * i as f64 / (self.points - 1) as f64).exp()
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |i| self.omega(i))
    }

    /// Same window, `factor` times as many cells. Every point of `self`
    /// is a point of the result.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            points: (self.points - 1) * factor.max(1) + 1,
            ..*self
        }
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            omega_min: 1e-4,
            omega_max: 1e4,
            points: 2000,
        }
    }
}

/// Behaviour of a response outside the sampled window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoints {
    /// Value at `omega = 0`, if the response is defined there.
    pub dc: Option<Complex64>,
    /// `|f(jω)| = O(ω^-order)` as `ω → ∞`.
    pub decay_order: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub argmax_omega: f64,
    /// Whether golden-section refinement moved the estimate off the grid.
    pub refined: bool,
    pub grid: FrequencyGrid,
}

/// Estimate `sup_ω |f(jω)|`.
///
/// The grid maximum (together with the DC value and, for non-decaying
/// responses, a few points past `omega_max`) is refined by golden-section
/// search in `log ω` over the two cells around the discrete argmax. The
/// best value seen is kept, so the estimate never decreases with
/// `refine_iters`.
pub fn hinf_norm<F>(f: F, endpoints: Endpoints, grid: &FrequencyGrid, refine_iters: usize) -> Result<NormEstimate>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let magnitude = |omega: f64| -> Result<f64> {
        let v = f(omega)?;
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v.norm())
        } else {
            Err(Error::NonFinite { omega })
        }
    };

    let mut best = f64::NEG_INFINITY;
    let mut best_omega = f64::NAN;
    let mut best_index = None;
    for (i, omega) in grid.omegas().enumerate() {
        let v = magnitude(omega)?;
        if v > best {
            best = v;
            best_omega = omega;
            best_index = Some(i);
        }
    }

    if let Some(dc) = endpoints.dc {
        if !(dc.re.is_finite() && dc.im.is_finite()) {
            return Err(Error::NonFinite { omega: 0.0 });
        }
        if dc.norm() > best {
            best = dc.norm();
            best_omega = 0.0;
            best_index = None;
        }
    }
    if endpoints.decay_order == 0 {
        for decade in 1..=3 {
            let omega = grid.omega_max() * 10f64.powi(decade);
            let v = magnitude(omega)?;
            if v > best {
                best = v;
                best_omega = omega;
                best_index = None;
            }
        }
    }

    let mut refined = false;
    if let (Some(i), true) = (best_index, refine_iters > 0) {
        let lo = grid.omega(i.saturating_sub(1)).ln();
        let hi = grid.omega((i + 1).min(grid.points() - 1)).ln();
        let (v, omega) = golden_max(|x| magnitude(x.exp()), lo, hi, refine_iters)?;
        if v > best {
            best = v;
            best_omega = omega.exp();
            refined = true;
        }
    }

    Ok(NormEstimate {
        value: best,
        argmax_omega: best_omega,
        refined,
        grid: *grid,
    })
}

/// Golden-section search for a maximum on `[lo, hi]`. Returns the best
/// probe, not the final bracket midpoint.
fn golden_max<F>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = if f1 >= f2 { (f1, x1) } else { (f2, x2) };
    for _ in 0..iters {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
            if f1 > best.0 {
                best = (f1, x1);
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
            if f2 > best.0 {
                best = (f2, x2);
            }
        }
    }
    Ok(best)
}

fn flow_norm(
    g: &ControllerGains,
    grid: &FrequencyGrid,
    flow: impl Fn(&FlowTerms) -> Result<Complex64>,
) -> Result<NormEstimate> {
    let at = |omega: f64| flow(&FlowTerms::at(g, Complex64::new(0.0, omega)));
    let dc = at(0.0)?;
    // C1, C2 ~ p / s² at high frequency: one order for damped couplings.
    let endpoints = Endpoints {
        dc: Some(dc),
        decay_order: 1,
    };
    hinf_norm(at, endpoints, grid, DEFAULT_REFINE_ITERS)
}

pub fn c1_norm(g: &ControllerGains, grid: &FrequencyGrid) -> Result<NormEstimate> {
    flow_norm(g, grid, |t| t.c1())
}

pub fn c2_norm(g: &ControllerGains, grid: &FrequencyGrid) -> Result<NormEstimate> {
    flow_norm(g, grid, |t| t.c2())
}

/// `||C1 C2||∞`, which never exceeds one and is strictly below one for
/// proportional asymmetric couplings `p2 = α p1`, `α ≠ 1`.
pub fn check_lemma2_product(g: &ControllerGains, grid: &FrequencyGrid) -> Result<NormEstimate> {
    flow_norm(g, grid, |t| Ok(t.c1()? * t.c2()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaReport {
    pub c1_norm: NormEstimate,
    pub c2_norm: NormEstimate,
    pub c1c2_norm: NormEstimate,
    /// Both flows are contractive (up to [`NORM_TOL`]). Impossible when
    /// `a1 ≠ a2`.
    pub both_le_one: bool,
    pub product_le_one: bool,
}

pub fn check_lemma1(g: &ControllerGains, grid: &FrequencyGrid) -> Result<LemmaReport> {
    let c1_norm = c1_norm(g, grid)?;
    let c2_norm = c2_norm(g, grid)?;
    let c1c2_norm = check_lemma2_product(g, grid)?;
    Ok(LemmaReport {
        both_le_one: c1_norm.value <= 1.0 + NORM_TOL && c2_norm.value <= 1.0 + NORM_TOL,
        product_le_one: c1c2_norm.value <= 1.0 + NORM_TOL,
        c1_norm,
        c2_norm,
        c1c2_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedGains {
    pub alpha: f64,
    pub gains: ControllerGains,
    pub c1_norm: NormEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TuneOutcome {
    Found(TunedGains),
    /// No scanned `α` reached the target; reports the best one seen.
    NotFound {
        best_alpha: f64,
        best_c1_norm: f64,
    },
}

impl TuneOutcome {
    pub fn found(&self) -> Option<&TunedGains> {
        match self {
            TuneOutcome::Found(t) => Some(t),
            TuneOutcome::NotFound { .. } => None,
        }
    }
}

/// Smallest `α` in `alpha_range` for which the family
/// `p1 = κ/(1+α)·base`, `p2 = α·p1` has `||C1||∞ < 1 - TUNE_MARGIN`.
///
/// A 64-point log scan locates the first qualifying `α`; bisection then
/// shrinks the bracket with the previous (non-qualifying) scan point. The
/// scan does not assume `||C1||∞` is monotone in `α`, so the result is the
/// first crossing, not a certified global minimum.
pub fn tune_alpha(base: AffineTerm, kappa: f64, alpha_range: (f64, f64), grid: &FrequencyGrid) -> Result<TuneOutcome> {
    let (lo, hi) = alpha_range;
    if !(lo.is_finite() && lo >= 1.0) {
        return Err(Error::invalid("alpha_min", format!("must be at least 1, got {lo}")));
    }
    if !(hi.is_finite() && hi >= lo) {
        return Err(Error::invalid(
            "alpha_max",
            format!("must be at least alpha_min = {lo}, got {hi}"),
        ));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::invalid("kappa", format!("must be positive, got {kappa}")));
    }

    let target = 1.0 - TUNE_MARGIN;
    let evaluate = |alpha: f64| -> Result<(ControllerGains, NormEstimate)> {
        let gains = ControllerGains::asymmetric_family(base, kappa, alpha)?;
        Ok((gains, c1_norm(&gains, grid)?))
    };

    let scan: Vec<f64> = if hi == lo {
        vec![lo]
    } else {
        let (l, h) = (lo.ln(), hi.ln());
        (0..TUNE_SCAN_POINTS)
            .map(|i| (l + (h - l) * i as f64 / (TUNE_SCAN_POINTS - 1) as f64).exp())
            .collect()
    };

    let mut best = (f64::NAN, f64::INFINITY);
    let mut previous: Option<f64> = None;
    for &alpha in &scan {
        let (gains, norm) = evaluate(alpha)?;
        if norm.value < best.1 {
            best = (alpha, norm.value);
        }
        if norm.value < target {
            let Some(mut below) = previous else {
                return Ok(TuneOutcome::Found(TunedGains {
                    alpha,
                    gains,
                    c1_norm: norm,
                }));
            };
            let mut above = (alpha, gains, norm);
            for _ in 0..TUNE_BISECTION_ITERS {
                let mid = (below * above.0).sqrt();
                if mid <= below || mid >= above.0 {
                    break;
                }
                let (g_mid, n_mid) = evaluate(mid)?;
                if n_mid.value < target {
                    above = (mid, g_mid, n_mid);
                } else {
                    below = mid;
                }
            }
            return Ok(TuneOutcome::Found(TunedGains {
                alpha: above.0,
                gains: above.1,
                c1_norm: above.2,
            }));
        }
        previous = Some(alpha);
    }
    Ok(TuneOutcome::NotFound {
        best_alpha: best.0,
        best_c1_norm: best.1,
    })
}
