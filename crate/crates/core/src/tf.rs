//! Elementary transfer functions of the chain and the flow functions.
//!
//! With `p1 = a1 + b1 s`, `p2 = a2 + b2 s` and `q = p1 + p2`, the flow
//! functions are
//!
//! ```text
//! C1 = ((s² + q) - m) / (2 p2),   C2 = ((s² + q) - m) / (2 p1),
//! m  = sqrt((s² + q)² - 4 p1 p2)
//! ```
//!
//! where the square root is taken on the branch closest to `s² + q`, so
//! that the `s²` terms cancel at high frequency and both flows are proper.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// A point of the complex plane: the Laplace variable or a transfer value.
pub type ComplexPoint = Complex64;

/// First-order term `a + b s` with strictly positive stiffness and damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineTerm {
    a: f64,
    b: f64,
}

impl AffineTerm {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Self::named(a, b, "a", "b")
    }

    /// Like [`AffineTerm::new`], reporting violations under the given
    /// field names.
    pub fn named(a: f64, b: f64, a_name: &'static str, b_name: &'static str) -> Result<Self> {
        check_positive(a, a_name)?;
        check_positive(b, b_name)?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.a * factor, self.b * factor)
    }

    pub fn eval(&self, s: ComplexPoint) -> ComplexPoint {
        eval_affine(self, s)
    }
}

fn check_positive(value: f64, name: &'static str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::invalid(name, format!("must be finite, got {value}")));
    }
    if value <= 0.0 {
        return Err(Error::invalid(name, format!("must be positive, got {value}")));
    }
    Ok(())
}

/// PD couplings of one vehicle: `p1` towards its predecessor, `p2`
/// towards its follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerGains {
    p1: AffineTerm,
    p2: AffineTerm,
}

impl ControllerGains {
    pub fn new(p1: AffineTerm, p2: AffineTerm) -> Self {
        Self { p1, p2 }
    }

    pub fn from_coefficients(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<Self> {
        Ok(Self {
            p1: AffineTerm::named(a1, b1, "a1", "b1")?,
            p2: AffineTerm::named(a2, b2, "a2", "b2")?,
        })
    }

    /// The one-parameter family `p1 = kappa / (1 + alpha) * base`,
    /// `p2 = alpha * p1`.
    pub fn asymmetric_family(base: AffineTerm, kappa: f64, alpha: f64) -> Result<Self> {
        check_positive(kappa, "kappa")?;
        check_positive(alpha, "alpha")?;
        let p1 = base.scaled(kappa / (1.0 + alpha))?;
        let p2 = p1.scaled(alpha)?;
        Ok(Self { p1, p2 })
    }

    pub fn p1(&self) -> AffineTerm {
        self.p1
    }

    pub fn p2(&self) -> AffineTerm {
        self.p2
    }

    /// `(a1, b1, a2, b2)`.
    pub fn coefficients(&self) -> (f64, f64, f64, f64) {
        (self.p1.a, self.p1.b, self.p2.a, self.p2.b)
    }

    /// Gains with the roles of predecessor and follower exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.p1 == self.p2
    }

    pub fn q(&self, s: ComplexPoint) -> ComplexPoint {
        self.p1.eval(s) + self.p2.eval(s)
    }
}

pub fn eval_affine(p: &AffineTerm, s: ComplexPoint) -> ComplexPoint {
    s * p.b + p.a
}

/// Every elementary quantity of the chain at one point `s`.
#[derive(Debug, Clone, Copy)]
pub struct FlowTerms {
    pub s: ComplexPoint,
    pub p1: ComplexPoint,
    pub p2: ComplexPoint,
    /// `s² + q`.
    pub z: ComplexPoint,
    pub m: ComplexPoint,
    /// `(z + m) / 2`, the far root of `x² - z x + p1 p2`.
    pub far: ComplexPoint,
    /// `(z - m) / 2`, the near root of `x² - z x + p1 p2`.
    pub near: ComplexPoint,
}

impl FlowTerms {
    pub fn at(g: &ControllerGains, s: ComplexPoint) -> Self {
        let p1 = g.p1.eval(s);
        let p2 = g.p2.eval(s);
        let z = s * s + p1 + p2;
        let m = select_root(z, z * z - p1 * p2 * 4.0);
        let far = (z + m) * 0.5;
        // (z - m) / 2 = p1 p2 / far; the quotient avoids the cancellation
        // of the two ~s² terms at high frequency.
        let near = if far.norm() > 0.0 { p1 * p2 / far } else { (z - m) * 0.5 };
        Self {
            s,
            p1,
            p2,
            z,
            m,
            far,
            near,
        }
    }

    pub fn c1(&self) -> Result<ComplexPoint> {
        if self.p2.norm() == 0.0 {
            return Err(Error::DivisionByZero { what: "p2", s: self.s });
        }
        Ok(self.near / self.p2)
    }

    pub fn c2(&self) -> Result<ComplexPoint> {
        if self.p1.norm() == 0.0 {
            return Err(Error::DivisionByZero { what: "p1", s: self.s });
        }
        Ok(self.near / self.p1)
    }

    /// Magnitude scale of the chain operator at this point.
    pub fn scale(&self) -> f64 {
        self.z.norm() + self.p1.norm() + self.p2.norm()
    }
}

/// Square root of `radicand` closest to `target`. Ties go to the root
/// with nonnegative real part, then nonnegative imaginary part.
fn select_root(target: ComplexPoint, radicand: ComplexPoint) -> ComplexPoint {
    let r = radicand.sqrt();
    let d_plus = (target - r).norm();
    let d_minus = (target + r).norm();
    if d_plus < d_minus {
        r
    } else if d_minus < d_plus {
        -r
    } else if r.re > 0.0 || (r.re == 0.0 && r.im >= 0.0) {
        r
    } else {
        -r
    }
}

pub fn eval_m(g: &ControllerGains, s: ComplexPoint) -> ComplexPoint {
    FlowTerms::at(g, s).m
}

/// Backward flow function: the factor by which a disturbance is passed
/// from each vehicle to its follower.
pub fn eval_c1(g: &ControllerGains, s: ComplexPoint) -> Result<ComplexPoint> {
    FlowTerms::at(g, s).c1()
}

/// Forward flow function: the factor by which a disturbance is passed
/// from each vehicle to its predecessor.
pub fn eval_c2(g: &ControllerGains, s: ComplexPoint) -> Result<ComplexPoint> {
    FlowTerms::at(g, s).c2()
}

/// Residuals of the quadratics solved by the flow functions:
/// `(p2 C1² - (s²+q) C1 + p1, p1 C2² - (s²+q) C2 + p2)`.
pub fn quadratic_residuals(g: &ControllerGains, s: ComplexPoint) -> Result<(ComplexPoint, ComplexPoint)> {
    let t = FlowTerms::at(g, s);
    let c1 = t.c1()?;
    let c2 = t.c2()?;
    Ok((t.p2 * c1 * c1 - t.z * c1 + t.p1, t.p1 * c2 * c2 - t.z * c2 + t.p2))
}
