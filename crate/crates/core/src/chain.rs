//! Frequency-domain chain machinery.
//!
//! The spacing errors `E = (e_1, …, e_N)` of a chain obey `S E = D'` with
//! `S` tridiagonal (diagonal `s² + q`, sub-diagonal `-p1`, super-diagonal
//! `-p2`) and `d'_k = d_{k-1} - d_k`. Multiplying by the Toeplitz matrix
//! `M` built from powers of `C1`, `C2` leaves only the first and last
//! columns of `Q = M S` non-trivial, which decouples the `(e_1, e_N)` pair
//! from the interior and gives closed forms for a leader disturbance.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::freq::FrequencyGrid;
use crate::tf::{ComplexPoint, ControllerGains, FlowTerms};

/// Relative threshold under which `m`, `s² + q + m` or the closed-form
/// denominator count as zero.
pub const DEGENERACY_RTOL: f64 = 1e-10;

/// Pivots below this fraction of the matrix scale are rejected.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Largest chain for which [`verify_msq`] builds `M` densely.
pub const MSQ_MAX_N: usize = 200;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Number of followers `N`; vehicles are `0..=N`, spacing errors `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ChainSize(usize);

impl ChainSize {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "a chain needs at least one follower"));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// The closed forms use `C1^(N-2)` and need `N >= 2`.
    fn require_closed_form(self) -> Result<usize> {
        if self.0 < 2 {
            return Err(Error::invalid("n", format!("closed forms need N >= 2, got {}", self.0)));
        }
        Ok(self.0)
    }
}

/// `d'_1 … d'_N` at a fixed `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceVector(Vec<ComplexPoint>);

impl DisturbanceVector {
    pub fn new(n: ChainSize, values: Vec<ComplexPoint>) -> Result<Self> {
        if values.len() != n.get() {
            return Err(Error::invalid(
                "dprime",
                format!("expected {} entries, got {}", n.get(), values.len()),
            ));
        }
        Ok(Self(values))
    }

    /// Only `d'_1` is nonzero.
    pub fn leader(n: ChainSize, d1prime: ComplexPoint) -> Self {
        let mut v = vec![ZERO; n.get()];
        v[0] = d1prime;
        Self(v)
    }

    pub fn as_slice(&self) -> &[ComplexPoint] {
        &self.0
    }
}

/// The chain operator `S(s)` in tridiagonal storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    s: ComplexPoint,
    /// `sub[i] = S[i+1][i]`
    pub sub: Vec<ComplexPoint>,
    pub diag: Vec<ComplexPoint>,
    /// `sup[i] = S[i][i+1]`
    pub sup: Vec<ComplexPoint>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, row: usize, col: usize) -> ComplexPoint {
        if row == col {
            self.diag[row]
        } else if row == col + 1 {
            self.sub[col]
        } else if col == row + 1 {
            self.sup[row]
        } else {
            ZERO
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<ComplexPoint>> {
        let n = self.dim();
        (0..n).map(|r| (0..n).map(|c| self.get(r, c)).collect()).collect()
    }

    pub fn mul_vec(&self, x: &[ComplexPoint]) -> Vec<ComplexPoint> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    fn scale(&self) -> f64 {
        self.diag
            .iter()
            .chain(&self.sub)
            .chain(&self.sup)
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Gaussian elimination with partial (row) pivoting, the banded
    /// scheme of LAPACK `gtsv`: a row swap creates one extra
    /// super-diagonal of fill-in.
    pub fn solve(&self, rhs: &[ComplexPoint]) -> Result<Vec<ComplexPoint>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::invalid(
                "rhs",
                format!("expected {n} entries, got {}", rhs.len()),
            ));
        }
        let scale = self.scale();
        let singular = |pivot: f64| Error::Singular {
            s: self.s,
            pivot,
            scale,
        };
        if scale == 0.0 {
            return Err(singular(0.0));
        }
        let threshold = PIVOT_RTOL * scale;

        let mut d = self.diag.clone();
        let mut du = self.sup.clone();
        let mut dl = self.sub.clone();
        let mut fill = vec![ZERO; n];
        let mut b = rhs.to_vec();

        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() < threshold {
                    return Err(singular(d[i].norm()));
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] = b[i + 1] - fact * b[i];
                dl[i] = ZERO;
            } else {
                if dl[i].norm() < threshold {
                    return Err(singular(dl[i].norm()));
                }
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    fill[i] = du[i + 1];
                    du[i + 1] = -fact * fill[i];
                }
                du[i] = temp;
                b.swap(i, i + 1);
                b[i + 1] = b[i + 1] - fact * b[i];
            }
        }
        if d[n - 1].norm() < threshold {
            return Err(singular(d[n - 1].norm()));
        }

        let mut x = b;
        x[n - 1] /= d[n - 1];
        if n > 1 {
            x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - fill[i] * x[i + 2]) / d[i];
        }
        Ok(x)
    }
}

pub fn assemble_s(g: &ControllerGains, n: ChainSize, s: ComplexPoint) -> Tridiagonal {
    let n = n.get();
    let p1 = g.p1().eval(s);
    let p2 = g.p2().eval(s);
    Tridiagonal {
        s,
        sub: vec![-p1; n - 1],
        diag: vec![s * s + p1 + p2; n],
        sup: vec![-p2; n - 1],
    }
}

/// Solve `S(s) E = D'` directly.
pub fn solve_direct(
    g: &ControllerGains,
    n: ChainSize,
    s: ComplexPoint,
    d: &DisturbanceVector,
) -> Result<Vec<ComplexPoint>> {
    if d.as_slice().len() != n.get() {
        return Err(Error::invalid("dprime", "length differs from the chain size"));
    }
    assemble_s(g, n, s).solve(d.as_slice())
}

/// Response to a disturbance acting on the first `leading.len()` errors
/// only, as a superposition of single-source solves.
pub fn leading_response(
    g: &ControllerGains,
    n: ChainSize,
    s: ComplexPoint,
    leading: &[ComplexPoint],
) -> Result<Vec<ComplexPoint>> {
    if leading.len() > n.get() {
        return Err(Error::invalid("leading", "more sources than vehicles"));
    }
    let op = assemble_s(g, n, s);
    let mut total = vec![ZERO; n.get()];
    for (j, &dj) in leading.iter().enumerate() {
        if dj == ZERO {
            continue;
        }
        let mut unit = vec![ZERO; n.get()];
        unit[j] = ONE;
        for (t, r) in total.iter_mut().zip(op.solve(&unit)?) {
            *t += r * dj;
        }
    }
    Ok(total)
}

fn flow_terms_checked(g: &ControllerGains, s: ComplexPoint) -> Result<(FlowTerms, Complex64, Complex64)> {
    let t = FlowTerms::at(g, s);
    if t.m.norm() <= DEGENERACY_RTOL * t.scale() {
        return Err(Error::Degenerate { what: "m = 0", s });
    }
    let c1 = t.c1()?;
    let c2 = t.c2()?;
    Ok((t, c1, c2))
}

/// `C^0 … C^(count-1)`.
fn powers(c: ComplexPoint, count: usize) -> Vec<ComplexPoint> {
    let mut out = Vec::with_capacity(count);
    let mut acc = ONE;
    for _ in 0..count {
        out.push(acc);
        acc *= c;
    }
    out
}

/// First and last columns of `Q = M S`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEntries {
    /// `q_{k,1}`, `k = 1..=N`.
    pub first: Vec<ComplexPoint>,
    /// `q_{k,N}`, `k = 1..=N`.
    pub last: Vec<ComplexPoint>,
}

impl BoundaryEntries {
    pub fn q11(&self) -> ComplexPoint {
        self.first[0]
    }

    pub fn q1n(&self) -> ComplexPoint {
        self.last[0]
    }

    pub fn qn1(&self) -> ComplexPoint {
        self.first[self.first.len() - 1]
    }

    pub fn qnn(&self) -> ComplexPoint {
        self.last[self.last.len() - 1]
    }

    /// `q11 qNN - q1N qN1`; the `(e_1, e_N)` pair is solvable iff nonzero.
    pub fn determinant(&self) -> ComplexPoint {
        self.q11() * self.qnn() - self.q1n() * self.qn1()
    }
}

/// Evaluate the defining relations of the boundary columns of `Q`:
///
/// ```text
/// m q_{1,1} = (s²+q) - C2 p1          m q_{k,1} = C1^(k-1) (s²+q) - C1^(k-2) p1
/// m q_{N,N} = (s²+q) - C1 p2          m q_{k,N} = C2^(N-k) (s²+q) - C2^(N-k-1) p2
/// ```
pub fn boundary_entries(g: &ControllerGains, n: ChainSize, s: ComplexPoint) -> Result<BoundaryEntries> {
    let (t, c1, c2) = flow_terms_checked(g, s)?;
    let n = n.get();
    let pc1 = powers(c1, n);
    let pc2 = powers(c2, n);
    let mut first = vec![ZERO; n];
    let mut last = vec![ZERO; n];
    for k in 1..=n {
        first[k - 1] = if k == 1 {
            (t.z - c2 * t.p1) / t.m
        } else {
            (pc1[k - 1] * t.z - pc1[k - 2] * t.p1) / t.m
        };
        last[k - 1] = if k == n {
            (t.z - c1 * t.p2) / t.m
        } else {
            (pc2[n - k] * t.z - pc2[n - k - 1] * t.p2) / t.m
        };
    }
    Ok(BoundaryEntries { first, last })
}

/// Build `M` densely, multiply by `S`, and return the largest deviation of
/// `Q` from its required structure: unit vectors in columns `2..N-1`, and
/// first/last columns equal to [`boundary_entries`].
pub fn verify_msq(g: &ControllerGains, n: ChainSize, s: ComplexPoint) -> Result<f64> {
    let size = n.get();
    if size > MSQ_MAX_N {
        return Err(Error::invalid(
            "n",
            format!("dense check capped at {MSQ_MAX_N}, got {size}"),
        ));
    }
    let (t, c1, c2) = flow_terms_checked(g, s)?;
    let pc1 = powers(c1, size);
    let pc2 = powers(c2, size);
    let inv_m = ONE / t.m;
    let m_entry = |k: usize, j: usize| -> ComplexPoint {
        let v = if j < k {
            pc1[k - j]
        } else if j > k {
            pc2[j - k]
        } else {
            ONE
        };
        v * inv_m
    };
    let op = assemble_s(g, n, s);
    let boundary = boundary_entries(g, n, s)?;

    let mut residual: f64 = 0.0;
    for k in 0..size {
        for j in 0..size {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(size - 1);
            let q: ComplexPoint = (lo..=hi).map(|i| m_entry(k, i) * op.get(i, j)).sum();
            let expected = if j == 0 {
                boundary.first[k]
            } else if j == size - 1 {
                boundary.last[k]
            } else if j == k {
                ONE
            } else {
                ZERO
            };
            residual = residual.max((q - expected).norm());
        }
    }
    Ok(residual)
}

/// Per-vehicle closed-form response to a leader disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResponse {
    /// `e_k`, `k = 1..=N`.
    pub errors: Vec<ComplexPoint>,
    /// `H_k = e_k / d'_1`.
    pub transfer: Vec<ComplexPoint>,
    /// `G_1 = H_1` and `G_k = H_k / C1^(k-2)` for `k >= 2`.
    pub prefactor: Vec<ComplexPoint>,
    /// Flow from the front, `f_k = C1 (f_{k-1} + d'_{k-1})`, `f_1 = 0`.
    pub front_flow: Vec<ComplexPoint>,
    /// Flow from the rear, `g_k = C2 (g_{k+1} + d'_{k+1})`, `g_N = 0`.
    pub rear_flow: Vec<ComplexPoint>,
}

pub fn front_flows(c1: ComplexPoint, dprime: &[ComplexPoint]) -> Vec<ComplexPoint> {
    let mut f = vec![ZERO; dprime.len()];
    for k in 1..dprime.len() {
        f[k] = c1 * (f[k - 1] + dprime[k - 1]);
    }
    f
}

pub fn rear_flows(c2: ComplexPoint, dprime: &[ComplexPoint]) -> Vec<ComplexPoint> {
    let n = dprime.len();
    let mut g = vec![ZERO; n];
    for k in (0..n.saturating_sub(1)).rev() {
        g[k] = c2 * (g[k + 1] + dprime[k + 1]);
    }
    g
}

/// Closed-form response of every spacing error to `d'_1` alone.
///
/// With `h = (s²+q+m)/2`, `C1 = p1/h`, `C2 = p2/h` and
/// `Δ = h² - p1 p2 (C1 C2)^N`:
///
/// ```text
/// H_1 = (h - p1 C2 (C1 C2)^(N-1)) / Δ
/// G_N = m C1 / Δ
/// G_k = (C1 - p2 C1² G_1 - p1 C2 (C1 C2)^(N-k) G_N) / m,   1 < k < N
/// ```
///
/// i.e. a term driven by the `e_1` boundary, the local front flow, and a
/// reflection from the `e_N` boundary.
pub fn closedform_chain_response(
    g: &ControllerGains,
    n: ChainSize,
    s: ComplexPoint,
    d1prime: ComplexPoint,
) -> Result<ChainResponse> {
    let size = n.require_closed_form()?;
    let (t, c1, c2) = flow_terms_checked(g, s)?;
    let product = c1 * c2;
    let pp = t.p1 * t.p2;
    let den = t.far * t.far - pp * product.powi(size as i32);
    if den.norm() <= DEGENERACY_RTOL * t.far.norm_sqr().max(pp.norm()) {
        return Err(Error::Degenerate {
            what: "closed-form denominator vanishes",
            s,
        });
    }

    let g1 = (t.far - t.p1 * c2 * product.powi(size as i32 - 1)) / den;
    let gn = t.m * c1 / den;
    let mut prefactor = Vec::with_capacity(size);
    prefactor.push(g1);
    for k in 2..size {
        let reflection = t.p1 * c2 * product.powi((size - k) as i32) * gn;
        prefactor.push((c1 - t.p2 * c1 * c1 * g1 - reflection) / t.m);
    }
    prefactor.push(gn);

    let pc1 = powers(c1, size.max(2) - 1);
    let transfer: Vec<ComplexPoint> = prefactor
        .iter()
        .enumerate()
        .map(|(i, &gk)| if i == 0 { gk } else { gk * pc1[i - 1] })
        .collect();
    let errors = transfer.iter().map(|h| h * d1prime).collect();
    let dprime = DisturbanceVector::leader(n, d1prime);

    Ok(ChainResponse {
        errors,
        transfer,
        prefactor,
        front_flow: front_flows(c1, dprime.as_slice()),
        rear_flow: rear_flows(c2, dprime.as_slice()),
    })
}

/// Minima over `ω ∈ {0} ∪ grid` of the quantities that must stay away
/// from zero for the closed forms to hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DenominatorMinima {
    pub min_abs_m: f64,
    pub argmin_m: f64,
    /// `min |s² + q + m|`.
    pub min_abs_far_sum: f64,
    pub argmin_far_sum: f64,
    /// `min |q11 qNN - q1N qN1|`, over points where `m ≠ 0`.
    pub min_abs_determinant: f64,
    pub argmin_determinant: f64,
}

pub fn check_denominator_conditions(g: &ControllerGains, n: ChainSize, grid: &FrequencyGrid) -> DenominatorMinima {
    let size = n.get() as i32;
    let mut out = DenominatorMinima {
        min_abs_m: f64::INFINITY,
        argmin_m: f64::NAN,
        min_abs_far_sum: f64::INFINITY,
        argmin_far_sum: f64::NAN,
        min_abs_determinant: f64::INFINITY,
        argmin_determinant: f64::NAN,
    };
    for omega in std::iter::once(0.0).chain(grid.omegas()) {
        let t = FlowTerms::at(g, Complex64::new(0.0, omega));
        let m = t.m.norm();
        if m < out.min_abs_m {
            out.min_abs_m = m;
            out.argmin_m = omega;
        }
        let sum = (t.z + t.m).norm();
        if sum < out.min_abs_far_sum {
            out.min_abs_far_sum = sum;
            out.argmin_far_sum = omega;
        }
        if m > 0.0 {
            // q11 qNN - q1N qN1 = (h² - p1 p2 (C1 C2)^N) / m²
            let product = t.near * t.near / (t.p1 * t.p2);
            let det = (t.far * t.far - t.p1 * t.p2 * product.powi(size)) / (t.m * t.m);
            let det = det.norm();
            if det.is_finite() && det < out.min_abs_determinant {
                out.min_abs_determinant = det;
                out.argmin_determinant = omega;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tf::AffineTerm;

    fn reference() -> ControllerGains {
        ControllerGains::from_coefficients(1.0, 1.0, 10.0, 100.0).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn n(v: usize) -> ChainSize {
        ChainSize::new(v).unwrap()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let scale = b.iter().map(|x| x.norm()).fold(0.0, f64::max);
        diff / scale
    }

    #[test]
    fn chain_size_validation() {
        assert!(ChainSize::new(0).is_err());
        let err = closedform_chain_response(&reference(), n(1), c(0.0, 1.0), ONE).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "n", .. }));
        assert!(DisturbanceVector::new(n(3), vec![ONE; 2]).is_err());
    }

    #[test]
    fn operator_at_dc() {
        let op = assemble_s(&reference(), n(2), ZERO);
        assert_eq!(
            op.to_dense(),
            vec![vec![c(11.0, 0.0), c(-10.0, 0.0)], vec![c(-1.0, 0.0), c(11.0, 0.0)]]
        );
    }

    #[test]
    fn operator_entries_match_elementary_terms() {
        let g = reference();
        let s = c(0.0, 1.0);
        let op = assemble_s(&g, n(3), s);
        let (p1, p2) = (g.p1().eval(s), g.p2().eval(s));
        for i in 0..3 {
            assert_eq!(op.diag[i], s * s + p1 + p2);
        }
        assert!(op.sub.iter().all(|&v| v == -p1));
        assert!(op.sup.iter().all(|&v| v == -p2));
        assert_eq!(op.get(0, 2), ZERO);
    }

    #[test]
    fn symmetric_operator_is_symmetric() {
        let g = ControllerGains::from_coefficients(2.0, 3.0, 2.0, 3.0).unwrap();
        let d = assemble_s(&g, n(5), c(0.2, 0.7)).to_dense();
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, d[j][i]);
            }
        }
    }

    #[test]
    fn vanishing_column_is_singular_after_a_swap() {
        // First column ~ (1e-20, 2e-20): the swap branch picks a pivot that is
        // still negligible next to the other entries.
        let op = Tridiagonal {
            s: ZERO,
            sub: vec![c(2e-20, 0.0), c(1.0, 0.0)],
            diag: vec![c(1e-20, 0.0), c(1.0, 0.0), c(3.0, 0.0)],
            sup: vec![c(1.0, 0.0), c(1.0, 0.0)],
        };
        assert!(matches!(op.solve(&[ONE, ONE, ONE]), Err(Error::Singular { .. })));
    }

    #[test]
    fn homogeneous_system_has_zero_solution() {
        let e = solve_direct(&reference(), n(7), c(0.0, 0.3), &DisturbanceVector::leader(n(7), ZERO)).unwrap();
        assert!(e.iter().all(|&v| v == ZERO));
    }

    #[test]
    fn two_by_two_matches_analytic_inverse() {
        let g = reference();
        let s = c(0.0, 1.0);
        let op = assemble_s(&g, n(2), s);
        let (a, b, cc, d) = (op.diag[0], op.sup[0], op.sub[0], op.diag[1]);
        let det = a * d - b * cc;
        let expected = [d / det, -cc / det];
        let e = solve_direct(&g, n(2), s, &DisturbanceVector::leader(n(2), ONE)).unwrap();
        assert!(rel_err(&e, &expected) < 1e-14);
    }

    #[test]
    fn pivoting_handles_a_zero_leading_diagonal() {
        let op = Tridiagonal {
            s: ZERO,
            sub: vec![ONE, ONE],
            diag: vec![ZERO, ONE, c(2.0, 0.0)],
            sup: vec![ONE, c(3.0, 0.0)],
        };
        let x = [c(1.0, 1.0), c(-2.0, 0.5), c(0.25, 0.0)];
        let rhs = op.mul_vec(&x);
        let sol = op.solve(&rhs).unwrap();
        assert!(rel_err(&sol, &x) < 1e-14);
    }

    #[test]
    fn singular_operator_is_reported() {
        // S(s) = [[z, -p2], [-p1, z]] is singular where z² = p1 p2.
        let g = ControllerGains::from_coefficients(1.0, 1.0, 1.0, 1.0).unwrap();
        // p1 = p2 = 1 + s, z = s² + 2 + 2s; z = ±p1 ⇒ s² + s + 1 = 0
        let s = c(-0.5, 3f64.sqrt() / 2.0);
        let err = solve_direct(&g, n(2), s, &DisturbanceVector::leader(n(2), ONE)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn direct_solution_has_small_residual() {
        let g = reference();
        for &(w, size) in &[(0.01, 5), (0.3, 30), (4.0, 64), (100.0, 11)] {
            let s = c(0.0, w);
            let d: Vec<Complex64> = (0..size).map(|k| c((k as f64).sin(), (k as f64 * 0.7).cos())).collect();
            let dv = DisturbanceVector::new(n(size), d.clone()).unwrap();
            let e = solve_direct(&g, n(size), s, &dv).unwrap();
            let r = assemble_s(&g, n(size), s).mul_vec(&e);
            let norm = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let diff: Vec<Complex64> = r.iter().zip(&d).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-10 * norm(&d));
        }
    }

    #[test]
    fn closed_form_matches_direct_solve() {
        let g = reference();
        let size = 10;
        let s = c(0.0, 0.3);
        let cf = closedform_chain_response(&g, n(size), s, ONE).unwrap();
        let direct = solve_direct(&g, n(size), s, &DisturbanceVector::leader(n(size), ONE)).unwrap();
        assert!(rel_err(&cf.errors, &direct) < 1e-8);
    }

    #[test]
    fn closed_form_smallest_chain() {
        let g = reference();
        let s = c(0.0, 0.3);
        let cf = closedform_chain_response(&g, n(2), s, ONE).unwrap();
        let direct = solve_direct(&g, n(2), s, &DisturbanceVector::leader(n(2), ONE)).unwrap();
        assert!(rel_err(&cf.errors, &direct) < 1e-12);
    }

    #[test]
    fn zero_leader_disturbance() {
        let cf = closedform_chain_response(&reference(), n(6), c(0.0, 2.0), ZERO).unwrap();
        assert!(cf.errors.iter().all(|&v| v == ZERO));
        assert!(cf.front_flow.iter().all(|&v| v == ZERO));
    }

    #[test]
    fn factorisation_and_flows() {
        let g = reference();
        let s = c(0.0, 0.8);
        let size = 9;
        let d1 = c(0.5, -1.0);
        let cf = closedform_chain_response(&g, n(size), s, d1).unwrap();
        let c1 = FlowTerms::at(&g, s).c1().unwrap();
        for k in 2..=size {
            let expect = cf.prefactor[k - 1] * c1.powi(k as i32 - 2);
            assert!((cf.transfer[k - 1] - expect).norm() <= 1e-14 * expect.norm().max(1e-300));
        }
        assert_eq!(cf.front_flow[0], ZERO);
        for k in 2..=size {
            let series = c1.powi(k as i32 - 1) * d1;
            assert!((cf.front_flow[k - 1] - series).norm() <= 1e-14 * series.norm());
        }
        assert!(cf.rear_flow.iter().all(|&v| v == ZERO));
    }

    #[test]
    fn flow_recursions_match_power_series() {
        let c1 = c(0.3, 0.4);
        let c2 = c(0.9, -0.2);
        let d: Vec<Complex64> = (0..7).map(|k| c(1.0 + k as f64, -(k as f64))).collect();
        let f = front_flows(c1, &d);
        let g = rear_flows(c2, &d);
        for k in 0..7 {
            let fs: Complex64 = (1..=k).map(|l| c1.powi(l as i32) * d[k - l]).sum();
            let gs: Complex64 = (1..7 - k).map(|l| c2.powi(l as i32) * d[k + l]).sum();
            assert!((f[k] - fs).norm() < 1e-12);
            assert!((g[k] - gs).norm() < 1e-12);
        }
    }

    #[test]
    fn interior_transfer_decays_geometrically() {
        let g = reference();
        for size in [5, 20] {
            for w in [0.05, 0.5, 3.0] {
                let s = c(0.0, w);
                let cf = closedform_chain_response(&g, n(size), s, ONE).unwrap();
                let r = FlowTerms::at(&g, s).c1().unwrap().norm();
                // away from the tail, H_{k+1} / H_k -> |C1|
                for k in 2..size.saturating_sub(3) {
                    let ratio = cf.transfer[k].norm() / cf.transfer[k - 1].norm();
                    assert!(
                        (ratio - r).abs() < 0.05 * r + 1e-12,
                        "N={size} w={w} k={k}: {ratio} vs {r}"
                    );
                }
            }
        }
    }

    #[test]
    fn leading_superposition_matches_full_solve() {
        let g = reference();
        let s = c(0.0, 0.7);
        let leading = [c(1.0, 0.0), c(0.0, -2.0), c(0.5, 0.5)];
        let mut full = vec![ZERO; 8];
        full[..3].copy_from_slice(&leading);
        let a = leading_response(&g, n(8), s, &leading).unwrap();
        let b = solve_direct(&g, n(8), s, &DisturbanceVector::new(n(8), full).unwrap()).unwrap();
        assert!(rel_err(&a, &b) < 1e-13);
    }

    #[test]
    fn index_reversal_symmetry() {
        let g = reference();
        let s = c(0.1, 0.9);
        let d: Vec<Complex64> = (0..6).map(|k| c(k as f64 - 2.0, 1.0)).collect();
        let e = solve_direct(&g, n(6), s, &DisturbanceVector::new(n(6), d.clone()).unwrap()).unwrap();
        let rev: Vec<Complex64> = d.iter().rev().copied().collect();
        let e_swapped = solve_direct(&g.swapped(), n(6), s, &DisturbanceVector::new(n(6), rev).unwrap()).unwrap();
        let back: Vec<Complex64> = e_swapped.into_iter().rev().collect();
        assert!(rel_err(&back, &e) < 1e-13);
    }

    #[test]
    fn boundary_defining_relation_and_geometry() {
        let g = reference();
        let s = c(0.0, 1.0);
        let t = FlowTerms::at(&g, s);
        let c1 = t.c1().unwrap();
        let b = boundary_entries(&g, n(4), s).unwrap();
        let lhs = t.m * b.q11() - (t.z - t.c2().unwrap() * t.p1);
        assert!(lhs.norm() < 1e-12 * t.z.norm());
        for k in 1..3 {
            let ratio = b.first[k + 1] / b.first[k];
            assert!((ratio - c1).norm() < 1e-12 * c1.norm());
        }
        // q_{k,1} = p2 C1^k / m
        for k in 2..=4 {
            let v = t.p2 * c1.powi(k as i32) / t.m;
            assert!((b.first[k - 1] - v).norm() < 1e-12 * v.norm());
        }
    }

    #[test]
    fn symmetric_boundary_entries() {
        let g = ControllerGains::from_coefficients(1.5, 0.5, 1.5, 0.5).unwrap();
        let b = boundary_entries(&g, n(5), c(0.0, 1.0)).unwrap();
        assert!((b.q11() - b.qnn()).norm() < 1e-13);
        assert!((b.q1n() - b.qn1()).norm() < 1e-13);
    }

    #[test]
    fn msq_structure() {
        let g = reference();
        assert!(verify_msq(&g, n(6), c(0.0, 1.0)).unwrap() < 1e-10);
        assert!(verify_msq(&g, n(2), c(0.0, 1.0)).unwrap() < 1e-10);
        assert!(verify_msq(&g, n(MSQ_MAX_N + 1), c(0.0, 1.0)).is_err());
    }

    #[test]
    fn degenerate_m_is_an_error() {
        let g = ControllerGains::from_coefficients(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            boundary_entries(&g, n(3), ZERO),
            Err(Error::Degenerate { .. })
        ));
        assert!(matches!(verify_msq(&g, n(3), ZERO), Err(Error::Degenerate { .. })));
        assert!(matches!(
            closedform_chain_response(&g, n(3), ZERO, ONE),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn determinant_matches_boundary_entries() {
        let g = reference();
        let grid = FrequencyGrid::new(0.5, 0.5 * (1.0 + 1e-9), 2).unwrap();
        let mins = check_denominator_conditions(&g, n(7), &grid);
        let b = boundary_entries(&g, n(7), c(0.0, 0.5)).unwrap();
        let at_dc = boundary_entries(&g, n(7), ZERO).unwrap().determinant().norm();
        let expect = b.determinant().norm().min(at_dc);
        assert!((mins.min_abs_determinant - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn denominator_conditions() {
        let mins = check_denominator_conditions(&reference(), n(12), &FrequencyGrid::default());
        assert!(mins.min_abs_m > 0.0);
        assert!(mins.min_abs_far_sum > 0.0);
        assert!(mins.min_abs_determinant > 0.0);

        let sym = ControllerGains::from_coefficients(1.0, 1.0, 1.0, 1.0).unwrap();
        let mins = check_denominator_conditions(&sym, n(12), &FrequencyGrid::default());
        assert_eq!(mins.min_abs_m, 0.0);
        assert_eq!(mins.argmin_m, 0.0);
    }

    #[test]
    fn denominator_minima_move_continuously_with_alpha() {
        let base = AffineTerm::new(1.0, 1.0).unwrap();
        let grid = FrequencyGrid::default();
        let at = |alpha: f64| {
            let g = ControllerGains::asymmetric_family(base, 2.0, alpha).unwrap();
            check_denominator_conditions(&g, n(12), &grid)
        };
        let mid = at(5.0);
        for alpha in [4.95, 5.05] {
            let other = at(alpha);
            for (a, b) in [
                (mid.min_abs_m, other.min_abs_m),
                (mid.min_abs_far_sum, other.min_abs_far_sum),
                (mid.min_abs_determinant, other.min_abs_determinant),
            ] {
                assert!(a > 0.0 && b > 0.0);
                assert!((a - b).abs() < 0.1 * a, "{a} vs {b}");
            }
        }
    }
}
