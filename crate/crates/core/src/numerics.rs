//! Dense 2×2 linear algebra used by the inverter model.
//!
//! Everything here works on fixed-size value types: the plant has two
//! states, so the matrix exponential, the zero-order-hold integral and the
//! Lyapunov solve all admit closed forms (Cayley–Hamilton) and never need a
//! general n×n routine.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::plant::InverterParams;

/// Relative eigenvalue separation below which `expm2` switches from the
/// eigen-based formula to the scaled Taylor series.
const DEGENERATE_EIG_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x1: f64,
    pub x2: f64,
}

impl Vec2 {
    pub const ZERO: Self = Self { x1: 0.0, x2: 0.0 };

    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x1.mul_add(other.x1, self.x2 * other.x2)
    }

    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x1 * k, self.x2 * k)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x1.abs().max(self.x2.abs())
    }
}

impl Add for Vec2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl Sub for Vec2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl Neg for Vec2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x1, -self.x2)
    }
}

impl Mat2 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Self = Self::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn diag(d1: f64, d2: f64) -> Self {
        Self::new(d1, 0.0, 0.0, d2)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        // fma keeps the difference of products accurate near singularity
        let p = self.a12 * self.a21;
        let err = self.a12.mul_add(self.a21, -p);
        self.a11.mul_add(self.a22, -p) - err
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.a11 * k, self.a12 * k, self.a21 * k, self.a22 * k)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }

    /// Induced 1-norm (max column sum).
    pub fn norm1(&self) -> f64 {
        (self.a11.abs() + self.a21.abs()).max(self.a12.abs() + self.a22.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.a11.mul_add(v.x1, self.a12 * v.x2),
            self.a21.mul_add(v.x1, self.a22 * v.x2),
        )
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Self::new(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d))
    }

    pub fn row1(&self) -> Vec2 {
        Vec2::new(self.a11, self.a12)
    }

    pub fn row2(&self) -> Vec2 {
        Vec2::new(self.a21, self.a22)
    }
}

impl Add for Mat2 {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Self::new(self.a11 + r.a11, self.a12 + r.a12, self.a21 + r.a21, self.a22 + r.a22)
    }
}

impl Sub for Mat2 {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Self::new(self.a11 - r.a11, self.a12 - r.a12, self.a21 - r.a21, self.a22 - r.a22)
    }
}

impl Mul for Mat2 {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        Self::new(
            self.a11.mul_add(r.a11, self.a12 * r.a21),
            self.a11.mul_add(r.a12, self.a12 * r.a22),
            self.a21.mul_add(r.a11, self.a22 * r.a21),
            self.a21.mul_add(r.a12, self.a22 * r.a22),
        )
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        self.mul_vec(v)
    }
}

/// Symmetric positive-definite solution of `AᵀP + PA = −αI`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapMatrix {
    p11: f64,
    p12: f64,
    p22: f64,
    alpha: f64,
}

impl LyapMatrix {
    /// Checks positive definiteness through the leading principal minors.
    pub fn new(p11: f64, p12: f64, p22: f64, alpha: f64) -> Result<Self> {
        ensure_positive("alpha", alpha)?;
        for (name, v) in [("p11", p11), ("p12", p12), ("p22", p22)] {
            ensure_finite(name, v)?;
        }
        let minor2 = p11.mul_add(p22, -(p12 * p12));
        if p11 <= 0.0 || minor2 <= 0.0 {
            return Err(Error::NoSolution(format!(
                "P = [[{p11}, {p12}], [{p12}, {p22}]] is not positive definite"
            )));
        }
        Ok(Self { p11, p12, p22, alpha })
    }

    pub fn p11(&self) -> f64 {
        self.p11
    }

    pub fn p12(&self) -> f64 {
        self.p12
    }

    pub fn p22(&self) -> f64 {
        self.p22
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn as_mat2(&self) -> Mat2 {
        Mat2::new(self.p11, self.p12, self.p12, self.p22)
    }

    /// `eᵀ P e`.
    pub fn quad_form(&self, e: Vec2) -> f64 {
        let pe = self.as_mat2().mul_vec(e);
        e.dot(pe)
    }

    /// Max-norm of `AᵀP + PA + αI`.
    pub fn residual(&self, a: &Mat2) -> f64 {
        let p = self.as_mat2();
        // each entry is a short sum of products; compensated dot keeps the
        // evaluation error well below the tolerance we test against
        let r11 = dot_exact(&[(2.0 * a.a11, p.a11), (2.0 * a.a21, p.a21), (self.alpha, 1.0)]);
        let r12 = dot_exact(&[(a.a12, p.a11), (a.a11 + a.a22, p.a12), (a.a21, p.a22)]);
        let r22 = dot_exact(&[(2.0 * a.a12, p.a12), (2.0 * a.a22, p.a22), (self.alpha, 1.0)]);
        r11.abs().max(r12.abs()).max(r22.abs())
    }
}

/// Sum of products with error-free transformations (Ogita–Rump–Oishi Dot2).
fn dot_exact(terms: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &(x, y) in terms {
        let p = x * y;
        let pe = x.mul_add(y, -p);
        let s = sum + p;
        let bb = s - sum;
        let se = (sum - (s - bb)) + (p - bb);
        sum = s;
        comp += pe + se;
    }
    sum + comp
}

/// Exact one-interval solution operator of `ẋ = Ax + Bu` with `u` held.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteMap {
    pub phi: Mat2,
    pub gd: Vec2,
    pub h: f64,
}

impl DiscreteMap {
    pub fn apply(&self, x: Vec2, u: f64) -> Vec2 {
        let px = self.phi.mul_vec(x);
        Vec2::new(self.gd.x1.mul_add(u, px.x1), self.gd.x2.mul_add(u, px.x2))
    }
}

/// `e^{m t}` for a 2×2 matrix.
///
/// Uses the Cayley–Hamilton form `e^{X} = e^{s}(c(q)·I + S(q)·(X − sI))`
/// with `s = tr X / 2` and `q² = ((x11 − x22)/2)² + x12·x21`; `c`, `S` are
/// `cosh`, `sinh(q)/q` (or `cos`, `sin(w)/w` when `q² < 0`). When the two
/// eigenvalues nearly coincide the scaled Taylor series is used instead.
pub fn expm2(m: &Mat2, t: f64) -> Result<Mat2> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    ensure_finite("t", t)?;
    let x = m.scale(t);
    let norm = x.max_abs();
    if norm == 0.0 {
        return Ok(Mat2::IDENTITY);
    }

    let s = 0.5 * x.trace();
    let half_diff = 0.5 * (x.a11 - x.a22);
    let q2 = half_diff.mul_add(half_diff, x.a12 * x.a21);
    // |λ1 − λ2| = 2·sqrt|q²|
    if 2.0 * q2.abs().sqrt() < DEGENERATE_EIG_TOL * norm {
        return Ok(expm_taylor(&x));
    }

    let (c, sinc) = if q2 > 0.0 {
        let q = q2.sqrt();
        (q.cosh(), q.sinh() / q)
    } else {
        let w = (-q2).sqrt();
        (w.cos(), w.sin() / w)
    };
    let es = s.exp();
    let n = x - Mat2::IDENTITY.scale(s);
    Ok((Mat2::IDENTITY.scale(c) + n.scale(sinc)).scale(es))
}

/// Scaling-and-squaring Taylor series for `e^{x}`.
fn expm_taylor(x: &Mat2) -> Mat2 {
    let norm = x.norm1();
    let mut squarings = 0u32;
    let mut scaled = *x;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
        scaled = x.scale(0.5f64.powi(squarings as i32));
    }
    let mut sum = Mat2::IDENTITY;
    let mut term = Mat2::IDENTITY;
    for k in 1..=30 {
        term = (term * scaled).scale(1.0 / k as f64);
        sum = sum + term;
        if term.max_abs() <= f64::EPSILON * 1e-3 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Zero-order-hold discretization of `ẋ = ax + bu` over `h` seconds.
///
/// `phi = e^{ah}` and `gd = (∫₀ʰ e^{as} ds)·b`. The integral equals
/// `a⁻¹(phi − I)` for invertible `a`; that expression loses digits to
/// cancellation when `‖a‖h` is small, so short intervals use the series
/// `h·Σ (ah)^k/(k+1)!` and singular `a` uses the Cayley–Hamilton closed form.
pub fn zoh_discretize(a: &Mat2, b: Vec2, h: f64) -> Result<DiscreteMap> {
    ensure_finite("h", h)?;
    if h < 0.0 {
        return Err(Error::InvalidArgument(format!("step h must be >= 0, got {h}")));
    }
    if !b.is_finite() {
        return Err(Error::InvalidArgument("input vector has non-finite entries".into()));
    }
    let phi = expm2(a, h)?;
    let integral = hold_integral(a, h, &phi);
    Ok(DiscreteMap { phi, gd: integral.mul_vec(b), h })
}

fn hold_integral(a: &Mat2, h: f64, phi: &Mat2) -> Mat2 {
    let x = a.scale(h);
    let norm = x.norm1();
    if norm <= 1.0 {
        // h·φ1(x), φ1(x) = Σ x^k/(k+1)!
        let mut sum = Mat2::IDENTITY;
        let mut term = Mat2::IDENTITY;
        for k in 1..=40 {
            term = (term * x).scale(1.0 / (k + 1) as f64);
            sum = sum + term;
            if term.max_abs() <= f64::EPSILON * 1e-3 * sum.max_abs() {
                break;
            }
        }
        return sum.scale(h);
    }
    let det = a.det();
    if det.abs() > 1e-12 * a.max_abs() * a.max_abs() {
        if let Some(inv) = a.inverse() {
            return inv * (*phi - Mat2::IDENTITY);
        }
    }
    // singular: x² = τx, so φ1(x) = I + x·(e^τ − 1 − τ)/τ²
    let tau = x.trace();
    let coeff = if tau.abs() < 1e-5 {
        0.5 + tau / 6.0 + tau * tau / 24.0
    } else {
        (tau.exp_m1() - tau) / (tau * tau)
    };
    (Mat2::IDENTITY + x.scale(coeff)).scale(h)
}

/// True iff both eigenvalues of `a` have strictly negative real part.
pub fn is_hurwitz(a: &Mat2) -> bool {
    a.is_finite() && a.trace() < 0.0 && a.det() > 0.0
}

/// Solves `AᵀP + PA = −αI` for symmetric `P`.
///
/// The three unknowns `(p11, p12, p22)` satisfy
/// ```text
/// [2a11   2a21      0   ] [p11]   [−α]
/// [a12    a11+a22   a21 ] [p12] = [ 0]
/// [0      2a12      2a22] [p22]   [−α]
/// ```
/// which is solved by Gaussian elimination with partial pivoting.
pub fn solve_lyapunov(a: &Mat2, alpha: f64) -> Result<LyapMatrix> {
    ensure_positive("alpha", alpha)?;
    if !is_hurwitz(a) {
        return Err(Error::NoSolution(format!(
            "A is not Hurwitz (trace {}, det {})",
            a.trace(),
            a.det()
        )));
    }
    let mut m = [
        [2.0 * a.a11, 2.0 * a.a21, 0.0, -alpha],
        [a.a12, a.a11 + a.a22, a.a21, 0.0],
        [0.0, 2.0 * a.a12, 2.0 * a.a22, -alpha],
    ];
    let p = gauss_solve3(&mut m)
        .ok_or_else(|| Error::NoSolution("singular Lyapunov system".into()))?;
    LyapMatrix::new(p[0], p[1], p[2], alpha)
}

/// Closed-form Lyapunov matrix for the RLC plant:
///
/// ```text
/// P = (α/2)·[[RC + RC²/L, −C], [−C, RL + L/R + RC]]
/// ```
pub fn closed_form_p(params: &InverterParams, alpha: f64) -> Result<LyapMatrix> {
    ensure_positive("alpha", alpha)?;
    ensure_positive("R", params.r)?;
    ensure_positive("L", params.l)?;
    ensure_positive("C", params.c)?;
    let InverterParams { r, l, c, .. } = *params;
    let k = 0.5 * alpha;
    let p11 = k * (r * c + r * c * c / l);
    let p12 = -k * c;
    let p22 = k * (r * l + l / r + r * c);
    LyapMatrix::new(p11, p12, p22, alpha)
}

fn gauss_solve3(m: &mut [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        if m[pivot][col] == 0.0 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = m[row][3];
        for k in row + 1..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
