//! Sinusoidal reference generation.
//!
//! A rotating oscillator `ż = Θz`, `Θ = [[0, ω], [−ω, 0]]`, started at
//! `z(0) = (0, V_m)` produces `z(t) = V_m·(sin ωt, cos ωt)`. The state
//! reference is the linear image `x_ref = Πz`, and `Γ` is the feed-forward
//! row satisfying `ΠΘ = AΠ + BΓ`: `Γz` is the normalized terminal voltage
//! `V_t/(V_dc/2)` that keeps the plant exactly on the reference.

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::numerics::{Mat2, Vec2};
use crate::plant::{InverterParams, StateVec};

/// Target sinusoid `v_C,ref(t) = V_m sin(ωt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceSpec {
    /// Amplitude, volts.
    pub v_m: f64,
    /// Angular frequency, rad/s.
    pub omega: f64,
}

impl ReferenceSpec {
    /// 177 V at 60 Hz.
    pub const NOMINAL: Self = Self { v_m: 177.0, omega: 120.0 * std::f64::consts::PI };

    pub fn new(v_m: f64, omega: f64) -> Result<Self> {
        let s = Self { v_m, omega };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("V_m", self.v_m)?;
        if self.v_m < 0.0 {
            return Err(Error::InvalidArgument(format!("V_m must be >= 0, got {}", self.v_m)));
        }
        ensure_positive("omega", self.omega)
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self::NOMINAL
    }
}

/// Oscillator state, volts. Its norm is the reference amplitude.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OscState {
    pub z1: f64,
    pub z2: f64,
}

impl OscState {
    pub const fn new(z1: f64, z2: f64) -> Self {
        Self { z1, z2 }
    }

    /// Phase-zero start, `z(0) = (0, V_m)`.
    pub fn initial(v_m: f64) -> Self {
        Self::new(0.0, v_m)
    }

    /// Start at phase `ωt = phase`: `V_m·(sin, cos)`.
    pub fn at_phase(v_m: f64, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        Self::new(v_m * s, v_m * c)
    }

    pub fn norm(&self) -> f64 {
        self.z1.hypot(self.z2)
    }

    /// Phase angle `atan2(z1, z2)`, i.e. `ωt` modulo 2π.
    pub fn phase(&self) -> f64 {
        self.z1.atan2(self.z2)
    }

    pub fn as_vec2(&self) -> Vec2 {
        Vec2::new(self.z1, self.z2)
    }
}

/// Precomputed rotation by `ωh`, the exact flow of `Θ` over one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    cos: f64,
    sin: f64,
}

impl Rotation {
    pub fn new(omega: f64, h: f64) -> Self {
        let (sin, cos) = (omega * h).sin_cos();
        Self { cos, sin }
    }

    #[inline]
    pub fn apply(&self, z: OscState) -> OscState {
        OscState::new(
            self.cos.mul_add(z.z1, self.sin * z.z2),
            self.cos.mul_add(z.z2, -self.sin * z.z1),
        )
    }
}

/// Skew-symmetric oscillator generator `Θ`.
pub fn theta(omega: f64) -> Mat2 {
    Mat2::new(0.0, omega, -omega, 0.0)
}

/// Advances the oscillator by `h` seconds with an exact rotation.
pub fn osc_step(z: OscState, omega: f64, h: f64) -> Result<OscState> {
    ensure_finite("h", h)?;
    if h < 0.0 {
        return Err(Error::InvalidArgument(format!("h must be >= 0, got {h}")));
    }
    if h == 0.0 {
        return Ok(z);
    }
    Ok(Rotation::new(omega, h).apply(z))
}

/// `Π = [[1, 0], [1/R, ωC]]`.
pub fn make_pi(params: &InverterParams, omega: f64) -> Mat2 {
    Mat2::new(1.0, 0.0, 1.0 / params.r, omega * params.c)
}

/// Feed-forward row acting on `z = (z1, z2)`.
///
/// With `z = V_m(sin ωt, cos ωt)` the terminal voltage needed to hold the
/// reference is `V_m[(1 − ω²LC) sin ωt + (ωL/R) cos ωt]`, so
/// `g1 = 2(1 − ω²LC)/V_dc` (sine component) and `g2 = 2ωL/(R V_dc)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainRow {
    pub g1: f64,
    pub g2: f64,
}

impl GainRow {
    pub fn norm(&self) -> f64 {
        self.g1.hypot(self.g2)
    }

    /// Scalar `Γz`.
    pub fn apply(&self, z: OscState) -> f64 {
        self.g1.mul_add(z.z1, self.g2 * z.z2)
    }
}

pub fn make_gamma(params: &InverterParams, omega: f64) -> GainRow {
    let InverterParams { r, l, c, v_dc } = *params;
    let k = 2.0 / v_dc;
    GainRow { g1: k * (1.0 - omega * omega * l * c), g2: k * omega * l / r }
}

/// `1 − V_m‖Γ‖₂`; positive iff the switching policy is certified.
pub fn stability_margin(params: &InverterParams, spec: &ReferenceSpec) -> f64 {
    1.0 - spec.v_m * make_gamma(params, spec.omega).norm()
}

/// `x_ref = Πz`.
pub fn reference_state(z: OscState, pi: &Mat2) -> StateVec {
    pi.mul_vec(z.as_vec2()).into()
}

/// Rescales the oscillator to a new amplitude, keeping its phase.
pub fn set_amplitude(z: OscState, v_m_new: f64) -> Result<OscState> {
    ensure_finite("V_m", v_m_new)?;
    if v_m_new < 0.0 {
        return Err(Error::InvalidArgument(format!("V_m must be >= 0, got {v_m_new}")));
    }
    let n = z.norm();
    if v_m_new == 0.0 {
        return Ok(OscState::new(0.0, 0.0));
    }
    if n == 0.0 {
        return Err(Error::InvalidState(
            "cannot rescale a zero oscillator state to a positive amplitude".into(),
        ));
    }
    let k = v_m_new / n;
    Ok(OscState::new(z.z1 * k, z.z2 * k))
}
