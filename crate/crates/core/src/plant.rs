//! Switched half-bridge inverter with an LC filter feeding a resistive load.
//!
//! With `x = (v_C, i_L)` and switch command `u ∈ {+1, −1}`:
//!
//! ```text
//! ẋ = A x + B u,   A = [[−1/(RC), 1/C], [−1/L, 0]],   B = (0, V_dc/(2L))
//! ```
//!
//! The model is LTI between switch decisions, so a held command is
//! propagated exactly with a precomputed [`DiscreteMap`].

use crate::error::{ensure_positive, Error, Result};
use crate::numerics::{DiscreteMap, Mat2, Vec2};

/// Physical constants of the inverter and its load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverterParams {
    /// Load resistance, ohms.
    pub r: f64,
    /// Filter inductance, henries.
    pub l: f64,
    /// Filter capacitance, farads.
    pub c: f64,
    /// DC supply voltage, volts.
    pub v_dc: f64,
}

impl InverterParams {
    /// Reference design: 50 Ω, 450 µH, 2.5 mF, 1200 V.
    ///
    /// The capacitance is commonly tabulated as "2.5 mC"; it is a
    /// capacitance and is read here as 2.5 mF.
    pub const NOMINAL: Self = Self { r: 50.0, l: 450e-6, c: 2.5e-3, v_dc: 1200.0 };

    pub fn new(r: f64, l: f64, c: f64, v_dc: f64) -> Result<Self> {
        let p = Self { r, l, c, v_dc };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("R", self.r)?;
        ensure_positive("L", self.l)?;
        ensure_positive("C", self.c)?;
        ensure_positive("V_dc", self.v_dc)
    }

    pub fn with_r(self, r: f64) -> Self {
        Self { r, ..self }
    }

    /// RC time constant, seconds.
    pub fn rc(&self) -> f64 {
        self.r * self.c
    }

    /// Undamped LC resonance, rad/s.
    pub fn resonance(&self) -> f64 {
        1.0 / (self.l * self.c).sqrt()
    }
}

impl Default for InverterParams {
    fn default() -> Self {
        Self::NOMINAL
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateVec {
    /// Capacitor voltage, volts.
    pub v_c: f64,
    /// Inductor current, amperes.
    pub i_l: f64,
}

impl StateVec {
    pub const fn new(v_c: f64, i_l: f64) -> Self {
        Self { v_c, i_l }
    }

    pub fn as_vec2(self) -> Vec2 {
        Vec2::new(self.v_c, self.i_l)
    }

    pub fn is_finite(self) -> bool {
        self.v_c.is_finite() && self.i_l.is_finite()
    }
}

impl From<Vec2> for StateVec {
    fn from(v: Vec2) -> Self {
        Self::new(v.x1, v.x2)
    }
}

/// Tracking error `x − x_ref` in plant coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorVec {
    pub v_c: f64,
    pub i_l: f64,
}

impl ErrorVec {
    pub const fn new(v_c: f64, i_l: f64) -> Self {
        Self { v_c, i_l }
    }

    pub fn as_vec2(self) -> Vec2 {
        Vec2::new(self.v_c, self.i_l)
    }

    pub fn norm(self) -> f64 {
        self.v_c.hypot(self.i_l)
    }
}

/// Switch position: `Pos` is SW1 on / SW2 off (`u = +1`), `Neg` the reverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SwitchCmd {
    Pos,
    Neg,
}

impl SwitchCmd {
    pub fn value(self) -> f64 {
        match self {
            SwitchCmd::Pos => 1.0,
            SwitchCmd::Neg => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            SwitchCmd::Pos => 1,
            SwitchCmd::Neg => -1,
        }
    }
}

impl TryFrom<i32> for SwitchCmd {
    type Error = Error;

    fn try_from(u: i32) -> Result<Self> {
        match u {
            1 => Ok(SwitchCmd::Pos),
            -1 => Ok(SwitchCmd::Neg),
            other => Err(Error::InvalidArgument(format!("switch command must be ±1, got {other}"))),
        }
    }
}

/// `(A, B)` of the switched model.
pub fn build_state_matrices(params: &InverterParams) -> (Mat2, Vec2) {
    let InverterParams { r, l, c, v_dc } = *params;
    let a = Mat2::new(-1.0 / (r * c), 1.0 / c, -1.0 / l, 0.0);
    let b = Vec2::new(0.0, v_dc / (2.0 * l));
    (a, b)
}

/// Propagates the state over one hold interval with `cmd` held.
pub fn step(state: StateVec, cmd: SwitchCmd, map: &DiscreteMap) -> StateVec {
    map.apply(state.as_vec2(), cmd.value()).into()
}

/// Steady state reached under a constant command: `−A⁻¹Bu`.
pub fn equilibrium(params: &InverterParams, cmd: SwitchCmd) -> StateVec {
    let u = cmd.value();
    StateVec::new(u * params.v_dc / 2.0, u * params.v_dc / (2.0 * params.r))
}

/// Classical fixed-step RK4 over one hold interval, split into `substeps`.
///
/// Used as an integrator-independence cross-check for the exact stepper.
pub fn step_rk4(state: StateVec, cmd: SwitchCmd, a: &Mat2, b: Vec2, h: f64, substeps: usize) -> StateVec {
    let bu = b.scale(cmd.value());
    let f = |x: Vec2| a.mul_vec(x) + bu;
    let n = substeps.max(1);
    let dt = h / n as f64;
    let mut x = state.as_vec2();
    for _ in 0..n {
        let k1 = f(x);
        let k2 = f(x + k1.scale(0.5 * dt));
        let k3 = f(x + k2.scale(0.5 * dt));
        let k4 = f(x + k3.scale(dt));
        x = x + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0);
    }
    x.into()
}
