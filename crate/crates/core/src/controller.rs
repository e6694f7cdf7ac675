//! Sign-based switching policy `u = −sign(BᵀPe)`.
//!
//! `sign(0) = +1`, so an exactly zero switching function selects `u = −1`.

use log::warn;

use crate::error::{ensure_positive, Error, Result};
use crate::numerics::{closed_form_p, is_hurwitz, LyapMatrix, Vec2};
use crate::plant::{build_state_matrices, ErrorVec, InverterParams, SwitchCmd};
use crate::reference::{stability_margin, ReferenceSpec};

/// Default scaling of `Q = −αI`. The policy is invariant to `α`.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Everything the policy needs, rebuilt wholesale whenever the controller's
/// knowledge of the load or the reference changes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerState {
    p: LyapMatrix,
    b: Vec2,
    margin: f64,
    alpha: f64,
    /// `Pᵀ B`, so that `BᵀPe = gain·e`.
    gain: Vec2,
}

impl ControllerState {
    pub fn p(&self) -> &LyapMatrix {
        &self.p
    }

    pub fn b(&self) -> Vec2 {
        self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Cached `1 − V_m‖Γ‖₂`.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Whether the gain condition `V_m‖Γ‖₂ < 1` holds.
    pub fn certified(&self) -> bool {
        self.margin > 0.0
    }

    /// Switching function `BᵀPe`.
    #[inline]
    pub fn switching_function(&self, e: ErrorVec) -> f64 {
        self.gain.dot(e.as_vec2())
    }

    /// `V(e) = eᵀPe`.
    #[inline]
    pub fn lyapunov(&self, e: ErrorVec) -> f64 {
        self.p.quad_form(e.as_vec2())
    }

    /// Same `P` and `B`, margin recomputed for a new reference.
    pub fn with_reference(&self, params: &InverterParams, spec: &ReferenceSpec) -> Self {
        Self { margin: stability_margin(params, spec), ..*self }
    }
}

/// Builds the controller for `params`, with `P` from the closed form.
///
/// A non-positive margin is not an error: the state is returned with
/// [`ControllerState::certified`] false so that boundary sweeps can run.
pub fn retune(params_new: &InverterParams, spec: &ReferenceSpec, alpha: f64) -> Result<ControllerState> {
    params_new.validate()?;
    spec.validate()?;
    ensure_positive("alpha", alpha)?;
    let (a, b) = build_state_matrices(params_new);
    if !is_hurwitz(&a) {
        return Err(Error::NoSolution(format!("A is not Hurwitz for {params_new:?}")));
    }
    let p = closed_form_p(params_new, alpha)?;
    let margin = stability_margin(params_new, spec);
    if margin <= 0.0 {
        warn!(
            "gain condition violated: V_m·‖Γ‖ = {:.4} >= 1 (V_m = {}, ω = {})",
            1.0 - margin,
            spec.v_m,
            spec.omega
        );
    }
    let pm = p.as_mat2();
    let gain = pm.transpose().mul_vec(b);
    Ok(ControllerState { p, b, margin, alpha, gain })
}

/// `u = −sign(BᵀPe)` with `sign(0) = +1`.
#[inline]
pub fn control(e: ErrorVec, ctrl: &ControllerState) -> SwitchCmd {
    if ctrl.switching_function(e) >= 0.0 {
        SwitchCmd::Neg
    } else {
        SwitchCmd::Pos
    }
}
