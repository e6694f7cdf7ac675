//! Droop outer loop: measured active/reactive power shifts the reference
//! frequency and amplitude,
//!
//! ```text
//! ω   = ω*   + k_p (P* − P)
//! V_m = V_m* + k_q (Q* − Q)
//! ```
//!
//! Power is measured over a sliding window of exactly one nominal period:
//! `P` is the window mean of `v_C·i_L`, `Q` the window mean of
//! `v_C(t − T/4)·i_L(t)` with the delayed voltage read circularly inside the
//! window. Both are exact for sinusoids sampled over a whole period.

use std::f64::consts::TAU;

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::plant::InverterParams;

/// Default sampling interval of the measurement window (one control tick).
pub const DEFAULT_SAMPLE_PERIOD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DroopParams {
    /// Nominal frequency, rad/s.
    pub omega_star: f64,
    /// Nominal amplitude, volts.
    pub v_m_star: f64,
    /// Frequency droop, (rad/s)/W.
    pub k_p: f64,
    /// Amplitude droop, V/VAR.
    pub k_q: f64,
    /// Active-power setpoint, W.
    pub p_star: f64,
    /// Reactive-power setpoint, VAR.
    pub q_star: f64,
}

impl DroopParams {
    /// Setpoints `(P*, Q*)` derived from the nominal operating point.
    pub fn for_operating_point(
        params: &InverterParams,
        v_m_star: f64,
        omega_star: f64,
        k_p: f64,
        k_q: f64,
        sample_period: f64,
    ) -> Result<Self> {
        let (p_star, q_star) = steady_state_targets_sampled(params, v_m_star, omega_star, sample_period)?;
        let dp = Self { omega_star, v_m_star, k_p, k_q, p_star, q_star };
        dp.validate()?;
        Ok(dp)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega_star", self.omega_star)?;
        ensure_finite("v_m_star", self.v_m_star)?;
        ensure_finite("p_star", self.p_star)?;
        ensure_finite("q_star", self.q_star)?;
        for (name, k) in [("k_p", self.k_p), ("k_q", self.k_q)] {
            ensure_finite(name, k)?;
            if k < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {k}")));
            }
        }
        if self.v_m_star < 0.0 {
            return Err(Error::InvalidArgument(format!("v_m_star must be >= 0, got {}", self.v_m_star)));
        }
        Ok(())
    }
}

/// One nominal period of `(v_C, i_L)` samples.
#[derive(Clone, Debug)]
pub struct PowerWindow {
    samples: Vec<(f64, f64)>,
    /// Next write position; the oldest sample once the window is full.
    head: usize,
    filled: usize,
    sample_period: f64,
}

impl PowerWindow {
    /// Window covering one period of `omega` at the given sampling interval.
    pub fn new(omega: f64, sample_period: f64) -> Result<Self> {
        ensure_positive("omega", omega)?;
        ensure_positive("sample_period", sample_period)?;
        let capacity = (TAU / omega / sample_period).round() as usize;
        if capacity < 4 {
            return Err(Error::InvalidArgument(format!(
                "window of {capacity} samples cannot resolve a quarter period"
            )));
        }
        Ok(Self { samples: vec![(0.0, 0.0); capacity], head: 0, filled: 0, sample_period })
    }

    pub fn capacity(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.samples.len()
    }

    /// Samples by which the reactive-power voltage is delayed (a quarter period).
    pub fn quarter_delay(&self) -> usize {
        (self.samples.len() as f64 / 4.0).round() as usize
    }

    #[inline]
    pub fn push(&mut self, v_c: f64, i_l: f64) {
        let n = self.samples.len();
        self.samples[self.head] = (v_c, i_l);
        self.head = if self.head + 1 == n { 0 } else { self.head + 1 };
        if self.filled < n {
            self.filled += 1;
        }
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.filled = 0;
    }
}

/// `(P, Q)` over the window; `NotReady` until a full period is collected.
pub fn measure_power(w: &PowerWindow) -> Result<(f64, f64)> {
    let n = w.samples.len();
    if !w.is_full() {
        return Err(Error::NotReady { filled: w.filled, capacity: n });
    }
    let d = w.quarter_delay();
    let mut p = 0.0;
    let mut q = 0.0;
    for j in 0..n {
        let (v, i) = w.samples[(w.head + j) % n];
        let (v_delayed, _) = w.samples[(w.head + j + n - d) % n];
        p += v * i;
        q += v_delayed * i;
    }
    Ok((p / n as f64, q / n as f64))
}

/// The affine droop law; returns `(ω, V_m)`.
pub fn droop_update(dp: &DroopParams, p: f64, q: f64) -> (f64, f64) {
    (
        dp.omega_star + dp.k_p * (dp.p_star - p),
        dp.v_m_star + dp.k_q * (dp.q_star - q),
    )
}

/// `(P*, Q*)` at the default 1 µs sampling.
pub fn steady_state_targets(params: &InverterParams, v_m_star: f64, omega_star: f64) -> Result<(f64, f64)> {
    steady_state_targets_sampled(params, v_m_star, omega_star, DEFAULT_SAMPLE_PERIOD)
}

/// `P* = V_m*²/R`; `Q*` is what [`measure_power`] reads on one sampled
/// period of the reference pair `(V sin ωt, V/R sin ωt + ωCV cos ωt)`.
pub fn steady_state_targets_sampled(
    params: &InverterParams,
    v_m_star: f64,
    omega_star: f64,
    sample_period: f64,
) -> Result<(f64, f64)> {
    params.validate()?;
    let p_star = v_m_star * v_m_star / params.r;
    let mut w = PowerWindow::new(omega_star, sample_period)?;
    for k in 0..w.capacity() {
        let (s, c) = (omega_star * k as f64 * sample_period).sin_cos();
        let v = v_m_star * s;
        let i = v_m_star * s / params.r + omega_star * params.c * v_m_star * c;
        w.push(v, i);
    }
    let (_, q_star) = measure_power(&w)?;
    Ok((p_star, q_star))
}
