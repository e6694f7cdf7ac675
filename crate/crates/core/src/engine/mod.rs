//! Deterministic closed-loop simulation.
//!
//! Each control tick of length `h`:
//!
//! 1. scheduled events due at this tick are applied, then any pending
//!    per-period power measurement / droop update;
//! 2. `e = x − Πz`, `u = −sign(BᵀPe)`;
//! 3. `x` is propagated over `h` with `u` held (exact ZOH by default) and
//!    the oscillator is rotated by `ωh`.
//!
//! Power is measured once per period, at the tick following an upward zero
//! crossing of the oscillator's sine component. Droop updates land on the
//! same ticks, so amplitude changes never step `v_C,ref`.

mod metrics;
mod trace;

use std::f64::consts::TAU;

use log::debug;

pub use metrics::{compute_metrics, Metrics, SETTLING_FRACTION};
pub use trace::{fmt_f64, Trace, TraceRow, TRACE_HEADER, TRACE_UNITS};

use crate::controller::{control, retune, ControllerState, DEFAULT_ALPHA};
use crate::droop::{droop_update, measure_power, steady_state_targets_sampled, DroopParams, PowerWindow};
use crate::error::{ensure_positive, Error, Result};
use crate::numerics::{is_hurwitz, zoh_discretize, DiscreteMap, Mat2, Vec2};
use crate::plant::{build_state_matrices, step, step_rk4, ErrorVec, InverterParams, StateVec, SwitchCmd};
use crate::reference::{make_pi, reference_state, set_amplitude, OscState, ReferenceSpec, Rotation};

use metrics::MetricsAccumulator;

/// Default control (and integration) period: 1 MHz switching decisions.
pub const DEFAULT_CONTROL_PERIOD: f64 = 1e-6;

/// Run stops once `|v_C|` exceeds this multiple of `V_m`.
pub const DIVERGENCE_FACTOR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Load resistance steps to `r_new`. When `known`, the controller and
    /// reference are retuned to it; otherwise only the plant changes.
    LoadChange { r_new: f64, known: bool },
    SetpointChange { v_m_star: f64, omega_star: f64 },
    DroopEnable(DroopParams),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn load_change(t: f64, r_new: f64, known: bool) -> Self {
        Self { t, kind: EventKind::LoadChange { r_new, known } }
    }

    pub fn setpoint_change(t: f64, v_m_star: f64, omega_star: f64) -> Self {
        Self { t, kind: EventKind::SetpointChange { v_m_star, omega_star } }
    }
}

/// How the plant is advanced over one control period.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    /// Zero-order-hold solution via the matrix exponential.
    Exact,
    /// Classical RK4 with the given number of sub-steps per control period.
    Rk4 { substeps: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// True plant at `t = 0`.
    pub params: InverterParams,
    /// Parameters the controller and reference believe in at `t = 0`;
    /// `None` means they match the plant.
    pub model_params: Option<InverterParams>,
    pub spec: ReferenceSpec,
    pub alpha: f64,
    pub initial_state: StateVec,
    /// Oscillator start; `None` is phase zero, `(0, V_m)`.
    pub initial_osc: Option<OscState>,
    pub t_end: f64,
    pub control_period: f64,
    /// Sorted by time, all within `[0, t_end]`.
    pub events: Vec<Event>,
    /// Droop loop active from `t = 0`.
    pub droop: Option<DroopParams>,
    /// Record every n-th tick in the trace.
    pub record_decimation: usize,
    pub integrator: Integrator,
}

impl Scenario {
    /// Reference design tracking 177 V / 60 Hz from `x(0) = (70 V, 0 A)`.
    pub fn nominal(t_end: f64) -> Self {
        Self {
            params: InverterParams::NOMINAL,
            model_params: None,
            spec: ReferenceSpec::NOMINAL,
            alpha: DEFAULT_ALPHA,
            initial_state: StateVec::new(70.0, 0.0),
            initial_osc: None,
            t_end,
            control_period: DEFAULT_CONTROL_PERIOD,
            events: Vec::new(),
            droop: None,
            record_decimation: 10,
            integrator: Integrator::Exact,
        }
    }

    /// Starts the plant exactly on the reference, `x(0) = Πz(0)`.
    pub fn starting_on_reference(mut self) -> Self {
        let model = self.model_params.unwrap_or(self.params);
        let z0 = self.initial_osc.unwrap_or_else(|| OscState::initial(self.spec.v_m));
        self.initial_state = reference_state(z0, &make_pi(&model, self.spec.omega));
        self
    }

    pub fn model(&self) -> InverterParams {
        self.model_params.unwrap_or(self.params)
    }

    pub fn n_ticks(&self) -> usize {
        (self.t_end / self.control_period).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidScenario(msg));
        self.params.validate()?;
        self.model().validate()?;
        self.spec.validate()?;
        ensure_positive("alpha", self.alpha)?;
        ensure_positive("control_period", self.control_period)?;
        ensure_positive("t_end", self.t_end)?;
        if !self.initial_state.is_finite() {
            return invalid("initial state must be finite".into());
        }
        if self.record_decimation == 0 {
            return invalid("record_decimation must be >= 1".into());
        }
        if let Integrator::Rk4 { substeps: 0 } = self.integrator {
            return invalid("RK4 needs at least one sub-step".into());
        }
        if let Some(dp) = &self.droop {
            dp.validate()?;
        }
        let check_hurwitz = |p: &InverterParams, when: &str| -> Result<()> {
            let (a, _) = build_state_matrices(p);
            if is_hurwitz(&a) {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!("A is not Hurwitz {when}")))
            }
        };
        check_hurwitz(&self.params, "at t = 0")?;
        check_hurwitz(&self.model(), "for the controller model")?;
        let mut plant = self.params;
        let mut last_t = 0.0;
        for ev in &self.events {
            if !(ev.t >= 0.0 && ev.t <= self.t_end) {
                return invalid(format!("event at t = {} outside [0, {}]", ev.t, self.t_end));
            }
            if ev.t < last_t {
                return invalid("events must be sorted by time".into());
            }
            last_t = ev.t;
            match ev.kind {
                EventKind::LoadChange { r_new, .. } => {
                    if !(r_new.is_finite() && r_new > 0.0) {
                        return invalid(format!("load change to non-positive R = {r_new}"));
                    }
                    plant = plant.with_r(r_new);
                    check_hurwitz(&plant, &format!("after the load change at t = {}", ev.t))?;
                }
                EventKind::SetpointChange { v_m_star, omega_star } => {
                    ReferenceSpec::new(v_m_star, omega_star)?;
                }
                EventKind::DroopEnable(dp) => dp.validate()?,
            }
        }
        Ok(())
    }
}

/// Everything observable about one control tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub index: usize,
    pub t: f64,
    /// Plant state at the start of the interval.
    pub x: StateVec,
    pub x_ref: StateVec,
    pub e: ErrorVec,
    pub u: SwitchCmd,
    /// `eᵀPe` with the controller's `P`.
    pub lyap_v: f64,
    pub omega_cmd: f64,
    pub v_m_cmd: f64,
    pub p_meas: f64,
    pub q_meas: f64,
}

impl Tick {
    pub fn to_row(&self) -> TraceRow {
        TraceRow {
            t: self.t,
            v_c: self.x.v_c,
            i_l: self.x.i_l,
            v_ref: self.x_ref.v_c,
            i_ref: self.x_ref.i_l,
            u: self.u.as_i8(),
            lyap_v: self.lyap_v,
            p_meas: self.p_meas,
            q_meas: self.q_meas,
            omega_cmd: self.omega_cmd,
            v_m_cmd: self.v_m_cmd,
        }
    }
}

/// `e = x − Πz`.
pub fn error_of(x: StateVec, z: OscState, pi: &Mat2) -> ErrorVec {
    let r = reference_state(z, pi);
    ErrorVec::new(x.v_c - r.v_c, x.i_l - r.i_l)
}

/// A single simulation advanced tick by tick.
#[derive(Clone, Debug)]
pub struct Simulation {
    h: f64,
    n_ticks: usize,
    k: usize,
    alpha: f64,
    integrator: Integrator,

    plant: InverterParams,
    a: Mat2,
    b: Vec2,
    map: DiscreteMap,

    model: InverterParams,
    ctrl: ControllerState,
    pi: Mat2,
    /// Commanded reference.
    spec: ReferenceSpec,
    /// Setpoints `(V_m*, ω*)` that droop moves away from.
    setpoint: ReferenceSpec,
    rot: Rotation,

    x: StateVec,
    z: OscState,

    events: Vec<Event>,
    next_event: usize,

    droop: Option<DroopParams>,
    meter: PowerWindow,
    last_pq: Option<(f64, f64)>,
    measure_due: bool,

    diverged: bool,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let h = scenario.control_period;
        let plant = scenario.params;
        let model = scenario.model();
        let (a, b) = build_state_matrices(&plant);
        let map = zoh_discretize(&a, b, h)?;
        let spec = scenario.spec;
        let ctrl = retune(&model, &spec, scenario.alpha)?;
        let z = scenario.initial_osc.unwrap_or_else(|| OscState::initial(spec.v_m));
        let meter_omega = scenario.droop.map_or(spec.omega, |d| d.omega_star);
        Ok(Self {
            h,
            n_ticks: scenario.n_ticks(),
            k: 0,
            alpha: scenario.alpha,
            integrator: scenario.integrator,
            plant,
            a,
            b,
            map,
            model,
            ctrl,
            pi: make_pi(&model, spec.omega),
            spec,
            setpoint: spec,
            rot: Rotation::new(spec.omega, h),
            x: scenario.initial_state,
            z,
            events: scenario.events.clone(),
            next_event: 0,
            droop: scenario.droop,
            meter: PowerWindow::new(meter_omega, h)?,
            last_pq: None,
            measure_due: false,
            diverged: false,
        })
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.h
    }

    pub fn tick_index(&self) -> usize {
        self.k
    }

    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    pub fn state(&self) -> StateVec {
        self.x
    }

    pub fn osc(&self) -> OscState {
        self.z
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctrl
    }

    pub fn plant_params(&self) -> InverterParams {
        self.plant
    }

    pub fn model_params(&self) -> InverterParams {
        self.model
    }

    pub fn reference_spec(&self) -> ReferenceSpec {
        self.spec
    }

    pub fn pi(&self) -> Mat2 {
        self.pi
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn is_finished(&self) -> bool {
        self.diverged || self.k >= self.n_ticks
    }

    /// Samples in one period of the current commanded frequency.
    pub fn period_ticks(&self) -> usize {
        (TAU / self.spec.omega / self.h).round() as usize
    }

    /// Advances one control period; `None` once finished or diverged.
    pub fn step(&mut self) -> Result<Option<Tick>> {
        if self.is_finished() {
            return Ok(None);
        }
        self.apply_due_events()?;
        if self.measure_due {
            self.measure_due = false;
            self.measure_and_droop()?;
        }

        let x = self.x;
        let x_ref = reference_state(self.z, &self.pi);
        let e = ErrorVec::new(x.v_c - x_ref.v_c, x.i_l - x_ref.i_l);
        let u = control(e, &self.ctrl);
        let (p_meas, q_meas) = self.last_pq.unwrap_or((f64::NAN, f64::NAN));
        let tick = Tick {
            index: self.k,
            t: self.time(),
            x,
            x_ref,
            e,
            u,
            lyap_v: self.ctrl.lyapunov(e),
            omega_cmd: self.spec.omega,
            v_m_cmd: self.spec.v_m,
            p_meas,
            q_meas,
        };

        self.meter.push(x.v_c, x.i_l);
        self.x = match self.integrator {
            Integrator::Exact => step(x, u, &self.map),
            Integrator::Rk4 { substeps } => step_rk4(x, u, &self.a, self.b, self.h, substeps),
        };
        let z_prev = self.z;
        self.z = self.rot.apply(self.z);
        if z_prev.z1 < 0.0 && self.z.z1 >= 0.0 {
            self.measure_due = true;
        }
        self.k += 1;

        let ceiling = DIVERGENCE_FACTOR * if self.spec.v_m > 0.0 { self.spec.v_m } else { 0.5 * self.plant.v_dc };
        if !(self.x.v_c.abs() <= ceiling) {
            debug!("diverged at t = {:.6} s: v_C = {}", self.time(), self.x.v_c);
            self.diverged = true;
        }
        Ok(Some(tick))
    }

    fn apply_due_events(&mut self) -> Result<()> {
        while let Some(ev) = self.events.get(self.next_event).copied() {
            let due = (ev.t / self.h).round() as usize;
            if due > self.k {
                break;
            }
            self.next_event += 1;
            self.apply_event(ev.kind)?;
        }
        Ok(())
    }

    fn apply_event(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::LoadChange { r_new, known } => {
                debug!("t = {:.6}: load -> {r_new} Ω ({})", self.time(), if known { "known" } else { "unknown" });
                self.plant = self.plant.with_r(r_new);
                let (a, b) = build_state_matrices(&self.plant);
                self.a = a;
                self.b = b;
                self.map = zoh_discretize(&a, b, self.h)?;
                if known {
                    self.model = self.model.with_r(r_new);
                    self.ctrl = retune(&self.model, &self.spec, self.alpha)?;
                    self.pi = make_pi(&self.model, self.spec.omega);
                    if let Some(dp) = self.droop {
                        self.droop = Some(self.retarget(dp, dp.v_m_star, dp.omega_star)?);
                    }
                }
            }
            EventKind::SetpointChange { v_m_star, omega_star } => {
                self.setpoint = ReferenceSpec::new(v_m_star, omega_star)?;
                match self.droop {
                    Some(dp) => {
                        self.droop = Some(self.retarget(dp, v_m_star, omega_star)?);
                        self.resize_meter(omega_star)?;
                    }
                    None => {
                        self.command(v_m_star, omega_star)?;
                        self.resize_meter(omega_star)?;
                    }
                }
            }
            EventKind::DroopEnable(dp) => {
                self.setpoint = ReferenceSpec::new(dp.v_m_star, dp.omega_star)?;
                self.droop = Some(dp);
                self.resize_meter(dp.omega_star)?;
            }
        }
        Ok(())
    }

    fn retarget(&self, dp: DroopParams, v_m_star: f64, omega_star: f64) -> Result<DroopParams> {
        let (p_star, q_star) = steady_state_targets_sampled(&self.model, v_m_star, omega_star, self.h)?;
        Ok(DroopParams { v_m_star, omega_star, p_star, q_star, ..dp })
    }

    fn resize_meter(&mut self, omega: f64) -> Result<()> {
        let cap = (TAU / omega / self.h).round() as usize;
        if cap != self.meter.capacity() {
            self.meter = PowerWindow::new(omega, self.h)?;
            self.last_pq = None;
        }
        Ok(())
    }

    /// Moves the commanded reference, preserving oscillator phase.
    fn command(&mut self, v_m: f64, omega: f64) -> Result<()> {
        let v_m = v_m.max(0.0);
        self.z = if self.z.norm() == 0.0 && v_m > 0.0 {
            OscState::initial(v_m)
        } else {
            set_amplitude(self.z, v_m)?
        };
        if omega != self.spec.omega {
            self.rot = Rotation::new(omega, self.h);
            self.pi = make_pi(&self.model, omega);
        }
        self.spec = ReferenceSpec::new(v_m, omega)?;
        self.ctrl = self.ctrl.with_reference(&self.model, &self.spec);
        Ok(())
    }

    fn measure_and_droop(&mut self) -> Result<()> {
        let Ok((p, q)) = measure_power(&self.meter) else {
            return Ok(());
        };
        self.last_pq = Some((p, q));
        if let Some(dp) = self.droop {
            let (omega, v_m) = droop_update(&dp, p, q);
            if !(omega > 0.0) {
                return Err(Error::InvalidState(format!("droop commanded non-positive ω = {omega}")));
            }
            self.command(v_m, omega)?;
        }
        Ok(())
    }
}

/// Runs a scenario to completion, recording every `record_decimation`-th
/// tick. Metrics are accumulated on every tick before decimation.
pub fn run(scenario: &Scenario) -> Result<(Trace, Metrics)> {
    run_with(scenario, |_| {})
}

/// Like [`run`], also handing every tick to `observe`.
pub fn run_with<F: FnMut(&Tick)>(scenario: &Scenario, mut observe: F) -> Result<(Trace, Metrics)> {
    let mut sim = Simulation::new(scenario)?;
    let dec = scenario.record_decimation;
    let mut rows = Vec::with_capacity(sim.n_ticks() / dec + 1);
    let mut acc = MetricsAccumulator::new(longest_period_ticks(scenario), scenario.control_period);
    while let Some(tick) = sim.step()? {
        acc.push(tick.t, tick.e.v_c, tick.v_m_cmd);
        if tick.index % dec == 0 {
            rows.push(tick.to_row());
        }
        observe(&tick);
    }
    let metrics = acc.finish(sim.period_ticks(), sim.diverged());
    Ok((Trace { rows, diverged: sim.diverged() }, metrics))
}

/// Ring size for the final-period RMS: twice the longest nominal period.
fn longest_period_ticks(s: &Scenario) -> usize {
    let mut omega_min = s.spec.omega;
    if let Some(dp) = &s.droop {
        omega_min = omega_min.min(dp.omega_star);
    }
    for ev in &s.events {
        match ev.kind {
            EventKind::SetpointChange { omega_star, .. } => omega_min = omega_min.min(omega_star),
            EventKind::DroopEnable(dp) => omega_min = omega_min.min(dp.omega_star),
            EventKind::LoadChange { .. } => {}
        }
    }
    (2.0 * TAU / omega_min / s.control_period).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::make_pi;

    #[test]
    fn error_of_examples() {
        let p = InverterParams::NOMINAL;
        let w = ReferenceSpec::NOMINAL.omega;
        let pi = make_pi(&p, w);
        let z = OscState::new(120.0, -31.0);
        let on_ref = reference_state(z, &pi);
        let e = error_of(on_ref, z, &pi);
        assert_eq!(e, ErrorVec::default());

        let e = error_of(StateVec::new(70.0, 0.0), OscState::initial(177.0), &pi);
        assert_eq!(e.v_c, 70.0);
        assert!((e.i_l + w * 2.5e-3 * 177.0).abs() < 1e-12);
        assert!((e.i_l + 166.8).abs() < 0.05);

        let d = StateVec::new(1.5, -2.0);
        let x = StateVec::new(10.0, 3.0);
        let e1 = error_of(StateVec::new(x.v_c + d.v_c, x.i_l + d.i_l), z, &pi);
        let e0 = error_of(x, z, &pi);
        assert!((e1.v_c - e0.v_c - d.v_c).abs() < 1e-12);
        assert!((e1.i_l - e0.i_l - d.i_l).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = Scenario::nominal(0.01);
        s.control_period = 0.0;
        assert!(s.validate().is_err());

        let mut s = Scenario::nominal(0.01);
        s.events = vec![Event::load_change(0.02, 60.0, true)];
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));

        let mut s = Scenario::nominal(0.01);
        s.events = vec![Event::load_change(0.005, 60.0, true), Event::load_change(0.001, 70.0, true)];
        assert!(s.validate().is_err());

        let mut s = Scenario::nominal(0.01);
        s.events = vec![Event::load_change(0.005, -60.0, true)];
        assert!(s.validate().is_err());

        let mut s = Scenario::nominal(0.01);
        s.record_decimation = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn starts_on_reference_stays_close() {
        let s = Scenario::nominal(0.01).starting_on_reference();
        let (_, m) = run(&s).unwrap();
        assert!(!m.diverged);
        assert!(m.max_abs_error < 0.02 * 177.0, "{m:?}");
    }

    #[test]
    fn decimation_and_tick_count() {
        let mut s = Scenario::nominal(1e-3);
        s.record_decimation = 7;
        let (tr, _) = run(&s).unwrap();
        assert_eq!(tr.len(), 1000 / 7 + 1);
        assert_eq!(tr.rows[1].t, 7e-6);
    }

    #[test]
    fn metrics_match_full_trace() {
        let mut s = Scenario::nominal(0.05);
        s.record_decimation = 1;
        let (tr, m) = run(&s).unwrap();
        let m2 = compute_metrics(&tr, &s.spec);
        assert_eq!(m.max_abs_error, m2.max_abs_error);
        let (a, b) = (m.rms_error_final_period.unwrap(), m2.rms_error_final_period.unwrap());
        assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
    }

    #[test]
    fn setpoint_change_without_droop_rescales_reference() {
        let mut s = Scenario::nominal(0.02).starting_on_reference();
        s.events = vec![Event::setpoint_change(0.01, 185.0, s.spec.omega)];
        let mut sim = Simulation::new(&s).unwrap();
        while sim.time() < 0.0105 {
            sim.step().unwrap();
        }
        assert!((sim.osc().norm() - 185.0).abs() < 1e-9);
        assert_eq!(sim.reference_spec().v_m, 185.0);
    }
}
