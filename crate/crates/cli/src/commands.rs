use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use halfbridge::analysis::{self, SweepAxis, SweepResult, SweepSpec};
use halfbridge::droop::DroopParams;
use halfbridge::engine::{run_with, Event, Integrator, Metrics, Scenario, Trace};
use halfbridge::plant::{InverterParams, StateVec};
use halfbridge::reference::{stability_margin, ReferenceSpec};
use log::info;

use crate::config::{sweep_range, Config, ConfigError, IntegratorChoice};
use crate::plot::{Chart, Series};
use crate::Common;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("run diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Diverged(_) => 3,
            AppError::Internal(_) => 4,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> AppError {
    AppError::Internal(e.to_string())
}

/// Scenario-level validation failures are configuration errors.
fn scenario_error(e: halfbridge::Error) -> AppError {
    AppError::Config(ConfigError::invalid("scenario", e.to_string()))
}

fn load_config(common: &Common) -> Result<Config, AppError> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(d) = common.decimation {
        if d == 0 {
            return Err(ConfigError::invalid("--decimation", "must be >= 1").into());
        }
        cfg.decimation = d;
    }
    Ok(cfg)
}

fn flag(name: &str, v: Option<f64>, positive: bool) -> Result<Option<f64>, AppError> {
    match v {
        Some(x) if !x.is_finite() || (positive && x <= 0.0) || x < 0.0 => Err(ConfigError::invalid(
            name,
            format!("must be {} number, got {x}", if positive { "a positive" } else { "a non-negative" }),
        )
        .into()),
        _ => Ok(v),
    }
}

pub fn base_scenario(cfg: &Config) -> Result<Scenario, AppError> {
    let params = InverterParams::new(cfg.r_ohm, cfg.l_henry, cfg.c_farad, cfg.v_dc_volt).map_err(scenario_error)?;
    let spec = ReferenceSpec::new(cfg.v_m_volt, cfg.omega()).map_err(scenario_error)?;
    let mut s = Scenario::nominal(cfg.t_end_s);
    s.params = params;
    s.spec = spec;
    s.alpha = cfg.alpha;
    s.initial_state = StateVec::new(cfg.v_c0_volt, cfg.i_l0_amp);
    s.control_period = cfg.control_period_s;
    s.record_decimation = cfg.decimation;
    s.integrator = match cfg.integrator {
        IntegratorChoice::Exact => Integrator::Exact,
        IntegratorChoice::Rk4 => Integrator::Rk4 { substeps: cfg.rk4_substeps },
    };
    if cfg.start_on_reference {
        s = s.starting_on_reference();
    }
    Ok(s)
}

/// Peak voltage errors around an event, gathered while the run streams.
#[derive(Default)]
struct EventWindow {
    event_tick: Option<usize>,
    final_start: usize,
    period: usize,
    pre_peak: f64,
    post_peak: f64,
    final_peak: f64,
}

impl EventWindow {
    fn observe(&mut self, index: usize, err: f64) {
        let a = err.abs();
        if let Some(k) = self.event_tick {
            if index < k && index + self.period >= k {
                self.pre_peak = self.pre_peak.max(a);
            }
            if index >= k {
                self.post_peak = self.post_peak.max(a);
            }
        }
        if index >= self.final_start {
            self.final_peak = self.final_peak.max(a);
        }
    }
}

fn run_scenario(s: &Scenario, window: &mut EventWindow) -> Result<(Trace, Metrics), AppError> {
    s.validate().map_err(scenario_error)?;
    run_with(s, |t| window.observe(t.index, t.e.v_c)).map_err(internal)
}

fn period_ticks(s: &Scenario) -> usize {
    (TAU / s.spec.omega / s.control_period).round() as usize
}

// ---------------------------------------------------------------------------
// output

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self, AppError> {
        fs::create_dir_all(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Writes through a temporary file so a failed write leaves nothing behind.
    fn write(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), AppError> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let res = (|| {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
            drop(w);
            fs::rename(&tmp, &path)
        })();
        res.map_err(|e| {
            let _ = fs::remove_file(&tmp);
            internal(format!("{}: {e}", path.display()))
        })
    }
}

struct Summary(Vec<(String, String)>);

impl Summary {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn opt(&mut self, key: &str, v: Option<f64>) {
        self.add(key, v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}")));
    }

    fn metrics(&mut self, m: &Metrics) {
        self.opt("rms_error_final_period_volt", m.rms_error_final_period);
        self.add("max_abs_error_volt", format!("{:.6}", m.max_abs_error));
        self.opt("settling_time_s", m.settling_time);
        self.add("diverged", m.diverged);
    }

    fn text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn write_run(
    common: &Common,
    out: &Outputs,
    trace: &Trace,
    summary: &mut Summary,
    title: &str,
    with_setpoints: bool,
) -> Result<(), AppError> {
    if common.seed_free {
        summary.add("seed_free", true);
    }
    out.write("trace.csv", |w| trace.write_csv(w))?;
    let text = summary.text();
    out.write("metrics.txt", |w| w.write_all(text.as_bytes()))?;
    print!("{text}");
    if common.plot {
        let mut c = Chart::new(&format!("{title}: capacitor voltage"), "t [s]", "voltage [V]");
        c.series.push(Series::line("v_C", trace.rows.iter().map(|r| (r.t, r.v_c)).collect(), "#1f77b4"));
        c.series.push(Series::line("v_ref", trace.rows.iter().map(|r| (r.t, r.v_ref)).collect(), "#d62728"));
        let svg = c.render();
        out.write("voltage.svg", |w| w.write_all(svg.as_bytes()))?;

        let mut c = Chart::new(&format!("{title}: tracking error"), "t [s]", "|v_C - v_ref| [V]");
        c.log_y = true;
        c.series.push(Series::line("|error|", trace.rows.iter().map(|r| (r.t, (r.v_c - r.v_ref).abs())).collect(), "#2ca02c"));
        let svg = c.render();
        out.write("error.svg", |w| w.write_all(svg.as_bytes()))?;

        if with_setpoints {
            let mut c = Chart::new(&format!("{title}: commanded amplitude"), "t [s]", "V_m [V]");
            c.series.push(Series::line("V_m", trace.rows.iter().map(|r| (r.t, r.v_m_cmd)).collect(), "#9467bd"));
            let svg = c.render();
            out.write("setpoints.svg", |w| w.write_all(svg.as_bytes()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommands

pub fn simulate(common: &Common) -> Result<(), AppError> {
    let cfg = load_config(common)?;
    let s = base_scenario(&cfg)?;
    s.validate().map_err(scenario_error)?;
    let mut window = EventWindow { final_start: usize::MAX, ..Default::default() };
    let (trace, m) = run_scenario(&s, &mut window)?;
    let out = Outputs::create(&common.out)?;
    let mut summary = Summary::new();
    summary.add("command", "simulate");
    summary.add("margin", format!("{:.6}", stability_margin(&s.params, &s.spec)));
    summary.metrics(&m);
    write_run(common, &out, &trace, &mut summary, "simulate", false)?;
    if m.diverged {
        return Err(AppError::Diverged(format!("|v_C| exceeded the divergence ceiling by t = {:.6} s", trace.rows.last().map_or(0.0, |r| r.t))));
    }
    Ok(())
}

/// Growth factor of the final-period peak error over the last pre-event
/// period that counts as divergence.
pub const GROWTH_LIMIT: f64 = 10.0;

pub fn loadstep(common: &Common, r_new: Option<f64>, t_event: Option<f64>, known: Option<bool>) -> Result<(), AppError> {
    let cfg = load_config(common)?;
    let r_new = flag("--r-new", r_new, true)?.unwrap_or(cfg.load_r_new_ohm);
    let t_event = flag("--t-event", t_event, false)?.unwrap_or(cfg.load_t_event_s);
    let known = known.unwrap_or(cfg.load_known);
    let mut s = base_scenario(&cfg)?;
    if t_event > s.t_end {
        return Err(ConfigError::invalid("load_t_event_s", format!("{t_event} s is after t_end_s = {} s", s.t_end)).into());
    }
    s.events = vec![Event::load_change(t_event, r_new, known)];
    s.validate().map_err(scenario_error)?;

    let per = period_ticks(&s);
    let event_tick = (t_event / s.control_period).round() as usize;
    let mut window = EventWindow {
        event_tick: Some(event_tick),
        final_start: s.n_ticks().saturating_sub(per),
        period: per,
        ..Default::default()
    };
    let (trace, m) = run_scenario(&s, &mut window)?;
    let growth = if window.pre_peak > 0.0 { window.final_peak / window.pre_peak } else { f64::NAN };
    let grew = growth >= GROWTH_LIMIT;

    let out = Outputs::create(&common.out)?;
    let mut summary = Summary::new();
    summary.add("command", "loadstep");
    summary.add("r_new_ohm", r_new);
    summary.add("t_event_s", t_event);
    summary.add("known", known);
    summary.add("margin_after", format!("{:.6}", stability_margin(&s.params.with_r(r_new), &s.spec)));
    summary.add("pre_event_peak_error_volt", format!("{:.6}", window.pre_peak));
    summary.add("post_event_peak_error_volt", format!("{:.6}", window.post_peak));
    summary.add("final_period_peak_error_volt", format!("{:.6}", window.final_peak));
    summary.add("growth_ratio", format!("{growth:.4}"));
    summary.metrics(&m);
    write_run(common, &out, &trace, &mut summary, "load step", false)?;
    if m.diverged {
        return Err(AppError::Diverged("|v_C| exceeded the divergence ceiling".into()));
    }
    if grew {
        return Err(AppError::Diverged(format!(
            "final-period error {:.3} V is {growth:.1}x the pre-event level {:.3} V",
            window.final_peak, window.pre_peak
        )));
    }
    Ok(())
}

fn parse_axis(key: &str, s: &str) -> Result<SweepAxis, AppError> {
    s.parse::<SweepAxis>().map_err(|e| ConfigError::invalid(key, e.to_string()).into())
}

fn parse_range(s: &str) -> Result<Vec<f64>, AppError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || ConfigError::invalid("--range", format!("expected FROM:TO:STEP, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad().into());
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| bad())?;
    }
    let values = sweep_range(v[0], v[1], v[2]).map_err(|e| match e {
        ConfigError::Invalid { msg, .. } => ConfigError::invalid("--range", msg),
        other => other,
    })?;
    if values.iter().any(|x| *x <= 0.0) {
        return Err(ConfigError::invalid("--range", "values must be positive").into());
    }
    Ok(values)
}

pub fn sweep(common: &Common, axis: Option<&str>, range: Option<&str>, retune: Option<bool>) -> Result<(), AppError> {
    let cfg = load_config(common)?;
    let axis = match axis {
        Some(a) => parse_axis("--axis", a)?,
        None => cfg.sweep_axis,
    };
    let values = match range {
        Some(r) => parse_range(r)?,
        None => cfg.sweep_values()?,
    };
    let spec = SweepSpec {
        base: base_scenario(&cfg)?,
        axis,
        values,
        retune: retune.unwrap_or(cfg.sweep_retune),
    };
    spec.validate().map_err(scenario_error)?;
    for &v in &spec.values {
        spec.scenario_at(v).validate().map_err(|e| ConfigError::invalid("sweep values", format!("at {v}: {e}")))?;
    }
    let res = analysis::sweep(&spec).map_err(internal)?;
    let cutoff = analysis::boundary(&spec.base.params, &spec.base.spec, axis, None).ok();

    let out = Outputs::create(&common.out)?;
    out.write("sweep.csv", |w| analysis::write_sweep_csv(&res, w))?;
    let mut summary = Summary::new();
    summary.add("command", "sweep");
    summary.add("axis", axis.name());
    summary.add("points", res.points.len());
    summary.add("retune", spec.retune);
    summary.opt("predicted_cutoff", cutoff);
    if common.seed_free {
        summary.add("seed_free", true);
    }
    let text = summary.text();
    out.write("metrics.txt", |w| w.write_all(text.as_bytes()))?;
    print!("{text}");
    print_sweep(&res);
    if common.plot {
        let svg = sweep_chart(&res, cutoff).render();
        out.write("sweep.svg", |w| w.write_all(svg.as_bytes()))?;
    }
    Ok(())
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::LoadR => "load resistance [ohm]",
        SweepAxis::VM => "reference amplitude [V]",
        SweepAxis::Omega => "reference frequency [rad/s]",
    }
}

fn print_sweep(res: &SweepResult) {
    println!("{:>12} {:>9} {:>14} {:>12} {:>8}", res.axis.name(), "margin", "rms_final [V]", "max [V]", "diverged");
    for p in &res.points {
        let rms = p.metrics.rms_error_final_period.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:>12.4} {:>9.4} {:>14} {:>12.3} {:>8}",
            p.value, p.margin, rms, p.metrics.max_abs_error, p.metrics.diverged
        );
    }
}

fn sweep_chart(res: &SweepResult, cutoff: Option<f64>) -> Chart {
    let mut c = Chart::new("final-period RMS error", axis_label(res.axis), "RMS error [V]");
    c.log_y = true;
    let pts = res
        .points
        .iter()
        .map(|p| (p.value, p.metrics.rms_error_final_period.unwrap_or(f64::NAN)))
        .collect();
    c.series.push(Series { label: "simulated".into(), points: pts, color: "#1f77b4", markers: true });
    if let Some(x) = cutoff {
        c.markers_x.push((x, format!("predicted cutoff {x:.1}")));
    }
    c
}

pub fn droop(
    common: &Common,
    v_m_star_new: Option<f64>,
    t_event: Option<f64>,
    k_p: Option<f64>,
    k_q: Option<f64>,
) -> Result<(), AppError> {
    let cfg = load_config(common)?;
    let v_new = flag("--v-m-star-new", v_m_star_new, false)?.unwrap_or(cfg.droop_v_m_star_new_volt);
    let t_event = flag("--t-event", t_event, false)?.unwrap_or(cfg.droop_t_event_s);
    let k_p = flag("--k-p", k_p, false)?.unwrap_or(cfg.droop_k_p);
    let k_q = flag("--k-q", k_q, false)?.unwrap_or(cfg.droop_k_q);
    let mut s = base_scenario(&cfg)?;
    if t_event > s.t_end {
        return Err(ConfigError::invalid("droop_t_event_s", format!("{t_event} s is after t_end_s = {} s", s.t_end)).into());
    }
    let omega = s.spec.omega;
    if k_p > 0.0 || k_q > 0.0 {
        let dp = DroopParams::for_operating_point(&s.model(), s.spec.v_m, omega, k_p, k_q, s.control_period)
            .map_err(scenario_error)?;
        s.droop = Some(dp);
    } else {
        info!("droop gains are zero: plain setpoint step");
    }
    s.events = vec![Event::setpoint_change(t_event, v_new, omega)];
    s.validate().map_err(scenario_error)?;

    let mut window = EventWindow { final_start: usize::MAX, ..Default::default() };
    let mut worst_rel = 0.0f64;
    let (trace, m) = run_with(&s, |t| {
        window.observe(t.index, t.e.v_c);
        if t.v_m_cmd > 0.0 {
            worst_rel = worst_rel.max(t.e.v_c.abs() / t.v_m_cmd);
        }
    })
    .map_err(internal)?;
    let last = trace.rows.last().ok_or_else(|| internal("empty trace"))?;

    let out = Outputs::create(&common.out)?;
    let mut summary = Summary::new();
    summary.add("command", "droop");
    summary.add("v_m_star_new_volt", v_new);
    summary.add("t_event_s", t_event);
    summary.add("k_p", k_p);
    summary.add("k_q", k_q);
    summary.add("settled_v_m_volt", format!("{:.6}", last.v_m_cmd));
    summary.add("settled_omega_rad_s", format!("{:.6}", last.omega_cmd));
    summary.add("settled_p_watt", format!("{:.3}", last.p_meas));
    summary.add("settled_q_var", format!("{:.3}", last.q_meas));
    summary.add("max_relative_tracking_error", format!("{worst_rel:.6}"));
    summary.metrics(&m);
    write_run(common, &out, &trace, &mut summary, "droop", true)?;
    if m.diverged {
        return Err(AppError::Diverged("|v_C| exceeded the divergence ceiling".into()));
    }
    Ok(())
}

pub fn boundary(common: &Common, axis: &str, lo: Option<f64>, hi: Option<f64>) -> Result<(), AppError> {
    let cfg = load_config(common)?;
    let axis = parse_axis("--axis", axis)?;
    let s = base_scenario(&cfg)?;
    let interval = match (lo, hi) {
        (None, None) => None,
        _ => {
            let (dlo, dhi) = analysis::default_interval(&s.params, axis);
            let (lo, hi) = (lo.unwrap_or(dlo), hi.unwrap_or(dhi));
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ConfigError::invalid("--lo/--hi", format!("empty interval [{lo}, {hi}]")).into());
            }
            Some((lo, hi))
        }
    };
    let text = match analysis::boundary(&s.params, &s.spec, axis, interval) {
        Ok(b) => format!("axis = {}\nboundary = {b:.6}\n", axis.name()),
        Err(halfbridge::Error::NoBoundary { lo, hi }) => {
            format!("axis = {}\nboundary = none\nsearched = [{lo}, {hi}]\n", axis.name())
        }
        Err(e) => return Err(scenario_error(e)),
    };
    let out = Outputs::create(&common.out)?;
    out.write("boundary.txt", |w| w.write_all(text.as_bytes()))?;
    print!("{text}");
    Ok(())
}
