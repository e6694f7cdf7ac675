//! Flat `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Every key is optional; missing keys take the reference design values.
//! Unknown keys, repeated keys and unparsable values are rejected with the
//! line they appear on.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use halfbridge::analysis::SweepAxis;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: key `{key}`: {msg}")]
    Key { line: usize, key: String, msg: String },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

impl ConfigError {
    pub fn invalid(key: &str, msg: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegratorChoice {
    Exact,
    Rk4,
}

impl FromStr for IntegratorChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "rk4" => Ok(Self::Rk4),
            _ => Err(format!("expected `exact` or `rk4`, got `{s}`")),
        }
    }
}

impl fmt::Display for IntegratorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Rk4 => "rk4",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub r_ohm: f64,
    pub l_henry: f64,
    pub c_farad: f64,
    pub v_dc_volt: f64,
    pub f_hz: f64,
    pub v_m_volt: f64,
    pub alpha: f64,
    pub v_c0_volt: f64,
    pub i_l0_amp: f64,
    pub start_on_reference: bool,
    pub t_end_s: f64,
    pub control_period_s: f64,
    pub decimation: usize,
    pub integrator: IntegratorChoice,
    pub rk4_substeps: usize,

    pub load_r_new_ohm: f64,
    pub load_t_event_s: f64,
    pub load_known: bool,

    pub sweep_axis: SweepAxis,
    pub sweep_from: f64,
    pub sweep_to: f64,
    pub sweep_step: f64,
    pub sweep_retune: bool,

    pub droop_k_p: f64,
    pub droop_k_q: f64,
    pub droop_v_m_star_new_volt: f64,
    pub droop_t_event_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            r_ohm: 50.0,
            l_henry: 450e-6,
            c_farad: 2.5e-3,
            v_dc_volt: 1200.0,
            f_hz: 60.0,
            v_m_volt: 177.0,
            alpha: 1.0,
            v_c0_volt: 70.0,
            i_l0_amp: 0.0,
            start_on_reference: false,
            t_end_s: 4.0,
            control_period_s: 1e-6,
            decimation: 10,
            integrator: IntegratorChoice::Exact,
            rk4_substeps: 10,
            load_r_new_ohm: 60.0,
            load_t_event_s: 1.0,
            load_known: true,
            sweep_axis: SweepAxis::LoadR,
            sweep_from: 10.0,
            sweep_to: 90.0,
            sweep_step: 10.0,
            sweep_retune: false,
            droop_k_p: 0.01,
            droop_k_q: 0.0025,
            droop_v_m_star_new_volt: 185.0,
            droop_t_event_s: 0.2,
        }
    }
}

/// Every accepted key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("r_ohm", "load resistance"),
    ("l_henry", "filter inductance"),
    ("c_farad", "filter capacitance"),
    ("v_dc_volt", "DC bus voltage"),
    ("f_hz", "reference frequency"),
    ("v_m_volt", "reference amplitude"),
    ("alpha", "Lyapunov scaling, > 0"),
    ("v_c0_volt", "initial capacitor voltage"),
    ("i_l0_amp", "initial inductor current"),
    ("start_on_reference", "start exactly on the reference (overrides v_c0/i_l0)"),
    ("t_end_s", "simulated time"),
    ("control_period_s", "control and integration period"),
    ("decimation", "record every n-th tick in trace.csv"),
    ("integrator", "exact | rk4"),
    ("rk4_substeps", "RK4 sub-steps per control period"),
    ("load_r_new_ohm", "loadstep: resistance after the event"),
    ("load_t_event_s", "loadstep: event time"),
    ("load_known", "loadstep: retune the controller at the event"),
    ("sweep_axis", "sweep: load_r (ohm) | v_m (volt) | omega (rad/s)"),
    ("sweep_from", "sweep: first value, in the axis unit"),
    ("sweep_to", "sweep: last value, inclusive"),
    ("sweep_step", "sweep: increment"),
    ("sweep_retune", "sweep: retune the controller at each load"),
    ("droop_k_p", "droop: frequency gain, (rad/s)/W"),
    ("droop_k_q", "droop: amplitude gain, V/VAR"),
    ("droop_v_m_star_new_volt", "droop: amplitude setpoint after the event"),
    ("droop_t_event_s", "droop: setpoint change time"),
];

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Key { line, key: key.to_string(), msg: format!("`{raw}`: {e}") })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Key { line, key: key.to_string(), msg: format!("`{raw}` is not a boolean") }),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{content}`") });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&(known, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
                return Err(ConfigError::Key { line, key: key.to_string(), msg: "unknown key".into() });
            };
            if seen.contains(&known) {
                return Err(ConfigError::Key { line, key: key.to_string(), msg: "set more than once".into() });
            }
            seen.push(known);
            cfg.set(line, key, value)?;
            cfg.validate_key(key).map_err(|e| match e {
                ConfigError::Invalid { key, msg } => ConfigError::Key { line, key, msg },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "r_ohm" => self.r_ohm = parse_value(line, key, v)?,
            "l_henry" => self.l_henry = parse_value(line, key, v)?,
            "c_farad" => self.c_farad = parse_value(line, key, v)?,
            "v_dc_volt" => self.v_dc_volt = parse_value(line, key, v)?,
            "f_hz" => self.f_hz = parse_value(line, key, v)?,
            "v_m_volt" => self.v_m_volt = parse_value(line, key, v)?,
            "alpha" => self.alpha = parse_value(line, key, v)?,
            "v_c0_volt" => self.v_c0_volt = parse_value(line, key, v)?,
            "i_l0_amp" => self.i_l0_amp = parse_value(line, key, v)?,
            "start_on_reference" => self.start_on_reference = parse_bool(line, key, v)?,
            "t_end_s" => self.t_end_s = parse_value(line, key, v)?,
            "control_period_s" => self.control_period_s = parse_value(line, key, v)?,
            "decimation" => self.decimation = parse_value(line, key, v)?,
            "integrator" => self.integrator = parse_value(line, key, v)?,
            "rk4_substeps" => self.rk4_substeps = parse_value(line, key, v)?,
            "load_r_new_ohm" => self.load_r_new_ohm = parse_value(line, key, v)?,
            "load_t_event_s" => self.load_t_event_s = parse_value(line, key, v)?,
            "load_known" => self.load_known = parse_bool(line, key, v)?,
            "sweep_axis" => self.sweep_axis = parse_value(line, key, v)?,
            "sweep_from" => self.sweep_from = parse_value(line, key, v)?,
            "sweep_to" => self.sweep_to = parse_value(line, key, v)?,
            "sweep_step" => self.sweep_step = parse_value(line, key, v)?,
            "sweep_retune" => self.sweep_retune = parse_bool(line, key, v)?,
            "droop_k_p" => self.droop_k_p = parse_value(line, key, v)?,
            "droop_k_q" => self.droop_k_q = parse_value(line, key, v)?,
            "droop_v_m_star_new_volt" => self.droop_v_m_star_new_volt = parse_value(line, key, v)?,
            "droop_t_event_s" => self.droop_t_event_s = parse_value(line, key, v)?,
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    /// Range check of a single key, independent of the others.
    pub fn validate_key(&self, key: &str) -> Result<(), ConfigError> {
        let positive = |v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be a positive number, got {v}")))
            }
        };
        let non_negative = |v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be >= 0, got {v}")))
            }
        };
        let finite = |v: f64| -> Result<(), ConfigError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be finite, got {v}")))
            }
        };
        match key {
            "r_ohm" => positive(self.r_ohm),
            "l_henry" => positive(self.l_henry),
            "c_farad" => positive(self.c_farad),
            "v_dc_volt" => positive(self.v_dc_volt),
            "f_hz" => positive(self.f_hz),
            "v_m_volt" => non_negative(self.v_m_volt),
            "alpha" => positive(self.alpha),
            "v_c0_volt" => finite(self.v_c0_volt),
            "i_l0_amp" => finite(self.i_l0_amp),
            "t_end_s" => positive(self.t_end_s),
            "control_period_s" => positive(self.control_period_s),
            "decimation" if self.decimation == 0 => Err(ConfigError::invalid(key, "must be >= 1")),
            "rk4_substeps" if self.rk4_substeps == 0 => Err(ConfigError::invalid(key, "must be >= 1")),
            "load_r_new_ohm" => positive(self.load_r_new_ohm),
            "load_t_event_s" => non_negative(self.load_t_event_s),
            "sweep_from" => positive(self.sweep_from),
            "sweep_to" => positive(self.sweep_to),
            "sweep_step" => positive(self.sweep_step),
            "droop_k_p" => non_negative(self.droop_k_p),
            "droop_k_q" => non_negative(self.droop_k_q),
            "droop_v_m_star_new_volt" => non_negative(self.droop_v_m_star_new_volt),
            "droop_t_event_s" => non_negative(self.droop_t_event_s),
            _ => Ok(()),
        }
    }

    /// Checks every key and the relations between them.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, _) in KEYS {
            self.validate_key(key)?;
        }
        if self.control_period_s > self.t_end_s {
            return Err(ConfigError::invalid("control_period_s", "longer than t_end_s"));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        std::f64::consts::TAU * self.f_hz
    }

    /// Values `from, from + step, …` up to and including `to` (within
    /// rounding).
    pub fn sweep_values(&self) -> Result<Vec<f64>, ConfigError> {
        sweep_range(self.sweep_from, self.sweep_to, self.sweep_step)
    }
}

pub fn sweep_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ConfigError::invalid("sweep_step", format!("must be positive, got {step}")));
    }
    if !(from.is_finite() && to.is_finite()) || to < from {
        return Err(ConfigError::invalid("sweep_to", format!("empty range {from}..{to}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err(ConfigError::invalid("sweep_step", format!("{n} points is too many")));
    }
    Ok((0..n).map(|k| from + step * k as f64).collect())
}
