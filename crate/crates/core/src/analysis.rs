//! Parameter sweeps and predicted stability boundaries.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::engine::{fmt_f64, run, Metrics, Scenario};
use crate::error::{Error, Result};
use crate::plant::InverterParams;
use crate::reference::{stability_margin, ReferenceSpec};

/// Relative width at which [`boundary`] stops bisecting.
pub const BOUNDARY_REL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    /// Load resistance, ohms.
    LoadR,
    /// Reference amplitude, volts.
    VM,
    /// Reference frequency, rad/s.
    Omega,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LoadR => "load_r",
            SweepAxis::VM => "v_m",
            SweepAxis::Omega => "omega",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "load_r" => Ok(SweepAxis::LoadR),
            "v_m" => Ok(SweepAxis::VM),
            "omega" => Ok(SweepAxis::Omega),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis {s:?} (expected load_r, v_m or omega)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// For `LoadR`: retune the controller to each load. When false the
    /// controller and reference stay designed for the base load.
    pub retune: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Predicted margin `1 − V_m‖Γ‖` at this point, for the true plant.
    pub margin: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one value".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("sweep values must be positive, got {v}")));
        }
        self.base.validate()
    }

    /// The scenario run at one sweep value.
    pub fn scenario_at(&self, value: f64) -> Scenario {
        let mut s = self.base.clone();
        match self.axis {
            SweepAxis::LoadR => {
                if !self.retune {
                    s.model_params = Some(self.base.model());
                } else {
                    s.model_params = None;
                }
                s.params = s.params.with_r(value);
            }
            SweepAxis::VM => s.spec.v_m = value,
            SweepAxis::Omega => s.spec.omega = value,
        }
        s
    }

    fn point(&self, value: f64) -> Result<SweepPoint> {
        let s = self.scenario_at(value);
        let margin = stability_margin(&s.params, &s.spec);
        let (_, metrics) = run(&s)?;
        Ok(SweepPoint { value, margin, metrics })
    }
}

/// Runs every point in parallel. Points are independent, so the result is
/// identical to [`sweep_serial`].
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec.values.par_iter().map(|&v| spec.point(v)).collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis: spec.axis, points })
}

pub fn sweep_serial(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec.values.iter().map(|&v| spec.point(v)).collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis: spec.axis, points })
}

/// Default search interval for [`boundary`] along each axis.
pub fn default_interval(params: &InverterParams, axis: SweepAxis) -> (f64, f64) {
    match axis {
        SweepAxis::LoadR => (1e-3, 1e6),
        SweepAxis::VM => (0.0, 1e6),
        // below resonance the margin is not monotone in ω
        SweepAxis::Omega => (params.resonance(), 1e6),
    }
}

/// Value along `axis` where the predicted margin crosses zero, found by
/// bisection inside `interval`. The other coordinates come from `params`
/// and `spec`.
pub fn boundary(
    params: &InverterParams,
    spec: &ReferenceSpec,
    axis: SweepAxis,
    interval: Option<(f64, f64)>,
) -> Result<f64> {
    params.validate()?;
    spec.validate()?;
    let (mut lo, mut hi) = interval.unwrap_or_else(|| default_interval(params, axis));
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("bad interval [{lo}, {hi}]")));
    }
    let margin_at = |x: f64| -> f64 {
        match axis {
            SweepAxis::LoadR => stability_margin(&params.with_r(x), spec),
            SweepAxis::VM => stability_margin(params, &ReferenceSpec { v_m: x, ..*spec }),
            SweepAxis::Omega => stability_margin(params, &ReferenceSpec { omega: x, ..*spec }),
        }
    };
    let (m_lo, m_hi) = (margin_at(lo), margin_at(hi));
    if m_lo == 0.0 {
        return Ok(lo);
    }
    if m_hi == 0.0 {
        return Ok(hi);
    }
    if m_lo.signum() == m_hi.signum() {
        return Err(Error::NoBoundary { lo, hi });
    }
    let lo_positive = m_lo > 0.0;
    while hi - lo > BOUNDARY_REL_TOL * hi.abs().max(lo.abs()) {
        let mid = 0.5 * (lo + hi);
        let m = margin_at(mid);
        if m == 0.0 {
            return Ok(mid);
        }
        if (m > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub const SWEEP_HEADER: &str = "value,margin,rms_error_final_period,max_abs_error,settling_time,diverged";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt_f64)
}

/// One row per point; missing metrics are written as NaN.
pub fn write_sweep_csv<W: Write>(res: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "# axis: {}", res.axis.name())?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for p in &res.points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(p.value),
            fmt_f64(p.margin),
            opt(p.metrics.rms_error_final_period),
            fmt_f64(p.metrics.max_abs_error),
            opt(p.metrics.settling_time),
            p.metrics.diverged as u8,
        )?;
    }
    Ok(())
}
