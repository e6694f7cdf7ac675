use std::collections::VecDeque;
use std::f64::consts::TAU;

use crate::reference::ReferenceSpec;

use super::trace::Trace;

/// Fraction of the instantaneous amplitude that counts as settled.
pub const SETTLING_FRACTION: f64 = 0.02;

/// Tracking-quality summary of one run, computed on the voltage error
/// `v_C − v_C,ref`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// RMS over the final fundamental period; `None` if the run diverged or
    /// was shorter than one period.
    pub rms_error_final_period: Option<f64>,
    pub max_abs_error: f64,
    /// Time after which the error stays below 2% of `V_m`; `None` if it
    /// never settles or the run diverged.
    pub settling_time: Option<f64>,
    pub diverged: bool,
}

/// Streaming accumulator fed once per control tick.
#[derive(Clone, Debug)]
pub(crate) struct MetricsAccumulator {
    recent: VecDeque<f64>,
    capacity: usize,
    max_abs: f64,
    last_violation: Option<f64>,
    last_t: f64,
    dt: f64,
    count: usize,
}

impl MetricsAccumulator {
    pub(crate) fn new(capacity: usize, dt: f64) -> Self {
        let capacity = capacity.max(1);
        Self {
            recent: VecDeque::with_capacity(capacity),
            capacity,
            max_abs: 0.0,
            last_violation: None,
            last_t: 0.0,
            dt,
            count: 0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, t: f64, err: f64, v_m: f64) {
        let a = err.abs();
        if a > self.max_abs || a.is_nan() {
            self.max_abs = a;
        }
        if !(a < SETTLING_FRACTION * v_m) {
            self.last_violation = Some(t);
        }
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(err);
        self.last_t = t;
        self.count += 1;
    }

    /// `final_period` is the number of samples in the last fundamental period.
    pub(crate) fn finish(&self, final_period: usize, diverged: bool) -> Metrics {
        if diverged {
            return Metrics {
                rms_error_final_period: None,
                max_abs_error: self.max_abs,
                settling_time: None,
                diverged,
            };
        }
        let n = final_period.max(1);
        let rms = (self.count >= n).then(|| {
            let take = n.min(self.recent.len());
            let sum: f64 = self.recent.iter().skip(self.recent.len() - take).map(|e| e * e).sum();
            (sum / take as f64).sqrt()
        });
        let settling_time = match self.last_violation {
            None => Some(0.0),
            Some(t) if t >= self.last_t => None,
            Some(t) => Some(t + self.dt),
        };
        Metrics { rms_error_final_period: rms, max_abs_error: self.max_abs, settling_time, diverged }
    }
}

/// Metrics from a recorded trace. The final period is measured in rows, so
/// decimated traces give sample-based approximations of the per-tick values.
pub fn compute_metrics(trace: &Trace, spec: &ReferenceSpec) -> Metrics {
    let rows = &trace.rows;
    let dt = if rows.len() >= 2 { rows[1].t - rows[0].t } else { 0.0 };
    let period_rows = if dt > 0.0 { (TAU / spec.omega / dt).round() as usize } else { usize::MAX };
    let mut acc = MetricsAccumulator::new(period_rows.min(rows.len()).max(1), dt);
    for r in rows {
        acc.push(r.t, r.v_c - r.v_ref, r.v_m_cmd);
    }
    if period_rows == usize::MAX || rows.len() < period_rows {
        let mut m = acc.finish(usize::MAX, trace.diverged);
        m.rms_error_final_period = None;
        return m;
    }
    acc.finish(period_rows, trace.diverged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::trace::TraceRow;

    fn trace_from(errs: impl Iterator<Item = (f64, f64)>) -> Trace {
        let rows = errs
            .map(|(t, e)| TraceRow {
                t,
                v_c: 100.0 * (t * 377.0).sin() + e,
                i_l: 0.0,
                v_ref: 100.0 * (t * 377.0).sin(),
                i_ref: 0.0,
                u: 1,
                lyap_v: 0.0,
                p_meas: f64::NAN,
                q_meas: f64::NAN,
                omega_cmd: 377.0,
                v_m_cmd: 100.0,
            })
            .collect();
        Trace { rows, diverged: false }
    }

    fn spec() -> ReferenceSpec {
        ReferenceSpec::new(100.0, 377.0).unwrap()
    }

    #[test]
    fn on_reference_is_zero() {
        let tr = trace_from((0..40_000).map(|k| (k as f64 * 1e-6, 0.0)));
        let m = compute_metrics(&tr, &spec());
        assert_eq!(m.rms_error_final_period, Some(0.0));
        assert_eq!(m.max_abs_error, 0.0);
        assert_eq!(m.settling_time, Some(0.0));
    }

    #[test]
    fn constant_offset() {
        let tr = trace_from((0..40_000).map(|k| (k as f64 * 1e-6, -1.5)));
        let m = compute_metrics(&tr, &spec());
        assert!((m.rms_error_final_period.unwrap() - 1.5).abs() < 1e-9);
        assert!((m.max_abs_error - 1.5).abs() < 1e-9);
    }

    #[test]
    fn short_trace_reports_max_only() {
        let tr = trace_from((0..100).map(|k| (k as f64 * 1e-6, 0.5)));
        let m = compute_metrics(&tr, &spec());
        assert_eq!(m.rms_error_final_period, None);
        assert!((m.max_abs_error - 0.5).abs() < 1e-9);
    }

    #[test]
    fn settling_after_transient() {
        // 10 V error for the first 5 ms, then 0.1 V
        let tr = trace_from((0..40_000).map(|k| {
            let t = k as f64 * 1e-6;
            (t, if k < 5_000 { 10.0 } else { 0.1 })
        }));
        let m = compute_metrics(&tr, &spec());
        assert!((m.settling_time.unwrap() - 5e-3).abs() < 1e-9);
    }

    #[test]
    fn never_settles() {
        let tr = trace_from((0..40_000).map(|k| (k as f64 * 1e-6, 5.0)));
        assert_eq!(compute_metrics(&tr, &spec()).settling_time, None);
    }

    #[test]
    fn diverged_hides_final_metrics() {
        let mut tr = trace_from((0..40_000).map(|k| (k as f64 * 1e-6, 0.0)));
        tr.diverged = true;
        let m = compute_metrics(&tr, &spec());
        assert!(m.diverged);
        assert_eq!(m.rms_error_final_period, None);
        assert_eq!(m.settling_time, None);
    }
}
