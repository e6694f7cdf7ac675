use std::io::{self, Write};

/// Column names of the trace CSV, in order.
pub const TRACE_HEADER: [&str; 11] =
    ["t", "v_c", "i_l", "v_ref", "i_ref", "u", "lyap_v", "p_meas", "q_meas", "omega_cmd", "v_m_cmd"];

/// Units of each column, written as a leading comment line.
pub const TRACE_UNITS: [&str; 11] = ["s", "V", "A", "V", "A", "1", "1", "W", "VAR", "rad/s", "V"];

/// One recorded control tick: the state at the start of the interval and
/// the command held over it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub v_c: f64,
    pub i_l: f64,
    pub v_ref: f64,
    pub i_ref: f64,
    pub u: i8,
    /// `eᵀPe` with the controller's current `P`.
    pub lyap_v: f64,
    /// Latest windowed active power, NaN before the first full window.
    pub p_meas: f64,
    pub q_meas: f64,
    pub omega_cmd: f64,
    pub v_m_cmd: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub diverged: bool,
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# units: {}", TRACE_UNITS.join(","))?;
        writeln!(w, "{}", TRACE_HEADER.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(r.t),
                fmt_f64(r.v_c),
                fmt_f64(r.i_l),
                fmt_f64(r.v_ref),
                fmt_f64(r.i_ref),
                r.u,
                fmt_f64(r.lyap_v),
                fmt_f64(r.p_meas),
                fmt_f64(r.q_meas),
                fmt_f64(r.omega_cmd),
                fmt_f64(r.v_m_cmd),
            )?;
        }
        Ok(())
    }
}
