//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 4 and 5 are known failures. Both are evaluated as stated and
//! reported; only unexpected failures make the process exit non-zero.
//!
//! * 4: once the error reaches the switching-ripple floor (about 0.4 V) the
//!   per-period peak jitters by up to ~13%, beyond the 5% tolerance. The
//!   transient above the floor is monotone, and the RMS, RK4 and
//!   regression parts hold.
//! * 5: the policy chatters across the line `BᵀPe = 0`, where `V` is
//!   minimal along `e2`; every crossing raises `V` by about `p22·Δi²`,
//!   far more than the `α‖e‖²h` decrease per tick unless `‖e‖` is hundreds
//!   of volts.

use std::cell::Cell;
use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use halfbridge::analysis::{boundary, sweep, sweep_serial, SweepAxis, SweepSpec};
use halfbridge::controller::{control, retune};
use halfbridge::droop::DroopParams;
use halfbridge::engine::{run, run_with, Event, Integrator, Scenario, Simulation, Trace};
use halfbridge::numerics::{closed_form_p, expm2, is_hurwitz, solve_lyapunov, zoh_discretize, Mat2};
use halfbridge::plant::{build_state_matrices, ErrorVec, InverterParams};
use halfbridge::reference::{make_gamma, make_pi, osc_step, theta, OscState, ReferenceSpec};

const W60: f64 = 120.0 * PI;
const V_M: f64 = 177.0;

/// Final-period RMS voltage error of the 4 s nominal run, frozen after
/// agreeing with a 10× sub-stepped RK4 run to 1e-10 relative.
const NOMINAL_RMS_REGRESSION: f64 = 0.248_801_072_2;

const KNOWN_UNATTAINABLE: &[u32] = &[4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, max_shrink_iters: 0, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log10()..hi.log10()).prop_map(|x| 10f64.powf(x))
}

/// Plant parameters spanning about two decades around the reference design.
fn params_strategy() -> impl Strategy<Value = InverterParams> {
    (log_uniform(1.0, 500.0), log_uniform(1e-4, 1e-2), log_uniform(1e-4, 1e-2), log_uniform(10.0, 2000.0))
        .prop_map(|(r, l, c, v_dc)| InverterParams { r, l, c, v_dc })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn time_limit(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let ok = elapsed.as_secs_f64() < limit_s;
    (ok, format!("{:.2}s (limit {limit_s}s)", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let worst_entry = Cell::new(0.0f64);
    let worst_resid = Cell::new(0.0f64);
    let res = runner(10_000).run(&(params_strategy(), log_uniform(1e-3, 1e3)), |(p, alpha)| {
        let (a, _) = build_state_matrices(&p);
        let cf = closed_form_p(&p, alpha).unwrap();
        let ls = solve_lyapunov(&a, alpha).unwrap();
        for (x, y) in [(cf.p11(), ls.p11()), (cf.p12(), ls.p12()), (cf.p22(), ls.p22())] {
            let rel = (x - y).abs() / x.abs().max(y.abs());
            worst_entry.set(worst_entry.get().max(rel));
        }
        worst_resid.set(worst_resid.get().max(cf.residual(&a) / alpha));
        prop_assert!(worst_entry.get() <= 1e-9 && worst_resid.get() <= 1e-9);
        Ok(())
    });
    let (fast, t) = time_limit(t0.elapsed(), 1.0);
    Outcome::new(
        res.is_ok() && fast,
        format!(
            "10^4 sets: max entry rel diff {:.1e}, max residual/alpha {:.1e}, {t}",
            worst_entry.get(),
            worst_resid.get()
        ),
    )
}

fn criterion_2() -> Outcome {
    let p = closed_form_p(&InverterParams::NOMINAL, 1.0).unwrap();
    let (a, _) = build_state_matrices(&InverterParams::NOMINAL);
    let ok = rel_close(p.p11(), 0.40972, 1e-4)
        && rel_close(p.p12(), -1.25e-3, 1e-4)
        && rel_close(p.p22(), 7.3755e-2, 1e-4)
        && p.residual(&a) <= 1e-12;
    Outcome::new(
        ok,
        format!("P = ({:.6}, {:.6e}, {:.6e}), residual {:.1e}", p.p11(), p.p12(), p.p22(), p.residual(&a)),
    )
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let worst = Cell::new(0.0f64);
    let res = runner(10_000).run(&(params_strategy(), log_uniform(1.0, 1e4)), |(p, w)| {
        let (a, b) = build_state_matrices(&p);
        let pi = make_pi(&p, w);
        let g = make_gamma(&p, w);
        let lhs = pi * theta(w);
        let bg = Mat2::new(b.x1 * g.g1, b.x1 * g.g2, b.x2 * g.g1, b.x2 * g.g2);
        let api = a * pi;
        let rhs = api + bg;
        // the right side cancels terms of size 1/L, so rounding scales with them
        let scale = lhs.max_abs().max(api.max_abs()).max(bg.max_abs());
        let rel = (lhs - rhs).max_abs() / scale;
        worst.set(worst.get().max(rel));
        prop_assert!(rel <= 1e-12);
        Ok(())
    });
    let (fast, t) = time_limit(t0.elapsed(), 1.0);
    Outcome::new(
        res.is_ok() && fast,
        format!("10^4 sets: max entry diff {:.1e} (relative to largest term), {t}", worst.get()),
    )
}

/// Per-period peak `|v_C − v_ref|` and the number of ticks per period.
fn period_peaks(s: &Scenario) -> (Vec<f64>, f64) {
    let per = (TAU / s.spec.omega / s.control_period).round() as usize;
    let mut peaks = vec![0.0f64; s.n_ticks() / per + 1];
    let (_, m) = run_with(s, |t| {
        let k = t.index / per;
        peaks[k] = peaks[k].max(t.e.v_c.abs());
    })
    .unwrap();
    // drop a trailing partial period
    peaks.truncate(s.n_ticks() / per);
    (peaks, m.rms_error_final_period.unwrap_or(f64::INFINITY))
}

fn criterion_4() -> Outcome {
    let s = Scenario::nominal(4.0);
    let t0 = Instant::now();
    let (peaks, rms) = period_peaks(&s);
    let (fast, t) = time_limit(t0.elapsed(), 10.0);
    let rises: Vec<(usize, f64)> = peaks[1..]
        .windows(2)
        .enumerate()
        .map(|(k, w)| (k + 1, w[1] / w[0] - 1.0))
        .collect();
    let worst_rise = rises.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let monotone = worst_rise <= 0.05;
    // where the first rise beyond tolerance happens, relative to the final peak
    let first_bad = rises.iter().find(|r| r.1 > 0.05).map(|r| r.0);

    let mut rk = s.clone();
    rk.integrator = Integrator::Rk4 { substeps: 10 };
    let rms_rk = run(&rk).unwrap().1.rms_error_final_period.unwrap();
    let agree = rel_close(rms, rms_rk, 0.01);
    let regression = rel_close(rms, NOMINAL_RMS_REGRESSION, 1e-6);
    Outcome::new(
        monotone && rms < 0.02 * V_M && agree && regression && fast,
        format!(
            "peaks {:.1} -> {:.3} V, worst per-period rise {:+.2}%{}, final RMS {rms:.4} V (RK4 {rms_rk:.4} V), {t}",
            peaks[0],
            peaks[peaks.len() - 1],
            100.0 * worst_rise,
            match first_bad {
                Some(k) => format!(" (first in period {k} at {:.3} V peak)", peaks[k]),
                None => String::new(),
            }
        ),
    )
}

fn criterion_5() -> Outcome {
    let s = Scenario::nominal(4.0);
    let t0 = Instant::now();
    let per = (TAU / W60 / s.control_period).round() as usize;
    let tail_start = s.n_ticks() - per;
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(s.n_ticks());
    let mut ripple = 0.0f64;
    run_with(&s, |t| {
        samples.push((t.e.norm(), t.lyap_v));
        if t.index >= tail_start {
            ripple = ripple.max(t.e.norm());
        }
    })
    .unwrap();
    let eps0 = 3.0 * ripple;
    let mut eligible = 0usize;
    let mut rises = 0usize;
    for w in samples.windows(2) {
        if w[0].0 >= eps0 {
            eligible += 1;
            if w[1].1 >= w[0].1 {
                rises += 1;
            }
        }
    }
    let (fast, t) = time_limit(t0.elapsed(), 10.0);
    Outcome::new(
        rises == 0 && fast,
        format!(
            "eps0 = {eps0:.3}, {rises} of {eligible} intervals with ||e|| >= eps0 have V(e_k+1) >= V(e_k) ({:.1}%), {t}",
            100.0 * rises as f64 / eligible.max(1) as f64
        ),
    )
}

fn load_step(r_new: f64, known: bool) -> (f64, f64, f64, bool) {
    let mut s = Scenario::nominal(4.0);
    s.events = vec![Event::load_change(1.0, r_new, known)];
    let per = (TAU / W60 / s.control_period).round() as usize;
    let event_tick = 1_000_000;
    let tail_start = s.n_ticks() - per;
    let (mut pre, mut last) = (0.0f64, 0.0f64);
    let (_, m) = run_with(&s, |t| {
        if t.index + per >= event_tick && t.index < event_tick {
            pre = pre.max(t.e.v_c.abs());
        }
        if t.index >= tail_start {
            last = last.max(t.e.v_c.abs());
        }
    })
    .unwrap();
    (pre, last, m.rms_error_final_period.unwrap_or(f64::INFINITY), m.diverged)
}

fn criterion_6() -> Outcome {
    let (_, _, rms60, _) = load_step(60.0, true);
    let (_, _, rms80, _) = load_step(80.0, true);
    Outcome::new(
        rms60 < 0.02 * V_M && rms80 < 0.02 * V_M,
        format!("final RMS with retune: 60 Ω {rms60:.4} V, 80 Ω {rms80:.4} V (limit {:.2} V)", 0.02 * V_M),
    )
}

fn criterion_7() -> Outcome {
    let (_, end60, _, div60) = load_step(60.0, false);
    let (pre80, end80, _, div80) = load_step(80.0, false);
    let bounded = !div60 && end60 < 0.1 * V_M;
    let diverges = div80 || end80 >= 10.0 * pre80;
    Outcome::new(
        bounded && diverges,
        format!(
            "60 Ω stale: error {end60:.3} V at 4 s (limit {:.1} V); 80 Ω stale: {pre80:.3} V before, {end80:.2} V at 4 s ({:.1}x){}",
            0.1 * V_M,
            end80 / pre80,
            if div80 { ", ceiling hit" } else { "" }
        ),
    )
}

fn criterion_8() -> Outcome {
    let t0 = Instant::now();
    let base = Scenario::nominal(4.0);
    let params = InverterParams::NOMINAL;
    let nominal = run(&base).unwrap().1.rms_error_final_period.unwrap();

    let vm_cut = boundary(&params, &ReferenceSpec::NOMINAL, SweepAxis::VM, None).unwrap();
    let w_cut = boundary(&params, &ReferenceSpec::NOMINAL, SweepAxis::Omega, None).unwrap();

    let check = |axis: SweepAxis, values: Vec<f64>, v_m_of: &dyn Fn(f64) -> f64, cut: f64| -> (bool, String) {
        let res = sweep(&SweepSpec { base: base.clone(), axis, values, retune: true }).unwrap();
        let mut ok_inside = true;
        let mut worst_beyond = 0.0f64;
        for p in &res.points {
            let rms = p.metrics.rms_error_final_period.unwrap_or(f64::INFINITY);
            if p.margin >= 0.2 && !(rms < 0.02 * v_m_of(p.value)) {
                ok_inside = false;
            }
            if p.value > cut {
                let level = if p.metrics.diverged { f64::INFINITY } else { rms };
                worst_beyond = worst_beyond.max(level / nominal);
            }
        }
        (ok_inside && worst_beyond >= 10.0, format!("{}: cutoff {cut:.1}, max beyond {worst_beyond:.0}x", axis.name()))
    };
    let vm_values: Vec<f64> = (1..=18).map(|k| 50.0 * k as f64).collect();
    let (ok_vm, d_vm) = check(SweepAxis::VM, vm_values, &|v| v, vm_cut);
    let w_values = vec![60.0, 120.0, 240.0, W60, 600.0, 1000.0, 1500.0, 1800.0, 1900.0, 2100.0, 2300.0, 2600.0, 3000.0];
    let (ok_w, d_w) = check(SweepAxis::Omega, w_values, &|_| V_M, w_cut);
    let cut_ok = (vm_cut - 714.2).abs() < 0.1 && (w_cut - 1.97e3).abs() < 10.0;
    let (fast, t) = time_limit(t0.elapsed(), 300.0);
    Outcome::new(
        ok_vm && ok_w && cut_ok && fast,
        format!("nominal RMS {nominal:.4} V; {d_vm}; {d_w}; {t}"),
    )
}

/// Sinusoidal steady state of the droop loop: solves
/// `V = V* + k_q(Q* − Q(V, ω))`, `ω = ω* + k_p(P* − P(V))` with
/// `P = V²/(2R)`, `Q = −ωCV²/2` and the setpoints built from `V*` as
/// `P* = V*²/R`, `Q* = −ω*CV*²/2`.
fn droop_fixed_point(p: &InverterParams, v_star: f64, w_star: f64, k_p: f64, k_q: f64) -> (f64, f64) {
    let p_star = v_star * v_star / p.r;
    let q_star = -w_star * p.c * v_star * v_star / 2.0;
    let (mut v, mut w) = (v_star, w_star);
    for _ in 0..200 {
        w = w_star + k_p * (p_star - v * v / (2.0 * p.r));
        v = v_star + k_q * (q_star + w * p.c * v * v / 2.0);
    }
    (v, w)
}

fn criterion_9() -> Outcome {
    let p = InverterParams::NOMINAL;
    let (k_p, k_q) = (0.01, 0.0025);
    let dp = DroopParams::for_operating_point(&p, V_M, W60, k_p, k_q, 1e-6).unwrap();
    let mut s = Scenario::nominal(4.0).starting_on_reference();
    s.droop = Some(dp);
    s.events = vec![Event::setpoint_change(0.2, 185.0, W60)];
    let mut updates: Vec<(f64, f64)> = Vec::new();
    let mut worst_track = 0.0f64;
    run_with(&s, |t| {
        if updates.last().is_none_or(|&(_, v)| v != t.v_m_cmd) {
            updates.push((t.t, t.v_m_cmd));
        }
        worst_track = worst_track.max(t.e.v_c.abs() / t.v_m_cmd);
    })
    .unwrap();
    let (v_fp, _) = droop_fixed_point(&p, 185.0, W60, k_p, k_q);
    let after: Vec<f64> = updates.iter().filter(|(t, _)| *t > 0.2).map(|&(_, v)| v).collect();
    // skip the first period after the step
    let dist: Vec<f64> = after[1..].iter().map(|v| (v - v_fp).abs()).collect();
    let tol = 1e-4 * v_fp;
    let monotone = dist.windows(2).all(|w| w[1] <= w[0] + tol);
    let v_end = *after.last().unwrap();
    let converged = rel_close(v_end, v_fp, 0.01);
    Outcome::new(
        monotone && converged && worst_track < 0.02,
        format!(
            "V_m -> {v_end:.3} V, oracle fixed point {v_fp:.3} V, {} updates, worst |e|/V_m {:.2}%",
            after.len(),
            100.0 * worst_track
        ),
    )
}

fn trace_bytes(tr: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    buf
}

fn criterion_10() -> Outcome {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    // policy invariance under α and positive error scaling
    let r = runner(2_000).run(
        &(params_strategy(), log_uniform(1e-3, 1e3), -1e3..1e3f64, -1e3..1e3f64, log_uniform(1e-6, 1e6)),
        |(p, alpha, e1, e2, k)| {
            let spec = ReferenceSpec::NOMINAL;
            let c1 = retune(&p, &spec, 1.0).unwrap();
            let ca = retune(&p, &spec, alpha).unwrap();
            let e = ErrorVec::new(e1, e2);
            let u = control(e, &c1);
            // keep away from the switching line, where rounding decides
            let s = c1.switching_function(e).abs();
            let scale = (c1.b().x2 * c1.p().p22() * e2).abs() + (c1.b().x2 * c1.p().p12() * e1).abs();
            if s > 1e-9 * scale {
                prop_assert_eq!(u, control(e, &ca));
                prop_assert_eq!(u, control(ErrorVec::new(k * e1, k * e2), &c1));
            }
            Ok(())
        },
    );
    if r.is_err() {
        failures.push("policy invariance");
    }

    // oscillator norm preservation
    let r = runner(2_000).run(&(-500.0..500.0f64, -500.0..500.0f64, log_uniform(1.0, 1e4), log_uniform(1e-7, 1e-2)), |(a, b, w, h)| {
        let z = OscState::new(a, b);
        let mut y = z;
        for _ in 0..100 {
            y = osc_step(y, w, h).unwrap();
        }
        prop_assert!((y.norm() - z.norm()).abs() <= 1e-12 * z.norm().max(1e-300));
        Ok(())
    });
    if r.is_err() {
        failures.push("oscillator norm");
    }

    // ZOH semigroup: map(h1 + h2) = map(h2) ∘ map(h1)
    let r = runner(2_000).run(&(params_strategy(), log_uniform(1e-7, 1e-3), log_uniform(1e-7, 1e-3)), |(p, h1, h2)| {
        let (a, b) = build_state_matrices(&p);
        let m1 = zoh_discretize(&a, b, h1).unwrap();
        let m2 = zoh_discretize(&a, b, h2).unwrap();
        let m12 = zoh_discretize(&a, b, h1 + h2).unwrap();
        let phi = m2.phi * m1.phi;
        let gd = m2.phi.mul_vec(m1.gd) + m2.gd;
        prop_assert!((phi - m12.phi).max_abs() <= 1e-10 * m12.phi.max_abs());
        prop_assert!((gd - m12.gd).max_abs() <= 1e-10 * m12.gd.max_abs());
        let e = expm2(&a, h1 + h2).unwrap();
        prop_assert!((e - m12.phi).max_abs() <= 1e-10 * e.max_abs());
        Ok(())
    });
    if r.is_err() {
        failures.push("ZOH semigroup");
    }

    // Hurwitz for every positive R, L, C
    let r = runner(2_000).run(&(log_uniform(1e-3, 1e6), log_uniform(1e-9, 1.0), log_uniform(1e-9, 1.0)), |(r, l, c)| {
        let (a, _) = build_state_matrices(&InverterParams { r, l, c, v_dc: 1.0 });
        prop_assert!(is_hurwitz(&a));
        Ok(())
    });
    if r.is_err() {
        failures.push("Hurwitz");
    }

    // event atomicity: a known load change equals a fresh start from the
    // pre-event state with the new parameters
    {
        let mut s = Scenario::nominal(0.02);
        s.events = vec![Event::load_change(0.01, 70.0, true)];
        let mut sim = Simulation::new(&s).unwrap();
        while sim.tick_index() < 10_000 {
            sim.step().unwrap();
        }
        let mut fresh = Scenario::nominal(0.01);
        fresh.params = fresh.params.with_r(70.0);
        fresh.initial_state = sim.state();
        fresh.initial_osc = Some(sim.osc());
        let mut sim2 = Simulation::new(&fresh).unwrap();
        let mut same = true;
        while let (Some(a), Some(b)) = (sim.step().unwrap(), sim2.step().unwrap()) {
            same &= a.x == b.x && a.u == b.u && a.e == b.e;
        }
        same &= sim.state() == sim2.state();
        if !same {
            failures.push("event atomicity");
        }
    }

    // bit-identical repeated runs, and parallel sweeps equal serial ones
    {
        let p = InverterParams::NOMINAL;
        let mut s = Scenario::nominal(0.3).starting_on_reference();
        s.droop = Some(DroopParams::for_operating_point(&p, V_M, W60, 0.01, 0.0025, 1e-6).unwrap());
        s.events = vec![Event::setpoint_change(0.1, 185.0, W60), Event::load_change(0.2, 60.0, false)];
        let (a, ma) = run(&s).unwrap();
        let (b, mb) = run(&s).unwrap();
        let spec = SweepSpec {
            base: Scenario::nominal(0.05),
            axis: SweepAxis::LoadR,
            values: vec![20.0, 40.0, 60.0, 80.0],
            retune: false,
        };
        if trace_bytes(&a) != trace_bytes(&b)
            || format!("{ma:?}") != format!("{mb:?}")
            || sweep(&spec).unwrap() != sweep_serial(&spec).unwrap()
        {
            failures.push("determinism");
        }
    }

    let (fast, t) = time_limit(t0.elapsed(), 30.0);
    Outcome::new(
        failures.is_empty() && fast,
        if failures.is_empty() {
            format!("scale invariance, oscillator norm, ZOH semigroup, Hurwitz, event atomicity, determinism; {t}")
        } else {
            format!("failed: {}; {t}", failures.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "Lyapunov algebra", criterion_1),
        (2, "nominal-design P values", criterion_2),
        (3, "reference identity", criterion_3),
        (4, "nominal tracking from 70 V", criterion_4),
        (5, "sampled Lyapunov descent", criterion_5),
        (6, "load steps with retuning", criterion_6),
        (7, "load steps without retuning", criterion_7),
        (8, "amplitude and frequency sweeps", criterion_8),
        (9, "droop setpoint step", criterion_9),
        (10, "property suite", criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (n, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let o = f();
        let known = KNOWN_UNATTAINABLE.contains(&n);
        let status = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {n:>2} {status:<12} {name}: {}", o.detail);
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
