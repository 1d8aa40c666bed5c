//! Acceptance matrix. Each test prints one `PASS`/`FAIL` line to the real
//! stdout (bypassing the harness capture) before asserting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::io::Write;
use std::sync::OnceLock;

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use pucci_radial::energy::{entire_space_energy, energy_limit_experiment, region_energy, total_energy, EnergyLimitTable};
use pucci_radial::exponents::{center_probe, critical_exponent_ball, critical_exponent_nodal, nodal_gap, CriticalExponentEstimate};
use pucci_radial::integrator::integrate_exterior_spec;
use pucci_radial::nodal::{build_nodal, concentration_sweep, decay_bound_check, last_relative_change, scaling_identity_check, strictly_decreasing, strictly_increasing, SweepEntry, SweepRecord, DEFAULT_EPSILONS};
use pucci_radial::shooting::{critical_slope, positive_ball_solution, SlopeSearch};
use pucci_radial::{integrate_exterior, integrate_from_center, Branch, ExteriorKind, IntegrationOptions, OperatorSpec, RadialProfile, StopRule};

const TOL: f64 = 1e-10;
const QUAD_TOL: f64 = 1e-9;
const P_TOL_BALL: f64 = 1e-7;
const P_TOL_NODAL: f64 = 1e-6;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance {n:>2} {verdict} {name}: {detail}").unwrap();
}

fn minus() -> OperatorSpec {
    OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap()
}

fn plus() -> OperatorSpec {
    minus().with_branch(Branch::Plus)
}

fn to_zero() -> IntegrationOptions {
    IntegrationOptions::new(TOL, 1e6, StopRule::Zeros(1))
}

fn long() -> IntegrationOptions {
    IntegrationOptions::new(TOL, 1e12, StopRule::RMax)
}

struct Exponents {
    minus: CriticalExponentEstimate,
    plus: CriticalExponentEstimate,
    nodal: CriticalExponentEstimate,
}

fn exponents() -> &'static Exponents {
    static CELL: OnceLock<Exponents> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = critical_exponent_ball(&minus(), P_TOL_BALL, to_zero()).expect("p*-");
        let p = critical_exponent_ball(&plus(), P_TOL_BALL, to_zero()).expect("p*+");
        let nodal = critical_exponent_nodal(&minus(), m.value, p.value, P_TOL_NODAL, 16, to_zero()).expect("p**+");
        Exponents { minus: m, plus: p, nodal }
    })
}

type Sweep = Vec<SweepEntry<SweepRecord>>;

fn sweep(which: usize) -> &'static Sweep {
    static CELLS: [OnceLock<Sweep>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CELLS[which].get_or_init(|| {
        let e = exponents();
        let (spec, k, pc) = [(minus(), 2, e.minus.value), (plus(), 2, e.nodal.value), (plus(), 3, e.nodal.value)][which];
        concentration_sweep(&spec, k, &DEFAULT_EPSILONS, pc, long()).expect("sweep")
    })
}

fn records(s: &Sweep) -> Vec<&SweepRecord> {
    s.iter().map(|e| e.result.as_ref().expect("sweep entry")).collect()
}

fn column(s: &Sweep, f: impl Fn(&SweepRecord) -> f64) -> Vec<f64> {
    records(s).into_iter().map(f).collect()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn c01_laplacian_limit_exponents() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (dim, exact) in [(3, 5.0), (4, 3.0), (5, 7.0 / 3.0)] {
        let est = critical_exponent_ball(&OperatorSpec::laplacian(dim), 1e-5, to_zero()).expect("laplacian exponent");
        let err = (est.value - exact).abs();
        pass &= err <= 1e-3;
        detail.push(format!("N={dim} p={:.6} err={err:.1e}", est.value));
    }
    report(1, "Laplacian-limit exponents within 1e-3", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c02_lane_emden_first_zero() {
    let reference = common::lane_emden_first_zero();
    let prof = integrate_from_center(&OperatorSpec::laplacian(3), 3.0, 1.0, to_zero()).expect("lane-emden shoot");
    let z = prof.zeros()[0];
    let err = (z - reference).abs();
    let pass = err <= 1e-4;
    report(2, "Lane-Emden first zero within 1e-4", pass, &format!("solver {z:.12} reference {reference:.12} diff {err:.1e}"));
    assert!(pass);
}

#[test]
fn c03_bubble_identity() {
    let spec = OperatorSpec::laplacian(4);
    let prof = integrate_from_center(&spec, 3.0, 1.0, IntegrationOptions::new(TOL, 100.0, StopRule::RMax)).expect("bubble shoot");
    let mut worst = 0.0f64;
    let mut check = |r: f64, u: f64| worst = worst.max((u - common::bubble(r)).abs() / common::bubble(r));
    for (&r, &u) in prof.r.iter().zip(&prof.u) {
        check(r, u);
    }
    for i in 0..=2000 {
        let r = 100.0 * i as f64 / 2000.0;
        check(r, prof.eval(r).0);
    }
    let energy = entire_space_energy(&spec, 3.0, to_zero(), QUAD_TOL).expect("bubble energy");
    let rel = (energy.value - common::bubble_energy()).abs() / common::bubble_energy();
    let pass = worst <= 10.0 * TOL && rel <= 5e-3 && prof.r_end() >= 100.0;
    report(
        3,
        "bubble profile to 10 tol on [0, 100], energy within 0.5%",
        pass,
        &format!("max relative deviation {worst:.1e}, energy {:.6} vs {:.6} (rel {rel:.1e})", energy.value, common::bubble_energy()),
    );
    assert!(pass);
}

#[test]
fn c04_exponent_bounds() {
    let e = exponents();
    let o = IntegrationOptions { tol: TOL / 2.0, ..to_zero() };
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, est, lo, hi) in [
        ("p*-", &e.minus, 15.0 / 7.0, 3.0),
        ("p*+", &e.plus, 3.0, 5.0),
        ("p**+", &e.nodal, e.minus.value, e.plus.value),
    ] {
        let (a, b) = est.bracket;
        let inside = lo < a && b < hi;
        let narrow = b - a <= 1e-3;
        let verified = if name == "p**+" {
            let ga = nodal_gap(&minus(), a, 1e-9, o).expect("gap at lower end").gap;
            let gb = nodal_gap(&minus(), b, 1e-9, o).expect("gap at upper end").gap;
            ga > 0.0 && gb < 0.0
        } else {
            let spec = est.spec;
            center_probe(&spec, a, o).expect("probe").exists && !center_probe(&spec, b, o).expect("probe").exists
        };
        pass &= inside && narrow && verified;
        detail.push(format!("{name}={:.8} in ({lo:.5}, {hi:.5}) width {:.1e} certificates {}", est.value, b - a, if verified { "ok" } else { "BAD" }));
    }
    report(4, "bound suite", pass, &detail.join("; "));
    assert!(pass);
}

fn alpha_star(p: f64) -> f64 {
    critical_slope(ExteriorKind::MinusIvp, &minus(), p, SlopeSearch::default(), to_zero()).expect("critical slope").alpha_star
}

#[test]
fn c05_critical_slope_behavior() {
    let pm = exponents().minus.value;
    let below: Vec<f64> = [pm - 0.1, pm - 0.05].iter().map(|&p| alpha_star(p)).collect();
    let above: Vec<f64> = [pm + 0.05, pm + 0.1, 3.0].iter().map(|&p| alpha_star(p)).collect();
    let mut continuity = Vec::new();
    for p in [2.5, 3.0, 3.5] {
        let (a, b) = (alpha_star(p), alpha_star(p + 0.01));
        continuity.push((b - a).abs() / a);
    }
    let pass = below.iter().all(|&a| a == 0.0) && above.iter().all(|&a| a > 0.0) && continuity.iter().all(|&c| c <= 0.1);
    report(
        5,
        "critical slope vanishes below p*-, positive above, continuous",
        pass,
        &format!("below {} above {} relative jumps {}", fmt(&below), fmt(&above), fmt(&continuity)),
    );
    assert!(pass);
}

#[test]
fn c06_gluing_matches_exterior_problem() {
    // where u < 0, M-(D^2 u) = -M+(D^2(-u)), so the annular part is minus the
    // exterior solution of the plus operator
    let spec = minus();
    let p = exponents().minus.value - 0.1;
    let sol = build_nodal(&spec, p, 2, long()).expect("two-region solution");
    let ball = positive_ball_solution(&spec, p, long()).expect("ball");
    let alpha = ball.boundary_slope.abs();
    let w = integrate_exterior(spec.lambda, spec.upper, spec.dim, ExteriorKind::PlusIvp, p, alpha, to_zero()).expect("exterior");
    let r1 = sol.decomposition.nodal_radii[0];
    let scale = r1.powf(2.0 / (p - 1.0));
    let w_sup = w.u.iter().fold(0.0f64, |m, &u| m.max(u.abs()));
    let mut worst = 0.0f64;
    let mut points = 0;
    for (&r, &u) in sol.profile.r.iter().zip(&sol.profile.u) {
        let x = r / r1;
        if (1.0..=w.r_end()).contains(&x) {
            worst = worst.max((scale * u + w.eval(x).0).abs() / w_sup);
            points += 1;
        }
    }
    let zero_gap = (w.zeros()[0] - 1.0 / r1).abs() * r1;
    let pass = worst <= 10.0 * TOL && zero_gap <= 10.0 * TOL && points > 10;
    report(
        6,
        "rescaled annulus equals the exterior solution at |v'(1)|",
        pass,
        &format!("p={p:.6} alpha={alpha:.6} max deviation / sup {worst:.1e} over {points} points, zero mismatch {zero_gap:.1e}"),
    );
    assert!(pass);
}

#[test]
fn c07_scaling_identities() {
    let pm = exponents().minus.value;
    let mut worst = (0.0f64, 0.0f64);
    for &eps in &DEFAULT_EPSILONS {
        let p = pm - eps;
        let sol = build_nodal(&minus(), p, 2, long()).expect("minus k=2");
        let rep = scaling_identity_check(&sol, &minus(), p, long()).expect("scaling check");
        worst = (worst.0.max(rep.residual_nodal_radius), worst.1.max(rep.residual_slope));
    }
    let mut runner = TestRunner::new(Config { cases: 12, ..Config::default() });
    let spec = minus();
    let p = 2.0;
    let o = IntegrationOptions::new(TOL, 1e6, StopRule::Zeros(2));
    let base = integrate_from_center(&spec, p, 1.0, o).expect("reference shoot");
    let zb = base.zeros();
    let e_ref = region_energy(&base, zb[0], zb[1], QUAD_TOL).expect("reference energy").value;
    let worst_energy = std::cell::Cell::new(0.0f64);
    let outcome = runner.run(&(0.25f64..4.0), |alpha| {
        let prof = integrate_from_center(&spec, p, alpha, o).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let z = prof.zeros();
        let e = region_energy(&prof, z[0], z[1], QUAD_TOL).map_err(|e| TestCaseError::fail(e.to_string()))?.value;
        let rel = (e - e_ref).abs() / e_ref;
        worst_energy.set(worst_energy.get().max(rel));
        if rel > 10.0 * QUAD_TOL {
            return Err(TestCaseError::fail(format!("alpha {alpha}: relative change {rel:e}")));
        }
        Ok(())
    });
    let pass = worst.0 <= 10.0 * TOL && worst.1 <= 10.0 * TOL && outcome.is_ok();
    report(
        7,
        "scaling identities and energy invariance",
        pass,
        &format!(
            "nodal radius residual {:.1e}, slope residual {:.1e}, energy invariance worst {:.1e}{}",
            worst.0,
            worst.1,
            worst_energy.get(),
            outcome.err().map(|e| format!(" ({e})")).unwrap_or_default()
        ),
    );
    assert!(pass);
}

#[test]
fn c08_minus_concentration_trends() {
    let s = sweep(0);
    let m0 = column(s, |r| r.decomposition.extremum_values[0]);
    let m1 = column(s, |r| r.decomposition.extremum_values[1]);
    let r1 = column(s, |r| r.decomposition.nodal_radii[0]);
    let s1 = column(s, |r| r.decomposition.extremum_radii[1]);
    let growth = m0[m0.len() - 1] / m0[0];
    let m1_change = last_relative_change(&m1).unwrap();
    let pass = strictly_increasing(&m0) && growth >= 5.0 && strictly_decreasing(&r1) && strictly_decreasing(&s1) && m1_change <= 0.05;
    report(
        8,
        "minus k=2 concentration",
        pass,
        &format!("M0 {} (ratio {growth:.2}), r1 {}, s1 {}, M1 {} (last change {m1_change:.2e})", fmt(&m0), fmt(&r1), fmt(&s1), fmt(&m1)),
    );
    assert!(pass);
}

#[test]
fn c09_parity_law() {
    let k2 = column(sweep(1), |r| r.even_odd_ratios[0]);
    let s3 = sweep(2);
    let k3_ratio = column(s3, |r| r.odd_even_ratios[0]);
    let k3_m2 = column(s3, |r| r.decomposition.extremum_values[2]);
    let c2 = last_relative_change(&k2).unwrap();
    let cm2 = last_relative_change(&k3_m2).unwrap();
    let tail = &k3_ratio[k3_ratio.len() - 3..];
    let pass = c2 <= 0.05 && strictly_increasing(tail) && cm2 <= 0.05;
    report(
        9,
        "plus parity law",
        pass,
        &format!("k=2 M0/M1 {} (last change {c2:.2e}); k=3 M1/M2 {}, M2 {} (last change {cm2:.2e})", fmt(&k2), fmt(&k3_ratio), fmt(&k3_m2)),
    );
    assert!(pass);
}

fn limit_case(t: &EnergyLimitTable) -> (bool, String) {
    let gaps: Vec<f64> = t.rows.iter().map(|r| r.result.as_ref().expect("energy row").gap).collect();
    let rel: Vec<f64> = t.rows.iter().map(|r| r.result.as_ref().expect("energy row").gap_relative).collect();
    let finest = rel[rel.len() - 1];
    let pass = strictly_decreasing(&gaps[gaps.len() - 3..]) && finest <= 0.1;
    (pass, format!("limit {} = {:.4}, relative gaps {}", t.prediction.formula, t.prediction.value, fmt(&rel)))
}

#[test]
fn c10_energy_limits() {
    let e = exponents();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, spec, k, pc) in [("minus k=2", minus(), 2, e.minus.value), ("plus k=2", plus(), 2, e.nodal.value), ("plus k=3", plus(), 3, e.nodal.value)] {
        let t = energy_limit_experiment(&spec, k, &DEFAULT_EPSILONS, pc, long(), QUAD_TOL).expect("energy limit experiment");
        let (ok, d) = limit_case(&t);
        pass &= ok;
        detail.push(format!("{name} {}: {d}", if ok { "ok" } else { "fails" }));
    }
    report(10, "energy limits", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c11_energy_functional_monotone() {
    let e = exponents();
    let mut profiles: Vec<(String, RadialProfile)> = Vec::new();
    let le = integrate_from_center(&OperatorSpec::laplacian(3), 3.0, 1.0, to_zero()).expect("lane-emden");
    profiles.push(("lane-emden".into(), le));
    let bubble = integrate_from_center(&OperatorSpec::laplacian(4), 3.0, 1.0, to_zero()).expect("bubble");
    profiles.push(("bubble".into(), bubble));
    for (spec, k, pc) in [(minus(), 2, e.minus.value), (plus(), 2, e.nodal.value), (plus(), 3, e.nodal.value)] {
        for &eps in &DEFAULT_EPSILONS {
            let sol = build_nodal(&spec, pc - eps, k, long()).expect("nodal solution");
            profiles.push((format!("{} k={k} eps={eps}", spec.branch), sol.profile));
        }
    }
    for kind in [ExteriorKind::MinusIvp, ExteriorKind::PlusIvp] {
        let w = integrate_exterior(1.0, 1.5, 4, kind, 3.5, 3.0, to_zero()).expect("exterior");
        profiles.push((format!("{kind:?}"), w));
    }
    let worst = profiles
        .iter()
        .map(|(n, p)| (n.as_str(), p.stats.max_energy_increase / p.tol))
        .fold(("", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let pass = worst.1 <= 100.0;
    report(11, "energy functional never increases by more than 100 tol", pass, &format!("{} runs, worst increase {:.2} tol ({})", profiles.len(), worst.1, worst.0));
    assert!(pass);
}

#[test]
fn c12_decay_bound() {
    let spec = minus();
    let pss = exponents().nodal.value;
    let search = SlopeSearch { slope_tol: 1e-10, ..SlopeSearch::default() };
    let cs = critical_slope(ExteriorKind::MinusIvp, &spec, pss, search, to_zero()).expect("critical slope");
    let w = integrate_exterior_spec(&spec, pss, cs.bracket.1, IntegrationOptions { r_max: cs.r_max_used, ..to_zero() }).expect("W-");
    let fast = decay_bound_check(&w, 0.0).expect("decay bound on W-");
    let p_control = 3.5;
    let slow_alpha = alpha_star(p_control) / 4.0;
    let c = integrate_exterior_spec(&spec, p_control, slow_alpha, to_zero()).expect("control");
    let slow = decay_bound_check(&c, 0.0).expect("decay bound on control");
    let pass = fast.holds && !slow.holds;
    report(
        12,
        "decay envelope holds on W- and fails on the slow control",
        pass,
        &format!(
            "W- at p={pss:.8} alpha={:.10}: margin {:.1e} over {} points; control p={p_control} alpha={slow_alpha:.4}: margin {:.1e}",
            cs.bracket.1, fast.worst_margin, fast.points, slow.worst_margin
        ),
    );
    assert!(pass);
}

/// Events and energies of one run at `tol` and `tol / 2`.
struct Pair {
    name: String,
    coarse: RadialProfile,
    fine: RadialProfile,
    energies: Option<((f64, f64), f64)>,
}

#[test]
fn c13_integrator_convergence() {
    let e = exponents();
    let halve = |o: IntegrationOptions| IntegrationOptions { tol: o.tol / 2.0, ..o };
    let mut pairs = Vec::new();
    for (name, spec, p, stop) in [("lane-emden", OperatorSpec::laplacian(3), 3.0, to_zero()), ("bubble", OperatorSpec::laplacian(4), 3.0, to_zero())] {
        let coarse = integrate_from_center(&spec, p, 1.0, stop).expect("coarse");
        let fine = integrate_from_center(&spec, p, 1.0, halve(stop)).expect("fine");
        pairs.push(Pair { name: name.into(), coarse, fine, energies: None });
    }
    for (kind, p, alpha) in [(ExteriorKind::MinusIvp, 3.5, 3.0), (ExteriorKind::PlusIvp, 2.5, 1.0)] {
        let coarse = integrate_exterior(1.0, 1.5, 4, kind, p, alpha, to_zero()).expect("coarse");
        let fine = integrate_exterior(1.0, 1.5, 4, kind, p, alpha, halve(to_zero())).expect("fine");
        pairs.push(Pair { name: format!("{kind:?}"), coarse, fine, energies: None });
    }
    for (spec, k, pc) in [(minus(), 2, e.minus.value), (plus(), 2, e.nodal.value), (plus(), 3, e.nodal.value)] {
        for eps in [0.2, 0.01] {
            let a = build_nodal(&spec, pc - eps, k, long()).expect("coarse nodal");
            let b = build_nodal(&spec, pc - eps, k, halve(long())).expect("fine nodal");
            let ea = total_energy(&a, QUAD_TOL).expect("coarse energy");
            let eb = total_energy(&b, QUAD_TOL).expect("fine energy");
            pairs.push(Pair {
                name: format!("{} k={k} eps={eps}", spec.branch),
                coarse: a.profile,
                fine: b.profile,
                energies: Some(((ea.total, eb.total), ea.error_estimate)),
            });
        }
    }
    let mut failures = Vec::new();
    let mut events = 0;
    let mut worst_ratio = 0.0f64;
    for pair in &pairs {
        if pair.coarse.events.len() != pair.fine.events.len() {
            failures.push(format!("{}: {} vs {} events", pair.name, pair.coarse.events.len(), pair.fine.events.len()));
            continue;
        }
        for (a, b) in pair.coarse.events.iter().zip(&pair.fine.events) {
            let est = pair.coarse.event_error_estimate(a.kind, a.radius);
            let diff = (a.radius - b.radius).abs();
            events += 1;
            worst_ratio = worst_ratio.max(diff / est);
            if a.kind != b.kind || !(diff < est) {
                failures.push(format!("{} {:?} at {:.6}: diff {diff:.1e} estimate {est:.1e}", pair.name, a.kind, a.radius));
            }
        }
        if let Some(((ea, eb), est)) = pair.energies {
            worst_ratio = worst_ratio.max((ea - eb).abs() / est);
            if !((ea - eb).abs() < est) {
                failures.push(format!("{} energy diff {:.1e} estimate {est:.1e}", pair.name, (ea - eb).abs()));
            }
        }
    }
    let pass = failures.is_empty();
    let summary = format!("{} runs, {events} events, worst diff/estimate {worst_ratio:.2e}", pairs.len());
    report(13, "halving tol moves events and energies less than their estimates", pass, &if pass { summary } else { format!("{summary}; {}", failures.join("; ")) });
    assert!(pass);
}
