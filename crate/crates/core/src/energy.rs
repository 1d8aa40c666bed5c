//! Scale-invariant weighted energies of nodal regions, of the entire-space
//! fast-decaying solution and of the exterior fast-decaying solution, and the
//! comparison of nodal energies with their predicted limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::integrator::{integrate_exterior_spec, integrate_from_center, EventKind, ExteriorKind, IntegrationOptions, RadialProfile, StopRule};
use crate::model::{Branch, OperatorSpec};
use crate::nodal::{build_nodal, NodalSolution, SweepEntry};
use crate::shooting::{critical_slope, fit_decay, DecayClass, DecayLabel, SlopeSearch};

pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
/// Relative size of the analytic tail below which the truncation radius is
/// accepted.
pub const TAIL_RELATIVE: f64 = 1e-3;
/// Offset below an estimated critical exponent where the limit profiles are
/// computed.
pub const CRITICAL_OFFSET: f64 = 1e-4;
const MAX_DEPTH: u32 = 40;

/// `2(p+1)/(p-1) - N`.
pub fn weight_gamma(p: f64, dim: u32) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("weight exponent needs p > 1, got {p}")));
    }
    Ok(2.0 * (p + 1.0) / (p - 1.0) - f64::from(dim))
}

/// Surface measure of the unit sphere in `R^N`.
pub fn sphere_measure(dim: u32) -> f64 {
    let n = f64::from(dim);
    2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma(n / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEnergy {
    pub region: (f64, f64),
    pub inflection_radius: Option<f64>,
    pub gamma: f64,
    pub value: f64,
    pub quad_error: f64,
    /// Quadrature error plus the propagated error of the trajectory and of
    /// the inflection radius.
    pub error_estimate: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32, err: &mut f64) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH || delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1, err) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1, err)
}

/// Adaptive Simpson over consecutive breakpoints; returns value and error
/// estimate. Tolerance is relative to a first composite estimate.
fn integrate_pieces(f: &dyn Fn(f64) -> f64, breaks: &[f64], rel_tol: f64) -> (f64, f64) {
    let crude: f64 = breaks
        .windows(2)
        .map(|w| simpson(w[0], w[1], f(w[0]), f(0.5 * (w[0] + w[1])), f(w[1])).abs())
        .sum();
    let span = breaks[breaks.len() - 1] - breaks[0];
    let mut total = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = simpson(a, b, fa, fm, fb);
        let tol = rel_tol * crude * (b - a) / span;
        total += adaptive(f, a, b, fa, fm, fb, whole, tol.max(f64::MIN_POSITIVE), 0, &mut err);
    }
    (total, err)
}

fn breakpoints(profile: &RadialProfile, a: f64, b: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    pts.extend(profile.r.iter().copied().filter(|&r| r > a && r < b));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300));
    pts
}

/// `w_{N-1} int_a^b |u|^{p+1} g r^{N-1} dr` with the plateau weight `g`, and
/// the partial integral over `[a, rho]` used for the sensitivity in `rho`.
fn weighted_integral(profile: &RadialProfile, a: f64, b: f64, rho: f64, gamma_p: f64, quad_tol: f64) -> (f64, f64, f64) {
    let p = profile.p;
    let dim = profile.spec.dim;
    let n1 = f64::from(dim) - 1.0;
    let plateau = rho.powf(gamma_p);
    let omega = sphere_measure(dim);
    let f = |r: f64| -> f64 {
        let u = profile.eval(r).0.abs();
        let g = if r <= rho { plateau } else { r.powf(gamma_p) };
        u.powf(p + 1.0) * g * r.powf(n1)
    };
    let (inner, e1) = if rho > a { integrate_pieces(&f, &breakpoints(profile, a, rho.min(b)), quad_tol) } else { (0.0, 0.0) };
    let (outer, e2) = if rho < b { integrate_pieces(&f, &breakpoints(profile, rho.max(a), b), quad_tol) } else { (0.0, 0.0) };
    (omega * (inner + outer), omega * (e1 + e2), omega * inner)
}

/// Energy of the region `(a, b)` of `profile`, which must keep one sign and
/// change concavity exactly once inside.
pub fn region_energy(profile: &RadialProfile, a: f64, b: f64, quad_tol: f64) -> Result<RegionEnergy> {
    let p = profile.p;
    let gamma_p = weight_gamma(p, profile.spec.dim)?;
    if !(b > a) || a < profile.r_start() || b > profile.r_end() {
        return Err(Error::InvalidArgument(format!("region ({a}, {b}) outside the profile")));
    }
    if profile.max_abs_on(a, b) == 0.0 {
        return Ok(RegionEnergy {
            region: (a, b),
            inflection_radius: None,
            gamma: gamma_p,
            value: 0.0,
            quad_error: 0.0,
            error_estimate: 0.0,
        });
    }
    let inside = |kind: EventKind| -> Vec<f64> { profile.events_of(kind).map(|e| e.radius).filter(|&x| x > a && x < b).collect() };
    if !inside(EventKind::UZero).is_empty() {
        return Err(Error::SignChangeInRegion { a, b });
    }
    let infl = inside(EventKind::DduZero);
    let rho = match infl.len() {
        0 => return Err(Error::NoInflection { a, b }),
        1 => infl[0],
        count => return Err(Error::MultipleInflections { a, b, count }),
    };
    let (value, quad_error, inner) = weighted_integral(profile, a, b, rho, gamma_p, quad_tol);
    let state_err = (p + 1.0) * profile.error_estimate_at(b) * value;
    let rho_err = (gamma_p * inner / rho).abs() * profile.event_error_estimate(EventKind::DduZero, rho);
    Ok(RegionEnergy {
        region: (a, b),
        inflection_radius: Some(rho),
        gamma: gamma_p,
        value,
        quad_error,
        error_estimate: quad_error + state_err + rho_err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub per_region: Vec<RegionEnergy>,
    pub total: f64,
    pub error_estimate: f64,
}

/// Per-region energies of a nodal solution and their sum.
pub fn total_energy(sol: &NodalSolution, quad_tol: f64) -> Result<EnergyReport> {
    let d = &sol.decomposition;
    let per_region = (0..d.k)
        .map(|i| {
            let (a, b) = d.region(i);
            region_energy(&sol.profile, a, b, quad_tol).map_err(|e| Error::Region { index: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyReport {
        total: per_region.iter().map(|r| r.value).sum(),
        error_estimate: per_region.iter().map(|r| r.error_estimate).sum(),
        per_region,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub p: f64,
    /// Truncated integral plus the analytic tail.
    pub value: f64,
    pub integral: f64,
    pub tail_bound: f64,
    pub r_trunc: f64,
    pub inflection: f64,
    /// `sup r^{N~-2} u` over the last decade before `r_trunc`.
    pub tail_constant: f64,
    pub decay: DecayClass,
    pub error_estimate: f64,
}

fn tail_exponent(profile: &RadialProfile, gamma_p: f64) -> f64 {
    let m = profile.spec.dimension_like();
    (m - 2.0) * (profile.p + 1.0) - gamma_p - f64::from(profile.spec.dim)
}

fn tail_constant(profile: &RadialProfile, lo: f64, hi: f64) -> f64 {
    let e = profile.spec.dimension_like() - 2.0;
    let mut c = hi.powf(e) * profile.eval(hi).0;
    for (&r, &u) in profile.r.iter().zip(&profile.u) {
        if r >= lo && r <= hi {
            c = c.max(r.powf(e) * u);
        }
    }
    c
}

/// Energy of a fast-decaying tail profile starting at `start` (0 for the
/// entire space, 1 for the exterior of the ball), truncated at `r_trunc`.
pub fn sigma_with_truncation(profile: &RadialProfile, start: f64, r_trunc: f64, quad_tol: f64) -> Result<SigmaEstimate> {
    let p = profile.p;
    let gamma_p = weight_gamma(p, profile.spec.dim)?;
    let rho = profile
        .events_of(EventKind::DduZero)
        .map(|e| e.radius)
        .find(|&x| x > start)
        .ok_or(Error::NoInflection { a: start, b: profile.r_end() })?;
    let kappa = tail_exponent(profile, gamma_p);
    if !(kappa > 0.0) {
        return Err(Error::Invariant(format!("tail integral diverges: exponent {kappa}")));
    }
    if !(r_trunc > 10.0 * rho) || r_trunc > profile.r_end() {
        return Err(Error::TailTooShort(format!("truncation radius {r_trunc:e} not inside ({:e}, {:e}]", 10.0 * rho, profile.r_end())));
    }
    let decay = fit_decay(profile, r_trunc / 10.0, r_trunc)?;
    if decay.label != DecayLabel::Fast {
        return Err(Error::DecayNotFast { p, fitted: decay.fitted_exponent });
    }
    let (integral, quad_error, inner) = weighted_integral(profile, start, r_trunc, rho, gamma_p, quad_tol);
    let c = tail_constant(profile, r_trunc / 10.0, r_trunc);
    let tail_bound = sphere_measure(profile.spec.dim) * c.powf(p + 1.0) * r_trunc.powf(-kappa) / kappa;
    let state_err = (p + 1.0) * profile.error_estimate_at(r_trunc) * integral;
    let rho_err = (gamma_p * inner / rho).abs() * profile.event_error_estimate(EventKind::DduZero, rho);
    Ok(SigmaEstimate {
        p,
        value: integral + tail_bound,
        integral,
        tail_bound,
        r_trunc,
        inflection: rho,
        tail_constant: c,
        decay,
        error_estimate: quad_error + state_err + rho_err + tail_bound,
    })
}

/// Chooses the truncation radius among decades past the inflection so that
/// the tail is below `TAIL_RELATIVE` of the integral.
pub fn sigma_from_profile(profile: &RadialProfile, start: f64, quad_tol: f64) -> Result<SigmaEstimate> {
    let rho = profile
        .events_of(EventKind::DduZero)
        .map(|e| e.radius)
        .find(|&x| x > start)
        .ok_or(Error::NoInflection { a: start, b: profile.r_end() })?;
    // stay a decade inside a late crossing, where the profile leaves the
    // fast-decaying trajectory
    let usable = profile.zeros().first().map(|z| z / 10.0).unwrap_or(profile.r_end());
    let mut last_err = Error::TailTooShort(format!("no decade past the inflection {rho:e} fits below {usable:e}"));
    let mut r = rho * 100.0;
    while r <= usable {
        match sigma_with_truncation(profile, start, r, quad_tol) {
            Ok(s) if s.tail_bound < TAIL_RELATIVE * s.integral => return Ok(s),
            Ok(_) => {}
            Err(e @ Error::DecayNotFast { .. }) => last_err = e,
            Err(e) => return Err(e),
        }
        r *= 10.0;
    }
    Err(last_err)
}

/// Energy of the entire-space fast-decaying solution at an estimated
/// critical exponent.
pub fn entire_space_energy(spec: &OperatorSpec, p_star: f64, opts: IntegrationOptions, quad_tol: f64) -> Result<SigmaEstimate> {
    let opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let prof = integrate_from_center(spec, p_star, 1.0, opts)?;
    sigma_from_profile(&prof, 0.0, quad_tol)
}

/// Energy outside the unit ball of the exterior minus solution with slope
/// `alpha` (the fast-decaying one at the critical slope).
pub fn exterior_energy(spec: &OperatorSpec, p: f64, alpha: f64, opts: IntegrationOptions, quad_tol: f64) -> Result<SigmaEstimate> {
    let minus = spec.with_branch(Branch::Minus);
    let opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let prof = integrate_exterior_spec(&minus, p, alpha, opts)?;
    sigma_from_profile(&prof, 1.0, quad_tol)
}

/// Exterior energy at `p` with the critical slope computed on the fly.
pub fn exterior_energy_at_critical_slope(spec: &OperatorSpec, p: f64, slope_tol: f64, opts: IntegrationOptions, quad_tol: f64) -> Result<(SigmaEstimate, f64)> {
    let search = SlopeSearch { slope_tol, ..SlopeSearch::default() };
    let cs = critical_slope(ExteriorKind::MinusIvp, spec, p, search, opts)?;
    if cs.alpha_star == 0.0 {
        return Err(Error::Invariant(format!("critical slope vanishes at p = {p}")));
    }
    Ok((exterior_energy(spec, p, cs.alpha_star, opts, quad_tol)?, cs.alpha_star))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitPrediction {
    pub branch: Branch,
    pub k: usize,
    pub p_crit: f64,
    pub sigma: SigmaEstimate,
    /// Energy of the bounded limit profile.
    pub bounded_energy: f64,
    pub value: f64,
    pub formula: String,
}

/// Predicted limit of the total energy of k-region solutions as `p`
/// approaches `p_crit` (`p*_-` for the minus branch, `p**_+` for plus).
pub fn predicted_limit(spec: &OperatorSpec, k: usize, p_crit: f64, opts: IntegrationOptions, quad_tol: f64) -> Result<LimitPrediction> {
    if k < 2 {
        return Err(Error::InvalidArgument("energy limits concern k >= 2 regions".into()));
    }
    let p_bar = p_crit - CRITICAL_OFFSET;
    let plus = spec.with_branch(Branch::Plus);
    match spec.branch {
        Branch::Minus => {
            let sigma = entire_space_energy(&spec.with_branch(Branch::Minus), p_crit, opts, quad_tol)?;
            // the limit has u(0) < 0; its negative solves the plus problem
            let bar = build_nodal(&plus, p_bar, k - 1, opts)?;
            let e_bar = total_energy(&bar, quad_tol)?.total;
            Ok(LimitPrediction {
                branch: Branch::Minus,
                k,
                p_crit,
                sigma,
                bounded_energy: e_bar,
                value: sigma.value + e_bar,
                formula: "Sigma*_- + E(u_bar)".into(),
            })
        }
        Branch::Plus => {
            let (sigma, _) = exterior_energy_at_critical_slope(spec, p_crit, 1e-10, opts, quad_tol)?;
            let bar = build_nodal(&plus, p_bar, 1, opts)?;
            let e_bar = total_energy(&bar, quad_tol)?.total;
            let kf = k as f64;
            let (value, formula) = if k.is_multiple_of(2) {
                (kf / 2.0 * (e_bar + sigma.value), format!("{}/2 (E(v_bar) + Sigma**_+)", k))
            } else {
                ((kf + 1.0) / 2.0 * e_bar + (kf - 1.0) / 2.0 * sigma.value, format!("{}/2 E(v_bar) + {}/2 Sigma**_+", k + 1, k - 1))
            };
            Ok(LimitPrediction {
                branch: Branch::Plus,
                k,
                p_crit,
                sigma,
                bounded_energy: e_bar,
                value,
                formula,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLimitRow {
    pub epsilon: f64,
    pub p: f64,
    pub e_total: f64,
    pub e_predicted_limit: f64,
    pub gap: f64,
    pub gap_relative: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyLimitTable {
    pub prediction: LimitPrediction,
    pub rows: Vec<SweepEntry<EnergyLimitRow>>,
}

/// Total energies of k-region solutions at `p_crit - epsilon` next to their
/// predicted limit.
pub fn energy_limit_experiment(spec: &OperatorSpec, k: usize, eps: &[f64], p_crit: f64, opts: IntegrationOptions, quad_tol: f64) -> Result<EnergyLimitTable> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("epsilon list must be positive and strictly decreasing".into()));
    }
    let prediction = predicted_limit(spec, k, p_crit, opts, quad_tol)?;
    let target = prediction.value;
    let rows = eps
        .par_iter()
        .map(|&e| {
            let p = p_crit - e;
            let result = build_nodal(spec, p, k, opts)
                .and_then(|sol| total_energy(&sol, quad_tol))
                .map(|rep| EnergyLimitRow {
                    epsilon: e,
                    p,
                    e_total: rep.total,
                    e_predicted_limit: target,
                    gap: (rep.total - target).abs(),
                    gap_relative: (rep.total - target).abs() / target,
                })
                .map_err(|err| err.to_string());
            SweepEntry { epsilon: e, p, result }
        })
        .collect();
    Ok(EnergyLimitTable { prediction, rows })
}

pub fn write_energy_limit_csv<W: std::io::Write>(table: &EnergyLimitTable, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# E_total = total weighted energy E^T(u_eps), E_predicted_limit = {} = {:.12e}, gap = |E_total - E_predicted_limit|",
        table.prediction.formula, table.prediction.value
    )?;
    writeln!(w, "epsilon,p,E_total,E_predicted_limit,gap,gap_relative,error")?;
    for e in &table.rows {
        match &e.result {
            Ok(r) => writeln!(w, "{},{:.12},{:.12e},{:.12e},{:.12e},{:.12e},", r.epsilon, r.p, r.e_total, r.e_predicted_limit, r.gap, r.gap_relative)?,
            Err(msg) => writeln!(w, "{},{:.12},,,,,\"{}\"", e.epsilon, e.p, msg.replace('"', "'"))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts() -> IntegrationOptions {
        IntegrationOptions::new(1e-10, 1e6, StopRule::RMax)
    }

    #[test]
    fn gamma_values() {
        assert!(weight_gamma(3.0, 4).unwrap().abs() < 1e-15);
        assert!((weight_gamma(3.0, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!((weight_gamma(1e12, 5).unwrap() - (2.0 - 5.0)).abs() < 1e-9);
        assert!(weight_gamma(1.0, 3).is_err());
    }

    #[test]
    fn sphere_measures() {
        use std::f64::consts::PI;
        assert!((sphere_measure(3) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_measure(4) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn zero_region_has_zero_energy() {
        let r: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 + 0.1).collect();
        let z = vec![0.0; 10];
        let prof = RadialProfile::from_samples(OperatorSpec::laplacian(3), 3.0, r, z.clone(), z, 1e-10).unwrap();
        let e = region_energy(&prof, 0.1, 1.0, 1e-8).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn bubble_energy() {
        use std::f64::consts::PI;
        let s = entire_space_energy(&OperatorSpec::laplacian(4), 3.0, opts(), 1e-9).unwrap();
        let exact = 32.0 * PI * PI / 3.0;
        assert!((s.value - exact).abs() / exact < 1e-4, "{s:?}");
    }

    #[test]
    fn nodal_region_needs_one_inflection() {
        let spec = OperatorSpec::laplacian(3);
        let sol = build_nodal(&spec, 3.0, 2, opts()).unwrap();
        let err = region_energy(&sol.profile, 0.0, 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::SignChangeInRegion { .. }));
        let rep = total_energy(&sol, 1e-8).unwrap();
        assert_eq!(rep.per_region.len(), 2);
        assert!((rep.total - rep.per_region.iter().map(|r| r.value).sum::<f64>()).abs() == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn energy_is_scale_invariant(alpha in 0.5f64..2.0) {
            let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
            let p = 2.0;
            let o = IntegrationOptions::new(1e-11, 1e6, StopRule::Zeros(2));
            let a = integrate_from_center(&spec, p, 1.0, o).unwrap();
            let z = a.zeros();
            let ea = region_energy(&a, z[0], z[1], 1e-10).unwrap();
            let b = integrate_from_center(&spec, p, alpha, o).unwrap();
            let zb = b.zeros();
            let eb = region_energy(&b, zb[0], zb[1], 1e-10).unwrap();
            prop_assert!((ea.value - eb.value).abs() / ea.value < 1e-7, "{} vs {}", ea.value, eb.value);
        }
    }
}
