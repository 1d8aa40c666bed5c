//! Shooting problems built on the integrator: the positive solution in the
//! unit ball, the exterior problems with initial slope `alpha`, the critical
//! slope, decay classification and the Emden–Fowler transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_exterior_spec, integrate_from_center, EventKind, ExteriorKind, IntegrationOptions, RadialProfile, StopRule};
use crate::model::OperatorSpec;

pub const ALPHA_SEED: f64 = 1e-3;
pub const ALPHA_CAP: f64 = 1e6;
/// Below this slope the crossing indicator is not probed further and the
/// critical slope is reported as zero.
pub const ALPHA_FLOOR: f64 = 1e-6;
pub const DEFAULT_SLOPE_TOL: f64 = 1e-6;
/// Fraction of the gap between the fast and slow rates accepted by the
/// decay classifier.
pub const CLASSIFIER_MARGIN: f64 = 0.25;
const RETRY_FACTOR: f64 = 10.0;
const FIT_SAMPLES: usize = 41;

/// Positive solution of the Dirichlet problem in the unit ball.
#[derive(Debug, Clone)]
pub struct BallSolution {
    /// `v(r) = rho^{2/(p-1)} u(rho r)` on `[0, 1]`.
    pub profile: RadialProfile,
    pub boundary_slope: f64,
    /// First zero of the shoot from `u(0) = 1`.
    pub rho: f64,
    /// `||v||_inf = v(0)`.
    pub sup_norm: f64,
    /// Radius where `v''` changes sign.
    pub inflection: Option<f64>,
}

/// Shoots from `u(0) = 1` to the first zero and rescales onto the unit ball.
pub fn positive_ball_solution(spec: &OperatorSpec, p: f64, opts: IntegrationOptions) -> Result<BallSolution> {
    let opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let prof = integrate_from_center(spec, p, 1.0, opts)?;
    if prof.truncated {
        return Err(Error::NoZeroFound { r_max: opts.r_max });
    }
    let rho = prof.zeros()[0];
    let v = prof.rescaled(rho);
    let boundary_slope = *v.du.last().expect("non-empty profile");
    let sup_norm = v.u[0];
    let inflection = v.events_of(EventKind::DduZero).map(|e| e.radius).next();
    Ok(BallSolution {
        profile: v,
        boundary_slope,
        rho,
        sup_norm,
        inflection,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayLabel {
    Fast,
    Slow,
    PseudoSlowOrUndetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    pub label: DecayLabel,
    /// Least-squares slope of `log u` against `log r` over the window.
    pub fitted_exponent: f64,
    pub fit_window: (f64, f64),
}

/// Fits the log-log slope of `u` on `[a, b]` and labels it against the fast
/// rate `-(N~-2)` and the slow rate `-2/(p-1)`.
pub fn fit_decay(profile: &RadialProfile, a: f64, b: f64) -> Result<DecayClass> {
    if !(a > 0.0 && b > a && b <= profile.r_end() && a >= profile.r_start()) {
        return Err(Error::TailTooShort(format!("window [{a:e}, {b:e}] outside the profile")));
    }
    let (la, lb) = (a.ln(), b.ln());
    let mut xs = Vec::with_capacity(FIT_SAMPLES);
    let mut ys = Vec::with_capacity(FIT_SAMPLES);
    for j in 0..FIT_SAMPLES {
        let lr = la + (lb - la) * j as f64 / (FIT_SAMPLES - 1) as f64;
        let u = profile.eval(lr.exp()).0;
        if !(u > 0.0) {
            return Err(Error::TailTooShort(format!("u is not positive at r = {:e}", lr.exp())));
        }
        xs.push(lr);
        ys.push(u.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;

    let p = profile.p;
    let fast = -(profile.spec.dimension_like() - 2.0);
    let slow = -2.0 / (p - 1.0);
    let margin = CLASSIFIER_MARGIN * (fast - slow).abs();
    let q = 2.0 / (p - 1.0);
    let x_start = a.powf(q) * profile.eval(a).0;
    let x_end = b.powf(q) * profile.eval(b).0;
    let label = if (slope - fast).abs() <= margin && x_end < x_start {
        DecayLabel::Fast
    } else if (slope - slow).abs() <= margin {
        DecayLabel::Slow
    } else {
        DecayLabel::PseudoSlowOrUndetermined
    };
    Ok(DecayClass {
        label,
        fitted_exponent: slope,
        fit_window: (a, b),
    })
}

/// Classifies the positive tail of a truncated profile on its last decade.
pub fn classify_decay(profile: &RadialProfile) -> Result<DecayClass> {
    if !profile.truncated {
        return Err(Error::TailTooShort("profile ends at a zero, not at r_max".into()));
    }
    let anchor = profile
        .events_of(EventKind::DduZero)
        .map(|e| e.radius)
        .last()
        .ok_or_else(|| Error::TailTooShort("no inflection before the tail".into()))?;
    let end = profile.r_end();
    if end < 100.0 * anchor {
        return Err(Error::TailTooShort(format!(
            "tail [{anchor:e}, {end:e}] spans less than two decades"
        )));
    }
    fit_decay(profile, end / 10.0, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutcomeKind {
    CrossedZero { rho: f64 },
    /// Positive up to `r_max`; the decay class is absent when the tail is too
    /// short to classify.
    PositiveTruncated { decay: Option<DecayClass> },
}

#[derive(Debug, Clone)]
pub struct ShootingOutcome {
    pub kind: OutcomeKind,
    pub profile: RadialProfile,
    /// Maximum point.
    pub tau: Option<f64>,
    /// Inflection point.
    pub sigma: Option<f64>,
}

impl ShootingOutcome {
    pub fn crossed(&self) -> bool {
        matches!(self.kind, OutcomeKind::CrossedZero { .. })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "tau": self.tau,
            "sigma": self.sigma,
            "profile": self.profile.sidecar(),
        })
    }
}

/// Exterior problem `u(1) = 0`, `u'(1) = alpha` for the operator of `kind`.
pub fn rho_alpha(kind: ExteriorKind, spec: &OperatorSpec, p: f64, alpha: f64, opts: IntegrationOptions) -> Result<ShootingOutcome> {
    let spec = spec.with_branch(kind.branch());
    let opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let profile = integrate_exterior_spec(&spec, p, alpha, opts)?;
    let tau = profile.events_of(EventKind::DuZero).map(|e| e.radius).next();
    let sigma = profile.events_of(EventKind::DduZero).map(|e| e.radius).next();
    let kind = if profile.truncated {
        let decay = match classify_decay(&profile) {
            Ok(d) => Some(d),
            Err(Error::TailTooShort(_)) => None,
            Err(e) => return Err(e),
        };
        OutcomeKind::PositiveTruncated { decay }
    } else {
        OutcomeKind::CrossedZero { rho: profile.zeros()[0] }
    };
    Ok(ShootingOutcome { kind, profile, tau, sigma })
}

/// A truncated run whose last decade decays faster than the slow rate may be
/// a late crossing; such runs are repeated once with a larger horizon.
pub(crate) fn needs_longer_horizon(profile: &RadialProfile) -> bool {
    if !profile.truncated {
        return false;
    }
    let end = profile.r_end();
    let start = (end / 10.0).max(profile.r_start()).max(1e-300);
    if start >= end {
        return false;
    }
    match fit_decay(profile, start, end) {
        Ok(d) => {
            let slow = -2.0 / (profile.p - 1.0);
            let fast = -(profile.spec.dimension_like() - 2.0);
            d.fitted_exponent < slow - CLASSIFIER_MARGIN * (fast - slow).abs()
        }
        Err(_) => false,
    }
}

/// Result of one crossing probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeProbe {
    pub alpha: f64,
    pub crossed: bool,
    pub rho: Option<f64>,
    pub r_max: f64,
}

/// Crossing indicator `[rho_alpha < r_max]` with the horizon retry.
pub fn slope_probe(kind: ExteriorKind, spec: &OperatorSpec, p: f64, alpha: f64, opts: IntegrationOptions) -> Result<SlopeProbe> {
    let spec = spec.with_branch(kind.branch());
    let mut opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let mut prof = integrate_exterior_spec(&spec, p, alpha, opts)?;
    if needs_longer_horizon(&prof) {
        opts.r_max *= RETRY_FACTOR;
        prof = integrate_exterior_spec(&spec, p, alpha, opts)?;
    }
    Ok(SlopeProbe {
        alpha,
        crossed: !prof.truncated,
        rho: prof.zeros().first().copied(),
        r_max: opts.r_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeSearch {
    pub slope_tol: f64,
    pub seed: f64,
    pub floor: f64,
    pub cap: f64,
}

impl Default for SlopeSearch {
    fn default() -> Self {
        SlopeSearch {
            slope_tol: DEFAULT_SLOPE_TOL,
            seed: ALPHA_SEED,
            floor: ALPHA_FLOOR,
            cap: ALPHA_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSlope {
    pub p: f64,
    pub alpha_star: f64,
    /// `[alpha_lo, alpha_hi]`; `alpha_lo` does not cross, `alpha_hi` does.
    pub bracket: (f64, f64),
    pub r_max_used: f64,
    /// Probes at the bracket ends.
    pub certificates: (Option<SlopeProbe>, SlopeProbe),
}

/// Infimum of the slopes whose exterior solution returns to zero.
pub fn critical_slope(kind: ExteriorKind, spec: &OperatorSpec, p: f64, search: SlopeSearch, opts: IntegrationOptions) -> Result<CriticalSlope> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("exponent must exceed 1, got {p}")));
    }
    if !(search.slope_tol > 0.0 && search.floor > 0.0 && search.seed > 0.0 && search.cap > search.floor) {
        return Err(Error::InvalidArgument("slope search parameters must be positive with cap > floor".into()));
    }
    let probe = |a: f64| slope_probe(kind, spec, p, a, opts);
    let mut r_max_used = opts.r_max;
    let mut note = |pr: &SlopeProbe| r_max_used = r_max_used.max(pr.r_max);

    let seed = search.seed.clamp(search.floor, search.cap);
    let first = probe(seed)?;
    note(&first);
    let (mut lo, mut hi) = if first.crossed {
        let mut hi = first;
        loop {
            let a = hi.alpha / 2.0;
            if a < search.floor {
                return Ok(CriticalSlope {
                    p,
                    alpha_star: 0.0,
                    bracket: (0.0, hi.alpha),
                    r_max_used,
                    certificates: (None, hi),
                });
            }
            let pr = probe(a)?;
            note(&pr);
            if pr.crossed {
                hi = pr;
            } else {
                break (pr, hi);
            }
        }
    } else {
        let mut lo = first;
        loop {
            let a = lo.alpha * 2.0;
            if a > search.cap {
                return Err(Error::IndicatorNotBracketed { alpha_cap: search.cap });
            }
            let pr = probe(a)?;
            note(&pr);
            if pr.crossed {
                break (lo, pr);
            }
            lo = pr;
        }
    };
    while hi.alpha - lo.alpha > search.slope_tol {
        let mid = if hi.alpha > 2.0 * lo.alpha {
            (lo.alpha * hi.alpha).sqrt()
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if mid <= lo.alpha || mid >= hi.alpha {
            break;
        }
        let pr = probe(mid)?;
        note(&pr);
        if pr.crossed {
            hi = pr;
        } else {
            lo = pr;
        }
    }
    Ok(CriticalSlope {
        p,
        alpha_star: 0.5 * (lo.alpha + hi.alpha),
        bracket: (lo.alpha, hi.alpha),
        r_max_used,
        certificates: (Some(lo), hi),
    })
}

/// Crossing indicator on a list of slopes, for the monotonicity check.
pub fn indicator_scan(kind: ExteriorKind, spec: &OperatorSpec, p: f64, alphas: &[f64], opts: IntegrationOptions) -> Result<Vec<SlopeProbe>> {
    alphas.iter().map(|&a| slope_probe(kind, spec, p, a, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    pub x: f64,
    pub dx: f64,
}

/// `x(t) = e^{2t/(p-1)} u(e^t)` and `dx/dt` on the profile grid (`r > 0`).
pub fn emden_fowler_trajectory(profile: &RadialProfile, p: f64) -> Vec<PhasePoint> {
    let q = 2.0 / (p - 1.0);
    profile
        .r
        .iter()
        .zip(profile.u.iter().zip(&profile.du))
        .filter(|(&r, _)| r > 0.0)
        .map(|(&r, (&u, &du))| {
            let rq = r.powf(q);
            PhasePoint {
                t: r.ln(),
                x: rq * u,
                dx: rq * (q * u + r * du),
            }
        })
        .collect()
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Whether two polygonal phase curves cross transversally in the `(x, dx)`
/// plane.
pub fn trajectories_intersect(a: &[PhasePoint], b: &[PhasePoint]) -> bool {
    let boxes = |s: &[PhasePoint]| -> Vec<(f64, f64, f64, f64)> {
        s.windows(2)
            .map(|w| (w[0].x.min(w[1].x), w[0].x.max(w[1].x), w[0].dx.min(w[1].dx), w[0].dx.max(w[1].dx)))
            .collect()
    };
    let (ba, bb) = (boxes(a), boxes(b));
    for (i, bxa) in ba.iter().enumerate() {
        for (j, bxb) in bb.iter().enumerate() {
            if bxa.1 < bxb.0 || bxb.1 < bxa.0 || bxa.3 < bxb.2 || bxb.3 < bxa.2 {
                continue;
            }
            let (p0, p1) = ((a[i].x, a[i].dx), (a[i + 1].x, a[i + 1].dx));
            let (q0, q1) = ((b[j].x, b[j].dx), (b[j + 1].x, b[j + 1].dx));
            if segments_cross(p0, p1, q0, q1) {
                return true;
            }
        }
    }
    false
}

/// Writes `t,x,dx` rows.
pub fn write_phase_csv<W: std::io::Write>(points: &[PhasePoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# x = r^(2/(p-1)) u(r), dx = dx/dt, t = log r")?;
    writeln!(w, "t,x,dx")?;
    for pt in points {
        writeln!(w, "{:.17e},{:.17e},{:.17e}", pt.t, pt.x, pt.dx)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Branch;

    fn opts(tol: f64) -> IntegrationOptions {
        IntegrationOptions::new(tol, 1e6, StopRule::RMax)
    }

    #[test]
    fn ball_solution_is_scale_free() {
        let spec = OperatorSpec::laplacian(3);
        let a = positive_ball_solution(&spec, 3.0, opts(1e-10)).unwrap();
        let prof2 = integrate_from_center(&spec, 3.0, 2.0, IntegrationOptions::new(1e-10, 1e6, StopRule::Zeros(1))).unwrap();
        let b = prof2.rescaled(prof2.zeros()[0]);
        assert!((a.boundary_slope - b.du.last().unwrap()).abs() < 1e-9 * a.boundary_slope.abs());
        for x in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let (ua, _) = a.profile.eval(x);
            let (ub, _) = b.eval(x);
            assert!((ua - ub).abs() < 1e-9 * a.sup_norm, "x = {x}: {ua} vs {ub}");
        }
        assert!(a.boundary_slope < 0.0);
        assert_eq!(*a.profile.r.last().unwrap(), 1.0);
    }

    #[test]
    fn critical_laplacian_ball_has_no_zero() {
        let spec = OperatorSpec::laplacian(4);
        assert!(matches!(positive_ball_solution(&spec, 3.0, opts(1e-9)), Err(Error::NoZeroFound { .. })));
    }

    #[test]
    fn bubble_decays_fast() {
        let spec = OperatorSpec::laplacian(4);
        // far tails pick up the slow mode through rounding, so stay at 1e4
        let prof = integrate_from_center(&spec, 3.0, 1.0, IntegrationOptions::new(1e-10, 1e4, StopRule::RMax)).unwrap();
        let d = classify_decay(&prof).unwrap();
        assert_eq!(d.label, DecayLabel::Fast);
        assert!((d.fitted_exponent + 2.0).abs() < 1e-3, "{}", d.fitted_exponent);
    }

    #[test]
    fn doubling_alpha_shrinks_rho() {
        let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
        for kind in [ExteriorKind::MinusIvp, ExteriorKind::PlusIvp] {
            let a = rho_alpha(kind, &spec, 2.0, 1.0, opts(1e-10)).unwrap();
            let b = rho_alpha(kind, &spec, 2.0, 2.0, opts(1e-10)).unwrap();
            let (OutcomeKind::CrossedZero { rho: ra }, OutcomeKind::CrossedZero { rho: rb }) = (a.kind, b.kind) else {
                panic!("expected crossings");
            };
            assert!(rb < ra);
            assert!(a.tau.unwrap() < a.sigma.unwrap() && a.sigma.unwrap() < ra);
        }
    }

    #[test]
    fn laplacian_exterior_kinds_coincide() {
        let spec = OperatorSpec::laplacian(3);
        let a = rho_alpha(ExteriorKind::MinusIvp, &spec, 2.0, 0.7, opts(1e-10)).unwrap();
        let b = rho_alpha(ExteriorKind::PlusIvp, &spec, 2.0, 0.7, opts(1e-10)).unwrap();
        assert_eq!(a.profile.r, b.profile.r);
        assert_eq!(a.profile.u, b.profile.u);
    }

    #[test]
    fn subcritical_slope_is_zero() {
        let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
        let cs = critical_slope(ExteriorKind::MinusIvp, &spec, 2.0, SlopeSearch::default(), opts(1e-9)).unwrap();
        assert_eq!(cs.alpha_star, 0.0);
    }

    #[test]
    fn supercritical_slope_has_certificates() {
        let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
        let search = SlopeSearch { slope_tol: 1e-5, ..SlopeSearch::default() };
        let cs = critical_slope(ExteriorKind::MinusIvp, &spec, 3.5, search, opts(1e-9)).unwrap();
        assert!(cs.alpha_star > 0.0);
        assert!(cs.bracket.1 - cs.bracket.0 <= 1e-5);
        let lo = slope_probe(ExteriorKind::MinusIvp, &spec, 3.5, cs.bracket.0, opts(1e-9)).unwrap();
        let hi = slope_probe(ExteriorKind::MinusIvp, &spec, 3.5, cs.bracket.1, opts(1e-9)).unwrap();
        assert!(!lo.crossed && hi.crossed);
    }

    #[test]
    fn emden_fowler_fixed_point() {
        let p = 3.0;
        let r: Vec<f64> = (1..50).map(|i| 0.5 * i as f64).collect();
        let u: Vec<f64> = r.iter().map(|r| r.powf(-2.0 / (p - 1.0))).collect();
        let du: Vec<f64> = r.iter().map(|r| -(2.0 / (p - 1.0)) * r.powf(-2.0 / (p - 1.0) - 1.0)).collect();
        let prof = RadialProfile::from_samples(OperatorSpec::laplacian(3), p, r, u, du, 1e-10).unwrap();
        for pt in emden_fowler_trajectory(&prof, p) {
            assert!((pt.x - 1.0).abs() < 1e-14);
            assert!(pt.dx.abs() < 1e-14);
        }
    }

    #[test]
    fn crossing_segments_detected() {
        let mk = |pts: &[(f64, f64)]| pts.iter().map(|&(x, dx)| PhasePoint { t: 0.0, x, dx }).collect::<Vec<_>>();
        let a = mk(&[(0.0, 0.0), (1.0, 1.0)]);
        let b = mk(&[(0.0, 1.0), (1.0, 0.0)]);
        let c = mk(&[(2.0, 0.0), (3.0, 1.0)]);
        assert!(trajectories_intersect(&a, &b));
        assert!(!trajectories_intersect(&a, &c));
    }
}
