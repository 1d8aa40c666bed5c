//! Bisection estimates of the critical exponents for positive solutions of
//! the two Pucci problems and of the nodal threshold for the plus operator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_from_center, ExteriorKind, IntegrationOptions, StopRule};
use crate::model::{serrin_like, sobolev_exponent, sobolev_like, Branch, OperatorSpec};
use crate::shooting::{critical_slope, needs_longer_horizon, positive_ball_solution, SlopeSearch};

pub const DEFAULT_P_TOL: f64 = 1e-3;
/// Widening of the analytic bracket used to start the bisection.
const BRACKET_WIDENING: f64 = 0.25;
const RETRY_FACTOR: f64 = 10.0;
pub const DEFAULT_GAP_GRID: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhichExponent {
    PStarMinus,
    PStarPlus,
    PStarStarPlus,
}

/// One independent run at a bracket end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub p: f64,
    /// Center shoot crossed zero before `r_max` (ball exponents), or the gap
    /// is positive (nodal exponent).
    pub exists: bool,
    pub first_zero: Option<f64>,
    pub r_max: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Bracket of the estimate that must lie inside `(lo, hi)`.
    pub bracket: (f64, f64),
    pub pass: bool,
}

impl BoundCheck {
    fn strict(name: &str, lo: f64, hi: f64, bracket: (f64, f64)) -> Self {
        BoundCheck {
            name: name.to_string(),
            lo,
            hi,
            bracket,
            pass: lo < bracket.0 && bracket.1 < hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalExponentEstimate {
    pub which: WhichExponent,
    pub value: f64,
    pub bracket: (f64, f64),
    /// Existence side first, non-existence side second.
    pub certificates: (RunRecord, RunRecord),
    pub spec: OperatorSpec,
    pub bounds: Vec<BoundCheck>,
}

impl CriticalExponentEstimate {
    pub fn width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

/// Analytic bracket for the critical exponent of positive solutions of the
/// branch of `spec`. Degenerates to the Sobolev exponent when `lambda = Lambda`.
pub fn exponent_bounds(spec: &OperatorSpec) -> (f64, f64) {
    let sob = sobolev_exponent(spec.dim).expect("validated spec");
    let m = spec.dimension_like();
    match spec.branch {
        Branch::Minus => (sobolev_like(m), sob),
        Branch::Plus => (serrin_like(m).max(sob), sobolev_like(m)),
    }
}

/// Center shoot from `u(0) = 1` to the first zero, with the horizon retry.
pub fn center_probe(spec: &OperatorSpec, p: f64, opts: IntegrationOptions) -> Result<RunRecord> {
    let mut opts = IntegrationOptions { stop: StopRule::Zeros(1), ..opts };
    let mut prof = integrate_from_center(spec, p, 1.0, opts)?;
    if needs_longer_horizon(&prof) {
        opts.r_max *= RETRY_FACTOR;
        prof = integrate_from_center(spec, p, 1.0, opts)?;
    }
    Ok(RunRecord {
        p,
        exists: !prof.truncated,
        first_zero: prof.zeros().first().copied(),
        r_max: opts.r_max,
        gap: None,
    })
}

/// Critical exponent for positive solutions in the ball for the branch of
/// `spec`, by bisection on the center-shoot crossing indicator.
pub fn critical_exponent_ball(spec: &OperatorSpec, p_tol: f64, opts: IntegrationOptions) -> Result<CriticalExponentEstimate> {
    spec.validate()?;
    if !(p_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("p_tol must be positive, got {p_tol}")));
    }
    let (blo, bhi) = exponent_bounds(spec);
    let mut lo = center_probe(spec, (blo - BRACKET_WIDENING).max(1.0 + 1e-3), opts)?;
    let mut hi = center_probe(spec, bhi + BRACKET_WIDENING, opts)?;
    if !lo.exists {
        return Err(Error::BoundsViolated { value: lo.p, lo: blo, hi: bhi });
    }
    if hi.exists {
        return Err(Error::BoundsViolated { value: hi.p, lo: blo, hi: bhi });
    }
    while hi.p - lo.p > p_tol {
        let mid = center_probe(spec, 0.5 * (lo.p + hi.p), opts)?;
        if mid.exists {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = 0.5 * (lo.p + hi.p);
    let bracket = (lo.p, hi.p);
    let (which, name) = match spec.branch {
        Branch::Minus => (WhichExponent::PStarMinus, "p*- bracket"),
        Branch::Plus => (WhichExponent::PStarPlus, "p*+ bracket"),
    };
    let check = if spec.is_laplacian() {
        let sob = blo.max(bhi);
        BoundCheck {
            name: format!("{name} (Laplacian: |p - (N+2)/(N-2)| <= p_tol)"),
            lo: sob - p_tol,
            hi: sob + p_tol,
            bracket: (value, value),
            pass: (value - sob).abs() <= p_tol,
        }
    } else {
        BoundCheck::strict(name, blo, bhi, bracket)
    };
    if !check.pass {
        return Err(Error::BoundsViolated { value, lo: check.lo, hi: check.hi });
    }
    Ok(CriticalExponentEstimate {
        which,
        value,
        bracket,
        certificates: (lo, hi),
        spec: *spec,
        bounds: vec![check],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapValue {
    pub p: f64,
    /// `|v'_{p,+}(1)|`.
    pub boundary_slope: f64,
    /// Critical slope of the minus exterior problem.
    pub alpha_star: f64,
    pub gap: f64,
}

/// `g(p) = |v'_{p,+}(1)| - alpha*_-(p)`; positive exactly when a two-region
/// solution of the plus problem can be glued at `p`.
pub fn nodal_gap(spec: &OperatorSpec, p: f64, slope_tol: f64, opts: IntegrationOptions) -> Result<GapValue> {
    let plus = spec.with_branch(Branch::Plus);
    let ball = positive_ball_solution(&plus, p, opts)?;
    let slope = ball.boundary_slope.abs();
    let search = SlopeSearch {
        slope_tol,
        seed: slope,
        ..SlopeSearch::default()
    };
    let cs = critical_slope(ExteriorKind::MinusIvp, spec, p, search, opts)?;
    Ok(GapValue {
        p,
        boundary_slope: slope,
        alpha_star: cs.alpha_star,
        gap: slope - cs.alpha_star,
    })
}

fn gap_record(g: &GapValue, r_max: f64) -> RunRecord {
    RunRecord {
        p: g.p,
        exists: g.gap > 0.0,
        first_zero: None,
        r_max,
        gap: Some(g.gap),
    }
}

/// Nodal threshold for the plus operator: the last sign change from positive
/// to negative of the gap function on `(p_star_minus, p_star_plus)`.
pub fn critical_exponent_nodal(
    spec: &OperatorSpec,
    p_star_minus: f64,
    p_star_plus: f64,
    p_tol: f64,
    grid: usize,
    opts: IntegrationOptions,
) -> Result<CriticalExponentEstimate> {
    spec.validate()?;
    if !(p_star_minus < p_star_plus) || !(p_tol > 0.0) || grid < 2 {
        return Err(Error::InvalidArgument("need p*- < p*+, p_tol > 0 and at least two grid points".into()));
    }
    let slope_tol = (p_tol * 1e-3).min(1e-6);
    let ps: Vec<f64> = (1..=grid)
        .map(|i| p_star_minus + (p_star_plus - p_star_minus) * i as f64 / (grid + 1) as f64)
        .collect();
    let gaps: Vec<Result<GapValue>> = ps.par_iter().map(|&p| nodal_gap(spec, p, slope_tol, opts)).collect();
    let mut defined = Vec::new();
    for g in gaps {
        match g {
            Ok(v) => defined.push(v),
            Err(Error::NoZeroFound { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let change = defined
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].gap > 0.0 && w[1].gap < 0.0)
        .map(|(i, _)| i)
        .next_back();
    let Some(i) = change else {
        return Err(Error::NoSignChange { lo: p_star_minus, hi: p_star_plus });
    };
    let (mut lo, mut hi) = (defined[i], defined[i + 1]);
    while hi.p - lo.p > p_tol {
        let mid = nodal_gap(spec, 0.5 * (lo.p + hi.p), slope_tol, opts)?;
        if mid.gap > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = 0.5 * (lo.p + hi.p);
    let bracket = (lo.p, hi.p);
    let mut bounds = vec![BoundCheck::strict("p*- < p**+ < p*+", p_star_minus, p_star_plus, bracket)];
    if !spec.is_laplacian() {
        let (_, bhi) = exponent_bounds(&spec.with_branch(Branch::Plus));
        bounds.push(BoundCheck {
            name: "p**+ below the upper bound for p*+".into(),
            lo: 1.0,
            hi: bhi,
            bracket,
            pass: bracket.1 < bhi,
        });
    }
    Ok(CriticalExponentEstimate {
        which: WhichExponent::PStarStarPlus,
        value,
        bracket,
        certificates: (gap_record(&lo, opts.r_max), gap_record(&hi, opts.r_max)),
        spec: spec.with_branch(Branch::Plus),
        bounds,
    })
}

/// Gap values on a grid, for reporting the sign of `g` without assuming any
/// interval structure.
pub fn gap_scan(spec: &OperatorSpec, ps: &[f64], slope_tol: f64, opts: IntegrationOptions) -> Vec<(f64, std::result::Result<GapValue, String>)> {
    ps.par_iter()
        .map(|&p| (p, nodal_gap(spec, p, slope_tol, opts).map_err(|e| e.to_string())))
        .collect()
}

/// JSON report with value, bracket, certificates and bound checks.
pub fn estimate_report(est: &CriticalExponentEstimate) -> serde_json::Value {
    serde_json::json!({
        "which": est.which,
        "value": est.value,
        "bracket": [est.bracket.0, est.bracket.1],
        "width": est.width(),
        "certificates": {
            "existence_side": est.certificates.0,
            "nonexistence_side": est.certificates.1,
        },
        "spec": est.spec,
        "bounds": est.bounds,
        "bounds_pass": est.bounds.iter().all(|b| b.pass),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> IntegrationOptions {
        IntegrationOptions::new(1e-9, 1e6, StopRule::Zeros(1))
    }

    #[test]
    fn bounds_for_sample_spec() {
        let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
        let (lo, hi) = exponent_bounds(&spec);
        assert!((lo - 15.0 / 7.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        let (lo, hi) = exponent_bounds(&spec.with_branch(Branch::Plus));
        assert!((lo - 3.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_n4_is_sobolev() {
        let est = critical_exponent_ball(&OperatorSpec::laplacian(4), 1e-3, opts()).unwrap();
        assert!((est.value - 3.0).abs() <= 1e-3, "{}", est.value);
        assert!(est.width() <= 1e-3);
        assert!(est.certificates.0.exists && !est.certificates.1.exists);
    }

    #[test]
    fn laplacian_gap_is_positive() {
        let spec = OperatorSpec::laplacian(4);
        for p in [2.0, 2.5, 2.9] {
            let g = nodal_gap(&spec, p, 1e-6, opts()).unwrap();
            assert!(g.gap > 0.0, "p = {p}: {g:?}");
        }
    }
}
