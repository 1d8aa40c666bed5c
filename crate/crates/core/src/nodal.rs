//! Sign-changing radial solutions on the unit ball by continuation through
//! zeros, their nodal decomposition, and the concentration sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_from_center, EventKind, IntegrationOptions, RadialProfile, StopRule};
use crate::model::{Branch, OperatorSpec};
use crate::shooting::positive_ball_solution;

/// Default distances to the critical exponent used by the sweeps.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.2, 0.1, 0.05, 0.02, 0.01];

/// Center value of the independent ball shoot in the scaling check.
const CHECK_CENTER: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalDecomposition {
    pub k: usize,
    /// `r_1 < ... < r_{k-1}` in `(0, 1)`.
    pub nodal_radii: Vec<f64>,
    /// `s_0 = 0 < s_1 < ... < s_{k-1}`.
    pub extremum_radii: Vec<f64>,
    /// `M_i = |u(s_i)|`.
    pub extremum_values: Vec<f64>,
    /// Inflection radius of each region, when one was located.
    pub inflection_radii: Vec<Option<f64>>,
}

impl NodalDecomposition {
    /// Checks `0 = s_0 < r_1 < s_1 < ... < r_{k-1} < s_{k-1} < 1` and `M_i > 0`.
    pub fn interlacing_holds(&self) -> bool {
        let mut seq = vec![self.extremum_radii[0]];
        for i in 1..self.k {
            seq.push(self.nodal_radii[i - 1]);
            seq.push(self.extremum_radii[i]);
        }
        seq.push(1.0);
        self.extremum_radii[0] == 0.0 && seq.windows(2).all(|w| w[0] < w[1]) && self.extremum_values.iter().all(|&m| m > 0.0)
    }

    /// Region `i` as a radius interval.
    pub fn region(&self, i: usize) -> (f64, f64) {
        let a = if i == 0 { 0.0 } else { self.nodal_radii[i - 1] };
        let b = if i + 1 == self.k { 1.0 } else { self.nodal_radii[i] };
        (a, b)
    }
}

#[derive(Debug, Clone)]
pub struct NodalSolution {
    /// Solution on `[0, 1]`, vanishing at `r = 1`.
    pub profile: RadialProfile,
    pub decomposition: NodalDecomposition,
    /// k-th zero of the shoot from `u(0) = 1`.
    pub rho: f64,
    pub boundary_slope: f64,
}

/// Extracts the decomposition of a profile on `[0, 1]` with `k` regions.
pub fn decompose(profile: &RadialProfile, k: usize) -> Result<NodalDecomposition> {
    let zeros = profile.zeros();
    if zeros.len() < k {
        return Err(Error::ZeroCountNotReached { found: zeros.len(), wanted: k });
    }
    let nodal_radii: Vec<f64> = zeros[..k - 1].to_vec();
    let bounds = |i: usize| -> (f64, f64) {
        let a = if i == 0 { 0.0 } else { nodal_radii[i - 1] };
        (a, zeros[i])
    };
    let mut extremum_radii = vec![0.0];
    let mut extremum_values = vec![profile.u[0].abs()];
    let mut inflection_radii = Vec::with_capacity(k);
    for i in 0..k {
        let (a, b) = bounds(i);
        let inside = |kind: EventKind| -> Vec<f64> { profile.events_of(kind).map(|e| e.radius).filter(|&x| x > a && x < b).collect() };
        if i > 0 {
            let ext = inside(EventKind::DuZero);
            if ext.len() != 1 {
                return Err(Error::Region {
                    index: i,
                    source: Box::new(Error::Invariant(format!("{} extrema in region ({a}, {b})", ext.len()))),
                });
            }
            extremum_radii.push(ext[0]);
            extremum_values.push(profile.eval(ext[0]).0.abs());
        }
        let infl = inside(EventKind::DduZero);
        inflection_radii.push(if infl.len() == 1 { Some(infl[0]) } else { None });
    }
    for (i, &s) in extremum_radii.iter().enumerate() {
        let u = if s == 0.0 { profile.u[0] } else { profile.eval(s).0 };
        let want = if i % 2 == 0 { 1.0 } else { -1.0 };
        if u * want <= 0.0 {
            return Err(Error::Invariant(format!("sign does not alternate in region {i}")));
        }
    }
    let d = NodalDecomposition {
        k,
        nodal_radii,
        extremum_radii,
        extremum_values,
        inflection_radii,
    };
    if !d.interlacing_holds() {
        return Err(Error::Invariant(format!("interlacing fails: {d:?}")));
    }
    Ok(d)
}

/// Shoots from `u(0) = 1` through `k - 1` zeros to the k-th zero and rescales
/// onto the unit ball.
pub fn build_nodal(spec: &OperatorSpec, p: f64, k: usize, opts: IntegrationOptions) -> Result<NodalSolution> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of nodal regions must be at least 1".into()));
    }
    let opts = IntegrationOptions { stop: StopRule::Zeros(k), ..opts };
    let prof = integrate_from_center(spec, p, 1.0, opts)?;
    let zeros = prof.zeros();
    if prof.truncated || zeros.len() < k {
        return Err(Error::ZeroCountNotReached { found: zeros.len(), wanted: k });
    }
    let rho = zeros[k - 1];
    let v = prof.rescaled(rho);
    let decomposition = decompose(&v, k)?;
    let boundary_slope = *v.du.last().expect("non-empty profile");
    Ok(NodalSolution {
        profile: v,
        decomposition,
        rho,
        boundary_slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub ball_sup_norm: f64,
    pub ball_boundary_slope: f64,
    pub m0: f64,
    pub r1: f64,
    /// `|r_1 - (||v||/M_0)^{(p-1)/2}| / r_1`.
    pub residual_nodal_radius: f64,
    /// `|r_1^{(p+1)/(p-1)} u'(r_1) - v'(1)| / |v'(1)|`.
    pub residual_slope: f64,
    pub m0_exceeds_ball: bool,
}

/// Compares the first region of a nodal solution with the positive ball
/// solution computed independently.
pub fn scaling_identity_check(sol: &NodalSolution, spec: &OperatorSpec, p: f64, opts: IntegrationOptions) -> Result<ScalingReport> {
    let d = &sol.decomposition;
    if d.k < 2 {
        return Err(Error::InvalidArgument("scaling identities need at least two regions".into()));
    }
    // shoot the ball from another center value so that the comparison is not
    // against the very trajectory the nodal solution started on
    let shot = integrate_from_center(spec, p, CHECK_CENTER, IntegrationOptions { stop: StopRule::Zeros(1), ..opts })?;
    let Some(&rho) = shot.zeros().first() else {
        return Err(Error::NoZeroFound { r_max: opts.r_max });
    };
    let v = shot.rescaled(rho);
    let ball_sup = v.u[0];
    let ball_slope = *v.du.last().expect("non-empty profile");
    let m0 = d.extremum_values[0];
    let r1 = d.nodal_radii[0];
    let predicted_r1 = (ball_sup / m0).powf((p - 1.0) / 2.0);
    let i = sol.profile.grid_index_of(r1);
    let du_r1 = if (sol.profile.r[i] - r1).abs() <= 4.0 * f64::EPSILON * r1 {
        sol.profile.du[i]
    } else {
        sol.profile.eval(r1).1
    };
    let predicted_slope = r1.powf((p + 1.0) / (p - 1.0)) * du_r1;
    Ok(ScalingReport {
        ball_sup_norm: ball_sup,
        ball_boundary_slope: ball_slope,
        m0,
        r1,
        residual_nodal_radius: (r1 - predicted_r1).abs() / r1,
        residual_slope: (predicted_slope - ball_slope).abs() / ball_slope.abs(),
        m0_exceeds_ball: m0 > ball_sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub p: f64,
    pub epsilon: f64,
    pub decomposition: NodalDecomposition,
    pub boundary_slope: f64,
    /// `r_1 M_0^{(p-1)/2}`.
    pub r1_scaled: Option<f64>,
    /// `r_1 M_1^{(p-1)/2}`.
    pub r1_hat: Option<f64>,
    /// `s_1 M_1^{(p-1)/2}`.
    pub s1_hat: Option<f64>,
    /// `M_{2j} / M_{2j+1}`.
    pub even_odd_ratios: Vec<f64>,
    /// `M_{2j+1} / M_{2j+2}`.
    pub odd_even_ratios: Vec<f64>,
}

impl SweepRecord {
    fn new(p: f64, epsilon: f64, sol: &NodalSolution) -> Self {
        let d = sol.decomposition.clone();
        let m = &d.extremum_values;
        let e = (p - 1.0) / 2.0;
        let r1 = d.nodal_radii.first().copied();
        let s1 = d.extremum_radii.get(1).copied();
        let m1 = m.get(1).copied();
        SweepRecord {
            p,
            epsilon,
            boundary_slope: sol.boundary_slope,
            r1_scaled: r1.map(|r| r * m[0].powf(e)),
            r1_hat: r1.zip(m1).map(|(r, m1)| r * m1.powf(e)),
            s1_hat: s1.zip(m1).map(|(s, m1)| s * m1.powf(e)),
            even_odd_ratios: (0..m.len() / 2).map(|j| m[2 * j] / m[2 * j + 1]).collect(),
            odd_even_ratios: (0..(m.len().saturating_sub(1)) / 2).map(|j| m[2 * j + 1] / m[2 * j + 2]).collect(),
            decomposition: d,
        }
    }
}

/// One sweep entry; failures are kept so the sweep can continue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry<T> {
    pub epsilon: f64,
    pub p: f64,
    pub result: std::result::Result<T, String>,
}

fn check_epsilons(eps: &[f64], p_crit: f64) -> Result<()> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("epsilon list must be positive and strictly decreasing".into()));
    }
    if p_crit - eps[0] <= 1.0 {
        return Err(Error::InvalidArgument(format!("p = {} is not above 1", p_crit - eps[0])));
    }
    Ok(())
}

/// k-region solutions at `p = p_crit - epsilon` for each entry.
pub fn concentration_sweep(spec: &OperatorSpec, k: usize, eps: &[f64], p_crit: f64, opts: IntegrationOptions) -> Result<Vec<SweepEntry<SweepRecord>>> {
    check_epsilons(eps, p_crit)?;
    Ok(eps
        .par_iter()
        .map(|&e| {
            let p = p_crit - e;
            let result = build_nodal(spec, p, k, opts).map(|s| SweepRecord::new(p, e, &s)).map_err(|err| err.to_string());
            SweepEntry { epsilon: e, p, result }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveSweepRecord {
    pub p: f64,
    pub epsilon: f64,
    pub sup_norm: f64,
    /// Inflection radius `r_0`.
    pub r0: f64,
    /// `r_0^{2/(p-1)} ||v||`.
    pub r0_scaled_sup: f64,
    /// `v(r_0) / ||v||`.
    pub inflection_ratio: f64,
    /// `r_0^{2/(p-1)} v(r_0)`.
    pub r0_scaled_value: f64,
    pub boundary_slope: f64,
    /// `||v||^{(p(N~-2)-N~)/2} v'(1)`.
    pub normalized_slope: f64,
}

/// Positive solutions at `p = p_crit - epsilon`.
pub fn positive_solution_sweep(spec: &OperatorSpec, eps: &[f64], p_crit: f64, opts: IntegrationOptions) -> Result<Vec<SweepEntry<PositiveSweepRecord>>> {
    check_epsilons(eps, p_crit)?;
    let m = spec.dimension_like();
    Ok(eps
        .par_iter()
        .map(|&e| {
            let p = p_crit - e;
            let result = positive_ball_solution(spec, p, opts)
                .and_then(|b| {
                    let r0 = b.inflection.ok_or(Error::NoInflection { a: 0.0, b: 1.0 })?;
                    let q = 2.0 / (p - 1.0);
                    let v0 = b.profile.eval(r0).0;
                    Ok(PositiveSweepRecord {
                        p,
                        epsilon: e,
                        sup_norm: b.sup_norm,
                        r0,
                        r0_scaled_sup: r0.powf(q) * b.sup_norm,
                        inflection_ratio: v0 / b.sup_norm,
                        r0_scaled_value: r0.powf(q) * v0,
                        boundary_slope: b.boundary_slope,
                        normalized_slope: b.sup_norm.powf((p * (m - 2.0) - m) / 2.0) * b.boundary_slope,
                    })
                })
                .map_err(|err| err.to_string());
            SweepEntry { epsilon: e, p, result }
        })
        .collect())
}

/// Relative change between the two finest entries of a series.
pub fn last_relative_change(values: &[f64]) -> Option<f64> {
    let n = values.len();
    (n >= 2).then(|| (values[n - 1] - values[n - 2]).abs() / values[n - 2].abs())
}

pub fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayBoundReport {
    /// Inflection radius where the envelope is anchored.
    pub t: f64,
    pub c: f64,
    pub k: f64,
    /// `max (u / envelope) - 1` over the tail.
    pub worst_margin: f64,
    pub worst_radius: f64,
    pub holds: bool,
    pub points: usize,
}

/// Checks `u(r) <= C / (r^2 - t^2 + K)^{(N~-2)/2}` on the convex tail of an
/// exterior minus profile.
///
/// `y = u^{-2/(N~-2)}` is convex in `r^2` on the tail as long as the Pohozaev
/// type functional stays positive, so the envelope is taken from the tangent
/// of `y` at the inflection `t`: `C = m^{-(N~-2)/2}`, `K = y(t)/m` with
/// `m = dy/d(r^2)` at `t`.
pub fn decay_bound_check(profile: &RadialProfile, slack: f64) -> Result<DecayBoundReport> {
    let m_dim = profile.spec.dimension_like();
    let e = m_dim - 2.0;
    let t = profile
        .events_of(EventKind::DduZero)
        .map(|ev| ev.radius)
        .next()
        .ok_or(Error::NoInflection { a: profile.r_start(), b: profile.r_end() })?;
    let (ut, dut) = profile.eval(t);
    if !(ut > 0.0 && dut < 0.0) {
        return Err(Error::Invariant(format!("profile is not positive and decreasing at the inflection t = {t}")));
    }
    let yt = ut.powf(-2.0 / e);
    let slope = -ut.powf(-m_dim / e) * dut / (t * e);
    let c = slope.powf(-e / 2.0);
    let k = yt / slope;
    let end = profile.zeros().first().copied().unwrap_or(profile.r_end());
    let mut worst = f64::NEG_INFINITY;
    let mut worst_radius = t;
    let mut points = 0;
    for (&r, &u) in profile.r.iter().zip(&profile.u) {
        if r <= t || r >= end {
            continue;
        }
        let env = c / (r * r - t * t + k).powf(e / 2.0);
        let margin = u / env - 1.0;
        points += 1;
        if margin > worst {
            worst = margin;
            worst_radius = r;
        }
    }
    Ok(DecayBoundReport {
        t,
        c,
        k,
        worst_margin: worst,
        worst_radius,
        holds: worst <= slack,
        points,
    })
}

/// Writes the sweep table with one row per entry. Failed entries keep their
/// epsilon and p with empty fields.
pub fn write_sweep_csv<W: std::io::Write>(entries: &[SweepEntry<SweepRecord>], k: usize, branch: Branch, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# {branch} operator, k = {k}; M_i = |u(s_i)| extremum magnitudes, r_i = nodal radii, s_i = extremum radii, t_i = inflection radii, r1_scaled = r_1 M_0^((p-1)/2), s1_hat = s_1 M_1^((p-1)/2), ratio_even_j = M_2j/M_2j+1, ratio_odd_j = M_2j+1/M_2j+2"
    )?;
    let mut cols = vec!["epsilon".to_string(), "p".to_string()];
    cols.extend((0..k).map(|i| format!("M{i}")));
    cols.extend((1..k).map(|i| format!("r{i}")));
    cols.extend((1..k).map(|i| format!("s{i}")));
    cols.extend((0..k).map(|i| format!("t{i}")));
    cols.push("boundary_slope".into());
    cols.push("r1_scaled".into());
    cols.push("s1_hat".into());
    cols.extend((0..k / 2).map(|j| format!("ratio_even_{j}")));
    cols.extend((0..(k - 1) / 2).map(|j| format!("ratio_odd_{j}")));
    cols.push("error".into());
    writeln!(w, "{}", cols.join(","))?;
    let f = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
    for e in entries {
        let mut row = vec![format!("{}", e.epsilon), format!("{:.12}", e.p)];
        match &e.result {
            Ok(rec) => {
                let d = &rec.decomposition;
                row.extend(d.extremum_values.iter().map(|&v| f(Some(v))));
                row.extend(d.nodal_radii.iter().map(|&v| f(Some(v))));
                row.extend(d.extremum_radii.iter().skip(1).map(|&v| f(Some(v))));
                row.extend(d.inflection_radii.iter().map(|&v| f(v)));
                row.push(f(Some(rec.boundary_slope)));
                row.push(f(rec.r1_scaled));
                row.push(f(rec.s1_hat));
                row.extend(rec.even_odd_ratios.iter().map(|&v| f(Some(v))));
                row.extend(rec.odd_even_ratios.iter().map(|&v| f(Some(v))));
                row.push(String::new());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), cols.len() - 3));
                row.push(format!("\"{}\"", msg.replace('"', "'")));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes the positive-solution sweep table.
pub fn write_positive_csv<W: std::io::Write>(entries: &[SweepEntry<PositiveSweepRecord>], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "# sup_norm = ||v||_inf, r0 = inflection radius, r0_scaled_sup = r0^(2/(p-1)) ||v||, inflection_ratio = v(r0)/||v||, r0_scaled_value = r0^(2/(p-1)) v(r0), normalized_slope = ||v||^((p(N~-2)-N~)/2) v'(1)"
    )?;
    writeln!(w, "epsilon,p,sup_norm,r0,r0_scaled_sup,inflection_ratio,r0_scaled_value,boundary_slope,normalized_slope,error")?;
    for e in entries {
        match &e.result {
            Ok(r) => writeln!(
                w,
                "{},{:.12},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},",
                e.epsilon, e.p, r.sup_norm, r.r0, r.r0_scaled_sup, r.inflection_ratio, r.r0_scaled_value, r.boundary_slope, r.normalized_slope
            )?,
            Err(msg) => writeln!(w, "{},{:.12},,,,,,,,\"{}\"", e.epsilon, e.p, msg.replace('"', "'"))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> IntegrationOptions {
        IntegrationOptions::new(1e-10, 1e6, StopRule::RMax)
    }

    #[test]
    fn laplacian_two_regions() {
        let spec = OperatorSpec::laplacian(3);
        let sol = build_nodal(&spec, 3.0, 2, opts()).unwrap();
        let d = &sol.decomposition;
        assert!(d.interlacing_holds());
        assert_eq!(d.nodal_radii.len(), 1);
        assert!(d.inflection_radii.iter().all(Option::is_some));
        assert!(sol.profile.u[0] > 0.0 && sol.boundary_slope > 0.0);
    }

    #[test]
    fn region_bounds() {
        let d = NodalDecomposition {
            k: 3,
            nodal_radii: vec![0.2, 0.6],
            extremum_radii: vec![0.0, 0.4, 0.8],
            extremum_values: vec![3.0, 2.0, 1.0],
            inflection_radii: vec![None; 3],
        };
        assert!(d.interlacing_holds());
        assert_eq!(d.region(0), (0.0, 0.2));
        assert_eq!(d.region(1), (0.2, 0.6));
        assert_eq!(d.region(2), (0.6, 1.0));
        let bad = NodalDecomposition {
            extremum_radii: vec![0.0, 0.1, 0.8],
            ..d
        };
        assert!(!bad.interlacing_holds());
    }

    #[test]
    fn minus_scaling_identities() {
        let spec = OperatorSpec::new(1.0, 1.5, 4, Branch::Minus).unwrap();
        let p = 2.0;
        let sol = build_nodal(&spec, p, 2, opts()).unwrap();
        let rep = scaling_identity_check(&sol, &spec, p, opts()).unwrap();
        assert!(rep.residual_nodal_radius <= 1e-9, "{rep:?}");
        assert!(rep.residual_slope <= 1e-9, "{rep:?}");
        assert!(rep.m0_exceeds_ball);
    }

    #[test]
    fn bad_epsilons_rejected() {
        let spec = OperatorSpec::laplacian(3);
        assert!(concentration_sweep(&spec, 2, &[0.1, 0.2], 5.0, opts()).is_err());
        assert!(concentration_sweep(&spec, 2, &[], 5.0, opts()).is_err());
    }
}
