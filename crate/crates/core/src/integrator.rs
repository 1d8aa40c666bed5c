//! Adaptive integration of the radial equation `u'' = resolve(r, u, u')`.
//!
//! The stepper is the Dormand–Prince 5(4) pair with pure relative error
//! control. The right-hand side is only Lipschitz across the surfaces where
//! `u`, `u'` or `u''` change sign, so every step that crosses one of them is
//! cut back to land on the crossing. Each grid interval therefore lies in a
//! single sign regime and the quintic Hermite interpolant built from
//! `(u, u', u'')` at its ends is smooth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{origin_second_derivative, second_derivative, signed_power, OperatorSpec};

/// Default outer radius standing in for `r = +inf`.
pub const DEFAULT_R_MAX: f64 = 1e6;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 2_000_000;
/// Local error control runs this much tighter than the requested tolerance so
/// that accumulated global error stays at the requested level.
const LOCAL_FRACTION: f64 = 0.05;
/// Allowed increase of the energy functional, in units of `tol`.
const ENERGY_SLACK: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// Stop at the k-th zero of `u` after the starting radius.
    Zeros(usize),
    /// Integrate to `r_max`.
    RMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub tol: f64,
    pub r_max: f64,
    pub stop: StopRule,
}

impl IntegrationOptions {
    pub fn new(tol: f64, r_max: f64, stop: StopRule) -> Self {
        IntegrationOptions { tol, r_max, stop }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return Err(Error::InvalidArgument(format!("tol must lie in (0, 1e-2), got {}", self.tol)));
        }
        if !(self.r_max > 0.0) || self.r_max.is_nan() {
            return Err(Error::InvalidArgument(format!("r_max must be positive, got {}", self.r_max)));
        }
        if self.stop == StopRule::Zeros(0) {
            return Err(Error::InvalidArgument("zero-count stop rule needs k >= 1".into()));
        }
        Ok(())
    }
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            tol: 1e-10,
            r_max: DEFAULT_R_MAX,
            stop: StopRule::RMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    UZero,
    DuZero,
    DduZero,
    /// Tangential contact that cannot be resolved at the working tolerance.
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub radius: f64,
    /// Sign of the tracked quantity just before and just after the event.
    pub side_signs: (i8, i8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExteriorKind {
    /// Exterior problem for the minus operator.
    MinusIvp,
    /// Exterior problem for the plus operator.
    PlusIvp,
}

impl ExteriorKind {
    pub fn branch(self) -> crate::model::Branch {
        match self {
            ExteriorKind::MinusIvp => crate::model::Branch::Minus,
            ExteriorKind::PlusIvp => crate::model::Branch::Plus,
        }
    }
}

/// Running diagnostics collected by the stepper.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub landings: usize,
    /// Sum of relative local error estimates over accepted steps.
    pub accumulated_error: f64,
    /// Largest relative increase of the energy functional between grid points.
    pub max_energy_increase: f64,
}

/// A radial trajectory `(r, u, u')` on a strictly increasing grid with its
/// located events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    pub spec: OperatorSpec,
    pub p: f64,
    pub tol: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    #[serde(skip)]
    ddu: Vec<f64>,
    pub events: Vec<Event>,
    pub truncated: bool,
    /// The first grid point is the center `r = 0`.
    pub from_center: bool,
    pub stats: StepStats,
    /// Accumulated relative error estimate at each grid point.
    #[serde(skip)]
    err: Vec<f64>,
}

impl RadialProfile {
    /// Builds a profile from externally produced samples. The second
    /// derivative comes from the resolver and events are located on the grid.
    pub fn from_samples(spec: OperatorSpec, p: f64, r: Vec<f64>, u: Vec<f64>, du: Vec<f64>, tol: f64) -> Result<Self> {
        if r.len() != u.len() || r.len() != du.len() || r.len() < 2 {
            return Err(Error::InvalidArgument("sample vectors must have equal length >= 2".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r[0] < 0.0 {
            return Err(Error::InvalidArgument("grid must be non-negative and strictly increasing".into()));
        }
        let from_center = r[0] == 0.0;
        let n = r.len();
        let mut prof = RadialProfile {
            spec,
            p,
            tol,
            r,
            u,
            du,
            ddu: Vec::new(),
            events: Vec::new(),
            truncated: true,
            from_center,
            stats: StepStats::default(),
            err: vec![0.0; n],
        };
        prof.recompute_ddu();
        prof.events = locate_events(&prof);
        Ok(prof)
    }

    fn recompute_ddu(&mut self) {
        let spec = self.spec;
        let p = self.p;
        self.ddu = self
            .r
            .iter()
            .zip(self.u.iter().zip(&self.du))
            .map(|(&r, (&u, &du))| {
                if r == 0.0 {
                    origin_second_derivative(&spec, u, p)
                } else {
                    second_derivative(&spec, r, u, du, p)
                }
            })
            .collect();
    }

    /// Restores the cached second derivatives after deserialization.
    pub fn rehydrate(&mut self) {
        self.recompute_ddu();
        if self.err.len() != self.r.len() {
            self.err = vec![0.0; self.r.len()];
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn ddu(&self) -> &[f64] {
        &self.ddu
    }

    pub fn r_start(&self) -> f64 {
        self.r[0]
    }

    pub fn r_end(&self) -> f64 {
        *self.r.last().expect("non-empty profile")
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn zeros(&self) -> Vec<f64> {
        self.events_of(EventKind::UZero).map(|e| e.radius).collect()
    }

    /// Accumulated relative error estimate of the state at radius `r`.
    pub fn error_estimate_at(&self, r: f64) -> f64 {
        let i = self.interval_index(r);
        let j = (i + 1).min(self.err.len() - 1);
        self.err[j].max(self.tol)
    }

    /// Estimated absolute error of an event radius.
    ///
    /// A state error `e` shifts a root of the tracked quantity `q` by about
    /// `e * scale(q) / |q'|`, with `|u| / r^j` standing in for the scale of the
    /// j-th derivative. Zeros of `u` are well conditioned and fall back to `e * r`.
    pub fn event_error_estimate(&self, kind: EventKind, radius: f64) -> f64 {
        let e = self.error_estimate_at(radius);
        let r = radius.max(1e-300);
        let base = e * r;
        let (u, du) = self.eval(radius);
        let conditioned = match kind {
            EventKind::UZero | EventKind::Undetermined => 0.0,
            EventKind::DuZero => e * (u.abs() / r) / self.second_derivative_at(radius).abs(),
            EventKind::DduZero => {
                let h = 1e-4 * r;
                let lo = (radius - h).max(self.r_start());
                let hi = (radius + h).min(self.r_end());
                let slope = (self.second_derivative_at(hi) - self.second_derivative_at(lo)) / (hi - lo);
                e * (u.abs().max(du.abs() * r) / (r * r)) / slope.abs()
            }
        };
        if conditioned.is_finite() {
            base.max(conditioned)
        } else {
            base
        }
    }

    /// Index `i` with `r[i] <= x <= r[i+1]`, clamped to the grid.
    pub fn interval_index(&self, x: f64) -> usize {
        let n = self.r.len();
        if x <= self.r[0] {
            return 0;
        }
        if x >= self.r[n - 1] {
            return n - 2;
        }
        match self.r.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    }

    fn hermite(&self, i: usize) -> Hermite5 {
        Hermite5::new(
            self.r[i],
            self.r[i + 1],
            [self.u[i], self.du[i], self.ddu[i]],
            [self.u[i + 1], self.du[i + 1], self.ddu[i + 1]],
        )
    }

    /// Dense output `(u, u')` at any radius inside the grid span.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.interval_index(x);
        let h = self.hermite(i);
        (h.value(x), h.derivative(x))
    }

    /// `u''` recomputed by the resolver at a dense-output point.
    pub fn second_derivative_at(&self, x: f64) -> f64 {
        if x == 0.0 && self.from_center {
            return self.ddu[0];
        }
        let (u, du) = self.eval(x);
        second_derivative(&self.spec, x, u, du, self.p)
    }

    /// Maximum of `|u|` on `[a, b]`, using grid values and dense output near
    /// the grid maximum.
    pub fn max_abs_on(&self, a: f64, b: f64) -> f64 {
        let mut best = self.eval(a).0.abs().max(self.eval(b).0.abs());
        for (&r, &u) in self.r.iter().zip(&self.u) {
            if r >= a && r <= b {
                best = best.max(u.abs());
            }
        }
        best
    }

    /// The profile of `rho^{2/(p-1)} u(rho r)`, which solves the same equation.
    pub fn rescaled(&self, rho: f64) -> RadialProfile {
        let q = 2.0 / (self.p - 1.0);
        let su = rho.powf(q);
        let sdu = su * rho;
        let sddu = sdu * rho;
        RadialProfile {
            spec: self.spec,
            p: self.p,
            tol: self.tol,
            r: self.r.iter().map(|r| r / rho).collect(),
            u: self.u.iter().map(|u| u * su).collect(),
            du: self.du.iter().map(|d| d * sdu).collect(),
            ddu: self.ddu.iter().map(|d| d * sddu).collect(),
            events: self
                .events
                .iter()
                .map(|e| Event {
                    radius: e.radius / rho,
                    ..*e
                })
                .collect(),
            truncated: self.truncated,
            from_center: self.from_center,
            stats: self.stats,
            // every rescaled radius and value inherits the error of rho itself
            err: {
                let e_rho = (q + 2.0) * self.error_estimate_at(rho);
                self.err.iter().map(|e| e + e_rho).collect()
            },
        }
    }

    /// Restriction to grid indices `[i0, i1]` (inclusive).
    pub fn slice(&self, i0: usize, i1: usize) -> RadialProfile {
        let (a, b) = (self.r[i0], self.r[i1]);
        RadialProfile {
            spec: self.spec,
            p: self.p,
            tol: self.tol,
            r: self.r[i0..=i1].to_vec(),
            u: self.u[i0..=i1].to_vec(),
            du: self.du[i0..=i1].to_vec(),
            ddu: self.ddu[i0..=i1].to_vec(),
            events: self
                .events
                .iter()
                .filter(|e| e.radius > a && e.radius < b)
                .copied()
                .collect(),
            truncated: self.truncated && i1 == self.r.len() - 1,
            from_center: self.from_center && i0 == 0,
            stats: self.stats,
            err: self.err[i0..=i1].to_vec(),
        }
    }

    /// Grid index of a radius that is (to rounding) a grid point.
    pub fn grid_index_of(&self, x: f64) -> usize {
        let i = self.interval_index(x);
        if (self.r[i + 1] - x).abs() < (self.r[i] - x).abs() {
            i + 1
        } else {
            i
        }
    }

    /// Largest residual `|u''_grid - resolve(...)|` over the grid, relative to
    /// the local curvature scale.
    pub fn residual(&self) -> f64 {
        self.r
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(|(i, &r)| {
                let want = second_derivative(&self.spec, r, self.u[i], self.du[i], self.p);
                (self.ddu[i] - want).abs() / (1.0 + want.abs())
            })
            .fold(0.0, f64::max)
    }

    /// Writes `r,u,du` rows after a comment line naming the columns.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# r = radius, u = u(r), du = u'(r); {} operator, p = {}", self.spec.branch, self.p)?;
        writeln!(w, "r,u,du")?;
        for i in 0..self.r.len() {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", self.r[i], self.u[i], self.du[i])?;
        }
        Ok(())
    }

    /// JSON sidecar with events and metadata.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "spec": self.spec,
            "p": self.p,
            "tol": self.tol,
            "truncated": self.truncated,
            "from_center": self.from_center,
            "r_start": self.r_start(),
            "r_end": self.r_end(),
            "points": self.r.len(),
            "events": self.events,
            "stats": self.stats,
        })
    }
}

/// Quintic Hermite interpolant on `[a, b]` matching value, first and second
/// derivative at both ends.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Hermite5 {
    a: f64,
    h: f64,
    c: [f64; 6],
}

impl Hermite5 {
    pub(crate) fn new(a: f64, b: f64, y0: [f64; 3], y1: [f64; 3]) -> Self {
        let h = b - a;
        // polynomial in s = (x - a)/h with derivatives scaled by h
        let (p0, d0, s0) = (y0[0], y0[1] * h, y0[2] * h * h);
        let (p1, d1, s1) = (y1[0], y1[1] * h, y1[2] * h * h);
        let c0 = p0;
        let c1 = d0;
        let c2 = 0.5 * s0;
        let c3 = 10.0 * (p1 - p0) - 6.0 * d0 - 4.0 * d1 - 1.5 * s0 + 0.5 * s1;
        let c4 = -15.0 * (p1 - p0) + 8.0 * d0 + 7.0 * d1 + 1.5 * s0 - s1;
        let c5 = 6.0 * (p1 - p0) - 3.0 * (d0 + d1) - 0.5 * s0 + 0.5 * s1;
        Hermite5 {
            a,
            h,
            c: [c0, c1, c2, c3, c4, c5],
        }
    }

    pub(crate) fn value(&self, x: f64) -> f64 {
        let s = (x - self.a) / self.h;
        let c = &self.c;
        c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))))
    }

    pub(crate) fn derivative(&self, x: f64) -> f64 {
        let s = (x - self.a) / self.h;
        let c = &self.c;
        (c[1] + s * (2.0 * c[2] + s * (3.0 * c[3] + s * (4.0 * c[4] + s * 5.0 * c[5])))) / self.h
    }
}

/// Cubic Hermite interpolant from values and first derivatives.
#[derive(Debug, Clone, Copy)]
struct Hermite3 {
    a: f64,
    h: f64,
    c: [f64; 4],
}

impl Hermite3 {
    fn new(a: f64, b: f64, y0: [f64; 2], y1: [f64; 2]) -> Self {
        let h = b - a;
        let (p0, d0, p1, d1) = (y0[0], y0[1] * h, y1[0], y1[1] * h);
        Hermite3 {
            a,
            h,
            c: [p0, d0, 3.0 * (p1 - p0) - 2.0 * d0 - d1, 2.0 * (p0 - p1) + d0 + d1],
        }
    }

    fn value(&self, x: f64) -> f64 {
        let s = (x - self.a) / self.h;
        let c = &self.c;
        c[0] + s * (c[1] + s * (c[2] + s * c[3]))
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type State = [f64; 2];

struct Rhs<'a> {
    spec: &'a OperatorSpec,
    p: f64,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, r: f64, y: &State) -> State {
        [y[1], second_derivative(self.spec, r, y[0], y[1], self.p)]
    }
}

struct StepOutcome {
    y: State,
    /// Scaled error norm; <= 1 means acceptable.
    err: f64,
}

fn dopri_step(f: &Rhs<'_>, r: f64, y: &State, k1: &State, h: f64, rtol: f64) -> StepOutcome {
    let add = |coef: &[(f64, &State)]| -> State {
        let mut out = *y;
        for (c, k) in coef {
            out[0] += h * c * k[0];
            out[1] += h * c * k[1];
        }
        out
    };
    let k2 = f.eval(r + C2 * h, &add(&[(A21, k1)]));
    let k3 = f.eval(r + C3 * h, &add(&[(A31, k1), (A32, &k2)]));
    let k4 = f.eval(r + C4 * h, &add(&[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f.eval(r + C5 * h, &add(&[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f.eval(r + h, &add(&[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y1 = add(&[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f.eval(r + h, &y1);
    let mut err = 0.0f64;
    let s0 = natural_scales(r, y, f.p);
    let s1 = natural_scales(r + h, &y1, f.p);
    for i in 0..2 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let scale = 1e-300 + rtol * s0[i].max(s1[i]);
        err = err.max((e / scale).abs());
    }
    if !y1[0].is_finite() || !y1[1].is_finite() {
        err = f64::INFINITY;
    }
    StepOutcome { y: y1, err }
}

/// Error scales for `(u, u')`. Each component is measured relative to its own
/// size or to the size implied by the other one, so that roots of `u` and `u'`
/// do not starve the step. `u'` is compared with `|u| / l`, `l` being the
/// larger of `r` and the scaling length `|u|^{-(p-1)/2}`.
fn natural_scales(r: f64, y: &State, p: f64) -> [f64; 2] {
    let (u, du) = (y[0].abs(), y[1].abs());
    let len = r.max(u.powf(-(p - 1.0) / 2.0));
    [u.max(du * r), if len.is_finite() { du.max(u / len) } else { du }]
}

#[inline]
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Energy functional `u'^2/2 + |u|^{p+1}/(c(p+1))` with `c` the coefficient of
/// `u''` in the current regime; non-increasing along solutions.
pub fn energy_functional(spec: &OperatorSpec, u: f64, du: f64, p: f64, ddu_positive: bool) -> f64 {
    let c = spec.weight(ddu_positive);
    0.5 * du * du + u.abs().powf(p + 1.0) / (c * (p + 1.0))
}

struct Integrator<'a> {
    f: Rhs<'a>,
    opts: IntegrationOptions,
    rtol: f64,
    r: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    ddu: Vec<f64>,
    err: Vec<f64>,
    events: Vec<Event>,
    stats: StepStats,
    /// Signs of `u`, `u'`, `u''` on the current open interval.
    signs: [i8; 3],
    zeros: usize,
    region_max: f64,
    /// Max of `|u|, |u'|, |u''|` since the last event of the same kind.
    since_event: [f64; 3],
}

impl<'a> Integrator<'a> {
    fn new(spec: &'a OperatorSpec, p: f64, opts: IntegrationOptions) -> Self {
        Integrator {
            f: Rhs { spec, p },
            rtol: opts.tol * LOCAL_FRACTION,
            opts,
            r: Vec::new(),
            u: Vec::new(),
            du: Vec::new(),
            ddu: Vec::new(),
            err: Vec::new(),
            events: Vec::new(),
            stats: StepStats::default(),
            signs: [0; 3],
            zeros: 0,
            region_max: 0.0,
            since_event: [0.0; 3],
        }
    }

    fn push(&mut self, r: f64, y: State, ddu: f64, err: f64) {
        self.r.push(r);
        self.u.push(y[0]);
        self.du.push(y[1]);
        self.ddu.push(ddu);
        self.err.push(err);
        self.region_max = self.region_max.max(y[0].abs());
        for (i, q) in [y[0], y[1], ddu].into_iter().enumerate() {
            self.since_event[i] = self.since_event[i].max(q.abs());
        }
    }

    /// Largest `|u|` over the last decade of radii in the current region; far
    /// tails are small in absolute terms but their zeros can still be simple.
    fn recent_max(&self, r: f64) -> f64 {
        self.r
            .iter()
            .zip(&self.u)
            .rev()
            .take_while(|(&x, _)| x >= 0.1 * r)
            .map(|(_, u)| u.abs())
            .fold(0.0, f64::max)
            .min(self.region_max)
    }

    fn quantities(&self, r: f64, y: &State) -> [f64; 3] {
        [y[0], y[1], second_derivative(self.f.spec, r, y[0], y[1], self.f.p)]
    }

    fn initial_step(&self, r0: f64, y0: &State, f0: &State) -> f64 {
        // Hairer–Nørsett–Wanner starting step heuristic
        // u(1) = 0 at the exterior start: measure u against the slope instead
        let u_scale = y0[0].abs().max(1e-3 * r0.max(1e-3) * y0[1].abs());
        let sc = |i: usize| 1e-300 + self.rtol * if i == 0 { u_scale } else { y0[1].abs() };
        let d0 = (0..2).map(|i| (y0[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / 2f64.sqrt();
        let d1 = (0..2).map(|i| (f0[i] / sc(i)).powi(2)).sum::<f64>().sqrt() / 2f64.sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * r0.max(1.0) } else { 0.01 * d0 / d1 };
        let y1 = [y0[0] + h0 * f0[0], y0[1] + h0 * f0[1]];
        let f1 = self.f.eval(r0 + h0, &y1);
        let d2 = (0..2).map(|i| ((f1[i] - f0[i]) / sc(i)).powi(2)).sum::<f64>().sqrt() / 2f64.sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(0.1 * r0.max(1e-3))
    }

    fn run(mut self, r0: f64, y0: State) -> Result<RunParts> {
        let mut r = r0;
        let mut y = y0;
        let q0 = self.quantities(r, &y);
        self.push(r, y, q0[2], 0.0);
        let mut k1 = self.f.eval(r, &y);
        let mut h = self.initial_step(r, &y, &k1);
        let mut acc_err = 0.0;
        let mut truncated = false;

        loop {
            if r >= self.opts.r_max {
                truncated = true;
                break;
            }
            if self.stats.accepted + self.stats.rejected > MAX_STEPS {
                return Err(Error::StepUnderflow { r });
            }
            let mut last = false;
            if r + h >= self.opts.r_max {
                h = self.opts.r_max - r;
                last = true;
            }
            if h <= 1e-14 * r.abs().max(1e-300) {
                return Err(Error::StepUnderflow { r });
            }
            let step = dopri_step(&self.f, r, &y, &k1, h, self.rtol);
            if step.err > 1.0 {
                self.stats.rejected += 1;
                let fac = if step.err.is_finite() {
                    (SAFETY * step.err.powf(-0.2)).max(MIN_FACTOR)
                } else {
                    MIN_FACTOR
                };
                h *= fac;
                continue;
            }

            // Accepted candidate: check for sign switches inside (r, r + h].
            let mut r1 = r + h;
            let mut y1 = step.y;
            let mut err_norm = step.err;
            let mut q1 = self.quantities(r1, &y1);
            let crossing = self.first_crossing(r, &y, r1, &y1, &q1);
            let mut landed: Option<usize> = None;
            if let Some((which, rstar)) = crossing {
                let hs = rstar - r;
                if hs > 1e-13 * r.abs().max(1e-300) && rstar < r1 {
                    let (hs, s) = self.refine_landing(r, &y, &k1, hs, h, which);
                    r1 = r + hs;
                    y1 = s.y;
                    err_norm = s.err.min(err_norm);
                    q1 = self.quantities(r1, &y1);
                    self.stats.landings += 1;
                    last = false;
                }
                landed = Some(which);
            }
            self.energy_check(r, &y, r1, &y1)?;
            acc_err += err_norm * self.rtol;
            self.stats.accepted += 1;
            self.stats.accumulated_error = acc_err;
            self.push(r1, y1, q1[2], acc_err);

            if let Some(which) = landed {
                let before = self.signs[which];
                let kind = match which {
                    0 => EventKind::UZero,
                    1 => EventKind::DuZero,
                    _ => EventKind::DduZero,
                };
                // At an extremum the ODE forces u'' to have the sign opposite to u.
                if kind == EventKind::DuZero && y1[0] * q1[2] >= 0.0 {
                    self.events.push(Event {
                        kind: EventKind::Undetermined,
                        radius: r1,
                        side_signs: (before, -before),
                    });
                    return Err(Error::GrazingZero { r: r1 });
                }
                if kind == EventKind::UZero && y1[1].abs() * r1 <= self.opts.tol * 1e-3 * self.recent_max(r1) {
                    self.events.push(Event {
                        kind: EventKind::Undetermined,
                        radius: r1,
                        side_signs: (before, -before),
                    });
                    return Err(Error::GrazingZero { r: r1 });
                }
                let echo = which > 0
                    && self.events.last().is_some_and(|e| e.kind == kind)
                    && self.since_event[which] <= 1e5 * self.rtol * y1[0].abs() / r1.powi(which as i32);
                if echo {
                    // the landed root left a residue on the wrong side and the
                    // quantity never left the noise floor: the pair is one root
                    self.events.pop();
                    self.since_event[which] = f64::INFINITY;
                } else {
                    self.events.push(Event {
                        kind,
                        radius: r1,
                        side_signs: (before, -before),
                    });
                    self.since_event[which] = 0.0;
                }
                self.signs[which] = -before;
                if kind == EventKind::UZero {
                    self.zeros += 1;
                    self.region_max = 0.0;
                    if let StopRule::Zeros(k) = self.opts.stop {
                        if self.zeros >= k {
                            break;
                        }
                    }
                }
            }

            r = r1;
            y = y1;
            k1 = self.f.eval(r, &y);
            if last && landed.is_none() {
                truncated = true;
                break;
            }
            let fac = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= fac;
        }
        let events = self.events;
        Ok((self.r, self.u, self.du, self.ddu, self.err, events, self.stats, truncated))
    }

    /// Corrects a landing step found on the interpolant so that the tracked
    /// quantity vanishes on the actual step, by secant iteration on the step
    /// length. The interpolant root can be off by far more than `tol` on long
    /// steps.
    fn refine_landing(&self, r: f64, y: &State, k1: &State, hs: f64, h_max: f64, which: usize) -> (f64, StepOutcome) {
        let eval = |hh: f64| -> (StepOutcome, f64) {
            let st = dopri_step(&self.f, r, y, k1, hh, self.rtol);
            let q = self.quantities(r + hh, &st.y)[which];
            (st, q)
        };
        let (mut best_st, mut best_q) = eval(hs);
        let mut best_h = hs;
        let scale = |st: &StepOutcome, x: f64| st.y[0].abs().max(st.y[1].abs() * x) / x.powi(which as i32);
        let mut prev = (best_h * (1.0 - 1e-6), eval(best_h * (1.0 - 1e-6)).1);
        for _ in 0..6 {
            if best_q.abs() <= 1e-3 * self.rtol * scale(&best_st, r + best_h) {
                break;
            }
            let dq = (best_q - prev.1) / (best_h - prev.0);
            if dq == 0.0 || !dq.is_finite() {
                break;
            }
            let next = best_h - best_q / dq;
            if !(next > 0.0 && next <= h_max) {
                break;
            }
            let (st, q) = eval(next);
            if q.abs() >= best_q.abs() {
                break;
            }
            prev = (best_h, best_q);
            best_h = next;
            best_st = st;
            best_q = q;
        }
        (best_h, best_st)
    }

    /// Earliest sign switch of `u`, `u'` or `u''` on `(r0, r1]`, located on the
    /// step's Hermite interpolant.
    fn first_crossing(&self, r0: f64, y0: &State, r1: f64, y1: &State, q1: &[f64; 3]) -> Option<(usize, f64)> {
        let dd0 = *self.ddu.last().unwrap();
        let herm = Hermite5::new(r0, r1, [y0[0], y0[1], dd0], [y1[0], y1[1], q1[2]]);
        // u' from its own data: the quintic's derivative goes through
        // differences of u, which cancel on flat tails
        let dherm = Hermite3::new(r0, r1, [y0[1], dd0], [y1[1], q1[2]]);
        let q = |which: usize, x: f64| -> f64 {
            let u = herm.value(x);
            let du = dherm.value(x);
            match which {
                0 => u,
                1 => du,
                _ => second_derivative(self.f.spec, x, u, du, self.f.p),
            }
        };
        const SAMPLES: usize = 4;
        let mut best: Option<(usize, f64)> = None;
        for which in 0..3 {
            let s = self.signs[which];
            if s == 0 {
                continue;
            }
            // first sample where the sign differs from the interval sign
            let mut lo = r0;
            let mut hi = None;
            for j in 1..=SAMPLES {
                let x = if j == SAMPLES { r1 } else { r0 + (r1 - r0) * j as f64 / SAMPLES as f64 };
                let v = if j == SAMPLES { q1[which] } else { q(which, x) };
                if sign(v) == -s {
                    hi = Some(x);
                    break;
                }
                lo = x;
            }
            let Some(mut hi) = hi else { continue };
            if let Some((_, b)) = best {
                if lo >= b {
                    continue;
                }
            }
            for _ in 0..200 {
                if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if sign(q(which, mid)) == -s {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let root = hi;
            if best.is_none_or(|(_, b)| root < b) {
                best = Some((which, root));
            }
        }
        best
    }

    fn energy_check(&mut self, r0: f64, y0: &State, r1: f64, y1: &State) -> Result<()> {
        let dd0 = *self.ddu.last().unwrap();
        let dd1 = second_derivative(self.f.spec, r1, y1[0], y1[1], self.f.p);
        let positive = dd0 + dd1 > 0.0;
        let h0 = energy_functional(self.f.spec, y0[0], y0[1], self.f.p, positive);
        let h1 = energy_functional(self.f.spec, y1[0], y1[1], self.f.p, positive);
        let scale = h0.abs().max(h1.abs());
        if scale > 0.0 {
            let inc = (h1 - h0) / scale;
            if inc > self.stats.max_energy_increase {
                self.stats.max_energy_increase = inc;
            }
            if inc > ENERGY_SLACK * self.opts.tol {
                return Err(Error::Invariant(format!(
                    "energy functional increased by {inc:e} (relative) on [{r0:e}, {r1:e}]"
                )));
            }
        }
        Ok(())
    }
}

/// Grid `(r, u, du, ddu, err)`, events, statistics and the truncation flag.
type RunParts = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<Event>, StepStats, bool);

fn assemble(spec: &OperatorSpec, p: f64, tol: f64, from_center: bool, parts: RunParts) -> RadialProfile {
    let (r, u, du, ddu, err, events, stats, truncated) = parts;
    RadialProfile {
        spec: *spec,
        p,
        tol,
        r,
        u,
        du,
        ddu,
        events,
        truncated,
        from_center,
        stats,
        err,
    }
}

/// Start radius for the origin series.
pub fn series_start_radius(tol: f64) -> f64 {
    tol.powf(0.25).max(1e-6)
}

/// Shoots from the center with `u(0) = u0`, `u'(0) = 0`.
///
/// The first grid point is `r = 0`; integration starts at
/// `r_start = max(tol^{1/4}, 1e-6)` (scaled to the natural length
/// `u0^{-(p-1)/2}`) from the even series through `r^4`.
pub fn integrate_from_center(spec: &OperatorSpec, p: f64, u0: f64, opts: IntegrationOptions) -> Result<RadialProfile> {
    spec.validate()?;
    opts.validate()?;
    if !(u0 > 0.0) || !u0.is_finite() {
        return Err(Error::InvalidArgument(format!("center value must be positive, got {u0}")));
    }
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("exponent must exceed 1, got {p}")));
    }
    let c = spec.concave_coefficient();
    let n = f64::from(spec.dim);
    let length = u0.powf(-(p - 1.0) / 2.0);
    let rs = series_start_radius(opts.tol) * length;
    // u'' + (N-1) u'/r = -u^p / c near the origin
    let a = u0.powf(p) / (2.0 * c * n);
    let b = p * u0.powf(p - 1.0) * a / (4.0 * c * (n + 2.0));
    let y0 = [u0 - a * rs * rs + b * rs.powi(4), -2.0 * a * rs + 4.0 * b * rs.powi(3)];

    let mut integ = Integrator::new(spec, p, opts);
    integ.signs = [1, -1, -1];
    // center point, then the series start
    integ.push(0.0, [u0, 0.0], origin_second_derivative(spec, u0, p), 0.0);
    let parts = integ.run(rs, y0)?;
    Ok(assemble(spec, p, opts.tol, true, parts))
}

/// Exterior problem `u(1) = 0`, `u'(1) = alpha` for the operator selected by
/// `kind`, integrated until the first zero after `r = 1` or `r_max`.
pub fn integrate_exterior(lambda: f64, upper: f64, dim: u32, kind: ExteriorKind, p: f64, alpha: f64, opts: IntegrationOptions) -> Result<RadialProfile> {
    let spec = OperatorSpec::new(lambda, upper, dim, kind.branch())?;
    integrate_exterior_spec(&spec, p, alpha, opts)
}

/// As [`integrate_exterior`], with the branch taken from `spec`.
pub fn integrate_exterior_spec(spec: &OperatorSpec, p: f64, alpha: f64, mut opts: IntegrationOptions) -> Result<RadialProfile> {
    spec.validate()?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("initial slope must be positive, got {alpha}")));
    }
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("exponent must exceed 1, got {p}")));
    }
    if opts.stop == StopRule::RMax {
        opts.stop = StopRule::Zeros(1);
    }
    opts.validate()?;
    if opts.r_max <= 1.0 {
        return Err(Error::InvalidArgument("exterior problems need r_max > 1".into()));
    }
    let mut integ = Integrator::new(spec, p, opts);
    let dd = second_derivative(spec, 1.0, 0.0, alpha, p);
    integ.signs = [1, 1, sign(dd)];
    let parts = integ.run(1.0, [0.0, alpha])?;
    Ok(assemble(spec, p, opts.tol, false, parts))
}

/// Sign changes of `u`, `u'` and the resolver-recomputed `u''` along the grid,
/// refined by bisection on the dense output. Grid values within rounding of
/// zero count as landed events.
pub fn locate_events(profile: &RadialProfile) -> Vec<Event> {
    let n = profile.r.len();
    let mut events = Vec::new();
    let kinds = [EventKind::UZero, EventKind::DuZero, EventKind::DduZero];
    for (which, kind) in kinds.iter().enumerate() {
        let vals: &[f64] = match which {
            0 => &profile.u,
            1 => &profile.du,
            _ => profile.ddu(),
        };
        let scale_at = |i: usize| -> f64 {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            (lo..=hi).map(|j| vals[j].abs()).fold(0.0, f64::max)
        };
        let is_zero = |i: usize| vals[i].abs() <= 1e-13 * scale_at(i);
        let mut last: Option<(usize, i8)> = None;
        let mut start = 0;
        // the exterior start u(1) = 0 and the center u'(0) = 0 are boundary
        // data, not events
        if which <= 1 && n > 0 && vals[0] == 0.0 {
            start = 1;
        }
        for i in start..n {
            if is_zero(i) {
                continue;
            }
            let s = sign(vals[i]);
            if let Some((j, sj)) = last {
                if s != sj {
                    let radius = if i - j >= 2 {
                        // landed zero(s) in between: take the middle one
                        profile.r[(i + j) / 2]
                    } else {
                        bisect_quantity(profile, which, profile.r[j], profile.r[i], sj)
                    };
                    events.push(Event {
                        kind: *kind,
                        radius,
                        side_signs: (sj, s),
                    });
                }
            }
            last = Some((i, s));
        }
    }
    // tangential contacts: an extremum where |u| has a local minimum
    let extrema: Vec<f64> = events.iter().filter(|e| e.kind == EventKind::DuZero).map(|e| e.radius).collect();
    for x in extrema {
        let (u, _) = profile.eval(x);
        let dd = profile.second_derivative_at(x);
        if u * dd >= 0.0 {
            events.push(Event {
                kind: EventKind::Undetermined,
                radius: x,
                side_signs: (sign(u), sign(u)),
            });
        }
    }
    events.sort_by(|a, b| a.radius.partial_cmp(&b.radius).unwrap());
    events
}

fn bisect_quantity(profile: &RadialProfile, which: usize, mut lo: f64, mut hi: f64, s_lo: i8) -> f64 {
    let q = |x: f64| -> f64 {
        let (u, du) = profile.eval(x);
        match which {
            0 => u,
            1 => du,
            _ => profile.second_derivative_at(x),
        }
    };
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if sign(q(mid)) == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `|u|^{p-1}u` re-exported for callers assembling residuals.
pub fn nonlinearity(u: f64, p: f64) -> f64 {
    signed_power(u, p)
}
