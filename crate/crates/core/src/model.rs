//! Problem parameters and the Pucci operator restricted to radial Hessians.
//!
//! A radial function has Hessian eigenvalues `u''(r)` (simple) and `u'(r)/r`
//! (multiplicity `N - 1`). The minus operator weighs positive eigenvalues by
//! `lambda` and negative ones by `Lambda`; the plus operator does the reverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which extremal operator drives the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Minus,
    Plus,
}

impl Branch {
    /// `M+(-X) = -M-(X)`: the negative of a solution for one branch solves the
    /// equation for the other.
    pub fn flipped(self) -> Branch {
        match self {
            Branch::Minus => Branch::Plus,
            Branch::Plus => Branch::Minus,
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Minus => f.write_str("minus"),
            Branch::Plus => f.write_str("plus"),
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minus" | "-" | "m-" => Ok(Branch::Minus),
            "plus" | "+" | "m+" => Ok(Branch::Plus),
            other => Err(Error::InvalidArgument(format!("unknown branch '{other}'"))),
        }
    }
}

/// Ellipticity pair, dimension and operator branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    /// Lower ellipticity constant.
    pub lambda: f64,
    /// Upper ellipticity constant.
    #[serde(rename = "Lambda")]
    pub upper: f64,
    #[serde(rename = "N")]
    pub dim: u32,
    pub branch: Branch,
}

impl OperatorSpec {
    pub fn new(lambda: f64, upper: f64, dim: u32, branch: Branch) -> Result<Self> {
        let spec = OperatorSpec {
            lambda,
            upper,
            dim,
            branch,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shorthand for the Laplacian limit `lambda = Lambda = 1`.
    pub fn laplacian(dim: u32) -> Self {
        OperatorSpec {
            lambda: 1.0,
            upper: 1.0,
            dim,
            branch: Branch::Minus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.upper.is_finite()) {
            return Err(Error::InvalidSpec("ellipticity constants must be finite".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= self.upper) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < lambda <= Lambda, got lambda = {}, Lambda = {}",
                self.lambda, self.upper
            )));
        }
        if self.dim < 3 {
            return Err(Error::InvalidSpec(format!("need N >= 3, got {}", self.dim)));
        }
        for b in [Branch::Minus, Branch::Plus] {
            let n = self.with_branch(b).dimension_like();
            if n <= 2.0 {
                return Err(Error::InvalidSpec(format!(
                    "dimension-like exponent for the {b} branch is {n} <= 2"
                )));
            }
        }
        Ok(())
    }

    pub fn with_branch(&self, branch: Branch) -> Self {
        OperatorSpec { branch, ..*self }
    }

    pub fn is_laplacian(&self) -> bool {
        self.lambda == self.upper
    }

    /// Effective dimension governing decay and critical exponents:
    /// `(Lambda/lambda)(N-1)+1` for the minus branch, `(lambda/Lambda)(N-1)+1`
    /// for the plus branch.
    pub fn dimension_like(&self) -> f64 {
        let n1 = f64::from(self.dim) - 1.0;
        match self.branch {
            Branch::Minus => self.upper / self.lambda * n1 + 1.0,
            Branch::Plus => self.lambda / self.upper * n1 + 1.0,
        }
    }

    /// Coefficient applied to an eigenvalue of the given sign.
    #[inline]
    pub fn weight(&self, positive: bool) -> f64 {
        match (self.branch, positive) {
            (Branch::Minus, true) | (Branch::Plus, false) => self.lambda,
            (Branch::Minus, false) | (Branch::Plus, true) => self.upper,
        }
    }

    /// Coefficient of `u''` when every Hessian eigenvalue is negative, which is
    /// the regime at the center of a positive solution.
    pub fn concave_coefficient(&self) -> f64 {
        self.weight(false)
    }
}

/// `dimension_like` as a free function, for symmetry with the other operations.
pub fn dimension_like(spec: &OperatorSpec) -> f64 {
    spec.dimension_like()
}

/// `(N+2)/(N-2)`.
pub fn sobolev_exponent(dim: u32) -> Result<f64> {
    if dim < 3 {
        return Err(Error::InvalidArgument(format!("Sobolev exponent needs N >= 3, got {dim}")));
    }
    let n = f64::from(dim);
    Ok((n + 2.0) / (n - 2.0))
}

/// `(M+2)/(M-2)` for a real effective dimension `M > 2`.
pub fn sobolev_like(m: f64) -> f64 {
    (m + 2.0) / (m - 2.0)
}

/// `M/(M-2)` for a real effective dimension `M > 2`.
pub fn serrin_like(m: f64) -> f64 {
    m / (m - 2.0)
}

/// `|u|^{p-1} u`, evaluated as `sign(u) |u|^p`.
#[inline]
pub fn signed_power(u: f64, p: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.signum() * u.abs().powf(p)
    }
}

/// Value of the Pucci operator on the radial Hessian with eigenvalues `ddu`
/// (simple) and `du_over_r` (multiplicity `N-1`).
pub fn pucci_radial_value(spec: &OperatorSpec, ddu: f64, du_over_r: f64) -> f64 {
    let n1 = f64::from(spec.dim) - 1.0;
    spec.weight(ddu > 0.0) * ddu + n1 * spec.weight(du_over_r > 0.0) * du_over_r
}

/// Hot-path form of [`resolve_second_derivative`]; `r` must be positive.
#[inline]
pub(crate) fn second_derivative(spec: &OperatorSpec, r: f64, u: f64, du: f64, p: f64) -> f64 {
    let n1 = f64::from(spec.dim) - 1.0;
    let drift = n1 * spec.weight(du > 0.0) * du / r;
    let xi = -signed_power(u, p) - drift;
    xi / spec.weight(xi > 0.0)
}

/// The unique `u''` with `-F(D^2 u) = |u|^{p-1} u` on the radial Hessian.
///
/// `xi = -|u|^{p-1}u - (N-1) w(u'/r) u'/r` carries the sign of `u''`, and
/// `u'' = xi / w(sign xi)`. The map `u'' -> w(u'') u''` is strictly increasing,
/// so the branch choice is consistent.
pub fn resolve_second_derivative(spec: &OperatorSpec, r: f64, u: f64, du: f64, p: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "second derivative needs r > 0 (got {r}); use the origin series at r = 0"
        )));
    }
    Ok(second_derivative(spec, r, u, du, p))
}

/// `u''(0)` of a solution with `u(0) = u0`, `u'(0) = 0`.
pub fn origin_second_derivative(spec: &OperatorSpec, u0: f64, p: f64) -> f64 {
    // At r = 0 all eigenvalues equal u''(0), so w(u''(0)) N u''(0) = -f(u0).
    let f = signed_power(u0, p);
    let n = f64::from(spec.dim);
    -f / (spec.weight(-f > 0.0) * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum USign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DuSign {
    NonNegative,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignRegime {
    pub u_sign: USign,
    pub du_sign: DuSign,
}

impl SignRegime {
    pub fn classify(u: f64, du: f64) -> Self {
        let u_sign = if u > 0.0 {
            USign::Positive
        } else if u < 0.0 {
            USign::Negative
        } else {
            USign::Zero
        };
        let du_sign = if du >= 0.0 {
            DuSign::NonNegative
        } else {
            DuSign::Negative
        };
        SignRegime { u_sign, du_sign }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // pure operator algebra does not need the full validity check
    fn spec(l: f64, u: f64, n: u32, b: Branch) -> OperatorSpec {
        OperatorSpec { lambda: l, upper: u, dim: n, branch: b }
    }

    #[test]
    fn dimension_like_values() {
        assert_eq!(spec(1.0, 2.0, 3, Branch::Minus).dimension_like(), 5.0);
        assert_relative_eq!(spec(1.0, 1.5, 4, Branch::Plus).dimension_like(), 3.0, epsilon = 1e-14);
        for n in 3..8 {
            for b in [Branch::Minus, Branch::Plus] {
                assert_eq!(spec(0.7, 0.7, n, b).dimension_like(), f64::from(n));
            }
        }
    }

    #[test]
    fn sobolev_values() {
        assert_eq!(sobolev_exponent(4).unwrap(), 3.0);
        assert_eq!(sobolev_exponent(3).unwrap(), 5.0);
        assert_eq!(sobolev_exponent(6).unwrap(), 2.0);
        assert!(sobolev_exponent(2).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(OperatorSpec::new(2.0, 1.0, 3, Branch::Minus).is_err());
        assert!(OperatorSpec::new(0.0, 1.0, 3, Branch::Minus).is_err());
        assert!(OperatorSpec::new(1.0, 1.0, 2, Branch::Minus).is_err());
        // N = 3: the plus dimension-like exponent 2 lambda/Lambda + 1 must exceed 2
        assert!(OperatorSpec::new(1.0, 2.0, 3, Branch::Plus).is_err());
        assert!(OperatorSpec::new(1.0, 1.9, 3, Branch::Plus).is_ok());
    }

    #[test]
    fn pucci_values() {
        assert_eq!(pucci_radial_value(&spec(1.0, 2.0, 3, Branch::Minus), -1.0, 1.0), 0.0);
        assert_eq!(pucci_radial_value(&spec(1.0, 1.0, 3, Branch::Minus), 2.0, -1.0), 0.0);
        assert_eq!(pucci_radial_value(&spec(1.0, 2.0, 3, Branch::Plus), -1.0, -1.0), -3.0);
    }

    #[test]
    fn resolver_examples() {
        let lap = spec(1.0, 1.0, 3, Branch::Minus);
        assert_eq!(resolve_second_derivative(&lap, 1.0, 1.0, 0.0, 2.0).unwrap(), -1.0);
        let m = spec(1.0, 2.0, 3, Branch::Minus);
        assert_eq!(resolve_second_derivative(&m, 2.0, 1.0, -1.0, 2.0).unwrap(), 1.0);
        assert_eq!(resolve_second_derivative(&m, 2.0, 1.0, 1.0, 2.0).unwrap(), -1.0);
        assert!(resolve_second_derivative(&m, 0.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn resolver_continuous_across_switch() {
        let m = spec(1.0, 2.5, 4, Branch::Plus);
        // choose du so that xi = 0 exactly at u = 1, then perturb u
        let r = 1.3;
        let p = 2.2;
        let du = -r / (3.0 * m.weight(false));
        for eps in [1e-6, 1e-9] {
            let a = second_derivative(&m, r, 1.0 + eps, du, p);
            let b = second_derivative(&m, r, 1.0 - eps, du, p);
            assert!(a < 0.0 && b > 0.0);
            assert!((a - b).abs() < 5.0 * eps);
        }
    }

    #[test]
    fn origin_curvature_matches_series() {
        let s = spec(1.0, 2.0, 3, Branch::Minus);
        assert_relative_eq!(origin_second_derivative(&s, 1.0, 2.0), -1.0 / (2.0 * 3.0));
        let s = s.with_branch(Branch::Plus);
        assert_relative_eq!(origin_second_derivative(&s, 1.0, 2.0), -1.0 / 3.0);
    }

    #[test]
    fn regime_is_total() {
        assert_eq!(SignRegime::classify(0.0, 0.0).u_sign, USign::Zero);
        assert_eq!(SignRegime::classify(-1.0, -0.0).du_sign, DuSign::NonNegative);
        assert_eq!(SignRegime::classify(f64::NAN, f64::NAN).u_sign, USign::Zero);
    }

    fn any_spec() -> impl Strategy<Value = OperatorSpec> {
        (0.2f64..2.0, 1.0f64..2.0, 3u32..8, prop::bool::ANY).prop_filter_map("valid", |(l, ratio, n, plus)| {
            let b = if plus { Branch::Plus } else { Branch::Minus };
            OperatorSpec::new(l, l * ratio, n, b).ok()
        })
    }

    proptest! {
        #[test]
        fn resolver_is_right_inverse(s in any_spec(), r in 1e-3f64..1e3, u in -5.0f64..5.0, du in -5.0f64..5.0, p in 1.01f64..8.0) {
            let ddu = resolve_second_derivative(&s, r, u, du, p).unwrap();
            let lhs = pucci_radial_value(&s, ddu, du / r);
            let rhs = -signed_power(u, p);
            let scale = 1.0 + rhs.abs() + (f64::from(s.dim) * s.upper * du / r).abs();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }

        #[test]
        fn laplacian_limit(l in 0.2f64..3.0, n in 3u32..9, r in 1e-2f64..1e2, u in -3.0f64..3.0, du in -3.0f64..3.0, p in 1.1f64..6.0, plus in prop::bool::ANY) {
            let b = if plus { Branch::Plus } else { Branch::Minus };
            let s = OperatorSpec::new(l, l, n, b).unwrap();
            let got = resolve_second_derivative(&s, r, u, du, p).unwrap();
            let want = -(f64::from(n) - 1.0) * du / r - signed_power(u, p) / l;
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }

        #[test]
        fn dimension_ordering(s in any_spec()) {
            let nm = s.with_branch(Branch::Minus).dimension_like();
            let np = s.with_branch(Branch::Plus).dimension_like();
            let n = f64::from(s.dim);
            prop_assert!(nm >= n && n >= np);
            prop_assert_eq!(nm == np, s.is_laplacian());
        }
    }
}
