//! Uhlenbeck fluxes `a(ξ) = a_0(|ξ|) ξ` with `a_0(t) = Σ c_i t^{p_i - 2}`.
//!
//! Besides evaluation, this module certifies the structure conditions on `a_0`:
//! the growth pair `(m, M)`, the monotonicity indices `(i_a, s_a)`, and the
//! equivalent eigenvalue form of the same hypotheses (ellipticity bounds with
//! a modulus `ω`, the power envelope of `ω`, and monotonicity of `t a_0(t)`).
//! Infima and suprema over `(0, ∞)` are taken over a logarithmic sample plus
//! the exact endpoint limits of the power sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default regularization floor for `|ξ|` inside `a_0` when some exponent is below 2.
pub const DEFAULT_T_FLOOR: f64 = 1e-12;

/// Relative slack below which a sampled inequality still counts as satisfied.
const REL_TOL: f64 = 1e-10;

fn default_t_floor() -> f64 {
    DEFAULT_T_FLOOR
}

/// One summand `c t^{p-2}` of `a_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTerm {
    pub c: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub terms: Vec<PowerTerm>,
    #[serde(default = "default_t_floor")]
    pub t_floor: f64,
}

impl OperatorSpec {
    pub fn new(terms: Vec<PowerTerm>) -> Result<Self> {
        let op = OperatorSpec {
            terms,
            t_floor: DEFAULT_T_FLOOR,
        };
        op.validate()?;
        Ok(op)
    }

    /// `a_0(t) = t^{p-2}`.
    pub fn p_laplacian(p: f64) -> Result<Self> {
        Self::new(vec![PowerTerm { c: 1.0, p }])
    }

    /// `a_0(t) = t^{p-2} + t^{q-2}`.
    pub fn pq_laplacian(p: f64, q: f64) -> Result<Self> {
        Self::new(vec![PowerTerm { c: 1.0, p }, PowerTerm { c: 1.0, p: q }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::invalid("operator needs at least one power term"));
        }
        for (i, term) in self.terms.iter().enumerate() {
            if !(term.c.is_finite() && term.c > 0.0) {
                return Err(Error::invalid(format!(
                    "term {i}: coefficient must be finite and > 0, got {}",
                    term.c
                )));
            }
            if !(term.p.is_finite() && term.p > 1.0) {
                return Err(Error::invalid(format!(
                    "term {i}: exponent must be finite and > 1, got {}",
                    term.p
                )));
            }
        }
        if !(self.t_floor.is_finite() && self.t_floor >= 0.0) {
            return Err(Error::invalid("t_floor must be finite and >= 0"));
        }
        Ok(())
    }

    /// Declared growth exponent: the largest `p_i`.
    pub fn p(&self) -> f64 {
        self.terms.iter().map(|t| t.p).fold(f64::MIN, f64::max)
    }

    pub fn p_min(&self) -> f64 {
        self.terms.iter().map(|t| t.p).fold(f64::MAX, f64::min)
    }

    fn has_singular_term(&self) -> bool {
        self.terms.iter().any(|t| t.p < 2.0)
    }

    /// Sum of coefficients of the terms carrying the top exponent.
    fn leading_coefficient(&self) -> f64 {
        let p = self.p();
        self.terms.iter().filter(|t| t.p == p).map(|t| t.c).sum()
    }

    fn lowest_coefficient(&self) -> f64 {
        let q = self.p_min();
        self.terms.iter().filter(|t| t.p == q).map(|t| t.c).sum()
    }

    pub fn a0(&self, t: f64) -> f64 {
        self.terms.iter().map(|s| s.c * t.powf(s.p - 2.0)).sum()
    }

    pub fn a0_prime(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| s.c * (s.p - 2.0) * t.powf(s.p - 3.0))
            .sum()
    }

    /// `t a_0(t)`, the scalar flux magnitude.
    pub fn t_a0(&self, t: f64) -> f64 {
        self.terms.iter().map(|s| s.c * t.powf(s.p - 1.0)).sum()
    }

    /// `t a_0'(t) / a_0(t)`, evaluated as a weighted mean of `p_i - 2` so that
    /// extreme `t` does not overflow.
    pub fn index_ratio(&self, t: f64) -> f64 {
        let lt = t.ln();
        let logs: Vec<f64> = self
            .terms
            .iter()
            .map(|s| s.c.ln() + (s.p - 2.0) * lt)
            .collect();
        let top = logs.iter().cloned().fold(f64::MIN, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, l) in self.terms.iter().zip(&logs) {
            let w = (l - top).exp();
            num += w * (s.p - 2.0);
            den += w;
        }
        num / den
    }

    /// `λ_1 = t a_0'(t) + a_0(t)`, the eigenvalue along `ξ`.
    pub fn lambda1(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| s.c * (s.p - 1.0) * t.powf(s.p - 2.0))
            .sum()
    }

    /// `a_0` with the gradient floor applied when a term is singular at 0.
    pub fn a0_regularized(&self, t: f64) -> f64 {
        if self.has_singular_term() {
            self.a0(t.max(self.t_floor))
        } else {
            self.a0(t)
        }
    }

    /// `λ_1` with the same floor as [`Self::a0_regularized`].
    pub fn lambda1_regularized(&self, t: f64) -> f64 {
        if self.has_singular_term() {
            self.lambda1(t.max(self.t_floor))
        } else {
            self.lambda1(t)
        }
    }

    /// One-dimensional flux `a_0(|d|) d` used by the radial scheme.
    pub fn flux_1d(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 0.0;
        }
        self.a0_regularized(d.abs()) * d
    }
}

/// `a(ξ) = a_0(|ξ|) ξ`; the zero vector maps to zero.
pub fn eval_flux(op: &OperatorSpec, xi: &[f64]) -> Result<Vec<f64>> {
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("flux argument must be finite"));
    }
    let t = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t == 0.0 {
        return Ok(vec![0.0; xi.len()]);
    }
    let a0 = op.a0_regularized(t);
    Ok(xi.iter().map(|v| a0 * v).collect())
}

/// Eigenvalues `(λ_1, λ_2)` of the Jacobian of `a` at any `ξ` with `|ξ| = t`.
pub fn jacobian_eigs(op: &OperatorSpec, t: f64) -> Result<(f64, f64)> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!("eigenvalues need t > 0, got {t}")));
    }
    Ok((op.lambda1(t), op.a0(t)))
}

/// `A(t) = ∫_0^t s a_0(s) ds = Σ c_i t^{p_i} / p_i`.
pub fn energy_primitive(op: &OperatorSpec, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("energy primitive needs t >= 0, got {t}")));
    }
    Ok(op.terms.iter().map(|s| s.c * t.powf(s.p) / s.p).sum())
}

/// `n` logarithmically spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// The sampling grid used by default: 4096 points on `[1e-6, 1e6]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-6, 1e6, 4096)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("sampling grid is empty"));
    }
    if grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid("sampling grid must contain finite positive points"));
    }
    Ok(())
}

/// Sampled `(i_a, s_a)`, completed with the exact limits `p_min - 2` (t → 0)
/// and `p_max - 2` (t → ∞).
pub fn monotonicity_indices(op: &OperatorSpec, grid: &[f64]) -> Result<(f64, f64)> {
    check_grid(grid)?;
    let mut lo = (op.p_min() - 2.0).min(op.p() - 2.0);
    let mut hi = (op.p_min() - 2.0).max(op.p() - 2.0);
    for &t in grid {
        let r = op.index_ratio(t);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub passed: bool,
}

/// Tightest sampled pair with `m t^{p-1} <= t a_0(t) <= M (t^{p-1} + 1)`.
pub fn verify_growth(op: &OperatorSpec, grid: &[f64]) -> Result<GrowthReport> {
    check_grid(grid)?;
    let p = op.p();
    // t → ∞ limit of both ratios is the leading coefficient; t → 0 gives
    // +∞ for the lower ratio (if lower exponents exist) and 0 for the upper.
    let lead = op.leading_coefficient();
    let mut m = if op.p_min() < p { lead } else { lead.min(op.lowest_coefficient()) };
    let mut big_m: f64 = lead;
    for &t in grid {
        let ta0 = op.t_a0(t);
        m = m.min(ta0 / t.powf(p - 1.0));
        big_m = big_m.max(ta0 / (t.powf(p - 1.0) + 1.0));
    }
    Ok(GrowthReport {
        m,
        big_m,
        passed: m > 0.0 && big_m.is_finite(),
    })
}

/// Outcome of one sampled inequality: the smallest slack seen and where.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub passed: bool,
    /// `(t, slack)` at the worst sample; negative slack means violation.
    pub worst: (f64, f64),
}

impl ConditionCheck {
    fn new() -> Self {
        ConditionCheck {
            passed: true,
            worst: (f64::NAN, f64::INFINITY),
        }
    }

    fn failed(t: f64, slack: f64) -> Self {
        ConditionCheck {
            passed: false,
            worst: (t, slack),
        }
    }

    fn record(&mut self, t: f64, slack: f64) {
        if slack < self.worst.1 || self.worst.0.is_nan() {
            self.worst = (t, slack);
        }
        if !(slack >= -REL_TOL) {
            self.passed = false;
        }
    }
}

/// Relative slack of `lhs <= rhs`.
fn slack(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    (rhs - lhs) / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixChecks {
    /// `m t^{p-1} <= t a_0 <= M (t^{p-1} + 1)`.
    pub growth: ConditionCheck,
    /// `i_a > -1` and `s_a < ∞`.
    pub ellipticity: ConditionCheck,
    /// `C_1 <= t ω'/ω <= C_2`.
    pub omega_log_derivative: ConditionCheck,
    /// `ω/t <= λ_min`.
    pub lower_ellipticity: ConditionCheck,
    /// `λ_max <= Λ ω/t`.
    pub upper_bound: ConditionCheck,
    /// `1/Λ <= λ_1/λ_2 <= Λ`.
    pub eigen_pinching: ConditionCheck,
    /// `ω(1) min(t^C1, t^C2) <= ω(t) <= ω(1) max(t^C1, t^C2)` (log form).
    pub power_envelope: ConditionCheck,
    /// `t a_0(t)` strictly increasing.
    pub strict_monotonicity: ConditionCheck,
    /// `t a_0(t) → 0` and `lim t a_0'/a_0 > -1` as `t → 0+`.
    pub limit_at_zero: ConditionCheck,
    /// `C_3 t^{p-1} <= ω <= C_4 (t^{p-1} + 1)`.
    pub omega_growth: ConditionCheck,
    /// Reverse direction: eigenvalue bounds give back `1/Λ - 1 <= t a_0'/a_0 <= Λ - 1`.
    pub recovers_indices: ConditionCheck,
    /// Reverse direction: `C_3 t^{p-1} <= t a_0 <= Λ C_4 (t^{p-1} + 1)`.
    pub recovers_growth: ConditionCheck,
}

impl AppendixChecks {
    fn all_failed() -> Self {
        let f = ConditionCheck::failed(f64::NAN, f64::NEG_INFINITY);
        AppendixChecks {
            growth: f,
            ellipticity: f,
            omega_log_derivative: f,
            lower_ellipticity: f,
            upper_bound: f,
            eigen_pinching: f,
            power_envelope: f,
            strict_monotonicity: f,
            limit_at_zero: f,
            omega_growth: f,
            recovers_indices: f,
            recovers_growth: f,
        }
    }

    fn iter(&self) -> impl Iterator<Item = &ConditionCheck> {
        [
            &self.growth,
            &self.ellipticity,
            &self.omega_log_derivative,
            &self.lower_ellipticity,
            &self.upper_bound,
            &self.eigen_pinching,
            &self.power_envelope,
            &self.strict_monotonicity,
            &self.limit_at_zero,
            &self.omega_growth,
            &self.recovers_indices,
            &self.recovers_growth,
        ]
        .into_iter()
    }

    pub fn all_passed(&self) -> bool {
        self.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub p: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub i_a: f64,
    pub s_a: f64,
    pub k_scale: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    pub checks: AppendixChecks,
    pub passed: bool,
}

/// Builds `ω(t) = k t a_0(t)` with `k = min{1, i_a + 1}` and checks the
/// eigenvalue form of the structure conditions in both directions.
///
/// Failures are reported in the returned flags, never as errors; only a bad
/// grid is an error.
pub fn verify_appendix_equivalence(op: &OperatorSpec, grid: &[f64]) -> Result<ConditionReport> {
    check_grid(grid)?;
    let p = op.p();
    let (i_a, s_a) = monotonicity_indices(op, grid)?;
    let growth = verify_growth(op, grid)?;
    let k = (i_a + 1.0).min(1.0);
    let lambda = (s_a + 1.0).max(1.0) / k;
    let (c1, c2, c3, c4) = (i_a + 1.0, s_a + 1.0, k * growth.m, k * growth.big_m);

    if !(i_a > -1.0) || !(k > 0.0) {
        let mut checks = AppendixChecks::all_failed();
        checks.ellipticity = ConditionCheck::failed(f64::NAN, i_a + 1.0);
        return Ok(ConditionReport {
            p,
            m: growth.m,
            big_m: growth.big_m,
            i_a,
            s_a,
            k_scale: k,
            lambda,
            c1,
            c2,
            c3,
            c4,
            checks,
            passed: false,
        });
    }

    let omega = |t: f64| k * op.t_a0(t);
    let ln_omega1 = omega(1.0).ln();

    let mut checks = AppendixChecks {
        growth: ConditionCheck::new(),
        ellipticity: ConditionCheck::new(),
        omega_log_derivative: ConditionCheck::new(),
        lower_ellipticity: ConditionCheck::new(),
        upper_bound: ConditionCheck::new(),
        eigen_pinching: ConditionCheck::new(),
        power_envelope: ConditionCheck::new(),
        strict_monotonicity: ConditionCheck::new(),
        limit_at_zero: ConditionCheck::new(),
        omega_growth: ConditionCheck::new(),
        recovers_indices: ConditionCheck::new(),
        recovers_growth: ConditionCheck::new(),
    };
    checks.ellipticity.record(f64::NAN, i_a + 1.0);
    if !s_a.is_finite() {
        checks.ellipticity.record(f64::NAN, f64::NEG_INFINITY);
    }

    let mut prev_ta0: Option<(f64, f64)> = None;
    for &t in grid {
        let ta0 = op.t_a0(t);
        let tp = t.powf(p - 1.0);
        checks.growth.record(t, slack(growth.m * tp, ta0));
        checks.growth.record(t, slack(ta0, growth.big_m * (tp + 1.0)));

        let rho = op.index_ratio(t);
        checks.omega_log_derivative.record(t, slack(c1, rho + 1.0));
        checks.omega_log_derivative.record(t, slack(rho + 1.0, c2));

        let (l1, l2) = (op.lambda1(t), op.a0(t));
        let (lmin, lmax) = (l1.min(l2), l1.max(l2));
        let omega_over_t = k * op.a0(t);
        checks.lower_ellipticity.record(t, slack(omega_over_t, lmin));
        checks.upper_bound.record(t, slack(lmax, lambda * omega_over_t));

        // λ_1/λ_2 = 1 + ρ avoids overflow of the separate eigenvalues.
        let ratio = 1.0 + rho;
        checks.eigen_pinching.record(t, slack(1.0 / lambda, ratio));
        checks.eigen_pinching.record(t, slack(ratio, lambda));

        let lt = t.ln();
        let ln_rel = omega(t).ln() - ln_omega1;
        let (e_lo, e_hi) = ((c1 * lt).min(c2 * lt), (c1 * lt).max(c2 * lt));
        let env_scale = 1.0 + lt.abs();
        checks.power_envelope.record(t, (ln_rel - e_lo) / env_scale);
        checks.power_envelope.record(t, (e_hi - ln_rel) / env_scale);

        checks.strict_monotonicity.record(t, if l1 > 0.0 { 1.0 } else { -1.0 });
        if let Some((pt, pv)) = prev_ta0 {
            if !(ta0 > pv) {
                checks.strict_monotonicity.record(pt, -1.0);
            }
        }
        prev_ta0 = Some((t, ta0));

        let w = omega(t);
        checks.omega_growth.record(t, slack(c3 * tp, w));
        checks.omega_growth.record(t, slack(w, c4 * (tp + 1.0)));

        checks.recovers_indices.record(t, slack(1.0 / lambda - 1.0, rho));
        checks.recovers_indices.record(t, slack(rho, lambda - 1.0));
        checks.recovers_growth.record(t, slack(c3 * tp, ta0));
        checks.recovers_growth.record(t, slack(ta0, lambda * c4 * (tp + 1.0)));
    }

    // Exact limits at 0+: every exponent exceeds 1, so t a_0(t) → 0, and the
    // index ratio tends to p_min - 2.
    let t0 = grid.iter().cloned().fold(f64::MAX, f64::min);
    let limit_ok = op.p_min() > 1.0;
    checks
        .limit_at_zero
        .record(t0, if limit_ok { 1.0 } else { -1.0 });
    checks.limit_at_zero.record(t0, (op.p_min() - 2.0) + 1.0);

    let passed = growth.passed && checks.all_passed();
    Ok(ConditionReport {
        p,
        m: growth.m,
        big_m: growth.big_m,
        i_a,
        s_a,
        k_scale: k,
        lambda,
        c1,
        c2,
        c3,
        c4,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn op(terms: &[(f64, f64)]) -> OperatorSpec {
        OperatorSpec::new(terms.iter().map(|&(c, p)| PowerTerm { c, p }).collect()).unwrap()
    }

    #[test]
    fn flux_examples() {
        let lap = OperatorSpec::p_laplacian(2.0).unwrap();
        assert_eq!(eval_flux(&lap, &[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);

        let p4 = OperatorSpec::p_laplacian(4.0).unwrap();
        assert_relative_eq!(eval_flux(&p4, &[1.0, 0.0]).unwrap()[0], 1.0);
        assert_relative_eq!(eval_flux(&p4, &[2.0, 0.0]).unwrap()[0], 8.0);

        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        assert_relative_eq!(eval_flux(&pq, &[1.0, 0.0]).unwrap()[0], 2.0);
    }

    #[test]
    fn flux_zero_and_nonfinite() {
        let singular = OperatorSpec::p_laplacian(1.5).unwrap();
        assert_eq!(eval_flux(&singular, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(eval_flux(&singular, &[f64::NAN, 0.0]).is_err());
        assert!(eval_flux(&singular, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn eigen_examples() {
        let lap = OperatorSpec::p_laplacian(2.0).unwrap();
        assert_eq!(jacobian_eigs(&lap, 0.3).unwrap(), (1.0, 1.0));
        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        let (l1, l2) = jacobian_eigs(&pq, 1.0).unwrap();
        assert_relative_eq!(l1, 3.0);
        assert_relative_eq!(l2, 2.0);
        let p4 = OperatorSpec::p_laplacian(4.0).unwrap();
        let (l1, l2) = jacobian_eigs(&p4, 2.0).unwrap();
        assert_relative_eq!(l1, 12.0);
        assert_relative_eq!(l2, 4.0);
        assert!(jacobian_eigs(&p4, 0.0).is_err());
        assert!(jacobian_eigs(&p4, -1.0).is_err());
    }

    #[test]
    fn index_examples() {
        let g = default_grid();
        let p3 = OperatorSpec::p_laplacian(3.0).unwrap();
        let (i, s) = monotonicity_indices(&p3, &g).unwrap();
        assert_relative_eq!(i, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);

        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        let (i, s) = monotonicity_indices(&pq, &g).unwrap();
        assert_relative_eq!(i, 0.0, epsilon = 1e-6);
        assert_relative_eq!(s, 1.0, epsilon = 1e-6);

        let q = op(&[(2.0, 4.0), (1.0, 2.0)]);
        let (i, s) = monotonicity_indices(&q, &g).unwrap();
        assert_relative_eq!(i, 0.0, epsilon = 1e-6);
        assert_relative_eq!(s, 2.0, epsilon = 1e-6);

        assert!(monotonicity_indices(&q, &[]).is_err());
    }

    #[test]
    fn index_ratio_matches_direct_formula() {
        let q = op(&[(2.0, 4.0), (1.0, 2.0), (0.5, 1.5)]);
        for &t in &[1e-3, 0.1, 1.0, 7.0, 300.0] {
            let direct = t * q.a0_prime(t) / q.a0(t);
            assert_relative_eq!(q.index_ratio(t), direct, max_relative = 1e-12);
        }
    }

    /// Dense brute-force sup/inf over a much finer grid than the default.
    fn brute_sup_inf(f: impl Fn(f64) -> f64) -> (f64, f64) {
        let g = log_grid(1e-8, 1e8, 400_001);
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for t in g {
            let v = f(t);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    #[test]
    fn growth_examples() {
        let g = default_grid();
        let p3 = OperatorSpec::p_laplacian(3.0).unwrap();
        let r = verify_growth(&p3, &g).unwrap();
        assert_relative_eq!(r.m, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.big_m, 1.0, epsilon = 1e-12);
        assert!(r.passed);

        // a_0 = t + 1: sup of (t^2+t)/(t^2+1) at t = 1 + sqrt 2 is (1 + sqrt 2)/2.
        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        let r = verify_growth(&pq, &g).unwrap();
        let (_, sup) = brute_sup_inf(|t| (t * t + t) / (t * t + 1.0));
        assert_relative_eq!(sup, (1.0 + 2f64.sqrt()) / 2.0, epsilon = 1e-9);
        assert_relative_eq!(r.m, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.big_m, sup, epsilon = 1e-5);

        // a_0 = 2t^2 + 1, p = 4: (2t^3+t)/t^3 >= 2, and (2t^3+t)/(t^3+1)
        // overshoots 2 near t ≈ 3.08.
        let q = op(&[(2.0, 4.0), (1.0, 2.0)]);
        let r = verify_growth(&q, &g).unwrap();
        let (inf, _) = brute_sup_inf(|t| (2.0 * t.powi(3) + t) / t.powi(3));
        let (_, sup) = brute_sup_inf(|t| (2.0 * t.powi(3) + t) / (t.powi(3) + 1.0));
        assert_relative_eq!(r.m, 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.m, inf, epsilon = 1e-9);
        assert_relative_eq!(r.big_m, sup, epsilon = 1e-5);
        assert!(r.big_m > 2.03 && r.big_m < 2.04);
    }

    #[test]
    fn energy_examples() {
        let lap = OperatorSpec::p_laplacian(2.0).unwrap();
        assert_relative_eq!(energy_primitive(&lap, 2.0).unwrap(), 2.0);
        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        assert_relative_eq!(energy_primitive(&pq, 1.0).unwrap(), 5.0 / 6.0);
        let p4 = OperatorSpec::p_laplacian(4.0).unwrap();
        assert_relative_eq!(energy_primitive(&p4, 3.0).unwrap(), 81.0 / 4.0);
        assert_eq!(energy_primitive(&p4, 0.0).unwrap(), 0.0);
        assert!(energy_primitive(&p4, -1e-3).is_err());
    }

    #[test]
    fn appendix_examples() {
        let g = default_grid();
        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        let r = verify_appendix_equivalence(&pq, &g).unwrap();
        assert!(r.passed, "{r:#?}");
        assert_relative_eq!(r.k_scale, 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.lambda, 2.0, epsilon = 1e-6);

        let p3 = OperatorSpec::p_laplacian(3.0).unwrap();
        let r = verify_appendix_equivalence(&p3, &g).unwrap();
        assert!(r.passed);
        assert_relative_eq!(r.c1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.c2, 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.lambda, 2.0, epsilon = 1e-12);
        // ω(t) = t^2 sits exactly on its envelope.
        assert!(r.checks.power_envelope.worst.1.abs() < 1e-12);

        let sing = OperatorSpec::p_laplacian(1.5).unwrap();
        let r = verify_appendix_equivalence(&sing, &g).unwrap();
        assert!(r.passed, "{r:#?}");
        assert_relative_eq!(r.k_scale, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.lambda, 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.k_scale * sing.t_a0(4.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn report_serializes_named_constants() {
        let pq = op(&[(1.0, 3.0), (1.0, 2.0)]);
        let r = verify_appendix_equivalence(&pq, &default_grid()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["m", "M", "i_a", "s_a", "k_scale", "Lambda", "C1", "C2", "C3", "C4"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["checks"]["eigen_pinching"]["passed"].as_bool().unwrap());
    }

    #[test]
    fn spec_json_roundtrip_and_rejection() {
        let s = r#"{"terms":[{"c":1.0,"p":3.0},{"c":1.0,"p":2.0}],"t_floor":1e-12}"#;
        let o: OperatorSpec = serde_json::from_str(s).unwrap();
        assert!(o.validate().is_ok());
        assert_eq!(o.p(), 3.0);
        let bad: OperatorSpec =
            serde_json::from_str(r#"{"terms":[{"c":-1.0,"p":3.0}]}"#).unwrap();
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<OperatorSpec>(r#"{"terms":[],"extra":1}"#).is_err());
    }
}
