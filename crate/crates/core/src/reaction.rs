//! Singular reaction `f`, convection `g`, their exponent hypotheses, and the
//! compactly supported sub-reaction with its `δ`-truncations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, sphere_area};

/// Radial weight profile of `|x|`.
///
/// The power form `c (1 + |x|)^{-a}` restricted to `|x| < cutoff` has exact
/// Lebesgue norms; the table form is piecewise linear in `|x|` and vanishes
/// beyond its last abscissa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Power(PowerProfile),
    Table(TableProfile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    pub c: f64,
    #[serde(default)]
    pub a: f64,
    /// Support radius; `None` means the whole space.
    #[serde(default)]
    pub cutoff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableProfile {
    pub table: Vec<[f64; 2]>,
}

impl Profile {
    /// `c χ_{B_R}`.
    pub fn indicator(c: f64, radius: f64) -> Self {
        Profile::Power(PowerProfile {
            c,
            a: 0.0,
            cutoff: Some(radius),
        })
    }

    pub fn zero() -> Self {
        Profile::indicator(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Profile::Power(p) => {
                if !(p.c.is_finite() && p.c >= 0.0) {
                    return Err(Error::invalid(format!("profile coefficient must be >= 0, got {}", p.c)));
                }
                if !(p.a.is_finite() && p.a >= 0.0) {
                    return Err(Error::invalid(format!("profile decay must be >= 0, got {}", p.a)));
                }
                if let Some(rc) = p.cutoff {
                    if !(rc.is_finite() && rc > 0.0) {
                        return Err(Error::invalid(format!("profile cutoff must be > 0, got {rc}")));
                    }
                }
                Ok(())
            }
            Profile::Table(t) => {
                if t.table.is_empty() {
                    return Err(Error::invalid("profile table is empty"));
                }
                let mut prev = -1.0;
                for &[r, v] in &t.table {
                    if !(r.is_finite() && r >= 0.0 && r > prev) {
                        return Err(Error::invalid("profile table radii must increase from >= 0"));
                    }
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::invalid("profile table values must be finite and >= 0"));
                    }
                    prev = r;
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            Profile::Power(p) => match p.cutoff {
                Some(rc) if r >= rc => 0.0,
                _ => p.c * (1.0 + r).powf(-p.a),
            },
            Profile::Table(t) => {
                let tab = &t.table;
                if r <= tab[0][0] {
                    return tab[0][1];
                }
                let last = tab[tab.len() - 1];
                if r > last[0] {
                    return 0.0;
                }
                let i = tab.partition_point(|e| e[0] < r);
                let [r0, v0] = tab[i - 1];
                let [r1, v1] = tab[i];
                v0 + (v1 - v0) * (r - r0) / (r1 - r0)
            }
        }
    }

    /// Mean of the profile over the shell `lo ≤ |x| ≤ hi` in `R^N`.
    ///
    /// Exact up to quadrature error on each smooth piece; jumps at the cutoff
    /// and table knots are split out.
    pub fn shell_average(&self, lo: f64, hi: f64, n_dim: usize) -> f64 {
        if !(hi > lo) {
            return self.value(lo);
        }
        let mut cuts = vec![lo];
        let knots: Vec<f64> = match self {
            Profile::Power(p) => p.cutoff.into_iter().collect(),
            Profile::Table(t) => t.table.iter().map(|e| e[0]).collect(),
        };
        cuts.extend(knots.into_iter().filter(|k| *k > lo && *k < hi));
        cuts.push(hi);
        let nd = n_dim as i32;
        let mut num = 0.0;
        for w in cuts.windows(2) {
            // Evaluate strictly inside each piece so one-sided limits are used.
            num += integrate(|r| r.powi(nd - 1) * self.value(r), w[0], w[1], 2, 8);
        }
        let den = (hi.powi(nd) - lo.powi(nd)) / n_dim as f64;
        num / den
    }

    /// Radius beyond which the profile vanishes (`∞` if never).
    pub fn support_radius(&self) -> f64 {
        match self {
            Profile::Power(p) if p.c == 0.0 => 0.0,
            Profile::Power(p) => p.cutoff.unwrap_or(f64::INFINITY),
            Profile::Table(t) => t.table[t.table.len() - 1][0],
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Profile::Power(p) => p.c,
            Profile::Table(t) => t.table.iter().map(|e| e[1]).fold(0.0, f64::max),
        }
    }

    /// `‖·‖_{L^q(B_ρ)}` in `R^N`; `rho = None` integrates over `R^N`.
    /// Returns `∞` when the integral diverges.
    pub fn lq_norm(&self, q: f64, n_dim: usize, rho: Option<f64>) -> f64 {
        let limit = self.support_radius().min(rho.unwrap_or(f64::INFINITY));
        if limit <= 0.0 || self.sup() == 0.0 {
            return 0.0;
        }
        let integral = match self {
            Profile::Power(p) => power_radial_moment(p.a * q, n_dim, limit) * p.c.powf(q),
            Profile::Table(t) => {
                let tab = &t.table;
                let nd = n_dim as i32;
                let f = |r: f64| r.powi(nd - 1) * self.value(r).powf(q);
                let mut total = 0.0;
                // constant head on [0, r_0]
                if tab[0][0] > 0.0 {
                    let hi = tab[0][0].min(limit);
                    total += tab[0][1].powf(q) * hi.powi(nd) / nd as f64;
                }
                for w in tab.windows(2) {
                    let (a, b) = (w[0][0], w[1][0].min(limit));
                    if a >= limit {
                        break;
                    }
                    total += integrate(f, a, b, 4, 10);
                }
                total
            }
        };
        if !integral.is_finite() {
            return f64::INFINITY;
        }
        (sphere_area(n_dim) * integral).powf(1.0 / q)
    }
}

/// `∫_0^L r^{N-1} (1+r)^{-e} dr`, exact; `∞` if `L = ∞` and `e <= N`.
fn power_radial_moment(e: f64, n_dim: usize, limit: f64) -> f64 {
    let nd = n_dim as i32;
    if e == 0.0 {
        return if limit.is_finite() { limit.powi(nd) / nd as f64 } else { f64::INFINITY };
    }
    if !limit.is_finite() && e <= n_dim as f64 {
        return f64::INFINITY;
    }
    // r^{N-1} = ((1+r) - 1)^{N-1}, expanded binomially.
    let top = 1.0 + limit;
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 0..n_dim {
        if k > 0 {
            binom = binom * (n_dim - k) as f64 / k as f64;
        }
        let sign = if (n_dim - 1 - k) % 2 == 0 { 1.0 } else { -1.0 };
        let ex = k as f64 - e + 1.0;
        let piece = if ex == 0.0 {
            top.ln()
        } else if top.is_finite() {
            (top.powf(ex) - 1.0) / ex
        } else {
            -1.0 / ex
        };
        total += sign * binom * piece;
    }
    total
}

/// Exponent data derived from `(p, N, γ, r, η, θ)`.
///
/// For `p >= N` the problem is posed on bounded balls only; `p^*` is then
/// taken as `∞` and `(p^*)' = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentData {
    pub p: f64,
    pub n_dim: usize,
    pub gamma: f64,
    pub r: f64,
    pub eta: f64,
    pub theta: f64,
    pub p_star: f64,
    pub p_star_conj: f64,
    pub zeta: f64,
    pub lambda_interp: f64,
    pub mu_interp: f64,
    pub s_exp: f64,
    pub bounded_only: bool,
}

impl ExponentData {
    /// Exponent `ζ_P` with `1/ζ_P = 1 - (1 + r)/p`, used when the Sobolev
    /// embedding is replaced by Poincaré (`p >= N`).
    pub fn zeta_poincare(&self) -> f64 {
        1.0 / (1.0 - (1.0 + self.r) / self.p)
    }

    /// Sharp constant of `‖u‖_{p^*} <= c_S ‖∇u‖_p` (only for `p < N`).
    pub fn sobolev_constant(&self) -> Option<f64> {
        if self.bounded_only {
            return None;
        }
        let (p, n) = (self.p, self.n_dim as f64);
        let g = libm::tgamma;
        let ratio = g(1.0 + n / 2.0) * g(n) / (g(n / p) * g(1.0 + n - n / p));
        Some(
            std::f64::consts::PI.powf(-0.5)
                * n.powf(-1.0 / p)
                * ((p - 1.0) / (n - p)).powf(1.0 - 1.0 / p)
                * ratio.powf(1.0 / n),
        )
    }
}

pub fn validate_exponents(
    p: f64,
    n_dim: usize,
    gamma: f64,
    r: f64,
    eta: f64,
    theta: f64,
) -> Result<ExponentData> {
    if n_dim < 2 {
        return Err(Error::Inadmissible(format!("dimension must be >= 2, got {n_dim}")));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::Inadmissible(format!("p must exceed 1, got {p}")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Inadmissible(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Inadmissible(format!("r must be >= 0, got {r}")));
    }
    if r >= p - 1.0 {
        return Err(Error::Inadmissible(format!("r < p - 1 violated: r = {r}, p - 1 = {}", p - 1.0)));
    }
    let n = n_dim as f64;
    let bounded_only = p >= n;
    let (p_star, p_star_conj) = if bounded_only {
        (f64::INFINITY, 1.0)
    } else {
        let ps = n * p / (n - p);
        (ps, ps / (ps - 1.0))
    };
    let zeta = 1.0 / (1.0 / p_star_conj - r / p);
    if !(eta.is_finite() && eta > p_star_conj) {
        return Err(Error::Inadmissible(format!(
            "eta > (p*)' violated: eta = {eta}, (p*)' = {p_star_conj}"
        )));
    }
    if !(theta.is_finite() && theta > zeta) {
        return Err(Error::Inadmissible(format!(
            "theta > zeta violated: theta = {theta}, zeta = {zeta}"
        )));
    }
    let lambda_interp = (eta - p_star_conj) / (eta - 1.0);
    let mu_interp = (theta - zeta) / (theta - 1.0);

    let lower = (1.0 / eta).max(1.0 / theta + r / p);
    let inv_s_conj = 0.5 * (lower + 1.0);
    let mut s_exp = 1.0 / (1.0 - inv_s_conj);
    if s_exp >= p_star {
        s_exp = p_star * (1.0 - 1e-12);
    }
    Ok(ExponentData {
        p,
        n_dim,
        gamma,
        r,
        eta,
        theta,
        p_star,
        p_star_conj,
        zeta,
        lambda_interp,
        mu_interp,
        s_exp,
        bounded_only,
    })
}

/// Hölder interpolation `‖h‖_q <= (‖h‖_1^λ ‖h‖_η^{η(1-λ)})^{1/q}` with
/// `q = (p^*)'` and `λ = (η - q)/(η - 1)`; returns `(lhs, rhs)`.
pub fn interpolation_check(h: &Profile, ex: &ExponentData, rho: Option<f64>) -> (f64, f64) {
    let q = ex.p_star_conj;
    let lam = ex.lambda_interp;
    let lhs = h.lq_norm(q, ex.n_dim, rho);
    let l1 = h.lq_norm(1.0, ex.n_dim, rho);
    let le = h.lq_norm(ex.eta, ex.n_dim, rho);
    let rhs = (l1.powf(lam) * le.powf(ex.eta * (1.0 - lam))).powf(1.0 / q);
    (lhs, rhs)
}

/// Shape of `f` under the envelope `h(x) s^{-γ}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FForm {
    /// `h s^{-γ}`.
    #[default]
    Power,
    /// `h s^{-γ} (1 - κ sin²(ν s))`, `0 <= κ < 1`.
    Oscillating { kappa: f64, nu: f64 },
}

/// Shape of `g` under the envelope `k(x) |ξ|^r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GForm {
    #[default]
    Power,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSpec {
    pub h: Profile,
    pub weight_k: Profile,
    #[serde(default)]
    pub f_form: FForm,
    #[serde(default)]
    pub g_form: GForm,
    pub gamma: f64,
    pub r: f64,
    pub eta: f64,
    pub theta: f64,
    pub beta: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl ReactionSpec {
    /// Checks parameter ranges, profiles, and `f > β` on `B_σ × (0, α)`.
    pub fn validate(&self) -> Result<()> {
        self.h.validate()?;
        self.weight_k.validate()?;
        for (name, v) in [("gamma", self.gamma), ("r", self.r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::invalid(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if let FForm::Oscillating { kappa, nu } = self.f_form {
            if !(kappa >= 0.0 && kappa < 1.0 && nu.is_finite()) {
                return Err(Error::invalid("oscillating form needs 0 <= kappa < 1 and finite nu"));
            }
        }
        const SAMPLES: usize = 64;
        for i in 0..=SAMPLES {
            let x = self.sigma * (i as f64 / SAMPLES as f64).min(1.0 - 1e-9);
            for j in 0..=SAMPLES {
                let s = self.alpha * ((j as f64 + 0.5) / (SAMPLES as f64 + 1.0)).max(1e-9);
                let s = if j == SAMPLES { self.alpha * (1.0 - 1e-9) } else { s };
                let fv = self.f(x, s);
                if !(fv > self.beta) {
                    return Err(Error::Inadmissible(format!(
                        "positivity f > beta fails at |x| = {x:.4}, s = {s:.4}: f = {fv:e}, beta = {}",
                        self.beta
                    )));
                }
            }
        }
        Ok(())
    }

    /// `f(|x|, s)` for `s > 0`.
    pub fn f(&self, r: f64, s: f64) -> f64 {
        self.f_at(self.h.value(r), s)
    }

    /// `f` with the spatial factor `h` already evaluated.
    pub fn f_at(&self, h: f64, s: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        let base = h * s.powf(-self.gamma);
        match self.f_form {
            FForm::Power => base,
            FForm::Oscillating { kappa, nu } => base * (1.0 - kappa * (nu * s).sin().powi(2)),
        }
    }

    /// `∂f/∂s` at `(|x|, s)`, `s > 0`.
    pub fn f_slope(&self, r: f64, s: f64) -> f64 {
        self.f_slope_at(self.h.value(r), s)
    }

    pub fn f_slope_at(&self, h: f64, s: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        let g = self.gamma;
        match self.f_form {
            FForm::Power => -g * h * s.powf(-g - 1.0),
            FForm::Oscillating { kappa, nu } => {
                let sn = (nu * s).sin();
                h * (-g * s.powf(-g - 1.0) * (1.0 - kappa * sn * sn)
                    - s.powf(-g) * kappa * nu * (2.0 * nu * s).sin())
            }
        }
    }

    /// `g(|x|, |ξ|)`.
    pub fn g(&self, r: f64, t: f64) -> f64 {
        self.g_at(self.weight_k.value(r), t)
    }

    /// `g` with the weight `k` already evaluated.
    pub fn g_at(&self, k: f64, t: f64) -> f64 {
        match self.g_form {
            GForm::None => 0.0,
            GForm::Power => {
                if k == 0.0 {
                    0.0
                } else {
                    k * t.abs().powf(self.r)
                }
            }
        }
    }

    pub fn has_convection(&self) -> bool {
        self.g_form == GForm::Power && self.weight_k.sup() > 0.0
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn eval_reaction(spec: &ReactionSpec, x: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::SingularDomain(s));
    }
    let r = norm(x);
    let v = spec.f(r, s);
    debug_assert!(v >= 0.0 && v <= spec.h.value(r) * s.powf(-spec.gamma) * (1.0 + 1e-12));
    Ok(v)
}

pub fn eval_convection(spec: &ReactionSpec, x: &[f64], xi: &[f64]) -> Result<f64> {
    if xi.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::invalid("convection arguments must be finite"));
    }
    let r = norm(x);
    let t = norm(xi);
    let v = spec.g(r, t);
    debug_assert!(v >= 0.0 && v <= spec.weight_k.value(r) * t.powf(spec.r) * (1.0 + 1e-12));
    Ok(v)
}

/// Cubic smoothstep cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn theta_cut(y: f64) -> f64 {
    if y <= 0.5 {
        1.0
    } else if y >= 1.0 {
        0.0
    } else {
        let z = 2.0 * y - 1.0;
        1.0 - 3.0 * z * z + 2.0 * z * z * z
    }
}

/// `dΘ/dy`.
fn theta_cut_prime(y: f64) -> f64 {
    if y <= 0.5 || y >= 1.0 {
        0.0
    } else {
        let z = 2.0 * y - 1.0;
        12.0 * z * (z - 1.0)
    }
}

/// `∫_0^y Θ`.
fn theta_cut_integral(y: f64) -> f64 {
    if y <= 0.5 {
        y
    } else {
        let z = (2.0 * y - 1.0).min(1.0);
        0.5 + 0.5 * (z - z.powi(3) + 0.5 * z.powi(4))
    }
}

/// `f̲(x, s) = β Θ(|x|/σ) Θ(|s|/α)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubReaction {
    pub beta: f64,
    pub sigma: f64,
    pub alpha: f64,
}

pub fn build_sub_reaction(beta: f64, sigma: f64, alpha: f64) -> Result<SubReaction> {
    if !(beta > 0.0 && beta.is_finite()) || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("beta and alpha must be positive"));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::invalid(format!("sigma must lie in (0, 1), got {sigma}")));
    }
    Ok(SubReaction { beta, sigma, alpha })
}

impl SubReaction {
    pub fn spatial(&self, r: f64) -> f64 {
        self.beta * theta_cut(r / self.sigma)
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        self.spatial(r) * theta_cut(s.abs() / self.alpha)
    }
}

/// `f_δ(x, s) = min{f̲(x, s + ε_1), δ}` with closed-form primitive in `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedSub {
    pub sub: SubReaction,
    pub eps1: f64,
    pub delta: f64,
}

pub fn truncate_sub_reaction(sub: SubReaction, eps1: f64, delta: f64) -> Result<TruncatedSub> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(eps1 > 0.0) {
        return Err(Error::invalid(format!("eps1 must be > 0, got {eps1}")));
    }
    if eps1 >= sub.alpha / 2.0 {
        log::warn!(
            "eps1 = {eps1} >= alpha/2 = {}: f_delta(., 0) may vanish",
            sub.alpha / 2.0
        );
    }
    Ok(TruncatedSub { sub, eps1, delta })
}

impl TruncatedSub {
    /// Largest `y` with `b Θ(y) >= δ` (0 if `b <= δ`).
    fn switch_point(&self, b: f64) -> f64 {
        if b <= self.delta {
            return 0.0;
        }
        let target = self.delta / b;
        let (mut lo, mut hi) = (0.5, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if theta_cut(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        self.sub.eval(r, s + self.eps1).min(self.delta)
    }

    /// `∂f_δ/∂s`.
    pub fn slope(&self, r: f64, s: f64) -> f64 {
        let b = self.sub.spatial(r);
        let v = s + self.eps1;
        let y = v.abs() / self.sub.alpha;
        if b * theta_cut(y) >= self.delta {
            return 0.0;
        }
        b * theta_cut_prime(y) * v.signum() / self.sub.alpha
    }

    /// `∫_0^v min{b Θ(|w|/α), δ} dw` for `v >= 0`.
    fn half_primitive(&self, b: f64, y_star: f64, v: f64) -> f64 {
        let a = self.sub.alpha;
        let y = v / a;
        let capped = self.delta.min(b) * y.min(y_star);
        let tail = if y > y_star {
            b * (theta_cut_integral(y) - theta_cut_integral(y_star))
        } else {
            0.0
        };
        a * (capped + tail)
    }

    /// `F_δ(x, s) = ∫_0^s f_δ(x, t) dt`.
    pub fn primitive(&self, r: f64, s: f64) -> f64 {
        let b = self.sub.spatial(r);
        if b == 0.0 {
            return 0.0;
        }
        let ys = self.switch_point(b);
        let h = |v: f64| v.signum() * self.half_primitive(b, ys, v.abs());
        h(s + self.eps1) - h(self.eps1)
    }
}
