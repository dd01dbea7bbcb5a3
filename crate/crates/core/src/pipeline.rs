//! Exhaustion by balls `B_n`, `n = 1..=n_max`: super-solution on the largest
//! ball, sub-solution and trapped regularized solve per ball, and the inner-ball
//! diagnostics `ω_j`, `C_j`, `d_{n,j}` and `Ψ`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discretization::{flux_divergence, wp_norm, RadialField, RadialGrid};
use crate::error::{Error, Result};
use crate::operator::{default_grid, verify_growth, OperatorSpec};
use crate::quadrature::ball_volume;
use crate::reaction::{build_sub_reaction, validate_exponents, ExponentData, ReactionSpec, SubReaction};
use crate::solver::{
    fixed_point_convective, select_delta, solve_trapped, NodalData, SolveSettings, TraceRecord, TrapPair,
    TrappingRadius,
};

/// Tolerance of the sandwich and interior-positivity checks.
pub const TRAP_TOL: f64 = 1e-10;
/// Largest admissible `max_n C / min_n C` per inner ball.
pub const ENERGY_RATIO_LIMIT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(default = "default_cells_per_unit")]
    pub cells_per_unit: usize,
}

fn default_cells_per_unit() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    /// Number of balls; `R_n = n`.
    pub n_max: usize,
    /// First shift; `ε_n = ε_1 2^{-(n-1)}`. Defaults to `min(α/4, 0.1)`.
    #[serde(default)]
    pub eps1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorSpec,
    pub reaction: ReactionSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolveSettings,
    pub pipeline: PipelineSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Everything derived from a config before any solve.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub exponents: ExponentData,
    pub sub: SubReaction,
    pub eps: Vec<f64>,
    /// `m` of the growth bound `a_0(t) t^2 >= m t^p - ...`.
    pub growth_m: f64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn eps1(&self) -> f64 {
        self.pipeline.eps1.unwrap_or((self.reaction.alpha / 4.0).min(0.1))
    }

    /// Full validation; every error here is a configuration error.
    pub fn prepare(&self) -> Result<Prepared> {
        self.operator.validate()?;
        self.solver.validate()?;
        if self.grid.cells_per_unit < 4 {
            return Err(Error::Config(format!(
                "grid.cells_per_unit must be >= 4, got {}",
                self.grid.cells_per_unit
            )));
        }
        let exponents = validate_exponents(
            self.operator.p(),
            self.grid.dim,
            self.reaction.gamma,
            self.reaction.r,
            self.reaction.eta,
            self.reaction.theta,
        )?;
        self.reaction.validate()?;
        let sub = build_sub_reaction(self.reaction.beta, self.reaction.sigma, self.reaction.alpha)?;
        if self.pipeline.n_max == 0 {
            return Err(Error::Config("pipeline.n_max must be >= 1".into()));
        }
        let eps1 = self.eps1();
        if !(eps1 > 0.0 && eps1 < self.reaction.alpha / 2.0) {
            return Err(Error::Config(format!(
                "eps1 must lie in (0, alpha/2) = (0, {}), got {eps1}",
                self.reaction.alpha / 2.0
            )));
        }
        let eps = (0..self.pipeline.n_max).map(|k| eps1 * 0.5f64.powi(k as i32)).collect();
        let growth_m = verify_growth(&self.operator, &default_grid())?.m;
        Ok(Prepared {
            config: self.clone(),
            exponents,
            sub,
            eps,
            growth_m,
        })
    }
}

impl Prepared {
    pub fn grid(&self, n: usize) -> Result<RadialGrid> {
        RadialGrid::with_resolution(n as f64, self.config.grid.cells_per_unit, self.config.grid.dim)
    }

    fn p(&self) -> f64 {
        self.config.operator.p()
    }
}

/// `-div a(∇u) - f(x, u + ε) - g(x, ∇u)` at interior nodes, shell-averaged data.
///
/// With `eps = 0` this is the unshifted singular equation; nodes with `u <= 0`
/// where `h > 0` give `NaN`.
pub fn equation_defect(op: &OperatorSpec, reaction: &ReactionSpec, u: &RadialField, eps: f64) -> Vec<f64> {
    let data = NodalData::new(reaction, &u.grid);
    let div = flux_divergence(op, u);
    let du = u.nodal_gradient();
    let n = u.grid.n_cells();
    (0..n)
        .map(|i| {
            let s = u.values[i] + eps;
            let f = if data.h[i] == 0.0 {
                0.0
            } else if s > 0.0 {
                reaction.f_at(data.h[i], s)
            } else {
                f64::NAN
            };
            div[i] - f - reaction.g_at(data.k[i], du[i])
        })
        .collect()
}

fn max_on(values: &[f64], grid: &RadialGrid, rho: f64) -> f64 {
    values
        .iter()
        .zip(grid.nodes())
        .filter(|(_, r)| **r < rho - 1e-12)
        .fold(0.0f64, |m, (v, _)| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionRecord {
    pub value_at_origin: f64,
    pub picard_iterations: usize,
    pub trapping: TrappingRadius,
    pub within_trap: bool,
    /// Smallest `-div a(∇ū) - f(x, ū + ε_n) - g(x, ∇ū)` over nodes and shifts.
    pub min_slack: f64,
    pub worst_node: usize,
}

#[derive(Clone, Debug)]
pub struct Supersolution {
    pub field: RadialField,
    pub record: SupersolutionRecord,
    pub trace: Vec<TraceRecord>,
}

/// `ū = ũ + 1` with `ũ` the convective fixed point on `B_{n_max}`; checks the
/// super-solution inequality for every shift in the schedule.
pub fn build_supersolution(prep: &Prepared) -> Result<Supersolution> {
    let cfg = &prep.config;
    let grid = prep.grid(cfg.pipeline.n_max)?;
    let out = fixed_point_convective(&cfg.operator, &grid, &cfg.reaction, &prep.exponents, &cfg.solver)?;
    let n = grid.n_cells();
    let mut upper = out.field.clone();
    for v in upper.values.iter_mut() {
        *v += 1.0;
    }
    let mut min_slack = f64::INFINITY;
    let mut worst_node = 0;
    for &eps in &prep.eps {
        let defect = equation_defect(&cfg.operator, &cfg.reaction, &upper, eps);
        for (i, d) in defect.iter().enumerate().take(n) {
            if *d < min_slack {
                min_slack = *d;
                worst_node = i;
            }
        }
    }
    if min_slack < -cfg.solver.verify_tol {
        return Err(Error::construction(
            "super-solution",
            format!(
                "inequality violated by {:e} at node {worst_node} (r = {})",
                -min_slack,
                grid.nodes()[worst_node]
            ),
        ));
    }
    Ok(Supersolution {
        record: SupersolutionRecord {
            value_at_origin: upper.values[0],
            picard_iterations: out.iterations,
            trapping: out.trapping,
            within_trap: out.within_trap,
            min_slack,
            worst_node,
        },
        field: upper,
        trace: out.trace,
    })
}

#[derive(Clone, Debug)]
pub struct Subsolution {
    pub field: RadialField,
    pub delta: f64,
    pub effective_delta: f64,
    /// Largest `-div a(∇u̲) - f(x, u̲ + ε_n) - g(x, ∇u̲)` (must be `<= verify_tol`).
    pub max_excess: f64,
    /// Smallest slack in `f_δ(x, u̲) <= f̲(x, u̲ + ε_n) <= f(x, u̲ + ε_n)`.
    pub chain_slack: f64,
    pub trace: Vec<TraceRecord>,
}

/// `u̲_n` on `B_n` from the δ ladder, verified against the shifted equation.
pub fn build_subsolution(prep: &Prepared, n: usize) -> Result<Subsolution> {
    let cfg = &prep.config;
    let grid = prep.grid(n)?;
    let eps1 = prep.eps[0];
    let eps_n = prep.eps[n - 1];
    let sel = select_delta(&cfg.operator, &grid, &prep.sub, eps1, &cfg.solver)?;
    let u = sel.field;
    let defect = equation_defect(&cfg.operator, &cfg.reaction, &u, eps_n);
    let (node, max_excess) = defect
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |m, (i, d)| if *d > m.1 { (i, *d) } else { m });
    if max_excess > cfg.solver.verify_tol {
        return Err(Error::construction(
            &format!("sub-solution n={n}"),
            format!(
                "inequality violated by {max_excess:e} at node {node} (r = {})",
                grid.nodes()[node]
            ),
        ));
    }
    let f_delta = crate::reaction::truncate_sub_reaction(prep.sub, eps1, sel.delta)?;
    let data = NodalData::new(&cfg.reaction, &grid);
    let mut chain_slack = f64::INFINITY;
    for i in 0..grid.n_cells() {
        let r = grid.nodes()[i];
        let s = u.values[i];
        let a = f_delta.eval(r, s);
        let b = prep.sub.eval(r, s + eps1);
        let c = prep.sub.eval(r, s + eps_n);
        let d = cfg.reaction.f_at(data.h[i], s + eps_n);
        chain_slack = chain_slack.min(b - a).min(c - b).min(d - c);
    }
    Ok(Subsolution {
        field: u,
        delta: sel.delta,
        effective_delta: sel.effective_delta,
        max_excess,
        chain_slack,
        trace: sel.trace,
    })
}

#[derive(Clone, Debug)]
pub struct Regularized {
    pub field: RadialField,
    pub iterations: usize,
    pub margins: (f64, f64),
    pub trace: Vec<TraceRecord>,
}

/// `u_n`: trapped solve of the shifted problem on `B_n` between `u̲_n` and `ū`.
///
/// An invalid trap is reported as a trap escape at the worst node.
pub fn solve_regularized(prep: &Prepared, n: usize, lower: &RadialField, upper: &RadialField) -> Result<Regularized> {
    let cfg = &prep.config;
    let grid = lower.grid.clone();
    let upper = upper.restrict_to(&grid)?;
    let stage = format!("regularized n={n}");
    if let Some((i, _)) = lower
        .values
        .iter()
        .zip(&upper.values)
        .enumerate()
        .filter(|(_, (l, u))| l > u)
        .map(|(i, (l, u))| (i, l - u))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    {
        return Err(Error::TrapEscape {
            stage: format!("{stage} (trap)"),
            node: i,
            radius: grid.nodes()[i],
            value: lower.values[i],
            lower: lower.values[i],
            upper: upper.values[i],
        });
    }
    let trap = TrapPair {
        lower: lower.clone(),
        upper,
    };
    let out = solve_trapped(&cfg.operator, &cfg.reaction, prep.eps[n - 1], &trap, &cfg.solver, None, &stage)?;
    Ok(Regularized {
        field: out.field,
        iterations: out.iterations,
        margins: out.margins,
        trace: out.trace,
    })
}

/// Which bound the singular term uses in the energy-profile constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularBranch {
    /// `γ >= 1`: `∫ h u^{1-γ} <= ω_j^{1-γ} ‖h‖_1`.
    LevelSet,
    /// `γ < 1`: `∫ h u^{1-γ} <= ∫_{B_{j+1}} h (ū + 1)`.
    Variational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub j: usize,
    pub n: usize,
    /// `(l, Ψ(l))` for `l` in `[j, j+1]`.
    pub samples: Vec<(f64, f64)>,
    pub a: f64,
    pub b: f64,
    /// `Ψ(j) / (A + B)`.
    pub ratio: f64,
    pub branch: SingularBranch,
}

/// `Ψ(l) = Σ_{cells in B_l, u > ω} W |Du|^p` at `samples + 1` equispaced `l ∈ [j, j+1]`.
pub fn energy_profile(u: &RadialField, p: f64, omega: f64, j: usize, samples: usize) -> Vec<(f64, f64)> {
    let du = u.midpoint_gradient();
    let g = &u.grid;
    (0..=samples)
        .map(|k| {
            let l = (j as f64 + k as f64 / samples as f64).min(g.radius());
            let psi = du
                .iter()
                .enumerate()
                .filter(|(c, _)| 0.5 * (u.values[*c] + u.values[c + 1]) > omega)
                .map(|(c, d)| g.clipped_weight(c, l) * d.abs().powf(p))
                .sum();
            (l, psi)
        })
        .collect()
}

fn energy_constants(prep: &Prepared, upper: &RadialField, omega: f64, j: usize) -> (f64, f64, SingularBranch) {
    let cfg = &prep.config;
    let (p, nd) = (prep.p(), cfg.grid.dim);
    let rho = (j + 1) as f64;
    let m = prep.growth_m;
    let a = upper.lp_norm(p, rho).powf(p) / m;
    let gamma = cfg.reaction.gamma;
    let (singular, branch) = if gamma >= 1.0 {
        (omega.powf(1.0 - gamma) * cfg.reaction.h.lq_norm(1.0, nd, None), SingularBranch::LevelSet)
    } else {
        let data = NodalData::new(&cfg.reaction, &upper.grid);
        let s: f64 = (0..upper.values.len())
            .map(|i| upper.grid.clipped_volume(i, rho) * data.h[i] * (upper.values[i] + 1.0))
            .sum();
        (s, SingularBranch::Variational)
    };
    let k_theta = if cfg.reaction.has_convection() {
        cfg.reaction.weight_k.lq_norm(cfg.reaction.theta, nd, None)
    } else {
        0.0
    };
    let b = (singular + k_theta * upper.grad_lp_norm(p, rho) + ball_volume(nd, rho)) / m;
    (a, b, branch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub n: usize,
    pub radius: f64,
    pub eps: f64,
    pub delta: f64,
    pub effective_delta: f64,
    pub sub_max: f64,
    pub sub_excess: f64,
    pub chain_slack: f64,
    pub iterations: usize,
    /// `min(u_n - u̲_n)` and `min(ū - u_n)`.
    pub margins: (f64, f64),
    pub value_at_origin: f64,
    pub sandwich: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerBallRecord {
    pub j: usize,
    pub omega: f64,
    /// `min_{B_j} u_n - ω_j` for `n = j+1..=n_max`.
    pub positivity_margins: Vec<f64>,
    /// `wp_norm(u_n, p, j)` for `n = j+1..=n_max`.
    pub norms: Vec<f64>,
    pub c: f64,
    pub norm_ratio: f64,
    /// `‖∇u_n - ∇u_{n_max}‖_{L^p(B_j)}` for `n = j+1..=n_max`.
    pub d: Vec<f64>,
    pub d_non_increasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalResidual {
    /// Unshifted defect of `u_{n_max}` on `B_{n_max-1}` (∞-norm).
    pub iterate: f64,
    /// Same for the `ε = 0` trapped solve warm-started from `u_{n_max}`;
    /// `None` when that solve fails.
    pub limit: Option<f64>,
    pub limit_error: Option<String>,
    /// `min u_{n_max}` over `B_{n_max-1}`.
    pub min_value: f64,
    pub region_radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invariants {
    pub sandwich: bool,
    pub positivity: bool,
    pub uniform_energy: bool,
    pub shift_chain: bool,
    pub final_residual: bool,
}

impl Invariants {
    pub fn all(&self) -> bool {
        self.sandwich && self.positivity && self.uniform_energy && self.shift_chain && self.final_residual
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_max: usize,
    pub p: f64,
    pub dim: usize,
    pub cells_per_unit: usize,
    pub eps: Vec<f64>,
    pub supersolution: SupersolutionRecord,
    pub levels: Vec<LevelRecord>,
    /// Trapped-solve sweep counts per `n`.
    pub iterations: Vec<usize>,
    pub omega: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub inner: Vec<InnerBallRecord>,
    pub energy_profiles: Vec<EnergyProfile>,
    pub final_residual: FinalResidual,
    pub invariants: Invariants,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub upper: RadialField,
    pub lower: Vec<RadialField>,
    pub solutions: Vec<RadialField>,
    pub limit: Option<RadialField>,
    pub trace: Vec<TraceRecord>,
}

/// Runs every stage; stage failures abort with the stage named in the error.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    let prep = config.prepare()?;
    let cfg = &prep.config;
    let (op, reaction, settings) = (&cfg.operator, &cfg.reaction, &cfg.solver);
    let p = prep.p();
    let n_max = cfg.pipeline.n_max;

    let sup = build_supersolution(&prep)?;
    let mut trace = sup.trace.clone();
    let mut levels = Vec::new();
    let mut lower = Vec::new();
    let mut solutions = Vec::new();
    let mut shift_chain = true;
    for n in 1..=n_max {
        log::info!("level n = {n}");
        let sub = build_subsolution(&prep, n)?;
        trace.extend(sub.trace.iter().cloned().map(|mut t| {
            t.stage = format!("sub-solution n={n}");
            t
        }));
        let reg = solve_regularized(&prep, n, &sub.field, &sup.field)?;
        trace.extend(reg.trace.iter().cloned());
        shift_chain &= sub.chain_slack >= -TRAP_TOL;
        levels.push(LevelRecord {
            n,
            radius: n as f64,
            eps: prep.eps[n - 1],
            delta: sub.delta,
            effective_delta: sub.effective_delta,
            sub_max: sub.field.max_abs(),
            sub_excess: sub.max_excess,
            chain_slack: sub.chain_slack,
            iterations: reg.iterations,
            margins: reg.margins,
            value_at_origin: reg.field.values[0],
            sandwich: reg.margins.0 >= -TRAP_TOL && reg.margins.1 >= -TRAP_TOL,
        });
        lower.push(sub.field);
        solutions.push(reg.field);
    }

    let last = &solutions[n_max - 1];
    let mut inner = Vec::new();
    let mut profiles = Vec::new();
    for j in 1..n_max {
        let sub_next = &lower[j];
        let omega = min_within(sub_next, j as f64);
        let later = &solutions[j..];
        let positivity_margins: Vec<f64> = later.iter().map(|u| min_within(u, j as f64) - omega).collect();
        let norms: Vec<f64> = later.iter().map(|u| wp_norm(u, p, j as f64)).collect();
        let c = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cmin = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let d: Vec<f64> = later
            .iter()
            .map(|u| {
                let reference = last.restrict_to(&u.grid)?;
                let diff = RadialField {
                    grid: u.grid.clone(),
                    values: u.values.iter().zip(&reference.values).map(|(a, b)| a - b).collect(),
                };
                Ok(diff.grad_lp_norm(p, j as f64))
            })
            .collect::<Result<_>>()?;
        let d_non_increasing = d.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        let (a, b, branch) = energy_constants(&prep, &sup.field, omega, j);
        for (k, u) in later.iter().enumerate() {
            let samples = energy_profile(u, p, omega, j, 8);
            profiles.push(EnergyProfile {
                j,
                n: j + 1 + k,
                ratio: samples[0].1 / (a + b),
                samples,
                a,
                b,
                branch,
            });
        }
        inner.push(InnerBallRecord {
            j,
            omega,
            positivity_margins,
            c,
            norm_ratio: if cmin > 0.0 { c / cmin } else { f64::INFINITY },
            norms,
            d,
            d_non_increasing,
        });
    }

    let region = (n_max.max(2) - 1) as f64;
    let iterate_defect = equation_defect(op, reaction, last, 0.0);
    let iterate_res = max_on(&iterate_defect, &last.grid, region);
    let (limit, limit_res, limit_error) = {
        let trap = TrapPair {
            lower: lower[n_max - 1].clone(),
            upper: sup.field.restrict_to(&last.grid)?,
        };
        match solve_trapped(op, reaction, 0.0, &trap, settings, Some(last), "limit") {
            Ok(out) => {
                trace.extend(out.trace.iter().cloned());
                let res = max_on(&equation_defect(op, reaction, &out.field, 0.0), &last.grid, region);
                (Some(out.field), Some(res), None)
            }
            Err(e) => (None, None, Some(e.to_string())),
        }
    };
    let final_residual = FinalResidual {
        iterate: iterate_res,
        limit: limit_res,
        limit_error,
        min_value: min_within(last, region),
        region_radius: region,
    };

    let invariants = Invariants {
        sandwich: levels.iter().all(|l| l.sandwich),
        positivity: inner
            .iter()
            .all(|r| r.omega > 0.0 && r.positivity_margins.iter().all(|m| *m >= -TRAP_TOL)),
        uniform_energy: inner
            .iter()
            .all(|r| r.c.is_finite() && r.norm_ratio <= ENERGY_RATIO_LIMIT),
        shift_chain,
        final_residual: iterate_res <= settings.verify_tol,
    };
    let report = PipelineReport {
        n_max,
        p,
        dim: cfg.grid.dim,
        cells_per_unit: cfg.grid.cells_per_unit,
        eps: prep.eps.clone(),
        supersolution: sup.record.clone(),
        iterations: levels.iter().map(|l| l.iterations).collect(),
        levels,
        omega: inner.iter().map(|r| r.omega).collect(),
        c: inner.iter().map(|r| r.c).collect(),
        d: inner.iter().map(|r| r.d.clone()).collect(),
        inner,
        energy_profiles: profiles,
        final_residual,
        passed: invariants.all(),
        invariants,
    };
    Ok(PipelineOutcome {
        report,
        upper: sup.field,
        lower,
        solutions,
        limit,
        trace,
    })
}

/// Minimum over nodes with `r <= ρ`.
fn min_within(u: &RadialField, rho: f64) -> f64 {
    u.values
        .iter()
        .zip(u.grid.nodes())
        .filter(|(_, r)| **r <= rho + 1e-12)
        .fold(f64::INFINITY, |m, (v, _)| m.min(*v))
}

/// Writes `report.json`, `fields/*.csv` and `trace.jsonl` under `dir`.
pub fn write_outputs(dir: &Path, outcome: &PipelineOutcome) -> Result<()> {
    let fields = dir.join("fields");
    fs::create_dir_all(&fields)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    for (k, u) in outcome.solutions.iter().enumerate() {
        let n = k + 1;
        fs::write(fields.join(format!("u_{n}.csv")), u.to_csv())?;
        fs::write(fields.join(format!("sub_{n}.csv")), outcome.lower[k].to_csv())?;
        fs::write(fields.join(format!("super_{n}.csv")), outcome.upper.restrict_to(&u.grid)?.to_csv())?;
    }
    if let Some(u) = &outcome.limit {
        fs::write(fields.join("limit.csv"), u.to_csv())?;
    }
    write_trace(&dir.join("trace.jsonl"), &outcome.trace)
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for t in trace {
        serde_json::to_writer(&mut file, t)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::{GForm, Profile};
    use proptest::prelude::*;

    fn standard(cells: usize, n_max: usize) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{
                "operator": {{"terms": [{{"c": 1.0, "p": 2.0}}]}},
                "reaction": {{
                    "h": {{"c": 1.0, "cutoff": 0.5}},
                    "weight_k": {{"c": 0.1, "cutoff": 1.0}},
                    "gamma": 1.0, "r": 0.5, "eta": 2.0, "theta": 3.0,
                    "beta": 1.0, "sigma": 0.5, "alpha": 1.0
                }},
                "grid": {{"dim": 2, "cells_per_unit": {cells}}},
                "pipeline": {{"n_max": {n_max}}}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn shift_schedule_halves_from_default() {
        let prep = standard(16, 4).prepare().unwrap();
        assert_eq!(prep.eps, vec![0.1, 0.05, 0.025, 0.0125]);
        let mut cfg = standard(16, 4);
        cfg.pipeline.eps1 = Some(0.5);
        assert!(matches!(cfg.prepare(), Err(Error::Config(_))));
    }

    #[test]
    fn configuration_errors_are_classified() {
        let mut cfg = standard(16, 2);
        cfg.reaction.h = Profile::zero();
        let err = cfg.prepare().unwrap_err();
        assert!(matches!(err, Error::Inadmissible(_)) && err.is_configuration());

        let mut cfg = standard(16, 2);
        cfg.reaction.r = 1.0;
        assert!(cfg.prepare().unwrap_err().is_configuration());

        let text = serde_json::to_string(&standard(16, 2)).unwrap().replacen('{', r#"{"bogus": 1,"#, 1);
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn supersolution_anchor_and_slack() {
        let prep = standard(64, 4).prepare().unwrap();
        let sup = build_supersolution(&prep).unwrap();
        assert!(sup.record.value_at_origin > 1.0 && sup.record.value_at_origin < 1.5);
        assert!(sup.record.within_trap);
        assert!(sup.field.values.iter().all(|v| *v >= 1.0));
    }

    #[test]
    fn supersolution_of_zero_data_is_one() {
        let mut prep = standard(16, 2).prepare().unwrap();
        prep.config.reaction.h = Profile::zero();
        let sup = build_supersolution(&prep).unwrap();
        assert!(sup.field.values.iter().all(|v| *v == 1.0));
        assert_eq!(sup.record.min_slack, 0.0);
    }

    #[test]
    fn supersolution_without_convection_has_envelope_slack() {
        let mut cfg = standard(32, 2);
        cfg.reaction.g_form = GForm::None;
        let prep = cfg.prepare().unwrap();
        let sup = build_supersolution(&prep).unwrap();
        // h - h (ū + ε)^{-1} >= 0 with ū >= 1, up to solver tolerance.
        assert!(sup.record.min_slack >= -1e-9);
    }

    #[test]
    fn subsolution_bounds_and_support() {
        let prep = standard(64, 2).prepare().unwrap();
        let sup = build_supersolution(&prep).unwrap();
        let sub = build_subsolution(&prep, 2).unwrap();
        let u = &sub.field;
        let n = u.grid.n_cells();
        assert!(u.values[..n].iter().all(|v| *v > 0.0 && *v <= 1.0));
        let upper = sup.field.restrict_to(&u.grid).unwrap();
        assert!(u.values.iter().zip(&upper.values).all(|(a, b)| a <= b));
        let div = flux_divergence(&prep.config.operator, u);
        for (i, r) in u.grid.nodes()[..n].iter().enumerate() {
            if *r >= prep.sub.sigma {
                assert!(div[i].abs() < 1e-8, "r = {r}: {}", div[i]);
            }
        }
        assert!(sub.chain_slack >= 0.0);
    }

    #[test]
    fn regularized_solution_is_sandwiched() {
        let prep = standard(64, 2).prepare().unwrap();
        let sup = build_supersolution(&prep).unwrap();
        let sub = build_subsolution(&prep, 2).unwrap();
        let reg = solve_regularized(&prep, 2, &sub.field, &sup.field).unwrap();
        assert!(reg.margins.0 >= -TRAP_TOL && reg.margins.1 >= -TRAP_TOL);
        let upper = sup.field.restrict_to(&sub.field.grid).unwrap();
        for i in 0..reg.field.values.len() {
            assert!(sub.field.values[i] - TRAP_TOL <= reg.field.values[i]);
            assert!(reg.field.values[i] <= upper.values[i] + TRAP_TOL);
        }
    }

    #[test]
    fn lowered_upper_bound_escapes() {
        let prep = standard(32, 2).prepare().unwrap();
        let sup = build_supersolution(&prep).unwrap();
        let sub = build_subsolution(&prep, 1).unwrap();
        let mut low = sup.field.clone();
        for v in low.values.iter_mut() {
            *v -= 1.3;
        }
        let n = low.grid.n_cells();
        low.values[n] = 0.0;
        match solve_regularized(&prep, 1, &sub.field, &low) {
            Err(Error::TrapEscape { node, .. }) => assert!(node <= sub.field.grid.n_cells()),
            other => panic!("expected a trap escape, got {other:?}"),
        }
    }

    #[test]
    fn single_ball_has_no_inner_sections() {
        let out = run_pipeline(&standard(32, 1)).unwrap();
        let r = &out.report;
        assert!(r.omega.is_empty() && r.c.is_empty() && r.d.is_empty() && r.energy_profiles.is_empty());
        assert_eq!(r.iterations.len(), 1);
        let json = serde_json::to_value(r).unwrap();
        for key in ["omega", "C", "d", "iterations"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let a = run_pipeline(&standard(32, 3)).unwrap();
        let b = run_pipeline(&standard(32, 3)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        let r = &a.report;
        assert!(r.invariants.sandwich && r.invariants.positivity && r.invariants.uniform_energy);
        assert!(r.omega.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn zero_field_has_zero_profile() {
        let g = RadialGrid::new(3.0, 48, 2).unwrap();
        let prof = energy_profile(&RadialField::zeros(&g), 2.0, 0.1, 1, 8);
        assert!(prof.iter().all(|(_, v)| *v == 0.0));
        assert_eq!(prof.first().unwrap().0, 1.0);
        assert_eq!(prof.last().unwrap().0, 2.0);
    }

    proptest! {
        #[test]
        fn profile_is_non_decreasing(
            vals in prop::collection::vec(0.0f64..2.0, 49),
            omega in 0.0f64..1.5,
            p in 1.2f64..4.0,
        ) {
            let g = RadialGrid::new(3.0, 48, 2).unwrap();
            let mut vals = vals;
            vals[48] = 0.0;
            let u = RadialField::from_values(&g, vals).unwrap();
            let prof = energy_profile(&u, p, omega, 1, 16);
            prop_assert!(prof.windows(2).all(|w| w[1].1 >= w[0].1));
        }
    }
}
