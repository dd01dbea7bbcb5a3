//! Radial finite-volume discretization of `-div a(∇u)` on balls `B_R ⊂ R^N`.
//!
//! Unknowns live at nodes `r_i = i h`. Cell `c` spans `[r_c, r_{c+1}]` and
//! carries the midpoint difference `D_c = (u_{c+1} - u_c)/h` with weight
//! `W_c = |S^{N-1}| r_{c+1/2}^{N-1} h`; node `i` owns the exact shell volume
//! `V_i` of `[r_{i-1/2}, r_{i+1/2}] ∩ [0, R]`. The residual at node `i` is
//! `(1/V_i) ∂E/∂u_i` for `E(u) = Σ_c W_c A(|D_c|) - Σ_i V_i F_i(u_i)`, so the
//! scheme is conservative and variational at once. At the origin this is the
//! usual ghost-node symmetry `u_{-1} = u_1` with zero flux through `r = 0`.

pub mod cartesian;
mod tridiag;

pub use cartesian::{cartesian_oracle_solve, CartesianField};
pub use tridiag::solve_tridiagonal;

use crate::error::{Error, Result};
use crate::operator::OperatorSpec;
use crate::quadrature::sphere_area;

#[derive(Clone, Debug)]
pub struct RadialGrid {
    radius: f64,
    n_cells: usize,
    n_dim: usize,
    h: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    volumes: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.radius == other.radius && self.n_cells == other.n_cells && self.n_dim == other.n_dim
    }
}

impl RadialGrid {
    pub fn new(radius: f64, n_cells: usize, n_dim: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("grid radius must be > 0, got {radius}")));
        }
        if n_cells < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 cells, got {n_cells}")));
        }
        if n_dim < 1 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        let h = radius / n_cells as f64;
        let area = sphere_area(n_dim);
        let nd = n_dim as i32;
        let nodes: Vec<f64> = (0..=n_cells).map(|i| i as f64 * h).collect();
        let weights = (0..n_cells)
            .map(|c| area * ((c as f64 + 0.5) * h).powi(nd - 1) * h)
            .collect();
        let shell = |a: f64, b: f64| area * (b.powi(nd) - a.powi(nd)) / n_dim as f64;
        let volumes = (0..=n_cells)
            .map(|i| {
                let lo = (i as f64 - 0.5).max(0.0) * h;
                let hi = ((i as f64 + 0.5) * h).min(radius);
                shell(lo, hi)
            })
            .collect();
        Ok(RadialGrid {
            radius,
            n_cells,
            n_dim,
            h,
            nodes,
            weights,
            volumes,
        })
    }

    /// Grid on `B_R` with `cells_per_unit` cells per unit radius.
    pub fn with_resolution(radius: f64, cells_per_unit: usize, n_dim: usize) -> Result<Self> {
        let n = (radius * cells_per_unit as f64).round() as usize;
        Self::new(radius, n, n_dim)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Cell weights `W_c`, one per cell.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node control volumes `V_i`.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Radial extent `[lo, hi]` of node `i`'s control shell.
    pub fn shell(&self, i: usize) -> (f64, f64) {
        let lo = (i as f64 - 0.5).max(0.0) * self.h;
        let hi = ((i as f64 + 0.5) * self.h).min(self.radius);
        (lo, hi)
    }

    /// Volume of node `i`'s control shell inside `B_ρ`.
    pub fn clipped_volume(&self, i: usize, rho: f64) -> f64 {
        let (lo, hi) = self.shell(i);
        let hi = hi.min(rho);
        if hi <= lo {
            return 0.0;
        }
        let nd = self.n_dim as i32;
        sphere_area(self.n_dim) * (hi.powi(nd) - lo.powi(nd)) / self.n_dim as f64
    }

    /// Weight of cell `c` inside `B_ρ` (fractional for the cut cell).
    pub fn clipped_weight(&self, c: usize, rho: f64) -> f64 {
        let lo = self.nodes[c];
        let frac = ((rho - lo) / self.h).clamp(0.0, 1.0);
        self.weights[c] * frac
    }

    /// Index of the largest node with `r_i <= ρ` (within roundoff).
    pub fn node_index_at(&self, rho: f64) -> usize {
        (((rho / self.h) + 1e-9).floor() as usize).min(self.n_cells)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadialField {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

impl RadialField {
    pub fn zeros(grid: &RadialGrid) -> Self {
        RadialField {
            values: vec![0.0; grid.n_cells + 1],
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &RadialGrid, v: f64) -> Self {
        RadialField {
            values: vec![v; grid.n_cells + 1],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &RadialGrid, f: impl Fn(f64) -> f64) -> Self {
        RadialField {
            values: grid.nodes.iter().map(|&r| f(r)).collect(),
            grid: grid.clone(),
        }
    }

    pub fn from_values(grid: &RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells + 1 {
            return Err(Error::invalid(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.n_cells + 1
            )));
        }
        Ok(RadialField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn is_dirichlet(&self) -> bool {
        self.values[self.grid.n_cells] == 0.0
    }

    pub fn same_grid(&self, other: &RadialField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::invalid("fields live on different grids"));
        }
        Ok(())
    }

    /// Midpoint differences `D_c`, one per cell.
    pub fn midpoint_gradient(&self) -> Vec<f64> {
        let h = self.grid.h;
        self.values.windows(2).map(|w| (w[1] - w[0]) / h).collect()
    }

    /// Nodal radial derivative: 0 at the origin, central inside, one-sided at `R`.
    pub fn nodal_gradient(&self) -> Vec<f64> {
        let n = self.grid.n_cells;
        let h = self.grid.h;
        let u = &self.values;
        (0..=n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else if i == n {
                    (u[n] - u[n - 1]) / h
                } else {
                    (u[i + 1] - u[i - 1]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Values on the first `grid.n_cells + 1` nodes of a coarser ball with the same `h`.
    pub fn restrict_to(&self, grid: &RadialGrid) -> Result<RadialField> {
        if (grid.h - self.grid.h).abs() > 1e-12 * self.grid.h
            || grid.n_cells > self.grid.n_cells
            || grid.n_dim != self.grid.n_dim
        {
            return Err(Error::invalid("restriction needs a nested grid with equal spacing"));
        }
        Ok(RadialField {
            grid: grid.clone(),
            values: self.values[..=grid.n_cells].to_vec(),
        })
    }

    /// Piecewise linear interpolation at radius `r` (0 beyond `R`).
    pub fn interpolate(&self, r: f64) -> f64 {
        let h = self.grid.h;
        if r >= self.grid.radius {
            return if r == self.grid.radius { self.values[self.grid.n_cells] } else { 0.0 };
        }
        let s = r / h;
        let i = (s.floor() as usize).min(self.grid.n_cells - 1);
        let t = s - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(Σ V_i |u_i|^p)^{1/p}` over `B_ρ`.
    pub fn lp_norm(&self, p: f64, rho: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.clipped_volume(i, rho) * v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// `(Σ W_c |D_c|^p)^{1/p}` over `B_ρ`.
    pub fn grad_lp_norm(&self, p: f64, rho: f64) -> f64 {
        self.midpoint_gradient()
            .iter()
            .enumerate()
            .map(|(c, d)| self.grid.clipped_weight(c, rho) * d.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// CSV with header `r,u,Du` (nodal derivative).
    pub fn to_csv(&self) -> String {
        let du = self.nodal_gradient();
        let mut out = String::from("r,u,Du\n");
        for ((r, u), d) in self.grid.nodes.iter().zip(&self.values).zip(&du) {
            out.push_str(&format!("{r:.17e},{u:.17e},{d:.17e}\n"));
        }
        out
    }
}

/// Discrete `W^{1,p}(B_ρ)` norm `(Σ V |u|^p + Σ W |Du|^p)^{1/p}`.
pub fn wp_norm(u: &RadialField, p: f64, rho: f64) -> f64 {
    (u.lp_norm(p, rho).powf(p) + u.grad_lp_norm(p, rho).powf(p)).powf(1.0 / p)
}

/// Cell fluxes `W_c a_0(|D_c|) D_c`.
pub fn weighted_fluxes(op: &OperatorSpec, u: &RadialField) -> Vec<f64> {
    u.midpoint_gradient()
        .iter()
        .zip(u.grid.weights())
        .map(|(d, w)| w * op.flux_1d(*d))
        .collect()
}

/// Discrete `-div a(∇u)` at every node; the boundary entry is 0.
pub fn flux_divergence(op: &OperatorSpec, u: &RadialField) -> Vec<f64> {
    let n = u.grid.n_cells;
    let h = u.grid.h;
    let q = weighted_fluxes(op, u);
    let mut out = vec![0.0; n + 1];
    for i in 0..n {
        let right = q[i];
        let left = if i == 0 { 0.0 } else { q[i - 1] };
        out[i] = -(right - left) / (h * u.grid.volumes[i]);
    }
    out
}

/// Node-wise `-div a(∇u) - rhs`, zero on the Dirichlet node.
pub fn residual(op: &OperatorSpec, u: &RadialField, rhs: &RadialField) -> Result<RadialField> {
    u.same_grid(rhs)?;
    let mut values = flux_divergence(op, u);
    for (v, f) in values.iter_mut().zip(&rhs.values) {
        *v -= f;
    }
    let n = u.grid.n_cells;
    values[n] = 0.0;
    Ok(RadialField {
        grid: u.grid.clone(),
        values,
    })
}

/// `Σ_c W_c A(|D_c|)`.
pub fn gradient_energy(op: &OperatorSpec, u: &RadialField) -> f64 {
    u.midpoint_gradient()
        .iter()
        .zip(u.grid.weights())
        .map(|(d, w)| {
            let t = d.abs();
            w * op.terms.iter().map(|s| s.c * t.powf(s.p) / s.p).sum::<f64>()
        })
        .sum()
}

/// `Σ W A(|Du|) - Σ V rhs u`, whose node gradient (scaled by `1/V`) is [`residual`].
pub fn discrete_energy(op: &OperatorSpec, u: &RadialField, rhs: &RadialField) -> Result<f64> {
    u.same_grid(rhs)?;
    let n = u.grid.n_cells;
    let load: f64 = (0..n)
        .map(|i| u.grid.volumes[i] * rhs.values[i] * u.values[i])
        .sum();
    Ok(gradient_energy(op, u) - load)
}

/// Per-cell Hessian entries `W_c λ_1(|D_c|) / h^2` of the gradient energy.
pub fn cell_stiffness(op: &OperatorSpec, u: &RadialField) -> Vec<f64> {
    let h2 = u.grid.h * u.grid.h;
    u.midpoint_gradient()
        .iter()
        .zip(u.grid.weights())
        .map(|(d, w)| w * op.lambda1_regularized(d.abs()) / h2)
        .collect()
}
