//! Independent 2D check for the radial scheme: P1 elements on a structured
//! right-triangle mesh of `[-R, R]^2`, with the disc boundary imposed by
//! linear extrapolation to zero along mesh edges.

use crate::error::{Error, Result};
use crate::operator::OperatorSpec;

const MAX_CELLS: usize = 64;

#[derive(Clone, Debug)]
pub struct CartesianField {
    pub n: usize,
    pub radius: f64,
    pub h: f64,
    /// Row-major `(n+1)^2` nodal values, index `j (n+1) + i`.
    pub values: Vec<f64>,
    /// Nodes carrying an equation (inside the disc, away from its rim).
    pub unknown: Vec<bool>,
}

impl CartesianField {
    pub fn coord(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.h
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.n + 1) + i]
    }

    pub fn center(&self) -> f64 {
        self.value(self.n / 2, self.n / 2)
    }
}

/// Band matrix with equal lower and upper bandwidth `b`.
struct Band {
    n: usize,
    b: usize,
    a: Vec<f64>,
}

impl Band {
    fn new(n: usize, b: usize) -> Self {
        Band {
            n,
            b,
            a: vec![0.0; n * (2 * b + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.b >= i && j <= i + self.b);
        i * (2 * self.b + 1) + (j + self.b - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    /// In-place LU without pivoting, then solve.
    fn solve(mut self, rhs: &mut [f64]) -> Result<()> {
        let (n, b) = (self.n, self.b);
        for k in 0..n {
            let piv = self.a[self.idx(k, k)];
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::OracleFailure(format!("zero pivot at row {k}")));
            }
            let end = (k + b + 1).min(n);
            for i in k + 1..end {
                let lik = self.a[self.idx(i, k)] / piv;
                if lik == 0.0 {
                    continue;
                }
                let kk = self.idx(i, k);
                self.a[kk] = lik;
                for j in k + 1..end {
                    let akj = self.a[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.a[ij] -= lik * akj;
                }
                rhs[i] -= lik * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let end = (k + b + 1).min(n);
            let mut s = rhs[k];
            for j in k + 1..end {
                s -= self.a[self.idx(k, j)] * rhs[j];
            }
            rhs[k] = s / self.a[self.idx(k, k)];
        }
        Ok(())
    }
}

struct Mesh {
    n: usize,
    h: f64,
    radius: f64,
    unknown: Vec<bool>,
    /// Active triangles: vertex indices and gradient rows `(gx, gy)` scaled by `h`.
    triangles: Vec<([usize; 3], [[f64; 3]; 2])>,
    /// Ghost node and its `(neighbour, coefficient)` extrapolation stencil.
    ghosts: Vec<(usize, Vec<(usize, f64)>)>,
    is_ghost: Vec<bool>,
}

const LOWER: [[f64; 3]; 2] = [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]];
const UPPER: [[f64; 3]; 2] = [[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]];

impl Mesh {
    fn new(radius: f64, n: usize) -> Self {
        let m = n + 1;
        let h = 2.0 * radius / n as f64;
        let xy = |k: usize| [-radius + (k % m) as f64 * h, -radius + (k / m) as f64 * h];
        let unknown: Vec<bool> = (0..m * m)
            .map(|k| {
                let [x, y] = xy(k);
                radius - x.hypot(y) >= 0.2 * h
            })
            .collect();
        let mut triangles = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let k = |a: usize, b: usize| b * m + a;
                let lower = [k(i, j), k(i + 1, j), k(i + 1, j + 1)];
                let upper = [k(i, j), k(i + 1, j + 1), k(i, j + 1)];
                for (v, g) in [(lower, LOWER), (upper, UPPER)] {
                    if v.iter().any(|&q| unknown[q]) {
                        triangles.push((v, g));
                    }
                }
            }
        }
        let mut is_ghost = vec![false; m * m];
        for (v, _) in &triangles {
            for &q in v {
                if !unknown[q] {
                    is_ghost[q] = true;
                }
            }
        }
        let offsets: [(i64, i64); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];
        let mut ghosts = Vec::new();
        for g in 0..m * m {
            if !is_ghost[g] {
                continue;
            }
            let (gi, gj) = ((g % m) as i64, (g / m) as i64);
            let xg = xy(g);
            let mut stencil = Vec::new();
            for (di, dj) in offsets {
                let (ni, nj) = (gi + di, gj + dj);
                if ni < 0 || nj < 0 || ni >= m as i64 || nj >= m as i64 {
                    continue;
                }
                let k = nj as usize * m + ni as usize;
                if !unknown[k] {
                    continue;
                }
                let xk = xy(k);
                let (dx, dy) = (xg[0] - xk[0], xg[1] - xk[1]);
                let d = dx.hypot(dy);
                let (ex, ey) = (dx / d, dy / d);
                let proj = xk[0] * ex + xk[1] * ey;
                let s = -proj + (proj * proj - (xk[0] * xk[0] + xk[1] * xk[1]) + radius * radius).sqrt();
                stencil.push((k, 1.0 - d / s));
            }
            let cnt = stencil.len() as f64;
            for e in &mut stencil {
                e.1 /= cnt;
            }
            ghosts.push((g, stencil));
        }
        Mesh {
            n,
            h,
            radius,
            unknown,
            triangles,
            ghosts,
            is_ghost,
        }
    }

    fn size(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    fn xy(&self, k: usize) -> [f64; 2] {
        let m = self.n + 1;
        [-self.radius + (k % m) as f64 * self.h, -self.radius + (k / m) as f64 * self.h]
    }

    /// Central-difference nodal gradient.
    fn nodal_gradient(&self, u: &[f64], k: usize) -> [f64; 2] {
        let m = self.n + 1;
        let (i, j) = (k % m, k / m);
        let d = |lo: usize, hi: usize, span: f64| (u[hi] - u[lo]) / (span * self.h);
        let gx = match (i > 0, i + 1 < m) {
            (true, true) => d(k - 1, k + 1, 2.0),
            (false, _) => d(k, k + 1, 1.0),
            (true, false) => d(k - 1, k, 1.0),
        };
        let gy = match (j > 0, j + 1 < m) {
            (true, true) => d(k - m, k + m, 2.0),
            (false, _) => d(k, k + m, 1.0),
            (true, false) => d(k - m, k, 1.0),
        };
        [gx, gy]
    }

    /// Residual and optionally the Jacobian for a node-wise source `f` with slope `fs`.
    fn assemble(&self, op: &OperatorSpec, u: &[f64], f: &[f64], fs: &[f64], jac: Option<&mut Band>) -> Vec<f64> {
        let area = 0.5 * self.h * self.h;
        let mass = self.h * self.h;
        let mut res = vec![0.0; self.size()];
        let mut jac = jac;
        for (v, g) in &self.triangles {
            let gr: [f64; 2] = [
                (g[0][0] * u[v[0]] + g[0][1] * u[v[1]] + g[0][2] * u[v[2]]) / self.h,
                (g[1][0] * u[v[0]] + g[1][1] * u[v[1]] + g[1][2] * u[v[2]]) / self.h,
            ];
            let t = gr[0].hypot(gr[1]);
            let a0 = op.a0_regularized(t);
            let flux = [a0 * gr[0], a0 * gr[1]];
            for l in 0..3 {
                if !self.unknown[v[l]] {
                    continue;
                }
                res[v[l]] += area * (flux[0] * g[0][l] + flux[1] * g[1][l]) / self.h;
            }
            if let Some(band) = jac.as_deref_mut() {
                let tt = t.max(1e-6);
                let (l1, l2) = (op.lambda1_regularized(tt), op.a0_regularized(tt));
                let e = if t > 0.0 { [gr[0] / t, gr[1] / t] } else { [1.0, 0.0] };
                let k = [
                    [l2 + (l1 - l2) * e[0] * e[0], (l1 - l2) * e[0] * e[1]],
                    [(l1 - l2) * e[1] * e[0], l2 + (l1 - l2) * e[1] * e[1]],
                ];
                for l in 0..3 {
                    if !self.unknown[v[l]] {
                        continue;
                    }
                    let gl = [g[0][l], g[1][l]];
                    for mm in 0..3 {
                        let gm = [g[0][mm], g[1][mm]];
                        let kg = [k[0][0] * gm[0] + k[0][1] * gm[1], k[1][0] * gm[0] + k[1][1] * gm[1]];
                        band.add(v[l], v[mm], area * (gl[0] * kg[0] + gl[1] * kg[1]) / (self.h * self.h));
                    }
                }
            }
        }
        for k in 0..self.size() {
            if self.unknown[k] {
                res[k] -= mass * f[k];
                if let Some(band) = jac.as_deref_mut() {
                    band.add(k, k, -mass * fs[k]);
                }
            } else if !self.is_ghost[k] {
                res[k] = u[k];
                if let Some(band) = jac.as_deref_mut() {
                    band.add(k, k, 1.0);
                }
            }
        }
        for (gidx, stencil) in &self.ghosts {
            let mut r = u[*gidx];
            for (k, c) in stencil {
                r -= c * u[*k];
            }
            res[*gidx] = r;
            if let Some(band) = jac.as_deref_mut() {
                band.add(*gidx, *gidx, 1.0);
                for (k, c) in stencil {
                    band.add(*gidx, *k, -c);
                }
            }
        }
        res
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Solves `-div a(∇u) = rhs(x, u, ∇u)` on the disc `B_R ⊂ R^2` with `n` cells per side.
///
/// The `u`-dependence of `rhs` enters Newton through a finite-difference slope;
/// the gradient dependence is frozen per outer sweep.
pub fn cartesian_oracle_solve<F>(op: &OperatorSpec, rhs: F, radius: f64, n: usize) -> Result<CartesianField>
where
    F: Fn([f64; 2], f64, [f64; 2]) -> f64,
{
    if n < 4 || n > MAX_CELLS || n % 2 != 0 {
        return Err(Error::invalid(format!("oracle needs an even n in [4, {MAX_CELLS}], got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("oracle radius must be > 0"));
    }
    let mesh = Mesh::new(radius, n);
    let size = mesh.size();
    let band_w = n + 2;
    let mut u = vec![0.0; size];
    let eval_sources = |u: &[f64], grads: &[[f64; 2]]| {
        let mut f = vec![0.0; size];
        let mut fs = vec![0.0; size];
        for k in 0..size {
            if !mesh.unknown[k] {
                continue;
            }
            let x = mesh.xy(k);
            f[k] = rhs(x, u[k], grads[k]);
            let d = 1e-7 * u[k].abs().max(1.0);
            fs[k] = (rhs(x, u[k] + d, grads[k]) - rhs(x, u[k] - d, grads[k])) / (2.0 * d);
        }
        (f, fs)
    };

    for outer in 0..200 {
        let grads: Vec<[f64; 2]> = (0..size).map(|k| mesh.nodal_gradient(&u, k)).collect();
        let before = u.clone();
        let mut converged = false;
        for _ in 0..100 {
            let (f, fs) = eval_sources(&u, &grads);
            let mut jac = Band::new(size, band_w);
            let res = mesh.assemble(op, &u, &f, &fs, Some(&mut jac));
            let scale = 1.0 + f.iter().fold(0.0f64, |m, v| m.max(v.abs())) * mesh.h * mesh.h;
            let rn = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rn <= 1e-12 * scale {
                converged = true;
                break;
            }
            let mut du: Vec<f64> = res.iter().map(|r| -r).collect();
            jac.solve(&mut du)?;
            let merit = norm2(&res);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
                let (ft, fst) = eval_sources(&trial, &grads);
                let rt = mesh.assemble(op, &trial, &ft, &fst, None);
                if norm2(&rt) <= (1.0 - 1e-4 * step) * merit || norm2(&rt) < 1e-28 {
                    u = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(Error::OracleFailure(format!(
                    "line search failed in sweep {outer} (residual {rn:e})"
                )));
            }
        }
        if !converged {
            return Err(Error::OracleFailure(format!("Newton did not converge in sweep {outer}")));
        }
        let change = u.iter().zip(&before).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let size_u = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if outer > 0 && change <= 1e-11 * (1.0 + size_u) {
            break;
        }
        if outer == 199 {
            return Err(Error::OracleFailure("gradient sweeps did not settle".into()));
        }
    }
    Ok(CartesianField {
        n,
        radius,
        h: mesh.h,
        values: u,
        unknown: mesh.unknown,
    })
}
