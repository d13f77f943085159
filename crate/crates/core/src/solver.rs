//! Minimization of the discrete anisotropic area
//! `E(u) = sum_K |K| f(Du|_K)` over piecewise-linear graphs.
//!
//! Dirichlet vertices are fixed. Wall vertices are ordinary unknowns: the
//! condition `<Df(Du), e1> = 0` on `{x1 = 0}` is never imposed and only emerges
//! from stationarity of the unconstrained energy.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Mesh, Tag};
use crate::error::{Error, Result};
use crate::integrand::EllipticIntegrand;
use crate::sparse::{solve_spd, SkylineMatrix};

/// Per-vertex heights of a piecewise-linear graph over a mesh.
#[derive(Clone, Debug)]
pub struct GraphFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl GraphFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::Precondition(format!(
                "graph has {} values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("graph values must be finite".into()));
        }
        Ok(Self { mesh, values })
    }

    /// Interpolates `g` at the vertices.
    pub fn from_fn(mesh: Arc<Mesh>, g: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = mesh.coords().iter().map(|&x| g(x)).collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, v: usize) -> f64 {
        self.values[v]
    }

    /// Constant gradient of the interpolant on cell `c`.
    pub fn cell_gradient(&self, c: usize) -> DVector<f64> {
        cell_gradient(&self.mesh, &self.values, c)
    }

    /// Writes `id,x1[,x2],u` rows in full precision.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let two_d = self.mesh.n() == 2;
        writeln!(w, "{}", if two_d { "id,x1,x2,u" } else { "id,x1,u" })?;
        for (v, u) in self.values.iter().enumerate() {
            let p = self.mesh.coord(v);
            if two_d {
                writeln!(w, "{v},{:.16e},{:.16e},{:.16e}", p[0], p[1], u)?;
            } else {
                writeln!(w, "{v},{:.16e},{:.16e}", p[0], u)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn cell_gradient(mesh: &Mesh, values: &[f64], c: usize) -> DVector<f64> {
    let n = mesh.n();
    let mut g = DVector::zeros(n);
    for (&v, grad) in mesh.cell(c).iter().zip(mesh.shape_gradients(c)) {
        for i in 0..n {
            g[i] += values[v] * grad[i];
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, sufficient_decrease: 1e-4, min_step: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Stop when the max-norm of the energy gradient over free unknowns is
    /// below this value.
    pub tol_residual: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
    /// Relative residual required of each Newton linear solve.
    pub linear_solver_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { tol_residual: 1e-10, max_iter: 50, line_search: LineSearch::default(), linear_solver_tol: 1e-12 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if !(self.tol_residual > 0.0) || self.max_iter < 1 || !(self.linear_solver_tol > 0.0) {
            return Err(Error::Config("solver needs tol_residual > 0, max_iter >= 1, linear_solver_tol > 0".into()));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) || !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(Error::Config("line search parameters must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub energy_trace: Vec<f64>,
    pub free_bc_residual: f64,
    pub converged: bool,
}

fn check_dims(integrand: &EllipticIntegrand, mesh: &Mesh) -> Result<()> {
    if integrand.graph_dim() != mesh.n() {
        return Err(Error::Config(format!(
            "integrand acts on R^{} but the mesh is {}-dimensional",
            integrand.dim(),
            mesh.n()
        )));
    }
    Ok(())
}

/// `sum_K |K| f(Du|_K)`; exact for piecewise-linear `u`.
pub fn energy(integrand: &EllipticIntegrand, u: &GraphFunction) -> f64 {
    energy_of(integrand, u.mesh(), u.values())
}

fn energy_of(integrand: &EllipticIntegrand, mesh: &Mesh, values: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| mesh.cell_measure(c) * integrand.eval_f(&cell_gradient(mesh, values, c)))
        .collect();
    terms.iter().sum()
}

/// `E(b) - E(a)` summed cell by cell, which avoids cancelling two large totals.
fn energy_difference(integrand: &EllipticIntegrand, mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let fa = integrand.eval_f(&cell_gradient(mesh, a, c));
            let fb = integrand.eval_f(&cell_gradient(mesh, b, c));
            mesh.cell_measure(c) * (fb - fa)
        })
        .collect();
    terms.iter().sum()
}

/// Unreduced gradient `sum_K |K| <Df(Du_K), D phi_v>` at every vertex.
fn raw_gradient(integrand: &EllipticIntegrand, mesh: &Mesh, values: &[f64]) -> Vec<f64> {
    let n = mesh.n();
    let local: Vec<Vec<f64>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let df = integrand.grad_f(&cell_gradient(mesh, values, c));
            let w = mesh.cell_measure(c);
            mesh.shape_gradients(c).iter().map(|g| w * (0..n).map(|i| df[i] * g[i]).sum::<f64>()).collect()
        })
        .collect();
    let mut out = vec![0.0; mesh.num_vertices()];
    for (c, contrib) in local.iter().enumerate() {
        for (&v, x) in mesh.cell(c).iter().zip(contrib) {
            out[v] += x;
        }
    }
    out
}

/// Gradient of the discrete energy with respect to the vertex values; zero
/// at DIRICHLET vertices. No boundary flux term is added on the wall.
pub fn energy_gradient(integrand: &EllipticIntegrand, u: &GraphFunction) -> Vec<f64> {
    let mesh = u.mesh();
    let mut g = raw_gradient(integrand, mesh, u.values());
    for (v, gv) in g.iter_mut().enumerate() {
        if mesh.vertex_tag(v) == Tag::Dirichlet {
            *gv = 0.0;
        }
    }
    g
}

/// Weak AMSE residual at INTERIOR vertices divided by the lumped vertex mass,
/// as `(vertex, residual)` pairs.
pub fn amse_residual(integrand: &EllipticIntegrand, u: &GraphFunction) -> Vec<(usize, f64)> {
    let mesh = u.mesh();
    let g = raw_gradient(integrand, mesh, u.values());
    let mass = mesh.lumped_mass();
    (0..mesh.num_vertices())
        .filter(|&v| mesh.vertex_tag(v) == Tag::Interior)
        .map(|v| (v, g[v] / mass[v]))
        .collect()
}

/// Per wall facet, `<Df(Du), e1>` on the adjacent cell (the facet average of
/// a cell-constant field).
pub fn wall_flux(integrand: &EllipticIntegrand, u: &GraphFunction) -> Vec<(usize, f64)> {
    let mesh = u.mesh();
    mesh.wall_facets()
        .into_iter()
        .map(|f| (f, integrand.grad_f(&u.cell_gradient(mesh.facet_cell(f)))[0]))
        .collect()
}

/// Max over wall facets of `|<Df(Du), e1>|`.
pub fn free_bc_residual(integrand: &EllipticIntegrand, u: &GraphFunction) -> f64 {
    wall_flux(integrand, u).into_iter().map(|(_, r)| r.abs()).fold(0.0, f64::max)
}

struct Unknowns {
    of_vertex: Vec<Option<usize>>,
    vertices: Vec<usize>,
}

impl Unknowns {
    fn new(mesh: &Mesh) -> Self {
        let mut of_vertex = vec![None; mesh.num_vertices()];
        let mut vertices = Vec::new();
        for v in 0..mesh.num_vertices() {
            if mesh.vertex_tag(v) != Tag::Dirichlet {
                of_vertex[v] = Some(vertices.len());
                vertices.push(v);
            }
        }
        Self { of_vertex, vertices }
    }
}

fn assemble_hessian(integrand: &EllipticIntegrand, mesh: &Mesh, values: &[f64], unknowns: &Unknowns) -> SkylineMatrix {
    let n = mesh.n();
    let pairs = (0..mesh.num_cells()).flat_map(|c| {
        let idx: Vec<usize> = mesh.cell(c).iter().filter_map(|&v| unknowns.of_vertex[v]).collect();
        let mut p = Vec::with_capacity(idx.len() * idx.len());
        for &a in &idx {
            for &b in &idx {
                p.push((a, b));
            }
        }
        p
    });
    let mut hess = SkylineMatrix::with_pattern(unknowns.vertices.len(), pairs);
    let local: Vec<Vec<f64>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let d2f = integrand.hess_f(&cell_gradient(mesh, values, c));
            let w = mesh.cell_measure(c);
            let grads = mesh.shape_gradients(c);
            let k = grads.len();
            let mut out = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    let mut s = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            s += grads[a][i] * d2f[(i, j)] * grads[b][j];
                        }
                    }
                    out[a * k + b] = w * s;
                }
            }
            out
        })
        .collect();
    for (c, block) in local.iter().enumerate() {
        let verts = mesh.cell(c);
        let k = verts.len();
        for a in 0..k {
            let Some(ia) = unknowns.of_vertex[verts[a]] else { continue };
            for b in 0..=a {
                let Some(ib) = unknowns.of_vertex[verts[b]] else { continue };
                hess.add(ia, ib, block[a * k + b]);
            }
        }
    }
    hess
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton minimization of the discrete energy.
///
/// `dirichlet` holds per-vertex data; only DIRICHLET entries are read. The
/// initial guess is `u0` on free vertices, or zero.
pub fn solve(
    integrand: &EllipticIntegrand,
    mesh: Arc<Mesh>,
    dirichlet: &[f64],
    cfg: &SolveConfig,
    u0: Option<&GraphFunction>,
) -> Result<(GraphFunction, SolveReport)> {
    check_dims(integrand, &mesh)?;
    cfg.validate()?;
    if dirichlet.len() != mesh.num_vertices() {
        return Err(Error::Precondition("Dirichlet data must have one entry per vertex".into()));
    }
    let unknowns = Unknowns::new(&mesh);
    let mut values: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| match mesh.vertex_tag(v) {
            Tag::Dirichlet => dirichlet[v],
            _ => u0.map_or(0.0, |u| u.value(v)),
        })
        .collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("Dirichlet data and initial guess must be finite".into()));
    }

    let reduce = |g: &[f64]| -> Vec<f64> { unknowns.vertices.iter().map(|&v| g[v]).collect() };
    let mut energy_now = energy_of(integrand, &mesh, &values);
    let mut trace = vec![energy_now];
    let mut grad = reduce(&raw_gradient(integrand, &mesh, &values));
    let mut residual = max_abs(&grad);
    let mut iterations = 0;
    let mut converged = residual <= cfg.tol_residual;
    let ls = cfg.line_search;

    while !converged && iterations < cfg.max_iter {
        let hess = assemble_hessian(integrand, &mesh, &values, &unknowns);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (step, _) = solve_spd(&hess, &rhs, cfg.linear_solver_tol)?;
        let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
        let magnitude: f64 = (0..mesh.num_cells()).map(|c| mesh.cell_measure(c)).sum::<f64>() * energy_now.abs().max(1.0);

        let mut t = 1.0;
        let mut accepted = None;
        while t >= ls.min_step {
            let mut trial = values.clone();
            for (k, &v) in unknowns.vertices.iter().enumerate() {
                trial[v] += t * step[k];
            }
            let de = energy_difference(integrand, &mesh, &values, &trial);
            if de.is_finite() && de <= ls.sufficient_decrease * t * slope {
                accepted = Some((trial, None));
                break;
            }
            // Near the minimizer the predicted decrease falls below the
            // rounding level of the energy; take the full step if it reduces
            // the gradient instead.
            if t == 1.0 && slope.abs() <= 1e-13 * magnitude && de.abs() <= 1e-13 * magnitude {
                let g_trial = reduce(&raw_gradient(integrand, &mesh, &trial));
                if max_abs(&g_trial) < residual {
                    accepted = Some((trial, Some(g_trial)));
                    break;
                }
            }
            t *= ls.shrink;
        }
        iterations += 1;
        let Some((trial, g_trial)) = accepted else { break };
        values = trial;
        energy_now = energy_of(integrand, &mesh, &values);
        trace.push(energy_now);
        grad = g_trial.unwrap_or_else(|| reduce(&raw_gradient(integrand, &mesh, &values)));
        residual = max_abs(&grad);
        converged = residual <= cfg.tol_residual;
    }

    let u = GraphFunction::new(mesh, values)?;
    let report = SolveReport {
        iterations,
        final_residual_norm: residual,
        energy_trace: trace,
        free_bc_residual: free_bc_residual(integrand, &u),
        converged,
    };
    Ok((u, report))
}
