//! Anisotropic geometry of a solved graph `Σ = graph(u)`.
//!
//! Cell fields are exact for the piecewise-linear interpolant. Curvature lives
//! at vertices, where second derivatives come from a least-squares quadratic
//! fit over the 2-ring. Ambient vectors have length `n + 1` with the height
//! direction last.
//!
//! Conventions: `ν = (-Du, 1) / W` points upward, `h(X, Y) = <D_X ν, Y>` (so
//! `h_ij = -u_ij / W` in the frame `X_i = (e_i, u_i)`), `h_F = A_F ∘ h` and
//! `H_F = tr_g h_F`, which equals `-f_ij(Du) u_ij`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Mesh, Tag};
use crate::error::{Error, Result};
use crate::integrand::EllipticIntegrand;
use crate::solver::GraphFunction;

/// Singular-value ratio below which a vertex fit is treated as rank deficient.
const FIT_RANK_TOL: f64 = 1e-10;

/// Local frame of the graph at a point with gradient `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFrame {
    pub du: DVector<f64>,
    pub w: f64,
    pub nu: DVector<f64>,
    pub nu_f: DVector<f64>,
    pub f_nu: f64,
    pub w_f: f64,
    /// Induced metric `g_ij = δ_ij + u_i u_j`.
    pub metric: DMatrix<f64>,
    /// Full ambient `D̄²F(ν)`.
    pub hess_nu: DMatrix<f64>,
    /// `A_F` restricted to `TΣ`, written in the coordinate frame.
    pub a_f: DMatrix<f64>,
}

impl GraphFrame {
    pub fn new(integrand: &EllipticIntegrand, du: &DVector<f64>) -> Result<Self> {
        let n = du.len();
        let w = (1.0 + du.norm_squared()).sqrt();
        let mut nu = DVector::zeros(n + 1);
        for i in 0..n {
            nu[i] = -du[i] / w;
        }
        nu[n] = 1.0 / w;
        let nu_f = integrand.grad_big_f(&nu)?;
        let f_nu = integrand.eval_big_f(&nu)?;
        let hess_nu = integrand.hess_big_f(&nu)?;
        let metric = DMatrix::identity(n, n) + du * du.transpose();
        // Tangent vectors X_i = (e_i, u_i) give X^T D̄²F X = G B G with B the
        // leading block, since D̄²F(ν) annihilates ν.
        let b = hess_nu.view((0, 0), (n, n)).into_owned();
        let a_f = &metric * b * &metric;
        Ok(Self { du: du.clone(), w, nu, nu_f, f_nu, w_f: integrand.eval_f(du), metric, hess_nu, a_f })
    }

    pub fn n(&self) -> usize {
        self.du.len()
    }

    /// `g^{-1} = I - p p^T / W^2`.
    pub fn metric_inverse(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::identity(n, n) - &self.du * self.du.transpose() / (self.w * self.w)
    }

    /// Ambient image `(ξ, <Du, ξ>)` of coordinate components `ξ`.
    pub fn push_forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let mut v = DVector::zeros(n + 1);
        v.rows_mut(0, n).copy_from(xi);
        v[n] = self.du.dot(xi);
        v
    }

    /// Ambient surface gradient of a function with Euclidean gradient `dphi`.
    pub fn surface_gradient(&self, dphi: &DVector<f64>) -> DVector<f64> {
        self.push_forward(&(self.metric_inverse() * dphi))
    }

    /// Leading `n × n` block of `D̄²F(ν)`.
    pub fn hess_block(&self) -> DMatrix<f64> {
        let n = self.n();
        self.hess_nu.view((0, 0), (n, n)).into_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexStatus {
    Ok,
    /// Within [`collar_width`] of the Dirichlet boundary; excluded from
    /// curvature checks.
    Collar,
    RankDeficient,
}

#[derive(Clone, Debug)]
pub struct VertexGeometry {
    pub frame: GraphFrame,
    /// Fitted `D²u`.
    pub hessian: DMatrix<f64>,
    /// `h_ij` in the coordinate frame.
    pub h: DMatrix<f64>,
    /// `h_F(X_i, X_j)` in the coordinate frame.
    pub h_f: DMatrix<f64>,
    pub mean_curvature: f64,
    pub h_norm2: f64,
    pub tr_a_h2: f64,
    pub status: VertexStatus,
}

#[derive(Clone, Debug)]
pub struct WallFacetGeometry {
    pub facet: usize,
    pub cell: usize,
    /// Length of the lifted facet on the graph (one for `n = 1`).
    pub lifted_measure: f64,
    pub mu: DVector<f64>,
    pub nu_bar: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub in_collar: bool,
}

/// All geometric fields of a solved graph. Immutable once built.
#[derive(Clone, Debug)]
pub struct GraphGeometry {
    integrand: EllipticIntegrand,
    u: GraphFunction,
    extrema: (f64, f64),
    cells: Vec<GraphFrame>,
    vertices: Vec<VertexGeometry>,
    wall: Vec<WallFacetGeometry>,
}

/// Builds every cell, vertex and wall-facet field.
pub fn compute_geometry(integrand: &EllipticIntegrand, u: &GraphFunction) -> Result<GraphGeometry> {
    let mesh = u.mesh().clone();
    if integrand.graph_dim() != mesh.n() {
        return Err(Error::Config("integrand and mesh dimensions differ".into()));
    }
    let cells = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| GraphFrame::new(integrand, &u.cell_gradient(c)))
        .collect::<Result<Vec<_>>>()?;
    let vertices = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|v| vertex_geometry(integrand, u, v))
        .collect::<Result<Vec<_>>>()?;
    let collar = |v: usize| vertices[v].status == VertexStatus::Collar;
    let wall = mesh
        .wall_facets()
        .into_iter()
        .map(|f| {
            let cell = mesh.facet_cell(f);
            let (mu, nu_bar, mu_f) = wall_frame_at(&cells[cell]);
            let lifted_measure = if mesh.n() == 1 {
                1.0
            } else {
                let p2 = cells[cell].du[1];
                mesh.facet_measure(f) * (1.0 + p2 * p2).sqrt()
            };
            let in_collar = mesh.facet(f).iter().any(|&v| collar(v));
            WallFacetGeometry { facet: f, cell, lifted_measure, mu, nu_bar, mu_f, in_collar }
        })
        .collect();
    Ok(GraphGeometry { integrand: integrand.clone(), u: u.clone(), extrema: integrand.extrema(), cells, vertices, wall })
}

/// Width of the band along the Dirichlet boundary where curvature data is
/// not trusted: `max(2h, min(L1, L2) / 8)`.
pub fn collar_width(mesh: &Mesh) -> f64 {
    let d = mesh.domain();
    let extent = if d.n == 1 { d.depth } else { d.depth.min(d.width) };
    (2.0 * mesh.h()).max(extent / 8.0)
}

/// Least-squares quadratic `u(x0 + d) ≈ c + g·d + d^T H d / 2` over the 2-ring.
/// Returns `(g, H, rank_ok)`.
pub fn fit_quadratic(mesh: &Mesh, values: &[f64], v: usize) -> (DVector<f64>, DMatrix<f64>, bool) {
    let n = mesh.n();
    let ring = mesh.two_ring(v);
    let x0 = mesh.coord(v);
    let h = mesh.h();
    let ncoef = if n == 1 { 3 } else { 6 };
    let mut a = DMatrix::zeros(ring.len(), ncoef);
    let mut b = DVector::zeros(ring.len());
    for (r, &q) in ring.iter().enumerate() {
        let p = mesh.coord(q);
        let d1 = (p[0] - x0[0]) / h;
        b[r] = values[q] - values[v];
        if n == 1 {
            a.row_mut(r).copy_from_slice(&[1.0, d1, 0.5 * d1 * d1]);
        } else {
            let d2 = (p[1] - x0[1]) / h;
            a.row_mut(r).copy_from_slice(&[1.0, d1, d2, 0.5 * d1 * d1, d1 * d2, 0.5 * d2 * d2]);
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_ok = ring.len() >= ncoef && smin > FIT_RANK_TOL * smax;
    let coef = svd.solve(&b, FIT_RANK_TOL * smax).unwrap_or_else(|_| DVector::zeros(ncoef));
    let (g, hess) = if n == 1 {
        (DVector::from_element(1, coef[1] / h), DMatrix::from_element(1, 1, coef[2] / (h * h)))
    } else {
        let g = DVector::from_vec(vec![coef[1] / h, coef[2] / h]);
        let hess = DMatrix::from_row_slice(2, 2, &[coef[3], coef[4], coef[4], coef[5]]) / (h * h);
        (g, hess)
    };
    (g, hess, rank_ok)
}

/// Gradient of the least-squares cubic over the 2-ring, widened to the
/// 3-ring where the 2-ring cannot determine it (next to the wall).
pub fn fit_cubic_gradient(mesh: &Mesh, values: &[f64], v: usize) -> Option<DVector<f64>> {
    (2..=3).find_map(|k| cubic_gradient_on(mesh, values, v, &mesh.ring(v, k)))
}

fn cubic_gradient_on(mesh: &Mesh, values: &[f64], v: usize, ring: &[usize]) -> Option<DVector<f64>> {
    let n = mesh.n();
    let x0 = mesh.coord(v);
    let h = mesh.h();
    let ncoef = if n == 1 { 4 } else { 10 };
    if ring.len() < ncoef {
        return None;
    }
    let mut a = DMatrix::zeros(ring.len(), ncoef);
    let mut b = DVector::zeros(ring.len());
    for (r, &q) in ring.iter().enumerate() {
        let p = mesh.coord(q);
        let d1 = (p[0] - x0[0]) / h;
        b[r] = values[q] - values[v];
        if n == 1 {
            a.row_mut(r).copy_from_slice(&[1.0, d1, d1 * d1, d1 * d1 * d1]);
        } else {
            let d2 = (p[1] - x0[1]) / h;
            a.row_mut(r).copy_from_slice(&[
                1.0,
                d1,
                d2,
                d1 * d1,
                d1 * d2,
                d2 * d2,
                d1 * d1 * d1,
                d1 * d1 * d2,
                d1 * d2 * d2,
                d2 * d2 * d2,
            ]);
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= FIT_RANK_TOL * smax {
        return None;
    }
    let coef = svd.solve(&b, FIT_RANK_TOL * smax).ok()?;
    Some(DVector::from_iterator(n, (1..=n).map(|i| coef[i] / h)))
}

fn vertex_geometry(integrand: &EllipticIntegrand, u: &GraphFunction, v: usize) -> Result<VertexGeometry> {
    let mesh = u.mesh();
    let (du, hessian, rank_ok) = fit_quadratic(mesh, u.values(), v);
    let frame = GraphFrame::new(integrand, &du)?;
    let h = -&hessian / frame.w;
    let b = frame.hess_block();
    let ginv = frame.metric_inverse();
    let h_f = &h * &b * &frame.metric;
    let mean_curvature = (&h * &b).trace();
    let s = &ginv * &h;
    let h_norm2 = (&s * &s).trace();
    let tr_a_h2 = (&ginv * &frame.a_f * &s * &s).trace();
    let collar = mesh.domain().dirichlet_distance(mesh.coord(v)) <= collar_width(mesh) * (1.0 + 1e-9);
    let status = if !rank_ok {
        VertexStatus::RankDeficient
    } else if collar {
        VertexStatus::Collar
    } else {
        VertexStatus::Ok
    };
    Ok(VertexGeometry { frame, hessian, h, h_f, mean_curvature, h_norm2, tr_a_h2, status })
}

/// `(μ, ν̄, μ_F)` for a wall point whose graph frame is `frame`.
pub fn wall_frame_at(frame: &GraphFrame) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = frame.n();
    let nu = &frame.nu;
    let mut e1 = DVector::zeros(n + 1);
    e1[0] = 1.0;
    let t = &e1 - nu * nu[0];
    let mu = -(&t / t.norm());
    let mut nu_bar = DVector::zeros(n + 1);
    for i in 1..n {
        nu_bar[i] = -frame.du[i];
    }
    nu_bar[n] = 1.0;
    nu_bar /= nu_bar.norm();
    let mu_f = &mu * frame.nu_f.dot(nu) - nu * frame.nu_f.dot(&mu);
    (mu, nu_bar, mu_f)
}

/// Largest deviation among the wall frame relations
/// `μ = -<ν,-e1> ν̄ + <μ,-e1>(-e1)`, `<μ_F, ν̄> = -<ν_F, -e1>` and
/// `<μ_F, -e1> = <ν_F, ν̄>`.
pub fn frame_relation_residual(frame: &GraphFrame, mu: &DVector<f64>, nu_bar: &DVector<f64>, mu_f: &DVector<f64>) -> f64 {
    let n = frame.n();
    let mut me1 = DVector::zeros(n + 1);
    me1[0] = -1.0;
    let rebuilt = nu_bar * (-frame.nu.dot(&me1)) + &me1 * mu.dot(&me1);
    let r1 = (mu - rebuilt).amax();
    let r2 = (mu_f.dot(nu_bar) + frame.nu_f.dot(&me1)).abs();
    let r3 = (mu_f.dot(&me1) - frame.nu_f.dot(nu_bar)).abs();
    r1.max(r2).max(r3)
}

/// Test vector field `X(x) = η(x) d` with `η` the nodal interpolant of
/// `(1 - |x - c|^2 / ρ^2)^3_+`, constant in the height direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestField {
    pub center: [f64; 2],
    pub radius: f64,
    pub direction: Vec<f64>,
}

impl TestField {
    pub fn eta(&self, mesh: &Mesh) -> Vec<f64> {
        let n = mesh.n();
        mesh.coords()
            .iter()
            .map(|x| {
                let d2: f64 = (0..n).map(|i| (x[i] - self.center[i]).powi(2)).sum();
                let s = 1.0 - d2 / (self.radius * self.radius);
                if s > 0.0 {
                    s * s * s
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Terms of the anisotropic first variation for one test field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstVariation {
    pub divergence_term: f64,
    pub curvature_term: f64,
    pub wall_term: f64,
}

impl FirstVariation {
    pub fn mismatch(&self) -> f64 {
        (self.divergence_term - self.curvature_term - self.wall_term).abs()
    }
}

/// `∫_K φ ψ` for linear `φ, ψ` on a simplex with `k = n + 1` vertices.
fn p1_product(measure: f64, phi: &[f64], psi: &[f64]) -> f64 {
    let k = phi.len() as f64;
    let diag: f64 = phi.iter().zip(psi).map(|(a, b)| a * b).sum();
    let cross = phi.iter().sum::<f64>() * psi.iter().sum::<f64>();
    measure * (diag + cross) / (k * (k + 1.0))
}

impl GraphGeometry {
    pub fn integrand(&self) -> &EllipticIntegrand {
        &self.integrand
    }

    pub fn graph(&self) -> &GraphFunction {
        &self.u
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.u.mesh()
    }

    /// `(m_F, M_F)` of the integrand.
    pub fn extrema(&self) -> (f64, f64) {
        self.extrema
    }

    pub fn cell(&self, c: usize) -> &GraphFrame {
        &self.cells[c]
    }

    pub fn cells(&self) -> &[GraphFrame] {
        &self.cells
    }

    pub fn vertex(&self, v: usize) -> &VertexGeometry {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[VertexGeometry] {
        &self.vertices
    }

    pub fn wall(&self) -> &[WallFacetGeometry] {
        &self.wall
    }

    /// Wall facets away from the Dirichlet collar.
    pub fn wall_checked(&self) -> impl Iterator<Item = &WallFacetGeometry> {
        self.wall.iter().filter(|w| !w.in_collar)
    }

    /// INTERIOR vertices whose curvature data is trusted.
    pub fn curvature_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        let mesh = self.mesh();
        (0..mesh.num_vertices())
            .filter(move |&v| mesh.vertex_tag(v) == Tag::Interior && self.vertices[v].status == VertexStatus::Ok)
    }

    /// `∫_Σ φ dH^n` for a vertex function, by exact quadrature of the
    /// interpolant against the cell-constant area element.
    pub fn integrate(&self, phi: &[f64]) -> f64 {
        let mesh = self.mesh();
        (0..mesh.num_cells())
            .map(|c| {
                let vals: Vec<f64> = mesh.cell(c).iter().map(|&v| phi[v]).collect();
                mesh.cell_measure(c) * self.cells[c].w * vals.iter().sum::<f64>() / vals.len() as f64
            })
            .sum()
    }

    /// Per-cell `max(|W_f - F(ν) W|)` and the largest violation of
    /// `W_f / M_F <= W <= W_f / m_F`.
    pub fn cell_identity_residuals(&self) -> (f64, f64) {
        let (m, big_m) = self.extrema;
        self.cells.iter().fold((0.0f64, 0.0f64), |(id, cmp), c| {
            let r = (c.w_f - c.f_nu * c.w).abs();
            let lo = c.w_f / big_m - c.w;
            let hi = c.w - c.w_f / m;
            let scale = c.w.max(1.0);
            (id.max(r), cmp.max(lo.max(hi).max(0.0) / scale))
        })
    }

    /// `max |<ν_F, e1>|` over wall facets (all of them when `include_collar`).
    pub fn wall_condition_residual(&self, include_collar: bool) -> f64 {
        self.wall
            .iter()
            .filter(|w| include_collar || !w.in_collar)
            .map(|w| self.cells[w.cell].nu_f[0].abs())
            .fold(0.0, f64::max)
    }

    /// Per-vertex `W_f`, from the fitted gradient.
    pub fn vertex_w_f(&self) -> Vec<f64> {
        self.vertices.iter().map(|v| v.frame.w_f).collect()
    }

    /// `max |g(∇_F W_f, μ)|` over wall facets outside the collar, with `∇`
    /// taken on the wall-adjacent cell.
    pub fn boundary_tangency_residual(&self) -> f64 {
        let w_f = self.vertex_w_f();
        let mesh = self.mesh();
        self.wall_checked()
            .map(|w| {
                let frame = &self.cells[w.cell];
                let grad = frame.surface_gradient(&cell_gradient_of(mesh, &w_f, w.cell));
                (&frame.hess_nu * grad).dot(&w.mu).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max |H_F|` over trusted INTERIOR vertices.
    pub fn mean_curvature_residual(&self) -> f64 {
        self.curvature_vertices().map(|v| self.vertices[v].mean_curvature.abs()).fold(0.0, f64::max)
    }

    /// `max |h_F(μ, τ)|` over wall facets outside the collar, with unit wall
    /// tangent `τ`, using fitted data averaged over the facet end points.
    /// Only defined for two-dimensional graphs.
    pub fn principal_direction_residual(&self) -> Option<f64> {
        let mesh = self.mesh();
        if mesh.n() != 2 {
            return None;
        }
        let mut worst: f64 = 0.0;
        for w in self.wall_checked() {
            let ends = mesh.facet(w.facet);
            let (a, b) = (&self.vertices[ends[0]], &self.vertices[ends[1]]);
            let du = (&a.frame.du + &b.frame.du) / 2.0;
            let hess = (&a.hessian + &b.hessian) / 2.0;
            let Ok(frame) = GraphFrame::new(&self.integrand, &du) else { continue };
            let h = -hess / frame.w;
            let (mu, _, _) = wall_frame_at(&frame);
            let tau = DVector::from_vec(vec![0.0, 1.0]) / (1.0 + du[1] * du[1]).sqrt();
            let xi_mu = mu.rows(0, 2).into_owned();
            let value = (tau.transpose() * &h * frame.hess_block() * &frame.metric * xi_mu)[(0, 0)];
            worst = worst.max(value.abs());
        }
        Some(worst)
    }

    /// Minimum over wall facets outside the collar of `<μ_F, -e1> - m_F`.
    pub fn mu_f_lower_bound_slack(&self) -> f64 {
        let m = self.extrema.0;
        self.wall_checked().map(|w| -w.mu_f[0] - m).fold(f64::INFINITY, f64::min)
    }

    /// Largest wall frame relation residual over all wall facets.
    pub fn frame_relation_residual(&self) -> f64 {
        self.wall
            .iter()
            .map(|w| frame_relation_residual(&self.cells[w.cell], &w.mu, &w.nu_bar, &w.mu_f))
            .fold(0.0, f64::max)
    }

    /// The three terms of `∫ F(ν) div_{Σ,F} X = ∫ H_F <X, ν> + ∮ <X, μ_F>`.
    pub fn first_variation(&self, field: &TestField) -> Result<FirstVariation> {
        let mesh = self.mesh();
        let n = mesh.n();
        if field.direction.len() != n + 1 || !(field.radius > 0.0) {
            return Err(Error::Precondition("test field direction must lie in R^{n+1}".into()));
        }
        let eta = field.eta(mesh);
        if (0..mesh.num_vertices()).any(|v| mesh.vertex_tag(v) == Tag::Dirichlet && eta[v] != 0.0) {
            return Err(Error::Precondition("test field must vanish on the Dirichlet boundary".into()));
        }
        let d = DVector::from_column_slice(&field.direction);
        let hf: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| if v.status == VertexStatus::RankDeficient { 0.0 } else { v.mean_curvature })
            .collect();
        let mut divergence_term = 0.0;
        let mut curvature_term = 0.0;
        for c in 0..mesh.num_cells() {
            let frame = &self.cells[c];
            let deta = cell_gradient_of(mesh, &eta, c);
            let mut ambient = DVector::zeros(n + 1);
            ambient.rows_mut(0, n).copy_from(&deta);
            let integrand = frame.f_nu * d.dot(&ambient) - ambient.dot(&frame.nu_f) * d.dot(&frame.nu);
            divergence_term += mesh.cell_measure(c) * frame.w * integrand;
            let verts = mesh.cell(c);
            let e: Vec<f64> = verts.iter().map(|&v| eta[v]).collect();
            let k: Vec<f64> = verts.iter().map(|&v| hf[v]).collect();
            curvature_term += frame.w * d.dot(&frame.nu) * p1_product(mesh.cell_measure(c), &e, &k);
        }
        let mut wall_term = 0.0;
        for w in &self.wall {
            let ends = mesh.facet(w.facet);
            let mean_eta = ends.iter().map(|&v| eta[v]).sum::<f64>() / ends.len() as f64;
            wall_term += w.lifted_measure * mean_eta * d.dot(&w.mu_f);
        }
        Ok(FirstVariation { divergence_term, curvature_term, wall_term })
    }

    /// Default test fields: a wall-centred and an interior bump, each paired
    /// with every coordinate direction.
    pub fn default_test_fields(&self) -> Vec<TestField> {
        let dom = self.mesh().domain();
        let n = dom.n;
        let (centers, radius) = if n == 1 {
            (vec![[0.0, 0.0]], 0.5 * dom.depth)
        } else {
            let r = 0.45 * dom.depth.min(dom.width);
            (vec![[0.0, 0.0], [0.5 * dom.depth, 0.0]], r)
        };
        let mut out = Vec::new();
        for c in centers {
            for i in 0..=n {
                let mut direction = vec![0.0; n + 1];
                direction[i] = 1.0;
                out.push(TestField { center: c, radius, direction });
            }
        }
        out
    }

    /// Largest first-variation mismatch over the default test fields.
    pub fn first_variation_mismatch(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in self.default_test_fields() {
            worst = worst.max(self.first_variation(&f)?.mismatch());
        }
        Ok(worst)
    }

    /// Writes one row per vertex and per wall facet:
    /// `kind,id,x1,x2,u,W,W_f,H_F,h_norm2,status,nuF_e1,muF_minus_e1`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mesh = self.mesh();
        writeln!(out, "kind,id,x1,x2,u,W,W_f,H_F,h_norm2,status,nuF_e1,muF_minus_e1")?;
        for (v, g) in self.vertices.iter().enumerate() {
            let p = mesh.coord(v);
            let status = match g.status {
                VertexStatus::Ok => "ok",
                VertexStatus::Collar => "collar",
                VertexStatus::RankDeficient => "rank_deficient",
            };
            writeln!(
                out,
                "vertex,{v},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{status},,",
                p[0],
                p[1],
                self.u.value(v),
                g.frame.w,
                g.frame.w_f,
                g.mean_curvature,
                g.h_norm2
            )?;
        }
        for w in &self.wall {
            let ends = mesh.facet(w.facet);
            let mid = ends.iter().fold([0.0, 0.0], |acc, &v| {
                let p = mesh.coord(v);
                [acc[0] + p[0] / ends.len() as f64, acc[1] + p[1] / ends.len() as f64]
            });
            let u_mid = ends.iter().map(|&v| self.u.value(v)).sum::<f64>() / ends.len() as f64;
            let frame = &self.cells[w.cell];
            writeln!(
                out,
                "wall,{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},,,{},{:.16e},{:.16e}",
                w.facet,
                mid[0],
                mid[1],
                u_mid,
                frame.w,
                frame.w_f,
                if w.in_collar { "collar" } else { "ok" },
                frame.nu_f[0],
                -w.mu_f[0]
            )?;
        }
        Ok(())
    }
}

pub(crate) fn cell_gradient_of(mesh: &Mesh, values: &[f64], c: usize) -> DVector<f64> {
    let n = mesh.n();
    let mut g = DVector::zeros(n);
    for (&v, grad) in mesh.cell(c).iter().zip(mesh.shape_gradients(c)) {
        for i in 0..n {
            g[i] += values[v] * grad[i];
        }
    }
    g
}

/// Per-cell ambient `(∇φ, ∇_F φ)` of a vertex function.
pub fn surface_gradient(geom: &GraphGeometry, phi: &[f64]) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mesh = geom.mesh();
    (0..mesh.num_cells())
        .map(|c| {
            let frame = geom.cell(c);
            let grad = frame.surface_gradient(&cell_gradient_of(mesh, phi, c));
            let grad_f = &frame.hess_nu * &grad;
            (grad, grad_f)
        })
        .collect()
}

fn check_weight(mesh: &Mesh, psi: &[f64]) -> Result<()> {
    if psi.len() != mesh.num_vertices() {
        return Err(Error::Precondition("weight must have one value per vertex".into()));
    }
    for (v, &p) in psi.iter().enumerate() {
        if !(p >= 0.0) {
            return Err(Error::Precondition(format!("weight is negative at vertex {v}")));
        }
        if p != 0.0 && mesh.vertex_tag(v) == Tag::Dirichlet {
            return Err(Error::Precondition(format!("weight does not vanish at Dirichlet vertex {v}")));
        }
    }
    Ok(())
}

/// Weak form `-∫_Σ F²(ν) g(∇ψ, ∇_F φ) dH^n` of `∫ ψ div_Σ(F²(ν) ∇_F φ)`,
/// with no wall term.
pub fn weighted_divergence_form(geom: &GraphGeometry, phi: &[f64], psi: &[f64]) -> Result<f64> {
    let mesh = geom.mesh();
    check_weight(mesh, psi)?;
    let terms: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let frame = geom.cell(c);
            let gphi = frame.surface_gradient(&cell_gradient_of(mesh, phi, c));
            let gpsi = frame.surface_gradient(&cell_gradient_of(mesh, psi, c));
            mesh.cell_measure(c) * frame.w * frame.f_nu * frame.f_nu * gpsi.dot(&(&frame.hess_nu * gphi))
        })
        .collect();
    Ok(-terms.iter().sum::<f64>())
}

/// `∫_Σ ψ F²(ν) g(∇φ, ∇_F φ) dH^n`, exact for the interpolants.
pub fn weighted_energy_density(geom: &GraphGeometry, phi: &[f64], psi: &[f64]) -> Result<f64> {
    let mesh = geom.mesh();
    check_weight(mesh, psi)?;
    let terms: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let frame = geom.cell(c);
            let gphi = frame.surface_gradient(&cell_gradient_of(mesh, phi, c));
            let q = gphi.dot(&(&frame.hess_nu * &gphi));
            let mean_psi = mesh.cell(c).iter().map(|&v| psi[v]).sum::<f64>() / mesh.cell(c).len() as f64;
            mesh.cell_measure(c) * frame.w * frame.f_nu * frame.f_nu * q * mean_psi
        })
        .collect();
    Ok(terms.iter().sum())
}
