//! Probes that measure constants rather than residuals: the gradient
//! estimate, Liouville flatness under domain growth, graph-ball area growth,
//! Sobolev/trace/stability ratios and the mean value inequality.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CheckReport, Status};
use crate::dirichlet::DirichletSpec;
use crate::domain::{HalfDomain, Mesh, Tag};
use crate::error::{Error, Result};
use crate::geometry::{cell_gradient_of, collar_width, GraphGeometry, VertexStatus};
use crate::integrand::EllipticIntegrand;
use crate::solver::{solve, SolveConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimateRecord {
    pub x0: [f64; 2],
    pub r: f64,
    /// `log |Du(x0)|`.
    pub lhs: f64,
    /// `sup_{B_{r,+}(x0)} u - u(x0)`.
    pub osc: f64,
    pub osc_over_r: f64,
}

/// Constants of `log |Du(x0)| <= c1 + c2 * osc / r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientFit {
    pub c1: f64,
    pub c2: f64,
}

impl GradientFit {
    pub fn satisfies(&self, rec: &GradientEstimateRecord) -> bool {
        let bound = self.c1 + self.c2 * rec.osc_over_r;
        rec.lhs <= bound + 1e-12 * (1.0 + bound.abs())
    }

    /// Fraction of `records` satisfying the fitted inequality (one when empty).
    pub fn satisfied_fraction(&self, records: &[GradientEstimateRecord]) -> f64 {
        if records.is_empty() {
            return 1.0;
        }
        records.iter().filter(|r| self.satisfies(r)).count() as f64 / records.len() as f64
    }
}

/// Minimizes `c1 + c2` over `c2 >= 0` subject to every record holding.
///
/// For fixed `c2` the best `c1` is `max_i(lhs_i - c2 s_i)`, so the objective
/// is convex and piecewise linear in `c2`; its minimum sits at `c2 = 0` or
/// where two records are simultaneously tight. Returns `None` when there are
/// no records or the objective is unbounded below (every `s_i > 1`).
pub fn fit_gradient_constants(records: &[GradientEstimateRecord]) -> Option<GradientFit> {
    if records.is_empty() {
        return None;
    }
    let s_min = records.iter().map(|r| r.osc_over_r).fold(f64::INFINITY, f64::min);
    if s_min > 1.0 {
        return None;
    }
    let c1_of = |c2: f64| records.iter().map(|r| r.lhs - c2 * r.osc_over_r).fold(f64::NEG_INFINITY, f64::max);
    let mut candidates = vec![0.0];
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            let ds = a.osc_over_r - b.osc_over_r;
            if ds != 0.0 {
                let c2 = (a.lhs - b.lhs) / ds;
                if c2 > 0.0 && c2.is_finite() {
                    candidates.push(c2);
                }
            }
        }
    }
    let mut best: Option<GradientFit> = None;
    for c2 in candidates {
        let c1 = c1_of(c2);
        if best.map_or(true, |b| c1 + c2 < b.c1 + b.c2 - 1e-15 * (1.0 + (b.c1 + b.c2).abs())) {
            best = Some(GradientFit { c1, c2 });
        }
    }
    best
}

/// Default probe points on a two-dimensional domain: base points on the wall
/// and in the interior, and radii that keep `B_{r,+}(x0)` inside the domain.
pub fn default_probe_points(domain: &HalfDomain) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (l1, l2) = (domain.depth, if domain.n == 2 { domain.width } else { 0.0 });
    let mut x0 = Vec::new();
    for a in [0.0, 0.125, 0.25, 0.375] {
        if domain.n == 1 {
            x0.push([a * l1, 0.0]);
        } else {
            for b in [-0.25, 0.0, 0.25] {
                x0.push([a * l1, b * l2]);
            }
        }
    }
    let extent = if domain.n == 1 { l1 } else { l1.min(l2) };
    let radii = [0.125, 0.1875, 0.25, 0.375, 0.5, 0.625].iter().map(|f| f * extent).collect();
    (x0, radii)
}

/// Probe points staggered against [`default_probe_points`], for checking a
/// fit on records it was not computed from.
pub fn held_out_probe_points(domain: &HalfDomain) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (l1, l2) = (domain.depth, if domain.n == 2 { domain.width } else { 0.0 });
    let mut x0 = Vec::new();
    for a in [0.0625, 0.1875, 0.3125] {
        if domain.n == 1 {
            x0.push([a * l1, 0.0]);
        } else {
            for b in [-0.125, 0.125] {
                x0.push([a * l1, b * l2]);
            }
        }
    }
    let extent = if domain.n == 1 { l1 } else { l1.min(l2) };
    let radii = [0.15, 0.3, 0.45, 0.6].iter().map(|f| f * extent).collect();
    (x0, radii)
}

/// Records for every `(x0, r)` whose half ball stays inside the domain.
/// Returns the records and the number of skipped pairs.
pub fn gradient_estimate_records(
    geom: &GraphGeometry,
    x0_list: &[[f64; 2]],
    r_list: &[f64],
) -> (Vec<GradientEstimateRecord>, usize) {
    let mesh = geom.mesh();
    let u = geom.graph();
    let mut out = Vec::new();
    let mut skipped = 0;
    for &x in x0_list {
        let v0 = mesh.nearest_vertex(x);
        let x0 = mesh.coord(v0);
        let du = u.cell_gradient(mesh.locate(x0)).norm();
        for &r in r_list {
            let inside = r > 0.0 && mesh.domain().dirichlet_distance(x0) >= r * (1.0 - 1e-12);
            if !inside || du == 0.0 {
                skipped += 1;
                continue;
            }
            let ball = mesh.half_ball_vertices(x0, r);
            let sup = ball.iter().map(|&v| u.value(v)).fold(f64::NEG_INFINITY, f64::max);
            let osc = (sup - u.value(v0)).max(0.0);
            out.push(GradientEstimateRecord { x0, r, lhs: du.ln(), osc, osc_over_r: osc / r });
        }
    }
    (out, skipped)
}

/// Fits the gradient-estimate constants on one solved graph (informational).
pub fn gradient_estimate_probe(
    geom: &GraphGeometry,
    x0_list: &[[f64; 2]],
    r_list: &[f64],
) -> (Vec<GradientEstimateRecord>, Option<GradientFit>, CheckReport) {
    let (records, skipped) = gradient_estimate_records(geom, x0_list, r_list);
    let fit = fit_gradient_constants(&records);
    let value = fit.map_or(f64::NAN, |f| f.c1 + f.c2);
    let report = CheckReport::informational("gradient_estimate", value)
        .with("h", geom.mesh().h())
        .with("records", records.len())
        .with("skipped", skipped)
        .with("c1", fit.map(|f| f.c1))
        .with("c2", fit.map(|f| f.c2))
        .with("in_sample_fraction", fit.map(|f| f.satisfied_fraction(&records)));
    (records, fit, report)
}

/// Splits records into in-sample (even positions) and held-out (odd).
pub fn split_records(records: &[GradientEstimateRecord]) -> (Vec<GradientEstimateRecord>, Vec<GradientEstimateRecord>) {
    let (a, b): (Vec<_>, Vec<_>) = records.iter().enumerate().partition(|(i, _)| i % 2 == 0);
    (a.into_iter().map(|(_, r)| *r).collect(), b.into_iter().map(|(_, r)| *r).collect())
}

/// Least-squares affine fit over the given vertices; returns the largest
/// deviation from it.
pub fn affine_deviation(mesh: &Mesh, values: &[f64], vertices: &[usize]) -> f64 {
    let n = mesh.n();
    let mut a = DMatrix::zeros(vertices.len(), n + 1);
    let mut b = DVector::zeros(vertices.len());
    for (r, &v) in vertices.iter().enumerate() {
        let x = mesh.coord(v);
        a[(r, 0)] = 1.0;
        for i in 0..n {
            a[(r, i + 1)] = x[i];
        }
        b[r] = values[v];
    }
    let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap_or_else(|_| DVector::zeros(n + 1));
    (a * coef - b).amax()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleSample {
    pub domain_size: f64,
    pub deviation: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiouvilleParams {
    pub sizes: Vec<f64>,
    pub resolution: f64,
    pub bump_height: f64,
    pub bump_radius: f64,
    /// Deviation allowed at the largest size, as a fraction of the bump height.
    pub flat_fraction: f64,
}

impl Default for LiouvilleParams {
    fn default() -> Self {
        Self { sizes: vec![4.0, 8.0, 16.0], resolution: 0.25, bump_height: 1.0, bump_radius: 1.0, flat_fraction: 0.05 }
    }
}

/// Slope `a = (a1, 0)` of the flat solution of the free-boundary problem
/// for `integrand`, i.e. the root of `<Df(a), e1> = 0` found by bisection.
pub fn flat_slope(integrand: &EllipticIntegrand) -> Result<f64> {
    let n = integrand.graph_dim();
    let g = |s: f64| {
        let mut y = DVector::zeros(n);
        y[0] = s;
        integrand.grad_f(&y)[0]
    };
    // f restricted to the e1 line is convex, so g is nondecreasing.
    let (mut lo, mut hi) = (-1.0, 1.0);
    while g(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e8 {
            return Err(Error::Precondition("no flat free-boundary slope".into()));
        }
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Precondition("no flat free-boundary slope".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves on `[0, R] x [-R, R]` with data `<a, x> + bump` near `(R, 0)` and
/// measures the inner-quarter deviation from the best affine fit.
///
/// Passes when the deviation strictly decreases with `R` and ends below
/// `flat_fraction * bump_height`.
pub fn liouville_probe(
    integrand: &EllipticIntegrand,
    params: &LiouvilleParams,
    solver: &SolveConfig,
) -> Result<(Vec<LiouvilleSample>, CheckReport)> {
    if integrand.graph_dim() != 2 {
        return Err(Error::Config("the Liouville probe needs a two-dimensional graph".into()));
    }
    if params.sizes.is_empty() || params.sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("Liouville sizes must be increasing".into()));
    }
    let a1 = flat_slope(integrand)?;
    let data = DirichletSpec::Sum {
        terms: vec![
            DirichletSpec::affine(&[a1, 0.0], 0.0),
            DirichletSpec::FarBump { radius: params.bump_radius, height: params.bump_height },
        ],
    };
    let mut samples = Vec::new();
    for &size in &params.sizes {
        let mesh = Arc::new(Mesh::build(&HalfDomain::rect(size, size, params.resolution))?);
        let values = data.sample(&mesh)?;
        let (u, report) = solve(integrand, mesh.clone(), &values, solver, None)?;
        if !report.converged {
            return Err(Error::NotConverged { iterations: report.iterations, residual: report.final_residual_norm });
        }
        let quarter = size / 4.0;
        let inner: Vec<usize> = (0..mesh.num_vertices())
            .filter(|&v| {
                let x = mesh.coord(v);
                x[0] <= quarter * (1.0 + 1e-12) && x[1].abs() <= quarter * (1.0 + 1e-12)
            })
            .collect();
        samples.push(LiouvilleSample {
            domain_size: size,
            deviation: affine_deviation(&mesh, u.values(), &inner),
            iterations: report.iterations,
        });
    }
    let decreasing = samples.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let last = samples.last().map_or(f64::NAN, |s| s.deviation);
    let mut report = CheckReport::pass_fail("liouville", last, params.flat_fraction * params.bump_height.abs());
    if !decreasing {
        report.status = Status::Fail;
    }
    let report = report
        .with("slope_a1", a1)
        .with("strictly_decreasing", decreasing)
        .with("samples", &samples)
        .with("integrand", integrand.descriptor());
    Ok((samples, report))
}

/// `H^n` of the graph ball of radius `r` around the graph point over `x0`,
/// counting cells whose barycenter image lies in the ball.
pub fn graph_ball_measure(geom: &GraphGeometry, x0: [f64; 2], r: f64) -> f64 {
    let (center, _) = graph_point(geom, x0);
    let mesh = geom.mesh();
    (0..mesh.num_cells())
        .filter(|&c| in_ball(geom, c, &center, r))
        .map(|c| mesh.cell_measure(c) * geom.cell(c).w)
        .sum()
}

fn graph_point(geom: &GraphGeometry, x0: [f64; 2]) -> ([f64; 3], usize) {
    let mesh = geom.mesh();
    let v = mesh.nearest_vertex(x0);
    let x = mesh.coord(v);
    ([x[0], x[1], geom.graph().value(v)], v)
}

fn cell_point(geom: &GraphGeometry, c: usize) -> [f64; 3] {
    let mesh = geom.mesh();
    let b = mesh.cell_barycenter(c);
    let cell = mesh.cell(c);
    let u = cell.iter().map(|&v| geom.graph().value(v)).sum::<f64>() / cell.len() as f64;
    [b[0], b[1], u]
}

fn in_ball(geom: &GraphGeometry, c: usize, center: &[f64; 3], r: f64) -> bool {
    let p = cell_point(geom, c);
    let d2: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
    d2 <= r * r
}

/// Radii `r_max / 2^k` down to four mesh sizes, with `r_max` just inside the
/// Dirichlet boundary as seen from `x0`.
pub fn default_area_radii(geom: &GraphGeometry, x0: [f64; 2]) -> Vec<f64> {
    let mesh = geom.mesh();
    let r_max = 0.9 * mesh.domain().dirichlet_distance(x0);
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= 4.0 * mesh.h() && out.len() < 6 {
        out.push(r);
        r /= 2.0;
    }
    out.reverse();
    out
}

/// Log-log slope of graph-ball area against radius.
pub fn area_growth_check(geom: &GraphGeometry, x0: [f64; 2], r_list: &[f64]) -> CheckReport {
    let n = geom.mesh().n() as f64;
    let (center, _) = graph_point(geom, x0);
    let usable: Vec<(f64, f64)> = r_list
        .iter()
        .filter(|&&r| r > 0.0 && geom.mesh().domain().dirichlet_distance([center[0], center[1]]) >= r)
        .map(|&r| (r, graph_ball_measure(geom, x0, r)))
        .filter(|(_, m)| *m > 0.0)
        .collect();
    let ratios: Vec<f64> = usable.iter().map(|(r, m)| m / r.powf(n)).collect();
    let c_lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c_hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slope = log_log_slope(&usable);
    let report = if usable.len() < 3 {
        CheckReport::informational("area_growth", slope)
    } else {
        CheckReport::pass_fail("area_growth", (slope - n).abs(), 0.2)
    };
    report
        .with("h", geom.mesh().h())
        .with("x0", [center[0], center[1]])
        .with("slope", slope)
        .with("radii", usable.iter().map(|p| p.0).collect::<Vec<_>>())
        .with("measures", usable.iter().map(|p| p.1).collect::<Vec<_>>())
        .with("c_star_lower", c_lo)
        .with("c_star_upper", c_hi)
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Complete homogeneous symmetric polynomial of degree `k` in `xs`.
fn complete_homogeneous(xs: &[f64], k: usize) -> f64 {
    // h_k(x_1..x_m) via the recurrence over variables.
    let mut h = vec![0.0; k + 1];
    h[0] = 1.0;
    for &x in xs {
        for d in 1..=k {
            h[d] += x * h[d - 1];
        }
    }
    h[k]
}

/// `∫_K φ^k` for linear `φ` on an `n`-simplex with vertex values `vals`.
pub fn p1_power_integral(measure: f64, vals: &[f64], k: usize) -> f64 {
    let n = vals.len() - 1;
    let mut coeff = 1.0;
    // n! k! / (k + n)!
    for j in 1..=n {
        coeff *= j as f64 / (k + j) as f64;
    }
    measure * coeff * complete_homogeneous(vals, k)
}

/// Compactly supported vertex functions vanishing on the Dirichlet collar:
/// random smooth bumps and tensor-product hats, reproducible from `seed`.
pub fn test_function_bank(geom: &GraphGeometry, seed: u64, count: usize) -> (Vec<Vec<f64>>, usize) {
    let mesh = geom.mesh();
    let dom = mesh.domain();
    let collar = collar_width(mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = Vec::new();
    let mut rejected = 0;
    let reach_x = dom.depth - collar;
    let reach_y = if dom.n == 2 { dom.width - collar } else { 0.0 };
    let mut attempts = 0;
    while bank.len() < count && attempts < 20 * count {
        attempts += 1;
        let cx = rng.gen_range(0.0..reach_x * 0.8);
        let cy = if dom.n == 2 { rng.gen_range(-reach_y * 0.8..reach_y * 0.8) } else { 0.0 };
        let radius = rng.gen_range(3.0 * mesh.h()..(0.5 * reach_x).max(3.5 * mesh.h()));
        let tensor = bank.len() % 2 == 1;
        let phi: Vec<f64> = mesh
            .coords()
            .iter()
            .map(|x| {
                let dx = (x[0] - cx) / radius;
                let dy = if dom.n == 2 { (x[1] - cy) / radius } else { 0.0 };
                if tensor {
                    (1.0 - dx.abs()).max(0.0) * (1.0 - dy.abs()).max(0.0)
                } else {
                    (1.0 - dx * dx - dy * dy).max(0.0).powi(2)
                }
            })
            .collect();
        let supported = (0..mesh.num_vertices())
            .all(|v| phi[v] == 0.0 || (mesh.vertex_tag(v) != Tag::Dirichlet && geom.vertex(v).status == VertexStatus::Ok));
        if supported && phi.iter().any(|&p| p > 0.0) {
            bank.push(phi);
        } else {
            rejected += 1;
        }
    }
    (bank, rejected)
}

/// Trace, stability and Sobolev ratios of one test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRatios {
    pub trace: f64,
    pub stability: f64,
    pub sobolev: [f64; 3],
}

pub fn functional_ratios(geom: &GraphGeometry, phi: &[f64]) -> FunctionalRatios {
    let mesh = geom.mesh();
    let n = mesh.n();
    let dom = mesh.domain();
    let scale = if n == 1 { dom.depth } else { dom.depth.min(dom.width) };
    let (mut grad_l1, mut grad_l2, mut phi2, mut phi_h2, mut phi_pow) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut phi_max: f64 = 0.0;
    for c in 0..mesh.num_cells() {
        let frame = geom.cell(c);
        let area = mesh.cell_measure(c) * frame.w;
        let g = frame.surface_gradient(&cell_gradient_of(mesh, phi, c)).norm();
        grad_l1 += area * g;
        grad_l2 += area * g * g;
        let vals: Vec<f64> = mesh.cell(c).iter().map(|&v| phi[v]).collect();
        let p2 = p1_power_integral(area, &vals, 2);
        phi2 += p2;
        let h2 = mesh.cell(c).iter().map(|&v| geom.vertex(v).h_norm2).sum::<f64>() / vals.len() as f64;
        phi_h2 += p2 * h2;
        if n == 2 {
            phi_pow += p1_power_integral(area, &vals, 4);
        }
        phi_max = vals.iter().copied().fold(phi_max, f64::max);
    }
    let mut boundary = 0.0;
    for w in geom.wall() {
        let ends = mesh.facet(w.facet);
        boundary += w.lifted_measure * ends.iter().map(|&v| phi[v]).sum::<f64>() / ends.len() as f64;
    }
    let lhs_sobolev = if n == 2 { phi_pow.sqrt() } else { phi_max };
    let sobolev = [0.25, 0.5, 1.0].map(|f| {
        let r = f * scale;
        lhs_sobolev / (phi2 / r + r * grad_l2)
    });
    FunctionalRatios { trace: boundary / grad_l1, stability: phi_h2 / grad_l2, sobolev }
}

/// Largest trace, stability and Sobolev ratios over a seeded bank of at
/// least 50 test functions (informational).
pub fn functional_inequality_diagnostics(geom: &GraphGeometry, seed: u64, count: usize) -> CheckReport {
    let (bank, rejected) = test_function_bank(geom, seed, count.max(50));
    let mut max = FunctionalRatios { trace: 0.0, stability: 0.0, sobolev: [0.0; 3] };
    for phi in &bank {
        let r = functional_ratios(geom, phi);
        max.trace = max.trace.max(r.trace);
        max.stability = max.stability.max(r.stability);
        for i in 0..3 {
            max.sobolev[i] = max.sobolev[i].max(r.sobolev[i]);
        }
    }
    let finite = max.trace.is_finite() && max.stability.is_finite() && max.sobolev.iter().all(|s| s.is_finite());
    let mut report = CheckReport::informational("functional_inequalities", max.trace.max(max.stability))
        .with("h", geom.mesh().h())
        .with("seed", seed)
        .with("bank_size", bank.len())
        .with("rejected", rejected)
        .with("max_trace_ratio", max.trace)
        .with("max_stability_ratio", max.stability)
        .with("max_sobolev_ratio", max.sobolev);
    if !finite || bank.len() < 50 {
        report.status = Status::Fail;
    }
    report
}

/// `sup_{B_{r/2}} log W_f` over the averaged `L^1` norm on `B_r`, with the
/// normalized integrand. Skipped (informational) when the ball leaves the
/// domain or is too small for the mesh.
pub fn mean_value_probe(geom: &GraphGeometry, x0: [f64; 2], r: f64) -> CheckReport {
    let mesh = geom.mesh();
    let (center, _) = graph_point(geom, x0);
    let base = |value: f64| CheckReport::informational("mean_value", value).with("h", mesh.h()).with("x0", x0).with("r", r);
    if mesh.domain().dirichlet_distance([center[0], center[1]]) < r || r < 4.0 * mesh.h() {
        return base(f64::NAN).with("skipped", "ball leaves the domain or is below the mesh scale");
    }
    let m_f = geom.extrema().0;
    let l: Vec<f64> = geom.vertices().iter().map(|v| (v.frame.w_f / m_f).ln().max(0.0)).collect();
    let mut sup: f64 = 0.0;
    for v in 0..mesh.num_vertices() {
        let x = mesh.coord(v);
        let p = [x[0], x[1], geom.graph().value(v)];
        let d2: f64 = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum();
        if d2 <= 0.25 * r * r {
            sup = sup.max(l[v]);
        }
    }
    let (mut integral, mut measure) = (0.0, 0.0);
    for c in 0..mesh.num_cells() {
        if in_ball(geom, c, &center, r) {
            let area = mesh.cell_measure(c) * geom.cell(c).w;
            let verts = mesh.cell(c);
            integral += area * verts.iter().map(|&v| l[v]).sum::<f64>() / verts.len() as f64;
            measure += area;
        }
    }
    let mean = integral / measure;
    let scale = sup.max(mean);
    let ratio = if scale <= 1e-14 { 1.0 } else { sup / mean };
    base(ratio).with("sup_half_ball", sup).with("mean_ball", mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compute_geometry;
    use crate::solver::GraphFunction;
    use std::f64::consts::PI;

    fn flat(u: impl Fn([f64; 2]) -> f64, integrand: &EllipticIntegrand, h: f64) -> GraphGeometry {
        let mesh = Arc::new(Mesh::build(&HalfDomain::rect(1.0, 1.0, h)).unwrap());
        compute_geometry(integrand, &GraphFunction::from_fn(mesh, u).unwrap()).unwrap()
    }

    fn rec(lhs: f64, s: f64) -> GradientEstimateRecord {
        GradientEstimateRecord { x0: [0.0, 0.0], r: 1.0, lhs, osc: s, osc_over_r: s }
    }

    #[test]
    fn fit_examples() {
        // Constant lhs: c2 = 0, c1 = lhs.
        let f = fit_gradient_constants(&[rec(0.3, 0.1), rec(0.3, 0.5)]).unwrap();
        assert_eq!((f.c1, f.c2), (0.3, 0.0));
        // Two tight lines meet at c2 = 0.5.
        let recs = [rec(0.0, 0.0), rec(1.0, 2.0), rec(0.2, 0.5)];
        let f = fit_gradient_constants(&recs).unwrap();
        assert!((f.c2 - 0.5).abs() < 1e-15 && f.c1.abs() < 1e-15);
        assert_eq!(f.satisfied_fraction(&recs), 1.0);
        assert!(fit_gradient_constants(&[rec(1.0, 2.0)]).is_none());
        assert!(fit_gradient_constants(&[]).is_none());
    }

    #[test]
    fn fit_is_optimal_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<_> = (0..30).map(|_| rec(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..3.0))).collect();
        let f = fit_gradient_constants(&recs).unwrap();
        assert_eq!(f.satisfied_fraction(&recs), 1.0);
        for k in 0..2000 {
            let c2 = k as f64 * 0.005;
            let c1 = recs.iter().map(|r| r.lhs - c2 * r.osc_over_r).fold(f64::NEG_INFINITY, f64::max);
            assert!(c1 + c2 >= f.c1 + f.c2 - 1e-12);
        }
    }

    #[test]
    fn affine_records_fit_with_log_slope() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let g = flat(|x| 0.7 * x[1], &e, 0.0625);
        let (x0, r) = default_probe_points(g.mesh().domain());
        let (recs, fit, report) = gradient_estimate_probe(&g, &x0, &r);
        assert!(!recs.is_empty());
        assert_eq!(report.status, Status::Informational);
        let fit = fit.unwrap();
        assert!((fit.c1 - 0.7f64.ln()).abs() < 1e-12 && fit.c2 == 0.0);
        // Bounds e^{c1 + c2 osc/r} tighten as r grows for bounded data.
        for pair in recs.windows(2).filter(|w| w[0].x0 == w[1].x0) {
            assert!(pair[1].osc_over_r <= pair[0].osc_over_r + 1e-12);
        }
    }

    #[test]
    fn flat_slope_matches_capillary_closed_form() {
        for theta in [PI / 6.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
            let c = EllipticIntegrand::capillary(theta, 3).unwrap();
            assert!((flat_slope(&c).unwrap() + 1.0 / theta.tan()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_perturbation_liouville_is_exact() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let params = LiouvilleParams { sizes: vec![2.0, 4.0], resolution: 0.5, bump_height: 0.0, ..Default::default() };
        let (samples, report) = liouville_probe(&e, &params, &SolveConfig::default()).unwrap();
        assert!(samples.iter().all(|s| s.deviation < 1e-10));
        assert!(report.failed(), "not strictly decreasing at zero");
    }

    #[test]
    fn flat_area_growth() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let g = flat(|_| 0.0, &e, 1.0 / 64.0);
        let m = graph_ball_measure(&g, [0.5, 0.0], 0.25);
        assert!((m - PI * 0.0625).abs() < 0.01);
        let m = graph_ball_measure(&g, [0.0, 0.0], 0.25);
        assert!((m - PI * 0.0625 / 2.0).abs() < 0.01);
        for x0 in [[0.0, 0.0], [0.5, 0.0]] {
            let r = area_growth_check(&g, x0, &default_area_radii(&g, x0));
            assert_eq!(r.status, Status::Pass, "{r:?}");
        }
    }

    #[test]
    fn power_integrals() {
        // Unit right triangle, φ = x: ∫x^2 = 1/12.
        assert!((p1_power_integral(0.5, &[0.0, 1.0, 0.0], 2) - 1.0 / 12.0).abs() < 1e-15);
        assert!((p1_power_integral(0.5, &[1.0, 1.0, 1.0], 4) - 0.5).abs() < 1e-15);
        assert!((p1_power_integral(2.0, &[0.0, 1.0], 3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_hat_on_flat_graph() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let h = 0.125;
        let g = flat(|_| 0.0, &e, h);
        let mesh = g.mesh();
        let v = mesh.nearest_vertex([0.5, 0.0]);
        let mut phi = vec![0.0; mesh.num_vertices()];
        phi[v] = 1.0;
        let r = functional_ratios(&g, &phi);
        assert_eq!(r.stability, 0.0);
        assert_eq!(r.trace, 0.0);
        // Hat on the type-1 triangulation: ∫|∇φ|² = 4, ∫φ² = h²/2, ∫φ⁴ = h²/5.
        let lhs = (h * h / 5.0f64).sqrt();
        let expected = lhs / (h * h / 2.0 / 0.25 + 0.25 * 4.0);
        assert!((r.sobolev[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn bank_is_seeded_and_supported() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let g = flat(|x| 0.1 * x[0], &e, 0.0625);
        let (a, _) = test_function_bank(&g, 7, 50);
        let (b, _) = test_function_bank(&g, 7, 50);
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        let report = functional_inequality_diagnostics(&g, 7, 50);
        assert_eq!(report.status, Status::Informational);
    }

    #[test]
    fn mean_value_on_flat_graphs() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let g = flat(|_| 0.0, &e, 0.0625);
        assert_eq!(mean_value_probe(&g, [0.25, 0.0], 0.5).worst_residual, 1.0);
        let theta = PI / 3.0;
        let c = EllipticIntegrand::capillary(theta, 3).unwrap();
        let g = flat(|x| -x[0] / theta.tan(), &c, 0.0625);
        let r = mean_value_probe(&g, [0.0, 0.0], 0.5);
        assert!((r.worst_residual - 1.0).abs() < 1e-12, "{r:?}");
    }
}
