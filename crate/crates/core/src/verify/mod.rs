//! Verification checks on solved graphs.
//!
//! Every check returns a [`CheckReport`]. Pass/fail checks compare a worst
//! residual against a tolerance; informational ones only record measured
//! constants. All checks are deterministic functions of their inputs.

mod probes;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::Tag;
use crate::error::Result;
use crate::geometry::{fit_cubic_gradient, GraphGeometry, VertexStatus};
use crate::solver::{amse_residual, SolveConfig};

pub use probes::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Informational,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Informational => "informational",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub status: Status,
    pub worst_residual: f64,
    pub tolerance: Option<f64>,
    pub refinement_rate: Option<f64>,
    pub metadata: BTreeMap<String, Value>,
}

impl CheckReport {
    /// Passes iff `residual <= tolerance` (a NaN residual fails).
    pub fn pass_fail(name: &str, residual: f64, tolerance: f64) -> Self {
        let status = if residual <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            check_name: name.to_string(),
            status,
            worst_residual: residual,
            tolerance: Some(tolerance),
            refinement_rate: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn informational(name: &str, value: f64) -> Self {
        Self {
            check_name: name.to_string(),
            status: Status::Informational,
            worst_residual: value,
            tolerance: None,
            refinement_rate: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metadata.insert(key.to_string(), v);
        self
    }

    pub fn with_rate(mut self, rate: Option<f64>) -> Self {
        self.refinement_rate = rate;
        self
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// Observed convergence order between residuals at mesh sizes `h` and `h/2`.
pub fn observed_rate(coarse: f64, fine: f64) -> Option<f64> {
    let r = (coarse / fine).log2();
    r.is_finite().then_some(r)
}

/// Tolerances for the pass/fail checks. Discretization-limited checks use
/// `constant * h`; the constants were calibrated on the Euclidean
/// free-boundary sine scenario and are kept fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub identity: f64,
    pub wall_condition: f64,
    pub boundary_tangency: f64,
    pub mean_curvature: f64,
    pub first_variation: f64,
    pub principal_direction: f64,
    pub mu_f_lower_bound: f64,
    pub subharmonicity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-10,
            wall_condition: 0.5,
            boundary_tangency: 0.5,
            mean_curvature: 3.0,
            first_variation: 0.1,
            principal_direction: 3.0,
            mu_f_lower_bound: 0.05,
            subharmonicity: 2.0,
        }
    }
}

fn base(report: CheckReport, geom: &GraphGeometry) -> CheckReport {
    report.with("h", geom.mesh().h()).with("integrand", geom.integrand().descriptor())
}

/// `|W_f - F(ν) W|`, the comparability sandwich and the wall frame relations.
pub fn check_discrete_identities(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let (identity, sandwich) = geom.cell_identity_residuals();
    let frame = geom.frame_relation_residual();
    let worst = identity.max(sandwich).max(frame);
    base(CheckReport::pass_fail("discrete_identities", worst, tol.identity), geom)
        .with("w_f_identity", identity)
        .with("comparability_violation", sandwich)
        .with("frame_relations", frame)
}

/// Weak AMSE residual at INTERIOR vertices against `tol_residual / min mass`.
pub fn check_amse_residual(geom: &GraphGeometry, solver: &SolveConfig) -> CheckReport {
    let res = amse_residual(geom.integrand(), geom.graph());
    let worst = res.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    let min_mass = geom.mesh().lumped_mass().into_iter().fold(f64::INFINITY, f64::min);
    base(CheckReport::pass_fail("amse_residual", worst, solver.tol_residual / min_mass), geom)
}

/// `max |<ν_F, e1>|` over wall facets outside the collar.
pub fn check_wall_condition(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let h = geom.mesh().h();
    let r = geom.wall_condition_residual(false);
    base(CheckReport::pass_fail("wall_condition", r, tol.wall_condition * h), geom)
        .with("checked_facets", geom.wall_checked().count())
        .with("including_collar", geom.wall_condition_residual(true))
}

/// `max |g(∇_F W_f, μ)|` over wall facets outside the collar.
pub fn check_boundary_tangency(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let h = geom.mesh().h();
    base(CheckReport::pass_fail("boundary_tangency", geom.boundary_tangency_residual(), tol.boundary_tangency * h), geom)
        .with("checked_facets", geom.wall_checked().count())
}

/// `max |H_F|` over trusted INTERIOR vertices.
pub fn check_mean_curvature(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let h = geom.mesh().h();
    base(CheckReport::pass_fail("mean_curvature", geom.mean_curvature_residual(), tol.mean_curvature * h), geom)
        .with("checked_vertices", geom.curvature_vertices().count())
}

pub fn check_first_variation(geom: &GraphGeometry, tol: &Tolerances) -> Result<CheckReport> {
    let h = geom.mesh().h();
    let fields = geom.default_test_fields();
    let mut worst: f64 = 0.0;
    for f in &fields {
        worst = worst.max(geom.first_variation(f)?.mismatch());
    }
    Ok(base(CheckReport::pass_fail("first_variation", worst, tol.first_variation * h), geom)
        .with("test_fields", fields.len()))
}

/// `max |h_F(μ, τ)|` on the wall; informational for one-dimensional graphs.
pub fn check_principal_direction(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let h = geom.mesh().h();
    match geom.principal_direction_residual() {
        Some(r) => base(CheckReport::pass_fail("principal_direction", r, tol.principal_direction * h), geom),
        None => base(CheckReport::informational("principal_direction", 0.0), geom).with("skipped", "requires n = 2"),
    }
}

/// `<μ_F, -e1> >= m_F - C h` on wall facets outside the collar.
pub fn check_mu_f_lower_bound(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let h = geom.mesh().h();
    let slack = geom.mu_f_lower_bound_slack();
    base(CheckReport::pass_fail("mu_f_lower_bound", (-slack).max(0.0), tol.mu_f_lower_bound * h), geom)
        .with("min_slack", slack)
        .with("m_f", geom.extrema().0)
}

/// Per admissible hat function `ψ_v`: the weak form of
/// `div_Σ(F²∇_F L)` and `∫ψ F² g(∇L, ∇_F L)` for `L = log W_f` of the
/// normalized integrand, and `∫ψ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubharmonicSample {
    pub vertex: usize,
    pub divergence: f64,
    pub quadratic: f64,
    pub mass: f64,
}

impl SubharmonicSample {
    /// `(divergence - quadratic) / mass`; nonnegative for exact solutions.
    pub fn slack(&self) -> f64 {
        (self.divergence - self.quadratic) / self.mass
    }
}

/// Evaluates the subharmonicity pairing against every hat function centred
/// at a non-Dirichlet vertex outside the collar.
pub fn subharmonic_samples(geom: &GraphGeometry) -> Vec<SubharmonicSample> {
    let mesh = geom.mesh();
    let m_f = geom.extrema().0;
    // Normalizing F by m_F scales every term by m_F^-3.
    let s = 1.0 / (m_f * m_f * m_f);
    let l: Vec<f64> = (0..mesh.num_vertices())
        .map(|v| {
            let w_f = match fit_cubic_gradient(mesh, geom.graph().values(), v) {
                Some(du) => geom.integrand().eval_f(&du),
                None => geom.vertex(v).frame.w_f,
            };
            (w_f / m_f).ln()
        })
        .collect();
    let nv = mesh.num_vertices();
    let (mut div, mut quad, mut mass) = (vec![0.0; nv], vec![0.0; nv], vec![0.0; nv]);
    for c in 0..mesh.num_cells() {
        let frame = geom.cell(c);
        let verts = mesh.cell(c);
        let k = verts.len() as f64;
        let dl = crate::geometry::cell_gradient_of(mesh, &l, c);
        let gl = frame.surface_gradient(&dl);
        let agl = &frame.hess_nu * &gl;
        let weight = mesh.cell_measure(c) * frame.w * frame.f_nu * frame.f_nu;
        let q = weight * gl.dot(&agl);
        for (a, grad) in verts.iter().zip(mesh.shape_gradients(c)) {
            let dpsi = nalgebra::DVector::from_iterator(mesh.n(), grad.iter().take(mesh.n()).copied());
            let gpsi = frame.surface_gradient(&dpsi);
            div[*a] -= weight * gpsi.dot(&agl);
            quad[*a] += q / k;
            mass[*a] += mesh.cell_measure(c) * frame.w / k;
        }
    }
    (0..nv)
        .filter(|&v| mesh.vertex_tag(v) != Tag::Dirichlet && geom.vertex(v).status == VertexStatus::Ok)
        .map(|v| SubharmonicSample { vertex: v, divergence: s * div[v], quadratic: s * quad[v], mass: mass[v] })
        .collect()
}

/// Minimum normalized slack of the weak subharmonicity inequality; fails when
/// it falls below `-C h` or a quadratic term is negative.
pub fn check_subharmonicity(geom: &GraphGeometry, tol: &Tolerances) -> CheckReport {
    let samples = subharmonic_samples(geom);
    let min_slack = samples.iter().map(|s| s.slack()).fold(f64::INFINITY, f64::min);
    let negative_quadratic = samples.iter().filter(|s| s.quadratic < 0.0).count();
    let h = geom.mesh().h();
    let mut report = CheckReport::pass_fail("subharmonicity", (-min_slack).max(0.0), tol.subharmonicity * h);
    if negative_quadratic > 0 {
        report.status = Status::Fail;
    }
    base(report, geom)
        .with("min_slack", min_slack)
        .with("test_functions", samples.len())
        .with("negative_quadratic_terms", negative_quadratic)
}

/// Names accepted in scenario check lists.
pub const CHECK_NAMES: &[&str] = &[
    "discrete_identities",
    "amse_residual",
    "wall_condition",
    "boundary_tangency",
    "mean_curvature",
    "first_variation",
    "principal_direction",
    "mu_f_lower_bound",
    "subharmonicity",
    "gradient_estimate",
    "area_growth",
    "functional_inequalities",
    "mean_value",
    "liouville",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HalfDomain, Mesh};
    use crate::geometry::compute_geometry;
    use crate::integrand::EllipticIntegrand;
    use crate::solver::GraphFunction;
    use std::sync::Arc;

    fn flat_capillary(theta: f64) -> GraphGeometry {
        let mesh = Arc::new(Mesh::build(&HalfDomain::rect(1.0, 1.0, 0.0625)).unwrap());
        let c = EllipticIntegrand::capillary(theta, 3).unwrap();
        let u = GraphFunction::from_fn(mesh, |x| -x[0] / theta.tan() + 0.25).unwrap();
        compute_geometry(&c, &u).unwrap()
    }

    #[test]
    fn flat_solutions_pass_everything() {
        let tol = Tolerances::default();
        for theta in [0.5, 1.2, 2.5] {
            let g = flat_capillary(theta);
            let reports = vec![
                check_discrete_identities(&g, &tol),
                check_amse_residual(&g, &SolveConfig::default()),
                check_wall_condition(&g, &tol),
                check_boundary_tangency(&g, &tol),
                check_mean_curvature(&g, &tol),
                check_first_variation(&g, &tol).unwrap(),
                check_principal_direction(&g, &tol),
                check_mu_f_lower_bound(&g, &tol),
                check_subharmonicity(&g, &tol),
            ];
            for r in reports {
                assert_eq!(r.status, Status::Pass, "{r:?}");
                assert!(r.worst_residual <= 1e-10, "{r:?}");
            }
        }
    }

    #[test]
    fn subharmonic_terms_vanish_on_flat_graphs() {
        let g = flat_capillary(1.0);
        for s in subharmonic_samples(&g) {
            assert!(s.divergence.abs() < 1e-12 && s.quadratic.abs() < 1e-12 && s.mass > 0.0);
        }
    }

    #[test]
    fn report_serializes_deterministically() {
        let r = CheckReport::pass_fail("x", 0.1, 0.2).with("b", 1).with("a", "z");
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, serde_json::to_string(&r.clone()).unwrap());
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(CheckReport::pass_fail("nan", f64::NAN, 1.0).failed());
    }

    #[test]
    fn rates() {
        assert_eq!(observed_rate(0.4, 0.1), Some(2.0));
        assert_eq!(observed_rate(0.0, 0.0), None);
    }
}
