//! Scenario files: one JSON document describing an integrand, a domain,
//! Dirichlet data, solver settings and the checks to run.
//!
//! ```json
//! {"name":"flat","integrand":{"kind":"capillary","theta":1.0471975511965976,"dim":3},
//!  "domain":{"n":2,"depth":1.0,"width":1.0,"resolution":0.0625},
//!  "dirichlet":{"type":"affine","a":[-0.5773502691896258,0.0]},
//!  "checks":[{"name":"wall_condition"}],"seed":7}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dirichlet::DirichletSpec;
use crate::domain::{HalfDomain, Mesh};
use crate::error::{Error, Result};
use crate::geometry::{compute_geometry, GraphGeometry};
use crate::integrand::{EllipticIntegrand, IntegrandDescriptor};
use crate::solver::{solve, GraphFunction, SolveConfig, SolveReport};
use crate::verify::{self, CheckReport, LiouvilleParams, Status, Tolerances, CHECK_NAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub integrand: IntegrandDescriptor,
    pub domain: HalfDomain,
    pub dirichlet: DirichletSpec,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

/// A check name with optional parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

/// Everything except the Liouville probe, which solves its own domains.
fn default_checks() -> Vec<CheckSpec> {
    CHECK_NAMES
        .iter()
        .filter(|n| **n != "liouville")
        .map(|n| CheckSpec { name: n.to_string(), params: Value::Null })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    pub x0: Option<Vec<[f64; 2]>>,
    pub radii: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankParams {
    pub count: usize,
}

impl Default for BankParams {
    fn default() -> Self {
        Self { count: 50 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanValueParams {
    pub x0: Option<[f64; 2]>,
    pub r: Option<f64>,
}

/// A parsed check.
#[derive(Clone, Debug, PartialEq)]
pub enum Check {
    DiscreteIdentities,
    AmseResidual,
    WallCondition,
    BoundaryTangency,
    MeanCurvature,
    FirstVariation,
    PrincipalDirection,
    MuFLowerBound,
    Subharmonicity,
    GradientEstimate(ProbeParams),
    AreaGrowth(ProbeParams),
    FunctionalInequalities(BankParams),
    MeanValue(MeanValueParams),
    Liouville(LiouvilleParams),
}

fn params<T: for<'de> Deserialize<'de> + Default>(spec: &CheckSpec) -> Result<T> {
    if spec.params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(spec.params.clone())
        .map_err(|e| Error::Config(format!("parameters of check `{}`: {e}", spec.name)))
}

impl CheckSpec {
    pub fn parse(&self) -> Result<Check> {
        let plain = |c: Check| -> Result<Check> {
            if self.params.is_null() || self.params.as_object().is_some_and(|o| o.is_empty()) {
                Ok(c)
            } else {
                Err(Error::Config(format!("check `{}` takes no parameters", self.name)))
            }
        };
        match self.name.as_str() {
            "discrete_identities" => plain(Check::DiscreteIdentities),
            "amse_residual" => plain(Check::AmseResidual),
            "wall_condition" => plain(Check::WallCondition),
            "boundary_tangency" => plain(Check::BoundaryTangency),
            "mean_curvature" => plain(Check::MeanCurvature),
            "first_variation" => plain(Check::FirstVariation),
            "principal_direction" => plain(Check::PrincipalDirection),
            "mu_f_lower_bound" => plain(Check::MuFLowerBound),
            "subharmonicity" => plain(Check::Subharmonicity),
            "gradient_estimate" => Ok(Check::GradientEstimate(params(self)?)),
            "area_growth" => Ok(Check::AreaGrowth(params(self)?)),
            "functional_inequalities" => Ok(Check::FunctionalInequalities(params(self)?)),
            "mean_value" => Ok(Check::MeanValue(params(self)?)),
            "liouville" => Ok(Check::Liouville(params(self)?)),
            other => Err(Error::Config(format!("unknown check `{other}`"))),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let integrand = self.build_integrand()?;
        if integrand.graph_dim() != self.domain.n {
            return Err(Error::Config(format!(
                "integrand dimension {} does not match a graph over R^{}",
                integrand.dim(),
                self.domain.n
            )));
        }
        self.dirichlet.validate(&self.domain)?;
        self.solver.validate()?;
        for c in &self.checks {
            c.parse()?;
        }
        Ok(())
    }

    pub fn build_integrand(&self) -> Result<EllipticIntegrand> {
        self.integrand.build()
    }

    pub fn parsed_checks(&self) -> Result<Vec<Check>> {
        self.checks.iter().map(CheckSpec::parse).collect()
    }
}

/// A converged solve with its geometry.
pub struct Solved {
    pub integrand: EllipticIntegrand,
    pub solution: GraphFunction,
    pub report: SolveReport,
    pub geometry: GraphGeometry,
}

/// Meshes, solves and computes geometry. Non-convergence is an error.
pub fn solve_scenario(scenario: &Scenario) -> Result<Solved> {
    let integrand = scenario.build_integrand()?;
    let mesh = Arc::new(Mesh::build(&scenario.domain)?);
    let data = scenario.dirichlet.resolve(scenario.domain.n, &|| verify::flat_slope(&integrand))?.sample(&mesh)?;
    let (solution, report) = solve(&integrand, mesh, &data, &scenario.solver, None)?;
    if !report.converged {
        return Err(Error::NotConverged { iterations: report.iterations, residual: report.final_residual_norm });
    }
    let geometry = compute_geometry(&integrand, &solution)?;
    Ok(Solved { integrand, solution, report, geometry })
}

/// Runs every check of the scenario on a solved graph, in listed order.
pub fn run_checks(scenario: &Scenario, solved: &Solved) -> Result<Vec<CheckReport>> {
    let geom = &solved.geometry;
    let tol = &scenario.tolerances;
    let dom = &scenario.domain;
    let mut normalized: Option<GraphGeometry> = None;
    let mut out = Vec::new();
    for check in scenario.parsed_checks()? {
        let report = match check {
            Check::DiscreteIdentities => verify::check_discrete_identities(geom, tol),
            Check::AmseResidual => verify::check_amse_residual(geom, &scenario.solver),
            Check::WallCondition => verify::check_wall_condition(geom, tol),
            Check::BoundaryTangency => verify::check_boundary_tangency(geom, tol),
            Check::MeanCurvature => verify::check_mean_curvature(geom, tol),
            Check::FirstVariation => verify::check_first_variation(geom, tol)?,
            Check::PrincipalDirection => verify::check_principal_direction(geom, tol),
            Check::MuFLowerBound => verify::check_mu_f_lower_bound(geom, tol),
            Check::Subharmonicity => verify::check_subharmonicity(geom, tol),
            Check::GradientEstimate(p) => {
                let (x0, radii) = verify::default_probe_points(dom);
                let x0 = p.x0.unwrap_or(x0);
                let radii = p.radii.unwrap_or(radii);
                verify::gradient_estimate_probe(geom, &x0, &radii).2
            }
            Check::AreaGrowth(p) => {
                let points = p.x0.unwrap_or_else(|| default_area_points(dom));
                let mut worst: Option<CheckReport> = None;
                let mut per_point = Vec::new();
                for x0 in points {
                    let radii = p.radii.clone().unwrap_or_else(|| verify::default_area_radii(geom, x0));
                    let r = verify::area_growth_check(geom, x0, &radii);
                    per_point.push(r.metadata.clone());
                    let replace = match &worst {
                        None => true,
                        Some(w) => rank(&r) > rank(w) || (rank(&r) == rank(w) && r.worst_residual > w.worst_residual),
                    };
                    if replace {
                        worst = Some(r);
                    }
                }
                match worst {
                    Some(w) => w.with("base_points", per_point),
                    None => CheckReport::informational("area_growth", f64::NAN).with("skipped", "no base points"),
                }
            }
            Check::FunctionalInequalities(p) => verify::functional_inequality_diagnostics(geom, scenario.seed, p.count),
            Check::MeanValue(p) => {
                let g = match &normalized {
                    Some(g) => g,
                    None => normalized.insert(compute_geometry(&solved.integrand.normalize(), &solved.solution)?),
                };
                let x0 = p.x0.unwrap_or([0.0, 0.0]);
                let r = p.r.unwrap_or_else(|| 0.9 * dom.dirichlet_distance(x0));
                verify::mean_value_probe(g, x0, r)
            }
            Check::Liouville(p) => verify::liouville_probe(&solved.integrand, &p, &scenario.solver)?.1,
        };
        out.push(report);
    }
    Ok(out)
}

fn rank(r: &CheckReport) -> u8 {
    match r.status {
        Status::Fail => 2,
        Status::Pass => 1,
        Status::Informational => 0,
    }
}

/// Base points on the wall and in the middle of the domain.
fn default_area_points(dom: &HalfDomain) -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [0.5 * dom.depth, 0.0]]
}

/// True when no pass/fail check failed.
pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| !r.failed())
}

/// One JSON object per line, in check order.
pub fn report_jsonl(reports: &[CheckReport]) -> Result<String> {
    let mut s = String::new();
    for r in reports {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// `{:.16e}`, which prints 17 significant digits; NaN and infinities as words.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn summary_csv(reports: &[CheckReport]) -> String {
    let mut s = String::from("check,status,worst_residual,tolerance,refinement_rate\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.check_name,
            r.status.as_str(),
            fmt_f64(r.worst_residual),
            fmt_opt(r.tolerance),
            fmt_opt(r.refinement_rate)
        );
    }
    s
}

/// Writes `solution.csv`, `geometry.csv` and `solve_report.json`.
pub fn write_solution(out_dir: &Path, solved: &Solved) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut w = BufWriter::new(fs::File::create(out_dir.join("solution.csv"))?);
    solved.solution.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(out_dir.join("geometry.csv"))?);
    solved.geometry.write_csv(&mut w)?;
    w.flush()?;
    let mut report = serde_json::to_string_pretty(&solved.report)?;
    report.push('\n');
    fs::write(out_dir.join("solve_report.json"), report)?;
    Ok(())
}

/// Writes `report.jsonl` and `summary.csv`.
pub fn write_reports(out_dir: &Path, reports: &[CheckReport]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.jsonl"), report_jsonl(reports)?)?;
    fs::write(out_dir.join("summary.csv"), summary_csv(reports))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Theta,
    Resolution,
    DomainSize,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(SweepAxis::Theta),
            "resolution" => Ok(SweepAxis::Resolution),
            "domain_size" => Ok(SweepAxis::DomainSize),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (theta, resolution, domain_size)"))),
        }
    }
}

/// The base scenario with `axis` set to `value`.
pub fn with_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario> {
    let mut s = base.clone();
    match axis {
        SweepAxis::Theta => {
            if !s.integrand.kind.eq_ignore_ascii_case("capillary") {
                return Err(Error::Config("a theta sweep needs a capillary integrand".into()));
            }
            s.integrand.theta = Some(value);
        }
        SweepAxis::Resolution => s.domain.resolution = value,
        SweepAxis::DomainSize => {
            s.domain.depth = value;
            if s.domain.n == 2 {
                s.domain.width = value;
            }
        }
    }
    s.name = format!("{}[{}={}]", base.name, axis_name(axis), value);
    s.validate()?;
    Ok(s)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Theta => "theta",
        SweepAxis::Resolution => "resolution",
        SweepAxis::DomainSize => "domain_size",
    }
}

/// One sweep value: its solve and check reports.
pub struct SweepRow {
    pub value: f64,
    pub iterations: usize,
    pub affine_deviation: f64,
    pub reports: Vec<CheckReport>,
}

/// Checks whose residuals are expected to shrink with `h`.
pub const RATE_CHECKS: &[&str] = &[
    "wall_condition",
    "boundary_tangency",
    "mean_curvature",
    "first_variation",
    "principal_direction",
    "mu_f_lower_bound",
    "subharmonicity",
];

/// Solves and checks every value in parallel; rows keep the order of
/// `values`. Resolution sweeps get observed rates between successive rows.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let scenarios = values.iter().map(|&v| with_axis(base, axis, v)).collect::<Result<Vec<_>>>()?;
    let mut rows = scenarios
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, &value)| {
            let solved = solve_scenario(s)?;
            let reports = run_checks(s, &solved)?;
            Ok(SweepRow {
                value,
                iterations: solved.report.iterations,
                affine_deviation: inner_quarter_deviation(&solved),
                reports,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if axis == SweepAxis::Resolution {
        for i in 1..rows.len() {
            let ratio = rows[i - 1].value / rows[i].value;
            for k in 0..rows[i].reports.len() {
                if !RATE_CHECKS.contains(&rows[i].reports[k].check_name.as_str()) {
                    continue;
                }
                let (coarse, fine) = (rows[i - 1].reports[k].worst_residual, rows[i].reports[k].worst_residual);
                if coarse > 0.0 && fine > 0.0 {
                    rows[i].reports[k].refinement_rate = verify::observed_rate(coarse, fine).map(|r| r / ratio.log2());
                }
            }
        }
    }
    Ok(rows)
}

/// Deviation from the best affine fit over `x1 <= L1/4, |x2| <= L2/4`.
fn inner_quarter_deviation(solved: &Solved) -> f64 {
    let mesh = solved.solution.mesh();
    let dom = mesh.domain();
    let inner: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| {
            let x = mesh.coord(v);
            x[0] <= dom.depth / 4.0 * (1.0 + 1e-12) && (dom.n == 1 || x[1].abs() <= dom.width / 4.0 * (1.0 + 1e-12))
        })
        .collect();
    verify::affine_deviation(mesh, solved.solution.values(), &inner)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},iterations,affine_deviation,all_passed", axis_name(axis));
    if let Some(first) = rows.first() {
        for r in &first.reports {
            let n = &r.check_name;
            let _ = write!(s, ",{n}_status,{n}_residual,{n}_rate");
            if n == "gradient_estimate" {
                s.push_str(",gradient_c1,gradient_c2");
            }
        }
    }
    s.push('\n');
    for row in rows {
        let _ = write!(
            s,
            "{},{},{},{}",
            fmt_f64(row.value),
            row.iterations,
            fmt_f64(row.affine_deviation),
            all_passed(&row.reports)
        );
        for r in &row.reports {
            let _ = write!(s, ",{},{},{}", r.status.as_str(), fmt_f64(r.worst_residual), fmt_opt(r.refinement_rate));
            if r.check_name == "gradient_estimate" {
                let get = |k: &str| r.metadata.get(k).and_then(Value::as_f64);
                let _ = write!(s, ",{},{}", fmt_opt(get("c1")), fmt_opt(get("c2")));
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"{"name":"flat","integrand":{"kind":"capillary","theta":1.0471975511965976,"dim":3},
        "domain":{"n":2,"depth":1.0,"width":1.0,"resolution":0.125},
        "dirichlet":{"type":"affine","a":[-0.5773502691896258,0.0]},"seed":3}"#;

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_json(FLAT).unwrap();
        assert_eq!(s.checks.len(), CHECK_NAMES.len() - 1);
        assert_eq!(s.solver, SolveConfig::default());
        assert_eq!(s.seed, 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_theta = FLAT.replace("1.0471975511965976", "4.0");
        assert!(matches!(Scenario::from_json(&bad_theta), Err(Error::InvalidIntegrand(_))));
        let bad_check = FLAT.replace(r#""seed":3"#, r#""seed":3,"checks":[{"name":"nope"}]"#);
        assert!(matches!(Scenario::from_json(&bad_check), Err(Error::Config(_))));
        let bad_params = FLAT.replace(r#""seed":3"#, r#""seed":3,"checks":[{"name":"wall_condition","params":{"x":1}}]"#);
        assert!(Scenario::from_json(&bad_params).is_err());
        let bad_dim = FLAT.replace(r#""dim":3"#, r#""dim":2"#);
        assert!(Scenario::from_json(&bad_dim).is_err());
        assert!(Scenario::from_json("{").is_err());
        assert!(Scenario::from_json(&FLAT.replace("\"seed\"", "\"extra\":1,\"seed\"")).is_err());
    }

    #[test]
    fn flat_scenario_passes() {
        let s = Scenario::from_json(FLAT).unwrap();
        let solved = solve_scenario(&s).unwrap();
        let reports = run_checks(&s, &solved).unwrap();
        assert_eq!(reports.len(), s.checks.len());
        for r in &reports {
            assert!(!r.failed(), "{r:?}");
        }
        let summary = summary_csv(&reports);
        assert_eq!(summary.lines().count(), reports.len() + 1);
    }

    #[test]
    fn sweep_axes() {
        let s = Scenario::from_json(FLAT).unwrap();
        assert!(with_axis(&s, SweepAxis::Theta, 0.5).is_ok());
        assert!(with_axis(&s, SweepAxis::Theta, 4.0).is_err());
        assert!("radius".parse::<SweepAxis>().is_err());
        let mut e = s.clone();
        e.integrand = EllipticIntegrand::euclidean(3).unwrap().descriptor();
        assert!(with_axis(&e, SweepAxis::Theta, 0.5).is_err());
        let mut small = s.clone();
        small.checks = vec![CheckSpec { name: "wall_condition".into(), params: Value::Null }];
        let rows = sweep(&small, SweepAxis::Resolution, &[0.25, 0.125]).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = sweep_csv(SweepAxis::Resolution, &rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("resolution,iterations,affine_deviation,all_passed,wall_condition_status"));
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }
}
