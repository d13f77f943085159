//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use aniso_core::scenario::{self, SweepAxis};
use aniso_core::solver::{amse_residual, solve};
use aniso_core::verify::{self, LiouvilleParams, Tolerances};
use aniso_core::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario")
}

fn builtins(dim: usize) -> Vec<EllipticIntegrand> {
    let mut a = DMatrix::<f64>::identity(dim, dim);
    a[(0, 0)] = 2.0;
    a[(0, 1)] = 0.5;
    a[(1, 0)] = 0.5;
    vec![
        EllipticIntegrand::euclidean(dim).unwrap(),
        EllipticIntegrand::capillary(PI / 3.0, dim).unwrap(),
        EllipticIntegrand::ellipsoid(a).unwrap(),
        EllipticIntegrand::pnorm(3.0, 0.1, dim).unwrap(),
    ]
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for f in builtins(3) {
        for _ in 0..10_000 {
            let z = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            if z.norm() < 1e-3 {
                continue;
            }
            let t = rng.gen_range(0.1..10.0);
            let v = f.eval_big_f(&z).unwrap();
            let g = f.grad_big_f(&z).unwrap();
            let h = f.hess_big_f(&z).unwrap();
            let euler = (g.dot(&z) - v).abs() / v.abs();
            let homog = (f.eval_big_f(&(&z * t)).unwrap() - t * v).abs() / (t * v).abs();
            let null = (&h * &z).norm() / (h.norm() * z.norm()).max(f64::MIN_POSITIVE);
            worst = worst.max(euler).max(homog).max(null);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9 && elapsed < 1.0, format!("worst relative residual {worst:.2e}, {elapsed:.3} s"))
}

fn criterion_2() -> Outcome {
    let mut cases = vec![(EllipticIntegrand::euclidean(3).unwrap(), vec![0.0, 0.3], 0.0)];
    for theta in [PI / 6.0, PI / 4.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
        cases.push((EllipticIntegrand::capillary(theta, 3).unwrap(), vec![-1.0 / theta.tan(), 0.0], theta.cos()));
    }
    let mut worst_err: f64 = 0.0;
    let mut worst_wall: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut ok = true;
    for (f, a, cos_theta) in cases {
        let start = Instant::now();
        let h = 1.0 / 64.0;
        let mesh = Arc::new(Mesh::build(&HalfDomain::rect(1.0, 0.5, h)).unwrap());
        let exact = DirichletSpec::affine(&a, 0.1);
        let data = exact.sample(&mesh).unwrap();
        let (u, report) = solve(&f, mesh.clone(), &data, &SolveConfig::default(), None).unwrap();
        let truth = exact.sample_everywhere(&mesh).unwrap();
        let err = u.values().iter().zip(&truth).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let geom = compute_geometry(&f, &u).unwrap();
        let wall = geom.wall().iter().map(|w| (geom.cell(w.cell).nu[0] - cos_theta).abs()).fold(0.0, f64::max);
        let secs = start.elapsed().as_secs_f64();
        ok &= report.converged && err <= 1e-10 && wall <= 2.0 * h && secs < 5.0;
        worst_err = worst_err.max(err);
        worst_wall = worst_wall.max(wall);
        slowest = slowest.max(secs);
    }
    ensure(
        ok,
        format!("max error {worst_err:.2e}, max |<nu,e1> - cos theta| {worst_wall:.2e}, slowest {slowest:.2} s"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for f in builtins(2) {
        let oracle = verify::flat_slope(&f).unwrap();
        let mesh = Arc::new(Mesh::build(&HalfDomain::line(1.0, 1.0 / 64.0)).unwrap());
        let data = DirichletSpec::affine(&[0.0], 0.7).sample(&mesh).unwrap();
        let (u, _) = solve(&f, mesh.clone(), &data, &SolveConfig::default(), None).unwrap();
        for c in 0..mesh.num_cells() {
            worst = worst.max((u.cell_gradient(c)[0] - oracle).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max slope deviation {worst:.2e} over 4 integrands"))
}

fn criterion_4() -> Outcome {
    let mesh = Arc::new(Mesh::build(&HalfDomain::rect(1.0, 1.0, 1.0 / 32.0)).unwrap());
    let u = GraphFunction::from_fn(mesh, |x| 0.4 * (2.0 * x[0]).sin() * (PI * x[1]).cos() + 0.3 * x[0] * x[1]).unwrap();
    let e = EllipticIntegrand::euclidean(3).unwrap();
    let mut worst: f64 = 0.0;
    for theta in [PI / 6.0, PI / 3.0, 2.0 * PI / 3.0] {
        let c = EllipticIntegrand::capillary(theta, 3).unwrap();
        for ((v1, a), (v2, b)) in amse_residual(&e, &u).into_iter().zip(amse_residual(&c, &u)) {
            assert_eq!(v1, v2);
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max pointwise difference {worst:.2e}"))
}

/// Solved graphs shared by criteria 5, 7 and 10.
struct Ladder {
    standard: Vec<(f64, GraphGeometry)>,
    others: Vec<GraphGeometry>,
}

fn build_ladder() -> Ladder {
    let base = load("euclidean_freebdry_sine");
    let standard = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
        .iter()
        .map(|&h| {
            let s = scenario::with_axis(&base, SweepAxis::Resolution, h).unwrap();
            (h, scenario::solve_scenario(&s).unwrap().geometry)
        })
        .collect();
    let mut others = vec![scenario::solve_scenario(&load("capillary_flat")).unwrap().geometry];
    let sweep = load("capillary_theta_sweep");
    for theta in [PI / 6.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
        let s = scenario::with_axis(&sweep, SweepAxis::Theta, theta).unwrap();
        others.push(scenario::solve_scenario(&s).unwrap().geometry);
    }
    others.push(scenario::solve_scenario(&load("pnorm_line")).unwrap().geometry);
    Ladder { standard, others }
}

fn criterion_5(ladder: &Ladder) -> Outcome {
    let mut identity: f64 = 0.0;
    let mut sandwich: f64 = 0.0;
    let mut analytic = true;
    let geoms = ladder.standard.iter().map(|(_, g)| g).chain(&ladder.others);
    let mut count = 0;
    let mut closed_form = 0;
    for g in geoms {
        let (i, s) = g.cell_identity_residuals();
        identity = identity.max(i);
        sandwich = sandwich.max(s);
        if let Some(exact) = g.integrand().analytic_extrema() {
            analytic &= exact == g.extrema();
            closed_form += 1;
        }
        count += 1;
    }
    ensure(
        identity <= 1e-12 && sandwich <= 1e-12 && analytic,
        format!(
            "{count} solves ({closed_form} with closed-form m_F, M_F), max |W_f - F(nu)W| {identity:.2e}, sandwich violation {sandwich:.2e}"
        ),
    )
}

fn criterion_6(ladder: &Ladder) -> Outcome {
    let tol = Tolerances::default();
    let residuals: Vec<[f64; 4]> = ladder
        .standard
        .iter()
        .map(|(_, g)| {
            [
                g.boundary_tangency_residual(),
                g.wall_condition_residual(false),
                g.mean_curvature_residual(),
                verify::check_first_variation(g, &tol).unwrap().worst_residual,
            ]
        })
        .collect();
    let names = ["tangency", "wall", "H_F", "first variation"];
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let rates: Vec<f64> = residuals.windows(2).map(|w| verify::observed_rate(w[0][k], w[1][k]).unwrap_or(f64::NAN)).collect();
        ok &= rates.iter().all(|&r| r >= 0.9);
        parts.push(format!("{} {:.2}/{:.2}", names[k], rates[0], rates[1]));
    }
    ensure(ok, format!("rates {}", parts.join(", ")))
}

fn criterion_7(ladder: &Ladder) -> Outcome {
    let (h0, g0) = &ladder.standard[0];
    let s0 = verify::subharmonic_samples(g0).iter().map(|s| s.slack()).fold(f64::INFINITY, f64::min);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut negative = 0;
    let mut total = 0;
    for (h, g) in &ladder.standard {
        let samples = verify::subharmonic_samples(g);
        let min = samples.iter().map(|s| s.slack()).fold(f64::INFINITY, f64::min);
        let bound = -5.0 * s0.abs() * (h / h0);
        ok &= min >= bound;
        negative += samples.iter().filter(|s| s.quadratic < 0.0).count();
        total += samples.len();
        parts.push(format!("{min:.2e} >= {bound:.2e}"));
    }
    ok &= negative == 0;
    ensure(ok, format!("min slack {}; negative quadratic terms {negative}/{total}", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    let base = load("capillary_theta_sweep");
    let mut ok = true;
    let mut worst_drift: f64 = 0.0;
    let mut worst_held: f64 = 1.0;
    for theta in [PI / 6.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
        let mut fits = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let s = scenario::with_axis(&scenario::with_axis(&base, SweepAxis::Theta, theta).unwrap(), SweepAxis::Resolution, h)
                .unwrap();
            let g = scenario::solve_scenario(&s).unwrap().geometry;
            let (x0, radii) = verify::default_probe_points(&s.domain);
            let (_, fit, _) = verify::gradient_estimate_probe(&g, &x0, &radii);
            let Some(fit) = fit else {
                return Err(format!("no finite fit at theta {theta:.4}, h {h}"));
            };
            ok &= fit.c1.is_finite() && fit.c2.is_finite();
            let (hx0, hradii) = verify::held_out_probe_points(&s.domain);
            let (held, _) = verify::gradient_estimate_records(&g, &hx0, &hradii);
            let frac = fit.satisfied_fraction(&held);
            ok &= !held.is_empty() && frac >= 0.95;
            worst_held = worst_held.min(frac);
            fits.push(fit);
        }
        let (a, b) = (fits[0], fits[1]);
        let bound_drift = ((b.c1 - a.c1).exp() - 1.0).abs();
        let c2_drift = if a.c2 == b.c2 { 0.0 } else { (b.c2 - a.c2).abs() / a.c2.abs().max(b.c2.abs()) };
        let drift = bound_drift.max(c2_drift);
        ok &= drift <= 0.2;
        worst_drift = worst_drift.max(drift);
    }
    ensure(ok, format!("worst drift of (e^C1, C2) {worst_drift:.3}, worst held-out fraction {worst_held:.3}"))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let params = LiouvilleParams::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for f in [EllipticIntegrand::euclidean(3).unwrap(), EllipticIntegrand::capillary(PI / 3.0, 3).unwrap()] {
        let (samples, report) = verify::liouville_probe(&f, &params, &SolveConfig::default()).unwrap();
        ok &= !report.failed();
        let d: Vec<String> = samples.iter().map(|s| format!("{:.2e}", s.deviation)).collect();
        parts.push(format!("{} d(R)=[{}]", f.descriptor().kind, d.join(", ")));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    ensure(ok, format!("{}; {secs:.1} s", parts.join("; ")))
}

fn criterion_10(ladder: &Ladder) -> Outcome {
    let flat = &ladder.others[0];
    let flat_fine = {
        let s = scenario::with_axis(&load("capillary_flat"), SweepAxis::Resolution, 1.0 / 64.0).unwrap();
        scenario::solve_scenario(&s).unwrap().geometry
    };
    let curved = &ladder.standard[1].1;
    let mut ok = true;
    let mut slopes = Vec::new();
    for g in [flat, &flat_fine, curved] {
        for x0 in [[0.0, 0.0], [0.5 * g.mesh().domain().depth, 0.0]] {
            let r = verify::area_growth_check(g, x0, &verify::default_area_radii(g, x0));
            let slope = r.metadata["slope"].as_f64().unwrap_or(f64::NAN);
            let usable = r.status != verify::Status::Informational;
            if usable {
                ok &= (1.8..=2.2).contains(&slope);
                slopes.push(format!("{slope:.3}"));
            }
        }
    }
    ok &= slopes.len() >= 4;
    ensure(ok, format!("slopes [{}]", slopes.join(", ")))
}

fn run_outputs(s: &Scenario) -> Vec<u8> {
    let solved = scenario::solve_scenario(s).unwrap();
    let reports = scenario::run_checks(s, &solved).unwrap();
    let mut bytes = scenario::report_jsonl(&reports).unwrap().into_bytes();
    bytes.extend(scenario::summary_csv(&reports).into_bytes());
    solved.solution.write_csv(&mut bytes).unwrap();
    solved.geometry.write_csv(&mut bytes).unwrap();
    bytes
}

fn criterion_11() -> Outcome {
    let names = ["capillary_flat", "euclidean_freebdry_sine", "capillary_theta_sweep", "liouville", "pnorm_line"];
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for name in names {
        let s = load(name);
        let a = run_outputs(&s);
        let b = run_outputs(&s);
        let c = single.install(|| run_outputs(&s));
        if a != b || a != c {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!("{} bundled scenarios byte-identical across repeats and thread counts", names.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |k: usize, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {k:>2}: {tag}  {detail}");
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let ladder = build_ladder();
    report(5, criterion_5(&ladder));
    report(6, criterion_6(&ladder));
    report(7, criterion_7(&ladder));
    report(8, criterion_8());
    report(9, criterion_9());
    report(10, criterion_10(&ladder));
    report(11, criterion_11());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
