use std::fs;
use std::path::PathBuf;

use aniso_core::scenario::{self, SweepAxis};
use aniso_core::verify::Status;
use aniso_core::Scenario;

fn bundled(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap()
}

#[test]
fn every_bundled_scenario_parses() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}

#[test]
fn capillary_flat_writes_all_outputs() {
    let s = bundled("capillary_flat");
    let solved = scenario::solve_scenario(&s).unwrap();
    let reports = scenario::run_checks(&s, &solved).unwrap();
    assert!(scenario::all_passed(&reports));
    assert!(reports.iter().any(|r| r.status == Status::Pass));
    let dir = tempfile::tempdir().unwrap();
    scenario::write_solution(dir.path(), &solved).unwrap();
    scenario::write_reports(dir.path(), &reports).unwrap();
    for f in ["solution.csv", "geometry.csv", "report.jsonl", "summary.csv", "solve_report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let jsonl = fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), reports.len());
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["check_name"].is_string());
    }
    let solution = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert_eq!(solution.lines().next(), Some("id,x1,x2,u"));
    assert_eq!(solution.lines().count(), solved.solution.mesh().num_vertices() + 1);
}

#[test]
fn theta_sweep_rows_follow_values() {
    let mut s = bundled("capillary_theta_sweep");
    s.domain.resolution = 0.125;
    let values = [0.5, 1.0, 2.0];
    let rows = scenario::sweep(&s, SweepAxis::Theta, &values).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), values);
    let csv = scenario::sweep_csv(SweepAxis::Theta, &rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().next().unwrap().contains("gradient_c1,gradient_c2"));
}

#[test]
fn resolution_sweep_reports_first_order_rates() {
    let mut s = bundled("euclidean_freebdry_sine");
    s.checks.retain(|c| c.name == "wall_condition" || c.name == "boundary_tangency");
    let rows = scenario::sweep(&s, SweepAxis::Resolution, &[1.0 / 16.0, 1.0 / 32.0]).unwrap();
    assert!(rows[0].reports.iter().all(|r| r.refinement_rate.is_none()));
    for r in &rows[1].reports {
        let rate = r.refinement_rate.unwrap();
        assert!(rate > 0.9, "{}: {rate}", r.check_name);
    }
}

#[test]
fn domain_size_sweep_decays_like_liouville() {
    let mut s = bundled("liouville");
    s.checks.retain(|c| c.name != "liouville");
    let rows = scenario::sweep(&s, SweepAxis::DomainSize, &[4.0, 8.0]).unwrap();
    assert!(rows[1].affine_deviation < rows[0].affine_deviation);
}
