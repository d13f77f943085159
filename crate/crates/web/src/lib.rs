//! Browser bindings used by `www/index.html`.
//!
//! Each export is a thin wrapper over a plain Rust function so the logic can
//! be tested natively.

use std::f64::consts::PI;

use aniso_core::scenario::{self, Solved};
use aniso_core::verify::flat_slope;
use aniso_core::{DirichletSpec, EllipticIntegrand, HalfDomain, Result, Scenario, SolveConfig};
use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

/// Nodal heights of a solved capillary graph on `[0,1] x [-1,1]`, row-major
/// with `x1` varying fastest.
#[wasm_bindgen]
pub struct Heightmap {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    iterations: usize,
    wall_residual: f64,
}

#[wasm_bindgen]
impl Heightmap {
    /// Vertices along `x1`.
    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.nx + 1
    }

    /// Vertices along `x2`.
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.ny + 1
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Worst `|nu_F . e1|` on wall facets outside the corner collars.
    #[wasm_bindgen(getter)]
    pub fn wall_residual(&self) -> f64 {
        self.wall_residual
    }
}

fn js(e: aniso_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn integrand(kind: &str, param: f64, dim: usize) -> Result<EllipticIntegrand> {
    match kind {
        "euclidean" => EllipticIntegrand::euclidean(dim),
        "capillary" => EllipticIntegrand::capillary(param, dim),
        "pnorm" => EllipticIntegrand::pnorm(param, 0.01, dim),
        "ellipsoid" if dim == 2 => {
            EllipticIntegrand::ellipsoid(DMatrix::from_row_slice(2, 2, &[1.0, param, param, 1.0]))
        }
        _ => Err(aniso_core::Error::Config(format!("unknown integrand `{kind}`"))),
    }
}

pub fn solve_capillary(theta: f64, amplitude: f64, resolution: f64) -> Result<Heightmap> {
    let s = Scenario {
        name: "web".into(),
        integrand: EllipticIntegrand::capillary(theta, 3)?.descriptor(),
        domain: HalfDomain::rect(1.0, 1.0, resolution),
        dirichlet: DirichletSpec::Sum {
            terms: vec![
                DirichletSpec::FlatAffine { b: 0.0 },
                DirichletSpec::Sine { amplitude, wavenumber: PI, axis: 2 },
            ],
        },
        solver: SolveConfig::default(),
        checks: Vec::new(),
        tolerances: Default::default(),
        seed: 0,
    };
    s.validate()?;
    let Solved { solution, report, geometry, .. } = scenario::solve_scenario(&s)?;
    let (nx, ny) = solution.mesh().grid_size();
    Ok(Heightmap {
        nx,
        ny,
        values: solution.values().to_vec(),
        iterations: report.iterations,
        wall_residual: geometry.wall_condition_residual(false),
    })
}

/// Radius of the unit ball `{F <= 1}` in the `(e1, e2)` plane at `samples`
/// equally spaced angles starting from `e1`.
pub fn unit_ball_radii(kind: &str, param: f64, samples: usize) -> Result<Vec<f64>> {
    let f = integrand(kind, param, 2)?;
    (0..samples)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / samples as f64;
            let z = DVector::from_vec(vec![phi.cos(), phi.sin()]);
            Ok(1.0 / f.eval_big_f(&z)?)
        })
        .collect()
}

/// Slope of the 1D solve on `[0, depth]` with `u(depth) = 0` next to the
/// bisection root of `f'(a) = 0`.
pub fn slope_pair(kind: &str, param: f64, resolution: f64) -> Result<[f64; 2]> {
    let f = integrand(kind, param, 2)?;
    let depth = 2.0;
    let s = Scenario {
        name: "web".into(),
        integrand: f.descriptor(),
        domain: HalfDomain::line(depth, resolution),
        dirichlet: DirichletSpec::affine(&[0.0], 0.0),
        solver: SolveConfig::default(),
        checks: Vec::new(),
        tolerances: Default::default(),
        seed: 0,
    };
    s.validate()?;
    let solved = scenario::solve_scenario(&s)?;
    let u = solved.solution.values();
    let slope = (u[u.len() - 1] - u[0]) / depth;
    Ok([slope, flat_slope(&f)?])
}

#[wasm_bindgen(js_name = capillaryHeightmap)]
pub fn capillary_heightmap(theta: f64, amplitude: f64, resolution: f64) -> std::result::Result<Heightmap, JsError> {
    solve_capillary(theta, amplitude, resolution).map_err(js)
}

#[wasm_bindgen(js_name = unitBall)]
pub fn unit_ball(kind: &str, param: f64, samples: usize) -> std::result::Result<Vec<f64>, JsError> {
    unit_ball_radii(kind, param, samples).map_err(js)
}

#[wasm_bindgen(js_name = flatSlope)]
pub fn flat_slope_check(kind: &str, param: f64, resolution: f64) -> std::result::Result<Vec<f64>, JsError> {
    slope_pair(kind, param, resolution).map(|p| p.to_vec()).map_err(js)
}
