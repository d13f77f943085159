//! Boundary data expressions for the Dirichlet truncation boundary.

use serde::{Deserialize, Serialize};

use crate::domain::{HalfDomain, Mesh, Tag};
use crate::error::{Error, Result};

/// A scalar function of `x` used as Dirichlet data.
///
/// JSON form is internally tagged by `type`, e.g.
/// `{"type":"affine","a":[-0.577,0.0],"b":0.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirichletSpec {
    /// `<a, x> + b`.
    Affine { a: Vec<f64>, #[serde(default)] b: f64 },
    /// `amplitude * sin(wavenumber * x_axis)`, `axis` 1-based (default 2).
    Sine {
        amplitude: f64,
        wavenumber: f64,
        #[serde(default = "default_axis")]
        axis: usize,
    },
    /// Smooth compactly supported bump `height * (1 - (|x-c|/radius)^2)^3`.
    Bump { center: Vec<f64>, radius: f64, height: f64 },
    /// Bump centred at the middle of the far side `x1 = depth`.
    FarBump { radius: f64, height: f64 },
    /// Values given at listed points; a Dirichlet vertex takes the value of
    /// the point it coincides with.
    Table { points: Vec<Vec<f64>> },
    /// `a1 x1 + b` where `a1` is the slope of the flat free-boundary solution
    /// of the integrand in use; see [`DirichletSpec::resolve`].
    FlatAffine {
        #[serde(default)]
        b: f64,
    },
    Sum { terms: Vec<DirichletSpec> },
}

fn default_axis() -> usize {
    2
}

impl DirichletSpec {
    pub fn affine(a: &[f64], b: f64) -> Self {
        DirichletSpec::Affine { a: a.to_vec(), b }
    }

    /// Checks arity and finiteness against a domain.
    pub fn validate(&self, domain: &HalfDomain) -> Result<()> {
        let n = domain.n;
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            DirichletSpec::Affine { a, b } => {
                if a.len() != n || !finite(a) || !b.is_finite() {
                    return Err(Error::Config(format!("affine data needs {n} finite slopes")));
                }
            }
            DirichletSpec::Sine { amplitude, wavenumber, axis } => {
                if *axis == 0 || *axis > n || !amplitude.is_finite() || !wavenumber.is_finite() {
                    return Err(Error::Config("sine data needs finite parameters and a valid axis".into()));
                }
            }
            DirichletSpec::Bump { center, radius, height } => {
                if center.len() != n || !finite(center) || !(*radius > 0.0) || !height.is_finite() {
                    return Err(Error::Config("bump needs a centre in R^n and a positive radius".into()));
                }
            }
            DirichletSpec::FarBump { radius, height } => {
                if !(*radius > 0.0) || !height.is_finite() {
                    return Err(Error::Config("far bump needs a positive radius".into()));
                }
            }
            DirichletSpec::Table { points } => {
                if points.iter().any(|p| p.len() != n + 1 || !finite(p)) {
                    return Err(Error::Config(format!("table rows must have {} finite entries", n + 1)));
                }
            }
            DirichletSpec::FlatAffine { b } => {
                if !b.is_finite() {
                    return Err(Error::Config("flat affine data needs a finite offset".into()));
                }
            }
            DirichletSpec::Sum { terms } => {
                for t in terms {
                    t.validate(domain)?;
                }
            }
        }
        Ok(())
    }

    /// Evaluates the expression at `x`. Table lookups fail when `x` is not
    /// one of the listed points.
    pub fn eval(&self, domain: &HalfDomain, x: [f64; 2]) -> Result<f64> {
        let n = domain.n;
        Ok(match self {
            DirichletSpec::Affine { a, b } => (0..n).map(|i| a[i] * x[i]).sum::<f64>() + b,
            DirichletSpec::Sine { amplitude, wavenumber, axis } => amplitude * (wavenumber * x[axis - 1]).sin(),
            DirichletSpec::Bump { center, radius, height } => bump(x, center, *radius, *height, n),
            DirichletSpec::FarBump { radius, height } => {
                bump(x, &[domain.depth, 0.0], *radius, *height, n)
            }
            DirichletSpec::Table { points } => {
                let tol = 1e-9 * domain.depth.max(domain.width).max(1.0);
                points
                    .iter()
                    .find(|p| (0..n).all(|i| (p[i] - x[i]).abs() <= tol))
                    .map(|p| p[n])
                    .ok_or_else(|| Error::Config(format!("table has no value at {:?}", &x[..n])))?
            }
            DirichletSpec::FlatAffine { .. } => {
                return Err(Error::Config("flat affine data must be resolved against an integrand".into()))
            }
            DirichletSpec::Sum { terms } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.eval(domain, x)?;
                }
                s
            }
        })
    }

    /// Replaces every `FlatAffine` term by the affine function with slope
    /// `flat_slope()` along `e1`.
    pub fn resolve(&self, n: usize, flat_slope: &dyn Fn() -> Result<f64>) -> Result<Self> {
        Ok(match self {
            DirichletSpec::FlatAffine { b } => {
                let mut a = vec![0.0; n];
                a[0] = flat_slope()?;
                DirichletSpec::Affine { a, b: *b }
            }
            DirichletSpec::Sum { terms } => DirichletSpec::Sum {
                terms: terms.iter().map(|t| t.resolve(n, flat_slope)).collect::<Result<_>>()?,
            },
            other => other.clone(),
        })
    }

    /// Per-vertex data: the expression on DIRICHLET vertices, zero elsewhere.
    pub fn sample(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.validate(mesh.domain())?;
        let mut out = vec![0.0; mesh.num_vertices()];
        for (v, value) in out.iter_mut().enumerate() {
            if mesh.vertex_tag(v) == Tag::Dirichlet {
                *value = self.eval(mesh.domain(), mesh.coord(v))?;
            }
        }
        Ok(out)
    }

    /// The expression at every vertex (tables only where defined, else zero).
    pub fn sample_everywhere(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        self.validate(mesh.domain())?;
        (0..mesh.num_vertices()).map(|v| Ok(self.eval(mesh.domain(), mesh.coord(v)).unwrap_or(0.0))).collect()
    }
}

fn bump(x: [f64; 2], center: &[f64], radius: f64, height: f64, n: usize) -> f64 {
    let d2: f64 = (0..n).map(|i| (x[i] - center[i]).powi(2)).sum();
    let s = d2 / (radius * radius);
    if s >= 1.0 {
        0.0
    } else {
        height * (1.0 - s).powi(3)
    }
}
