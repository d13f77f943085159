//! Uniformly elliptic integrands `F` on `R^{n+1}` and the graph Lagrangian
//! `f(y) = F(-y, 1)`.
//!
//! Every built-in family carries analytic first and second derivatives. The
//! Newton solver relies on these being exact; the finite-difference helpers in
//! [`finite_difference`] exist only to cross-check them in tests.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sample count used when bounds have to be estimated numerically.
pub const DEFAULT_BOUND_SAMPLES: usize = 20_000;

/// Default smoothing parameter of the regularized p-norm family.
pub const DEFAULT_PNORM_EPS: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub enum IntegrandKind {
    /// `F(z) = |z|`, the area integrand.
    Euclidean,
    /// `F(z) = |z| - cos(theta) <z, e1>` with `theta` in `(0, pi)`.
    Capillary { theta: f64 },
    /// `F(z) = sqrt(z^T A z)` for a symmetric positive-definite `A`.
    Ellipsoid { matrix: DMatrix<f64> },
    /// `F(z) = (sum_i (z_i^2 + eps^2 |z|^2)^{p/2})^{1/p}`.
    PNorm { p: f64, eps: f64 },
}

/// An elliptic integrand on `R^dim`, `dim = n + 1`.
///
/// `scale` multiplies the base family; it is `1` unless [`normalize`](Self::normalize)
/// rescaled the integrand to have unit minimum on the sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticIntegrand {
    kind: IntegrandKind,
    dim: usize,
    scale: f64,
    normalized: bool,
}

/// Extremal values of `F` and of its tangential Hessian on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrandBounds {
    pub m_f: f64,
    pub big_m_f: f64,
    pub lambda_f: f64,
    pub big_lambda_f: f64,
    pub sample_count: usize,
}

impl EllipticIntegrand {
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(IntegrandKind::Euclidean, dim)
    }

    pub fn capillary(theta: f64, dim: usize) -> Result<Self> {
        Self::new(IntegrandKind::Capillary { theta }, dim)
    }

    pub fn ellipsoid(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        Self::new(IntegrandKind::Ellipsoid { matrix }, dim)
    }

    pub fn pnorm(p: f64, eps: f64, dim: usize) -> Result<Self> {
        Self::new(IntegrandKind::PNorm { p, eps }, dim)
    }

    pub fn new(kind: IntegrandKind, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidIntegrand(format!(
                "ambient dimension must be at least 2, got {dim}"
            )));
        }
        match &kind {
            IntegrandKind::Euclidean => {}
            IntegrandKind::Capillary { theta } => {
                if !(theta.is_finite() && *theta > 0.0 && *theta < std::f64::consts::PI) {
                    return Err(Error::InvalidIntegrand(format!(
                        "capillary angle {theta} outside (0, pi)"
                    )));
                }
            }
            IntegrandKind::Ellipsoid { matrix } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(Error::InvalidIntegrand(format!(
                        "ellipsoid matrix is {}x{}, expected {dim}x{dim}",
                        matrix.nrows(),
                        matrix.ncols()
                    )));
                }
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidIntegrand("ellipsoid matrix is not finite".into()));
                }
                let asym = (matrix - matrix.transpose()).amax();
                if asym > 1e-12 * matrix.amax().max(1.0) {
                    return Err(Error::InvalidIntegrand("ellipsoid matrix is not symmetric".into()));
                }
                if matrix.clone().cholesky().is_none() {
                    return Err(Error::InvalidIntegrand(
                        "ellipsoid matrix is not positive definite".into(),
                    ));
                }
            }
            IntegrandKind::PNorm { p, eps } => {
                if !(p.is_finite() && *p > 1.0) {
                    return Err(Error::InvalidIntegrand(format!("p-norm exponent {p} must exceed 1")));
                }
                if !(eps.is_finite() && *eps >= 0.0) {
                    return Err(Error::InvalidIntegrand(format!(
                        "p-norm regularization {eps} must be nonnegative"
                    )));
                }
            }
        }
        Ok(Self { kind, dim, scale: 1.0, normalized: false })
    }

    pub fn kind(&self) -> &IntegrandKind {
        &self.kind
    }

    /// Ambient dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Graph dimension `n`.
    pub fn graph_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    fn check(&self, z: &DVector<f64>) -> Result<f64> {
        assert_eq!(z.len(), self.dim, "vector length does not match integrand dimension");
        let norm = z.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(norm)
    }

    pub fn eval_big_f(&self, z: &DVector<f64>) -> Result<f64> {
        let norm = self.check(z)?;
        let v = match &self.kind {
            IntegrandKind::Euclidean => norm,
            IntegrandKind::Capillary { theta } => norm - theta.cos() * z[0],
            IntegrandKind::Ellipsoid { matrix } => z.dot(&(matrix * z)).sqrt(),
            IntegrandKind::PNorm { p, eps } => PNormTerms::new(z, *p, *eps).value(),
        };
        Ok(self.scale * v)
    }

    pub fn grad_big_f(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = self.check(z)?;
        let mut g = match &self.kind {
            IntegrandKind::Euclidean => z / norm,
            IntegrandKind::Capillary { theta } => {
                let mut g = z / norm;
                g[0] -= theta.cos();
                g
            }
            IntegrandKind::Ellipsoid { matrix } => {
                let az = matrix * z;
                let f = z.dot(&az).sqrt();
                az / f
            }
            IntegrandKind::PNorm { p, eps } => PNormTerms::new(z, *p, *eps).gradient(),
        };
        g *= self.scale;
        Ok(g)
    }

    pub fn hess_big_f(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let norm = self.check(z)?;
        let mut h = match &self.kind {
            // The linear capillary term has no second derivative.
            IntegrandKind::Euclidean | IntegrandKind::Capillary { .. } => {
                let zh = z / norm;
                (DMatrix::identity(self.dim, self.dim) - &zh * zh.transpose()) / norm
            }
            IntegrandKind::Ellipsoid { matrix } => {
                let az = matrix * z;
                let f2 = z.dot(&az);
                let f = f2.sqrt();
                (matrix - &az * az.transpose() / f2) / f
            }
            IntegrandKind::PNorm { p, eps } => PNormTerms::new(z, *p, *eps).hessian(),
        };
        h *= self.scale;
        Ok(h)
    }

    fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.dim - 1, "gradient length does not match graph dimension");
        let mut z = DVector::zeros(self.dim);
        for i in 0..y.len() {
            z[i] = -y[i];
        }
        z[self.dim - 1] = 1.0;
        z
    }

    /// `f(y) = F(-y, 1)`.
    pub fn eval_f(&self, y: &DVector<f64>) -> f64 {
        self.eval_big_f(&self.lift(y)).expect("lifted vector is never zero")
    }

    /// `Df(y)_i = -dF/dz_i (-y, 1)`.
    pub fn grad_f(&self, y: &DVector<f64>) -> DVector<f64> {
        let g = self.grad_big_f(&self.lift(y)).expect("lifted vector is never zero");
        DVector::from_iterator(y.len(), g.iter().take(y.len()).map(|v| -v))
    }

    /// `D^2 f(y)_ij = d^2F/dz_i dz_j (-y, 1)`.
    pub fn hess_f(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let h = self.hess_big_f(&self.lift(y)).expect("lifted vector is never zero");
        h.view((0, 0), (y.len(), y.len())).into_owned()
    }

    /// Closed-form `(m_F, M_F)` where the family admits one.
    pub fn analytic_extrema(&self) -> Option<(f64, f64)> {
        let (lo, hi) = match &self.kind {
            IntegrandKind::Euclidean => (1.0, 1.0),
            IntegrandKind::Capillary { theta } => {
                let c = theta.cos().abs();
                (1.0 - c, 1.0 + c)
            }
            IntegrandKind::Ellipsoid { matrix } => {
                let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
                (eig.min().sqrt(), eig.max().sqrt())
            }
            IntegrandKind::PNorm { .. } => return None,
        };
        Some((self.scale * lo, self.scale * hi))
    }

    /// Estimates `m_F, M_F, lambda_F, Lambda_F` from quasi-uniform samples on
    /// the unit sphere.
    ///
    /// The sample set for `k` points is a prefix of the one for any larger
    /// count, so refining never shrinks the estimated ranges.
    pub fn estimate_bounds(&self, n_samples: usize) -> Result<IntegrandBounds> {
        if n_samples < 100 {
            return Err(Error::Config(format!("need at least 100 sphere samples, got {n_samples}")));
        }
        let mut m_f = f64::INFINITY;
        let mut big_m_f = f64::NEG_INFINITY;
        let mut lambda_f = f64::INFINITY;
        let mut big_lambda_f = f64::NEG_INFINITY;
        for z in sphere_samples(self.dim, n_samples) {
            let v = self.eval_big_f(&z)?;
            m_f = m_f.min(v);
            big_m_f = big_m_f.max(v);
            let eig = tangential_eigenvalues(&self.hess_big_f(&z)?, &z);
            lambda_f = lambda_f.min(eig.min());
            big_lambda_f = big_lambda_f.max(eig.max());
        }
        Ok(IntegrandBounds { m_f, big_m_f, lambda_f, big_lambda_f, sample_count: n_samples })
    }

    /// `(m_F, M_F)`, analytic when available, otherwise estimated.
    pub fn extrema(&self) -> (f64, f64) {
        self.analytic_extrema().unwrap_or_else(|| {
            let b = self
                .estimate_bounds(DEFAULT_BOUND_SAMPLES)
                .expect("default sample count is valid");
            (b.m_f, b.big_m_f)
        })
    }

    /// Returns `F / m_F`, whose minimum on the sphere is one. Idempotent.
    pub fn normalize(&self) -> EllipticIntegrand {
        if self.normalized {
            return self.clone();
        }
        let (m_f, _) = self.extrema();
        let mut out = self.clone();
        out.scale = self.scale / m_f;
        out.normalized = true;
        out
    }

    pub fn descriptor(&self) -> IntegrandDescriptor {
        let mut d = IntegrandDescriptor {
            kind: String::new(),
            dim: self.dim,
            theta: None,
            matrix: None,
            p: None,
            eps: None,
            normalized: self.normalized,
        };
        match &self.kind {
            IntegrandKind::Euclidean => d.kind = "euclidean".into(),
            IntegrandKind::Capillary { theta } => {
                d.kind = "capillary".into();
                d.theta = Some(*theta);
            }
            IntegrandKind::Ellipsoid { matrix } => {
                d.kind = "ellipsoid".into();
                // nalgebra iterates column-major; the matrix is symmetric but
                // emit row-major explicitly.
                d.matrix = Some(matrix.transpose().iter().copied().collect());
            }
            IntegrandKind::PNorm { p, eps } => {
                d.kind = "pnorm".into();
                d.p = Some(*p);
                d.eps = Some(*eps);
            }
        }
        d
    }
}

/// JSON form of an integrand, e.g. `{"kind":"capillary","theta":1.047,"dim":3}`.
///
/// Ellipsoid matrices are row-major arrays of length `dim * dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandDescriptor {
    pub kind: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default)]
    pub normalized: bool,
}

impl IntegrandDescriptor {
    pub fn build(&self) -> Result<EllipticIntegrand> {
        let missing = |field: &str| {
            Error::InvalidIntegrand(format!("{} integrand requires `{field}`", self.kind))
        };
        let kind = match self.kind.to_ascii_lowercase().as_str() {
            "euclidean" => IntegrandKind::Euclidean,
            "capillary" => IntegrandKind::Capillary { theta: self.theta.ok_or_else(|| missing("theta"))? },
            "ellipsoid" => {
                let data = self.matrix.as_ref().ok_or_else(|| missing("matrix"))?;
                if data.len() != self.dim * self.dim {
                    return Err(Error::InvalidIntegrand(format!(
                        "ellipsoid matrix has {} entries, expected {}",
                        data.len(),
                        self.dim * self.dim
                    )));
                }
                IntegrandKind::Ellipsoid { matrix: DMatrix::from_row_slice(self.dim, self.dim, data) }
            }
            "pnorm" => IntegrandKind::PNorm {
                p: self.p.ok_or_else(|| missing("p"))?,
                eps: self.eps.unwrap_or(DEFAULT_PNORM_EPS),
            },
            other => return Err(Error::InvalidIntegrand(format!("unknown integrand kind `{other}`"))),
        };
        let integrand = EllipticIntegrand::new(kind, self.dim)?;
        Ok(if self.normalized { integrand.normalize() } else { integrand })
    }
}

impl TryFrom<IntegrandDescriptor> for EllipticIntegrand {
    type Error = Error;

    fn try_from(d: IntegrandDescriptor) -> Result<Self> {
        d.build()
    }
}

/// Shared intermediate quantities of the regularized p-norm.
///
/// With `s_i = z_i^2 + eps^2 |z|^2`, `S = sum s_i^{p/2}` and `F = S^{1/p}`.
struct PNormTerms<'a> {
    z: &'a DVector<f64>,
    p: f64,
    eps2: f64,
    s: DVector<f64>,
    sum: f64,
}

impl<'a> PNormTerms<'a> {
    fn new(z: &'a DVector<f64>, p: f64, eps: f64) -> Self {
        let eps2 = eps * eps;
        let n2 = z.norm_squared();
        let s = z.map(|zi| zi * zi + eps2 * n2);
        let sum = s.iter().map(|si| si.powf(p / 2.0)).sum();
        Self { z, p, eps2, s, sum }
    }

    fn value(&self) -> f64 {
        self.sum.powf(1.0 / self.p)
    }

    // a_k = s_k^{p/2-1}; dF/dz_k = S^{1/p-1} z_k (a_k + eps^2 T), T = sum a_i.
    fn weights(&self) -> (DVector<f64>, f64) {
        let a = self.s.map(|si| si.powf(self.p / 2.0 - 1.0));
        let t = a.sum();
        (a, t)
    }

    fn gradient(&self) -> DVector<f64> {
        let (a, t) = self.weights();
        let pre = self.sum.powf(1.0 / self.p - 1.0);
        DVector::from_fn(self.z.len(), |k, _| pre * self.z[k] * (a[k] + self.eps2 * t))
    }

    fn hessian(&self) -> DMatrix<f64> {
        let d = self.z.len();
        let p = self.p;
        let z = self.z;
        let (a, t) = self.weights();
        let b = self.s.map(|si| if si > 0.0 { si.powf(p / 2.0 - 2.0) } else { 0.0 });
        let big_b = b.sum();
        let pre = self.sum.powf(1.0 / p - 1.0);
        let dpre = (1.0 - p) * self.sum.powf(1.0 / p - 2.0);
        let c = DVector::from_fn(d, |k, _| z[k] * (a[k] + self.eps2 * t));
        DMatrix::from_fn(d, d, |k, l| {
            let da_k = (p - 2.0) * b[k] * (if k == l { z[k] } else { 0.0 } + self.eps2 * z[l]);
            let dt = (p - 2.0) * (b[l] * z[l] + self.eps2 * z[l] * big_b);
            let diag = if k == l { a[k] + self.eps2 * t } else { 0.0 };
            dpre * c[l] * c[k] + pre * (diag + z[k] * (da_k + self.eps2 * dt))
        })
    }
}

/// Deterministic, prefix-nested, quasi-uniform points on the unit sphere of
/// `R^dim` (`dim` 2 or 3), led by the coordinate axes `+-e_i`.
pub fn sphere_samples(dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(dim == 2 || dim == 3, "sphere sampling supports dimension 2 or 3");
    let mut out = Vec::with_capacity(count);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            if out.len() < count {
                let mut e = DVector::zeros(dim);
                e[i] = sign;
                out.push(e);
            }
        }
    }
    let two_pi = std::f64::consts::TAU;
    let mut k = 0usize;
    while out.len() < count {
        let kf = k as f64;
        if dim == 2 {
            // Golden-angle spiral on the circle.
            let golden = (5f64.sqrt() - 1.0) / 2.0;
            let phi = two_pi * (0.5 + kf * golden).fract();
            out.push(DVector::from_vec(vec![phi.cos(), phi.sin()]));
        } else {
            // R2 Kronecker sequence mapped by the area-preserving cylinder map.
            let g = 1.324_717_957_244_746_f64;
            let u = (0.5 + kf / g).fract();
            let v = (0.5 + kf / (g * g)).fract();
            let zc = 1.0 - 2.0 * u;
            let rho = (1.0 - zc * zc).max(0.0).sqrt();
            let phi = two_pi * v;
            out.push(DVector::from_vec(vec![rho * phi.cos(), rho * phi.sin(), zc]));
        }
        k += 1;
    }
    out
}

/// Orthonormal basis of `z^perp`, as columns.
pub fn orthogonal_complement(z: &DVector<f64>) -> DMatrix<f64> {
    let d = z.len();
    let zh = z / z.norm();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    // Gram-Schmidt on the axes, most orthogonal to z first.
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| zh[a].abs().total_cmp(&zh[b].abs()));
    for &ax in &axes {
        if basis.len() == d - 1 {
            break;
        }
        let mut v = DVector::zeros(d);
        v[ax] = 1.0;
        v -= &zh * zh[ax];
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / nv);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Eigenvalues of a Hessian restricted to `z^perp`.
pub fn tangential_eigenvalues(hess: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let p = orthogonal_complement(z);
    let restricted = p.transpose() * hess * &p;
    SymmetricEigen::new(restricted).eigenvalues
}

/// Centered finite differences, for cross-validating the analytic derivatives.
pub mod finite_difference {
    use super::*;

    fn step(z: &DVector<f64>) -> f64 {
        1e-6 * z.norm()
    }

    pub fn grad_big_f(integrand: &EllipticIntegrand, z: &DVector<f64>) -> Result<DVector<f64>> {
        let h = step(z);
        let mut g = DVector::zeros(z.len());
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            g[i] = (integrand.eval_big_f(&zp)? - integrand.eval_big_f(&zm)?) / (2.0 * h);
        }
        Ok(g)
    }

    pub fn hess_big_f(integrand: &EllipticIntegrand, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = step(z);
        let mut m = DMatrix::zeros(z.len(), z.len());
        for j in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let col = (integrand.grad_big_f(&zp)? - integrand.grad_big_f(&zm)?) / (2.0 * h);
            m.set_column(j, &col);
        }
        Ok(m)
    }

    /// Centered difference of `f` with an explicit step.
    pub fn grad_f(integrand: &EllipticIntegrand, y: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            (integrand.eval_f(&yp) - integrand.eval_f(&ym)) / (2.0 * h)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn eval_examples() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        assert_eq!(e.eval_big_f(&v(&[0.0, 0.0, 1.0])).unwrap(), 1.0);
        let c = EllipticIntegrand::capillary(PI / 3.0, 3).unwrap();
        assert_abs_diff_eq!(c.eval_big_f(&v(&[1.0, 0.0, 0.0])).unwrap(), 0.5, epsilon = 1e-15);
        let a = EllipticIntegrand::ellipsoid(DMatrix::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(a.eval_big_f(&v(&[3.0, 4.0, 0.0])).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_vector_is_a_domain_error() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let z = DVector::zeros(3);
        assert!(matches!(e.eval_big_f(&z), Err(Error::ZeroVector)));
        assert!(matches!(e.grad_big_f(&z), Err(Error::ZeroVector)));
        assert!(matches!(e.hess_big_f(&z), Err(Error::ZeroVector)));
    }

    #[test]
    fn capillary_gradient_is_shifted_unit_vector() {
        let theta = 1.1;
        let c = EllipticIntegrand::capillary(theta, 3).unwrap();
        let z = v(&[0.3, -1.2, 0.7]);
        let expected = &z / z.norm() - v(&[theta.cos(), 0.0, 0.0]);
        assert_abs_diff_eq!((c.grad_big_f(&z).unwrap() - expected).amax(), 0.0, epsilon = 1e-15);
        let e = EllipticIntegrand::euclidean(3).unwrap();
        assert_abs_diff_eq!(
            (c.hess_big_f(&z).unwrap() - e.hess_big_f(&z).unwrap()).amax(),
            0.0,
            epsilon = 0.0
        );
    }

    #[test]
    fn euclidean_hessian_is_projector_at_pole() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let h = e.hess_big_f(&v(&[0.0, 0.0, 1.0])).unwrap();
        let expected = DMatrix::from_diagonal(&v(&[1.0, 1.0, 0.0]));
        assert_eq!(h, expected);
    }

    #[test]
    fn ellipsoid_euler_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 0.5, 0.2, 0.5, 2.0, -0.3, 0.2, -0.3, 1.0]);
        let f = EllipticIntegrand::ellipsoid(a.clone()).unwrap();
        let z = v(&[0.4, -0.9, 1.3]);
        let g = f.grad_big_f(&z).unwrap();
        let expected = &a * &z / z.dot(&(&a * &z)).sqrt();
        assert_abs_diff_eq!((&g - expected).amax(), 0.0, epsilon = 1e-15);
        assert!((g.dot(&z) - f.eval_big_f(&z).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn f_examples() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        assert_abs_diff_eq!(e.eval_f(&v(&[3.0, 4.0])), 26f64.sqrt(), epsilon = 1e-14);
        let theta = 0.7;
        let c = EllipticIntegrand::capillary(theta, 3).unwrap();
        assert_abs_diff_eq!(c.eval_f(&v(&[0.0, 0.0])), 1.0, epsilon = 1e-15);
        let g = c.grad_f(&v(&[0.0, 0.0]));
        assert_abs_diff_eq!(g[0], theta.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);
        // f(y) = sqrt(1+|y|^2) + cos(theta) y1
        let y = v(&[0.8, -0.4]);
        assert_abs_diff_eq!(c.eval_f(&y), (1.0f64 + 0.64 + 0.16).sqrt() + theta.cos() * 0.8, epsilon = 1e-14);
    }

    #[test]
    fn pnorm_derivatives_match_finite_differences() {
        for &(p, eps) in &[(4.0, 1e-2), (1.5, 0.1), (3.0, 0.0)] {
            let f = EllipticIntegrand::pnorm(p, eps, 3).unwrap();
            let z = v(&[0.7, -0.4, 1.1]);
            let g = f.grad_big_f(&z).unwrap();
            let gfd = finite_difference::grad_big_f(&f, &z).unwrap();
            assert!((&g - gfd).amax() < 1e-7, "p={p}");
            let h = f.hess_big_f(&z).unwrap();
            let hfd = finite_difference::hess_big_f(&f, &z).unwrap();
            assert!((&h - hfd).amax() < 1e-6, "p={p}");
        }
    }

    #[test]
    fn bounds_examples() {
        let e = EllipticIntegrand::euclidean(3).unwrap().estimate_bounds(500).unwrap();
        for x in [e.m_f, e.big_m_f, e.lambda_f, e.big_lambda_f] {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-9);
        }
        let c = EllipticIntegrand::capillary(PI / 3.0, 3).unwrap().estimate_bounds(500).unwrap();
        assert_abs_diff_eq!(c.m_f, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(c.big_m_f, 1.5, epsilon = 1e-3);
        let a = EllipticIntegrand::ellipsoid(DMatrix::from_diagonal(&v(&[4.0, 1.0, 1.0])))
            .unwrap()
            .estimate_bounds(500)
            .unwrap();
        assert_abs_diff_eq!(a.m_f, 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(a.big_m_f, 2.0, epsilon = 1e-3);
        assert!(EllipticIntegrand::euclidean(3).unwrap().estimate_bounds(99).is_err());
    }

    #[test]
    fn gradient_norm_within_extrema() {
        for f in [
            EllipticIntegrand::capillary(2.0, 3).unwrap(),
            EllipticIntegrand::pnorm(4.0, 1e-2, 3).unwrap(),
            EllipticIntegrand::pnorm(4.0, 1e-2, 2).unwrap(),
        ] {
            let b = f.estimate_bounds(2000).unwrap();
            for z in sphere_samples(f.dim(), 2000) {
                let g = f.grad_big_f(&z).unwrap().norm();
                assert!(g >= b.m_f - 1e-12 && g <= b.big_m_f + 1e-12, "{g} not in [{}, {}]", b.m_f, b.big_m_f);
            }
        }
    }

    #[test]
    fn bounds_widen_monotonically() {
        let f = EllipticIntegrand::pnorm(4.0, 1e-2, 3).unwrap();
        let mut prev = f.estimate_bounds(100).unwrap();
        for n in [200, 400, 1600] {
            let b = f.estimate_bounds(n).unwrap();
            assert!(b.m_f <= prev.m_f && b.big_m_f >= prev.big_m_f);
            assert!(b.lambda_f <= prev.lambda_f && b.big_lambda_f >= prev.big_lambda_f);
            prev = b;
        }
    }

    #[test]
    fn normalize_examples() {
        let e = EllipticIntegrand::euclidean(3).unwrap();
        let z = v(&[0.2, 0.5, -1.0]);
        assert_eq!(e.normalize().eval_big_f(&z).unwrap(), e.eval_big_f(&z).unwrap());
        let c = EllipticIntegrand::capillary(PI / 3.0, 3).unwrap();
        let cn = c.normalize();
        assert_abs_diff_eq!(cn.eval_big_f(&z).unwrap(), 2.0 * c.eval_big_f(&z).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(cn.estimate_bounds(500).unwrap().m_f, 1.0, epsilon = 1e-3);
        assert_eq!(cn.normalize(), cn);
        let p = EllipticIntegrand::pnorm(4.0, 1e-2, 3).unwrap().normalize();
        assert_eq!(p.normalize(), p);
    }

    #[test]
    fn descriptor_validation() {
        let ok: IntegrandDescriptor =
            serde_json::from_str(r#"{"kind":"capillary","theta":1.0471975512,"dim":3}"#).unwrap();
        assert!(ok.build().is_ok());
        let bad: IntegrandDescriptor =
            serde_json::from_str(r#"{"kind":"capillary","theta":4.0,"dim":3}"#).unwrap();
        assert!(bad.build().is_err());
        let not_spd: IntegrandDescriptor = serde_json::from_str(
            r#"{"kind":"ellipsoid","matrix":[1,0,0,0,-1,0,0,0,1],"dim":3}"#,
        )
        .unwrap();
        assert!(not_spd.build().is_err());
        let asym: IntegrandDescriptor =
            serde_json::from_str(r#"{"kind":"ellipsoid","matrix":[2,1,0,2],"dim":2}"#).unwrap();
        assert!(asym.build().is_err());
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = EllipticIntegrand::ellipsoid(a).unwrap();
        assert_eq!(f.descriptor().build().unwrap(), f);
    }
}
