//! Operator equations `F(u) = B(u) - f = 0` with a monotone map `B`, and the
//! built-in problem families used by tests and the CLI.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::linalg::{DenseMatrix, Vector};

/// Absolute floor applied to monotonicity certificates.
pub const TOL_MONO: f64 = 1e-10;

/// Upper bounds `M_j` on `|F^(j)|` over a ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

/// The nonlinear part `B` of an operator equation.
///
/// Implementations must be pure: `apply` and `jacobian` may be called from
/// several threads at once.
pub trait MonotoneMap: Send + Sync {
    fn dim(&self) -> usize;

    /// `B(u)`.
    fn apply(&self, u: &Vector) -> Vector;

    /// Frechet derivative `B'(u)`.
    fn jacobian(&self, u: &Vector) -> DenseMatrix;

    /// Bounds on `|B|`, `|B'|`, `|B''|` over the ball of the given radius around
    /// any point whose norm is at most `center_norm`.
    fn bounds(&self, center_norm: f64, radius: f64) -> Bounds;

    fn is_linear(&self) -> bool {
        false
    }
}

/// `B(u) = M u` for a fixed matrix.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: DenseMatrix,
    norm: f64,
}

impl LinearMap {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(DsmError::NotSquare { rows: matrix.rows(), cols: matrix.cols() });
        }
        let norm = spectral_norm(&matrix)?;
        Ok(Self { matrix, norm })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl MonotoneMap for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, u: &Vector) -> Vector {
        self.matrix.mul_vec(u).expect("dimension checked by OperatorProblem")
    }

    fn jacobian(&self, _u: &Vector) -> DenseMatrix {
        self.matrix.clone()
    }

    fn bounds(&self, center_norm: f64, radius: f64) -> Bounds {
        Bounds { m0: self.norm * (center_norm + radius), m1: self.norm, m2: 0.0 }
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// `B(u) = L u + alpha u^3` (component-wise cube), `L` the Neumann Laplacian.
#[derive(Clone, Debug)]
pub struct CubicMap {
    laplacian: DenseMatrix,
    laplacian_norm: f64,
    alpha: f64,
}

impl CubicMap {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(DsmError::InvalidParameter("cubic problem needs n >= 1".into()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(DsmError::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        let laplacian = neumann_laplacian(n);
        let laplacian_norm = spectral_norm(&laplacian)?;
        Ok(Self { laplacian, laplacian_norm, alpha })
    }

    pub fn laplacian(&self) -> &DenseMatrix {
        &self.laplacian
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl MonotoneMap for CubicMap {
    fn dim(&self) -> usize {
        self.laplacian.rows()
    }

    fn apply(&self, u: &Vector) -> Vector {
        let mut out = self.laplacian.mul_vec(u).expect("dimension checked by OperatorProblem");
        for i in 0..u.dim() {
            out[i] += self.alpha * u[i] * u[i] * u[i];
        }
        out
    }

    fn jacobian(&self, u: &Vector) -> DenseMatrix {
        let mut j = self.laplacian.clone();
        for i in 0..u.dim() {
            j[(i, i)] += 3.0 * self.alpha * u[i] * u[i];
        }
        j
    }

    // |u|_inf <= |u|_2, so the diagonal terms need no dimension factor.
    fn bounds(&self, center_norm: f64, radius: f64) -> Bounds {
        let rho = center_norm + radius;
        Bounds {
            m0: self.laplacian_norm * rho + self.alpha * rho.powi(3),
            m1: self.laplacian_norm + 3.0 * self.alpha * rho * rho,
            m2: 6.0 * self.alpha * rho,
        }
    }

    fn is_linear(&self) -> bool {
        self.alpha == 0.0
    }
}

/// Tridiagonal `[-1, 2, -1]` with Neumann ends (first/last diagonal entry 1).
pub fn neumann_laplacian(n: usize) -> DenseMatrix {
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        l[(i, i)] += 1.0;
        l[(i + 1, i + 1)] += 1.0;
        l[(i, i + 1)] -= 1.0;
        l[(i + 1, i)] -= 1.0;
    }
    l
}

fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    let eig = m.gram().symmetric_eigen()?;
    Ok(eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// An operator equation `F(u) = B(u) - rhs = 0`.
///
/// For problems induced by a linear equation `A u = f`, `rhs = A^T f` and the
/// observation operator `A` is kept so that data noise can be applied in the
/// space of `f`.
#[derive(Clone)]
pub struct OperatorProblem {
    name: String,
    map: Arc<dyn MonotoneMap>,
    rhs: Vector,
    observation: Option<Arc<DenseMatrix>>,
    known_solution: Option<Vector>,
}

impl fmt::Debug for OperatorProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("rhs", &self.rhs)
            .field("known_solution", &self.known_solution)
            .finish()
    }
}

impl OperatorProblem {
    pub fn new(name: impl Into<String>, map: Arc<dyn MonotoneMap>, rhs: Vector) -> Result<Self> {
        if map.dim() != rhs.dim() {
            return Err(DsmError::DimensionMismatch { expected: map.dim(), found: rhs.dim() });
        }
        Ok(Self { name: name.into(), map, rhs, observation: None, known_solution: None })
    }

    pub fn with_known_solution(mut self, y: Vector) -> Result<Self> {
        self.check_dim(&y)?;
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn rhs(&self) -> &Vector {
        &self.rhs
    }

    pub fn map(&self) -> &Arc<dyn MonotoneMap> {
        &self.map
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        self.map.is_linear()
    }

    /// Dimension of the data space in which noise is measured.
    pub fn data_dim(&self) -> usize {
        self.observation.as_ref().map_or(self.dim(), |a| a.rows())
    }

    fn check_dim(&self, u: &Vector) -> Result<()> {
        if u.dim() != self.dim() {
            return Err(DsmError::DimensionMismatch { expected: self.dim(), found: u.dim() });
        }
        Ok(())
    }

    /// `F(u) = B(u) - rhs`.
    pub fn apply(&self, u: &Vector) -> Result<Vector> {
        self.check_dim(u)?;
        let out = &self.map.apply(u) - &self.rhs;
        if !out.is_finite() {
            return Err(DsmError::NonFinite("operator evaluation"));
        }
        Ok(out)
    }

    /// `A = F'(u)`.
    pub fn derivative(&self, u: &Vector) -> Result<DenseMatrix> {
        self.check_dim(u)?;
        Ok(self.map.jacobian(u))
    }

    /// Bounds on `|F^(j)|` over `B(u0, radius)`.
    pub fn bounds(&self, u0: &Vector, radius: f64) -> Bounds {
        let mut b = self.map.bounds(u0.norm(), radius);
        b.m0 += self.rhs.norm();
        b
    }

    /// Replaces the data by `f + delta * noise`. For linear problems the noise
    /// lives in the data space of `A u = f` and enters the right-hand side as
    /// `A^T (delta * noise)`.
    pub fn perturbed(&self, delta: f64, noise: &Vector) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(DsmError::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        if noise.dim() != self.data_dim() {
            return Err(DsmError::DimensionMismatch { expected: self.data_dim(), found: noise.dim() });
        }
        let shift = match &self.observation {
            Some(a) => a.mul_vec_transposed(&noise.scale(delta))?,
            None => noise.scale(delta),
        };
        let mut out = self.clone();
        out.rhs = &self.rhs + &shift;
        Ok(out)
    }
}

/// A linear equation `A u = f` together with its normal form `B u = q`,
/// `B = A^T A`, `q = A^T f`.
#[derive(Clone, Debug)]
pub struct LinearProblem {
    name: String,
    a: DenseMatrix,
    f: Vector,
    b: DenseMatrix,
    q: Vector,
    known_solution: Option<Vector>,
}

impl LinearProblem {
    pub fn new(name: impl Into<String>, a: DenseMatrix, f: Vector) -> Result<Self> {
        if a.rows() != f.dim() {
            return Err(DsmError::DimensionMismatch { expected: a.rows(), found: f.dim() });
        }
        let b = a.gram();
        let q = a.mul_vec_transposed(&f)?;
        Ok(Self { name: name.into(), a, f, b, q, known_solution: None })
    }

    pub fn with_known_solution(mut self, y: Vector) -> Result<Self> {
        if y.dim() != self.a.cols() {
            return Err(DsmError::DimensionMismatch { expected: self.a.cols(), found: y.dim() });
        }
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn f(&self) -> &Vector {
        &self.f
    }

    /// `B = A^T A`.
    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    /// `q = A^T f`.
    pub fn q(&self) -> &Vector {
        &self.q
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    /// `(B + eps I)^{-1} q`.
    pub fn regularized_solution(&self, eps: f64) -> Result<Vector> {
        self.b.shifted(eps).solve(&self.q)
    }

    /// The induced operator problem `F(u) = B u - q`.
    pub fn to_problem(&self) -> Result<OperatorProblem> {
        let map = Arc::new(LinearMap::new(self.b.clone())?);
        let mut p = OperatorProblem::new(self.name.clone(), map, self.q.clone())?;
        p.observation = Some(Arc::new(self.a.clone()));
        if let Some(y) = &self.known_solution {
            p = p.with_known_solution(y.clone())?;
        }
        Ok(p)
    }

    /// Checks symmetry and semidefiniteness of `B` and, when a solution is
    /// known, `A y = f` and `y` orthogonal to the null space of `A`.
    pub fn check_invariants(&self) -> Result<LinearInvariants> {
        let asymmetry = self.b.asymmetry();
        let eig = self.b.symmetric_eigen()?;
        let min_eigenvalue = eig.values[0];
        let max_eigenvalue = *eig.values.last().unwrap();
        let (data_residual, null_component) = match &self.known_solution {
            Some(y) => {
                let res = self.a.mul_vec(y)?.distance(&self.f);
                // eigenvectors of B with (numerically) zero eigenvalue span null(A)
                let cutoff = 1e-12 * max_eigenvalue.max(f64::MIN_POSITIVE);
                let mut proj = 0.0f64;
                for (c, &lambda) in eig.values.iter().enumerate() {
                    if lambda <= cutoff {
                        let col = Vector::from_fn(self.dim(), |r| eig.vectors[(r, c)]);
                        proj += col.inner(y)?.powi(2);
                    }
                }
                (Some(res), Some(proj.sqrt()))
            }
            None => (None, None),
        };
        let passed = asymmetry <= 1e-12
            && min_eigenvalue >= -1e-10
            && data_residual.is_none_or(|r| r <= 1e-10)
            && null_component.is_none_or(|p| p <= 1e-8);
        Ok(LinearInvariants { asymmetry, min_eigenvalue, data_residual, null_component, passed })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearInvariants {
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub data_residual: Option<f64>,
    pub null_component: Option<f64>,
    pub passed: bool,
}

/// `A = diag(singular_values)`, `f = A y`.
pub fn make_diagonal_problem(singular_values: &[f64], y: &Vector) -> Result<LinearProblem> {
    if singular_values.len() != y.dim() {
        return Err(DsmError::DimensionMismatch { expected: singular_values.len(), found: y.dim() });
    }
    if let Some(bad) = singular_values.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(DsmError::InvalidParameter(format!("singular values must be > 0, got {bad}")));
    }
    let a = DenseMatrix::diagonal(singular_values);
    let f = a.mul_vec(y)?;
    LinearProblem::new("diagonal", a, f)?.with_known_solution(y.clone())
}

/// Trapezoid-rule discretization on a uniform grid of `[0, 1]` of the
/// convolution `(A u)(s) = int_0^1 exp(-(s-t)^2 / (2 w^2)) u(t) dt`.
pub fn make_integral_problem(n: usize, kernel_width: f64, y_profile: &Vector) -> Result<LinearProblem> {
    if n < 8 {
        return Err(DsmError::InvalidParameter(format!("integral problem needs n >= 8, got {n}")));
    }
    if !(kernel_width > 0.0) || !kernel_width.is_finite() {
        return Err(DsmError::InvalidParameter(format!("kernel width must be > 0, got {kernel_width}")));
    }
    if y_profile.dim() != n {
        return Err(DsmError::DimensionMismatch { expected: n, found: y_profile.dim() });
    }
    let a = integral_kernel_matrix(n, kernel_width);
    let f = a.mul_vec(y_profile)?;
    LinearProblem::new("integral", a, f)?.with_known_solution(y_profile.clone())
}

pub(crate) fn integral_kernel_matrix(n: usize, kernel_width: f64) -> DenseMatrix {
    let h = 1.0 / (n - 1) as f64;
    let two_w2 = 2.0 * kernel_width * kernel_width;
    DenseMatrix::from_fn(n, n, |i, j| {
        let (s, t) = (i as f64 * h, j as f64 * h);
        let weight = if j == 0 || j == n - 1 { 0.5 * h } else { h };
        weight * (-(s - t) * (s - t) / two_w2).exp()
    })
}

/// Grid profile `sin(pi x)^2 + 0.5 x` on the trapezoid nodes; a smooth bump
/// used as the default solution of the integral problem.
pub fn smooth_bump(n: usize) -> Vector {
    let h = 1.0 / (n.max(2) - 1) as f64;
    Vector::from_fn(n, |i| {
        let x = i as f64 * h;
        (std::f64::consts::PI * x).sin().powi(2) + 0.5 * x
    })
}

/// Default solution of the integral problem: `B z / |B z|_inf` with `z` the
/// smooth bump. Lying in the range of `A^T A`, it is orthogonal to the
/// numerical null space of `A` and hence the minimum-norm solution even when
/// `A` is singular to working precision.
pub fn integral_default_solution(n: usize, kernel_width: f64) -> Result<Vector> {
    if n < 8 {
        return Err(DsmError::InvalidParameter(format!("integral problem needs n >= 8, got {n}")));
    }
    let a = integral_kernel_matrix(n, kernel_width);
    let y = a.gram().mul_vec(&smooth_bump(n))?;
    let scale = y.norm_inf();
    Ok(y.scale(1.0 / scale))
}

/// `F(u) = L u + alpha u^3 - f`.
pub fn make_cubic_monotone_problem(n: usize, alpha: f64, f: &Vector) -> Result<OperatorProblem> {
    if f.dim() != n {
        return Err(DsmError::DimensionMismatch { expected: n, found: f.dim() });
    }
    let map = Arc::new(CubicMap::new(n, alpha)?);
    OperatorProblem::new("cubic", map, f.clone())
}

/// Cubic problem with data `f = B(y)`, so that `y` is a known solution.
///
/// For `alpha > 0` the map is strictly monotone and `y` is the unique solution.
/// For `alpha = 0` it is the minimum-norm solution only if `y` sums to zero.
pub fn cubic_with_solution(alpha: f64, y: &Vector) -> Result<OperatorProblem> {
    let map = CubicMap::new(y.dim(), alpha)?;
    let f = map.apply(y);
    OperatorProblem::new("cubic", Arc::new(map), f)?.with_known_solution(y.clone())
}

/// Default solution profile of the cubic problem: `sin(2 pi (i + 1/2) / n) + 0.5`.
pub fn cubic_default_solution(n: usize) -> Vector {
    Vector::from_fn(n, |i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin() + 0.5)
}

/// Result of [`check_monotone`].
#[derive(Clone, Debug, Serialize)]
pub struct MonotoneReport {
    pub samples: usize,
    /// `min <F(u) - F(v), u - v>` over the sampled pairs.
    pub min_pair_certificate: f64,
    /// Smallest eigenvalue of `sym(F'(u))` over the sampled points.
    pub min_jacobian_eigenvalue: f64,
    pub passed: bool,
}

/// Samples `samples` pairs uniformly in the ball of radius `radius` around the
/// origin and certifies monotonicity of `F` on them.
pub fn check_monotone(problem: &OperatorProblem, samples: usize, radius: f64, seed: u64) -> Result<MonotoneReport> {
    if samples == 0 {
        return Err(DsmError::InvalidParameter("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.dim();
    let mut min_pair = f64::INFINITY;
    let mut min_eig = f64::INFINITY;
    for _ in 0..samples {
        let u = uniform_in_ball(&mut rng, n, radius);
        let v = uniform_in_ball(&mut rng, n, radius);
        let du = &u - &v;
        let df = &problem.apply(&u)? - &problem.apply(&v)?;
        min_pair = min_pair.min(df.inner(&du)?);
        for point in [&u, &v] {
            min_eig = min_eig.min(problem.derivative(point)?.min_symmetric_eigenvalue()?);
        }
    }
    Ok(MonotoneReport {
        samples,
        min_pair_certificate: min_pair,
        min_jacobian_eigenvalue: min_eig,
        passed: min_pair >= -TOL_MONO && min_eig >= -TOL_MONO,
    })
}

/// Uniform sample from the ball `{ |x| <= radius }` in `R^n`.
pub fn uniform_in_ball(rng: &mut impl Rng, n: usize, radius: f64) -> Vector {
    let dir = unit_gaussian_direction(rng, n);
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    dir.scale(r)
}

/// Uniform sample from the unit sphere via normalized Gaussian draws.
pub fn unit_gaussian_direction(rng: &mut impl Rng, n: usize) -> Vector {
    loop {
        let g = Vector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            return g.scale(1.0 / norm);
        }
    }
}
