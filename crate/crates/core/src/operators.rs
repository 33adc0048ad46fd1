//! Nonexpansive operators `T` and their residual maps `S = I − T`.
//!
//! All shipped kinds are built from an affine gradient `∇f(x) = Ax − b` with
//! a user-supplied Lipschitz bound `L ≥ λ_max(A)`:
//!
//! | kind                   | `Tx`                                   |
//! |------------------------|----------------------------------------|
//! | `GradQuadratic`        | `x − (2/L)(Ax − b)`                    |
//! | `ForwardBackwardL1`    | `soft(x − (2/L)(Ax − b), 2λ/L)`        |
//! | `ProjectedGradientBox` | `clamp(x − (2/L)(Ax − b), ℓ, u)`       |
//! | `LinearPsd`            | `x − (2/M)(Ax − b)`                    |
//! | `LinearJacobi`         | `x − D⁻¹(Ax − b)`, `D = diag(A)`       |
//!
//! `Fix(T)` is the minimizer set of `½xᵀAx − bᵀx (+ λ‖x‖₁ or box)` for the
//! gradient kinds and `{x : Ax = b}` for the two linear-system kinds.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::blockvec::{dist2, norm2, BlockLayout, BlockVector};
use crate::error::{Error, Result};
use crate::linalg::{self, dot, DenseMatrix};
use crate::parallel::{self, Execution};
use crate::rng;

/// Relative tolerance when validating `L` (or `M`) against `λ_max(A)`.
pub const LIPSCHITZ_TOL: f64 = 1e-8;
/// Slack allowed in `‖Tx − Ty‖ ≤ (1 + slack)‖x − y‖`.
pub const NONEXPANSIVE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    GradQuadratic,
    ForwardBackwardL1 { lambda: f64 },
    ProjectedGradientBox { lower: Vec<f64>, upper: Vec<f64> },
    LinearPsd,
    LinearJacobi,
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::GradQuadratic => "grad_quadratic",
            OperatorKind::ForwardBackwardL1 { .. } => "forward_backward_l1",
            OperatorKind::ProjectedGradientBox { .. } => "projected_gradient_box",
            OperatorKind::LinearPsd => "linear_psd",
            OperatorKind::LinearJacobi => "linear_jacobi",
        }
    }
}

/// An immutable nonexpansive operator on a block layout.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    kind: OperatorKind,
    a: DenseMatrix,
    b: Vec<f64>,
    /// `L` for the gradient kinds, `M` for `LinearPsd`, unused for Jacobi.
    scale: f64,
    layout: Arc<BlockLayout>,
    diag: Vec<f64>,
}

impl OperatorSpec {
    /// Builds and validates an operator. See [`OperatorSpec::validate`].
    pub fn new(
        kind: OperatorKind,
        a: DenseMatrix,
        b: Vec<f64>,
        scale: f64,
        layout: Arc<BlockLayout>,
    ) -> Result<Self> {
        let op = Self::new_unchecked(kind, a, b, scale, layout)?;
        op.validate()?;
        Ok(op)
    }

    /// Checks only shapes and the box, not the spectral conditions. Used to
    /// build deliberately invalid operators (e.g. an underestimated `L`).
    pub fn new_unchecked(
        kind: OperatorKind,
        a: DenseMatrix,
        b: Vec<f64>,
        scale: f64,
        layout: Arc<BlockLayout>,
    ) -> Result<Self> {
        let n = layout.dim();
        if a.n() != n || b.len() != n {
            return Err(Error::LayoutMismatch {
                expected: n,
                got: if a.n() != n { a.n() } else { b.len() },
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator vector b"));
        }
        match &kind {
            OperatorKind::ForwardBackwardL1 { lambda } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::InvalidOperator(format!("l1 weight must be >= 0, got {lambda}")));
            }
            OperatorKind::ProjectedGradientBox { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::LayoutMismatch {
                        expected: n,
                        got: lower.len().min(upper.len()),
                    });
                }
                check_box(lower, upper)?;
            }
            _ => {}
        }
        if !matches!(kind, OperatorKind::LinearJacobi) && !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "Lipschitz/spectral bound must be positive, got {scale}"
            )));
        }
        let diag = a.diag();
        Ok(Self { kind, a, b, scale, layout, diag })
    }

    pub fn grad_quadratic(a: DenseMatrix, b: Vec<f64>, lipschitz: f64, layout: Arc<BlockLayout>) -> Result<Self> {
        Self::new(OperatorKind::GradQuadratic, a, b, lipschitz, layout)
    }

    pub fn forward_backward_l1(
        a: DenseMatrix,
        b: Vec<f64>,
        lipschitz: f64,
        lambda: f64,
        layout: Arc<BlockLayout>,
    ) -> Result<Self> {
        Self::new(OperatorKind::ForwardBackwardL1 { lambda }, a, b, lipschitz, layout)
    }

    pub fn projected_gradient_box(
        a: DenseMatrix,
        b: Vec<f64>,
        lipschitz: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
        layout: Arc<BlockLayout>,
    ) -> Result<Self> {
        Self::new(OperatorKind::ProjectedGradientBox { lower, upper }, a, b, lipschitz, layout)
    }

    pub fn linear_psd(a: DenseMatrix, b: Vec<f64>, spectral_bound: f64, layout: Arc<BlockLayout>) -> Result<Self> {
        Self::new(OperatorKind::LinearPsd, a, b, spectral_bound, layout)
    }

    pub fn linear_jacobi(a: DenseMatrix, b: Vec<f64>, layout: Arc<BlockLayout>) -> Result<Self> {
        Self::new(OperatorKind::LinearJacobi, a, b, 1.0, layout)
    }

    /// Spectral conditions: symmetric PSD `A` with `L ≥ λ_max(A)` for the
    /// gradient kinds and `LinearPsd`; nonzero diagonal and
    /// `ρ(−D⁻¹R) ≤ 1` for `LinearJacobi`.
    pub fn validate(&self) -> Result<()> {
        let a = &self.a;
        match self.kind {
            OperatorKind::LinearJacobi => {
                if let Some(i) = self.diag.iter().position(|&d| d == 0.0) {
                    return Err(Error::InvalidOperator(format!("zero diagonal entry at {i}")));
                }
                let rho = jacobi_spectral_radius(a);
                if rho > 1.0 + LIPSCHITZ_TOL {
                    return Err(Error::InvalidOperator(format!(
                        "Jacobi iteration matrix has spectral radius {rho} > 1"
                    )));
                }
            }
            _ => {
                if !a.is_symmetric(1e-12) {
                    return Err(Error::InvalidOperator("matrix is not symmetric".into()));
                }
                let top = linalg::lambda_max(a).value;
                let bottom = linalg::lambda_min(a);
                if bottom < -LIPSCHITZ_TOL * top.abs().max(1.0) {
                    return Err(Error::InvalidOperator(format!(
                        "matrix is not positive semidefinite (lambda_min = {bottom})"
                    )));
                }
                if self.scale < top * (1.0 - LIPSCHITZ_TOL) {
                    return Err(Error::InvalidOperator(format!(
                        "bound {} is below lambda_max(A) = {top}",
                        self.scale
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn check_input(&self, x: &BlockVector) -> Result<()> {
        if x.dim() != self.dim() || x.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::LayoutMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// `Tx`.
    pub fn apply_t(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check_input(x)?;
        let xs = x.as_slice();
        let mut out = vec![0.0; self.dim()];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.t_coord(xs, r);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("apply_t"));
        }
        BlockVector::new(self.layout.clone(), out)
    }

    /// Block `i` of `Sx = x − Tx`.
    pub fn apply_s_block(&self, x: &BlockVector, i: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.layout.check_block(i)?;
        let mut out = vec![0.0; self.layout.block_size(i)];
        self.s_block_into(x.as_slice(), i, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("apply_s_block"));
        }
        Ok(out)
    }

    /// Full `Sx`.
    pub fn apply_s(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.dim()];
        self.s_into(x.as_slice(), &mut out);
        BlockVector::new(self.layout.clone(), out)
    }

    /// `‖Sx‖`.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.s_into(x, &mut out);
        norm2(&out).sqrt()
    }

    pub(crate) fn s_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.s_coord(x, r);
        }
    }

    pub(crate) fn s_block_into(&self, x: &[f64], i: usize, out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(self.layout.range(i)) {
            *o = self.s_coord(x, r);
        }
    }

    #[inline]
    fn gradient_coord(&self, x: &[f64], r: usize) -> f64 {
        dot(self.a.row(r), x) - self.b[r]
    }

    #[inline]
    fn t_coord(&self, x: &[f64], r: usize) -> f64 {
        let g = self.gradient_coord(x, r);
        let step = 2.0 / self.scale;
        match &self.kind {
            OperatorKind::GradQuadratic | OperatorKind::LinearPsd => x[r] - step * g,
            OperatorKind::ForwardBackwardL1 { lambda } => soft(x[r] - step * g, step * lambda),
            OperatorKind::ProjectedGradientBox { lower, upper } => {
                (x[r] - step * g).clamp(lower[r], upper[r])
            }
            OperatorKind::LinearJacobi => x[r] - g / self.diag[r],
        }
    }

    /// Coordinate `r` of `Sx`, evaluated without forming `Tx` where the
    /// residual has a direct expression.
    #[inline]
    fn s_coord(&self, x: &[f64], r: usize) -> f64 {
        let g = self.gradient_coord(x, r);
        let step = 2.0 / self.scale;
        match &self.kind {
            OperatorKind::GradQuadratic | OperatorKind::LinearPsd => step * g,
            OperatorKind::ForwardBackwardL1 { lambda } => x[r] - soft(x[r] - step * g, step * lambda),
            OperatorKind::ProjectedGradientBox { lower, upper } => {
                x[r] - (x[r] - step * g).clamp(lower[r], upper[r])
            }
            OperatorKind::LinearJacobi => g / self.diag[r],
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    for (index, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if !(lo <= hi) {
            return Err(Error::InvalidBox { index, lower: lo, upper: hi });
        }
    }
    Ok(())
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Componentwise `sign(v)·max(|v| − t, 0)`: the prox of `t‖·‖₁`.
pub fn soft_threshold(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::NegativeThreshold(t));
    }
    Ok(v.iter().map(|&x| if x == 0.0 { 0.0 } else { soft(x, t) }).collect())
}

/// Componentwise clamp of `v` into `[lower, upper]`.
pub fn proj_box(v: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    if lower.len() != v.len() || upper.len() != v.len() {
        return Err(Error::LayoutMismatch {
            expected: v.len(),
            got: lower.len().min(upper.len()),
        });
    }
    check_box(lower, upper)?;
    Ok(v.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
        .collect())
}

fn jacobi_spectral_radius(a: &DenseMatrix) -> f64 {
    let n = a.n();
    let diag = a.diag();
    if a.is_symmetric(1e-12) && diag.iter().all(|&d| d > 0.0) {
        // −D⁻¹R is similar to the symmetric −D^{-1/2} R D^{-1/2}
        let s: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    data[i * n + j] = -a.get(i, j) / (s[i] * s[j]);
                }
            }
        }
        let m = DenseMatrix::from_row_major(n, data).expect("finite entries");
        return linalg::lambda_max(&m).value.abs().max(linalg::lambda_min(&m).abs());
    }
    // general case: growth rate of ‖M^t x‖
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j) * x[j]).sum();
            y[i] = -off / diag[i];
        }
    };
    let pair = linalg::power_iteration(n, apply, 1e-12, 5_000);
    let mut x = pair.vector;
    let mut y = vec![0.0; n];
    let steps = 64;
    let mut log_growth = 0.0;
    for _ in 0..steps {
        apply(&x, &mut y);
        let ny = dot(&y, &y).sqrt();
        if ny == 0.0 {
            return 0.0;
        }
        log_growth += ny.ln();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
    }
    (log_growth / steps as f64).exp()
}

/// Largest observed `‖Tx − Ty‖ / ‖x − y‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonexpansiveReport {
    pub trials: usize,
    pub max_ratio: f64,
}

/// Samples `trials` random pairs and checks `‖Tx − Ty‖ ≤ (1 + 1e-10)‖x − y‖`.
/// The first pair is placed along the dominant eigenvector of `A`, where a
/// too-small `L` is most visible.
pub fn check_nonexpansive(op: &OperatorSpec, trials: usize, seed: u64) -> Result<NonexpansiveReport> {
    check_nonexpansive_with(op, trials, seed, Execution::default())
}

pub fn check_nonexpansive_with(
    op: &OperatorSpec,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<NonexpansiveReport> {
    if trials == 0 {
        return Err(Error::InvalidParameters("at least one trial is required".into()));
    }
    let n = op.dim();
    let top = linalg::lambda_max(op.matrix()).vector;
    let results = parallel::map_indexed(exec, trials, |t| {
        let mut r = rng::stream(seed, rng::TRIAL_BASE + t as u64);
        let spread = [0.1, 1.0, 10.0][t % 3];
        let x: Vec<f64> = (0..n)
            .map(|_| spread * r.sample::<f64, _>(StandardNormal))
            .collect();
        let gap = spread * (0.01 + r.random::<f64>());
        let y: Vec<f64> = if t == 0 {
            x.iter().zip(&top).map(|(xi, vi)| xi + gap * vi).collect()
        } else {
            x.iter()
                .map(|xi| xi + gap * r.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let tx: Vec<f64> = (0..n).map(|i| op.t_coord(&x, i)).collect();
        let ty: Vec<f64> = (0..n).map(|i| op.t_coord(&y, i)).collect();
        let ratio = (dist2(&tx, &ty) / dist2(&x, &y)).sqrt();
        (ratio, x, y)
    });
    let (max_ratio, x, y) = results
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("trials >= 1");
    if !max_ratio.is_finite() || max_ratio > 1.0 + NONEXPANSIVE_SLACK {
        return Err(Error::NonexpansivenessViolated { ratio: max_ratio, x, y });
    }
    Ok(NonexpansiveReport { trials, max_ratio })
}

/// Runs the synchronous damped iteration `x ← x − ½Sx` from zero until
/// `‖Sx‖ ≤ tol`.
pub fn solve_reference(op: &OperatorSpec, tol: f64) -> Result<BlockVector> {
    solve_reference_from(op, tol, &BlockVector::zeros(op.layout().clone()), 10_000_000)
}

pub fn solve_reference_from(
    op: &OperatorSpec,
    tol: f64,
    x0: &BlockVector,
    max_iterations: usize,
) -> Result<BlockVector> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameters(format!("tolerance must be positive, got {tol}")));
    }
    op.check_input(x0)?;
    let mut x = x0.as_slice().to_vec();
    let mut s = vec![0.0; x.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iterations {
        op.s_into(&x, &mut s);
        residual = norm2(&s).sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite("solve_reference"));
        }
        if residual <= tol {
            return BlockVector::new(op.layout().clone(), x);
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi -= 0.5 * si;
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: max_iterations,
        residual,
    })
}

/// Tolerance on `‖Sx*‖` relative to `1 + ‖x*‖` for a supplied solution.
pub const SOLUTION_TOL: f64 = 1e-9;

/// An operator together with an optional known fixed point.
#[derive(Debug, Clone)]
pub struct FixedPointProblem {
    pub op: Arc<OperatorSpec>,
    pub known_solution: Option<BlockVector>,
}

impl FixedPointProblem {
    pub fn new(op: Arc<OperatorSpec>) -> Self {
        Self { op, known_solution: None }
    }

    pub fn with_solution(op: Arc<OperatorSpec>, solution: BlockVector) -> Result<Self> {
        let r = op.residual_norm(solution.as_slice());
        if r > SOLUTION_TOL * (1.0 + solution.norm()) {
            return Err(Error::InvalidOperator(format!(
                "supplied solution has residual {r:e}"
            )));
        }
        Ok(Self { op, known_solution: Some(solution) })
    }

    /// Attaches the reference solution computed to tolerance `tol`.
    pub fn solved(op: Arc<OperatorSpec>, tol: f64) -> Result<Self> {
        let x = solve_reference(&op, tol)?;
        Self::with_solution(op, x)
    }
}

/// Reproducible test-problem families.
pub mod instances {
    use super::*;

    /// Symmetric positive definite `BᵀB/n + I` with Gaussian `B`; spectrum
    /// roughly in `[1, 5]`.
    pub fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut r = rng::stream(seed, rng::INIT_STREAM);
        let b: Vec<f64> = (0..n * n).map(|_| r.sample(StandardNormal)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() / n as f64;
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
            a[i * n + i] += 1.0;
        }
        DenseMatrix::from_row_major(n, a).expect("finite")
    }

    /// Symmetric matrix with diagonal 2 and off-diagonal row sums below 1.5,
    /// so the Jacobi map is a contraction.
    pub fn diagonally_dominant(n: usize, seed: u64) -> DenseMatrix {
        let mut r = rng::stream(seed, rng::INIT_STREAM + 1);
        let mut a = vec![0.0; n * n];
        let w = if n > 1 { 1.5 / (n - 1) as f64 } else { 0.0 };
        for i in 0..n {
            a[i * n + i] = 2.0;
            for j in 0..i {
                let v = w * (2.0 * r.random::<f64>() - 1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        DenseMatrix::from_row_major(n, a).expect("finite")
    }

    pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, rng::INIT_STREAM + 2);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    /// `T = −I`, i.e. `S = 2I`: the quadratic with `A = I`, `b = 0`, `L = 1`.
    pub fn negation(n: usize) -> OperatorSpec {
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::grad_quadratic(DenseMatrix::identity(n), vec![0.0; n], 1.0, layout)
            .expect("valid")
    }

    pub fn grad_quadratic(n: usize, seed: u64) -> OperatorSpec {
        let a = random_spd(n, seed);
        let l = linalg::lambda_max(&a).value;
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::grad_quadratic(a, random_vector(n, seed), l, layout).expect("valid")
    }

    pub fn forward_backward_l1(n: usize, seed: u64, lambda: f64) -> OperatorSpec {
        let a = random_spd(n, seed);
        let l = linalg::lambda_max(&a).value;
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::forward_backward_l1(a, random_vector(n, seed), l, lambda, layout).expect("valid")
    }

    pub fn projected_gradient_box(n: usize, seed: u64, half_width: f64) -> OperatorSpec {
        let a = random_spd(n, seed);
        let l = linalg::lambda_max(&a).value;
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::projected_gradient_box(
            a,
            random_vector(n, seed),
            l,
            vec![-half_width; n],
            vec![half_width; n],
            layout,
        )
        .expect("valid")
    }

    pub fn linear_psd(n: usize, seed: u64) -> OperatorSpec {
        let a = random_spd(n, seed);
        let m = linalg::lambda_max(&a).value;
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::linear_psd(a, random_vector(n, seed), m, layout).expect("valid")
    }

    pub fn linear_jacobi(n: usize, seed: u64) -> OperatorSpec {
        let a = diagonally_dominant(n, seed);
        let layout = Arc::new(BlockLayout::scalar(n).expect("n >= 1"));
        OperatorSpec::linear_jacobi(a, random_vector(n, seed), layout).expect("valid")
    }

    /// One instance of every shipped kind, plus `T = −I`.
    pub fn shipped(n: usize, seed: u64) -> Vec<(&'static str, OperatorSpec)> {
        vec![
            ("negation", negation(n)),
            ("grad_quadratic", grad_quadratic(n, seed)),
            ("forward_backward_l1", forward_backward_l1(n, seed, 0.1)),
            ("projected_gradient_box", projected_gradient_box(n, seed, 0.5)),
            ("linear_psd", linear_psd(n, seed)),
            ("linear_jacobi", linear_jacobi(n, seed)),
        ]
    }
}
