//! Classical and adaptive (translated/dilated) Hermite function systems
//! sampled on a uniform grid, with analytic derivatives with respect to the
//! translation `τ` and dilation `λ`, plus feasibility and conditioning
//! diagnostics.
//!
//! The normalized Hermite functions are evaluated with the numerically stable
//! recurrence
//!
//! ```text
//! Φ₀(t)     = π^{−1/4}·e^{−t²/2}
//! Φ_{k+1}(t) = t·√(2/(k+1))·Φ_k(t) − √(k/(k+1))·Φ_{k−1}(t)
//! ```
//!
//! which produces the same values as the textbook definition
//! `Φ_k(t) = H_k(t)·e^{−t²/2}/√(π^{1/2}·2^k·k!)` but avoids the factorial and
//! `2^k` overflow that the direct form hits for k ≳ 80.
//!
//! The adaptive system translates and dilates the classical one:
//! `Φ_k(t; τ, λ) = √λ·Φ_k(λ(t−τ))`. Columns are *not* premultiplied by the
//! grid-spacing factor `√h`; orthonormality checks apply that renormalization
//! (equivalently, they test `h·ΦᵀΦ ≈ I`), so that the sampled columns
//! approximate unit vectors in the discrete inner product.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Strictly increasing, uniformly spaced sample positions together with the
/// covering interval `(a, b)` used for feasibility checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    points: Vec<f64>,
    interval: (f64, f64),
}

impl SampleGrid {
    /// Builds a grid from explicit points and a covering interval.
    ///
    /// Requires at least two points, strictly increasing, uniformly spaced
    /// (relative deviation of consecutive differences ≤ 1e-12), all finite,
    /// and `a ≤ t₀`, `t_{m−1} ≤ b` with `a < b`.
    pub fn new(points: Vec<f64>, interval: (f64, f64)) -> Result<Self> {
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidArgument(format!(
                "grid interval must be finite with a < b, got ({a}, {b})"
            )));
        }
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("grid point {bad}")));
        }
        let h0 = points[1] - points[0];
        if h0 <= 0.0 {
            return Err(Error::InvalidArgument(
                "grid points must be strictly increasing".into(),
            ));
        }
        for w in points.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::InvalidArgument(
                    "grid points must be strictly increasing".into(),
                ));
            }
            if (d - h0).abs() > 1e-12 * h0.abs() {
                return Err(Error::InvalidArgument(format!(
                    "grid spacing is not uniform: step {d} deviates from {h0}"
                )));
            }
        }
        let first = points[0];
        let last = *points.last().unwrap();
        if !(a <= first && last <= b) {
            return Err(Error::InvalidArgument(format!(
                "grid points [{first}, {last}] must lie inside the interval ({a}, {b})"
            )));
        }
        Ok(SampleGrid { points, interval })
    }

    /// `m` uniformly spaced points covering `[a, b]` with endpoints included.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs at least 2 points, got {m}"
            )));
        }
        let h = (b - a) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|i| a + i as f64 * h).collect();
        points[m - 1] = b;
        SampleGrid::new(points, (a, b))
    }

    /// Unit-spaced grid `0, 1, …, m−1` on the interval `[0, m−1]`, the default
    /// domain for length-`m` signals.
    pub fn unit(m: usize) -> Result<Self> {
        SampleGrid::uniform(0.0, (m - 1) as f64, m)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid spacing `h` (uniform by construction).
    pub fn spacing(&self) -> f64 {
        self.points[1] - self.points[0]
    }
}

/// Nonlinear parameters of the adaptive Hermite system: translation `τ` (grid
/// units) and dilation `λ > 0` (inverse grid units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpParams {
    pub tau: f64,
    pub lambda: f64,
}

impl VpParams {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        if !tau.is_finite() || !lambda.is_finite() {
            return Err(Error::NonFinite(format!("parameters (τ={tau}, λ={lambda})")));
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dilation λ must be positive, got {lambda}"
            )));
        }
        Ok(VpParams { tau, lambda })
    }
}

/// The sampled basis matrix `Φ(θ)` (m×n, column k = Φ_k at the grid points)
/// together with its two analytic parameter derivatives `∂Φ/∂τ` and `∂Φ/∂λ`.
#[derive(Debug, Clone)]
pub struct SampledBasis {
    pub phi: DMatrix<f64>,
    /// Derivative matrices in parameter order `[∂Φ/∂τ, ∂Φ/∂λ]`.
    pub dphi: [DMatrix<f64>; 2],
    pub params: VpParams,
    pub grid: SampleGrid,
}

impl SampledBasis {
    /// Frobenius distance of the renormalized Gram matrix from the identity:
    /// `‖h·ΦᵀΦ − I‖_F` where `h` is the grid spacing. Near zero when the
    /// parameters keep the effective support `τ ± 3/λ` inside the interval.
    pub fn orthonormality_residual(&self) -> f64 {
        let h = self.grid.spacing();
        let n = self.phi.ncols();
        let mut gram = self.phi.tr_mul(&self.phi) * h;
        for i in 0..n {
            gram[(i, i)] -= 1.0;
        }
        gram.norm()
    }

    /// Whether the parameters satisfy the feasibility condition
    /// `τ ± 3/λ ⊆ [a, b]` on this grid's interval.
    pub fn is_feasible(&self) -> Result<bool> {
        feasible_region_check(&self.params, self.grid.interval())
    }
}

/// Parametric family of adaptive Hermite bases on a fixed grid with a fixed
/// number of functions; the model family used by VP layers and `vp_fit`.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    pub grid: SampleGrid,
    pub n: usize,
}

impl HermiteBasis {
    pub fn new(grid: SampleGrid, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "basis needs at least one function (n ≥ 1)".into(),
            ));
        }
        Ok(HermiteBasis { grid, n })
    }
}

/// Evaluates normalized Hermite functions `Φ_0..Φ_{levels−1}` at the given
/// points via the stable recurrence. Internal building block shared by
/// [`classical_hermite`] and [`adaptive_hermite`] so that both produce
/// identical floating-point values.
fn hermite_levels(points: &[f64], levels: usize) -> DMatrix<f64> {
    let m = points.len();
    let norm0 = std::f64::consts::PI.powf(-0.25);
    let mut out = DMatrix::<f64>::zeros(m, levels);
    for (i, &t) in points.iter().enumerate() {
        out[(i, 0)] = norm0 * (-t * t / 2.0).exp();
        for k in 0..levels.saturating_sub(1) {
            let prev = if k == 0 { 0.0 } else { out[(i, k - 1)] };
            out[(i, k + 1)] = t * (2.0 / (k as f64 + 1.0)).sqrt() * out[(i, k)]
                - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        }
    }
    out
}

/// Samples the first `n` classical (untranslated, undilated) normalized
/// Hermite functions on the grid; column k holds `Φ_k` at the grid points.
pub fn classical_hermite(grid: &SampleGrid, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one basis function (n ≥ 1)".into(),
        ));
    }
    Ok(hermite_levels(grid.points(), n))
}

/// Builds the adaptive Hermite basis `Φ_k(t; τ, λ) = √λ·Φ_k(λ(t−τ))` on the
/// grid, together with the analytic parameter derivatives
///
/// ```text
/// ∂Φ_k/∂τ = −λ^{3/2}·Φ_k'(λ(t−τ))
/// ∂Φ_k/∂λ = Φ_k(λ(t−τ))/(2√λ) + √λ·(t−τ)·Φ_k'(λ(t−τ))
/// ```
///
/// where `Φ_k'(t) = √(k/2)·Φ_{k−1}(t) − √((k+1)/2)·Φ_{k+1}(t)`; the level
/// `Φ_n` needed by the last column's derivative is computed internally.
pub fn adaptive_hermite(grid: &SampleGrid, n: usize, params: &VpParams) -> Result<SampledBasis> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one basis function (n ≥ 1)".into(),
        ));
    }
    if !params.tau.is_finite() || !params.lambda.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters (τ={}, λ={})",
            params.tau, params.lambda
        )));
    }
    if params.lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dilation λ must be positive, got {}",
            params.lambda
        )));
    }
    let (tau, lambda) = (params.tau, params.lambda);
    let m = grid.len();
    let scaled: Vec<f64> = grid.points().iter().map(|&t| lambda * (t - tau)).collect();
    // One extra level so every column's derivative can reference Φ_{k+1}.
    let levels = hermite_levels(&scaled, n + 1);

    let sqrt_lambda = lambda.sqrt();
    let mut phi = DMatrix::<f64>::zeros(m, n);
    let mut dphi_tau = DMatrix::<f64>::zeros(m, n);
    let mut dphi_lambda = DMatrix::<f64>::zeros(m, n);
    let dtau_factor = -lambda * sqrt_lambda; // −λ^{3/2}
    for i in 0..m {
        let t_shift = grid.points()[i] - tau;
        for k in 0..n {
            let value = levels[(i, k)];
            let below = if k == 0 { 0.0 } else { levels[(i, k - 1)] };
            let deriv = (k as f64 / 2.0).sqrt() * below
                - ((k as f64 + 1.0) / 2.0).sqrt() * levels[(i, k + 1)];
            phi[(i, k)] = value * sqrt_lambda;
            dphi_tau[(i, k)] = dtau_factor * deriv;
            dphi_lambda[(i, k)] = value / (2.0 * sqrt_lambda) + sqrt_lambda * t_shift * deriv;
        }
    }
    Ok(SampledBasis {
        phi,
        dphi: [dphi_tau, dphi_lambda],
        params: *params,
        grid: grid.clone(),
    })
}

/// Tests whether `(τ, λ)` keeps the effective support inside the interval:
/// `τ + 3/λ ≤ b` and `τ − 3/λ ≥ a`.
pub fn feasible_region_check(params: &VpParams, interval: (f64, f64)) -> Result<bool> {
    let (a, b) = interval;
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidArgument(format!(
            "interval must be finite with a < b, got ({a}, {b})"
        )));
    }
    if !params.tau.is_finite() || !params.lambda.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters (τ={}, λ={})",
            params.tau, params.lambda
        )));
    }
    if params.lambda <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dilation λ must be positive, got {}",
            params.lambda
        )));
    }
    let radius = 3.0 / params.lambda;
    Ok(params.tau + radius <= b && params.tau - radius >= a)
}

/// Ratio `σ_max/σ_min` of the singular values of `phi`. Returns the positive
/// infinity sentinel when the smallest singular value falls below the rank
/// tolerance `ε·σ_max·max(m, n)` with `ε = 2⁻⁵²`.
pub fn condition_number(phi: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = phi.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if m < n {
        return Err(Error::InvalidArgument(format!(
            "matrix must have at least as many rows as columns, got {m}×{n}"
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let sv = crate::linalg::singular_values(phi);
    let sigma_max = sv[0];
    let sigma_min = sv[sv.len() - 1];
    if sigma_max == 0.0 {
        // All-zero matrix: rank deficient by definition.
        return Ok(f64::INFINITY);
    }
    let tol = f64::EPSILON * sigma_max * m.max(n) as f64;
    if sigma_min < tol {
        Ok(f64::INFINITY)
    } else {
        Ok(sigma_max / sigma_min)
    }
}

/// One row of a condition-number sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub lambda: f64,
    pub cond: f64,
}

/// Evaluates `condition_number(Φ(τ, λ))` for every pair in the Cartesian
/// product of the two ranges (τ outer, λ inner).
pub fn condition_sweep(
    grid: &SampleGrid,
    n: usize,
    tau_range: &[f64],
    lambda_range: &[f64],
) -> Result<Vec<SweepPoint>> {
    if tau_range.is_empty() {
        return Err(Error::InvalidArgument("empty τ range".into()));
    }
    if lambda_range.is_empty() {
        return Err(Error::InvalidArgument("empty λ range".into()));
    }
    let mut rows = Vec::with_capacity(tau_range.len() * lambda_range.len());
    for &tau in tau_range {
        for &lambda in lambda_range {
            let params = VpParams::new(tau, lambda)?;
            let basis = adaptive_hermite(grid, n, &params)?;
            let cond = condition_number(&basis.phi)?;
            rows.push(SweepPoint { tau, lambda, cond });
        }
    }
    Ok(rows)
}
