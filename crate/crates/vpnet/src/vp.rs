//! Variable Projection operators: least-squares coefficients `c = Φ⁺x`,
//! orthogonal projection `x̂ = ΦΦ⁺x`, the residual functional
//! `r₂(θ) = ‖x − ΦΦ⁺x‖²`, and their analytic derivatives with respect to the
//! nonlinear basis parameters:
//!
//! ```text
//! ∂[ΦΦ⁺] = (I − ΦΦ⁺)·∂Φ·Φ⁺ + [(I − ΦΦ⁺)·∂Φ·Φ⁺]ᵀ
//! ∂Φ⁺    = −Φ⁺·∂Φ·Φ⁺ + Φ⁺[Φ⁺]ᵀ·∂Φᵀ·(I − ΦΦ⁺) + (I − Φ⁺Φ)·∂Φᵀ·[Φ⁺]ᵀΦ⁺
//! ∂r₂    = −2·xᵀ(I − ΦΦ⁺)·∂Φ·Φ⁺·x
//! ```
//!
//! The derivative formulas assume locally constant rank; a rank change
//! between successive evaluations inside [`vp_fit`] is reported as a warning
//! diagnostic, not an error.

use crate::error::{Error, Result};
use crate::hermite::{
    adaptive_hermite, feasible_region_check, HermiteBasis, SampledBasis, VpParams,
};
use nalgebra::{DMatrix, DVector};

/// How a [`PinvBundle`]'s pseudoinverse was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinvMethod {
    /// Full singular value decomposition with rank tolerance.
    Svd,
    /// Orthonormal fast path `Φ⁺ = h·Φᵀ`, valid when the renormalized columns
    /// are orthonormal to within the documented residual bound.
    OrthonormalTranspose,
}

/// A basis matrix together with its Moore–Penrose pseudoinverse and the
/// spectral data needed for diagnostics.
#[derive(Debug, Clone)]
pub struct PinvBundle {
    pub phi: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: DVector<f64>,
    pub method: PinvMethod,
}

impl PinvBundle {
    pub fn nrows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.phi.ncols()
    }

    /// Chooses the pseudoinverse path for a sampled basis: when the
    /// parameters are feasible (`τ ± 3/λ` inside the interval) and the
    /// orthonormality residual `‖h·ΦᵀΦ − I‖_F` is at most `1e-3`, the
    /// transpose shortcut `Φ⁺ = h·Φᵀ` is used (the renormalized columns
    /// `√h·Φ` are then orthonormal, so `(√h·Φ)⁺ = (√h·Φ)ᵀ`); otherwise the
    /// full SVD pseudoinverse is computed.
    pub fn for_basis(basis: &SampledBasis) -> Result<PinvBundle> {
        let feasible = feasible_region_check(&basis.params, basis.grid.interval())?;
        if feasible && basis.orthonormality_residual() <= 1e-3 {
            let h = basis.grid.spacing();
            let n = basis.phi.ncols();
            Ok(PinvBundle {
                phi: basis.phi.clone(),
                pinv: basis.phi.transpose() * h,
                rank: n,
                singular_values: DVector::from_element(n, 1.0 / h.sqrt()),
                method: PinvMethod::OrthonormalTranspose,
            })
        } else {
            pseudoinverse(&basis.phi)
        }
    }
}

/// Computes the Moore–Penrose pseudoinverse of an m×n matrix (m ≥ n ≥ 1) via
/// SVD. Singular values below `ε·σ_max·max(m, n)` with `ε = 2⁻⁵²` are treated
/// as zero; `rank` counts the retained ones.
pub fn pseudoinverse(phi: &DMatrix<f64>) -> Result<PinvBundle> {
    let (m, n) = phi.shape();
    if m == 0 || n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "pseudoinverse requires m ≥ n ≥ 1, got {m}×{n}"
        )));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix contains non-finite entries".into(),
        ));
    }
    let svd = crate::linalg::jacobi_svd(phi);
    let singular_values = svd.sigma;
    let sigma_max = singular_values[0];
    let tol = f64::EPSILON * sigma_max * m.max(n) as f64;
    // pinv = V·Σ⁺·Uᵀ, assembled as V·(rows of Uᵀ scaled by 1/σ or zeroed).
    let mut ut_scaled = svd.u.transpose();
    let mut rank = 0;
    for (i, &sigma) in singular_values.iter().enumerate() {
        if sigma_max > 0.0 && sigma >= tol {
            rank += 1;
            let mut row = ut_scaled.row_mut(i);
            row /= sigma;
        } else {
            let mut row = ut_scaled.row_mut(i);
            row.fill(0.0);
        }
    }
    let pinv = svd.v * ut_scaled;
    Ok(PinvBundle {
        phi: phi.clone(),
        pinv,
        rank,
        singular_values,
        method: PinvMethod::Svd,
    })
}

fn check_signal_len(x: &DVector<f64>, bundle: &PinvBundle, what: &str) -> Result<()> {
    if x.len() != bundle.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: signal length {} does not match basis rows {}",
            x.len(),
            bundle.nrows()
        )));
    }
    Ok(())
}

fn check_dphi_shape(bundle: &PinvBundle, dphi: &DMatrix<f64>, what: &str) -> Result<()> {
    if dphi.shape() != bundle.phi.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: derivative matrix is {:?}, basis is {:?}",
            dphi.shape(),
            bundle.phi.shape()
        )));
    }
    Ok(())
}

/// Least-squares coefficients `c = Φ⁺x`.
pub fn coefficients(x: &DVector<f64>, bundle: &PinvBundle) -> Result<DVector<f64>> {
    check_signal_len(x, bundle, "coefficients")?;
    Ok(&bundle.pinv * x)
}

/// Orthogonal projection `x̂ = ΦΦ⁺x` onto the basis span.
pub fn project(x: &DVector<f64>, bundle: &PinvBundle) -> Result<DVector<f64>> {
    check_signal_len(x, bundle, "project")?;
    Ok(&bundle.phi * (&bundle.pinv * x))
}

/// Residual functional `r₂ = ‖x − ΦΦ⁺x‖₂²`.
pub fn residual_r2(x: &DVector<f64>, bundle: &PinvBundle) -> Result<f64> {
    check_signal_len(x, bundle, "residual_r2")?;
    let projected = &bundle.phi * (&bundle.pinv * x);
    Ok((x - projected).norm_squared())
}

/// Derivative of the projector `ΦΦ⁺` with respect to one scalar parameter,
/// given `∂Φ/∂θⱼ`. Result is m×m and symmetric.
pub fn d_projection(bundle: &PinvBundle, dphi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dphi_shape(bundle, dphi, "d_projection")?;
    let b = dphi * &bundle.pinv; // ∂Φ·Φ⁺, m×m
    let p = &bundle.phi * &bundle.pinv; // ΦΦ⁺, m×m
    let a = &b - p * &b; // (I − ΦΦ⁺)·∂Φ·Φ⁺
    Ok(&a + a.transpose())
}

/// Derivative of the pseudoinverse `Φ⁺` with respect to one scalar parameter,
/// given `∂Φ/∂θⱼ`. Result is n×m.
pub fn d_pinv(bundle: &PinvBundle, dphi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dphi_shape(bundle, dphi, "d_pinv")?;
    let pinv = &bundle.pinv;
    let phi = &bundle.phi;
    let n = phi.ncols();

    let pd = pinv * dphi; // Φ⁺∂Φ, n×n
    let term1 = -(&pd * pinv); // −Φ⁺∂ΦΦ⁺

    let dt = dphi.transpose(); // ∂Φᵀ, n×m
    let dt_perp = &dt - (&dt * phi) * pinv; // ∂Φᵀ(I − ΦΦ⁺)
    let term2 = (pinv * pinv.transpose()) * dt_perp; // Φ⁺[Φ⁺]ᵀ∂Φᵀ(I − ΦΦ⁺)

    let q = DMatrix::<f64>::identity(n, n) - pinv * phi; // I − Φ⁺Φ
    let term3 = q * ((dt * pinv.transpose()) * pinv); // (I − Φ⁺Φ)∂Φᵀ[Φ⁺]ᵀΦ⁺

    Ok(term1 + term2 + term3)
}

/// Scalar derivative of the residual functional with respect to one
/// parameter: `∂r₂ = −2·xᵀ(I − ΦΦ⁺)·∂Φ·Φ⁺·x`.
pub fn d_r2(x: &DVector<f64>, bundle: &PinvBundle, dphi: &DMatrix<f64>) -> Result<f64> {
    check_signal_len(x, bundle, "d_r2")?;
    check_dphi_shape(bundle, dphi, "d_r2")?;
    let c = &bundle.pinv * x;
    let u = dphi * c; // ∂Φ·Φ⁺·x
    let u_perp = &u - &bundle.phi * (&bundle.pinv * &u); // (I − ΦΦ⁺)·u
    Ok(-2.0 * x.dot(&u_perp))
}

/// A parametric family of sampled bases: given nonlinear parameters, produce
/// the basis matrix and its parameter derivatives. Implemented by
/// [`HermiteBasis`]; the seam for plugging in other two-parameter families.
pub trait ParametricBasis {
    fn build(&self, params: &VpParams) -> Result<SampledBasis>;
    fn interval(&self) -> (f64, f64);

    /// Smallest usable dilation: `6/(b−a)` keeps the feasibility condition
    /// satisfiable somewhere on the interval.
    fn lambda_min(&self) -> f64 {
        let (a, b) = self.interval();
        6.0 / (b - a)
    }
}

impl ParametricBasis for HermiteBasis {
    fn build(&self, params: &VpParams) -> Result<SampledBasis> {
        adaptive_hermite(&self.grid, self.n, params)
    }

    fn interval(&self) -> (f64, f64) {
        self.grid.interval()
    }
}

/// Objective and gradient of the mean normalized residual
/// `F(θ) = mean_i r₂(xᵢ)/‖xᵢ‖²` over the rows of `signals`. Zero-norm rows
/// are skipped with a warning. Also reports the basis rank for the
/// caller's rank-change diagnostic.
fn normalized_residual_objective(
    signals: &DMatrix<f64>,
    basis: &SampledBasis,
    with_gradient: bool,
) -> Result<(f64, [f64; 2], usize)> {
    let bundle = pseudoinverse(&basis.phi)?;
    let mut total = 0.0;
    let mut grad = [0.0, 0.0];
    let mut counted = 0usize;
    for row in 0..signals.nrows() {
        let x = DVector::from_iterator(signals.ncols(), signals.row(row).iter().cloned());
        let norm_sq = x.norm_squared();
        if norm_sq == 0.0 {
            log::warn!("skipping zero-norm signal at row {row} in vp_fit objective");
            continue;
        }
        total += residual_r2(&x, &bundle)? / norm_sq;
        if with_gradient {
            grad[0] += d_r2(&x, &bundle, &basis.dphi[0])? / norm_sq;
            grad[1] += d_r2(&x, &bundle, &basis.dphi[1])? / norm_sq;
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "all signals have zero norm".into(),
        ));
    }
    let denom = counted as f64;
    Ok((total / denom, [grad[0] / denom, grad[1] / denom], bundle.rank))
}

/// Fits the nonlinear parameters by safeguarded gradient descent on the mean
/// normalized residual over the rows of `signals` (one signal per row).
///
/// The raw gradient is badly scaled: the objective changes over translations
/// of about one basis width `1/λ` but over relative dilation changes of
/// order one, so the dilation component dwarfs the translation component and
/// a shared raw step stalls the translation. The update therefore descends
/// in the basis's intrinsic coordinates — translation in widths, dilation
/// multiplicatively — which scales the gradient components by `1/λ²` and
/// `λ²`. A `step_size` of 0.1 then moves roughly a tenth of a width and a
/// few percent of dilation per iteration.
///
/// Each iteration starts from the fixed `step_size`; if the candidate does
/// not decrease the objective the step is halved, up to 20 times, after which
/// the fit stops early at the current parameters. The dilation is clamped to
/// `λ ≥ λ_min` after every update so the feasibility condition stays
/// satisfiable.
pub fn vp_fit(
    signals: &DMatrix<f64>,
    basis: &impl ParametricBasis,
    theta0: &VpParams,
    steps: usize,
    step_size: f64,
) -> Result<VpParams> {
    if signals.nrows() == 0 || signals.ncols() == 0 {
        return Err(Error::InvalidArgument("empty signal batch".into()));
    }
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive and finite, got {step_size}"
        )));
    }
    let lambda_min = basis.lambda_min();
    let mut theta = *theta0;
    let mut last_rank: Option<usize> = None;

    let mut current = basis.build(&theta)?;
    if signals.ncols() != current.phi.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "signals have {} samples per row, basis has {} rows",
            signals.ncols(),
            current.phi.nrows()
        )));
    }

    for step in 0..steps {
        let (objective, grad, rank) = normalized_residual_objective(signals, &current, true)?;
        if let Some(prev) = last_rank {
            if prev != rank {
                log::warn!(
                    "basis rank changed from {prev} to {rank} at iteration {step}; \
                     derivative formulas assume locally constant rank"
                );
            }
        }
        last_rank = Some(rank);
        if !grad[0].is_finite() || !grad[1].is_finite() {
            return Err(Error::NonFiniteGradient { step });
        }

        let lambda_sq = theta.lambda * theta.lambda;
        let direction = [grad[0] / lambda_sq, grad[1] * lambda_sq];
        let mut scale = step_size;
        let mut accepted = false;
        for _ in 0..=20 {
            let candidate = VpParams {
                tau: theta.tau - scale * direction[0],
                lambda: (theta.lambda - scale * direction[1]).max(lambda_min),
            };
            if let Ok(cand_basis) = basis.build(&candidate) {
                let (cand_obj, _, _) = normalized_residual_objective(signals, &cand_basis, false)?;
                if cand_obj < objective {
                    theta = candidate;
                    current = cand_basis;
                    accepted = true;
                    break;
                }
            }
            scale /= 2.0;
        }
        if !accepted {
            break; // step fully damped: at a (numerical) stationary point
        }
    }
    Ok(theta)
}
