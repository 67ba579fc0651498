//! Covariance algebra of a baseline estimator and its diagnostic checks.
//!
//! Everything here is a function of the joint asymptotic covariance of
//! `(c_hat, gamma_hat)`: the adjustment coefficient, residual variance,
//! informativeness, the per-check decomposition of the correction, and the
//! worst-case bias bounds under local misspecification.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Relative asymmetry tolerated in the check covariance.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest accepted reciprocal condition number of the check covariance.
pub const MIN_RCOND: f64 = 1e-12;
/// Residual variance at or below this share of `sigma_c_sq` is degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Informativeness is reported clipped to `[0, INFORMATIVENESS_CAP]`.
pub const INFORMATIVENESS_CAP: f64 = 1.0 - 1e-15;
/// Default informativeness above which the orthogonality diagnostic flags
/// the baseline estimator.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.01;

/// Joint covariance of the baseline estimator and the checks, on the
/// per-observation scale (the covariance of the estimates is `Σ / n`).
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    sigma_c_sq: f64,
    sigma_c_gamma: DVector<f64>,
    sigma_gamma_gamma: DMatrix<f64>,
    n: usize,
}

impl JointCovariance {
    /// Validate and build from blocks.
    pub fn new(
        sigma_c_sq: f64,
        sigma_c_gamma: DVector<f64>,
        sigma_gamma_gamma: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        let p = sigma_c_gamma.len();
        if p == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if sigma_gamma_gamma.nrows() != p || sigma_gamma_gamma.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: sigma_gamma_gamma.nrows().max(sigma_gamma_gamma.ncols()),
            });
        }
        if !(sigma_c_sq.is_finite() && sigma_c_sq > 0.0) {
            return Err(Error::InvalidBaselineVariance(sigma_c_sq));
        }
        if sigma_c_gamma.iter().any(|v| !v.is_finite())
            || sigma_gamma_gamma.iter().any(|v| !v.is_finite())
        {
            return Err(Error::DomainError("covariance has non-finite entries".into()));
        }

        let scale = sigma_gamma_gamma.amax();
        let mut asym = 0.0_f64;
        for i in 0..p {
            for j in 0..i {
                asym = asym.max((sigma_gamma_gamma[(i, j)] - sigma_gamma_gamma[(j, i)]).abs());
            }
        }
        if scale > 0.0 && asym / scale > SYMMETRY_TOL {
            return Err(Error::AsymmetricCovariance {
                asymmetry: asym / scale,
            });
        }
        let sigma_gamma_gamma = (&sigma_gamma_gamma + sigma_gamma_gamma.transpose()) * 0.5;

        let rc = rcond(&sigma_gamma_gamma);
        if !(rc >= MIN_RCOND) {
            return Err(Error::SingularCheckCovariance { rcond: rc });
        }
        let out = Self {
            sigma_c_sq,
            sigma_c_gamma,
            sigma_gamma_gamma,
            n,
        };
        let explained = out.explained_variance()?;
        if out.sigma_c_sq - explained <= DEGENERACY_TOL * out.sigma_c_sq {
            return Err(Error::DegenerateResidualVariance);
        }
        Ok(out)
    }

    /// Validate and build from the full `(1 + p) x (1 + p)` matrix with the
    /// baseline estimator in position 0.
    pub fn from_matrix(full: &DMatrix<f64>, n: usize) -> Result<Self> {
        let k = full.nrows();
        if k < 2 || full.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k.max(2),
                found: full.ncols(),
            });
        }
        let p = k - 1;
        let c_gamma = DVector::from_iterator(p, (1..k).map(|j| 0.5 * (full[(0, j)] + full[(j, 0)])));
        let gg = full.view((1, 1), (p, p)).into_owned();
        Self::new(full[(0, 0)], c_gamma, gg, n)
    }

    /// Convenience constructor for one check with correlation `rho`.
    pub fn scalar(sigma_c: f64, sigma_gamma: f64, rho: f64, n: usize) -> Result<Self> {
        Self::new(
            sigma_c * sigma_c,
            DVector::from_element(1, rho * sigma_c * sigma_gamma),
            DMatrix::from_element(1, 1, sigma_gamma * sigma_gamma),
            n,
        )
    }

    pub fn sigma_c_sq(&self) -> f64 {
        self.sigma_c_sq
    }

    pub fn sigma_c_gamma(&self) -> &DVector<f64> {
        &self.sigma_c_gamma
    }

    pub fn sigma_gamma_gamma(&self) -> &DMatrix<f64> {
        &self.sigma_gamma_gamma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_gamma(&self) -> usize {
        self.sigma_c_gamma.len()
    }

    /// Same covariance with a different sample size.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Full `(1 + p) x (1 + p)` matrix.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let p = self.p_gamma();
        let mut m = DMatrix::zeros(p + 1, p + 1);
        m[(0, 0)] = self.sigma_c_sq;
        for j in 0..p {
            m[(0, j + 1)] = self.sigma_c_gamma[j];
            m[(j + 1, 0)] = self.sigma_c_gamma[j];
        }
        m.view_mut((1, 1), (p, p)).copy_from(&self.sigma_gamma_gamma);
        m
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.sigma_gamma_gamma.clone()).ok_or(Error::SingularCheckCovariance {
            rcond: rcond(&self.sigma_gamma_gamma),
        })
    }

    /// Lower Cholesky factor of the check covariance.
    pub fn check_factor(&self) -> Result<DMatrix<f64>> {
        Ok(self.cholesky()?.l())
    }

    /// `Σ_cγ Σ_γγ⁻¹ Σ_γc`.
    fn explained_variance(&self) -> Result<f64> {
        let lambda = compute_lambda(self)?;
        Ok(lambda.dot(&self.sigma_c_gamma))
    }

    /// `λ Σ_γγ λ'`.
    pub fn check_quadratic(&self, lambda: &DVector<f64>) -> f64 {
        (lambda.transpose() * &self.sigma_gamma_gamma * lambda)[(0, 0)]
    }

    /// Variance of the influence function of `c_hat - λ'γ_hat`:
    /// `σ_c² − 2λΣ_γc + λΣ_γγλ'`.
    pub fn adjusted_variance(&self, lambda: &DVector<f64>) -> Result<f64> {
        check_dim(self.p_gamma(), lambda.len())?;
        Ok(self.sigma_c_sq - 2.0 * lambda.dot(&self.sigma_c_gamma) + self.check_quadratic(lambda))
    }

    /// Standard error of the baseline estimate, `sqrt(σ_c² / n)`.
    pub fn se_baseline(&self) -> f64 {
        (self.sigma_c_sq / self.n as f64).sqrt()
    }

    /// Standard error of the residualized estimate, `sqrt(σ_R² / n)`.
    pub fn se_residualized(&self) -> Result<f64> {
        Ok((diagnostics(self)?.sigma_r_sq / self.n as f64).sqrt())
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Reciprocal condition number `λ_min / λ_max` of a symmetric matrix;
/// zero or negative when it is not positive definite.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return if m[(0, 0)] > 0.0 { 1.0 } else { 0.0 };
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if max <= 0.0 {
        return 0.0;
    }
    min / max
}

/// Adjustment coefficient `Λ = Σ_cγ Σ_γγ⁻¹`, returned as a column vector.
/// Solved through the Cholesky factor of `Σ_γγ`.
pub fn compute_lambda(sigma: &JointCovariance) -> Result<DVector<f64>> {
    let chol = sigma.cholesky()?;
    Ok(chol.solve(&sigma.sigma_c_gamma))
}

/// Point part of the residualization: `c_r = c_hat − λ·γ_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub c_hat: f64,
    pub gamma_hat: Vec<f64>,
    pub lambda: Vec<f64>,
    pub c_r: f64,
    pub correction: f64,
    /// `lambda[k] * gamma_hat[k]`.
    pub decomposition: Vec<f64>,
}

pub fn residualize(c_hat: f64, gamma_hat: &[f64], lambda: &[f64]) -> Result<Adjustment> {
    check_dim(lambda.len(), gamma_hat.len())?;
    let decomposition: Vec<f64> = lambda.iter().zip(gamma_hat).map(|(l, g)| l * g).collect();
    let correction: f64 = decomposition.iter().sum();
    Ok(Adjustment {
        c_hat,
        gamma_hat: gamma_hat.to_vec(),
        lambda: lambda.to_vec(),
        c_r: c_hat - correction,
        correction,
        decomposition,
    })
}

/// Variance diagnostics implied by the joint covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sigma_r_sq: f64,
    pub informativeness: f64,
    pub bias_reduction_factor: f64,
    pub variance_reduction_pct: f64,
    pub equiv_sample_increase: f64,
}

impl Diagnostics {
    /// Diagnostics from a known informativeness and baseline variance.
    pub fn from_informativeness(informativeness: f64, sigma_c_sq: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&informativeness) {
            return Err(Error::DomainError(format!(
                "informativeness {informativeness} outside [0, 1)"
            )));
        }
        let i = informativeness.clamp(0.0, INFORMATIVENESS_CAP);
        Ok(Self {
            sigma_r_sq: sigma_c_sq * (1.0 - i),
            informativeness: i,
            bias_reduction_factor: (1.0 - i).sqrt(),
            variance_reduction_pct: 100.0 * i,
            equiv_sample_increase: 1.0 / (1.0 - i) - 1.0,
        })
    }
}

pub fn diagnostics(sigma: &JointCovariance) -> Result<Diagnostics> {
    let explained = sigma.explained_variance()?;
    let i = (explained / sigma.sigma_c_sq).clamp(0.0, INFORMATIVENESS_CAP);
    Diagnostics::from_informativeness(i, sigma.sigma_c_sq)
}

/// Full residualization result for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualizationResult {
    pub lambda: Vec<f64>,
    pub c_hat: f64,
    pub gamma_hat: Vec<f64>,
    pub c_r: f64,
    pub se_c: f64,
    pub se_r: f64,
    pub informativeness: f64,
    pub correction: f64,
    pub decomposition: Vec<f64>,
}

impl ResidualizationResult {
    pub fn compute(sigma: &JointCovariance, c_hat: f64, gamma_hat: &[f64]) -> Result<Self> {
        check_dim(sigma.p_gamma(), gamma_hat.len())?;
        let lambda = compute_lambda(sigma)?;
        let adj = residualize(c_hat, gamma_hat, lambda.as_slice())?;
        let diag = diagnostics(sigma)?;
        let se_c = sigma.se_baseline();
        Ok(Self {
            lambda: adj.lambda,
            c_hat,
            gamma_hat: adj.gamma_hat,
            c_r: adj.c_r,
            se_c,
            se_r: se_c * diag.bias_reduction_factor,
            informativeness: diag.informativeness,
            correction: adj.correction,
            decomposition: adj.decomposition,
        })
    }
}

/// Worst-case first-order bias `μ‖ψ_λ‖` at one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaBias {
    pub lambda: Vec<f64>,
    pub worst_case_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecBounds {
    pub mu: f64,
    /// Requested coefficients followed by `Λ` itself.
    pub worst_case_bias_at: Vec<LambdaBias>,
    pub minimax_bias: f64,
    pub minimax_mse: f64,
    /// Entry of `worst_case_bias_at` with the smallest bias.
    pub argmin: Vec<f64>,
}

/// `μ · sqrt(σ_c² − 2λΣ_γc + λΣ_γγλ')`.
pub fn worst_case_bias(sigma: &JointCovariance, mu: f64, lambda: &DVector<f64>) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::NegativeMu(mu));
    }
    Ok(mu * sigma.adjusted_variance(lambda)?.max(0.0).sqrt())
}

pub fn misspec_bounds(
    sigma: &JointCovariance,
    mu: f64,
    lambdas: &[Vec<f64>],
) -> Result<MisspecBounds> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::NegativeMu(mu));
    }
    let big_lambda = compute_lambda(sigma)?;
    let diag = diagnostics(sigma)?;
    let mut at = Vec::with_capacity(lambdas.len() + 1);
    for l in lambdas {
        let v = DVector::from_column_slice(l);
        at.push(LambdaBias {
            lambda: l.clone(),
            worst_case_bias: worst_case_bias(sigma, mu, &v)?,
        });
    }
    at.push(LambdaBias {
        lambda: big_lambda.as_slice().to_vec(),
        worst_case_bias: worst_case_bias(sigma, mu, &big_lambda)?,
    });
    // Compare the exact quadratic forms so that μ = 0 still ranks by ‖ψ_λ‖.
    let mut best = at.len() - 1;
    let mut best_len = sigma.adjusted_variance(&big_lambda)?;
    for (k, l) in lambdas.iter().enumerate() {
        let len = sigma.adjusted_variance(&DVector::from_column_slice(l))?;
        if len < best_len {
            best = k;
            best_len = len;
        }
    }
    Ok(MisspecBounds {
        mu,
        argmin: at[best].lambda.clone(),
        worst_case_bias_at: at,
        minimax_bias: mu * sigma.sigma_c_sq.sqrt() * diag.bias_reduction_factor,
        minimax_mse: (1.0 + mu * mu) * sigma.sigma_c_sq * (1.0 - diag.informativeness),
    })
}

/// Orthogonality diagnostic: does the baseline estimator co-move with the
/// checks enough that residualizing would shrink its variance?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    /// `n γ_hat' Σ_γγ⁻¹ γ_hat`.
    pub wald_stat: f64,
    pub dof: usize,
    pub wald_p_value: f64,
    /// Euclidean norm of `Σ_cγ`.
    pub sigma_c_gamma_norm: f64,
    pub informativeness: f64,
    pub flag: bool,
    pub note: Option<String>,
}

pub fn orthogonality_stat(
    sigma_hat: &JointCovariance,
    c_hat: f64,
    gamma_hat: &[f64],
    flag_threshold: f64,
) -> Result<Orthogonality> {
    let _ = c_hat;
    check_dim(sigma_hat.p_gamma(), gamma_hat.len())?;
    let chol = sigma_hat.cholesky()?;
    let g = DVector::from_column_slice(gamma_hat);
    let wald_stat = sigma_hat.n as f64 * g.dot(&chol.solve(&g));
    let dof = gamma_hat.len();
    let diag = diagnostics(sigma_hat)?;
    let flag = diag.informativeness > flag_threshold;
    Ok(Orthogonality {
        wald_stat,
        dof,
        wald_p_value: 1.0 - stats::chi2_cdf(wald_stat, dof),
        sigma_c_gamma_norm: sigma_hat.sigma_c_gamma.norm(),
        informativeness: diag.informativeness,
        flag,
        note: flag.then(|| "checks predict part of the sampling error; residualizing reduces variance".to_string()),
    })
}
