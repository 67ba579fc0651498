//! Plug-in estimate of the joint covariance from per-observation influence
//! contributions, i.i.d. or cluster-robust.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{diagnostics, JointCovariance};

/// Per-observation influence values: column 0 is the baseline estimator,
/// columns `1..=p` are the checks.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceContributions {
    values: DMatrix<f64>,
    cluster_ids: Option<Vec<usize>>,
}

impl InfluenceContributions {
    pub fn new(values: DMatrix<f64>, cluster_ids: Option<Vec<usize>>) -> Result<Self> {
        let (n, k) = values.shape();
        if k < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: k,
            });
        }
        let p = k - 1;
        if n < p + 2 {
            return Err(Error::TooFewObservations {
                found: n,
                required: p + 2,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("influence contributions must be finite".into()));
        }
        if let Some(ids) = &cluster_ids {
            if ids.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: ids.len(),
                });
            }
        }
        Ok(Self { values, cluster_ids })
    }

    /// Stack a baseline column with a block of check columns.
    pub fn stack(
        baseline: &[f64],
        checks: &DMatrix<f64>,
        cluster_ids: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = baseline.len();
        if checks.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: checks.nrows(),
            });
        }
        let p = checks.ncols();
        let mut values = DMatrix::zeros(n, p + 1);
        values.column_mut(0).copy_from_slice(baseline);
        values.view_mut((0, 1), (n, p)).copy_from(checks);
        Self::new(values, cluster_ids)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p_gamma(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn cluster_ids(&self) -> Option<&[usize]> {
        self.cluster_ids.as_deref()
    }

    fn centered(&self) -> DMatrix<f64> {
        let n = self.n() as f64;
        let mut c = self.values.clone();
        for mut col in c.column_iter_mut() {
            let m = col.sum() / n;
            col.add_scalar_mut(-m);
        }
        c
    }
}

/// Demeaned outer-product estimate `(1/n) Σ ψᵢψᵢ'`, or with clusters
/// `(1/n) Σ_g (Σ_{i∈g} ψᵢ)(Σ_{i∈g} ψᵢ)'`. The result is validated.
pub fn joint_covariance(contrib: &InfluenceContributions) -> Result<JointCovariance> {
    let n = contrib.n();
    let centered = contrib.centered();
    let full = match contrib.cluster_ids() {
        None => centered.tr_mul(&centered) / n as f64,
        Some(ids) => {
            let (index, groups) = dense_labels(ids);
            let required = contrib.p_gamma() + 2;
            if groups < required {
                return Err(Error::TooFewClusters {
                    found: groups,
                    required,
                });
            }
            let mut sums = DMatrix::zeros(groups, centered.ncols());
            for (i, &g) in index.iter().enumerate() {
                let mut row = sums.row_mut(g);
                row += centered.row(i);
            }
            sums.tr_mul(&sums) / n as f64
        }
    };
    JointCovariance::from_matrix(&full, n)
}

fn dense_labels(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::BTreeMap::new();
    let index = ids
        .iter()
        .map(|id| {
            let next = map.len();
            *map.entry(*id).or_insert(next)
        })
        .collect();
    (index, map.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Baseline,
    Residualized,
}

/// Standard error of the baseline or residualized estimate.
pub fn se_of(sigma: &JointCovariance, which: Which) -> Result<f64> {
    let n = sigma.n() as f64;
    Ok(match which {
        Which::Baseline => (sigma.sigma_c_sq() / n).sqrt(),
        Which::Residualized => (diagnostics(sigma)?.sigma_r_sq / n).sqrt(),
    })
}

/// Frobenius norm of the difference of two full covariance matrices.
pub fn frobenius_distance(a: &JointCovariance, b: &JointCovariance) -> f64 {
    (a.full_matrix() - b.full_matrix()).norm()
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}
