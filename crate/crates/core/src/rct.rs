//! Randomized-experiment adapter: difference in means, covariate balance,
//! the long regression, and the residualized estimator, each with its
//! per-observation influence contributions.
//!
//! All estimators are computed in regression form on data demeaned within
//! strata (one stratum when none are given). Without strata this is exactly
//! the difference in means `Ȳ₁ − Ȳ₀` with contributions
//! `T(Y − Ȳ₁)/π̂ − (1 − T)(Y − Ȳ₀)/(1 − π̂)`, π̂ the realized treated share.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{joint_covariance, InfluenceContributions};
use crate::error::{Error, Result};
use crate::model::{compute_lambda, residualize, JointCovariance};

#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    outcome: Vec<f64>,
    treatment: Vec<bool>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    strata: Option<Vec<usize>>,
    clusters: Option<Vec<usize>>,
}

impl RctDataset {
    pub fn new(outcome: Vec<f64>, treatment: Vec<bool>, covariates: DMatrix<f64>) -> Result<Self> {
        let p = covariates.ncols();
        let names = (1..=p).map(|k| format!("x{k}")).collect();
        Self::with_names(outcome, treatment, covariates, names)
    }

    pub fn with_names(
        outcome: Vec<f64>,
        treatment: Vec<bool>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcome.len();
        for len in [treatment.len(), covariates.nrows()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariates.ncols(),
                found: covariate_names.len(),
            });
        }
        if covariates.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: i + 1,
                column: "outcome".into(),
                value: outcome[i].to_string(),
            });
        }
        if let Some(i) = (0..n).find(|&i| covariates.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteValue {
                row: i + 1,
                column: "covariates".into(),
                value: "non-finite".into(),
            });
        }
        let treated = treatment.iter().filter(|t| **t).count();
        for (arm, size) in [(1u8, treated), (0u8, n - treated)] {
            if size < 2 {
                return Err(Error::EmptyArm { arm, size });
            }
        }
        Ok(Self {
            outcome,
            treatment,
            covariates,
            covariate_names,
            strata: None,
            clusters: None,
        })
    }

    /// Demean within these strata before estimation.
    pub fn with_strata(mut self, strata: Vec<usize>) -> Result<Self> {
        if strata.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: strata.len(),
            });
        }
        self.strata = Some(strata);
        Ok(self)
    }

    /// Use cluster-robust covariance with these cluster labels.
    pub fn with_clusters(mut self, clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: clusters.len(),
            });
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p_gamma(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn clusters(&self) -> Option<&[usize]> {
        self.clusters.as_deref()
    }

    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    fn demeaned(&self) -> Demeaned {
        let n = self.n();
        let p = self.p_gamma();
        let groups: Vec<usize> = match &self.strata {
            Some(s) => s.clone(),
            None => vec![0; n],
        };
        let mut sums: std::collections::BTreeMap<usize, (f64, f64, Vec<f64>, f64)> =
            std::collections::BTreeMap::new();
        for i in 0..n {
            let e = sums
                .entry(groups[i])
                .or_insert_with(|| (0.0, 0.0, vec![0.0; p], 0.0));
            e.0 += self.outcome[i];
            e.1 += f64::from(u8::from(self.treatment[i]));
            for k in 0..p {
                e.2[k] += self.covariates[(i, k)];
            }
            e.3 += 1.0;
        }
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let (sy, st, sx, cnt) = &sums[&groups[i]];
            y.push(self.outcome[i] - sy / cnt);
            t.push(f64::from(u8::from(self.treatment[i])) - st / cnt);
            for k in 0..p {
                x[(i, k)] = self.covariates[(i, k)] - sx[k] / cnt;
            }
        }
        let tt = t.iter().map(|v| v * v).sum::<f64>();
        Demeaned { y, t, x, tt }
    }
}

struct Demeaned {
    y: Vec<f64>,
    t: Vec<f64>,
    x: DMatrix<f64>,
    /// `Σ t̃²`.
    tt: f64,
}

impl Demeaned {
    /// Coefficient of `v` on `t̃` and its influence contributions.
    fn on_treatment(&self, v: impl Fn(usize) -> f64) -> (f64, Vec<f64>) {
        let n = self.t.len();
        if self.tt <= 0.0 {
            return (f64::NAN, vec![f64::NAN; n]);
        }
        let coef = (0..n).map(|i| self.t[i] * v(i)).sum::<f64>() / self.tt;
        let scale = n as f64 / self.tt;
        let contrib = (0..n)
            .map(|i| scale * self.t[i] * (v(i) - coef * self.t[i]))
            .collect();
        (coef, contrib)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortFit {
    pub c_short: f64,
    pub contributions: Vec<f64>,
}

/// Difference in means.
pub fn short_estimator(data: &RctDataset) -> Result<ShortFit> {
    let d = data.demeaned();
    let (c_short, contributions) = d.on_treatment(|i| d.y[i]);
    if !c_short.is_finite() {
        return Err(Error::DomainError("treatment is constant within every stratum".into()));
    }
    Ok(ShortFit {
        c_short,
        contributions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceFit {
    pub gamma_hat: Vec<f64>,
    /// `n x p` contributions.
    pub contributions: DMatrix<f64>,
}

/// Covariate balance `X̄₁ − X̄₀`, one entry per covariate.
pub fn balance_stats(data: &RctDataset) -> Result<BalanceFit> {
    let d = data.demeaned();
    let n = data.n();
    let p = data.p_gamma();
    let mut gamma_hat = Vec::with_capacity(p);
    let mut contributions = DMatrix::zeros(n, p);
    for k in 0..p {
        let (g, c) = d.on_treatment(|i| d.x[(i, k)]);
        if !g.is_finite() {
            return Err(Error::DomainError("treatment is constant within every stratum".into()));
        }
        gamma_hat.push(g);
        contributions.column_mut(k).copy_from_slice(&c);
    }
    Ok(BalanceFit {
        gamma_hat,
        contributions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongFit {
    pub c_long: f64,
    pub beta_long: Vec<f64>,
    /// OLS influence rows of the treatment coefficient.
    pub contributions: Vec<f64>,
}

/// OLS of `Y` on an intercept (or strata effects), `T` and `X`; QR based.
pub fn long_regression(data: &RctDataset) -> Result<LongFit> {
    let d = data.demeaned();
    let n = data.n();
    let p = data.p_gamma();
    let k = p + 1;
    let mut z = DMatrix::zeros(n, k);
    z.column_mut(0).copy_from_slice(&d.t);
    z.view_mut((0, 1), (n, p)).copy_from(&d.x);
    let col_norms: Vec<f64> = z.column_iter().map(|c| c.norm()).collect();

    let qr = z.clone().qr();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficientDesign { column: j });
        }
    }
    let y = DVector::from_column_slice(&d.y);
    let qty = qr.q().tr_mul(&y);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficientDesign { column: 0 })?;
    let resid = &y - &z * &coef;

    // first row of (Z'Z / n)⁻¹ = n · (R'R)⁻¹ e₀
    let mut e0 = DVector::zeros(k);
    e0[0] = 1.0;
    let w = r
        .tr_solve_lower_triangular(&e0)
        .and_then(|u| r.solve_upper_triangular(&u))
        .ok_or(Error::RankDeficientDesign { column: 0 })?
        * n as f64;
    let contributions = (0..n).map(|i| z.row(i).dot(&w.transpose()) * resid[i]).collect();
    Ok(LongFit {
        c_long: coef[0],
        beta_long: coef.as_slice()[1..].to_vec(),
        contributions,
    })
}

/// Short, long and residualized estimates from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTriple {
    pub c_short: f64,
    pub c_long: f64,
    pub c_resid: f64,
    pub beta_long: Vec<f64>,
    pub beta_resid: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    /// Joint covariance of `(c_short, gamma_hat)`.
    pub sigma: JointCovariance,
    /// Per-observation variance of the long estimator.
    pub long_variance: f64,
}

/// Stacked contributions of the short estimator and the balance checks.
pub fn stacked_contributions(data: &RctDataset) -> Result<(ShortFit, BalanceFit, InfluenceContributions)> {
    let short = short_estimator(data)?;
    let balance = balance_stats(data)?;
    let contrib = InfluenceContributions::stack(
        &short.contributions,
        &balance.contributions,
        data.clusters.clone(),
    )?;
    Ok((short, balance, contrib))
}

pub fn residualized_estimator(data: &RctDataset) -> Result<EstimatorTriple> {
    let (short, balance, contrib) = stacked_contributions(data)?;
    let sigma = joint_covariance(&contrib)?;
    let beta_resid = compute_lambda(&sigma)?;
    let adj = residualize(short.c_short, &balance.gamma_hat, beta_resid.as_slice())?;
    let long = long_regression(data)?;
    let long_contrib = InfluenceContributions::stack(
        &long.contributions,
        &balance.contributions,
        data.clusters.clone(),
    )?;
    let long_variance = long_variance(&long_contrib);
    Ok(EstimatorTriple {
        c_short: short.c_short,
        c_long: long.c_long,
        c_resid: adj.c_r,
        beta_long: long.beta_long,
        beta_resid: adj.lambda,
        gamma_hat: balance.gamma_hat,
        sigma,
        long_variance,
    })
}

fn long_variance(c: &InfluenceContributions) -> f64 {
    let v = c.values().column(0);
    let n = v.len() as f64;
    let m = v.sum() / n;
    match c.cluster_ids() {
        None => v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n,
        Some(ids) => {
            let mut sums = std::collections::BTreeMap::new();
            for (x, g) in v.iter().zip(ids) {
                *sums.entry(*g).or_insert(0.0) += x - m;
            }
            sums.values().map(|s: &f64| s * s).sum::<f64>() / n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(y: &[f64], t: &[u8], x: &[f64]) -> RctDataset {
        let n = y.len();
        let p = x.len() / n;
        RctDataset::new(
            y.to_vec(),
            t.iter().map(|v| *v == 1).collect(),
            DMatrix::from_row_slice(n, p, x),
        )
        .unwrap()
    }

    #[test]
    fn difference_in_means_examples() {
        let d = dataset(&[2.0, 2.0, 1.0, 1.0], &[1, 1, 0, 0], &[0.0, 1.0, 0.0, 1.0]);
        assert!((short_estimator(&d).unwrap().c_short - 1.0).abs() < 1e-15);

        let d = dataset(&[3.0, 5.0, 5.0, 3.0], &[1, 1, 0, 0], &[0.0, 1.0, 0.0, 1.0]);
        assert!(short_estimator(&d).unwrap().c_short.abs() < 1e-15);

        let y = [1.3, 0.2, 4.4, -1.0, 2.5];
        let t = [1, 0, 1, 0, 0];
        let x = [0.1, 0.4, -0.3, 0.8, 0.0];
        let a = short_estimator(&dataset(&y, &t, &x)).unwrap().c_short;
        let shifted: Vec<f64> = y.iter().map(|v| v + 17.5).collect();
        let b = short_estimator(&dataset(&shifted, &t, &x)).unwrap().c_short;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn regression_form_matches_difference_in_means_contributions() {
        let y = [1.3, 0.2, 4.4, -1.0, 2.5, 0.7];
        let t = [1, 0, 1, 0, 0, 1];
        let x = [0.1, 0.4, -0.3, 0.8, 0.0, 1.1];
        let d = dataset(&y, &t, &x);
        let fit = short_estimator(&d).unwrap();
        let pi = 0.5;
        let y1 = (1.3 + 4.4 + 0.7) / 3.0;
        let y0 = (0.2 - 1.0 + 2.5) / 3.0;
        assert!((fit.c_short - (y1 - y0)).abs() < 1e-14);
        for i in 0..6 {
            let expect = if t[i] == 1 {
                (y[i] - y1) / pi
            } else {
                -(y[i] - y0) / (1.0 - pi)
            };
            assert!((fit.contributions[i] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn balance_examples() {
        let d = dataset(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 0, 0], &[1.0, 3.0, 0.0, 2.0]);
        assert!((balance_stats(&d).unwrap().gamma_hat[0] - 1.0).abs() < 1e-15);

        let d = dataset(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 0, 0], &[1.0, 3.0, 3.0, 1.0]);
        assert!(balance_stats(&d).unwrap().gamma_hat[0].abs() < 1e-15);
    }

    #[test]
    fn long_regression_hand_examples() {
        let d = dataset(&[0.0, 1.0, 1.0, 2.0], &[0, 0, 1, 1], &[0.0, 1.0, 0.0, 1.0]);
        let l = long_regression(&d).unwrap();
        assert!((l.c_long - 1.0).abs() < 1e-12);
        assert!((l.beta_long[0] - 1.0).abs() < 1e-12);

        // exact interpolation of Y = 1 + 2T + 3X
        let t = [0, 1, 0, 1, 1, 0, 1];
        let x = [0.5, -1.0, 2.0, 0.3, 1.7, -0.4, 0.0];
        let y: Vec<f64> = t
            .iter()
            .zip(&x)
            .map(|(t, x)| 1.0 + 2.0 * f64::from(*t) + 3.0 * x)
            .collect();
        let l = long_regression(&dataset(&y, &t, &x)).unwrap();
        assert!((l.c_long - 2.0).abs() < 1e-12);
        assert!((l.beta_long[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_covariate_leaves_long_equal_to_short() {
        // X balanced across arms so the long and short estimates coincide
        let y = [1.0, 3.0, 2.0, 0.5, 2.5, 1.5];
        let t = [1, 1, 1, 0, 0, 0];
        let x = [1.0, -1.0, 0.0, 1.0, -1.0, 0.0];
        let d = dataset(&y, &t, &x);
        let s = short_estimator(&d).unwrap().c_short;
        let l = long_regression(&d).unwrap().c_long;
        assert!((s - l).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let d = dataset(
            &[0.0, 1.0, 1.0, 2.0, 0.3],
            &[0, 0, 1, 1, 1],
            &[0.0, 0.0, 1.0, 1.0, 1.0],
        );
        assert!(matches!(
            long_regression(&d),
            Err(Error::RankDeficientDesign { .. })
        ));
    }

    #[test]
    fn small_arms_are_rejected() {
        let r = RctDataset::new(
            vec![1.0, 2.0, 3.0],
            vec![true, false, false],
            DMatrix::from_element(3, 1, 0.0),
        );
        assert!(matches!(r, Err(Error::EmptyArm { arm: 1, size: 1 })));
    }

    #[test]
    fn fwl_identity_and_triple_invariants() {
        let n = 40;
        let mut y = Vec::new();
        let mut t = Vec::new();
        let mut x = Vec::new();
        for i in 0..n {
            let f = i as f64;
            let ti = u8::from(i % 3 == 0 || i % 7 == 1);
            let x1 = (f * 0.37).sin();
            let x2 = (f * 1.13).cos() + 0.1 * f;
            y.push(0.5 + f64::from(ti) * 1.2 + 2.0 * x1 - 0.3 * x2 + (f * 2.9).sin());
            t.push(ti);
            x.extend([x1, x2]);
        }
        let d = dataset(&y, &t, &x);
        let tr = residualized_estimator(&d).unwrap();
        let fwl = tr.c_short
            - tr.beta_long.iter().zip(&tr.gamma_hat).map(|(b, g)| b * g).sum::<f64>();
        assert!((tr.c_long - fwl).abs() < 1e-10);
        let resid = tr.c_short
            - tr.beta_resid.iter().zip(&tr.gamma_hat).map(|(b, g)| b * g).sum::<f64>();
        assert_eq!(tr.c_resid, resid);
    }

    #[test]
    fn strata_demeaning_reduces_to_pooled_without_strata() {
        let y = [1.0, 3.0, 2.0, 0.5, 2.5, 1.5, 0.2, 0.9];
        let t = [1, 1, 0, 0, 1, 0, 1, 0];
        let x = [1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 0.3, 0.6];
        let d = dataset(&y, &t, &x);
        let single = d.clone().with_strata(vec![4; 8]).unwrap();
        let a = residualized_estimator(&d).unwrap();
        let b = residualized_estimator(&single).unwrap();
        assert!((a.c_resid - b.c_resid).abs() < 1e-12);
        let two = d.with_strata(vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let c = short_estimator(&two).unwrap();
        assert!(c.c_short.is_finite());
    }
}
