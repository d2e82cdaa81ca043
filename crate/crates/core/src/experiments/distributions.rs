//! Data-generating distributions for the Monte Carlo harness.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::psd_factor;
use crate::error::{Error, Result};
use crate::geometry::matrix_from_rows;

/// JSON form of a distribution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Atoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Pairs `(X, Y)` with `X ~ N(0, x_cov)` and `Y = theta0' X + sigma * eps`.
    Regression { theta0: Vec<f64>, sigma: f64, x_cov: Vec<Vec<f64>> },
}

/// A validated, sampleable distribution.
#[derive(Debug, Clone)]
pub enum Distribution {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64>, factor: DMatrix<f64> },
    Atoms { points: Vec<DVector<f64>>, weights: Vec<f64>, cdf: Vec<f64> },
    Regression { theta0: DVector<f64>, sigma: f64, x_cov: DMatrix<f64>, x_factor: DMatrix<f64> },
}

impl DistributionSpec {
    pub fn build(&self) -> Result<Distribution> {
        match self {
            DistributionSpec::Gaussian { mean, cov } => {
                let mean = DVector::from_vec(mean.clone());
                let cov = matrix_from_rows(cov)?;
                if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
                    return Err(Error::invalid("gaussian cov must be d x d"));
                }
                if (&cov - cov.transpose()).norm() > 1e-10 * (1.0 + cov.norm()) {
                    return Err(Error::invalid("gaussian cov must be symmetric"));
                }
                let factor = psd_factor(&cov);
                Ok(Distribution::Gaussian { mean, cov, factor })
            }
            DistributionSpec::Atoms { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(Error::invalid("atoms need matching non-empty points and weights"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "atom weights must sum to 1 (within 1e-12), got {total}"
                    )));
                }
                if weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::invalid("atom weights must be non-negative"));
                }
                let d = points[0].len();
                if d == 0 || points.iter().any(|p| p.len() != d) {
                    return Err(Error::invalid("atom points must share a positive dimension"));
                }
                let points: Vec<DVector<f64>> =
                    points.iter().map(|p| DVector::from_vec(p.clone())).collect();
                let mut cdf = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w;
                    cdf.push(acc);
                }
                Ok(Distribution::Atoms { points, weights: weights.clone(), cdf })
            }
            DistributionSpec::Regression { theta0, sigma, x_cov } => {
                if !(*sigma > 0.0) {
                    return Err(Error::invalid("regression noise sigma must be positive"));
                }
                let theta0 = DVector::from_vec(theta0.clone());
                let x_cov = matrix_from_rows(x_cov)?;
                if x_cov.nrows() != theta0.len() || x_cov.ncols() != theta0.len() {
                    return Err(Error::invalid("regression x_cov must match theta0"));
                }
                let x_factor = psd_factor(&x_cov);
                Ok(Distribution::Regression { theta0: theta0.clone(), sigma: *sigma, x_cov, x_factor })
            }
        }
    }
}

impl Distribution {
    pub fn datum_dim(&self) -> usize {
        match self {
            Distribution::Gaussian { mean, .. } => mean.len(),
            Distribution::Atoms { points, .. } => points[0].len(),
            Distribution::Regression { theta0, .. } => theta0.len() + 1,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            Distribution::Gaussian { mean, factor, .. } => {
                let d = mean.len();
                let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                mean + factor * xi
            }
            Distribution::Atoms { points, cdf, .. } => {
                let u: f64 = rng.random_range(0.0..1.0);
                let idx = cdf.partition_point(|c| *c < u).min(points.len() - 1);
                points[idx].clone()
            }
            Distribution::Regression { theta0, sigma, x_factor, .. } => {
                let d = theta0.len();
                let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = x_factor * xi;
                let y = theta0.dot(&x) + sigma * rng.sample::<f64, _>(StandardNormal);
                let mut datum = DVector::zeros(d + 1);
                datum.rows_mut(0, d).copy_from(&x);
                datum[d] = y;
                datum
            }
        }
    }

    pub fn sample_n(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<DVector<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Mean of the datum (for regression, of the joint `(X, Y)` vector).
    pub fn mean(&self) -> DVector<f64> {
        match self {
            Distribution::Gaussian { mean, .. } => mean.clone(),
            Distribution::Atoms { points, weights, .. } => {
                let d = points[0].len();
                points
                    .iter()
                    .zip(weights)
                    .fold(DVector::zeros(d), |acc, (p, w)| acc + p * *w)
            }
            Distribution::Regression { theta0, .. } => DVector::zeros(theta0.len() + 1),
        }
    }

    /// Covariance of the datum, where it has a simple closed form.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            Distribution::Gaussian { cov, .. } => Some(cov.clone()),
            Distribution::Atoms { points, weights, .. } => {
                let mean = self.mean();
                let d = mean.len();
                let mut cov = DMatrix::zeros(d, d);
                for (p, w) in points.iter().zip(weights) {
                    let c = p - &mean;
                    cov += &c * c.transpose() * *w;
                }
                Some(cov)
            }
            Distribution::Regression { .. } => None,
        }
    }

    /// Rotation-invariant around its mean? (Used to justify closed-form
    /// medians/Oja centers by symmetry.)
    pub fn is_spherical(&self) -> bool {
        match self {
            Distribution::Gaussian { cov, .. } => {
                let d = cov.nrows();
                let s = cov[(0, 0)];
                (0..d).all(|i| (cov[(i, i)] - s).abs() <= 1e-12 * s.max(1.0))
                    && (0..d).all(|i| {
                        (0..d).all(|j| i == j || cov[(i, j)].abs() <= 1e-12 * s.max(1.0))
                    })
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn atoms_weights_must_sum_to_one() {
        let spec = DistributionSpec::Atoms {
            points: vec![vec![0.0], vec![1.0]],
            weights: vec![0.5, 0.500001],
        };
        assert!(spec.build().is_err());
    }

    #[test]
    fn atom_sampling_matches_weights() {
        let spec = DistributionSpec::Atoms {
            points: vec![vec![-1.0], vec![0.0], vec![1.0]],
            weights: vec![0.25, 0.5, 0.25],
        };
        let dist = spec.build().unwrap();
        let mut rng = seed::rng(8);
        let n = 40_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let x = dist.sample(&mut rng)[0];
            counts[(x as i64 + 1) as usize] += 1;
        }
        assert!((counts[0] as f64 / n as f64 - 0.25).abs() < 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn gaussian_moments() {
        let spec = DistributionSpec::Gaussian {
            mean: vec![1.0, -2.0],
            cov: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
        };
        let dist = spec.build().unwrap();
        let mut rng = seed::rng(3);
        let data = dist.sample_n(&mut rng, 60_000);
        let mean = data.iter().fold(DVector::zeros(2), |a, x| a + x) / data.len() as f64;
        assert!((mean - dist.mean()).norm() < 0.03);
        let cov = crate::asymptotics::covariance_of(&data).unwrap();
        assert!((cov - dist.covariance().unwrap()).norm() < 0.05);
    }

    #[test]
    fn regression_pairs_have_declared_noise() {
        let spec = DistributionSpec::Regression {
            theta0: vec![1.0, 0.5],
            sigma: 0.3,
            x_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let dist = spec.build().unwrap();
        let mut rng = seed::rng(4);
        let data = dist.sample_n(&mut rng, 50_000);
        let theta0 = DVector::from_vec(vec![1.0, 0.5]);
        let resid_var = data
            .iter()
            .map(|d| {
                let x = d.rows(0, 2).into_owned();
                let r = d[2] - theta0.dot(&x);
                r * r
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!((resid_var - 0.09).abs() < 0.005, "residual variance {resid_var}");
    }
}
