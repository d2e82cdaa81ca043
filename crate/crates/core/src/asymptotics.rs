//! The limiting distribution of constrained convex M- and U-estimators, and
//! support-function estimates of the subdifferential for the exact-recovery
//! regime.
//!
//! The limit law is parameterized by `(theta*, grad Phi(theta*), S, B, Theta, k)`
//! with `S` the population Hessian at `theta*` and `B` the covariance of the
//! subgradient selection (for U-estimators, of its conditional mean given one
//! datum). A draw is `k * D+ proj_{Theta - theta*}^S(-S^{-1} grad; Z)` with
//! `Z ~ N(0, S^{-1} B S^{-1})`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{dproj, dproj_fd, in_normal_cone, support_cone, ConvexSet, SupportConeRep, TOL_ACTIVE};
use crate::metric::SpdMetric;
use crate::seed;

/// A population risk evaluator.
pub type PopRisk<'a> = dyn Fn(&DVector<f64>) -> Result<f64> + Sync + 'a;

/// Clip negative eigenvalues at zero. Returns the repaired matrix and the
/// most negative eigenvalue found (0 when already PSD).
pub fn psd_repair(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        return ((m + m.transpose()) * 0.5, 0.0);
    }
    let clipped = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(0.0));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    ((&repaired + repaired.transpose()) * 0.5, min_eig)
}

/// A factor `A` with `A A' = m` for PSD `m` (eigenvalue square root).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let sqrt = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Parameters of the limiting distribution.
#[derive(Debug, Clone)]
pub struct LimitLawSpec {
    pub theta_star: DVector<f64>,
    pub grad_phi: DVector<f64>,
    pub s: SpdMetric,
    pub b: DMatrix<f64>,
    pub set: ConvexSet,
    pub k: usize,
    /// Non-fatal diagnostics collected at construction (PSD repair).
    pub warnings: Vec<String>,
}

impl LimitLawSpec {
    /// Validates: `B` symmetric PSD within `1e-8` (repaired by eigenvalue
    /// clipping, with a warning when the repair is material), and
    /// `-grad_phi` in the normal cone to `set` at `theta_star`.
    pub fn new(
        theta_star: DVector<f64>,
        grad_phi: DVector<f64>,
        s: SpdMetric,
        b: DMatrix<f64>,
        set: ConvexSet,
        k: usize,
    ) -> Result<Self> {
        let d = theta_star.len();
        if grad_phi.len() != d || s.dim() != d || set.dim() != d || b.nrows() != d || b.ncols() != d
        {
            return Err(Error::invalid("limit-law spec dimensions disagree"));
        }
        if k == 0 {
            return Err(Error::invalid("estimator order k must be at least 1"));
        }
        let mut warnings = Vec::new();
        let asym = (&b - b.transpose()).norm();
        if asym > 1e-8 * (1.0 + b.norm()) {
            return Err(Error::invalid(format!("B is not symmetric: |B - B'| = {asym:.3e}")));
        }
        let (b, min_eig) = psd_repair(&b);
        if -min_eig > 1e-8 * b.trace().max(1e-300) {
            warnings.push(format!(
                "B had eigenvalue {min_eig:.3e}; clipped to PSD (trace {:.3e})",
                b.trace()
            ));
        }
        // first-order condition: -grad in the normal cone at theta*,
        // expressed through the S-pairing as v = -S^{-1} grad
        let v = -s.solve(&grad_phi)?;
        if grad_phi.norm() > 1e-10
            && !in_normal_cone(&set, &theta_star, &v, &s, 1e-6 * (1.0 + grad_phi.norm()))?
        {
            return Err(Error::invalid(
                "-grad_phi is not in the normal cone to the set at theta_star",
            ));
        }
        Ok(LimitLawSpec { theta_star, grad_phi, s, b, set, k, warnings })
    }

    /// Covariance of the driving Gaussian: `S^{-1} B S^{-1}`.
    pub fn z_covariance(&self) -> DMatrix<f64> {
        let c = self.s.inverse() * &self.b * self.s.inverse();
        (&c + c.transpose()) * 0.5
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        serde_json::json!({
            "theta_star": self.theta_star.iter().copied().collect::<Vec<f64>>(),
            "grad_phi": self.grad_phi.iter().copied().collect::<Vec<f64>>(),
            "s": rows(self.s.matrix()),
            "b": rows(&self.b),
            "set": &self.set,
            "k": self.k,
            "warnings": self.warnings,
        })
    }
}

/// Draws from the limiting distribution.
#[derive(Debug, Clone)]
pub struct LimitSample {
    pub draws: Vec<DVector<f64>>,
    /// true when any draw fell back to the finite-difference derivative.
    pub used_fd_fallback: bool,
}

/// Sample the limit law: per draw, `k * D+ proj_{set - theta*}^S(-S^{-1} grad; Z)`.
///
/// Deterministic given `seed_val`; draws are keyed by index and can be
/// generated in any order.
pub fn sample_limit(spec: &LimitLawSpec, n_draws: usize, seed_val: u64) -> Result<LimitSample> {
    let d = spec.theta_star.len();
    let factor = psd_factor(&spec.z_covariance());
    let set0 = spec.set.translate(&spec.theta_star);
    let x_arg = -spec.s.solve(&spec.grad_phi)?;
    let k = spec.k as f64;

    let results: Vec<Result<(DVector<f64>, bool)>> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed_val, &[0x11b, i as u64]));
            let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &factor * xi;
            match dproj(&set0, &x_arg, &z, &spec.s) {
                Ok(v) => Ok((v * k, false)),
                Err(Error::UnsupportedCase(_)) => {
                    let v = dproj_fd(&set0, &x_arg, &z, &spec.s, 1e-6)?;
                    Ok((v * k, true))
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut draws = Vec::with_capacity(n_draws);
    let mut used_fd = false;
    for r in results {
        let (v, fd) = r?;
        used_fd |= fd;
        draws.push(v);
    }
    Ok(LimitSample { draws, used_fd_fallback: used_fd })
}

/// Symmetrized central second differences of a population risk.
///
/// Errors with `DegenerateHessian` when the symmetrized matrix is not
/// positive definite, signalling that the limit theorem's curvature
/// assumption fails at `theta_star`.
pub fn estimate_hessian(pop_risk: &PopRisk, theta_star: &DVector<f64>, h: f64) -> Result<SpdMetric> {
    if !(h > 0.0) {
        return Err(Error::invalid("estimate_hessian requires h > 0"));
    }
    let d = theta_star.len();
    let f0 = pop_risk(theta_star)?;
    let mut hess = DMatrix::zeros(d, d);
    let shift = |i: usize, s: f64| {
        let mut t = theta_star.clone();
        t[i] += s;
        t
    };
    for i in 0..d {
        hess[(i, i)] = (pop_risk(&shift(i, h))? - 2.0 * f0 + pop_risk(&shift(i, -h))?) / (h * h);
        for j in (i + 1)..d {
            let mut pp = shift(i, h);
            pp[j] += h;
            let mut pm = shift(i, h);
            pm[j] -= h;
            let mut mp = shift(i, -h);
            mp[j] += h;
            let mut mm = shift(i, -h);
            mm[j] -= h;
            let v = (pop_risk(&pp)? - pop_risk(&pm)? - pop_risk(&mp)? + pop_risk(&mm)?)
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    SpdMetric::new(hess).map_err(|e| Error::DegenerateHessian(e.to_string()))
}

/// Sample covariance of per-datum gradients, PSD-repaired.
pub fn covariance_of(grads: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if grads.len() < 2 {
        return Err(Error::invalid("covariance needs at least two gradients"));
    }
    let d = grads[0].len();
    let mean = grads.iter().fold(DVector::zeros(d), |a, g| a + g) / grads.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for g in grads {
        let c = g - &mean;
        cov += &c * c.transpose();
    }
    cov /= (grads.len() - 1) as f64;
    Ok(psd_repair(&cov).0)
}

/// Plug-in `B = var(g(X, theta*))` from a large sample of subgradients.
pub fn estimate_b<F>(data: &[DVector<f64>], theta_star: &DVector<f64>, grad: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    if data.len() < 1000 {
        return Err(Error::invalid("estimate_b requires a sample of at least 1000"));
    }
    let grads: Vec<DVector<f64>> =
        data.iter().map(|x| grad(x, theta_star)).collect::<Result<_>>()?;
    covariance_of(&grads)
}

/// Richardson-extrapolated forward difference
/// `(Phi(theta + h t) - Phi(theta)) / h`, an upper bound for the support
/// function of the subdifferential in direction `t` that converges to it.
pub fn support_fn_subdiff(
    pop_risk: &PopRisk,
    theta: &DVector<f64>,
    t: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("support_fn_subdiff requires h > 0"));
    }
    let f0 = pop_risk(theta)?;
    let d_at = |step: f64| -> Result<f64> {
        Ok((pop_risk(&(theta + t * step))? - f0) / step)
    };
    let d1 = d_at(h)?;
    let d2 = d_at(0.5 * h)?;
    Ok(2.0 * d2 - d1)
}

/// Outcome of the exact-recovery condition checks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecoveryCondition {
    /// `0 in int(subdifferential)`: the support function is positive in
    /// every direction by at least the margin.
    pub interior_condition: bool,
    /// Positivity restricted to the support cone at `theta_star`.
    pub cone_condition: bool,
    /// The decision margin `2h`; minima below it are inconclusive and
    /// reported as `false`.
    pub margin: f64,
    pub min_all_directions: f64,
    pub min_cone_directions: f64,
}

/// Probe the exact-recovery conditions on a grid of unit directions.
pub fn check_exact_recovery_condition(
    pop_risk: &PopRisk,
    theta_star: &DVector<f64>,
    set: &ConvexSet,
    grid_size: usize,
    h: f64,
) -> Result<RecoveryCondition> {
    if grid_size < 16 {
        return Err(Error::invalid("grid_size must be at least 16"));
    }
    let d = theta_star.len();
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(grid_size + 2 * d);
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        dirs.push(e.clone());
        dirs.push(-e);
    }
    let mut rng = seed::rng(seed::derive(0x9121d, &[d as u64, grid_size as u64]));
    while dirs.len() < grid_size.max(2 * d) {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-12 {
            dirs.push(g / n);
        }
    }

    let margin = 2.0 * h;
    let mut min_all = f64::INFINITY;
    for t in &dirs {
        min_all = min_all.min(support_fn_subdiff(pop_risk, theta_star, t, h)?);
    }

    let cone = support_cone(set, theta_star, TOL_ACTIVE)?;
    let id = SpdMetric::identity(d);
    let mut min_cone = f64::INFINITY;
    let mut any_cone_dir = false;
    for t in &dirs {
        let p = match &cone {
            SupportConeRep::Full { .. } => t.clone(),
            other => other.project(t, &id, 1e-10)?,
        };
        let n = p.norm();
        if n <= 1e-9 {
            continue;
        }
        any_cone_dir = true;
        min_cone = min_cone.min(support_fn_subdiff(pop_risk, theta_star, &(p / n), h)?);
    }
    if !any_cone_dir {
        // the support cone is {0}: positivity on C \ {0} holds vacuously
        min_cone = f64::INFINITY;
    }
    Ok(RecoveryCondition {
        interior_condition: min_all > margin,
        cone_condition: min_cone > margin,
        margin,
        min_all_directions: min_all,
        min_cone_directions: min_cone,
    })
}
