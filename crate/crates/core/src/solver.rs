//! Projected subgradient minimization of a convex empirical risk over a
//! convex set, with a probe-based first-order-condition certificate.
//!
//! The iteration is `theta <- proj(theta - eta S^{-1} g)` so that for a
//! non-identity metric it is the gradient flow of the S-geometry, matching
//! the projections. Suffix averaging smooths the oscillation of the
//! subgradient method on kinks.
//!
//! The certificate is one-sided: by convexity the forward difference
//! `(Phi(theta + h t) - Phi(theta))/h` upper-bounds the directional
//! derivative, so a small positive maximum of its negation over feasible
//! probe directions certifies "no probed feasible descent direction beyond
//! tol" — the practical analogue of the first-order condition.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, support_cone, ConvexSet, SupportConeRep};
use crate::losses::{empirical_risk, empirical_subgrad, Loss};
use crate::metric::SpdMetric;
use crate::seed;
use crate::ustat::{u_risk, u_subgrad, Budget, UKernel};

/// A convex risk exposing evaluation and a subgradient selection.
pub trait ConvexRisk: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, theta: &DVector<f64>) -> Result<f64>;
    fn subgrad(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;
    /// Starting point hint (the data centroid where that makes sense).
    fn init_hint(&self) -> Option<DVector<f64>> {
        None
    }
}

/// Empirical mean risk of a [`Loss`] over a dataset.
pub struct EmpiricalRisk<'a> {
    pub loss: &'a Loss,
    pub data: &'a [DVector<f64>],
    dim: usize,
}

impl<'a> EmpiricalRisk<'a> {
    pub fn new(loss: &'a Loss, data: &'a [DVector<f64>]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("empirical risk requires non-empty data"));
        }
        let dim = loss.param_dim(data[0].len())?;
        Ok(EmpiricalRisk { loss, data, dim })
    }
}

impl ConvexRisk for EmpiricalRisk<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, theta: &DVector<f64>) -> Result<f64> {
        empirical_risk(self.loss, self.data, theta)
    }

    fn subgrad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        empirical_subgrad(self.loss, self.data, theta)
    }

    fn init_hint(&self) -> Option<DVector<f64>> {
        if matches!(self.loss, Loss::Regression { .. }) {
            return None;
        }
        let mut c = DVector::zeros(self.dim);
        for datum in self.data {
            c += datum;
        }
        Some(c / self.data.len() as f64)
    }
}

/// U-statistic risk over a fixed subset plan, so each evaluation sees the
/// same finite average and the iteration minimizes a deterministic function.
pub struct URisk<'a> {
    pub kernel: &'a UKernel,
    pub data: &'a [DVector<f64>],
    budget: Budget,
    seed_val: u64,
}

impl<'a> URisk<'a> {
    pub fn new(
        kernel: &'a UKernel,
        data: &'a [DVector<f64>],
        budget: Budget,
        seed_val: u64,
    ) -> Result<Self> {
        if data.len() < kernel.order() {
            return Err(Error::invalid("need at least k data points"));
        }
        Ok(URisk { kernel, data, budget, seed_val })
    }
}

impl ConvexRisk for URisk<'_> {
    fn dim(&self) -> usize {
        self.kernel.param_dim()
    }

    fn eval(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(u_risk(self.kernel, self.data, theta, self.budget, self.seed_val)?.value)
    }

    fn subgrad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(u_subgrad(self.kernel, self.data, theta, self.budget, self.seed_val)?.value)
    }

    fn init_hint(&self) -> Option<DVector<f64>> {
        if self.kernel.datum_dim() != self.kernel.param_dim() {
            return None;
        }
        let mut c = DVector::zeros(self.kernel.param_dim());
        for datum in self.data {
            c += datum;
        }
        Some(c / self.data.len() as f64)
    }
}

/// Step-size rule of the subgradient iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `eta_k = (Phi(theta_k) - f_min) / |g|^2_{S^{-1}}`; for calibration
    /// runs where the optimal value is known.
    Polyak { f_min_estimate: f64 },
    /// `eta_k = c / k^exponent` with `0.5 < exponent <= 1`.
    Decaying { c: f64, exponent: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Decaying { c: 1.0, exponent: 0.75 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Optimality-certificate scale: converged means
    /// `certificate <= tol * (1 + |risk|)`.
    pub tol: f64,
    pub step_rule: StepRule,
    /// Suffix-average fraction: the candidate is the mean of the last
    /// `averaging * k` iterates. Zero means the last iterate.
    pub averaging: f64,
    /// Probe directions per certificate evaluation.
    pub n_probes: usize,
    /// Forward-difference step of the certificate.
    pub h_fd: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 20_000,
            tol: 1e-7,
            step_rule: StepRule::default(),
            averaging: 0.5,
            n_probes: 24,
            h_fd: 1e-6,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(0.0..1.0).contains(&self.averaging) {
            return Err(Error::invalid("averaging fraction must lie in [0, 1)"));
        }
        if let StepRule::Decaying { c, exponent } = self.step_rule {
            if !(c > 0.0) || !(exponent > 0.5 && exponent <= 1.0) {
                return Err(Error::invalid("decaying steps need c > 0 and exponent in (0.5, 1]"));
            }
        }
        if !(self.h_fd > 0.0) || self.n_probes == 0 {
            return Err(Error::invalid("certificate needs h_fd > 0 and n_probes >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub theta_hat: Vec<f64>,
    pub risk: f64,
    /// Max over probed feasible unit directions of the negated forward
    /// difference of the risk; small means no probed descent direction.
    pub certificate: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_vec(self.theta_hat.clone())
    }
}

/// Probe-based first-order-condition certificate at `theta`.
///
/// Probes are seeded random directions projected into the support cone at
/// `theta`, the projected canonical directions, and the projected inward
/// normals of active constraints. Activity classification uses a slack of
/// `max(1e-6, 10 tol)` so a candidate that hugs the boundary from inside
/// still sees the constrained cone.
pub fn certify(
    risk: &dyn ConvexRisk,
    set: &ConvexSet,
    m: &SpdMetric,
    theta: &DVector<f64>,
    n_probes: usize,
    h_fd: f64,
    tol: f64,
) -> Result<f64> {
    let d = theta.len();
    let tol_active = (10.0 * tol).max(1e-6);
    let cone = support_cone(set, theta, tol_active)?;
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(n_probes + 2 * d);
    let push_projected = |t: DVector<f64>, dirs: &mut Vec<DVector<f64>>| -> Result<()> {
        let p = match &cone {
            SupportConeRep::Full { .. } => t,
            other => other.project(&t, m, 1e-10)?,
        };
        let n = p.norm();
        if n > 1e-10 {
            dirs.push(p / n);
        }
        Ok(())
    };
    let mut rng = seed::rng(seed::derive(0xce27, &[d as u64]));
    for _ in 0..n_probes {
        let t = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        push_projected(t, &mut dirs)?;
    }
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        push_projected(e.clone(), &mut dirs)?;
        push_projected(-e, &mut dirs)?;
    }
    if let SupportConeRep::Cone { a } = &cone {
        // slide directions along active faces
        for i in 0..a.nrows() {
            let inward = -m.solve(&a.row(i).transpose())?;
            push_projected(inward, &mut dirs)?;
        }
    }
    let f0 = risk.eval(theta)?;
    let mut cert: f64 = 0.0;
    for t in &dirs {
        let f1 = risk.eval(&(theta + t * h_fd))?;
        cert = cert.max(-(f1 - f0) / h_fd);
    }
    Ok(cert)
}

/// Minimize `risk` over `set` by projected subgradient descent.
///
/// Deterministic given its inputs. Hitting the iteration cap without a
/// certificate is not an error: the best candidate is returned with
/// `converged = false`.
pub fn minimize(
    risk: &dyn ConvexRisk,
    set: &ConvexSet,
    m: &SpdMetric,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let d = risk.dim();
    if set.dim() != d || m.dim() != d {
        return Err(Error::invalid("solver: risk, set and metric dimensions differ"));
    }
    let proj_tol = cfg.tol.min(1e-9);
    let hint = risk.init_hint().unwrap_or_else(|| DVector::zeros(d));
    let mut theta = project(set, &hint, m, proj_tol)?;

    let mut trajectory: Vec<DVector<f64>> = Vec::with_capacity(cfg.max_iter.min(65_536) + 1);
    trajectory.push(theta.clone());

    let mut best: Option<(f64, DVector<f64>)> = None;
    let consider = |cand: DVector<f64>, best: &mut Option<(f64, DVector<f64>)>| -> Result<f64> {
        let r = risk.eval(&cand)?;
        if best.as_ref().is_none_or(|(rb, _)| r < *rb) {
            *best = Some((r, cand));
        }
        Ok(r)
    };

    let check_every = (cfg.max_iter / 40).max(100);
    let mut iterations = 0usize;
    for k in 1..=cfg.max_iter {
        iterations = k;
        let g = risk.subgrad(&theta)?;
        let dir = m.solve(&g)?;
        let eta = match cfg.step_rule {
            StepRule::Decaying { c, exponent } => c / (k as f64).powf(exponent),
            StepRule::Polyak { f_min_estimate } => {
                let gap = risk.eval(&theta)? - f_min_estimate;
                let denom = g.dot(&dir).max(1e-300);
                if gap <= 0.0 {
                    0.0
                } else {
                    gap / denom
                }
            }
        };
        if eta > 0.0 && dir.norm() > 0.0 {
            theta = project(set, &(&theta - &dir * eta), m, proj_tol)?;
        }
        trajectory.push(theta.clone());

        if k % check_every == 0 || k == cfg.max_iter {
            let cand = suffix_average(&trajectory, cfg.averaging);
            let r = consider(cand.clone(), &mut best)?;
            let _ = consider(theta.clone(), &mut best)?;
            let cert = certify(risk, set, m, &cand, cfg.n_probes, cfg.h_fd, cfg.tol)?;
            if cert <= cfg.tol * (1.0 + r.abs()) {
                return Ok(SolveResult {
                    theta_hat: cand.iter().copied().collect(),
                    risk: r,
                    certificate: cert,
                    iterations: k,
                    converged: true,
                });
            }
        }
    }

    let cand = suffix_average(&trajectory, cfg.averaging);
    consider(cand, &mut best)?;
    consider(theta, &mut best)?;
    let (risk_val, theta_hat) = best.expect("at least one candidate considered");
    let cert = certify(risk, set, m, &theta_hat, cfg.n_probes, cfg.h_fd, cfg.tol)?;
    Ok(SolveResult {
        converged: cert <= cfg.tol * (1.0 + risk_val.abs()),
        theta_hat: theta_hat.iter().copied().collect(),
        risk: risk_val,
        certificate: cert,
        iterations,
    })
}

/// Mean of the last `fraction * len` iterates (at least the final one).
/// Feasible because a convex set is closed under averaging.
fn suffix_average(trajectory: &[DVector<f64>], fraction: f64) -> DVector<f64> {
    let len = trajectory.len();
    let take = ((fraction * len as f64).ceil() as usize).clamp(1, len);
    let mut acc = DVector::zeros(trajectory[0].len());
    for theta in &trajectory[len - take..] {
        acc += theta;
    }
    acc / take as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn d1(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn ball_constrained_mean_matches_projection() {
        // mean of {(2,0)} constrained to the unit ball: theta = (1, 0)
        let data = vec![v2(2.0, 0.0), v2(2.0, 0.0)];
        let loss = Loss::Squared;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        assert!(out.converged, "certificate {}", out.certificate);
        assert!((out.theta()[0] - 1.0).abs() < 1e-6, "{:?}", out.theta_hat);
        assert!(out.theta()[1].abs() < 1e-6);
    }

    #[test]
    fn median_of_three_is_exact() {
        let data = vec![d1(1.0), d1(2.0), d1(3.0)];
        let loss = Loss::Norm;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(1).unwrap();
        let m = SpdMetric::identity(1);
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        // optimal-set membership: risk within tolerance of the optimum 2/3
        assert!(out.risk <= 2.0 / 3.0 + 1e-6, "risk {}", out.risk);
        assert!((out.theta()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn huber_symmetric_two_points() {
        let data = vec![d1(0.0), d1(2.0)];
        let loss = Loss::Huber { c: 1.0 };
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(1).unwrap();
        let m = SpdMetric::identity(1);
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        assert!((out.theta()[0] - 1.0).abs() < 1e-5, "{:?}", out.theta_hat);
    }

    #[test]
    fn quantile_matches_order_statistic_risk() {
        // alpha-quantile in 1-D: assert membership in the optimal set via risk
        let data: Vec<DVector<f64>> = (1..=9).map(|i| d1(i as f64)).collect();
        let loss = Loss::GeoQuantile { alpha: 0.25, u: vec![1.0] }.validated().unwrap();
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(1).unwrap();
        let m = SpdMetric::identity(1);
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        // ceil(0.25 * 9) = 3rd order statistic
        let opt = empirical_risk(&loss, &data, &d1(3.0)).unwrap();
        assert!(out.risk <= opt + 1e-5, "risk {} vs optimal {}", out.risk, opt);
    }

    #[test]
    fn certificate_flags_displaced_minimizer() {
        // quadratic with curvature 1: displacing theta by 0.1 produces a
        // descent slope of about 0.1 along the probe pointing back
        let data = vec![v2(1.0, 1.0)];
        let loss = Loss::Squared;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(2).unwrap();
        let m = SpdMetric::identity(2);
        let at_min = certify(&risk, &set, &m, &v2(1.0, 1.0), 24, 1e-6, 1e-7).unwrap();
        assert!(at_min <= 1e-6, "certificate at the minimizer: {at_min}");
        let displaced = certify(&risk, &set, &m, &v2(1.1, 1.0), 64, 1e-6, 1e-7).unwrap();
        assert!(displaced >= 0.05, "certificate displaced: {displaced}");
    }

    #[test]
    fn constrained_boundary_certificate() {
        // optimum on the ball boundary: inward probes see no descent
        let data = vec![v2(2.0, 0.0)];
        let loss = Loss::Squared;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        let cert = certify(&risk, &set, &m, &v2(1.0, 0.0), 32, 1e-6, 1e-7).unwrap();
        assert!(cert <= 1e-6, "certificate {cert}");
    }

    #[test]
    fn risk_decreases_from_first_iterate_and_stays_feasible() {
        let mut rng = crate::seed::rng(10);
        use rand::Rng;
        let data: Vec<DVector<f64>> =
            (0..40).map(|_| v2(rng.random_range(-2.0..4.0), rng.random_range(-1.0..1.0))).collect();
        let loss = Loss::Norm;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::rect(v2(-0.5, -0.5), v2(0.5, 0.5)).unwrap();
        let m = SpdMetric::identity(2);
        let cfg = SolverConfig { max_iter: 3000, tol: 1e-5, ..Default::default() };
        let out = minimize(&risk, &set, &m, &cfg).unwrap();
        assert!(set.contains(&out.theta(), 1e-6).unwrap());
        let first = project(&set, &risk.init_hint().unwrap(), &m, 1e-9).unwrap();
        assert!(out.risk <= risk.eval(&first).unwrap() + 1e-12);
    }

    #[test]
    fn metric_preconditioning_still_finds_weighted_minimum() {
        // squared loss under a skewed metric: minimizer is the sample mean
        // regardless of the preconditioner
        let data = vec![v2(1.0, 3.0), v2(3.0, 1.0)];
        let loss = Loss::Squared;
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(2).unwrap();
        let m = SpdMetric::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        assert!((out.theta() - v2(2.0, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn u_risk_solver_gini() {
        // Gini square inner: the exact minimizer is the complete U-mean
        let mut rng = crate::seed::rng(5);
        use rand::Rng;
        let data: Vec<DVector<f64>> = (0..60).map(|_| d1(rng.random_range(0.0..1.0))).collect();
        let kernel = UKernel::Gini { p: 1.0, inner: crate::ustat::GiniInner::Square };
        let risk = URisk::new(&kernel, &data, Budget::All, 0).unwrap();
        let set = ConvexSet::full(1).unwrap();
        let m = SpdMetric::identity(1);
        let out = minimize(&risk, &set, &m, &SolverConfig::default()).unwrap();
        let exact = crate::ustat::u_statistic(&data, 2, Budget::All, 0, |t| {
            Ok((t[0][0] - t[1][0]).abs())
        })
        .unwrap()
        .value;
        assert!((out.theta()[0] - exact).abs() < 1e-6, "{} vs {}", out.theta()[0], exact);
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { tol: 0.0, ..Default::default() };
        let loss = Loss::Squared;
        let data = vec![d1(0.0)];
        let risk = EmpiricalRisk::new(&loss, &data).unwrap();
        let set = ConvexSet::full(1).unwrap();
        let m = SpdMetric::identity(1);
        assert!(minimize(&risk, &set, &m, &bad).is_err());
        let bad = SolverConfig {
            step_rule: StepRule::Decaying { c: 1.0, exponent: 0.5 },
            ..Default::default()
        };
        assert!(minimize(&risk, &set, &m, &bad).is_err());
    }
}
