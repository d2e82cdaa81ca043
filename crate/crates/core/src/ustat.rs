//! U-statistic kernels, complete and incomplete U-risk evaluation, and the
//! plug-in estimate of the CLT covariance.
//!
//! A kernel of order `k` is symmetric in its `k` data arguments and convex in
//! the parameter. Complete evaluation enumerates all `C(n, k)` subsets and is
//! refused (not silently downgraded) past a hard cap, so experiment
//! provenance always records whether an estimate was complete or incomplete.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as floyd_sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{huber, huber_deriv};
use crate::seed;

/// Hard cap on complete enumeration: `C(n, k)` at most this.
pub const ENUM_CAP: u64 = 2_000_000;

/// `C(n, k)` if it is at most `cap`, else `None`.
pub fn binomial_capped(n: usize, k: usize, cap: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Scalar convex loss applied to the Gini kernel's deviation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum GiniInner {
    /// `r -> r^2` (so the population Hessian in theta is the constant 2).
    Square,
    /// `r -> |r|`.
    Abs,
    /// `r -> h_c(r)`.
    Huber { c: f64 },
}

impl GiniInner {
    fn eval(&self, r: f64) -> f64 {
        match self {
            GiniInner::Square => r * r,
            GiniInner::Abs => r.abs(),
            GiniInner::Huber { c } => huber(*c, r),
        }
    }

    fn deriv(&self, r: f64) -> f64 {
        match self {
            GiniInner::Square => 2.0 * r,
            GiniInner::Abs => {
                if r == 0.0 {
                    0.0
                } else {
                    r.signum()
                }
            }
            GiniInner::Huber { c } => huber_deriv(*c, r),
        }
    }
}

/// A symmetric convex U-statistic kernel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "ukernel", rename_all = "lowercase")]
pub enum UKernel {
    /// Order-`dim` kernel `|det[x_1 - theta, ..., x_d - theta]| / d!`:
    /// the simplex-volume (Oja depth) kernel.
    Oja { dim: usize },
    /// Order-2 scatter kernel `inner(|x_1 - x_2|^p - theta)`, scalar data
    /// and parameter.
    Gini { p: f64, inner: GiniInner },
    /// Order-`k` kernel `|(x_1 + ... + x_k)/k - theta|`: median of all
    /// overlapping k-subset means. Scalar data and parameter.
    Mom { k: usize },
}

impl UKernel {
    pub fn validated(self) -> Result<Self> {
        match &self {
            UKernel::Oja { dim } if *dim < 1 => Err(Error::invalid("oja requires dim >= 1")),
            UKernel::Gini { p, .. } if !(*p >= 1.0) => Err(Error::invalid("gini requires p >= 1")),
            UKernel::Gini { inner: GiniInner::Huber { c }, .. } if !(*c > 0.0) => {
                Err(Error::invalid("huber requires c > 0"))
            }
            UKernel::Mom { k } if *k < 1 => Err(Error::invalid("mom requires k >= 1")),
            _ => Ok(self),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            UKernel::Oja { dim } => *dim,
            UKernel::Gini { .. } => 2,
            UKernel::Mom { k } => *k,
        }
    }

    pub fn datum_dim(&self) -> usize {
        match self {
            UKernel::Oja { dim } => *dim,
            _ => 1,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.datum_dim()
    }

    fn check(&self, tuple: &[&DVector<f64>], theta: &DVector<f64>) -> Result<()> {
        if tuple.len() != self.order() {
            return Err(Error::invalid(format!(
                "kernel of order {} got a tuple of {}",
                self.order(),
                tuple.len()
            )));
        }
        if theta.len() != self.param_dim() || tuple.iter().any(|x| x.len() != self.datum_dim()) {
            return Err(Error::invalid("kernel dimension mismatch"));
        }
        Ok(())
    }

    pub fn eval(&self, tuple: &[&DVector<f64>], theta: &DVector<f64>) -> Result<f64> {
        self.check(tuple, theta)?;
        // canonical tuple order makes symmetry bitwise exact, not just
        // mathematical: float sums and determinants are order-sensitive
        let tuple = canonical_order(tuple);
        let tuple = tuple.as_slice();
        Ok(match self {
            UKernel::Oja { dim } => oja_det(tuple, theta).abs() / factorial(*dim),
            UKernel::Gini { p, inner } => {
                let r = pow_abs(tuple[0][0] - tuple[1][0], *p) - theta[0];
                inner.eval(r)
            }
            UKernel::Mom { k } => {
                let mean = tuple.iter().map(|x| x[0]).sum::<f64>() / *k as f64;
                (mean - theta[0]).abs()
            }
        })
    }

    pub fn subgrad(&self, tuple: &[&DVector<f64>], theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(tuple, theta)?;
        let tuple = canonical_order(tuple);
        let tuple = tuple.as_slice();
        Ok(match self {
            UKernel::Oja { dim } => {
                let det = oja_det(tuple, theta);
                if det == 0.0 {
                    return Ok(DVector::zeros(*dim)); // minimal-norm selection at the kink
                }
                // det is affine in theta (subtract column 1 from the others),
                // so exact unit-step differences recover its gradient
                let mut grad = DVector::zeros(*dim);
                for i in 0..*dim {
                    let mut tp = theta.clone();
                    tp[i] += 1.0;
                    grad[i] = oja_det(tuple, &tp) - det;
                }
                grad * (det.signum() / factorial(*dim))
            }
            UKernel::Gini { p, inner } => {
                let r = pow_abs(tuple[0][0] - tuple[1][0], *p) - theta[0];
                DVector::from_vec(vec![-inner.deriv(r)])
            }
            UKernel::Mom { k } => {
                let mean = tuple.iter().map(|x| x[0]).sum::<f64>() / *k as f64;
                let s = theta[0] - mean;
                DVector::from_vec(vec![if s == 0.0 { 0.0 } else { s.signum() }])
            }
        })
    }
}

fn factorial(d: usize) -> f64 {
    (1..=d).map(|i| i as f64).product::<f64>().max(1.0)
}

enum CanonTuple<'a> {
    Pair([&'a DVector<f64>; 2]),
    Many(Vec<&'a DVector<f64>>),
}

impl<'a> CanonTuple<'a> {
    fn as_slice(&self) -> &[&'a DVector<f64>] {
        match self {
            CanonTuple::Pair(p) => p,
            CanonTuple::Many(v) => v,
        }
    }
}

fn lex_le(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for i in 0..a.len() {
        if a[i] < b[i] {
            return true;
        }
        if a[i] > b[i] {
            return false;
        }
    }
    true
}

/// Sort the tuple lexicographically by datum value (allocation-free for
/// pairs, the common case).
fn canonical_order<'a>(tuple: &[&'a DVector<f64>]) -> CanonTuple<'a> {
    if tuple.len() == 2 {
        return if lex_le(tuple[0], tuple[1]) {
            CanonTuple::Pair([tuple[0], tuple[1]])
        } else {
            CanonTuple::Pair([tuple[1], tuple[0]])
        };
    }
    let mut v: Vec<&DVector<f64>> = tuple.to_vec();
    v.sort_by(|a, b| {
        for i in 0..a.len() {
            match a[i].partial_cmp(&b[i]).expect("data must not contain NaN") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    CanonTuple::Many(v)
}

#[inline]
fn pow_abs(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == 1.0 {
        a
    } else if p == 2.0 {
        a * a
    } else {
        a.powf(p)
    }
}

fn oja_det(tuple: &[&DVector<f64>], theta: &DVector<f64>) -> f64 {
    let d = theta.len();
    match d {
        1 => tuple[0][0] - theta[0],
        2 => {
            // allocation-free path for the common planar case
            let a0 = tuple[0][0] - theta[0];
            let a1 = tuple[0][1] - theta[1];
            let b0 = tuple[1][0] - theta[0];
            let b1 = tuple[1][1] - theta[1];
            a0 * b1 - a1 * b0
        }
        _ => DMatrix::from_fn(d, d, |r, c| tuple[c][r] - theta[r]).determinant(),
    }
}

/// Subset budget for a U-statistic evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Complete enumeration of all `C(n, k)` subsets (capped at [`ENUM_CAP`]).
    All,
    /// Average over this many subsets drawn uniformly without replacement
    /// from a seeded stream.
    Count(u64),
}

impl Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Budget::All => ser.serialize_str("all"),
            Budget::Count(c) => ser.serialize_u64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            N(u64),
        }
        match Raw::deserialize(de)? {
            Raw::S(s) if s == "all" => Ok(Budget::All),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "budget must be \"all\" or a positive integer, got {s:?}"
            ))),
            Raw::N(0) => Err(serde::de::Error::custom("budget must be positive")),
            Raw::N(n) => Ok(Budget::Count(n)),
        }
    }
}

/// Value of a U-statistic together with its completeness flag.
#[derive(Debug, Clone, Copy)]
pub struct UValue<T> {
    pub value: T,
    pub complete: bool,
}

/// Lexicographic iterator over k-subsets of `0..n` (as sorted index vectors).
pub struct Combinations {
    idx: Vec<usize>,
    n: usize,
    started: bool,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations { idx: (0..k).collect(), n, started: false, done: k > n }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.idx.clone());
        }
        let k = self.idx.len();
        if k == 0 {
            self.done = true;
            return None;
        }
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                return None;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(self.idx.clone());
            }
        }
    }
}

/// The plan of subsets a U-statistic will average over.
pub enum SubsetPlan {
    Complete { n: usize, k: usize },
    Sampled(Vec<Vec<usize>>),
}

impl SubsetPlan {
    /// Decide complete-vs-sampled for `n` data, order `k`, and a budget.
    ///
    /// `Budget::All` requires `C(n, k) <= ENUM_CAP` and errors past it; an
    /// explicit count falls back to complete enumeration when it covers all
    /// subsets, so an exhaustive stream reproduces the complete value.
    pub fn build(n: usize, k: usize, budget: Budget, seed_val: u64) -> Result<Self> {
        if n < k || k == 0 {
            return Err(Error::invalid(format!("need n >= k >= 1, got n={n}, k={k}")));
        }
        let count = binomial_capped(n, k, ENUM_CAP);
        match budget {
            Budget::All => match count {
                Some(_) => Ok(SubsetPlan::Complete { n, k }),
                None => Err(Error::ResourceLimit(format!(
                    "C({n}, {k}) exceeds the enumeration cap {ENUM_CAP}; pass an explicit budget"
                ))),
            },
            Budget::Count(b) => {
                if let Some(total) = count {
                    if b >= total {
                        return Ok(SubsetPlan::Complete { n, k });
                    }
                }
                Ok(SubsetPlan::Sampled(sample_subsets(n, k, b, seed_val)))
            }
        }
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, SubsetPlan::Complete { .. })
    }

    pub fn for_each<F: FnMut(&[usize])>(&self, mut f: F) {
        match self {
            // in-place advancement: no per-subset allocation on the hot path
            SubsetPlan::Complete { n, k } => {
                let (n, k) = (*n, *k);
                if k > n {
                    return;
                }
                let mut idx: Vec<usize> = (0..k).collect();
                loop {
                    f(&idx);
                    let mut i = k;
                    let mut advanced = false;
                    while i > 0 {
                        i -= 1;
                        if idx[i] < n - k + i {
                            idx[i] += 1;
                            for j in i + 1..k {
                                idx[j] = idx[j - 1] + 1;
                            }
                            advanced = true;
                            break;
                        }
                    }
                    if !advanced {
                        return;
                    }
                }
            }
            SubsetPlan::Sampled(list) => {
                for idx in list {
                    f(idx);
                }
            }
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            SubsetPlan::Complete { n, k } => binomial_capped(*n, *k, u64::MAX).unwrap_or(u64::MAX),
            SubsetPlan::Sampled(list) => list.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `budget` distinct k-subsets from a splittable counter-based stream:
/// subset `i` is drawn by Floyd's algorithm from an RNG keyed by
/// `derive(seed, [i])`; collisions advance the counter. Reproducible and
/// order-independent across workers.
fn sample_subsets(n: usize, k: usize, budget: u64, seed_val: u64) -> Vec<Vec<usize>> {
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(budget as usize);
    let mut out = Vec::with_capacity(budget as usize);
    let mut counter: u64 = 0;
    while out.len() < budget as usize {
        let mut rng = seed::rng(seed::derive(seed_val, &[0x5a6b, counter]));
        counter += 1;
        let mut idx: Vec<usize> = floyd_sample(&mut rng, n, k).into_iter().collect();
        idx.sort_unstable();
        if seen.insert(idx.clone()) {
            out.push(idx);
        }
    }
    out
}

/// Average a scalar function of k-tuples over a subset plan.
pub fn u_statistic<F: FnMut(&[&DVector<f64>]) -> Result<f64>>(
    data: &[DVector<f64>],
    k: usize,
    budget: Budget,
    seed_val: u64,
    mut h: F,
) -> Result<UValue<f64>> {
    let plan = SubsetPlan::build(data.len(), k, budget, seed_val)?;
    let mut acc = 0.0;
    let mut count = 0u64;
    let mut tuple: Vec<&DVector<f64>> = Vec::with_capacity(k);
    let mut err = None;
    plan.for_each(|idx| {
        if err.is_some() {
            return;
        }
        tuple.clear();
        tuple.extend(idx.iter().map(|&i| &data[i]));
        match h(&tuple) {
            Ok(v) => {
                acc += v;
                count += 1;
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(UValue { value: acc / count as f64, complete: plan.is_complete() })
}

/// `Phi_n(theta)` for a U-kernel: the (complete or budgeted) U-statistic
/// average of the kernel.
pub fn u_risk(
    kernel: &UKernel,
    data: &[DVector<f64>],
    theta: &DVector<f64>,
    budget: Budget,
    seed_val: u64,
) -> Result<UValue<f64>> {
    u_statistic(data, kernel.order(), budget, seed_val, |tuple| kernel.eval(tuple, theta))
}

/// Averaged kernel subgradients over the same subset stream as [`u_risk`].
pub fn u_subgrad(
    kernel: &UKernel,
    data: &[DVector<f64>],
    theta: &DVector<f64>,
    budget: Budget,
    seed_val: u64,
) -> Result<UValue<DVector<f64>>> {
    let k = kernel.order();
    let plan = SubsetPlan::build(data.len(), k, budget, seed_val)?;
    let mut acc = DVector::zeros(kernel.param_dim());
    let mut count = 0u64;
    let mut tuple: Vec<&DVector<f64>> = Vec::with_capacity(k);
    let mut err = None;
    plan.for_each(|idx| {
        if err.is_some() {
            return;
        }
        tuple.clear();
        tuple.extend(idx.iter().map(|&i| &data[i]));
        match kernel.subgrad(&tuple, theta) {
            Ok(g) => {
                acc += g;
                count += 1;
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(UValue { value: acc / count as f64, complete: plan.is_complete() })
}

/// Per-point cap under which the conditional means in [`sigma_hat`] are
/// computed by complete enumeration.
const SIGMA_COMPLETE_CAP: u64 = 1000;
/// Seeded subsample size per point otherwise.
const SIGMA_SAMPLES_PER_POINT: usize = 200;

/// Plug-in estimate of the CLT covariance `Sigma = var(E[h(X_1..X_k) | X_1])`.
///
/// For each `i`, the conditional mean is estimated by averaging `h` over
/// subsets containing `i` (complete when `C(n-1, k-1)` is small, otherwise a
/// seeded subsample); the sample covariance of those estimates is returned,
/// symmetrized.
pub fn sigma_hat<F>(data: &[DVector<f64>], k: usize, dim: usize, seed_val: u64, mut h: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[&DVector<f64>]) -> Result<DVector<f64>>,
{
    let n = data.len();
    if n <= k {
        return Err(Error::invalid(format!("sigma_hat requires n > k, got n={n}, k={k}")));
    }
    let complete = binomial_capped(n - 1, k - 1, SIGMA_COMPLETE_CAP).is_some();
    let mut cond_means: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut tuple_idx: Vec<usize> = Vec::with_capacity(k);
    for i in 0..n {
        let mut acc = DVector::zeros(dim);
        let mut count = 0u64;
        let mut eval = |others: &[usize], h: &mut F| -> Result<()> {
            tuple_idx.clear();
            tuple_idx.push(i);
            tuple_idx.extend_from_slice(others);
            tuple_idx.sort_unstable();
            let tuple: Vec<&DVector<f64>> = tuple_idx.iter().map(|&j| &data[j]).collect();
            acc += h(&tuple)?;
            count += 1;
            Ok(())
        };
        if k == 1 {
            eval(&[], &mut h)?;
        } else if complete {
            // (k-1)-subsets of {0..n} \ {i}, remapped around the hole at i
            for idx in Combinations::new(n - 1, k - 1) {
                let others: Vec<usize> =
                    idx.iter().map(|&j| if j >= i { j + 1 } else { j }).collect();
                eval(&others, &mut h)?;
            }
        } else {
            for s in 0..SIGMA_SAMPLES_PER_POINT {
                let mut rng = seed::rng(seed::derive(seed_val, &[0x51c7, i as u64, s as u64]));
                let mut others: Vec<usize> = floyd_sample(&mut rng, n - 1, k - 1)
                    .into_iter()
                    .map(|j| if j >= i { j + 1 } else { j })
                    .collect();
                others.sort_unstable();
                eval(&others, &mut h)?;
            }
        }
        cond_means.push(acc / count as f64);
    }
    let mean = cond_means.iter().fold(DVector::zeros(dim), |a, v| a + v) / n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for g in &cond_means {
        let c = g - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn scalars(vals: &[f64]) -> Vec<DVector<f64>> {
        vals.iter().map(|&v| DVector::from_vec(vec![v])).collect()
    }

    #[test]
    fn raw_kernel_mean_over_pairs() {
        // theta-free kernel |x1 - x2| on {0, 1, 2}: (1 + 2 + 1)/3 = 4/3
        let data = scalars(&[0.0, 1.0, 2.0]);
        let u = u_statistic(&data, 2, Budget::All, 0, |t| Ok((t[0][0] - t[1][0]).abs())).unwrap();
        assert!(u.complete);
        assert_abs_diff_eq!(u.value, 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn oja_eval_single_pair() {
        let kernel = UKernel::Oja { dim: 2 };
        let data = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        ];
        let theta = DVector::from_vec(vec![0.0, 1.0]);
        let u = u_risk(&kernel, &data, &theta, Budget::All, 0).unwrap();
        assert_abs_diff_eq!(u.value, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mom_examples() {
        let kernel = UKernel::Mom { k: 2 };
        let data = scalars(&[0.0, 2.0, 4.0]);
        let u = u_risk(&kernel, &data, &DVector::from_vec(vec![2.0]), Budget::All, 0).unwrap();
        assert_abs_diff_eq!(u.value, 2.0 / 3.0, epsilon = 1e-15);
        let g = u_subgrad(&kernel, &data, &DVector::from_vec(vec![10.0]), Budget::All, 0).unwrap();
        assert_abs_diff_eq!(g.value[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gini_square_subgrad() {
        let kernel = UKernel::Gini { p: 1.0, inner: GiniInner::Square };
        let data = scalars(&[0.0, 1.0]);
        let g = u_subgrad(&kernel, &data, &DVector::zeros(1), Budget::All, 0).unwrap();
        assert_abs_diff_eq!(g.value[0], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_symmetry_exact() {
        let mut rng = crate::seed::rng(42);
        let kernels = vec![
            UKernel::Oja { dim: 3 },
            UKernel::Gini { p: 2.0, inner: GiniInner::Huber { c: 1.0 } },
            UKernel::Mom { k: 3 },
        ];
        for kernel in kernels {
            let k = kernel.order();
            let d = kernel.datum_dim();
            for _ in 0..50 {
                let tuple: Vec<DVector<f64>> = (0..k)
                    .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let theta = DVector::from_fn(kernel.param_dim(), |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                let refs: Vec<&DVector<f64>> = tuple.iter().collect();
                let v0 = kernel.eval(&refs, &theta).unwrap();
                let g0 = kernel.subgrad(&refs, &theta).unwrap();
                // a random cyclic shift plus a swap reaches all of S_k eventually
                let mut perm: Vec<usize> = (0..k).collect();
                let a = rng.random_range(0..k);
                let b = rng.random_range(0..k);
                perm.swap(a, b);
                perm.rotate_left(rng.random_range(0..k));
                let shuffled: Vec<&DVector<f64>> = perm.iter().map(|&i| &tuple[i]).collect();
                assert_eq!(kernel.eval(&shuffled, &theta).unwrap(), v0, "eval symmetry");
                assert_eq!(kernel.subgrad(&shuffled, &theta).unwrap(), g0, "subgrad symmetry");
            }
        }
    }

    #[test]
    fn convexity_and_subgradient_inequality() {
        let mut rng = crate::seed::rng(7);
        let kernels = vec![
            UKernel::Oja { dim: 2 },
            UKernel::Gini { p: 1.0, inner: GiniInner::Square },
            UKernel::Gini { p: 1.5, inner: GiniInner::Abs },
            UKernel::Mom { k: 4 },
        ];
        for kernel in kernels {
            let k = kernel.order();
            let d = kernel.datum_dim();
            for _ in 0..200 {
                let tuple: Vec<DVector<f64>> = (0..k)
                    .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)))
                    .collect();
                let refs: Vec<&DVector<f64>> = tuple.iter().collect();
                let pd = kernel.param_dim();
                let t1 = DVector::from_fn(pd, |_, _| rng.random_range(-3.0..3.0));
                let t2 = DVector::from_fn(pd, |_, _| rng.random_range(-3.0..3.0));
                let lam: f64 = rng.random_range(0.0..1.0);
                let mix = &t1 * lam + &t2 * (1.0 - lam);
                let f_mix = kernel.eval(&refs, &mix).unwrap();
                let f1 = kernel.eval(&refs, &t1).unwrap();
                let f2 = kernel.eval(&refs, &t2).unwrap();
                assert!(f_mix <= lam * f1 + (1.0 - lam) * f2 + 1e-9);
                let g1 = kernel.subgrad(&refs, &t1).unwrap();
                assert!(f2 >= f1 + g1.dot(&(&t2 - &t1)) - 1e-9);
            }
        }
    }

    #[test]
    fn incomplete_with_full_budget_equals_complete() {
        let mut rng = crate::seed::rng(3);
        for n in [5usize, 8, 12] {
            for k in [2usize, 3] {
                let data: Vec<DVector<f64>> = (0..n)
                    .map(|_| DVector::from_vec(vec![rng.random_range(-1.0..1.0)]))
                    .collect();
                let kernel = UKernel::Mom { k };
                let theta = DVector::from_vec(vec![0.1]);
                let total = binomial_capped(n, k, u64::MAX).unwrap();
                let complete = u_risk(&kernel, &data, &theta, Budget::All, 0).unwrap();
                let stream = u_risk(&kernel, &data, &theta, Budget::Count(total), 99).unwrap();
                assert!(stream.complete);
                assert_eq!(complete.value, stream.value);
            }
        }
    }

    #[test]
    fn budget_all_over_cap_is_refused() {
        let data: Vec<DVector<f64>> = (0..4000).map(|i| DVector::from_vec(vec![i as f64])).collect();
        let kernel = UKernel::Mom { k: 3 };
        let r = u_risk(&kernel, &data, &DVector::zeros(1), Budget::All, 0);
        assert!(matches!(r, Err(Error::ResourceLimit(_))), "got {r:?}");
    }

    #[test]
    fn incomplete_sampling_is_deterministic_and_distinct() {
        let subsets = sample_subsets(30, 3, 500, 4242);
        let again = sample_subsets(30, 3, 500, 4242);
        assert_eq!(subsets, again);
        let set: HashSet<_> = subsets.iter().cloned().collect();
        assert_eq!(set.len(), subsets.len());
        assert!(sample_subsets(30, 3, 500, 1).iter().ne(subsets.iter()));
    }

    #[test]
    fn sigma_hat_linear_and_product_kernels() {
        // X ~ N(1,1): for h = x1 + x2, E[h|X1] = X1 + 1 so Sigma = 1;
        // for h = x1 * x2, E[h|X1] = X1 so Sigma = 1 as well.
        let mut rng = crate::seed::rng(2024);
        let n = 4000;
        let data: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_vec(vec![1.0 + rng.sample::<f64, _>(StandardNormal)]))
            .collect();
        let sum_kernel = sigma_hat(&data, 2, 1, 7, |t| {
            Ok(DVector::from_vec(vec![t[0][0] + t[1][0]]))
        })
        .unwrap();
        assert!((sum_kernel[(0, 0)] - 1.0).abs() < 0.1, "got {}", sum_kernel[(0, 0)]);
        let prod_kernel = sigma_hat(&data, 2, 1, 8, |t| {
            Ok(DVector::from_vec(vec![t[0][0] * t[1][0]]))
        })
        .unwrap();
        assert!((prod_kernel[(0, 0)] - 1.0).abs() < 0.1, "got {}", prod_kernel[(0, 0)]);
        // degenerate kernel
        let constant = sigma_hat(&data, 2, 1, 9, |_| Ok(DVector::from_vec(vec![3.0]))).unwrap();
        assert_abs_diff_eq!(constant[(0, 0)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let all: Vec<Vec<usize>> = Combinations::new(4, 2).collect();
        assert_eq!(
            all,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(Combinations::new(3, 3).count(), 1);
        assert_eq!(binomial_capped(2000, 2, ENUM_CAP), Some(1_999_000));
        assert_eq!(binomial_capped(4000, 3, ENUM_CAP), None);
    }
}
