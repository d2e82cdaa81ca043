//! Convex loss models with deterministic subgradient selections.
//!
//! Location losses take a `d`-vector datum; the regression loss takes a
//! `(d+1)`-vector datum `(x, y)` with the response last. Every `subgrad`
//! returns an element of the subdifferential; at kinks the selection is the
//! minimal-norm subgradient (0 for the norm losses at `x = theta`, zero
//! coefficient for the absolute regression loss at residual zero).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Huber's function: `h_c(t) = t^2` for `t <= c`, `2 c t - c^2` for `t > c`.
pub fn huber(c: f64, t: f64) -> f64 {
    let t = t.abs();
    if t <= c {
        t * t
    } else {
        2.0 * c * t - c * c
    }
}

/// Derivative of `h_c(|t|)` in `t` (signed); `2t` inside, `2c sign(t)` outside.
pub fn huber_deriv(c: f64, t: f64) -> f64 {
    if t.abs() <= c {
        2.0 * t
    } else {
        2.0 * c * t.signum()
    }
}

/// Scalar convex loss applied to a regression residual.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum RegInner {
    /// `r -> r^2 / 2` (least squares; the population Hessian is `E[X X']`).
    Square,
    /// `r -> |r|` (median regression).
    Abs,
    /// `r -> h_c(r)`.
    Huber { c: f64 },
}

impl RegInner {
    fn eval(&self, r: f64) -> f64 {
        match self {
            RegInner::Square => 0.5 * r * r,
            RegInner::Abs => r.abs(),
            RegInner::Huber { c } => huber(*c, r),
        }
    }

    fn deriv(&self, r: f64) -> f64 {
        match self {
            RegInner::Square => r,
            RegInner::Abs => {
                if r == 0.0 {
                    0.0
                } else {
                    r.signum()
                }
            }
            RegInner::Huber { c } => huber_deriv(*c, r),
        }
    }
}

/// A convex loss of a datum and a parameter.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "loss", rename_all = "lowercase")]
pub enum Loss {
    /// `phi(x, theta) = |x - theta|^2 / 2` (mean estimation).
    Squared,
    /// `phi(x, theta) = |x - theta|` (geometric median).
    Norm,
    /// `phi(x, theta) = |x - theta| - (1 - 2 alpha) u'(x - theta)`,
    /// the geometric quantile loss.
    GeoQuantile {
        alpha: f64,
        u: Vec<f64>,
    },
    /// `phi(x, theta) = h_c(|x - theta|)`, Huber's robust location loss.
    Huber { c: f64 },
    /// `phi((x, y), theta) = inner(y - theta' x)`.
    Regression { inner: RegInner },
}

impl Loss {
    /// Validate parameters; normalizes the quantile direction to unit length.
    pub fn validated(self) -> Result<Self> {
        match self {
            Loss::GeoQuantile { alpha, u } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid("geoquantile requires alpha in (0, 1)"));
                }
                let n = (u.iter().map(|v| v * v).sum::<f64>()).sqrt();
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::invalid("geoquantile direction must be non-zero"));
                }
                Ok(Loss::GeoQuantile { alpha, u: u.into_iter().map(|v| v / n).collect() })
            }
            Loss::Huber { c } if !(c > 0.0) => Err(Error::invalid("huber requires c > 0")),
            Loss::Regression { inner: RegInner::Huber { c } } if !(c > 0.0) => {
                Err(Error::invalid("huber requires c > 0"))
            }
            other => Ok(other),
        }
    }

    /// Parameter dimension for a datum of dimension `datum_dim`.
    pub fn param_dim(&self, datum_dim: usize) -> Result<usize> {
        match self {
            Loss::Regression { .. } => {
                if datum_dim < 2 {
                    return Err(Error::invalid("regression data are (x, y) with dim >= 2"));
                }
                Ok(datum_dim - 1)
            }
            _ => Ok(datum_dim),
        }
    }

    fn check(&self, datum: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
        if self.param_dim(datum.len())? != theta.len() {
            return Err(Error::invalid(format!(
                "datum dim {} incompatible with parameter dim {}",
                datum.len(),
                theta.len()
            )));
        }
        if let Loss::GeoQuantile { u, .. } = self {
            if u.len() != theta.len() {
                return Err(Error::invalid("geoquantile direction dim mismatch"));
            }
        }
        Ok(())
    }

    pub fn eval(&self, datum: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
        self.check(datum, theta)?;
        Ok(match self {
            Loss::Squared => 0.5 * (datum - theta).norm_squared(),
            Loss::Norm => (datum - theta).norm(),
            Loss::GeoQuantile { alpha, u } => {
                let diff = datum - theta;
                let udot: f64 = u.iter().zip(diff.iter()).map(|(a, b)| a * b).sum();
                diff.norm() - (1.0 - 2.0 * alpha) * udot
            }
            Loss::Huber { c } => huber(*c, (datum - theta).norm()),
            Loss::Regression { inner } => {
                let (x, y) = split_xy(datum);
                inner.eval(y - theta.dot(&x))
            }
        })
    }

    pub fn subgrad(&self, datum: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(datum, theta)?;
        Ok(match self {
            Loss::Squared => theta - datum,
            Loss::Norm => {
                let diff = theta - datum;
                let n = diff.norm();
                if n == 0.0 {
                    diff // zero: the minimal-norm selection at the kink
                } else {
                    diff / n
                }
            }
            Loss::GeoQuantile { alpha, u } => {
                let diff = theta - datum;
                let n = diff.norm();
                let udir = DVector::from_vec(u.clone());
                if n == 0.0 {
                    // 0 is a subgradient here since |1 - 2 alpha| < 1; take it
                    DVector::zeros(theta.len())
                } else {
                    diff / n + udir * (1.0 - 2.0 * alpha)
                }
            }
            Loss::Huber { c } => {
                let diff = theta - datum;
                let n = diff.norm();
                if n == 0.0 {
                    diff
                } else if n <= *c {
                    diff * 2.0
                } else {
                    diff * (2.0 * c / n)
                }
            }
            Loss::Regression { inner } => {
                let (x, y) = split_xy(datum);
                let r = y - theta.dot(&x);
                -x * inner.deriv(r)
            }
        })
    }
}

fn split_xy(datum: &DVector<f64>) -> (DVector<f64>, f64) {
    let d = datum.len() - 1;
    (datum.rows(0, d).into_owned(), datum[d])
}

/// `Phi_n(theta)`: arithmetic mean of the loss over the data.
pub fn empirical_risk(loss: &Loss, data: &[DVector<f64>], theta: &DVector<f64>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empirical_risk requires non-empty data"));
    }
    let mut acc = 0.0;
    for datum in data {
        acc += loss.eval(datum, theta)?;
    }
    Ok(acc / data.len() as f64)
}

/// Mean of the subgradient selection over the data; a subgradient of
/// [`empirical_risk`] by linearity.
pub fn empirical_subgrad(
    loss: &Loss,
    data: &[DVector<f64>],
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("empirical_subgrad requires non-empty data"));
    }
    let mut acc = DVector::zeros(theta.len());
    for datum in data {
        acc += loss.subgrad(datum, theta)?;
    }
    Ok(acc / data.len() as f64)
}
