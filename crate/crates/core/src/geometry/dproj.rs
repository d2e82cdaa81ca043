//! Directional derivatives of metric projections.
//!
//! Dispatch, writing `p = proj(x)` and `C` for the support cone at the
//! relevant point:
//!
//! * `x` interior: the projection is locally the identity, derivative is `z`;
//! * `x` on the boundary: derivative is the cone projection `proj_C(z)`;
//! * `x` exterior, ball: the set is smooth at `p`; the derivative is the
//!   curvature formula for the gauge function, which for a sphere under a
//!   scalar metric reduces to `(R/|x-c|) proj_{(x-c)^perp}(z)` and in general
//!   is evaluated on the ellipsoid image of the ball in isotropic coordinates;
//! * `x` exterior, polyhedral set: the set is locally conic at `p`, and the
//!   derivative is `proj_{C_u}(z)` with `C_u = C ∩ {t : <u, t>_S = 0}`,
//!   `u = x - p`.
//!
//! Sets with non-smooth, non-conic boundary structure at the foot point are
//! outside this table (none of the shipped shapes produce one); such inputs
//! would surface `UnsupportedCase`, and callers may fall back to the
//! finite-difference oracle [`dproj_fd`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::SpdMetric;

use super::project::project_cone_slice;
use super::{feasible_probes, project, support_cone, ConvexSet, SupportConeRep, TOL_ACTIVE};

/// Internal tolerance for the projections behind a directional derivative.
/// Tight, so the finite-difference cross-checks are not polluted by
/// projection error.
const PROJ_TOL: f64 = 1e-11;

/// Directional derivative `D+ proj_set^S(x; z)`.
pub fn dproj(set: &ConvexSet, x: &DVector<f64>, z: &DVector<f64>, m: &SpdMetric) -> Result<DVector<f64>> {
    let d = set.dim();
    if x.len() != d || z.len() != d || m.dim() != d {
        return Err(Error::invalid("dproj: dimension mismatch"));
    }
    // forced by positive homogeneity
    if z.norm() == 0.0 {
        return Ok(DVector::zeros(d));
    }
    let belong_tol = TOL_ACTIVE * (1.0 + x.norm());
    if set.contains(x, belong_tol)? {
        let cone = support_cone(set, x, TOL_ACTIVE)?;
        return match cone {
            SupportConeRep::Full { .. } => Ok(z.clone()),
            other => other.project(z, m, PROJ_TOL),
        };
    }
    match set {
        ConvexSet::Full { .. } => unreachable!("full space has no exterior"),
        ConvexSet::Ball { center, radius } => dproj_ball_exterior(center, *radius, x, z, m),
        ConvexSet::Box { .. } | ConvexSet::Polyhedron { .. } | ConvexSet::Cone { .. } => {
            let p = project(set, x, m, PROJ_TOL)?;
            let cone = support_cone(set, &p, TOL_ACTIVE)?;
            let u = x - &p;
            dproj_polyhedral_exterior(&cone, &u, z, m)
        }
    }
}

/// Exterior smooth branch. In isotropic coordinates `w = L' v` the ball maps
/// to the ellipsoid `{w : (w - c)' M (w - c) <= r^2}` with `M = L^{-1} L^{-T}`,
/// and the projection differential at an exterior point is
/// `(I + (|u| / |grad rho|) P_{u^perp} hess rho)^{-1} P_{u^perp}`
/// evaluated at the foot point, where `rho` is the gauge of the ellipsoid.
fn dproj_ball_exterior(
    center: &DVector<f64>,
    radius: f64,
    x: &DVector<f64>,
    z: &DVector<f64>,
    m: &SpdMetric,
) -> Result<DVector<f64>> {
    let d = x.len();
    let p = project(&ConvexSet::Ball { center: center.clone(), radius }, x, m, PROJ_TOL)?;

    let l = m.factor();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::invalid("singular Cholesky factor"))?;
    let mm = &l_inv * l_inv.transpose();

    let y = m.to_isotropic(x)?;
    let p_iso = m.to_isotropic(&p)?;
    let c_iso = m.to_isotropic(center)?;
    let zeta = m.to_isotropic(z)?;

    let u = &y - &p_iso;
    let un = u.norm();
    if un <= 1e-14 * (1.0 + y.norm()) {
        // numerically on the boundary after all: fall back to the cone branch
        let cone = SupportConeRep::Halfspace { normal: x - &p };
        return cone.project(z, m, PROJ_TOL);
    }
    let w = &p_iso - &c_iso; // boundary point in gauge coordinates, w' M w = r^2
    let mw = &mm * &w;
    let grad = &mw / (radius * radius); // grad rho at w, with rho(v) = sqrt(v' M v)/r
    let hess = (&mm - &mw * mw.transpose() / (radius * radius)) / (radius * radius);

    let proj_perp = DMatrix::identity(d, d) - &u * u.transpose() / un.powi(2);
    let a = DMatrix::identity(d, d) + &proj_perp * hess * (un / grad.norm());
    let rhs = &proj_perp * zeta;
    let q = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericFailure { what: "smooth dproj solve", residual: un })?;
    m.from_isotropic(&q)
}

/// Exterior locally-conic branch: project `z` onto `C ∩ {<u, .>_S = 0}`.
fn dproj_polyhedral_exterior(
    cone: &SupportConeRep,
    u: &DVector<f64>,
    z: &DVector<f64>,
    m: &SpdMetric,
) -> Result<DVector<f64>> {
    // Hyperplane <u, t>_S = 0 in isotropic coordinates has normal L' u.
    let u_iso = m.to_isotropic(u)?;
    let rows_iso: Vec<DVector<f64>> = match cone {
        SupportConeRep::Full { .. } => Vec::new(),
        SupportConeRep::Halfspace { normal } => vec![iso_row(normal, m)?],
        SupportConeRep::Cone { a } => {
            let mut rows = Vec::with_capacity(a.nrows());
            for i in 0..a.nrows() {
                rows.push(iso_row(&a.row(i).transpose(), m)?);
            }
            rows
        }
    };
    let z_iso = m.to_isotropic(z)?;
    let q = project_cone_slice(&rows_iso, Some(&u_iso), &z_iso, PROJ_TOL)?;
    m.from_isotropic(&q)
}

/// Halfspace row `a' t <= 0` rewritten for isotropic coordinates: normal `L^{-1} a`.
fn iso_row(a: &DVector<f64>, m: &SpdMetric) -> Result<DVector<f64>> {
    m.factor()
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::invalid("singular Cholesky factor"))
}

/// Finite-difference oracle `(proj(x + eps z) - proj(x)) / eps`.
///
/// This is the definitional quotient at a fixed `eps`; it is the independent
/// cross-check for [`dproj`], not a fallback of it.
pub fn dproj_fd(
    set: &ConvexSet,
    x: &DVector<f64>,
    z: &DVector<f64>,
    m: &SpdMetric,
    eps: f64,
) -> Result<DVector<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid("dproj_fd requires eps > 0"));
    }
    let p0 = project(set, x, m, PROJ_TOL)?;
    let p1 = project(set, &(x + z * eps), m, PROJ_TOL)?;
    Ok((p1 - p0) / eps)
}

/// Is `v` in the normal cone to `set` at `x0` with respect to `m`?
///
/// Checked against the defining inequalities `<v, w - x0>_S <= tol (1+|v|_S)`
/// on shape-specific extreme points plus 64 seeded feasible probes.
pub fn in_normal_cone(
    set: &ConvexSet,
    x0: &DVector<f64>,
    v: &DVector<f64>,
    m: &SpdMetric,
    tol: f64,
) -> Result<bool> {
    let d = set.dim();
    if x0.len() != d || v.len() != d || m.dim() != d {
        return Err(Error::invalid("in_normal_cone: dimension mismatch"));
    }
    if !set.contains(x0, tol.max(1e-9) * (1.0 + x0.norm()))? {
        return Err(Error::invalid("in_normal_cone: x0 is not in the set"));
    }
    let slack = tol * (1.0 + m.norm(v)?);
    for w in feasible_probes(set, 64, 0x6e0c)? {
        if m.inner(v, &(&w - x0))? > slack {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn ball_exterior_curvature_formula() {
        // unit ball, x = (2,0), z = (0,1): derivative is (R/|x|) proj_{x^perp}(z) = (0, 0.5)
        let set = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        let d = dproj(&set, &vec2(2.0, 0.0), &vec2(0.0, 1.0), &m).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-10);
        // Richardson cross-check of the fd oracle at eps and eps/2
        let f1 = dproj_fd(&set, &vec2(2.0, 0.0), &vec2(0.0, 1.0), &m, 1e-6).unwrap();
        let f2 = dproj_fd(&set, &vec2(2.0, 0.0), &vec2(0.0, 1.0), &m, 5e-7).unwrap();
        assert!((&f1 - &d).norm() < 1e-5);
        assert!((&f2 - &d).norm() < (&f1 - &d).norm() + 1e-9);
    }

    #[test]
    fn interior_is_identity() {
        let set = ConvexSet::rect(DVector::from_element(2, -5.0), DVector::from_element(2, 5.0))
            .unwrap();
        let m = SpdMetric::identity(2);
        let z = vec2(3.0, -1.0);
        let d = dproj(&set, &vec2(0.3, 0.2), &z, &m).unwrap();
        assert_eq!(d, z);
        let f = dproj_fd(&set, &vec2(0.3, 0.2), &z, &m, 1e-6).unwrap();
        assert!((f - z).norm() < 1e-8);
    }

    #[test]
    fn orthant_exterior_slice() {
        // orthant {x >= 0}; x = (0,-1) has foot (0,0), u = (0,-1);
        // C_u = R+ x {0}, so dproj((0,-1); (1,1)) = (1, 0)
        let orthant =
            ConvexSet::cone(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])).unwrap();
        let m = SpdMetric::identity(2);
        let d = dproj(&orthant, &vec2(0.0, -1.0), &vec2(1.0, 1.0), &m).unwrap();
        let fd = dproj_fd(&orthant, &vec2(0.0, -1.0), &vec2(1.0, 1.0), &m, 1e-6).unwrap();
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-9);
        assert!((d - fd).norm() < 1e-6);
    }

    #[test]
    fn zero_direction_returns_zero() {
        let set = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        for x in [vec2(0.2, 0.0), vec2(1.0, 0.0), vec2(3.0, 1.0)] {
            let d = dproj(&set, &x, &DVector::zeros(2), &m).unwrap();
            assert_eq!(d.norm(), 0.0);
        }
    }

    #[test]
    fn normal_cone_examples() {
        let ball = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        let x0 = vec2(1.0, 0.0);
        assert!(in_normal_cone(&ball, &x0, &vec2(1.0, 0.0), &m, 1e-9).unwrap());
        assert!(!in_normal_cone(&ball, &x0, &vec2(0.0, 1.0), &m, 1e-9).unwrap());
        let orthant =
            ConvexSet::cone(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!(in_normal_cone(&orthant, &DVector::zeros(2), &vec2(-1.0, -1.0), &m, 1e-9).unwrap());
        assert!(!in_normal_cone(&orthant, &DVector::zeros(2), &vec2(1.0, 0.0), &m, 1e-9).unwrap());
    }
}
