//! Metric projections onto convex sets.
//!
//! Balls and boxes get closed forms where the metric allows it (scalar,
//! respectively diagonal, S). A ball under a general metric becomes an
//! ellipsoid in isotropic coordinates; its projection is solved by a 1-D
//! root-find on the KKT multiplier. Polyhedra and polyhedral cones use
//! Dykstra's alternating projections in isotropic coordinates — plain
//! alternating projection would converge to a feasible point that is not
//! the metric projection.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::SpdMetric;

use super::ConvexSet;

/// Bisection tolerance on the ball/ellipsoid KKT multiplier root-find.
const KKT_TOL: f64 = 1e-12;

/// An elementary constraint with a closed-form Euclidean projection.
#[derive(Debug, Clone)]
pub(crate) enum Piece {
    /// `{y : a' y <= b}`
    Halfspace { a: DVector<f64>, b: f64 },
    /// `{y : a' y = b}`
    Hyperplane { a: DVector<f64>, b: f64 },
}

impl Piece {
    fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Piece::Halfspace { a, b } => {
                let r = a.dot(y) - b;
                if r <= 0.0 {
                    y.clone()
                } else {
                    y - a * (r / a.norm_squared())
                }
            }
            Piece::Hyperplane { a, b } => {
                let r = a.dot(y) - b;
                y - a * (r / a.norm_squared())
            }
        }
    }

    fn violation(&self, y: &DVector<f64>) -> f64 {
        match self {
            Piece::Halfspace { a, b } => (a.dot(y) - b).max(0.0) / a.norm(),
            Piece::Hyperplane { a, b } => (a.dot(y) - b).abs() / a.norm(),
        }
    }
}

/// Dykstra's algorithm over elementary pieces, Euclidean metric.
///
/// Stops when the iterate moves less than `move_tol` over a full cycle.
/// `max_cycles` caps the work; on a cap the error carries the residual, and a
/// stalled residual with persistent infeasibility is reported as an empty
/// intersection.
pub(crate) fn dykstra(
    pieces: &[Piece],
    y0: &DVector<f64>,
    max_cycles: usize,
    move_tol: f64,
) -> Result<DVector<f64>> {
    let mut x = y0.clone();
    let mut increments: Vec<DVector<f64>> = vec![DVector::zeros(y0.len()); pieces.len()];
    let scale = 1.0 + y0.norm();
    let move_floor = move_tol.max(1e-15 * scale);
    let feas_slack = (10.0 * move_floor).max(1e-10 * scale);
    let mut prev_move = f64::INFINITY;
    let mut stalled_cycles = 0usize;
    for _cycle in 0..max_cycles {
        let x_before = x.clone();
        for (piece, p) in pieces.iter().zip(increments.iter_mut()) {
            let w = &x + &*p;
            let xn = piece.project(&w);
            *p = w - &xn;
            x = xn;
        }
        let moved = (&x - &x_before).norm();
        if moved <= move_floor {
            // the end-of-cycle iterate can be stationary on an empty
            // intersection while the increments diverge; feasibility decides
            let infeas = pieces.iter().map(|p| p.violation(&x)).fold(0.0, f64::max);
            if infeas > feas_slack {
                return Err(Error::InfeasibleSet);
            }
            return Ok(x);
        }
        // Movement that stops shrinking while constraints stay violated is the
        // signature of an empty intersection (iterate oscillates across the gap).
        if moved > 0.9 * prev_move {
            stalled_cycles += 1;
        } else {
            stalled_cycles = 0;
        }
        prev_move = moved;
        if stalled_cycles > 200 {
            let infeas = pieces.iter().map(|p| p.violation(&x)).fold(0.0, f64::max);
            if infeas > 1e-7 * scale {
                return Err(Error::InfeasibleSet);
            }
        }
    }
    let moved = prev_move;
    let infeas = pieces.iter().map(|p| p.violation(&x)).fold(0.0, f64::max);
    if infeas > 1e-6 * scale && moved > 0.5 * infeas {
        return Err(Error::InfeasibleSet);
    }
    Err(Error::NumericFailure { what: "dykstra", residual: moved.max(infeas) })
}

/// Closed-form metric projection onto the halfspace `{y : a' y <= b}`.
pub(crate) fn halfspace_project_metric(
    a: &DVector<f64>,
    b: f64,
    z: &DVector<f64>,
    m: &SpdMetric,
) -> Result<DVector<f64>> {
    if a.len() != z.len() || a.len() != m.dim() {
        return Err(Error::invalid("halfspace projection: dimension mismatch"));
    }
    let r = a.dot(z) - b;
    if r <= 0.0 {
        return Ok(z.clone());
    }
    let sa = m.solve(a)?;
    Ok(z - &sa * (r / a.dot(&sa)))
}

/// Euclidean projection of `x` onto the ball `{|y - c| <= r}` under metric S,
/// by bisection on the KKT multiplier of
/// `min |x - y|_S^2  s.t.  |y - c|^2 <= r^2`,
/// whose stationarity condition gives `y(l) = (S + l I)^{-1} (S x + l c)`
/// with `|y(l) - c|` strictly decreasing in `l >= 0`.
fn ball_project_kkt(
    center: &DVector<f64>,
    radius: f64,
    x: &DVector<f64>,
    m: &SpdMetric,
) -> Result<DVector<f64>> {
    let d = x.len();
    let s = m.matrix();
    let sx = s * x;
    let y_of = |lambda: f64| -> Result<DVector<f64>> {
        let mut a = s.clone();
        for i in 0..d {
            a[(i, i)] += lambda;
        }
        let rhs = &sx + center * lambda;
        Cholesky::new(a)
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::NumericFailure { what: "ball KKT solve", residual: lambda })
    };
    let g = |lambda: f64| -> Result<f64> { Ok((y_of(lambda)? - center).norm()) };

    // bracket the root of g(l) = r
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut iters = 0;
    while g(hi)? > radius {
        lo = hi;
        hi *= 4.0;
        iters += 1;
        if iters > 200 {
            return Err(Error::NumericFailure { what: "ball KKT bracket", residual: g(hi)? });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if (gm - radius).abs() <= KKT_TOL * (1.0 + radius) {
            return y_of(mid);
        }
        if gm > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    y_of(0.5 * (lo + hi))
}

/// Rows of a linear system `A y <= b`, rewritten in isotropic coordinates
/// `y = L' x` so that the S-projection becomes a Euclidean one:
/// `a' x <= b  <=>  (L^{-1} a)' y <= b`.
fn pieces_isotropic(a: &DMatrix<f64>, b: &DVector<f64>, m: &SpdMetric) -> Result<Vec<Piece>> {
    let l = m.factor();
    let mut pieces = Vec::with_capacity(a.nrows());
    for i in 0..a.nrows() {
        let ai = a.row(i).transpose();
        let ai_iso = l
            .solve_lower_triangular(&ai)
            .ok_or_else(|| Error::invalid("singular Cholesky factor"))?;
        pieces.push(Piece::Halfspace { a: ai_iso, b: b[i] });
    }
    Ok(pieces)
}

pub(crate) fn dykstra_cap(n_rows: usize, dim: usize) -> usize {
    100 * n_rows.max(1) * dim.max(1)
}

/// Metric projection of `x` onto `set` with respect to `m`.
///
/// `tol` controls the iterative branches: Dykstra stops once a full cycle
/// moves the iterate by at most `tol / 10`.
pub fn project(set: &ConvexSet, x: &DVector<f64>, m: &SpdMetric, tol: f64) -> Result<DVector<f64>> {
    if x.len() != set.dim() {
        return Err(Error::invalid(format!(
            "point has dimension {}, set expects {}",
            x.len(),
            set.dim()
        )));
    }
    if m.dim() != set.dim() {
        return Err(Error::invalid("metric dimension does not match the set"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("projection tolerance must be positive"));
    }
    match set {
        ConvexSet::Full { .. } => Ok(x.clone()),
        ConvexSet::Ball { center, radius } => {
            let dist = (x - center).norm();
            if dist <= *radius {
                return Ok(x.clone());
            }
            if m.is_scalar() {
                // the S-projection coincides with the Euclidean radial clip
                Ok(center + (x - center) * (*radius / dist))
            } else {
                ball_project_kkt(center, *radius, x, m)
            }
        }
        ConvexSet::Box { lo, hi } => {
            if m.is_diagonal() {
                // separable: componentwise clip is exact for any diagonal S
                Ok(DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i])))
            } else {
                let d = x.len();
                let mut rows = Vec::with_capacity(2 * d);
                let mut rhs = Vec::with_capacity(2 * d);
                for i in 0..d {
                    let mut r = DVector::zeros(d);
                    r[i] = 1.0;
                    rows.push(r.transpose());
                    rhs.push(hi[i]);
                    let mut r = DVector::zeros(d);
                    r[i] = -1.0;
                    rows.push(r.transpose());
                    rhs.push(-lo[i]);
                }
                let a = DMatrix::from_rows(&rows);
                let b = DVector::from_vec(rhs);
                project_linear_system(&a, &b, x, m, tol)
            }
        }
        ConvexSet::Polyhedron { a, b } => project_linear_system(a, b, x, m, tol),
        ConvexSet::Cone { a } => {
            let b = DVector::zeros(a.nrows());
            project_linear_system(a, &b, x, m, tol)
        }
    }
}

fn project_linear_system(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    m: &SpdMetric,
    tol: f64,
) -> Result<DVector<f64>> {
    // feasible points are fixed points; skip the iteration entirely
    let resid = a * x - b;
    if resid.iter().all(|r| *r <= 0.0) {
        return Ok(x.clone());
    }
    if a.nrows() == 1 {
        return halfspace_project_metric(&a.row(0).transpose(), b[0], x, m);
    }
    let pieces = pieces_isotropic(a, b, m)?;
    let y0 = m.to_isotropic(x)?;
    let y = dykstra(&pieces, &y0, dykstra_cap(a.nrows(), x.len()), tol / 10.0)?;
    m.from_isotropic(&y)
}

/// Euclidean projection onto the pieces of a cone intersected with a
/// hyperplane, in isotropic coordinates. Used by `dproj`'s polyhedral branch.
pub(crate) fn project_cone_slice(
    rows_iso: &[DVector<f64>],
    hyper_normal_iso: Option<&DVector<f64>>,
    z_iso: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let mut pieces: Vec<Piece> = rows_iso
        .iter()
        .map(|a| Piece::Halfspace { a: a.clone(), b: 0.0 })
        .collect();
    if let Some(n) = hyper_normal_iso {
        pieces.push(Piece::Hyperplane { a: n.clone(), b: 0.0 });
    }
    if pieces.len() == 1 {
        return Ok(pieces[0].project(z_iso));
    }
    let cap = dykstra_cap(pieces.len(), z_iso.len());
    dykstra(&pieces, z_iso, cap, tol / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::feasible_probes;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn ball_radial_projection() {
        let set = ConvexSet::ball(DVector::zeros(2), 1.0).unwrap();
        let m = SpdMetric::identity(2);
        let y = project(&set, &vec2(2.0, 0.0), &m, 1e-10).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthant_coordinate_clipping() {
        // {x : x_1 >= 0, x_2 >= 0} as polyhedron -x <= 0
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let set = ConvexSet::polyhedron(a, DVector::zeros(2)).unwrap();
        let m = SpdMetric::identity(2);
        let y = project(&set, &vec2(-1.0, 2.0), &m, 1e-10).unwrap();
        assert_abs_diff_eq!(y[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(y[1], 2.0, epsilon = 1e-10);
    }

    /// Dense grid oracle for `min |x - y|_S  s.t.  a' y <= b` in 2-D.
    fn grid_oracle(
        a: &DVector<f64>,
        b: f64,
        x: &DVector<f64>,
        m: &SpdMetric,
        span: f64,
        steps: usize,
    ) -> DVector<f64> {
        let mut best = x.clone();
        let mut best_val = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let y = vec2(
                    x[0] - span + 2.0 * span * i as f64 / steps as f64,
                    x[1] - span + 2.0 * span * j as f64 / steps as f64,
                );
                if a.dot(&y) <= b {
                    let diff = &y - x;
                    let v = m.inner(&diff, &diff).unwrap();
                    if v < best_val {
                        best_val = v;
                        best = y;
                    }
                }
            }
        }
        best
    }

    #[test]
    fn weighted_metric_halfspace_matches_grid_and_kkt_oracle() {
        // x_1 + x_2 <= 1 under S = diag(1, 4), projecting (1, 1).
        // KKT: y = x - l S^{-1} a with a' y = 1 gives l = 0.8, y = (0.2, 0.8).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let set = ConvexSet::polyhedron(a, DVector::from_vec(vec![1.0])).unwrap();
        let m = SpdMetric::new(DMatrix::from_diagonal(&vec2(1.0, 4.0))).unwrap();
        let y = project(&set, &vec2(1.0, 1.0), &m, 1e-12).unwrap();
        assert_abs_diff_eq!(y[0], 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(y[1], 0.8, epsilon = 1e-10);
        // coarse grid oracle agrees to its resolution
        let g = grid_oracle(&vec2(1.0, 1.0), 1.0, &vec2(1.0, 1.0), &m, 1.5, 600);
        assert!((y - g).norm() < 1e-2);
    }

    #[test]
    fn closed_forms_under_identity() {
        let m = SpdMetric::identity(2);
        let rect = ConvexSet::rect(DVector::zeros(2), DVector::from_element(2, 1.0)).unwrap();
        let y = project(&rect, &vec2(2.0, -0.5), &m, 1e-10).unwrap();
        assert_eq!(y, vec2(1.0, 0.0));
        let half = ConvexSet::polyhedron(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let y = project(&half, &vec2(3.0, 2.0), &m, 1e-10).unwrap();
        assert_eq!(y, vec2(3.0, 0.5));
    }

    #[test]
    fn ellipsoidal_ball_projection_satisfies_kkt() {
        // Ball under a non-scalar metric: verify feasibility and the
        // variational characterization <x - y, w - y>_S <= 0 on probes.
        let set = ConvexSet::ball(vec2(0.5, -0.25), 1.25).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let m = SpdMetric::new(s).unwrap();
        let mut rng = crate::seed::rng(11);
        for _ in 0..40 {
            let x = vec2(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let y = project(&set, &x, &m, 1e-12).unwrap();
            assert!(set.contains(&y, 1e-9).unwrap());
            let diff = &x - &y;
            for w in feasible_probes(&set, 24, 99).unwrap() {
                let inner = m.inner(&diff, &(&w - &y)).unwrap();
                assert!(inner <= 1e-8 * (1.0 + x.norm()), "characterization violated: {inner}");
            }
        }
    }

    #[test]
    fn dykstra_beats_alternating_projection_bias() {
        // Projection onto a wedge under identity: the result must satisfy the
        // variational inequality, which plain alternating projections fail.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -1.0]);
        let set = ConvexSet::polyhedron(a, DVector::zeros(2)).unwrap();
        let m = SpdMetric::identity(2);
        let mut rng = crate::seed::rng(5);
        for _ in 0..40 {
            let x = vec2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let y = project(&set, &x, &m, 1e-11).unwrap();
            assert!(set.contains(&y, 1e-8).unwrap());
            let diff = &x - &y;
            for w in feasible_probes(&set, 32, 123).unwrap() {
                assert!(m.inner(&diff, &(&w - &y)).unwrap() <= 1e-7 * (1.0 + x.norm()));
            }
        }
    }

    #[test]
    fn infeasible_slab_is_detected() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]); // x <= -1 and x >= 1
        let set = ConvexSet::Polyhedron { a, b };
        let m = SpdMetric::identity(1);
        let r = project(&set, &DVector::from_vec(vec![0.0]), &m, 1e-9);
        assert!(matches!(r, Err(Error::InfeasibleSet)), "got {r:?}");
    }
}
