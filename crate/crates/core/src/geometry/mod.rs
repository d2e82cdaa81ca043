//! Convex constraint sets, their support cones and feasibility probes.
//!
//! A [`ConvexSet`] is one of five shapes: the full space, a Euclidean ball,
//! an axis-aligned box, a polyhedron `{x : A x <= b}`, or a polyhedral cone
//! `{x : A x <= 0}`. Each is closed and convex by construction. Membership
//! tests are metric-free (Euclidean slack on constraint residuals); metric
//! projections and directional derivatives of projections live in
//! [`project`](self::project()) and [`dproj`](self::dproj()).

mod dproj;
mod project;

pub use dproj::{dproj, dproj_fd, in_normal_cone};
pub use project::project;
pub(crate) use project::halfspace_project_metric;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::SpdMetric;
use crate::seed;

/// Default relative tolerance for classifying a constraint as active.
/// Below this, constraint classification flips the cone that `dproj`
/// dispatches on; the finite-difference cross-check guards misclassification.
pub const TOL_ACTIVE: f64 = 1e-7;

/// A closed convex constraint set.
#[derive(Debug, Clone)]
pub enum ConvexSet {
    /// All of `R^dim`.
    Full { dim: usize },
    /// Euclidean ball `{x : |x - center| <= radius}`.
    Ball { center: DVector<f64>, radius: f64 },
    /// Axis-aligned box `{x : lo <= x <= hi}` (componentwise).
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// `{x : A x <= b}` rowwise.
    Polyhedron { a: DMatrix<f64>, b: DVector<f64> },
    /// `{x : A x <= 0}` rowwise. Always contains the origin.
    Cone { a: DMatrix<f64> },
}

impl ConvexSet {
    pub fn full(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(ConvexSet::Full { dim })
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("ball radius must be positive and finite"));
        }
        if center.is_empty() {
            return Err(Error::invalid("ball center must be non-empty"));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    pub fn rect(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box bounds must have equal positive length"));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::invalid("box requires lo <= hi componentwise"));
        }
        Ok(ConvexSet::Box { lo, hi })
    }

    /// `{x : A x <= b}`. Nonemptiness is certified at construction by
    /// projecting the origin onto the set and checking the result is feasible.
    pub fn polyhedron(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 || a.nrows() != b.len() {
            return Err(Error::invalid("polyhedron requires A (m x d, m,d >= 1) and b (m)"));
        }
        if a.row_iter().any(|r| r.norm() == 0.0) {
            return Err(Error::invalid("polyhedron rows must be non-zero"));
        }
        let set = ConvexSet::Polyhedron { a, b };
        let m = SpdMetric::identity(set.dim());
        let origin = DVector::zeros(set.dim());
        match project(&set, &origin, &m, 1e-9) {
            Ok(p) if set.contains(&p, 1e-6)? => Ok(set),
            Ok(_) | Err(Error::NumericFailure { .. }) | Err(Error::InfeasibleSet) => {
                Err(Error::InfeasibleSet)
            }
            Err(e) => Err(e),
        }
    }

    pub fn cone(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid("cone requires a non-empty A"));
        }
        if a.row_iter().any(|r| r.norm() == 0.0) {
            return Err(Error::invalid("cone rows must be non-zero"));
        }
        Ok(ConvexSet::Cone { a })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Full { dim } => *dim,
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Polyhedron { a, .. } => a.ncols(),
            ConvexSet::Cone { a } => a.ncols(),
        }
    }

    /// Membership within Euclidean slack `tol` on the constraint residuals.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, set expects {}",
                x.len(),
                self.dim()
            )));
        }
        if tol < 0.0 {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        Ok(match self {
            ConvexSet::Full { .. } => true,
            ConvexSet::Ball { center, radius } => (x - center).norm() <= radius + tol,
            ConvexSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            ConvexSet::Polyhedron { a, b } => {
                let r = a * x - b;
                r.iter().all(|ri| *ri <= tol)
            }
            ConvexSet::Cone { a } => (a * x).iter().all(|ri| *ri <= tol),
        })
    }

    /// The translated set `self - shift = {x - shift : x in self}`.
    ///
    /// Translating a cone yields a polyhedron unless the shift keeps the apex
    /// at the origin.
    pub fn translate(&self, shift: &DVector<f64>) -> ConvexSet {
        match self {
            ConvexSet::Full { dim } => ConvexSet::Full { dim: *dim },
            ConvexSet::Ball { center, radius } => ConvexSet::Ball {
                center: center - shift,
                radius: *radius,
            },
            ConvexSet::Box { lo, hi } => ConvexSet::Box {
                lo: lo - shift,
                hi: hi - shift,
            },
            ConvexSet::Polyhedron { a, b } => ConvexSet::Polyhedron {
                a: a.clone(),
                b: b - a * shift,
            },
            ConvexSet::Cone { a } => {
                let bb = -(a * shift);
                if bb.norm() == 0.0 {
                    ConvexSet::Cone { a: a.clone() }
                } else {
                    ConvexSet::Polyhedron { a: a.clone(), b: bb }
                }
            }
        }
    }
}

/// The support cone to a set at a feasible point, in one of three shapes.
#[derive(Debug, Clone)]
pub enum SupportConeRep {
    /// The point is interior: every direction is tangent.
    Full { dim: usize },
    /// Ball boundary: `{t : normal' t <= 0}` with the outward normal.
    Halfspace { normal: DVector<f64> },
    /// Active halfspaces of a polyhedral set: `{t : A t <= 0}`.
    Cone { a: DMatrix<f64> },
}

impl SupportConeRep {
    pub fn dim(&self) -> usize {
        match self {
            SupportConeRep::Full { dim } => *dim,
            SupportConeRep::Halfspace { normal } => normal.len(),
            SupportConeRep::Cone { a } => a.ncols(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, SupportConeRep::Full { .. })
    }

    pub fn contains(&self, t: &DVector<f64>, tol: f64) -> bool {
        match self {
            SupportConeRep::Full { .. } => true,
            SupportConeRep::Halfspace { normal } => normal.dot(t) <= tol,
            SupportConeRep::Cone { a } => (a * t).iter().all(|r| *r <= tol),
        }
    }

    /// Metric projection of `z` onto the cone.
    pub fn project(&self, z: &DVector<f64>, m: &SpdMetric, tol: f64) -> Result<DVector<f64>> {
        match self {
            SupportConeRep::Full { .. } => Ok(z.clone()),
            SupportConeRep::Halfspace { normal } => {
                Ok(halfspace_project_metric(normal, 0.0, z, m)?)
            }
            SupportConeRep::Cone { a } => {
                let set = ConvexSet::Cone { a: a.clone() };
                project(&set, z, m, tol)
            }
        }
    }
}

/// Support cone to `set` at `x0` (Lemma-style active-halfspace construction).
///
/// `tol_active` is the relative slack used to classify a constraint as
/// active: `|a_i' x0 - b_i| <= tol_active * (1 + |b_i|)`.
pub fn support_cone(set: &ConvexSet, x0: &DVector<f64>, tol_active: f64) -> Result<SupportConeRep> {
    if !set.contains(x0, tol_active.max(1e-12) * (1.0 + x0.norm()))? {
        return Err(Error::invalid("support_cone: point is not in the set"));
    }
    let d = set.dim();
    Ok(match set {
        ConvexSet::Full { .. } => SupportConeRep::Full { dim: d },
        ConvexSet::Ball { center, radius } => {
            let dist = (x0 - center).norm();
            if (dist - radius).abs() <= tol_active * (1.0 + radius) {
                SupportConeRep::Halfspace { normal: x0 - center }
            } else {
                SupportConeRep::Full { dim: d }
            }
        }
        ConvexSet::Box { lo, hi } => {
            let mut rows: Vec<DVector<f64>> = Vec::new();
            for i in 0..d {
                if (x0[i] - lo[i]).abs() <= tol_active * (1.0 + lo[i].abs()) {
                    let mut r = DVector::zeros(d);
                    r[i] = -1.0;
                    rows.push(r);
                }
                if (x0[i] - hi[i]).abs() <= tol_active * (1.0 + hi[i].abs()) {
                    let mut r = DVector::zeros(d);
                    r[i] = 1.0;
                    rows.push(r);
                }
            }
            cone_from_rows(rows, d)
        }
        ConvexSet::Polyhedron { a, b } => {
            let rows: Vec<DVector<f64>> = (0..a.nrows())
                .filter(|&i| {
                    let resid = a.row(i).transpose().dot(x0) - b[i];
                    resid.abs() <= tol_active * (1.0 + b[i].abs())
                })
                .map(|i| a.row(i).transpose())
                .collect();
            cone_from_rows(rows, d)
        }
        ConvexSet::Cone { a } => {
            let rows: Vec<DVector<f64>> = (0..a.nrows())
                .filter(|&i| a.row(i).transpose().dot(x0).abs() <= tol_active)
                .map(|i| a.row(i).transpose())
                .collect();
            cone_from_rows(rows, d)
        }
    })
}

fn cone_from_rows(rows: Vec<DVector<f64>>, dim: usize) -> SupportConeRep {
    if rows.is_empty() {
        SupportConeRep::Full { dim }
    } else {
        let a = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
        SupportConeRep::Cone { a }
    }
}

/// Deterministic feasible points of the set, used as probes by
/// [`in_normal_cone`] and by the property tests. Includes shape-specific
/// extreme points (box vertices, ball axis extremes, cone generators) plus
/// seeded random members.
pub fn feasible_probes(set: &ConvexSet, count: usize, seed_val: u64) -> Result<Vec<DVector<f64>>> {
    let d = set.dim();
    let mut rng = seed::rng(seed::derive(seed_val, &[0x9e0b]));
    let mut probes: Vec<DVector<f64>> = Vec::with_capacity(count + 2 * d + 2);
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    match set {
        ConvexSet::Full { .. } => {
            for _ in 0..count {
                probes.push(gauss(&mut rng, d) * 3.0);
            }
        }
        ConvexSet::Ball { center, radius } => {
            probes.push(center.clone());
            for i in 0..d {
                let mut e = DVector::zeros(d);
                e[i] = *radius;
                probes.push(center + &e);
                probes.push(center - &e);
            }
            for _ in 0..count {
                let dir = gauss(&mut rng, d);
                let n = dir.norm();
                if n == 0.0 {
                    continue;
                }
                let u: f64 = rng.random_range(0.0..1.0);
                probes.push(center + dir * (radius * u.powf(1.0 / d as f64) / n));
            }
        }
        ConvexSet::Box { lo, hi } => {
            probes.push((lo + hi) * 0.5);
            let n_vertices = 1usize.checked_shl(d as u32).unwrap_or(usize::MAX);
            if n_vertices <= 64 {
                for mask in 0..n_vertices {
                    let v = DVector::from_fn(d, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] });
                    probes.push(v);
                }
            } else {
                for _ in 0..64 {
                    let v = DVector::from_fn(d, |i, _| if rng.random::<bool>() { hi[i] } else { lo[i] });
                    probes.push(v);
                }
            }
            for _ in 0..count {
                probes.push(DVector::from_fn(d, |i, _| rng.random_range(lo[i]..=hi[i])));
            }
        }
        ConvexSet::Polyhedron { a, b } => {
            let m = SpdMetric::identity(d);
            let mut p = project(set, &DVector::zeros(d), &m, 1e-10)?;
            probes.push(p.clone());
            // hit-and-run for interior coverage, projections for boundary coverage
            let scale = 1.0 + b.amax();
            for j in 0..count {
                if j % 2 == 0 {
                    let dir = gauss(&mut rng, d);
                    let (mut t_lo, mut t_hi) = (-100.0 * scale, 100.0 * scale);
                    for i in 0..a.nrows() {
                        let ai = a.row(i).transpose();
                        let num = b[i] - ai.dot(&p);
                        let den = ai.dot(&dir);
                        if den.abs() > 1e-14 {
                            let t = num / den;
                            if den > 0.0 {
                                t_hi = t_hi.min(t);
                            } else {
                                t_lo = t_lo.max(t);
                            }
                        }
                    }
                    if t_lo <= t_hi {
                        p = &p + dir * rng.random_range(t_lo..=t_hi);
                    }
                    probes.push(p.clone());
                } else {
                    let q = gauss(&mut rng, d) * (3.0 * scale);
                    probes.push(project(set, &q, &m, 1e-10)?);
                }
            }
        }
        ConvexSet::Cone { a: _ } => {
            let m = SpdMetric::identity(d);
            probes.push(DVector::zeros(d));
            for _ in 0..count {
                let q = gauss(&mut rng, d) * 2.0;
                let p = project(set, &q, &m, 1e-10)?;
                probes.push(p.clone() * 0.5);
                probes.push(p * 2.0);
            }
        }
    }
    Ok(probes)
}

// ---------------------------------------------------------------------------
// JSON wire format: {"type": "ball"|"box"|"polyhedron"|"cone"|"full", ...}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum SetSpec {
    Full { dim: usize },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Polyhedron { a: Vec<Vec<f64>>, b: Vec<f64> },
    Cone { a: Vec<Vec<f64>> },
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::invalid("matrix must be non-empty"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), d, &flat))
}

impl TryFrom<SetSpec> for ConvexSet {
    type Error = Error;

    fn try_from(spec: SetSpec) -> Result<Self> {
        match spec {
            SetSpec::Full { dim } => ConvexSet::full(dim),
            SetSpec::Ball { center, radius } => ConvexSet::ball(DVector::from_vec(center), radius),
            SetSpec::Box { lo, hi } => {
                ConvexSet::rect(DVector::from_vec(lo), DVector::from_vec(hi))
            }
            SetSpec::Polyhedron { a, b } => {
                ConvexSet::polyhedron(matrix_from_rows(&a)?, DVector::from_vec(b))
            }
            SetSpec::Cone { a } => ConvexSet::cone(matrix_from_rows(&a)?),
        }
    }
}

impl From<&ConvexSet> for SetSpec {
    fn from(set: &ConvexSet) -> Self {
        let rows = |a: &DMatrix<f64>| -> Vec<Vec<f64>> {
            a.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        match set {
            ConvexSet::Full { dim } => SetSpec::Full { dim: *dim },
            ConvexSet::Ball { center, radius } => SetSpec::Ball {
                center: center.iter().copied().collect(),
                radius: *radius,
            },
            ConvexSet::Box { lo, hi } => SetSpec::Box {
                lo: lo.iter().copied().collect(),
                hi: hi.iter().copied().collect(),
            },
            ConvexSet::Polyhedron { a, b } => SetSpec::Polyhedron {
                a: rows(a),
                b: b.iter().copied().collect(),
            },
            ConvexSet::Cone { a } => SetSpec::Cone { a: rows(a) },
        }
    }
}

impl Serialize for ConvexSet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        SetSpec::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for ConvexSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let spec = SetSpec::deserialize(de)?;
        ConvexSet::try_from(spec).map_err(serde::de::Error::custom)
    }
}
