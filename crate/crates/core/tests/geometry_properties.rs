//! Random-instance property suite for projections and their directional
//! derivatives: the variational characterization and non-expansiveness of
//! metric projections, agreement of the derivative dispatch with the
//! finite-difference quotient on every branch, orthogonality of the
//! derivative to the residual, positive homogeneity, firm monotonicity, and
//! monotonicity along rays.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cmest::geometry::{dproj, dproj_fd, feasible_probes, project, support_cone, ConvexSet};
use cmest::metric::SpdMetric;
use cmest::seed;

const INSTANCES_PER_BRANCH: usize = 200;

fn gauss(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let g = gauss(rng, d);
        let n = g.norm();
        if n > 1e-6 {
            return g / n;
        }
    }
}

fn random_metric(rng: &mut ChaCha8Rng, d: usize) -> SpdMetric {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.6..0.6));
    let s = &a * a.transpose() + DMatrix::identity(d, d);
    SpdMetric::new(s).unwrap()
}

/// Well-separated random polyhedron: rows are unit normals with pairwise
/// angles bounded away from zero, offsets keep an anchor strictly feasible.
fn random_polyhedron(rng: &mut ChaCha8Rng, d: usize, rows: usize) -> ConvexSet {
    'outer: loop {
        let normals: Vec<DVector<f64>> = (0..rows).map(|_| unit(rng, d)).collect();
        for i in 0..rows {
            for j in (i + 1)..rows {
                if normals[i].dot(&normals[j]).abs() > 0.85 {
                    continue 'outer;
                }
            }
        }
        let anchor = gauss(rng, d) * 0.5;
        let mut a = DMatrix::zeros(rows, d);
        let mut b = DVector::zeros(rows);
        for (i, n) in normals.iter().enumerate() {
            a.row_mut(i).copy_from(&n.transpose());
            b[i] = n.dot(&anchor) + rng.random_range(0.3..1.5);
        }
        return ConvexSet::polyhedron(a, b).expect("anchored polyhedron is feasible");
    }
}

fn random_cone(rng: &mut ChaCha8Rng, d: usize, rows: usize) -> ConvexSet {
    'outer: loop {
        let normals: Vec<DVector<f64>> = (0..rows).map(|_| unit(rng, d)).collect();
        for i in 0..rows {
            for j in (i + 1)..rows {
                if normals[i].dot(&normals[j]).abs() > 0.85 {
                    continue 'outer;
                }
            }
        }
        let mut a = DMatrix::zeros(rows, d);
        for (i, n) in normals.iter().enumerate() {
            a.row_mut(i).copy_from(&n.transpose());
        }
        return ConvexSet::cone(a).unwrap();
    }
}

fn random_set(rng: &mut ChaCha8Rng, d: usize) -> ConvexSet {
    match rng.random_range(0..4) {
        0 => ConvexSet::ball(gauss(rng, d) * 0.5, rng.random_range(0.5..2.0)).unwrap(),
        1 => {
            let lo = DVector::from_fn(d, |_, _| rng.random_range(-1.5..-0.2));
            let hi = DVector::from_fn(d, |_, _| rng.random_range(0.2..1.5));
            ConvexSet::rect(lo, hi).unwrap()
        }
        2 => { let rows = rng.random_range(2..=3); random_polyhedron(rng, d, rows) }
        _ => { let rows = rng.random_range(2..=3); random_cone(rng, d, rows) }
    }
}

#[test]
fn projection_characterization_on_random_instances() {
    let mut rng = seed::rng(101);
    for trial in 0..120 {
        let d = rng.random_range(1..=4);
        let set = random_set(&mut rng, d);
        let m = random_metric(&mut rng, d);
        let x = gauss(&mut rng, d) * 2.5;
        let y = project(&set, &x, &m, 1e-11).unwrap();
        assert!(set.contains(&y, 1e-7).unwrap(), "trial {trial}: infeasible projection");
        let diff = &x - &y;
        for w in feasible_probes(&set, 32, 7000 + trial).unwrap() {
            let inner = m.inner(&diff, &(&w - &y)).unwrap();
            assert!(
                inner <= 1e-6 * (1.0 + m.norm(&x).unwrap()),
                "trial {trial}: characterization violated by {inner:.3e}"
            );
        }
    }
}

#[test]
fn projections_are_nonexpansive() {
    let mut rng = seed::rng(202);
    for trial in 0..150 {
        let d = rng.random_range(1..=4);
        let set = random_set(&mut rng, d);
        let m = random_metric(&mut rng, d);
        let x1 = gauss(&mut rng, d) * 2.0;
        let x2 = gauss(&mut rng, d) * 2.0;
        let y1 = project(&set, &x1, &m, 1e-11).unwrap();
        let y2 = project(&set, &x2, &m, 1e-11).unwrap();
        let lhs = m.norm(&(&y1 - &y2)).unwrap();
        let rhs = m.norm(&(&x1 - &x2)).unwrap();
        assert!(lhs <= rhs + 1e-8, "trial {trial}: {lhs} > {rhs}");
    }
}

/// A boundary point of the set, constructed exactly where possible and by
/// projecting an exterior point otherwise.
fn boundary_point(set: &ConvexSet, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let d = set.dim();
    match set {
        ConvexSet::Ball { center, radius } => center + unit(rng, d) * *radius,
        ConvexSet::Box { lo, hi } => {
            let mut x = DVector::from_fn(d, |i, _| rng.random_range(lo[i]..=hi[i]));
            let pin = rng.random_range(0..d);
            x[pin] = if rng.random::<bool>() { hi[pin] } else { lo[pin] };
            x
        }
        _ => {
            let id = SpdMetric::identity(d);
            loop {
                let x = gauss(rng, d) * 3.0;
                if !set.contains(&x, 1e-9).unwrap() {
                    return project(set, &x, &id, 1e-12).unwrap();
                }
            }
        }
    }
}

fn exterior_point(set: &ConvexSet, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let x = gauss(rng, set.dim()) * 3.0;
        // stay clear of the boundary so branch classification is stable
        if !set.contains(&x, 1e-3).unwrap() {
            return x;
        }
    }
}

fn check_fd_agreement(name: &str, make: impl Fn(&mut ChaCha8Rng) -> (ConvexSet, DVector<f64>, SpdMetric)) {
    let mut rng = seed::rng(0x0f0d);
    for trial in 0..INSTANCES_PER_BRANCH {
        let (set, x, m) = make(&mut rng);
        let z = gauss(&mut rng, set.dim());
        let a = dproj(&set, &x, &z, &m).unwrap();
        let f = dproj_fd(&set, &x, &z, &m, 1e-6).unwrap();
        let err = (&a - &f).norm();
        assert!(
            err <= 1e-4 * (1.0 + a.norm()),
            "{name} trial {trial}: |dproj - fd| = {err:.3e} (dproj {a:?})"
        );
    }
}

#[test]
fn fd_agreement_ball_branches() {
    // interior, boundary and exterior (the smooth curvature branch),
    // under identity and general metrics
    check_fd_agreement("ball", |rng| {
        let d = rng.random_range(1..=4);
        let set = ConvexSet::ball(gauss(rng, d) * 0.5, rng.random_range(0.5..2.0)).unwrap();
        let m = if rng.random::<bool>() {
            SpdMetric::identity(d)
        } else {
            random_metric(rng, d)
        };
        let x = match rng.random_range(0..3) {
            0 => match &set {
                ConvexSet::Ball { center, radius } => {
                    center + gauss(rng, d) * (0.2 * radius / (d as f64).sqrt())
                }
                _ => unreachable!(),
            },
            1 => boundary_point(&set, rng),
            _ => exterior_point(&set, rng),
        };
        (set, x, m)
    });
}

#[test]
fn fd_agreement_box_branch() {
    check_fd_agreement("box", |rng| {
        let d = rng.random_range(1..=4);
        let lo = DVector::from_fn(d, |_, _| rng.random_range(-1.5..-0.2));
        let hi = DVector::from_fn(d, |_, _| rng.random_range(0.2..1.5));
        let set = ConvexSet::rect(lo, hi).unwrap();
        let m = if rng.random::<bool>() {
            SpdMetric::identity(d)
        } else {
            random_metric(rng, d)
        };
        let x = if rng.random::<bool>() {
            boundary_point(&set, rng)
        } else {
            exterior_point(&set, rng)
        };
        (set, x, m)
    });
}

#[test]
fn fd_agreement_polyhedron_branch() {
    check_fd_agreement("polyhedron", |rng| {
        let d = rng.random_range(2..=4);
        let rows = rng.random_range(2..=3);
        let set = random_polyhedron(rng, d, rows);
        let m = if rng.random::<bool>() {
            SpdMetric::identity(d)
        } else {
            random_metric(rng, d)
        };
        let x = if rng.random::<bool>() {
            boundary_point(&set, rng)
        } else {
            exterior_point(&set, rng)
        };
        (set, x, m)
    });
}

#[test]
fn fd_agreement_cone_branch() {
    check_fd_agreement("cone", |rng| {
        let d = rng.random_range(2..=4);
        let rows = rng.random_range(2..=3);
        let set = random_cone(rng, d, rows);
        let m = if rng.random::<bool>() {
            SpdMetric::identity(d)
        } else {
            random_metric(rng, d)
        };
        let x = if rng.random::<bool>() {
            boundary_point(&set, rng)
        } else {
            exterior_point(&set, rng)
        };
        (set, x, m)
    });
}

#[test]
fn dproj_orthogonality_and_cone_membership() {
    // the derivative lies in the support cone at the foot point and is
    // S-orthogonal to the residual x - proj(x)
    let mut rng = seed::rng(404);
    for trial in 0..150 {
        let d = rng.random_range(2..=4);
        let set = random_set(&mut rng, d);
        let m = random_metric(&mut rng, d);
        let x = exterior_point(&set, &mut rng);
        let z = gauss(&mut rng, d);
        let v = dproj(&set, &x, &z, &m).unwrap();
        let p = project(&set, &x, &m, 1e-12).unwrap();
        let u = &x - &p;
        let ip = m.inner(&v, &u).unwrap().abs();
        let scale = (1.0 + m.norm(&v).unwrap()) * (1.0 + m.norm(&u).unwrap());
        assert!(ip <= 1e-6 * scale, "trial {trial}: <dproj, residual>_S = {ip:.3e}");
        let cone = support_cone(&set, &p, 1e-7).unwrap();
        assert!(
            cone.contains(&v, 1e-6 * (1.0 + v.norm())),
            "trial {trial}: derivative escapes the support cone"
        );
    }
}

#[test]
fn dproj_positive_homogeneity() {
    let mut rng = seed::rng(505);
    for trial in 0..150 {
        let d = rng.random_range(1..=4);
        let set = random_set(&mut rng, d);
        let m = random_metric(&mut rng, d);
        let x = if rng.random::<bool>() {
            boundary_point(&set, &mut rng)
        } else {
            exterior_point(&set, &mut rng)
        };
        let z = gauss(&mut rng, d);
        let base = dproj(&set, &x, &z, &m).unwrap();
        for lambda in [0.5, 2.0, 7.0] {
            let scaled = dproj(&set, &x, &(&z * lambda), &m).unwrap();
            let err = (&scaled - &base * lambda).norm();
            assert!(
                err <= 1e-10 * (1.0 + lambda * (1.0 + base.norm())) + 1e-10,
                "trial {trial}, lambda {lambda}: homogeneity error {err:.3e}"
            );
        }
    }
}

#[test]
fn dproj_firm_monotonicity() {
    let mut rng = seed::rng(606);
    for trial in 0..150 {
        let d = rng.random_range(1..=4);
        let set = random_set(&mut rng, d);
        let m = random_metric(&mut rng, d);
        let x = if rng.random::<bool>() {
            boundary_point(&set, &mut rng)
        } else {
            exterior_point(&set, &mut rng)
        };
        let z1 = gauss(&mut rng, d);
        let z2 = gauss(&mut rng, d);
        let v1 = dproj(&set, &x, &z1, &m).unwrap();
        let v2 = dproj(&set, &x, &z2, &m).unwrap();
        let dv = &v2 - &v1;
        let dz = &z2 - &z1;
        let lhs = m.inner(&dv, &dz).unwrap();
        let rhs = m.inner(&dv, &dv).unwrap();
        assert!(lhs >= rhs - 1e-6, "trial {trial}: firm monotonicity {lhs} < {rhs}");
        // non-expansiveness follows but check it directly as well
        assert!(
            m.norm(&dv).unwrap() <= m.norm(&dz).unwrap() + 1e-6,
            "trial {trial}: expansion"
        );
    }
}

#[test]
fn dproj_ray_monotonicity() {
    // |D+proj(x_t; z)| is non-increasing along the ray x_t = p + t(x - p),
    // including the t = 0 endpoint (the cone projection at the foot point)
    let mut rng = seed::rng(707);
    for trial in 0..100 {
        let d = rng.random_range(2..=3);
        let set = if rng.random::<bool>() {
            ConvexSet::ball(gauss(&mut rng, d) * 0.3, rng.random_range(0.5..1.5)).unwrap()
        } else {
            random_polyhedron(&mut rng, d, 2)
        };
        let m = random_metric(&mut rng, d);
        let x = exterior_point(&set, &mut rng);
        let p = project(&set, &x, &m, 1e-12).unwrap();
        let dir = &x - &p;
        let z = gauss(&mut rng, d);
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.25, 1.0, 3.0] {
            let xt = &p + &dir * t;
            let v = dproj(&set, &xt, &z, &m).unwrap();
            let norm = m.norm(&v).unwrap();
            assert!(
                norm <= prev + 1e-6,
                "trial {trial}, t {t}: |dproj| grew from {prev:.6} to {norm:.6}"
            );
            prev = norm;
        }
    }
}
