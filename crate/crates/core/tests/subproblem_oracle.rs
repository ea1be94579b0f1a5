//! The solver against an independent oracle.
//!
//! With scaled-identity Hessians the surrogate constraint set is a ball and
//! the objective is a squared distance to `pJ = -gJ/(2cJ)`, so one projected
//! gradient step of length `1/(2cJ)` lands on the optimum: the projection of
//! `pJ` onto ball ∩ box. That projection is computed here by Dykstra's
//! alternating projections, which shares no code with the dual bisection.

use cmdp_sca::quadform::SeparableQuadratic;
use cmdp_sca::subproblem::{self, Bounds, SolveStatus};
use cmdp_sca::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

struct Instance {
    qj: SeparableQuadratic,
    qd: SeparableQuadratic,
    d0: f64,
    bounds: Bounds,
}

fn project_ball(x: &Vector, center: &Vector, radius: f64) -> Vector {
    let d = x - center;
    let n = d.norm();
    if n <= radius {
        x.clone()
    } else {
        center + d * (radius / n)
    }
}

/// Projected-gradient oracle; `None` when ball ∩ box is empty.
fn oracle(inst: &Instance) -> Option<Vector> {
    let center = &inst.qd.g / (-2.0 * inst.qd.c);
    let r2 = (inst.d0 - inst.qd.a) / inst.qd.c + center.norm_squared();
    if r2 < 0.0 {
        return None;
    }
    let radius = r2.sqrt();
    if (inst.bounds.clamp(&center) - &center).norm() > radius {
        return None;
    }

    let target = &inst.qj.g / (-2.0 * inst.qj.c);
    let mut x = target.clone();
    let mut p = Vector::zeros(x.len());
    let mut q = Vector::zeros(x.len());
    for _ in 0..200_000 {
        let y = inst.bounds.clamp(&(&x + &p));
        p = &x + &p - &y;
        let next = project_ball(&(&y + &q), &center, radius);
        q = &y + &q - &next;
        let moved = (&next - &x).amax();
        let gap = (&next - &y).amax();
        x = next;
        // Dykstra's iterate can pause while the correction terms still move,
        // so both sets have to agree before stopping.
        if moved < 1e-14 && gap < 1e-12 {
            break;
        }
    }
    Some(x)
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.random_range(1..=4);
    let quad = |rng: &mut ChaCha8Rng| SeparableQuadratic {
        a: rng.random_range(-2.0..2.0),
        g: Vector::from_fn(d, |_, _| rng.random_range(-4.0..4.0)),
        c: rng.random_range(0.2..3.0),
    };
    let qj = quad(rng);
    let qd = quad(rng);
    let lower = Vector::from_fn(d, |_, _| rng.random_range(-3.0..-0.2));
    let upper = Vector::from_fn(d, |_, _| rng.random_range(0.2..3.0));
    let bounds = Bounds::new(lower, upper).unwrap();

    // Budget relative to the box-restricted minimum of qD, kept away from the
    // exact tangency where feasibility is decided by the tolerance.
    let d_min = qd.evaluate(&bounds.clamp(&(&qd.g / (-2.0 * qd.c))));
    let d0 = if rng.random_bool(0.15) {
        d_min - rng.random_range(0.05..1.0)
    } else {
        d_min + rng.random_range(0.05..4.0)
    };
    Instance { qj, qd, d0, bounds }
}

#[test]
fn solver_matches_projection_oracle_on_random_instances() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = [0usize; 3];
    for trial in 0..1000 {
        let inst = random_instance(&mut rng);
        let sol = subproblem::solve(&inst.qj, &inst.qd, inst.d0, &inst.bounds, subproblem::DEFAULT_TOL).unwrap();
        let kkt = sol.kkt_residual(&inst.qj, &inst.qd, &inst.bounds);
        assert!(kkt <= 1e-9, "trial {trial}: kkt {kkt}");
        assert!(inst.bounds.contains(&sol.theta_bar));
        assert!(sol.lambda >= 0.0 && sol.alpha >= 0.0);

        match oracle(&inst) {
            Some(expected) => {
                assert_ne!(sol.status, SolveStatus::Relaxed, "trial {trial}");
                let err = (&sol.theta_bar - &expected).amax();
                assert!(err <= 1e-5, "trial {trial}: {:?} vs {expected:?}", sol.theta_bar);
                assert!(inst.qd.evaluate(&sol.theta_bar) <= inst.d0 + 1e-8);
            }
            None => {
                assert_eq!(sol.status, SolveStatus::Relaxed, "trial {trial}");
                let expected = inst.bounds.clamp(&(&inst.qd.g / (-2.0 * inst.qd.c)));
                assert!((&sol.theta_bar - &expected).amax() <= 1e-12);
                assert!((sol.alpha - (inst.qd.evaluate(&expected) - inst.d0)).abs() <= 1e-12);
            }
        }
        seen[sol.status as usize] += 1;
    }
    assert!(seen.iter().all(|&n| n > 50), "status mix {seen:?}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn boundary_multiplier_reproduces_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 200 {
        let inst = random_instance(&mut rng);
        let sol = subproblem::solve(&inst.qj, &inst.qd, inst.d0, &inst.bounds, subproblem::DEFAULT_TOL).unwrap();
        if sol.status != SolveStatus::Boundary {
            continue;
        }
        let (theta, slack) = subproblem::dual_value_curve(&inst.qj, &inst.qd, inst.d0, &inst.bounds, sol.lambda).unwrap();
        assert_eq!(theta, sol.theta_bar);
        assert!(slack.abs() <= 1e-9 * inst.d0.abs().max(1.0));
        checked += 1;
    }
}

