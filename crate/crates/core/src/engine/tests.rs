use super::*;
use crate::random;
use proptest::prelude::*;

fn design(n: usize, m: usize) -> Arc<StructuredDesign> {
    Arc::new(StructuredDesign::new(n, m).unwrap())
}

fn config(n: usize, m: usize, penalty: Penalty, steps: usize, seed: u64) -> NokConfig {
    let d = design(n, m);
    let mut rng = random::seeded(seed);
    let r = RotationState::random(&mut rng, d.dim());
    NokConfig::shared(d, r, penalty, steps).unwrap()
}

fn unit_input(dim: usize, seed: u64) -> Vector {
    random::sphere_point(&mut random::seeded(seed), dim, 1.0)
}

fn table_penalties() -> Vec<Penalty> {
    vec![
        Penalty::l0(0.5).unwrap(),
        Penalty::l1(0.5).unwrap(),
        Penalty::mcp(0.5, 2.5).unwrap(),
        Penalty::capped_l1(0.5, 1.0).unwrap(),
        Penalty::scad(0.5, 3.7).unwrap(),
        Penalty::mcp0(0.5).unwrap(),
        Penalty::relu(),
    ]
}

#[test]
fn objective_trivial_values() {
    let cfg = config(13, 4, Penalty::l1(0.3).unwrap(), 5, 1);
    let x = unit_input(8, 2) * 3.0;
    let zero = Vector::zeros(26);
    assert!((cfg.objective(&x, &zero).unwrap() - 0.5 * x.norm_squared()).abs() < 1e-14);
    assert_eq!(cfg.objective(&Vector::zeros(8), &zero).unwrap(), 0.0);
    assert!(cfg.objective(&Vector::zeros(7), &zero).is_err());
    assert!(cfg.objective(&x, &Vector::zeros(25)).is_err());
}

#[test]
fn objective_matches_dense_recomputation() {
    let cfg = config(29, 4, Penalty::scad(0.4, 3.0).unwrap(), 5, 3);
    let mut rng = random::seeded(4);
    let w = cfg.design().sampling_matrix(cfg.rotations.at(0)).unwrap();
    for _ in 0..10 {
        let x = random::gaussian_vector(&mut rng, 8);
        let y = random::gaussian_vector(&mut rng, 58);
        let n = 58.0;
        let resid = &x - &w * &y / n;
        let phi: f64 = y.iter().map(|v| cfg.penalty().value(*v).unwrap()).sum();
        let expect = 0.5 * resid.norm_squared() + phi / n;
        assert!((cfg.objective(&x, &y).unwrap() - expect).abs() < 1e-12 * (1.0 + expect));
    }
}

#[test]
fn first_step_from_zero_is_prox_of_drive() {
    let cfg = config(13, 4, Penalty::l1(0.2).unwrap(), 1, 5);
    let x = unit_input(8, 6);
    let w = cfg.design().sampling_matrix(cfg.rotations.at(0)).unwrap();
    let expect = (w.transpose() * &x).map(|v| cfg.penalty().prox(v).unwrap());
    let y1 = cfg.step(&x, &Vector::zeros(26)).unwrap();
    assert!((&y1 - &expect).norm() < 1e-13);
    let traj = cfg.forward(&x).unwrap();
    assert_eq!(traj.len(), 2);
    assert!((traj.last() - &expect).norm() < 1e-13);
}

#[test]
fn fixed_point_is_preserved() {
    let cfg = config(13, 4, Penalty::l1(0.1).unwrap(), 1, 7);
    let x = unit_input(8, 8);
    let y_star = fixed_point_oracle(&cfg, &x, 100_000, 1e-14).unwrap();
    let again = cfg.step(&x, &y_star).unwrap();
    assert!((&again - &y_star).norm() < 1e-12);
    // exact fixed point of the zero input
    let z = Vector::zeros(26);
    assert_eq!(cfg.step(&Vector::zeros(8), &z).unwrap(), z);
}

#[test]
fn zero_input_stays_at_zero() {
    for p in table_penalties() {
        let cfg = config(13, 4, p, 10, 9);
        let traj = cfg.forward(&Vector::zeros(8)).unwrap();
        assert!(traj.iterates.iter().all(|y| y.iter().all(|v| *v == 0.0)));
        let report = verify_monotonic(&cfg, &traj).unwrap();
        assert_eq!(report.max_violation, 0.0);
        assert!(report.passed);
    }
}

#[test]
fn l1_objective_strictly_decreases_until_fixed_point() {
    let cfg = config(13, 4, Penalty::l1(0.1).unwrap(), 50, 10);
    let x = unit_input(8, 11);
    let traj = cfg.forward(&x).unwrap();
    let q = &traj.objectives;
    let mut settled = false;
    for t in 0..q.len() - 1 {
        let moved = (&traj.iterates[t + 1] - &traj.iterates[t]).norm();
        if moved < 1e-9 {
            settled = true;
        }
        if !settled {
            assert!(q[t + 1] < q[t], "step {t}: {} -> {}", q[t], q[t + 1]);
        } else {
            assert!(q[t + 1] <= q[t] + 1e-12);
        }
    }
}

#[test]
fn monotonic_certificate_for_every_family() {
    for p in table_penalties() {
        for seed in 0..20 {
            let cfg = config(13, 4, p, 30, seed);
            let x = unit_input(8, 1000 + seed) * 2.0;
            let traj = cfg.forward(&x).unwrap();
            let report = verify_monotonic(&cfg, &traj).unwrap();
            assert!(report.passed, "{:?} seed {seed}: {report:?}", p.family());
            assert!(report.max_identity_gap < 1e-12);
        }
    }
}

#[test]
fn step_gap_matches_report_identity() {
    let cfg = config(29, 4, Penalty::mcp(0.3, 2.0).unwrap(), 10, 12);
    let traj = cfg.forward(&unit_input(8, 13)).unwrap();
    for (t, gap) in traj.step_gaps.iter().enumerate() {
        let drop = traj.objectives[t] - traj.objectives[t + 1];
        assert!(drop + 1e-12 >= *gap);
    }
}

#[test]
fn verifier_rejects_foreign_trajectories() {
    let cfg = config(13, 4, Penalty::l1(0.1).unwrap(), 10, 14);
    let other = cfg.with_penalty(Penalty::l1(0.3).unwrap()).unwrap();
    let traj = cfg.forward(&unit_input(8, 15)).unwrap();
    assert!(matches!(verify_monotonic(&other, &traj), Err(Error::InvalidInput(_))));
}

#[test]
fn per_layer_rotations_run_but_do_not_certify() {
    let d = design(13, 4);
    let mut rng = random::seeded(16);
    let rs: Vec<RotationState> = (0..4).map(|_| RotationState::random(&mut rng, 8)).collect();
    let cfg = NokConfig::new(d.clone(), Rotations::PerLayer(rs), Penalty::relu(), 4, 1.0).unwrap();
    let traj = cfg.forward(&unit_input(8, 17)).unwrap();
    assert_eq!(traj.len(), 5);
    assert!(matches!(verify_monotonic(&cfg, &traj), Err(Error::Unsupported(_))));
    assert!(NokConfig::new(d, Rotations::PerLayer(vec![]), Penalty::relu(), 4, 1.0).is_err());
}

#[test]
fn config_validation() {
    let d = design(13, 4);
    assert!(NokConfig::shared(d.clone(), RotationState::identity(8), Penalty::relu(), 0).is_err());
    assert!(NokConfig::shared(d.clone(), RotationState::identity(6), Penalty::relu(), 1).is_err());
    assert!(NokConfig::new(d.clone(), Rotations::Shared(RotationState::identity(8)), Penalty::relu(), 1, 0.0).is_err());
    assert!(NokConfig::shared(d, RotationState::identity(8), Penalty::top_k(27).unwrap(), 1).is_err());
}

#[test]
fn convex_rate_against_long_run_oracle() {
    for p in [Penalty::l1(0.1).unwrap(), Penalty::relu()] {
        for seed in 0..10 {
            let cfg = config(13, 4, p, 20, 100 + seed);
            let x = unit_input(8, 200 + seed);
            let y_star = fixed_point_oracle(&cfg, &x, 100_000, 1e-14).unwrap();
            let traj = cfg.forward(&x).unwrap();
            let report = verify_convex_rate(&cfg, &traj, &y_star).unwrap();
            assert!(report.passed, "{:?} seed {seed}: {report:?}", p.family());
        }
    }
}

#[test]
fn published_rate_form_fails_from_zero_start() {
    let cfg = config(13, 4, Penalty::l1(0.1).unwrap(), 20, 100);
    let x = unit_input(8, 200);
    let y_star = fixed_point_oracle(&cfg, &x, 100_000, 1e-14).unwrap();
    let traj = cfg.forward(&x).unwrap();
    let exact = verify_convex_rate_with(&cfg, &traj, &y_star, RateForm::Exact, &Tolerances::default()).unwrap();
    let published = verify_convex_rate_with(&cfg, &traj, &y_star, RateForm::Published, &Tolerances::default()).unwrap();
    assert!(exact.passed);
    assert!(!published.passed);
    assert!(published.violations[0] > 0.1);
}

#[test]
fn convex_rate_from_the_optimum() {
    let cfg = config(13, 4, Penalty::l1(0.1).unwrap(), 5, 20);
    let x = unit_input(8, 21);
    let y_star = fixed_point_oracle(&cfg, &x, 100_000, 1e-14).unwrap();
    let traj = cfg.forward_from(&x, y_star.clone()).unwrap();
    let q_star = cfg.objective(&x, &y_star).unwrap();
    assert!(traj.objectives[5] - q_star <= 1e-12);
    assert!(verify_convex_rate(&cfg, &traj, &y_star).unwrap().passed);
}

#[test]
fn convex_rate_refuses_nonconvex_penalties() {
    let cfg = config(13, 4, Penalty::mcp(0.5, 2.0).unwrap(), 5, 22);
    let x = unit_input(8, 23);
    let traj = cfg.forward(&x).unwrap();
    let err = verify_convex_rate(&cfg, &traj, &Vector::zeros(26)).unwrap_err();
    assert!(matches!(err, Error::Unsupported(ref s) if s.contains("rate check requires convex penalty")));
}

#[test]
fn ksparse_threshold_and_constant() {
    assert!((ksparse_strict_threshold(13, 4) - 1.748_075_441_506_765_6).abs() < 1e-12);
    let expect = (13.0 - libm::sqrt(13.0) - 4.0) / 26.0;
    assert!((ksparse_constant(13, 4, 1) - expect).abs() < 1e-15);
}

#[test]
fn ksparse_strict_descent_k1() {
    let d = design(13, 4);
    for seed in 0..20 {
        let r = RotationState::random(&mut random::seeded(seed), 8);
        let x = unit_input(8, 300 + seed);
        let (traj, report) = ksparse_run_and_verify(d.clone(), r, &x, 1, 30).unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
        assert!(traj.iterates.iter().all(|y| y.iter().filter(|v| **v != 0.0).count() <= 1));
    }
}

#[test]
fn ksparse_zero_input_and_dense_limit() {
    let d = design(13, 4);
    let (traj, report) = ksparse_run_and_verify(d.clone(), RotationState::identity(8), &Vector::zeros(8), 1, 10).unwrap();
    assert!(traj.iterates.iter().all(|y| y.iter().all(|v| *v == 0.0)));
    assert_eq!(report.max_violation, 0.0);
    assert!(ksparse_constant(13, 4, 26) < 0.0);
    let x = unit_input(8, 31);
    let (_, report) = ksparse_run_and_verify(d.clone(), RotationState::identity(8), &x, 26, 10).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(ksparse_run_and_verify(d, RotationState::identity(8), &x, 0, 10).is_err());
}

/// Global minimum of `Q` under L0 by enumerating supports and solving least squares on each.
fn l0_global_minimum(cfg: &NokConfig, x: &Vector) -> f64 {
    let w = cfg.design().sampling_matrix(cfg.rotations.at(0)).unwrap();
    let n = w.ncols();
    let nf = n as f64;
    let lam = cfg.penalty().lambda();
    let mut best = 0.5 * x.norm_squared();
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub = Matrix::from_fn(w.nrows(), support.len(), |i, j| w[(i, support[j])] / nf);
        let svd = sub.clone().svd(true, true);
        let coef = svd.solve(x, 1e-12).unwrap();
        let resid = x - &sub * &coef;
        let q = 0.5 * resid.norm_squared() + lam * support.len() as f64 / nf;
        best = best.min(q);
    }
    best
}

#[test]
fn l0_trajectories_never_undercut_the_global_minimum() {
    for &m in &[1usize, 2] {
        for seed in 0..10 {
            let cfg = config(3, m, Penalty::l0(0.05).unwrap(), 20, 400 + seed);
            let x = random::gaussian_vector(&mut random::seeded(500 + seed), 2 * m);
            let floor = l0_global_minimum(&cfg, &x);
            let traj = cfg.forward(&x).unwrap();
            for q in &traj.objectives {
                assert!(*q >= floor - 1e-12, "m={m} seed={seed}: {q} < {floor}");
            }
        }
    }
}

proptest! {
    #[test]
    fn residual_operator_is_a_contraction(seed in 0u64..10_000, pick in 0usize..4) {
        let (n, m) = [(5, 2), (13, 4), (13, 6), (29, 4)][pick];
        let cfg = config(n, m, Penalty::relu(), 1, seed);
        let v = random::gaussian_vector(&mut random::seeded(seed ^ 0xabc), 2 * n);
        let out = cfg.residual_operator(0, &v).unwrap();
        prop_assert!(out.norm() <= v.norm() * (1.0 + 1e-12));
    }
}
