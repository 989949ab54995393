mod common;

use common::*;
use nalgebra::DMatrix;
use perception_sched::linsys::{chain_matrix, discretize, discretize_over};
use proptest::prelude::*;

#[test]
fn double_integrator_matches_closed_form() {
    let model = double_integrator();
    for &t in &[0.01, 0.1, 1.0] {
        let dm = discretize_over(&model, &mat(1, 2, &[-1.5, -3.0]), t).unwrap();
        let ad = mat(2, 2, &[1.0, t, 0.0, 1.0]);
        let bd = mat(2, 1, &[t * t / 2.0, t]);
        // ∫ [s; 1][s, 1] ds with W0 = I plus the identity contribution
        let wd = mat(2, 2, &[t + t.powi(3) / 3.0, t * t / 2.0, t * t / 2.0, t]);
        assert!(rel_err(&dm.ad, &ad) < 1e-14);
        assert!(rel_err(&dm.bd, &bd) < 1e-13);
        assert!(rel_err(&dm.wd, &wd) < 1e-12, "{}", dm.wd);
    }
}

#[test]
fn robot_modes_discretize_consistently() {
    let model = particle_robot(ROBOT_MU);
    for mode in robot_modes(1.0, 1.5) {
        let dm = discretize(&model, &mode).unwrap();
        let (ad, bd, wd) = discretize_oracle(&model, mode.delta(), 400);
        assert!(rel_err(&dm.ad, &ad) < 1e-12);
        assert!(rel_err(&dm.bd, &bd) < 1e-9);
        assert!(rel_err(&dm.wd, &wd) < 1e-9);
    }
}

#[test]
fn chain_of_one_mode_is_its_power() {
    let model = double_integrator();
    let dm = discretize(&model, &di_modes()[1]).unwrap();
    let chain = chain_matrix([&dm, &dm, &dm]).unwrap();
    let direct = discretize_over(&model, &mat(1, 2, &[-1.5, -3.0]), 0.1).unwrap().closed_loop.pow(3);
    assert!(rel_err(&chain, &direct) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_fine_quadrature(seed in any::<u64>(), n in 1usize..=4, tau in 0.01f64..0.8) {
        let mut rng = seeded(seed);
        let model = random_system(&mut rng, n);
        let gain = DMatrix::zeros(model.n_u(), n);
        let dm = discretize_over(&model, &gain, tau).unwrap();
        let (ad, bd, wd) = discretize_oracle(&model, tau, 2000);
        prop_assert!(rel_err(&dm.ad, &ad) < 1e-8);
        prop_assert!(rel_err(&dm.bd, &bd) < 1e-8);
        prop_assert!(rel_err(&dm.wd, &wd) < 1e-8);
    }

    #[test]
    fn semigroup_and_gramian_additivity(seed in any::<u64>(), n in 1usize..=4, s in 0.0f64..0.7, t in 0.0f64..0.7) {
        let mut rng = seeded(seed);
        let model = random_system(&mut rng, n);
        let gain = DMatrix::from_fn(model.n_u(), n, |i, j| ((i + 2 * j) as f64).sin());
        let a = discretize_over(&model, &gain, s).unwrap();
        let b = discretize_over(&model, &gain, t).unwrap();
        let ab = discretize_over(&model, &gain, s + t).unwrap();
        prop_assert!(rel_err(&(&b.ad * &a.ad), &ab.ad) < 1e-9);
        prop_assert!(rel_err(&(&b.ad * &a.bd + &b.bd), &ab.bd) < 1e-9);
        prop_assert!(rel_err(&(&b.ad * &a.wd * b.ad.transpose() + &b.wd), &ab.wd) < 1e-9);
    }
}
