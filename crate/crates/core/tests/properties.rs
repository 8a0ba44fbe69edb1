use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vctail::estimator::{fit_at, fit_grid, hill, objective};
use vctail::hypothesis::{critical_values, gumbel_cdf, gumbel_p_value, pointwise_ci, Standardization};
use vctail::simulation::{gen_dataset, sample_response, tail_probability, SimSetting};
use vctail::tuning::threshold_for_fraction;
use vctail::{rescale_t_to_unit_cube, Dataset, ExecMode, FitConfig, KernelSpec};

fn scaled(data: &Dataset, c: f64) -> Dataset {
    let n = data.n();
    let x: Vec<f64> = (0..n).flat_map(|i| data.x_row(i).to_vec()).collect();
    let t: Vec<f64> = (0..n).flat_map(|i| data.t_row(i).to_vec()).collect();
    let y = data.responses().iter().map(|v| v * c).collect();
    Dataset::from_columns(y, x, t, data.p(), data.q()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tail_function_inverts_sampler(gamma in 0.05f64..3.0, delta in 0.0f64..2.0, u in 1e-6f64..1.0) {
        let y = sample_response(gamma, delta, u);
        prop_assert!(y >= 1.0);
        prop_assert!((tail_probability(gamma, delta, y) - u).abs() < 1e-10);
    }

    #[test]
    fn hill_is_scale_equivariant(seed in 0u64..1000, c in 0.1f64..50.0) {
        let setting = SimSetting::new(1, 200, 0.0).unwrap();
        let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = threshold_for_fraction(data.responses(), 0.2).unwrap();
        let a = hill(data.responses(), w).unwrap();
        let ys: Vec<f64> = data.responses().iter().map(|v| v * c).collect();
        let b = hill(&ys, w * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn local_fit_invariant_to_response_scale(seed in 0u64..500, c in 0.2f64..20.0, t0 in 0.1f64..0.9) {
        let setting = SimSetting::new(1, 300, 0.1).unwrap();
        let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = threshold_for_fraction(data.responses(), 0.3).unwrap();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.4], w, false).unwrap();
        let cfg_c = cfg.with_threshold(w * c).unwrap();
        let a = fit_at(&data, &[t0], &cfg, None).unwrap();
        let b = fit_at(&scaled(&data, c), &[t0], &cfg_c, None).unwrap();
        for (x, y) in a.theta.iter().zip(&b.theta) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn fitted_point_minimises_objective(seed in 0u64..500, t0 in 0.0f64..1.0, dir in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let setting = SimSetting::new(1, 300, 0.1).unwrap();
        let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = threshold_for_fraction(data.responses(), 0.3).unwrap();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.4], w, false).unwrap();
        let fit = fit_at(&data, &[t0], &cfg, None).unwrap();
        let best = objective(&data, &fit.theta, &[t0], &cfg).unwrap();
        let moved: Vec<f64> = fit.theta.iter().zip(&dir).map(|(a, d)| a + 0.05 * d).collect();
        prop_assert!(objective(&data, &moved, &[t0], &cfg).unwrap() >= best - 1e-9);
    }

    #[test]
    fn rescaling_round_trips(values in proptest::collection::vec(-100.0f64..100.0, 3..40)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let n = values.len();
        let data = Dataset::from_columns(vec![2.0; n], vec![], values.clone(), 0, 1).unwrap();
        let (out, maps) = rescale_t_to_unit_cube(&data).unwrap();
        for (i, v) in values.iter().enumerate() {
            let s = out.t_row(i)[0];
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((maps[0].inverse(s) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn p_value_is_two_sided_tail(stat in -5.0f64..20.0) {
        let p = gumbel_p_value(stat);
        prop_assert!((0.0..=0.5).contains(&p));
        let g = gumbel_cdf(stat);
        prop_assert!((p - g.min(1.0 - g)).abs() < 1e-12);
    }

    #[test]
    fn critical_values_nest(a in 0.01f64..0.5, b in 0.01f64..0.5) {
        prop_assume!(a < b);
        let (la, ha) = critical_values(a).unwrap();
        let (lb, hb) = critical_values(b).unwrap();
        prop_assert!(la < lb && hb < ha);
    }

    #[test]
    fn threshold_decreases_with_fraction(seed in 0u64..1000) {
        let setting = SimSetting::new(1, 250, 0.1).unwrap();
        let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(seed));
        let ws: Vec<f64> = [0.05, 0.1, 0.2, 0.3].iter().map(|f| threshold_for_fraction(data.responses(), *f).unwrap()).collect();
        prop_assert!(ws.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn grid_fit_is_mode_independent() {
    let setting = SimSetting::new(3, 800, 0.1).unwrap();
    let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(17));
    let w = threshold_for_fraction(data.responses(), 0.2).unwrap();
    let cfg = FitConfig::new(KernelSpec::spherical(2), vec![0.3, 0.3], w, true).unwrap();
    let a = fit_grid(&data, 7, &cfg, ExecMode::Serial).unwrap();
    let b = fit_grid(&data, 7, &cfg, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pointwise_intervals_cover_at_nominal_level() {
    let setting = SimSetting::new(1, 2000, 0.0).unwrap();
    let truth = [1.0, 1.0f64.cos(), 0.0];
    let reps = 60;
    let mut covered = [0usize; 3];
    for m in 0..reps {
        let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(1000 + m));
        let w = threshold_for_fraction(data.responses(), 0.2).unwrap();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.15], w, false).unwrap();
        let fit = fit_grid(&data, 3, &cfg, ExecMode::Serial).unwrap();
        for (k, hits) in covered.iter_mut().enumerate() {
            let ci = pointwise_ci(&data, &fit, k, 0.95, Standardization::InverseInformation).unwrap();
            let (lo, hi) = ci[1].unwrap();
            if lo <= truth[k] && truth[k] <= hi {
                *hits += 1;
            }
        }
    }
    for (k, hits) in covered.iter().enumerate() {
        let rate = *hits as f64 / reps as f64;
        println!("coverage theta{} at t=0.5: {rate:.3}", k + 1);
        assert!(rate >= 0.80, "coverage {rate} for coefficient {k}");
    }
}
