mod oracle;

use std::sync::OnceLock;

use gridlife::dataset::{
    compute_capacity, cyclic_rate, generate_synthetic_fleet, split_dataset, AgingMode, SyntheticConfig,
};
use gridlife::dispatch::{constraint_violation, penalty_cost, solve_dispatch, DispatchProblem, ThetaVector};
use gridlife::gbt::{GbtParams, QuantileEnsemble, TrainingSet};
use gridlife::lifecycle::{capacity_update, chain_coefficient, worst_case_capacity, ConstantRates};
use gridlife::tuner::{pso_optimize, PsoConfig};
use oracle::Instance;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

fn model() -> &'static QuantileEnsemble<f64> {
    static MODEL: OnceLock<QuantileEnsemble<f64>> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = SyntheticConfig { n_samples: 600, cyclic_fraction: 1.0, ..SyntheticConfig::default() };
        let samples = generate_synthetic_fleet(&cfg, 5).unwrap();
        let split = split_dataset(&samples, [0.6, 0.2, 0.2], 5).unwrap();
        let params = GbtParams { n_rounds: 40, ..GbtParams::default() };
        QuantileEnsemble::train(
            AgingMode::Cyclic,
            &TrainingSet::from_samples(&split.train, AgingMode::Cyclic),
            &TrainingSet::from_samples(&split.validation, AgingMode::Cyclic),
            &[0.1, 0.3, 0.5, 0.7, 0.9],
            &params,
            5,
        )
        .unwrap()
    })
}

fn with_capacity(p: &DispatchProblem<f64>, c: f64) -> DispatchProblem<f64> {
    let mut out = p.clone();
    out.battery = out.battery.with_capacity(c);
    out
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn capacity_is_symmetric_and_between_inputs(a in 0.01f64..2000.0, b in 0.01f64..2000.0) {
        let c = compute_capacity(a, b).unwrap();
        prop_assert_eq!(c, compute_capacity(b, a).unwrap());
        prop_assert!(c >= a.min(b) * (1.0 - 1e-12) && c <= a.max(b) * (1.0 + 1e-12));
    }

    #[test]
    fn cyclic_rate_is_linear_in_the_loss(c in 100.0f64..1000.0, loss in 0.0f64..50.0, dod in 0.05f64..1.0, n in 1u32..500) {
        let one = cyclic_rate(c, c - loss, dod, n as f64).unwrap();
        let two = cyclic_rate(c, c - 2.0 * loss, dod, n as f64).unwrap();
        prop_assert!((two - 2.0 * one).abs() <= 1e-9 * two.abs().max(1e-12));
    }

    #[test]
    fn split_is_a_partition(n in 1usize..400, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let s = split_dataset(&items, [0.6, 0.2, 0.2], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn predicted_quantiles_are_sorted(
        c in 200.0f64..1500.0, t in -10.0f64..60.0, dod in 0.0f64..1.2, pc in 0.0f64..3000.0, pd in 0.0f64..3000.0,
    ) {
        let q = model().predict_quantiles(&[c, t, dod, pc, pd]).unwrap();
        prop_assert!(q.windows(2).all(|w| w[0] <= w[1]), "{:?}", q);
    }

    #[test]
    fn dispatch_solution_invariants(seed in any::<u64>(), horizon in 1usize..=8) {
        let p = Instance::random(seed, horizon).problem();
        let sol = solve_dispatch(&p).unwrap();
        prop_assert!(constraint_violation(&p, &sol) <= 1e-9);
        let band = sol.band_hi - sol.band_lo;
        let parts = sol.operational_cost + penalty_cost(&p.theta, sol.throughput(p.tau), band, sol.peak_c, sol.peak_d);
        prop_assert!((parts - sol.objective).abs() <= 1e-6 * sol.objective.abs().max(1.0));
        for t in 0..horizon {
            if p.tariff.sell[t] < p.tariff.buy[t] {
                prop_assert!(sol.p_buy[t] * sol.p_sell[t] <= 1e-9, "step {}: buy {} sell {}", t, sol.p_buy[t], sol.p_sell[t]);
            }
        }
    }

    #[test]
    fn throughput_falls_as_its_penalty_rises(seed in any::<u64>(), a in 0.0f64..0.2, b in 0.0f64..0.2) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut p = Instance::random(seed, 6).problem();
        let theta = p.theta;
        p.theta = ThetaVector { theta_efc: lo, ..theta };
        let t_lo = solve_dispatch(&p).unwrap().throughput(p.tau);
        p.theta = ThetaVector { theta_efc: hi, ..theta };
        let t_hi = solve_dispatch(&p).unwrap().throughput(p.tau);
        prop_assert!(t_lo >= t_hi - 1e-6, "{} < {}", t_lo, t_hi);
    }

    #[test]
    fn penalized_cost_is_non_increasing_in_capacity(seed in any::<u64>()) {
        let p = Instance::random(seed, 6).problem();
        let rated = p.battery.rated_capacity;
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let c = rated * k as f64 / 8.0;
            let obj = solve_dispatch(&with_capacity(&p, c)).unwrap().objective;
            prop_assert!(obj <= last + 1e-6, "C={}: {} > {}", c, obj, last);
            last = obj;
        }
    }

    #[test]
    fn bill_is_non_increasing_in_capacity_without_penalties(seed in any::<u64>()) {
        let mut p = Instance::random(seed, 6).problem();
        p.theta = ThetaVector::zero();
        let rated = p.battery.rated_capacity;
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let c = rated * k as f64 / 8.0;
            let g = solve_dispatch(&with_capacity(&p, c)).unwrap().operational_cost;
            prop_assert!(g <= last + 1e-6, "C={}: {} > {}", c, g, last);
            last = g;
        }
    }

    #[test]
    fn chain_coefficient_shape(n0 in 1usize..80, i in 0.0005f64..0.1) {
        let mut last = f64::INFINITY;
        for n in 1..=n0 {
            let k = chain_coefficient(n, n0, i).unwrap();
            prop_assert!(k >= 1.0);
            prop_assert!(k < last);
            prop_assert_eq!(k == 1.0, n == n0);
            last = k;
        }
    }

    #[test]
    fn capacity_never_grows_under_nonnegative_rates(
        c in 100.0f64..1000.0, r_cyc in -0.5f64..1.0, efc in 0.0f64..80.0, r_cal in -0.1f64..0.1,
    ) {
        prop_assert!(capacity_update(c, r_cyc, efc, r_cal, 91.0) <= c);
    }

    #[test]
    fn higher_quantile_gives_lower_worst_case(
        mut cyc in proptest::collection::vec(0.0f64..1.0, 3), mut cal in proptest::collection::vec(0.0f64..0.1, 3),
        c in 100.0f64..1000.0, efc in 0.0f64..80.0,
    ) {
        cyc.sort_by(f64::total_cmp);
        cal.sort_by(f64::total_cmp);
        let m = ConstantRates { quantiles: vec![0.5, 0.9, 0.95], cyclic: cyc, calendar: cal };
        let x = [c, 35.0, 0.5, 100.0, 100.0];
        let h = |q| worst_case_capacity(&m, &x, &x[..2], c, efc, q, 91.0).unwrap();
        prop_assert!(h(0.9) <= h(0.5));
        prop_assert!(h(0.95) <= h(0.9));
    }

    #[test]
    fn pso_log_is_monotone_and_inside_the_box(seed in any::<u64>(), cx in -2.0f64..2.0, cy in -2.0f64..2.0) {
        let cfg = PsoConfig { n_particles: 6, n_iterations: 8, seed, ..PsoConfig::default() };
        let f = |x: &[f64]| (x[0] - cx).powi(2) + (x[1] - cy).abs() + (3.0 * x[0]).sin();
        let res = pso_optimize(f, &[-3.0, -3.0], &[3.0, 3.0], &cfg).unwrap();
        prop_assert_eq!(res.log.len(), 9);
        prop_assert!(res.log.windows(2).all(|w| w[1].best_cost <= w[0].best_cost));
        prop_assert!(res.best_position.iter().all(|v| (-3.0..=3.0).contains(v)));
        prop_assert_eq!(res.best_cost, f(&res.best_position));
    }
}
