use catdisp_core::oracle::{enumerate_offspring_law, TruncationBudget};
use catdisp_core::{
    classify_varying_analytic, DispersalKind, Environment, EnvironmentFamily, EnvironmentProcess, ExtendedReal,
    GeometricSupport, GrowthKind, KernelKind, Outcome, Tolerance,
};
use proptest::prelude::*;

fn growth() -> impl Strategy<Value = GrowthKind> {
    prop_oneof![Just(GrowthKind::Poissonian), Just(GrowthKind::Yule)]
}

fn kernel() -> impl Strategy<Value = KernelKind> {
    prop_oneof![
        Just(KernelKind::Binomial),
        Just(KernelKind::Geometric { convention: GeometricSupport::FromOne }),
        Just(KernelKind::Geometric { convention: GeometricSupport::FromZero }),
        Just(KernelKind::Uniform),
    ]
}

fn environment(d_max: u32) -> impl Strategy<Value = Environment> {
    (growth(), kernel(), 1.1f64..10.0, 0.05f64..0.95, 1u32..=d_max)
        .prop_map(|(g, k, ratio, p, d)| Environment::new(ratio, 1.0, p, d, g, k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dispersal_rows_normalize_within_support(r in 0u64..=60, d in 1u32..=12, which in 0usize..4) {
        let mech = DispersalKind::ALL[which].with_sites(d).unwrap();
        let row: Vec<f64> = (0..=r).map(|k| mech.pmf(r, k)).collect();
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|&w| w >= 0.0));
        if which > 0 {
            let cap = u64::from(d).min(r);
            prop_assert!(row.iter().enumerate().all(|(k, &w)| k as u64 <= cap || w == 0.0));
        }
        if which == 3 && r >= 1 {
            prop_assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn conditional_means_follow_the_chain(r in 0u64..=100, d in 1u32..=12) {
        let (rf, df) = (r as f64, d as f64);
        let composition = if r == 0 { 0.0 } else { df * rf / (rf + df - 1.0) };
        let site_choice = df * (1.0 - (1.0 - 1.0 / df).powf(rf));
        let capped = df.min(rf);
        let slack = 1e-12 * (1.0 + rf);
        prop_assert!(composition <= site_choice + slack);
        prop_assert!(site_choice <= capped + slack);
        prop_assert!(capped <= rf);
        let means: Vec<f64> =
            DispersalKind::ALL.iter().map(|m| m.with_sites(d).unwrap().conditional_mean(r)).collect();
        for (got, want) in means.iter().zip([rf, capped, site_choice, composition]) {
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "{got} vs {want}");
        }
    }

    #[test]
    fn single_site_rows_coincide(r in 0u64..=60) {
        let rows: Vec<Vec<f64>> = [DispersalKind::Capped, DispersalKind::SiteChoice, DispersalKind::Composition]
            .iter()
            .map(|m| (0..=r.min(1)).map(|k| m.with_sites(1).unwrap().pmf(r, k)).collect())
            .collect();
        prop_assert_eq!(&rows[0], &rows[1]);
        prop_assert_eq!(&rows[0], &rows[2]);
    }

    #[test]
    fn binomial_survivor_mean_is_wald(g in growth(), ratio in 1.1f64..10.0, p in 0.01f64..=1.0) {
        let env = Environment::new(ratio, 1.0, p, 2, g, KernelKind::Binomial).unwrap();
        let colony = env.colony_law().unwrap().mean().to_f64();
        let survivors = env.survivor_law(&Tolerance::default()).unwrap().mean().unwrap().to_f64();
        prop_assert!((survivors - p * colony).abs() <= 1e-10 * colony);
    }

    #[test]
    fn offspring_means_are_ordered(env in environment(10)) {
        let mu: Vec<ExtendedReal> = DispersalKind::ALL
            .iter()
            .map(|&m| env.offspring_mean(m, &Tolerance::default()).unwrap().value)
            .collect();
        for w in mu.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{:?}", mu);
        }
    }

    #[test]
    fn verdicts_respect_mechanism_ordering(g in growth(), k in kernel(), ratio in 1.1f64..6.0, p in 0.05f64..0.95, d in 1u32..=8) {
        let family = EnvironmentFamily::Constant { theta: ratio, lambda: 1.0, p, d };
        let process = EnvironmentProcess::new(g, k, family).unwrap();
        let tol = Tolerance::default();
        let weakest = classify_varying_analytic(&process, DispersalKind::Composition, &tol).unwrap();
        if weakest.outcome == Outcome::SurvivalPositive {
            for mech in [DispersalKind::Full, DispersalKind::Capped, DispersalKind::SiteChoice] {
                let v = classify_varying_analytic(&process, mech, &tol).unwrap();
                prop_assert_ne!(v.outcome, Outcome::ExtinctionAS);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_laws_are_subprobability_pmfs(env in environment(6), which in 0usize..4) {
        let budget = TruncationBudget::default_for(&env.colony_law().unwrap());
        let law = enumerate_offspring_law(&env, DispersalKind::ALL[which], &budget).unwrap();
        let mass: f64 = law.pmf.iter().sum();
        prop_assert!(law.pmf.iter().all(|&w| w >= 0.0));
        prop_assert!(mass <= 1.0 + 1e-12);
        prop_assert!(mass >= 1.0 - budget.tail_bound - 1e-12);
    }

    #[test]
    fn deterministic_environments_are_pure(n in 0u64..10_000, c in 0.0f64..5.0) {
        let family = EnvironmentFamily::DecreasingCatastrophe {
            lambda: 1.0,
            epsilon: 0.5,
            a_seq: catdisp_core::DecaySequence::Harmonic { c },
            p: 0.7,
            d: 3,
        };
        let a = EnvironmentProcess::new(GrowthKind::Poissonian, KernelKind::Binomial, family.clone()).unwrap();
        let b = EnvironmentProcess::new(GrowthKind::Poissonian, KernelKind::Binomial, family).unwrap();
        prop_assert_eq!(a.deterministic_at(n).unwrap(), b.deterministic_at(n).unwrap());
        prop_assert_eq!(a.deterministic_at(n).unwrap(), a.deterministic_at(n).unwrap());
    }
}
