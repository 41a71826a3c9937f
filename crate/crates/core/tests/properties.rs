use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phibp::dataset::{build_panels, ingest_csv, write_records, PanelSpec};
use phibp::diagnostics::{ess, split_rhat};
use phibp::diversity::{bray_curtis, draw_diversity, shannon_alpha};
use phibp::generative::{simulate_compound, Hyperparams};
use phibp::levy::{Family, LevyParams, MtpDistribution};
use phibp::mcmc::LatentState;

fn chains_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 100usize..300).prop_flat_map(|(m, n)| prop::collection::vec(prop::collection::vec(-50.0..50.0f64, n), m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rhat_is_affine_invariant(chains in chains_strategy(), a in 0.01..100.0f64, b in -1e3..1e3f64, flip in any::<bool>()) {
        let s = if flip { -a } else { a };
        let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| s * x + b).collect()).collect();
        let r0 = split_rhat(&chains).unwrap().value;
        let r1 = split_rhat(&moved).unwrap().value;
        prop_assert!((r0 - r1).abs() < 1e-9 * r0, "{} vs {}", r0, r1);
        let e0 = ess(&chains).unwrap();
        let e1 = ess(&moved).unwrap();
        prop_assert!((e0 - e1).abs() < 1e-6 * e0, "{} vs {}", e0, e1);
    }

    #[test]
    fn rhat_is_chain_permutation_invariant(chains in chains_strategy(), seed in any::<u64>()) {
        let mut shuffled = chains.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r0 = split_rhat(&chains).unwrap().value;
        let r1 = split_rhat(&shuffled).unwrap().value;
        prop_assert!((r0 - r1).abs() < 1e-9 * r0);
        prop_assert!((ess(&chains).unwrap() - ess(&shuffled).unwrap()).abs() < 1e-6 * ess(&chains).unwrap());
        prop_assert!(r0 >= 0.99, "{}", r0);
    }

    #[test]
    fn shannon_bounds_and_scale_invariance(rates in prop::collection::vec(1e-6..1e3f64, 1..40), c in 1e-6..1e6f64) {
        let h = shannon_alpha(&rates).unwrap();
        prop_assert!(h >= 0.0 && h <= (rates.len() as f64).ln() + 1e-12);
        let scaled: Vec<f64> = rates.iter().map(|r| r * c).collect();
        prop_assert!((shannon_alpha(&scaled).unwrap() - h).abs() < 1e-9);
    }

    #[test]
    fn bray_curtis_bounds_symmetry_and_common_scaling(
        pair in (1usize..30).prop_flat_map(|n| (prop::collection::vec(0.0..100.0f64, n), prop::collection::vec(1e-3..100.0f64, n))),
        c in 1e-4..1e4f64,
    ) {
        let (a, b) = pair;
        let d = bray_curtis(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, bray_curtis(&b, &a).unwrap());
        prop_assert_eq!(bray_curtis(&a, &a).unwrap(), 0.0);
        let (ca, cb): (Vec<f64>, Vec<f64>) = a.iter().zip(&b).map(|(x, y)| (c * x, c * y)).unzip();
        prop_assert!((bray_curtis(&ca, &cb).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn per_draw_diversity_invariants(ln_rates in (1usize..6, 1usize..25).prop_flat_map(|(j, l)| prop::collection::vec(prop::collection::vec(-800.0..10.0f64, l), j))) {
        let phi = ln_rates[0].len() as f64;
        let d = draw_diversity(&ln_rates);
        for (j, &h) in d.alpha.iter().enumerate() {
            prop_assert!(h >= 0.0 && h <= phi.ln(), "region {}: {}", j, h);
            prop_assert_eq!(d.beta[j][j], 0.0);
            for v in 0..ln_rates.len() {
                prop_assert_eq!(d.beta[j][v], d.beta[v][j]);
                prop_assert!((0.0..=1.0).contains(&d.beta[j][v]));
            }
        }
    }

    #[test]
    fn psi_is_continuous_at_alpha_zero(theta in 0.01..50.0f64, gamma in 0.0..100.0f64) {
        let gg = LevyParams::new(theta, 1e-8, Family::GG).unwrap();
        let ga = LevyParams::gamma(theta).unwrap();
        prop_assert!((gg.psi(gamma) - ga.psi(gamma)).abs() < 1e-6 * theta.max(1.0));
    }

    #[test]
    fn mtp_tables_are_normalized(theta in 0.05..20.0f64, alpha in 0.0..0.99f64, gamma in 1e-3..500.0f64) {
        let d = MtpDistribution::new(LevyParams::new(theta, alpha, Family::GG).unwrap(), gamma).unwrap();
        prop_assert!((d.tabulated_mass() - 1.0).abs() < 1e-8, "mass {}", d.tabulated_mass());
        prop_assert!(d.tail_bound() < 1e-10);
        prop_assert!(d.ln_pmf(1_000_000).is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulated_panels_respect_disaggregation(seed in any::<u64>(), j in 1usize..4, alpha in 0.0..0.8f64) {
        let h = Hyperparams::symmetric(
            LevyParams::new(5.0, alpha, Family::GG).unwrap(),
            LevyParams::new(1.0, alpha, Family::GG).unwrap(),
            j,
            vec![0.7, 1.0, 1.3],
        ).unwrap();
        let sim = simulate_compound(&h, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let latents = sim.latents.as_ref().unwrap();
        for l in 0..sim.n_species() {
            let total: u64 = (0..j).map(|r| sim.aggregated(r, l)).sum();
            prop_assert!(total >= 1);
            for r in 0..j {
                prop_assert_eq!(sim.aggregated(r, l), latents[l].clusters[r].iter().sum::<u64>());
                prop_assert_eq!(latents[l].clusters[r].len() as u64, latents[l].x[r]);
            }
        }
        if sim.n_species() > 0 {
            let panel = sim.to_count_panel().unwrap();
            prop_assert!(LatentState::from_latents(&panel, h, latents).is_ok());
        }
    }

    #[test]
    fn cache_stays_coherent_under_parameter_moves(moves in prop::collection::vec((0usize..4, 0.05..20.0f64, 0.0..0.95f64), 1..30)) {
        let h = Hyperparams::symmetric(
            LevyParams::generalized_gamma(6.0, 0.3).unwrap(),
            LevyParams::generalized_gamma(1.0, 0.3).unwrap(),
            3,
            vec![1.0; 5],
        ).unwrap();
        let sim = simulate_compound(&h, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let panel = sim.to_count_panel().unwrap();
        let mut state = LatentState::from_latents(&panel, h, sim.latents.as_ref().unwrap()).unwrap();
        for (level, theta, alpha) in moves {
            let p = LevyParams::generalized_gamma(theta, alpha).unwrap();
            if level == 0 { state.set_base(p) } else { state.set_region(level - 1, p) }
            prop_assert!(state.cache().max_rel_error(&state.hyper.regions) < 1e-12);
        }
    }

    #[test]
    fn ingestion_is_row_order_independent(seed in any::<u64>()) {
        let h = Hyperparams::symmetric(LevyParams::gamma(6.0).unwrap(), LevyParams::gamma(1.0).unwrap(), 3, vec![1.0; 23]).unwrap();
        let sim = simulate_compound(&h, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let mut records = sim.to_records(2001);
        write_records(&a, &records).unwrap();
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        write_records(&b, &records).unwrap();
        let spec = PanelSpec { rare_threshold: None, ..PanelSpec::default() };
        let pa = build_panels(&ingest_csv(&a, &spec).unwrap().records, &spec).unwrap();
        let pb = build_panels(&ingest_csv(&b, &spec).unwrap().records, &spec).unwrap();
        prop_assert_eq!(pa.train.content_hash().unwrap(), pb.train.content_hash().unwrap());
        prop_assert_eq!(pa.test.content_hash().unwrap(), pb.test.content_hash().unwrap());
    }
}
