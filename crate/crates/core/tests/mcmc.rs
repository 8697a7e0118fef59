use ghbs_core::mcmc::{
    ess, metropolis, mh_active, mh_inactive, reconstruct, thin_indices, ChainConfig, FlatDensity, InactiveConfig,
};
use ghbs_core::prior::{in_unit_box, sample_prior, PriorBox};
use ghbs_core::subspace::ActiveSubspace;
use ghbs_core::surrogate::QuadraticSurface;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cfg(n_steps: usize, scale: f64, seed: u64) -> ChainConfig {
    ChainConfig {
        n_steps,
        burn_in: n_steps / 20,
        proposal_scale: scale,
        proposal_cov: None,
        seed,
    }
}

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            v = phi * v + rng.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

#[test]
fn gaussian_target_moments() {
    // exp(-g) with g = (y - 1)^2 / (2 * 0.25) through the surrogate path
    let s = QuadraticSurface::new(1, vec![2.0, -4.0, 2.0]).unwrap();
    let r = mh_active(&s, &FlatDensity { dim: 1 }, &cfg(300_000, 1.0, 1), &[0.0]).unwrap();
    let x = r.component(0);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    assert!((var - 0.25).abs() < 0.05 * 0.25, "{var}");
    assert!(r.acceptance_rate > 0.0 && r.acceptance_rate < 1.0);
    assert!(r.min_ess <= r.len() as f64);
}

#[test]
fn stationary_distribution_matches_laplace_target() {
    // detailed balance for the symmetric proposal leaves exp(-|y|) invariant
    let r = metropolis(|y| -y[0].abs(), &[0.0], &cfg(400_000, 4.0, 2)).unwrap();
    let x = r.component(0);
    for t in [0.5f64, 1.0, 2.0] {
        let frac = x.iter().filter(|v| v.abs() > t).count() as f64 / x.len() as f64;
        assert!((frac - (-t).exp()).abs() < 0.02, "P(|y| > {t}) = {frac}");
    }
}

#[test]
fn ar1_ess_matches_theory() {
    for (phi, seed) in [(0.5, 1), (0.9, 2), (0.95, 3)] {
        let n = 100_000;
        let expected = (1.0 - phi) / (1.0 + phi) * n as f64;
        let e = ess(&ar1(phi, n, seed), None);
        assert!((e - expected).abs() <= 0.25 * expected, "phi {phi}: {e} vs {expected}");
    }
}

#[test]
fn inactive_samples_reconstruct_inside_the_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = DMatrix::<f64>::from_fn(8, 8, |_, _| rng.sample(StandardNormal)).qr().q();
    for k in [1, 2, 5] {
        let sub = ActiveSubspace::from_basis(&q, k).unwrap();
        let ys: Vec<Vec<f64>> = sample_prior(&mut rng, 20, 8).iter().map(|x| sub.project_active(x)).collect();
        let icfg = InactiveConfig {
            proposal_scale: 5.0,
            ..InactiveConfig::preset_2d(k as u64)
        };
        let mut zs = Vec::new();
        for y in &ys {
            let c = mh_inactive(y, &sub, &icfg, &mut rng).unwrap();
            for z in &c.z {
                assert!(in_unit_box(&sub.reconstruct(y, z)));
            }
            zs.push(c.z);
        }
        let post = reconstruct(&ys, &zs, &sub, &PriorBox::default()).unwrap();
        assert!(post.samples.iter().all(|x| in_unit_box(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn thinning_keeps_the_last_state_and_is_increasing(n in 1usize..5000, m in 1usize..200) {
        let idx = thin_indices(n, m);
        prop_assert_eq!(idx.len(), m.min(n));
        prop_assert_eq!(*idx.last().unwrap(), n - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn thinning_never_lowers_efficiency(phi in 0.0f64..=0.95, step in 2usize..6, seed in 0u64..1000) {
        let n = 30_000;
        let series = ar1(phi, n, seed);
        let thinned: Vec<f64> = series.iter().step_by(step).copied().collect();
        let before = ess(&series, None) / n as f64;
        let after = ess(&thinned, None) / thinned.len() as f64;
        prop_assert!(after >= 0.85 * before, "phi {phi}: {after} < {before}");
        prop_assert!(ess(&series, None) <= n as f64);
    }
}
