use ghbs_core::prior::{sample_prior, KdeEstimate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn kde_of_uniform_square_integrates_to_one() {
    let pts = sample_prior(&mut ChaCha8Rng::seed_from_u64(1), 20_000, 2);
    let kde = KdeEstimate::fit(&pts).unwrap();
    let n = 120;
    let (lo, hi) = (-1.6, 1.6);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let y = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += kde.eval(&y).unwrap() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-3, "{total}");
    // interior density of the uniform square is 1/4
    assert!((kde.eval(&[0.0, 0.0]).unwrap() - 0.25).abs() < 0.02);
    assert!(kde.eval(&[5.0, 5.0]).unwrap() == 0.0);
}

#[test]
fn single_point_kde_is_a_gaussian_bump() {
    let kde = KdeEstimate::with_bandwidth(&[vec![0.5]], vec![0.2]).unwrap();
    let expected = 1.0 / (0.2 * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5f64 * 1.0).exp();
    assert!((kde.eval(&[0.7]).unwrap() - expected).abs() < 1e-12);
}
