//! Chain diagnostics: FFT autocorrelation, effective sample size and
//! equal-stride thinning.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Autocorrelation threshold that ends the ESS sum.
pub const ESS_CUTOFF: f64 = 0.05;

/// Smallest `2^a 3^b` that is at least `n`.
fn fft_length(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut three = 1usize;
    while three < best {
        let mut len = three;
        while len < n {
            len *= 2;
        }
        best = best.min(len);
        three *= 3;
    }
    best
}

/// Normalized autocorrelations `r_0..=r_max_lag` of a series. Returns `None`
/// when the series has zero variance.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = series.len();
    if n == 0 {
        return None;
    }
    let max_lag = max_lag.min(n - 1);
    let mean = series.iter().sum::<f64>() / n as f64;
    // padding by max_lag keeps the circular correlation free of wraparound
    let len = fft_length(n + max_lag + 1);
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        p.plan_fft_forward(len).process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        p.plan_fft_inverse(len).process(&mut buf);
    });
    let c0 = buf[0].re;
    if c0.is_nan() || c0 <= 1e-300 * n as f64 {
        return None;
    }
    Some(buf[..=max_lag].iter().map(|c| c.re / c0).collect())
}

/// `N / (1 + 2 sum_{j=1}^{J} r_j)` where the sum stops before the first lag
/// with `r_j < 0.05`, and `J <= j_max` (default `N / 3`). Clamped to
/// `[1, N]`; a constant series has ESS 1.
pub fn ess(series: &[f64], j_max: Option<usize>) -> f64 {
    let n = series.len();
    if n <= 1 {
        return n as f64;
    }
    let cap = j_max.unwrap_or(n / 3).min(n - 1);
    let Some(r) = autocorrelation(series, cap) else {
        return 1.0;
    };
    let mut tau = 1.0;
    for rj in &r[1..] {
        if *rj < ESS_CUTOFF {
            break;
        }
        tau += 2.0 * rj;
    }
    (n as f64 / tau).clamp(1.0, n as f64)
}

/// Indices of `m` equally spaced samples ending at the last one:
/// `N - 1 - (m - 1 - j) * floor(N / m)`.
pub fn thin_indices(n: usize, m: usize) -> Vec<usize> {
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let m = m.min(n);
    let stride = n / m;
    (0..m).map(|j| n - 1 - (m - 1 - j) * stride).collect()
}

/// Equally spaced subsample of `m` items.
pub fn thin_effective<T: Clone>(chain: &[T], m: usize) -> Vec<T> {
    thin_indices(chain.len(), m).into_iter().map(|i| chain[i].clone()).collect()
}
