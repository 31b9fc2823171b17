//! Rate accounting for partial bits-back coding.

/// Below this, `log₂ n!` is summed term by term.
const EXACT_FACTORIAL_LIMIT: u64 = 1024;

/// `log₂ n!`.
pub fn log2_factorial(n: u64) -> f64 {
    if n < EXACT_FACTORIAL_LIMIT {
        (2..=n).map(|k| (k as f64).log2()).sum()
    } else {
        libm::lgamma(n as f64 + 1.0) / std::f64::consts::LN_2
    }
}

/// Theoretical saving of coding `n` Gaussians as a set: `log₂ n! − log₂ n`.
pub fn rate_saving_bound(n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    log2_factorial(n) - (n as f64).log2()
}

/// Saving realized when the last `n − k` records are coded as a set.
pub fn realized_saving(n: u64, k: u64) -> f64 {
    rate_saving_bound(n - k)
}

/// Whether `k` plainly coded records of `record_bits` each cover the
/// permutation bits of the remaining `n − k`.
pub fn k_suffices(n: u64, k: u64, record_bits: f64) -> bool {
    k as f64 * record_bits >= log2_factorial(n - k)
}

/// Smallest `K` with `K·R ≥ log₂((N−K)!)`.
pub fn select_k(n: u64, record_bits: f64) -> u64 {
    assert!(record_bits > 0.0, "record bits must be positive");
    // The predicate is monotone in k.
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if k_suffices(n, mid, record_bits) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbPlan {
    pub n: u64,
    pub k: u64,
    pub record_bits: u32,
    /// `log₂((N−K)!) − log₂(N−K)`.
    pub expected_saving_bits: f64,
}

impl BbPlan {
    pub fn new(n: u64, record_bits: u32) -> Self {
        let k = select_k(n, f64::from(record_bits));
        Self::with_k(n, k, record_bits)
    }

    pub fn with_k(n: u64, k: u64, record_bits: u32) -> Self {
        Self {
            n,
            k,
            record_bits,
            expected_saving_bits: realized_saving(n, k),
        }
    }

    pub fn plain_bits(&self) -> u64 {
        self.n * u64::from(self.record_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bounds() {
        assert_eq!(rate_saving_bound(1), 0.0);
        assert!((rate_saving_bound(8) - (40320f64.log2() - 3.0)).abs() < 1e-12);
        assert!((rate_saving_bound(8) - 12.299).abs() < 1e-3);
    }

    #[test]
    fn exact_and_lgamma_branches_agree() {
        let exact: f64 = (2..=EXACT_FACTORIAL_LIMIT).map(|k| (k as f64).log2()).sum();
        let viagamma = libm::lgamma(EXACT_FACTORIAL_LIMIT as f64 + 1.0) / std::f64::consts::LN_2;
        assert!((exact - viagamma).abs() / exact < 1e-12);
        assert!((log2_factorial(EXACT_FACTORIAL_LIMIT) - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn large_n_matches_stirling() {
        let n = 10_000f64;
        let ln = n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n);
        let stirling = ln / std::f64::consts::LN_2 - n.log2();
        let got = rate_saving_bound(10_000);
        assert!(((got - stirling) / stirling).abs() < 1e-3);
    }

    #[test]
    fn select_k_examples() {
        assert_eq!(select_k(1, 56.0), 0);
        assert_eq!(select_k(2, 56.0), 1);
        for n in [3u64, 10, 100, 1000, 30_000] {
            let k = select_k(n, 56.0);
            assert!(k_suffices(n, k, 56.0));
            assert!(k == 0 || !k_suffices(n, k - 1, 56.0));
        }
    }

    #[test]
    fn select_k_matches_linear_scan() {
        for n in 1..300u64 {
            let linear = (0..=n).find(|&k| k as f64 * 56.0 >= log2_factorial(n - k)).unwrap();
            assert_eq!(select_k(n, 56.0), linear);
        }
    }
}
