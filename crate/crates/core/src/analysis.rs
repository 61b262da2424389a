//! Expected identification cost: coupon-collector closed forms and the
//! Monte-Carlo simulations that check them.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// `H_i = 1 + 1/2 + ... + 1/i`, with `H_0 = 0`.
pub fn harmonic(i: usize) -> f64 {
    (1..=i).map(|j| 1.0 / j as f64).sum()
}

/// Expected rounds until `k_n` of the `k` target clients have each been seen
/// at least once: `(n/m) (H_k - H_{k-k_n})`.
pub fn expected_rounds_plain(n: usize, m: usize, k: usize, k_n: usize) -> Result<f64> {
    if k_n > k || k > n || m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "need k_n <= k <= n and 1 <= m <= n (n={n}, m={m}, k={k}, k_n={k_n})"
        )));
    }
    Ok(n as f64 / m as f64 * (harmonic(k) - harmonic(k - k_n)))
}

/// Large-`k` approximation `(n/m) (ln k - ln(k - k_n))`, with `ln 0`
/// replaced by 0 when `k_n = k`.
pub fn expected_rounds_plain_ln(n: usize, m: usize, k: usize, k_n: usize) -> Result<f64> {
    expected_rounds_plain(n, m, k, k_n)?;
    let ln0 = |x: usize| if x == 0 { 0.0 } else { (x as f64).ln() };
    Ok(n as f64 / m as f64 * (ln0(k) - ln0(k - k_n)))
}

fn ln_choose(n: usize, r: usize) -> f64 {
    // sum of logs of the r factors (n-r+1..=n)/(1..=r); exact enough and
    // overflow-free for any size used here.
    (1..=r)
        .map(|i| ((n - r + i) as f64).ln() - (i as f64).ln())
        .sum()
}

/// Probability that a uniformly drawn batch of `m` out of `n` clients
/// contains no target client: `C(n-k, m) / C(n, m)`.
pub fn prob_nontarget_batch(n: usize, k: usize, m: usize) -> f64 {
    if k == 0 || m == 0 {
        return 1.0;
    }
    if m > n.saturating_sub(k) {
        return 0.0;
    }
    (ln_choose(n - k, m) - ln_choose(n, m)).exp()
}

/// `(1 - k/n)^m`: the same event when the `m` batch members are drawn
/// independently with replacement. Close to the exact ratio only when
/// `m` is small next to `n - k`.
pub fn prob_nontarget_batch_independent(n: usize, k: usize, m: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    (1.0 - k as f64 / n as f64).powi(m as i32)
}

/// `ceil(k / alpha)`, tolerant of the representation error in `alpha`.
pub fn precision_pool_size(k: usize, alpha: f64) -> usize {
    (k as f64 / alpha - 1e-9).ceil() as usize
}

/// Expected total rounds for an aggregate-only observer to reach precision
/// `alpha`: the non-target-batch count bound
/// `(n/m) (H_{n-k} - H_{ceil(k/alpha) - k})` divided by the probability
/// that a batch is entirely non-target.
pub fn expected_rounds_encrypted(n: usize, m: usize, k: usize, alpha: f64) -> Result<f64> {
    encrypted_bound(n, m, k, alpha, prob_nontarget_batch(n, k, m))
}

/// [`expected_rounds_encrypted`] with the independent-draw batch
/// probability [`prob_nontarget_batch_independent`].
pub fn expected_rounds_encrypted_independent(
    n: usize,
    m: usize,
    k: usize,
    alpha: f64,
) -> Result<f64> {
    encrypted_bound(n, m, k, alpha, prob_nontarget_batch_independent(n, k, m))
}

fn encrypted_bound(n: usize, m: usize, k: usize, alpha: f64, p_clean: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    if m == 0 || m > n || k > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m <= n and k <= n (n={n}, m={m}, k={k})"
        )));
    }
    let pool = precision_pool_size(k, alpha);
    if pool > n {
        return Err(Error::PrecisionOutOfRange { alpha, k, n });
    }
    let batches = n as f64 / m as f64 * (harmonic(n - k) - harmonic(pool - k));
    if p_clean == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(batches / p_clean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentificationMode {
    /// Stop once `k_n` distinct target clients have participated.
    Plain,
    /// Stop once `n - ceil(k/alpha)` distinct non-target clients have been
    /// seen in batches containing no target client.
    Encrypted { alpha: f64 },
}

/// How clients arrive in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Each round draws `m` distinct clients uniformly (the protocol).
    #[default]
    Batch,
    /// Clients arrive one at a time, independently and uniformly; time is
    /// measured in units of `m` arrivals. This is the idealization under
    /// which the plain closed form is exact.
    SingleArrivals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectorSetup {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub k_n: usize,
}

/// Clients `0..k` are the targets.
fn trial_rounds<R: Rng>(
    setup: &CollectorSetup,
    mode: IdentificationMode,
    arrivals: ArrivalModel,
    rng: &mut R,
) -> f64 {
    let CollectorSetup { n, m, k, k_n } = *setup;
    match mode {
        IdentificationMode::Plain => {
            if k_n == 0 {
                return 0.0;
            }
            let mut seen = HashSet::with_capacity(k_n);
            match arrivals {
                ArrivalModel::Batch => {
                    let mut rounds = 0usize;
                    while seen.len() < k_n {
                        rounds += 1;
                        for j in index::sample(rng, n, m) {
                            if j < k {
                                seen.insert(j);
                            }
                        }
                    }
                    rounds as f64
                }
                ArrivalModel::SingleArrivals => {
                    let mut draws = 0usize;
                    while seen.len() < k_n {
                        draws += 1;
                        let j = rng.gen_range(0..n);
                        if j < k {
                            seen.insert(j);
                        }
                    }
                    draws as f64 / m as f64
                }
            }
        }
        IdentificationMode::Encrypted { alpha } => {
            let needed = n.saturating_sub(precision_pool_size(k, alpha));
            if needed == 0 {
                return 0.0;
            }
            let mut cleared = HashSet::with_capacity(needed);
            let mut rounds = 0usize;
            while cleared.len() < needed {
                rounds += 1;
                let batch: Vec<usize> = match arrivals {
                    ArrivalModel::Batch => index::sample(rng, n, m).into_vec(),
                    ArrivalModel::SingleArrivals => (0..m).map(|_| rng.gen_range(0..n)).collect(),
                };
                if batch.iter().all(|&j| j >= k) {
                    cleared.extend(batch);
                }
            }
            rounds as f64
        }
    }
}

/// Simulate the identification stopping time over `trials` independent
/// trials. Trial `i` uses a seed derived from `(seed, i)`, so the estimate
/// does not depend on scheduling.
pub fn monte_carlo_rounds(
    setup: CollectorSetup,
    mode: IdentificationMode,
    arrivals: ArrivalModel,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let CollectorSetup { n, m, k, k_n } = setup;
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 trials, got {trials}"
        )));
    }
    if k_n > k || k > n || m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "need k_n <= k <= n and 1 <= m <= n (n={n}, m={m}, k={k}, k_n={k_n})"
        )));
    }
    if let IdentificationMode::Encrypted { alpha } = mode {
        if !(alpha > 0.0 && alpha <= 1.0) || precision_pool_size(k, alpha) > n {
            return Err(Error::PrecisionOutOfRange { alpha, k, n });
        }
        if m > n - k && n - precision_pool_size(k, alpha) > 0 {
            return Err(Error::InvalidArgument(
                "no batch can be free of target clients".into(),
            ));
        }
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, &[stream::MONTE_CARLO, i as u64]);
            trial_rounds(&setup, mode, arrivals, &mut rng)
        })
        .collect();
    let count = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / count;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
    Ok(MonteCarloEstimate {
        mean,
        stderr: (var / count).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(0), 0.0);
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(15) - 3.318_228_993_228_993).abs() < 1e-12);
    }

    #[test]
    fn plain_edge_cases() {
        assert_eq!(expected_rounds_plain(60, 10, 15, 0).unwrap(), 0.0);
        assert!(
            (expected_rounds_plain(60, 10, 15, 15).unwrap() - 6.0 * harmonic(15)).abs() < 1e-12
        );
        assert!(expected_rounds_plain(60, 10, 15, 16).is_err());
    }

    #[test]
    fn nontarget_batch_edges() {
        assert_eq!(prob_nontarget_batch(60, 0, 10), 1.0);
        assert_eq!(prob_nontarget_batch(60, 15, 0), 1.0);
        assert_eq!(prob_nontarget_batch(20, 15, 6), 0.0);
        // C(4,2)/C(6,2) = 6/15
        assert!((prob_nontarget_batch(6, 2, 2) - 0.4).abs() < 1e-14);
        assert!((prob_nontarget_batch_independent(6, 2, 2) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn encrypted_alpha_one_and_errors() {
        let full = expected_rounds_encrypted(60, 10, 15, 1.0).unwrap();
        let expected = 6.0 * harmonic(45) / prob_nontarget_batch(60, 15, 10);
        assert!((full - expected).abs() < 1e-9);
        assert!(matches!(
            expected_rounds_encrypted(60, 10, 15, 0.2),
            Err(Error::PrecisionOutOfRange { .. })
        ));
        assert_eq!(precision_pool_size(15, 0.3), 50);
    }

    #[test]
    fn zero_k_n_simulates_to_zero() {
        let setup = CollectorSetup {
            n: 30,
            m: 5,
            k: 5,
            k_n: 0,
        };
        let est = monte_carlo_rounds(
            setup,
            IdentificationMode::Plain,
            ArrivalModel::Batch,
            100,
            1,
        )
        .unwrap();
        assert_eq!((est.mean, est.stderr), (0.0, 0.0));
    }
}
