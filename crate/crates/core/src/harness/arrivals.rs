//! Poisson arrivals over epochs of constant rate.
//!
//! Profiles are generated by time change: one unit-rate exponential stream
//! is mapped through the cumulative intensity of the profile. Two profiles
//! run with the same seed therefore share their random numbers, which keeps
//! comparisons across arrival rates free of sampling noise between runs.

use rand::Rng;
use rand_distr::Exp1;

use super::config::Epoch;
use crate::types::Millis;

/// Arrival times in `[0, duration_ms)` with exponential gaps of mean
/// `1000 / lambda` ms.
pub fn poisson_arrivals<R: Rng + ?Sized>(lambda: f64, duration_ms: f64, rng: &mut R) -> Vec<Millis> {
    let mut out = Vec::new();
    if !(lambda > 0.0) || !(duration_ms > 0.0) {
        return out;
    }
    let mean = 1000.0 / lambda;
    let mut t = 0.0;
    loop {
        let gap: f64 = rng.sample(Exp1);
        t += gap * mean;
        if t >= duration_ms {
            return out;
        }
        out.push(t);
    }
}

/// Arrival times over consecutive epochs starting at 0.
pub fn profile_arrivals<R: Rng + ?Sized>(epochs: &[Epoch], rng: &mut R) -> Vec<Millis> {
    let mut out = Vec::new();
    // position of the unit-rate process and the next point on it
    let mut next: f64 = rng.sample(Exp1);
    let mut base = 0.0;
    let mut start = 0.0;
    for e in epochs {
        let mass = e.lambda * e.duration_ms / 1000.0;
        if mass > 0.0 {
            while next < base + mass {
                out.push(start + (next - base) / mass * e.duration_ms);
                let gap: f64 = rng.sample(Exp1);
                next += gap;
            }
        }
        base += mass;
        start += e.duration_ms;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_rate_is_empty() {
        assert!(poisson_arrivals(0.0, 1000.0, &mut rng(1)).is_empty());
        let e = [Epoch {
            duration_ms: 1000.0,
            lambda: 0.0,
        }];
        assert!(profile_arrivals(&e, &mut rng(1)).is_empty());
    }

    #[test]
    fn sorted_and_inside_the_epoch() {
        let a = poisson_arrivals(100.0, 1000.0, &mut rng(3));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| (0.0..1000.0).contains(&t)));
    }

    #[test]
    fn same_seed_same_arrivals() {
        assert_eq!(
            poisson_arrivals(50.0, 1000.0, &mut rng(9)),
            poisson_arrivals(50.0, 1000.0, &mut rng(9))
        );
    }

    #[test]
    fn mean_count_matches_rate() {
        // 10^5 one-second epochs at rate 100
        let mut r = rng(11);
        let n = 100_000;
        let total: usize = (0..n).map(|_| poisson_arrivals(100.0, 1000.0, &mut r).len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 100.0).abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn profile_counts_within_three_sigma() {
        let epochs: Vec<Epoch> = [7.0, 14.0, 80.0]
            .iter()
            .map(|&l| Epoch {
                duration_ms: 1000.0,
                lambda: l,
            })
            .collect();
        let runs = 2000;
        let mut counts = [0usize; 3];
        for s in 0..runs {
            for t in profile_arrivals(&epochs, &mut rng(s)) {
                counts[(t / 1000.0) as usize] += 1;
            }
        }
        for (c, e) in counts.iter().zip(&epochs) {
            let mean = *c as f64 / runs as f64;
            // standard error of the mean of Poisson(lambda) counts
            let se = (e.lambda / runs as f64).sqrt();
            assert!((mean - e.lambda).abs() < 3.0 * se, "{mean} vs {}", e.lambda);
        }
    }

    #[test]
    fn higher_rate_shares_random_numbers() {
        let at = |l: f64| {
            profile_arrivals(
                &[Epoch {
                    duration_ms: 1000.0,
                    lambda: l,
                }],
                &mut rng(5),
            )
        };
        let (slow, fast) = (at(50.0), at(100.0));
        // doubling the rate halves every arrival time of the slow run
        for (s, f) in slow.iter().zip(&fast) {
            assert!((s / 2.0 - f).abs() < 1e-9);
        }
    }
}
