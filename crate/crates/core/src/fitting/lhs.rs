use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `n` points in the box `ranges`, one per stratum in every dimension.
pub fn latin_hypercube(ranges: &[(f64, f64)], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "latin hypercube needs n >= 1".into(),
        ));
    }
    for &(lo, hi) in ranges {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("empty range [{lo}, {hi}]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![Vec::with_capacity(ranges.len()); n];
    let mut strata: Vec<usize> = (0..n).collect();
    for &(lo, hi) in ranges {
        strata.shuffle(&mut rng);
        let width = (hi - lo) / n as f64;
        for (point, &s) in points.iter_mut().zip(&strata) {
            let x = lo + width * (s as f64 + rng.random::<f64>());
            // Keep rounding from leaking into the next stratum.
            let top = lo + width * (s + 1) as f64;
            point.push(if x >= top {
                top.next_down().max(lo + width * s as f64)
            } else {
                x
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sample_per_stratum() {
        let pts = latin_hypercube(&[(0.0, 4.0), (0.0, 4.0)], 4, 7).unwrap();
        for d in 0..2 {
            let mut bins: Vec<usize> = pts.iter().map(|p| p[d].floor() as usize).collect();
            bins.sort();
            assert_eq!(bins, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let r = [(1.0, 2.0); 3];
        assert_eq!(
            latin_hypercube(&r, 10, 3).unwrap(),
            latin_hypercube(&r, 10, 3).unwrap()
        );
        assert_ne!(
            latin_hypercube(&r, 10, 3).unwrap(),
            latin_hypercube(&r, 10, 4).unwrap()
        );
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(latin_hypercube(&[(0.0, 1.0)], 0, 1).is_err());
        assert!(latin_hypercube(&[(1.0, 1.0)], 3, 1).is_err());
    }
}
