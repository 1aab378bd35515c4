//! Seeded low-discrepancy point sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Halton sequence with a Cranley–Patterson rotation drawn from `seed`.
/// Points lie in `[0, 1)^dim`; the same seed always yields the same points.
#[derive(Debug, Clone)]
pub struct HaltonSampler {
    bases: Vec<u32>,
    shift: Vec<f64>,
    index: u64,
}

impl HaltonSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(
            dim <= PRIMES.len(),
            "Halton sampler supports up to {} dimensions",
            PRIMES.len()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        HaltonSampler {
            bases: PRIMES[..dim].to_vec(),
            shift,
            index: 0,
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        self.bases
            .iter()
            .zip(&self.shift)
            .map(|(&b, &s)| {
                let v = radical_inverse(b, self.index) + s;
                if v >= 1.0 {
                    v - 1.0
                } else {
                    v
                }
            })
            .collect()
    }
}

fn radical_inverse(base: u32, mut i: u64) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let mut a = HaltonSampler::new(3, 7);
        let mut b = HaltonSampler::new(3, 7);
        for _ in 0..1000 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
        assert_ne!(
            HaltonSampler::new(2, 1).next_point(),
            HaltonSampler::new(2, 2).next_point()
        );
    }

    #[test]
    fn radical_inverse_base_two() {
        let got: Vec<f64> = (1..=4).map(|i| radical_inverse(2, i)).collect();
        assert_eq!(got, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn covers_unit_square_evenly() {
        let mut s = HaltonSampler::new(2, 42);
        let mut counts = [0usize; 16];
        for _ in 0..16_000 {
            let p = s.next_point();
            counts[(p[0] * 4.0) as usize * 4 + (p[1] * 4.0) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (900..1100).contains(&c)), "{counts:?}");
    }
}
