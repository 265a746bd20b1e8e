//! Counter-based random streams.
//!
//! A stream is fully determined by `(seed, stream_id)`; the n-th draw of a
//! stream is the same on every run and every thread. Independent consumers
//! (noise per quantizer, Hutchinson probes, data shuffling) each take their
//! own `stream_id` so that adding a consumer never shifts another's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream sharing this seed.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn normal<T: Scalar>(&mut self) -> T {
        T::lit(self.rng.sample::<f64, _>(StandardNormal))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform<T: Scalar>(&mut self) -> T {
        T::lit(self.rng.random::<f64>())
    }

    /// ±1 with equal probability.
    pub fn rademacher<T: Scalar>(&mut self) -> T {
        if self.rng.random::<bool>() {
            T::one()
        } else {
            -T::one()
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_vec<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn uniform_vec<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| self.uniform()).collect()
    }

    pub fn rademacher_vec<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        (0..n).map(|_| self.rademacher()).collect()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let xa: Vec<f32> = a.normal_vec(64);
        let xb: Vec<f32> = b.normal_vec(64);
        assert_eq!(xa, xb);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xa: Vec<f64> = a.uniform_vec(16);
        let xb: Vec<f64> = b.uniform_vec(16);
        assert_ne!(xa, xb);
    }

    #[test]
    fn draws_are_thread_independent() {
        let base: Vec<f64> = RngStream::new(11, 5).normal_vec(32);
        let handles: Vec<_> = (0..4)
            .map(|_| std::thread::spawn(|| RngStream::new(11, 5).normal_vec::<f64>(32)))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), base);
        }
    }

    #[test]
    fn rademacher_is_plus_minus_one() {
        let mut r = RngStream::new(1, 0);
        let v: Vec<f32> = r.rademacher_vec(1000);
        assert!(v.iter().all(|&x| x == 1.0 || x == -1.0));
        let mean: f32 = v.iter().sum::<f32>() / 1000.0;
        assert!(mean.abs() < 0.1);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(2, 0);
        for _ in 0..1000 {
            let u: f64 = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngStream::new(3, 0).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
