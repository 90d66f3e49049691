//! Input generators shared by the benchmarks.

use rand::Rng;
use somno_core::rng;
use somno_core::sequence::{Crf, EmissionRow};
use somno_core::NUM_STAGES;

pub fn random_crf(seed: u64) -> Crf {
    let mut r = rng::stream(seed, "bench-crf", 0);
    let mut crf = Crf::default();
    for i in 0..NUM_STAGES {
        crf.start[i] = r.gen_range(-1.0..1.0);
        for j in 0..NUM_STAGES {
            crf.transition[i][j] = r.gen_range(-1.0..1.0);
        }
    }
    crf
}

pub fn random_emissions(len: usize, seed: u64) -> Vec<EmissionRow> {
    let mut r = rng::stream(seed, "bench-emissions", 0);
    (0..len)
        .map(|_| std::array::from_fn(|_| r.gen_range(-3.0..3.0)))
        .collect()
}

pub fn random_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "bench-samples", 0);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub fn random_signal(len: usize, seed: u64) -> Vec<f32> {
    let mut r = rng::stream(seed, "bench-signal", 0);
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}
