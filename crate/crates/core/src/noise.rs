//! Deterministic, splittable randomness.
//!
//! Every random quantity in an experiment is a pure function of a
//! [`StreamKey`]: the key fields are hashed into a 256-bit seed for a
//! counter-mode stream cipher, so the randomness of any (replicate, purpose,
//! neuron, interval) cell can be regenerated in isolation without replaying
//! anything that came before it. The coupling pipeline relies on this to
//! revisit interval randomness in two passes (live and frozen acceptance).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::model::JumpLaw;

/// What a stream is used for. Distinct purposes give independent streams even
/// when all other key fields agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    /// Poisson candidate arrival times.
    Candidates,
    /// Uniform acceptance levels `z`.
    Acceptance,
    /// Jump marks `u ~ nu`.
    Marks,
    /// The coupler's auxiliary uniforms `V`.
    CouplerV,
    /// Brownian bridge fill and fresh Gaussian increments.
    Bridge,
    /// Initial potentials.
    Init,
}

impl StreamPurpose {
    fn tag(self) -> u8 {
        match self {
            StreamPurpose::Candidates => 0,
            StreamPurpose::Acceptance => 1,
            StreamPurpose::Marks => 2,
            StreamPurpose::CouplerV => 3,
            StreamPurpose::Bridge => 4,
            StreamPurpose::Init => 5,
        }
    }
}

/// Address of one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub base_seed: u64,
    pub replicate: u64,
    pub purpose: StreamPurpose,
    pub neuron: u64,
    pub interval: u64,
}

impl StreamKey {
    pub fn new(
        base_seed: u64,
        replicate: u64,
        purpose: StreamPurpose,
        neuron: u64,
        interval: u64,
    ) -> Self {
        Self { base_seed, replicate, purpose, neuron, interval }
    }

    pub fn with_purpose(self, purpose: StreamPurpose) -> Self {
        Self { purpose, ..self }
    }

    /// Collision-free encoding of the key fields into a 256-bit cipher seed.
    fn seed(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"mfnc-stream-v1");
        hasher.update(self.base_seed.to_le_bytes());
        hasher.update(self.replicate.to_le_bytes());
        hasher.update([self.purpose.tag()]);
        hasher.update(self.neuron.to_le_bytes());
        hasher.update(self.interval.to_le_bytes());
        hasher.finalize().into()
    }

    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.seed())
    }
}

/// Uniform draw on the open interval (0, 1); never returns 0 or 1, so inverse
/// CDFs stay finite.
pub fn open_u01<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// One uniform(0,1) value derived from the key (the coupler's `V`).
pub fn uniform_v(key: StreamKey) -> f64 {
    open_u01(&mut key.rng())
}

/// One candidate arrival of the dominating-rate Poisson stream, with its
/// acceptance level and jump mark attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEvent {
    pub time: f64,
    pub neuron: usize,
    /// Acceptance level, uniform on (0, f_max).
    pub z: f64,
    /// Jump mark, a draw from `nu`.
    pub u: f64,
}

/// Homogeneous Poisson(f_max) candidates on the window `[t0, t1)`, each
/// carrying an independent `z ~ U(0, f_max)` and `u ~ nu`. Marks are attached
/// to every candidate, accepted or not, so the live and frozen acceptance
/// passes see identical marks.
pub fn candidates_in(
    key: StreamKey,
    window: (f64, f64),
    f_max: f64,
    law: &JumpLaw,
) -> Vec<CandidateEvent> {
    let (t0, t1) = window;
    debug_assert!(key.purpose == StreamPurpose::Candidates);
    if t1 <= t0 {
        return Vec::new();
    }
    let mut time_rng = key.rng();
    let mean = f_max * (t1 - t0);
    let count = sample_poisson(&mut time_rng, mean);
    let mut times: Vec<f64> = (0..count)
        .map(|_| t0 + (t1 - t0) * open_u01(&mut time_rng))
        .collect();
    times.sort_by(f64::total_cmp);

    let mut z_rng = key.with_purpose(StreamPurpose::Acceptance).rng();
    let mut u_rng = key.with_purpose(StreamPurpose::Marks).rng();
    times
        .into_iter()
        .map(|time| CandidateEvent {
            time,
            neuron: key.neuron as usize,
            z: f_max * open_u01(&mut z_rng),
            u: law.sample(open_u01(&mut u_rng)),
        })
        .collect()
}

/// `n` i.i.d. draws from `law` out of the stream at `key`.
pub fn draw_marks(key: StreamKey, law: &JumpLaw, n: usize) -> Vec<f64> {
    let mut rng = key.rng();
    (0..n).map(|_| law.sample(open_u01(&mut rng))).collect()
}

/// Poisson sample by inversion for small means and PTRS rejection otherwise;
/// deterministic in the rng stream.
pub fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        // Knuth inversion via exponential spacings in log space.
        let limit = -mean;
        let mut acc = 0.0;
        let mut count = 0u64;
        loop {
            acc += open_u01(rng).ln();
            if acc < limit {
                return count;
            }
            count += 1;
        }
    }
    // Hörmann's PTRS transformed rejection.
    let b = 0.931 + 2.53 * mean.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = open_u01(rng) - 0.5;
        let v = open_u01(rng);
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let ln_v = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = k * mean.ln() - mean - ln_gamma(k + 1.0);
        if ln_v <= rhs {
            return k as u64;
        }
    }
}

/// Lanczos approximation of ln Gamma.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, g) in G.iter().enumerate() {
        acc += g / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(purpose: StreamPurpose, neuron: u64, interval: u64) -> StreamKey {
        StreamKey::new(42, 0, purpose, neuron, interval)
    }

    #[test]
    fn empty_window_is_empty() {
        let k = key(StreamPurpose::Candidates, 0, 0);
        assert!(candidates_in(k, (1.0, 1.0), 2.0, &JumpLaw::Rademacher).is_empty());
    }

    #[test]
    fn same_key_is_bitwise_identical() {
        let k = key(StreamPurpose::Candidates, 3, 7);
        let a = candidates_in(k, (0.0, 1.0), 2.0, &JumpLaw::Rademacher);
        let b = candidates_in(k, (0.0, 1.0), 2.0, &JumpLaw::Rademacher);
        assert_eq!(a, b);
        assert_eq!(uniform_v(key(StreamPurpose::CouplerV, 1, 2)), uniform_v(key(StreamPurpose::CouplerV, 1, 2)));
    }

    #[test]
    fn candidate_times_sorted_with_valid_marks() {
        let k = key(StreamPurpose::Candidates, 0, 0);
        let events = candidates_in(k, (0.0, 100.0), 2.0, &JumpLaw::Rademacher);
        assert!(events.len() > 100);
        for w in events.windows(2) {
            assert!(w[0].time < w[1].time);
        }
        for e in &events {
            assert!(e.time >= 0.0 && e.time < 100.0);
            assert!(e.z > 0.0 && e.z < 2.0);
            assert!(e.u == -1.0 || e.u == 1.0);
        }
    }

    #[test]
    fn poisson_count_mean_within_mc_band() {
        // Expected count over [0,1) at rate 2 is 2; 1e5 windows, 4 sigma band.
        let reps = 100_000u64;
        let mut total = 0usize;
        for i in 0..reps {
            let k = key(StreamPurpose::Candidates, 0, i);
            total += candidates_in(k, (0.0, 1.0), 2.0, &JumpLaw::Rademacher).len();
        }
        let mean = total as f64 / reps as f64;
        let band = 4.0 * (2.0f64 / reps as f64).sqrt();
        assert!((mean - 2.0).abs() < band, "mean {mean} outside 2 +- {band}");
    }

    #[test]
    fn uniform_v_passes_ks_at_1pct() {
        let mut vs: Vec<f64> = (0..100_000)
            .map(|i| uniform_v(key(StreamPurpose::CouplerV, 0, i)))
            .collect();
        vs.sort_by(f64::total_cmp);
        let n = vs.len() as f64;
        let mut d: f64 = 0.0;
        for (i, v) in vs.iter().enumerate() {
            d = d.max((v - i as f64 / n).abs()).max(((i + 1) as f64 / n - v).abs());
        }
        // Asymptotic 1% Kolmogorov critical value.
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn distinct_purposes_are_uncorrelated() {
        let n = 100_000;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let x = uniform_v(key(StreamPurpose::CouplerV, 5, i));
            let y = uniform_v(key(StreamPurpose::Bridge, 5, i));
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let n = n as f64;
        let cov = sxy / n - sx / n * (sy / n);
        let vx = sxx / n - (sx / n).powi(2);
        let vy = syy / n - (sy / n).powi(2);
        let r = cov / (vx * vy).sqrt();
        assert!(r.abs() < 0.01, "correlation {r}");
    }

    #[test]
    fn superposition_dispersion_near_one() {
        // Merging per-neuron candidate streams over N neurons must look like a
        // single Poisson process of rate N * f_max: variance/mean of counts in
        // disjoint windows stays close to 1.
        let n_neurons = 16u64;
        let f_max = 1.5;
        let windows = 10_000u64;
        let mut counts = Vec::with_capacity(windows as usize);
        for w in 0..windows {
            let mut c = 0usize;
            for neuron in 0..n_neurons {
                let k = StreamKey::new(7, 0, StreamPurpose::Candidates, neuron, w);
                c += candidates_in(k, (0.0, 0.25), f_max, &JumpLaw::Rademacher).len();
            }
            counts.push(c as f64);
        }
        let mean = counts.iter().sum::<f64>() / windows as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (windows - 1) as f64;
        let dispersion = var / mean;
        assert!((0.95..=1.05).contains(&dispersion), "dispersion {dispersion}");
        let expected = n_neurons as f64 * f_max * 0.25;
        assert!((mean - expected).abs() < 4.0 * (expected / windows as f64).sqrt());
    }

    #[test]
    fn poisson_sampler_large_mean_moments() {
        let mut rng = key(StreamPurpose::Candidates, 9, 9).rng();
        let mean_target = 200.0;
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_poisson(&mut rng, mean_target) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - mean_target).abs() < 4.0 * (mean_target / n as f64).sqrt());
        assert!((var / mean_target - 1.0).abs() < 0.05, "variance ratio {}", var / mean_target);
    }
}
