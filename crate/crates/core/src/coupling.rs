//! Per-interval coupling machinery and concatenation into the driving
//! Brownian path.
//!
//! For each full interval the frozen-accepted marks form a centred walk
//! `S^k`; the coupler produces Brownian values `B^k` at integer times, and
//! the interval's Gaussian increment is the rescaling
//! `W^k = sqrt(delta / N^k) B^k_{N^k}`. Intervals with no frozen acceptance
//! get a fresh N(0, delta) draw instead. The increments are pasted together
//! and bridge-filled at substep resolution to yield the Brownian motion that
//! drives the auxiliary system.

use crate::finite_system::IntervalLog;
use crate::kmt::couple_walk;
use crate::model::ModelParams;
use crate::noise::{open_u01, StreamKey, StreamPurpose};
use crate::stats::normal_inverse_cdf;
use crate::Result;

/// Outcome of coupling one interval's frozen marks.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalCoupling {
    pub k: usize,
    /// `N^k_delta`, the frozen acceptance count.
    pub n_frozen: usize,
    /// `W^k ~ N(0, delta)`, the interval's Brownian increment.
    pub w_increment: f64,
    /// Realized `|K^k| = |S^k_{N^k} - B^k_{N^k}|`, the KMT error.
    pub k_stat: f64,
    /// Realized `|E^k| = |sqrt(N^k / delta) - sqrt(fbar(X^N_{k delta}))|`.
    pub e_stat: f64,
    /// Coupler's Brownian values `B_1..B_n` at integer walk times. Placed at
    /// equispaced interior times, they carry the walk's intra-interval shape
    /// into the pasted path instead of being discarded after `B_n`.
    pub b_values: Vec<f64>,
}

/// The concatenated driving noise on the delta-grid with bridge-filled
/// substep values.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub delta: f64,
    pub substeps_per_delta: usize,
    /// `W^N` at multiples of delta (full coupled intervals only), starting
    /// at `W_0 = 0`.
    pub grid_values: Vec<f64>,
    /// Substep grid, `times[0] = 0`, covering the whole horizon.
    pub times: Vec<f64>,
    /// `W^N` on the substep grid; interval endpoints match `grid_values`
    /// exactly.
    pub values: Vec<f64>,
}

impl BrownianPath {
    pub fn increments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| (t[0], t[1], v[1] - v[0]))
    }
}

fn coupler_v_key(params: &ModelParams, replicate: u64, k: usize) -> StreamKey {
    StreamKey::new(params.base_seed, replicate, StreamPurpose::CouplerV, 0, k as u64)
}

/// Bridge-fill stream of interval `k`; neuron slot 1 is reserved for the
/// fresh increment of a zero-count interval so the fill stays untouched.
fn bridge_key(params: &ModelParams, replicate: u64, k: usize, slot: u64) -> StreamKey {
    StreamKey::new(params.base_seed, replicate, StreamPurpose::Bridge, slot, k as u64)
}

/// Couples one interval. The marks of frozen-accepted candidates are taken in
/// candidate-time order across all neurons; the coupler consumes only the
/// marks and its own uniform stream, so the resulting increment is a
/// deterministic function of the interval log and the interval's keys.
pub fn couple_interval(
    log: &IntervalLog,
    params: &ModelParams,
    replicate: u64,
) -> Result<IntervalCoupling> {
    let delta = log.t1 - log.t0;
    let marks = log.frozen_marks();
    let n = marks.len();
    let fbar = log.fbar(params);
    if n == 0 {
        let mut rng = bridge_key(params, replicate, log.k, 1).rng();
        let w = delta.sqrt() * normal_inverse_cdf(open_u01(&mut rng));
        return Ok(IntervalCoupling {
            k: log.k,
            n_frozen: 0,
            w_increment: w,
            k_stat: 0.0,
            e_stat: fbar.sqrt(),
            b_values: Vec::new(),
        });
    }
    let coupling = couple_walk(
        &marks,
        &params.jump_law,
        coupler_v_key(params, replicate, log.k),
        params.coupler,
    )?;
    let b_n = *coupling.brownian.last().unwrap();
    let w = (delta / n as f64).sqrt() * b_n;
    Ok(IntervalCoupling {
        k: log.k,
        n_frozen: n,
        w_increment: w,
        k_stat: coupling.terminal_gap(),
        e_stat: ((n as f64 / delta).sqrt() - fbar.sqrt()).abs(),
        b_values: coupling.brownian,
    })
}

/// Pastes the interval increments into a Brownian path on `[0, horizon]`,
/// bridge-filling `substeps_per_delta` values inside each interval. Time not
/// covered by any coupling is filled with fresh independent Gaussian
/// increments at the same substep resolution.
pub fn build_brownian(
    couplings: &[IntervalCoupling],
    params: &ModelParams,
    replicate: u64,
    horizon: f64,
) -> BrownianPath {
    let delta = params.delta();
    let m = params.substeps_per_delta;
    let mut grid_values = vec![0.0];
    let mut times = vec![0.0];
    let mut values = vec![0.0];

    let mut covered = 0.0;
    for c in couplings {
        let t_start = c.k as f64 * delta;
        // The last interval may be truncated at the horizon.
        let t_end = ((c.k + 1) as f64 * delta).min(horizon);
        let len = t_end - t_start;
        let w_start = *grid_values.last().unwrap();
        let w_end = w_start + c.w_increment;
        let mut rng = bridge_key(params, replicate, c.k, 0).rng();
        // Interior pins from the coupler's Brownian values at equispaced
        // times: sqrt(len/n) B_l at t_start + l len/n is a Brownian path in
        // law for every n, and it carries the walk's intra-interval shape
        // (which an independent bridge fill would throw away). The last pin
        // reproduces w_end exactly.
        let n = c.n_frozen;
        let scale = if n > 0 { (len / n as f64).sqrt() } else { 0.0 };
        let pin = |l: usize| -> (f64, f64) {
            (t_start + l as f64 * len / n as f64, w_start + scale * c.b_values[l - 1])
        };
        let mut next_pin = 1usize;
        let mut t_cur = t_start;
        let mut w_cur = w_start;
        let h = len / m as f64;
        for j in 1..=m {
            let t_next = if j == m { t_end } else { t_start + j as f64 * h };
            let w_next = if j == m {
                w_end
            } else {
                // Move the left condition up to the latest pin before t_next,
                // then bridge towards the next pin (or the endpoint).
                while next_pin < n && pin(next_pin).0 <= t_next {
                    (t_cur, w_cur) = pin(next_pin);
                    next_pin += 1;
                }
                let (t_r, w_r) = if next_pin < n { pin(next_pin) } else { (t_end, w_end) };
                let remaining = t_r - t_cur;
                let dt = t_next - t_cur;
                let mean = w_cur + dt / remaining * (w_r - w_cur);
                let var = dt * (remaining - dt) / remaining;
                mean + var.max(0.0).sqrt() * normal_inverse_cdf(open_u01(&mut rng))
            };
            times.push(t_next);
            values.push(w_next);
            t_cur = t_next;
            w_cur = w_next;
        }
        grid_values.push(w_end);
        covered = t_end;
    }

    // Anything past the last coupled interval: fresh increments, no pinning.
    if covered < horizon - 1e-12 * delta.max(1.0) {
        let mut rng = bridge_key(params, replicate, couplings.len(), 0).rng();
        let h = delta / m as f64;
        let mut t_cur = covered;
        let mut w_cur = *values.last().unwrap();
        while t_cur < horizon - 1e-12 {
            let t_next = (t_cur + h).min(horizon);
            let dt = t_next - t_cur;
            w_cur += dt.sqrt() * normal_inverse_cdf(open_u01(&mut rng));
            times.push(t_next);
            values.push(w_cur);
            t_cur = t_next;
        }
    }

    BrownianPath { delta, substeps_per_delta: m, grid_values, times, values }
}

/// Aggregate coupling-error statistics of one run, with the scaled
/// per-interval contributions that enter the remainder bookkeeping.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CouplingErrorSummary {
    pub intervals: usize,
    pub mean_k_stat: f64,
    pub p50_k_stat: f64,
    pub p99_k_stat: f64,
    pub mean_e_stat: f64,
    pub p99_e_stat: f64,
    /// Mean of `k_stat * sup a' / sqrt(N)`.
    pub mean_scaled_k: f64,
    /// Mean of `e_stat * |W^k| / sqrt(N)`.
    pub mean_scaled_e: f64,
}

pub fn coupling_error_summary(
    couplings: &[IntervalCoupling],
    d1_sup: f64,
    n_neurons: usize,
) -> CouplingErrorSummary {
    assert!(!couplings.is_empty(), "need at least one interval");
    let sqrt_n = (n_neurons as f64).sqrt();
    let mut k_stats: Vec<f64> = couplings.iter().map(|c| c.k_stat).collect();
    let mut e_stats: Vec<f64> = couplings.iter().map(|c| c.e_stat).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_k = mean(&k_stats);
    let mean_e = mean(&e_stats);
    let mean_scaled_k = mean_k * d1_sup / sqrt_n;
    let mean_scaled_e = couplings
        .iter()
        .map(|c| c.e_stat * c.w_increment.abs() / sqrt_n)
        .sum::<f64>()
        / couplings.len() as f64;
    k_stats.sort_by(f64::total_cmp);
    e_stats.sort_by(f64::total_cmp);
    let pct = |v: &[f64], p: f64| v[((v.len() as f64 - 1.0) * p).round() as usize];
    CouplingErrorSummary {
        intervals: couplings.len(),
        mean_k_stat: mean_k,
        p50_k_stat: pct(&k_stats, 0.5),
        p99_k_stat: pct(&k_stats, 0.99),
        mean_e_stat: mean_e,
        p99_e_stat: pct(&e_stats, 0.99),
        mean_scaled_k,
        mean_scaled_e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_system::simulate;
    use crate::kmt::CouplerMethod;
    use crate::model::{JumpLaw, ModelParams, RateFunction};

    fn empty_log(k: usize, delta: f64, snapshot: Vec<f64>) -> IntervalLog {
        IntervalLog {
            k,
            t0: k as f64 * delta,
            t1: (k + 1) as f64 * delta,
            snapshot,
            candidates: Vec::new(),
            partial: false,
        }
    }

    #[test]
    fn zero_count_interval_gets_fresh_gaussian() {
        let params = ModelParams::default();
        let delta = 0.1;
        let log = empty_log(0, delta, vec![0.0; 4]);
        let c = couple_interval(&log, &params, 0).unwrap();
        assert_eq!(c.n_frozen, 0);
        assert_eq!(c.k_stat, 0.0);
        // Fresh N(0, delta) draws over many intervals.
        let draws: Vec<f64> = (0..10_000)
            .map(|k| {
                couple_interval(&empty_log(k, delta, vec![0.0; 4]), &params, 0)
                    .unwrap()
                    .w_increment
            })
            .collect();
        let d = crate::stats::ks_statistic_normal(&draws, 0.0, delta.sqrt());
        assert!(d < 1.628 / (draws.len() as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn gaussian_comonotone_k_stat_identically_zero() {
        let params = ModelParams {
            jump_law: JumpLaw::StandardGaussian,
            coupler: CouplerMethod::Comonotone,
            n_neurons: 32,
            ..ModelParams::default()
        };
        for rep in 0..5 {
            let (_, logs) = simulate(&params, rep).unwrap();
            for log in logs.iter().filter(|l| !l.partial) {
                let c = couple_interval(log, &params, rep).unwrap();
                assert_eq!(c.k_stat, 0.0);
            }
        }
    }

    #[test]
    fn frozen_count_mean_matches_poisson_rate() {
        // Constant f == c: over many intervals E[N^k] = N c delta within 4 sigma.
        let c_rate = 1.5;
        let params = ModelParams {
            n_neurons: 50,
            rate_fn: RateFunction::constant(c_rate),
            horizon: 1.0,
            delta: Some(0.1),
            ..ModelParams::default()
        };
        let mut counts = Vec::new();
        for rep in 0..1000 {
            let (_, logs) = simulate(&params, rep).unwrap();
            for log in logs.iter().filter(|l| !l.partial) {
                counts.push(log.n_frozen() as f64);
            }
        }
        let expected = 50.0 * c_rate * 0.1;
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let band = 4.0 * (expected / counts.len() as f64).sqrt();
        assert!((mean - expected).abs() < band, "mean {mean} vs {expected} +- {band}");
    }

    #[test]
    fn bridge_endpoints_pinned_and_midpoint_law() {
        let params = ModelParams { substeps_per_delta: 4, delta: Some(0.2), ..Default::default() };
        let delta = 0.2;
        // All increments zero: endpoints of every interval exactly zero.
        let couplings: Vec<IntervalCoupling> = (0..3)
            .map(|k| IntervalCoupling {
                k,
                n_frozen: 0,
                w_increment: 0.0,
                k_stat: 0.0,
                e_stat: 0.0,
                b_values: Vec::new(),
            })
            .collect();
        let path = build_brownian(&couplings, &params, 0, 3.0 * delta);
        assert_eq!(path.grid_values, vec![0.0; 4]);
        for k in 0..3 {
            let idx = k * 4 + 4; // last substep of interval k
            assert_eq!(path.values[idx], 0.0);
            assert!((path.times[idx] - (k + 1) as f64 * delta).abs() < 1e-12);
        }

        // Midpoint of a single interval with increment w: mean w/2, var delta/4.
        let params = ModelParams { substeps_per_delta: 2, delta: Some(delta), ..Default::default() };
        let w = 0.7;
        let mut mids = Vec::new();
        for rep in 0..10_000 {
            let coupling =
                vec![IntervalCoupling {
                    k: 0,
                    n_frozen: 1,
                    w_increment: w,
                    k_stat: 0.0,
                    e_stat: 0.0,
                    b_values: vec![w / (delta / 1.0).sqrt()],
                }];
            let p = build_brownian(&coupling, &params, rep, delta);
            mids.push(p.values[1]);
        }
        let n = mids.len() as f64;
        let mean = mids.iter().sum::<f64>() / n;
        let var = mids.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - w / 2.0).abs() < 4.0 * (delta / 4.0 / n).sqrt());
        assert!((var - delta / 4.0).abs() < 4.0 * delta / 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn grid_increments_are_cumulative_sums() {
        let params = ModelParams::default();
        let (_, logs) = simulate(&params, 4).unwrap();
        let couplings: Vec<IntervalCoupling> = logs
            .iter()
            .filter(|l| !l.partial)
            .map(|l| couple_interval(l, &params, 4).unwrap())
            .collect();
        let path = build_brownian(&couplings, &params, 4, params.horizon);
        let mut acc = 0.0;
        for (g, c) in path.grid_values[1..].iter().zip(&couplings) {
            acc += c.w_increment;
            assert!((g - acc).abs() < 1e-15);
        }
        // Substep values end the horizon.
        assert!((path.times.last().unwrap() - params.horizon).abs() < 1e-12);
    }

    #[test]
    fn increment_regenerable_from_log_alone() {
        // W^k must be a deterministic function of the interval log and the
        // interval's streams only.
        let params = ModelParams { n_neurons: 64, ..ModelParams::default() };
        let (_, logs) = simulate(&params, 11).unwrap();
        for log in logs.iter().filter(|l| !l.partial) {
            let a = couple_interval(log, &params, 11).unwrap();
            let b = couple_interval(&log.clone(), &params, 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn clt_reduction_with_gaussian_marks() {
        // Gaussian nu + comonotone: W^k = sqrt(delta / n) * (sum of frozen
        // marks), the classical CLT rescaling.
        let params = ModelParams {
            jump_law: JumpLaw::StandardGaussian,
            coupler: CouplerMethod::Comonotone,
            rate_fn: RateFunction::constant(1.5),
            n_neurons: 32,
            ..ModelParams::default()
        };
        let (_, logs) = simulate(&params, 6).unwrap();
        let delta = params.delta();
        for log in logs.iter().filter(|l| !l.partial && l.n_frozen() > 0) {
            let c = couple_interval(log, &params, 6).unwrap();
            let n = log.n_frozen() as f64;
            let s: f64 = log.frozen_marks().iter().sum();
            assert!((c.w_increment - (delta / n).sqrt() * s).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_of_zero_k_stats() {
        let couplings: Vec<IntervalCoupling> = (0..10)
            .map(|k| IntervalCoupling {
                k,
                n_frozen: 2,
                w_increment: 0.1,
                k_stat: 0.0,
                e_stat: 1.0,
                b_values: vec![0.05, 0.1],
            })
            .collect();
        let s = coupling_error_summary(&couplings, 1.0, 100);
        assert_eq!(s.mean_k_stat, 0.0);
        assert_eq!(s.mean_scaled_k, 0.0);
        assert!(s.mean_e_stat > 0.0);
    }
}
