//! Exact event-driven simulation of the N-neuron system.
//!
//! Between accepted events every potential follows the closed-form
//! exponential decay, so there is no time-discretization error in the finite
//! system itself. Candidates arrive at the dominating rate `f_max` per neuron
//! and are thinned: a candidate at time `s` for neuron `i` is accepted iff
//! its level `z` is at most `f(X^i_{s-})`. On acceptance the spiker resets to
//! 0 and every other neuron receives the kick `u / sqrt(N)`.

use crate::model::{flow, validate_assumptions, ModelParams};
use crate::noise::{candidates_in, CandidateEvent, StreamKey, StreamPurpose};
use crate::{Error, Result};

/// One accepted spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub time: f64,
    pub spiker: usize,
    /// The jump mark `u`; every other neuron moved by `u / sqrt(N)`.
    pub mark: f64,
}

/// A candidate together with both acceptance verdicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedCandidate {
    pub time: f64,
    pub neuron: usize,
    pub z: f64,
    pub u: f64,
    /// `z <= f(X^i_{s-})`, against the live state.
    pub accepted_live: bool,
    /// `z <= f(X^i_{k delta})`, against the interval-start snapshot.
    pub accepted_frozen: bool,
}

/// Per-interval record used by the coupling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalLog {
    pub k: usize,
    /// Interval `(k delta, min((k+1) delta, horizon)]` endpoints.
    pub t0: f64,
    pub t1: f64,
    /// Snapshot `X^N_{k delta}` the frozen flags were computed against.
    pub snapshot: Vec<f64>,
    pub candidates: Vec<LoggedCandidate>,
    /// A trailing interval shorter than delta, excluded from the coupling sum.
    pub partial: bool,
}

impl IntervalLog {
    /// Number of frozen-accepted candidates, `N^k_delta`.
    pub fn n_frozen(&self) -> usize {
        self.candidates.iter().filter(|c| c.accepted_frozen).count()
    }

    /// Marks of the frozen-accepted candidates in candidate-time order.
    pub fn frozen_marks(&self) -> Vec<f64> {
        self.candidates
            .iter()
            .filter(|c| c.accepted_frozen)
            .map(|c| c.u)
            .collect()
    }

    /// `\bar f(X^N_{k delta}) = sum_i f(x_i)` over the snapshot.
    pub fn fbar(&self, params: &ModelParams) -> f64 {
        self.snapshot.iter().map(|x| params.rate_fn.eval(*x)).sum()
    }
}

/// Piecewise-exact trajectory of one N-neuron system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPath {
    pub n_neurons: usize,
    pub alpha: f64,
    pub horizon: f64,
    /// Accepted events in time order.
    pub events: Vec<SpikeEvent>,
    /// Per neuron, the (time, value) pairs at which its exponential segment
    /// restarts; the first entry is the initial condition at time 0.
    pub segment_starts: Vec<Vec<(f64, f64)>>,
}

impl SystemPath {
    /// Exact value of one neuron at time `t`. With `right_limit` the value
    /// just after any event at `t`, otherwise the left limit.
    pub fn value_at(&self, neuron: usize, t: f64, right_limit: bool) -> f64 {
        let seg = &self.segment_starts[neuron];
        let mut idx = seg.partition_point(|&(ts, _)| ts <= t);
        if !right_limit && idx > 1 && seg[idx - 1].0 == t {
            idx -= 1;
        }
        let (t0, v0) = seg[idx - 1];
        flow(v0, t - t0, self.alpha)
    }

    /// Full state vector at `t`.
    pub fn state_at(&self, t: f64, right_limit: bool) -> Result<Vec<f64>> {
        if t < 0.0 || t > self.horizon {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        Ok((0..self.n_neurons)
            .map(|i| self.value_at(i, t, right_limit))
            .collect())
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.segment_starts.iter().map(|s| s[0].1).collect()
    }
}

/// Simulates one replicate with the identity stream permutation.
pub fn simulate(params: &ModelParams, replicate: u64) -> Result<(SystemPath, Vec<IntervalLog>)> {
    let perm: Vec<usize> = (0..params.n_neurons).collect();
    simulate_permuted(params, replicate, &perm)
}

/// Simulation with neuron `i` reading the streams of neuron `perm[i]`.
/// Permuting the streams together with the neuron labels must produce the
/// identically permuted path, which the exchangeability test checks bitwise.
pub fn simulate_permuted(
    params: &ModelParams,
    replicate: u64,
    perm: &[usize],
) -> Result<(SystemPath, Vec<IntervalLog>)> {
    let report = validate_assumptions(params);
    if !report.pass() {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::Assumptions(failed.join("; ")));
    }
    let n = params.n_neurons;
    assert_eq!(perm.len(), n);

    let delta = params.delta();
    let horizon = params.horizon;
    let f_max = params.rate_fn.f_max;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();

    let key = |purpose: StreamPurpose, neuron: usize, interval: usize| {
        StreamKey::new(params.base_seed, replicate, purpose, perm[neuron] as u64, interval as u64)
    };

    // Initial potentials, one draw per neuron from its own stream.
    let mut anchors: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut rng = key(StreamPurpose::Init, i, 0).rng();
            (0.0, params.init_law.sample(crate::noise::open_u01(&mut rng)))
        })
        .collect();
    let mut segment_starts: Vec<Vec<(f64, f64)>> = anchors.iter().map(|a| vec![*a]).collect();
    let mut events = Vec::new();
    let mut logs = Vec::new();

    let mut k = 0usize;
    while (k as f64) * delta < horizon {
        let t0 = k as f64 * delta;
        let t1 = ((k + 1) as f64 * delta).min(horizon);
        let partial = (k + 1) as f64 * delta > horizon + 1e-12 * delta;

        // Interval-start snapshot; all events at times <= t0 are already
        // applied (grid-point events belong to the earlier interval).
        let snapshot: Vec<f64> = anchors
            .iter()
            .map(|&(ta, va)| flow(va, t0 - ta, params.alpha))
            .collect();
        let frozen_rates: Vec<f64> = snapshot.iter().map(|x| params.rate_fn.eval(*x)).collect();

        // Candidates of every neuron on this window, merged in time order
        // with ties broken by neuron index.
        let mut candidates: Vec<CandidateEvent> = (0..n)
            .flat_map(|i| {
                candidates_in(
                    key(StreamPurpose::Candidates, i, k),
                    (t0, t1),
                    f_max,
                    &params.jump_law,
                )
                .into_iter()
                .map(move |c| CandidateEvent { neuron: i, ..c })
            })
            .collect();
        candidates.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.neuron.cmp(&b.neuron)));

        let mut logged = Vec::with_capacity(candidates.len());
        for c in candidates {
            let (ta, va) = anchors[c.neuron];
            let x_pre = flow(va, c.time - ta, params.alpha);
            let accepted_live = c.z <= params.rate_fn.eval(x_pre);
            let accepted_frozen = c.z <= frozen_rates[c.neuron];
            logged.push(LoggedCandidate {
                time: c.time,
                neuron: c.neuron,
                z: c.z,
                u: c.u,
                accepted_live,
                accepted_frozen,
            });
            if accepted_live {
                let kick = c.u * inv_sqrt_n;
                for j in 0..n {
                    let (taj, vaj) = anchors[j];
                    let v = if j == c.neuron {
                        0.0
                    } else {
                        flow(vaj, c.time - taj, params.alpha) + kick
                    };
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "neuron {j} at time {} in replicate {replicate}",
                            c.time
                        )));
                    }
                    anchors[j] = (c.time, v);
                    segment_starts[j].push((c.time, v));
                }
                events.push(SpikeEvent { time: c.time, spiker: c.neuron, mark: c.u });
            }
        }

        logs.push(IntervalLog { k, t0, t1, snapshot, candidates: logged, partial });
        k += 1;
    }

    let path = SystemPath {
        n_neurons: n,
        alpha: params.alpha,
        horizon,
        events,
        segment_starts,
    };
    Ok((path, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitLaw, JumpLaw, RateFunction};

    fn base_params(n: usize) -> ModelParams {
        ModelParams { n_neurons: n, ..ModelParams::default() }
    }

    #[test]
    fn pure_decay_when_rate_tiny() {
        let params = ModelParams {
            n_neurons: 2,
            rate_fn: RateFunction::constant(0.01),
            horizon: 1.0,
            delta: Some(0.5),
            ..ModelParams::default()
        };
        let mut decayed = 0;
        for rep in 0..50 {
            let (path, _) = simulate(&params, rep).unwrap();
            if path.events.is_empty() {
                decayed += 1;
                let x0 = path.initial_state();
                for i in 0..2 {
                    let expect = x0[i] * (-params.alpha * 0.7f64).exp();
                    assert!((path.value_at(i, 0.7, false) - expect).abs() < 1e-15);
                }
            }
        }
        assert!(decayed > 40, "most replicates should have no events");
    }

    #[test]
    fn kick_magnitude_is_u_over_sqrt_n() {
        let params = ModelParams {
            n_neurons: 2,
            alpha: 0.0,
            rate_fn: RateFunction::constant(1.5),
            horizon: 2.0,
            delta: Some(0.5),
            ..ModelParams::default()
        };
        let (path, _) = simulate(&params, 3).unwrap();
        let first = path.events.first().expect("at least one event");
        let other = 1 - first.spiker;
        let before = path.value_at(other, first.time, false);
        let after = path.value_at(other, first.time, true);
        let expected = first.mark / 2f64.sqrt();
        assert!((after - before - expected).abs() < 1e-15);
        // Spiker resets to 0 (right limit at the event time).
        assert_eq!(path.value_at(first.spiker, first.time, true), 0.0);
    }

    #[test]
    fn event_count_matches_constant_rate_thinning() {
        let params = ModelParams {
            n_neurons: 100,
            rate_fn: RateFunction::constant(1.5),
            horizon: 1.0,
            ..ModelParams::default()
        };
        let reps = 200;
        let total: usize = (0..reps)
            .map(|rep| simulate(&params, rep).unwrap().0.events.len())
            .sum();
        let mean = total as f64 / reps as f64;
        // Poisson(150) mean over 200 replicates, 4 sigma band.
        let band = 4.0 * (150.0f64 / reps as f64).sqrt();
        assert!((mean - 150.0).abs() < band, "mean {mean}");
    }

    #[test]
    fn state_at_reproduces_flow_between_events() {
        let params = base_params(8);
        let (path, _) = simulate(&params, 1).unwrap();
        for i in 0..8 {
            let seg = &path.segment_starts[i];
            for w in seg.windows(2) {
                let mid = 0.5 * (w[0].0 + w[1].0);
                let expect = flow(w[0].1, mid - w[0].0, params.alpha);
                assert_eq!(path.value_at(i, mid, false), expect);
            }
        }
        assert!(path.state_at(params.horizon + 0.1, false).is_err());
        let t0_state = path.state_at(0.0, false).unwrap();
        assert_eq!(t0_state, path.initial_state());
    }

    #[test]
    fn permutation_equivariance_bitwise() {
        let params = base_params(6);
        let identity: Vec<usize> = (0..6).collect();
        let perm = vec![3usize, 5, 0, 2, 4, 1];
        let (a, _) = simulate_permuted(&params, 7, &identity).unwrap();
        let (b, _) = simulate_permuted(&params, 7, &perm).unwrap();
        assert_eq!(a.events.len(), b.events.len());
        for (ea, eb) in a.events.iter().zip(&b.events) {
            assert_eq!(ea.time, eb.time);
            assert_eq!(ea.mark, eb.mark);
            assert_eq!(perm[eb.spiker], ea.spiker);
        }
        for i in 0..6 {
            assert_eq!(b.segment_starts[i], a.segment_starts[perm[i]]);
        }
    }

    #[test]
    fn determinism_bitwise() {
        let params = base_params(16);
        let (a, la) = simulate(&params, 9).unwrap();
        let (b, lb) = simulate(&params, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn frozen_count_matches_definition() {
        let params = base_params(32);
        let (_, logs) = simulate(&params, 2).unwrap();
        for log in &logs {
            let direct = log.candidates.iter().filter(|c| c.accepted_frozen).count();
            assert_eq!(log.n_frozen(), direct);
            assert_eq!(log.frozen_marks().len(), direct);
        }
        // Last interval may be partial; all others span exactly delta.
        let delta = params.delta();
        for log in &logs {
            if !log.partial {
                assert!((log.t1 - log.t0 - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let params = ModelParams {
            rate_fn: RateFunction::constant(0.0),
            ..ModelParams::default()
        };
        assert!(matches!(simulate(&params, 0), Err(Error::Assumptions(_))));
        let params = ModelParams {
            init_law: InitLaw::PointMass { value: 0.0 },
            jump_law: JumpLaw::Lattice { support: vec![-1.0, 2.0], probs: vec![0.5, 0.5] },
            ..ModelParams::default()
        };
        assert!(simulate(&params, 0).is_err());
    }
}
