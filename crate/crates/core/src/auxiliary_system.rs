//! The mean-field auxiliary system driven by the constructed Brownian path
//! and by the same candidate randomness as the finite system.
//!
//! Between substeps the update is an exponential integrator for the linear
//! drift with the diffusion coefficient frozen at the substep start:
//! `X_{t+h} = X_t e^{-alpha h} + sqrt(fbar(X_t) / N) * dW`. Candidates are
//! processed in time order interleaved with the substeps; acceptance
//! evaluates `f` at the state evolved to the candidate time, and an accepted
//! candidate resets its neuron to 0.

use crate::coupling::{build_brownian, couple_interval, BrownianPath, IntervalCoupling};
use crate::finite_system::{simulate, IntervalLog, SystemPath};
use crate::model::{flow, ModelParams};
use crate::{Error, Result};

/// Trajectory of the auxiliary system at substep resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPath {
    pub n_neurons: usize,
    pub alpha: f64,
    pub horizon: f64,
    /// Accepted reset events (time, neuron).
    pub events: Vec<(f64, usize)>,
    /// Per neuron, (time, value) anchors at substep boundaries and resets.
    pub segment_starts: Vec<Vec<(f64, f64)>>,
}

impl AuxPath {
    /// Value of one neuron at `t`; between anchors values follow the pure
    /// exponential flow, diffusion increments land on substep boundaries.
    pub fn value_at(&self, neuron: usize, t: f64, right_limit: bool) -> f64 {
        let seg = &self.segment_starts[neuron];
        let mut idx = seg.partition_point(|&(ts, _)| ts <= t);
        if !right_limit && idx > 1 && seg[idx - 1].0 == t {
            idx -= 1;
        }
        let (t0, v0) = seg[idx - 1];
        flow(v0, t - t0, self.alpha)
    }

    pub fn state_at(&self, t: f64, right_limit: bool) -> Result<Vec<f64>> {
        if t < 0.0 || t > self.horizon {
            return Err(Error::OutOfRange { t, horizon: self.horizon });
        }
        Ok((0..self.n_neurons)
            .map(|i| self.value_at(i, t, right_limit))
            .collect())
    }
}

/// A finite run, its coupled auxiliary run, and the machinery in between.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub replicate: u64,
    pub finite: SystemPath,
    pub aux: AuxPath,
    pub brownian: BrownianPath,
    pub couplings: Vec<IntervalCoupling>,
    pub logs: Vec<IntervalLog>,
}

/// Simulates the auxiliary system on the substep grid of `w`, consuming the
/// candidate events recorded in `logs` (identical times, levels and marks as
/// the finite run) and the shared initial vector.
pub fn simulate_aux(
    params: &ModelParams,
    w: &BrownianPath,
    logs: &[IntervalLog],
    init: &[f64],
) -> Result<AuxPath> {
    let n = params.n_neurons;
    assert_eq!(init.len(), n);
    let inv_n = 1.0 / n as f64;

    let mut anchors: Vec<(f64, f64)> = init.iter().map(|&x| (0.0, x)).collect();
    let mut segment_starts: Vec<Vec<(f64, f64)>> = anchors.iter().map(|a| vec![*a]).collect();
    let mut events = Vec::new();

    // All candidates in global time order (interval logs are consecutive and
    // internally sorted).
    let candidates: Vec<_> = logs.iter().flat_map(|l| l.candidates.iter()).collect();
    let mut next_candidate = 0usize;

    // Coefficient frozen per delta-interval when requested.
    let mut frozen_coef: Option<(usize, f64)> = None;

    for (t0, t1, dw) in w.increments() {
        let fbar_mean = |anchors: &[(f64, f64)], at: f64| -> f64 {
            anchors
                .iter()
                .map(|&(ta, va)| params.rate_fn.eval(flow(va, at - ta, params.alpha)))
                .sum::<f64>()
                * inv_n
        };
        let coef = if params.aux_freeze_per_delta {
            let k = (t0 / params.delta() + 1e-9).floor() as usize;
            match frozen_coef {
                Some((fk, c)) if fk == k => c,
                _ => {
                    let c = fbar_mean(&anchors, t0).sqrt();
                    frozen_coef = Some((k, c));
                    c
                }
            }
        } else {
            fbar_mean(&anchors, t0).sqrt()
        };

        // Candidates inside [t0, t1).
        while next_candidate < candidates.len() && candidates[next_candidate].time < t1 {
            let c = candidates[next_candidate];
            next_candidate += 1;
            if c.time < t0 {
                continue;
            }
            let (ta, va) = anchors[c.neuron];
            let x_pre = flow(va, c.time - ta, params.alpha);
            if c.z <= params.rate_fn.eval(x_pre) {
                anchors[c.neuron] = (c.time, 0.0);
                segment_starts[c.neuron].push((c.time, 0.0));
                events.push((c.time, c.neuron));
            }
        }

        // Substep end: decay plus the common diffusion kick.
        for (j, anchor) in anchors.iter_mut().enumerate() {
            let v = flow(anchor.1, t1 - anchor.0, params.alpha) + coef * dw;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("aux neuron {j} at time {t1}")));
            }
            *anchor = (t1, v);
            segment_starts[j].push((t1, v));
        }
    }

    Ok(AuxPath {
        n_neurons: n,
        alpha: params.alpha,
        horizon: params.horizon,
        events,
        segment_starts,
    })
}

/// Runs the whole pipeline for one replicate: finite simulation, interval
/// couplings, Brownian concatenation, auxiliary simulation.
pub fn coupled_run(params: &ModelParams, replicate: u64) -> Result<CoupledRun> {
    let (finite, logs) = simulate(params, replicate)?;
    // The trailing partial interval is coupled too (over its truncated
    // window), so the driving noise is coupled on the whole horizon.
    let couplings: Vec<IntervalCoupling> = logs
        .iter()
        .map(|l| couple_interval(l, params, replicate))
        .collect::<Result<_>>()?;
    let brownian = build_brownian(&couplings, params, replicate, params.horizon);
    let init = finite.initial_state();
    let aux = simulate_aux(params, &brownian, &logs, &init)?;
    Ok(CoupledRun { replicate, finite, aux, brownian, couplings, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmt::CouplerMethod;
    use crate::model::{JumpLaw, ModelParams, RateFunction};

    fn zero_brownian(params: &ModelParams, horizon: f64) -> BrownianPath {
        let delta = params.delta();
        let m = params.substeps_per_delta;
        let mut times = vec![0.0];
        let mut t = 0.0;
        let h = delta / m as f64;
        while t < horizon - 1e-12 {
            t = (t + h).min(horizon);
            times.push(t);
        }
        BrownianPath {
            delta,
            substeps_per_delta: m,
            grid_values: vec![0.0],
            values: vec![0.0; times.len()],
            times,
        }
    }

    #[test]
    fn pure_decay_without_noise_or_events() {
        let params = ModelParams { n_neurons: 4, ..ModelParams::default() };
        let w = zero_brownian(&params, params.horizon);
        let init = vec![0.5, -0.25, 1.0, 0.0];
        let aux = simulate_aux(&params, &w, &[], &init).unwrap();
        assert!(aux.events.is_empty());
        for (i, &x0) in init.iter().enumerate() {
            let t = 0.73;
            let expect = x0 * (-params.alpha * t).exp();
            assert!((aux.value_at(i, t, false) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_f_matches_closed_form_recursion() {
        // With f == c the diffusion coefficient is sqrt(c) at every substep,
        // so the no-reset path is an explicit recursion in (init, W).
        let c_rate = 1.5;
        let params = ModelParams {
            n_neurons: 8,
            rate_fn: RateFunction::constant(c_rate),
            ..ModelParams::default()
        };
        let run = coupled_run(&params, 5).unwrap();
        let w = &run.brownian;
        let init = run.finite.initial_state();
        for neuron in 0..8 {
            let mut x = init[neuron];
            let mut t_prev = 0.0;
            let mut reset_iter = run.aux.events.iter().filter(|(_, i)| *i == neuron).peekable();
            for (t0, t1, dw) in w.increments() {
                let mut v = x;
                let mut from = t_prev;
                while let Some(&&(rt, _)) = reset_iter.peek() {
                    if rt < t1 && rt >= t0 {
                        v = 0.0;
                        from = rt;
                        reset_iter.next();
                    } else {
                        break;
                    }
                }
                x = v * (-params.alpha * (t1 - from)).exp() + c_rate.sqrt() * dw;
                t_prev = t1;
                let got = run.aux.value_at(neuron, t1, true);
                assert!((got - x).abs() < 1e-10, "neuron {neuron} at {t1}: {got} vs {x}");
            }
        }
    }

    #[test]
    fn shared_randomness_audit() {
        // Finite and auxiliary runs consume the identical candidate (time, z)
        // pairs; acceptance decisions may differ.
        let params = ModelParams { n_neurons: 16, ..ModelParams::default() };
        let run = coupled_run(&params, 2).unwrap();
        // Aux reset times must be a subset of logged candidate times.
        let candidate_times: Vec<f64> = run
            .logs
            .iter()
            .flat_map(|l| l.candidates.iter().map(|c| c.time))
            .collect();
        for (t, _) in &run.aux.events {
            assert!(candidate_times.iter().any(|ct| ct == t));
        }
        // And the finite event times likewise.
        for e in &run.finite.events {
            assert!(candidate_times.iter().any(|ct| *ct == e.time));
        }
    }

    #[test]
    fn determinism_of_coupled_run() {
        let params = ModelParams { n_neurons: 16, ..ModelParams::default() };
        let a = coupled_run(&params, 3).unwrap();
        let b = coupled_run(&params, 3).unwrap();
        assert_eq!(a.finite, b.finite);
        assert_eq!(a.aux, b.aux);
        assert_eq!(a.brownian, b.brownian);
        assert_eq!(a.couplings, b.couplings);
    }

    #[test]
    fn zero_horizon_like_distance() {
        // horizon -> tiny: finite and aux share the initial state exactly.
        let params = ModelParams {
            n_neurons: 4,
            horizon: 1e-9,
            delta: Some(1e-10),
            ..ModelParams::default()
        };
        let run = coupled_run(&params, 0).unwrap();
        let init = run.finite.initial_state();
        for i in 0..4 {
            assert_eq!(run.aux.segment_starts[i][0].1, init[i]);
        }
    }

    #[test]
    fn ou_variance_with_constant_rate() {
        // No-reset windows of X~^1 have OU variance c (1 - e^{-2 alpha t}) / (2 alpha).
        let c_rate = 1.5;
        let params = ModelParams {
            n_neurons: 64,
            rate_fn: RateFunction::constant(c_rate),
            jump_law: JumpLaw::StandardGaussian,
            coupler: CouplerMethod::Comonotone,
            init_law: crate::model::InitLaw::PointMass { value: 0.0 },
            horizon: 0.5,
            delta: Some(0.125),
            substeps_per_delta: 8,
            ..ModelParams::default()
        };
        let t_probe = 0.25;
        let mut values = Vec::new();
        for rep in 0..2000 {
            let run = coupled_run(&params, rep).unwrap();
            // Only neurons with no reset before t_probe follow the pure OU.
            for neuron in 0..params.n_neurons {
                let reset = run.aux.events.iter().any(|(t, i)| *i == neuron && *t <= t_probe);
                if !reset {
                    values.push(run.aux.value_at(neuron, t_probe, true));
                    break; // one neuron per replicate keeps samples independent
                }
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = c_rate * (1.0 - (-2.0 * params.alpha * t_probe).exp()) / (2.0 * params.alpha);
        // Resets truncate the window, so allow a generous 4 sigma band plus
        // the Euler bias.
        let band = 4.0 * target * (2.0 / n).sqrt() + 0.05 * target;
        assert!((var - target).abs() < band, "var {var} vs OU {target} +- {band}");
    }
}
