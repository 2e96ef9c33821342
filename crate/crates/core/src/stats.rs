//! Monte Carlo estimators and hypothesis checks: the strong convergence rate
//! study, the realized coupling remainder, auxiliary concentration and
//! increment bounds, and small distributional test utilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::auxiliary_system::{coupled_run, CoupledRun};
use crate::model::{DistanceMap, ModelParams};
use crate::noise::{sample_poisson, StreamKey, StreamPurpose};
use crate::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard normal quantile. Saturates at the representable extremes for
/// p in {0, 1}.
pub fn normal_inverse_cdf(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16))
}

/// Kolmogorov-Smirnov sup statistic of `samples` against N(mean, std^2).
pub fn ks_statistic_normal(samples: &[f64], mean: f64, std: f64) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let c = normal_cdf((x - mean) / std);
        d = d.max(((i + 1) as f64 / n - c).abs()).max((c - i as f64 / n).abs());
    }
    d
}

/// Asymptotic 1% KS critical value.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_statistic(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e).powi(2) / e)
        .sum()
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_pvalue(stat: f64, dof: f64) -> f64 {
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Sup of |a(X^1) - a(X~^1)| over the finite evaluation set, plus the flow
/// modulus bounding what the grid can miss between evaluation points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SupDistance {
    pub value: f64,
    /// alpha * max|x| * h over one substep: bound on the inter-point drift.
    pub grid_modulus: f64,
}

pub fn sup_distance_detailed(run: &CoupledRun, a: &DistanceMap) -> SupDistance {
    let mut times: Vec<f64> = run.brownian.times.clone();
    times.extend(run.finite.events.iter().map(|e| e.time));
    times.extend(run.aux.events.iter().map(|(t, _)| *t));
    times.sort_by(|x, y| x.total_cmp(y));
    times.dedup();

    let mut sup: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for &t in &times {
        for right in [false, true] {
            let x = run.finite.value_at(0, t, right);
            let y = run.aux.value_at(0, t, right);
            sup = sup.max((a.eval(x, 0) - a.eval(y, 0)).abs());
            max_abs = max_abs.max(x.abs()).max(y.abs());
        }
    }
    let h = run.brownian.delta / run.brownian.substeps_per_delta as f64;
    SupDistance { value: sup, grid_modulus: run.finite.alpha * max_abs * h }
}

pub fn sup_distance(run: &CoupledRun, a: &DistanceMap) -> f64 {
    sup_distance_detailed(run, a).value
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    #[serde(rename = "R")]
    pub replicates: u64,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub c_hat: f64,
    pub degenerate: bool,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub records: Vec<RateRecord>,
    pub fit: RateFit,
}

/// The theoretical error envelope (ln N)^{1/5} N^{-1/10}, up to the constant.
pub fn rate_envelope(n: usize) -> f64 {
    let nf = n as f64;
    nf.ln().powf(0.2) * nf.powf(-0.1)
}

fn mean_std_ci(values: &[f64]) -> (f64, f64, f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = 1.96 * std / r.sqrt();
    (mean, std, mean - half, mean + half)
}

/// One record of the rate study: R coupled replicates at a given N,
/// aggregated sup-distance. Replicates run in parallel, results are folded
/// in replicate order so output bytes never depend on thread scheduling.
pub fn rate_record(base: &ModelParams, n: usize, replicates: u64) -> Result<RateRecord> {
    let params = ModelParams { n_neurons: n, ..base.clone() };
    params.check_structure()?;
    let a = DistanceMap::new(params.epsilon)?;
    let values: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| coupled_run(&params, rep).map(|run| sup_distance(&run, &a)))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std, ci_low, ci_high) = mean_std_ci(&values);
    Ok(RateRecord { n, delta: params.delta(), replicates, mean, std, ci_low, ci_high })
}

/// Full rate study over a list of system sizes. `on_record` fires after each
/// completed N so callers can persist partial results.
pub fn mc_rate_study(
    base: &ModelParams,
    n_values: &[usize],
    replicates: u64,
    mut on_record: impl FnMut(&RateRecord),
) -> Result<RateStudyResult> {
    if replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    let mut records = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let rec = rate_record(base, n, replicates)?;
        on_record(&rec);
        records.push(rec);
    }
    let points: Vec<(f64, f64)> =
        records.iter().map(|r| (r.n as f64, r.mean)).collect();
    let fit = match fit_rate(&points) {
        Ok(f) => f,
        Err(Error::TooFewPoints { .. }) => RateFit {
            slope: None,
            slope_ci: None,
            c_hat: points
                .iter()
                .map(|&(n, e)| e / rate_envelope(n as usize))
                .fold(0.0, f64::max),
            degenerate: true,
            residuals: Vec::new(),
        },
        Err(e) => return Err(e),
    };
    Ok(RateStudyResult { records, fit })
}

/// OLS of ln error against ln N, plus the envelope constant
/// C = max_N error(N) / ((ln N)^{1/5} N^{-1/10}).
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints { need: 3, got: points.len() });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, e)| (n.ln(), e.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ols_residuals: Vec<f64> =
        logs.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    let se = (ols_residuals.iter().map(|r| r * r).sum::<f64>() / (m - 2.0) / sxx).sqrt();
    let c_hat = points
        .iter()
        .map(|&(n, e)| e / rate_envelope(n as usize))
        .fold(0.0, f64::max);
    // Residuals of the envelope fit: log deviation from C * envelope(N).
    let residuals: Vec<f64> = points
        .iter()
        .map(|&(n, e)| e.ln() - (c_hat * rate_envelope(n as usize)).ln())
        .collect();
    Ok(RateFit {
        slope: Some(slope),
        slope_ci: Some((slope - 1.96 * se, slope + 1.96 * se)),
        c_hat,
        degenerate: false,
        residuals,
    })
}

/// Realized remainder |R^N_{0,t}| of one coupled run: the cumulative
/// small-jump contribution to a(X^1) minus the substep-grid approximations
/// of its Ito-integral and quadratic-variation representations.
pub fn remainder_probe(run: &CoupledRun, a: &DistanceMap, params: &ModelParams) -> f64 {
    let n = params.n_neurons as f64;
    let sqrt_n = n.sqrt();

    // Small-jump sum: every accepted spike of j != 1 kicks neuron 1 by
    // u/sqrt(N).
    let mut s_n = 0.0;
    for ev in &run.finite.events {
        if ev.spiker == 0 {
            continue;
        }
        let x1 = run.finite.value_at(0, ev.time, false);
        s_n += a.eval(x1 + ev.mark / sqrt_n, 0) - a.eval(x1, 0);
    }

    let mut ito = 0.0;
    let mut drift = 0.0;
    for (t0, t1, dw) in run.brownian.increments() {
        let state = run.finite.state_at(t0, true).expect("grid point on horizon");
        let fbar_mean =
            state.iter().map(|&x| params.rate_fn.eval(x)).sum::<f64>() / n;
        let x1 = state[0];
        ito += a.eval(x1, 1) * fbar_mean.sqrt() * dw;
        drift += 0.5 * a.eval(x1, 2) * fbar_mean * (t1 - t0);
    }
    (s_n - ito - drift).abs()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderProbe {
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Monte Carlo aggregate of the realized remainder over `replicates` runs.
pub fn remainder_study(params: &ModelParams, replicates: u64) -> Result<RemainderProbe> {
    let a = DistanceMap::new(params.epsilon)?;
    let values: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| coupled_run(params, rep).map(|run| remainder_probe(&run, &a, params)))
        .collect::<Result<Vec<_>>>()?;
    let (mean, _, ci_low, ci_high) = mean_std_ci(&values);
    Ok(RemainderProbe { values, mean, ci_low, ci_high })
}

/// h(x) = (1+x) ln(1+x) - x, the Poisson large deviation rate function.
pub fn poisson_tail_h(x: f64) -> f64 {
    (1.0 + x) * x.ln_1p() - x
}

#[derive(Debug, Clone, Serialize)]
pub struct PoissonDeviationCheck {
    pub empirical: f64,
    pub bound: f64,
    pub t: f64,
    pub eps: f64,
}

/// Empirical probability that a frozen interval count with constant rate
/// f_min falls at or below half its mean, against the exponential bound
/// 2 exp(-t h(eps/t)) with t = f_max N delta, eps = f_min N delta / 2.
pub fn poisson_deviation_check(
    n_samples: u64,
    n_neurons: usize,
    delta: f64,
    f_min: f64,
    f_max: f64,
    seed: u64,
) -> PoissonDeviationCheck {
    let mean = f_min * n_neurons as f64 * delta;
    let threshold = mean / 2.0;
    let t = f_max * n_neurons as f64 * delta;
    let eps = threshold;
    let mut rng = StreamKey {
        base_seed: seed,
        replicate: 0,
        purpose: StreamPurpose::Candidates,
        neuron: 0,
        interval: 0,
    }
    .rng();
    let mut hits = 0u64;
    for _ in 0..n_samples {
        if sample_poisson(&mut rng, mean) as f64 <= threshold {
            hits += 1;
        }
    }
    PoissonDeviationCheck {
        empirical: hits as f64 / n_samples as f64,
        bound: 2.0 * (-t * poisson_tail_h(eps / t)).exp(),
        t,
        eps,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementCheck {
    /// (delta, mean |X_{tau(s)} - X_s|) pairs.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
}

/// Mean gap between the finite path and its delta-skeleton, over a fixed
/// probe grid and `replicates` runs per delta, with the log-log OLS slope.
pub fn increment_bound_check(
    base: &ModelParams,
    deltas: &[f64],
    replicates: u64,
) -> Result<IncrementCheck> {
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let params = ModelParams { delta: Some(delta), ..base.clone() };
        let gaps: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let (path, _) = crate::finite_system::simulate(&params, rep)?;
                let mut acc = 0.0;
                let mut count = 0u64;
                let probes = 64usize;
                for i in 1..=probes {
                    let s = params.horizon * i as f64 / probes as f64;
                    let tau = (s / delta).floor() * delta;
                    let gap = (path.value_at(0, tau.min(s), true)
                        - path.value_at(0, s, true))
                    .abs();
                    acc += gap;
                    count += 1;
                }
                Ok(acc / count as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        points.push((delta, gaps.iter().sum::<f64>() / gaps.len() as f64));
    }
    if points.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: points.len() });
    }
    let logs: Vec<(f64, f64)> =
        points.iter().map(|&(d, g)| (d.ln(), g.max(1e-300).ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(IncrementCheck { points, slope: sxy / sxx })
}
