//! Walk-to-Brownian couplers.
//!
//! Given a realized centred random walk `S` with jump law `nu` and an
//! independent uniform stream, these couplers produce Brownian values `B` at
//! integer times such that each `B_m` is marginally a Gaussian walk while
//! staying close to `S`. The dyadic conditional-quantile scheme targets a
//! sup difference `|S_m - B_m|` that grows only logarithmically in `m`; the
//! comonotone and independent couplers serve as its oracles.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::model::JumpLaw;
use crate::noise::{open_u01, StreamKey};
use crate::stats::normal_inverse_cdf;
use crate::{Error, Result};

/// Maximum lattice table size for exact convolution laws.
const LATTICE_CAP: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplerMethod {
    /// Fresh Gaussian walk, independent of `S`. Baseline: the sup statistic
    /// grows like `sqrt(n) / ln n`.
    Independent,
    /// Per-increment quantile transform `Phi^{-1}(F_nu^{rand}(U_m))` with
    /// uniform randomization on atoms.
    Comonotone,
    /// Top-scale quantile coupling of `S_{2^M}` against `N(0, 2^M)` followed
    /// by recursive conditional-quantile coupling of dyadic midpoints against
    /// Brownian bridge midpoints.
    Dyadic,
}

/// A realized walk together with its coupled Brownian values.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkCoupling {
    /// Marks `U_1..U_n`.
    pub marks: Vec<f64>,
    /// Partial sums `S_1..S_n` (`S_0 = 0` is implicit).
    pub walk: Vec<f64>,
    /// Coupled Brownian values `B_1..B_n`.
    pub brownian: Vec<f64>,
    /// `max_m |S_m - B_m| / ln(m v 2)`.
    pub sup_stat: f64,
}

impl WalkCoupling {
    pub fn len(&self) -> usize {
        self.walk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walk.is_empty()
    }

    /// Terminal gap `|S_n - B_n|`, the per-interval KMT error `K`.
    pub fn terminal_gap(&self) -> f64 {
        match (self.walk.last(), self.brownian.last()) {
            (Some(s), Some(b)) => (s - b).abs(),
            _ => 0.0,
        }
    }
}

/// `max_{1 <= m <= n} |S_m - B_m| / ln(m v 2)`; 0 for empty input.
pub fn kmt_sup_stat(walk: &[f64], brownian: &[f64]) -> Result<f64> {
    if walk.len() != brownian.len() {
        return Err(Error::LengthMismatch { walk: walk.len(), brownian: brownian.len() });
    }
    let mut sup: f64 = 0.0;
    for (m, (s, b)) in walk.iter().zip(brownian).enumerate() {
        let denom = ((m + 1).max(2) as f64).ln();
        sup = sup.max((s - b).abs() / denom);
    }
    Ok(sup)
}

/// Exact probability table of a lattice-supported law, the numerical carrier
/// for the law of `S_n` used by conditional quantiles.
#[derive(Debug, Clone)]
pub struct LatticeLaw {
    /// Value of the first lattice point.
    pub offset: f64,
    /// Lattice spacing.
    pub step: f64,
    /// Probability weights, one per lattice point.
    pub weights: Vec<f64>,
}

impl LatticeLaw {
    /// Lattice carrier of a single jump, or an error for laws without one.
    pub fn from_jump_law(law: &JumpLaw) -> Result<Self> {
        let atoms = law
            .atoms()
            .ok_or_else(|| Error::NoLatticeCarrier("standard-gaussian".into()))?;
        if atoms.len() == 1 {
            return Ok(Self { offset: atoms[0].0, step: 1.0, weights: vec![1.0] });
        }
        // Common lattice step: float gcd of support differences.
        let base = atoms[0].0;
        let mut step = atoms[1].0 - base;
        for (x, _) in &atoms[2..] {
            step = fgcd(step, x - base);
        }
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::NoLatticeCarrier("support has no common lattice step".into()));
        }
        let span = atoms.last().unwrap().0 - base;
        let len = (span / step).round() as usize + 1;
        if len > LATTICE_CAP {
            return Err(Error::LatticeOverflow(len, LATTICE_CAP));
        }
        let mut weights = vec![0.0; len];
        for (x, p) in &atoms {
            let idx = ((x - base) / step).round() as usize;
            if ((base + idx as f64 * step) - x).abs() > 1e-9 * step {
                return Err(Error::NoLatticeCarrier(format!("support point {x} off lattice")));
            }
            weights[idx] += p;
        }
        Ok(Self { offset: base, step, weights })
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.offset + idx as f64 * self.step
    }

    /// Index of `x` on this lattice, if it lies on a lattice point in range.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let t = (x - self.offset) / self.step;
        let idx = t.round();
        if idx < 0.0 || idx as usize >= self.weights.len() || (t - idx).abs() > 1e-6 {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Law of the sum of two independent copies: offsets add, weights
    /// convolve (FFT for large tables).
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        debug_assert!((self.step - other.step).abs() < 1e-12 * self.step);
        let len = self.weights.len() + other.weights.len() - 1;
        if len > LATTICE_CAP {
            return Err(Error::LatticeOverflow(len, LATTICE_CAP));
        }
        let weights = if len < 256 {
            let mut out = vec![0.0; len];
            for (i, a) in self.weights.iter().enumerate() {
                for (j, b) in other.weights.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            out
        } else {
            fft_convolve(&self.weights, &other.weights)
        };
        Ok(Self { offset: self.offset + other.offset, step: self.step, weights })
    }
}

fn fgcd(a: f64, b: f64) -> f64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b > 1e-9 * a.max(1.0) {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(size, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(size, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len]
        .iter()
        .map(|c| (c.re * scale).max(0.0))
        .collect()
}

/// Power-of-two ladder of exact convolution tables: `tables[m]` is the law of
/// `S_{2^m}`. Immutable once built; shared read-only across intervals.
#[derive(Debug, Clone)]
pub struct ConvolutionLadder {
    tables: Vec<LatticeLaw>,
}

impl ConvolutionLadder {
    /// Builds tables for `S_1, S_2, ..., S_{2^max_level}` by repeated squaring.
    pub fn new(law: &JumpLaw, max_level: usize) -> Result<Self> {
        let base = LatticeLaw::from_jump_law(law)?;
        let mut tables = vec![base];
        for m in 0..max_level {
            let last = &tables[m];
            tables.push(last.convolve(last)?);
        }
        Ok(Self { tables })
    }

    pub fn max_level(&self) -> usize {
        self.tables.len() - 1
    }

    /// Law of `S_{2^level}`.
    pub fn level(&self, level: usize) -> &LatticeLaw {
        &self.tables[level]
    }
}

/// Exact probability table of `S_n` for a power-of-two `n`.
pub fn convolve_law(law: &JumpLaw, n: usize) -> Result<LatticeLaw> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("n must be a power of two, got {n}")));
    }
    let ladder = ConvolutionLadder::new(law, n.trailing_zeros() as usize)?;
    Ok(ladder.level(n.trailing_zeros() as usize).clone())
}

/// Couples the realized walk of `marks` with a Brownian path at integer
/// times. The returned walk is exactly the prefix sums of the input marks;
/// couplers never modify the walk.
pub fn couple_walk(
    marks: &[f64],
    law: &JumpLaw,
    v_key: StreamKey,
    method: CouplerMethod,
) -> Result<WalkCoupling> {
    let mut v_rng = v_key.rng();
    let n = marks.len();
    let mut walk = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &u in marks {
        acc += u;
        walk.push(acc);
    }

    let brownian = match method {
        CouplerMethod::Independent => {
            let mut b = Vec::with_capacity(n);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += normal_inverse_cdf(open_u01(&mut v_rng));
                b.push(acc);
            }
            b
        }
        CouplerMethod::Comonotone => comonotone_brownian(marks, law, &mut v_rng),
        CouplerMethod::Dyadic => match law {
            // Quantile coupling of the Gaussian with itself is the identity,
            // which is already a zero-error coupling.
            JumpLaw::StandardGaussian => comonotone_brownian(marks, law, &mut v_rng),
            _ => dyadic_brownian(marks, &walk, law, &mut v_rng)?,
        },
    };

    let sup_stat = kmt_sup_stat(&walk, &brownian)?;
    Ok(WalkCoupling { marks: marks.to_vec(), walk, brownian, sup_stat })
}

/// Per-increment quantile transform. For discrete laws the CDF value of an
/// atom at `p` with jump `[F(p-), F(p)]` is randomized uniformly inside the
/// jump, which makes `Phi^{-1} o F` exact in law. For the standard Gaussian
/// the transform is the identity, applied exactly.
fn comonotone_brownian(
    marks: &[f64],
    law: &JumpLaw,
    v_rng: &mut impl rand::Rng,
) -> Vec<f64> {
    let atoms = law.atoms();
    let mut b = Vec::with_capacity(marks.len());
    let mut acc = 0.0;
    for &u in marks {
        let inc = match &atoms {
            None => u,
            Some(atoms) => {
                let mut f_lo = 0.0;
                let mut p_atom = 0.0;
                for (x, p) in atoms {
                    if (x - u).abs() <= 1e-12 * x.abs().max(1.0) {
                        p_atom = *p;
                        break;
                    }
                    f_lo += p;
                }
                let v = open_u01(v_rng);
                normal_inverse_cdf(f_lo + v * p_atom)
            }
        };
        acc += inc;
        b.push(acc);
    }
    b
}

/// Dyadic conditional-quantile coupling.
///
/// The walk is padded to the next power of two with fresh marks from `nu`,
/// the endpoint `S_{2^M}` is quantile-coupled against `N(0, 2^M)` using the
/// exact convolution table, and each dyadic midpoint is then coupled: the
/// conditional law of a half-block sum given the block total comes from the
/// half-block table by Bayes' rule on the lattice, its randomized CDF value
/// is pushed through the Brownian bridge midpoint quantile (mean = midpoint
/// of the endpoints, variance = quarter block length). Finally the Brownian
/// values are truncated back to the original length.
fn dyadic_brownian(
    marks: &[f64],
    walk: &[f64],
    law: &JumpLaw,
    v_rng: &mut impl rand::Rng,
) -> Result<Vec<f64>> {
    let n = marks.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let levels = (usize::BITS - (n - 1).leading_zeros()) as usize;
    let padded_len = 1usize << levels;
    let ladder = ConvolutionLadder::new(law, levels)?;

    // Padded prefix sums; the first n values coincide bit-for-bit with `walk`
    // because they are accumulated in the same order.
    let mut s = Vec::with_capacity(padded_len + 1);
    s.push(0.0);
    s.extend_from_slice(walk);
    let mut acc = *walk.last().unwrap_or(&0.0);
    for _ in n..padded_len {
        acc += law.sample(open_u01(v_rng));
        s.push(acc);
    }

    let mut b = vec![0.0; padded_len + 1];

    // Top scale: quantile-couple S_{2^M} against N(0, 2^M).
    let top = ladder.level(levels);
    let p_top = randomized_cdf_at(top, s[padded_len], open_u01(v_rng));
    b[padded_len] = (padded_len as f64).sqrt() * normal_inverse_cdf(p_top);

    // Midpoints, coarsest blocks first.
    for level in (1..=levels).rev() {
        let block = 1usize << level;
        let half = block >> 1;
        let half_table = ladder.level(level - 1);
        for lo in (0..padded_len).step_by(block) {
            let total = s[lo + block] - s[lo];
            let realized = s[lo + half] - s[lo];
            let v = open_u01(v_rng);
            let p = conditional_cdf_at(half_table, total, realized, v);
            let mean = 0.5 * (b[lo] + b[lo + block]);
            let sd = 0.5 * (block as f64).sqrt();
            b[lo + half] = mean + sd * normal_inverse_cdf(p);
        }
    }

    b.truncate(n + 1);
    Ok(b.split_off(1))
}

/// Randomized CDF value of `x` under a lattice law: `F(x-) + v * P(x)`.
fn randomized_cdf_at(table: &LatticeLaw, x: f64, v: f64) -> f64 {
    let idx = match table.index_of(x) {
        Some(idx) => idx,
        // Off-lattice values cannot occur for walks generated from the law;
        // fall back to the bare uniform.
        None => return v,
    };
    let below: f64 = table.weights[..idx].iter().sum();
    let at = table.weights[idx];
    let total = table.total_mass();
    ((below + v * at) / total).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
}

/// Randomized CDF value of the realized half-block sum under its conditional
/// law given the block total: `q(s) ∝ p_half(s) * p_half(total - s)`.
fn conditional_cdf_at(half_table: &LatticeLaw, total: f64, realized: f64, v: f64) -> f64 {
    let realized_idx = match half_table.index_of(realized) {
        Some(idx) => idx,
        None => return v,
    };
    let mut mass_below = 0.0;
    let mut mass_at = 0.0;
    let mut mass_total = 0.0;
    for (j, &pj) in half_table.weights.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let complement = total - half_table.value_at(j);
        let qj = match half_table.index_of(complement) {
            Some(cj) => pj * half_table.weights[cj],
            None => 0.0,
        };
        mass_total += qj;
        if j < realized_idx {
            mass_below += qj;
        } else if j == realized_idx {
            mass_at = qj;
        }
    }
    if mass_total <= 0.0 {
        // Underflow of the conditional table; realized values this deep in
        // the tail are not representable, draw the midpoint fresh.
        return v;
    }
    ((mass_below + v * mass_at) / mass_total).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
}
