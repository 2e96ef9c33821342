//! Mathematical ingredients of the model: the spiking rate function `f`, the
//! centred jump law `nu`, the initial law `nu0`, the drift rate `alpha`, and
//! the bounded strictly increasing distance map `a` together with its first
//! three derivatives.

use serde::{Deserialize, Serialize};

use crate::kmt::CouplerMethod;
use crate::{Error, Result};

/// Spiking rate function `f`, bounded between `f_min > 0` and `f_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub kind: RateKind,
    /// Lower bound of `f` (1/time).
    pub f_min: f64,
    /// Upper bound of `f` (1/time); also the dominating thinning rate.
    pub f_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// `f(x) = f_min` everywhere (analytic test case).
    Constant,
    /// `f(x) = f_min + (f_max - f_min) / (1 + x^2)`.
    CauchyBump,
    /// `f(x) = f_min + (f_max - f_min) / (1 + e^{-x})`.
    Logistic,
}

impl RateFunction {
    pub fn cauchy_bump(f_min: f64, f_max: f64) -> Self {
        Self { kind: RateKind::CauchyBump, f_min, f_max }
    }

    pub fn constant(c: f64) -> Self {
        Self { kind: RateKind::Constant, f_min: c, f_max: c }
    }

    /// Evaluates `f(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let span = self.f_max - self.f_min;
        match self.kind {
            RateKind::Constant => self.f_min,
            RateKind::CauchyBump => self.f_min + span / (1.0 + x * x),
            RateKind::Logistic => self.f_min + span / (1.0 + (-x).exp()),
        }
    }

    /// Closed-form derivative `f'(x)`, used by the assumption checks.
    pub fn derivative(&self, x: f64) -> f64 {
        let span = self.f_max - self.f_min;
        match self.kind {
            RateKind::Constant => 0.0,
            RateKind::CauchyBump => {
                let d = 1.0 + x * x;
                -span * 2.0 * x / (d * d)
            }
            RateKind::Logistic => {
                let e = (-x).exp();
                let d = 1.0 + e;
                span * e / (d * d)
            }
        }
    }
}

/// Free-standing form of [`RateFunction::eval`].
pub fn eval_rate(f: &RateFunction, x: f64) -> f64 {
    f.eval(x)
}

/// Centred unit-variance jump law `nu` for the synaptic weights `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpLaw {
    Rademacher,
    StandardGaussian,
    /// Finite discrete law given by support points and probabilities.
    Lattice { support: Vec<f64>, probs: Vec<f64> },
}

impl JumpLaw {
    /// Mean, by summation for lattice laws and exactly for built-ins.
    pub fn mean(&self) -> f64 {
        match self {
            JumpLaw::Rademacher | JumpLaw::StandardGaussian => 0.0,
            JumpLaw::Lattice { support, probs } => {
                support.iter().zip(probs).map(|(x, p)| x * p).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            JumpLaw::Rademacher | JumpLaw::StandardGaussian => 1.0,
            JumpLaw::Lattice { support, probs } => {
                let m = self.mean();
                support.iter().zip(probs).map(|(x, p)| (x - m) * (x - m) * p).sum()
            }
        }
    }

    /// Atoms of a discrete law in increasing support order, or `None` for the
    /// Gaussian.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            JumpLaw::Rademacher => Some(vec![(-1.0, 0.5), (1.0, 0.5)]),
            JumpLaw::StandardGaussian => None,
            JumpLaw::Lattice { support, probs } => {
                let mut atoms: Vec<(f64, f64)> =
                    support.iter().copied().zip(probs.iter().copied()).collect();
                atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                Some(atoms)
            }
        }
    }

    /// Inverse-transform sample. CDF steps are left-closed: a `u01` strictly
    /// below a step maps to the lower atom.
    pub fn sample(&self, u01: f64) -> f64 {
        match self {
            JumpLaw::Rademacher => {
                if u01 < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            JumpLaw::StandardGaussian => crate::stats::normal_inverse_cdf(u01),
            JumpLaw::Lattice { .. } => {
                let atoms = self.atoms().unwrap();
                let mut cdf = 0.0;
                for (x, p) in &atoms {
                    cdf += p;
                    if u01 < cdf {
                        return *x;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }
}

/// Free-standing form of [`JumpLaw::sample`].
pub fn sample_jump(law: &JumpLaw, u01: f64) -> f64 {
    law.sample(u01)
}

/// Initial law `nu0` of the membrane potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitLaw {
    /// Uniform on `[-1, 1]` (default).
    Uniform,
    Gaussian { std: f64 },
    PointMass { value: f64 },
}

impl InitLaw {
    pub fn sample(&self, u01: f64) -> f64 {
        match self {
            InitLaw::Uniform => 2.0 * u01 - 1.0,
            InitLaw::Gaussian { std } => std * crate::stats::normal_inverse_cdf(u01),
            InitLaw::PointMass { value } => *value,
        }
    }
}

/// Exact inter-event drift: solves `x' = -alpha x` over `dt`.
pub fn flow(x: f64, dt: f64, alpha: f64) -> f64 {
    x * (-alpha * dt).exp()
}

const QUAD_NODES: usize = 64;
const BREAKPOINTS: usize = 1024;

/// The bounded strictly increasing transform
/// `a(x) = \int_{-inf}^{x} (1 + psi(y))^{-(1+eps)} dy`,
/// where `psi` is the fixed even quartic `3/8 + (3/4) y^2 - (1/8) y^4` on
/// `[-1, 1]` and `|y|` outside. The quartic is the unique even quartic
/// matching `|y|` in value, first and second derivative at `y = +-1`, which
/// keeps `a` three times continuously differentiable.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    epsilon: f64,
    /// 64-node Gauss-Legendre nodes on [-1, 1].
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
    /// Partial integrals of the density from -1 to each breakpoint.
    partials: Vec<f64>,
    a_at_minus1: f64,
    a_at_1: f64,
}

fn psi(y: f64) -> f64 {
    let ya = y.abs();
    if ya >= 1.0 {
        ya
    } else {
        let y2 = y * y;
        0.375 + 0.75 * y2 - 0.125 * y2 * y2
    }
}

fn psi_d1(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        y.signum()
    } else {
        1.5 * y - 0.5 * y * y * y
    }
}

fn psi_d2(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        1.5 - 1.5 * y * y
    }
}

impl DistanceMap {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        let (gl_nodes, gl_weights) = gauss_legendre(QUAD_NODES);
        let a_at_minus1 = tail_left(-1.0, epsilon);
        let mut map = Self {
            epsilon,
            gl_nodes,
            gl_weights,
            partials: Vec::new(),
            a_at_minus1,
            a_at_1: 0.0,
        };
        // Cumulative density integrals from -1 to each of the 1024 breakpoints.
        let mut partials = Vec::with_capacity(BREAKPOINTS + 1);
        let mut acc = 0.0;
        partials.push(acc);
        let h = 2.0 / BREAKPOINTS as f64;
        for i in 0..BREAKPOINTS {
            let lo = -1.0 + i as f64 * h;
            acc += map.quad(lo, lo + h);
            partials.push(acc);
        }
        map.a_at_1 = a_at_minus1 + acc;
        map.partials = partials;
        Ok(map)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Density `a'(y) = (1 + psi(y))^{-(1+eps)}`.
    fn density(&self, y: f64) -> f64 {
        (1.0 + psi(y)).powf(-(1.0 + self.epsilon))
    }

    /// 64-node Gauss-Legendre integral of the density over `[lo, hi]`.
    fn quad(&self, lo: f64, hi: f64) -> f64 {
        let c = 0.5 * (hi - lo);
        let m = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (t, w) in self.gl_nodes.iter().zip(&self.gl_weights) {
            acc += w * self.density(m + c * t);
        }
        c * acc
    }

    /// `a(x)` and its derivatives; `order` is 0..=3.
    pub fn eval(&self, x: f64, order: u8) -> f64 {
        let eps = self.epsilon;
        match order {
            0 => {
                if x <= -1.0 {
                    tail_left(x, eps)
                } else if x >= 1.0 {
                    // Closed-form right tail: psi(y) = y for y >= 1.
                    self.a_at_1 + (2f64.powf(-eps) - (1.0 + x).powf(-eps)) / eps
                } else {
                    let t = (x + 1.0) / 2.0 * BREAKPOINTS as f64;
                    let i = (t.floor() as usize).min(BREAKPOINTS - 1);
                    let lo = -1.0 + i as f64 * (2.0 / BREAKPOINTS as f64);
                    self.a_at_minus1 + self.partials[i] + self.quad(lo, x)
                }
            }
            1 => self.density(x),
            2 => -(1.0 + eps) * (1.0 + psi(x)).powf(-(2.0 + eps)) * psi_d1(x),
            3 => {
                let base = 1.0 + psi(x);
                let d1 = psi_d1(x);
                (1.0 + eps) * (2.0 + eps) * base.powf(-(3.0 + eps)) * d1 * d1
                    - (1.0 + eps) * base.powf(-(2.0 + eps)) * psi_d2(x)
            }
            _ => panic!("derivative order {order} not supported (max 3)"),
        }
    }

    /// Supremum of `a`, i.e. the limit of `a(x)` as `x -> inf`.
    pub fn sup(&self) -> f64 {
        self.a_at_1 + 2f64.powf(-self.epsilon) / self.epsilon
    }

    /// Supremum of `a'` over the real line (attained at 0 where psi is minimal).
    pub fn d1_sup(&self) -> f64 {
        self.density(0.0)
    }
}

/// Closed-form left tail `\int_{-inf}^{x} (1 - y)^{-(1+eps)} dy` for `x <= -1`.
fn tail_left(x: f64, eps: f64) -> f64 {
    (1.0 - x).powf(-eps) / eps
}

/// Free-standing form of [`DistanceMap::eval`].
pub fn eval_distance(a: &DistanceMap, x: f64, order: u8) -> f64 {
    a.eval(x, order)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Evaluate P_n(x) and P'_n(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                weights[i] = w;
                weights[n - 1 - i] = w;
                break;
            }
        }
    }
    (nodes, weights)
}

/// Full experiment configuration for one system size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Potential loss rate between spikes (1/time).
    pub alpha: f64,
    pub n_neurons: usize,
    pub rate_fn: RateFunction,
    pub jump_law: JumpLaw,
    pub init_law: InitLaw,
    /// Decay exponent of the distance-map density.
    pub epsilon: f64,
    pub horizon: f64,
    /// Coupling grid step; `None` selects `(ln N)^{4/5} N^{-2/5}`.
    pub delta: Option<f64>,
    pub substeps_per_delta: usize,
    pub base_seed: u64,
    pub coupler: CouplerMethod,
    /// Freeze the auxiliary diffusion coefficient per delta-interval instead
    /// of per substep.
    pub aux_freeze_per_delta: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            n_neurons: 256,
            rate_fn: RateFunction::cauchy_bump(1.0, 2.0),
            jump_law: JumpLaw::Rademacher,
            init_law: InitLaw::Uniform,
            epsilon: 1.0,
            horizon: 1.0,
            delta: None,
            substeps_per_delta: 4,
            base_seed: 0x6d666e63,
            coupler: CouplerMethod::Dyadic,
            aux_freeze_per_delta: false,
        }
    }
}

impl ModelParams {
    /// The coupling grid step, defaulting to the balanced choice
    /// `(ln N)^{4/5} N^{-2/5}`.
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or_else(|| {
            let n = self.n_neurons as f64;
            n.ln().powf(0.8) * n.powf(-0.4)
        })
    }

    /// Structural invariants of the parameter set.
    pub fn check_structure(&self) -> Result<()> {
        if self.n_neurons < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_neurons must be >= 2, got {}",
                self.n_neurons
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if !(self.delta() < 1.0) || !(self.delta() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta()
            )));
        }
        if self.substeps_per_delta < 1 {
            return Err(Error::InvalidParameter("substeps_per_delta must be >= 1".into()));
        }
        if !(self.rate_fn.f_min > 0.0) || !(self.rate_fn.f_max >= self.rate_fn.f_min) {
            return Err(Error::InvalidParameter(format!(
                "rate bounds must satisfy 0 < f_min <= f_max, got [{}, {}]",
                self.rate_fn.f_min, self.rate_fn.f_max
            )));
        }
        Ok(())
    }

    pub fn distance_map(&self) -> Result<DistanceMap> {
        DistanceMap::new(self.epsilon)
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

/// Validation report: one entry per assumption plus structural checks.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Numerically validates the standing assumptions on `nu`, `f` and the
/// structural parameter bounds, and reports each check.
pub fn validate_assumptions(params: &ModelParams) -> AssumptionReport {
    let mut checks = Vec::new();

    let structure = params.check_structure();
    checks.push(AssumptionCheck {
        name: "params: structural bounds".into(),
        detail: match &structure {
            Ok(()) => format!(
                "n_neurons={}, horizon={}, delta={:.6}, substeps={}",
                params.n_neurons,
                params.horizon,
                params.delta(),
                params.substeps_per_delta
            ),
            Err(e) => e.to_string(),
        },
        pass: structure.is_ok(),
    });

    // Assumption on nu: centred with unit variance.
    let mean = params.jump_law.mean();
    let var = params.jump_law.variance();
    let centred = mean.abs() <= 1e-9 && (var - 1.0).abs() <= 1e-9;
    checks.push(AssumptionCheck {
        name: "nu: centred, unit variance".into(),
        detail: format!("mean={mean:.3e}, variance={var:.12}"),
        pass: centred,
    });
    if let JumpLaw::Lattice { probs, .. } = &params.jump_law {
        let mass: f64 = probs.iter().sum();
        let nonneg = probs.iter().all(|p| *p >= 0.0);
        checks.push(AssumptionCheck {
            name: "nu: probability weights".into(),
            detail: format!("total mass={mass:.12}"),
            pass: nonneg && (mass - 1.0).abs() <= 1e-9,
        });
    }

    // Assumption on f: bounded with inf f > 0, scanned on a dense grid.
    let f = &params.rate_fn;
    let lower_ok = f.f_min > 0.0 && f.f_min <= f.f_max;
    let mut range_ok = true;
    let mut decay_c: f64 = 0.0;
    for i in 0..10_000 {
        let x = -50.0 + 100.0 * i as f64 / 9_999.0;
        let v = f.eval(x);
        if v < f.f_min - 1e-12 || v > f.f_max + 1e-12 {
            range_ok = false;
        }
        let envelope = (1.0 + x.abs()).powf(1.0 + params.epsilon);
        decay_c = decay_c.max(f.derivative(x).abs() * envelope);
    }
    checks.push(AssumptionCheck {
        name: "f: bounded with inf f > 0".into(),
        detail: format!("f_min={}, f_max={}, grid range ok={range_ok}", f.f_min, f.f_max),
        pass: lower_ok && range_ok,
    });
    checks.push(AssumptionCheck {
        name: "f: derivative decay |f'| <= C/(1+|x|)^(1+eps)".into(),
        detail: format!("measured C={decay_c:.6}"),
        pass: decay_c.is_finite(),
    });

    // Assumption on nu: finite exponential moment in a neighbourhood of 0.
    let (exp_ok, detail) = match &params.jump_law {
        JumpLaw::Rademacher => (true, "bounded support".to_string()),
        JumpLaw::StandardGaussian => (true, "Gaussian mgf finite everywhere".to_string()),
        JumpLaw::Lattice { support, .. } => {
            let finite = support.iter().all(|x| x.is_finite());
            (finite, "finite support".to_string())
        }
    };
    checks.push(AssumptionCheck {
        name: "nu: exponential moments near 0".into(),
        detail,
        pass: exp_ok,
    });

    AssumptionReport { checks }
}
