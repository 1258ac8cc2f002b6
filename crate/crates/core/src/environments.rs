//! Environment sequences `(theta_n, lambda_n, p_n, d_n)`: deterministic
//! families, Markov and i.i.d. random families, and their stationary laws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::dispersal::{offspring_mean, DispersalKind, OffspringLaw, OffspringMean};
use crate::error::{domain, usage, Result};
use crate::growth::{sample_geometric, ColonySizeLaw, GrowthKind, GrowthSpec};
use crate::numerics::Tolerance;
use crate::survivors::{KernelKind, SurvivorKernel, SurvivorLaw};

/// Smallest ratio `lambda_n / theta` produced by fertility decay.
pub const FERTILITY_FLOOR: f64 = 1e-300;

/// One generation's parameters together with the model tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub theta: f64,
    pub lambda: f64,
    pub p: f64,
    pub d: u32,
    pub growth: GrowthKind,
    pub kernel: KernelKind,
}

impl Environment {
    pub fn new(theta: f64, lambda: f64, p: f64, d: u32, growth: GrowthKind, kernel: KernelKind) -> Result<Self> {
        GrowthSpec::new(growth, lambda, theta)?;
        if !(p > 0.0 && p <= 1.0) {
            return domain(format!("survival parameter p must lie in (0, 1] (got {p})"));
        }
        if d == 0 {
            return domain("number of dispersal sites d must be at least 1");
        }
        SurvivorKernel::from_kind(kernel, p)?;
        Ok(Environment { theta, lambda, p, d, growth, kernel })
    }

    pub fn colony_law(&self) -> Result<ColonySizeLaw> {
        ColonySizeLaw::from_parts(self.growth, self.lambda, self.theta)
    }

    pub fn survivor_law(&self, tol: &Tolerance) -> Result<SurvivorLaw> {
        SurvivorLaw::new(self.colony_law()?, SurvivorKernel::from_kind(self.kernel, self.p)?, *tol)
    }

    pub fn offspring_mean(&self, mech: DispersalKind, tol: &Tolerance) -> Result<OffspringMean> {
        offspring_mean(mech.with_sites(self.d)?, &self.survivor_law(tol)?)
    }

    pub fn offspring_law(&self, mech: DispersalKind, tol: &Tolerance) -> Result<OffspringLaw> {
        OffspringLaw::new(mech.with_sites(self.d)?, &self.survivor_law(tol)?)
    }
}

/// Parameters of one environment without the model tags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub theta: f64,
    pub lambda: f64,
    pub p: f64,
    pub d: u32,
}

/// Built-in nonnegative sequences decreasing to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecaySequence {
    /// `c / n`, with the `n = 0` term set to `c`.
    Harmonic { c: f64 },
    /// `c ratio^n`.
    Geometric { c: f64, ratio: f64 },
    /// `c / ln(n + e)`.
    InverseLog { c: f64 },
}

impl DecaySequence {
    pub fn at(&self, n: u64) -> f64 {
        let nf = n as f64;
        match *self {
            Self::Harmonic { c } => c / nf.max(1.0),
            Self::Geometric { c, ratio } => c * ratio.powf(nf),
            Self::InverseLog { c } => c / (nf + std::f64::consts::E).ln(),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = match *self {
            Self::Geometric { ratio, .. } if !(ratio > 0.0 && ratio < 1.0) => {
                return domain(format!("geometric decay ratio must lie in (0, 1) (got {ratio})"));
            }
            Self::Harmonic { c } | Self::Geometric { c, .. } | Self::InverseLog { c } => c,
        };
        if !(c >= 0.0 && c.is_finite()) {
            return domain(format!("decay scale c must be finite and nonnegative (got {c})"));
        }
        Ok(())
    }
}

/// Law of the i.i.d. innovations `psi_n` of the adaptive survival chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiLaw {
    UniformOn { lo: f64, hi: f64 },
    BetaShaped { alpha: f64, beta: f64 },
}

impl PsiLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::UniformOn { lo, hi } if !(0.0 < lo && lo < hi && hi <= 1.0) => {
                domain(format!("uniform psi law needs 0 < lo < hi <= 1 (got {lo}, {hi})"))
            }
            Self::BetaShaped { alpha, beta } if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) => {
                domain(format!("beta psi law needs positive shapes (got {alpha}, {beta})"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::UniformOn { lo, hi } => 0.5 * (lo + hi),
            Self::BetaShaped { alpha, beta } => alpha / (alpha + beta),
        }
    }

    /// `E[ln psi]`.
    pub fn mean_log(&self) -> f64 {
        match *self {
            Self::UniformOn { lo, hi } => {
                let antiderivative = |x: f64| if x == 0.0 { 0.0 } else { x * (x.ln() - 1.0) };
                (antiderivative(hi) - antiderivative(lo)) / (hi - lo)
            }
            Self::BetaShaped { alpha, beta } => digamma(alpha) - digamma(alpha + beta),
        }
    }

    /// Infimum of the support.
    pub fn lower_edge(&self) -> f64 {
        match *self {
            Self::UniformOn { lo, .. } => lo,
            Self::BetaShaped { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::UniformOn { lo, hi } => rng.random_range(lo..hi),
            Self::BetaShaped { alpha, beta } => {
                // keep draws strictly inside (0, 1)
                let x: f64 = Beta::new(alpha, beta).expect("validated shapes").sample(rng);
                x.clamp(f64::MIN_POSITIVE, 1.0)
            }
        }
    }
}

/// A scalar parameter drawn independently each generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarLaw {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl ScalarLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Fixed(v) => v,
            Self::Uniform { lo, hi } if lo == hi => lo,
            Self::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Self::Fixed(v) => (v, v),
            Self::Uniform { lo, hi } => (lo, hi),
        }
    }
}

/// Marginal law of an i.i.d. environment sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum IidMarginal {
    /// Finitely many environments with probabilities proportional to `weights`.
    Discrete { outcomes: Vec<EnvParams>, weights: Vec<f64> },
    /// Independent coordinates.
    Product { theta: ScalarLaw, lambda: ScalarLaw, p: ScalarLaw, d: u32 },
}

impl IidMarginal {
    /// Finite support with normalized probabilities, when available.
    pub fn atoms(&self) -> Option<Vec<(EnvParams, f64)>> {
        match self {
            Self::Discrete { outcomes, weights } => {
                let total: f64 = weights.iter().sum();
                Some(outcomes.iter().copied().zip(weights.iter().map(|w| w / total)).collect())
            }
            Self::Product { theta, lambda, p, d } => {
                let fixed = |s: &ScalarLaw| match s.support() {
                    (a, b) if a == b => Some(a),
                    _ => None,
                };
                Some(vec![(EnvParams { theta: fixed(theta)?, lambda: fixed(lambda)?, p: fixed(p)?, d: *d }, 1.0)])
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvParams {
        match self {
            Self::Discrete { outcomes, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (o, &w) in outcomes.iter().zip(weights) {
                    if u < w {
                        return *o;
                    }
                    u -= w;
                }
                *outcomes.last().expect("validated nonempty")
            }
            Self::Product { theta, lambda, p, d } => {
                EnvParams { theta: theta.sample(rng), lambda: lambda.sample(rng), p: p.sample(rng), d: *d }
            }
        }
    }
}

/// How the environment evolves from generation to generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentFamily {
    Constant {
        theta: f64,
        lambda: f64,
        p: f64,
        d: u32,
    },
    /// The listed environments in order, then the last one forever.
    ExplicitSequence { steps: Vec<EnvParams> },
    /// `theta_n = lambda + epsilon + a_n`.
    DecreasingCatastrophe {
        lambda: f64,
        epsilon: f64,
        a_seq: DecaySequence,
        p: f64,
        d: u32,
    },
    /// `lambda_n = lambda0 exp(-beta n)`.
    FertilityDecay {
        lambda0: f64,
        beta: f64,
        theta: f64,
        p: f64,
        d: u32,
    },
    /// Markov chain that contracts `theta` towards `lambda + epsilon` with
    /// probability `rho_persist` and resets to `theta0` otherwise.
    CorrelatedCatastrophe {
        lambda: f64,
        epsilon: f64,
        gamma: f64,
        rho_persist: f64,
        theta0: f64,
        p: f64,
        d: u32,
    },
    /// `p_{n+1} = min(1, a p_n + (1-a) psi_{n+1})`, starting from `p0`
    /// (default `E[psi]`).
    AdaptiveSurvival {
        a: f64,
        psi: PsiLaw,
        theta: f64,
        lambda: f64,
        d: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p0: Option<f64>,
    },
    Iid { marginal: IidMarginal },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProcess {
    pub growth: GrowthKind,
    pub kernel: KernelKind,
    pub family: EnvironmentFamily,
}

impl EnvironmentProcess {
    pub fn new(growth: GrowthKind, kernel: KernelKind, family: EnvironmentFamily) -> Result<Self> {
        let proc = EnvironmentProcess { growth, kernel, family };
        proc.validate()?;
        Ok(proc)
    }

    pub fn constant(env: Environment) -> Self {
        EnvironmentProcess {
            growth: env.growth,
            kernel: env.kernel,
            family: EnvironmentFamily::Constant { theta: env.theta, lambda: env.lambda, p: env.p, d: env.d },
        }
    }

    pub fn env(&self, theta: f64, lambda: f64, p: f64, d: u32) -> Result<Environment> {
        Environment::new(theta, lambda, p, d, self.growth, self.kernel)
    }

    fn validate(&self) -> Result<()> {
        use EnvironmentFamily::*;
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                domain(format!("{name} must be positive and finite (got {v})"))
            }
        };
        match &self.family {
            Constant { theta, lambda, p, d } => {
                self.env(*theta, *lambda, *p, *d)?;
            }
            ExplicitSequence { steps } => {
                if steps.is_empty() {
                    return domain("explicit environment sequence must not be empty");
                }
                for s in steps {
                    self.env(s.theta, s.lambda, s.p, s.d)?;
                }
            }
            DecreasingCatastrophe { lambda, epsilon, a_seq, p, d } => {
                positive("epsilon", *epsilon)?;
                a_seq.validate()?;
                self.env(lambda + epsilon + a_seq.at(0), *lambda, *p, *d)?;
            }
            FertilityDecay { lambda0, beta, theta, p, d } => {
                positive("beta", *beta)?;
                if !(theta > lambda0) {
                    return domain(format!("fertility decay needs theta > lambda0 (got {theta}, {lambda0})"));
                }
                self.env(*theta, *lambda0, *p, *d)?;
            }
            CorrelatedCatastrophe { lambda, epsilon, gamma, rho_persist, theta0, p, d } => {
                positive("epsilon", *epsilon)?;
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return domain(format!("contraction gamma must lie in (0, 1) (got {gamma})"));
                }
                if !(*rho_persist >= 0.0 && *rho_persist < 1.0) {
                    return domain(format!("persistence rho_persist must lie in [0, 1) (got {rho_persist})"));
                }
                if !(*theta0 > lambda + epsilon) {
                    return domain(format!("theta0 must exceed lambda + epsilon (got {theta0})"));
                }
                self.env(*theta0, *lambda, *p, *d)?;
            }
            AdaptiveSurvival { a, psi, theta, lambda, d, p0 } => {
                if !(*a >= 0.0 && *a < 1.0) {
                    return domain(format!("memory a must lie in [0, 1) (got {a})"));
                }
                psi.validate()?;
                if !(theta > lambda) {
                    return domain(format!("adaptive survival needs theta > lambda (got {theta}, {lambda})"));
                }
                if self.kernel != KernelKind::Binomial {
                    return domain("adaptive survival drives the binomial survival probability");
                }
                self.env(*theta, *lambda, p0.unwrap_or(psi.mean()), *d)?;
            }
            Iid { marginal } => match marginal {
                IidMarginal::Discrete { outcomes, weights } => {
                    if outcomes.is_empty() || outcomes.len() != weights.len() {
                        return domain("discrete marginal needs matching nonempty outcomes and weights");
                    }
                    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 {
                        return domain("discrete marginal weights must be nonnegative with positive sum");
                    }
                    for o in outcomes {
                        self.env(o.theta, o.lambda, o.p, o.d)?;
                    }
                }
                IidMarginal::Product { theta, lambda, p, d } => {
                    for (name, law) in [("theta", theta), ("lambda", lambda), ("p", p)] {
                        let (lo, hi) = law.support();
                        if !(lo <= hi) {
                            return domain(format!("{name} range must satisfy lo <= hi"));
                        }
                    }
                    let (t_lo, t_hi) = theta.support();
                    let (l_lo, l_hi) = lambda.support();
                    let (p_lo, p_hi) = p.support();
                    self.env(t_lo, l_lo, p_lo, *d)?;
                    self.env(t_hi, l_hi, p_hi, *d)?;
                }
            },
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(
            self.family,
            EnvironmentFamily::Constant { .. }
                | EnvironmentFamily::ExplicitSequence { .. }
                | EnvironmentFamily::DecreasingCatastrophe { .. }
                | EnvironmentFamily::FertilityDecay { .. }
        )
    }

    /// Environment at generation `n` of a deterministic family.
    pub fn deterministic_at(&self, n: u64) -> Result<Environment> {
        use EnvironmentFamily::*;
        match &self.family {
            Constant { theta, lambda, p, d } => self.env(*theta, *lambda, *p, *d),
            ExplicitSequence { steps } => {
                let s = steps[(n as usize).min(steps.len() - 1)];
                self.env(s.theta, s.lambda, s.p, s.d)
            }
            DecreasingCatastrophe { lambda, epsilon, a_seq, p, d } => {
                self.env(lambda + epsilon + a_seq.at(n), *lambda, *p, *d)
            }
            FertilityDecay { lambda0, beta, theta, p, d } => {
                // floored so that late generations keep a valid positive rate
                let lambda = (lambda0 * (-beta * n as f64).exp()).max(theta * FERTILITY_FLOOR);
                self.env(*theta, lambda, *p, *d)
            }
            _ => usage("stochastic environment families need a path; use EnvironmentPath"),
        }
    }

    /// One draw of `Theta = lambda + eps + (theta0 - lambda - eps) gamma^K` with
    /// `P(K = k) = (1 - rho) rho^k`: the stationary law of the correlated chain.
    pub fn stationary_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let EnvironmentFamily::CorrelatedCatastrophe { lambda, epsilon, gamma, rho_persist, theta0, .. } = self.family
        else {
            return usage("stationary theta sampler applies to the correlated catastrophe family");
        };
        let k = sample_geometric(1.0 - rho_persist, rng);
        let floor = lambda + epsilon;
        Ok(floor + (theta0 - floor) * gamma.powf(k as f64))
    }

    /// Realized `p_0, ..., p_n` of the adaptive survival chain.
    pub fn simulate_p_chain<R: Rng + ?Sized>(&self, n_steps: usize, p0: Option<f64>, rng: &mut R) -> Result<Vec<f64>> {
        let EnvironmentFamily::AdaptiveSurvival { a, psi, p0: default_p0, .. } = self.family else {
            return usage("p chain applies to the adaptive survival family");
        };
        if n_steps == 0 {
            return domain("p chain needs at least one step");
        }
        let start = p0.or(default_p0).unwrap_or(psi.mean());
        if !(start > 0.0 && start <= 1.0) {
            return domain(format!("initial survival probability must lie in (0, 1] (got {start})"));
        }
        let mut out = Vec::with_capacity(n_steps + 1);
        out.push(start);
        let mut p = start;
        for _ in 0..n_steps {
            p = adaptive_step(a, p, psi.sample(rng));
            out.push(p);
        }
        Ok(out)
    }
}

fn adaptive_step(a: f64, p: f64, psi: f64) -> f64 {
    (a * p + (1.0 - a) * psi).min(1.0)
}

/// A single realized environment sequence, read in nondecreasing order.
#[derive(Debug, Clone)]
pub struct EnvironmentPath {
    process: EnvironmentProcess,
    rng: ChaCha8Rng,
    next: u64,
    state: f64,
    current: Option<Environment>,
}

impl EnvironmentPath {
    pub fn new(process: EnvironmentProcess, rng: ChaCha8Rng) -> Self {
        let state = match &process.family {
            EnvironmentFamily::CorrelatedCatastrophe { theta0, .. } => *theta0,
            EnvironmentFamily::AdaptiveSurvival { psi, p0, .. } => p0.unwrap_or(psi.mean()),
            _ => f64::NAN,
        };
        EnvironmentPath { process, rng, next: 0, state, current: None }
    }

    pub fn process(&self) -> &EnvironmentProcess {
        &self.process
    }

    /// Environment at generation `n`. Stochastic paths reject `n` below the
    /// last generation returned.
    pub fn at(&mut self, n: u64) -> Result<Environment> {
        if self.process.is_deterministic() {
            return self.process.deterministic_at(n);
        }
        if let Some(env) = self.current {
            if n + 1 == self.next {
                return Ok(env);
            }
            if n + 1 < self.next {
                return usage(format!("environment path already advanced past generation {n}"));
            }
        }
        while self.next <= n {
            let env = self.step()?;
            self.current = Some(env);
            self.next += 1;
        }
        Ok(self.current.expect("advanced at least once"))
    }

    fn step(&mut self) -> Result<Environment> {
        let first = self.next == 0;
        match self.process.family.clone() {
            EnvironmentFamily::CorrelatedCatastrophe { lambda, epsilon, gamma, rho_persist, theta0, p, d } => {
                if !first {
                    let floor = lambda + epsilon;
                    self.state = if self.rng.random::<f64>() < rho_persist {
                        floor + gamma * (self.state - floor)
                    } else {
                        theta0
                    };
                }
                self.process.env(self.state, lambda, p, d)
            }
            EnvironmentFamily::AdaptiveSurvival { a, psi, theta, lambda, d, .. } => {
                if !first {
                    self.state = adaptive_step(a, self.state, psi.sample(&mut self.rng));
                }
                self.process.env(theta, lambda, self.state, d)
            }
            EnvironmentFamily::Iid { marginal } => {
                let e = marginal.sample(&mut self.rng);
                self.process.env(e.theta, e.lambda, e.p, e.d)
            }
            _ => unreachable!("deterministic families are handled without stepping"),
        }
    }
}
