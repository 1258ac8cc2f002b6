//! Survival and extinction criteria driven by the log-mean process
//! `ell_n = log mu_n`, `S_n = sum_{k<n} ell_k`, plus the closed-form criteria
//! for the Poisson-binomial model and the correlated and adaptive families.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispersal::{DispersalKind, OffspringMean};
use crate::environments::{Environment, EnvironmentFamily, EnvironmentPath, EnvironmentProcess, PsiLaw};
use crate::error::{domain, numeric, usage, Result};
use crate::growth::GrowthKind;
use crate::numerics::{hyp2f1_11, CompensatedSum, ExtendedReal, Tolerance};
use crate::survivors::{KernelKind, SurvivorKernel};

pub const DEFAULT_HORIZON: usize = 10_000;
pub const DEFAULT_BURN_IN: usize = 10_000;
/// Band around zero inside which a finite-horizon Cesàro estimate is
/// inconclusive.
pub const DEFAULT_VARYING_TOL: f64 = 1e-3;
/// Ergodic estimates decide only beyond this many standard errors.
pub const STDERR_BAND: f64 = 3.0;
/// `P(xi > 0 | E)` below this on a sampled environment triggers a warning
/// about the integrability hypothesis.
pub const POSITIVE_PROB_WARNING: f64 = 1e-6;
/// Required agreement of the two composition-mean paths at the corner.
pub const M4_PATH_AGREEMENT: f64 = 1e-8;
/// Certified truncation error of the correlated-catastrophe series.
pub const SERIES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    ExtinctionAS,
    SurvivalPositive,
    CriticalIndeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Basis {
    /// A theorem applied to exact or certified quantities; `inequality` is the
    /// condition that fired (or the boundary that was hit).
    AnalyticTheorem { theorem: String, inequality: String },
    /// A finite-sample estimate compared against `tolerance`.
    NumericEstimate { criterion: String, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub basis: Basis,
    /// Drift estimate or bound on the log scale.
    pub evidence: f64,
    /// How far `evidence` lies past the threshold that decided the outcome;
    /// for indeterminate verdicts, minus the distance to the nearer threshold.
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl Verdict {
    fn analytic(outcome: Outcome, theorem: &str, inequality: String, evidence: f64, margin: f64) -> Self {
        Verdict {
            outcome,
            basis: Basis::AnalyticTheorem { theorem: theorem.into(), inequality },
            evidence,
            margin,
            diagnostics: Vec::new(),
        }
    }

    fn numeric(outcome: Outcome, criterion: &str, tolerance: f64, evidence: f64, margin: f64) -> Self {
        Verdict {
            outcome,
            basis: Basis::NumericEstimate { criterion: criterion.into(), tolerance },
            evidence,
            margin,
            diagnostics: Vec::new(),
        }
    }

    fn note(mut self, msg: impl Into<String>) -> Self {
        self.diagnostics.push(msg.into());
        self
    }

    /// Name of the theorem applied or the criterion estimated.
    pub fn theorem(&self) -> &str {
        match &self.basis {
            Basis::AnalyticTheorem { theorem, .. } => theorem,
            Basis::NumericEstimate { criterion, .. } => criterion,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.basis, Basis::AnalyticTheorem { .. })
    }
}

/// Outcome of `value` against the symmetric band `[-band, band]`.
fn decide(value: f64, band: f64) -> (Outcome, f64) {
    if value > band {
        (Outcome::SurvivalPositive, value - band)
    } else if value < -band {
        (Outcome::ExtinctionAS, -band - value)
    } else {
        (Outcome::CriticalIndeterminate, value.abs() - band)
    }
}

/// Relative error of a mean carried to its logarithm.
fn log_error(m: &OffspringMean) -> f64 {
    match m.value {
        ExtendedReal::Finite(v) if v > 0.0 => m.error / v,
        _ => 0.0,
    }
}

/// Offspring means memoized per environment; growth and kernel tags are fixed
/// within one process.
struct MeanCache {
    mech: DispersalKind,
    tol: Tolerance,
    map: HashMap<(u64, u64, u64, u32), OffspringMean>,
}

impl MeanCache {
    fn new(mech: DispersalKind, tol: Tolerance) -> Self {
        MeanCache { mech, tol, map: HashMap::new() }
    }

    fn get(&mut self, env: &Environment) -> Result<OffspringMean> {
        let key = (env.theta.to_bits(), env.lambda.to_bits(), env.p.to_bits(), env.d);
        if let Some(m) = self.map.get(&key) {
            return Ok(*m);
        }
        let m = env.offspring_mean(self.mech, &self.tol)?;
        self.map.insert(key, m);
        Ok(m)
    }
}

/// Per-generation means and the log-mean process of one realized path.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeanTrace {
    mechanism: DispersalKind,
    means: Vec<ExtendedReal>,
    logs: Vec<f64>,
    partial_sums: Vec<f64>,
    cesaro: Vec<f64>,
}

impl LogMeanTrace {
    /// Builds the trace from `mu_0, ..., mu_{H-1}`. `partial_sums[n-1]` is
    /// `S_n`; an infinite mean makes every later `S_n` and `S_n / n` infinite.
    pub fn from_means(mechanism: DispersalKind, means: Vec<ExtendedReal>) -> Result<Self> {
        if means.is_empty() {
            return domain("log-mean trace needs a horizon of at least one generation");
        }
        let mut logs = Vec::with_capacity(means.len());
        let mut partial_sums = Vec::with_capacity(means.len());
        let mut cesaro = Vec::with_capacity(means.len());
        let mut sum = CompensatedSum::new();
        let mut poisoned = false;
        for (i, m) in means.iter().enumerate() {
            let ell = match m {
                ExtendedReal::Finite(v) if *v > 0.0 => v.ln(),
                ExtendedReal::Finite(v) => return domain(format!("offspring means must be positive (got {v})")),
                ExtendedReal::PosInfinity => f64::INFINITY,
            };
            logs.push(ell);
            poisoned |= ell.is_infinite();
            let s = if poisoned {
                f64::INFINITY
            } else {
                sum.add(ell);
                sum.value()
            };
            partial_sums.push(s);
            cesaro.push(s / (i + 1) as f64);
        }
        Ok(LogMeanTrace { mechanism, means, logs, partial_sums, cesaro })
    }

    pub fn mechanism(&self) -> DispersalKind {
        self.mechanism
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[ExtendedReal] {
        &self.means
    }

    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    /// `S_1, ..., S_H`.
    pub fn partial_sums(&self) -> &[f64] {
        &self.partial_sums
    }

    /// `S_1 / 1, ..., S_H / H`.
    pub fn cesaro(&self) -> &[f64] {
        &self.cesaro
    }

    pub fn has_infinite_mean(&self) -> bool {
        self.means.iter().any(|m| !m.is_finite())
    }

    /// Estimates of `(liminf, limsup)` of `S_n / n`: extremes over the last
    /// half of the horizon.
    pub fn tail_cesaro_range(&self) -> (f64, f64) {
        let tail = &self.cesaro[self.cesaro.len() / 2..];
        let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Log-mean trace over generations `0..horizon` of one path. Deterministic
/// families ignore `rng`.
pub fn log_mean_trace(
    proc: &EnvironmentProcess,
    mech: DispersalKind,
    horizon: usize,
    rng: ChaCha8Rng,
    tol: &Tolerance,
) -> Result<LogMeanTrace> {
    if horizon == 0 {
        return domain("log-mean trace needs a horizon of at least one generation");
    }
    let mut path = EnvironmentPath::new(proc.clone(), rng);
    let mut cache = MeanCache::new(mech, *tol);
    let means = (0..horizon as u64).map(|n| Ok(cache.get(&path.at(n)?)?.value)).collect::<Result<Vec<_>>>()?;
    LogMeanTrace::from_means(mech, means)
}

/// Cesàro-tail classification of a deterministic trace; never analytic.
pub fn classify_varying_numeric(trace: &LogMeanTrace, tol: f64) -> Verdict {
    classify_varying_numeric_with_comparison(trace, None, tol)
}

/// As [`classify_varying_numeric`], but a trace with infinite means may still
/// be declared surviving when `bounded` (a finite-mean mechanism on the same
/// path, dominated pathwise by full dispersal) already is.
pub fn classify_varying_numeric_with_comparison(
    trace: &LogMeanTrace,
    bounded: Option<&LogMeanTrace>,
    tol: f64,
) -> Verdict {
    const CRITERION: &str = "varying_environment_drift";
    if trace.has_infinite_mean() {
        let outside = "infinite offspring means fall outside the finite-mean hypothesis of the drift criterion";
        if let Some(b) = bounded.filter(|b| !b.has_infinite_mean()) {
            let v = classify_varying_numeric(b, tol);
            if v.outcome == Outcome::SurvivalPositive {
                return Verdict::numeric(Outcome::SurvivalPositive, CRITERION, tol, v.evidence, v.margin)
                    .note(outside)
                    .note(format!("survival inferred from the {} mechanism, which full dispersal dominates", b.mechanism().label()));
            }
        }
        return Verdict::numeric(Outcome::CriticalIndeterminate, CRITERION, tol, f64::INFINITY, f64::NEG_INFINITY)
            .note(outside);
    }
    let (lo, hi) = trace.tail_cesaro_range();
    let horizon_note = format!("Cesàro extremes over generations {}..{}", trace.horizon() / 2 + 1, trace.horizon());
    let v = if hi < -tol {
        Verdict::numeric(Outcome::ExtinctionAS, CRITERION, tol, hi, -tol - hi)
    } else if lo > tol {
        Verdict::numeric(Outcome::SurvivalPositive, CRITERION, tol, lo, lo - tol)
    } else {
        let last = *trace.cesaro().last().expect("nonempty trace");
        Verdict::numeric(Outcome::CriticalIndeterminate, CRITERION, tol, last, -(hi + tol).min(tol - lo))
    };
    v.note(horizon_note).note("finite-horizon estimate of the drift limits")
}

/// Analytic verdicts for deterministic families whose drift has a limit.
pub fn classify_varying_analytic(proc: &EnvironmentProcess, mech: DispersalKind, tol: &Tolerance) -> Result<Verdict> {
    match &proc.family {
        EnvironmentFamily::Constant { .. } | EnvironmentFamily::ExplicitSequence { .. } => {
            // eventually constant, so the drift is the log mean of the final environment
            let n = match &proc.family {
                EnvironmentFamily::ExplicitSequence { steps } => steps.len() as u64 - 1,
                _ => 0,
            };
            let env = proc.deterministic_at(n)?;
            limit_mean_verdict("varying_environment_drift", &env, mech, tol)
        }
        EnvironmentFamily::DecreasingCatastrophe { lambda, epsilon, p, d, .. } => {
            let yule_binomial = proc.growth == GrowthKind::Yule && proc.kernel == KernelKind::Binomial;
            if yule_binomial && mech == DispersalKind::Full {
                let threshold = epsilon / (lambda + epsilon);
                let drift = p.ln() + ((lambda + epsilon) / epsilon).ln();
                let (outcome, relation) = if *p > threshold {
                    (Outcome::SurvivalPositive, ">")
                } else if *p < threshold {
                    (Outcome::ExtinctionAS, "<")
                } else {
                    (Outcome::CriticalIndeterminate, "=")
                };
                let evidence = if outcome == Outcome::CriticalIndeterminate { 0.0 } else { drift };
                let margin = if outcome == Outcome::CriticalIndeterminate { 0.0 } else { drift.abs() };
                return Ok(Verdict::analytic(
                    outcome,
                    "decreasing_catastrophe",
                    format!("p = {p} {relation} epsilon/(lambda+epsilon) = {threshold}"),
                    evidence,
                    margin,
                ));
            }
            // theta_n -> lambda + epsilon and means are continuous in theta
            let env = proc.env(lambda + epsilon, *lambda, *p, *d)?;
            limit_mean_verdict("decreasing_catastrophe", &env, mech, tol)
        }
        EnvironmentFamily::FertilityDecay { p, .. } => {
            // lambda_n -> 0 leaves one individual, which every mechanism maps to
            // at most one colony, so mu_n -> E[N_1]
            let kernel = SurvivorKernel::from_kind(proc.kernel, *p)?;
            let limit = kernel.expect(1, |k| k as f64);
            let subject = match proc.kernel {
                KernelKind::Binomial => format!("p = {p}"),
                _ => format!("E[N_1] = {limit}"),
            };
            let evidence = limit.ln();
            Ok(if limit < 1.0 {
                Verdict::analytic(Outcome::ExtinctionAS, "fertility_decay", format!("{subject} < 1"), evidence, -evidence)
            } else {
                Verdict::analytic(Outcome::CriticalIndeterminate, "fertility_decay", format!("{subject} = 1"), 0.0, 0.0)
                    .note("the drift vanishes; the criterion does not decide")
            })
        }
        _ => usage("analytic varying-environment verdicts need a deterministic family"),
    }
}

fn limit_mean_verdict(theorem: &str, env: &Environment, mech: DispersalKind, tol: &Tolerance) -> Result<Verdict> {
    let m = env.offspring_mean(mech, tol)?;
    let Some(v) = m.value.value() else {
        return Ok(Verdict::analytic(
            Outcome::CriticalIndeterminate,
            theorem,
            "limit mean = inf".into(),
            f64::INFINITY,
            f64::NEG_INFINITY,
        )
        .note("infinite offspring means fall outside the finite-mean hypothesis of the drift criterion"));
    };
    let drift = v.ln();
    let band = log_error(&m);
    let (outcome, margin) = decide(drift, band);
    let relation = match outcome {
        Outcome::SurvivalPositive => ">",
        Outcome::ExtinctionAS => "<",
        Outcome::CriticalIndeterminate => "~",
    };
    Ok(Verdict::analytic(outcome, theorem, format!("log limit mean = {drift} {relation} 0 (error {band:.1e})"), drift, margin))
}

/// Retention probability above which the Poisson-binomial full-dispersal
/// mean exceeds one.
pub fn poisson_binomial_threshold(theta: f64, lambda: f64) -> f64 {
    theta / (theta + lambda)
}

/// Composition mean of the Poisson-binomial model in hypergeometric form:
/// `d - d(1-p) F(1,1;d;-a) - p(d-1) F(1,1;d+1;-a)` with `a = lambda p / theta`.
pub fn poisson_binomial_composition_mean(theta: f64, lambda: f64, p: f64, d: u32, tol: &Tolerance) -> Result<f64> {
    if d < 2 {
        return domain("hypergeometric form of the composition mean needs d >= 2");
    }
    let df = d as f64;
    let x = -lambda * p / theta;
    Ok(df - df * (1.0 - p) * hyp2f1_11(df, x, tol)? - p * (df - 1.0) * hyp2f1_11(df + 1.0, x, tol)?)
}

/// Parameter box `[theta_lo, theta_hi] x ... x [d_lo, d_hi]` containing every
/// environment of a Poisson-binomial sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBox {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub d_lo: u32,
    pub d_hi: u32,
}

impl ParameterBox {
    pub fn validate(&self) -> Result<()> {
        let ParameterBox { theta_lo, theta_hi, lambda_lo, lambda_hi, p_lo, p_hi, d_lo, d_hi } = *self;
        if !(0.0 < lambda_lo && lambda_lo <= lambda_hi && lambda_hi < theta_lo && theta_lo <= theta_hi && theta_hi.is_finite()) {
            return domain("parameter box needs 0 < lambda_lo <= lambda_hi < theta_lo <= theta_hi");
        }
        if !(0.0 < p_lo && p_lo <= p_hi && p_hi <= 1.0) {
            return domain("parameter box needs 0 < p_lo <= p_hi <= 1");
        }
        if !(1 <= d_lo && d_lo <= d_hi) {
            return domain("parameter box needs 1 <= d_lo <= d_hi");
        }
        Ok(())
    }

    /// Upper bound on every full-dispersal mean in the box.
    pub fn full_mean_upper(&self) -> f64 {
        self.p_hi * (1.0 + self.lambda_hi / self.theta_lo)
    }

    /// Lower bound on every composition mean in the box, by the hypergeometric
    /// form and by the generic mean at the corner; the two must agree.
    pub fn composition_mean_lower(&self, tol: &Tolerance) -> Result<f64> {
        let corner = Environment::new(self.theta_hi, self.lambda_lo, self.p_lo, self.d_lo, GrowthKind::Poissonian, KernelKind::Binomial)?;
        let generic = corner.offspring_mean(DispersalKind::Composition, tol)?.value.to_f64();
        if self.d_lo < 2 {
            return Ok(generic);
        }
        let closed = poisson_binomial_composition_mean(self.theta_hi, self.lambda_lo, self.p_lo, self.d_lo, &tol.scaled(1e-3))?;
        if (closed - generic).abs() > M4_PATH_AGREEMENT {
            return numeric(format!("composition mean paths disagree at the corner: {closed} vs {generic}"));
        }
        Ok(closed)
    }
}

/// Verdict for every Poisson-binomial sequence inside `bounds`: extinction
/// when the largest full-dispersal mean is below one, survival when the
/// smallest composition mean exceeds one.
pub fn interval_bounds_verdict(bounds: &ParameterBox, tol: &Tolerance) -> Result<Verdict> {
    bounds.validate()?;
    let m1 = bounds.full_mean_upper();
    if m1 < 1.0 {
        return Ok(Verdict::analytic(
            Outcome::ExtinctionAS,
            "interval_bounds",
            format!("p_hi (1 + lambda_hi/theta_lo) = {m1} < 1"),
            m1.ln(),
            -m1.ln(),
        ));
    }
    let m4 = bounds.composition_mean_lower(tol)?;
    if m4 > 1.0 {
        return Ok(Verdict::analytic(
            Outcome::SurvivalPositive,
            "interval_bounds",
            format!("composition mean at (theta_hi, lambda_lo, p_lo, d_lo) = {m4} > 1"),
            m4.ln(),
            m4.ln(),
        ));
    }
    Ok(Verdict::analytic(
        Outcome::CriticalIndeterminate,
        "interval_bounds",
        format!("composition lower bound {m4} <= 1 <= {m1} full-dispersal upper bound"),
        m4.ln(),
        -(m1.ln()).min(-m4.ln()),
    ))
}

/// The simple sufficient condition `d_lo > 1/p_lo` and
/// `lambda_lo/theta_hi > 1/((d_lo - 1) p_lo)`.
pub fn survival_sufficient_condition(p_lo: f64, d_lo: u32, lambda_lo: f64, theta_hi: f64) -> Result<bool> {
    if d_lo < 2 {
        return domain("the sufficient condition needs d_lo >= 2");
    }
    let df = d_lo as f64;
    Ok(df > 1.0 / p_lo && lambda_lo / theta_hi > 1.0 / ((df - 1.0) * p_lo))
}

/// How the drift of a random environment is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftMethod {
    /// Stationary expectation in closed form (finite i.i.d. atoms, the
    /// correlated chain series, adaptive bounds).
    ClosedForm,
    /// Path average with a batch-means standard error.
    ErgodicAverage { path_len: usize },
}

/// Mean and batch-means standard error of a stationary sequence.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    let batch = (n as f64).sqrt().ceil() as usize;
    let batches = n / batch.max(1);
    if batches < 2 {
        return (mean, f64::INFINITY);
    }
    let batch_means: Vec<f64> =
        values[..batches * batch].chunks(batch).map(|c| c.iter().sum::<f64>() / batch as f64).collect();
    let bm = batch_means.iter().sum::<f64>() / batches as f64;
    let var = batch_means.iter().map(|x| (x - bm) * (x - bm)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Drift classification of a stochastic environment process.
pub fn classify_random(
    proc: &EnvironmentProcess,
    mech: DispersalKind,
    method: DriftMethod,
    rng: ChaCha8Rng,
    tol: &Tolerance,
) -> Result<Verdict> {
    if proc.is_deterministic() {
        return usage("random-environment classification needs a stochastic family");
    }
    match method {
        DriftMethod::ClosedForm => classify_random_closed(proc, mech, tol),
        DriftMethod::ErgodicAverage { path_len } => classify_random_ergodic(proc, mech, path_len, rng, tol),
    }
}

const RANDOM_DRIFT: &str = "random_environment_drift";

fn positivity_warning(min_positive: f64) -> Option<String> {
    (min_positive < POSITIVE_PROB_WARNING).then(|| {
        format!("P(xi > 0 | E) reaches {min_positive:.3e}; the log-integrability hypothesis may fail")
    })
}

fn classify_random_closed(proc: &EnvironmentProcess, mech: DispersalKind, tol: &Tolerance) -> Result<Verdict> {
    match &proc.family {
        EnvironmentFamily::Iid { marginal } => {
            let Some(atoms) = marginal.atoms() else {
                return usage("closed-form drift needs a finitely supported i.i.d. marginal; use an ergodic average");
            };
            let total: f64 = atoms.iter().map(|(_, w)| w).sum();
            let mut drift = CompensatedSum::new();
            let mut error = 0.0;
            let mut min_positive = f64::INFINITY;
            let mut all_degenerate = true;
            for (params, w) in &atoms {
                if *w == 0.0 {
                    continue;
                }
                let env = proc.env(params.theta, params.lambda, params.p, params.d)?;
                let m = env.offspring_mean(mech, tol)?;
                if !m.value.is_finite() {
                    return Ok(Verdict::analytic(
                        Outcome::CriticalIndeterminate,
                        RANDOM_DRIFT,
                        "E[log mu] = inf".into(),
                        f64::INFINITY,
                        f64::NEG_INFINITY,
                    )
                    .note("infinite offspring means fall outside the finite-mean hypothesis of the drift criterion"));
                }
                drift.add(w / total * m.value.to_f64().ln());
                error += w / total * log_error(&m);
                min_positive = min_positive.min(env.survivor_law(tol)?.prob_positive()?);
                all_degenerate &= env.offspring_law(mech, tol)?.is_degenerate();
            }
            let drift = drift.value();
            let band = error + tol.bound(drift.abs());
            let (outcome, margin) = decide(drift, band);
            let v = match outcome {
                Outcome::CriticalIndeterminate if !all_degenerate => Verdict::analytic(
                    Outcome::ExtinctionAS,
                    "random_environment_critical",
                    format!("E[log mu] = {drift} = 0 within {band:.1e}, offspring law non-degenerate"),
                    drift,
                    0.0,
                ),
                Outcome::CriticalIndeterminate => Verdict::analytic(
                    outcome,
                    RANDOM_DRIFT,
                    format!("E[log mu] = {drift} = 0 within {band:.1e}, offspring law degenerate"),
                    drift,
                    margin,
                ),
                _ => {
                    let rel = if outcome == Outcome::SurvivalPositive { ">" } else { "<" };
                    Verdict::analytic(outcome, RANDOM_DRIFT, format!("E[log mu] = {drift} {rel} 0"), drift, margin)
                }
            };
            Ok(match positivity_warning(min_positive) {
                Some(w) => v.note(w),
                None => v,
            })
        }
        EnvironmentFamily::CorrelatedCatastrophe { lambda, epsilon, gamma, rho_persist, theta0, p, d } => {
            let floor = lambda + epsilon;
            let mut cache = MeanCache::new(mech, *tol);
            let mut ell = |theta: f64| -> Result<(f64, f64)> {
                let m = cache.get(&proc.env(theta, *lambda, *p, *d)?)?;
                Ok((m.value.to_f64().ln(), log_error(&m)))
            };
            // ell is monotone in theta, so its extremes sit at the ends of [floor, theta0]
            let (at_floor, _) = ell(floor)?;
            let (at_top, _) = ell(*theta0)?;
            let sup = at_floor.abs().max(at_top.abs());
            if !sup.is_finite() {
                return Ok(Verdict::analytic(
                    Outcome::CriticalIndeterminate,
                    RANDOM_DRIFT,
                    "E[log mu] = inf".into(),
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                )
                .note("infinite offspring means fall outside the finite-mean hypothesis of the drift criterion"));
            }
            let (drift, error) = correlated_series(*rho_persist, |k| {
                let theta = floor + (theta0 - floor) * gamma.powi(k as i32);
                if theta == floor {
                    return Ok(None);
                }
                ell(theta).map(Some)
            }, at_floor, sup)?;
            let band = error + SERIES_TOL;
            let (outcome, margin) = decide(drift, band);
            let rel = match outcome {
                Outcome::SurvivalPositive => ">",
                Outcome::ExtinctionAS => "<",
                Outcome::CriticalIndeterminate => "~",
            };
            let v = Verdict::analytic(outcome, "correlated_catastrophe", format!("E_stat[log mu] = {drift} {rel} 0"), drift, margin);
            Ok(if outcome == Outcome::CriticalIndeterminate {
                v.note("stationary drift indistinguishable from zero; non-degeneracy not checked along the chain")
            } else {
                v
            })
        }
        EnvironmentFamily::AdaptiveSurvival { a, psi, theta, lambda, .. } => {
            let threshold = -growth_mean_ln(proc.growth, *theta, *lambda);
            let (lower, upper) = adaptive_bounds(*a, psi);
            if upper <= threshold {
                let v = Verdict::analytic(
                    Outcome::ExtinctionAS,
                    "adaptive_survival",
                    format!("log(a + (1-a) E[psi]) = {upper} <= -log E[eta] = {threshold}"),
                    upper - threshold,
                    threshold - upper,
                );
                return Ok(if mech == DispersalKind::Full { v } else { v.note("extinction carried over from full dispersal, which dominates every mechanism") });
            }
            if mech == DispersalKind::Full && lower > threshold {
                return Ok(Verdict::analytic(
                    Outcome::SurvivalPositive,
                    "adaptive_survival",
                    format!("E[log psi] = {lower} > -log E[eta] = {threshold}"),
                    lower - threshold,
                    lower - threshold,
                ));
            }
            Ok(Verdict::analytic(
                Outcome::CriticalIndeterminate,
                "adaptive_survival",
                format!("bounds [{lower}, {upper}] on E_stat[log p] do not decide against {threshold}"),
                upper - threshold,
                -(threshold - lower).min(upper - threshold),
            )
            .note("use an ergodic average to decide"))
        }
        _ => usage("closed-form drift is not available for this family"),
    }
}

/// `(1 - rho) sum_k rho^k f(k)`: stops once `f(k)` returns `None` (the
/// remaining terms all equal `limit`) or the tail `rho^(K+1) sup` is below
/// [`SERIES_TOL`]. Returns the value and the accumulated error bound.
fn correlated_series(
    rho: f64,
    mut f: impl FnMut(u64) -> Result<Option<(f64, f64)>>,
    limit: f64,
    sup: f64,
) -> Result<(f64, f64)> {
    let mut sum = CompensatedSum::new();
    let mut error = 0.0;
    let mut weight = 1.0 - rho;
    let mut k = 0u64;
    loop {
        // terms before k carry mass 1 - rho^k
        let remaining = rho.powi(k as i32);
        match f(k)? {
            None => {
                sum.add(remaining * limit);
                return Ok((sum.value(), error));
            }
            Some((value, err)) => {
                sum.add(weight * value);
                error += weight * err;
            }
        }
        let tail_mass = remaining * rho;
        if tail_mass * sup <= SERIES_TOL {
            return Ok((sum.value(), error + tail_mass * sup));
        }
        weight *= rho;
        k += 1;
    }
}

fn growth_mean_ln(growth: GrowthKind, theta: f64, lambda: f64) -> f64 {
    match growth {
        GrowthKind::Poissonian => (lambda / theta).ln_1p(),
        GrowthKind::Yule => (theta / (theta - lambda)).ln(),
    }
}

fn classify_random_ergodic(
    proc: &EnvironmentProcess,
    mech: DispersalKind,
    path_len: usize,
    rng: ChaCha8Rng,
    tol: &Tolerance,
) -> Result<Verdict> {
    if path_len < 4 {
        return domain("ergodic average needs a path of at least four generations");
    }
    let mut path = EnvironmentPath::new(proc.clone(), rng);
    let mut cache = MeanCache::new(mech, *tol);
    let mut logs = Vec::with_capacity(path_len);
    let mut min_positive = f64::INFINITY;
    let mut positivity: HashMap<(u64, u64, u64), f64> = HashMap::new();
    for n in 0..path_len as u64 {
        let env = path.at(n)?;
        let m = cache.get(&env)?;
        if !m.value.is_finite() {
            return Ok(Verdict::numeric(Outcome::CriticalIndeterminate, RANDOM_DRIFT, f64::NAN, f64::INFINITY, f64::NEG_INFINITY)
                .note(format!("infinite offspring mean at generation {n}; outside the finite-mean hypothesis")));
        }
        logs.push(m.value.to_f64().ln());
        let key = (env.theta.to_bits(), env.lambda.to_bits(), env.p.to_bits());
        let pos = match positivity.get(&key) {
            Some(v) => *v,
            None => {
                let v = env.survivor_law(tol)?.prob_positive()?;
                positivity.insert(key, v);
                v
            }
        };
        min_positive = min_positive.min(pos);
    }
    let (drift, se) = mean_and_stderr(&logs);
    let band = STDERR_BAND * se;
    let (outcome, margin) = decide(drift, band);
    let v = Verdict::numeric(outcome, RANDOM_DRIFT, band, drift, margin)
        .note(format!("ergodic average over {path_len} generations, standard error {se:.3e}"));
    Ok(match positivity_warning(min_positive) {
        Some(w) => v.note(w),
        None => v,
    })
}

/// Stationary mean of `log(Theta / (Theta - lambda))` for the correlated
/// catastrophe chain, certified to `tol`.
pub fn l_corr(lambda: f64, epsilon: f64, gamma: f64, rho_persist: f64, theta0: f64, tol: f64) -> Result<f64> {
    if !(lambda > 0.0 && epsilon > 0.0 && gamma > 0.0 && gamma < 1.0 && (0.0..1.0).contains(&rho_persist) && theta0 > lambda + epsilon) {
        return domain("l_corr needs lambda, epsilon > 0, gamma in (0,1), rho in [0,1), theta0 > lambda + epsilon");
    }
    if !(tol > 0.0) {
        return domain("l_corr needs a positive tolerance");
    }
    let excess = theta0 - lambda - epsilon;
    let term = |k: u64| {
        let shrink = excess * gamma.powf(k as f64);
        ((lambda + epsilon + shrink) / (epsilon + shrink)).ln()
    };
    let sup = ((lambda + epsilon) / epsilon).ln();
    let mut sum = CompensatedSum::new();
    let mut weight = 1.0 - rho_persist;
    let mut k = 0u64;
    loop {
        sum.add(weight * term(k));
        if rho_persist.powf(k as f64 + 1.0) * sup <= tol {
            return Ok(sum.value());
        }
        weight *= rho_persist;
        k += 1;
    }
}

/// Survival iff `L_corr > log(1/p)`; extinction otherwise.
pub fn l_corr_verdict(l_corr_value: f64, p: f64) -> Verdict {
    let threshold = (1.0 / p).ln();
    let gap = l_corr_value - threshold;
    if gap > 0.0 {
        Verdict::analytic(Outcome::SurvivalPositive, "correlated_catastrophe", format!("L_corr = {l_corr_value} > log(1/p) = {threshold}"), gap, gap)
    } else {
        Verdict::analytic(Outcome::ExtinctionAS, "correlated_catastrophe", format!("L_corr = {l_corr_value} <= log(1/p) = {threshold}"), gap, -gap)
    }
}

/// `(E[log psi], log(a + (1 - a) E[psi]))`, bracketing the stationary mean of
/// `log p` for the adaptive chain.
pub fn adaptive_bounds(a: f64, psi: &PsiLaw) -> (f64, f64) {
    (psi.mean_log(), (a + (1.0 - a) * psi.mean()).ln())
}

/// Full-dispersal verdict for the adaptive family: closed-form bounds first,
/// then an ergodic average of `log p` after `burn_in` steps.
pub fn adaptive_verdict(proc: &EnvironmentProcess, path_len: usize, burn_in: usize, rng: ChaCha8Rng) -> Result<Verdict> {
    let EnvironmentFamily::AdaptiveSurvival { theta, lambda, p0, .. } = &proc.family else {
        return usage("adaptive verdict applies to the adaptive survival family");
    };
    if path_len < 4 {
        return domain("ergodic average needs a path of at least four generations");
    }
    let bounds = classify_random_closed(proc, DispersalKind::Full, &Tolerance::default())?;
    if bounds.outcome != Outcome::CriticalIndeterminate {
        return Ok(bounds);
    }
    let threshold = -growth_mean_ln(proc.growth, *theta, *lambda);
    let mut rng = rng;
    let chain = proc.simulate_p_chain(burn_in + path_len, *p0, &mut rng)?;
    let logs: Vec<f64> = chain[burn_in + 1..].iter().map(|p| p.ln()).collect();
    let (estimate, se) = mean_and_stderr(&logs);
    let band = STDERR_BAND * se;
    let (outcome, margin) = decide(estimate - threshold, band);
    Ok(Verdict::numeric(outcome, "adaptive_survival", band, estimate - threshold, margin).note(format!(
        "E_stat[log p] ~ {estimate} (standard error {se:.3e}) against -log E[eta] = {threshold}; {path_len} steps after {burn_in} burn-in"
    )))
}
