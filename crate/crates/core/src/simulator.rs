//! Monte Carlo simulation of the colony count `Z_{n+1} = sum_{i <= Z_n} xi_{i,n}`
//! and the exact extinction probability of a constant environment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersal::{Dispersal, DispersalKind};
use crate::environments::{Environment, EnvironmentPath, EnvironmentProcess};
use crate::error::{domain, numeric, Result};
use crate::growth::ColonySizeLaw;
use crate::numerics::Tolerance;
use crate::survivors::SurvivorKernel;

pub const DEFAULT_SURVIVAL_CAP: u64 = 10_000;
pub const MIN_SURVIVAL_CAP: u64 = 1_000;
pub const MAX_FIXED_POINT_ITERATIONS: usize = 1_000_000;
/// Generation index reserved for the environment stream of a replicate.
pub const ENVIRONMENT_STREAM: u64 = u64::MAX;
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the stream used by `replicate` in `generation`:
/// `mix64(mix64(mix64(master) ^ replicate) ^ generation)`. Part of the
/// reproducibility contract; changing it changes every simulated result.
pub fn stream_seed(master: u64, replicate: u64, generation: u64) -> u64 {
    mix64(mix64(mix64(master) ^ replicate) ^ generation)
}

pub fn stream(master: u64, replicate: u64, generation: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, replicate, generation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub generations: u32,
    pub replicates: u32,
    pub survival_cap: u64,
    pub master_seed: u64,
    pub mechanism: DispersalKind,
    pub process: EnvironmentProcess,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return domain("simulation needs at least one generation");
        }
        if self.replicates == 0 {
            return domain("simulation needs at least one replicate");
        }
        if self.survival_cap < MIN_SURVIVAL_CAP {
            return domain(format!("survival cap must be at least {MIN_SURVIVAL_CAP} (got {})", self.survival_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReplicateOutcome {
    /// First generation with no colonies.
    ExtinctBy { generation: u32 },
    /// Colonies remain at the horizon, or the cap was reached earlier
    /// (`population` is then the first count at or above the cap).
    AliveAtHorizon { population: u64, capped: bool },
}

impl ReplicateOutcome {
    pub fn survived(&self) -> bool {
        matches!(self, Self::AliveAtHorizon { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u32,
    pub outcome: ReplicateOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub master_seed: u64,
    pub generations: u32,
    pub survival_cap: u64,
    pub mechanism: DispersalKind,
    pub replicates: u32,
    pub survivors: u32,
    pub survival_frequency: f64,
    /// Wilson score interval at 95%.
    pub confidence_interval: (f64, f64),
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u32, trials: u32) -> (f64, f64) {
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let centre = (phat + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = WILSON_Z / (1.0 + z2 / n) * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    // clamped so rounding never pushes the estimate outside
    ((centre - half).clamp(0.0, phat), (centre + half).clamp(phat, 1.0))
}

/// Runs every replicate on its own derived streams; the result does not
/// depend on the rayon pool it runs in.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationResult> {
    config.validate()?;
    let records = (0..config.replicates)
        .into_par_iter()
        .map(|i| Ok(ReplicateRecord { replicate: i, outcome: run_replicate(config, i)? }))
        .collect::<Result<Vec<_>>>()?;
    let survivors = records.iter().filter(|r| r.outcome.survived()).count() as u32;
    Ok(SimulationResult {
        master_seed: config.master_seed,
        generations: config.generations,
        survival_cap: config.survival_cap,
        mechanism: config.mechanism,
        replicates: config.replicates,
        survivors,
        survival_frequency: survivors as f64 / config.replicates as f64,
        confidence_interval: wilson_interval(survivors, config.replicates),
        records,
    })
}

/// Samplers for one generation's environment.
struct Generation {
    colony: ColonySizeLaw,
    kernel: SurvivorKernel,
    dispersal: Dispersal,
}

impl Generation {
    fn new(env: &Environment, mech: DispersalKind) -> Result<Self> {
        Ok(Generation {
            colony: env.colony_law()?,
            kernel: SurvivorKernel::from_kind(env.kernel, env.p)?,
            dispersal: mech.with_sites(env.d)?,
        })
    }

    fn offspring(&self, rng: &mut ChaCha8Rng) -> u64 {
        let m = self.colony.sample(rng);
        let r = self.kernel.sample(m, rng);
        self.dispersal.sample(r, rng)
    }
}

fn run_replicate(config: &SimulationConfig, replicate: u32) -> Result<ReplicateOutcome> {
    let seed = config.master_seed;
    let mut path = EnvironmentPath::new(config.process.clone(), stream(seed, replicate as u64, ENVIRONMENT_STREAM));
    let mut cached: Option<(Environment, Generation)> = None;
    let mut z: u64 = 1;
    for n in 0..config.generations {
        let env = path.at(n as u64)?;
        if cached.as_ref().map(|(e, _)| *e != env).unwrap_or(true) {
            cached = Some((env, Generation::new(&env, config.mechanism)?));
        }
        let gen = &cached.as_ref().expect("just filled").1;
        let mut rng = stream(seed, replicate as u64, n as u64);
        let mut next: u64 = 0;
        for _ in 0..z {
            next = next.saturating_add(gen.offspring(&mut rng));
            if next >= config.survival_cap {
                return Ok(ReplicateOutcome::AliveAtHorizon { population: next, capped: true });
            }
        }
        if next == 0 {
            return Ok(ReplicateOutcome::ExtinctBy { generation: n + 1 });
        }
        z = next;
    }
    Ok(ReplicateOutcome::AliveAtHorizon { population: z, capped: false })
}

/// Smallest fixed point of the offspring pgf on `[0, 1]` for a constant
/// environment, by monotone iteration from zero until successive iterates
/// differ by less than `tol`.
pub fn extinction_probability_exact(env: &Environment, mech: DispersalKind, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return domain("fixed-point tolerance must be positive");
    }
    let law = env.offspring_law(mech, &Tolerance::default())?;
    if law.pmf(0) == 0.0 {
        return Ok(0.0);
    }
    let m = law.mean_with_error();
    if let Some(mean) = m.value.value() {
        if mean <= 1.0 + m.error && !law.is_degenerate() {
            return Ok(1.0);
        }
    }
    if law.is_degenerate() {
        // all mass at zero here, since P(xi = 0) > 0
        return Ok(1.0);
    }
    let mut q = 0.0;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        let next = law.pgf(q).min(1.0);
        if (next - q).abs() < tol {
            return Ok(next);
        }
        q = next;
    }
    numeric(format!("extinction fixed point did not converge within {MAX_FIXED_POINT_ITERATIONS} iterations"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::EnvironmentFamily;
    use crate::growth::GrowthKind;
    use crate::survivors::KernelKind;

    fn env(theta: f64, lambda: f64, p: f64, d: u32) -> Environment {
        Environment::new(theta, lambda, p, d, GrowthKind::Poissonian, KernelKind::Binomial).unwrap()
    }

    fn config(e: Environment, mech: DispersalKind, replicates: u32, generations: u32, seed: u64) -> SimulationConfig {
        SimulationConfig {
            generations,
            replicates,
            survival_cap: DEFAULT_SURVIVAL_CAP,
            master_seed: seed,
            mechanism: mech,
            process: EnvironmentProcess::constant(e),
        }
    }

    /// Smallest root of `G(s) = s` for the Poisson-binomial full-dispersal
    /// pgf `G(s) = (1-q)(1-p+ps) / (1 - q(1-p+ps))`, `q = lambda/(theta+lambda)`.
    fn quadratic_root(theta: f64, lambda: f64, p: f64) -> f64 {
        let q = lambda / (theta + lambda);
        // s (1 - q u) = (1 - q) u with u = 1 - p + p s
        let a = q * p;
        let b = -(1.0 - q * (1.0 - p)) + (1.0 - q) * p;
        let c = (1.0 - q) * (1.0 - p);
        let disc = (b * b - 4.0 * a * c).sqrt();
        ((-b - disc) / (2.0 * a)).min(1.0)
    }

    #[test]
    fn stream_seeds_are_distinct_and_stable() {
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
        let mut seen = std::collections::HashSet::new();
        for r in 0..50 {
            for g in 0..50 {
                assert!(seen.insert(stream_seed(42, r, g)));
            }
        }
        assert_ne!(stream_seed(1, 0, 0), stream_seed(2, 0, 0));
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        for (s, n) in [(0, 10), (3, 10), (10, 10), (512, 1000)] {
            let (lo, hi) = wilson_interval(s, n);
            let phat = s as f64 / n as f64;
            assert!(lo <= phat && phat <= hi && lo >= 0.0 && hi <= 1.0);
        }
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
    }

    #[test]
    fn fixed_point_examples() {
        assert_eq!(extinction_probability_exact(&env(2.0, 1.0, 0.3, 1), DispersalKind::Full, 1e-14).unwrap(), 1.0);
        assert_eq!(extinction_probability_exact(&env(1.0, 1.0, 1.0, 2), DispersalKind::Full, 1e-14).unwrap(), 0.0);
        let q = extinction_probability_exact(&env(1.0, 1.0, 0.75, 1), DispersalKind::Full, 1e-15).unwrap();
        assert!((q - quadratic_root(1.0, 1.0, 0.75)).abs() < 1e-10, "{q}");
        assert!((q - 1.0 / 3.0).abs() < 1e-10);
        for p in [0.55, 0.6, 0.9] {
            let q = extinction_probability_exact(&env(1.0, 1.0, p, 1), DispersalKind::Full, 1e-15).unwrap();
            assert!((q - quadratic_root(1.0, 1.0, p)).abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn fixed_points_follow_mechanism_order() {
        let e = env(1.0, 2.0, 0.8, 3);
        let qs: Vec<f64> = DispersalKind::ALL.iter().map(|&m| extinction_probability_exact(&e, m, 1e-14).unwrap()).collect();
        // min(d, r) dominates both occupancy counts pathwise, and r dominates min(d, r)
        assert!(qs[0] <= qs[1] + 1e-12 && qs[1] <= qs[2] + 1e-12 && qs[1] <= qs[3] + 1e-12, "{qs:?}");
    }

    #[test]
    fn subcritical_replicates_all_die() {
        let r = simulate(&config(env(2.0, 1.0, 0.3, 1), DispersalKind::Full, 2000, 200, 9)).unwrap();
        assert_eq!(r.survivors, 0);
        assert!(r.records.iter().all(|x| matches!(x.outcome, ReplicateOutcome::ExtinctBy { generation } if generation >= 1)));
    }

    #[test]
    fn certain_offspring_never_dies() {
        let r = simulate(&config(env(1.0, 1.0, 1.0, 2), DispersalKind::Full, 300, 200, 3)).unwrap();
        assert_eq!(r.survivors, 300);
    }

    #[test]
    fn supercritical_frequency_matches_fixed_point() {
        let e = env(1.0, 1.0, 0.75, 1);
        let q = extinction_probability_exact(&e, DispersalKind::Full, 1e-14).unwrap();
        let n = 10_000;
        let r = simulate(&config(e, DispersalKind::Full, n, 200, 11)).unwrap();
        let se = (q * (1.0 - q) / n as f64).sqrt();
        assert!((r.survival_frequency - (1.0 - q)).abs() <= 3.0 * se, "{} vs {}", r.survival_frequency, 1.0 - q);
        let (lo, hi) = r.confidence_interval;
        assert!(lo <= r.survival_frequency && r.survival_frequency <= hi);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let c = config(env(1.0, 1.5, 0.7, 3), DispersalKind::SiteChoice, 400, 60, 77);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| simulate(&c)).unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| simulate(&c)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.records, four.records);
        let other = simulate(&SimulationConfig { master_seed: 78, ..c }).unwrap();
        assert_ne!(one.records, other.records);
    }

    #[test]
    fn stochastic_paths_are_reproducible() {
        let process = EnvironmentProcess::new(
            GrowthKind::Yule,
            KernelKind::Binomial,
            EnvironmentFamily::CorrelatedCatastrophe { lambda: 1.0, epsilon: 0.5, gamma: 0.5, rho_persist: 0.5, theta0: 3.0, p: 0.8, d: 2 },
        )
        .unwrap();
        let c = SimulationConfig { generations: 50, replicates: 200, survival_cap: 2000, master_seed: 5, mechanism: DispersalKind::Capped, process };
        assert_eq!(simulate(&c).unwrap(), simulate(&c).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut c = config(env(2.0, 1.0, 0.3, 1), DispersalKind::Full, 10, 10, 1);
        c.survival_cap = 999;
        assert!(simulate(&c).is_err());
        c.survival_cap = 1000;
        c.replicates = 0;
        assert!(simulate(&c).is_err());
    }
}
