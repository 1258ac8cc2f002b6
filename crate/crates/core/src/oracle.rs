//! Brute-force reference computations: explicit enumeration of dispersal
//! outcomes and the colony-size / survivor / dispersal triple sum, built from
//! pmf primitives and its own occupancy recurrences only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classification::poisson_binomial_composition_mean;
use crate::dispersal::{composition_mean_integral, offspring_mean, DispersalKind};
use crate::environments::Environment;
use crate::error::{domain, Result};
use crate::growth::{ColonySizeLaw, GrowthKind};
use crate::numerics::{ln_choose, CompensatedSum, ExtendedReal, Tolerance};
use crate::simulator::{extinction_probability_exact, stream_seed};
use crate::survivors::{GeometricSupport, KernelKind, SurvivorKernel};

/// Largest colony size the triple sum visits; the sum is quadratic in it.
pub const ORACLE_MAX_COLONY: u64 = 3_000;
pub const ORACLE_TAIL_TARGET: f64 = 1e-12;
pub const D4_ENUMERATION_LIMIT: u64 = 22;
pub const D3_ENUMERATION_LIMIT: u64 = 10_000_000;
/// Parameter points in the verification grid.
pub const VERIFY_GRID_POINTS: usize = 50;
pub const VERIFY_SEED: u64 = 0x5eed_0f0c_a7a5_7e0f;
/// Draws per configuration in the empirical sampler check.
pub const SAMPLER_DRAWS: u32 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationBudget {
    pub m_max: u64,
    /// `P(eta > m_max)` from the closed-form survival function.
    pub tail_bound: f64,
}

impl TruncationBudget {
    pub fn new(growth: &ColonySizeLaw, m_max: u64) -> Result<Self> {
        if m_max == 0 {
            return domain("truncation budget needs m_max >= 1");
        }
        Ok(TruncationBudget { m_max, tail_bound: growth.tail(m_max) })
    }

    /// Smallest cut with tail below [`ORACLE_TAIL_TARGET`], capped at
    /// [`ORACLE_MAX_COLONY`].
    pub fn default_for(growth: &ColonySizeLaw) -> Self {
        let m_max = growth.support_cut(ORACLE_TAIL_TARGET, ORACLE_MAX_COLONY);
        TruncationBudget { m_max, tail_bound: growth.tail(m_max) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleLaw {
    /// Offspring pmf restricted to colony sizes `<= m_max`.
    pub pmf: Vec<f64>,
    /// Mass missing from `pmf`.
    pub tail_bound: f64,
    /// `sum_j j pmf[j]`.
    pub mean: f64,
    /// Bound on the true mean minus `mean`.
    pub mean_error: ExtendedReal,
}

/// `P(Y = k)` for colony sizes up to `m_max` by the double sum over colony
/// size and survivors.
pub fn enumerate_survivor_pmf(env: &Environment, budget: &TruncationBudget) -> Result<Vec<f64>> {
    let growth = env.colony_law()?;
    let kernel = SurvivorKernel::from_kind(env.kernel, env.p)?;
    let n = budget.m_max as usize;
    let mut acc = vec![CompensatedSum::new(); n + 1];
    for m in 1..=budget.m_max {
        let w = growth.pmf(m)?;
        if w == 0.0 {
            continue;
        }
        for k in 0..=m {
            acc[k as usize].add(w * kernel.pmf(m, k)?);
        }
    }
    Ok(acc.iter().map(|a| a.value()).collect())
}

/// Occupied-site rows `P(j | r)` for `r = 0..=r_max` under independent site
/// choice, by adding one survivor at a time.
fn occupancy_rows(r_max: usize, d: usize) -> Vec<Vec<f64>> {
    let df = d as f64;
    let mut rows = Vec::with_capacity(r_max + 1);
    let mut row = vec![0.0; d + 1];
    row[0] = 1.0;
    rows.push(row.clone());
    for _ in 0..r_max {
        let mut next = vec![0.0; d + 1];
        for j in 0..=d {
            if row[j] == 0.0 {
                continue;
            }
            next[j] += row[j] * j as f64 / df;
            if j < d {
                next[j + 1] += row[j] * (df - j as f64) / df;
            }
        }
        row = next;
        rows.push(row.clone());
    }
    rows
}

/// Stars-and-bars row `P(j | r) = C(d,j) C(r-1,j-1) / C(r+d-1, r)`.
fn composition_counts_row(r: u64, d: u64) -> Vec<f64> {
    let mut row = vec![0.0; d as usize + 1];
    if r == 0 {
        row[0] = 1.0;
        return row;
    }
    let total = ln_choose(r + d - 1, r);
    for j in 1..=r.min(d) {
        row[j as usize] = (ln_choose(d, j) + ln_choose(r - 1, j - 1) - total).exp();
    }
    row
}

/// Offspring law by the triple sum over colony size `m <= m_max`, survivors
/// `k <= m` and founded colonies `j`.
pub fn enumerate_offspring_law(env: &Environment, mech: DispersalKind, budget: &TruncationBudget) -> Result<OracleLaw> {
    let survivors = enumerate_survivor_pmf(env, budget)?;
    let n = survivors.len() - 1;
    let d = env.d as usize;
    let width = if mech == DispersalKind::Full { n + 1 } else { d + 1 };
    let mut acc = vec![CompensatedSum::new(); width];
    let site_rows = (mech == DispersalKind::SiteChoice).then(|| occupancy_rows(n, d));
    for (k, &w) in survivors.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        match mech {
            DispersalKind::Full => acc[k].add(w),
            DispersalKind::Capped => acc[k.min(d)].add(w),
            DispersalKind::SiteChoice => {
                for (j, &c) in site_rows.as_ref().expect("built for site choice")[k].iter().enumerate() {
                    acc[j].add(w * c);
                }
            }
            DispersalKind::Composition => {
                for (j, c) in composition_counts_row(k as u64, d as u64).into_iter().enumerate() {
                    acc[j].add(w * c);
                }
            }
        }
    }
    let pmf: Vec<f64> = acc.iter().map(|a| a.value()).collect();
    let mean = pmf.iter().enumerate().map(|(j, &w)| j as f64 * w).collect::<CompensatedSum>().value();
    let growth = env.colony_law()?;
    let mean_error = match mech {
        // survivors never exceed the colony size
        DispersalKind::Full => growth.mean_above(budget.m_max),
        _ => ExtendedReal::finite(d as f64 * budget.tail_bound),
    };
    Ok(OracleLaw { pmf, tail_bound: budget.tail_bound, mean, mean_error })
}

/// Occupied-part distribution over all `C(r+d-1, r)` compositions of `r`
/// into `d` ordered parts.
pub fn enumerate_d4_uniform(r: u64, d: u64) -> Result<Vec<f64>> {
    if d == 0 || r + d > D4_ENUMERATION_LIMIT {
        return domain(format!("composition enumeration needs d >= 1 and r + d <= {D4_ENUMERATION_LIMIT}"));
    }
    let mut counts = vec![0u64; d as usize + 1];
    // parts[i] for i < d - 1 chosen freely, the last part takes the remainder
    fn walk(left: u64, slots: u64, nonzero: usize, counts: &mut [u64]) {
        if slots == 1 {
            counts[nonzero + usize::from(left > 0)] += 1;
            return;
        }
        for part in 0..=left {
            walk(left - part, slots - 1, nonzero + usize::from(part > 0), counts);
        }
    }
    walk(r, d, 0, &mut counts);
    let total: u64 = counts.iter().sum();
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Occupied-site distribution over all `d^r` assignments of `r` survivors.
pub fn enumerate_d3_assignments(r: u64, d: u64) -> Result<Vec<f64>> {
    let total = (d as u128).checked_pow(r as u32).filter(|&t| t <= D3_ENUMERATION_LIMIT as u128 && d >= 1);
    let Some(total) = total else {
        return domain(format!("assignment enumeration needs 1 <= d and d^r <= {D3_ENUMERATION_LIMIT}"));
    };
    let mut counts = vec![0u64; d as usize + 1];
    let mut choice = vec![0u64; r as usize];
    let mut hit = vec![0u32; d as usize];
    for _ in 0..total {
        hit.iter_mut().for_each(|h| *h = 0);
        let mut occupied = 0;
        for &c in &choice {
            if hit[c as usize] == 0 {
                occupied += 1;
            }
            hit[c as usize] += 1;
        }
        counts[occupied] += 1;
        // odometer increment
        for c in choice.iter_mut() {
            *c += 1;
            if *c < d {
                break;
            }
            *c = 0;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Scales the analytic mean of one mechanism inside the verification suite;
/// a negative control for the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mechanism: DispersalKind,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckGroup {
    pub name: String,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl CheckGroup {
    fn new(name: &str) -> Self {
        CheckGroup { name: name.into(), checks: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(detail());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub groups: Vec<CheckGroup>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(CheckGroup::passed)
    }
}

/// One point of the verification grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub env: Environment,
}

/// Seeded grid cycling through both growth laws and every kernel, with
/// `lambda = 1`, `theta in [1.1, 10]`, and `d <= 6`.
pub fn verification_grid(points: usize, seed: u64) -> Vec<GridPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = [
        KernelKind::Binomial,
        KernelKind::Geometric { convention: GeometricSupport::FromOne },
        KernelKind::Geometric { convention: GeometricSupport::FromZero },
        KernelKind::Uniform,
    ];
    (0..points)
        .map(|i| {
            let growth = if i.is_multiple_of(2) { GrowthKind::Poissonian } else { GrowthKind::Yule };
            let kernel = kernels[(i / 2) % kernels.len()];
            let theta = rng.random_range(1.1..10.0);
            let p = rng.random_range(0.05..0.95);
            let d = rng.random_range(1..=6);
            GridPoint { env: Environment::new(theta, 1.0, p, d, growth, kernel).expect("grid parameters are valid") }
        })
        .collect()
}

fn perturbed(value: f64, mech: DispersalKind, perturbation: Option<Perturbation>) -> f64 {
    match perturbation {
        Some(p) if p.mechanism == mech => value * (1.0 + p.relative),
        _ => value,
    }
}

/// Runs every oracle comparison and returns one group per property.
pub fn run_verification(perturbation: Option<Perturbation>) -> Result<VerificationReport> {
    let tol = Tolerance::default();
    let grid = verification_grid(VERIFY_GRID_POINTS, VERIFY_SEED);
    let mut groups = Vec::new();

    let mut g = CheckGroup::new("site_choice_enumeration");
    for d in 1..=5u64 {
        for r in 0..=8u64 {
            if (d as u128).pow(r as u32) > 200_000 {
                continue;
            }
            let brute = enumerate_d3_assignments(r, d)?;
            let mech = DispersalKind::SiteChoice.with_sites(d as u32)?;
            for (k, &b) in brute.iter().enumerate() {
                let a = mech.pmf(r, k as u64);
                g.check((a - b).abs() <= 1e-12, || format!("r={r} d={d} k={k}: {a} vs {b}"));
            }
        }
    }
    groups.push(g);

    let mut g = CheckGroup::new("site_choice_sampler");
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(VERIFY_SEED, 1, 0));
    for (r, d) in [(3u64, 2u64), (5, 3), (8, 4), (6, 6)] {
        let exact = enumerate_d3_assignments(r, d)?;
        let mech = DispersalKind::SiteChoice.with_sites(d as u32)?;
        let mut counts = vec![0u32; d as usize + 1];
        for _ in 0..SAMPLER_DRAWS {
            counts[mech.sample(r, &mut rng) as usize] += 1;
        }
        for (k, (&c, &p)) in counts.iter().zip(&exact).enumerate() {
            let freq = c as f64 / SAMPLER_DRAWS as f64;
            let band = 5.0 * (p * (1.0 - p) / SAMPLER_DRAWS as f64).sqrt() + 1e-12;
            g.check((freq - p).abs() <= band, || format!("r={r} d={d} k={k}: frequency {freq} vs {p}"));
        }
    }
    groups.push(g);

    let mut g = CheckGroup::new("composition_enumeration");
    for d in 1..=8u64 {
        for r in 0..=(D4_ENUMERATION_LIMIT - d).min(12) {
            let brute = enumerate_d4_uniform(r, d)?;
            let mech = DispersalKind::Composition.with_sites(d as u32)?;
            for (k, &b) in brute.iter().enumerate() {
                let a = mech.pmf(r, k as u64);
                g.check((a - b).abs() <= 1e-14, || format!("r={r} d={d} k={k}: {a} vs {b}"));
            }
        }
    }
    groups.push(g);

    let mut survivor = CheckGroup::new("survivor_pmf");
    let mut mean_groups: Vec<CheckGroup> =
        DispersalKind::ALL.iter().map(|m| CheckGroup::new(&format!("offspring_mean_{}", m.label()))).collect();
    let mut pmf_group = CheckGroup::new("oracle_pmf_normalization");
    let mut integral = CheckGroup::new("composition_integral_identity");
    let mut ordering = CheckGroup::new("mean_ordering");
    for point in &grid {
        let env = point.env;
        let growth = env.colony_law()?;
        let budget = TruncationBudget::default_for(&growth);
        let law = env.survivor_law(&tol)?;
        let brute = enumerate_survivor_pmf(&env, &budget)?;
        for (k, &b) in brute.iter().enumerate().take(200) {
            let a = law.pmf(k as u64);
            let slack = budget.tail_bound + law.tail_bound() + 1e-12;
            survivor.check((a - b).abs() <= slack, || format!("{env:?} k={k}: {a} vs {b}"));
        }
        let mut means = Vec::new();
        for (i, &mech) in DispersalKind::ALL.iter().enumerate() {
            let group = &mut mean_groups[i];
            let dispersal = mech.with_sites(env.d)?;
            let analytic = offspring_mean(dispersal, &law)?;
            means.push(analytic);
            let oracle = enumerate_offspring_law(&env, mech, &budget)?;
            let total: f64 = oracle.pmf.iter().sum();
            pmf_group.check(
                oracle.pmf.iter().all(|&w| w >= 0.0) && total <= 1.0 + 1e-12 && total >= 1.0 - oracle.tail_bound - 1e-12,
                || format!("{env:?} {mech:?}: mass {total}"),
            );
            let (Some(a), Some(bound)) = (analytic.value.value(), oracle.mean_error.value()) else {
                continue;
            };
            let a = perturbed(a, mech, perturbation);
            let slack = bound + analytic.error + 1e-10;
            group.check(a >= oracle.mean - slack && a <= oracle.mean + slack, || {
                format!("{env:?} {mech:?}: analytic {a} vs oracle {} (slack {slack:e})", oracle.mean)
            });
        }
        if env.d >= 2 {
            let direct = means[3].value.to_f64();
            let alt = composition_mean_integral(env.d, &law)?;
            integral.check((direct - alt).abs() <= 1e-8, || format!("{env:?}: {direct} vs {alt}"));
        }
        for w in means.windows(2) {
            ordering.check(w[1].value <= w[0].value + 1e-10, || format!("{env:?}: {means:?}"));
        }
    }
    groups.push(survivor);
    groups.extend(mean_groups);
    groups.push(pmf_group);
    groups.push(integral);
    groups.push(ordering);

    let mut g = CheckGroup::new("single_site_collapse");
    for point in grid.iter().take(20) {
        let env = Environment { d: 1, ..point.env };
        let laws: Vec<_> = [DispersalKind::Capped, DispersalKind::SiteChoice, DispersalKind::Composition]
            .iter()
            .map(|&m| env.offspring_law(m, &tol))
            .collect::<Result<_>>()?;
        for l in &laws[1..] {
            let same = l.pmf_slice().iter().zip(laws[0].pmf_slice()).all(|(a, b)| (a - b).abs() <= 1e-14);
            g.check(same, || format!("{env:?}: d = 1 pmfs differ"));
        }
    }
    groups.push(g);

    let mut g = CheckGroup::new("colony_pgf_closed_forms");
    for (kind, theta) in [(GrowthKind::Poissonian, 0.7), (GrowthKind::Poissonian, 3.0), (GrowthKind::Yule, 1.6), (GrowthKind::Yule, 5.0)] {
        let growth = ColonySizeLaw::from_parts(kind, 1.0, theta)?;
        let pmf = growth.pmf_vec(growth.default_cut());
        let limit = if kind == GrowthKind::Poissonian { 1e-10 } else { 1e-8 };
        for z in [0.0f64, 0.1, 0.35, 0.6, 0.85, 0.97] {
            let series: f64 = pmf.iter().enumerate().map(|(n, w)| w * z.powi(n as i32)).sum();
            let closed = growth.pgf(z, &tol)?;
            g.check((series - closed).abs() <= limit, || format!("{kind:?} theta={theta} z={z}: {closed} vs {series}"));
        }
    }
    groups.push(g);

    let mut g = CheckGroup::new("worked_constant_case");
    let worked = Environment::new(1.0, 1.0, 1.0, 2, GrowthKind::Poissonian, KernelKind::Binomial)?;
    let expected = [2.0, 1.5, 4.0 / 3.0, 4.0 - 4.0 * 2f64.ln()];
    for (&mech, want) in DispersalKind::ALL.iter().zip(expected) {
        let got = perturbed(worked.offspring_mean(mech, &tol)?.value.to_f64(), mech, perturbation);
        g.check((got - want).abs() <= 1e-9, || format!("{mech:?}: {got} vs {want}"));
    }
    groups.push(g);

    let mut g = CheckGroup::new("hypergeometric_composition_mean");
    for d in 2..=8u32 {
        for &(p, ratio) in &[(0.3, 0.5), (0.6, 0.9), (0.95, 0.2), (1.0, 0.99)] {
            let env = Environment::new(1.0, ratio, p, d, GrowthKind::Poissonian, KernelKind::Binomial)?;
            let generic = perturbed(env.offspring_mean(DispersalKind::Composition, &tol)?.value.to_f64(), DispersalKind::Composition, perturbation);
            let closed = poisson_binomial_composition_mean(1.0, ratio, p, d, &tol.scaled(1e-3))?;
            g.check((generic - closed).abs() <= 1e-8, || format!("d={d} p={p} ratio={ratio}: {generic} vs {closed}"));
        }
    }
    groups.push(g);

    let mut g = CheckGroup::new("extinction_fixed_point");
    for p in [0.55, 0.75, 0.9] {
        let env = Environment::new(1.0, 1.0, p, 1, GrowthKind::Poissonian, KernelKind::Binomial)?;
        let q = extinction_probability_exact(&env, DispersalKind::Full, 1e-15)?;
        // smallest root of q p s^2 + (q(1-p) + (1-q) p - 1) s + (1-q)(1-p) with q = 1/2
        let (a, b, c) = (0.5 * p, 0.5 * (1.0 - p) + 0.5 * p - 1.0, 0.5 * (1.0 - p));
        let root = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        g.check((q - root).abs() <= 1e-10, || format!("p={p}: {q} vs {root}"));
    }
    groups.push(g);

    Ok(VerificationReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_enumeration_examples() {
        let r22 = enumerate_d4_uniform(2, 2).unwrap();
        assert!((r22[1] - 2.0 / 3.0).abs() < 1e-15 && (r22[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(enumerate_d4_uniform(1, 5).unwrap()[1], 1.0);
        let r33 = enumerate_d4_uniform(3, 3).unwrap();
        for (k, want) in [(1, 0.3), (2, 0.6), (3, 0.1)] {
            assert!((r33[k] - want).abs() < 1e-15);
        }
        assert!(enumerate_d4_uniform(12, 11).is_err());
    }

    #[test]
    fn assignment_enumeration_examples() {
        assert_eq!(enumerate_d3_assignments(2, 2).unwrap(), vec![0.0, 0.5, 0.5]);
        assert_eq!(enumerate_d3_assignments(0, 4).unwrap()[0], 1.0);
        let r32 = enumerate_d3_assignments(3, 2).unwrap();
        assert_eq!(r32, vec![0.0, 0.25, 0.75]);
        assert!(enumerate_d3_assignments(24, 2).is_err());
    }

    #[test]
    fn own_rows_match_enumeration() {
        for d in 1..=4usize {
            let rows = occupancy_rows(7, d);
            for (r, row) in rows.iter().enumerate() {
                let brute = enumerate_d3_assignments(r as u64, d as u64).unwrap();
                assert_eq!(row.len(), brute.len());
                for (own, want) in row.iter().zip(&brute) {
                    assert!((own - want).abs() < 1e-14);
                }
                let comp = composition_counts_row(r as u64, d as u64);
                let brute = enumerate_d4_uniform(r as u64, d as u64).unwrap();
                for k in 0..=d {
                    assert!((comp[k] - brute[k]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn triple_sum_examples() {
        let env = Environment::new(1.0, 1.0, 1.0, 2, GrowthKind::Poissonian, KernelKind::Binomial).unwrap();
        let budget = TruncationBudget::default_for(&env.colony_law().unwrap());
        assert!(budget.tail_bound <= 1e-12);
        let d4 = enumerate_offspring_law(&env, DispersalKind::Composition, &budget).unwrap();
        assert!((d4.mean - (4.0 - 4.0 * 2f64.ln())).abs() <= 2.0 * budget.tail_bound + 1e-12);
        let single = Environment { d: 1, p: 0.6, ..env };
        let laws: Vec<_> = [DispersalKind::Capped, DispersalKind::SiteChoice, DispersalKind::Composition]
            .iter()
            .map(|&m| enumerate_offspring_law(&single, m, &budget).unwrap().pmf)
            .collect();
        assert_eq!(laws[0], laws[1]);
        assert_eq!(laws[0], laws[2]);
        let full = enumerate_offspring_law(&single, DispersalKind::Full, &budget).unwrap();
        assert_eq!(full.pmf, enumerate_survivor_pmf(&single, &budget).unwrap());
    }

    #[test]
    fn verification_passes_and_detects_perturbation() {
        let report = run_verification(None).unwrap();
        assert!(report.groups.len() >= 10);
        for g in &report.groups {
            assert!(g.passed(), "{}: {:?}", g.name, &g.failures[..g.failures.len().min(3)]);
            assert!(g.checks > 0, "{}", g.name);
        }
        let bad = run_verification(Some(Perturbation { mechanism: DispersalKind::Composition, relative: 1e-6 })).unwrap();
        assert!(!bad.passed());
    }
}
