//! Survivor kernels `N_m` and the composed survivor law `Y = N_{eta(T)}`.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::growth::{sample_geometric, ColonySizeLaw, GrowthKind};
use crate::numerics::{integrate_unit_interval, ln_choose, CompensatedSum, ExtendedReal, Tolerance};

/// Where the geometric catastrophe count `G` starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricSupport {
    /// `G in {1, 2, ...}`, `P(G = g) = p (1-p)^(g-1)`.
    #[default]
    FromOne,
    /// `G in {0, 1, ...}`, `P(G = g) = p (1-p)^g`.
    FromZero,
}

/// Kernel family without its survival parameter; the parameter comes from the
/// environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    Binomial,
    Geometric {
        #[serde(default)]
        convention: GeometricSupport,
    },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurvivorKernel {
    /// Each individual survives independently with probability `p`.
    Binomial { p: f64 },
    /// `N_m = (m - G)^+` with `G` geometric.
    Geometric { p: f64, support: GeometricSupport },
    /// `N_m` uniform on `{0, ..., m-1}`.
    Uniform,
}

/// A value with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Binomial rows are cut where terms fall below this fraction of the mode.
const ROW_CUTOFF: f64 = 1e-20;

impl SurvivorKernel {
    pub fn binomial(p: f64) -> Result<Self> {
        Self::Binomial { p }.validated()
    }

    pub fn geometric(p: f64, support: GeometricSupport) -> Result<Self> {
        Self::Geometric { p, support }.validated()
    }

    /// Builds the kernel of the given family with survival parameter `p`.
    /// The uniform kernel ignores `p`.
    pub fn from_kind(kind: KernelKind, p: f64) -> Result<Self> {
        match kind {
            KernelKind::Binomial => Self::binomial(p),
            KernelKind::Geometric { convention } => Self::geometric(p, convention),
            KernelKind::Uniform => Ok(Self::Uniform),
        }
    }

    pub fn kind(&self) -> KernelKind {
        match *self {
            Self::Binomial { .. } => KernelKind::Binomial,
            Self::Geometric { support, .. } => KernelKind::Geometric { convention: support },
            Self::Uniform => KernelKind::Uniform,
        }
    }

    fn validated(self) -> Result<Self> {
        match self {
            Self::Binomial { p } if !(p > 0.0 && p <= 1.0) => {
                domain(format!("binomial survival probability must lie in (0, 1] (got {p})"))
            }
            Self::Geometric { p, .. } if !(p > 0.0 && p < 1.0) => {
                domain(format!("geometric kernel parameter must lie in (0, 1) (got {p})"))
            }
            k => Ok(k),
        }
    }

    /// `P(N_m = k)`.
    pub fn pmf(&self, m: u64, k: u64) -> Result<f64> {
        if m == 0 {
            return domain("kernel pmf needs m >= 1");
        }
        if k > m {
            return domain(format!("kernel pmf needs k <= m (got k = {k}, m = {m})"));
        }
        Ok(match *self {
            Self::Binomial { p: 1.0 } => f64::from(u8::from(k == m)),
            Self::Binomial { p } => {
                (ln_choose(m, k) + k as f64 * p.ln() + (m - k) as f64 * (-p).ln_1p()).exp()
            }
            Self::Uniform => {
                if k < m {
                    1.0 / m as f64
                } else {
                    0.0
                }
            }
            Self::Geometric { p, support } => {
                let c = 1.0 - p;
                // P(N_m = k) = P(G = m - k) for k >= 1, P(G >= m) for k = 0
                match support {
                    GeometricSupport::FromOne if k == 0 => c.powf((m - 1) as f64),
                    GeometricSupport::FromOne if k == m => 0.0,
                    GeometricSupport::FromOne => p * c.powf((m - k - 1) as f64),
                    GeometricSupport::FromZero if k == 0 => c.powf(m as f64),
                    GeometricSupport::FromZero => p * c.powf((m - k) as f64),
                }
            }
        })
    }

    /// `E[f(N_m)]`.
    pub fn expect<F: Fn(u64) -> f64>(&self, m: u64, f: F) -> f64 {
        let mut acc = CompensatedSum::new();
        match *self {
            Self::Binomial { p } => binomial_row(m, p, |k, w| acc.add(w * f(k))),
            Self::Uniform => {
                let w = 1.0 / m as f64;
                for k in 0..m {
                    acc.add(w * f(k));
                }
            }
            Self::Geometric { p, support } => {
                let c = 1.0 - p;
                // walk k downward from the top of the support, weights decay like c^j
                let (top, zero_weight) = match support {
                    GeometricSupport::FromOne => (m - 1, c.powf((m - 1) as f64)),
                    GeometricSupport::FromZero => (m, c.powf(m as f64)),
                };
                let mut w = p;
                let mut k = top;
                while k >= 1 && w > 0.0 {
                    acc.add(w * f(k));
                    w *= c;
                    k -= 1;
                }
                acc.add(zero_weight * f(0));
            }
        }
        acc.value()
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        match *self {
            Self::Binomial { p: 1.0 } => m,
            Self::Binomial { p } => Binomial::new(m, p).expect("validated kernel").sample(rng),
            Self::Uniform => rng.random_range(0..m.max(1)),
            Self::Geometric { p, support } => {
                let failures = sample_geometric(p, rng);
                let g = match support {
                    GeometricSupport::FromOne => failures.saturating_add(1),
                    GeometricSupport::FromZero => failures,
                };
                m.saturating_sub(g)
            }
        }
    }
}

/// Visits the binomial(m, p) pmf from the mode outward, renormalized over the
/// visited window.
fn binomial_row(m: u64, p: f64, mut visit: impl FnMut(u64, f64)) {
    if p == 1.0 {
        visit(m, 1.0);
        return;
    }
    let mode = (((m + 1) as f64) * p).floor().min(m as f64) as u64;
    let odds = p / (1.0 - p);
    let mut row = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    loop {
        row.push((k, w));
        if k == 0 {
            break;
        }
        w *= k as f64 / ((m - k + 1) as f64 * odds);
        k -= 1;
        if w < ROW_CUTOFF {
            break;
        }
    }
    let (mut w, mut k) = (1.0, mode);
    while k < m {
        w *= (m - k) as f64 / (k + 1) as f64 * odds;
        k += 1;
        if w < ROW_CUTOFF {
            break;
        }
        row.push((k, w));
    }
    let total: f64 = row.iter().map(|&(_, w)| w).sum();
    for (k, w) in row {
        visit(k, w / total);
    }
}

/// Exact `P(Y = k)`, `k <= n`, for Yule colonies under binomial retention.
/// Given `s = exp(-lambda T)`, `eta - 1` is geometric and its binomial thinning
/// is geometric again, so `P(Y = k) = (1 - p) I_k + p I_{k-1}` with
/// `I_k = rho p^rho B(k+1, rho+1) 2F1(rho+1, rho+1; k+rho+2; 1-p)`.
/// `None` when the series budget runs out.
fn yule_binomial_pmf(rho: f64, p: f64, n: u64) -> Option<Vec<f64>> {
    let x = 1.0 - p;
    let a = rho + 1.0;
    let scale = rho * p.powf(rho);
    let mut beta = 1.0 / a;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let c = k as f64 + a + 1.0;
        let mut term = 1.0;
        let mut sum = CompensatedSum::new();
        sum.add(1.0);
        let mut j = 0usize;
        loop {
            let jf = j as f64;
            term *= x * (a + jf) * (a + jf) / ((c + jf) * (jf + 1.0));
            sum.add(term);
            j += 1;
            // c >= a + 1 bounds every later ratio by x (a + j) / (j + 1)
            let later = x * (a + j as f64) / (j as f64 + 1.0);
            if later < 1.0 && term * later / (1.0 - later) <= 1e-18 * sum.value() {
                break;
            }
            if j >= YULE_BINOMIAL_SERIES_TERMS || !term.is_finite() {
                return None;
            }
        }
        let cur = scale * beta * sum.value();
        out.push((1.0 - p) * cur + p * prev);
        prev = cur;
        beta *= (k + 1) as f64 / (k as f64 + a + 1.0);
    }
    Some(out)
}

/// Law of `Y = N_{eta(T)}`: dense pmf on `{0, ..., n_max}` plus the certified
/// mass `tail_bound` of colony sizes above `n_max`.
#[derive(Debug, Clone)]
pub struct SurvivorLaw {
    growth: ColonySizeLaw,
    kernel: SurvivorKernel,
    target: Tolerance,
    tol: Tolerance,
    n_max: u64,
    tail_bound: f64,
    pmf: OnceLock<Pmf>,
}

#[derive(Debug, Clone)]
struct Pmf {
    values: Vec<f64>,
    // true when entries are exact P(Y = k) rather than a mixture truncated
    // at colony size n_max
    exact_prefix: bool,
}

/// Below this retention probability the hypergeometric series for the
/// Yule-binomial pmf converges too slowly and the truncated mixture is used.
const YULE_BINOMIAL_SERIES_MIN_P: f64 = 0.05;
const YULE_BINOMIAL_SERIES_TERMS: usize = 1_000_000;

impl SurvivorLaw {
    /// `tol` is the target for pgf and mean evaluations; closed forms are
    /// evaluated internally with a budget a thousand times tighter so that
    /// differences of pgf values keep the target accuracy.
    pub fn new(growth: ColonySizeLaw, kernel: SurvivorKernel, tol: Tolerance) -> Result<Self> {
        let kernel = kernel.validated()?;
        let n_max = growth.default_cut();
        Ok(SurvivorLaw { growth, kernel, target: tol, tol: tol.scaled(1e-3), n_max, tail_bound: growth.tail(n_max), pmf: OnceLock::new() })
    }

    pub fn growth(&self) -> &ColonySizeLaw {
        &self.growth
    }

    pub fn kernel(&self) -> SurvivorKernel {
        self.kernel
    }

    /// Accuracy target for values derived from this law.
    pub fn tolerance(&self) -> &Tolerance {
        &self.target
    }

    /// Largest colony size (and so largest survivor count) kept in the pmf.
    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    /// Probability mass missing from [`Self::pmf_slice`].
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn pmf_slice(&self) -> &[f64] {
        &self.pmf_cache().values
    }

    fn pmf_cache(&self) -> &Pmf {
        self.pmf.get_or_init(|| {
            if let (SurvivorKernel::Binomial { p }, Some(rho)) = (self.kernel, self.growth.rho_yule()) {
                if (YULE_BINOMIAL_SERIES_MIN_P..1.0).contains(&p) {
                    if let Some(values) = yule_binomial_pmf(rho, p, self.n_max) {
                        return Pmf { values, exact_prefix: true };
                    }
                }
            }
            Pmf { values: self.build_pmf(), exact_prefix: false }
        })
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.pmf_slice().get(k as usize).copied().unwrap_or(0.0)
    }

    fn build_pmf(&self) -> Vec<f64> {
        let n = self.n_max as usize;
        let colony = self.growth.pmf_vec(self.n_max);
        let mut out = vec![0.0; n + 1];
        match self.kernel {
            SurvivorKernel::Binomial { p: 1.0 } => out.copy_from_slice(&colony),
            SurvivorKernel::Binomial { p } => {
                let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); n + 1];
                for (m, &w) in colony.iter().enumerate().skip(1) {
                    if w == 0.0 {
                        continue;
                    }
                    binomial_row(m as u64, p, |k, b| acc[k as usize].add(w * b));
                }
                for (slot, a) in out.iter_mut().zip(acc) {
                    *slot = a.value();
                }
            }
            SurvivorKernel::Uniform => {
                // P(Y = k) = sum_{m > k} P(eta = m) / m
                let mut suffix = CompensatedSum::new();
                for k in (0..n).rev() {
                    suffix.add(colony[k + 1] / (k + 1) as f64);
                    out[k] = suffix.value();
                }
            }
            SurvivorKernel::Geometric { p, support } => {
                let c = 1.0 - p;
                // acc_k = sum_{m >= k + shift} P(eta = m) c^(m - k - shift)
                let shift = match support {
                    GeometricSupport::FromOne => 1,
                    GeometricSupport::FromZero => 0,
                };
                let mut acc = 0.0;
                let mut at_one = 0.0;
                for k in (0..=n).rev() {
                    let m = k + shift;
                    if m <= n {
                        acc = colony[m] + c * acc;
                    }
                    if k >= 1 {
                        out[k] = p * acc;
                    }
                    if k == 1 {
                        at_one = acc;
                    }
                    if k == 0 {
                        out[0] = match support {
                            GeometricSupport::FromOne => acc,
                            GeometricSupport::FromZero => c * at_one,
                        };
                    }
                }
            }
        }
        out
    }

    /// `E[f(Y)]` for nondecreasing `f` with `0 <= f <= sup`. For a truncated
    /// mixture, colony sizes above the cut contribute between
    /// `E f(N_{n_max+1})` and `sup` per unit mass by stochastic monotonicity of
    /// the kernel; for an exact prefix, survivor counts above the cut
    /// contribute between `f(n_max + 1)` and `sup`.
    pub fn expect_bounded<F: Fn(u64) -> f64>(&self, f: F, sup: f64) -> Estimate {
        let cache = self.pmf_cache();
        let body: CompensatedSum = cache.values.iter().enumerate().map(|(k, &w)| w * f(k as u64)).collect();
        if self.tail_bound == 0.0 {
            return Estimate { value: body.value(), error: 0.0 };
        }
        let (mass, floor) = if cache.exact_prefix {
            let kept: CompensatedSum = cache.values.iter().copied().collect();
            ((1.0 - kept.value()).clamp(0.0, self.tail_bound), f(self.n_max + 1).min(sup))
        } else {
            (self.tail_bound, self.kernel.expect(self.n_max + 1, &f).min(sup))
        };
        Estimate { value: body.value() + mass * (floor + sup) / 2.0, error: mass * (sup - floor) / 2.0 }
    }

    /// `E[Y]` from closed forms in the colony law.
    pub fn mean(&self) -> Result<ExtendedReal> {
        let colony_mean = self.growth.mean();
        let Some(eta) = colony_mean.value() else {
            return Ok(ExtendedReal::INFINITY);
        };
        Ok(ExtendedReal::finite(match self.kernel {
            SurvivorKernel::Binomial { p } => p * eta,
            SurvivorKernel::Uniform => (eta - 1.0) / 2.0,
            SurvivorKernel::Geometric { p, support } => {
                let c = 1.0 - p;
                let g = self.growth.pgf(c, &self.tol)?;
                // E (m - G)^+ = m - E min(m, G)
                match support {
                    GeometricSupport::FromOne => eta - (1.0 - g) / p,
                    GeometricSupport::FromZero => eta - c * (1.0 - g) / p,
                }
            }
        }))
    }

    /// `P(Y >= 1)`.
    pub fn prob_positive(&self) -> Result<f64> {
        Ok(1.0 - self.pgf(0.0)?)
    }

    /// Probability generating function on `[0, 1]` from closed forms in the
    /// colony pgf, independent of the truncated pmf.
    pub fn pgf(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return domain(format!("pgf argument must lie in [0, 1] (got {z})"));
        }
        if z == 1.0 {
            return Ok(1.0);
        }
        match self.kernel {
            SurvivorKernel::Binomial { p } => self.growth.pgf(1.0 - p + p * z, &self.tol),
            SurvivorKernel::Uniform => self.uniform_pgf(z),
            SurvivorKernel::Geometric { p, support } => {
                let c = 1.0 - p;
                // E z^{N_m} = base(c) + p z (base(z) - base(c)) / (z - c) with
                // base(t) = t^(m-1) from one and t^m from zero
                let h_c = self.growth.pgf_over_z(c, &self.tol)?;
                let slope = self.growth.pgf_over_z_slope(z, c, &self.tol)?;
                Ok(match support {
                    GeometricSupport::FromOne => h_c + p * z * slope,
                    GeometricSupport::FromZero => {
                        let h_z = self.growth.pgf_over_z(z, &self.tol)?;
                        c * h_c + p * z * (h_z + c * slope)
                    }
                })
            }
        }
    }

    fn uniform_pgf(&self, z: f64) -> Result<f64> {
        let spec = self.growth.spec();
        let w = 1.0 - z;
        match spec.kind {
            GrowthKind::Poissonian => {
                let x = spec.lambda * w / spec.theta;
                Ok(if x < 1e-8 { 1.0 - x / 2.0 + x * x / 3.0 } else { x.ln_1p() / x })
            }
            GrowthKind::Yule => {
                // eta - 1 given s = e^{-lambda T} is geometric with success s and
                // s has density rho s^(rho-1); averaging over the uniform kernel in
                // closed form leaves one integral over v = 1 - s
                let rho = self.growth.rho_yule().expect("yule law");
                integrate_unit_interval(
                    |v| {
                        if v == 0.0 {
                            return rho;
                        }
                        if v >= 1.0 {
                            return 0.0;
                        }
                        let s = 1.0 - v;
                        // ln((1 - v z) / s) without cancellation when z is near 1
                        let gap = (v * w / s).ln_1p();
                        rho * s.powf(rho) * gap / (v * w)
                    },
                    &self.tol.scaled(0.5),
                )
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let m = self.growth.sample(rng);
        self.kernel.sample(m, rng)
    }

    /// Draws `(eta(T), Y)` jointly.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let m = self.growth.sample(rng);
        (m, self.kernel.sample(m, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::GrowthSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn colony(kind: GrowthKind, theta: f64, lambda: f64) -> ColonySizeLaw {
        ColonySizeLaw::new(GrowthSpec::new(kind, lambda, theta).unwrap()).unwrap()
    }

    fn law(kind: GrowthKind, theta: f64, lambda: f64, kernel: SurvivorKernel) -> SurvivorLaw {
        SurvivorLaw::new(colony(kind, theta, lambda), kernel, Tolerance::default()).unwrap()
    }

    fn kernels() -> Vec<SurvivorKernel> {
        vec![
            SurvivorKernel::binomial(1.0).unwrap(),
            SurvivorKernel::binomial(0.35).unwrap(),
            SurvivorKernel::geometric(0.4, GeometricSupport::FromOne).unwrap(),
            SurvivorKernel::geometric(0.4, GeometricSupport::FromZero).unwrap(),
            SurvivorKernel::Uniform,
        ]
    }

    /// Mixture pmf summed from kernel_pmf rows over m <= m_max.
    fn brute_pmf(l: &SurvivorLaw, m_max: u64) -> Vec<f64> {
        let mut out = vec![0.0; m_max as usize + 1];
        for m in 1..=m_max {
            let w = l.growth().pmf(m).unwrap();
            for k in 0..=m {
                out[k as usize] += w * l.kernel().pmf(m, k).unwrap();
            }
        }
        out
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(SurvivorKernel::binomial(1.0).unwrap().pmf(5, 5).unwrap(), 1.0);
        assert_eq!(SurvivorKernel::Uniform.pmf(4, 2).unwrap(), 0.25);
        let g = SurvivorKernel::geometric(0.5, GeometricSupport::FromOne).unwrap();
        let row: Vec<f64> = (0..3).map(|k| g.pmf(3, k).unwrap()).collect();
        assert_eq!(row, vec![0.25, 0.25, 0.5]);
        assert_eq!(g.pmf(3, 3).unwrap(), 0.0);
        assert!(g.pmf(3, 4).is_err());
        assert!(g.pmf(0, 0).is_err());
        assert!(SurvivorKernel::binomial(0.0).is_err());
        assert!(SurvivorKernel::binomial(1.2).is_err());
        assert!(SurvivorKernel::geometric(1.0, GeometricSupport::FromOne).is_err());
    }

    #[test]
    fn stochastic_monotonicity_in_colony_size() {
        for kernel in kernels() {
            for m in 1..50u64 {
                for m2 in m + 1..=50 {
                    let (mut c1, mut c2) = (0.0, 0.0);
                    for k in 0..=m2 {
                        if k <= m {
                            c1 += kernel.pmf(m, k).unwrap();
                        } else {
                            c1 = 1.0;
                        }
                        c2 += kernel.pmf(m2, k).unwrap();
                        assert!(c2 <= c1 + 1e-12, "{kernel:?} m={m} m'={m2} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_expect_matches_pmf() {
        for kernel in kernels() {
            for m in [1u64, 2, 7, 40] {
                let direct: f64 = (0..=m).map(|k| kernel.pmf(m, k).unwrap() * (k as f64).sqrt()).sum();
                let e = kernel.expect(m, |k| (k as f64).sqrt());
                assert!((direct - e).abs() < 1e-12, "{kernel:?} m={m}");
            }
        }
    }

    #[test]
    fn identity_kernel_keeps_colony_law() {
        let l = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::binomial(1.0).unwrap());
        assert_eq!(l.pmf(0), 0.0);
        for n in 1..40 {
            assert!((l.pmf(n) - 0.5f64.powi(n as i32)).abs() < 1e-16);
        }
    }

    #[test]
    fn mean_examples() {
        let half = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::binomial(0.5).unwrap());
        assert_eq!(half.mean().unwrap(), ExtendedReal::finite(1.0));
        let uni = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::Uniform);
        let brute: f64 = brute_pmf(&uni, 80).iter().enumerate().map(|(k, w)| k as f64 * w).sum();
        assert!((brute - 0.5).abs() < 1e-12);
        assert!((uni.mean().unwrap().to_f64() - brute).abs() < 1e-12);
        let heavy = law(GrowthKind::Yule, 1.0, 1.0, SurvivorKernel::geometric(0.3, GeometricSupport::FromZero).unwrap());
        assert_eq!(heavy.mean().unwrap(), ExtendedReal::INFINITY);
    }

    #[test]
    fn analytic_means_match_mixture() {
        for kernel in kernels() {
            for (kind, theta) in [(GrowthKind::Poissonian, 0.6), (GrowthKind::Yule, 4.0)] {
                let l = law(kind, theta, 1.0, kernel);
                let body: f64 = l.pmf_slice().iter().enumerate().map(|(k, w)| k as f64 * w).sum();
                let bound = l.growth().mean_above(l.n_max()).to_f64();
                let m = l.mean().unwrap().to_f64();
                assert!(m >= body - 1e-10 && m <= body + bound + 1e-10, "{kernel:?} {kind:?}: {m} vs {body}+{bound}");
                assert!(m <= l.growth().mean().to_f64() + 1e-12);
            }
        }
    }

    #[test]
    fn yule_binomial_series_matches_mixture_and_quadrature() {
        for (rho, p) in [(1.1, 0.05), (1.5, 0.7), (3.0, 0.3), (9.0, 0.95)] {
            let l = law(GrowthKind::Yule, rho, 1.0, SurvivorKernel::binomial(p).unwrap());
            let series = yule_binomial_pmf(rho, p, 200).unwrap();
            let mixture = l.build_pmf();
            for (k, exact) in series.iter().enumerate().take(200) {
                let slack = l.tail_bound() + 1e-14;
                let truncated = mixture.get(k).copied().unwrap_or(0.0);
                assert!((exact - truncated).abs() <= slack, "rho={rho} p={p} k={k}");
            }
            // I_k as an integral over s = exp(-lambda T)
            let tol = Tolerance::new(1e-15, 1e-13, 1_000_000).unwrap();
            let i_k = |k: i32| {
                integrate_unit_interval(
                    |s| {
                        let u = p * (1.0 - s) / (p + (1.0 - p) * s);
                        rho * s.powf(rho - 1.0) * (1.0 - u) * u.powi(k)
                    },
                    &tol,
                )
                .unwrap()
            };
            for k in [1, 2, 5, 17] {
                let direct = (1.0 - p) * i_k(k) + p * i_k(k - 1);
                assert!((series[k as usize] - direct).abs() < 1e-12 * direct.max(1e-3), "rho={rho} p={p} k={k}");
            }
            let total: f64 = l.pmf_slice().iter().sum();
            assert!(total <= 1.0 + 1e-12 && total >= 1.0 - l.tail_bound() - 1e-12);
        }
    }

    #[test]
    fn pmf_matches_brute_mixture() {
        for kernel in kernels() {
            for (kind, theta) in [(GrowthKind::Poissonian, 1.3), (GrowthKind::Yule, 2.5)] {
                let l = law(kind, theta, 1.0, kernel);
                let brute = brute_pmf(&l, 400);
                for k in 0..300 {
                    let slack = l.growth().tail(400) + l.tail_bound() + 1e-13;
                    assert!((l.pmf(k) - brute[k as usize]).abs() <= slack, "{kernel:?} {kind:?} k={k}");
                }
                let total: f64 = l.pmf_slice().iter().sum();
                assert!((total + l.tail_bound() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pgf_examples() {
        let half = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::binomial(0.5).unwrap());
        assert!((half.pgf(0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((half.pmf(0) - 1.0 / 3.0).abs() < 1e-14);
        let whole = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::binomial(1.0).unwrap());
        assert!((whole.pgf(0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(half.pgf(1.0).unwrap(), 1.0);
        assert!(half.pgf(-0.1).is_err());
    }

    #[test]
    fn poisson_binomial_closed_form() {
        for &p in &[0.1, 0.5, 0.9, 1.0] {
            for &(theta, lambda) in &[(1.0, 1.0), (2.0, 0.5), (0.7, 3.0)] {
                let l = law(GrowthKind::Poissonian, theta, lambda, SurvivorKernel::binomial(p).unwrap());
                let q = lambda / (theta + lambda);
                for i in 0..=20 {
                    let z = i as f64 / 20.0;
                    let s = 1.0 - p + p * z;
                    let closed = (1.0 - q) * s / (1.0 - q * s);
                    let series: f64 = l.pmf_slice().iter().enumerate().map(|(k, w)| w * z.powi(k as i32)).sum();
                    assert!((closed - series).abs() < 1e-10);
                    assert!((closed - l.pgf(z).unwrap()).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn pgf_closed_forms_match_truncated_series() {
        for kernel in kernels() {
            for (kind, theta) in [(GrowthKind::Poissonian, 0.9), (GrowthKind::Yule, 1.6), (GrowthKind::Yule, 3.0)] {
                let l = law(kind, theta, 1.0, kernel);
                let mut zs: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
                // probe the interpolated neighbourhood of z = 1 - p
                zs.extend([0.5995, 0.6, 0.6004, 0.999]);
                for z in zs {
                    let series: f64 = l.pmf_slice().iter().enumerate().map(|(k, w)| w * z.powi(k as i32)).sum();
                    let closed = l.pgf(z).unwrap();
                    let slack = l.tail_bound() + 1e-10;
                    assert!(closed >= series - 1e-10 && closed <= series + slack, "{kernel:?} {kind:?} z={z}: {closed} vs {series}");
                }
            }
        }
    }

    #[test]
    fn bounded_expectation_brackets_truth() {
        // heavy tail: the cut is capped and the tail estimate carries real error
        let l = law(GrowthKind::Yule, 1.2, 1.0, SurvivorKernel::binomial(0.7).unwrap());
        assert!(l.tail_bound() > 1e-8);
        let d = 5.0;
        let est = l.expect_bounded(|k| d * (1.0 - (1.0 - 1.0 / d).powi(k as i32)), d);
        let exact = d * (1.0 - l.pgf(1.0 - 1.0 / d).unwrap());
        assert!((est.value - exact).abs() <= est.error + 1e-10, "{est:?} vs {exact}");
        assert!(est.error < 1e-4);
    }

    #[test]
    fn sampler_moments_and_pathwise_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let half = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::binomial(0.5).unwrap());
        let mean = (0..n).map(|_| half.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let uni = law(GrowthKind::Poissonian, 1.0, 1.0, SurvivorKernel::Uniform);
        let mean = (0..n).map(|_| uni.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        for kernel in kernels() {
            let l = law(GrowthKind::Yule, 1.5, 1.0, kernel);
            for _ in 0..100_000 {
                let (m, k) = l.sample_pair(&mut rng);
                assert!(k <= m);
            }
        }
        let whole = SurvivorKernel::binomial(1.0).unwrap();
        assert_eq!(whole.sample(17, &mut rng), 17);
    }

    #[test]
    fn geometric_sampler_matches_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for support in [GeometricSupport::FromOne, GeometricSupport::FromZero] {
            let g = SurvivorKernel::geometric(0.3, support).unwrap();
            let n = 200_000;
            let mut counts = [0usize; 7];
            for _ in 0..n {
                counts[g.sample(6, &mut rng) as usize] += 1;
            }
            for (k, &count) in counts.iter().enumerate() {
                let f = count as f64 / n as f64;
                assert!((f - g.pmf(6, k as u64).unwrap()).abs() < 0.005, "{support:?} k={k}");
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_rows_are_distributions(m in 1u64..300, p in 0.01f64..0.99, which in 0usize..4) {
            let kernel = match which {
                0 => SurvivorKernel::binomial(p).unwrap(),
                1 => SurvivorKernel::geometric(p, GeometricSupport::FromOne).unwrap(),
                2 => SurvivorKernel::geometric(p, GeometricSupport::FromZero).unwrap(),
                _ => SurvivorKernel::Uniform,
            };
            let total: f64 = (0..=m).map(|k| kernel.pmf(m, k).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            prop_assert!((kernel.expect(m, |_| 1.0) - 1.0).abs() < 1e-12);
        }
    }
}
