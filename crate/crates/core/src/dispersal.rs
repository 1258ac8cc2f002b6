//! Dispersal of `r` survivors over `d` sites and the induced offspring law
//! `xi = Delta(Y)`.

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, numeric, Result};
use crate::numerics::{integrate_unit_interval, ln_choose, CompensatedSum, ExtendedReal};
use crate::survivors::SurvivorLaw;

/// Dispersal family, independent of the number of sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DispersalKind {
    /// Every survivor founds its own colony (D1).
    #[serde(rename = "D1")]
    Full,
    /// At most `d` colonies are founded (D2).
    #[serde(rename = "D2")]
    Capped,
    /// Survivors pick one of `d` sites independently (D3).
    #[serde(rename = "D3")]
    SiteChoice,
    /// All occupancy vectors of `d` sites are equally likely (D4).
    #[serde(rename = "D4")]
    Composition,
}

impl DispersalKind {
    pub const ALL: [DispersalKind; 4] =
        [DispersalKind::Full, DispersalKind::Capped, DispersalKind::SiteChoice, DispersalKind::Composition];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "D1",
            Self::Capped => "D2",
            Self::SiteChoice => "D3",
            Self::Composition => "D4",
        }
    }

    pub fn with_sites(self, d: u32) -> Result<Dispersal> {
        if d == 0 {
            return domain("number of dispersal sites must be at least 1");
        }
        Ok(Dispersal { kind: self, d })
    }
}

/// A dispersal mechanism with its number of sites (ignored by `Full`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dispersal {
    kind: DispersalKind,
    d: u32,
}

/// Above this many survivors per site the inclusion–exclusion sum for site
/// choice loses too much to cancellation and the occupancy recurrence is used.
const INCLUSION_EXCLUSION_RATIO: u64 = 40;

impl Dispersal {
    pub fn full() -> Self {
        Dispersal { kind: DispersalKind::Full, d: 1 }
    }

    pub fn kind(&self) -> DispersalKind {
        self.kind
    }

    pub fn sites(&self) -> u32 {
        self.d
    }

    /// Largest possible offspring count, `None` when unbounded.
    pub fn cap(&self) -> Option<u64> {
        match self.kind {
            DispersalKind::Full => None,
            _ => Some(self.d as u64),
        }
    }

    /// `P(Delta(r) = k)`.
    pub fn pmf(&self, r: u64, k: u64) -> f64 {
        let d = self.d as u64;
        match self.kind {
            DispersalKind::Full => f64::from(u8::from(k == r)),
            DispersalKind::Capped => f64::from(u8::from(k == r.min(d))),
            _ if r == 0 => f64::from(u8::from(k == 0)),
            _ if k == 0 || k > r.min(d) => 0.0,
            DispersalKind::SiteChoice if r <= INCLUSION_EXCLUSION_RATIO * d => site_choice_inclusion_exclusion(r, d, k),
            DispersalKind::SiteChoice => occupancy_row(r, d)[k as usize],
            DispersalKind::Composition => composition_row(r, d)[k as usize],
        }
    }

    /// `E[Delta(r)]`.
    pub fn conditional_mean(&self, r: u64) -> f64 {
        let d = self.d as f64;
        let rf = r as f64;
        match self.kind {
            DispersalKind::Full => rf,
            DispersalKind::Capped => rf.min(d),
            DispersalKind::SiteChoice if self.d == 1 => rf.min(1.0),
            DispersalKind::SiteChoice => d * -(rf * (-1.0 / d).ln_1p()).exp_m1(),
            DispersalKind::Composition if r == 0 => 0.0,
            DispersalKind::Composition => d * rf / (rf + d - 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, r: u64, rng: &mut R) -> u64 {
        let d = self.d as u64;
        match self.kind {
            DispersalKind::Full => r,
            DispersalKind::Capped => r.min(d),
            _ if r == 0 => 0,
            DispersalKind::SiteChoice => {
                let mut occupied = vec![false; self.d as usize];
                let mut count = 0;
                let mut left = r;
                // once every site is taken the remaining choices change nothing
                while left > 0 && count < d {
                    let site = rng.random_range(0..self.d as usize);
                    if !occupied[site] {
                        occupied[site] = true;
                        count += 1;
                    }
                    left -= 1;
                }
                count
            }
            DispersalKind::Composition => {
                let row = composition_row(r, d);
                let u: f64 = rng.random();
                let mut cdf = 0.0;
                for (k, &w) in row.iter().enumerate().skip(1) {
                    cdf += w;
                    if u < cdf {
                        return k as u64;
                    }
                }
                row.iter().rposition(|&w| w > 0.0).unwrap_or(1) as u64
            }
        }
    }
}

/// `C(d,k) sum_i (-1)^i C(k,i) ((k-i)/d)^r` with log-domain terms.
fn site_choice_inclusion_exclusion(r: u64, d: u64, k: u64) -> f64 {
    let base = ln_choose(d, k);
    let df = d as f64;
    let mut acc = CompensatedSum::new();
    for i in 0..k {
        let term = (base + ln_choose(k, i) + r as f64 * ((k - i) as f64 / df).ln()).exp();
        acc.add(if i % 2 == 0 { term } else { -term });
    }
    acc.value().clamp(0.0, 1.0)
}

/// Occupied-site distribution after `r` independent choices, by the occupancy
/// recurrence; index `k` in `0..=d`.
pub(crate) fn occupancy_row(r: u64, d: u64) -> Vec<f64> {
    let mut row = vec![0.0; d as usize + 1];
    row[0] = 1.0;
    for _ in 0..r {
        advance_occupancy(&mut row, d);
        if row[d as usize] == 1.0 {
            break;
        }
    }
    row
}

/// One more survivor: `P'(k) = P(k) k/d + P(k-1) (d-k+1)/d`.
fn advance_occupancy(row: &mut [f64], d: u64) {
    let df = d as f64;
    for k in (1..=d as usize).rev() {
        row[k] = row[k] * (k as f64 / df) + row[k - 1] * ((d as usize - k + 1) as f64 / df);
    }
    row[0] = 0.0;
}

/// Occupied-site distribution for a uniform composition of `r >= 1` into `d`
/// parts; index `k` in `0..=min(d, r)`, normalized over the row.
pub(crate) fn composition_row(r: u64, d: u64) -> Vec<f64> {
    let top = r.min(d);
    let mut row = vec![0.0; top as usize + 1];
    if r == 0 {
        row[0] = 1.0;
        return row;
    }
    // log of C(d,k) C(r-1,k-1) relative to k = 1, accumulated from the ratios
    // (d-k)(r-k) / ((k+1) k), which stay accurate for huge r
    let mut lw = Vec::with_capacity(top as usize);
    let mut acc = 0.0;
    for k in 1..=top {
        lw.push(acc);
        let kf = k as f64;
        acc += ((d - k) as f64).ln() + ((r - k) as f64).ln() - (kf + 1.0).ln() - kf.ln();
    }
    let peak = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = CompensatedSum::new();
    for (i, &l) in lw.iter().enumerate() {
        let w = (l - peak).exp();
        row[i + 1] = w;
        total.add(w);
    }
    let total = total.value();
    for w in row.iter_mut().skip(1) {
        *w /= total;
    }
    row
}

/// Mean of the offspring law with a bound on its numerical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffspringMean {
    pub value: ExtendedReal,
    pub error: f64,
}

/// `E[xi]` for `xi = Delta(Y)`. Bounded mechanisms use tail-aware sums over
/// the survivor pmf, site choice uses the pgf identity, and composition is
/// checked against its integral identity.
pub fn offspring_mean(mech: Dispersal, law: &SurvivorLaw) -> Result<OffspringMean> {
    let tol = law.tolerance();
    let d = mech.d as f64;
    if mech.d == 1 && mech.kind != DispersalKind::Full {
        let value = law.prob_positive()?;
        return Ok(OffspringMean { value: ExtendedReal::finite(value), error: tol.bound(value) });
    }
    match mech.kind {
        DispersalKind::Full => {
            let value = law.mean()?;
            Ok(OffspringMean { value, error: tol.bound(value.value().unwrap_or(0.0)) })
        }
        DispersalKind::Capped => {
            let est = law.expect_bounded(|k| (k as f64).min(d), d);
            Ok(OffspringMean { value: ExtendedReal::finite(est.value), error: est.error + tol.bound(est.value) })
        }
        DispersalKind::SiteChoice => {
            let value = d * (1.0 - law.pgf(1.0 - 1.0 / d)?);
            Ok(OffspringMean { value: ExtendedReal::finite(value), error: d * tol.bound(1.0) })
        }
        DispersalKind::Composition => {
            let direct = law.expect_bounded(|k| d * k as f64 / (k as f64 + d - 1.0), d);
            let integral = composition_mean_integral(mech.d, law)?;
            let budget = direct.error + d * (d - 1.0) * tol.bound(1.0) * 10.0 + 1e-9;
            if (direct.value - integral).abs() > budget {
                return numeric(format!(
                    "composition mean paths disagree: direct {} vs integral {integral} (budget {budget:e})",
                    direct.value
                ));
            }
            Ok(OffspringMean { value: ExtendedReal::finite(direct.value), error: direct.error + tol.bound(direct.value) })
        }
    }
}

/// `d - d(d-1) ∫ z^(d-2) G_Y(z) dz` for `d >= 2`.
pub fn composition_mean_integral(d: u32, law: &SurvivorLaw) -> Result<f64> {
    if d < 2 {
        return domain("integral form of the composition mean needs d >= 2");
    }
    let df = d as f64;
    let failure = RefCell::new(None);
    let value = integrate_unit_interval(
        |z| match law.pgf(z) {
            Ok(g) => z.powi(d as i32 - 2) * g,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        // pgf values are accurate well below this, so the quadrature sees a smooth integrand
        &law.tolerance().scaled(0.1),
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(df - df * (df - 1.0) * value?)
}

/// Truncated law of `xi = Delta(Y)` on `{0, ..., k_max}`; `tail_bound` is the
/// mass of colony sizes left out of the survivor pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    mechanism: Dispersal,
    pmf: Vec<f64>,
    tail_bound: f64,
    mean: OffspringMean,
}

impl OffspringLaw {
    pub fn new(mech: Dispersal, law: &SurvivorLaw) -> Result<Self> {
        let survivors = law.pmf_slice();
        let d = mech.d as u64;
        let width = match mech.cap() {
            None => survivors.len(),
            Some(cap) => cap.min(law.n_max()) as usize + 1,
        };
        let mut acc = vec![CompensatedSum::new(); width];
        match mech.kind {
            DispersalKind::Full => {
                for (r, &w) in survivors.iter().enumerate() {
                    acc[r].add(w);
                }
            }
            DispersalKind::Capped => {
                for (r, &w) in survivors.iter().enumerate() {
                    acc[(r as u64).min(d) as usize].add(w);
                }
            }
            DispersalKind::SiteChoice => {
                let mut row = vec![0.0; d as usize + 1];
                row[0] = 1.0;
                for (r, &w) in survivors.iter().enumerate() {
                    if r > 0 {
                        advance_occupancy(&mut row, d);
                    }
                    for (k, &b) in row.iter().enumerate().take(width) {
                        if b != 0.0 {
                            acc[k].add(w * b);
                        }
                    }
                }
            }
            DispersalKind::Composition => {
                for (r, &w) in survivors.iter().enumerate() {
                    for (k, &b) in composition_row(r as u64, d).iter().enumerate() {
                        if b != 0.0 {
                            acc[k].add(w * b);
                        }
                    }
                }
            }
        }
        let pmf = acc.iter().map(|a| a.value()).collect();
        Ok(OffspringLaw { mechanism: mech, pmf, tail_bound: law.tail_bound(), mean: offspring_mean(mech, law)? })
    }

    pub fn mechanism(&self) -> Dispersal {
        self.mechanism
    }

    pub fn pmf_slice(&self) -> &[f64] {
        &self.pmf
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.pmf.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn mean(&self) -> ExtendedReal {
        self.mean.value
    }

    pub fn mean_with_error(&self) -> OffspringMean {
        self.mean
    }

    /// Truncated pgf `sum_k pmf(k) s^k`, a lower bound within `tail_bound` of
    /// the true pgf on `[0, 1]`.
    pub fn pgf(&self, s: f64) -> f64 {
        // Horner from the top of the support
        self.pmf.iter().rev().fold(0.0, |acc, &w| acc * s + w)
    }

    /// True when all retained mass sits on a single value.
    pub fn is_degenerate(&self) -> bool {
        let top = self.pmf.iter().cloned().fold(0.0, f64::max);
        top >= 1.0 - self.tail_bound - 1e-12
    }
}
