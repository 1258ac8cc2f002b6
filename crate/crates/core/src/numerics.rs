//! Shared numerics: extended reals, tolerances, compensated summation,
//! adaptive Gauss–Kronrod quadrature and the Gauss hypergeometric function
//! with parameters `(1, 1; c; x)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, numeric, Result};

/// A nonnegative-friendly real number that may also be `+∞`.
///
/// Used for means of heavy-tailed laws. No `∞ − ∞` is ever formed; the type
/// only supports addition and multiplication by nonnegative scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub const INFINITY: ExtendedReal = ExtendedReal::PosInfinity;

    pub fn finite(value: f64) -> Self {
        debug_assert!(value.is_finite(), "finite extended real built from {value}");
        ExtendedReal::Finite(value)
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    /// The finite value, or `None` for `+∞`.
    pub fn value(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }

    /// Lossy conversion to a float (`+∞` maps to `f64::INFINITY`).
    pub fn to_f64(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    /// Natural logarithm; `log(+∞) = +∞`.
    pub fn ln(self) -> f64 {
        self.to_f64().ln()
    }

    pub fn min(self, other: ExtendedReal) -> ExtendedReal {
        if self <= other {
            self
        } else {
            other
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(value: f64) -> Self {
        if value == f64::INFINITY {
            ExtendedReal::PosInfinity
        } else {
            ExtendedReal::finite(value)
        }
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use ExtendedReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.partial_cmp(b),
            (Finite(_), PosInfinity) => Some(Ordering::Less),
            (PosInfinity, Finite(_)) => Some(Ordering::Greater),
            (PosInfinity, PosInfinity) => Some(Ordering::Equal),
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::finite(a + b),
            _ => ExtendedReal::PosInfinity,
        }
    }
}

impl Add<f64> for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: f64) -> Self {
        self + ExtendedReal::finite(rhs)
    }
}

/// Scaling by a nonnegative factor, with the convention `0 · ∞ = 0`.
impl Mul<f64> for ExtendedReal {
    type Output = ExtendedReal;

    fn mul(self, rhs: f64) -> Self {
        debug_assert!(rhs >= 0.0);
        match self {
            ExtendedReal::Finite(a) => ExtendedReal::finite(a * rhs),
            ExtendedReal::PosInfinity if rhs == 0.0 => ExtendedReal::finite(0.0),
            ExtendedReal::PosInfinity => ExtendedReal::PosInfinity,
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInfinity => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => serializer.serialize_f64(*v),
            ExtendedReal::PosInfinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(ExtendedReal::Finite(v)),
            Repr::Text(s) if s == "inf" => Ok(ExtendedReal::PosInfinity),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

/// Error budget for series, quadrature and truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_terms: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_terms: usize) -> Result<Self> {
        if !(abs_tol >= 0.0 && rel_tol >= 0.0) || abs_tol + rel_tol <= 0.0 {
            return domain(format!("tolerance needs abs_tol, rel_tol >= 0 with positive sum (got {abs_tol}, {rel_tol})"));
        }
        if max_terms < 64 {
            return domain(format!("max_terms must be at least 64 (got {max_terms})"));
        }
        Ok(Tolerance { abs_tol, rel_tol, max_terms })
    }

    /// Allowed absolute error for a quantity of the given magnitude.
    pub fn bound(&self, magnitude: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * magnitude.abs())
    }

    /// A copy with both tolerances scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Tolerance {
        Tolerance { abs_tol: self.abs_tol * factor, rel_tol: self.rel_tol * factor, max_terms: self.max_terms }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs_tol: 1e-12, rel_tol: 1e-10, max_terms: 1_000_000 }
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `ln C(n, k)`. Exact integer arithmetic for small `n`, log-gamma otherwise.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    if k == 0 {
        return 0.0;
    }
    if n <= 62 {
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * u128::from(n - i) / u128::from(i + 1);
        }
        return (c as f64).ln();
    }
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

// Gauss–Kronrod 15/7 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Maximum number of live subintervals in adaptive quadrature.
pub const QUADRATURE_SUBDIVISION_BUDGET: usize = 20_000;

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: &Tolerance) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return domain(format!("integration bounds must be finite (got [{a}, {b}])"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (value, error) = gauss_kronrod_15(&f, a, b);
    if !value.is_finite() {
        return numeric(format!("integrand is not finite on [{a}, {b}]"));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    loop {
        // estimates at roundoff level cannot shrink further
        let floor = 64.0 * f64::EPSILON * total.abs();
        if total_err <= tol.bound(total).max(floor) {
            let sum: CompensatedSum = heap.iter().map(|s| s.value).collect();
            return Ok(sum.value());
        }
        if heap.len() >= QUADRATURE_SUBDIVISION_BUDGET {
            return numeric(format!(
                "quadrature on [{a}, {b}] reached {QUADRATURE_SUBDIVISION_BUDGET} subintervals with error {total_err:e}"
            ));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point; accept what we have
            // when the remaining error is at roundoff level
            if total_err <= 1e3 * f64::EPSILON * total.abs().max(1.0) {
                heap.push(worst);
                let sum: CompensatedSum = heap.iter().map(|s| s.value).collect();
                return Ok(sum.value());
            }
            return numeric(format!("quadrature could not resolve integrand near {mid}"));
        }
        let (lv, le) = gauss_kronrod_15(&f, worst.a, mid);
        let (rv, re) = gauss_kronrod_15(&f, mid, worst.b);
        if !(lv.is_finite() && rv.is_finite()) {
            return numeric(format!("integrand is not finite near {mid}"));
        }
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        if heap.len() % 64 == 0 {
            // refresh the running sums to stop drift from incremental updates
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Adaptive quadrature of `f` over the unit interval.
pub fn integrate_unit_interval<F: Fn(f64) -> f64>(f: F, tol: &Tolerance) -> Result<f64> {
    integrate(f, 0.0, 1.0, tol)
}

/// Arguments at or below this value use the Euler integral instead of the series.
pub const HYP2F1_SERIES_LOWER: f64 = -0.5;
/// Arguments at or above this value use the Euler integral instead of the series.
pub const HYP2F1_SERIES_UPPER: f64 = 0.9;

fn check_hyp2f1_args(c: f64, x: f64) -> Result<()> {
    if !(c > 1.0 && c.is_finite()) {
        return domain(format!("2F1(1,1;c;x) needs c > 1 (got c = {c})"));
    }
    if !(x < 1.0 && x.is_finite()) {
        return domain(format!("2F1(1,1;c;x) needs finite x < 1 (got x = {x})"));
    }
    Ok(())
}

/// Gauss hypergeometric function `2F1(1, 1; c; x)` for `c > 1`, `x < 1`.
pub fn hyp2f1_11(c: f64, x: f64, tol: &Tolerance) -> Result<f64> {
    check_hyp2f1_args(c, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x <= HYP2F1_SERIES_LOWER || x >= HYP2F1_SERIES_UPPER {
        hyp2f1_11_integral(c, x, tol)
    } else {
        hyp2f1_11_series(c, x, tol)
    }
}

/// Defining power series `Σ k!/(c)_k x^k`, valid for `|x| < 1`.
pub fn hyp2f1_11_series(c: f64, x: f64, tol: &Tolerance) -> Result<f64> {
    check_hyp2f1_args(c, x)?;
    if x.abs() >= 1.0 {
        return domain(format!("series for 2F1(1,1;c;x) needs |x| < 1 (got {x})"));
    }
    let mut sum = CompensatedSum::new();
    let mut term = 1.0;
    for k in 0..tol.max_terms {
        sum.add(term);
        let kf = k as f64;
        term *= x * (kf + 1.0) / (c + kf);
        // later term ratios are bounded by |x| because c > 1
        let tail = term.abs() / (1.0 - x.abs());
        if tail <= 0.5 * tol.bound(sum.value()) {
            return Ok(sum.value());
        }
    }
    numeric(format!(
        "2F1(1,1;{c};{x}) series did not converge within {} terms",
        tol.max_terms
    ))
}

/// Euler integral `(c-1) ∫_0^1 (1-t)^(c-2) / (1 - x t) dt`.
pub fn hyp2f1_11_integral(c: f64, x: f64, tol: &Tolerance) -> Result<f64> {
    check_hyp2f1_args(c, x)?;
    if c < 2.0 {
        // u = (1-t)^(c-1) removes the endpoint singularity
        let power = 1.0 / (c - 1.0);
        integrate_unit_interval(|u| 1.0 / (1.0 - x * (1.0 - u.powf(power))), tol)
    } else {
        let exponent = c - 2.0;
        let value = integrate_unit_interval(|t| (1.0 - t).powf(exponent) / (1.0 - x * t), &tol.scaled(0.5))?;
        Ok((c - 1.0) * value)
    }
}
