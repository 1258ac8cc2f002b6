//! Law of the colony size at the catastrophe time `T ~ Exp(theta)` for
//! Poissonian and Yule internal growth.

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};
use crate::numerics::{hyp2f1_11, integrate_unit_interval, ExtendedReal, Tolerance};

/// Tail mass left behind when an infinite support is cut.
pub const TRUNCATION_TAIL: f64 = 1e-12;

/// Largest support cut used for dense pmf vectors. Heavy Yule tails that do not
/// reach [`TRUNCATION_TAIL`] before this point keep a larger certified tail.
pub const MAX_SUPPORT: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    /// `eta(t) = 1 + Poisson(lambda t)`.
    Poissonian,
    /// Pure birth process with rate `lambda` started from one individual.
    Yule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSpec {
    pub kind: GrowthKind,
    /// Birth / intensity rate.
    pub lambda: f64,
    /// Catastrophe rate.
    pub theta: f64,
}

impl GrowthSpec {
    pub fn new(kind: GrowthKind, lambda: f64, theta: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return domain(format!("growth rate lambda must be positive (got {lambda})"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return domain(format!("catastrophe rate theta must be positive (got {theta})"));
        }
        Ok(GrowthSpec { kind, lambda, theta })
    }
}

/// Law of `eta(T)` on `{1, 2, ...}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColonySizeLaw {
    spec: GrowthSpec,
    /// Yule–Simon exponent `theta / lambda` (Yule growth only).
    rho_yule: Option<f64>,
    /// Geometric ratio `lambda / (theta + lambda)` (Poissonian growth only).
    q_geom: Option<f64>,
}

impl ColonySizeLaw {
    pub fn new(spec: GrowthSpec) -> Result<Self> {
        let spec = GrowthSpec::new(spec.kind, spec.lambda, spec.theta)?;
        let (rho_yule, q_geom) = match spec.kind {
            GrowthKind::Poissonian => (None, Some(spec.lambda / (spec.theta + spec.lambda))),
            GrowthKind::Yule => (Some(spec.theta / spec.lambda), None),
        };
        Ok(ColonySizeLaw { spec, rho_yule, q_geom })
    }

    pub fn from_parts(kind: GrowthKind, lambda: f64, theta: f64) -> Result<Self> {
        Self::new(GrowthSpec::new(kind, lambda, theta)?)
    }

    pub fn spec(&self) -> GrowthSpec {
        self.spec
    }

    pub fn kind(&self) -> GrowthKind {
        self.spec.kind
    }

    pub fn rho_yule(&self) -> Option<f64> {
        self.rho_yule
    }

    pub fn q_geom(&self) -> Option<f64> {
        self.q_geom
    }

    /// `P(eta(T) = n)` for `n >= 1`.
    pub fn pmf(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return domain("colony size pmf is supported on n >= 1");
        }
        Ok(match (self.q_geom, self.rho_yule) {
            (Some(q), _) => (1.0 - q) * q.powf((n - 1) as f64),
            (_, Some(rho)) => rho * ln_beta(n as f64, rho + 1.0).exp(),
            _ => unreachable!(),
        })
    }

    /// Dense pmf over `0..=n_max` (index 0 holds zero mass).
    pub fn pmf_vec(&self, n_max: u64) -> Vec<f64> {
        let mut out = vec![0.0; n_max as usize + 1];
        if n_max == 0 {
            return out;
        }
        match (self.q_geom, self.rho_yule) {
            (Some(q), _) => {
                let mut v = 1.0 - q;
                for slot in out.iter_mut().skip(1) {
                    *slot = v;
                    v *= q;
                }
            }
            (_, Some(rho)) => {
                // pmf(n+1) / pmf(n) = n / (n + rho + 1)
                let mut v = rho / (rho + 1.0);
                for (n, slot) in out.iter_mut().enumerate().skip(1) {
                    *slot = v;
                    let nf = n as f64;
                    v *= nf / (nf + rho + 1.0);
                }
            }
            _ => unreachable!(),
        }
        out
    }

    /// Certified tail `P(eta(T) > n)` from the closed-form survival function.
    pub fn tail(&self, n: u64) -> f64 {
        match (self.q_geom, self.rho_yule) {
            (Some(q), _) => q.powf(n as f64),
            (_, Some(rho)) => {
                let nf = n as f64;
                (ln_gamma(rho + 1.0) + ln_gamma(nf + 1.0) - ln_gamma(nf + 1.0 + rho)).exp().min(1.0)
            }
            _ => unreachable!(),
        }
    }

    /// `E[eta(T); eta(T) > n]`, used to bound truncated mean computations.
    pub fn mean_above(&self, n: u64) -> ExtendedReal {
        let nf = n as f64;
        match (self.q_geom, self.rho_yule) {
            (Some(q), _) => ExtendedReal::finite(q.powf(nf) * (nf + 1.0 / (1.0 - q))),
            (_, Some(rho)) if rho > 1.0 => ExtendedReal::finite(rho * rho * ln_beta(nf + 2.0, rho - 1.0).exp()),
            (_, Some(_)) => ExtendedReal::INFINITY,
            _ => unreachable!(),
        }
    }

    /// Smallest cut `n` with `P(eta > n) <= tail_target`, capped at `cap`.
    pub fn support_cut(&self, tail_target: f64, cap: u64) -> u64 {
        if let Some(q) = self.q_geom {
            if q <= 0.0 {
                return 1;
            }
            let n = (tail_target.ln() / q.ln()).ceil().max(1.0);
            return if n >= cap as f64 { cap } else { n as u64 };
        }
        if self.tail(cap) > tail_target {
            return cap;
        }
        let (mut lo, mut hi) = (1u64, cap);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.tail(mid) <= tail_target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Default support cut used by downstream truncated laws.
    pub fn default_cut(&self) -> u64 {
        self.support_cut(TRUNCATION_TAIL, MAX_SUPPORT)
    }

    /// Probability generating function on `[0, 1]`.
    pub fn pgf(&self, z: f64, tol: &Tolerance) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return domain(format!("pgf argument must lie in [0, 1] (got {z})"));
        }
        if z == 1.0 {
            return Ok(1.0);
        }
        Ok(z * self.pgf_over_z(z, tol)?)
    }

    /// `G(z) / z = E[z^(eta - 1)]`, finite at `z = 0`.
    pub fn pgf_over_z(&self, z: f64, tol: &Tolerance) -> Result<f64> {
        if z == 1.0 {
            return Ok(1.0);
        }
        let GrowthSpec { lambda, theta, .. } = self.spec;
        match self.rho_yule {
            None => Ok(theta / (theta + lambda * (1.0 - z))),
            Some(rho) => Ok(rho / (1.0 + rho) * hyp2f1_11(2.0 + rho, z, tol)?),
        }
    }

    /// Divided difference `(H(z) - H(c)) / (z - c)` of `H(t) = G(t) / t`,
    /// evaluated without cancellation (also at `z = c`).
    pub fn pgf_over_z_slope(&self, z: f64, c: f64, tol: &Tolerance) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) || !(0.0..=1.0).contains(&c) {
            return domain(format!("pgf arguments must lie in [0, 1] (got {z}, {c})"));
        }
        let GrowthSpec { lambda, theta, .. } = self.spec;
        match self.rho_yule {
            None => Ok(theta * lambda / ((theta + lambda * (1.0 - z)) * (theta + lambda * (1.0 - c)))),
            Some(rho) => {
                // H(t) = ∫ rho s^rho / (1 - (1-s) t) ds over the law of s = e^{-lambda T}
                integrate_unit_interval(
                    |s| {
                        let v = 1.0 - s;
                        rho * s.powf(rho) * v / ((1.0 - v * z) * (1.0 - v * c))
                    },
                    tol,
                )
            }
        }
    }

    pub fn mean(&self) -> ExtendedReal {
        let GrowthSpec { lambda, theta, .. } = self.spec;
        match self.spec.kind {
            GrowthKind::Poissonian => ExtendedReal::finite(1.0 + lambda / theta),
            GrowthKind::Yule if theta > lambda => ExtendedReal::finite(theta / (theta - lambda)),
            GrowthKind::Yule => ExtendedReal::INFINITY,
        }
    }

    /// Exact draw of `eta(T)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let GrowthSpec { lambda, theta, .. } = self.spec;
        match self.spec.kind {
            GrowthKind::Poissonian => 1 + sample_geometric(theta / (theta + lambda), rng),
            GrowthKind::Yule => {
                let t: f64 = Exp::new(theta).expect("theta > 0").sample(rng);
                let success = (-lambda * t).exp();
                sample_geometric(success, rng).saturating_add(1)
            }
        }
    }
}

/// Number of failures before the first success, saturating for tiny success
/// probabilities.
pub(crate) fn sample_geometric<R: Rng + ?Sized>(success: f64, rng: &mut R) -> u64 {
    if success >= 1.0 {
        return 0;
    }
    if success < 1e-300 {
        return u64::MAX;
    }
    Geometric::new(success).expect("success probability in (0, 1)").sample(rng)
}
