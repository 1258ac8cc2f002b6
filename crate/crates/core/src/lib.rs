//! Branching processes whose colonies grow until a catastrophe, lose members
//! to a survivor kernel, and then disperse the survivors over new sites.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classification;
pub mod dispersal;
pub mod environments;
pub mod error;
pub mod growth;
pub mod numerics;
pub mod oracle;
pub mod simulator;
pub mod survivors;

pub use classification::{classify_random, classify_varying_analytic, classify_varying_numeric, log_mean_trace, DriftMethod, LogMeanTrace, Outcome, ParameterBox, Verdict, Basis};
pub use dispersal::{offspring_mean, Dispersal, DispersalKind, OffspringLaw, OffspringMean};
pub use environments::{
    DecaySequence, EnvParams, Environment, EnvironmentFamily, EnvironmentPath, EnvironmentProcess, IidMarginal, PsiLaw,
    ScalarLaw,
};
pub use error::{Error, Result};
pub use growth::{ColonySizeLaw, GrowthKind, GrowthSpec};
pub use numerics::{ExtendedReal, Tolerance};
pub use simulator::{extinction_probability_exact, simulate, ReplicateOutcome, ReplicateRecord, SimulationConfig, SimulationResult};
pub use survivors::{Estimate, GeometricSupport, KernelKind, SurvivorKernel, SurvivorLaw};
