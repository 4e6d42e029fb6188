//! Preconditioned proximal point methods with numerical certificates of
//! partial strong submonotonicity and partial subregularity.
//!
//! Everything is generic over the scalar ([`Scalar`], `f32` or `f64`); the
//! `*64` aliases fix `f64`.

pub mod linalg;
pub mod problems;
pub mod regularity;
pub mod scalar;
pub mod setvalued;
pub mod solvers;

pub use linalg::{DenseMatrix, LinalgError, PrimalDualVector, StructuredOperator};
pub use problems::{make_fixture, Fixture, FixtureId, ProblemError};
pub use regularity::{CertificateReport, NeighborhoodSpec, RegularityError, RegularityQuery, SamplingOptions};
pub use scalar::Scalar;
pub use setvalued::{Interval, ProxFunction, SaddleProblem, SetValue, SolutionSet};
pub use solvers::{run_with_monitor, IterationTrace, Method, StepSchedule};

pub type DenseMatrix64 = DenseMatrix<f64>;
pub type PrimalDualVector64 = PrimalDualVector<f64>;
pub type StructuredOperator64 = StructuredOperator<f64>;
pub type SetValue64 = SetValue<f64>;
pub type SolutionSet64 = SolutionSet<f64>;
pub type ProxFunction64 = ProxFunction<f64>;
pub type SaddleProblem64 = SaddleProblem<f64>;
pub type RegularityQuery64 = RegularityQuery<f64>;
pub type CertificateReport64 = CertificateReport<f64>;
pub type StepSchedule64 = StepSchedule<f64>;
pub type IterationTrace64 = IterationTrace<f64>;
pub type Fixture64 = Fixture<f64>;
