//! Maneuver detection for cislunar angles-only tracking.
//!
//! The pipeline expands the flow of the circular restricted three-body
//! problem as a high-order Taylor polynomial of the initial state deviation,
//! pushes it through an angles-only measurement model, and asks how likely
//! the observed measurement is under ballistic motion: a confidence level is
//! put on the prior state estimate, the closest reachable measurement inside
//! that confidence region is found by recursive polynomial optimization, and
//! the residual's own confidence level is compared against the state's. The
//! confidence-dominance maneuver indicator (CDMI) flags a maneuver when the
//! observation's confidence level exceeds the state's; the integrated variant
//! averages that comparison over every state confidence level so no threshold
//! has to be hand-picked.
//!
//! Modules, bottom-up:
//!
//! * [`polyalg`] — truncated Taylor polynomial algebra in six variables.
//! * [`dynamics`] — CRTBP equations of motion, adaptive RK78 propagation over
//!   both floats and polynomials, flow expansions.
//! * [`observation`] — angle measurement model, observer ephemeris,
//!   measurement polynomials, synthetic observation generation.
//! * [`stats`] — chi-square distribution functions, Mahalanobis statistics,
//!   Gaussian state handling.
//! * [`rpo`] — recursive polynomial optimization: sequential linearization
//!   with an exact ellipsoid-constrained least-squares subproblem.
//! * [`indicator`] — the single and integrated maneuver indicators with dense
//!   and adaptive confidence-curve sampling.
//! * [`harness`] — scenario construction, one-run cases, Monte Carlo
//!   campaigns, robustness sweeps.

pub mod dynamics;
pub mod harness;
pub mod indicator;
pub mod observation;
pub mod polyalg;
pub mod rpo;
pub mod stats;

pub use dynamics::{CrtbpParams, FlowExpansion, StateVec, Tolerances};
pub use harness::{McSummary, Scenario, ScenarioConfig};
pub use indicator::{CdmiCurve, CurveSample, DetectionReport};
pub use observation::{AngleObs, MeasurementExpansion, ObservationSet};
pub use polyalg::{Algebra, PolyMap, TruncatedPoly};
pub use rpo::RpoResult;
pub use stats::{ConfidenceBudget, GaussianState};
