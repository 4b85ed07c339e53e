//! Angles-only measurement model and measurement polynomials.
//!
//! An optical observer reports the right ascension and declination of the
//! line of sight to the target in the rotating frame: with
//! `d = r_target - r_observer` and `rho = |d|`,
//!
//! ```text
//! alpha = atan2(dy, dx)        in (-pi, pi]
//! beta  = asin(dz / rho)       in [-pi/2, pi/2]
//! ```
//!
//! Composing this model with a polynomial flow expansion yields the
//! measurement expansion: a polynomial map from initial state deviations to
//! stacked angle pairs, one `(alpha, beta)` block per observation epoch.
//! Angle residuals are used as raw principal-value differences; scenario
//! residuals are far below a radian, which is asserted rather than silently
//! wrapped.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    propagate_through, CrtbpParams, DynError, FlowExpansion, StateVec, Tolerances,
    OBSERVER_APOLUNE,
};
use crate::polyalg::{atan2_poly, PolyError, PolyMap, NVARS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObsError {
    #[error("target and observer positions coincide")]
    CoincidentPositions,
    #[error("observation epochs must be strictly increasing")]
    NonIncreasingEpochs,
    #[error("angle noise covariance is not symmetric positive definite")]
    BadNoiseCov,
    #[error("angle out of range: {0}")]
    AngleRange(String),
    #[error("{expected} flow expansions/observer positions expected, got {got}")]
    EpochMismatch { expected: usize, got: usize },
    #[error("flow expansions must share the reference state and start epoch")]
    InconsistentFlows,
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// One timed angle pair with its noise covariance (radians, radians^2).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleObs {
    pub epoch: f64,
    pub alpha: f64,
    pub beta: f64,
    pub noise_cov: Matrix2<f64>,
}

impl AngleObs {
    pub fn new(
        epoch: f64,
        alpha: f64,
        beta: f64,
        noise_cov: Matrix2<f64>,
    ) -> Result<Self, ObsError> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if !(-PI < alpha && alpha <= PI) {
            return Err(ObsError::AngleRange(format!("alpha = {alpha}")));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&beta) {
            return Err(ObsError::AngleRange(format!("beta = {beta}")));
        }
        if (noise_cov[(0, 1)] - noise_cov[(1, 0)]).abs() > 1e-15 * noise_cov.amax()
            || noise_cov[(0, 0)] <= 0.0
            || noise_cov.determinant() <= 0.0
        {
            return Err(ObsError::BadNoiseCov);
        }
        Ok(Self {
            epoch,
            alpha,
            beta,
            noise_cov,
        })
    }

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }
}

/// Time-ordered angle observations with their stacked block covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    observations: Vec<AngleObs>,
}

impl ObservationSet {
    pub fn new(observations: Vec<AngleObs>) -> Result<Self, ObsError> {
        if observations.is_empty() {
            return Err(ObsError::EpochMismatch {
                expected: 1,
                got: 0,
            });
        }
        for pair in observations.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(ObsError::NonIncreasingEpochs);
            }
        }
        Ok(Self { observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[AngleObs] {
        &self.observations
    }

    pub fn epochs(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.epoch).collect()
    }

    /// Stacked measurement vector `[alpha_1, beta_1, alpha_2, beta_2, ...]`.
    pub fn stacked_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.len());
        for (k, o) in self.observations.iter().enumerate() {
            v[2 * k] = o.alpha;
            v[2 * k + 1] = o.beta;
        }
        v
    }

    /// Block-diagonal stacked noise covariance.
    pub fn stacked_cov(&self) -> DMatrix<f64> {
        let n = 2 * self.len();
        let mut m = DMatrix::zeros(n, n);
        for (k, o) in self.observations.iter().enumerate() {
            for r in 0..2 {
                for c in 0..2 {
                    m[(2 * k + r, 2 * k + c)] = o.noise_cov[(r, c)];
                }
            }
        }
        m
    }

    /// Block-diagonal whitening factor `W` with `R^-1 = W' W`, built from the
    /// per-epoch Cholesky factors.
    pub fn stacked_whitener(&self) -> Result<DMatrix<f64>, ObsError> {
        let n = 2 * self.len();
        let mut m = DMatrix::zeros(n, n);
        for (k, o) in self.observations.iter().enumerate() {
            let chol = nalgebra::Cholesky::new(o.noise_cov).ok_or(ObsError::BadNoiseCov)?;
            let l_inv = chol
                .l()
                .solve_lower_triangular(&Matrix2::identity())
                .ok_or(ObsError::BadNoiseCov)?;
            for r in 0..2 {
                for c in 0..2 {
                    m[(2 * k + r, 2 * k + c)] = l_inv[(r, c)];
                }
            }
        }
        Ok(m)
    }
}

/// Right ascension and declination of `target_r` as seen from `observer_r`.
/// At the poles (line of sight along +/-z) the right ascension is fixed to 0
/// by the `atan2(0, 0) = 0` convention.
pub fn angles(target_r: &Vector3<f64>, observer_r: &Vector3<f64>) -> Result<(f64, f64), ObsError> {
    let d = target_r - observer_r;
    let rho = d.norm();
    if rho == 0.0 {
        return Err(ObsError::CoincidentPositions);
    }
    let alpha = d[1].atan2(d[0]);
    let beta = (d[2] / rho).asin();
    Ok((alpha, beta))
}

/// Observer state `span` nd after its apolune, on the standard 9:2 halo
/// orbit.
pub fn observer_state(
    span: f64,
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<StateVec, DynError> {
    let apolune = StateVec::from_row_slice(&OBSERVER_APOLUNE);
    crate::dynamics::propagate(&apolune, 0.0, span, params, tol)
}

/// Polynomial expansion of the stacked measurement map: 2N angle components
/// over the six initial deviation variables, row blocks ordered by epoch.
#[derive(Clone, Debug)]
pub struct MeasurementExpansion {
    pub map: PolyMap,
    pub epochs: Vec<f64>,
}

impl MeasurementExpansion {
    /// Number of observation epochs N (the map has 2N components).
    pub fn epoch_count(&self) -> usize {
        self.epochs.len()
    }

    pub fn constant_part(&self) -> DVector<f64> {
        DVector::from_vec(self.map.constant_part())
    }

    pub fn eval(&self, dx0: &nalgebra::Vector6<f64>) -> DVector<f64> {
        let delta = [dx0[0], dx0[1], dx0[2], dx0[3], dx0[4], dx0[5]];
        DVector::from_vec(self.map.eval(&delta))
    }

    /// Degree-one block as a dense (2N)x6 matrix.
    pub fn linear_block(&self) -> DMatrix<f64> {
        let lin = self.map.linear_block();
        DMatrix::from_fn(lin.len(), NVARS, |r, c| lin[r][c])
    }

    pub fn jacobian_at(&self, dx0: &nalgebra::Vector6<f64>) -> DMatrix<f64> {
        let delta = [dx0[0], dx0[1], dx0[2], dx0[3], dx0[4], dx0[5]];
        let jac = self.map.jacobian_at(&delta);
        DMatrix::from_fn(jac.len(), NVARS, |r, c| jac[r][c])
    }
}

/// Compose the angle model with one flow expansion per epoch. All flows must
/// share the reference state and start epoch; `observer_positions[k]` is the
/// observer location at the k-th epoch.
pub fn measurement_expansion(
    flows: &[FlowExpansion],
    observer_positions: &[Vector3<f64>],
) -> Result<MeasurementExpansion, ObsError> {
    if flows.is_empty() || flows.len() != observer_positions.len() {
        return Err(ObsError::EpochMismatch {
            expected: flows.len().max(1),
            got: observer_positions.len(),
        });
    }
    for f in &flows[1..] {
        if f.ref_state != flows[0].ref_state || f.t0 != flows[0].t0 {
            return Err(ObsError::InconsistentFlows);
        }
    }
    let mut components = Vec::with_capacity(2 * flows.len());
    let mut epochs = Vec::with_capacity(flows.len());
    for (flow, obs_r) in flows.iter().zip(observer_positions) {
        let dx = flow.map.component(0).shift(-obs_r[0]);
        let dy = flow.map.component(1).shift(-obs_r[1]);
        let dz = flow.map.component(2).shift(-obs_r[2]);
        let rho_sq = dx.mul(&dx).add(&dy.mul(&dy)).add(&dz.mul(&dz));
        let alpha = atan2_poly(&dy, &dx)?;
        let inv_rho = rho_sq.powf(-0.5)?;
        let beta = dz.mul(&inv_rho).asin()?;
        components.push(alpha);
        components.push(beta);
        epochs.push(flow.t1);
    }
    Ok(MeasurementExpansion {
        map: PolyMap::new(components),
        epochs,
    })
}

/// Generate noisy observations of a (possibly maneuvered) truth trajectory:
/// `dv` is added to the velocity immediately after `t0`, the state is
/// propagated to each epoch, projected into angles against the matching
/// observer position, and the supplied noise draws are added.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_observation(
    true_state0: &StateVec,
    maneuver_dv: &Vector3<f64>,
    t0: f64,
    epochs: &[f64],
    observer_positions: &[Vector3<f64>],
    noise_draws: &[Vector2<f64>],
    noise_cov: &Matrix2<f64>,
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<ObservationSet, ObsError> {
    if epochs.len() != observer_positions.len() || epochs.len() != noise_draws.len() {
        return Err(ObsError::EpochMismatch {
            expected: epochs.len(),
            got: observer_positions.len().min(noise_draws.len()),
        });
    }
    let mut s0 = *true_state0;
    s0[3] += maneuver_dv[0];
    s0[4] += maneuver_dv[1];
    s0[5] += maneuver_dv[2];
    let states = propagate_through(&s0, t0, epochs, params, tol)?;
    let mut obs = Vec::with_capacity(epochs.len());
    for (k, state) in states.iter().enumerate() {
        let target_r = Vector3::new(state[0], state[1], state[2]);
        let (alpha, beta) = angles(&target_r, &observer_positions[k])?;
        obs.push(AngleObs::new(
            epochs[k],
            alpha + noise_draws[k][0],
            beta + noise_draws[k][1],
            *noise_cov,
        )?);
    }
    ObservationSet::new(obs)
}

/// Full nonlinear measurement prediction for a given initial deviation; used
/// to recompute final residuals without polynomial truncation error.
pub trait MeasurementOracle: Sync {
    fn measure(&self, dx0: &nalgebra::Vector6<f64>) -> Result<DVector<f64>, ObsError>;
}

/// Oracle that propagates `ref_state + dx0` through the full dynamics and
/// projects each epoch into angles.
pub struct PropagatedMeasurement<'a> {
    pub ref_state: StateVec,
    pub t0: f64,
    pub epochs: &'a [f64],
    pub observer_positions: &'a [Vector3<f64>],
    pub params: &'a CrtbpParams,
    pub tol: Tolerances,
}

impl MeasurementOracle for PropagatedMeasurement<'_> {
    fn measure(&self, dx0: &nalgebra::Vector6<f64>) -> Result<DVector<f64>, ObsError> {
        let s0 = self.ref_state + dx0;
        let states = propagate_through(&s0, self.t0, self.epochs, self.params, self.tol)?;
        let mut out = DVector::zeros(2 * self.epochs.len());
        for (k, state) in states.iter().enumerate() {
            let target_r = Vector3::new(state[0], state[1], state[2]);
            let (alpha, beta) = angles(&target_r, &self.observer_positions[k])?;
            out[2 * k] = alpha;
            out[2 * k + 1] = beta;
        }
        Ok(out)
    }
}

/// Residual `predicted - observed` as raw principal-value differences. The
/// scenario keeps residuals far below a radian; crossing the wrap boundary
/// means the configuration is broken, so it is asserted.
pub fn residual(predicted: &DVector<f64>, observed: &DVector<f64>) -> DVector<f64> {
    let r = predicted - observed;
    assert!(
        r.amax() < std::f64::consts::PI,
        "angle residual exceeds principal value range; observation geometry is inconsistent"
    );
    r
}

/// On-disk observation file: parallel arrays of epochs and angles plus the
/// isotropic noise level that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationFile {
    pub epochs_nd: Vec<f64>,
    pub alpha_rad: Vec<f64>,
    pub beta_rad: Vec<f64>,
    pub noise_std_arcsec: f64,
}

pub const ARCSEC_TO_RAD: f64 = std::f64::consts::PI / 648000.0;

impl ObservationFile {
    pub fn from_set(set: &ObservationSet, noise_std_arcsec: f64) -> Self {
        Self {
            epochs_nd: set.epochs(),
            alpha_rad: set.observations().iter().map(|o| o.alpha).collect(),
            beta_rad: set.observations().iter().map(|o| o.beta).collect(),
            noise_std_arcsec,
        }
    }

    pub fn into_set(&self) -> Result<ObservationSet, ObsError> {
        if self.epochs_nd.len() != self.alpha_rad.len()
            || self.epochs_nd.len() != self.beta_rad.len()
        {
            return Err(ObsError::EpochMismatch {
                expected: self.epochs_nd.len(),
                got: self.alpha_rad.len().min(self.beta_rad.len()),
            });
        }
        let sigma = self.noise_std_arcsec * ARCSEC_TO_RAD;
        let cov = Matrix2::identity() * sigma * sigma;
        let obs = self
            .epochs_nd
            .iter()
            .zip(self.alpha_rad.iter().zip(&self.beta_rad))
            .map(|(&t, (&a, &b))| AngleObs::new(t, a, b, cov))
            .collect::<Result<Vec<_>, _>>()?;
        ObservationSet::new(obs)
    }
}
