//! Circular restricted three-body dynamics and adaptive RK78 propagation.
//!
//! The equations of motion are written once over the [`DaScalar`] interface,
//! so the same right-hand side propagates plain states and truncated Taylor
//! polynomials. Polynomial integration turns the flow into a [`FlowExpansion`]
//! whose degree-one block is the state transition matrix; its step control is
//! driven by the constant (nominal) part of the state only.
//!
//! Everything is non-dimensional in the Earth-Moon rotating frame: lengths in
//! LU, velocities in VU, times in TU.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polyalg::{Algebra, DaScalar, PolyError, PolyMap, TruncatedPoly};

/// Non-dimensional state `[x, y, z, vx, vy, vz]` in the rotating frame.
pub type StateVec = Vector6<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynError {
    #[error("singular primary distance ({0}) during propagation")]
    Singular(String),
    #[error("step size underflow at t = {t} (|h| = {h:.3e}); trajectory too stiff or singular")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integration tolerances must be positive")]
    BadTolerance,
    #[error("invalid dynamics parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Earth-Moon rotating-frame constants and unit conversions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrtbpParams {
    /// Non-dimensional mass ratio of the smaller primary.
    pub mu: f64,
    pub length_unit_km: f64,
    pub velocity_unit_km_s: f64,
    pub time_unit_s: f64,
}

impl CrtbpParams {
    pub const EARTH_MOON: CrtbpParams = CrtbpParams {
        mu: 0.0121505839,
        length_unit_km: 384400.0,
        velocity_unit_km_s: 1.02454629434750,
        time_unit_s: 375190.464423878,
    };

    pub fn validate(&self) -> Result<(), DynError> {
        if !(0.0 < self.mu && self.mu < 0.5) {
            return Err(DynError::BadParams(format!("mu = {} outside (0, 0.5)", self.mu)));
        }
        if self.length_unit_km <= 0.0 || self.velocity_unit_km_s <= 0.0 || self.time_unit_s <= 0.0
        {
            return Err(DynError::BadParams("non-positive unit conversion".into()));
        }
        Ok(())
    }

    pub fn km_to_nd(&self, km: f64) -> f64 {
        km / self.length_unit_km
    }

    pub fn m_s_to_nd(&self, m_s: f64) -> f64 {
        m_s * 1e-3 / self.velocity_unit_km_s
    }
}

impl Default for CrtbpParams {
    fn default() -> Self {
        Self::EARTH_MOON
    }
}

/// Apolune state of the linearly stable near-rectilinear halo orbit used as
/// the tracked target in the standard scenario. The z and vy components are
/// differentially corrected (x held fixed) so the orbit is periodic to
/// machine precision; the correction moves the published digits by under
/// 1e-7 nd.
pub const TARGET_APOLUNE: [f64; 6] = [
    1.07523949148639,
    0.0,
    -0.20214609628696542,
    0.0,
    -0.19243161406200832,
    0.0,
];

/// Orbital period (nd) of [`TARGET_APOLUNE`].
pub const TARGET_PERIOD: f64 = 2.26679801435299844;

/// Apolune state of the 9:2 synodic-resonant halo orbit that hosts the
/// observer in the standard scenario.
pub const OBSERVER_APOLUNE: [f64; 6] = [
    1.02202815472411,
    0.0,
    -0.182101352652963,
    0.0,
    -0.103270818092086,
    0.0,
];

/// Orbital period (nd) of [`OBSERVER_APOLUNE`].
pub const OBSERVER_PERIOD: f64 = 1.51119865689808;

/// Rotating-frame equations of motion, generic over the scalar type.
///
/// Returns `(vx, vy, vz, ax, ay, az)`. Errors if either primary distance has
/// a non-positive (constant part of its) square.
pub fn crtbp_rhs<T: DaScalar>(_t: f64, s: &[T; 6], params: &CrtbpParams) -> Result<[T; 6], DynError> {
    let mu = params.mu;
    let (x, y, z, vx, vy, vz) = (&s[0], &s[1], &s[2], &s[3], &s[4], &s[5]);

    let dx1 = x.shift(mu); // x + mu: distance to the larger primary along x
    let dx2 = x.shift(mu - 1.0); // x + mu - 1
    let y2 = y.mul(y);
    let z2 = z.mul(z);
    let r1_sq = dx1.mul(&dx1).add(&y2).add(&z2);
    let r2_sq = dx2.mul(&dx2).add(&y2).add(&z2);
    let inv_r1_cubed = r1_sq
        .powf(-1.5)
        .map_err(|_| DynError::Singular(format!("r1^2 = {}", r1_sq.constant_part())))?;
    let inv_r2_cubed = r2_sq
        .powf(-1.5)
        .map_err(|_| DynError::Singular(format!("r2^2 = {}", r2_sq.constant_part())))?;

    let ax = vy
        .scale(2.0)
        .add(x)
        .sub(&dx1.scale(1.0 - mu).mul(&inv_r1_cubed))
        .sub(&dx2.scale(mu).mul(&inv_r2_cubed));
    let ay = vx
        .scale(-2.0)
        .add(y)
        .sub(&y.scale(1.0 - mu).mul(&inv_r1_cubed))
        .sub(&y.scale(mu).mul(&inv_r2_cubed));
    let az = z
        .scale(-(1.0 - mu))
        .mul(&inv_r1_cubed)
        .sub(&z.scale(mu).mul(&inv_r2_cubed));

    Ok([vx.clone(), vy.clone(), vz.clone(), ax, ay, az])
}

/// Jacobi constant `x^2 + y^2 + 2(1-mu)/r1 + 2mu/r2 - v^2`; conserved along
/// ballistic trajectories.
pub fn jacobi_constant(s: &StateVec, params: &CrtbpParams) -> f64 {
    let mu = params.mu;
    let r1 = ((s[0] + mu).powi(2) + s[1] * s[1] + s[2] * s[2]).sqrt();
    let r2 = ((s[0] + mu - 1.0).powi(2) + s[1] * s[1] + s[2] * s[2]).sqrt();
    let v_sq = s[3] * s[3] + s[4] * s[4] + s[5] * s[5];
    s[0] * s[0] + s[1] * s[1] + 2.0 * (1.0 - mu) / r1 + 2.0 * mu / r2 - v_sq
}

/// Relative/absolute integration tolerance pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Result<Self, DynError> {
        if rel <= 0.0 || abs <= 0.0 {
            return Err(DynError::BadTolerance);
        }
        Ok(Self { rel, abs })
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-12,
            abs: 1e-12,
        }
    }
}

/// Name of the embedded coefficient pair used by [`propagate`]; recorded in
/// campaign metadata so results are traceable to the integrator.
pub const RK_SET_NAME: &str = "fehlberg78";

// Fehlberg's 13-stage embedded 7(8) pair. Propagation uses the 8th-order
// weights; the error estimate is 41/840 (k1 + k11 - k12 - k13) h.
const STAGES: usize = 13;

const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    1.0 / 2.0,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        -25.0 / 108.0,
        0.0,
        0.0,
        125.0 / 108.0,
        -65.0 / 27.0,
        125.0 / 54.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        31.0 / 300.0,
        0.0,
        0.0,
        0.0,
        61.0 / 225.0,
        -2.0 / 9.0,
        13.0 / 900.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2.0,
        0.0,
        0.0,
        -53.0 / 6.0,
        704.0 / 45.0,
        -107.0 / 9.0,
        67.0 / 90.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        3.0 / 205.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -6.0 / 41.0,
        -3.0 / 205.0,
        -3.0 / 41.0,
        3.0 / 41.0,
        6.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

const MIN_STEP: f64 = 1e-14;
const SAFETY: f64 = 0.9;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;

fn weighted_sum<T: DaScalar>(y: &[T; 6], h: f64, ks: &[[T; 6]], weights: &[f64]) -> [T; 6] {
    let mut out = y.clone();
    for (k, &w) in ks.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for i in 0..6 {
            out[i] = out[i].add(&k[i].scale(h * w));
        }
    }
    out
}

/// Adaptive RK78 integration of `rhs` from `t0` to `t1` (either direction).
/// The error estimate and tolerance scaling use only the constant parts, so
/// polynomial states follow the step sequence of their nominal trajectory.
pub fn rk78_integrate<T, F>(rhs: F, y0: &[T; 6], t0: f64, t1: f64, tol: Tolerances) -> Result<[T; 6], DynError>
where
    T: DaScalar,
    F: Fn(f64, &[T; 6]) -> Result<[T; 6], DynError>,
{
    if tol.rel <= 0.0 || tol.abs <= 0.0 {
        return Err(DynError::BadTolerance);
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0.clone());
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0.clone();
    let mut h = dir * (1e-3_f64).min(span.abs());

    while (t1 - t) * dir > 0.0 {
        if h.abs() < MIN_STEP {
            return Err(DynError::StepUnderflow { t, h });
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }

        let mut ks: Vec<[T; 6]> = Vec::with_capacity(STAGES);
        ks.push(rhs(t, &y)?);
        for s in 1..STAGES {
            let stage_y = weighted_sum(&y, h, &ks, &A[s][..s]);
            ks.push(rhs(t + C[s] * h, &stage_y)?);
        }

        let y_next = weighted_sum(&y, h, &ks, &B8);

        // embedded error: 41/840 (k1 + k11 - k12 - k13) h, constant parts only
        let mut err_norm_sq = 0.0;
        for i in 0..6 {
            let e = (ks[0][i].constant_part() + ks[10][i].constant_part()
                - ks[11][i].constant_part()
                - ks[12][i].constant_part())
                * h
                * 41.0
                / 840.0;
            let y_scale = y[i]
                .constant_part()
                .abs()
                .max(y_next[i].constant_part().abs());
            let sc = tol.abs + tol.rel * y_scale;
            err_norm_sq += (e / sc) * (e / sc);
        }
        let err = (err_norm_sq / 6.0).sqrt();

        if err <= 1.0 {
            t += h;
            y = y_next;
        }

        let factor = if err == 0.0 {
            FACTOR_MAX
        } else {
            (SAFETY * err.powf(-1.0 / 8.0)).clamp(FACTOR_MIN, FACTOR_MAX)
        };
        h *= factor;
    }
    Ok(y)
}

/// Propagate a plain state through the rotating-frame dynamics.
pub fn propagate(
    s0: &StateVec,
    t0: f64,
    t1: f64,
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<StateVec, DynError> {
    let y0 = [s0[0], s0[1], s0[2], s0[3], s0[4], s0[5]];
    let y1 = rk78_integrate(|t, y| crtbp_rhs(t, y, params), &y0, t0, t1, tol)?;
    Ok(StateVec::from_row_slice(&y1))
}

/// Propagate through a sequence of epochs, returning the state at each one.
/// Epochs must be monotone in the integration direction.
pub fn propagate_through(
    s0: &StateVec,
    t0: f64,
    epochs: &[f64],
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<Vec<StateVec>, DynError> {
    let mut out = Vec::with_capacity(epochs.len());
    let mut state = *s0;
    let mut t = t0;
    for &target in epochs {
        state = propagate(&state, t, target, params, tol)?;
        t = target;
        out.push(state);
    }
    Ok(out)
}

/// Order-n Taylor expansion of the flow about a reference state.
#[derive(Clone, Debug)]
pub struct FlowExpansion {
    pub map: PolyMap,
    pub ref_state: StateVec,
    pub t0: f64,
    pub t1: f64,
}

impl FlowExpansion {
    /// State transition matrix: the degree-one coefficient block.
    pub fn stm(&self) -> Matrix6<f64> {
        let lin = self.map.linear_block();
        Matrix6::from_fn(|r, c| lin[r][c])
    }

    /// Nominal (zero-deviation) final state.
    pub fn nominal(&self) -> StateVec {
        StateVec::from_vec(self.map.constant_part())
    }

    /// Evaluate the expansion at a concrete initial deviation.
    pub fn eval(&self, dx0: &Vector6<f64>) -> StateVec {
        let delta = [dx0[0], dx0[1], dx0[2], dx0[3], dx0[4], dx0[5]];
        StateVec::from_vec(self.map.eval(&delta))
    }
}

/// Expand the flow to each epoch in `targets` by one continued polynomial
/// integration; the state is seeded as `ref_state + identity deviation`.
pub fn flow_expansions(
    ref_state: &StateVec,
    t0: f64,
    targets: &[f64],
    order: usize,
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<Vec<FlowExpansion>, DynError> {
    let alg = Algebra::new(order)?;
    let mut poly_state: [TruncatedPoly; 6] = std::array::from_fn(|i| {
        alg.constant(ref_state[i]).add(&alg.variable(i))
    });
    let mut out = Vec::with_capacity(targets.len());
    let mut t = t0;
    for &target in targets {
        poly_state = rk78_integrate(
            |tt, y| crtbp_rhs(tt, y, params),
            &poly_state,
            t,
            target,
            tol,
        )?;
        t = target;
        out.push(FlowExpansion {
            map: PolyMap::new(poly_state.to_vec()),
            ref_state: *ref_state,
            t0,
            t1: target,
        });
    }
    Ok(out)
}

/// Single-epoch convenience wrapper around [`flow_expansions`].
pub fn flow_expansion(
    ref_state: &StateVec,
    t0: f64,
    t1: f64,
    order: usize,
    params: &CrtbpParams,
    tol: Tolerances,
) -> Result<FlowExpansion, DynError> {
    Ok(flow_expansions(ref_state, t0, &[t1], order, params, tol)?
        .pop()
        .expect("one target"))
}

/// Most measurement-sensitive maneuver direction: the right singular vector
/// of the largest singular value of the position-to-initial-velocity block of
/// the state transition matrix. The sign is fixed so the component of largest
/// magnitude is positive.
pub fn stm_and_cgt_direction(flow: &FlowExpansion) -> Result<Vector3<f64>, DynError> {
    let stm = flow.stm();
    let phi_rv = Matrix3::from_fn(|r, c| stm[(r, c + 3)]);
    if phi_rv.amax() == 0.0 {
        return Err(DynError::BadParams(
            "degenerate geometry: zero position/velocity sensitivity".into(),
        ));
    }
    let svd = phi_rv.svd(true, true);
    let mut best = 0;
    for i in 1..3 {
        if svd.singular_values[i] > svd.singular_values[best] {
            best = i;
        }
    }
    let v_t = svd.v_t.expect("v requested");
    let mut dir = Vector3::new(v_t[(best, 0)], v_t[(best, 1)], v_t[(best, 2)]);
    let mut lead = 0;
    for i in 1..3 {
        if dir[i].abs() > dir[lead].abs() {
            lead = i;
        }
    }
    if dir[lead] < 0.0 {
        dir = -dir;
    }
    Ok(dir.normalize())
}

/// Mirror of the rotating-frame symmetry `y -> -y, t -> -t`.
pub fn mirror_state(s: &StateVec) -> StateVec {
    StateVec::from_row_slice(&[s[0], -s[1], s[2], -s[3], s[4], -s[5]])
}
