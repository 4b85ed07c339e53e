//! Maneuver indicators built on the confidence curve.
//!
//! For a state confidence level `alpha_x`, the recursive polynomial
//! optimizer produces the statistic `M_z` of the closest reachable
//! measurement, and `alpha_z = F_chi2(M_z, 2N)` is the observation's own
//! confidence level. The single indicator flags a maneuver when
//! `alpha_z > alpha_x` (strict). The integrated indicator integrates
//! `alpha_z` over `alpha_x` in [0, 1] by the trapezoidal rule and flags when
//! the integral `P` reaches the decision threshold (closed comparison,
//! default 0.5). `P` leans toward 1 for maneuvers and 0 for ballistic
//! motion, but it is not a calibrated probability.
//!
//! The curve `alpha_z(alpha_x)` is non-increasing because the confidence
//! regions are nested; every curve constructed here enforces that within a
//! small slack and is rejected otherwise rather than silently accepted.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::observation::{MeasurementExpansion, MeasurementOracle, ObservationSet};
use crate::rpo::{closest_point_special, rpo_solve, RpoError, RpoOptions};
use crate::stats::{chi2_cdf, ConfidenceBudget, GaussianState, MahalanobisConvention, StatsError};

#[derive(Debug, Error)]
pub enum CdmiError {
    #[error("optimizer did not converge at alpha_x = {alpha_x} after {iterations} iterations")]
    RpoDidNotConverge { alpha_x: f64, iterations: usize },
    #[error("confidence level {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("grid step {0} must evenly divide both 1 and the mandatory 0.5 node")]
    BadGridStep(f64),
    #[error("adaptive sampling thresholds must be positive")]
    BadEpsilon,
    #[error("adaptive sampling exceeded {0} samples without meeting its thresholds")]
    SampleCap(usize),
    #[error(
        "confidence curve is not non-increasing: alpha_z({x1}) = {z1} but alpha_z({x0}) = {z0}"
    )]
    NonMonotoneCurve { x0: f64, z0: f64, x1: f64, z1: f64 },
    #[error(transparent)]
    Rpo(#[from] RpoError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Hard cap on adaptive samples per curve.
pub const ADAPTIVE_SAMPLE_CAP: usize = 64;

/// Slack allowed when checking that a sampled curve is non-increasing.
pub const MONOTONE_SLACK: f64 = 1e-6;

/// One evaluated point of the confidence curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveSample {
    pub alpha_x: f64,
    pub alpha_z: f64,
    pub m_z: f64,
    pub solver_iterations: usize,
}

/// Samples of the confidence curve, sorted by `alpha_x`.
#[derive(Debug, Clone, Serialize)]
pub struct CdmiCurve {
    samples: Vec<CurveSample>,
}

impl CdmiCurve {
    /// Wrap samples, requiring strictly increasing `alpha_x` and a
    /// non-increasing `alpha_z` within [`MONOTONE_SLACK`].
    pub fn from_samples(samples: Vec<CurveSample>) -> Result<Self, CdmiError> {
        for pair in samples.windows(2) {
            assert!(
                pair[1].alpha_x > pair[0].alpha_x,
                "curve samples must be sorted by alpha_x"
            );
            if pair[1].alpha_z > pair[0].alpha_z + MONOTONE_SLACK {
                return Err(CdmiError::NonMonotoneCurve {
                    x0: pair[0].alpha_x,
                    z0: pair[0].alpha_z,
                    x1: pair[1].alpha_x,
                    z1: pair[1].alpha_z,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[CurveSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Composite trapezoid over the (possibly non-uniform) samples.
    pub fn trapezoid(&self) -> f64 {
        let s = &self.samples;
        let mut p = 0.0;
        for pair in s.windows(2) {
            p += 0.5 * (pair[0].alpha_z + pair[1].alpha_z) * (pair[1].alpha_x - pair[0].alpha_x);
        }
        p
    }

    /// CSV rows `case_id,alpha_x,alpha_z,m_z,iterations`, full precision.
    pub fn to_csv_rows(&self, case_id: &str) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{case_id},{:.16e},{:.16e},{:.16e},{}",
                s.alpha_x, s.alpha_z, s.m_z, s.solver_iterations
            );
        }
        out
    }
}

/// CSV header matching [`CdmiCurve::to_csv_rows`].
pub const CURVE_CSV_HEADER: &str = "case_id,alpha_x,alpha_z,m_z,iterations";

/// Everything one detection needs: the measurement polynomial, the observed
/// angles, the prior, and the full nonlinear prediction oracle.
pub struct DetectionCase<'a> {
    pub meas: &'a MeasurementExpansion,
    pub obs: &'a ObservationSet,
    pub prior: &'a GaussianState,
    pub oracle: &'a dyn MeasurementOracle,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionOptions {
    pub rpo: RpoOptions,
    pub convention: MahalanobisConvention,
    /// Closed threshold on the integrated indicator.
    pub threshold: f64,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        Self {
            rpo: RpoOptions::default(),
            convention: MahalanobisConvention::Half,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    Single,
    IntegratedDense,
    IntegratedAdaptive,
}

/// Deterministic effort counters; wall time is kept out of serialized output
/// so identical runs produce identical files.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EffortStats {
    pub rpo_solves: usize,
    pub rpo_iterations: usize,
    pub curve_samples: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Outcome of one detection.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub mode: DetectionMode,
    pub flag: bool,
    /// Integrated indicator; absent in single mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Confidence level used; present in single mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_x_used: Option<f64>,
    pub threshold: f64,
    pub curve: CdmiCurve,
    pub effort: EffortStats,
}

/// Evaluate one point of the confidence curve. Endpoints use their closed
/// forms; interior points run the optimizer and a non-converged solve aborts
/// the detection with a diagnostic.
pub fn alpha_z_at(
    alpha_x: f64,
    case: &DetectionCase,
    opts: &DetectionOptions,
    effort: &mut EffortStats,
) -> Result<CurveSample, CdmiError> {
    if !(0.0..=1.0).contains(&alpha_x) {
        return Err(CdmiError::BadAlpha(alpha_x));
    }
    let dof = 2 * case.obs.len() as u32;
    effort.curve_samples += 1;
    if alpha_x == 0.0 || alpha_x == 1.0 {
        let (_, m_z) = closest_point_special(alpha_x, case.meas, case.obs, opts.convention)?;
        return Ok(CurveSample {
            alpha_x,
            alpha_z: chi2_cdf(m_z, dof)?,
            m_z,
            solver_iterations: 0,
        });
    }
    let budget = ConfidenceBudget::new(alpha_x)?;
    let result = rpo_solve(
        case.meas,
        case.obs,
        case.prior,
        &budget,
        opts.convention,
        &opts.rpo,
        case.oracle,
    )?;
    effort.rpo_solves += 1;
    effort.rpo_iterations += result.iterations;
    if !result.converged {
        return Err(CdmiError::RpoDidNotConverge {
            alpha_x,
            iterations: result.iterations,
        });
    }
    Ok(CurveSample {
        alpha_x,
        alpha_z: chi2_cdf(result.m_z, dof)?,
        m_z: result.m_z,
        solver_iterations: result.iterations,
    })
}

/// Single-confidence indicator: flag iff `alpha_z > alpha_x` (strict). The
/// `alpha_x = 1` case short-circuits to false: a fully untrusted prior
/// explains any observation.
pub fn cdmi_single(
    alpha_x: f64,
    case: &DetectionCase,
    opts: &DetectionOptions,
) -> Result<DetectionReport, CdmiError> {
    let started = std::time::Instant::now();
    let mut effort = EffortStats::default();
    let sample = alpha_z_at(alpha_x, case, opts, &mut effort)?;
    let flag = sample.alpha_z > alpha_x;
    effort.wall_time_s = started.elapsed().as_secs_f64();
    Ok(DetectionReport {
        mode: DetectionMode::Single,
        flag,
        p: None,
        alpha_x_used: Some(alpha_x),
        threshold: opts.threshold,
        curve: CdmiCurve::from_samples(vec![sample])?,
        effort,
    })
}

/// Integrated indicator on a uniform grid including both endpoints. The step
/// must divide 1 evenly and keep 0.5 on the grid.
pub fn integrate_dense(
    case: &DetectionCase,
    grid_step: f64,
    opts: &DetectionOptions,
) -> Result<DetectionReport, CdmiError> {
    let started = std::time::Instant::now();
    let intervals = 1.0 / grid_step;
    let n = intervals.round();
    if grid_step <= 0.0 || (intervals - n).abs() > 1e-9 || (n as usize) % 2 != 0 {
        return Err(CdmiError::BadGridStep(grid_step));
    }
    let n = n as usize;
    let mut effort = EffortStats::default();
    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let alpha_x = if k == n { 1.0 } else { k as f64 * grid_step };
        samples.push(alpha_z_at(alpha_x, case, opts, &mut effort)?);
    }
    let curve = CdmiCurve::from_samples(samples)?;
    let p = curve.trapezoid();
    effort.wall_time_s = started.elapsed().as_secs_f64();
    Ok(DetectionReport {
        mode: DetectionMode::IntegratedDense,
        flag: p >= opts.threshold,
        p: Some(p),
        alpha_x_used: None,
        threshold: opts.threshold,
        curve,
        effort,
    })
}

/// Integrated indicator with adaptive sampling. Seeds {0, 0.5, 1}; then,
/// repeatedly, the consecutive triple with the largest linear-interpolation
/// error at its middle point is examined: stop if that error is at most
/// `eps1`, or if both sub-intervals of the triple are narrower than `eps2`;
/// otherwise bisect the sub-interval with the larger `alpha_z` change (ties
/// to the left) and evaluate the midpoint.
pub fn integrate_adaptive(
    case: &DetectionCase,
    eps1: f64,
    eps2: f64,
    opts: &DetectionOptions,
) -> Result<DetectionReport, CdmiError> {
    let started = std::time::Instant::now();
    if eps1 <= 0.0 || eps2 <= 0.0 {
        return Err(CdmiError::BadEpsilon);
    }
    let mut effort = EffortStats::default();
    let mut samples = vec![
        alpha_z_at(0.0, case, opts, &mut effort)?,
        alpha_z_at(0.5, case, opts, &mut effort)?,
        alpha_z_at(1.0, case, opts, &mut effort)?,
    ];

    loop {
        // worst linear-interpolation error over interior points
        let mut worst: Option<(usize, f64)> = None;
        for i in 1..samples.len() - 1 {
            let (a, b, c) = (&samples[i - 1], &samples[i], &samples[i + 1]);
            let t = (b.alpha_x - a.alpha_x) / (c.alpha_x - a.alpha_x);
            let predicted = a.alpha_z + t * (c.alpha_z - a.alpha_z);
            let e = (predicted - b.alpha_z).abs();
            if worst.map_or(true, |(_, we)| e > we) {
                worst = Some((i, e));
            }
        }
        let (i, e) = worst.expect("at least one interior sample");
        if e <= eps1 {
            break;
        }
        let left_width = samples[i].alpha_x - samples[i - 1].alpha_x;
        let right_width = samples[i + 1].alpha_x - samples[i].alpha_x;
        if left_width <= eps2 && right_width <= eps2 {
            break;
        }
        if samples.len() >= ADAPTIVE_SAMPLE_CAP {
            return Err(CdmiError::SampleCap(ADAPTIVE_SAMPLE_CAP));
        }
        let left_drop = (samples[i].alpha_z - samples[i - 1].alpha_z).abs();
        let right_drop = (samples[i + 1].alpha_z - samples[i].alpha_z).abs();
        let (lo, hi) = if left_drop >= right_drop {
            (i - 1, i)
        } else {
            (i, i + 1)
        };
        let mid = 0.5 * (samples[lo].alpha_x + samples[hi].alpha_x);
        let sample = alpha_z_at(mid, case, opts, &mut effort)?;
        let pos = samples
            .binary_search_by(|s| s.alpha_x.partial_cmp(&mid).unwrap())
            .unwrap_err();
        samples.insert(pos, sample);
    }

    let curve = CdmiCurve::from_samples(samples)?;
    let p = curve.trapezoid();
    effort.wall_time_s = started.elapsed().as_secs_f64();
    Ok(DetectionReport {
        mode: DetectionMode::IntegratedAdaptive,
        flag: p >= opts.threshold,
        p: Some(p),
        alpha_x_used: None,
        threshold: opts.threshold,
        curve,
        effort,
    })
}

/// Accuracy of a completed campaign at each candidate threshold. Input rows
/// are `(is_maneuver_class, integrated_indicator)` per run.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdAccuracy {
    pub threshold: f64,
    pub accuracy_non_maneuver: f64,
    pub accuracy_maneuver: f64,
    pub accuracy_overall: f64,
}

pub fn threshold_sweep(records: &[(bool, f64)], thresholds: &[f64]) -> Vec<ThresholdAccuracy> {
    assert!(
        !records.is_empty(),
        "threshold sweep requires a completed campaign"
    );
    thresholds
        .iter()
        .map(|&threshold| {
            let mut counts = [0usize; 2];
            let mut correct = [0usize; 2];
            for &(is_maneuver, p) in records {
                let class = usize::from(is_maneuver);
                counts[class] += 1;
                let flagged = p >= threshold;
                if flagged == is_maneuver {
                    correct[class] += 1;
                }
            }
            let acc = |c: usize| {
                if counts[c] == 0 {
                    f64::NAN
                } else {
                    correct[c] as f64 / counts[c] as f64
                }
            };
            ThresholdAccuracy {
                threshold,
                accuracy_non_maneuver: acc(0),
                accuracy_maneuver: acc(1),
                accuracy_overall: (correct[0] + correct[1]) as f64
                    / (counts[0] + counts[1]) as f64,
            }
        })
        .collect()
}
