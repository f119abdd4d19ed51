//! Comparison detectors: a loosely coupled IMU/GNSS Kalman filter that
//! alarms on the filtered-to-GNSS distance, and a fusion of one full-set
//! location per infrastructure.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Anchor, DetectionRecord, Hypothesis, Trace};
use crate::error::{Error, Result};
use crate::filtering::SigmaMode;
use crate::fusion::ExclusionMode;
use crate::pipeline::{detect_trace, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Acceleration noise spectral density, (m/s²)².
    pub q: f64,
    /// GNSS position noise variance per axis, m².
    pub r: f64,
    /// Alarm when the filtered-to-GNSS distance exceeds this, meters.
    pub distance_threshold: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            q: 2.0,
            r: 25.0,
            distance_threshold: 20.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.r > 0.0 && self.distance_threshold >= 0.0) {
            return Err(Error::Config(
                "kalman q and r must be positive, threshold >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Position and velocity in the local ENU frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub state: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    pub q: f64,
    pub r: f64,
}

fn transition() -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    f
}

/// Maps an acceleration held over one epoch into the state.
fn control() -> Matrix6<f64> {
    let mut b = Matrix6::zeros();
    b.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(0.5 * Matrix3::identity()));
    b.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&Matrix3::identity());
    b
}

fn observation() -> Matrix3x6<f64> {
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    h
}

impl KalmanState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, q: f64, r: f64) -> Self {
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&position);
        state.fixed_rows_mut::<3>(3).copy_from(&velocity);
        let mut covariance = Matrix6::identity();
        covariance
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(r * Matrix3::identity()));
        Self {
            state,
            covariance,
            q,
            r,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into_owned()
    }

    /// Constant-velocity prediction; `accel` acts as a control input.
    pub fn predict(&mut self, accel: Option<Vector3<f64>>) {
        let f = transition();
        let mut u = Vector6::zeros();
        if let Some(a) = accel {
            u.fixed_rows_mut::<3>(3).copy_from(&a);
        }
        self.state = f * self.state + control() * u;
        // Discrete white-noise acceleration.
        let mut g = Matrix6::zeros();
        g.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(0.25 * Matrix3::identity()));
        g.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(0.5 * Matrix3::identity()));
        g.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(0.5 * Matrix3::identity()));
        g.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&Matrix3::identity());
        self.covariance = f * self.covariance * f.transpose() + g * self.q;
        self.symmetrize();
    }

    /// Joseph-form update with a position measurement.
    pub fn update(&mut self, z: Vector3<f64>) {
        let h = observation();
        let r = Matrix3::identity() * self.r;
        let s = h * self.covariance * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else { return };
        let k = self.covariance * h.transpose() * s_inv;
        self.state += k * (z - h * self.state);
        let ikh = Matrix6::identity() - k * h;
        self.covariance = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        self.symmetrize();
    }

    fn symmetrize(&mut self) {
        self.covariance = 0.5 * (self.covariance + self.covariance.transpose());
    }

    pub fn is_psd(&self) -> bool {
        let tol = 1e-9 * self.covariance.trace().abs().max(1.0);
        SymmetricEigen::new(self.covariance)
            .eigenvalues
            .iter()
            .all(|&l| l >= -tol)
    }
}

/// Runs the filter over the trace. The score is the negated distance, so
/// larger distances alarm at any threshold above `−distance`.
pub fn kalman_detect(
    trace: &Trace,
    config: &KalmanConfig,
    labels: Option<&[Hypothesis]>,
) -> Vec<DetectionRecord> {
    let frame = trace.frame();
    let mut kf: Option<KalmanState> = None;
    trace
        .epochs
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let z = frame.to_enu(obs.gnss_reported_position).to_vector();
            let mut flags = Vec::new();
            let motion = obs.motion.as_ref();
            if motion.is_none() {
                flags.push("no_imu".to_string());
            }
            let state = kf.get_or_insert_with(|| {
                let v = motion
                    .map(|m| Vector3::from(m.speed))
                    .unwrap_or_else(Vector3::zeros);
                // The first update below pulls the state onto the first fix.
                KalmanState::new(z - v, v, config.q, config.r)
            });
            state.predict(motion.map(|m| Vector3::from(m.acceleration)));
            state.update(z);
            if !state.is_psd() {
                flags.push("covariance_not_psd".to_string());
            }
            let d = (state.position() - z).norm();
            DetectionRecord {
                epoch: obs.epoch,
                likelihood: None,
                distance: Some(d),
                decision: if d > config.distance_threshold {
                    Hypothesis::H1
                } else {
                    Hypothesis::H0
                },
                recovered_position: None,
                truth_label: labels.and_then(|l| l.get(i).copied()),
                flags,
            }
        })
        .collect()
}

/// The proposed pipeline reduced to one full-set solve per infrastructure,
/// no temporal filtering, DOP-based sigmas and no exclusion.
pub fn location_fusion_config(base: &PipelineConfig) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.subsets.full_set_only = true;
    cfg.filter.enabled = false;
    cfg.filter.sigma_mode = SigmaMode::Dop;
    cfg.detector.exclusion = ExclusionMode::Off;
    cfg
}

pub fn location_fusion_detect(
    trace: &Trace,
    anchors: &[Anchor],
    base: &PipelineConfig,
    labels: Option<&[Hypothesis]>,
) -> Vec<DetectionRecord> {
    detect_trace(trace, anchors, &location_fusion_config(base), labels)
}
