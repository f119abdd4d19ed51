//! Measurement and result types shared by the whole pipeline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geo::{EcefPosition, GeodeticPosition, LocalFrame};

/// Broad infrastructure family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfraClass {
    Gnss,
    Cellular,
    Wifi,
}

impl InfraClass {
    pub fn as_str(self) -> &'static str {
        match self {
            InfraClass::Gnss => "gnss",
            InfraClass::Cellular => "cellular",
            InfraClass::Wifi => "wifi",
        }
    }

    pub fn is_terrestrial(self) -> bool {
        !matches!(self, InfraClass::Gnss)
    }
}

/// Infrastructure family plus an optional sub-label (constellation, radio
/// generation). Written as `class` or `class/label`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InfrastructureKind {
    pub class: InfraClass,
    pub label: String,
}

impl InfrastructureKind {
    pub fn new(class: InfraClass) -> Self {
        Self {
            class,
            label: String::new(),
        }
    }

    pub fn with_label(class: InfraClass, label: impl Into<String>) -> Self {
        Self {
            class,
            label: label.into(),
        }
    }

    pub fn gnss() -> Self {
        Self::new(InfraClass::Gnss)
    }

    pub fn wifi() -> Self {
        Self::new(InfraClass::Wifi)
    }

    pub fn cellular() -> Self {
        Self::new(InfraClass::Cellular)
    }

    /// Drops the sub-label, merging e.g. all constellations into one GNSS
    /// infrastructure.
    pub fn merged(&self) -> Self {
        Self::new(self.class)
    }
}

impl fmt::Display for InfrastructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.label.is_empty() {
            f.write_str(self.class.as_str())
        } else {
            write!(f, "{}/{}", self.class.as_str(), self.label)
        }
    }
}

impl FromStr for InfrastructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (class, label) = match s.split_once('/') {
            Some((c, l)) => (c, l),
            None => (s, ""),
        };
        let class = match class.trim().to_ascii_lowercase().as_str() {
            "gnss" => InfraClass::Gnss,
            "cellular" | "cell" => InfraClass::Cellular,
            "wifi" => InfraClass::Wifi,
            other => {
                return Err(Error::Schema(format!(
                    "unknown infrastructure kind `{other}`"
                )))
            }
        };
        Ok(Self::with_label(class, label.trim()))
    }
}

impl Serialize for InfrastructureKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InfrastructureKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Constellation letter of a RINEX-style satellite id (`G05`, `E11`).
pub fn constellation_of(sat_id: &str) -> &'static str {
    match sat_id.chars().next() {
        Some('G') => "gps",
        Some('E') => "galileo",
        Some('R') => "glonass",
        Some('C') => "beidou",
        Some('J') => "qzss",
        _ => "",
    }
}

/// A ranging source with a known, static position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub kind: InfrastructureKind,
    pub position: EcefPosition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_loss_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RangingKind {
    #[serde(rename = "pseudorange_m")]
    PseudorangeMeters,
    #[serde(rename = "distance_m")]
    DistanceMeters,
    #[serde(rename = "rssi_dbm")]
    RssiDbm,
}

pub const RSSI_MIN_DBM: f64 = -120.0;
pub const RSSI_MAX_DBM: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingMeasurement {
    pub anchor_id: String,
    pub kind: RangingKind,
    pub value: f64,
    pub epoch: u32,
}

impl RangingMeasurement {
    pub fn check(&self) -> Option<String> {
        let ok = match self.kind {
            RangingKind::PseudorangeMeters | RangingKind::DistanceMeters => {
                self.value.is_finite() && self.value > 0.0
            }
            RangingKind::RssiDbm => (RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&self.value),
        };
        (!ok).then(|| {
            format!(
                "{:?} value {} out of range for anchor `{}`",
                self.kind, self.value, self.anchor_id
            )
        })
    }
}

/// Onboard motion data for one epoch. Vectors are in the trace's local ENU
/// axes. The attitude quaternion is carried but not consumed by any stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMeasurement {
    pub epoch: u32,
    pub speed: [f64; 3],
    pub acceleration: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<[f64; 4]>,
}

pub const MAX_SPEED: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochObservation {
    pub epoch: u32,
    pub satellite_positions: BTreeMap<String, EcefPosition>,
    pub rangings: Vec<RangingMeasurement>,
    pub motion: Option<MotionMeasurement>,
    /// The receiver's own all-satellite fix.
    pub gnss_reported_position: EcefPosition,
}

/// A measurement trace with the tangent-plane origin used for horizontal
/// processing and for the motion vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub origin: GeodeticPosition,
    pub epochs: Vec<EpochObservation>,
}

impl Trace {
    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.origin)
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub epoch: u32,
    /// Mixture density at the GNSS fix, per square meter. Absent for
    /// detectors that do not produce a density.
    pub likelihood: Option<f64>,
    /// Filtered-vs-GNSS distance for distance-based detectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    pub decision: Hypothesis,
    pub recovered_position: Option<EcefPosition>,
    pub truth_label: Option<Hypothesis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl DetectionRecord {
    /// Detection statistic with the convention "alarm iff score < threshold".
    /// Densities are used as is, distances are negated.
    pub fn score(&self) -> Option<f64> {
        match (self.likelihood, self.distance) {
            (Some(l), _) => Some(l),
            (None, Some(d)) => Some(-d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the offending observation in the trace (0-based), when
    /// the violation is tied to one.
    pub index: Option<usize>,
    pub epoch: Option<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.index, self.epoch) {
            (Some(i), Some(e)) => write!(f, "[{i}] epoch {e}: {}", self.message),
            (None, Some(e)) => write!(f, "epoch {e}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Checks structural rules; an empty report means the trace is valid.
pub fn validate_trace(trace: &[EpochObservation], anchors: &[Anchor]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids: HashSet<&str> = HashSet::new();
    for a in anchors {
        if !ids.insert(a.id.as_str()) {
            out.push(Violation {
                index: None,
                epoch: None,
                message: format!("duplicate anchor id `{}`", a.id),
            });
        }
        if !a.position.is_finite() {
            out.push(Violation {
                index: None,
                epoch: None,
                message: format!("anchor `{}` has a non-finite position", a.id),
            });
        }
    }

    let mut prev: Option<u32> = None;
    for (i, obs) in trace.iter().enumerate() {
        let mut push = |message: String| {
            out.push(Violation {
                index: Some(i),
                epoch: Some(obs.epoch),
                message,
            })
        };
        if obs.epoch == 0 {
            push("epoch index must start at 1".into());
        }
        if let Some(p) = prev {
            if obs.epoch <= p {
                push(format!("epoch {} does not follow {}", obs.epoch, p));
            }
        }
        prev = Some(prev.map_or(obs.epoch, |p| p.max(obs.epoch)));

        if !obs.gnss_reported_position.is_finite() {
            push("GNSS fix is not finite".into());
        }
        for (id, p) in &obs.satellite_positions {
            if !p.is_plausible() {
                push(format!("satellite `{id}` position implausible"));
            }
        }
        for r in &obs.rangings {
            if !ids.contains(r.anchor_id.as_str())
                && !obs.satellite_positions.contains_key(&r.anchor_id)
            {
                push(format!("unknown anchor `{}`", r.anchor_id));
            }
            if r.epoch != obs.epoch {
                push(format!(
                    "measurement for `{}` tagged epoch {}",
                    r.anchor_id, r.epoch
                ));
            }
            if let Some(msg) = r.check() {
                push(msg);
            }
        }
        if let Some(m) = &obs.motion {
            let s = m.speed;
            let speed = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            if !speed.is_finite() || speed > MAX_SPEED {
                push(format!("speed {speed} m/s outside supported range"));
            }
            if m.acceleration.iter().any(|a| !a.is_finite()) {
                push("acceleration not finite".into());
            }
            if let Some(q) = m.attitude {
                let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    push(format!("attitude quaternion norm {n}"));
                }
            }
        }
    }
    out
}

/// Lookup of anchors by id.
pub fn anchor_index(anchors: &[Anchor]) -> HashMap<&str, &Anchor> {
    anchors.iter().map(|a| (a.id.as_str(), a)).collect()
}
