//! Scenario simulator: ground-truth trajectory, anchor layout, benign
//! measurements, and uncoordinated or coordinated spoofing on top.
//!
//! All randomness comes from seeded ChaCha streams, one per concern, so the
//! benign part of a scenario does not change when only the attack does.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Anchor, EpochObservation, Hypothesis, InfraClass, InfrastructureKind, MotionMeasurement,
    RangingKind, RangingMeasurement, Trace, RSSI_MAX_DBM, RSSI_MIN_DBM,
};
use crate::error::{Error, Result};
use crate::geo::{geodetic_to_ecef, EcefPosition, EnuPosition, GeodeticPosition, LocalFrame};
use crate::positioning::{rssi_to_distance, solve_gnss_wls, PathLossModel, SolverOptions};

/// Mean orbital radius of a MEO navigation satellite, meters.
const ORBIT_RADIUS: f64 = 26_560_000.0;
/// Sidereal half-day orbital period, seconds.
const ORBIT_PERIOD: f64 = 43_082.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Static,
    ConstantVelocity {
        east: f64,
        north: f64,
    },
    /// Constant-speed walk with a smoothly wandering heading.
    Walk {
        speed: f64,
        max_turn_rate_deg: f64,
    },
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig::Walk {
            speed: 1.4,
            max_turn_rate_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub pseudorange_sigma: f64,
    pub rssi_sigma_db: f64,
    pub distance_sigma: f64,
    pub imu_speed_sigma: f64,
    pub imu_accel_sigma: f64,
    /// Per-epoch step of the receiver clock-bias random walk, meters.
    pub clock_walk_sigma: f64,
    /// The clock bias is reflected back inside `±clock_bound`, meters.
    pub clock_bound: f64,
    pub clock_initial: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pseudorange_sigma: 2.0,
            rssi_sigma_db: 2.0,
            distance_sigma: 15.0,
            imu_speed_sigma: 0.05,
            imu_accel_sigma: 0.02,
            clock_walk_sigma: 3.0,
            clock_bound: 3000.0,
            clock_initial: 1200.0,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            pseudorange_sigma: 0.0,
            rssi_sigma_db: 0.0,
            distance_sigma: 0.0,
            imu_speed_sigma: 0.0,
            imu_accel_sigma: 0.0,
            clock_walk_sigma: 0.0,
            clock_bound: 0.0,
            clock_initial: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.pseudorange_sigma,
            self.rssi_sigma_db,
            self.distance_sigma,
            self.imu_speed_sigma,
            self.imu_accel_sigma,
            self.clock_walk_sigma,
            self.clock_bound,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(
                "noise sigmas and clock bound must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WifiLayout {
    pub enabled: bool,
    /// Path length between consecutive access points, meters.
    pub spacing: f64,
    /// Lateral offset band from the path, meters.
    pub min_offset: f64,
    pub max_offset: f64,
    pub max_height: f64,
    pub visibility_radius: f64,
    /// At most this many nearest access points are heard per epoch.
    pub max_visible: usize,
    pub path_loss: PathLossModel,
}

impl Default for WifiLayout {
    fn default() -> Self {
        Self {
            enabled: true,
            spacing: 25.0,
            min_offset: 5.0,
            max_offset: 30.0,
            max_height: 10.0,
            visibility_radius: 70.0,
            max_visible: 6,
            path_loss: PathLossModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellularLayout {
    pub count: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub height: f64,
}

impl Default for CellularLayout {
    fn default() -> Self {
        Self {
            count: 4,
            min_distance: 400.0,
            max_distance: 1200.0,
            height: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatelliteLayout {
    pub count: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
}

impl Default for SatelliteLayout {
    fn default() -> Self {
        Self {
            count: 8,
            min_elevation_deg: 20.0,
            max_elevation_deg: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    #[default]
    None,
    Uncoordinated,
    Coordinated,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "uncoordinated" => Ok(Self::Uncoordinated),
            "coordinated" => Ok(Self::Coordinated),
            other => Err(Error::Config(format!("unknown attack mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    /// Linear rise to the peak at mid-window, linear fall back to zero.
    #[default]
    Triangular,
    RaisedCosine,
}

/// What the ramp offset measures in a coordinated attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampReference {
    /// Distance from the truth to the spoof target the falsified ranges are
    /// consistent with.
    #[default]
    Target,
    /// Horizontal deviation of the all-satellite fix. The target is pushed
    /// out along the same direction until the fix follows the ramp, which
    /// with few spoofed satellites puts the target well beyond the ramp.
    DerivedFix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RogueAp {
    /// Physical transmitter location in the scenario's ENU frame.
    pub east: f64,
    pub north: f64,
    /// Anchor ids it impersonates; the victim uses their database positions.
    pub mimicked_ids: Vec<String>,
    pub start: u32,
    /// Exclusive.
    pub end: u32,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub mode: AttackMode,
    pub gnss_spoofed_ids: Vec<String>,
    pub terrestrial_spoofed_ids: Vec<String>,
    pub start: u32,
    /// Exclusive.
    pub end: u32,
    pub peak: f64,
    pub shape: RampShape,
    pub ramp_reference: RampReference,
    /// Horizontal direction of the spoof offset, degrees clockwise from
    /// north. When absent the offset points away from the spoofed
    /// satellites, lengthening their pseudoranges.
    pub direction_deg: Option<f64>,
    /// Magnitude band of uncoordinated pseudorange and distance offsets, meters.
    pub offset_min: f64,
    pub offset_max: f64,
    /// Magnitude band of uncoordinated RSSI offsets, dB.
    pub rssi_offset_min: f64,
    pub rssi_offset_max: f64,
    pub rogue_aps: Vec<RogueAp>,
    /// Place this many rogue APs automatically (ignored when `rogue_aps`
    /// is given).
    pub auto_rogue: Option<AutoRogue>,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            mode: AttackMode::None,
            gnss_spoofed_ids: Vec::new(),
            terrestrial_spoofed_ids: Vec::new(),
            start: 1,
            end: 1,
            peak: 145.0,
            shape: RampShape::Triangular,
            ramp_reference: RampReference::Target,
            direction_deg: None,
            offset_min: 30.0,
            offset_max: 300.0,
            rssi_offset_min: 10.0,
            rssi_offset_max: 30.0,
            rogue_aps: Vec::new(),
            auto_rogue: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoRogue {
    pub count: usize,
    pub ids_per_rogue: usize,
    /// Epochs each rogue transmits.
    pub duration: u32,
    pub first_start: u32,
    /// Start offset between consecutive rogues.
    pub stagger: u32,
    /// Mimicked access points are chosen at least this far from the rogue.
    pub min_mimic_distance: f64,
    pub tx_power_dbm: f64,
}

impl Default for AutoRogue {
    fn default() -> Self {
        Self {
            count: 3,
            ids_per_rogue: 2,
            duration: 100,
            first_start: 1,
            stagger: 10,
            min_mimic_distance: 250.0,
            tx_power_dbm: -40.0,
        }
    }
}

impl AttackSpec {
    /// Offset magnitude `k` epochs into the window. The triangular profile
    /// is `peak · min(k + 1, n − k) / ⌈n / 2⌉`, which starts and ends one
    /// step above zero and reaches `peak` at mid-window.
    pub fn ramp(&self, epoch: u32) -> f64 {
        if epoch < self.start || epoch >= self.end {
            return 0.0;
        }
        let n = (self.end - self.start) as f64;
        let k = (epoch - self.start) as f64;
        let half = (n / 2.0).ceil();
        match self.shape {
            RampShape::Triangular => self.peak * (k + 1.0).min(n - k) / half,
            RampShape::RaisedCosine => self.peak * 0.5 * (1.0 - (2.0 * PI * (k + 0.5) / n).cos()),
        }
    }

    pub fn in_window(&self, epoch: u32) -> bool {
        epoch >= self.start && epoch < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub epochs: u32,
    pub origin: GeodeticPosition,
    pub trajectory: TrajectoryConfig,
    pub satellites: SatelliteLayout,
    pub wifi: WifiLayout,
    pub cellular: CellularLayout,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub attack: AttackSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            origin: GeodeticPosition {
                latitude: 59.4036,
                longitude: 17.9441,
                height: 30.0,
            },
            trajectory: TrajectoryConfig::default(),
            satellites: SatelliteLayout::default(),
            wifi: WifiLayout::default(),
            cellular: CellularLayout::default(),
            noise: NoiseConfig::default(),
            seed: 1,
            attack: AttackSpec::default(),
        }
    }
}

impl ScenarioConfig {
    /// Walking trace of 1030 epochs with a 130-epoch coordinated ramp to
    /// 145 m on two of eight satellites and three rogue access points
    /// emitting 600 spoofed RSSI values.
    pub fn rogue_ramp(seed: u64) -> Self {
        Self {
            epochs: 1030,
            seed,
            attack: AttackSpec {
                mode: AttackMode::Coordinated,
                gnss_spoofed_ids: vec!["G02".into(), "G05".into()],
                start: 600,
                end: 730,
                peak: 145.0,
                ramp_reference: RampReference::DerivedFix,
                auto_rogue: Some(AutoRogue {
                    first_start: 560,
                    ..AutoRogue::default()
                }),
                seed: seed.wrapping_add(1000),
                ..AttackSpec::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("scenario needs at least one epoch".into()));
        }
        self.origin.validate()?;
        self.noise.validate()?;
        self.wifi.path_loss.validate()?;
        let a = &self.attack;
        if a.mode != AttackMode::None && (a.start < 1 || a.end > self.epochs + 1 || a.start > a.end)
        {
            return Err(Error::Config(format!(
                "attack window [{}, {}) outside epochs 1..={}",
                a.start, a.end, self.epochs
            )));
        }
        if !(a.offset_min >= 0.0 && a.offset_max >= a.offset_min) {
            return Err(Error::Config(
                "attack offset band must satisfy 0 <= min <= max".into(),
            ));
        }
        if self.satellites.count > 32 {
            return Err(Error::Config("at most 32 satellites".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub trace: Trace,
    pub anchors: Vec<Anchor>,
    pub truth_positions: Vec<EcefPosition>,
    pub truth_labels: Vec<Hypothesis>,
    /// `(epoch, anchor id)` of every falsified measurement.
    pub spoofed_measurement_ids: BTreeSet<(u32, String)>,
    /// Epochs with at least one rogue access point transmitting.
    pub rogue_epochs: BTreeSet<u32>,
    /// Spoofing target per epoch for coordinated attacks.
    pub spoof_targets: Vec<Option<EcefPosition>>,
}

impl LabeledTrace {
    pub fn spoofed_rssi_count(&self) -> usize {
        let rssi: BTreeSet<(u32, &str)> = self
            .trace
            .epochs
            .iter()
            .flat_map(|o| {
                o.rangings
                    .iter()
                    .filter(|m| m.kind == RangingKind::RssiDbm)
                    .map(move |m| (o.epoch, m.anchor_id.as_str()))
            })
            .collect();
        self.spoofed_measurement_ids
            .iter()
            .filter(|(t, id)| rssi.contains(&(*t, id.as_str())))
            .count()
    }

    pub fn truth_records(&self) -> Vec<TruthRecord> {
        let mut spoofed: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for (t, id) in &self.spoofed_measurement_ids {
            spoofed.entry(*t).or_default().push(id.clone());
        }
        self.trace
            .epochs
            .iter()
            .enumerate()
            .map(|(i, o)| TruthRecord {
                epoch: o.epoch,
                label: self.truth_labels[i],
                position: self.truth_positions[i].to_array(),
                spoof_target: self.spoof_targets[i].map(|p| p.to_array()),
                rogue_active: self.rogue_epochs.contains(&o.epoch),
                spoofed: spoofed.remove(&o.epoch).unwrap_or_default(),
            })
            .collect()
    }

    /// Rebuilds a labeled trace from a trace file, its anchors and the truth
    /// sidecar.
    pub fn from_parts(trace: Trace, anchors: Vec<Anchor>, truth: &[TruthRecord]) -> Result<Self> {
        if truth.len() != trace.len() {
            return Err(Error::InvalidInput(format!(
                "truth sidecar has {} epochs, trace has {}",
                truth.len(),
                trace.len()
            )));
        }
        let mut spoofed = BTreeSet::new();
        let mut rogue = BTreeSet::new();
        for r in truth {
            for id in &r.spoofed {
                spoofed.insert((r.epoch, id.clone()));
            }
            if r.rogue_active {
                rogue.insert(r.epoch);
            }
        }
        Ok(Self {
            truth_positions: truth
                .iter()
                .map(|r| EcefPosition::from(r.position))
                .collect(),
            truth_labels: truth.iter().map(|r| r.label).collect(),
            spoof_targets: truth
                .iter()
                .map(|r| r.spoof_target.map(EcefPosition::from))
                .collect(),
            spoofed_measurement_ids: spoofed,
            rogue_epochs: rogue,
            trace,
            anchors,
        })
    }
}

/// One line of the truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub epoch: u32,
    pub label: Hypothesis,
    /// ECEF, meters.
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoof_target: Option<[f64; 3]>,
    #[serde(default)]
    pub rogue_active: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spoofed: Vec<String>,
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Truth states in ENU: positions, velocities and accelerations with
/// `p(t+1) = p + v + ½a`, `v(t+1) = v + a` exactly.
fn trajectory(cfg: &ScenarioConfig) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let n = cfg.epochs as usize;
    let mut rng = stream(cfg.seed, 1);
    let mut v_series = Vec::with_capacity(n + 1);
    match cfg.trajectory {
        TrajectoryConfig::Static => v_series.resize(n + 1, Vector3::zeros()),
        TrajectoryConfig::ConstantVelocity { east, north } => {
            v_series.resize(n + 1, Vector3::new(east, north, 0.0))
        }
        TrajectoryConfig::Walk {
            speed,
            max_turn_rate_deg,
        } => {
            let max_turn = max_turn_rate_deg.to_radians();
            let mut heading: f64 = rng.random_range(0.0..2.0 * PI);
            let mut turn = 0.0_f64;
            for _ in 0..=n {
                v_series.push(Vector3::new(
                    speed * heading.sin(),
                    speed * heading.cos(),
                    0.0,
                ));
                turn =
                    (0.9 * turn + gauss(&mut rng, 1.5_f64.to_radians())).clamp(-max_turn, max_turn);
                heading += turn;
            }
        }
    }
    let mut p = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut pos = Vector3::zeros();
    for t in 0..n {
        let acc = v_series[t + 1] - v_series[t];
        p.push(pos);
        v.push(v_series[t]);
        a.push(acc);
        pos += v_series[t] + 0.5 * acc;
    }
    (p, v, a)
}

struct Satellite {
    id: String,
    a: Vector3<f64>,
    b: Vector3<f64>,
}

impl Satellite {
    fn at(&self, t: f64) -> Vector3<f64> {
        let th = 2.0 * PI * t / ORBIT_PERIOD;
        ORBIT_RADIUS * (self.a * th.cos() + self.b * th.sin())
    }
}

fn satellites(cfg: &ScenarioConfig, frame: &LocalFrame) -> Vec<Satellite> {
    let mut rng = stream(cfg.seed, 2);
    let n = cfg.satellites.count;
    let origin = geodetic_to_ecef(cfg.origin).to_vector();
    let offset: f64 = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let az = offset + 2.0 * PI * (i as f64 + rng.random_range(-0.25..0.25)) / n as f64;
            let (lo, hi) = (
                cfg.satellites.min_elevation_deg,
                cfg.satellites.max_elevation_deg,
            );
            // Alternate low and high so every azimuth sector has vertical spread.
            let frac = if i % 2 == 0 {
                rng.random_range(0.0..0.5)
            } else {
                rng.random_range(0.5..1.0)
            };
            let el = (lo + (hi - lo) * frac).to_radians();
            let los_enu = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            let u = frame.rotate_to_ecef(&los_enu);
            // Intersect the line of sight with the orbit sphere.
            let bq = origin.dot(&u);
            let s = -bq + (bq * bq - origin.norm_squared() + ORBIT_RADIUS * ORBIT_RADIUS).sqrt();
            let a = (origin + u * s).normalize();
            let r = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let b = (r - a * a.dot(&r)).normalize();
            Satellite {
                id: format!("G{:02}", i + 1),
                a,
                b,
            }
        })
        .collect()
}

fn wifi_anchors(
    cfg: &ScenarioConfig,
    frame: &LocalFrame,
    path: &[Vector3<f64>],
) -> Vec<(Anchor, Vector3<f64>)> {
    let w = &cfg.wifi;
    if !w.enabled || path.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(cfg.seed, 3);
    let mut out = Vec::new();
    let mut travelled = w.spacing / 2.0;
    let mut side = 1.0;
    let mut push = |p: Vector3<f64>,
                    dir: Vector2<f64>,
                    rng: &mut ChaCha8Rng,
                    out: &mut Vec<(Anchor, Vector3<f64>)>| {
        let normal = Vector2::new(-dir.y, dir.x);
        let off = rng.random_range(w.min_offset..=w.max_offset.max(w.min_offset));
        let h = rng.random_range(0.0..=w.max_height.max(0.0));
        let along = rng.random_range(-0.25..0.25) * w.spacing;
        let e = p.x + normal.x * off * side + dir.x * along;
        let n = p.y + normal.y * off * side + dir.y * along;
        side = -side;
        let enu = Vector3::new(e, n, h);
        let id = format!("ap{:03}", out.len() + 1);
        out.push((
            Anchor {
                id,
                kind: InfrastructureKind::wifi(),
                position: frame.to_ecef(EnuPosition::from_vector(&enu)),
                tx_power_dbm: Some(w.path_loss.reference_power_dbm),
                path_loss_exponent: Some(w.path_loss.exponent),
            },
            enu,
        ));
    };
    let mut dir = Vector2::new(0.0, 1.0);
    for win in path.windows(2) {
        let step = win[1] - win[0];
        let len = step.xy().norm();
        if len > 1e-9 {
            dir = step.xy() / len;
        }
        travelled += len;
        while travelled >= w.spacing {
            travelled -= w.spacing;
            push(win[1], dir, &mut rng, &mut out);
        }
    }
    if out.is_empty() {
        // Static or very short traces: a ring around the start.
        let k = w.max_visible.max(3);
        for i in 0..k {
            let ang = 2.0 * PI * i as f64 / k as f64;
            push(
                path[0],
                Vector2::new(ang.cos(), ang.sin()),
                &mut rng,
                &mut out,
            );
        }
    }
    out
}

fn cell_anchors(cfg: &ScenarioConfig, frame: &LocalFrame) -> Vec<(Anchor, Vector3<f64>)> {
    let c = &cfg.cellular;
    let mut rng = stream(cfg.seed, 4);
    let base: f64 = rng.random_range(0.0..2.0 * PI);
    (0..c.count)
        .map(|i| {
            let az = base + 2.0 * PI * (i as f64 + rng.random_range(-0.2..0.2)) / c.count as f64;
            let r = rng.random_range(c.min_distance..=c.max_distance.max(c.min_distance));
            let enu = Vector3::new(r * az.sin(), r * az.cos(), c.height);
            (
                Anchor {
                    id: format!("bs{:02}", i + 1),
                    kind: InfrastructureKind::cellular(),
                    position: frame.to_ecef(EnuPosition::from_vector(&enu)),
                    tx_power_dbm: None,
                    path_loss_exponent: None,
                },
                enu,
            )
        })
        .collect()
}

fn clip_rssi(v: f64) -> f64 {
    v.clamp(RSSI_MIN_DBM, RSSI_MAX_DBM)
}

/// Solves the all-satellite GNSS fix of an observation.
pub fn gnss_fix(obs: &EpochObservation, guess: EcefPosition) -> Result<EcefPosition> {
    let mut sats = Vec::new();
    let mut rhos = Vec::new();
    for m in &obs.rangings {
        if m.kind == RangingKind::PseudorangeMeters {
            if let Some(p) = obs.satellite_positions.get(&m.anchor_id) {
                sats.push(*p);
                rhos.push(m.value);
            }
        }
    }
    Ok(solve_gnss_wls(&sats, &rhos, guess, &SolverOptions::default())?.position)
}

pub fn synthesize_benign(cfg: &ScenarioConfig) -> Result<LabeledTrace> {
    cfg.validate()?;
    let frame = LocalFrame::new(cfg.origin);
    let (path, vel, acc) = trajectory(cfg);
    let sats = satellites(cfg, &frame);
    let wifi = wifi_anchors(cfg, &frame, &path);
    let cells = cell_anchors(cfg, &frame);
    if sats.len() < 4 {
        log::warn!("{} satellites: fewer than a GNSS fix needs", sats.len());
    }
    let mut rng = stream(cfg.seed, 5);
    let noise = cfg.noise;
    let mut clock = noise.clock_initial;
    let mut epochs = Vec::with_capacity(cfg.epochs as usize);
    let mut truth = Vec::with_capacity(cfg.epochs as usize);
    let mut prev_fix = geodetic_to_ecef(cfg.origin);
    for (i, p_enu) in path.iter().enumerate() {
        let epoch = i as u32 + 1;
        let p = frame.to_ecef(EnuPosition::from_vector(p_enu));
        let pv = p.to_vector();
        let t = i as f64;
        let mut sat_pos = BTreeMap::new();
        let mut rangings = Vec::new();
        for s in &sats {
            let sp = s.at(t);
            sat_pos.insert(s.id.clone(), EcefPosition::from_vector(&sp));
            rangings.push(RangingMeasurement {
                anchor_id: s.id.clone(),
                kind: RangingKind::PseudorangeMeters,
                value: (sp - pv).norm() + clock + gauss(&mut rng, noise.pseudorange_sigma),
                epoch,
            });
        }
        let mut near: Vec<(f64, &Anchor)> = wifi
            .iter()
            .map(|(a, e)| ((e - p_enu).norm(), a))
            .filter(|(d, _)| *d <= cfg.wifi.visibility_radius)
            .collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.id.cmp(&y.1.id)));
        near.truncate(cfg.wifi.max_visible);
        near.sort_by(|x, y| x.1.id.cmp(&y.1.id));
        for (_, a) in near {
            let d = a.position.distance(p).max(0.5);
            let model = cfg.wifi.path_loss.for_anchor(a);
            rangings.push(RangingMeasurement {
                anchor_id: a.id.clone(),
                kind: RangingKind::RssiDbm,
                value: clip_rssi(model.rssi_at(d) + gauss(&mut rng, noise.rssi_sigma_db)),
                epoch,
            });
        }
        for (a, _) in &cells {
            let d = a.position.distance(p);
            rangings.push(RangingMeasurement {
                anchor_id: a.id.clone(),
                kind: RangingKind::DistanceMeters,
                value: (d + gauss(&mut rng, noise.distance_sigma)).max(1.0),
                epoch,
            });
        }
        let motion = MotionMeasurement {
            epoch,
            speed: [0, 1, 2].map(|k| vel[i][k] + gauss(&mut rng, noise.imu_speed_sigma)),
            acceleration: [0, 1, 2].map(|k| acc[i][k] + gauss(&mut rng, noise.imu_accel_sigma)),
            attitude: None,
        };
        let mut obs = EpochObservation {
            epoch,
            satellite_positions: sat_pos,
            rangings,
            motion: Some(motion),
            gnss_reported_position: p,
        };
        obs.gnss_reported_position = gnss_fix(&obs, prev_fix).unwrap_or(prev_fix);
        prev_fix = obs.gnss_reported_position;
        epochs.push(obs);
        truth.push(p);

        clock += gauss(&mut rng, noise.clock_walk_sigma);
        if noise.clock_bound > 0.0 {
            // Reflect into the band.
            if clock > noise.clock_bound {
                clock = 2.0 * noise.clock_bound - clock;
            } else if clock < -noise.clock_bound {
                clock = -2.0 * noise.clock_bound - clock;
            }
        }
    }
    let anchors: Vec<Anchor> = wifi.into_iter().chain(cells).map(|(a, _)| a).collect();
    let n = epochs.len();
    Ok(LabeledTrace {
        trace: Trace {
            origin: cfg.origin,
            epochs,
        },
        anchors,
        truth_positions: truth,
        truth_labels: vec![Hypothesis::H0; n],
        spoofed_measurement_ids: BTreeSet::new(),
        rogue_epochs: BTreeSet::new(),
        spoof_targets: vec![None; n],
    })
}

fn relabel_and_refix(trace: &mut LabeledTrace, gnss_ids: &BTreeSet<String>) {
    for (i, obs) in trace.trace.epochs.iter_mut().enumerate() {
        let spoofed_gnss = gnss_ids.iter().any(|id| {
            trace
                .spoofed_measurement_ids
                .contains(&(obs.epoch, id.clone()))
        });
        if spoofed_gnss {
            trace.truth_labels[i] = Hypothesis::H1;
            let guess = obs.gnss_reported_position;
            if let Ok(fix) = gnss_fix(obs, guess) {
                obs.gnss_reported_position = fix;
            }
        }
    }
}

fn check_ids(trace: &LabeledTrace, spec: &AttackSpec) -> Result<BTreeSet<String>> {
    let sats: BTreeSet<String> = trace
        .trace
        .epochs
        .first()
        .map(|o| o.satellite_positions.keys().cloned().collect())
        .unwrap_or_default();
    for id in &spec.gnss_spoofed_ids {
        if !sats.contains(id) {
            return Err(Error::Config(format!(
                "spoofed satellite `{id}` is not in the scenario"
            )));
        }
    }
    for id in &spec.terrestrial_spoofed_ids {
        if !trace.anchors.iter().any(|a| &a.id == id) {
            return Err(Error::Config(format!(
                "spoofed anchor `{id}` is not in the scenario"
            )));
        }
    }
    Ok(spec.gnss_spoofed_ids.iter().cloned().collect())
}

pub fn apply_uncoordinated_attack(
    mut trace: LabeledTrace,
    spec: &AttackSpec,
) -> Result<LabeledTrace> {
    let gnss_ids = check_ids(&trace, spec)?;
    let mut rng = stream(spec.seed, 11);
    let spoofed: BTreeSet<&str> = spec
        .gnss_spoofed_ids
        .iter()
        .chain(&spec.terrestrial_spoofed_ids)
        .map(String::as_str)
        .collect();
    let draw = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let mag = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    };
    for obs in trace.trace.epochs.iter_mut() {
        if !spec.in_window(obs.epoch) {
            continue;
        }
        for m in obs.rangings.iter_mut() {
            if !spoofed.contains(m.anchor_id.as_str()) {
                continue;
            }
            match m.kind {
                RangingKind::PseudorangeMeters => {
                    m.value += draw(spec.offset_min, spec.offset_max, &mut rng)
                }
                RangingKind::DistanceMeters => {
                    m.value = (m.value + draw(spec.offset_min, spec.offset_max, &mut rng)).max(1.0)
                }
                RangingKind::RssiDbm => {
                    m.value = clip_rssi(
                        m.value + draw(spec.rssi_offset_min, spec.rssi_offset_max, &mut rng),
                    )
                }
            }
            trace
                .spoofed_measurement_ids
                .insert((obs.epoch, m.anchor_id.clone()));
        }
    }
    relabel_and_refix(&mut trace, &gnss_ids);
    Ok(trace)
}

/// Horizontal unit vector (ENU) of the spoof offset.
fn spoof_direction(trace: &LabeledTrace, spec: &AttackSpec, frame: &LocalFrame) -> Vector3<f64> {
    if let Some(deg) = spec.direction_deg {
        let r = deg.to_radians();
        return Vector3::new(r.sin(), r.cos(), 0.0);
    }
    let Some(obs) = trace.trace.epochs.first() else {
        return Vector3::new(0.0, 1.0, 0.0);
    };
    let p = trace.truth_positions[0].to_vector();
    let mut sum = Vector3::zeros();
    for id in &spec.gnss_spoofed_ids {
        if let Some(s) = obs.satellite_positions.get(id) {
            sum += frame.rotate_to_enu(&(s.to_vector() - p).normalize());
        }
    }
    let h = Vector3::new(-sum.x, -sum.y, 0.0);
    if h.norm() > 1e-9 {
        h.normalize()
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    }
}

/// Automatic rogue placement: each rogue sits beside the truth path at the
/// middle of its window and mimics the access points farthest from it.
pub fn place_rogues(trace: &LabeledTrace, auto: &AutoRogue, frame: &LocalFrame) -> Vec<RogueAp> {
    let n = trace.trace.len() as u32;
    let mut used: BTreeSet<String> = BTreeSet::new();
    let aps: Vec<(&Anchor, Vector3<f64>)> = trace
        .anchors
        .iter()
        .filter(|a| a.kind.class == InfraClass::Wifi)
        .map(|a| (a, frame.to_enu(a.position).to_vector()))
        .collect();
    let mut out = Vec::new();
    for r in 0..auto.count as u32 {
        let start = (auto.first_start + r * auto.stagger).max(1);
        if start > n {
            break;
        }
        let end = (start + auto.duration).min(n + 1);
        let mid = ((start + end) / 2).clamp(1, n) as usize - 1;
        let at = frame.to_enu(trace.truth_positions[mid]).to_vector() + Vector3::new(8.0, 8.0, 0.0);
        let mut cands: Vec<(f64, &Anchor)> = aps
            .iter()
            .map(|(a, e)| ((e - at).xy().norm(), *a))
            .filter(|(_, a)| !used.contains(&a.id))
            .collect();
        // Nearest of the sufficiently distant ones first, then the farthest
        // of the rest; ties by id.
        let far = |d: f64| d >= auto.min_mimic_distance;
        cands.sort_by(|x, y| {
            far(y.0)
                .cmp(&far(x.0))
                .then_with(|| {
                    if far(x.0) {
                        x.0.total_cmp(&y.0)
                    } else {
                        y.0.total_cmp(&x.0)
                    }
                })
                .then_with(|| x.1.id.cmp(&y.1.id))
        });
        let ids: Vec<String> = cands
            .iter()
            .take(auto.ids_per_rogue)
            .map(|(_, a)| a.id.clone())
            .collect();
        used.extend(ids.iter().cloned());
        out.push(RogueAp {
            east: at.x,
            north: at.y,
            mimicked_ids: ids,
            start,
            end,
            tx_power_dbm: auto.tx_power_dbm,
        });
    }
    out
}

fn apply_rogues(
    trace: &mut LabeledTrace,
    rogues: &[RogueAp],
    frame: &LocalFrame,
    seed: u64,
    rssi_sigma: f64,
) {
    let mut rng = stream(seed, 13);
    for (i, obs) in trace.trace.epochs.iter_mut().enumerate() {
        let p = trace.truth_positions[i];
        for rogue in rogues {
            if obs.epoch < rogue.start || obs.epoch >= rogue.end {
                continue;
            }
            let pos = frame.to_ecef(EnuPosition::new(rogue.east, rogue.north, 0.0));
            for id in &rogue.mimicked_ids {
                let Some((_, model)) = anchor_model(&trace.anchors, id) else {
                    continue;
                };
                let model = PathLossModel {
                    reference_power_dbm: rogue.tx_power_dbm,
                    ..model
                };
                let value = clip_rssi(
                    model.rssi_at(pos.distance(p).max(0.5)) + gauss(&mut rng, rssi_sigma),
                );
                match obs.rangings.iter_mut().find(|m| &m.anchor_id == id) {
                    Some(m) => m.value = value,
                    None => obs.rangings.push(RangingMeasurement {
                        anchor_id: id.clone(),
                        kind: RangingKind::RssiDbm,
                        value,
                        epoch: obs.epoch,
                    }),
                }
                trace
                    .spoofed_measurement_ids
                    .insert((obs.epoch, id.clone()));
                trace.rogue_epochs.insert(obs.epoch);
            }
        }
    }
}

fn anchor_model(anchors: &[Anchor], id: &str) -> Option<(EcefPosition, PathLossModel)> {
    anchors
        .iter()
        .find(|a| a.id == id)
        .map(|a| (a.position, PathLossModel::default().for_anchor(a)))
}

/// Horizontal fix deviation per meter of target offset along `dir`.
/// Pseudoranges are near-linear in position at satellite distances, so one
/// probe suffices.
fn fix_gain(
    obs: &EpochObservation,
    pc: EcefPosition,
    dir: Vector3<f64>,
    spoofed: &BTreeSet<String>,
    frame: &LocalFrame,
) -> f64 {
    const PROBE: f64 = 100.0;
    let target = EcefPosition::from_vector(&(pc.to_vector() + dir * PROBE));
    let mut probe = obs.clone();
    for m in probe.rangings.iter_mut() {
        if spoofed.contains(&m.anchor_id) {
            if let Some(s) = obs.satellite_positions.get(&m.anchor_id) {
                m.value += s.distance(target) - s.distance(pc);
            }
        }
    }
    let base = obs.gnss_reported_position;
    let moved = gnss_fix(&probe, base).unwrap_or(base);
    let (a, b) = (frame.to_enu(base), frame.to_enu(moved));
    let gain = (a.east - b.east).hypot(a.north - b.north) / PROBE;
    // Geometry where the spoofed satellites barely move the fix.
    gain.max(1e-3)
}

pub fn apply_coordinated_attack(
    mut trace: LabeledTrace,
    spec: &AttackSpec,
    rssi_sigma: f64,
) -> Result<LabeledTrace> {
    let gnss_ids = check_ids(&trace, spec)?;
    let frame = trace.trace.frame();
    let dir = frame.rotate_to_ecef(&spoof_direction(&trace, spec, &frame));
    let terrestrial: BTreeSet<&str> = spec
        .terrestrial_spoofed_ids
        .iter()
        .map(String::as_str)
        .collect();
    let models: BTreeMap<String, (EcefPosition, PathLossModel)> = spec
        .terrestrial_spoofed_ids
        .iter()
        .filter_map(|id| anchor_model(&trace.anchors, id).map(|m| (id.clone(), m)))
        .collect();
    for (i, obs) in trace.trace.epochs.iter_mut().enumerate() {
        if !spec.in_window(obs.epoch) {
            continue;
        }
        let pc = trace.truth_positions[i];
        let offset = match spec.ramp_reference {
            RampReference::Target => spec.ramp(obs.epoch),
            RampReference::DerivedFix => {
                spec.ramp(obs.epoch) / fix_gain(obs, pc, dir, &gnss_ids, &frame)
            }
        };
        let target = EcefPosition::from_vector(&(pc.to_vector() + dir * offset));
        trace.spoof_targets[i] = Some(target);
        for m in obs.rangings.iter_mut() {
            let id = m.anchor_id.as_str();
            if gnss_ids.contains(id) {
                let Some(s) = obs.satellite_positions.get(id) else {
                    continue;
                };
                m.value += s.distance(target) - s.distance(pc);
            } else if terrestrial.contains(id) {
                let Some((a, model)) = models.get(id) else {
                    continue;
                };
                match m.kind {
                    RangingKind::DistanceMeters => m.value += a.distance(target) - a.distance(pc),
                    RangingKind::RssiDbm => {
                        m.value = clip_rssi(
                            m.value + model.rssi_at(a.distance(target).max(0.5))
                                - model.rssi_at(a.distance(pc).max(0.5)),
                        )
                    }
                    RangingKind::PseudorangeMeters => {}
                }
            } else {
                continue;
            }
            trace
                .spoofed_measurement_ids
                .insert((obs.epoch, m.anchor_id.clone()));
        }
    }
    let rogues = if !spec.rogue_aps.is_empty() {
        spec.rogue_aps.clone()
    } else if let Some(auto) = &spec.auto_rogue {
        place_rogues(&trace, auto, &frame)
    } else {
        Vec::new()
    };
    apply_rogues(&mut trace, &rogues, &frame, spec.seed, rssi_sigma);
    relabel_and_refix(&mut trace, &gnss_ids);
    Ok(trace)
}

/// Benign synthesis followed by the configured attack.
pub fn simulate(cfg: &ScenarioConfig) -> Result<LabeledTrace> {
    let benign = synthesize_benign(cfg)?;
    match cfg.attack.mode {
        AttackMode::None => Ok(benign),
        AttackMode::Uncoordinated => apply_uncoordinated_attack(benign, &cfg.attack),
        AttackMode::Coordinated => {
            apply_coordinated_attack(benign, &cfg.attack, cfg.noise.rssi_sigma_db)
        }
    }
}

/// Distance from the receiver to an anchor implied by an RSSI reading.
pub fn implied_distance(rssi: f64, anchor: &Anchor) -> f64 {
    rssi_to_distance(rssi, &PathLossModel::default().for_anchor(anchor))
}
