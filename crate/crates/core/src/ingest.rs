//! Readers and writers for the trace (JSON lines) and anchor database (CSV)
//! formats.
//!
//! Trace files hold one JSON object per line. The first record is the
//! tangent-plane origin; every other record carries a time stamp `t` in
//! seconds from the trace start and is binned to epoch
//! `floor(t / epoch_duration) + 1`:
//!
//! ```text
//! {"type":"origin","latitude":59.4036,"longitude":17.9441,"height":30.0}
//! {"type":"fix","t":0.0,"position":[x,y,z]}
//! {"type":"sat","t":0.0,"id":"G05","position":[x,y,z]}
//! {"type":"range","t":0.0,"anchor":"G05","kind":"pseudorange_m","value":2.1e7}
//! {"type":"motion","t":0.25,"speed":[e,n,u],"acceleration":[e,n,u]}
//! ```
//!
//! Anchor files are CSV with the header
//! `id,kind,lat,lon,height,tx_power_dbm,path_loss_exponent`; the last two
//! columns may be empty.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Anchor, EpochObservation, InfrastructureKind, MotionMeasurement, RangingKind,
    RangingMeasurement, Trace,
};
use crate::error::{Error, Result};
use crate::geo::{ecef_to_geodetic, geodetic_to_ecef, EcefPosition, GeodeticPosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    Latest,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "latest" => Ok(Self::Latest),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub epoch_duration: f64,
    pub aggregation: Aggregation,
    pub rssi_floor_dbm: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            epoch_duration: 1.0,
            aggregation: Aggregation::Mean,
            rssi_floor_dbm: crate::datamodel::RSSI_MIN_DBM,
        }
    }
}

impl IngestConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epoch_duration > 0.0) {
            return Err(Error::Config("epoch_duration must be positive".into()));
        }
        Ok(())
    }

    fn epoch_of(&self, t: f64) -> Result<u32> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!("time stamp {t} is negative")));
        }
        Ok((t / self.epoch_duration + 1e-9).floor() as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TraceRecord {
    Origin {
        latitude: f64,
        longitude: f64,
        height: f64,
    },
    Fix {
        t: f64,
        position: [f64; 3],
    },
    Sat {
        t: f64,
        id: String,
        position: [f64; 3],
    },
    Range {
        t: f64,
        anchor: String,
        kind: RangingKind,
        value: f64,
    },
    Motion {
        t: f64,
        speed: [f64; 3],
        acceleration: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attitude: Option<[f64; 4]>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub trace: Trace,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct EpochBuilder {
    fix: Option<EcefPosition>,
    sats: BTreeMap<String, EcefPosition>,
    rangings: Vec<RangingMeasurement>,
    motion: Vec<([f64; 3], [f64; 3], Option<[f64; 4]>)>,
}

pub fn parse_trace(path: impl AsRef<Path>, config: &IngestConfig) -> Result<ParsedTrace> {
    let file = File::open(path)?;
    read_trace(BufReader::new(file), config)
}

pub fn read_trace(reader: impl BufRead, config: &IngestConfig) -> Result<ParsedTrace> {
    config.validate()?;
    let mut origin = None;
    let mut epochs: BTreeMap<u32, EpochBuilder> = BTreeMap::new();
    let mut warnings = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(trimmed).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Schema(format!("line {lineno}: {e}")),
            _ => Error::Parse {
                line: lineno,
                message: e.to_string(),
            },
        })?;
        let at = |t: f64| {
            config.epoch_of(t).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })
        };
        match rec {
            TraceRecord::Origin {
                latitude,
                longitude,
                height,
            } => {
                let g = GeodeticPosition::new(latitude, longitude, height).map_err(|e| {
                    Error::Parse {
                        line: lineno,
                        message: e.to_string(),
                    }
                })?;
                origin = Some(g);
            }
            TraceRecord::Fix { t, position } => {
                epochs.entry(at(t)?).or_default().fix = Some(position.into());
            }
            TraceRecord::Sat { t, id, position } => {
                epochs
                    .entry(at(t)?)
                    .or_default()
                    .sats
                    .insert(id, position.into());
            }
            TraceRecord::Range {
                t,
                anchor,
                kind,
                mut value,
            } => {
                let epoch = at(t)?;
                if kind == RangingKind::RssiDbm && value < config.rssi_floor_dbm {
                    let msg = format!(
                        "line {lineno}: RSSI {value} dBm for `{anchor}` clipped to {}",
                        config.rssi_floor_dbm
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                    value = config.rssi_floor_dbm;
                }
                epochs
                    .entry(epoch)
                    .or_default()
                    .rangings
                    .push(RangingMeasurement {
                        anchor_id: anchor,
                        kind,
                        value,
                        epoch,
                    });
            }
            TraceRecord::Motion {
                t,
                speed,
                acceleration,
                attitude,
            } => {
                epochs
                    .entry(at(t)?)
                    .or_default()
                    .motion
                    .push((speed, acceleration, attitude));
            }
        }
    }

    let origin = origin.ok_or_else(|| Error::Schema("missing `origin` record".into()))?;
    let mut out = Vec::with_capacity(epochs.len());
    let mut expected = 1;
    for (epoch, b) in epochs {
        if epoch != expected {
            return Err(Error::Schema(format!(
                "epochs not dense: expected {expected}, found {epoch}"
            )));
        }
        expected += 1;
        let fix = b
            .fix
            .ok_or_else(|| Error::Schema(format!("epoch {epoch} has no `fix` record")))?;
        let motion =
            aggregate_motion(&b.motion, config.aggregation).map(|(s, a, q)| MotionMeasurement {
                epoch,
                speed: s,
                acceleration: a,
                attitude: q,
            });
        out.push(EpochObservation {
            epoch,
            satellite_positions: b.sats,
            rangings: b.rangings,
            motion,
            gnss_reported_position: fix,
        });
    }
    Ok(ParsedTrace {
        trace: Trace {
            origin,
            epochs: out,
        },
        warnings,
    })
}

type MotionSample = ([f64; 3], [f64; 3], Option<[f64; 4]>);

fn aggregate_motion(samples: &[MotionSample], how: Aggregation) -> Option<MotionSample> {
    let last = samples.last()?;
    let attitude = samples.iter().rev().find_map(|s| s.2);
    let reduce = |pick: fn(&MotionSample) -> [f64; 3]| -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let mut vals: Vec<f64> = samples.iter().map(|s| pick(s)[k]).collect();
            *o = match how {
                Aggregation::Latest => *vals.last().unwrap(),
                Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                Aggregation::Median => {
                    vals.sort_by(f64::total_cmp);
                    let n = vals.len();
                    if n % 2 == 1 {
                        vals[n / 2]
                    } else {
                        0.5 * (vals[n / 2 - 1] + vals[n / 2])
                    }
                }
            };
        }
        out
    };
    if how == Aggregation::Latest {
        return Some((last.0, last.1, attitude));
    }
    Some((reduce(|s| s.0), reduce(|s| s.1), attitude))
}

/// Writes a trace in the JSON-lines format. Every record of epoch `k` is
/// stamped `t = (k - 1) * epoch_duration`.
pub fn write_trace(mut w: impl Write, trace: &Trace, epoch_duration: f64) -> Result<()> {
    let o = trace.origin;
    let mut emit = |r: &TraceRecord| -> Result<()> {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    emit(&TraceRecord::Origin {
        latitude: o.latitude,
        longitude: o.longitude,
        height: o.height,
    })?;
    for obs in &trace.epochs {
        let t = f64::from(obs.epoch - 1) * epoch_duration;
        emit(&TraceRecord::Fix {
            t,
            position: obs.gnss_reported_position.to_array(),
        })?;
        for (id, p) in &obs.satellite_positions {
            emit(&TraceRecord::Sat {
                t,
                id: id.clone(),
                position: p.to_array(),
            })?;
        }
        for r in &obs.rangings {
            emit(&TraceRecord::Range {
                t,
                anchor: r.anchor_id.clone(),
                kind: r.kind,
                value: r.value,
            })?;
        }
        if let Some(m) = &obs.motion {
            emit(&TraceRecord::Motion {
                t,
                speed: m.speed,
                acceleration: m.acceleration,
                attitude: m.attitude,
            })?;
        }
    }
    Ok(())
}

pub fn save_trace(path: impl AsRef<Path>, trace: &Trace, epoch_duration: f64) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write_trace(&mut w, trace, epoch_duration)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AnchorRow {
    id: String,
    kind: String,
    lat: f64,
    lon: f64,
    height: f64,
    tx_power_dbm: Option<f64>,
    path_loss_exponent: Option<f64>,
}

const ANCHOR_COLUMNS: [&str; 7] = [
    "id",
    "kind",
    "lat",
    "lon",
    "height",
    "tx_power_dbm",
    "path_loss_exponent",
];

pub fn parse_anchors(path: impl AsRef<Path>) -> Result<Vec<Anchor>> {
    read_anchors(File::open(path)?)
}

pub fn read_anchors(reader: impl Read) -> Result<Vec<Anchor>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ANCHOR_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema(format!("anchor file lacks column `{col}`")));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<AnchorRow>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(row.id.clone()) {
            return Err(Error::DuplicateAnchor(row.id));
        }
        let kind: InfrastructureKind = row.kind.parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let g = GeodeticPosition::new(row.lat, row.lon, row.height).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(Anchor {
            id: row.id,
            kind,
            position: geodetic_to_ecef(g),
            tx_power_dbm: row.tx_power_dbm,
            path_loss_exponent: row.path_loss_exponent,
        });
    }
    Ok(out)
}

pub fn write_anchors(w: impl Write, anchors: &[Anchor]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for a in anchors {
        let g = ecef_to_geodetic(a.position);
        wtr.serialize(AnchorRow {
            id: a.id.clone(),
            kind: a.kind.to_string(),
            lat: g.latitude,
            lon: g.longitude,
            height: g.height,
            tx_power_dbm: a.tx_power_dbm,
            path_loss_exponent: a.path_loss_exponent,
        })?;
    }
    if anchors.is_empty() {
        wtr.write_record(ANCHOR_COLUMNS)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_anchors(path: impl AsRef<Path>, anchors: &[Anchor]) -> Result<()> {
    write_anchors(File::create(path)?, anchors)
}
