//! Equal-weight mixture of diagonal 2-D Gaussians over filtered subset
//! locations in the local east/north plane, the density test at the GNSS
//! fix, and recovery of the mixture mode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::datamodel::Hypothesis;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub subset_index: usize,
    pub mean: [f64; 2],
    pub sigma: [f64; 2],
    /// Up coordinate carried along for lifting the mode back to 3-D.
    pub up: f64,
}

impl Component {
    pub fn density(&self, p: [f64; 2]) -> f64 {
        let mut d = 1.0;
        for k in 0..2 {
            let z = (p[k] - self.mean[k]) / self.sigma[k];
            d *= (-0.5 * z * z).exp() / (self.sigma[k] * (2.0 * PI).sqrt());
        }
        d
    }

    fn log_density(&self, p: [f64; 2]) -> f64 {
        (0..2)
            .map(|k| {
                let z = (p[k] - self.mean[k]) / self.sigma[k];
                -0.5 * z * z - self.sigma[k].ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub epoch: u32,
    pub components: Vec<Component>,
    pub excluded_count: usize,
    pub flags: Vec<String>,
}

impl MixtureModel {
    pub fn new(epoch: u32, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput(
                "a mixture needs at least one component".into(),
            ));
        }
        if components.iter().any(|c| {
            !(c.sigma[0] > 0.0 && c.sigma[1] > 0.0) || !c.mean.iter().all(|m| m.is_finite())
        }) {
            return Err(Error::InvalidInput(
                "mixture components need finite means and positive sigmas".into(),
            ));
        }
        Ok(Self {
            epoch,
            components,
            excluded_count: 0,
            flags: Vec::new(),
        })
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.components.len() as f64
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Log of [`mixture_density`], finite far into the tails.
    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_density(p)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            - (self.components.len() as f64).ln()
    }
}

pub fn mixture_density(model: &MixtureModel, p: [f64; 2]) -> f64 {
    model.components.iter().map(|c| c.density(p)).sum::<f64>() * model.weight()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    Off,
    /// Drop components far from the GNSS fix.
    FromGnss,
    /// Drop components far from the mode of the unexcluded mixture.
    #[default]
    FromPeak,
}

impl std::str::FromStr for ExclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Self::Off),
            "from_gnss" | "from-gnss" | "gnss" => Ok(Self::FromGnss),
            "from_peak" | "from-peak" | "peak" => Ok(Self::FromPeak),
            other => Err(Error::Config(format!("unknown exclusion mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Density threshold Λ, per square meter.
    pub lambda: f64,
    pub exclusion: ExclusionMode,
    pub exclusion_distance: f64,
    /// Re-estimate sigmas over the kept components after exclusion.
    pub recompute_sigma: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            exclusion: ExclusionMode::FromPeak,
            exclusion_distance: 150.0,
            recompute_sigma: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.exclusion_distance > 0.0) {
            return Err(Error::Config("exclusion distance must be positive".into()));
        }
        Ok(())
    }
}

/// Which components lie within `distance` of `reference` (horizontal).
pub fn within(components: &[Component], reference: [f64; 2], distance: f64) -> Vec<bool> {
    components
        .iter()
        .map(|c| (c.mean[0] - reference[0]).hypot(c.mean[1] - reference[1]) <= distance)
        .collect()
}

/// Mixture over the components within `distance` of `reference`, with
/// weights renormalized over what is kept. Falls back to every component
/// (flagged) when nothing would remain.
pub fn build_mixture(
    epoch: u32,
    components: Vec<Component>,
    reference: Option<[f64; 2]>,
    distance: f64,
) -> Result<MixtureModel> {
    let Some(r) = reference else {
        return MixtureModel::new(epoch, components);
    };
    let keep = within(&components, r, distance);
    let n = components.len();
    let kept: Vec<Component> = components
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(c, _)| *c)
        .collect();
    if kept.is_empty() {
        let mut m = MixtureModel::new(epoch, components)?;
        m.flags.push("exclusion_fallback".into());
        return Ok(m);
    }
    let mut m = MixtureModel::new(epoch, kept)?;
    m.excluded_count = n - m.len();
    Ok(m)
}

/// `(density at the fix, decision)`; H1 iff the density is below Λ.
pub fn decide(model: &MixtureModel, gnss: [f64; 2], lambda: f64) -> (f64, Hypothesis) {
    let f = mixture_density(model, gnss);
    let h = if f < lambda {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    };
    (f, h)
}

const MODE_STEP_TOL: f64 = 1e-7;
const MODE_MAX_ITER: usize = 500;
/// Starts within one grid cell of this fraction of the smallest sigma share
/// an ascent.
const START_CELL: f64 = 1.0;
/// Ascents are run from at most this many starts, densest first.
const MAX_ASCENTS: usize = 8;

/// Per-component constants for repeated evaluation.
struct Kernel {
    mean: [f64; 2],
    prec: [f64; 2],
    log_norm: f64,
}

struct Evaluator {
    kernels: Vec<Kernel>,
    logs: Vec<f64>,
}

impl Evaluator {
    fn new(model: &MixtureModel) -> Self {
        let kernels = model
            .components
            .iter()
            .map(|c| Kernel {
                mean: c.mean,
                prec: [
                    1.0 / (c.sigma[0] * c.sigma[0]),
                    1.0 / (c.sigma[1] * c.sigma[1]),
                ],
                log_norm: -(c.sigma[0] * c.sigma[1]).ln() - (2.0 * PI).ln(),
            })
            .collect::<Vec<_>>();
        let logs = vec![0.0; kernels.len()];
        Self { kernels, logs }
    }

    /// Unnormalized log density (the `1/L` weight is dropped) at `x`;
    /// leaves the per-component log terms in `self.logs`.
    fn log_f(&mut self, x: [f64; 2]) -> (f64, f64) {
        let mut max = f64::NEG_INFINITY;
        for (l, k) in self.logs.iter_mut().zip(&self.kernels) {
            let dx = x[0] - k.mean[0];
            let dy = x[1] - k.mean[1];
            *l = k.log_norm - 0.5 * (dx * dx * k.prec[0] + dy * dy * k.prec[1]);
            max = max.max(*l);
        }
        let sum: f64 = self.logs.iter().map(|l| (l - max).exp()).sum();
        (max + sum.ln(), max)
    }

    /// Mean-shift target and Newton step at `x`, plus `log f(x)`.
    fn step(&mut self, x: [f64; 2]) -> ([f64; 2], Option<[f64; 2]>, f64) {
        let (lf, max) = self.log_f(x);
        let mut num = [0.0; 2];
        let mut den = [0.0; 2];
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        let mut total = 0.0;
        for (l, k) in self.logs.iter().zip(&self.kernels) {
            let w = (l - max).exp();
            total += w;
            let d = [
                (k.mean[0] - x[0]) * k.prec[0],
                (k.mean[1] - x[1]) * k.prec[1],
            ];
            for i in 0..2 {
                num[i] += w * k.prec[i] * k.mean[i];
                den[i] += w * k.prec[i];
                g[i] += w * d[i];
                for j in 0..2 {
                    h[i][j] += w * d[i] * d[j];
                }
                h[i][i] -= w * k.prec[i];
            }
        }
        let shift = [num[0] / den[0], num[1] / den[1]];
        // Gradient and Hessian of log f.
        let g = [g[0] / total, g[1] / total];
        let mut hl = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hl[i][j] = h[i][j] / total - g[i] * g[j];
            }
        }
        let det = hl[0][0] * hl[1][1] - hl[0][1] * hl[1][0];
        let newton = (hl[0][0] < 0.0 && det > 0.0).then(|| {
            [
                x[0] - (hl[1][1] * g[0] - hl[0][1] * g[1]) / det,
                x[1] - (-hl[1][0] * g[0] + hl[0][0] * g[1]) / det,
            ]
        });
        (shift, newton, lf)
    }
}

/// Hill climb from `start`: Newton steps where the log density is locally
/// concave and the step improves it, mean-shift steps otherwise. Mean shift
/// never decreases the density, so the climb is monotone.
fn ascend(ev: &mut Evaluator, start: [f64; 2]) -> ([f64; 2], f64) {
    let mut x = start;
    for _ in 0..MODE_MAX_ITER {
        let (shift, newton, cur) = ev.step(x);
        let next = match newton {
            Some(n) if n.iter().all(|v| v.is_finite()) && ev.log_f(n).0 > cur => n,
            _ => shift,
        };
        let moved = (next[0] - x[0]).hypot(next[1] - x[1]);
        x = next;
        if moved < MODE_STEP_TOL {
            break;
        }
    }
    (x, ev.log_f(x).0)
}

/// Global mode of the mixture. Component means, deduplicated on a grid
/// finer than the smallest sigma, seed hill climbs; the densest starts are
/// climbed first and the highest end point wins, ties to the earliest
/// start.
pub fn recover_position(model: &MixtureModel) -> [f64; 2] {
    if model.len() == 1 {
        return model.components[0].mean;
    }
    let sigma_min = model
        .components
        .iter()
        .flat_map(|c| c.sigma)
        .fold(f64::INFINITY, f64::min);
    let cell = START_CELL * sigma_min;
    let mut seen = std::collections::HashSet::new();
    let starts: Vec<[f64; 2]> = model
        .components
        .iter()
        .map(|c| c.mean)
        .filter(|m| seen.insert(((m[0] / cell).floor() as i64, (m[1] / cell).floor() as i64)))
        .collect();
    let mut ev = Evaluator::new(model);
    let mut ranked: Vec<(usize, f64)> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| (i, ev.log_f(*s).0))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(MAX_ASCENTS);
    ranked.sort_by_key(|r| r.0);
    let mut best: Option<([f64; 2], f64)> = None;
    for (i, _) in ranked {
        let (m, f) = ascend(&mut ev, starts[i]);
        match best {
            Some((_, bf)) if f <= bf + 1e-12 * bf.abs().max(1.0) => {}
            _ => best = Some((m, f)),
        }
    }
    best.map(|(m, _)| m).unwrap_or(model.components[0].mean)
}

/// Mean up coordinate of the components, for lifting a 2-D mode to 3-D.
pub fn mean_up(model: &MixtureModel) -> f64 {
    model.components.iter().map(|c| c.up).sum::<f64>() / model.len() as f64
}
