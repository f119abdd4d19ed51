//! Constrained local polynomial smoothing of each subset's location stream.
//!
//! Each horizontal axis is fitted independently in the local ENU plane with
//! a polynomial in relative time `τ = t − t′` over the `w` epochs before the
//! current epoch `t′`, so the constant coefficient is the prediction at `t′`.
//! Height passes through unfiltered.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::datamodel::MotionMeasurement;
use crate::error::{Error, Result};
use crate::geo::{EcefPosition, EnuPosition, LocalFrame};
use crate::positioning::SubsetSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Tricube,
    Gaussian,
}

impl Kernel {
    /// Weight at normalized offset `u = τ / h`.
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Tricube => {
                let a = u.abs();
                if a >= 1.0 {
                    0.0
                } else {
                    (1.0 - a * a * a).powi(3)
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Population standard deviation of the residuals across subsets,
    /// shared by every subset.
    #[default]
    CrossSubset,
    /// `pdop · σ_uere` per subset.
    Dop,
    /// Standard deviation of each subset's own residuals over the window.
    RollingWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub enabled: bool,
    pub window: usize,
    pub degree: usize,
    pub kernel: Kernel,
    /// Kernel bandwidth in epochs; `window + 1` when absent.
    pub bandwidth: Option<f64>,
    pub epsilon: f64,
    pub speed_weight: f64,
    pub sigma_floor: f64,
    pub sigma_mode: SigmaMode,
    pub sigma_uere: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 10,
            degree: 2,
            kernel: Kernel::Tricube,
            bandwidth: None,
            epsilon: 5.0,
            speed_weight: 1.0,
            sigma_floor: 0.5,
            sigma_mode: SigmaMode::CrossSubset,
            sigma_uere: 5.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < self.degree + 1 {
            return Err(Error::Config(format!(
                "filter window {} must be at least degree + 1 = {}",
                self.window,
                self.degree + 1
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("filter epsilon must be positive".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma floor must be positive".into()));
        }
        if !(self.speed_weight >= 0.0) || !(self.sigma_uere > 0.0) {
            return Err(Error::Config(
                "speed weight must be >= 0 and sigma_uere > 0".into(),
            ));
        }
        if matches!(self.bandwidth, Some(h) if !(h > 0.0)) {
            return Err(Error::Config("kernel bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth.unwrap_or((self.window + 1) as f64)
    }
}

/// One-epoch motion update: `p + v + ½a`, `v + a`.
pub fn predict_state(
    p: Vector3<f64>,
    v: Vector3<f64>,
    a: Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    (p + v + 0.5 * a, v + a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisFit {
    /// Coefficients of `1, τ, τ², …`; the first is the value at `τ = 0`.
    pub coefficients: Vec<f64>,
    pub clamped: bool,
}

/// Weighted polynomial fit of `values` at times `taus`, minimizing
/// `Σ K(τᵢ)(c·φ(τᵢ) − yᵢ)² + λ(c₁ − v)²` subject to `|c₀ − anchor| ≤ ε`.
///
/// The feasible set is a single box on `c₀`, so when the free optimum
/// violates it the constrained optimum has `c₀` on the violated bound.
pub fn fit_axis(
    taus: &[f64],
    values: &[f64],
    weights: &[f64],
    degree: usize,
    speed: Option<(f64, f64)>,
    anchor: f64,
    epsilon: f64,
) -> Option<AxisFit> {
    let k = degree + 1;
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for ((tau, y), w) in taus.iter().zip(values).zip(weights) {
        let phi: Vec<f64> = (0..k).map(|i| tau.powi(i as i32)).collect();
        for i in 0..k {
            b[i] += w * phi[i] * y;
            for j in 0..k {
                a[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    if let (Some((lambda, v)), true) = (speed, k > 1) {
        a[(1, 1)] += lambda;
        b[1] += lambda * v;
    }
    let free = a.clone().cholesky()?.solve(&b);
    let c0 = free[0];
    if (c0 - anchor).abs() <= epsilon {
        return Some(AxisFit {
            coefficients: free.iter().copied().collect(),
            clamped: false,
        });
    }
    let fixed = anchor + epsilon.copysign(c0 - anchor);
    let mut coefficients = vec![fixed];
    if k > 1 {
        let sub = a.view((1, 1), (k - 1, k - 1)).clone_owned();
        let rhs = b.rows(1, k - 1) - a.view((1, 0), (k - 1, 1)) * fixed;
        let rest = sub.cholesky()?.solve(&rhs);
        coefficients.extend(rest.iter());
    }
    Some(AxisFit {
        coefficients,
        clamped: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredLocation {
    pub subset_index: usize,
    pub subset_key: String,
    pub epoch: u32,
    /// Smoothed location `p̂_l(t)`.
    pub position: EcefPosition,
    pub enu: EnuPosition,
    /// Raw solver location `p_l(t)` in the local frame.
    pub raw_enu: EnuPosition,
    /// `p̂_l(t) − p_l(t)` in ENU; the up component is zero.
    pub residual: [f64; 3],
    /// Rows east and north, columns `1, τ, τ², …`.
    pub coefficients: [Vec<f64>; 2],
    pub pdop: f64,
    /// Standard deviation of this subset's residuals over the window,
    /// including the current one; absent with fewer than two.
    pub rolling_std: Option<[f64; 2]>,
    pub unfiltered: bool,
    pub clamped: bool,
}

/// Smoothed location from a history of `(epoch, ENU position)` pairs at
/// epochs before `epoch`. The ε box is centred on `anchor` (the previous
/// smoothed location), else on the latest history point. `None` when fewer
/// than `degree + 1` points are usable.
pub fn fit_local_polynomial(
    history: &[(u32, EnuPosition)],
    epoch: u32,
    anchor: Option<EnuPosition>,
    motion: Option<&MotionMeasurement>,
    config: &FilterConfig,
) -> Option<([AxisFit; 2], EnuPosition)> {
    let lo = epoch.saturating_sub(config.window as u32);
    let pts: Vec<&(u32, EnuPosition)> = history
        .iter()
        .filter(|(t, _)| *t >= lo && *t < epoch)
        .collect();
    if pts.len() < config.degree + 1 {
        return None;
    }
    let h = config.bandwidth();
    let taus: Vec<f64> = pts.iter().map(|(t, _)| *t as f64 - epoch as f64).collect();
    let weights: Vec<f64> = taus
        .iter()
        .map(|tau| config.kernel.weight(tau / h))
        .collect();
    let last = anchor.unwrap_or(pts.iter().max_by_key(|(t, _)| *t)?.1);
    let east: Vec<f64> = pts.iter().map(|(_, p)| p.east).collect();
    let north: Vec<f64> = pts.iter().map(|(_, p)| p.north).collect();
    let speed = |axis: usize| {
        motion
            .filter(|_| config.speed_weight > 0.0)
            .map(|m| (config.speed_weight, m.speed[axis]))
    };
    let fe = fit_axis(
        &taus,
        &east,
        &weights,
        config.degree,
        speed(0),
        last.east,
        config.epsilon,
    )?;
    let fnn = fit_axis(
        &taus,
        &north,
        &weights,
        config.degree,
        speed(1),
        last.north,
        config.epsilon,
    )?;
    let p = EnuPosition::new(fe.coefficients[0], fnn.coefficients[0], 0.0);
    Some(([fe, fnn], p))
}

/// Per-subset rolling histories, keyed by the canonical subset key.
#[derive(Debug, Clone, Default)]
pub struct FilterBank {
    positions: HashMap<String, VecDeque<(u32, EnuPosition)>>,
    residuals: HashMap<String, VecDeque<(u32, [f64; 2])>>,
    last_filtered: HashMap<String, (u32, EcefPosition)>,
}

impl FilterBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Most recent smoothed location of a subset, if seen within `max_age`
    /// epochs of `epoch`.
    pub fn last_filtered(&self, key: &str, epoch: u32, max_age: u32) -> Option<EcefPosition> {
        self.last_filtered
            .get(key)
            .filter(|(t, _)| epoch.saturating_sub(*t) <= max_age)
            .map(|(_, p)| *p)
    }

    /// Filters one epoch of solutions and records them in the histories.
    pub fn step(
        &mut self,
        epoch: u32,
        solutions: &[SubsetSolution],
        motion: Option<&MotionMeasurement>,
        frame: &LocalFrame,
        config: &FilterConfig,
    ) -> Vec<FilteredLocation> {
        let lo = epoch.saturating_sub(config.window as u32);
        self.positions.retain(|_, h| {
            h.retain(|(t, _)| *t >= lo);
            !h.is_empty()
        });
        self.residuals.retain(|_, h| {
            h.retain(|(t, _)| *t >= lo);
            !h.is_empty()
        });
        self.last_filtered.retain(|_, (t, _)| *t >= lo);

        let mut out = Vec::with_capacity(solutions.len());
        for sol in solutions {
            let key = sol.subset.key();
            let raw = frame.to_enu(sol.position);
            let fit = if config.enabled {
                let hist: Vec<(u32, EnuPosition)> = self
                    .positions
                    .get(&key)
                    .map(|h| h.iter().copied().collect())
                    .unwrap_or_default();
                let anchor = self.last_filtered.get(&key).map(|(_, p)| frame.to_enu(*p));
                fit_local_polynomial(&hist, epoch, anchor, motion, config)
            } else {
                None
            };
            let (enu, coefficients, unfiltered, clamped) = match fit {
                Some(([fe, fnn], p)) => {
                    let clamped = fe.clamped || fnn.clamped;
                    (
                        EnuPosition::new(p.east, p.north, raw.up),
                        [fe.coefficients, fnn.coefficients],
                        false,
                        clamped,
                    )
                }
                None => (raw, [vec![raw.east], vec![raw.north]], true, false),
            };
            let residual = [enu.east - raw.east, enu.north - raw.north, 0.0];
            let position = frame.to_ecef(enu);
            self.positions
                .entry(key.clone())
                .or_default()
                .push_back((epoch, raw));
            let res_hist = self.residuals.entry(key.clone()).or_default();
            res_hist.push_back((epoch, [residual[0], residual[1]]));
            let rolling_std = (res_hist.len() >= 2).then(|| {
                let pts: Vec<[f64; 2]> = res_hist.iter().map(|(_, r)| *r).collect();
                population_std(&pts)
            });
            self.last_filtered.insert(key.clone(), (epoch, position));
            out.push(FilteredLocation {
                subset_index: sol.subset.subset_index,
                subset_key: key,
                epoch,
                position,
                enu,
                raw_enu: raw,
                residual,
                coefficients,
                pdop: sol.pdop,
                rolling_std,
                unfiltered,
                clamped,
            });
        }
        out
    }
}

fn population_std(values: &[[f64; 2]]) -> [f64; 2] {
    let n = values.len() as f64;
    let mut out = [0.0; 2];
    for (axis, o) in out.iter_mut().enumerate() {
        let mean = values.iter().map(|v| v[axis]).sum::<f64>() / n;
        *o = (values.iter().map(|v| (v[axis] - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    /// East/north standard deviations per input location, same order.
    pub sigmas: Vec<[f64; 2]>,
    /// Set when the variance was undefined and the floor was substituted.
    pub degenerate: bool,
}

/// Uncertainty of each filtered location; every output is at least the
/// configured floor.
pub fn compute_sigma(filtered: &[&FilteredLocation], config: &FilterConfig) -> SigmaEstimate {
    let floor = |s: f64| {
        if s.is_finite() {
            s.max(config.sigma_floor)
        } else {
            config.sigma_floor
        }
    };
    match config.sigma_mode {
        SigmaMode::CrossSubset => {
            if filtered.len() < 2 {
                return SigmaEstimate {
                    sigmas: vec![[config.sigma_floor; 2]; filtered.len()],
                    degenerate: true,
                };
            }
            let res: Vec<[f64; 2]> = filtered
                .iter()
                .map(|f| [f.residual[0], f.residual[1]])
                .collect();
            let s = population_std(&res);
            SigmaEstimate {
                sigmas: vec![[floor(s[0]), floor(s[1])]; filtered.len()],
                degenerate: false,
            }
        }
        SigmaMode::Dop => SigmaEstimate {
            sigmas: filtered
                .iter()
                .map(|f| {
                    let s = floor(f.pdop * config.sigma_uere);
                    [s, s]
                })
                .collect(),
            degenerate: false,
        },
        SigmaMode::RollingWindow => {
            let mut degenerate = false;
            let sigmas = filtered
                .iter()
                .map(|f| match f.rolling_std {
                    Some(s) => [floor(s[0]), floor(s[1])],
                    None => {
                        degenerate = true;
                        [config.sigma_floor; 2]
                    }
                })
                .collect();
            SigmaEstimate { sigmas, degenerate }
        }
    }
}
