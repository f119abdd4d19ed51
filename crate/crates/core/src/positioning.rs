//! Per-subset location solvers: GNSS pseudorange least squares with a clock
//! bias unknown, multilateration, TDOA and RSSI-weighted geolocation.
//!
//! All solvers work in any Cartesian frame; `EcefPosition` is only used as a
//! three-vector carrier. Each returns a [`PositionFix`] with a position
//! cofactor matrix, so DOP in any rotated frame is available downstream.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Anchor, EpochObservation, InfraClass, RangingKind};
use crate::error::{Error, Result};
use crate::geo::{ecef_to_geodetic, enu_rotation, EcefPosition};
use crate::nls::{minimize, LeastSquaresProblem, NlsConfig, NlsOutcome};
use crate::subsets::RangingSubset;

/// Log-distance path loss: `RSSI = P₀ − 10 γ log₁₀(d / d₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossModel {
    pub reference_power_dbm: f64,
    pub reference_distance: f64,
    pub exponent: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            reference_power_dbm: -40.0,
            reference_distance: 1.0,
            exponent: 2.5,
        }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if !(1.5..=6.0).contains(&self.exponent) {
            return Err(Error::Config(format!(
                "path loss exponent {} outside [1.5, 6]",
                self.exponent
            )));
        }
        if !(self.reference_distance > 0.0) || !self.reference_power_dbm.is_finite() {
            return Err(Error::Config(
                "path loss reference must be finite with d0 > 0".into(),
            ));
        }
        Ok(())
    }

    /// Per-anchor overrides on top of `self`.
    pub fn for_anchor(&self, anchor: &Anchor) -> Self {
        Self {
            reference_power_dbm: anchor.tx_power_dbm.unwrap_or(self.reference_power_dbm),
            exponent: anchor.path_loss_exponent.unwrap_or(self.exponent),
            ..*self
        }
    }

    /// Inverse of [`rssi_to_distance`].
    pub fn rssi_at(&self, distance: f64) -> f64 {
        self.reference_power_dbm
            - 10.0 * self.exponent * (distance / self.reference_distance).log10()
    }
}

pub fn rssi_to_distance(rssi_dbm: f64, model: &PathLossModel) -> f64 {
    model.reference_distance
        * 10f64.powf((model.reference_power_dbm - rssi_dbm) / (10.0 * model.exponent))
}

/// Keeps an iterate within `tolerance` of a reference height along `up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightConstraint {
    pub reference: Vector3<f64>,
    /// Unit vector.
    pub up: Vector3<f64>,
    pub tolerance: f64,
}

impl HeightConstraint {
    /// Constraint around `p` using the ellipsoid normal at `p`.
    pub fn around(p: EcefPosition, tolerance: f64) -> Self {
        let rot = enu_rotation(ecef_to_geodetic(p));
        Self {
            reference: p.to_vector(),
            up: rot.row(2).transpose(),
            tolerance,
        }
    }

    fn clamp(&self, p: &mut [f64]) {
        let v = Vector3::new(p[0], p[1], p[2]);
        let h = self.up.dot(&(v - self.reference));
        let hc = h.clamp(-self.tolerance, self.tolerance);
        if hc != h {
            let w = v - self.up * (h - hc);
            p[..3].copy_from_slice(w.as_slice());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub nls: NlsConfig,
    pub height: Option<HeightConstraint>,
    /// Weight pseudoranges by `sin²(elevation)`; identity weights otherwise.
    pub elevation_weighting: bool,
    /// Initial clock bias, meters. Estimated from the initial guess if absent.
    pub initial_clock_bias: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nls: NlsConfig::default(),
            height: None,
            elevation_weighting: false,
            initial_clock_bias: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionFix {
    pub position: EcefPosition,
    pub clock_bias: Option<f64>,
    pub pdop: f64,
    /// Position block of the geometry cofactor `(GᵀG)⁻¹`, solver frame.
    pub cofactor: Matrix3<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    pub subset: RangingSubset,
    pub position: EcefPosition,
    pub clock_bias: Option<f64>,
    pub pdop: f64,
    pub cofactor: Matrix3<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl SubsetSolution {
    pub fn new(subset: RangingSubset, fix: PositionFix) -> Self {
        Self {
            subset,
            position: fix.position,
            clock_bias: fix.clock_bias,
            pdop: fix.pdop,
            cofactor: fix.cofactor,
            residual_norm: fix.residual_norm,
            converged: fix.converged,
            iterations: fix.iterations,
        }
    }
}

fn unit(from: Vector3<f64>, to: Vector3<f64>) -> Vector3<f64> {
    let d = to - from;
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vector3::zeros()
    }
}

fn pos3(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

/// Position cofactor from a geometry matrix whose first three columns are
/// position. Rank-deficient directions are dropped (pseudo-inverse).
fn geometry_cofactor(g: &DMatrix<f64>) -> (Matrix3<f64>, f64) {
    let normal = g.transpose() * g;
    let inv = match normal.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
        _ => {
            let eps = 1e-10 * normal.diagonal().max().max(1e-300);
            normal
                .pseudo_inverse(eps)
                .unwrap_or_else(|_| DMatrix::from_element(3, 3, f64::NAN))
        }
    };
    let cof = Matrix3::from_fn(|i, j| inv[(i, j)]);
    let pdop = (cof[(0, 0)] + cof[(1, 1)] + cof[(2, 2)]).max(0.0).sqrt();
    (cof, pdop)
}

fn push_height_row(rows: &mut Vec<f64>, ncols: usize, height: Option<&HeightConstraint>) -> usize {
    let Some(h) = height else { return 0 };
    rows.extend_from_slice(h.up.as_slice());
    rows.extend(std::iter::repeat_n(0.0, ncols - 3));
    1
}

/// Pseudorange residuals `ρⱼ − (‖sⱼ − p‖ + b)` over unknowns `(p, b)`.
pub struct PseudorangeProblem {
    pub satellites: Vec<Vector3<f64>>,
    pub pseudoranges: Vec<f64>,
    /// Square-root weights.
    pub weights: Vec<f64>,
}

impl LeastSquaresProblem for PseudorangeProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = pos3(x);
        DVector::from_iterator(
            self.satellites.len(),
            self.satellites
                .iter()
                .zip(&self.pseudoranges)
                .zip(&self.weights)
                .map(|((s, rho), w)| w * (rho - ((s - p).norm() + x[3]))),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = pos3(x);
        let mut j = DMatrix::zeros(self.satellites.len(), 4);
        for (i, (s, w)) in self.satellites.iter().zip(&self.weights).enumerate() {
            let u = unit(p, *s);
            for k in 0..3 {
                j[(i, k)] = w * u[k];
            }
            j[(i, 3)] = -w;
        }
        j
    }
}

/// Range residuals `‖aⱼ − p‖ − dⱼ`.
pub struct RangeProblem {
    pub anchors: Vec<Vector3<f64>>,
    pub distances: Vec<f64>,
    pub height: Option<HeightConstraint>,
}

impl LeastSquaresProblem for RangeProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = pos3(x);
        DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .iter()
                .zip(&self.distances)
                .map(|(a, d)| (a - p).norm() - d),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = pos3(x);
        let mut j = DMatrix::zeros(self.anchors.len(), 3);
        for (i, a) in self.anchors.iter().enumerate() {
            let u = unit(*a, p);
            for k in 0..3 {
                j[(i, k)] = u[k];
            }
        }
        j
    }

    fn project(&self, x: &mut DVector<f64>) {
        if let Some(h) = &self.height {
            h.clamp(x.as_mut_slice());
        }
    }
}

/// Range-difference residuals `(‖aⱼ − p‖ − ‖a_ref − p‖) − Δⱼ` for every
/// non-reference anchor `j`.
pub struct RangeDifferenceProblem {
    pub anchors: Vec<Vector3<f64>>,
    pub differences: Vec<f64>,
    pub reference: usize,
    pub height: Option<HeightConstraint>,
}

impl LeastSquaresProblem for RangeDifferenceProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = pos3(x);
        let d_ref = (self.anchors[self.reference] - p).norm();
        DVector::from_iterator(
            self.anchors.len() - 1,
            self.anchors
                .iter()
                .zip(&self.differences)
                .enumerate()
                .filter(|(i, _)| *i != self.reference)
                .map(|(_, (a, delta))| ((a - p).norm() - d_ref) - delta),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = pos3(x);
        let u_ref = unit(self.anchors[self.reference], p);
        let mut j = DMatrix::zeros(self.anchors.len() - 1, 3);
        let mut row = 0;
        for (i, a) in self.anchors.iter().enumerate() {
            if i == self.reference {
                continue;
            }
            let u = unit(*a, p) - u_ref;
            for k in 0..3 {
                j[(row, k)] = u[k];
            }
            row += 1;
        }
        j
    }

    fn project(&self, x: &mut DVector<f64>) {
        if let Some(h) = &self.height {
            h.clamp(x.as_mut_slice());
        }
    }
}

/// Weighted geolocation residuals `‖aⱼ − p‖ / ρⱼ`.
///
/// The cost is an exact quadratic in `p`, so the normal matrix is replaced
/// by the true Hessian `(Σ 1/ρⱼ²) I` and a single step reaches the minimum.
pub struct WeightedDistanceProblem {
    pub anchors: Vec<Vector3<f64>>,
    pub scales: Vec<f64>,
    pub height: Option<HeightConstraint>,
}

impl LeastSquaresProblem for WeightedDistanceProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = pos3(x);
        DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .iter()
                .zip(&self.scales)
                .map(|(a, rho)| (a - p).norm() / rho),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = pos3(x);
        let mut j = DMatrix::zeros(self.anchors.len(), 3);
        for (i, (a, rho)) in self.anchors.iter().zip(&self.scales).enumerate() {
            let u = unit(*a, p) / *rho;
            for k in 0..3 {
                j[(i, k)] = u[k];
            }
        }
        j
    }

    fn normal_matrix(
        &self,
        _x: &DVector<f64>,
        _jac: &DMatrix<f64>,
        _r: &DVector<f64>,
    ) -> DMatrix<f64> {
        let s: f64 = self.scales.iter().map(|rho| 1.0 / (rho * rho)).sum();
        DMatrix::identity(3, 3) * s
    }

    fn project(&self, x: &mut DVector<f64>) {
        if let Some(h) = &self.height {
            h.clamp(x.as_mut_slice());
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite {what}")))
    }
}

/// Singular values of the centered anchor cloud, descending.
fn spread(anchors: &[Vector3<f64>]) -> Vector3<f64> {
    let n = anchors.len() as f64;
    let c = anchors.iter().fold(Vector3::zeros(), |acc, a| acc + a) / n;
    let m = anchors.iter().fold(Matrix3::zeros(), |acc, a| {
        acc + (a - c) * (a - c).transpose()
    });
    let mut s = m.symmetric_eigenvalues().map(|v| v.max(0.0).sqrt());
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// Coplanar anchors admit a mirror solution unless the receiver sits on
/// their plane or a height constraint picks one side.
fn check_terrestrial_geometry(
    anchors: &[Vector3<f64>],
    solution: Option<&Vector3<f64>>,
    height: Option<&HeightConstraint>,
) -> Result<()> {
    let s = spread(anchors);
    if s[0] <= 0.0 || s[1] < 1e-9 * s[0] {
        return Err(Error::Geometry {
            reason: "anchors are collinear".into(),
            mirror: false,
        });
    }
    let Some(p) = solution else { return Ok(()) };
    if height.is_some() || s[2] >= 1e-9 * s[0] {
        return Ok(());
    }
    let c = anchors.iter().fold(Vector3::zeros(), |acc, a| acc + a) / anchors.len() as f64;
    let normal = (anchors[1] - anchors[0]).cross(&(anchors[2] - anchors[0]));
    let normal = if normal.norm() > 0.0 {
        normal.normalize()
    } else {
        // First three happen to be collinear; search for a non-degenerate triple.
        anchors
            .iter()
            .skip(3)
            .map(|a| (anchors[1] - anchors[0]).cross(&(a - anchors[0])))
            .find(|v| v.norm() > 0.0)
            .map(|v| v.normalize())
            .unwrap_or_else(Vector3::zeros)
    };
    let off = normal.dot(&(p - c)).abs();
    if off > 1e-3 {
        return Err(Error::Geometry {
            reason: format!(
                "coplanar anchors, solution {off:.3} m off the anchor plane is ambiguous"
            ),
            mirror: true,
        });
    }
    Ok(())
}

fn finish(out: NlsOutcome, g: DMatrix<f64>, clock: bool) -> PositionFix {
    let (cofactor, pdop) = geometry_cofactor(&g);
    let residual_norm = out.residual_norm();
    PositionFix {
        position: EcefPosition::new(out.x[0], out.x[1], out.x[2]),
        clock_bias: clock.then(|| out.x[3]),
        pdop,
        cofactor,
        residual_norm,
        converged: out.converged && residual_norm.is_finite() && pdop.is_finite(),
        iterations: out.iterations,
    }
}

pub fn solve_gnss_wls(
    satellite_positions: &[EcefPosition],
    pseudoranges: &[f64],
    initial_guess: EcefPosition,
    opts: &SolverOptions,
) -> Result<PositionFix> {
    let n = satellite_positions.len();
    if pseudoranges.len() != n {
        return Err(Error::InvalidInput(
            "one pseudorange per satellite required".into(),
        ));
    }
    if n < 4 {
        return Err(Error::Underdetermined { needed: 4, got: n });
    }
    check_finite(pseudoranges, "pseudorange")?;
    let sats: Vec<Vector3<f64>> = satellite_positions.iter().map(|s| s.to_vector()).collect();
    for i in 0..n {
        for j in 0..i {
            if (sats[i] - sats[j]).norm() < 1e-6 {
                return Err(Error::Geometry {
                    reason: format!("satellites {j} and {i} coincide"),
                    mirror: false,
                });
            }
        }
    }
    let p0 = initial_guess.to_vector();
    let weights = if opts.elevation_weighting {
        let up = enu_rotation(ecef_to_geodetic(initial_guess))
            .row(2)
            .transpose();
        sats.iter()
            .map(|s| up.dot(&unit(p0, *s)).max(0.1))
            .collect()
    } else {
        vec![1.0; n]
    };
    let b0 = opts.initial_clock_bias.unwrap_or_else(|| {
        sats.iter()
            .zip(pseudoranges)
            .map(|(s, rho)| rho - (s - p0).norm())
            .sum::<f64>()
            / n as f64
    });
    let problem = PseudorangeProblem {
        satellites: sats,
        pseudoranges: pseudoranges.to_vec(),
        weights,
    };
    let x0 = DVector::from_vec(vec![p0.x, p0.y, p0.z, b0]);
    let out = minimize(&problem, x0, &opts.nls)?;
    let g = problem.jacobian(&out.x);
    let sv = g.clone().singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Geometry {
            reason: "singular pseudorange normal matrix".into(),
            mirror: false,
        });
    }
    Ok(finish(out, g, true))
}

fn with_height_row(g: DMatrix<f64>, height: Option<&HeightConstraint>) -> DMatrix<f64> {
    let ncols = g.ncols();
    let mut data: Vec<f64> = Vec::with_capacity((g.nrows() + 1) * ncols);
    for r in 0..g.nrows() {
        data.extend(g.row(r).iter());
    }
    let extra = push_height_row(&mut data, ncols, height);
    DMatrix::from_row_slice(g.nrows() + extra, ncols, &data)
}

fn terrestrial_inputs(
    anchor_positions: &[EcefPosition],
    values: &[f64],
    what: &str,
) -> Result<Vec<Vector3<f64>>> {
    if values.len() != anchor_positions.len() {
        return Err(Error::InvalidInput(format!(
            "one {what} per anchor required"
        )));
    }
    if anchor_positions.len() < 3 {
        return Err(Error::Underdetermined {
            needed: 3,
            got: anchor_positions.len(),
        });
    }
    check_finite(values, what)?;
    Ok(anchor_positions.iter().map(|a| a.to_vector()).collect())
}

pub fn solve_multilateration(
    anchor_positions: &[EcefPosition],
    distances: &[f64],
    initial_guess: EcefPosition,
    opts: &SolverOptions,
) -> Result<PositionFix> {
    let anchors = terrestrial_inputs(anchor_positions, distances, "distance")?;
    check_terrestrial_geometry(&anchors, None, None)?;
    let problem = RangeProblem {
        anchors,
        distances: distances.to_vec(),
        height: opts.height,
    };
    let p0 = initial_guess.to_vector();
    let out = minimize(
        &problem,
        DVector::from_column_slice(p0.as_slice()),
        &opts.nls,
    )?;
    check_terrestrial_geometry(&problem.anchors, Some(&pos3(&out.x)), opts.height.as_ref())?;
    let g = with_height_row(problem.jacobian(&out.x), opts.height.as_ref());
    Ok(finish(out, g, false))
}

/// `range_differences[j]` is `ρⱼ − ρ_ref`; the reference entry is ignored.
pub fn solve_tdoa(
    anchor_positions: &[EcefPosition],
    range_differences: &[f64],
    reference_anchor: usize,
    initial_guess: EcefPosition,
    opts: &SolverOptions,
) -> Result<PositionFix> {
    let anchors = terrestrial_inputs(anchor_positions, range_differences, "range difference")?;
    let needed = if opts.height.is_some() { 3 } else { 4 };
    if anchors.len() < needed {
        return Err(Error::Underdetermined {
            needed,
            got: anchors.len(),
        });
    }
    if reference_anchor >= anchors.len() {
        return Err(Error::InvalidInput(format!(
            "reference anchor {reference_anchor} not in a set of {}",
            anchors.len()
        )));
    }
    check_terrestrial_geometry(&anchors, None, None)?;
    let problem = RangeDifferenceProblem {
        anchors,
        differences: range_differences.to_vec(),
        reference: reference_anchor,
        height: opts.height,
    };
    let p0 = initial_guess.to_vector();
    let out = minimize(
        &problem,
        DVector::from_column_slice(p0.as_slice()),
        &opts.nls,
    )?;
    check_terrestrial_geometry(&problem.anchors, Some(&pos3(&out.x)), opts.height.as_ref())?;
    let g = with_height_row(problem.jacobian(&out.x), opts.height.as_ref());
    Ok(finish(out, g, false))
}

/// Minimizes `Σ (‖aⱼ − p‖ / ρⱼ)²` with `ρⱼ` converted from RSSI through the
/// per-anchor models (one model per anchor, or a single shared one).
pub fn solve_geolocation_wnls(
    anchor_positions: &[EcefPosition],
    rssi_values: &[f64],
    models: &[PathLossModel],
    initial_guess: EcefPosition,
    opts: &SolverOptions,
) -> Result<PositionFix> {
    if models.len() != 1 && models.len() != rssi_values.len() {
        return Err(Error::InvalidInput(
            "path loss models must be shared or per anchor".into(),
        ));
    }
    let scales: Vec<f64> = rssi_values
        .iter()
        .enumerate()
        .map(|(i, r)| rssi_to_distance(*r, &models[if models.len() == 1 { 0 } else { i }]))
        .collect();
    solve_geolocation_scaled(anchor_positions, &scales, initial_guess, opts)
}

/// Geolocation with the distance scales `ρⱼ` already known.
pub fn solve_geolocation_scaled(
    anchor_positions: &[EcefPosition],
    scales: &[f64],
    initial_guess: EcefPosition,
    opts: &SolverOptions,
) -> Result<PositionFix> {
    let anchors = terrestrial_inputs(anchor_positions, scales, "distance scale")?;
    if scales.iter().any(|s| *s <= 0.0) {
        return Err(Error::InvalidInput(
            "distance scales must be positive".into(),
        ));
    }
    check_terrestrial_geometry(&anchors, None, None)?;
    let problem = WeightedDistanceProblem {
        anchors,
        scales: scales.to_vec(),
        height: opts.height,
    };
    let p0 = initial_guess.to_vector();
    let out = minimize(
        &problem,
        DVector::from_column_slice(p0.as_slice()),
        &opts.nls,
    )?;
    // Geometry DOP uses unit line-of-sight rows weighted by 1/ρ², normalized
    // to mean one so that equal scales reduce to the unweighted case.
    let p = pos3(&out.x);
    let w: Vec<f64> = problem.scales.iter().map(|s| 1.0 / (s * s)).collect();
    let mean_w = w.iter().sum::<f64>() / w.len() as f64;
    let mut g = DMatrix::zeros(problem.anchors.len(), 3);
    for (i, a) in problem.anchors.iter().enumerate() {
        let u = unit(*a, p) * (w[i] / mean_w).sqrt();
        for k in 0..3 {
            g[(i, k)] = u[k];
        }
    }
    let g = with_height_row(g, opts.height.as_ref());
    Ok(finish(out, g, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrestrialSolver {
    #[default]
    Geolocation,
    Multilateration,
    Tdoa,
}

impl std::str::FromStr for TerrestrialSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geolocation" => Ok(Self::Geolocation),
            "multilateration" => Ok(Self::Multilateration),
            "tdoa" => Ok(Self::Tdoa),
            other => Err(Error::Config(format!(
                "unknown terrestrial solver `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositioningConfig {
    /// Solver for subsets ranged by RSSI.
    pub terrestrial_solver: TerrestrialSolver,
    /// Solver for subsets ranged by distance measurements.
    pub range_solver: TerrestrialSolver,
    pub path_loss: PathLossModel,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    /// Half-width of the terrestrial height band around the prior, meters.
    pub height_tolerance: f64,
    pub elevation_weighting: bool,
}

impl Default for PositioningConfig {
    fn default() -> Self {
        Self {
            terrestrial_solver: TerrestrialSolver::Geolocation,
            range_solver: TerrestrialSolver::Multilateration,
            path_loss: PathLossModel::default(),
            step_tolerance: 1e-4,
            max_iterations: 20,
            height_tolerance: 10.0,
            elevation_weighting: false,
        }
    }
}

impl PositioningConfig {
    pub fn validate(&self) -> Result<()> {
        self.path_loss.validate()?;
        if !(self.step_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "NLS tolerance and iteration cap must be positive".into(),
            ));
        }
        if !(self.height_tolerance >= 0.0) {
            return Err(Error::Config(
                "height tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn nls(&self) -> NlsConfig {
        NlsConfig {
            step_tol: self.step_tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

/// Solves one subset. `prior` is the subset's previous filtered location;
/// the epoch's GNSS fix is used when there is none. Terrestrial solves keep
/// the height within the configured band around the starting point.
pub fn solve_subset(
    subset: &RangingSubset,
    obs: &EpochObservation,
    anchors: &HashMap<&str, &Anchor>,
    prior: Option<EcefPosition>,
    config: &PositioningConfig,
) -> Result<SubsetSolution> {
    let guess = prior.unwrap_or(obs.gnss_reported_position);
    let mut opts = SolverOptions {
        nls: config.nls(),
        elevation_weighting: config.elevation_weighting,
        ..SolverOptions::default()
    };

    let fix = if subset.infrastructure.class == InfraClass::Gnss {
        let mut sats = Vec::with_capacity(subset.len());
        let mut rhos = Vec::with_capacity(subset.len());
        for id in &subset.anchor_ids {
            let pos = obs
                .satellite_positions
                .get(id)
                .copied()
                .or_else(|| anchors.get(id.as_str()).map(|a| a.position))
                .ok_or_else(|| Error::InvalidInput(format!("no position for satellite `{id}`")))?;
            let m = measurement(obs, id, |k| k == RangingKind::PseudorangeMeters)?;
            sats.push(pos);
            rhos.push(m.1);
        }
        solve_gnss_wls(&sats, &rhos, guess, &opts)?
    } else {
        opts.height = Some(HeightConstraint::around(guess, config.height_tolerance));
        let mut pos = Vec::with_capacity(subset.len());
        let mut dist = Vec::with_capacity(subset.len());
        let mut any_rssi = false;
        for id in &subset.anchor_ids {
            let anchor = anchors
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("unknown anchor `{id}`")))?;
            let (kind, value) = measurement(obs, id, |k| k != RangingKind::PseudorangeMeters)?;
            pos.push(anchor.position);
            any_rssi |= kind == RangingKind::RssiDbm;
            dist.push(match kind {
                RangingKind::RssiDbm => {
                    rssi_to_distance(value, &config.path_loss.for_anchor(anchor))
                }
                _ => value,
            });
        }
        let solver = if any_rssi {
            config.terrestrial_solver
        } else {
            config.range_solver
        };
        match solver {
            TerrestrialSolver::Geolocation => solve_geolocation_scaled(&pos, &dist, guess, &opts)?,
            TerrestrialSolver::Multilateration => solve_multilateration(&pos, &dist, guess, &opts)?,
            TerrestrialSolver::Tdoa => {
                let diffs: Vec<f64> = dist.iter().map(|d| d - dist[0]).collect();
                solve_tdoa(&pos, &diffs, 0, guess, &opts)?
            }
        }
    };
    Ok(SubsetSolution::new(subset.clone(), fix))
}

fn measurement(
    obs: &EpochObservation,
    id: &str,
    accept: impl Fn(RangingKind) -> bool,
) -> Result<(RangingKind, f64)> {
    obs.rangings
        .iter()
        .find(|m| m.anchor_id == id && accept(m.kind))
        .map(|m| (m.kind, m.value))
        .ok_or_else(|| {
            Error::InvalidInput(format!("no measurement for `{id}` at epoch {}", obs.epoch))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(x: f64, y: f64, z: f64) -> EcefPosition {
        EcefPosition::new(x, y, z)
    }

    #[test]
    fn symmetric_gnss_recovers_truth_and_bias() {
        let sats = [
            e(2e7, 0.0, 2e7),
            e(-2e7, 0.0, 2e7),
            e(0.0, 2e7, 2e7),
            e(0.0, 0.0, 2.66e7),
        ];
        let truth = e(0.0, 0.0, 6.4e6);
        let guess = e(1e4, -2e4, 6.39e6);
        for bias in [0.0, 100.0] {
            let rho: Vec<f64> = sats.iter().map(|s| s.distance(truth) + bias).collect();
            let fix = solve_gnss_wls(&sats, &rho, guess, &SolverOptions::default()).unwrap();
            assert!(fix.converged);
            assert!(fix.position.distance(truth) <= 1e-3);
            assert!((fix.clock_bias.unwrap() - bias).abs() <= 1e-3);
        }
    }

    #[test]
    fn equal_elevation_ring_is_singular() {
        // Identical vertical line-of-sight components make height and clock
        // bias indistinguishable.
        let sats = [
            e(2e7, 0.0, 2e7),
            e(-2e7, 0.0, 2e7),
            e(0.0, 2e7, 2e7),
            e(0.0, -2e7, 2e7),
        ];
        let truth = e(0.0, 0.0, 6.4e6);
        let rho: Vec<f64> = sats.iter().map(|s| s.distance(truth)).collect();
        let err = solve_gnss_wls(&sats, &rho, truth, &SolverOptions::default());
        assert!(matches!(err, Err(Error::Geometry { .. })));
    }

    #[test]
    fn gnss_needs_four() {
        let sats = [e(2e7, 0.0, 2e7), e(-2e7, 0.0, 2e7), e(0.0, 2e7, 2e7)];
        let err = solve_gnss_wls(
            &sats,
            &[1.0, 2.0, 3.0],
            e(0.0, 0.0, 6.4e6),
            &SolverOptions::default(),
        );
        assert!(matches!(
            err,
            Err(Error::Underdetermined { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn multilateration_exact() {
        let anchors = [
            e(100.0, 0.0, 0.0),
            e(0.0, 100.0, 0.0),
            e(0.0, 0.0, 100.0),
            e(-100.0, -100.0, 0.0),
        ];
        let d: Vec<f64> = anchors.iter().map(|a| a.norm()).collect();
        let fix = solve_multilateration(&anchors, &d, e(5.0, -3.0, 2.0), &SolverOptions::default())
            .unwrap();
        assert!(fix.position.norm() <= 1e-6);
    }

    #[test]
    fn receiver_on_anchor_plane() {
        let anchors = [e(100.0, 0.0, 0.0), e(0.0, 100.0, 0.0), e(-80.0, -60.0, 0.0)];
        let truth = e(10.0, 20.0, 0.0);
        let d: Vec<f64> = anchors.iter().map(|a| a.distance(truth)).collect();
        let fix =
            solve_multilateration(&anchors, &d, e(12.0, 18.0, 0.5), &SolverOptions::default())
                .unwrap();
        assert!(fix.position.distance(truth) <= 1e-2, "{:?}", fix.position);
    }

    #[test]
    fn mirror_ambiguity_flagged() {
        let anchors = [e(100.0, 0.0, 0.0), e(0.0, 100.0, 0.0), e(-80.0, -60.0, 0.0)];
        let truth = e(10.0, 20.0, 30.0);
        let d: Vec<f64> = anchors.iter().map(|a| a.distance(truth)).collect();
        let err = solve_multilateration(&anchors, &d, e(0.0, 0.0, 20.0), &SolverOptions::default());
        assert!(matches!(err, Err(Error::Geometry { mirror: true, .. })));
    }

    #[test]
    fn collinear_rejected() {
        let anchors = [e(0.0, 0.0, 0.0), e(10.0, 0.0, 0.0), e(20.0, 0.0, 0.0)];
        let err = solve_multilateration(
            &anchors,
            &[1.0, 2.0, 3.0],
            e(1.0, 1.0, 0.0),
            &SolverOptions::default(),
        );
        assert!(matches!(err, Err(Error::Geometry { mirror: false, .. })));
    }

    #[test]
    fn rssi_conversion() {
        let m = PathLossModel {
            reference_power_dbm: -40.0,
            reference_distance: 1.0,
            exponent: 2.0,
        };
        assert!((rssi_to_distance(-40.0, &m) - 1.0).abs() < 1e-12);
        assert!((rssi_to_distance(-60.0, &m) - 10.0).abs() < 1e-9);
        assert!((rssi_to_distance(-80.0, &m) - 100.0).abs() < 1e-9);
        assert!((m.rssi_at(100.0) + 80.0).abs() < 1e-9);
    }

    #[test]
    fn geolocation_symmetric() {
        let anchors = [
            e(50.0, 0.0, 0.0),
            e(-50.0, 0.0, 0.0),
            e(0.0, 50.0, 0.0),
            e(0.0, -50.0, 0.0),
        ];
        let m = PathLossModel::default();
        let r = [m.rssi_at(50.0); 4];
        let fix = solve_geolocation_wnls(
            &anchors,
            &r,
            &[m],
            e(7.0, -4.0, 0.0),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(fix.position.norm() <= 1e-6);
        assert!(fix.iterations <= 3);
    }
}
