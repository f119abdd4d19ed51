//! Per-epoch orchestration: subsets, solves, filtering, mixture, decision.
//!
//! Work is split in two stages. [`Pipeline::process_epoch`] does the
//! expensive part (solving and filtering every subset) and depends only on
//! subset, positioning and filter settings. [`fuse_epoch`] builds the
//! mixture and decides, so one processed trace can be scored under many
//! detector settings.

use std::collections::HashMap;

use log::debug;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    anchor_index, Anchor, DetectionRecord, EpochObservation, Hypothesis, Trace,
};
use crate::error::Result;
use crate::filtering::{compute_sigma, predict_state, FilterBank, FilterConfig, FilteredLocation};
use crate::fusion::{
    build_mixture, decide, mean_up, recover_position, within, Component, DetectorConfig,
    ExclusionMode, MixtureModel,
};
use crate::geo::{EcefPosition, EnuPosition, LocalFrame};
use crate::positioning::{solve_subset, PositioningConfig, SubsetSolution};
use crate::subsets::{generate_subsets, SubsetPolicy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub subsets: SubsetPolicy,
    pub positioning: PositioningConfig,
    pub filter: FilterConfig,
    pub detector: DetectorConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.positioning.validate()?;
        self.filter.validate()?;
        self.detector.validate()
    }
}

/// Everything the fusion stage needs from one epoch.
#[derive(Debug, Clone)]
pub struct EpochState {
    pub epoch: u32,
    pub gnss_enu: EnuPosition,
    pub filtered: Vec<FilteredLocation>,
    /// Subset keys whose solve failed, with the reason.
    pub failed: Vec<(String, String)>,
    pub subset_count: usize,
}

pub struct Pipeline<'a> {
    config: PipelineConfig,
    anchor_list: &'a [Anchor],
    anchors: HashMap<&'a str, &'a Anchor>,
    frame: LocalFrame,
    bank: FilterBank,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: PipelineConfig, anchors: &'a [Anchor], frame: LocalFrame) -> Self {
        Self {
            config,
            anchor_list: anchors,
            anchors: anchor_index(anchors),
            frame,
            bank: FilterBank::new(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Initial guess for a subset: its last smoothed location advanced one
    /// epoch by the motion model when motion is available.
    fn prior(&self, key: &str, obs: &EpochObservation) -> Option<EcefPosition> {
        let max_age = self.config.filter.window as u32;
        let last = self.bank.last_filtered(key, obs.epoch, max_age)?;
        let Some(m) = &obs.motion else {
            return Some(last);
        };
        let v = self.frame.rotate_to_ecef(&Vector3::from(m.speed));
        let a = self.frame.rotate_to_ecef(&Vector3::from(m.acceleration));
        let (p, _) = predict_state(last.to_vector(), v, a);
        Some(EcefPosition::from_vector(&p))
    }

    pub fn process_epoch(&mut self, obs: &EpochObservation) -> EpochState {
        let generation = generate_subsets(obs, self.anchor_list, &self.config.subsets);
        for d in &generation.diagnostics {
            debug!("epoch {}: {d}", obs.epoch);
        }
        let jobs: Vec<_> = generation
            .subsets
            .iter()
            .map(|s| (s, self.prior(&s.key(), obs)))
            .collect();
        let anchors = &self.anchors;
        let cfg = &self.config.positioning;
        let results: Vec<Result<SubsetSolution>> = jobs
            .par_iter()
            .map(|(s, prior)| solve_subset(s, obs, anchors, *prior, cfg))
            .collect();

        let mut solutions = Vec::with_capacity(results.len());
        let mut failed = Vec::new();
        for (s, r) in generation.subsets.iter().zip(results) {
            match r {
                Ok(sol) if sol.position.is_finite() => solutions.push(sol),
                Ok(_) => failed.push((s.key(), "non-finite solution".to_string())),
                Err(e) => failed.push((s.key(), e.to_string())),
            }
        }
        let filtered = self.bank.step(
            obs.epoch,
            &solutions,
            obs.motion.as_ref(),
            &self.frame,
            &self.config.filter,
        );
        EpochState {
            epoch: obs.epoch,
            gnss_enu: self.frame.to_enu(obs.gnss_reported_position),
            filtered,
            failed,
            subset_count: generation.subsets.len(),
        }
    }

    pub fn process_trace(&mut self, trace: &Trace) -> Vec<EpochState> {
        trace.epochs.iter().map(|o| self.process_epoch(o)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub model: Option<MixtureModel>,
    pub record: DetectionRecord,
    /// Mode of the final mixture in the local frame, when computed.
    pub recovered_enu: Option<EnuPosition>,
}

fn components(filtered: &[&FilteredLocation], filter: &FilterConfig) -> Vec<Component> {
    let sig = compute_sigma(filtered, filter);
    filtered
        .iter()
        .zip(sig.sigmas)
        .map(|(f, s)| Component {
            subset_index: f.subset_index,
            mean: [f.enu.east, f.enu.north],
            sigma: s,
            up: f.enu.up,
        })
        .collect()
}

/// Builds the mixture for one processed epoch and decides. With
/// `recover_always` the mode is computed for H0 epochs too; the record
/// still carries a recovered position only on H1.
pub fn fuse_epoch(
    state: &EpochState,
    frame: &LocalFrame,
    filter: &FilterConfig,
    detector: &DetectorConfig,
    recover_always: bool,
) -> FusionOutcome {
    let mut flags: Vec<String> = Vec::new();
    if !state.failed.is_empty() {
        flags.push(format!("failed_subsets={}", state.failed.len()));
    }
    let all: Vec<&FilteredLocation> = state.filtered.iter().collect();
    if all.is_empty() {
        flags.push("no_components".into());
        return FusionOutcome {
            model: None,
            record: DetectionRecord {
                epoch: state.epoch,
                likelihood: None,
                distance: None,
                decision: Hypothesis::H0,
                recovered_position: None,
                truth_label: None,
                flags,
            },
            recovered_enu: None,
        };
    }
    let gnss = [state.gnss_enu.east, state.gnss_enu.north];
    let provisional_components = components(&all, filter);
    let provisional = MixtureModel::new(state.epoch, provisional_components.clone())
        .expect("components have positive sigmas");

    let reference = match detector.exclusion {
        ExclusionMode::Off => None,
        ExclusionMode::FromGnss => Some(gnss),
        ExclusionMode::FromPeak => Some(recover_position(&provisional)),
    };
    let model = match reference {
        None => provisional,
        Some(r) => {
            let keep = within(&provisional_components, r, detector.exclusion_distance);
            let kept: Vec<&FilteredLocation> = all
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(f, _)| *f)
                .collect();
            if kept.len() == all.len() {
                provisional
            } else if kept.is_empty() || !detector.recompute_sigma {
                build_mixture(
                    state.epoch,
                    provisional_components,
                    Some(r),
                    detector.exclusion_distance,
                )
                .expect("non-empty components")
            } else {
                let mut m = MixtureModel::new(state.epoch, components(&kept, filter))
                    .expect("non-empty components");
                m.excluded_count = all.len() - kept.len();
                m
            }
        }
    };
    flags.extend(model.flags.iter().cloned());
    if model.excluded_count > 0 {
        flags.push(format!("excluded={}", model.excluded_count));
    }

    let (likelihood, decision) = decide(&model, gnss, detector.lambda);
    let recovered_enu = (recover_always || decision == Hypothesis::H1).then(|| {
        let m = recover_position(&model);
        EnuPosition::new(m[0], m[1], mean_up(&model))
    });
    let recovered_position = if decision == Hypothesis::H1 {
        recovered_enu.map(|e| frame.to_ecef(e))
    } else {
        None
    };
    FusionOutcome {
        model: Some(model),
        record: DetectionRecord {
            epoch: state.epoch,
            likelihood: Some(likelihood),
            distance: None,
            decision,
            recovered_position,
            truth_label: None,
            flags,
        },
        recovered_enu,
    }
}

/// Processes a whole trace and returns one record per epoch.
pub fn detect_trace(
    trace: &Trace,
    anchors: &[Anchor],
    config: &PipelineConfig,
    labels: Option<&[Hypothesis]>,
) -> Vec<DetectionRecord> {
    let frame = trace.frame();
    let mut pipeline = Pipeline::new(config.clone(), anchors, frame.clone());
    trace
        .epochs
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let state = pipeline.process_epoch(obs);
            let mut rec =
                fuse_epoch(&state, &frame, &config.filter, &config.detector, false).record;
            rec.truth_label = labels.and_then(|l| l.get(i).copied());
            rec
        })
        .collect()
}
