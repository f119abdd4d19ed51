//! Combinatorial resampling of the ranging information: every subset of each
//! infrastructure's anchors, from the positioning minimum up to all of them.

use std::collections::BTreeMap;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    constellation_of, Anchor, EpochObservation, InfraClass, InfrastructureKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangingSubset {
    pub infrastructure: InfrastructureKind,
    /// Sorted anchor ids.
    pub anchor_ids: Vec<String>,
    pub epoch: u32,
    /// 1-based, dense over the epoch.
    pub subset_index: usize,
}

impl RangingSubset {
    /// Identity of the anchor set, stable across epochs.
    pub fn key(&self) -> String {
        subset_key(&self.infrastructure, &self.anchor_ids)
    }

    pub fn len(&self) -> usize {
        self.anchor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_ids.is_empty()
    }
}

pub fn subset_key(infra: &InfrastructureKind, ids: &[String]) -> String {
    format!("{infra}:{}", ids.join(","))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetPolicy {
    pub min_size_gnss: usize,
    pub min_size_terrestrial: usize,
    /// Uniform seeded sample of at most this many subsets per infrastructure.
    pub max_subsets_per_infrastructure: Option<usize>,
    pub seed: u64,
    /// Treat constellations / radio generations as separate infrastructures.
    pub split_sublabels: bool,
    /// Only the all-anchor subset of each infrastructure.
    pub full_set_only: bool,
}

impl Default for SubsetPolicy {
    fn default() -> Self {
        Self {
            min_size_gnss: 4,
            min_size_terrestrial: 3,
            max_subsets_per_infrastructure: None,
            seed: 0,
            split_sublabels: false,
            full_set_only: false,
        }
    }
}

impl SubsetPolicy {
    pub fn min_size(&self, class: InfraClass) -> usize {
        match class {
            InfraClass::Gnss => self.min_size_gnss,
            _ => self.min_size_terrestrial,
        }
    }
}

/// Sum of C(j, i) for i in k_min..=j.
pub fn count_subsets(j: usize, k_min: usize) -> u128 {
    if k_min > j {
        warn!("minimum subset size {k_min} exceeds anchor count {j}; no subsets");
        return 0;
    }
    (k_min..=j).map(|i| binomial(j, i)).sum()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// The `rank`-th k-combination of 0..n in lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let remaining = k - slot - 1;
        let mut c = next;
        loop {
            let block = binomial(n - c - 1, remaining);
            if rank < block {
                break;
            }
            rank -= block;
            c += 1;
        }
        out.push(c);
        next = c + 1;
    }
    out
}

fn combinations_lex(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubsetGeneration {
    pub subsets: Vec<RangingSubset>,
    /// Infrastructures that contributed nothing, and sampling notes.
    pub diagnostics: Vec<String>,
}

/// Infrastructure of each anchor heard at this epoch, with sorted, unique
/// ids per infrastructure.
pub fn group_by_infrastructure(
    obs: &EpochObservation,
    anchors: &[Anchor],
    split_sublabels: bool,
) -> BTreeMap<InfrastructureKind, Vec<String>> {
    let db = crate::datamodel::anchor_index(anchors);
    let mut groups: BTreeMap<InfrastructureKind, Vec<String>> = BTreeMap::new();
    for r in &obs.rangings {
        let kind = if obs.satellite_positions.contains_key(&r.anchor_id) {
            InfrastructureKind::with_label(InfraClass::Gnss, constellation_of(&r.anchor_id))
        } else if let Some(a) = db.get(r.anchor_id.as_str()) {
            a.kind.clone()
        } else {
            continue;
        };
        let kind = if split_sublabels { kind } else { kind.merged() };
        groups.entry(kind).or_default().push(r.anchor_id.clone());
    }
    for ids in groups.values_mut() {
        ids.sort();
        ids.dedup();
    }
    groups
}

fn stream_seed(seed: u64, epoch: u32, infra: &InfrastructureKind) -> u64 {
    // FNV-1a over the infrastructure name, mixed with seed and epoch.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in infra.to_string().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17) ^ u64::from(epoch).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn generate_subsets(
    obs: &EpochObservation,
    anchors: &[Anchor],
    policy: &SubsetPolicy,
) -> SubsetGeneration {
    let groups = group_by_infrastructure(obs, anchors, policy.split_sublabels);
    let mut gen = SubsetGeneration::default();
    for (infra, ids) in groups {
        let j = ids.len();
        let k_min = policy.min_size(infra.class);
        if j < k_min {
            gen.diagnostics.push(format!(
                "epoch {}: {infra} has {j} anchors, fewer than {k_min}",
                obs.epoch
            ));
            continue;
        }
        let mut push = |combo: &[usize]| {
            gen.subsets.push(RangingSubset {
                infrastructure: infra.clone(),
                anchor_ids: combo.iter().map(|&i| ids[i].clone()).collect(),
                epoch: obs.epoch,
                subset_index: 0,
            })
        };
        if policy.full_set_only {
            push(&(0..j).collect::<Vec<_>>());
            continue;
        }
        let total = count_subsets(j, k_min);
        match policy.max_subsets_per_infrastructure {
            Some(cap) if (cap as u128) < total => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(stream_seed(policy.seed, obs.epoch, &infra));
                let mut picks: Vec<usize> =
                    rand::seq::index::sample(&mut rng, total as usize, cap).into_vec();
                picks.sort_unstable();
                for p in picks {
                    let mut r = p as u128;
                    let mut k = k_min;
                    while r >= binomial(j, k) {
                        r -= binomial(j, k);
                        k += 1;
                    }
                    push(&unrank_combination(j, k, r));
                }
                gen.diagnostics.push(format!(
                    "epoch {}: {infra} sampled {cap} of {total} subsets",
                    obs.epoch
                ));
            }
            _ => {
                for k in k_min..=j {
                    combinations_lex(j, k, &mut push);
                }
            }
        }
    }
    for (i, s) in gen.subsets.iter_mut().enumerate() {
        s.subset_index = i + 1;
    }
    gen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{RangingKind, RangingMeasurement};
    use crate::geo::EcefPosition;

    fn observation(n_gnss: usize, n_wifi: usize, n_cell: usize) -> (EpochObservation, Vec<Anchor>) {
        let mut obs = EpochObservation {
            epoch: 7,
            satellite_positions: Default::default(),
            rangings: vec![],
            motion: None,
            gnss_reported_position: EcefPosition::new(6.4e6, 0.0, 0.0),
        };
        let mut anchors = vec![];
        for i in 0..n_gnss {
            let id = format!("G{:02}", i + 1);
            obs.satellite_positions
                .insert(id.clone(), EcefPosition::new(2e7, i as f64 * 1e6, 1e7));
            obs.rangings.push(RangingMeasurement {
                anchor_id: id,
                kind: RangingKind::PseudorangeMeters,
                value: 2.2e7,
                epoch: 7,
            });
        }
        for (prefix, n, kind) in [
            ("ap", n_wifi, InfrastructureKind::wifi()),
            ("bs", n_cell, InfrastructureKind::cellular()),
        ] {
            for i in 0..n {
                let id = format!("{prefix}{i}");
                anchors.push(Anchor {
                    id: id.clone(),
                    kind: kind.clone(),
                    position: EcefPosition::new(6.4e6, i as f64, 0.0),
                    tx_power_dbm: None,
                    path_loss_exponent: None,
                });
                obs.rangings.push(RangingMeasurement {
                    anchor_id: id,
                    kind: RangingKind::RssiDbm,
                    value: -60.0,
                    epoch: 7,
                });
            }
        }
        (obs, anchors)
    }

    #[test]
    fn counts() {
        assert_eq!(count_subsets(6, 4), 22);
        assert_eq!(count_subsets(4, 4), 1);
        assert_eq!(count_subsets(8, 3), 219);
        assert_eq!(count_subsets(3, 4), 0);
    }

    #[test]
    fn five_satellites() {
        let (obs, anchors) = observation(5, 0, 0);
        assert_eq!(
            generate_subsets(&obs, &anchors, &SubsetPolicy::default())
                .subsets
                .len(),
            6
        );
    }

    #[test]
    fn four_gnss_three_wifi() {
        let (obs, anchors) = observation(4, 3, 0);
        assert_eq!(
            generate_subsets(&obs, &anchors, &SubsetPolicy::default())
                .subsets
                .len(),
            2
        );
    }

    #[test]
    fn mixed_infrastructures() {
        let (obs, anchors) = observation(6, 4, 3);
        let g = generate_subsets(&obs, &anchors, &SubsetPolicy::default());
        assert_eq!(g.subsets.len(), 28);
        let idx: Vec<usize> = g.subsets.iter().map(|s| s.subset_index).collect();
        assert_eq!(idx, (1..=28).collect::<Vec<_>>());
        for s in &g.subsets {
            let mut sorted = s.anchor_ids.clone();
            sorted.sort();
            assert_eq!(sorted, s.anchor_ids);
        }
    }

    #[test]
    fn too_few_anchors_is_diagnostic() {
        let (obs, anchors) = observation(3, 2, 0);
        let g = generate_subsets(&obs, &anchors, &SubsetPolicy::default());
        assert!(g.subsets.is_empty());
        assert_eq!(g.diagnostics.len(), 2);
    }

    #[test]
    fn capped_sampling_is_deterministic() {
        let (obs, anchors) = observation(10, 0, 0);
        let policy = SubsetPolicy {
            max_subsets_per_infrastructure: Some(20),
            seed: 42,
            ..Default::default()
        };
        let a = generate_subsets(&obs, &anchors, &policy);
        let b = generate_subsets(&obs, &anchors, &policy);
        assert_eq!(a, b);
        assert_eq!(a.subsets.len(), 20);
        let mut keys: Vec<String> = a.subsets.iter().map(|s| s.key()).collect();
        keys.dedup();
        assert_eq!(keys.len(), 20);
    }

    #[test]
    fn unrank_matches_enumeration() {
        let mut all = vec![];
        combinations_lex(7, 3, |c| all.push(c.to_vec()));
        assert_eq!(all.len() as u128, binomial(7, 3));
        for (r, c) in all.iter().enumerate() {
            assert_eq!(&unrank_combination(7, 3, r as u128), c);
        }
    }

    #[test]
    fn split_constellations() {
        let (mut obs, anchors) = observation(0, 0, 0);
        for id in ["G01", "G02", "G03", "G04", "E01", "E02", "E03", "E04"] {
            obs.satellite_positions
                .insert(id.into(), EcefPosition::new(2e7, 0.0, 1e7));
            obs.rangings.push(RangingMeasurement {
                anchor_id: id.into(),
                kind: RangingKind::PseudorangeMeters,
                value: 2.2e7,
                epoch: 7,
            });
        }
        let merged = generate_subsets(&obs, &anchors, &SubsetPolicy::default());
        assert_eq!(merged.subsets.len() as u128, count_subsets(8, 4));
        let split = generate_subsets(
            &obs,
            &anchors,
            &SubsetPolicy {
                split_sublabels: true,
                ..Default::default()
            },
        );
        assert_eq!(split.subsets.len(), 2);
    }
}
