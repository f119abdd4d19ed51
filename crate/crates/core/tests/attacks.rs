use gmraim::attacks::{simulate, AttackMode, AttackSpec, NoiseConfig, ScenarioConfig};
use gmraim::datamodel::{Hypothesis, RangingKind};
use gmraim::positioning::{solve_gnss_wls, SolverOptions};

fn coordinated(ids: &[&str], noise: NoiseConfig) -> ScenarioConfig {
    ScenarioConfig {
        epochs: 120,
        noise,
        attack: AttackSpec {
            mode: AttackMode::Coordinated,
            gnss_spoofed_ids: ids.iter().map(|s| s.to_string()).collect(),
            start: 40,
            end: 90,
            peak: 120.0,
            seed: 5,
            ..AttackSpec::default()
        },
        ..ScenarioConfig::default()
    }
}

#[test]
fn simulation_is_deterministic() {
    let cfg = ScenarioConfig::rogue_ramp(3);
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    let other = simulate(&ScenarioConfig::rogue_ramp(4)).unwrap();
    assert_ne!(simulate(&cfg).unwrap().trace, other.trace);
}

#[test]
fn labels_mark_exactly_the_spoofed_gnss_epochs() {
    for mode in [AttackMode::Coordinated, AttackMode::Uncoordinated] {
        let mut cfg = coordinated(&["G01", "G03"], NoiseConfig::default());
        cfg.attack.mode = mode;
        let t = simulate(&cfg).unwrap();
        for (obs, label) in t.trace.epochs.iter().zip(&t.truth_labels) {
            let spoofed = obs.rangings.iter().any(|m| {
                m.kind == RangingKind::PseudorangeMeters
                    && t.spoofed_measurement_ids
                        .contains(&(obs.epoch, m.anchor_id.clone()))
            });
            assert_eq!(
                *label == Hypothesis::H1,
                spoofed,
                "{mode:?} epoch {}",
                obs.epoch
            );
            assert_eq!(spoofed, cfg.attack.in_window(obs.epoch));
        }
    }
}

#[test]
fn rogue_ramp_has_600_spoofed_rssi() {
    for seed in 1..=5 {
        let t = simulate(&ScenarioConfig::rogue_ramp(seed)).unwrap();
        assert_eq!(t.spoofed_rssi_count(), 600, "seed {seed}");
        assert_eq!(
            t.truth_labels
                .iter()
                .filter(|h| **h == Hypothesis::H1)
                .count(),
            130
        );
    }
}

#[test]
fn spoofed_satellites_alone_solve_to_the_target() {
    let ids = ["G01", "G02", "G03", "G04"];
    let t = simulate(&coordinated(&ids, NoiseConfig::zero())).unwrap();
    let opts = SolverOptions::default();
    let mut checked = 0;
    for (i, obs) in t.trace.epochs.iter().enumerate() {
        let Some(target) = t.spoof_targets[i] else {
            continue;
        };
        let (sats, rho): (Vec<_>, Vec<_>) = obs
            .rangings
            .iter()
            .filter(|m| ids.contains(&m.anchor_id.as_str()))
            .map(|m| (obs.satellite_positions[&m.anchor_id], m.value))
            .unzip();
        assert_eq!(sats.len(), 4);
        let fix = solve_gnss_wls(&sats, &rho, t.truth_positions[i], &opts).unwrap();
        assert!(
            fix.position.distance(target) <= 1e-3,
            "epoch {}: {}",
            obs.epoch,
            fix.position.distance(target)
        );
        checked += 1;
    }
    assert_eq!(checked, 50);
}

#[test]
fn no_attack_is_all_h0() {
    let mut cfg = ScenarioConfig::rogue_ramp(2);
    cfg.attack.mode = AttackMode::None;
    let t = simulate(&cfg).unwrap();
    assert!(t.truth_labels.iter().all(|h| *h == Hypothesis::H0));
    assert!(t.spoofed_measurement_ids.is_empty());
}

#[test]
fn uncoordinated_offsets_stay_in_band() {
    let mut cfg = coordinated(&["G02"], NoiseConfig::zero());
    cfg.attack.mode = AttackMode::Uncoordinated;
    let spoofed = simulate(&cfg).unwrap();
    cfg.attack.mode = AttackMode::None;
    let clean = simulate(&cfg).unwrap();
    for (a, b) in spoofed.trace.epochs.iter().zip(&clean.trace.epochs) {
        for (ma, mb) in a.rangings.iter().zip(&b.rangings) {
            let d = (ma.value - mb.value).abs();
            if ma.anchor_id == "G02" && cfg.attack.in_window(a.epoch) {
                assert!(
                    d >= cfg.attack.offset_min && d <= cfg.attack.offset_max,
                    "offset {d}"
                );
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }
}
