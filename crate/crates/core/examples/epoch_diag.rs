//! Per-epoch log-densities with and without exclusion on one rogue-ramp
//! seed. Same JSON patch variables as `roc_tuning`.

use gmraim::attacks::{simulate, ScenarioConfig};
use gmraim::datamodel::Hypothesis;
use gmraim::eval::{calibrate_lambda, fuse_states, process};
use gmraim::fusion::ExclusionMode;
use gmraim::pipeline::PipelineConfig;

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn patched<T: serde::Serialize + serde::de::DeserializeOwned>(base: T, var: &str) -> T {
    let Ok(text) = std::env::var(var) else {
        return base;
    };
    let mut v = serde_json::to_value(base).expect("serialize");
    merge(&mut v, &serde_json::from_str(&text).expect("patch is JSON"));
    serde_json::from_value(v).expect("patched config")
}

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let step: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let config: PipelineConfig = patched(PipelineConfig::default(), "GMRAIM_PIPELINE");
    let trace = simulate(&patched(
        ScenarioConfig::rogue_ramp(seed),
        "GMRAIM_SCENARIO",
    ))
    .unwrap();
    let states = process(&trace, &config);
    let mut with = config.clone();
    with.detector.exclusion = ExclusionMode::FromPeak;
    let mut without = config.clone();
    without.detector.exclusion = ExclusionMode::Off;
    let rw = fuse_states(&states, &trace, &with);
    let ro = fuse_states(&states, &trace, &without);
    let lg = |r: &gmraim::datamodel::DetectionRecord| {
        r.likelihood.map(|l| l.max(1e-300).log10()).unwrap_or(0.0)
    };
    for (name, rs) in [("with", &rw), ("without", &ro)] {
        let neg: Vec<f64> = rs
            .iter()
            .filter(|r| r.truth_label == Some(Hypothesis::H0))
            .map(lg)
            .collect();
        println!(
            "{name}: log10 lambda@5% {:.2} @1% {:.2}",
            calibrate_lambda(&neg, 0.05).unwrap(),
            calibrate_lambda(&neg, 0.01).unwrap()
        );
    }
    for i in (0..trace.trace.len()).step_by(step) {
        let s = &states[i];
        println!(
            "t {:4} {:?} rogue {} L {:5} with {:8.2} excl {:?} without {:8.2}",
            s.epoch,
            trace.truth_labels[i],
            trace.rogue_epochs.contains(&s.epoch) as u8,
            s.filtered.len(),
            lg(&rw[i]),
            rw[i].flags.iter().find(|f| f.starts_with("excluded")),
            lg(&ro[i])
        );
    }
}
