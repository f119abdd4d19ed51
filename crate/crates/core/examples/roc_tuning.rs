//! Four-method comparison on the rogue-ramp scenario, averaged over
//! seeds. Pipeline and scenario settings can be patched with JSON objects
//! in `GMRAIM_PIPELINE` and `GMRAIM_SCENARIO`.
//!
//! `cargo run --release -p gmraim-core --example roc_tuning [seeds]`

use std::time::Instant;

use gmraim::attacks::{simulate, ScenarioConfig};
use gmraim::baselines::KalmanConfig;
use gmraim::datamodel::Hypothesis;
use gmraim::eval::{average_rows, compare_methods};
use gmraim::pipeline::PipelineConfig;
use serde_json::Value;

fn merge(base: &mut Value, patch: &Value) {
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
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let targets = [0.01, 0.02, 0.03, 0.04, 0.05];
    let config: PipelineConfig = patched(PipelineConfig::default(), "GMRAIM_PIPELINE");
    let kalman: KalmanConfig = patched(KalmanConfig::default(), "GMRAIM_KALMAN");
    let start = Instant::now();
    let mut per_seed = Vec::new();
    for seed in 1..=seeds {
        let trace = simulate(&patched(
            ScenarioConfig::rogue_ramp(seed),
            "GMRAIM_SCENARIO",
        ))
        .expect("scenario");
        let frame = trace.trace.frame();
        let mut devs: Vec<f64> = trace
            .trace
            .epochs
            .iter()
            .zip(&trace.truth_positions)
            .zip(&trace.truth_labels)
            .filter(|(_, h)| **h == Hypothesis::H1)
            .map(|((o, t), _)| {
                let a = frame.to_enu(o.gnss_reported_position);
                let b = frame.to_enu(*t);
                (a.east - b.east).hypot(a.north - b.north)
            })
            .collect();
        devs.sort_by(f64::total_cmp);
        let q = |f: f64| {
            devs.get(((devs.len() as f64 - 1.0) * f) as usize)
                .copied()
                .unwrap_or(0.0)
        };
        println!(
            "seed {seed}: H1 {} spoofed RSSI {} fix deviation q15 {:.1} q50 {:.1} max {:.1}",
            devs.len(),
            trace.spoofed_rssi_count(),
            q(0.15),
            q(0.5),
            q(1.0)
        );
        let rows = compare_methods(&trace, &config, &kalman, &targets).expect("compare");
        let line: Vec<String> = rows
            .iter()
            .filter(|r| r.target_fp == 0.05)
            .map(|r| format!("{}={:.3}", r.method.as_str(), r.p_tp))
            .collect();
        println!("  @5% {}", line.join(" "));
        per_seed.push(rows);
    }
    println!("mean over {seeds} seeds ({:.1?}):", start.elapsed());
    let avg = average_rows(&per_seed);
    for t in targets {
        let line: Vec<String> = avg
            .iter()
            .filter(|r| r.target_fp == t)
            .map(|r| format!("{}={:.3}", r.method.as_str(), r.p_tp))
            .collect();
        println!("  fp<={t:.2} {}", line.join(" "));
    }
}
