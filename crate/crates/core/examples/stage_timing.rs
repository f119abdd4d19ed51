use std::time::Instant;

use gmraim::attacks::{simulate, ScenarioConfig};
use gmraim::eval::{fuse_states, process};
use gmraim::pipeline::PipelineConfig;

fn main() {
    let mut sc = ScenarioConfig::rogue_ramp(1);
    let full = std::env::args().nth(1).as_deref() == Some("full");
    if !full {
        sc.epochs = std::env::args()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(100);
        sc.attack.start = sc.epochs / 2;
        sc.attack.end = sc.epochs / 2 + 20;
        sc.attack.auto_rogue = None;
    }
    let t = Instant::now();
    let trace = simulate(&sc).unwrap();
    println!("simulate {:?}", t.elapsed());
    let cfg = PipelineConfig::default();
    let t = Instant::now();
    let states = process(&trace, &cfg);
    for chunk in states.chunks(100) {
        let c: usize = chunk.iter().map(|s| s.filtered.len()).sum();
        let f: usize = chunk.iter().map(|s| s.failed.len()).sum();
        println!("epoch {} components {} failed {}", chunk[0].epoch, c, f);
    }
    let n: usize = states.iter().map(|s| s.filtered.len()).sum();
    println!("process {:?} ({} components total)", t.elapsed(), n);
    let t = Instant::now();
    let _ = fuse_states(&states, &trace, &cfg);
    println!("fuse {:?}", t.elapsed());
}
