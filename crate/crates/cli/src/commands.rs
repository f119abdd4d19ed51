use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, LineWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmraim::attacks::{simulate, AttackMode, LabeledTrace, TruthRecord};
use gmraim::baselines::{kalman_detect, location_fusion_config};
use gmraim::datamodel::{validate_trace, Anchor, DetectionRecord, Hypothesis, Trace};
use gmraim::eval::{
    all_thresholds, average_rows, calibrate_lambda, compare_methods, roc_at_targets, roc_sweep,
    scored, write_comparison_csv, write_detections_jsonl, write_relation_csv, write_roc_csv,
    ComparisonRow,
};
use gmraim::ingest::{parse_anchors, parse_trace, save_anchors, save_trace};
use gmraim::pipeline::{fuse_epoch, Pipeline, PipelineConfig};
use gmraim::theory::{
    has_benign_subset, benign_majority, has_benign_fix, recovery_guaranteed, detection_guaranteed, feasibility_frontier,
    InfrastructureCount, InfrastructureCounts,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Loaded, RunConfig};
use crate::manifest::RunManifest;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn base_manifest(command: &str, loaded: &Loaded, seed: Option<u64>) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, &loaded.config, seed)?;
    if let Some(src) = &loaded.source {
        m.input_bytes("config.toml", src);
    }
    Ok(m)
}

pub fn write_truth(path: &Path, records: &[TruthRecord]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Input locations resolved from `--input DIR` and explicit overrides.
pub struct Inputs {
    pub trace: PathBuf,
    pub anchors: PathBuf,
    pub truth: Option<PathBuf>,
}

impl Inputs {
    pub fn resolve(
        input: Option<&Path>,
        trace: Option<PathBuf>,
        anchors: Option<PathBuf>,
        truth: Option<PathBuf>,
    ) -> Result<Self> {
        let from_dir = |name: &str| input.map(|d| d.join(name));
        let Some(trace) = trace.or_else(|| from_dir(TRACE_FILE)) else {
            bail!("no trace given (use --trace or --input)");
        };
        let Some(anchors) = anchors.or_else(|| from_dir(ANCHORS_FILE)) else {
            bail!("no anchor file given (use --anchors or --input)");
        };
        let truth = truth.or_else(|| from_dir(TRUTH_FILE).filter(|p| p.exists()));
        Ok(Self {
            trace,
            anchors,
            truth,
        })
    }

    fn load(
        &self,
        config: &RunConfig,
        manifest: &mut RunManifest,
    ) -> Result<(Trace, Vec<Anchor>, Option<Vec<TruthRecord>>)> {
        let parsed = parse_trace(&self.trace, &config.ingest)
            .with_context(|| format!("reading {}", self.trace.display()))?;
        for w in &parsed.warnings {
            warn!("{w}");
        }
        let anchors = parse_anchors(&self.anchors)
            .with_context(|| format!("reading {}", self.anchors.display()))?;
        manifest.input(&self.trace)?;
        manifest.input(&self.anchors)?;
        let truth = match &self.truth {
            Some(p) => {
                manifest.input(p)?;
                let t = read_truth(p)?;
                if t.len() != parsed.trace.len() {
                    bail!(
                        "truth sidecar has {} epochs, trace has {}",
                        t.len(),
                        parsed.trace.len()
                    );
                }
                Some(t)
            }
            None => None,
        };
        Ok((parsed.trace, anchors, truth))
    }
}

pub fn cmd_simulate(loaded: &Loaded, out: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let trace = simulate(&cfg.scenario)?;
    create_dir(out)?;
    let mut m = base_manifest("simulate", loaded, Some(cfg.scenario.seed))?;
    let paths = [
        out.join(TRACE_FILE),
        out.join(ANCHORS_FILE),
        out.join(TRUTH_FILE),
    ];
    save_trace(&paths[0], &trace.trace, cfg.ingest.epoch_duration)?;
    save_anchors(&paths[1], &trace.anchors)?;
    write_truth(&paths[2], &trace.truth_records())?;
    for p in &paths {
        m.output(p);
    }
    let h1 = trace
        .truth_labels
        .iter()
        .filter(|&&h| h == Hypothesis::H1)
        .count();
    m.param("epochs", trace.trace.len())?;
    m.param("h1_epochs", h1)?;
    m.param("spoofed_rssi", trace.spoofed_rssi_count())?;
    m.write(out)?;
    println!(
        "simulated {} epochs ({} under attack, {} spoofed RSSI values) into {}",
        trace.trace.len(),
        h1,
        trace.spoofed_rssi_count(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DetectMethod {
    /// Subset mixture detector.
    Proposed,
    /// IMU/GNSS Kalman filter distance test.
    Kalman,
    /// One full-set location per infrastructure.
    Fusion,
}

impl DetectMethod {
    fn as_str(self) -> &'static str {
        match self {
            DetectMethod::Proposed => "proposed",
            DetectMethod::Kalman => "kalman",
            DetectMethod::Fusion => "fusion",
        }
    }
}

pub struct DetectOptions {
    pub method: DetectMethod,
    /// Calibrate Λ to this false-positive rate on the negative epochs
    /// (truth H0 epochs when a sidecar is present, else every epoch).
    pub target_fp: Option<f64>,
}

fn labels_of(truth: &Option<Vec<TruthRecord>>) -> Option<Vec<Hypothesis>> {
    truth.as_ref().map(|t| t.iter().map(|r| r.label).collect())
}

fn calibrate(records: &[DetectionRecord], target: f64) -> Result<f64> {
    let neg: Vec<f64> = records
        .iter()
        .filter(|r| r.truth_label != Some(Hypothesis::H1))
        .map(|r| r.score().unwrap_or(f64::INFINITY))
        .collect();
    Ok(calibrate_lambda(&neg, target)?)
}

pub fn cmd_detect(
    loaded: &Loaded,
    inputs: &Inputs,
    opts: &DetectOptions,
    out: &Path,
) -> Result<()> {
    let cfg = &loaded.config;
    let mut m = base_manifest("detect", loaded, None)?;
    let (trace, anchors, truth) = inputs.load(cfg, &mut m)?;
    let labels = labels_of(&truth);
    create_dir(out)?;
    let path = out.join(DETECTIONS_FILE);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = LineWriter::new(file);
    m.param("method", opts.method.as_str())?;

    let records = match opts.method {
        DetectMethod::Kalman => {
            let mut recs = kalman_detect(&trace, &cfg.kalman, labels.as_deref());
            if let Some(t) = opts.target_fp {
                let lambda = calibrate(&recs, t)?;
                for r in &mut recs {
                    r.decision = if r.score().is_some_and(|s| s < lambda) {
                        Hypothesis::H1
                    } else {
                        Hypothesis::H0
                    };
                }
                m.param("lambda", lambda)?;
            }
            write_detections_jsonl(&mut w, &recs)?;
            recs
        }
        DetectMethod::Proposed | DetectMethod::Fusion => {
            let pcfg: PipelineConfig = match opts.method {
                DetectMethod::Fusion => location_fusion_config(&cfg.pipeline),
                _ => cfg.pipeline.clone(),
            };
            let frame = trace.frame();
            let mut pipeline = Pipeline::new(pcfg.clone(), &anchors, frame.clone());
            let label = |i: usize| labels.as_ref().and_then(|l| l.get(i).copied());
            match opts.target_fp {
                None => {
                    // Each epoch is written as soon as it is decided.
                    let mut recs = Vec::with_capacity(trace.len());
                    for (i, obs) in trace.epochs.iter().enumerate() {
                        let state = pipeline.process_epoch(obs);
                        let mut r =
                            fuse_epoch(&state, &frame, &pcfg.filter, &pcfg.detector, false).record;
                        r.truth_label = label(i);
                        write_detections_jsonl(&mut w, std::slice::from_ref(&r))?;
                        recs.push(r);
                    }
                    m.param("lambda", pcfg.detector.lambda)?;
                    recs
                }
                Some(t) => {
                    let states = pipeline.process_trace(&trace);
                    let fuse = |det: &gmraim::fusion::DetectorConfig| -> Vec<DetectionRecord> {
                        states
                            .iter()
                            .enumerate()
                            .map(|(i, s)| {
                                let mut r = fuse_epoch(s, &frame, &pcfg.filter, det, false).record;
                                r.truth_label = label(i);
                                r
                            })
                            .collect()
                    };
                    let first = fuse(&pcfg.detector);
                    let mut det = pcfg.detector;
                    det.lambda = calibrate(&first, t)?;
                    m.param("lambda", det.lambda)?;
                    let recs = fuse(&det);
                    write_detections_jsonl(&mut w, &recs)?;
                    recs
                }
            }
        }
    };
    w.flush()?;
    m.output(&path);
    let alarms = records
        .iter()
        .filter(|r| r.decision == Hypothesis::H1)
        .count();
    m.param("alarms", alarms)?;
    m.write(out)?;
    println!(
        "{} epochs, {} alarms, written to {}",
        records.len(),
        alarms,
        path.display()
    );
    Ok(())
}

pub struct RocOptions {
    pub detections: PathBuf,
    pub truth: Option<PathBuf>,
    pub lambdas: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
}

pub fn cmd_roc(loaded: &Loaded, opts: &RocOptions, out: &Path) -> Result<()> {
    let mut m = base_manifest("roc", loaded, None)?;
    let mut records: Vec<DetectionRecord> = read_jsonl(&opts.detections)?;
    m.input(&opts.detections)?;
    if let Some(p) = &opts.truth {
        let truth = read_truth(p)?;
        m.input(p)?;
        if truth.len() != records.len() {
            bail!(
                "truth sidecar has {} epochs, detections have {}",
                truth.len(),
                records.len()
            );
        }
        for (r, t) in records.iter_mut().zip(&truth) {
            r.truth_label = Some(t.label);
        }
    }
    if records.iter().any(|r| r.truth_label.is_none()) {
        bail!("every detection needs a truth label (pass --truth or detect with a truth sidecar)");
    }
    let scores = scored(&records);
    let points = match (&opts.lambdas, &opts.targets) {
        (Some(l), _) => roc_sweep(&scores, l)?,
        (None, Some(t)) => roc_at_targets(&scores, t)?,
        (None, None) => roc_sweep(&scores, &all_thresholds(&scores))?,
    };
    create_dir(out)?;
    let roc = out.join("roc.csv");
    let rel = out.join("likelihood_relation.csv");
    write_roc_csv(&roc, &points)?;
    write_relation_csv(&rel, &points)?;
    m.output(&roc);
    m.output(&rel);
    m.param("points", points.len())?;
    m.write(out)?;
    println!("{} ROC points written to {}", points.len(), out.display());
    Ok(())
}

pub enum CompareSource {
    Seeds(Vec<u64>),
    Files(Inputs),
}

fn print_comparison(rows: &[ComparisonRow]) {
    println!(
        "{:<22} {:>9} {:>12} {:>7} {:>7}",
        "method", "target_fp", "lambda", "p_fp", "p_tp"
    );
    for r in rows {
        println!(
            "{:<22} {:>9.3} {:>12.4e} {:>7.3} {:>7.3}",
            r.method.as_str(),
            r.target_fp,
            r.lambda,
            r.p_fp,
            r.p_tp
        );
    }
}

pub fn cmd_compare(loaded: &Loaded, source: &CompareSource, out: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let targets = &cfg.evaluation.targets;
    if targets.is_empty() {
        bail!("no false-positive targets");
    }
    let mut m = base_manifest("compare", loaded, None)?;
    let per_trace = match source {
        CompareSource::Seeds(seeds) => {
            if seeds.is_empty() {
                bail!("no seeds to compare over");
            }
            m.param("seeds", seeds)?;
            let mut all = Vec::new();
            for &seed in seeds {
                let scenario = cfg.preset.scenario(seed);
                let scenario = gmraim::attacks::ScenarioConfig {
                    seed,
                    attack: gmraim::attacks::AttackSpec {
                        seed: scenario.attack.seed,
                        ..cfg.scenario.attack.clone()
                    },
                    ..cfg.scenario.clone()
                };
                info!("simulating seed {seed}");
                let trace = simulate(&scenario)?;
                all.push(compare_methods(
                    &trace,
                    &cfg.pipeline,
                    &cfg.kalman,
                    targets,
                )?);
            }
            all
        }
        CompareSource::Files(inputs) => {
            let (trace, anchors, truth) = inputs.load(cfg, &mut m)?;
            let Some(truth) = truth else {
                bail!("compare needs a truth sidecar")
            };
            let labeled = LabeledTrace::from_parts(trace, anchors, &truth)?;
            vec![compare_methods(
                &labeled,
                &cfg.pipeline,
                &cfg.kalman,
                targets,
            )?]
        }
    };
    let rows = average_rows(&per_trace);
    create_dir(out)?;
    let path = out.join("comparison.csv");
    write_comparison_csv(&path, &rows)?;
    m.output(&path);
    m.write(out)?;
    print_comparison(&rows);
    Ok(())
}

#[derive(Serialize)]
struct InfraVerdict {
    name: String,
    n_anc: u32,
    n_adv: u32,
    n_min: u32,
    benign_subset_exists: bool,
    benign_fix_exists: bool,
    benign_outnumber: bool,
    benign_count: String,
    adversarial_count: String,
}

#[derive(Serialize)]
struct TheoryReport {
    infrastructures: Vec<InfraVerdict>,
    recovery_guaranteed: bool,
    detection_guaranteed: bool,
    benign_total: String,
    adversarial_total: String,
}

fn verdict(b: bool) -> &'static str {
    if b {
        "guaranteed"
    } else {
        "not guaranteed"
    }
}

pub fn parse_counts_file(path: &Path) -> Result<InfrastructureCounts> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let counts: InfrastructureCounts = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(counts)
}

/// `name:n_anc:n_adv:n_min`.
pub fn parse_infra(s: &str) -> Result<InfrastructureCount, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, a, v, k] = parts.as_slice() else {
        return Err(format!("expected name:n_anc:n_adv:n_min, got `{s}`"));
    };
    let num = |x: &str| x.parse::<u32>().map_err(|e| format!("`{x}`: {e}"));
    InfrastructureCount::new(name, num(a)?, num(v)?, num(k)?).map_err(|e| e.to_string())
}

pub fn cmd_theory_check(
    counts: &InfrastructureCounts,
    json: bool,
    frontier: Option<&Path>,
) -> Result<()> {
    if counts.infrastructures.is_empty() {
        bail!("no infrastructures given");
    }
    let mut infra = Vec::new();
    for c in &counts.infrastructures {
        let l2 = benign_majority(c.n_anc, c.n_adv, c.n_min)?;
        infra.push(InfraVerdict {
            name: c.name.clone(),
            n_anc: c.n_anc,
            n_adv: c.n_adv,
            n_min: c.n_min,
            benign_subset_exists: has_benign_subset(c.n_anc, c.n_adv, c.n_min),
            benign_fix_exists: has_benign_fix(c.n_anc, c.n_adv, c.n_min),
            benign_outnumber: l2.holds,
            benign_count: l2.lhs.to_string(),
            adversarial_count: l2.rhs.to_string(),
        });
    }
    let t2 = detection_guaranteed(counts)?;
    let report = TheoryReport {
        infrastructures: infra,
        recovery_guaranteed: recovery_guaranteed(counts)?,
        detection_guaranteed: t2.holds,
        benign_total: t2.lhs.to_string(),
        adversarial_total: t2.rhs.to_string(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "{:<10} {:>5} {:>5} {:>5} {:>14} {:>11} {:>14} {:>14}",
            "infra",
            "n_anc",
            "n_adv",
            "n_min",
            "benign_subset",
            "benign_fix",
            "benign_count",
            "advers_count"
        );
        for v in &report.infrastructures {
            println!(
                "{:<10} {:>5} {:>5} {:>5} {:>14} {:>11} {:>14} {:>14}",
                v.name,
                v.n_anc,
                v.n_adv,
                v.n_min,
                v.benign_subset_exists,
                v.benign_fix_exists,
                v.benign_count,
                v.adversarial_count
            );
        }
        println!("recovery:  {}", verdict(report.recovery_guaranteed));
        println!(
            "detection: {} (benign {} vs adversarial {})",
            verdict(report.detection_guaranteed),
            report.benign_total,
            report.adversarial_total
        );
    }
    if let Some(path) = frontier {
        let n_anc: Vec<u32> = counts.infrastructures.iter().map(|c| c.n_anc).collect();
        let n_min: Vec<u32> = counts.infrastructures.iter().map(|c| c.n_min).collect();
        let rows = feasibility_frontier(&n_anc, &n_min)?;
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        let names: Vec<String> = counts
            .infrastructures
            .iter()
            .map(|c| format!("n_adv_{}", c.name))
            .collect();
        writeln!(w, "{},recovery,detection,maximal", names.join(","))?;
        for r in rows {
            let adv: Vec<String> = r.n_adv.iter().map(u32::to_string).collect();
            writeln!(
                w,
                "{},{},{},{}",
                adv.join(","),
                r.recovery,
                r.detection,
                r.maximal
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Returns the number of problems found.
pub fn cmd_validate(loaded: &Loaded, inputs: Option<&Inputs>) -> Result<usize> {
    loaded.config.validate()?;
    println!("config: ok");
    let Some(inputs) = inputs else { return Ok(0) };
    let parsed = parse_trace(&inputs.trace, &loaded.config.ingest)
        .with_context(|| format!("reading {}", inputs.trace.display()))?;
    for w in &parsed.warnings {
        println!("warning: {w}");
    }
    let anchors = parse_anchors(&inputs.anchors)
        .with_context(|| format!("reading {}", inputs.anchors.display()))?;
    let mut problems = validate_trace(&parsed.trace.epochs, &anchors);
    let violations = problems.len();
    for v in problems.drain(..) {
        println!("violation: {v}");
    }
    let mut extra = 0;
    if let Some(p) = &inputs.truth {
        let truth = read_truth(p)?;
        if truth.len() != parsed.trace.len() {
            println!(
                "violation: truth sidecar has {} epochs, trace has {}",
                truth.len(),
                parsed.trace.len()
            );
            extra += 1;
        }
    }
    println!(
        "trace: {} epochs, {} anchors, {} problem(s)",
        parsed.trace.len(),
        anchors.len(),
        violations + extra
    );
    Ok(violations + extra)
}

/// Applies `--attack` to a scenario: `none` also removes rogue emitters.
pub fn set_attack_mode(cfg: &mut RunConfig, mode: AttackMode) {
    cfg.scenario.attack.mode = mode;
    if mode == AttackMode::None {
        cfg.scenario.attack.rogue_aps.clear();
        cfg.scenario.attack.auto_rogue = None;
    }
}
