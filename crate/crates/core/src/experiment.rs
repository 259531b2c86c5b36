//! The four-row comparison (plain recognizer, far-field augmentation, L1
//! enhancer, WGAN enhancer) over several seeds, evaluated on near- and
//! far-field copies of the eval split, plus the lambda sweep helper.

use std::fmt::Write as _;

use advasr_audio::{BankSizes, RirBank, SAMPLE_RATE};
use serde::Serialize;

use crate::config::{Config, DataConfig, EnhancerMode};
use crate::data::{Dataset, ToyCorpus};
use crate::error::{Error, Result};
use crate::score::ScoreReport;
use crate::train::{stream, Trainer};
use crate::vocab::Vocabulary;

const STREAM_BANK: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Row {
    Baseline,
    Augmented,
    L1,
    Wgan,
}

impl Row {
    pub const ALL: [Row; 4] = [Row::Baseline, Row::Augmented, Row::L1, Row::Wgan];

    pub fn label(self) -> &'static str {
        match self {
            Row::Baseline => "seq-to-seq",
            Row::Augmented => "+ far-field augmentation",
            Row::L1 => "+ L1-distance penalty",
            Row::Wgan => "+ GAN enhancer",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Row::Baseline => "baseline",
            Row::Augmented => "augmented",
            Row::L1 => "l1",
            Row::Wgan => "wgan",
        }
    }

    /// The run configuration for this row. The baseline never sees
    /// reverberated audio; the other rows share the augmentation fraction.
    /// Wall-clock time stays out of the metrics so reruns are identical.
    pub fn configure(self, base: &Config, augment_prob: f64, seed: u64) -> Config {
        let mut c = base.clone();
        c.train.seed = seed;
        c.train.log_wall_time = false;
        c.train.augment_prob = augment_prob;
        c.enhancer.mode = match self {
            Row::Baseline | Row::Augmented => EnhancerMode::None,
            Row::L1 => EnhancerMode::L1,
            Row::Wgan => EnhancerMode::Wgan,
        };
        if self == Row::Baseline {
            c.train.augment_prob = 0.0;
        }
        c
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    /// Model preset and enhancer settings shared by every row.
    pub config: Config,
    pub augment_prob: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
}

impl ExperimentSpec {
    pub fn new(config: Config, seeds: Vec<u64>) -> Self {
        Self {
            augment_prob: config.train.augment_prob,
            config,
            seeds,
            rows: Row::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return Err(Error::Config(format!("augmentation fraction {} outside [0, 1]", self.augment_prob)));
        }
        if self.rows.is_empty() {
            return Err(Error::Config("experiment needs at least one row".into()));
        }
        self.config.enhancer.validate()
    }
}

/// Toy corpus and impulse-response bank derived from one seed.
pub fn toy_dataset(cfg: &DataConfig, vocabulary: &str, seed: u64) -> Result<Dataset> {
    let corpus = ToyCorpus::generate(cfg, seed)?;
    let bank = toy_bank(cfg, seed)?;
    Dataset::prepare(&corpus, bank, Vocabulary::new(vocabulary)?)
}

pub fn toy_bank(cfg: &DataConfig, seed: u64) -> Result<RirBank> {
    let sizes = BankSizes {
        train: cfg.rir_train,
        dev: cfg.rir_dev,
        eval: cfg.rir_eval,
    };
    Ok(RirBank::generate(&mut stream(seed, STREAM_BANK), cfg.rooms, sizes, SAMPLE_RATE)?)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub row: Row,
    pub seed: u64,
    pub near: ScoreReport,
    pub far: ScoreReport,
    pub theta_updates: u64,
    pub outer_steps: u64,
    pub best_dev_wer: f64,
    pub stopped_early: bool,
    pub metrics: String,
}

impl RunResult {
    pub fn gap(&self) -> f64 {
        self.far.wer() - self.near.wer()
    }
}

#[derive(Clone, Debug)]
pub struct RunFailure {
    pub row: Row,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    NearCer,
    NearWer,
    FarCer,
    FarWer,
    /// Far-field minus near-field WER.
    Gap,
}

impl Metric {
    fn of(self, r: &RunResult) -> f64 {
        match self {
            Metric::NearCer => r.near.cer(),
            Metric::NearWer => r.near.wer(),
            Metric::FarCer => r.far.cer(),
            Metric::FarWer => r.far.wer(),
            Metric::Gap => r.gap(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

impl ExperimentReport {
    /// Any run aborted, so some cells are missing or rest on fewer seeds.
    pub fn incomplete(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn runs_of(&self, row: Row) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.row == row)
    }

    /// Median of `metric` over the seeds of `row`; per-seed values first for
    /// the gap.
    pub fn median(&self, row: Row, metric: Metric) -> Option<f64> {
        let mut v: Vec<f64> = self.runs_of(row).map(|r| metric.of(r)).collect();
        median(&mut v)
    }

    /// Table of median CER/WER in percent, per-seed values underneath.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>9} {:>9} {:>9} {:>9}", "Model", "Near CER", "Near WER", "Far CER", "Far WER");
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut rows: Vec<Row> = Vec::new();
        for r in self.runs.iter().map(|r| r.row).chain(self.failures.iter().map(|f| f.row)) {
            if !rows.contains(&r) {
                rows.push(r);
            }
        }
        rows.sort_by_key(|r| Row::ALL.iter().position(|x| x == r));
        for row in rows {
            let _ = writeln!(
                s,
                "{:<28} {:>9} {:>9} {:>9} {:>9}",
                row.label(),
                pct(self.median(row, Metric::NearCer)),
                pct(self.median(row, Metric::NearWer)),
                pct(self.median(row, Metric::FarCer)),
                pct(self.median(row, Metric::FarWer)),
            );
            for r in self.runs_of(row) {
                let _ = writeln!(
                    s,
                    "{:<28} {:>9} {:>9} {:>9} {:>9}",
                    format!("  seed {}", r.seed),
                    pct(Some(r.near.cer())),
                    pct(Some(r.near.wer())),
                    pct(Some(r.far.cer())),
                    pct(Some(r.far.wer())),
                );
            }
        }
        for f in &self.failures {
            let _ = writeln!(s, "FAILED {} seed {}: {}", f.row.label(), f.seed, f.error);
        }
        if self.incomplete() {
            let _ = writeln!(s, "INCOMPLETE: {} run(s) aborted", self.failures.len());
        }
        s
    }

    /// Line-delimited score records: one per (run, split, utterance), one
    /// total per (run, split), then the row medians.
    pub fn scores_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            for (split, rep) in [("near", &r.near), ("far", &r.far)] {
                for u in &rep.utterances {
                    let rec = serde_json::json!({"row": r.row, "seed": r.seed, "split": split, "utterance": u});
                    let _ = writeln!(s, "{rec}");
                }
                let rec = serde_json::json!({
                    "row": r.row, "seed": r.seed, "split": split, "total": true,
                    "cer": rep.cer(), "wer": rep.wer(), "utterances": rep.utterances.len(),
                });
                let _ = writeln!(s, "{rec}");
            }
        }
        for row in Row::ALL {
            if self.runs_of(row).next().is_none() {
                continue;
            }
            let rec = serde_json::json!({
                "row": row, "median": true,
                "near_cer": self.median(row, Metric::NearCer), "near_wer": self.median(row, Metric::NearWer),
                "far_cer": self.median(row, Metric::FarCer), "far_wer": self.median(row, Metric::FarWer),
                "gap": self.median(row, Metric::Gap),
            });
            let _ = writeln!(s, "{rec}");
        }
        for f in &self.failures {
            let _ = writeln!(s, "{}", serde_json::json!({"row": f.row, "seed": f.seed, "failed": f.error}));
        }
        let _ = writeln!(s, "{}", serde_json::json!({"complete": !self.incomplete()}));
        s
    }

    /// Every run's metrics stream, each preceded by a header record.
    pub fn metrics_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            let head = serde_json::json!({
                "run": r.row, "seed": r.seed, "theta_updates": r.theta_updates,
                "outer_steps": r.outer_steps, "best_dev_wer": r.best_dev_wer, "stopped_early": r.stopped_early,
            });
            let _ = writeln!(s, "{head}");
            s.push_str(&r.metrics);
        }
        s
    }
}

/// Trains and scores one row for one seed.
pub fn run_one(spec: &ExperimentSpec, data: &Dataset, row: Row, seed: u64) -> Result<RunResult> {
    let cfg = row.configure(&spec.config, spec.augment_prob, seed);
    let mut tr = Trainer::new(cfg, data)?;
    let out = tr.run()?;
    Ok(RunResult {
        row,
        seed,
        near: tr.evaluate(&data.eval, false)?,
        far: tr.evaluate(&data.eval, true)?,
        theta_updates: out.theta_updates,
        outer_steps: out.outer_steps,
        best_dev_wer: out.best_dev_wer,
        stopped_early: out.stopped_early,
        metrics: out.metrics,
    })
}

/// Every configured row for every seed. A run that aborts is recorded and
/// the rest still run, leaving a report flagged incomplete. `progress` sees
/// each finished run.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data: &Dataset,
    mut progress: impl FnMut(&RunResult),
) -> Result<ExperimentReport> {
    spec.validate()?;
    data.check_leaks()?;
    let mut report = ExperimentReport::default();
    for &seed in &spec.seeds {
        for &row in &spec.rows {
            match run_one(spec, data, row, seed) {
                Ok(r) => {
                    progress(&r);
                    report.runs.push(r);
                }
                Err(e) => report.failures.push(RunFailure {
                    row,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(report)
}

/// `points` values evenly spaced in log scale over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        return Err(Error::Config(format!("log grid needs 0 < lo <= hi and points >= 1, got [{lo}, {hi}] x {points}")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub dev_wer: f64,
}

/// Trains `base` once per lambda and picks the one with the lowest dev WER
/// (the first on ties). Eval data is never read.
pub fn sweep_lambda(base: &Config, data: &Dataset, grid: &[f64]) -> Result<(f64, Vec<SweepPoint>)> {
    if base.enhancer.mode == EnhancerMode::None {
        return Err(Error::WrongMode {
            expected: "l1 or wgan",
            found: base.enhancer.mode.to_string(),
        });
    }
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    data.check_leaks()?;
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut c = base.clone();
        c.enhancer.lambda = lambda;
        let mut tr = Trainer::new(c, data)?;
        let out = tr.run()?;
        points.push(SweepPoint {
            lambda,
            dev_wer: out.best_dev_wer,
        });
    }
    let best = points
        .iter()
        .fold(None::<&SweepPoint>, |b, p| match b {
            Some(b) if b.dev_wer <= p.dev_wer => Some(b),
            _ => Some(p),
        })
        .map(|p| p.lambda)
        .expect("non-empty grid");
    Ok((best, points))
}
