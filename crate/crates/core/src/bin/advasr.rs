use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use advasr::config::Config;
use advasr::data::{Dataset, Manifest, ToyCorpus};
use advasr::experiment::{run_experiment, toy_bank, toy_dataset, ExperimentSpec};
use advasr::score::{parse_hypotheses, score};
use advasr::train::{TrainedModel, Trainer};
use advasr::vocab::Vocabulary;
use advasr_audio::{load_wav, FeatureStats, MelFrontend, RirBank, SAMPLE_RATE};
use advasr_tensor::Checkpoint;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "advasr", about = "Far-field robust sequence-to-sequence speech recognition")]
struct Cli {
    /// Preset name (desk, full, tiny) or path to a config file.
    #[arg(long, global = true, default_value = "desk")]
    config: String,
    /// Overrides the training seed and seeds generated data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Log-mel features for every manifest entry, plus their statistics.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Simulated impulse-response bank split into train/dev/eval.
    SimulateRir,
    /// Synthetic toy corpus with per-split manifests.
    GenCorpus,
    /// Train a recognizer; writes model.ckpt and metrics.jsonl.
    Train {
        /// Corpus directory from gen-corpus; generated from the seed if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Impulse-response bank from simulate-rir; simulated if absent.
        #[arg(long)]
        rirs: Option<PathBuf>,
    },
    /// Greedy transcripts as `id<TAB>hypothesis` lines.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// CER/WER of hypotheses against a manifest.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
    },
    /// The four-row comparison over several training seeds.
    Experiment {
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn out_dir(out: &Option<PathBuf>) -> Result<&Path> {
    let dir = out.as_deref().context("--out is required")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dataset(cfg: &Config, seed: u64, data: Option<&Path>, rirs: Option<&Path>) -> Result<Dataset> {
    if data.is_none() && rirs.is_none() {
        return Ok(toy_dataset(&cfg.data, &cfg.model.vocabulary, seed)?);
    }
    let corpus = match data {
        Some(d) => ToyCorpus::read(d)?,
        None => ToyCorpus::generate(&cfg.data, seed)?,
    };
    let bank = match rirs {
        Some(r) => RirBank::load(r)?,
        None => toy_bank(&cfg.data, seed)?,
    };
    Ok(Dataset::prepare(&corpus, bank, Vocabulary::new(&cfg.model.vocabulary)?)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = Config::load(&cli.config).with_context(|| format!("loading config {}", cli.config))?;
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let seed = cfg.train.seed;
    match &cli.cmd {
        Cmd::Featurize { manifest } => {
            let dir = out_dir(&cli.out)?;
            let m = Manifest::load(manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let frontend = MelFrontend::new(SAMPLE_RATE);
            let mut feats = Vec::with_capacity(m.entries.len());
            for e in &m.entries {
                let f = frontend.extract(&load_wav(m.resolve(base, e))?)?;
                f.save(dir.join(format!("{}.feat", e.id)))?;
                feats.push(f);
            }
            fs::write(dir.join("stats.txt"), FeatureStats::compute(&feats).to_line() + "\n")?;
            eprintln!("featurized {} utterances into {}", feats.len(), dir.display());
        }
        Cmd::SimulateRir => {
            let dir = out_dir(&cli.out)?;
            let bank = toy_bank(&cfg.data, seed)?;
            bank.save(dir)?;
            eprintln!("wrote {} impulse responses to {}", bank.entries.len(), dir.display());
        }
        Cmd::GenCorpus => {
            let dir = out_dir(&cli.out)?;
            let corpus = ToyCorpus::generate(&cfg.data, seed)?;
            let vocab = Vocabulary::new(&cfg.model.vocabulary)?;
            for m in corpus.write(dir)? {
                m.validate(&vocab)?;
            }
            eprintln!("wrote toy corpus to {}", dir.display());
        }
        Cmd::Train { data, rirs } => {
            let dir = out_dir(&cli.out)?;
            let ds = dataset(&cfg, seed, data.as_deref(), rirs.as_deref())?;
            let mut tr = Trainer::new(cfg, &ds)?;
            let outcome = tr.run();
            // metrics survive an aborted run
            fs::write(dir.join("metrics.jsonl"), &tr.metrics)?;
            let outcome = outcome?;
            tr.checkpoint()?.save(dir.join("model.ckpt"))?;
            eprintln!(
                "{} recognizer updates, best dev WER {:.4}{}",
                outcome.theta_updates,
                outcome.best_dev_wer,
                if outcome.stopped_early { " (stopped early)" } else { "" }
            );
        }
        Cmd::Decode { ckpt, manifest } => {
            let tm = TrainedModel::from_checkpoint(&Checkpoint::load(ckpt)?)?;
            let m = Manifest::load(manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let waves = m
                .entries
                .iter()
                .map(|e| Ok((e.id.clone(), load_wav(m.resolve(base, e))?)))
                .collect::<Result<Vec<_>>>()?;
            let text: String = tm.transcribe(&waves)?.into_iter().map(|(id, h)| format!("{id}\t{h}\n")).collect();
            write_or_print(&cli.out, &text)?;
        }
        Cmd::Score { manifest, hyps } => {
            let m = Manifest::load(manifest)?;
            let h: HashMap<String, String> = parse_hypotheses(&fs::read_to_string(hyps)?)?;
            let r = score(m.entries.iter().map(|e| (e.id.as_str(), e.transcript.as_str())), &h)?;
            write_or_print(&cli.out, &r.to_jsonl())?;
            eprintln!("CER {:.2}%  WER {:.2}%", 100.0 * r.cer(), 100.0 * r.wer());
        }
        Cmd::Experiment { seeds } => {
            let dir = out_dir(&cli.out)?;
            let ds = toy_dataset(&cfg.data, &cfg.model.vocabulary, seed)?;
            let spec = ExperimentSpec::new(cfg, seeds.clone());
            let report = run_experiment(&spec, &ds, |r| {
                eprintln!(
                    "{} seed {}: near WER {:.4} far WER {:.4}",
                    r.row.label(),
                    r.seed,
                    r.near.wer(),
                    r.far.wer()
                )
            })?;
            fs::write(dir.join("metrics.jsonl"), report.metrics_jsonl())?;
            fs::write(dir.join("scores.jsonl"), report.scores_jsonl())?;
            let table = report.table();
            fs::write(dir.join("table.txt"), &table)?;
            print!("{table}");
            if report.incomplete() {
                bail!("{} run(s) aborted; report is incomplete", report.failures.len());
            }
        }
    }
    Ok(())
}
