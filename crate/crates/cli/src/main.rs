use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mxctc::harness::{
    self, build_vocabularies, data::SyntheticSpec, decode_all, evaluate_wer, load_checkpoint, read_dataset,
    save_checkpoint, write_dataset, DecodeMode, RunConfig,
};
use mxctc::vocab::write_merges;

#[derive(Parser)]
#[command(
    name = "mxctc",
    version,
    about = "CTC training and greedy decoding on synthetic speech-like data"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings layered over the config file, in this order.
#[derive(Args, Default)]
struct Overrides {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// word | letters | hybrid | mixed
    #[arg(long, global = true)]
    mode: Option<String>,
    /// plain | attention | self-attention
    #[arg(long, global = true)]
    head: Option<String>,
    #[arg(long, global = true)]
    tau: Option<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    /// on | off
    #[arg(long, global = true)]
    plm: Option<String>,
    /// on | off
    #[arg(long, global = true)]
    coma: Option<String>,
    /// single | double | triple | word-letter | mixed-single | mixed-double |
    /// mixed-triple | wordpiece | word-oov
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Any other setting, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let flags: [(&str, Option<String>); 8] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("head", self.head.clone()),
            ("tau", self.tau.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("plm", self.plm.clone()),
            ("coma", self.coma.clone()),
            ("scheme", self.scheme.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).with_context(|| format!("--{key}"))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set {kv:?}: expected key=value"))?;
            cfg.set(k, v).with_context(|| format!("--set {kv:?}"))?;
        }
        Ok(())
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build an output-unit inventory from a dataset's transcripts.
    Vocab {
        #[command(subcommand)]
        action: VocabAction,
    },
    /// Synthetic datasets.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// Dataset index file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy-decode a dataset, one hypothesis per line.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write hypotheses here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a dataset and report word error rate.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Subcommand)]
enum VocabAction {
    /// Write `id<TAB>unit<TAB>kind` lines (plus `<out>.merges` for wordpieces).
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DataAction {
    /// Write `train.tsv` and `test.tsv` datasets into a directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
}

fn echo(cfg: &RunConfig) {
    println!("# resolved config");
    for line in cfg.to_text().lines() {
        println!("# {line}");
    }
}

fn transcripts(path: &Path) -> Result<Vec<harness::Utterance>> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vocab {
            action: VocabAction::Build { data, out },
        } => {
            let cfg = cli.overrides.resolve()?;
            echo(&cfg);
            let corpus: Vec<Vec<String>> = transcripts(&data)?.into_iter().map(|u| u.words).collect();
            let (vocab, _) = build_vocabularies(&cfg, &corpus)?;
            fs::write(&out, vocab.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
            if let Some(wp) = vocab.wordpieces() {
                let path = out.with_extension("merges");
                let mut f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                write_merges(&mut f, &wp.merges)?;
            }
            println!(
                "{} units ({}) written to {}",
                vocab.len(),
                vocab.scheme(),
                out.display()
            );
        }
        Command::Data {
            action: DataAction::Gen { out },
        } => {
            let cfg = cli.overrides.resolve()?;
            echo(&cfg);
            let data = harness::generate(&SyntheticSpec::from_config(&cfg))?;
            fs::create_dir_all(&out)?;
            write_dataset(&out.join("train.tsv"), &data.train)?;
            write_dataset(&out.join("test.tsv"), &data.test)?;
            println!(
                "{} train and {} test utterances written to {}",
                data.train.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { data, out } => {
            let cfg = cli.overrides.resolve()?;
            echo(&cfg);
            let train = transcripts(&data)?;
            let outcome = harness::train_run(&cfg, &train, &mut |stage, epoch, loss, _| {
                println!("{stage:?} epoch {epoch}: loss {loss:.6}");
                true
            })?;
            save_checkpoint(&outcome.checkpoint, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Decode { checkpoint, data, out } => {
            let (ckpt, mode) = open_checkpoint(&checkpoint, &cli.overrides)?;
            let utts = transcripts(&data)?;
            let hyps = decode_all(&ckpt, &utts, mode)?;
            let mut text = String::new();
            for h in &hyps {
                text.push_str(&h.join(" "));
                text.push('\n');
            }
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Eval { checkpoint, data } => {
            let (ckpt, mode) = open_checkpoint(&checkpoint, &cli.overrides)?;
            let utts = transcripts(&data)?;
            let hyps = decode_all(&ckpt, &utts, mode)?;
            let refs: Vec<Vec<String>> = utts.into_iter().map(|u| u.words).collect();
            let wer = evaluate_wer(&refs, &hyps)?;
            println!("WER {wer:.2}% over {} utterances", refs.len());
        }
    }
    Ok(())
}

/// Loads a checkpoint; only `--mode` may change how it is decoded.
fn open_checkpoint(path: &Path, overrides: &Overrides) -> Result<(harness::Checkpoint, DecodeMode)> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let mut cfg = ckpt.config.clone();
    if let Some(m) = &overrides.mode {
        cfg.set("mode", m)?;
    }
    echo(&cfg);
    if !cfg.mode.accepts(ckpt.vocab.scheme()) {
        bail!(
            "mode {} cannot decode a {} checkpoint",
            cfg.mode.as_str(),
            ckpt.vocab.scheme()
        );
    }
    Ok((ckpt, cfg.mode))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
