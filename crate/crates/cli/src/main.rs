use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mrsr::data::{load_dataset, synth_generate, write_dataset, Dataset, SplitFractions, SynthSpec};
use mrsr::harness::{
    emit_report, evaluate_sweep, plan_cells, prepare_dataset, run_ablation, run_experiment_with, substitute_noisy_text,
    train, EvalReport, ExperimentConfig, NoisyScope, NoisyText,
};
use mrsr::metrics::{bleu, corpus_wer, tokenize, TextPair};
use mrsr::model::{load_checkpoint, save_checkpoint, Variant};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mrsr", version, about = "Shared-representation meme classifier toolkit")]
struct Cli {
    /// Experiment config (TOML); unset fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's seed list with this single seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for seed × fold cells (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest (JSON)
    #[arg(long)]
    data: PathBuf,

    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct NoisyArgs {
    /// Manifest whose text embeddings replace the clean ones, matched by record id
    #[arg(long)]
    noisy: Option<PathBuf>,

    #[arg(long, default_value = "both", requires = "noisy")]
    scope: NoisyScope,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the first cell for the seed and save its checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a checkpoint on the test records at every configured level
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Full availability sweep over seeds × folds for one variant
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        noisy: NoisyArgs,
    },
    /// Sweep both SR and FR under one config
    Ablate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic dataset
    Synth {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        rho_text: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_image: f64,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Tag records train/val/test with these per-class fractions, e.g. `0.6,0.2`
        #[arg(long, value_parser = parse_splits)]
        splits: Option<SplitFractions>,
        /// Manifest path; the store is written alongside with a `.mreb` extension
        #[arg(long)]
        out: PathBuf,
    },
    /// Text similarity between line-aligned reference and hypothesis files
    Metrics {
        #[arg(value_parser = ["wer", "bleu"])]
        metric: String,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Validate a report file and print it as a table
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_splits(s: &str) -> Result<SplitFractions, String> {
    let (train, val) = s.split_once(',').ok_or("expected TRAIN,VAL")?;
    Ok(SplitFractions {
        train: train.trim().parse().map_err(|e| format!("{e}"))?,
        val: val.trim().parse().map_err(|e| format!("{e}"))?,
    })
}

fn load_config(cli: &Cli, variant: Option<Variant>) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(v) = variant {
        config.variant = v;
    }
    config.validate()?;
    Ok(config)
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn write_report(report: &EvalReport, out_dir: &Path, stem: &str) -> anyhow::Result<()> {
    let paths = emit_report(report, out_dir, stem)?;
    print!("{}", report.to_table());
    eprintln!("wrote {} and {}", paths.jsonl.display(), paths.table.display());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { data } => {
            let config = load_config(cli, data.variant)?;
            let dataset = prepare_dataset(&config, &load(&data.data)?)?;
            let cell = plan_cells(&config, &dataset)?
                .into_iter()
                .next()
                .context("no training cell")?;
            let outcome = train(
                &config,
                &dataset.with_records(dataset.subset(&cell.train))?,
                &dataset.with_records(dataset.subset(&cell.val))?,
                cell.seed,
            )?;
            fs::create_dir_all(&cli.out_dir)?;
            let stem = format!("{}-seed{}", config.variant.as_str().to_lowercase(), cell.seed);
            let ckpt = cli.out_dir.join(format!("{stem}.mrsr"));
            save_checkpoint(&ckpt, &outcome.model, Some(&outcome.optimizer))?;
            let history: String = outcome
                .history
                .iter()
                .map(|h| serde_json::to_string(h).map(|l| l + "\n"))
                .collect::<Result<_, _>>()?;
            fs::write(cli.out_dir.join(format!("{stem}.history.jsonl")), history)?;
            println!(
                "{}",
                json!({
                    "checkpoint": ckpt,
                    "steps": outcome.total_steps,
                    "best_epoch": outcome.best_epoch,
                    "val_scores": outcome.val_scores,
                    "final_loss": outcome.history.last().map(|h| h.loss),
                })
            );
        }
        Command::Eval { data, checkpoint } => {
            let config = load_config(cli, data.variant)?;
            let dataset = prepare_dataset(&config, &load(&data.data)?)?;
            let model = load_checkpoint(checkpoint)?.model;
            if data.variant.is_some_and(|v| v != model.variant()) {
                bail!("checkpoint holds a {} model", model.variant());
            }
            let cell = plan_cells(&config, &dataset)?
                .into_iter()
                .next()
                .context("no evaluation cell")?;
            let test = dataset.with_records(dataset.subset(&cell.test))?;
            for p in evaluate_sweep(&model, &test, &config.levels, config.mask_seed)? {
                println!("{}", serde_json::to_string(&p)?);
            }
        }
        Command::Sweep { data, noisy } => {
            let config = load_config(cli, data.variant)?;
            let clean = load(&data.data)?;
            let substituted = match &noisy.noisy {
                Some(path) => {
                    let (ds, count) = substitute_noisy_text(&clean, &load(path)?)?;
                    eprintln!("substituted text for {count} of {} records", clean.len());
                    Some(ds)
                }
                None => None,
            };
            let noisy = substituted.as_ref().map(|dataset| NoisyText {
                dataset,
                scope: noisy.scope,
            });
            let report = run_experiment_with(&config, &clean, noisy)?;
            write_report(
                &report,
                &cli.out_dir,
                &format!("sweep-{}", config.variant.as_str().to_lowercase()),
            )?;
        }
        Command::Ablate { data } => {
            let config = load_config(cli, None)?;
            if data.variant.is_some() {
                bail!("ablate always runs both variants");
            }
            let report = run_ablation(&config, &load(&data.data)?)?;
            write_report(&report, &cli.out_dir, "ablation")?;
        }
        Command::Synth {
            classes,
            per_class,
            dim,
            rho_text,
            rho_image,
            sigma,
            splits,
            out,
        } => {
            let spec = SynthSpec {
                classes: *classes,
                per_class: *per_class,
                dim: *dim,
                rho_text: *rho_text,
                rho_image: *rho_image,
                sigma: *sigma,
                seed: cli.seed.unwrap_or(0),
                splits: *splits,
            };
            let dataset = synth_generate(&spec)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let store = out.with_extension("mreb");
            write_dataset(&dataset, out, &store, None)?;
            println!(
                "{}",
                json!({"manifest": out, "store": store, "records": dataset.len(), "hash": dataset.content_hash()})
            );
        }
        Command::Metrics { metric, reference, hyp } => {
            let refs = fs::read_to_string(reference).with_context(|| format!("reading {}", reference.display()))?;
            let hyps = fs::read_to_string(hyp).with_context(|| format!("reading {}", hyp.display()))?;
            let (refs, hyps): (Vec<&str>, Vec<&str>) = (refs.lines().collect(), hyps.lines().collect());
            if refs.len() != hyps.len() {
                bail!("{} reference lines but {} hypothesis lines", refs.len(), hyps.len());
            }
            let value = if metric == "wer" {
                let pairs: Vec<TextPair> = refs.iter().zip(&hyps).map(|(r, h)| TextPair::new(r, h)).collect();
                corpus_wer(&pairs)?
            } else {
                let r: Vec<Vec<String>> = refs.iter().map(|l| tokenize(l)).collect();
                let h: Vec<Vec<String>> = hyps.iter().map(|l| tokenize(l)).collect();
                bleu(&r, &h)?
            };
            println!("{}", json!({"metric": metric, "value": value, "pairs": refs.len()}));
        }
        Command::Report { input } => {
            let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            print!("{}", EvalReport::from_jsonl(&text)?.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"kind": "config", "message": e.to_string()}}));
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<mrsr::Error>().map_or("cli", mrsr::Error::kind);
            eprintln!("{}", json!({"error": {"kind": kind, "message": format!("{e:#}")}}));
            ExitCode::FAILURE
        }
    }
}
