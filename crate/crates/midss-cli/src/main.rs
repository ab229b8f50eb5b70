//! Experiment front-end: dataset generation, training, evaluation, and
//! ablation sweeps over a JSON config with command-line overrides.
//!
//! Precedence: flags > MIDSS_SEED env var > config file > built-in defaults.
//! Exit codes: 0 ok, 1 training/numerical integrity failure, 2 usage or
//! config problem.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use midss::data::{
    generate_dataset, load_dataset, write_dataset, Dataset, DatasetSpec, DomainStyle,
};
use midss::error::{Error, Result};
use midss::metrics::EvalResult;
use midss::network::read_checkpoint;
use midss::trainer::{evaluate_student, run as run_training, MethodFlags, TrainConfig};

/// Everything one experiment needs, serializable for exact reproduction.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ExperimentConfig {
    dataset: DatasetSpec,
    /// One style per domain; empty means the stock set for `dataset.domains`.
    styles: Vec<DomainStyle>,
    train: TrainConfig,
}

#[derive(Parser)]
#[command(name = "midss", version, about = "Mixed-domain semi-supervised segmentation lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain dataset on disk.
    Gen(GenArgs),
    /// Train on a generated dataset; writes checkpoint, CSV trace, report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split (student only).
    Eval(EvalArgs),
    /// Run several ablation rows on a shared dataset and tabulate them.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for images, labels, and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    domains: Option<u32>,
    #[arg(long)]
    n_labeled: Option<usize>,
    #[arg(long)]
    n_unlabeled_per_domain: Option<usize>,
    #[arg(long)]
    n_test_per_domain: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the dataset manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoint, trace, report, resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    t_total: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    batch_labeled: Option<usize>,
    #[arg(long)]
    batch_unlabeled: Option<usize>,
    /// Ablation row: supervised|row1|row2|row3|row4|row5|full.
    #[arg(long)]
    ablation: Option<String>,
    /// Shorthand for --ablation supervised.
    #[arg(long)]
    supervised_only: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated rows, e.g. supervised,row1,full.
    #[arg(long)]
    rows: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_total: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Sweep(a) => cmd_sweep(a),
    };
    match outcome {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: 0, msg: format!("config {}: {e}", path.display()) })
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MIDSS_SEED") {
        Ok(s) => s
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("MIDSS_SEED `{s}` is not a u64"))),
        Err(_) => Ok(None),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = env_seed()? {
        cfg.dataset.seed = seed;
    }
    if let Some(v) = a.seed {
        cfg.dataset.seed = v;
    }
    if let Some(v) = a.domains {
        cfg.dataset.domains = v;
    }
    if let Some(v) = a.n_labeled {
        cfg.dataset.n_labeled = v;
    }
    if let Some(v) = a.n_unlabeled_per_domain {
        cfg.dataset.n_unlabeled_per_domain = v;
    }
    if let Some(v) = a.n_test_per_domain {
        cfg.dataset.n_test_per_domain = v;
    }
    if let Some(v) = a.size {
        cfg.dataset.height = v;
        cfg.dataset.width = v;
    }
    if let Some(v) = a.classes {
        cfg.dataset.classes = v;
    }
    if cfg.styles.is_empty() {
        cfg.styles = DomainStyle::default_set(cfg.dataset.domains);
    }

    if a.out.exists() {
        let occupied = std::fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .next()
            .is_some();
        if occupied && !a.force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                a.out.display()
            )));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let dataset = generate_dataset(&cfg.dataset, &cfg.styles)?;
    let manifest = write_dataset(&dataset, &cfg.dataset, &a.out)?;
    write_resolved_config(&cfg, &a.out)?;
    log::info!(
        "wrote {} records ({} labeled / {} unlabeled / {} test) to {}",
        manifest.records.len(),
        dataset.labeled.len(),
        dataset.unlabeled.len(),
        dataset.test.len(),
        a.out.display()
    );
    Ok(())
}

/// Stamp dataset-derived fields into the train config so the network and
/// augmentations always match the data they see.
fn align_train_config(train: &mut TrainConfig, spec: &DatasetSpec) {
    train.arch.num_classes = spec.classes;
    train.arch.in_channels = 1;
    train.augment.height = spec.height;
    train.augment.width = spec.width;
}

fn apply_train_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Result<()> {
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.tau {
        cfg.train.tau = v;
    }
    if let Some(v) = a.beta {
        cfg.train.beta = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.t_total {
        cfg.train.t_total = v;
    }
    if let Some(v) = a.eval_every {
        cfg.train.eval_every = v;
    }
    if let Some(v) = a.batch_labeled {
        cfg.train.batch_labeled = v;
    }
    if let Some(v) = a.batch_unlabeled {
        cfg.train.batch_unlabeled = v;
    }
    if a.supervised_only {
        cfg.train.flags = MethodFlags::supervised();
    }
    if let Some(row) = &a.ablation {
        cfg.train.flags = MethodFlags::by_name(row)?;
    }
    Ok(())
}

fn write_resolved_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn load_data_checked(manifest: &Path) -> Result<(Dataset, DatasetSpec)> {
    if !manifest.exists() {
        return Err(Error::io(
            manifest,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
        ));
    }
    load_dataset(manifest)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply_train_overrides(&mut cfg, &a)?;
    let (dataset, spec) = load_data_checked(&a.data)?;
    cfg.dataset = spec.clone();
    align_train_config(&mut cfg.train, &spec);

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_resolved_config(&cfg, &a.out)?;
    let report = run_training(&cfg.train, &dataset, &a.out)?;
    log::info!(
        "finished {} iterations; avg test dice {:.4}; artifacts in {}",
        cfg.train.t_total,
        report.final_eval.averages.dc,
        a.out.display()
    );
    println!("avg_test_dice {:.6}", report.final_eval.averages.dc);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (dataset, spec) = load_data_checked(&a.data)?;
    let ck = read_checkpoint(&a.checkpoint)?;
    if ck.student.arch.num_classes != spec.classes {
        return Err(Error::ArchMismatch(format!(
            "checkpoint has {} classes, dataset has {}",
            ck.student.arch.num_classes, spec.classes
        )));
    }
    let result = evaluate_student(&ck.student, &dataset.test)?;
    let json = serde_json::to_string_pretty(&result).expect("report serializes");
    match &a.out {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn sweep_row_csv(row: &str, result: &EvalResult, domains: &[u32]) -> String {
    let mut line = row.to_string();
    for d in domains {
        line.push_str(&format!(",{:.6}", result.mean_dice_over(|x| x == *d)));
    }
    let a = &result.averages;
    line.push_str(&format!(",{:.6},{:.6},{:.6},{:.6}", a.dc, a.jc, a.hd95, a.asd));
    line
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.t_total {
        cfg.train.t_total = v;
    }
    if let Some(v) = a.eval_every {
        cfg.train.eval_every = v;
    }
    let rows: Vec<String> = a.rows.split(',').map(|s| s.trim().to_string()).collect();
    if rows.is_empty() {
        return Err(Error::Config("no sweep rows given".into()));
    }
    let (dataset, spec) = load_data_checked(&a.data)?;
    cfg.dataset = spec.clone();
    align_train_config(&mut cfg.train, &spec);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let mut domains: Vec<u32> = dataset.test.iter().map(|r| r.domain_id).collect();
    domains.sort_unstable();
    domains.dedup();

    let mut lines = Vec::new();
    for row in &rows {
        let flags = MethodFlags::by_name(row)?;
        let row_dir = a.out.join(row);
        let report_path = row_dir.join("report.json");
        let result: EvalResult = if report_path.exists() {
            // Completed rows are skipped; their reports feed the table.
            log::info!("row {row} already has a report, skipping");
            let text =
                std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                offset: 0,
                msg: format!("report {}: {e}", report_path.display()),
            })?
        } else {
            let mut row_cfg = cfg.clone();
            row_cfg.train.flags = flags;
            std::fs::create_dir_all(&row_dir).map_err(|e| Error::io(&row_dir, e))?;
            write_resolved_config(&row_cfg, &row_dir)?;
            run_training(&row_cfg.train, &dataset, &row_dir)?.final_eval
        };
        lines.push(sweep_row_csv(row, &result, &domains));
    }

    let csv_path = a.out.join("sweep.csv");
    let mut csv = String::from("config");
    for d in &domains {
        csv.push_str(&format!(",dc_domain_{d}"));
    }
    csv.push_str(",dc_avg,jc_avg,hd95_avg,asd_avg\n");
    for l in lines {
        csv.push_str(&l);
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    log::info!("sweep table written to {}", csv_path.display());
    Ok(())
}
