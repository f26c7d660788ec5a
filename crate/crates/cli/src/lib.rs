//! `mibench` command-line front end: dataset generation, benchmark runs,
//! report aggregation and config validation.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numeric
//! failure during training, 4 I/O or file-format error.

pub mod config;
mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mibench_core::datagen::{
    sample_gaussian_pair, write_embedding_file, DatasetManifest, DatasetSpec, EmbeddingSampler,
    ImageComposer, SourceBank,
};
use mibench_core::harness::{
    estimate_ratio, run_benchmark, summarize, write_records_csv, write_summary_json, RunConfig,
    SummaryDocument,
};
use mibench_core::rng;
use rand::Rng;
use rayon::prelude::*;

pub use config::{apply_override, BenchmarkConfigFile, CONFIG_SCHEMA_VERSION};
pub use report::{cmd_report, ReportOutput};

pub const DATA_DIR_ENV: &str = "MIBENCH_DATA_DIR";
pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS: &str = "train-labels-idx1-ubyte";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mibench_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(e) if e.is_io() => 4,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mibench", version, about = "Benchmark neural mutual information estimators on data with known MI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Benchmark config file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `--set schedule.0.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a sample of the configured dataset as embedding files plus a manifest.
    Generate(CommonArgs),
    /// Train every configured (critic, estimator) pair and write CSV/JSON results.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Validate and print the resolved schedule without training.
        #[arg(long)]
        dry_run: bool,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate run summaries into an MSE table and ratio-vs-MI plot data.
    Report {
        /// Summary JSON files or directories containing them.
        inputs: Vec<PathBuf>,
        /// Directory for the aggregate CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and list the runs it expands to.
    Validate(CommonArgs),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate(c) => cmd_generate(&load(&c)?),
        Command::Run { common, dry_run, jobs } => cmd_run(&load(&common)?, dry_run, jobs).map(|_| ()),
        Command::Report { inputs, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            let r = cmd_report(&inputs, &out)?;
            print!("{}", r.table);
            Ok(())
        }
        Command::Validate(c) => cmd_validate(&load(&c)?),
    }
}

/// Loads a config and applies the `--seed` / `--out` / `--set` overrides.
pub fn load(args: &CommonArgs) -> Result<BenchmarkConfigFile, CliError> {
    let mut sets = args.set.clone();
    if let Some(s) = args.seed {
        sets.push(format!("seed={s}"));
    }
    let mut file = BenchmarkConfigFile::load(&args.config, &sets)?;
    if let Some(out) = &args.out {
        file.output.dir = out.clone();
    }
    Ok(file)
}

/// Builds the digit/background bank an image dataset needs. Real IDX digits
/// come from `data.digits_dir` or `$MIBENCH_DATA_DIR`; otherwise a synthetic
/// glyph bank is used.
pub fn load_source_bank(file: &BenchmarkConfigFile) -> Result<Option<SourceBank>, CliError> {
    let DatasetSpec::Image(spec) = &file.dataset else {
        return Ok(None);
    };
    let env_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    let digits_dir = file.data.digits_dir.clone().or_else(|| {
        env_dir
            .clone()
            .filter(|d| d.join(MNIST_IMAGES).is_file() && d.join(MNIST_LABELS).is_file())
    });
    let mut bank = match digits_dir {
        Some(dir) => SourceBank::from_idx(dir.join(MNIST_IMAGES), dir.join(MNIST_LABELS), &spec.class_pair)?,
        None => {
            if spec.class_pair.iter().any(|c| *c > 1) {
                return Err(CliError::Config(format!(
                    "dataset.class_pair: classes {:?} need IDX digit files (set data.digits_dir or {DATA_DIR_ENV})",
                    spec.class_pair
                )));
            }
            log::warn!("no IDX digit files found; using the synthetic glyph bank");
            SourceBank::synthetic_digits(file.data.synthetic_digits_per_class, file.seed)
        }
    };
    if spec.eta > 0.0 {
        let bg_dir = file
            .data
            .backgrounds_dir
            .clone()
            .or_else(|| env_dir.map(|d| d.join("backgrounds")).filter(|d| d.is_dir()));
        let backgrounds = match bg_dir {
            Some(dir) => SourceBank::load_backgrounds(&dir, spec.side)?,
            None => SourceBank::synthetic_backgrounds(file.data.synthetic_backgrounds, spec.side, file.seed),
        };
        bank.set_backgrounds(backgrounds);
    }
    Ok(Some(bank))
}

pub fn cmd_validate(file: &BenchmarkConfigFile) -> Result<(), CliError> {
    file.dataset.validate()?;
    let runs = file.run_configs()?;
    println!("ok: {} run(s)", runs.len());
    for rc in &runs {
        println!("  {}  {}", rc.config_hash(), run_name(rc));
    }
    Ok(())
}

pub fn cmd_generate(file: &BenchmarkConfigFile) -> Result<(), CliError> {
    file.dataset.validate()?;
    let rows = file.generate.rows;
    if rows == 0 {
        return Err(CliError::Config("generate.rows: must be at least 1".into()));
    }
    let bank = load_source_bank(file)?;
    let mut data_rng = rng::stream(file.seed, rng::purpose::DATA);
    let batch = match &file.dataset {
        DatasetSpec::Gaussian(s) => sample_gaussian_pair(s, rows, &mut data_rng)?,
        DatasetSpec::Image(s) => {
            ImageComposer::new(s, bank.as_ref().expect("image bank"))?.sample(rows, &mut data_rng)?
        }
        DatasetSpec::Embedding(s) => {
            let seed = rng::stream(file.seed, rng::purpose::BANK).random::<u64>();
            EmbeddingSampler::new(s, seed)?.sample(rows, &mut data_rng)?
        }
    };
    let dir = &file.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_embedding_file(dir.join("x.bin"), &batch.x)?;
    write_embedding_file(dir.join("y.bin"), &batch.y)?;
    let mut manifest = DatasetManifest::new(&file.dataset, file.seed, rows)?;
    manifest.files = vec!["x.bin".into(), "y.bin".into()];
    if batch.class_bits_x.sources() > 0 {
        write_bits(&dir.join("class_bits_x.csv"), batch.class_bits_x.as_slice(), batch.class_bits_x.sources())?;
        write_bits(&dir.join("class_bits_y.csv"), batch.class_bits_y.as_slice(), batch.class_bits_y.sources())?;
        manifest.files.extend(["class_bits_x.csv".into(), "class_bits_y.csv".into()]);
    }
    manifest.source_bank = bank.map(|b| b.provenance().to_string());
    manifest.write(dir.join("manifest.json"))?;
    println!(
        "wrote {rows} pairs to {} (true MI {:.6} bits)",
        dir.display(),
        manifest.true_mi_bits
    );
    Ok(())
}

fn write_bits(path: &Path, bits: &[bool], width: usize) -> Result<(), CliError> {
    let mut text = String::with_capacity(bits.len() * 2);
    for row in bits.chunks(width) {
        let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `<dataset>-<critic>-<estimator>-s<seed>-<hash>`.
pub fn run_name(rc: &RunConfig) -> String {
    format!(
        "{}-{}-{}-s{}-{}",
        rc.dataset.family(),
        rc.critic.kind.name(),
        rc.estimator,
        rc.seed,
        rc.config_hash()
    )
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub name: String,
    pub csv: PathBuf,
    pub summary: PathBuf,
}

pub fn cmd_run(file: &BenchmarkConfigFile, dry_run: bool, jobs: usize) -> Result<Vec<ReportBundle>, CliError> {
    let runs = file.run_configs()?;
    if dry_run {
        println!("dry run: {} run(s), nothing written", runs.len());
        if let Some(rc) = runs.first() {
            println!("warmup: {} steps", rc.warmup_steps);
            for (i, l) in rc.schedule.iter().enumerate() {
                println!("level {i}: {} bits x {} steps", l.mi_bits, l.steps);
            }
        }
        for rc in &runs {
            println!("  {}", run_name(rc));
        }
        return Ok(Vec::new());
    }
    let bank = load_source_bank(file)?;
    let dir = &file.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let results: Vec<Result<(ReportBundle, SummaryDocument), CliError>> = pool.install(|| {
        runs.par_iter()
            .map(|rc| execute_run(rc, file, bank.as_ref()))
            .collect()
    });

    let mut bundles = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok((bundle, doc)) => {
                print_summary(&bundle.name, &doc);
                bundles.push(bundle);
            }
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(bundles),
    }
}

fn execute_run(
    rc: &RunConfig,
    file: &BenchmarkConfigFile,
    bank: Option<&SourceBank>,
) -> Result<(ReportBundle, SummaryDocument), CliError> {
    let name = run_name(rc);
    let records = run_benchmark(rc, bank)?;
    let dir = &file.output.dir;
    let csv = dir.join(format!("{name}.csv"));
    let f = File::create(&csv).map_err(|e| CliError::io(&csv, e))?;
    write_records_csv(BufWriter::new(f), &records, &rc.config_hash(), rc.seed)
        .map_err(|e| CliError::io(&csv, e))?;
    let doc = SummaryDocument::new(rc, summarize(&records, file.window));
    let summary = dir.join(format!("{name}.summary.json"));
    write_summary_json(&summary, &doc)?;
    Ok((ReportBundle { name, csv, summary }, doc))
}

fn print_summary(name: &str, doc: &SummaryDocument) {
    println!("{name}");
    println!("  {:>8} {:>10} {:>10} {:>10} {:>10} {:>8}", "true", "mean", "bias", "var", "mse", "ratio");
    for s in &doc.slices {
        let b = &s.bits;
        let ratio = estimate_ratio(s).map_or_else(|| "-".to_string(), |r| format!("{r:.3}"));
        println!(
            "  {:>8.3} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            b.true_mi, b.mean_estimate, b.bias, b.variance, b.mse, ratio
        );
    }
}
