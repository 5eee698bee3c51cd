use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rrr_core::gradcheck::check_all;
use rrr_harness::datasets::{bundled_data_dir, DATA_DIR_ENV};
use rrr_harness::experiments::generate_data;
use rrr_harness::{run_experiment, ExperimentConfig, Report, RunOptions, Stages};

#[derive(Parser, Debug)]
#[command(name = "rrr", version, about = "Train, attack and explain gradient-regularized models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed; overrides `train.seed`. For gradcheck, the only seed checked.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent models and grid points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Dataset directory (digit IDX files, UCI CSVs).
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Materialize the configured train/test splits as binary containers.
    GenData,
    /// Train the configured roster.
    Train,
    /// Train the roster and run every configured attack across it.
    Attack,
    /// Run find-another-explanation.
    Fae,
    /// Run the λ sweep and data-efficiency curves.
    Sweep,
    /// Run every configured section and write the full report.
    Report,
    /// Compare automatic and numerical gradients for every objective.
    Gradcheck,
    /// Train the roster and write image dumps.
    Dump,
}

fn stages(c: Command) -> Stages {
    let mut s = Stages::none();
    match c {
        Command::Train => s.train = true,
        Command::Attack => s.attack = true,
        Command::Fae => s.fae = true,
        Command::Sweep => {
            s.sweep = true;
            s.efficiency = true;
        }
        Command::Report => s = Stages::all(),
        Command::Dump => s.dump = true,
        Command::GenData | Command::Gradcheck => {}
    }
    s
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let Some(path) = &cli.config else {
        bail!("--config is required for this command");
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = Some(seed);
    }
    Ok(cfg)
}

fn gradcheck(cli: &Cli) -> Result<bool> {
    let seeds = match cli.seed {
        Some(s) => vec![s],
        None => vec![0, 1, 2],
    };
    let mut all = Vec::new();
    for seed in seeds {
        all.extend(check_all(seed)?);
    }
    for c in &all {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<22} seed {} rel_error {:.3e} (< {:e})", c.name, c.seed, c.rel_error, c.tolerance);
    }
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let path = dir.join("gradcheck.json");
        std::fs::write(&path, serde_json::to_string_pretty(&all)? + "\n").with_context(|| path.display().to_string())?;
    }
    Ok(all.iter().all(|c| c.passed()))
}

fn summarize(report: &Report) {
    for m in &report.models {
        println!("model {:<16} train {:.4} test {:.4}", m.name, m.train_accuracy, m.test_accuracy);
    }
    for a in &report.attacks {
        println!("attack {:?} epsilon {} (rows: source, columns: evaluated model)", a.spec.kind, a.spec.epsilon);
        for row in &a.rows {
            let cells: Vec<String> = row.cells.iter().map(|c| format!("{:.4}", c.accuracy)).collect();
            println!("  {:<16} {}", row.source, cells.join(" "));
        }
    }
    if let Some(f) = &report.fae {
        for it in &f.iterations {
            println!("fae {} lambda1 {} test {:.4}", it.index, it.lambda1, it.test_accuracy);
        }
        for p in &f.pair_cosines {
            println!("fae pair {}-{} mean |cos| {:.4}", p.a, p.b, p.mean_abs_cosine);
        }
    }
    for p in report.sweep.iter().flatten() {
        match (p.test_accuracy, &p.failure) {
            (Some(acc), _) => println!("sweep lambda1 {:e} ratio {:.3e} test {:.4}", p.lambda1, p.ratio, acc),
            (None, f) => println!("sweep lambda1 {:e} failed: {}", p.lambda1, f.as_deref().unwrap_or("")),
        }
    }
    for p in report.efficiency.iter().flatten() {
        let acc = p.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "failed".into());
        println!("efficiency {} n {} seed {} test {acc}", p.variant.name(), p.n, p.seed);
    }
}

fn data_root(cli: &Cli) -> PathBuf {
    cli.data_dir.clone().unwrap_or_else(bundled_data_dir)
}

fn run(cli: &Cli) -> Result<bool> {
    match cli.command {
        Command::Gradcheck => gradcheck(cli),
        Command::GenData => {
            let cfg = load_config(cli)?;
            let out = cli.out.clone().or(cfg.output.clone()).unwrap_or_else(|| Path::new("out").to_path_buf());
            let splits = generate_data(&cfg, &data_root(cli), &out)?;
            println!(
                "wrote {} train / {} test rows to {}",
                splits.train.len(),
                splits.test.len(),
                out.display()
            );
            Ok(true)
        }
        c => {
            let cfg = load_config(cli)?;
            let opts = RunOptions {
                out: cli.out.clone(),
                jobs: cli.jobs,
                data_root: data_root(cli),
                stages: stages(c),
            };
            let report = run_experiment(&cfg, &opts)?;
            summarize(&report);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
