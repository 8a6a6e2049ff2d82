use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nas_core::eval::retrain_discrete;
use nas_core::Genotype;
use nas_harness::config::ExperimentConfig;
use nas_harness::experiment::{baseline_csv, prepare_data, random_baseline, run_experiment, TrialReport};
use nas_harness::plot::plot_history;
use nas_harness::report::{aggregate, aggregate_text, load_reports, write_aggregate};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nas", about = "Differentiable architecture search on small tabular tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured arms over all seeds.
    Search { config: PathBuf },
    /// Same as search, plus the random-genotype baseline when configured.
    Ablate { config: PathBuf },
    /// Search with periodic genotype checkpoints (`extended.every`).
    Extended { config: PathBuf },
    /// Retrain a saved genotype from scratch and report test error.
    Eval { genotype: PathBuf, config: PathBuf },
    /// Render SVG plots from a history directory.
    Plot {
        history: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Aggregate every report.json below a directory.
    Report { dir: PathBuf },
}

fn finish(out: &Path, reports: &[TrialReport]) -> anyhow::Result<bool> {
    let rows = aggregate(reports);
    write_aggregate(out, &rows)?;
    print!("{}", aggregate_text(&rows));
    let failed: Vec<_> = reports.iter().filter(|r| !r.ok).collect();
    for r in &failed {
        eprintln!("failed: {} seed {}: {}", r.arm, r.seed, r.error.as_deref().unwrap_or("unknown"));
    }
    Ok(failed.is_empty())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Search { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let reports = run_experiment(&cfg, None)?;
            finish(&cfg.output_dir, &reports)
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let reports = run_experiment(&cfg, None)?;
            if cfg.random_genotypes > 0 {
                let space = cfg.search_config(cfg.arms[0], cfg.seeds[0])?.space;
                let data = prepare_data(&cfg.dataset, cfg.test_size)?;
                let entries = random_baseline(&space, &cfg, &data, cfg.random_genotypes)?;
                let dir = cfg.output_dir.join("baseline");
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("random.csv"), baseline_csv(&entries))?;
                let errs: Vec<f64> = entries.iter().map(|e| e.test_error).collect();
                let (m, s) = nas_harness::report::mean_std(&errs);
                println!("random genotypes ({}): {:.2} ± {:.2} % test error", entries.len(), 100.0 * m, 100.0 * s);
            }
            finish(&cfg.output_dir, &reports)
        }
        Command::Extended { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let Some(every) = cfg.extended_every else {
                bail!("extended runs need `extended.every` in {}", config.display());
            };
            let reports = run_experiment(&cfg, Some(every))?;
            for r in reports.iter().filter(|r| r.ok) {
                let series: Vec<String> = r.skip_series.iter().map(|(e, f)| format!("{e}:{f:.2}")).collect();
                println!("{} seed {} skip fraction: {}", r.label, r.seed, series.join(" "));
            }
            finish(&cfg.output_dir, &reports)
        }
        Command::Eval { genotype, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let g = Genotype::load(&genotype).with_context(|| format!("reading {}", genotype.display()))?;
            let arch = g.to_architecture()?;
            let mut space = cfg.search_config(cfg.arms[0], cfg.seeds[0])?.space;
            space.num_input_nodes = g.metadata.num_input_nodes;
            space.num_states = g.metadata.num_states;
            space.operators = g.metadata.operators.clone();
            space.num_cell_types = arch.cells.len();
            let data = prepare_data(&cfg.dataset, cfg.test_size)?;
            let mut errs = Vec::new();
            for &seed in &cfg.seeds {
                let r = retrain_discrete(&space, &arch, &data.0, &data.1, &cfg.retrain_config(seed))?;
                println!("seed {seed}: test error {:.2} %, params {}", 100.0 * r.test_error, r.param_count);
                errs.push(r.test_error);
            }
            let (m, s) = nas_harness::report::mean_std(&errs);
            println!("mean {:.2} ± {:.2} %", 100.0 * m, 100.0 * s);
            Ok(true)
        }
        Command::Plot { history, out } => {
            let out = out.unwrap_or_else(|| history.join("plots"));
            for p in plot_history(&history, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Report { dir } => {
            let reports = load_reports(&dir)?;
            if reports.is_empty() {
                bail!("no reports below {}", dir.display());
            }
            finish(&dir, &reports)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
