//! Running trials and writing their artifacts.

use crate::config::{Arm, ExperimentConfig};
use nas_core::data::{generate_dataset, Dataset, DatasetSpec};
use nas_core::discretize::{DiscreteArchitecture, Selection};
use nas_core::eval::{retrain_discrete, RetrainConfig};
use nas_core::search::{run_search, SearchConfig};
use nas_core::space::{CellLayout, SearchSpaceConfig};
use nas_core::{export_genotype, Genotype};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Search data and held-out test data, generated together so they share
/// one standardization.
pub fn prepare_data(spec: &DatasetSpec, test_size: usize) -> nas_core::Result<(Dataset, Dataset)> {
    let all = generate_dataset(&DatasetSpec { size: spec.size + test_size, ..*spec })?;
    let idx: Vec<usize> = (0..all.len()).collect();
    Ok((all.subset(&idx[..spec.size]), all.subset(&idx[spec.size..])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub arm: String,
    pub label: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub test_error: f64,
    pub train_error: f64,
    pub param_count: usize,
    pub skip_fraction: f64,
    pub w_steps: u64,
    pub alpha_steps: u64,
    pub search_seconds: f64,
    pub retrain_seconds: f64,
    pub wall_seconds: f64,
    pub genotype_path: Option<PathBuf>,
    pub history_path: Option<PathBuf>,
    /// `(epoch, skip fraction)` of each checkpoint in extended runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_series: Vec<(usize, f64)>,
}

impl TrialReport {
    fn failed(arm: Arm, seed: u64, error: String) -> Self {
        Self {
            arm: arm.name().to_string(),
            label: arm.label().to_string(),
            seed,
            ok: false,
            error: Some(error),
            test_error: 0.0,
            train_error: 0.0,
            param_count: 0,
            skip_fraction: 0.0,
            w_steps: 0,
            alpha_steps: 0,
            search_seconds: 0.0,
            retrain_seconds: 0.0,
            wall_seconds: 0.0,
            genotype_path: None,
            history_path: None,
            skip_series: Vec::new(),
        }
    }
}

pub const REPORT_FILE: &str = "report.json";

pub fn trial_dir(root: &Path, arm: Arm, seed: u64) -> PathBuf {
    root.join(arm.slug()).join(format!("seed_{seed}"))
}

/// Search, write history and genotype, retrain, write the report.
pub fn run_trial(
    search: &SearchConfig,
    retrain: &RetrainConfig,
    arm: Arm,
    data: &(Dataset, Dataset),
    dir: &Path,
) -> anyhow::Result<TrialReport> {
    let start = Instant::now();
    let out = run_search(search, &data.0)?;
    let search_seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(dir)?;
    let history_path = dir.join("history");
    out.history.write_dir(&history_path)?;
    let genotype_path = dir.join("genotype.json");
    export_genotype(&out.architecture)?.save(&genotype_path)?;

    let mut skip_series = Vec::new();
    if !out.history.checkpoints.is_empty() {
        let ck = dir.join("checkpoints");
        std::fs::create_dir_all(&ck)?;
        let mut csv = String::from("epoch,skip_fraction\n");
        for (epoch, arch) in &out.history.checkpoints {
            export_genotype(arch)?.save(&ck.join(format!("epoch_{epoch:04}.json")))?;
            let f = arch.skip_fraction();
            let _ = writeln!(csv, "{epoch},{f}");
            skip_series.push((*epoch, f));
        }
        std::fs::write(dir.join("skip_series.csv"), csv)?;
    }

    let t = Instant::now();
    let r = retrain_discrete(&search.space, &out.architecture, &data.0, &data.1, retrain)?;
    let retrain_seconds = t.elapsed().as_secs_f64();

    let report = TrialReport {
        arm: arm.name().to_string(),
        label: arm.label().to_string(),
        seed: search.seed,
        ok: true,
        error: None,
        test_error: r.test_error,
        train_error: r.train_error,
        param_count: r.param_count,
        skip_fraction: out.architecture.skip_fraction(),
        w_steps: out.w_steps,
        alpha_steps: out.alpha_steps,
        search_seconds,
        retrain_seconds,
        wall_seconds: start.elapsed().as_secs_f64(),
        genotype_path: Some(genotype_path),
        history_path: Some(history_path),
        skip_series,
    };
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Every `(arm, seed)` trial of the experiment, in parallel. Failed trials
/// are reported, not propagated. With `extended` set, searches record
/// checkpoints at that interval.
pub fn run_experiment(config: &ExperimentConfig, extended: Option<usize>) -> anyhow::Result<Vec<TrialReport>> {
    let data = prepare_data(&config.dataset, config.test_size)?;
    let jobs: Vec<(Arm, u64)> =
        config.arms.iter().flat_map(|&a| config.seeds.iter().map(move |&s| (a, s))).collect();
    let reports = pool(config.threads)?.install(|| {
        jobs.par_iter()
            .map(|&(arm, seed)| {
                let result = config.search_config(arm, seed).map_err(anyhow::Error::from).and_then(|mut s| {
                    s.checkpoint_every = extended;
                    run_trial(&s, &config.retrain_config(seed), arm, &data, &trial_dir(&config.output_dir, arm, seed))
                });
                result.unwrap_or_else(|e| {
                    log::error!("{} seed {}: {:#}", arm, seed, e);
                    TrialReport::failed(arm, seed, format!("{e:#}"))
                })
            })
            .collect::<Vec<_>>()
    });
    Ok(reports)
}

/// A member of the discrete set drawn uniformly at random.
pub fn random_architecture(layout: &CellLayout, cell_types: usize, rng: &mut ChaCha8Rng) -> DiscreteArchitecture {
    let ops: Vec<usize> = layout.selectable_ops().collect();
    let sels: Vec<Vec<Selection>> = (0..cell_types)
        .map(|_| {
            (0..layout.num_states)
                .flat_map(|state| {
                    let n = layout.sources(state);
                    let a = rng.random_range(0..n);
                    let mut b = rng.random_range(0..n - 1);
                    if b >= a {
                        b += 1;
                    }
                    [a, b].map(|source| Selection { state, source, op: ops[rng.random_range(0..ops.len())] })
                })
                .collect()
        })
        .collect();
    DiscreteArchitecture::from_selections(layout.clone(), &sels).expect("selections in range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub index: usize,
    pub retrain_seed: u64,
    pub test_error: f64,
    pub param_count: usize,
    pub skip_fraction: f64,
    pub genotype: Genotype,
}

/// Retrains `count` random genotypes with the experiment's retraining
/// settings; genotype `i` uses trial seed `seeds[i % seeds.len()]`.
pub fn random_baseline(
    space: &SearchSpaceConfig,
    config: &ExperimentConfig,
    data: &(Dataset, Dataset),
    count: usize,
) -> anyhow::Result<Vec<BaselineEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.baseline_seed);
    let layout = space.layout();
    let archs: Vec<DiscreteArchitecture> =
        (0..count).map(|_| random_architecture(&layout, space.num_cell_types, &mut rng)).collect();
    pool(config.threads)?.install(|| {
        archs
            .par_iter()
            .enumerate()
            .map(|(i, arch)| {
                let seed = config.seeds[i % config.seeds.len()];
                let r = retrain_discrete(space, arch, &data.0, &data.1, &config.retrain_config(seed))?;
                Ok(BaselineEntry {
                    index: i,
                    retrain_seed: seed,
                    test_error: r.test_error,
                    param_count: r.param_count,
                    skip_fraction: arch.skip_fraction(),
                    genotype: export_genotype(arch)?,
                })
            })
            .collect()
    })
}

pub fn baseline_csv(entries: &[BaselineEntry]) -> String {
    let mut s = String::from("index,retrain_seed,test_error,param_count,skip_fraction\n");
    for e in entries {
        let _ = writeln!(s, "{},{},{},{},{}", e.index, e.retrain_seed, e.test_error, e.param_count, e.skip_fraction);
    }
    s
}
