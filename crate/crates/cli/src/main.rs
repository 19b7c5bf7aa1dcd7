use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use hololink_core::dataset::{gaussian_blobs, normalize_features, DatasetManifest};
use hololink_core::experiment::{
    grid_search, quantization_study, read_results, sweep_compression, write_results, ExperimentConfig, Hyperparams,
    TunedCache,
};
use hololink_core::model::ClassifierKind;
use hololink_core::report::emit_report;
use hololink_core::sim::CodecFamily;
use hololink_core::Dataset64;

/// Keyword that selects the built-in 3-class Gaussian blob dataset.
const SYNTHETIC: &str = "synthetic";

#[derive(Parser)]
#[command(name = "hololink", version, about = "Compressed classifier exchange experiments")]
struct Cli {
    /// TOML file with `seed`, `[grid]` and `[sweep]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true, env = "HOLOLINK_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Tuned hyperparameter cache.
    #[arg(long, global = true, default_value = "tuned.toml")]
    cache: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search H, lambda and kappa by cross-validation and cache the winner.
    Tune {
        dataset: String,
    },
    /// Accuracy versus compression ratio for every codec.
    Sweep {
        dataset: String,
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        codecs: Option<Vec<CodecFamily>>,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<ClassifierKind>>,
        #[arg(long)]
        reps: Option<usize>,
        /// Skip the small-model comparison rows.
        #[arg(long)]
        no_small: bool,
        #[command(flatten)]
        params: ParamOverride,
    },
    /// Centralized accuracy with uniformly quantized weights.
    Quantize {
        dataset: String,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u64>>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        params: ParamOverride,
    },
    /// Re-render charts from a results CSV.
    Report {
        results: PathBuf,
    },
}

/// Fixes the hyperparameters instead of reading the cache.
#[derive(Args)]
struct ParamOverride {
    #[arg(long, requires_all = ["lambda", "kappa"])]
    hidden: Option<usize>,
    #[arg(long, requires_all = ["hidden", "kappa"])]
    lambda: Option<f64>,
    #[arg(long, requires_all = ["hidden", "lambda"])]
    kappa: Option<i32>,
}

impl ParamOverride {
    fn get(&self) -> Option<Hyperparams> {
        Some(Hyperparams { hidden: self.hidden?, lambda: self.lambda?, kappa: self.kappa? })
    }
}

fn load_dataset(spec: &str, seed: u64) -> Result<Dataset64> {
    let raw = if spec == SYNTHETIC {
        gaussian_blobs(2000, 8, 3, 1.0, seed)
    } else {
        let manifest = DatasetManifest::from_file(Path::new(spec)).with_context(|| format!("reading manifest {spec}"))?;
        manifest.load()?
    };
    Ok(normalize_features(&raw))
}

fn tuned(cli: &Cli, cfg: &ExperimentConfig, ds: &Dataset64, seed: u64, fixed: Option<Hyperparams>) -> Result<Hyperparams> {
    if let Some(p) = fixed {
        return Ok(p);
    }
    let mut cache = TunedCache::load(&cli.cache)?;
    if let Some(p) = cache.datasets.get(&ds.name) {
        info!("using cached hyperparameters for {}: {:?}", ds.name, p);
        return Ok(*p);
    }
    info!("no cached hyperparameters for {}, tuning over {} grid points", ds.name, cfg.grid.len());
    let best = grid_search(ds, &cfg.grid, seed)?.best;
    println!(
        "{}: H={} lambda={} kappa={} cv_accuracy={:.4}",
        ds.name, best.params.hidden, best.params.lambda, best.params.kappa, best.cv_accuracy
    );
    cache.datasets.insert(ds.name.clone(), best.params);
    cache.save(&cli.cache)?;
    Ok(best.params)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let seed = cfg.seed;

    match &cli.command {
        Command::Tune { dataset } => {
            let ds = load_dataset(dataset, seed)?;
            let mut cache = TunedCache::load(&cli.cache)?;
            cache.datasets.remove(&ds.name);
            cache.save(&cli.cache)?;
            tuned(&cli, &cfg, &ds, seed, None)?;
        }
        Command::Sweep { dataset, agents, ratios, codecs, kinds, reps, no_small, params } => {
            let ds = load_dataset(dataset, seed)?;
            let params = tuned(&cli, &cfg, &ds, seed, params.get())?;
            let mut sweep = cfg.sweep.clone();
            if let Some(v) = agents {
                sweep.agents = v.clone();
            }
            if let Some(v) = ratios {
                sweep.ratios = v.clone();
            }
            if let Some(v) = codecs {
                sweep.codecs = v.clone();
            }
            if let Some(v) = kinds {
                sweep.kinds = v.clone();
            }
            if let Some(k) = reps {
                sweep.reps = *k;
            }
            if *no_small {
                sweep.small_model = false;
            }
            let outcome = sweep_compression(&ds, &params, &sweep, seed)?;
            for f in &outcome.failures {
                eprintln!("failed: N={} {} {} ratio {} seed {}: {}", f.agents, f.kind, f.codec, f.ratio_param, f.seed, f.message);
            }
            if outcome.rows.is_empty() {
                bail!("every sweep cell failed");
            }
            let files = emit_report(&outcome.rows, &cli.out)?;
            println!("wrote {} rows to {}", outcome.rows.len(), files.csv.display());
            for chart in &files.charts {
                println!("wrote {}", chart.display());
            }
        }
        Command::Quantize { dataset, levels, reps, params } => {
            let ds = load_dataset(dataset, seed)?;
            let params = tuned(&cli, &cfg, &ds, seed, params.get())?;
            let levels = levels.clone().unwrap_or_else(|| cfg.sweep.levels.clone());
            let rows = quantization_study(&ds, &params, &levels, reps.unwrap_or(cfg.sweep.reps), seed)?;
            let path = cli.out.join("quantization.csv");
            write_results(&path, &rows)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        Command::Report { results } => {
            let rows = read_results(results).with_context(|| format!("reading {}", results.display()))?;
            let files = emit_report(&rows, &cli.out)?;
            for chart in &files.charts {
                println!("wrote {}", chart.display());
            }
        }
    }
    Ok(())
}
