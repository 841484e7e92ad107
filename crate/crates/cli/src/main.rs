use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use onebit::harness::report::{write_json_file, RowSummary};
use onebit::harness::{
    emit_replicated, emit_sweep, make_setting, read_report_csv, run_replicated, run_sweep,
    summarize_rows, write_report_csv, ExperimentConfig, ReportRow,
};
use onebit::harness::run::{fit_posterior_mean, replication_data};
use onebit::metrics::{
    c_kappa, frobenius_error, frobenius_sq_normalized, joint_divergence, sup_error, Divergence,
    DivergenceKind, Normalization,
};
use onebit::samplers::{dump_chain, posterior_mean};
use onebit::{MatrixParam, ObservationSet, SamplingDistribution};

#[derive(Parser)]
#[command(name = "onebit", version, about = "One-bit matrix completion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `section.key = value` config file; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides `run.master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (overrides `run.workers`).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the truth, sampling distribution and one data set.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Which replication's data to write.
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Run one chain on a data file and write the chain and the posterior mean.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observations CSV with header `i,j,y` (1-based indices).
        #[arg(long)]
        data: PathBuf,
    },
    /// Divergences and distances between two matrices under a sampling distribution.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// First matrix (headerless CSV).
        #[arg(long)]
        a: PathBuf,
        /// Second matrix (headerless CSV).
        #[arg(long)]
        b: PathBuf,
        /// Sampling distribution (headerless CSV); uniform when absent.
        #[arg(long)]
        pi: Option<PathBuf>,
        /// Rényi order.
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
    },
    /// Replicated runs over the configured grid (or at `model.n` if `sweep.n_grid` is empty).
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate report CSVs from earlier runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report CSV files or directories containing `report.csv`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn simulate(common: &Common, replication: usize) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let setting = make_setting(&cfg)?;
    let (seed, data) = replication_data(&cfg, &setting, replication)?;
    setting.truth.matrix.write_csv(create(&common.out.join("truth.csv"))?)?;
    setting.pi.write_csv(create(&common.out.join("pi.csv"))?)?;
    data.write_csv(create(&common.out.join("data.csv"))?)?;
    fs::write(common.out.join("config.cfg"), cfg.to_canonical_string())?;
    write_json_file(
        &common.out.join("setting.json"),
        &serde_json::json!({
            "config_digest": cfg.digest(),
            "data_seed": seed,
            "n": cfg.n,
            "r": cfg.r,
            "kappa": setting.truth.kappa,
            "c1": setting.pi.c1(),
        }),
    )?;
    println!("wrote truth, Π and {} observations to {}", data.len(), common.out.display());
    Ok(())
}

fn fit(common: &Common, data_path: &Path) -> Result<()> {
    let mut cfg = load_config(common)?;
    prepare_out(&common.out)?;
    let data = ObservationSet::read_csv(open(data_path)?, cfg.d1, cfg.d2)
        .with_context(|| format!("reading {}", data_path.display()))?;
    // Auto values (τ, b) follow the data size.
    cfg.n = data.len();
    let (chain, mean) = fit_posterior_mean(&cfg, &data, cfg.master_seed)?;
    dump_chain(&chain, &common.out, "chain")?;
    mean.write_csv(create(&common.out.join("mean.csv"))?)?;
    let summary = posterior_mean(&chain)?;
    MatrixParam::new(summary.mc_standard_error)?.write_csv(create(&common.out.join("mcse.csv"))?)?;
    println!(
        "fit {} samples, acceptance {:.3}; wrote {}",
        summary.n_samples_used,
        chain.accept_rate,
        common.out.display()
    );
    Ok(())
}

fn evaluate(common: &Common, a: &Path, b: &Path, pi: Option<&Path>, alpha: f64) -> Result<()> {
    prepare_out(&common.out)?;
    let a = MatrixParam::read_csv(open(a)?)?;
    let b = MatrixParam::read_csv(open(b)?)?;
    let pi = match pi {
        Some(p) => SamplingDistribution::read_csv(open(p)?)?,
        None => SamplingDistribution::uniform(a.d1(), a.d2()),
    };
    let mut metrics = serde_json::Map::new();
    for (name, kind) in [
        ("kl", Divergence::Kl),
        ("hellinger_sq", Divergence::HellingerSq),
        ("renyi", Divergence::Renyi(alpha)),
    ] {
        for (suffix, norm) in [("joint", Normalization::Joint), ("normalized", Normalization::PaperNormalized)] {
            let v = joint_divergence(&a, &b, &pi, DivergenceKind::new(kind, norm)?)?;
            metrics.insert(format!("{name}_{suffix}"), v.into());
        }
    }
    let kappa = a.sup_norm().max(b.sup_norm());
    metrics.insert("frobenius".into(), frobenius_error(&a, &b)?.into());
    metrics.insert("frobenius_sq_normalized".into(), frobenius_sq_normalized(&a, &b)?.into());
    metrics.insert("sup".into(), sup_error(&a, &b)?.into());
    metrics.insert("alpha".into(), alpha.into());
    metrics.insert("c1".into(), pi.c1().into());
    metrics.insert("kappa".into(), kappa.into());
    metrics.insert("c_kappa".into(), c_kappa(kappa)?.into());
    let value = serde_json::Value::Object(metrics);
    write_json_file(&common.out.join("metrics.json"), &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    fs::write(common.out.join("config.cfg"), cfg.to_canonical_string())?;
    if cfg.n_grid.is_empty() {
        let result = run_replicated(&cfg)?;
        emit_replicated(&result, &common.out)?;
        for c in &result.checks {
            println!(
                "{:<10} fraction {:.3} floor {} {}",
                c.side.name(),
                c.empirical_fraction,
                c.probability_floor,
                if c.trivially_satisfied { "(vacuous)" } else { "" }
            );
        }
    } else {
        let report = run_sweep(&cfg, &cfg.n_grid, &cfg.r_grid)?;
        emit_sweep(&report, &common.out)?;
        for p in &report.points {
            println!("n={:<6} r={:<3} median post-avg error {:.6}", p.n, p.r, p.median_post_avg_frob_sq);
        }
        for (name, s) in &report.slopes {
            println!("slope {name}: {:.3}", s.slope);
        }
    }
    println!("wrote {}", common.out.display());
    Ok(())
}

fn report(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    prepare_out(&common.out)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    for input in inputs {
        let path = if input.is_dir() { input.join("report.csv") } else { input.clone() };
        if !path.exists() {
            bail!("no report at {}", path.display());
        }
        rows.extend(read_report_csv(open(&path)?).with_context(|| format!("reading {}", path.display()))?);
    }
    let summary: RowSummary = summarize_rows(&rows)?;
    write_report_csv(&rows, create(&common.out.join("combined.csv"))?)?;
    write_json_file(&common.out.join("aggregate.json"), &summary)?;
    for g in &summary.groups {
        match &g.slope_post_avg_frob_sq_vs_n {
            Some(s) => println!("{}: {} points, slope {:.3}", g.key, g.points.len(), s.slope),
            None => println!("{}: {} points", g.key, g.points.len()),
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { common, replication } => simulate(common, *replication),
        Command::Fit { common, data } => fit(common, data),
        Command::Evaluate { common, a, b, pi, alpha } => evaluate(common, a, b, pi.as_deref(), *alpha),
        Command::Sweep { common } => sweep(common),
        Command::Report { common, inputs } => report(common, inputs),
    }
}
