use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rfgd::experiment::{
    median, run_experiment, run_mp_study, run_spectra, run_sweep, sqrt_envelope, DataSource, ExperimentConfig,
    SweepAxis, SweepResult,
};
use rfgd::features::FeatureKind;
use rfgd::idx::DATA_DIR_ENV;
use rfgd::output::{
    budget_table, emit_svg, mp_plot, mp_table, spectra_plot, spectra_table, sweep_curves_plot, sweep_plot,
    sweep_table, write_run,
};

#[derive(Parser)]
#[command(name = "rfgd", version, about = "Random feature regression under gradient flow")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, PartialEq, Eq)]
enum Verb {
    /// Error, norm and bound trajectories of a single run.
    Run,
    /// Runs over a list of m (or gamma) values and seeds.
    Sweep,
    /// Gram, kernel-matrix and analytic spectra at fixed gamma.
    Spectra,
    /// Smallest Gram eigenvalue over a gamma grid with the MP fit.
    Mp {
        /// Gamma range used to calibrate the MP constant.
        #[arg(long, value_name = "LO,HI", default_value = "0.7,1.5")]
        fit_window: String,
    },
    /// Sweep on MNIST classes read from IDX files.
    Mnist,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if cli.verb == Verb::Mnist {
        cfg.data = DataSource::Mnist;
        cfg.feature = FeatureKind::AffineRelu;
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cli.verb == Verb::Mnist && cfg.sweep_m.is_empty() && cfg.sweep_gamma.is_empty() {
        cfg.sweep_gamma = vec![0.2, 0.4, 0.6, 0.8, 0.9, 1.0, 1.1, 1.2, 1.5, 2.0, 4.0];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let rec = run_experiment(cfg)?;
    write_run(&rec, &cfg.out, "run")?;
    budget_table(&rec).write(&cfg.out.join("budgets.csv"))?;
    let (t, e) = rec.min_test();
    println!("config {}: min test error {e:.4e} at t = {t:.3e}", rec.config_hash);
    if let Some(e) = rec.min_norm_test() {
        println!("min-norm test error {e:.4e}");
    }
    Ok(())
}

fn sweep_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    if cfg.sweep_seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.sweep_seeds.clone()
    }
}

fn write_sweep(cfg: &ExperimentConfig, result: &SweepResult) -> Result<()> {
    let cells = cfg.out.join("cells");
    for c in &result.cells {
        write_run(&c.record, &cells, &c.id())?;
    }
    sweep_table(result).write(&cfg.out.join("sweep.csv"))?;
    emit_svg(&sweep_plot(result), &cfg.out.join("sweep.svg"))?;
    emit_svg(&sweep_curves_plot(result), &cfg.out.join("curves.svg"))?;
    let mut meta = format!("config_hash = {}\n", cfg.hash());
    if let Some(c) = result.cells.first() {
        meta.push_str(&format!("time_map = {}\n", c.record.time_map()));
        let times: Vec<_> = c.record.rows.iter().map(|r| r.time).collect();
        let curves: Vec<Vec<f64>> = result
            .cells
            .iter()
            .map(|c| c.record.rows.iter().map(|r| r.test_error).collect())
            .collect();
        let env = sqrt_envelope(&times, &curves)?;
        meta.push_str(&format!("sqrt_envelope_c = {env:e}\n"));
        println!("sqrt(t) envelope constant c = {env:.4e}");
    }
    meta.push_str("\n# configuration\n");
    meta.push_str(&cfg.to_text());
    write(&cfg.out.join("sweep.meta.txt"), &meta)?;
    for row in result.summary() {
        println!(
            "seed {} m {}: min-norm test error {:.4e}, min test error {:.4e}",
            row.seed, row.m, row.min_norm_test_error, row.min_test_error
        );
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let axis = SweepAxis::from_config(cfg)?;
    let result = run_sweep(cfg, &axis, &sweep_seeds(cfg), cfg.workers)?;
    write_sweep(cfg, &result)
}

fn cmd_mnist(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.data_dir.is_none() && std::env::var_os(DATA_DIR_ENV).is_none() {
        bail!("mnist needs the IDX directory: set data_dir or {DATA_DIR_ENV}");
    }
    cmd_sweep(cfg)
}

fn cmd_spectra(cfg: &ExperimentConfig) -> Result<()> {
    let runs = run_spectra(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    spectra_table(&runs).write(&cfg.out.join("spectra.csv"))?;
    emit_svg(&spectra_plot(&runs), &cfg.out.join("spectra.svg"))?;
    let top10: Vec<f64> = runs
        .iter()
        .map(|r| {
            r.report
                .top
                .iter()
                .take(10)
                .map(|c| c.rel_gram_kernel)
                .fold(0.0, f64::max)
        })
        .collect();
    let med = median(&top10);
    write(
        &cfg.out.join("spectra.meta.txt"),
        &format!(
            "config_hash = {}\nmedian_top10_gram_kernel_rel = {med:e}\n\n# configuration\n{}",
            cfg.hash(),
            cfg.to_text()
        ),
    )?;
    println!("median over seeds of max top-10 Gram/kernel relative difference: {med:.4e}");
    Ok(())
}

fn cmd_mp(cfg: &ExperimentConfig, window: &str) -> Result<()> {
    let (lo, hi) = window
        .split_once(',')
        .context("fit window must be LO,HI")?;
    let window = (lo.trim().parse()?, hi.trim().parse()?);
    let study = run_mp_study(cfg, window)?;
    fs::create_dir_all(&cfg.out)?;
    mp_table(&study).write(&cfg.out.join("mp.csv"))?;
    emit_svg(&mp_plot(&study), &cfg.out.join("mp.svg"))?;
    write(
        &cfg.out.join("mp.meta.txt"),
        &format!(
            "config_hash = {}\ncalibration_c = {:e}\ncalibration_residual = {:e}\nfit_window = [{}, {}]\n\n# configuration\n{}",
            cfg.hash(),
            study.calibration.c,
            study.calibration.residual,
            window.0,
            window.1,
            cfg.to_text()
        ),
    )?;
    for c in &study.cells {
        println!(
            "gamma {:<5} mean smallest {:.4e}  predicted {:.4e}",
            c.gamma,
            c.mean,
            study.predicted(c.gamma)
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    match &cli.verb {
        Verb::Run => cmd_run(&cfg),
        Verb::Sweep => cmd_sweep(&cfg),
        Verb::Spectra => cmd_spectra(&cfg),
        Verb::Mp { fit_window } => cmd_mp(&cfg, fit_window),
        Verb::Mnist => cmd_mnist(&cfg),
    }
}
