//! Seeded experiment runner: configuration, single runs, sweeps, and the
//! spectrum studies.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bounds::{
    estimate_norms, finer_bound, measure_assumptions, AssumptionReport, NormBoundConstants,
};
use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, Dataset, FeatureKind, FeatureSet, LabelTable, TargetSpec};
use crate::idx::{self, load_idx};
use crate::kernel::{AnalyticSpectrum, EigenFormula, KernelSpec};
use crate::rmt::{calibrate_c, gram_spectrum, kernel_spectrum, predict_smallest, spectrum_report, Calibration, SpectrumComparison};
use crate::spectral::{
    decompose, log_time_grid, spectral_energy_profile, EnergyProfile, Time, TrajectoryEvaluator, RANK_CUTOFF,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MRule {
    Fixed(usize),
    /// `round(sqrt(n))`
    Sqrt,
    /// `n^2`
    Square,
}

impl MRule {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            MRule::Fixed(m) => m,
            MRule::Sqrt => ((n as f64).sqrt().round() as usize).max(1),
            MRule::Square => n * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Constant,
    Legendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Sphere,
    Mnist,
}

/// How an iteration count of discrete gradient descent maps to flow time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeConvention {
    /// Objective `|Phi a - y|^2 / (2mn)`: `t = T eta`.
    Flow,
    /// Objective `|Phi a - y|^2 / (2n)`: `t = T eta m`.
    Objective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n: usize,
    pub m: MRule,
    pub d: usize,
    pub feature: FeatureKind,
    pub target: TargetKind,
    pub target_order: usize,
    pub grid_start: i32,
    pub grid_stop: i32,
    pub per_decade: usize,
    pub include_infinity: bool,
    pub test_points: usize,
    pub norm_samples: usize,
    pub delta: f64,
    pub time_convention: TimeConvention,
    /// `None`: `1 / lambda_max(G)`.
    pub learning_rate: Option<f64>,
    /// Iteration counts reported at their flow-time equivalents.
    pub budgets: Vec<f64>,
    pub data: DataSource,
    pub classes: Vec<u8>,
    pub sweep_m: Vec<usize>,
    pub sweep_gamma: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    /// Spectrum studies.
    pub gamma: f64,
    pub gamma_grid: Vec<f64>,
    pub replicates: usize,
    pub max_degree: usize,
    // Not part of the configuration hash.
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 500,
            m: MRule::Fixed(500),
            d: 10,
            feature: FeatureKind::Relu,
            target: TargetKind::Constant,
            target_order: 0,
            grid_start: -1,
            grid_stop: 10,
            per_decade: 20,
            include_infinity: true,
            test_points: 2000,
            norm_samples: 100_000,
            delta: 0.1,
            time_convention: TimeConvention::Flow,
            learning_rate: None,
            budgets: vec![1e4, 1e5, 1e6, 1e8],
            data: DataSource::Sphere,
            classes: vec![0, 1],
            sweep_m: Vec::new(),
            sweep_gamma: Vec::new(),
            sweep_seeds: Vec::new(),
            gamma: 8.0,
            gamma_grid: vec![0.5, 0.7, 0.85, 1.0, 1.2, 1.5, 2.0],
            replicates: 10,
            max_degree: 12,
            data_dir: None,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "m" => {
                self.m = match v {
                    "sqrt" => MRule::Sqrt,
                    "square" => MRule::Square,
                    _ => MRule::Fixed(parse_num(key, v)?),
                }
            }
            "d" => self.d = parse_num(key, v)?,
            "feature" => self.feature = FeatureKind::parse(v).map_err(|e| Error::Config(e.to_string()))?,
            "target" => {
                self.target = match v {
                    "constant" => TargetKind::Constant,
                    "legendre" => TargetKind::Legendre,
                    _ => return Err(Error::Config(format!("unknown target {v:?}"))),
                }
            }
            "target_order" => self.target_order = parse_num(key, v)?,
            "grid_start" => self.grid_start = parse_num(key, v)?,
            "grid_stop" => self.grid_stop = parse_num(key, v)?,
            "per_decade" => self.per_decade = parse_num(key, v)?,
            "include_infinity" => self.include_infinity = parse_num(key, v)?,
            "test_points" => self.test_points = parse_num(key, v)?,
            "norm_samples" => self.norm_samples = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "time_convention" => {
                self.time_convention = match v {
                    "flow" => TimeConvention::Flow,
                    "objective" => TimeConvention::Objective,
                    _ => return Err(Error::Config(format!("unknown time convention {v:?}"))),
                }
            }
            "learning_rate" => {
                self.learning_rate = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "budgets" => self.budgets = parse_list(key, v)?,
            "data" => {
                self.data = match v {
                    "sphere" => DataSource::Sphere,
                    "mnist" => DataSource::Mnist,
                    _ => return Err(Error::Config(format!("unknown data source {v:?}"))),
                }
            }
            "classes" => self.classes = parse_list(key, v)?,
            "sweep_m" => self.sweep_m = parse_list(key, v)?,
            "sweep_gamma" => self.sweep_gamma = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse_list(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "gamma_grid" => self.gamma_grid = parse_list(key, v)?,
            "replicates" => self.replicates = parse_num(key, v)?,
            "max_degree" => self.max_degree = parse_num(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "workers" => self.workers = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn hashed_text(&self) -> String {
        let m = match self.m {
            MRule::Fixed(m) => m.to_string(),
            MRule::Sqrt => "sqrt".into(),
            MRule::Square => "square".into(),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("n", self.n.to_string());
        kv("m", m);
        kv("d", self.d.to_string());
        kv("feature", self.feature.name().into());
        kv(
            "target",
            match self.target {
                TargetKind::Constant => "constant".into(),
                TargetKind::Legendre => "legendre".into(),
            },
        );
        kv("target_order", self.target_order.to_string());
        kv("grid_start", self.grid_start.to_string());
        kv("grid_stop", self.grid_stop.to_string());
        kv("per_decade", self.per_decade.to_string());
        kv("include_infinity", self.include_infinity.to_string());
        kv("test_points", self.test_points.to_string());
        kv("norm_samples", self.norm_samples.to_string());
        kv("delta", self.delta.to_string());
        kv(
            "time_convention",
            match self.time_convention {
                TimeConvention::Flow => "flow".into(),
                TimeConvention::Objective => "objective".into(),
            },
        );
        kv(
            "learning_rate",
            self.learning_rate.map_or_else(|| "auto".into(), |v| v.to_string()),
        );
        kv("budgets", join(&self.budgets));
        kv(
            "data",
            match self.data {
                DataSource::Sphere => "sphere".into(),
                DataSource::Mnist => "mnist".into(),
            },
        );
        kv("classes", join(&self.classes));
        kv("sweep_m", join(&self.sweep_m));
        kv("sweep_gamma", join(&self.sweep_gamma));
        kv("sweep_seeds", join(&self.sweep_seeds));
        kv("gamma", self.gamma.to_string());
        kv("gamma_grid", join(&self.gamma_grid));
        kv("replicates", self.replicates.to_string());
        kv("max_degree", self.max_degree.to_string());
        s
    }

    /// Full `key = value` text; [`ExperimentConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut s = self.hashed_text();
        let dir = self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(s, "data_dir = {dir}");
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text, excluding
    /// the output location, data directory and worker count.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.hashed_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolved_m(&self) -> usize {
        self.m.resolve(self.n)
    }

    pub fn time_grid(&self) -> Result<Vec<Time>> {
        log_time_grid(self.grid_start, self.grid_stop, self.per_decade, self.include_infinity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.resolved_m() == 0 || self.d == 0 {
            return Err(Error::Config("n, m and d must be positive".into()));
        }
        if self.test_points == 0 || self.norm_samples == 0 {
            return Err(Error::Config("test_points and norm_samples must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Independent seeds for the pieces of one cell, derived from
/// `(master seed, cell index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSeeds {
    pub data: u64,
    pub features: u64,
    pub test: u64,
    pub norms: u64,
}

pub fn cell_seeds(master: u64, cell: u64) -> CellSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(cell);
    CellSeeds {
        data: rng.random(),
        features: rng.random(),
        test: rng.random(),
        norms: rng.random(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub time: Time,
    pub train_error: f64,
    pub test_error: f64,
    pub param_norm: f64,
    /// `|f_t|_{l2}` over the test points.
    pub prediction_norm: f64,
    pub bound_rough: f64,
    /// NaN when the finer bound's hypothesis fails.
    pub bound_finer: f64,
    pub bound_finer_proof: f64,
}

/// Error after a fixed number of discrete iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetRow {
    pub iterations: f64,
    pub flow_time: f64,
    pub train_error: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary {
    /// Leading `lambda_i / n`.
    pub top_scaled: Vec<f64>,
    /// Smallest of the `min(n, m)` eigenvalues of `G = Phi Phi^T / (nm)`.
    pub smallest_gram: f64,
    pub largest_gram: f64,
    pub numerical_rank: usize,
    pub rank_cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub m: usize,
    pub target_name: &'static str,
    pub rows: Vec<RunRow>,
    pub budget_rows: Vec<BudgetRow>,
    /// Step size used for the iteration-to-time map.
    pub learning_rate: f64,
    pub spectrum: SpectrumSummary,
    pub energy: EnergyProfile,
    pub assumptions: AssumptionReport,
    pub bound_constants: NormBoundConstants,
}

impl RunRecord {
    /// Smallest test error over finite times and where it occurs.
    pub fn min_test(&self) -> (f64, f64) {
        self.rows
            .iter()
            .filter(|r| r.time.is_finite())
            .map(|r| (r.time.value(), r.test_error))
            .fold((f64::NAN, f64::INFINITY), |acc, (t, e)| if e < acc.1 { (t, e) } else { acc })
    }

    /// Test error of the minimum-norm solution, if the grid includes it.
    pub fn min_norm_test(&self) -> Option<f64> {
        self.rows.iter().find(|r| r.time == Time::Infinity).map(|r| r.test_error)
    }

    pub fn time_map(&self) -> String {
        match self.config.time_convention {
            TimeConvention::Flow => format!("t = T * eta, eta = {:e}", self.learning_rate),
            TimeConvention::Objective => format!("t = T * eta * m, eta = {:e}, m = {}", self.learning_rate, self.m),
        }
    }

    /// Human-readable metadata written next to every result file.
    pub fn metadata(&self) -> String {
        let mut s = format!("config_hash = {}\n", self.config_hash);
        let _ = writeln!(s, "m_resolved = {}", self.m);
        let _ = writeln!(s, "target_function = {}", self.target_name);
        let _ = writeln!(s, "rank_cutoff = {RANK_CUTOFF:e} * lambda_1");
        let _ = writeln!(s, "numerical_rank = {}", self.spectrum.numerical_rank);
        let _ = writeln!(s, "time_map = {}", self.time_map());
        let _ = writeln!(s, "smallest_gram_eigenvalue = {:e}", self.spectrum.smallest_gram);
        let a = &self.assumptions;
        let _ = writeln!(s, "c_measured = {:e}", a.c_measured);
        let _ = writeln!(s, "c_prime = {:e}", a.c_prime);
        let _ = writeln!(s, "m_bound = {:e}", a.m_bound);
        let _ = writeln!(s, "m_kernel = {:e}", a.m_kernel);
        let _ = writeln!(s, "f_norm = {:e}", a.f_norm);
        let _ = writeln!(s, "feat_norm_sq = {:e}", a.feat_norm_sq);
        if let Some((eps, t0)) = a.epsilon_t0 {
            let _ = writeln!(s, "epsilon = {eps:e}\nt0 = {t0:e}");
        }
        let _ = writeln!(
            s,
            "regime_window = [{:e}, {:e}], c1 = {:e}, c2 = {:e}",
            a.regime.t_low, a.regime.t_high, a.regime.c1, a.regime.c2
        );
        let p = a.concentration_index.map_or_else(|| "none".to_string(), |p| p.to_string());
        let _ = writeln!(s, "concentration_index = {p}");
        s.push_str("\n# configuration\n");
        s.push_str(&self.config.to_text());
        s
    }
}

struct Problem {
    train: Dataset,
    test: Dataset,
    norm_points: Dataset,
    feats: FeatureSet,
    target: TargetSpec,
}

fn build_problem(cfg: &ExperimentConfig, seeds: &CellSeeds) -> Result<Problem> {
    let m = cfg.resolved_m();
    match cfg.data {
        DataSource::Sphere => {
            let target = match cfg.target {
                TargetKind::Constant => TargetSpec::constant(),
                TargetKind::Legendre => {
                    let mut axis = vec![0.0; cfg.d];
                    axis[0] = 1.0;
                    TargetSpec::legendre(cfg.target_order, &axis)?
                }
            };
            Ok(Problem {
                train: Dataset::sphere(seeds.data, cfg.d, cfg.n, &target)?,
                test: Dataset::sphere(seeds.test, cfg.d, cfg.test_points, &target)?,
                norm_points: Dataset::sphere(seeds.norms, cfg.d, cfg.norm_samples, &target)?,
                feats: FeatureSet::sample(cfg.feature, cfg.d, m, seeds.features)?,
                target,
            })
        }
        DataSource::Mnist => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(idx::data_dir_from_env)
                .ok_or_else(|| Error::Config(format!("mnist data needs data_dir or {}", idx::DATA_DIR_ENV)))?;
            let train_raw = load_idx(&dir.join(idx::TRAIN_IMAGES), &dir.join(idx::TRAIN_LABELS))?;
            let test_raw = load_idx(&dir.join(idx::TEST_IMAGES), &dir.join(idx::TEST_LABELS))?;
            let train = train_raw.select(&cfg.classes, Some(cfg.n), seeds.data)?;
            let available = test_raw.select(&cfg.classes, None, 0)?.len();
            let test = test_raw.select(&cfg.classes, Some(cfg.test_points.min(available)), seeds.test)?;
            let mut table = LabelTable::from_dataset(&train);
            table.extend(&test);
            let d = train.dim();
            Ok(Problem {
                norm_points: test.clone(),
                feats: FeatureSet::sample(cfg.feature, d, m, seeds.features)?,
                target: TargetSpec::ExternalLabels(table),
                train,
                test,
            })
        }
    }
}

/// One run with cell index 0.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run_cell(cfg, 0)
}

pub fn run_cell(cfg: &ExperimentConfig, cell: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let seeds = cell_seeds(cfg.seed, cell);
    let p = build_problem(cfg, &seeds)?;
    let n = p.train.len();
    let m = p.feats.count();
    let phi = build_feature_matrix(&p.train, &p.feats)?;
    let dec = decompose(&phi)?;
    let y = &p.train.targets;
    let ev = TrajectoryEvaluator::new(&dec, y, &p.feats, &p.target, &p.test)?;
    let grid = cfg.time_grid()?;

    let norms = estimate_norms(&p.feats, &p.target, &p.norm_points, n)?;
    let mut assumptions = measure_assumptions(&dec, y, &p.feats, &p.target, &p.test, &norms, cfg.delta)?;
    let consts = NormBoundConstants {
        n: n as f64,
        m: m as f64,
        m_bound: assumptions.m_bound,
        delta: cfg.delta,
        f_norm: norms.f_norm,
        feat_norm_sq: norms.feat_norm_sq,
    };
    let factor = consts.factor()?;
    let scaled = dec.scaled_values();

    let mut rows = Vec::with_capacity(grid.len());
    for &t in &grid {
        let s = ev.snapshot(t, false)?;
        let tv = t.value();
        let (finer, proof) = match finer_bound(tv, assumptions.c_measured, norms.m_kernel, &scaled, n) {
            Ok(b) => (b.stated, b.proof),
            Err(Error::HypothesisViolated(_)) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        rows.push(RunRow {
            time: t,
            train_error: s.train_error,
            test_error: s.test_error,
            param_norm: s.param_norm,
            prediction_norm: s.prediction_norm,
            bound_rough: factor * tv.sqrt(),
            bound_finer: finer,
            bound_finer_proof: proof,
        });
    }

    let lambda1 = dec.singular_values[0];
    let nm = n as f64 * m as f64;
    let largest_gram = lambda1 * lambda1 / nm;
    let last = dec.singular_values[dec.rank() - 1];
    let learning_rate = cfg.learning_rate.unwrap_or(1.0 / largest_gram);
    let budget_rows = cfg
        .budgets
        .iter()
        .map(|&iters| {
            let flow_time = match cfg.time_convention {
                TimeConvention::Flow => iters * learning_rate,
                TimeConvention::Objective => iters * learning_rate * m as f64,
            };
            let s = ev.snapshot(Time::Finite(flow_time), false)?;
            Ok(BudgetRow {
                iterations: iters,
                flow_time,
                train_error: s.train_error,
                test_error: s.test_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        m,
        target_name: p.target.kind_name(),
        rows,
        budget_rows,
        learning_rate,
        spectrum: SpectrumSummary {
            top_scaled: scaled.iter().take(10).copied().collect(),
            smallest_gram: last * last / nm,
            largest_gram,
            numerical_rank: dec.numerical_rank(),
            rank_cutoff: RANK_CUTOFF,
        },
        energy: spectral_energy_profile(&dec, y)?,
        assumptions: assumptions.clone(),
        bound_constants: consts,
    };
    let (t0, eps) = record.min_test();
    assumptions.epsilon_t0 = Some((eps, t0));
    record.assumptions = assumptions;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    M(Vec<usize>),
    /// `m = round(gamma n)`
    Gamma(Vec<f64>),
}

impl SweepAxis {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        if !cfg.sweep_m.is_empty() {
            Ok(SweepAxis::M(cfg.sweep_m.clone()))
        } else if !cfg.sweep_gamma.is_empty() {
            Ok(SweepAxis::Gamma(cfg.sweep_gamma.clone()))
        } else {
            Err(Error::Config("sweep needs sweep_m or sweep_gamma".into()))
        }
    }

    fn values(&self, n: usize) -> Vec<usize> {
        match self {
            SweepAxis::M(v) => v.clone(),
            SweepAxis::Gamma(g) => g.iter().map(|g| ((g * n as f64).round() as usize).max(1)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    /// Position on the sweep axis; also the RNG stream of the cell.
    pub index: usize,
    pub seed: u64,
    pub m: usize,
    pub record: RunRecord,
}

impl SweepCell {
    pub fn gamma(&self) -> f64 {
        self.m as f64 / self.record.config.n as f64
    }

    pub fn id(&self) -> String {
        format!("m{}_seed{}", self.m, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Seed-major, axis order within each seed.
    pub cells: Vec<SweepCell>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every `(seed, axis value)` cell, `workers` at a time. Results are
/// ordered by key, so the output does not depend on scheduling.
pub fn run_sweep(base: &ExperimentConfig, axis: &SweepAxis, seeds: &[u64], workers: usize) -> Result<SweepResult> {
    let ms = axis.values(base.n);
    if ms.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sweep axis and seed list must be non-empty"));
    }
    let jobs: Vec<(usize, u64, usize)> = seeds
        .iter()
        .flat_map(|&s| ms.iter().enumerate().map(move |(i, &m)| (i, s, m)))
        .collect();
    let results: Vec<Result<SweepCell>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(index, seed, m)| {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.m = MRule::Fixed(m);
                run_cell(&cfg, index as u64)
                    .map(|record| SweepCell {
                        index,
                        seed,
                        m,
                        record,
                    })
                    .map_err(|e| Error::Cell {
                        cell: format!("m={m} seed={seed}"),
                        source: Box::new(e),
                    })
            })
            .collect()
    });
    Ok(SweepResult {
        cells: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Row of the sweep summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummaryRow {
    pub seed: u64,
    pub m: usize,
    pub gamma: f64,
    pub min_norm_test_error: f64,
    pub min_test_error: f64,
    pub argmin_time: f64,
    pub smallest_gram: f64,
    /// Test error at each configured iteration budget.
    pub budget_test_errors: Vec<f64>,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SweepSummaryRow> {
        self.cells
            .iter()
            .map(|c| {
                let (t, e) = c.record.min_test();
                SweepSummaryRow {
                    seed: c.seed,
                    m: c.m,
                    gamma: c.gamma(),
                    min_norm_test_error: c.record.min_norm_test().unwrap_or(f64::NAN),
                    min_test_error: e,
                    argmin_time: t,
                    smallest_gram: c.record.spectrum.smallest_gram,
                    budget_test_errors: c.record.budget_rows.iter().map(|b| b.test_error).collect(),
                }
            })
            .collect()
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Shifts each curve so every minimum equals the smallest one.
pub fn translate_curves(curves: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mins = curves
        .iter()
        .map(|c| {
            let m = c.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            if m.is_finite() {
                Ok(m)
            } else {
                Err(Error::Empty("curve has no finite value"))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let target = mins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(curves
        .iter()
        .zip(&mins)
        .map(|(c, m)| c.iter().map(|v| v - (m - target)).collect())
        .collect())
}

/// Smallest `c` with `err(t) <= min + c sqrt(t)` for every finite `t` at or
/// after each curve's minimum.
pub fn sqrt_envelope(times: &[Time], curves: &[Vec<f64>]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for curve in curves {
        if curve.len() != times.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: curve.len(),
            });
        }
        let (imin, emin) = times
            .iter()
            .zip(curve)
            .enumerate()
            .filter(|(_, (t, _))| t.is_finite())
            .map(|(i, (_, e))| (i, *e))
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if imin == usize::MAX {
            return Err(Error::Empty("curve has no finite-time value"));
        }
        for (t, e) in times.iter().zip(curve).skip(imin) {
            if let Time::Finite(t) = *t {
                if t > 0.0 {
                    c = c.max((e - emin) / t.sqrt());
                }
            }
        }
    }
    Ok(c)
}

/// Smallest Gram eigenvalue statistics for one `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpCell {
    pub gamma: f64,
    pub m: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpStudy {
    pub n: usize,
    pub d: usize,
    pub cells: Vec<MpCell>,
    pub calibration: Calibration,
    /// Gamma range used for the fit.
    pub fit_window: (f64, f64),
}

impl MpStudy {
    pub fn predicted(&self, gamma: f64) -> f64 {
        predict_smallest(gamma, self.calibration.c).unwrap_or(f64::NAN)
    }
}

/// Smallest Gram eigenvalue over a `gamma` grid, `replicates` draws per cell,
/// and a least-squares fit of the calibration constant on cell means inside
/// `fit_window`.
pub fn run_mp_study(cfg: &ExperimentConfig, fit_window: (f64, f64)) -> Result<MpStudy> {
    let n = cfg.n;
    let jobs: Vec<(usize, usize)> = (0..cfg.gamma_grid.len())
        .flat_map(|g| (0..cfg.replicates).map(move |r| (g, r)))
        .collect();
    let values: Vec<Result<f64>> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(g, r)| {
                let gamma = cfg.gamma_grid[g];
                let m = ((gamma * n as f64).round() as usize).max(1);
                let cell = (g * cfg.replicates + r) as u64;
                let seed = cell_seeds(cfg.seed, cell).data;
                gram_spectrum(seed, n, m, cfg.d, cfg.feature)
                    .map(|(s, _)| s.smallest().unwrap_or(f64::NAN))
                    .map_err(|e| Error::Cell {
                        cell: format!("gamma={gamma} replicate={r}"),
                        source: Box::new(e),
                    })
            })
            .collect()
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let cells: Vec<MpCell> = cfg
        .gamma_grid
        .iter()
        .enumerate()
        .map(|(g, &gamma)| {
            let v = values[g * cfg.replicates..(g + 1) * cfg.replicates].to_vec();
            MpCell {
                gamma,
                m: ((gamma * n as f64).round() as usize).max(1),
                mean: mean(&v),
                median: median(&v),
                values: v,
            }
        })
        .collect();
    let fit: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| c.gamma >= fit_window.0 && c.gamma <= fit_window.1)
        .map(|c| (c.gamma, c.mean))
        .collect();
    Ok(MpStudy {
        n,
        d: cfg.d,
        calibration: calibrate_c(&fit)?,
        cells,
        fit_window,
    })
}

/// Gram, kernel-matrix and analytic spectra for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraRun {
    pub seed: u64,
    pub gram: Vec<f64>,
    pub kernel: Vec<f64>,
    pub report: SpectrumComparison,
}

/// Spectrum comparison at `m = round(gamma n)`, one run per replicate.
/// The kernel matrix uses the exact ReLU constant `1/(2 pi d)`; the analytic
/// spectrum is the probability-measure operator spectrum with the same constant.
pub fn run_spectra(cfg: &ExperimentConfig) -> Result<Vec<SpectraRun>> {
    let n = cfg.n;
    let m = ((cfg.gamma * n as f64).round() as usize).max(1);
    let analytic = AnalyticSpectrum::new(cfg.d, cfg.max_degree, EigenFormula::Integral)?;
    let kernel = KernelSpec::relu(cfg.d);
    let scale = 1.0 / (2.0 * std::f64::consts::PI * cfg.d as f64);
    let runs: Vec<Result<SpectraRun>> = pool(cfg.workers)?.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let seed = cell_seeds(cfg.seed, r as u64).data;
                let (gram, data) = gram_spectrum(seed, n, m, cfg.d, cfg.feature)?;
                let ks = kernel_spectrum(&data, &kernel, seed)?;
                let report = spectrum_report(&gram, &ks, &analytic, scale)?;
                Ok(SpectraRun {
                    seed,
                    gram: gram.eigenvalues,
                    kernel: ks.eigenvalues,
                    report,
                })
            })
            .collect()
    });
    runs.into_iter().collect()
}
