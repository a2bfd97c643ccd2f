//! Batch studies behind the `qmitdd` binary: configuration, deterministic
//! task streams and CSV/JSON outputs.
//!
//! Configuration is a plain `key = value` document. Built-in defaults depend
//! on the experiment kind; values from the file replace them, and command
//! line flags (`--seed`, `--parallel`, `--out`) replace both.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::ddsolver::{self, assemble, reference_solution, rms_stress_error, Search, SolveReport, TrussModel};
use crate::error::{Error, Result};
use crate::estimation::{
    ks_critical_value, ks_statistic, sample_p_hat, subtask, task_stream, SamplingMode, SamplingPolicy,
};
use crate::materialdb::{
    generate_db, DistanceBackend, ExactBackend, KdTree, MaterialDatabase, RambergOsgoodParams, ScalingMetric,
};
use crate::noisemodel::{build_noise_model, DeviceCalibration, NoiseModel};
use crate::qdistance::{squared_distance, Algorithm, DataVector};
use crate::transpile::gate_census;
use crate::zne::{
    distance_basis_circuit, exact_series, mitigate_series, nrmse, raw_estimate, sample_series, ExtrapolationModel,
    Mitigation, ProbabilitySeries, QuantumBackend,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    DistBench,
    ZneBench,
    NmSweep,
    FoldSweep,
    Truss,
    DbsizeSweep,
    SamplingCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::DistBench,
        ExperimentKind::ZneBench,
        ExperimentKind::NmSweep,
        ExperimentKind::FoldSweep,
        ExperimentKind::Truss,
        ExperimentKind::DbsizeSweep,
        ExperimentKind::SamplingCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::DistBench => "dist-bench",
            ExperimentKind::ZneBench => "zne-bench",
            ExperimentKind::NmSweep => "nm-sweep",
            ExperimentKind::FoldSweep => "fold-sweep",
            ExperimentKind::Truss => "truss",
            ExperimentKind::DbsizeSweep => "dbsize-sweep",
            ExperimentKind::SamplingCheck => "sampling-check",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Where the noise model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSource {
    None,
    Default,
    File(PathBuf),
}

/// Distance backend for the truss studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Classical,
    Unmitigated,
    Mitigated,
}

impl BackendKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::Classical => "classical",
            BackendKind::Unmitigated => "unmitigated",
            BackendKind::Mitigated => "mitigated",
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BackendKind::Classical),
            "unmitigated" => Ok(BackendKind::Unmitigated),
            "mitigated" => Ok(BackendKind::Mitigated),
            _ => Err(Error::Config(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub algorithms: Vec<Algorithm>,
    pub models: Vec<ExtrapolationModel>,
    pub folds: usize,
    /// `None` uses exact probabilities without sampling.
    pub n_m: Option<u64>,
    pub n_m_list: Vec<u64>,
    pub folds_list: Vec<usize>,
    pub dim: usize,
    pub pairs: usize,
    pub d_max: f64,
    pub seed: u64,
    pub noise: NoiseSource,
    pub sampling: SamplingMode,
    pub truss: Option<PathBuf>,
    pub database: Option<PathBuf>,
    pub db_size: usize,
    pub db_sizes: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub c_bar: Option<f64>,
    pub runs: usize,
    pub max_iter: usize,
    pub leaf_size: usize,
    pub backends: Vec<BackendKind>,
    pub load_factor: f64,
    pub p: f64,
    pub draws: usize,
    pub compare_n_m: u64,
    pub parallel: usize,
    pub out: PathBuf,
}

const KEYS: [&str; 30] = [
    "experiment",
    "algorithm",
    "model",
    "folds",
    "n_m",
    "n_m_list",
    "folds_list",
    "dim",
    "pairs",
    "d_max",
    "seed",
    "calibration",
    "sampling",
    "truss",
    "database",
    "db_size",
    "db_sizes",
    "sigma_min",
    "sigma_max",
    "c_bar",
    "runs",
    "max_iter",
    "leaf_size",
    "backend",
    "load_factor",
    "p",
    "draws",
    "compare_n_m",
    "parallel",
    "out",
];

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {msg}"))
}

/// Integers may be written in exponent form (`1e10`).
fn parse_count(key: &str, v: &str) -> Result<u64> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let f: f64 = v.parse().map_err(|_| cfg_err(key, format!("`{v}` is not a number")))?;
    if !(f >= 0.0) || f.fract() != 0.0 || f > 1.8e19 {
        return Err(cfg_err(key, format!("`{v}` is not a non-negative integer")));
    }
    Ok(f as u64)
}

fn parse_float(key: &str, v: &str) -> Result<f64> {
    let f: f64 = v.parse().map_err(|_| cfg_err(key, format!("`{v}` is not a number")))?;
    if !f.is_finite() {
        return Err(cfg_err(key, "must be finite"));
    }
    Ok(f)
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| f(key, t))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(cfg_err(key, "list is empty"));
    }
    Ok(items)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected `key = value`"))?;
        let k = k.trim().to_ascii_lowercase();
        if !KEYS.contains(&k.as_str()) {
            return Err(Error::parse(i + 1, format!("unknown key `{k}`")));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let truss_like = matches!(kind, ExperimentKind::Truss | ExperimentKind::DbsizeSweep);
        ExperimentConfig {
            kind,
            algorithms: if truss_like {
                vec![Algorithm::HBased]
            } else {
                vec![Algorithm::SwapBased, Algorithm::HBased]
            },
            models: if truss_like {
                vec![ExtrapolationModel::Richardson]
            } else {
                ExtrapolationModel::ALL.to_vec()
            },
            folds: if truss_like { 5 } else { 6 },
            n_m: Some(match kind {
                ExperimentKind::DistBench => 10_000,
                ExperimentKind::SamplingCheck => 100_000,
                ExperimentKind::Truss | ExperimentKind::DbsizeSweep => 10_000_000_000,
                _ => 100_000_000,
            }),
            n_m_list: match kind {
                ExperimentKind::SamplingCheck => vec![10_000, 100_000_000, 1_000_000_000_000],
                _ => vec![1_000_000, 10_000_000, 100_000_000, 1_000_000_000, 10_000_000_000],
            },
            folds_list: (1..=6).collect(),
            dim: 6,
            pairs: 1000,
            d_max: 4.0,
            seed: 0,
            noise: NoiseSource::Default,
            sampling: SamplingMode::Auto,
            truss: None,
            database: None,
            db_size: 161,
            db_sizes: vec![21, 41, 81, 161, 321],
            sigma_min: -6.0,
            sigma_max: 6.0,
            c_bar: None,
            runs: 3,
            max_iter: ddsolver::DEFAULT_MAX_ITER,
            leaf_size: crate::materialdb::DEFAULT_LEAF_SIZE,
            backends: match kind {
                ExperimentKind::DbsizeSweep => vec![BackendKind::Mitigated],
                _ => vec![BackendKind::Classical, BackendKind::Unmitigated, BackendKind::Mitigated],
            },
            load_factor: 1.0,
            p: 0.3,
            draws: 20_000,
            compare_n_m: 100_000,
            parallel: 1,
            out: PathBuf::from("out"),
        }
    }

    /// Defaults overlaid with a parsed document. The document may name the
    /// experiment; if `kind` is given it must agree.
    pub fn from_kv(kind: Option<ExperimentKind>, kv: &BTreeMap<String, String>) -> Result<Self> {
        let file_kind = kv.get("experiment").map(|s| s.parse::<ExperimentKind>()).transpose()?;
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "command line asks for `{}` but the config is for `{}`",
                    a.name(),
                    b.name()
                )))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::Config("no experiment given".into())),
        };
        let mut c = Self::defaults(kind);
        for (k, v) in kv {
            let k = k.as_str();
            match k {
                "experiment" => {}
                "algorithm" => {
                    c.algorithms = match v.as_str() {
                        "both" => vec![Algorithm::SwapBased, Algorithm::HBased],
                        s => parse_list(k, s, |_, t| t.parse())?,
                    }
                }
                "model" => {
                    c.models = match v.as_str() {
                        "all" => ExtrapolationModel::ALL.to_vec(),
                        s => parse_list(k, s, |_, t| t.parse())?,
                    }
                }
                "folds" => c.folds = parse_count(k, v)? as usize,
                "n_m" => c.n_m = if v == "exact" { None } else { Some(parse_count(k, v)?) },
                "n_m_list" => c.n_m_list = parse_list(k, v, parse_count)?,
                "folds_list" => c.folds_list = parse_list(k, v, |k, t| parse_count(k, t).map(|x| x as usize))?,
                "dim" => c.dim = parse_count(k, v)? as usize,
                "pairs" => c.pairs = parse_count(k, v)? as usize,
                "d_max" => c.d_max = parse_float(k, v)?,
                "seed" => c.seed = parse_count(k, v)?,
                "calibration" => {
                    c.noise = match v.as_str() {
                        "none" => NoiseSource::None,
                        "default" => NoiseSource::Default,
                        path => NoiseSource::File(PathBuf::from(path)),
                    }
                }
                "sampling" => {
                    c.sampling = match v.as_str() {
                        "auto" => SamplingMode::Auto,
                        "exact" => SamplingMode::ExactBinomial,
                        "normal" => SamplingMode::NormalApprox,
                        _ => return Err(cfg_err(k, "expected auto, exact or normal")),
                    }
                }
                "truss" => c.truss = (v != "builtin").then(|| PathBuf::from(v)),
                "database" => c.database = (v != "generated").then(|| PathBuf::from(v)),
                "db_size" => c.db_size = parse_count(k, v)? as usize,
                "db_sizes" => c.db_sizes = parse_list(k, v, |k, t| parse_count(k, t).map(|x| x as usize))?,
                "sigma_min" => c.sigma_min = parse_float(k, v)?,
                "sigma_max" => c.sigma_max = parse_float(k, v)?,
                "c_bar" => c.c_bar = Some(parse_float(k, v)?),
                "runs" => c.runs = parse_count(k, v)? as usize,
                "max_iter" => c.max_iter = parse_count(k, v)? as usize,
                "leaf_size" => c.leaf_size = parse_count(k, v)? as usize,
                "backend" => c.backends = parse_list(k, v, |_, t| t.parse())?,
                "load_factor" => c.load_factor = parse_float(k, v)?,
                "p" => c.p = parse_float(k, v)?,
                "draws" => c.draws = parse_count(k, v)? as usize,
                "compare_n_m" => c.compare_n_m = parse_count(k, v)?,
                "parallel" => c.parallel = parse_count(k, v)? as usize,
                "out" => c.out = PathBuf::from(v),
                _ => unreachable!("keys are checked while parsing"),
            }
        }
        Ok(c)
    }

    pub fn load(kind: Option<ExperimentKind>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_kv(kind, &parse_kv(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_m == Some(0) || self.n_m_list.contains(&0) || self.compare_n_m == 0 {
            return bad("n_m must be at least 1");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.pairs == 0 || self.runs == 0 || self.draws == 0 || self.max_iter == 0 || self.leaf_size == 0 {
            return bad("pairs, runs, draws, max_iter and leaf_size must be positive");
        }
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive");
        }
        if self.algorithms.is_empty() || self.models.is_empty() || self.backends.is_empty() {
            return bad("algorithm, model and backend lists must not be empty");
        }
        if self.db_size < 2 || self.db_sizes.iter().any(|&n| n < 2) {
            return bad("databases need at least two points");
        }
        if !(self.sigma_min < self.sigma_max) {
            return bad("sigma_min must be below sigma_max");
        }
        if matches!(self.c_bar, Some(c) if !(c > 0.0)) {
            return bad("c_bar must be positive");
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad("p must lie in [0, 1]");
        }
        if self.parallel == 0 {
            return bad("parallel must be at least 1");
        }
        let needs_sampling = !matches!(self.kind, ExperimentKind::DistBench);
        if needs_sampling && self.n_m.is_none() && !matches!(self.kind, ExperimentKind::NmSweep) {
            return bad("n_m = exact is only available for dist-bench");
        }
        Ok(())
    }

    /// Resolved settings that determine the outputs (worker count and
    /// output directory excluded), one `key = value` per line.
    pub fn canonical(&self) -> String {
        let list = |v: &[String]| v.join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment", self.kind.name().into());
        put(
            "algorithm",
            list(&self.algorithms.iter().map(|a| a.to_string()).collect::<Vec<_>>()),
        );
        put(
            "model",
            list(&self.models.iter().map(|m| m.to_string()).collect::<Vec<_>>()),
        );
        put("folds", self.folds.to_string());
        put("n_m", self.n_m.map_or("exact".into(), |n| n.to_string()));
        put(
            "n_m_list",
            list(&self.n_m_list.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
        );
        put(
            "folds_list",
            list(&self.folds_list.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
        );
        put("dim", self.dim.to_string());
        put("pairs", self.pairs.to_string());
        put("d_max", format!("{:?}", self.d_max));
        put("seed", self.seed.to_string());
        put(
            "calibration",
            match &self.noise {
                NoiseSource::None => "none".into(),
                NoiseSource::Default => "default".into(),
                NoiseSource::File(p) => p.display().to_string(),
            },
        );
        put("sampling", format!("{:?}", self.sampling));
        put(
            "truss",
            self.truss
                .as_ref()
                .map_or("builtin".into(), |p| p.display().to_string()),
        );
        put(
            "database",
            self.database
                .as_ref()
                .map_or("generated".into(), |p| p.display().to_string()),
        );
        put("db_size", self.db_size.to_string());
        put(
            "db_sizes",
            list(&self.db_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
        );
        put("sigma_min", format!("{:?}", self.sigma_min));
        put("sigma_max", format!("{:?}", self.sigma_max));
        put("c_bar", self.c_bar.map_or("default".into(), |c| format!("{c:?}")));
        put("runs", self.runs.to_string());
        put("max_iter", self.max_iter.to_string());
        put("leaf_size", self.leaf_size.to_string());
        put(
            "backend",
            list(&self.backends.iter().map(|b| b.name().to_string()).collect::<Vec<_>>()),
        );
        put("load_factor", format!("{:?}", self.load_factor));
        put("p", format!("{:?}", self.p));
        put("draws", self.draws.to_string());
        put("compare_n_m", self.compare_n_m.to_string());
        s
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Everything a run reads, resolved up front so that load failures are
/// reported as configuration errors.
pub struct Inputs {
    pub config: ExperimentConfig,
    pub noise: Option<NoiseModel>,
    pub calibration: Option<DeviceCalibration>,
    pub truss: TrussModel,
    pub database: Option<MaterialDatabase>,
    pub hash: String,
}

impl Inputs {
    pub fn resolve(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let as_cfg = |what: &str, e: Error| Error::Config(format!("{what}: {e}"));
        let calibration = match &config.noise {
            NoiseSource::None => None,
            NoiseSource::Default => Some(DeviceCalibration::default()),
            NoiseSource::File(p) => Some(DeviceCalibration::load(p).map_err(|e| as_cfg("calibration", e))?),
        };
        let noise = calibration
            .as_ref()
            .map(build_noise_model)
            .transpose()
            .map_err(|e| as_cfg("calibration", e))?;
        let truss = match &config.truss {
            None => TrussModel::roof_truss(),
            Some(p) => TrussModel::load(p).map_err(|e| as_cfg("truss", e))?,
        }
        .scaled_loads(config.load_factor);
        let metric = scaling_for(&config)?;
        let database = match &config.database {
            None => None,
            Some(p) => Some(MaterialDatabase::load(p, metric).map_err(|e| as_cfg("database", e))?),
        };
        let mut hasher = Sha256::new();
        hasher.update(config.canonical().as_bytes());
        if let Some(c) = &calibration {
            hasher.update(c.to_kv_string().as_bytes());
        }
        for p in [&config.truss, &config.database].into_iter().flatten() {
            hasher.update(std::fs::read(p)?);
        }
        Ok(Inputs {
            hash: hex(&hasher.finalize()),
            config,
            noise,
            calibration,
            truss,
            database,
        })
    }
}

fn scaling_for(config: &ExperimentConfig) -> Result<ScalingMetric> {
    match config.c_bar {
        Some(c) => ScalingMetric::scalar(c),
        None => ddsolver::default_scaling(&RambergOsgoodParams::default()),
    }
}

/// A CSV table; `config_hash` and `seed` columns are added on output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, hash: &str, seed: u64) -> String {
        let mut s = format!("config_hash,seed,{}\n", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{hash},{seed},{}", r.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub tables: Vec<(String, Table)>,
    pub summary: Map<String, Value>,
    /// Wall-clock measurements; kept apart because they vary between runs.
    pub timings: Map<String, Value>,
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn json_num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// Task stream tags keep the random streams of different uses apart.
const TAG_PAIR: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_TRUSS_INIT: u64 = 3;
const TAG_TRUSS_BACKEND: u64 = 4;
const TAG_SAMPLING_CHECK: u64 = 5;

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    task_stream(seed, subtask(subtask(tag, a), b))
}

/// A random pair in `dim` dimensions whose squared distance is uniform on
/// (0, d_max]: V ~ U[−1, 1]^D and V' = V + √d·u with u a random unit vector.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R, dim: usize, d_max: f64) -> Result<(DataVector, DataVector)> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let d = d_max * (1.0 - rng.random::<f64>());
    let dir: Vec<f64> = loop {
        let u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = u.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break u.into_iter().map(|x| x / n).collect();
        }
    };
    let w = v.iter().zip(&dir).map(|(a, u)| a + d.sqrt() * u).collect();
    Ok((DataVector::new(v)?, DataVector::new(w)?))
}

/// Pair `i` of a benchmark.
pub fn benchmark_pair(seed: u64, i: usize, dim: usize, d_max: f64) -> Result<(DataVector, DataVector)> {
    random_pair(&mut stream(seed, TAG_PAIR, i as u64, 0), dim, d_max)
}

fn par_map<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

fn alg_index(a: Algorithm) -> u64 {
    match a {
        Algorithm::SwapBased => 0,
        Algorithm::HBased => 1,
    }
}

struct PairSeries {
    v: DataVector,
    w: DataVector,
    d: f64,
    exact: Vec<f64>,
}

/// Exact folded series for every (algorithm, pair); failures are kept per pair.
fn collect_exact(inputs: &Inputs, folds: usize) -> Result<Vec<(Algorithm, Vec<Result<PairSeries>>)>> {
    let c = &inputs.config;
    c.algorithms
        .iter()
        .map(|&alg| {
            let per_pair = par_map(c.parallel, c.pairs, |i| {
                let (v, w) = benchmark_pair(c.seed, i, c.dim, c.d_max)?;
                let circuit = distance_basis_circuit(alg, &v, &w)?;
                let exact = exact_series(&circuit, folds, inputs.noise.as_ref())?;
                Ok(PairSeries {
                    d: squared_distance(&v, &w),
                    v,
                    w,
                    exact,
                })
            })?;
            Ok((alg, per_pair))
        })
        .collect()
}

fn status(r: &Result<PairSeries>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => format!("\"error: {}\"", e.to_string().replace('"', "'")),
    }
}

fn circuit_shape(alg: Algorithm, dim: usize) -> Result<Value> {
    let v = DataVector::new((0..dim).map(|i| 1.0 + i as f64).collect())?;
    let w = DataVector::new((0..dim).map(|i| dim as f64 - i as f64).collect())?;
    let c = distance_basis_circuit(alg, &v, &w)?;
    let census = gate_census(&c);
    Ok(json!({
        "qubits": c.n_qubits(),
        "depth": c.depth(),
        "gates": c.len(),
        "one_qubit_noisy": census.m_s,
        "two_qubit": census.m_t,
    }))
}

fn policy(c: &ExperimentConfig, n_m: u64) -> Result<SamplingPolicy> {
    SamplingPolicy::new(n_m, c.sampling)
}

fn dist_bench(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let mut table = Table::new(&["pair", "algorithm", "d", "p_exact", "p_hat", "d_hat", "status"]);
    let mut summary = Map::new();
    for (alg, pairs) in collect_exact(inputs, 0)? {
        let (mut est, mut tru) = (Vec::new(), Vec::new());
        for (i, r) in pairs.iter().enumerate() {
            let row = match r {
                Ok(ps) => {
                    let p = ps.exact[0];
                    let p_hat = match c.n_m {
                        None => p,
                        Some(n) => sample_p_hat(
                            p,
                            &policy(c, n)?,
                            &mut stream(c.seed, TAG_SAMPLE, i as u64, alg_index(alg)),
                        )?,
                    };
                    let d_hat = raw_estimate(alg, p_hat, c.n_m.unwrap_or(0), &ps.v, &ps.w).d_hat;
                    est.push(d_hat);
                    tru.push(ps.d);
                    vec![
                        i.to_string(),
                        alg.to_string(),
                        num(ps.d),
                        num(p),
                        num(p_hat),
                        num(d_hat),
                        status(r),
                    ]
                }
                Err(_) => vec![
                    i.to_string(),
                    alg.to_string(),
                    "".into(),
                    "".into(),
                    "".into(),
                    "".into(),
                    status(r),
                ],
            };
            table.push(row);
        }
        let n = if est.is_empty() {
            Value::Null
        } else {
            json_num(nrmse(&est, &tru)?)
        };
        summary.insert(
            alg.to_string(),
            json!({ "nrmse": n, "failed": pairs.len() - est.len(), "circuit": circuit_shape(alg, c.dim)? }),
        );
    }
    Ok(RunOutput {
        tables: vec![("dist_bench.csv".into(), table)],
        summary,
        ..Default::default()
    })
}

/// Model name used in output rows, with `none` for the λ = 1 estimate.
fn model_names(models: &[ExtrapolationModel]) -> Vec<String> {
    std::iter::once("none".to_string())
        .chain(models.iter().map(|m| m.to_string()))
        .collect()
}

/// d̂ per model (unmitigated first) for one sampled series.
fn estimates_for(
    alg: Algorithm,
    models: &[ExtrapolationModel],
    series: &ProbabilitySeries,
    ps: &PairSeries,
) -> Result<Vec<(f64, bool)>> {
    let mut out = vec![(
        raw_estimate(alg, series.p_hats()[0], series.n_m().unwrap_or(0), &ps.v, &ps.w).d_hat,
        false,
    )];
    for &m in models {
        let r = mitigate_series(alg, m, series, &ps.v, &ps.w)?;
        out.push((r.estimate.d_hat, r.estimate.clamped));
    }
    Ok(out)
}

fn zne_bench(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let n_m = c.n_m.expect("validated");
    let names = model_names(&c.models);
    let mut table = Table::new(&["pair", "algorithm", "model", "d", "d_hat", "clamped", "status"]);
    let mut summary = Map::new();
    for (alg, pairs) in collect_exact(inputs, c.folds)? {
        let mut est = vec![Vec::new(); names.len()];
        let mut tru = Vec::new();
        for (i, r) in pairs.iter().enumerate() {
            let ps = match r {
                Ok(ps) => ps,
                Err(_) => {
                    table.push(vec![
                        i.to_string(),
                        alg.to_string(),
                        "".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                        status(r),
                    ]);
                    continue;
                }
            };
            let mut rng = stream(c.seed, TAG_SAMPLE, i as u64, alg_index(alg));
            let series = sample_series(&ps.exact, &policy(c, n_m)?, &mut rng)?;
            let e = estimates_for(alg, &c.models, &series, ps)?;
            tru.push(ps.d);
            for (k, (d_hat, clamped)) in e.iter().enumerate() {
                est[k].push(*d_hat);
                table.push(vec![
                    i.to_string(),
                    alg.to_string(),
                    names[k].clone(),
                    num(ps.d),
                    num(*d_hat),
                    clamped.to_string(),
                    "ok".into(),
                ]);
            }
        }
        let mut per_model = Map::new();
        for (k, name) in names.iter().enumerate() {
            let v = if tru.is_empty() {
                Value::Null
            } else {
                json_num(nrmse(&est[k], &tru)?)
            };
            per_model.insert(name.clone(), v);
        }
        summary.insert(
            alg.to_string(),
            json!({ "nrmse": per_model, "failed": pairs.len() - tru.len() }),
        );
    }
    Ok(RunOutput {
        tables: vec![("zne_bench.csv".into(), table)],
        summary,
        ..Default::default()
    })
}

fn nm_sweep(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let names = model_names(&c.models);
    let mut table = Table::new(&["algorithm", "n_m", "model", "nrmse"]);
    let mut summary = Map::new();
    for (alg, pairs) in collect_exact(inputs, c.folds)? {
        let ok: Vec<&PairSeries> = pairs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let tru: Vec<f64> = ok.iter().map(|p| p.d).collect();
        let mut per_nm = Map::new();
        for (k, &n_m) in c.n_m_list.iter().enumerate() {
            let pol = policy(c, n_m)?;
            let mut est = vec![Vec::new(); names.len()];
            for (i, ps) in ok.iter().enumerate() {
                let mut rng = stream(c.seed, TAG_SAMPLE, i as u64, alg_index(alg) * 1000 + k as u64);
                let series = sample_series(&ps.exact, &pol, &mut rng)?;
                for (m, (d_hat, _)) in estimates_for(alg, &c.models, &series, ps)?.into_iter().enumerate() {
                    est[m].push(d_hat);
                }
            }
            let mut per_model = Map::new();
            for (m, name) in names.iter().enumerate() {
                let v = if tru.is_empty() {
                    f64::NAN
                } else {
                    nrmse(&est[m], &tru)?
                };
                table.push(vec![alg.to_string(), n_m.to_string(), name.clone(), num(v)]);
                per_model.insert(name.clone(), json_num(v));
            }
            per_nm.insert(n_m.to_string(), Value::Object(per_model));
        }
        summary.insert(alg.to_string(), Value::Object(per_nm));
    }
    Ok(RunOutput {
        tables: vec![("nm_sweep.csv".into(), table)],
        summary,
        ..Default::default()
    })
}

fn fold_sweep(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let n_m = c.n_m.expect("validated");
    let max_folds = c.folds_list.iter().copied().max().unwrap_or(0);
    let names = model_names(&c.models);
    let mut table = Table::new(&["algorithm", "folds", "model", "nrmse"]);
    let mut summary = Map::new();
    for (alg, pairs) in collect_exact(inputs, max_folds)? {
        let ok: Vec<&PairSeries> = pairs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let tru: Vec<f64> = ok.iter().map(|p| p.d).collect();
        // one sampled series per pair; shorter series are its prefixes
        let full: Vec<ProbabilitySeries> = ok
            .iter()
            .enumerate()
            .map(|(i, ps)| {
                let mut rng = stream(c.seed, TAG_SAMPLE, i as u64, alg_index(alg));
                sample_series(&ps.exact, &policy(c, n_m)?, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut per_n = Map::new();
        for &n in &c.folds_list {
            let mut est = vec![Vec::new(); names.len()];
            for (ps, s) in ok.iter().zip(&full) {
                let series = s.truncated(n + 1)?;
                for (m, (d_hat, _)) in estimates_for(alg, &c.models, &series, ps)?.into_iter().enumerate() {
                    est[m].push(d_hat);
                }
            }
            let mut per_model = Map::new();
            for (m, name) in names.iter().enumerate() {
                let v = if tru.is_empty() {
                    f64::NAN
                } else {
                    nrmse(&est[m], &tru)?
                };
                table.push(vec![alg.to_string(), n.to_string(), name.clone(), num(v)]);
                per_model.insert(name.clone(), json_num(v));
            }
            per_n.insert(n.to_string(), Value::Object(per_model));
        }
        summary.insert(alg.to_string(), Value::Object(per_n));
    }
    Ok(RunOutput {
        tables: vec![("fold_sweep.csv".into(), table)],
        summary,
        ..Default::default()
    })
}

fn truss_algorithm(c: &ExperimentConfig) -> Algorithm {
    if c.algorithms == [Algorithm::SwapBased] {
        Algorithm::SwapBased
    } else {
        Algorithm::HBased
    }
}

fn truss_model(c: &ExperimentConfig) -> ExtrapolationModel {
    if c.models.len() == 1 {
        c.models[0]
    } else {
        ExtrapolationModel::Richardson
    }
}

/// One data-driven solve of the configured truss with the given backend.
#[allow(clippy::too_many_arguments)]
pub fn truss_run(
    truss: &TrussModel,
    db: &MaterialDatabase,
    search: Search<'_>,
    backend: BackendKind,
    algorithm: Algorithm,
    model: ExtrapolationModel,
    folds: usize,
    policy: SamplingPolicy,
    noise: Option<&NoiseModel>,
    seed: u64,
    run: u64,
    max_iter: usize,
) -> Result<SolveReport> {
    let c = db.metric().matrix()[(0, 0)];
    let asm = assemble(truss, c)?;
    let mut init = stream(seed, TAG_TRUSS_INIT, run, 0);
    let rng = stream(seed, TAG_TRUSS_BACKEND, run, backend as u64);
    let mut b: Box<dyn DistanceBackend> = match backend {
        BackendKind::Classical => Box::new(ExactBackend),
        BackendKind::Unmitigated => Box::new(QuantumBackend::new(
            algorithm,
            Mitigation::None,
            policy,
            noise.cloned(),
            rng,
        )),
        BackendKind::Mitigated => Box::new(QuantumBackend::new(
            algorithm,
            Mitigation::Zne { model, folds },
            policy,
            noise.cloned(),
            rng,
        )),
    };
    ddsolver::solve(&asm, db, search, b.as_mut(), &mut init, max_iter)
}

fn generated_db(c: &ExperimentConfig, n: usize) -> Result<MaterialDatabase> {
    generate_db(&RambergOsgoodParams::default(), c.sigma_min, c.sigma_max, n)?.with_metric(scaling_for(c)?)
}

fn truss(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let db = match &inputs.database {
        Some(db) => db.clone(),
        None => generated_db(c, c.db_size)?,
    };
    let tree = KdTree::from_database(&db, c.leaf_size)?;
    let reference = reference_solution(&inputs.truss, &RambergOsgoodParams::default())?;
    let weights = inputs.truss.weights();
    let pol = policy(c, c.n_m.expect("validated"))?;
    let tasks: Vec<(BackendKind, usize)> = c
        .backends
        .iter()
        .flat_map(|&b| (0..c.runs).map(move |r| (b, r)))
        .collect();
    let reports = par_map(c.parallel, tasks.len(), |k| {
        let (b, r) = tasks[k];
        truss_run(
            &inputs.truss,
            &db,
            Search::Tree(&tree),
            b,
            truss_algorithm(c),
            truss_model(c),
            c.folds,
            pol,
            inputs.noise.as_ref(),
            c.seed,
            r as u64,
            c.max_iter,
        )
    })?;
    let mut iters = Table::new(&["backend", "run", "iteration", "global_distance"]);
    let mut bars = Table::new(&["backend", "run", "bar", "sigma_ref", "sigma_data", "sigma_admissible"]);
    let mut runs = Table::new(&[
        "backend",
        "run",
        "iterations",
        "converged",
        "sigma_rms",
        "mean_distance_calls",
        "status",
    ]);
    let mut per_backend: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut summary = Map::new();
    for ((b, r), rep) in tasks.iter().zip(&reports) {
        let name = b.name();
        match rep {
            Ok(rep) => {
                for (it, f) in rep.history.iter().enumerate() {
                    iters.push(vec![name.into(), r.to_string(), (it + 1).to_string(), num(*f)]);
                }
                for (e, bar) in inputs.truss.bars.iter().enumerate() {
                    bars.push(vec![
                        name.into(),
                        r.to_string(),
                        bar.id.to_string(),
                        num(reference[e]),
                        num(rep.data_stress[e]),
                        num(rep.admissible_stress[e]),
                    ]);
                }
                let rms = rms_stress_error(&rep.data_stress, &reference, &weights).ok();
                if let Some(v) = rms {
                    per_backend.entry(name).or_default().push(v);
                }
                runs.push(vec![
                    name.into(),
                    r.to_string(),
                    rep.iterations.to_string(),
                    rep.converged.to_string(),
                    rms.map_or("n/a".into(), num),
                    num(rep.mean_calls_per_search()),
                    "ok".into(),
                ]);
            }
            Err(e) => runs.push(vec![
                name.into(),
                r.to_string(),
                "".into(),
                "".into(),
                "".into(),
                "".into(),
                format!("\"error: {}\"", e.to_string().replace('"', "'")),
            ]),
        }
    }
    for b in &c.backends {
        let v = per_backend.get(b.name());
        let mean = v
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        summary.insert(
            b.name().into(),
            json!({
                "sigma_rms_mean": mean.map_or(Value::Null, json_num),
                "sigma_rms": v.map_or(Value::Null, |v| v.iter().map(|x| json_num(*x)).collect()),
            }),
        );
    }
    summary.insert("database_points".into(), json!(db.len()));
    Ok(RunOutput {
        tables: vec![
            ("truss_iterations.csv".into(), iters),
            ("truss_bars.csv".into(), bars),
            ("truss_runs.csv".into(), runs),
        ],
        summary,
        ..Default::default()
    })
}

fn dbsize_sweep(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let reference = reference_solution(&inputs.truss, &RambergOsgoodParams::default())?;
    let weights = inputs.truss.weights();
    let pol = policy(c, c.n_m.expect("validated"))?;
    let mut table = Table::new(&[
        "n",
        "backend",
        "search",
        "run",
        "sigma_rms",
        "mean_distance_calls",
        "status",
    ]);
    let mut summary = Map::new();
    for &n in &c.db_sizes {
        let db = generated_db(c, n)?;
        let tree = KdTree::from_database(&db, c.leaf_size)?;
        for &b in &c.backends {
            for (search_name, search) in [("kdtree", Search::Tree(&tree)), ("full", Search::Full)] {
                let reps = par_map(c.parallel, c.runs, |r| {
                    truss_run(
                        &inputs.truss,
                        &db,
                        search,
                        b,
                        truss_algorithm(c),
                        truss_model(c),
                        c.folds,
                        pol,
                        inputs.noise.as_ref(),
                        c.seed,
                        r as u64,
                        c.max_iter,
                    )
                })?;
                let (mut rms_all, mut calls_all) = (Vec::new(), Vec::new());
                for (r, rep) in reps.iter().enumerate() {
                    let row_start = vec![n.to_string(), b.name().into(), search_name.into(), r.to_string()];
                    let rest = match rep {
                        Ok(rep) => {
                            let rms = rms_stress_error(&rep.data_stress, &reference, &weights).ok();
                            if let Some(v) = rms {
                                rms_all.push(v);
                            }
                            calls_all.push(rep.mean_calls_per_search());
                            vec![
                                rms.map_or("n/a".into(), num),
                                num(rep.mean_calls_per_search()),
                                "ok".into(),
                            ]
                        }
                        Err(e) => vec![
                            "".into(),
                            "".into(),
                            format!("\"error: {}\"", e.to_string().replace('"', "'")),
                        ],
                    };
                    table.push(row_start.into_iter().chain(rest).collect());
                }
                let mean = |v: &[f64]| {
                    if v.is_empty() {
                        Value::Null
                    } else {
                        json_num(v.iter().sum::<f64>() / v.len() as f64)
                    }
                };
                summary.insert(
                    format!("{n}/{}/{search_name}", b.name()),
                    json!({ "sigma_rms_mean": mean(&rms_all), "mean_distance_calls": mean(&calls_all) }),
                );
            }
        }
    }
    Ok(RunOutput {
        tables: vec![("dbsize_sweep.csv".into(), table)],
        summary,
        ..Default::default()
    })
}

/// Wall time of `draws` normal-approximation draws at `n_m`, in seconds.
pub fn time_normal_draws(p: f64, n_m: u64, draws: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let pol = SamplingPolicy::new(n_m, SamplingMode::NormalApprox)?;
    let start = Instant::now();
    let mut acc = 0.0;
    for _ in 0..draws {
        acc += sample_p_hat(p, &pol, rng)?;
    }
    let t = start.elapsed().as_secs_f64();
    std::hint::black_box(acc);
    Ok(t)
}

fn sampling_check(inputs: &Inputs) -> Result<RunOutput> {
    let c = &inputs.config;
    let draw = |mode: SamplingMode, tag: u64| -> Result<Vec<f64>> {
        let pol = SamplingPolicy::new(c.compare_n_m, mode)?;
        let mut rng = stream(c.seed, TAG_SAMPLING_CHECK, tag, 0);
        (0..c.draws).map(|_| sample_p_hat(c.p, &pol, &mut rng)).collect()
    };
    let exact = draw(SamplingMode::ExactBinomial, 0)?;
    let normal = draw(SamplingMode::NormalApprox, 1)?;
    let mut table = Table::new(&["draw", "p_hat_exact", "p_hat_normal"]);
    for (i, (a, b)) in exact.iter().zip(&normal).enumerate() {
        table.push(vec![i.to_string(), num(*a), num(*b)]);
    }
    let ks = ks_statistic(&exact, &normal);
    let crit = ks_critical_value(0.01, exact.len(), normal.len());
    let mut summary = Map::new();
    summary.insert(
        "ks".into(),
        json!({ "statistic": json_num(ks), "critical_1pct": json_num(crit), "n_m": c.compare_n_m, "p": c.p }),
    );
    let mut timings = Map::new();
    for (k, &n_m) in c.n_m_list.iter().enumerate() {
        let mut rng = stream(c.seed, TAG_SAMPLING_CHECK, 2, k as u64);
        timings.insert(
            format!("normal_draws_seconds/{n_m}"),
            json_num(time_normal_draws(c.p, n_m, c.draws, &mut rng)?),
        );
    }
    Ok(RunOutput {
        tables: vec![("sampling_check.csv".into(), table)],
        summary,
        timings,
    })
}

/// Runs the configured experiment.
pub fn run(inputs: &Inputs) -> Result<RunOutput> {
    let start = Instant::now();
    let mut out = match inputs.config.kind {
        ExperimentKind::DistBench => dist_bench(inputs),
        ExperimentKind::ZneBench => zne_bench(inputs),
        ExperimentKind::NmSweep => nm_sweep(inputs),
        ExperimentKind::FoldSweep => fold_sweep(inputs),
        ExperimentKind::Truss => truss(inputs),
        ExperimentKind::DbsizeSweep => dbsize_sweep(inputs),
        ExperimentKind::SamplingCheck => sampling_check(inputs),
    }?;
    out.summary
        .insert("experiment".into(), json!(inputs.config.kind.name()));
    out.summary.insert("config_hash".into(), json!(inputs.hash));
    out.summary.insert("seed".into(), json!(inputs.config.seed));
    out.timings
        .insert("total_seconds".into(), json_num(start.elapsed().as_secs_f64()));
    Ok(out)
}

/// Writes the tables, `summary.json`, `timings.json` and the resolved
/// configuration into `dir`.
pub fn write_outputs(dir: &Path, inputs: &Inputs, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, t) in &out.tables {
        std::fs::write(dir.join(name), t.to_csv(&inputs.hash, inputs.config.seed))?;
    }
    let pretty = |m: &Map<String, Value>| serde_json::to_string_pretty(m).expect("maps serialize") + "\n";
    std::fs::write(dir.join("summary.json"), pretty(&out.summary))?;
    std::fs::write(dir.join("timings.json"), pretty(&out.timings))?;
    std::fs::write(dir.join("config.resolved"), inputs.config.canonical())?;
    Ok(())
}
