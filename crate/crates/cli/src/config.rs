//! Flat `section.key = value` run configuration.
//!
//! ```text
//! # Wigner matrix, three probes
//! operator.kind = wigner
//! operator.n = 256
//! lanczos.k = 10
//! run.seeds = 1,2,3
//! ```
//!
//! Unknown keys, duplicate keys and keys that do not apply to the chosen
//! operator are errors. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use slq_core::autodiff::{LossKind, ModelSpec};
use slq_core::column_probe::{default_thresholds, DEFAULT_BINS};
use slq_core::diagnostics::{DEFAULT_CLUSTER_TOL, DEFAULT_GHOST_WEIGHT};
use slq_core::{LanczosConfig, Precision, ProbeDistribution, ProbeSpec, Reorthogonalization};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

type Result<T> = std::result::Result<T, ConfigError>;

const KEYS: &[&str] = &[
    "operator.kind",
    "operator.n",
    "operator.sigma",
    "operator.seed",
    "operator.spikes",
    "operator.path",
    "operator.values",
    "model.arch",
    "model.widths",
    "model.d_model",
    "model.n_heads",
    "model.seq_len",
    "model.outputs",
    "model.loss",
    "model.init_seed",
    "data.path",
    "data.samples",
    "data.seed",
    "data.batch_size",
    "lanczos.k",
    "lanczos.reorth",
    "lanczos.tol",
    "lanczos.probe",
    "lanczos.store_basis",
    "run.workers",
    "run.precision",
    "run.seeds",
    "run.out",
    "density.sigma",
    "density.points",
    "ghost.cluster_tol",
    "ghost.weight_threshold",
    "near_zero.eps",
    "probe.index",
    "probe.bins",
    "probe.thresholds",
];

/// Raw key-value pairs, before interpretation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorSource {
    Dense {
        path: PathBuf,
    },
    Wigner {
        n: usize,
        sigma: f64,
        seed: u64,
    },
    Spiked {
        n: usize,
        sigma: f64,
        spikes: Vec<f64>,
        seed: u64,
    },
    Identity {
        n: usize,
    },
    Diagonal {
        values: Vec<f64>,
    },
    Autodiff {
        model: ModelSpec,
        init_seed: u64,
        data: DataSource,
        batch_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub operator: OperatorSource,
    /// Probe seed is replaced per run by each entry of `seeds`.
    pub lanczos: LanczosConfig,
    pub workers: usize,
    pub precision: Precision,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub density_sigma: Option<f64>,
    pub density_points: usize,
    pub cluster_tol: f64,
    pub ghost_weight: f64,
    pub near_zero_eps: Option<f64>,
    pub probe_index: Option<usize>,
    pub probe_bins: usize,
    pub probe_thresholds: Vec<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub precision: Option<Precision>,
    pub k: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, raw: &mut RawConfig) {
        if let Some(w) = self.workers {
            raw.set("run.workers", w.to_string());
        }
        if let Some(p) = self.precision {
            raw.set("run.precision", p.to_string());
        }
        if let Some(k) = self.k {
            raw.set("lanczos.k", k.to_string());
        }
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            raw.set("run.seeds", list.join(","));
        }
        if let Some(out) = &self.out {
            raw.set("run.out", out.display().to_string());
        }
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
    base: &'a Path,
}

impl Reader<'_> {
    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| ConfigError(format!("`{key} = {v}`: {e}"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| ConfigError(format!("`{key}` entry `{s}`: {e}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let p = PathBuf::from(self.req::<String>(key)?);
        Ok(if p.is_relative() { self.base.join(p) } else { p })
    }

    fn reject_present(&self, keys: &[&str], why: &str) -> Result<()> {
        match keys.iter().find(|k| self.raw.get(k).is_some()) {
            Some(k) => Err(ConfigError(format!("key `{k}` does not apply {why}"))),
            None => Ok(()),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or uses defaults when absent) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let (mut raw, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (RawConfig::parse(&text)?, base)
            }
            None => (RawConfig::default(), PathBuf::new()),
        };
        overrides.apply(&mut raw);
        Self::from_raw(&raw, &base)
    }

    pub fn from_raw(raw: &RawConfig, base: &Path) -> Result<Self> {
        let r = Reader { raw, base };
        let kind: String = r.or("operator.kind", "wigner".to_string())?;
        let model_keys = [
            "model.arch",
            "model.widths",
            "model.d_model",
            "model.n_heads",
            "model.seq_len",
            "model.outputs",
            "model.loss",
            "model.init_seed",
            "data.path",
            "data.samples",
            "data.seed",
            "data.batch_size",
        ];
        let why = format!("to operator.kind = {kind}");
        let operator = match kind.as_str() {
            "dense" => {
                r.reject_present(&["operator.n", "operator.sigma", "operator.seed", "operator.spikes", "operator.values"], &why)?;
                r.reject_present(&model_keys, &why)?;
                OperatorSource::Dense {
                    path: r.path("operator.path")?,
                }
            }
            "wigner" | "spiked" => {
                r.reject_present(&["operator.path", "operator.values"], &why)?;
                r.reject_present(&model_keys, &why)?;
                let n = r.or("operator.n", 256)?;
                let sigma = r.or("operator.sigma", 1.0)?;
                let seed = r.or("operator.seed", 0)?;
                if kind == "wigner" {
                    r.reject_present(&["operator.spikes"], &why)?;
                    OperatorSource::Wigner { n, sigma, seed }
                } else {
                    let spikes = r
                        .list("operator.spikes")?
                        .ok_or_else(|| ConfigError("missing required key `operator.spikes`".into()))?;
                    OperatorSource::Spiked { n, sigma, spikes, seed }
                }
            }
            "identity" => {
                r.reject_present(&["operator.path", "operator.values", "operator.sigma", "operator.seed", "operator.spikes"], &why)?;
                r.reject_present(&model_keys, &why)?;
                OperatorSource::Identity { n: r.req("operator.n")? }
            }
            "diagonal" => {
                r.reject_present(&["operator.path", "operator.n", "operator.sigma", "operator.seed", "operator.spikes"], &why)?;
                r.reject_present(&model_keys, &why)?;
                OperatorSource::Diagonal {
                    values: r
                        .list("operator.values")?
                        .ok_or_else(|| ConfigError("missing required key `operator.values`".into()))?,
                }
            }
            "autodiff" => {
                r.reject_present(&["operator.path", "operator.values", "operator.n", "operator.sigma", "operator.seed", "operator.spikes"], &why)?;
                Self::autodiff_source(&r)?
            }
            other => {
                return Err(ConfigError(format!(
                    "unknown operator.kind `{other}` (expected dense, wigner, spiked, identity, diagonal or autodiff)"
                )))
            }
        };

        let reorth: Reorthogonalization = r.or("lanczos.reorth", Reorthogonalization::None)?;
        let distribution = match r.or("lanczos.probe", "gaussian".to_string())?.as_str() {
            "gaussian" => ProbeDistribution::Gaussian,
            "rademacher" => ProbeDistribution::Rademacher,
            other => return Err(ConfigError(format!("unknown lanczos.probe `{other}`"))),
        };
        let lanczos = LanczosConfig {
            k_max: r.or("lanczos.k", 10)?,
            breakdown_tol: r.opt("lanczos.tol")?,
            reorthogonalize: reorth,
            probe: ProbeSpec {
                distribution,
                ..ProbeSpec::default()
            },
            store_basis: r.or("lanczos.store_basis", false)?,
        };
        lanczos.validate().map_err(|e| ConfigError(e.to_string()))?;

        let seeds = r.list("run.seeds")?.unwrap_or_else(|| vec![ProbeSpec::default().seed]);
        if seeds.is_empty() {
            return Err(ConfigError("run.seeds is empty".into()));
        }
        let workers = r.or("run.workers", 1usize)?;
        if workers == 0 {
            return Err(ConfigError("run.workers must be at least 1".into()));
        }
        let out = match raw.get("run.out") {
            Some(_) => r.path("run.out")?,
            None => PathBuf::from("slq-out"),
        };

        let density_sigma: Option<f64> = r.opt("density.sigma")?;
        if let Some(s) = density_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError(format!("density.sigma must be positive, got {s}")));
            }
        }
        let density_points = r.or("density.points", 512usize)?;
        if density_points < 2 {
            return Err(ConfigError("density.points must be at least 2".into()));
        }
        let probe_thresholds = r.list("probe.thresholds")?.unwrap_or_else(default_thresholds);
        if probe_thresholds.is_empty() || probe_thresholds.iter().any(|t: &f64| !(*t > 0.0 && t.is_finite())) {
            return Err(ConfigError("probe.thresholds must be positive".into()));
        }
        let probe_bins = r.or("probe.bins", DEFAULT_BINS)?;
        if probe_bins == 0 {
            return Err(ConfigError("probe.bins must be at least 1".into()));
        }

        Ok(Self {
            operator,
            lanczos,
            workers,
            precision: r.or("run.precision", Precision::F64)?,
            seeds,
            out,
            density_sigma,
            density_points,
            cluster_tol: r.or("ghost.cluster_tol", DEFAULT_CLUSTER_TOL)?,
            ghost_weight: r.or("ghost.weight_threshold", DEFAULT_GHOST_WEIGHT)?,
            near_zero_eps: r.opt("near_zero.eps")?,
            probe_index: r.opt("probe.index")?,
            probe_bins,
            probe_thresholds,
        })
    }

    fn autodiff_source(r: &Reader<'_>) -> Result<OperatorSource> {
        let loss: LossKind = r.or("model.loss", LossKind::Mse)?;
        let arch: String = r.or("model.arch", "mlp".to_string())?;
        let model = match arch.as_str() {
            "mlp" => {
                r.reject_present(&["model.d_model", "model.n_heads", "model.seq_len", "model.outputs"], "to model.arch = mlp")?;
                let widths = r.list("model.widths")?.unwrap_or_else(|| vec![4, 8, 1]);
                ModelSpec::mlp(&widths, loss)
            }
            "attention" => {
                r.reject_present(&["model.widths"], "to model.arch = attention")?;
                ModelSpec::attention(
                    r.or("model.d_model", 4)?,
                    r.or("model.n_heads", 2)?,
                    r.or("model.seq_len", 3)?,
                    r.or("model.outputs", if loss == LossKind::Mse { 1 } else { 3 })?,
                    loss,
                )
            }
            other => return Err(ConfigError(format!("unknown model.arch `{other}` (expected mlp or attention)"))),
        }
        .map_err(|e| ConfigError(e.to_string()))?;
        let data = match r.raw.get("data.path") {
            Some(_) => {
                r.reject_present(&["data.samples", "data.seed"], "when data.path is set")?;
                DataSource::File(r.path("data.path")?)
            }
            None => DataSource::Synthetic {
                samples: r.or("data.samples", 32)?,
                seed: r.or("data.seed", 0)?,
            },
        };
        let batch_size = r.or("data.batch_size", 16usize)?;
        if batch_size == 0 {
            return Err(ConfigError("data.batch_size must be at least 1".into()));
        }
        Ok(OperatorSource::Autodiff {
            model,
            init_seed: r.or("model.init_seed", 0)?,
            data,
            batch_size,
        })
    }

    /// Every effective setting, one `key = value` per line in a fixed order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        match &self.operator {
            OperatorSource::Dense { path } => {
                put("operator.kind", "dense".into());
                put("operator.path", path.display().to_string());
            }
            OperatorSource::Wigner { n, sigma, seed } => {
                put("operator.kind", "wigner".into());
                put("operator.n", n.to_string());
                put("operator.sigma", format!("{sigma:e}"));
                put("operator.seed", seed.to_string());
            }
            OperatorSource::Spiked { n, sigma, spikes, seed } => {
                put("operator.kind", "spiked".into());
                put("operator.n", n.to_string());
                put("operator.sigma", format!("{sigma:e}"));
                put("operator.spikes", join(spikes));
                put("operator.seed", seed.to_string());
            }
            OperatorSource::Identity { n } => {
                put("operator.kind", "identity".into());
                put("operator.n", n.to_string());
            }
            OperatorSource::Diagonal { values } => {
                put("operator.kind", "diagonal".into());
                put("operator.values", join(values));
            }
            OperatorSource::Autodiff {
                model,
                init_seed,
                data,
                batch_size,
            } => {
                put("operator.kind", "autodiff".into());
                put("model.architecture", format!("{:?}", model.architecture));
                put("model.loss", format!("{:?}", model.loss));
                put("model.init_seed", init_seed.to_string());
                match data {
                    DataSource::File(p) => put("data.path", p.display().to_string()),
                    DataSource::Synthetic { samples, seed } => {
                        put("data.samples", samples.to_string());
                        put("data.seed", seed.to_string());
                    }
                }
                put("data.batch_size", batch_size.to_string());
            }
        }
        put("lanczos.k", self.lanczos.k_max.to_string());
        put("lanczos.reorth", self.lanczos.reorthogonalize.to_string());
        put("lanczos.tol", format!("{:e}", self.lanczos.tolerance(self.precision)));
        put("lanczos.probe", format!("{:?}", self.lanczos.probe.distribution).to_lowercase());
        put("lanczos.store_basis", self.lanczos.stores_basis().to_string());
        put("run.precision", self.precision.to_string());
        put(
            "run.seeds",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        put(
            "density.sigma",
            self.density_sigma.map_or("auto".into(), |s| format!("{s:e}")),
        );
        put("density.points", self.density_points.to_string());
        put("ghost.cluster_tol", format!("{:e}", self.cluster_tol));
        put("ghost.weight_threshold", format!("{:e}", self.ghost_weight));
        put("near_zero.eps", format!("{:e}", self.near_zero_eps()));
        out
    }

    pub fn near_zero_eps(&self) -> f64 {
        self.near_zero_eps.unwrap_or(self.precision.machine_epsilon())
    }

    pub fn probe_for(&self, seed: u64) -> ProbeSpec {
        self.lanczos.probe.with_seed(seed)
    }
}
