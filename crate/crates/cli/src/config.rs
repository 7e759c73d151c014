//! Run configuration: a plain-text `key = value` document plus command-line
//! overrides. Parsing is strict — unknown and duplicate keys are fatal — and
//! every run's resolved configuration is rendered back into the manifest so
//! a run is reconstructible from its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proxyspike::baselines::SurrogateConfig;
use proxyspike::data::{load_cifar10, load_idx, make_synthetic_pair, Dataset};
use proxyspike::{Architecture, Error, Precision, TrainConfig};

/// Which training or conversion path a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proxy,
    Ann,
    Surrogate,
    Convert,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proxy => "proxy",
            Method::Ann => "ann",
            Method::Surrogate => "surrogate",
            Method::Convert => "convert",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "proxy" => Ok(Method::Proxy),
            "ann" => Ok(Method::Ann),
            "surrogate" => Ok(Method::Surrogate),
            "convert" => Ok(Method::Convert),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected proxy, ann, surrogate, or convert)"
            ))),
        }
    }
}

/// Where the images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Fashion,
    Cifar10,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Fashion => "fashion",
            DataSource::Cifar10 => "cifar10",
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "fashion" => Ok(DataSource::Fashion),
            "cifar10" => Ok(DataSource::Cifar10),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?} (expected synthetic, fashion, or cifar10)"
            ))),
        }
    }
}

/// Every key the config document accepts, in the order `resolved` renders.
const KNOWN_KEYS: &[&str] = &[
    "method",
    "arch",
    "dataset",
    "data_dir",
    "classes",
    "image_size",
    "train_per_class",
    "test_per_class",
    "noise",
    "data_seed",
    "train_max",
    "test_max",
    "theta",
    "t",
    "eta",
    "beta1",
    "beta2",
    "epsilon",
    "lambda",
    "batch_size",
    "epochs",
    "seed",
    "reset",
    "precision",
    "eval_max",
    "timing",
    "alpha",
    "percentile",
    "calibration_max",
];

/// A fully parsed run description: data source, architecture, optimizer
/// settings, and the knobs of the auxiliary commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub arch: String,
    pub dataset: DataSource,
    pub data_dir: Option<PathBuf>,
    /// Synthetic generator shape (ignored for file-backed datasets).
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub data_seed: u64,
    /// Optional caps: keep only the first n samples of a loaded split.
    pub train_max: Option<usize>,
    pub test_max: Option<usize>,
    pub train: TrainConfig,
    /// Arc-tangent width for the surrogate trainer.
    pub alpha: f64,
    /// Activation percentile for conversion.
    pub percentile: f64,
    /// Calibration sample cap for conversion.
    pub calibration_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Proxy,
            arch: String::new(),
            dataset: DataSource::Synthetic,
            data_dir: None,
            classes: 10,
            image_size: 8,
            train_per_class: 100,
            test_per_class: 20,
            noise: 0.1,
            data_seed: 7,
            train_max: None,
            test_max: None,
            train: TrainConfig::default(),
            alpha: 2.0,
            percentile: 99.9,
            calibration_max: 256,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T, Error> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("config key {key:?}: {value:?} is not {what}")))
}

impl RunConfig {
    /// Read and parse a config file.
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse a `key = value` document. Blank lines and lines starting with
    /// `#` are skipped; anything else must be a known key, each at most once.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected \"key = value\", got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let known = *KNOWN_KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            if seen.contains(&known) {
                return Err(Error::Config(format!("duplicate config key {key:?}")));
            }
            seen.push(known);
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key {
            "method" => self.method = value.parse()?,
            "arch" => self.arch = value.to_string(),
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "classes" => self.classes = parse_num(key, value, "a count")?,
            "image_size" => self.image_size = parse_num(key, value, "a count")?,
            "train_per_class" => self.train_per_class = parse_num(key, value, "a count")?,
            "test_per_class" => self.test_per_class = parse_num(key, value, "a count")?,
            "noise" => self.noise = parse_num(key, value, "a number")?,
            "data_seed" => self.data_seed = parse_num(key, value, "an unsigned integer")?,
            "train_max" => self.train_max = Some(parse_num(key, value, "a count")?),
            "test_max" => self.test_max = Some(parse_num(key, value, "a count")?),
            "theta" => self.train.theta = parse_num(key, value, "a number")?,
            "t" => self.train.t_max = parse_num(key, value, "a count")?,
            "eta" => self.train.eta = parse_num(key, value, "a number")?,
            "beta1" => self.train.beta1 = parse_num(key, value, "a number")?,
            "beta2" => self.train.beta2 = parse_num(key, value, "a number")?,
            "epsilon" => self.train.epsilon = parse_num(key, value, "a number")?,
            "lambda" => self.train.lambda = parse_num(key, value, "a number")?,
            "batch_size" => self.train.batch_size = parse_num(key, value, "a count")?,
            "epochs" => self.train.epochs = parse_num(key, value, "a count")?,
            "seed" => self.train.seed = parse_num(key, value, "an unsigned integer")?,
            "reset" => self.train.reset = value.parse()?,
            "precision" => self.train.precision = value.parse()?,
            "eval_max" => self.train.eval_max = Some(parse_num(key, value, "a count")?),
            "timing" => self.train.timing = parse_num(key, value, "true or false")?,
            "alpha" => self.alpha = parse_num(key, value, "a number")?,
            "percentile" => self.percentile = parse_num(key, value, "a number")?,
            "calibration_max" => self.calibration_max = parse_num(key, value, "a count")?,
            other => unreachable!("key {other:?} passed the known-key filter"),
        }
        Ok(())
    }

    /// Reject configurations no command could run. The architecture string
    /// is deliberately not required here: evaluation-style commands read the
    /// architecture from the checkpoint header and only need the data keys.
    pub fn validate(&self) -> Result<(), Error> {
        if self.dataset != DataSource::Synthetic && self.data_dir.is_none() {
            return Err(Error::Config(format!(
                "dataset {} needs a data_dir",
                self.dataset.as_str()
            )));
        }
        if self.dataset == DataSource::Synthetic {
            if self.classes < 2 || self.image_size < 2 {
                return Err(Error::Config(format!(
                    "synthetic data needs classes >= 2 and image_size >= 2, got {} and {}",
                    self.classes, self.image_size
                )));
            }
            if self.train_per_class == 0 || self.test_per_class == 0 {
                return Err(Error::Config("synthetic per-class counts must be at least 1".into()));
            }
            if !(self.noise >= 0.0) {
                return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
            }
        }
        for (key, cap) in [
            ("train_max", self.train_max),
            ("test_max", self.test_max),
            ("eval_max", self.train.eval_max),
        ] {
            if cap == Some(0) {
                return Err(Error::Config(format!("{key} must be at least 1 when set")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Config(format!(
                "percentile must lie in (0, 100], got {}",
                self.percentile
            )));
        }
        if self.calibration_max == 0 {
            return Err(Error::Config("calibration_max must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Input dimensions the architecture is instantiated for.
    pub fn input_dims(&self) -> [usize; 3] {
        match self.dataset {
            DataSource::Synthetic => [1, self.image_size, self.image_size],
            DataSource::Fashion => [1, 28, 28],
            DataSource::Cifar10 => [3, 32, 32],
        }
    }

    /// Number of classes the readout must have.
    pub fn n_classes(&self) -> usize {
        match self.dataset {
            DataSource::Synthetic => self.classes,
            DataSource::Fashion | DataSource::Cifar10 => 10,
        }
    }

    /// Instantiate the architecture string for this data source.
    pub fn architecture(&self) -> Result<Architecture, Error> {
        Architecture::from_text(&self.arch, self.input_dims(), self.n_classes())
    }

    /// Load one split (`"train"` or `"test"`), applying the optional cap.
    pub fn load_split(&self, split: &str) -> Result<Dataset, Error> {
        let data = match self.dataset {
            DataSource::Synthetic => {
                let (train, test) = make_synthetic_pair(
                    self.classes,
                    self.image_size,
                    self.train_per_class,
                    self.test_per_class,
                    self.noise,
                    self.data_seed,
                )?;
                match split {
                    "train" => train,
                    "test" => test,
                    other => return Err(Error::Data(format!("unknown split {other:?}"))),
                }
            }
            DataSource::Fashion => {
                let dir = self.data_dir.as_ref().expect("validated");
                let stem = match split {
                    "train" => "train",
                    "test" => "t10k",
                    other => return Err(Error::Data(format!("unknown split {other:?}"))),
                };
                load_idx(
                    &dir.join(format!("{stem}-images-idx3-ubyte")),
                    &dir.join(format!("{stem}-labels-idx1-ubyte")),
                    10,
                    split,
                )?
            }
            DataSource::Cifar10 => load_cifar10(self.data_dir.as_ref().expect("validated"), split)?,
        };
        let cap = match split {
            "train" => self.train_max,
            _ => self.test_max,
        };
        Ok(match cap {
            Some(n) if n < data.len() => data.take(n),
            _ => data,
        })
    }

    /// Surrogate trainer settings derived from this config.
    pub fn surrogate(&self) -> SurrogateConfig {
        SurrogateConfig { alpha: self.alpha, train: self.train }
    }

    /// Every key with its resolved value, for the run manifest. Optional
    /// keys appear only when set, so the map round-trips through `parse`.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("method", self.method.as_str().to_string());
        put("arch", self.arch.clone());
        put("dataset", self.dataset.as_str().to_string());
        if let Some(dir) = &self.data_dir {
            put("data_dir", dir.display().to_string());
        }
        put("classes", self.classes.to_string());
        put("image_size", self.image_size.to_string());
        put("train_per_class", self.train_per_class.to_string());
        put("test_per_class", self.test_per_class.to_string());
        put("noise", self.noise.to_string());
        put("data_seed", self.data_seed.to_string());
        if let Some(n) = self.train_max {
            put("train_max", n.to_string());
        }
        if let Some(n) = self.test_max {
            put("test_max", n.to_string());
        }
        put("theta", self.train.theta.to_string());
        put("t", self.train.t_max.to_string());
        put("eta", self.train.eta.to_string());
        put("beta1", self.train.beta1.to_string());
        put("beta2", self.train.beta2.to_string());
        put("epsilon", self.train.epsilon.to_string());
        put("lambda", self.train.lambda.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("epochs", self.train.epochs.to_string());
        put("seed", self.train.seed.to_string());
        put("reset", self.train.reset.to_string());
        put("precision", self.train.precision.as_str().to_string());
        if let Some(n) = self.train.eval_max {
            put("eval_max", n.to_string());
        }
        put("timing", self.train.timing.to_string());
        put("alpha", self.alpha.to_string());
        put("percentile", self.percentile.to_string());
        put("calibration_max", self.calibration_max.to_string());
        map
    }
}

/// Command-line values that beat the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub t: Option<usize>,
    pub theta: Option<f64>,
    pub method: Option<String>,
    pub precision: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(t) = self.t {
            cfg.train.t_max = t;
        }
        if let Some(theta) = self.theta {
            cfg.train.theta = theta;
        }
        if let Some(method) = &self.method {
            cfg.method = method.parse()?;
        }
        if let Some(precision) = &self.precision {
            cfg.train.precision = precision.parse::<Precision>()?;
        }
        Ok(())
    }
}

/// Parse a comma-separated list of simulation lengths for sweeps: at least
/// one entry, no duplicates, returned sorted ascending.
pub fn parse_t_list(text: &str) -> Result<Vec<usize>, Error> {
    let mut ts = Vec::new();
    for item in text.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(Error::Config(format!("empty entry in T list {text:?}")));
        }
        let t: usize =
            parse_num("t_list", item, "a count").map_err(|_| Error::Config(format!("T list entry {item:?} is not a count")))?;
        if ts.contains(&t) {
            return Err(Error::Config(format!("duplicate T value {t} in sweep list")));
        }
        ts.push(t);
    }
    ts.sort_unstable();
    Ok(ts)
}
