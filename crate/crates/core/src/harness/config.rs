//! Experiment configuration: flat dotted keys in a text file, overridable
//! by `--key=value` arguments. `FEARCOND_OUT_DIR` sets the output root when
//! `output.dir` is absent.

use crate::env::WorldConfig;
use crate::error::{FearError, Result};
use crate::ppo::PpoConfig;
use crate::reward::{FearConfig, FearMode};
use crate::smann::TrainOpts;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "FEARCOND_OUT_DIR";

const KNOWN_KEYS: &[&str] = &[
    "fear.mode",
    "mode",
    "fear.threshold",
    "fear.beta_scale",
    "episodes",
    "seeds",
    "env.length",
    "env.width",
    "env.max_steps",
    "ppo.lr",
    "ppo.update_rate",
    "ppo.epochs",
    "ppo.gamma",
    "ppo.lambda",
    "ppo.clip",
    "ppo.value_coef",
    "ppo.entropy_coef",
    "smann.epochs",
    "smann.lr",
    "smann.batch",
    "mann.epochs",
    "dataset.seed",
    "output.dir",
    "dataset.behavior",
    "dataset.stimuli",
    "checkpoint.smann",
    "checkpoint.mann",
    "run.name",
];

/// Raw key-value layer: file contents plus overrides, latest wins.
#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut map = ConfigMap::new();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                FearError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            map.set(k.trim(), v.trim())?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(FearError::Config(format!("unknown config key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Accepts `key=value` or `--key=value`.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let arg = arg.strip_prefix("--").unwrap_or(arg);
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| FearError::Config(format!("override {arg:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| FearError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }
}

/// Fully-typed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub fear: FearConfig,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub env: WorldConfig,
    pub ppo: PpoConfig,
    pub smann_train: TrainOpts,
    pub mann_epochs: usize,
    pub dataset_seed: u64,
    pub out_dir: PathBuf,
    pub behavior_dataset: PathBuf,
    pub stimuli_dataset: PathBuf,
    pub smann_checkpoint: PathBuf,
    pub mann_checkpoint: PathBuf,
    pub run_name: Option<String>,
}

impl ExperimentConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mode_str = map
            .get("fear.mode")
            .or_else(|| map.get("mode"))
            .unwrap_or("base")
            .to_string();
        let fear = FearConfig {
            mode: FearMode::parse(&mode_str)?,
            threshold: map.parse("fear.threshold", 0.6)?,
            beta_scale: map.parse("fear.beta_scale", 1.0)?,
            kappa: 1.0,
        };
        fear.validate()?;

        let episodes: usize = map.parse("episodes", 1000)?;
        if episodes == 0 {
            return Err(FearError::Config("episodes must be >= 1".into()));
        }
        let seeds: Vec<u64> = match map.get("seeds") {
            None => vec![0, 1, 2, 3, 4],
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| FearError::Config(format!("seeds: bad entry {s:?}"))))
                .collect::<Result<_>>()?,
        };
        if seeds.is_empty() {
            return Err(FearError::Config("seeds list is empty".into()));
        }

        let env = WorldConfig {
            length: map.parse("env.length", 12)?,
            width: map.parse("env.width", 3)?,
            max_steps: map.parse("env.max_steps", 150)?,
            ..WorldConfig::default()
        };
        if env.max_steps == 0 || env.length < 2 || env.width < 2 {
            return Err(FearError::Config("environment geometry too small".into()));
        }

        let ppo = PpoConfig {
            lr: map.parse("ppo.lr", 1e-5)?,
            update_rate: map.parse("ppo.update_rate", 450)?,
            epochs: map.parse("ppo.epochs", 40)?,
            gamma: map.parse("ppo.gamma", 0.99)?,
            lam: map.parse("ppo.lambda", 0.95)?,
            clip: map.parse("ppo.clip", 0.2)?,
            value_coef: map.parse("ppo.value_coef", 0.5)?,
            entropy_coef: map.parse("ppo.entropy_coef", 0.01)?,
        };

        let smann_train = TrainOpts {
            epochs: map.parse("smann.epochs", 300)?,
            batch_size: map.parse("smann.batch", 2)?,
            lr: map.parse("smann.lr", 1e-3)?,
            shuffle_seed: 0,
        };
        let mann_epochs: usize = map.parse("mann.epochs", 300)?;
        let dataset_seed: u64 = map.parse("dataset.seed", 7)?;

        let out_dir: PathBuf = match map.get("output.dir") {
            Some(v) => PathBuf::from(v),
            None => std::env::var(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|_| PathBuf::from("runs")),
        };
        let default_under = |sub: &str| out_dir.join(sub);
        let behavior_dataset = map
            .get("dataset.behavior")
            .map(PathBuf::from)
            .unwrap_or_else(|| default_under("datasets/behavior.fcds"));
        let stimuli_dataset = map
            .get("dataset.stimuli")
            .map(PathBuf::from)
            .unwrap_or_else(|| default_under("datasets/stimuli.fcds"));
        let smann_checkpoint = map
            .get("checkpoint.smann")
            .map(PathBuf::from)
            .unwrap_or_else(|| default_under("checkpoints/smann.fcnp"));
        let mann_checkpoint = map
            .get("checkpoint.mann")
            .map(PathBuf::from)
            .unwrap_or_else(|| default_under("checkpoints/mann.fcnp"));

        Ok(ExperimentConfig {
            fear,
            episodes,
            seeds,
            env,
            ppo,
            smann_train,
            mann_epochs,
            dataset_seed,
            out_dir,
            behavior_dataset,
            stimuli_dataset,
            smann_checkpoint,
            mann_checkpoint,
            run_name: map.get("run.name").map(str::to_string),
        })
    }

    /// Directory name for this experiment's artifacts.
    pub fn run_name(&self) -> String {
        if let Some(name) = &self.run_name {
            return name.clone();
        }
        match self.fear.mode {
            FearMode::None => "base".to_string(),
            FearMode::Stimuli => "stimuli".to_string(),
            FearMode::Behavior => format!("behavior-t{:.2}", self.fear.threshold),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.run_name())
    }

    /// Canonical dotted-key snapshot; reading it back reproduces the config.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fear.mode = {}", self.fear.mode.name());
        let _ = writeln!(s, "fear.threshold = {}", self.fear.threshold);
        let _ = writeln!(s, "fear.beta_scale = {}", self.fear.beta_scale);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "env.length = {}", self.env.length);
        let _ = writeln!(s, "env.width = {}", self.env.width);
        let _ = writeln!(s, "env.max_steps = {}", self.env.max_steps);
        let _ = writeln!(s, "ppo.lr = {}", self.ppo.lr);
        let _ = writeln!(s, "ppo.update_rate = {}", self.ppo.update_rate);
        let _ = writeln!(s, "ppo.epochs = {}", self.ppo.epochs);
        let _ = writeln!(s, "ppo.gamma = {}", self.ppo.gamma);
        let _ = writeln!(s, "ppo.lambda = {}", self.ppo.lam);
        let _ = writeln!(s, "ppo.clip = {}", self.ppo.clip);
        let _ = writeln!(s, "ppo.value_coef = {}", self.ppo.value_coef);
        let _ = writeln!(s, "ppo.entropy_coef = {}", self.ppo.entropy_coef);
        let _ = writeln!(s, "smann.epochs = {}", self.smann_train.epochs);
        let _ = writeln!(s, "smann.lr = {}", self.smann_train.lr);
        let _ = writeln!(s, "smann.batch = {}", self.smann_train.batch_size);
        let _ = writeln!(s, "mann.epochs = {}", self.mann_epochs);
        let _ = writeln!(s, "dataset.seed = {}", self.dataset_seed);
        let _ = writeln!(s, "output.dir = {}", self.out_dir.display());
        let _ = writeln!(s, "dataset.behavior = {}", self.behavior_dataset.display());
        let _ = writeln!(s, "dataset.stimuli = {}", self.stimuli_dataset.display());
        let _ = writeln!(s, "checkpoint.smann = {}", self.smann_checkpoint.display());
        let _ = writeln!(s, "checkpoint.mann = {}", self.mann_checkpoint.display());
        s
    }
}
