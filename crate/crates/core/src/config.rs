//! Experiment configuration: flat `key = value` text, `#` comments.
//!
//! Relative paths are resolved against the directory of the config file.
//! Every key has a default (the desk-scale experiment); unknown keys are
//! rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::acquisition::{DatasetMeta, IrsSwitchModel, LinkMode};
use crate::channel::SystemGeometry;
use crate::error::{Error, Result};
use crate::federation::{TrainConfig, TrainMode};
use crate::header::{join, split, Header};
use crate::nn::NetworkSpec;

/// Upper bound on generated dataset payload unless overridden.
pub const DEFAULT_MAX_DATASET_BYTES: u64 = 4 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: SystemGeometry,
    pub link: LinkMode,
    pub m_bar: usize,
    pub snr_levels_db: Vec<f64>,
    /// Realizations per user (N).
    pub realizations: usize,
    /// Noisy copies per realization and SNR level (G).
    pub noisy_copies: usize,
    pub switch: IrsSwitchModel,

    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub fc_units: usize,
    pub keep_prob: f64,

    pub train: TrainConfig,

    /// Held-out trials per evaluation point (J_T).
    pub trials: usize,
    pub eval_snr_db: Vec<f64>,
    pub eval_m_bar: Vec<usize>,
    /// Channels drawn to estimate the LMMSE covariance.
    pub covariance_draws: usize,

    pub seed: u64,
    pub max_dataset_bytes: u64,

    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub results: PathBuf,
    pub overhead: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: SystemGeometry::new(16, 8, 4),
            link: LinkMode::Fixed,
            m_bar: 8,
            snr_levels_db: vec![20.0, 25.0, 30.0],
            realizations: 20,
            noisy_copies: 4,
            switch: IrsSwitchModel::IDEAL,
            conv_layers: 3,
            filters: 16,
            kernel: (3, 3),
            fc_units: 256,
            keep_prob: 0.5,
            train: TrainConfig {
                rounds: 240,
                learning_rate: 3e-4,
                batch_size: 32,
                local_batch: Some(8),
                seed: 1,
                ..TrainConfig::new(TrainMode::Federated)
            },
            trials: 100,
            eval_snr_db: vec![0.0, 10.0, 20.0],
            eval_m_bar: vec![8],
            covariance_draws: 10_000,
            seed: 1,
            max_dataset_bytes: DEFAULT_MAX_DATASET_BYTES,
            dataset: PathBuf::from("dataset.bin"),
            checkpoint: PathBuf::from("model.ckpt"),
            train_log: PathBuf::from("train_log.csv"),
            results: PathBuf::from("results.csv"),
            overhead: PathBuf::from("overhead.csv"),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{raw}`"))),
    }
}

fn within(key: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(reason) => Error::config(key, reason),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let header = Header::parse_text(text)?;
        let mut cfg = ExperimentConfig::default();
        for (key, raw) in header.entries() {
            cfg.set(key, raw, base_dir)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    /// Recovers the configuration echoed as `# key = value` lines at the top
    /// of an output file.
    pub fn from_echo(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| l.strip_prefix("# "))
            .filter(|l| l.contains(" = "))
            .map(|l| format!("{l}\n"))
            .collect();
        ExperimentConfig::parse(&body, Path::new(""))
    }

    fn set(&mut self, key: &str, raw: &str, base: &Path) -> Result<()> {
        let path = |raw: &str| {
            let p = PathBuf::from(raw);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let g = &mut self.geometry;
        let t = &mut self.train;
        match key {
            "M" => g.m = value(key, raw)?,
            "L" => g.l = value(key, raw)?,
            "K" => g.k = value(key, raw)?,
            "paths_bs_irs" => g.paths_bs_irs = value(key, raw)?,
            "paths_bs_user" => g.paths_bs_user = value(key, raw)?,
            "paths_irs_user" => g.paths_irs_user = value(key, raw)?,
            "angle_min" => g.angle_min = value(key, raw)?,
            "angle_max" => g.angle_max = value(key, raw)?,
            "m_bar" => self.m_bar = value(key, raw)?,
            "snr_levels_db" => self.snr_levels_db = split(key, raw)?,
            "realizations" => self.realizations = value(key, raw)?,
            "noisy_copies" => self.noisy_copies = value(key, raw)?,
            "bs_irs_link" => self.link = value(key, raw)?,
            "epsilon_on" => self.switch.epsilon_on = value(key, raw)?,
            "epsilon_off" => self.switch.epsilon_off = value(key, raw)?,
            "conv_layers" => self.conv_layers = value(key, raw)?,
            "filters" => self.filters = value(key, raw)?,
            "kernel_rows" => self.kernel.0 = value(key, raw)?,
            "kernel_cols" => self.kernel.1 = value(key, raw)?,
            "fc_units" => self.fc_units = value(key, raw)?,
            "keep_prob" => self.keep_prob = value(key, raw)?,
            "mode" => t.mode = raw.parse().map_err(|e: String| Error::config(key, e))?,
            "rounds" => t.rounds = value(key, raw)?,
            "learning_rate" => t.learning_rate = value(key, raw)?,
            "momentum" => t.momentum = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "local_batch" => {
                t.local_batch = match raw {
                    "full" => None,
                    n => Some(value(key, n)?),
                }
            }
            "gradient_snr_db" => t.gradient_snr_db = value(key, raw)?,
            "downlink_noise" => t.downlink_noise = flag(key, raw)?,
            "dropout" => t.dropout = flag(key, raw)?,
            "log_wall_time" => t.log_wall_time = flag(key, raw)?,
            "trials" => self.trials = value(key, raw)?,
            "eval_snr_db" => self.eval_snr_db = split(key, raw)?,
            "eval_m_bar" => self.eval_m_bar = split(key, raw)?,
            "covariance_draws" => self.covariance_draws = value(key, raw)?,
            "seed" => {
                self.seed = value(key, raw)?;
                t.seed = self.seed;
            }
            "max_dataset_bytes" => self.max_dataset_bytes = value(key, raw)?,
            "dataset" => self.dataset = path(raw),
            "checkpoint" => self.checkpoint = path(raw),
            "train_log" => self.train_log = path(raw),
            "results" => self.results = path(raw),
            "overhead" => self.overhead = path(raw),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Replaces the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn to_header(&self) -> Header {
        let g = &self.geometry;
        let t = &self.train;
        let mut h = Header::new();
        h.push("M", g.m);
        h.push("L", g.l);
        h.push("K", g.k);
        h.push("paths_bs_irs", g.paths_bs_irs);
        h.push("paths_bs_user", g.paths_bs_user);
        h.push("paths_irs_user", g.paths_irs_user);
        h.push("angle_min", g.angle_min);
        h.push("angle_max", g.angle_max);
        h.push("bs_irs_link", self.link);
        h.push("m_bar", self.m_bar);
        h.push("snr_levels_db", join(&self.snr_levels_db));
        h.push("realizations", self.realizations);
        h.push("noisy_copies", self.noisy_copies);
        h.push("epsilon_on", self.switch.epsilon_on);
        h.push("epsilon_off", self.switch.epsilon_off);
        h.push("conv_layers", self.conv_layers);
        h.push("filters", self.filters);
        h.push("kernel_rows", self.kernel.0);
        h.push("kernel_cols", self.kernel.1);
        h.push("fc_units", self.fc_units);
        h.push("keep_prob", self.keep_prob);
        h.push("mode", t.mode);
        h.push("rounds", t.rounds);
        h.push("learning_rate", t.learning_rate);
        h.push("momentum", t.momentum);
        h.push("batch_size", t.batch_size);
        h.push("local_batch", t.local_batch.map_or("full".to_string(), |b| b.to_string()));
        h.push("gradient_snr_db", t.gradient_snr_db);
        h.push("downlink_noise", t.downlink_noise);
        h.push("dropout", t.dropout);
        h.push("log_wall_time", t.log_wall_time);
        h.push("trials", self.trials);
        h.push("eval_snr_db", join(&self.eval_snr_db));
        h.push("eval_m_bar", join(&self.eval_m_bar));
        h.push("covariance_draws", self.covariance_draws);
        h.push("seed", self.seed);
        h.push("max_dataset_bytes", self.max_dataset_bytes);
        h.push("dataset", self.dataset.display());
        h.push("checkpoint", self.checkpoint.display());
        h.push("train_log", self.train_log.display());
        h.push("results", self.results.display());
        h.push("overhead", self.overhead.display());
        h
    }

    /// `# key = value` lines for the top of CSV outputs.
    pub fn echo(&self) -> String {
        self.to_header()
            .to_text()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect()
    }

    pub fn dataset_meta(&self) -> DatasetMeta {
        DatasetMeta {
            geometry: self.geometry.clone(),
            link: self.link,
            m_bar: self.m_bar,
            switch: self.switch,
            snr_levels: self.snr_levels_db.clone(),
            realizations: self.realizations,
            noisy_copies: self.noisy_copies,
            seed: self.seed,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            conv_layers: self.conv_layers,
            filters: self.filters,
            kernel: self.kernel,
            fc_units: self.fc_units,
            keep_prob: self.keep_prob,
            ..NetworkSpec::standard(self.geometry.m, self.geometry.l, self.m_bar)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    /// Checks every field; the error names the first offending key.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        for (key, v) in [
            ("M", g.m),
            ("L", g.l),
            ("K", g.k),
            ("paths_bs_irs", g.paths_bs_irs),
            ("paths_bs_user", g.paths_bs_user),
            ("paths_irs_user", g.paths_irs_user),
            ("realizations", self.realizations),
            ("noisy_copies", self.noisy_copies),
            ("conv_layers", self.conv_layers),
            ("filters", self.filters),
            ("fc_units", self.fc_units),
            ("trials", self.trials),
            ("covariance_draws", self.covariance_draws),
            ("rounds", self.train.rounds),
            ("batch_size", self.train.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.train.local_batch == Some(0) {
            return Err(Error::config("local_batch", "must be at least 1 or `full`"));
        }
        if !(g.angle_min.is_finite() && g.angle_max.is_finite() && g.angle_min < g.angle_max) {
            return Err(Error::config("angle_max", "angle range must be finite and non-empty"));
        }
        if self.m_bar == 0 || self.m_bar > g.m {
            return Err(Error::config("m_bar", format!("must lie in 1..={}", g.m)));
        }
        for &mb in &self.eval_m_bar {
            if mb == 0 || mb > g.m {
                return Err(Error::config("eval_m_bar", format!("{mb} outside 1..={}", g.m)));
            }
        }
        if self.eval_m_bar.is_empty() {
            return Err(Error::config("eval_m_bar", "at least one pilot count is required"));
        }
        let snr_ok = |s: &f64| !(s.is_nan() || *s == f64::NEG_INFINITY);
        if self.snr_levels_db.is_empty() || !self.snr_levels_db.iter().all(snr_ok) {
            return Err(Error::config("snr_levels_db", "need one or more numbers or inf"));
        }
        if self.eval_snr_db.is_empty() || !self.eval_snr_db.iter().all(snr_ok) {
            return Err(Error::config("eval_snr_db", "need one or more numbers or inf"));
        }
        self.switch.validate().map_err(|e| within("epsilon_on", e))?;
        if self.kernel.0 % 2 == 0 {
            return Err(Error::config("kernel_rows", "must be odd"));
        }
        if self.kernel.1 % 2 == 0 {
            return Err(Error::config("kernel_cols", "must be odd"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config("keep_prob", "must lie in (0, 1]"));
        }
        let t = &self.train;
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !snr_ok(&t.gradient_snr_db) {
            return Err(Error::config("gradient_snr_db", "must be a number or inf"));
        }
        self.network_spec().validate().map_err(|e| within("filters", e))?;
        Ok(())
    }
}
