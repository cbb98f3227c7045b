//! TOML experiment configuration. Every field has a default taken from the
//! reference simulation setup, so a file containing only `mode = "..."` is a
//! complete configuration.

use std::fmt;
use std::path::PathBuf;

use lstmhra_core::geometry::CellConfig;
use lstmhra_core::predictor::{NetworkShape, TrainConfig};
use lstmhra_core::protocol::{CorrelatorSettings, Detection, Scheme, SlotConfig};
use lstmhra_core::sic::build_levels;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Analytic,
    Compare,
    TrainPredictor,
    EvalPredictor,
    Fig4,
    Fig6,
    Fig7,
    Fig8,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Analytic => "analytic",
            Mode::Compare => "compare",
            Mode::TrainPredictor => "train-predictor",
            Mode::EvalPredictor => "eval-predictor",
            Mode::Fig4 => "fig4",
            Mode::Fig6 => "fig6",
            Mode::Fig7 => "fig7",
            Mode::Fig8 => "fig8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    /// Slots simulated per configuration point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    10_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    #[default]
    Ideal,
    Correlator,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub radius_m: f64,
    pub ta_unit_m: f64,
    pub preambles: usize,
    pub power_levels: usize,
    pub target_sinr: f64,
    pub n_mmtc: usize,
    pub n_urllc: usize,
    /// Probability the URLLC forecast falls short, used by the simulator's
    /// URLLC load and by the closed-form total.
    pub p_lstm: f64,
    pub scheme: Scheme,
    pub acb_factor: Option<f64>,
    pub detection: DetectionMode,
    pub antennas: usize,
    pub noise_variance: f64,
    pub preamble_length: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            radius_m: 624.0,
            ta_unit_m: 156.0,
            preambles: 28,
            power_levels: 3,
            target_sinr: 1.0,
            n_mmtc: 100,
            n_urllc: 5,
            p_lstm: 7.5e-3,
            scheme: Scheme::LstmhRa,
            acb_factor: None,
            detection: DetectionMode::Ideal,
            antennas: 128,
            noise_variance: 0.1,
            preamble_length: 139,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub preambles: Vec<usize>,
    pub power_levels: Vec<usize>,
    pub radius_m: Vec<f64>,
    /// Total active devices; URLLC takes `system.n_urllc`, mMTC the rest.
    pub active: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            preambles: vec![28, 34, 40, 46, 52, 58, 64],
            power_levels: vec![3, 4, 5, 6, 7],
            radius_m: vec![624.0, 1000.0, 1500.0],
            active: vec![15, 20, 25, 30, 35, 40, 45, 50],
            lambda: vec![4.0, 5.0, 6.0, 7.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub lambda: f64,
    pub train_slots: usize,
    pub test_slots: usize,
    pub window: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub attention_dim: usize,
    pub attention: bool,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Model file written by `train-predictor` and read by `eval-predictor`.
    /// Relative paths resolve against the output directory.
    pub model: PathBuf,
    /// Optional trace file (one count per line) replacing generated traffic.
    pub trace: Option<PathBuf>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        let shape = NetworkShape::default();
        let train = TrainConfig::default();
        Self {
            lambda: 6.0,
            train_slots: 50_000,
            test_slots: 10_000,
            window: shape.window,
            hidden1: shape.hidden1,
            hidden2: shape.hidden2,
            attention_dim: shape.attention_dim,
            attention: shape.attention,
            horizon: train.horizon,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            model: PathBuf::from("predictor.model"),
            trace: None,
        }
    }
}

impl PredictorConfig {
    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            window: self.window,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            attention_dim: self.attention_dim,
            attention: self.attention,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            horizon: self.horizon,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parses and validates a configuration file.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    config.validate().map_err(|(key, message)| ConfigError {
        line: locate_key(text, key),
        message: format!("{key}: {message}"),
    })?;
    Ok(config)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Finds the line that sets `section.key` (or a top-level `key`).
fn locate_key(text: &str, path: &str) -> Option<usize> {
    let (section, key) = match path.split_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, path),
    };
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(header.trim().to_string());
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let hit = match (section, current.as_deref()) {
            (Some(s), Some(c)) => c == s && lhs == key,
            (Some(s), None) => lhs == format!("{s}.{key}"),
            (None, None) => lhs == key,
            (None, Some(_)) => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    None
}

type Invalid = (&'static str, String);

fn check(ok: bool, key: &'static str, message: impl FnOnce() -> String) -> Result<(), Invalid> {
    if ok {
        Ok(())
    } else {
        Err((key, message()))
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), Invalid> {
        check(self.trials >= 1, "trials", || {
            "at least one trial is required".into()
        })?;
        let s = &self.system;
        CellConfig::new(s.radius_m, s.ta_unit_m).map_err(|e| ("system.radius_m", e.to_string()))?;
        check(s.ta_unit_m > 0.0, "system.ta_unit_m", || {
            "must be positive".into()
        })?;
        build_levels(s.power_levels, s.target_sinr)
            .map_err(|e| ("system.power_levels", e.to_string()))?;
        check(s.preambles >= 1, "system.preambles", || {
            "must be at least 1".into()
        })?;
        check((0.0..=1.0).contains(&s.p_lstm), "system.p_lstm", || {
            format!("must lie in [0, 1], got {}", s.p_lstm)
        })?;
        if let Some(f) = s.acb_factor {
            check((0.0..=1.0).contains(&f), "system.acb_factor", || {
                format!("must lie in [0, 1], got {f}")
            })?;
        }
        if s.detection == DetectionMode::Correlator {
            check(s.antennas >= 1, "system.antennas", || {
                "must be at least 1".into()
            })?;
            check(s.noise_variance >= 0.0, "system.noise_variance", || {
                "must be non-negative".into()
            })?;
        }
        self.slot_config(s.radius_m, s.preambles, s.power_levels, s.n_mmtc, s.scheme)
            .map_err(|e| ("system", e))?;

        let w = &self.sweep;
        match self.mode {
            Mode::Fig6 => {
                check(!w.preambles.is_empty(), "sweep.preambles", || {
                    "must not be empty".into()
                })?;
                check(!w.radius_m.is_empty(), "sweep.radius_m", || {
                    "must not be empty".into()
                })?;
            }
            Mode::Fig7 => {
                check(!w.power_levels.is_empty(), "sweep.power_levels", || {
                    "must not be empty".into()
                })?;
                check(!w.radius_m.is_empty(), "sweep.radius_m", || {
                    "must not be empty".into()
                })?;
            }
            Mode::Fig8 => {
                check(!w.active.is_empty(), "sweep.active", || {
                    "must not be empty".into()
                })?;
                check(!w.radius_m.is_empty(), "sweep.radius_m", || {
                    "must not be empty".into()
                })?;
                if let Some(&a) = w.active.iter().find(|&&a| a < s.n_urllc) {
                    return Err((
                        "sweep.active",
                        format!(
                            "{a} active devices cannot include {} URLLC devices",
                            s.n_urllc
                        ),
                    ));
                }
            }
            Mode::Fig4 => {
                check(!w.lambda.is_empty(), "sweep.lambda", || {
                    "must not be empty".into()
                })?;
                if let Some(l) = w.lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                    return Err((
                        "sweep.lambda",
                        format!("Poisson means must be positive, got {l}"),
                    ));
                }
            }
            _ => {}
        }
        if matches!(self.mode, Mode::Fig6 | Mode::Fig7 | Mode::Fig8) {
            for &r in &w.radius_m {
                CellConfig::new(r, s.ta_unit_m).map_err(|e| ("sweep.radius_m", e.to_string()))?;
            }
        }
        if self.mode == Mode::Fig6 {
            check(
                w.preambles.iter().all(|&p| p >= 1),
                "sweep.preambles",
                || "every entry must be at least 1".into(),
            )?;
        }
        if self.mode == Mode::Fig7 {
            for &l in &w.power_levels {
                build_levels(l, s.target_sinr)
                    .map_err(|e| ("sweep.power_levels", e.to_string()))?;
            }
        }

        if matches!(
            self.mode,
            Mode::TrainPredictor | Mode::EvalPredictor | Mode::Fig4
        ) {
            let p = &self.predictor;
            check(
                p.lambda > 0.0 && p.lambda.is_finite(),
                "predictor.lambda",
                || format!("must be positive, got {}", p.lambda),
            )?;
            check(p.window >= 1, "predictor.window", || {
                "must be at least 1".into()
            })?;
            check(p.hidden1 >= 1, "predictor.hidden1", || {
                "must be at least 1".into()
            })?;
            check(p.hidden2 >= 1, "predictor.hidden2", || {
                "must be at least 1".into()
            })?;
            check(
                !p.attention || p.attention_dim >= 1,
                "predictor.attention_dim",
                || "must be at least 1 when attention is enabled".into(),
            )?;
            check(p.horizon >= 1, "predictor.horizon", || {
                "must be at least 1".into()
            })?;
            check(p.learning_rate > 0.0, "predictor.learning_rate", || {
                "must be positive".into()
            })?;
            check(p.epochs >= 1, "predictor.epochs", || {
                "must be at least 1".into()
            })?;
            check(p.batch_size >= 1, "predictor.batch_size", || {
                "must be at least 1".into()
            })?;
            let needed = p.window + p.horizon + 1;
            check(p.train_slots >= needed, "predictor.train_slots", || {
                format!("needs at least {needed} slots for window and horizon")
            })?;
            check(p.test_slots >= needed, "predictor.test_slots", || {
                format!("needs at least {needed} slots for window and horizon")
            })?;
        }
        Ok(())
    }

    /// Slot configuration for one sweep point; everything else comes from
    /// `[system]`.
    pub fn slot_config(
        &self,
        radius_m: f64,
        preambles: usize,
        power_levels: usize,
        n_mmtc: usize,
        scheme: Scheme,
    ) -> Result<SlotConfig, String> {
        let s = &self.system;
        let cell = CellConfig::new(radius_m, s.ta_unit_m).map_err(|e| e.to_string())?;
        let levels = build_levels(power_levels, s.target_sinr).map_err(|e| e.to_string())?;
        let mut cfg = SlotConfig::new(cell, preambles, levels, n_mmtc)
            .map_err(|e| e.to_string())?
            .with_scheme(scheme);
        cfg.acb_factor = s.acb_factor;
        if s.detection == DetectionMode::Correlator {
            cfg.detection = Detection::Correlator(CorrelatorSettings {
                antennas: s.antennas,
                noise_variance: s.noise_variance,
                preamble_length: s.preamble_length,
                threshold: None,
            });
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}
