//! Flat key=value experiment configuration. Lines starting with '#' are
//! comments; unknown keys, duplicate keys and malformed values are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use opca_core::bottleneck::{BackwardMode, LayoutMode};
use opca_core::datasets::ShapeKind;
use opca_core::oja::LearningRateSchedule;

use crate::CliError;

/// Every key the parser accepts, with its documented default.
const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "image_side",
    "image_count",
    "data_seed",
    "shape",
    "pgm_dir",
    "latent_channels",
    "latent_height",
    "latent_width",
    "encoder_hidden",
    "decoder_hidden",
    "seed",
    "layout",
    "num_components",
    "gamma",
    "eta_schedule",
    "eta0",
    "eta_decay",
    "ortho_period",
    "eps_ortho",
    "update_before_forward",
    "backward_mode",
    "epochs",
    "batch_size",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "fractions",
    "traverse_component",
    "traverse_min",
    "traverse_max",
    "traverse_steps",
    "traverse_image",
    "out_dir",
];

/// Source of training and evaluation images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    ToyShapes,
    PgmDir,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub image_side: usize,
    pub image_count: usize,
    pub data_seed: u64,
    pub shape: ShapeKind,
    pub pgm_dir: Option<PathBuf>,

    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub seed: u64,

    pub layout: LayoutMode,
    pub num_components: Option<usize>,
    pub gamma: f64,
    pub eta_schedule_kind: ScheduleKind,
    pub eta0: f64,
    pub eta_decay: f64,
    pub ortho_period: u64,
    pub eps_ortho: f64,
    pub update_before_forward: bool,
    pub backward_mode: BackwardMode,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub fractions: Vec<f64>,
    pub traverse_component: usize,
    pub traverse_min: f64,
    pub traverse_max: f64,
    pub traverse_steps: usize,
    pub traverse_image: usize,

    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    InverseTime,
}

impl ExperimentConfig {
    pub fn schedule(&self) -> LearningRateSchedule {
        match self.eta_schedule_kind {
            ScheduleKind::Constant => LearningRateSchedule::Constant { eta0: self.eta0 },
            ScheduleKind::InverseTime => LearningRateSchedule::InverseTime {
                eta0: self.eta0,
                decay: self.eta_decay,
            },
        }
    }

    /// Flattened latent dimension D * H' * W'.
    pub fn latent_total(&self) -> usize {
        self.latent_channels * self.latent_height * self.latent_width
    }
}

/// Parse config text into the raw key/value map, rejecting unknown and
/// duplicate keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected key=value, got {line:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!(
                "line {}: unknown key {key:?}",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Load a config file and apply `--set key=value` overrides on top.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut map = parse_pairs(&text)?;
    for item in overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(CliError::Config(format!(
                "override {item:?} is not key=value"
            )));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Config(format!("unknown key {key:?} in override")));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    resolve(&map)
}

fn resolve(map: &BTreeMap<String, String>) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig {
        dataset: match get_str(map, "dataset", "toy_shapes")?.as_str() {
            "toy_shapes" => DatasetKind::ToyShapes,
            "pgm_dir" => DatasetKind::PgmDir,
            other => {
                return Err(CliError::Config(format!(
                    "dataset must be toy_shapes or pgm_dir, got {other:?}"
                )))
            }
        },
        image_side: get_parsed(map, "image_side", 16)?,
        image_count: get_parsed(map, "image_count", 256)?,
        data_seed: get_parsed(map, "data_seed", 7)?,
        shape: match get_str(map, "shape", "disc")?.as_str() {
            "disc" => ShapeKind::Disc,
            "rect" => ShapeKind::Rect,
            other => {
                return Err(CliError::Config(format!(
                    "shape must be disc or rect, got {other:?}"
                )))
            }
        },
        pgm_dir: map.get("pgm_dir").map(PathBuf::from),

        latent_channels: get_parsed(map, "latent_channels", 16)?,
        latent_height: get_parsed(map, "latent_height", 1)?,
        latent_width: get_parsed(map, "latent_width", 1)?,
        encoder_hidden: get_list(map, "encoder_hidden", &[64])?,
        decoder_hidden: get_list(map, "decoder_hidden", &[64])?,
        seed: get_parsed(map, "seed", 42)?,

        layout: match get_str(map, "layout", "single_vector")?.as_str() {
            "single_vector" => LayoutMode::SingleVector,
            "multi_patch" => LayoutMode::MultiPatch,
            other => {
                return Err(CliError::Config(format!(
                    "layout must be single_vector or multi_patch, got {other:?}"
                )))
            }
        },
        num_components: match map.get("num_components") {
            None => None,
            Some(v) => Some(parse_value("num_components", v)?),
        },
        gamma: get_parsed(map, "gamma", 0.99)?,
        eta_schedule_kind: match get_str(map, "eta_schedule", "constant")?.as_str() {
            "constant" => ScheduleKind::Constant,
            "inverse_time" => ScheduleKind::InverseTime,
            other => {
                return Err(CliError::Config(format!(
                    "eta_schedule must be constant or inverse_time, got {other:?}"
                )))
            }
        },
        eta0: get_parsed(map, "eta0", 0.01)?,
        eta_decay: get_parsed(map, "eta_decay", 0.0)?,
        ortho_period: get_parsed(map, "ortho_period", 1)?,
        eps_ortho: get_parsed(map, "eps_ortho", 1e-8)?,
        update_before_forward: get_bool(map, "update_before_forward", true)?,
        backward_mode: match get_str(map, "backward_mode", "projector")?.as_str() {
            "projector" => BackwardMode::Projector,
            "straight_through" => BackwardMode::StraightThrough,
            other => {
                return Err(CliError::Config(format!(
                    "backward_mode must be projector or straight_through, got {other:?}"
                )))
            }
        },

        epochs: get_parsed(map, "epochs", 10)?,
        batch_size: get_parsed(map, "batch_size", 16)?,
        learning_rate: get_parsed(map, "learning_rate", 5e-4)?,
        adam_beta1: get_parsed(map, "adam_beta1", 0.9)?,
        adam_beta2: get_parsed(map, "adam_beta2", 0.999)?,
        adam_eps: get_parsed(map, "adam_eps", 1e-8)?,

        fractions: get_f64_list(map, "fractions", &[0.01, 0.05, 0.1, 0.25, 0.5, 1.0])?,
        traverse_component: get_parsed(map, "traverse_component", 0)?,
        traverse_min: get_parsed(map, "traverse_min", -2.0)?,
        traverse_max: get_parsed(map, "traverse_max", 2.0)?,
        traverse_steps: get_parsed(map, "traverse_steps", 9)?,
        traverse_image: get_parsed(map, "traverse_image", 0)?,

        out_dir: PathBuf::from(get_str(map, "out_dir", "out")?),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.dataset == DatasetKind::PgmDir && cfg.pgm_dir.is_none() {
        return Err(CliError::Config(
            "dataset=pgm_dir requires the pgm_dir key".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(CliError::Config("batch_size must be at least 1".into()));
    }
    if cfg.epochs == 0 {
        return Err(CliError::Config("epochs must be at least 1".into()));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate <= 0.0 {
        return Err(CliError::Config("learning_rate must be positive".into()));
    }
    if !cfg.gamma.is_finite() || cfg.gamma <= 0.0 || cfg.gamma >= 1.0 {
        return Err(CliError::Config("gamma must lie in (0, 1)".into()));
    }
    if cfg.fractions.is_empty() {
        return Err(CliError::Config("fractions must not be empty".into()));
    }
    for &f in &cfg.fractions {
        if !f.is_finite() || f <= 0.0 || f > 1.0 {
            return Err(CliError::Config(format!(
                "fractions must lie in (0, 1], got {f}"
            )));
        }
    }
    if cfg.traverse_steps == 0 {
        return Err(CliError::Config("traverse_steps must be at least 1".into()));
    }
    if let Some(q) = cfg.num_components {
        if q == 0 {
            return Err(CliError::Config("num_components must be at least 1".into()));
        }
    }
    Ok(())
}

fn get_str(map: &BTreeMap<String, String>, key: &str, default: &str) -> Result<String, CliError> {
    Ok(map.get(key).cloned().unwrap_or_else(|| default.to_string()))
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse {key}={value:?}")))
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => parse_value(key, v),
    }
}

fn get_bool(map: &BTreeMap<String, String>, key: &str, default: bool) -> Result<bool, CliError> {
    match map.get(key).map(String::as_str) {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(CliError::Config(format!(
            "{key} must be true or false, got {other:?}"
        ))),
    }
}

fn get_list(
    map: &BTreeMap<String, String>,
    key: &str,
    default: &[usize],
) -> Result<Vec<usize>, CliError> {
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) if v.is_empty() => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(|item| parse_value(key, item.trim()))
            .collect(),
    }
}

fn get_f64_list(
    map: &BTreeMap<String, String>,
    key: &str,
    default: &[f64],
) -> Result<Vec<f64>, CliError> {
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) => v
            .split(',')
            .map(|item| parse_value(key, item.trim()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_text(text: &str) -> Result<ExperimentConfig, CliError> {
        resolve(&parse_pairs(text)?)
    }

    #[test]
    fn defaults_resolve() {
        let cfg = resolve_text("").unwrap();
        assert_eq!(cfg.dataset, DatasetKind::ToyShapes);
        assert_eq!(cfg.image_side, 16);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.gamma, 0.99);
        assert!(cfg.update_before_forward);
        assert_eq!(cfg.traverse_steps, 9);
        assert_eq!(cfg.traverse_min, -2.0);
        assert_eq!(cfg.traverse_max, 2.0);
    }

    #[test]
    fn comments_and_values_parse() {
        let cfg = resolve_text(
            "# a comment\n\
             dataset = toy_shapes\n\
             image_side = 12\n\
             encoder_hidden = 32, 16\n\
             layout = multi_patch\n\
             fractions = 0.5, 1.0\n",
        )
        .unwrap();
        assert_eq!(cfg.image_side, 12);
        assert_eq!(cfg.encoder_hidden, vec![32, 16]);
        assert_eq!(cfg.layout, LayoutMode::MultiPatch);
        assert_eq!(cfg.fractions, vec![0.5, 1.0]);
    }

    #[test]
    fn schedule_keys_map_to_the_schedule() {
        let cfg = resolve_text("eta_schedule = inverse_time\neta0 = 0.05\neta_decay = 0.001\n")
            .unwrap();
        assert_eq!(
            cfg.schedule(),
            LearningRateSchedule::InverseTime {
                eta0: 0.05,
                decay: 0.001
            }
        );
        let constant = resolve_text("eta0 = 0.02\n").unwrap();
        assert_eq!(
            constant.schedule(),
            LearningRateSchedule::Constant { eta0: 0.02 }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve_text("not_a_key = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("not_a_key"));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(resolve_text("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(resolve_text("seed 1\n").is_err());
        assert!(resolve_text("gamma = not_a_number\n").is_err());
        assert!(resolve_text("gamma = 1.5\n").is_err());
        assert!(resolve_text("fractions = 0.0\n").is_err());
        assert!(resolve_text("update_before_forward = yes\n").is_err());
        assert!(resolve_text("dataset = pgm_dir\n").is_err());
    }
}
