//! Training configuration: defaults, validation, and the flat key-value
//! config file format shared by every CLI subcommand.

use crate::encoders::{Composition, StructureConfig};
use crate::error::{Error, Result};
use crate::sampling::TypeMatch;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Which negative sampling strategy pre-training uses.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeMode {
    /// Schema-guided intra/inter-schema negatives (the full method).
    Schema,
    /// Type-matched non-neighbors per positive (the simpler comparison
    /// strategy).
    Relation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub proj_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the global-level loss in the joint objective.
    pub lambda: f64,
    /// Cap on contextual-level negatives per anchor.
    pub k1: usize,
    /// Cap on global-level negatives per anchor.
    pub k2: usize,
    /// Pre-batch queue capacity in batches; 0 disables the queue.
    pub queue_batches: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub batch_pretrain: usize,
    pub batch_finetune: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Context subgraph node cap.
    pub max_nodes: usize,
    /// Step budget of a pre-training context walk.
    pub walk_length: usize,
    pub composition: Composition,
    pub seed: u64,
    /// Schema frequency threshold.
    pub alpha: u64,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Corruptions per positive during fine-tuning.
    pub finetune_negatives: usize,
    /// Classification threshold on the sigmoid score.
    pub threshold: f64,
    pub disable_contextual: bool,
    pub disable_global: bool,
    pub disable_pretrain: bool,
    pub negative_mode: NegativeMode,
    /// Mix anchors so batches contain both same-schema and different-schema
    /// anchors (keeps both negative pools non-empty at small scale).
    pub schema_bucketing: bool,
    pub type_match: TypeMatch,
    /// Compose every subgraph node with the relation during fine-tuning,
    /// not only the head.
    pub compose_all_nodes: bool,
    /// Keep the structure-view entity table fixed during pre-training.
    pub freeze_structure: bool,
    pub structure: StructureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            proj_dim: 128,
            layers: 4,
            heads: 4,
            tau: 0.8,
            lambda: 0.5,
            k1: 512,
            k2: 512,
            queue_batches: 2,
            lr_pretrain: 1e-4,
            lr_finetune: 1e-3,
            batch_pretrain: 256,
            batch_finetune: 256,
            epochs_pretrain: 10,
            epochs_finetune: 10,
            max_nodes: 6,
            walk_length: 20,
            composition: Composition::Multiply,
            seed: 0,
            alpha: 1,
            train_ratio: 0.8,
            valid_ratio: 0.1,
            test_ratio: 0.1,
            finetune_negatives: 1,
            threshold: 0.5,
            disable_contextual: false,
            disable_global: false,
            disable_pretrain: false,
            negative_mode: NegativeMode::Schema,
            schema_bucketing: true,
            type_match: TypeMatch::Strict,
            compose_all_nodes: false,
            freeze_structure: false,
            structure: StructureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.max_nodes < 2 {
            return Err(Error::Config("max_nodes must be at least 2".into()));
        }
        if (self.train_ratio + self.valid_ratio + self.test_ratio - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        if self.disable_contextual && self.disable_global {
            return Err(Error::Config(
                "cannot disable both contrastive levels".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.structure.dim != self.dim {
            return Err(Error::Config(format!(
                "structure embedding dim {} must equal model dim {}",
                self.structure.dim, self.dim
            )));
        }
        Ok(())
    }

    /// Parse a flat key-value config file: one `key = value` (or
    /// `key value`) per line, `#` comments. Unknown keys are errors.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut cfg = TrainConfig::default();
        let mut dim_set = false;
        let mut structure_dim_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => line.split_once(char::is_whitespace).map_or(
                    (line, ""),
                    |(k, v)| (k.trim(), v.trim()),
                ),
            };
            if value.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key {key:?} has no value",
                    lineno + 1
                )));
            }
            match key {
                "dim" => {
                    cfg.dim = parse(key, value)?;
                    dim_set = true;
                }
                "proj_dim" => cfg.proj_dim = parse(key, value)?,
                "layers" => cfg.layers = parse(key, value)?,
                "heads" => cfg.heads = parse(key, value)?,
                "tau" => cfg.tau = parse(key, value)?,
                "lambda" => cfg.lambda = parse(key, value)?,
                "k1" => cfg.k1 = parse(key, value)?,
                "k2" => cfg.k2 = parse(key, value)?,
                "queue_batches" => cfg.queue_batches = parse(key, value)?,
                "lr_pretrain" => cfg.lr_pretrain = parse(key, value)?,
                "lr_finetune" => cfg.lr_finetune = parse(key, value)?,
                "batch_pretrain" => cfg.batch_pretrain = parse(key, value)?,
                "batch_finetune" => cfg.batch_finetune = parse(key, value)?,
                "epochs_pretrain" => cfg.epochs_pretrain = parse(key, value)?,
                "epochs_finetune" => cfg.epochs_finetune = parse(key, value)?,
                "max_nodes" => cfg.max_nodes = parse(key, value)?,
                "walk_length" => cfg.walk_length = parse(key, value)?,
                "composition" => cfg.composition = value.parse()?,
                "seed" => cfg.seed = parse(key, value)?,
                "alpha" => cfg.alpha = parse(key, value)?,
                "train_ratio" => cfg.train_ratio = parse(key, value)?,
                "valid_ratio" => cfg.valid_ratio = parse(key, value)?,
                "test_ratio" => cfg.test_ratio = parse(key, value)?,
                "finetune_negatives" => cfg.finetune_negatives = parse(key, value)?,
                "threshold" => cfg.threshold = parse(key, value)?,
                "disable_contextual" => cfg.disable_contextual = parse_bool(key, value)?,
                "disable_global" => cfg.disable_global = parse_bool(key, value)?,
                "disable_pretrain" => cfg.disable_pretrain = parse_bool(key, value)?,
                "negative_mode" => {
                    cfg.negative_mode = match value {
                        "schema" => NegativeMode::Schema,
                        "relation" => NegativeMode::Relation,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown negative_mode {other:?}; expected schema|relation"
                            )))
                        }
                    }
                }
                "schema_bucketing" => cfg.schema_bucketing = parse_bool(key, value)?,
                "type_match" => {
                    cfg.type_match = match value {
                        "strict" => TypeMatch::Strict,
                        "overlap" => TypeMatch::Overlap,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown type_match {other:?}; expected strict|overlap"
                            )))
                        }
                    }
                }
                "compose_all_nodes" => cfg.compose_all_nodes = parse_bool(key, value)?,
                "freeze_structure" => cfg.freeze_structure = parse_bool(key, value)?,
                "structure_dim" => {
                    cfg.structure.dim = parse(key, value)?;
                    structure_dim_set = true;
                }
                "structure_walks_per_node" => cfg.structure.walks_per_node = parse(key, value)?,
                "structure_walk_length" => cfg.structure.walk_length = parse(key, value)?,
                "structure_window" => cfg.structure.window = parse(key, value)?,
                "structure_negatives" => cfg.structure.negatives = parse(key, value)?,
                "structure_epochs" => cfg.structure.epochs = parse(key, value)?,
                "structure_lr" => cfg.structure.lr = parse(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown config key {other:?} on line {}",
                        lineno + 1
                    )))
                }
            }
        }
        if dim_set && !structure_dim_set {
            cfg.structure.dim = cfg.dim;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Config(format!("bad boolean for {key}: {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_key_value_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# benchmark settings").unwrap();
        writeln!(f, "dim = 32").unwrap();
        writeln!(f, "proj_dim = 32").unwrap();
        writeln!(f, "tau 0.5").unwrap();
        writeln!(f, "negative_mode = relation").unwrap();
        writeln!(f, "schema_bucketing = off").unwrap();
        let cfg = TrainConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.dim, 32);
        assert_eq!(cfg.structure.dim, 32);
        assert_eq!(cfg.tau, 0.5);
        assert_eq!(cfg.negative_mode, NegativeMode::Relation);
        assert!(!cfg.schema_bucketing);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "momentum = 0.9").unwrap();
        assert!(TrainConfig::from_file(f.path()).is_err());
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = TrainConfig::default();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = TrainConfig::default();
        cfg.disable_contextual = true;
        cfg.disable_global = true;
        assert!(cfg.validate().is_err());

        let mut cfg = TrainConfig::default();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
