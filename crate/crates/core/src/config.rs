//! JSON run configuration: schema, defaults, validation and the frozen hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cellspace::{parse_operator_set, CellError, OperatorSpec, DEFAULT_CANONICAL_BOUND};
use crate::evaluator::{BridgeOptions, OracleParams, TrainingParams};
use crate::macroarch::{InputShape, MacroConfig};
use crate::surrogate::SearchSpace;

pub const IMAGE_OPERATORS: [&str; 12] = [
    "identity",
    "3x3 dconv",
    "5x5 dconv",
    "7x7 dconv",
    "1x3-3x1 conv",
    "1x5-5x1 conv",
    "1x7-7x1 conv",
    "1x1 conv",
    "3x3 conv",
    "5x5 conv",
    "2x2 maxpool",
    "2x2 avgpool",
];

pub const SERIES_OPERATORS: [&str; 13] = [
    "identity",
    "7 dconv",
    "13 dconv",
    "21 dconv",
    "7 conv",
    "13 conv",
    "21 conv",
    "7:2dr conv",
    "7:4dr conv",
    "2 maxpool",
    "2 avgpool",
    "lstm",
    "gru",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
}

fn schema(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Popnas,
    Pnas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyPredictorKind {
    /// Boosted trees over padded one-hot cell encodings, in process.
    Gbdt,
    /// The evaluator's own predictor through its fit/predict hooks.
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    #[serde(rename = "B")]
    pub max_blocks: usize,
    #[serde(rename = "K")]
    pub beam: usize,
    #[serde(rename = "J")]
    pub exploration_beam: usize,
    pub max_lookback: u32,
    pub operators: Vec<String>,
    pub mode: SearchMode,
    pub residual_cells: bool,
    pub exploration_min_hits: usize,
    pub seed: u64,
    /// Consecutive failed evaluations tolerated before the run aborts.
    pub max_failure_streak: usize,
    /// Drop expansions isomorphic to one already produced by another parent.
    pub cross_parent_dedup: bool,
    pub accuracy_predictor: AccuracyPredictorKind,
    pub predictor: SearchSpace,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            max_blocks: 5,
            beam: 128,
            exploration_beam: 16,
            max_lookback: 2,
            operators: IMAGE_OPERATORS.iter().map(|s| s.to_string()).collect(),
            mode: SearchMode::Popnas,
            residual_cells: true,
            exploration_min_hits: 2,
            seed: 0,
            max_failure_streak: 3,
            cross_parent_dedup: true,
            accuracy_predictor: AccuracyPredictorKind::Gbdt,
            predictor: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroSection {
    #[serde(rename = "M")]
    pub motifs: u32,
    #[serde(rename = "N")]
    pub normals: u32,
    #[serde(rename = "F")]
    pub filters: u32,
    /// `[H, W, C]` for images, `[L, C]` for series.
    pub input: Vec<u32>,
    pub classes: u32,
    pub last_reduction: bool,
}

impl Default for MacroSection {
    fn default() -> Self {
        Self {
            motifs: 3,
            normals: 2,
            filters: 24,
            input: vec![32, 32, 3],
            classes: 10,
            last_reduction: false,
        }
    }
}

impl MacroSection {
    pub fn input_shape(&self) -> Option<InputShape> {
        match self.input.as_slice() {
            [h, w, c] => Some(InputShape::image(*h, *w, *c)),
            [l, c] => Some(InputShape::series(*l, *c)),
            _ => None,
        }
    }

    pub fn is_series(&self) -> bool {
        self.input.len() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorSpec {
    Synthetic {
        #[serde(default)]
        oracle: OracleParams,
    },
    External {
        cmd: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    24.0 * 3600.0
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec::Synthetic {
            oracle: OracleParams::default(),
        }
    }
}

impl EvaluatorSpec {
    pub fn bridge_options(&self) -> Option<BridgeOptions> {
        match self {
            EvaluatorSpec::External { cmd, timeout_s } => Some(BridgeOptions {
                cmd: cmd.clone(),
                timeout_s: *timeout_s,
            }),
            EvaluatorSpec::Synthetic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub top_k: usize,
    /// Exclusive parameter range; the macro grid runs only when both are set.
    pub params_min: Option<u64>,
    pub params_max: Option<u64>,
    pub m_mod: Vec<u32>,
    pub n_mod: Vec<u32>,
    pub f_mod: Vec<f64>,
    /// Overrides applied on top of the search training map.
    pub training: TrainingParams,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            top_k: 5,
            params_min: None,
            params_max: None,
            m_mod: vec![0, 1],
            n_mod: vec![0, 1, 2],
            f_mod: vec![0.85, 1.0, 1.5, 1.75, 2.0],
            training: TrainingParams::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinalSection {
    pub training: TrainingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default, rename = "macro")]
    pub macro_arch: MacroSection,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub evaluator: EvaluatorSpec,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default, rename = "final")]
    pub final_training: FinalSection,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Self {
            search: SearchSection::default(),
            macro_arch: MacroSection::default(),
            training: TrainingParams::new(),
            evaluator: EvaluatorSpec::default(),
            dataset: String::new(),
            selection: SelectionSection::default(),
            final_training: FinalSection::default(),
        };
        c.fill_defaults();
        c
    }
}

fn fill(map: &mut TrainingParams, defaults: &[(&str, Value)]) {
    for (k, v) in defaults {
        map.entry(k.to_string()).or_insert_with(|| v.clone());
    }
}

impl Config {
    /// Inserts the per-phase training defaults for keys left unset; image
    /// and series inputs differ in weight decay, epochs and drop path.
    pub fn fill_defaults(&mut self) {
        let series = self.macro_arch.is_series();
        let wd = if series { 1e-3 } else { 5e-4 };
        let mut search = vec![
            ("epochs", Value::from(21)),
            ("lr", Value::from(0.01)),
            ("wd", Value::from(wd)),
            ("optimizer", Value::from("adamw")),
            ("scheduler", Value::from("cosine_decay_restart")),
            ("validation_split", Value::from(0.1)),
        ];
        if series {
            search.push(("drop_path", Value::from(0.2)));
        }
        fill(&mut self.training, &search);
        let prolonged = |epochs: u32| {
            let mut v = vec![
                ("epochs", Value::from(epochs)),
                ("scheduler", Value::from("cosine_decay")),
                ("drop_path", Value::from(if series { 0.6 } else { 0.4 })),
                ("label_smoothing", Value::from(0.1)),
                ("secondary_exit", Value::from(true)),
            ];
            if !series {
                v.push(("cutout", Value::from(true)));
            }
            v
        };
        fill(&mut self.selection.training, &prolonged(if series { 100 } else { 200 }));
        let mut last = prolonged(if series { 200 } else { 600 });
        last.push(("full_training_data", Value::from(true)));
        fill(&mut self.final_training.training, &last);
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path.is_empty() { "." } else { &path }, e.into_inner().to_string())
        })?;
        config.fill_defaults();
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn operators(&self) -> Result<Vec<OperatorSpec>, ConfigError> {
        parse_operator_set(&self.search.operators).map_err(|e| match e {
            CellError::UnknownOperator(t) => ConfigError::UnknownOperator(t),
            CellError::InvalidParameter { token, .. } => ConfigError::UnknownOperator(token),
            other => schema("search.operators", other.to_string()),
        })
    }

    /// Macro layout used during the search.
    pub fn macro_config(&self) -> MacroConfig {
        MacroConfig {
            motifs: self.macro_arch.motifs,
            normals_per_motif: self.macro_arch.normals,
            filters: self.macro_arch.filters,
            max_lookback: self.search.max_lookback,
            residual_cells: self.search.residual_cells && self.search.mode == SearchMode::Popnas,
            input_shape: self
                .macro_arch
                .input_shape()
                .unwrap_or_else(|| InputShape::image(32, 32, 3)),
            num_classes: self.macro_arch.classes,
            last_reduction: self.macro_arch.last_reduction,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.search;
        if s.max_blocks == 0 {
            return Err(schema("search.B", "must be at least 1"));
        }
        if s.max_blocks > DEFAULT_CANONICAL_BOUND {
            return Err(schema("search.B", format!("at most {DEFAULT_CANONICAL_BOUND} blocks are supported")));
        }
        if s.beam == 0 {
            return Err(schema("search.K", "must be at least 1"));
        }
        if s.max_lookback == 0 {
            return Err(schema("search.max_lookback", "must be at least 1"));
        }
        if s.operators.is_empty() {
            return Err(schema("search.operators", "must not be empty"));
        }
        if s.exploration_min_hits == 0 {
            return Err(schema("search.exploration_min_hits", "must be at least 1"));
        }
        if s.predictor.trials == 0 || s.predictor.folds < 2 {
            return Err(schema("search.predictor", "needs at least one trial and two folds"));
        }
        self.operators()?;
        if self.macro_arch.input_shape().is_none() {
            return Err(schema("macro.input", "expected [H, W, C] or [L, C]"));
        }
        self.macro_config()
            .validate()
            .map_err(|e| schema("macro", e.to_string()))?;
        for (path, map) in [
            ("training.epochs", &self.training),
            ("selection.training.epochs", &self.selection.training),
            ("final.training.epochs", &self.final_training.training),
        ] {
            if !map.get("epochs").and_then(Value::as_u64).is_some_and(|e| e >= 1) {
                return Err(schema(path, "must be a positive integer"));
            }
        }
        match &self.evaluator {
            EvaluatorSpec::Synthetic { oracle } => oracle.validate().map_err(|m| schema("evaluator.oracle", m))?,
            EvaluatorSpec::External { cmd, timeout_s } => {
                if cmd.is_empty() {
                    return Err(schema("evaluator.cmd", "must name a program"));
                }
                if !(*timeout_s > 0.0) {
                    return Err(schema("evaluator.timeout_s", "must be positive"));
                }
            }
        }
        if s.accuracy_predictor == AccuracyPredictorKind::Worker && self.evaluator.bridge_options().is_none() {
            return Err(schema("search.accuracy_predictor", "`worker` requires an external evaluator"));
        }
        let sel = &self.selection;
        if sel.top_k == 0 {
            return Err(schema("selection.top_k", "must be at least 1"));
        }
        match (sel.params_min, sel.params_max) {
            (Some(lo), Some(hi)) if lo >= hi => return Err(schema("selection.params_max", "must exceed params_min")),
            (Some(_), None) | (None, Some(_)) => {
                return Err(schema("selection", "params_min and params_max must be given together"))
            }
            _ => {}
        }
        if sel.m_mod.is_empty() || sel.n_mod.is_empty() || sel.f_mod.is_empty() {
            return Err(schema("selection", "modifier lists must not be empty"));
        }
        if sel.f_mod.iter().any(|f| !(*f > 0.0)) {
            return Err(schema("selection.f_mod", "multipliers must be positive"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Config::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!((c.search.max_blocks, c.search.beam, c.search.exploration_beam), (5, 128, 16));
        assert_eq!((c.macro_arch.motifs, c.macro_arch.normals, c.macro_arch.filters), (3, 2, 24));
        assert_eq!(c.search.max_lookback, 2);
        assert_eq!(c.training["epochs"], 21);
        assert_eq!(c.training["lr"], 0.01);
        assert_eq!(c.training["wd"], 5e-4);
        assert_eq!(c.final_training.training["epochs"], 600);
        assert_eq!(c.operators().unwrap().len(), 12);
        assert_eq!(c, Config::default());
    }

    #[test]
    fn series_defaults() {
        let c = Config::from_json(r#"{"macro":{"input":[140,1],"classes":5}}"#).unwrap();
        assert_eq!(c.final_training.training["epochs"], 200);
        assert_eq!(c.selection.training["epochs"], 100);
        assert_eq!(c.training["wd"], 1e-3);
    }

    #[test]
    fn schema_errors_carry_paths() {
        match Config::from_json(r#"{"search":{"K":-3}}"#) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "search.K"),
            other => panic!("{other:?}"),
        }
        match Config::from_json(r#"{"search":{"K":0}}"#) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "search.K"),
            other => panic!("{other:?}"),
        }
        match Config::from_json(r#"{"search":{"operators":["3x3 conv","9z conv"]}}"#) {
            Err(ConfigError::UnknownOperator(t)) => assert_eq!(t, "9z conv"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Config::from_json(r#"{"serch":{}}"#), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn series_operator_set_accepted() {
        let ops = serde_json::to_string(&SERIES_OPERATORS).unwrap();
        let c = Config::from_json(&format!(r#"{{"search":{{"operators":{ops}}},"macro":{{"input":[96,1]}}}}"#)).unwrap();
        assert_eq!(c.operators().unwrap().len(), 13);
    }

    #[test]
    fn round_trip_preserves_hash() {
        let c = Config::from_json(r#"{"search":{"B":3,"mode":"pnas","seed":9},"training":{"batch_size":128}}"#).unwrap();
        let back = Config::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert!(!back.macro_config().residual_cells);
    }
}
