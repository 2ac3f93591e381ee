//! Run configuration: a JSON file holding `TrainConfig` fields plus data
//! locations, with command-line flags layered on top.

use std::path::{Path, PathBuf};

use clap::Args;
use regmapr::{DataFormat, DecayOn, DevMetric, FeatureMode, ScoreFn, ScoreRange, TaskKind, TrainConfig};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Args, Default)]
pub struct DataFlags {
    /// Training split
    #[arg(long = "train")]
    pub train_data: Option<PathBuf>,
    /// Development split used for lr decay and model selection
    #[arg(long = "dev")]
    pub dev_data: Option<PathBuf>,
    /// Test split, evaluated once with the selected parameters
    #[arg(long = "test")]
    pub test_data: Option<PathBuf>,
    /// pairs-jsonl or tsv (default: from the file extension)
    #[arg(long = "format")]
    pub data_format: Option<DataFormat>,
    /// Source scale of relatedness scores as `lo,hi` (default 1,5)
    #[arg(long)]
    pub score_range: Option<ScoreRange>,
    /// GloVe text file
    #[arg(long)]
    pub glove: Option<PathBuf>,
    /// Lexical PPDB file
    #[arg(long)]
    pub ppdb: Option<PathBuf>,
    /// Also insert every PPDB pair reversed
    #[arg(long)]
    pub symmetrize: bool,
    /// Skip records with unrecognised labels instead of failing
    #[arg(long)]
    pub skip_bad: bool,
    /// Where to write the best checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// One flag per `TrainConfig` field; set flags win over the config file.
#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Locked dropout rate on the encoder input
    #[arg(long)]
    pub d_e: Option<f64>,
    /// Dropout rate after the head's hidden layer
    #[arg(long)]
    pub d_f: Option<f64>,
    /// DropConnect rate on the recurrent weights
    #[arg(long)]
    pub d_w: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// BASE, MA, PR or MAPR
    #[arg(long)]
    pub mode: Option<FeatureMode>,
    /// accuracy, f1, pearson, spearman or mse
    #[arg(long)]
    pub dev_metric: Option<DevMetric>,
    /// min-exp or exp-neg-abs
    #[arg(long)]
    pub score_fn: Option<ScoreFn>,
    /// Scale for reported MSE as `lo,hi`
    #[arg(long)]
    pub mse_scale: Option<ScoreRange>,
    /// Global gradient-norm bound
    #[arg(long, conflicts_with = "no_clip")]
    pub clip: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Keep the current parameters when the lr decays
    #[arg(long)]
    pub no_rollback: bool,
    /// best or prev
    #[arg(long)]
    pub decay_on: Option<DecayOn>,
    #[arg(long)]
    pub forget_bias_one: bool,
}

/// Files and options resolved from config plus flags.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub train_data: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub data_format: Option<DataFormat>,
    pub score_range: Option<ScoreRange>,
    pub glove: Option<PathBuf>,
    pub ppdb: Option<PathBuf>,
    pub symmetrize: bool,
    pub skip_bad: bool,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct GridAxes {
    pub d_e: Option<Vec<f64>>,
    pub d_f: Option<Vec<f64>>,
    pub d_w: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub files: RunFiles,
    pub grid: GridAxes,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::usage(msg)
}

fn set<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| usage(format!("config key '{key}': {e}"))),
    }
}

fn take_range(map: &mut Map<String, Value>, key: &str) -> Result<Option<ScoreRange>, CliError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => s.parse().map(Some).map_err(|e| usage(format!("config key '{key}': {e}"))),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| usage(format!("config key '{key}': {e}"))),
    }
}

fn resolve(base: Option<&Path>, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    })
}

impl RunConfig {
    /// Reads `path` (if any) and applies flag overrides. Relative paths in
    /// the file are taken relative to the file's directory.
    pub fn load(
        path: Option<&Path>,
        data: &DataFlags,
        flags: &TrainFlags,
        seed: Option<u64>,
        deterministic: bool,
    ) -> Result<Self, CliError> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(usage(format!("{}: config must be a JSON object", p.display()))),
                    Err(e) => return Err(usage(format!("{}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        let base = path.and_then(Path::parent);
        let file_path = |map: &mut Map<String, Value>, key: &str| -> Result<Option<PathBuf>, CliError> {
            Ok(resolve(base, take::<PathBuf>(map, key)?))
        };
        let files = RunFiles {
            train_data: data.train_data.clone().or(file_path(&mut map, "train_data")?),
            dev_data: data.dev_data.clone().or(file_path(&mut map, "dev_data")?),
            test_data: data.test_data.clone().or(file_path(&mut map, "test_data")?),
            data_format: data.data_format.or(take(&mut map, "data_format")?),
            score_range: data.score_range.or(take_range(&mut map, "score_range")?),
            glove: data.glove.clone().or(file_path(&mut map, "glove")?),
            ppdb: data.ppdb.clone().or(file_path(&mut map, "ppdb")?),
            symmetrize: take(&mut map, "symmetrize")?.unwrap_or(false) || data.symmetrize,
            skip_bad: take(&mut map, "skip_bad")?.unwrap_or(false) || data.skip_bad,
            checkpoint: data.checkpoint.clone().or(file_path(&mut map, "checkpoint")?),
        };
        let grid = match map.remove("grid") {
            None | Some(Value::Null) => GridAxes::default(),
            Some(Value::Object(mut g)) => {
                let axes = GridAxes {
                    d_e: take(&mut g, "d_e")?,
                    d_f: take(&mut g, "d_f")?,
                    d_w: take(&mut g, "d_w")?,
                };
                if let Some(k) = g.keys().next() {
                    return Err(usage(format!("unknown grid key '{k}'")));
                }
                axes
            }
            Some(_) => return Err(usage("config key 'grid' must be an object")),
        };

        set(&mut map, "task", flags.task);
        set(&mut map, "seed", seed);
        set(&mut map, "batch_size", flags.batch_size);
        set(&mut map, "lr", flags.lr);
        set(&mut map, "lr_decay", flags.lr_decay);
        set(&mut map, "max_epochs", flags.max_epochs);
        set(&mut map, "min_lr", flags.min_lr);
        set(&mut map, "d_e", flags.d_e);
        set(&mut map, "d_f", flags.d_f);
        set(&mut map, "d_w", flags.d_w);
        set(&mut map, "hidden", flags.hidden);
        set(&mut map, "head_hidden", flags.head_hidden);
        set(&mut map, "embedding_dim", flags.embedding_dim);
        set(&mut map, "mode", flags.mode);
        set(&mut map, "dev_metric", flags.dev_metric);
        set(&mut map, "score_fn", flags.score_fn);
        set(&mut map, "mse_scale", flags.mse_scale);
        set(&mut map, "clip", flags.clip);
        if flags.no_clip {
            map.insert("clip".into(), Value::Null);
        }
        set(&mut map, "rollback", flags.no_rollback.then_some(false));
        set(&mut map, "decay_on", flags.decay_on);
        set(&mut map, "forget_bias_one", flags.forget_bias_one.then_some(true));
        set(&mut map, "deterministic", deterministic.then_some(true));
        if let Some(Value::String(s)) = map.get("mse_scale") {
            let r: ScoreRange = s.parse().map_err(|e| usage(format!("config key 'mse_scale': {e}")))?;
            map.insert("mse_scale".into(), serde_json::to_value(r).expect("range serializes"));
        }
        if !map.contains_key("task") {
            return Err(usage("no task given (config key 'task' or --task)"));
        }
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("config: {e}")))?;
        train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(RunConfig { train, files, grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"task": "paraphrase", "lr": 0.01, "hidden": 20, "train_data": "t.jsonl", "clip": 1.0,
                "grid": {"d_e": [0.0, 0.5]}}"#,
        )
        .unwrap();
        let flags = TrainFlags {
            hidden: Some(8),
            no_clip: true,
            no_rollback: true,
            ..TrainFlags::default()
        };
        let cfg = RunConfig::load(Some(&path), &DataFlags::default(), &flags, Some(9), true).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.hidden, 8);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.clip, None);
        assert!(!cfg.train.rollback && cfg.train.deterministic);
        assert_eq!(cfg.files.train_data, Some(dir.path().join("t.jsonl")));
        assert_eq!(cfg.grid.d_e, Some(vec![0.0, 0.5]));
    }

    #[test]
    fn missing_task_and_unknown_keys_are_usage_errors() {
        let none = RunConfig::load(None, &DataFlags::default(), &TrainFlags::default(), None, false);
        assert_eq!(none.unwrap_err().code, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"task": "relatedness", "learning_rate": 0.1}"#).unwrap();
        let bad = RunConfig::load(Some(&path), &DataFlags::default(), &TrainFlags::default(), None, false);
        assert_eq!(bad.unwrap_err().code, 1);
    }

    #[test]
    fn score_ranges_accept_strings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"task": "relatedness", "score_range": "0,5", "mse_scale": "1,5"}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &DataFlags::default(), &TrainFlags::default(), None, false).unwrap();
        assert_eq!(cfg.files.score_range, Some(ScoreRange::STSB));
        assert_eq!(cfg.train.mse_scale, Some(ScoreRange::SICK));
    }
}
