//! Run configuration: a flat `key = value` file with `#` comments, overridden
//! by command-line flags. The grammar is documented in the README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use warmfold::data::Delimiter;
use warmfold::foldin::{SgdFoldInConfig, SgdInit, Strategy};
use warmfold::model::{ModelKind, TrainConfig};
use warmfold::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub format: Delimiter,
    pub fractions: (f64, f64, f64),
    pub kind: ModelKind,
    pub train: TrainConfig<f64>,
    pub strategies: Vec<Strategy>,
    pub sgd: SgdFoldInConfig<f64>,
    pub ks: Vec<usize>,
    pub coverage_k: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub bench_sizes: Vec<usize>,
    pub bench_trials: usize,
    pub bench_sgd_trials: usize,
    pub bench_rank: usize,
    pub min_user_events: usize,
    pub min_item_events: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("interactions.csv"),
            format: Delimiter::Auto,
            fractions: (0.8, 0.1, 0.1),
            kind: ModelKind::UltraGcn,
            train: TrainConfig::default(),
            strategies: vec![
                Strategy::Linear,
                Strategy::Sgd,
                Strategy::Mean,
                Strategy::Zero,
            ],
            sgd: SgdFoldInConfig::default(),
            ks: vec![5, 10],
            coverage_k: 10,
            out_dir: PathBuf::from("out"),
            seed: 42,
            bench_sizes: vec![1_000, 10_000, 100_000, 1_000_000],
            bench_trials: 100,
            bench_sgd_trials: 20,
            bench_rank: 32,
            min_user_events: 0,
            min_item_events: 0,
        }
    }
}

fn parse_err(key: &str, value: &str) -> Error {
    Error::InvalidArgument(format!("config key {key}: cannot parse {value:?}"))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::default();
        let mut pairs = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: no + 1,
                    message: "expected `key = value`".into(),
                });
            };
            pairs.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        for (key, value) in pairs {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    /// Apply one `key = value` assignment; flags funnel through here too so
    /// file and command line share a vocabulary.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset.path" => self.dataset = PathBuf::from(value),
            "dataset.format" => {
                self.format = match value {
                    "auto" => Delimiter::Auto,
                    "csv" | "comma" => Delimiter::Comma,
                    "tsv" | "tab" => Delimiter::Tab,
                    "double_colon" | "ml" => Delimiter::DoubleColon,
                    other => return Err(parse_err(key, other)),
                }
            }
            "dataset.min_user_events" => {
                self.min_user_events = value.parse().map_err(|_| parse_err(key, value))?
            }
            "dataset.min_item_events" => {
                self.min_item_events = value.parse().map_err(|_| parse_err(key, value))?
            }
            "split.train" => self.fractions.0 = value.parse().map_err(|_| parse_err(key, value))?,
            "split.warm" => self.fractions.1 = value.parse().map_err(|_| parse_err(key, value))?,
            "split.test" => self.fractions.2 = value.parse().map_err(|_| parse_err(key, value))?,
            "model.kind" => {
                self.kind = match value {
                    "ultragcn" | "graph" => ModelKind::UltraGcn,
                    "puresvd" | "svd" => ModelKind::PureSvd,
                    other => return Err(parse_err(key, other)),
                }
            }
            "model.rank" => self.train.rank = value.parse().map_err(|_| parse_err(key, value))?,
            "model.lambda" => {
                self.train.lambda = value.parse().map_err(|_| parse_err(key, value))?
            }
            "model.negatives" => {
                self.train.negatives_per_positive =
                    value.parse().map_err(|_| parse_err(key, value))?
            }
            "model.learning_rate" => {
                self.train.learning_rate = value.parse().map_err(|_| parse_err(key, value))?
            }
            "model.epochs" => {
                self.train.epochs = value.parse().map_err(|_| parse_err(key, value))?
            }
            "model.batch_size" => {
                self.train.batch_size = value.parse().map_err(|_| parse_err(key, value))?
            }
            "model.init_scale" => {
                self.train.init_scale = value.parse().map_err(|_| parse_err(key, value))?
            }
            "foldin.strategies" => {
                self.strategies = value
                    .split(',')
                    .map(Strategy::parse)
                    .collect::<Result<Vec<_>>>()?;
                if self.strategies.is_empty() {
                    return Err(parse_err(key, value));
                }
            }
            "sgd.steps" => self.sgd.steps = value.parse().map_err(|_| parse_err(key, value))?,
            "sgd.learning_rate" => {
                self.sgd.learning_rate = value.parse().map_err(|_| parse_err(key, value))?
            }
            "sgd.mix" => self.sgd.mix = value.parse().map_err(|_| parse_err(key, value))?,
            "sgd.init" => {
                self.sgd.init = match value {
                    "zero" => SgdInit::Zero,
                    "previous" => SgdInit::Previous,
                    "mean" => SgdInit::Mean,
                    other => return Err(parse_err(key, other)),
                }
            }
            "eval.ks" => {
                self.ks = value
                    .split(',')
                    .map(|k| k.trim().parse().map_err(|_| parse_err(key, value)))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "eval.coverage_k" => {
                self.coverage_k = value.parse().map_err(|_| parse_err(key, value))?
            }
            "output.dir" => self.out_dir = PathBuf::from(value),
            "seed" => {
                self.seed = value.parse().map_err(|_| parse_err(key, value))?;
                self.train.seed = self.seed;
            }
            "bench.sizes" => {
                self.bench_sizes = value
                    .split(',')
                    .map(|k| k.trim().parse().map_err(|_| parse_err(key, value)))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "bench.trials" => {
                self.bench_trials = value.parse().map_err(|_| parse_err(key, value))?
            }
            "bench.sgd_trials" => {
                self.bench_sgd_trials = value.parse().map_err(|_| parse_err(key, value))?
            }
            "bench.rank" => self.bench_rank = value.parse().map_err(|_| parse_err(key, value))?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (key, value) in overrides {
            self.set(key, value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_file_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# run config").unwrap();
        writeln!(f, "dataset.path = data.csv").unwrap();
        writeln!(f, "model.rank = 16").unwrap();
        writeln!(f, "foldin.strategies = linear,zero").unwrap();
        writeln!(f, "seed = 7").unwrap();
        let mut config = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(config.train.rank, 16);
        assert_eq!(config.seed, 7);
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.strategies, vec![Strategy::Linear, Strategy::Zero]);

        config
            .apply_overrides(&[("model.rank".into(), "8".into())])
            .unwrap();
        assert_eq!(config.train.rank, 8);

        assert!(config.set("nope", "1").is_err());
        assert!(config.set("model.rank", "x").is_err());
    }
}
