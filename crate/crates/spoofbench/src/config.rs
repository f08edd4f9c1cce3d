//! Run configuration files.
//!
//! Configs are TOML with dotted keys and reject unknown fields, so a typo'd
//! key fails loudly instead of silently using a default. Scheme fields carry
//! the standard names (`gamma`, `delta`, `hash_key`, `prefix_length`,
//! `z_threshold`, `entropy_threshold`, `ngram`, `salt_key`) so published
//! configurations transcribe directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::Benchmark;
use crate::policy::GrpoConfig;
use crate::reward::{CapacityWeight, SemanticVariant};
use crate::toylm::ToyLM;
use crate::watermark::{BiasConfig, GreenKey, SamplingKey, WatermarkScheme};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub seed: u64,
    pub vocab: usize,
    pub order: usize,
    pub concentration: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { seed: 0, vocab: 64, order: 2, concentration: 1.0 }
    }
}

impl LmConfig {
    pub fn build(&self) -> Result<ToyLM> {
        ToyLM::new(self.seed, self.vocab, self.order, self.concentration)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub algorithm_name: String,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub hash_key: Option<u64>,
    pub prefix_length: Option<usize>,
    pub z_threshold: Option<f64>,
    pub entropy_threshold: Option<f64>,
    pub ngram: Option<usize>,
    pub salt_key: Option<u64>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            algorithm_name: "KGW".into(),
            gamma: None,
            delta: None,
            hash_key: None,
            prefix_length: None,
            z_threshold: None,
            entropy_threshold: None,
            ngram: None,
            salt_key: None,
        }
    }
}

impl SchemeConfig {
    pub fn build(&self) -> Result<WatermarkScheme> {
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("gamma must be in (0, 1], got {g}")));
            }
        }
        if let Some(d) = self.delta {
            if d < 0.0 {
                return Err(Error::Config(format!("delta must be >= 0, got {d}")));
            }
        }
        let key = |defaults: GreenKey, global: bool| GreenKey {
            hash_key: self.hash_key.unwrap_or(defaults.hash_key),
            gamma: self.gamma.unwrap_or(defaults.gamma),
            prefix_length: self.prefix_length.unwrap_or(defaults.prefix_length),
            global,
        };
        let scheme = match self.algorithm_name.as_str() {
            "KGW" => WatermarkScheme::Kgw {
                key: key(GreenKey::default(), false),
                bias: BiasConfig { delta: self.delta.unwrap_or(3.0), entropy_threshold: None },
            },
            "Unigram" => WatermarkScheme::Unigram {
                key: key(GreenKey::default(), true),
                bias: BiasConfig { delta: self.delta.unwrap_or(2.0), entropy_threshold: None },
            },
            "SWEET" => WatermarkScheme::Sweet {
                key: key(GreenKey::default(), false),
                bias: BiasConfig {
                    delta: self.delta.unwrap_or(2.0),
                    entropy_threshold: Some(self.entropy_threshold.unwrap_or(0.9)),
                },
                z_threshold: self.z_threshold.unwrap_or(4.0),
            },
            "EWD" => WatermarkScheme::Ewd {
                key: key(GreenKey::default(), false),
                bias: BiasConfig { delta: self.delta.unwrap_or(2.0), entropy_threshold: None },
            },
            "Sampling" | "PF" => WatermarkScheme::Sampling {
                key: SamplingKey {
                    salt_key: self.salt_key.unwrap_or(35317),
                    ngram: self.ngram.unwrap_or(8),
                },
            },
            other => return Err(Error::UnknownScheme(other.into())),
        };
        Ok(scheme)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train: usize,
    pub eval: usize,
    pub length: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { train: 100, eval: 400, length: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub batch: usize,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GrpoConfig::toy_benchmark(0);
        TrainConfig {
            group_size: g.group_size,
            batch: g.batch,
            w1: g.w1,
            w2: g.w2,
            w3: g.w3,
            beta: g.beta,
            lr: g.lr,
            epochs: g.epochs,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub capacity_weight: String,
    pub semantic: String,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { capacity_weight: "one-minus-pmax".into(), semantic: "min".into() }
    }
}

/// Full resolved configuration of one run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub lm: LmConfig,
    pub scheme: SchemeConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Effective run seed: CLI override, then config, then 42.
    pub fn seed_or(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.seed).unwrap_or(42)
    }

    pub fn capacity_weight(&self) -> Result<CapacityWeight> {
        CapacityWeight::parse(&self.reward.capacity_weight)
    }

    pub fn semantic_variant(&self) -> Result<SemanticVariant> {
        SemanticVariant::parse(&self.reward.semantic)
    }

    pub fn grpo(&self, seed: u64) -> GrpoConfig {
        GrpoConfig {
            group_size: self.train.group_size,
            batch: self.train.batch,
            w1: self.train.w1,
            w2: self.train.w2,
            w3: self.train.w3,
            beta: self.train.beta,
            lr: self.train.lr,
            epochs: self.train.epochs,
            clip: self.train.clip,
            seed,
        }
    }

    pub fn benchmark(&self, seed: u64) -> Result<Benchmark> {
        Ok(Benchmark {
            lm: self.lm.build()?,
            scheme: self.scheme.build()?,
            train_n: self.dataset.train,
            eval_n: self.dataset.eval,
            length: self.dataset.length,
            grpo: self.grpo(seed),
            weight: self.capacity_weight()?,
            semantic: self.semantic_variant()?,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let cfg = RunConfig::default();
        let bench = cfg.benchmark(42).unwrap();
        assert_eq!(bench.train_n, 100);
        assert_eq!(bench.eval_n, 400);
        assert_eq!(bench.length, 200);
        assert_eq!(bench.grpo.group_size, 12);
        assert_eq!(bench.grpo.batch, 48);
        assert!((bench.grpo.beta - 0.04).abs() < 1e-12);
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::parse(
            "seed = 7\nlm.vocab = 32\nscheme.algorithm_name = \"SWEET\"\nscheme.entropy_threshold = 0.9\ntrain.epochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.lm.vocab, 32);
        assert_eq!(cfg.train.epochs, 3);
        match cfg.scheme.build().unwrap() {
            WatermarkScheme::Sweet { bias, .. } => {
                assert_eq!(bias.entropy_threshold, Some(0.9));
            }
            other => panic!("expected SWEET, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("nonsense = 1\n").is_err());
        assert!(RunConfig::parse("lm.vocabulary = 64\n").is_err());
    }

    #[test]
    fn scheme_validation() {
        let mut cfg = SchemeConfig { gamma: Some(1.5), ..SchemeConfig::default() };
        assert!(cfg.build().is_err());
        cfg.gamma = Some(0.25);
        cfg.delta = Some(2.0);
        match cfg.build().unwrap() {
            WatermarkScheme::Kgw { key, bias } => {
                assert_eq!(key.gamma, 0.25);
                assert_eq!(bias.delta, 2.0);
                assert_eq!(key.hash_key, 15485863);
            }
            other => panic!("expected KGW, got {other:?}"),
        }
        let pf = SchemeConfig { algorithm_name: "PF".into(), ..SchemeConfig::default() };
        match pf.build().unwrap() {
            WatermarkScheme::Sampling { key } => {
                assert_eq!(key.salt_key, 35317);
                assert_eq!(key.ngram, 8);
            }
            other => panic!("expected Sampling, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }
}
