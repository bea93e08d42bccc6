use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_SAMPLE_CACHE;
use crate::faults::{self, Fault};
use crate::model::{EmbeddingMode, FinalActivation, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "cross-entropy")]
    CrossEntropy,
    #[serde(rename = "bpr-max")]
    BprMax,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::BprMax => "bpr-max",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "cross-entropy" => Ok(LossKind::CrossEntropy),
            "bpr-max" => Ok(LossKind::BprMax),
            other => Err(format!("unknown loss `{other}` (expected cross-entropy or bpr-max)")),
        }
    }
}

/// Every training hyperparameter. Field names follow the reference
/// implementation's parameter names so parameter files carry over verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub final_act: FinalActivation,
    pub layers: Vec<usize>,
    pub batch_size: usize,
    pub n_sample: usize,
    pub sample_alpha: f64,
    pub logq: f64,
    pub bpreg: f64,
    /// Tie input and output item embeddings.
    pub constrained_embedding: bool,
    /// Input embedding width; 0 means one-hot input (ignored when constrained).
    pub embedding: usize,
    pub dropout_p_embed: f64,
    pub dropout_p_hidden: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub n_epochs: usize,
    pub seed: u64,
    /// Shuffle session order each epoch instead of start-time order.
    pub shuffle: bool,
    pub sample_cache: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::CrossEntropy,
            final_act: FinalActivation::Softmax,
            layers: vec![100],
            batch_size: 64,
            n_sample: 2048,
            sample_alpha: 0.75,
            logq: 0.0,
            bpreg: 1.0,
            constrained_embedding: true,
            embedding: 0,
            dropout_p_embed: 0.0,
            dropout_p_hidden: 0.0,
            learning_rate: 0.05,
            momentum: 0.0,
            n_epochs: 10,
            seed: 42,
            shuffle: false,
            sample_cache: DEFAULT_SAMPLE_CACHE,
        }
    }
}

/// Keys accepted in parameter files, in canonical order.
pub const PARAM_KEYS: [&str; 18] = [
    "loss",
    "final_act",
    "layers",
    "batch_size",
    "dropout_p_embed",
    "dropout_p_hidden",
    "learning_rate",
    "momentum",
    "n_sample",
    "sample_alpha",
    "bpreg",
    "logq",
    "constrained_embedding",
    "embedding",
    "n_epochs",
    "seed",
    "shuffle",
    "sample_cache",
];

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

impl TrainConfig {
    /// Sets one parameter from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "loss" => self.loss = v.parse()?,
            "final_act" => self.final_act = v.parse()?,
            "layers" => {
                self.layers = v
                    .split('/')
                    .map(|x| parse_num::<usize>(x.trim()))
                    .collect::<Result<_, _>>()?
            }
            "batch_size" => {
                if !faults::active(Fault::HardCodedHyperparameters) {
                    self.batch_size = parse_num(v)?
                }
            }
            "dropout_p_embed" => self.dropout_p_embed = parse_num(v)?,
            "dropout_p_hidden" => {
                if !faults::active(Fault::HardCodedHyperparameters) {
                    self.dropout_p_hidden = parse_num(v)?
                }
            }
            "learning_rate" => self.learning_rate = parse_num(v)?,
            "momentum" => self.momentum = parse_num(v)?,
            "n_sample" => self.n_sample = parse_num(v)?,
            "sample_alpha" => self.sample_alpha = parse_num(v)?,
            "bpreg" => self.bpreg = parse_num(v)?,
            "logq" => self.logq = parse_num(v)?,
            "constrained_embedding" => self.constrained_embedding = parse_bool(v)?,
            "embedding" => self.embedding = parse_num(v)?,
            "n_epochs" => self.n_epochs = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "shuffle" => self.shuffle = parse_bool(v)?,
            "sample_cache" => self.sample_cache = parse_num(v)?,
            other => return Err(format!("unknown parameter `{other}`")),
        }
        Ok(())
    }

    /// Parses `key=value` pairs separated by newlines or commas; `#` starts a
    /// comment. Unset keys keep their defaults. All problems are reported.
    pub fn from_kv_str(text: &str) -> Result<Self, Vec<String>> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for pair in line.split(',') {
                let pair = pair.trim();
                if pair.is_empty() {
                    continue;
                }
                match pair.split_once('=') {
                    Some((k, v)) => {
                        if let Err(e) = self.set(k, v) {
                            errors.push(format!("{}: {e}", k.trim()));
                        }
                    }
                    None => errors.push(format!("expected key=value, got `{pair}`")),
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// One `key=value` per line in [`PARAM_KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        let layers: Vec<String> = self.layers.iter().map(usize::to_string).collect();
        let values = [
            self.loss.to_string(),
            self.final_act.to_string(),
            layers.join("/"),
            self.batch_size.to_string(),
            self.dropout_p_embed.to_string(),
            self.dropout_p_hidden.to_string(),
            self.learning_rate.to_string(),
            self.momentum.to_string(),
            self.n_sample.to_string(),
            self.sample_alpha.to_string(),
            self.bpreg.to_string(),
            self.logq.to_string(),
            self.constrained_embedding.to_string(),
            self.embedding.to_string(),
            self.n_epochs.to_string(),
            self.seed.to_string(),
            self.shuffle.to_string(),
            self.sample_cache.to_string(),
        ];
        PARAM_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut e = Vec::new();
        match self.loss {
            LossKind::CrossEntropy if self.final_act != FinalActivation::Softmax => e.push(format!(
                "loss=cross-entropy requires final_act=softmax, got {}",
                self.final_act
            )),
            LossKind::BprMax if self.final_act == FinalActivation::Softmax => e.push(
                "loss=bpr-max needs final_act in linear/relu/elu/selu, got softmax".to_owned(),
            ),
            _ => {}
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            e.push("layers must be a non-empty list of positive sizes".into());
        }
        if self.batch_size == 0 {
            e.push("batch_size must be at least 1".into());
        }
        if self.n_epochs == 0 {
            e.push("n_epochs must be at least 1".into());
        }
        if !(self.sample_alpha >= 0.0 && self.sample_alpha.is_finite()) {
            e.push(format!("sample_alpha must be >= 0, got {}", self.sample_alpha));
        }
        if !(0.0..=1.0).contains(&self.logq) {
            e.push(format!("logq must be in [0, 1], got {}", self.logq));
        }
        if !(self.bpreg >= 0.0 && self.bpreg.is_finite()) {
            e.push(format!("bpreg must be >= 0, got {}", self.bpreg));
        }
        for (name, p) in [
            ("dropout_p_embed", self.dropout_p_embed),
            ("dropout_p_hidden", self.dropout_p_hidden),
        ] {
            if !(0.0..1.0).contains(&p) {
                e.push(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            e.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            e.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.constrained_embedding && self.embedding > 0 {
            if let Some(&top) = self.layers.last() {
                if self.embedding != top {
                    e.push(format!(
                        "constrained_embedding ties the input embedding to the last layer ({top}); embedding={} conflicts",
                        self.embedding
                    ));
                }
            }
        }
        if self.sample_cache == 0 {
            e.push("sample_cache must be positive".into());
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e)
        }
    }

    pub fn embedding_mode(&self) -> EmbeddingMode {
        if self.constrained_embedding {
            EmbeddingMode::Shared
        } else if self.embedding == 0 {
            EmbeddingMode::None
        } else {
            EmbeddingMode::Separate(self.embedding)
        }
    }

    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            layers: self.layers.clone(),
            embedding: self.embedding_mode(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_style_parameter_string() {
        let cfg = TrainConfig::from_kv_str(
            "loss=bpr-max,final_act=elu-0.5,layers=224,batch_size=80,dropout_p_embed=0.5,\
             dropout_p_hidden=0.05,learning_rate=0.05,momentum=0.4,n_sample=2048,\
             sample_alpha=0.4,bpreg=1.95,logq=0.0,constrained_embedding=True,embedding=0,n_epochs=10",
        )
        .unwrap();
        assert_eq!(cfg.loss, LossKind::BprMax);
        assert_eq!(cfg.final_act, FinalActivation::Elu(0.5));
        assert_eq!(cfg.layers, vec![224]);
        assert_eq!(cfg.batch_size, 80);
        assert_eq!(cfg.momentum, 0.4);
        assert_eq!(cfg.embedding_mode(), EmbeddingMode::Shared);
        cfg.validate().unwrap();
    }

    #[test]
    fn newline_format_with_comments_and_multi_layer() {
        let cfg = TrainConfig::from_kv_str("# tuned\nlayers=100/50\nembedding=32 # separate\nconstrained_embedding=false\n")
            .unwrap();
        assert_eq!(cfg.layers, vec![100, 50]);
        assert_eq!(cfg.embedding_mode(), EmbeddingMode::Separate(32));
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.loss = LossKind::BprMax;
        cfg.final_act = FinalActivation::Elu(0.5);
        cfg.layers = vec![10, 20];
        let back = TrainConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn all_errors_reported() {
        let errs = TrainConfig::from_kv_str("batch_size=x,bogus=1,loss=top1").unwrap_err();
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn validation_rules() {
        let mut cfg = TrainConfig::default();
        cfg.final_act = FinalActivation::Relu;
        cfg.n_epochs = 0;
        cfg.dropout_p_hidden = 1.0;
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].contains("softmax"));

        let mut cfg = TrainConfig::default();
        cfg.layers = vec![8];
        cfg.embedding = 4;
        assert!(cfg.validate().is_err());
        cfg.embedding = 8;
        assert!(cfg.validate().is_ok());
    }
}
