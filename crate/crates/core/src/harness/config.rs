//! Run configuration as `key = value` lines.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::{AttentionConfig, Scoring, SelfAttentionConfig};
use crate::error::{Error, Result};
use crate::rnn::StackConfig;
use crate::vocab::Scheme;

/// What the model outputs and how hypotheses become words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Frequent words plus the OOV unit.
    Word,
    /// `$`-separated letter n-grams.
    Letters,
    /// Word head with a letter branch replacing OOVs.
    Hybrid,
    /// Mixed word/letter units or wordpieces.
    Mixed,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "word" | "word-oov" => DecodeMode::Word,
            "letters" => DecodeMode::Letters,
            "hybrid" => DecodeMode::Hybrid,
            "mixed" => DecodeMode::Mixed,
            _ => return Err(Error::Config(format!("unknown mode {s:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Word => "word",
            DecodeMode::Letters => "letters",
            DecodeMode::Hybrid => "hybrid",
            DecodeMode::Mixed => "mixed",
        }
    }

    /// Whether `scheme` can serve as this mode's main output inventory.
    pub fn accepts(self, scheme: Scheme) -> bool {
        match self {
            DecodeMode::Word | DecodeMode::Hybrid => scheme == Scheme::WordOov,
            DecodeMode::Letters => matches!(scheme, Scheme::Letters(_)),
            DecodeMode::Mixed => scheme.is_mixed() || scheme == Scheme::Wordpiece,
        }
    }
}

/// Output head placed on the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Plain,
    Attention,
    SelfAttention,
}

impl HeadKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "plain" | "vanilla" => HeadKind::Plain,
            "attention" => HeadKind::Attention,
            "self-attention" | "sa" => HeadKind::SelfAttention,
            _ => return Err(Error::Config(format!("unknown head {s:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Plain => "plain",
            HeadKind::Attention => "attention",
            HeadKind::SelfAttention => "self-attention",
        }
    }
}

/// Every knob of a run: data synthesis, topology, optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: DecodeMode,
    pub scheme: Scheme,
    pub min_count: usize,
    /// Target inventory size for wordpiece training.
    pub wordpiece_size: usize,

    pub feature_dim: usize,
    pub frames_per_token: usize,
    pub noise_std: f64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub frequent_words: usize,
    pub oov_words: usize,
    pub max_words: usize,

    pub stack: StackConfig,
    pub head: HeadKind,
    pub attention: AttentionConfig,
    pub self_attention: SelfAttentionConfig,

    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs of the letter-branch stage in hybrid mode.
    pub letter_epochs: usize,
    /// Also update the word head during the letter-branch stage.
    pub tune_word_head: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: DecodeMode::Letters,
            scheme: Scheme::Letters(1),
            min_count: crate::vocab::DEFAULT_MIN_COUNT,
            wordpiece_size: 64,
            feature_dim: 16,
            frames_per_token: 3,
            noise_std: 0.1,
            train_utterances: 300,
            test_utterances: 50,
            frequent_words: 40,
            oov_words: 8,
            max_words: 2,
            stack: StackConfig::default(),
            head: HeadKind::Plain,
            attention: AttentionConfig::default(),
            self_attention: SelfAttentionConfig::default(),
            learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: 5.0,
            batch_size: 8,
            epochs: 30,
            letter_epochs: 30,
            tune_word_head: false,
        }
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "mode" => self.mode = DecodeMode::parse(v)?,
            "scheme" => self.scheme = Scheme::parse(v)?,
            "min_count" => self.min_count = parse_num(key, v)?,
            "wordpiece_size" => self.wordpiece_size = parse_num(key, v)?,
            "feature_dim" => self.feature_dim = parse_num(key, v)?,
            "frames_per_token" => self.frames_per_token = parse_num(key, v)?,
            "noise_std" => self.noise_std = parse_num(key, v)?,
            "train_utterances" => self.train_utterances = parse_num(key, v)?,
            "test_utterances" => self.test_utterances = parse_num(key, v)?,
            "frequent_words" => self.frequent_words = parse_num(key, v)?,
            "oov_words" => self.oov_words = parse_num(key, v)?,
            "max_words" => self.max_words = parse_num(key, v)?,
            "layers" => self.stack.layers = parse_num(key, v)?,
            "cells" => self.stack.cells = parse_num(key, v)?,
            "bidirectional" => self.stack.bidirectional = parse_bool(key, v)?,
            "projection_dim" => self.stack.projection_dim = parse_num(key, v)?,
            "project_every_layer" => self.stack.project_every_layer = parse_bool(key, v)?,
            "frame_stack" => self.stack.frame_stack = parse_num(key, v)?,
            "frame_skip" => self.stack.frame_skip = parse_num(key, v)?,
            "head" => self.head = HeadKind::parse(v)?,
            "tau" => {
                self.attention.tau = parse_num(key, v)?;
                self.self_attention.tau = self.attention.tau;
            }
            "gamma" => {
                self.attention.gamma = match v {
                    "window" | "auto" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "scoring" => self.attention.scoring = Scoring::parse(v)?,
            "plm" => self.attention.plm = parse_bool(key, v)?,
            "coma" => self.attention.coma = parse_bool(key, v)?,
            "location_channels" => self.attention.location_channels = parse_num(key, v)?,
            "location_width" => self.attention.location_width = parse_num(key, v)?,
            "heads" => self.self_attention.heads = parse_num(key, v)?,
            "d_k" => self.self_attention.d_k = parse_num(key, v)?,
            "d_v" => self.self_attention.d_v = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "clip_norm" => self.clip_norm = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "letter_epochs" => self.letter_epochs = parse_num(key, v)?,
            "tune_word_head" => self.tune_word_head = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// All settings, one `key = value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("mode", self.mode.as_str().into());
        put("scheme", self.scheme.to_string());
        put("min_count", self.min_count.to_string());
        put("wordpiece_size", self.wordpiece_size.to_string());
        put("feature_dim", self.feature_dim.to_string());
        put("frames_per_token", self.frames_per_token.to_string());
        put("noise_std", format!("{:?}", self.noise_std));
        put("train_utterances", self.train_utterances.to_string());
        put("test_utterances", self.test_utterances.to_string());
        put("frequent_words", self.frequent_words.to_string());
        put("oov_words", self.oov_words.to_string());
        put("max_words", self.max_words.to_string());
        put("layers", self.stack.layers.to_string());
        put("cells", self.stack.cells.to_string());
        put("bidirectional", on_off(self.stack.bidirectional).into());
        put("projection_dim", self.stack.projection_dim.to_string());
        put("project_every_layer", on_off(self.stack.project_every_layer).into());
        put("frame_stack", self.stack.frame_stack.to_string());
        put("frame_skip", self.stack.frame_skip.to_string());
        put("head", self.head.as_str().into());
        put("tau", self.attention.tau.to_string());
        put(
            "gamma",
            match self.attention.gamma {
                None => "window".into(),
                Some(g) => format!("{g:?}"),
            },
        );
        put("scoring", self.attention.scoring.as_str().into());
        put("plm", on_off(self.attention.plm).into());
        put("coma", on_off(self.attention.coma).into());
        put("location_channels", self.attention.location_channels.to_string());
        put("location_width", self.attention.location_width.to_string());
        put("heads", self.self_attention.heads.to_string());
        put("d_k", self.self_attention.d_k.to_string());
        put("d_v", self.self_attention.d_v.to_string());
        put("learning_rate", format!("{:?}", self.learning_rate));
        put("momentum", format!("{:?}", self.momentum));
        put("clip_norm", format!("{:?}", self.clip_norm));
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("letter_epochs", self.letter_epochs.to_string());
        put("tune_word_head", on_off(self.tune_word_head).into());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        if self.head == HeadKind::Attention {
            self.attention.validate()?;
        }
        if self.head == HeadKind::SelfAttention {
            self.self_attention.validate()?;
        }
        if !self.mode.accepts(self.scheme) {
            return Err(Error::Config(format!(
                "scheme {} does not fit mode {}",
                self.scheme,
                self.mode.as_str()
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.feature_dim == 0 || self.frames_per_token == 0 || self.max_words == 0 {
            return Err(Error::Config(
                "feature_dim, frames_per_token and max_words must be positive".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.set("tau", "2").unwrap();
        cfg.set("plm", "on").unwrap();
        cfg.set("gamma", "1.5").unwrap();
        cfg.set("noise_std", "0.25").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("plm = maybe").is_err());
        assert!(RunConfig::parse("tau").is_err());
        assert!(RunConfig::parse("# comment\n\nseed = 4").is_ok());
    }

    #[test]
    fn mode_and_scheme_must_agree() {
        let mut cfg = RunConfig {
            mode: DecodeMode::Word,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.scheme = Scheme::WordOov;
        assert!(cfg.validate().is_ok());
    }
}
