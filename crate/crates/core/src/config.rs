//! Flat `key = value` run configuration. Every key has a default; an
//! unknown key is a hard error so typos cannot silently fall back.

use crate::corpus::BowFilterMode;
use crate::error::{Error, Result};
use std::fmt;
use std::path::{Path, PathBuf};

/// Deterministic or variational autoencoding path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ModelMode {
    #[default]
    Dae,
    Vae,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Dae => "dae",
            ModelMode::Vae => "vae",
        }
    }
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(ModelMode::Dae),
            "vae" => Ok(ModelMode::Vae),
            other => Err(Error::Config(format!("mode must be dae or vae, got `{other}`"))),
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Word-embedding initialization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EmbedInit {
    #[default]
    Random,
    Word2vec,
}

impl std::str::FromStr for EmbedInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(EmbedInit::Random),
            "word2vec" => Ok(EmbedInit::Word2vec),
            other => Err(Error::Config(format!(
                "embed_init must be random or word2vec, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for EmbedInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedInit::Random => "random",
            EmbedInit::Word2vec => "word2vec",
        })
    }
}

/// All run settings. Defaults follow the reference hyperparameters; size
/// defaults are recurrent 256, style 8, content 128.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub mode: ModelMode,
    pub bow_mode: BowFilterMode,
    pub seed: u64,

    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub stopwords_path: Option<PathBuf>,
    pub pos_lexicon_path: Option<PathBuf>,
    pub neg_lexicon_path: Option<PathBuf>,
    pub min_count: usize,
    pub max_len: usize,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub style_dim: usize,
    pub content_dim: usize,

    pub lambda_mul_s: f64,
    pub lambda_adv_s: f64,
    pub lambda_mul_c: f64,
    pub lambda_adv_c: f64,
    pub lambda_kl_s: f64,
    pub lambda_kl_c: f64,
    pub anneal_k: f64,
    pub anneal_t0: f64,

    pub lr_model: f64,
    pub lr_dis: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    pub dis_steps: usize,
    pub embed_init: EmbedInit,
    pub word2vec_epochs: usize,
    pub checkpoint_every: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            mode: ModelMode::Dae,
            bow_mode: BowFilterMode::NoStopwordsNoSentiment,
            seed: 42,
            train_path: None,
            val_path: None,
            stopwords_path: None,
            pos_lexicon_path: None,
            neg_lexicon_path: None,
            min_count: 1,
            max_len: 20,
            embed_dim: 128,
            hidden_dim: 256,
            style_dim: 8,
            content_dim: 128,
            lambda_mul_s: 10.0,
            lambda_adv_s: 1.0,
            lambda_mul_c: 3.0,
            lambda_adv_c: 0.03,
            lambda_kl_s: 0.03,
            lambda_kl_c: 0.03,
            anneal_k: 0.0025,
            anneal_t0: 2500.0,
            lr_model: 1e-3,
            lr_dis: 1e-3,
            batch_size: 32,
            epochs: 20,
            grad_clip: 5.0,
            dis_steps: 1,
            embed_init: EmbedInit::Random,
            word2vec_epochs: 5,
            checkpoint_every: 1,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// ignored. Unknown keys and malformed values are errors.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
        }
        let opt_path = |value: &str| -> Option<PathBuf> {
            if value.is_empty() {
                None
            } else {
                Some(PathBuf::from(value))
            }
        };
        match key {
            "mode" => self.mode = value.parse()?,
            "bow_mode" => self.bow_mode = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "train_path" => self.train_path = opt_path(value),
            "val_path" => self.val_path = opt_path(value),
            "stopwords_path" => self.stopwords_path = opt_path(value),
            "pos_lexicon_path" => self.pos_lexicon_path = opt_path(value),
            "neg_lexicon_path" => self.neg_lexicon_path = opt_path(value),
            "min_count" => self.min_count = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "style_dim" => self.style_dim = num(key, value)?,
            "content_dim" => self.content_dim = num(key, value)?,
            "lambda_mul_s" => self.lambda_mul_s = num(key, value)?,
            "lambda_adv_s" => self.lambda_adv_s = num(key, value)?,
            "lambda_mul_c" => self.lambda_mul_c = num(key, value)?,
            "lambda_adv_c" => self.lambda_adv_c = num(key, value)?,
            "lambda_kl_s" => self.lambda_kl_s = num(key, value)?,
            "lambda_kl_c" => self.lambda_kl_c = num(key, value)?,
            "anneal_k" => self.anneal_k = num(key, value)?,
            "anneal_t0" => self.anneal_t0 = num(key, value)?,
            "lr_model" => self.lr_model = num(key, value)?,
            "lr_dis" => self.lr_dis = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "dis_steps" => self.dis_steps = num(key, value)?,
            "embed_init" => self.embed_init = value.parse()?,
            "word2vec_epochs" => self.word2vec_epochs = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_mul_s", self.lambda_mul_s),
            ("lambda_adv_s", self.lambda_adv_s),
            ("lambda_mul_c", self.lambda_mul_c),
            ("lambda_adv_c", self.lambda_adv_c),
            ("lambda_kl_s", self.lambda_kl_s),
            ("lambda_kl_c", self.lambda_kl_c),
        ];
        for (name, v) in nonneg {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if self.anneal_k <= 0.0 {
            return Err(Error::Config("anneal_k must be > 0".into()));
        }
        if self.batch_size == 0 || self.max_len < 2 || self.min_count == 0 {
            return Err(Error::Config("batch_size/min_count >= 1 and max_len >= 2 required".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.style_dim == 0 || self.content_dim == 0 {
            return Err(Error::Config("all dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("mode", self.mode.to_string());
        kv("bow_mode", self.bow_mode.to_string());
        kv("seed", self.seed.to_string());
        kv("train_path", p(&self.train_path));
        kv("val_path", p(&self.val_path));
        kv("stopwords_path", p(&self.stopwords_path));
        kv("pos_lexicon_path", p(&self.pos_lexicon_path));
        kv("neg_lexicon_path", p(&self.neg_lexicon_path));
        kv("min_count", self.min_count.to_string());
        kv("max_len", self.max_len.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("style_dim", self.style_dim.to_string());
        kv("content_dim", self.content_dim.to_string());
        kv("lambda_mul_s", fmt_f64(self.lambda_mul_s));
        kv("lambda_adv_s", fmt_f64(self.lambda_adv_s));
        kv("lambda_mul_c", fmt_f64(self.lambda_mul_c));
        kv("lambda_adv_c", fmt_f64(self.lambda_adv_c));
        kv("lambda_kl_s", fmt_f64(self.lambda_kl_s));
        kv("lambda_kl_c", fmt_f64(self.lambda_kl_c));
        kv("anneal_k", fmt_f64(self.anneal_k));
        kv("anneal_t0", fmt_f64(self.anneal_t0));
        kv("lr_model", fmt_f64(self.lr_model));
        kv("lr_dis", fmt_f64(self.lr_dis));
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("grad_clip", fmt_f64(self.grad_clip));
        kv("dis_steps", self.dis_steps.to_string());
        kv("embed_init", self.embed_init.to_string());
        kv("word2vec_epochs", self.word2vec_epochs.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

/// Round-trippable float rendering for config and checkpoint manifests.
pub(crate) fn fmt_f64(v: f64) -> String {
    // {:?} prints enough digits to reconstruct the exact f64
    format!("{v:?}")
}
