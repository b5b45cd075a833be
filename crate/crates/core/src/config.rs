//! Run configuration: a line-oriented `key = value` text file.
//!
//! ```text
//! # comments start with '#'
//! codebook.k = 64
//! svm.c = 1.0
//! crf.mode = map
//! ```
//!
//! Every key has a default; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::crf::{DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::features::KMeansOptions;
use crate::svm::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub codebook_k: usize,
    /// Most descriptors sampled from one image for codebook training.
    pub codebook_samples_per_image: usize,
    pub codebook_max_iter: usize,
    pub codebook_tol: f64,
    pub train: TrainConfig,
    pub crf_enabled: bool,
    pub crf_alpha: f64,
    pub decode: DecodeConfig,
    pub train_fraction: f64,
    pub sign_threshold: f64,
    pub trend_year1: i32,
    pub trend_year2: i32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            codebook_k: 64,
            codebook_samples_per_image: 200,
            codebook_max_iter: KMeansOptions::default().max_iter,
            codebook_tol: KMeansOptions::default().tol,
            train: TrainConfig::default(),
            crf_enabled: true,
            crf_alpha: 1.0,
            decode: DecodeConfig::default(),
            train_fraction: crate::eval::DEFAULT_TRAIN_FRACTION,
            sign_threshold: crate::trend::DEFAULT_SIGN_THRESHOLD,
            trend_year1: 2014,
            trend_year2: 2015,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidParameter(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl Config {
    pub const KEYS: [&'static str; 20] = [
        "codebook.k",
        "codebook.samples_per_image",
        "codebook.max_iter",
        "codebook.tol",
        "svm.c",
        "svm.tol",
        "svm.folds",
        "svm.max_iter",
        "svm.balance_classes",
        "svm.gamma_pairs",
        "crf.enabled",
        "crf.alpha",
        "crf.mode",
        "crf.scale",
        "crf.damping",
        "crf.max_iters",
        "crf.tol",
        "eval.train_fraction",
        "trend.sign_threshold",
        "trend.years",
    ];

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "codebook.k" => self.codebook_k = parse_value(key, value)?,
            "codebook.samples_per_image" => self.codebook_samples_per_image = parse_value(key, value)?,
            "codebook.max_iter" => self.codebook_max_iter = parse_value(key, value)?,
            "codebook.tol" => self.codebook_tol = parse_value(key, value)?,
            "svm.c" => self.train.c = parse_value(key, value)?,
            "svm.tol" => self.train.tol = parse_value(key, value)?,
            "svm.folds" => self.train.folds = parse_value(key, value)?,
            "svm.max_iter" => self.train.max_iter = parse_value(key, value)?,
            "svm.balance_classes" => self.train.balance_classes = parse_bool(key, value)?,
            "svm.gamma_pairs" => self.train.gamma_pairs = parse_value(key, value)?,
            "crf.enabled" => self.crf_enabled = parse_bool(key, value)?,
            "crf.alpha" => self.crf_alpha = parse_value(key, value)?,
            "crf.mode" => self.decode.mode = value.parse::<DecodeMode>()?,
            "crf.scale" => self.decode.scale = parse_value(key, value)?,
            "crf.damping" => self.decode.damping = parse_value(key, value)?,
            "crf.max_iters" => self.decode.max_iters = parse_value(key, value)?,
            "crf.tol" => self.decode.tol = parse_value(key, value)?,
            "eval.train_fraction" => self.train_fraction = parse_value(key, value)?,
            "trend.sign_threshold" => self.sign_threshold = parse_value(key, value)?,
            "trend.years" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidParameter(format!("`{key}`: expected `YEAR1,YEAR2`")))?;
                self.trend_year1 = parse_value(key, a.trim())?;
                self.trend_year2 = parse_value(key, b.trim())?;
            }
            other => return Err(Error::InvalidParameter(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Checks value ranges that the individual stages would otherwise reject
    /// late.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.codebook_k < 2 {
            return bad(format!("codebook.k must be at least 2, got {}", self.codebook_k));
        }
        if self.codebook_samples_per_image == 0 {
            return bad("codebook.samples_per_image must be positive".into());
        }
        if !(self.train.c > 0.0) || !(self.train.tol > 0.0) {
            return bad("svm.c and svm.tol must be positive".into());
        }
        if self.train.folds < 2 {
            return bad(format!("svm.folds must be at least 2, got {}", self.train.folds));
        }
        if !(self.crf_alpha > 0.0) {
            return bad(format!("crf.alpha must be positive, got {}", self.crf_alpha));
        }
        if !(0.0..1.0).contains(&self.decode.damping) {
            return bad(format!("crf.damping must lie in [0, 1), got {}", self.decode.damping));
        }
        if !(self.decode.scale >= 0.0) {
            return bad(format!("crf.scale must be non-negative, got {}", self.decode.scale));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("eval.train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.sign_threshold >= 0.0) {
            return bad(format!("trend.sign_threshold must be non-negative, got {}", self.sign_threshold));
        }
        if self.trend_year1 == self.trend_year2 {
            return bad("trend.years must name two different years".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                context: "config".into(),
                line: lineno + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iter: self.codebook_max_iter,
            tol: self.codebook_tol,
        }
    }

    /// Every key with its effective value, for run manifests.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mode = match self.decode.mode {
            DecodeMode::Map => "map",
            DecodeMode::MarginalThreshold => "marginal_threshold",
        };
        let values = [
            self.codebook_k.to_string(),
            self.codebook_samples_per_image.to_string(),
            self.codebook_max_iter.to_string(),
            self.codebook_tol.to_string(),
            self.train.c.to_string(),
            self.train.tol.to_string(),
            self.train.folds.to_string(),
            self.train.max_iter.to_string(),
            self.train.balance_classes.to_string(),
            self.train.gamma_pairs.to_string(),
            self.crf_enabled.to_string(),
            self.crf_alpha.to_string(),
            mode.to_string(),
            self.decode.scale.to_string(),
            self.decode.damping.to_string(),
            self.decode.max_iters.to_string(),
            self.decode.tol.to_string(),
            self.train_fraction.to_string(),
            self.sign_threshold.to_string(),
            format!("{},{}", self.trend_year1, self.trend_year2),
        ];
        Config::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    /// The snapshot in the file format; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.snapshot()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("# run\n\ncodebook.k = 16  # small\nsvm.c=2.5\ncrf.mode = marginal_threshold\n").unwrap();
        assert_eq!(c.codebook_k, 16);
        assert_eq!(c.train.c, 2.5);
        assert_eq!(c.decode.mode, DecodeMode::MarginalThreshold);
        assert_eq!(c.train.folds, 3);
        assert_eq!(c.decode.damping, 0.5);
        assert_eq!(c.decode.max_iters, 200);
        assert_eq!(c.decode.tol, 1e-5);
    }

    #[test]
    fn errors_name_the_line() {
        let e = Config::parse("svm.c = 1\nbogus = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        assert!(Config::parse("svm.c\n").is_err());
        assert!(Config::parse("svm.folds = x\n").is_err());
        assert!(Config::parse("crf.damping = 1.0\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.set("trend.years", "2013, 2016").unwrap();
        c.set("crf.scale", "0.25").unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.snapshot().len(), Config::KEYS.len());
    }
}
