//! Run configuration: optional TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use xfaith::aggregate::{InfuseParams, InfuseStop, Strategy, StrategyConfig};
use xfaith::Error;

pub const ENDPOINT_ENV: &str = "XFAITH_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Mock,
    /// Cache file only; a miss is an error.
    Cache,
    Remote,
}

/// Every field is optional so that a config file and flags can be layered.
#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// TOML file with defaults for any of these options
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Scoring service base URL (default: $XFAITH_ENDPOINT)
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Score cache file; required by --scorer cache, optional otherwise
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,

    /// fulldoc, summac_zs, sentli, infuse, one_to_one, a comma list, or "all"
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// SeNtLI top-k
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub min_premise: Option<usize>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// neutral_decrease or neutral_increase
    #[arg(long, global = true)]
    pub infuse_stop: Option<String>,

    /// Percent of lowest-scoring sentences labelled unfaithful
    #[arg(long, global = true)]
    pub pct: Option<f64>,
    /// Fraction of examples kept by Test_Faith selection
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    /// Unlikelihood weight
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// default or whitespace
    #[arg(long, global = true)]
    pub tokenizer: Option<String>,
    /// Worker threads for per-example work
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Pairs per request to the scoring service
    #[arg(long, global = true)]
    pub max_batch: Option<usize>,
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    /// Accept language codes outside the built-in set
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub any_lang: Option<bool>,

    #[arg(long = "in", global = true)]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    /// Values set in `flags` win.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        overlay!(
            self, flags, scorer, endpoint, seed, cache, strategy, k, min_premise, eps, infuse_stop, pct,
            fraction, alpha, tokenizer, jobs, max_batch, timeout_secs, any_lang, input, out
        );
        self
    }
}

/// Fully resolved settings; this is what the manifest records and hashes.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub scorer: ScorerKind,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub cache: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub min_premise: usize,
    pub eps: f64,
    pub infuse_stop: InfuseStop,
    pub pct: f64,
    pub fraction: f64,
    pub alpha: f64,
    pub tokenizer: String,
    pub jobs: usize,
    pub max_batch: usize,
    pub timeout_secs: u64,
    pub any_lang: bool,
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("config field `{name}`: {msg}"))
}

pub fn parse_strategies(spec: &str) -> Result<Vec<Strategy>, Error> {
    if spec.trim() == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        let s: Strategy = part.parse().map_err(|e: Error| field("strategy", e))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(field("strategy", "empty list"));
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(flags: &RunConfig) -> Result<Self, Error> {
        let base = match &flags.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let c = base.overlay(flags);
        let endpoint = c.endpoint.or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()));
        let s = Settings {
            scorer: c.scorer.unwrap_or(ScorerKind::Mock),
            endpoint,
            seed: c.seed.unwrap_or(0),
            cache: c.cache,
            strategies: parse_strategies(c.strategy.as_deref().unwrap_or("infuse"))?,
            k: c.k.unwrap_or(5),
            min_premise: c.min_premise.unwrap_or(5),
            eps: c.eps.unwrap_or(0.0),
            infuse_stop: c
                .infuse_stop
                .as_deref()
                .unwrap_or("neutral_decrease")
                .parse()
                .map_err(|e: Error| field("infuse_stop", e))?,
            pct: c.pct.unwrap_or(10.0),
            fraction: c.fraction.unwrap_or(0.1),
            alpha: c.alpha.unwrap_or(1.0),
            tokenizer: c.tokenizer.unwrap_or_else(|| "default".into()),
            jobs: c.jobs.unwrap_or(1),
            max_batch: c.max_batch.unwrap_or(32),
            timeout_secs: c.timeout_secs.unwrap_or(60),
            any_lang: c.any_lang.unwrap_or(false),
            input: c.input,
            out: c.out,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), Error> {
        if self.k == 0 {
            return Err(field("k", "must be at least 1"));
        }
        if self.min_premise == 0 {
            return Err(field("min_premise", "must be at least 1"));
        }
        if !self.eps.is_finite() {
            return Err(field("eps", "must be finite"));
        }
        if !(0.0..=100.0).contains(&self.pct) {
            return Err(field("pct", format!("{} outside [0, 100]", self.pct)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(field("fraction", format!("{} outside (0, 1]", self.fraction)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(field("alpha", format!("{} must be finite and non-negative", self.alpha)));
        }
        if self.jobs == 0 {
            return Err(field("jobs", "must be at least 1"));
        }
        if self.max_batch == 0 {
            return Err(field("max_batch", "must be at least 1"));
        }
        xfaith::textmetrics::tokenizer_by_name(&self.tokenizer).map_err(|e| field("tokenizer", e))?;
        match self.scorer {
            ScorerKind::Remote if self.endpoint.is_none() => {
                Err(field("endpoint", format!("required by the remote scorer (flag or ${ENDPOINT_ENV})")))
            }
            ScorerKind::Cache if self.cache.is_none() => Err(field("cache", "required by the cache scorer")),
            _ => Ok(()),
        }
    }

    pub fn strategy_config(&self, strategy: Strategy) -> StrategyConfig {
        StrategyConfig {
            strategy,
            k: self.k,
            infuse: InfuseParams {
                min_premise: self.min_premise,
                eps: self.eps,
                stop: self.infuse_stop,
            },
        }
    }

    pub fn single_strategy(&self) -> Result<Strategy, Error> {
        match self.strategies.as_slice() {
            [s] => Ok(*s),
            _ => Err(field("strategy", "this command needs exactly one strategy")),
        }
    }

    pub fn input(&self) -> Result<&Path, Error> {
        self.input.as_deref().ok_or_else(|| field("in", "an input path is required"))
    }

    pub fn out(&self) -> Result<&Path, Error> {
        self.out.as_deref().ok_or_else(|| field("out", "an output path is required"))
    }
}
