//! Run configuration files.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line     := blank | comment | section | pair
//! comment  := '#' any*
//! section  := '[' name ']'
//! pair     := key '=' value [comment]
//! key      := name ('.' name)*
//! value    := quoted | bare
//! ```
//!
//! A key inside `[section]` is read as `section.key`; a dotted key outside
//! any section names its section directly. Quoted values keep `#`; bare values
//! end at the first `#` and are trimmed. Lists are comma-separated. The word
//! `none` clears an optional setting. Unknown keys and repeated keys are
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rdnn_core::env::{EnvConfig, UtilityKind};
use rdnn_core::market_data::{ColumnSchema, IndicatorConfig, MacdPeriods};
use rdnn_core::policy::{HeadMode, PolicyConfig, WeightActivation};
use rdnn_core::selection::{BasketMode, MaskTrainConfig, SelectionConfig};
use rdnn_core::training::{Optimizer, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Raw `key → value` pairs with fully dotted keys.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let syntax = |message: &str| ConfigError::Syntax {
            path: origin.to_string(),
            line: line_no,
            message: message.to_string(),
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .split('#')
                .next()
                .unwrap_or("")
                .trim()
                .strip_suffix(']')
                .ok_or_else(|| syntax("unterminated section header"))?
                .trim();
            if !valid_key(name) {
                return Err(syntax("invalid section name"));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
        let key = key.trim();
        if !valid_key(key) {
            return Err(syntax(&format!("invalid key {key:?}")));
        }
        let value = value.trim();
        let value = if let Some(rest) = value.strip_prefix('"') {
            let end = rest.find('"').ok_or_else(|| syntax("unterminated string"))?;
            let tail = rest[end + 1..].trim();
            if !(tail.is_empty() || tail.starts_with('#')) {
                return Err(syntax("text after closing quote"));
            }
            rest[..end].to_string()
        } else {
            value.split('#').next().unwrap_or("").trim().to_string()
        };
        let full = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if out.insert(full.clone(), value).is_some() {
            return Err(syntax(&format!("{full} set twice")));
        }
    }
    Ok(out)
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub prices: PathBuf,
    pub schema: ColumnSchema,
    pub output_dir: PathBuf,
    /// Keep only the first N tickers (in ticker order); `None` keeps all.
    pub pool: Option<usize>,
    pub indicators: IndicatorConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub train_from: Option<NaiveDate>,
    pub train_to: Option<NaiveDate>,
    pub test_from: Option<NaiveDate>,
    pub test_to: Option<NaiveDate>,
    pub baseline: Option<String>,
    pub selection: Option<SelectionConfig>,
    pub mask_search: MaskTrainConfig,
    /// Backtest reports to combine; empty means this run's own report.
    pub report_inputs: Vec<PathBuf>,
}

/// Per-component seeds derived from the root seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = root.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Pairs {
    map: BTreeMap<String, String>,
}

impl Pairs {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                key: key.into(),
                message: format!("{v:?}: {e}"),
            }),
        }
    }

    /// `Some(None)` when the value is `none`.
    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Option<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(Some(None)),
            Some(v) => v.parse::<T>().map(|x| Some(Some(x))).map_err(|e| ConfigError::Value {
                key: key.into(),
                message: format!("{v:?}: {e}"),
            }),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.trim().is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|e| ConfigError::Value {
                        key: key.into(),
                        message: format!("{p:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn date(&mut self, key: &str) -> Result<Option<NaiveDate>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => NaiveDate::parse_from_str(&v, "%Y-%m-%d").map(Some).map_err(|e| ConfigError::Value {
                key: key.into(),
                message: format!("{v:?}: {e}"),
            }),
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => options
                .iter()
                .find(|(name, _)| name.eq_ignore_ascii_case(&v))
                .map(|(_, t)| Some(*t))
                .ok_or_else(|| ConfigError::Value {
                    key: key.into(),
                    message: format!(
                        "{v:?} is not one of {}",
                        options.iter().map(|o| o.0).collect::<Vec<_>>().join(", ")
                    ),
                }),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Relative paths in the file are resolved against `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut p = Pairs {
            map: parse_pairs(text, origin)?,
        };
        let seed = p.parse::<u64>("seed")?.unwrap_or(0);
        let prices = p
            .take("data.prices")
            .map(|v| base.join(v))
            .ok_or_else(|| ConfigError::Invalid("data.prices is required".into()))?;
        let mut schema = ColumnSchema::default();
        for (key, field) in [
            ("data.date_column", &mut schema.date),
            ("data.ticker_column", &mut schema.ticker),
            ("data.open_column", &mut schema.open),
            ("data.high_column", &mut schema.high),
            ("data.low_column", &mut schema.low),
            ("data.close_column", &mut schema.close),
            ("data.volume_column", &mut schema.volume),
        ] {
            set(field, p.take(key));
        }
        let output_dir = base.join(p.take("output.dir").unwrap_or_else(|| "out".into()));
        let pool = p.optional::<usize>("data.pool")?.flatten();

        let mut indicators = IndicatorConfig::default();
        set(&mut indicators.ema_periods, p.list("features.ema_periods")?);
        set(&mut indicators.rsi_period, p.optional("features.rsi_period")?);
        match p.take("features.macd") {
            None => {}
            Some(v) if v.eq_ignore_ascii_case("none") => indicators.macd = None,
            Some(v) => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ConfigError::Value {
                        key: "features.macd".into(),
                        message: format!("{v:?}: {e}"),
                    })?;
                let [fast, slow, signal] = parts[..] else {
                    return Err(ConfigError::Value {
                        key: "features.macd".into(),
                        message: "expected fast, slow, signal".into(),
                    });
                };
                indicators.macd = Some(MacdPeriods { fast, slow, signal });
            }
        }
        set(&mut indicators.normalization_window, p.parse("features.normalization_window")?);

        let mut env = EnvConfig::new(0);
        set(&mut env.initial_wealth, p.parse("env.initial_wealth")?);
        set(&mut env.commission_rate, p.parse("env.commission_rate")?);
        set(&mut env.risk_free_rate, p.parse("env.risk_free_rate")?);

        let mut policy = PolicyConfig {
            seed: derive_seed(seed, 1),
            ..PolicyConfig::default()
        };
        set(
            &mut policy.mode,
            p.choice("policy.mode", &[("weights", HeadMode::WeightHead), ("shares", HeadMode::ShareHead)])?,
        );
        set(
            &mut policy.weight_activation,
            p.choice(
                "policy.activation",
                &[("sigmoid", WeightActivation::SigmoidNormalized), ("softmax", WeightActivation::Softmax)],
            )?,
        );
        set(&mut policy.dropout_rate, p.parse("policy.dropout")?);
        set(&mut policy.hidden_sizes, p.list("policy.hidden")?);
        set(&mut policy.max_shares, p.parse("policy.max_shares")?);

        let mut train = TrainConfig {
            seed: derive_seed(seed, 2),
            ..TrainConfig::default()
        };
        set(&mut train.learning_rate, p.parse("train.learning_rate")?);
        set(&mut train.batch_size, p.parse("train.batch_size")?);
        set(&mut train.epochs, p.parse("train.epochs")?);
        set(&mut train.truncation_depth, p.parse("train.truncation_depth")?);
        set(&mut train.episode_length, p.parse("train.episode_length")?);
        set(&mut train.gradient_clip, p.optional("train.gradient_clip")?);
        set(
            &mut train.utility,
            p.choice(
                "train.utility",
                &[("log", UtilityKind::CumulativeLogReturn), ("sharpe", UtilityKind::SharpeRatio)],
            )?,
        );
        set(
            &mut train.optimizer,
            p.choice("train.optimizer", &[("sgd", Optimizer::Sgd), ("adam", Optimizer::adam())])?,
        );
        let train_from = p.date("train.from")?;
        let train_to = p.date("train.to")?;
        let test_from = p.date("test.from")?;
        let test_to = p.date("test.to")?;
        let baseline = p.take("test.baseline");

        let enabled = p.parse::<bool>("selection.enabled")?.unwrap_or(false);
        let mut sel = SelectionConfig {
            seed: derive_seed(seed, 3),
            ..SelectionConfig::default()
        };
        set(&mut sel.basket_size, p.parse("selection.basket_size")?);
        set(
            &mut sel.mode,
            p.choice("selection.mode", &[("free", BasketMode::Free), ("turnover", BasketMode::Turnover)])?,
        );
        set(&mut sel.turnover_cap, p.optional("selection.turnover_cap")?);
        set(&mut sel.hidden_size, p.parse("selection.hidden")?);
        let mut mask_search = MaskTrainConfig {
            seed: derive_seed(seed, 4),
            ..MaskTrainConfig::default()
        };
        set(&mut mask_search.rounds, p.parse("selection.rounds")?);
        set(&mut mask_search.perturbations, p.parse("selection.perturbations")?);
        set(&mut mask_search.step, p.parse("selection.step")?);

        let report_inputs = match p.take("report.inputs") {
            None => Vec::new(),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| base.join(s))
                .collect(),
        };

        if let Some(k) = p.map.keys().next() {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let cfg = RunConfig {
            seed,
            prices,
            schema,
            output_dir,
            pool,
            indicators,
            env,
            policy,
            train,
            train_from,
            train_to,
            test_from,
            test_to,
            baseline,
            selection: enabled.then_some(sel),
            mask_search,
            report_inputs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.indicators.validate().map_err(|e| invalid(e.to_string()))?;
        self.policy.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(s) = &self.selection {
            s.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if self.pool == Some(0) {
            return Err(invalid("data.pool must be positive".into()));
        }
        for (from, to, name) in [
            (self.train_from, self.train_to, "train"),
            (self.test_from, self.test_to, "test"),
        ] {
            if let (Some(a), Some(b)) = (from, to) {
                if a > b {
                    return Err(invalid(format!("{name} range ends before it starts")));
                }
            }
        }
        if let (Some(train_end), Some(test_start)) = (self.train_to, self.test_from) {
            if train_end >= test_start {
                return Err(invalid("the test range must start after the training range ends".into()));
            }
        }
        Ok(())
    }

    /// Re-seeds every component from a new root seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.policy.seed = derive_seed(seed, 1);
        self.train.seed = derive_seed(seed, 2);
        if let Some(s) = &mut self.selection {
            s.seed = derive_seed(seed, 3);
        }
        self.mask_search.seed = derive_seed(seed, 4);
    }
}
