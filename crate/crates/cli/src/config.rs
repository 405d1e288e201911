//! Run configuration: built-in defaults, overridden in turn by a key-value
//! file, `CRISP_*` environment variables and command-line flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use crisp_core::cluster::TreeConfig;
use crisp_core::corpus::WindowConfig;
use crisp_core::embed::LsiConfig;
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const ENV_PREFIX: &str = "CRISP_";

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $name:ident: $ty:ty = $default:expr,)*) => {
        /// Every tunable of a pipeline run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value)?,)*
                    _ => return Err(UsageError(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.to_string()),)*]
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    window_size: usize = 1024,
    min_window_tokens: usize = 32,
    /// Hashing-tokenizer vocabulary.
    vocab_size: u32 = crisp_core::corpus::DEFAULT_VOCAB_SIZE,
    lsi_dim: usize = 256,
    lsi_fit_rows: usize = crisp_core::embed::DEFAULT_FIT_ROWS,
    arity: u32 = 64,
    depth: u32 = 4,
    steps: usize = 20,
    samples_per_step: usize = 6400,
    limit: f64 = 0.022,
    /// Tree level whose clusters drive selection.
    level: u32 = 3,
    smoothing: bool = false,
    l2_strength: f64 = 0.0,
    quantile: f64 = 0.975,
    sample_count: u64 = 100_000,
    shards: u64 = 1,
    total_steps: u64 = 1024,
    generic_steps: u64 = 928,
    batch_size: usize = 16,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| UsageError(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UsageError(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| UsageError(format!("{}:{}: {}", path.display(), i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), UsageError> {
        for key in Self::KEYS {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Some(value) = lookup(&var) {
                self.set(key, &value)
                    .map_err(|e| UsageError(format!("{var}: {}", e.0)))?;
            }
        }
        Ok(())
    }

    pub fn resolve(
        file: Option<&Path>,
        lookup: impl Fn(&str) -> Option<String>,
        flags: &ConfigFlags,
    ) -> Result<Self, UsageError> {
        let mut config = Self::default();
        if let Some(path) = file {
            config.apply_file(path)?;
        }
        config.apply_env(lookup)?;
        for (key, value) in &flags.0 {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let check = |r: crisp_core::Result<()>| r.map_err(|e| UsageError(e.to_string()));
        check(self.window_config().validate())?;
        if self.limit * f64::from(self.arity) < 1.0 {
            return Err(UsageError(format!(
                "limit {} is below 1/arity for arity {}; set --limit (1.5/arity = {} works at any arity)",
                self.limit,
                self.arity,
                1.5 / f64::from(self.arity)
            )));
        }
        check(self.tree_config().validate())?;
        if self.level == 0 || self.level > self.depth {
            return Err(UsageError(format!(
                "level {} must lie in 1..={}",
                self.level, self.depth
            )));
        }
        if self.vocab_size == 0 || self.lsi_dim == 0 || self.shards == 0 || self.batch_size == 0 {
            return Err(UsageError(
                "vocab_size, lsi_dim, shards and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.quantile) {
            return Err(UsageError(format!("quantile {} outside [0, 1)", self.quantile)));
        }
        if self.generic_steps > self.total_steps {
            return Err(UsageError(format!(
                "generic_steps {} exceeds total_steps {}",
                self.generic_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Canonical `key=value` lines, the input to [`RunConfig::hash`].
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window_size: self.window_size,
            min_window_tokens: self.min_window_tokens,
        }
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            depth: self.depth,
            arity: self.arity,
            steps: self.steps,
            samples_per_step: self.samples_per_step,
            limit: self.limit,
            seed: self.seed,
        }
    }

    pub fn lsi_config(&self) -> LsiConfig {
        LsiConfig {
            dim: self.lsi_dim,
            max_fit_rows: self.lsi_fit_rows,
            seed: self.seed,
            ..LsiConfig::default()
        }
    }
}

/// One `--kebab-case` flag per config key, collected as raw overrides.
#[derive(Debug, Clone, Default)]
pub struct ConfigFlags(pub Vec<(String, String)>);

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = Vec::new();
        for key in RunConfig::KEYS {
            if let Some(v) = matches.get_one::<String>(key) {
                flags.push((key.to_string(), v.clone()));
            }
        }
        Ok(Self(flags))
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(matches)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        let defaults = RunConfig::default().entries();
        RunConfig::KEYS.iter().zip(defaults).fold(cmd, |cmd, (key, (_, default))| {
            cmd.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .global(true)
                    .help_heading("Run configuration")
                    .help(format!(
                        "[default: {default}] [env: {ENV_PREFIX}{}]",
                        key.to_uppercase()
                    )),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
