//! One `--key value` flag per sensor config key.

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use evsim::config::CONFIG_KEYS;
use evsim::{Error, SensorConfig};

#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    values: Vec<(&'static str, String)>,
}

impl ConfigOverrides {
    /// Apply the flags on top of `cfg`; flags win over file values.
    pub fn apply(&self, mut cfg: SensorConfig) -> evsim::Result<SensorConfig> {
        for (key, value) in &self.values {
            cfg.set(key, value).map_err(|message| Error::Parse { line: 0, message: format!("--{key}: {message}") })?;
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Option<u64> {
        self.values
            .iter()
            .find(|(k, _)| *k == "seed")
            .and_then(|(_, v)| v.parse().ok())
    }
}

impl FromArgMatches for ConfigOverrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Self::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        for (key, _) in CONFIG_KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.values.retain(|(k, _)| k != key);
                self.values.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigOverrides {
    fn augment_args(cmd: Command) -> Command {
        CONFIG_KEYS.iter().fold(cmd, |cmd, (key, help)| {
            cmd.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .help(*help)
                    .allow_hyphen_values(true)
                    .help_heading("Sensor config (override file values)"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
