//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; omitted keys keep their defaults. Unknown keys are rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forecaster::ModelConfig;
use crate::thresholds::{default_z_grid, PotConfig, ThresholdMethod};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSettings {
    pub method: ThresholdMethod,
    pub pot: PotConfig,
    pub z_grid: Vec<f64>,
    /// Trailing moving-average length applied to scores (1 = off).
    pub smoothing: usize,
}

impl Default for ThresholdSettings {
    fn default() -> Self {
        Self {
            method: ThresholdMethod::Grid,
            pot: PotConfig::default(),
            z_grid: default_z_grid(),
            smoothing: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub threshold: ThresholdSettings,
    pub global_minmax: bool,
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, ()> {
    v.split(',').map(|s| s.trim().parse().map_err(|_| ())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "window",
        "conv_kernel",
        "tcn_kernel",
        "tcn_channels",
        "dilations",
        "convs_per_block",
        "mlp_hidden_layers",
        "mlp_units",
        "dropout",
        "attention_activation",
        "attention_mode",
        "temporal_attention",
        "variable_attention",
        "batch_size",
        "epochs",
        "learning_rate",
        "seed",
        "shuffle",
        "val_fraction",
        "threshold_method",
        "pot_q",
        "pot_init_quantile",
        "pot_min_exceedances",
        "epsilon_z",
        "score_smoothing",
        "global_minmax",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(Error::Config {
                    line,
                    msg: format!("expected key = value, got {body:?}"),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|msg| Error::Config { line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Sets one key; the error string names the problem.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        let m = &mut self.model;
        let t = &mut self.train;
        let th = &mut self.threshold;
        match key {
            "window" => m.window = p(key, value)?,
            "conv_kernel" => m.conv_kernel = p(key, value)?,
            "tcn_kernel" => m.tcn_kernel = p(key, value)?,
            "tcn_channels" => m.tcn_channels = p(key, value)?,
            "dilations" => m.dilations = parse_list(value).map_err(|_| format!("invalid dilation list {value:?}"))?,
            "convs_per_block" => m.convs_per_block = p(key, value)?,
            "mlp_hidden_layers" => m.mlp_hidden_layers = p(key, value)?,
            "mlp_units" => m.mlp_units = p(key, value)?,
            "dropout" => m.dropout = p(key, value)?,
            "attention_activation" => m.attention_activation = value.parse().map_err(|e: Error| e.to_string())?,
            "attention_mode" => m.attention_mode = value.parse().map_err(|e: Error| e.to_string())?,
            "temporal_attention" => m.temporal_attention = p(key, value)?,
            "variable_attention" => m.variable_attention = p(key, value)?,
            "batch_size" => t.batch_size = p(key, value)?,
            "epochs" => t.epochs = p(key, value)?,
            "learning_rate" => t.learning_rate = p(key, value)?,
            "seed" => t.seed = p(key, value)?,
            "shuffle" => t.shuffle = p(key, value)?,
            "val_fraction" => t.val_fraction = p(key, value)?,
            "threshold_method" => th.method = value.parse().map_err(|e: Error| e.to_string())?,
            "pot_q" => th.pot.q = p(key, value)?,
            "pot_init_quantile" => th.pot.init_quantile = p(key, value)?,
            "pot_min_exceedances" => th.pot.min_exceedances = p(key, value)?,
            "epsilon_z" => th.z_grid = parse_list(value).map_err(|_| format!("invalid z list {value:?}"))?,
            "score_smoothing" => th.smoothing = p(key, value)?,
            "global_minmax" => self.global_minmax = p(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let th = &self.threshold;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("window", m.window.to_string());
        kv("conv_kernel", m.conv_kernel.to_string());
        kv("tcn_kernel", m.tcn_kernel.to_string());
        kv("tcn_channels", m.tcn_channels.to_string());
        kv("dilations", join(&m.dilations));
        kv("convs_per_block", m.convs_per_block.to_string());
        kv("mlp_hidden_layers", m.mlp_hidden_layers.to_string());
        kv("mlp_units", m.mlp_units.to_string());
        kv("dropout", format!("{:?}", m.dropout));
        kv("attention_activation", m.attention_activation.as_str().into());
        kv("attention_mode", m.attention_mode.as_str().into());
        kv("temporal_attention", m.temporal_attention.to_string());
        kv("variable_attention", m.variable_attention.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("seed", t.seed.to_string());
        kv("shuffle", t.shuffle.to_string());
        kv("val_fraction", format!("{:?}", t.val_fraction));
        kv("threshold_method", th.method.as_str().into());
        kv("pot_q", format!("{:?}", th.pot.q));
        kv("pot_init_quantile", format!("{:?}", th.pot.init_quantile));
        kv("pot_min_exceedances", th.pot.min_exceedances.to_string());
        kv("epsilon_z", th.z_grid.iter().map(|z| format!("{z:?}")).collect::<Vec<_>>().join(","));
        kv("score_smoothing", th.smoothing.to_string());
        kv("global_minmax", self.global_minmax.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionMode;

    #[test]
    fn defaults_match_reported_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.model.window, 100);
        assert_eq!(c.model.conv_kernel, 7);
        assert_eq!(c.model.tcn_kernel, 4);
        assert_eq!(c.model.tcn_channels, 32);
        assert_eq!(c.model.dilations, vec![1, 2, 4]);
        assert_eq!((c.model.mlp_hidden_layers, c.model.mlp_units), (2, 32));
        assert_eq!(c.model.dropout, 0.1);
        assert_eq!((c.train.batch_size, c.train.epochs, c.train.learning_rate), (256, 100, 1e-3));
    }

    #[test]
    fn round_trip_covers_every_key() {
        let mut c = RunConfig::default();
        c.model.attention_mode = AttentionMode::Static;
        c.model.dilations = vec![1, 3];
        c.train.learning_rate = 3e-4;
        c.threshold.pot.q = 1e-4;
        c.global_minmax = true;
        let text = c.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        for k in RunConfig::KEYS {
            assert!(text.contains(&format!("{k} =")), "{k}");
        }
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::parse("# tiny\n\nwindow = 20\nepochs=3\n").unwrap();
        assert_eq!((c.model.window, c.train.epochs), (20, 3));
        assert!(matches!(RunConfig::parse("window = 20\nwindo = 3"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(RunConfig::parse("window 20"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("dropout = lots"), Err(Error::Config { line: 1, .. })));
        assert!(RunConfig::parse("window = 0").is_err());
    }
}
