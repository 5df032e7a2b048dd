use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::network::{Fusion, ModelConfig};
use crate::preprocess::PreprocessConfig;
use crate::tensor::{AdamConfig, WeightDecay};

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_value!(u64, usize, f64, bool, String);

impl ConfigValue for PathBuf {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Fusion {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cff" => Ok(Fusion::Cff),
            "plain" => Ok(Fusion::PlainSkip),
            _ => Err(format!("expected cff or plain, got {s:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            Fusion::Cff => "cff".into(),
            Fusion::PlainSkip => "plain".into(),
        }
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:expr])* $field:ident : $ty:ty = $default:expr, )*) => {
        /// Every tunable of a run. Text form is one `key = value` per line;
        /// `#` starts a comment.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one field from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = ConfigValue::parse(value)
                            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.render()) ),*]
            }
        }
    };
}

run_config! {
    data_dir: PathBuf = PathBuf::from("data"),
    out_dir: PathBuf = PathBuf::from("out"),
    seed: u64 = 0,

    outlier_threshold_px: usize = 60,
    gaussian_sigma: f64 = 1.0,
    clahe_tile_rows: usize = 8,
    clahe_tile_cols: usize = 8,
    clahe_clip: f64 = 0.01,
    output_height: usize = 512,
    output_width: usize = 512,

    fusion: Fusion = Fusion::Cff,
    n_slices: usize = 3,
    levels: usize = 3,
    base_channels: usize = 8,
    cff_bias: bool = true,
    cff_bottleneck: bool = false,
    bn_eps: f64 = 1e-5,
    bn_momentum: f64 = 0.1,

    lambda_mask_ce: f64 = 1.0,
    lambda_line_ce: f64 = 1.0,
    lambda_line_l1: f64 = 1.0,

    lr: f64 = 1e-3,
    weight_decay: f64 = 1e-3,
    /// AdamW-style decay instead of an L2 term in the gradient.
    decoupled_weight_decay: bool = false,
    batch_size: usize = 4,
    epochs: usize = 30,

    /// Split evaluated by `eval`.
    eval_split: String = "test".into(),
    overlays: bool = true,

    phantom_train: usize = 24,
    phantom_val: usize = 4,
    phantom_test: usize = 8,
    phantom_slices: usize = 16,
    phantom_height: usize = 128,
    phantom_width: usize = 128,
    phantom_speckle: f64 = 0.2,
    /// Corrupt every k-th slice (0 disables), starting at slice 1.
    corrupt_every: usize = 0,
    corrupt_severity: f64 = 0.7,
    /// Comma-separated splits whose phantoms are corrupted.
    corrupt_splits: String = "test".into(),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            cfg.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss_weights()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_severity) {
            return Err(Error::Config(format!("corrupt_severity {} outside [0,1]", self.corrupt_severity)));
        }
        if !(self.gaussian_sigma >= 0.0) || !(self.clahe_clip > 0.0) {
            return Err(Error::Config("gaussian_sigma must be ≥ 0 and clahe_clip > 0".into()));
        }
        for s in self.corrupted_splits() {
            if !["train", "val", "test"].contains(&s) {
                return Err(Error::Config(format!("corrupt_splits: unknown split {s:?}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            n_slices: self.n_slices,
            input_height: self.output_height,
            input_width: self.output_width,
            fusion: self.fusion,
            cff_bias: self.cff_bias,
            cff_bottleneck: self.cff_bottleneck,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            ..ModelConfig::default()
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            outlier_threshold_px: self.outlier_threshold_px,
            gaussian_sigma: self.gaussian_sigma,
            clahe_tiles: (self.clahe_tile_rows, self.clahe_tile_cols),
            clahe_clip: self.clahe_clip,
            output_height: self.output_height,
            output_width: self.output_width,
            debug_dir: None,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            decay_mode: if self.decoupled_weight_decay {
                WeightDecay::Decoupled
            } else {
                WeightDecay::Coupled
            },
            ..AdamConfig::default()
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_mask_ce, self.lambda_line_ce, self.lambda_line_l1)
    }

    pub fn corrupted_splits(&self) -> impl Iterator<Item = &str> {
        self.corrupt_splits.split(',').map(str::trim).filter(|s| !s.is_empty())
    }

    /// Defaults sized for a quick CPU run on 128×128 phantoms: the flattened
    /// band is kept at its cropped size of 64 rows.
    pub fn desk() -> Self {
        Self {
            output_height: 64,
            output_width: 128,
            ..Self::default()
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.batch_size, c.weight_decay), (1e-3, 4, 1e-3));
        assert_eq!((c.output_height, c.output_width), (512, 512));
        assert_eq!((c.levels, c.base_channels, c.epochs, c.n_slices), (3, 8, 30, 3));
        c.validate().unwrap();
    }

    #[test]
    fn parse_with_comments_and_round_trip() {
        let c = RunConfig::parse("# run\nseed = 7\nfusion = plain # baseline\n\nlr=0.01\n").unwrap();
        assert_eq!((c.seed, c.fusion, c.lr), (7, Fusion::PlainSkip, 0.01));
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
        assert_eq!(c.to_string().lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "sead = 1",
            "seed = x",
            "seed 1",
            "seed = 1\nseed = 2",
            "fusion = attention",
            "n_slices = 4",
            "batch_size = 0",
            "lambda_mask_ce = 0\nlambda_line_ce = 0\nlambda_line_l1 = 0",
            "corrupt_splits = train,dev",
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
        }
    }
}
