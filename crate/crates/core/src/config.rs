//! Line-oriented `key = value` configuration.
//!
//! Entries are separated by newlines or `;`, `#` starts a comment, lists are
//! comma separated. Every key must be consumed by some config section;
//! leftovers are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub struct KvReader {
    entries: BTreeMap<String, String>,
}

impl KvReader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for raw in text.split(['\n', ';']) {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("empty key in `{line}`")));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KvReader { entries })
    }

    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("bad value for `{key}`: `{v}` ({e})"))),
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|e| {
                        Error::Config(format!("bad list item for `{key}`: `{item}` ({e})"))
                    })
                })
                .collect(),
        }
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.entries.into_keys().collect();
            Err(Error::Config(format!("unknown key(s): {}", keys.join(", "))))
        }
    }
}

/// Ordered `key = value` pairs for writing a config back out.
#[derive(Default)]
pub struct KvWriter {
    pairs: Vec<(String, String)>,
}

impl KvWriter {
    pub fn put(&mut self, key: &str, value: impl fmt::Display) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn put_list<T: fmt::Display>(&mut self, key: &str, values: &[T]) {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, joined.join(","));
    }

    pub fn to_lines(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Single-line form, safe to embed in a CSV cell.
    pub fn to_echo(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
        pub enum $name { $($variant),+ }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
    };
}

string_enum!(
    /// Which inputs reach the classifier.
    Modalities { Both => "both", CtOnly => "ct", EhrOnly => "ehr" }
);
string_enum!(
    /// How a fusion stage mixes its two inputs.
    FusionMode { Attention => "attention", Concat => "concat" }
);
string_enum!(
    Weighting { Dynamic => "dynamic", Fixed => "fixed" }
);
string_enum!(
    /// Which classification losses contribute; an absent loss hands its weight to the other.
    ClassLosses { Both => "both", BceOnly => "bce", FocalOnly => "focal" }
);

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub volume_side: usize,
    pub patch_side: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    /// 1-based encoder layers whose outputs are tapped, shallowest first.
    pub tap_indices: Vec<usize>,
    pub heads: usize,
    /// One entry per upsampling stage, coarsest first.
    pub decoder_channels: Vec<usize>,
    pub modalities: Modalities,
    pub cea: FusionMode,
    pub sma: FusionMode,
    /// 1-based positions into `tap_indices` averaged to form the SMA queries.
    pub sma_taps: Vec<usize>,
}

pub const EHR_TOKEN_COUNT: usize = 7;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            volume_side: 16,
            patch_side: 4,
            embed_dim: 48,
            encoder_layers: 8,
            tap_indices: vec![2, 4, 6, 8],
            heads: 4,
            decoder_channels: vec![8, 4],
            modalities: Modalities::Both,
            cea: FusionMode::Attention,
            sma: FusionMode::Attention,
            sma_taps: vec![4],
        }
    }
}

impl ModelConfig {
    pub fn read(r: &mut KvReader) -> Result<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            volume_side: r.take("volume_side", d.volume_side)?,
            patch_side: r.take("patch_side", d.patch_side)?,
            embed_dim: r.take("embed_dim", d.embed_dim)?,
            encoder_layers: r.take("encoder_layers", d.encoder_layers)?,
            tap_indices: r.take_list("tap_indices", d.tap_indices)?,
            heads: r.take("heads", d.heads)?,
            decoder_channels: r.take_list("decoder_channels", d.decoder_channels)?,
            modalities: r.take("modalities", d.modalities)?,
            cea: r.take("cea", d.cea)?,
            sma: r.take("sma", d.sma)?,
            sma_taps: r.take_list("sma_taps", d.sma_taps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, w: &mut KvWriter) {
        w.put("volume_side", self.volume_side);
        w.put("patch_side", self.patch_side);
        w.put("embed_dim", self.embed_dim);
        w.put("encoder_layers", self.encoder_layers);
        w.put_list("tap_indices", &self.tap_indices);
        w.put("heads", self.heads);
        w.put_list("decoder_channels", &self.decoder_channels);
        w.put("modalities", self.modalities);
        w.put("cea", self.cea);
        w.put("sma", self.sma);
        w.put_list("sma_taps", &self.sma_taps);
    }

    /// Tokens per volume: `S³ / P³`.
    pub fn token_count(&self) -> usize {
        (self.volume_side / self.patch_side).pow(3)
    }

    pub fn grid_side(&self) -> usize {
        self.volume_side / self.patch_side
    }

    /// Number of ×2 upsampling stages in the decoder, `log2(P)`.
    pub fn decoder_stages(&self) -> usize {
        self.patch_side.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_side == 0 || self.volume_side == 0 || !self.volume_side.is_multiple_of(self.patch_side) {
            return fail(format!(
                "volume_side {} must be a positive multiple of patch_side {}",
                self.volume_side, self.patch_side
            ));
        }
        if !self.patch_side.is_power_of_two() || self.patch_side < 2 {
            return fail(format!("patch_side {} must be a power of two ≥ 2", self.patch_side));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.encoder_layers == 0 {
            return fail("encoder_layers must be positive".into());
        }
        let taps = &self.tap_indices;
        let ascending = taps.windows(2).all(|w| w[0] <= w[1]);
        let strictly = taps.windows(2).all(|w| w[0] < w[1]);
        // A single-layer encoder can only tap layer 1 four times.
        let degenerate = self.encoder_layers == 1 && taps.iter().all(|&t| t == 1);
        if taps.len() != 4
            || taps[0] < 1
            || *taps.last().unwrap_or(&0) != self.encoder_layers
            || !ascending
            || !(strictly || degenerate)
        {
            return fail(format!(
                "tap_indices {taps:?} must be 4 strictly ascending layers in 1..={} ending at the last",
                self.encoder_layers
            ));
        }
        let stages = self.decoder_stages();
        if stages > 4 {
            return fail(format!("patch_side {} needs more than 4 decoder stages", self.patch_side));
        }
        if self.decoder_channels.len() != stages || self.decoder_channels.contains(&0) {
            return fail(format!(
                "decoder_channels {:?} must list {stages} positive channel counts",
                self.decoder_channels
            ));
        }
        if self.sma_taps.is_empty() || self.sma_taps.iter().any(|&t| !(1..=4).contains(&t)) {
            return fail(format!("sma_taps {:?} must be a non-empty subset of 1..=4", self.sma_taps));
        }
        Ok(())
    }
}

/// Optimiser, scheduler and loss settings for one training run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub lr_floor: f64,
    pub dice_threshold: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub weighting: Weighting,
    /// ω_Class when `weighting = fixed`; the Dice weight is `1 - fixed_class_weight`.
    pub fixed_class_weight: f64,
    pub class_losses: ClassLosses,
    pub folds: usize,
    pub seed: u64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub voxel_spacing_mm: f64,
    /// Folds trained concurrently; results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            plateau_factor: 0.1,
            plateau_patience: 10,
            plateau_min_delta: 1e-4,
            lr_floor: 1e-7,
            dice_threshold: 0.8,
            lambda: 0.1,
            gamma: 2.0,
            alpha: 0.25,
            weighting: Weighting::Dynamic,
            fixed_class_weight: 0.5,
            class_losses: ClassLosses::Both,
            folds: 5,
            seed: 0,
            window_lo: -400.0,
            window_hi: 2000.0,
            voxel_spacing_mm: 1.0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn read(r: &mut KvReader) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: r.take("epochs", d.epochs)?,
            batch_size: r.take("batch_size", d.batch_size)?,
            lr: r.take("lr", d.lr)?,
            weight_decay: r.take("weight_decay", d.weight_decay)?,
            beta1: r.take("beta1", d.beta1)?,
            beta2: r.take("beta2", d.beta2)?,
            adam_eps: r.take("adam_eps", d.adam_eps)?,
            plateau_factor: r.take("plateau_factor", d.plateau_factor)?,
            plateau_patience: r.take("plateau_patience", d.plateau_patience)?,
            plateau_min_delta: r.take("plateau_min_delta", d.plateau_min_delta)?,
            lr_floor: r.take("lr_floor", d.lr_floor)?,
            dice_threshold: r.take("dice_threshold", d.dice_threshold)?,
            lambda: r.take("lambda", d.lambda)?,
            gamma: r.take("gamma", d.gamma)?,
            alpha: r.take("alpha", d.alpha)?,
            weighting: r.take("weighting", d.weighting)?,
            fixed_class_weight: r.take("fixed_class_weight", d.fixed_class_weight)?,
            class_losses: r.take("class_losses", d.class_losses)?,
            folds: r.take("folds", d.folds)?,
            seed: r.take("seed", d.seed)?,
            window_lo: r.take("window_lo", d.window_lo)?,
            window_hi: r.take("window_hi", d.window_hi)?,
            voxel_spacing_mm: r.take("voxel_spacing_mm", d.voxel_spacing_mm)?,
            jobs: r.take("jobs", d.jobs)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write(&self, w: &mut KvWriter) {
        w.put("epochs", self.epochs);
        w.put("batch_size", self.batch_size);
        w.put("lr", self.lr);
        w.put("weight_decay", self.weight_decay);
        w.put("beta1", self.beta1);
        w.put("beta2", self.beta2);
        w.put("adam_eps", self.adam_eps);
        w.put("plateau_factor", self.plateau_factor);
        w.put("plateau_patience", self.plateau_patience);
        w.put("plateau_min_delta", self.plateau_min_delta);
        w.put("lr_floor", self.lr_floor);
        w.put("dice_threshold", self.dice_threshold);
        w.put("lambda", self.lambda);
        w.put("gamma", self.gamma);
        w.put("alpha", self.alpha);
        w.put("weighting", self.weighting);
        w.put("fixed_class_weight", self.fixed_class_weight);
        w.put("class_losses", self.class_losses);
        w.put("folds", self.folds);
        w.put("seed", self.seed);
        w.put("window_lo", self.window_lo);
        w.put("window_hi", self.window_hi);
        w.put("voxel_spacing_mm", self.voxel_spacing_mm);
        w.put("jobs", self.jobs);
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        in_unit("lr", self.lr)?;
        in_unit("beta1", self.beta1)?;
        in_unit("beta2", self.beta2)?;
        in_unit("plateau_factor", self.plateau_factor)?;
        in_unit("dice_threshold", self.dice_threshold)?;
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("fixed_class_weight", self.fixed_class_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if self.plateau_patience < 1 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.folds == 0 || self.jobs == 0 {
            return Err(Error::Config("batch_size, folds and jobs must be positive".into()));
        }
        if self.gamma < 0.0 || self.adam_eps <= 0.0 || self.lr_floor < 0.0 || self.plateau_min_delta < 0.0 {
            return Err(Error::Config("gamma, adam_eps, lr_floor and plateau_min_delta must be non-negative".into()));
        }
        if self.window_lo >= self.window_hi {
            return Err(Error::Config(format!(
                "window_lo {} must be below window_hi {}",
                self.window_lo, self.window_hi
            )));
        }
        if self.voxel_spacing_mm <= 0.0 {
            return Err(Error::Config("voxel_spacing_mm must be positive".into()));
        }
        Ok(())
    }
}

/// Model and training settings parsed from a single file.
#[derive(Clone, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Experiment {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let model = ModelConfig::read(&mut r)?;
        let train = TrainConfig::read(&mut r)?;
        r.finish()?;
        Ok(Experiment { model, train })
    }

    fn writer(&self) -> KvWriter {
        let mut w = KvWriter::default();
        self.model.write(&mut w);
        self.train.write(&mut w);
        w
    }

    pub fn to_text(&self) -> String {
        self.writer().to_lines()
    }

    pub fn echo(&self) -> String {
        self.writer().to_echo()
    }
}

/// Synthetic cohort settings.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub sample_count: usize,
    pub volume_side: usize,
    /// Fraction of infectious samples.
    pub class_balance: f64,
    /// 0 makes both classes identically distributed; 1 gives maximal separation.
    pub signal_strength: f64,
    pub seed: u64,
    /// Minimum stone size in voxels.
    pub min_volume: usize,
    pub max_retries: usize,
    pub hu_min: f64,
    pub hu_max: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            sample_count: 200,
            volume_side: 20,
            class_balance: 0.5,
            signal_strength: 0.9,
            seed: 7,
            min_volume: 8,
            max_retries: 100,
            hu_min: -1000.0,
            hu_max: 3000.0,
        }
    }
}

impl GeneratorConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = KvReader::parse(text)?;
        let d = GeneratorConfig::default();
        let cfg = GeneratorConfig {
            sample_count: r.take("sample_count", d.sample_count)?,
            volume_side: r.take("volume_side", d.volume_side)?,
            class_balance: r.take("class_balance", d.class_balance)?,
            signal_strength: r.take("signal_strength", d.signal_strength)?,
            seed: r.take("seed", d.seed)?,
            min_volume: r.take("min_volume", d.min_volume)?,
            max_retries: r.take("max_retries", d.max_retries)?,
            hu_min: r.take("hu_min", d.hu_min)?,
            hu_max: r.take("hu_max", d.hu_max)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::default();
        w.put("sample_count", self.sample_count);
        w.put("volume_side", self.volume_side);
        w.put("class_balance", self.class_balance);
        w.put("signal_strength", self.signal_strength);
        w.put("seed", self.seed);
        w.put("min_volume", self.min_volume);
        w.put("max_retries", self.max_retries);
        w.put("hu_min", self.hu_min);
        w.put("hu_max", self.hu_max);
        w.to_lines()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be positive".into()));
        }
        if self.volume_side < 8 {
            return Err(Error::Config(format!("volume_side {} is below 8", self.volume_side)));
        }
        if !(0.0..=1.0).contains(&self.class_balance) || !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Config("class_balance and signal_strength must lie in [0, 1]".into()));
        }
        if self.hu_min >= self.hu_max {
            return Err(Error::Config("hu_min must be below hu_max".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text_and_echo() {
        let exp = Experiment::default();
        assert_eq!(Experiment::parse(&exp.to_text()).unwrap(), exp);
        assert_eq!(Experiment::parse(&exp.echo()).unwrap(), exp);
        let g = GeneratorConfig::default();
        assert_eq!(GeneratorConfig::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn parses_comments_lists_and_enums() {
        let text = "# toy\nembed_dim = 24 # narrow\nheads=3\ntap_indices = 1, 2, 3, 4\nencoder_layers = 4\n\
                    sma_taps = 3,4\ncea = concat\nweighting = fixed\nlr = 0.01\n";
        let exp = Experiment::parse(text).unwrap();
        assert_eq!(exp.model.embed_dim, 24);
        assert_eq!(exp.model.tap_indices, vec![1, 2, 3, 4]);
        assert_eq!(exp.model.sma_taps, vec![3, 4]);
        assert_eq!(exp.model.cea, FusionMode::Concat);
        assert_eq!(exp.train.weighting, Weighting::Fixed);
        assert_eq!(exp.train.lr, 0.01);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        assert!(matches!(Experiment::parse("embed_dims = 3"), Err(Error::Config(m)) if m.contains("embed_dims")));
        assert!(Experiment::parse("heads").is_err());
        assert!(Experiment::parse("heads = four").is_err());
        assert!(Experiment::parse("heads = 4\nheads = 4").is_err());
        assert!(Experiment::parse("cea = mystery").is_err());
    }

    #[test]
    fn validation_catches_inconsistent_models() {
        assert!(Experiment::parse("volume_side = 18").is_err());
        assert!(Experiment::parse("heads = 5").is_err());
        assert!(Experiment::parse("tap_indices = 2,4,6,7").is_err());
        assert!(Experiment::parse("tap_indices = 2,2,6,8").is_err());
        assert!(Experiment::parse("decoder_channels = 16").is_err());
        assert!(Experiment::parse("sma_taps = 5").is_err());
        assert!(Experiment::parse("lr = 0").is_err());
        assert!(Experiment::parse("plateau_patience = 0").is_err());
        assert!(Experiment::parse("window_lo = 5\nwindow_hi = 5").is_err());
        let degenerate = "encoder_layers = 1\ntap_indices = 1,1,1,1";
        assert!(Experiment::parse(degenerate).is_ok());
    }

    #[test]
    fn token_count_follows_patch_formula() {
        let m = ModelConfig::default();
        assert_eq!(m.token_count(), 64);
        assert_eq!(m.decoder_stages(), 2);
        let paper_scale = ModelConfig {
            volume_side: 48,
            patch_side: 16,
            embed_dim: 384,
            encoder_layers: 12,
            tap_indices: vec![3, 6, 9, 12],
            heads: 12,
            decoder_channels: vec![256, 128, 64, 32],
            ..ModelConfig::default()
        };
        paper_scale.validate().unwrap();
        assert_eq!(paper_scale.token_count(), 27);
    }
}
