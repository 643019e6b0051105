use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "segmentation" | "seg" => Ok(Task::Segmentation),
            other => Err(Error::Argument(format!("unknown task `{other}`"))),
        }
    }
}

/// Hyperparameters of the encoder/decoder network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub input_dim: usize,
    /// Width of the pointwise lift applied before the first stage.
    pub lift_width: usize,
    /// Output width of each of the four encoder stages.
    pub widths: Vec<usize>,
    /// Fraction of points kept by each stage's downsampling.
    pub ratios: Vec<f64>,
    pub k: usize,
    pub kernel_points: usize,
    /// Kernel radius of the first stage; doubled at every later stage.
    pub kernel_radius: f64,
    pub enable_phi: bool,
    pub enable_varphi: bool,
    pub repeat: usize,
    pub num_classes: usize,
    pub num_parts: usize,
    pub head_widths: Vec<usize>,
    pub seg_head_width: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Classification,
            input_dim: 3,
            lift_width: 64,
            widths: vec![64, 128, 256, 512],
            ratios: vec![0.25; 4],
            k: 16,
            kernel_points: 15,
            kernel_radius: 0.3,
            enable_phi: true,
            enable_varphi: true,
            repeat: 1,
            num_classes: 5,
            num_parts: 2,
            head_widths: vec![512, 256],
            seg_head_width: 64,
            dropout: 0.5,
        }
    }
}

pub const STAGES: usize = 4;

impl ModelConfig {
    pub fn segmentation(num_parts: usize) -> Self {
        ModelConfig {
            task: Task::Segmentation,
            num_parts,
            ..Self::default()
        }
    }

    pub fn classification(num_classes: usize) -> Self {
        ModelConfig {
            task: Task::Classification,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.widths.len() != STAGES {
            return fail(format!("expected {STAGES} stage widths, got {}", self.widths.len()));
        }
        if self.ratios.len() != STAGES {
            return fail(format!("expected {STAGES} downsample ratios, got {}", self.ratios.len()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return fail(format!("downsample ratio {r} outside (0, 1]"));
        }
        if self.input_dim == 0 || self.lift_width == 0 || self.widths.contains(&0) {
            return fail("widths must be positive".into());
        }
        let mut prev = self.lift_width;
        for (i, &w) in self.widths.iter().enumerate() {
            if w % prev != 0 {
                return fail(format!("stage {i} width {w} is not a multiple of its input width {prev}"));
            }
            prev = w;
        }
        if self.k == 0 || self.kernel_points == 0 || self.repeat == 0 {
            return fail("k, kernel_points and repeat must be at least 1".into());
        }
        if !(self.kernel_radius > 0.0 && self.kernel_radius.is_finite()) {
            return fail(format!("kernel radius must be positive, got {}", self.kernel_radius));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.head_widths.contains(&0) || self.seg_head_width == 0 {
            return fail("head widths must be positive".into());
        }
        match self.task {
            Task::Classification if self.num_classes < 2 => fail("need at least 2 classes".into()),
            Task::Segmentation if self.num_parts < 2 => fail("need at least 2 part classes".into()),
            _ => Ok(()),
        }
    }

    pub fn outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.num_classes,
            Task::Segmentation => self.num_parts,
        }
    }

    /// Every key with its current value, in a stable order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.task.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("lift_width", self.lift_width.to_string()),
            ("widths", join(&self.widths)),
            ("ratios", join(&self.ratios)),
            ("k", self.k.to_string()),
            ("kernel_points", self.kernel_points.to_string()),
            ("kernel_radius", self.kernel_radius.to_string()),
            ("enable_phi", self.enable_phi.to_string()),
            ("enable_varphi", self.enable_varphi.to_string()),
            ("repeat", self.repeat.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("num_parts", self.num_parts.to_string()),
            ("head_widths", join(&self.head_widths)),
            ("seg_head_width", self.seg_head_width.to_string()),
            ("dropout", self.dropout.to_string()),
        ]
    }

    pub fn is_key(key: &str) -> bool {
        Self::default().pairs().iter().any(|(k, _)| *k == key)
    }

    /// Sets one key from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse()?,
            "input_dim" => self.input_dim = parse(key, value)?,
            "lift_width" => self.lift_width = parse(key, value)?,
            "widths" => self.widths = parse_list(key, value)?,
            "ratios" => self.ratios = parse_list(key, value)?,
            "k" => self.k = parse(key, value)?,
            "kernel_points" => self.kernel_points = parse(key, value)?,
            "kernel_radius" => self.kernel_radius = parse(key, value)?,
            "enable_phi" => self.enable_phi = parse(key, value)?,
            "enable_varphi" => self.enable_varphi = parse(key, value)?,
            "repeat" => self.repeat = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "num_parts" => self.num_parts = parse(key, value)?,
            "head_widths" => self.head_widths = parse_list(key, value)?,
            "seg_head_width" => self.seg_head_width = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            other => return Err(Error::Argument(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines, one per key.
    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Argument(format!("bad value `{value}` for `{key}`")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse(key, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let mut cfg = ModelConfig::segmentation(4);
        cfg.lift_width = 16;
        cfg.widths = vec![16, 32, 64, 128];
        cfg.validate().unwrap();
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_are_spec_errors() {
        let bad = [
            ModelConfig {
                widths: vec![64, 128, 256],
                ..Default::default()
            },
            ModelConfig {
                widths: vec![64, 96, 256, 512],
                ..Default::default()
            },
            ModelConfig {
                ratios: vec![0.25, 0.0, 0.25, 0.25],
                ..Default::default()
            },
            ModelConfig {
                lift_width: 48,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Spec(_))), "{cfg:?}");
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(ModelConfig::default().set("depth", "3").is_err());
        assert!(ModelConfig::default().set("k", "many").is_err());
    }
}
