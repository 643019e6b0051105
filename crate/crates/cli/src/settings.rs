use std::fs;
use std::path::Path;

use dunet::model::{ModelConfig, Task};
use dunet::train::TrainConfig;
use dunet::{Error, Result};

/// Model and training settings sharing one flat `key = value` namespace.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Settings {
    pub fn for_task(task: Task) -> Self {
        let model = match task {
            Task::Classification => ModelConfig::classification(ModelConfig::default().num_classes),
            Task::Segmentation => ModelConfig::segmentation(ModelConfig::default().num_parts),
        };
        Settings {
            model,
            train: TrainConfig::for_task(task),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "task" {
            let task: Task = value.parse()?;
            if task != self.model.task {
                return Err(Error::Argument(format!(
                    "config sets task `{task}` but the command runs `{}`",
                    self.model.task
                )));
            }
            Ok(())
        } else if ModelConfig::is_key(key) {
            self.model.set(key, value)
        } else if TrainConfig::is_key(key) {
            self.train.set(key, value)
        } else {
            Err(Error::Argument(format!("unknown config key `{key}`")))
        }
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        self.apply_text(&text, path)
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override must look like key=value, got `{o}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        format!("{}{}", self.model.to_text(), self.train.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_route_to_their_config() {
        let mut s = Settings::for_task(Task::Segmentation);
        s.apply_text("# comment\nk = 8\n\nepochs = 3\nenable_phi = false\n", Path::new("x.cfg"))
            .unwrap();
        assert_eq!(s.model.k, 8);
        assert_eq!(s.train.epochs, 3);
        assert!(!s.model.enable_phi);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut s = Settings::for_task(Task::Classification);
        let err = s.apply_text("k = 4\nbogus = 1\n", Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains("x.cfg:2"), "{err}");
        assert!(s.apply_text("task = seg\n", Path::new("y.cfg")).is_err());
    }

    #[test]
    fn resolved_text_reparses() {
        let mut s = Settings::for_task(Task::Segmentation);
        s.apply_overrides(&["lr=0.05".into(), "widths=64,64,128,128".into()]).unwrap();
        let mut back = Settings::for_task(Task::Segmentation);
        back.apply_text(&s.to_text(), Path::new("echo")).unwrap();
        assert_eq!(back, s);
    }
}
