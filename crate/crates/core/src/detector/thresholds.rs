use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

const BUNDLED: &str = include_str!("../../config/thresholds.toml");

#[derive(Debug, Error)]
pub enum ThresholdsError {
    #[error("reading thresholds: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing thresholds: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("threshold for `{0}` is outside [0, 1]")]
    OutOfRange(String),
}

/// Named per-dataset thresholds γ.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Thresholds {
    pub gamma: BTreeMap<String, f64>,
}

impl Thresholds {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled thresholds are valid")
    }

    pub fn parse(text: &str) -> Result<Self, ThresholdsError> {
        let t: Thresholds = toml::from_str(text)?;
        if let Some((k, _)) = t.gamma.iter().find(|(_, g)| !(0.0..=1.0).contains(*g)) {
            return Err(ThresholdsError::OutOfRange(k.clone()));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, ThresholdsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Case-insensitive lookup.
    pub fn get(&self, dataset: &str) -> Option<f64> {
        self.gamma.get(&dataset.to_ascii_lowercase()).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_operating_points() {
        let t = Thresholds::bundled();
        assert_eq!(t.get("PrimeVul"), Some(0.594));
        assert_eq!(t.get("FormAI"), Some(0.547));
        assert_eq!(t.get("SVEN"), Some(0.334));
        assert_eq!(t.get("ReposVul"), Some(0.193));
        assert!(Thresholds::parse("[gamma]\nx = 1.5\n").is_err());
    }
}
