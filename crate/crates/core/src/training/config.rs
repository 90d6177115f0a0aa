use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modular_net::NormMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs per run; per task in sequential mode.
    pub epochs: usize,
    pub batch_size: usize,
    /// Maximum consecutive batches granted to a task per scheduler round.
    pub batch_set_size: usize,
    pub lr0: f64,
    /// 0-based epochs at the start of which the learning rate halves.
    #[serde(default)]
    pub lr_halve_epochs: Vec<usize>,
    pub seed: u64,
    pub norm_mode: NormMode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.batch_set_size == 0 {
            return Err(Error::config("batch_set_size", "must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(
                "lr0",
                format!("must be positive and finite, got {}", self.lr0),
            ));
        }
        if self.lr_halve_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "lr_halve_epochs",
                "must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// `lr0 · 2^(−|{h ∈ lr_halve_epochs : h ≤ epoch}|)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.lr_halve_epochs.iter().filter(|&&h| h <= epoch).count();
        self.lr0 * 0.5f64.powi(halvings as i32)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            batch_set_size: 10,
            lr0: 1e-3,
            lr_halve_epochs: vec![20, 30],
            seed: 0,
            norm_mode: NormMode::Shared,
        }
    }

    #[test]
    fn lr_schedule_halves_at_listed_epochs() {
        let c = cfg();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(19), 1e-3);
        assert_eq!(c.lr_at(20), 5e-4);
        assert_eq!(c.lr_at(29), 5e-4);
        assert_eq!(c.lr_at(30), 2.5e-4);
        assert_eq!(c.lr_at(1000), 2.5e-4);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = cfg();
        c.lr_halve_epochs = vec![30, 20];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("lr_halve_epochs"), "{err}");
        let mut c = cfg();
        c.lr0 = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("lr0"));
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = cfg();
        let mut b = cfg();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
