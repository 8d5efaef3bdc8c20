use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, ScalarField};
use crate::error::{Error, Result};

/// Relative weights of the components of the weighting field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    pub k_presence: f64,
    pub k_entropy: f64,
    pub k_modes: f64,
    pub k_domain: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            k_presence: 1.0,
            k_entropy: 1.0,
            k_modes: 1.0,
            k_domain: 1.0,
        }
    }
}

impl WeightingConfig {
    pub fn total(&self) -> f64 {
        self.k_presence + self.k_entropy + self.k_modes + self.k_domain
    }

    pub fn validate(&self) -> Result<()> {
        let ks = [self.k_presence, self.k_entropy, self.k_modes, self.k_domain];
        if ks.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::Config("weighting coefficients must be non-negative".into()));
        }
        if self.total() <= 0.0 {
            return Err(Error::Config("weighting coefficients sum to zero".into()));
        }
        Ok(())
    }
}

/// Convex combination of oil presence, entropy, modal weighting and a
/// uniform domain term. Land cells are zero.
pub fn weighting_field(
    grid: &GridSpec,
    presence: &ScalarField,
    entropy: &ScalarField,
    modes: &ScalarField,
    cfg: &WeightingConfig,
) -> Result<ScalarField> {
    cfg.validate()?;
    for f in [presence, entropy, modes] {
        f.check_grid(grid)?;
    }
    let kt = cfg.total();
    let vals = (0..grid.cell_count())
        .map(|c| {
            if grid.is_land(c) {
                return 0.0;
            }
            let v = cfg.k_presence * presence.values()[c]
                + cfg.k_entropy * entropy.values()[c]
                + cfg.k_modes * modes.values()[c]
                + cfg.k_domain;
            (v / kt).clamp(0.0, 1.0)
        })
        .collect();
    ScalarField::from_values(grid, vals)
}
