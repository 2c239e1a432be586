use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fusion::{DEFAULT_FOLDS, DEFAULT_GRID_STEP};
use crate::geometry::DEFAULT_OBJECTNESS_ALPHA;
use crate::pooling::{Layer, PoolMode, RegionScheme};
use crate::svm::{KernelKind, DEFAULT_C_HIDDEN, DEFAULT_C_OUTPUT};
use crate::transform::NormScheme;
use crate::{Error, Result};

/// Settings shared by every batch command. Field names match the CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub layer: Layer,
    pub regions: RegionScheme,
    pub spatial: PoolMode,
    pub temporal: PoolMode,
    pub norm: NormScheme,
    pub pca_dim: Option<usize>,
    pub kernel: KernelKind,
    /// Kernel bandwidth; the median heuristic picks one per event when unset.
    pub gamma: Option<f64>,
    /// SVM box constraint; defaults depend on the layer.
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub folds: usize,
    pub grid_step: f64,
    pub seed: u64,
    pub gmm_components: usize,
    /// Descriptor PCA target; `None` halves the descriptor dimension, 0 disables.
    pub descriptor_pca_dim: Option<usize>,
    pub zero_order: bool,
    pub objectness_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layer: Layer::Hidden7,
            regions: RegionScheme::Sp8,
            spatial: PoolMode::Max,
            temporal: PoolMode::Max,
            norm: NormScheme::L2,
            pca_dim: None,
            kernel: KernelKind::Rbf,
            gamma: None,
            c: None,
            folds: DEFAULT_FOLDS,
            grid_step: DEFAULT_GRID_STEP,
            seed: 0,
            gmm_components: 256,
            descriptor_pca_dim: None,
            zero_order: false,
            objectness_alpha: DEFAULT_OBJECTNESS_ALPHA,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(cfg)
    }

    /// Box constraint in effect for features from `layer`.
    pub fn c_for(&self, layer: Layer) -> f64 {
        self.c.unwrap_or(match layer {
            Layer::Output => DEFAULT_C_OUTPUT,
            _ => DEFAULT_C_HIDDEN,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let signed_input = !self.layer.is_non_negative();
        if self.norm == NormScheme::Root && signed_input {
            return Err(Error::invalid(format!(
                "root normalization needs non-negative features; layer {} can be negative",
                self.layer
            )));
        }
        if self.kernel == KernelKind::Chi2 {
            if signed_input {
                return Err(Error::invalid(format!(
                    "chi2 kernel needs non-negative features; layer {} can be negative",
                    self.layer
                )));
            }
            if self.pca_dim.is_some() {
                return Err(Error::invalid("chi2 kernel cannot follow PCA, which yields signed features"));
            }
        }
        if self.pca_dim == Some(0) {
            return Err(Error::invalid("pca_dim must be at least 1"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("gamma must be positive, got {g}")));
            }
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("C must be positive, got {c}")));
            }
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        crate::fusion::simplex_grid(2, self.grid_step)?;
        if self.gmm_components == 0 {
            return Err(Error::invalid("gmm_components must be at least 1"));
        }
        if !(self.objectness_alpha > 0.0 && self.objectness_alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "objectness_alpha must lie in (0, 1], got {}",
                self.objectness_alpha
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_legal() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn illegal_combinations() {
        let other = RunConfig { layer: Layer::Other, ..Default::default() };
        other.validate().unwrap();
        assert!(RunConfig { norm: NormScheme::Root, ..other.clone() }.validate().is_err());
        assert!(RunConfig { kernel: KernelKind::Chi2, ..other }.validate().is_err());
        let pca_chi = RunConfig {
            kernel: KernelKind::Chi2,
            pca_dim: Some(16),
            ..Default::default()
        };
        assert!(pca_chi.validate().is_err());
        assert!(RunConfig { grid_step: 0.3, ..Default::default() }.validate().is_err());
        assert!(RunConfig { folds: 1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn partial_config_file() {
        let cfg: RunConfig = serde_json::from_str(r#"{"layer": "output", "norm": "root", "C": 3.0}"#).unwrap();
        assert_eq!(cfg.layer, Layer::Output);
        assert_eq!(cfg.c_for(cfg.layer), 3.0);
        assert_eq!(RunConfig::default().c_for(Layer::Output), DEFAULT_C_OUTPUT);
        assert!(serde_json::from_str::<RunConfig>(r#"{"colour": 1}"#).is_err());
    }
}
