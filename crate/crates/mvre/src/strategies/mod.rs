//! The model catalog: baseline hedonic regression plus the five fusion
//! strategies, with a shared training loop (Adam, best-on-validation
//! snapshot) and coefficient extraction for the interpretable models.
//!
//! All training and prediction happens in log-price space; evaluation
//! inverts the transform first (see [`crate::evalreport`]).

mod artifact;
mod linreg;
mod models;
mod trainloop;

use serde::{Deserialize, Serialize};

pub use artifact::{load_artifact, save_artifact};
pub use linreg::{fit_linear_regression, RegressionModel};
pub use models::{
    extract_coefficients, extract_image_features, train, train_baseline, train_m1_multikernel,
    train_m2_concat_rf, train_m3_boosted, train_m4_hybrid, train_m5_blackbox, Coefficient,
    CoefficientReport,
};
pub use trainloop::{fit_loop, predict_all, validation_loss, FitData};

use crate::forest::{ForestHyper, ForestModel};
use crate::geotile::ImageTensor;
use crate::numkit::Network;
use crate::tabular::{DatasetSchema, HouseRecord, NormStats};
use crate::{Error, Result};

/// The compared models, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyId {
    /// Hedonic linear regression on tabular features only.
    Baseline,
    /// Multi-kernel: equal-weight mean of a tabular regression and an
    /// image-only network, both trained on log price.
    M1Multikernel,
    /// Concatenation: CNN penultimate features joined with tabular
    /// features, fed to a random forest.
    M2ConcatRf,
    /// Boosting: regression residuals predicted from images, then a second
    /// regression over tabular features plus that prediction.
    M3Boosted,
    /// Hybrid multi-view network: linear structured branch, image branch
    /// compressed to a scalar, linear fusion.
    M4Hybrid,
    /// Black-box multi-view network with nonlinear branches and head.
    M5Blackbox,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::Baseline,
        StrategyId::M1Multikernel,
        StrategyId::M2ConcatRf,
        StrategyId::M3Boosted,
        StrategyId::M4Hybrid,
        StrategyId::M5Blackbox,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyId::Baseline => "baseline",
            StrategyId::M1Multikernel => "m1",
            StrategyId::M2ConcatRf => "m2",
            StrategyId::M3Boosted => "m3",
            StrategyId::M4Hybrid => "m4",
            StrategyId::M5Blackbox => "m5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        StrategyId::ALL
            .iter()
            .find(|id| id.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidValue(format!("unknown strategy '{s}'")))
    }

    pub fn needs_images(&self) -> bool {
        !matches!(self, StrategyId::Baseline)
    }

    pub fn interpretable(&self) -> bool {
        matches!(
            self,
            StrategyId::Baseline | StrategyId::M3Boosted | StrategyId::M4Hybrid
        )
    }
}

/// Hyperparameters shared by all strategy trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Width of the dense layer after the conv trunk.
    pub penultimate: usize,
    /// Width of the tabular branch and fusion layers of the black-box net.
    pub branch_width: usize,
    pub image_size: usize,
    pub forest: ForestHyper,
    /// Drop the image branch entirely (hybrid-reduction mode).
    pub disable_image: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 32,
            max_epochs: 80,
            seed: 0,
            penultimate: 16,
            branch_width: 64,
            image_size: 32,
            forest: ForestHyper::default(),
            disable_image: false,
        }
    }
}

impl TrainConfig {
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hex_string(&hash[..8])
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Records plus (optionally) one image per record, ready for training or
/// evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub records: Vec<HouseRecord>,
    pub images: Option<Vec<ImageTensor>>,
}

impl Dataset {
    pub fn new(
        schema: DatasetSchema,
        records: Vec<HouseRecord>,
        images: Option<Vec<ImageTensor>>,
    ) -> Result<Self> {
        if let Some(imgs) = &images {
            if imgs.len() != records.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} records vs {} images",
                    records.len(),
                    imgs.len()
                )));
            }
        }
        Ok(Dataset {
            schema,
            records,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            images: self
                .images
                .as_ref()
                .map(|imgs| idx.iter().map(|&i| imgs[i].clone()).collect()),
        }
    }

    /// Log-transformed targets; errors when a record has no target.
    pub fn log_targets(&self) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let t = r
                    .target
                    .ok_or_else(|| Error::MissingField("target".into()))?;
                crate::tabular::log_target(t)
            })
            .collect()
    }

    pub fn require_images(&self, strategy: StrategyId) -> Result<&[ImageTensor]> {
        self.images
            .as_deref()
            .ok_or_else(|| Error::MissingField(format!(
                "image source required for strategy {}",
                strategy.as_str()
            )))
    }
}

/// Everything a trained strategy needs for prediction and coefficient
/// extraction.
pub struct TrainedArtifact {
    pub strategy: StrategyId,
    pub config: TrainConfig,
    pub norm_stats: NormStats,
    pub column_names: Vec<String>,
    pub schema: DatasetSchema,
    /// Baseline regression, the m1 tabular kernel, or the m3 stage-1 fit.
    pub regression: Option<RegressionModel>,
    /// The m3 stage-3 regression over tabular features + the image scalar.
    pub regression_stage3: Option<RegressionModel>,
    pub network: Option<Network>,
    pub forest: Option<ForestModel>,
    /// Per-epoch validation loss of the network fit, when one happened.
    pub history: Vec<f64>,
}
