use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numkit::{read_params, write_params, Conv2D, Dense, Layer, Network, Tensor};
use crate::tabular::{DatasetSchema, NormStats};
use crate::{Error, Result};

use super::linreg::RegressionModel;
use super::{StrategyId, TrainConfig, TrainedArtifact};

/// Shape-only description of a layer; parameters live in `params.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
enum LayerSpec {
    Dense { n_in: usize, n_out: usize, bias: bool },
    Conv2D { c_in: usize, c_out: usize, kernel: usize, stride: usize },
    ReLU,
    MaxPool2,
    Flatten,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchSpec {
    tabular: Vec<LayerSpec>,
    image: Vec<LayerSpec>,
    head: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    strategy: String,
    config: TrainConfig,
    config_digest: String,
    column_names: Vec<String>,
    schema: DatasetSchema,
    history: Vec<f64>,
    arch: Option<ArchSpec>,
    /// Wall-clock of the save; excluded from determinism comparisons.
    saved_at_unix: u64,
}

fn layer_spec(layer: &Layer) -> LayerSpec {
    match layer {
        Layer::Dense(d) => LayerSpec::Dense {
            n_in: d.w.shape()[1],
            n_out: d.w.shape()[0],
            bias: d.b.is_some(),
        },
        Layer::Conv2D(c) => LayerSpec::Conv2D {
            c_in: c.w.shape()[3],
            c_out: c.w.shape()[0],
            kernel: c.w.shape()[1],
            stride: c.stride,
        },
        Layer::ReLU => LayerSpec::ReLU,
        Layer::MaxPool2 => LayerSpec::MaxPool2,
        Layer::Flatten => LayerSpec::Flatten,
        Layer::Identity => LayerSpec::Identity,
    }
}

fn build_layer(spec: &LayerSpec) -> Layer {
    match spec {
        LayerSpec::Dense { n_in, n_out, bias } => Layer::Dense(Dense::from_parts(
            Tensor::zeros(vec![*n_out, *n_in]),
            bias.then(|| Tensor::zeros(vec![*n_out])),
        )),
        LayerSpec::Conv2D {
            c_in,
            c_out,
            kernel,
            stride,
        } => Layer::Conv2D(Conv2D {
            w: Tensor::zeros(vec![*c_out, *kernel, *kernel, *c_in]),
            b: Tensor::zeros(vec![*c_out]),
            stride: *stride,
        }),
        LayerSpec::ReLU => Layer::ReLU,
        LayerSpec::MaxPool2 => Layer::MaxPool2,
        LayerSpec::Flatten => Layer::Flatten,
        LayerSpec::Identity => Layer::Identity,
    }
}

/// Persist an artifact directory: manifest + binary network parameters +
/// regression/forest/normalization JSON files.
pub fn save_artifact(artifact: &TrainedArtifact, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let arch = artifact.network.as_ref().map(|net| ArchSpec {
        tabular: net.tabular.iter().map(layer_spec).collect(),
        image: net.image.iter().map(layer_spec).collect(),
        head: net.head.iter().map(layer_spec).collect(),
    });
    let manifest = Manifest {
        strategy: artifact.strategy.as_str().into(),
        config: artifact.config.clone(),
        config_digest: artifact.config.digest(),
        column_names: artifact.column_names.clone(),
        schema: artifact.schema.clone(),
        history: artifact.history.clone(),
        arch,
        saved_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    serde_json::to_writer_pretty(
        std::fs::File::create(dir.join("manifest.json"))?,
        &manifest,
    )?;
    serde_json::to_writer_pretty(
        std::fs::File::create(dir.join("normstats.json"))?,
        &artifact.norm_stats,
    )?;
    if let Some(net) = &artifact.network {
        let mut buf = Vec::new();
        write_params(&mut buf, &net.params())?;
        std::fs::write(dir.join("params.bin"), buf)?;
    }
    if let Some(reg) = &artifact.regression {
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("regression.json"))?, reg)?;
    }
    if let Some(reg) = &artifact.regression_stage3 {
        serde_json::to_writer_pretty(
            std::fs::File::create(dir.join("regression_stage3.json"))?,
            reg,
        )?;
    }
    if let Some(forest) = &artifact.forest {
        std::fs::write(dir.join("forest.json"), forest.to_json()?)?;
    }
    Ok(())
}

pub fn load_artifact(dir: &Path) -> Result<TrainedArtifact> {
    let manifest: Manifest =
        serde_json::from_reader(std::fs::File::open(dir.join("manifest.json"))?)?;
    let strategy = StrategyId::parse(&manifest.strategy)?;
    let norm_stats: NormStats =
        serde_json::from_reader(std::fs::File::open(dir.join("normstats.json"))?)?;
    let network = match &manifest.arch {
        None => None,
        Some(arch) => {
            let mut net = Network::new(
                arch.tabular.iter().map(build_layer).collect(),
                arch.image.iter().map(build_layer).collect(),
                arch.head.iter().map(build_layer).collect(),
            );
            let bytes = std::fs::read(dir.join("params.bin"))?;
            let tensors = read_params(&mut &bytes[..])?;
            let mut params = net.params_mut();
            if params.len() != tensors.len() {
                return Err(Error::Artifact(format!(
                    "expected {} parameter tensors, file has {}",
                    params.len(),
                    tensors.len()
                )));
            }
            for (p, t) in params.iter_mut().zip(&tensors) {
                if p.shape() != t.shape() {
                    return Err(Error::Artifact("parameter shape mismatch".into()));
                }
                p.data_mut().copy_from_slice(t.data());
            }
            Some(net)
        }
    };
    let load_reg = |name: &str| -> Result<Option<RegressionModel>> {
        let path = dir.join(name);
        if path.exists() {
            Ok(Some(serde_json::from_reader(std::fs::File::open(path)?)?))
        } else {
            Ok(None)
        }
    };
    let forest = {
        let path = dir.join("forest.json");
        if path.exists() {
            Some(crate::forest::ForestModel::from_json(&std::fs::read_to_string(path)?)?)
        } else {
            None
        }
    };
    Ok(TrainedArtifact {
        strategy,
        config: manifest.config,
        norm_stats,
        column_names: manifest.column_names,
        schema: manifest.schema,
        regression: load_reg("regression.json")?,
        regression_stage3: load_reg("regression_stage3.json")?,
        network,
        forest,
        history: manifest.history,
    })
}
