use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geotile::ImageTensor;
use crate::numkit::{Conv2D, Dense, Layer, Network, Tensor};
use crate::tabular::{fit_transform, transform, NormStats};
use crate::{Error, Result};

use super::linreg::{fit_linear_regression, RegressionModel};
use super::trainloop::{fit_loop, FitData};
use super::{Dataset, StrategyId, TrainConfig, TrainedArtifact};

/// Named coefficient with optional inferential statistics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub t_value: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefficientReport {
    pub strategy: String,
    pub coefficients: Vec<Coefficient>,
}

/// The scalar column appended by the image-bearing interpretable models.
pub const SATELLITE_COLUMN: &str = "satellite_image";

/// Desk-scale conv trunk: two conv+pool stages, then a dense layer of
/// `penultimate` width with a relu activation.
fn conv_trunk(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let s = cfg.image_size;
    let after = |s: usize| (s - 2) / 2; // conv 3x3 then maxpool2
    let side = after(after(s));
    let flat = side * side * 16;
    vec![
        Layer::Conv2D(Conv2D::new(3, 8, 3, 1, rng)),
        Layer::ReLU,
        Layer::MaxPool2,
        Layer::Conv2D(Conv2D::new(8, 16, 3, 1, rng)),
        Layer::ReLU,
        Layer::MaxPool2,
        Layer::Flatten,
        Layer::Dense(Dense::new(flat, cfg.penultimate, true, rng)),
        Layer::ReLU,
    ]
}

/// Image-only regression network: conv trunk then a linear output.
fn image_net(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Network {
    Network::new(
        vec![],
        conv_trunk(cfg, rng),
        vec![Layer::Dense(Dense::new(cfg.penultimate, 1, true, rng))],
    )
}

/// Hybrid net: identity structured branch, image branch compressed to a
/// scalar with no output activation, single linear fusion layer.
fn hybrid_net(d: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Network {
    if cfg.disable_image {
        return Network::new(
            vec![Layer::Identity],
            vec![],
            vec![Layer::Dense(Dense::new(d, 1, true, rng))],
        );
    }
    let mut image = conv_trunk(cfg, rng);
    image.push(Layer::Dense(Dense::new(cfg.penultimate, 1, false, rng)));
    Network::new(
        vec![Layer::Identity],
        image,
        vec![Layer::Dense(Dense::new(d + 1, 1, true, rng))],
    )
}

/// Black-box net: nonlinear structured branch, conv trunk image branch,
/// nonlinear fusion.
fn blackbox_net(d: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Network {
    let bw = cfg.branch_width;
    Network::new(
        vec![Layer::Dense(Dense::new(d, bw, true, rng)), Layer::ReLU],
        conv_trunk(cfg, rng),
        vec![
            Layer::Dense(Dense::new(bw + cfg.penultimate, bw, true, rng)),
            Layer::ReLU,
            Layer::Dense(Dense::new(bw, 1, true, rng)),
        ],
    )
}

/// Start the output layer's bias at the mean target, so early epochs spend
/// their steps on structure instead of climbing to the target scale.
fn init_output_bias(net: &mut Network, targets: &[f64]) {
    if targets.is_empty() {
        return;
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    if let Some(Layer::Dense(d)) = net.head.last_mut() {
        if let Some(b) = &mut d.b {
            b.data_mut()[0] = mean;
        }
    }
}

struct Encoded {
    stats: NormStats,
    names: Vec<String>,
    train: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    y_val: Vec<f64>,
}

fn encode(train: &Dataset, val: &Dataset) -> Result<Encoded> {
    let (fm_train, stats) = fit_transform(&train.records, &train.schema)?;
    let fm_val = transform(&val.records, &val.schema, &stats)?;
    Ok(Encoded {
        stats,
        names: fm_train.column_names.clone(),
        train: fm_train.rows,
        val: fm_val.rows,
        y_train: train.log_targets()?,
        y_val: val.log_targets()?,
    })
}

fn bare_artifact(strategy: StrategyId, cfg: &TrainConfig, ds: &Dataset, enc: &Encoded) -> TrainedArtifact {
    TrainedArtifact {
        strategy,
        config: cfg.clone(),
        norm_stats: enc.stats.clone(),
        column_names: enc.names.clone(),
        schema: ds.schema.clone(),
        regression: None,
        regression_stage3: None,
        network: None,
        forest: None,
        history: Vec::new(),
    }
}

/// Linear regression on encoded tabular features against log price.
pub fn train_baseline(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let reg = fit_linear_regression(&enc.train, &enc.y_train, &enc.names)?;
    let mut artifact = bare_artifact(StrategyId::Baseline, cfg, train, &enc);
    artifact.regression = Some(reg);
    Ok(artifact)
}

/// Two independent kernels (tabular regression, image network), combined
/// as an equal-weight mean in log space.
pub fn train_m1_multikernel(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let reg = fit_linear_regression(&enc.train, &enc.y_train, &enc.names)?;
    let imgs_train = train.require_images(StrategyId::M1Multikernel)?;
    let imgs_val = val.require_images(StrategyId::M1Multikernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = image_net(cfg, &mut rng);
    init_output_bias(&mut net, &enc.y_train);
    let history = fit_loop(
        &mut net,
        &FitData {
            tabular: None,
            images: Some(imgs_train),
            targets: &enc.y_train,
        },
        &FitData {
            tabular: None,
            images: Some(imgs_val),
            targets: &enc.y_val,
        },
        cfg,
    )?;
    let mut artifact = bare_artifact(StrategyId::M1Multikernel, cfg, train, &enc);
    artifact.regression = Some(reg);
    artifact.network = Some(net);
    artifact.history = history;
    Ok(artifact)
}

/// Penultimate activations of a trained image network, one row per image.
pub fn extract_image_features(net: &Network, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
    if net.image.is_empty() {
        return Err(Error::Artifact("network has no image branch".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let mut cur = img.tensor().clone();
        for layer in &net.image {
            cur = layer.forward(&cur)?;
        }
        out.push(cur.data().to_vec());
    }
    Ok(out)
}

/// CNN features concatenated with tabular features, fed to a random forest.
pub fn train_m2_concat_rf(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let imgs_train = train.require_images(StrategyId::M2ConcatRf)?;
    let imgs_val = val.require_images(StrategyId::M2ConcatRf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = image_net(cfg, &mut rng);
    init_output_bias(&mut net, &enc.y_train);
    let history = fit_loop(
        &mut net,
        &FitData {
            tabular: None,
            images: Some(imgs_train),
            targets: &enc.y_train,
        },
        &FitData {
            tabular: None,
            images: Some(imgs_val),
            targets: &enc.y_val,
        },
        cfg,
    )?;
    let features = extract_image_features(&net, imgs_train)?;
    let fused: Vec<Vec<f64>> = enc
        .train
        .iter()
        .zip(&features)
        .map(|(t, f)| t.iter().chain(f.iter()).cloned().collect())
        .collect();
    let forest = crate::forest::fit_forest(&fused, &enc.y_train, &cfg.forest, cfg.seed)?;
    let mut artifact = bare_artifact(StrategyId::M2ConcatRf, cfg, train, &enc);
    artifact.network = Some(net);
    artifact.forest = Some(forest);
    artifact.history = history;
    Ok(artifact)
}

/// Three stages: regression on log price, image network on its residuals,
/// regression on tabular features plus the residual prediction.
pub fn train_m3_boosted(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let stage1 = fit_linear_regression(&enc.train, &enc.y_train, &enc.names)?;
    let imgs_train = train.require_images(StrategyId::M3Boosted)?;
    let imgs_val = val.require_images(StrategyId::M3Boosted)?;
    let resid_train: Vec<f64> = enc
        .train
        .iter()
        .zip(&enc.y_train)
        .map(|(row, &y)| y - stage1.predict_row(row))
        .collect();
    let resid_val: Vec<f64> = enc
        .val
        .iter()
        .zip(&enc.y_val)
        .map(|(row, &y)| y - stage1.predict_row(row))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = image_net(cfg, &mut rng);
    init_output_bias(&mut net, &resid_train);
    let history = fit_loop(
        &mut net,
        &FitData {
            tabular: None,
            images: Some(imgs_train),
            targets: &resid_train,
        },
        &FitData {
            tabular: None,
            images: Some(imgs_val),
            targets: &resid_val,
        },
        cfg,
    )?;
    let mut names3 = enc.names.clone();
    names3.push(SATELLITE_COLUMN.to_string());
    let mut rows3 = Vec::with_capacity(enc.train.len());
    for (row, img) in enc.train.iter().zip(imgs_train) {
        let mut r = row.clone();
        r.push(net.predict(None, Some(img.tensor()))?);
        rows3.push(r);
    }
    let stage3 = fit_linear_regression(&rows3, &enc.y_train, &names3)?;
    let mut artifact = bare_artifact(StrategyId::M3Boosted, cfg, train, &enc);
    artifact.regression = Some(stage1);
    artifact.regression_stage3 = Some(stage3);
    artifact.network = Some(net);
    artifact.history = history;
    Ok(artifact)
}

/// Semi-transparent multi-view network trained end-to-end.
pub fn train_m4_hybrid(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let (imgs_train, imgs_val) = if cfg.disable_image {
        (None, None)
    } else {
        (
            Some(train.require_images(StrategyId::M4Hybrid)?),
            Some(val.require_images(StrategyId::M4Hybrid)?),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = hybrid_net(enc.names.len(), cfg, &mut rng);
    init_output_bias(&mut net, &enc.y_train);
    let history = fit_loop(
        &mut net,
        &FitData {
            tabular: Some(&enc.train),
            images: imgs_train,
            targets: &enc.y_train,
        },
        &FitData {
            tabular: Some(&enc.val),
            images: imgs_val,
            targets: &enc.y_val,
        },
        cfg,
    )?;
    let mut artifact = bare_artifact(StrategyId::M4Hybrid, cfg, train, &enc);
    artifact.network = Some(net);
    artifact.history = history;
    Ok(artifact)
}

/// Fully nonlinear multi-view network.
pub fn train_m5_blackbox(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedArtifact> {
    let enc = encode(train, val)?;
    let imgs_train = train.require_images(StrategyId::M5Blackbox)?;
    let imgs_val = val.require_images(StrategyId::M5Blackbox)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = blackbox_net(enc.names.len(), cfg, &mut rng);
    init_output_bias(&mut net, &enc.y_train);
    let history = fit_loop(
        &mut net,
        &FitData {
            tabular: Some(&enc.train),
            images: Some(imgs_train),
            targets: &enc.y_train,
        },
        &FitData {
            tabular: Some(&enc.val),
            images: Some(imgs_val),
            targets: &enc.y_val,
        },
        cfg,
    )?;
    let mut artifact = bare_artifact(StrategyId::M5Blackbox, cfg, train, &enc);
    artifact.network = Some(net);
    artifact.history = history;
    Ok(artifact)
}

/// Dispatch on strategy id.
pub fn train(
    strategy: StrategyId,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedArtifact> {
    match strategy {
        StrategyId::Baseline => train_baseline(train_set, val_set, cfg),
        StrategyId::M1Multikernel => train_m1_multikernel(train_set, val_set, cfg),
        StrategyId::M2ConcatRf => train_m2_concat_rf(train_set, val_set, cfg),
        StrategyId::M3Boosted => train_m3_boosted(train_set, val_set, cfg),
        StrategyId::M4Hybrid => train_m4_hybrid(train_set, val_set, cfg),
        StrategyId::M5Blackbox => train_m5_blackbox(train_set, val_set, cfg),
    }
}

impl TrainedArtifact {
    /// Log-space predictions for a dataset encoded with the train stats.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        let fm = transform(&data.records, &data.schema, &self.norm_stats)?;
        match self.strategy {
            StrategyId::Baseline => {
                let reg = self.require_regression()?;
                Ok(reg.predict(&fm.rows))
            }
            StrategyId::M1Multikernel => {
                let reg = self.require_regression()?;
                let net = self.require_network()?;
                let imgs = data.require_images(self.strategy)?;
                let mut out = Vec::with_capacity(data.len());
                for (row, img) in fm.rows.iter().zip(imgs) {
                    let lr = reg.predict_row(row);
                    let cnn = net.predict(None, Some(img.tensor()))?;
                    out.push(0.5 * lr + 0.5 * cnn);
                }
                Ok(out)
            }
            StrategyId::M2ConcatRf => {
                let net = self.require_network()?;
                let forest = self
                    .forest
                    .as_ref()
                    .ok_or_else(|| Error::Artifact("missing forest".into()))?;
                let imgs = data.require_images(self.strategy)?;
                let features = extract_image_features(net, imgs)?;
                let fused: Vec<Vec<f64>> = fm
                    .rows
                    .iter()
                    .zip(&features)
                    .map(|(t, f)| t.iter().chain(f.iter()).cloned().collect())
                    .collect();
                forest.predict(&fused)
            }
            StrategyId::M3Boosted => {
                let stage3 = self
                    .regression_stage3
                    .as_ref()
                    .ok_or_else(|| Error::Artifact("missing stage-3 regression".into()))?;
                let net = self.require_network()?;
                let imgs = data.require_images(self.strategy)?;
                let mut out = Vec::with_capacity(data.len());
                for (row, img) in fm.rows.iter().zip(imgs) {
                    let mut r = row.clone();
                    r.push(net.predict(None, Some(img.tensor()))?);
                    out.push(stage3.predict_row(&r));
                }
                Ok(out)
            }
            StrategyId::M4Hybrid | StrategyId::M5Blackbox => {
                let net = self.require_network()?;
                let imgs = if self.config.disable_image {
                    None
                } else {
                    Some(data.require_images(self.strategy)?)
                };
                let mut out = Vec::with_capacity(data.len());
                for (i, row) in fm.rows.iter().enumerate() {
                    let tab = Tensor::vector(row.clone());
                    let img = imgs.map(|im| im[i].tensor());
                    out.push(net.predict(Some(&tab), img)?);
                }
                Ok(out)
            }
        }
    }

    fn require_regression(&self) -> Result<&RegressionModel> {
        self.regression
            .as_ref()
            .ok_or_else(|| Error::Artifact("missing regression".into()))
    }

    fn require_network(&self) -> Result<&Network> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::Artifact("missing network".into()))
    }
}

fn regression_coefficients(reg: &RegressionModel) -> Vec<Coefficient> {
    let mut coefs = vec![Coefficient {
        name: "constant".into(),
        value: reg.intercept,
        std_error: Some(reg.intercept_std_error),
        t_value: None,
    }];
    let ts = reg.t_values();
    for ((name, &w), (se, t)) in reg
        .column_names
        .iter()
        .zip(&reg.weights)
        .zip(reg.std_errors.iter().zip(&ts))
    {
        coefs.push(Coefficient {
            name: name.clone(),
            value: w,
            std_error: Some(*se),
            t_value: Some(*t),
        });
    }
    coefs
}

/// Named coefficients for the interpretable strategies; `NotInterpretable`
/// otherwise.
pub fn extract_coefficients(artifact: &TrainedArtifact) -> Result<CoefficientReport> {
    let coefficients = match artifact.strategy {
        StrategyId::Baseline => regression_coefficients(artifact.require_regression()?),
        StrategyId::M3Boosted => regression_coefficients(
            artifact
                .regression_stage3
                .as_ref()
                .ok_or_else(|| Error::Artifact("missing stage-3 regression".into()))?,
        ),
        StrategyId::M4Hybrid => {
            let net = artifact.require_network()?;
            let head = match net.head.first() {
                Some(Layer::Dense(d)) => d,
                _ => return Err(Error::Artifact("hybrid head is not a dense layer".into())),
            };
            let mut names = artifact.column_names.clone();
            if !artifact.config.disable_image {
                names.push(SATELLITE_COLUMN.to_string());
            }
            if head.w.len() != names.len() {
                return Err(Error::Artifact("head width vs column names".into()));
            }
            let mut coefs = vec![Coefficient {
                name: "constant".into(),
                value: head.b.as_ref().map(|b| b.data()[0]).unwrap_or(0.0),
                std_error: None,
                t_value: None,
            }];
            for (name, &w) in names.iter().zip(head.w.data()) {
                coefs.push(Coefficient {
                    name: name.clone(),
                    value: w,
                    std_error: None,
                    t_value: None,
                });
            }
            coefs
        }
        other => return Err(Error::NotInterpretable(other.as_str().into())),
    };
    Ok(CoefficientReport {
        strategy: artifact.strategy.as_str().into(),
        coefficients,
    })
}
