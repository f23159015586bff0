use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geotile::ImageTensor;
use crate::numkit::{adam_step, composite_loss, AdamHyper, AdamState, Network, Tensor};
use crate::{Error, Result};

use super::TrainConfig;

/// Inputs for one network fit; ports may be absent when the network does
/// not consume them.
pub struct FitData<'a> {
    pub tabular: Option<&'a [Vec<f64>]>,
    pub images: Option<&'a [ImageTensor]>,
    pub targets: &'a [f64],
}

impl<'a> FitData<'a> {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn sample(&self, i: usize) -> (Option<Tensor>, Option<&ImageTensor>) {
        let tab = self.tabular.map(|t| Tensor::vector(t[i].clone()));
        let img = self.images.map(|imgs| &imgs[i]);
        (tab, img)
    }
}

/// Predictions over a whole dataset, in input order.
pub fn predict_all(net: &Network, data: &FitData) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (tab, img) = data.sample(i);
        out.push(net.predict(tab.as_ref(), img.map(|t| t.tensor()))?);
    }
    Ok(out)
}

/// Validation loss of the current parameters.
pub fn validation_loss(net: &Network, val: &FitData) -> Result<f64> {
    let preds = predict_all(net, val)?;
    let (loss, _) = composite_loss(&Tensor::vector(preds), &Tensor::vector(val.targets.to_vec()))?;
    Ok(loss)
}

/// Mini-batch Adam training with best-on-validation parameter snapshots.
///
/// Runs up to `max_epochs` full passes over shuffled train batches (shuffle
/// seeded per epoch as `seed + epoch`), evaluates the composite loss on the
/// validation set after each epoch, and restores the snapshot with the
/// minimum validation loss (ties resolve to the earlier epoch). Returns the
/// per-epoch validation loss history.
pub fn fit_loop(net: &mut Network, train: &FitData, val: &FitData, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if cfg.max_epochs == 0 {
        return Err(Error::InvalidValue("max_epochs must be >= 1".into()));
    }
    if train.len() == 0 || val.len() == 0 {
        return Err(Error::EmptyInput("fit_loop".into()));
    }
    let hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut state = AdamState::new(&net.params());
    let mut best_loss = f64::INFINITY;
    let mut best_params: Vec<Vec<f64>> = snapshot(net);
    let mut history = Vec::with_capacity(cfg.max_epochs);

    let n = train.len();
    let batch = cfg.batch.max(1);
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            net.zero_grad();
            let mut preds = Vec::with_capacity(chunk.len());
            let mut caches = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (tab, img) = train.sample(i);
                let (y, cache) = net.forward(tab.as_ref(), img.map(|t| t.tensor()))?;
                preds.push(y);
                caches.push(cache);
            }
            let targets: Vec<f64> = chunk.iter().map(|&i| train.targets[i]).collect();
            let (loss, grad) =
                composite_loss(&Tensor::vector(preds), &Tensor::vector(targets))?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}")));
            }
            for (cache, &g) in caches.iter().zip(grad.data()) {
                net.backward(cache, g)?;
            }
            let mut params = net.params_mut();
            adam_step(&mut params, &mut state, &hyper)?;
        }
        let vloss = validation_loss(net, val)?;
        if !vloss.is_finite() {
            return Err(Error::Diverged(format!("validation at epoch {epoch}")));
        }
        history.push(vloss);
        if vloss < best_loss {
            best_loss = vloss;
            best_params = snapshot(net);
        }
    }
    restore(net, &best_params);
    Ok(history)
}

fn snapshot(net: &Network) -> Vec<Vec<f64>> {
    net.params().iter().map(|p| p.data().to_vec()).collect()
}

fn restore(net: &mut Network, params: &[Vec<f64>]) {
    for (p, saved) in net.params_mut().into_iter().zip(params) {
        p.data_mut().copy_from_slice(saved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Dense, Layer};
    use rand::SeedableRng;

    fn linear_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(
            vec![Layer::Dense(Dense::new(1, 1, true, &mut rng))],
            vec![],
            vec![Layer::Identity],
        )
    }

    fn line_data(xs: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x + 1.0).collect();
        (rows, ys)
    }

    #[test]
    fn learns_a_line() {
        let (rows, ys) = line_data(&[0.0, 0.25, 0.5, 0.75, 1.0, 0.1, 0.9, 0.3]);
        let (vrows, vys) = line_data(&[0.2, 0.6]);
        let mut net = linear_net(1);
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 300,
            batch: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let train = FitData {
            tabular: Some(&rows),
            images: None,
            targets: &ys,
        };
        let val = FitData {
            tabular: Some(&vrows),
            images: None,
            targets: &vys,
        };
        let history = fit_loop(&mut net, &train, &val, &cfg).unwrap();
        assert_eq!(history.len(), 300);
        let final_loss = validation_loss(&net, &val).unwrap();
        assert!(final_loss < 0.02, "loss {final_loss}");
    }

    #[test]
    fn one_epoch_boundary() {
        let (rows, ys) = line_data(&[0.0, 1.0, 0.5, 0.25]);
        let mut net = linear_net(2);
        let cfg = TrainConfig {
            max_epochs: 1,
            seed: 2,
            ..TrainConfig::default()
        };
        let train = FitData {
            tabular: Some(&rows),
            images: None,
            targets: &ys,
        };
        let history = fit_loop(&mut net, &train, &train, &cfg).unwrap();
        assert_eq!(history.len(), 1);
    }

    #[test]
    fn restores_best_epoch_snapshot() {
        // with a large lr the validation loss is non-monotone; the returned
        // parameters must reproduce the minimum of the history
        let (rows, ys) = line_data(&[0.0, 0.5, 1.0, 0.2, 0.8, 0.4]);
        let (vrows, vys) = line_data(&[0.3, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::new(
            vec![Layer::Dense(Dense::new(1, 1, true, &mut rng))],
            vec![],
            vec![Layer::Identity],
        );
        let cfg = TrainConfig {
            lr: 0.5,
            max_epochs: 10,
            batch: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let train = FitData {
            tabular: Some(&rows),
            images: None,
            targets: &ys,
        };
        let val = FitData {
            tabular: Some(&vrows),
            images: None,
            targets: &vys,
        };
        let history = fit_loop(&mut net, &train, &val, &cfg).unwrap();
        let best = history.iter().cloned().fold(f64::INFINITY, f64::min);
        let loss_now = validation_loss(&net, &val).unwrap();
        assert!((loss_now - best).abs() < 1e-12, "{loss_now} vs best {best}");
    }
}
