//! Synthetic data oracle: house records and raster images generated from a
//! known price law, so every fusion strategy can be checked against ground
//! truth.
//!
//! The log price is `b0 + beta . enc(x) + gamma * q (+ delta * x0 * q) + eps`
//! with `eps ~ Normal(0, sigma^2)`. The hidden image quality `q` is rendered
//! as `round(10 q)` bright disks on a dark background, countable by an
//! independent pixel-area oracle.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geotile::{tile_to_quadkey, ImageTensor, Quadkey, TileCoord};
use crate::numkit::Tensor;
use crate::tabular::{write_csv, CategoricalField, DatasetSchema, HouseRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d_num: usize,
    /// Vocabulary sizes of the categorical features.
    pub cat_vocab_sizes: Vec<usize>,
    pub intercept: f64,
    /// Coefficients over the encoded feature width (numeric + one-hot).
    pub beta: Vec<f64>,
    /// Image-signal coefficient on the hidden quality q.
    pub gamma: f64,
    /// Tabular-image interaction `delta * x0 * q`; 0 disables it.
    pub interaction: f64,
    /// Log-space noise standard deviation.
    pub sigma: f64,
    pub image_size: usize,
    pub localities: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale default: 4 numeric features, one 3-level categorical.
    pub fn default_with(n: usize, gamma: f64, sigma: f64, seed: u64) -> Self {
        SynthConfig {
            n,
            d_num: 4,
            cat_vocab_sizes: vec![3],
            intercept: 12.0,
            beta: vec![0.8, 0.5, -0.4, 0.3, 0.0, 0.1, -0.1],
            gamma,
            interaction: 0.0,
            sigma,
            image_size: 32,
            localities: 5,
            seed,
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            numeric_fields: (0..self.d_num).map(|i| format!("x{i}")).collect(),
            categorical_fields: self
                .cat_vocab_sizes
                .iter()
                .enumerate()
                .map(|(i, &v)| CategoricalField {
                    name: format!("c{i}"),
                    vocabulary: (0..v).map(|j| format!("V{j}")).collect(),
                })
                .collect(),
            target_field: "price".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidValue("n must be >= 10".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidValue("sigma must be >= 0".into()));
        }
        let width = self.d_num + self.cat_vocab_sizes.iter().sum::<usize>();
        if self.beta.len() != width {
            return Err(Error::InvalidValue(format!(
                "beta length {} != encoded width {width}",
                self.beta.len()
            )));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidValue("image size must be >= 16".into()));
        }
        if self.localities < 2 {
            return Err(Error::InvalidValue("need at least 2 localities".into()));
        }
        Ok(())
    }
}

pub struct SynthDataset {
    pub config: SynthConfig,
    pub schema: DatasetSchema,
    pub records: Vec<HouseRecord>,
    pub images: Vec<ImageTensor>,
    pub quadkeys: Vec<Quadkey>,
    /// Hidden per-record image quality in [0, 1].
    pub quality: Vec<f64>,
}

const DISK_RADIUS: f64 = 0.09; // fraction of image size
const BRIGHT_G: f64 = 0.9;
const BACKGROUND: f64 = 0.05;

/// Tile grid origin for synthetic quadkeys (western North Carolina, level 16).
const BASE_TILE_X: u32 = 17730;
const BASE_TILE_Y: u32 = 25620;
const GRID_WIDTH: u32 = 200;

/// Draw a full dataset (records, tiles, hidden qualities) from the price law.
///
/// ```
/// use mvre::synthbench::{generate, oracle_quality, SynthConfig};
///
/// let cfg = SynthConfig::default_with(20, 0.5, 0.1, 42);
/// let ds = generate(&cfg)?;
/// assert_eq!(ds.records.len(), 20);
/// for (img, q) in ds.images.iter().zip(&ds.quality) {
///     assert!((oracle_quality(img) - q).abs() < 0.1);
/// }
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let schema = config.schema();
    let mut records = Vec::with_capacity(config.n);
    let mut images = Vec::with_capacity(config.n);
    let mut quadkeys = Vec::with_capacity(config.n);
    let mut quality = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (i as u64 + 1));
        let x: Vec<f64> = (0..config.d_num).map(|_| rng.gen::<f64>()).collect();
        let cats: Vec<usize> = config
            .cat_vocab_sizes
            .iter()
            .map(|&v| rng.gen_range(0..v))
            .collect();
        let q: f64 = rng.gen();
        let eps = config.sigma * standard_normal(&mut rng);

        let mut log_price = config.intercept;
        for (j, &xv) in x.iter().enumerate() {
            log_price += config.beta[j] * xv;
        }
        let mut offset = config.d_num;
        for (k, &c) in cats.iter().enumerate() {
            log_price += config.beta[offset + c];
            offset += config.cat_vocab_sizes[k];
        }
        log_price += config.gamma * q;
        if config.interaction != 0.0 {
            log_price += config.interaction * x[0] * q;
        }
        log_price += eps;

        let band = ((q * config.localities as f64) as usize).min(config.localities - 1);
        let tile = TileCoord::new(
            BASE_TILE_X + (i as u32 % GRID_WIDTH),
            BASE_TILE_Y + (i as u32 / GRID_WIDTH),
            16,
        )?;
        let (sw, ne) = tile.bounds();
        let geo = crate::geotile::GeoPoint::new(
            0.5 * (sw.lat() + ne.lat()),
            0.5 * (sw.lon() + ne.lon()),
        )?;
        records.push(HouseRecord {
            numeric: x,
            categorical: cats.iter().map(|&c| format!("V{c}")).collect(),
            target: Some(log_price.exp()),
            geo: Some(geo),
            locality: Some(format!("L{band}")),
        });
        images.push(render_image(config.image_size, q, &mut rng)?);
        quadkeys.push(tile_to_quadkey(tile));
        quality.push(q);
    }
    Ok(SynthDataset {
        config: config.clone(),
        schema,
        records,
        images,
        quadkeys,
        quality,
    })
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; u1 in (0,1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn disk_radius(size: usize) -> f64 {
    (size as f64 * DISK_RADIUS).max(2.0)
}

/// Non-overlapping grid cells (4 x 3) with a small seeded jitter.
fn render_image<R: Rng>(size: usize, q: f64, rng: &mut R) -> Result<ImageTensor> {
    let k = (10.0 * q).round() as usize;
    let mut data = vec![BACKGROUND; size * size * 3];
    let r = disk_radius(size);
    let (cols, rows) = (4usize, 3usize);
    let mut cells: Vec<(usize, usize)> = (0..cols * rows)
        .map(|c| (c % cols, c / cols))
        .collect();
    cells.shuffle(rng);
    for &(cx, cy) in cells.iter().take(k) {
        let jx = rng.gen_range(-1i32..=1) as f64;
        let jy = rng.gen_range(-1i32..=1) as f64;
        // snap centers to the pixel grid so every disk covers the same
        // number of pixels as the reference disk
        let center_x = ((cx as f64 + 0.5) * size as f64 / cols as f64).floor() + jx + 0.5;
        let center_y = ((cy as f64 + 0.5) * size as f64 / rows as f64).floor() + jy + 0.5;
        stamp_disk(&mut data, size, center_x, center_y, r);
    }
    // faint seeded texture so images are not piecewise constant
    for v in data.iter_mut() {
        *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    ImageTensor::from_tensor(Tensor::new(vec![size, size, 3], data)?)
}

fn stamp_disk(data: &mut [f64], size: usize, cx: f64, cy: f64, r: f64) {
    let r2 = r * r;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                let base = (y * size + x) * 3;
                data[base] = 0.35;
                data[base + 1] = BRIGHT_G;
                data[base + 2] = 0.25;
            }
        }
    }
}

/// Pixels a single reference disk covers at this image size.
fn reference_disk_area(size: usize) -> usize {
    let r = disk_radius(size);
    let c = (size / 2) as f64 + 0.5; // pixel-grid aligned, like stamped disks
    let r2 = r * r;
    let mut count = 0;
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            if dx * dx + dy * dy <= r2 {
                count += 1;
            }
        }
    }
    count
}

/// Independent brute-force estimate of the hidden quality: bright-pixel
/// count divided by the reference disk area, in tenths.
pub fn oracle_quality(image: &ImageTensor) -> f64 {
    let size = image.height();
    let data = image.tensor().data();
    let bright = data
        .chunks_exact(3)
        .filter(|px| px[1] > 0.5 && px[1] > px[0] && px[1] > px[2])
        .count();
    let area = reference_disk_area(size).max(1);
    let k_hat = (bright as f64 / area as f64).round();
    (k_hat / 10.0).clamp(0.0, 1.0)
}

/// Optimal achievable log-space MAE under the generator's noise:
/// the mean absolute deviation of a centered normal, `sigma * sqrt(2/pi)`.
pub fn bayes_mae(sigma: f64) -> f64 {
    sigma * (2.0 / PI).sqrt()
}

impl SynthDataset {
    /// Persist in the same CSV + tile-store layout the real-data path
    /// consumes: `data.csv`, `schema.json`, `tiles/<level>/<quadkey>.png`.
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        write_csv(&out.join("data.csv"), &self.schema, &self.records)?;
        serde_json::to_writer_pretty(
            std::fs::File::create(out.join("schema.json"))?,
            &self.schema,
        )?;
        for (q, img) in self.quadkeys.iter().zip(&self.images) {
            let dir = out.join("tiles").join(q.level().to_string());
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{q}.png")), img.encode_png()?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_identical() {
        let cfg = SynthConfig::default_with(20, 0.5, 0.1, 7);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.quality, b.quality);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.tensor().data(), y.tensor().data());
        }
    }

    #[test]
    fn endpoint_disk_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = render_image(32, 0.0, &mut rng).unwrap();
        assert_eq!(oracle_quality(&zero), 0.0);
        let full = render_image(32, 1.0, &mut rng).unwrap();
        assert_eq!(oracle_quality(&full), 1.0);
    }

    #[test]
    fn oracle_tracks_hidden_quality() {
        let cfg = SynthConfig::default_with(100, 0.5, 0.0, 11);
        let ds = generate(&cfg).unwrap();
        let mut max_err: f64 = 0.0;
        for (img, &q) in ds.images.iter().zip(&ds.quality) {
            max_err = max_err.max((oracle_quality(img) - q).abs());
        }
        // rendered count is round(10 q), so 0.05 plus rounding slack
        assert!(max_err <= 0.1, "max |q_hat - q| = {max_err}");
    }

    #[test]
    fn bayes_mae_closed_form() {
        assert_eq!(bayes_mae(0.0), 0.0);
        assert!((bayes_mae(0.1) - 0.0798).abs() < 1e-4);
        assert!((bayes_mae(0.2) - 0.1596).abs() < 1e-4);
    }

    #[test]
    fn locality_bands_follow_quality() {
        let cfg = SynthConfig::default_with(200, 0.5, 0.1, 3);
        let ds = generate(&cfg).unwrap();
        for (r, &q) in ds.records.iter().zip(&ds.quality) {
            let band = ((q * 5.0) as usize).min(4);
            assert_eq!(r.locality.as_deref(), Some(format!("L{band}").as_str()));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::default_with(20, 0.5, 0.1, 1);
        cfg.sigma = -1.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::default_with(5, 0.5, 0.1, 1);
        cfg.n = 5;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::default_with(20, 0.5, 0.1, 1);
        cfg.beta = vec![1.0];
        assert!(generate(&cfg).is_err());
    }
}
