//! Schema-driven encoding of property records into normalized design
//! matrices, target transforms, and the two-level split protocol
//! (geographic holdout, then a seeded random train/validation split).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geotile::GeoPoint;
use crate::{Error, Result};

/// Declares the tabular fields: numeric columns, categorical columns with a
/// fixed vocabulary, and the (strictly positive) price target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub numeric_fields: Vec<String>,
    pub categorical_fields: Vec<CategoricalField>,
    pub target_field: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalField {
    pub name: String,
    pub vocabulary: Vec<String>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for n in self
            .numeric_fields
            .iter()
            .chain(self.categorical_fields.iter().map(|c| &c.name))
        {
            if !names.insert(n.clone()) {
                return Err(Error::InvalidValue(format!("duplicate field '{n}'")));
            }
        }
        if names.contains(&self.target_field) {
            return Err(Error::InvalidValue(
                "target must not be among the features".into(),
            ));
        }
        if self.categorical_fields.iter().any(|c| c.vocabulary.is_empty()) {
            return Err(Error::InvalidValue("empty vocabulary".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let schema: DatasetSchema = serde_json::from_reader(std::fs::File::open(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    /// Encoded width: numeric count plus the sum of vocabulary sizes.
    pub fn encoded_width(&self) -> usize {
        self.numeric_fields.len()
            + self
                .categorical_fields
                .iter()
                .map(|c| c.vocabulary.len())
                .sum::<usize>()
    }

    /// Column names of the encoded design matrix, in layout order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.numeric_fields.clone();
        for c in &self.categorical_fields {
            for v in &c.vocabulary {
                names.push(format!("{}={}", c.name, v));
            }
        }
        names
    }
}

/// Raw property attributes, aligned with a [`DatasetSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct HouseRecord {
    /// Values for `schema.numeric_fields`, in order.
    pub numeric: Vec<f64>,
    /// Values for `schema.categorical_fields`, in order.
    pub categorical: Vec<String>,
    /// Price in currency units, strictly positive when present.
    pub target: Option<f64>,
    pub geo: Option<GeoPoint>,
    pub locality: Option<String>,
}

impl HouseRecord {
    fn validate(&self, schema: &DatasetSchema) -> Result<()> {
        if self.numeric.len() != schema.numeric_fields.len() {
            return Err(Error::MissingField(format!(
                "expected {} numeric values, got {}",
                schema.numeric_fields.len(),
                self.numeric.len()
            )));
        }
        if self.categorical.len() != schema.categorical_fields.len() {
            return Err(Error::MissingField(format!(
                "expected {} categorical values, got {}",
                schema.categorical_fields.len(),
                self.categorical.len()
            )));
        }
        for (name, v) in schema.numeric_fields.iter().zip(&self.numeric) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("field '{name}'")));
            }
        }
        if let Some(t) = self.target {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::InvalidValue(format!("target {t} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Per numeric column train-set min/max, the only state carried from fit
/// to transform time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

/// Encoded, normalized design matrix with its column layout.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }
}

/// Fit min-max stats on `records` (the training partition) and encode them.
pub fn fit_transform(
    records: &[HouseRecord],
    schema: &DatasetSchema,
) -> Result<(FeatureMatrix, NormStats)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("fit_transform".into()));
    }
    for r in records {
        r.validate(schema)?;
    }
    let d = schema.numeric_fields.len();
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for r in records {
        for j in 0..d {
            mins[j] = mins[j].min(r.numeric[j]);
            maxs[j] = maxs[j].max(r.numeric[j]);
        }
    }
    let stats = NormStats { mins, maxs };
    let matrix = transform(records, schema, &stats)?;
    Ok((matrix, stats))
}

/// Encode records using train-time stats. Out-of-range values are not
/// clamped; unseen categories yield an all-zero one-hot group.
pub fn transform(
    records: &[HouseRecord],
    schema: &DatasetSchema,
    stats: &NormStats,
) -> Result<FeatureMatrix> {
    let d = schema.numeric_fields.len();
    if stats.mins.len() != d || stats.maxs.len() != d {
        return Err(Error::ShapeMismatch("norm stats width".into()));
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        r.validate(schema)?;
        let mut row = Vec::with_capacity(schema.encoded_width());
        for j in 0..d {
            let range = stats.maxs[j] - stats.mins[j];
            // constant train column maps to 0
            let v = if range > 0.0 {
                (r.numeric[j] - stats.mins[j]) / range
            } else {
                0.0
            };
            row.push(v);
        }
        for (c, value) in schema.categorical_fields.iter().zip(&r.categorical) {
            for v in &c.vocabulary {
                row.push(if v == value { 1.0 } else { 0.0 });
            }
        }
        rows.push(row);
    }
    Ok(FeatureMatrix {
        rows,
        column_names: schema.column_names(),
    })
}

/// Natural log of a strictly positive price.
pub fn log_target(usd: f64) -> Result<f64> {
    if !usd.is_finite() || usd <= 0.0 {
        return Err(Error::InvalidValue(format!("price {usd} must be > 0")));
    }
    Ok(usd.ln())
}

pub fn inv_log_target(y: f64) -> f64 {
    y.exp()
}

/// Hold out entire localities: `test` gets every record whose locality is in
/// the holdout set, `pool` the remainder.
pub fn split_geographic<'a>(
    records: &'a [HouseRecord],
    holdout_localities: &BTreeSet<String>,
) -> Result<(Vec<&'a HouseRecord>, Vec<&'a HouseRecord>)> {
    let mut pool = Vec::new();
    let mut test = Vec::new();
    for r in records {
        let loc = r
            .locality
            .as_ref()
            .ok_or_else(|| Error::MissingField("locality".into()))?;
        if holdout_localities.contains(loc) {
            test.push(r);
        } else {
            pool.push(r);
        }
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("geographic test split".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyInput("geographic training pool".into()));
    }
    Ok((pool, test))
}

/// Seeded shuffle split: `|train| = floor(fraction * |pool|)`, and both
/// sides must be non-empty.
///
/// ```
/// use mvre::tabular::split_random;
///
/// let pool: Vec<usize> = (0..10).collect();
/// let (train, test) = split_random(&pool, 0.8, 7)?;
/// assert_eq!((train.len(), test.len()), (8, 2));
/// let rerun = split_random(&pool, 0.8, 7)?;
/// assert_eq!(train, rerun.0);
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn split_random<T: Clone>(
    pool: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::InvalidValue(format!(
            "train fraction {train_fraction}"
        )));
    }
    let n_train = (train_fraction * pool.len() as f64).floor() as usize;
    if n_train == 0 || n_train == pool.len() {
        return Err(Error::EmptyInput("random split partition".into()));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let train = idx[..n_train].iter().map(|&i| pool[i].clone()).collect();
    let val = idx[n_train..].iter().map(|&i| pool[i].clone()).collect();
    Ok((train, val))
}

/// Read records from a CSV file with a header row matching the schema.
/// Optional columns: `lat`, `lon`, `locality`; the target column may be
/// absent for prediction-only data.
pub fn read_csv(path: &Path, schema: &DatasetSchema) -> Result<Vec<HouseRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut numeric_cols = Vec::new();
    for f in &schema.numeric_fields {
        numeric_cols.push(col(f).ok_or_else(|| Error::MissingField(f.clone()))?);
    }
    let mut cat_cols = Vec::new();
    for f in &schema.categorical_fields {
        cat_cols.push(col(&f.name).ok_or_else(|| Error::MissingField(f.name.clone()))?);
    }
    let target_col = col(&schema.target_field);
    let lat_col = col("lat");
    let lon_col = col("lon");
    let loc_col = col("locality");
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let mut numeric = Vec::with_capacity(numeric_cols.len());
        for (&i, name) in numeric_cols.iter().zip(&schema.numeric_fields) {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| Error::InvalidValue(format!("field '{name}': '{}'", field(i))))?;
            numeric.push(v);
        }
        let categorical = cat_cols.iter().map(|&i| field(i).to_string()).collect();
        let target = match target_col {
            Some(i) if !field(i).is_empty() => Some(field(i).parse().map_err(|_| {
                Error::InvalidValue(format!("target '{}'", field(i)))
            })?),
            _ => None,
        };
        let geo = match (lat_col, lon_col) {
            (Some(a), Some(o)) if !field(a).is_empty() && !field(o).is_empty() => {
                let lat: f64 = field(a)
                    .parse()
                    .map_err(|_| Error::InvalidValue(format!("lat '{}'", field(a))))?;
                let lon: f64 = field(o)
                    .parse()
                    .map_err(|_| Error::InvalidValue(format!("lon '{}'", field(o))))?;
                Some(GeoPoint::new(lat, lon)?)
            }
            _ => None,
        };
        let locality = loc_col.map(|i| field(i).to_string()).filter(|s| !s.is_empty());
        let record = HouseRecord {
            numeric,
            categorical,
            target,
            geo,
            locality,
        };
        record.validate(schema)?;
        records.push(record);
    }
    Ok(records)
}

/// Write records in the layout [`read_csv`] consumes.
pub fn write_csv(path: &Path, schema: &DatasetSchema, records: &[HouseRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = schema.numeric_fields.clone();
    header.extend(schema.categorical_fields.iter().map(|c| c.name.clone()));
    header.push(schema.target_field.clone());
    header.extend(["lat", "lon", "locality"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.numeric.iter().map(|v| format!("{v}")).collect();
        row.extend(r.categorical.iter().cloned());
        row.push(r.target.map(|t| format!("{t}")).unwrap_or_default());
        match &r.geo {
            Some(g) => {
                row.push(format!("{}", g.lat()));
                row.push(format!("{}", g.lon()));
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        row.push(r.locality.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            numeric_fields: vec!["sqft".into()],
            categorical_fields: vec![CategoricalField {
                name: "style".into(),
                vocabulary: vec!["A".into(), "B".into(), "C".into()],
            }],
            target_field: "price".into(),
        }
    }

    fn rec(sqft: f64, style: &str, locality: Option<&str>) -> HouseRecord {
        HouseRecord {
            numeric: vec![sqft],
            categorical: vec![style.into()],
            target: Some(100_000.0),
            geo: None,
            locality: locality.map(String::from),
        }
    }

    #[test]
    fn min_max_endpoints() {
        let recs = vec![rec(10.0, "A", None), rec(20.0, "A", None), rec(30.0, "A", None)];
        let (fm, _) = fit_transform(&recs, &schema()).unwrap();
        let col: Vec<f64> = fm.rows.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let recs = vec![rec(5.0, "A", None), rec(5.0, "B", None)];
        let (fm, _) = fit_transform(&recs, &schema()).unwrap();
        assert!(fm.rows.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn one_hot_indicator() {
        let recs = vec![rec(1.0, "B", None)];
        let stats = NormStats {
            mins: vec![0.0],
            maxs: vec![1.0],
        };
        let fm = transform(&recs, &schema(), &stats).unwrap();
        assert_eq!(&fm.rows[0][1..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn transform_does_not_clamp() {
        let stats = NormStats {
            mins: vec![10.0],
            maxs: vec![30.0],
        };
        let fm = transform(&[rec(40.0, "A", None)], &schema(), &stats).unwrap();
        assert!((fm.rows[0][0] - 1.5).abs() < 1e-12);
        let fm = transform(&[rec(10.0, "A", None)], &schema(), &stats).unwrap();
        assert_eq!(fm.rows[0][0], 0.0);
    }

    #[test]
    fn unseen_category_is_zero_group() {
        let stats = NormStats {
            mins: vec![0.0],
            maxs: vec![1.0],
        };
        let fm = transform(&[rec(0.5, "D", None)], &schema(), &stats).unwrap();
        assert_eq!(&fm.rows[0][1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_target_anchors() {
        // mid-six-figure anchor value
        let y = log_target(275_049.91).unwrap();
        assert!((y - 12.5246).abs() < 1e-3, "{y}");
        assert_eq!(log_target(1.0).unwrap(), 0.0);
        assert!(log_target(0.0).is_err());
        assert!(log_target(-5.0).is_err());
    }

    #[test]
    fn log_round_trip() {
        for &x in &[0.001, 1.0, 1234.5, 9.9e6] {
            let back = inv_log_target(log_target(x).unwrap());
            assert!((back - x).abs() / x <= 1e-9);
        }
    }

    #[test]
    fn geographic_split_partitions() {
        let recs: Vec<HouseRecord> = (0..20)
            .map(|i| rec(i as f64, "A", Some(&format!("L{}", i % 5))))
            .collect();
        let holdout: BTreeSet<String> = ["L4".to_string()].into();
        let (pool, test) = split_geographic(&recs, &holdout).unwrap();
        assert_eq!(test.len(), 4);
        assert_eq!(pool.len() + test.len(), recs.len());
        assert!(test.iter().all(|r| r.locality.as_deref() == Some("L4")));
    }

    #[test]
    fn empty_holdout_is_error() {
        let recs = vec![rec(1.0, "A", Some("L0"))];
        assert!(split_geographic(&recs, &BTreeSet::new()).is_err());
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let pool: Vec<u32> = (0..10).collect();
        let (a1, b1) = split_random(&pool, 0.8, 7).unwrap();
        let (a2, b2) = split_random(&pool, 0.8, 7).unwrap();
        assert_eq!(a1.len(), 8);
        assert_eq!(b1.len(), 2);
        assert_eq!((a1, b1), (a2, b2));
        let big: Vec<u32> = (0..2000).collect();
        let (t, v) = split_random(&big, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (1600, 400));
    }

    #[test]
    fn train_only_statistics_no_leakage() {
        let train = vec![rec(0.0, "A", None), rec(10.0, "A", None)];
        let (_, stats1) = fit_transform(&train, &schema()).unwrap();
        // perturbing a test row never changes the stats
        let fm = transform(&[rec(99.0, "A", None)], &schema(), &stats1).unwrap();
        assert!((fm.rows[0][0] - 9.9).abs() < 1e-12);
        let (_, stats2) = fit_transform(&train, &schema()).unwrap();
        assert_eq!(stats1, stats2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("homes.csv");
        let recs = vec![rec(1.0, "A", Some("L0")), rec(2.0, "C", Some("L1"))];
        write_csv(&path, &schema(), &recs).unwrap();
        let back = read_csv(&path, &schema()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn schema_rejects_target_in_features() {
        let mut s = schema();
        s.target_field = "sqft".into();
        assert!(s.validate().is_err());
    }
}
