use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvre::evalreport::{emit, evaluate, EvalReport, ReportFormat};
use mvre::geotile::{ground_resolution, latlon_to_tile, tile_to_quadkey, GeoPoint, TileSource};
use mvre::strategies::{
    extract_coefficients, load_artifact, save_artifact, train, Dataset, StrategyId, TrainConfig,
};
use mvre::synthbench::{generate, SynthConfig};
use mvre::tabular::{read_csv, split_geographic, split_random, DatasetSchema, HouseRecord};
use mvre::{Error, Result};

#[derive(Parser)]
#[command(name = "mvre", about = "Multi-view regression benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV + tile store) from a known price law
    Synth(SynthArgs),
    /// Tile math: quadkey lookup and ground resolution
    Tiles(TilesArgs),
    /// Train one strategy (or all) and persist artifacts
    Train(TrainArgs),
    /// Evaluate trained artifacts on a split and emit reports
    Eval(EvalArgs),
    /// Print the coefficient report of an interpretable artifact
    Coef(CoefArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Image-signal coefficient
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    gamma: f64,
    /// Log-space noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Tabular-image interaction coefficient
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    interaction: f64,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TilesArgs {
    #[command(subcommand)]
    command: TilesCommand,
}

#[derive(Subcommand)]
enum TilesCommand {
    /// Tile coordinate and quadkey containing a point
    Quadkey {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(long, default_value_t = 16)]
        level: u8,
    },
    /// Meters per pixel and tile footprint at a latitude
    Resolution {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, default_value_t = 16)]
        level: u8,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// baseline, m1..m5, or all
    #[arg(long)]
    model: String,
    /// Dataset directory (data.csv + schema.json) or CSV file
    #[arg(long)]
    data: PathBuf,
    /// Tile store directory; defaults to <data>/tiles when --data is a directory
    #[arg(long)]
    tiles: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Localities excluded from training (comma separated)
    #[arg(long)]
    holdout: Option<String>,
    /// Worker threads for --model all
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding one artifact subdirectory per strategy
    #[arg(long)]
    artifacts: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tiles: Option<PathBuf>,
    /// geo:<name,...> or random
    #[arg(long, default_value = "random")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoefArgs {
    #[arg(long)]
    artifact: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotInterpretable(_) => 2,
        Error::MissingTile(_)
        | Error::MissingField(_)
        | Error::MalformedImage(..)
        | Error::RetryExhausted { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Tiles(args) => cmd_tiles(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Coef(args) => cmd_coef(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default_with(args.n, args.gamma, args.sigma, args.seed);
    cfg.interaction = args.interaction;
    cfg.image_size = args.image_size;
    let ds = generate(&cfg)?;
    ds.write(&args.out)?;
    println!("wrote {} records to {}", ds.records.len(), args.out.display());
    print_summary(&ds.schema, &ds.records);
    Ok(())
}

fn print_summary(schema: &DatasetSchema, records: &[HouseRecord]) {
    println!("| Variable | Mean | Std Dev | Minimum | Maximum |");
    println!("|---|---|---|---|---|");
    let stats = |vals: &[f64]| {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    };
    for (j, name) in schema.numeric_fields.iter().enumerate() {
        let col: Vec<f64> = records.iter().map(|r| r.numeric[j]).collect();
        let (m, s, lo, hi) = stats(&col);
        println!("| {name} | {m:.4} | {s:.4} | {lo:.4} | {hi:.4} |");
    }
    let targets: Vec<f64> = records.iter().filter_map(|r| r.target).collect();
    if !targets.is_empty() {
        let (m, s, lo, hi) = stats(&targets);
        println!(
            "| {} | {m:.2} | {s:.2} | {lo:.2} | {hi:.2} |",
            schema.target_field
        );
    }
}

fn cmd_tiles(args: TilesArgs) -> Result<()> {
    match args.command {
        TilesCommand::Quadkey { lat, lon, level } => {
            let tile = latlon_to_tile(GeoPoint::new(lat, lon)?, level)?;
            let quadkey = tile_to_quadkey(tile);
            println!("tile ({}, {}) level {}", tile.x, tile.y, tile.level);
            println!("quadkey {quadkey}");
            Ok(())
        }
        TilesCommand::Resolution { lat, level } => {
            let res = ground_resolution(lat, level);
            let footprint = res * 256.0;
            println!("{res:.4} m/px at latitude {lat:.4}, level {level}");
            println!("tile footprint {footprint:.1} m");
            Ok(())
        }
    }
}

/// Resolve the tile source: explicit store directory, the MVRE_TILE_ENDPOINT
/// remote template, or the dataset's own tiles/ directory.
fn tile_source(data: &Path, tiles: Option<&PathBuf>) -> Option<TileSource> {
    if let Ok(template) = std::env::var("MVRE_TILE_ENDPOINT") {
        let cache = std::env::temp_dir().join("mvre-tile-cache");
        return Some(TileSource::remote(&template, cache));
    }
    if let Some(dir) = tiles {
        return Some(TileSource::store(dir.clone()));
    }
    let default = data.join("tiles");
    default.is_dir().then(|| TileSource::store(default))
}

fn load_dataset(data: &Path, tiles: Option<&PathBuf>, want_images: bool) -> Result<Dataset> {
    let (csv_path, schema_path) = if data.is_dir() {
        (data.join("data.csv"), data.join("schema.json"))
    } else {
        let schema = data
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("schema.json");
        (data.to_path_buf(), schema)
    };
    let schema = DatasetSchema::from_json_file(&schema_path)?;
    let records = read_csv(&csv_path, &schema)?;
    let images = if want_images {
        let source = tile_source(data, tiles)
            .ok_or_else(|| Error::MissingField("image source required (--tiles)".into()))?;
        let mut quadkeys = Vec::with_capacity(records.len());
        for r in &records {
            let geo = r
                .geo
                .ok_or_else(|| Error::MissingField("lat/lon required for image models".into()))?;
            quadkeys.push(tile_to_quadkey(latlon_to_tile(geo, 16)?));
        }
        let fetched = source.fetch_all(&quadkeys, 4);
        let mut images = Vec::with_capacity(fetched.len());
        for r in fetched {
            images.push(r?);
        }
        Some(images)
    } else {
        None
    };
    Dataset::new(schema, records, images)
}

fn parse_models(spec: &str) -> Result<Vec<StrategyId>> {
    if spec == "all" {
        Ok(StrategyId::ALL.to_vec())
    } else {
        spec.split(',').map(StrategyId::parse).collect()
    }
}

fn output_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var("MVRE_OUT").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mvre-out"))
}

#[derive(serde::Serialize)]
struct RunManifest {
    config_digest: String,
    strategies: Vec<String>,
    seed: u64,
    data_source: String,
    output_dir: String,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let models = parse_models(&args.model)?;
    let want_images = models.iter().any(|m| m.needs_images());
    let dataset = load_dataset(&args.data, args.tiles.as_ref(), want_images)?;
    let pool: Vec<usize> = match &args.holdout {
        None => (0..dataset.len()).collect(),
        Some(names) => {
            let holdout: BTreeSet<String> = names.split(',').map(str::to_string).collect();
            split_geographic(&dataset.records, &holdout)?;
            (0..dataset.len())
                .filter(|&i| {
                    !dataset.records[i]
                        .locality
                        .as_ref()
                        .is_some_and(|l| holdout.contains(l))
                })
                .collect()
        }
    };
    let (train_idx, val_idx) = split_random(&pool, 0.8, args.seed)?;
    let train_set = dataset.subset(&train_idx);
    let val_set = dataset.subset(&val_idx);

    let image_size = dataset
        .images
        .as_ref()
        .and_then(|imgs| imgs.first())
        .map(|img| img.height())
        .unwrap_or(args.image_size);
    let cfg = TrainConfig {
        lr: args.lr,
        batch: args.batch,
        max_epochs: args.epochs,
        seed: args.seed,
        image_size,
        ..TrainConfig::default()
    };
    let out_root = output_root(args.out);
    std::fs::create_dir_all(&out_root)?;

    let jobs = args.jobs.max(1);
    let errors: std::sync::Mutex<Vec<Error>> = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for chunk in models.chunks(jobs) {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&strategy| {
                    let (train_set, val_set, cfg, out_root) =
                        (&train_set, &val_set, &cfg, &out_root);
                    let errors = &errors;
                    scope.spawn(move || {
                        let result = train(strategy, train_set, val_set, cfg).and_then(|a| {
                            let dir = out_root.join(strategy.as_str());
                            save_artifact(&a, &dir)?;
                            println!("trained {} -> {}", strategy.as_str(), dir.display());
                            Ok(())
                        });
                        if let Err(e) = result {
                            errors.lock().unwrap().push(e);
                        }
                    })
                })
                .collect();
            for h in handles {
                let _ = h.join();
            }
        }
    });
    if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let manifest = RunManifest {
        config_digest: cfg.digest(),
        strategies: models.iter().map(|m| m.as_str().to_string()).collect(),
        seed: args.seed,
        data_source: args.data.display().to_string(),
        output_dir: out_root.display().to_string(),
    };
    serde_json::to_writer_pretty(
        std::fs::File::create(out_root.join("run_manifest.json"))?,
        &manifest,
    )?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let format: ReportFormat = args.format.parse()?;
    let mut artifact_dirs: Vec<PathBuf> = std::fs::read_dir(&args.artifacts)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    artifact_dirs.sort();
    if artifact_dirs.is_empty() {
        return Err(Error::Artifact(format!(
            "no artifacts under {}",
            args.artifacts.display()
        )));
    }
    let artifacts: Vec<_> = artifact_dirs
        .iter()
        .map(|d| load_artifact(d))
        .collect::<Result<_>>()?;
    let want_images = artifacts
        .iter()
        .any(|a: &mvre::strategies::TrainedArtifact| {
            a.strategy.needs_images() && !a.config.disable_image
        });
    let dataset = load_dataset(&args.data, args.tiles.as_ref(), want_images)?;

    let test_idx: Vec<usize> = if let Some(names) = args.split.strip_prefix("geo:") {
        let holdout: BTreeSet<String> = names.split(',').map(str::to_string).collect();
        (0..dataset.len())
            .filter(|&i| {
                dataset.records[i]
                    .locality
                    .as_ref()
                    .is_some_and(|l| holdout.contains(l))
            })
            .collect()
    } else if args.split == "random" {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let (_, test) = split_random(&all, 0.8, args.seed)?;
        test
    } else {
        return Err(Error::InvalidValue(format!(
            "unknown split '{}' (expected geo:<names> or random)",
            args.split
        )));
    };
    if test_idx.is_empty() {
        return Err(Error::EmptyInput("evaluation split".into()));
    }
    let test_set = dataset.subset(&test_idx);
    let truths: Vec<f64> = test_set
        .records
        .iter()
        .map(|r| r.target.ok_or_else(|| Error::MissingField("target".into())))
        .collect::<Result<_>>()?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for artifact in &artifacts {
        let preds = artifact.predict(&test_set)?;
        reports.push(evaluate(
            artifact.strategy.as_str(),
            &args.split,
            artifact.config.seed,
            &preds,
            &truths,
            &artifact.config.digest(),
        )?);
    }
    let doc = emit(&reports, format)?;
    print!("{doc}");
    if let Some(out) = args.out {
        let dir = out.join("reports");
        std::fs::create_dir_all(&dir)?;
        let ext = match format {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        };
        std::fs::write(dir.join(format!("eval.{ext}")), &doc)?;
    }
    Ok(())
}

fn cmd_coef(args: CoefArgs) -> Result<()> {
    let artifact = load_artifact(&args.artifact)?;
    let report = extract_coefficients(&artifact)?;
    println!("strategy: {}", report.strategy);
    println!("| Variable | Coefficient | Std Error | t-value |");
    println!("|---|---|---|---|");
    for c in &report.coefficients {
        let se = c
            .std_error
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        let t = c
            .t_value
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        println!("| {} | {:.4} | {se} | {t} |", c.name, c.value);
    }
    Ok(())
}
