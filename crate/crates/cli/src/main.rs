//! `gazemap` — scene generation, observation-model fitting, and
//! search/exploration campaigns from the command line.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for trial
//! failures at runtime.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use gazemap_core::calibration::{CalibrationModel, EccentricityBins};
use gazemap_core::campaign::{
    run_explore_campaign, run_search_campaign, validate_campaign, CampaignConfig, CampaignReport,
};
use gazemap_core::simworld::{
    generate_scene, generate_training_records, read_training_records, write_training_records,
    EmulatorConfig, SceneGenConfig,
};

#[derive(Parser)]
#[command(name = "gazemap", version, about = "Semantic-map gaze campaigns on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene files plus a manifest.
    GenScenes {
        /// Number of scenes to generate.
        #[arg(long)]
        count: usize,
        /// Number of object classes K.
        #[arg(long, default_value_t = 5)]
        classes: usize,
        /// Canvas size as WxH pixels.
        #[arg(long, value_parser = parse_canvas, default_value = "640x480")]
        canvas: (f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        min_objects: usize,
        #[arg(long, default_value_t = 14)]
        max_objects: usize,
        /// Area cap for target instances as a canvas fraction.
        #[arg(long, default_value_t = 0.2)]
        target_area_cap: f64,
    },
    /// Generate labeled detector records for calibration training.
    GenTrain {
        /// Number of records.
        #[arg(long)]
        count: usize,
        /// Number of object classes K (ignored when --emulator is given).
        #[arg(long, default_value_t = 5)]
        classes: usize,
        /// Eccentricity levels N (ignored when --emulator is given).
        #[arg(long, default_value_t = 5)]
        levels: usize,
        /// Emulator config JSON; defaults apply when omitted.
        #[arg(long)]
        emulator: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON-lines file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the foveal observation model from records or from the emulator.
    FitCalib {
        /// Training records (JSON lines).
        #[arg(long, conflicts_with = "emulate")]
        records: Option<PathBuf>,
        /// Generate training records from the emulator instead.
        #[arg(long)]
        emulate: bool,
        /// Emulator config JSON for --emulate; defaults apply when omitted.
        #[arg(long, requires = "emulate")]
        emulator: Option<PathBuf>,
        /// Number of eccentricity bins N.
        #[arg(long)]
        bins: usize,
        /// Output model JSON file.
        #[arg(long)]
        out: PathBuf,
        /// Records to generate in --emulate mode.
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Number of object classes K in --emulate mode.
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum samples for a (class, level) bin to be fitted directly.
        #[arg(long, default_value_t = 50)]
        min_samples: usize,
    },
    /// Run a visual-search campaign from a config file.
    RunSearch {
        #[arg(long)]
        config: PathBuf,
        /// Trial parallelism; defaults to the rayon global pool.
        #[arg(long)]
        jobs: Option<usize>,
        /// Replaces the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for CSVs and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scene-exploration campaign from a config file.
    RunExplore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a campaign output directory.
    Report {
        /// Campaign output directory (with manifest.json).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output format; only "csv" is supported.
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    }
}

fn parse_canvas(value: &str) -> Result<(f64, f64), String> {
    let (w, h) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {value:?}"))?;
    let w: f64 = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: f64 = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    if w <= 0.0 || h <= 0.0 {
        return Err("canvas dimensions must be positive".into());
    }
    Ok((w, h))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenScenes {
            count,
            classes,
            canvas,
            seed,
            out,
            min_objects,
            max_objects,
            target_area_cap,
        } => gen_scenes(
            count,
            classes,
            canvas,
            seed,
            &out,
            min_objects,
            max_objects,
            target_area_cap,
        ),
        Command::GenTrain {
            count,
            classes,
            levels,
            emulator,
            seed,
            out,
        } => gen_train(count, classes, levels, emulator.as_deref(), seed, &out),
        Command::FitCalib {
            records,
            emulate,
            emulator,
            bins,
            out,
            count,
            classes,
            seed,
            min_samples,
        } => fit_calib(
            records.as_deref(),
            emulate,
            emulator.as_deref(),
            bins,
            &out,
            count,
            classes,
            seed,
            min_samples,
        ),
        Command::RunSearch {
            config,
            jobs,
            seed,
            out,
        } => run_campaign_cmd(&config, jobs, seed, &out, CampaignKindArg::Search),
        Command::RunExplore {
            config,
            jobs,
            seed,
            out,
        } => run_campaign_cmd(&config, jobs, seed, &out, CampaignKindArg::Explore),
        Command::Report { input, format } => report(&input, &format),
    }
}

#[derive(Serialize)]
struct ScenesManifest {
    count: usize,
    seed: u64,
    config: SceneGenConfig,
    files: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn gen_scenes(
    count: usize,
    classes: usize,
    canvas: (f64, f64),
    seed: u64,
    out: &Path,
    min_objects: usize,
    max_objects: usize,
    target_area_cap: f64,
) -> Result<(), CliError> {
    let config = SceneGenConfig {
        num_classes: classes,
        canvas_width: canvas.0,
        canvas_height: canvas.1,
        min_objects,
        max_objects,
        target_area_cap,
        ..SceneGenConfig::default()
    };
    std::fs::create_dir_all(out).map_err(CliError::config)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(&config, &mut rng).map_err(CliError::config)?;
        let name = format!("scene_{i:04}.json");
        scene
            .write_json(&out.join(&name))
            .map_err(CliError::runtime)?;
        files.push(name);
    }
    let manifest = ScenesManifest {
        count,
        seed,
        config,
        files,
    };
    write_json_pretty(&out.join("manifest.json"), &manifest)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn load_emulator(
    path: Option<&Path>,
    classes: usize,
    levels: usize,
) -> Result<EmulatorConfig, CliError> {
    match path {
        Some(p) => EmulatorConfig::read_json(p).map_err(CliError::config),
        None => EmulatorConfig::default_with(classes, levels).map_err(CliError::config),
    }
}

fn gen_train(
    count: usize,
    classes: usize,
    levels: usize,
    emulator: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let config = load_emulator(emulator, classes, levels)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let records = generate_training_records(&config, count, &mut rng);
    write_training_records(out, &records).map_err(CliError::runtime)?;
    println!("wrote {count} records to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_calib(
    records: Option<&Path>,
    emulate: bool,
    emulator: Option<&Path>,
    bins: usize,
    out: &Path,
    count: usize,
    classes: usize,
    seed: u64,
    min_samples: usize,
) -> Result<(), CliError> {
    let bins = EccentricityBins::uniform(bins).map_err(CliError::config)?;
    let (records, num_classes) = match (records, emulate) {
        (Some(path), false) => {
            let records = read_training_records(path).map_err(CliError::config)?;
            if records.is_empty() {
                return Err(CliError::Config(format!("{}: no records", path.display())));
            }
            let k = records[0].scores.len() - 1;
            (records, k)
        }
        (None, true) => {
            let emulator = load_emulator(emulator, classes, bins.num_levels())?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let k = emulator.num_classes;
            (generate_training_records(&emulator, count, &mut rng), k)
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --records or --emulate is required".into(),
            ))
        }
    };
    let model =
        CalibrationModel::train_with_min_samples(&records, num_classes, bins, min_samples)
            .map_err(CliError::runtime)?;
    model.write_json(out).map_err(CliError::runtime)?;

    let levels = model.bins().num_levels();
    println!("per-bin sample counts (class x level), * = resolved by backoff:");
    for k in 0..=num_classes {
        let mut line = format!("  class {k}:");
        for d in 0..levels {
            let marker = if model.is_backed_off(k, d) { "*" } else { "" };
            write!(line, " {:>7}{}", model.count(k, d), marker).expect("infallible");
        }
        println!("{line}");
    }
    let backoffs = (0..=num_classes)
        .flat_map(|k| (0..levels).map(move |d| (k, d)))
        .filter(|&(k, d)| model.is_backed_off(k, d))
        .count();
    println!("{backoffs} of {} bins resolved by backoff", (num_classes + 1) * levels);
    println!("wrote model to {}", out.display());
    Ok(())
}

enum CampaignKindArg {
    Search,
    Explore,
}

fn run_campaign_cmd(
    config_path: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    kind: CampaignKindArg,
) -> Result<(), CliError> {
    let mut config = CampaignConfig::read_json(config_path).map_err(CliError::config)?;
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    validate_campaign(&config).map_err(CliError::config)?;
    let report = match kind {
        CampaignKindArg::Search => run_search_campaign(&config, out, jobs),
        CampaignKindArg::Explore => run_explore_campaign(&config, out, jobs),
    }
    .map_err(CliError::runtime)?;
    print_report_summary(&report);
    Ok(())
}

fn print_report_summary(report: &CampaignReport) {
    for run in &report.runs {
        println!(
            "{} seed {}: final {:.4}, mean policy time {:.3} ms",
            run.policy,
            run.seed,
            run.mean.last().copied().unwrap_or(0.0),
            run.mean_policy_time_s * 1e3
        );
    }
    println!("manifest: {}", report.manifest_file);
}

fn report(input: &Path, format: &str) -> Result<(), CliError> {
    if format != "csv" {
        return Err(CliError::Config(format!(
            "unsupported format {format:?}; only csv is available"
        )));
    }
    let manifest_path = input.join("manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?,
    )
    .map_err(CliError::config)?;
    let kind = manifest["kind"].as_str().unwrap_or("search");
    let csv_files: Vec<String> = manifest["csv_files"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_str().map(String::from))
                .collect()
        })
        .unwrap_or_default();
    if csv_files.is_empty() {
        return Err(CliError::Config("manifest lists no CSV files".into()));
    }

    // Search rows are keyed by 1-based iteration, explore rows by saccade.
    let probes: [usize; 3] = if kind == "search" { [5, 15, 30] } else { [1, 3, 5] };
    let label = if kind == "search" { "cp" } else { "sr" };
    println!(
        "policy,seed,{label}_at_{},{label}_at_{},{label}_at_{},max_sem,mean_time_ms",
        probes[0], probes[1], probes[2]
    );
    for file in csv_files {
        let path = input.join(&file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("{file}: {e}")))?;
        let mut values = Vec::new();
        let mut sems = Vec::new();
        let mut times = Vec::new();
        let mut keys = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(CliError::Config(format!("{file}: malformed row {line:?}")));
            }
            let parse = |s: &str| -> Result<f64, CliError> {
                s.parse()
                    .map_err(|e| CliError::Config(format!("{file}: bad number {s:?}: {e}")))
            };
            keys.push(parse(cols[0])? as usize);
            values.push(parse(cols[1])?);
            sems.push(parse(cols[2])?);
            times.push(parse(cols[3])?);
        }
        let value_at = |probe: usize| -> f64 {
            keys.iter()
                .position(|&k| k >= probe)
                .or(if keys.is_empty() { None } else { Some(keys.len() - 1) })
                .map(|i| values[i])
                .unwrap_or(0.0)
        };
        let max_sem = sems.iter().copied().fold(0.0f64, f64::max);
        let mean_time_ms = if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64 * 1e3
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.clone());
        let (policy, seed) = stem
            .rsplit_once("_seed")
            .map(|(p, s)| (p.to_string(), s.to_string()))
            .unwrap_or((stem.clone(), "0".into()));
        println!(
            "{},{},{:.4},{:.4},{:.4},{:.6},{:.4}",
            policy,
            seed,
            value_at(probes[0]),
            value_at(probes[1]),
            value_at(probes[2]),
            max_sem,
            mean_time_ms
        );
    }
    Ok(())
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    std::fs::write(path, text + "\n").map_err(CliError::runtime)
}
