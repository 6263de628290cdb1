//! `wsocc`: generate synthetic datasets, train occupancy fields, render
//! views, evaluate checkpoints, run the experiment matrix and export
//! occupancy grids.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use wsocc::evaluation::{self, default_matrix, evaluate, table_csv, EvalReport, ModelPredictor};
use wsocc::geometry::Aabb;
use wsocc::model::{checkpoint, FieldModel};
use wsocc::renderer::{extract_occupancy, render_view};
use wsocc::scenegen::{build_rig, generate_scenes, read_dataset, write_dataset, Dataset, SceneSource, Split};
use wsocc::training::{self, select_source_views, SourceSetting};

#[derive(Parser)]
#[command(name = "wsocc", version, about = "Workspace occupancy fields from posed RGB images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Output directory; must be absent or empty.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes [config: scenes, default 60].
        #[arg(long)]
        scenes: Option<usize>,
        /// Objects per scene [config: objects, default 5].
        #[arg(long)]
        objects: Option<usize>,
        /// Scenes held out for evaluation [config: eval_scenes, default 20].
        #[arg(long)]
        eval_scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run configuration (rig parameters and defaults).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory [config: data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path [config: out].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log path [default: <out>.log.jsonl].
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render RGB, depth and opacity images of one camera.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long)]
        camera: String,
        /// Source views [default: the checkpoint's training setting].
        #[arg(long)]
        setting: Option<SourceSetting>,
        /// Output directory for rgb.png, depth.png and opacity.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the evaluation split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Source views [default: the checkpoint's training setting].
        #[arg(long)]
        setting: Option<SourceSetting>,
        /// JSON report path.
        #[arg(long)]
        report: PathBuf,
        /// Also write a one-row table CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Score the training split instead.
        #[arg(long)]
        train_split: bool,
        /// Required together with --train-split.
        #[arg(long)]
        allow_train_eval: bool,
    },
    /// Train and evaluate every cell of the experiment matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory [config: data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory [config: out].
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the predicted occupancy of a scene as an OCCV file.
    ExportOccupancy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        /// Source views [default: the checkpoint's training setting].
        #[arg(long)]
        setting: Option<SourceSetting>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] wsocc::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn require(arg: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str, key: &str) -> CliResult<PathBuf> {
    arg.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("{flag} is required (or set \"{key}\" in the config)")))
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    Ok(RunConfig::load(path)?.with_seed(seed))
}

fn cmd_gen_data(
    out: &Path,
    scenes: Option<usize>,
    objects: Option<usize>,
    eval_scenes: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
) -> CliResult {
    let cfg = match config {
        Some(p) => load_config(p, seed)?,
        None => RunConfig::default().with_seed(seed),
    };
    let n = scenes.unwrap_or(cfg.scenes);
    let n_eval = eval_scenes.unwrap_or(cfg.eval_scenes.min(n));
    let k = objects.unwrap_or(cfg.objects);
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(io_err(out))?;
        if entries.next().is_some() {
            return Err(wsocc::Error::Config(format!("output directory {} is not empty", out.display())).into());
        }
    }
    let workspace = Aabb::default_workspace();
    let scenes = generate_scenes(cfg.seed, n, k, &workspace)?;
    let rig = build_rig(&workspace, &cfg.rig)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let split = Split::tail(&ids, n_eval)?;
    let manifest = write_dataset(&scenes, &rig, &split, out)?;
    eprintln!(
        "wrote {} scenes ({} train / {} eval) to {}",
        manifest.scene_ids.len(),
        manifest.split.train.len(),
        manifest.split.eval.len(),
        out.display()
    );
    Ok(())
}

fn open_dataset(dir: &Path) -> CliResult<Dataset> {
    Ok(read_dataset(dir)?)
}

fn cmd_train(cfg: RunConfig, data: &Path, out: &Path, log: &Path) -> CliResult {
    let ds = open_dataset(data)?;
    let model = FieldModel::new(cfg.arch.clone(), cfg.seed)?;
    let hash = cfg.hash();
    let metadata = |epochs: usize| {
        let mut m = training::checkpoint_metadata(&cfg.train, epochs);
        m["config_hash"] = serde_json::Value::String(hash.clone());
        m
    };
    if let Some(dir) = log.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut log_file = fs::File::create(log).map_err(io_err(log))?;
    let mut write_err = None;
    let outcome = training::train(model, &ds, &cfg.train, |entry, model| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        eprintln!("epoch {:>4}  mse {:.6}  beta {:.6}  {} ms", entry.epoch, entry.mse, entry.beta, entry.wall_ms);
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err = Some(e);
        }
        if cfg.checkpoint_every > 0 && entry.epoch % cfg.checkpoint_every == 0 && entry.epoch < cfg.train.epochs {
            checkpoint::save(out, model, &metadata(entry.epoch))?;
        }
        Ok(())
    })?;
    if let Some(e) = write_err {
        return Err(io_err(log)(e));
    }
    checkpoint::save(out, &outcome.model, &metadata(cfg.train.epochs))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

struct Loaded {
    model: FieldModel,
    setting: SourceSetting,
    n_train: usize,
    seed: u64,
    config_hash: Option<String>,
}

fn load_checkpoint(path: &Path, setting: Option<SourceSetting>) -> CliResult<Loaded> {
    let ck = checkpoint::load(path)?;
    let train: Option<training::TrainConfig> = ck
        .metadata
        .get("train")
        .and_then(|t| serde_json::from_value(t.clone()).ok());
    let train = train.unwrap_or_default();
    Ok(Loaded {
        model: ck.model,
        setting: setting.unwrap_or(train.source_setting),
        n_train: train.n_train_scenes,
        seed: train.seed,
        config_hash: ck.metadata.get("config_hash").and_then(|h| h.as_str()).map(String::from),
    })
}

fn cmd_render(ckpt: &Path, data: &Path, scene: &str, camera: &str, setting: Option<SourceSetting>, out: &Path) -> CliResult {
    let ck = load_checkpoint(ckpt, setting)?;
    let ds = open_dataset(data)?;
    let target = ds.load_view(scene, camera)?;
    let sources = select_source_views(&ds, scene, ck.setting)?;
    let enc = ck.model.encode(&sources, false)?;
    let view = render_view(&ck.model, &enc, &target.intrinsics, &target.pose, &target.background_rgb, None)?;
    view.save(out)?;
    eprintln!("wrote rgb.png, depth.png and opacity.png to {}", out.display());
    Ok(())
}

fn cmd_evaluate(
    ckpt: &Path,
    data: &Path,
    setting: Option<SourceSetting>,
    report: &Path,
    csv: Option<&Path>,
    train_split: bool,
) -> CliResult {
    let ck = load_checkpoint(ckpt, setting)?;
    let ds = open_dataset(data)?;
    training::check_compatible(&ck.model, &ds)?;
    let split = &ds.manifest().split;
    let scenes = if train_split { &split.train } else { &split.eval };
    if scenes.is_empty() {
        return Err(wsocc::Error::Config("selected split has no scenes".into()).into());
    }
    let mut r = evaluate(&ModelPredictor(&ck.model), &ds, scenes, ck.setting, ck.n_train, ck.seed)?;
    r.config_hash = ck.config_hash;
    write_json(report, &r)?;
    if let Some(csv) = csv {
        write_file(csv, table_csv(std::slice::from_ref(&r)).as_bytes())?;
    }
    print_summary(&r);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    let mae = r.mae_depth.map_or("n/a".to_string(), |m| format!("{m:.5}"));
    eprintln!(
        "{} n_train={} mae_depth={mae} psnr={:.2} valid={:.3}",
        r.source_setting, r.n_train, r.psnr, r.valid_pixel_fraction
    );
}

fn cmd_matrix(cfg: RunConfig, data: &Path, report: &Path) -> CliResult {
    let ds = open_dataset(data)?;
    let cells = cfg.matrix.clone().unwrap_or_else(default_matrix);
    let hash = cfg.hash();
    write_file(&report.join("config.json"), cfg.to_json().as_bytes())?;
    let mut index = 0;
    let mut reports = evaluation::run_matrix(&ds, &cells, &cfg.arch, &cfg.train, |_, r| {
        index += 1;
        print_summary(r);
        Ok(())
    })?;
    debug_assert_eq!(index, cells.len());
    for (i, r) in reports.iter_mut().enumerate() {
        r.config_hash = Some(hash.clone());
        write_json(&report.join(format!("cell_{i}.json")), r)?;
    }
    write_json(&report.join("matrix.json"), &reports)?;
    write_file(&report.join("table.csv"), table_csv(&reports).as_bytes())?;
    eprintln!("wrote {} cells to {}", reports.len(), report.display());
    Ok(())
}

fn cmd_export_occupancy(ckpt: &Path, data: &Path, scene: &str, setting: Option<SourceSetting>, out: &Path) -> CliResult {
    let ck = load_checkpoint(ckpt, setting)?;
    let ds = open_dataset(data)?;
    let sources = select_source_views(&ds, scene, ck.setting)?;
    let enc = ck.model.encode(&sources, false)?;
    let occ = extract_occupancy(&ck.model, &enc, ck.model.grid())?;
    write_file(out, &occ.to_bytes())?;
    eprintln!("wrote {:?} voxels to {}", occ.grid.dims, out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData {
            out,
            scenes,
            objects,
            eval_scenes,
            seed,
            config,
        } => cmd_gen_data(&out, scenes, objects, eval_scenes, seed, config.as_deref()),
        Command::Train {
            config,
            data,
            out,
            log,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let data = require(data, &cfg.data, "--data", "data")?;
            let out = require(out, &cfg.out, "--out", "out")?;
            let log = log.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".log.jsonl");
                s.into()
            });
            cmd_train(cfg, &data, &out, &log)
        }
        Command::Render {
            ckpt,
            data,
            scene,
            camera,
            setting,
            out,
        } => cmd_render(&ckpt, &data, &scene, &camera, setting, &out),
        Command::Evaluate {
            ckpt,
            data,
            setting,
            report,
            csv,
            train_split,
            allow_train_eval,
        } => {
            if train_split && !allow_train_eval {
                return Err(CliError::Usage(
                    "refusing to evaluate on the training split without --allow-train-eval".into(),
                ));
            }
            cmd_evaluate(&ckpt, &data, setting, &report, csv.as_deref(), train_split)
        }
        Command::Matrix {
            config,
            data,
            report,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let data = require(data, &cfg.data, "--data", "data")?;
            let report = require(report, &cfg.out, "--report", "out")?;
            cmd_matrix(cfg, &data, &report)
        }
        Command::ExportOccupancy {
            ckpt,
            data,
            scene,
            setting,
            out,
        } => cmd_export_occupancy(&ckpt, &data, &scene, setting, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            Cli::command()
                .error(clap::error::ErrorKind::ArgumentConflict, msg)
                .exit();
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
