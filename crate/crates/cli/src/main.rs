mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use headpose::crops::to_unit_gray;
use headpose::dataio::{load_dataset, make_splits, synth_generate, DatasetFormat, FrameRecord, SplitSpec, SynthConfig};
use headpose::ffd::{build_ffd, ffd_infer, train_ffd, write_history_csv, Ffd};
use headpose::localizer::{build_localizer, train_localizer};
use headpose::metrics::{emit_report, read_report_csv, read_report_json};
use headpose::pipeline::{
    contact_sheet, evaluate, ffd_pairs, head_inputs, order_frames, pose_samples, run_pipeline, shoulder_samples, Models,
};
use headpose::posenet::{build_shoulder_net, new_trident, save_branch, train_shoulder_net, train_two_phase, write_epoch_csv, SHOULDER_KIND};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "headpose", version, about = "Depth-only head and shoulder pose estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root in the canonical layout.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, default_value = "synthetic")]
    format: DatasetFormat,
    /// Subject-wise split specification (JSON).
    #[arg(long, global = true)]
    split: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Crop around annotated head centres instead of localizer output.
    #[arg(long, global = true)]
    use_gt_center: bool,
    /// Output directory for checkpoints, histories and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset into --out.
    Synth {
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
    TrainLocalizer,
    TrainFfd,
    /// Two-phase trident training; needs a trained FfD checkpoint.
    TrainPose,
    TrainShoulders,
    /// Evaluate on the test split and write report.csv / report.json.
    Eval,
    /// Per-frame results as frames.json, optionally with PNG contact sheets.
    Infer {
        #[arg(long)]
        sheets: bool,
    },
    /// Print a report written by `eval`.
    Report {
        /// Report file (.csv or .json); defaults to <out>/report.json.
        path: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(c.seed, c.use_gt_center, &c.out);
    match &cli.command {
        Command::Synth { subjects, frames } => {
            if *subjects == 0 || *frames == 0 {
                return Err(CliError::Config("--subjects and --frames must be positive".into()));
            }
            let records = synth_generate(&SynthConfig::default(), *subjects, *frames, cfg.seed(), &c.out)?;
            println!("wrote {} frames to {}", records.len(), c.out.display());
        }
        Command::TrainLocalizer => {
            let records = load(c)?;
            let train = select(c, &records, Part::Train)?;
            let mut model = build_localizer(&cfg.localizer, cfg.localizer_hyper.seed)?;
            let history = train_localizer(&mut model, &train, &cfg.localizer_hyper)?;
            fs::create_dir_all(&c.out).map_err(|e| CliError::Data(e.to_string()))?;
            model.save(&c.out.join("localizer.ckpt"))?;
            let lines: String = history.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")).collect();
            fs::write(c.out.join("localizer_history.csv"), format!("epoch,loss\n{lines}")).map_err(|e| CliError::Data(e.to_string()))?;
            println!("train error {:.3} px over {} frames", model.mean_error(&train)?, train.len());
        }
        Command::TrainFfd => {
            let records = load(c)?;
            let train = select(c, &records, Part::Train)?;
            let pairs = ffd_pairs(&train, cfg.pipeline.head_extent_mm)?;
            let mut model = build_ffd(&cfg.generator, &cfg.discriminator, cfg.gan.seed)?;
            let history = train_ffd(&mut model, &pairs, &cfg.gan)?;
            fs::create_dir_all(&c.out).map_err(|e| CliError::Data(e.to_string()))?;
            model.save(&c.out.join("ffd.ckpt"))?;
            write_history_csv(&c.out.join("ffd_history.csv"), &history)?;
            if let Some(last) = history.last() {
                println!("step {} pooled SSE {:.4}", last.step, last.g_sse);
            }
        }
        Command::TrainPose => {
            let records = load(c)?;
            let train = select(c, &records, Part::Train)?;
            let ffd_path = cfg.checkpoint(&cfg.pipeline.ffd, "ffd.ckpt");
            let generator = Ffd::load(&ffd_path)?.generator;
            let samples = pose_samples(&train, &generator, cfg.pipeline.head_extent_mm)?;
            let refs: Vec<_> = samples.iter().collect();
            let mut trident = new_trident(&cfg.trident, cfg.pose.seed)?;
            let report = train_two_phase(&mut trident, &refs, &cfg.pose)?;
            fs::create_dir_all(&c.out).map_err(|e| CliError::Data(e.to_string()))?;
            trident.save(&c.out.join("trident.ckpt"))?;
            for (name, h) in ["depth", "ffd", "motion"].iter().zip(&report.phase1) {
                write_epoch_csv(&c.out.join(format!("pose_phase1_{name}.csv")), h)?;
            }
            write_epoch_csv(&c.out.join("pose_phase2.csv"), &report.phase2)?;
            if let Some(l) = report.phase2.last() {
                println!("phase 2 error pitch {:.2} roll {:.2} yaw {:.2} deg", l.err_pitch, l.err_roll, l.err_yaw);
            }
        }
        Command::TrainShoulders => {
            let records = load(c)?;
            let train = select(c, &records, Part::Train)?;
            let crops = shoulder_samples(&train, cfg.pipeline.head_extent_mm, cfg.pipeline.shoulder_extent_mm)?;
            let crops: Vec<_> = crops.iter().map(|(id, img, p)| (id.clone(), img, *p)).collect();
            let mut net = build_shoulder_net(&cfg.shoulder, cfg.pose.seed)?;
            let history = train_shoulder_net(&mut net, &crops, &cfg.pose)?;
            fs::create_dir_all(&c.out).map_err(|e| CliError::Data(e.to_string()))?;
            save_branch(&net, SHOULDER_KIND, &c.out.join("shoulder.ckpt"))?;
            write_epoch_csv(&c.out.join("shoulder_history.csv"), &history)?;
        }
        Command::Eval => {
            let records = load(c)?;
            let test = select(c, &records, Part::Test)?;
            let models = Models::load(&cfg.resolved_pipeline())?;
            let split = c.split.as_ref().map_or("all".to_string(), |p| p.file_stem().unwrap_or_default().to_string_lossy().into());
            let report = evaluate(&test, &models, &cfg.resolved_pipeline(), &format!("{:?}", c.format).to_lowercase(), &split)
                .map_err(CliError::from_eval)?;
            let (csv, json) = emit_report(&report.rows(), &c.out, "report").map_err(|e| CliError::Eval(e.to_string()))?;
            println!(
                "accuracy {:.4}, mean error pitch {:.2} roll {:.2} yaw {:.2} deg; wrote {} and {}",
                report.head.accuracy,
                report.head.mean[0],
                report.head.mean[1],
                report.head.mean[2],
                csv.display(),
                json.display()
            );
        }
        Command::Infer { sheets } => {
            let records = load(c)?;
            let mut frames = select(c, &records, Part::Test)?;
            order_frames(&mut frames);
            let pipeline = cfg.resolved_pipeline();
            let models = Models::load(&pipeline)?;
            let results = run_pipeline(&frames, &models, &pipeline).map_err(CliError::from_eval)?;
            fs::create_dir_all(&c.out).map_err(|e| CliError::Data(e.to_string()))?;
            let json = serde_json::to_string_pretty(&results).map_err(|e| CliError::Eval(e.to_string()))?;
            fs::write(c.out.join("frames.json"), json + "\n").map_err(|e| CliError::Data(e.to_string()))?;
            if *sheets {
                write_sheets(&frames, &results, &models, &pipeline, &c.out.join("sheets"))?;
            }
            let skipped = results.iter().filter(|r| r.skipped.is_some()).count();
            println!("{} frames, {} skipped", results.len(), skipped);
        }
        Command::Report { path } => {
            let path = path.clone().unwrap_or_else(|| c.out.join("report.json"));
            let report = match path.extension().and_then(|e| e.to_str()) {
                Some("csv") => read_report_csv(&path),
                _ => read_report_json(&path),
            }
            .map_err(|e| CliError::Data(e.to_string()))?;
            println!("schema v{}", report.schema_version);
            for r in &report.rows {
                println!("{:<10} {:<8} {:<9} {:<24} {:.6}", r.dataset, r.split, r.model, r.metric, r.value);
            }
        }
    }
    Ok(())
}

fn load(c: &Common) -> Result<Vec<FrameRecord>, CliError> {
    let root = c.dataset.as_ref().ok_or_else(|| CliError::Config("--dataset is required".into()))?;
    Ok(load_dataset(root, c.format)?)
}

enum Part {
    Train,
    Test,
}

fn select<'a>(c: &Common, records: &'a [FrameRecord], part: Part) -> Result<Vec<&'a FrameRecord>, CliError> {
    let Some(path) = &c.split else {
        return Ok(records.iter().collect());
    };
    let spec = SplitSpec::from_json_file(path)?;
    let split = make_splits(records, &spec)?;
    let idx = match part {
        Part::Train => split.train,
        Part::Test => split.test,
    };
    Ok(idx.into_iter().map(|i| &records[i]).collect())
}

fn write_sheets(
    frames: &[&FrameRecord],
    results: &[headpose::pipeline::FrameResult],
    models: &Models,
    pipeline: &headpose::pipeline::PipelineConfig,
    dir: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(e.to_string()))?;
    let centers: Vec<_> = results.iter().map(|r| r.center.unwrap_or((0.0, 0.0))).collect();
    for ((r, res), item) in frames.iter().zip(results).zip(head_inputs(frames, &centers, pipeline.head_extent_mm)) {
        let Ok((crops, motion)) = item else { continue };
        if res.skipped.is_some() {
            continue;
        }
        let ffd = to_unit_gray(&ffd_infer(&models.generator, &crops.depth));
        let gray = crops.gray.as_ref().map(to_unit_gray).unwrap_or_else(|| ffd.map(|_| 0.0));
        let sheet = contact_sheet(&[&gray, &ffd, &crops.depth, &motion.dx, &motion.dy]);
        let pixels: Vec<u8> = sheet.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let buf = image::GrayImage::from_raw(sheet.width() as u32, sheet.height() as u32, pixels).expect("buffer matches size");
        let name = r.id().replace('/', "_");
        buf.save(dir.join(format!("{name}.png"))).map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(())
}
