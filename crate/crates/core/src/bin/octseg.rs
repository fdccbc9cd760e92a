//! Command-line driver for the octseg library.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
//! `OCTSEG_THREADS` sets the worker count and `OCTSEG_LOG` the log level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use octseg::eval::{evaluate_methods, run_cross_validation, segment_scan, EvalImage, Pipeline, Pooling, ReportTable, TableKind, INTER_OBSERVER};
use octseg::fcn::{load_checkpoint, save_checkpoint, train, Network};
use octseg::io::{
    generate_synthetic, load_dataset, load_grayscale, load_surfaces, render_overlay, save_dataset, save_surfaces, RunConfig, RunRecord,
};
use octseg::model::{BScan, PatientRecord, RegionTag};
use octseg::{Error, Result};

#[derive(Parser)]
#[command(name = "octseg", version, about = "Retinal OCT surface segmentation")]
struct Cli {
    /// TOML file with [synth], [network], [training], [gp] and [evaluation]
    /// sections; its keys override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the JSON run record (default depends on the command).
    #[arg(long, global = true)]
    run_record: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Train the network on every scan of a dataset.
    Train(TrainArgs),
    /// Extract surfaces from scans with a trained network.
    Segment(SegmentArgs),
    /// Score surface estimates against grader-1 ground truth.
    Evaluate(EvaluateArgs),
    /// Print the text tables of a report CSV.
    Report(ReportArgs),
    /// Draw surface sets over a scan.
    Render(RenderArgs),
    /// Leave-one-patient-out cross validation.
    Xval(XvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainingFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for both initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Leave these patients out of training.
    #[arg(long = "exclude-patient")]
    exclude: Vec<String>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Seg,
    #[value(name = "seg+reg")]
    SegReg,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Seg => Pipeline::Seg,
            PipelineArg::SegReg => Pipeline::SegReg,
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Segment every scan of this dataset ...
    #[arg(long, conflicts_with = "image")]
    manifest: Option<PathBuf>,
    /// ... or a single grayscale image.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "seg+reg")]
    pipeline: PipelineArg,
    /// Output directory; one `<image_id>.csv` per scan.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    PerPixel,
    PerImage,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::PerPixel => Pooling::PerPixel,
            PoolingArg::PerImage => Pooling::PerImage,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `NAME=DIR` with one `<image_id>.csv` per scan; repeatable.
    #[arg(long = "estimates", value_parser = parse_named_path)]
    estimates: Vec<(String, PathBuf)>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// Report CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    All,
    Unsigned,
    Signed,
    Regional,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    table: TableArg,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    image: PathBuf,
    /// `NAME=CSV`; repeatable, drawn in order.
    #[arg(long = "surfaces", value_parser = parse_named_path)]
    surfaces: Vec<(String, PathBuf)>,
    /// `.svg` or `.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct XvalArgs {
    /// Dataset to cross-validate; a synthetic cohort is generated when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    #[command(flatten)]
    training: TrainingFlags,
    /// Output directory for the report, checkpoints and estimates.
    #[arg(long)]
    out: PathBuf,
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

fn apply_training_flags(config: &mut RunConfig, flags: &TrainingFlags) {
    if let Some(e) = flags.epochs {
        config.training.epochs = e;
    }
    if let Some(lr) = flags.learning_rate {
        config.training.learning_rate = lr;
    }
    if let Some(b) = flags.batch_size {
        config.training.batch_size = b;
    }
    if let Some(s) = flags.seed {
        config.training.seed = s;
        config.network.seed = s;
    }
}

fn flag_config(command: &Command) -> RunConfig {
    let mut c = RunConfig::default();
    match command {
        Command::Synth(a) => {
            let s = &mut c.synth;
            s.num_patients = a.patients.unwrap_or(s.num_patients);
            s.width = a.width.unwrap_or(s.width);
            s.height = a.height.unwrap_or(s.height);
            s.noise_std = a.noise.unwrap_or(s.noise_std);
            s.seed = a.seed.unwrap_or(s.seed);
        }
        Command::Train(a) => apply_training_flags(&mut c, &a.training),
        Command::Evaluate(a) => {
            if let Some(p) = a.pooling {
                c.evaluation.pooling = p.into();
            }
        }
        Command::Xval(a) => {
            apply_training_flags(&mut c, &a.training);
            if let Some(n) = a.patients {
                c.synth.num_patients = n;
            }
            if a.k.is_some() {
                c.evaluation.k = a.k;
            }
            if let Some(p) = a.pooling {
                c.evaluation.pooling = p.into();
            }
        }
        Command::Segment(_) | Command::Report(_) | Command::Render(_) => {}
    }
    c
}

fn all_scans(patients: &[PatientRecord]) -> impl Iterator<Item = &octseg::model::ScanRecord> {
    patients.iter().flat_map(|p| &p.scans)
}

fn run(cli: &Cli, config: &RunConfig, record: &mut RunRecord) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let data = generate_synthetic(&config.synth)?;
            let manifest = save_dataset(&data, &a.out, true)?;
            println!("wrote {} scans to {}", data.len() * 5, manifest.display());
            record.outputs.push(manifest.display().to_string());
        }
        Command::Train(a) => {
            let data = load_dataset(&a.manifest)?;
            let samples = data
                .iter()
                .filter(|p| !a.exclude.contains(&p.patient_id))
                .flat_map(|p| &p.scans)
                .map(octseg::eval::training_sample)
                .collect::<Result<Vec<_>>>()?;
            log::info!("training on {} scans", samples.len());
            let outcome = train(&samples, &config.training, &config.network)?;
            for (e, l) in outcome.loss_history.iter().enumerate() {
                println!("epoch {e:>3}  loss {l:.5}");
            }
            save_checkpoint(&a.out, &config.network, &outcome.params)?;
            record.outputs.push(a.out.display().to_string());
        }
        Command::Segment(a) => {
            let (nconfig, params) = load_checkpoint(&a.checkpoint)?;
            let net = Network::new(nconfig)?;
            let scans: Vec<octseg::model::ScanRecord> = match (&a.manifest, &a.image) {
                (Some(m), _) => all_scans(&load_dataset(m)?).cloned().collect(),
                (None, Some(img)) => {
                    let pixels = load_grayscale(img)?;
                    let w = pixels.width();
                    let id = img.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
                    let scan = BScan::new(pixels, "unknown", RegionTag::Fovea, id)?;
                    vec![octseg::model::ScanRecord::new(scan, octseg::model::SurfaceSet::empty(w))]
                }
                (None, None) => return Err(Error::Config("segment needs --manifest or --image".into())),
            };
            std::fs::create_dir_all(&a.out)?;
            let pipeline: Pipeline = a.pipeline.into();
            let mut unresolved = Vec::new();
            for s in &scans {
                let held = segment_scan(&net, &params, s, &[pipeline], &config.gp)?;
                let path = a.out.join(format!("{}.csv", s.scan.image_id));
                save_surfaces(&held.estimates[pipeline.method_name()], &path)?;
                record.outputs.push(path.display().to_string());
                if let Some(u) = held.unresolved.get(pipeline.method_name()) {
                    unresolved.push((u.clone(), held.estimates[pipeline.method_name()].clone()));
                }
            }
            println!("segmented {} scans into {}", scans.len(), a.out.display());
            if !unresolved.is_empty() {
                log::error!("{} scans have unresolved surfaces; partial estimates written", unresolved.len());
                let (surfaces, partial) = unresolved.swap_remove(0);
                return Err(Error::UnresolvedSurfaces {
                    surfaces,
                    partial: Box::new(partial),
                });
            }
        }
        Command::Evaluate(a) => {
            let data = load_dataset(&a.manifest)?;
            let mut images = Vec::new();
            for s in all_scans(&data) {
                let mut estimates = BTreeMap::new();
                for (name, dir) in &a.estimates {
                    let path = dir.join(format!("{}.csv", s.scan.image_id));
                    estimates.insert(name.clone(), load_surfaces(&path, Some(s.scan.width()))?);
                }
                if config.evaluation.include_external {
                    estimates.extend(s.external.clone());
                }
                if config.evaluation.include_inter_observer {
                    if let Some(g2) = &s.grader2 {
                        estimates.insert(INTER_OBSERVER.to_string(), g2.clone());
                    }
                }
                images.push(EvalImage {
                    image_id: s.scan.image_id.clone(),
                    region: s.scan.region,
                    ground_truth: s.ground_truth.clone(),
                    estimates,
                    mask_only: Vec::new(),
                });
            }
            let axial = all_scans(&data).next().map_or(octseg::model::DEFAULT_AXIAL_RES, |s| s.scan.axial_res);
            let table = evaluate_methods(&images, axial, config.evaluation.pooling)?;
            write_report(&table, &a.out, record)?;
        }
        Command::Report(a) => {
            let file = std::fs::File::open(&a.csv).map_err(|e| Error::format(&a.csv, None, e.to_string()))?;
            let table = ReportTable::read_csv(file, &a.csv.display().to_string())?;
            let kinds: &[TableKind] = match a.table {
                TableArg::All => &[TableKind::Unsigned, TableKind::Signed, TableKind::Regional],
                TableArg::Unsigned => &[TableKind::Unsigned],
                TableArg::Signed => &[TableKind::Signed],
                TableArg::Regional => &[TableKind::Regional],
            };
            for &k in kinds {
                println!("{}", table.render_text(k));
            }
        }
        Command::Render(a) => {
            let pixels = load_grayscale(&a.image)?;
            let w = pixels.width();
            let scan = BScan::new(pixels, "unknown", RegionTag::Fovea, "image")?;
            let sets = a
                .surfaces
                .iter()
                .map(|(n, p)| Ok((n.as_str(), load_surfaces(p, Some(w))?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(&str, &octseg::model::SurfaceSet)> = sets.iter().map(|(n, s)| (*n, s)).collect();
            render_overlay(&scan, &refs, &a.out)?;
            record.outputs.push(a.out.display().to_string());
        }
        Command::Xval(a) => {
            let data = match &a.manifest {
                Some(m) => load_dataset(m)?,
                None => generate_synthetic(&config.synth)?,
            };
            std::fs::create_dir_all(&a.out)?;
            let outcome = run_cross_validation(&data, &config.xval_config())?;
            for fold in &outcome.folds {
                let path = a.out.join(format!("fold{}.ckpt", fold.spec.fold_id));
                save_checkpoint(&path, &config.network, &fold.params)?;
                record.outputs.push(path.display().to_string());
                for held in &fold.held_out {
                    for (method, set) in &held.estimates {
                        let dir = a.out.join("estimates").join(method.replace('+', "_"));
                        std::fs::create_dir_all(&dir)?;
                        save_surfaces(set, &dir.join(format!("{}.csv", held.image_id)))?;
                    }
                }
            }
            write_report(&outcome.table, &a.out.join("report.csv"), record)?;
        }
    }
    Ok(())
}

fn write_report(table: &ReportTable, out: &Path, record: &mut RunRecord) -> Result<()> {
    let file = std::fs::File::create(out)?;
    table.write_csv(std::io::BufWriter::new(file))?;
    record.outputs.push(out.display().to_string());
    let mut text = String::new();
    for k in [TableKind::Unsigned, TableKind::Signed, TableKind::Regional] {
        text += &table.render_text(k);
        text.push('\n');
    }
    let txt = out.with_extension("txt");
    std::fs::write(&txt, &text)?;
    record.outputs.push(txt.display().to_string());
    print!("{text}");
    Ok(())
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Segment(_) => "segment",
        Command::Evaluate(_) => "evaluate",
        Command::Report(_) => "report",
        Command::Render(_) => "render",
        Command::Xval(_) => "xval",
    }
}

fn default_record_path(command: &Command) -> Option<PathBuf> {
    match command {
        Command::Synth(a) => Some(a.out.join("run.json")),
        Command::Xval(a) => Some(a.out.join("run.json")),
        Command::Segment(a) => Some(a.out.join("run.json")),
        Command::Train(a) => Some(a.out.with_extension("run.json")),
        Command::Evaluate(a) => Some(a.out.with_extension("run.json")),
        Command::Render(a) => Some(a.out.with_extension("run.json")),
        Command::Report(_) => None,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCTSEG_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("OCTSEG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = (|| -> Result<()> {
        let mut config = flag_config(&cli.command);
        if let Some(path) = &cli.config {
            config = config.overlay_file(path)?;
        }
        config.validate()?;
        let mut record = RunRecord::new(command_name(&cli.command), std::env::args().skip(1).collect(), &config);
        let outcome = run(&cli, &config, &mut record);
        if let Some(path) = cli.run_record.clone().or_else(|| default_record_path(&cli.command)) {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            record.save(&path)?;
        }
        outcome
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
