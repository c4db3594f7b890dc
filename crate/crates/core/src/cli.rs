//! Command-line front end.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{self, ClipSource, DatasetRecord, Layout, LoadOptions, Manifest, SynthSpec};
use crate::distill::{fit, ModelState, StepLog};
use crate::error::{Result, SspdError};
use crate::eval::{self, benchmark_inference};
use crate::model::Network;
use crate::signal;

#[derive(Debug, Parser)]
#[command(name = "sspd", version, about = "Self-supervised rPPG training, evaluation and inference")]
pub struct Cli {
    /// Seed for every random stream; falls back to SSPD_SEED, then to the config.
    #[arg(long, env = "SSPD_SEED", global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset in the generic layout.
    Synth(SynthArgs),
    /// Train online and target networks by self-distillation.
    Train(TrainArgs),
    /// Score heart rate on labeled data and write report.json.
    Eval(EvalArgs),
    /// Predict the pulse signal of one clip directory.
    Infer(InferArgs),
    /// Report parameters, FLOPs and mean inference time.
    Bench(BenchArgs),
    /// Render plot data and images from a report.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Heart-rate range `lo:hi` in bpm, sampled uniformly per record.
    #[arg(long, default_value = "48:120")]
    pub hr: String,
    #[arg(long, default_value_t = 30.0)]
    pub fs: f64,
    /// Duration of each record in seconds.
    #[arg(long, default_value_t = 90.0)]
    pub dur: f64,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.02)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.5)]
    pub skin: f64,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "generic")]
    pub layout: String,
    /// Frame rate for layouts that do not store one.
    #[arg(long)]
    pub fs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory with `frames/*.png` (or images directly).
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub fs: f64,
    /// Output CSV; defaults to `<clip>/rppg.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Difference frames per input.
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    /// Input side; defaults to the configured input size.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Defaults to the report's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, cli.seed.unwrap_or(0)),
        Command::Train(a) => cmd_train(&a, cli.seed),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Bench(a) => cmd_bench(&a, cli.seed.unwrap_or(0)),
        Command::Plot(a) => cmd_plot(&a),
    }
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || SspdError::Usage(format!("expected lo:hi, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn ensure_empty_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| SspdError::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(SspdError::Usage(format!(
                    "{} exists and is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| SspdError::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| SspdError::io(dir, e))
}

/// Generates `n` records and writes them with a manifest under `out`.
pub fn write_synthetic_dataset(out: &Path, n: usize, hr: (f64, f64), base: &SynthSpec, seed: u64) -> Result<Manifest> {
    let mut records = Vec::with_capacity(n);
    for (i, spec) in data::synth_specs(n, hr, base, seed).iter().enumerate() {
        let id = format!("synth{i:03}");
        let rec = data::synth_clip(spec, &id, &id)?;
        records.push(data::write_generic(out, &rec)?);
        log::info!("wrote {id}: {:.1} bpm", spec.hr_bpm);
    }
    let manifest = Manifest { fs: base.fs, records };
    data::write_manifest(out, &manifest)?;
    Ok(manifest)
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let hr = parse_range(&a.hr)?;
    let base = SynthSpec {
        hr_bpm: hr.0,
        fs: a.fs,
        duration_s: a.dur,
        height: a.size,
        width: a.size,
        skin_fraction: a.skin,
        pulse_amplitude: a.amplitude,
        noise_std: a.noise,
        drift_bpm_per_min: a.drift,
        seed,
    };
    SynthSpec { hr_bpm: hr.1, ..base.clone() }.validate()?;
    base.validate()?;
    ensure_empty_dir(&a.out, a.force)?;
    let m = write_synthetic_dataset(&a.out, a.n, hr, &base, seed)?;
    println!("wrote {} records to {}", m.records.len(), a.out.display());
    Ok(())
}

fn load_records(d: &DataArgs) -> Result<Vec<DatasetRecord>> {
    let layout: Layout = d.layout.parse()?;
    let records = data::load_dataset(&d.data, layout, LoadOptions { fs: d.fs })?;
    if records.is_empty() {
        return Err(SspdError::Usage(format!("no records found under {}", d.data.display())));
    }
    let fs = records[0].fs();
    if let Some(r) = records.iter().find(|r| (r.fs() - fs).abs() > 1e-6) {
        return Err(SspdError::Usage(format!(
            "record {} has fs {} but {} has {fs}",
            r.clip_id,
            r.fs(),
            records[0].clip_id
        )));
    }
    Ok(records)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SspdError::io(path, e))
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let (mut cfg, mut state) = match &a.resume {
        Some(ckpt) => {
            let (cfg, state) = load_checkpoint(ckpt)?;
            (cfg, Some(state))
        }
        None => (
            match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            },
            None,
        ),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let records = load_records(&a.data)?;
    let net = Network::new(cfg.model.clone())?;
    let mut state = match state.take() {
        Some(s) => s,
        None => ModelState::new(&net, DType::F32, cfg.seed, cfg.adam_config())?,
    };
    let run = eval::run_dir(&a.out, &cfg)?;
    write_text(&run.join("config.toml"), &cfg.to_toml())?;
    let log_path = run.join("train_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| SspdError::io(&log_path, e))?);
    writeln!(log, "{}", StepLog::CSV_HEADER).map_err(|e| SspdError::io(&log_path, e))?;
    let settings = cfg.train_settings(records[0].fs())?;
    let start_epoch = state.epoch;
    let result = fit(
        &net,
        &mut state,
        &records,
        &settings,
        |s| {
            log::info!("epoch {} step {}: total {:.5}", s.epoch, s.step, s.parts.total);
            writeln!(log, "{}", s.csv_row())
                .and_then(|_| log.flush())
                .map_err(|e| SspdError::io(&log_path, e))
        },
        |st| save_checkpoint(&run.join(format!("epoch_{:03}.safetensors", st.epoch)), &cfg, st),
    );
    result?;
    println!(
        "trained epochs {}..{} into {}",
        start_epoch + 1,
        state.epoch,
        run.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (cfg, state) = load_checkpoint(&a.ckpt)?;
    let records = load_records(&a.data)?;
    let net = Network::new(cfg.model.clone())?;
    let report = eval::evaluate(&net, &state.target, &records, &cfg)?;
    let run = eval::run_dir(&a.out, &cfg)?;
    write_text(&run.join("config.toml"), &cfg.to_toml())?;
    let path = run.join("report.json");
    eval::save_report(&report, &path)?;
    match &report.metrics {
        Some(m) => println!(
            "clips {} (failed {}): MAE {:.3} RMSE {:.3} SD {:.3} R {} -> {}",
            report.n_clips,
            report.n_failed,
            m.mae,
            m.rmse,
            m.sd,
            m.r.map_or("n/a".to_string(), |r| format!("{r:.4}")),
            path.display()
        ),
        None => println!("clips {} (failed {}) -> {}", report.n_clips, report.n_failed, path.display()),
    }
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (cfg, state) = load_checkpoint(&a.ckpt)?;
    let net = Network::new(cfg.model.clone())?;
    let frames_dir = if a.clip.join("frames").is_dir() { a.clip.join("frames") } else { a.clip.clone() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| SspdError::io(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    let n = paths.len();
    let source = ClipSource::Frames { paths, fs: a.fs, bbox: None };
    let clip = source.load(0, n)?;
    let y = eval::predict_clip(&net, &state.target, &cfg, &clip)?;
    let out = a.out.clone().unwrap_or_else(|| a.clip.join("rppg.csv"));
    let mut text = String::from("time_s,rppg\n");
    for (i, v) in y.samples().iter().enumerate() {
        text.push_str(&format!("{},{v}\n", i as f64 / a.fs));
    }
    write_text(&out, &text)?;
    match signal::estimate_hr_with(&y, eval::peak_options(&cfg)) {
        Ok(hr) => println!("{} samples, HR {hr:.1} bpm -> {}", y.len(), out.display()),
        Err(e) => println!("{} samples, HR unavailable ({e}) -> {}", y.len(), out.display()),
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let (cfg, state) = load_checkpoint(&a.ckpt)?;
    let net = Network::new(cfg.model.clone())?;
    let size = a.size.unwrap_or(cfg.augment.input_size);
    let report = benchmark_inference(&net, &state.target, (a.frames, size, size), a.repeats, seed)?;
    let run = eval::run_dir(&a.out, &cfg)?;
    let path = run.join("bench.json");
    write_text(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "params {} flops {:.3}G wall {:.1} ms (mean of {}) -> {}",
        report.params,
        report.flops as f64 / 1e9,
        report.wall_ms,
        a.repeats,
        path.display()
    );
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let report = eval::load_report(&a.report)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.report.parent().map(Path::to_path_buf).unwrap_or_default());
    let files = eval::emit_plots(&report, &out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

/// One-line error report for the terminal.
pub fn error_line(e: &SspdError) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("sspd: error[{}]: {msg}", e.kind())
}
