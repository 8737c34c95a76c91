//! `dvs` command line: every stage of the pipeline as a reproducible run.
//!
//! Each command writes a `config.toml` snapshot next to its outputs. Errors
//! exit with 2 (invalid config), 3 (missing file) or 4 (numeric failure).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archsearch::search_architecture;
use crate::config::RunConfig;
use crate::dataset::{read_jsonl, DatasetManifest, Split, StreamSource};
use crate::embedding::analyze;
use crate::ensemble::{threshold_decide, EnsembleModel};
use crate::error::{Error, Result};
use crate::features::{fit_normalizer, normalize_blob, FeatureBlob};
use crate::framing::IntensityStream;
use crate::metrics::{confusion, render_table, report_from_counts, ClassShares};
use crate::pipeline::{dataset_blobs, infer_stream};
use crate::siggen::{generate_dataset, render_scenario, GroundTruth};
use crate::tensornet::{Network, NetworkSpec};
use crate::tracker::{apply_error_budget, calibrate, glue_tracks, map_from_outputs, match_tracks, CalibrationTable, EventReport};
use crate::training::{fit_ensemble, prepare_frames};

#[derive(Debug, Parser)]
#[command(name = "dvs", version, about = "Vibration event recognition for fiber-optic sensing")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel sections
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset
    Gen,
    /// Train the three-member ensemble
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Confusion matrix, precision and F1 on the test split
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// JSON lines of {"frame_id", "class_id"} used instead of a model
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Fused scores and decision map for one stream
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        stream: StreamArgs,
    },
    /// PCA, t-SNE, class centers, distances and spanning tree
    Analyze {
        #[arg(long)]
        data: PathBuf,
    },
    /// Differential-evolution architecture search
    Search {
        #[arg(long)]
        data: PathBuf,
    },
    /// Signal-event tracks for one stream
    Track {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        stream: StreamArgs,
        /// Calibration table for the configured error budget
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Forward-pass throughput
    Bench {
        /// Ensemble directory; the reference member is used when absent
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct StreamArgs {
    /// Raw little-endian i16 stream, channel-major; the configured
    /// synthetic scenario is rendered when absent
    #[arg(long, requires = "channels")]
    stream: Option<PathBuf>,
    #[arg(long)]
    channels: Option<usize>,
}

/// Entry point used by the `dvs` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {e}", cat.as_str());
            cat.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(o) = cli.common.out {
        cfg.out = o;
    }
    let workers = cli.common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    cfg.write_snapshot(&cfg.out)?;
    pool.install(|| dispatch(cli.command, &cfg, workers.max(1)))
}

fn dispatch(cmd: Command, cfg: &RunConfig, workers: usize) -> Result<()> {
    match cmd {
        Command::Gen => gen(cfg),
        Command::Train { data } => train(cfg, &data),
        Command::Eval { data, model, predictions } => eval(cfg, &data, model.as_deref(), predictions.as_deref()),
        Command::Infer { model, stream } => infer(cfg, &model, &stream),
        Command::Analyze { data } => analyze_cmd(cfg, &data),
        Command::Search { data } => search(cfg, &data),
        Command::Track { model, stream, calibration } => track(cfg, &model, &stream, calibration.as_deref()),
        Command::Bench { model } => bench_cmd(cfg, model.as_deref(), workers),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn gen(cfg: &RunConfig) -> Result<()> {
    let manifest = generate_dataset(&cfg.dataset)?;
    manifest.write_dir(&cfg.out)?;
    log::info!("{} frames in {} scenarios written to {}", manifest.frames.len(), manifest.scenarios.len(), cfg.out.display());
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path) -> Result<()> {
    let manifest = DatasetManifest::read_dir(data)?;
    let src = StreamSource::Directory(data);
    let train = dataset_blobs(&manifest, &src, &cfg.pipeline, Some(Split::Train))?;
    let test = dataset_blobs(&manifest, &src, &cfg.pipeline, Some(Split::Test))?;
    let (train, test, stats) = prepare_frames(&train, &test, cfg.pipeline.features.clip)?;
    let fit = fit_ensemble(&train, &test, stats, &cfg.ensemble)?;
    fit.model.save(&cfg.out.join("model"))?;
    for (j, h) in fit.histories.iter().enumerate() {
        fs::write(cfg.out.join(format!("history_member_{}.csv", j + 1)), h.to_csv())?;
    }
    for (j, h) in fit.tune_histories.iter().enumerate() {
        fs::write(cfg.out.join(format!("tune_member_{}.csv", j + 1)), h.to_csv())?;
    }
    write_jsonl(&cfg.out.join("relabel.jsonl"), &fit.changes)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Prediction {
    frame_id: usize,
    class_id: usize,
}

fn eval(cfg: &RunConfig, data: &Path, model: Option<&Path>, predictions: Option<&Path>) -> Result<()> {
    let manifest = DatasetManifest::read_dir(data)?;
    let (pred, refs): (Vec<usize>, Vec<usize>) = match (predictions, model) {
        (Some(p), _) => {
            let preds: Vec<Prediction> = read_jsonl(p)?;
            preds
                .iter()
                .map(|p| {
                    let rec = manifest
                        .frames
                        .get(p.frame_id)
                        .filter(|r| r.frame_id == p.frame_id)
                        .ok_or_else(|| Error::Format(format!("unknown frame {}", p.frame_id)))?;
                    Ok((p.class_id, rec.class_id))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        (None, Some(m)) => {
            let model = EnsembleModel::load(m)?;
            let blobs = dataset_blobs(&manifest, &StreamSource::Directory(data), &cfg.pipeline, Some(Split::Test))?;
            blobs
                .par_iter()
                .map(|b| {
                    let out = model.classify_raw(&b.blob, cfg.fusion)?;
                    Ok((threshold_decide(&out.fused.probs, &cfg.tracker.thresholds), b.record.class_id))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        (None, None) => return Err(Error::Config("eval needs --model or --predictions".into())),
    };
    let m = confusion(&pred, &refs)?;
    let report = report_from_counts(&m, &ClassShares::Balanced)?;
    let table = render_table(&report);
    print!("{table}");
    fs::write(cfg.out.join("report.txt"), &table)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_json(&cfg.out.join("confusion.json"), &m)?;
    Ok(())
}

fn load_stream(cfg: &RunConfig, args: &StreamArgs) -> Result<(IntensityStream, Option<GroundTruth>)> {
    match (&args.stream, args.channels) {
        (Some(p), Some(l)) => {
            let bytes = fs::read(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Missing(p.display().to_string()),
                _ => Error::Io(e),
            })?;
            Ok((IntensityStream::from_i16_le_bytes(&bytes, l)?, None))
        }
        _ => {
            let (s, t) = render_scenario(&cfg.scenario())?;
            Ok((s, Some(t)))
        }
    }
}

#[derive(Serialize)]
struct CellOutput<'a> {
    frame: usize,
    channel: usize,
    decision: usize,
    vote: usize,
    fused: &'a [f64],
}

fn infer(cfg: &RunConfig, model: &Path, args: &StreamArgs) -> Result<()> {
    let model = EnsembleModel::load(model)?;
    let (stream, _) = load_stream(cfg, args)?;
    let outputs = infer_stream(&model, &stream, &cfg.dataset.framing, &cfg.pipeline, cfg.fusion)?;
    let map = map_from_outputs(&outputs, &cfg.tracker.thresholds)?;
    let cells = outputs.iter().enumerate().flat_map(|(n, row)| {
        let map = &map;
        row.iter().enumerate().map(move |(l, o)| CellOutput {
            frame: n,
            channel: l,
            decision: map.decision(n, l),
            vote: o.vote,
            fused: &o.fused.probs,
        })
    });
    write_jsonl(&cfg.out.join("scores.jsonl"), cells)?;
    let mut csv = String::new();
    for n in 0..map.frames {
        let row: Vec<String> = (0..map.channels).map(|l| map.decision(n, l).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(cfg.out.join("decision_map.csv"), csv)?;
    Ok(())
}

fn normalized_points(manifest: &DatasetManifest, data: &Path, cfg: &RunConfig) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let blobs = dataset_blobs(manifest, &StreamSource::Directory(data), &cfg.pipeline, None)?;
    let raw: Vec<FeatureBlob> = blobs.iter().map(|b| b.blob.clone()).collect();
    let stats = fit_normalizer(&raw, cfg.pipeline.features.clip)?;
    let points = raw
        .iter()
        .map(|b| Ok(normalize_blob(b, &stats)?.data))
        .collect::<Result<Vec<_>>>()?;
    Ok((points, blobs.iter().map(|b| b.record.class_id).collect()))
}

fn analyze_cmd(cfg: &RunConfig, data: &Path) -> Result<()> {
    let manifest = DatasetManifest::read_dir(data)?;
    let (points, labels) = normalized_points(&manifest, data, cfg)?;
    let a = analyze(&points, &labels, &cfg.embedding)?;
    let rows = |pts: &[Vec<f64>]| -> String {
        pts.iter()
            .zip(&a.labels)
            .map(|(p, l)| {
                let v: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                format!("{l},{}\n", v.join(","))
            })
            .collect()
    };
    fs::write(cfg.out.join("pca.csv"), rows(&a.pca.projection))?;
    fs::write(cfg.out.join("tsne.csv"), rows(&a.tsne.embedding))?;
    write_json(&cfg.out.join("pca_explained.json"), &a.pca.explained_ratio)?;
    write_json(&cfg.out.join("kl_trace.json"), &a.tsne.kl_trace)?;
    write_json(&cfg.out.join("centers.json"), &a.centers)?;
    write_json(&cfg.out.join("distances.json"), &a.distances)?;
    write_json(&cfg.out.join("mst.json"), &a.mst)?;
    for e in &a.mst.edges {
        println!("{}-{} {:.3}", e.a, e.b, e.weight);
    }
    println!("total {:.3}", a.mst.total);
    Ok(())
}

fn search(cfg: &RunConfig, data: &Path) -> Result<()> {
    let manifest = DatasetManifest::read_dir(data)?;
    let src = StreamSource::Directory(data);
    let train = dataset_blobs(&manifest, &src, &cfg.pipeline, Some(Split::Train))?;
    let test = dataset_blobs(&manifest, &src, &cfg.pipeline, Some(Split::Test))?;
    let (train, test, _) = prepare_frames(&train, &test, cfg.pipeline.features.clip)?;
    let s = &cfg.search;
    let out = search_architecture(&s.space, &train, &test, &s.de, &s.budget)?;
    write_jsonl(&cfg.out.join("trace.jsonl"), &out.trace)?;
    write_json(&cfg.out.join("best_spec.json"), &out.best_spec)?;
    write_json(&cfg.out.join("best_params.json"), &out.best)?;
    println!("best accuracy {:.4}", out.best_accuracy);
    Ok(())
}

fn track(cfg: &RunConfig, model: &Path, args: &StreamArgs, calibration: Option<&Path>) -> Result<()> {
    let model = EnsembleModel::load(model)?;
    let (stream, truth) = load_stream(cfg, args)?;
    let outputs = infer_stream(&model, &stream, &cfg.dataset.framing, &cfg.pipeline, cfg.fusion)?;
    let map = map_from_outputs(&outputs, &cfg.tracker.thresholds)?;
    let tracks = glue_tracks(&map, &cfg.tracker);
    if let Some(t) = &truth {
        write_json(&cfg.out.join("truth.json"), t)?;
        let ok = match_tracks(&tracks, t, cfg.tracker.gap, cfg.tracker.width);
        write_json(&cfg.out.join("calibration.json"), &calibrate(&tracks, &ok, cfg.tracker.min_duration)?)?;
    }
    let reports: Vec<EventReport> = match &cfg.budget {
        Some(b) => {
            let table: Option<CalibrationTable> = match calibration {
                Some(p) => Some(serde_json::from_slice(&fs::read(p).map_err(|_| Error::Missing(p.display().to_string()))?)?),
                None => None,
            };
            apply_error_budget(&tracks, b, table.as_ref(), &cfg.dataset.framing)?.reports
        }
        None => tracks.into_iter().map(|t| EventReport::new(t, &cfg.dataset.framing)).collect(),
    };
    for r in &reports {
        println!(
            "class {} frames {}-{} channels {}-{} (center {}) {:.2}-{:.2} s conf {:.3}",
            r.track.class_id, r.track.n_b, r.track.n_e, r.track.channel_lo, r.track.channel_hi, r.track.central_channel, r.start_s, r.end_s, r.track.confidence
        );
    }
    write_jsonl(&cfg.out.join("events.jsonl"), &reports)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub workers: usize,
    pub seconds: f64,
    pub frames_per_s: f64,
    pub ms_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub single: Vec<BenchRun>,
    pub multi: Vec<BenchRun>,
    /// Median single-worker throughput over the repeats.
    pub median_frames_per_s: f64,
    /// `(max - min) / mean` of single-worker throughput.
    pub single_spread: f64,
}

/// Seeded standard-normal blobs of the given shape.
pub fn bench_blobs(shape: (usize, usize), frames: usize, seed: u64) -> Vec<FeatureBlob> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|i| FeatureBlob {
            rows: shape.0,
            cols: shape.1,
            data: (0..shape.0 * shape.1).map(|_| StandardNormal.sample(&mut rng)).collect(),
            frame_index: i,
            channel_index: 0,
        })
        .collect()
}

fn timed(net: &Network, blobs: &[FeatureBlob], workers: usize) -> Result<BenchRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let t = Instant::now();
    pool.install(|| blobs.par_iter().try_for_each(|b| net.infer(b).map(|_| ())))?;
    let seconds = t.elapsed().as_secs_f64();
    Ok(BenchRun {
        workers,
        seconds,
        frames_per_s: blobs.len() as f64 / seconds,
        ms_per_frame: 1e3 * seconds / blobs.len() as f64,
    })
}

/// Single- and multi-worker forward-pass timings after one warm-up pass.
pub fn bench_forward(net: &Network, blobs: &[FeatureBlob], repeats: usize, workers: usize) -> Result<BenchReport> {
    if blobs.is_empty() || repeats == 0 {
        return Err(Error::Config("bench needs frames and repeats".into()));
    }
    timed(net, &blobs[..blobs.len().min(50)], 1)?;
    let single = (0..repeats).map(|_| timed(net, blobs, 1)).collect::<Result<Vec<_>>>()?;
    let multi = (0..repeats).map(|_| timed(net, blobs, workers)).collect::<Result<Vec<_>>>()?;
    let fps: Vec<f64> = single.iter().map(|r| r.frames_per_s).collect();
    let mean = fps.iter().sum::<f64>() / fps.len() as f64;
    let mut sorted = fps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let spread = (fps.iter().cloned().fold(f64::MIN, f64::max) - fps.iter().cloned().fold(f64::MAX, f64::min)) / mean;
    Ok(BenchReport {
        frames: blobs.len(),
        single,
        multi,
        median_frames_per_s: median,
        single_spread: spread,
    })
}

fn bench_cmd(cfg: &RunConfig, model: Option<&Path>, workers: usize) -> Result<()> {
    let net = match model {
        Some(m) => EnsembleModel::load(m)?.members[0].clone(),
        None => {
            let spec = NetworkSpec::reference_members(cfg.pipeline.features.blob_shape())[0].clone();
            Network::seeded(spec, cfg.seed)?
        }
    };
    let blobs = bench_blobs(net.spec().input, cfg.bench.frames, cfg.seed);
    let r = bench_forward(&net, &blobs, cfg.bench.repeats, workers)?;
    for run in r.single.iter().chain(&r.multi) {
        println!("workers {} {:.1} frames/s {:.3} ms/frame", run.workers, run.frames_per_s, run.ms_per_frame);
    }
    println!("median {:.1} frames/s", r.median_frames_per_s);
    println!("single-worker spread {:.1}%", 100.0 * r.single_spread);
    write_json(&cfg.out.join("bench.json"), &r)?;
    Ok(())
}
