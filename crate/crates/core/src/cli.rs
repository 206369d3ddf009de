//! Batch command-line frontend.
//!
//! Every command writes its outputs, a `<command>.summary.json` and a
//! `<command>.manifest.json` ([`RunManifest`]) into its output directory,
//! and prints the summary to stdout. Exit codes: 0 success, 1 usage error,
//! 2 data error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{
    self, bank_checksum, generate_synthetic, load_bank, load_dataset, load_manifests, read_annotations,
    read_detections, save_dataset, write_bank, write_detections, Dataset, FrameDetection, SynthConfig,
};
use crate::detector::{detect, BoundingBox, Detection};
use crate::error::Error;
use crate::eval::{curve_svg, evaluate, write_mr_fppi_csv, write_pr_csv, EvalResult, ImageEval};
use crate::experiment::{
    build_lap_bank, cross_lap, lap_similarity, training_samples, train_generic_from, ExperimentConfig, Prepared,
    SwatheSize, TrainingStats,
};
use crate::mining::HnmReport;
use crate::placebank::{ModelBank, SwatheMethod};
use crate::similarity::{similarity_matrix, SimilarityMatrix, SimilarityMetric};
use crate::svm::LinearModel;

/// Environment variable naming the dataset root when `--data` is absent.
pub const DATA_ENV: &str = "PLACEFIT_DATA";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "placefit", version, about = "Place-fitted pedestrian detector banks")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Experiment configuration as JSON; defaults to the synthetic-route
    /// settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArg {
    /// Dataset root (falls back to $PLACEFIT_DATA).
    #[arg(long, env = DATA_ENV)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-lap route dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        places: Option<usize>,
        #[arg(long)]
        frames_per_place: Option<usize>,
        #[arg(long)]
        laps: Option<usize>,
        #[arg(long)]
        pedestrian_rate: Option<f64>,
    },
    /// Train the generic detector, mining only the negative images.
    TrainGeneric {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a model bank over the frames of one lap.
    BuildBank {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "temporal")]
        method: String,
        /// Swathe size: a frame count or `full`.
        #[arg(long)]
        swathe: String,
        #[arg(long, default_value_t = 0)]
        lap: u32,
        /// Precomputed similarity matrix for the gist and mi methods.
        #[arg(long)]
        similarity: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a bank (model retrieved by pose) or a single model over frames.
    Detect {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, conflicts_with = "model")]
        bank: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Only frames of this lap (default: with a bank every lap it was
        /// not built on, with a model every frame).
        #[arg(long)]
        lap: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        /// Dataset root, or a bare annotations CSV.
        #[arg(long)]
        gt: PathBuf,
        /// Precision/recall CSV; the miss-rate curve goes next to it.
        #[arg(long)]
        curves: PathBuf,
        /// Only frames of this lap (dataset roots only).
        #[arg(long)]
        lap: Option<u32>,
        #[arg(long)]
        iou: Option<f64>,
        /// Also write SVG plots of both curves.
        #[arg(long)]
        svg: bool,
    },
    /// All-pairs frame similarity.
    Similarity {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        lap: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Experiment protocols.
    Experiment {
        #[command(subcommand)]
        protocol: Protocol,
    },
}

#[derive(Subcommand, Debug)]
enum Protocol {
    /// Build banks on each lap, test on the others, pool the results.
    CrossLap {
        /// Dataset root; without it the default synthetic route is
        /// generated from the seed.
        #[arg(long, env = DATA_ENV)]
        data: Option<PathBuf>,
        /// Size of the generated route when no dataset is given.
        #[arg(long)]
        frames_per_place: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub rng_seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let outcome = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli, &argv)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} workers: {e}"))),
        },
        None => run(&cli, &argv),
    };
    match outcome {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{summary}");
            EXIT_OK
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\n{}", <Cli as clap::CommandFactory>::command().render_usage());
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

/// Collects outputs and inputs of one command, then writes the summary and
/// manifest.
struct Recorder {
    command: &'static str,
    out_dir: PathBuf,
    started: Instant,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Recorder {
    fn new(command: &'static str, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(Recorder {
            command,
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input_file(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.input_digest(path, &bytes);
        Ok(())
    }

    fn input_digest(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    fn input_dataset(&mut self, path: &Path, dataset: &Dataset) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: dataset.manifest_checksum(),
        });
    }

    /// Writes `bytes` to `name` inside the output directory.
    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        self.write_at(&path, bytes)?;
        Ok(path)
    }

    fn write_at(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_atomic(path, bytes)?;
        self.record_output(path, bytes);
        Ok(())
    }

    fn record_output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    fn finish(mut self, argv: &[String], config: &impl Serialize, seed: u64, summary: &impl Serialize) -> CliResult<String> {
        let text = serde_json::to_string_pretty(summary).expect("summary serialises");
        self.write(&format!("{}.summary.json", self.command), format!("{text}\n").as_bytes())?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config).expect("config serialises"),
            rng_seed: seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        write_atomic(&path, format!("{body}\n").as_bytes())?;
        Ok(text)
    }
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::result::Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn experiment_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::load(path, format!("malformed configuration: {e}")))?
        }
        None => ExperimentConfig::synthetic(cli.seed),
    };
    config.seed = cli.seed;
    config.hnm.svm.shuffle_seed = cli.seed;
    config.validate()?;
    Ok(config)
}

fn parse_swathe(text: &str) -> CliResult<SwatheSize> {
    if text == "full" {
        return Ok(SwatheSize::FullLap);
    }
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(SwatheSize::Frames(n)),
        _ => Err(CliError::Usage(format!("--swathe expects a positive frame count or `full`, got `{text}`"))),
    }
}

fn parse_metric(text: &str) -> CliResult<SimilarityMetric> {
    match text {
        "gist" => Ok(SimilarityMetric::GistL2),
        "mi" => Ok(SimilarityMetric::MutualInformation),
        other => Err(CliError::Usage(format!("--metric expects gist or mi, got `{other}`"))),
    }
}

fn metric_name(metric: SimilarityMetric) -> &'static str {
    match metric {
        SimilarityMetric::GistL2 => "gist",
        SimilarityMetric::MutualInformation => "mi",
    }
}

fn detections_csv(dets: &[FrameDetection]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_detections(dets, &mut buf)?;
    Ok(buf)
}

fn run(cli: &Cli, argv: &[String]) -> CliResult<String> {
    match &cli.command {
        Command::Synth {
            out,
            places,
            frames_per_place,
            laps,
            pedestrian_rate,
        } => {
            let defaults = SynthConfig::default();
            let config = SynthConfig {
                n_places: places.unwrap_or(defaults.n_places),
                frames_per_place: frames_per_place.unwrap_or(defaults.frames_per_place),
                n_laps: laps.unwrap_or(defaults.n_laps),
                pedestrian_rate: pedestrian_rate.unwrap_or(defaults.pedestrian_rate),
                rng_seed: cli.seed,
                ..defaults
            };
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let mut rec = Recorder::new("synth", out)?;
            let dataset = generate_synthetic(&config)?;
            save_dataset(&dataset, out)?;
            rec.record_output(&out.join(dataio::FRAMES_FILE), dataset.manifest_checksum().as_bytes());
            let summary = serde_json::json!({
                "n_frames": dataset.frames.len(),
                "laps": dataset.laps(),
                "n_annotations": dataset.n_annotations(),
                "n_positives": dataset.positives.len(),
                "n_negative_images": dataset.negative_images.len(),
                "manifest_checksum": dataset.manifest_checksum(),
            });
            rec.finish(argv, &config, cli.seed, &summary)
        }

        Command::TrainGeneric { data, out } => {
            let config = experiment_config(cli)?;
            let mut rec = Recorder::new("train-generic", out)?;
            let dataset = load_dataset(&data.data)?;
            rec.input_dataset(&data.data, &dataset);
            let (positives, seeds) = training_samples(&dataset, &config)?;
            let (model, report) = train_generic_from(&dataset, &positives, &seeds, &config)?;
            let model_json = model.to_json();
            rec.write("model.json", model_json.as_bytes())?;
            rec.write("hnm_report.json", serde_json::to_string_pretty(&report).expect("report").as_bytes())?;
            let summary = serde_json::json!({
                "report": report,
                "model_sha256": hex::encode(Sha256::digest(model_json.as_bytes())),
            });
            rec.finish(argv, &config, cli.seed, &summary)
        }

        Command::BuildBank {
            data,
            method,
            swathe,
            lap,
            similarity,
            out,
        } => {
            let method: SwatheMethod = method.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
            let swathe = parse_swathe(swathe)?;
            let config = experiment_config(cli)?;
            let mut rec = Recorder::new("build-bank", out)?;
            let dataset = load_dataset(&data.data)?;
            rec.input_dataset(&data.data, &dataset);
            if !dataset.laps().contains(lap) {
                return Err(CliError::Data(Error::InvalidInput(format!("dataset has no lap {lap}"))));
            }
            let sim = match (method, similarity) {
                (SwatheMethod::Temporal, _) => None,
                (_, Some(path)) => {
                    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                    rec.input_digest(path, &bytes);
                    Some(SimilarityMatrix::read_binary(bytes.as_slice())?)
                }
                (SwatheMethod::Gist, None) => {
                    Some(lap_similarity(&dataset, *lap, SimilarityMetric::GistL2, &config.similarity)?)
                }
                (SwatheMethod::MutualInformation, None) => Some(lap_similarity(
                    &dataset,
                    *lap,
                    SimilarityMetric::MutualInformation,
                    &config.similarity,
                )?),
            };
            let prepared = Prepared::new(&dataset, &config)?;
            let bank = build_lap_bank(&prepared, *lap, method, swathe, &config.hnm, sim.as_ref())?;
            let bytes = write_bank(&bank);
            rec.write("bank.pfbank", &bytes)?;
            let summary = bank_summary(&bank, *lap);
            rec.finish(argv, &config, cli.seed, &summary)
        }

        Command::Detect {
            data,
            bank,
            model,
            lap,
            out,
        } => {
            let config = experiment_config(cli)?;
            let mut rec = Recorder::new("detect", out)?;
            let loaded_bank = match bank {
                Some(path) => {
                    rec.input_file(path)?;
                    Some(load_bank(path)?)
                }
                None => None,
            };
            let loaded_model = match (model, &loaded_bank) {
                (Some(path), None) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    rec.input_digest(path, text.as_bytes());
                    Some(LinearModel::from_json(&text).map_err(|e| match e {
                        Error::InvalidInput(m) => Error::load(path, m),
                        other => other,
                    })?)
                }
                (None, Some(_)) => None,
                _ => return Err(CliError::Usage("detect needs exactly one of --bank or --model".into())),
            };
            let dataset = load_dataset(&data.data)?;
            rec.input_dataset(&data.data, &dataset);

            let bank_laps = loaded_bank.as_ref().map(ModelBank::swathe_laps).unwrap_or_default();
            let targets: Vec<usize> = (0..dataset.frames.len())
                .filter(|&i| {
                    let l = dataset.frames[i].lap_id;
                    match lap {
                        Some(want) => l == *want,
                        None => !bank_laps.contains(&l),
                    }
                })
                .collect();
            let mut detect_config = config.detect.clone();
            let mut pyramid = config.hnm.pyramid.clone();
            let window_model = loaded_bank
                .as_ref()
                .and_then(|b| b.entries.first().map(|e| &e.model))
                .or(loaded_model.as_ref());
            if let Some(m) = window_model {
                detect_config.window = m.window;
                pyramid.shrink = m.shrink;
                pyramid.min_window = m.window;
            }
            let mut dets = Vec::new();
            let mut retrievals = BTreeMap::new();
            for &i in &targets {
                let frame = &dataset.frames[i];
                let model = match &loaded_bank {
                    Some(b) => {
                        let (m, matched) = b.retrieve_model(frame.pose.x, frame.pose.y)?;
                        retrievals.insert(frame.frame_id, matched);
                        m
                    }
                    None => loaded_model.as_ref().expect("model present"),
                };
                for d in detect(&dataset.frame_images[i], model, &detect_config, &pyramid)? {
                    dets.push(FrameDetection {
                        frame_id: frame.frame_id,
                        detection: d,
                    });
                }
            }
            rec.write("detections.csv", &detections_csv(&dets)?)?;
            let summary = serde_json::json!({
                "n_frames": targets.len(),
                "n_detections": dets.len(),
                "retrieved_frames": retrievals,
            });
            rec.finish(argv, &(config, detect_config, pyramid), cli.seed, &summary)
        }

        Command::Eval {
            dets,
            gt,
            curves,
            lap,
            iou,
            svg,
        } => {
            let iou_min = iou.unwrap_or(crate::eval::DEFAULT_IOU_MIN);
            if !(iou_min > 0.0 && iou_min <= 1.0) {
                return Err(CliError::Usage(format!("--iou must lie in (0, 1], got {iou_min}")));
            }
            let out_dir = curves.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let mut rec = Recorder::new("eval", out_dir)?;
            let det_bytes = fs::read(dets).map_err(|e| Error::io(dets, e))?;
            rec.input_digest(dets, &det_bytes);
            let detections = read_detections(det_bytes.as_slice(), dets)?;

            let ground_truth: BTreeMap<u32, Vec<BoundingBox>> = if gt.is_dir() {
                let (frames, annotations) = load_manifests(gt)?;
                let manifest = [gt.join(dataio::FRAMES_FILE), gt.join(dataio::ANNOTATIONS_FILE)];
                for p in &manifest {
                    rec.input_file(p)?;
                }
                frames
                    .iter()
                    .filter(|f| lap.map_or(true, |l| f.lap_id == l))
                    .map(|f| (f.frame_id, annotations.get(&f.frame_id).cloned().unwrap_or_default()))
                    .collect()
            } else {
                if lap.is_some() {
                    return Err(CliError::Usage("--lap needs a dataset root for --gt".into()));
                }
                rec.input_file(gt)?;
                let mut map = read_annotations(gt)?;
                for d in &detections {
                    map.entry(d.frame_id).or_default();
                }
                map
            };
            let mut per_frame: BTreeMap<u32, Vec<Detection>> = ground_truth.keys().map(|&k| (k, Vec::new())).collect();
            for d in &detections {
                match per_frame.get_mut(&d.frame_id) {
                    Some(v) => v.push(d.detection),
                    None if gt.is_dir() && lap.is_some() => {}
                    None => return Err(CliError::Data(Error::UnknownFrame(d.frame_id))),
                }
            }
            let images: Vec<ImageEval<'_>> = per_frame
                .iter()
                .map(|(id, d)| ImageEval {
                    detections: d,
                    ground_truth: &ground_truth[id],
                })
                .collect();
            let result = evaluate(&images, iou_min)?;
            write_curve_files(&mut rec, &result, curves, *svg)?;
            rec.finish(argv, &serde_json::json!({ "iou_min": iou_min }), cli.seed, &result.summary())
        }

        Command::Similarity { data, metric, lap, out } => {
            let metric = parse_metric(metric)?;
            let config = experiment_config(cli)?;
            let mut rec = Recorder::new("similarity", out)?;
            let dataset = load_dataset(&data.data)?;
            rec.input_dataset(&data.data, &dataset);
            let (matrix, frame_ids) = match lap {
                Some(l) => {
                    if !dataset.laps().contains(l) {
                        return Err(CliError::Data(Error::InvalidInput(format!("dataset has no lap {l}"))));
                    }
                    let idx = dataset.lap_indices(*l);
                    let ids: Vec<u32> = idx.iter().map(|&i| dataset.frames[i].frame_id).collect();
                    (lap_similarity(&dataset, *l, metric, &config.similarity)?, ids)
                }
                None => (
                    similarity_matrix(&dataset.frame_images, metric, &config.similarity)?,
                    dataset.frames.iter().map(|f| f.frame_id).collect(),
                ),
            };
            let name = metric_name(metric);
            let mut bin = Vec::new();
            matrix.write_binary(&mut bin).map_err(|e| Error::io(out, e))?;
            rec.write(&format!("similarity_{name}.simmat"), &bin)?;
            let mut csv = Vec::new();
            matrix.write_csv(&mut csv).map_err(|e| Error::io(out, e))?;
            rec.write(&format!("similarity_{name}.csv"), &csv)?;
            let summary = serde_json::json!({
                "metric": name,
                "n_frames": matrix.len(),
                "frame_ids": frame_ids,
            });
            rec.finish(argv, &config.similarity, cli.seed, &summary)
        }

        Command::Experiment {
            protocol: Protocol::CrossLap {
                data,
                frames_per_place,
                out,
            },
        } => {
            let config = experiment_config(cli)?;
            let mut rec = Recorder::new("experiment", out)?;
            let dataset = match data {
                Some(root) => {
                    if frames_per_place.is_some() {
                        return Err(CliError::Usage("--frames-per-place applies only without --data".into()));
                    }
                    let d = load_dataset(root)?;
                    rec.input_dataset(root, &d);
                    d
                }
                None => {
                    let synth = SynthConfig {
                        frames_per_place: frames_per_place.unwrap_or(SynthConfig::default().frames_per_place),
                        rng_seed: cli.seed,
                        ..SynthConfig::default()
                    };
                    synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                    generate_synthetic(&synth)?
                }
            };
            let (result, banks) = cross_lap(&dataset, &config)?;
            let laps = dataset.laps();
            for (label, per_lap) in &banks {
                for (bank, l) in per_lap.iter().zip(&laps) {
                    rec.write(&format!("banks/{label}_lap{l}.pfbank"), &write_bank(bank))?;
                }
            }
            for run in result.runs.iter().chain(result.generic.iter()) {
                if let Some(curves) = &run.curves {
                    let path = out.join(format!("curves/{}.csv", run.label));
                    write_curve_files(&mut rec, curves, &path, true)?;
                }
            }
            let summary = serde_json::json!({
                "result": result,
                "summary_checksum": result.summary_checksum(),
                "dataset_checksum": dataset.manifest_checksum(),
            });
            rec.finish(argv, &config, cli.seed, &summary)
        }
    }
}

fn write_curve_files(rec: &mut Recorder, result: &EvalResult, pr_path: &Path, svg: bool) -> CliResult<()> {
    let io = |e: std::io::Error| Error::io(pr_path, e);
    let mut pr = Vec::new();
    write_pr_csv(&result.pr_points, &mut pr).map_err(io)?;
    rec.write_at(pr_path, &pr)?;
    let mut mr = Vec::new();
    write_mr_fppi_csv(&result.mr_fppi_points, &mut mr).map_err(io)?;
    rec.write_at(&pr_path.with_extension("mr_fppi.csv"), &mr)?;
    if svg {
        let pr_pts: Vec<(f64, f64)> = result.pr_points.iter().map(|p| (p.recall, p.precision)).collect();
        let mr_pts: Vec<(f64, f64)> = result.mr_fppi_points.iter().map(|p| (p.fppi, p.miss_rate)).collect();
        rec.write_at(&pr_path.with_extension("pr.svg"), curve_svg("precision / recall", &pr_pts, false).as_bytes())?;
        rec.write_at(&pr_path.with_extension("mr_fppi.svg"), curve_svg("miss rate / FPPI", &mr_pts, true).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BankSummary {
    lap: u32,
    method: SwatheMethod,
    swathe_size: usize,
    entries: usize,
    training: TrainingStats,
    bank_checksum: String,
}

fn bank_summary(bank: &ModelBank, lap: u32) -> BankSummary {
    let mut distinct: HashMap<Vec<u32>, &HnmReport> = HashMap::new();
    for e in &bank.entries {
        let mut key = e.swathe.clone();
        key.sort_unstable();
        distinct.entry(key).or_insert(&e.report);
    }
    let mut keys: Vec<_> = distinct.keys().cloned().collect();
    keys.sort();
    BankSummary {
        lap,
        method: bank.config.method,
        swathe_size: bank.config.swathe_size,
        entries: bank.len(),
        training: TrainingStats::from_reports(keys.iter().map(|k| distinct[k])),
        bank_checksum: bank_checksum(bank),
    }
}
