//! The `pvc` command line.
//!
//! Every subcommand reads one run configuration and works inside
//! `paths.work_dir`:
//!
//! ```text
//! manifest.tsv            id, speaker, frames, alignment ("-" when absent)
//! speakers.tsv            index, speaker
//! features/<id>.pvcf      mel, F0 and content records
//! alignments/<id>.tsv     frame-snapped phone segments
//! projection.json         content projection
//! codebook.pvcb           product codebook
//! codebook_log.tsv        iteration, distortion
//! checkpoint.pvck         model, optimizer and training configuration
//! train_log.tsv           epoch, lr, loss (one line per epoch)
//! converted/<id>__<speaker>.pvcf|.wav
//! conversions.tsv         source, source_speaker, target_speaker, mode, mel, wav
//! eval.tsv                system, metric, value
//! <command>.meta.json     config fingerprint, seed, version, time
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::{info, warn, LevelFilter};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{parse_alignment, to_frames, to_tsv, FramePhoneMap};
use crate::binio;
use crate::config::{EmbedderKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    cosine, eer_threshold, enroll, far_from_scores, prosody_consistency, ClassifierEmbedder, Enrollment, EvalReport,
    OneHotEmbedder, SpeakerEmbedder, StatsEmbedder,
};
use crate::features::{
    extract_f0, load_frame_matrix, load_waveform, mel_spectrogram, save_frame_matrix, save_waveform, ContentProjection,
    FeatureKind, FrameMatrix, UtteranceFeatures,
};
use crate::model::{self, Checkpoint, ProsodyMode, TrainingExample};
use crate::pipeline::{Analysis, Pipeline};
use crate::prosody::{adpf, rdpf, AdpfParams, FilteredProsody, RdpfMode, PROSODY_DIM};
use crate::quantizer::{stack_rows, ProductCodebook};
use crate::vocoder::griffin_lim;

pub const LOG_ENV: &str = "PVC_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "pvc", version, about = "Voice conversion with discrete prosody units and prosody filters")]
pub struct Cli {
    /// Run configuration (TOML). Built-in defaults, relative to the current
    /// directory, when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized stage; overrides the configured one.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Prosody mode: none, base, rdpf or adpf.
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<ProsodyMode>,
    /// Work directory; overrides paths.work_dir.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract mel, F0 and content features from every wav file.
    Extract,
    /// Fit the product codebook on the extracted mels.
    TrainCodebook,
    /// Train the conversion model.
    Train,
    /// Convert extracted utterances to a target speaker.
    Convert {
        /// Target speaker; each source goes to the next speaker in the list when omitted.
        #[arg(long)]
        target: Option<String>,
        /// Utterance id to convert (repeatable); all utterances when omitted.
        #[arg(long = "utterance", value_name = "ID")]
        utterances: Vec<String>,
    },
    /// Score conversions: false acceptance rate and prosody consistency.
    Evaluate,
    /// Show the frames a prosody filter keeps and verify its output.
    InspectFilter {
        /// Number of frames of seeded random prosody.
        #[arg(long)]
        frames: Option<usize>,
        /// Block length for rdpf; the configured one when omitted.
        #[arg(long)]
        tau: Option<usize>,
        /// Phone lengths in frames for adpf, e.g. 2,1,3.
        #[arg(long, value_delimiter = ',')]
        phones: Vec<usize>,
        /// Prosody feature file; seeded random vectors when omitted.
        #[arg(long, value_name = "FILE")]
        prosody: Option<PathBuf>,
        /// Alignment file (TSV or TextGrid) for adpf.
        #[arg(long, value_name = "FILE")]
        alignment: Option<PathBuf>,
        /// Seeded random selection within rdpf blocks.
        #[arg(long)]
        random: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract => "extract",
            Command::TrainCodebook => "train-codebook",
            Command::Train => "train",
            Command::Convert { .. } => "convert",
            Command::Evaluate => "evaluate",
            Command::InspectFilter { .. } => "inspect-filter",
        }
    }
}

/// Installs the stderr logger at the level named by `PVC_LOG_LEVEL`
/// (error, info or debug; info when unset).
pub fn init_logging() -> Result<()> {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Err(_) | Ok("info") => LevelFilter::Info,
        Ok("error") => LevelFilter::Error,
        Ok("debug") => LevelFilter::Debug,
        Ok(other) => {
            return Err(Error::Config(format!("{LOG_ENV} must be error, info or debug, got '{other}'")));
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    Ok(())
}

/// Process exit code for an error: 2 for configuration and missing inputs,
/// 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingInput(_) => 2,
        _ => 1,
    }
}

/// Runs one subcommand; the report is returned for printing.
pub fn run(cli: &Cli) -> Result<String> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(&cwd);
            c
        }
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.work_dir = cwd.join(out);
    }
    let ws = Workspace {
        root: cfg.paths.work_dir.clone(),
    };
    let report = match &cli.command {
        Command::Extract => extract(&cfg, &ws)?,
        Command::TrainCodebook => train_codebook(&cfg, &ws)?,
        Command::Train => train(&cfg, &ws, cli.mode)?,
        Command::Convert { target, utterances } => convert(&cfg, &ws, cli.mode, target.as_deref(), utterances)?,
        Command::Evaluate => evaluate(&cfg, &ws)?,
        Command::InspectFilter {
            frames,
            tau,
            phones,
            prosody,
            alignment,
            random,
        } => {
            let req = FilterRequest {
                mode: cli.mode.unwrap_or(ProsodyMode::Rdpf),
                frames: *frames,
                tau: tau.unwrap_or(cfg.training.tau),
                phones: phones.clone(),
                prosody: prosody.clone(),
                alignment: alignment.clone(),
                random: *random,
                seed: cfg.seed,
            };
            let checkpoint = ws.path(CHECKPOINT);
            let params = if checkpoint.is_file() {
                info!("adpf parameters from {}", checkpoint.display());
                Checkpoint::load(&checkpoint)?.model.adpf
            } else {
                AdpfParams::init(cfg.seed)
            };
            return inspect_filter(&req, &params);
        }
    };
    write_metadata(&ws, cli.command.name(), &cfg, cli.mode)?;
    Ok(report)
}

const MANIFEST: &str = "manifest.tsv";
const SPEAKERS: &str = "speakers.tsv";
const PROJECTION: &str = "projection.json";
const CODEBOOK: &str = "codebook.pvcb";
const CODEBOOK_LOG: &str = "codebook_log.tsv";
const CHECKPOINT: &str = "checkpoint.pvck";
const TRAIN_LOG: &str = "train_log.tsv";
const CONVERSIONS: &str = "conversions.tsv";
const EVAL: &str = "eval.tsv";

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// `rel` inside the work directory, or a missing-input error naming the
    /// command that produces it.
    fn require(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingInput(format!("{} (run `pvc {producer}` first)", p.display())))
        }
    }

    fn features(&self, id: &str) -> PathBuf {
        self.path("features").join(format!("{id}.pvcf"))
    }

    fn write(&self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        binio::write_file(&self.path(rel), text.as_bytes())
    }
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    config_fingerprint: String,
    seed: u64,
    mode: Option<String>,
    version: &'static str,
    unix_time: u64,
}

fn write_metadata(ws: &Workspace, command: &str, cfg: &RunConfig, mode: Option<ProsodyMode>) -> Result<()> {
    let meta = RunMetadata {
        command,
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        mode: mode.map(|m| m.to_string()),
        version: env!("CARGO_PKG_VERSION"),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    ws.write(format!("{command}.meta.json"), &(json + "\n"))
}

/// One extracted utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub speaker: String,
    pub frames: usize,
    /// File name under `alignments/`.
    pub alignment: Option<String>,
}

fn tsv_rows(text: &str, columns: usize, what: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines().enumerate();
    lines.next();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<String> = l.split('\t').map(str::to_string).collect();
            if fields.len() != columns {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{what}: expected {columns} fields, found {}", fields.len()),
                });
            }
            Ok(fields)
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_manifest(ws: &Workspace, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::from("id\tspeaker\tframes\talignment\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}", r.id, r.speaker, r.frames, r.alignment.as_deref().unwrap_or("-")).unwrap();
    }
    ws.write(MANIFEST, &out)
}

fn read_manifest(ws: &Workspace) -> Result<Vec<ManifestRow>> {
    let path = ws.require(MANIFEST, "extract")?;
    let rows = tsv_rows(&read_text(&path)?, 4, MANIFEST)?
        .into_iter()
        .map(|f| {
            Ok(ManifestRow {
                frames: f[2]
                    .parse()
                    .map_err(|_| Error::Format(format!("{MANIFEST}: bad frame count '{}'", f[2])))?,
                alignment: (f[3] != "-").then(|| f[3].clone()),
                id: f[0].clone(),
                speaker: f[1].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no utterances", path.display())));
    }
    Ok(rows)
}

fn write_speakers(ws: &Workspace, speakers: &[String]) -> Result<()> {
    let mut out = String::from("index\tspeaker\n");
    for (i, s) in speakers.iter().enumerate() {
        writeln!(out, "{i}\t{s}").unwrap();
    }
    ws.write(SPEAKERS, &out)
}

fn read_speakers(ws: &Workspace) -> Result<Vec<String>> {
    let path = ws.require(SPEAKERS, "extract")?;
    Ok(tsv_rows(&read_text(&path)?, 2, SPEAKERS)?
        .into_iter()
        .map(|mut f| f.remove(1))
        .collect())
}

fn speaker_index(speakers: &[String], name: &str) -> Result<usize> {
    speakers.iter().position(|s| s == name).ok_or_else(|| {
        Error::Config(format!("unknown speaker '{name}' (known: {})", speakers.join(", ")))
    })
}

/// `<id>\t<speaker>` lines, no header.
fn read_speaker_map(path: &Path) -> Result<HashMap<String, String>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split_once('\t') {
            Some((id, spk)) if !id.trim().is_empty() && !spk.trim().is_empty() => {
                Ok((id.trim().to_string(), spk.trim().to_string()))
            }
            _ => Err(Error::Parse {
                line: i + 1,
                message: format!("{}: expected '<id>\\t<speaker>'", path.display()),
            }),
        })
        .collect()
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut wavs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            wavs.push(path);
        }
    }
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::EmptyInput(format!("no input files: no .wav files in {}", dir.display())));
    }
    Ok(wavs)
}

fn find_alignment(dir: Option<&Path>, id: &str) -> Option<PathBuf> {
    let dir = dir?;
    ["tsv", "TextGrid"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

struct Extracted {
    id: String,
    speaker: String,
    mel: FrameMatrix,
    f0: crate::features::F0Track,
    alignment: Option<String>,
}

fn extract(cfg: &RunConfig, ws: &Workspace) -> Result<String> {
    let wavs = list_wavs(&cfg.paths.wav_dir)?;
    let speaker_map = cfg.paths.speakers.as_deref().map(read_speaker_map).transpose()?;
    let fc = &cfg.features;
    let hop = fc.hop_seconds();
    info!("extracting {} files from {}", wavs.len(), cfg.paths.wav_dir.display());

    let results: Vec<(String, Result<Extracted>)> = wavs
        .par_iter()
        .map(|path| {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let r = (|| {
                let speaker = match &speaker_map {
                    Some(map) => map
                        .get(&id)
                        .cloned()
                        .ok_or_else(|| Error::MissingInput(format!("no speaker entry for '{id}'")))?,
                    None => id.split('_').next().unwrap_or(&id).to_string(),
                };
                let wave = load_waveform(path, fc.sample_rate)?;
                let mel = mel_spectrogram(&wave, fc)?;
                let f0 = extract_f0(&wave, fc)?;
                let alignment = match find_alignment(cfg.paths.alignment_dir.as_deref(), &id) {
                    Some(p) => {
                        let (aligned, _) = to_frames(&parse_alignment(&p)?, mel.num_frames(), hop)?;
                        let name = format!("{id}.tsv");
                        ws.write(Path::new("alignments").join(&name), &to_tsv(&aligned.to_raw(hop)))?;
                        Some(name)
                    }
                    None => None,
                };
                Ok(Extracted {
                    id: id.clone(),
                    speaker,
                    mel,
                    f0,
                    alignment,
                })
            })();
            (id, r)
        })
        .collect();

    let mut failures = Vec::new();
    let mut done = Vec::new();
    for (id, r) in results {
        match r {
            Ok(x) => done.push(x),
            Err(e) => {
                warn!("{id}: {e}");
                failures.push(format!("{id}: {e}"));
            }
        }
    }
    if done.is_empty() {
        return Err(Error::Validation(format!(
            "none of {} files could be extracted:\n  {}",
            wavs.len(),
            failures.join("\n  ")
        )));
    }

    let mels: Vec<FrameMatrix> = done.iter().map(|x| x.mel.clone()).collect();
    let projection = ContentProjection::fit(&mels, fc)?;
    projection.save(&ws.path(PROJECTION))?;

    let mut rows = Vec::with_capacity(done.len());
    for x in done {
        let content = projection.transform(&x.mel)?;
        let bundle = UtteranceFeatures::new(x.mel, x.f0, content)?;
        bundle.save(ws.features(&x.id))?;
        rows.push(ManifestRow {
            frames: bundle.num_frames(),
            id: x.id,
            speaker: x.speaker,
            alignment: x.alignment,
        });
    }
    let mut speakers: Vec<String> = rows.iter().map(|r| r.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    write_manifest(ws, &rows)?;
    write_speakers(ws, &speakers)?;

    let aligned = rows.iter().filter(|r| r.alignment.is_some()).count();
    let report = format!(
        "extracted {} utterances ({} speakers, {} aligned) into {}\n",
        rows.len(),
        speakers.len(),
        aligned,
        ws.root.display()
    );
    if !failures.is_empty() {
        return Err(Error::Validation(format!(
            "{report}{} of {} files failed extraction:\n  {}",
            failures.len(),
            wavs.len(),
            failures.join("\n  ")
        )));
    }
    Ok(report)
}

fn load_features(ws: &Workspace, rows: &[ManifestRow]) -> Result<Vec<UtteranceFeatures>> {
    rows.par_iter()
        .map(|r| {
            let path = ws.features(&r.id);
            if !path.is_file() {
                return Err(Error::MissingInput(format!("{} (run `pvc extract` first)", path.display())));
            }
            let f = UtteranceFeatures::load(&path)?;
            if f.num_frames() != r.frames {
                return Err(Error::Validation(format!(
                    "{}: {} frames but the manifest says {}",
                    path.display(),
                    f.num_frames(),
                    r.frames
                )));
            }
            Ok(f)
        })
        .collect()
}

fn train_codebook(cfg: &RunConfig, ws: &Workspace) -> Result<String> {
    let rows = read_manifest(ws)?;
    let feats = load_features(ws, &rows)?;
    let mels: Vec<FrameMatrix> = feats.into_iter().map(|f| f.mel).collect();
    let stacked = stack_rows(&mels)?;
    let q = &cfg.quantizer;
    info!(
        "training {}x{} product codebook on {} frames",
        q.codebook_size,
        q.codebook_size,
        stacked.num_frames()
    );
    let (codebook, trace) = ProductCodebook::train(&stacked, q.codebook_size, q.iterations, cfg.seed)?;
    codebook.save(ws.path(CODEBOOK))?;
    let mut log = String::from("iteration\tdistortion\n");
    for (i, d) in trace.distortions.iter().enumerate() {
        writeln!(log, "{}\t{d}", i + 1).unwrap();
    }
    ws.write(CODEBOOK_LOG, &log)?;
    Ok(format!(
        "codebook: {} iterations, final distortion {}\n",
        trace.iterations_run,
        trace.distortions.last().copied().unwrap_or(f64::NAN)
    ))
}

fn load_frame_map(ws: &Workspace, row: &ManifestRow, hop: f64) -> Result<Option<FramePhoneMap>> {
    row.alignment
        .as_ref()
        .map(|name| {
            let raw = parse_alignment(ws.path("alignments").join(name))?;
            Ok(to_frames(&raw, row.frames, hop)?.1)
        })
        .transpose()
}

fn require_alignments(rows: &[ManifestRow], mode: ProsodyMode) -> Result<()> {
    if mode != ProsodyMode::Adpf {
        return Ok(());
    }
    let missing: Vec<&str> = rows.iter().filter(|r| r.alignment.is_none()).map(|r| r.id.as_str()).collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Error::MissingInput(format!(
        "adpf mode needs a phone alignment for every utterance; none for {} (set paths.alignment_dir and rerun `pvc extract`)",
        missing.join(", ")
    )))
}

fn train(cfg: &RunConfig, ws: &Workspace, mode: Option<ProsodyMode>) -> Result<String> {
    let mode = mode.unwrap_or(cfg.training.prosody_mode);
    let rows = read_manifest(ws)?;
    let speakers = read_speakers(ws)?;
    require_alignments(&rows, mode)?;
    let codebook = ProductCodebook::load(ws.require(CODEBOOK, "train-codebook")?)?;
    let feats = load_features(ws, &rows)?;
    let hop = cfg.features.hop_seconds();
    let examples = rows
        .iter()
        .zip(feats)
        .map(|(r, f)| {
            Ok(TrainingExample {
                indices: codebook.quantize(&f.mel)?,
                alignment: load_frame_map(ws, r, hop)?,
                speaker: speaker_index(&speakers, &r.speaker)?,
                content: f.content,
                mel: f.mel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model_cfg = cfg.model.clone();
    if model_cfg.num_speakers != speakers.len() {
        info!("model.num_speakers set to {} from the speaker list", speakers.len());
        model_cfg.num_speakers = speakers.len();
    }
    let training = model::TrainingConfig {
        prosody_mode: mode,
        ..cfg.training.clone()
    };
    info!("training mode {mode} on {} utterances for {} epochs", examples.len(), training.epochs);
    let mut log = String::new();
    let ckpt = model::train(&examples, &model_cfg, &training, &mut |e| {
        info!("epoch {} lr {:.6} loss {:.6}", e.epoch, e.lr, e.loss);
        writeln!(log, "{e}").unwrap();
    })?;
    ckpt.save(ws.path(CHECKPOINT))?;
    ws.write(TRAIN_LOG, &log)?;
    Ok(format!(
        "trained {} epochs in mode {mode}; checkpoint {}\n",
        ckpt.epoch,
        ckpt.fingerprint_hex()
    ))
}

/// One converted utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversionRow {
    pub source: String,
    pub source_speaker: String,
    pub target_speaker: String,
    pub mode: ProsodyMode,
    pub mel: String,
    pub wav: Option<String>,
}

fn write_conversions(ws: &Workspace, rows: &[ConversionRow]) -> Result<()> {
    let mut out = String::from("source\tsource_speaker\ttarget_speaker\tmode\tmel\twav\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.source,
            r.source_speaker,
            r.target_speaker,
            r.mode,
            r.mel,
            r.wav.as_deref().unwrap_or("-")
        )
        .unwrap();
    }
    ws.write(CONVERSIONS, &out)
}

fn read_conversions(ws: &Workspace) -> Result<Vec<ConversionRow>> {
    let path = ws.require(CONVERSIONS, "convert")?;
    let rows = tsv_rows(&read_text(&path)?, 6, CONVERSIONS)?
        .into_iter()
        .map(|f| {
            Ok(ConversionRow {
                mode: f[3].parse()?,
                wav: (f[5] != "-").then(|| f[5].clone()),
                source: f[0].clone(),
                source_speaker: f[1].clone(),
                target_speaker: f[2].clone(),
                mel: f[4].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no conversions", path.display())));
    }
    Ok(rows)
}

fn convert(
    cfg: &RunConfig,
    ws: &Workspace,
    mode: Option<ProsodyMode>,
    target: Option<&str>,
    only: &[String],
) -> Result<String> {
    let checkpoint = Checkpoint::load(ws.require(CHECKPOINT, "train")?)?;
    let mode = mode.unwrap_or(checkpoint.training.prosody_mode);
    let speakers = read_speakers(ws)?;
    let manifest = read_manifest(ws)?;
    let rows: Vec<ManifestRow> = if only.is_empty() {
        manifest
    } else {
        only.iter()
            .map(|id| {
                manifest
                    .iter()
                    .find(|r| &r.id == id)
                    .cloned()
                    .ok_or_else(|| Error::MissingInput(format!("utterance '{id}' is not in {MANIFEST}")))
            })
            .collect::<Result<_>>()?
    };
    require_alignments(&rows, mode)?;
    let fixed_target = target.map(|t| speaker_index(&speakers, t)).transpose()?;
    if checkpoint.model.config.num_speakers != speakers.len() {
        return Err(Error::Contract(format!(
            "checkpoint has {} speakers but {SPEAKERS} lists {}",
            checkpoint.model.config.num_speakers,
            speakers.len()
        )));
    }
    let pipeline = Pipeline {
        features: cfg.features.clone(),
        projection: ContentProjection::load(&ws.require(PROJECTION, "extract")?)?,
        codebook: ProductCodebook::load(ws.require(CODEBOOK, "train-codebook")?)?,
        checkpoint,
        vocoder: cfg.vocoder.clone(),
    };
    let hop = cfg.features.hop_seconds();
    info!("converting {} utterances in mode {mode}", rows.len());

    let converted = rows
        .par_iter()
        .map(|r| {
            let source = speaker_index(&speakers, &r.speaker)?;
            let target = fixed_target.unwrap_or((source + 1) % speakers.len());
            let f = UtteranceFeatures::load(ws.features(&r.id))?;
            let analysis = Analysis {
                indices: pipeline.codebook.quantize(&f.mel)?,
                mel: f.mel,
                f0: f.f0,
                content: f.content,
            };
            let map = load_frame_map(ws, r, hop)?;
            let conv = pipeline.convert(&analysis, map.as_ref(), target, mode)?;
            let wave = griffin_lim(&conv.mel, &cfg.features, &cfg.vocoder)?;
            let stem = format!("{}__{}", r.id, speakers[target]);
            let mel_rel = format!("converted/{stem}.pvcf");
            let wav_rel = format!("converted/{stem}.wav");
            save_frame_matrix(ws.path(&mel_rel), &conv.mel)?;
            save_waveform(ws.path(&wav_rel), &wave)?;
            Ok(ConversionRow {
                source: r.id.clone(),
                source_speaker: r.speaker.clone(),
                target_speaker: speakers[target].clone(),
                mode,
                mel: mel_rel,
                wav: Some(wav_rel),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_conversions(ws, &converted)?;
    Ok(format!("converted {} utterances in mode {mode}\n", converted.len()))
}

fn build_embedder(cfg: &RunConfig, data: &[(&FrameMatrix, usize)], num_speakers: usize) -> Result<Box<dyn SpeakerEmbedder>> {
    let e = &cfg.evaluation;
    Ok(match e.embedder {
        EmbedderKind::Classifier => Box::new(ClassifierEmbedder::train(data, num_speakers, &e.classifier)?),
        EmbedderKind::Stats => {
            let mels: Vec<&FrameMatrix> = data.iter().map(|d| d.0).collect();
            Box::new(StatsEmbedder::centered(&mels)?)
        }
        EmbedderKind::Onehot => Box::new(OneHotEmbedder { k: e.onehot_bins }),
    })
}

fn evaluate(cfg: &RunConfig, ws: &Workspace) -> Result<String> {
    let conversions = read_conversions(ws)?;
    let rows = read_manifest(ws)?;
    let speakers = read_speakers(ws)?;
    let feats = load_features(ws, &rows)?;
    let labelled: Vec<(&FrameMatrix, usize)> = rows
        .iter()
        .zip(&feats)
        .map(|(r, f)| Ok((&f.mel, speaker_index(&speakers, &r.speaker)?)))
        .collect::<Result<_>>()?;
    let embedder = build_embedder(cfg, &labelled, speakers.len())?;
    info!("speaker embedder: {}", embedder.name());

    let n_enroll = cfg.evaluation.enroll_utterances;
    let mut enrollments: BTreeMap<usize, Enrollment> = BTreeMap::new();
    let mut held_out = Vec::new();
    for (s, name) in speakers.iter().enumerate() {
        let mine: Vec<&FrameMatrix> = labelled.iter().filter(|d| d.1 == s).map(|d| d.0).collect();
        let k = n_enroll.min(mine.len());
        if k > 0 {
            enrollments.insert(s, enroll(name, &mine[..k], embedder.as_ref())?);
        }
        held_out.extend(mine[k..].iter().map(|m| (*m, s)));
    }

    let mut report = EvalReport::default();
    let threshold = match cfg.evaluation.threshold {
        Some(t) => t,
        None => {
            let trials: Vec<(&FrameMatrix, usize)> = if held_out.is_empty() { labelled.clone() } else { held_out };
            let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
            for (mel, s) in &trials {
                let e = embedder.embed(mel)?;
                for (t, en) in &enrollments {
                    let score = cosine(e.view(), en.embedding.view());
                    if t == s {
                        genuine.push(score);
                    } else {
                        impostor.push(score);
                    }
                }
            }
            let (t, eer) = eer_threshold(&genuine, &impostor).map_err(|_| {
                Error::Config("no equal-error-rate threshold without two enrolled speakers; set evaluation.threshold".into())
            })?;
            report.push("real", "eer", eer);
            t
        }
    };

    let mut by_mode: BTreeMap<String, Vec<&ConversionRow>> = BTreeMap::new();
    for c in &conversions {
        by_mode.entry(c.mode.to_string()).or_default().push(c);
    }
    for (system, convs) in &by_mode {
        let scored = convs
            .par_iter()
            .map(|c| {
                let target = speaker_index(&speakers, &c.target_speaker)?;
                let en = enrollments
                    .get(&target)
                    .ok_or_else(|| Error::MissingInput(format!("no enrollment utterances for '{}'", c.target_speaker)))?;
                let mel = load_frame_matrix(ws.path(&c.mel))?;
                mel.expect_kind(FeatureKind::Mel)?;
                let score = cosine(embedder.embed(&mel)?.view(), en.embedding.view());
                let consistency = match &c.wav {
                    Some(wav) => {
                        let src = rows
                            .iter()
                            .position(|r| r.id == c.source)
                            .ok_or_else(|| Error::MissingInput(format!("source '{}' is not in {MANIFEST}", c.source)))?;
                        let wave = load_waveform(ws.path(wav), cfg.features.sample_rate)?;
                        Some(prosody_consistency(&feats[src].f0, &extract_f0(&wave, &cfg.features)?)?)
                    }
                    None => None,
                };
                Ok((score, consistency))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let far = far_from_scores(&scores, threshold)?;
        report.push(system, "far", far.far);
        report.push(system, "accepted", far.accepted as f64);
        report.push(system, "total", far.total as f64);
        report.push(system, "threshold", threshold);
        let cons: Vec<f64> = scored.iter().filter_map(|s| s.1).collect();
        if !cons.is_empty() {
            report.push(system, "prosody_consistency", cons.iter().sum::<f64>() / cons.len() as f64);
        }
    }
    let tsv = report.to_tsv();
    ws.write(EVAL, &tsv)?;
    Ok(tsv)
}

/// Inputs of `pvc inspect-filter`.
#[derive(Debug, Clone)]
pub struct FilterRequest {
    pub mode: ProsodyMode,
    pub frames: Option<usize>,
    pub tau: usize,
    pub phones: Vec<usize>,
    pub prosody: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub random: bool,
    pub seed: u64,
}

/// Text report of which frames the filter keeps, ending in a PASS line when
/// the output equals the kept rows repeated over their blocks. A failed
/// check is an error carrying the report.
pub fn inspect_filter(req: &FilterRequest, params: &AdpfParams) -> Result<String> {
    if !matches!(req.mode, ProsodyMode::Rdpf | ProsodyMode::Adpf) {
        return Err(Error::Config(format!("inspect-filter needs mode rdpf or adpf, got {}", req.mode)));
    }
    let hop = 0.01;
    let p = match &req.prosody {
        Some(path) => {
            let m = load_frame_matrix(path)?;
            m.expect_kind(FeatureKind::Prosody)?;
            m
        }
        None => {
            let t = req.frames.or_else(|| (!req.phones.is_empty()).then(|| req.phones.iter().sum())).ok_or_else(|| {
                Error::Config("give --frames, --phones or --prosody".into())
            })?;
            if t == 0 {
                return Err(Error::EmptyInput("zero frames requested".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            let data = Array2::from_shape_fn((t, PROSODY_DIM), |_| rng.gen_range(-1.0..1.0));
            FrameMatrix::new(data, hop, FeatureKind::Prosody)?
        }
    };
    let t = p.num_frames();
    if let Some(f) = req.frames {
        if f != t {
            return Err(Error::Contract(format!("--frames {f} but the prosody has {t} frames")));
        }
    }

    let mut out = String::new();
    let (filtered, reference, blocks): (FilteredProsody, Array2<f64>, Vec<(usize, usize)>) = match req.mode {
        ProsodyMode::Rdpf => {
            let sel = if req.random { RdpfMode::Random } else { RdpfMode::Deterministic };
            let f = rdpf(&p, req.tau, sel, req.seed)?;
            let blocks = crate::prosody::rdpf_blocks(t, req.tau)?;
            let label = if req.random { format!("random, seed {}", req.seed) } else { "deterministic".into() };
            writeln!(out, "filter    rdpf ({label})").unwrap();
            writeln!(out, "frames    {t}").unwrap();
            writeln!(out, "tau       {}", req.tau).unwrap();
            if req.tau == 1 {
                writeln!(out, "note      tau = 1 keeps every frame: the filter is the identity").unwrap();
            }
            (f, p.data().clone(), blocks)
        }
        _ => {
            let map = if !req.phones.is_empty() {
                FramePhoneMap::from_lengths(&req.phones)?
            } else if let Some(path) = &req.alignment {
                to_frames(&parse_alignment(path)?, t, p.hop_seconds())?.1
            } else {
                return Err(Error::MissingInput("adpf needs --phones or --alignment".into()));
            };
            if map.len() != t {
                return Err(Error::Contract(format!("alignment covers {} frames but the prosody has {t}", map.len())));
            }
            let f = adpf(&p, &map, params)?;
            writeln!(out, "filter    adpf (GRU {} -> {})", PROSODY_DIM, params.hidden()).unwrap();
            writeln!(out, "frames    {t}").unwrap();
            (f, params.hidden_states(p.data().view()), map.runs())
        }
    };
    let selected = filtered.selected_frames();
    let unit = if req.mode == ProsodyMode::Rdpf { "block" } else { "phone" };
    writeln!(out, "{unit}s{}{}", " ".repeat(10 - unit.len() - 1), blocks.len()).unwrap();
    for (i, (&(s, e), &k)) in blocks.iter().zip(selected).enumerate() {
        writeln!(out, "  {unit} {i:<4} frames {s:>5}..{e:<5} keeps {k}").unwrap();
    }
    let list: Vec<String> = selected.iter().map(usize::to_string).collect();
    writeln!(out, "selected  {}", list.join(" ")).unwrap();

    let y = filtered.matrix().data();
    let mut problems = Vec::new();
    for (b, (&(s, e), &k)) in blocks.iter().zip(selected).enumerate() {
        if !(s..e).contains(&k) {
            problems.push(format!("{unit} {b} keeps frame {k} outside {s}..{e}"));
            continue;
        }
        for row in s..e {
            if y.row(row) != reference.row(k) {
                problems.push(format!("frame {row} differs from kept frame {k}"));
            }
        }
    }
    let what = if req.mode == ProsodyMode::Rdpf {
        "every output row equals the input row kept for its block"
    } else {
        "every output row equals the recurrent state at its phone's last frame"
    };
    if problems.is_empty() {
        writeln!(out, "check     PASS  {what}").unwrap();
        Ok(out)
    } else {
        writeln!(out, "check     FAIL  {}", problems.join("; ")).unwrap();
        Err(Error::Validation(out))
    }
}
