//! Reproducible command runs over the srs-sense pipeline.
//!
//! Every command stages its outputs in temporary files next to their final
//! paths, writes a [`RunManifest`] and only then renames the outputs into
//! place.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tempfile::NamedTempFile;

use srs_sense::dataset::{self, trace_samples, ManifestEntry, TraceSample, MANIFEST_NAME};
use srs_sense::movement::{EnergyConfig, SampleGeometry};
use srs_sense::nn::{evaluate, stratified_split, train, EvalReport, GroupBy, ModelParams, TrainConfig, TrainReport};
use srs_sense::resp::{estimate_respiration, BandConfig, EstimateRecord};
use srs_sense::sim::{simulate, GroundTruth, SimulationConfig};
use srs_sense::trace::write_trace;

pub const TOOL_VERSION: &str = concat!("srs-sense ", env!("CARGO_PKG_VERSION"));
pub const SEED_ENV: &str = "SRS_SENSE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] srs_sense::Error),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },

    #[error("invalid config {path}: {source}")]
    Config { path: PathBuf, source: serde_json::Error },

    #[error("invalid {field}: {reason}")]
    Usage { field: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 validation, 3 corrupt or unreadable input, 4 insufficient data,
    /// 1 anything else (failed writes).
    pub fn exit_code(&self) -> u8 {
        use srs_sense::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Validation { .. } | E::ShapeMismatch { .. } | E::Json(_) => 2,
                E::Corrupt(_) | E::Io(_) => 3,
                E::InsufficientData { .. }
                | E::BandResolution { .. }
                | E::NoUsableSubcarrier
                | E::Calibration(_)
                | E::DegenerateReference { .. } => 4,
            },
            CliError::Config { .. } | CliError::Usage { .. } => 2,
            CliError::Read { .. } => 3,
            CliError::Write { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Run record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<FileHash>,
    pub inputs: Vec<FileHash>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<FileHash>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn hash_file(path: &Path) -> Result<FileHash> {
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&read_bytes(path)?),
    })
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, FileHash)> {
    let bytes = read_bytes(path)?;
    let value = serde_json::from_slice(&bytes).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    let hash = FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    Ok((value, hash))
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut text = serde_json::to_vec_pretty(value).expect("serialisable value");
    text.push(b'\n');
    text
}

/// Outputs held in temporary files until [`Staged::commit`].
#[derive(Default)]
struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
    hashes: Vec<FileHash>,
}

impl Staged {
    fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let werr = |source| CliError::Write {
            path: path.to_path_buf(),
            source,
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(werr)?;
        let mut tmp = NamedTempFile::new_in(dir).map_err(werr)?;
        tmp.write_all(bytes).map_err(werr)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file()
                .set_permissions(std::fs::Permissions::from_mode(0o644))
                .map_err(werr)?;
        }
        tmp.as_file().sync_all().map_err(werr)?;
        self.hashes.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    /// Write the manifest, then move every staged output into place.
    fn commit(self, mut manifest: RunManifest, manifest_path: &Path, started: Instant) -> Result<RunManifest> {
        manifest.outputs = self.hashes;
        manifest.wall_time_s = started.elapsed().as_secs_f64();
        let mut last = Staged::default();
        last.add(manifest_path, &to_json(&manifest))?;
        for (tmp, path) in last.files.into_iter().chain(self.files) {
            tmp.persist(&path).map_err(|e| CliError::Write {
                path: path.clone(),
                source: e.error,
            })?;
        }
        Ok(manifest)
    }
}

fn manifest(command: &str, config: Option<FileHash>, inputs: Vec<FileHash>, seed: Option<u64>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config,
        inputs,
        seed,
        tool_version: TOOL_VERSION.to_string(),
        outputs: Vec::new(),
        wall_time_s: 0.0,
    }
}

/// `night.csi` -> `night.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Ground-truth sidecar of a trace: `night.csi` -> `night.truth.json`.
pub fn truth_path(trace: &Path) -> PathBuf {
    sibling(trace, "truth.json")
}

/// Run manifest of a file output: `night.csi` -> `night.run.json`.
pub fn run_manifest_path(output: &Path) -> PathBuf {
    sibling(output, "run.json")
}

/// Parse `"lo,hi"` into a pair of finite numbers.
pub fn parse_pair(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated numbers, got {text:?}"))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{s:?} is not a finite number"))
    };
    Ok((parse(a)?, parse(b)?))
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Writes the trace, `<trace>.truth.json` and `<trace>.run.json`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let (mut config, config_hash): (SimulationConfig, _) = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (rec, truth) = simulate(&config)?;
    let mut trace = Vec::new();
    write_trace(&rec, &mut trace)?;
    let mut staged = Staged::default();
    staged.add(&args.out, &trace)?;
    staged.add(&truth_path(&args.out), &to_json(&truth))?;
    let m = manifest("simulate", Some(config_hash), Vec::new(), Some(config.seed));
    staged.commit(m, &run_manifest_path(&args.out), started)
}

pub struct EstimateArgs {
    pub trace: PathBuf,
    /// Seconds; the whole trace when absent.
    pub window: Option<(f64, f64)>,
    pub band: (f64, f64),
    /// Estimate JSON path; the record is only returned when absent.
    pub out: Option<PathBuf>,
    /// CSV of the filtered series with columns `t, x_a, x_p`.
    pub emit_series: Option<PathBuf>,
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<(EstimateRecord, Option<RunManifest>)> {
    let started = Instant::now();
    let bytes = read_bytes(&args.trace)?;
    let rec = srs_sense::trace::read_trace(&bytes[..])?;
    let window = args.window.unwrap_or((0.0, rec.duration()));
    let band = BandConfig::new(args.band.0, args.band.1, rec.sample_rate_hz())?;
    let estimate = estimate_respiration(&rec, window, &band)?;
    let record = estimate.record();

    let mut staged = Staged::default();
    if let Some(path) = &args.emit_series {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write_err = |e: csv::Error| CliError::Write {
            path: path.clone(),
            source: io::Error::other(e),
        };
        w.write_record(["t", "x_a", "x_p"]).map_err(write_err)?;
        let signals = &estimate.signals;
        for (n, (a, p)) in signals.x_a.iter().zip(&signals.x_p).enumerate() {
            let t = estimate.window.0 + n as f64 * rec.frame_interval();
            w.serialize((t, a, p)).map_err(write_err)?;
        }
        let csv_bytes = w.into_inner().map_err(|e| CliError::Write {
            path: path.clone(),
            source: io::Error::other(e.to_string()),
        })?;
        staged.add(path, &csv_bytes)?;
    }
    let Some(out) = &args.out else {
        if let Some(series) = &args.emit_series {
            let m = manifest("estimate", None, vec![hash_of(&args.trace, &bytes)], None);
            staged.commit(m, &run_manifest_path(series), started)?;
        }
        return Ok((record, None));
    };
    staged.add(out, &to_json(&record))?;
    let m = manifest("estimate", None, vec![hash_of(&args.trace, &bytes)], None);
    let m = staged.commit(m, &run_manifest_path(out), started)?;
    Ok((record, Some(m)))
}

fn hash_of(path: &Path, bytes: &[u8]) -> FileHash {
    FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(bytes),
    }
}

pub struct DatasetArgs {
    pub traces: Vec<PathBuf>,
    /// Seconds of static baseline used to calibrate the threshold.
    pub baseline: Option<(f64, f64)>,
    pub out: PathBuf,
    pub energy: EnergyConfig,
    pub geometry: SampleGeometry,
}

/// Sample file name for the `n`-th emitted sample.
pub fn sample_name(n: usize) -> String {
    format!("sample_{n:05}.bin")
}

/// Writes numbered sample files, `manifest.json` and `run.json` into the
/// output directory. Traces are processed in path order.
pub fn cmd_dataset(args: &DatasetArgs) -> Result<(Vec<ManifestEntry>, RunManifest)> {
    let started = Instant::now();
    let baseline = args
        .baseline
        .ok_or_else(|| srs_sense::Error::Calibration("no baseline window given (--baseline start,end)".into()))?;
    args.energy.validate()?;
    if args.traces.is_empty() {
        return Err(CliError::Usage {
            field: "traces",
            reason: "at least one trace is required".into(),
        });
    }
    let mut traces = args.traces.clone();
    traces.sort();
    traces.dedup();

    let per_trace: Vec<(FileHash, Vec<TraceSample>)> = traces
        .par_iter()
        .map(|path| {
            let bytes = read_bytes(path)?;
            let rec = srs_sense::trace::read_trace(&bytes[..])?;
            let sidecar = truth_path(path);
            let truth: GroundTruth = serde_json::from_slice(&read_bytes(&sidecar)?).map_err(|e| {
                srs_sense::Error::Corrupt(format!("{}: {e}", sidecar.display()))
            })?;
            let name = path.display().to_string();
            let rows = trace_samples(
                &rec,
                &truth.movement_events,
                &name,
                truth.location.as_deref(),
                &args.energy,
                baseline,
                &args.geometry,
            )?;
            Ok((hash_of(path, &bytes), rows))
        })
        .collect::<Result<_>>()?;

    let mut staged = Staged::default();
    let mut entries = Vec::new();
    let mut inputs = Vec::new();
    let mut n = 0;
    for (hash, rows) in per_trace {
        inputs.push(hash);
        for TraceSample { mut entry, sample } in rows {
            if let Some(sample) = sample {
                let name = sample_name(n);
                n += 1;
                let mut bytes = Vec::new();
                dataset::write_sample(&sample.tensor, &mut bytes)?;
                staged.add(&args.out.join(&name), &bytes)?;
                entry.file = Some(name);
            }
            entries.push(entry);
        }
    }
    staged.add(&args.out.join(MANIFEST_NAME), &to_json(&entries))?;
    let m = manifest("dataset", None, inputs, None);
    let m = staged.commit(m, &args.out.join("run.json"), started)?;
    Ok((entries, m))
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Separate held-out dataset; otherwise the dataset is split with the
    /// configured `test_fraction`.
    pub test: Option<PathBuf>,
    /// Report path; `<model>.report.json` when absent.
    pub report: Option<PathBuf>,
}

/// Writes the model, the training report and `<model>.run.json`.
pub fn cmd_train(args: &TrainArgs) -> Result<(TrainReport, RunManifest)> {
    let started = Instant::now();
    let (mut config, config_hash): (TrainConfig, _) = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let samples: Vec<_> = dataset::load_dataset(&args.dataset)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let (train_set, test_set) = match &args.test {
        Some(dir) => {
            let test: Vec<_> = dataset::load_dataset(dir)?.into_iter().map(|(_, s)| s).collect();
            (samples, test)
        }
        None if config.test_fraction > 0.0 => {
            let (tr, te) = stratified_split(&samples, config.test_fraction, config.seed);
            let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
            (pick(&tr), pick(&te))
        }
        None => (samples, Vec::new()),
    };
    let test = (!test_set.is_empty()).then_some(test_set.as_slice());
    let (params, report) = train(&train_set, test, &config)?;

    let mut model = Vec::new();
    params.write(&mut model)?;
    let report_path = args.report.clone().unwrap_or_else(|| sibling(&args.out, "report.json"));
    let mut staged = Staged::default();
    staged.add(&args.out, &model)?;
    staged.add(&report_path, &to_json(&report))?;
    let mut inputs = vec![hash_file(&args.dataset.join(MANIFEST_NAME))?];
    if let Some(dir) = &args.test {
        inputs.push(hash_file(&dir.join(MANIFEST_NAME))?);
    }
    let m = manifest("train", Some(config_hash), inputs, Some(config.seed));
    let m = staged.commit(m, &run_manifest_path(&args.out), started)?;
    Ok((report, m))
}

pub struct EvalArgs {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub group_by: Option<GroupBy>,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(EvalReport, Option<RunManifest>)> {
    let started = Instant::now();
    let model_bytes = read_bytes(&args.model)?;
    let params = ModelParams::read(&model_bytes[..])?;
    let samples: Vec<_> = dataset::load_dataset(&args.dataset)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let report = evaluate(&params, &samples, args.group_by)?;
    let Some(out) = &args.out else {
        return Ok((report, None));
    };
    let mut staged = Staged::default();
    staged.add(out, &to_json(&report))?;
    let inputs = vec![
        hash_of(&args.model, &model_bytes),
        hash_file(&args.dataset.join(MANIFEST_NAME))?,
    ];
    let m = manifest("eval", None, inputs, None);
    let m = staged.commit(m, &run_manifest_path(out), started)?;
    Ok((report, Some(m)))
}

/// Serialise a command result for stdout.
pub fn pretty(value: &impl Serialize) -> String {
    String::from_utf8(to_json(value)).expect("JSON is UTF-8")
}
