//! Command-line surface: one binary, one master seed, stage subcommands.
//!
//! Every stage derives its own RNG stream from `--seed` by labeled hashing,
//! so `trials`, `probe`, and `tsne` run standalone or inside `all` with
//! identical outputs. `--threads` (or EMBPROBE_THREADS) resizes the worker
//! pool and never changes a single output byte.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, EmbeddingFormat, EvaluationDataset};
use crate::probes::{run_battery, BatteryConfig, ProbeResult, SplitSpec};
use crate::projection::{tsne_embed, Projection, ProjectionMeta, TsneConfig};
use crate::report::{self, emit_scatter_svg, render_closest_pair, ArchResults, ReportFormat};
use crate::seed::derive_seed;
use crate::simmetrics::{
    self, closest_pairs, eer_by_group, inter_speaker_matrix, intra_speaker_means,
    mean_by_group, mean_inter_by_group, sample_trials, ClosestPair, Grouping, SimError,
    TrialList,
};
use crate::synthbench::{self, Factor, SynthSpec};

#[derive(Debug, Parser)]
#[command(
    name = "embprobe",
    version,
    about = "Speaker-embedding evaluation: verification metrics, probes, projections"
)]
pub struct Plan {
    /// Output directory for all written files.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; each stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (EMBPROBE_THREADS as fallback; default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<NonZeroUsize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedding file: EMB1 binary, or CSV if the extension is .csv.
    #[arg(long)]
    pub embeddings: PathBuf,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct TrialArgs {
    /// Trials anchored on each speaker.
    #[arg(long = "per-speaker", default_value_t = 1000)]
    pub per_speaker: usize,
    /// Same-speaker trials among each speaker's quota.
    #[arg(long, default_value_t = 200)]
    pub same: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    /// One projection over every utterance.
    Global,
    /// The global projection plus filtered per-speaker views.
    PerSpeaker,
}

fn parse_leakage(s: &str) -> Result<(Factor, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected factor=coefficient, got {s:?}"))?;
    let factor: Factor = name.parse()?;
    let coeff: f64 = value
        .parse()
        .map_err(|_| format!("coefficient {value:?} is not a number"))?;
    Ok((factor, coeff))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and cross-check a manifest/embedding pair.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sample verification trials and store them.
    Trials {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quota: TrialArgs,
    },
    /// EER overall and per gender/subset group.
    Eer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quota: TrialArgs,
        /// Reuse a stored trial CSV (with its .meta.json sidecar).
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Intra/inter-speaker similarity tables, matrix, closest pairs.
    Similarity {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quota: TrialArgs,
        #[arg(long)]
        trials: Option<PathBuf>,
        /// How many closest speaker pairs to list.
        #[arg(long, default_value_t = 5)]
        top_pairs: usize,
    },
    /// Run the probing battery (decision tree + GBDT).
    Probe {
        #[command(flatten)]
        data: DataArgs,
        /// Train fraction of the 80/20-style split.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
    },
    /// Exact t-SNE projection and scatter SVG.
    Tsne {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, value_enum, default_value_t = Scope::Global)]
        scope: Scope,
    },
    /// Generate a synthetic corpus with planted leakage.
    Synth {
        #[arg(long, default_value_t = 10)]
        speakers: usize,
        #[arg(long, default_value_t = 50)]
        utts: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Within-speaker noise scale σ_s.
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        /// Recording sessions per speaker.
        #[arg(long, default_value_t = 2)]
        sessions: usize,
        /// Leakage override, factor=coefficient; repeatable.
        #[arg(long = "leakage", value_parser = parse_leakage)]
        leakage: Vec<(Factor, f64)>,
    },
    /// Assemble report files from per-architecture stage outputs.
    Report {
        /// Directory holding one architecture's stage outputs; repeatable.
        #[arg(long = "arch-dir", required = true)]
        arch_dirs: Vec<PathBuf>,
    },
    /// Full pipeline: validate, trials, eer, similarity, probe, tsne, report.
    All {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        quota: TrialArgs,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, value_enum, default_value_t = Scope::Global)]
        scope: Scope,
        #[arg(long, default_value_t = 5)]
        top_pairs: usize,
    },
}

pub fn parse_args<I, T>(argv: I) -> Result<Plan, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Plan::try_parse_from(argv)
}

/// Entry point for the binary: exit 0 on success, 1 on a domain error,
/// 2 on a usage error.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or("warn"),
    )
    .try_init();
    let plan = match parse_args(std::env::args_os()) {
        Ok(plan) => plan,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(&plan) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn init_threads(threads: Option<NonZeroUsize>) -> Result<()> {
    let n = match threads {
        Some(n) => Some(n.get()),
        None => match std::env::var("EMBPROBE_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .with_context(|| format!("EMBPROBE_THREADS={v:?} is not a positive integer"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        // A second in-process call cannot resize the pool; outputs do not
        // depend on pool size, so that is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn embedding_format(path: &Path) -> EmbeddingFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => EmbeddingFormat::Csv,
        _ => EmbeddingFormat::Binary,
    }
}

fn load_dataset(data: &DataArgs) -> Result<EvaluationDataset> {
    let records = corpus::load_manifest(&data.manifest)
        .with_context(|| format!("reading manifest {}", data.manifest.display()))?;
    let set = corpus::load_embeddings(&data.embeddings, embedding_format(&data.embeddings))
        .with_context(|| format!("reading embeddings {}", data.embeddings.display()))?;
    corpus::build_dataset(records, set).context("joining manifest with embeddings")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupValue {
    label: String,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EerGroupRow {
    label: String,
    eer: f64,
    threshold: f64,
    n_same: usize,
    n_diff: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EerFile {
    architecture: String,
    groups: Vec<EerGroupRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimilarityFile {
    architecture: String,
    intra_by_group: Vec<GroupValue>,
    inter_by_group: Vec<GroupValue>,
    intra_by_speaker: BTreeMap<String, f64>,
    closest_pairs: Vec<ClosestPair>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbesFile {
    architecture: String,
    results: Vec<ProbeResult>,
}

const GROUPING_AXES: [Grouping; 3] = [Grouping::All, Grouping::Gender, Grouping::Subset];

fn obtain_trials(
    dataset: &EvaluationDataset,
    stored: &Option<PathBuf>,
    quota: TrialArgs,
    seed: u64,
) -> Result<TrialList> {
    match stored {
        Some(csv_path) => {
            let json_path = csv_path.with_extension("meta.json");
            simmetrics::read_trials(csv_path, &json_path)
                .with_context(|| format!("reading trials {}", csv_path.display()))
        }
        None => sample_trials(
            dataset,
            quota.per_speaker,
            quota.same,
            derive_seed(seed, "trials"),
        )
        .context("sampling trials"),
    }
}

fn stage_validate(dataset: &EvaluationDataset) {
    println!(
        "validate: {}: {} utterances, {} speakers, dim {}",
        dataset.architecture(),
        dataset.len(),
        dataset.n_speakers(),
        dataset.dim()
    );
}

fn stage_trials(
    dataset: &EvaluationDataset,
    quota: TrialArgs,
    seed: u64,
    out: &Path,
) -> Result<TrialList> {
    let list = sample_trials(
        dataset,
        quota.per_speaker,
        quota.same,
        derive_seed(seed, "trials"),
    )
    .context("sampling trials")?;
    simmetrics::write_trials(&list, out.join("trials.csv"), out.join("trials.meta.json"))
        .context("writing trials")?;
    println!(
        "trials: {} total, {} same-speaker",
        list.trials.len(),
        list.n_same()
    );
    Ok(list)
}

/// Apply `f` per grouping axis, skipping axes where some group has nothing
/// to aggregate (e.g. a single-gender corpus).
fn grouped_rows<T>(
    what: &str,
    mut f: impl FnMut(Grouping) -> Result<Vec<T>, SimError>,
) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for grouping in GROUPING_AXES {
        match f(grouping) {
            Ok(mut groups) => rows.append(&mut groups),
            Err(SimError::EmptyGroup(label)) => {
                log::warn!("{what}: skipping grouping with empty group {label:?}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn stage_eer(
    dataset: &EvaluationDataset,
    trials: &TrialList,
    out: &Path,
) -> Result<Vec<(String, f64)>> {
    let rows = grouped_rows("eer", |grouping| {
        eer_by_group(dataset, &trials.trials, grouping)
            .map(|v| v.into_iter().map(|(k, r)| (k.label(), r)).collect())
    })?;
    for (label, result) in &rows {
        println!(
            "eer[{label}] = {:.3} (threshold {:.4}, {} same / {} diff)",
            result.eer, result.threshold, result.n_same, result.n_diff
        );
    }
    let file = EerFile {
        architecture: dataset.architecture().to_string(),
        groups: rows
            .iter()
            .map(|(label, r)| EerGroupRow {
                label: label.clone(),
                eer: r.eer,
                threshold: r.threshold,
                n_same: r.n_same,
                n_diff: r.n_diff,
            })
            .collect(),
    };
    write_json(&out.join("eer.json"), &file)?;
    Ok(rows.into_iter().map(|(label, r)| (label, r.eer)).collect())
}

struct SimilaritySections {
    intra_by_group: Vec<(String, f64)>,
    inter_by_group: Vec<(String, f64)>,
    closest: Vec<ClosestPair>,
}

fn stage_similarity(
    dataset: &EvaluationDataset,
    trials: &TrialList,
    top_pairs: usize,
    out: &Path,
) -> Result<SimilaritySections> {
    let intra = intra_speaker_means(dataset).context("intra-speaker means")?;
    let matrix = inter_speaker_matrix(dataset, &trials.trials).context("similarity matrix")?;
    matrix
        .write_csv(out.join("similarity_matrix.csv"))
        .context("writing similarity matrix")?;

    let intra_rows = grouped_rows("intra", |grouping| {
        mean_by_group(dataset, &intra, grouping)
            .map(|v| v.into_iter().map(|(k, x)| (k.label(), x)).collect())
    })?;
    let inter_rows = grouped_rows("inter", |grouping| {
        mean_inter_by_group(dataset, &matrix, grouping)
            .map(|v| v.into_iter().map(|(k, x)| (k.label(), x)).collect())
    })?;
    let pairs = closest_pairs(&matrix, top_pairs);
    for pair in &pairs {
        println!("closest: {}", render_closest_pair(pair));
    }

    let file = SimilarityFile {
        architecture: dataset.architecture().to_string(),
        intra_by_group: intra_rows
            .iter()
            .map(|(label, value)| GroupValue {
                label: label.clone(),
                value: *value,
            })
            .collect(),
        inter_by_group: inter_rows
            .iter()
            .map(|(label, value)| GroupValue {
                label: label.clone(),
                value: *value,
            })
            .collect(),
        intra_by_speaker: intra,
        closest_pairs: pairs.clone(),
    };
    write_json(&out.join("similarity.json"), &file)?;
    Ok(SimilaritySections {
        intra_by_group: intra_rows,
        inter_by_group: inter_rows,
        closest: pairs,
    })
}

fn stage_probe(
    dataset: &EvaluationDataset,
    split: f64,
    seed: u64,
    out: &Path,
) -> Result<Vec<ProbeResult>> {
    let config = BatteryConfig {
        split: SplitSpec {
            train_fraction: split,
            seed: derive_seed(seed, "probe-split"),
        },
        ..BatteryConfig::default()
    };
    let results = run_battery(dataset, &config).context("running probe battery")?;
    crate::probes::write_results_csv(&results, out.join("probes.csv"))
        .context("writing probes.csv")?;
    for r in &results {
        println!(
            "probe {}: {} {:.3} {}",
            r.task.name,
            r.task.kind.metric(),
            r.score,
            r.task.direction.arrow()
        );
    }
    let file = ProbesFile {
        architecture: dataset.architecture().to_string(),
        results: results.clone(),
    };
    write_json(&out.join("probes.json"), &file)?;
    Ok(results)
}

fn speaker_labels(dataset: &EvaluationDataset) -> BTreeMap<String, String> {
    dataset
        .records()
        .iter()
        .map(|r| (r.utterance_key.clone(), r.speaker_id.clone()))
        .collect()
}

fn stage_tsne(
    dataset: &EvaluationDataset,
    perplexity: f64,
    iterations: usize,
    scope: Scope,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let keys: Vec<String> = dataset
        .records()
        .iter()
        .map(|r| r.utterance_key.clone())
        .collect();
    let rows: Vec<Vec<f32>> = dataset
        .records()
        .iter()
        .map(|r| {
            dataset
                .embedding(&r.utterance_key)
                .expect("dataset join guarantees embeddings")
                .to_vec()
        })
        .collect();
    let config = TsneConfig {
        perplexity,
        iterations,
        seed: derive_seed(seed, "tsne"),
        ..TsneConfig::default()
    };
    let projection = tsne_embed(&keys, &rows, &config).context("t-SNE")?;
    projection
        .write_csv(out.join("tsne.csv"))
        .context("writing tsne.csv")?;
    write_json(
        &out.join("tsne.meta.json"),
        &ProjectionMeta {
            config,
            kl_trace: projection.kl_trace.clone(),
        },
    )?;
    emit_scatter_svg(&projection, &speaker_labels(dataset), out.join("tsne.svg"))
        .context("writing tsne.svg")?;
    if let Some(last) = projection.kl_trace.last() {
        println!(
            "tsne: {} points, final KL {:.4} at iteration {}",
            projection.keys.len(),
            last.kl,
            last.iteration
        );
    }

    if scope == Scope::PerSpeaker {
        let dir = out.join("tsne_per_speaker");
        std::fs::create_dir_all(&dir)?;
        let by_key: BTreeMap<&str, usize> = projection
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        for speaker in dataset.speakers() {
            let mut view = Projection {
                keys: Vec::new(),
                coords: Vec::new(),
                kl_trace: Vec::new(),
            };
            let mut labels = BTreeMap::new();
            for key in dataset.speaker_utterances(speaker) {
                let i = by_key[key.as_str()];
                view.keys.push(projection.keys[i].clone());
                view.coords.push(projection.coords[i]);
                let record = dataset.record(key).expect("record exists");
                labels.insert(
                    key.clone(),
                    record
                        .session_id
                        .clone()
                        .unwrap_or_else(|| speaker.to_string()),
                );
            }
            view.write_csv(dir.join(format!("{speaker}.csv")))
                .with_context(|| format!("writing per-speaker view for {speaker}"))?;
            emit_scatter_svg(&view, &labels, dir.join(format!("{speaker}.svg")))
                .with_context(|| format!("plotting per-speaker view for {speaker}"))?;
        }
    }
    Ok(())
}

fn read_arch_dir(dir: &Path) -> Result<ArchResults> {
    let mut results = ArchResults::default();
    let mut architecture: Option<String> = None;
    let mut claim = |arch: String| -> Result<()> {
        match &architecture {
            None => {
                architecture = Some(arch);
                Ok(())
            }
            Some(existing) if existing == &arch => Ok(()),
            Some(existing) => bail!(
                "conflicting architectures {existing:?} and {arch:?} in {}",
                dir.display()
            ),
        }
    };

    let eer_path = dir.join("eer.json");
    if eer_path.exists() {
        let file: EerFile = read_json(&eer_path)?;
        claim(file.architecture)?;
        results.eer_by_group = file.groups.into_iter().map(|g| (g.label, g.eer)).collect();
    }
    let sim_path = dir.join("similarity.json");
    if sim_path.exists() {
        let file: SimilarityFile = read_json(&sim_path)?;
        claim(file.architecture)?;
        results.intra_by_group = file
            .intra_by_group
            .into_iter()
            .map(|g| (g.label, g.value))
            .collect();
        results.inter_by_group = file
            .inter_by_group
            .into_iter()
            .map(|g| (g.label, g.value))
            .collect();
        results.closest_pairs = file.closest_pairs;
    }
    let probes_path = dir.join("probes.json");
    if probes_path.exists() {
        let file: ProbesFile = read_json(&probes_path)?;
        claim(file.architecture)?;
        results.probes = file.results;
    }

    match architecture {
        Some(arch) => {
            results.architecture = arch;
            Ok(results)
        }
        None => bail!(
            "no stage outputs (eer.json, similarity.json, probes.json) in {}",
            dir.display()
        ),
    }
}

fn stage_report(archs: &[ArchResults], out: &Path) -> Result<()> {
    let written = [ReportFormat::Json, ReportFormat::Csv]
        .into_iter()
        .map(|format| report::emit_report(archs, format, out))
        .collect::<Result<Vec<_>, _>>()
        .context("emitting report")?;
    let n: usize = written.iter().map(Vec::len).sum();
    println!("report: wrote {n} files under {}", out.display());
    Ok(())
}

pub fn execute(plan: &Plan) -> Result<()> {
    init_threads(plan.threads)?;
    std::fs::create_dir_all(&plan.out)
        .with_context(|| format!("creating output directory {}", plan.out.display()))?;
    let out = plan.out.as_path();

    match &plan.command {
        Command::Validate { data } => {
            stage_validate(&load_dataset(data)?);
        }
        Command::Trials { data, quota } => {
            stage_trials(&load_dataset(data)?, *quota, plan.seed, out)?;
        }
        Command::Eer {
            data,
            quota,
            trials,
        } => {
            let dataset = load_dataset(data)?;
            let list = obtain_trials(&dataset, trials, *quota, plan.seed)?;
            stage_eer(&dataset, &list, out)?;
        }
        Command::Similarity {
            data,
            quota,
            trials,
            top_pairs,
        } => {
            let dataset = load_dataset(data)?;
            let list = obtain_trials(&dataset, trials, *quota, plan.seed)?;
            stage_similarity(&dataset, &list, *top_pairs, out)?;
        }
        Command::Probe { data, split } => {
            stage_probe(&load_dataset(data)?, *split, plan.seed, out)?;
        }
        Command::Tsne {
            data,
            perplexity,
            iterations,
            scope,
        } => {
            stage_tsne(
                &load_dataset(data)?,
                *perplexity,
                *iterations,
                *scope,
                plan.seed,
                out,
            )?;
        }
        Command::Synth {
            speakers,
            utts,
            dim,
            spread,
            sessions,
            leakage,
        } => {
            let mut spec = SynthSpec {
                n_speakers: *speakers,
                utts_per_speaker: *utts,
                dim: *dim,
                speaker_spread: *spread,
                session_clusters: *sessions,
                seed: derive_seed(plan.seed, "synth"),
                ..SynthSpec::default()
            };
            for (factor, coeff) in leakage {
                spec.leakage.insert(*factor, *coeff);
            }
            let (records, set, truth) = synthbench::generate(&spec).context("generating corpus")?;
            corpus::write_manifest(&records, out.join("manifest.csv"))
                .context("writing manifest")?;
            corpus::write_embeddings(&set, out.join("synth.emb"), EmbeddingFormat::Binary)
                .context("writing embeddings")?;
            synthbench::write_truth(&truth, out.join("truth.json"))
                .context("writing ground truth")?;
            println!(
                "synth: {} utterances, {} speakers, dim {}",
                records.len(),
                speakers,
                dim
            );
        }
        Command::Report { arch_dirs } => {
            let archs = arch_dirs
                .iter()
                .map(|dir| read_arch_dir(dir))
                .collect::<Result<Vec<_>>>()?;
            stage_report(&archs, out)?;
        }
        Command::All {
            data,
            quota,
            split,
            perplexity,
            iterations,
            scope,
            top_pairs,
        } => {
            let dataset = load_dataset(data)?;
            stage_validate(&dataset);
            let list = stage_trials(&dataset, *quota, plan.seed, out)?;
            let eer_rows = stage_eer(&dataset, &list, out)?;
            let similarity = stage_similarity(&dataset, &list, *top_pairs, out)?;
            let probes = stage_probe(&dataset, *split, plan.seed, out)?;
            stage_tsne(&dataset, *perplexity, *iterations, *scope, plan.seed, out)?;
            let arch = ArchResults {
                architecture: dataset.architecture().to_string(),
                eer_by_group: eer_rows,
                intra_by_group: similarity.intra_by_group,
                inter_by_group: similarity.inter_by_group,
                probes,
                closest_pairs: similarity.closest,
            };
            stage_report(&[arch], out)?;
        }
    }
    Ok(())
}
