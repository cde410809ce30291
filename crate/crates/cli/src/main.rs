//! `vcas`: evaluation, flow and open-set tooling over dataset manifests.
//!
//! Exit status: 0 on success, 1 when some frames failed or an output could
//! not be produced, 2 for usage, manifest or configuration errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vcas_core::egoflow::{
    compute_ego_flow, decode_depth_png, decode_flow_png, encode_flow_png, flow_to_color, snap_flow_to_png_grid,
    suppress_ego_flow,
};
use vcas_core::harness::{
    compute_stats, evaluate_dataset, load_features, load_label_map, load_manifest, synth_dataset, EvalOptions, Manifest,
    SceneSpec, Split, Track,
};
use vcas_core::metrics::VoidPolicy;
use vcas_core::openset::{
    decode_checkpoint, encode_checkpoint, score_open_set, train, EmbeddingMap, StepRecord, ToyProblem, TrainConfig,
};
use vcas_core::prototypes::{
    agglomerative_cluster, extract_prototypes, pairwise_distances, serialize_dendrogram, ClassMask, Linkage, PoolOptions,
    Prototype,
};

#[derive(Parser)]
#[command(name = "vcas", version, about = "Segmentation evaluation, ego-flow and open-set tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Class-agnostic instance quality (SQ, RQ, CAQ) with optional flow diagnostics.
    EvaluateCa(EvaluateCaArgs),
    /// Panoptic quality (PQ over all, thing and stuff classes).
    EvaluatePanoptic(EvaluatePanopticArgs),
    /// Open-set semantic quality (mIoU over known classes, CA-IoU of unknowns).
    EvaluateOpenset(EvaluateOpensetArgs),
    /// Write ego flow and ego-suppressed residual flow for manifest frames.
    SuppressFlow(SuppressFlowArgs),
    /// Render a flow PNG as a color image.
    ColorizeFlow(ColorizeFlowArgs),
    /// Pool per-class prototypes from frame embeddings and fine labels.
    Prototypes(PrototypesArgs),
    /// Cluster prototypes into a dendrogram.
    Dendrogram(DendrogramArgs),
    /// Train the open-set head from a JSON config.
    TrainOpenset(TrainOpensetArgs),
    /// Moving/static instance counts and per-class pixel counts.
    Stats(StatsArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VoidArg {
    Ignore,
    Background,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Args)]
struct EvalCommon {
    #[arg(long)]
    manifest: PathBuf,
    /// Void handling; defaults to background for class-agnostic maps, ignore otherwise.
    #[arg(long, value_enum)]
    void_policy: Option<VoidArg>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Worker threads (default: $VCAS_WORKERS, then the core count).
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for <track>_report.{csv,json} (default: the manifest's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCaArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Subtract ego flow (from depth, intrinsics and pose) before flow diagnostics.
    #[arg(long)]
    efs: bool,
    /// Flow magnitude in pixels above which a pixel counts as moving.
    #[arg(long, default_value_t = 1.0)]
    motion_threshold: f64,
}

#[derive(Args)]
struct EvaluatePanopticArgs {
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(Args)]
struct EvaluateOpensetArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Predict from frame embeddings with this checkpoint instead of reading semantic_pred.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SuppressFlowArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Only these frame ids (repeatable); default all frames.
    #[arg(long)]
    frame: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write a color rendering of the residual.
    #[arg(long)]
    color: bool,
}

#[derive(Args)]
struct ColorizeFlowArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Magnitude mapped to full saturation (default: the largest in the image).
    #[arg(long)]
    max_norm: Option<f64>,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// L2-normalize pixel features before pooling.
    #[arg(long)]
    l2_normalize: bool,
    /// Separate prototypes per split; test classes get ids offset by 1000.
    #[arg(long)]
    by_split: bool,
}

#[derive(Args)]
struct PrototypesArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DendrogramArgs {
    #[command(flatten)]
    pool: PoolArgs,
    /// Prototypes JSON written by the prototypes command (instead of --manifest).
    #[arg(long, conflicts_with = "manifest")]
    prototypes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "average")]
    linkage: LinkageArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainOpensetArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the optimizer seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for stats.{csv,json} (default: the manifest's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    /// Scene spec JSON; unspecified fields keep their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
}

/// Failure class, mapped to the exit status.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EvaluateCa(a) => evaluate_ca(a),
        Command::EvaluatePanoptic(a) => evaluate(a.common, Track::Panoptic, EvalOptions::default()),
        Command::EvaluateOpenset(a) => evaluate_openset(a),
        Command::SuppressFlow(a) => suppress_flow(a),
        Command::ColorizeFlow(a) => colorize_flow(a),
        Command::Prototypes(a) => prototypes(a),
        Command::Dendrogram(a) => dendrogram(a),
        Command::TrainOpenset(a) => train_openset(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display())).map_err(usage)
}

fn out_dir_or_root(out: Option<PathBuf>, m: &Manifest) -> anyhow::Result<PathBuf> {
    let dir = out.unwrap_or_else(|| m.root().to_path_buf());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(v)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)
}

fn evaluate_ca(a: EvaluateCaArgs) -> Outcome {
    let opts = EvalOptions {
        efs: a.efs,
        motion_threshold: a.motion_threshold,
        ..Default::default()
    };
    evaluate(a.common, Track::Ca, opts)
}

fn evaluate_openset(a: EvaluateOpensetArgs) -> Outcome {
    let checkpoint = match &a.checkpoint {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?;
            Some(decode_checkpoint(&bytes).with_context(|| format!("decoding {}", p.display())).map_err(usage)?)
        }
        None => None,
    };
    evaluate(a.common, Track::Openset, EvalOptions { checkpoint, ..Default::default() })
}

fn evaluate(c: EvalCommon, track: Track, mut opts: EvalOptions) -> Outcome {
    let m = read_manifest(&c.manifest)?;
    opts.void_policy = c.void_policy.map(|v| match v {
        VoidArg::Ignore => VoidPolicy::Ignore,
        VoidArg::Background => VoidPolicy::Background,
    });
    opts.split = c.split.map(Split::from);
    opts.workers = c.workers;
    let report = evaluate_dataset(&m, track, &opts).map_err(usage)?;
    let dir = out_dir_or_root(c.out_dir, &m)?;
    let name = match track {
        Track::Ca => "ca",
        Track::Panoptic => "panoptic",
        Track::Openset => "openset",
    };
    let csv = report.to_csv();
    write(&dir.join(format!("{name}_report.csv")), &csv)?;
    write(&dir.join(format!("{name}_report.json")), report.to_json()?)?;
    print!("{csv}");
    for f in report.frames.iter().filter(|f| f.error.is_some()) {
        eprintln!("frame {}: {}", f.id, f.error.as_deref().unwrap_or_default());
    }
    Ok(if report.failures > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn suppress_flow(a: SuppressFlowArgs) -> Outcome {
    let m = read_manifest(&a.manifest)?;
    for id in &a.frame {
        if !m.frames.iter().any(|f| &f.id == id) {
            return Err(usage(anyhow!("no frame {id:?} in the manifest")));
        }
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut failed = 0;
    for f in m.frames.iter().filter(|f| a.frame.is_empty() || a.frame.contains(&f.id)) {
        let run = || -> anyhow::Result<()> {
            let observed = decode_flow_png(&m.read(f.require(&f.flow, "flow")?)?)?;
            let depth = decode_depth_png(&m.read(f.require(&f.depth, "depth")?)?)?;
            let k = f.require(&f.intrinsics, "intrinsics")?;
            let pose = f.require(&f.pose_to_next, "pose_to_next")?;
            let ego = snap_flow_to_png_grid(&compute_ego_flow(&depth, k, pose)?);
            let residual = suppress_ego_flow(&observed, &ego)?;
            write(&a.out_dir.join(format!("{}_ego.png", f.id)), encode_flow_png(&ego)?)?;
            write(&a.out_dir.join(format!("{}_residual.png", f.id)), encode_flow_png(&residual)?)?;
            if a.color {
                let img = flow_to_color(&residual, None).to_png()?;
                write(&a.out_dir.join(format!("{}_residual_color.png", f.id)), img)?;
            }
            Ok(())
        };
        if let Err(e) = run() {
            eprintln!("frame {}: {e:#}", f.id);
            failed += 1;
        }
    }
    Ok(if failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn colorize_flow(a: ColorizeFlowArgs) -> Outcome {
    if a.max_norm.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
        return Err(usage(anyhow!("--max-norm must be positive")));
    }
    let bytes = std::fs::read(&a.flow).with_context(|| format!("reading {}", a.flow.display())).map_err(usage)?;
    let flow = decode_flow_png(&bytes).with_context(|| format!("decoding {}", a.flow.display())).map_err(usage)?;
    write(&a.out, flow_to_color(&flow, a.max_norm).to_png()?)?;
    Ok(ExitCode::SUCCESS)
}

/// Offset added to class ids of test-split prototypes with `--by-split`.
const TEST_CLASS_OFFSET: u32 = 1000;

#[derive(Serialize, Deserialize)]
struct PrototypeEntry {
    class_id: u32,
    name: String,
    support: u64,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PrototypeFile {
    prototypes: Vec<PrototypeEntry>,
    distances: Vec<Vec<f64>>,
}

fn pool_prototypes(p: &PoolArgs) -> Result<Vec<PrototypeEntry>, Failure> {
    let path = p.manifest.as_ref().ok_or_else(|| usage(anyhow!("--manifest is required")))?;
    let m = read_manifest(path)?;
    let opts = PoolOptions {
        l2_normalize: p.l2_normalize,
    };
    let groups: Vec<(Option<Split>, u32, &str)> = if p.by_split {
        vec![(Some(Split::Train), 0, " (train)"), (Some(Split::Test), TEST_CLASS_OFFSET, " (test)")]
    } else {
        vec![(p.split.map(Split::from), 0, "")]
    };
    let mut out = Vec::new();
    for (split, offset, suffix) in groups {
        let mut batch = Vec::new();
        for f in m.frames_in(split) {
            let features = load_features(&m, f.require(&f.embeddings, "embeddings").map_err(usage)?)?;
            let labels = load_label_map(&m, f.require(&f.fine_labels, "fine_labels").map_err(usage)?)?;
            let (w, h) = features.dims();
            batch.push((features, ClassMask::new(labels).resized_to(w, h)));
        }
        for Prototype {
            class_id,
            vector,
            support,
        } in extract_prototypes(&batch, opts)?
        {
            let name = m.class_names.get(&class_id).cloned().unwrap_or_else(|| format!("class {class_id}"));
            out.push(PrototypeEntry {
                class_id: class_id + offset,
                name: name + suffix,
                support,
                vector,
            });
        }
    }
    if out.is_empty() {
        return Err(Failure::Runtime(anyhow!("no labelled pixels to pool")));
    }
    Ok(out)
}

fn as_prototypes(entries: &[PrototypeEntry]) -> Vec<Prototype> {
    entries
        .iter()
        .map(|e| Prototype {
            class_id: e.class_id,
            vector: e.vector.clone(),
            support: e.support,
        })
        .collect()
}

fn prototypes(a: PrototypesArgs) -> Outcome {
    let entries = pool_prototypes(&a.pool)?;
    let d = pairwise_distances(&as_prototypes(&entries))?;
    let n = d.len();
    let distances = (0..n).map(|i| (0..n).map(|j| d.get(i, j)).collect()).collect();
    write_json(
        &a.out,
        &PrototypeFile {
            prototypes: entries,
            distances,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn dendrogram(a: DendrogramArgs) -> Outcome {
    let entries = match &a.prototypes {
        Some(p) => read_json::<PrototypeFile>(p)?.prototypes,
        None => pool_prototypes(&a.pool)?,
    };
    let ps = as_prototypes(&entries);
    let d = pairwise_distances(&ps).map_err(usage)?;
    let leaves: Vec<u32> = ps.iter().map(|p| p.class_id).collect();
    let tree = agglomerative_cluster(&d, a.linkage.into(), &leaves).map_err(usage)?;
    let names: BTreeMap<u32, String> = entries.iter().map(|e| (e.class_id, e.name.clone())).collect();
    write_json(&a.out, &serialize_dendrogram(&tree, &names)?)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSource {
    manifest: PathBuf,
    #[serde(default = "train_split")]
    split: Split,
}

fn train_split() -> Split {
    Split::Train
}

/// `train-openset` config: optimizer settings plus exactly one of a toy
/// problem or a manifest split. Relative paths resolve against the config.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    train: TrainConfig,
    toy: Option<ToyProblem>,
    data: Option<DataSource>,
    out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: Option<vcas_core::openset::LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    toy_test: Option<vcas_core::openset::OpenSetScores>,
}

fn loss_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,epoch,lr,l_seg,l_cl,total,gamma\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.epoch, r.lr, r.loss.l_seg, r.loss.l_cl, r.loss.total, r.gamma
        );
    }
    out
}

fn train_openset(a: TrainOpensetArgs) -> Outcome {
    let mut cfg: TrainFile = read_json(&a.config)?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate().map_err(usage)?;
    let (batches, classes, toy) = match (cfg.toy, cfg.data) {
        (Some(toy), None) => (vec![toy.train_set().map_err(usage)?], toy.num_classes(), Some(toy)),
        (None, Some(data)) => {
            let m = read_manifest(&base.join(&data.manifest))?;
            let c = m.num_known_classes.ok_or_else(|| usage(anyhow!("manifest has no num_known_classes")))?;
            let mut batches = Vec::new();
            for f in m.frames_in(Some(data.split)) {
                let features = load_features(&m, f.require(&f.embeddings, "embeddings").map_err(usage)?)?;
                let labels = load_label_map(&m, f.require(&f.semantic_gt, "semantic_gt").map_err(usage)?)?;
                batches.push(EmbeddingMap::from_label_map(features, &labels, c)?);
            }
            if batches.is_empty() {
                return Err(usage(anyhow!("no {} frames in the manifest", data.split)));
            }
            (batches, c, None)
        }
        _ => return Err(usage(anyhow!("config needs exactly one of \"toy\" or \"data\""))),
    };
    let out_dir = a.out_dir.or(cfg.out_dir.map(|d| base.join(d))).unwrap_or_else(|| base.join("openset_out"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let out = train(&batches, classes, &cfg.train)?;
    write(&out_dir.join("loss.csv"), loss_csv(&out.history))?;
    write(&out_dir.join("checkpoint.bin"), encode_checkpoint(&out.params))?;
    write(&out_dir.join("projection.bin"), out.projection.to_tensor())?;
    let toy_test = match &toy {
        Some(t) => Some(score_open_set(&t.test_set()?, &out.params)?),
        None => None,
    };
    let summary = TrainSummary {
        steps: out.history.len(),
        final_loss: out.history.last().map(|r| r.loss),
        toy_test,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn stats(a: StatsArgs) -> Outcome {
    let m = read_manifest(&a.manifest)?;
    let s = compute_stats(&m).map_err(usage)?;
    let dir = out_dir_or_root(a.out_dir, &m)?;
    let csv = s.to_csv(&m);
    write(&dir.join("stats.csv"), &csv)?;
    write_json(&dir.join("stats.json"), &s)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Outcome {
    let spec: SceneSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    if a.frames == 0 {
        bail_usage("--frames must be positive")?;
    }
    let m = synth_dataset(a.seed, a.frames, &spec, &a.out).map_err(|e| match e {
        vcas_core::Error::InvalidSceneSpec(_) | vcas_core::Error::UnachievableIou { .. } => usage(e),
        e => Failure::Runtime(e.into()),
    })?;
    println!("wrote {} frames to {}", m.frames.len(), a.out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

fn bail_usage(msg: &str) -> Result<(), Failure> {
    Err(usage(anyhow!("{msg}")))
}
