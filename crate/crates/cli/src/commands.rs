use std::error::Error as StdError;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dance_core::concepts::ConceptKind;
use dance_core::context::{run_context_labeling, write_context_labels, EmbeddingTable};
use dance_core::explain::explain_deactivated;
use dance_core::ingest::{generate_synthetic_dataset, load_manifest, SyntheticConfig};
use dance_core::intervene::{edit_class_weight, intervention_report, DeactivationMode};
use dance_core::keyclip::KeyClipsFile;
use dance_core::motion::{run_motion_discovery, Metric};
use dance_core::pipeline::{evaluate_stage, keyclips_stage, run_pipeline, train_from_label_paths, write_json, RunConfig};
use dance_core::train::{CubedAxis, DanceModel};
use dance_core::Error;
use serde::Serialize;

pub type CliResult<T> = Result<T, Box<dyn StdError + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "dance", version, about = "Concept-bottleneck video action recognition")]
pub struct Cli {
    /// JSON run config; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted concepts.
    Synth(SynthArgs),
    /// Detect key clips from frame stacks.
    Keyclips(KeyclipsArgs),
    /// Cluster pose clips into motion concepts and label videos.
    DiscoverMotion(DiscoverArgs),
    /// Filter candidate concepts and compute pseudo labels.
    LabelContext(LabelContextArgs),
    /// Train concept heads and the sparse classifier.
    Train(TrainArgs),
    /// Explain the prediction for one video.
    Explain(ExplainArgs),
    /// Set one class-concept weight and save the edited model.
    Edit(EditArgs),
    /// Compare two models on a split: fixed and broken samples.
    Report(ReportArgs),
    /// Accuracy, per-class accuracy and confusion matrix on a split.
    Evaluate(EvaluateArgs),
    /// Run every stage, skipping those whose inputs are unchanged.
    Run(RunArgs),
    /// Serve a model over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub motion_concepts: Option<usize>,
    #[arg(long)]
    pub object_concepts: Option<usize>,
    #[arg(long)]
    pub scene_concepts: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Zero the object and scene part of the test features.
    #[arg(long)]
    pub shift_test_context: bool,
}

#[derive(Debug, Args)]
pub struct KeyclipsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, alias = "L")]
    pub clip_length: Option<usize>,
    #[arg(long)]
    pub smooth_window: Option<usize>,
    #[arg(long)]
    pub threshold_k: Option<f64>,
    #[arg(long, alias = "max-clips")]
    pub max_keyframes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Key clips file restricting which pose clips are used.
    #[arg(long)]
    pub clips: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, alias = "target-M")]
    pub target_concepts: Option<usize>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub conf_min: Option<f64>,
    #[arg(long)]
    pub jump_max: Option<f64>,
    #[arg(long, alias = "out")]
    pub out_concepts: Option<PathBuf>,
    /// Defaults to `c_m.dtf` beside the concepts file.
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelContextArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `object` or `scene`.
    #[arg(long)]
    pub kind: ConceptKind,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, alias = "embeds")]
    pub text_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub max_words: Option<usize>,
    #[arg(long)]
    pub dup_sim: Option<f64>,
    #[arg(long)]
    pub class_sim: Option<f64>,
    /// Clamp pseudo labels at zero.
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub motion_labels: Option<PathBuf>,
    #[arg(long)]
    pub object_labels: Option<PathBuf>,
    #[arg(long)]
    pub scene_labels: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// `per_concept` or `per_sample`.
    #[arg(long)]
    pub cosine_cubed_axis: Option<CubedAxis>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub video: String,
    #[arg(short, long, alias = "top", default_value_t = 5)]
    pub k: usize,
    /// Concept indices to switch off, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub deactivate: Vec<usize>,
    /// `standardized` or `raw`.
    #[arg(long, default_value = "standardized")]
    pub mode: DeactivationMode,
    /// Accepted for compatibility; output is always JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Class index or name.
    #[arg(long)]
    pub class: String,
    /// Concept index or name.
    #[arg(long)]
    pub concept: String,
    #[arg(long, allow_negative_numbers = true)]
    pub value: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub object_candidates: Option<PathBuf>,
    #[arg(long)]
    pub scene_candidates: Option<PathBuf>,
    #[arg(long)]
    pub text_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn json_text<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn pretty<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(json_text(value))
}

/// Index given literally or by (case-sensitive) name.
fn resolve_index(what: &str, given: &str, names: &[String]) -> Result<usize, Error> {
    if let Ok(i) = given.parse::<usize>() {
        if i < names.len() {
            return Ok(i);
        }
        return Err(Error::Validation(format!("{what} {i} outside 0..{}", names.len())));
    }
    names
        .iter()
        .position(|n| n == given)
        .ok_or_else(|| Error::Validation(format!("unknown {what} {given:?}")))
}

pub fn run(cli: Cli) -> CliResult<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match cli.command {
        Command::Synth(a) => synth(&a, cli.seed),
        Command::Keyclips(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.clips, &a.out);
            set(&mut cfg.clip_length, a.clip_length);
            set(&mut cfg.keyframes.smooth_window, a.smooth_window);
            set(&mut cfg.keyframes.threshold_k, a.threshold_k);
            set(&mut cfg.keyframes.max_keyframes, a.max_keyframes);
            keyclips(&cfg).map_err(|e| e.in_stage("keyclips").into())
        }
        Command::DiscoverMotion(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.clips, &a.clips);
            set_path(&mut cfg.motion_concepts, &a.out_concepts);
            set_path(&mut cfg.motion_labels, &a.out_labels);
            set(&mut cfg.train_split, a.split);
            set(&mut cfg.motion.target_concepts, a.target_concepts);
            set(&mut cfg.motion.metric, a.metric);
            set(&mut cfg.motion.filter.conf_min, a.conf_min);
            set(&mut cfg.motion.filter.jump_max, a.jump_max);
            discover_motion(&cfg, a.clips.is_some()).map_err(|e| e.in_stage("discover-motion").into())
        }
        Command::LabelContext(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.text_embeddings, &a.text_embeddings);
            match a.kind {
                ConceptKind::Object => {
                    set_path(&mut cfg.object_candidates, &a.candidates);
                    set_path(&mut cfg.object_labels, &a.out);
                }
                ConceptKind::Scene => {
                    set_path(&mut cfg.scene_candidates, &a.candidates);
                    set_path(&mut cfg.scene_labels, &a.out);
                }
                ConceptKind::Motion => {
                    return Err(Error::Config("label-context takes --kind object or --kind scene".into()).into())
                }
            }
            set(&mut cfg.concept_filter.max_words, a.max_words);
            set(&mut cfg.concept_filter.dup_sim, a.dup_sim);
            set(&mut cfg.concept_filter.class_sim, a.class_sim);
            cfg.clamp_pseudo_labels |= a.clamp;
            label_context(&cfg, a.kind).map_err(|e| e.in_stage("label-context").into())
        }
        Command::Train(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.motion_labels, &a.motion_labels);
            set_path(&mut cfg.object_labels, &a.object_labels);
            set_path(&mut cfg.scene_labels, &a.scene_labels);
            set_path(&mut cfg.model_dir, &a.out);
            set(&mut cfg.train_split, a.split);
            let t = &mut cfg.train;
            set(&mut t.lambda, a.lambda);
            set(&mut t.alpha, a.alpha);
            set(&mut t.epochs, a.epochs);
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.momentum, a.momentum);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.classifier_max_iter, a.max_iter);
            set(&mut t.classifier_tol, a.tol);
            set(&mut t.cosine_cubed_axis, a.cosine_cubed_axis);
            train(&cfg).map_err(|e| e.in_stage("train").into())
        }
        Command::Explain(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.model_dir, &a.model);
            explain(&cfg, &a).map_err(|e| e.in_stage("explain").into())
        }
        Command::Edit(a) => {
            set_path(&mut cfg.model_dir, &a.model);
            edit(&cfg, &a).map_err(|e| e.in_stage("edit").into())
        }
        Command::Report(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set(&mut cfg.eval_split, a.split.clone());
            report(&cfg, &a).map_err(|e| e.in_stage("report").into())
        }
        Command::Evaluate(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.model_dir, &a.model);
            set(&mut cfg.eval_split, a.split);
            evaluate(&cfg, a.out.as_deref()).map_err(|e| e.in_stage("evaluate").into())
        }
        Command::Run(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.work_dir, &a.work_dir);
            set_path(&mut cfg.object_candidates, &a.object_candidates);
            set_path(&mut cfg.scene_candidates, &a.scene_candidates);
            set_path(&mut cfg.text_embeddings, &a.text_embeddings);
            let report = run_pipeline(&cfg)?;
            pretty(&report)
        }
        Command::Serve(a) => {
            set_path(&mut cfg.manifest, &a.manifest);
            set_path(&mut cfg.model_dir, &a.model);
            let model_dir = cfg.require(&cfg.model_dir, "--model")?.clone();
            let manifest = cfg.require(&cfg.manifest, "--manifest")?.clone();
            let addr = SocketAddr::new(a.host, a.port);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(dance_server::serve(&model_dir, &manifest, addr))?;
            Ok(String::new())
        }
    }
}

fn synth(a: &SynthArgs, seed: Option<u64>) -> CliResult<String> {
    let mut sc = SyntheticConfig::default();
    set(&mut sc.classes, a.classes);
    set(&mut sc.videos, a.videos);
    set(&mut sc.motion_concepts, a.motion_concepts);
    set(&mut sc.object_concepts, a.object_concepts);
    set(&mut sc.scene_concepts, a.scene_concepts);
    set(&mut sc.feature_dim, a.feature_dim);
    set(&mut sc.noise, a.noise);
    set(&mut sc.seed, seed);
    sc.shift_test_context = a.shift_test_context;
    let ds = generate_synthetic_dataset(&sc, &a.out)?;
    let rel = |p: &Path| p.strip_prefix(&ds.root).map(Path::to_path_buf).ok();
    let run = RunConfig {
        manifest: rel(&ds.manifest_path),
        work_dir: Some("run".into()),
        object_candidates: rel(&ds.object_candidates),
        scene_candidates: rel(&ds.scene_candidates),
        text_embeddings: rel(&ds.text_embeddings),
        motion: dance_core::motion::MotionParams {
            target_concepts: sc.motion_concepts,
            ..Default::default()
        },
        seed,
        ..RunConfig::default()
    };
    run.write(&ds.root.join("run.json"))?;
    #[derive(Serialize)]
    struct Out<'a> {
        root: &'a Path,
        manifest: &'a Path,
        run_config: PathBuf,
        planted: &'a Path,
    }
    pretty(&Out {
        root: &ds.root,
        manifest: &ds.manifest_path,
        run_config: ds.root.join("run.json"),
        planted: &ds.truth_path,
    })
}

fn keyclips(cfg: &RunConfig) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let out = cfg.require(&cfg.clips, "--out")?;
    let clips = keyclips_stage(&manifest, cfg.clip_length, &cfg.keyframes)?;
    clips.write(out)?;
    let windows: usize = clips.videos.iter().map(|v| v.windows.len()).sum();
    Ok(format!("{} videos, {windows} key clips -> {}", clips.videos.len(), out.display()))
}

fn discover_motion(cfg: &RunConfig, use_clips: bool) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let concepts_path = cfg.require(&cfg.motion_concepts, "--out-concepts")?;
    let labels_path = match &cfg.motion_labels {
        Some(p) => p.clone(),
        None => concepts_path.with_file_name("c_m.dtf"),
    };
    let clips = match (&cfg.clips, use_clips) {
        (Some(p), true) => Some(KeyClipsFile::read(p)?),
        _ => None,
    };
    let out = run_motion_discovery(&manifest, &cfg.train_split, clips.as_ref(), &cfg.motion)?;
    out.write(concepts_path, &labels_path)?;
    Ok(format!(
        "{} motion concepts from {} of {} pose sequences (hierarchy {:?})",
        out.concepts.count(),
        out.concepts.sequences_kept,
        out.concepts.sequences_in,
        out.concepts.hierarchy_counts
    ))
}

fn label_context(cfg: &RunConfig, kind: ConceptKind) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let (candidates, out) = match kind {
        ConceptKind::Object => (&cfg.object_candidates, &cfg.object_labels),
        _ => (&cfg.scene_candidates, &cfg.scene_labels),
    };
    let candidates = cfg.require(candidates, "--candidates")?;
    let out = cfg.require(out, "--out")?;
    let table = EmbeddingTable::load(cfg.require(&cfg.text_embeddings, "--text-embeddings")?)?;
    let (set, labels) = run_context_labeling(&manifest, kind, candidates, &table, &cfg.concept_filter, cfg.clamp_pseudo_labels)?;
    write_context_labels(&manifest, &set, &labels, out)?;
    Ok(format!("{} {kind} concepts: {}", set.len(), set.names.join(", ")))
}

fn train(cfg: &RunConfig) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let model = train_from_label_paths(
        &manifest,
        &cfg.train_split,
        cfg.require(&cfg.motion_labels, "--motion-labels")?,
        cfg.require(&cfg.object_labels, "--object-labels")?,
        cfg.require(&cfg.scene_labels, "--scene-labels")?,
        &cfg.train_config(),
    )?;
    let out = cfg.require(&cfg.model_dir, "--out")?;
    model.save(out)?;
    Ok(json_text(model.summary()))
}

fn load_model(cfg: &RunConfig) -> Result<DanceModel, Error> {
    DanceModel::load(cfg.require(&cfg.model_dir, "--model")?)
}

fn explain(cfg: &RunConfig, a: &ExplainArgs) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let model = load_model(cfg)?;
    let row = manifest
        .index_of(&a.video)
        .ok_or_else(|| Error::Validation(format!("unknown video {:?}", a.video)))?;
    let x = manifest.load_features(&[row])?;
    let mut e = explain_deactivated(x.row(0), &model, a.k, &a.deactivate, a.mode)?;
    e.video_id = Some(a.video.clone());
    Ok(json_text(&e))
}

fn edit(cfg: &RunConfig, a: &EditArgs) -> Result<String, Error> {
    let model = load_model(cfg)?;
    let class = resolve_index("class", &a.class, model.class_names())?;
    let concept = resolve_index("concept", &a.concept, &model.concepts().names())?;
    let edited = edit_class_weight(&model, class, concept, a.value)?;
    edited.save(&a.out)?;
    let record = edited.edit_log().last().expect("edit recorded");
    Ok(json_text(record))
}

fn report(cfg: &RunConfig, a: &ReportArgs) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let before = DanceModel::load(&a.before)?;
    let after = DanceModel::load(&a.after)?;
    let r = intervention_report(&before, &after, &manifest, &cfg.eval_split)?;
    if let Some(out) = &a.out {
        write_json(out, &r)?;
    }
    Ok(json_text(&r))
}

fn evaluate(cfg: &RunConfig, out: Option<&Path>) -> Result<String, Error> {
    let manifest = load_manifest(cfg.require(&cfg.manifest, "--manifest")?)?;
    let model = load_model(cfg)?;
    let m = evaluate_stage(&model, &manifest, &cfg.eval_split)?;
    if let Some(out) = out {
        write_json(out, &m)?;
    }
    Ok(json_text(&m))
}
