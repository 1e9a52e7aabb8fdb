//! Command-line surface: argument parsing, stage commands over on-disk
//! artifacts, and per-command run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{fuse_semantics, retrieval_sweep, similarity_distribution, sweep_csv};
use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::decompose::{decompose_level, LevelDecomposition};
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::eval::{
    classify_objects, gaussian_classes, miou_2d, miou_3d, object_gt_masks, run_ablation, standard_variants,
    AblationScene, AblationTable, Query2d,
};
use crate::io::{
    self, ingest_external, read_decomposition, read_descriptors, read_queries, sha256_hex, write_decomposition,
    write_json, write_result, write_text, Checkpoint, DescriptorFile, RunManifest, FORMAT_VERSION,
};
use crate::pipeline::{answer, describe, level_masks, run_level, train_level};
use crate::query::{EmbeddingClient, LevelInput, Query, QuerySet, CANONICAL_PHRASES};
use crate::scene::project;
use crate::synth::{generate_dataset, SemanticsKind, SynthConfig};
use crate::train::TrainOutput;

#[derive(Debug, Parser)]
#[command(name = "viewagg", version, about = "View-aggregated open-vocabulary segmentation of Gaussian scenes")]
pub struct Cli {
    /// Pipeline configuration file (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 gives bitwise-reproducible outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    pub outputs: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train affinity features and write checkpoints.
    Train(LevelArgs),
    /// Group masks into objects and assign Gaussians.
    Decompose(LevelArgs),
    /// Extract weighted semantic descriptors per object.
    Describe(LevelArgs),
    /// Segment the scene for one or more queries.
    Query(QueryArgs),
    /// Similarity-distribution and retrieval-integrity diagnostics.
    Analyze(AnalyzeArgs),
    /// Projected 2D and direct 3D evaluation against the oracle.
    Eval,
    /// Descriptor ablation table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, value_parser = ["single-aspect", "two-aspect"])]
    pub semantics: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Use the multi-aspect benchmark preset for the seed.
    #[arg(long)]
    pub benchmark: bool,
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    /// Only this level; all levels by default.
    #[arg(long)]
    pub level: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Free text, encoded by the embedding service.
    #[arg(long, conflicts_with = "name")]
    pub text: Option<String>,
    /// A named query from the dataset's query file; all queries by default.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Level to analyze; the coarsest by default.
    #[arg(long)]
    pub level: Option<usize>,
    /// Also render the similarity histogram as SVG.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run on this many generated benchmark scenes instead of the dataset.
    #[arg(long)]
    pub seeds: Option<u64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Decompose(_) => "decompose",
            Command::Describe(_) => "describe",
            Command::Query(_) => "query",
            Command::Analyze(_) => "analyze",
            Command::Eval => "eval",
            Command::Ablate(_) => "ablate",
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Malformed { .. } | Error::Io { .. } | Error::MissingMasks(_) | Error::DimensionMismatch { .. } => 3,
        Error::VersionMismatch { .. } => 4,
        Error::NoEncoder | Error::Encoder(_) => 6,
        _ => 5,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

pub fn error_json(kind: &str, message: String, exit_code: i32) -> String {
    serde_json::to_string(&ErrorReport {
        error: kind,
        message,
        exit_code,
    })
    .expect("error report serializes")
}

/// Effective configuration: file (or defaults) plus command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &cli.dataset {
        cfg.paths.dataset = p.clone();
    }
    if let Some(p) = &cli.checkpoints {
        cfg.paths.checkpoints = p.clone();
    }
    if let Some(p) = &cli.outputs {
        cfg.paths.outputs = p.clone();
    }
    if let Some(Command::Synth(a)) = &cli.command {
        if a.benchmark {
            cfg.synth = SynthConfig::multi_aspect_benchmark(a.seed.unwrap_or(cfg.synth.seed));
        }
        let s = &mut cfg.synth;
        a.objects.inspect(|v| s.objects = *v);
        a.seed.inspect(|v| s.seed = *v);
        a.views.inspect(|v| s.views = *v);
        a.levels.inspect(|v| s.levels = *v);
        a.sigma.inspect(|v| s.sigma = *v);
        if let Some(k) = &a.semantics {
            s.semantics = if k == "two-aspect" { SemanticsKind::TwoAspect } else { SemanticsKind::SingleAspect };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: PipelineConfig,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn dataset(&self) -> Result<Dataset> {
        ingest_external(&self.cfg.paths.dataset, None)
    }

    fn queries(&self, ds: &Dataset) -> Result<QuerySet> {
        read_queries(&self.cfg.paths.dataset.join("queries.json"), ds.feature_dim)
    }

    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.cfg.paths.outputs.join(name)
    }

    fn ckpt(&self, level: usize) -> PathBuf {
        self.cfg.paths.checkpoints.join(format!("level{level}.ckpt"))
    }

    fn levels(&self, ds: &Dataset, only: Option<usize>) -> Result<Vec<usize>> {
        match only {
            Some(l) if l >= ds.num_levels => {
                Err(Error::InvalidInput(format!("level {l} out of range ({} levels)", ds.num_levels)))
            }
            Some(l) => Ok(vec![l]),
            None => Ok((0..ds.num_levels).collect()),
        }
    }

    fn json<T: Serialize + ?Sized>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        write_json(&path, value)?;
        self.written.push(path);
        Ok(())
    }

    fn text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        write_text(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn read_checkpoint(&self, ds: &Dataset, level: usize) -> Result<TrainOutput> {
        let path = self.ckpt(level);
        let ck = Checkpoint::read(&path)?;
        if ck.level as usize != level {
            return Err(Error::malformed(&path, format!("holds level {}", ck.level)));
        }
        if ck.features.cols() != self.cfg.train.dim || ck.features.rows() != ds.scene.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.train.dim,
                actual: ck.features.cols(),
                context: "checkpoint features vs config and scene",
            });
        }
        Ok(TrainOutput {
            level,
            features: ck.features,
            trace: Vec::new(),
        })
    }

    /// Decompositions and descriptors of every level, as written by the
    /// earlier stages.
    fn level_artifacts(&self, ds: &Dataset) -> Result<Vec<(LevelDecomposition, Vec<DescriptorSet>)>> {
        (0..ds.num_levels)
            .map(|l| {
                let decomposition = read_decomposition(&self.cfg.paths.outputs, l)?;
                let descriptors = read_descriptors(&self.cfg.paths.outputs, l)?.sets;
                Ok((decomposition, descriptors))
            })
            .collect()
    }
}

/// Parse-free entry point used by the binary and tests.
pub fn run(cli: &Cli) -> Result<Option<String>> {
    let cfg = effective_config(cli)?;
    let config_text = cfg.to_toml();
    if cli.print_config {
        return Ok(Some(config_text));
    }
    let Some(command) = &cli.command else {
        return Err(Error::InvalidInput("no subcommand given".into()));
    };
    let mut ctx = Ctx { cfg, written: Vec::new() };
    match command {
        Command::Synth(_) => synth(&mut ctx)?,
        Command::Train(a) => train(&mut ctx, a.level)?,
        Command::Decompose(a) => decompose(&mut ctx, a.level)?,
        Command::Describe(a) => describe_cmd(&mut ctx, a.level)?,
        Command::Query(a) => query(&mut ctx, a)?,
        Command::Analyze(a) => analyze(&mut ctx, a)?,
        Command::Eval => eval(&mut ctx)?,
        Command::Ablate(a) => ablate(&mut ctx, a.seeds)?,
    }
    let mut outputs = BTreeMap::new();
    for p in &ctx.written {
        outputs.insert(p.display().to_string(), sha256_hex(&io::read_bytes(p)?));
    }
    let manifest = RunManifest {
        command: command.name().into(),
        version: format!("v{}-f{FORMAT_VERSION}", env!("CARGO_PKG_VERSION")),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: ctx.cfg.seed,
        outputs,
    };
    write_json(&ctx.out(format!("run_{}.json", command.name())), &manifest)?;
    Ok(None)
}

fn synth(ctx: &mut Ctx) -> Result<()> {
    let (ds, queries) = generate_dataset(&ctx.cfg.synth)?;
    let dir = ctx.cfg.paths.dataset.clone();
    io::write_dataset(&dir, &ds, Some(&queries))?;
    let mut files = vec![dir.join("manifest.json"), dir.join("scene.json"), dir.join("cameras.json")];
    files.extend((0..ds.cameras.len()).map(|v| io::view_file(&dir, v)));
    files.extend(["features.bin", "oracle.json", "queries.json"].map(|f| dir.join(f)));
    ctx.written.extend(files);
    log::info!("wrote {} masks over {} views to {}", ds.masks.len(), ds.cameras.len(), dir.display());
    Ok(())
}

fn train(ctx: &mut Ctx, only: Option<usize>) -> Result<()> {
    let ds = ctx.dataset()?;
    for level in ctx.levels(&ds, only)? {
        let out = train_level(&ds, level, &ctx.cfg)?;
        let ck = Checkpoint {
            level: level as u32,
            iteration: out.trace.len() as u32,
            features: out.features,
        };
        let path = ctx.ckpt(level);
        ck.write(&path)?;
        ctx.written.push(path);
        let loss = ctx.cfg.paths.checkpoints.join(format!("level{level}_loss.csv"));
        ctx.text(loss, &io::loss_csv(&out.trace))?;
    }
    Ok(())
}

fn decompose(ctx: &mut Ctx, only: Option<usize>) -> Result<()> {
    let ds = ctx.dataset()?;
    for level in ctx.levels(&ds, only)? {
        let training = ctx.read_checkpoint(&ds, level)?;
        let masks = level_masks(&ds, level);
        let d = decompose_level(
            &ds.scene,
            &ds.cameras,
            &masks,
            &training.features,
            level,
            &ctx.cfg.decompose.group_config(level, ds.num_levels),
        )?;
        write_decomposition(&ctx.cfg.paths.outputs, &d)?;
        let (json, bin) = io::decomposition_paths(&ctx.cfg.paths.outputs, level);
        ctx.written.extend([json, bin]);
    }
    Ok(())
}

fn describe_cmd(ctx: &mut Ctx, only: Option<usize>) -> Result<()> {
    let ds = ctx.dataset()?;
    for level in ctx.levels(&ds, only)? {
        let d = read_decomposition(&ctx.cfg.paths.outputs, level)?;
        let sets = describe(&ds, &d, &ctx.cfg)?;
        let c = &ctx.cfg.descriptors;
        let file = DescriptorFile {
            version: FORMAT_VERSION,
            level,
            extraction: c.extraction,
            weighting: c.weighting,
            k_max: c.k_max,
            sets,
        };
        let path = io::descriptor_path(&ctx.cfg.paths.outputs, level);
        ctx.json(path, &file)?;
    }
    Ok(())
}

fn inputs(artifacts: &[(LevelDecomposition, Vec<DescriptorSet>)]) -> Vec<LevelInput<'_>> {
    artifacts
        .iter()
        .map(|(d, s)| LevelInput {
            clusters: &d.clusters,
            descriptors: s,
        })
        .collect()
}

fn encode_text(client: &EmbeddingClient, text: &str, dim: usize) -> Result<QuerySet> {
    let check = |v: Vec<f64>| -> Result<Vec<f64>> {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
                context: "encoded text vector",
            });
        }
        Ok(v)
    };
    let vector = check(client.encode(text)?)?;
    let canonical = CANONICAL_PHRASES
        .iter()
        .map(|p| client.encode(p).and_then(check))
        .collect::<Result<_>>()?;
    Ok(QuerySet {
        queries: vec![Query {
            name: text.to_string(),
            vector,
            owner: None,
        }],
        canonical,
    })
}

fn query(ctx: &mut Ctx, a: &QueryArgs) -> Result<()> {
    let client = a.text.as_ref().map(|_| EmbeddingClient::from_env()).transpose()?;
    let ds = ctx.dataset()?;
    let set = match (&a.text, &a.name) {
        (Some(t), _) => encode_text(client.as_ref().expect("client for text"), t, ds.feature_dim)?,
        (None, name) => {
            let mut set = ctx.queries(&ds)?;
            if let Some(n) = name {
                set.queries.retain(|q| &q.name == n);
                if set.queries.is_empty() {
                    return Err(Error::InvalidInput(format!("no query named {n:?}")));
                }
            }
            set
        }
    };
    let artifacts = ctx.level_artifacts(&ds)?;
    let levels = inputs(&artifacts);
    for q in &set.queries {
        let r = answer(&ds, &levels, q, &set.canonical, &ctx.cfg)?;
        write_result(&ctx.cfg.paths.outputs, &q.name, &r)?;
        let (json, bin) = io::result_paths(&ctx.cfg.paths.outputs, &q.name);
        ctx.written.extend([json, bin]);
    }
    Ok(())
}

#[derive(Serialize)]
struct SimilaritySummary {
    intra_pairs: usize,
    inter_pairs: usize,
    overlap: f64,
}

#[derive(Serialize)]
struct RetrievalSummary {
    tau: f64,
    masks: usize,
    low_recall_fraction: f64,
    low_share: f64,
    high_recall_fraction: f64,
    recall_bins: Vec<usize>,
}

fn analyze(ctx: &mut Ctx, a: &AnalyzeArgs) -> Result<()> {
    let ds = ctx.dataset()?;
    let level = a.level.unwrap_or(ds.num_levels - 1);
    ctx.levels(&ds, Some(level))?;
    let d = read_decomposition(&ctx.cfg.paths.outputs, level)?;
    let masks = level_masks(&ds, level);
    let hist = similarity_distribution(&d.clusters, &masks, ctx.cfg.seed)?;
    ctx.text(ctx.out("similarity.csv"), &hist.to_csv())?;
    let summary = SimilaritySummary {
        intra_pairs: hist.intra.len(),
        inter_pairs: hist.inter.len(),
        overlap: hist.overlap,
    };
    ctx.json(ctx.out("similarity.json"), &summary)?;
    if a.svg {
        ctx.text(ctx.out("similarity.svg"), &hist.to_svg())?;
    }
    let fused = fuse_semantics(&ds.scene, &ds.cameras, &masks)?;
    let mut taus = ctx.cfg.analysis.sweep.clone();
    taus.push(ctx.cfg.analysis.tau);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let reports = retrieval_sweep(&fused, &masks, &d.clusters, &taus);
    ctx.text(ctx.out("retrieval_sweep.csv"), &sweep_csv(&reports))?;
    let at_tau = reports
        .iter()
        .find(|r| r.tau == ctx.cfg.analysis.tau)
        .expect("tau is in the sweep");
    let summary = RetrievalSummary {
        tau: at_tau.tau,
        masks: at_tau.recall.len(),
        low_recall_fraction: at_tau.low_recall_fraction,
        low_share: at_tau.low_share,
        high_recall_fraction: at_tau.high_recall_fraction,
        recall_bins: at_tau.recall_bins.clone(),
    };
    ctx.json(ctx.out("retrieval.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    projected: crate::eval::Miou2d,
    direct: crate::eval::Miou3d,
}

fn eval(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let set = ctx.queries(&ds)?;
    let top = ds.num_levels - 1;
    let labels = ds
        .level_labels(top)
        .ok_or_else(|| Error::InvalidInput("evaluation needs the oracle sidecar".into()))?
        .to_vec();
    let artifacts = ctx.level_artifacts(&ds)?;
    let levels = inputs(&artifacts);
    let rasters = ds.cameras.iter().map(|c| project(&ds.scene, c)).collect::<Result<Vec<_>>>()?;
    let mut queries = Vec::new();
    for q in set.queries.iter().filter(|q| q.owner.is_some()) {
        let r = answer(&ds, &levels, q, &set.canonical, &ctx.cfg)?;
        queries.push(Query2d {
            name: q.name.clone(),
            foreground: r.foreground,
            gt: object_gt_masks(&rasters, &labels, q.owner.expect("owned")),
        });
    }
    let projected = miou_2d(&rasters, &queries)?;
    let (decomposition, descriptors) = &artifacts[top];
    let classes = classify_objects(descriptors, &set);
    let pred = gaussian_classes(&decomposition.assignment, &decomposition.clusters, &classes);
    let direct = miou_3d(&pred, &labels)?;
    ctx.json(ctx.out("eval.json"), &EvalReport { projected, direct })
}

fn ablate(ctx: &mut Ctx, seeds: Option<u64>) -> Result<()> {
    let k_max = ctx.cfg.descriptors.k_max;
    let mut scenes = Vec::new();
    match seeds {
        None => {
            let ds = ctx.dataset()?;
            let set = ctx.queries(&ds)?;
            let top = ds.num_levels - 1;
            let gt = ds
                .level_labels(top)
                .ok_or_else(|| Error::InvalidInput("ablation needs the oracle sidecar".into()))?;
            let d = read_decomposition(&ctx.cfg.paths.outputs, top)?;
            let masks = level_masks(&ds, top);
            let scene = AblationScene {
                clusters: &d.clusters,
                assignment: &d.assignment,
                masks: &masks,
                gt,
                queries: &set,
            };
            scenes.push(("dataset".to_string(), run_ablation(&scene, &standard_variants(), k_max, ctx.cfg.seed)?));
        }
        Some(n) => {
            for seed in 0..n {
                let mut cfg = ctx.cfg.clone();
                cfg.synth = SynthConfig::multi_aspect_benchmark(seed);
                cfg.train.seed = seed;
                let (ds, set) = generate_dataset(&cfg.synth)?;
                let top = ds.num_levels - 1;
                let run = run_level(&ds, top, &cfg)?;
                let masks = level_masks(&ds, top);
                let scene = AblationScene {
                    clusters: &run.decomposition.clusters,
                    assignment: &run.decomposition.assignment,
                    masks: &masks,
                    gt: ds.level_labels(top).expect("synthetic oracle"),
                    queries: &set,
                };
                scenes.push((format!("seed{seed}"), run_ablation(&scene, &standard_variants(), k_max, seed)?));
            }
        }
    }
    let table = AblationTable::from_scenes(scenes)?;
    ctx.text(ctx.out("ablation.csv"), &table.to_csv())?;
    ctx.json(ctx.out("ablation.json"), &table)
}
