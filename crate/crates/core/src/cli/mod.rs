//! Command-line interface: `genmap`, `synth`, `train`, `infer`, `eval`, `bankdemo`.

pub mod overlay;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{match_instances, prf1, MatchResult, MicroIou, MATCH_THRESHOLD};
use crate::linker::{link_instances, provide_prompts, read_prompt_file, tracks_from_labels, LinkedInstance, PromptProvider};
use crate::membank::{BankPolicy, MemoryBank, MemoryEntry, RetrievalMode, Update};
use crate::model::{
    load_checkpoint, save_checkpoint, segment_tileset, segment_video, train, Dataset, Graph, Model, VideoSample,
};
use crate::raster::{connected_components, save_rgb, BinaryMask, InstanceMask, RasterGrid};
use crate::synth::{derive_seed, gen_synthetic_map, synthesize_pseudo_video, AnnotatedFrame, SynthConfig};
use crate::video::{
    frame_name, list_sequences, read_json, read_sequence, video_dir_name, write_json, write_sequence, FrameOrder, Sequence,
};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "mapsam2", version, about = "Memory-attention segmentation of historical map tiles and time series")]
pub struct Cli {
    /// Seed for every random choice of the run (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key-value TOML configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress and tables on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Time series with per-object prompts on the latest frame.
    Video,
    /// Independent tiles streamed as one pseudo video.
    Tileset,
    /// Baseline: per-frame prompt-free masks linked by IoU.
    Link,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate annotated synthetic map tiles.
    Genmap,
    /// Turn each annotated tile into a two-frame pseudo video.
    Synth {
        /// Tile set written by `genmap`.
        input: PathBuf,
    },
    /// Fit the trainable parameters and write a checkpoint.
    Train {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "video")]
        mode: Mode,
    },
    /// Predict masks and overlays.
    Infer {
        checkpoint: PathBuf,
        input: PathBuf,
        #[arg(long, value_enum, default_value = "video")]
        mode: Mode,
        /// `oracle`, `jitter:<sigma>` or `file:<path>` (a JSON file, or a
        /// directory of `<video>.json` files).
        #[arg(long, default_value = "oracle")]
        prompts: String,
        /// Decode every frame after the first without memory.
        #[arg(long)]
        no_memory: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "video")]
        mode: Mode,
    },
    /// Replay a list of embeddings through a memory bank and trace its state.
    Bankdemo {
        embeddings: PathBuf,
        #[arg(long, value_enum, default_value = "self-sorting")]
        policy: PolicyArg,
        #[arg(long)]
        capacity: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        retrieve_k: Option<usize>,
        #[arg(long, value_enum, default_value = "weighted-sample")]
        retrieval: RetrievalArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    SelfSorting,
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetrievalArg {
    WeightedSample,
    TopK,
    RecentK,
}

/// One per-item status line of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStatus {
    pub name: String,
    pub status: String,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl ItemStatus {
    fn ok(name: impl Into<String>, flags: Vec<String>) -> Self {
        Self {
            name: name.into(),
            status: "ok".into(),
            flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub items: Vec<ItemStatus>,
}

/// Machine-readable video metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl VideoReport {
    pub fn from_matches(m: &MatchResult) -> Self {
        let s = prf1(m);
        Self {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileReport {
    pub iou: f64,
    pub intersection: usize,
    pub union: usize,
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required for this command".into()))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
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
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        quiet: cli.quiet,
    };
    let out = ctx.out()?.to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (name, inputs, items) = match &cli.command {
        Command::Genmap => ("genmap", vec![], cmd_genmap(&ctx)?),
        Command::Synth { input } => ("synth", vec![input.clone()], cmd_synth(&ctx, input)?),
        Command::Train { dataset, mode } => ("train", vec![dataset.clone()], cmd_train(&ctx, dataset, *mode)?),
        Command::Infer {
            checkpoint,
            input,
            mode,
            prompts,
            no_memory,
        } => (
            "infer",
            vec![checkpoint.clone(), input.clone()],
            cmd_infer(&ctx, checkpoint, input, *mode, prompts, !no_memory)?,
        ),
        Command::Eval { pred, gt, mode } => ("eval", vec![pred.clone(), gt.clone()], cmd_eval(&ctx, pred, gt, *mode)?),
        Command::Bankdemo {
            embeddings,
            policy,
            capacity,
            threshold,
            retrieve_k,
            retrieval,
        } => {
            let mut bank = ctx.cfg.train.bank.clone();
            bank.capacity = capacity.unwrap_or(bank.capacity);
            bank.conf_threshold = threshold.unwrap_or(bank.conf_threshold);
            bank.retrieve_k = retrieve_k.unwrap_or(bank.retrieve_k);
            bank.retrieval = match retrieval {
                RetrievalArg::WeightedSample => RetrievalMode::WeightedSample,
                RetrievalArg::TopK => RetrievalMode::TopK,
                RetrievalArg::RecentK => RetrievalMode::RecentK,
            };
            let policy = match policy {
                PolicyArg::SelfSorting => BankPolicy::SelfSorting,
                PolicyArg::Fifo => BankPolicy::Fifo,
            };
            ("bankdemo", vec![embeddings.clone()], cmd_bankdemo(&ctx, embeddings, policy, &bank)?)
        }
    };
    let manifest = RunManifest {
        command: name.into(),
        config: ctx.cfg.clone(),
        seed: ctx.cfg.seed,
        inputs,
        outputs: vec![out.clone()],
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        items,
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)
}

fn cmd_genmap(ctx: &Ctx) -> Result<Vec<ItemStatus>> {
    let c = &ctx.cfg;
    if c.count == 0 {
        return Err(Error::EmptyInput("count must be at least 1".into()));
    }
    let mut frames = Vec::new();
    let mut masks = Vec::new();
    let mut items = Vec::new();
    for i in 0..c.count {
        let name = frame_name(frames.len());
        match gen_synthetic_map(c.size, c.size, c.instances, &c.synth, derive_seed(c.seed, i as u64)) {
            Ok(f) => {
                frames.push(f.grid);
                masks.push(f.mask);
                items.push(ItemStatus::ok(name, vec![]));
            }
            Err(e @ Error::LayoutInfeasible(_)) => items.push(ItemStatus {
                name: format!("tile {i}"),
                status: "skipped".into(),
                flags: vec![e.to_string()],
            }),
            Err(e) => return Err(e),
        }
    }
    if frames.is_empty() {
        return Err(Error::LayoutInfeasible(format!(
            "no tile could be generated ({} instances on {}x{})",
            c.instances, c.size, c.size
        )));
    }
    write_sequence(ctx.out()?, &frames, &masks, None, FrameOrder::LatestFirst, vec!["tileset".into()])?;
    ctx.say(format!("wrote {} tiles to {}", frames.len(), ctx.out()?.display()));
    Ok(items)
}

fn annotated(seq: &Sequence, dir: &Path) -> Result<Vec<AnnotatedFrame>> {
    if seq.masks.is_empty() {
        return Err(Error::Schema {
            source_name: dir.join(crate::video::MANIFEST).display().to_string(),
            message: "field `masks`: annotation required".into(),
        });
    }
    seq.frames
        .iter()
        .zip(&seq.masks)
        .map(|(g, m)| AnnotatedFrame::new(g.clone(), m.clone()))
        .collect()
}

fn cmd_synth(ctx: &Ctx, input: &Path) -> Result<Vec<ItemStatus>> {
    let seq = read_sequence(input)?;
    let tiles = annotated(&seq, input)?;
    let out = ctx.out()?;
    let mut items = Vec::with_capacity(tiles.len());
    for (i, t) in tiles.iter().enumerate() {
        let sc = SynthConfig {
            seed: derive_seed(ctx.cfg.seed, i as u64),
            ..ctx.cfg.synth.clone()
        };
        let v = synthesize_pseudo_video(t, &sc)?;
        let [a, b] = &v.frames;
        let flags = v.flags();
        let name = video_dir_name(i);
        write_sequence(
            &out.join(&name),
            &[a.grid.clone(), b.grid.clone()],
            &[a.mask.clone(), b.mask.clone()],
            None,
            FrameOrder::Chronological,
            flags.clone(),
        )?;
        items.push(ItemStatus::ok(name, flags));
    }
    ctx.say(format!("wrote {} pseudo videos to {}", items.len(), out.display()));
    Ok(items)
}

/// Annotated videos in processing order.
fn load_videos(dataset: &Path) -> Result<(Vec<String>, Vec<VideoSample>)> {
    let mut names = Vec::new();
    let mut out = Vec::new();
    for dir in list_sequences(dataset)? {
        let seq = read_sequence(&dir)?;
        annotated(&seq, &dir)?;
        let order = seq.processing_order();
        let frames = order.iter().map(|&i| seq.frames[i].clone()).collect();
        let masks = order.iter().map(|&i| seq.masks[i].clone()).collect();
        out.push(VideoSample::new(frames, masks)?);
        names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok((names, out))
}

fn split<T: Clone>(items: &[T], val_fraction: f64) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    (items[..n - n_val].to_vec(), items[n - n_val..].to_vec())
}

fn check_size(model: &Model, h: usize, w: usize) -> Result<()> {
    let s = model.config().input_size;
    if (h, w) != (s, s) {
        return Err(Error::dims(format!("{s}x{s} frames (input_size)"), format!("{h}x{w}")));
    }
    Ok(())
}

fn cmd_train(ctx: &Ctx, dataset: &Path, mode: Mode) -> Result<Vec<ItemStatus>> {
    let mut model = Model::new(ctx.cfg.model_config())?;
    let tc = ctx.cfg.train_config();
    let (train_set, val_set, n) = match mode {
        Mode::Video => {
            let (_, videos) = load_videos(dataset)?;
            check_size(&model, videos[0].frames[0].height(), videos[0].frames[0].width())?;
            let (t, v) = split(&videos, ctx.cfg.val_fraction);
            let n = (t.len(), v.len());
            (Dataset::Videos(t), (!v.is_empty()).then_some(Dataset::Videos(v)), n)
        }
        Mode::Tileset => {
            let seq = read_sequence(dataset)?;
            let tiles = annotated(&seq, dataset)?;
            check_size(&model, tiles[0].height(), tiles[0].width())?;
            let (t, v) = split(&tiles, ctx.cfg.val_fraction);
            let n = (t.len(), v.len());
            (Dataset::Tiles(t), (!v.is_empty()).then_some(Dataset::Tiles(v)), n)
        }
        Mode::Link => return Err(Error::InvalidArgument("the link baseline has no trainable stage".into())),
    };
    ctx.say(format!("training on {} items, validating on {}", n.0, n.1));
    let report = train(&mut model, &train_set, val_set.as_ref(), &tc)?;
    for e in &report.epochs {
        let val = e.val_score.map_or(String::from("-"), |v| format!("{v:.4}"));
        ctx.say(format!("epoch {:>3}  loss {:.5}  val {val}", e.epoch, e.mean_loss));
    }
    let out = ctx.out()?;
    save_checkpoint(&model, &out.join("checkpoint.json"))?;
    write_json(&out.join("train_log.json"), &report)?;
    ctx.say(format!("kept epoch {}; checkpoint at {}", report.best_epoch, out.join("checkpoint.json").display()));
    Ok(vec![ItemStatus::ok("checkpoint.json", vec![format!("best_epoch={}", report.best_epoch)])])
}

/// Paint per-object masks into one label map; lower ids win overlaps.
fn paint(h: usize, w: usize, objects: &[(u32, &BinaryMask)]) -> InstanceMask {
    let mut out = InstanceMask::empty(h, w);
    let mut sorted: Vec<_> = objects.to_vec();
    sorted.sort_by_key(|(id, _)| std::cmp::Reverse(*id));
    for (id, m) in sorted {
        for (l, &b) in out.labels_mut().iter_mut().zip(m.bits()) {
            if b {
                *l = id as u16;
            }
        }
    }
    out
}

fn provider_for(spec: &str, seed: u64, video: &str) -> Result<Option<PromptProvider>> {
    // None means "read from file"
    if spec == "oracle" {
        return Ok(Some(PromptProvider::oracle()));
    }
    if let Some(s) = spec.strip_prefix("jitter:") {
        let sigma: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad jitter sigma {s:?}")))?;
        return PromptProvider::jittered(sigma, seed).map(Some);
    }
    if spec.starts_with("file:") {
        return Ok(None);
    }
    Err(Error::InvalidArgument(format!(
        "unknown prompt source {spec:?} for {video}; use oracle, jitter:<sigma> or file:<path>"
    )))
}

fn write_outputs(dir: &Path, seq: &Sequence, masks_file_order: &[InstanceMask], flags: Vec<String>) -> Result<()> {
    write_sequence(
        dir,
        &seq.frames,
        masks_file_order,
        seq.manifest.years.clone(),
        seq.manifest.order,
        flags,
    )?;
    for (i, (g, m)) in seq.frames.iter().zip(masks_file_order).enumerate() {
        let rgb = overlay::render(g, m);
        save_rgb(&dir.join(format!("overlay_{i:04}.png")), g.width(), g.height(), &rgb)?;
    }
    Ok(())
}

fn cmd_infer(ctx: &Ctx, checkpoint: &Path, input: &Path, mode: Mode, prompts: &str, use_memory: bool) -> Result<Vec<ItemStatus>> {
    let model = load_checkpoint(checkpoint)?;
    let out = ctx.out()?;
    let bank = ctx.cfg.bank();
    let mut items = Vec::new();
    match mode {
        Mode::Tileset => {
            let seq = read_sequence(input)?;
            check_size(&model, seq.frames[0].height(), seq.frames[0].width())?;
            let tiles: Vec<&RasterGrid> = seq.frames.iter().collect();
            let res = segment_tileset(&model, &tiles, bank, ctx.cfg.seed)?;
            let masks: Vec<InstanceMask> = res.iter().map(|r| connected_components(&r.mask)).collect();
            let flags = res
                .iter()
                .enumerate()
                .map(|(i, r)| format!("tile {i}: confidence {:.4}, bank {:?}, size {}", r.confidence, r.update, r.bank_size))
                .collect();
            write_outputs(out, &seq, &masks, flags)?;
            items.push(ItemStatus::ok(".", vec![]));
        }
        Mode::Video | Mode::Link => {
            for (vi, dir) in list_sequences(input)?.into_iter().enumerate() {
                let seq = read_sequence(&dir)?;
                check_size(&model, seq.frames[0].height(), seq.frames[0].width())?;
                let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let dest = if dir == input { out.to_path_buf() } else { out.join(&name) };
                let order = seq.processing_order();
                let frames: Vec<&RasterGrid> = order.iter().map(|&i| &seq.frames[i]).collect();
                let (h, w) = (frames[0].height(), frames[0].width());
                let mut per_proc: Vec<InstanceMask>;
                let mut flags = Vec::new();
                if mode == Mode::Video {
                    let obj_prompts = match provider_for(prompts, derive_seed(ctx.cfg.seed, vi as u64), &name)? {
                        Some(p) => {
                            let gt = seq.masks.get(order[0]).ok_or_else(|| {
                                Error::InvalidArgument(format!("{name}: {prompts} prompts need ground-truth masks"))
                            })?;
                            provide_prompts(gt, &p)?
                        }
                        None => {
                            let path = PathBuf::from(prompts.trim_start_matches("file:"));
                            let path = if path.is_dir() { path.join(format!("{name}.json")) } else { path };
                            read_prompt_file(&path)?
                        }
                    };
                    let res = segment_video(&model, &frames, &obj_prompts, bank, use_memory)?;
                    for (id, why) in &res.rejected {
                        flags.push(format!("object {id} rejected: {why}"));
                    }
                    per_proc = (0..frames.len())
                        .map(|t| {
                            let objs: Vec<(u32, &BinaryMask)> = res.objects.iter().map(|o| (o.id, &o.masks[t])).collect();
                            paint(h, w, &objs)
                        })
                        .collect();
                } else {
                    let singles = frames
                        .iter()
                        .map(|f| {
                            let mut g = Graph::new();
                            let e = model.encode_frame(&mut g, f)?;
                            let e = model.memory_attention(&mut g, e, &[]);
                            let d = model.decode_mask(&mut g, e, None);
                            let l = g.value(d.logits);
                            Ok(connected_components(&BinaryMask::from_logits(l.rows, l.cols, &l.data)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let tracks = link_instances(&singles, ctx.cfg.link_iou)?;
                    per_proc = (0..frames.len())
                        .map(|t| {
                            let objs: Vec<(u32, &BinaryMask)> = tracks.iter().map(|tr| (tr.id, &tr.masks[t])).collect();
                            paint(h, w, &objs)
                        })
                        .collect();
                }
                // back to file order
                let mut file_order = vec![InstanceMask::empty(h, w); frames.len()];
                for (p, &i) in order.iter().enumerate() {
                    file_order[i] = std::mem::replace(&mut per_proc[p], InstanceMask::empty(h, w));
                }
                write_outputs(&dest, &seq, &file_order, flags.clone())?;
                items.push(ItemStatus::ok(name, flags));
            }
        }
    }
    ctx.say(format!("wrote predictions for {} item(s) to {}", items.len(), out.display()));
    Ok(items)
}

fn tracks_of(seq: &Sequence, dir: &Path) -> Result<Vec<LinkedInstance>> {
    annotated(seq, dir)?;
    Ok(tracks_from_labels(&seq.masks))
}

fn cmd_eval(ctx: &Ctx, pred: &Path, gt: &Path, mode: Mode) -> Result<Vec<ItemStatus>> {
    let out = ctx.out()?;
    let mut items = Vec::new();
    match mode {
        Mode::Tileset => {
            let p = read_sequence(pred)?;
            let g = read_sequence(gt)?;
            annotated(&p, pred)?;
            annotated(&g, gt)?;
            if p.masks.len() != g.masks.len() {
                return Err(Error::dims(format!("{} tiles", g.masks.len()), format!("{} tiles", p.masks.len())));
            }
            let mut iou = MicroIou::default();
            for (a, b) in p.masks.iter().zip(&g.masks) {
                iou.add(&a.foreground(), &b.foreground())?;
            }
            let report = TileReport {
                iou: iou.value(),
                intersection: iou.intersection,
                union: iou.union,
            };
            write_json(&out.join(REPORT), &report)?;
            ctx.say(format!("{:<14}{:>10}\n{:<14}{:>10.4}", "metric", "value", "iou", report.iou));
            items.push(ItemStatus::ok(REPORT, vec![]));
        }
        Mode::Video | Mode::Link => {
            let gts = list_sequences(gt)?;
            let mut total = MatchResult::default();
            for gdir in gts {
                let name = gdir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let pdir = if gdir == gt { pred.to_path_buf() } else { pred.join(&name) };
                let g = read_sequence(&gdir)?;
                let p = read_sequence(&pdir)?;
                if p.masks.len() != g.masks.len() {
                    return Err(Error::dims(
                        format!("{} frames in {name}", g.masks.len()),
                        format!("{} predicted", p.masks.len()),
                    ));
                }
                let m = match_instances(&tracks_of(&p, &pdir)?, &tracks_of(&g, &gdir)?, MATCH_THRESHOLD)?;
                items.push(ItemStatus::ok(name, vec![format!("tp={} fp={} fn={}", m.tp, m.fp, m.fn_)]));
                total.accumulate(&m);
            }
            let report = VideoReport::from_matches(&total);
            write_json(&out.join(REPORT), &report)?;
            ctx.say(format!(
                "{:<10}{:>10}\n{:<10}{:>10.4}\n{:<10}{:>10.4}\n{:<10}{:>10.4}\n{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}",
                "metric", "value", "precision", report.precision, "recall", report.recall, "f1", report.f1, "tp", report.tp,
                "fp", report.fp, "fn", report.fn_
            ));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub vector: Vec<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFile {
    pub entries: Vec<EmbeddingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankStep {
    pub step: usize,
    pub confidence: f64,
    /// Retrieval distribution over the bank before the update, queried with this embedding.
    pub probabilities: Vec<f64>,
    /// Source indices returned by retrieval before the update.
    pub retrieved: Vec<usize>,
    pub update: String,
    /// Source indices held after the update, in insertion order.
    pub bank: Vec<usize>,
}

fn cmd_bankdemo(ctx: &Ctx, path: &Path, policy: BankPolicy, bank_cfg: &crate::membank::BankConfig) -> Result<Vec<ItemStatus>> {
    let file: EmbeddingFile = read_json(path)?;
    if file.entries.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no embeddings", path.display())));
    }
    if bank_cfg.capacity == 0 || bank_cfg.retrieve_k == 0 {
        return Err(Error::InvalidArgument("capacity and retrieve-k must be at least 1".into()));
    }
    let mut bank: MemoryBank<()> = MemoryBank::new(bank_cfg.capacity, policy);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut trace = Vec::with_capacity(file.entries.len());
    for (i, e) in file.entries.iter().enumerate() {
        let n = crate::membank::norm(&e.vector);
        if n == 0.0 || !(0.0..=1.0).contains(&e.confidence) {
            return Err(Error::Schema {
                source_name: path.display().to_string(),
                message: format!("entries[{i}]: vector must be nonzero and confidence in [0, 1]"),
            });
        }
        let pooled: Vec<f64> = e.vector.iter().map(|v| v / n).collect();
        let probabilities = bank.retrieval_probabilities(&pooled)?;
        let retrieved = bank
            .retrieve(&pooled, bank_cfg.retrieve_k, bank_cfg.retrieval, &mut rng)?
            .iter()
            .map(|m| m.source_index)
            .collect();
        let update = bank.update(MemoryEntry::new((), pooled, e.confidence, i), bank_cfg.conf_threshold)?;
        let update = match update {
            Update::Rejected => "rejected".to_string(),
            Update::Appended => "appended".into(),
            Update::Evicted(t) => format!("evicted tick {t}"),
            Update::Discarded => "discarded".into(),
        };
        let step = BankStep {
            step: i,
            confidence: e.confidence,
            probabilities,
            retrieved,
            update,
            bank: bank.entries().iter().map(|m| m.source_index).collect(),
        };
        ctx.say(format!("step {:>3}  conf {:.3}  {:<16} bank {:?}", i, e.confidence, step.update, step.bank));
        trace.push(step);
    }
    write_json(&ctx.out()?.join("bank_trace.json"), &trace)?;
    Ok(vec![ItemStatus::ok("bank_trace.json", vec![])])
}
