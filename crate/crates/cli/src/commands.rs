//! Subcommand implementations. Inputs are read and validated before any
//! output is created.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spixel_core::data::{
    apply_override, file_sha256, load_labels, load_manifest, load_pair, load_rgb, load_superpixels, save_labels,
    save_rgb, save_superpixels, synthetic_corpus, write_manifest, ManifestRow, RunConfig, Split,
};
use spixel_core::metrics::{boundary_mask, evaluate, MetricsReport};
use spixel_core::net::{load_checkpoint, EsmNet};
use spixel_core::slic::{slic, SlicConfig};
use spixel_core::spix::SuperpixelMap;
use spixel_core::train::{segment_image, train, TrainSetup};
use spixel_core::vision::{bal_encode, bal_entropy_map, csf_table, distance_field};
use spixel_core::RgbImage;

use crate::args::{BalEncodeArgs, ConfigArgs, CsfArgs, DecodeArgs, EvalArgs, InferArgs, Method, SynthArgs, TrainArgs, VizArgs};
use crate::report::{emit, CliError, CliResult};

/// Progress records are emitted every this many training iterations.
const PROGRESS_EVERY: u64 = 50;

pub fn resolve_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg = apply_override(&cfg, o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(path, (text + "\n").as_bytes())
}

#[derive(Serialize)]
struct Invocation {
    argv: Vec<String>,
}

/// Resolved config plus the command line, so a run can be repeated exactly.
fn snapshot(config_path: &Path, invocation_path: &Path, cfg: &RunConfig) -> CliResult<()> {
    cfg.save(config_path)?;
    write_json(invocation_path, &Invocation { argv: std::env::args().collect() })
}

/// Snapshot for an output directory.
fn snapshot_dir(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    snapshot(&dir.join("config.json"), &dir.join("invocation.json"), cfg)
}

/// Snapshot for a single output file: `<stem>.config.json` beside it.
fn snapshot_file(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    snapshot(&out.with_extension("config.json"), &out.with_extension("invocation.json"), cfg)
}

fn parent_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{} has no file name", path.display())))
}

/// Grid interval giving roughly `count` cells on an `h × w` image.
pub fn interval_for_count(count: usize, height: usize, width: usize) -> CliResult<usize> {
    if count == 0 {
        return Err(CliError::Usage("--spix-count must be at least 1".into()));
    }
    let s = ((height * width) as f64 / count as f64).sqrt().round() as usize;
    Ok(s.clamp(1, height.min(width)))
}

/// Chosen decoder, loaded once and shared across worker threads.
enum Decoder {
    Net(Box<EsmNet<f32>>),
    Slic(SlicConfig),
}

fn decoder(args: &DecodeArgs, cfg: &RunConfig) -> CliResult<Decoder> {
    match args.method {
        Method::Net => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method net needs --checkpoint".into()))?;
            Ok(Decoder::Net(Box::new(load_checkpoint(path)?.net)))
        }
        Method::Slic => {
            if args.checkpoint.is_some() {
                return Err(CliError::Usage("--checkpoint is not used by --method slic".into()));
            }
            Ok(Decoder::Slic(SlicConfig { k: args.spix_count.unwrap_or(cfg.slic.k), ..cfg.slic.clone() }))
        }
    }
}

impl Decoder {
    /// Superpixels and the grid interval they correspond to.
    fn decode(&self, image: &RgbImage, spix_count: Option<usize>, cfg: &RunConfig) -> CliResult<(SuperpixelMap, usize)> {
        let (h, w) = (image.height(), image.width());
        match self {
            Decoder::Net(net) => {
                let s = match spix_count {
                    Some(k) => interval_for_count(k, h, w)?,
                    None => cfg.loss.s,
                };
                Ok((segment_image(net, image, s)?, s))
            }
            Decoder::Slic(sc) => {
                let s = interval_for_count(sc.k, h, w)?;
                Ok((slic(image, sc)?, s))
            }
        }
    }
}

// ---------------------------------------------------------------- train

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let mut cfg = resolve_config(&args.config)?;
    let rows = load_manifest(&args.manifest)?;
    let rows: Vec<ManifestRow> = rows.into_iter().filter(|r| args.all_splits || r.split == Split::Train).collect();
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} has no training rows", args.manifest.display())));
    }
    let data = rows
        .iter()
        .map(|r| load_pair(&r.image, &r.label, cfg.bal.categories))
        .collect::<spixel_core::Result<Vec<_>>>()?;
    let mut net = match &args.init {
        Some(p) => load_checkpoint(p)?.net,
        None => EsmNet::init_weights(&cfg.net, cfg.seeds.init)?,
    };
    cfg.net = net.config().clone();

    create_dir(&args.out)?;
    snapshot_dir(&args.out, &cfg)?;
    let setup = TrainSetup {
        bal: &cfg.bal,
        loss: &cfg.loss,
        train: &cfg.train,
        seed: cfg.seeds.data,
        out_dir: Some(&args.out),
    };
    let log = train(&data, &mut net, setup, |r| {
        if r.iteration % PROGRESS_EVERY == 0 {
            emit(&[
                ("event", "progress"),
                ("iteration", &r.iteration.to_string()),
                ("lr", &r.lr.to_string()),
                ("total", &r.total.to_string()),
                ("ce_part", &r.ce_part.to_string()),
                ("pos_part", &r.pos_part.to_string()),
            ]);
        }
    })?;
    let last = log.last().map(|r| r.total.to_string()).unwrap_or_default();
    emit(&[
        ("status", "ok"),
        ("command", "train"),
        ("iterations", &log.len().to_string()),
        ("final_total", &last),
        ("out", &args.out.display().to_string()),
    ]);
    Ok(())
}

// ---------------------------------------------------------------- infer

pub fn infer_cmd(args: &InferArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    let dec = decoder(&args.decode, &cfg)?;
    let mut seen = HashSet::new();
    for p in &args.images {
        if !seen.insert(stem(p)?) {
            return Err(CliError::Usage(format!("two inputs share the output name of {}", p.display())));
        }
    }
    let results: Vec<CliResult<(String, SuperpixelMap, usize, String)>> = args
        .images
        .par_iter()
        .map(|p| {
            let image = load_rgb(p)?;
            let (map, s) = dec.decode(&image, args.decode.spix_count, &cfg)?;
            Ok((stem(p)?, map, s, file_sha256(p)?))
        })
        .collect();
    let outputs = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    create_dir(&args.out)?;
    snapshot_dir(&args.out, &cfg)?;
    for (name, map, s, sha) in &outputs {
        save_superpixels(&args.out.join(format!("{name}.png")), map, *s, sha)?;
    }
    emit(&[
        ("status", "ok"),
        ("command", "infer"),
        ("images", &outputs.len().to_string()),
        ("out", &args.out.display().to_string()),
    ]);
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Serialize)]
struct ImageReport<'a> {
    image: String,
    label: String,
    split: Split,
    s: usize,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

#[derive(Serialize)]
struct EvalSummary {
    images: usize,
    boundary_tolerance: usize,
    mean_superpixel_count: f64,
    mean_asa: f64,
    mean_br: f64,
    mean_bp: f64,
    mean_co: f64,
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    let dec = decoder(&args.decode, &cfg)?;
    let rows = load_manifest(&args.manifest)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{} lists no images", args.manifest.display())));
    }
    let results: Vec<CliResult<(MetricsReport, usize)>> = rows
        .par_iter()
        .map(|r| {
            let pair = load_pair(&r.image, &r.label, cfg.bal.categories)?;
            let (map, s) = dec.decode(&pair.image, args.decode.spix_count, &cfg)?;
            Ok((evaluate(&map, &pair.labels, args.tolerance)?, s))
        })
        .collect();
    let reports = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    create_dir(&args.out)?;
    snapshot_dir(&args.out, &cfg)?;
    let per_image = args.out.join("reports");
    create_dir(&per_image)?;
    let csv_path = args.out.join("metrics.csv");
    let mut csv = String::from("image,superpixel_count,asa,br,bp,co\n");
    for (i, (row, (rep, s))) in rows.iter().zip(&reports).enumerate() {
        let image = row.image.display().to_string();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&image),
            rep.superpixel_count,
            rep.asa,
            rep.br,
            rep.bp,
            rep.co
        ));
        let report = ImageReport {
            image,
            label: row.label.display().to_string(),
            split: row.split,
            s: *s,
            metrics: rep,
        };
        write_json(&per_image.join(format!("{i:04}_{}.json", stem(&row.image)?)), &report)?;
    }
    write_file(&csv_path, csv.as_bytes())?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
    let summary = EvalSummary {
        images: reports.len(),
        boundary_tolerance: args.tolerance,
        mean_superpixel_count: mean(|r| r.superpixel_count as f64),
        mean_asa: mean(|r| r.asa),
        mean_br: mean(|r| r.br),
        mean_bp: mean(|r| r.bp),
        mean_co: mean(|r| r.co),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    emit(&[
        ("status", "ok"),
        ("command", "eval"),
        ("images", &summary.images.to_string()),
        ("mean_asa", &summary.mean_asa.to_string()),
        ("mean_br", &summary.mean_br.to_string()),
        ("mean_bp", &summary.mean_bp.to_string()),
        ("mean_co", &summary.mean_co.to_string()),
        ("out", &args.out.display().to_string()),
    ]);
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------- bal

#[derive(Serialize)]
struct TargetHeader {
    /// `[channels, height, width]`.
    shape: [usize; 3],
    dtype: &'static str,
    layout: &'static str,
    categories: usize,
    delta_mu: usize,
    support_radius: usize,
    source: String,
}

/// Entropy a window of `len` equal weights would have; scales the heatmap.
fn max_window_entropy(len: usize) -> f64 {
    (len as f64).ln()
}

/// Dark blue (low) through red to yellow (high).
fn heat_color(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) as f32;
    [(1.5 * t).min(1.0), (2.0 * t - 1.0).clamp(0.0, 1.0), (0.5 - t).max(0.0) * 2.0 * 0.6]
}

pub fn bal_encode_cmd(args: &BalEncodeArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    let labels = load_labels(&args.labels, cfg.bal.categories)?;
    let field = distance_field(&labels, cfg.bal.connectivity)?;
    let target = bal_encode(&labels, &field, &cfg.bal)?;
    let (w, h) = (labels.width(), labels.height());
    let dense = target.to_dense_chw();
    let entropy = bal_entropy_map(&target);
    let scale = max_window_entropy(target.window_len());
    let heat = RgbImage::new(w, h, entropy.iter().map(|&e| heat_color(e / scale)).collect())?;

    create_dir(&args.out)?;
    snapshot_dir(&args.out, &cfg)?;
    let mut bytes = Vec::with_capacity(dense.len() * 4);
    for v in &dense {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&args.out.join("target.f32"), &bytes)?;
    let header = TargetHeader {
        shape: [target.channels(), h, w],
        dtype: "f32le",
        layout: "chw",
        categories: cfg.bal.categories,
        delta_mu: cfg.bal.delta_mu,
        support_radius: cfg.bal.support_radius,
        source: args.labels.display().to_string(),
    };
    write_json(&args.out.join("target.json"), &header)?;
    save_rgb(&args.out.join("entropy.png"), &heat)?;
    emit(&[
        ("status", "ok"),
        ("command", "bal-encode"),
        ("channels", &target.channels().to_string()),
        ("width", &w.to_string()),
        ("height", &h.to_string()),
        ("out", &args.out.display().to_string()),
    ]);
    Ok(())
}

// ---------------------------------------------------------------- csf

pub fn csf_text(max_f: f64, step: f64) -> CliResult<String> {
    let mut out = String::from("f,sensitivity\n");
    for (f, h) in csf_table(max_f, step)? {
        out.push_str(&format!("{f},{h}\n"));
    }
    Ok(out)
}

pub fn csf_cmd(args: &CsfArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    let text = csf_text(args.max_f, args.step)?;
    match &args.out {
        Some(path) => {
            parent_dir(path)?;
            write_file(path, text.as_bytes())?;
            snapshot_file(path, &cfg)?;
            emit(&[("status", "ok"), ("command", "csf"), ("rows", &(text.lines().count() - 1).to_string())]);
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- viz

/// Copy of `image` with superpixel boundary pixels painted `color`.
pub fn overlay(image: &RgbImage, map: &SuperpixelMap, color: [u8; 3]) -> CliResult<RgbImage> {
    if (image.width(), image.height()) != (map.width(), map.height()) {
        return Err(CliError::Core(spixel_core::Error::Dimension {
            op: "viz",
            detail: format!(
                "image is {}×{} but superpixels are {}×{}",
                image.width(),
                image.height(),
                map.width(),
                map.height()
            ),
        }));
    }
    let mask = boundary_mask(map.ids(), map.width(), map.height());
    let paint = color.map(|c| c as f32 / 255.0);
    let mut out = image.clone();
    for (px, &b) in out.pixels_mut().iter_mut().zip(&mask) {
        if b {
            *px = paint;
        }
    }
    Ok(out)
}

pub fn viz_cmd(args: &VizArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    let image = load_rgb(&args.image)?;
    let map = load_superpixels(&args.superpixels)?;
    let out = overlay(&image, &map, args.color)?;
    parent_dir(&args.out)?;
    save_rgb(&args.out, &out)?;
    snapshot_file(&args.out, &cfg)?;
    emit(&[("status", "ok"), ("command", "viz"), ("out", &args.out.display().to_string())]);
    Ok(())
}

// ---------------------------------------------------------------- synth

pub fn synth_cmd(args: &SynthArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.config)?;
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.val_fraction) {
        return Err(CliError::Usage(format!("--val-fraction must lie in [0, 1], got {}", args.val_fraction)));
    }
    let corpus = synthetic_corpus(&cfg.synth, args.count)?;
    let val = (args.val_fraction * args.count as f64).round() as usize;

    let (images, labels) = (args.out.join("images"), args.out.join("labels"));
    create_dir(&images)?;
    create_dir(&labels)?;
    snapshot_dir(&args.out, &cfg)?;
    let digits = (args.count - 1).to_string().len().max(3);
    let mut rows = Vec::with_capacity(corpus.len());
    for (i, pair) in corpus.iter().enumerate() {
        let name = format!("scene_{i:0digits$}.png");
        save_rgb(&images.join(&name), &pair.image)?;
        save_labels(&labels.join(&name), &pair.labels)?;
        rows.push(ManifestRow {
            image: PathBuf::from("images").join(&name),
            label: PathBuf::from("labels").join(&name),
            split: if i >= args.count - val { Split::Val } else { Split::Train },
        });
    }
    write_manifest(&args.out.join("manifest.csv"), &rows)?;
    emit(&[
        ("status", "ok"),
        ("command", "synth"),
        ("scenes", &args.count.to_string()),
        ("out", &args.out.display().to_string()),
    ]);
    Ok(())
}
