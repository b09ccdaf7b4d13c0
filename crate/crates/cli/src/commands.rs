use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sfmedit_core::diffusion::{GridShape, LatentGrid};
use sfmedit_core::io::{read_mask_pgm, read_tensor, write_mask_pgm, write_tensor};
use sfmedit_core::mask::{
    attention_prob, extract_mask, temporal_overlap, upsample_nearest, AttentionRecord,
    Connectivity, ProbMode, WordSelection,
};
use sfmedit_core::memory::{FeatureTokenMap, MemoryBank, DEFAULT_CAPACITY};
use sfmedit_core::metrics::{psnr, ssim, token_drift, ImageGrid};
use sfmedit_core::pipeline::{
    edit_video_streaming, replay_edit, toy_feature_backend, Prompts, ToyFeatureBackend, ToySpec,
};
use sfmedit_core::propagation::{propagate, PropagationConfig, DEFAULT_LAMBDA};
use sfmedit_core::Execution;

use crate::args::{
    run_meta, FmpBenchArgs, MaskArgs, MetricsArgs, ReplayArgs, SfmTraceArgs, SimulateArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn frame_file(frame: usize, ext: &str) -> String {
    format!("f{frame:04}.{ext}")
}

fn write_latent(dir: &Path, frame: usize, z: &LatentGrid) -> Result<()> {
    let s = z.shape();
    write_tensor(dir.join(frame_file(frame, "eyit")), &[s.channels, s.height, s.width], z.values())?;
    Ok(())
}

fn write_features(root: &Path, features: &FeatureTokenMap) -> Result<()> {
    let dir = root.join(features.layer_id());
    create_dir(&dir)?;
    write_tensor(
        dir.join(frame_file(features.frame_index(), "eyit")),
        &[features.n_tokens(), features.dim()],
        features.tokens(),
    )?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.edit.resolve()?;
    if args.frames == 0 {
        bail!("--frames must be at least 1");
    }
    let spec = ToySpec {
        seed: cfg.seed,
        drift_rate: args.drift,
        ..ToySpec::default()
    };
    let mut backend = ToyFeatureBackend::new(spec);
    let video = backend.video(args.frames);
    let prompts = Prompts {
        source: backend.source_conditioning(),
        edit: backend.edit_conditioning(),
        unconditional: Some(backend.unconditional()),
    };

    let out = &args.out_dir;
    let (source_dir, edited_dir, mask_dir, feature_dir) =
        (out.join("source"), out.join("edited"), out.join("masks"), out.join("features"));
    for d in [&source_dir, &edited_dir, &mask_dir, &feature_dir] {
        create_dir(d)?;
    }
    write_text(
        &out.join("run.meta"),
        &run_meta(
            "simulate",
            &[("frames", args.frames.to_string()), ("drift", args.drift.to_string())],
            &cfg,
        ),
    )?;
    for (i, z) in video.frames().iter().enumerate() {
        write_latent(&source_dir, i, z)?;
    }

    let started = Instant::now();
    let report = edit_video_streaming(&video, &prompts, &cfg, &mut backend, |frame| -> Result<()> {
        write_latent(&edited_dir, frame.frame, &frame.latent)?;
        if let Some(m) = &frame.mask {
            write_mask_pgm(mask_dir.join(frame_file(frame.frame, "pgm")), m)?;
        }
        frame.features.iter().try_for_each(|f| write_features(&feature_dir, f))
    })?;
    write_text(&out.join("report.jsonl"), &report.to_jsonl(false))?;

    println!("frame\treplacement_rate\tmask_pixels\tbank");
    for f in &report.frames {
        let rate = f.replacement_rate.values().sum::<f64>() / f.replacement_rate.len().max(1) as f64;
        let bank = f
            .memory_events
            .first()
            .map(|e| join(&e.bank_frames))
            .unwrap_or_default();
        let pixels = f.mask_pixels.map_or_else(|| "-".to_string(), |p| p.to_string());
        println!("{}\t{rate:.4}\t{pixels}\t{bank}", f.frame);
    }
    eprintln!(
        "edited {} frames in {:.1} ms, peak storage estimate {} bytes, output in {}",
        report.frames.len(),
        started.elapsed().as_secs_f64() * 1e3,
        report.storage.peak_bytes_estimate(),
        out.display()
    );
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> Result<()> {
    let cfg = args.edit.resolve()?;
    create_dir(&args.out_dir)?;
    let started = Instant::now();
    let out = replay_edit(&args.record_dir, &cfg, Some(&args.out_dir))?;
    write_text(
        &args.out_dir.join("run.meta"),
        &run_meta("replay", &[("record_dir", args.record_dir.display().to_string())], &cfg),
    )?;
    write_text(&args.out_dir.join("report.jsonl"), &out.report.to_jsonl(false))?;
    println!("frame\tmask_pixels\tmemory_events");
    for f in &out.report.frames {
        let pixels = f.mask_pixels.map_or_else(|| "-".to_string(), |p| p.to_string());
        println!("{}\t{pixels}\t{}", f.frame, f.memory_events.len());
    }
    eprintln!(
        "replayed {} frames in {:.1} ms, output in {}",
        out.report.frames.len(),
        started.elapsed().as_secs_f64() * 1e3,
        args.out_dir.display()
    );
    Ok(())
}

fn as_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let t = read_tensor(path)?;
    match t.dims[..] {
        [r, c] => Ok((r, c, t.values)),
        _ => bail!("{}: expected a rank-2 tensor, got dims {:?}", path.display(), t.dims),
    }
}

pub fn mask(args: &MaskArgs) -> Result<()> {
    let q = as_matrix(&args.q)?;
    let k = as_matrix(&args.k)?;
    let n_tokens = q.0;
    let height = match args.height {
        Some(h) => h,
        None => {
            let side = (n_tokens as f64).sqrt().round() as usize;
            if side * side != n_tokens {
                bail!("{n_tokens} query rows are not a square grid; pass --height");
            }
            side
        }
    };
    if height == 0 || n_tokens % height != 0 {
        bail!("--height {height} does not divide {n_tokens} query rows");
    }
    let width = n_tokens / height;
    let record = AttentionRecord::from_matrices(0, 0, "cli", 0, (height, width), q, k)?;
    let prob = attention_prob(&record, ProbMode::Softmax);
    let sel = WordSelection::new(prob.cols, &args.words)?;
    let mut mask = extract_mask(&prob, &sel, args.tau, (height, width))?;
    if let Some(h) = args.upsample {
        if h % height != 0 {
            bail!("--upsample {h} is not a multiple of the grid height {height}");
        }
        mask = upsample_nearest(&mask, (h, width * (h / height)))?;
    }
    if let Some(prev) = &args.prev {
        let prev = read_mask_pgm(prev)?;
        mask = temporal_overlap(&prev, &mask, Connectivity::Four)?;
    }
    write_mask_pgm(&args.out, &mask)?;
    println!("{}x{}\t{} pixels\t{}", mask.height(), mask.width(), mask.count(), args.out.display());
    Ok(())
}

/// A run directory's `edited/` subdirectory if present, else the directory.
fn latent_dir(dir: &Path) -> PathBuf {
    let edited = dir.join("edited");
    if edited.is_dir() {
        edited
    } else {
        dir.to_path_buf()
    }
}

fn frame_files(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    Ok(files)
}

fn read_image(path: &Path) -> Result<ImageGrid> {
    let t = read_tensor(path)?;
    let [c, h, w] = t.dims[..] else {
        bail!("{}: expected a C×H×W tensor, got dims {:?}", path.display(), t.dims);
    };
    let z = LatentGrid::new(GridShape::new(c, h, w), t.values)
        .with_context(|| path.display().to_string())?;
    Ok(ImageGrid::from_latent(&z))
}

fn read_feature_series(dir: &Path) -> Result<BTreeMap<String, Vec<FeatureTokenMap>>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut layers: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    layers.sort();
    for layer_dir in layers {
        let layer = layer_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut series = Vec::new();
        for (i, path) in frame_files(&layer_dir, "eyit")?.values().enumerate() {
            let (n, d, values) = as_matrix(path)?;
            series.push(FeatureTokenMap::new(i, layer.clone(), n, d, values)?);
        }
        out.insert(layer, series);
    }
    Ok(out)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let (dir_a, dir_b) = (latent_dir(&args.dir_a), latent_dir(&args.dir_b));
    let files_a = frame_files(&dir_a, "eyit")?;
    let files_b = frame_files(&dir_b, "eyit")?;
    if files_a.is_empty() {
        bail!("no .eyit frames in {}", dir_a.display());
    }
    if files_a.keys().ne(files_b.keys()) {
        bail!("{} and {} hold different frame sets", dir_a.display(), dir_b.display());
    }
    let masks = args.masks.as_deref().map(|d| frame_files(d, "pgm")).transpose()?;

    let mut table = String::from("frame\tpsnr\tssim");
    if masks.is_some() {
        table.push_str("\tpsnr_bg\tssim_bg");
    }
    table.push('\n');
    for (name, path_a) in &files_a {
        let a = read_image(path_a)?;
        let b = read_image(&files_b[name])?;
        let _ = write!(table, "{name}\t{:.4}\t{:.4}", psnr(&a, &b, None)?, ssim(&a, &b, None)?);
        if let Some(masks) = &masks {
            let background = masks
                .get(name)
                .map(|p| read_mask_pgm(p).map(|m| m.complement()))
                .transpose()?;
            let (p, s) = match &background {
                Some(bg) => (psnr(&a, &b, Some(bg)).ok(), ssim(&a, &b, Some(bg)).ok()),
                None => (None, None),
            };
            let _ = write!(table, "\t{}\t{}", fmt_metric(p), fmt_metric(s));
        }
        table.push('\n');
    }
    print!("{table}");

    let feats_a = read_feature_series(&args.dir_a.join("features"))?;
    let feats_b = read_feature_series(&args.dir_b.join("features"))?;
    if !feats_a.is_empty() || !feats_b.is_empty() {
        println!("layer\tdrift_a\tdrift_b");
        let layers: std::collections::BTreeSet<&String> = feats_a.keys().chain(feats_b.keys()).collect();
        for layer in layers {
            let drift = |m: &BTreeMap<String, Vec<FeatureTokenMap>>| {
                m.get(layer).and_then(|s| token_drift(s).ok())
            };
            println!("{layer}\t{}\t{}", fmt_metric(drift(&feats_a)), fmt_metric(drift(&feats_b)));
        }
    }
    Ok(())
}

pub fn fmp_bench(args: &FmpBenchArgs) -> Result<()> {
    let capacity = args.sfm_len.unwrap_or(DEFAULT_CAPACITY);
    if args.side == 0 || args.dim == 0 || capacity == 0 || args.repeats == 0 {
        bail!("--side, --dim, --sfm-len and --repeats must be positive");
    }
    let toy = toy_feature_backend(args.seed, (args.side, args.dim), args.drift);
    let mut bank = MemoryBank::new(capacity, Default::default())?;
    for f in 0..capacity {
        bank.insert(toy.features(0, f))?;
    }
    let current = toy.features(0, capacity);
    let lambda = args.lambda.unwrap_or(DEFAULT_LAMBDA);
    println!("execution\ttokens\tmemory_rows\tdim\tmedian_ms\treplaced");
    let mut results = Vec::new();
    for exec in [Execution::Sequential, Execution::Parallel] {
        let cfg = PropagationConfig::new(lambda)?.with_execution(exec);
        let mut times = Vec::with_capacity(args.repeats);
        let mut last = None;
        for _ in 0..args.repeats {
            let t = Instant::now();
            let r = propagate(&current, &bank, &cfg)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            last = Some(r);
        }
        times.sort_by(f64::total_cmp);
        let r = last.expect("repeats > 0");
        println!(
            "{exec}\t{}\t{}\t{}\t{:.3}\t{}",
            current.n_tokens(),
            capacity * current.n_tokens(),
            args.dim,
            times[times.len() / 2],
            r.replaced_count()
        );
        results.push(r);
    }
    if results[0] != results[1] {
        bail!("sequential and parallel propagation disagree");
    }
    Ok(())
}

fn join(frames: &[usize]) -> String {
    frames.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
}

pub fn sfm_trace(args: &SfmTraceArgs) -> Result<()> {
    let capacity = args.sfm_len.unwrap_or(DEFAULT_CAPACITY);
    let metric = args.sfm_metric.unwrap_or_default();
    let toy = toy_feature_backend(args.seed.unwrap_or(0), (4, 8), args.drift);
    let mut bank = MemoryBank::new(capacity, metric)?;
    let mut table = String::from("frame\tadmitted\tevicted\tbank\n");
    for f in 0..args.frames {
        let r = bank.insert(toy.features(0, f))?;
        let evicted = r.evicted.map_or_else(|| "-".to_string(), |e| e.to_string());
        let _ = writeln!(table, "{f}\t{}\t{evicted}\t{}", r.admitted, join(&bank.frame_indices()));
    }
    print!("{table}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_text(&dir.join("trace.tsv"), &table)?;
    }
    Ok(())
}
