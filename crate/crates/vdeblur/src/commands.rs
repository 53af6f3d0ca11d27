//! Subcommand bodies. Each takes fully resolved settings.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vdeblur_core::stream::{ablation_suite, framewise_curve, run_stream, InstantClock};
use vdeblur_core::synth::{generate_synthetic, sample_config, synthesize_video, GeneratorParams, Motion, SyntheticKind};
use vdeblur_core::train::{sample_batch, train_sequence_step};
use vdeblur_core::{
    AdamConfig, Frame, FrameSequence, LossConfig, ModelConfig, ModelParams, OptimState, PairedSequence, SynthConfig,
    Variant,
};

use crate::checkpoint;
use crate::cli::{
    required, AblateSettings, BenchSettings, DeblurSettings, EvalSettings, GenerateSettings, SynthSettings,
    TrainSettings,
};
use crate::config::echo;
use crate::error::{CliError, CliResult};
use crate::frames::{list_frames, read_frames, write_frame};
use crate::manifest::{
    hash_inputs, read_json, write_json, FootageManifest, InputHash, OutputManifest, PairEntry, SynthManifest,
};
use crate::report::{AblationReport, EvalSummary, StreamReport};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn image_extension(format: &str) -> CliResult<&'static str> {
    match format.to_ascii_lowercase().as_str() {
        "png" => Ok("png"),
        "ppm" => Ok("ppm"),
        other => Err(CliError::Usage(format!("unknown image format `{other}` (expected png or ppm)"))),
    }
}

fn motion_json(motion: Option<Motion>) -> serde_json::Value {
    match motion {
        Some(Motion::Translation { dx, dy }) => json!({ "kind": "translation", "dx": dx, "dy": dy }),
        Some(Motion::Rotation { radians_per_frame }) => {
            json!({ "kind": "rotation", "radians_per_frame": radians_per_frame })
        }
        None => serde_json::Value::Null,
    }
}

pub fn generate(s: GenerateSettings) -> CliResult<()> {
    let out = PathBuf::from(required(&s.out, "out")?);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let angle = s.angle.map_or_else(|| rng.random::<f64>() * std::f64::consts::TAU, f64::to_radians);
    let (dx, dy) = (s.speed * angle.cos(), s.speed * angle.sin());
    let kind = match s.kind.as_str() {
        "shifting-texture" => SyntheticKind::ShiftingTexture { dx, dy },
        "moving-square" => SyntheticKind::MovingSquare { dx, dy, size: s.size },
        "rotating-pattern" => {
            let radius = 0.5 * s.width.min(s.height) as f64;
            SyntheticKind::RotatingPattern { radians_per_frame: s.speed / radius.max(1.0) }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown kind `{other}` (expected shifting-texture, moving-square or rotating-pattern)"
            )))
        }
    };
    let params = GeneratorParams { width: s.width, height: s.height, frames: s.frames, fps: s.fps, block: s.block };
    let seq = generate_synthetic(kind, params, &mut rng)?;
    create_dir(&out)?;
    let mut names = Vec::with_capacity(seq.len());
    for (i, f) in seq.frames().iter().enumerate() {
        let name = format!("frame_{i:05}.png");
        write_frame(&out.join(&name), f)?;
        names.push(name);
    }
    let manifest = FootageManifest {
        fps: seq.fps(),
        width: s.width,
        height: s.height,
        frames: names,
        motion: motion_json(seq.motion()),
        config: echo(&s),
    };
    write_json(&out.join("footage.json"), &manifest)?;
    println!("wrote {} frames to {}", seq.len(), out.display());
    Ok(())
}

pub fn synth(s: SynthSettings) -> CliResult<()> {
    let input = required(&s.input, "input")?;
    let out = PathBuf::from(required(&s.out, "out")?);
    let ext = image_extension(&s.format)?;
    let cfg = if s.random_config {
        sample_config(&mut ChaCha8Rng::seed_from_u64(s.seed))
    } else {
        let cfg = SynthConfig::new(s.tau, s.interval)?;
        if !cfg.in_sampling_range() {
            return Err(CliError::Usage(format!(
                "interval {} must be below 2*tau = {} (tau <= T < 2 tau)",
                s.interval,
                2 * s.tau
            )));
        }
        cfg
    };
    let paths = list_frames(input)?;
    let mut frames = read_frames(&paths)?;
    if let Some(ratio) = s.downsample {
        frames = frames.iter().map(|f| f.downsample(ratio)).collect::<Result<_, _>>()?;
    }
    let seq = FrameSequence::new(frames, s.fps)?;
    let video = synthesize_video(&seq, cfg)?;
    if video.pairs.is_empty() {
        return Err(CliError::Data(format!(
            "{} frames are too few for tau={} (need at least tau frames)",
            seq.len(),
            cfg.tau()
        )));
    }
    create_dir(&out.join("blurry"))?;
    create_dir(&out.join("sharp"))?;
    let mut pairs = Vec::with_capacity(video.pairs.len());
    for p in &video.pairs {
        let entry = PairEntry {
            index: p.index,
            blurry: format!("blurry/{:05}.{ext}", p.index),
            sharp: format!("sharp/{:05}.{ext}", p.index),
        };
        write_frame(&out.join(&entry.blurry), &p.blurry)?;
        write_frame(&out.join(&entry.sharp), &p.sharp)?;
        pairs.push(entry);
    }
    let (width, height) = video.pairs[0].blurry.dims();
    let manifest = SynthManifest {
        tau: cfg.tau(),
        interval: cfg.interval(),
        source_fps: seq.fps(),
        fps: video.fps,
        width,
        height,
        pairs,
        config: echo(&s),
        inputs: hash_inputs(&paths)?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "tau={} T={}: {} pairs at {:.3} fps in {}",
        cfg.tau(),
        cfg.interval(),
        video.pairs.len(),
        video.fps,
        out.display()
    );
    Ok(())
}

/// Paired frames of a synth manifest, plus hashes of every file read.
pub fn load_pairs(manifest_path: &Path) -> CliResult<(PairedSequence, Vec<InputHash>)> {
    let manifest: SynthManifest = read_json(manifest_path)?;
    let blurry_paths = manifest.blurry_paths(manifest_path);
    let sharp_paths = manifest.sharp_paths(manifest_path);
    let blurry = read_frames(&blurry_paths)?;
    let sharp = read_frames(&sharp_paths)?;
    let mut hashes = vec![InputHash::of(manifest_path)?];
    hashes.extend(hash_inputs(&blurry_paths)?);
    hashes.extend(hash_inputs(&sharp_paths)?);
    Ok((PairedSequence::new(blurry, sharp)?, hashes))
}

fn load_datasets(manifests: &[String], flag: &str) -> CliResult<(Vec<PairedSequence>, Vec<InputHash>)> {
    if manifests.is_empty() {
        return Err(CliError::Usage(format!("missing required --{flag}")));
    }
    let mut data = Vec::new();
    let mut hashes = Vec::new();
    for m in manifests {
        let (seq, h) = load_pairs(Path::new(m))?;
        data.push(seq);
        hashes.extend(h);
    }
    Ok((data, hashes))
}

pub fn model_config(s: &TrainSettings) -> CliResult<ModelConfig> {
    let variant: Variant = s.variant.parse()?;
    if !(s.scale.is_finite() && s.scale > 0.0) {
        return Err(CliError::Usage(format!("--scale must be positive, got {}", s.scale)));
    }
    let config = ModelConfig {
        encoder_blocks: s.encoder_blocks,
        decoder_blocks: s.decoder_blocks,
        ..ModelConfig::new(variant, s.m).scaled(s.scale)
    };
    config.validate()?;
    Ok(config)
}

pub fn train(s: TrainSettings) -> CliResult<()> {
    let ckpt = PathBuf::from(required(&s.ckpt_out, "ckpt-out")?);
    let config = model_config(&s)?;
    if s.batch == 0 || s.seq_len == 0 || s.crop == 0 {
        return Err(CliError::Usage("--batch, --seq-len and --crop must be positive".into()));
    }
    let loss_cfg = LossConfig::new(s.lambda)?;
    let adam = AdamConfig { learning_rate: s.lr, decay_every: s.decay_every, ..AdamConfig::default() };
    let (data, inputs) = load_datasets(&s.data, "data")?;

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut params = ModelParams::<f32>::init(&config, &mut rng)?;
    let mut opt = OptimState::new(&params, adam);
    let log_path = s.log.as_ref().map_or_else(|| ckpt.with_extension("csv"), PathBuf::from);
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let file = std::fs::File::create(&log_path).map_err(CliError::io(&log_path))?;
    let mut log = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", log_path.display()));
    log.write_record(["iteration", "lr", "loss", "mse", "reg"]).map_err(csv_err)?;
    let mut last = None;
    for it in 0..s.iters {
        let batch = sample_batch(&data, &mut rng, s.batch, s.seq_len, s.crop)?;
        let lr = opt.learning_rate();
        let loss = train_sequence_step(&batch, &mut params, &mut opt, loss_cfg)?;
        log.write_record([it.to_string(), lr.to_string(), loss.total.to_string(), loss.mse.to_string(), loss.reg.to_string()])
            .map_err(csv_err)?;
        last = Some(loss);
    }
    log.flush().map_err(CliError::io(&log_path))?;
    let provenance = json!({
        "config": echo(&s),
        "seed": s.seed,
        "iterations": s.iters,
        "final_loss": last.map(|l| l.total),
        "inputs": inputs,
    });
    checkpoint::save(&ckpt, &params, provenance)?;
    match last {
        Some(l) => println!("{} iterations, final loss {:.6}; checkpoint {}", s.iters, l.total, ckpt.display()),
        None => println!("0 iterations; checkpoint {}", ckpt.display()),
    }
    Ok(())
}

fn load_checkpoint(path: &Option<String>) -> CliResult<(ModelParams<f32>, InputHash)> {
    let path = Path::new(required(path, "ckpt")?);
    let (params, _) = checkpoint::load(path)?;
    Ok((params, InputHash::of(path)?))
}

fn write_report<T: serde::Serialize>(path: &Option<String>, report: &T) -> CliResult<()> {
    match path {
        Some(p) => write_json(Path::new(p), report),
        None => Ok(()),
    }
}

pub fn deblur(s: DeblurSettings) -> CliResult<()> {
    let (params, ckpt_hash) = load_checkpoint(&s.ckpt)?;
    let input = required(&s.input, "input")?;
    let out = PathBuf::from(required(&s.out, "out")?);
    let ext = image_extension(&s.format)?;
    let paths = list_frames(input)?;
    let frames = read_frames(&paths)?;
    let (outputs, report) = run_stream(&frames, None, &params, &mut InstantClock::default())?;
    create_dir(&out)?;
    let mut names = Vec::with_capacity(outputs.len());
    for (p, f) in paths.iter().zip(&outputs) {
        let stem = p.file_stem().map_or_else(|| "frame".into(), |s| s.to_string_lossy().into_owned());
        let name = format!("{stem}.{ext}");
        write_frame(&out.join(&name), f)?;
        names.push(name);
    }
    let manifest = OutputManifest { frames: names, config: echo(&s), checkpoint: ckpt_hash, inputs: hash_inputs(&paths)? };
    write_json(&out.join("manifest.json"), &manifest)?;
    let report = StreamReport::from(&report);
    write_report(&s.report, &report)?;
    print!("{}", report.render());
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn eval(s: EvalSettings) -> CliResult<()> {
    let (params, _) = load_checkpoint(&s.ckpt)?;
    let (data, _) = load_datasets(&s.pairs, "pairs")?;
    let mut videos = Vec::with_capacity(data.len());
    for d in &data {
        let (_, r) = run_stream(&d.blurry, Some(&d.sharp), &params, &mut InstantClock::default())?;
        videos.push(StreamReport::from(&r));
    }
    let summary = EvalSummary {
        mean_psnr: mean(&videos.iter().filter_map(|v| v.mean_psnr).collect::<Vec<_>>()),
        mean_input_psnr: mean(&videos.iter().filter_map(|v| v.input_psnr).collect::<Vec<_>>()),
        framewise_psnr: framewise_curve(&data, &params)?,
        videos,
    };
    write_report(&s.report, &summary)?;
    for v in &summary.videos {
        print!("{}", v.render());
        println!();
    }
    println!("mean psnr over {} videos: {:.3} dB (inputs {:.3} dB)", summary.videos.len(), summary.mean_psnr, summary.mean_input_psnr);
    Ok(())
}

pub fn parse_resolution(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("resolution `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.to_ascii_lowercase().split_once('x').ok_or_else(bad).map(|(a, b)| (a.to_string(), b.to_string()))?;
    let (w, h) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// Uniform noise frames, reproducible from `seed`.
pub fn random_frames(width: usize, height: usize, count: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let data = (0..3 * width * height).map(|_| rng.random::<f32>()).collect();
            Frame::new(width, height, data).expect("length matches")
        })
        .collect()
}

pub fn bench(s: BenchSettings) -> CliResult<()> {
    let (params, _) = load_checkpoint(&s.ckpt)?;
    let (w, h) = parse_resolution(&s.resolution)?;
    if s.frames == 0 {
        return Err(CliError::Usage("--frames must be positive".into()));
    }
    let frames = random_frames(w, h, s.frames, s.seed);
    let (_, report) = run_stream(&frames, None, &params, &mut InstantClock::default())?;
    let report = StreamReport::from(&report);
    write_report(&s.report, &report)?;
    print!("{}", report.render());
    Ok(())
}

pub fn ablate(s: AblateSettings) -> CliResult<()> {
    if s.ckpt.is_empty() {
        return Err(CliError::Usage("missing required --ckpt".into()));
    }
    let models = s
        .ckpt
        .iter()
        .map(|p| checkpoint::load(Path::new(p)).map(|(m, _)| m))
        .collect::<CliResult<Vec<_>>>()?;
    let (data, _) = load_datasets(&s.pairs, "pairs")?;
    let mut variants: Vec<Variant> = models.iter().map(|m| m.config.variant).collect();
    variants.sort();
    variants.dedup();
    let table = ablation_suite(&data, &models, &variants, &s.windows)?;
    write_report(&s.report, &AblationReport::from(&table))?;
    print!("{}", table.render());
    let _ = std::io::stdout().flush();
    Ok(())
}
