//! Command-line surface. Every subcommand accepts `--config <file.json>`, a
//! flat JSON object whose keys match the long flag names (with `_` for `-`);
//! flags given on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::commands;
use crate::config::resolve;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "vdeblur", version, about = "Online video deblurring: synthesis, training, streaming inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic high-speed footage (frames plus a manifest).
    Generate(GenerateFlags),
    /// Average high-speed frames into blurry/sharp pairs.
    Synth(SynthFlags),
    /// Train a model on synthesized pairs and write a checkpoint.
    Train(TrainFlags),
    /// Deblur a frame directory through one online session.
    Deblur(DeblurFlags),
    /// Score a checkpoint against ground-truth pairs.
    Eval(EvalFlags),
    /// Time per-frame inference on random frames.
    Bench(BenchFlags),
    /// PSNR table of checkpoints by variant and number of input frames.
    Ablate(AblateFlags),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// shifting-texture, moving-square or rotating-pattern.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Motion in pixels per frame (at the frame border for rotation), at most 1.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Direction of translation in degrees; drawn from the seed when absent.
    #[arg(long)]
    pub angle: Option<f64>,
    /// Texture block size in pixels.
    #[arg(long)]
    pub block: Option<usize>,
    /// Square side in pixels (moving-square only).
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub speed: f64,
    pub angle: Option<f64>,
    pub block: usize,
    pub size: f64,
    pub seed: u64,
    pub out: Option<String>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            kind: "shifting-texture".into(),
            width: 64,
            height: 64,
            frames: 91,
            fps: 240.0,
            speed: 0.8,
            angle: None,
            block: 6,
            size: 16.0,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory of high-speed frames, or a glob pattern.
    #[arg(long)]
    pub input: Option<String>,
    /// Frames averaged per blurry frame.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Stride T between synthesized frames; needs tau <= T < 2 tau.
    #[arg(long)]
    pub interval: Option<usize>,
    /// Draw tau and T from the training distribution using --seed.
    #[arg(long)]
    pub random_config: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frame rate of the input footage.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Area-resample the input by this ratio first (e.g. 0.75).
    #[arg(long)]
    pub downsample: Option<f64>,
    /// Output image format: png or ppm.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub input: Option<String>,
    pub tau: usize,
    pub interval: usize,
    pub random_config: bool,
    pub seed: u64,
    pub fps: f64,
    pub downsample: Option<f64>,
    pub format: String,
    pub out: Option<String>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            input: None,
            tau: 7,
            interval: 7,
            random_config: false,
            seed: 0,
            fps: 240.0,
            downsample: None,
            format: "png".into(),
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Synth manifest; repeat for several videos.
    #[arg(long)]
    pub data: Vec<String>,
    /// cnn, strcnn or strcnn-dtb.
    #[arg(long)]
    pub variant: Option<String>,
    /// Neighbouring frames on each side of the centre frame.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ckpt_out: Option<String>,
    /// Multiplier on the default widths (64 trunk, 32 feature channels).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[arg(long)]
    pub decoder_blocks: Option<usize>,
    /// Initial Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight decay on convolution weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iterations per 0.96 learning-rate decay step.
    #[arg(long)]
    pub decay_every: Option<u64>,
    /// Square crop side in pixels.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Frames per training sequence.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// CSV training log; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub data: Vec<String>,
    pub variant: String,
    pub m: usize,
    pub iters: u64,
    pub batch: usize,
    pub seed: u64,
    pub ckpt_out: Option<String>,
    pub scale: f64,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub lr: f64,
    pub lambda: f64,
    pub decay_every: u64,
    pub crop: usize,
    pub seq_len: usize,
    pub log: Option<String>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            data: Vec::new(),
            variant: "strcnn-dtb".into(),
            m: 2,
            iters: 1000,
            batch: 8,
            seed: 0,
            ckpt_out: None,
            scale: 1.0,
            encoder_blocks: 5,
            decoder_blocks: 4,
            lr: 1e-4,
            lambda: 1e-5,
            decay_every: 1000,
            crop: 128,
            seq_len: 13,
            log: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DeblurFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    /// Directory of blurry frames, or a glob pattern.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Write a JSON timing report here.
    #[arg(long)]
    pub report: Option<String>,
    /// Output image format: png or ppm.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurSettings {
    pub ckpt: Option<String>,
    pub input: Option<String>,
    pub out: Option<String>,
    pub report: Option<String>,
    pub format: String,
}

impl Default for DeblurSettings {
    fn default() -> Self {
        DeblurSettings { ckpt: None, input: None, out: None, report: None, format: "png".into() }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    /// Synth manifest of blurry/sharp pairs; repeat for several videos.
    #[arg(long)]
    pub pairs: Vec<String>,
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ckpt: Option<String>,
    pub pairs: Vec<String>,
    pub report: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<String>,
    /// WIDTHxHEIGHT, both even.
    #[arg(long)]
    pub resolution: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub ckpt: Option<String>,
    pub resolution: String,
    pub frames: usize,
    pub seed: u64,
    pub report: Option<String>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { ckpt: None, resolution: "320x240".into(), frames: 100, seed: 0, report: None }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AblateFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint for one table cell; repeat for every cell.
    #[arg(long)]
    pub ckpt: Vec<String>,
    /// Synth manifest of blurry/sharp pairs; repeat for several videos.
    #[arg(long)]
    pub pairs: Vec<String>,
    /// Numbers of input frames (2m+1) forming the columns.
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub ckpt: Vec<String>,
    pub pairs: Vec<String>,
    pub windows: Vec<usize>,
    pub report: Option<String>,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            ckpt: Vec::new(),
            pairs: Vec::new(),
            windows: vdeblur_core::stream::ABLATION_WINDOWS.to_vec(),
            report: None,
        }
    }
}

/// Parse `argv`, run the subcommand and return the process exit status.
/// Help and version requests print and return 0.
pub fn parse_and_dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(f) => commands::generate(resolve(f.config.as_deref(), &f)?),
        Command::Synth(f) => commands::synth(resolve(f.config.as_deref(), &f)?),
        Command::Train(f) => commands::train(resolve(f.config.as_deref(), &f)?),
        Command::Deblur(f) => commands::deblur(resolve(f.config.as_deref(), &f)?),
        Command::Eval(f) => commands::eval(resolve(f.config.as_deref(), &f)?),
        Command::Bench(f) => commands::bench(resolve(f.config.as_deref(), &f)?),
        Command::Ablate(f) => commands::ablate(resolve(f.config.as_deref(), &f)?),
    }
}

pub(crate) fn required<'a>(value: &'a Option<String>, flag: &str) -> CliResult<&'a str> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}
