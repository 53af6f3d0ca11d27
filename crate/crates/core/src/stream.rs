//! Online inference: a session emits `L_n` once frame `n + m` has arrived,
//! plus PSNR scoring, per-step curves and the ablation grid.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::model::{self, init_state, ModelConfig, ModelParams, RecurrentState, Variant};
use crate::scalar::Scalar;
use crate::synth::Frame;
use crate::tensor::{Shape, Tensor};
use crate::train::PairedSequence;

/// PSNR reported when the MSE is below `1e-12`.
pub const PSNR_CAP: f64 = 120.0;

/// `10·log₁₀(1/MSE)` with peak 1, over every channel of every pixel.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    if a.dims() != b.dims() {
        let shape = |f: &Frame| Shape::nchw(1, 3, f.height(), f.width());
        return Err(Error::ShapeMismatch {
            op: "psnr",
            left: shape(a),
            right: shape(b),
        });
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / a.data().len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-12 {
        PSNR_CAP
    } else {
        -10.0 * libm::log10(mse)
    }
}

/// Mean of framewise PSNR over aligned frame lists.
pub fn mean_psnr(frames: &[Frame], references: &[Frame]) -> Result<f64> {
    if frames.len() != references.len() || frames.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "cannot score {} frames against {} references",
            frames.len(),
            references.len()
        )));
    }
    let mut total = 0.0;
    for (f, r) in frames.iter().zip(references) {
        total += psnr(f, r)?;
    }
    Ok(total / frames.len() as f64)
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&mut self) -> f64;
}

#[cfg(feature = "std")]
#[derive(Debug, Clone, Copy)]
pub struct InstantClock(std::time::Instant);

#[cfg(feature = "std")]
impl Default for InstantClock {
    fn default() -> Self {
        InstantClock(std::time::Instant::now())
    }
}

#[cfg(feature = "std")]
impl Clock for InstantClock {
    fn now(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// One video stream. Frames go in with [`push`](Self::push); once the
/// stream ends, [`flush`](Self::flush) drains the last `m` outputs using
/// the final frame as the look-ahead.
#[derive(Debug, Clone)]
pub struct StreamSession<'p, T> {
    params: &'p ModelParams<T>,
    state: Option<RecurrentState<T>>,
    // frames [first_held, received)
    held: VecDeque<Tensor<T>>,
    first_held: usize,
    received: usize,
    emitted: usize,
    dims: Option<(usize, usize)>,
}

impl<'p, T: Scalar> StreamSession<'p, T> {
    pub fn new(params: &'p ModelParams<T>) -> Self {
        StreamSession {
            params,
            state: None,
            held: VecDeque::new(),
            first_held: 0,
            received: 0,
            emitted: 0,
            dims: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Frames of look-ahead before an output is produced.
    pub fn latency(&self) -> usize {
        self.params.config.window_m
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Feed the next frame; returns `L_{received − 1 − m}` when available.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<Frame>> {
        match self.dims {
            None => {
                self.state = Some(init_state(&self.params.config, frame.width(), frame.height(), 1)?);
                self.dims = Some(frame.dims());
            }
            Some(d) if d != frame.dims() => {
                return Err(Error::InvalidConfig(format!(
                    "frame size {}x{} differs from stream size {}x{}",
                    frame.width(),
                    frame.height(),
                    d.0,
                    d.1
                )));
            }
            Some(_) => {}
        }
        self.held.push_back(frame.to_tensor());
        self.received += 1;
        if self.received > self.emitted + self.latency() {
            self.emit(usize::MAX).map(Some)
        } else {
            Ok(None)
        }
    }

    /// After the last frame: the next pending output, if any.
    pub fn flush(&mut self) -> Result<Option<Frame>> {
        if self.emitted >= self.received {
            return Ok(None);
        }
        self.emit(self.received).map(Some)
    }

    pub fn flush_all(&mut self) -> Result<Vec<Frame>> {
        let mut out = Vec::new();
        while let Some(f) = self.flush()? {
            out.push(f);
        }
        Ok(out)
    }

    fn emit(&mut self, len: usize) -> Result<Frame> {
        let m = self.latency();
        let n = self.emitted;
        let last = self.received - 1;
        let window: Vec<Tensor<T>> = model::window_indices(n, m, len)
            .into_iter()
            .map(|i| self.held[i.min(last) - self.first_held].clone())
            .collect();
        let state = self.state.as_ref().expect("state set on first push");
        let (latent, next) = model::step(self.params, &window, state)?;
        self.state = Some(next);
        self.emitted += 1;
        // frames before n + 1 − m are never read again
        while self.first_held + m < self.emitted && self.held.len() > 1 {
            self.held.pop_front();
            self.first_held += 1;
        }
        Frame::from_tensor(&latent, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: Variant,
    pub config: ModelConfig,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Output delay in frames.
    pub latency_frames: usize,
    /// Framewise PSNR against ground truth, when given.
    pub psnr: Vec<f64>,
    pub mean_psnr: Option<f64>,
    /// PSNR of the blurry inputs against the same ground truth.
    pub input_psnr: Option<f64>,
    /// Compute seconds attributed to each output frame.
    pub frame_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub mean_frame_seconds: f64,
    pub fps: f64,
}

/// Deblur `frames` in order through one session. Time spent on pushes that
/// emit nothing is charged to the next output.
pub fn run_stream<T: Scalar>(
    frames: &[Frame],
    sharp: Option<&[Frame]>,
    params: &ModelParams<T>,
    clock: &mut dyn Clock,
) -> Result<(Vec<Frame>, EvalReport)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::DatasetTooSmall("empty input stream".into()))?;
    if let Some(s) = sharp {
        if s.len() != frames.len() {
            return Err(Error::InvalidConfig(format!(
                "{} input frames but {} ground-truth frames",
                frames.len(),
                s.len()
            )));
        }
    }
    let mut session = StreamSession::new(params);
    let mut outputs = Vec::with_capacity(frames.len());
    let mut frame_seconds = Vec::with_capacity(frames.len());
    let mut pending = 0.0;
    let mut record = |out: Option<Frame>, secs: f64, outputs: &mut Vec<Frame>| {
        pending += secs;
        if let Some(f) = out {
            outputs.push(f);
            frame_seconds.push(pending);
            pending = 0.0;
        }
    };
    for f in frames {
        let t0 = clock.now();
        let out = session.push(f)?;
        let dt = clock.now() - t0;
        record(out, dt, &mut outputs);
    }
    loop {
        let t0 = clock.now();
        let out = session.flush()?;
        let dt = clock.now() - t0;
        let done = out.is_none();
        record(out, dt, &mut outputs);
        if done {
            break;
        }
    }

    let (psnr, mean, input) = match sharp {
        Some(s) => {
            let per = outputs.iter().zip(s).map(|(o, g)| psnr(o, g)).collect::<Result<Vec<_>>>()?;
            let mean = per.iter().sum::<f64>() / per.len() as f64;
            (per, Some(mean), Some(mean_psnr(frames, s)?))
        }
        None => (Vec::new(), None, None),
    };
    let total: f64 = frame_seconds.iter().sum();
    let mean_frame = total / frame_seconds.len() as f64;
    let fps = if total > 0.0 { frame_seconds.len() as f64 / total } else { f64::INFINITY };
    let report = EvalReport {
        variant: params.config.variant,
        config: params.config.clone(),
        width: first.width(),
        height: first.height(),
        frames: outputs.len(),
        latency_frames: params.config.window_m,
        psnr,
        mean_psnr: mean,
        input_psnr: input,
        frame_seconds,
        total_seconds: total,
        mean_frame_seconds: mean_frame,
        fps,
    };
    Ok((outputs, report))
}

/// Deblurred outputs of every frame of `blurry`, without timing.
pub fn deblur_sequence<T: Scalar>(blurry: &[Frame], params: &ModelParams<T>) -> Result<Vec<Frame>> {
    let mut session = StreamSession::new(params);
    let mut out = Vec::with_capacity(blurry.len());
    for f in blurry {
        out.extend(session.push(f)?);
    }
    out.extend(session.flush_all()?);
    Ok(out)
}

/// PSNR at each stream step, averaged over the sequences long enough to
/// reach it.
pub fn framewise_curve<T: Scalar>(videos: &[PairedSequence], params: &ModelParams<T>) -> Result<Vec<f64>> {
    let longest = videos.iter().map(PairedSequence::len).max().unwrap_or(0);
    let mut sums = alloc::vec![0.0; longest];
    let mut counts = alloc::vec![0usize; longest];
    for v in videos {
        let out = deblur_sequence(&v.blurry, params)?;
        for (n, (o, g)) in out.iter().zip(&v.sharp).enumerate() {
            sums[n] += psnr(o, g)?;
            counts[n] += 1;
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

/// Mean PSNR of all deblurred frames over all sequences.
pub fn dataset_psnr<T: Scalar>(videos: &[PairedSequence], params: &ModelParams<T>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in videos {
        let out = deblur_sequence(&v.blurry, params)?;
        for (o, g) in out.iter().zip(&v.sharp) {
            total += psnr(o, g)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DatasetTooSmall("no frames to score".into()));
    }
    Ok(total / count as f64)
}

/// Window sizes of the ablation grid.
pub const ABLATION_WINDOWS: [usize; 3] = [3, 5, 7];

/// Mean PSNR per (variant, window size).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub variants: Vec<Variant>,
    pub windows: Vec<usize>,
    /// `values[i][j]` for `variants[i]`, `windows[j]`.
    pub values: Vec<Vec<f64>>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant, window: usize) -> Option<f64> {
        let i = self.variants.iter().position(|&v| v == variant)?;
        let j = self.windows.iter().position(|&w| w == window)?;
        Some(self.values[i][j])
    }

    /// Plain-text grid with one row per variant.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "variant");
        for w in &self.windows {
            let _ = write!(s, "{:>10}", format!("{w} in"));
        }
        s.push('\n');
        for (v, row) in self.variants.iter().zip(&self.values) {
            let _ = write!(s, "{:<12}", v.name());
            for x in row {
                let _ = write!(s, "{x:>10.3}");
            }
            s.push('\n');
        }
        s
    }
}

/// Score a trained model for every (variant, window) cell on `dataset`.
/// `models` may hold extra entries; each grid cell must be covered by one
/// whose config matches.
pub fn ablation_suite<T: Scalar>(
    dataset: &[PairedSequence],
    models: &[ModelParams<T>],
    variants: &[Variant],
    windows: &[usize],
) -> Result<AblationTable> {
    let values = variants
        .iter()
        .map(|&variant| {
            windows
                .iter()
                .map(|&window| {
                    let params = models
                        .iter()
                        .find(|p| p.config.variant == variant && p.config.input_frames() == window)
                        .ok_or_else(|| Error::MissingCell(format!("{variant} with {window} inputs")))?;
                    dataset_psnr(dataset, params)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        variants: variants.to_vec(),
        windows: windows.to_vec(),
        values,
    })
}
