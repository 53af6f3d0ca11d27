//! Blurry/sharp pair synthesis from high-speed footage.
//!
//! A blurry frame is the mean of `tau` consecutive high-speed frames; its
//! sharp reference is the centre frame of that window. Consecutive pairs
//! start `interval` high-speed frames apart, so the synthesized video runs
//! at `fps / interval`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Shutter lengths drawn by [`sample_config`].
pub const TAU_CHOICES: [usize; 5] = [7, 9, 11, 13, 15];

/// Colour image stored channel-planar (`3 × height × width`), values in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl core::fmt::Debug for Frame {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new([Self::CHANNELS, height, width]);
        if width == 0 || height == 0 || data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Frame {
            width,
            height,
            data: vec![value; Self::CHANNELS * width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(Self::CHANNELS * width * height);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn scaled(&self, factor: f32) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn clamped(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// `width×height` window with its top-left corner at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} frame",
                self.width,
                self.height
            )));
        }
        Ok(Frame::from_fn(width, height, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    /// `1 × 3 × height × width` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            Shape::nchw(1, Self::CHANNELS, self.height, self.width),
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("frame data matches its shape")
    }

    /// Inverse of [`Frame::to_tensor`] for batch element `index`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Frame> {
        let (n, c, h, w) = t.shape().as_nchw("frame")?;
        if c != Self::CHANNELS || index >= n {
            return Err(Error::InvalidShape {
                op: "frame",
                shape: t.shape().clone(),
                reason: alloc::format!("expected 3 channels and batch index < {n}"),
            });
        }
        let plane = c * h * w;
        let data = t.data()[index * plane..(index + 1) * plane]
            .iter()
            .map(|v| v.to_f32().unwrap())
            .collect();
        Frame::new(w, h, data)
    }

    /// Area-average resampling: each output pixel is the mean of the input
    /// area it covers, with partial pixels weighted by overlap.
    pub fn resample_area(&self, out_width: usize, out_height: usize) -> Frame {
        let wx = area_weights(self.width, out_width);
        let wy = area_weights(self.height, out_height);
        let mut out = Frame::filled(out_width, out_height, 0.0);
        for c in 0..Self::CHANNELS {
            for (oy, ys) in wy.iter().enumerate() {
                for (ox, xs) in wx.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for &(iy, fy) in ys {
                        for &(ix, fx) in xs {
                            acc += fy * fx * self.get(c, iy, ix) as f64;
                        }
                    }
                    out.set(c, oy, ox, acc as f32);
                }
            }
        }
        out
    }

    /// Area-average downscale by `ratio` (e.g. 0.75 takes 1280×720 to 960×540).
    pub fn downsample(&self, ratio: f64) -> Result<Frame> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "downsample ratio must lie in (0, 1], got {ratio}"
            )));
        }
        let w = libm::round(self.width as f64 * ratio).max(1.0) as usize;
        let h = libm::round(self.height as f64 * ratio).max(1.0) as usize;
        Ok(self.resample_area(w, h))
    }
}

/// For each output cell, the input indices it overlaps and their
/// normalised overlap weights.
fn area_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(input);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)) / scale;
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Ground-truth motion of a generated sequence, per high-speed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Translation { dx: f64, dy: f64 },
    Rotation { radians_per_frame: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
    motion: Option<Motion>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().find(|f| f.dims() != first.dims()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "frame dimensions differ: {}x{} vs {}x{}",
                    first.width,
                    first.height,
                    bad.width,
                    bad.height
                )));
            }
        }
        Ok(FrameSequence {
            frames,
            fps,
            motion: None,
        })
    }

    pub fn with_motion(mut self, motion: Motion) -> Self {
        self.motion = Some(motion);
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn motion(&self) -> Option<Motion> {
        self.motion
    }

    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame) -> Result<FrameSequence> {
        let mut seq = FrameSequence::new(self.frames.iter().map(f).collect(), self.fps)?;
        seq.motion = self.motion;
        Ok(seq)
    }
}

/// Shutter length `tau` (frames averaged) and stride `interval` between
/// synthesized frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SynthConfig {
    tau: usize,
    interval: usize,
}

impl SynthConfig {
    pub fn new(tau: usize, interval: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::InvalidConfig("tau must be at least 1".into()));
        }
        if interval < tau {
            return Err(Error::InvalidConfig(alloc::format!(
                "interval {interval} is shorter than the shutter tau={tau}"
            )));
        }
        Ok(SynthConfig { tau, interval })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    /// Whether `interval < 2·tau`, the duty-cycle range used for random
    /// dataset generation.
    pub fn in_sampling_range(&self) -> bool {
        self.interval < 2 * self.tau
    }

    /// Offset of the sharp reference inside the averaged window.
    pub fn center_offset(&self) -> usize {
        self.tau / 2
    }
}

/// Draw `tau` uniformly from [`TAU_CHOICES`] and `interval` uniformly from
/// `tau..2·tau`.
pub fn sample_config<R: Rng + ?Sized>(rng: &mut R) -> SynthConfig {
    let tau = TAU_CHOICES[rng.random_range(0..TAU_CHOICES.len())];
    let interval = rng.random_range(tau..2 * tau);
    SynthConfig { tau, interval }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurPair {
    pub blurry: Frame,
    pub sharp: Frame,
    pub index: usize,
}

pub fn synthesize_pair(seq: &FrameSequence, n: usize, cfg: SynthConfig) -> Result<BlurPair> {
    let start = n * cfg.interval;
    let end = start + cfg.tau;
    if end > seq.len() {
        return Err(Error::WindowOutOfRange {
            start,
            end,
            len: seq.len(),
        });
    }
    let window = &seq.frames[start..end];
    let (w, h) = window[0].dims();
    let mut acc = vec![0.0f64; window[0].data.len()];
    for f in window {
        for (a, &v) in acc.iter_mut().zip(&f.data) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / cfg.tau as f64;
    let blurry = Frame::new(w, h, acc.into_iter().map(|a| (a * inv) as f32).collect())?;
    Ok(BlurPair {
        blurry,
        sharp: window[cfg.center_offset()].clone(),
        index: n,
    })
}

/// Number of complete shutter windows in a sequence of `len` frames.
pub fn pair_count(len: usize, cfg: SynthConfig) -> usize {
    if len < cfg.tau {
        0
    } else {
        (len - cfg.tau) / cfg.interval + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub pairs: Vec<BlurPair>,
    pub fps: f64,
    pub config: SynthConfig,
}

impl SynthVideo {
    pub fn blurry(&self) -> Vec<Frame> {
        self.pairs.iter().map(|p| p.blurry.clone()).collect()
    }

    pub fn sharp(&self) -> Vec<Frame> {
        self.pairs.iter().map(|p| p.sharp.clone()).collect()
    }
}

pub fn synthesize_video(seq: &FrameSequence, cfg: SynthConfig) -> Result<SynthVideo> {
    let pairs = (0..pair_count(seq.len(), cfg))
        .map(|n| synthesize_pair(seq, n, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthVideo {
        pairs,
        fps: seq.fps / cfg.interval as f64,
        config: cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// A static block texture translating by `(dx, dy)` pixels per frame.
    ShiftingTexture { dx: f64, dy: f64 },
    /// A solid square of side `size` moving over a static low-contrast texture.
    MovingSquare { dx: f64, dy: f64, size: f64 },
    /// An angular colour pattern rotating about the frame centre.
    RotatingPattern { radians_per_frame: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    /// Side length of the coarse texture blocks, in pixels.
    pub block: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            width: 64,
            height: 64,
            frames: 32,
            fps: 240.0,
            block: 6,
        }
    }
}

/// Periodic texture of random colour blocks at two scales, integrated
/// exactly over unit pixel areas so sub-pixel shifts stay anti-aliased.
struct BlockTexture {
    layers: Vec<TextureLayer>,
}

struct TextureLayer {
    cell: usize,
    cols: usize,
    rows: usize,
    weight: f64,
    colors: Vec<[f64; 3]>,
}

impl TextureLayer {
    fn random<R: Rng + ?Sized>(rng: &mut R, cell: usize, cols: usize, rows: usize, weight: f64) -> Self {
        let colors = (0..cols * rows)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        TextureLayer {
            cell,
            cols,
            rows,
            weight,
            colors,
        }
    }

    /// Overlaps of `[lo, lo+1)` with the cells along one axis.
    fn overlaps(cell: usize, count: usize, lo: f64) -> impl Iterator<Item = (usize, f64)> {
        let cell_f = cell as f64;
        let first = libm::floor(lo / cell_f) as i64;
        let last = libm::floor((lo + 1.0) / cell_f) as i64;
        (first..=last).filter_map(move |k| {
            let a = lo.max(k as f64 * cell_f);
            let b = (lo + 1.0).min((k + 1) as f64 * cell_f);
            let idx = k.rem_euclid(count as i64) as usize;
            (b > a).then_some((idx, b - a))
        })
    }

    fn pixel(&self, c: usize, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        for (iy, fy) in Self::overlaps(self.cell, self.rows, y) {
            for (ix, fx) in Self::overlaps(self.cell, self.cols, x) {
                acc += fx * fy * self.colors[iy * self.cols + ix][c];
            }
        }
        acc * self.weight
    }
}

impl BlockTexture {
    fn random<R: Rng + ?Sized>(rng: &mut R, block: usize, span_x: usize, span_y: usize) -> Self {
        let fine = (block / 2).max(1);
        let layer = |rng: &mut R, cell: usize, weight: f64| {
            TextureLayer::random(rng, cell, span_x.div_ceil(cell) + 1, span_y.div_ceil(cell) + 1, weight)
        };
        let coarse = layer(rng, block.max(1), 0.75);
        let fine = layer(rng, fine, 0.25);
        BlockTexture {
            layers: vec![coarse, fine],
        }
    }

    /// Mean texture value over the unit pixel whose top-left corner is `(x, y)`.
    fn pixel(&self, c: usize, x: f64, y: f64) -> f64 {
        self.layers.iter().map(|l| l.pixel(c, x, y)).sum()
    }
}

fn check_speed(speed: f64) -> Result<()> {
    if speed > 1.0 + 1e-12 {
        return Err(Error::InvalidConfig(alloc::format!(
            "motion of {speed:.3} px per high-speed frame exceeds 1 px"
        )));
    }
    Ok(())
}

/// Deterministic synthetic high-speed footage (same `rng` state, same frames).
/// Motion never exceeds one pixel per frame.
pub fn generate_synthetic<R: Rng + ?Sized>(
    kind: SyntheticKind,
    params: GeneratorParams,
    rng: &mut R,
) -> Result<FrameSequence> {
    let GeneratorParams {
        width,
        height,
        frames,
        fps,
        block,
    } = params;
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig("frame extents must be positive".into()));
    }
    let out = match kind {
        SyntheticKind::ShiftingTexture { dx, dy } => {
            check_speed(libm::hypot(dx, dy))?;
            let span_x = width + libm::ceil(dx.abs() * frames as f64) as usize + 1;
            let span_y = height + libm::ceil(dy.abs() * frames as f64) as usize + 1;
            let tex = BlockTexture::random(rng, block, span_x, span_y);
            let frames = (0..frames)
                .map(|t| {
                    let (ox, oy) = (dx * t as f64, dy * t as f64);
                    Frame::from_fn(width, height, |c, y, x| {
                        tex.pixel(c, x as f64 - ox, y as f64 - oy) as f32
                    })
                })
                .collect();
            FrameSequence::new(frames, fps)?.with_motion(Motion::Translation { dx, dy })
        }
        SyntheticKind::MovingSquare { dx, dy, size } => {
            check_speed(libm::hypot(dx, dy))?;
            let tex = BlockTexture::random(rng, block, width, height);
            let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let x0 = rng.random::<f64>() * (width as f64 - size).max(0.0);
            let y0 = rng.random::<f64>() * (height as f64 - size).max(0.0);
            let frames = (0..frames)
                .map(|t| {
                    let sx = x0 + dx * t as f64;
                    let sy = y0 + dy * t as f64;
                    Frame::from_fn(width, height, |c, y, x| {
                        let cover = |p: usize, lo: f64| {
                            let p = p as f64;
                            ((p + 1.0).min(lo + size) - p.max(lo)).max(0.0)
                        };
                        let a = cover(x, sx) * cover(y, sy);
                        let bg = 0.5 + 0.3 * (tex.pixel(c, x as f64, y as f64) - 0.5);
                        (a * color[c] + (1.0 - a) * bg) as f32
                    })
                })
                .collect();
            FrameSequence::new(frames, fps)?.with_motion(Motion::Translation { dx, dy })
        }
        SyntheticKind::RotatingPattern { radians_per_frame } => {
            let cx = width as f64 / 2.0;
            let cy = height as f64 / 2.0;
            check_speed(radians_per_frame.abs() * libm::hypot(cx, cy))?;
            let spokes = rng.random_range(3..8) as f64;
            let phase = [0.0, rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
            let rings = 4.0 + rng.random::<f64>() * 8.0;
            let frames = (0..frames)
                .map(|t| {
                    let rot = radians_per_frame * t as f64;
                    Frame::from_fn(width, height, |c, y, x| {
                        let px = x as f64 + 0.5 - cx;
                        let py = y as f64 + 0.5 - cy;
                        let theta = libm::atan2(py, px) - rot;
                        let r = libm::hypot(px, py);
                        let angular = libm::sin(spokes * theta + phase[c]);
                        let radial = libm::cos(r / rings);
                        (0.5 + 0.35 * angular * (0.6 + 0.4 * radial)) as f32
                    })
                })
                .collect();
            FrameSequence::new(frames, fps)?.with_motion(Motion::Rotation { radians_per_frame })
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_seq(values: &[f32]) -> FrameSequence {
        let frames = values.iter().map(|&v| Frame::filled(4, 2, v)).collect();
        FrameSequence::new(frames, 240.0).unwrap()
    }

    #[test]
    fn mean_of_three_constant_frames() {
        let seq = constant_seq(&[0.2, 0.4, 0.6]);
        let pair = synthesize_pair(&seq, 0, SynthConfig::new(3, 3).unwrap()).unwrap();
        for &v in pair.blurry.data() {
            assert!((v - 0.4).abs() < 1e-7);
        }
        assert_eq!(pair.sharp, seq.frames()[1]);
    }

    #[test]
    fn single_frame_shutter_is_identity() {
        let seq = constant_seq(&[0.1, 0.7, 0.3]);
        let cfg = SynthConfig::new(1, 1).unwrap();
        let video = synthesize_video(&seq, cfg).unwrap();
        assert_eq!(video.pairs.len(), 3);
        for (p, f) in video.pairs.iter().zip(seq.frames()) {
            assert_eq!(&p.blurry, f);
            assert_eq!(&p.sharp, f);
        }
    }

    #[test]
    fn window_out_of_range_is_rejected() {
        let seq = constant_seq(&[0.0; 5]);
        let cfg = SynthConfig::new(3, 3).unwrap();
        assert!(synthesize_pair(&seq, 1, cfg).is_err());
        assert!(matches!(
            synthesize_pair(&seq, 1, cfg),
            Err(Error::WindowOutOfRange { start: 3, end: 6, len: 5 })
        ));
    }

    #[test]
    fn pair_counts_and_frame_rate() {
        let seq = constant_seq(&[0.5; 30]);
        let video = synthesize_video(&seq, SynthConfig::new(7, 14).unwrap()).unwrap();
        assert_eq!(video.pairs.len(), 2);
        let seq = constant_seq(&[0.5; 20]);
        let video = synthesize_video(&seq, SynthConfig::new(7, 15).unwrap()).unwrap();
        assert_eq!(video.fps, 16.0);
        let short = constant_seq(&[0.5; 4]);
        assert!(synthesize_video(&short, SynthConfig::new(7, 7).unwrap())
            .unwrap()
            .pairs
            .is_empty());
    }

    #[test]
    fn config_requires_interval_at_least_tau() {
        assert!(SynthConfig::new(7, 6).is_err());
        assert!(SynthConfig::new(0, 1).is_err());
        assert!(SynthConfig::new(7, 13).unwrap().in_sampling_range());
        assert!(!SynthConfig::new(7, 14).unwrap().in_sampling_range());
    }

    #[test]
    fn sampled_configs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let c = sample_config(&mut rng);
            assert!(TAU_CHOICES.contains(&c.tau()));
            assert!(c.interval() >= c.tau() && c.interval() < 2 * c.tau());
        }
    }

    #[test]
    fn tau_seven_interval_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = [false; 7];
        for _ in 0..20_000 {
            let c = sample_config(&mut rng);
            if c.tau() == 7 {
                seen[c.interval() - 7] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_velocity_texture_is_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GeneratorParams {
            width: 16,
            height: 12,
            frames: 9,
            ..Default::default()
        };
        let seq = generate_synthetic(SyntheticKind::ShiftingTexture { dx: 0.0, dy: 0.0 }, params, &mut rng)
            .unwrap();
        assert!(seq.frames().windows(2).all(|w| w[0] == w[1]));
        let pair = synthesize_pair(&seq, 0, SynthConfig::new(7, 7).unwrap()).unwrap();
        assert!(pair.blurry.data().iter().zip(pair.sharp.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn generators_reject_fast_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GeneratorParams::default();
        assert!(generate_synthetic(SyntheticKind::ShiftingTexture { dx: 1.5, dy: 0.0 }, p, &mut rng).is_err());
        assert!(generate_synthetic(SyntheticKind::RotatingPattern { radians_per_frame: 0.5 }, p, &mut rng).is_err());
    }

    #[test]
    fn generators_are_deterministic_and_in_range() {
        let kinds = [
            SyntheticKind::ShiftingTexture { dx: 0.7, dy: -0.3 },
            SyntheticKind::MovingSquare { dx: 1.0, dy: 0.0, size: 10.5 },
            SyntheticKind::RotatingPattern { radians_per_frame: 0.01 },
        ];
        let params = GeneratorParams {
            width: 24,
            height: 20,
            frames: 6,
            ..Default::default()
        };
        for kind in kinds {
            let a = generate_synthetic(kind, params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let b = generate_synthetic(kind, params, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
            assert!(a.motion().is_some());
            for f in a.frames() {
                assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn area_downsample_of_constant_and_blocks() {
        let f = Frame::filled(1280 / 40, 720 / 40, 0.3);
        let d = f.downsample(0.75).unwrap();
        assert_eq!(d.dims(), (24, 14));
        assert!(d.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
        // 4 → 3: output 0 covers input [0, 4/3)
        let row = Frame::from_fn(4, 1, |_, _, x| x as f32);
        let r = row.resample_area(3, 1);
        assert!((r.get(0, 0, 0) - (0.0 * 0.75 + 1.0 * 0.25)).abs() < 1e-6);
        assert!((r.get(0, 0, 1) - 1.5).abs() < 1e-6);
        assert!(f.downsample(0.0).is_err());
    }

    #[test]
    fn crop_bounds() {
        let f = Frame::from_fn(8, 6, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let c = f.crop(2, 1, 3, 4).unwrap();
        assert_eq!(c.get(1, 0, 0), 112.0);
        assert!(f.crop(6, 0, 3, 1).is_err());
    }

    #[test]
    fn frame_tensor_round_trip() {
        let f = Frame::from_fn(5, 4, |c, y, x| (c + y + x) as f32 / 10.0);
        let t = f.to_tensor::<f32>();
        assert_eq!(t.shape().dims(), &[1, 3, 4, 5]);
        assert_eq!(Frame::from_tensor(&t, 0).unwrap(), f);
    }
}
