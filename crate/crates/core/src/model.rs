//! Encoder → temporal blending → decoder, stepped once per output frame.
//!
//! Three variants share one parameter layout:
//!
//! * [`Variant::Cnn`] sees only the current window of `2m+1` blurry frames;
//!   its recurrent inputs are replaced by zeros.
//! * [`Variant::Strcnn`] also consumes the decoder feature map `F` from the
//!   previous step, so each frame passes through the network repeatedly.
//! * [`Variant::StrcnnDtb`] additionally blends the encoder output with the
//!   previous blended map using per-element weights generated from both
//!   (one extra 5×5 convolution and a scalar bias `beta`).
//!
//! Feature maps run at half the frame resolution. The image head upsamples
//! by nearest neighbour and convolves down to three channels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Cnn,
    Strcnn,
    StrcnnDtb,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cnn, Variant::Strcnn, Variant::StrcnnDtb];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::Strcnn => "strcnn",
            Variant::StrcnnDtb => "strcnn-dtb",
        }
    }

    pub fn uses_features(self) -> bool {
        !matches!(self, Variant::Cnn)
    }

    pub fn uses_blending(self) -> bool {
        matches!(self, Variant::StrcnnDtb)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cnn" => Ok(Variant::Cnn),
            "strcnn" => Ok(Variant::Strcnn),
            "strcnn-dtb" | "strcnn+dtb" => Ok(Variant::StrcnnDtb),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant `{other}` (expected cnn, strcnn or strcnn-dtb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frames on each side of the centre frame; the network sees `2m+1`.
    pub window_m: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    /// Width of the residual trunk.
    pub channels: usize,
    /// Width of the carried feature map `F` and of the filtered input.
    pub feature_channels: usize,
    pub input_kernel: usize,
    pub blend_kernel: usize,
    /// Multiplier applied to the default widths by [`ModelConfig::scaled`].
    pub scale: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant, window_m: usize) -> Self {
        ModelConfig {
            variant,
            window_m,
            encoder_blocks: 5,
            decoder_blocks: 4,
            channels: 64,
            feature_channels: 32,
            input_kernel: 5,
            blend_kernel: 5,
            scale: 1.0,
        }
    }

    /// Multiply both default widths (64 and 32) by `scale`, at least one channel each.
    pub fn scaled(mut self, scale: f64) -> Self {
        let width = |base: f64| libm::round(base * scale).max(1.0) as usize;
        self.channels = width(64.0);
        self.feature_channels = width(32.0);
        self.scale = scale;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn input_frames(&self) -> usize {
        2 * self.window_m + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return fail("encoder and decoder need at least one residual block".into());
        }
        if self.feature_channels == 0 || self.channels < self.feature_channels {
            return fail(format!(
                "need channels ({}) >= feature_channels ({}) >= 1",
                self.channels, self.feature_channels
            ));
        }
        if self.input_kernel < 3 || self.input_kernel.is_multiple_of(2) || self.blend_kernel.is_multiple_of(2) {
            return fail("kernel sizes must be odd (input kernel at least 3)".into());
        }
        Ok(())
    }

    fn specs(&self) -> Result<LayerSpecs> {
        self.validate()?;
        let c = self.channels;
        let f = self.feature_channels;
        Ok(LayerSpecs {
            input: ConvSpec::halving(f, 3 * self.input_frames(), self.input_kernel)?,
            fusion: ConvSpec::same(c, 2 * f, 3)?,
            block: ConvSpec::same(c, c, 3)?,
            blend: ConvSpec::same(c, 2 * c, self.blend_kernel)?,
            feature_head: ConvSpec::same(f, c, 3)?,
            image_head: ConvSpec::same(3, c, 3)?,
        })
    }
}

struct LayerSpecs {
    input: ConvSpec,
    fusion: ConvSpec,
    block: ConvSpec,
    blend: ConvSpec,
    feature_head: ConvSpec,
    image_head: ConvSpec,
}

/// What a parameter is; weight decay applies to convolution weights only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<P> {
    pub spec: ConvSpec,
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<P> {
    pub first: Conv<P>,
    pub second: Conv<P>,
}

/// Blending cell: one convolution over `concat(previous, current)` and the
/// scalar `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtb<P> {
    pub conv: Conv<P>,
    pub beta: P,
}

/// The full layer layout, generic over what sits at each parameter slot:
/// tensors ([`ModelParams`]), tape handles ([`ModelVars`]) or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<P> {
    pub config: ModelConfig,
    pub input: Conv<P>,
    pub fusion: Conv<P>,
    pub encoder: Vec<Block<P>>,
    pub dtb: Option<Dtb<P>>,
    pub decoder: Vec<Block<P>>,
    pub feature_head: Conv<P>,
    pub image_head: Conv<P>,
}

pub type ModelParams<T> = Network<Tensor<T>>;
pub type ModelVars = Network<Var>;

impl<P> Network<P> {
    fn convs(&self) -> Vec<(String, &Conv<P>)> {
        let mut out = vec![(String::from("input"), &self.input), ("fusion".into(), &self.fusion)];
        for (i, b) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.first"), &b.first));
            out.push((format!("encoder.{i}.second"), &b.second));
        }
        if let Some(d) = &self.dtb {
            out.push(("dtb".into(), &d.conv));
        }
        for (i, b) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.first"), &b.first));
            out.push((format!("decoder.{i}.second"), &b.second));
        }
        out.push(("feature_head".into(), &self.feature_head));
        out.push(("image_head".into(), &self.image_head));
        out
    }

    /// Every parameter slot in canonical order, with its name and kind.
    pub fn entries(&self) -> Vec<(String, ParamKind, &P)> {
        let mut out = Vec::new();
        for (name, c) in self.convs() {
            out.push((format!("{name}.weight"), ParamKind::ConvWeight, &c.weight));
            out.push((format!("{name}.bias"), ParamKind::Bias, &c.bias));
        }
        if let Some(d) = &self.dtb {
            out.push(("dtb.beta".into(), ParamKind::Beta, &d.beta));
        }
        out
    }

    /// Mutable slots in the same order as [`Network::entries`].
    pub fn entries_mut(&mut self) -> Vec<(ParamKind, &mut P)> {
        fn conv<'a, P>(out: &mut Vec<(ParamKind, &'a mut P)>, c: &'a mut Conv<P>) {
            out.push((ParamKind::ConvWeight, &mut c.weight));
            out.push((ParamKind::Bias, &mut c.bias));
        }
        let mut out = Vec::new();
        conv(&mut out, &mut self.input);
        conv(&mut out, &mut self.fusion);
        for b in &mut self.encoder {
            conv(&mut out, &mut b.first);
            conv(&mut out, &mut b.second);
        }
        let mut beta = None;
        if let Some(d) = &mut self.dtb {
            conv(&mut out, &mut d.conv);
            beta = Some(&mut d.beta);
        }
        for b in &mut self.decoder {
            conv(&mut out, &mut b.first);
            conv(&mut out, &mut b.second);
        }
        conv(&mut out, &mut self.feature_head);
        conv(&mut out, &mut self.image_head);
        if let Some(beta) = beta {
            out.push((ParamKind::Beta, beta));
        }
        out
    }

    /// Rebuild the layout with `f(name, kind, spec, slot)` at every slot.
    /// `spec` is `None` for `beta`.
    pub fn try_map<Q>(
        &self,
        mut f: impl FnMut(&str, ParamKind, Option<&ConvSpec>, &P) -> Result<Q>,
    ) -> Result<Network<Q>> {
        let mut conv = |name: &str, c: &Conv<P>| -> Result<Conv<Q>> {
            Ok(Conv {
                spec: c.spec,
                weight: f(&format!("{name}.weight"), ParamKind::ConvWeight, Some(&c.spec), &c.weight)?,
                bias: f(&format!("{name}.bias"), ParamKind::Bias, Some(&c.spec), &c.bias)?,
            })
        };
        let input = conv("input", &self.input)?;
        let fusion = conv("fusion", &self.fusion)?;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for (i, b) in self.encoder.iter().enumerate() {
            encoder.push(Block {
                first: conv(&format!("encoder.{i}.first"), &b.first)?,
                second: conv(&format!("encoder.{i}.second"), &b.second)?,
            });
        }
        let dtb_conv = match &self.dtb {
            Some(d) => Some(conv("dtb", &d.conv)?),
            None => None,
        };
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for (i, b) in self.decoder.iter().enumerate() {
            decoder.push(Block {
                first: conv(&format!("decoder.{i}.first"), &b.first)?,
                second: conv(&format!("decoder.{i}.second"), &b.second)?,
            });
        }
        let feature_head = conv("feature_head", &self.feature_head)?;
        let image_head = conv("image_head", &self.image_head)?;
        let dtb = match (dtb_conv, &self.dtb) {
            (Some(conv), Some(d)) => Some(Dtb {
                conv,
                beta: f("dtb.beta", ParamKind::Beta, None, &d.beta)?,
            }),
            _ => None,
        };
        Ok(Network {
            config: self.config.clone(),
            input,
            fusion,
            encoder,
            dtb,
            decoder,
            feature_head,
            image_head,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, ParamKind, Option<&ConvSpec>, &P) -> Q) -> Network<Q> {
        self.try_map(|n, k, s, p| Ok(f(n, k, s, p)))
            .expect("infallible map")
    }
}

impl Network<()> {
    /// Parameter layout for `config`, with nothing in the slots.
    pub fn layout(config: &ModelConfig) -> Result<Self> {
        let s = config.specs()?;
        let conv = |spec: ConvSpec| Conv {
            spec,
            weight: (),
            bias: (),
        };
        let block = || Block {
            first: conv(s.block),
            second: conv(s.block),
        };
        Ok(Network {
            config: config.clone(),
            input: conv(s.input),
            fusion: conv(s.fusion),
            encoder: (0..config.encoder_blocks).map(|_| block()).collect(),
            dtb: config.variant.uses_blending().then(|| Dtb {
                conv: conv(s.blend),
                beta: (),
            }),
            decoder: (0..config.decoder_blocks).map(|_| block()).collect(),
            feature_head: conv(s.feature_head),
            image_head: conv(s.image_head),
        })
    }

    /// Name and shape of every parameter, in canonical order.
    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.map(|name, _, spec, _| (String::from(name), slot_shape(name, spec)))
            .entries()
            .into_iter()
            .map(|(_, _, v)| v.clone())
            .collect()
    }
}

fn slot_shape(name: &str, spec: Option<&ConvSpec>) -> Shape {
    match spec {
        Some(s) if name.ends_with(".weight") => Shape::new(s.weight_shape()),
        Some(s) => Shape::new([s.out_channels]),
        None => Shape::scalar(),
    }
}

/// Weight variance times fan-in for the named weight. Convolutions feeding
/// a ReLU get 2, linear outputs get 1, and the last convolution of each
/// residual branch is further divided by the number of blocks so the
/// trunk stays near unit gain. The feature head starts at 0.01 so the
/// recurrent state is close to zero at the first steps.
pub fn init_variance(name: &str, residual_blocks: usize) -> f64 {
    if name == "feature_head.weight" {
        0.01
    } else if name.ends_with(".second.weight") {
        1.0 / residual_blocks.max(1) as f64
    } else if name.starts_with("input") || name.starts_with("fusion") || name.ends_with(".first.weight") {
        2.0
    } else {
        1.0
    }
}

/// Initial mixing bias of the blending cell.
pub const INITIAL_BETA: f64 = 0.5;

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled Gaussian convolution weights, zero biases, `beta = 0.5`.
    /// See [`init_variance`] for the per-layer gains.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let layout = Network::layout(config)?;
        let blocks = config.encoder_blocks + config.decoder_blocks;
        Ok(layout.map(|name, kind, spec, _| {
            let shape = slot_shape(name, spec);
            match (kind, spec) {
                (ParamKind::ConvWeight, Some(s)) => {
                    let fan_in = (s.in_channels * s.kernel_h * s.kernel_w) as f64;
                    let var = init_variance(name, blocks) / fan_in;
                    let normal = Normal::new(0.0, libm::sqrt(var)).expect("positive std");
                    let n = shape.numel();
                    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
                    Tensor::from_vec(shape, data).expect("layout shape")
                }
                (ParamKind::Beta, _) => Tensor::scalar(T::of(INITIAL_BETA)),
                _ => Tensor::zeros(shape),
            }
        }))
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        self.map(|_, _, _, t| Tensor::zeros(t.shape().clone()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        self.map(|_, _, _, t| t.cast())
    }

    pub fn param_count(&self) -> usize {
        self.entries().iter().map(|(_, _, t)| t.numel()).sum()
    }

    pub fn beta(&self) -> Option<T> {
        self.dtb.as_ref().map(|d| d.beta.item())
    }

    /// Project `beta` back into `[0, 1]`.
    pub fn project(&mut self) {
        if let Some(d) = &mut self.dtb {
            let b = &mut d.beta.data_mut()[0];
            *b = b.max(T::zero()).min(T::one());
        }
    }

    /// Record every parameter on `tape`; `trainable` decides whether
    /// gradients are collected for them.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        self.map(|_, _, _, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Assemble parameters from named tensors (e.g. a checkpoint), checking
    /// names and shapes against the layout of `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let layout = Network::layout(config)?;
        let expected = layout.shapes();
        if expected.len() != named.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        let mut it = named.into_iter();
        layout.try_map(|name, _, spec, _| {
            let (n, t) = it.next().expect("length checked");
            let shape = slot_shape(name, spec);
            if n != name || *t.shape() != shape {
                return Err(Error::ParamMismatch(format!(
                    "expected `{name}` {shape}, found `{n}` {}",
                    t.shape()
                )));
            }
            Ok(t)
        })
    }
}

impl ModelVars {
    /// Gradients accumulated on `tape`, shaped like the parameters (zeros
    /// where no gradient arrived).
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> ModelParams<T> {
        self.map(|_, _, _, &v| match tape.grad(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.shape(v).clone()),
        })
    }
}

/// Trainable values in a network of this configuration.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(Network::layout(config)?
        .shapes()
        .iter()
        .map(|(_, s)| s.numel())
        .sum())
}

/// Carry-over between steps: the decoder feature map `F_{n-1}` and the
/// blended encoder map from the previous step, both at half resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub features: Tensor<T>,
    pub blended: Tensor<T>,
}

/// Zero state for `batch` streams of `width×height` frames.
pub fn init_state<T: Scalar>(
    config: &ModelConfig,
    width: usize,
    height: usize,
    batch: usize,
) -> Result<RecurrentState<T>> {
    check_even(width, height)?;
    let (h, w) = (height / 2, width / 2);
    Ok(RecurrentState {
        features: Tensor::zeros(Shape::nchw(batch, config.feature_channels, h, w)),
        blended: Tensor::zeros(Shape::nchw(batch, config.channels, h, w)),
    })
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::OddFrameDims { width, height });
    }
    Ok(())
}

/// Recurrent state recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub features: Var,
    pub blended: Var,
}

impl StateVars {
    pub fn constant<T: Scalar>(tape: &mut Tape<T>, state: &RecurrentState<T>) -> Self {
        StateVars {
            features: tape.constant(state.features.clone()),
            blended: tape.constant(state.blended.clone()),
        }
    }

    pub fn read<T: Scalar>(&self, tape: &Tape<T>) -> RecurrentState<T> {
        RecurrentState {
            features: tape.value(self.features).clone(),
            blended: tape.value(self.blended).clone(),
        }
    }
}

/// Whether the image head clamps to `[0, 1]`. Training leaves it open so
/// gradients flow everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Latent sharp frame `L_n`, full resolution, 3 channels.
    pub latent: Var,
    /// Encoder output `h_n`.
    pub encoded: Var,
    /// Blending weights `w_n`, for the blending variant.
    pub weights: Option<Var>,
    pub state: StateVars,
}

fn conv_on<T: Scalar>(tape: &mut Tape<T>, x: Var, c: &Conv<Var>) -> Result<Var> {
    tape.conv2d(x, c.weight, c.bias, &c.spec)
}

fn residual<T: Scalar>(tape: &mut Tape<T>, x: Var, b: &Block<Var>) -> Result<Var> {
    let y = conv_on(tape, x, &b.first)?;
    let y = tape.relu(y);
    let y = conv_on(tape, y, &b.second)?;
    tape.add(x, y)
}

/// `h_n` from the `2m+1` window frames (each `N×3×H×W`) and `F_{n-1}`.
pub fn encoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &ModelVars,
    window: &[Var],
    features_prev: Var,
) -> Result<Var> {
    let cfg = &net.config;
    if window.len() != cfg.input_frames() {
        return Err(Error::InvalidConfig(format!(
            "window holds {} frames, model expects {}",
            window.len(),
            cfg.input_frames()
        )));
    }
    let (_, _, h, w) = tape.shape(window[0]).as_nchw("encoder input")?;
    check_even(w, h)?;
    let stacked = tape.concat_channels(window)?;
    let stacked = tape.shift(stacked, T::of(-0.5));
    let filtered = conv_on(tape, stacked, &net.input)?;
    let filtered = tape.relu(filtered);
    let fused = tape.concat_channels(&[filtered, features_prev])?;
    let mut x = conv_on(tape, fused, &net.fusion)?;
    x = tape.relu(x);
    for b in &net.encoder {
        x = residual(tape, x, b)?;
    }
    Ok(x)
}

/// Blending weights `w = min(1, |tanh(conv(concat(prev, h)))| + beta)` and
/// the blended map `w ⊗ h + (1 − w) ⊗ prev`.
pub fn dtb_forward<T: Scalar>(
    tape: &mut Tape<T>,
    dtb: &Dtb<Var>,
    encoded: Var,
    blended_prev: Var,
) -> Result<(Var, Var)> {
    if tape.shape(encoded) != tape.shape(blended_prev) {
        return Err(Error::ShapeMismatch {
            op: "dtb",
            left: tape.shape(encoded).clone(),
            right: tape.shape(blended_prev).clone(),
        });
    }
    let pair = tape.concat_channels(&[blended_prev, encoded])?;
    let z = conv_on(tape, pair, &dtb.conv)?;
    let z = tape.tanh(z);
    let z = tape.abs(z);
    let z = tape.add(z, dtb.beta)?;
    let weights = tape.clamp_upper(z, T::one());
    let blended = tape.blend(weights, encoded, blended_prev)?;
    Ok((weights, blended))
}

/// `(L_n, F_n)` from the blended map.
pub fn decoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &ModelVars,
    blended: Var,
    mode: Mode,
) -> Result<(Var, Var)> {
    let mut x = blended;
    for b in &net.decoder {
        x = residual(tape, x, b)?;
    }
    let features = conv_on(tape, x, &net.feature_head)?;
    let up = tape.nearest_upsample(x, 2)?;
    let latent = conv_on(tape, up, &net.image_head)?;
    let mut latent = tape.shift(latent, T::of(0.5));
    if mode == Mode::Inference {
        latent = tape.clamp(latent, T::zero(), T::one());
    }
    Ok((latent, features))
}

/// One recurrent step on a tape.
pub fn step_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    net: &ModelVars,
    window: &[Var],
    state: StateVars,
    mode: Mode,
) -> Result<StepOutput> {
    let variant = net.config.variant;
    let features_prev = if variant.uses_features() {
        state.features
    } else {
        let zeros = Tensor::zeros(tape.shape(state.features).clone());
        tape.constant(zeros)
    };
    let encoded = encoder_forward(tape, net, window, features_prev)?;
    let (weights, blended) = match &net.dtb {
        Some(dtb) if variant.uses_blending() => {
            let (w, b) = dtb_forward(tape, dtb, encoded, state.blended)?;
            (Some(w), b)
        }
        _ => (None, encoded),
    };
    let (latent, features) = decoder_forward(tape, net, blended, mode)?;
    Ok(StepOutput {
        latent,
        encoded,
        weights,
        state: StateVars { features, blended },
    })
}

/// Inference step on plain tensors: `(L_n, next state)`, with `L_n` clamped
/// to `[0, 1]`. Window frames are `N×3×H×W`.
pub fn step<T: Scalar>(
    params: &ModelParams<T>,
    window: &[Tensor<T>],
    state: &RecurrentState<T>,
) -> Result<(Tensor<T>, RecurrentState<T>)> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, false);
    let frames: Vec<Var> = window.iter().map(|f| tape.constant(f.clone())).collect();
    let state = StateVars::constant(&mut tape, state);
    let out = step_on_tape(&mut tape, &net, &frames, state, Mode::Inference)?;
    Ok((tape.value(out.latent).clone(), out.state.read(&tape)))
}

/// 0-based frame indices of the window centred on `n`, replicating the
/// first and last frames past the ends of a `len`-frame stream.
pub fn window_indices(n: usize, m: usize, len: usize) -> Vec<usize> {
    (0..2 * m + 1)
        .map(|j| (n + j).saturating_sub(m).min(len.saturating_sub(1)))
        .collect()
}

/// Closed interval of pixel indices along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub lo: usize,
    pub hi: usize,
}

impl Span {
    pub fn width(&self) -> usize {
        self.hi - self.lo + 1
    }
}

fn back_through(span: (i64, i64), kernel: usize, stride: usize, pad: usize, extent: usize) -> (i64, i64) {
    let lo = span.0 * stride as i64 - pad as i64;
    let hi = span.1 * stride as i64 - pad as i64 + kernel as i64 - 1;
    (lo.max(0), hi.min(extent as i64 - 1))
}

/// Input pixels (rows, columns) that can influence output pixel `(y, x)` in
/// a single pass of the network, from layer arithmetic alone. `F_{n-1}` and
/// the previous blended map are not followed.
pub fn analytic_receptive_field(config: &ModelConfig, height: usize, width: usize, y: usize, x: usize) -> Result<(Span, Span)> {
    check_even(width, height)?;
    let s = config.specs()?;
    let axis = |pos: usize, full: usize, vertical: bool| -> Span {
        let half = full / 2;
        let pad_before = |c: &ConvSpec| if vertical { c.padding.top } else { c.padding.left };
        let through = |span, c: &ConvSpec, extent| back_through(span, c.kernel_h, c.stride, pad_before(c), extent);
        let mut span = (pos as i64, pos as i64);
        span = through(span, &s.image_head, full);
        span = (span.0 / 2, span.1 / 2);
        for _ in 0..2 * config.decoder_blocks {
            span = through(span, &s.block, half);
        }
        if config.variant.uses_blending() {
            span = through(span, &s.blend, half);
        }
        for _ in 0..2 * config.encoder_blocks {
            span = through(span, &s.block, half);
        }
        span = through(span, &s.fusion, half);
        span = through(span, &s.input, full);
        Span {
            lo: span.0 as usize,
            hi: span.1 as usize,
        }
    };
    Ok((axis(y, height, true), axis(x, width, false)))
}

/// Bounding box of the measured gradient support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Support {
    pub rows: Span,
    pub cols: Span,
}

impl Support {
    pub fn width(&self) -> usize {
        self.cols.width()
    }

    pub fn height(&self) -> usize {
        self.rows.width()
    }
}

/// For `k = 1..=steps`, run `k` steps on an impulse sequence (grey frames
/// with a bright centre pixel) and record where `∂L_k(centre)/∂B_1` is
/// nonzero. `None` means frame 1 does not influence `L_k` at all.
///
/// ReLU units that are inactive everywhere hide paths, so the parameters
/// should have nonzero biases.
pub fn receptive_field_probe<T: Scalar>(
    params: &ModelParams<T>,
    steps: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Option<Support>>> {
    check_even(width, height)?;
    let cfg = &params.config;
    let len = steps + cfg.window_m;
    let (cy, cx) = (height / 2, width / 2);
    let frame = |i: usize| {
        let mut t = Tensor::full(Shape::nchw(1, 3, height, width), T::of(0.5));
        let plane = height * width;
        for c in 0..3 {
            t.data_mut()[c * plane + cy * width + cx] = T::of(1.0 - 0.1 * (i % 3) as f64);
        }
        t
    };
    let mut results = Vec::with_capacity(steps);
    for k in 1..=steps {
        let mut tape = Tape::new();
        let net = params.bind(&mut tape, false);
        let first = tape.param(frame(0));
        let frames: Vec<Var> = (0..len)
            .map(|i| if i == 0 { first } else { tape.constant(frame(i)) })
            .collect();
        let zero = init_state::<T>(cfg, width, height, 1)?;
        let mut state = StateVars::constant(&mut tape, &zero);
        let mut latent = None;
        for n in 0..k {
            let window: Vec<Var> = window_indices(n, cfg.window_m, len).into_iter().map(|i| frames[i]).collect();
            let out = step_on_tape(&mut tape, &net, &window, state, Mode::Train)?;
            state = out.state;
            latent = Some(out.latent);
        }
        let latent = latent.expect("at least one step");
        let mut mask = Tensor::zeros(Shape::nchw(1, 3, height, width));
        for c in 0..3 {
            mask.data_mut()[(c * height + cy) * width + cx] = T::one();
        }
        let mask = tape.constant(mask);
        let picked = tape.mul(latent, mask)?;
        let loss = tape.sum(picked);
        tape.backward(loss)?;
        results.push(tape.grad(first).and_then(|g| nonzero_support(g, height, width)));
    }
    Ok(results)
}

fn nonzero_support<T: Scalar>(g: &Tensor<T>, height: usize, width: usize) -> Option<Support> {
    let mut rows: Option<Span> = None;
    let mut cols: Option<Span> = None;
    let grow = |s: &mut Option<Span>, v: usize| {
        *s = Some(match *s {
            None => Span { lo: v, hi: v },
            Some(sp) => Span {
                lo: sp.lo.min(v),
                hi: sp.hi.max(v),
            },
        })
    };
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                if g.at4(0, c, y, x) != T::zero() {
                    grow(&mut rows, y);
                    grow(&mut cols, x);
                }
            }
        }
    }
    Some(Support {
        rows: rows?,
        cols: cols?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny(variant: Variant, m: usize) -> ModelConfig {
        ModelConfig {
            encoder_blocks: 2,
            decoder_blocks: 2,
            channels: 8,
            feature_channels: 4,
            ..ModelConfig::new(variant, m)
        }
    }

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
        let data = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        Tensor::from_vec(Shape::nchw(1, 3, h, w), data).unwrap()
    }

    #[test]
    fn default_config_matches_published_layout() {
        let cfg = ModelConfig::new(Variant::StrcnnDtb, 2);
        assert_eq!(cfg.input_frames(), 5);
        let layout = Network::layout(&cfg).unwrap();
        assert_eq!(layout.input.spec.in_channels, 15);
        assert_eq!(layout.encoder.len() * 2, 10);
        assert_eq!(layout.decoder.len() * 2, 8);
        assert_eq!(layout.fusion.spec.in_channels, 64);
        assert_eq!(layout.dtb.as_ref().unwrap().conv.spec.kernel_h, 5);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(Variant::Cnn, 1);
        cfg.channels = 16;
        cfg.feature_channels = 32;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(Variant::Cnn, 1);
        cfg.encoder_blocks = 0;
        assert!(cfg.validate().is_err());
        let s = ModelConfig::new(Variant::Cnn, 1).scaled(0.25);
        assert_eq!((s.channels, s.feature_channels), (16, 8));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("strcnn-dtb".parse::<Variant>().unwrap(), Variant::StrcnnDtb);
        assert_eq!("STRCNN_DTB".parse::<Variant>().unwrap(), Variant::StrcnnDtb);
        assert_eq!("cnn".parse::<Variant>().unwrap(), Variant::Cnn);
        assert!("rnn".parse::<Variant>().is_err());
    }

    #[test]
    fn init_state_shapes() {
        let cfg = ModelConfig::new(Variant::StrcnnDtb, 2);
        let s = init_state::<f32>(&cfg, 64, 48, 1).unwrap();
        assert_eq!(s.features.shape().dims(), &[1, 32, 24, 32]);
        assert_eq!(s.blended.shape().dims(), &[1, 64, 24, 32]);
        assert!(s.features.data().iter().all(|&v| v == 0.0));
        assert_eq!(s, init_state(&cfg, 64, 48, 1).unwrap());
        assert_eq!(s, init_state(&cfg.clone().with_variant(Variant::Cnn), 64, 48, 1).unwrap());
        assert!(matches!(
            init_state::<f32>(&cfg, 63, 48, 1),
            Err(Error::OddFrameDims { .. })
        ));
    }

    #[test]
    fn step_shapes_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = tiny(Variant::StrcnnDtb, 1);
        let params = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let window: Vec<_> = (0..3).map(|_| random_frame(&mut rng, 16, 12)).collect();
        let state = init_state(&cfg, 12, 16, 1).unwrap();
        let (latent, next) = step(&params, &window, &state).unwrap();
        assert_eq!(latent.shape().dims(), &[1, 3, 16, 12]);
        assert_eq!(next.features.shape().dims(), &[1, 4, 8, 6]);
        assert_eq!(next.blended.shape().dims(), &[1, 8, 8, 6]);
        assert!(latent.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let odd: Vec<_> = (0..3).map(|_| random_frame(&mut rng, 15, 12)).collect();
        assert!(step(&params, &odd, &state).is_err());
        assert!(step(&params, &window[..2], &state).is_err());
    }

    #[test]
    fn cnn_ignores_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = tiny(Variant::Cnn, 1);
        let params = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let window: Vec<_> = (0..3).map(|_| random_frame(&mut rng, 8, 8)).collect();
        let zero = init_state(&cfg, 8, 8, 1).unwrap();
        let (_, other) = step(&params, &window, &zero).unwrap();
        let (a, _) = step(&params, &window, &zero).unwrap();
        let (b, _) = step(&params, &window, &other).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decoder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = tiny(Variant::Strcnn, 0);
        let params = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let net = params.bind(&mut tape, false);
        let h = tape.constant(Tensor::full(Shape::nchw(1, 8, 32, 32), 0.1));
        let (l, f) = decoder_forward(&mut tape, &net, h, Mode::Train).unwrap();
        assert_eq!(tape.shape(l).dims(), &[1, 3, 64, 64]);
        assert_eq!(tape.shape(f).dims(), &[1, 4, 32, 32]);
    }

    #[test]
    fn parameter_parity() {
        for m in 0..3 {
            let cnn = param_count(&tiny(Variant::Cnn, m)).unwrap();
            let st = param_count(&tiny(Variant::Strcnn, m)).unwrap();
            let dtb = param_count(&tiny(Variant::StrcnnDtb, m)).unwrap();
            assert_eq!(cnn, st);
            assert_eq!(dtb - st, 5 * 5 * 16 * 8 + 8 + 1);
        }
    }

    #[test]
    fn named_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = tiny(Variant::StrcnnDtb, 1);
        let p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let named: Vec<_> = p.entries().into_iter().map(|(n, _, t)| (n, t.clone())).collect();
        assert_eq!(named.last().unwrap().0, "dtb.beta");
        let q = ModelParams::from_named(&cfg, named.clone()).unwrap();
        assert_eq!(p, q);
        let mut wrong = named;
        wrong.swap(0, 1);
        assert!(ModelParams::from_named(&cfg, wrong).is_err());
        assert!(ModelParams::<f32>::from_named(&tiny(Variant::Strcnn, 1), Vec::new()).is_err());
    }

    #[test]
    fn entries_mut_matches_entries_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny(Variant::StrcnnDtb, 1);
        let mut p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let kinds: Vec<_> = p.entries().iter().map(|(_, k, t)| (*k, t.shape().clone())).collect();
        let kinds_mut: Vec<_> = p.entries_mut().iter().map(|(k, t)| (*k, t.shape().clone())).collect();
        assert_eq!(kinds, kinds_mut);
    }

    #[test]
    fn beta_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = tiny(Variant::StrcnnDtb, 0);
        let mut p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        assert_eq!(p.beta(), Some(0.5));
        p.dtb.as_mut().unwrap().beta.data_mut()[0] = 1.3;
        p.project();
        assert_eq!(p.beta(), Some(1.0));
        p.dtb.as_mut().unwrap().beta.data_mut()[0] = -0.2;
        p.project();
        assert_eq!(p.beta(), Some(0.0));
    }

    #[test]
    fn window_indices_replicate_edges() {
        assert_eq!(window_indices(0, 2, 10), vec![0, 0, 0, 1, 2]);
        assert_eq!(window_indices(5, 1, 10), vec![4, 5, 6]);
        assert_eq!(window_indices(9, 2, 10), vec![7, 8, 9, 9, 9]);
        assert_eq!(window_indices(3, 0, 10), vec![3]);
    }
}
