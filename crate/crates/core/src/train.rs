//! Training objective, Adam with staircase exponential decay, and the
//! unrolled sequence step.
//!
//! The data term sums the squared error over every frame of a sequence and
//! divides by the element count of a single frame (`H·W·3`), so its
//! magnitude grows with sequence length. Batches average that per-sequence
//! value. Weight decay covers convolution weights only.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{self, init_state, Mode, ModelParams, ModelVars, ParamKind, StateVars};
use crate::scalar::Scalar;
use crate::synth::Frame;
use crate::tensor::{Shape, Tensor};

/// Consecutive frames per training sequence.
pub const SEQUENCE_LEN: usize = 13;
/// Side length of training crops.
pub const CROP_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1e-5 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(LossConfig { lambda })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    pub reg: Var,
}

/// Objective over a batched sequence: latents and sharps are per-step
/// `N×3×H×W` values on the tape.
pub fn sequence_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    latents: &[Var],
    sharps: &[Var],
    net: &ModelVars,
    cfg: LossConfig,
) -> Result<LossTerms> {
    if latents.len() != sharps.len() || latents.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "loss needs equal, non-zero frame counts (got {} latents, {} sharps)",
            latents.len(),
            sharps.len()
        )));
    }
    let (batch, c, h, w) = tape.shape(latents[0]).as_nchw("sequence_loss")?;
    let mut data: Option<Var> = None;
    for (&l, &s) in latents.iter().zip(sharps) {
        let d = tape.squared_distance(s, l)?;
        data = Some(match data {
            None => d,
            Some(acc) => tape.add(acc, d)?,
        });
    }
    let per_frame = (c * h * w * batch) as f64;
    let mse = tape.scalar_mul(data.expect("non-empty"), T::of(1.0 / per_frame));

    let mut reg: Option<Var> = None;
    for (_, kind, &v) in net.entries() {
        if kind != ParamKind::ConvWeight {
            continue;
        }
        let sq = tape.sum_squares(v);
        reg = Some(match reg {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let reg = reg.expect("every layout has convolutions");
    let weighted = tape.scalar_mul(reg, T::of(cfg.lambda));
    let total = tape.add(mse, weighted)?;
    Ok(LossTerms { total, mse, reg })
}

/// Objective for plain frames; `params` only contributes the weight-decay term.
pub fn sequence_loss<T: Scalar>(
    latents: &[Tensor<T>],
    sharps: &[Tensor<T>],
    params: &ModelParams<T>,
    cfg: LossConfig,
) -> Result<T> {
    for (l, s) in latents.iter().zip(sharps) {
        if l.shape() != s.shape() {
            return Err(Error::ShapeMismatch {
                op: "sequence_loss",
                left: l.shape().clone(),
                right: s.shape().clone(),
            });
        }
    }
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, false);
    let l: Vec<Var> = latents.iter().map(|t| tape.constant(t.clone())).collect();
    let s: Vec<Var> = sharps.iter().map(|t| tape.constant(t.clone())).collect();
    let terms = sequence_loss_on_tape(&mut tape, &l, &s, &net, cfg)?;
    Ok(tape.value(terms.total).item())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_rate: f64,
    /// Iterations per application of `decay_rate`.
    pub decay_every: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_rate: 0.96,
            decay_every: 1000,
        }
    }
}

/// `learning_rate · decay_rate^⌊iteration / decay_every⌋`.
pub fn lr_schedule(cfg: &AdamConfig, iteration: u64) -> f64 {
    let steps = iteration / cfg.decay_every.max(1);
    cfg.learning_rate * libm::pow(cfg.decay_rate, steps as f64)
}

#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    first: ModelParams<T>,
    second: ModelParams<T>,
    iteration: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        OptimState {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn learning_rate(&self) -> f64 {
        lr_schedule(&self.config, self.iteration)
    }
}

/// One bias-corrected Adam update, then `beta` is projected into `[0, 1]`.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    opt: &mut OptimState<T>,
) -> Result<()> {
    let grad_entries = grads.entries();
    let shapes: Vec<_> = params.entries().into_iter().map(|(n, _, t)| (n, t.shape().clone())).collect();
    if grad_entries.len() != shapes.len() {
        return Err(Error::ParamMismatch(format!(
            "{} gradients for {} parameters",
            grad_entries.len(),
            shapes.len()
        )));
    }
    for ((name, shape), (_, _, g)) in shapes.iter().zip(&grad_entries) {
        if g.shape() != shape {
            return Err(Error::MissingGradient(name.clone()));
        }
    }

    let cfg = opt.config;
    let lr = T::of(lr_schedule(&cfg, opt.iteration));
    let t = (opt.iteration + 1) as f64;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::of(1.0 - libm::pow(cfg.beta1, t));
    let c2 = T::of(1.0 - libm::pow(cfg.beta2, t));
    let eps = T::of(cfg.epsilon);
    let one = T::one();

    let slots = params.entries_mut();
    let firsts = opt.first.entries_mut();
    let seconds = opt.second.entries_mut();
    for ((((_, p), (_, m)), (_, v)), (_, _, g)) in slots.into_iter().zip(firsts).zip(seconds).zip(&grad_entries) {
        for (((p, m), v), &g) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.project();
    opt.iteration += 1;
    Ok(())
}

/// Aligned blurry/sharp frames of one video (or one training crop).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSequence {
    pub blurry: Vec<Frame>,
    pub sharp: Vec<Frame>,
}

impl PairedSequence {
    pub fn new(blurry: Vec<Frame>, sharp: Vec<Frame>) -> Result<Self> {
        if blurry.len() != sharp.len() {
            return Err(Error::InvalidConfig(format!(
                "{} blurry frames but {} sharp frames",
                blurry.len(),
                sharp.len()
            )));
        }
        if let Some(first) = blurry.first() {
            if blurry.iter().chain(&sharp).any(|f| f.dims() != first.dims()) {
                return Err(Error::InvalidConfig("frames in a sequence differ in size".into()));
            }
        }
        Ok(PairedSequence { blurry, sharp })
    }

    pub fn len(&self) -> usize {
        self.blurry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blurry.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.blurry.first().map(Frame::dims)
    }
}

/// Sequences of equal length and crop size, trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub sequences: Vec<PairedSequence>,
}

impl TrainBatch {
    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, PairedSequence::len)
    }

    /// Per-step `N×3×H×W` tensors stacking the batch's frames.
    fn stacked<T: Scalar>(&self, pick: impl Fn(&PairedSequence) -> &[Frame]) -> Result<Vec<Tensor<T>>> {
        let first = self
            .sequences
            .first()
            .ok_or_else(|| Error::DatasetTooSmall("empty batch".into()))?;
        let (w, h) = first.dims().ok_or_else(|| Error::DatasetTooSmall("empty sequence".into()))?;
        let len = first.len();
        for s in &self.sequences {
            if s.len() != len || s.dims() != Some((w, h)) {
                return Err(Error::InvalidConfig("batch sequences differ in length or size".into()));
            }
        }
        (0..len)
            .map(|i| {
                let mut data = Vec::with_capacity(self.sequences.len() * 3 * h * w);
                for s in &self.sequences {
                    data.extend(pick(s)[i].data().iter().map(|&v| T::of(v as f64)));
                }
                Tensor::from_vec(Shape::nchw(self.sequences.len(), 3, h, w), data)
            })
            .collect()
    }
}

/// Draw `batch_size` sequences: for each, a video, a start frame and one
/// crop origin shared by all `seq_len` frames.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &[PairedSequence],
    rng: &mut R,
    batch_size: usize,
    seq_len: usize,
    crop: usize,
) -> Result<TrainBatch> {
    let usable: Vec<&PairedSequence> = dataset
        .iter()
        .filter(|s| s.len() >= seq_len && s.dims().is_some_and(|(w, h)| w >= crop && h >= crop))
        .collect();
    if usable.is_empty() || batch_size == 0 || seq_len == 0 || crop == 0 {
        return Err(Error::DatasetTooSmall(format!(
            "no sequence holds {seq_len} frames of at least {crop}x{crop}"
        )));
    }
    let sequences = (0..batch_size)
        .map(|_| {
            let video = usable[rng.random_range(0..usable.len())];
            let (w, h) = video.dims().expect("filtered");
            let start = rng.random_range(0..=video.len() - seq_len);
            let x0 = rng.random_range(0..=w - crop);
            let y0 = rng.random_range(0..=h - crop);
            let cut = |frames: &[Frame]| -> Result<Vec<Frame>> {
                frames[start..start + seq_len]
                    .iter()
                    .map(|f| f.crop(x0, y0, crop, crop))
                    .collect()
            };
            PairedSequence::new(cut(&video.blurry)?, cut(&video.sharp)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainBatch { sequences })
}

/// Latents of an unrolled sequence plus the loss terms, recorded on `tape`.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub latents: Vec<Var>,
    pub loss: LossTerms,
}

/// Run the model from a zero state over every step of `blurry`, scoring
/// against `sharp`. Gradients cross all steps.
pub fn unroll_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    net: &ModelVars,
    blurry: &[Var],
    sharp: &[Var],
    loss_cfg: LossConfig,
) -> Result<Unrolled> {
    let cfg = &net.config;
    let (batch, _, h, w) = tape.shape(blurry[0]).as_nchw("unroll")?;
    let zero = init_state::<T>(cfg, w, h, batch)?;
    let mut state = StateVars::constant(tape, &zero);
    let mut latents = Vec::with_capacity(blurry.len());
    for n in 0..blurry.len() {
        let window: Vec<Var> = model::window_indices(n, cfg.window_m, blurry.len())
            .into_iter()
            .map(|i| blurry[i])
            .collect();
        let out = model::step_on_tape(tape, net, &window, state, Mode::Train)?;
        state = out.state;
        latents.push(out.latent);
    }
    let loss = sequence_loss_on_tape(tape, &latents, sharp, net, loss_cfg)?;
    Ok(Unrolled { latents, loss })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    pub reg: f64,
}

/// Loss and parameter gradients of a batch.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &TrainBatch,
    loss_cfg: LossConfig,
) -> Result<(LossValue, ModelParams<T>)> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, true);
    let (blurry, sharp) = batch_vars(&mut tape, batch)?;
    let un = unroll_on_tape(&mut tape, &net, &blurry, &sharp, loss_cfg)?;
    let value = loss_value(&tape, &un.loss);
    tape.backward(un.loss.total)?;
    Ok((value, net.grads(&tape)))
}

/// Loss of a batch without gradients, with the branch signature of every
/// kinked op for finite-difference checks.
pub fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    batch: &TrainBatch,
    loss_cfg: LossConfig,
) -> Result<(LossValue, Vec<u8>)> {
    let mut tape = Tape::new();
    let net = params.bind(&mut tape, false);
    let (blurry, sharp) = batch_vars(&mut tape, batch)?;
    let un = unroll_on_tape(&mut tape, &net, &blurry, &sharp, loss_cfg)?;
    Ok((loss_value(&tape, &un.loss), tape.kink_signature()))
}

fn batch_vars<T: Scalar>(tape: &mut Tape<T>, batch: &TrainBatch) -> Result<(Vec<Var>, Vec<Var>)> {
    let blurry = batch.stacked::<T>(|s| &s.blurry)?;
    let sharp = batch.stacked::<T>(|s| &s.sharp)?;
    Ok((
        blurry.into_iter().map(|t| tape.constant(t)).collect(),
        sharp.into_iter().map(|t| tape.constant(t)).collect(),
    ))
}

fn loss_value<T: Scalar>(tape: &Tape<T>, terms: &LossTerms) -> LossValue {
    let get = |v: Var| tape.value(v).item().to_f64().unwrap();
    LossValue {
        total: get(terms.total),
        mse: get(terms.mse),
        reg: get(terms.reg),
    }
}

/// Forward and backward through the whole unrolled batch and one optimizer
/// update. Returns the loss before the update; a non-finite loss leaves the
/// parameters untouched.
pub fn train_sequence_step<T: Scalar>(
    batch: &TrainBatch,
    params: &mut ModelParams<T>,
    opt: &mut OptimState<T>,
    loss_cfg: LossConfig,
) -> Result<LossValue> {
    let (loss, grads) = batch_gradients(params, batch, loss_cfg)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss(opt.iteration()));
    }
    adam_step(params, &grads, opt)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder_blocks: 1,
            decoder_blocks: 1,
            channels: 4,
            feature_channels: 2,
            ..ModelConfig::new(Variant::StrcnnDtb, 1)
        }
    }

    fn frame(v: f32) -> Tensor<f64> {
        Tensor::full(Shape::nchw(1, 3, 1, 1), v as f64)
    }

    #[test]
    fn identical_frames_without_decay_cost_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let f = vec![frame(0.3), frame(0.9)];
        let e = sequence_loss(&f, &f, &p, LossConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn single_pixel_error_normalised_by_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let e = sequence_loss(&[frame(0.5)], &[frame(0.0)], &p, LossConfig::new(0.0).unwrap()).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn decay_term_is_sum_of_squared_conv_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        for (kind, t) in p.entries_mut() {
            let fill = match kind {
                ParamKind::ConvWeight => 0.0,
                _ => 3.0,
            };
            t.data_mut().iter_mut().for_each(|v| *v = fill);
        }
        p.input.weight.data_mut()[0] = 2.0;
        let zero = [Tensor::zeros(Shape::nchw(1, 3, 2, 2))];
        let e = sequence_loss(&zero, &zero, &p, LossConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(e, 4.0);
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let a = [Tensor::full(Shape::nchw(1, 3, 2, 2), 0.2)];
        let b = [Tensor::full(Shape::nchw(1, 3, 2, 2), 0.7)];
        let e0 = sequence_loss(&a, &b, &p, LossConfig::new(0.0).unwrap()).unwrap();
        let e1 = sequence_loss(&a, &b, &p, LossConfig::new(1e-3).unwrap()).unwrap();
        let e2 = sequence_loss(&a, &b, &p, LossConfig::new(2e-3).unwrap()).unwrap();
        assert!(((e2 - e1) - (e1 - e0)).abs() < 1e-12);
        assert!(LossConfig::new(-1.0).is_err());
    }

    #[test]
    fn loss_rejects_mismatched_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let a = [Tensor::zeros(Shape::nchw(1, 3, 2, 2))];
        let b = [Tensor::zeros(Shape::nchw(1, 3, 2, 4))];
        assert!(sequence_loss(&a, &b, &p, LossConfig::default()).is_err());
        assert!(sequence_loss(&a, &[], &p, LossConfig::default()).is_err());
    }

    #[test]
    fn schedule_examples() {
        let cfg = AdamConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 1e-4);
        assert_eq!(lr_schedule(&cfg, 999), 1e-4);
        assert!((lr_schedule(&cfg, 1000) - 9.6e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for i in (0..20_000).step_by(137) {
            let lr = lr_schedule(&cfg, i);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let before = p.clone();
        let mut opt = OptimState::new(&p, AdamConfig::default());
        let g = p.zeros_like();
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut opt).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.iteration(), 3);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let before = p.clone();
        let mut opt = OptimState::new(&p, AdamConfig::default());
        let mut g = p.zeros_like();
        g.fusion.bias.data_mut()[0] = 1.0;
        adam_step(&mut p, &g, &mut opt).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
        let moved = p.fusion.bias.data()[0] - before.fusion.bias.data()[0];
        assert!((moved + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_projects_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        p.dtb.as_mut().unwrap().beta.data_mut()[0] = 0.99995;
        let mut opt = OptimState::new(&p, AdamConfig::default());
        let mut g = p.zeros_like();
        g.dtb.as_mut().unwrap().beta.data_mut()[0] = -1.0;
        adam_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p.beta(), Some(1.0));
    }

    #[test]
    fn adam_rejects_layout_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::<f64>::init(&tiny(), &mut rng).unwrap();
        let other = ModelParams::<f64>::init(&tiny().with_variant(Variant::Strcnn), &mut rng).unwrap();
        let mut opt = OptimState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &other, &mut opt).is_err());
    }

    fn toy_dataset(seed: u64) -> Vec<PairedSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2)
            .map(|_| {
                let frames: Vec<Frame> = (0..15)
                    .map(|_| {
                        let data = (0..3 * 20 * 18).map(|_| rng.random::<f32>()).collect();
                        Frame::new(20, 18, data).unwrap()
                    })
                    .collect();
                PairedSequence::new(frames.clone(), frames).unwrap()
            })
            .collect()
    }

    #[test]
    fn sampled_crops_share_origin_and_fit() {
        let data = toy_dataset(0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = sample_batch(&data, &mut rng, 4, 13, 8).unwrap();
        assert_eq!(batch.sequences.len(), 4);
        for s in &batch.sequences {
            assert_eq!(s.len(), 13);
            // locate the crop of frame 0 in the source and check every frame uses it
            let src = data.iter().find_map(|v| {
                (0..=v.len() - 13).find_map(|start| {
                    (0..=20 - 8).find_map(|x0| {
                        (0..=18 - 8).find_map(|y0| {
                            (0..13)
                                .all(|i| v.blurry[start + i].crop(x0, y0, 8, 8).unwrap() == s.blurry[i])
                                .then_some(())
                        })
                    })
                })
            });
            assert!(src.is_some());
        }
        let again = sample_batch(&data, &mut ChaCha8Rng::seed_from_u64(7), 4, 13, 8).unwrap();
        assert_eq!(batch, again);
        assert!(sample_batch(&data, &mut rng, 1, 16, 8).is_err());
        assert!(sample_batch(&data, &mut rng, 1, 13, 24).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_dataset(1);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut p = ModelParams::<f32>::init(&tiny(), &mut rng).unwrap();
            let mut opt = OptimState::new(&p, AdamConfig::default());
            (0..3)
                .map(|_| {
                    let b = sample_batch(&data, &mut rng, 2, 4, 8).unwrap();
                    train_sequence_step(&b, &mut p, &mut opt, LossConfig::default()).unwrap().total
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
