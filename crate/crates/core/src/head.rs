//! The trainable refinement head.
//!
//! ```text
//!   object, background ──conv3x3──▶ unified ──conv3x3 (x3)──▶ type maps
//!   type map k ⊙ split mask k ──▶ gated map k ──fc──▶ count unit k
//!   sigmoid(type map "good") vs. ground-truth union ──▶ pixelwise CE
//! ```
//!
//! Index 0 is the good branch, 1 the merged (type 1) branch and 2 the
//! fragmented (type 2) branch. All arithmetic is `f64`. Split masks are
//! constants: no gradient flows back into binarization or the splitter.

use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::mask::{BinaryMask, LabelMap, Plane, ScoreMapPair};
use crate::splitter::SplitResult;

pub const GOOD: usize = 0;
pub const BAD_TYPE1: usize = 1;
pub const BAD_TYPE2: usize = 2;

/// A 3x3 kernel over `channels` input planes, plus a bias.
///
/// Weights are laid out `[channel][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ConvKernel {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels * 9],
            bias: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.len() / 9
    }

    #[inline]
    pub fn tap(&self, c: usize, ky: usize, kx: usize) -> f64 {
        self.weights[c * 9 + ky * 3 + kx]
    }
}

/// Fully connected scalar unit over a flattened map.
#[derive(Debug, Clone, PartialEq)]
pub struct FcUnit {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Every learnable value of the head. Gradients and Adam moments share this
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    height: usize,
    width: usize,
    pub unified: ConvKernel,
    pub type_convs: [ConvKernel; 3],
    pub units: [FcUnit; 3],
}

/// `19 + 30 + 3 * (h * w + 1)`: one two-channel 3x3 conv, three one-channel
/// 3x3 convs and three fully connected count units.
pub fn head_param_count(height: usize, width: usize) -> usize {
    19 + 30 + 3 * (height * width + 1)
}

impl HeadParams {
    pub fn zeros(height: usize, width: usize) -> Self {
        let unit = FcUnit {
            weights: vec![0.0; height * width],
            bias: 0.0,
        };
        Self {
            height,
            width,
            unified: ConvKernel::zeros(2),
            type_convs: [
                ConvKernel::zeros(1),
                ConvKernel::zeros(1),
                ConvKernel::zeros(1),
            ],
            units: [unit.clone(), unit.clone(), unit],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for every weight; biases start at 0.
    pub fn random<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(height, width);
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in w {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&mut p.unified.weights, 18, rng);
        for k in &mut p.type_convs {
            fill(&mut k.weights, 9, rng);
        }
        for u in &mut p.units {
            fill(&mut u.weights, height * width, rng);
        }
        p
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        head_param_count(self.height, self.width)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattens in a fixed order: unified conv, the three type convs, the
    /// three units; each block is weights followed by bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.unified.weights);
        out.push(self.unified.bias);
        for k in &self.type_convs {
            out.extend_from_slice(&k.weights);
            out.push(k.bias);
        }
        for u in &self.units {
            out.extend_from_slice(&u.weights);
            out.push(u.bias);
        }
        out
    }

    /// Inverse of [`HeadParams::to_flat`].
    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64], bias: &mut f64| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            *bias = tail[0];
            rest = &tail[1..];
        };
        take(&mut self.unified.weights, &mut self.unified.bias);
        for k in &mut self.type_convs {
            take(&mut k.weights, &mut k.bias);
        }
        for u in &mut self.units {
            take(&mut u.weights, &mut u.bias);
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &HeadParams) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "head for {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Stride-1, zero-padded 3x3 cross-correlation over `inputs.len()` channels.
pub fn conv3x3(inputs: &[&Plane], kernel: &ConvKernel) -> Result<Plane> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("conv3x3 needs at least one channel".into()))?;
    if kernel.channels() != inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} channels, input has {}",
            kernel.channels(),
            inputs.len()
        )));
    }
    let (w, h) = first.dims();
    for p in inputs {
        check_dims((w, h), p.dims())?;
    }
    let mut out = Plane::filled(w, h, kernel.bias);
    for (c, input) in inputs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x + kx;
                        if sx == 0 || sx > w {
                            continue;
                        }
                        acc += kernel.tap(c, ky, kx) * input.get(sx - 1, sy - 1);
                    }
                }
                out.data_mut()[y * w + x] += acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of a [`conv3x3`] output w.r.t. the kernel and the inputs.
fn conv3x3_backward(
    inputs: &[&Plane],
    kernel: &ConvKernel,
    d_out: &Plane,
) -> (ConvKernel, Vec<Plane>) {
    let (w, h) = d_out.dims();
    let mut d_kernel = ConvKernel::zeros(inputs.len());
    let mut d_inputs = vec![Plane::zeros(w, h); inputs.len()];
    d_kernel.bias = d_out.data().iter().sum();
    for (c, input) in inputs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let g = d_out.get(x, y);
                if g == 0.0 {
                    continue;
                }
                for ky in 0..3 {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x + kx;
                        if sx == 0 || sx > w {
                            continue;
                        }
                        let idx = (sy - 1) * w + sx - 1;
                        d_kernel.weights[c * 9 + ky * 3 + kx] += g * input.data()[idx];
                        d_inputs[c].data_mut()[idx] += g * kernel.tap(c, ky, kx);
                    }
                }
            }
        }
    }
    (d_kernel, d_inputs)
}

/// Pixelwise product of a score map with a split mask.
pub fn gate(map: &Plane, split_mask: &BinaryMask) -> Result<Plane> {
    check_dims(map.dims(), split_mask.dims())?;
    let data = map
        .data()
        .iter()
        .zip(split_mask.data())
        .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
        .collect();
    Plane::new(map.width(), map.height(), data)
}

/// Dot product of the row-major flattened map with `weights`, plus `bias`.
pub fn fc_unit(map: &Plane, weights: &[f64], bias: f64) -> Result<f64> {
    if weights.len() != map.data().len() {
        return Err(Error::ShapeMismatch(format!(
            "fc unit has {} weights for {} inputs",
            weights.len(),
            map.data().len()
        )));
    }
    Ok(map
        .data()
        .iter()
        .zip(weights)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + bias)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub unified_map: Plane,
    pub type_maps: [Plane; 3],
    /// Type maps gated by the split masks (zero outside each type's blobs).
    pub gated_maps: [Plane; 3],
    pub unit_outputs: [f64; 3],
    pub good_sigmoid: Plane,
}

pub fn head_forward(
    scores: &ScoreMapPair,
    split: &SplitResult,
    params: &HeadParams,
) -> Result<ForwardCache> {
    let dims = (params.width, params.height);
    check_dims(dims, scores.dims())?;
    for m in split.masks() {
        check_dims(dims, m.dims())?;
    }

    let unified = conv3x3(&[scores.object(), scores.background()], &params.unified)?;
    let type_maps = [
        conv3x3(&[&unified], &params.type_convs[0])?,
        conv3x3(&[&unified], &params.type_convs[1])?,
        conv3x3(&[&unified], &params.type_convs[2])?,
    ];
    let masks = split.masks();
    let gated_maps = [
        gate(&type_maps[0], masks[0])?,
        gate(&type_maps[1], masks[1])?,
        gate(&type_maps[2], masks[2])?,
    ];
    let mut unit_outputs = [0.0; 3];
    for k in 0..3 {
        unit_outputs[k] = fc_unit(
            &gated_maps[k],
            &params.units[k].weights,
            params.units[k].bias,
        )?;
    }
    let good = &type_maps[GOOD];
    let good_sigmoid = Plane::new(
        good.width(),
        good.height(),
        good.data().iter().map(|&s| sigmoid(s)).collect(),
    )?;

    Ok(ForwardCache {
        unified_map: unified,
        type_maps,
        gated_maps,
        unit_outputs,
        good_sigmoid,
    })
}

/// Mean pixelwise binary cross-entropy of `sigmoid(logits)` against `target`,
/// evaluated as `max(s, 0) - s*t + ln(1 + exp(-|s|))`.
pub fn sigmoid_ce_loss(logits: &Plane, target: &BinaryMask) -> Result<f64> {
    check_dims(logits.dims(), target.dims())?;
    logits.check_finite()?;
    let n = logits.data().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&s, &t)| s.max(0.0) - s * t as f64 + (-s.abs()).exp().ln_1p())
        .sum();
    Ok(sum / n as f64)
}

/// `0.5 * (predicted - target)^2`.
pub fn euclid_loss(predicted: f64, target: f64) -> f64 {
    let d = predicted - target;
    0.5 * d * d
}

/// The four loss terms and their unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_gs: f64,
    pub l_good: f64,
    pub l_badcows: f64,
    pub l_badpreds: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(l_gs: f64, l_good: f64, l_badcows: f64, l_badpreds: f64) -> Self {
        Self {
            l_gs,
            l_good,
            l_badcows,
            l_badpreds,
            total: l_gs + l_good + l_badcows + l_badpreds,
        }
    }
}

/// What the two bad-count units are trained towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BadCountTarget {
    /// The type 1 / type 2 counts reported by the splitter.
    #[default]
    SplitterCounts,
    /// Zero, i.e. the head is pushed to predict no bad blobs.
    Zero,
}

/// Supervision for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    /// Union of all ground-truth instances; target of the pixelwise term.
    pub full_gt: BinaryMask,
    /// Targets of the good, type 1 and type 2 count units.
    pub counts: [f64; 3],
}

impl LossTargets {
    pub fn new(gt: &LabelMap, split: &SplitResult, bad: BadCountTarget) -> Self {
        let counts = match bad {
            BadCountTarget::SplitterCounts => [
                gt.count() as f64,
                split.n_bad_type1 as f64,
                split.n_bad_type2 as f64,
            ],
            BadCountTarget::Zero => [gt.count() as f64, 0.0, 0.0],
        };
        Self {
            full_gt: gt.union_mask(),
            counts,
        }
    }
}

/// Loss of a forward pass with the default targets: the good unit predicts the
/// number of ground-truth instances, the bad units predict the splitter's
/// counts.
pub fn total_loss(
    cache: &ForwardCache,
    gt: &LabelMap,
    split: &SplitResult,
) -> Result<LossBreakdown> {
    total_loss_with(
        cache,
        &LossTargets::new(gt, split, BadCountTarget::default()),
    )
}

pub fn total_loss_with(cache: &ForwardCache, targets: &LossTargets) -> Result<LossBreakdown> {
    let l_gs = sigmoid_ce_loss(&cache.type_maps[GOOD], &targets.full_gt)?;
    let u = &cache.unit_outputs;
    let t = &targets.counts;
    Ok(LossBreakdown::new(
        l_gs,
        euclid_loss(u[GOOD], t[GOOD]),
        euclid_loss(u[BAD_TYPE1], t[BAD_TYPE1]),
        euclid_loss(u[BAD_TYPE2], t[BAD_TYPE2]),
    ))
}

/// Exact gradient of [`total_loss_with`] w.r.t. every head parameter.
pub fn head_backward(
    cache: &ForwardCache,
    scores: &ScoreMapPair,
    split: &SplitResult,
    targets: &LossTargets,
    params: &HeadParams,
) -> Result<HeadParams> {
    let (w, h) = (params.width, params.height);
    check_dims((w, h), scores.dims())?;
    check_dims((w, h), cache.unified_map.dims())?;
    check_dims((w, h), targets.full_gt.dims())?;

    let mut grad = HeadParams::zeros(h, w);
    let masks = split.masks();
    let n = (w * h) as f64;
    let mut d_unified = Plane::zeros(w, h);

    for (k, mask) in masks.iter().enumerate() {
        check_dims((w, h), mask.dims())?;
        let d_unit = cache.unit_outputs[k] - targets.counts[k];
        grad.units[k].bias = d_unit;
        for (g, &v) in grad.units[k]
            .weights
            .iter_mut()
            .zip(cache.gated_maps[k].data())
        {
            *g = d_unit * v;
        }

        // through the gate and the fc unit
        let mut d_type = Plane::zeros(w, h);
        for (i, d) in d_type.data_mut().iter_mut().enumerate() {
            if mask.data()[i] != 0 {
                *d = d_unit * params.units[k].weights[i];
            }
        }
        if k == GOOD {
            for ((d, &p), &t) in d_type
                .data_mut()
                .iter_mut()
                .zip(cache.good_sigmoid.data())
                .zip(targets.full_gt.data())
            {
                *d += (p - t as f64) / n;
            }
        }

        let (d_kernel, d_in) =
            conv3x3_backward(&[&cache.unified_map], &params.type_convs[k], &d_type);
        grad.type_convs[k] = d_kernel;
        for (a, b) in d_unified.data_mut().iter_mut().zip(d_in[0].data()) {
            *a += b;
        }
    }

    let (d_kernel, _) = conv3x3_backward(
        &[scores.object(), scores.background()],
        &params.unified,
        &d_unified,
    );
    grad.unified = d_kernel;
    Ok(grad)
}

/// Forward pass, loss and gradient in one call.
pub fn loss_and_gradient(
    scores: &ScoreMapPair,
    split: &SplitResult,
    targets: &LossTargets,
    params: &HeadParams,
) -> Result<(LossBreakdown, HeadParams)> {
    let cache = head_forward(scores, split, params)?;
    let loss = total_loss_with(&cache, targets)?;
    let grad = head_backward(&cache, scores, split, targets, params)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first_moments: Vec<f64>,
    second_moments: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &HeadParams) -> Self {
        Self {
            config,
            step: 0,
            first_moments: vec![0.0; params.len()],
            second_moments: vec![0.0; params.len()],
        }
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.first_moments
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.second_moments
    }
}

/// One bias-corrected Adam update of a flat parameter vector.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if values.len() != grads.len() || values.len() != state.first_moments.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            values.len(),
            grads.len(),
            state.first_moments.len()
        )));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..values.len() {
        let g = grads[i];
        let m = beta1 * state.first_moments[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moments[i] + (1.0 - beta2) * g * g;
        state.first_moments[i] = m;
        state.second_moments[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

pub fn adam_step(params: &mut HeadParams, grads: &HeadParams, state: &mut AdamState) -> Result<()> {
    params.check_same_shape(grads)?;
    let mut flat = params.to_flat();
    adam_update(&mut flat, &grads.to_flat(), state)?;
    params.copy_from_flat(&flat)
}
