//! Classifier architectures with explicit intermediate feature taps.
//!
//! A classifier is a convolutional feature extractor followed by a stack of
//! H hidden fully-connected layers and a linear output head read through
//! softmax. Replay injects batches at hidden-level outputs, so the forward
//! pass exists in three forms: full with taps, extractor-only, and
//! tail-only from an injection level. Backward passes mirror that split,
//! which is what keeps gradient flow above an injection level exactly zero
//! instead of merely small.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::functional::{relu, relu_backward, softmax};
use crate::nn::init::rng_for;
use crate::nn::{Adam, Conv2d, Linear, Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Feature-extractor description. `Identity` passes flattened inputs
/// straight to the fully-connected stack; small test networks use it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractorSpec {
    Conv {
        /// Input image shape (channels, height, width).
        input: (usize, usize, usize),
        layers: Vec<ConvLayerSpec>,
    },
    Identity {
        width: usize,
    },
}

impl ExtractorSpec {
    /// Flattened feature width D produced by the extractor.
    pub fn output_width(&self) -> usize {
        match self {
            ExtractorSpec::Identity { width } => *width,
            ExtractorSpec::Conv { input, layers } => {
                let (mut c, mut h, mut w) = *input;
                for l in layers {
                    h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
                    w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
                    c = l.out_channels;
                }
                c * h * w
            }
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            ExtractorSpec::Identity { width } => (*width, 1, 1),
            ExtractorSpec::Conv { input, .. } => *input,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ExtractorSpec::Identity { width } => {
                if *width == 0 {
                    return Err(Error::config("identity extractor width must be positive"));
                }
            }
            ExtractorSpec::Conv { input, layers } => {
                let (c, mut h, mut w) = *input;
                if c == 0 || h == 0 || w == 0 {
                    return Err(Error::config("extractor input shape must be positive"));
                }
                for (i, l) in layers.iter().enumerate() {
                    if l.out_channels == 0 || l.kernel == 0 || l.stride == 0 {
                        return Err(Error::config(format!("conv layer {i} has a zero dimension")));
                    }
                    if h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel {
                        return Err(Error::config(format!(
                            "conv layer {i} kernel {} exceeds padded input {h}x{w}",
                            l.kernel
                        )));
                    }
                    h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
                    w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
                }
            }
        }
        Ok(())
    }
}

/// Architecture description: extractor, hidden fully-connected widths and
/// the shared output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub extractor: ExtractorSpec,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// The five-layer CIFAR extractor: 3x3 kernels, channel doubling, stride-2
/// downsampling after the first layer. 32x32x3 in, D = 256*2*2 = 1024 out.
fn cifar_extractor() -> ExtractorSpec {
    let mk = |out_channels, stride| ConvLayerSpec {
        out_channels,
        kernel: 3,
        stride,
        padding: 1,
    };
    ExtractorSpec::Conv {
        input: (3, 32, 32),
        layers: vec![mk(16, 1), mk(32, 2), mk(64, 2), mk(128, 2), mk(256, 2)],
    }
}

/// Three-layer extractor for 28x28 grayscale images; D = 64*4*4 = 1024.
fn fashion_extractor() -> ExtractorSpec {
    let mk = |out_channels| ConvLayerSpec {
        out_channels,
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    ExtractorSpec::Conv {
        input: (1, 28, 28),
        layers: vec![mk(16), mk(32), mk(64)],
    }
}

impl ClassifierSpec {
    /// Named presets addressable from harness configs.
    pub fn preset(name: &str) -> Result<ClassifierSpec> {
        let spec = match name {
            "ARCH1" => ClassifierSpec {
                extractor: cifar_extractor(),
                hidden_widths: vec![2000, 2000],
                num_classes: 100,
                activation: Activation::Relu,
            },
            "ARCH2" => ClassifierSpec {
                extractor: cifar_extractor(),
                hidden_widths: vec![1000, 1000, 1000],
                num_classes: 100,
                activation: Activation::Relu,
            },
            "FMNIST3" => ClassifierSpec {
                extractor: fashion_extractor(),
                hidden_widths: vec![50, 50, 50],
                num_classes: 10,
                activation: Activation::Relu,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown architecture preset '{other}' (expected ARCH1, ARCH2 or FMNIST3)"
                )))
            }
        };
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 3] = ["ARCH1", "ARCH2", "FMNIST3"];

    /// Number of hidden fully-connected layers H (the replay levels).
    pub fn num_levels(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        if self.hidden_widths.is_empty() {
            return Err(Error::config("hidden stack must contain at least one layer"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        Ok(())
    }
}

/// Post-activation hidden-layer outputs from one forward pass.
/// `levels[n]` has width `hidden_widths[n]`; `extractor` holds the
/// flattened extractor features of width D that feed the first hidden
/// layer (and the generator's encoder).
#[derive(Debug, Clone)]
pub struct FeatureTaps {
    pub extractor: Array2<f32>,
    pub levels: Vec<Array2<f32>>,
}

#[derive(Debug, Clone)]
enum Extractor {
    Conv { layers: Vec<Conv2d> },
    Identity { width: usize },
}

/// Which layers to freeze. Freezing is always a prefix of the network:
/// the extractor alone, or the extractor plus hidden layers 0..=level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezeScope {
    Extractor,
    ExtractorAndFcUpTo(usize),
}

/// Cache of a full training forward pass.
pub struct TrainCache {
    conv: Vec<ConvLayerCache>,
    pub taps: FeatureTaps,
}

struct ConvLayerCache {
    cols: Array2<f32>,
    post: Array4<f32>,
    in_hw: (usize, usize),
}

/// Cache of a tail-only (injection) training forward pass.
pub struct TailCache {
    level: usize,
    /// inputs[0] is the injected batch; inputs[j] the post-activation of
    /// hidden layer level+j.
    inputs: Vec<Array2<f32>>,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    extractor: Extractor,
    hidden: Vec<Linear>,
    output: Linear,
    instrumented: bool,
}

/// Deterministic construction from a spec and seed.
pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let mut rng = rng_for(seed, "classifier-init");
    let extractor = match &spec.extractor {
        ExtractorSpec::Identity { width } => Extractor::Identity { width: *width },
        ExtractorSpec::Conv { input, layers } => {
            let mut convs = Vec::with_capacity(layers.len());
            let mut in_c = input.0;
            for l in layers {
                convs.push(Conv2d::new(in_c, l.out_channels, l.kernel, l.stride, l.padding, &mut rng));
                in_c = l.out_channels;
            }
            Extractor::Conv { layers: convs }
        }
    };
    let d = spec.extractor.output_width();
    let mut hidden = Vec::with_capacity(spec.hidden_widths.len());
    let mut prev = d;
    for &w in &spec.hidden_widths {
        hidden.push(Linear::new(prev, w, &mut rng));
        prev = w;
    }
    let output = Linear::new(prev, spec.num_classes, &mut rng);
    Ok(Classifier {
        spec: spec.clone(),
        extractor,
        hidden,
        output,
        instrumented: true,
    })
}

impl Classifier {
    pub fn num_levels(&self) -> usize {
        self.spec.num_levels()
    }

    pub fn feature_width(&self) -> usize {
        self.spec.extractor.output_width()
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.spec.hidden_widths[level]
    }

    fn check_images(&self, images: &Array4<f32>) -> Result<()> {
        let (c, h, w) = self.spec.extractor.input_shape();
        let dim = images.dim();
        if (dim.1, dim.2, dim.3) != (c, h, w) {
            return Err(Error::input(format!(
                "image batch shape {:?} does not match expected ({c}, {h}, {w})",
                (dim.1, dim.2, dim.3)
            )));
        }
        Ok(())
    }

    /// Extractor features (flattened, post-activation), inference only.
    pub fn features(&self, images: &Array4<f32>) -> Result<Array2<f32>> {
        self.check_images(images)?;
        let batch = images.dim().0;
        match &self.extractor {
            Extractor::Identity { width } => Ok(images
                .view()
                .into_shape_with_order((batch, *width))
                .unwrap()
                .to_owned()),
            Extractor::Conv { layers, .. } => {
                let mut x = images.clone();
                for conv in layers {
                    let y = conv.forward(&x);
                    x = y.mapv(|v| v.max(0.0));
                }
                let d = x.len() / batch;
                Ok(x.into_shape_with_order((batch, d)).unwrap())
            }
        }
    }

    /// Forward through the fully-connected stack from extractor features,
    /// returning logits and all hidden taps.
    pub fn fc_forward_with_taps(&self, feats: &Array2<f32>) -> Result<(Array2<f32>, FeatureTaps)> {
        if feats.ncols() != self.feature_width() {
            return Err(Error::input(format!(
                "feature width {} does not match extractor width {}",
                feats.ncols(),
                self.feature_width()
            )));
        }
        let mut x = feats.clone();
        let mut levels = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            x = relu(&layer.forward(&x));
            levels.push(x.clone());
        }
        let logits = self.output.forward(&x);
        Ok((
            logits,
            FeatureTaps {
                extractor: feats.clone(),
                levels,
            },
        ))
    }

    /// Full forward with feature taps (inference path).
    pub fn forward_with_taps(&self, images: &Array4<f32>) -> Result<(Array2<f32>, FeatureTaps)> {
        let feats = self.features(images)?;
        self.fc_forward_with_taps(&feats)
    }

    /// Logits for an image batch.
    pub fn forward(&self, images: &Array4<f32>) -> Result<Array2<f32>> {
        Ok(self.forward_with_taps(images)?.0)
    }

    /// Softmax probabilities for an image batch.
    pub fn predict_proba(&self, images: &Array4<f32>) -> Result<Array2<f32>> {
        Ok(softmax(&self.forward(images)?))
    }

    /// Recompute the network tail from features injected at `level`:
    /// hidden layers level+1..H-1 and the output head only.
    pub fn forward_from_level(&self, feats: &Array2<f32>, level: usize) -> Result<Array2<f32>> {
        self.check_level_input(feats, level)?;
        let mut x = feats.clone();
        for layer in &self.hidden[level + 1..] {
            x = relu(&layer.forward(&x));
        }
        Ok(self.output.forward(&x))
    }

    /// Apply one hidden layer (with its activation) to a batch already
    /// living at that layer's input width.
    pub fn hidden_layer_forward(&self, layer: usize, x: &Array2<f32>) -> Result<Array2<f32>> {
        let l = self
            .hidden
            .get(layer)
            .ok_or_else(|| Error::input(format!("hidden layer {layer} out of range")))?;
        if x.ncols() != l.in_dim() {
            return Err(Error::input(format!(
                "width {} does not match hidden layer {layer} input {}",
                x.ncols(),
                l.in_dim()
            )));
        }
        Ok(relu(&l.forward(x)))
    }

    fn check_level_input(&self, feats: &Array2<f32>, level: usize) -> Result<()> {
        if level >= self.num_levels() {
            return Err(Error::input(format!(
                "injection level {level} out of range (H = {})",
                self.num_levels()
            )));
        }
        if feats.ncols() != self.level_width(level) {
            return Err(Error::input(format!(
                "feature width {} does not match level {level} width {}",
                feats.ncols(),
                self.level_width(level)
            )));
        }
        Ok(())
    }

    /// Training forward: caches everything backward needs.
    pub fn forward_train(&self, images: &Array4<f32>) -> Result<(Array2<f32>, TrainCache)> {
        self.check_images(images)?;
        let batch = images.dim().0;
        let mut conv_caches = Vec::new();
        let feats = match &self.extractor {
            Extractor::Identity { width } => images
                .view()
                .into_shape_with_order((batch, *width))
                .unwrap()
                .to_owned(),
            Extractor::Conv { layers, .. } => {
                let mut x = images.clone();
                for conv in layers {
                    let in_hw = (x.dim().2, x.dim().3);
                    let (y, cols) = conv.forward_cached(&x);
                    let post = y.mapv(|v| v.max(0.0));
                    conv_caches.push(ConvLayerCache {
                        cols,
                        post: post.clone(),
                        in_hw,
                    });
                    x = post;
                }
                let d = x.len() / batch;
                x.into_shape_with_order((batch, d)).unwrap()
            }
        };
        let (logits, taps) = self.fc_forward_with_taps(&feats)?;
        Ok((
            logits,
            TrainCache {
                conv: conv_caches,
                taps,
            },
        ))
    }

    /// Backward through the whole network from a logit gradient. Stops at
    /// the frozen prefix: no gradients are computed for or below frozen
    /// layers.
    pub fn backward_train(&mut self, cache: &TrainCache, dlogits: &Array2<f32>) {
        let h = self.hidden.len();
        let last_input = if h == 0 {
            &cache.taps.extractor
        } else {
            &cache.taps.levels[h - 1]
        };
        let mut carry = self
            .output
            .backward(last_input, dlogits, h > 0 || self.extractor_trainable())
            .unwrap_or_default();
        for i in (0..h).rev() {
            if self.hidden[i].frozen() {
                // prefix freezing: nothing below needs gradients
                return;
            }
            let gz = relu_backward(&cache.taps.levels[i], &carry);
            let input = if i == 0 {
                &cache.taps.extractor
            } else {
                &cache.taps.levels[i - 1]
            };
            let want_gx = i > 0 || self.extractor_trainable();
            match self.hidden[i].backward(input, &gz, want_gx) {
                Some(g) => carry = g,
                None => return,
            }
        }
        if !self.extractor_trainable() {
            return;
        }
        if let Extractor::Conv { layers, .. } = &mut self.extractor {
            // reshape the flat feature gradient back to the conv output shape
            let last = cache.conv.last().expect("conv cache");
            let mut gy = carry
                .into_shape_with_order(last.post.raw_dim())
                .expect("feature gradient shape");
            for i in (0..layers.len()).rev() {
                let lc = &cache.conv[i];
                let gz4 = {
                    let mut g = gy.clone();
                    ndarray::Zip::from(&mut g).and(&lc.post).for_each(|gv, &a| {
                        if a <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    g
                };
                let want_gx = i > 0 && !layers[i - 1].w.frozen;
                match layers[i].backward(&lc.cols, lc.in_hw, &gz4, want_gx) {
                    Some(g) => gy = g,
                    None => break,
                }
            }
        }
    }

    fn extractor_trainable(&self) -> bool {
        match &self.extractor {
            Extractor::Identity { .. } => false,
            Extractor::Conv { layers, .. } => layers.iter().any(|c| !c.w.frozen),
        }
    }

    /// Training forward of the tail from an injection level.
    pub fn forward_tail_train(&self, feats: &Array2<f32>, level: usize) -> Result<(Array2<f32>, TailCache)> {
        self.check_level_input(feats, level)?;
        let mut inputs = vec![feats.clone()];
        let mut x = feats.clone();
        for layer in &self.hidden[level + 1..] {
            x = relu(&layer.forward(&x));
            inputs.push(x.clone());
        }
        let logits = self.output.forward(&x);
        Ok((logits, TailCache { level, inputs }))
    }

    /// Backward for a tail pass: touches exactly the layers downstream of
    /// the injection level; the injected features receive no gradient.
    pub fn backward_tail(&mut self, cache: &TailCache, dlogits: &Array2<f32>) {
        let last = cache.inputs.last().unwrap();
        let executed = self.hidden.len() - (cache.level + 1);
        let mut carry = match self.output.backward(last, dlogits, executed > 0) {
            Some(g) => g,
            None => return,
        };
        for (j, layer) in self.hidden[cache.level + 1..].iter_mut().enumerate().rev() {
            let gz = relu_backward(&cache.inputs[j + 1], &carry);
            match layer.backward(&cache.inputs[j], &gz, j > 0) {
                Some(g) => carry = g,
                None => return,
            }
        }
    }

    /// Set freeze flags; frozen parameters stay bit-identical afterwards.
    pub fn freeze(&mut self, scope: FreezeScope) {
        if let Extractor::Conv { layers, .. } = &mut self.extractor {
            for c in layers {
                c.set_frozen(true);
            }
        }
        if let FreezeScope::ExtractorAndFcUpTo(level) = scope {
            let upto = level.min(self.hidden.len().saturating_sub(1));
            for layer in &mut self.hidden[..=upto] {
                layer.set_frozen(true);
            }
        }
    }

    /// Per-layer freeze flags in forward order: extractor layers, hidden
    /// layers, output head.
    pub fn frozen_mask(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        if let Extractor::Conv { layers, .. } = &self.extractor {
            mask.extend(layers.iter().map(|c| c.w.frozen));
        }
        mask.extend(self.hidden.iter().map(|l| l.frozen()));
        mask.push(self.output.frozen());
        mask
    }

    pub fn adam_step(&mut self, opt: &Adam) {
        opt.step(self.params_mut());
    }

    pub fn clear_grads(&mut self) {
        for p in self.params_mut() {
            p.clear_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Extractor::Conv { layers, .. } = &mut self.extractor {
            for c in layers {
                out.extend(c.params_mut());
            }
        }
        for l in &mut self.hidden {
            out.extend(l.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Extractor::Conv { layers, .. } = &self.extractor {
            for c in layers {
                out.extend(c.params());
            }
        }
        for l in &self.hidden {
            out.extend(l.params());
        }
        out.extend(self.output.params());
        out
    }

    /// Named parameter visit used by checkpointing.
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(String, &'a Param)) {
        if let Extractor::Conv { layers, .. } = &self.extractor {
            for (i, c) in layers.iter().enumerate() {
                f(format!("conv{i}.w"), &c.w);
                f(format!("conv{i}.b"), &c.b);
            }
        }
        for (i, l) in self.hidden.iter().enumerate() {
            f(format!("hidden{i}.w"), &l.w);
            f(format!("hidden{i}.b"), &l.b);
        }
        f("output.w".into(), &self.output.w);
        f("output.b".into(), &self.output.b);
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut Param)) {
        if let Extractor::Conv { layers, .. } = &mut self.extractor {
            for (i, c) in layers.iter_mut().enumerate() {
                f(format!("conv{i}.w"), &mut c.w);
                f(format!("conv{i}.b"), &mut c.b);
            }
        }
        for (i, l) in self.hidden.iter_mut().enumerate() {
            f(format!("hidden{i}.w"), &mut l.w);
            f(format!("hidden{i}.b"), &mut l.b);
        }
        f("output.w".into(), &mut self.output.w);
        f("output.b".into(), &mut self.output.b);
    }

    /// Extractor weights in layer order, for pretrain export/import.
    pub fn export_extractor(&self) -> Vec<ndarray::ArrayD<f32>> {
        match &self.extractor {
            Extractor::Identity { .. } => Vec::new(),
            Extractor::Conv { layers, .. } => layers
                .iter()
                .flat_map(|c| [c.w.value.clone(), c.b.value.clone()])
                .collect(),
        }
    }

    pub fn import_extractor(&mut self, weights: &[ndarray::ArrayD<f32>]) -> Result<()> {
        if let Extractor::Conv { layers, .. } = &mut self.extractor {
            if weights.len() != layers.len() * 2 {
                return Err(Error::input(format!(
                    "expected {} extractor tensors, got {}",
                    layers.len() * 2,
                    weights.len()
                )));
            }
            for (i, c) in layers.iter_mut().enumerate() {
                let w = &weights[2 * i];
                let b = &weights[2 * i + 1];
                if w.shape() != c.w.value.shape() || b.shape() != c.b.value.shape() {
                    return Err(Error::input(format!("extractor tensor {i} shape mismatch")));
                }
                c.w.value.assign(w);
                c.b.value.assign(b);
            }
            Ok(())
        } else {
            Err(Error::input("classifier has no convolutional extractor"))
        }
    }

    pub fn set_instrumented(&mut self, on: bool) {
        self.instrumented = on;
    }

    pub fn instrumented(&self) -> bool {
        self.instrumented
    }

    /// Sum of per-parameter touch units since the last reset.
    pub fn collect_touches(&self, weights_only: bool) -> u64 {
        self.params()
            .iter()
            .filter(|p| !weights_only || p.kind == ParamKind::Weight)
            .map(|p| p.touches().0)
            .sum()
    }

    pub fn reset_touches(&mut self) {
        for p in self.params_mut() {
            p.reset_touches();
        }
    }

    /// Snapshot of every parameter value, for bit-identity checks.
    pub fn snapshot_values(&self) -> Vec<ndarray::ArrayD<f32>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::functional::cross_entropy;
    use ndarray::Array4;

    fn toy_mlp(hidden: Vec<usize>, d: usize, classes: usize) -> ClassifierSpec {
        ClassifierSpec {
            extractor: ExtractorSpec::Identity { width: d },
            hidden_widths: hidden,
            num_classes: classes,
            activation: Activation::Relu,
        }
    }

    fn feats_to_images(feats: &Array2<f32>) -> Array4<f32> {
        let (b, d) = feats.dim();
        feats.clone().into_shape_with_order((b, d, 1, 1)).unwrap()
    }

    #[test]
    fn arch1_fc_block_shapes() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let c = build_classifier(&spec, 0).unwrap();
        let d = spec.extractor.output_width();
        assert_eq!(d, 1024);
        assert_eq!(c.hidden[0].w.value.shape(), [d, 2000]);
        assert_eq!(c.hidden[1].w.value.shape(), [2000, 2000]);
        assert_eq!(c.output.w.value.shape(), [2000, 100]);
    }

    #[test]
    fn arch2_fc_block_shapes() {
        let spec = ClassifierSpec::preset("ARCH2").unwrap();
        let c = build_classifier(&spec, 0).unwrap();
        let d = spec.extractor.output_width();
        assert_eq!(c.hidden[0].w.value.shape(), [d, 1000]);
        assert_eq!(c.hidden[1].w.value.shape(), [1000, 1000]);
        assert_eq!(c.hidden[2].w.value.shape(), [1000, 1000]);
        assert_eq!(c.output.w.value.shape(), [1000, 100]);
    }

    #[test]
    fn arch1_taps_have_hidden_widths() {
        let spec = ClassifierSpec::preset("ARCH1").unwrap();
        let c = build_classifier(&spec, 0).unwrap();
        let images = Array4::from_shape_fn((8, 3, 32, 32), |(b, ch, i, j)| {
            ((b + ch + i + j) % 11) as f32 / 11.0
        });
        let (logits, taps) = c.forward_with_taps(&images).unwrap();
        assert_eq!(logits.dim(), (8, 100));
        assert_eq!(taps.levels[0].dim(), (8, 2000));
        assert_eq!(taps.levels[1].dim(), (8, 2000));
        assert_eq!(taps.extractor.dim(), (8, 1024));
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let spec = toy_mlp(vec![8, 8], 4, 3);
        let a = build_classifier(&spec, 42).unwrap();
        let b = build_classifier(&spec, 42).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value, pb.value);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_classifier(&toy_mlp(vec![], 4, 3), 0).is_err());
        assert!(build_classifier(&toy_mlp(vec![0], 4, 3), 0).is_err());
        assert!(build_classifier(&toy_mlp(vec![4], 4, 0), 0).is_err());
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let spec = toy_mlp(vec![6, 6], 5, 4);
        let c = build_classifier(&spec, 1).unwrap();
        let x = crate::nn::init::standard_normal(&mut rng_for(2, "x"), 3, 5);
        let p = c.predict_proba(&feats_to_images(&x)).unwrap();
        for s in p.sum_axis(ndarray::Axis(1)) {
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn tap_tail_equivalence_every_level() {
        let spec = toy_mlp(vec![7, 5, 6], 4, 3);
        let c = build_classifier(&spec, 9).unwrap();
        let x = crate::nn::init::standard_normal(&mut rng_for(3, "x"), 8, 4);
        let (logits, taps) = c.forward_with_taps(&feats_to_images(&x)).unwrap();
        for level in 0..3 {
            let re = c.forward_from_level(&taps.levels[level], level).unwrap();
            assert_eq!(re, logits, "level {level} tail disagrees with full forward");
        }
    }

    #[test]
    fn deepest_level_is_output_layer_only() {
        let spec = toy_mlp(vec![4, 4], 3, 2);
        let c = build_classifier(&spec, 5).unwrap();
        let f = crate::nn::init::standard_normal(&mut rng_for(4, "f"), 2, 4).mapv(|v| v.abs());
        let direct = c.output.forward(&f);
        let via_level = c.forward_from_level(&f, 1).unwrap();
        assert_eq!(direct, via_level);
    }

    #[test]
    fn forward_from_level_rejects_bad_inputs() {
        let spec = toy_mlp(vec![4, 4], 3, 2);
        let c = build_classifier(&spec, 5).unwrap();
        let f = Array2::<f32>::zeros((2, 5));
        assert!(matches!(c.forward_from_level(&f, 0), Err(Error::Input(_))));
        let f = Array2::<f32>::zeros((2, 4));
        assert!(matches!(c.forward_from_level(&f, 2), Err(Error::Input(_))));
    }

    #[test]
    fn tail_backward_masks_upstream_gradients() {
        let spec = toy_mlp(vec![4, 5, 6], 3, 2);
        let mut c = build_classifier(&spec, 7).unwrap();
        let f = crate::nn::init::standard_normal(&mut rng_for(8, "f"), 4, 5).mapv(|v| v.abs());
        let (logits, cache) = c.forward_tail_train(&f, 1).unwrap();
        let (_, dlogits) = cross_entropy(&logits, &[0, 1, 0, 1]);
        c.backward_tail(&cache, &dlogits);
        // hidden 0 and 1 untouched; hidden 2 and output touched
        assert!(!c.hidden[0].w.touched());
        assert!(!c.hidden[1].w.touched());
        assert!(c.hidden[2].w.touched());
        assert!(c.output.w.touched());
    }

    #[test]
    fn freeze_keeps_extractor_bit_identical_under_training() {
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = build_classifier(&spec, 3).unwrap();
        c.freeze(FreezeScope::Extractor);
        let before = c.export_extractor();
        let images = Array4::from_shape_fn((4, 1, 28, 28), |(b, _, i, j)| {
            ((b + i + j) % 7) as f32 / 7.0
        });
        let opt = Adam::with_lr(1e-2);
        for _ in 0..3 {
            let (logits, cache) = c.forward_train(&images).unwrap();
            let (_, dlogits) = cross_entropy(&logits, &[0, 1, 2, 3]);
            c.backward_train(&cache, &dlogits);
            c.adam_step(&opt);
        }
        let after = c.export_extractor();
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unfrozen_extractor_changes_under_training() {
        let spec = ClassifierSpec::preset("FMNIST3").unwrap();
        let mut c = build_classifier(&spec, 3).unwrap();
        let before = c.export_extractor();
        let images = Array4::from_shape_fn((4, 1, 28, 28), |(b, _, i, j)| {
            ((b + i + j) % 7) as f32 / 7.0
        });
        let opt = Adam::with_lr(1e-2);
        let (logits, cache) = c.forward_train(&images).unwrap();
        let (_, dlogits) = cross_entropy(&logits, &[0, 1, 2, 3]);
        c.backward_train(&cache, &dlogits);
        c.adam_step(&opt);
        let after = c.export_extractor();
        assert!(before.iter().zip(after.iter()).any(|(a, b)| a != b));
    }
}
