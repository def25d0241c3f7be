//! Feature-space variational autoencoder.
//!
//! The encoder copies the classifier's fully-connected shapes (D -> h_0 ->
//! ... -> h_{H-1}) and the decoder mirrors them in reverse, so decoder
//! stage outputs line up with classifier hidden levels: stage 0 emits
//! level H-1 features straight from the latent, and each further stage
//! emits one level shallower, down to the extractor width D. Sampling for
//! level n therefore runs only a prefix of the decoder, which is the
//! generator-side half of the replay compute saving.
//!
//! The reconstruction loss sums a mean-squared error per mirrored level
//! (including the extractor-width reconstruction), and the latent loss is
//! the Gaussian KL against a standard-normal prior, or against one
//! learnable mean per class in conditional mode.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ClassifierSpec, FeatureTaps};
use crate::error::{Error, Result};
use crate::nn::functional::{relu, relu_backward, sigmoid, sigmoid_backward};
use crate::nn::init::{rng_for, standard_normal};
use crate::nn::{Adam, Linear, Param, ParamKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// [D, h_0, ..., h_{H-1}] copied from the classifier.
    pub mirrored_widths: Vec<usize>,
    pub latent_dim: usize,
    pub conditional: bool,
}

impl GeneratorSpec {
    pub fn num_levels(&self) -> usize {
        self.mirrored_widths.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLosses {
    pub recon: f64,
    pub latent: f64,
    pub vae: f64,
}

pub struct Generator {
    pub spec: GeneratorSpec,
    enc: Vec<Linear>,
    mu_head: Linear,
    logvar_head: Linear,
    /// dec[0]: latent -> h_{H-1}; dec[j]: one level shallower per stage,
    /// ending at width D.
    dec: Vec<Linear>,
    class_means: Option<Param>,
    seen_classes: BTreeSet<usize>,
    stages_executed: AtomicU64,
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Generator {
            spec: self.spec.clone(),
            enc: self.enc.clone(),
            mu_head: self.mu_head.clone(),
            logvar_head: self.logvar_head.clone(),
            dec: self.dec.clone(),
            class_means: self.class_means.clone(),
            seen_classes: self.seen_classes.clone(),
            stages_executed: AtomicU64::new(self.stages_executed.load(Ordering::Relaxed)),
        }
    }
}

/// Deterministic construction mirroring `classifier_spec`'s FC stack.
pub fn build_generator(classifier_spec: &ClassifierSpec, latent_dim: usize, seed: u64) -> Result<Generator> {
    Generator::build(classifier_spec, latent_dim, false, seed)
}

/// Conditional variant: one learnable latent prior mean per class.
pub fn build_conditional_generator(
    classifier_spec: &ClassifierSpec,
    latent_dim: usize,
    seed: u64,
) -> Result<Generator> {
    Generator::build(classifier_spec, latent_dim, true, seed)
}

impl Generator {
    pub fn build(classifier_spec: &ClassifierSpec, latent_dim: usize, conditional: bool, seed: u64) -> Result<Self> {
        classifier_spec.validate()?;
        if latent_dim == 0 {
            return Err(Error::config("latent_dim must be positive"));
        }
        let mut widths = vec![classifier_spec.extractor.output_width()];
        widths.extend_from_slice(&classifier_spec.hidden_widths);
        let h = widths.len() - 1;
        let mut rng = rng_for(seed, "generator-init");
        let mut enc = Vec::with_capacity(h);
        for i in 0..h {
            enc.push(Linear::new(widths[i], widths[i + 1], &mut rng));
        }
        let mu_head = Linear::new(widths[h], latent_dim, &mut rng);
        let logvar_head = Linear::new(widths[h], latent_dim, &mut rng);
        let mut dec = Vec::with_capacity(h + 1);
        dec.push(Linear::new(latent_dim, widths[h], &mut rng));
        for j in 1..=h {
            dec.push(Linear::new(widths[h + 1 - j], widths[h - j], &mut rng));
        }
        let class_means = conditional.then(|| {
            Param::new(
                standard_normal(&mut rng, classifier_spec.num_classes, latent_dim)
                    .mapv(|v| v * 0.1)
                    .into_dyn(),
                ParamKind::Weight,
            )
        });
        Ok(Generator {
            spec: GeneratorSpec {
                mirrored_widths: widths,
                latent_dim,
                conditional,
            },
            enc,
            mu_head,
            logvar_head,
            dec,
            class_means,
            seen_classes: BTreeSet::new(),
            stages_executed: AtomicU64::new(0),
        })
    }

    pub fn num_levels(&self) -> usize {
        self.spec.num_levels()
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.spec.mirrored_widths[level + 1]
    }

    pub fn feature_width(&self) -> usize {
        self.spec.mirrored_widths[0]
    }

    /// Number of decoder stages executed so far (monotone counter).
    pub fn stages_executed(&self) -> u64 {
        self.stages_executed.load(Ordering::Relaxed)
    }

    pub fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        self.enc.iter().map(|l| (l.in_dim(), l.out_dim())).collect()
    }

    pub fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        self.dec.iter().map(|l| (l.in_dim(), l.out_dim())).collect()
    }

    /// Encode extractor-level features into latent statistics and a
    /// reparameterized sample z = mu + exp(logvar/2) * eps.
    pub fn encode(&self, feats: &Array2<f32>, rng: &mut ChaCha8Rng) -> Result<(Array2<f32>, Array2<f32>, Array2<f32>)> {
        let (mu, logvar, _) = self.encode_cached(feats)?;
        let eps = standard_normal(rng, mu.nrows(), mu.ncols());
        let z = reparameterize(&mu, &logvar, &eps);
        Ok((mu, logvar, z))
    }

    fn encode_cached(&self, feats: &Array2<f32>) -> Result<(Array2<f32>, Array2<f32>, Vec<Array2<f32>>)> {
        if feats.ncols() != self.feature_width() {
            return Err(Error::input(format!(
                "feature width {} does not match encoder input width {}",
                feats.ncols(),
                self.feature_width()
            )));
        }
        let mut acts = vec![feats.clone()];
        let mut x = feats.clone();
        for layer in &self.enc {
            x = relu(&layer.forward(&x));
            acts.push(x.clone());
        }
        let mu = self.mu_head.forward(&x);
        let logvar = self.logvar_head.forward(&x);
        Ok((mu, logvar, acts))
    }

    /// Run only the decoder prefix whose output width equals
    /// `hidden_widths[level]`. Deeper stages are not executed.
    pub fn decode_to_level(&self, z: &Array2<f32>, level: usize) -> Result<Array2<f32>> {
        let h = self.num_levels();
        if level >= h {
            return Err(Error::input(format!("level {level} out of range (H = {h})")));
        }
        let stages = h - level;
        let mut x = z.clone();
        for layer in &self.dec[..stages] {
            x = relu(&layer.forward(&x));
            self.stages_executed.fetch_add(1, Ordering::Relaxed);
        }
        Ok(x)
    }

    /// Full decode down to extractor width D (all stages).
    pub fn decode_to_features(&self, z: &Array2<f32>) -> Array2<f32> {
        let mut x = z.clone();
        for layer in &self.dec {
            x = relu(&layer.forward(&x));
            self.stages_executed.fetch_add(1, Ordering::Relaxed);
        }
        x
    }

    fn prior_sample(&self, count: usize, class_hint: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Array2<f32>> {
        if class_hint.is_some() && !self.spec.conditional {
            return Err(Error::config(
                "class_hint requires a conditional generator",
            ));
        }
        let mut z = standard_normal(rng, count, self.spec.latent_dim);
        if let Some(means) = &self.class_means {
            let means = means.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let pool: Vec<usize> = self.seen_classes.iter().copied().collect();
            for mut row in z.rows_mut() {
                let c = match class_hint {
                    Some(c) => c,
                    None if !pool.is_empty() => {
                        use rand::Rng;
                        pool[rng.random_range(0..pool.len())]
                    }
                    None => continue,
                };
                row += &means.row(c);
            }
        }
        Ok(z)
    }

    /// Draw `count` feature vectors for injection at `level`.
    pub fn sample_features(
        &self,
        level: usize,
        count: usize,
        class_hint: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f32>> {
        let h = self.num_levels();
        if level >= h {
            return Err(Error::input(format!("level {level} out of range (H = {h})")));
        }
        if count == 0 {
            return Ok(Array2::zeros((0, self.level_width(level))));
        }
        let z = self.prior_sample(count, class_hint, rng)?;
        self.decode_to_level(&z, level)
    }

    /// Draw extractor-width features (full decode), used to rehearse the
    /// generator itself.
    pub fn sample_extractor_features(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f32>> {
        if count == 0 {
            return Ok(Array2::zeros((0, self.feature_width())));
        }
        let z = self.prior_sample(count, None, rng)?;
        Ok(self.decode_to_features(&z))
    }

    /// VAE losses for a batch of real extractor features and their
    /// classifier taps. Inference-only; `rng` drives the latent sample.
    pub fn generator_loss(
        &self,
        feats: &Array2<f32>,
        taps: &FeatureTaps,
        labels: Option<&[usize]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorLosses> {
        let (losses, _) = self.vae_forward(feats, taps, labels, rng)?;
        Ok(losses)
    }

    fn vae_forward(
        &self,
        feats: &Array2<f32>,
        taps: &FeatureTaps,
        labels: Option<&[usize]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(GeneratorLosses, VaeCache)> {
        let h = self.num_levels();
        if taps.levels.len() != h {
            return Err(Error::input(format!(
                "expected {h} tap levels, got {}",
                taps.levels.len()
            )));
        }
        if self.spec.conditional && labels.is_none() {
            return Err(Error::config("conditional generator needs labels for the latent loss"));
        }
        let (mu, logvar, enc_acts) = self.encode_cached(feats)?;
        let batch = feats.nrows();
        let eps = standard_normal(rng, batch, self.spec.latent_dim);
        let z = reparameterize(&mu, &logvar, &eps);

        // decode all stages; stage j targets tap level h-1-j, last stage
        // targets the extractor features themselves
        let mut dec_outs = Vec::with_capacity(h + 1);
        let mut x = z.clone();
        for layer in &self.dec {
            x = relu(&layer.forward(&x));
            self.stages_executed.fetch_add(1, Ordering::Relaxed);
            dec_outs.push(x.clone());
        }

        let mut recon = 0.0f64;
        for (j, out) in dec_outs.iter().enumerate() {
            let target = self.stage_target(j, feats, taps);
            let n = out.len() as f64;
            recon += out
                .iter()
                .zip(target.iter())
                .map(|(&p, &t)| {
                    let d = p as f64 - t as f64;
                    d * d
                })
                .sum::<f64>()
                / n;
        }

        let latent = self.latent_loss(&mu, &logvar, labels);
        let losses = GeneratorLosses {
            recon,
            latent,
            vae: recon + latent,
        };
        Ok((
            losses,
            VaeCache {
                enc_acts,
                mu,
                logvar,
                eps,
                z,
                dec_outs,
            },
        ))
    }

    fn stage_target<'a>(&self, stage: usize, feats: &'a Array2<f32>, taps: &'a FeatureTaps) -> &'a Array2<f32> {
        let h = self.num_levels();
        if stage == h {
            feats
        } else {
            &taps.levels[h - 1 - stage]
        }
    }

    fn latent_loss(&self, mu: &Array2<f32>, logvar: &Array2<f32>, labels: Option<&[usize]>) -> f64 {
        let batch = mu.nrows() as f64;
        let means = self.class_means.as_ref().map(|m| {
            m.value.view().into_dimensionality::<ndarray::Ix2>().unwrap()
        });
        let mut kl = 0.0f64;
        for (i, (mrow, lvrow)) in mu.rows().into_iter().zip(logvar.rows()).enumerate() {
            for (j, (&m, &lv)) in mrow.iter().zip(lvrow.iter()).enumerate() {
                let centered = match (&means, labels) {
                    (Some(cm), Some(ls)) => m as f64 - cm[[ls[i], j]] as f64,
                    _ => m as f64,
                };
                kl += 0.5 * (centered * centered + (lv as f64).exp() - 1.0 - lv as f64);
            }
        }
        kl / batch
    }

    /// Accumulate gradients of `weight * L_vae` without stepping the
    /// optimizer; loss values are reported unscaled.
    pub fn accumulate_loss_gradients(
        &mut self,
        feats: &Array2<f32>,
        taps: &FeatureTaps,
        labels: Option<&[usize]>,
        weight: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorLosses> {
        let (losses, cache) = self.vae_forward(feats, taps, labels, rng)?;
        self.backward(&cache, feats, taps, labels, weight);
        Ok(losses)
    }

    /// One optimization step of the VAE on real features + taps.
    pub fn train_step(
        &mut self,
        feats: &Array2<f32>,
        taps: &FeatureTaps,
        labels: Option<&[usize]>,
        weight: f32,
        opt: &Adam,
        rng: &mut ChaCha8Rng,
    ) -> Result<GeneratorLosses> {
        let losses = self.accumulate_loss_gradients(feats, taps, labels, weight, rng)?;
        self.adam_step(opt);
        Ok(losses)
    }

    /// Accumulate gradients of weight * L_vae. Returns nothing; callers
    /// step the optimizer.
    fn backward(
        &mut self,
        cache: &VaeCache,
        feats: &Array2<f32>,
        taps: &FeatureTaps,
        labels: Option<&[usize]>,
        weight: f32,
    ) {
        let h = self.num_levels();
        let batch = feats.nrows();
        let bf = batch as f32;

        // reconstruction gradients stage by stage, deepest first
        let mut carry: Option<Array2<f32>> = None;
        for j in (0..=h).rev() {
            let out = &cache.dec_outs[j];
            let target = self.stage_target(j, feats, taps);
            let n = out.len() as f32;
            let mut go = (out - target) * (2.0 * weight / n);
            if let Some(c) = carry.take() {
                go += &c;
            }
            let gz = relu_backward(out, &go);
            let input = if j == 0 { &cache.z } else { &cache.dec_outs[j - 1] };
            carry = self.dec[j].backward(input, &gz, true);
        }
        let dz = carry.expect("latent gradient");

        // reparameterization: z = mu + exp(logvar/2) * eps
        let sigma = cache.logvar.mapv(|v| (0.5 * v).exp());
        let mut dmu = dz.clone();
        let mut dlv = &dz * &sigma * &cache.eps * 0.5;

        // KL gradients
        let means = self.class_means.as_ref().map(|m| {
            m.value
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
                .to_owned()
        });
        let mut gmeans = means.as_ref().map(|m| Array2::<f32>::zeros(m.raw_dim()));
        for i in 0..batch {
            for j in 0..self.spec.latent_dim {
                let centered = match (&means, labels) {
                    (Some(cm), Some(ls)) => cache.mu[[i, j]] - cm[[ls[i], j]],
                    _ => cache.mu[[i, j]],
                };
                dmu[[i, j]] += weight * centered / bf;
                if let (Some(gm), Some(ls)) = (gmeans.as_mut(), labels) {
                    gm[[ls[i], j]] -= weight * centered / bf;
                }
                dlv[[i, j]] += weight * 0.5 * (cache.logvar[[i, j]].exp() - 1.0) / bf;
            }
        }
        if let (Some(gm), Some(p)) = (gmeans, self.class_means.as_mut()) {
            p.accumulate(gm.into_dyn().view(), batch);
        }

        let e_last = cache.enc_acts.last().unwrap();
        let g1 = self.mu_head.backward(e_last, &dmu, true).unwrap();
        let g2 = self.logvar_head.backward(e_last, &dlv, true).unwrap();
        let mut ge = g1 + g2;
        for i in (0..h).rev() {
            let gz = relu_backward(&cache.enc_acts[i + 1], &ge);
            match self.enc[i].backward(&cache.enc_acts[i], &gz, i > 0) {
                Some(g) => ge = g,
                None => break,
            }
        }
        if let Some(ls) = labels {
            self.seen_classes.extend(ls.iter().copied());
        }
    }

    pub fn note_seen_classes(&mut self, labels: &[usize]) {
        self.seen_classes.extend(labels.iter().copied());
    }

    pub fn adam_step(&mut self, opt: &Adam) {
        opt.step(self.params_mut());
    }

    /// Freeze the decoder stack (used by the frozen-generative baseline).
    pub fn freeze_decoder(&mut self) {
        for l in &mut self.dec {
            l.set_frozen(true);
        }
    }

    pub fn decoder_values(&self) -> Vec<ndarray::ArrayD<f32>> {
        self.dec.iter().flat_map(|l| [l.w.value.clone(), l.b.value.clone()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.enc {
            out.extend(l.params_mut());
        }
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        for l in &mut self.dec {
            out.extend(l.params_mut());
        }
        if let Some(m) = self.class_means.as_mut() {
            out.push(m);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.enc {
            out.extend(l.params());
        }
        out.extend(self.mu_head.params());
        out.extend(self.logvar_head.params());
        for l in &self.dec {
            out.extend(l.params());
        }
        if let Some(m) = self.class_means.as_ref() {
            out.push(m);
        }
        out
    }

    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(String, &'a Param)) {
        for (i, l) in self.enc.iter().enumerate() {
            f(format!("enc{i}.w"), &l.w);
            f(format!("enc{i}.b"), &l.b);
        }
        f("mu.w".into(), &self.mu_head.w);
        f("mu.b".into(), &self.mu_head.b);
        f("logvar.w".into(), &self.logvar_head.w);
        f("logvar.b".into(), &self.logvar_head.b);
        for (i, l) in self.dec.iter().enumerate() {
            f(format!("dec{i}.w"), &l.w);
            f(format!("dec{i}.b"), &l.b);
        }
        if let Some(m) = &self.class_means {
            f("class_means".into(), m);
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut Param)) {
        for (i, l) in self.enc.iter_mut().enumerate() {
            f(format!("enc{i}.w"), &mut l.w);
            f(format!("enc{i}.b"), &mut l.b);
        }
        f("mu.w".into(), &mut self.mu_head.w);
        f("mu.b".into(), &mut self.mu_head.b);
        f("logvar.w".into(), &mut self.logvar_head.w);
        f("logvar.b".into(), &mut self.logvar_head.b);
        for (i, l) in self.dec.iter_mut().enumerate() {
            f(format!("dec{i}.w"), &mut l.w);
            f(format!("dec{i}.b"), &mut l.b);
        }
        if let Some(m) = self.class_means.as_mut() {
            f("class_means".into(), m);
        }
    }
}

struct VaeCache {
    enc_acts: Vec<Array2<f32>>,
    mu: Array2<f32>,
    logvar: Array2<f32>,
    eps: Array2<f32>,
    z: Array2<f32>,
    dec_outs: Vec<Array2<f32>>,
}

fn reparameterize(mu: &Array2<f32>, logvar: &Array2<f32>, eps: &Array2<f32>) -> Array2<f32> {
    mu + &(logvar.mapv(|v| (0.5 * v).exp()) * eps)
}

/// Closed-form Gaussian KL against N(0, I), summed over dimensions and
/// averaged over the batch. Exposed for diagnostics and tests.
pub fn kl_divergence(mu: &Array2<f32>, logvar: &Array2<f32>) -> f64 {
    let batch = mu.nrows() as f64;
    let mut kl = 0.0f64;
    for (&m, &lv) in mu.iter().zip(logvar.iter()) {
        kl += 0.5 * ((m as f64) * (m as f64) + (lv as f64).exp() - 1.0 - lv as f64);
    }
    kl / batch
}

/// Plain image-space VAE on flattened inputs, kept for the standard
/// generative-replay baseline on simple datasets. Sigmoid output over
/// pixel intensities, MSE reconstruction.
pub struct ImageVae {
    pub input_dim: usize,
    pub latent_dim: usize,
    enc: Vec<Linear>,
    mu_head: Linear,
    logvar_head: Linear,
    dec: Vec<Linear>,
    out: Linear,
}

impl Clone for ImageVae {
    fn clone(&self) -> Self {
        ImageVae {
            input_dim: self.input_dim,
            latent_dim: self.latent_dim,
            enc: self.enc.clone(),
            mu_head: self.mu_head.clone(),
            logvar_head: self.logvar_head.clone(),
            dec: self.dec.clone(),
            out: self.out.clone(),
        }
    }
}

impl ImageVae {
    pub fn build(input_dim: usize, hidden: &[usize], latent_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 || hidden.is_empty() {
            return Err(Error::config("image VAE dimensions must be positive"));
        }
        let mut rng = rng_for(seed, "image-vae-init");
        let mut enc = Vec::new();
        let mut prev = input_dim;
        for &w in hidden {
            enc.push(Linear::new(prev, w, &mut rng));
            prev = w;
        }
        let mu_head = Linear::new(prev, latent_dim, &mut rng);
        let logvar_head = Linear::new(prev, latent_dim, &mut rng);
        let mut dec = Vec::new();
        prev = latent_dim;
        for &w in hidden.iter().rev() {
            dec.push(Linear::new(prev, w, &mut rng));
            prev = w;
        }
        let out = Linear::new(prev, input_dim, &mut rng);
        Ok(ImageVae {
            input_dim,
            latent_dim,
            enc,
            mu_head,
            logvar_head,
            dec,
            out,
        })
    }

    pub fn sample_images(&self, count: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
        if count == 0 {
            return Array2::zeros((0, self.input_dim));
        }
        let z = standard_normal(rng, count, self.latent_dim);
        let mut x = z;
        for l in &self.dec {
            x = relu(&l.forward(&x));
        }
        sigmoid(&self.out.forward(&x))
    }

    pub fn train_step(&mut self, images: &Array2<f32>, weight: f32, opt: &Adam, rng: &mut ChaCha8Rng) -> Result<GeneratorLosses> {
        if images.ncols() != self.input_dim {
            return Err(Error::input(format!(
                "image width {} does not match VAE input {}",
                images.ncols(),
                self.input_dim
            )));
        }
        let batch = images.nrows();
        let mut enc_acts = vec![images.clone()];
        let mut x = images.clone();
        for l in &self.enc {
            x = relu(&l.forward(&x));
            enc_acts.push(x.clone());
        }
        let mu = self.mu_head.forward(&x);
        let logvar = self.logvar_head.forward(&x);
        let eps = standard_normal(rng, batch, self.latent_dim);
        let z = reparameterize(&mu, &logvar, &eps);
        let mut dec_acts = vec![z.clone()];
        let mut d = z.clone();
        for l in &self.dec {
            d = relu(&l.forward(&d));
            dec_acts.push(d.clone());
        }
        let recon_out = sigmoid(&self.out.forward(&d));

        let n = recon_out.len() as f64;
        let recon = recon_out
            .iter()
            .zip(images.iter())
            .map(|(&p, &t)| {
                let diff = p as f64 - t as f64;
                diff * diff
            })
            .sum::<f64>()
            / n;
        let latent = kl_divergence(&mu, &logvar);

        // backward
        let go = (&recon_out - images) * (2.0 * weight / n as f32);
        let gz_out = sigmoid_backward(&recon_out, &go);
        let mut carry = self.out.backward(dec_acts.last().unwrap(), &gz_out, true).unwrap();
        for (j, l) in self.dec.iter_mut().enumerate().rev() {
            let gz = relu_backward(&dec_acts[j + 1], &carry);
            carry = l.backward(&dec_acts[j], &gz, true).unwrap();
        }
        let dz = carry;
        let sigma = logvar.mapv(|v| (0.5 * v).exp());
        let bf = batch as f32;
        let dmu = &dz + &(&mu * (weight / bf));
        let dlv = &(&dz * &sigma * &eps * 0.5)
            + &(logvar.mapv(|v| weight * 0.5 * (v.exp() - 1.0) / bf));
        let e_last = enc_acts.last().unwrap();
        let g1 = self.mu_head.backward(e_last, &dmu, true).unwrap();
        let g2 = self.logvar_head.backward(e_last, &dlv, true).unwrap();
        let mut ge = g1 + g2;
        for (i, l) in self.enc.iter_mut().enumerate().rev() {
            let gz = relu_backward(&enc_acts[i + 1], &ge);
            match l.backward(&enc_acts[i], &gz, i > 0) {
                Some(g) => ge = g,
                None => break,
            }
        }
        opt.step(self.params_mut());
        Ok(GeneratorLosses {
            recon,
            latent,
            vae: recon + latent,
        })
    }

    pub fn freeze_decoder(&mut self) {
        for l in &mut self.dec {
            l.set_frozen(true);
        }
        self.out.set_frozen(true);
    }

    pub fn decoder_values(&self) -> Vec<ndarray::ArrayD<f32>> {
        let mut v: Vec<_> = self.dec.iter().flat_map(|l| [l.w.value.clone(), l.b.value.clone()]).collect();
        v.push(self.out.w.value.clone());
        v.push(self.out.b.value.clone());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.enc {
            out.extend(l.params_mut());
        }
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        for l in &mut self.dec {
            out.extend(l.params_mut());
        }
        out.extend(self.out.params_mut());
        out
    }

    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(String, &'a Param)) {
        for (i, l) in self.enc.iter().enumerate() {
            f(format!("enc{i}.w"), &l.w);
            f(format!("enc{i}.b"), &l.b);
        }
        f("mu.w".into(), &self.mu_head.w);
        f("mu.b".into(), &self.mu_head.b);
        f("logvar.w".into(), &self.logvar_head.w);
        f("logvar.b".into(), &self.logvar_head.b);
        for (i, l) in self.dec.iter().enumerate() {
            f(format!("dec{i}.w"), &l.w);
            f(format!("dec{i}.b"), &l.b);
        }
        f("out.w".into(), &self.out.w);
        f("out.b".into(), &self.out.b);
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut Param)) {
        for (i, l) in self.enc.iter_mut().enumerate() {
            f(format!("enc{i}.w"), &mut l.w);
            f(format!("enc{i}.b"), &mut l.b);
        }
        f("mu.w".into(), &mut self.mu_head.w);
        f("mu.b".into(), &mut self.mu_head.b);
        f("logvar.w".into(), &mut self.logvar_head.w);
        f("logvar.b".into(), &mut self.logvar_head.b);
        for (i, l) in self.dec.iter_mut().enumerate() {
            f(format!("dec{i}.w"), &mut l.w);
            f(format!("dec{i}.b"), &mut l.b);
        }
        f("out.w".into(), &mut self.out.w);
        f("out.b".into(), &mut self.out.b);
    }
}
