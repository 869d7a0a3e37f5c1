//! The 181-head patch classifier: training data, training, and wavefront
//! set extraction.
//!
//! Heads `0..180` answer "is there a singularity with normal bin θ at this
//! center", head 180 answers "is this center smooth". Every head is a
//! separate network with the same layer list; the positive class is output
//! index 1.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::neuralnet::{densee_architecture, LayerSpec, Mode, Network};
use crate::raster::Image;
use crate::shearlet::{PatchCenter, ShearletCoefficients, ShearletConfig, ShearletSystem, PATCH_RADIUS, PATCH_SIZE};
use crate::wavefront::{bin_distance, WavefrontSet, ORIENTATION_BINS};

pub const HEAD_COUNT: usize = 181;
/// Index of the "no singularity" head.
pub const SMOOTH_HEAD: usize = 180;

/// Patches evaluated per forward pass during inference.
const INFERENCE_BATCH: usize = 128;

const STREAM_INIT: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_TRAIN: u64 = 3;

/// Decorrelated seed for one `(head, purpose)` pair.
pub fn derive_seed(seed: u64, head: usize, stream: u64) -> u64 {
    let mut z = seed
        ^ (head as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct DenseeModel {
    config: ShearletConfig,
    fingerprint: String,
    specs: Vec<LayerSpec>,
    seed: u64,
    /// Per-channel factor applied to coefficients before they reach a head.
    channel_scale: Vec<f32>,
    /// Width of a Gaussian window centred on each patch, in pixels.
    center_sigma: Option<f32>,
    /// `None` while a head still holds its initialization.
    heads: Vec<Option<Network<f32>>>,
}

impl DenseeModel {
    /// Untrained model with the default architecture.
    pub fn new(config: ShearletConfig, seed: u64) -> Result<Self> {
        let specs = densee_architecture(config.channel_count());
        Self::with_architecture(config, specs, seed)
    }

    pub fn with_architecture(config: ShearletConfig, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = Self {
            fingerprint: config.fingerprint(),
            channel_scale: vec![1.0; config.channel_count()],
            center_sigma: None,
            config,
            specs,
            seed,
            heads: vec![None; HEAD_COUNT],
        };
        let probe = model.initial_head(0)?;
        if probe.output_len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "heads must have two outputs, got {}",
                probe.output_len()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ShearletConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.config.channel_count()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels(), PATCH_SIZE, PATCH_SIZE]
    }

    pub fn channel_scale(&self) -> &[f32] {
        &self.channel_scale
    }

    pub fn set_channel_scale(&mut self, scale: Vec<f32>) -> Result<()> {
        if scale.len() != self.channels() {
            return Err(mismatch(self.channels(), scale.len()));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("channel scales must be positive".into()));
        }
        self.channel_scale = scale;
        Ok(())
    }

    pub fn center_sigma(&self) -> Option<f32> {
        self.center_sigma
    }

    pub fn set_center_sigma(&mut self, sigma: Option<f32>) -> Result<()> {
        if let Some(s) = sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!("center sigma must be positive, got {s}")));
            }
        }
        self.center_sigma = sigma;
        Ok(())
    }

    /// Scale every channel to unit root-mean-square over `sources`.
    pub fn fit_channel_scale(&mut self, sources: &[PatchSource]) -> Result<()> {
        let c = self.channels();
        let mut sum = vec![0f64; c];
        let mut count = 0usize;
        for src in sources {
            let f = &src.features;
            if f.channels != c {
                return Err(mismatch(c, f.channels));
            }
            let plane = f.rows * f.cols;
            for (k, s) in sum.iter_mut().enumerate() {
                *s += f.data[k * plane..(k + 1) * plane].iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            }
            count += plane;
        }
        if count == 0 {
            return Err(Error::Empty("patch sources"));
        }
        let scale = sum
            .iter()
            .map(|&s| {
                let rms = (s / count as f64).sqrt();
                if rms > 1e-12 { (1.0 / rms) as f32 } else { 1.0 }
            })
            .collect();
        self.set_channel_scale(scale)
    }

    /// Per-pixel weights of the centre window, row-major over one patch plane.
    fn window(&self) -> Option<Vec<f32>> {
        let sigma = self.center_sigma?;
        let r = PATCH_RADIUS as f32;
        Some(
            (0..PATCH_SIZE * PATCH_SIZE)
                .map(|k| {
                    let (di, dj) = ((k / PATCH_SIZE) as f32 - r, (k % PATCH_SIZE) as f32 - r);
                    (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
                })
                .collect(),
        )
    }

    /// Apply the channel scale and centre window to a batch of patches in place.
    fn normalize(&self, batch: &mut [f32]) {
        let plane = PATCH_SIZE * PATCH_SIZE;
        let window = self.window();
        for patch in batch.chunks_mut(plane * self.channel_scale.len()) {
            for (ch, &s) in patch.chunks_mut(plane).zip(&self.channel_scale) {
                match &window {
                    Some(w) => ch.iter_mut().zip(w).for_each(|(v, &g)| *v *= s * g),
                    None => ch.iter_mut().for_each(|v| *v *= s),
                }
            }
        }
    }

    pub fn is_trained(&self, head: usize) -> bool {
        self.heads.get(head).is_some_and(|h| h.is_some())
    }

    pub fn trained_heads(&self) -> Vec<usize> {
        (0..HEAD_COUNT).filter(|&h| self.is_trained(h)).collect()
    }

    /// Freshly initialized network for `head`.
    pub fn initial_head(&self, head: usize) -> Result<Network<f32>> {
        check_head(head)?;
        Network::new(self.input_shape(), self.specs.clone(), derive_seed(self.seed, head, STREAM_INIT))
    }

    /// Current parameters of `head`.
    pub fn head(&self, head: usize) -> Result<Cow<'_, Network<f32>>> {
        check_head(head)?;
        match &self.heads[head] {
            Some(net) => Ok(Cow::Borrowed(net)),
            None => Ok(Cow::Owned(self.initial_head(head)?)),
        }
    }

    pub fn set_head(&mut self, head: usize, net: Network<f32>) -> Result<()> {
        check_head(head)?;
        if net.input_shape() != self.input_shape() || net.specs() != self.specs {
            return Err(mismatch("the model's layer list", "a different network"));
        }
        self.heads[head] = Some(net);
        Ok(())
    }

    /// Refuse systems other than the one the model was trained with.
    pub fn check_system(&self, system: &ShearletSystem) -> Result<()> {
        if system.fingerprint() != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint.clone(),
                system: system.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    fn check_stack(&self, stack: &FeatureStack) -> Result<()> {
        if stack.system_id != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint.clone(),
                system: stack.system_id.clone(),
            });
        }
        Ok(())
    }
}

fn check_head(head: usize) -> Result<()> {
    if head >= HEAD_COUNT {
        return Err(Error::InvalidConfig(format!("head {head} out of range")));
    }
    Ok(())
}

/// Single-precision copy of a coefficient stack, channel-major.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
    system_id: String,
}

impl FeatureStack {
    pub fn new(coeffs: &ShearletCoefficients) -> Self {
        Self {
            rows: coeffs.rows(),
            cols: coeffs.cols(),
            channels: coeffs.channels(),
            data: coeffs.data().iter().map(|&v| v as f32).collect(),
            system_id: coeffs.system_id().to_string(),
        }
    }

    pub fn from_image(system: &ShearletSystem, image: &Image) -> Result<Self> {
        Ok(Self::new(&system.transform(image)?))
    }

    /// Stack from raw channel-major features, tagged with `system_id`.
    pub fn from_parts(rows: usize, cols: usize, channels: usize, data: Vec<f32>, system_id: impl Into<String>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(mismatch(rows * cols * channels, data.len()));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
            system_id: system_id.into(),
        })
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn admits(&self, center: PatchCenter) -> bool {
        center.row > PATCH_RADIUS
            && center.row + PATCH_RADIUS <= self.rows
            && center.col > PATCH_RADIUS
            && center.col + PATCH_RADIUS <= self.cols
    }

    /// Copy the window around `center` into `out`, channel-major.
    pub fn write_patch(&self, center: PatchCenter, out: &mut [f32]) -> Result<()> {
        if !self.admits(center) {
            return Err(Error::CenterOutOfRange(center.row, center.col));
        }
        let need = self.channels * PATCH_SIZE * PATCH_SIZE;
        if out.len() != need {
            return Err(mismatch(need, out.len()));
        }
        let (r0, c0) = center.window_origin();
        let plane = self.rows * self.cols;
        for c in 0..self.channels {
            for di in 0..PATCH_SIZE {
                let src = c * plane + (r0 + di) * self.cols + c0;
                let dst = (c * PATCH_SIZE + di) * PATCH_SIZE;
                out[dst..dst + PATCH_SIZE].copy_from_slice(&self.data[src..src + PATCH_SIZE]);
            }
        }
        Ok(())
    }
}

/// Coefficients of one image together with its wavefront set.
#[derive(Clone, Debug)]
pub struct PatchSource {
    pub features: FeatureStack,
    pub wavefront: WavefrontSet,
}

impl PatchSource {
    pub fn new(features: FeatureStack, wavefront: WavefrontSet) -> Result<Self> {
        if (features.rows, features.cols) != (wavefront.rows(), wavefront.cols()) {
            return Err(mismatch(
                format!("{}x{} wavefront set", features.rows, features.cols),
                format!("{}x{}", wavefront.rows(), wavefront.cols()),
            ));
        }
        Ok(Self { features, wavefront })
    }

    pub fn from_image(system: &ShearletSystem, image: &Image, wavefront: WavefrontSet) -> Result<Self> {
        if image.shape() != (wavefront.rows(), wavefront.cols()) {
            return Err(mismatch(
                format!("{}x{} wavefront set", image.rows(), image.cols()),
                format!("{}x{}", wavefront.rows(), wavefront.cols()),
            ));
        }
        Self::new(FeatureStack::from_image(system, image)?, wavefront)
    }

    /// Label of `head` at `center`; direction labels accept bins within `smear`.
    pub fn label(&self, center: PatchCenter, head: usize, smear: usize) -> bool {
        let (i, j) = center.pixel();
        let bins = self.wavefront.bins(i, j);
        if head == SMOOTH_HEAD {
            return !bins.iter().any(|&b| b != 0);
        }
        let s = smear.min(ORIENTATION_BINS / 2) as i64;
        (-s..=s).any(|d| bins[(head as i64 + d).rem_euclid(ORIENTATION_BINS as i64) as usize] != 0)
    }
}

/// Build patch sources from images and their wavefront sets.
pub fn patch_sources(system: &ShearletSystem, data: &[(Image, WavefrontSet)]) -> Result<Vec<PatchSource>> {
    data.iter()
        .map(|(image, wf)| PatchSource::from_image(system, image, wf.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub source: usize,
    pub center: PatchCenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Examples drawn per head, half positive and half negative.
    pub per_head: usize,
    /// Direction labels accept wavefront bins within this distance.
    pub smear: usize,
    /// Share of negatives drawn from singular pixels with other orientations.
    pub edge_negatives: f64,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(per_head: usize, seed: u64) -> Self {
        Self {
            per_head,
            smear: 1,
            edge_negatives: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_negatives) {
            return Err(Error::InvalidConfig(format!("edge negative share {} outside [0, 1]", self.edge_negatives)));
        }
        Ok(())
    }
}

/// Balanced per-head example lists over a shared pool of coefficient stacks.
#[derive(Clone, Debug)]
pub struct LabeledPatchSet {
    sources: Arc<Vec<PatchSource>>,
    smear: usize,
    examples: BTreeMap<usize, Vec<(PatchRef, bool)>>,
}

impl LabeledPatchSet {
    /// Explicit example lists; labels are recomputed from the sources.
    pub fn from_refs(sources: Arc<Vec<PatchSource>>, smear: usize, refs: BTreeMap<usize, Vec<PatchRef>>) -> Result<Self> {
        let mut examples = BTreeMap::new();
        for (head, list) in refs {
            check_head(head)?;
            let mut labeled = Vec::with_capacity(list.len());
            for r in list {
                let src = sources.get(r.source).ok_or(Error::Empty("patch source"))?;
                if !src.features.admits(r.center) {
                    return Err(Error::CenterOutOfRange(r.center.row, r.center.col));
                }
                labeled.push((r, src.label(r.center, head, smear)));
            }
            examples.insert(head, labeled);
        }
        Ok(Self {
            sources,
            smear,
            examples,
        })
    }

    pub fn sources(&self) -> &Arc<Vec<PatchSource>> {
        &self.sources
    }

    pub fn smear(&self) -> usize {
        self.smear
    }

    pub fn heads(&self) -> Vec<usize> {
        self.examples.keys().copied().collect()
    }

    pub fn examples(&self, head: usize) -> &[(PatchRef, bool)] {
        self.examples.get(&head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn patch_len(&self) -> usize {
        self.sources.first().map_or(0, |s| s.features.channels) * PATCH_SIZE * PATCH_SIZE
    }

    pub fn write_patch(&self, patch: PatchRef, out: &mut [f32]) -> Result<()> {
        self.sources[patch.source].features.write_patch(patch.center, out)
    }

    /// Positive and negative counts of `head`.
    pub fn balance(&self, head: usize) -> (usize, usize) {
        let pos = self.examples(head).iter().filter(|e| e.1).count();
        (pos, self.examples(head).len() - pos)
    }
}

/// Draw balanced examples for each requested head.
///
/// Sampling for a head depends only on `(cfg.seed, head)`, so adding heads
/// leaves the others' examples unchanged.
pub fn make_training_set(sources: Arc<Vec<PatchSource>>, heads: &[usize], cfg: &SamplingConfig) -> Result<LabeledPatchSet> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Empty("patch sources"));
    }
    let channels = sources[0].features.channels;
    if sources.iter().any(|s| s.features.channels != channels) {
        return Err(mismatch(format!("{channels} channels in every source"), "mixed channel counts"));
    }
    let mut examples = BTreeMap::new();
    for &head in heads {
        check_head(head)?;
        examples.insert(head, sample_head(&sources, head, cfg)?);
    }
    Ok(LabeledPatchSet {
        sources,
        smear: cfg.smear,
        examples,
    })
}

fn sample_head(sources: &[PatchSource], head: usize, cfg: &SamplingConfig) -> Result<Vec<(PatchRef, bool)>> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (s, src) in sources.iter().enumerate() {
        for center in PatchCenter::all(src.features.rows, src.features.cols) {
            let r = PatchRef { source: s, center };
            if src.label(center, head, cfg.smear) {
                pos.push(r);
            } else {
                neg.push(r);
            }
        }
    }
    if pos.is_empty() {
        return Err(Error::NoPositives(head));
    }
    if neg.is_empty() {
        return Err(Error::Degenerate(format!("head {head} has no negative examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, head, STREAM_SAMPLE));
    let k = (cfg.per_head / 2).min(pos.len()).min(neg.len());
    let mut out = Vec::with_capacity(2 * k);
    out.extend(choose(&mut rng, &pos, k).into_iter().map(|r| (r, true)));
    if cfg.edge_negatives > 0.0 {
        let (edge, flat): (Vec<PatchRef>, Vec<PatchRef>) = neg.into_iter().partition(|r| {
            let (i, j) = r.center.pixel();
            sources[r.source].wavefront.any_at(i, j)
        });
        let ke = ((k as f64 * cfg.edge_negatives).round() as usize).min(edge.len()).max(k.saturating_sub(flat.len()));
        out.extend(choose(&mut rng, &edge, ke).into_iter().map(|r| (r, false)));
        out.extend(choose(&mut rng, &flat, k - ke).into_iter().map(|r| (r, false)));
    } else {
        out.extend(choose(&mut rng, &neg, k).into_iter().map(|r| (r, false)));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn choose(rng: &mut ChaCha8Rng, pool: &[PatchRef], k: usize) -> Vec<PatchRef> {
    rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            batch_size: 86,
            steps,
            learning_rate: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: usize,
    pub steps: usize,
    /// Mean loss over the last few steps; `None` when no step ran.
    pub final_loss: Option<f64>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Train every head present in `data`, each from its initialization.
///
/// A head that diverges keeps its previous parameters and is reported; the
/// remaining heads still train.
pub fn train(model: &mut DenseeModel, data: &LabeledPatchSet, cfg: &TrainConfig) -> Result<Vec<HeadReport>> {
    cfg.validate()?;
    if data.patch_len() != model.channels() * PATCH_SIZE * PATCH_SIZE {
        return Err(mismatch(
            format!("{}-channel patches", model.channels()),
            format!("{} values per patch", data.patch_len()),
        ));
    }
    let mut reports = Vec::new();
    for head in data.heads() {
        match train_head(model, data, head, cfg) {
            Ok((net, report)) => {
                model.heads[head] = Some(net);
                reports.push(report);
            }
            Err(Error::Diverged { head, reason }) => reports.push(HeadReport {
                head,
                steps: 0,
                final_loss: None,
                diverged: Some(reason),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}

/// Train one head and return it without touching the model.
pub fn train_head(model: &DenseeModel, data: &LabeledPatchSet, head: usize, cfg: &TrainConfig) -> Result<(Network<f32>, HeadReport)> {
    cfg.validate()?;
    let examples = data.examples(head);
    let (pos, neg) = data.balance(head);
    if pos == 0 {
        return Err(Error::NoPositives(head));
    }
    if neg == 0 {
        return Err(Error::Degenerate(format!("head {head} has no negative examples")));
    }
    let mut net = model.initial_head(head)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, head, STREAM_TRAIN));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size;
    let len = data.patch_len();
    let mut input = vec![0f32; batch * len];
    let mut labels = vec![0usize; batch];
    let mut recent = Vec::new();

    for step in 0..cfg.steps {
        for b in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (patch, label) = examples[order[cursor]];
            cursor += 1;
            data.write_patch(patch, &mut input[b * len..(b + 1) * len])?;
            labels[b] = label as usize;
        }
        model.normalize(&mut input);
        let (loss, grads) = net.loss_and_gradients(&input, batch, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                head,
                reason: format!("loss {loss} at step {step}"),
            });
        }
        net.sgd_step(&grads, cfg.learning_rate).map_err(|e| Error::Diverged {
            head,
            reason: format!("{e} at step {step}"),
        })?;
        recent.push(loss);
        if recent.len() > 10 {
            recent.remove(0);
        }
    }
    let final_loss = (!recent.is_empty()).then(|| recent.iter().sum::<f64>() / recent.len() as f64);
    Ok((
        net,
        HeadReport {
            head,
            steps: cfg.steps,
            final_loss,
            diverged: None,
        },
    ))
}

/// Positive-class probability of `head` at each center.
pub fn head_probabilities(model: &DenseeModel, head: usize, stack: &FeatureStack, centers: &[PatchCenter]) -> Result<Vec<f64>> {
    model.check_stack(stack)?;
    let net = model.head(head)?;
    let len = stack.channels * PATCH_SIZE * PATCH_SIZE;
    let mut out = Vec::with_capacity(centers.len());
    let mut input = vec![0f32; INFERENCE_BATCH * len];
    for chunk in centers.chunks(INFERENCE_BATCH) {
        for (b, &c) in chunk.iter().enumerate() {
            stack.write_patch(c, &mut input[b * len..(b + 1) * len])?;
        }
        model.normalize(&mut input[..chunk.len() * len]);
        let probs = net.forward(&input[..chunk.len() * len], chunk.len(), Mode::Inference)?;
        out.extend(probs.chunks(2).map(|p| p[1] as f64));
    }
    Ok(out)
}

/// Positive-class probability of `head` on each of its examples in `data`.
pub fn example_probabilities(model: &DenseeModel, data: &LabeledPatchSet, head: usize) -> Result<Vec<f64>> {
    let net = model.head(head)?;
    if data.patch_len() != net.input_len() {
        return Err(mismatch(net.input_len(), data.patch_len()));
    }
    let len = data.patch_len();
    let mut out = Vec::new();
    let mut input = vec![0f32; INFERENCE_BATCH * len];
    for chunk in data.examples(head).chunks(INFERENCE_BATCH) {
        for (b, &(patch, _)) in chunk.iter().enumerate() {
            data.write_patch(patch, &mut input[b * len..(b + 1) * len])?;
        }
        model.normalize(&mut input[..chunk.len() * len]);
        let probs = net.forward(&input[..chunk.len() * len], chunk.len(), Mode::Inference)?;
        out.extend(probs.chunks(2).map(|p| p[1] as f64));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Direction heads fire above this probability.
    pub threshold: f64,
    /// The smooth head suppresses a center above this probability.
    pub gate_threshold: f64,
    /// Keep a direction only where its head beats both neighbouring trained
    /// heads on the circle of orientations.
    pub peaks_only: bool,
}

impl ExtractOptions {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            gate_threshold: threshold,
            peaks_only: false,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in [self.threshold, self.gate_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidConfig(format!("threshold {t} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self::new(0.5)
    }
}

/// Digital wavefront set of `image` from the trained heads of `model`.
///
/// Untrained direction heads never fire; without a trained smooth head no
/// center is gated.
pub fn extract_wavefront(image: &Image, model: &DenseeModel, system: &ShearletSystem, opts: &ExtractOptions) -> Result<WavefrontSet> {
    model.check_system(system)?;
    let stack = FeatureStack::from_image(system, image)?;
    let centers: Vec<PatchCenter> = PatchCenter::all(stack.rows, stack.cols).collect();
    extract_at(&stack, model, &centers, opts)
}

/// Wavefront set restricted to `centers`; all other pixels stay empty.
pub fn extract_at(stack: &FeatureStack, model: &DenseeModel, centers: &[PatchCenter], opts: &ExtractOptions) -> Result<WavefrontSet> {
    opts.validate()?;
    model.check_stack(stack)?;
    let mut wf = WavefrontSet::empty(stack.rows, stack.cols);
    let open: Vec<PatchCenter> = if model.is_trained(SMOOTH_HEAD) {
        let p = head_probabilities(model, SMOOTH_HEAD, stack, centers)?;
        centers
            .iter()
            .zip(p)
            .filter(|&(_, p)| p <= opts.gate_threshold)
            .map(|(&c, _)| c)
            .collect()
    } else {
        centers.to_vec()
    };
    if open.is_empty() {
        return Ok(wf);
    }
    let heads: Vec<usize> = (0..SMOOTH_HEAD).filter(|&h| model.is_trained(h)).collect();
    let probs = heads
        .iter()
        .map(|&h| head_probabilities(model, h, stack, &open))
        .collect::<Result<Vec<_>>>()?;
    let k = heads.len();
    for (n, &head) in heads.iter().enumerate() {
        for (m, c) in open.iter().enumerate() {
            let p = probs[n][m];
            if p <= opts.threshold {
                continue;
            }
            if opts.peaks_only && k > 1 {
                let (prev, next) = (probs[(n + k - 1) % k][m], probs[(n + 1) % k][m]);
                if p < prev || p < next {
                    continue;
                }
            }
            let (i, j) = c.pixel();
            wf.set(i, j, head);
        }
    }
    Ok(wf)
}

/// Pixels carrying two orientations more than 10 bins apart.
pub fn detect_corners(wf: &WavefrontSet) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..wf.rows() {
        for j in 0..wf.cols() {
            let bins = wf.bins_at(i, j);
            let corner = bins
                .iter()
                .enumerate()
                .any(|(k, &a)| bins[k + 1..].iter().any(|&b| bin_distance(a, b) > 10));
            if corner {
                out.push((i, j));
            }
        }
    }
    out
}
