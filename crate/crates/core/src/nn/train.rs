//! Contrastive training of the shared core with Adam.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gray::GrayImage;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{contrastive_loss, Label};
use super::model::{l2_distance, SiameseModel};
use super::pairs::PairSet;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds both weight initialization and the per-epoch shuffle.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    /// Mean pair loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// A pair of indices into an image list.
pub type IndexPair = (usize, usize, Label);

/// Mean contrastive loss over `pairs` and its gradient with respect to every
/// parameter. Each distinct image goes through the core once.
pub(crate) fn batch_loss_and_grads(
    model: &SiameseModel,
    images: &[&GrayImage],
    pairs: &[IndexPair],
    grads: &mut [Tensor],
) -> Result<f64, NnError> {
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b, _) in pairs {
        for i in [a, b] {
            let next = slot.len();
            slot.entry(i).or_insert(next);
        }
    }
    let mut batch: Vec<&GrayImage> = vec![images[0]; slot.len()];
    for (&i, &s) in &slot {
        batch[s] = images[i];
    }
    let input = model.image_tensor(&batch)?;
    let trace = model.core().forward_trace(&input)?;
    let emb = trace.output();
    let e = emb.len() / batch.len();
    let mut grad_emb = vec![0.0; emb.len()];
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for &(a, b, label) in pairs {
        let (sa, sb) = (slot[&a], slot[&b]);
        let (ea, eb) = (&emb[sa * e..][..e], &emb[sb * e..][..e]);
        let d = l2_distance(ea, eb);
        let (loss, dloss) = contrastive_loss(d, label, model.margin())?;
        total += loss;
        if d > 0.0 {
            let coef = scale * dloss / d;
            for k in 0..e {
                let g = coef * (ea[k] - eb[k]);
                grad_emb[sa * e + k] += g;
                grad_emb[sb * e + k] -= g;
            }
        }
    }
    grads.iter_mut().for_each(|g| g.fill(0.0));
    model.core().backward(&trace, &grad_emb, grads);
    Ok(total * scale)
}

/// Trains `model` on pairs of in-memory images.
pub fn train_pairs(
    mut model: SiameseModel,
    images: &[GrayImage],
    pairs: &[IndexPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(NnError::Config("no training pairs".into()));
    }
    if let Some(&(a, b, _)) = pairs.iter().find(|&&(a, b, _)| a >= images.len() || b >= images.len()) {
        return Err(NnError::Config(format!(
            "pair ({a}, {b}) refers past the {} loaded images",
            images.len()
        )));
    }
    let refs: Vec<&GrayImage> = images.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.core().params(), cfg.adam);
    let mut grads = model.core().zero_grads();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<IndexPair> = chunk.iter().map(|&i| pairs[i]).collect();
            let loss = batch_loss_and_grads(&model, &refs, &batch, &mut grads)?;
            sum += loss * batch.len() as f64;
            adam_step(model.core_mut().params_mut(), &grads, &mut state)?;
        }
        let mean = sum / pairs.len() as f64;
        log::info!("epoch {epoch}/{}: mean loss {mean:.6}", cfg.epochs);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Loads every image named by `pairs` relative to `dir`, resamples to the
/// network input size and trains a freshly initialized model.
pub fn train_metric(dir: impl AsRef<Path>, pairs: &PairSet, cfg: &TrainConfig) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(NnError::Config("pair set is empty".into()));
    }
    let dir = dir.as_ref();
    let model = SiameseModel::mpcnn(cfg.seed);
    let (w, h) = model.input_side();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut images = Vec::new();
    let mut indexed = Vec::with_capacity(pairs.len());
    for p in &pairs.pairs {
        let mut ends = [0; 2];
        for (end, rel) in ends.iter_mut().zip([p.a.as_str(), p.b.as_str()]) {
            *end = match index.get(rel) {
                Some(&i) => i,
                None => {
                    let img = GrayImage::load(dir.join(rel))?;
                    images.push(img.resample(w, h));
                    index.insert(rel, images.len() - 1);
                    images.len() - 1
                }
            };
        }
        indexed.push((ends[0], ends[1], p.label));
    }
    log::info!("training on {} pairs over {} images", indexed.len(), images.len());
    train_pairs(model, &images, &indexed, cfg)
}
