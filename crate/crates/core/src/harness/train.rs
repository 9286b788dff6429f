//! AdamW training on synthetic sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{RunConfig, TrainConfig};
use super::dataset::SequenceDataset;
use super::worker_pool;
use crate::error::{MimError, Result};
use crate::head::{head_loss, BBox};
use crate::memory::{crop_and_resize, fuse, MemoryCorpus};
use crate::model::TrackerModel;
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::tokenizer::Frame;

/// Linear warm-up to `lr`, then cosine decay to 0 at `steps`.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    cfg: TrainConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            cfg: cfg.clone(),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Updates the parameters whose `trainable` flag is set.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], trainable: &[bool], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, &g), m), v) in p.iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.cfg.eps);
                *p -= lr * (update + self.cfg.weight_decay * *p);
            }
        }
    }
}

/// One training example: template window, search window, retrieval
/// vector and the box to predict in the newest frame.
pub struct Sample {
    pub template: Frame,
    pub template_box: BBox,
    pub frames: Vec<Frame>,
    pub fused: Option<Vec<f64>>,
    pub target: BBox,
}

fn jitter(b: &BBox, cfg: &TrainConfig, rng: &mut impl Rng) -> BBox {
    let (cx, cy) = b.center();
    let dx = rng.gen_range(-cfg.shift..=cfg.shift) * b.w;
    let dy = rng.gen_range(-cfg.shift..=cfg.shift) * b.h;
    let s = rng.gen_range(-cfg.scale..=cfg.scale).exp();
    BBox::from_center(cx + dx, cy + dy, b.w * s, b.h * s)
}

/// Crop embeddings of every ground-truth box of a sequence.
pub fn gt_embeddings(model: &TrackerModel, store: &ParamStore, seq: &SequenceDataset) -> Result<Vec<Vec<f64>>> {
    seq.frames
        .iter()
        .zip(&seq.gt)
        .map(|(f, b)| {
            let crop = crop_and_resize(f, b, model.config.crop_factor)?;
            Ok(model.light.encode(store, &crop)?.into_data())
        })
        .collect()
}

/// Builds the example predicting frame `k`, mimicking the tracking loop:
/// the corpus holds earlier ground-truth crops, the query is the crop of
/// frame `k` at a jittered frame `k−1` box.
pub fn build_sample(
    model: &TrackerModel,
    store: &ParamStore,
    cfg: &RunConfig,
    seq: &SequenceDataset,
    embeddings: Option<&[Vec<f64>]>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let mc = &model.config;
    let template_box = jitter(&seq.gt[0], &cfg.train, rng);
    let frames = mc.window_indices(k).into_iter().map(|i| seq.frames[i].clone()).collect();
    let fused = match (mc.retrieval, embeddings) {
        (false, _) => None,
        (true, None) => return Err(MimError::Invalid("retrieval training needs crop embeddings".into())),
        (true, Some(emb)) => {
            let mut corpus = MemoryCorpus::new(mc.embed_dim, mc.tau, mc.capacity)?;
            for e in &emb[..k] {
                corpus.maybe_insert(e)?;
            }
            let prev = jitter(&seq.gt[k - 1], &cfg.train, rng);
            let e_q = match crop_and_resize(&seq.frames[k], &prev, mc.crop_factor) {
                Ok(crop) => model.light.encode(store, &crop)?.into_data(),
                Err(_) => emb[0].clone(),
            };
            Some(fuse(&corpus, &e_q, mc.top_k, mc.fusion, &emb[0])?)
        }
    };
    Ok(Sample {
        template: seq.frames[0].clone(),
        template_box,
        frames,
        fused,
        target: seq.gt[k],
    })
}

/// Loss and parameter gradients of one example.
pub fn sample_gradients(model: &TrackerModel, store: &ParamStore, s: &Sample) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, store, &s.template, &s.template_box, &s.frames, s.fused.as_deref())?;
    let loss = head_loss(&mut g, out.head, &s.target, &model.config.geometry())?;
    let value = g.value(loss.total).data()[0];
    let grads = g.backward(loss.total)?;
    Ok((value, grads.params(store)))
}

pub struct TrainOutcome {
    pub model: TrackerModel,
    pub store: ParamStore,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(cfg: &RunConfig, pool: &[SequenceDataset]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model, mut store) = TrackerModel::init(&cfg.model, cfg.seed)?;
    let min_len = cfg.model.window.max(2);
    let usable: Vec<&SequenceDataset> = pool.iter().filter(|s| s.len() >= min_len).collect();
    if usable.is_empty() {
        return Err(MimError::Invalid("training pool has no usable sequences".into()));
    }
    let pool_threads = worker_pool();
    let embeddings: Vec<Option<Vec<Vec<f64>>>> = if cfg.model.retrieval {
        pool_threads.install(|| {
            usable
                .par_iter()
                .map(|s| gt_embeddings(&model, &store, s).map(Some))
                .collect::<Result<_>>()
        })?
    } else {
        vec![None; usable.len()]
    };
    let trainable = TrackerModel::trainable(&store);
    let mut opt = AdamW::new(&cfg.train, &store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut losses = Vec::with_capacity(cfg.train.steps);
    for step in 0..cfg.train.steps {
        let picks: Vec<(usize, usize, u64)> = (0..cfg.train.batch)
            .map(|_| {
                let s = rng.gen_range(0..usable.len());
                let k = rng.gen_range(1..usable[s].len());
                (s, k, rng.gen())
            })
            .collect();
        let results: Vec<Result<(f64, Vec<Tensor>)>> = pool_threads.install(|| {
            picks
                .par_iter()
                .map(|&(s, k, seed)| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let sample = build_sample(&model, &store, cfg, usable[s], embeddings[s].as_deref(), k, &mut r)?;
                    sample_gradients(&model, &store, &sample)
                })
                .collect()
        });
        let mut total = 0.0;
        let mut grads: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for r in results {
            let (loss, g) = r?;
            total += loss;
            for (acc, g) in grads.iter_mut().zip(&g) {
                acc.add_assign(g);
            }
        }
        let scale = 1.0 / cfg.train.batch as f64;
        let mean_loss = total * scale;
        if !mean_loss.is_finite() {
            return Err(MimError::Diverged {
                step,
                detail: format!("batch loss {mean_loss}"),
            });
        }
        let mut norm_sq = 0.0;
        for g in &mut grads {
            *g = g.scale(scale);
            norm_sq += g.data().iter().map(|v| v * v).sum::<f64>();
        }
        let norm = norm_sq.sqrt();
        if !norm.is_finite() {
            return Err(MimError::Diverged {
                step,
                detail: "non-finite gradient".into(),
            });
        }
        if cfg.train.grad_clip > 0.0 && norm > cfg.train.grad_clip {
            let c = cfg.train.grad_clip / norm;
            for g in &mut grads {
                *g = g.scale(c);
            }
        }
        opt.step(&mut store, &grads, &trainable, learning_rate(&cfg.train, step));
        losses.push(mean_loss);
    }
    Ok(TrainOutcome { model, store, losses })
}
