//! Sequential tracking of one sequence with a trained model.

use std::time::Instant;

use super::dataset::SequenceDataset;
use super::metrics::{evaluate, MetricReport};
use crate::error::{MimError, Result};
use crate::head::{predict, BBox, TrackState};
use crate::memory::{crop_and_resize, fuse, MemoryCorpus};
use crate::model::TrackerModel;
use crate::numerics::{Graph, ParamStore};

pub struct TrackOutput {
    pub state: TrackState,
    /// Metrics over frames `1..` (frame 0 is the given template box).
    pub report: MetricReport,
    /// Wall time per processed frame in seconds (frame 0 records setup).
    pub frame_seconds: Vec<f64>,
    pub corpus: MemoryCorpus,
}

impl TrackOutput {
    pub fn mean_iou(&self) -> f64 {
        self.report.mean_iou
    }

    /// `frame,seconds,cumulative` rows.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("frame,seconds,cumulative\n");
        let mut acc = 0.0;
        for (i, t) in self.frame_seconds.iter().enumerate() {
            acc += t;
            s.push_str(&format!("{i},{t:.9},{acc:.9}\n"));
        }
        s
    }
}

/// Clamps a predicted box into the frame, keeping at least one pixel.
fn clamp_to_frame(b: BBox, width: f64, height: f64) -> BBox {
    let w = b.w.clamp(1.0, width);
    let h = b.h.clamp(1.0, height);
    BBox::new(b.x.clamp(0.0, width - w), b.y.clamp(0.0, height - h), w, h)
}

/// Tracks `data` from its frame-0 box. `initial` replaces the empty corpus
/// (the template crop is still inserted first).
pub fn track_sequence(
    model: &TrackerModel,
    store: &ParamStore,
    data: &SequenceDataset,
    initial: Option<MemoryCorpus>,
) -> Result<TrackOutput> {
    let mc = &model.config;
    if data.len() < mc.window + 1 {
        return Err(MimError::Invalid(format!("{} frames for window {}", data.len(), mc.window)));
    }
    let start = Instant::now();
    let first = &data.frames[0];
    let (width, height) = (first.width as f64, first.height as f64);
    let mut corpus = match initial {
        Some(c) => c,
        None => MemoryCorpus::new(mc.embed_dim, mc.tau, mc.capacity)?,
    };
    let template_embedding = if mc.retrieval {
        let crop = crop_and_resize(first, &data.gt[0], mc.crop_factor)?;
        let e = model.light.encode(store, &crop)?.into_data();
        corpus.maybe_insert(&e)?;
        e
    } else {
        Vec::new()
    };
    let mut state = TrackState::new();
    state.record(data.gt[0], 1.0);
    let mut frame_seconds = vec![start.elapsed().as_secs_f64()];
    for k in 1..data.len() {
        let tick = Instant::now();
        let prev = state.current.expect("state has the template box");
        let e_q = if mc.retrieval {
            let e = match crop_and_resize(&data.frames[k], &prev, mc.crop_factor) {
                Ok(crop) => model.light.encode(store, &crop)?.into_data(),
                Err(_) => template_embedding.clone(),
            };
            Some(e)
        } else {
            None
        };
        let fused = match &e_q {
            Some(e) => Some(fuse(&corpus, e, mc.top_k, mc.fusion, &template_embedding)?),
            None => None,
        };
        let frames: Vec<_> = mc.window_indices(k).into_iter().map(|i| data.frames[i].clone()).collect();
        let mut g = Graph::new();
        let out = model.forward(&mut g, store, first, &data.gt[0], &frames, fused.as_deref())?;
        let (bbox, score) = predict(g.value(out.head), &mc.geometry())?;
        if let Some(e) = &e_q {
            corpus.maybe_insert(e)?;
        }
        state.record(clamp_to_frame(bbox, width, height), score);
        frame_seconds.push(tick.elapsed().as_secs_f64());
    }
    let report = evaluate(&state.trajectory[1..], &data.gt[1..])?;
    Ok(TrackOutput {
        state,
        report,
        frame_seconds,
        corpus,
    })
}
