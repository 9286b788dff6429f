//! The deduplicating target memory: threshold rule, top-K retrieval,
//! fusion modes and the corpus file round trip.
//!
//! `cargo run --release --example retrieval_memory`

use mimtrack::memory::{cosine, fuse, FusionMode, MemoryCorpus};

fn main() -> mimtrack::Result<()> {
    let mut corpus = MemoryCorpus::new(2, 0.8, 4)?;
    let stream = [[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-1.0, 0.1], [0.6, -0.8], [0.0, -1.0], [1.0, 1.0]];
    for e in stream {
        let best = corpus.max_similarity(&e)?;
        let admitted = corpus.maybe_insert(&e)?;
        let best = best.map_or("-".to_string(), |s| format!("{s:.3}"));
        println!("insert {e:?}: max cos {best:>6} -> {}", if admitted { "kept" } else { "rejected" });
    }
    println!("corpus (oldest first, capacity 4): {:?}", corpus.entries().collect::<Vec<_>>());

    let q = [0.9, -0.2];
    let top = corpus.retrieve_top_k(&q, 2)?;
    for i in &top {
        println!("top-2 entry {i}: {:?} cos {:.3}", corpus.get(*i), cosine(&q, corpus.get(*i))?);
    }
    for mode in [FusionMode::KMean, FusionMode::SimpleMean, FusionMode::CosineDecay, FusionMode::KDecay] {
        println!("{mode:?}: {:?}", fuse(&corpus, &q, 2, mode, &[0.0, 0.0])?);
    }

    let mut bytes = Vec::new();
    corpus.write_to(&mut bytes)?;
    let back = MemoryCorpus::read_from(&bytes, 4)?;
    println!("{} bytes, reload identical: {}", bytes.len(), back == corpus);
    Ok(())
}
