//! Retrieval memory: target crops, their embeddings, the deduplicated
//! corpus and fusion of retrieved entries into the encoder query.

pub mod corpus;
pub mod crop;
pub mod fusion;
pub mod light_encoder;

pub use corpus::{cosine, MemoryCorpus};
pub use crop::{crop_and_resize, CROP_SIZE};
pub use fusion::{fuse, FusionMode, QueryProjector};
pub use light_encoder::LightEncoder;
