//! Synthetic lesion phantoms and the on-disk corpus format.

mod corpus;
mod jitter;
mod phantom;
mod png;

pub use corpus::{
    corpus_hash, parse_corpus_manifest, read_corpus, write_corpus, Corpus, CorpusManifest,
    CorpusSample, CORPUS_FORMAT,
};
pub use jitter::inject_boundary_jitter;
pub use phantom::{clean_intensity, generate_corpus_samples, generate_phantom, generate_phantom_pair, PhantomConfig};
pub use png::{decode_image_png, decode_label_png, encode_image_png, encode_label_png, encode_rgb_png};
