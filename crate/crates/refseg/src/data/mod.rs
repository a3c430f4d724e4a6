//! Dataset plumbing: vocabulary and tokenization, synthetic scene
//! generation, JSONL interchange loading, mask codecs and resizing.

mod jsonl;
mod mask;
mod resize;
mod sample;
mod synth;
mod vocab;

pub use jsonl::{load_image, load_jsonl, write_dataset, JsonlRecord, MaskSpec};
pub use mask::{polygon_to_mask, rle_decode, rle_encode};
pub use resize::{resize_bilinear, resize_bilinear_2d, resize_nearest};
pub use sample::{resize_sample, ImageSample};
pub use synth::{generate_synthetic, ShapeKind, SynthConfig};
pub use vocab::{build_vocab, normalize_expression, tokenize, TokenSequence, Vocabulary, PAD, UNK};
