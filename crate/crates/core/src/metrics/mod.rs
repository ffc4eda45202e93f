//! Classification scores and OCR text-similarity metrics.

mod classification;
mod text;

pub use classification::{f1_binary, f1_macro, ConfusionCounts};
pub use text::{bleu, corpus_wer, edit_distance, tokenize, wer, TextPair};
