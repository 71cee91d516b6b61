//! Segmentation masks as plain text.
//!
//! This crate turns raster segmentation masks into compact, lossless text
//! payloads and back: image-wise semantic descriptors (full, I-RLE, and
//! row-wise R-RLE encodings), box-wise per-instance records built from a
//! 126-token semantic-brick vocabulary, a tolerant response parser for
//! model output, an instruction-tuning dataset builder, segmentation and
//! grounding metrics, and tokenizer-level length accounting.

pub mod bsd;
pub mod dataset;
pub mod diag;
pub mod imgio;
pub mod isd;
pub mod metrics;
pub mod raster;
pub mod response;
pub mod synth;
pub mod tokens;

pub use bsd::{BrickSeq, BrickToken, BsdRecord, Polarity};
pub use diag::{Diagnostic, Mode, Severity};
pub use isd::{DescriptorText, Encoding};
pub use raster::{BinaryGrid, BoxBins, LabelGrid, LabelMask, LabelTable, PixelBox};
