//! Tokenizer abstraction and sequence-length accounting for the different
//! mask encodings.
//!
//! The reference tokenizer is a deterministic stand-in for a real model
//! tokenizer: letter runs are one token, every digit and symbol is its own
//! token, newlines count, spaces only delimit, and the brick names plus the
//! six record markers match as whole vocabulary words. A vocab-file
//! tokenizer with longest-match semantics is available for accounting
//! against a real vocabulary.

use crate::bsd::{self, BsdRecord, MARKERS};
use crate::dataset::{InstructionSample, SampleFormat};
use crate::isd::{self, Encoding};
use crate::raster::LabelGrid;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("vocabulary file {0} is empty")]
    EmptyVocab(PathBuf),
    #[error(transparent)]
    Encode(#[from] isd::EncodeError),
}

/// Which tokenizer to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenizerSpec {
    Reference,
    VocabFile(PathBuf),
}

pub enum Tokenizer {
    Reference,
    Vocab(VocabTokenizer),
}

impl Tokenizer {
    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self, TokenError> {
        match spec {
            TokenizerSpec::Reference => Ok(Tokenizer::Reference),
            TokenizerSpec::VocabFile(path) => Ok(Tokenizer::Vocab(VocabTokenizer::from_file(path)?)),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Reference => ref_tokenize(text),
            Tokenizer::Vocab(v) => v.tokenize(text),
        }
    }

    pub fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Deterministic reference tokenization (see module docs for the rule set).
pub fn ref_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;

    'outer: while i < bytes.len() {
        let rest = &text[i..];

        for marker in MARKERS {
            if rest.starts_with(marker) {
                tokens.push(marker.to_string());
                i += marker.len();
                continue 'outer;
            }
        }
        if let Some(len) = match_brick(rest) {
            tokens.push(rest[..len].to_string());
            i += len;
            continue;
        }

        let ch = rest.chars().next().expect("i is on a char boundary");
        let ch_len = ch.len_utf8();
        match ch {
            '\n' => {
                tokens.push("\n".to_string());
                i += 1;
            }
            c if c == ' ' || c == '\t' || c == '\r' => {
                i += ch_len;
            }
            c if c.is_alphabetic() => {
                let mut end = i + ch_len;
                for (off, c2) in rest.char_indices().skip(1) {
                    if c2.is_alphabetic() {
                        end = i + off + c2.len_utf8();
                    } else {
                        break;
                    }
                }
                tokens.push(text[i..end].to_string());
                i = end;
            }
            _ => {
                // digits and symbols are one token per character
                tokens.push(ch.to_string());
                i += ch_len;
            }
        }
    }
    tokens
}

/// Length of a brick vocabulary word (`fg1..fg63`, `bg1..bg63`) at the start
/// of `rest`, requiring a non-alphanumeric boundary after it.
fn match_brick(rest: &str) -> Option<usize> {
    let after_prefix = rest.strip_prefix("fg").or_else(|| rest.strip_prefix("bg"))?;
    let digits: String = after_prefix
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    // longest valid digit run first, then one digit
    for take in (1..=digits.len().min(2)).rev() {
        let candidate = &digits[..take];
        if candidate.starts_with('0') {
            continue;
        }
        let value: u8 = candidate.parse().ok()?;
        if !(1..=bsd::BRICK_MAX_LEN).contains(&value) {
            continue;
        }
        let len = 2 + take;
        let boundary = rest[len..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if boundary {
            return Some(len);
        }
    }
    None
}

/// Longest-match tokenizer over a newline-delimited vocabulary file.
/// Positions with no vocabulary match fall back to one token per character.
pub struct VocabTokenizer {
    vocab: HashSet<String>,
    max_len: usize,
}

impl VocabTokenizer {
    pub fn from_file(path: &Path) -> Result<Self, TokenError> {
        let text = std::fs::read_to_string(path)?;
        let vocab: HashSet<String> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.to_string())
            .collect();
        if vocab.is_empty() {
            return Err(TokenError::EmptyVocab(path.to_path_buf()));
        }
        let max_len = vocab.iter().map(|t| t.len()).max().unwrap_or(1);
        Ok(VocabTokenizer { vocab, max_len })
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut i = 0usize;
        while i < text.len() {
            let rest = &text[i..];
            let limit = self.max_len.min(rest.len());
            let mut boundaries: Vec<usize> = rest
                .char_indices()
                .map(|(o, c)| o + c.len_utf8())
                .take_while(|&end| end <= limit)
                .collect();
            boundaries.reverse();
            let mut matched = None;
            for end in boundaries {
                if self.vocab.contains(&rest[..end]) {
                    matched = Some(end);
                    break;
                }
            }
            match matched {
                Some(end) => {
                    tokens.push(rest[..end].to_string());
                    i += end;
                }
                None => {
                    let ch = rest.chars().next().expect("char boundary");
                    tokens.push(ch.to_string());
                    i += ch.len_utf8();
                }
            }
        }
        tokens
    }
}

/// Token-count statistics for one corpus group.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

impl GroupStats {
    fn from_counts(mut counts: Vec<usize>) -> Self {
        counts.sort_unstable();
        let count = counts.len();
        let total: usize = counts.iter().sum();
        let median = if count % 2 == 1 {
            counts[count / 2] as f64
        } else {
            (counts[count / 2 - 1] + counts[count / 2]) as f64 / 2.0
        };
        GroupStats {
            count,
            mean: total as f64 / count as f64,
            median,
            min: counts[0],
            max: counts[count - 1],
        }
    }
}

/// Corpus-level token-length report, grouped by `format@resolution`.
#[derive(Debug, Clone, Serialize, Default)]
pub struct LengthReport {
    pub groups: BTreeMap<String, GroupStats>,
    /// Mean-count ratios between groups at the same resolution,
    /// keyed like `isd-rrle/isd-full@16`.
    pub ratios: BTreeMap<String, f64>,
}

impl LengthReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,count,mean,median,min,max\n");
        for (name, stats) in &self.groups {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{},{}\n",
                name, stats.count, stats.mean, stats.median, stats.min, stats.max
            ));
        }
        out
    }
}

/// Count response tokens over built samples, grouped by format and resolution.
pub fn count_corpus(samples: &[InstructionSample], tokenizer: &Tokenizer) -> LengthReport {
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut resolutions: HashSet<u32> = HashSet::new();
    for sample in samples {
        let key = format!("{}@{}", sample.format, sample.resolution);
        resolutions.insert(sample.resolution);
        by_group
            .entry(key)
            .or_default()
            .push(tokenizer.count(&sample.response));
    }

    let groups: BTreeMap<String, GroupStats> = by_group
        .into_iter()
        .map(|(k, counts)| (k, GroupStats::from_counts(counts)))
        .collect();

    let mut ratios = BTreeMap::new();
    let ratio_pairs = [
        (SampleFormat::IsdRrle, SampleFormat::IsdFull),
        (SampleFormat::Bsd, SampleFormat::IsdRrle),
        (SampleFormat::Bsd, SampleFormat::IsdFull),
    ];
    for res in resolutions {
        for (num, den) in ratio_pairs {
            let num_key = format!("{num}@{res}");
            let den_key = format!("{den}@{res}");
            if let (Some(n), Some(d)) = (groups.get(&num_key), groups.get(&den_key)) {
                if d.mean > 0.0 {
                    ratios.insert(format!("{num}/{den}@{res}"), n.mean / d.mean);
                }
            }
        }
    }

    LengthReport { groups, ratios }
}

/// Token counts of one scene under every encoding.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct EncodingCounts {
    pub isd_full: usize,
    pub isd_irle: usize,
    pub isd_rrle: usize,
    pub bsd_no_bricks: usize,
    pub bsd_bricks: usize,
}

/// Compare the encodings on a single scene: a label grid for the image-wise
/// forms and the per-instance records for the box-wise forms.
pub fn compare_encodings(
    grid: &LabelGrid,
    records: &[BsdRecord],
    tokenizer: &Tokenizer,
) -> Result<EncodingCounts, TokenError> {
    let bg = grid.table().background_label();
    Ok(EncodingCounts {
        isd_full: tokenizer.count(&isd::encode(grid, Encoding::Full)?.payload),
        isd_irle: tokenizer.count(&isd::encode(grid, Encoding::Irle)?.payload),
        isd_rrle: tokenizer.count(&isd::encode(grid, Encoding::Rrle)?.payload),
        bsd_no_bricks: tokenizer.count(&bsd::serialize_no_bricks(records, bg)),
        bsd_bricks: tokenizer.count(&bsd::serialize(records)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsd::encode_record;
    use crate::raster::{BinaryGrid, LabelTable};
    use std::io::Write;

    #[test]
    fn run_syntax_splits_into_four_tokens() {
        assert_eq!(ref_tokenize("others*16"), ["others", "*", "1", "6"]);
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert_eq!(ref_tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn brick_names_are_single_tokens() {
        assert_eq!(ref_tokenize("fg12 bg3"), ["fg12", "bg3"]);
        // out-of-vocabulary lookalikes fall back to the character rules
        assert_eq!(ref_tokenize("fg64"), ["fg", "6", "4"]);
        assert_eq!(ref_tokenize("fg0"), ["fg", "0"]);
        assert_eq!(ref_tokenize("fg12x"), ["fg", "1", "2", "x"]);
    }

    #[test]
    fn markers_are_single_tokens() {
        assert_eq!(
            ref_tokenize("<ref>black dog</ref>"),
            ["<ref>", "black", "dog", "</ref>"]
        );
        assert_eq!(ref_tokenize("<box>[[1 2 3 4]]</box>").len(), 1 + 2 + 4 + 2 + 1);
    }

    #[test]
    fn separators_and_newlines() {
        assert_eq!(ref_tokenize("a|b"), ["a", "|", "b"]);
        assert_eq!(ref_tokenize("a\nb"), ["a", "\n", "b"]);
        assert_eq!(ref_tokenize("black dog"), ["black", "dog"]);
    }

    #[test]
    fn concatenation_reconstructs_input_up_to_spaces() {
        let cases = [
            "others*16",
            "sky|sky|sand\nsea*3",
            "<ref>black dog</ref><box>[[0 1 2 3]]</box><seg>fg1 bg2</seg>",
            "The result is: \n<seg>a*2\na|b</seg>",
        ];
        for text in cases {
            let rebuilt: String = ref_tokenize(text).concat();
            let normalized: String = text.chars().filter(|&c| c != ' ' && c != '\t' && c != '\r').collect();
            assert_eq!(rebuilt, normalized, "for {text:?}");
        }
    }

    #[test]
    fn vocab_tokenizer_is_longest_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        for token in ["other", "others", "s", "*", "1", "16"] {
            writeln!(f, "{token}").unwrap();
        }
        drop(f);
        let tok = VocabTokenizer::from_file(&path).unwrap();
        assert_eq!(tok.tokenize("others*16"), ["others", "*", "16"]);
        // unmatched characters fall back to single chars
        assert_eq!(tok.tokenize("oxx"), ["o", "x", "x"]);
    }

    fn scene() -> (LabelGrid, Vec<BsdRecord>) {
        let table = LabelTable::from_entries([(0u32, "others"), (1, "dog")]).unwrap();
        let mut bits = BinaryGrid::zeros(64, 64).unwrap();
        for r in 20..34 {
            for c in 12..30 {
                bits.set(r, c, true);
            }
        }
        let record = encode_record(&bits, "dog").unwrap();
        let cells: Vec<u32> = (0..64u32 * 64)
            .map(|i| {
                let (r, c) = (i / 64, i % 64);
                if (20..34).contains(&r) && (12..30).contains(&c) {
                    1
                } else {
                    0
                }
            })
            .collect();
        let grid = LabelGrid::new(64, 64, cells, table).unwrap();
        (grid, vec![record])
    }

    #[test]
    fn constant_grid_orders_full_above_rrle() {
        let table = LabelTable::from_entries([(0u32, "others")]).unwrap();
        let grid = LabelGrid::filled(16, 16, 0, table).unwrap();
        let tok = Tokenizer::Reference;
        let counts = compare_encodings(&grid, &[], &tok).unwrap();
        assert!(counts.isd_rrle < counts.isd_full);
        assert!(counts.isd_irle <= counts.isd_rrle);
    }

    #[test]
    fn single_instance_bsd_is_far_shorter_than_isd() {
        let table = LabelTable::from_entries([(0u32, "others"), (1, "dog")]).unwrap();
        let mut cells = vec![0u32; 64 * 64];
        cells[64 * 10 + 7] = 1;
        let grid = LabelGrid::new(64, 64, cells, table).unwrap();
        let mut bits = BinaryGrid::zeros(64, 64).unwrap();
        bits.set(10, 7, true);
        let records = vec![encode_record(&bits, "dog").unwrap()];
        let counts = compare_encodings(&grid, &records, &Tokenizer::Reference).unwrap();
        assert!(counts.bsd_bricks * 4 < counts.isd_rrle);
        assert!(counts.bsd_no_bricks * 4 < counts.isd_rrle);
    }

    #[test]
    fn irle_token_count_never_exceeds_rrle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let table = LabelTable::from_entries([(0u32, "others"), (1, "dog"), (2, "sky")]).unwrap();
        let tok = Tokenizer::Reference;
        for _ in 0..50 {
            let rows = rng.gen_range(1..12);
            let cols = rng.gen_range(1..12);
            let cells: Vec<u32> = (0..rows * cols).map(|_| rng.gen_range(0..3)).collect();
            let grid = LabelGrid::new(rows, cols, cells, table.clone()).unwrap();
            let counts = compare_encodings(&grid, &[], &tok).unwrap();
            assert!(counts.isd_irle <= counts.isd_rrle);
        }
    }

    #[test]
    fn scene_counts_follow_the_expected_ordering() {
        let (grid, records) = scene();
        let counts = compare_encodings(&grid, &records, &Tokenizer::Reference).unwrap();
        assert!(counts.bsd_bricks < counts.bsd_no_bricks);
        assert!(counts.bsd_no_bricks < counts.isd_rrle);
        assert!(counts.isd_rrle < counts.isd_full);
    }

    #[test]
    fn corpus_report_groups_and_ratios() {
        use crate::dataset::SampleFormat;
        let sample = |format: SampleFormat, resolution: u32, response: &str| InstructionSample {
            id: "s".to_string(),
            image: "i.png".to_string(),
            query: "q".to_string(),
            response: response.to_string(),
            format,
            resolution,
        };
        let samples = vec![
            sample(SampleFormat::IsdFull, 16, "a|b|a"),
            sample(SampleFormat::IsdFull, 16, "a|b|a"),
            sample(SampleFormat::IsdRrle, 16, "a*3"),
        ];
        let report = count_corpus(&samples, &Tokenizer::Reference);
        assert_eq!(report.groups.len(), 2);
        let full = &report.groups["isd-full@16"];
        assert_eq!(full.count, 2);
        assert_eq!(full.mean, 5.0);
        let ratio = report.ratios["isd-rrle/isd-full@16"];
        assert!((ratio - 3.0 / 5.0).abs() < 1e-12);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 3);
    }
}
