//! Parsing of complete model responses: template prose around either one
//! `<seg>...</seg>` descriptor payload or a run of box-wise record triples.
//!
//! Prose outside the markers is ignored; the markers are the contract.
//! Lenient parsing is total: it never fails on arbitrary input and reports
//! every repair as a diagnostic.

use crate::bsd::{self, BsdParseError, BsdRecord};
use crate::diag::{Diagnostic, Mode, Severity};
use crate::isd::{self, DecodeError, DescriptorText, Encoding};
use crate::raster::{LabelGrid, LabelTable};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Isd,
    Bsd,
}

/// What a response is expected to contain.
#[derive(Debug, Clone)]
pub enum Expected {
    Isd {
        rows: u32,
        cols: u32,
        table: LabelTable,
    },
    Bsd {
        canvas_res: u32,
    },
}

impl Expected {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Expected::Isd { .. } => TaskKind::Isd,
            Expected::Bsd { .. } => TaskKind::Bsd,
        }
    }
}

/// Decoded payload of a response.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Isd {
        descriptor: DescriptorText,
        grid: LabelGrid,
    },
    Bsd {
        records: Vec<BsdRecord>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub task: TaskKind,
    pub payload: Payload,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedResponse {
    pub fn warning_count(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Warning)
            .count()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResponseError {
    #[error("response has no `<seg>` marker")]
    MissingSegOpen,
    #[error("`<seg>` at byte {offset} never closes")]
    MissingSegClose { offset: usize },
    #[error("marker {marker} appears {count} times, expected once")]
    DuplicateMarker { marker: &'static str, count: usize },
    #[error("`</seg>` at byte {offset} precedes `<seg>`")]
    MarkerOrder { offset: usize },
    #[error("response contains no records")]
    NoRecords,
    #[error("descriptor payload: {source}")]
    Isd {
        #[source]
        source: DecodeError,
        payload_offset: usize,
    },
    #[error(transparent)]
    Bsd(#[from] BsdParseError),
}

impl ResponseError {
    pub fn rule(&self) -> &'static str {
        match self {
            ResponseError::MissingSegOpen => "missing-seg-open",
            ResponseError::MissingSegClose { .. } => "unterminated-seg",
            ResponseError::DuplicateMarker { .. } => "duplicate-marker",
            ResponseError::MarkerOrder { .. } => "marker-order",
            ResponseError::NoRecords => "no-records",
            ResponseError::Isd { source, .. } => source.rule(),
            ResponseError::Bsd(source) => source.rule(),
        }
    }

    /// Byte offset into the full response text.
    pub fn offset(&self) -> usize {
        match self {
            ResponseError::MissingSegOpen | ResponseError::NoRecords => 0,
            ResponseError::MissingSegClose { offset } | ResponseError::MarkerOrder { offset } => {
                *offset
            }
            ResponseError::DuplicateMarker { .. } => 0,
            ResponseError::Isd {
                source,
                payload_offset,
            } => payload_offset + source.offset(),
            ResponseError::Bsd(source) => source.offset(),
        }
    }
}

/// Parse one response against the expectation.
///
/// Strict mode returns the first grammar violation as an error; a strict
/// `Ok` carries no diagnostics. Lenient mode always returns `Ok` with a
/// best-effort payload and one diagnostic per repair.
pub fn parse_response(
    text: &str,
    expected: &Expected,
    mode: Mode,
) -> Result<ParsedResponse, ResponseError> {
    match expected {
        Expected::Isd { rows, cols, table } => parse_isd(text, *rows, *cols, table, mode),
        Expected::Bsd { canvas_res } => parse_bsd(text, *canvas_res, mode),
    }
}

fn parse_isd(
    text: &str,
    rows: u32,
    cols: u32,
    table: &LabelTable,
    mode: Mode,
) -> Result<ParsedResponse, ResponseError> {
    let mut diagnostics = Vec::new();

    let opens: Vec<usize> = find_all(text, "<seg>");
    let closes: Vec<usize> = find_all(text, "</seg>");

    if mode == Mode::Strict {
        if opens.is_empty() {
            return Err(ResponseError::MissingSegOpen);
        }
        if opens.len() > 1 {
            return Err(ResponseError::DuplicateMarker {
                marker: "<seg>",
                count: opens.len(),
            });
        }
        if closes.is_empty() {
            return Err(ResponseError::MissingSegClose { offset: opens[0] });
        }
        if closes.len() > 1 {
            return Err(ResponseError::DuplicateMarker {
                marker: "</seg>",
                count: closes.len(),
            });
        }
        if closes[0] < opens[0] {
            return Err(ResponseError::MarkerOrder { offset: closes[0] });
        }
    }

    // lenient span recovery: first open, first close after it
    let (payload_start, payload_end) = match opens.first() {
        Some(&open) => {
            let start = open + "<seg>".len();
            match closes.iter().find(|&&c| c >= start) {
                Some(&close) => (start, close),
                None => {
                    diagnostics.push(Diagnostic::warning(
                        "unterminated-seg",
                        open,
                        "payload parsed to end of text",
                    ));
                    (start, text.len())
                }
            }
        }
        None => match closes.first() {
            Some(&close) => {
                diagnostics.push(Diagnostic::warning(
                    "missing-seg-open",
                    0,
                    "no `<seg>`, payload taken from start of text",
                ));
                (0, close)
            }
            None => {
                diagnostics.push(Diagnostic::warning(
                    "missing-seg-markers",
                    0,
                    "no seg markers, whole text treated as payload",
                ));
                (0, text.len())
            }
        },
    };
    if mode == Mode::Lenient && (opens.len() > 1 || closes.len() > 1) {
        diagnostics.push(Diagnostic::warning(
            "duplicate-marker",
            0,
            "more than one seg marker pair, first span used",
        ));
    }

    let payload = &text[payload_start..payload_end];
    let kind = if payload.contains('\n') {
        Encoding::Rrle
    } else {
        Encoding::Irle
    };

    match isd::decode(payload, kind, rows, cols, table, mode) {
        Ok(decoded) => {
            diagnostics.extend(
                decoded
                    .diagnostics
                    .into_iter()
                    .map(|d| d.offset_by(payload_start)),
            );
            Ok(ParsedResponse {
                task: TaskKind::Isd,
                payload: Payload::Isd {
                    descriptor: DescriptorText {
                        kind,
                        payload: payload.to_string(),
                        rows,
                        cols,
                    },
                    grid: decoded.grid,
                },
                diagnostics,
            })
        }
        Err(source) => Err(ResponseError::Isd {
            source,
            payload_offset: payload_start,
        }),
    }
}

fn parse_bsd(text: &str, canvas_res: u32, mode: Mode) -> Result<ParsedResponse, ResponseError> {
    let parsed = bsd::parse(text, canvas_res, mode)?;
    let mut diagnostics = parsed.diagnostics;
    if parsed.records.is_empty() {
        match mode {
            Mode::Strict => return Err(ResponseError::NoRecords),
            Mode::Lenient => diagnostics.push(Diagnostic::warning(
                "no-records",
                0,
                "response contains no records",
            )),
        }
    }
    Ok(ParsedResponse {
        task: TaskKind::Bsd,
        payload: Payload::Bsd {
            records: parsed.records,
        },
        diagnostics,
    })
}

fn find_all(text: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find(needle) {
        out.push(pos + rel);
        pos += rel + needle.len();
    }
    out
}

/// Aggregate outcome of validating a JSONL corpus line by line.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusReport {
    pub lines: usize,
    pub parsed: usize,
    pub strict_errors: usize,
    pub warnings: usize,
    /// Diagnostic and error counts keyed by rule name.
    pub rule_counts: BTreeMap<String, usize>,
    pub failures: Vec<LineFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineFailure {
    pub line: usize,
    pub rule: String,
    pub message: String,
}

impl CorpusReport {
    pub fn record_line(&mut self, line: usize, outcome: &Result<ParsedResponse, ResponseError>) {
        self.lines += 1;
        match outcome {
            Ok(parsed) => {
                self.parsed += 1;
                self.warnings += parsed.warning_count();
                for d in &parsed.diagnostics {
                    *self.rule_counts.entry(d.rule.to_string()).or_insert(0) += 1;
                }
            }
            Err(err) => {
                self.strict_errors += 1;
                *self.rule_counts.entry(err.rule().to_string()).or_insert(0) += 1;
                self.failures.push(LineFailure {
                    line,
                    rule: err.rule().to_string(),
                    message: err.to_string(),
                });
            }
        }
    }

    pub fn record_bad_line(&mut self, line: usize, message: String) {
        self.lines += 1;
        self.strict_errors += 1;
        *self.rule_counts.entry("invalid-json".to_string()).or_insert(0) += 1;
        self.failures.push(LineFailure {
            line,
            rule: "invalid-json".to_string(),
            message,
        });
    }

    pub fn is_clean(&self) -> bool {
        self.strict_errors == 0
    }
}

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Validate every line of a JSONL corpus against one expectation.
///
/// Each line must be a JSON object carrying the response text under `field`;
/// corpora in the instruction-sample layout fall back to the last `gpt`
/// conversation turn. Malformed lines count as failures, never aborts.
pub fn validate_corpus(
    path: &Path,
    expected: &Expected,
    mode: Mode,
    field: &str,
) -> Result<CorpusReport, ValidateError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut report = CorpusReport::default();

    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match extract_response_text(&line, field) {
            Ok(text) => {
                let outcome = parse_response(&text, expected, mode);
                report.record_line(line_no, &outcome);
            }
            Err(message) => report.record_bad_line(line_no, message),
        }
    }
    Ok(report)
}

/// Pull the response text out of one corpus line.
pub fn extract_response_text(line: &str, field: &str) -> Result<String, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    if let Some(text) = value.get(field).and_then(|v| v.as_str()) {
        return Ok(text.to_string());
    }
    if let Some(turns) = value.get("conversations").and_then(|v| v.as_array()) {
        let gpt = turns
            .iter()
            .rev()
            .find(|t| t.get("from").and_then(|f| f.as_str()) == Some("gpt"))
            .and_then(|t| t.get("value"))
            .and_then(|v| v.as_str());
        if let Some(text) = gpt {
            return Ok(text.to_string());
        }
    }
    Err(format!("no {field:?} field or gpt conversation turn"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsd::encode_record;
    use crate::raster::BinaryGrid;
    use std::io::Write;

    fn table() -> LabelTable {
        LabelTable::from_entries([(0u32, "others"), (1, "a"), (2, "b")]).unwrap()
    }

    fn isd_expected(rows: u32, cols: u32) -> Expected {
        Expected::Isd {
            rows,
            cols,
            table: table(),
        }
    }

    #[test]
    fn template_prose_is_ignored() {
        let text = "The result is: \n<seg>a*2\na|b</seg>";
        let parsed = parse_response(text, &isd_expected(2, 2), Mode::Strict).unwrap();
        assert!(parsed.diagnostics.is_empty());
        match parsed.payload {
            Payload::Isd { grid, .. } => {
                assert_eq!(grid.get(0, 0), 1);
                assert_eq!(grid.get(1, 1), 2);
            }
            _ => panic!("expected descriptor payload"),
        }
    }

    #[test]
    fn unterminated_seg_recovers_leniently() {
        let text = "The result is: \n<seg>a*2\na|b";
        assert!(parse_response(text, &isd_expected(2, 2), Mode::Strict).is_err());
        let parsed = parse_response(text, &isd_expected(2, 2), Mode::Lenient).unwrap();
        assert!(parsed
            .diagnostics
            .iter()
            .any(|d| d.rule == "unterminated-seg"));
        match parsed.payload {
            Payload::Isd { grid, .. } => assert_eq!(grid.cells(), &[1, 1, 1, 2]),
            _ => panic!(),
        }
    }

    #[test]
    fn strict_marker_errors_are_specific() {
        let e = parse_response("nothing here", &isd_expected(1, 1), Mode::Strict).unwrap_err();
        assert_eq!(e.rule(), "missing-seg-open");

        let e = parse_response("</seg>a<seg>", &isd_expected(1, 1), Mode::Strict).unwrap_err();
        assert_eq!(e.rule(), "marker-order");

        let e = parse_response("<seg>a</seg><seg>a</seg>", &isd_expected(1, 1), Mode::Strict)
            .unwrap_err();
        assert_eq!(e.rule(), "duplicate-marker");
    }

    #[test]
    fn isd_decode_errors_carry_absolute_offsets() {
        let text = "The result is: \n<seg>zzz</seg>";
        let err = parse_response(text, &isd_expected(1, 1), Mode::Strict).unwrap_err();
        assert_eq!(err.rule(), "unknown-label");
        let payload_start = text.find("zzz").unwrap();
        assert_eq!(err.offset(), payload_start);
    }

    #[test]
    fn bsd_response_with_two_records() {
        let mut m1 = BinaryGrid::zeros(16, 16).unwrap();
        m1.set(2, 3, true);
        let mut m2 = BinaryGrid::zeros(16, 16).unwrap();
        m2.set(9, 9, true);
        m2.set(9, 10, true);
        let records = vec![
            encode_record(&m1, "a").unwrap(),
            encode_record(&m2, "b").unwrap(),
        ];
        let text = format!("The result is: \n{}", bsd::serialize(&records));
        let parsed = parse_response(&text, &Expected::Bsd { canvas_res: 16 }, Mode::Strict).unwrap();
        match parsed.payload {
            Payload::Bsd { records: out } => assert_eq!(out, records),
            _ => panic!(),
        }
    }

    #[test]
    fn composition_is_identity_for_both_tasks() {
        // render(template, encode) then strict parse gives back the payload
        let grid = LabelGrid::new(2, 3, vec![1, 1, 0, 2, 2, 2], table()).unwrap();
        let payload = isd::encode_rrle(&grid).unwrap().payload;
        let text = format!("The result is: \n<seg>{payload}</seg>");
        let parsed = parse_response(&text, &isd_expected(2, 3), Mode::Strict).unwrap();
        match parsed.payload {
            Payload::Isd { descriptor, grid: g } => {
                assert_eq!(descriptor.payload, payload);
                assert_eq!(g, grid);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn lenient_never_fails_on_fuzzed_text() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let base = "The result is: \n<seg>a*2\na|b</seg>";
        for _ in 0..500 {
            let mut text = base.to_string();
            match rng.gen_range(0..3) {
                0 => {
                    let mut cut = rng.gen_range(0..=text.len());
                    while !text.is_char_boundary(cut) {
                        cut -= 1;
                    }
                    text.truncate(cut);
                }
                1 => {
                    for m in ["<seg>", "</seg>"] {
                        if rng.gen_bool(0.5) {
                            text = text.replacen(m, "", 1);
                        }
                    }
                }
                _ => {
                    let i = rng.gen_range(0..text.len());
                    if text.is_char_boundary(i) {
                        text.insert(i, 'z');
                    }
                }
            }
            let parsed = parse_response(&text, &isd_expected(2, 2), Mode::Lenient).unwrap();
            if parse_response(&text, &isd_expected(2, 2), Mode::Strict).is_err() {
                assert!(
                    !parsed.diagnostics.is_empty(),
                    "strict failure left no diagnostics for {text:?}"
                );
            }
        }
    }

    #[test]
    fn lenient_survives_marker_insertion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let markers = ["<ref>", "</ref>", "<box>", "</box>", "<seg>", "</seg>"];
        let bases = [
            (
                "The result is: \n<seg>a*2\na|b</seg>".to_string(),
                isd_expected(2, 2),
            ),
            (
                "The result is: \n<ref>a</ref><box>[[1 1 3 2]]</box><seg>fg6</seg>".to_string(),
                Expected::Bsd { canvas_res: 16 },
            ),
        ];
        for _ in 0..400 {
            let (base, expected) = &bases[rng.gen_range(0..bases.len())];
            let mut text = base.clone();
            let marker = markers[rng.gen_range(0..markers.len())];
            let mut at = rng.gen_range(0..=text.len());
            while !text.is_char_boundary(at) {
                at -= 1;
            }
            text.insert_str(at, marker);

            let lenient = parse_response(&text, expected, Mode::Lenient).unwrap();
            if parse_response(&text, expected, Mode::Strict).is_err() {
                assert!(
                    !lenient.diagnostics.is_empty(),
                    "inserted {marker:?} at {at} broke strict with no diagnostics: {text:?}"
                );
            }
        }
    }

    #[test]
    fn corpus_validation_counts_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"response": "The result is: \n<seg>a</seg>"}}"#).unwrap();
        writeln!(f, r#"{{"response": "The result is: \n<seg>a"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        drop(f);

        let report = validate_corpus(&path, &isd_expected(1, 1), Mode::Strict, "response").unwrap();
        assert_eq!(report.lines, 3);
        assert_eq!(report.parsed, 1);
        assert_eq!(report.strict_errors, 2);
        assert_eq!(report.failures.len(), 2);
        assert_eq!(report.failures[0].line, 2);
        assert_eq!(report.failures[1].line, 3);
        assert!(!report.is_clean());

        let clean = validate_corpus(&path, &isd_expected(1, 1), Mode::Lenient, "response").unwrap();
        assert_eq!(clean.strict_errors, 1, "only the JSON failure remains");
    }

    #[test]
    fn extract_falls_back_to_conversations() {
        let line = r#"{"id":"x","conversations":[{"from":"human","value":"q"},{"from":"gpt","value":"r"}]}"#;
        assert_eq!(extract_response_text(line, "response").unwrap(), "r");
    }
}
