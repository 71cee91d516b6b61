//! Box-wise semantic descriptors: per-instance records made of a referent,
//! a quantized bounding box, and a semantic-brick encoding of the in-box
//! binary mask.
//!
//! The brick vocabulary has exactly 126 tokens, `fg1..fg63` and `bg1..bg63`.
//! Bricks run in raster-scan order over the box sub-grid and may cross its
//! row boundaries. A record serializes as
//! `<ref>REFERENT</ref><box>[[x1 y1 x2 y2]]</box><seg>fg12 bg3</seg>`;
//! a no-target record keeps the referent but carries `[[]]` and an empty seg.

use crate::diag::{Diagnostic, Mode};
use crate::raster::{BinaryGrid, BoxBins, LabelGrid, LabelTable, RESERVED_LABEL_CHARS};
use std::fmt;
use thiserror::Error;

/// Longest run a single brick can encode.
pub const BRICK_MAX_LEN: u8 = 63;
/// Size of the brick vocabulary (`fg1..fg63` plus `bg1..bg63`).
pub const BRICK_VOCAB_SIZE: usize = 126;

/// Marker substrings that structure serialized records and responses.
pub const MARKERS: [&str; 6] = ["<ref>", "</ref>", "<box>", "</box>", "<seg>", "</seg>"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BsdError {
    #[error("brick length {0} outside 1..=63")]
    BrickLength(u8),
    #[error("cannot encode an empty bit sequence")]
    EmptyBits,
    #[error("mask must be square to act as a canvas (got {rows}x{cols})")]
    NonSquareCanvas { rows: u32, cols: u32 },
    #[error("referent contains reserved marker {marker:?}")]
    ReservedReferent { marker: &'static str },
    #[error("brick lengths sum to {actual}, box covers {expected} cells")]
    BrickSum { expected: u64, actual: u64 },
    #[error("box ({x1},{y1})..({x2},{y2}) exceeds canvas resolution {canvas}")]
    BoxOutsideCanvas {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        canvas: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Fg,
    Bg,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Fg => "fg",
            Polarity::Bg => "bg",
        })
    }
}

/// One brick: a run of foreground or background cells, length 1..=63.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrickToken {
    polarity: Polarity,
    length: u8,
}

impl BrickToken {
    pub fn new(polarity: Polarity, length: u8) -> Result<Self, BsdError> {
        if length == 0 || length > BRICK_MAX_LEN {
            return Err(BsdError::BrickLength(length));
        }
        Ok(BrickToken { polarity, length })
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn length(&self) -> u8 {
        self.length
    }

    pub fn bit(&self) -> bool {
        self.polarity == Polarity::Fg
    }

    /// Vocabulary name, e.g. `fg12`.
    pub fn name(&self) -> String {
        format!("{}{}", self.polarity, self.length)
    }

    /// Parse a vocabulary name; returns `None` for anything outside the
    /// 126-token vocabulary (wrong prefix, leading zero, out of range).
    pub fn parse_name(text: &str) -> Option<Self> {
        let polarity = if let Some(rest) = text.strip_prefix("fg") {
            (Polarity::Fg, rest)
        } else {
            let rest = text.strip_prefix("bg")?;
            (Polarity::Bg, rest)
        };
        let (polarity, digits) = polarity;
        if digits.is_empty() || digits.len() > 2 || digits.starts_with('0') {
            return None;
        }
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let length: u8 = digits.parse().ok()?;
        BrickToken::new(polarity, length).ok()
    }
}

/// Ordered brick sequence.
///
/// The canonical form emitted by the encoder only places two consecutive
/// same-polarity bricks when the earlier one has length 63; decoding accepts
/// arbitrary sequences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BrickSeq(Vec<BrickToken>);

impl BrickSeq {
    pub fn new(tokens: Vec<BrickToken>) -> Self {
        BrickSeq(tokens)
    }

    pub fn tokens(&self) -> &[BrickToken] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of cells the sequence covers.
    pub fn total_cells(&self) -> u64 {
        self.0.iter().map(|b| b.length as u64).sum()
    }

    pub fn is_canonical(&self) -> bool {
        self.0.windows(2).all(|w| {
            w[0].polarity != w[1].polarity || w[0].length == BRICK_MAX_LEN
        })
    }

    /// Space-separated vocabulary names.
    pub fn to_text(&self) -> String {
        let names: Vec<String> = self.0.iter().map(|b| b.name()).collect();
        names.join(" ")
    }
}

/// Greedy run-length encoding of a bit sequence into canonical bricks.
///
/// Runs longer than 63 split into full-length bricks plus a remainder.
pub fn bricks_from_bits(bits: &[bool]) -> Result<BrickSeq, BsdError> {
    if bits.is_empty() {
        return Err(BsdError::EmptyBits);
    }
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        let bit = bits[i];
        let start = i;
        while i < bits.len() && bits[i] == bit {
            i += 1;
        }
        let mut run = i - start;
        let polarity = if bit { Polarity::Fg } else { Polarity::Bg };
        while run > BRICK_MAX_LEN as usize {
            tokens.push(BrickToken::new(polarity, BRICK_MAX_LEN).unwrap());
            run -= BRICK_MAX_LEN as usize;
        }
        tokens.push(BrickToken::new(polarity, run as u8).unwrap());
    }
    Ok(BrickSeq(tokens))
}

/// Expand a brick sequence back into bits. Non-canonical sequences are fine.
pub fn bits_from_bricks(seq: &BrickSeq) -> Vec<bool> {
    let mut bits = Vec::with_capacity(seq.total_cells() as usize);
    for brick in seq.tokens() {
        bits.extend(std::iter::repeat_n(brick.bit(), brick.length as usize));
    }
    bits
}

/// One grounded instance: referent text, quantized box, and in-box bricks.
///
/// A record without a body is the no-target form, serialized with `[[]]`
/// and an empty seg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsdRecord {
    referent: String,
    canvas_res: u32,
    body: Option<RecordBody>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordBody {
    pub bbox: BoxBins,
    pub bricks: BrickSeq,
}

impl BsdRecord {
    pub fn new(
        referent: impl Into<String>,
        canvas_res: u32,
        bbox: BoxBins,
        bricks: BrickSeq,
    ) -> Result<Self, BsdError> {
        let referent = referent.into();
        validate_referent(&referent)?;
        if bbox.x2 >= canvas_res || bbox.y2 >= canvas_res {
            return Err(BsdError::BoxOutsideCanvas {
                x1: bbox.x1,
                y1: bbox.y1,
                x2: bbox.x2,
                y2: bbox.y2,
                canvas: canvas_res,
            });
        }
        let expected = bbox.area();
        let actual = bricks.total_cells();
        if expected != actual {
            return Err(BsdError::BrickSum { expected, actual });
        }
        Ok(BsdRecord {
            referent,
            canvas_res,
            body: Some(RecordBody { bbox, bricks }),
        })
    }

    pub fn no_target(referent: impl Into<String>, canvas_res: u32) -> Result<Self, BsdError> {
        let referent = referent.into();
        validate_referent(&referent)?;
        Ok(BsdRecord {
            referent,
            canvas_res,
            body: None,
        })
    }

    pub fn referent(&self) -> &str {
        &self.referent
    }

    pub fn canvas_res(&self) -> u32 {
        self.canvas_res
    }

    pub fn body(&self) -> Option<&RecordBody> {
        self.body.as_ref()
    }

    pub fn is_no_target(&self) -> bool {
        self.body.is_none()
    }

    /// Unpack the record onto an all-zero canvas of its own resolution.
    pub fn mask(&self) -> BinaryGrid {
        let mut grid = BinaryGrid::zeros(self.canvas_res, self.canvas_res)
            .expect("canvas resolution is validated nonzero at construction");
        if let Some(body) = &self.body {
            paint(&mut grid, body);
        }
        grid
    }

    /// In-box mask re-expressed as a row-wise `label*count` payload with the
    /// referent standing for foreground cells — the brick-free form used for
    /// length accounting.
    pub fn seg_labels_rrle(&self, bg_label: &str) -> String {
        let body = match &self.body {
            Some(b) => b,
            None => return String::new(),
        };
        let bits = bits_from_bricks(&body.bricks);
        let width = body.bbox.width() as usize;
        let mut payload = String::new();
        for (r, row) in bits.chunks(width).enumerate() {
            if r > 0 {
                payload.push('\n');
            }
            let mut i = 0;
            let mut first = true;
            while i < row.len() {
                let bit = row[i];
                let start = i;
                while i < row.len() && row[i] == bit {
                    i += 1;
                }
                if !first {
                    payload.push('|');
                }
                first = false;
                payload.push_str(if bit { &self.referent } else { bg_label });
                let run = i - start;
                if run > 1 {
                    payload.push('*');
                    payload.push_str(&run.to_string());
                }
            }
        }
        payload
    }
}

fn validate_referent(referent: &str) -> Result<(), BsdError> {
    for marker in MARKERS {
        if referent.contains(marker) {
            return Err(BsdError::ReservedReferent { marker });
        }
    }
    Ok(())
}

fn paint(grid: &mut BinaryGrid, body: &RecordBody) {
    let bits = bits_from_bricks(&body.bricks);
    let width = body.bbox.width();
    for (i, bit) in bits.iter().enumerate() {
        if !bit {
            continue;
        }
        let r = body.bbox.y1 + (i as u32) / width;
        let c = body.bbox.x1 + (i as u32) % width;
        if r < grid.rows() && c < grid.cols() {
            grid.set(r, c, true);
        }
    }
}

/// Encode a canvas-resolution binary mask as a record: tight box plus
/// in-box bricks in raster order. An all-zero mask yields the no-target form.
pub fn encode_record(mask: &BinaryGrid, referent: impl Into<String>) -> Result<BsdRecord, BsdError> {
    if mask.rows() != mask.cols() {
        return Err(BsdError::NonSquareCanvas {
            rows: mask.rows(),
            cols: mask.cols(),
        });
    }
    let canvas_res = mask.rows();
    let bbox = match mask.tight_box() {
        Some(b) => b,
        None => return BsdRecord::no_target(referent, canvas_res),
    };
    let mut bits = Vec::with_capacity(bbox.area() as usize);
    for r in bbox.y1..=bbox.y2 {
        for c in bbox.x1..=bbox.x2 {
            bits.push(mask.get(r, c));
        }
    }
    let bricks = bricks_from_bits(&bits).expect("box area is at least one cell");
    BsdRecord::new(referent, canvas_res, bbox, bricks)
}

/// Serialize records in order, one `<ref>..</ref><box>..</box><seg>..</seg>`
/// triple each, concatenated without separators.
pub fn serialize(records: &[BsdRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str("<ref>");
        out.push_str(&record.referent);
        out.push_str("</ref><box>[[");
        if let Some(body) = &record.body {
            out.push_str(&format!(
                "{} {} {} {}",
                body.bbox.x1, body.bbox.y1, body.bbox.x2, body.bbox.y2
            ));
        }
        out.push_str("]]</box><seg>");
        if let Some(body) = &record.body {
            out.push_str(&body.bricks.to_text());
        }
        out.push_str("</seg>");
    }
    out
}

/// Brick-free serialization of the same records: the seg payload holds the
/// in-box mask as `label*count` rows instead of brick names.
pub fn serialize_no_bricks(records: &[BsdRecord], bg_label: &str) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str("<ref>");
        out.push_str(&record.referent);
        out.push_str("</ref><box>[[");
        if let Some(body) = &record.body {
            out.push_str(&format!(
                "{} {} {} {}",
                body.bbox.x1, body.bbox.y1, body.bbox.x2, body.bbox.y2
            ));
        }
        out.push_str("]]</box><seg>");
        out.push_str(&record.seg_labels_rrle(bg_label));
        out.push_str("</seg>");
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BsdParseError {
    #[error("`{marker}` not closed (byte {offset})")]
    Unterminated { marker: &'static str, offset: usize },
    #[error("expected `{marker}` at byte {offset}")]
    ExpectedMarker { marker: &'static str, offset: usize },
    #[error("box is not of the form [[x1 y1 x2 y2]] (byte {offset})")]
    BoxSyntax { offset: usize },
    #[error("box holds {count} coordinates, expected 4 or none (byte {offset})")]
    BoxArity { count: usize, offset: usize },
    #[error("box corners out of order at byte {offset}")]
    BoxOrder { offset: usize },
    #[error("box coordinate {value} exceeds canvas resolution {canvas} (byte {offset})")]
    BoxRange {
        value: u32,
        canvas: u32,
        offset: usize,
    },
    #[error("unknown brick token {token:?} at byte {offset}")]
    UnknownBrick { token: String, offset: usize },
    #[error("brick lengths sum to {actual}, box covers {expected} cells (byte {offset})")]
    BrickSum {
        expected: u64,
        actual: u64,
        offset: usize,
    },
    #[error("no-target record carries a non-empty seg (byte {offset})")]
    NoTargetSeg { offset: usize },
    #[error("referent embeds marker text (byte {offset})")]
    ReferentMarkers { offset: usize },
}

impl BsdParseError {
    pub fn rule(&self) -> &'static str {
        match self {
            BsdParseError::Unterminated { marker, .. } => match *marker {
                "<ref>" => "unterminated-ref",
                "<box>" => "unterminated-box",
                _ => "unterminated-seg",
            },
            BsdParseError::ExpectedMarker { marker, .. } => match *marker {
                "<box>" => "missing-box",
                _ => "missing-seg",
            },
            BsdParseError::BoxSyntax { .. } => "box-syntax",
            BsdParseError::BoxArity { .. } => "box-arity",
            BsdParseError::BoxOrder { .. } => "box-order",
            BsdParseError::BoxRange { .. } => "box-range",
            BsdParseError::UnknownBrick { .. } => "unknown-brick",
            BsdParseError::BrickSum { .. } => "seg-fill",
            BsdParseError::NoTargetSeg { .. } => "no-target-seg",
            BsdParseError::ReferentMarkers { .. } => "referent-markers",
        }
    }

    pub fn offset(&self) -> usize {
        match self {
            BsdParseError::Unterminated { offset, .. }
            | BsdParseError::ExpectedMarker { offset, .. }
            | BsdParseError::BoxSyntax { offset }
            | BsdParseError::BoxArity { offset, .. }
            | BsdParseError::BoxOrder { offset }
            | BsdParseError::BoxRange { offset, .. }
            | BsdParseError::UnknownBrick { offset, .. }
            | BsdParseError::BrickSum { offset, .. }
            | BsdParseError::NoTargetSeg { offset }
            | BsdParseError::ReferentMarkers { offset } => *offset,
        }
    }
}

/// Records recovered from a response plus any lenient-mode repairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBsd {
    pub records: Vec<BsdRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Scan `text` for record triples. Prose before, between, and after records
/// is ignored. Strict mode fails on the first grammar violation; lenient
/// mode repairs (pad, truncate, swap, clamp, skip) and reports each repair.
pub fn parse(text: &str, canvas_res: u32, mode: Mode) -> Result<ParsedBsd, BsdParseError> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut pos = 0usize;

    while let Some(rel) = text[pos..].find("<ref>") {
        let ref_open = pos + rel;
        let referent_start = ref_open + "<ref>".len();
        let Some(rel_close) = text[referent_start..].find("</ref>") else {
            match mode {
                Mode::Strict => {
                    return Err(BsdParseError::Unterminated {
                        marker: "<ref>",
                        offset: ref_open,
                    })
                }
                Mode::Lenient => {
                    diagnostics.push(Diagnostic::warning(
                        "unterminated-ref",
                        ref_open,
                        "record abandoned: `<ref>` never closes",
                    ));
                    break;
                }
            }
        };
        let mut referent = text[referent_start..referent_start + rel_close].to_string();
        let mut cursor = referent_start + rel_close + "</ref>".len();

        if validate_referent(&referent).is_err() {
            match mode {
                Mode::Strict => {
                    return Err(BsdParseError::ReferentMarkers { offset: referent_start })
                }
                Mode::Lenient => {
                    for marker in MARKERS {
                        referent = referent.replace(marker, "");
                    }
                    diagnostics.push(Diagnostic::warning(
                        "referent-markers",
                        referent_start,
                        "marker text stripped from referent",
                    ));
                }
            }
        }

        // <box> must follow the referent immediately
        let box_open = match expect_marker(text, cursor, "<box>", mode, &mut diagnostics)? {
            Some(at) => at,
            None => {
                // lenient recovery: no box for this record, keep it no-target
                records.push(make_no_target(&referent, canvas_res));
                continue_after(&mut pos, cursor);
                continue;
            }
        };
        let box_start = box_open + "<box>".len();
        let Some(rel_close) = text[box_start..].find("</box>") else {
            match mode {
                Mode::Strict => {
                    return Err(BsdParseError::Unterminated {
                        marker: "<box>",
                        offset: box_open,
                    })
                }
                Mode::Lenient => {
                    diagnostics.push(Diagnostic::warning(
                        "unterminated-box",
                        box_open,
                        "record abandoned: `<box>` never closes",
                    ));
                    records.push(make_no_target(&referent, canvas_res));
                    break;
                }
            }
        };
        let box_text = &text[box_start..box_start + rel_close];
        cursor = box_start + rel_close + "</box>".len();

        let bbox = parse_box(box_text, box_start, canvas_res, mode, &mut diagnostics)?;

        // <seg> must follow the box immediately
        let seg_open = match expect_marker(text, cursor, "<seg>", mode, &mut diagnostics)? {
            Some(at) => at,
            None => {
                records.push(match bbox {
                    None => make_no_target(&referent, canvas_res),
                    Some(bbox) => {
                        diagnostics.push(Diagnostic::warning(
                            "seg-fill",
                            cursor,
                            "missing seg filled with background bricks",
                        ));
                        filled_record(&referent, canvas_res, bbox, BrickSeq::default())
                    }
                });
                continue_after(&mut pos, cursor);
                continue;
            }
        };
        let seg_start = seg_open + "<seg>".len();
        let (seg_text, after_seg) = match text[seg_start..].find("</seg>") {
            Some(rel_close) => (
                &text[seg_start..seg_start + rel_close],
                seg_start + rel_close + "</seg>".len(),
            ),
            None => match mode {
                Mode::Strict => {
                    return Err(BsdParseError::Unterminated {
                        marker: "<seg>",
                        offset: seg_open,
                    })
                }
                Mode::Lenient => {
                    diagnostics.push(Diagnostic::warning(
                        "unterminated-seg",
                        seg_open,
                        "seg parsed to end of text",
                    ));
                    (&text[seg_start..], text.len())
                }
            },
        };

        let mut bricks = Vec::new();
        for (tok_offset, token) in tokens_with_offsets(seg_text) {
            match BrickToken::parse_name(token) {
                Some(b) => bricks.push(b),
                None => match mode {
                    Mode::Strict => {
                        return Err(BsdParseError::UnknownBrick {
                            token: token.to_string(),
                            offset: seg_start + tok_offset,
                        })
                    }
                    Mode::Lenient => diagnostics.push(Diagnostic::warning(
                        "unknown-brick",
                        seg_start + tok_offset,
                        format!("token {token:?} is not a brick, skipped"),
                    )),
                },
            }
        }
        let bricks = BrickSeq::new(bricks);

        match bbox {
            None => {
                if !bricks.is_empty() {
                    match mode {
                        Mode::Strict => {
                            return Err(BsdParseError::NoTargetSeg { offset: seg_start })
                        }
                        Mode::Lenient => diagnostics.push(Diagnostic::warning(
                            "no-target-seg",
                            seg_start,
                            "bricks dropped from a no-target record",
                        )),
                    }
                }
                records.push(make_no_target(&referent, canvas_res));
            }
            Some(bbox) => {
                let expected = bbox.area();
                let actual = bricks.total_cells();
                if expected != actual && mode == Mode::Strict {
                    return Err(BsdParseError::BrickSum {
                        expected,
                        actual,
                        offset: seg_start,
                    });
                }
                let bricks = if actual < expected {
                    if mode == Mode::Lenient {
                        diagnostics.push(Diagnostic::warning(
                            "seg-fill",
                            seg_start,
                            format!("seg underfilled ({actual} of {expected} cells), padded with background"),
                        ));
                    }
                    pad_bricks(bricks, expected - actual)
                } else if actual > expected {
                    diagnostics.push(Diagnostic::warning(
                        "seg-fill",
                        seg_start,
                        format!("seg overfilled ({actual} of {expected} cells), truncated"),
                    ));
                    truncate_bricks(bricks, expected)
                } else {
                    bricks
                };
                records.push(filled_record(&referent, canvas_res, bbox, bricks));
            }
        }
        pos = after_seg;
    }

    Ok(ParsedBsd {
        records,
        diagnostics,
    })
}

fn continue_after(pos: &mut usize, cursor: usize) {
    *pos = cursor;
}

fn make_no_target(referent: &str, canvas_res: u32) -> BsdRecord {
    BsdRecord::no_target(referent, canvas_res).expect("referent sanitized before this point")
}

fn filled_record(referent: &str, canvas_res: u32, bbox: BoxBins, bricks: BrickSeq) -> BsdRecord {
    let expected = bbox.area();
    let actual = bricks.total_cells();
    let bricks = if actual < expected {
        pad_bricks(bricks, expected - actual)
    } else if actual > expected {
        truncate_bricks(bricks, expected)
    } else {
        bricks
    };
    BsdRecord::new(referent, canvas_res, bbox, bricks)
        .expect("box and brick sum are reconciled before construction")
}

fn pad_bricks(seq: BrickSeq, missing: u64) -> BrickSeq {
    let mut tokens = seq.0;
    let mut left = missing;
    while left > 0 {
        let take = left.min(BRICK_MAX_LEN as u64) as u8;
        tokens.push(BrickToken::new(Polarity::Bg, take).unwrap());
        left -= take as u64;
    }
    BrickSeq(tokens)
}

fn truncate_bricks(seq: BrickSeq, keep: u64) -> BrickSeq {
    let mut tokens = Vec::new();
    let mut left = keep;
    for brick in seq.0 {
        if left == 0 {
            break;
        }
        let take = left.min(brick.length as u64) as u8;
        tokens.push(BrickToken::new(brick.polarity, take).unwrap());
        left -= take as u64;
    }
    BrickSeq(tokens)
}

/// Strict: `marker` must start exactly at `at`. Lenient: search forward,
/// reporting skipped junk; `Ok(None)` means the marker never appears.
fn expect_marker(
    text: &str,
    at: usize,
    marker: &'static str,
    mode: Mode,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Option<usize>, BsdParseError> {
    if text[at..].starts_with(marker) {
        return Ok(Some(at));
    }
    match mode {
        Mode::Strict => Err(BsdParseError::ExpectedMarker { marker, offset: at }),
        Mode::Lenient => {
            let rule = if marker == "<box>" { "missing-box" } else { "missing-seg" };
            match text[at..].find(marker) {
                Some(rel) => {
                    // don't jump over the start of the next record
                    let next_ref = text[at..].find("<ref>");
                    if next_ref.is_some_and(|r| r < rel) {
                        diagnostics.push(Diagnostic::warning(
                            rule,
                            at,
                            format!("`{marker}` missing before the next record"),
                        ));
                        Ok(None)
                    } else {
                        diagnostics.push(Diagnostic::warning(
                            "stray-in-record",
                            at,
                            format!("unexpected text before `{marker}`"),
                        ));
                        Ok(Some(at + rel))
                    }
                }
                None => {
                    diagnostics.push(Diagnostic::warning(
                        rule,
                        at,
                        format!("`{marker}` missing, record closed early"),
                    ));
                    Ok(None)
                }
            }
        }
    }
}

/// Parse `[[x1 y1 x2 y2]]` or the no-target `[[]]`.
///
/// Returns `Ok(None)` for the no-target form (and for lenient recoveries
/// that lose the box entirely).
fn parse_box(
    box_text: &str,
    offset: usize,
    canvas_res: u32,
    mode: Mode,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Option<BoxBins>, BsdParseError> {
    let trimmed = box_text.trim();
    let inner = trimmed
        .strip_prefix("[[")
        .and_then(|rest| rest.strip_suffix("]]"));
    let inner = match inner {
        Some(i) => i,
        None => match mode {
            Mode::Strict => return Err(BsdParseError::BoxSyntax { offset }),
            Mode::Lenient => {
                diagnostics.push(Diagnostic::warning(
                    "box-syntax",
                    offset,
                    "box brackets malformed, coordinates salvaged from digits",
                ));
                trimmed.trim_matches(|c| c == '[' || c == ']')
            }
        },
    };

    let parts: Vec<&str> = inner.split_whitespace().collect();
    if parts.is_empty() {
        return Ok(None);
    }
    let mut coords = Vec::with_capacity(4);
    for part in &parts {
        match part.parse::<u32>() {
            Ok(v) => coords.push(v),
            Err(_) => match mode {
                Mode::Strict => return Err(BsdParseError::BoxSyntax { offset }),
                Mode::Lenient => {
                    diagnostics.push(Diagnostic::warning(
                        "box-syntax",
                        offset,
                        format!("coordinate {part:?} is not an integer, skipped"),
                    ));
                }
            },
        }
    }
    if coords.len() != 4 {
        match mode {
            Mode::Strict => {
                return Err(BsdParseError::BoxArity {
                    count: coords.len(),
                    offset,
                })
            }
            Mode::Lenient => {
                if coords.len() > 4 {
                    diagnostics.push(Diagnostic::warning(
                        "box-arity",
                        offset,
                        format!("{} coordinates, extra ones dropped", coords.len()),
                    ));
                    coords.truncate(4);
                } else {
                    diagnostics.push(Diagnostic::warning(
                        "box-arity",
                        offset,
                        format!("{} coordinates, record treated as no-target", coords.len()),
                    ));
                    return Ok(None);
                }
            }
        }
    }

    let (mut x1, mut y1, mut x2, mut y2) = (coords[0], coords[1], coords[2], coords[3]);
    if x1 > x2 || y1 > y2 {
        match mode {
            Mode::Strict => return Err(BsdParseError::BoxOrder { offset }),
            Mode::Lenient => {
                if x1 > x2 {
                    std::mem::swap(&mut x1, &mut x2);
                }
                if y1 > y2 {
                    std::mem::swap(&mut y1, &mut y2);
                }
                diagnostics.push(Diagnostic::warning(
                    "box-order",
                    offset,
                    "box corners swapped into order",
                ));
            }
        }
    }
    if x2 >= canvas_res || y2 >= canvas_res {
        match mode {
            Mode::Strict => {
                return Err(BsdParseError::BoxRange {
                    value: x2.max(y2),
                    canvas: canvas_res,
                    offset,
                })
            }
            Mode::Lenient => {
                x1 = x1.min(canvas_res - 1);
                y1 = y1.min(canvas_res - 1);
                x2 = x2.min(canvas_res - 1);
                y2 = y2.min(canvas_res - 1);
                diagnostics.push(Diagnostic::warning(
                    "box-range",
                    offset,
                    format!("box clamped to canvas resolution {canvas_res}"),
                ));
            }
        }
    }
    Ok(Some(BoxBins::new(x1, y1, x2, y2).expect("ordered above")))
}

/// Whitespace-separated tokens with their byte offsets.
fn tokens_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = text.as_bytes();
    let mut i = 0usize;
    std::iter::from_fn(move || {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return None;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        Some((start, &text[start..i]))
    })
}

/// Unpack every record onto its own canvas and merge them into one label
/// grid, later records painting over earlier ones. Record `i` maps to label
/// id `i + 1`; id 0 stays background.
pub fn rasterize(records: &[BsdRecord], canvas_res: u32) -> (Vec<BinaryGrid>, LabelGrid) {
    let canvas_res = canvas_res.max(1);
    let mut per_record = Vec::with_capacity(records.len());
    let mut merged = vec![0u32; (canvas_res as usize) * (canvas_res as usize)];

    for (index, record) in records.iter().enumerate() {
        let mut grid = BinaryGrid::zeros(canvas_res, canvas_res).expect("nonzero canvas");
        if let Some(body) = record.body() {
            paint(&mut grid, body);
        }
        for r in 0..canvas_res {
            for c in 0..canvas_res {
                if grid.get(r, c) {
                    merged[(r as usize) * (canvas_res as usize) + c as usize] = index as u32 + 1;
                }
            }
        }
        per_record.push(grid);
    }

    let table = merged_table(records);
    let grid = LabelGrid::new(canvas_res, canvas_res, merged, table)
        .expect("merged ids are 0..=len, all present in the table");
    (per_record, grid)
}

/// Label table for a merged canvas: id 0 is background, id i+1 carries the
/// i-th referent, sanitized of reserved characters and de-duplicated.
fn merged_table(records: &[BsdRecord]) -> LabelTable {
    let mut entries: Vec<(u32, String)> = Vec::with_capacity(records.len());
    let mut used: std::collections::HashSet<String> = std::collections::HashSet::new();
    used.insert(crate::raster::DEFAULT_BACKGROUND_LABEL.to_string());
    for (index, record) in records.iter().enumerate() {
        let mut label: String = record
            .referent()
            .chars()
            .map(|c| if RESERVED_LABEL_CHARS.contains(&c) { '_' } else { c })
            .collect();
        if label.is_empty() {
            label = format!("roi{index}");
        }
        if used.contains(&label) {
            let mut k = 2usize;
            while used.contains(&format!("{label} ({k})")) {
                k += 1;
            }
            label = format!("{label} ({k})");
        }
        used.insert(label.clone());
        entries.push((index as u32 + 1, label));
    }
    LabelTable::from_entries(entries).expect("labels sanitized and de-duplicated")
}
