//! Image-wise semantic descriptors: lossless text encodings of a label grid.
//!
//! Three encodings share one run grammar (`label` or `label*count`, `|`
//! between runs):
//!
//! * `FULL` — every cell spelled out, rows separated by `\n`;
//! * `IRLE` — runs over the flattened row-major sequence, no newlines;
//! * `RRLE` — runs within each row, rows separated by `\n`.
//!
//! Decoding is strict (any grammar violation is an error) or lenient
//! (unknown labels map to the background id, overflow is truncated,
//! shortfall is padded, and every repair is reported as a diagnostic).

use crate::diag::{Diagnostic, Mode};
use crate::raster::{LabelGrid, LabelTable, BACKGROUND_ID};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Encoding kind of a descriptor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Full,
    Irle,
    Rrle,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Encoding::Full => "full",
            Encoding::Irle => "irle",
            Encoding::Rrle => "rrle",
        };
        f.write_str(name)
    }
}

/// A serialized descriptor payload together with its shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorText {
    pub kind: Encoding,
    pub payload: String,
    pub rows: u32,
    pub cols: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("label id {0} has no text in the table")]
    MissingLabelId(u32),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unknown label {label:?} at byte {offset}")]
    UnknownLabel { label: String, offset: usize },
    #[error("malformed run {item:?} at byte {offset}: {reason}")]
    MalformedRun {
        item: String,
        offset: usize,
        reason: &'static str,
    },
    #[error("row {row} holds {actual} cells, expected {expected}")]
    RowWidth {
        row: u32,
        expected: u32,
        actual: u64,
        offset: usize,
    },
    #[error("payload holds {actual} cells, expected {expected}")]
    TotalCells { expected: u64, actual: u64, offset: usize },
    #[error("payload holds {actual} rows, expected {expected}")]
    RowCount {
        expected: u32,
        actual: u32,
        offset: usize,
    },
    #[error("newline not allowed in I-RLE payload (byte {offset})")]
    UnexpectedNewline { offset: usize },
}

impl DecodeError {
    /// Stable rule name matching the lenient diagnostics vocabulary.
    pub fn rule(&self) -> &'static str {
        match self {
            DecodeError::UnknownLabel { .. } => "unknown-label",
            DecodeError::MalformedRun { .. } => "malformed-run",
            DecodeError::RowWidth { .. } => "row-shape",
            DecodeError::TotalCells { .. } => "cell-count",
            DecodeError::RowCount { .. } => "row-count",
            DecodeError::UnexpectedNewline { .. } => "unexpected-newline",
        }
    }

    pub fn offset(&self) -> usize {
        match self {
            DecodeError::UnknownLabel { offset, .. }
            | DecodeError::MalformedRun { offset, .. }
            | DecodeError::RowWidth { offset, .. }
            | DecodeError::TotalCells { offset, .. }
            | DecodeError::RowCount { offset, .. }
            | DecodeError::UnexpectedNewline { offset } => *offset,
        }
    }
}

/// Grid decoded from a payload plus any lenient-mode repairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub grid: LabelGrid,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn encode_full(grid: &LabelGrid) -> Result<DescriptorText, EncodeError> {
    encode(grid, Encoding::Full)
}

pub fn encode_irle(grid: &LabelGrid) -> Result<DescriptorText, EncodeError> {
    encode(grid, Encoding::Irle)
}

pub fn encode_rrle(grid: &LabelGrid) -> Result<DescriptorText, EncodeError> {
    encode(grid, Encoding::Rrle)
}

/// Encode a grid into the requested payload form.
pub fn encode(grid: &LabelGrid, kind: Encoding) -> Result<DescriptorText, EncodeError> {
    let table = grid.table();
    let label = |id: u32| table.label(id).ok_or(EncodeError::MissingLabelId(id));
    let mut payload = String::new();

    match kind {
        Encoding::Full => {
            for r in 0..grid.rows() {
                if r > 0 {
                    payload.push('\n');
                }
                for c in 0..grid.cols() {
                    if c > 0 {
                        payload.push('|');
                    }
                    payload.push_str(label(grid.get(r, c))?);
                }
            }
        }
        Encoding::Irle => {
            let mut first = true;
            for (id, count) in runs(grid.cells()) {
                if !first {
                    payload.push('|');
                }
                first = false;
                push_run(&mut payload, label(id)?, count);
            }
        }
        Encoding::Rrle => {
            let cols = grid.cols() as usize;
            for (r, row) in grid.cells().chunks(cols).enumerate() {
                if r > 0 {
                    payload.push('\n');
                }
                let mut first = true;
                for (id, count) in runs(row) {
                    if !first {
                        payload.push('|');
                    }
                    first = false;
                    push_run(&mut payload, label(id)?, count);
                }
            }
        }
    }

    Ok(DescriptorText {
        kind,
        payload,
        rows: grid.rows(),
        cols: grid.cols(),
    })
}

/// Maximal runs over a slice of ids.
fn runs(cells: &[u32]) -> impl Iterator<Item = (u32, u64)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= cells.len() {
            return None;
        }
        let id = cells[i];
        let start = i;
        while i < cells.len() && cells[i] == id {
            i += 1;
        }
        Some((id, (i - start) as u64))
    })
}

fn push_run(payload: &mut String, label: &str, count: u64) {
    payload.push_str(label);
    if count > 1 {
        payload.push('*');
        payload.push_str(&count.to_string());
    }
}

impl DescriptorText {
    pub fn decode(&self, table: &LabelTable, mode: Mode) -> Result<Decoded, DecodeError> {
        decode(&self.payload, self.kind, self.rows, self.cols, table, mode)
    }
}

/// Decode a payload back into a `rows x cols` grid.
///
/// In lenient mode the result is always `Ok`; the grid is best-effort and
/// `diagnostics` accounts for every repair.
pub fn decode(
    payload: &str,
    kind: Encoding,
    rows: u32,
    cols: u32,
    table: &LabelTable,
    mode: Mode,
) -> Result<Decoded, DecodeError> {
    let total = rows as u64 * cols as u64;
    let mut diagnostics = Vec::new();
    let mut cells: Vec<u32> = Vec::with_capacity(total as usize);
    let mut overflowed = false;

    // newline handling: IRLE forbids it, FULL/RRLE use it as the row separator
    if kind == Encoding::Irle {
        if let Some(pos) = payload.find('\n') {
            match mode {
                Mode::Strict => return Err(DecodeError::UnexpectedNewline { offset: pos }),
                Mode::Lenient => diagnostics.push(Diagnostic::warning(
                    "unexpected-newline",
                    pos,
                    "newline treated as a run separator in an I-RLE payload",
                )),
            }
        }
    } else if mode == Mode::Strict {
        // validate the row count up front so the scan below is bounded
        let mut line_count: u32 = 0;
        let mut extra_offset = payload.len();
        for (offset, _) in split_keep_offsets(payload, '\n') {
            line_count = line_count.saturating_add(1);
            if line_count as u64 == rows as u64 + 1 {
                extra_offset = offset;
            }
        }
        if line_count != rows {
            return Err(DecodeError::RowCount {
                expected: rows,
                actual: line_count,
                offset: if line_count > rows { extra_offset } else { payload.len() },
            });
        }
    }

    let mut row_index: u32 = 0;
    let mut line_start = 0usize;
    for line in split_keep_offsets(payload, '\n') {
        line_start = line.0;
        let mut row_cells: u64 = 0;
        for (item_offset, item) in split_keep_offsets(line.1, '|').map(|(o, s)| (line.0 + o, s)) {
            if item.is_empty() {
                // an empty payload or empty line carries zero items; an empty
                // item между separators is malformed
                if line.1.is_empty() {
                    continue;
                }
                match mode {
                    Mode::Strict => {
                        return Err(DecodeError::MalformedRun {
                            item: String::new(),
                            offset: item_offset,
                            reason: "empty descriptor",
                        })
                    }
                    Mode::Lenient => {
                        diagnostics.push(Diagnostic::warning(
                            "malformed-run",
                            item_offset,
                            "empty descriptor skipped",
                        ));
                        continue;
                    }
                }
            }

            let (label_text, count) = match parse_run(item) {
                Ok(v) => v,
                Err(reason) => match mode {
                    Mode::Strict => {
                        return Err(DecodeError::MalformedRun {
                            item: item.to_string(),
                            offset: item_offset,
                            reason,
                        })
                    }
                    Mode::Lenient => {
                        diagnostics.push(Diagnostic::warning(
                            "malformed-run",
                            item_offset,
                            format!("{reason} in {item:?}, count treated as 1"),
                        ));
                        let label = item.split('*').next().unwrap_or("");
                        if label.is_empty() {
                            continue;
                        }
                        (label, 1)
                    }
                },
            };

            let id = match table.id(label_text) {
                Some(id) => id,
                None => match mode {
                    Mode::Strict => {
                        return Err(DecodeError::UnknownLabel {
                            label: label_text.to_string(),
                            offset: item_offset,
                        })
                    }
                    Mode::Lenient => {
                        let trimmed = label_text.trim();
                        if let Some(id) = table.id(trimmed).filter(|_| trimmed != label_text) {
                            diagnostics.push(Diagnostic::warning(
                                "whitespace-trimmed",
                                item_offset,
                                format!("label {label_text:?} matched after trimming"),
                            ));
                            id
                        } else {
                            diagnostics.push(Diagnostic::warning(
                                "unknown-label",
                                item_offset,
                                format!("unknown label {label_text:?} mapped to background"),
                            ));
                            BACKGROUND_ID
                        }
                    }
                },
            };

            row_cells = row_cells.saturating_add(count);
            match mode {
                Mode::Strict => {
                    // bail before pushing so oversized counts never allocate
                    if kind == Encoding::Irle {
                        if (cells.len() as u64).saturating_add(count) > total {
                            return Err(DecodeError::TotalCells {
                                expected: total,
                                actual: (cells.len() as u64).saturating_add(count),
                                offset: item_offset,
                            });
                        }
                    } else if row_cells > cols as u64 {
                        return Err(DecodeError::RowWidth {
                            row: row_index,
                            expected: cols,
                            actual: row_cells,
                            offset: item_offset,
                        });
                    }
                    cells.extend(std::iter::repeat_n(id, count as usize));
                }
                Mode::Lenient => {
                    if !overflowed {
                        let remaining = total - cells.len() as u64;
                        if count > remaining {
                            cells.extend(std::iter::repeat_n(id, remaining as usize));
                            diagnostics.push(Diagnostic::warning(
                                "cells-overflow",
                                item_offset,
                                format!("payload exceeds {total} cells, extra cells dropped"),
                            ));
                            overflowed = true;
                        } else {
                            cells.extend(std::iter::repeat_n(id, count as usize));
                        }
                    }
                }
            }
        }

        // per-row shape checks only make sense for the row-structured kinds
        if kind != Encoding::Irle && row_cells != cols as u64 {
            match mode {
                Mode::Strict => {
                    return Err(DecodeError::RowWidth {
                        row: row_index,
                        expected: cols,
                        actual: row_cells,
                        offset: line.0,
                    })
                }
                Mode::Lenient => diagnostics.push(Diagnostic::warning(
                    "row-shape",
                    line.0,
                    format!("row {row_index} holds {row_cells} cells, expected {cols}"),
                )),
            }
        }
        row_index += 1;
    }

    // strict mode already validated the row count up front
    if kind != Encoding::Irle && mode == Mode::Lenient && row_index != rows {
        diagnostics.push(Diagnostic::warning(
            "row-count",
            line_start,
            format!("payload holds {row_index} rows, expected {rows}"),
        ));
    }

    if (cells.len() as u64) < total {
        match mode {
            Mode::Strict => {
                return Err(DecodeError::TotalCells {
                    expected: total,
                    actual: cells.len() as u64,
                    offset: payload.len(),
                })
            }
            Mode::Lenient => {
                diagnostics.push(Diagnostic::warning(
                    "cells-underflow",
                    payload.len(),
                    format!(
                        "payload holds {} cells, padded to {total} with background",
                        cells.len()
                    ),
                ));
                cells.resize(total as usize, BACKGROUND_ID);
            }
        }
    }

    let grid = LabelGrid::new(rows, cols, cells, table.clone())
        .expect("decoded cells are table ids of the right count");
    Ok(Decoded { grid, diagnostics })
}

/// Split on a separator, yielding `(byte offset, piece)` pairs.
///
/// An empty input yields a single empty piece, mirroring `str::split`.
fn split_keep_offsets(text: &str, sep: char) -> impl Iterator<Item = (usize, &str)> {
    let mut pos = 0usize;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        match text[pos..].find(sep) {
            Some(rel) => {
                let piece = (pos, &text[pos..pos + rel]);
                pos += rel + sep.len_utf8();
                Some(piece)
            }
            None => {
                done = true;
                Some((pos, &text[pos..]))
            }
        }
    })
}

/// Parse one `label` / `label*count` item.
fn parse_run(item: &str) -> Result<(&str, u64), &'static str> {
    match item.find('*') {
        None => Ok((item, 1)),
        Some(star) => {
            let label = &item[..star];
            let count_text = &item[star + 1..];
            if label.is_empty() {
                return Err("run has no label before `*`");
            }
            if count_text.is_empty() {
                return Err("run has no count after `*`");
            }
            if !count_text.bytes().all(|b| b.is_ascii_digit()) {
                return Err("run count is not a positive integer");
            }
            let count: u64 = count_text.parse().map_err(|_| "run count out of range")?;
            if count == 0 {
                return Err("run count must be at least 1");
            }
            Ok((label, count))
        }
    }
}
