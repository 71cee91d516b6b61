//! Raster substrate: label tables, pixel masks, coarse label grids, binary
//! grids, and box quantization.
//!
//! Everything here is immutable after construction and every operation is a
//! pure function, so values can be shared freely across threads.

use std::collections::HashMap;
use thiserror::Error;

/// Label id reserved for the background / no-target filler.
pub const BACKGROUND_ID: u32 = 0;
/// Text used for the background label when a table does not define id 0.
pub const DEFAULT_BACKGROUND_LABEL: &str = "others";
/// Characters that may not occur in any label text (they carry structure
/// in the serialized payloads).
pub const RESERVED_LABEL_CHARS: [char; 5] = ['|', '*', '\n', '<', '>'];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RasterError {
    #[error("label text must not be empty")]
    EmptyLabel,
    #[error("label {label:?} contains reserved character {ch:?}")]
    ReservedChar { label: String, ch: char },
    #[error("duplicate label id {0}")]
    DuplicateId(u32),
    #[error("duplicate label text {0:?}")]
    DuplicateLabel(String),
    #[error("label id {0} is not present in the table")]
    UnknownId(u32),
    #[error("data length {actual} does not match {width}x{height}")]
    DataLength {
        width: u32,
        height: u32,
        actual: usize,
    },
    #[error("dimensions must be at least 1 (got {0}x{1})")]
    ZeroDimension(u32, u32),
    #[error("box corners out of order: ({x1},{y1})..({x2},{y2})")]
    BoxOrder { x1: u32, y1: u32, x2: u32, y2: u32 },
    #[error("pixel box ({left},{top})..({right},{bottom}) exceeds {width}x{height}")]
    PixelBoxRange {
        left: u32,
        top: u32,
        right: u32,
        bottom: u32,
        width: u32,
        height: u32,
    },
}

/// Bidirectional map between integer label ids and label texts.
///
/// Id 0 is always present; it is the background entry and defaults to
/// `"others"` when the input entries do not define it. Entries are kept
/// sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    entries: Vec<(u32, String)>,
    by_id: HashMap<u32, usize>,
    by_label: HashMap<String, u32>,
}

impl LabelTable {
    pub fn from_entries<I, S>(entries: I) -> Result<Self, RasterError>
    where
        I: IntoIterator<Item = (u32, S)>,
        S: Into<String>,
    {
        let mut list: Vec<(u32, String)> = entries.into_iter().map(|(i, s)| (i, s.into())).collect();
        if !list.iter().any(|(id, _)| *id == BACKGROUND_ID) {
            list.push((BACKGROUND_ID, DEFAULT_BACKGROUND_LABEL.to_string()));
        }
        list.sort_by_key(|(id, _)| *id);

        let mut by_id = HashMap::with_capacity(list.len());
        let mut by_label = HashMap::with_capacity(list.len());
        for (idx, (id, label)) in list.iter().enumerate() {
            validate_label(label)?;
            if by_id.insert(*id, idx).is_some() {
                return Err(RasterError::DuplicateId(*id));
            }
            if by_label.insert(label.clone(), *id).is_some() {
                return Err(RasterError::DuplicateLabel(label.clone()));
            }
        }
        Ok(LabelTable {
            entries: list,
            by_id,
            by_label,
        })
    }

    /// Table containing only the background entry.
    pub fn background_only() -> Self {
        LabelTable::from_entries::<_, String>([]).expect("background table is valid")
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.by_id.get(&id).map(|&i| self.entries[i].1.as_str())
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.by_label.get(label).copied()
    }

    pub fn contains_id(&self, id: u32) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn background_label(&self) -> &str {
        self.label(BACKGROUND_ID).expect("id 0 always present")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.entries.iter().map(|(id, s)| (*id, s.as_str()))
    }
}

fn validate_label(label: &str) -> Result<(), RasterError> {
    if label.is_empty() {
        return Err(RasterError::EmptyLabel);
    }
    for ch in RESERVED_LABEL_CHARS {
        if label.contains(ch) {
            return Err(RasterError::ReservedChar {
                label: label.to_string(),
                ch,
            });
        }
    }
    Ok(())
}

/// Full-resolution label mask: one label id per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    data: Vec<u32>,
    table: LabelTable,
}

impl LabelMask {
    pub fn new(
        width: u32,
        height: u32,
        data: Vec<u32>,
        table: LabelTable,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimension(width, height));
        }
        if data.len() != (width as usize) * (height as usize) {
            return Err(RasterError::DataLength {
                width,
                height,
                actual: data.len(),
            });
        }
        for &id in &data {
            if !table.contains_id(id) {
                return Err(RasterError::UnknownId(id));
            }
        }
        Ok(LabelMask {
            width,
            height,
            data,
            table,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn table(&self) -> &LabelTable {
        &self.table
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.data[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Reduce the mask to a `rows x cols` grid by majority vote.
    ///
    /// Each grid cell owns the rectangular footprint of the source pixels
    /// whose centers fall inside it; the cell takes the most frequent label
    /// there, breaking ties toward the smallest id. A footprint can only be
    /// empty when the grid is finer than the mask, in which case the cell
    /// takes the label of the source pixel nearest its center.
    pub fn downsample(&self, rows: u32, cols: u32) -> Result<LabelGrid, RasterError> {
        if rows == 0 || cols == 0 {
            return Err(RasterError::ZeroDimension(cols, rows));
        }
        let (rows_u, cols_u) = (rows as usize, cols as usize);
        let mut tallies: Vec<HashMap<u32, u32>> = vec![HashMap::new(); rows_u * cols_u];

        for py in 0..self.height {
            let r = cell_of(py, self.height, rows);
            for px in 0..self.width {
                let c = cell_of(px, self.width, cols);
                let id = self.get(px, py);
                *tallies[r as usize * cols_u + c as usize].entry(id).or_insert(0) += 1;
            }
        }

        let mut cells = Vec::with_capacity(rows_u * cols_u);
        for r in 0..rows {
            for c in 0..cols {
                let tally = &tallies[r as usize * cols_u + c as usize];
                let id = if tally.is_empty() {
                    // finer grid than mask: nearest source pixel to the cell center
                    let px = nearest_source(c, cols, self.width);
                    let py = nearest_source(r, rows, self.height);
                    self.get(px, py)
                } else {
                    majority(tally)
                };
                cells.push(id);
            }
        }
        LabelGrid::new(rows, cols, cells, self.table.clone())
    }
}

/// Grid cell whose footprint contains the center of source pixel `p`.
fn cell_of(p: u32, extent: u32, cells: u32) -> u32 {
    // floor((p + 0.5) * cells / extent), exact in integers
    let v = (2 * p as u64 + 1) * cells as u64 / (2 * extent as u64);
    (v as u32).min(cells - 1)
}

/// Source pixel whose center is nearest to the center of cell `c`.
fn nearest_source(c: u32, cells: u32, extent: u32) -> u32 {
    // floor((c + 0.5) * extent / cells), clamped into range
    let v = (2 * c as u64 + 1) * extent as u64 / (2 * cells as u64);
    (v as u32).min(extent - 1)
}

fn majority(tally: &HashMap<u32, u32>) -> u32 {
    let mut best_id = u32::MAX;
    let mut best_count = 0u32;
    for (&id, &count) in tally {
        if count > best_count || (count == best_count && id < best_id) {
            best_id = id;
            best_count = count;
        }
    }
    best_id
}

/// Coarse grid of label ids, the unit every text codec operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    rows: u32,
    cols: u32,
    cells: Vec<u32>,
    table: LabelTable,
}

impl LabelGrid {
    pub fn new(
        rows: u32,
        cols: u32,
        cells: Vec<u32>,
        table: LabelTable,
    ) -> Result<Self, RasterError> {
        if rows == 0 || cols == 0 {
            return Err(RasterError::ZeroDimension(cols, rows));
        }
        if cells.len() != (rows as usize) * (cols as usize) {
            return Err(RasterError::DataLength {
                width: cols,
                height: rows,
                actual: cells.len(),
            });
        }
        for &id in &cells {
            if !table.contains_id(id) {
                return Err(RasterError::UnknownId(id));
            }
        }
        Ok(LabelGrid {
            rows,
            cols,
            cells,
            table,
        })
    }

    pub fn filled(rows: u32, cols: u32, id: u32, table: LabelTable) -> Result<Self, RasterError> {
        let cells = vec![id; (rows as usize) * (cols as usize)];
        LabelGrid::new(rows, cols, cells, table)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn table(&self) -> &LabelTable {
        &self.table
    }

    pub fn get(&self, r: u32, c: u32) -> u32 {
        self.cells[(r as usize) * (self.cols as usize) + c as usize]
    }

    /// Blow the grid back up to a pixel mask by nearest-cell assignment.
    ///
    /// Inverse direction of [`LabelMask::downsample`] in shape only; a
    /// round trip through a coarser grid loses detail.
    pub fn upsample(&self, width: u32, height: u32) -> Result<LabelMask, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimension(width, height));
        }
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for py in 0..height {
            let r = cell_of(py, height, self.rows);
            for px in 0..width {
                let c = cell_of(px, width, self.cols);
                data.push(self.get(r, c));
            }
        }
        LabelMask::new(width, height, data, self.table.clone())
    }

    /// 1 where the cell equals `target`, 0 elsewhere.
    pub fn binarize(&self, target: u32) -> BinaryGrid {
        let bits = self.cells.iter().map(|&id| id == target).collect();
        BinaryGrid::new(self.rows, self.cols, bits).expect("same dims as grid")
    }
}

/// Row-major bit grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    rows: u32,
    cols: u32,
    bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(rows: u32, cols: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        if rows == 0 || cols == 0 {
            return Err(RasterError::ZeroDimension(cols, rows));
        }
        if bits.len() != (rows as usize) * (cols as usize) {
            return Err(RasterError::DataLength {
                width: cols,
                height: rows,
                actual: bits.len(),
            });
        }
        Ok(BinaryGrid { rows, cols, bits })
    }

    pub fn zeros(rows: u32, cols: u32) -> Result<Self, RasterError> {
        BinaryGrid::new(rows, cols, vec![false; (rows as usize) * (cols as usize)])
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: u32, c: u32) -> bool {
        self.bits[(r as usize) * (self.cols as usize) + c as usize]
    }

    pub fn set(&mut self, r: u32, c: u32, v: bool) {
        self.bits[(r as usize) * (self.cols as usize) + c as usize] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Smallest box (inclusive corners) containing every set bit, or `None`
    /// when the grid is all zeros.
    pub fn tight_box(&self) -> Option<BoxBins> {
        let mut min_r = u32::MAX;
        let mut max_r = 0u32;
        let mut min_c = u32::MAX;
        let mut max_c = 0u32;
        let mut any = false;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    any = true;
                    min_r = min_r.min(r);
                    max_r = max_r.max(r);
                    min_c = min_c.min(c);
                    max_c = max_c.max(c);
                }
            }
        }
        if !any {
            return None;
        }
        Some(BoxBins::new(min_c, min_r, max_c, max_r).expect("scan yields ordered corners"))
    }
}

/// Box in bin coordinates with inclusive corners; a point occupies one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxBins {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoxBins {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, RasterError> {
        if x1 > x2 || y1 > y2 {
            return Err(RasterError::BoxOrder { x1, y1, x2, y2 });
        }
        Ok(BoxBins { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1 + 1
    }

    /// Number of cells covered (inclusive geometry).
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

/// Axis-aligned pixel rectangle with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelBox {
    pub fn new(left: u32, top: u32, right: u32, bottom: u32) -> Result<Self, RasterError> {
        if left > right || top > bottom {
            return Err(RasterError::BoxOrder {
                x1: left,
                y1: top,
                x2: right,
                y2: bottom,
            });
        }
        Ok(PixelBox {
            left,
            top,
            right,
            bottom,
        })
    }
}

/// Quantize a pixel rectangle onto `r` discrete bins per axis.
///
/// Each coordinate maps through `floor(c * r / extent)` and is clamped into
/// `[0, r-1]`, so bins have uniform width and cover the full pixel range.
pub fn quantize_box(
    px_box: &PixelBox,
    width: u32,
    height: u32,
    r: u32,
) -> Result<BoxBins, RasterError> {
    if width == 0 || height == 0 || r == 0 {
        return Err(RasterError::ZeroDimension(width, height));
    }
    if px_box.right >= width || px_box.bottom >= height {
        return Err(RasterError::PixelBoxRange {
            left: px_box.left,
            top: px_box.top,
            right: px_box.right,
            bottom: px_box.bottom,
            width,
            height,
        });
    }
    let bin = |c: u32, extent: u32| -> u32 {
        ((c as u64 * r as u64 / extent as u64) as u32).min(r - 1)
    };
    BoxBins::new(
        bin(px_box.left, width),
        bin(px_box.top, height),
        bin(px_box.right, width),
        bin(px_box.bottom, height),
    )
}
