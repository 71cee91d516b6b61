//! Instruction-tuning corpus construction: raster annotations in, JSONL
//! query/response pairs out, in the image-wise or box-wise response format.
//!
//! Output lines follow the conversations layout:
//! `{"id", "image", "format", "resolution", "conversations":
//!   [{"from": "human", "value": QUERY}, {"from": "gpt", "value": RESPONSE}]}`.
//! Builds are deterministic: identical inputs and config produce
//! byte-identical output files.

use crate::bsd::{self, BsdError, BsdRecord};
use crate::imgio::{self, ImgError};
use crate::isd::{self, Encoding};
use crate::raster::{LabelGrid, LabelMask, LabelTable, RasterError, BACKGROUND_ID};
use crate::response::Expected;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Semantic,
    Referring,
    GeneralizedReferring,
    Reasoning,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Semantic => "semantic",
            Task::Referring => "referring",
            Task::GeneralizedReferring => "generalized_referring",
            Task::Reasoning => "reasoning",
        }
    }
}

/// Response format of a built sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleFormat {
    #[serde(rename = "isd-full")]
    IsdFull,
    #[serde(rename = "isd-rrle")]
    IsdRrle,
    #[serde(rename = "bsd")]
    Bsd,
}

impl fmt::Display for SampleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleFormat::IsdFull => "isd-full",
            SampleFormat::IsdRrle => "isd-rrle",
            SampleFormat::Bsd => "bsd",
        })
    }
}

impl std::str::FromStr for SampleFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "isd-full" => Ok(SampleFormat::IsdFull),
            "isd-rrle" => Ok(SampleFormat::IsdRrle),
            "bsd" => Ok(SampleFormat::Bsd),
            other => Err(format!(
                "unknown format {other:?}, expected isd-full, isd-rrle, or bsd"
            )),
        }
    }
}

/// One source annotation line.
///
/// Mask paths resolve relative to the annotations file. Referring-style
/// tasks map instance k to `referents[k]` (the last referent repeats when
/// instances outnumber referents); instances come either from one label-id
/// mask (non-zero ids in ascending order) or from per-instance binary masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instance_masks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_table: Option<String>,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub referents: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_target: bool,
}

/// One built query/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SampleWire", try_from = "SampleWire")]
pub struct InstructionSample {
    pub id: String,
    pub image: String,
    pub query: String,
    pub response: String,
    pub format: SampleFormat,
    pub resolution: u32,
}

#[derive(Serialize, Deserialize)]
struct SampleWire {
    id: String,
    image: String,
    format: SampleFormat,
    resolution: u32,
    conversations: Vec<Turn>,
}

#[derive(Serialize, Deserialize)]
struct Turn {
    from: String,
    value: String,
}

impl From<InstructionSample> for SampleWire {
    fn from(s: InstructionSample) -> Self {
        SampleWire {
            id: s.id,
            image: s.image,
            format: s.format,
            resolution: s.resolution,
            conversations: vec![
                Turn {
                    from: "human".to_string(),
                    value: s.query,
                },
                Turn {
                    from: "gpt".to_string(),
                    value: s.response,
                },
            ],
        }
    }
}

impl TryFrom<SampleWire> for InstructionSample {
    type Error = String;

    fn try_from(w: SampleWire) -> Result<Self, Self::Error> {
        let human = w
            .conversations
            .iter()
            .find(|t| t.from == "human")
            .ok_or("no human turn")?;
        let gpt = w
            .conversations
            .iter()
            .find(|t| t.from == "gpt")
            .ok_or("no gpt turn")?;
        Ok(InstructionSample {
            id: w.id,
            image: w.image,
            query: human.value.clone(),
            response: gpt.value.clone(),
            format: w.format,
            resolution: w.resolution,
        })
    }
}

/// Builder configuration; `templates` use `{labels}` as the referent slot
/// and rotate by annotation index when more than one is given.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub resolution: u32,
    pub canvas_res: u32,
    pub formats: Vec<SampleFormat>,
    pub templates: Vec<String>,
    pub response_prefix: String,
    /// When set, annotations of other tasks are skipped (counted, not built).
    pub tasks: Option<Vec<Task>>,
    /// Skip failing annotations instead of aborting the build.
    pub skip_errors: bool,
}

pub const DEFAULT_QUERY_TEMPLATE: &str = "Can you segment the {labels} in the image?";
pub const DEFAULT_RESPONSE_PREFIX: &str = "The result is: \n";

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            resolution: 16,
            canvas_res: 64,
            formats: vec![SampleFormat::IsdRrle],
            templates: vec![DEFAULT_QUERY_TEMPLATE.to_string()],
            response_prefix: DEFAULT_RESPONSE_PREFIX.to_string(),
            tasks: None,
            skip_errors: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("annotation {id}: {message}")]
    BadAnnotation { id: String, message: String },
    #[error(transparent)]
    Img(#[from] ImgError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Encode(#[from] isd::EncodeError),
    #[error(transparent)]
    Bsd(#[from] BsdError),
}

fn ann_err(ann: &Annotation, message: impl Into<String>) -> BuildError {
    BuildError::BadAnnotation {
        id: ann.id.clone(),
        message: message.into(),
    }
}

/// Pixel-level instances: id 0 is background, id k+1 is instance k.
struct PixelInstances {
    width: u32,
    height: u32,
    ids: Vec<u32>,
    count: usize,
}

fn load_instances(ann: &Annotation, base: &Path) -> Result<PixelInstances, BuildError> {
    if let Some(mask_path) = &ann.mask {
        let (width, height, raw) = imgio::read_ids(&base.join(mask_path))?;
        let mut present: Vec<u32> = raw
            .iter()
            .copied()
            .filter(|&id| id != BACKGROUND_ID)
            .collect();
        present.sort_unstable();
        present.dedup();
        let remap: BTreeMap<u32, u32> = present
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, k as u32 + 1))
            .collect();
        let ids = raw
            .into_iter()
            .map(|id| remap.get(&id).copied().unwrap_or(BACKGROUND_ID))
            .collect();
        Ok(PixelInstances {
            width,
            height,
            ids,
            count: present.len(),
        })
    } else if !ann.instance_masks.is_empty() {
        let mut width = 0;
        let mut height = 0;
        let mut ids: Vec<u32> = Vec::new();
        for (k, rel) in ann.instance_masks.iter().enumerate() {
            let (w, h, raw) = imgio::read_ids(&base.join(rel))?;
            if k == 0 {
                width = w;
                height = h;
                ids = vec![BACKGROUND_ID; raw.len()];
            } else if w != width || h != height {
                return Err(ann_err(
                    ann,
                    format!("instance mask {rel} is {w}x{h}, expected {width}x{height}"),
                ));
            }
            for (slot, value) in ids.iter_mut().zip(&raw) {
                if *value != 0 {
                    *slot = k as u32 + 1;
                }
            }
        }
        Ok(PixelInstances {
            width,
            height,
            ids,
            count: ann.instance_masks.len(),
        })
    } else {
        Err(ann_err(ann, "annotation carries neither mask nor instance_masks"))
    }
}

fn validate(ann: &Annotation) -> Result<(), BuildError> {
    match ann.task {
        Task::Semantic => {
            if !ann.no_target && (ann.mask.is_none() || ann.label_table.is_none()) {
                return Err(ann_err(ann, "semantic annotations need mask and label_table"));
            }
        }
        _ => {
            if ann.referents.is_empty() {
                return Err(ann_err(ann, "referring-style annotations need referents"));
            }
        }
    }
    if ann.no_target {
        if !ann.instance_masks.is_empty() {
            return Err(ann_err(ann, "no_target excludes instance masks"));
        }
        if ann.referents.is_empty() {
            return Err(ann_err(ann, "no_target annotations need referents"));
        }
    } else if ann.mask.is_none() && ann.instance_masks.is_empty() {
        return Err(ann_err(ann, "annotation carries neither mask nor instance_masks"));
    }
    Ok(())
}

/// Referent text for instance `k` under the annotation's task.
fn instance_referent(ann: &Annotation, k: usize) -> String {
    match ann.task {
        Task::Reasoning => format!("roi{k}"),
        _ => ann
            .referents
            .get(k)
            .or_else(|| ann.referents.last())
            .cloned()
            .unwrap_or_else(|| format!("roi{k}")),
    }
}

fn query_text(labels: &[String], cfg: &BuildConfig, index: usize) -> String {
    let template = if cfg.templates.is_empty() {
        DEFAULT_QUERY_TEMPLATE
    } else {
        &cfg.templates[index % cfg.templates.len()]
    };
    template.replace("{labels}", &labels.join(", "))
}

/// Build one image-wise sample: downsampled grid, text labels, one
/// `<seg>...</seg>` payload in the requested encoding.
pub fn build_isd_sample(
    ann: &Annotation,
    base: &Path,
    resolution: u32,
    encoding: Encoding,
    cfg: &BuildConfig,
    index: usize,
) -> Result<InstructionSample, BuildError> {
    validate(ann)?;
    let format = match encoding {
        Encoding::Full => SampleFormat::IsdFull,
        Encoding::Rrle => SampleFormat::IsdRrle,
        Encoding::Irle => {
            return Err(ann_err(
                ann,
                "training samples use the full or row-wise encodings only",
            ))
        }
    };
    let grid = isd_ground_truth(ann, base, resolution)?;
    let payload = isd::encode(&grid, encoding)?;
    let response = format!(
        "{}<seg>{}</seg>",
        cfg.response_prefix, payload.payload
    );
    let labels = query_labels(ann, &grid);
    Ok(InstructionSample {
        id: ann.id.clone(),
        image: ann.image.clone(),
        query: query_text(&labels, cfg, index),
        response,
        format,
        resolution,
    })
}

/// Ground-truth grid an image-wise sample encodes; exposed so corpora can
/// be checked for self-consistency.
pub fn isd_ground_truth(
    ann: &Annotation,
    base: &Path,
    resolution: u32,
) -> Result<LabelGrid, BuildError> {
    match ann.task {
        Task::Semantic => {
            let table = match &ann.label_table {
                Some(rel) => imgio::read_label_table(&base.join(rel))?,
                None => LabelTable::background_only(),
            };
            if ann.no_target {
                return Ok(LabelGrid::filled(resolution, resolution, BACKGROUND_ID, table)?);
            }
            let mask = imgio::read_mask(&base.join(ann.mask.as_ref().expect("validated")), table)?;
            Ok(mask.downsample(resolution, resolution)?)
        }
        _ => {
            if ann.no_target {
                let table = response_table(ann, 0)?;
                return Ok(LabelGrid::filled(resolution, resolution, BACKGROUND_ID, table)?);
            }
            let instances = load_instances(ann, base)?;
            let table = response_table(ann, instances.count)?;
            let label_ids = instance_label_ids(ann, instances.count, &table);
            let cells: Vec<u32> = instances
                .ids
                .iter()
                .map(|&id| {
                    if id == BACKGROUND_ID {
                        BACKGROUND_ID
                    } else {
                        label_ids[(id - 1) as usize]
                    }
                })
                .collect();
            let mask = LabelMask::new(instances.width, instances.height, cells, table)?;
            Ok(mask.downsample(resolution, resolution)?)
        }
    }
}

/// Table mapping response labels for `count` instances; duplicate referents
/// share one id.
fn response_table(ann: &Annotation, count: usize) -> Result<LabelTable, BuildError> {
    let mut entries: Vec<(u32, String)> = Vec::new();
    let mut seen: BTreeMap<String, u32> = BTreeMap::new();
    for k in 0..count {
        let label = instance_referent(ann, k);
        if !seen.contains_key(&label) {
            let id = entries.len() as u32 + 1;
            seen.insert(label.clone(), id);
            entries.push((id, label));
        }
    }
    LabelTable::from_entries(entries).map_err(|e| ann_err(ann, e.to_string()))
}

/// Label id for each instance index under the response table.
fn instance_label_ids(ann: &Annotation, count: usize, table: &LabelTable) -> Vec<u32> {
    (0..count)
        .map(|k| {
            table
                .id(&instance_referent(ann, k))
                .expect("response_table inserted every instance referent")
        })
        .collect()
}

fn query_labels(ann: &Annotation, grid: &LabelGrid) -> Vec<String> {
    if !ann.referents.is_empty() {
        return ann.referents.clone();
    }
    // semantic fall-back: the non-background labels present, in id order
    let mut present: Vec<u32> = grid
        .cells()
        .iter()
        .copied()
        .filter(|&id| id != BACKGROUND_ID)
        .collect();
    present.sort_unstable();
    present.dedup();
    present
        .into_iter()
        .filter_map(|id| grid.table().label(id).map(|s| s.to_string()))
        .collect()
}

/// Build one box-wise sample: one record per instance, reasoning tasks
/// substituting `roi0, roi1, ...` referents.
pub fn build_bsd_sample(
    ann: &Annotation,
    base: &Path,
    canvas_res: u32,
    cfg: &BuildConfig,
    index: usize,
) -> Result<InstructionSample, BuildError> {
    validate(ann)?;
    let records = bsd_ground_truth(ann, base, canvas_res)?;
    let response = format!("{}{}", cfg.response_prefix, bsd::serialize(&records));
    let labels: Vec<String> = if ann.referents.is_empty() {
        records.iter().map(|r| r.referent().to_string()).collect()
    } else {
        ann.referents.clone()
    };
    Ok(InstructionSample {
        id: ann.id.clone(),
        image: ann.image.clone(),
        query: query_text(&labels, cfg, index),
        response,
        format: SampleFormat::Bsd,
        resolution: canvas_res,
    })
}

/// Ground-truth records a box-wise sample encodes, in annotation order.
pub fn bsd_ground_truth(
    ann: &Annotation,
    base: &Path,
    canvas_res: u32,
) -> Result<Vec<BsdRecord>, BuildError> {
    if ann.no_target {
        return ann
            .referents
            .iter()
            .map(|r| BsdRecord::no_target(r, canvas_res).map_err(BuildError::from))
            .collect();
    }

    let (instances, referents): (PixelInstances, Vec<String>) = match ann.task {
        Task::Semantic => {
            let table = imgio::read_label_table(
                &base.join(ann.label_table.as_ref().expect("validated")),
            )?;
            let (width, height, raw) =
                imgio::read_ids(&base.join(ann.mask.as_ref().expect("validated")))?;
            let mut present: Vec<u32> = raw
                .iter()
                .copied()
                .filter(|&id| id != BACKGROUND_ID)
                .collect();
            present.sort_unstable();
            present.dedup();
            let referents: Vec<String> = present
                .iter()
                .map(|&id| {
                    table
                        .label(id)
                        .map(|s| s.to_string())
                        .ok_or_else(|| ann_err(ann, format!("mask id {id} missing from table")))
                })
                .collect::<Result<_, _>>()?;
            let remap: BTreeMap<u32, u32> = present
                .iter()
                .enumerate()
                .map(|(k, &id)| (id, k as u32 + 1))
                .collect();
            let ids = raw
                .into_iter()
                .map(|id| remap.get(&id).copied().unwrap_or(BACKGROUND_ID))
                .collect();
            (
                PixelInstances {
                    width,
                    height,
                    ids,
                    count: present.len(),
                },
                referents,
            )
        }
        _ => {
            let instances = load_instances(ann, base)?;
            let referents = (0..instances.count).map(|k| instance_referent(ann, k)).collect();
            (instances, referents)
        }
    };

    if instances.count == 0 {
        // nothing present at pixel level: fall back to no-target records
        return ann
            .referents
            .iter()
            .map(|r| BsdRecord::no_target(r, canvas_res).map_err(BuildError::from))
            .collect();
    }

    let binary_table = LabelTable::from_entries([(1u32, "fg")])?;
    let mut records = Vec::with_capacity(instances.count);
    for (k, referent) in referents.iter().enumerate() {
        let bits: Vec<u32> = instances
            .ids
            .iter()
            .map(|&id| if id == k as u32 + 1 { 1 } else { 0 })
            .collect();
        let mask = LabelMask::new(instances.width, instances.height, bits, binary_table.clone())?;
        let grid = mask.downsample(canvas_res, canvas_res)?.binarize(1);
        records.push(bsd::encode_record(&grid, referent.clone())?);
    }
    Ok(records)
}

/// Per-run conversion counts.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub annotations: usize,
    pub built: usize,
    pub skipped_errors: usize,
    pub skipped_filtered: usize,
    pub by_task: BTreeMap<String, usize>,
    pub by_format: BTreeMap<String, usize>,
    pub failures: Vec<String>,
}

/// Convert an annotations JSONL file into an instruction JSONL file.
///
/// Output order is input order crossed with the configured format order.
pub fn build_corpus(
    annotations: &Path,
    out: &Path,
    cfg: &BuildConfig,
) -> Result<BuildReport, BuildError> {
    let base = annotations.parent().unwrap_or_else(|| Path::new("."));
    let file = std::fs::File::open(annotations)?;
    let reader = std::io::BufReader::new(file);
    let mut writer = std::io::BufWriter::new(std::fs::File::create(out)?);
    let mut report = BuildReport::default();

    let mut index = 0usize;
    for (line_index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = match serde_json::from_str(&line) {
            Ok(a) => a,
            Err(e) => {
                let err = BuildError::BadLine {
                    line: line_index + 1,
                    message: e.to_string(),
                };
                if cfg.skip_errors {
                    report.skipped_errors += 1;
                    report.failures.push(err.to_string());
                    continue;
                }
                return Err(err);
            }
        };
        report.annotations += 1;
        if let Some(tasks) = &cfg.tasks {
            if !tasks.contains(&ann.task) {
                report.skipped_filtered += 1;
                continue;
            }
        }

        for &format in &cfg.formats {
            let built = match format {
                SampleFormat::IsdFull => {
                    build_isd_sample(&ann, base, cfg.resolution, Encoding::Full, cfg, index)
                }
                SampleFormat::IsdRrle => {
                    build_isd_sample(&ann, base, cfg.resolution, Encoding::Rrle, cfg, index)
                }
                SampleFormat::Bsd => build_bsd_sample(&ann, base, cfg.canvas_res, cfg, index),
            };
            match built {
                Ok(sample) => {
                    let json = serde_json::to_string(&sample)
                        .expect("sample serialization is infallible");
                    writer.write_all(json.as_bytes())?;
                    writer.write_all(b"\n")?;
                    report.built += 1;
                    *report.by_task.entry(ann.task.name().to_string()).or_insert(0) += 1;
                    *report.by_format.entry(format.to_string()).or_insert(0) += 1;
                }
                Err(err) => {
                    if cfg.skip_errors {
                        report.skipped_errors += 1;
                        report.failures.push(err.to_string());
                    } else {
                        return Err(err);
                    }
                }
            }
        }
        index += 1;
    }
    writer.flush()?;
    Ok(report)
}

/// Expectation a built sample must strict-parse under; the table is
/// reconstructed from the response payload's own labels.
pub fn sample_expectation(sample: &InstructionSample, table: LabelTable) -> Expected {
    match sample.format {
        SampleFormat::Bsd => Expected::Bsd {
            canvas_res: sample.resolution,
        },
        _ => Expected::Isd {
            rows: sample.resolution,
            cols: sample.resolution,
            table,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::Mode;
    use crate::response::{parse_response, Payload};

    fn write_pgm_ids(path: &Path, width: u32, height: u32, ids: &[u32]) {
        imgio::write_pgm(path, width, height, ids).unwrap();
    }

    /// 32x32 mask with a filled square of the given id.
    fn square_mask(id: u32, top: u32, left: u32, size: u32) -> Vec<u32> {
        let mut ids = vec![0u32; 32 * 32];
        for r in top..top + size {
            for c in left..left + size {
                ids[(r * 32 + c) as usize] = id;
            }
        }
        ids
    }

    fn referring_annotation(dir: &Path, id: &str) -> Annotation {
        let mask_path = dir.join(format!("{id}.pgm"));
        write_pgm_ids(&mask_path, 32, 32, &square_mask(1, 8, 8, 12));
        Annotation {
            id: id.to_string(),
            image: format!("{id}.jpg"),
            mask: Some(format!("{id}.pgm")),
            instance_masks: vec![],
            label_table: None,
            task: Task::Referring,
            referents: vec!["black dog".to_string()],
            no_target: false,
        }
    }

    #[test]
    fn isd_sample_matches_template_and_parses() {
        let dir = tempfile::tempdir().unwrap();
        let ann = referring_annotation(dir.path(), "a");
        let cfg = BuildConfig::default();
        let sample =
            build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 0).unwrap();
        assert_eq!(sample.query, "Can you segment the black dog in the image?");
        assert!(sample.response.starts_with("The result is: \n<seg>"));
        assert!(sample.response.ends_with("</seg>"));
        // RRLE payload at resolution 16 has exactly 16 lines
        let payload_start = sample.response.find("<seg>").unwrap() + 5;
        let payload_end = sample.response.find("</seg>").unwrap();
        let lines = sample.response[payload_start..payload_end].split('\n').count();
        assert_eq!(lines, 16);

        // strict parse reconstructs the downsampled ground truth
        let table =
            LabelTable::from_entries([(0u32, "others"), (1, "black dog")]).unwrap();
        let expected = sample_expectation(&sample, table);
        let parsed = parse_response(&sample.response, &expected, Mode::Strict).unwrap();
        let gt = isd_ground_truth(&ann, dir.path(), 16).unwrap();
        match parsed.payload {
            Payload::Isd { grid, .. } => assert_eq!(grid.cells(), gt.cells()),
            _ => panic!(),
        }
    }

    #[test]
    fn no_target_sample_is_all_background_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ann = Annotation {
            id: "nt".to_string(),
            image: "nt.jpg".to_string(),
            mask: None,
            instance_masks: vec![],
            label_table: None,
            task: Task::GeneralizedReferring,
            referents: vec!["purple elephant".to_string()],
            no_target: true,
        };
        let cfg = BuildConfig::default();
        let sample =
            build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 0).unwrap();
        let payload_start = sample.response.find("<seg>").unwrap() + 5;
        let payload_end = sample.response.find("</seg>").unwrap();
        let payload = &sample.response[payload_start..payload_end];
        for line in payload.split('\n') {
            assert_eq!(line, "others*16");
        }

        let bsd = build_bsd_sample(&ann, dir.path(), 64, &cfg, 0).unwrap();
        assert!(bsd
            .response
            .contains("<ref>purple elephant</ref><box>[[]]</box><seg></seg>"));
    }

    #[test]
    fn reasoning_sample_uses_roi_referents() {
        let dir = tempfile::tempdir().unwrap();
        // three instances in one label mask
        let mut ids = square_mask(1, 2, 2, 6);
        for (r, c, id) in [(20u32, 20u32, 2u32), (10, 24, 3)] {
            for dr in 0..5 {
                for dc in 0..5 {
                    ids[((r + dr) * 32 + c + dc) as usize] = id;
                }
            }
        }
        let mask_path = dir.path().join("r.pgm");
        write_pgm_ids(&mask_path, 32, 32, &ids);
        let ann = Annotation {
            id: "r".to_string(),
            image: "r.jpg".to_string(),
            mask: Some("r.pgm".to_string()),
            instance_masks: vec![],
            label_table: None,
            task: Task::Reasoning,
            referents: vec!["what would a person sit on?".to_string()],
            no_target: false,
        };
        let cfg = BuildConfig::default();
        let sample = build_bsd_sample(&ann, dir.path(), 64, &cfg, 0).unwrap();
        for roi in ["<ref>roi0</ref>", "<ref>roi1</ref>", "<ref>roi2</ref>"] {
            assert!(sample.response.contains(roi), "missing {roi}");
        }
        assert!(sample.query.contains("what would a person sit on?"));
    }

    #[test]
    fn bsd_sample_round_trips_instances() {
        let dir = tempfile::tempdir().unwrap();
        // two instances from separate binary masks
        let m1 = dir.path().join("i0.pgm");
        let m2 = dir.path().join("i1.pgm");
        write_pgm_ids(&m1, 32, 32, &square_mask(1, 4, 4, 10));
        write_pgm_ids(&m2, 32, 32, &square_mask(1, 20, 18, 8));
        let ann = Annotation {
            id: "two".to_string(),
            image: "two.jpg".to_string(),
            mask: None,
            instance_masks: vec!["i0.pgm".to_string(), "i1.pgm".to_string()],
            label_table: None,
            task: Task::Referring,
            referents: vec!["left box".to_string(), "right box".to_string()],
            no_target: false,
        };
        let cfg = BuildConfig::default();
        let sample = build_bsd_sample(&ann, dir.path(), 64, &cfg, 0).unwrap();

        let parsed = parse_response(
            &sample.response,
            &Expected::Bsd { canvas_res: 64 },
            Mode::Strict,
        )
        .unwrap();
        let records = match parsed.payload {
            Payload::Bsd { records } => records,
            _ => panic!(),
        };
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].referent(), "left box");
        assert_eq!(records[1].referent(), "right box");

        let gt = bsd_ground_truth(&ann, dir.path(), 64).unwrap();
        for (got, want) in records.iter().zip(&gt) {
            assert_eq!(got.mask(), want.mask());
        }
    }

    #[test]
    fn corpus_build_is_deterministic_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let ann_path = dir.path().join("annotations.jsonl");
        let mut lines = Vec::new();
        for i in 0..4 {
            let ann = referring_annotation(dir.path(), &format!("s{i}"));
            lines.push(serde_json::to_string(&ann).unwrap());
        }
        std::fs::write(&ann_path, lines.join("\n") + "\n").unwrap();

        let cfg = BuildConfig {
            formats: vec![SampleFormat::IsdRrle, SampleFormat::Bsd],
            ..BuildConfig::default()
        };
        let out1 = dir.path().join("out1.jsonl");
        let out2 = dir.path().join("out2.jsonl");
        let report = build_corpus(&ann_path, &out1, &cfg).unwrap();
        build_corpus(&ann_path, &out2, &cfg).unwrap();

        assert_eq!(report.annotations, 4);
        assert_eq!(report.built, 8);
        assert_eq!(report.by_format["isd-rrle"], 4);
        assert_eq!(report.by_format["bsd"], 4);
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap(),
            "re-run must be byte-identical"
        );

        // every emitted line deserializes back into a sample
        let text = std::fs::read_to_string(&out1).unwrap();
        assert_eq!(text.lines().count(), 8);
        for line in text.lines() {
            let _: InstructionSample = serde_json::from_str(line).unwrap();
        }
    }

    #[test]
    fn templates_rotate_by_annotation_index() {
        let dir = tempfile::tempdir().unwrap();
        let ann = referring_annotation(dir.path(), "t");
        let cfg = BuildConfig {
            templates: vec![
                "Segment the {labels}.".to_string(),
                "Where is the {labels}?".to_string(),
            ],
            ..BuildConfig::default()
        };
        let s0 = build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 0).unwrap();
        let s1 = build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 1).unwrap();
        let s2 = build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 2).unwrap();
        assert_eq!(s0.query, "Segment the black dog.");
        assert_eq!(s1.query, "Where is the black dog?");
        assert_eq!(s2.query, s0.query);
    }

    #[test]
    fn empty_input_produces_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let ann_path = dir.path().join("annotations.jsonl");
        std::fs::write(&ann_path, "").unwrap();
        let out = dir.path().join("out.jsonl");
        let report = build_corpus(&ann_path, &out, &BuildConfig::default()).unwrap();
        assert_eq!(report.annotations, 0);
        assert_eq!(report.built, 0);
        assert_eq!(std::fs::read(&out).unwrap().len(), 0);
    }

    #[test]
    fn missing_mask_respects_error_policy() {
        let dir = tempfile::tempdir().unwrap();
        let ann_path = dir.path().join("annotations.jsonl");
        let ann = Annotation {
            id: "gone".to_string(),
            image: "gone.jpg".to_string(),
            mask: Some("missing.pgm".to_string()),
            instance_masks: vec![],
            label_table: None,
            task: Task::Referring,
            referents: vec!["ghost".to_string()],
            no_target: false,
        };
        std::fs::write(&ann_path, serde_json::to_string(&ann).unwrap() + "\n").unwrap();
        let out = dir.path().join("out.jsonl");

        let strict = BuildConfig::default();
        assert!(build_corpus(&ann_path, &out, &strict).is_err());

        let skipping = BuildConfig {
            skip_errors: true,
            ..BuildConfig::default()
        };
        let report = build_corpus(&ann_path, &out, &skipping).unwrap();
        assert_eq!(report.skipped_errors, 1);
        assert_eq!(report.built, 0);
        assert_eq!(report.failures.len(), 1);
    }

    #[test]
    fn reserved_referent_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ann = referring_annotation(dir.path(), "bad");
        ann.referents = vec!["dog|cat".to_string()];
        let cfg = BuildConfig::default();
        let err = build_isd_sample(&ann, dir.path(), 16, Encoding::Rrle, &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("reserved"));
    }

    #[test]
    fn task_filter_skips_other_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let ann_path = dir.path().join("annotations.jsonl");
        let ann = referring_annotation(dir.path(), "f");
        std::fs::write(&ann_path, serde_json::to_string(&ann).unwrap() + "\n").unwrap();
        let out = dir.path().join("out.jsonl");
        let cfg = BuildConfig {
            tasks: Some(vec![Task::Semantic]),
            ..BuildConfig::default()
        };
        let report = build_corpus(&ann_path, &out, &cfg).unwrap();
        assert_eq!(report.skipped_filtered, 1);
        assert_eq!(report.built, 0);
    }
}
