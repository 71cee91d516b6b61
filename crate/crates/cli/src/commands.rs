//! Subcommand implementations.

use crate::config::{CliFormat, FileConfig};
use crate::{
    BuildArgs, Cli, CliError, Command, DecodeArgs, EncodeArgs, EvalArgs, RenderArgs, StatsArgs,
    ValidateArgs,
};
use masktext::bsd::{self, BsdRecord};
use masktext::dataset::{
    self, BuildConfig, InstructionSample, SampleFormat,
};
use masktext::diag::{Diagnostic, Mode};
use masktext::imgio::{self, ImgError};
use masktext::isd;
use masktext::metrics::{self, EvalPair};
use masktext::raster::{BinaryGrid, BoxBins, LabelGrid, LabelMask, LabelTable, BACKGROUND_ID};
use masktext::response::{self, Expected, Payload};
use masktext::tokens::{self, Tokenizer};
use std::io::Write;
use std::path::Path;

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Encode(args) => cmd_encode(args, &file_cfg),
        Command::Decode(args) => cmd_decode(args, &file_cfg),
        Command::Build(args) => cmd_build(args, &file_cfg),
        Command::Validate(args) => cmd_validate(args, &file_cfg),
        Command::Eval(args) => cmd_eval(args, &file_cfg),
        Command::Stats(args) => cmd_stats(args, &file_cfg),
        Command::Render(args) => cmd_render(args, &file_cfg),
    }
}

fn img_err(e: ImgError) -> CliError {
    match e {
        ImgError::Io(e) => CliError::io(e.to_string()),
        other => CliError::validation(other.to_string()),
    }
}

fn read_table(path: &Path) -> Result<LabelTable, CliError> {
    imgio::read_label_table(path).map_err(img_err)
}

fn require_table(path: Option<&Path>) -> Result<LabelTable, CliError> {
    match path {
        Some(p) => read_table(p),
        None => Err(CliError::config(
            "--table is required for image-wise descriptors",
        )),
    }
}

/// Read descriptor text, dropping at most one trailing newline so that
/// editor-terminated files still strict-parse.
fn read_text(path: &Path) -> Result<String, CliError> {
    let mut text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    if text.ends_with('\n') {
        text.pop();
    }
    Ok(text)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| CliError::io(e.to_string()))
        }
    }
}

fn grid_dims(
    resolution: Option<u32>,
    rows: Option<u32>,
    cols: Option<u32>,
    file_cfg: &FileConfig,
) -> (u32, u32) {
    let res = file_cfg.resolution(resolution);
    (rows.unwrap_or(res), cols.unwrap_or(res))
}

fn print_diagnostics(diagnostics: &[Diagnostic]) {
    for d in diagnostics {
        eprintln!("{d}");
    }
    if !diagnostics.is_empty() {
        eprintln!("{} diagnostics", diagnostics.len());
    }
}

/// Per-instance records for a label mask: every non-background id present
/// becomes one record; an empty mask yields one no-target record per
/// foreground table entry.
fn records_from_mask(mask: &LabelMask, canvas_res: u32) -> Result<Vec<BsdRecord>, CliError> {
    let mut present: Vec<u32> = mask
        .data()
        .iter()
        .copied()
        .filter(|&id| id != BACKGROUND_ID)
        .collect();
    present.sort_unstable();
    present.dedup();

    let referent = |id: u32| -> Result<String, CliError> {
        mask.table()
            .label(id)
            .map(str::to_string)
            .ok_or_else(|| CliError::validation(format!("mask id {id} missing from table")))
    };

    if present.is_empty() {
        let foreground: Vec<u32> = mask
            .table()
            .iter()
            .map(|(id, _)| id)
            .filter(|&id| id != BACKGROUND_ID)
            .collect();
        if foreground.is_empty() {
            return Err(CliError::validation(
                "mask holds no instances and the table defines no foreground labels",
            ));
        }
        return foreground
            .into_iter()
            .map(|id| {
                BsdRecord::no_target(referent(id)?, canvas_res)
                    .map_err(|e| CliError::validation(e.to_string()))
            })
            .collect();
    }

    let binary_table =
        LabelTable::from_entries([(1u32, "fg")]).expect("static table is valid");
    present
        .into_iter()
        .map(|id| {
            let bits: Vec<u32> = mask
                .data()
                .iter()
                .map(|&v| if v == id { 1 } else { 0 })
                .collect();
            let instance =
                LabelMask::new(mask.width(), mask.height(), bits, binary_table.clone())
                    .map_err(|e| CliError::validation(e.to_string()))?;
            let grid = instance
                .downsample(canvas_res, canvas_res)
                .map_err(|e| CliError::validation(e.to_string()))?
                .binarize(1);
            bsd::encode_record(&grid, referent(id)?)
                .map_err(|e| CliError::validation(e.to_string()))
        })
        .collect()
}

fn cmd_encode(args: EncodeArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let table = read_table(&args.table)?;
    let mask = imgio::read_mask(&args.mask, table).map_err(img_err)?;
    let format = file_cfg.encode_format(args.format.as_deref())?;

    let text = match format {
        CliFormat::Isd(encoding) => {
            let res = file_cfg.resolution(args.resolution);
            let grid = mask
                .downsample(res, res)
                .map_err(|e| CliError::validation(e.to_string()))?;
            isd::encode(&grid, encoding)
                .map_err(|e| CliError::validation(e.to_string()))?
                .payload
        }
        CliFormat::Bsd => {
            let canvas = file_cfg.canvas_res(args.canvas);
            bsd::serialize(&records_from_mask(&mask, canvas)?)
        }
    };
    write_text(args.out.as_deref(), &text)
}

/// Decoded grid of label ids, shared by decode and render.
struct DecodedIds {
    rows: u32,
    cols: u32,
    ids: Vec<u32>,
    table: LabelTable,
    diagnostics: Vec<Diagnostic>,
}

/// Dimension flags shared by decode and render.
struct DimFlags {
    resolution: Option<u32>,
    rows: Option<u32>,
    cols: Option<u32>,
    canvas: Option<u32>,
}

fn decode_text(
    text: &str,
    format: CliFormat,
    table: Option<&Path>,
    dims: &DimFlags,
    mode: Mode,
    file_cfg: &FileConfig,
) -> Result<DecodedIds, CliError> {
    match format {
        CliFormat::Isd(encoding) => {
            let table = require_table(table)?;
            let (rows, cols) = grid_dims(dims.resolution, dims.rows, dims.cols, file_cfg);
            let decoded = isd::decode(text, encoding, rows, cols, &table, mode)
                .map_err(|e| CliError::validation(format!("{e} [rule {}]", e.rule())))?;
            Ok(DecodedIds {
                rows,
                cols,
                ids: decoded.grid.cells().to_vec(),
                table,
                diagnostics: decoded.diagnostics,
            })
        }
        CliFormat::Bsd => {
            let canvas_res = file_cfg.canvas_res(dims.canvas);
            let parsed = bsd::parse(text, canvas_res, mode)
                .map_err(|e| CliError::validation(format!("{e} [rule {}]", e.rule())))?;
            let (_, merged) = bsd::rasterize(&parsed.records, canvas_res);
            Ok(DecodedIds {
                rows: canvas_res,
                cols: canvas_res,
                ids: merged.cells().to_vec(),
                table: merged.table().clone(),
                diagnostics: parsed.diagnostics,
            })
        }
    }
}

fn cmd_decode(args: DecodeArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let text = read_text(&args.input)?;
    let format = file_cfg.encode_format(args.format.as_deref())?;
    let mode = file_cfg.mode(args.lenient)?;
    let dims = DimFlags {
        resolution: args.resolution,
        rows: args.rows,
        cols: args.cols,
        canvas: args.canvas,
    };
    let decoded = decode_text(&text, format, args.table.as_deref(), &dims, mode, file_cfg)?;
    print_diagnostics(&decoded.diagnostics);

    let (ids, width, height) = match (args.width, args.height) {
        (None, None) => (decoded.ids.clone(), decoded.cols, decoded.rows),
        (Some(w), Some(h)) => {
            let grid = LabelGrid::new(decoded.rows, decoded.cols, decoded.ids.clone(), decoded.table.clone())
                .map_err(|e| CliError::validation(e.to_string()))?;
            let mask = grid
                .upsample(w, h)
                .map_err(|e| CliError::validation(e.to_string()))?;
            (mask.data().to_vec(), w, h)
        }
        _ => {
            return Err(CliError::config(
                "--width and --height must be given together",
            ))
        }
    };
    imgio::write_ids(&args.out, width, height, &ids).map_err(img_err)?;

    if args.fail_on_warning && !decoded.diagnostics.is_empty() {
        return Err(CliError::validation(format!(
            "{} diagnostics with --fail-on-warning",
            decoded.diagnostics.len()
        )));
    }
    Ok(())
}

fn cmd_build(args: BuildArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let cfg = BuildConfig {
        resolution: file_cfg.resolution(args.resolution),
        canvas_res: file_cfg.canvas_res(args.canvas),
        formats: file_cfg.build_formats(&args.formats)?,
        templates: file_cfg.templates(),
        response_prefix: file_cfg.response_prefix(),
        tasks: file_cfg.tasks(&args.tasks)?,
        skip_errors: args.skip_errors,
    };
    let report = dataset::build_corpus(&args.annotations, &args.out, &cfg).map_err(|e| match e {
        dataset::BuildError::Io(e) => CliError::io(e.to_string()),
        other => CliError::validation(other.to_string()),
    })?;

    for failure in &report.failures {
        eprintln!("skipped: {failure}");
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        println!(
            "annotations={} built={} skipped_errors={} skipped_filtered={}",
            report.annotations, report.built, report.skipped_errors, report.skipped_filtered
        );
    }
    Ok(())
}

/// Expectation for one corpus line, honoring `--expect`.
fn line_expectation(
    expect: &str,
    line: &str,
    table: Option<&LabelTable>,
    args: &ValidateArgs,
    file_cfg: &FileConfig,
) -> Result<Expected, CliError> {
    let isd_expected = |rows: u32, cols: u32| -> Result<Expected, CliError> {
        let table = table.cloned().ok_or_else(|| {
            CliError::config("--table is required to validate image-wise responses")
        })?;
        Ok(Expected::Isd { rows, cols, table })
    };
    match expect {
        "isd" => {
            let (rows, cols) = grid_dims(args.resolution, args.rows, args.cols, file_cfg);
            isd_expected(rows, cols)
        }
        "bsd" => Ok(Expected::Bsd {
            canvas_res: file_cfg.canvas_res(args.canvas),
        }),
        "auto" => {
            let sample: InstructionSample = serde_json::from_str(line).map_err(|e| {
                CliError::validation(format!(
                    "line is not a self-described sample ({e}); use --expect isd or bsd"
                ))
            })?;
            match sample.format {
                SampleFormat::Bsd => Ok(Expected::Bsd {
                    canvas_res: sample.resolution,
                }),
                _ => isd_expected(sample.resolution, sample.resolution),
            }
        }
        other => Err(CliError::config(format!(
            "unknown expectation {other:?}, expected isd, bsd, or auto"
        ))),
    }
}

fn cmd_validate(args: ValidateArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let mode = file_cfg.mode(args.lenient)?;
    let field = file_cfg.response_field(args.field.as_deref());
    let table = match &args.table {
        Some(p) => Some(read_table(p)?),
        None => None,
    };

    let content = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::io(format!("{}: {e}", args.input.display())))?;
    let mut report = response::CorpusReport::default();
    for (index, line) in content.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let expected = match line_expectation(&args.expect, line, table.as_ref(), &args, file_cfg)
        {
            Ok(e) => e,
            Err(e) if e.code == 4 => return Err(e),
            Err(e) => {
                report.record_bad_line(line_no, e.message);
                continue;
            }
        };
        match response::extract_response_text(line, &field) {
            Ok(text) => {
                let outcome = response::parse_response(&text, &expected, mode);
                report.record_line(line_no, &outcome);
            }
            Err(message) => report.record_bad_line(line_no, message),
        }
    }

    for failure in &report.failures {
        eprintln!("line {}: [{}] {}", failure.line, failure.rule, failure.message);
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        println!(
            "lines={} parsed={} errors={} warnings={}",
            report.lines, report.parsed, report.strict_errors, report.warnings
        );
    }

    if !report.is_clean() {
        return Err(CliError::validation(format!(
            "{} strict errors",
            report.strict_errors
        )));
    }
    if args.fail_on_warning && report.warnings > 0 {
        return Err(CliError::validation(format!(
            "{} warnings with --fail-on-warning",
            report.warnings
        )));
    }
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<InstructionSample>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (index, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: InstructionSample = serde_json::from_str(line).map_err(|e| {
            CliError::validation(format!("{}:{}: {e}", path.display(), index + 1))
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Foreground bits and (for box-wise payloads) the first record's box.
fn sample_silhouette(
    sample: &InstructionSample,
    table: Option<&LabelTable>,
    mode: Mode,
    which: &str,
    index: usize,
) -> Result<(Option<BinaryGrid>, Option<BoxBins>), CliError> {
    let expected = match sample.format {
        SampleFormat::Bsd => Expected::Bsd {
            canvas_res: sample.resolution,
        },
        _ => Expected::Isd {
            rows: sample.resolution,
            cols: sample.resolution,
            table: table
                .cloned()
                .ok_or_else(|| CliError::config("--table is required to evaluate image-wise responses"))?,
        },
    };
    let parsed = response::parse_response(&sample.response, &expected, mode).map_err(|e| {
        CliError::validation(format!(
            "{which} sample {} (line {}): {e} [rule {}]",
            sample.id,
            index + 1,
            e.rule()
        ))
    })?;
    Ok(match parsed.payload {
        Payload::Isd { grid, .. } => {
            let bits: Vec<bool> = grid.cells().iter().map(|&id| id != BACKGROUND_ID).collect();
            let grid = BinaryGrid::new(grid.rows(), grid.cols(), bits)
                .expect("grid dimensions are consistent");
            let grid = (grid.count_ones() > 0).then_some(grid);
            (grid, None)
        }
        Payload::Bsd { records } => {
            let (per_record, _) = bsd::rasterize(&records, sample.resolution);
            let mut union = BinaryGrid::zeros(sample.resolution, sample.resolution)
                .expect("nonzero canvas");
            for g in &per_record {
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        if g.get(r, c) {
                            union.set(r, c, true);
                        }
                    }
                }
            }
            let bbox = records.iter().find_map(|r| r.body().map(|b| b.bbox));
            ((union.count_ones() > 0).then_some(union), bbox)
        }
    })
}

fn cmd_eval(args: EvalArgs, _file_cfg: &FileConfig) -> Result<(), CliError> {
    let table = match &args.table {
        Some(p) => Some(read_table(p)?),
        None => None,
    };
    let pred = read_samples(&args.pred)?;
    let gt = read_samples(&args.gt)?;
    if pred.len() != gt.len() {
        return Err(CliError::validation(format!(
            "corpora differ in length: {} predictions vs {} ground truths",
            pred.len(),
            gt.len()
        )));
    }

    let pred_mode = if args.strict_pred { Mode::Strict } else { Mode::Lenient };
    let mut pairs = Vec::with_capacity(pred.len());
    let mut pred_boxes = Vec::new();
    let mut gt_boxes = Vec::new();
    for (index, (p, g)) in pred.iter().zip(&gt).enumerate() {
        if p.id != g.id {
            return Err(CliError::validation(format!(
                "line {}: prediction id {:?} does not match ground truth id {:?}",
                index + 1,
                p.id,
                g.id
            )));
        }
        let (pred_bits, pred_box) = sample_silhouette(p, table.as_ref(), pred_mode, "prediction", index)?;
        let (gt_bits, gt_box) = sample_silhouette(g, table.as_ref(), Mode::Strict, "ground-truth", index)?;
        pairs.push(EvalPair::new(pred_bits, gt_bits));
        if let (Some(pb), Some(gb)) = (pred_box, gt_box) {
            pred_boxes.push(pb);
            gt_boxes.push(gb);
        }
    }

    let boxes = (!pred_boxes.is_empty()).then_some((pred_boxes.as_slice(), gt_boxes.as_slice()));
    let report = metrics::evaluate(&pairs, boxes, args.per_sample)
        .map_err(|e| CliError::validation(e.to_string()))?;

    let text = if args.csv {
        report.to_csv()
    } else {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    };
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let spec = file_cfg.tokenizer(args.tokenizer.as_deref());
    let tokenizer = Tokenizer::from_spec(&spec).map_err(|e| match e {
        tokens::TokenError::Io(e) => CliError::io(e.to_string()),
        other => CliError::config(other.to_string()),
    })?;

    let text = match (&args.input, &args.mask) {
        (Some(input), None) => {
            let samples = read_samples(input)?;
            let report = tokens::count_corpus(&samples, &tokenizer);
            if args.csv {
                report.to_csv()
            } else {
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
            }
        }
        (None, Some(mask_path)) => {
            let table = require_table(args.table.as_deref())?;
            let mask = imgio::read_mask(mask_path, table).map_err(img_err)?;
            let res = file_cfg.resolution(args.resolution);
            let canvas = file_cfg.canvas_res(args.canvas);
            let grid = mask
                .downsample(res, res)
                .map_err(|e| CliError::validation(e.to_string()))?;
            let records = records_from_mask(&mask, canvas)?;
            let counts = tokens::compare_encodings(&grid, &records, &tokenizer)
                .map_err(|e| CliError::validation(e.to_string()))?;
            serde_json::to_string_pretty(&counts).expect("counts serialize") + "\n"
        }
        _ => {
            return Err(CliError::config(
                "give either --input for a corpus or --mask for a single scene",
            ))
        }
    };
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_render(args: RenderArgs, file_cfg: &FileConfig) -> Result<(), CliError> {
    let text = read_text(&args.input)?;
    let format = file_cfg.encode_format(args.format.as_deref())?;
    let mode = file_cfg.mode(args.lenient)?;
    let dims = DimFlags {
        resolution: args.resolution,
        rows: args.rows,
        cols: args.cols,
        canvas: args.canvas,
    };
    let decoded = decode_text(&text, format, args.table.as_deref(), &dims, mode, file_cfg)?;
    print_diagnostics(&decoded.diagnostics);
    imgio::write_palette_png(&args.out, decoded.cols, decoded.rows, &decoded.ids, args.scale)
        .map_err(img_err)
}
