//! Acceptance suite: one test per release criterion, each printing a
//! `[C# PASS]` line (visible with `--nocapture`).
//!
//! Run with `cargo test -p masktext --test acceptance -- --nocapture`.

use masktext::bsd::{self, BrickSeq, BrickToken, Polarity};
use masktext::dataset::{self, BuildConfig, InstructionSample, SampleFormat};
use masktext::diag::Mode;
use masktext::isd::{self, Encoding};
use masktext::metrics::{self, EvalPair};
use masktext::raster::{BinaryGrid, LabelTable};
use masktext::response::{self, Expected, Payload};
use masktext::synth;
use masktext::tokens::{self, Tokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn grid_table() -> LabelTable {
    LabelTable::from_entries([
        (0u32, "others"),
        (1, "sky"),
        (2, "sand"),
        (3, "sea"),
        (4, "black dog"),
    ])
    .unwrap()
}

/// C1: strict decode(encode(g)) is the identity for 1,000 random grids per
/// resolution in {4, 16, 32, 64} under all three encodings, within 10 s.
#[test]
fn c1_lossless_codec_round_trips() {
    let started = Instant::now();
    let table = grid_table();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut checked = 0usize;

    for resolution in [4u32, 16, 32, 64] {
        for _ in 0..1000 {
            let grid = synth::random_grid(&mut rng, resolution, resolution, &table);
            for kind in [Encoding::Full, Encoding::Irle, Encoding::Rrle] {
                let text = isd::encode(&grid, kind).expect("grid ids are in the table");
                let decoded = text
                    .decode(&table, Mode::Strict)
                    .unwrap_or_else(|e| panic!("C1 round trip failed at {resolution}: {e}"));
                assert_eq!(decoded.grid, grid, "C1 mismatch at resolution {resolution}");
                assert!(decoded.diagnostics.is_empty());
                checked += 1;
            }
        }
    }

    let elapsed = started.elapsed();
    assert_eq!(checked, 4 * 1000 * 3);
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "C1 took {elapsed:?}, budget is 10 s"
    );
    println!("[C1 PASS] 12000 grid round trips across 4 resolutions in {elapsed:?}");
}

/// C2: 1,000 random bit sequences round-trip through bricks; every brick
/// length stays in 1..=63 and the encoder output is canonical.
#[test]
fn c2_brick_codec_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut canonical_violations = 0usize;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=4096);
        let bits: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
        let seq = bsd::bricks_from_bits(&bits).expect("non-empty input");
        assert!(
            seq.tokens().iter().all(|b| (1..=63).contains(&b.length())),
            "C2 brick length out of range"
        );
        if !seq.is_canonical() {
            canonical_violations += 1;
        }
        assert_eq!(bsd::bits_from_bricks(&seq), bits, "C2 round trip mismatch");
    }
    assert_eq!(canonical_violations, 0, "C2 canonical-form violations");
    println!("[C2 PASS] 1000 brick round trips, 0 canonical violations");
}

/// C3: encode -> serialize -> strict parse -> rasterize reproduces 500
/// random blob masks on the 64x64 canvas bit-exactly.
#[test]
fn c3_bsd_end_to_end_round_trips() {
    let scenes = synth::scenes(0xC3, 500, 192);
    assert_eq!(scenes.len(), 500);
    for (i, scene) in scenes.iter().enumerate() {
        let mask = scene.canvas_bits(64);
        let record = bsd::encode_record(&mask, scene.referent.clone()).expect("valid referent");
        let text = bsd::serialize(std::slice::from_ref(&record));
        let parsed = bsd::parse(&text, 64, Mode::Strict)
            .unwrap_or_else(|e| panic!("C3 strict parse failed for scene {i}: {e}"));
        assert!(parsed.diagnostics.is_empty());
        let (grids, _) = bsd::rasterize(&parsed.records, 64);
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0], mask, "C3 rasterized mask differs for scene {i}");
    }
    println!("[C3 PASS] 500 blob masks reproduced bit-exactly through text");
}

/// C4: the reference tokenizer splits `others*16` into exactly 4 tokens and
/// a 16x16 full encoding carries exactly 256 descriptor occurrences.
#[test]
fn c4_tokenizer_calibration() {
    let tokens = tokens::ref_tokenize("others*16");
    assert_eq!(tokens.len(), 4, "C4 token count for others*16");
    assert_eq!(tokens, ["others", "*", "1", "6"]);

    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let grid = synth::random_grid(&mut rng, 16, 16, &grid_table());
    let full = isd::encode(&grid, Encoding::Full).unwrap();
    let occurrences: usize = full
        .payload
        .split('\n')
        .map(|row| row.split('|').count())
        .sum();
    assert_eq!(occurrences, 256, "C4 descriptor occurrences in 16x16 full");
    println!("[C4 PASS] others*16 -> 4 tokens; 16x16 full encoding -> 256 descriptors");
}

fn scene_counts(resolution: u32) -> Vec<tokens::EncodingCounts> {
    let tokenizer = Tokenizer::Reference;
    synth::scenes(0xC5, 200, 256)
        .iter()
        .map(|scene| {
            let grid = scene.isd_grid(resolution);
            let record = scene.record(64);
            tokens::compare_encodings(&grid, std::slice::from_ref(&record), &tokenizer)
                .expect("encoding succeeds")
        })
        .collect()
}

/// C5: on 200 synthetic single-instance scenes at 64x64, mean token counts
/// order bricks < no-bricks < row-wise descriptors with >= 20% gaps.
#[test]
fn c5_efficiency_ordering_at_64() {
    let counts = scene_counts(64);
    let mean = |f: &dyn Fn(&tokens::EncodingCounts) -> usize| -> f64 {
        counts.iter().map(|c| f(c) as f64).sum::<f64>() / counts.len() as f64
    };
    let bricks = mean(&|c| c.bsd_bricks);
    let no_bricks = mean(&|c| c.bsd_no_bricks);
    let rrle = mean(&|c| c.isd_rrle);

    assert!(bricks < no_bricks && no_bricks < rrle, "C5 ordering violated");
    let gap1 = (no_bricks - bricks) / no_bricks;
    let gap2 = (rrle - no_bricks) / rrle;
    assert!(gap1 >= 0.20, "C5 bricks gap {gap1:.3} below 20%");
    assert!(gap2 >= 0.20, "C5 box gap {gap2:.3} below 20%");
    println!(
        "[C5 PASS] mean tokens at 64x64: bricks {bricks:.1} < no-bricks {no_bricks:.1} < rrle {rrle:.1} (gaps {:.0}%, {:.0}%)",
        gap1 * 100.0,
        gap2 * 100.0
    );
}

/// C6: at 16x16 on the same corpus, mean row-wise count is at most half the
/// full count, and the image-wise RLE never exceeds the row-wise RLE.
#[test]
fn c6_compression_at_16() {
    let counts = scene_counts(16);
    let mean_rrle =
        counts.iter().map(|c| c.isd_rrle as f64).sum::<f64>() / counts.len() as f64;
    let mean_full =
        counts.iter().map(|c| c.isd_full as f64).sum::<f64>() / counts.len() as f64;
    assert!(
        mean_rrle <= 0.5 * mean_full,
        "C6 mean rrle {mean_rrle:.1} exceeds half of full {mean_full:.1}"
    );
    for (i, c) in counts.iter().enumerate() {
        assert!(
            c.isd_irle <= c.isd_rrle,
            "C6 sample {i}: irle {} > rrle {}",
            c.isd_irle,
            c.isd_rrle
        );
    }
    println!(
        "[C6 PASS] mean tokens at 16x16: rrle {mean_rrle:.1} vs full {mean_full:.1} ({:.0}% reduction); irle <= rrle on all 200",
        (1.0 - mean_rrle / mean_full) * 100.0
    );
}

/// C7: per-pair IoU matches brute force on all 262,144 ordered pairs of
/// 3x3 masks, and the corpus metrics match the worked examples and the
/// no-target convention.
#[test]
fn c7_metrics_oracle() {
    for a_bits in 0u32..512 {
        let a = BinaryGrid::new(3, 3, (0..9).map(|i| a_bits >> i & 1 == 1).collect()).unwrap();
        for b_bits in 0u32..512 {
            let b =
                BinaryGrid::new(3, 3, (0..9).map(|i| b_bits >> i & 1 == 1).collect()).unwrap();
            let inter = (a_bits & b_bits).count_ones() as f64;
            let union = (a_bits | b_bits).count_ones() as f64;
            let expected = if union == 0.0 { 1.0 } else { inter / union };
            assert_eq!(
                metrics::iou(&a, &b).unwrap(),
                expected,
                "C7 iou mismatch at {a_bits:#b} vs {b_bits:#b}"
            );
        }
    }

    let g = |bits: [u8; 2]| {
        BinaryGrid::new(1, 2, bits.iter().map(|&b| b == 1).collect()).unwrap()
    };
    // ciou: (I=1,U=2) + (I=0,U=2) = 1/4
    let pairs = [
        EvalPair::new(Some(g([1, 0])), Some(g([1, 1]))),
        EvalPair::new(Some(g([1, 0])), Some(g([0, 1]))),
    ];
    assert_eq!(metrics::ciou(&pairs).unwrap(), 0.25);

    // giou: one targeted pair at 0.5 plus one failed no-target = 0.25
    let pairs = [
        EvalPair::new(Some(g([1, 0])), Some(g([1, 1]))),
        EvalPair::new(Some(g([1, 0])), None),
    ];
    assert_eq!(metrics::giou(&pairs).unwrap(), 0.25);

    // no-target convention: correct-empty = 1, false-negative = 0
    assert_eq!(
        metrics::giou(&[EvalPair::new(None, None)]).unwrap(),
        1.0,
        "C7 correct-empty must score 1"
    );
    assert_eq!(
        metrics::giou(&[EvalPair::new(Some(g([1, 1])), None)]).unwrap(),
        0.0,
        "C7 false-negative must score 0"
    );

    // miou: mean of {1.0, 0.0} over targeted pairs
    let pairs = [
        EvalPair::new(Some(g([1, 0])), Some(g([1, 0]))),
        EvalPair::new(Some(g([1, 0])), Some(g([0, 1]))),
    ];
    assert_eq!(metrics::miou(&pairs).unwrap(), 0.5);

    println!("[C7 PASS] 262144 brute-force iou pairs plus worked corpus examples");
}

/// C8: 10,000 mutated responses never crash the lenient parser, and every
/// mutation that breaks strict parsing is accounted for by a diagnostic.
#[test]
fn c8_fuzzed_responses_parse_leniently() {
    let scenes = synth::scenes(0xC8, 50, 192);
    let mut table_entries: Vec<(u32, String)> = vec![(0, "others".to_string())];
    for (i, name) in synth::REFERENTS.iter().enumerate() {
        table_entries.push((i as u32 + 1, name.to_string()));
    }
    let table = LabelTable::from_entries(table_entries).unwrap();

    // base corpus: half image-wise responses, half box-wise
    let mut bases: Vec<(String, Expected)> = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        if i % 2 == 0 {
            let grid = scene.isd_grid(16);
            let payload = isd::encode(&grid, Encoding::Rrle).unwrap().payload;
            bases.push((
                format!("The result is: \n<seg>{payload}</seg>"),
                Expected::Isd {
                    rows: 16,
                    cols: 16,
                    table: table.clone(),
                },
            ));
        } else {
            let record = scene.record(64);
            bases.push((
                format!(
                    "The result is: \n{}",
                    bsd::serialize(std::slice::from_ref(&record))
                ),
                Expected::Bsd { canvas_res: 64 },
            ));
        }
    }

    let markers = ["<ref>", "</ref>", "<box>", "</box>", "<seg>", "</seg>"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8C8);
    let mut strict_failures = 0usize;
    let mut diagnostics_seen = 0usize;

    for _ in 0..10_000 {
        let (base, expected) = &bases[rng.gen_range(0..bases.len())];
        let mut text = base.clone();
        match rng.gen_range(0..3) {
            0 => {
                // random truncation at a char boundary
                let mut cut = rng.gen_range(0..=text.len());
                while !text.is_char_boundary(cut) {
                    cut -= 1;
                }
                text.truncate(cut);
            }
            1 => {
                // delete one marker occurrence
                let marker = markers[rng.gen_range(0..markers.len())];
                if let Some(at) = text.find(marker) {
                    text.replace_range(at..at + marker.len(), "");
                }
            }
            _ => {
                // substitute one byte with a printable character
                if !text.is_empty() {
                    let at = rng.gen_range(0..text.len());
                    if text.is_char_boundary(at) && text.is_char_boundary(at + 1) {
                        let replacement = char::from(rng.gen_range(b'0'..=b'z'));
                        text.replace_range(at..at + 1, &replacement.to_string());
                    }
                }
            }
        }

        let lenient = response::parse_response(&text, expected, Mode::Lenient)
            .expect("lenient parsing is total");
        if response::parse_response(&text, expected, Mode::Strict).is_err() {
            strict_failures += 1;
            assert!(
                !lenient.diagnostics.is_empty(),
                "C8 strict failure left no diagnostic for {text:?}"
            );
            diagnostics_seen += lenient.diagnostics.len();
        }
    }

    assert!(
        diagnostics_seen >= strict_failures,
        "C8 diagnostics {diagnostics_seen} fewer than affected lines {strict_failures}"
    );
    println!(
        "[C8 PASS] 10000 mutated responses, {strict_failures} strict breaks, {diagnostics_seen} diagnostics, zero crashes"
    );
}

/// C9: building 1,000 synthetic annotations yields samples that all
/// strict-parse and reconstruct their downsampled ground truth, and the
/// build is byte-identical on the second run.
#[test]
fn c9_dataset_builder_self_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let annotations_path = synth::write_annotation_set(dir.path(), 1000, 0xC9).unwrap();
    let cfg = BuildConfig {
        formats: vec![
            SampleFormat::IsdFull,
            SampleFormat::IsdRrle,
            SampleFormat::Bsd,
        ],
        ..BuildConfig::default()
    };

    let out1 = dir.path().join("corpus1.jsonl");
    let out2 = dir.path().join("corpus2.jsonl");
    let report = dataset::build_corpus(&annotations_path, &out1, &cfg).unwrap();
    dataset::build_corpus(&annotations_path, &out2, &cfg).unwrap();
    assert_eq!(report.annotations, 1000);
    assert_eq!(report.built, 3000);
    assert_eq!(report.skipped_errors, 0);
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap(),
        "C9 re-run must be byte-identical"
    );

    let annotations: Vec<dataset::Annotation> = std::fs::read_to_string(&annotations_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let samples: Vec<InstructionSample> = std::fs::read_to_string(&out1)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(samples.len(), annotations.len() * cfg.formats.len());

    let base = annotations_path.parent().unwrap();
    for (i, ann) in annotations.iter().enumerate() {
        for (j, &format) in cfg.formats.iter().enumerate() {
            let sample = &samples[i * cfg.formats.len() + j];
            assert_eq!(sample.id, ann.id);
            match format {
                SampleFormat::Bsd => {
                    let parsed = response::parse_response(
                        &sample.response,
                        &Expected::Bsd { canvas_res: 64 },
                        Mode::Strict,
                    )
                    .unwrap_or_else(|e| panic!("C9 bsd sample {} failed: {e}", sample.id));
                    let records = match parsed.payload {
                        Payload::Bsd { records } => records,
                        _ => unreachable!(),
                    };
                    let gt = dataset::bsd_ground_truth(ann, base, 64).unwrap();
                    assert_eq!(records.len(), gt.len(), "C9 record count for {}", sample.id);
                    for (got, want) in records.iter().zip(&gt) {
                        assert_eq!(got.mask(), want.mask(), "C9 mask for {}", sample.id);
                        assert_eq!(got.referent(), want.referent());
                    }
                }
                _ => {
                    let gt = dataset::isd_ground_truth(ann, base, 16).unwrap();
                    let parsed = response::parse_response(
                        &sample.response,
                        &Expected::Isd {
                            rows: 16,
                            cols: 16,
                            table: gt.table().clone(),
                        },
                        Mode::Strict,
                    )
                    .unwrap_or_else(|e| panic!("C9 isd sample {} failed: {e}", sample.id));
                    match parsed.payload {
                        Payload::Isd { grid, .. } => {
                            assert_eq!(grid.cells(), gt.cells(), "C9 grid for {}", sample.id)
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
    println!("[C9 PASS] 3000 samples strict-parse and reconstruct ground truth; builds byte-identical");
}

/// Companion check for the length-dominance trend: on realistic blob
/// instances the brick seg payload is never longer in characters than the
/// equivalent label-run payload over the same box.
#[test]
fn brick_seg_char_length_dominates_label_runs() {
    for scene in synth::scenes(0x5EED, 100, 256) {
        let record = scene.record(64);
        let bricks_len = record
            .body()
            .map(|b| b.bricks.to_text().len())
            .unwrap_or(0);
        let labels_len = record.seg_labels_rrle("others").len();
        assert!(
            bricks_len <= labels_len,
            "brick payload {bricks_len} exceeds label-run payload {labels_len} for {}",
            scene.referent
        );
    }
    // saturation edge: a full row of 64 splits into two bricks
    let full_row = BrickSeq::new(vec![
        BrickToken::new(Polarity::Fg, 63).unwrap(),
        BrickToken::new(Polarity::Fg, 1).unwrap(),
    ]);
    assert_eq!(full_row.to_text(), "fg63 fg1");
}
