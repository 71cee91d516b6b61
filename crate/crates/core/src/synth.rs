//! Deterministic synthetic scenes: coherent blob masks with named referents,
//! used by the token-length comparisons, the corpus tests, and demos.

use crate::bsd::{self, BsdRecord};
use crate::dataset::{Annotation, Task};
use crate::imgio;
use crate::raster::{BinaryGrid, LabelGrid, LabelMask, LabelTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io;
use std::path::{Path, PathBuf};

/// Referent pool; plain words only, safe as label texts.
pub const REFERENTS: [&str; 16] = [
    "black dog",
    "red car",
    "person",
    "tall tree",
    "large rock",
    "blue umbrella",
    "cat",
    "wooden bench",
    "bird",
    "yellow taxi",
    "child",
    "traffic light",
    "brown horse",
    "small boat",
    "street sign",
    "white house",
];

/// One synthetic single-instance scene: a pixel-level binary mask whose
/// foreground id 1 carries the referent text.
#[derive(Debug, Clone)]
pub struct Scene {
    pub referent: String,
    pub mask: LabelMask,
}

impl Scene {
    /// Label grid at the given resolution; table is `{0: others, 1: referent}`.
    pub fn isd_grid(&self, resolution: u32) -> LabelGrid {
        self.mask
            .downsample(resolution, resolution)
            .expect("resolution is nonzero")
    }

    /// Instance bits on the square canvas.
    pub fn canvas_bits(&self, canvas_res: u32) -> BinaryGrid {
        self.isd_grid(canvas_res).binarize(1)
    }

    /// Box-wise record of the instance on the canvas.
    pub fn record(&self, canvas_res: u32) -> BsdRecord {
        bsd::encode_record(&self.canvas_bits(canvas_res), self.referent.clone())
            .expect("synthetic referents never contain markers")
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        Ellipse {
            cx: rng.gen_range(0.30..0.70) * extent,
            cy: rng.gen_range(0.30..0.70) * extent,
            rx: rng.gen_range(0.08..0.22) * extent,
            ry: rng.gen_range(0.08..0.22) * extent,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Fill a square pixel grid with the union of one or two random ellipses.
fn blob_bits(rng: &mut ChaCha8Rng, pixel_res: u32) -> Vec<bool> {
    let extent = pixel_res as f64;
    let mut shapes = vec![Ellipse::random(rng, extent)];
    if rng.gen_bool(0.5) {
        shapes.push(Ellipse::random(rng, extent));
    }
    let mut bits = Vec::with_capacity((pixel_res * pixel_res) as usize);
    for y in 0..pixel_res {
        for x in 0..pixel_res {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            bits.push(shapes.iter().any(|e| e.contains(px, py)));
        }
    }
    bits
}

fn scene_table(referent: &str) -> LabelTable {
    LabelTable::from_entries([(1u32, referent)]).expect("pool labels are valid")
}

/// Deterministic batch of single-instance scenes.
pub fn scenes(seed: u64, n: usize, pixel_res: u32) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let referent = REFERENTS[i % REFERENTS.len()].to_string();
            let bits = blob_bits(&mut rng, pixel_res);
            let data: Vec<u32> = bits.iter().map(|&b| b as u32).collect();
            let mask = LabelMask::new(pixel_res, pixel_res, data, scene_table(&referent))
                .expect("generated data matches dimensions");
            Scene { referent, mask }
        })
        .collect()
}

/// Uniformly random label grid over the table's ids.
pub fn random_grid(rng: &mut ChaCha8Rng, rows: u32, cols: u32, table: &LabelTable) -> LabelGrid {
    let ids: Vec<u32> = table.iter().map(|(id, _)| id).collect();
    let cells: Vec<u32> = (0..(rows as usize) * (cols as usize))
        .map(|_| ids[rng.gen_range(0..ids.len())])
        .collect();
    LabelGrid::new(rows, cols, cells, table.clone()).expect("cells drawn from the table")
}

/// Write `n` annotations (plus their mask files) under `dir`, cycling
/// through the task families; returns the annotations path.
///
/// The mix per cycle of five: single-instance referring, two-instance
/// referring, three-class semantic, no-target generalized referring, and
/// three-instance reasoning via separate binary masks.
pub fn write_annotation_set(dir: &Path, n: usize, seed: u64) -> io::Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&masks_dir)?;
    let pixel_res = 96u32;

    let io_err = |e: imgio::ImgError| io::Error::other(e.to_string());

    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("synth{i:05}");
        let referent = REFERENTS[rng.gen_range(0..REFERENTS.len())].to_string();
        let ann = match i % 5 {
            0 => {
                let bits = blob_bits(&mut rng, pixel_res);
                let ids: Vec<u32> = bits.iter().map(|&b| b as u32).collect();
                let rel = format!("masks/{id}.pgm");
                imgio::write_pgm(&dir.join(&rel), pixel_res, pixel_res, &ids).map_err(io_err)?;
                Annotation {
                    id: id.clone(),
                    image: format!("images/{id}.jpg"),
                    mask: Some(rel),
                    instance_masks: vec![],
                    label_table: None,
                    task: Task::Referring,
                    referents: vec![referent],
                    no_target: false,
                }
            }
            1 => {
                let first = blob_bits(&mut rng, pixel_res);
                let second = blob_bits(&mut rng, pixel_res);
                let ids: Vec<u32> = first
                    .iter()
                    .zip(&second)
                    .map(|(&a, &b)| if b { 2 } else { a as u32 })
                    .collect();
                let rel = format!("masks/{id}.pgm");
                imgio::write_pgm(&dir.join(&rel), pixel_res, pixel_res, &ids).map_err(io_err)?;
                let other = REFERENTS[rng.gen_range(0..REFERENTS.len())].to_string();
                let second_ref = if other == referent {
                    format!("second {other}")
                } else {
                    other
                };
                Annotation {
                    id: id.clone(),
                    image: format!("images/{id}.jpg"),
                    mask: Some(rel),
                    instance_masks: vec![],
                    label_table: None,
                    task: Task::GeneralizedReferring,
                    referents: vec![referent, second_ref],
                    no_target: false,
                }
            }
            2 => {
                let first = blob_bits(&mut rng, pixel_res);
                let second = blob_bits(&mut rng, pixel_res);
                let ids: Vec<u32> = first
                    .iter()
                    .zip(&second)
                    .map(|(&a, &b)| if b { 2 } else { a as u32 })
                    .collect();
                let mask_rel = format!("masks/{id}.pgm");
                imgio::write_pgm(&dir.join(&mask_rel), pixel_res, pixel_res, &ids)
                    .map_err(io_err)?;
                let table_rel = format!("masks/{id}_table.json");
                let table =
                    LabelTable::from_entries([(0u32, "others"), (1, "water"), (2, "forest")])
                        .expect("static labels");
                imgio::write_label_table(&dir.join(&table_rel), &table).map_err(io_err)?;
                Annotation {
                    id: id.clone(),
                    image: format!("images/{id}.jpg"),
                    mask: Some(mask_rel),
                    instance_masks: vec![],
                    label_table: Some(table_rel),
                    task: Task::Semantic,
                    referents: vec![],
                    no_target: false,
                }
            }
            3 => Annotation {
                id: id.clone(),
                image: format!("images/{id}.jpg"),
                mask: None,
                instance_masks: vec![],
                label_table: None,
                task: Task::GeneralizedReferring,
                referents: vec![referent],
                no_target: true,
            },
            _ => {
                let mut rels = Vec::new();
                for k in 0..3 {
                    let bits = blob_bits(&mut rng, pixel_res);
                    let ids: Vec<u32> = bits.iter().map(|&b| b as u32).collect();
                    let rel = format!("masks/{id}_i{k}.pgm");
                    imgio::write_pgm(&dir.join(&rel), pixel_res, pixel_res, &ids)
                        .map_err(io_err)?;
                    rels.push(rel);
                }
                Annotation {
                    id: id.clone(),
                    image: format!("images/{id}.jpg"),
                    mask: None,
                    instance_masks: rels,
                    label_table: None,
                    task: Task::Reasoning,
                    referents: vec![format!("the items near the {referent}")],
                    no_target: false,
                }
            }
        };
        lines.push(serde_json::to_string(&ann).expect("annotation serializes"));
    }

    let path = dir.join("annotations.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n")?;
    Ok(path)
}
