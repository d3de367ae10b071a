//! Structural corruption fuzzing: 1000 seeded corruptions per format,
//! every one of which must be rejected. Corruptions are constructed to
//! be provably invalid (field counts off, unparsable typed tokens,
//! truncated headers, incomplete JSON), not random bit flips that might
//! land on another legal file.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::motion::FlowField;
use crate::region::{Palette, RegionProvenance, RegionMap};
use crate::types::{BoundingBox, Category};

use super::*;

const ROUNDS: usize = 1000;
const GARBAGE: &str = "x!";

/// Byte ranges (start, last_tab) of every line; corrupting inside
/// `start..=last_tab` cannot leave a full field set behind.
fn line_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            let line = &text[start..i];
            if let Some(tab) = line.rfind('\t') {
                spans.push((start, start + tab));
            }
            start = i + 1;
        }
    }
    spans
}

/// Corrupt one TSV line: cut the file mid-line, damage a typed field, or
/// change the field count. `typed` lists field indices whose values must
/// parse as numbers, enums, or booleans.
fn corrupt_tsv(rng: &mut ChaCha8Rng, text: &str, typed: &[usize]) -> String {
    let spans = line_spans(text);
    let (start, last_tab) = spans[rng.random_range(0..spans.len())];
    let line_end = text[start..].find('\n').map(|i| start + i).unwrap();
    let line = &text[start..line_end];
    let fields: Vec<&str> = line.split('\t').collect();
    match rng.random_range(0..4) {
        0 => {
            // Truncate before the line's last tab: too few fields stay.
            let cut = rng.random_range(start + 1..=last_tab);
            text[..cut].to_string()
        }
        1 => {
            // Unparsable token in a typed field.
            let idx = typed[rng.random_range(0..typed.len())];
            let mut fields = fields.clone();
            fields[idx] = GARBAGE;
            format!("{}{}{}", &text[..start], fields.join("\t"), &text[line_end..])
        }
        2 => {
            // One field too many.
            format!("{}{}\t0{}", &text[..start], line, &text[line_end..])
        }
        _ => {
            // One field too few.
            let joined = fields[..fields.len() - 1].join("\t");
            format!("{}{}{}", &text[..start], joined, &text[line_end..])
        }
    }
}

fn assert_all_rejected<E: std::fmt::Debug>(
    format: &str,
    mut attempt: impl FnMut(&mut ChaCha8Rng) -> Result<(), E>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    for round in 0..ROUNDS {
        if attempt(&mut rng).is_ok() {
            panic!("{format} accepted corrupted input at round {round}");
        }
    }
}

fn write_corrupted(path: &Path, data: &str) {
    fs::write(path, data).unwrap();
}

#[test]
fn fuzz_tracklet_records_reject_corruption() {
    let records: Vec<TrackletRecord> = (0..12)
        .map(|i| {
            let stationary = i % 3 == 0;
            TrackletRecord {
                video_id: format!("cam{}", i % 2),
                track_id: i / 3,
                frame: (i % 3) as u64 + 10 * (i / 3),
                bbox: BoundingBox::new(i as f64, 2.0, i as f64 + 5.0, 9.5),
                category: Category::from_index((i as usize / 3) % 4).unwrap(),
                orientation: (!stationary).then_some(0.3),
                speed: (!stationary).then_some(2.5),
                stationary,
            }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.tsv");
    write_tracklet_records(&base_path, &records).unwrap();
    let base = fs::read_to_string(&base_path).unwrap();
    let path = dir.path().join("fuzz.tsv");
    assert_all_rejected("tracklets", |rng| {
        write_corrupted(&path, &corrupt_tsv(rng, &base, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]));
        read_tracklet_records(&path).map(|_| ())
    });
}

#[test]
fn fuzz_annotations_reject_corruption() {
    use crate::evaluation::GroundTruthAnnotation;
    let annotations: Vec<GroundTruthAnnotation> = (0..10)
        .map(|i| GroundTruthAnnotation {
            video_id: "v".into(),
            frame: i,
            bbox: BoundingBox::new(0.0, i as f64, 8.0, i as f64 + 6.0),
            track_id: i / 4,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.tsv");
    write_annotations(&base_path, &annotations).unwrap();
    let base = fs::read_to_string(&base_path).unwrap();
    let path = dir.path().join("fuzz.tsv");
    assert_all_rejected("annotations", |rng| {
        write_corrupted(&path, &corrupt_tsv(rng, &base, &[1, 2, 3, 4, 5, 6]));
        read_annotations(&path).map(|_| ())
    });
}

#[test]
fn fuzz_frame_scores_reject_corruption() {
    let rows: Vec<FrameScoreRow> = (0..40)
        .map(|i| FrameScoreRow {
            video_id: format!("v{}", i / 20),
            frame: i % 20,
            raw: 0.25 * i as f64,
            smoothed: 0.2 * i as f64,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.tsv");
    write_frame_scores(&base_path, &rows).unwrap();
    let base = fs::read_to_string(&base_path).unwrap();
    let path = dir.path().join("fuzz.tsv");
    assert_all_rejected("frame scores", |rng| {
        write_corrupted(&path, &corrupt_tsv(rng, &base, &[1, 2, 3]));
        read_frame_scores(&path).map(|_| ())
    });
}

#[test]
fn fuzz_tracklet_scores_reject_corruption() {
    let rows: Vec<TrackletScoreRow> = (0..10)
        .flat_map(|t| {
            (0..3).map(move |o| TrackletScoreRow {
                video_id: "v".into(),
                track_id: t,
                start_frame: 5 * t,
                frame: 5 * t + o,
                region: (t % 4) as u32,
                nll: 1.5 + t as f64,
                bbox: BoundingBox::new(0.0, 0.0, 4.0, 4.0 + o as f64),
            })
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.tsv");
    write_tracklet_scores(&base_path, &rows).unwrap();
    let base = fs::read_to_string(&base_path).unwrap();
    let path = dir.path().join("fuzz.tsv");
    assert_all_rejected("tracklet scores", |rng| {
        write_corrupted(&path, &corrupt_tsv(rng, &base, &[1, 2, 3, 4, 5, 6, 7, 8, 9]));
        read_tracklet_scores(&path).map(|_| ())
    });
}

#[test]
fn fuzz_flo_rejects_corruption() {
    let u = Array2::from_shape_fn((6, 9), |(r, c)| (r * 9 + c) as f32 * 0.125);
    let v = u.mapv(|x| -x);
    let flow = FlowField::new(u, v).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.flo");
    write_flo(&base_path, &flow).unwrap();
    let base = fs::read(&base_path).unwrap();
    let path = dir.path().join("fuzz.flo");
    assert_all_rejected("flo", |rng| {
        let data = match rng.random_range(0..4) {
            0 => base[..rng.random_range(1..base.len())].to_vec(),
            1 => {
                // Appending breaks the exact-length requirement.
                let mut d = base.clone();
                d.push(rng.random());
                d
            }
            2 => {
                let mut d = base.clone();
                d[rng.random_range(0..4)] ^= 0xFF;
                d
            }
            _ => {
                // Oversized dimension header.
                let mut d = base.clone();
                d[4..8].copy_from_slice(&(1i32 << 20).to_le_bytes());
                d
            }
        };
        fs::write(&path, data).unwrap();
        read_flo(&path).map(|_| ())
    });
}

#[test]
fn fuzz_region_map_rejects_corruption() {
    let labels = Array2::from_shape_fn((12, 16), |(r, c)| ((r / 6) * 2 + c / 8) as u32);
    let map = RegionMap::new(labels, RegionProvenance::direct(4)).unwrap();
    let palette = Palette::generate(4);
    let dir = tempfile::tempdir().unwrap();
    let base_pgm = dir.path().join("base.pgm");
    let base_sidecar = dir.path().join("base.json");
    write_region_map(&base_pgm, &base_sidecar, &map, &palette).unwrap();
    let pgm = fs::read(&base_pgm).unwrap();
    let sidecar = fs::read(&base_sidecar).unwrap();
    let sidecar_trim = sidecar.len() - (sidecar.iter().rev().take_while(|&&b| b.is_ascii_whitespace()).count());

    let fuzz_pgm = dir.path().join("fuzz.pgm");
    let fuzz_sidecar = dir.path().join("fuzz.json");
    assert_all_rejected("region map", |rng| {
        let mut pgm_data = pgm.clone();
        let mut sidecar_data = sidecar.clone();
        match rng.random_range(0..5) {
            0 => pgm_data = pgm[..rng.random_range(1..pgm.len())].to_vec(),
            1 => pgm_data.push(0),
            2 => pgm_data[rng.random_range(0..3)] ^= 0x10,
            // Sidecar JSON cut inside the document is never complete.
            3 => sidecar_data = sidecar[..rng.random_range(1..sidecar_trim)].to_vec(),
            _ => {
                let at = rng.random_range(0..sidecar_data.len());
                sidecar_data.insert(at, 0x01);
            }
        }
        fs::write(&fuzz_pgm, pgm_data).unwrap();
        fs::write(&fuzz_sidecar, sidecar_data).unwrap();
        read_region_map(&fuzz_pgm, &fuzz_sidecar).map(|_| ())
    });
}

#[test]
fn fuzz_model_set_rejects_corruption() {
    use crate::gmm::EmConfig;
    use crate::normalcy::{TrainConfig, train_regional_models};
    use crate::region::grid_region_map;
    let map = grid_region_map(8, 8, 4).unwrap();
    let features: Vec<Array2<f64>> = (0..4)
        .map(|r| {
            Array2::from_shape_fn((60, 6), |(i, j)| {
                (if j == r { 1.0 } else { 0.0 }) + (i as f64) * 1e-3 + (j as f64) * 0.01
            })
        })
        .collect();
    let config = TrainConfig {
        k_max: 2,
        em: EmConfig::with_seed(3),
        ..TrainConfig::default()
    };
    let models = train_regional_models(&map, &features, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base_path = dir.path().join("base.json");
    write_model_set(&base_path, &models).unwrap();
    let base = fs::read(&base_path).unwrap();
    let trim = base.len() - base.iter().rev().take_while(|&&b| b.is_ascii_whitespace()).count();
    let path = dir.path().join("fuzz.json");
    assert_all_rejected("model set", |rng| {
        let data = if rng.random_range(0..2) == 0 {
            base[..rng.random_range(1..trim)].to_vec()
        } else {
            let mut d = base.clone();
            d.insert(rng.random_range(0..d.len()), 0x01);
            d
        };
        fs::write(&path, data).unwrap();
        read_model_set(&path).map(|_| ())
    });
}

#[test]
fn fuzz_config_rejects_corruption() {
    let base = RunConfig::default().to_text();
    let lines: Vec<&str> = base.lines().collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fuzz.txt");
    assert_all_rejected("config", |rng| {
        let mut mutated: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        let at = rng.random_range(0..mutated.len());
        match rng.random_range(0..4) {
            0 => mutated[at] = "this line has no separator".into(),
            1 => mutated[at] = format!("mystery_key_{} = 1", rng.random_range(0..100)),
            2 => {
                let key = mutated[at].split('=').next().unwrap().trim().to_string();
                mutated[at] = format!("{key} = {GARBAGE}");
            }
            _ => mutated.insert(at, "= 5".into()),
        }
        fs::write(&path, mutated.join("\n")).unwrap();
        RunConfig::read(&path).map(|_| ())
    });
}
