//! Region maps as binary portable graymaps plus a JSON sidecar carrying
//! provenance and the render palette.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::json::{read_json, write_json};
use crate::region::{Palette, RegionMap, RegionProvenance};

/// Sidecar fields for a serialized region map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMapSidecar {
    pub k: usize,
    pub provenance: RegionProvenance,
    /// One "#rrggbb" entry per label.
    pub palette: Vec<String>,
}

/// Writes `map` as an 8-bit graymap (labels are gray levels, so K is
/// capped at 256) plus its sidecar.
pub fn write_region_map(
    pgm_path: &Path,
    sidecar_path: &Path,
    map: &RegionMap,
    palette: &Palette,
) -> Result<()> {
    if map.k() > 256 {
        return Err(Error::invalid_argument(format!(
            "{} labels exceed the graymap's 256 levels",
            map.k()
        )));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    bytes.extend(map.labels().iter().map(|&l| l as u8));
    fs::write(pgm_path, bytes)?;
    let sidecar = RegionMapSidecar {
        k: map.k(),
        provenance: map.provenance().clone(),
        palette: (0..map.k() as u32)
            .map(|l| {
                let [r, g, b] = palette.color(l);
                format!("#{r:02x}{g:02x}{b:02x}")
            })
            .collect(),
    };
    write_json(sidecar_path, &sidecar)
}

pub fn read_region_map(pgm_path: &Path, sidecar_path: &Path) -> Result<(RegionMap, Palette)> {
    let bytes = fs::read(pgm_path)?;
    let fail = |offset: u64, message: String| Error::Format {
        path: pgm_path.display().to_string(),
        offset,
        message,
    };
    if bytes.len() < 3 || &bytes[0..3] != b"P5\n" {
        return Err(fail(0, "not a binary graymap (expected P5)".into()));
    }
    let (width, after_w) = parse_ascii_int(&bytes, 3, b' ').map_err(|(o, m)| fail(o, m))?;
    let (height, after_h) = parse_ascii_int(&bytes, after_w, b'\n').map_err(|(o, m)| fail(o, m))?;
    let (maxval, data_start) =
        parse_ascii_int(&bytes, after_h, b'\n').map_err(|(o, m)| fail(o, m))?;
    if maxval != 255 {
        return Err(fail(after_h as u64, format!("maxval must be 255, found {maxval}")));
    }
    if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(fail(3, format!("implausible dimensions {width}x{height}")));
    }
    let expected = data_start + width * height;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let labels = Array2::from_shape_vec(
        (height, width),
        bytes[data_start..].iter().map(|&b| b as u32).collect(),
    )
    .expect("shape matches byte count");

    let sidecar: RegionMapSidecar = read_json(sidecar_path)?;
    let map = RegionMap::new(labels, sidecar.provenance)?;
    if map.k() != sidecar.k {
        return Err(Error::ArtifactMismatch(format!(
            "sidecar declares {} regions but the raster holds {}",
            sidecar.k,
            map.k()
        )));
    }
    if sidecar.palette.len() != map.k() {
        return Err(Error::ArtifactMismatch(format!(
            "palette has {} entries for {} regions",
            sidecar.palette.len(),
            map.k()
        )));
    }
    let mut colors = Vec::with_capacity(sidecar.palette.len());
    for entry in &sidecar.palette {
        colors.push(parse_hex_color(entry).ok_or_else(|| {
            Error::invalid_argument(format!("palette entry {entry:?} is not #rrggbb"))
        })?);
    }
    Ok((map, Palette::from_colors(colors)?))
}

/// ASCII decimal starting at `start`, terminated by exactly `terminator`.
fn parse_ascii_int(
    bytes: &[u8],
    start: usize,
    terminator: u8,
) -> std::result::Result<(usize, usize), (u64, String)> {
    let mut value = 0usize;
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((bytes[i] - b'0') as usize))
            .ok_or((i as u64, "header number overflows".to_string()))?;
        i += 1;
    }
    if i == start {
        return Err((start as u64, "expected a decimal header field".into()));
    }
    if i >= bytes.len() || bytes[i] != terminator {
        return Err((i as u64, "bad header separator".into()));
    }
    Ok((value, i + 1))
}

fn parse_hex_color(s: &str) -> Option<[u8; 3]> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let r = u8::from_str_radix(&hex[0..2], 16).ok()?;
    let g = u8::from_str_radix(&hex[2..4], 16).ok()?;
    let b = u8::from_str_radix(&hex[4..6], 16).ok()?;
    Some([r, g, b])
}
