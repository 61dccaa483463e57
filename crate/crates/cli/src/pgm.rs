//! Minimal PGM (P5, 8-bit) reader/writer for image input and label-map
//! output. Labels are spread evenly over 0..=255 so any viewer shows the
//! classes as distinct gray levels.

use std::path::Path;

use anyhow::{bail, Context, Result};

use dynunet_core::LabelMap;

/// Parse a binary PGM (P5) with maxval <= 255. Returns (height, width,
/// row-major pixels).
pub fn parse(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    // header = 4 whitespace-separated tokens, with '#' comments
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header");
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        bail!("not a binary PGM (P5) file");
    }
    let width: usize = std::str::from_utf8(fields[1])?.parse().context("width")?;
    let height: usize = std::str::from_utf8(fields[2])?.parse().context("height")?;
    let maxval: usize = std::str::from_utf8(fields[3])?.parse().context("maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("unsupported PGM maxval {maxval}; need 1..=255");
    }
    pos += 1; // single whitespace after maxval
    let need = width * height;
    let pixels = bytes
        .get(pos..pos + need)
        .with_context(|| format!("PGM payload truncated: need {need} bytes"))?;
    Ok((height, width, pixels.to_vec()))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    parse(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

pub fn write(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != h * w {
        bail!("pixel buffer has {} bytes, expected {}", pixels.len(), h * w);
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Write the first batch entry of a label map, classes spread evenly over
/// the 8-bit range (class k -> k * 255 / (num_classes - 1)).
pub fn write_labels(path: &Path, labels: &LabelMap, num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        bail!("need at least 2 classes to scale labels");
    }
    let plane = labels.h * labels.w;
    let pixels: Vec<u8> = labels.labels[..plane]
        .iter()
        .map(|&l| (l * 255 / (num_classes - 1)) as u8)
        .collect();
    write(path, labels.h, labels.w, &pixels)
}
