//! Binary PGM (P5) layouts, binary PPM (P6) images and tab-separated
//! dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, ImageRgb, Sample, SemanticLayout, Split};
use crate::error::{Error, Result};

fn bad(offset: usize, reason: impl Into<String>) -> Error {
    Error::Netpbm {
        offset,
        reason: reason.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(bad(pos, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(start, "number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad(pos, "expected a single whitespace byte before the payload")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(2, format!("zero dimension {width}×{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(pos - 1, format!("maxval {maxval} unsupported (1..=255)")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        payload: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.payload;
    if have < need {
        return Err(bad(bytes.len(), format!("truncated payload: {have} of {need} bytes")));
    }
    Ok(&bytes[h.payload..h.payload + need])
}

pub fn encode_pgm(layout: &SemanticLayout) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", layout.width(), layout.height()).into_bytes();
    out.extend_from_slice(layout.pixels());
    out
}

/// Decodes a P5 layout whose byte values are class indices below `classes`.
pub fn decode_pgm(bytes: &[u8], classes: usize) -> Result<SemanticLayout> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    if let Some(i) = data.iter().position(|&b| b as usize >= classes) {
        return Err(bad(
            h.payload + i,
            format!("class index {} not below {classes}", data[i]),
        ));
    }
    SemanticLayout::new(h.width, h.height, classes, data.to_vec())
}

/// Quantizes to bytes with round-half-up: `floor(v·255 + 0.5)`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(image: &ImageRgb) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.values().iter().map(|&v| quantize(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRgb> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    let scale = h.maxval as f32;
    let values = data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect();
    ImageRgb::new(h.width, h.height, values)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_layout(path: &Path, layout: &SemanticLayout) -> Result<()> {
    write_atomic(path, &encode_pgm(layout))
}

pub fn read_layout(path: &Path, classes: usize) -> Result<SemanticLayout> {
    decode_pgm(&read(path)?, classes)
}

pub fn write_image(path: &Path, image: &ImageRgb) -> Result<()> {
    write_atomic(path, &encode_ppm(image))
}

pub fn read_image(path: &Path) -> Result<ImageRgb> {
    decode_ppm(&read(path)?)
}

/// One `<layout>\t<image>` line per pair. Relative paths are written as given.
pub fn write_manifest(path: &Path, pairs: &[(PathBuf, PathBuf)]) -> Result<()> {
    let mut text = String::new();
    for (l, i) in pairs {
        text.push_str(&format!("{}\t{}\n", l.display(), i.display()));
    }
    write_atomic(path, text.as_bytes())
}

/// Reads a manifest, resolving relative entries against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (l, i) = line.split_once('\t').ok_or_else(|| {
                Error::Invalid(format!("{}:{}: expected <layout>\\t<image>", path.display(), n + 1))
            })?;
            Ok((base.join(l), base.join(i)))
        })
        .collect()
}

pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const TEST_MANIFEST: &str = "test.tsv";

/// Writes `layouts/NNNN.pgm`, `images/NNNN.ppm` and one manifest per split
/// (`train.tsv`, `test.tsv`; validation samples go to the train manifest).
pub fn write_dataset_dir(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["layouts", "images"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir.join(sub), e))?;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in data.samples().iter().enumerate() {
        let l = PathBuf::from(format!("layouts/{i:04}.pgm"));
        let im = PathBuf::from(format!("images/{i:04}.ppm"));
        write_layout(&dir.join(&l), &s.layout)?;
        write_image(&dir.join(&im), &s.image)?;
        match s.split {
            Split::Test => test.push((l, im)),
            _ => train.push((l, im)),
        }
    }
    write_manifest(&dir.join(TRAIN_MANIFEST), &train)?;
    write_manifest(&dir.join(TEST_MANIFEST), &test)
}

/// Reads a directory written by [`write_dataset_dir`]. A missing test
/// manifest means an empty test split.
pub fn read_dataset_dir(dir: &Path, classes: usize) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (name, split) in [(TRAIN_MANIFEST, Split::Train), (TEST_MANIFEST, Split::Test)] {
        let path = dir.join(name);
        if split == Split::Test && !path.exists() {
            continue;
        }
        for (l, i) in read_manifest(&path)? {
            samples.push(Sample {
                layout: read_layout(&l, classes)?,
                image: read_image(&i)?,
                split,
            });
        }
    }
    Dataset::new(samples)
}
