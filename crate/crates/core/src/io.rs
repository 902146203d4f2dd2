//! Codec-free image and video formats: binary PPM (P6), binary PGM (P5),
//! and the `.rgb8` raw blob with its JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::RawVideo;

/// Sidecar for a `.rgb8` blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rgb8Header {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn encode_pnm(magic: &str, width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut buf = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    buf
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    fs::write(path, encode_pnm("P6", width, height, rgb))?;
    Ok(())
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height);
    fs::write(path, encode_pnm("P5", width, height, gray))?;
    Ok(())
}

/// Parses a binary PNM of the given magic; returns `(width, height, pixels)`.
fn parse_pnm(path: &Path, bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(path, "wrong magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "bad header field"))?;
    }
    // single whitespace byte before the raster
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(path, format!("unsupported maxval {maxval}")));
    }
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(bad(path, "truncated raster"));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    parse_pnm(path, &bytes, b"P6", 3)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    parse_pnm(path, &bytes, b"P5", 1)
}

fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Writes `<dir>/<id>.rgb8` and `<dir>/<id>.json`; returns the blob path.
pub fn write_rgb8(dir: &Path, video: &RawVideo) -> Result<PathBuf> {
    let blob = dir.join(format!("{}.rgb8", video.id));
    fs::write(&blob, video.data())?;
    let header = Rgb8Header {
        width: video.width(),
        height: video.height(),
        frames: video.frames(),
        fps: video.fps,
    };
    fs::write(sidecar_path(&blob), serde_json::to_vec_pretty(&header)?)?;
    Ok(blob)
}

pub fn read_rgb8(blob: &Path) -> Result<RawVideo> {
    let side = sidecar_path(blob);
    let header: Rgb8Header = serde_json::from_slice(&fs::read(&side)?)?;
    let data = fs::read(blob)?;
    let id = blob
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if data.len() != header.frames * header.height * header.width * 3 {
        return Err(bad(blob, "blob length disagrees with sidecar"));
    }
    RawVideo::new(id, header.fps, header.frames, header.height, header.width, data)
}

/// Reads a directory of P6 frames in lexicographic file-name order.
pub fn read_ppm_dir(dir: &Path, fps: f64) -> Result<RawVideo> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(bad(dir, "no .ppm frames"));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for f in &files {
        let (w, h, px) = read_ppm(f)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => return Err(bad(f, "frame size differs from first frame")),
            _ => {}
        }
        data.extend_from_slice(&px);
    }
    let (w, h) = dims.unwrap();
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawVideo::new(id, fps, files.len(), h, w, data)
}

/// Loads either input layout: a `.rgb8` blob or a directory of PPM frames.
pub fn read_video(path: &Path) -> Result<RawVideo> {
    if path.is_dir() {
        read_ppm_dir(path, 30.0)
    } else if path.extension().is_some_and(|e| e == "rgb8") {
        read_rgb8(path)
    } else {
        Err(bad(path, "expected a .rgb8 blob or a directory of .ppm frames"))
    }
}

/// Writes each frame as `<dir>/<prefix>_<t:04>.ppm`.
pub fn write_ppm_frames(dir: &Path, prefix: &str, frames: usize, height: usize, width: usize, rgb: &[u8]) -> Result<Vec<PathBuf>> {
    let n = height * width * 3;
    (0..frames)
        .map(|t| {
            let p = dir.join(format!("{prefix}_{t:04}.ppm"));
            write_ppm(&p, width, height, &rgb[t * n..(t + 1) * n])?;
            Ok(p)
        })
        .collect()
}
