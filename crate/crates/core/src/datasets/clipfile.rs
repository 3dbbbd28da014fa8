//! Clip files: eight little-endian `u32` header words
//! `[magic, version, T, H, W, fps_num, fps_den, reserved]` followed by
//! `T·H·W` little-endian `f32` pixel values in row-major frame order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{View, ViewClip};

/// `"ECVC"` read as a little-endian `u32`.
pub const CLIP_MAGIC: u32 = u32::from_le_bytes(*b"ECVC");
pub const CLIP_VERSION: u32 = 1;
const HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipHeader {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps_num: u32,
    pub fps_den: u32,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<ClipHeader> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Data(format!("{}: truncated clip header", path.display())));
    }
    let w: Vec<u32> = bytes[..HEADER_BYTES]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if w[0] != CLIP_MAGIC {
        return Err(Error::Data(format!("{}: not a clip file", path.display())));
    }
    if w[1] != CLIP_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: w[1],
            expected: CLIP_VERSION,
        });
    }
    Ok(ClipHeader {
        num_frames: w[2] as usize,
        height: w[3] as usize,
        width: w[4] as usize,
        fps_num: w[5],
        fps_den: w[6],
    })
}

pub fn write_clip(path: &Path, clip: &ViewClip) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_BYTES + clip.data.len() * 4);
    let words = [
        CLIP_MAGIC,
        CLIP_VERSION,
        clip.num_frames as u32,
        clip.height as u32,
        clip.width as u32,
        clip.fps_num,
        clip.fps_den,
        0,
    ];
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in &clip.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads only the header and checks that the file length matches it.
pub fn read_clip_header(path: &Path) -> Result<ClipHeader> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; HEADER_BYTES];
    f.read_exact(&mut buf).map_err(|_| Error::Data(format!("{}: truncated clip header", path.display())))?;
    let h = parse_header(path, &buf)?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len() as usize;
    let expected = HEADER_BYTES + h.num_frames * h.height * h.width * 4;
    if len != expected {
        return Err(Error::Data(format!(
            "{}: file has {len} bytes, header implies {expected}",
            path.display()
        )));
    }
    Ok(h)
}

pub fn read_clip(path: &Path, view: View) -> Result<ViewClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(path, &bytes)?;
    let n = h.num_frames * h.height * h.width;
    let body = &bytes[HEADER_BYTES..];
    if body.len() != n * 4 {
        return Err(Error::Data(format!(
            "{}: expected {n} pixel values, found {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let clip = ViewClip {
        view,
        num_frames: h.num_frames,
        height: h.height,
        width: h.width,
        fps_num: h.fps_num,
        fps_den: h.fps_den,
        data,
    };
    clip.validate()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(clip)
}
