//! Reading and writing frames as PNG or binary PPM.

use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use vdeblur_core::Frame;

use crate::error::{CliError, CliResult};

const EXTENSIONS: [&str; 2] = ["png", "ppm"];

fn has_frame_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Frame files named by `input`: every PNG/PPM in a directory, or the
/// matches of a glob pattern. Sorted by path.
pub fn list_frames(input: &str) -> CliResult<Vec<PathBuf>> {
    let dir = Path::new(input);
    let mut paths: Vec<PathBuf> = if dir.is_dir() {
        std::fs::read_dir(dir)
            .map_err(CliError::io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && has_frame_extension(p))
            .collect()
    } else {
        glob::glob(input)
            .map_err(|e| CliError::Usage(format!("bad input pattern `{input}`: {e}")))?
            .filter_map(|p| p.ok())
            .filter(|p| p.is_file())
            .collect()
    };
    if paths.is_empty() {
        return Err(CliError::Data(format!("no frames found at `{input}`")));
    }
    paths.sort();
    Ok(paths)
}

pub fn read_frame(path: &Path) -> CliResult<Frame> {
    let img = image::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = img.into_rgb32f();
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px.0[c];
        }
    }
    Ok(Frame::new(w, h, data)?)
}

pub fn read_frames(paths: &[PathBuf]) -> CliResult<Vec<Frame>> {
    let frames: Vec<Frame> = paths.iter().map(|p| read_frame(p)).collect::<CliResult<_>>()?;
    if let Some(first) = frames.first() {
        if let Some((p, f)) = paths.iter().zip(&frames).find(|(_, f)| f.dims() != first.dims()) {
            return Err(CliError::Data(format!(
                "{}: {}x{} differs from {}x{} of the first frame",
                p.display(),
                f.width(),
                f.height(),
                first.width(),
                first.height()
            )));
        }
    }
    Ok(frames)
}

/// Quantize to 8 bits, rounding to nearest; values are clamped to [0, 1].
pub fn to_rgb8(frame: &Frame) -> RgbImage {
    let (w, h) = frame.dims();
    let plane = w * h;
    let d = frame.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Write `frame` as 8-bit PNG or PPM, chosen by extension.
pub fn write_frame(path: &Path, frame: &Frame) -> CliResult<()> {
    let format = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "png" => ImageFormat::Png,
        Some(e) if e == "ppm" => ImageFormat::Pnm,
        _ => return Err(CliError::Usage(format!("{}: frames are written as .png or .ppm", path.display()))),
    };
    to_rgb8(frame)
        .save_with_format(path, format)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

