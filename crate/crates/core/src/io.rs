//! Frame sequences, Middlebury `.flo` files and CSV reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::frame::{Frame, Plane};
use crate::pipeline::IterationReport;

/// `.flo` header tag, the float whose bytes spell `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;

/// A numbered frame sequence on disk, e.g. `frames/f%04d.png` over `1..=14`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub input_pattern: String,
    pub first: usize,
    pub last: usize,
    pub output_dir: Option<PathBuf>,
    pub output_pattern: Option<String>,
}

impl SequenceSpec {
    pub fn new(input_pattern: impl Into<String>, first: usize, last: usize) -> Self {
        SequenceSpec {
            input_pattern: input_pattern.into(),
            first,
            last,
            output_dir: None,
            output_pattern: None,
        }
    }

    pub fn input_paths(&self) -> Result<Vec<PathBuf>> {
        if self.last < self.first {
            return Err(Error::Input(format!(
                "empty frame range {}..{}",
                self.first, self.last
            )));
        }
        (self.first..=self.last)
            .map(|i| format_index(&self.input_pattern, i).map(PathBuf::from))
            .collect()
    }

    /// Output paths: the output pattern (default: the input file name)
    /// inside the output directory.
    pub fn output_paths(&self) -> Result<Vec<PathBuf>> {
        let dir = self
            .output_dir
            .clone()
            .ok_or_else(|| Error::Input("no output directory".into()))?;
        let pattern = match &self.output_pattern {
            Some(p) => p.clone(),
            None => Path::new(&self.input_pattern)
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Input("input pattern has no file name".into()))?,
        };
        (self.first..=self.last)
            .map(|i| format_index(&pattern, i).map(|name| dir.join(name)))
            .collect()
    }
}

/// Expands the single `%d` / `%0Nd` / `%Nd` placeholder of a pattern.
pub fn format_index(pattern: &str, index: usize) -> Result<String> {
    let bad = || Error::Input(format!("pattern {pattern:?} needs exactly one %d-style field"));
    let start = pattern.find('%').ok_or_else(bad)?;
    let rest = &pattern[start + 1..];
    let end = rest.find('d').ok_or_else(bad)?;
    let spec = &rest[..end];
    if !spec.chars().all(|c| c.is_ascii_digit()) || rest[end + 1..].contains('%') {
        return Err(bad());
    }
    let zero = spec.starts_with('0');
    let width: usize = if spec.is_empty() { 0 } else { spec.parse().map_err(|_| bad())? };
    let num = if zero {
        format!("{index:0width$}")
    } else {
        format!("{index:width$}")
    };
    Ok(format!("{}{}{}", &pattern[..start], num, &rest[end + 1..]))
}

fn planes_from<P: image::Pixel>(
    img: &ImageBuffer<P, Vec<P::Subpixel>>,
    channels: usize,
    max_code: f64,
) -> Result<Frame>
where
    P::Subpixel: Into<f64>,
{
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes = (0..channels)
        .map(|c| {
            Plane::from_fn(h, w, |y, x| {
                img.get_pixel(x as u32, y as u32).channels()[c].into() / max_code
            })
        })
        .collect();
    Frame::new(planes)
}

/// Loads an 8- or 16-bit gray or RGB image scaled to `[0, 1]`; alpha is dropped.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::file(path, e.to_string()))?;
    let frame = match img {
        DynamicImage::ImageLuma8(b) => planes_from(&b, 1, 255.0),
        DynamicImage::ImageLumaA8(b) => planes_from(&b, 1, 255.0),
        DynamicImage::ImageRgb8(b) => planes_from(&b, 3, 255.0),
        DynamicImage::ImageRgba8(b) => planes_from(&b, 3, 255.0),
        DynamicImage::ImageLuma16(b) => planes_from(&b, 1, 65535.0),
        DynamicImage::ImageLumaA16(b) => planes_from(&b, 1, 65535.0),
        DynamicImage::ImageRgb16(b) => planes_from(&b, 3, 65535.0),
        DynamicImage::ImageRgba16(b) => planes_from(&b, 3, 65535.0),
        other => {
            return Err(Error::file(
                path,
                format!("unsupported pixel format {:?}", other.color()),
            ))
        }
    };
    frame.map_err(|e| Error::file(path, e.to_string()))
}

pub fn read_frame_sequence(spec: &SequenceSpec) -> Result<Vec<Frame>> {
    let paths = spec.input_paths()?;
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for path in &paths {
        if !path.exists() {
            return Err(Error::file(path, "no such file"));
        }
        let f = read_frame(path)?;
        if let Some(first) = frames.first() {
            if first.dims() != f.dims() || first.num_channels() != f.num_channels() {
                return Err(Error::file(
                    path,
                    format!(
                        "frame is {}x{}x{}, expected {}x{}x{} like {}",
                        f.height(),
                        f.width(),
                        f.num_channels(),
                        first.height(),
                        first.width(),
                        first.num_channels(),
                        paths[0].display()
                    ),
                ));
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Clamps to `[0, 1]` and rounds half away from zero to 8 bits.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel frame as 8-bit; the format follows the extension.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = frame.dims();
    let img = match frame.num_channels() {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([quantize_u8(frame.channel(0).get(y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (y, x) = (y as usize, x as usize);
            Rgb([
                quantize_u8(frame.channel(0).get(y, x)),
                quantize_u8(frame.channel(1).get(y, x)),
                quantize_u8(frame.channel(2).get(y, x)),
            ])
        })),
        n => {
            return Err(Error::file(path, format!("cannot encode {n}-channel frame")));
        }
    };
    img.save(path).map_err(|e| Error::file(path, e.to_string()))
}

/// Writes a plane as grayscale after mapping `[lo, hi]` onto `[0, 1]`.
pub fn write_plane_scaled(path: &Path, plane: &Plane, lo: f64, hi: f64) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mapped = plane.map(|v| ((v - lo) / span).clamp(0.0, 1.0));
    write_frame(path, &Frame::from_plane(mapped)?)
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            out.extend_from_slice(&(dx as f32).to_le_bytes());
            out.extend_from_slice(&(dy as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| b.try_into().unwrap())
            .ok_or_else(|| Error::Input("truncated .flo data".into()))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::Input("bad .flo magic".into()));
    }
    let w = i32::from_le_bytes(word(1)?);
    let h = i32::from_le_bytes(word(2)?);
    if w <= 0 || h <= 0 {
        return Err(Error::Input(format!(".flo has invalid size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(Error::Input(format!(
            ".flo of {w}x{h} should have {} bytes, got {}",
            12 + 8 * w * h,
            bytes.len()
        )));
    }
    let mut dx = Plane::zeros(h, w);
    let mut dy = Plane::zeros(h, w);
    for i in 0..w * h {
        dx.as_mut_slice()[i] = f32::from_le_bytes(word(3 + 2 * i)?) as f64;
        dy.as_mut_slice()[i] = f32::from_le_bytes(word(4 + 2 * i)?) as f64;
    }
    FlowField::from_planes(dx, dy)
}

pub fn write_flow_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e.to_string()))?);
    f.write_all(&encode_flo(flow))?;
    f.flush()?;
    Ok(())
}

pub fn read_flow_flo(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::file(path, e.to_string()))?)
        .read_to_end(&mut bytes)?;
    decode_flo(&bytes).map_err(|e| Error::file(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::file(path, e.to_string())
}

/// Columns: `iteration, frame, mean_squared_change`.
pub fn write_iteration_report(path: &Path, report: &IterationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["iteration", "frame", "mean_squared_change"])
        .map_err(|e| csv_error(path, e))?;
    for (it, row) in report.changes.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            w.write_record([(it + 1).to_string(), i.to_string(), format!("{v:e}")])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns: `frame, offset, contribution` (offset relative to the reference).
pub fn write_contributions(
    path: &Path,
    frame: usize,
    ref_index: usize,
    contributions: &[f64],
    append: bool,
) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::file(path, e.to_string()))?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["frame", "offset", "contribution"])
            .map_err(|e| csv_error(path, e))?;
    }
    for (i, c) in contributions.iter().enumerate() {
        let offset = i as i64 - ref_index as i64;
        w.write_record([frame.to_string(), offset.to_string(), format!("{c:.6}")])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `frame, psnr_db`, with `inf` for identical frames.
pub fn write_psnr_table<W: Write>(out: W, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["frame", "psnr_db"]).map_err(fail)?;
    for (i, v) in rows {
        w.write_record([i.to_string(), format!("{v:.4}")]).map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}
