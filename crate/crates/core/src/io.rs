//! On-disk formats.
//!
//! * 16-bit PGM depth maps storing `round(depth * 256)` big-endian, 0 = invalid.
//! * 8-bit PGM masks and gray images, and 8-bit PPM color images.
//! * Raw little-endian float32 grids (`F32G`) with a 16-byte header:
//!   magic, width, height, channels as `u32`, then channel-major data.
//! * Association volumes (`PDAV`), packed labels (`PDAL`) and MER images (`MER1`),
//!   described at their writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::association::{Labels, NeighborhoodSpec, PdaVolume};
use crate::error::{Error, Result};
use crate::image::{DepthImage, FlowField, Grid, Mask};
use crate::mer::MerImage;

/// Depth units per meter in 16-bit PGM depth maps.
pub const PGM_DEPTH_SCALE: f64 = 256.0;

pub const MAGIC_GRID: &[u8; 4] = b"F32G";
pub const MAGIC_PDA: &[u8; 4] = b"PDAV";
pub const MAGIC_LABELS: &[u8; 4] = b"PDAL";
pub const MAGIC_MER: &[u8; 4] = b"MER1";

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn pnm_header(magic: &str, w: usize, h: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes()
}

/// Encodes a depth image as a 16-bit PGM.
///
/// Depths above 65535/256 m saturate; valid depths below 1/512 m round to 1
/// so they stay distinguishable from the invalid marker.
pub fn encode_depth_pgm(depth: &DepthImage) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = pnm_header("P5", w, h, 65535);
    out.reserve(w * h * 2);
    for &d in depth.values() {
        let v = if d > 0.0 {
            (d * PGM_DEPTH_SCALE).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Parsed PNM header fields and the offset of the pixel data.
struct PnmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pnm(bytes: &[u8], magic: &str) -> Result<PnmHeader> {
    let fmt = "PNM";
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        // Skip whitespace and comments.
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(fmt, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format(fmt, "non-ASCII header"))?);
    }
    if fields[0] != magic {
        return Err(Error::format(fmt, format!("expected magic {magic}, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(fmt, format!("bad header number '{s}'")));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(fmt, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the data.
    if i >= bytes.len() {
        return Err(Error::format(fmt, "missing pixel data"));
    }
    Ok(PnmHeader {
        width,
        height,
        maxval: maxval as u32,
        data_offset: i + 1,
    })
}

pub fn decode_depth_pgm(bytes: &[u8]) -> Result<DepthImage> {
    let h = parse_pnm(bytes, "P5")?;
    if h.maxval <= 255 {
        return Err(Error::format("PGM", "depth maps must be 16-bit"));
    }
    let data = &bytes[h.data_offset..];
    if data.len() != h.width * h.height * 2 {
        return Err(Error::format(
            "PGM",
            format!("expected {} data bytes, found {}", h.width * h.height * 2, data.len()),
        ));
    }
    let values = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / PGM_DEPTH_SCALE)
        .collect();
    DepthImage::from_vec(h.width, h.height, values)
}

/// 8-bit gray PGM from raw bytes.
pub fn encode_gray_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::format("PGM", "pixel count does not match dimensions"));
    }
    let mut out = pnm_header("P5", width, height, 255);
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Decodes an 8-bit PGM into `(width, height, pixels)`.
pub fn decode_gray_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_pnm(bytes, "P5")?;
    if h.maxval > 255 {
        return Err(Error::format("PGM", "expected an 8-bit image"));
    }
    let data = &bytes[h.data_offset..];
    if data.len() != h.width * h.height {
        return Err(Error::format("PGM", "truncated pixel data"));
    }
    Ok((h.width, h.height, data.to_vec()))
}

/// 8-bit RGB PPM from interleaved bytes.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::format("PPM", "pixel count does not match dimensions"));
    }
    let mut out = pnm_header("P6", width, height, 255);
    out.extend_from_slice(rgb);
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_pnm(bytes, "P6")?;
    let data = &bytes[h.data_offset..];
    if h.maxval > 255 || data.len() != h.width * h.height * 3 {
        return Err(Error::format("PPM", "expected 8-bit RGB data matching the header"));
    }
    Ok((h.width, h.height, data.to_vec()))
}

pub fn encode_mask_pgm(mask: &Mask) -> Vec<u8> {
    let px: Vec<u8> = mask.0.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray_pgm(mask.width(), mask.height(), &px).expect("mask dimensions are consistent")
}

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self { bytes, pos: 0, format }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.format, "unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::format(
                self.format,
                format!("bad magic {:?}", String::from_utf8_lossy(m)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.format, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.format, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.format, "trailing bytes after data"));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("binary", format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// A multi-channel float32 grid as stored in `F32G` files.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Channel-major: `data[(c * height + row) * width + col]`.
    pub data: Vec<f32>,
}

impl RawGrid {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

pub fn encode_grid(grid: &RawGrid) -> Result<Vec<u8>> {
    if grid.data.len() != grid.width * grid.height * grid.channels {
        return Err(Error::format("F32G", "data length does not match header"));
    }
    let mut out = Vec::with_capacity(16 + grid.data.len() * 4);
    out.extend_from_slice(MAGIC_GRID);
    put_u32(&mut out, grid.width)?;
    put_u32(&mut out, grid.height)?;
    put_u32(&mut out, grid.channels)?;
    put_f32s(&mut out, grid.data.iter().copied());
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<RawGrid> {
    let mut r = Reader::new(bytes, "F32G");
    r.magic(MAGIC_GRID)?;
    let (width, height, channels) = (r.u32()?, r.u32()?, r.u32()?);
    let data = r.f32s(width * height * channels)?;
    r.finish()?;
    Ok(RawGrid {
        width,
        height,
        channels,
        data,
    })
}

/// One-channel grid of depths; invalid pixels are stored as 0.
pub fn depth_grid(depth: &DepthImage) -> RawGrid {
    RawGrid {
        width: depth.width(),
        height: depth.height(),
        channels: 1,
        data: depth.values().iter().map(|&d| d as f32).collect(),
    }
}

/// Two-channel grid `(u, v)` of a flow field; invalid pixels are stored as NaN.
pub fn flow_grid(flow: &FlowField) -> RawGrid {
    let (w, h) = flow.dims();
    let mut data = vec![f32::NAN; 2 * w * h];
    for row in 0..h {
        for col in 0..w {
            if let Some([u, v]) = flow.get(col, row) {
                data[row * w + col] = u as f32;
                data[w * h + row * w + col] = v as f32;
            }
        }
    }
    RawGrid {
        width: w,
        height: h,
        channels: 2,
        data,
    }
}

/// One-channel grid of an `f64` grid, e.g. heights above ground.
pub fn scalar_grid(grid: &Grid<f64>) -> RawGrid {
    RawGrid {
        width: grid.width(),
        height: grid.height(),
        channels: 1,
        data: grid.as_slice().iter().map(|&v| v as f32).collect(),
    }
}

fn put_spec(out: &mut Vec<u8>, spec: &NeighborhoodSpec) -> Result<()> {
    for v in [spec.up, spec.down, spec.left, spec.right] {
        put_u32(out, v)?;
    }
    Ok(())
}

fn read_spec(r: &mut Reader<'_>) -> Result<NeighborhoodSpec> {
    Ok(NeighborhoodSpec {
        up: r.u32()?,
        down: r.u32()?,
        left: r.u32()?,
        right: r.u32()?,
    })
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4], pda: &PdaVolume, spec: &NeighborhoodSpec) -> Result<()> {
    if spec.len() != pda.channels() {
        return Err(Error::SizeMismatch {
            context: "neighborhood spec vs volume",
            expected: (pda.height(), pda.width(), spec.len()),
            actual: pda.shape(),
        });
    }
    out.extend_from_slice(magic);
    put_u32(out, pda.height())?;
    put_u32(out, pda.width())?;
    put_u32(out, pda.channels())?;
    put_spec(out, spec)?;
    put_u32(out, pda.support().len())?;
    for &i in pda.support() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    Ok(())
}

/// Layout shared by `PDAV` and `PDAL` files.
struct VolumeHeader {
    height: usize,
    width: usize,
    channels: usize,
    spec: NeighborhoodSpec,
    support: Vec<u32>,
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<VolumeHeader> {
    r.magic(magic)?;
    let (height, width, channels) = (r.u32()?, r.u32()?, r.u32()?);
    let spec = read_spec(r)?;
    if spec.len() != channels {
        return Err(Error::format(r.format, "neighborhood spec does not match channel count"));
    }
    let count = r.u32()?;
    let support = r.u32s(count)?;
    Ok(VolumeHeader {
        height,
        width,
        channels,
        spec,
        support,
    })
}

/// Encodes a sparse association volume.
///
/// Layout: `"PDAV"`, H, W, N, spec (up, down, left, right), support count S,
/// S raster indices, then `S * N` float32 values. Pixels outside the support
/// are all-zero slices.
pub fn encode_pda(pda: &PdaVolume, spec: &NeighborhoodSpec) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(48 + pda.support().len() * 4 + pda.values().len() * 4);
    header(&mut out, MAGIC_PDA, pda, spec)?;
    put_f32s(&mut out, pda.values().iter().map(|&v| v as f32));
    Ok(out)
}

pub fn decode_pda(bytes: &[u8]) -> Result<(PdaVolume, NeighborhoodSpec)> {
    let mut r = Reader::new(bytes, "PDAV");
    let h = read_header(&mut r, MAGIC_PDA)?;
    let values = r.f32s(h.support.len() * h.channels)?;
    r.finish()?;
    let pda = PdaVolume::new(
        h.width,
        h.height,
        h.channels,
        h.support,
        values.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::format("PDAV", e.to_string()))?;
    Ok((pda, h.spec))
}

fn pack_bits(out: &mut Vec<u8>, bits: impl Iterator<Item = bool>) {
    let mut byte = 0u8;
    let mut n = 0;
    for b in bits {
        byte |= (b as u8) << (n % 8);
        n += 1;
        if n % 8 == 0 {
            out.push(byte);
            byte = 0;
        }
    }
    if n % 8 != 0 {
        out.push(byte);
    }
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<f64> {
    (0..n).map(|i| ((bytes[i / 8] >> (i % 8)) & 1) as f64).collect()
}

/// Encodes labels and weights as bitsets.
///
/// Same header as `PDAV` with magic `"PDAL"`, followed by two LSB-first
/// bitsets of `S * N` bits each (labels, then weights), each padded to a byte.
pub fn encode_labels(labels: &Labels, spec: &NeighborhoodSpec) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header(&mut out, MAGIC_LABELS, &labels.labels, spec)?;
    pack_bits(&mut out, labels.labels.values().iter().map(|&v| v != 0.0));
    pack_bits(&mut out, labels.weights.values().iter().map(|&v| v != 0.0));
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<(Labels, NeighborhoodSpec)> {
    let mut r = Reader::new(bytes, "PDAL");
    let h = read_header(&mut r, MAGIC_LABELS)?;
    let n = h.support.len() * h.channels;
    let labels = unpack_bits(r.take(n.div_ceil(8))?, n);
    let weights = unpack_bits(r.take(n.div_ceil(8))?, n);
    r.finish()?;
    let make = |values| {
        PdaVolume::new(h.width, h.height, h.channels, h.support.clone(), values)
            .map_err(|e| Error::format("PDAL", e.to_string()))
    };
    Ok((
        Labels {
            labels: make(labels)?,
            weights: make(weights)?,
        },
        h.spec,
    ))
}

/// Encodes an MER image.
///
/// Layout: `"MER1"`, H, W, N_e as `u32`, N_e float64 thresholds, then
/// `N_e * H * W` float32 depths, channel-major, 0 = invalid.
pub fn encode_mer(mer: &MerImage) -> Result<Vec<u8>> {
    let (w, h) = (mer.width(), mer.height());
    let mut out = Vec::with_capacity(16 + mer.thresholds.len() * (8 + w * h * 4));
    out.extend_from_slice(MAGIC_MER);
    put_u32(&mut out, h)?;
    put_u32(&mut out, w)?;
    put_u32(&mut out, mer.thresholds.len())?;
    for t in &mer.thresholds {
        out.extend_from_slice(&t.to_le_bytes());
    }
    for ch in &mer.channels {
        put_f32s(&mut out, ch.values().iter().map(|&d| d as f32));
    }
    Ok(out)
}

pub fn decode_mer(bytes: &[u8]) -> Result<MerImage> {
    let mut r = Reader::new(bytes, "MER1");
    r.magic(MAGIC_MER)?;
    let (h, w, n) = (r.u32()?, r.u32()?, r.u32()?);
    let thresholds = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let values = r.f32s(w * h)?;
        channels.push(DepthImage::from_vec(w, h, values.into_iter().map(f64::from).collect())?);
    }
    r.finish()?;
    Ok(MerImage {
        thresholds,
        channels,
        width: w,
        height: h,
    })
}

/// Writes JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::format("JSON", e.to_string()))?;
    text.write_all(b"\n").expect("writing to a Vec cannot fail");
    write_file(path, &text)
}
