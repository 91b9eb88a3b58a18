//! Binary field container, format "3DTC-GRD v1".
//!
//! Layout, all little-endian: magic `3DTC` (4 ASCII bytes), u16 version=1,
//! u16 flags=0, u32 C, H, W; then C channel-name entries (u8 length + ASCII);
//! f64 lat_center, lon_center, dlat, dlon; i64 valid_time; i32 lead_hours;
//! payload C·H·W f32 values, channel-major then row-major (row 0 = north).

use super::{ChannelId, FieldStack, GeoWindow, GridError, Result};
use ndarray::Array3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"3DTC";
const VERSION: u16 = 1;

/// Write a stack to `path`, creating parent directories as needed.
pub fn write_grd(path: &Path, stack: &FieldStack) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    let (c, h, wd) = stack.data.dim();
    for dim in [c, h, wd] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for ch in &stack.channels {
        let name = ch.name().as_bytes();
        w.write_all(&[name.len() as u8])?;
        w.write_all(name)?;
    }
    for v in [
        stack.geo.lat_center,
        stack.geo.lon_center,
        stack.geo.dlat,
        stack.geo.dlon,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&stack.valid_time.to_le_bytes())?;
    w.write_all(&stack.lead_hours.to_le_bytes())?;

    let mut buf = Vec::with_capacity(c * h * wd * 4);
    for v in stack.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact_buf<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| GridError::Format(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    Ok(u16::from_le_bytes(
        read_exact_buf(r, 2, what)?.try_into().unwrap(),
    ))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(
        read_exact_buf(r, 4, what)?.try_into().unwrap(),
    ))
}

fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(
        read_exact_buf(r, 8, what)?.try_into().unwrap(),
    ))
}

/// Read a stack from `path`, validating structure and finiteness.
pub fn read_grd(path: &Path) -> Result<FieldStack> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_buf(&mut r, 4, "magic")?;
    if magic != MAGIC {
        return Err(GridError::Format(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u16(&mut r, "version")?;
    if version != VERSION {
        return Err(GridError::Format(format!("unsupported version {version}")));
    }
    let flags = read_u16(&mut r, "flags")?;
    if flags != 0 {
        return Err(GridError::Format(format!("unsupported flags {flags:#x}")));
    }
    let c = read_u32(&mut r, "channel count")? as usize;
    let h = read_u32(&mut r, "height")? as usize;
    let w = read_u32(&mut r, "width")? as usize;
    if c == 0 || h == 0 || w == 0 || c > 1024 || h > 65_536 || w > 65_536 {
        return Err(GridError::Format(format!("implausible dims {c}x{h}x{w}")));
    }
    let mut channels = Vec::with_capacity(c);
    for _ in 0..c {
        let len = read_exact_buf(&mut r, 1, "channel name length")?[0] as usize;
        let raw = read_exact_buf(&mut r, len, "channel name")?;
        let name = std::str::from_utf8(&raw)
            .map_err(|_| GridError::Format("non-ASCII channel name".into()))?;
        channels.push(ChannelId::from_name(name)?);
    }
    let lat_center = read_f64(&mut r, "lat_center")?;
    let lon_center = read_f64(&mut r, "lon_center")?;
    let dlat = read_f64(&mut r, "dlat")?;
    let dlon = read_f64(&mut r, "dlon")?;
    let valid_time = i64::from_le_bytes(
        read_exact_buf(&mut r, 8, "valid_time")?.try_into().unwrap(),
    );
    let lead_hours = i32::from_le_bytes(
        read_exact_buf(&mut r, 4, "lead_hours")?.try_into().unwrap(),
    );

    let n = c * h * w;
    let payload = read_exact_buf(&mut r, n * 4, "payload")?;
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(GridError::Format("trailing bytes after payload".into()));
    }
    let mut values = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let data = Array3::from_shape_vec((c, h, w), values)
        .map_err(|e| GridError::Format(format!("payload reshape: {e}")))?;
    let geo = GeoWindow {
        lat_center,
        lon_center,
        dlat,
        dlon,
        h,
        w,
    };
    FieldStack::new(channels, data, geo, valid_time, lead_hours)
}
