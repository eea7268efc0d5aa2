//! Provenance records attached to every artifact the CLI writes.
//!
//! JSON outputs and checkpoints carry the record inline, PNGs carry it in a `tEXt` chunk, and
//! CSV reports get a `provenance.json` next to them.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use dss_core::{Error, Result, Tensor};
use serde_json::{json, Value};

/// Keyword of the PNG text chunk holding the provenance record.
pub const PNG_KEYWORD: &str = "dss-provenance";

/// Record naming the producing command and its full configuration. Contains no timestamps, so
/// repeated runs write identical bytes.
pub fn record(command: &str, config: Value) -> Value {
    json!({
        "tool": "dss",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(e) => Error::io(path, e),
        other => Error::validation(format!("encoding {}: {other}", path.display())),
    }
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8], provenance: &Value) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(PNG_KEYWORD.to_string(), provenance.to_string())
        .map_err(|e| encode_err(path, e))?;
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(data).map_err(|e| encode_err(path, e))?;
    writer.finish().map_err(|e| encode_err(path, e))
}

/// Writes the first channel of `[1, C, H, W]` as 8-bit grayscale.
pub fn save_gray(path: &Path, map: &Tensor<f32>, provenance: &Value) -> Result<()> {
    let (_, _, h, w) = map.dims4()?;
    let data: Vec<u8> = map.data()[..h * w].iter().map(|&v| to_u8(v)).collect();
    write_png(path, w, h, png::ColorType::Grayscale, &data, provenance)
}

/// Writes `[1, 3, H, W]` as 8-bit RGB.
pub fn save_rgb(path: &Path, image: &Tensor<f32>, provenance: &Value) -> Result<()> {
    let (_, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::validation(format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    let n = h * w;
    let data: Vec<u8> = (0..n).flat_map(|i| [d[i], d[n + i], d[2 * n + i]]).map(to_u8).collect();
    write_png(path, w, h, png::ColorType::Rgb, &data, provenance)
}

/// Provenance record embedded in a PNG written by this tool, if any.
pub fn read_png(path: &Path) -> Result<Option<Value>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| match e {
            png::DecodingError::IoError(e) => Error::io(path, e),
            other => Error::validation(format!("decoding {}: {other}", path.display())),
        })?;
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == PNG_KEYWORD)
        .map(|c| c.text.clone());
    text.map(|t| serde_json::from_str(&t).map_err(|e| Error::validation(format!("provenance in {}: {e}", path.display()))))
        .transpose()
}
