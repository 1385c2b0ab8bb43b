//! Binary container for channel data and images.
//!
//! A file is one line of compact JSON, a `\n`, then the payload as raw
//! little-endian `f32` values in C order of `shape`:
//!
//! ```text
//! {"magic":"sos-container","version":1,"kind":"rf_channel_data","dtype":"f32le","shape":[2,128,3540],"meta":{...}}
//! <payload>
//! ```
//!
//! | kind              | shape                          | meta                          |
//! |-------------------|--------------------------------|-------------------------------|
//! | `rf_channel_data` | `[n_tx, n_elements, n_samples]` | [`RfMeta`]                    |
//! | `rf_image`        | `[n_x, n_z]`                   | [`ImageMeta`], `beamform_sos` |
//! | `bmode`           | `[n_x, n_z]`                   | [`ImageMeta`], `dynamic_range` |

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sosest::{BModeImage, ImageGrid, ProbeGeometry, RfChannelData, RfImage, TxEvent};

use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "sos-container";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    RfChannelData,
    RfImage,
    Bmode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub magic: String,
    pub version: u32,
    pub kind: Kind,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfMeta {
    pub sampling_frequency: f64,
    pub t0: f64,
    pub probe: ProbeGeometry,
    pub tx_events: Vec<TxEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMeta {
    pub grid: ImageGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beamform_sos: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range: Option<f64>,
}

/// Header line plus payload.
pub fn encode(kind: Kind, shape: &[usize], meta: serde_json::Value, data: &[f32]) -> Vec<u8> {
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        kind,
        dtype: DTYPE.into(),
        shape: shape.to_vec(),
        meta,
    };
    let mut out = serde_json::to_vec(&header).expect("header serialises");
    out.push(b'\n');
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits a container into its header and payload; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> CliResult<(Header, Vec<f32>)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::format(path, "missing header line"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CliError::format(path, format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(CliError::format(
            path,
            format!("not a container (magic {:?})", header.magic),
        ));
    }
    if header.version != VERSION {
        return Err(CliError::format(
            path,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.dtype != DTYPE {
        return Err(CliError::format(
            path,
            format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    let payload = &bytes[newline + 1..];
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CliError::format(path, "shape overflows"))?;
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(CliError::format(
            path,
            format!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                count * 4
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path, kind: Kind) -> CliResult<(Header, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (header, data) = decode(&bytes, path)?;
    if header.kind != kind {
        return Err(CliError::format(
            path,
            format!("expected a {kind:?} container, found {:?}", header.kind),
        ));
    }
    Ok((header, data))
}

fn meta<T: serde::de::DeserializeOwned>(header: &Header, path: &Path) -> CliResult<T> {
    serde_json::from_value(header.meta.clone())
        .map_err(|e| CliError::format(path, format!("bad metadata: {e}")))
}

fn rank(header: &Header, path: &Path, n: usize) -> CliResult<()> {
    if header.shape.len() != n {
        return Err(CliError::format(
            path,
            format!("expected {n} dimensions, found {:?}", header.shape),
        ));
    }
    Ok(())
}

pub fn rf_bytes(rf: &RfChannelData) -> Vec<u8> {
    let meta = RfMeta {
        sampling_frequency: rf.sampling_frequency(),
        t0: rf.t0(),
        probe: *rf.probe(),
        tx_events: rf.tx_events().to_vec(),
    };
    let samples = rf.samples();
    let data: Vec<f32> = samples.iter().copied().collect();
    encode(
        Kind::RfChannelData,
        samples.shape(),
        serde_json::to_value(meta).expect("meta serialises"),
        &data,
    )
}

pub fn write_rf(path: &Path, rf: &RfChannelData) -> CliResult<()> {
    write_bytes(path, &rf_bytes(rf))
}

pub fn read_rf(path: &Path) -> CliResult<RfChannelData> {
    let (header, data) = read(path, Kind::RfChannelData)?;
    rank(&header, path, 3)?;
    let m: RfMeta = meta(&header, path)?;
    let shape = (header.shape[0], header.shape[1], header.shape[2]);
    let samples = Array3::from_shape_vec(shape, data).expect("length checked");
    Ok(RfChannelData::new(
        samples,
        m.sampling_frequency,
        m.t0,
        m.tx_events,
        m.probe,
    )?)
}

fn image_bytes(kind: Kind, values: &Array2<f32>, meta: ImageMeta) -> Vec<u8> {
    let data: Vec<f32> = values.iter().copied().collect();
    encode(
        kind,
        values.shape(),
        serde_json::to_value(meta).expect("meta serialises"),
        &data,
    )
}

pub fn write_rf_image(path: &Path, img: &RfImage) -> CliResult<()> {
    let meta = ImageMeta {
        grid: img.grid,
        beamform_sos: Some(img.beamform_sos),
        tx_index: Some(img.tx_index),
        dynamic_range: None,
    };
    write_bytes(path, &image_bytes(Kind::RfImage, &img.values, meta))
}

fn read_image(path: &Path, kind: Kind) -> CliResult<(ImageMeta, Array2<f32>)> {
    let (header, data) = read(path, kind)?;
    rank(&header, path, 2)?;
    let m: ImageMeta = meta(&header, path)?;
    let values =
        Array2::from_shape_vec((header.shape[0], header.shape[1]), data).expect("length checked");
    Ok((m, values))
}

pub fn read_rf_image(path: &Path) -> CliResult<RfImage> {
    let (m, values) = read_image(path, Kind::RfImage)?;
    let sos = m
        .beamform_sos
        .ok_or_else(|| CliError::format(path, "rf image without beamform_sos"))?;
    Ok(RfImage::new(m.grid, values, sos, m.tx_index.unwrap_or(0))?)
}

pub fn write_bmode(path: &Path, img: &BModeImage) -> CliResult<()> {
    let meta = ImageMeta {
        grid: img.grid,
        beamform_sos: None,
        tx_index: None,
        dynamic_range: Some(img.dynamic_range),
    };
    write_bytes(path, &image_bytes(Kind::Bmode, &img.values, meta))
}

pub fn read_bmode(path: &Path) -> CliResult<BModeImage> {
    let (m, values) = read_image(path, Kind::Bmode)?;
    let dr = m
        .dynamic_range
        .ok_or_else(|| CliError::format(path, "b-mode image without dynamic_range"))?;
    Ok(BModeImage::new(m.grid, values, dr)?)
}

/// Path of the JSON sidecar written next to `path`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

pub(crate) fn write_text(path: &Path, text: &[u8]) -> CliResult<()> {
    write_bytes(path, text)
}
