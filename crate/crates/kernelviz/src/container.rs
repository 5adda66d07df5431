//! Binary tensor files.
//!
//! A file holds three parts:
//!
//! ```text
//! TENSOR v1\n
//! {"dtype":"float32","shape":[16,128,128,3],"axes":"THWC","endianness":"little"}\n
//! <product(shape) little-endian IEEE-754 f32 values>
//! ```
//!
//! Axis tags in use: `THWC` for videos, `HWC` for static images and `THWV`
//! for deformation sequences, where `V` is the `(dx, dy)` pair.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use kernelviz_core::{DeformationSequence, StaticFactor, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &str = "TENSOR v1";
pub const AXES_VIDEO: &str = "THWC";
pub const AXES_STATIC: &str = "HWC";
pub const AXES_DEFORM: &str = "THWV";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub axes: String,
    pub endianness: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    pub shape: Vec<usize>,
    pub axes: String,
    pub data: Vec<f32>,
}

impl TensorContainer {
    pub fn new(shape: Vec<usize>, axes: impl Into<String>, data: Vec<f32>) -> Self {
        TensorContainer {
            shape,
            axes: axes.into(),
            data,
        }
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader {
            dtype: "float32".into(),
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            endianness: "little".into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 2 + self.data.len() * 4);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a container; `path` only labels errors.
    pub fn from_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        reader.read_line(&mut line).at(path)?;
        if line.trim_end_matches('\n') != MAGIC {
            return Err(Error::integrity(path, format!("missing '{MAGIC}' magic line")));
        }
        line.clear();
        reader.read_line(&mut line).at(path)?;
        let header: TensorHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::integrity(path, format!("bad header: {e}")))?;
        if header.dtype != "float32" || header.endianness != "little" {
            return Err(Error::integrity(
                path,
                format!("unsupported dtype/endianness {}/{}", header.dtype, header.endianness),
            ));
        }
        if header.axes.chars().count() != header.shape.len() {
            return Err(Error::integrity(
                path,
                format!("axis tag '{}' does not match rank {}", header.axes, header.shape.len()),
            ));
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload).at(path)?;
        let expected = header.shape.iter().product::<usize>() * 4;
        if payload.len() != expected {
            return Err(Error::integrity(
                path,
                format!("payload is {} bytes, shape {:?} needs {expected}", payload.len(), header.shape),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(TensorContainer {
            shape: header.shape,
            axes: header.axes,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).at(path)?;
        f.write_all(&self.to_bytes()).at(path)?;
        f.sync_all().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).at(path)?;
        Self::from_reader(f, path)
    }

    fn expect(&self, axes: &str, rank: usize, path: &Path) -> Result<()> {
        if self.axes != axes || self.shape.len() != rank {
            return Err(Error::integrity(
                path,
                format!("expected a {axes} tensor, found {} {:?}", self.axes, self.shape),
            ));
        }
        Ok(())
    }

    pub fn from_video(v: &VideoTensor) -> Self {
        Self::new(v.shape().to_vec(), AXES_VIDEO, v.data().to_vec())
    }

    pub fn from_static(i: &StaticFactor) -> Self {
        Self::new(i.shape().to_vec(), AXES_STATIC, i.data().to_vec())
    }

    pub fn from_deform(d: &DeformationSequence) -> Self {
        Self::new(d.shape().to_vec(), AXES_DEFORM, d.data().to_vec())
    }

    pub fn into_video(self, path: &Path) -> Result<VideoTensor> {
        self.expect(AXES_VIDEO, 4, path)?;
        let s = &self.shape;
        VideoTensor::new(s[0], s[1], s[2], s[3], self.data).map_err(|e| Error::integrity(path, e.to_string()))
    }

    pub fn into_static(self, path: &Path) -> Result<StaticFactor> {
        self.expect(AXES_STATIC, 3, path)?;
        let s = &self.shape;
        StaticFactor::new(s[0], s[1], s[2], self.data).map_err(|e| Error::integrity(path, e.to_string()))
    }

    pub fn into_deform(self, path: &Path) -> Result<DeformationSequence> {
        self.expect(AXES_DEFORM, 4, path)?;
        if self.shape[3] != 2 {
            return Err(Error::integrity(path, "deformation vectors must have 2 components"));
        }
        let s = &self.shape;
        DeformationSequence::new(s[0], s[1], s[2], self.data).map_err(|e| Error::integrity(path, e.to_string()))
    }
}

pub fn save_video(v: &VideoTensor, path: &Path) -> Result<()> {
    TensorContainer::from_video(v).save(path)
}

pub fn load_video(path: &Path) -> Result<VideoTensor> {
    TensorContainer::load(path)?.into_video(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let t = TensorContainer::new(vec![2, 3], "AB", vec![0.0, -1.5, f32::MIN_POSITIVE, 1e30, -0.0, 7.25]);
        let bytes = t.to_bytes();
        let back = TensorContainer::from_reader(&bytes[..], Path::new("mem")).unwrap();
        assert_eq!(back.shape, t.shape);
        let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&t.data));
    }

    #[test]
    fn header_layout_is_stable() {
        let t = TensorContainer::new(vec![1], "X", vec![1.0]);
        let bytes = t.to_bytes();
        let expected = b"TENSOR v1\n{\"dtype\":\"float32\",\"shape\":[1],\"axes\":\"X\",\"endianness\":\"little\"}\n\x00\x00\x80\x3f";
        assert_eq!(bytes, expected.to_vec());
    }

    #[test]
    fn truncated_payload_names_the_file() {
        let t = TensorContainer::new(vec![4], "X", vec![1.0; 4]);
        let mut bytes = t.to_bytes();
        bytes.pop();
        let err = TensorContainer::from_reader(&bytes[..], Path::new("video.tensor")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("video.tensor") && msg.contains("payload"), "{msg}");
    }

    #[test]
    fn wrong_axes_are_rejected() {
        let t = TensorContainer::new(vec![2, 2, 1], AXES_STATIC, vec![0.5; 4]);
        assert!(t.into_video(Path::new("x")).is_err());
    }
}
