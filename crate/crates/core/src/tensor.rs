//! Raw-prediction tensor: the boundary between a (future) learned backbone
//! and this pipeline.
//!
//! File format `RPRT1`: an ASCII magic line `RPRT1`, an ASCII header line
//! `S B C stride`, then `S*S*B*(6+C)` little-endian 32-bit floats in
//! `[row][col][anchor][tx ty tw th ta tc cat_1..cat_C]` order. Any framework
//! can emit it; this crate reads and writes it bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::primitives::{HeadLayout, PrimitiveError, RawPrediction};

pub const TENSOR_MAGIC: &str = "RPRT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic line {got:?}, expected {TENSOR_MAGIC:?}")]
    BadMagic { path: String, got: String },
    #[error("{path}: malformed header {got:?}: {msg}")]
    BadHeader {
        path: String,
        got: String,
        msg: String,
    },
    #[error("{path}: truncated payload: expected {expected} bytes of float data, found {got}")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {expected} bytes of trailing data after the payload")]
    TrailingData { path: String, expected: usize },
    #[error(transparent)]
    Layout(#[from] PrimitiveError),
}

/// An in-memory prediction tensor. Values are held as f64 for numeric work;
/// the file carries f32.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    layout: HeadLayout,
    values: Vec<f64>,
}

impl RawTensor {
    pub fn zeroed(layout: HeadLayout) -> Self {
        let len = layout.num_slots() * layout.values_per_slot();
        Self {
            layout,
            values: vec![0.0; len],
        }
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Start of the value run for a `(row, col, anchor)` slot.
    pub fn slot_base(&self, row: usize, col: usize, anchor: usize) -> usize {
        self.layout.slot(row, col, anchor) * self.layout.values_per_slot()
    }

    pub fn raw(&self, row: usize, col: usize, anchor: usize) -> RawPrediction {
        let base = self.slot_base(row, col, anchor);
        let v = &self.values[base..base + self.layout.values_per_slot()];
        RawPrediction {
            tx: v[0],
            ty: v[1],
            tw: v[2],
            th: v[3],
            ta: v[4],
            tc: v[5],
            category_scores: v[6..].to_vec(),
        }
    }

    pub fn set_raw(&mut self, row: usize, col: usize, anchor: usize, raw: &RawPrediction) {
        assert_eq!(raw.category_scores.len(), self.layout.c);
        let base = self.slot_base(row, col, anchor);
        let v = &mut self.values[base..base + self.layout.values_per_slot()];
        v[0] = raw.tx;
        v[1] = raw.ty;
        v[2] = raw.tw;
        v[3] = raw.th;
        v[4] = raw.ta;
        v[5] = raw.tc;
        v[6..].copy_from_slice(&raw.category_scores);
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let path = path.as_ref();
        let wrap = |source| TensorError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(wrap)?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{TENSOR_MAGIC}").map_err(wrap)?;
        writeln!(
            out,
            "{} {} {} {}",
            self.layout.s, self.layout.b, self.layout.c, self.layout.stride
        )
        .map_err(wrap)?;
        for &v in &self.values {
            out.write_all(&(v as f32).to_le_bytes()).map_err(wrap)?;
        }
        out.flush().map_err(wrap)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let wrap = |source| TensorError::Io {
            path: display.clone(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(wrap)?
            .read_to_end(&mut bytes)
            .map_err(wrap)?;

        let take_line = |from: usize| -> Option<(String, usize)> {
            let rest = &bytes[from..];
            let nl = rest.iter().position(|&b| b == b'\n')?;
            Some((
                String::from_utf8_lossy(&rest[..nl]).into_owned(),
                from + nl + 1,
            ))
        };
        let (magic, header_at) = take_line(0).ok_or_else(|| TensorError::BadMagic {
            path: display.clone(),
            got: String::from_utf8_lossy(&bytes).into_owned(),
        })?;
        if magic != TENSOR_MAGIC {
            return Err(TensorError::BadMagic {
                path: display,
                got: magic,
            });
        }
        let (header, payload_at) = take_line(header_at).ok_or_else(|| TensorError::BadHeader {
            path: display.clone(),
            got: String::new(),
            msg: "missing header line".into(),
        })?;
        let bad_header = |msg: String| TensorError::BadHeader {
            path: display.clone(),
            got: header.clone(),
            msg,
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad_header(format!(
                "expected 4 fields `S B C stride`, got {}",
                fields.len()
            )));
        }
        let s: usize = fields[0].parse().map_err(|e| bad_header(format!("S: {e}")))?;
        let b: usize = fields[1].parse().map_err(|e| bad_header(format!("B: {e}")))?;
        let c: usize = fields[2].parse().map_err(|e| bad_header(format!("C: {e}")))?;
        let stride: f64 = fields[3]
            .parse()
            .map_err(|e| bad_header(format!("stride: {e}")))?;
        let layout = HeadLayout::new(s, b, c, stride)?;

        let expected = s
            .checked_mul(s)
            .and_then(|n| n.checked_mul(b))
            .and_then(|n| n.checked_mul(layout.values_per_slot()))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| TensorError::BadHeader {
                path: display.clone(),
                got: header.clone(),
                msg: "layout size overflows".into(),
            })?;
        let payload = &bytes[payload_at..];
        if payload.len() < expected {
            return Err(TensorError::Truncated {
                path: display,
                expected,
                got: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(TensorError::TrailingData {
                path: display,
                expected: payload.len() - expected,
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64)
            .collect();
        Ok(Self { layout, values })
    }
}
