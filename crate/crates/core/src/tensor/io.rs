//! Named-tensor container used for checkpoints and exported weights.
//!
//! Layout: a human-readable text header followed by raw little-endian
//! payloads, in header order. The header can be inspected with `head`:
//!
//! ```text
//! arutensors 1
//! meta arch=attresunet
//! tensor enc1.conv1.weight f32 64 1 3 3
//! tensor enc1.conv1.bias f32 64
//! data
//! <binary>
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use super::{DType, Element, Shape};
use crate::error::{AruError, Result};

const MAGIC: &str = "arutensors 1";

pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Shape,
    payload: Vec<u8>,
}

impl NamedTensor {
    pub fn from_values<T: Element>(
        name: impl Into<String>,
        shape: impl Into<Shape>,
        values: &[T],
    ) -> Result<Self> {
        let shape = shape.into();
        if values.len() != shape.numel() {
            return Err(AruError::ShapeMismatch {
                op: "named_tensor",
                detail: format!("{} values for shape {}", values.len(), shape),
            });
        }
        let mut payload = Vec::with_capacity(values.len() * T::DTYPE.byte_width());
        for &v in values {
            v.write_le(&mut payload);
        }
        Ok(NamedTensor {
            name: name.into(),
            dtype: T::DTYPE,
            shape,
            payload,
        })
    }

    /// Decodes the payload, converting between f32 and f64 if needed.
    pub fn values<T: Element>(&self) -> Vec<T> {
        let w = self.dtype.byte_width();
        self.payload
            .chunks_exact(w)
            .map(|c| match self.dtype {
                DType::F32 => T::from_f64(f32::read_le(c) as f64),
                DType::F64 => T::from_f64(f64::read_le(c)),
            })
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }
}

/// In-memory form of a tensor file: free-form metadata plus ordered named
/// tensors.
#[derive(Default)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(AruError::Format(format!(
                    "metadata key/value may not contain whitespace breaks: {k:?}"
                )));
            }
            writeln!(w, "meta {k}={v}")?;
        }
        for t in &self.tensors {
            if t.name.contains(char::is_whitespace) {
                return Err(AruError::Format(format!(
                    "tensor name may not contain whitespace: {:?}",
                    t.name
                )));
            }
            let dims: Vec<String> = t.shape.dims().iter().map(|d| d.to_string()).collect();
            writeln!(w, "tensor {} {} {}", t.name, t.dtype.name(), dims.join(" "))?;
        }
        writeln!(w, "data")?;
        for t in &self.tensors {
            w.write_all(&t.payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut file = TensorFile::new();
        let mut pos = 0usize;
        let mut line_no = 0usize;
        let mut pending: Vec<(String, DType, Shape)> = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let eol = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| AruError::Format("unterminated header".into()))?;
            let line = std::str::from_utf8(&rest[..eol])
                .map_err(|_| AruError::Format("header is not utf-8".into()))?
                .trim_end_matches('\r');
            pos += eol + 1;
            line_no += 1;
            if line_no == 1 {
                if line != MAGIC {
                    return Err(AruError::Format(format!(
                        "bad magic {line:?}, expected {MAGIC:?}"
                    )));
                }
                continue;
            }
            if line == "data" {
                break;
            }
            if let Some(kv) = line.strip_prefix("meta ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    AruError::Format(format!("line {line_no}: meta without '='"))
                })?;
                file.add_meta(k, v);
            } else if let Some(desc) = line.strip_prefix("tensor ") {
                let mut parts = desc.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| AruError::Format(format!("line {line_no}: missing name")))?;
                let dtype = DType::parse(parts.next().ok_or_else(|| {
                    AruError::Format(format!("line {line_no}: missing dtype"))
                })?)?;
                let dims: Vec<usize> = parts
                    .map(|p| {
                        p.parse::<usize>().map_err(|_| {
                            AruError::Format(format!("line {line_no}: bad dim {p:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                pending.push((name.to_string(), dtype, Shape::from(dims)));
            } else {
                return Err(AruError::Format(format!(
                    "line {line_no}: unrecognized header line {line:?}"
                )));
            }
        }
        for (name, dtype, shape) in pending {
            let nbytes = shape.numel() * dtype.byte_width();
            if pos + nbytes > bytes.len() {
                return Err(AruError::Format(format!(
                    "payload truncated reading tensor {name:?}"
                )));
            }
            file.tensors.push(NamedTensor {
                name,
                dtype,
                shape,
                payload: bytes[pos..pos + nbytes].to_vec(),
            });
            pos += nbytes;
        }
        if pos != bytes.len() {
            return Err(AruError::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - pos
            )));
        }
        Ok(file)
    }
}
