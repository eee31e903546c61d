//! Binary checkpoints of a [`LearnerState`].
//!
//! Every integer is a little-endian `u64` unless noted; every real is a
//! little-endian IEEE-754 `f64`.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "ICRLCKPT"
//!      8     4  format version (u32) = 1
//!     12     4  endianness marker (u32) 0x01020304, stored as 04 03 02 01
//!     16     8  total file length in bytes, checksum included
//!     24        manifest:
//!                 input_dim, hidden_count, hidden_count x width,
//!                 feature_dim, num_classes t, memory_present (0|1),
//!                 budget K, herding_mode (0 without / 1 with replacement),
//!                 step_index, seed,
//!                 t x exemplar count (only when memory_present = 1)
//!               registry: t x (label byte length, UTF-8 bytes)
//!               parameters: per dense layer, weights (row-major
//!                 outputs x inputs) then biases; then t x feature_dim
//!                 head weights
//!               exemplars (only when memory_present = 1): per class,
//!                 count x sample index, then count x input_dim values
//!  len-8     8  FNV-1a 64-bit hash of bytes [0, len-8)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::exemplar::{ExemplarList, ExemplarMemory, HerdingMode};
use crate::net::{Layer, ModelParams, NetSpec};
use crate::trainer::{ClassRegistry, LearnerState};

pub const MAGIC: &[u8; 8] = b"ICRLCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const ENDIAN_MARKER: u32 = 0x0102_0304;
const HEADER_LEN: usize = 24;
const CHECKSUM_LEN: usize = 8;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serializes the state. The output is a pure function of the state.
pub fn to_bytes(state: &LearnerState) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.buf.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
    w.u64(0); // total length, patched below

    let spec = &state.params.spec;
    let t = state.params.num_classes();
    w.usize(spec.input_dim);
    w.usize(spec.hidden.len());
    spec.hidden.iter().for_each(|&h| w.usize(h));
    w.usize(spec.feature_dim);
    w.usize(t);
    w.u64(state.memory.is_some() as u64);
    w.usize(state.memory.as_ref().map_or(0, ExemplarMemory::budget));
    w.u64(match state.herding {
        HerdingMode::WithoutReplacement => 0,
        HerdingMode::WithReplacement => 1,
    });
    w.u64(state.step_index);
    w.u64(state.seed);
    if let Some(mem) = &state.memory {
        mem.lists().iter().for_each(|l| w.usize(l.len()));
    }

    for label in state.registry.labels() {
        w.usize(label.len());
        w.buf.extend_from_slice(label.as_bytes());
    }

    for layer in &state.params.layers {
        w.f64s(&layer.weights);
        w.f64s(&layer.bias);
    }
    for head in &state.params.class_weights {
        w.f64s(head);
    }

    if let Some(mem) = &state.memory {
        for list in mem.lists() {
            list.indices.iter().for_each(|&i| w.usize(i));
            for item in &list.items {
                w.f64s(item);
            }
        }
    }

    let total = (w.buf.len() + CHECKSUM_LEN) as u64;
    w.buf[16..24].copy_from_slice(&total.to_le_bytes());
    let sum = fnv1a64(&w.buf);
    w.u64(sum);
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Invariant(format!("section overruns the payload at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count or dimension; bounded by what could still fit in the payload.
    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > self.bytes.len() as u64 {
            return Err(Error::Invariant(format!("{what} = {v} exceeds the file size")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Invariant(format!("{what} too large")))?)?;
        let vs: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("{what} contains a non-finite value")));
        }
        Ok(vs)
    }
}

/// Parses and validates a checkpoint image.
pub fn from_bytes(bytes: &[u8]) -> Result<LearnerState> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let marker = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if marker != ENDIAN_MARKER {
        return Err(Error::Invariant(format!("endianness marker {marker:#010x}")));
    }
    let total = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated {
            expected: total,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > total {
        return Err(Error::Invariant(format!(
            "{} trailing bytes after the declared length",
            bytes.len() as u64 - total
        )));
    }
    if total < (HEADER_LEN + CHECKSUM_LEN) as u64 {
        return Err(Error::Invariant("declared length shorter than the header".into()));
    }
    let body_end = bytes.len() - CHECKSUM_LEN;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
    if fnv1a64(&bytes[..body_end]) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: HEADER_LEN,
    };
    let input_dim = r.count("input_dim")?;
    let hidden_count = r.count("hidden layer count")?;
    let hidden = (0..hidden_count)
        .map(|_| r.count("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let feature_dim = r.count("feature_dim")?;
    let spec = NetSpec::new(input_dim, hidden, feature_dim)
        .map_err(|e| Error::Invariant(format!("network shape: {e}")))?;
    let t = r.count("class count")?;
    let memory_present = match r.u64()? {
        0 => false,
        1 => true,
        v => return Err(Error::Invariant(format!("memory flag {v}"))),
    };
    let budget = r.count("budget")?;
    let herding = match r.u64()? {
        0 => HerdingMode::WithoutReplacement,
        1 => HerdingMode::WithReplacement,
        v => return Err(Error::Invariant(format!("herding mode {v}"))),
    };
    let step_index = r.u64()?;
    let seed = r.u64()?;
    let counts = if memory_present {
        (0..t).map(|_| r.count("exemplar count")).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        let len = r.count("label length")?;
        let raw = r.take(len)?;
        let label = std::str::from_utf8(raw)
            .map_err(|_| Error::Invariant("label is not UTF-8".into()))?
            .to_string();
        labels.push(label);
    }
    let registry = ClassRegistry::from_labels(labels)
        .map_err(|_| Error::Invariant("duplicate class label".into()))?;

    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(inputs, outputs)| {
            Ok(Layer {
                inputs,
                outputs,
                weights: r.f64s(inputs * outputs, "layer weights")?,
                bias: r.f64s(outputs, "layer bias")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let class_weights = (0..t)
        .map(|_| r.f64s(feature_dim, "head weights"))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams {
        spec,
        layers,
        class_weights,
    };

    let memory = if memory_present {
        let total: usize = counts.iter().sum();
        if total > budget {
            return Err(Error::Invariant(format!(
                "{total} stored exemplars exceed the budget K={budget}"
            )));
        }
        let mut mem = ExemplarMemory::new(budget);
        for (class, &count) in counts.iter().enumerate() {
            let indices = (0..count)
                .map(|_| r.count("exemplar index"))
                .collect::<Result<Vec<_>>>()?;
            let items = (0..count)
                .map(|_| r.f64s(input_dim, "exemplar"))
                .collect::<Result<Vec<_>>>()?;
            if herding == HerdingMode::WithoutReplacement {
                let mut sorted = indices.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Invariant(format!("duplicate exemplar in class {class}")));
                }
            }
            mem.push(ExemplarList {
                class_id: class,
                indices,
                items,
            })
            .map_err(|e| Error::Invariant(e.to_string()))?;
        }
        Some(mem)
    } else {
        None
    };

    if r.pos != body_end {
        return Err(Error::Invariant(format!(
            "{} unparsed bytes before the checksum",
            body_end - r.pos
        )));
    }

    Ok(LearnerState {
        params,
        memory,
        registry,
        step_index,
        seed,
        herding,
    })
}

pub fn save_checkpoint(state: &LearnerState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LearnerState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
