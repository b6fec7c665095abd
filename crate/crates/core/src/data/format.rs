//! Traffic tensor files.
//!
//! ```text
//! "MCTD" | version: u32 | T: u32 | n: u32 | c: u32 (= 3)
//! interval_minutes: u16 | start_slot: u16 | start_dow: u8
//! payload: f64 × T·n·c, row-major [T, n, c]
//! id_count: u32 | ids joined by '\n' (utf-8, to end of file)
//! ```

use std::fs;
use std::path::Path;

use crate::codec::Reader;
use crate::embeddings::tod_slots_for;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCTD";
pub const VERSION: u32 = 1;
pub const CHANNELS: usize = 3;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["flow", "speed", "occupancy"];
pub const FLOW: usize = 0;
pub const SPEED: usize = 1;
pub const OCCUPANCY: usize = 2;
/// Shortest series that still holds one input/target window pair.
pub const MIN_STEPS: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficTensorFile {
    /// `[T, n, 3]`: flow, speed, occupancy.
    pub raw: Tensor,
    pub interval_minutes: u16,
    /// Time-of-day slot of step 0.
    pub start_slot: u16,
    /// Day of week of step 0, Monday = 0.
    pub start_dow: u8,
    pub sensor_ids: Vec<String>,
}

impl TrafficTensorFile {
    pub fn steps(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn tod_slots(&self) -> Result<usize> {
        tod_slots_for(self.interval_minutes as usize)
    }

    /// Reorders the node axis so that position `i` holds node `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes();
        crate::tensor::check_permutation(perm, n)?;
        let t = self.steps();
        let src = self.raw.data();
        let mut raw = Vec::with_capacity(src.len());
        for k in 0..t {
            for &v in perm {
                raw.extend_from_slice(&src[(k * n + v) * CHANNELS..(k * n + v + 1) * CHANNELS]);
            }
        }
        let sensor_ids = if self.sensor_ids.is_empty() {
            Vec::new()
        } else {
            perm.iter().map(|&v| self.sensor_ids[v].clone()).collect()
        };
        Ok(TrafficTensorFile {
            raw: Tensor::new([t, n, CHANNELS], raw)?,
            sensor_ids,
            ..self.clone()
        })
    }

    /// Checks shape, metadata and per-channel bounds.
    pub fn validate(&self) -> Result<()> {
        let shape = self.raw.shape();
        let [t, n, c] = shape[..] else {
            return Err(Error::dim("traffic file", format!("expected [T, n, 3], got {shape:?}")));
        };
        if c != CHANNELS {
            return Err(Error::dim("traffic file", format!("expected 3 channels, got {c}")));
        }
        if n == 0 {
            return Err(Error::Config("traffic file has no sensors".into()));
        }
        if t < MIN_STEPS {
            return Err(Error::Config(format!(
                "series of {t} steps is shorter than one {MIN_STEPS}-step window"
            )));
        }
        let slots = self.tod_slots()?;
        if self.start_slot as usize >= slots {
            return Err(Error::Config(format!(
                "start slot {} outside 0..{slots}",
                self.start_slot
            )));
        }
        if self.start_dow >= 7 {
            return Err(Error::Config(format!("start day {} outside 0..7", self.start_dow)));
        }
        if !self.sensor_ids.is_empty() && self.sensor_ids.len() != n {
            return Err(Error::Config(format!(
                "{} sensor ids for {n} sensors",
                self.sensor_ids.len()
            )));
        }
        for (i, &v) in self.raw.data().iter().enumerate() {
            let ch = i % c;
            let (step, node) = (i / (n * c), (i / c) % n);
            let detail = if !v.is_finite() {
                Some(format!("non-finite value {v}"))
            } else if v < 0.0 {
                Some(format!("negative value {v}"))
            } else if ch == OCCUPANCY && v > 1.0 {
                Some(format!("occupancy {v} above 1"))
            } else {
                None
            };
            if let Some(detail) = detail {
                return Err(Error::Data {
                    channel: CHANNEL_NAMES[ch],
                    step,
                    node,
                    detail,
                });
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (t, n) = (self.steps(), self.nodes());
        let mut out = Vec::with_capacity(31 + self.raw.numel() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [t, n, CHANNELS] {
            let v = u32::try_from(v).map_err(|_| Error::Config(format!("extent {v} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.interval_minutes.to_le_bytes());
        out.extend_from_slice(&self.start_slot.to_le_bytes());
        out.push(self.start_dow);
        for v in self.raw.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(bad) = self.sensor_ids.iter().find(|s| s.contains('\n')) {
            return Err(Error::Config(format!("sensor id {bad:?} contains a newline")));
        }
        out.extend_from_slice(&(self.sensor_ids.len() as u32).to_le_bytes());
        out.extend_from_slice(self.sensor_ids.join("\n").as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "not an MCTD traffic file".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let t = r.u32("step count")? as usize;
        let n = r.u32("node count")? as usize;
        let at = r.pos;
        let c = r.u32("channel count")? as usize;
        if c != CHANNELS {
            return Err(Error::Format {
                offset: at,
                detail: format!("expected 3 channels, found {c}"),
            });
        }
        let interval_minutes = r.u16("interval")?;
        let start_slot = r.u16("start slot")?;
        let start_dow = r.u8("start day")?;
        let count = t.saturating_mul(n).saturating_mul(c);
        let payload = r.take(count.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let id_count = r.u32("sensor id count")? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.remaining()).map_err(|_| Error::Format {
            offset: at,
            detail: "sensor ids are not utf-8".into(),
        })?;
        let sensor_ids: Vec<String> = if id_count == 0 && text.is_empty() {
            Vec::new()
        } else {
            text.split('\n').map(str::to_string).collect()
        };
        if sensor_ids.len() != id_count {
            return Err(Error::Format {
                offset: at,
                detail: format!("header announces {id_count} sensor ids, found {}", sensor_ids.len()),
            });
        }
        let file = TrafficTensorFile {
            raw: Tensor::new([t, n, c], data)?,
            interval_minutes,
            start_slot,
            start_dow,
            sensor_ids,
        };
        file.validate()?;
        Ok(file)
    }
}

pub fn save_dataset(file: &TrafficTensorFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, file.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrafficTensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TrafficTensorFile::decode(&bytes)
}
