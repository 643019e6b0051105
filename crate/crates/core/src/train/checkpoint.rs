//! Binary checkpoints.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! b"DUNET001"  u32 version
//! epoch
//! model config text        (length-prefixed UTF-8)
//! train config text        (length-prefixed UTF-8, may be empty)
//! entry count, then per entry:
//!     path (length-prefixed), u8 trainable, rank, dims.., value count, f64 values
//! u8 optimizer present; if 1: step, first-moment map, second-moment map
//!     (each map: count, then path + value count + f64 values)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::Tensor;

use super::optim::OptimizerState;
use super::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DUNET001";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub optimizer: Option<OptimizerState>,
    pub epoch: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn map(&mut self, m: &BTreeMap<String, Vec<f64>>) {
        self.u64(m.len() as u64);
        for (k, v) in m {
            self.bytes(k.as_bytes());
            self.floats(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn map(&mut self) -> Result<BTreeMap<String, Vec<f64>>> {
        let n = self.len()?;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            let k = self.string()?;
            m.insert(k, self.floats()?);
        }
        Ok(m)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.u64(ckpt.epoch);
    w.bytes(ckpt.model.config.to_text().as_bytes());
    w.bytes(ckpt.train.as_ref().map(TrainConfig::to_text).unwrap_or_default().as_bytes());
    w.u64(ckpt.model.store.len() as u64);
    for (path, p) in ckpt.model.store.iter() {
        w.bytes(path.as_bytes());
        w.0.push(u8::from(p.trainable));
        w.u64(p.value.shape().len() as u64);
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        w.floats(p.value.data());
    }
    match &ckpt.optimizer {
        None => w.0.push(0),
        Some(o) => {
            w.0.push(1);
            w.u64(o.step);
            w.map(&o.first);
            w.map(&o.second);
        }
    }
    w.0
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let epoch = r.u64()?;
    let config = ModelConfig::from_text(&r.string()?)?;
    let train_text = r.string()?;
    let train = if train_text.is_empty() {
        None
    } else {
        Some(TrainConfig::from_text(&train_text)?)
    };
    // the freshly built registry defines which entries must be present
    let mut model = build_model(&config, 0)?;
    let count = r.len()?;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} entries for this config, found {count}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let path = r.string()?;
        let trainable = r.u8()? == 1;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let data = r.floats()?;
        let slot = model
            .store
            .get_mut(&path)
            .map_err(|_| Error::Checkpoint(format!("unexpected entry `{path}`")))?;
        if slot.value.shape() != shape.as_slice() || slot.trainable != trainable {
            return Err(Error::Checkpoint(format!("entry `{path}` has the wrong shape or kind")));
        }
        slot.value = Tensor::new(shape, data)?;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => Some(OptimizerState {
            step: r.u64()?,
            first: r.map()?,
            second: r.map()?,
        }),
        other => return Err(Error::Checkpoint(format!("bad optimizer tag {other}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        train,
        optimizer,
        epoch,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
