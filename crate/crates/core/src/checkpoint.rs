//! Binary checkpoint container.
//!
//! All integers are little-endian `u64` unless noted.
//!
//! ```text
//! magic      8 bytes  "ATCNCKPT"
//! version    u32
//! features, seed
//! config     length + UTF-8 `key = value` text
//! stats      u8 flag (0 none, 1 per-feature, 2 global), then count, mins, maxs as f64
//! tensors    count, then per tensor: name length + UTF-8, ndim, dims, f64 values
//! ```
//!
//! Loading rebuilds the model from the stored config and overwrites every
//! tensor by name, so a stale or foreign file fails loudly instead of
//! loading a partial model.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::numerics::Tensor;
use crate::params::ParamTree;

pub const MAGIC: [u8; 8] = *b"ATCNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Forecaster,
    pub stats: Option<NormalizationStats>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_all(&(v as u64).to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len())?;
        Ok(self.0.write_all(s.as_bytes())?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
        Ok(b)
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| bad("length overflow"))
    }
    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(bad(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1 << 24)?;
        let mut b = vec![0; n];
        self.0.read_exact(&mut b).map_err(|_| bad("truncated string"))?;
        String::from_utf8(b).map_err(|_| bad("string is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Forecaster, stats: Option<NormalizationStats>) -> Self {
        Self { config, model, stats }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(&MAGIC)?;
        w.0.write_all(&VERSION.to_le_bytes())?;
        w.u64(self.model.features)?;
        w.0.write_all(&self.model.seed.to_le_bytes())?;
        let mut config = self.config.clone();
        config.model = self.model.config.clone();
        w.str(&config.to_text())?;
        match &self.stats {
            None => w.0.write_all(&[0])?,
            Some(s) => {
                w.0.write_all(&[if s.global { 2 } else { 1 }])?;
                w.u64(s.min.len())?;
                w.f64s(&s.min)?;
                w.f64s(&s.max)?;
            }
        }
        let named = self.model.params.named_tensors();
        w.u64(named.len())?;
        for (name, t) in named {
            w.str(&name)?;
            w.u64(t.ndim())?;
            for &d in t.shape() {
                w.u64(d)?;
            }
            w.f64s(t.data())?;
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader(input);
        if r.bytes::<8>()? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(r.bytes()?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let features = r.u64()?;
        let seed = u64::from_le_bytes(r.bytes()?);
        let text = r.str()?;
        let config = RunConfig::parse(&text).map_err(|e| bad(format!("embedded config: {e}")))?;
        let stats = match r.bytes::<1>()?[0] {
            0 => None,
            flag @ (1 | 2) => {
                let n = r.len(1 << 24)?;
                Some(NormalizationStats {
                    min: r.f64s(n)?,
                    max: r.f64s(n)?,
                    global: flag == 2,
                })
            }
            other => return Err(bad(format!("bad stats flag {other}"))),
        };
        let count = r.len(1 << 16)?;
        let mut stored = HashMap::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.len(8)?;
            let shape = (0..ndim).map(|_| r.len(1 << 32)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n > 1 << 32 {
                return Err(bad(format!("tensor {name} is implausibly large")));
            }
            let data = r.f64s(n)?;
            stored.insert(name, Tensor::new(shape, data)?);
        }

        let mut model = Forecaster::new(config.model.clone(), features, seed)?;
        let names: Vec<String> = model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != stored.len() {
            return Err(bad(format!("model has {} tensors, file has {}", names.len(), stored.len())));
        }
        for (name, slot) in names.iter().zip(model.params.tensors_mut()) {
            let t = stored.remove(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(bad(format!("tensor {name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Ok(Self { config, model, stats })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}
