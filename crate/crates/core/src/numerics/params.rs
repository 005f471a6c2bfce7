//! Named parameter tensors and the binary checkpoint container.
//!
//! Layout: magic `ORVS`, `u32` version, then per tensor in name order until
//! end of file: `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f64`
//! values. All integers and floats little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ORVS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Matrix,
    pub grad: Option<Matrix>,
    pub(crate) first_moment: Matrix,
    pub(crate) second_moment: Matrix,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: None,
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        }
    }
}

/// Parameters keyed by name; iteration is in name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name:?}")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    /// Inserts a `rows × cols` tensor drawn from N(0, std²).
    pub fn insert_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::Config(format!("bad init std {std}: {e}")))?;
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn value(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Resets every gradient buffer to zeros of the parameter's shape.
    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            let (r, c) = p.value.shape();
            p.grad = Some(Matrix::zeros(r, c));
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("gradient for unknown parameter {name:?}")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {name:?} of shape {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
        match &mut p.grad {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
        Ok(())
    }

    /// Euclidean norm of all gradient buffers taken together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.as_slice())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in self.params.values_mut().filter_map(|p| p.grad.as_mut()) {
            g.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Values only; two stores are equal when names, shapes and values agree.
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| ka == kb && a.value == b.value)
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, p) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
            for v in p.value.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut reader = CountingReader { inner: &mut r, offset: 0 };
        let mut magic = [0u8; 4];
        reader.fill(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint magic is not ORVS".into()));
        }
        let version = reader.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut store = ParamStore::new();
        while let Some(name_len) = reader.u32_or_eof()? {
            let name_len = name_len as usize;
            let mut name = vec![0u8; name_len];
            reader.fill(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format(format!("non-UTF-8 tensor name at byte {}", reader.offset)))?;
            let rank = reader.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(reader.u64()? as usize);
            }
            let (rows, cols) = match dims.as_slice() {
                [] => (1, 1),
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => {
                    return Err(Error::Format(format!(
                        "tensor {name:?} has unsupported rank {rank}"
                    )))
                }
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(reader.array()?));
            }
            store.insert(name, Matrix::from_vec(rows, cols, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

struct CountingReader<'a, R> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> CountingReader<'_, R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|_| {
            Error::Format(format!("checkpoint truncated at byte {}", self.offset))
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }

    /// `None` on a clean end of input before the first byte.
    fn u32_or_eof(&mut self) -> Result<Option<u32>> {
        let mut b = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut b[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => {
                    return Err(Error::Format(format!(
                        "checkpoint truncated at byte {}",
                        self.offset + got
                    )))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::Format(format!("checkpoint read failed: {e}"))),
            }
        }
        self.offset += 4;
        Ok(Some(u32::from_le_bytes(b)))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}
