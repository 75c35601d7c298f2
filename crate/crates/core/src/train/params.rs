use std::io::{Read, Write};
use std::path::Path;

use crate::error::{mismatch, Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"EPN1";
const CHECKPOINT_VERSION: u32 = 1;

/// A named row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named arrays in insertion order; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    arrays: Vec<ParamArray>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(mismatch("parameter set", format!("`{name}` has shape {shape:?} but {} values", values.len())));
        }
        self.arrays.push(ParamArray { name, shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    pub fn arrays(&self) -> &[ParamArray] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [ParamArray] {
        &mut self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.values.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.arrays.iter().flat_map(|a| a.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(mismatch("parameter set", format!("{} values for {}", flat.len(), self.num_values())));
        }
        let mut off = 0;
        for a in &mut self.arrays {
            let n = a.values.len();
            a.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Elementwise `self += other`; layouts must match.
    pub fn add_assign(&mut self, other: &ParameterSet) -> Result<()> {
        if !self.same_layout(other) {
            return Err(mismatch("parameter set", "layouts differ"));
        }
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.arrays {
            a.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Writes the `EPN1` checkpoint format (all integers little-endian u32,
    /// values little-endian f64).
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let u32_of = |n: usize| -> Result<[u8; 4]> {
            u32::try_from(n)
                .map(u32::to_le_bytes)
                .map_err(|_| Error::InvalidArgument(format!("{n} does not fit in u32")))
        };
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&u32_of(self.arrays.len())?)?;
        for a in &self.arrays {
            w.write_all(&u32_of(a.name.len())?)?;
            w.write_all(a.name.as_bytes())?;
            w.write_all(&u32_of(a.shape.len())?)?;
            for &d in &a.shape {
                w.write_all(&u32_of(d)?)?;
            }
            for v in &a.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not an EPN1 checkpoint".into()));
        }
        let read_u32 = |r: &mut R| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)?;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Parse("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)?;
            let shape = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            set.insert(name, shape, values)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(std::fs::read(path)?.as_slice())
    }
}
