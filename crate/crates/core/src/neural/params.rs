use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location and shape of one named tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A named flat real vector with a tensor layout. Every mutation bumps the
/// version so that cached forward passes can detect staleness.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    name: String,
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
    version: u64,
}

impl ParameterSet {
    pub fn from_parts(name: impl Into<String>, entries: Vec<ParamEntry>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = entries.iter().map(|e| e.len()).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            entries,
            values,
            version: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rename(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn name_of_index(&self, i: usize) -> &str {
        self.entries
            .iter()
            .find(|e| e.range().contains(&i))
            .map(|e| e.name.as_str())
            .unwrap_or("?")
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        self.values.copy_from_slice(values);
        self.version += 1;
        Ok(())
    }

    /// Mutable access to the raw values; bumps the version.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
}

/// Collects tensor declarations, then materialises a [`ParameterSet`].
#[derive(Debug, Default)]
pub struct ParamBuilder {
    entries: Vec<ParamEntry>,
    inits: Vec<Init>,
    len: usize,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a tensor and returns its flat offset.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.len;
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += entry.len();
        self.entries.push(entry);
        self.inits.push(init);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn build<R: Rng + ?Sized>(self, name: impl Into<String>, rng: &mut R) -> ParameterSet {
        let mut values = vec![0.0; self.len];
        for (e, init) in self.entries.iter().zip(&self.inits) {
            let slot = &mut values[e.range()];
            match *init {
                Init::Zeros => {}
                Init::Const(c) => slot.fill(c),
                Init::Uniform(bound) => {
                    for v in slot.iter_mut() {
                        *v = rng.random_range(-bound..=bound);
                    }
                }
            }
        }
        ParameterSet {
            name: name.into(),
            entries: self.entries,
            values,
            version: 0,
        }
    }
}
