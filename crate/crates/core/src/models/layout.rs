use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
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

/// Ordered, contiguous blocks covering a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParameterLayout {
    blocks: Vec<ParamBlock>,
}

impl ParameterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> &ParamBlock {
        let offset = self.len();
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset,
            shape,
        });
        self.blocks.last().expect("just pushed")
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unflatten(&self, values: &[f64]) -> Result<Vec<(String, ArrayD<f64>)>> {
        if values.len() != self.len() {
            return Err(Error::shape("unflatten", self.len(), values.len()));
        }
        Ok(self
            .blocks
            .iter()
            .map(|b| {
                let arr = ArrayD::from_shape_vec(IxDyn(&b.shape), values[b.range()].to_vec())
                    .expect("block shape matches its length");
                (b.name.clone(), arr)
            })
            .collect())
    }

    pub fn flatten(&self, tensors: &[(String, ArrayD<f64>)]) -> Result<Vec<f64>> {
        if tensors.len() != self.blocks.len() {
            return Err(Error::shape("flatten block count", self.blocks.len(), tensors.len()));
        }
        let mut out = Vec::with_capacity(self.len());
        for (b, (name, arr)) in self.blocks.iter().zip(tensors) {
            if &b.name != name || arr.shape() != b.shape.as_slice() {
                return Err(Error::shape(
                    "flatten block",
                    format!("{}{:?}", b.name, b.shape),
                    format!("{}{:?}", name, arr.shape()),
                ));
            }
            out.extend(arr.iter());
        }
        Ok(out)
    }
}

/// A flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: ParameterLayout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: ParameterLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape("parameter vector", layout.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }
}
