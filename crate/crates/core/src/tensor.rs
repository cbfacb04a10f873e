use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`. Values are immutable after construction;
/// clones share the underlying buffer.
///
/// A scalar is represented by an empty shape and a single element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, rejecting non-finite entries and shape/data length
    /// disagreements.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel = numel_of(&shape);
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor_new",
                shape,
                detail: format!("shape wants {numel} elements, data has {}", data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "tensor_new",
                index,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Constructor for values already scanned for finiteness by the caller.
    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = numel_of(&shape);
        Self {
            shape,
            data: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let numel = numel_of(&shape);
        Self::new(shape, vec![value; numel])
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::InvalidShape {
                    op: "tensor_from_rows",
                    shape: vec![n, row.len()],
                    detail: format!("expected every row to have {d} columns"),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![n, d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Takes the element buffer, cloning only if it is shared.
    pub fn into_data(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Scalar payload; panics if the tensor is not rank 0.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// Number of rows of a 2-D tensor; panics otherwise.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor; panics otherwise.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    /// Element of a 2-D tensor; panics on rank or bounds violations.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        let cols = self.cols();
        self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Writes the tensor as a one-line JSON header `{"shape": [...]}` followed
    /// by the elements as little-endian f64 bytes.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::json!({ "shape": self.shape });
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a tensor in the format produced by [`Tensor::write_to`].
    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut header_line = String::new();
        r.read_line(&mut header_line)?;
        let header: serde_json::Value = serde_json::from_str(header_line.trim_end())?;
        let shape: Vec<usize> = match header.get("shape") {
            Some(s) => serde_json::from_value(s.clone())?,
            None => {
                return Err(Error::Checkpoint {
                    field: "shape".into(),
                    reason: "tensor header has no `shape` key".into(),
                })
            }
        };
        let numel = numel_of(&shape);
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }
}
