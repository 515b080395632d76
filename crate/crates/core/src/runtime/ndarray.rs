use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape {shape:?} does not match {len} elements")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape must be non-empty with positive extents, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Incompatible(String),
}

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNdarray")]
pub struct Ndarray {
    shape: Vec<usize>,
    #[serde(rename = "values")]
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawNdarray {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawNdarray> for Ndarray {
    type Error = ShapeError;

    fn try_from(raw: RawNdarray) -> Result<Self, ShapeError> {
        Ndarray::from_vec(raw.shape, raw.values)
    }
}

impl Ndarray {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(ShapeError::BadShape(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(ShapeError::LengthMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, ShapeError> {
        Self::from_vec(vec![data.len()], data)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, ShapeError> {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn ones(shape: Vec<usize>) -> Result<Self, ShapeError> {
        Self::filled(shape, 1.0)
    }

    /// `[0, 1, ..., n-1]` as a 1-d array.
    pub fn arange(n: usize) -> Result<Self, ShapeError> {
        Self::vector((0..n).map(|i| i as f64).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element at a 2-d index; panics when out of range or not 2-d.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }
}

pub fn nd_map(f: impl Fn(f64) -> f64, a: &Ndarray) -> Ndarray {
    Ndarray {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

/// Left fold over the flat buffer.
pub fn nd_fold(f: impl Fn(f64, f64) -> f64, init: f64, a: &Ndarray) -> f64 {
    a.data.iter().fold(init, |acc, &x| f(acc, x))
}

/// Valid-mode 2-d cross-correlation.
pub fn conv2d_valid(input: &Ndarray, kernel: &Ndarray) -> Result<Ndarray, ShapeError> {
    let (&[h, w], &[kh, kw]) = (input.shape(), kernel.shape()) else {
        return Err(ShapeError::Incompatible(format!(
            "conv2d expects 2-d operands, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if kh > h || kw > w {
        return Err(ShapeError::Incompatible(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for u in 0..kh {
                let row = &input.data[(i + u) * w + j..(i + u) * w + j + kw];
                let krow = &kernel.data[u * kw..(u + 1) * kw];
                for (a, b) in row.iter().zip(krow) {
                    acc += a * b;
                }
            }
            out[i * ow + j] = acc;
        }
    }
    Ndarray::from_vec(vec![oh, ow], out)
}
