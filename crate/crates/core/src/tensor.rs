//! Dense row-major `f64` tensors and the value-level numeric kernels shared by
//! the differentiation graph and the standalone helpers.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major tensor. Rank 0 (`shape == []`) holds a single scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::Empty("from_rows"));
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("from_rows", &[c], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        if self.rank() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }

    /// Element-wise operation; binary kinds need equal shapes, or one side scalar.
    pub fn elementwise(kind: Elementwise, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        match (kind.arity(), b) {
            (1, _) => Ok(a.map(|x| kind.apply_unary(x))),
            (_, None) => Err(Error::Invalid(alloc::format!("{kind:?} needs two operands"))),
            (_, Some(b)) => {
                let f = |x: f64, y: f64| kind.apply_binary(x, y);
                if a.shape == b.shape {
                    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
                    Ok(Tensor {
                        shape: a.shape.clone(),
                        data,
                    })
                } else if b.is_scalar() {
                    let y = b.item();
                    Ok(a.map(|x| f(x, y)))
                } else if a.is_scalar() {
                    let x = a.item();
                    Ok(b.map(|y| f(x, y)))
                } else {
                    Err(Error::shape(kind.name(), &a.shape, &b.shape))
                }
            }
        }
    }

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
            return Err(Error::shape("matmul", &a.shape, &b.shape));
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `[m×k] · [k] -> [m]`.
    pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
        if m.rank() != 2 || v.rank() != 1 || m.shape[1] != v.shape[0] {
            return Err(Error::shape("matvec", &m.shape, &v.shape));
        }
        let k = m.shape[1];
        let data = m.data.chunks_exact(k).map(|r| dot(r, &v.data)).collect();
        Tensor::new(vec![m.shape[0]], data)
    }

    pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
        if a.rank() != 1 || a.shape != b.shape {
            return Err(Error::shape("cosine_similarity", &a.shape, &b.shape));
        }
        Ok(cosine(&a.data, &b.data))
    }

    pub fn softmax(logits: &Tensor) -> Result<Tensor> {
        if logits.rank() != 1 {
            return Err(Error::shape("softmax", &logits.shape, &[]));
        }
        Ok(Tensor {
            shape: logits.shape.clone(),
            data: softmax(&logits.data),
        })
    }

    pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm { op: "l2_normalize" });
        }
        Ok(v.map(|x| x / n))
    }
}

/// Element-wise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
}

impl Elementwise {
    fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Tanh => "tanh",
            Elementwise::Sigmoid => "sigmoid",
            Elementwise::Relu => "relu",
        }
    }

    fn apply_unary(self, x: f64) -> f64 {
        match self {
            Elementwise::Tanh => libm::tanh(x),
            Elementwise::Sigmoid => sigmoid(x),
            Elementwise::Relu => relu(x),
            _ => unreachable!(),
        }
    }

    fn apply_binary(self, x: f64, y: f64) -> f64 {
        match self {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            Elementwise::Mul => x * y,
            _ => unreachable!(),
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = dot(a, b) / (libm::sqrt(na) * libm::sqrt(nb));
    c.clamp(-1.0, 1.0)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| libm::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(x.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}
