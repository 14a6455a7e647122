use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense row-major `f32` tensor.
///
/// Image batches use NCHW layout; dense activations use `(N, F)`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Returns `(n, c, h, w)`; panics on non rank-4 tensors.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("expected rank-4 tensor, got shape {:?}", self.shape),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape to {shape:?}");
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Concatenates along the leading dimension.
    pub fn stack(items: &[Tensor]) -> Self {
        assert!(!items.is_empty(), "cannot stack zero tensors");
        let tail = &items[0].shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for t in items {
            assert_eq!(&t.shape[1..], tail, "stack: trailing shapes differ");
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        let mut shape = vec![n];
        shape.extend_from_slice(tail);
        Self { shape, data }
    }

    /// Selects batch items by index.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let len = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Concatenates two tensors along dimension 1 (channels / features).
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Self {
        assert_eq!(a.shape[0], b.shape[0], "concat: batch sizes differ");
        assert_eq!(a.shape[2..], b.shape[2..], "concat: spatial shapes differ");
        let n = a.shape[0];
        let (la, lb) = (a.item_len(), b.item_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        let mut shape = a.shape.clone();
        shape[1] += b.shape[1];
        debug_assert_eq!(data.len(), n * (la + lb));
        Self { shape, data }
    }

    /// Inverse of [`Tensor::concat_channels`]: splits dimension 1 at `at`.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        let n = self.shape[0];
        let c = self.shape[1];
        assert!(at <= c);
        let spatial: usize = self.shape[2..].iter().product();
        let (la, lb) = (at * spatial, (c - at) * spatial);
        let mut a = Vec::with_capacity(n * la);
        let mut b = Vec::with_capacity(n * lb);
        for i in 0..n {
            let item = self.item(i);
            a.extend_from_slice(&item[..la]);
            b.extend_from_slice(&item[la..]);
        }
        let mut sa = self.shape.clone();
        sa[1] = at;
        let mut sb = self.shape.clone();
        sb[1] = c - at;
        (Tensor { shape: sa, data: a }, Tensor { shape: sb, data: b })
    }

    pub fn mul_elem(&self, other: &Tensor) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise product: shapes differ");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Self { shape: self.shape.clone(), data }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add: shapes differ");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_recovers_parts() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.item(1), &[3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn gather_picks_items() {
        let t = Tensor::from_vec(&[3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let g = t.gather(&[2, 0]);
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
