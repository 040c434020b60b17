//! Dense double-precision tensors for the forward/backward engine.

use super::ErfError;

/// A `(batch, channels, freq, time)` tensor, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        Tensor4 { dims, data: vec![value; dims.iter().product()] }
    }

    /// Builds a tensor from raw data, checking length and finiteness.
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self, ErfError> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(ErfError::BadTensor(format!(
                "data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                expected
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(ErfError::BadTensor(format!("non-finite value {bad} in tensor data")));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn freq(&self) -> usize {
        self.dims[2]
    }

    pub fn time(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, f: usize, t: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + f) * self.dims[3] + t
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, f: usize, t: usize) -> f64 {
        self.data[self.offset(b, c, f, t)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, f: usize, t: usize) -> &mut f64 {
        let i = self.offset(b, c, f, t);
        &mut self.data[i]
    }

    /// Copies one batch element into a new batch-1 tensor.
    pub fn batch_slice(&self, b: usize) -> Tensor4 {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        let start = b * per;
        Tensor4 {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start..start + per].to_vec(),
        }
    }

    /// Concatenates tensors along the channel axis; all other dims must agree.
    pub fn concat_channels(parts: &[&Tensor4]) -> Tensor4 {
        let [b, _, f, t] = parts[0].dims;
        let channels: usize = parts.iter().map(|p| p.dims[1]).sum();
        let mut out = Tensor4::zeros([b, channels, f, t]);
        let plane = f * t;
        for bi in 0..b {
            let mut co = 0;
            for part in parts {
                debug_assert_eq!(part.dims[0], b);
                debug_assert_eq!(part.dims[2], f);
                debug_assert_eq!(part.dims[3], t);
                for c in 0..part.dims[1] {
                    let src = (bi * part.dims[1] + c) * plane;
                    let dst = (bi * channels + co + c) * plane;
                    out.data[dst..dst + plane].copy_from_slice(&part.data[src..src + plane]);
                }
                co += part.dims[1];
            }
        }
        out
    }

    /// Extracts `count` channels starting at `start` into a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Tensor4 {
        let [b, c, f, t] = self.dims;
        debug_assert!(start + count <= c);
        let plane = f * t;
        let mut out = Tensor4::zeros([b, count, f, t]);
        for bi in 0..b {
            for ci in 0..count {
                let src = (bi * c + start + ci) * plane;
                let dst = (bi * count + ci) * plane;
                out.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        out
    }

    /// Elementwise in-place add; dims must agree.
    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 4]).is_ok());
        assert!(Tensor4::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::from_vec([1, 1, 1, 2], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut a = Tensor4::zeros([2, 2, 1, 2]);
        let mut b = Tensor4::zeros([2, 1, 1, 2]);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        for (i, v) in b.data.iter_mut().enumerate() {
            *v = 100.0 + i as f64;
        }
        let cat = Tensor4::concat_channels(&[&a, &b]);
        assert_eq!(cat.dims(), [2, 3, 1, 2]);
        assert_eq!(cat.channel_slice(0, 2), a);
        assert_eq!(cat.channel_slice(2, 1), b);
        assert_eq!(cat.at(1, 2, 0, 1), b.at(1, 0, 0, 1));
    }
}
