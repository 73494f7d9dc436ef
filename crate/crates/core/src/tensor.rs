//! Dense row-major tensors and the raw numeric kernels behind the tape.
//!
//! Feature maps are laid out `H×W×C`, so reading a map as `(H·W)×C` token
//! rows is a reshape with no data movement.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Argument(format!(
                "shape {shape:?} holds {expected} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Identity matrix of size `n×n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
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

    /// Extent of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Extent of the trailing axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len().max(1) as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            _ => Err(Error::Argument(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.expect_matrix("transpose")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Direct convolution of an `H×W×Cin` map with a `kh×kw×Cin×Cout` kernel.
    pub fn conv2d(&self, weight: &Self, stride: usize, padding: usize) -> Result<Self> {
        let geom = ConvGeom::new(&self.shape, &weight.shape, stride, padding)?;
        let cols = im2col(&geom, &self.data);
        let mut out = vec![T::zero(); geom.out_pixels() * geom.cout];
        gemm(
            geom.out_pixels(),
            geom.patch(),
            geom.cout,
            &cols,
            &weight.data,
            &mut out,
        );
        Ok(Tensor {
            shape: vec![geom.oh, geom.ow, geom.cout],
            data: out,
        })
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::Argument("upsample factor must be at least 1".into()));
        }
        let (h, w, c) = self.expect_map("upsample_nearest")?;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); oh * ow * c];
        for y in 0..oh {
            for x in 0..ow {
                let src = ((y / factor) * w + x / factor) * c;
                let dst = (y * ow + x) * c;
                out[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Ok(Tensor {
            shape: vec![oh, ow, c],
            data: out,
        })
    }

    pub(crate) fn expect_map(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Argument(format!(
                "{op} expects an H×W×C map, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Stacks the rows of `other` below the rows of `self`.
    pub fn concat_rows(&self, other: &Self) -> Result<Self> {
        if self.rank() == 0 || self.shape[1..] != other.shape[1..] || self.rank() != other.rank() {
            return Err(Error::shape("concat", &self.shape, &other.shape));
        }
        let mut shape = self.shape.clone();
        shape[0] += other.shape[0];
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor { shape, data })
    }

    /// Splits into the first `at` rows and the remainder.
    pub fn split_rows(&self, at: usize) -> Result<(Self, Self)> {
        let n = self.rows();
        if at > n || self.rank() == 0 {
            return Err(Error::Argument(format!(
                "split point {at} outside 0..={n} for shape {:?}",
                self.shape
            )));
        }
        Ok((self.slice_rows(0, at), self.slice_rows(at, n - at)))
    }

    pub(crate) fn slice_rows(&self, start: usize, len: usize) -> Self {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor {
            shape,
            data: self.data[start * row..(start + len) * row].to_vec(),
        }
    }

    /// Concatenation along the trailing axis; leading extents must agree.
    pub fn concat_last(&self, other: &Self) -> Result<Self> {
        let r = self.rank();
        if r == 0 || r != other.rank() || self.shape[..r - 1] != other.shape[..r - 1] {
            return Err(Error::shape("concat_last", &self.shape, &other.shape));
        }
        let (ca, cb) = (self.last_dim(), other.last_dim());
        let lead = self.len().checked_div(ca).unwrap_or(other.len() / cb.max(1));
        let mut data = Vec::with_capacity(self.len() + other.len());
        for i in 0..lead {
            data.extend_from_slice(&self.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&other.data[i * cb..(i + 1) * cb]);
        }
        let mut shape = self.shape.clone();
        shape[r - 1] = ca + cb;
        Ok(Tensor { shape, data })
    }

    pub(crate) fn slice_last(&self, start: usize, len: usize) -> Self {
        let c = self.last_dim();
        let lead = self.len().checked_div(c).unwrap_or(0);
        let mut data = Vec::with_capacity(lead * len);
        for i in 0..lead {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        Tensor { shape, data }
    }

    /// Softmax over the trailing axis, computed with max subtraction.
    pub fn softmax(&self) -> Self {
        let n = self.last_dim();
        let mut out = self.data.clone();
        if n > 0 {
            for row in out.chunks_mut(n) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }

    /// Layer normalization over the trailing axis with an affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        Ok(layer_norm_forward(self, gamma, beta, eps)?.0)
    }
}

/// `c += a·b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, (k, 1), b, (n, 1), c);
}

/// `c += aᵀ·b` for row-major `a: k×m`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, (1, m), b, (n, 1), c);
}

/// `c += a·bᵀ` for row-major `a: m×k`, `b: n×k`, `c: m×n`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, (k, 1), b, (1, k), c);
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[h, wd, cin], &[kh, kw, wcin, cout]) = (x, w) else {
            return Err(Error::shape("conv2d", x, w));
        };
        if cin != wcin {
            return Err(Error::shape("conv2d", x, w));
        }
        if stride == 0 {
            return Err(Error::Argument("conv2d stride must be positive".into()));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(Error::shape("conv2d", x, w));
        }
        Ok(ConvGeom {
            h,
            w: wd,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.out_pixels() * patch];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.kw + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input map.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut x = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.kw + kx) * g.cin;
                    for (xv, &cv) in x[dst..dst + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                        *xv += cv;
                    }
                }
            }
        }
    }
    x
}

/// Returns `(output, normalized input, reciprocal std per row)`.
pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if !(eps > T::zero()) {
        return Err(Error::Argument("layer_norm eps must be positive".into()));
    }
    let rows = x.len().checked_div(d).unwrap_or(0);
    let inv_d = T::one() / T::of(d as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, xhat, rstd))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_cases() {
        let i2 = Tensor::<f64>::eye(2);
        assert_eq!(i2.matmul(&i2).unwrap(), i2);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(a.matmul(&i2).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[4, 5, 1], |i| i as f64 * 0.5 - 3.0);
        let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
        assert_eq!(x.conv2d(&w, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_output_extent() {
        let x = Tensor::<f64>::zeros(&[8, 8, 2]);
        let w = Tensor::<f64>::zeros(&[3, 3, 2, 5]);
        assert_eq!(x.conv2d(&w, 2, 1).unwrap().shape(), &[4, 4, 5]);
    }

    #[test]
    fn conv_kernel_larger_than_padded_input() {
        let x = Tensor::<f64>::zeros(&[2, 2, 1]);
        let w = Tensor::<f64>::zeros(&[5, 5, 1, 1]);
        assert!(matches!(x.conv2d(&w, 1, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = Tensor::<f64>::from_fn(&[5, 4, 2], |i| ((i * 7) % 11) as f64 - 5.0);
        let w = Tensor::<f64>::from_fn(&[3, 3, 2, 3], |i| ((i * 5) % 7) as f64 * 0.25 - 0.5);
        let y = x.conv2d(&w, 2, 1).unwrap();
        let (oh, ow) = (3, 2);
        assert_eq!(y.shape(), &[oh, ow, 3]);
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..3 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                continue;
                            }
                            for ci in 0..2 {
                                acc += x.data()[(iy as usize * 4 + ix as usize) * 2 + ci]
                                    * w.data()[((ky * 3 + kx) * 2 + ci) * 3 + co];
                            }
                        }
                    }
                    assert!((y.data()[(oy * ow + ox) * 3 + co] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_blocks() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        assert_eq!(x.upsample_nearest(1).unwrap(), x);
        let y = x.upsample_nearest(2).unwrap();
        assert_eq!(y.shape(), &[4, 4, 1]);
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        assert!(matches!(x.upsample_nearest(0), Err(Error::Argument(_))));
    }

    #[test]
    fn concat_and_split_rows() {
        let a = Tensor::<f64>::zeros(&[64, 16]);
        let b = Tensor::<f64>::ones(&[1, 16]);
        let z = a.concat_rows(&b).unwrap();
        assert_eq!(z.shape(), &[65, 16]);
        let empty = Tensor::<f64>::zeros(&[0, 16]);
        assert_eq!(a.concat_rows(&empty).unwrap(), a);
        let (l, r) = z.split_rows(0).unwrap();
        assert_eq!((l.shape(), &r), (&[0usize, 16][..], &z));
        let (l, r) = z.split_rows(65).unwrap();
        assert_eq!((&l, r.shape()), (&z, &[0usize, 16][..]));
        assert!(z.split_rows(66).is_err());
        assert!(a.concat_rows(&Tensor::zeros(&[1, 15])).is_err());
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let s = t(&[1, 2], &[0., 0.]).softmax();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[1, 2], &[1000., 0.]).softmax();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn layer_norm_edge_cases() {
        let x = t(&[2, 3], &[4., 4., 4., 1., 2., 3.]);
        let y = x
            .layer_norm(&Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5)
            .unwrap();
        assert_eq!(&y.data()[..3], &[0., 0., 0.]);
        let y = x
            .layer_norm(&Tensor::zeros(&[3]), &Tensor::full(&[3], 2.5), 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }
}
