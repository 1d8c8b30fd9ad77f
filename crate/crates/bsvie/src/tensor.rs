//! Dense row-major f64 tensors.
//!
//! Everything the solver moves around — states, Wiener increments, weight
//! matrices, activations — is a [`Tensor`]. Shapes are dynamic; the autodiff
//! tape in [`crate::tape`] builds on the raw kernels here.

use crate::error::{Error, Result};

/// Contiguous row-major array of 64-bit floats with a dynamic shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// m-by-n matrix from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// First (only) element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on non-matrix {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on non-matrix {:?}", self.shape);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Same data, new shape. Element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

/// C = A * B for row-major matrices, ikj loop order so the inner loop runs
/// over contiguous rows of B and C.
pub fn gemm_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    assert_eq!(ka, kb, "matmul inner dims {}x{} * {}x{}", m, ka, kb, n);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let crow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * n..(k + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                *c += aik * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// C = A * B^T. Inner loops are dot products over contiguous rows.
pub fn gemm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ka) = (a.rows(), a.cols());
    let (n, kb) = (b.rows(), b.cols());
    assert_eq!(ka, kb, "matmul_nt inner dims");
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let crow = &mut out[i * n..(i + 1) * n];
        for (j, c) in crow.iter_mut().enumerate() {
            let brow = &bd[j * kb..(j + 1) * kb];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *c = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

/// C = A^T * B where A is m-by-k (so C is k-by-n): accumulate scaled rows.
pub fn gemm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (mb, n) = (b.rows(), b.cols());
    assert_eq!(m, mb, "matmul_tn outer dims");
    let mut out = vec![0.0; k * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let brow = &bd[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                *c += aip * bv;
            }
        }
    }
    Tensor::matrix(k, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_returns_input() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(gemm_nn(&eye, &a), a);
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]);
        assert_eq!(gemm_nn(&a, &b).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zeros() {
        let z = Tensor::zeros(vec![2, 3]);
        let b = Tensor::matrix(3, 5, (0..15).map(|v| v as f64).collect());
        let c = gemm_nn(&z, &b);
        assert_eq!(c.shape(), &[2, 5]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        // Compare gemm_nt / gemm_tn against gemm_nn on explicit transposes.
        let a = Tensor::matrix(3, 4, (0..12).map(|v| (v as f64) * 0.3 - 1.0).collect());
        let b = Tensor::matrix(2, 4, (0..8).map(|v| (v as f64) * 0.7 - 2.0).collect());
        let bt = {
            let mut d = vec![0.0; 8];
            for i in 0..2 {
                for j in 0..4 {
                    d[j * 2 + i] = b.data()[i * 4 + j];
                }
            }
            Tensor::matrix(4, 2, d)
        };
        let via_nt = gemm_nt(&a, &b);
        let via_nn = gemm_nn(&a, &bt);
        for (x, y) in via_nt.data().iter().zip(via_nn.data()) {
            assert!((x - y).abs() < 1e-14);
        }

        let c = Tensor::matrix(3, 2, (0..6).map(|v| (v as f64) - 2.5).collect());
        let via_tn = gemm_tn(&a, &c);
        // a^T is 4x3
        let at = {
            let mut d = vec![0.0; 12];
            for i in 0..3 {
                for j in 0..4 {
                    d[j * 3 + i] = a.data()[i * 4 + j];
                }
            }
            Tensor::matrix(4, 3, d)
        };
        let via_nn2 = gemm_nn(&at, &c);
        for (x, y) in via_tn.data().iter().zip(via_nn2.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    #[should_panic(expected = "inner dims")]
    fn matmul_shape_mismatch_panics() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        gemm_nn(&a, &b);
    }
}
