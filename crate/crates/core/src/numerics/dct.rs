use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use super::Matrix;
use crate::error::{Error, Result};

/// Orthonormal DCT-II basis of length `L`, stored as an `L x L` matrix
/// whose row `l` is the `l`-th cosine atom.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    len: usize,
    basis: Matrix,
}

impl DctBasis {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("DCT length must be at least 1"));
        }
        let l_f = len as f64;
        let basis = Matrix::from_fn(len, len, |l, n| {
            let w = if l == 0 {
                (1.0 / l_f).sqrt()
            } else {
                (2.0 / l_f).sqrt()
            };
            w * (PI / l_f * (n as f64 + 0.5) * l as f64).cos()
        });
        Ok(Self { len, basis })
    }

    /// Shared basis for `len`, built once per process.
    pub fn cached(len: usize) -> Result<Arc<DctBasis>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DctBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(b) = guard.get(&len) {
            return Ok(Arc::clone(b));
        }
        let b = Arc::new(DctBasis::new(len)?);
        guard.insert(len, Arc::clone(&b));
        Ok(b)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.basis
    }

    /// Forward transform of each row, keeping the first `retain` coefficients.
    pub fn dct(&self, seq: &Matrix, retain: usize) -> Result<Matrix> {
        if seq.cols() != self.len {
            return Err(Error::invalid(format!(
                "dct: sequence has {} columns, basis length is {}",
                seq.cols(),
                self.len
            )));
        }
        if retain == 0 || retain > self.len {
            return Err(Error::invalid(format!(
                "dct: retain {retain} outside 1..={}",
                self.len
            )));
        }
        Ok(self.dct_unchecked(seq, retain))
    }

    pub(crate) fn dct_unchecked(&self, seq: &Matrix, retain: usize) -> Matrix {
        let mut out = Matrix::zeros(seq.rows(), retain);
        for k in 0..seq.rows() {
            let x = seq.row(k);
            let o = out.row_mut(k);
            for (l, ol) in o.iter_mut().enumerate() {
                *ol = super::dot(x, self.basis.row(l));
            }
        }
        out
    }

    /// Inverse transform; coefficients beyond `coef.cols()` are treated as zero.
    pub fn idct(&self, coef: &Matrix) -> Result<Matrix> {
        if coef.cols() > self.len {
            return Err(Error::invalid(format!(
                "idct: {} coefficients exceed basis length {}",
                coef.cols(),
                self.len
            )));
        }
        Ok(self.idct_unchecked(coef))
    }

    pub(crate) fn idct_unchecked(&self, coef: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(coef.rows(), self.len);
        for k in 0..coef.rows() {
            let o = out.row_mut(k);
            for (l, &c) in coef.row(k).iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (on, b) in o.iter_mut().zip(self.basis.row(l)) {
                    *on += c * b;
                }
            }
        }
        out
    }
}

pub fn build_dct_basis(len: usize) -> Result<DctBasis> {
    DctBasis::new(len)
}

pub fn dct(seq: &Matrix, basis: &DctBasis, retain: usize) -> Result<Matrix> {
    basis.dct(seq, retain)
}

/// Inverse DCT to length `len`; `len` must equal the basis length.
pub fn idct(coef: &Matrix, basis: &DctBasis, len: usize) -> Result<Matrix> {
    if len != basis.len() {
        return Err(Error::invalid(format!(
            "idct: target length {len} != basis length {}",
            basis.len()
        )));
    }
    basis.idct(coef)
}
