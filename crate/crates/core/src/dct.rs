//! Orthonormal DCT-II codec with low-frequency row truncation.
//!
//! A motion window of `Nf` frames (`Nf×3J`) maps to `L×3J` coefficients
//! through `y = D x`, where `D` holds the first `L` rows of the orthonormal
//! DCT-II matrix. Because those rows are orthonormal, `Dᵀ y` is the
//! least-squares reconstruction and `D Dᵀ = I_L` exactly.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    frames: usize,
    rows: usize,
    matrix: Tensor,
    transpose: Tensor,
}

impl DctBasis {
    /// Builds the truncated basis directly (uncached). Prefer [`dct_basis`].
    pub fn new(frames: usize, rows: usize) -> Result<Self> {
        if rows == 0 || rows > frames {
            return Err(Error::dim(format!(
                "retained rows L={rows} must lie in 1..={frames}"
            )));
        }
        let nf = frames as f64;
        let mut m = Tensor::zeros([rows, frames]);
        for k in 0..rows {
            let c = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            for n in 0..frames {
                let v = c * (PI * (2 * n + 1) as f64 * k as f64 / (2.0 * nf)).cos();
                m.set(k, n, v);
            }
        }
        let transpose = m.transpose();
        Ok(Self {
            frames,
            rows,
            matrix: m,
            transpose,
        })
    }

    /// Full sequence length `Nf = H + F`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Retained coefficient rows `L`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// The `L×Nf` matrix `D`.
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.rows() != self.frames {
            return Err(Error::dim(format!(
                "dct expects {} frames, got shape {:?}",
                self.frames,
                x.shape()
            )));
        }
        self.matrix.matmul(x)
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        if y.shape().len() != 2 || y.rows() != self.rows {
            return Err(Error::dim(format!(
                "idct expects {} coefficient rows, got shape {:?}",
                self.rows,
                y.shape()
            )));
        }
        self.transpose.matmul(y)
    }
}

/// Cached basis for `(Nf, L)`.
pub fn dct_basis(frames: usize, rows: usize) -> Result<Arc<DctBasis>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<DctBasis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache
        .lock()
        .expect("dct cache poisoned")
        .get(&(frames, rows))
    {
        return Ok(Arc::clone(b));
    }
    let basis = Arc::new(DctBasis::new(frames, rows)?);
    cache
        .lock()
        .expect("dct cache poisoned")
        .insert((frames, rows), Arc::clone(&basis));
    Ok(basis)
}

/// `L×3J` coefficients tied to the basis that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    values: Tensor,
    basis: Arc<DctBasis>,
}

impl DctCoefficients {
    pub fn new(values: Tensor, basis: Arc<DctBasis>) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() != basis.rows() {
            return Err(Error::dim(format!(
                "coefficients of shape {:?} for a basis with L={}",
                values.shape(),
                basis.rows()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Data("non-finite DCT coefficient".into()));
        }
        Ok(Self { values, basis })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn basis(&self) -> &Arc<DctBasis> {
        &self.basis
    }
}

/// `y = D x`.
pub fn dct_forward(x: &Tensor, basis: &Arc<DctBasis>) -> Result<DctCoefficients> {
    let y = basis.forward(x)?;
    DctCoefficients::new(y, Arc::clone(basis))
}

/// `x̂ = Dᵀ y`.
pub fn idct(y: &DctCoefficients) -> Tensor {
    y.basis
        .inverse(&y.values)
        .expect("coefficient shape validated at construction")
}
