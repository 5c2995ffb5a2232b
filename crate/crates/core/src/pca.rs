//! Principal component model of a set of spectra.
//!
//! The covariance `C = (1/N) D Dᵀ` of the centered samples is diagonalized
//! with cyclic Jacobi rotations. Eigenpairs are sorted by non-increasing
//! eigenvalue and each eigenvector is signed so that its entry of largest
//! magnitude is non-negative.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const NEGATIVE_EIGEN_TOL: f64 = 1e-9;
const HEADER_TAG: &str = "HSPCA1";

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `b x b`, column `k` is the k-th principal component.
    basis: Array2<f64>,
    n_samples: usize,
}

/// Result of a symmetric eigendecomposition, unsorted.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `k` pairs with `values[k]`.
    pub vectors: Array2<f64>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm drops
/// below `1e-12 * max(1, ‖A‖_F)` or 100 sweeps have run.
pub fn jacobi_eigen(matrix: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::dim(n, matrix.ncols()));
    }
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob.max(1.0);

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off_norm(&a) >= tol {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_norm(&a) >= tol {
        log::warn!("jacobi eigensolver stopped after {MAX_SWEEPS} sweeps without converging");
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    let vectors = Array2::from_shape_vec((n, n), v).expect("n x n buffer");
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Sample mean and `(1/N) Σ (xᵢ − x̄)(xᵢ − x̄)ᵀ`.
pub fn mean_and_covariance<S: AsRef<[f64]>>(samples: &[S]) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = samples.len();
    let b = samples.first().map_or(0, |s| s.as_ref().len());
    let mut data = Array2::<f64>::zeros((n, b));
    for (i, s) in samples.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != b {
            return Err(Error::dim(b, s.len()));
        }
        data.row_mut(i).assign(&ndarray::ArrayView1::from(s));
    }
    let mean = data
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::Degenerate("no samples".into()))?;
    data -= &mean;
    let cov = data.t().dot(&data) / n as f64;
    Ok((mean, cov))
}

impl PcaModel {
    /// Fits the model on `samples` (N ≥ 2, all of the same length).
    pub fn fit<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Degenerate(format!(
                "PCA needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let b = samples[0].as_ref().len();
        if b == 0 {
            return Err(Error::Degenerate("zero-length spectra".into()));
        }
        let (mean, cov) = mean_and_covariance(samples)?;
        let eig = jacobi_eigen(&cov)?;

        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.values[j].total_cmp(&eig.values[i]).then(i.cmp(&j)));

        let top = eig.values[order[0]].abs().max(1.0);
        let mut eigenvalues = Vec::with_capacity(b);
        let mut basis = Array2::<f64>::zeros((b, b));
        for (k, &src) in order.iter().enumerate() {
            let mut lambda = eig.values[src];
            if lambda < -NEGATIVE_EIGEN_TOL * top {
                return Err(Error::Numeric(format!(
                    "covariance has negative eigenvalue {lambda:e}"
                )));
            }
            if lambda < 0.0 {
                lambda = 0.0;
            }
            eigenvalues.push(lambda);
            let mut col = eig.vectors.column(src).to_owned();
            let mut pivot = 0;
            for j in 1..b {
                if col[j].abs() > col[pivot].abs() {
                    pivot = j;
                }
            }
            if col[pivot] < 0.0 {
                col.mapv_inplace(|x| -x);
            }
            basis.column_mut(k).assign(&col);
        }
        Ok(Self {
            mean: mean.to_vec(),
            eigenvalues,
            basis,
            n_samples: samples.len(),
        })
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// k-th principal component (0-based).
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.basis.column(k).to_vec()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.bands() {
            return Err(Error::dim(self.bands(), len));
        }
        Ok(())
    }

    /// Coordinates of `x` in the eigenbasis: `Φᵀ (x − x̄)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let centered: Array1<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.basis.t().dot(&centered).to_vec())
    }

    /// Inverse of [`project`](Self::project) over all components: `Φ c + x̄`.
    pub fn backproject(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.check_len(coords.len())?;
        let c = ndarray::ArrayView1::from(coords);
        let mut out = self.basis.dot(&c);
        out += &ndarray::ArrayView1::from(self.mean.as_slice());
        Ok(out.to_vec())
    }

    /// Reconstruction of `x` through the first `retained` components.
    pub fn reconstruct(&self, x: &[f64], retained: usize) -> Result<Vec<f64>> {
        if retained == 0 || retained > self.bands() {
            return Err(Error::Config(format!(
                "retained components must be in 1..={}, got {retained}",
                self.bands()
            )));
        }
        if retained == self.bands() {
            self.check_len(x.len())?;
            return Ok(x.to_vec());
        }
        let mut coords = self.project(x)?;
        for c in &mut coords[retained..] {
            *c = 0.0;
        }
        self.backproject(&coords)
    }

    pub fn reconstruction_error(&self, x: &[f64], retained: usize) -> Result<ReconstructionError> {
        let rec = self.reconstruct(x, retained)?;
        let (signed, squared) = x
            .iter()
            .zip(&rec)
            .fold((0.0, 0.0), |(s, q), (a, r)| (s + (a - r), q + (a - r) * (a - r)));
        Ok(ReconstructionError { signed, squared })
    }

    /// Text header `HSPCA1 <b> <N>\n`, then little-endian `f64` mean,
    /// eigenvalues and the basis in column-major order.
    pub fn encode(&self) -> Vec<u8> {
        let b = self.bands();
        let mut out = format!("{HEADER_TAG} {b} {}\n", self.n_samples).into_bytes();
        let column_major = self.basis.t().iter().copied().collect::<Vec<_>>();
        for v in self.mean.iter().chain(&self.eigenvalues).chain(&column_major) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Format("missing PCA header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("PCA header is not UTF-8".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != HEADER_TAG {
            return Err(Error::Format(format!("bad PCA header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PCA header field {s:?}")))
        };
        let (b, n) = (parse(parts[1])?, parse(parts[2])?);
        let payload = &bytes[nl + 1..];
        let expected = (2 * b + b * b) * 8;
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        let floats: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let basis = Array2::from_shape_vec((b, b), floats[2 * b..].to_vec())
            .expect("b x b buffer")
            .reversed_axes()
            .as_standard_layout()
            .to_owned();
        Ok(Self {
            mean: floats[..b].to_vec(),
            eigenvalues: floats[b..2 * b].to_vec(),
            basis,
            n_samples: n,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Difference between a spectrum and its truncated reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionError {
    /// `Σ (tᵢ − tᵢ″)`; can vanish for a nonzero residual.
    pub signed: f64,
    /// `Σ (tᵢ − tᵢ″)²`.
    pub squared: f64,
}
