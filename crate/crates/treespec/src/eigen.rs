//! Smallest eigenpairs of symmetric pencils `K u = lambda M u`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::{EnvelopeCholesky, SparseSymmetric};

/// Systems up to this size are solved by dense decomposition.
pub const DENSE_LIMIT: usize = 2000;

const MAX_ITERATIONS: usize = 2000;

/// Sorted eigenvalues with multiplicities, optional vectors and residuals.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub multiplicities: Vec<usize>,
    #[serde(skip)]
    pub vectors: Option<DMatrix<f64>>,
    pub residuals: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values repeated according to their multiplicities.
    pub fn expanded(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.multiplicities)
            .flat_map(|(&v, &m)| std::iter::repeat_n(v, m))
            .collect()
    }

    pub fn vector(&self, i: usize) -> Option<Vec<f64>> {
        self.vectors.as_ref().map(|v| v.column(i).iter().copied().collect())
    }

    /// Keeps entries until the cumulative multiplicity reaches `count`.
    pub fn truncated(mut self, count: usize) -> Spectrum {
        let mut total = 0;
        let mut keep = 0;
        for &m in &self.multiplicities {
            if total >= count {
                break;
            }
            total += m;
            keep += 1;
        }
        self.values.truncate(keep);
        self.multiplicities.truncate(keep);
        self.residuals.truncate(keep);
        if let Some(v) = self.vectors.take() {
            self.vectors = Some(v.columns(0, keep).into_owned());
        }
        self
    }
}

/// `||K u - lambda M u|| / ||M u||`.
pub fn residual(k: &SparseSymmetric, m: &SparseSymmetric, lambda: f64, u: &[f64]) -> f64 {
    let ku = k.mul_vec(u);
    let mu = m.mul_vec(u);
    let num: f64 = ku.iter().zip(&mu).map(|(a, b)| (a - lambda * b).powi(2)).sum();
    let den: f64 = mu.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// The `count` smallest eigenpairs. Convergence is declared when every
/// residual is at most `tol * max(1, |lambda|)`.
pub fn smallest_eigenpairs(
    k: &SparseSymmetric,
    m: &SparseSymmetric,
    count: usize,
    tol: f64,
) -> Result<Spectrum> {
    let n = k.dim();
    if m.dim() != n {
        return Err(Error::param("M", "dimension differs from K"));
    }
    if count == 0 || count > n {
        return Err(Error::param("m", format!("need 1 <= m <= {n}, got {count}")));
    }
    if n <= DENSE_LIMIT {
        dense_pairs(k, m, count)
    } else {
        shift_invert_pairs(k, m, count, tol)
    }
}

/// Dense generalized solve through the Cholesky factor of `M`.
pub fn dense_pairs(k: &SparseSymmetric, m: &SparseSymmetric, count: usize) -> Result<Spectrum> {
    let (values, vectors) = dense_generalized(&k.to_dense(), &m.to_dense())?;
    let count = count.min(values.len());
    let vectors = vectors.columns(0, count).into_owned();
    let values: Vec<f64> = values[..count].to_vec();
    let residuals = (0..count)
        .map(|i| {
            let u: Vec<f64> = vectors.column(i).iter().copied().collect();
            residual(k, m, values[i], &u)
        })
        .collect();
    Ok(Spectrum {
        multiplicities: vec![1; values.len()],
        values,
        vectors: Some(vectors),
        residuals,
    })
}

/// All eigenpairs of a dense pencil `(A, B)` with `B` positive definite,
/// sorted ascending, vectors `B`-orthonormal.
pub fn dense_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = b
        .clone()
        .cholesky()
        .ok_or(Error::Factorization { pivot: 0, value: f64::NAN })?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Invariant("singular mass factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Invariant("singular mass factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut y = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        y.set_column(dst, &eig.eigenvectors.column(src));
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Invariant("singular mass factor".into()))?;
    Ok((values, vectors))
}

fn factor_shifted(k: &SparseSymmetric, m: &SparseSymmetric) -> Result<(f64, EnvelopeCholesky)> {
    let kd = k.diagonal();
    let md = m.diagonal();
    let scale = kd
        .iter()
        .zip(&md)
        .map(|(a, b)| (a / b).abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut sigma = 0.0;
    let mut last_err = None;
    for attempt in 0..8 {
        match EnvelopeCholesky::factor(&k.add_scaled(m, -sigma)) {
            Ok(f) => return Ok((sigma, f)),
            Err(e) => {
                last_err = Some(e);
                sigma = -scale * 1e-6 * 10f64.powi(attempt);
            }
        }
    }
    Err(last_err.unwrap())
}

/// Block shift-invert subspace iteration with Rayleigh-Ritz projection.
pub fn shift_invert_pairs(
    k: &SparseSymmetric,
    m: &SparseSymmetric,
    count: usize,
    tol: f64,
) -> Result<Spectrum> {
    let n = k.dim();
    let (_sigma, factor) = factor_shifted(k, m)?;
    let block = (count + 8).max(2 * count).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ee5_bec7);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.gen::<f64>() - 0.5);
    let mut ritz: Vec<f64> = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();
    for iteration in 0..MAX_ITERATIONS {
        let mut y = DMatrix::zeros(n, block);
        for c in 0..block {
            let xc: Vec<f64> = x.column(c).iter().copied().collect();
            let rhs = m.mul_vec(&xc);
            y.set_column(c, &DVector::from_vec(factor.solve(&rhs)));
        }
        let (values, basis) = rayleigh_ritz(k, m, &y)?;
        x = basis;
        ritz = values;
        residuals = (0..count)
            .map(|i| {
                let u: Vec<f64> = x.column(i).iter().copied().collect();
                residual(k, m, ritz[i], &u)
            })
            .collect();
        let done = residuals
            .iter()
            .zip(&ritz)
            .all(|(r, l)| *r <= tol * l.abs().max(1.0));
        if done {
            let vectors = x.columns(0, count).into_owned();
            return Ok(Spectrum {
                values: ritz[..count].to_vec(),
                multiplicities: vec![1; count],
                vectors: Some(vectors),
                residuals,
            });
        }
        if iteration + 1 == MAX_ITERATIONS {
            break;
        }
    }
    let converged = residuals
        .iter()
        .zip(&ritz)
        .take_while(|(r, l)| **r <= tol * l.abs().max(1.0))
        .count();
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        converged,
        wanted: count,
        partial: ritz.into_iter().take(count).collect(),
    })
}

fn dense_form(a: &SparseSymmetric, y: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = y.ncols();
    let ay: Vec<Vec<f64>> = (0..cols)
        .map(|c| a.mul_vec(&y.column(c).iter().copied().collect::<Vec<_>>()))
        .collect();
    DMatrix::from_fn(cols, cols, |i, j| {
        y.column(i).iter().zip(&ay[j]).map(|(p, q)| p * q).sum()
    })
}

/// Ritz values and `M`-orthonormal Ritz vectors of the span of `y`.
fn rayleigh_ritz(
    k: &SparseSymmetric,
    m: &SparseSymmetric,
    y: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let gm = dense_form(m, y);
    let gm = (&gm + gm.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gm);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..y.ncols())
        .filter(|&i| eig.eigenvalues[i] > top * 1e-13)
        .collect();
    let mut z = DMatrix::zeros(y.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        z.set_column(c, &(y * eig.eigenvectors.column(i) * scale));
    }
    let gk = dense_form(k, &z);
    let gk = (&gk + gk.transpose()) * 0.5;
    let small = SymmetricEigen::new(gk);
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&i, &j| small.eigenvalues[i].total_cmp(&small.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| small.eigenvalues[i]).collect();
    let mut q = DMatrix::zeros(keep.len(), keep.len());
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &small.eigenvectors.column(src));
    }
    let mut x = z * q;
    // Pad with copies if rank was lost; the padded columns are never reported.
    if x.ncols() < y.ncols() {
        let mut padded = DMatrix::zeros(y.nrows(), y.ncols());
        for c in 0..y.ncols() {
            let src = c.min(x.ncols() - 1);
            padded.set_column(c, &x.column(src));
        }
        x = padded;
    }
    Ok((values, x))
}

/// Merges sorted spectra, multiplying each entry's multiplicity by the
/// weight attached to its source. Ties are ordered by value, then by the
/// inputs' sorted order of (value, multiplicity), so the result does not
/// depend on the order of `parts`.
pub fn merge_spectra(parts: &[(Spectrum, usize)]) -> Spectrum {
    let mut entries: Vec<(f64, usize, f64)> = Vec::new();
    for (s, weight) in parts {
        for i in 0..s.len() {
            let mult = s.multiplicities[i] * weight;
            if mult > 0 {
                entries.push((s.values[i], mult, s.residuals.get(i).copied().unwrap_or(0.0)));
            }
        }
    }
    entries.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Spectrum {
        values: entries.iter().map(|e| e.0).collect(),
        multiplicities: entries.iter().map(|e| e.1).collect(),
        vectors: None,
        residuals: entries.iter().map(|e| e.2).collect(),
    }
}
