//! Principal component analysis by eigendecomposition of the sample
//! covariance.
//!
//! Small dimensions use cyclic Jacobi on the full covariance matrix. Large
//! dimensions use block orthogonal iteration with Rayleigh–Ritz extraction,
//! which never forms the covariance: `C·Q` is evaluated as
//! `Xcᵀ(Xc·Q)/(n−1)` on the centered samples.
//!
//! Components are sign-normalized so that each row's entry of largest
//! magnitude is non-negative.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};

use super::{dot, Matrix};
use crate::error::{Error, Result};

pub const PCA_MAGIC: &[u8; 4] = b"QRPC";
pub const PCA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaOptions {
    /// Largest dimension handled by full Jacobi; above it, subspace iteration.
    pub jacobi_max_dim: usize,
    /// Relative change in the Ritz values below which iteration stops.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            jacobi_max_dim: 1024,
            tolerance: 1e-10,
            max_sweeps: 10_000,
        }
    }
}

/// A fitted projection: `components · (x − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Matrix,
    eigenvalues: Vec<f64>,
}

impl PcaModel {
    /// Assembles a model from explicit parts. Rows of `components` are not
    /// checked for orthonormality.
    pub fn from_parts(mean: Vec<f64>, components: Matrix, eigenvalues: Vec<f64>) -> Result<Self> {
        if components.cols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: components.cols(),
            });
        }
        if eigenvalues.len() != components.rows() {
            return Err(Error::DimensionMismatch {
                expected: components.rows(),
                actual: eigenvalues.len(),
            });
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// k × d, one principal direction per row.
    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        pca_project(self, v)
    }

    /// `mean + Cᵀ y`.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: y.len(),
            });
        }
        let mut out = self.mean.clone();
        self.components.add_transpose_matvec(y, &mut out);
        Ok(out)
    }

    /// Binary layout (little-endian): `"QRPC" | version u32 | k u32 | dim u32`,
    /// then the mean row, k component rows and the eigenvalue row as f64.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(PCA_MAGIC).map_err(io)?;
        for v in [PCA_VERSION, self.output_dim() as u32, self.input_dim() as u32] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        let values = self
            .mean
            .iter()
            .chain(self.components.as_slice())
            .chain(&self.eigenvalues);
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let truncated = |what: &str| Error::Truncated {
            path: path.to_path_buf(),
            what: what.into(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
        if &magic != PCA_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "QRPC".into(),
            });
        }
        let mut header = [0u32; 3];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| truncated("header"))?;
            *h = u32::from_le_bytes(b);
        }
        let [version, k, dim] = header;
        if version != PCA_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let (k, dim) = (k as usize, dim as usize);
        let mut raw = vec![0u8; (dim + k * dim + k) * 8];
        r.read_exact(&mut raw).map_err(|_| truncated("values"))?;
        let mut values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
        let mean: Vec<f64> = values.by_ref().take(dim).collect();
        let comps: Vec<f64> = values.by_ref().take(k * dim).collect();
        let eigenvalues: Vec<f64> = values.collect();
        PcaModel::from_parts(mean, Matrix::from_vec(k, dim, comps)?, eigenvalues)
    }
}

/// Projects `v` onto the model's principal directions.
pub fn pca_project(model: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: v.len(),
        });
    }
    let centered: Vec<f64> = v.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(model.components.matvec(&centered))
}

pub fn fit_pca(samples: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    fit_pca_with(samples, k, &PcaOptions::default())
}

/// Fits the top-`k` principal components of `samples`.
///
/// For zero-variance directions the returned components are an arbitrary
/// orthonormal completion (with zero eigenvalues).
pub fn fit_pca_with(samples: &[Vec<f64>], k: usize, opts: &PcaOptions) -> Result<PcaModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    let d = samples[0].len();
    if k == 0 || k > d.min(n) {
        return Err(Error::invalid(format!(
            "k = {k} out of range 1..={} (d = {d}, n = {n})",
            d.min(n)
        )));
    }
    let centered = {
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite sample value".into()));
            }
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut xc = Matrix::zeros(n, d);
        for (i, s) in samples.iter().enumerate() {
            for ((c, x), m) in xc.row_mut(i).iter_mut().zip(s).zip(&mean) {
                *c = x - m;
            }
        }
        (mean, xc)
    };
    let (mean, xc) = centered;

    let (eigenvalues, mut components) = if d <= opts.jacobi_max_dim {
        top_k_jacobi(&xc, k, opts)
    } else {
        top_k_subspace(&xc, k, opts)?
    };
    normalize_signs(&mut components);
    let eigenvalues = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
    PcaModel::from_parts(mean, components, eigenvalues)
}

fn covariance(xc: &Matrix) -> Matrix {
    let (n, d) = (xc.rows(), xc.cols());
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        cov.add_outer(xc.row(r), xc.row(r));
    }
    let scale = 1.0 / (n - 1) as f64;
    cov.as_mut_slice().iter_mut().for_each(|c| *c *= scale);
    cov
}

fn top_k_jacobi(xc: &Matrix, k: usize, opts: &PcaOptions) -> (Vec<f64>, Matrix) {
    let cov = covariance(xc);
    let (values, vectors) = jacobi_eigen(&cov, opts.max_sweeps);
    let d = cov.rows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut comps = Matrix::zeros(k, d);
    for (r, &j) in order.iter().take(k).enumerate() {
        for i in 0..d {
            comps[(r, i)] = vectors[(i, j)];
        }
    }
    (order.iter().take(k).map(|&j| values[j]).collect(), comps)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns unsorted eigenvalues and a matrix whose columns are the matching
/// unit eigenvectors.
pub fn jacobi_eigen(a: &Matrix, max_sweeps: usize) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "jacobi_eigen needs a square matrix");
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    let frob2: f64 = a.as_slice().iter().map(|x| x * x).sum();
    let threshold = (f64::EPSILON * 1e-2) * (f64::EPSILON * 1e-2) * frob2;

    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= threshold || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// `C · Q` for the sample covariance `C = Xcᵀ Xc / (n−1)`; `q` holds one
/// basis vector per row (p × d).
fn covariance_apply(xc: &Matrix, q: &Matrix) -> Matrix {
    let (n, d, p) = (xc.rows(), xc.cols(), q.rows());
    let mut proj = Matrix::zeros(p, n);
    for j in 0..p {
        for r in 0..n {
            proj[(j, r)] = dot(xc.row(r), q.row(j));
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    let mut out = Matrix::zeros(p, d);
    for j in 0..p {
        let row = out.row_mut(j);
        for r in 0..n {
            let w = proj[(j, r)] * scale;
            if w == 0.0 {
                continue;
            }
            for (o, x) in row.iter_mut().zip(xc.row(r)) {
                *o += w * x;
            }
        }
    }
    out
}

/// Modified Gram–Schmidt over rows, run twice. Rows that collapse are
/// replaced by the first standard basis vector that is still independent.
fn orthonormalize_rows(m: &mut Matrix) {
    let (p, d) = (m.rows(), m.cols());
    for _ in 0..2 {
        for i in 0..p {
            for j in 0..i {
                let proj = dot(m.row(i), m.row(j));
                let (head, tail) = m.as_mut_slice().split_at_mut(i * d);
                for (x, y) in tail[..d].iter_mut().zip(&head[j * d..(j + 1) * d]) {
                    *x -= proj * y;
                }
            }
            let nrm = dot(m.row(i), m.row(i)).sqrt();
            if nrm > 1e-150 {
                m.row_mut(i).iter_mut().for_each(|x| *x /= nrm);
                continue;
            }
            for e in 0..d {
                let mut cand = vec![0.0; d];
                cand[e] = 1.0;
                for j in 0..i {
                    let proj = m.row(j)[e];
                    for (c, y) in cand.iter_mut().zip(m.row(j)) {
                        *c -= proj * y;
                    }
                }
                let cn = dot(&cand, &cand).sqrt();
                if cn > 0.5 {
                    for (x, c) in m.row_mut(i).iter_mut().zip(&cand) {
                        *x = c / cn;
                    }
                    break;
                }
            }
        }
    }
}

fn top_k_subspace(xc: &Matrix, k: usize, opts: &PcaOptions) -> Result<(Vec<f64>, Matrix)> {
    let d = xc.cols();
    let p = (k + 8).min(d);
    let mut rng = rand_pcg::Pcg64::seed_from_u64(0x0005_eed0_f9ca);
    let mut q = Matrix::zeros(p, d);
    q.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = rng.random_range(-1.0..1.0));
    orthonormalize_rows(&mut q);

    let mut previous: Option<Vec<f64>> = None;
    for _ in 0..opts.max_sweeps {
        let w = covariance_apply(xc, &q);
        // Rayleigh quotient matrix H = Q C Qᵀ (p × p).
        let mut h = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] = dot(q.row(i), w.row(j));
            }
        }
        for i in 0..p {
            for j in i + 1..p {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let (values, vectors) = jacobi_eigen(&h, opts.max_sweeps);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let ritz: Vec<f64> = order.iter().map(|&j| values[j]).collect();

        let rotate = |basis: &Matrix| {
            let mut out = Matrix::zeros(p, d);
            for (r, &j) in order.iter().enumerate() {
                for i in 0..p {
                    let c = vectors[(i, j)];
                    if c == 0.0 {
                        continue;
                    }
                    for (o, x) in out.row_mut(r).iter_mut().zip(basis.row(i)) {
                        *o += c * x;
                    }
                }
            }
            out
        };

        // Ritz values at round-off level relative to the largest are treated
        // as converged zeros.
        let floor = 1e3 * f64::EPSILON * ritz[0].abs();
        let converged = previous.as_ref().is_some_and(|prev| {
            ritz.iter().zip(prev).take(k).all(|(a, b)| {
                let scale = a.abs().max(b.abs());
                scale <= floor || (a - b).abs() <= opts.tolerance * scale
            })
        });
        if converged {
            let ritz_vectors = rotate(&q);
            let mut comps = Matrix::zeros(k, d);
            for r in 0..k {
                comps.row_mut(r).copy_from_slice(ritz_vectors.row(r));
            }
            return Ok((ritz[..k].to_vec(), comps));
        }
        previous = Some(ritz);
        q = rotate(&w);
        orthonormalize_rows(&mut q);
    }
    Err(Error::Numeric(format!(
        "subspace iteration did not converge in {} sweeps",
        opts.max_sweeps
    )))
}

fn normalize_signs(components: &mut Matrix) {
    for r in 0..components.rows() {
        let row = components.row_mut(r);
        let mut best = 0;
        for (i, x) in row.iter().enumerate() {
            if x.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_orthonormality_error(c: &Matrix) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..c.rows() {
            for j in 0..c.rows() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(c.row(i), c.row(j)) - target).abs());
            }
        }
        worst
    }

    fn random_samples(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(seed);
        // Anisotropic scales give a well separated spectrum.
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| rng.random_range(-1.0..1.0) * (d - j) as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rank_one_line() {
        let samples: Vec<Vec<f64>> = (-3..=3).map(|t| vec![t as f64, 2.0 * t as f64]).collect();
        let m = fit_pca(&samples, 2).unwrap();
        let s5 = 5f64.sqrt();
        assert!((m.components()[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((m.components()[(0, 1)] - 2.0 / s5).abs() < 1e-12);
        assert!(m.eigenvalues()[1].abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction_is_identity() {
        let samples = random_samples(30, 5, 1);
        let m = fit_pca(&samples, 5).unwrap();
        for s in &samples {
            let back = m.reconstruct(&m.project(s).unwrap()).unwrap();
            for (a, b) in back.iter().zip(s) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_cases() {
        let samples = random_samples(40, 6, 2);
        let m = fit_pca(&samples, 3).unwrap();
        assert!(m.project(m.mean()).unwrap().iter().all(|&x| x == 0.0));

        let shifted: Vec<f64> = m.mean().iter().zip(m.components().row(0)).map(|(a, b)| a + b).collect();
        let y = m.project(&shifted).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        assert!(y[1].abs() < 1e-10 && y[2].abs() < 1e-10);

        let mut rng = rand_pcg::Pcg64::seed_from_u64(77);
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = m.project(&v).unwrap();
        for (r, g) in got.iter().enumerate() {
            let mut naive = 0.0;
            for j in 0..6 {
                naive += m.components()[(r, j)] * (v[j] - m.mean()[j]);
            }
            assert!((g - naive).abs() < 1e-12);
        }
        assert!(m.project(&[1.0]).is_err());
    }

    #[test]
    fn k_out_of_range() {
        let samples = random_samples(3, 4, 3);
        assert!(fit_pca(&samples, 0).is_err());
        assert!(fit_pca(&samples, 4).is_err());
        assert!(fit_pca(&samples[..1], 1).is_err());
    }

    #[test]
    fn zero_variance_gives_orthonormal_completion() {
        let samples = vec![vec![1.0, 2.0, 3.0]; 4];
        let m = fit_pca(&samples, 3).unwrap();
        assert!(m.eigenvalues().iter().all(|&l| l == 0.0));
        assert!(max_orthonormality_error(m.components()) < 1e-12);
    }

    #[test]
    fn subspace_iteration_agrees_with_jacobi() {
        let samples = random_samples(60, 20, 4);
        let jac = fit_pca(&samples, 4).unwrap();
        let opts = PcaOptions {
            jacobi_max_dim: 0,
            ..PcaOptions::default()
        };
        let sub = fit_pca_with(&samples, 4, &opts).unwrap();
        assert!(max_orthonormality_error(sub.components()) < 1e-8);
        for r in 0..4 {
            let rel = (jac.eigenvalues()[r] - sub.eigenvalues()[r]).abs() / jac.eigenvalues()[r];
            assert!(rel < 1e-8, "eigenvalue {r}: rel err {rel}");
            let overlap = dot(jac.components().row(r), sub.components().row(r));
            assert!((overlap - 1.0).abs() < 1e-6, "component {r}: overlap {overlap}");
        }
    }

    #[test]
    fn subspace_iteration_handles_rank_deficiency() {
        // 5 samples in 12 dimensions: rank 4 covariance, ask for all 5.
        let samples = random_samples(5, 12, 9);
        let opts = PcaOptions {
            jacobi_max_dim: 0,
            ..PcaOptions::default()
        };
        let m = fit_pca_with(&samples, 5, &opts).unwrap();
        assert!(max_orthonormality_error(m.components()) < 1e-8);
        assert!(m.eigenvalues()[4] < 1e-8);
    }

    #[test]
    fn binary_round_trip() {
        let m = fit_pca(&random_samples(20, 5, 5), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pca.bin");
        m.write(&p).unwrap();
        assert_eq!(PcaModel::read(&p).unwrap(), m);
    }
}
