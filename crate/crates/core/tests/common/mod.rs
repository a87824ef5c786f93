//! Shared fixtures and independent oracles for the integration suites.
//!
//! Everything here recomputes expected values from first principles (double
//! loops, characteristic polynomials, direct matrix products), deliberately
//! avoiding the code paths under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use qldadr::lda::{Dataset, ScatterModel};
use qldadr::linalg::SymMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
    let m = random_matrix(rng, dim, dim);
    SymMatrix::from_dmatrix(&(0.5 * (&m + m.transpose()))).unwrap()
}

/// Orthonormal matrix from the QR factorization of a random square matrix.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    loop {
        let m = random_matrix(rng, dim, dim);
        let qr = m.qr();
        let q = qr.q();
        if qr.r().diagonal().iter().all(|x| x.abs() > 1e-6) {
            return q;
        }
    }
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

/// Random dataset with round-robin labels over `n` classes.
pub fn random_dataset(rng: &mut ChaCha8Rng, m: usize, d: usize, n: usize) -> Dataset {
    let samples = random_matrix(rng, m, d);
    let labels = (0..m).map(|i| (i % n) + 1).collect();
    Dataset::new(samples, labels).unwrap()
}

// ---------------------------------------------------------------------------
// scatter oracles: literal double loops
// ---------------------------------------------------------------------------

pub fn brute_force_within(ds: &Dataset, alpha: f64) -> (DMatrix<f64>, f64) {
    let m = ds.n_samples();
    let dim = ds.n_features();
    let n = ds.n_classes();
    let mut centroid_sum = vec![vec![0.0; dim]; n];
    let mut counts = vec![0usize; n];
    for i in 0..m {
        let c = ds.labels()[i] - 1;
        counts[c] += 1;
        for j in 0..dim {
            centroid_sum[c][j] += ds.samples()[(i, j)];
        }
    }
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    let mut total = 0.0;
    for i in 0..m {
        let c = ds.labels()[i] - 1;
        let dev: Vec<f64> = (0..dim)
            .map(|j| ds.samples()[(i, j)] - centroid_sum[c][j] / counts[c] as f64 + alpha)
            .collect();
        for a in 0..dim {
            for b in 0..dim {
                acc[(a, b)] += dev[a] * dev[b];
            }
        }
        total += dev.iter().map(|x| x * x).sum::<f64>();
    }
    (acc / total, total)
}

pub fn brute_force_between(ds: &Dataset) -> (DMatrix<f64>, f64) {
    let m = ds.n_samples();
    let dim = ds.n_features();
    let n = ds.n_classes();
    let mut centroid_sum = vec![vec![0.0; dim]; n];
    let mut counts = vec![0usize; n];
    let mut mean = vec![0.0; dim];
    for i in 0..m {
        let c = ds.labels()[i] - 1;
        counts[c] += 1;
        for j in 0..dim {
            centroid_sum[c][j] += ds.samples()[(i, j)];
            mean[j] += ds.samples()[(i, j)] / m as f64;
        }
    }
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    let mut total = 0.0;
    for c in 0..n {
        let dev: Vec<f64> =
            (0..dim).map(|j| centroid_sum[c][j] / counts[c] as f64 - mean[j]).collect();
        for a in 0..dim {
            for b in 0..dim {
                acc[(a, b)] += dev[a] * dev[b];
            }
        }
        total += dev.iter().map(|x| x * x).sum::<f64>();
    }
    (acc / total, total)
}

// ---------------------------------------------------------------------------
// spectrum oracle: characteristic polynomial + Durand-Kerner roots
// ---------------------------------------------------------------------------

/// Characteristic polynomial coefficients by the Faddeev-LeVerrier
/// recursion: `p(x) = c[0] x^n + c[1] x^(n-1) + ... + c[n]`, `c[0] = 1`.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coefficients = vec![1.0];
    let mut m = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        let am = a * &m;
        let ck = -am.trace() / k as f64;
        coefficients.push(ck);
        m = &am + DMatrix::<f64>::identity(n, n) * ck;
    }
    coefficients
}

/// All complex roots of a real polynomial by Durand-Kerner iteration.
pub fn poly_roots(coefficients: &[f64]) -> Vec<Complex64> {
    let degree = coefficients.len() - 1;
    let monic: Vec<Complex64> = coefficients
        .iter()
        .map(|&c| Complex64::new(c / coefficients[0], 0.0))
        .collect();
    let eval = |x: Complex64| -> Complex64 {
        monic.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * x + c)
    };
    let mut roots: Vec<Complex64> = (0..degree)
        .map(|k| Complex64::new(0.4, 0.9).powu(k as u32 + 1))
        .collect();
    for _ in 0..500 {
        let mut shift = 0.0f64;
        let snapshot = roots.clone();
        for i in 0..degree {
            let mut denom = Complex64::new(1.0, 0.0);
            for (j, &r) in snapshot.iter().enumerate() {
                if j != i {
                    denom *= snapshot[i] - r;
                }
            }
            let delta = eval(snapshot[i]) / denom;
            roots[i] -= delta;
            shift = shift.max(delta.norm());
        }
        if shift < 1e-14 {
            break;
        }
    }
    roots
}

/// Descending real parts of the characteristic-polynomial roots.
pub fn spectrum_by_char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = poly_roots(&char_poly(a)).iter().map(|r| r.re).collect();
    values.sort_by(|p, q| q.partial_cmp(p).unwrap());
    values
}

/// Descending eigenvalue real parts of a general (non-symmetric) matrix via
/// the library's Schur-based solver; independent of the symmetric path.
pub fn general_spectrum(a: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = a.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
    values.sort_by(|p, q| q.partial_cmp(p).unwrap());
    values
}

// ---------------------------------------------------------------------------
// synthetic fixtures with chosen spectra
// ---------------------------------------------------------------------------

/// A model whose scatter-root and reduction-operator spectra are chosen
/// up front, plus a random dataset to run through the pipeline.
pub struct Fixture {
    pub ds: Dataset,
    pub model: ScatterModel,
    /// Eigenvalues of the scatter square root, descending.
    pub sigma: Vec<f64>,
    /// Spectrum of the reduction operator, descending, summing to one.
    pub lambda: Vec<f64>,
    /// Columns are the scatter eigenbasis.
    pub u_basis: DMatrix<f64>,
    /// Columns are the reduction-operator eigenbasis.
    pub v_basis: DMatrix<f64>,
    /// Number of nonzero reduction eigenvalues (the retained dimension when
    /// the threshold selects them all).
    pub rank: usize,
}

pub struct FixtureSpec {
    pub seed: u64,
    pub dim: usize,
    pub samples: usize,
    pub rank: usize,
    /// Grid `2^(bits-1)` on which the scatter-root eigenvalues live; `None`
    /// draws them continuously.
    pub sigma_bits: Option<usize>,
    /// Grid for the reduction spectrum; `None` draws a well-separated
    /// generic spectrum.
    pub lambda_bits: Option<usize>,
}

pub fn build_fixture(spec: &FixtureSpec) -> Fixture {
    let mut rng = rng(spec.seed);
    let dim = spec.dim;
    let rank = spec.rank;
    assert!(rank >= 1 && rank < dim);

    let u_basis = random_orthonormal(&mut rng, dim);
    let v_basis = random_orthonormal(&mut rng, dim);

    let sigma: Vec<f64> = match spec.sigma_bits {
        Some(bits) => {
            let grid = (1u64 << (bits - 1)) as f64;
            let lo = (grid * 0.3).ceil() as u64;
            let hi = grid as u64;
            let mut s: Vec<f64> =
                (0..dim).map(|_| rng.gen_range(lo..=hi) as f64 / grid).collect();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s
        }
        None => {
            let mut s: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..1.0)).collect();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s
        }
    };

    let lambda: Vec<f64> = match spec.lambda_bits {
        Some(bits) => {
            let grid = 1u64 << (bits - 1);
            let floor = (grid as f64 * 0.08).ceil() as u64;
            let parts = loop {
                let mut cuts: Vec<u64> = (0..rank - 1)
                    .map(|_| rng.gen_range(floor..=(grid - floor * (rank as u64 - 1))))
                    .collect();
                cuts.sort_unstable();
                let mut parts = Vec::with_capacity(rank);
                let mut last = 0;
                for &c in &cuts {
                    parts.push(c - last);
                    last = c;
                }
                parts.push(grid - last);
                parts.sort_unstable_by(|a, b| b.cmp(a));
                let distinct = parts.windows(2).all(|w| w[0] != w[1]);
                if distinct && *parts.last().unwrap() >= floor {
                    break parts;
                }
            };
            let mut lambda: Vec<f64> =
                parts.iter().map(|&p| p as f64 / grid as f64).collect();
            lambda.extend(std::iter::repeat(0.0).take(dim - rank));
            lambda
        }
        None => {
            // well-separated generic spectrum: distinct patterns from 4 bits up
            let base = [0.575, 0.3, 0.125, 0.0625, 0.03125];
            assert!(rank <= base.len());
            let mut lambda: Vec<f64> = base[..rank]
                .iter()
                .map(|&b| b * rng.gen_range(0.97..1.03))
                .collect();
            let total: f64 = lambda.iter().sum();
            for v in lambda.iter_mut() {
                *v /= total;
            }
            lambda.sort_by(|a, b| b.partial_cmp(a).unwrap());
            lambda.extend(std::iter::repeat(0.0).take(dim - rank));
            lambda
        }
    };

    let sigma_diag = DMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        sigma.iter().map(|s| s * s),
    ));
    let sw = &u_basis * sigma_diag * u_basis.transpose();
    let sw = SymMatrix::from_dmatrix(&(0.5 * (&sw + sw.transpose()))).unwrap();

    let sqrt_diag =
        DMatrix::from_diagonal(&DVector::from_iterator(dim, sigma.iter().copied()));
    let sw_half = &u_basis * sqrt_diag * u_basis.transpose();
    let rho0 = &v_basis
        * DMatrix::from_diagonal(&DVector::from_iterator(dim, lambda.iter().copied()))
        * v_basis.transpose();
    let sb_raw = &sw_half * rho0 * &sw_half;
    let sb_raw = 0.5 * (&sb_raw + sb_raw.transpose());
    let sb = &sb_raw / sb_raw.trace();
    let sb = SymMatrix::from_dmatrix(&sb).unwrap();

    let n_classes = rank + 1;
    let centroids = random_matrix(&mut rng, n_classes, dim);
    let global_mean = DVector::zeros(dim);
    let model =
        ScatterModel::from_parts(sw, sb, 1.0, 1.0, 0.0, centroids, global_mean).unwrap();

    let ds = random_dataset(&mut rng, spec.samples, dim, n_classes);
    Fixture { ds, model, sigma, lambda, u_basis, v_basis, rank }
}

// ---------------------------------------------------------------------------
// closed forms computed from fixture ground truth
// ---------------------------------------------------------------------------

/// Round a value to the phase grid the register resolves:
/// `round(value * t / (2 pi) * 2^bits)`, reported back as a value.
pub fn grid_round(value: f64, t: f64, bits: usize) -> f64 {
    let ratio = t / (2.0 * std::f64::consts::PI);
    let grid = (1u64 << bits) as f64;
    (value * ratio * grid).round() / grid / ratio
}

impl Fixture {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// `S_W^{1/2}` with eigenvalues rounded to the register grid.
    pub fn rounded_sw_half(&self, t: f64, bits: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let rounded = DMatrix::from_diagonal(&DVector::from_iterator(
            dim,
            self.sigma.iter().map(|&s| grid_round(s, t, bits)),
        ));
        &self.u_basis * rounded * self.u_basis.transpose()
    }

    /// Default rotation constant `1 / sigma_max` on the rounded spectrum.
    pub fn c1(&self, t: f64, bits: usize) -> f64 {
        let rounded_max = self
            .sigma
            .iter()
            .map(|&s| grid_round(s, t, bits))
            .fold(0.0f64, f64::max);
        1.0 / self.sigma[0].max(rounded_max)
    }

    /// Coefficient matrix the pipeline encodes, `y_ij = v_j^T S_hat x_i`,
    /// over all `D` columns.
    pub fn y_full(&self, t: f64, sigma_bits: usize) -> DMatrix<f64> {
        self.ds.samples() * self.rounded_sw_half(t, sigma_bits) * &self.v_basis
    }

    /// Success probability of the intermediate post-selection:
    /// `c1^2 * |X S_hat|_F^2 / |X|_F^2`.
    pub fn p1_closed_form(&self, t: f64, sigma_bits: usize) -> f64 {
        let c1 = self.c1(t, sigma_bits);
        let weighted = self.ds.samples() * self.rounded_sw_half(t, sigma_bits);
        c1 * c1 * weighted.norm_squared() / self.ds.samples().norm_squared()
    }

    /// Success probability of the interception: retained column mass over
    /// total mass of the encoded coefficients.
    pub fn p2_closed_form(&self, t: f64, sigma_bits: usize, d: usize) -> f64 {
        let y = self.y_full(t, sigma_bits);
        let kept: f64 = y.columns(0, d).norm_squared();
        kept / y.norm_squared()
    }
}

/// Flatten a matrix row-major onto a `2^mi x 2^mf` grid and normalize.
pub fn flatten_normalized(y: &DMatrix<f64>, rows: usize, cols: usize) -> Vec<Complex64> {
    let mut amps = vec![Complex64::new(0.0, 0.0); rows * cols];
    let norm = y.norm();
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            amps[i * cols + j] = Complex64::new(y[(i, j)] / norm, 0.0);
        }
    }
    amps
}

pub fn pow2_at_least(x: usize) -> usize {
    let mut p = 1usize;
    while p < x {
        p <<= 1;
    }
    p.max(2)
}

/// Largest absolute difference between two amplitude vectors.
pub fn max_amp_delta(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Inner-product magnitude of two raw amplitude vectors.
pub fn overlap(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm()
}

/// Least-squares goodness of fit of `y` against a linear model in `x`.
pub fn linear_fit_r_squared(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}
