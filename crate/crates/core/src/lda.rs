//! Classical LDA baseline and exact oracle.
//!
//! Scatter operators are built in density form: each is normalized by the
//! total squared deviation mass, so a freshly constructed model has
//! unit-trace `sw` and `sb`. The shadow spectrum is the eigensystem of
//! `S_W^{-1/2} S_B S_W^{-1/2}`; its eigenvectors `v_j` relate to the LDA
//! directions by `omega_j = S_W^{-1/2} v_j`.
//!
//! Two projection variants are provided. `project_pipeline_oracle` computes
//! `y_ij = v_j^T S_W^{1/2} x_i`, the coefficients the quantum pipeline
//! actually encodes. `project_eq9` computes `y_ij = omega_j^T x_i` with unit
//! `omega_j`, the textbook LDA output. They coincide whenever `S_W` is a
//! positive multiple of the identity and differ otherwise; the pipeline is
//! certified against the first.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{build_rho, mat_power_half, sym_eig, ClampPolicy, HalfPower, SymMatrix};

/// Smallest admissible `lambda_min(sw) / trace(sw)` before a ridge is added.
const SW_FLOOR_RATIO: f64 = 1e-8;

/// Labeled sample matrix. Rows are samples, labels are class ids `1..=n`.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: DMatrix<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(samples: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let m = samples.nrows();
        let d = samples.ncols();
        if labels.len() != m {
            return Err(Error::InvalidDataset(format!(
                "{} rows but {} labels",
                m,
                labels.len()
            )));
        }
        if d < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 features, got {d}")));
        }
        let n = labels.iter().copied().max().unwrap_or(0);
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 classes, got {n}")));
        }
        if m < n {
            return Err(Error::InvalidDataset(format!("{m} samples cannot cover {n} classes")));
        }
        let mut seen = vec![false; n + 1];
        for &label in &labels {
            if label == 0 || label > n {
                return Err(Error::InvalidDataset(format!(
                    "label {label} outside 1..={n}"
                )));
            }
            seen[label] = true;
        }
        if let Some(missing) = (1..=n).find(|&c| !seen[c]) {
            return Err(Error::InvalidDataset(format!("class {missing} has no samples")));
        }
        for i in 0..m {
            if samples.row(i).iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidDataset(format!(
                    "row {i} is all-zero; norm-weighted state preparation needs nonzero rows"
                )));
            }
        }
        Ok(Dataset { samples, labels, n_classes: n })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Per-class centroids, one row per class id.
    pub fn centroids(&self) -> DMatrix<f64> {
        let d = self.n_features();
        let mut sums = DMatrix::<f64>::zeros(self.n_classes, d);
        let mut counts = vec![0usize; self.n_classes];
        for (i, &label) in self.labels.iter().enumerate() {
            counts[label - 1] += 1;
            for j in 0..d {
                sums[(label - 1, j)] += self.samples[(i, j)];
            }
        }
        for c in 0..self.n_classes {
            let k = counts[c] as f64;
            for j in 0..d {
                sums[(c, j)] /= k;
            }
        }
        sums
    }

    /// Mean of all data points.
    pub fn global_mean(&self) -> DVector<f64> {
        let m = self.n_samples() as f64;
        let mut mean = DVector::<f64>::zeros(self.n_features());
        for i in 0..self.n_samples() {
            for j in 0..self.n_features() {
                mean[j] += self.samples[(i, j)];
            }
        }
        mean / m
    }
}

/// Regularized scatter operators with their normalization constants.
#[derive(Debug, Clone)]
pub struct ScatterModel {
    pub sw: SymMatrix,
    pub sb: SymMatrix,
    pub a_norm: f64,
    pub b_norm: f64,
    pub alpha: f64,
    pub centroids: DMatrix<f64>,
    pub global_mean: DVector<f64>,
}

impl ScatterModel {
    /// Build both scatter operators from a dataset.
    ///
    /// If the vector-alpha regularization leaves `sw` with
    /// `lambda_min < 1e-8 * trace`, a diagonal ridge is added and the matrix
    /// renormalized to unit trace; the returned warnings record it.
    pub fn from_dataset(ds: &Dataset, alpha: f64) -> Result<(Self, Vec<String>)> {
        let (mut sw, a_norm) = within_scatter(ds, alpha)?;
        let (sb, b_norm) = between_scatter(ds)?;
        let mut warnings = Vec::new();

        let eig = sym_eig(&sw)?;
        let min = *eig.values.last().expect("non-empty spectrum");
        let trace = sw.trace();
        if min < SW_FLOOR_RATIO * trace {
            let ridge = 2.0 * SW_FLOOR_RATIO * trace;
            let dim = sw.dim();
            let mut m = sw.to_dmatrix();
            for i in 0..dim {
                m[(i, i)] += ridge;
            }
            m /= 1.0 + ridge * dim as f64 / trace;
            sw = SymMatrix::from_dmatrix(&m)?;
            warnings.push(format!(
                "within-class scatter nearly singular (lambda_min = {min:.3e}); \
                 added diagonal ridge {ridge:.3e} and renormalized the trace"
            ));
            let check = sym_eig(&sw)?;
            let new_min = *check.values.last().expect("non-empty spectrum");
            if new_min < SW_FLOOR_RATIO * sw.trace() {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue: new_min });
            }
        }

        let model = ScatterModel {
            sw,
            sb,
            a_norm,
            b_norm,
            alpha,
            centroids: ds.centroids(),
            global_mean: ds.global_mean(),
        };
        Ok((model, warnings))
    }

    /// Assemble a model directly from parts. Intended for synthetic fixtures
    /// where the spectra are chosen first; `centroids` only supplies the
    /// class count for the dimension cap.
    pub fn from_parts(
        sw: SymMatrix,
        sb: SymMatrix,
        a_norm: f64,
        b_norm: f64,
        alpha: f64,
        centroids: DMatrix<f64>,
        global_mean: DVector<f64>,
    ) -> Result<Self> {
        if sw.dim() != sb.dim() || centroids.ncols() != sw.dim() || global_mean.len() != sw.dim() {
            return Err(Error::DimensionMismatch {
                context: "scatter model parts disagree on feature dimension".into(),
            });
        }
        Ok(ScatterModel { sw, sb, a_norm, b_norm, alpha, centroids, global_mean })
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.nrows()
    }
}

/// Descending eigenpairs of the reduction operator plus the selected dimension.
#[derive(Debug, Clone)]
pub struct ShadowSpectrum {
    /// Full spectrum, descending, summing to one.
    pub values: Vec<f64>,
    /// `vectors[j]` pairs with `values[j]`.
    pub vectors: Vec<DVector<f64>>,
    /// Number of retained components.
    pub d: usize,
    pub threshold: f64,
}

impl ShadowSpectrum {
    /// Retained eigenvectors as columns of a `D x d` matrix.
    pub fn kept_basis(&self) -> DMatrix<f64> {
        let dim = self.vectors[0].len();
        DMatrix::from_fn(dim, self.d, |r, c| self.vectors[c][r])
    }
}

/// Within-class scatter in density form.
///
/// Deviations are regularized per component: `d_i = x_i - mu_{c_i} + alpha`.
/// Returns `(sum_i d_i d_i^T / A, A)` with `A = sum_i |d_i|^2`.
pub fn within_scatter(ds: &Dataset, alpha: f64) -> Result<(SymMatrix, f64)> {
    if alpha < 0.0 {
        return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
    }
    let centroids = ds.centroids();
    let d = ds.n_features();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut a_norm = 0.0;
    for (i, &label) in ds.labels().iter().enumerate() {
        let mut dev = DVector::<f64>::zeros(d);
        for j in 0..d {
            dev[j] = ds.samples()[(i, j)] - centroids[(label - 1, j)] + alpha;
        }
        a_norm += dev.norm_squared();
        acc.ger(1.0, &dev, &dev, 1.0);
    }
    if a_norm == 0.0 {
        return Err(Error::DegenerateWithinScatter);
    }
    acc /= a_norm;
    Ok((SymMatrix::from_dmatrix(&acc)?, a_norm))
}

/// Between-class scatter in density form.
///
/// Returns `(sum_c (mu_c - o)(mu_c - o)^T / B, B)` with
/// `B = sum_c |mu_c - o|^2`; rank is at most `n - 1`.
pub fn between_scatter(ds: &Dataset) -> Result<(SymMatrix, f64)> {
    let centroids = ds.centroids();
    let mean = ds.global_mean();
    let d = ds.n_features();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut b_norm = 0.0;
    for c in 0..ds.n_classes() {
        let mut dev = DVector::<f64>::zeros(d);
        for j in 0..d {
            dev[j] = centroids[(c, j)] - mean[j];
        }
        b_norm += dev.norm_squared();
        acc.ger(1.0, &dev, &dev, 1.0);
    }
    if b_norm < 1e-30 {
        return Err(Error::NoBetweenClassVariance);
    }
    acc /= b_norm;
    Ok((SymMatrix::from_dmatrix(&acc)?, b_norm))
}

/// Solve the shadow eigenproblem and select the retained dimension.
///
/// `d` is the smallest prefix whose eigenvalue mass reaches `threshold`,
/// capped at `n - 1`. An unreachable threshold degrades to the cap with a
/// warning rather than an error.
pub fn solve_shadow(
    model: &ScatterModel,
    clamp: ClampPolicy,
    threshold: f64,
) -> Result<(ShadowSpectrum, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let rho = build_rho(&model.sw, &model.sb, clamp)?;
    let eig = sym_eig(&rho)?;
    let mut values = eig.values;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue: *v });
            }
            *v = 0.0;
        }
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: total - 1.0 });
    }

    let mut warnings = Vec::new();
    let mut cumulative = 0.0;
    let mut d_threshold = values.len();
    for (j, v) in values.iter().enumerate() {
        cumulative += v;
        if cumulative >= threshold - 1e-12 {
            d_threshold = j + 1;
            break;
        }
    }
    let cap = model.n_classes() - 1;
    let d = d_threshold.min(cap);
    if d < d_threshold {
        let reached: f64 = values[..d].iter().sum();
        warnings.push(format!(
            "eigenvalue mass {reached:.6} at the dimension cap d = {d} stays below the \
             threshold {threshold}; using the cap"
        ));
    }

    Ok((ShadowSpectrum { values, vectors: eig.vectors, d, threshold }, warnings))
}

/// Coefficients the quantum pipeline encodes: `y_ij = v_j^T S_W^{1/2} x_i`.
pub fn project_pipeline_oracle(
    ds: &Dataset,
    model: &ScatterModel,
    spectrum: &ShadowSpectrum,
) -> Result<DMatrix<f64>> {
    let sw_half = mat_power_half(&model.sw, HalfPower::Sqrt, ClampPolicy::inactive())?;
    Ok(ds.samples() * sw_half.to_dmatrix() * spectrum.kept_basis())
}

/// Textbook LDA projection: `y_ij = omega_j^T x_i` with
/// `omega_j = S_W^{-1/2} v_j` normalized to unit length.
pub fn project_eq9(
    ds: &Dataset,
    model: &ScatterModel,
    spectrum: &ShadowSpectrum,
) -> Result<DMatrix<f64>> {
    let inv_half = mat_power_half(&model.sw, HalfPower::InvSqrt, ClampPolicy::inactive())?;
    let mut basis = inv_half.to_dmatrix() * spectrum.kept_basis();
    for mut col in basis.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: 0.0 });
        }
        col /= norm;
    }
    Ok(ds.samples() * basis)
}

/// Discriminant ratio `(w^T S_B w) / (w^T S_W w)` for a unit direction.
pub fn discriminant_objective(model: &ScatterModel, w: &DVector<f64>) -> Result<f64> {
    if (w.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "direction must be unit length, |w| = {}",
            w.norm()
        )));
    }
    let denominator = (model.sw.apply(w)).dot(w);
    if denominator <= 0.0 {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: denominator });
    }
    Ok((model.sb.apply(w)).dot(w) / denominator)
}
