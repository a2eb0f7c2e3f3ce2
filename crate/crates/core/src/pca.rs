//! Principal component reduction of weight matrices. Rows are samples,
//! columns are the dimensions being reduced.

use crate::codec::{Reader, Writer};
use crate::error::{ensure, Result, WingsError};
use crate::linalg::{gemm, gemm_nt, jacobi_eig, Matrix};

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retention {
    /// Smallest `k` whose cumulative explained variance reaches the target.
    /// `1.0` keeps every dimension.
    Eta(f64),
    /// Exactly `k` components (clamped to the number of positive eigenvalues).
    K(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f32>,
    /// `n x k`, orthonormal columns.
    pub components: Matrix,
    /// The `k` retained eigenvalues, descending.
    pub eigenvalues: Vec<f32>,
    pub eta_achieved: f64,
}

/// Result of [`fit_pca`].
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub basis: PcaBasis,
    /// `(w - mean) * components`, `rows x k`.
    pub reduced: Matrix,
    /// Full covariance spectrum, descending, length `n`.
    pub spectrum: Vec<f64>,
}

impl PcaBasis {
    /// Input dimension `n`.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.cols()
    }

    /// Stored parameters: mean and component matrix.
    pub fn param_count(&self) -> usize {
        self.dim() + self.components.len()
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 + 4 * (self.dim() + self.components.len() + self.eigenvalues.len()) + 8
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.dim(self.dim());
        w.dim(self.k());
        w.f32s(&self.mean);
        w.f32s(self.components.data());
        w.f32s(&self.eigenvalues);
        w.bytes(&self.eta_achieved.to_le_bytes());
    }

    pub(crate) fn decode(r: &mut Reader, strict: bool) -> Result<PcaBasis> {
        let at = r.offset();
        let n = r.dim("basis n")?;
        let k = r.dim("basis k")?;
        if k > n || n == 0 {
            return Err(WingsError::format(
                at,
                format!("invalid basis shape n={n} k={k}"),
            ));
        }
        let mean = r.f32s(n, "basis mean", strict)?;
        let comps = r.f32s(n * k, "basis components", strict)?;
        let eigenvalues = r.f32s(k, "basis eigenvalues", strict)?;
        let eta = f64::from_le_bytes(r.take(8, "eta")?.try_into().unwrap());
        Ok(PcaBasis {
            mean,
            components: Matrix::from_raw(n, k, comps),
            eigenvalues,
            eta_achieved: eta,
        })
    }
}

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const POSITIVE_REL: f64 = 1e-9;

/// Fit a basis on the rows of `w`.
///
/// Covariance is normalized by the row count. When there are fewer rows than
/// columns the eigenvectors come from the `m x m` Gram matrix instead of the
/// `n x n` covariance; both share the nonzero spectrum.
pub fn fit_pca(w: &Matrix, retention: Retention) -> Result<PcaFit> {
    let (m, n) = w.shape();
    ensure!(m >= 2, "PCA needs at least 2 rows, got {m}");
    ensure!(n >= 1, "PCA needs at least 1 column");
    ensure!(w.is_finite(), "PCA input must be finite");
    let full = match retention {
        Retention::Eta(e) => {
            ensure!(e > 0.0 && e <= 1.0, "eta must lie in (0, 1], got {e}");
            e >= 1.0
        }
        Retention::K(k) => {
            ensure!(k >= 1 && k <= n, "k must lie in [1, {n}], got {k}");
            false
        }
    };

    let mut mean = vec![0.0f64; n];
    for r in 0..m {
        for (acc, &v) in mean.iter_mut().zip(w.row(r)) {
            *acc += v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut x = vec![0.0f64; m * n];
    for r in 0..m {
        for c in 0..n {
            x[r * n + c] = w.get(r, c) as f64 - mean[c];
        }
    }

    // eigenpairs: values descending, vectors as n-dim columns (only as many
    // as can be determined)
    let (spectrum, vectors): (Vec<f64>, Vec<Vec<f64>>) = if m < n && !full {
        let mut g = vec![0.0f64; m * m];
        for i in 0..m {
            for j in i..m {
                let v: f64 = (0..n).map(|c| x[i * n + c] * x[j * n + c]).sum::<f64>() / m as f64;
                g[i * m + j] = v;
                g[j * m + i] = v;
            }
        }
        let (vals, u) = jacobi_eig(g, m);
        let lmax = vals.first().copied().unwrap_or(0.0).max(0.0);
        let mut vecs = Vec::new();
        for (i, &l) in vals.iter().enumerate() {
            if !(l > POSITIVE_REL * lmax && lmax > 0.0) {
                break;
            }
            // v = Xᵀ u / sqrt(m λ)
            let mut v = vec![0.0f64; n];
            for r in 0..m {
                let ur = u[r * m + i];
                for c in 0..n {
                    v[c] += x[r * n + c] * ur;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
        let mut spectrum = vals;
        spectrum.resize(n, 0.0);
        (spectrum, vecs)
    } else {
        let mut cov = vec![0.0f64; n * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            for i in 0..n {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                for j in i..n {
                    cov[i * n + j] += xi * row[j];
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let v = cov[i * n + j] / m as f64;
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
        }
        let (vals, v) = jacobi_eig(cov, n);
        let vecs = (0..n)
            .map(|i| (0..n).map(|r| v[r * n + i]).collect())
            .collect();
        (vals, vecs)
    };

    let lmax = spectrum.first().copied().unwrap_or(0.0).max(0.0);
    let positive = spectrum
        .iter()
        .take_while(|&&l| lmax > 0.0 && l > POSITIVE_REL * lmax)
        .count();
    let total: f64 = spectrum.iter().map(|l| l.max(0.0)).sum();
    let k = match retention {
        Retention::Eta(_) if full => n,
        Retention::Eta(eta) => {
            if positive == 0 {
                return Err(WingsError::Degenerate(
                    "all rows are identical, no variance to retain".into(),
                ));
            }
            let mut cum = 0.0;
            let mut k = n;
            for (i, l) in spectrum.iter().enumerate() {
                cum += l.max(0.0);
                if cum / total >= eta - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k.min(positive)
        }
        Retention::K(k) => {
            if positive == 0 {
                return Err(WingsError::Degenerate(
                    "all rows are identical, no components to keep".into(),
                ));
            }
            k.min(positive)
        }
    };
    let eta_achieved = if total > 0.0 {
        spectrum[..k].iter().map(|l| l.max(0.0)).sum::<f64>() / total
    } else {
        1.0
    };

    let mut comps = vec![0.0f32; n * k];
    for (j, v) in vectors.iter().take(k).enumerate() {
        let mut big = 0;
        for c in 0..n {
            if v[c].abs() > v[big].abs() {
                big = c;
            }
        }
        let sign = if v[big] < 0.0 { -1.0 } else { 1.0 };
        for c in 0..n {
            comps[c * k + j] = (sign * v[c]) as f32;
        }
    }
    let basis = PcaBasis {
        mean: mean.iter().map(|&v| v as f32).collect(),
        components: Matrix::from_raw(n, k, comps),
        eigenvalues: spectrum[..k].iter().map(|&l| l as f32).collect(),
        eta_achieved,
    };
    let reduced = project(&basis, w);
    Ok(PcaFit {
        basis,
        reduced,
        spectrum,
    })
}

fn project(basis: &PcaBasis, w: &Matrix) -> Matrix {
    let mut centered = w.clone();
    for r in 0..centered.rows() {
        for (v, mu) in centered.row_mut(r).iter_mut().zip(&basis.mean) {
            *v -= mu;
        }
    }
    gemm(&centered, &basis.components)
}

/// `(w - mean) * components`.
pub fn transform(basis: &PcaBasis, w: &Matrix) -> Result<Matrix> {
    ensure!(
        w.cols() == basis.dim(),
        "transform expects {} columns, got {}",
        basis.dim(),
        w.cols()
    );
    Ok(project(basis, w))
}

/// `reduced * componentsᵀ + mean`.
pub fn inverse_transform(basis: &PcaBasis, reduced: &Matrix) -> Result<Matrix> {
    ensure!(
        reduced.cols() == basis.k(),
        "inverse transform expects {} columns, got {}",
        basis.k(),
        reduced.cols()
    );
    let mut out = gemm_nt(reduced, &basis.components);
    for r in 0..out.rows() {
        for (v, mu) in out.row_mut(r).iter_mut().zip(&basis.mean) {
            *v += mu;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use crate::rng::Rng;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| r.uniform(-1.0, 1.0))
    }

    /// Matrix with a decaying spectrum so eta targets pick interesting k.
    fn decaying(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, c| r.uniform(-1.0, 1.0) / (1.0 + c as f32))
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let num: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
            .sum();
        (num / a.frobenius_norm().powi(2)).sqrt()
    }

    fn covariance(w: &Matrix) -> Matrix {
        let (m, n) = w.shape();
        let mean: Vec<f64> = (0..n)
            .map(|c| (0..m).map(|r| w.get(r, c) as f64).sum::<f64>() / m as f64)
            .collect();
        Matrix::from_fn(n, n, |i, j| {
            ((0..m)
                .map(|r| (w.get(r, i) as f64 - mean[i]) * (w.get(r, j) as f64 - mean[j]))
                .sum::<f64>()
                / m as f64) as f32
        })
    }

    #[test]
    fn rank_one_keeps_one_component() {
        let u = [1.0f32, -2.0, 0.5, 3.0, 1.5];
        let v = [0.3f32, 1.0, -0.7, 2.0];
        let w = Matrix::from_fn(5, 4, |i, j| u[i] * v[j]);
        let fit = fit_pca(&w, Retention::Eta(0.9)).unwrap();
        assert_eq!(fit.basis.k(), 1);
        assert!((fit.basis.eta_achieved - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_retention_round_trip() {
        let w = random(8, 8, 1);
        let fit = fit_pca(&w, Retention::Eta(1.0)).unwrap();
        assert_eq!(fit.basis.k(), 8);
        let back = inverse_transform(&fit.basis, &fit.reduced).unwrap();
        assert!(rel_err(&w, &back) <= 1e-4);
    }

    #[test]
    fn k_matches_brute_force_scan() {
        let w = decaying(50, 20, 2);
        let fit = fit_pca(&w, Retention::Eta(0.9)).unwrap();
        let eig = sym_eig(&covariance(&w)).unwrap();
        let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
        let mut cum = 0.0;
        let mut k = 0;
        for l in &eig.eigenvalues {
            cum += l.max(0.0);
            k += 1;
            if cum / total >= 0.9 {
                break;
            }
        }
        assert_eq!(fit.basis.k(), k);
        assert!(k > 1 && k < 20);
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        // 6 rows, 15 cols: eigenvectors from the Gram matrix
        let w = decaying(6, 15, 3);
        let gram = fit_pca(&w, Retention::K(4)).unwrap();
        let cov = sym_eig(&covariance(&w)).unwrap();
        for j in 0..4 {
            assert!((gram.spectrum[j] - cov.eigenvalues[j]).abs() < 1e-5);
            let dot: f64 = (0..15)
                .map(|r| gram.basis.components.get(r, j) as f64 * cov.eigenvectors.get(r, j) as f64)
                .sum();
            assert!((dot - 1.0).abs() < 1e-3, "component {j}: {dot}");
        }
    }

    #[test]
    fn all_equal_rows_are_degenerate() {
        let w = Matrix::from_fn(4, 3, |_, c| c as f32);
        assert!(matches!(
            fit_pca(&w, Retention::Eta(0.9)),
            Err(WingsError::Degenerate(_))
        ));
        // full retention still works
        assert_eq!(fit_pca(&w, Retention::Eta(1.0)).unwrap().basis.k(), 3);
    }

    #[test]
    fn rank_deficient_clamps_k() {
        let u = [1.0f32, -2.0, 0.5, 3.0];
        let w = Matrix::from_fn(4, 6, |i, j| u[i] * (j as f32 + 1.0));
        let fit = fit_pca(&w, Retention::K(5)).unwrap();
        assert_eq!(fit.basis.k(), 1);
        assert!((fit.basis.eta_achieved - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_arguments() {
        let w = random(4, 3, 0);
        assert!(fit_pca(&w, Retention::Eta(0.0)).is_err());
        assert!(fit_pca(&w, Retention::Eta(1.1)).is_err());
        assert!(fit_pca(&w, Retention::K(0)).is_err());
        assert!(fit_pca(&w, Retention::K(4)).is_err());
        assert!(fit_pca(&random(1, 3, 0), Retention::Eta(0.5)).is_err());
        let fit = fit_pca(&w, Retention::K(2)).unwrap();
        assert!(transform(&fit.basis, &random(2, 4, 0)).is_err());
        assert!(inverse_transform(&fit.basis, &random(2, 3, 0)).is_err());
    }

    #[test]
    fn mean_rows_transform_to_zero() {
        let w = random(10, 5, 4);
        let fit = fit_pca(&w, Retention::K(3)).unwrap();
        let means = Matrix::from_fn(3, 5, |_, c| fit.basis.mean[c]);
        let z = transform(&fit.basis, &means).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-6));
        let back = inverse_transform(&fit.basis, &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(back, means);
    }

    #[test]
    fn transform_matches_direct_product() {
        let w = random(12, 7, 5);
        let fit = fit_pca(&w, Retention::K(4)).unwrap();
        let b = &fit.basis;
        let z = transform(b, &w).unwrap();
        for r in 0..12 {
            for j in 0..4 {
                let want: f64 = (0..7)
                    .map(|c| {
                        (w.get(r, c) as f64 - b.mean[c] as f64) * b.components.get(c, j) as f64
                    })
                    .sum();
                assert!((z.get(r, j) as f64 - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn residual_energy_is_unretained_variance() {
        let w = decaying(40, 16, 6);
        let fit = fit_pca(&w, Retention::Eta(0.8)).unwrap();
        let back = inverse_transform(&fit.basis, &fit.reduced).unwrap();
        let mut resid = 0.0f64;
        let mut energy = 0.0f64;
        for r in 0..40 {
            for c in 0..16 {
                let centered = w.get(r, c) as f64 - fit.basis.mean[c] as f64;
                energy += centered * centered;
                resid += (w.get(r, c) as f64 - back.get(r, c) as f64).powi(2);
            }
        }
        assert!((resid / energy - (1.0 - fit.basis.eta_achieved)).abs() <= 1e-3);
    }

    #[test]
    fn encode_round_trip() {
        let fit = fit_pca(&random(9, 6, 7), Retention::Eta(0.7)).unwrap();
        let mut w = Writer::new();
        fit.basis.encode(&mut w);
        assert_eq!(w.buf.len(), fit.basis.encoded_len());
        let back = PcaBasis::decode(&mut Reader::new(&w.buf), true).unwrap();
        assert_eq!(back, fit.basis);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn basis_invariants(seed in 0u64..10_000, rows in 2usize..14, cols in 1usize..10, eta in 0.05f64..1.0) {
            let w = decaying(rows, cols, seed);
            let fit = fit_pca(&w, Retention::Eta(eta)).unwrap();
            let b = &fit.basis;
            prop_assert!(b.eta_achieved >= eta - 1e-9);
            let total: f64 = fit.spectrum.iter().map(|l| l.max(0.0)).sum();
            let kept: f64 = fit.spectrum[..b.k()].iter().map(|l| l.max(0.0)).sum();
            prop_assert!((b.eta_achieved - kept / total).abs() <= 1e-6);
            // trace of covariance
            let cov = covariance(&w);
            let trace: f64 = (0..cols).map(|i| cov.get(i, i) as f64).sum();
            prop_assert!((total - trace).abs() <= 1e-3 * trace.max(1e-12));
            for i in 0..b.k() {
                for j in 0..b.k() {
                    let d: f64 = (0..cols).map(|r| b.components.get(r, i) as f64 * b.components.get(r, j) as f64).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((d - want).abs() <= 1e-4);
                }
            }
            // idempotent projection
            let z = transform(b, &w).unwrap();
            let z2 = transform(b, &inverse_transform(b, &z).unwrap()).unwrap();
            for (a, c) in z.data().iter().zip(z2.data()) {
                prop_assert!((a - c).abs() <= 1e-4);
            }
        }

        #[test]
        fn k_is_monotone_in_eta(seed in 0u64..10_000, e1 in 0.05f64..1.0, e2 in 0.05f64..1.0) {
            let w = decaying(20, 8, seed);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let k1 = fit_pca(&w, Retention::Eta(lo)).unwrap().basis.k();
            let k2 = fit_pca(&w, Retention::Eta(hi)).unwrap().basis.k();
            prop_assert!(k1 <= k2);
        }
    }
}
