//! Small dense linear-algebra kernels shared by the other modules.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Padé-13 coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the degree-13 approximant meets unit roundoff.
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a fixed diagonal
/// Padé approximant of degree 13.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);

    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let num = &v + &u;
    let den = v - u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * x).dot(x)
}

/// Frobenius inner product `tr(Aᵀ B)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Symmetric positive semi-definite up to `tol` relative to the largest entry.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    is_symmetric(m, 1e-9) && min_eigenvalue(m) >= -tol * (1.0 + m.amax())
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && symmetrize(m).cholesky().is_some()
}

pub fn ensure_finite_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Lower-triangular factor `F` with `F Fᵀ = M` for a PSD matrix, tolerating
/// exact zeros (e.g. a rank-deficient diffusion).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut root = DMatrix::zeros(n, n);
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > 0.0 {
            let col = eig.eigenvectors.column(k) * lam.sqrt();
            root.set_column(k, &col);
        }
    }
    root
}

/// Fifteen-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_15() -> &'static [(f64, f64); 15] {
    static RULE: OnceLock<[(f64, f64); 15]> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 15;
        let mut rule = [(0.0, 0.0); N];
        for (i, slot) in rule.iter_mut().enumerate() {
            // Chebyshev-like starting guess followed by Newton on P_N.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=N {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        rule
    })
}

/// Relative accuracy below which bisection stops regardless of `tol`.
const REL_FLOOR: f64 = 1e-13;

/// Adaptive Gauss–Legendre integration of a vector-valued integrand on
/// `[a, b]`: a panel is accepted when its 15-point estimate agrees with the
/// sum over its two halves within `tol` (max-abs), otherwise it is bisected.
/// For very large integrals the tolerance is floored at a relative 1e-13.
pub fn integrate_adaptive<F>(f: &F, a: f64, b: f64, tol: f64) -> Vec<f64>
where
    F: Fn(f64) -> Vec<f64>,
{
    fn panel<F: Fn(f64) -> Vec<f64>>(f: &F, a: f64, b: f64) -> Vec<f64> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc: Vec<f64> = Vec::new();
        for &(x, w) in gauss_legendre_15() {
            let v = f(mid + half * x);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (s, vi) in acc.iter_mut().zip(v) {
                *s += w * half * vi;
            }
        }
        acc
    }

    fn recurse<F: Fn(f64) -> Vec<f64>>(
        f: &F,
        a: f64,
        b: f64,
        whole: Vec<f64>,
        tol: f64,
        depth: u32,
    ) -> Vec<f64> {
        let m = 0.5 * (a + b);
        let left = panel(f, a, m);
        let right = panel(f, m, b);
        let split: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
        let err = whole
            .iter()
            .zip(&split)
            .map(|(w, s)| (w - s).abs())
            .fold(0.0, f64::max);
        let scale = split.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= tol.max(REL_FLOOR * scale) || depth >= 20 {
            split
        } else {
            let mut l = recurse(f, a, m, left, 0.5 * tol, depth + 1);
            let r = recurse(f, m, b, right, 0.5 * tol, depth + 1);
            for (x, y) in l.iter_mut().zip(r) {
                *x += y;
            }
            l
        }
    }

    if b <= a {
        let probe = f(a);
        return vec![0.0; probe.len()];
    }
    let whole = panel(f, a, b);
    recurse(f, a, b, whole, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_on_moderate_matrices() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, -0.4, 0.2, 0.3, -1.2, 0.5, -0.7, 0.0, 0.4]);
        let e = expm(&a);
        let t = taylor_expm(&a);
        assert!((e - t).amax() < 1e-13);
    }

    #[test]
    fn expm_scaling_path_rotation() {
        // exp([[0, w], [-w, 0]]) is a rotation by w radians.
        let w = 37.0;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], w.cos(), epsilon = 1e-11);
        assert_relative_eq!(e[(0, 1)], w.sin(), epsilon = 1e-11);
    }

    #[test]
    fn expm_nilpotent_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]);
        let e = expm(&a);
        assert_eq!(e[(0, 0)], 1.0);
        assert_relative_eq!(e[(0, 1)], 0.1, epsilon = 1e-16);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_degree_29_exactly() {
        let rule = gauss_legendre_15();
        let wsum: f64 = rule.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(wsum, 2.0, epsilon = 1e-14);
        let i: f64 = rule.iter().map(|(x, w)| w * x.powi(28)).sum();
        assert_relative_eq!(i, 2.0 / 29.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_integrates_exponential() {
        let v = integrate_adaptive(&|t: f64| vec![(-3.0 * t).exp(), t.sin()], 0.0, 2.0, 1e-12);
        assert_relative_eq!(v[0], (1.0 - (-6.0f64).exp()) / 3.0, epsilon = 1e-13);
        assert_relative_eq!(v[1], 1.0 - 2.0f64.cos(), epsilon = 1e-13);
    }

    #[test]
    fn psd_sqrt_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = psd_sqrt(&m);
        assert!((&r * r.transpose() - m).amax() < 1e-12);
    }
}
