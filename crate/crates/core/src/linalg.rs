//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest absolute deviation between `m` and its conjugate transpose.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Rejects non-square or non-Hermitian input beyond `tol` relative to the
/// largest entry.
pub fn check_hermitian(m: &CMatrix, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Size(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let dev = hermitian_deviation(m);
    if !(dev <= tol * scale) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let a = faer::Mat::<Complex64>::from_fn(n, n, |i, j| m[(i, j)]);
    match a.self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => {
            let (s, u) = (eig.S(), eig.U());
            let values = (0..n).map(|i| s[i].re).collect();
            (values, CMatrix::from_fn(n, n, |i, j| u[(i, j)]))
        }
        Err(_) => {
            // faer gives up only on non-finite input; nalgebra returns NaNs there too
            let eig = m.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            (values, CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]))
        }
    }
}

/// Roots of the monic polynomial `z^L + c[0] z^(L-1) + ... + c[L-1]`.
///
/// Eigenvalues of the balanced companion matrix, each refined by a few Newton
/// steps on the original coefficients.
pub fn poly_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let l = coeffs.len();
    if l == 0 {
        return Ok(Vec::new());
    }
    if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Degenerate("non-finite polynomial coefficient".into()));
    }
    if l == 1 {
        return Ok(vec![-coeffs[0]]);
    }
    let mut companion = CMatrix::zeros(l, l);
    for (j, c) in coeffs.iter().enumerate() {
        companion[(0, j)] = -c;
    }
    for i in 1..l {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    balance(&mut companion);
    let schur = companion
        .try_schur(f64::EPSILON, 100 * l)
        .ok_or_else(|| Error::Degenerate("companion eigenvalue iteration did not converge".into()))?;
    let eig = schur
        .eigenvalues()
        .ok_or_else(|| Error::Degenerate("companion Schur form is not triangular".into()))?;
    Ok(eig.iter().map(|&z| polish_root(coeffs, z)).collect())
}

/// Evaluates the monic polynomial and its derivative at `z`.
fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut dp = ZERO;
    for c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn polish_root(coeffs: &[Complex64], mut z: Complex64) -> Complex64 {
    let (mut p, _) = horner(coeffs, z);
    for _ in 0..4 {
        let (_, dp) = horner(coeffs, z);
        if dp.norm() == 0.0 {
            break;
        }
        let cand = z - p / dp;
        let (pc, _) = horner(coeffs, cand);
        if !(pc.norm() < p.norm()) {
            break;
        }
        z = cand;
        p = pc;
    }
    z
}

/// Diagonal similarity scaling by powers of two that equalizes row and
/// column norms.
fn balance(a: &mut CMatrix) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut done = false;
    let mut sweeps = 0;
    while !done && sweeps < 100 {
        done = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].norm();
                    r += a[(i, j)].norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let mut g = r / radix;
            while cc < g {
                f *= radix;
                cc *= radix * radix;
            }
            g = r * radix;
            while cc > g {
                f /= radix;
                cc /= radix * radix;
            }
            if (cc + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Thin singular value decomposition `a = U diag(s) V^H` with the singular
/// values in descending order.
///
/// Columns of `U` belonging to zero singular values are left zero.
pub struct ThinSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

/// Thin SVD of any shape by one-sided Jacobi rotations.
///
/// nalgebra's complex SVD loses accuracy on rank-deficient input, which is
/// exactly the case for noiseless prediction systems, so it is not used here.
pub fn thin_svd(a: &CMatrix) -> ThinSvd {
    if a.nrows() < a.ncols() {
        let t = thin_svd(&a.adjoint());
        return ThinSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = CMatrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let x = w[(r, p)];
                    let y = w[(r, q)] * phase.conj();
                    w[(r, p)] = x * c - y * s;
                    w[(r, q)] = x * s + y * c;
                }
                for r in 0..n {
                    let x = v[(r, p)];
                    let y = v[(r, q)] * phase.conj();
                    v[(r, p)] = x * c - y * s;
                    v[(r, q)] = x * s + y * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let u = CMatrix::from_fn(m, n, |r, c| {
        let j = order[c];
        if norms[j] > 0.0 {
            w[(r, j)] / norms[j]
        } else {
            ZERO
        }
    });
    ThinSvd {
        u,
        s: order.iter().map(|&i| norms[i]).collect(),
        v: CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]),
    }
}

/// Minimum-norm least-squares solution of `a x = b`, treating singular values
/// below `rtol * s_max` as zero. Returns the solution and the numerical rank.
pub fn min_norm_solve(a: &CMatrix, b: &CVector, rtol: f64) -> Result<(CVector, usize)> {
    let svd = thin_svd(a);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 || !smax.is_finite() {
        return Err(Error::Degenerate("matrix has no nonzero singular value".into()));
    }
    let rank = svd.s.iter().take_while(|&&s| s > rtol * smax).count();
    let mut x = CVector::zeros(a.ncols());
    for i in 0..rank {
        let coef = svd.u.column(i).dotc(b) / svd.s[i];
        x.axpy(coef, &svd.v.column(i), Complex64::new(1.0, 0.0));
    }
    Ok((x, rank))
}

/// Minimum-cost assignment of rows to columns (Hungarian method).
///
/// `cost` is row-major with `rows <= cols`. Returns, for each row, the column
/// assigned to it.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(m >= n, "assignment needs at least as many columns as rows");
    // potentials-based O(n^2 m) formulation, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                // only non-finite costs remain; take the first free column
                j1 = (1..=m).find(|&j| !used[j]).expect("free column");
                delta = 0.0;
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}
