//! Dense complex helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub type SeededRng = ChaCha8Rng;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream tag and index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard complex Gaussian with `E|z|² = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / std::f64::consts::SQRT_2
}

pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    loop {
        let v = CVec::from_fn(n, |_, _| complex_normal(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / c(norm);
        }
    }
}

/// Haar-distributed unitary via QR of a Ginibre matrix with the phase of the
/// diagonal of `R` absorbed into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = ginibre(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / c(d.norm()) } else { ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Thin singular value decomposition `m = u · diag(s) · v_t`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v_t: CMat,
}

impl Svd {
    /// Frobenius norm of `u·diag(s)·v_t − m`.
    pub fn reconstruction_error(&self, m: &CMat) -> f64 {
        let mut us = self.u.clone();
        for (k, s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        (us * &self.v_t - m).norm()
    }
}

/// Singular value decomposition by one-sided Jacobi rotations, singular
/// values in descending order.
///
/// Used instead of the bidiagonal routine from `nalgebra`, whose singular
/// vectors are inaccurate on some rank-deficient complex inputs.
pub fn svd(m: &CMat) -> Svd {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.adjoint());
        return Svd {
            u: t.v_t.adjoint(),
            s: t.s,
            v_t: t.u.adjoint(),
        };
    }
    jacobi_svd(m)
}

/// Requires `rows >= cols`.
fn jacobi_svd(m: &CMat) -> Svd {
    let (rows, n) = (m.nrows(), m.ncols());
    let mut a = m.clone();
    let mut v = CMat::identity(n, n);
    // Columns below this squared norm are numerically zero.
    let negligible = 1e-32 * m.norm_squared();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= 1e-15 * (alpha * beta).sqrt() || alpha <= negligible || beta <= negligible {
                    continue;
                }
                rotated = true;
                let phase = gamma.unscale(g);
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for (mat, len) in [(&mut a, rows), (&mut v, n)] {
                    for i in 0..len {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)] * phase.conj();
                        mat[(i, p)] = xp * cs - xq * sn;
                        mat[(i, q)] = xp * sn + xq * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let smax = norms.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let mut u = CMat::zeros(rows, n);
    let mut vs = CMat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut filled = 0;
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        vs.set_column(dst, &v.column(src));
        if sigma > 1e-300 && sigma > 1e-14 * smax {
            u.set_column(dst, &(a.column(src) / c(sigma)));
            filled = dst + 1;
        }
    }
    complete_orthonormal(&mut u, filled);
    Svd {
        u,
        s,
        v_t: vs.adjoint(),
    }
}

/// Replaces columns `from..` with an orthonormal completion of the first
/// `from` columns.
fn complete_orthonormal(u: &mut CMat, from: usize) {
    let n = u.nrows();
    let mut next = from;
    for e in 0..n {
        if next >= u.ncols() {
            break;
        }
        let mut cand = CVec::zeros(n);
        cand[e] = ONE;
        for j in 0..next {
            let col = u.column(j).into_owned();
            let proj = col.dotc(&cand);
            cand -= col * proj;
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            u.set_column(next, &(cand / c(norm)));
            next += 1;
        }
    }
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Unitary factor `W` of the polar decomposition `G = W |G|`.
pub fn polar_unitary(g: &CMat) -> CMat {
    let n = g.nrows();
    if n == 1 {
        let z = g[(0, 0)];
        let norm = z.norm();
        return CMat::from_element(1, 1, if norm > 0.0 { z.unscale(norm) } else { ONE });
    }
    let svd = svd(g);
    svd.u * svd.v_t
}

/// Top singular triple `(σ, u, v)` with `m v = σ u`.
pub fn top_singular(m: &CMat) -> (f64, CVec, CVec) {
    let svd = svd(m);
    let mut best = 0;
    for (k, s) in svd.s.iter().enumerate() {
        if *s > svd.s[best] {
            best = k;
        }
    }
    let sigma = svd.s.get(best).copied().unwrap_or(0.0);
    let uu = svd.u.column(best).into_owned();
    let vv = svd.v_t.row(best).adjoint();
    (sigma, uu, vv)
}

/// Orthonormal basis of the column space, singular values below
/// `cutoff * σ_max` discarded. Returns an `n × 0` matrix for the zero matrix.
pub fn column_space(m: &CMat, cutoff: f64) -> CMat {
    let smax = if m.is_empty() { 0.0 } else { op_norm(m) };
    column_space_abs(m, cutoff * smax)
}

/// Orthonormal basis of the span of singular vectors with `σ > threshold`.
pub fn column_space_abs(m: &CMat, threshold: f64) -> CMat {
    let rows = m.nrows();
    if m.ncols() == 0 || m.norm() < 1e-300 {
        return CMat::zeros(rows, 0);
    }
    let svd = svd(m);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&k| svd.s[k] > threshold).collect();
    let mut basis = CMat::zeros(rows, keep.len());
    for (dst, &k) in keep.iter().enumerate() {
        basis.set_column(dst, &svd.u.column(k));
    }
    basis
}

/// Moore–Penrose pseudo-inverse with relative cutoff.
pub fn pinv(m: &CMat, cutoff: f64) -> CMat {
    if m.norm() < 1e-300 {
        return CMat::zeros(m.ncols(), m.nrows());
    }
    let svd = svd(m);
    let smax = svd.s.iter().fold(0.0_f64, |a, &s| a.max(s));
    let mut out = CMat::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cutoff * smax {
            let vk = svd.v_t.row(k).adjoint();
            let uk = svd.u.column(k).adjoint();
            out += (vk * uk) * c(1.0 / s);
        }
    }
    out
}

/// Column-major vectorisation.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Eigen-decomposition of a Hermitian matrix (the input is symmetrised first).
pub fn hermitian_eigen(h: &CMat) -> (Vec<f64>, CMat) {
    let sym = (h + h.adjoint()) * c(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

/// Spectral norm of the vertical stack `[A_1; A_2; …]`.
pub fn stacked_op_norm(mats: &[CMat]) -> f64 {
    if mats.is_empty() {
        return 0.0;
    }
    let cols = mats[0].ncols();
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut big = CMat::zeros(rows, cols);
    let mut r = 0;
    for m in mats {
        big.view_mut((r, 0), (m.nrows(), cols)).copy_from(m);
        r += m.nrows();
    }
    op_norm(&big)
}

pub fn real_matrix_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(c)
}
