//! Finite-dimensional von Neumann algebras `⊕ₖ M_{nₖ}(C)` and their elements.
//!
//! Elements are stored blockwise. The canonical matrix-unit basis is ordered by
//! block, then row, then column; [`Element::flatten`] uses the same order, so the
//! coefficient of `E_{ij}^{(k)}` in `a` is `a.flatten()[alg.unit_index(k, i, j)]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, c, CMat, CVec, C64};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Algebra {
    #[serde(rename = "block_sizes")]
    blocks: Vec<usize>,
}

impl Algebra {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Shape("algebra needs at least one block".into()));
        }
        if blocks.contains(&0) {
            return Err(Error::Shape(format!("block sizes must be positive: {blocks:?}")));
        }
        Ok(Self { blocks })
    }

    /// The full matrix algebra `M_n`.
    pub fn full(n: usize) -> Self {
        Self::new(vec![n]).expect("n >= 1")
    }

    /// The abelian algebra `ℓ∞ⁿ` of diagonal matrices.
    pub fn diagonal(n: usize) -> Self {
        Self::new(vec![1; n]).expect("n >= 1")
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Complex dimension `Σ nₖ²`.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|n| n * n).sum()
    }

    /// Size `Σ nₖ` of the Hilbert space the algebra acts on.
    pub fn matrix_dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn has_type_i2(&self) -> bool {
        self.blocks.contains(&2)
    }

    pub fn is_abelian(&self) -> bool {
        self.blocks.iter().all(|&n| n == 1)
    }

    fn block_offset(&self, k: usize) -> usize {
        self.blocks[..k].iter().map(|n| n * n).sum()
    }

    pub fn unit_index(&self, k: usize, i: usize, j: usize) -> usize {
        let n = self.blocks[k];
        self.block_offset(k) + i * n + j
    }

    /// Inverse of [`Algebra::unit_index`].
    pub fn unit_coords(&self, mut idx: usize) -> (usize, usize, usize) {
        for (k, &n) in self.blocks.iter().enumerate() {
            if idx < n * n {
                return (k, idx / n, idx % n);
            }
            idx -= n * n;
        }
        panic!("unit index out of range");
    }

    pub fn identity(&self) -> Element {
        Element {
            blocks: self.blocks.iter().map(|&n| CMat::identity(n, n)).collect(),
        }
    }

    pub fn zero(&self) -> Element {
        Element {
            blocks: self.blocks.iter().map(|&n| CMat::zeros(n, n)).collect(),
        }
    }

    pub fn matrix_unit(&self, idx: usize) -> Element {
        let (k, i, j) = self.unit_coords(idx);
        let mut e = self.zero();
        e.blocks[k][(i, j)] = linalg::ONE;
        e
    }

    pub fn unflatten(&self, v: &[C64]) -> Result<Element> {
        if v.len() != self.total_dim() {
            return Err(Error::Shape(format!(
                "flat vector of length {} for algebra of dimension {}",
                v.len(),
                self.total_dim()
            )));
        }
        let mut off = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|&n| {
                let b = CMat::from_row_slice(n, n, &v[off..off + n * n]);
                off += n * n;
                b
            })
            .collect();
        Ok(Element { blocks })
    }

    pub fn from_blocks(&self, blocks: Vec<CMat>) -> Result<Element> {
        let e = Element { blocks };
        self.check(&e)?;
        Ok(e)
    }

    /// Embeds a block-diagonal `matrix_dim × matrix_dim` matrix, ignoring
    /// off-diagonal blocks.
    pub fn from_dense(&self, m: &CMat) -> Result<Element> {
        let n = self.matrix_dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Shape(format!("expected {n}x{n} dense matrix")));
        }
        let mut off = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|&b| {
                let blk = m.view((off, off), (b, b)).into_owned();
                off += b;
                blk
            })
            .collect();
        Ok(Element { blocks })
    }

    pub fn check(&self, a: &Element) -> Result<()> {
        if a.blocks.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "element has {} blocks, algebra has {}",
                a.blocks.len(),
                self.blocks.len()
            )));
        }
        for (k, (b, &n)) in a.blocks.iter().zip(&self.blocks).enumerate() {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Shape(format!(
                    "block {k} is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Operator norm with a structural check against this algebra.
    pub fn op_norm(&self, a: &Element) -> Result<f64> {
        self.check(a)?;
        Ok(a.op_norm())
    }

    pub fn multiply(&self, a: &Element, b: &Element) -> Result<Element> {
        self.check(a)?;
        self.check(b)?;
        Ok(a.mul(b))
    }

    pub fn adjoint(&self, a: &Element) -> Result<Element> {
        self.check(a)?;
        Ok(a.adjoint())
    }

    /// Matrix of `R ↦ R·a` acting on flattened elements.
    pub fn right_mult_matrix(&self, a: &Element) -> CMat {
        let t = self.total_dim();
        let mut m = CMat::zeros(t, t);
        for (k, &n) in self.blocks.iter().enumerate() {
            let ak = &a.blocks[k];
            for i in 0..n {
                for j in 0..n {
                    let col = self.unit_index(k, i, j);
                    // E_ij a = Σ_l a[j, l] E_il
                    for l in 0..n {
                        m[(self.unit_index(k, i, l), col)] = ak[(j, l)];
                    }
                }
            }
        }
        m
    }

    pub fn random_hermitian<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Element {
        Element {
            blocks: self
                .blocks
                .iter()
                .map(|&n| {
                    let g = linalg::ginibre(rng, n, n);
                    (&g + g.adjoint()) * c(0.5)
                })
                .collect(),
        }
    }

    pub fn random_element<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Element {
        Element {
            blocks: self
                .blocks
                .iter()
                .map(|&n| linalg::ginibre(rng, n, n))
                .collect(),
        }
    }
}

/// A block-diagonal element of an [`Algebra`].
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    blocks: Vec<CMat>,
}

impl Element {
    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &CMat {
        &self.blocks[k]
    }

    pub fn into_blocks(self) -> Vec<CMat> {
        self.blocks
    }

    pub fn adjoint(&self) -> Element {
        self.map_blocks(|b| b.adjoint())
    }

    /// Blockwise product. Callers guarantee matching shapes; use
    /// [`Algebra::multiply`] for a checked version.
    pub fn mul(&self, other: &Element) -> Element {
        Element {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Element) -> Element {
        self.zip_blocks(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Element) -> Element {
        self.zip_blocks(other, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> Element {
        self.map_blocks(|b| b * s)
    }

    fn map_blocks(&self, f: impl Fn(&CMat) -> CMat) -> Element {
        Element {
            blocks: self.blocks.iter().map(f).collect(),
        }
    }

    fn zip_blocks(&self, other: &Element, f: impl Fn(&CMat, &CMat) -> CMat) -> Element {
        Element {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Maximum over blocks of the largest singular value.
    pub fn op_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(linalg::op_norm)
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        self.blocks.iter().map(|b| b.trace()).sum()
    }

    /// Row-major within each block, blocks concatenated.
    pub fn flatten(&self) -> CVec {
        let len: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut out = Vec::with_capacity(len);
        for b in &self.blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    out.push(b[(i, j)]);
                }
            }
        }
        CVec::from_vec(out)
    }

    /// Block-diagonal dense matrix on `C^{Σ nₖ}`.
    pub fn to_dense(&self) -> CMat {
        let n: usize = self.blocks.iter().map(|b| b.nrows()).sum();
        let mut m = CMat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            m.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
            off += b.nrows();
        }
        m
    }

    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.sub(&self.adjoint()).op_norm() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallSample {
    HaarUnitary,
    Contraction,
}

/// Blockwise Haar unitary, optionally scaled by a uniform `s ∈ [0, 1]`.
pub fn sample_unit_ball(alg: &Algebra, seed: u64, kind: BallSample) -> Element {
    let mut rng = linalg::rng(seed);
    sample_unit_ball_with(alg, &mut rng, kind)
}

pub fn sample_unit_ball_with<R: rand::Rng + ?Sized>(
    alg: &Algebra,
    rng: &mut R,
    kind: BallSample,
) -> Element {
    let u = haar_unitary(alg, rng);
    match kind {
        BallSample::HaarUnitary => u,
        BallSample::Contraction => {
            let s: f64 = rng.random();
            u.scale(c(s))
        }
    }
}

pub fn haar_unitary<R: rand::Rng + ?Sized>(alg: &Algebra, rng: &mut R) -> Element {
    Element {
        blocks: alg
            .blocks()
            .iter()
            .map(|&n| linalg::haar_unitary(rng, n))
            .collect(),
    }
}

/// Blockwise unitary polar factor.
pub fn polar_unitary(g: &Element) -> Element {
    g.map_blocks(linalg::polar_unitary)
}

/// A convex function on the unit ball of an algebra together with a
/// supporting linear functional at each point.
///
/// `gradient(r)` must return `G` with `f(s) ≥ f(r) + Re⟨G, s − r⟩` for all `s`,
/// where `⟨G, s⟩ = Σ conj(G_idx) s_idx`.
pub trait BallObjective: Sync {
    fn value(&self, r: &Element) -> f64;
    fn gradient(&self, r: &Element) -> Element;
}

/// `R ↦ ‖F · flatten(R)‖₂` for a `d × total_dim` matrix `F`.
pub struct VectorNormObjective<'a> {
    alg: &'a Algebra,
    map: &'a CMat,
}

impl<'a> VectorNormObjective<'a> {
    pub fn new(alg: &'a Algebra, map: &'a CMat) -> Result<Self> {
        if map.ncols() != alg.total_dim() {
            return Err(Error::Shape(format!(
                "linear map has {} columns, algebra dimension is {}",
                map.ncols(),
                alg.total_dim()
            )));
        }
        Ok(Self { alg, map })
    }
}

impl BallObjective for VectorNormObjective<'_> {
    fn value(&self, r: &Element) -> f64 {
        (self.map * r.flatten()).norm()
    }

    fn gradient(&self, r: &Element) -> Element {
        let y = self.map * r.flatten();
        let g = self.map.adjoint() * y;
        self.alg
            .unflatten(g.as_slice())
            .expect("gradient has algebra dimension")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub rel_tol: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            restarts: 32,
            iterations: 200,
            rel_tol: 1e-9,
        }
    }
}

impl AscentConfig {
    pub fn with_restarts(restarts: usize) -> Self {
        Self {
            restarts,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SupResult {
    pub value: f64,
    pub witness: Element,
}

/// Certified lower bound on `sup_{‖R‖ ≤ 1} ‖F·flatten(R)‖₂`.
///
/// `budget` is the number of Haar restarts; the result is nondecreasing in
/// `budget` for a fixed seed.
pub fn sup_over_ball(alg: &Algebra, map: &CMat, budget: usize, seed: u64) -> Result<SupResult> {
    sup_over_ball_with(alg, map, AscentConfig::with_restarts(budget), seed, &[])
}

/// As [`sup_over_ball`], additionally ascending from each element of `pool`.
pub fn sup_over_ball_with(
    alg: &Algebra,
    map: &CMat,
    cfg: AscentConfig,
    seed: u64,
    pool: &[Element],
) -> Result<SupResult> {
    let obj = VectorNormObjective::new(alg, map)?;
    maximize_over_ball(alg, &obj, cfg, seed, pool)
}

/// Maximises a convex objective over the unit ball by ascent over the unitary
/// group. Each start is a pool element or a Haar unitary with a derived seed;
/// restarts run in parallel and are reduced by max with ties going to the
/// earliest start.
pub fn maximize_over_ball<O: BallObjective>(
    alg: &Algebra,
    obj: &O,
    cfg: AscentConfig,
    seed: u64,
    pool: &[Element],
) -> Result<SupResult> {
    if cfg.restarts == 0 {
        return Err(Error::contract("algebra", "sup_over_ball budget must be >= 1"));
    }
    for p in pool {
        alg.check(p)?;
    }
    let starts: Vec<Option<&Element>> = pool
        .iter()
        .map(Some)
        .chain(std::iter::repeat_n(None, cfg.restarts))
        .collect();
    let results: Vec<SupResult> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let r0 = match start {
                Some(e) => (*e).clone(),
                None => {
                    let restart = (idx - pool.len()) as u64;
                    let mut rng = linalg::rng(linalg::derive_seed(seed, 0xBA11, restart));
                    haar_unitary(alg, &mut rng)
                }
            };
            ascend(obj, r0, &cfg)
        })
        .collect();
    let mut best: Option<SupResult> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

fn ascend<O: BallObjective>(obj: &O, start: Element, cfg: &AscentConfig) -> SupResult {
    let mut r = start;
    let mut value = obj.value(&r);
    for _ in 0..cfg.iterations {
        let g = obj.gradient(&r);
        let gnorm = g.op_norm();
        if gnorm == 0.0 {
            break;
        }
        // Full step: the maximiser of the supporting functional.
        let mut improved = None;
        let cand = polar_unitary(&g);
        let v = obj.value(&cand);
        if v > value {
            improved = Some((cand, v));
        } else {
            // Tangent steps with halving, retracted by the polar factor.
            let dir = g.scale(c(1.0 / gnorm));
            let mut step = 1.0;
            for _ in 0..12 {
                let cand = polar_unitary(&r.add(&dir.scale(c(step))));
                let v = obj.value(&cand);
                if v > value {
                    improved = Some((cand, v));
                    break;
                }
                step *= 0.5;
            }
        }
        match improved {
            Some((cand, v)) => {
                let gain = v - value;
                r = cand;
                value = v;
                if gain <= cfg.rel_tol * value.max(1e-300) {
                    break;
                }
            }
            None => break,
        }
    }
    SupResult { value, witness: r }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng;

    #[test]
    fn identity_norms() {
        let alg = Algebra::full(3);
        assert!((alg.identity().op_norm() - 1.0).abs() < 1e-14);
        assert_eq!(alg.adjoint(&alg.identity()).unwrap(), alg.identity());
    }

    #[test]
    fn diagonal_element_norm() {
        let alg = Algebra::diagonal(2);
        let a = alg.unflatten(&[c(3.0), c(-4.0)]).unwrap();
        assert!((alg.op_norm(&a).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_structural_error() {
        let alg = Algebra::full(3);
        let other = Algebra::full(2).identity();
        assert!(matches!(alg.op_norm(&other), Err(Error::Shape(_))));
        assert!(alg.multiply(&alg.identity(), &other).is_err());
        assert!(Algebra::new(vec![]).is_err());
        assert!(Algebra::new(vec![2, 0]).is_err());
    }

    #[test]
    fn c_star_identity_on_random_elements() {
        let alg = Algebra::new(vec![1, 2, 3]).unwrap();
        let mut r = rng(11);
        for _ in 0..20 {
            let a = alg.random_element(&mut r);
            let n = a.op_norm();
            let lhs = a.mul(&a.adjoint()).op_norm();
            assert!((lhs - n * n).abs() <= 1e-10 * (1.0 + n * n));
        }
    }

    #[test]
    fn involution_and_complement() {
        let alg = Algebra::new(vec![2, 3]).unwrap();
        let mut r = rng(2);
        let a = alg.random_element(&mut r);
        assert!(a.adjoint().adjoint().sub(&a).max_abs() == 0.0);
        let p = crate::projection::random_projection(&alg, &mut r);
        let q = alg.identity().sub(p.element());
        assert!(p.element().mul(&q).op_norm() < 1e-12);
    }

    #[test]
    fn flatten_roundtrip_and_units() {
        let alg = Algebra::new(vec![2, 1, 3]).unwrap();
        let mut r = rng(5);
        let a = alg.random_element(&mut r);
        let back = alg.unflatten(a.flatten().as_slice()).unwrap();
        assert_eq!(a, back);
        for idx in 0..alg.total_dim() {
            let (k, i, j) = alg.unit_coords(idx);
            assert_eq!(alg.unit_index(k, i, j), idx);
            let e = alg.matrix_unit(idx);
            assert_eq!(e.flatten()[idx], linalg::ONE);
        }
    }

    #[test]
    fn right_multiplication_matrix() {
        let alg = Algebra::new(vec![2, 3]).unwrap();
        let mut r = rng(8);
        let a = alg.random_element(&mut r);
        let b = alg.random_element(&mut r);
        let m = alg.right_mult_matrix(&b);
        let lhs = m * a.flatten();
        let rhs = a.mul(&b).flatten();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn haar_samples_are_unitary_and_deterministic() {
        let alg = Algebra::new(vec![3, 2]).unwrap();
        let u = sample_unit_ball(&alg, 42, BallSample::HaarUnitary);
        assert!((u.op_norm() - 1.0).abs() < 1e-10);
        let u2 = sample_unit_ball(&alg, 42, BallSample::HaarUnitary);
        assert_eq!(u, u2);
        let cst = sample_unit_ball(&alg, 43, BallSample::Contraction);
        assert!(cst.op_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn haar_mean_is_small() {
        // Entries of a Haar unitary on M_3 have zero mean and variance 1/3,
        // so the Monte-Carlo mean over 1e4 draws has standard error ~0.006.
        let alg = Algebra::full(3);
        let mut r = rng(99);
        let mut acc = CMat::zeros(3, 3);
        let n = 10_000;
        for _ in 0..n {
            acc += haar_unitary(&alg, &mut r).block(0);
        }
        acc /= c(n as f64);
        assert!(linalg::max_abs(&acc) < 0.05);
    }

    #[test]
    fn sup_of_column_extractor_is_vector_norm() {
        let alg = Algebra::full(3);
        let mut r = rng(4);
        let x = linalg::random_unit_vector(&mut r, 3);
        // (R x)_i = Σ_j R_ij x_j
        let mut f = CMat::zeros(3, 9);
        for i in 0..3 {
            for j in 0..3 {
                f[(i, alg.unit_index(0, i, j))] = x[j];
            }
        }
        let res = sup_over_ball(&alg, &f, 32, 1).unwrap();
        assert!((res.value - 1.0).abs() < 1e-6, "{}", res.value);
        assert!(res.witness.op_norm() <= 1.0 + 1e-10);
    }

    #[test]
    fn sup_of_zero_map() {
        let alg = Algebra::full(2);
        let f = CMat::zeros(2, 4);
        assert_eq!(sup_over_ball(&alg, &f, 4, 0).unwrap().value, 0.0);
    }

    #[test]
    fn sup_abelian_matches_phase_grid() {
        let alg = Algebra::diagonal(2);
        let f = CMat::from_row_slice(1, 2, &[c(3.0), c(-4.0)]);
        // brute force over a phase grid on the extreme points
        let mut brute: f64 = 0.0;
        let steps = 360;
        for a in 0..steps {
            for b in 0..steps {
                let ta = 2.0 * std::f64::consts::PI * a as f64 / steps as f64;
                let tb = 2.0 * std::f64::consts::PI * b as f64 / steps as f64;
                let v = C64::from_polar(1.0, ta) * 3.0 - C64::from_polar(1.0, tb) * 4.0;
                brute = brute.max(v.norm());
            }
        }
        assert!((brute - 7.0).abs() < 1e-9);
        let res = sup_over_ball(&alg, &f, 8, 3).unwrap();
        assert!((res.value - brute).abs() < 1e-6);
    }

    #[test]
    fn zero_budget_is_contract_error() {
        let alg = Algebra::full(2);
        let f = CMat::zeros(1, 4);
        assert!(matches!(
            sup_over_ball(&alg, &f, 0, 0),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn sup_is_monotone_and_below_ceiling() {
        let alg = Algebra::new(vec![2, 3]).unwrap();
        let mut r = rng(17);
        for trial in 0..5 {
            let f = linalg::ginibre(&mut r, 3, alg.total_dim());
            let ceiling = linalg::op_norm(&f) * (alg.matrix_dim() as f64).sqrt();
            let mut prev = 0.0;
            for budget in [1, 2, 4, 8] {
                let v = sup_over_ball(&alg, &f, budget, trial).unwrap().value;
                assert!(v >= prev);
                assert!(v <= ceiling + 1e-9);
                prev = v;
            }
        }
    }
}
