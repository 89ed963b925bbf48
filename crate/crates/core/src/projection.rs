//! Projections of a block algebra and their lattice operations.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::algebra::{Algebra, Element};
use crate::linalg::{self, c, CMat, CVec};
use crate::{tol, Error, Result};

/// A self-adjoint idempotent element together with its total rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    element: Element,
    rank: usize,
}

impl Projection {
    /// Validates `P² = P = P*` at [`tol::PROJECTION`].
    pub fn new(alg: &Algebra, element: Element) -> Result<Self> {
        Self::with_tolerance(alg, element, tol::PROJECTION)
    }

    pub fn with_tolerance(alg: &Algebra, element: Element, tol: f64) -> Result<Self> {
        alg.check(&element)?;
        let sa = element.sub(&element.adjoint()).op_norm();
        let idem = element.mul(&element).sub(&element).op_norm();
        if sa > tol || idem > tol {
            return Err(Error::contract(
                "projection",
                format!("not a projection: |P-P*| = {sa:.2e}, |P²-P| = {idem:.2e}"),
            ));
        }
        let rank = element.trace().re.round().max(0.0) as usize;
        Ok(Self { element, rank })
    }

    pub(crate) fn from_parts_unchecked(element: Element, rank: usize) -> Self {
        Self { element, rank }
    }

    pub fn zero(alg: &Algebra) -> Self {
        Self {
            element: alg.zero(),
            rank: 0,
        }
    }

    pub fn identity(alg: &Algebra) -> Self {
        Self {
            element: alg.identity(),
            rank: alg.matrix_dim(),
        }
    }

    /// Projection onto the span of orthonormal columns, one matrix per block
    /// (zero-column matrices allowed).
    pub fn from_orthonormal(alg: &Algebra, bases: &[CMat]) -> Result<Self> {
        if bases.len() != alg.num_blocks() {
            return Err(Error::Shape("one basis per block required".into()));
        }
        let mut rank = 0;
        let mut blocks = Vec::with_capacity(bases.len());
        for (b, &n) in bases.iter().zip(alg.blocks()) {
            if b.nrows() != n {
                return Err(Error::Shape(format!("basis has {} rows, block is {n}", b.nrows())));
            }
            rank += b.ncols();
            blocks.push(b * b.adjoint());
        }
        Ok(Self {
            element: alg.from_blocks(blocks)?,
            rank,
        })
    }

    /// Projection onto the span of arbitrary vectors (rank-revealing).
    /// Singular values are compared against an absolute cutoff, so the
    /// spanning vectors should have norm of order one.
    pub fn onto_span(alg: &Algebra, spans: &[CMat]) -> Result<Self> {
        let bases: Vec<CMat> = spans
            .iter()
            .map(|m| linalg::column_space_abs(m, tol::RANK_CUTOFF))
            .collect();
        Self::from_orthonormal(alg, &bases)
    }

    /// Rank-one projection onto `v` inside block `k`.
    pub fn rank_one(alg: &Algebra, k: usize, v: &CVec) -> Result<Self> {
        if k >= alg.num_blocks() || v.len() != alg.blocks()[k] {
            return Err(Error::Shape("vector does not fit block".into()));
        }
        let norm = v.norm();
        if norm < 1e-300 {
            return Err(Error::contract("projection", "zero vector has no span"));
        }
        let u = v / c(norm);
        let bases: Vec<CMat> = alg
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                if j == k {
                    CMat::from_column_slice(n, 1, u.as_slice())
                } else {
                    CMat::zeros(n, 0)
                }
            })
            .collect();
        Self::from_orthonormal(alg, &bases)
    }

    pub fn element(&self) -> &Element {
        &self.element
    }

    pub fn into_element(self) -> Element {
        self.element
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_zero(&self) -> bool {
        self.rank == 0
    }

    pub fn complement(&self, alg: &Algebra) -> Projection {
        Projection {
            element: alg.identity().sub(&self.element),
            rank: alg.matrix_dim() - self.rank,
        }
    }

    /// Orthonormal basis of the range, one matrix per block.
    pub fn range_bases(&self) -> Vec<CMat> {
        self.element
            .blocks()
            .iter()
            .map(|b| linalg::column_space_abs(b, tol::RANK_CUTOFF))
            .collect()
    }

    /// `P ≤ Q` up to tolerance: `‖PQ − P‖ ≤ tol`.
    pub fn is_below(&self, other: &Projection, tol: f64) -> bool {
        self.element.mul(&other.element).sub(&self.element).op_norm() <= tol
    }

    /// Sum of mutually orthogonal projections (orthogonality is the caller's
    /// responsibility; see [`sum_orthogonal`] for the checked version).
    pub fn plus(&self, other: &Projection) -> Projection {
        Projection {
            element: self.element.add(&other.element),
            rank: self.rank + other.rank,
        }
    }
}

/// `‖PQ‖ ≤ 1e−10`.
pub fn is_orthogonal(p: &Projection, q: &Projection) -> bool {
    // Frobenius bounds the operator norm from above, so small Frobenius
    // settles the question cheaply.
    let pq = p.element.mul(&q.element);
    pq.frobenius_norm() <= tol::PROJECTION || pq.op_norm() <= tol::PROJECTION
}

/// Checked version of [`is_orthogonal`].
pub fn check_orthogonal(alg: &Algebra, p: &Projection, q: &Projection) -> Result<bool> {
    alg.check(&p.element)?;
    alg.check(&q.element)?;
    for x in [p, q] {
        Projection::new(alg, x.element.clone())?;
    }
    Ok(is_orthogonal(p, q))
}

pub fn sum_orthogonal(alg: &Algebra, parts: &[Projection]) -> Result<Projection> {
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            if !is_orthogonal(&parts[i], &parts[j]) {
                return Err(Error::contract(
                    "projection",
                    format!("parts {i} and {j} are not orthogonal"),
                ));
            }
        }
    }
    Ok(parts
        .iter()
        .fold(Projection::zero(alg), |acc, p| acc.plus(p)))
}

/// Projection onto `range(P) + range(Q)`.
pub fn join(alg: &Algebra, p: &Projection, q: &Projection) -> Result<Projection> {
    alg.check(&p.element)?;
    alg.check(&q.element)?;
    let spans: Vec<CMat> = p
        .element
        .blocks()
        .iter()
        .zip(q.element.blocks())
        .map(|(a, b)| {
            let mut m = CMat::zeros(a.nrows(), a.ncols() + b.ncols());
            m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
            m.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
            m
        })
        .collect();
    Projection::onto_span(alg, &spans)
}

/// `I − join(I − P, I − Q)`.
pub fn meet(alg: &Algebra, p: &Projection, q: &Projection) -> Result<Projection> {
    let j = join(alg, &p.complement(alg), &q.complement(alg))?;
    Ok(j.complement(alg))
}

/// Splits `P` into `m` nonzero mutually orthogonal projections summing to `P`.
pub fn random_orthogonal_partition(
    alg: &Algebra,
    p: &Projection,
    m: usize,
    seed: u64,
) -> Result<Vec<Projection>> {
    let mut rng = linalg::rng(seed);
    partition_with(alg, p, m, &mut rng)
}

pub fn partition_with<R: Rng + ?Sized>(
    alg: &Algebra,
    p: &Projection,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Projection>> {
    if m == 0 || m > p.rank {
        return Err(Error::contract(
            "projection",
            format!("cannot split a rank-{} projection into {m} parts", p.rank),
        ));
    }
    if m == 1 {
        return Ok(vec![p.clone()]);
    }
    // Random orthonormal basis of each block of range(P).
    let mut vectors: Vec<(usize, CVec)> = Vec::with_capacity(p.rank);
    for (k, basis) in p.range_bases().into_iter().enumerate() {
        let r = basis.ncols();
        if r == 0 {
            continue;
        }
        let mixed = &basis * linalg::haar_unitary(rng, r);
        for j in 0..r {
            vectors.push((k, mixed.column(j).into_owned()));
        }
    }
    vectors.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = (0..m).map(|g| vec![g]).collect();
    for idx in m..vectors.len() {
        groups[rng.random_range(0..m)].push(idx);
    }
    groups
        .iter()
        .map(|g| {
            let bases: Vec<CMat> = alg
                .blocks()
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let cols: Vec<&CVec> = g
                        .iter()
                        .filter(|&&i| vectors[i].0 == k)
                        .map(|&i| &vectors[i].1)
                        .collect();
                    let mut b = CMat::zeros(n, cols.len());
                    for (j, v) in cols.into_iter().enumerate() {
                        b.set_column(j, v);
                    }
                    b
                })
                .collect();
            Projection::from_orthonormal(alg, &bases)
        })
        .collect()
}

/// Eigenprojections of a self-adjoint element, ascending eigenvalues merged
/// when closer than [`tol::EIGEN_MERGE`].
pub fn spectral_projections(alg: &Algebra, h: &Element) -> Result<Vec<(f64, Projection)>> {
    alg.check(h)?;
    let skew = h.sub(&h.adjoint()).op_norm();
    if skew > tol::SELF_ADJOINT {
        return Err(Error::contract(
            "projection",
            format!("element is not self-adjoint (|h-h*| = {skew:.2e})"),
        ));
    }
    let mut eig: Vec<(f64, usize, CVec)> = Vec::new();
    for (k, b) in h.blocks().iter().enumerate() {
        let (vals, vecs) = linalg::hermitian_eigen(b);
        for (j, v) in vals.into_iter().enumerate() {
            eig.push((v, k, vecs.column(j).into_owned()));
        }
    }
    eig.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..eig.len() {
        match groups.last_mut() {
            Some(g) if eig[i].0 - eig[*g.last().unwrap()].0 < tol::EIGEN_MERGE => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let lambda = g.iter().map(|&i| eig[i].0).sum::<f64>() / g.len() as f64;
            let bases: Vec<CMat> = alg
                .blocks()
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let cols: Vec<&CVec> =
                        g.iter().filter(|&&i| eig[i].1 == k).map(|&i| &eig[i].2).collect();
                    let mut b = CMat::zeros(n, cols.len());
                    for (j, v) in cols.into_iter().enumerate() {
                        b.set_column(j, v);
                    }
                    b
                })
                .collect();
            Ok((lambda, Projection::from_orthonormal(alg, &bases)?))
        })
        .collect()
}

/// Haar-random projection whose rank in each block is uniform on `0..=nₖ`.
pub fn random_projection<R: Rng + ?Sized>(alg: &Algebra, rng: &mut R) -> Projection {
    let ranks: Vec<usize> = alg
        .blocks()
        .iter()
        .map(|&n| rng.random_range(0..=n))
        .collect();
    random_projection_with_ranks(alg, &ranks, rng)
}

/// Haar-random projection that is neither zero nor the identity when the
/// algebra allows it.
pub fn random_proper_projection<R: Rng + ?Sized>(alg: &Algebra, rng: &mut R) -> Projection {
    for _ in 0..64 {
        let p = random_projection(alg, rng);
        if p.rank > 0 && p.rank < alg.matrix_dim() {
            return p;
        }
    }
    random_projection(alg, rng)
}

pub fn random_projection_with_ranks<R: Rng + ?Sized>(
    alg: &Algebra,
    ranks: &[usize],
    rng: &mut R,
) -> Projection {
    let bases: Vec<CMat> = alg
        .blocks()
        .iter()
        .zip(ranks)
        .map(|(&n, &r)| {
            let u = linalg::haar_unitary(rng, n);
            u.columns(0, r.min(n)).into_owned()
        })
        .collect();
    Projection::from_orthonormal(alg, &bases).expect("shapes match")
}

/// Haar-random rank-one projection in a uniformly chosen block (weighted by
/// block size).
pub fn random_rank_one<R: Rng + ?Sized>(alg: &Algebra, rng: &mut R) -> Projection {
    let mut t = rng.random_range(0..alg.matrix_dim());
    let mut k = 0;
    while t >= alg.blocks()[k] {
        t -= alg.blocks()[k];
        k += 1;
    }
    let v = linalg::random_unit_vector(rng, alg.blocks()[k]);
    Projection::rank_one(alg, k, &v).expect("vector fits block")
}
