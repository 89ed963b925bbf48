//! Completely positive maps `M_n → M_d` in Kraus form, their Choi matrices
//! and Stinespring dilations, Schatten norms and the two worked p-variation
//! examples (CP restrictions and left multiplication on `L^p`).

use rand::Rng;
use rayon::prelude::*;

use crate::algebra::{Algebra, Element};
use crate::dilation::ConcreteDilation;
use crate::linalg::{self, c, CMat, C64};
use crate::measure::OperatorMap;
use crate::projection::{self, Projection};
use crate::pvariation::{self, BranchScore, PVarOptions, SearchConfig};
use crate::{Error, Result};

/// `A ↦ Σ Kᵢ A Kᵢ*` with each `Kᵢ` of shape `d × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausMap {
    n: usize,
    d: usize,
    kraus: Vec<CMat>,
}

impl KrausMap {
    pub fn new(n: usize, d: usize, kraus: Vec<CMat>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Shape("dimensions must be positive".into()));
        }
        for (i, k) in kraus.iter().enumerate() {
            if k.shape() != (d, n) {
                return Err(Error::Shape(format!(
                    "Kraus operator {i} is {}x{}, expected {d}x{n}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        Ok(Self { n, d, kraus })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            d: n,
            kraus: vec![CMat::identity(n, n)],
        }
    }

    pub fn zero(n: usize, d: usize) -> Self {
        Self { n, d, kraus: Vec::new() }
    }

    /// `A ↦ tr(A) I / n` on `M_n` with Kraus family `{E_ij / √n}`.
    pub fn depolarizing(n: usize) -> Self {
        let s = 1.0 / (n as f64).sqrt();
        let kraus = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let mut k = CMat::zeros(n, n);
                k[(i, j)] = c(s);
                k
            })
            .collect();
        Self { n, d: n, kraus }
    }

    /// Gaussian Kraus operators scaled by `1/√(n m)`.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, m: usize, rng: &mut R) -> Self {
        let s = c(1.0 / ((n * m.max(1)) as f64).sqrt());
        Self {
            n,
            d,
            kraus: (0..m).map(|_| linalg::ginibre(rng, d, n) * s).collect(),
        }
    }

    /// `Σ pᵢ Uᵢ A Uᵢ*` with Haar unitaries and random weights; unital and
    /// trace preserving.
    pub fn random_mixed_unitary<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Self {
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        Self {
            n,
            d: n,
            kraus: w
                .iter()
                .map(|wi| linalg::haar_unitary(rng, n) * c((wi / total).sqrt()))
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(Error::contract("cpmaps", "negative multiples are not CP"));
        }
        Ok(Self {
            kraus: self.kraus.iter().map(|k| k * c(s.sqrt())).collect(),
            ..self.clone()
        })
    }

    pub fn apply(&self, a: &CMat) -> CMat {
        self.kraus
            .iter()
            .fold(CMat::zeros(self.d, self.d), |acc, k| acc + k * a * k.adjoint())
    }

    /// The map as a linear map on `M_n` (one full block).
    pub fn to_operator_map(&self) -> OperatorMap {
        let alg = Algebra::full(self.n);
        let units = (0..self.n * self.n)
            .map(|idx| {
                let (i, j) = (idx / self.n, idx % self.n);
                self.kraus.iter().fold(CMat::zeros(self.d, self.d), |acc, k| {
                    acc + k.column(i) * k.column(j).adjoint()
                })
            })
            .collect();
        OperatorMap::new(alg, self.d, units).expect("unit shapes match")
    }
}

/// `C[i d + a, j d + b] = Ψ(E_ij)[a, b]`.
pub fn choi(map: &KrausMap) -> CMat {
    let (n, d) = (map.n, map.d);
    let mut out = CMat::zeros(n * d, n * d);
    for k in &map.kraus {
        // column (i d + a) of the vectorised Kraus operator
        let v = linalg::CVec::from_fn(n * d, |r, _| k[(r % d, r / d)]);
        out += &v * v.adjoint();
    }
    out
}

/// Kraus operators `K[a, i] = √λ v[i d + a]` from the eigenvectors of a
/// positive semidefinite Choi matrix, dropping eigenvalues below `cutoff`
/// (relative to the largest).
pub fn kraus_from_choi(choi: &CMat, n: usize, d: usize, cutoff: f64) -> Result<KrausMap> {
    if choi.shape() != (n * d, n * d) {
        return Err(Error::Shape(format!("Choi matrix must be {0}x{0}", n * d)));
    }
    let herm = linalg::op_norm(&(choi - choi.adjoint()));
    let scale = linalg::op_norm(choi).max(1.0);
    if herm > cutoff * scale {
        return Err(Error::contract("cpmaps", format!("Choi matrix is not Hermitian ({herm:.2e})")));
    }
    let (vals, vecs) = linalg::hermitian_eigen(choi);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -cutoff * scale {
        return Err(Error::contract(
            "cpmaps",
            format!("Choi matrix is not positive semidefinite (eigenvalue {min:.3e})"),
        ));
    }
    let mut kraus = Vec::new();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for j in order {
        if vals[j] <= cutoff * scale {
            continue;
        }
        let s = vals[j].sqrt();
        kraus.push(CMat::from_fn(d, n, |a, i| vecs[(i * d + a, j)] * s));
    }
    KrausMap::new(n, d, kraus)
}

/// `Ψ(A) = V* π(A) V` with `π(A) = A ⊗ I_m` on `ℂ^n ⊗ ℂ^m` and
/// `V x = Σ_s (K_s* x) ⊗ e_s`.
#[derive(Clone, Debug)]
pub struct StinespringData {
    pub hat_dim: usize,
    /// `π(E_ij)` in the flattening order of `M_n`.
    pub pi_units: Vec<CMat>,
    /// `hat_dim × d`; both sides of the dilation use the same `V`.
    pub v: CMat,
}

impl StinespringData {
    pub fn pi(&self, n: usize) -> OperatorMap {
        OperatorMap::new(Algebra::full(n), self.hat_dim, self.pi_units.clone()).expect("unit shapes match")
    }

    /// `max ‖π(E_ij)π(E_kl) − δ_jk π(E_il)‖` and `max ‖π(E_ij)* − π(E_ji)‖`.
    pub fn homomorphism_residual(&self, n: usize) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let a = &self.pi_units[i * n + j];
                worst = worst.max(linalg::max_abs(&(a.adjoint() - &self.pi_units[j * n + i])));
                for k in 0..n {
                    for l in 0..n {
                        let prod = a * &self.pi_units[k * n + l];
                        let want = if j == k {
                            self.pi_units[i * n + l].clone()
                        } else {
                            CMat::zeros(self.hat_dim, self.hat_dim)
                        };
                        worst = worst.max(linalg::max_abs(&(prod - want)));
                    }
                }
            }
        }
        worst
    }

    /// `max ‖Ψ(E_ij) − V* π(E_ij) V‖` over matrix units.
    pub fn reconstruction_residual(&self, map: &KrausMap) -> f64 {
        let u = map.to_operator_map();
        u.units()
            .iter()
            .zip(&self.pi_units)
            .map(|(a, p)| linalg::max_abs(&(a - self.v.adjoint() * p * &self.v)))
            .fold(0.0, f64::max)
    }

    /// The factorisation as a concrete dilation `S = V*`, `V_Y = π`, `T = V`.
    pub fn concrete_dilation(&self, n: usize) -> ConcreteDilation {
        ConcreteDilation {
            v: self.pi(n),
            s: self.v.adjoint(),
            t: self.v.clone(),
        }
    }
}

pub fn stinespring(map: &KrausMap) -> StinespringData {
    let (n, d) = (map.n, map.d);
    // the zero map still gets a one-dimensional ancilla
    let m = map.kraus.len().max(1);
    let hat_dim = n * m;
    let eye_m = CMat::identity(m, m);
    let pi_units = (0..n * n)
        .map(|idx| {
            let mut e = CMat::zeros(n, n);
            e[(idx / n, idx % n)] = linalg::ONE;
            e.kronecker(&eye_m)
        })
        .collect();
    let mut v = CMat::zeros(hat_dim, d);
    for (s, k) in map.kraus.iter().enumerate() {
        let ks = k.adjoint();
        for i in 0..n {
            for x in 0..d {
                v[(i * m + s, x)] = ks[(i, x)];
            }
        }
    }
    StinespringData { hat_dim, pi_units, v }
}

/// `‖Ψ(I)‖`, the completely bounded norm of a CP map.
pub fn cb_norm_cp(map: &KrausMap) -> f64 {
    linalg::op_norm(&map.apply(&CMat::identity(map.n, map.n)))
}

/// `Σ |λᵢ| ‖Ψᵢ‖_cb` for `Σ λᵢ Ψᵢ`, an upper bound on the cb-norm of the
/// combination.
pub fn cb_upper_bound(terms: &[(C64, KrausMap)]) -> f64 {
    terms.iter().map(|(l, k)| l.norm() * cb_norm_cp(k)).sum()
}

/// `Σ λᵢ Ψᵢ` as a linear map on `M_n`.
pub fn combination(terms: &[(C64, KrausMap)]) -> Result<OperatorMap> {
    let Some((_, first)) = terms.first() else {
        return Err(Error::contract("cpmaps", "empty combination"));
    };
    let (n, d) = (first.n, first.d);
    let mut units = vec![CMat::zeros(d, d); n * n];
    for (l, k) in terms {
        if (k.n, k.d) != (n, d) {
            return Err(Error::Shape("combination terms differ in shape".into()));
        }
        for (u, v) in units.iter_mut().zip(k.to_operator_map().units()) {
            *u += v * *l;
        }
    }
    OperatorMap::new(Algebra::full(n), d, units)
}

#[derive(Clone, Debug)]
pub struct TwoVariationReport {
    pub cb_norm: f64,
    /// `(rank of P, estimate)` per sampled projection.
    pub estimates: Vec<(usize, f64)>,
    pub max_estimate: f64,
    pub slack: f64,
    pub ok: bool,
}

/// Samples projections (the identity first) and checks the 2-variation
/// estimate of the restricted measure against `‖Ψ‖_cb`.
pub fn two_variation_bound_check(map: &KrausMap, samples: usize, budget: usize, seed: u64) -> Result<TwoVariationReport> {
    let cb = cb_norm_cp(map);
    let u = map.to_operator_map();
    let alg = u.algebra().clone();
    let mut rng = linalg::rng(linalg::derive_seed(seed, 0x2FA, 0));
    let mut ps = vec![Projection::identity(&alg)];
    while ps.len() < samples.max(1) {
        ps.push(projection::random_proper_projection(&alg, &mut rng));
    }
    let estimates = ps
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let e = pvariation::pvar_estimate_with(
                &u,
                p,
                2.0,
                budget,
                linalg::derive_seed(seed, 0x2FB, i as u64),
                &PVarOptions::default(),
            )?;
            Ok((p.rank(), e.value))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_estimate = estimates.iter().map(|e| e.1).fold(0.0, f64::max);
    let slack = cb - max_estimate;
    Ok(TwoVariationReport {
        cb_norm: cb,
        estimates,
        max_estimate,
        slack,
        ok: slack >= -crate::tol::BOUND_SLACK,
    })
}

/// Per-block weights of the trace `τ(a) = Σ wₖ tr(aₖ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceWeights(pub Vec<f64>);

impl TraceWeights {
    pub fn unit(alg: &Algebra) -> Self {
        Self(vec![1.0; alg.num_blocks()])
    }

    /// Weights making `τ(I) = 1`.
    pub fn normalized(alg: &Algebra) -> Self {
        Self(vec![1.0 / alg.matrix_dim() as f64; alg.num_blocks()])
    }

    pub fn tau_identity(&self, alg: &Algebra) -> f64 {
        self.0.iter().zip(alg.blocks()).map(|(w, &n)| w * n as f64).sum()
    }

    fn check(&self, alg: &Algebra) -> Result<()> {
        if self.0.len() != alg.num_blocks() {
            return Err(Error::Shape("one trace weight per block required".into()));
        }
        if self.0.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::contract("cpmaps", "trace weights must be positive"));
        }
        Ok(())
    }
}

/// `τ(|a|^p)^{1/p}`.
pub fn schatten_norm(alg: &Algebra, a: &Element, p: f64, weights: &TraceWeights) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::contract("cpmaps", format!("Schatten norm needs p >= 1, got {p}")));
    }
    alg.check(a)?;
    weights.check(alg)?;
    Ok(schatten_unchecked(a, p, &weights.0))
}

fn schatten_unchecked(a: &Element, p: f64, weights: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut smax = 0.0_f64;
    let svals: Vec<Vec<f64>> = a.blocks().iter().map(|b| linalg::svd(b).s).collect();
    for s in svals.iter().flatten() {
        smax = smax.max(*s);
    }
    if smax == 0.0 {
        return 0.0;
    }
    for (s, w) in svals.iter().zip(weights) {
        sum += w * s.iter().map(|x| (x / smax).powf(p)).sum::<f64>();
    }
    smax * sum.powf(1.0 / p)
}

#[derive(Clone, Debug)]
pub struct FamilyReport {
    pub instances: usize,
    /// `max (Σ‖Pᵢ y‖_p^p)^{1/p} − ‖y‖_p` with `‖y‖_p = 1`.
    pub max_excess: f64,
    pub ok: bool,
}

pub const FAMILY_TOL: f64 = 1e-10;

/// `(Σ ‖Pᵢ y‖_p^p)^{1/p}` for an orthogonal family.
pub fn family_lp_sum(family: &[Projection], y: &Element, p: f64, weights: &TraceWeights) -> f64 {
    let s: Vec<f64> = family
        .iter()
        .map(|q| schatten_unchecked(&q.element().mul(y), p, &weights.0))
        .collect();
    pvariation::lp_aggregate(&s, p)
}

/// `(Σ ‖Pᵢy‖_p^p)^{1/p} ≤ ‖y‖_p` on random orthogonal families (partitions of
/// a random projection) and random `y` normalised to `‖y‖_p = 1`. Values of
/// `p < 2` are accepted here so the inequality can be probed outside its range.
pub fn family_check(alg: &Algebra, p: f64, instances: usize, seed: u64, weights: &TraceWeights) -> Result<FamilyReport> {
    if !(p >= 1.0) {
        return Err(Error::contract("cpmaps", format!("p must be >= 1, got {p}")));
    }
    weights.check(alg)?;
    let excess: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|t| {
            let mut rng = linalg::rng(linalg::derive_seed(seed, 0xE41, t as u64));
            let base = if rng.random_bool(0.5) {
                Projection::identity(alg)
            } else {
                let mut q = projection::random_projection(alg, &mut rng);
                while q.is_zero() {
                    q = projection::random_projection(alg, &mut rng);
                }
                q
            };
            let m = rng.random_range(1..=base.rank());
            let family = projection::partition_with(alg, &base, m, &mut rng).expect("m within rank");
            let y = random_lp_element(alg, p, weights, &mut rng);
            family_lp_sum(&family, &y, p, weights) - 1.0
        })
        .collect();
    let max_excess = excess.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(FamilyReport {
        instances,
        max_excess,
        ok: max_excess <= FAMILY_TOL,
    })
}

/// Random element with `‖y‖_p = 1`, cycling through Gaussian, rank-one and
/// positive shapes.
pub fn random_lp_element<R: Rng + ?Sized>(alg: &Algebra, p: f64, weights: &TraceWeights, rng: &mut R) -> Element {
    let y = match rng.random_range(0..3) {
        0 => alg.random_element(rng),
        1 => projection::random_rank_one(alg, rng).into_element(),
        _ => {
            let a = alg.random_element(rng);
            a.mul(&a.adjoint())
        }
    };
    let n = schatten_unchecked(&y, p, &weights.0);
    y.scale(c(1.0 / n))
}

/// The `p = 1.5` instance on `M₂` violating the family inequality:
/// `y = uu*` with `u = (1,1)/√2` and the diagonal units as the family.
/// Returns `(left side, ‖y‖_p)`.
pub fn family_counter_probe(p: f64) -> (f64, f64) {
    let alg = Algebra::full(2);
    let w = TraceWeights::unit(&alg);
    let y = alg.from_dense(&CMat::from_element(2, 2, c(0.5))).expect("2x2");
    let family: Vec<Projection> = (0..2)
        .map(|k| {
            let mut v = linalg::CVec::zeros(2);
            v[k] = linalg::ONE;
            Projection::rank_one(&alg, 0, &v).expect("unit vector")
        })
        .collect();
    (family_lp_sum(&family, &y, p, &w), schatten_unchecked(&y, p, &w.0))
}

/// `‖branch · y‖_p`.
struct LeftMult<'a> {
    y: &'a Element,
    p: f64,
    weights: &'a [f64],
}

impl BranchScore for LeftMult<'_> {
    fn score(&self, product: &Element) -> f64 {
        schatten_unchecked(&product.mul(self.y), self.p, self.weights)
    }
}

#[derive(Clone, Debug)]
pub struct LeftMultReport {
    pub family: FamilyReport,
    pub estimates: Vec<f64>,
    pub max_estimate: f64,
    pub ok: bool,
}

/// Estimates of the p-variation of `P ↦ L_P` on `(M, ‖·‖_p)` for sampled `P`,
/// each a supremum over trees and seeded `y` with `‖y‖_p = 1`, against the
/// bound 1; plus the family inequality on `instances` random cases.
#[allow(clippy::too_many_arguments)]
pub fn left_mult_pvar_check(
    alg: &Algebra,
    p: f64,
    samples: usize,
    budget: usize,
    instances: usize,
    seed: u64,
    weights: &TraceWeights,
) -> Result<LeftMultReport> {
    if !(p >= 2.0) {
        return Err(Error::contract("cpmaps", format!("the left multiplication bound needs p >= 2, got {p}")));
    }
    if budget == 0 {
        return Err(Error::contract("cpmaps", "budget must be >= 1"));
    }
    weights.check(alg)?;
    let family = family_check(alg, p, instances, linalg::derive_seed(seed, 0x41, 0), weights)?;
    let mut rng = linalg::rng(linalg::derive_seed(seed, 0x1EF, 0));
    let mut ps = vec![Projection::identity(alg)];
    while ps.len() < samples.max(1) {
        ps.push(projection::random_proper_projection(alg, &mut rng));
    }
    let cfg = SearchConfig::default();
    let estimates: Vec<f64> = ps
        .iter()
        .enumerate()
        .map(|(i, root)| {
            let pseed = linalg::derive_seed(seed, 0x1F0, i as u64);
            (0..budget)
                .into_par_iter()
                .map(|r| {
                    let mut rng = linalg::rng(linalg::derive_seed(pseed, 0, r as u64));
                    let y = if r == 0 {
                        let i = alg.identity();
                        let n = schatten_unchecked(&i, p, &weights.0);
                        i.scale(c(1.0 / n))
                    } else {
                        random_lp_element(alg, p, weights, &mut rng)
                    };
                    let scorer = LeftMult { y: &y, p, weights: &weights.0 };
                    pvariation::search_trees(alg, root, &scorer, p, 1, linalg::derive_seed(pseed, 1, r as u64), &[], &cfg)
                        .value
                })
                .reduce(|| 0.0, f64::max)
        })
        .collect();
    let max_estimate = estimates.iter().copied().fold(0.0, f64::max);
    Ok(LeftMultReport {
        ok: family.ok && max_estimate <= 1.0 + crate::tol::BOUND_SLACK,
        family,
        estimates,
        max_estimate,
    })
}
