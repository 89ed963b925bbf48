//! Operator-valued quantum measures on the projection lattice.
//!
//! A measure is either the restriction of a linear map to projections
//! ([`OperatorMap`]) or a finite table of `(projection, value)` pairs. The
//! Gleason solver recovers the linear map from a spanning table.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::algebra::{
    maximize_over_ball, AscentConfig, Algebra, BallObjective, Element, SupResult,
};
use crate::linalg::{self, c, CMat, CVec};
use crate::projection::{self, Projection};
use crate::{tol, Error, Result};

/// A linear map `M → M_d(C)` given by its values on the matrix units.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMap {
    alg: Algebra,
    d: usize,
    units: Vec<CMat>,
}

impl OperatorMap {
    pub fn new(alg: Algebra, d: usize, units: Vec<CMat>) -> Result<Self> {
        if units.len() != alg.total_dim() {
            return Err(Error::Shape(format!(
                "{} unit values for algebra of dimension {}",
                units.len(),
                alg.total_dim()
            )));
        }
        if let Some(u) = units.iter().find(|u| u.nrows() != d || u.ncols() != d) {
            return Err(Error::Shape(format!(
                "unit value is {}x{}, expected {d}x{d}",
                u.nrows(),
                u.ncols()
            )));
        }
        Ok(Self { alg, d, units })
    }

    /// Tabulates an arbitrary (assumed linear) function on the matrix units.
    pub fn from_fn(alg: Algebra, d: usize, f: impl Fn(&Element) -> CMat) -> Result<Self> {
        let units = (0..alg.total_dim()).map(|i| f(&alg.matrix_unit(i))).collect();
        Self::new(alg, d, units)
    }

    pub fn zero(alg: Algebra, d: usize) -> Self {
        let units = vec![CMat::zeros(d, d); alg.total_dim()];
        Self { alg, d, units }
    }

    /// The inclusion `M ⊂ M_{Σnₖ}` as a map into `B(C^{Σnₖ})`.
    pub fn identity(alg: Algebra) -> Self {
        let d = alg.matrix_dim();
        Self::from_fn(alg, d, |a| a.to_dense()).expect("shapes match")
    }

    /// `A ↦ tr(A)·I_d`.
    pub fn trace(alg: Algebra, d: usize) -> Self {
        Self::from_fn(alg, d, |a| CMat::identity(d, d) * a.trace()).expect("shapes match")
    }

    /// Unit values with i.i.d. complex Gaussian entries scaled by `1/d`.
    pub fn random<R: Rng + ?Sized>(alg: Algebra, d: usize, rng: &mut R) -> Self {
        let units = (0..alg.total_dim())
            .map(|_| linalg::ginibre(rng, d, d) * c(1.0 / d as f64))
            .collect();
        Self { alg, d, units }
    }

    pub fn algebra(&self) -> &Algebra {
        &self.alg
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn units(&self) -> &[CMat] {
        &self.units
    }

    pub fn apply(&self, a: &Element) -> CMat {
        let mut out = CMat::zeros(self.d, self.d);
        for (coef, u) in a.flatten().iter().zip(&self.units) {
            if *coef != linalg::ZERO {
                out += u * *coef;
            }
        }
        out
    }

    pub fn checked_apply(&self, a: &Element) -> Result<CMat> {
        self.alg.check(a)?;
        Ok(self.apply(a))
    }

    /// `d × total_dim` matrix of `a ↦ Ū(a)x` on flattened elements.
    pub fn apply_x(&self, x: &CVec) -> CMat {
        let mut m = CMat::zeros(self.d, self.units.len());
        for (idx, u) in self.units.iter().enumerate() {
            m.set_column(idx, &(u * x));
        }
        m
    }

    /// `d² × total_dim` matrix sending `flatten(a)` to `vec(Ū(a))`.
    pub fn flat_matrix(&self) -> CMat {
        let mut m = CMat::zeros(self.d * self.d, self.units.len());
        for (idx, u) in self.units.iter().enumerate() {
            m.set_column(idx, &linalg::vec_of(u));
        }
        m
    }

    pub fn scale(&self, s: f64) -> OperatorMap {
        OperatorMap {
            alg: self.alg.clone(),
            d: self.d,
            units: self.units.iter().map(|u| u * c(s)).collect(),
        }
    }

    /// Largest entrywise deviation over all unit values.
    pub fn unit_distance(&self, other: &OperatorMap) -> f64 {
        self.units
            .iter()
            .zip(&other.units)
            .map(|(a, b)| linalg::max_abs(&(a - b)))
            .fold(0.0, f64::max)
    }

    /// Lower bound on `sup_{‖R‖≤1} ‖Ū(R)‖`.
    pub fn norm_estimate(&self, budget: usize, seed: u64, pool: &[Element]) -> Result<SupResult> {
        let obj = MapNormObjective { map: self };
        maximize_over_ball(&self.alg, &obj, AscentConfig::with_restarts(budget), seed, pool)
    }

    pub fn restrict(&self) -> QuantumMeasure {
        QuantumMeasure::Linear(self.clone())
    }

    /// Tabulates the restriction on the given projections.
    pub fn tabulate(&self, projections: Vec<Projection>) -> TabulatedMeasure {
        let pairs = projections
            .into_iter()
            .map(|p| {
                let v = self.apply(p.element());
                (p, v)
            })
            .collect();
        TabulatedMeasure {
            alg: self.alg.clone(),
            d: self.d,
            pairs,
        }
    }
}

struct MapNormObjective<'a> {
    map: &'a OperatorMap,
}

impl BallObjective for MapNormObjective<'_> {
    fn value(&self, r: &Element) -> f64 {
        linalg::op_norm(&self.map.apply(r))
    }

    fn gradient(&self, r: &Element) -> Element {
        let (_, u, v) = linalg::top_singular(&self.map.apply(r));
        let coeffs: Vec<_> = self
            .map
            .units
            .iter()
            .map(|e| (u.adjoint() * e * &v)[(0, 0)].conj())
            .collect();
        self.map.alg.unflatten(&coeffs).expect("dimension matches")
    }
}

/// Finite table of projection values.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedMeasure {
    alg: Algebra,
    d: usize,
    pairs: Vec<(Projection, CMat)>,
}

impl TabulatedMeasure {
    pub fn new(alg: Algebra, d: usize, pairs: Vec<(Projection, CMat)>) -> Result<Self> {
        for (p, v) in &pairs {
            alg.check(p.element())?;
            if v.nrows() != d || v.ncols() != d {
                return Err(Error::Shape(format!("value must be {d}x{d}")));
            }
        }
        Ok(Self { alg, d, pairs })
    }

    pub fn algebra(&self) -> &Algebra {
        &self.alg
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn pairs(&self) -> &[(Projection, CMat)] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [(Projection, CMat)] {
        &mut self.pairs
    }

    /// Index of the stored projection closest to `p` in max-abs distance,
    /// together with that distance.
    fn nearest(&self, p: &Projection) -> Option<(usize, f64)> {
        let tr = p.element().trace();
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, (q, _))| q.rank() == p.rank() && (q.element().trace() - tr).norm() < 1e-6)
            .map(|(i, (q, _))| (i, q.element().sub(p.element()).max_abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn lookup(&self, p: &Projection) -> Result<&CMat> {
        match self.nearest(p) {
            Some((i, dist)) if dist <= tol::LOOKUP => Ok(&self.pairs[i].1),
            Some((_, dist)) => Err(Error::Lookup { distance: dist }),
            None => Err(Error::Lookup {
                distance: f64::INFINITY,
            }),
        }
    }

    /// All `(i, j, k)` with `i < j`, `Pᵢ ⊥ Pⱼ` and `Pᵢ + Pⱼ = Pₖ` in the table.
    pub fn orthogonal_triples(&self) -> Vec<(usize, usize, usize)> {
        let n = self.pairs.len();
        let dim = self.alg.matrix_dim();
        let found: Vec<Vec<(usize, usize, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                let pi = &self.pairs[i].0;
                for j in i + 1..n {
                    let pj = &self.pairs[j].0;
                    if pi.rank() + pj.rank() > dim || !projection::is_orthogonal(pi, pj) {
                        continue;
                    }
                    if let Some((k, dist)) = self.nearest(&pi.plus(pj)) {
                        if dist <= tol::LOOKUP {
                            out.push((i, j, k));
                        }
                    }
                }
                out
            })
            .collect();
        found.into_iter().flatten().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuantumMeasure {
    Linear(OperatorMap),
    Tabulated(TabulatedMeasure),
}

impl QuantumMeasure {
    pub fn algebra(&self) -> &Algebra {
        match self {
            Self::Linear(m) => m.algebra(),
            Self::Tabulated(t) => t.algebra(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Self::Linear(m) => m.d(),
            Self::Tabulated(t) => t.d(),
        }
    }

    pub fn evaluate(&self, p: &Projection) -> Result<CMat> {
        match self {
            Self::Linear(m) => m.checked_apply(p.element()),
            Self::Tabulated(t) => t.lookup(p).cloned(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdditivityReport {
    pub max_violation: f64,
    pub worst_pair: Option<(Projection, Projection)>,
    pub pairs_checked: usize,
    pub partitions_checked: usize,
}

/// Largest additivity defect over sampled orthogonal pairs and partitions of
/// the identity. For tabulated measures the pairs are the orthogonal pairs
/// whose sum is also tabulated (a seeded subsample of `trials` of them).
pub fn check_additivity(u: &QuantumMeasure, trials: usize, seed: u64) -> Result<AdditivityReport> {
    if trials == 0 {
        return Err(Error::contract("measure", "trials must be >= 1"));
    }
    match u {
        QuantumMeasure::Linear(m) => Ok(linear_additivity(m, trials, seed)),
        QuantumMeasure::Tabulated(t) => Ok(tabulated_additivity(t, trials, seed)),
    }
}

fn linear_additivity(m: &OperatorMap, trials: usize, seed: u64) -> AdditivityReport {
    let alg = m.algebra();
    let dim = alg.matrix_dim();
    let results: Vec<(f64, Option<(Projection, Projection)>, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = linalg::rng(linalg::derive_seed(seed, 0xADD, t as u64));
            let i = Projection::identity(alg);
            if t % 2 == 0 && dim >= 2 {
                let parts_n = rng.random_range(2..=dim);
                let parts = projection::partition_with(alg, &i, parts_n, &mut rng)
                    .expect("parts within rank");
                let sum = parts
                    .iter()
                    .fold(CMat::zeros(m.d(), m.d()), |acc, p| acc + m.apply(p.element()));
                let v = linalg::op_norm(&(m.apply(i.element()) - sum));
                (v, None, true)
            } else {
                let p = projection::random_projection(alg, &mut rng);
                if p.rank() < 2 {
                    let q = p.complement(alg);
                    let v = pair_defect(m.apply(p.plus(&q).element()), &m.apply(p.element()), &m.apply(q.element()));
                    return (v, Some((p, q)), false);
                }
                let parts = projection::partition_with(alg, &p, 2, &mut rng).expect("rank >= 2");
                let v = pair_defect(
                    m.apply(p.element()),
                    &m.apply(parts[0].element()),
                    &m.apply(parts[1].element()),
                );
                (v, Some((parts[0].clone(), parts[1].clone())), false)
            }
        })
        .collect();
    let mut report = AdditivityReport {
        max_violation: 0.0,
        worst_pair: None,
        pairs_checked: 0,
        partitions_checked: 0,
    };
    for (v, pair, is_partition) in results {
        if is_partition {
            report.partitions_checked += 1;
        } else {
            report.pairs_checked += 1;
        }
        if v > report.max_violation || (report.worst_pair.is_none() && pair.is_some() && v >= report.max_violation) {
            report.max_violation = report.max_violation.max(v);
            if pair.is_some() {
                report.worst_pair = pair;
            }
        }
    }
    report
}

fn pair_defect(sum: CMat, a: &CMat, b: &CMat) -> f64 {
    linalg::op_norm(&(sum - a - b))
}

fn tabulated_additivity(t: &TabulatedMeasure, trials: usize, seed: u64) -> AdditivityReport {
    let mut triples = t.orthogonal_triples();
    if triples.len() > trials {
        let mut rng = linalg::rng(seed);
        triples.shuffle(&mut rng);
        triples.truncate(trials);
    }
    let mut report = AdditivityReport {
        max_violation: 0.0,
        worst_pair: None,
        pairs_checked: triples.len(),
        partitions_checked: 0,
    };
    for (i, j, k) in triples {
        let v = pair_defect(t.pairs[k].1.clone(), &t.pairs[i].1, &t.pairs[j].1);
        if report.worst_pair.is_none() || v > report.max_violation {
            report.max_violation = v;
            report.worst_pair = Some((t.pairs[i].0.clone(), t.pairs[j].0.clone()));
        }
    }
    report
}

#[derive(Clone, Debug)]
pub struct MeasureNorm {
    pub value: f64,
    pub witness: Projection,
}

/// Lower bound on `sup_P ‖U(P)‖`.
///
/// Linear measures: random projections of every rank plus `0` and `I`,
/// each improved by ascent. At a projection with top singular pair `(u, v)`
/// the functional `Q ↦ Re u*Ū(Q)v` is maximised over projections by the
/// positive spectral projection of its Hermitian symbol, and the value never
/// decreases along the iteration.
pub fn measure_norm(u: &QuantumMeasure, budget: usize, seed: u64) -> Result<MeasureNorm> {
    if budget == 0 {
        return Err(Error::contract("measure", "budget must be >= 1"));
    }
    match u {
        QuantumMeasure::Tabulated(t) => {
            let best = t
                .pairs
                .iter()
                .map(|(p, v)| (linalg::op_norm(v), p))
                .fold(None::<(f64, &Projection)>, |acc, (v, p)| match acc {
                    Some((bv, _)) if bv >= v => acc,
                    _ => Some((v, p)),
                });
            Ok(match best {
                Some((value, p)) => MeasureNorm {
                    value,
                    witness: p.clone(),
                },
                None => MeasureNorm {
                    value: 0.0,
                    witness: Projection::zero(t.algebra()),
                },
            })
        }
        QuantumMeasure::Linear(m) => linear_measure_norm(m, budget, seed),
    }
}

fn linear_measure_norm(m: &OperatorMap, budget: usize, seed: u64) -> Result<MeasureNorm> {
    let alg = m.algebra();
    let starts = budget + 1;
    let results: Vec<MeasureNorm> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let p0 = if s == 0 {
                Projection::identity(alg)
            } else {
                let mut rng = linalg::rng(linalg::derive_seed(seed, 0x3EA5, s as u64));
                projection::random_projection(alg, &mut rng)
            };
            projection_ascent(m, p0)
        })
        .collect();
    let mut best = MeasureNorm {
        value: 0.0,
        witness: Projection::zero(alg),
    };
    for r in results {
        if r.value > best.value {
            best = r;
        }
    }
    Ok(best)
}

fn projection_ascent(m: &OperatorMap, start: Projection) -> MeasureNorm {
    let alg = m.algebra();
    let mut p = start;
    let mut value = linalg::op_norm(&m.apply(p.element()));
    for _ in 0..100 {
        let (sigma, u, v) = linalg::top_singular(&m.apply(p.element()));
        let coeffs: Vec<_> = m
            .units()
            .iter()
            .map(|e| (u.adjoint() * e * &v)[(0, 0)])
            .collect();
        let cmat = alg.unflatten(&coeffs).expect("dimension matches");
        // Re Σ Q_ij C_ij = tr(Q H) for Hermitian Q, H = (Cᵀ + conj C)/2.
        let bases: Vec<CMat> = cmat
            .blocks()
            .iter()
            .map(|b| {
                let h = (b.transpose() + b.conjugate()) * c(0.5);
                let (vals, vecs) = linalg::hermitian_eigen(&h);
                let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.0).collect();
                let mut basis = CMat::zeros(b.nrows(), keep.len());
                for (j, &i) in keep.iter().enumerate() {
                    basis.set_column(j, &vecs.column(i));
                }
                basis
            })
            .collect();
        let cand = Projection::from_orthonormal(alg, &bases).expect("shapes match");
        let cv = linalg::op_norm(&m.apply(cand.element()));
        if cv > value * (1.0 + 1e-12) && cv > sigma {
            p = cand;
            value = cv;
        } else {
            break;
        }
    }
    MeasureNorm { value, witness: p }
}

#[derive(Clone, Debug)]
pub struct Extension {
    pub map: OperatorMap,
    pub residual: f64,
    pub rank: usize,
    pub extendable: bool,
    pub warnings: Vec<String>,
}

/// Least-squares linear map agreeing with the table, rejecting tables whose
/// projections do not span the algebra.
pub fn gleason_extend(t: &TabulatedMeasure, tol: f64) -> Result<Extension> {
    let alg = t.algebra();
    let td = alg.total_dim();
    let d = t.d();
    let n = t.pairs.len();
    let mut warnings = Vec::new();
    if alg.has_type_i2() {
        warnings.push(
            "algebra has a 2x2 block: additive measures need not extend linearly there".to_string(),
        );
    }
    let mut a = CMat::zeros(n, td);
    let mut b = CMat::zeros(n, d * d);
    for (row, (p, v)) in t.pairs.iter().enumerate() {
        a.set_row(row, &p.element().flatten().transpose());
        b.set_row(row, &linalg::vec_of(v).transpose());
    }
    let rank = if n == 0 {
        0
    } else {
        linalg::column_space(&a.adjoint(), tol::RANK_CUTOFF).ncols()
    };
    if rank < td {
        return Err(Error::Underdetermined { rank, required: td });
    }
    let x = linalg::pinv(&a, tol::RANK_CUTOFF) * b;
    let units = (0..td)
        .map(|idx| {
            let row = x.row(idx).transpose();
            linalg::unvec(&row, d, d)
        })
        .collect();
    let map = OperatorMap::new(alg.clone(), d, units)?;
    let residual = t
        .pairs
        .iter()
        .map(|(p, v)| linalg::op_norm(&(map.apply(p.element()) - v)))
        .fold(0.0, f64::max);
    Ok(Extension {
        map,
        residual,
        rank,
        extendable: residual <= tol,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct NormBracket {
    pub measure_norm: f64,
    pub extension_norm: f64,
    pub ok: bool,
}

pub const BRACKET_EPS: f64 = 1e-4;

/// Estimates `‖U‖` and `‖Ū‖` and checks `‖U‖ ≤ ‖Ū‖ ≤ 4‖U‖` up to `1e−4`.
pub fn extension_norm_bracket(
    u: &QuantumMeasure,
    ext: &OperatorMap,
    budget: usize,
    seed: u64,
) -> Result<NormBracket> {
    let mu = measure_norm(u, budget, seed)?;
    // The projection witness is a point of the unit ball, so ‖Ū‖ is at least
    // the measure value there.
    let pool = [mu.witness.element().clone()];
    let en = ext.norm_estimate(budget, linalg::derive_seed(seed, 0xE47, 0), &pool)?;
    let ok = mu.value - BRACKET_EPS <= en.value && en.value <= 4.0 * mu.value + BRACKET_EPS;
    Ok(NormBracket {
        measure_norm: mu.value,
        extension_norm: en.value,
        ok,
    })
}

/// Bloch x-coordinate of a rank-one projection of `M₂`: `v_x = 2 Re P₀₁`.
pub fn bloch_x(p: &Projection) -> f64 {
    2.0 * p.element().block(0)[(0, 1)].re
}

/// The additive but nonlinear measure on `M₂`: `μ(0) = μ(I) = 0` and
/// `μ(P) = v_x(P)³` for rank-one `P`. The table holds `0`, `I` and `count`
/// random rank-one projections together with their complements.
pub fn bloch_cubic_counterexample(count: usize, seed: u64) -> TabulatedMeasure {
    let alg = Algebra::full(2);
    let mut rng = linalg::rng(seed);
    let mut pairs = vec![
        (Projection::zero(&alg), CMat::zeros(1, 1)),
        (Projection::identity(&alg), CMat::zeros(1, 1)),
    ];
    for _ in 0..count {
        let p = projection::random_rank_one(&alg, &mut rng);
        let q = p.complement(&alg);
        let vp = bloch_x(&p).powi(3);
        let vq = bloch_x(&q).powi(3);
        pairs.push((p, CMat::from_element(1, 1, c(vp))));
        pairs.push((q, CMat::from_element(1, 1, c(vq))));
    }
    TabulatedMeasure { alg, d: 1, pairs }
}

/// Scalar measure on `ℓ∞ⁿ` with atom values `values`, tabulated on all
/// `2ⁿ` projections (`n ≤ 12`).
pub fn abelian_scalar(values: &[f64]) -> Result<TabulatedMeasure> {
    let n = values.len();
    if n == 0 || n > 12 {
        return Err(Error::contract("measure", "abelian measure needs 1..=12 atoms"));
    }
    let alg = Algebra::diagonal(n);
    let mut pairs = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let flat: Vec<_> = (0..n)
            .map(|i| if mask >> i & 1 == 1 { linalg::ONE } else { linalg::ZERO })
            .collect();
        let e = alg.unflatten(&flat)?;
        let p = Projection::from_parts_unchecked(e, mask.count_ones() as usize);
        let v: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| values[i]).sum();
        pairs.push((p, CMat::from_element(1, 1, c(v))));
    }
    Ok(TabulatedMeasure { alg, d: 1, pairs })
}
