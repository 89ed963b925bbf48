//! The elementary dilation space of a measure and the maps `S`, `T`, `V(P)`.
//!
//! Maps `Φ: M → C^d` are stored as `d × total_dim` matrices acting on
//! flattened elements. The space is the span of the generator maps
//! `Ū_{Q,x}: R ↦ Ū(RQ)x`; coordinates are taken in a Hilbert–Schmidt
//! orthonormal basis of that span, which is only a coordinate system. The
//! dilation norms are computed as suprema over the unit ball.

use rand::Rng;
use rayon::prelude::*;

use crate::algebra::{
    sample_unit_ball_with, sup_over_ball_with, Algebra, AscentConfig, BallSample, Element,
    SupResult,
};
use crate::linalg::{self, c, CMat, CVec, C64};
use crate::measure::{self, OperatorMap, QuantumMeasure};
use crate::projection::{self, Projection};
use crate::{tol, Error, Result};

/// One term `C·Ū_{Q,x}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub q: Element,
    pub x: CVec,
    pub coef: C64,
}

impl Generator {
    pub fn new(q: Element, x: CVec, coef: C64) -> Result<Self> {
        let n = q.op_norm();
        if n > 1.0 + 1e-10 {
            return Err(Error::contract(
                "dilation",
                format!("generator element has norm {n} > 1"),
            ));
        }
        Ok(Self { q, x, coef })
    }

    /// `|C|·‖x‖`, the weight of the term in the norm bounds.
    pub fn weight(&self) -> f64 {
        self.coef.norm() * self.x.norm()
    }
}

#[derive(Clone, Debug)]
pub struct ElementarySpace {
    source: OperatorMap,
    generators: Vec<Generator>,
    basis: CMat,
    saturated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildOptions {
    /// Extra random generators per saturation round.
    pub batch: usize,
    pub max_rounds: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            batch: 10,
            max_rounds: 64,
        }
    }
}

pub fn build_elementary_space(
    ubar: &OperatorMap,
    generator_budget: usize,
    seed: u64,
) -> Result<ElementarySpace> {
    build_with(ubar, generator_budget, seed, BuildOptions::default())
}

pub fn build_with(
    ubar: &OperatorMap,
    generator_budget: usize,
    seed: u64,
    opts: BuildOptions,
) -> Result<ElementarySpace> {
    if generator_budget == 0 {
        return Err(Error::contract("dilation", "generator budget must be >= 1"));
    }
    let alg = ubar.algebra();
    let d = ubar.d();
    let mut rng = linalg::rng(seed);
    let mut generators: Vec<Generator> = (0..d)
        .map(|j| {
            let mut e = CVec::zeros(d);
            e[j] = linalg::ONE;
            Generator {
                q: alg.identity(),
                x: e,
                coef: linalg::ONE,
            }
        })
        .collect();
    for _ in 0..generator_budget {
        generators.push(random_generator(alg, d, &mut rng));
    }
    let mut space = ElementarySpace {
        source: ubar.clone(),
        generators,
        basis: CMat::zeros(d * alg.total_dim(), 0),
        saturated: false,
    };
    space.refresh_basis();
    let full = d * alg.total_dim();
    for _ in 0..opts.max_rounds {
        if space.dim() == full || space.source_is_zero() {
            space.saturated = true;
            break;
        }
        let before = space.dim();
        for _ in 0..opts.batch {
            space.generators.push(random_generator(alg, d, &mut rng));
        }
        space.refresh_basis();
        if space.dim() == before {
            space.saturated = true;
            break;
        }
    }
    Ok(space)
}

fn random_generator<R: Rng + ?Sized>(alg: &Algebra, d: usize, rng: &mut R) -> Generator {
    let q = sample_unit_ball_with(alg, rng, BallSample::Contraction);
    let x = CVec::from_fn(d, |_, _| linalg::complex_normal(rng));
    Generator {
        q,
        x,
        coef: linalg::ONE,
    }
}

impl ElementarySpace {
    pub fn source(&self) -> &OperatorMap {
        &self.source
    }

    pub fn algebra(&self) -> &Algebra {
        self.source.algebra()
    }

    pub fn d(&self) -> usize {
        self.source.d()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Orthonormal columns spanning the vectorised generator maps.
    pub fn basis(&self) -> &CMat {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Whether the last batch of random generators left the dimension
    /// unchanged.
    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    fn source_is_zero(&self) -> bool {
        self.source.units().iter().all(|u| u.iter().all(|z| *z == linalg::ZERO))
    }

    fn refresh_basis(&mut self) {
        let g = self.generator_matrix();
        self.basis = linalg::column_space(&g, tol::RANK_CUTOFF);
    }

    /// Columns are the vectorised generator maps (coefficients included).
    pub fn generator_matrix(&self) -> CMat {
        let dd = self.d() * self.algebra().total_dim();
        let mut g = CMat::zeros(dd, self.generators.len());
        for (i, gen) in self.generators.iter().enumerate() {
            g.set_column(i, &linalg::vec_of(&self.generator_map(gen)));
        }
        g
    }

    /// Concrete matrix of `C·Ū_{Q,x}`.
    pub fn generator_map(&self, g: &Generator) -> CMat {
        self.source.apply_x(&g.x) * self.algebra().right_mult_matrix(&g.q) * g.coef
    }

    /// Concrete matrix of `Σ Cᵢ Ū_{Qᵢ,xᵢ}`.
    pub fn combination_map(&self, terms: &[Generator]) -> CMat {
        terms.iter().fold(
            CMat::zeros(self.d(), self.algebra().total_dim()),
            |acc, g| acc + self.generator_map(g),
        )
    }

    pub fn map_of(&self, coords: &CVec) -> Result<CMat> {
        self.check_coords(coords)?;
        Ok(linalg::unvec(&(&self.basis * coords), self.d(), self.algebra().total_dim()))
    }

    /// Coordinates of a concrete map and the distance from the map to the span.
    pub fn coords_of(&self, map: &CMat) -> (CVec, f64) {
        let v = linalg::vec_of(map);
        let coords = self.basis.adjoint() * &v;
        let residual = (&self.basis * &coords - v).norm();
        (coords, residual)
    }

    pub fn combine(&self, terms: &[Generator]) -> CVec {
        self.coords_of(&self.combination_map(terms)).0
    }

    /// Largest distance from a generator map to the span.
    pub fn span_residual(&self) -> f64 {
        self.generators
            .iter()
            .map(|g| self.coords_of(&self.generator_map(g)).1)
            .fold(0.0, f64::max)
    }

    fn check_coords(&self, coords: &CVec) -> Result<()> {
        if coords.len() != self.dim() {
            return Err(Error::contract(
                "dilation",
                format!("{} coordinates for a space of dimension {}", coords.len(), self.dim()),
            ));
        }
        Ok(())
    }

    /// `S(Φ) = Φ(I)`.
    pub fn map_s(&self, coords: &CVec) -> Result<CVec> {
        Ok(self.map_of(coords)? * self.algebra().identity().flatten())
    }

    /// `T(x) = Ū_{I,x}`.
    pub fn map_t(&self, x: &CVec) -> Result<CVec> {
        if x.len() != self.d() {
            return Err(Error::Shape(format!("vector of length {} for d = {}", x.len(), self.d())));
        }
        Ok(self.coords_of(&self.source.apply_x(x)).0)
    }

    /// `V(P)` as the restriction of `Φ ↦ Φ(· P)` to the span.
    pub fn map_v(&self, p: &Projection) -> Result<CMat> {
        self.algebra().check(p.element())?;
        Ok(self.precompose(p.element()))
    }

    /// Coordinate matrix of `Φ ↦ Φ(· a)` for an arbitrary element.
    pub fn precompose(&self, a: &Element) -> CMat {
        let alg = self.algebra();
        let rm = alg.right_mult_matrix(a);
        let (d, td) = (self.d(), alg.total_dim());
        let r = self.dim();
        let mut out = CMat::zeros(r, r);
        for j in 0..r {
            let phi = linalg::unvec(&self.basis.column(j).into_owned(), d, td);
            let moved = linalg::vec_of(&(phi * &rm));
            out.set_column(j, &(self.basis.adjoint() * moved));
        }
        out
    }

    /// Lower bound on `‖Φ‖_E = sup_{‖R‖≤1} ‖Φ(R)‖`.
    pub fn elementary_norm(&self, coords: &CVec, budget: usize, seed: u64) -> Result<SupResult> {
        self.elementary_norm_with(coords, budget, seed, &[])
    }

    /// As [`ElementarySpace::elementary_norm`], also ascending from each
    /// element of a shared witness pool.
    pub fn elementary_norm_with(
        &self,
        coords: &CVec,
        budget: usize,
        seed: u64,
        pool: &[Element],
    ) -> Result<SupResult> {
        let map = self.map_of(coords)?;
        sup_over_ball_with(self.algebra(), &map, AscentConfig::with_restarts(budget), seed, pool)
    }
}

/// `‖Φ(R)‖` for a concrete map.
pub fn eval_norm(map: &CMat, r: &Element) -> f64 {
    (map * r.flatten()).norm()
}

#[derive(Clone, Debug)]
pub struct DilationReport {
    pub projections_checked: usize,
    pub identity_residual: f64,
    pub idempotency_residual: f64,
    pub additivity_residual: f64,
    pub span_residual: f64,
    pub s_norm: f64,
    pub t_norm: f64,
    pub v_norm_max: f64,
    pub measure_norm: f64,
    pub s_bound_ok: bool,
    pub t_bound_ok: bool,
    pub v_bound_ok: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub trials: usize,
    /// Restarts for each supremum.
    pub budget: usize,
    /// Sampled elements per operator-norm ratio.
    pub samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            budget: 8,
            samples: 2,
        }
    }
}

/// Checks `U(P) = S V(P) T` and the norm bounds of `S`, `T`, `V(P)` under
/// `‖·‖_E` on sampled projections. Tabulated measures are checked on their
/// tabulated projections.
pub fn verify_dilation(
    space: &ElementarySpace,
    u: &QuantumMeasure,
    trials: usize,
    seed: u64,
) -> Result<DilationReport> {
    verify_with(
        space,
        u,
        VerifyOptions {
            trials,
            ..VerifyOptions::default()
        },
        seed,
    )
}

pub fn verify_with(
    space: &ElementarySpace,
    u: &QuantumMeasure,
    opts: VerifyOptions,
    seed: u64,
) -> Result<DilationReport> {
    let alg = space.algebra().clone();
    if u.algebra() != &alg || u.d() != space.d() {
        return Err(Error::Shape("measure and space disagree on algebra or d".into()));
    }
    let d = space.d();
    let mut rng = linalg::rng(seed);
    let projections: Vec<Projection> = match u {
        QuantumMeasure::Tabulated(t) => {
            let mut ps: Vec<Projection> = t.pairs().iter().map(|(p, _)| p.clone()).collect();
            ps.truncate(opts.trials);
            ps
        }
        QuantumMeasure::Linear(_) => (0..opts.trials)
            .map(|_| projection::random_projection(&alg, &mut rng))
            .collect(),
    };
    let mnorm = measure::measure_norm(u, opts.budget.max(8), linalg::derive_seed(seed, 1, 0))?;

    let per_p: Vec<Result<(f64, f64, f64, f64)>> = projections
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = linalg::rng(linalg::derive_seed(seed, 2, i as u64));
            let up = u.evaluate(p)?;
            let vp = space.map_v(p)?;
            let x = linalg::random_unit_vector(&mut rng, d);
            let tx = space.map_t(&x)?;
            let sv = space.map_s(&(&vp * &tx))?;
            let ident = (up * &x - sv).norm();
            let idem = linalg::op_norm(&(&vp * &vp - &vp));
            let additive = if p.rank() >= 2 {
                let parts = projection::partition_with(&alg, p, 2, &mut rng)?;
                let v1 = space.map_v(&parts[0])?;
                let v2 = space.map_v(&parts[1])?;
                linalg::op_norm(&(&vp - v1 - v2))
            } else {
                0.0
            };
            let vn = v_norm_estimate(space, &vp, p, opts, linalg::derive_seed(seed, 3, i as u64))?;
            Ok((ident, idem, additive, vn))
        })
        .collect();
    let mut report = DilationReport {
        projections_checked: projections.len(),
        identity_residual: 0.0,
        idempotency_residual: 0.0,
        additivity_residual: 0.0,
        span_residual: space.span_residual(),
        s_norm: s_norm_estimate(space, opts, linalg::derive_seed(seed, 4, 0))?,
        t_norm: t_norm_estimate(space, opts, linalg::derive_seed(seed, 5, 0))?,
        v_norm_max: 0.0,
        measure_norm: mnorm.value,
        s_bound_ok: false,
        t_bound_ok: false,
        v_bound_ok: false,
    };
    for r in per_p {
        let (a, b, c_, v) = r?;
        report.identity_residual = report.identity_residual.max(a);
        report.idempotency_residual = report.idempotency_residual.max(b);
        report.additivity_residual = report.additivity_residual.max(c_);
        report.v_norm_max = report.v_norm_max.max(v);
    }
    report.s_bound_ok = report.s_norm <= 1.0 + tol::BOUND_SLACK;
    report.t_bound_ok = report.t_norm <= 4.0 * report.measure_norm + 1e-4;
    report.v_bound_ok = report.v_norm_max <= 1.0 + tol::BOUND_SLACK;
    Ok(report)
}

fn random_coords<R: Rng + ?Sized>(space: &ElementarySpace, rng: &mut R) -> CVec {
    CVec::from_fn(space.dim(), |_, _| linalg::complex_normal(rng))
}

/// `max ‖Φ(I)‖ / ‖Φ‖_E` over sampled `Φ`, the identity seeded into each
/// denominator's witness pool.
fn s_norm_estimate(space: &ElementarySpace, opts: VerifyOptions, seed: u64) -> Result<f64> {
    if space.dim() == 0 {
        return Ok(0.0);
    }
    let mut rng = linalg::rng(seed);
    let pool = [space.algebra().identity()];
    let mut best: f64 = 0.0;
    let mut samples: Vec<CVec> = (0..opts.samples.max(1)).map(|_| random_coords(space, &mut rng)).collect();
    samples.push(space.map_t(&linalg::random_unit_vector(&mut rng, space.d()))?);
    for (k, phi) in samples.iter().enumerate() {
        let num = space.map_s(phi)?.norm();
        let den = space.elementary_norm_with(phi, opts.budget, linalg::derive_seed(seed, 6, k as u64), &pool)?;
        if den.value > 0.0 {
            best = best.max(num / den.value);
        }
    }
    Ok(best)
}

/// `‖T_E‖ = sup_x ‖Ū_{I,x}‖_E / ‖x‖`, started from the top singular vector of
/// the norming element of `Ū` and from random directions.
fn t_norm_estimate(space: &ElementarySpace, opts: VerifyOptions, seed: u64) -> Result<f64> {
    let alg = space.algebra();
    let ubar = space.source();
    let top = ubar.norm_estimate(opts.budget, seed, &[alg.identity()])?;
    let (_, _, v) = linalg::top_singular(&ubar.apply(&top.witness));
    let mut rng = linalg::rng(linalg::derive_seed(seed, 7, 0));
    let mut xs = vec![v];
    for _ in 0..opts.samples {
        xs.push(linalg::random_unit_vector(&mut rng, space.d()));
    }
    let mut best: f64 = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let map = ubar.apply_x(x);
        let res = sup_over_ball_with(
            alg,
            &map,
            AscentConfig::with_restarts(opts.budget),
            linalg::derive_seed(seed, 8, k as u64),
            std::slice::from_ref(&top.witness),
        )?;
        best = best.max(res.value / x.norm());
    }
    Ok(best)
}

/// `max ‖V(P)Φ‖_E / ‖Φ‖_E`. The witness `R` of the numerator gives the point
/// `RP` of the ball, which is added to the denominator's pool.
fn v_norm_estimate(
    space: &ElementarySpace,
    vp: &CMat,
    p: &Projection,
    opts: VerifyOptions,
    seed: u64,
) -> Result<f64> {
    if space.dim() == 0 {
        return Ok(0.0);
    }
    let mut rng = linalg::rng(seed);
    let mut best: f64 = 0.0;
    for k in 0..opts.samples.max(1) {
        let phi = random_coords(space, &mut rng);
        let num = space.elementary_norm(&(vp * &phi), opts.budget, linalg::derive_seed(seed, 9, k as u64))?;
        let pool = [num.witness.mul(p.element())];
        let den = space.elementary_norm_with(&phi, opts.budget, linalg::derive_seed(seed, 10, k as u64), &pool)?;
        if den.value > 0.0 {
            best = best.max(num.value / den.value);
        }
    }
    Ok(best)
}

/// A factorisation `Ū(a) = S V_Y(a) T` through a Euclidean space `Y`.
#[derive(Clone, Debug)]
pub struct ConcreteDilation {
    /// `V_Y` as a linear map into `B(Y)`.
    pub v: OperatorMap,
    /// `d × dim Y`.
    pub s: CMat,
    /// `dim Y × d`.
    pub t: CMat,
}

impl ConcreteDilation {
    pub fn y_dim(&self) -> usize {
        self.v.d()
    }

    /// `max ‖Ū(E) − S V_Y(E) T‖` over matrix units.
    pub fn consistency(&self, ubar: &OperatorMap) -> Result<f64> {
        if self.v.algebra() != ubar.algebra()
            || self.s.nrows() != ubar.d()
            || self.s.ncols() != self.y_dim()
            || self.t.nrows() != self.y_dim()
            || self.t.ncols() != ubar.d()
        {
            return Err(Error::Shape("concrete dilation shapes do not match".into()));
        }
        Ok(ubar
            .units()
            .iter()
            .zip(self.v.units())
            .map(|(u, v)| linalg::op_norm(&(u - &self.s * v * &self.t)))
            .fold(0.0, f64::max))
    }
}

pub const CONSISTENCY_TOL: f64 = 1e-8;

/// Quotient-valued map `R ↦ [Σ Cᵢ V_Y(RQᵢ) T xᵢ]` for a span element,
/// returned as the `dim Y × total_dim` matrix of its component in
/// `(ker S)^⊥`. The generator weights are a least-squares representation of
/// `Φ`; the result does not depend on the choice.
pub fn quotient_map(space: &ElementarySpace, dil: &ConcreteDilation, coords: &CVec) -> Result<CMat> {
    let c_ = dil.consistency(space.source())?;
    if c_ > CONSISTENCY_TOL {
        return Err(Error::contract(
            "dilation",
            format!("concrete dilation does not reproduce the map (residual {c_:.2e})"),
        ));
    }
    let target = space.basis() * space.check_coords(coords).map(|_| coords)?;
    let g = space.generator_matrix();
    let w = linalg::pinv(&g, tol::RANK_CUTOFF) * target;
    let alg = space.algebra();
    let mut ymap = CMat::zeros(dil.y_dim(), alg.total_dim());
    for (gen, wi) in space.generators().iter().zip(w.iter()) {
        let coef = gen.coef * wi;
        if coef.norm() == 0.0 {
            continue;
        }
        ymap += dil.v.apply_x(&(&dil.t * &gen.x)) * alg.right_mult_matrix(&gen.q) * coef;
    }
    Ok(kernel_complement_projector(&dil.s) * ymap)
}

/// Orthogonal projector onto `(ker S)^⊥`, i.e. `S⁺S`.
pub fn kernel_complement_projector(s: &CMat) -> CMat {
    linalg::pinv(s, tol::RANK_CUTOFF) * s
}

/// Lower bound on `‖Φ‖_D` for a concrete Euclidean dilation.
pub fn induced_dilation_norm(
    space: &ElementarySpace,
    dil: &ConcreteDilation,
    coords: &CVec,
    budget: usize,
    seed: u64,
) -> Result<SupResult> {
    induced_norm_with(space, dil, coords, budget, seed, &[])
}

pub fn induced_norm_with(
    space: &ElementarySpace,
    dil: &ConcreteDilation,
    coords: &CVec,
    budget: usize,
    seed: u64,
    pool: &[Element],
) -> Result<SupResult> {
    let qmap = quotient_map(space, dil, coords)?;
    sup_over_ball_with(space.algebra(), &qmap, AscentConfig::with_restarts(budget), seed, pool)
}

/// The contraction `W(Φ) = [Σ Cᵢ V_Y(Qᵢ) T xᵢ]`, as the representative in
/// `(ker S)^⊥`.
pub fn contraction_w(space: &ElementarySpace, dil: &ConcreteDilation, coords: &CVec) -> Result<CVec> {
    let qmap = quotient_map(space, dil, coords)?;
    Ok(qmap * space.algebra().identity().flatten())
}

#[derive(Clone, Debug)]
pub struct JordanReport {
    pub jordan_residual: f64,
    pub idempotency_residual: f64,
    pub anticommutator_max: f64,
    /// `max ‖φ(E) − (Φ ↦ Φ(·E))‖` over matrix units.
    pub linear_consistency: f64,
    pub pairs_checked: usize,
    pub elements_checked: usize,
}

/// The linear extension `φ` of `P ↦ V(P)`, built on matrix units from the
/// spectral decompositions of `E_jj`, `E_jl + E_lj` and `i(E_jl − E_lj)`.
pub fn jordan_extension(space: &ElementarySpace) -> Result<Vec<CMat>> {
    let alg = space.algebra();
    let phi_h = |h: &Element| -> Result<CMat> {
        let r = space.dim();
        let mut acc = CMat::zeros(r, r);
        for (lambda, p) in projection::spectral_projections(alg, h)? {
            if lambda != 0.0 {
                acc += space.map_v(&p)? * c(lambda);
            }
        }
        Ok(acc)
    };
    let mut units: Vec<Option<CMat>> = vec![None; alg.total_dim()];
    for (k, &n) in alg.blocks().iter().enumerate() {
        for j in 0..n {
            let idx = alg.unit_index(k, j, j);
            units[idx] = Some(phi_h(&alg.matrix_unit(idx))?);
            for l in j + 1..n {
                let ejl = alg.matrix_unit(alg.unit_index(k, j, l));
                let elj = alg.matrix_unit(alg.unit_index(k, l, j));
                let h1 = ejl.add(&elj);
                let h2 = ejl.sub(&elj).scale(linalg::I);
                let f1 = phi_h(&h1)?;
                let f2 = phi_h(&h2)?;
                units[alg.unit_index(k, j, l)] = Some((&f1 - &f2 * linalg::I) * c(0.5));
                units[alg.unit_index(k, l, j)] = Some((&f1 + &f2 * linalg::I) * c(0.5));
            }
        }
    }
    Ok(units.into_iter().map(|u| u.expect("all units filled")).collect())
}

fn apply_extension(units: &[CMat], a: &Element) -> CMat {
    let r = units[0].nrows();
    let mut out = CMat::zeros(r, r);
    for (coef, u) in a.flatten().iter().zip(units) {
        out += u * *coef;
    }
    out
}

pub fn jordan_check(space: &ElementarySpace, trials: usize, seed: u64) -> Result<JordanReport> {
    let alg = space.algebra().clone();
    let mut report = JordanReport {
        jordan_residual: 0.0,
        idempotency_residual: 0.0,
        anticommutator_max: 0.0,
        linear_consistency: 0.0,
        pairs_checked: 0,
        elements_checked: 0,
    };
    if space.dim() == 0 {
        return Ok(report);
    }
    let phi = jordan_extension(space)?;
    for (idx, u) in phi.iter().enumerate() {
        let direct = space.precompose(&alg.matrix_unit(idx));
        report.linear_consistency = report.linear_consistency.max(linalg::op_norm(&(u - direct)));
    }
    let mut rng = linalg::rng(seed);
    for _ in 0..trials {
        let a = alg.random_hermitian(&mut rng);
        let fa = apply_extension(&phi, &a);
        let fa2 = apply_extension(&phi, &a.mul(&a));
        report.jordan_residual = report.jordan_residual.max(linalg::op_norm(&(fa2 - &fa * &fa)));
        report.elements_checked += 1;

        let p = projection::random_projection(&alg, &mut rng);
        let fp = apply_extension(&phi, p.element());
        report.idempotency_residual = report.idempotency_residual.max(linalg::op_norm(&(&fp * &fp - &fp)));

        // orthogonal pair from the spectral decomposition of a
        let specs = projection::spectral_projections(&alg, &a)?;
        if specs.len() >= 2 {
            let i = rng.random_range(0..specs.len());
            let mut j = rng.random_range(0..specs.len() - 1);
            if j >= i {
                j += 1;
            }
            let fp = apply_extension(&phi, specs[i].1.element());
            let fq = apply_extension(&phi, specs[j].1.element());
            let anti = linalg::op_norm(&(&fp * &fq + &fq * &fp));
            report.anticommutator_max = report.anticommutator_max.max(anti);
            report.pairs_checked += 1;
        }
    }
    Ok(report)
}

/// Convenience: an arbitrary element of the span as a random combination of
/// `terms` generators with Gaussian coefficients.
pub fn random_combination<R: Rng + ?Sized>(
    space: &ElementarySpace,
    terms: usize,
    rng: &mut R,
) -> Vec<Generator> {
    let alg = space.algebra();
    (0..terms)
        .map(|_| {
            let mut g = random_generator(alg, space.d(), rng);
            g.coef = linalg::complex_normal(rng);
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng;

    #[test]
    fn identity_map_space_dimension() {
        // Ū(RQ)x = R(Qx) depends on Q and x only through y = Qx, so the
        // span is {R ↦ Ry}; brute-force rank of the stacked maps below.
        let alg = Algebra::full(3);
        let id = OperatorMap::identity(alg.clone());
        let space = build_elementary_space(&id, 30, 1).unwrap();
        let mut r = rng(2);
        let mut stacked = CMat::zeros(27, 40);
        for col in 0..40 {
            let q = crate::algebra::haar_unitary(&alg, &mut r);
            let x = linalg::random_unit_vector(&mut r, 3);
            let mut m = CMat::zeros(3, 9);
            for idx in 0..9 {
                let (_, i, j) = alg.unit_coords(idx);
                // (E_ij Q x) = e_i (Qx)_j
                let y = q.block(0) * &x;
                m[(i, idx)] = y[j];
            }
            stacked.set_column(col, &linalg::vec_of(&m));
        }
        let brute = linalg::column_space(&stacked, 1e-9).ncols();
        assert_eq!(brute, 3);
        assert_eq!(space.dim(), brute);
        assert!(space.is_saturated());
        assert!(space.span_residual() < 1e-9);
    }

    #[test]
    fn trace_map_space_is_everything() {
        let alg = Algebra::full(3);
        let tr = OperatorMap::trace(alg, 3);
        let space = build_elementary_space(&tr, 30, 1).unwrap();
        assert_eq!(space.dim(), 27);
        assert!(space.is_saturated());
    }

    #[test]
    fn zero_map_space() {
        let z = OperatorMap::zero(Algebra::full(2), 2);
        let space = build_elementary_space(&z, 5, 0).unwrap();
        assert_eq!(space.dim(), 0);
        assert!(build_elementary_space(&z, 0, 0).is_err());
    }

    #[test]
    fn s_and_t_on_identity_map() {
        let alg = Algebra::full(3);
        let id = OperatorMap::identity(alg.clone());
        let space = build_elementary_space(&id, 10, 3).unwrap();
        let mut r = rng(4);
        let x = linalg::random_unit_vector(&mut r, 3);
        let tx = space.map_t(&x).unwrap();
        assert!((space.map_s(&tx).unwrap() - &x).norm() < 1e-12);
        let e1 = CVec::from_vec(vec![linalg::ONE, linalg::ZERO, linalg::ZERO]);
        let m = space.map_of(&space.map_t(&e1).unwrap()).unwrap();
        // R ↦ R e₁ picks the first column: coefficient of E_ij is δ_{j0} e_i
        for idx in 0..9 {
            let (_, i, j) = alg.unit_coords(idx);
            for row in 0..3 {
                let want = if j == 0 && row == i { 1.0 } else { 0.0 };
                assert!((m[(row, idx)] - c(want)).norm() < 1e-12);
            }
        }
        assert_eq!(space.map_t(&CVec::zeros(3)).unwrap().norm(), 0.0);
        assert_eq!(space.map_s(&CVec::zeros(space.dim())).unwrap().norm(), 0.0);
        assert!(space.map_s(&CVec::zeros(space.dim() + 1)).is_err());
    }

    #[test]
    fn s_of_generator_is_value_at_q() {
        let alg = Algebra::new(vec![1, 2]).unwrap();
        let mut r = rng(5);
        let u = OperatorMap::random(alg.clone(), 2, &mut r);
        let space = build_elementary_space(&u, 20, 6).unwrap();
        let g = random_generator(&alg, 2, &mut r);
        let phi = space.combine(std::slice::from_ref(&g));
        let want = u.apply(&g.q) * &g.x;
        assert!((space.map_s(&phi).unwrap() - want).norm() < 1e-10);
    }

    #[test]
    fn v_identities() {
        let alg = Algebra::new(vec![2, 2]).unwrap();
        let mut r = rng(7);
        let u = OperatorMap::random(alg.clone(), 2, &mut r);
        let space = build_elementary_space(&u, 20, 8).unwrap();
        let vi = space.map_v(&Projection::identity(&alg)).unwrap();
        let n = space.dim();
        assert!(linalg::op_norm(&(vi - CMat::identity(n, n))) < 1e-10);
        let h = alg.random_hermitian(&mut r);
        let specs = projection::spectral_projections(&alg, &h).unwrap();
        let (p1, p2) = (&specs[0].1, &specs[1].1);
        let v1 = space.map_v(p1).unwrap();
        let v2 = space.map_v(p2).unwrap();
        let v12 = space.map_v(&p1.plus(p2)).unwrap();
        assert!(linalg::op_norm(&(&v1 * &v1 - &v1)) < 1e-10);
        assert!(linalg::op_norm(&(v12 - v1 - v2)) < 1e-10);
    }

    #[test]
    fn elementary_norm_of_embedding() {
        let alg = Algebra::full(3);
        let id = OperatorMap::identity(alg.clone());
        let space = build_elementary_space(&id, 10, 9).unwrap();
        let mut r = rng(10);
        let x = CVec::from_fn(3, |_, _| linalg::complex_normal(&mut r));
        let n = space.elementary_norm(&space.map_t(&x).unwrap(), 16, 1).unwrap();
        assert!((n.value - x.norm()).abs() < 1e-6);
        let z = space.elementary_norm(&CVec::zeros(space.dim()), 4, 1).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn elementary_norm_respects_generator_bound() {
        let alg = Algebra::new(vec![1, 2]).unwrap();
        let mut r = rng(11);
        let u = OperatorMap::random(alg.clone(), 2, &mut r);
        let space = build_elementary_space(&u, 20, 12).unwrap();
        let mnorm = measure::measure_norm(&u.restrict(), 32, 3).unwrap().value;
        for _ in 0..5 {
            let terms = random_combination(&space, 3, &mut r);
            let phi = space.combine(&terms);
            let est = space.elementary_norm(&phi, 16, 4).unwrap().value;
            let bound: f64 = 4.0 * mnorm * terms.iter().map(Generator::weight).sum::<f64>();
            assert!(est <= bound + 1e-6);
        }
    }

    #[test]
    fn dilation_report_on_random_map() {
        let alg = Algebra::new(vec![1, 2]).unwrap();
        let mut r = rng(13);
        let u = OperatorMap::random(alg, 2, &mut r);
        let space = build_elementary_space(&u, 20, 14).unwrap();
        let rep = verify_with(
            &space,
            &u.restrict(),
            VerifyOptions {
                trials: 10,
                budget: 6,
                samples: 2,
            },
            15,
        )
        .unwrap();
        assert!(rep.identity_residual <= 1e-10, "{}", rep.identity_residual);
        assert!(rep.idempotency_residual <= 1e-10);
        assert!(rep.additivity_residual <= 1e-10);
        assert!(rep.s_bound_ok && rep.t_bound_ok && rep.v_bound_ok, "{rep:?}");
    }

    #[test]
    fn induced_norm_with_injective_s_is_elementary_norm() {
        let alg = Algebra::full(3);
        let id = OperatorMap::identity(alg.clone());
        let space = build_elementary_space(&id, 10, 16).unwrap();
        let dil = ConcreteDilation {
            v: id.clone(),
            s: CMat::identity(3, 3),
            t: CMat::identity(3, 3),
        };
        let mut r = rng(17);
        let phi = random_coords(&space, &mut r);
        let e = space.elementary_norm(&phi, 16, 1).unwrap();
        let dn = induced_dilation_norm(&space, &dil, &phi, 16, 1).unwrap();
        assert!((e.value - dn.value).abs() < 1e-6, "{} {}", e.value, dn.value);
        let w = contraction_w(&space, &dil, &phi).unwrap();
        let pool = [alg.identity()];
        let dn = induced_norm_with(&space, &dil, &phi, 4, 2, &pool).unwrap();
        assert!(w.norm() <= dn.value + 1e-6);
        let zero = induced_dilation_norm(&space, &dil, &CVec::zeros(space.dim()), 2, 0).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn inconsistent_concrete_dilation_is_rejected() {
        let alg = Algebra::full(2);
        let id = OperatorMap::identity(alg.clone());
        let space = build_elementary_space(&id, 5, 0).unwrap();
        let dil = ConcreteDilation {
            v: id.clone(),
            s: CMat::identity(2, 2) * c(2.0),
            t: CMat::identity(2, 2),
        };
        let phi = CVec::zeros(space.dim());
        assert!(matches!(
            induced_dilation_norm(&space, &dil, &phi, 2, 0),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn jordan_on_small_algebra() {
        let alg = Algebra::new(vec![2, 3]).unwrap();
        let mut r = rng(18);
        let u = OperatorMap::random(alg, 2, &mut r);
        let space = build_elementary_space(&u, 20, 19).unwrap();
        let rep = jordan_check(&space, 10, 20).unwrap();
        assert!(rep.jordan_residual <= 1e-7);
        assert!(rep.idempotency_residual <= 1e-10);
        assert!(rep.anticommutator_max <= 1e-8);
        assert!(rep.linear_consistency <= 1e-9);
    }
}
