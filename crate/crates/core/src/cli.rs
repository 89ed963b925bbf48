//! The `qmdil` command line: measure generation and JSON reports.
//!
//! Exit codes: 0 when every check in the report passes, 1 when some check
//! fails, 2 for usage, parse and contract errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::algebra::Algebra;
use crate::cpmaps::{self, KrausMap};
use crate::dilation::{self, ConcreteDilation, ElementarySpace, VerifyOptions};
use crate::io::{self, MeasureFile, ProjectionJson, TreeJson};
use crate::linalg::{self, CMat};
use crate::measure::{self, OperatorMap, QuantumMeasure};
use crate::projection::{self, Projection};
use crate::pvariation::{self, PVarOptions};
use crate::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Additivity violations below this count as exact.
pub const ADDITIVITY_TOL: f64 = 1e-10;
/// Residuals of the dilation identity and of `V(P)` idempotency.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "qmdil", version, about = "Dilations and p-variation of operator-valued quantum measures")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restarts per estimator (>= 1).
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Residual tolerance for extension and consistency checks.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Block sizes, e.g. "2,3".
    #[arg(long, global = true)]
    pub algebra: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the above keys; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a measure file.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        /// Output dimension of the measure values.
        #[arg(long)]
        d: Option<usize>,
        /// Number of Kraus operators for `cp`.
        #[arg(long)]
        kraus: Option<usize>,
        /// Atom values for `abelian`, e.g. "3,-4".
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Number of rank-one projections for `counterexample_m2`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Additivity and linear extension of a measure.
    Extend {
        measure: PathBuf,
        #[arg(long, value_enum, default_value = "extendable")]
        mode: ExtendMode,
    },
    /// Elementary dilation and one of its norms.
    Dilate {
        measure: PathBuf,
        #[arg(long, value_enum, default_value = "e")]
        norm: NormKind,
    },
    /// p-variation estimate on a projection.
    Pvar {
        measure: PathBuf,
        /// `identity`, `atoms:0,2` (diagonal algebras) or a projection JSON file.
        #[arg(long, default_value = "identity")]
        projection: String,
    },
    /// All invariant checks for a measure.
    Verify { measure: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Linear,
    Cp,
    #[value(name = "counterexample_m2", alias = "counterexample-m2")]
    CounterexampleM2,
    Abelian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtendMode {
    /// Pass when the table extends linearly.
    Extendable,
    /// Pass when the table is additive but has no linear extension.
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormKind {
    #[value(name = "e", alias = "E")]
    E,
    #[value(name = "d", alias = "D")]
    D,
    #[value(name = "pv", alias = "pV")]
    PV,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    budget: Option<usize>,
    tol: Option<f64>,
    p: Option<f64>,
    algebra: Option<String>,
    out: Option<PathBuf>,
}

/// Resolved settings, recorded in every report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub budget: usize,
    pub tol: f64,
    pub p: f64,
    pub algebra: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let file: ConfigFile = match &global.config {
            Some(path) => io::read_json(path)?,
            None => ConfigFile::default(),
        };
        let algebra = global
            .algebra
            .clone()
            .or(file.algebra)
            .map(|s| parse_blocks(&s))
            .transpose()?;
        let cfg = RunConfig {
            seed: global.seed.or(file.seed).unwrap_or(0),
            budget: global.budget.or(file.budget).unwrap_or(16),
            tol: global.tol.or(file.tol).unwrap_or(1e-8),
            p: global.p.or(file.p).unwrap_or(2.0),
            algebra,
            out: global.out.clone().or(file.out),
        };
        if cfg.budget == 0 {
            return Err(Error::Parse("--budget must be at least 1".into()));
        }
        if !(cfg.tol > 0.0) {
            return Err(Error::Parse("--tol must be positive".into()));
        }
        if !(cfg.p >= 1.0) || !cfg.p.is_finite() {
            return Err(Error::Parse("--p must be a finite number >= 1".into()));
        }
        Ok(cfg)
    }

    fn to_json(&self) -> Value {
        json!({
            "seed": self.seed,
            "budget": self.budget,
            "tol": self.tol,
            "p": self.p,
        })
    }
}

pub fn parse_blocks(s: &str) -> Result<Vec<usize>> {
    let blocks = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad block size {t:?} in algebra {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Algebra::new(blocks.clone())?;
    Ok(blocks)
}

/// A named pass/fail check; `bound` is `None` for qualitative checks.
struct Check {
    name: &'static str,
    pass: bool,
    value: f64,
    bound: Option<f64>,
}

impl Check {
    fn at_most(name: &'static str, value: f64, bound: f64) -> Self {
        Check {
            name,
            pass: value <= bound,
            value,
            bound: Some(bound),
        }
    }

    fn above(name: &'static str, value: f64, bound: f64) -> Self {
        Check {
            name,
            pass: value > bound,
            value,
            bound: Some(bound),
        }
    }

    fn flag(name: &'static str, pass: bool) -> Self {
        Check {
            name,
            pass,
            value: if pass { 1.0 } else { 0.0 },
            bound: None,
        }
    }

    fn to_json(&self) -> Value {
        json!({ "name": self.name, "pass": self.pass, "value": self.value, "bound": self.bound })
    }
}

struct Report {
    command: &'static str,
    results: serde_json::Map<String, Value>,
    checks: Vec<Check>,
    refs: Vec<&'static str>,
}

impl Report {
    fn new(command: &'static str) -> Self {
        Report {
            command,
            results: serde_json::Map::new(),
            checks: Vec::new(),
            refs: Vec::new(),
        }
    }

    fn put(&mut self, key: &str, v: Value) {
        self.results.insert(key.to_string(), v);
    }

    fn check(&mut self, c: Check, reference: &'static str) {
        self.checks.push(c);
        if !self.refs.contains(&reference) {
            self.refs.push(reference);
        }
    }

    fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn finish(self, cfg: &RunConfig) -> (Value, bool) {
        let pass = self.pass();
        let v = json!({
            "command": self.command,
            "config": cfg.to_json(),
            "results": Value::Object(self.results),
            "checks": self.checks.iter().map(Check::to_json).collect::<Vec<_>>(),
            "pass": pass,
            "paper_refs": self.refs,
        });
        (v, pass)
    }
}

const REF_ADDITIVE: &str = "quantum measures are additive on orthogonal projections";
const REF_GLEASON: &str = "bounded additive measures extend linearly without 2x2 summands";
const REF_BRACKET: &str = "the linear extension has norm at most four times the measure norm";
const REF_COUNTER: &str = "scalar measures on M2 that are additive but not linear";
const REF_IDENTITY: &str = "dilation identity U(P) = S V(P) T on the elementary space";
const REF_E_BOUNDS: &str = "elementary dilation norm bounds for S, T and V(P)";
const REF_D_NORM: &str = "induced quotient norm of a Hilbert space dilation";
const REF_JORDAN: &str = "the dilation extends to a Jordan homomorphism";
const REF_PV_DEF: &str = "p-variation over orthogonally represented trees";
const REF_ABELIAN: &str = "on abelian algebras p-variation equals partition variation";
const REF_PV_NORM: &str = "contractive p-variation dilation norm";
const REF_CP: &str = "completely positive restrictions have 2-variation at most the cb-norm";
const REF_HILBERT: &str = "projection-valued measures on Hilbert space have 2-variation at most one";

/// Parsed arguments and outcome of a command.
pub struct Outcome {
    pub text: String,
    pub pass: bool,
    pub out: Option<PathBuf>,
}

/// Runs the command line and returns the exit code, writing the report to
/// `--out` or `stdout` and errors to `stderr`.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            let written = match &outcome.out {
                Some(path) => std::fs::write(path, &outcome.text).map_err(Error::from),
                None => stdout.write_all(outcome.text.as_bytes()).map_err(Error::from),
            };
            if let Err(e) = written {
                let _ = writeln!(stderr, "error: {e}");
                return EXIT_USAGE;
            }
            if outcome.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = RunConfig::resolve(&cli.global)?;
    let (value, pass) = match &cli.command {
        Command::Gen {
            kind,
            d,
            kraus,
            values,
            count,
        } => {
            let file = cmd_gen(&cfg, *kind, *d, *kraus, values, *count)?;
            (serde_json::to_value(file.to_json())?, true)
        }
        Command::Extend { measure, mode } => cmd_extend(&cfg, &load(measure)?, *mode)?,
        Command::Dilate { measure, norm } => cmd_dilate(&cfg, &load(measure)?, *norm)?,
        Command::Pvar { measure, projection } => {
            let file = load(measure)?;
            let p = parse_projection(file.measure.algebra(), projection)?;
            cmd_pvar(&cfg, &file, &p)?
        }
        Command::Verify { measure } => cmd_verify(&cfg, &load(measure)?)?,
    };
    Ok(Outcome {
        text: io::to_pretty(&value)?,
        pass,
        out: cfg.out.clone(),
    })
}

fn load(path: &Path) -> Result<MeasureFile> {
    MeasureFile::from_json(&io::read_json(path)?)
}

fn parse_projection(alg: &Algebra, spec: &str) -> Result<Projection> {
    if spec == "identity" {
        return Ok(Projection::identity(alg));
    }
    if let Some(list) = spec.strip_prefix("atoms:") {
        let atoms = list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad atom index {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        return pvariation::atom_projection(alg, &atoms);
    }
    let pj: ProjectionJson = io::read_json(Path::new(spec))?;
    pj.to_projection(alg)
}

pub fn cmd_gen(
    cfg: &RunConfig,
    kind: GenKind,
    d: Option<usize>,
    kraus: Option<usize>,
    values: &[f64],
    count: Option<usize>,
) -> Result<MeasureFile> {
    let mut rng = linalg::rng(cfg.seed);
    let blocks = |default: Vec<usize>| cfg.algebra.clone().unwrap_or(default);
    match kind {
        GenKind::Linear => {
            let alg = Algebra::new(blocks(vec![3]))?;
            let d = d.unwrap_or(alg.matrix_dim());
            if d == 0 {
                return Err(Error::Parse("--d must be positive".into()));
            }
            Ok(MeasureFile {
                measure: OperatorMap::random(alg, d, &mut rng).restrict(),
                kraus: None,
            })
        }
        GenKind::Cp => {
            let b = blocks(vec![3]);
            if b.len() != 1 {
                return Err(Error::Parse("cp measures live on a single full matrix block".into()));
            }
            let n = b[0];
            let k = KrausMap::random(n, d.unwrap_or(n), kraus.unwrap_or(2), &mut rng);
            Ok(MeasureFile {
                measure: k.to_operator_map().restrict(),
                kraus: Some(k),
            })
        }
        GenKind::CounterexampleM2 => {
            if let Some(b) = &cfg.algebra {
                if b != &[2] {
                    return Err(Error::Parse("the Bloch counterexample lives on M2".into()));
                }
            }
            let count = count.unwrap_or(30);
            if count == 0 {
                return Err(Error::Parse("--count must be positive".into()));
            }
            Ok(MeasureFile {
                measure: QuantumMeasure::Tabulated(measure::bloch_cubic_counterexample(count, cfg.seed)),
                kraus: None,
            })
        }
        GenKind::Abelian => {
            if values.is_empty() {
                return Err(Error::Parse("--values is required for abelian measures".into()));
            }
            if values.len() > 16 {
                return Err(Error::Parse("at most 16 atoms can be tabulated".into()));
            }
            Ok(MeasureFile {
                measure: QuantumMeasure::Tabulated(measure::abelian_scalar(values)?),
                kraus: None,
            })
        }
    }
}

fn matrix_json(m: &CMat) -> Value {
    serde_json::to_value(io::MatrixJson::from(m)).expect("plain data")
}

/// The linear map behind a measure; tabulated measures are extended and
/// must reproduce their table within `tol`.
fn linear_map(cfg: &RunConfig, file: &MeasureFile) -> Result<OperatorMap> {
    match &file.measure {
        QuantumMeasure::Linear(m) => Ok(m.clone()),
        QuantumMeasure::Tabulated(t) => {
            let ext = measure::gleason_extend(t, cfg.tol)?;
            if !ext.extendable {
                return Err(Error::Contract {
                    module: "measure",
                    message: format!("table has no linear extension (residual {:.3e})", ext.residual),
                });
            }
            Ok(ext.map)
        }
    }
}

fn additivity_section(cfg: &RunConfig, report: &mut Report, u: &QuantumMeasure) -> Result<()> {
    let add = measure::check_additivity(u, 1000, linalg::derive_seed(cfg.seed, 0xADD, 0))?;
    report.put(
        "additivity",
        json!({
            "max_violation": add.max_violation,
            "pairs_checked": add.pairs_checked,
            "partitions_checked": add.partitions_checked,
        }),
    );
    report.check(Check::at_most("additivity", add.max_violation, ADDITIVITY_TOL), REF_ADDITIVE);
    Ok(())
}

pub fn cmd_extend(cfg: &RunConfig, file: &MeasureFile, mode: ExtendMode) -> Result<(Value, bool)> {
    let mut report = Report::new("extend");
    report.put("mode", json!(format!("{mode:?}").to_lowercase()));
    additivity_section(cfg, &mut report, &file.measure)?;
    let (table, original) = match &file.measure {
        QuantumMeasure::Tabulated(t) => (t.clone(), None),
        QuantumMeasure::Linear(m) => {
            let mut rng = linalg::rng(linalg::derive_seed(cfg.seed, 0x7AB, 0));
            let alg = m.algebra();
            let count = (2 * alg.total_dim()).max(50);
            let ps = (0..count).map(|_| projection::random_projection(alg, &mut rng)).collect();
            (m.tabulate(ps), Some(m))
        }
    };
    let ext = measure::gleason_extend(&table, cfg.tol)?;
    report.put(
        "extension",
        json!({
            "residual": ext.residual,
            "rank": ext.rank,
            "required_rank": table.algebra().total_dim(),
            "extendable": ext.extendable,
            "warnings": ext.warnings,
            "units": ext.map.units().iter().map(matrix_json).collect::<Vec<_>>(),
        }),
    );
    match mode {
        ExtendMode::Extendable => {
            report.check(Check::at_most("extension_residual", ext.residual, cfg.tol), REF_GLEASON);
            if let Some(m) = original {
                report.check(
                    Check::at_most("unit_error", ext.map.unit_distance(m), cfg.tol),
                    REF_GLEASON,
                );
            }
            if ext.extendable {
                let b = measure::extension_norm_bracket(
                    &file.measure,
                    &ext.map,
                    cfg.budget,
                    linalg::derive_seed(cfg.seed, 0xB4, 0),
                )?;
                report.put(
                    "norm_bracket",
                    json!({ "measure_norm": b.measure_norm, "extension_norm": b.extension_norm }),
                );
                report.check(Check::flag("norm_bracket", b.ok), REF_BRACKET);
            }
        }
        ExtendMode::Counterexample => {
            report.check(Check::above("extension_fails", ext.residual, cfg.tol), REF_COUNTER);
        }
    }
    Ok(report.finish(cfg))
}

fn verify_options(cfg: &RunConfig) -> VerifyOptions {
    VerifyOptions {
        trials: 50,
        budget: cfg.budget,
        samples: 2,
    }
}

fn dilation_section(
    cfg: &RunConfig,
    report: &mut Report,
    space: &ElementarySpace,
    u: &QuantumMeasure,
) -> Result<()> {
    let rep = dilation::verify_with(space, u, verify_options(cfg), linalg::derive_seed(cfg.seed, 0xD1, 0))?;
    report.put(
        "dilation",
        json!({
            "space_dim": space.dim(),
            "saturated": space.is_saturated(),
            "projections_checked": rep.projections_checked,
            "identity_residual": rep.identity_residual,
            "idempotency_residual": rep.idempotency_residual,
            "additivity_residual": rep.additivity_residual,
            "span_residual": rep.span_residual,
            "s_norm": rep.s_norm,
            "t_norm": rep.t_norm,
            "v_norm_max": rep.v_norm_max,
            "measure_norm": rep.measure_norm,
        }),
    );
    report.check(Check::at_most("identity_residual", rep.identity_residual, IDENTITY_TOL), REF_IDENTITY);
    report.check(Check::at_most("idempotency_residual", rep.idempotency_residual, IDENTITY_TOL), REF_IDENTITY);
    report.check(Check::at_most("v_additivity_residual", rep.additivity_residual, IDENTITY_TOL), REF_IDENTITY);
    report.check(Check::at_most("s_norm", rep.s_norm, 1.0 + crate::tol::BOUND_SLACK), REF_E_BOUNDS);
    report.check(Check::at_most("t_norm", rep.t_norm, 4.0 * rep.measure_norm + 1e-4), REF_E_BOUNDS);
    report.check(Check::at_most("v_norm_max", rep.v_norm_max, 1.0 + crate::tol::BOUND_SLACK), REF_E_BOUNDS);
    Ok(())
}

/// The Stinespring factorisation when the file carries Kraus data, else the
/// trivial one `S = T = I`, `V_Y = Ū`.
fn concrete_dilation(file: &MeasureFile, map: &OperatorMap) -> ConcreteDilation {
    match &file.kraus {
        Some(k) => cpmaps::stinespring(k).concrete_dilation(k.n()),
        None => ConcreteDilation {
            v: map.clone(),
            s: CMat::identity(map.d(), map.d()),
            t: CMat::identity(map.d(), map.d()),
        },
    }
}

pub fn cmd_dilate(cfg: &RunConfig, file: &MeasureFile, norm: NormKind) -> Result<(Value, bool)> {
    let mut report = Report::new("dilate");
    let map = linear_map(cfg, file)?;
    let space = dilation::build_elementary_space(&map, cfg.budget, cfg.seed)?;
    dilation_section(cfg, &mut report, &space, &file.measure)?;
    let mut rng = linalg::rng(linalg::derive_seed(cfg.seed, 0xD2, 0));
    let samples: Vec<Vec<dilation::Generator>> = (0..3).map(|_| dilation::random_combination(&space, 3, &mut rng)).collect();
    let mut rows = Vec::new();
    match norm {
        NormKind::E => {
            report.put("norm", json!("E"));
            for (k, terms) in samples.iter().enumerate() {
                let coords = space.combine(terms);
                let e = space.elementary_norm(&coords, cfg.budget, linalg::derive_seed(cfg.seed, 0xE0, k as u64))?;
                let at_identity = space.map_s(&coords)?.norm();
                rows.push(json!({ "norm": e.value, "value_at_identity": at_identity }));
                // the identity is a point of the ball
                report.check(
                    Check::at_most("identity_value_below_norm", at_identity - e.value, crate::tol::BOUND_SLACK),
                    REF_E_BOUNDS,
                );
            }
        }
        NormKind::D => {
            report.put("norm", json!("D"));
            let dil = concrete_dilation(file, &map);
            let consistency = dil.consistency(&map)?;
            report.put("consistency", json!(consistency));
            report.put("y_dim", json!(dil.y_dim()));
            report.check(Check::at_most("consistency", consistency, dilation::CONSISTENCY_TOL), REF_D_NORM);
            let s_norm = linalg::op_norm(&dil.s);
            for (k, terms) in samples.iter().enumerate() {
                let coords = space.combine(terms);
                let e = space.elementary_norm(&coords, cfg.budget, linalg::derive_seed(cfg.seed, 0xE1, k as u64))?;
                let pool = [space.algebra().identity(), e.witness.clone()];
                let dn = dilation::induced_norm_with(
                    &space,
                    &dil,
                    &coords,
                    cfg.budget,
                    linalg::derive_seed(cfg.seed, 0xE2, k as u64),
                    &pool,
                )?;
                let w = dilation::contraction_w(&space, &dil, &coords)?.norm();
                rows.push(json!({ "d_norm": dn.value, "e_norm": e.value, "w_norm": w }));
                report.check(Check::at_most("w_contraction", w - dn.value, crate::tol::BOUND_SLACK), REF_D_NORM);
                report.check(
                    Check::at_most("e_below_s_times_d", e.value - s_norm * dn.value, crate::tol::BOUND_SLACK),
                    REF_D_NORM,
                );
            }
        }
        NormKind::PV => {
            report.put("norm", json!("pV"));
            let p = cfg.p;
            let alg = space.algebra();
            let upv = pvariation::pvar_estimate_with(
                &map,
                &Projection::identity(alg),
                p,
                4 * cfg.budget,
                linalg::derive_seed(cfg.seed, 0xF0, 0),
                &PVarOptions::default(),
            )?;
            report.put("measure_pv_norm", json!(upv.value));
            for (k, terms) in samples.iter().enumerate() {
                let coords = space.combine(terms);
                let est = pvariation::pv_dilation_norm(&space, &coords, p, cfg.budget, linalg::derive_seed(cfg.seed, 0xF1, k as u64))?;
                let weight: f64 = terms.iter().map(|g| g.coef.norm() * g.x.norm()).sum();
                let bound = 4.0 * upv.value * weight;
                let proj = projection::random_projection(alg, &mut rng);
                let (moved, orig) =
                    pvariation::pv_precomposition_pair(&space, &coords, &proj, p, cfg.budget, linalg::derive_seed(cfg.seed, 0xF2, k as u64))?;
                rows.push(json!({ "pv_norm": est.value, "bound": bound, "precomposed": moved, "shared_witness_norm": orig }));
                report.check(Check::at_most("pv_norm_bound", est.value - bound, crate::tol::BOUND_SLACK), REF_PV_NORM);
                report.check(Check::at_most("v_contraction", moved - orig, crate::tol::BOUND_SLACK), REF_PV_NORM);
            }
        }
    }
    report.put("samples", Value::Array(rows));
    Ok(report.finish(cfg))
}

/// `Ū(E_ij)Ū(E_kl) = δ_jk Ū(E_il)` and `Ū(E_ij)* = Ū(E_ji)` on matrix units.
pub fn is_star_homomorphism(map: &OperatorMap, tol: f64) -> bool {
    let alg = map.algebra();
    let units = map.units();
    for a in 0..alg.total_dim() {
        let (k, i, j) = alg.unit_coords(a);
        if linalg::max_abs(&(units[a].adjoint() - &units[alg.unit_index(k, j, i)])) > tol {
            return false;
        }
        for b in 0..alg.total_dim() {
            let (k2, j2, l) = alg.unit_coords(b);
            let prod = &units[a] * &units[b];
            let want = if k == k2 && j == j2 {
                units[alg.unit_index(k, i, l)].clone()
            } else {
                CMat::zeros(map.d(), map.d())
            };
            if linalg::max_abs(&(prod - want)) > tol {
                return false;
            }
        }
    }
    true
}

fn pvar_section(cfg: &RunConfig, report: &mut Report, file: &MeasureFile, map: &OperatorMap, root: &Projection) -> Result<()> {
    let p = cfg.p;
    let est = pvariation::pvar_estimate_with(map, root, p, cfg.budget, linalg::derive_seed(cfg.seed, 0x9E, 0), &PVarOptions::default())?;
    report.put(
        "pvariation",
        json!({
            "p": p,
            "value": est.value,
            "depth_cap": est.depth_cap,
            "tree": serde_json::to_value(TreeJson::from(&est.best_tree))?,
            "x": io::vector_json(&est.best_x),
        }),
    );
    report.check(Check::flag("pvar_finite", est.value.is_finite()), REF_PV_DEF);
    let alg = map.algebra();
    if alg.is_abelian() && alg.num_blocks() <= pvariation::ORACLE_MAX_ATOMS {
        let atoms: Vec<usize> = (0..alg.num_blocks())
            .filter(|&i| root.element().block(i)[(0, 0)].re > 0.5)
            .collect();
        let oracle = pvariation::pvar_oracle_abelian(map, &atoms, p)?;
        report.put("oracle", json!({ "value": oracle.value, "exact": oracle.exact, "partition": oracle.partition }));
        if oracle.exact {
            report.check(Check::at_most("oracle_agreement", (est.value - oracle.value).abs(), 1e-6), REF_ABELIAN);
        }
    }
    if let Some(k) = &file.kraus {
        if (p - 2.0).abs() < 1e-15 {
            let cb = cpmaps::cb_norm_cp(k);
            report.put("cb_norm", json!(cb));
            report.check(Check::at_most("cp_two_variation", est.value - cb, crate::tol::BOUND_SLACK), REF_CP);
        }
    }
    if (p - 2.0).abs() < 1e-15 && is_star_homomorphism(map, 1e-10) {
        let ceiling = pvariation::hilbert_ceiling(map, root);
        report.put("hilbert_ceiling", json!(ceiling));
        report.check(Check::at_most("hilbert_ceiling", est.value - ceiling, 1e-9), REF_HILBERT);
    }
    Ok(())
}

pub fn cmd_pvar(cfg: &RunConfig, file: &MeasureFile, root: &Projection) -> Result<(Value, bool)> {
    let mut report = Report::new("pvar");
    let map = linear_map(cfg, file)?;
    report.put("projection_rank", json!(root.rank()));
    pvar_section(cfg, &mut report, file, &map, root)?;
    Ok(report.finish(cfg))
}

pub fn cmd_verify(cfg: &RunConfig, file: &MeasureFile) -> Result<(Value, bool)> {
    let mut report = Report::new("verify");
    additivity_section(cfg, &mut report, &file.measure)?;
    let map = match &file.measure {
        QuantumMeasure::Linear(m) => m.clone(),
        QuantumMeasure::Tabulated(t) => {
            let ext = measure::gleason_extend(t, cfg.tol)?;
            report.put("extension", json!({ "residual": ext.residual, "warnings": ext.warnings }));
            report.check(Check::at_most("extension_residual", ext.residual, cfg.tol), REF_GLEASON);
            if !ext.extendable {
                return Ok(report.finish(cfg));
            }
            ext.map
        }
    };
    let space = dilation::build_elementary_space(&map, cfg.budget, cfg.seed)?;
    dilation_section(cfg, &mut report, &space, &file.measure)?;
    let j = dilation::jordan_check(&space, 20, linalg::derive_seed(cfg.seed, 0x70, 0))?;
    report.put(
        "jordan",
        json!({
            "jordan_residual": j.jordan_residual,
            "idempotency_residual": j.idempotency_residual,
            "anticommutator_max": j.anticommutator_max,
            "linear_consistency": j.linear_consistency,
            "pairs_checked": j.pairs_checked,
        }),
    );
    report.check(Check::at_most("jordan_residual", j.jordan_residual, 1e-7), REF_JORDAN);
    report.check(Check::at_most("anticommutator", j.anticommutator_max, 1e-8), REF_JORDAN);
    let root = Projection::identity(map.algebra());
    pvar_section(cfg, &mut report, file, &map, &root)?;
    Ok(report.finish(cfg))
}
