//! Experiment configuration, dispatch and report serialization.
//!
//! An [`ExperimentConfig`] names a command, the norm and output options, and
//! carries the command's options in `params`, which are parsed strictly by
//! the command. Reports are written as JSON with floats in 17 significant
//! digits, or as CSV series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::bubble::{BubbleParams, QUAD_TOL};
use crate::error::{Error, Result};
use crate::field::FnField;
use crate::finsler::{wulff_volume, NormSpec, VolumeMethod, WulffGeometry, DUAL_TOL};
use crate::grid::GridField;
use crate::lab::{
    annulus_harnack_experiment, quantize_family, singleness_check, sup_inf_experiment, BoxDomain, FamilyConfig,
    HarnackRecord, QuantizeReport, SinglenessRecord, SupInfRecord,
};
use crate::operator::{residual_norms, ResidualNorms};
use crate::radial::{radial_solve_fn, RadialProfile};
use crate::solver::{solve_dirichlet, Boundary, NewtonOptions, SolveReport};

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid input; no report is written.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Dual,
    Kappa,
    BubbleMass,
    RadialSolve,
    Solve,
    Quantize,
    Supinf,
    Harnack,
    Singleness,
}

impl Command {
    /// Commands whose options contain a whole family.
    pub fn takes_family(self) -> bool {
        matches!(self, Command::Quantize | Command::Supinf | Command::Singleness)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub norm: Option<NormSpec>,
    #[serde(rename = "N", default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    /// Seed of every stochastic method.
    #[serde(default)]
    pub seed: u64,
    /// Command options, see the `*Params` types.
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        ExperimentConfig {
            command,
            norm: None,
            n: None,
            out: None,
            format: Format::Json,
            seed: 0,
            params: empty_object(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The norm and dimension, which must agree when both are given.
    fn norm_and_dim(&self) -> Result<(NormSpec, usize)> {
        let norm = self
            .norm
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("{:?} needs a norm", self.command)))?;
        if let Some(n) = self.n {
            if n != norm.dim() {
                return Err(Error::DimensionMismatch {
                    expected: norm.dim(),
                    got: n,
                });
            }
        }
        let n = norm.dim();
        Ok((norm, n))
    }

    fn params<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.params.clone())?)
    }

    /// A family from the options, checked against the top-level norm.
    fn family(&self, family: &FamilyConfig) -> Result<()> {
        if let Some(norm) = &self.norm {
            if norm != &family.norm {
                return Err(Error::InvalidArgument("norm differs from the family's norm".into()));
            }
        }
        if let Some(n) = self.n {
            if n != family.n {
                return Err(Error::DimensionMismatch {
                    expected: family.n,
                    got: n,
                });
            }
        }
        family.validate()
    }
}

/// Options of `dual`: explicit points, or `random` points drawn from the
/// cube `[-1, 1]^N` with the config seed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualParams {
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub random: usize,
    #[serde(default = "default_dual_tol")]
    pub tol: f64,
}

fn default_dual_tol() -> f64 {
    DUAL_TOL
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaParams {
    /// Defaults to quadrature in 2D and Monte-Carlo with the config seed
    /// otherwise.
    #[serde(default)]
    pub method: Option<VolumeMethod>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleMassParams {
    #[serde(default = "default_lambdas")]
    pub lambda: Vec<f64>,
    #[serde(rename = "V0", default = "one")]
    pub v0: f64,
    /// Wulff radius of the ball; the whole space when absent.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_lambdas() -> Vec<f64> {
    vec![1.0]
}

fn one() -> f64 {
    1.0
}

fn default_quad_tol() -> f64 {
    QUAD_TOL
}

/// Right-hand side of `radial-solve`: `const:<c>`, `bubble:lambda=<λ>[,V0=<v>]`
/// (the density `V₀ e^u` of a centered bubble) or `csv:<path>` with an `r,value`
/// profile.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSolveParams {
    pub rhs: String,
    #[serde(rename = "R")]
    pub big_r: f64,
    #[serde(default = "default_radial_points")]
    pub points: usize,
}

fn default_radial_points() -> usize {
    65
}

/// Options of `solve`: a cube `[lo, hi]^N` with `grid` nodes per axis, a
/// source `const:<c>` and boundary data `const:<c>` or
/// `bubble:lambda=<λ>[,p=<x;y;...>]` (with `V₀` the source constant).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveParams {
    pub grid: usize,
    pub domain: String,
    #[serde(rename = "V", default = "default_source")]
    pub v: String,
    pub boundary: String,
    #[serde(default)]
    pub newton: NewtonOptions,
}

fn default_source() -> String {
    "const:1".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeParams {
    pub family: FamilyConfig,
    pub radii: Vec<f64>,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupinfParams {
    pub family: FamilyConfig,
    pub sigma: BoxDomain,
    #[serde(rename = "C1")]
    pub c1: f64,
}

/// Options of `harnack`: the bubble `u` with scale `lambda` centered at `p`,
/// sampled on Wulff spheres around `center`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackParams {
    pub lambda: f64,
    pub p: Vec<f64>,
    #[serde(rename = "V0", default = "one")]
    pub v0: f64,
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinglenessParams {
    pub family: FamilyConfig,
    pub a1: Vec<f64>,
    #[serde(rename = "R")]
    pub big_r: f64,
    #[serde(default = "default_growth_tol")]
    pub growth_tol: f64,
}

fn default_growth_tol() -> f64 {
    1e-6
}

/// Reports that also have a CSV form.
pub trait Tabular {
    fn csv_header(&self) -> Vec<String>;
    fn csv_rows(&self) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEntry {
    pub x: Vec<f64>,
    pub closed_form: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub norm: NormSpec,
    pub entries: Vec<DualEntry>,
    pub max_rel_error: f64,
}

impl Tabular for DualReport {
    fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.norm.dim()).map(|k| format!("x{k}")).collect();
        h.extend(["closed_form".into(), "numeric".into()]);
        h
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| {
                let mut row = e.x.clone();
                row.extend([e.closed_form, e.numeric]);
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub norm: NormSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub method: VolumeMethod,
    pub kappa: f64,
    pub error: f64,
    pub c_n: f64,
    pub bubble_mass: f64,
}

impl Tabular for KappaReport {
    fn csv_header(&self) -> Vec<String> {
        vec!["kappa".into(), "error".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        vec![vec![self.kappa, self.error]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleMassEntry {
    pub lambda: f64,
    pub mass: f64,
    /// `mass/(C_N κ) − 1`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleMassReport {
    pub norm: NormSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub radius: Option<f64>,
    pub bubble_mass: f64,
    pub entries: Vec<BubbleMassEntry>,
}

impl Tabular for BubbleMassReport {
    fn csv_header(&self) -> Vec<String> {
        vec!["lambda".into(), "mass".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| vec![e.lambda, e.mass]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub kappa: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

impl Tabular for RadialReport {
    fn csv_header(&self) -> Vec<String> {
        vec!["r".into(), "value".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.r.iter().zip(&self.u).map(|(r, u)| vec![*r, *u]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    #[serde(rename = "N")]
    pub n: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub report: SolveReport,
    pub residual: ResidualNorms,
    /// Interior sup-distance to the bubble that supplied the boundary data.
    pub bubble_error: Option<f64>,
    #[serde(skip)]
    pub u: Option<GridField>,
}

impl Tabular for SolveOutput {
    fn csv_header(&self) -> Vec<String> {
        vec!["index".into(), "value".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.u
            .iter()
            .flat_map(|u| u.values().iter().enumerate().map(|(i, v)| vec![i as f64, *v]))
            .collect()
    }
}

impl Tabular for QuantizeReport {
    fn csv_header(&self) -> Vec<String> {
        vec!["lambda".into(), "radius".into(), "mass".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.members
            .iter()
            .flat_map(|m| {
                m.reports
                    .iter()
                    .flat_map(move |r| r.entries.iter().map(move |e| vec![m.lambda, e.radius, e.mass]))
            })
            .collect()
    }
}

impl Tabular for SupInfRecord {
    fn csv_header(&self) -> Vec<String> {
        vec!["lambda".into(), "value".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.lambdas.iter().zip(&self.values).map(|(l, v)| vec![*l, *v]).collect()
    }
}

impl Tabular for HarnackRecord {
    fn csv_header(&self) -> Vec<String> {
        vec!["radius".into(), "sup".into(), "inf".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.radii
            .iter()
            .zip(self.sup.iter().zip(&self.inf))
            .map(|(r, (s, i))| vec![*r, *s, *i])
            .collect()
    }
}

impl Tabular for SinglenessRecord {
    fn csv_header(&self) -> Vec<String> {
        vec!["lambda".into(), "sup".into()]
    }

    fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.lambdas
            .iter()
            .zip(&self.sup_per_member)
            .map(|(l, s)| vec![*l, *s])
            .collect()
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct DigitsFormatter(PrettyFormatter<'static>);

impl Formatter for DigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Report as pretty JSON with 17-digit floats; non-finite floats become
/// `null`.
pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, DigitsFormatter(PrettyFormatter::new()));
    report.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON output is UTF-8"))
}

/// Header line plus one row per record, floats with 17 significant digits.
pub fn to_csv<T: Tabular>(report: &T) -> String {
    let mut s = report.csv_header().join(",");
    s.push('\n');
    for row in report.csv_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes `report` to `path`; the parent directory must exist.
pub fn write_report<T: Serialize + Tabular>(report: &T, path: &Path, format: Format) -> Result<()> {
    check_parent(path)?;
    let text = match format {
        Format::Json => to_json(report)?,
        Format::Csv => to_csv(report),
    };
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON report back.
pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn check_parent(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(p) = parent {
        if !p.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "output directory {} does not exist",
                p.display()
            )));
        }
    }
    Ok(())
}

/// Outcome of [`run_command`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub status: i32,
    pub report_path: Option<PathBuf>,
    /// Error description for nonzero statuses.
    pub diagnostic: Option<String>,
}

/// Exit status for an error: numerical failures map to 3, everything else
/// (bad input, unreadable files) to 2.
pub fn exit_status(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. }
        | Error::NewtonDiverged { .. }
        | Error::SingularJacobian { .. }
        | Error::UnresolvedConcentration { .. }
        | Error::DegenerateFit(_) => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

/// Runs the command and writes its report to `config.out` when set.
pub fn run_command(config: &ExperimentConfig) -> ExitRecord {
    let result = config
        .out
        .as_deref()
        .map_or(Ok(()), check_parent)
        .and_then(|_| execute(config));
    match result {
        Ok(report) => match &config.out {
            Some(path) => match report.write(path, config.format) {
                Ok(()) => ExitRecord {
                    status: EXIT_OK,
                    report_path: Some(path.clone()),
                    diagnostic: None,
                },
                Err(e) => failure(&e),
            },
            None => ExitRecord {
                status: EXIT_OK,
                report_path: None,
                diagnostic: None,
            },
        },
        Err(e) => failure(&e),
    }
}

fn failure(e: &Error) -> ExitRecord {
    ExitRecord {
        status: exit_status(e),
        report_path: None,
        diagnostic: Some(e.to_string()),
    }
}

/// Result of a command, ready to be written.
#[derive(Debug, Clone)]
pub enum Report {
    Dual(DualReport),
    Kappa(KappaReport),
    BubbleMass(BubbleMassReport),
    Radial(RadialReport),
    Solve(Box<SolveOutput>),
    Quantize(QuantizeReport),
    SupInf(SupInfRecord),
    Harnack(HarnackRecord),
    Singleness(SinglenessRecord),
}

impl Report {
    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        match self {
            Report::Dual(r) => write_report(r, path, format),
            Report::Kappa(r) => write_report(r, path, format),
            Report::BubbleMass(r) => write_report(r, path, format),
            Report::Radial(r) => write_report(r, path, format),
            Report::Solve(r) => {
                if format == Format::Csv {
                    // The solution as a grid CSV with its JSON header.
                    check_parent(path)?;
                    r.u.as_ref().expect("solve output keeps the grid").write_csv(path)
                } else {
                    write_report(r.as_ref(), path, format)
                }
            }
            Report::Quantize(r) => write_report(r, path, format),
            Report::SupInf(r) => write_report(r, path, format),
            Report::Harnack(r) => write_report(r, path, format),
            Report::Singleness(r) => write_report(r, path, format),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Report::Dual(r) => to_json(r),
            Report::Kappa(r) => to_json(r),
            Report::BubbleMass(r) => to_json(r),
            Report::Radial(r) => to_json(r),
            Report::Solve(r) => to_json(r.as_ref()),
            Report::Quantize(r) => to_json(r),
            Report::SupInf(r) => to_json(r),
            Report::Harnack(r) => to_json(r),
            Report::Singleness(r) => to_json(r),
        }
    }
}

/// Dispatches to the owning module.
pub fn execute(config: &ExperimentConfig) -> Result<Report> {
    match config.command {
        Command::Dual => dual(config).map(Report::Dual),
        Command::Kappa => kappa(config).map(Report::Kappa),
        Command::BubbleMass => bubble_mass(config).map(Report::BubbleMass),
        Command::RadialSolve => radial(config).map(Report::Radial),
        Command::Solve => solve(config).map(|s| Report::Solve(Box::new(s))),
        Command::Quantize => {
            let p: QuantizeParams = config.params()?;
            config.family(&p.family)?;
            quantize_family(&p.family, &p.radii, p.quad_tol).map(Report::Quantize)
        }
        Command::Supinf => {
            let p: SupinfParams = config.params()?;
            config.family(&p.family)?;
            sup_inf_experiment(&p.family, &p.sigma, p.c1).map(Report::SupInf)
        }
        Command::Harnack => harnack(config).map(Report::Harnack),
        Command::Singleness => {
            let p: SinglenessParams = config.params()?;
            config.family(&p.family)?;
            singleness_check(&p.family, &p.a1, p.big_r, p.growth_tol).map(Report::Singleness)
        }
    }
}

fn dual(config: &ExperimentConfig) -> Result<DualReport> {
    let (norm, n) = config.norm_and_dim()?;
    let p: DualParams = config.params()?;
    let mut points = p.points.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..p.random {
        points.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("dual needs points or a positive random count".into()));
    }
    let mut entries = Vec::with_capacity(points.len());
    let mut max_rel_error: f64 = 0.0;
    for x in points {
        let closed_form = norm.dual_norm(&x, p.tol)?;
        let numeric = norm.dual_norm_ascent(&x, p.tol)?;
        if closed_form > 0.0 {
            max_rel_error = max_rel_error.max((numeric - closed_form).abs() / closed_form);
        }
        entries.push(DualEntry { x, closed_form, numeric });
    }
    Ok(DualReport {
        norm,
        entries,
        max_rel_error,
    })
}

fn kappa(config: &ExperimentConfig) -> Result<KappaReport> {
    let (norm, n) = config.norm_and_dim()?;
    let p: KappaParams = config.params()?;
    let method = p.method.unwrap_or(match VolumeMethod::default_for(n) {
        VolumeMethod::MonteCarlo { samples, .. } => VolumeMethod::MonteCarlo {
            samples,
            seed: config.seed,
        },
        m => m,
    });
    let est = wulff_volume(&norm, n, method)?;
    let geometry = WulffGeometry::new(&norm);
    Ok(KappaReport {
        norm,
        n,
        method,
        kappa: est.value,
        error: est.error,
        c_n: geometry.c_n,
        bubble_mass: geometry.c_n * est.value,
    })
}

fn bubble_mass(config: &ExperimentConfig) -> Result<BubbleMassReport> {
    let (norm, n) = config.norm_and_dim()?;
    let p: BubbleMassParams = config.params()?;
    let geometry = WulffGeometry::new(&norm);
    let entries = p
        .lambda
        .iter()
        .map(|&lambda| {
            let b = BubbleParams::new(lambda, vec![0.0; n], p.v0, norm.clone())?;
            let mass = match p.radius {
                Some(r) => b.mass_within(r, p.quad_tol)?,
                None => b.mass(p.quad_tol)?,
            };
            Ok(BubbleMassEntry {
                lambda,
                mass,
                rel_error: mass / geometry.bubble_mass() - 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BubbleMassReport {
        norm,
        n,
        radius: p.radius,
        bubble_mass: geometry.bubble_mass(),
        entries,
    })
}

fn radial(config: &ExperimentConfig) -> Result<RadialReport> {
    let (norm, n) = config.norm_and_dim()?;
    let p: RadialSolveParams = config.params()?;
    if p.points < 2 {
        return Err(Error::InvalidArgument("radial-solve needs at least 2 points".into()));
    }
    let kappa = WulffGeometry::new(&norm).kappa;
    let radii = RadialProfile::uniform_radii(p.big_r, p.points);
    let u = match parse_spec(&p.rhs)? {
        ("const", args) => {
            let c = parse_number(args)?;
            radial_solve_fn(|_| c, &radii, p.big_r, n, kappa)?
        }
        ("bubble", args) => {
            let kv = parse_pairs(args)?;
            let lambda = lookup(&kv, "lambda")?.unwrap_or(1.0);
            let v0 = lookup(&kv, "V0")?.unwrap_or(1.0);
            let b = BubbleParams::new(lambda, vec![0.0; n], v0, norm.clone())?;
            radial_solve_fn(|s| v0 * b.profile(s).exp(), &radii, p.big_r, n, kappa)?
        }
        ("csv", path) => {
            let f = RadialProfile::read_csv(Path::new(path))?;
            radial_solve_fn(|s| f.eval(s).unwrap_or(f64::NAN), &radii, p.big_r, n, kappa)?
        }
        (kind, _) => return Err(Error::Parse(format!("unknown right-hand side `{kind}`"))),
    };
    Ok(RadialReport {
        n,
        big_r: p.big_r,
        kappa,
        r: radii,
        u,
    })
}

fn solve(config: &ExperimentConfig) -> Result<SolveOutput> {
    let (norm, n) = config.norm_and_dim()?;
    let p: SolveParams = config.params()?;
    let (domain_lo, domain_hi, dim) = parse_cube(&p.domain)?;
    if dim != n {
        return Err(Error::DimensionMismatch { expected: n, got: dim });
    }
    let grid = GridField::cube(domain_lo, domain_hi, n, p.grid)?;
    let v0 = match parse_spec(&p.v)? {
        ("const", args) => parse_number(args)?,
        (kind, _) => return Err(Error::Parse(format!("unknown source `{kind}`"))),
    };
    let v = grid.map_positions(|_| v0)?;
    let mid = 0.5 * (domain_lo + domain_hi);
    let (bubble, constant) = match parse_spec(&p.boundary)? {
        ("const", args) => (None, Some(parse_number(args)?)),
        ("bubble", args) => {
            let kv = parse_pairs(args)?;
            let lambda = lookup(&kv, "lambda")?.unwrap_or(1.0);
            let center = match kv.iter().find(|(k, _)| k == "p") {
                Some((_, s)) => parse_list(&s.replace(';', ","))?,
                None => vec![mid; n],
            };
            if let Some((k, _)) = kv.iter().find(|(k, _)| k != "lambda" && k != "p") {
                return Err(Error::Parse(format!("unknown bubble option `{k}`")));
            }
            (Some(BubbleParams::new(lambda, center, v0, norm.clone())?), None)
        }
        (kind, _) => return Err(Error::Parse(format!("unknown boundary data `{kind}`"))),
    };
    let sol = match (&bubble, constant) {
        (Some(b), _) => solve_dirichlet(&grid, &norm, n, &v, Boundary::Field(b), &p.newton)?,
        (None, Some(c)) => {
            let f = FnField::new(n, move |_: &[f64]| c);
            solve_dirichlet(&grid, &norm, n, &v, Boundary::Field(&f), &p.newton)?
        }
        _ => unreachable!("boundary data is either a bubble or a constant"),
    };
    let residual = residual_norms(&sol.u, &v, &norm, n, 1)?;
    let bubble_error = bubble.as_ref().map(|b| {
        (0..sol.u.len())
            .filter(|&i| !sol.u.boundary_mask()[i])
            .map(|i| (sol.u.values()[i] - b.profile(b.radius_of(&sol.u.position(i)))).abs())
            .fold(0.0, f64::max)
    });
    Ok(SolveOutput {
        n,
        shape: sol.u.shape().to_vec(),
        h: sol.u.h(),
        report: sol.report,
        residual,
        bubble_error,
        u: Some(sol.u),
    })
}

fn harnack(config: &ExperimentConfig) -> Result<HarnackRecord> {
    let (norm, n) = config.norm_and_dim()?;
    let p: HarnackParams = config.params()?;
    let b = BubbleParams::new(p.lambda, p.p, p.v0, norm.clone())?;
    annulus_harnack_experiment(&b, &p.center, &p.radii, &norm, n, None)
}

/// Splits `kind:args`.
pub fn parse_spec(s: &str) -> Result<(&str, &str)> {
    s.split_once(':')
        .map(|(k, a)| (k.trim(), a.trim()))
        .ok_or_else(|| Error::Parse(format!("expected `kind:arguments`, got `{s}`")))
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

/// `a=1,b=2` into pairs, values kept as text.
pub fn parse_pairs(s: &str) -> Result<Vec<(String, String)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

fn lookup(kv: &[(String, String)], key: &str) -> Result<Option<f64>> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| parse_number(v))
        .transpose()
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_number).collect()
}

/// `[lo,hi]^N` into `(lo, hi, N)`.
pub fn parse_cube(s: &str) -> Result<(f64, f64, usize)> {
    let err = || Error::Parse(format!("expected `[lo,hi]^N`, got `{s}`"));
    let (interval, power) = s.trim().rsplit_once('^').ok_or_else(err)?;
    let inner = interval
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(err)?;
    let bounds = parse_list(inner)?;
    let dim: usize = power.trim().parse().map_err(|_| err())?;
    match bounds[..] {
        [lo, hi] if lo < hi && dim >= 1 => Ok((lo, hi, dim)),
        _ => Err(err()),
    }
}

/// A random point set for property checks, drawn with the given seed.
pub fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_cube("[-0.5,0.5]^2").unwrap(), (-0.5, 0.5, 2));
        assert!(parse_cube("[0.5,-0.5]^2").is_err());
        assert!(parse_cube("-0.5,0.5").is_err());
        assert_eq!(parse_spec("bubble:lambda=1").unwrap(), ("bubble", "lambda=1"));
        assert_eq!(parse_pairs("lambda=2, V0=3").unwrap()[1], ("V0".into(), "3".into()));
        assert_eq!(parse_list("0.1,0.25").unwrap(), vec![0.1, 0.25]);
        assert!(parse_list("0.1,x").is_err());
    }

    #[test]
    fn json_floats_have_17_digits() {
        let s = to_json(&vec![0.1f64, -2.5e-300]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, -2.5e-300]);
    }

    #[test]
    fn strict_config() {
        assert!(ExperimentConfig::from_json(r#"{"command":"kappa","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"command":"nope"}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"command":"kappa","norm":{"family":"q_norm","q":2.0,"dim":2}}"#).unwrap();
        assert_eq!(c.format, Format::Json);
        let mut bad = c.clone();
        bad.params = serde_json::json!({"method": {"method": "closed_form"}, "extra": 1});
        assert_eq!(exit_status(&execute(&bad).unwrap_err()), EXIT_VALIDATION);
        bad.n = Some(3);
        bad.params = empty_object();
        assert!(execute(&bad).is_err());
    }

    #[test]
    fn kappa_report() {
        let mut c = ExperimentConfig::new(Command::Kappa);
        c.norm = Some(NormSpec::euclidean(2).unwrap());
        match execute(&c).unwrap() {
            Report::Kappa(r) => assert!((r.kappa - std::f64::consts::PI).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
    }
}
