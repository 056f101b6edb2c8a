//! Report assembly for the `shapevar` command line: evaluation, regime sweeps,
//! oracle verification and the constants errata, serialized as versioned JSON or CSV.
//!
//! Floats are written with 17 significant digits (`%.17g`) so identical invocations
//! give byte-identical output. Non-finite values are written as `null` and counted
//! in the envelope flags.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io;
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::closed_forms::{
    self, ball_constants, relative_difference, unit_sphere_area, EvaluationMode, OmegaConvention, ProblemParams,
};
use crate::error::{Error, Result};
use crate::fields::{sample_points, PolynomialField};
use crate::numeric_oracle::{
    check_aij_lemma, check_jacobian_coefficients, exterior_capacity_p2, fd_first_derivative, fd_second_derivative,
    normalized_family, perturbed_area, perturbed_volume, torsion_q2, zonal_mode, FdEstimate, JacobianCoefficientCheck,
    SpectralSolveConfig, DEFAULT_AMPLITUDE, GEOMETRY_AMPLITUDE,
};
use crate::regime_classifier::{classify_product, find_product_thresholds, ThresholdGrids, Verdict};
use crate::sphere_harmonics::HarmonicIndex;
use crate::variation_engine::{
    check_jacobian_expansion, compare_product, perimeter_variation, product_coefficients, second_variation_capacity,
    second_variation_torsion, volume_variation, CoefficientKind, ModeSpectrum, SecondOrderFlux,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "shapevar";

/// Exit codes of the command line.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const BAD_INPUT: i32 = 2;
    pub const SOLVER_FAILURE: i32 = 3;
}

/// Exit code for a library error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Solver { .. } | Error::NotStarShaped { .. } | Error::NonFinite { .. } => exit::SOLVER_FAILURE,
        _ => exit::BAD_INPUT,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub params: Value,
    pub results: Value,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

fn count_nulls(v: &Value) -> usize {
    match v {
        Value::Null => 1,
        Value::Array(a) => a.iter().map(count_nulls).sum(),
        Value::Object(o) => o.values().map(count_nulls).sum(),
        _ => 0,
    }
}

impl ReportEnvelope {
    /// Results must not contain optional fields serialized as `null`: every `null`
    /// in the tree is counted as a non-finite number.
    pub fn new<P: Serialize, R: Serialize>(command: &str, params: &P, results: &R, flags: Vec<String>) -> Result<Self> {
        let ser_err = |e: serde_json::Error| Error::Input(format!("serialization failed: {e}"));
        let params = serde_json::to_value(params).map_err(ser_err)?;
        let results = serde_json::to_value(results).map_err(ser_err)?;
        let mut flags = flags;
        let nulls = count_nulls(&params) + count_nulls(&results);
        if nulls > 0 {
            flags.push(format!("{nulls} non-finite value(s) written as null"));
        }
        Ok(Self {
            schema: SCHEMA_VERSION,
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            params,
            results,
            flags,
            timing: None,
        })
    }

    pub fn with_timing(mut self, start: Instant) -> Self {
        self.timing =
            Some(Timing { wall_seconds: start.elapsed().as_secs_f64(), threads: rayon::current_num_threads() });
        self
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }
}

/// C-style `%.17g`.
pub fn format_g17(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mant), sign, exp.abs())
    } else {
        trim(&format!("{:.*}", (16 - exp) as usize, x))
    }
}

struct G17Formatter;

impl serde_json::ser::Formatter for G17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with `%.17g` floats.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, G17Formatter);
    value.serialize(&mut ser).expect("JSON serialization into memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Outcome of one command: the report and the process exit code.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub envelope: ReportEnvelope,
    pub csv: Option<String>,
    pub exit_code: i32,
}

/// Which product evaluations to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Paper,
    Derived,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<EvaluationMode> {
        match self {
            Self::Paper => vec![EvaluationMode::Paper],
            Self::Derived => vec![EvaluationMode::Derived],
            Self::Both => EvaluationMode::BOTH.to_vec(),
        }
    }
}

impl std::str::FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "derived" => Ok(Self::Derived),
            "both" => Ok(Self::Both),
            other => Err(Error::Input(format!("unknown mode {other:?}; expected paper, derived or both"))),
        }
    }
}

/// Parses `k:coeff` or `k:m:coeff` entries separated by commas into a shape spectrum on `∂B_R`.
pub fn parse_modes(text: &str, radius: f64) -> Result<ModeSpectrum> {
    let mut spec = ModeSpectrum::new(radius, CoefficientKind::Shape);
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        let bad = || Error::Input(format!("cannot parse mode {item:?}; expected k:coeff or k:m:coeff"));
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad());
        let (k, m, c) = match parts.as_slice() {
            [k, c] => (int(k)?, 0, c),
            [k, m, c] => (int(k)?, int(m)?, c),
            _ => return Err(bad()),
        };
        let c: f64 = c.parse().map_err(|_| bad())?;
        if !c.is_finite() {
            return Err(bad());
        }
        spec.add(HarmonicIndex::new(k, m)?, c);
    }
    if spec.entries().is_empty() {
        return Err(Error::Input("no modes given".into()));
    }
    Ok(spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalArgs {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub modes: String,
    pub mode: ModeSelection,
}

#[derive(Serialize)]
struct SpectrumEntry {
    k: usize,
    m: i64,
    coeff: f64,
}

/// Values and first/second variations of capacity, torsion and their product.
pub fn cmd_eval(args: &EvalArgs) -> Result<CommandOutput> {
    let params = ProblemParams::new(args.d, args.p, args.q, args.radius)?;
    let rho = parse_modes(&args.modes, args.radius)?;
    rho.check_admissible()?;
    let capacity = second_variation_capacity(&params, &rho)?;
    let torsion = second_variation_torsion(&params, &rho)?;
    let cmp = compare_product(&params, &rho)?;
    let volume = volume_variation(args.d, &rho, SecondOrderFlux::Auto)?;
    let (perimeter_first, perimeter_second) = perimeter_variation(args.d, &rho)?;
    let mut product = serde_json::Map::new();
    let mut coefficients = serde_json::Map::new();
    let mut flags = Vec::new();
    for mode in args.mode.modes() {
        let report = cmp.report(mode);
        flags.extend(report.flags.iter().map(|f| format!("{} product: {f}", mode.name())));
        product.insert(mode.name().into(), serde_json::to_value(report).unwrap());
        coefficients.insert(mode.name().into(), serde_json::to_value(product_coefficients(&params, mode)).unwrap());
    }
    flags.dedup();
    if args.mode == ModeSelection::Both {
        product.insert("sign_table".into(), serde_json::to_value(&cmp.sign_table).unwrap());
    }
    let spectrum: Vec<SpectrumEntry> =
        rho.entries().iter().map(|(i, c)| SpectrumEntry { k: i.k, m: i.m, coeff: *c }).collect();
    let results = serde_json::json!({
        "spectrum": spectrum,
        "ball": ball_constants(&params, OmegaConvention::UnitSphereArea),
        "volume": volume,
        "perimeter": { "first": perimeter_first, "second": perimeter_second },
        "capacity": capacity,
        "torsion": torsion,
        "product": product,
        "product_coefficients": coefficients,
    });
    Ok(CommandOutput { envelope: ReportEnvelope::new("eval", args, &results, flags)?, csv: None, exit_code: exit::OK })
}

/// A grid given either by range and step or as an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpec {
    Range {
        #[serde(skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
        step: f64,
    },
    List(Vec<f64>),
}

impl GridSpec {
    /// Grid values inside `[lo, hi]`; `min`/`max` default to the bounds.
    pub fn values(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Range { min, max, step } => {
                if !(*step > 0.0 && step.is_finite()) {
                    return Err(Error::Input(format!("grid step {step} must be positive")));
                }
                let (a, b) = (min.unwrap_or(lo), max.unwrap_or(hi));
                if !(a.is_finite() && b.is_finite()) || a > b {
                    return Err(Error::Input(format!("empty grid range [{a}, {b}]")));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| a + i as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub d_list: Vec<usize>,
    pub p_grid: GridSpec,
    pub q_grid: GridSpec,
    pub k_max: usize,
    pub mode: ModeSelection,
    pub format: OutputFormat,
    /// Distance from the open ends `p = 1`, `p = d`, `q = 1` for default range bounds.
    pub margin: f64,
    /// Compute `p*`, `q₋`, `q₊` with bisection.
    pub thresholds: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_list: vec![3, 4, 5, 6, 7],
            p_grid: GridSpec::Range { min: None, max: None, step: 0.05 },
            q_grid: GridSpec::Range { min: None, max: Some(10.0), step: 0.05 },
            k_max: crate::regime_classifier::DEFAULT_K_MAX,
            mode: ModeSelection::Paper,
            format: OutputFormat::Json,
            margin: 1e-3,
            thresholds: true,
        }
    }
}

impl SweepConfig {
    fn p_values(&self, d: usize) -> Result<Vec<f64>> {
        let v = self.p_grid.values(1.0 + self.margin, d as f64 - self.margin)?;
        let v: Vec<f64> = v.into_iter().filter(|&p| p > 1.0 && p < d as f64).collect();
        if v.is_empty() {
            return Err(Error::Input(format!("p grid has no admissible point for d = {d}")));
        }
        Ok(v)
    }

    fn q_values(&self) -> Result<Vec<f64>> {
        let v = self.q_grid.values(1.0 + self.margin, 10.0)?;
        if v.is_empty() {
            return Err(Error::Input("q grid is empty".into()));
        }
        if let Some(q) = v.iter().find(|&&q| !(q > 1.0 && q.is_finite())) {
            return Err(Error::Params(format!("torsion exponent q = {q} must satisfy q > 1")));
        }
        Ok(v)
    }

    fn threshold_grids(&self) -> Result<ThresholdGrids> {
        let q = self.q_values()?;
        let step = |g: &GridSpec, fallback: f64| match g {
            GridSpec::Range { step, .. } => *step,
            GridSpec::List(_) => fallback,
        };
        Ok(ThresholdGrids {
            p_step: step(&self.p_grid, 0.01),
            q_min: q[0],
            q_max: *q.last().unwrap(),
            q_step: step(&self.q_grid, 0.01),
            margin: self.margin,
            k_max: self.k_max,
            tol: 1e-10,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyRow {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub mode: EvaluationMode,
    pub verdict: Verdict,
    /// `c₂ + 2c₃` divided by the positive factor `e^{log_scale}`.
    #[serde(rename = "Z2")]
    pub z2: f64,
    #[serde(rename = "Z_tail_sign")]
    pub z_tail_sign: i8,
    pub log_scale: f64,
    pub n_negative: usize,
    pub n_positive: usize,
    pub n_degenerate: usize,
    pub first_positive_mode: Option<usize>,
}

pub const CLASSIFY_CSV_HEADER: [&str; 12] = [
    "d",
    "p",
    "q",
    "mode",
    "verdict",
    "Z2",
    "Z_tail_sign",
    "log_scale",
    "n_negative",
    "n_positive",
    "n_degenerate",
    "first_positive_mode",
];

#[derive(Debug, Clone, Serialize)]
pub struct ClassifySummary {
    pub d: usize,
    pub mode: EvaluationMode,
    pub cells: usize,
    pub verdict_counts: BTreeMap<&'static str, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<crate::regime_classifier::ProductThresholds>,
}

/// Classification grid over `(d, p, q)` with per-`d` summaries.
pub struct ClassifyOutput {
    pub rows: Vec<ClassifyRow>,
    pub summaries: Vec<ClassifySummary>,
}

pub fn classify_grid(cfg: &SweepConfig) -> Result<ClassifyOutput> {
    if cfg.d_list.is_empty() {
        return Err(Error::Input("empty d list".into()));
    }
    let q_values = cfg.q_values()?;
    let grids = cfg.threshold_grids()?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &d in &cfg.d_list {
        if d < 3 {
            return Err(Error::Params(format!("dimension d = {d} must be >= 3")));
        }
        let p_values = cfg.p_values(d)?;
        for mode in cfg.mode.modes() {
            let cells: Vec<(f64, f64)> = p_values.iter().flat_map(|&p| q_values.iter().map(move |&q| (p, q))).collect();
            let block: Vec<ClassifyRow> = cells
                .par_iter()
                .map(|&(p, q)| {
                    let params = ProblemParams::new(d, p, q, 1.0)?;
                    let c = classify_product(&params, mode, cfg.k_max)?;
                    Ok(ClassifyRow {
                        d,
                        p,
                        q,
                        mode,
                        verdict: c.verdict,
                        z2: c.z2(),
                        z_tail_sign: c.tail_sign,
                        log_scale: c.z.log_scale,
                        n_negative: c.negative_modes.len(),
                        n_positive: c.positive_modes.len(),
                        n_degenerate: c.degenerate_modes.len(),
                        first_positive_mode: c.positive_modes.iter().next().copied(),
                    })
                })
                .collect::<Result<_>>()?;
            let mut verdict_counts = BTreeMap::new();
            for r in &block {
                *verdict_counts.entry(r.verdict.name()).or_insert(0) += 1;
            }
            let thresholds = if cfg.thresholds { find_product_thresholds(d, mode, &grids)? } else { None };
            summaries.push(ClassifySummary { d, mode, cells: block.len(), verdict_counts, thresholds });
            rows.extend(block);
        }
    }
    Ok(ClassifyOutput { rows, summaries })
}

fn csv_string<F>(header: &[&str], rows: usize, mut record: F) -> Result<String>
where
    F: FnMut(usize) -> Vec<String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Input(format!("CSV output failed: {e}"));
    w.write_record(header).map_err(io_err)?;
    for i in 0..rows {
        w.write_record(record(i)).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("CSV output failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV writer emits UTF-8"))
}

fn classify_csv(rows: &[ClassifyRow]) -> Result<String> {
    csv_string(&CLASSIFY_CSV_HEADER, rows.len(), |i| {
        let r = &rows[i];
        vec![
            r.d.to_string(),
            format_g17(r.p),
            format_g17(r.q),
            r.mode.name().into(),
            r.verdict.name().into(),
            format_g17(r.z2),
            r.z_tail_sign.to_string(),
            format_g17(r.log_scale),
            r.n_negative.to_string(),
            r.n_positive.to_string(),
            r.n_degenerate.to_string(),
            r.first_positive_mode.map(|k| k.to_string()).unwrap_or_default(),
        ]
    })
}

/// `(p, q, Z₂, verdict)` rows for an external plotter.
pub fn plot_data_csv(rows: &[ClassifyRow]) -> Result<String> {
    csv_string(&["d", "mode", "p", "q", "Z2", "verdict"], rows.len(), |i| {
        let r = &rows[i];
        vec![
            r.d.to_string(),
            r.mode.name().into(),
            format_g17(r.p),
            format_g17(r.q),
            format_g17(r.z2),
            r.verdict.name().into(),
        ]
    })
}

pub fn cmd_classify(cfg: &SweepConfig) -> Result<CommandOutput> {
    let out = classify_grid(cfg)?;
    let flags: Vec<String> = out
        .summaries
        .iter()
        .filter(|s| s.verdict_counts.keys().any(|v| *v != "local_max"))
        .map(|s| {
            let counts: Vec<String> = s.verdict_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("d={} {}: not a local maximizer everywhere ({})", s.d, s.mode.name(), counts.join(", "))
        })
        .collect();
    let rows_value: Vec<Value> = out
        .rows
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).unwrap();
            if r.first_positive_mode.is_none() {
                v.as_object_mut().unwrap().remove("first_positive_mode");
            }
            v
        })
        .collect();
    let results = serde_json::json!({ "summaries": out.summaries, "rows": rows_value });
    let csv = match cfg.format {
        OutputFormat::Csv => Some(classify_csv(&out.rows)?),
        OutputFormat::Json => None,
    };
    let envelope = ReportEnvelope::new("classify", cfg, &results, flags)?;
    Ok(CommandOutput { envelope, csv, exit_code: exit::OK })
}

/// Product second variation of a fixed spectrum over a `(p, q)` grid.
#[derive(Debug, Clone, Serialize)]
pub struct SweepArgs {
    pub grid: SweepConfig,
    #[serde(rename = "R")]
    pub radius: f64,
    pub modes: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub mode: EvaluationMode,
    pub capacity_second: f64,
    pub torsion_second: f64,
    pub product_second: f64,
    pub sign_disagreements: usize,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<CommandOutput> {
    let cfg = &args.grid;
    if cfg.d_list.is_empty() {
        return Err(Error::Input("empty d list".into()));
    }
    let rho = parse_modes(&args.modes, args.radius)?;
    rho.check_admissible()?;
    let q_values = cfg.q_values()?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &d in &cfg.d_list {
        let p_values = cfg.p_values(d)?;
        let cells: Vec<(f64, f64)> = p_values.iter().flat_map(|&p| q_values.iter().map(move |&q| (p, q))).collect();
        let block: Vec<Vec<SweepRow>> = cells
            .par_iter()
            .map(|&(p, q)| {
                let params = ProblemParams::new(d, p, q, args.radius)?;
                let cap = second_variation_capacity(&params, &rho)?.second;
                let tor = second_variation_torsion(&params, &rho)?.second;
                let cmp = compare_product(&params, &rho)?;
                let disagreements = cmp.sign_table.iter().filter(|r| !r.agree).count();
                Ok(cfg
                    .mode
                    .modes()
                    .into_iter()
                    .map(|mode| SweepRow {
                        d,
                        p,
                        q,
                        mode,
                        capacity_second: cap,
                        torsion_second: tor,
                        product_second: cmp.report(mode).second,
                        sign_disagreements: disagreements,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        rows.extend(block.into_iter().flatten());
    }
    let csv = match cfg.format {
        OutputFormat::Csv => Some(csv_string(
            &["d", "p", "q", "mode", "capacity_second", "torsion_second", "product_second", "sign_disagreements"],
            rows.len(),
            |i| {
                let r = &rows[i];
                vec![
                    r.d.to_string(),
                    format_g17(r.p),
                    format_g17(r.q),
                    r.mode.name().into(),
                    format_g17(r.capacity_second),
                    format_g17(r.torsion_second),
                    format_g17(r.product_second),
                    r.sign_disagreements.to_string(),
                ]
            },
        )?),
        OutputFormat::Json => None,
    };
    let flags = match rows.iter().filter(|r| r.sign_disagreements > 0).count() {
        0 => vec![],
        n => vec![format!("{n} row(s) with paper/derived per-mode sign disagreement")],
    };
    let envelope = ReportEnvelope::new("sweep", args, &serde_json::json!({ "rows": rows }), flags)?;
    Ok(CommandOutput { envelope, csv, exit_code: exit::OK })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyTarget {
    Volume,
    Area,
    Capacity,
    Torsion,
    Aij,
    Jacobian,
}

impl std::str::FromStr for VerifyTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "volume" => Self::Volume,
            "area" => Self::Area,
            "capacity" => Self::Capacity,
            "torsion" => Self::Torsion,
            "aij" => Self::Aij,
            "jacobian" => Self::Jacobian,
            other => return Err(Error::Input(format!("unknown verify target {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyArgs {
    pub target: VerifyTarget,
    pub k: usize,
    /// Largest `t·‖ρ‖∞` in the difference steps; target default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_steps: Option<Vec<f64>>,
    /// Number of random fields for `aij` / `jacobian`.
    pub samples: usize,
    pub seed: u64,
}

impl VerifyArgs {
    pub fn new(target: VerifyTarget, k: usize) -> Self {
        Self { target, k, amplitude: None, l_max: None, fd_steps: None, samples: 20, seed: 20240 }
    }
}

/// One formula-versus-oracle comparison.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub quantity: String,
    pub formula: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub error_estimate: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyRow {
    fn new(quantity: &str, formula: f64, oracle: f64, error_estimate: f64, tolerance: f64) -> Self {
        let abs_error = (formula - oracle).abs();
        let rel_error = if formula != 0.0 { abs_error / formula.abs() } else { abs_error };
        Self {
            quantity: quantity.into(),
            formula,
            oracle,
            abs_error,
            rel_error,
            error_estimate,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }
}

fn solve_config(rho: &ModeSpectrum, amplitude: f64, args: &VerifyArgs) -> SpectralSolveConfig {
    let mut cfg = SpectralSolveConfig::for_spectrum(rho, amplitude);
    if let Some(l) = args.l_max {
        cfg.l_max = l;
        cfg.quad_order = 4 * l;
    }
    if let Some(steps) = &args.fd_steps {
        cfg.fd_steps = steps.clone();
    }
    cfg
}

/// The degree-`k` second-variation formula at `d = 3`, `p = q = 2`, `R = 1`, per unit `ρ`-coefficient².
/// Degree 1 is a translation, for which every functional is invariant.
fn formula_value(target: VerifyTarget, k: usize) -> Result<f64> {
    if k == 1 {
        return Ok(0.0);
    }
    let params = ProblemParams::new(3, 2.0, 2.0, 1.0)?;
    let rho = zonal_mode(1.0, k);
    Ok(match target {
        VerifyTarget::Capacity => second_variation_capacity(&params, &rho)?.second,
        VerifyTarget::Torsion => second_variation_torsion(&params, &rho)?.second,
        _ => unreachable!("only capacity and torsion have a series"),
    })
}

/// Oracle rows for one target; errors are solver or input failures.
pub fn verify_rows(args: &VerifyArgs) -> Result<Vec<VerifyRow>> {
    let k = args.k;
    let needs_mode = matches!(
        args.target,
        VerifyTarget::Volume | VerifyTarget::Area | VerifyTarget::Capacity | VerifyTarget::Torsion
    );
    if needs_mode && k == 0 {
        return Err(Error::Precondition { k: 0, constraint: "volume preservation" });
    }
    let rho = zonal_mode(1.0, k);
    let fd2 = |cfg: &SpectralSolveConfig, f: &(dyn Fn(&crate::numeric_oracle::PerturbedBall) -> Result<f64> + Sync)| {
        fd_second_derivative(normalized_family(&rho, f), &cfg.fd_steps, None)
    };
    Ok(match args.target {
        VerifyTarget::Volume => {
            let cfg = solve_config(&rho, args.amplitude.unwrap_or(GEOMETRY_AMPLITUDE), args);
            let first = fd_first_derivative(normalized_family(&rho, perturbed_volume), &cfg.fd_steps, None)?;
            let second = fd2(&cfg, &perturbed_volume)?;
            let vv = volume_variation(3, &rho, SecondOrderFlux::Auto)?;
            vec![
                VerifyRow::new("volume first variation", vv.first, first.value, first.error_estimate, 1e-10),
                VerifyRow::new("volume second variation", vv.second, second.value, second.error_estimate, 1e-10),
            ]
        }
        VerifyTarget::Area => {
            let cfg = solve_config(&rho, args.amplitude.unwrap_or(GEOMETRY_AMPLITUDE), args);
            let first = fd_first_derivative(normalized_family(&rho, perturbed_area), &cfg.fd_steps, None)?;
            let second = fd2(&cfg, &perturbed_area)?;
            let (s1, s2) = perimeter_variation(3, &rho)?;
            vec![
                VerifyRow::new("area first variation", s1, first.value, first.error_estimate, 1e-8),
                VerifyRow::new("area second variation", s2, second.value, second.error_estimate, 1e-6),
            ]
        }
        VerifyTarget::Capacity | VerifyTarget::Torsion => {
            let cfg = solve_config(&rho, args.amplitude.unwrap_or(DEFAULT_AMPLITUDE), args);
            cfg.validate(&rho)?;
            let est: FdEstimate = if args.target == VerifyTarget::Capacity {
                fd2(&cfg, &|b| exterior_capacity_p2(b, &cfg).map(|s| s.value))?
            } else {
                fd2(&cfg, &|b| torsion_q2(b, &cfg).map(|s| s.value))?
            };
            let formula = formula_value(args.target, k)?;
            let tol = if k == 1 { 1e-6 } else { (1e-4f64).max(10.0 * est.error_estimate) };
            let name = if args.target == VerifyTarget::Capacity { "capacity" } else { "torsion" };
            vec![VerifyRow::new(
                &format!("{name} second variation, k={k}"),
                formula,
                est.value,
                est.error_estimate,
                tol,
            )]
        }
        VerifyTarget::Aij => {
            let mut rng = rand::rngs::StdRng::seed_from_u64(args.seed);
            let steps = args.fd_steps.clone().unwrap_or_else(|| vec![4e-3, 2e-3, 1e-3]);
            let mut worst = crate::numeric_oracle::AijCheck { a0: 0.0, a1: 0.0, a2: 0.0 };
            for _ in 0..args.samples {
                let v = PolynomialField::random(&mut rng, 3, 3, 1.0);
                let w = PolynomialField::random(&mut rng, 3, 3, 1.0);
                let pts = sample_points(&mut rng, 3, 5, 0.5);
                let r = check_aij_lemma(&v, &w, &pts, &steps)?;
                worst = crate::numeric_oracle::AijCheck {
                    a0: worst.a0.max(r.a0),
                    a1: worst.a1.max(r.a1),
                    a2: worst.a2.max(r.a2),
                };
            }
            vec![
                VerifyRow::new("A(0) residual", 0.0, worst.a0, 0.0, 1e-7),
                VerifyRow::new("A'(0) residual", 0.0, worst.a1, 0.0, 1e-7),
                VerifyRow::new("A''(0) residual", 0.0, worst.a2, 0.0, 1e-7),
            ]
        }
        VerifyTarget::Jacobian => {
            let mut rng = rand::rngs::StdRng::seed_from_u64(args.seed);
            let steps = args.fd_steps.clone().unwrap_or_else(|| vec![4e-3, 2e-3, 1e-3]);
            let t = args.amplitude.unwrap_or(1e-2);
            let mut worst = JacobianCoefficientCheck { j0: 0.0, j1: 0.0, j2: 0.0 };
            let mut worst_ratio: f64 = 0.0;
            for _ in 0..args.samples {
                let v = PolynomialField::random(&mut rng, 3, 3, 1.0);
                let w = PolynomialField::random(&mut rng, 3, 3, 1.0);
                let pts = sample_points(&mut rng, 3, 5, 0.5);
                let r = check_jacobian_coefficients(&v, &w, &pts, &steps)?;
                worst =
                    JacobianCoefficientCheck { j0: worst.j0.max(r.j0), j1: worst.j1.max(r.j1), j2: worst.j2.max(r.j2) };
                let a = check_jacobian_expansion(&v, &w, t, &pts);
                let b = check_jacobian_expansion(&v, &w, t / 2.0, &pts);
                if a.max_residual > 0.0 {
                    worst_ratio = worst_ratio.max(b.max_residual / a.max_residual);
                }
            }
            vec![
                VerifyRow::new("J(0) residual", 0.0, worst.j0, 0.0, 1e-7),
                VerifyRow::new("J'(0) residual", 0.0, worst.j1, 0.0, 1e-7),
                VerifyRow::new("J''(0) residual", 0.0, worst.j2, 0.0, 1e-7),
                // halving t must shrink a third-order remainder by about 8
                VerifyRow::new("remainder ratio under t -> t/2", 0.125, worst_ratio, 0.0, 0.05),
            ]
        }
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<CommandOutput> {
    let rows = verify_rows(args)?;
    let pass = rows.iter().all(|r| r.pass);
    let flags = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}: |formula - oracle| = {:e} exceeds {:e}", r.quantity, r.abs_error, r.tolerance))
        .collect();
    let results = serde_json::json!({ "rows": rows, "pass": pass });
    let envelope = ReportEnvelope::new("verify", args, &results, flags)?;
    Ok(CommandOutput { envelope, csv: None, exit_code: if pass { exit::OK } else { exit::CHECK_FAILED } })
}

#[derive(Debug, Clone, Serialize)]
pub struct TorsionConstantRow {
    pub d: usize,
    pub q: f64,
    pub derived: f64,
    pub paper_sphere_area: f64,
    pub paper_ball_volume: f64,
    pub ratio_derived_to_paper_sphere_area: f64,
    pub ratio_derived_to_paper_ball_volume: f64,
    pub mismatch: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TorsionSeriesRow {
    pub k: usize,
    pub series: f64,
    pub oracle: f64,
    pub error_estimate: f64,
}

/// Paper-literal constants against the values recomputed from the radial solutions.
pub fn cmd_errata() -> Result<CommandOutput> {
    let mut flags = Vec::new();
    let mut constants = Vec::new();
    for &d in &[3usize, 4, 5, 7, 10] {
        for &q in &[1.5, 2.0, 3.0, 5.0] {
            let pr = ProblemParams::new(d, 2.0, q, 1.0)?;
            let derived = closed_forms::ball_torsion_derived(&pr);
            let ps = closed_forms::ball_torsion_paper(&pr, OmegaConvention::UnitSphereArea);
            let pb = closed_forms::ball_torsion_paper(&pr, OmegaConvention::UnitBallVolume);
            let mismatch = relative_difference(ps, derived) > closed_forms::TORSION_DISCREPANCY_TOL
                && relative_difference(pb, derived) > closed_forms::TORSION_DISCREPANCY_TOL;
            constants.push(TorsionConstantRow {
                d,
                q,
                derived,
                paper_sphere_area: ps,
                paper_ball_volume: pb,
                ratio_derived_to_paper_sphere_area: derived / ps,
                ratio_derived_to_paper_ball_volume: derived / pb,
                mismatch,
            });
        }
    }
    let n_mismatch = constants.iter().filter(|r| r.mismatch).count();
    if n_mismatch > 0 {
        flags.push(format!(
            "torsion constant: paper-literal value differs from the radial integral under both readings of omega_d ({n_mismatch}/{} cells)",
            constants.len()
        ));
    }

    let p3 = ProblemParams::new(3, 2.0, 2.0, 1.0)?;
    let classical = serde_json::json!({
        "torsion_d3_q2": {
            "classical": 4.0 * PI / 45.0,
            "derived": closed_forms::ball_torsion_derived(&p3),
            "paper_sphere_area": closed_forms::ball_torsion_paper(&p3, OmegaConvention::UnitSphereArea),
            "paper_ball_volume": closed_forms::ball_torsion_paper(&p3, OmegaConvention::UnitBallVolume),
        },
        "capacity_d3_p2": {
            "classical": 4.0 * PI,
            "paper_sphere_area": closed_forms::ball_capacity(&p3),
            "paper_ball_volume": closed_forms::ball_capacity(&p3) / unit_sphere_area(3) * closed_forms::unit_ball_volume(3),
        },
    });
    if relative_difference(closed_forms::ball_capacity(&p3), 4.0 * PI) > 1e-12 {
        flags.push("capacity constant differs from 4π at d=3, p=2".into());
    }

    // Verdict differences between the two coefficient sets on a coarse grid.
    let cfg = SweepConfig {
        d_list: vec![3, 4, 5, 6, 7, 8],
        p_grid: GridSpec::Range { min: None, max: None, step: 0.1 },
        q_grid: GridSpec::Range { min: Some(1.05), max: Some(10.0), step: 0.05 },
        mode: ModeSelection::Both,
        thresholds: false,
        ..Default::default()
    };
    let grid = classify_grid(&cfg)?;
    let mut by_cell: BTreeMap<(usize, u64, u64), [Option<Verdict>; 2]> = BTreeMap::new();
    for r in &grid.rows {
        let slot = if r.mode == EvaluationMode::Paper { 0 } else { 1 };
        by_cell.entry((r.d, r.p.to_bits(), r.q.to_bits())).or_default()[slot] = Some(r.verdict);
    }
    let mut differ_by_d: BTreeMap<usize, usize> = BTreeMap::new();
    let mut examples = Vec::new();
    for ((d, p, q), v) in &by_cell {
        if v[0] != v[1] {
            *differ_by_d.entry(*d).or_default() += 1;
            if examples.len() < 20 {
                examples.push(serde_json::json!({
                    "d": d, "p": f64::from_bits(*p), "q": f64::from_bits(*q),
                    "paper": v[0].map(Verdict::name), "derived": v[1].map(Verdict::name),
                }));
            }
        }
    }
    if !differ_by_d.is_empty() {
        let total: usize = differ_by_d.values().sum();
        flags.push(format!("product verdict: paper and derived coefficients disagree on {total} grid cell(s)"));
    }

    // Torsion series against the q = 2 collocation oracle at d = 3.
    let mut series_rows = Vec::new();
    for k in 2..=4 {
        let rho = zonal_mode(1.0, k);
        let cfg = SpectralSolveConfig::for_spectrum(&rho, DEFAULT_AMPLITUDE);
        let est = fd_second_derivative(
            normalized_family(&rho, |b| torsion_q2(b, &cfg).map(|s| s.value)),
            &cfg.fd_steps,
            None,
        )?;
        let series = formula_value(VerifyTarget::Torsion, k)?;
        series_rows.push(TorsionSeriesRow { k, series, oracle: est.value, error_estimate: est.error_estimate });
    }
    let bad = series_rows.iter().filter(|r| (r.series - r.oracle).abs() > 1e-3 * r.series.abs()).count();
    if bad > 0 {
        flags.push(format!(
            "torsion second variation: series differs from the d=3, q=2 oracle in {bad}/{} degree(s)",
            series_rows.len()
        ));
    }

    let results = serde_json::json!({
        "torsion_constants": constants,
        "classical_checks": classical,
        "verdict_differences": { "by_d": differ_by_d, "examples": examples },
        "torsion_series_vs_oracle": series_rows,
    });
    let envelope = ReportEnvelope::new("errata", &serde_json::json!({}), &results, flags)?;
    Ok(CommandOutput { envelope, csv: None, exit_code: exit::OK })
}

/// Caps the global thread pool at `SHAPEVAR_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SHAPEVAR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Input(format!("SHAPEVAR_THREADS={v:?} is not a positive integer")))?;
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(2.0), "2");
        assert_eq!(format_g17(-71.0 / 162.0 * 0.01), "-0.0043827160493827158");
        assert_eq!(format_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(format_g17(1.5e20), "1.5e+20");
        assert_eq!(format_g17(12345.678), "12345.678");
        assert_eq!(format_g17(f64::NAN), "null");
        assert_eq!(format_g17(0.0), "0");
    }

    #[test]
    fn mode_parsing() {
        let s = parse_modes("2:0.1, 3:-1:0.5", 1.0).unwrap();
        assert_eq!(s.coefficient(HarmonicIndex::zonal(2)), 0.1);
        assert_eq!(s.coefficient(HarmonicIndex::new(3, -1).unwrap()), 0.5);
        assert!(parse_modes("2", 1.0).is_err());
        assert!(parse_modes("2:1:0.1:4", 1.0).is_err());
        assert!(parse_modes("1:3:0.1", 1.0).is_err());
        assert!(parse_modes("", 1.0).is_err());
    }

    #[test]
    fn eval_example_and_determinism() {
        let args = EvalArgs { d: 3, p: 2.0, q: 2.0, radius: 1.0, modes: "2:0.1".into(), mode: ModeSelection::Both };
        let out = cmd_eval(&args).unwrap();
        let g = out.envelope.results["product"]["paper"]["second"].as_f64().unwrap();
        assert!((g + 71.0 / 162.0 * 0.01).abs() < 1e-15);
        assert_eq!(out.envelope.to_json(), cmd_eval(&args).unwrap().envelope.to_json());
    }

    #[test]
    fn eval_rejects_low_modes() {
        for (m, k) in [("0:0.1", 0), ("2:0.1,1:0.2", 1)] {
            let args = EvalArgs { d: 3, p: 2.0, q: 2.0, radius: 1.0, modes: m.into(), mode: ModeSelection::Paper };
            let err = cmd_eval(&args).unwrap_err();
            assert!(matches!(err, Error::Precondition { k: kk, .. } if kk == k));
            assert_eq!(exit_code_for(&err), exit::BAD_INPUT);
        }
    }

    #[test]
    fn nonfinite_values_are_flagged() {
        let env = ReportEnvelope::new("t", &serde_json::json!({}), &vec![1.0, f64::INFINITY], vec![]).unwrap();
        assert!(env.to_json().contains("[1,null]"));
        assert_eq!(env.flags.len(), 1);
    }

    #[test]
    fn grid_spec() {
        let g = GridSpec::Range { min: Some(1.0), max: Some(2.0), step: 0.25 };
        assert_eq!(g.values(0.0, 9.0).unwrap(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(GridSpec::Range { min: None, max: None, step: 0.0 }.values(0.0, 1.0).is_err());
    }

    #[test]
    fn classify_csv_header_is_stable() {
        let cfg = SweepConfig {
            d_list: vec![3],
            p_grid: GridSpec::List(vec![2.0]),
            q_grid: GridSpec::List(vec![2.0]),
            format: OutputFormat::Csv,
            thresholds: false,
            ..Default::default()
        };
        let out = cmd_classify(&cfg).unwrap();
        let csv = out.csv.unwrap();
        assert!(csv.starts_with("d,p,q,mode,verdict,Z2,Z_tail_sign,"));
        assert!(csv.contains("3,2,2,paper,local_max,"));
    }
}
