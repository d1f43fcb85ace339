//! End-to-end pipeline and report rendering.
//!
//! [`run_analysis`] drives parse, validate, decompose, reliability,
//! optional D-study, and confidence intervals from one [`RunConfig`], and
//! the resulting [`Report`] renders to text, JSON, or CSV. Rendering is a
//! pure function of the report, so repeated runs over the same inputs
//! produce byte-identical output.

use std::path::PathBuf;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::anova::{run_anova, AnovaError, AnovaTable};
use crate::confidence::{confidence_intervals, ConfidenceError, ConfidenceSet};
use crate::dataset::{validate_and_index, DataError, RawTable};
use crate::design::{parse_design, DesignError};
use crate::dstudy::{run_d_study, DStudyError, DStudyGrid, DStudyResult};
use crate::reliability::{g_coeffs_table, FacetRole, GCoeffResult, ReliabilityError, Role};

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    /// Aligned tables for terminals.
    Text,
    /// One JSON document with full-precision numbers.
    Json,
    /// CSV tables.
    Csv,
}

impl OutputFormat {
    /// Lowercase name: `text`, `json`, or `csv`.
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Text => "text",
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(OutputFormat::Text),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!(
                "unknown format `{other}` (expected text, json, or csv)"
            )),
        }
    }
}

/// Everything one analysis run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// CSV file with one observation per row.
    pub data_path: PathBuf,
    /// Design string, e.g. `person x (rater:item)`.
    pub design: String,
    /// Response column name.
    pub response: String,
    /// Object facet; `None` analyzes each non-fixed facet in turn.
    pub object: Option<String>,
    /// Explicit roles as `(facet, role)` pairs; roles are `object`,
    /// `random`, or `fixed`.
    pub roles: Option<Vec<(String, String)>>,
    /// Candidate level counts for a D-study.
    pub dstudy: Option<DStudyGrid>,
    /// Two-sided miss probability for confidence intervals.
    pub alpha: f64,
    /// Output format.
    pub format: OutputFormat,
    /// Output file or directory; `None` prints to standard output.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Config with defaults: every facet analyzed, alpha 0.05, text output.
    pub fn new(data_path: impl Into<PathBuf>, design: &str, response: &str) -> Self {
        RunConfig {
            data_path: data_path.into(),
            design: design.to_string(),
            response: response.to_string(),
            object: None,
            roles: None,
            dstudy: None,
            alpha: 0.05,
            format: OutputFormat::Text,
            out: None,
        }
    }
}

/// Any failure along the pipeline, tagged with a category and exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// The design string failed to parse or validate.
    #[error(transparent)]
    Design(#[from] DesignError),
    /// The data table failed to read or validate.
    #[error(transparent)]
    Data(#[from] DataError),
    /// The decomposition failed.
    #[error(transparent)]
    Anova(#[from] AnovaError),
    /// Role resolution failed.
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
    /// The D-study grid failed to expand.
    #[error(transparent)]
    DStudy(#[from] DStudyError),
    /// Confidence-interval inputs were invalid.
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    /// An invalid option combination.
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    /// Stable machine-readable category: `design`, `data`, `compute`, or
    /// `usage`.
    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Design(_) => "design",
            PipelineError::Data(_) => "data",
            PipelineError::Anova(_) => "compute",
            PipelineError::Reliability(_)
            | PipelineError::DStudy(_)
            | PipelineError::Confidence(_)
            | PipelineError::Usage(_) => "usage",
        }
    }

    /// Process exit code: 2 for design and usage problems, 3 for data
    /// problems, 4 for computation failures.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "design" | "usage" => 2,
            "data" => 3,
            _ => 4,
        }
    }
}

/// Echo of the configuration a report was produced from.
#[derive(Debug, Clone)]
pub struct ConfigEcho {
    /// Data file path as given.
    pub data: String,
    /// Design string as given.
    pub design: String,
    /// Canonical rendering of the parsed design.
    pub canonical_design: String,
    /// Response column as given.
    pub response: String,
    /// Interval miss probability.
    pub alpha: f64,
    /// Output format name.
    pub format: String,
    /// Explicit object facet, if any.
    pub object: Option<String>,
    /// Explicit roles, if any.
    pub roles: Option<Vec<(String, String)>>,
    /// D-study grid, if any.
    pub dstudy: Option<Vec<(String, Vec<usize>)>>,
}

/// Finished analysis: inputs echoed, all tables, and warnings.
#[derive(Debug, Clone)]
pub struct Report {
    config: ConfigEcho,
    anova: AnovaTable,
    g_coefficients: Vec<GCoeffResult>,
    d_study: Option<DStudyResult>,
    intervals: Vec<ConfidenceSet>,
    warnings: Vec<String>,
}

impl Report {
    /// Echo of the run configuration.
    pub fn config(&self) -> &ConfigEcho {
        &self.config
    }

    /// The decomposition table.
    pub fn anova(&self) -> &AnovaTable {
        &self.anova
    }

    /// Reliability results, one per analyzed object.
    pub fn g_coefficients(&self) -> &[GCoeffResult] {
        &self.g_coefficients
    }

    /// Projected scenarios, when a grid was given.
    pub fn d_study(&self) -> Option<&DStudyResult> {
        self.d_study.as_ref()
    }

    /// Confidence intervals, one set per analyzed object.
    pub fn intervals(&self) -> &[ConfidenceSet] {
        &self.intervals
    }

    /// Accumulated warnings in generation order.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Runs the full pipeline for one configuration.
pub fn run_analysis(cfg: &RunConfig) -> Result<Report, PipelineError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(PipelineError::Usage(format!(
            "--alpha must sit inside (0, 1), got {}",
            cfg.alpha
        )));
    }
    let design = parse_design(&cfg.design)?;
    let raw = RawTable::from_csv_path(&cfg.data_path, &cfg.response)?;
    let data = validate_and_index(&raw, &design)?;
    let anova = run_anova(&data)?;

    let k = design.facets().len();
    let mut declared: Vec<Option<Role>> = vec![None; k];
    if let Some(roles) = &cfg.roles {
        for (name, role_str) in roles {
            let f = design.facet_index(name).ok_or_else(|| {
                PipelineError::Usage(format!("--roles names unknown facet `{name}`"))
            })?;
            let role = Role::parse(role_str).ok_or_else(|| {
                PipelineError::Usage(format!(
                    "--roles gives facet `{name}` invalid role `{role_str}` (expected object, random, or fixed)"
                ))
            })?;
            if declared[f].is_some() {
                return Err(PipelineError::Usage(format!(
                    "--roles lists facet `{name}` twice"
                )));
            }
            declared[f] = Some(role);
        }
    }
    let declared_objects: Vec<usize> = (0..k)
        .filter(|&f| declared[f] == Some(Role::Object))
        .collect();
    if declared_objects.len() > 1 {
        return Err(PipelineError::Usage(
            "--roles declares more than one object facet".to_string(),
        ));
    }
    let object = match &cfg.object {
        Some(name) => {
            let f = design.facet_index(name).ok_or_else(|| {
                PipelineError::Usage(format!("--object names unknown facet `{name}`"))
            })?;
            if declared[f] == Some(Role::Fixed) {
                return Err(PipelineError::Usage(format!(
                    "facet `{name}` cannot be both fixed and the object"
                )));
            }
            if let Some(&o) = declared_objects.first() {
                if o != f {
                    return Err(PipelineError::Usage(
                        "--object and --roles disagree about the object facet".to_string(),
                    ));
                }
            }
            Some(f)
        }
        None => declared_objects.first().copied(),
    };

    let build_roles = |obj: usize| -> Vec<FacetRole> {
        (0..k)
            .map(|f| {
                let role = if f == obj {
                    Role::Object
                } else {
                    match declared[f] {
                        Some(Role::Fixed) => Role::Fixed,
                        _ => Role::Random,
                    }
                };
                FacetRole::new(&design.facets()[f].name, role)
            })
            .collect()
    };
    let analyses: Vec<Vec<FacetRole>> = match object {
        Some(obj) => vec![build_roles(obj)],
        None => {
            let candidates: Vec<usize> = (0..k)
                .filter(|&f| declared[f] != Some(Role::Fixed))
                .collect();
            if candidates.is_empty() {
                return Err(PipelineError::Usage(
                    "every facet is fixed; nothing can be the object".to_string(),
                ));
            }
            candidates.into_iter().map(build_roles).collect()
        }
    };

    let g_coefficients = g_coeffs_table(&anova, &analyses)?;

    let mut warnings = Vec::new();
    for row in anova.rows() {
        if row.sigma2 < 0.0 {
            warnings.push(format!(
                "variance component `{}` estimated negative ({}); clamped to zero where variances combine",
                row.component.label(&design),
                format_sig(row.sigma2),
            ));
        }
    }

    let d_study = match &cfg.dstudy {
        Some(grid) => {
            if object.is_none() {
                warnings.push(format!(
                    "d-study object defaulted to `{}`; pass --object to choose another facet",
                    design.facets()[0].name
                ));
            }
            let d_obj = g_coefficients[0].object.clone();
            if grid.get(&d_obj).is_some() {
                warnings.push(format!(
                    "level counts for object facet `{d_obj}` do not affect the coefficients"
                ));
            }
            for (f, facet) in design.facets().iter().enumerate() {
                if facet.name != d_obj && grid.get(&facet.name).is_none() {
                    warnings.push(format!(
                        "d-study grid omits `{}`; held at its observed count {}",
                        facet.name,
                        anova.levels().count(f)
                    ));
                }
            }
            Some(run_d_study(&anova, grid, &analyses[0])?)
        }
        None => None,
    };

    let mut intervals = Vec::with_capacity(analyses.len());
    for analysis in &analyses {
        let obj_name = analysis
            .iter()
            .find(|r| r.role == Role::Object)
            .map(|r| r.facet.clone())
            .expect("every analysis has an object");
        intervals.push(confidence_intervals(&data, &anova, &obj_name, cfg.alpha)?);
    }

    let config = ConfigEcho {
        data: cfg.data_path.display().to_string(),
        design: cfg.design.clone(),
        canonical_design: design.canonical(),
        response: cfg.response.clone(),
        alpha: cfg.alpha,
        format: cfg.format.as_str().to_string(),
        object: cfg.object.clone(),
        roles: cfg.roles.clone(),
        dstudy: cfg.dstudy.as_ref().map(|g| g.entries().to_vec()),
    };
    Ok(Report {
        config,
        anova,
        g_coefficients,
        d_study,
        intervals,
        warnings,
    })
}

/// Formats a number to 6 significant digits.
///
/// Zero renders as `0`; magnitudes outside `[1e-4, 1e15)` switch to
/// scientific notation.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let mant = format!("{:.5e}", x.abs());
    let (digit_part, exp_part) = mant.split_once('e').expect("exponent format");
    let exp: i32 = exp_part.parse().expect("numeric exponent");
    let digits: String = digit_part.chars().filter(char::is_ascii_digit).collect();
    debug_assert_eq!(digits.len(), 6);
    let body = if (-4..15).contains(&exp) {
        if exp >= 5 {
            format!("{digits}{}", "0".repeat(exp as usize - 5))
        } else if exp >= 0 {
            let (int_part, frac) = digits.split_at(exp as usize + 1);
            format!("{int_part}.{frac}")
        } else {
            format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
        }
    } else {
        format!("{}.{}e{}", &digits[..1], &digits[1..], exp)
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

fn opt_coeff(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_else(|| "undefined".to_string())
}

fn aligned_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let emit = |cells: &[String], out: &mut String| {
        let mut line = String::new();
        for (c, cell) in cells.iter().enumerate() {
            line.push_str(cell);
            if c + 1 < cols {
                let pad = widths[c] - cell.chars().count() + 2;
                line.push_str(&" ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    emit(headers, &mut out);
    for row in rows {
        emit(row, &mut out);
    }
    out
}

fn section(title: &str) -> String {
    format!("{title}\n{}\n", "-".repeat(title.chars().count()))
}

impl Report {
    /// Renders the report in the requested format.
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Text => self.to_text(),
            OutputFormat::Json => {
                let mut s =
                    serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
                s.push('\n');
                s
            }
            OutputFormat::Csv => {
                let mut out = String::new();
                for (name, body) in self.to_csv_tables() {
                    out.push_str(&name);
                    out.push('\n');
                    out.push_str(&body);
                    out.push('\n');
                }
                out
            }
        }
    }

    /// Renders aligned text tables.
    pub fn to_text(&self) -> String {
        let design = self.anova.design();
        let mut out = String::new();
        out.push_str("Generalizability Analysis\n");
        out.push_str("=========================\n");
        out.push_str(&format!("Design: {}\n", self.config.canonical_design));
        let level_list = design
            .facets()
            .iter()
            .enumerate()
            .map(|(f, facet)| format!("{}={}", facet.name, self.anova.levels().count(f)))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("Levels: {level_list}\n"));
        out.push_str(&format!("Data: {}\n", self.config.data));
        out.push_str(&format!(
            "Response: {} ({} observations)\n",
            self.config.response,
            self.anova.levels().n_cells()
        ));
        if let Some(roles) = &self.config.roles {
            let echo = roles
                .iter()
                .map(|(f, r)| format!("{f}={r}"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!("Roles: {echo}\n"));
        }
        out.push_str(&format!(
            "Grand mean: {}\n\n",
            format_sig(self.anova.grand_mean())
        ));

        out.push_str(&section("ANOVA"));
        let headers: Vec<String> = ["Source", "df", "T", "SS", "MS", "Variance"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut any_negative = false;
        let rows: Vec<Vec<String>> = self
            .anova
            .rows()
            .iter()
            .map(|r| {
                let mut var = format_sig(r.sigma2);
                if r.sigma2 < 0.0 {
                    var.push('*');
                    any_negative = true;
                }
                vec![
                    r.component.label(design),
                    r.df.to_string(),
                    format_sig(r.t),
                    format_sig(r.ss),
                    format_sig(r.ms),
                    var,
                ]
            })
            .collect();
        out.push_str(&aligned_table(&headers, &rows));
        out.push_str(&format!(
            "Grand-mean T: {}\n",
            format_sig(self.anova.t_grand())
        ));
        if any_negative {
            out.push_str("* negative estimate; clamped to zero where variances combine\n");
        }
        out.push('\n');

        out.push_str(&section("Reliability"));
        let headers: Vec<String> = ["Object", "Tau", "Delta", "AbsDelta", "E-rho2", "Phi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = self
            .g_coefficients
            .iter()
            .map(|g| {
                vec![
                    g.object.clone(),
                    format_sig(g.tau),
                    format_sig(g.delta),
                    format_sig(g.delta_abs),
                    opt_coeff(g.e_rho2),
                    opt_coeff(g.phi),
                ]
            })
            .collect();
        out.push_str(&aligned_table(&headers, &rows));
        out.push('\n');

        if let Some(d) = &self.d_study {
            out.push_str(&section(&format!("D-Study (object: {})", d.object)));
            let mut headers: Vec<String> = design
                .facets()
                .iter()
                .map(|f| format!("n({})", f.name))
                .collect();
            headers.extend(
                ["Tau", "Delta", "AbsDelta", "E-rho2", "Phi"]
                    .iter()
                    .map(|s| s.to_string()),
            );
            let rows: Vec<Vec<String>> = d
                .scenarios
                .iter()
                .map(|s| {
                    let mut row: Vec<String> = s.counts.iter().map(|c| c.to_string()).collect();
                    row.push(format_sig(s.result.tau));
                    row.push(format_sig(s.result.delta));
                    row.push(format_sig(s.result.delta_abs));
                    row.push(opt_coeff(s.result.e_rho2));
                    row.push(opt_coeff(s.result.phi));
                    row
                })
                .collect();
            out.push_str(&aligned_table(&headers, &rows));
            out.push('\n');
        }

        for set in &self.intervals {
            out.push_str(&section(&format!(
                "Confidence Intervals (object: {}, alpha = {}, half-width = {})",
                set.object,
                set.alpha,
                format_sig(set.half_width)
            )));
            let headers: Vec<String> = ["Level", "Mean", "Lower", "Upper"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let rows: Vec<Vec<String>> = set
                .intervals
                .iter()
                .map(|ci| {
                    vec![
                        ci.level.clone(),
                        format_sig(ci.mean),
                        format_sig(ci.lower),
                        format_sig(ci.upper),
                    ]
                })
                .collect();
            out.push_str(&aligned_table(&headers, &rows));
            out.push('\n');
        }

        if !self.warnings.is_empty() {
            out.push_str(&section("Warnings"));
            for w in &self.warnings {
                out.push_str(&format!("- {w}\n"));
            }
        }
        out
    }

    /// Renders one JSON document with full-precision numbers.
    pub fn to_json(&self) -> Value {
        let design = self.anova.design();
        let mut levels = Map::new();
        for (f, facet) in design.facets().iter().enumerate() {
            levels.insert(facet.name.clone(), json!(self.anova.levels().count(f)));
        }
        let anova_rows: Vec<Value> = self
            .anova
            .rows()
            .iter()
            .map(|r| {
                json!({
                    "component": r.component.label(design),
                    "df": r.df,
                    "t": r.t,
                    "ss": r.ss,
                    "ms": r.ms,
                    "sigma2": r.sigma2,
                })
            })
            .collect();
        let g_rows: Vec<Value> = self
            .g_coefficients
            .iter()
            .map(|g| {
                json!({
                    "object": g.object,
                    "tau": g.tau,
                    "delta": g.delta,
                    "delta_abs": g.delta_abs,
                    "e_rho2": g.e_rho2,
                    "phi": g.phi,
                    "clamped": g.clamped,
                })
            })
            .collect();
        let ci_sets: Vec<Value> = self
            .intervals
            .iter()
            .map(|set| {
                json!({
                    "object": set.object,
                    "alpha": set.alpha,
                    "half_width": set.half_width,
                    "mean_variance": set.mean_variance,
                    "intervals": set
                        .intervals
                        .iter()
                        .map(|ci| {
                            json!({
                                "level": ci.level,
                                "mean": ci.mean,
                                "lower": ci.lower,
                                "upper": ci.upper,
                            })
                        })
                        .collect::<Vec<Value>>(),
                })
            })
            .collect();
        let mut roles_echo = Value::Null;
        if let Some(roles) = &self.config.roles {
            let mut m = Map::new();
            for (f, r) in roles {
                m.insert(f.clone(), json!(r));
            }
            roles_echo = Value::Object(m);
        }
        let mut dstudy_echo = Value::Null;
        if let Some(entries) = &self.config.dstudy {
            let mut m = Map::new();
            for (f, counts) in entries {
                m.insert(f.clone(), json!(counts));
            }
            dstudy_echo = Value::Object(m);
        }
        let mut root = Map::new();
        root.insert(
            "config_echo".to_string(),
            json!({
                "data": self.config.data,
                "design": self.config.design,
                "canonical_design": self.config.canonical_design,
                "response": self.config.response,
                "alpha": self.config.alpha,
                "format": self.config.format,
                "object": self.config.object,
                "roles": roles_echo,
                "dstudy": dstudy_echo,
            }),
        );
        root.insert(
            "anova".to_string(),
            json!({
                "grand_mean": self.anova.grand_mean(),
                "t_grand": self.anova.t_grand(),
                "levels": Value::Object(levels),
                "rows": anova_rows,
            }),
        );
        root.insert("g_coefficients".to_string(), Value::Array(g_rows));
        if let Some(d) = &self.d_study {
            let scenarios: Vec<Value> = d
                .scenarios
                .iter()
                .map(|s| {
                    let mut counts = Map::new();
                    for (f, facet) in design.facets().iter().enumerate() {
                        counts.insert(facet.name.clone(), json!(s.counts[f]));
                    }
                    json!({
                        "levels": Value::Object(counts),
                        "tau": s.result.tau,
                        "delta": s.result.delta,
                        "delta_abs": s.result.delta_abs,
                        "e_rho2": s.result.e_rho2,
                        "phi": s.result.phi,
                    })
                })
                .collect();
            root.insert(
                "d_study".to_string(),
                json!({ "object": d.object, "scenarios": scenarios }),
            );
        }
        root.insert("confidence_intervals".to_string(), Value::Array(ci_sets));
        root.insert("warnings".to_string(), json!(self.warnings));
        Value::Object(root)
    }

    /// Renders named CSV tables with full-precision numbers.
    pub fn to_csv_tables(&self) -> Vec<(String, String)> {
        let design = self.anova.design();
        let mut tables = Vec::new();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["component", "df", "t", "ss", "ms", "sigma2"])
            .expect("csv record");
        for r in self.anova.rows() {
            w.write_record([
                r.component.label(design),
                r.df.to_string(),
                r.t.to_string(),
                r.ss.to_string(),
                r.ms.to_string(),
                r.sigma2.to_string(),
            ])
            .expect("csv record");
        }
        tables.push(("anova".to_string(), finish_csv(w)));

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "object",
            "tau",
            "delta",
            "delta_abs",
            "e_rho2",
            "phi",
            "clamped",
        ])
        .expect("csv record");
        for g in &self.g_coefficients {
            w.write_record([
                g.object.clone(),
                g.tau.to_string(),
                g.delta.to_string(),
                g.delta_abs.to_string(),
                opt_csv(g.e_rho2),
                opt_csv(g.phi),
                g.clamped.join("; "),
            ])
            .expect("csv record");
        }
        tables.push(("g_coefficients".to_string(), finish_csv(w)));

        if let Some(d) = &self.d_study {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header: Vec<String> = design
                .facets()
                .iter()
                .map(|f| format!("n_{}", f.name))
                .collect();
            header.extend(
                ["tau", "delta", "delta_abs", "e_rho2", "phi"]
                    .iter()
                    .map(|s| s.to_string()),
            );
            w.write_record(&header).expect("csv record");
            for s in &d.scenarios {
                let mut row: Vec<String> = s.counts.iter().map(|c| c.to_string()).collect();
                row.push(s.result.tau.to_string());
                row.push(s.result.delta.to_string());
                row.push(s.result.delta_abs.to_string());
                row.push(opt_csv(s.result.e_rho2));
                row.push(opt_csv(s.result.phi));
                w.write_record(&row).expect("csv record");
            }
            tables.push(("d_study".to_string(), finish_csv(w)));
        }

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "object",
            "level",
            "mean",
            "lower",
            "upper",
            "half_width",
            "alpha",
        ])
        .expect("csv record");
        for set in &self.intervals {
            for ci in &set.intervals {
                w.write_record([
                    set.object.clone(),
                    ci.level.clone(),
                    ci.mean.to_string(),
                    ci.lower.to_string(),
                    ci.upper.to_string(),
                    set.half_width.to_string(),
                    set.alpha.to_string(),
                ])
                .expect("csv record");
            }
        }
        tables.push(("confidence_intervals".to_string(), finish_csv(w)));

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["warning"]).expect("csv record");
        for warning in &self.warnings {
            w.write_record([warning.clone()]).expect("csv record");
        }
        tables.push(("warnings".to_string(), finish_csv(w)));

        tables
    }
}

fn opt_csv(v: Option<f64>) -> String {
    v.map(|x| x.to_string())
        .unwrap_or_else(|| "undefined".to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv is utf-8")
}
