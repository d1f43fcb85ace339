use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gtheory::anova::normalize_label;
use gtheory::design::parse_design;
use gtheory::oracle::{simulate, write_long_csv, TrueComponents};
use gtheory::{enumerate_components, run_analysis, DStudyGrid, OutputFormat, Report, RunConfig};

#[derive(Parser)]
#[command(
    name = "gtheory",
    version,
    about = "Reliability analysis for balanced measurement designs",
    subcommand_negates_reqs = true
)]
struct Cli {
    /// CSV data file, one observation per row
    #[arg(long, required = true)]
    data: Option<PathBuf>,

    /// Design string, e.g. "person x (rater:item)"
    #[arg(long, required = true)]
    design: Option<String>,

    /// Response column name
    #[arg(long, required = true)]
    response: Option<String>,

    /// Facet whose levels are the objects of measurement
    #[arg(long)]
    object: Option<String>,

    /// Facet roles as JSON, e.g. '{"person":"object","rater":"fixed"}'
    #[arg(long)]
    roles: Option<String>,

    /// Candidate level counts as JSON, e.g. '{"item":[4,8,16]}'
    #[arg(long)]
    dstudy: Option<String>,

    /// Two-sided miss probability for confidence intervals
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Output format: text, json, or csv
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: OutputFormat,

    /// Output file, or an existing directory for one file per table
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic balanced dataset with known variance components
    #[command(hide = true)]
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Design string
    #[arg(long)]
    design: String,

    /// Level counts per facet in design order, comma separated
    #[arg(long)]
    levels: String,

    /// True variances as JSON keyed by component label
    #[arg(long)]
    components: String,

    /// Population grand mean
    #[arg(long, default_value_t = 0.0)]
    mean: f64,

    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Response column name
    #[arg(long, default_value = "score")]
    response: String,

    /// Output CSV path; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse()
}

fn one_line(msg: &str) -> String {
    msg.lines().collect::<Vec<_>>().join("; ")
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("ERROR:usage: {}", one_line(msg));
    ExitCode::from(2)
}

fn io_failure(err: &io::Error) -> ExitCode {
    eprintln!("ERROR:io: {err}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let line = err
                .to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            return usage(&line);
        }
    };
    match cli.command {
        Some(Command::Simulate(args)) => run_simulate(&args),
        None => run(cli),
    }
}

fn run(cli: Cli) -> ExitCode {
    let roles = match cli.roles.as_deref().map(parse_roles).transpose() {
        Ok(r) => r,
        Err(msg) => return usage(&msg),
    };
    let dstudy = match cli.dstudy.as_deref() {
        Some(src) => {
            let value: serde_json::Value = match serde_json::from_str(src) {
                Ok(v) => v,
                Err(err) => return usage(&format!("--dstudy is not valid JSON: {err}")),
            };
            match DStudyGrid::from_json(&value) {
                Ok(grid) => Some(grid),
                Err(err) => return usage(&err.to_string()),
            }
        }
        None => None,
    };
    let cfg = RunConfig {
        data_path: cli.data.expect("required by clap"),
        design: cli.design.expect("required by clap"),
        response: cli.response.expect("required by clap"),
        object: cli.object,
        roles,
        dstudy,
        alpha: cli.alpha,
        format: cli.format,
        out: cli.out.clone(),
    };
    let report = match run_analysis(&cfg) {
        Ok(report) => report,
        Err(err) => {
            eprintln!("ERROR:{}: {}", err.category(), one_line(&err.to_string()));
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match emit(&report, cli.format, cli.out.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => io_failure(&err),
    }
}

fn parse_roles(src: &str) -> Result<Vec<(String, String)>, String> {
    let value: serde_json::Value =
        serde_json::from_str(src).map_err(|e| format!("--roles is not valid JSON: {e}"))?;
    let map = value
        .as_object()
        .ok_or("--roles expects a JSON object mapping facet to role")?;
    let mut out = Vec::new();
    for (facet, role) in map {
        let role = role
            .as_str()
            .ok_or_else(|| format!("--roles role for `{facet}` must be a string"))?;
        out.push((facet.clone(), role.to_string()));
    }
    Ok(out)
}

fn emit(report: &Report, format: OutputFormat, out: Option<&Path>) -> io::Result<()> {
    match out {
        None => {
            print!("{}", report.render(format));
            Ok(())
        }
        Some(dir) if dir.is_dir() => {
            match format {
                OutputFormat::Csv => {
                    for (name, body) in report.to_csv_tables() {
                        fs::write(dir.join(format!("{name}.csv")), body)?;
                    }
                }
                OutputFormat::Text => fs::write(dir.join("report.txt"), report.render(format))?,
                OutputFormat::Json => fs::write(dir.join("report.json"), report.render(format))?,
            }
            Ok(())
        }
        Some(path) => fs::write(path, report.render(format)),
    }
}

fn run_simulate(args: &SimulateArgs) -> ExitCode {
    let design = match parse_design(&args.design) {
        Ok(d) => d,
        Err(err) => {
            eprintln!("ERROR:design: {err}");
            return ExitCode::from(2);
        }
    };
    let mut counts = Vec::new();
    for tok in args.levels.split(',') {
        match tok.trim().parse::<usize>() {
            Ok(n) if n > 0 => counts.push(n),
            _ => return usage(&format!("--levels expects positive integers, got `{tok}`")),
        }
    }
    if counts.len() != design.facets().len() {
        return usage(&format!(
            "--levels gives {} counts for {} facets",
            counts.len(),
            design.facets().len()
        ));
    }
    let value: serde_json::Value = match serde_json::from_str(&args.components) {
        Ok(v) => v,
        Err(err) => return usage(&format!("--components is not valid JSON: {err}")),
    };
    let Some(map) = value.as_object() else {
        return usage("--components must be a JSON object keyed by component label");
    };
    let known: Vec<String> = enumerate_components(&design)
        .iter()
        .map(|c| normalize_label(&c.label(&design)))
        .collect();
    let mut named = Vec::new();
    for (label, v) in map {
        if !known.contains(&normalize_label(label)) {
            return usage(&format!("--components names unknown component `{label}`"));
        }
        match v.as_f64() {
            Some(var) if var.is_finite() && var >= 0.0 => named.push((label.as_str(), var)),
            _ => {
                return usage(&format!(
                    "--components variance for `{label}` must be a nonnegative number"
                ))
            }
        }
    }
    let truth = TrueComponents::from_labels(&design, args.mean, &named);
    let data = simulate(&design, &counts, &truth, args.seed);
    let written = match &args.out {
        Some(path) => match fs::File::create(path) {
            Ok(file) => write_long_csv(&data, &args.response, file),
            Err(err) => return io_failure(&err),
        },
        None => write_long_csv(&data, &args.response, io::stdout().lock()),
    };
    match written {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("ERROR:io: {err}");
            ExitCode::FAILURE
        }
    }
}
