mod model_file;
mod report;

use clap::{Parser, Subcommand};
use model_file::{LoadedModel, ModelFileError};
use num_complex::Complex64 as C;
use qchern::chern::{chern_current, chern_current_outside, rho_decay_samples, ChernError};
use qchern::config::Tolerances;
use qchern::quadrature::{radial_rule, QuadratureError, RadialKind};
use qchern::verify::{self, Suite};
use qchern::zeta::{build_zeta_extension, residue_limits, residue_report, rez_decay_samples, ZetaError, ZetaExtension, ZetaPath};
use report::{num, ErrorReport};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "qchern", version, about = "Chern currents of superconnections and their zeta-function residues")]
struct Cli {
    /// Worker threads for quadrature (results do not depend on this).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Include wall-clock timings in reports (breaks byte-identical output).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate π*η ∧ tr_s exp ∇²_L over the total space.
    Chern {
        /// Built-in model name or path to a TOML model file.
        model: String,
        #[arg(long, default_value = "one")]
        eta: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residues of Γ(z)I(z, η) at each cutoff radius R.
    Residues {
        /// Built-in model name, `toy-gauss`, or path to a TOML model file.
        model: String,
        #[arg(long, default_value = "one")]
        eta: String,
        /// Comma-separated cutoff radii.
        #[arg(long = "R", value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        zmax: Option<f64>,
        /// Use the literal sign convention for the toy kernel.
        #[arg(long)]
        literal: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded verification suite: algebra, chern, zeta, models or all.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a CSV scan for plotting: rho-decay or rez-decay.
    Table {
        model: String,
        #[arg(long)]
        scan: String,
        #[arg(long, default_value = "one")]
        eta: String,
        /// Cutoff radius for rez-decay; decay in Re z needs R² above the scalar curvature coefficient.
        #[arg(long = "R", default_value_t = 2.0)]
        r: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Load(#[from] ModelFileError),
    #[error("unknown test form `{0}`")]
    UnknownEta(String),
    #[error("unknown scan `{0}` (expected rho-decay or rez-decay)")]
    BadScan(String),
    #[error("unknown suite `{0}` (expected algebra, chern, zeta, models or all)")]
    BadSuite(String),
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Compute { stage: &'static str, quadrature: bool, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    #[error("{failed} of {total} checks failed")]
    VerifyFailed { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Compute { .. } => 3,
            CliError::VerifyFailed { .. } => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Load(ModelFileError::UnknownModel(_)) => "unknown_model",
            CliError::Load(_) => "model_file",
            CliError::UnknownEta(_) => "unknown_eta",
            CliError::BadScan(_) => "bad_scan",
            CliError::BadSuite(_) => "bad_suite",
            CliError::Usage(_) => "usage",
            CliError::Compute { quadrature: true, .. } => "quadrature_failure",
            CliError::Compute { .. } => "computation_failure",
            CliError::Output { .. } => "output",
            CliError::VerifyFailed { .. } => "verify_failed",
        }
    }

    fn stage(&self) -> &'static str {
        match self {
            CliError::Load(_) | CliError::UnknownEta(_) => "load",
            CliError::BadScan(_) | CliError::BadSuite(_) | CliError::Usage(_) => "arguments",
            CliError::Compute { stage, .. } => stage,
            CliError::Output { .. } => "output",
            CliError::VerifyFailed { .. } => "verify",
        }
    }

    fn chern(e: ChernError) -> Self {
        let quadrature = matches!(e, ChernError::QuadratureFailure(_));
        CliError::Compute { stage: if quadrature { "quadrature" } else { "chern" }, quadrature, message: e.to_string() }
    }

    fn zeta(e: ZetaError) -> Self {
        let quadrature = matches!(e, ZetaError::Quadrature(_) | ZetaError::Chern(ChernError::QuadratureFailure(_)));
        CliError::Compute { stage: if quadrature { "quadrature" } else { "zeta" }, quadrature, message: e.to_string() }
    }

    fn quadrature(e: QuadratureError) -> Self {
        CliError::Compute { stage: "quadrature", quadrature: true, message: e.to_string() }
    }
}

const TOY_GAUSS: &str = "toy-gauss";

fn load_model(reference: &str) -> Result<LoadedModel, CliError> {
    let path = Path::new(reference);
    if reference.ends_with(".toml") || path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| ModelFileError::Io(format!("{reference}: {e}")))?;
        Ok(model_file::load(&text)?)
    } else {
        Ok(LoadedModel::builtin(reference)?)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Output { path: p.display().to_string(), message: e.to_string() }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn timing(enabled: bool, t0: Instant) -> Value {
    if enabled {
        json!({ "seconds": num(t0.elapsed().as_secs_f64()) })
    } else {
        Value::Null
    }
}

fn cmd_chern(cli: &Cli, model: &str, eta: &str, out: Option<&Path>) -> Result<(), CliError> {
    let t0 = Instant::now();
    if model == TOY_GAUSS {
        return Err(CliError::Usage("toy-gauss is a scalar kernel without a Chern current; use `residues`".into()));
    }
    let lm = load_model(model)?;
    let form = lm.model.eta(eta).map_err(|_| CliError::UnknownEta(eta.to_string()))?;
    let est = chern_current(&lm.model, &form.form, lm.quad).map_err(CliError::chern)?;
    let doc = report::report_document(report::ReportFields {
        model: &lm.model.name,
        eta,
        r: None,
        lhs: Some((est.value, est.error)),
        residues: None,
        extrapolated_limit: None,
        quad: &lm.quad,
        zeta: &lm.zeta,
        timing: timing(cli.timing, t0),
    });
    write_output(out, &report::to_string(&doc))
}

fn cmd_residues(
    cli: &Cli,
    model: &str,
    eta: &str,
    radii: Option<&[f64]>,
    zmax: Option<f64>,
    literal: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let t0 = Instant::now();
    let (name, lm, ext) = if model == TOY_GAUSS {
        if eta != "one" {
            return Err(CliError::UnknownEta(eta.to_string()));
        }
        let lm = LoadedModel::builtin("toy-circle")?;
        (TOY_GAUSS.to_string(), lm, ZetaExtension::toy_gauss(literal))
    } else {
        let lm = load_model(model)?;
        let form = &lm.model.eta(eta).map_err(|_| CliError::UnknownEta(eta.to_string()))?.form;
        let ext = match lm.path {
            Some(p) => build_zeta_extension(&lm.model, form, p, lm.zeta),
            None => build_zeta_extension(&lm.model, form, ZetaPath::Scalar, lm.zeta).or_else(|e| match e {
                ZetaError::NoScalarSplit(_) => build_zeta_extension(&lm.model, form, ZetaPath::Contour, lm.zeta),
                e => Err(e),
            }),
        }
        .map_err(CliError::zeta)?;
        (lm.model.name.clone(), lm, ext)
    };
    let radii: Vec<f64> = radii.map(<[f64]>::to_vec).or_else(|| lm.radii.clone()).unwrap_or_else(|| vec![1.0, 0.5, 0.25]);
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(CliError::Usage(format!("radii must be positive and finite, got {radii:?}")));
    }
    let zmax = zmax.unwrap_or(lm.zmax);
    if !(zmax >= 0.0 && zmax.is_finite()) {
        return Err(CliError::Usage(format!("zmax must be non-negative, got {zmax}")));
    }

    let lhs: Vec<(C, f64)> = if model == TOY_GAUSS {
        let sign = if literal { -1.0 } else { 1.0 };
        radii
            .iter()
            .map(|&r| {
                let coarse = radial_rule(RadialKind::Gaussian { from: r }, 1)?.integrate(|p| (-p[0] * p[0]).exp() * p[0]);
                let fine = radial_rule(RadialKind::Gaussian { from: r }, 2)?.integrate(|p| (-p[0] * p[0]).exp() * p[0]);
                Ok((C::new(sign * fine, 0.0), (fine - coarse).abs()))
            })
            .collect::<Result<_, QuadratureError>>()
            .map_err(CliError::quadrature)?
    } else {
        let form = &lm.model.eta(eta).map_err(|_| CliError::UnknownEta(eta.to_string()))?.form;
        chern_current_outside(&lm.model, form, &radii, lm.quad)
            .map_err(CliError::chern)?
            .into_iter()
            .map(|e| (e.value, e.error))
            .collect()
    };

    let limit = if radii.len() >= 2 {
        let mut sorted = radii.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup();
        let rep = residue_limits(&ext, &sorted, zmax, lm.quad.rel_tol).map_err(CliError::zeta)?;
        Some((rep.limit_of_sums, rep.extrapolation_error))
    } else {
        None
    };

    let mut docs = Vec::new();
    for (&r, l) in radii.iter().zip(lhs) {
        let rep = residue_report(&ext, r, zmax).map_err(CliError::zeta)?;
        docs.push(report::report_document(report::ReportFields {
            model: &name,
            eta,
            r: Some(r),
            lhs: Some(l),
            residues: Some(&rep),
            extrapolated_limit: limit,
            quad: &lm.quad,
            zeta: &lm.zeta,
            timing: timing(cli.timing, t0),
        }));
    }
    write_output(out, &report::to_string(&Value::Array(docs)))
}

fn cmd_verify(cli: &Cli, suite: &str, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let t0 = Instant::now();
    let suites: Vec<Suite> = match suite {
        "all" => Suite::ALL.to_vec(),
        s => vec![*Suite::ALL.iter().find(|x| x.as_str() == s).ok_or_else(|| CliError::BadSuite(s.to_string()))?],
    };
    let tol = Tolerances::default();
    let checks: Vec<_> = suites.iter().flat_map(|s| verify::run(*s, seed, &tol)).collect();
    eprint!("{}", report::verify_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    let err = (failed > 0).then(|| CliError::VerifyFailed { failed, total: checks.len() });
    let mut doc = json!({
        "suite": suite,
        "seed": seed,
        "passed": failed == 0,
        "checks": checks.iter().map(report::check_json).collect::<Vec<_>>(),
        "timing": timing(cli.timing, t0),
    });
    if let Some(e) = &err {
        let obj = doc.as_object_mut().expect("object");
        obj.insert("error".into(), json!(e.kind()));
        obj.insert("stage".into(), json!(format!("verify:{}", failing_suites(&checks))));
        obj.insert("message".into(), json!(e.to_string()));
    }
    write_output(out, &report::to_string(&doc))?;
    err.map_or(Ok(()), Err)
}

fn failing_suites(checks: &[verify::Check]) -> String {
    let mut names: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.suite.as_str()).collect();
    names.dedup();
    names.join(",")
}

fn cmd_table(model: &str, scan: &str, eta: &str, r: f64, out: Option<&Path>) -> Result<(), CliError> {
    if scan != "rho-decay" && scan != "rez-decay" {
        return Err(CliError::BadScan(scan.to_string()));
    }
    let lm = load_model(model)?;
    let (header, rows): ([&str; 2], Vec<(f64, f64)>) = if scan == "rho-decay" {
        let rhos: Vec<f64> = (0..16).map(|i| 1.0 + 0.25 * i as f64).collect();
        (["rho", "log_norm"], rho_decay_samples(&lm.model, &rhos).map_err(CliError::chern)?)
    } else {
        let form = &lm.model.eta(eta).map_err(|_| CliError::UnknownEta(eta.to_string()))?.form;
        let ext = build_zeta_extension(&lm.model, form, lm.path.unwrap_or(ZetaPath::Scalar), lm.zeta).map_err(CliError::zeta)?;
        if ext.is_empty() {
            return Err(CliError::Usage(format!("I(z, {eta}) vanishes identically on `{}`; nothing to scan", lm.model.name)));
        }
        let xs: Vec<f64> = (0..16).map(|i| 1.0 + 0.75 * i as f64).collect();
        (["re_z", "log_abs_zeta"], rez_decay_samples(&ext, r, &xs))
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Output { path: "csv".into(), message: e.to_string() };
    w.write_record(header).map_err(io)?;
    for (x, y) in rows {
        w.write_record([report::fmt17(x), report::fmt17(y)]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output { path: "csv".into(), message: e.to_string() })?;
    write_output(out, &String::from_utf8(bytes).expect("ASCII"))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.cmd {
        Cmd::Chern { model, eta, out } => cmd_chern(cli, model, eta, out.as_deref()),
        Cmd::Residues { model, eta, radii, zmax, literal, out } => {
            cmd_residues(cli, model, eta, radii.as_deref(), *zmax, *literal, out.as_deref())
        }
        Cmd::Verify { suite, seed, out } => cmd_verify(cli, suite, *seed, out.as_deref()),
        Cmd::Table { model, scan, eta, r, out } => cmd_table(model, scan, eta, *r, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let message = text.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let rep = ErrorReport { error: "usage", stage: "arguments", message };
            println!("{}", serde_json::to_string(&rep).expect("serializable"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::VerifyFailed { .. }) {
                let rep = ErrorReport { error: e.kind(), stage: e.stage(), message: e.to_string() };
                println!("{}", serde_json::to_string(&rep).expect("serializable"));
            }
            ExitCode::from(e.exit_code())
        }
    }
}

