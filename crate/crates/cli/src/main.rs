use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cisa_core::experiment::{run_experiment, summary_header, ExperimentOutcome, ExperimentSpec, Method};
use cisa_core::theorems::{audit_theorems, TheoremAuditSpec};
use cisa_core::{classify_cisa, enumerate_cisa_dags, g_of_gamma, CausalDag, DgpKind, LossKind, Optimizer};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cisa",
    version,
    about = "Exact experiments on causally invariant domain shifts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and audit one predictor, or a grid of configs.
    RunExperiment(Box<RunArgs>),
    /// Print the family of a DAG file.
    ClassifyDag { path: PathBuf },
    /// List every DAG accepted by the classifier.
    EnumerateDags {
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the structural checks and print a pass/fail matrix.
    AuditTheorems {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the matrix as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate Q(X1 = Y) after label reweighting as a function of gamma.
    AnalyzeReweighting {
        #[arg(long, default_value_t = 0.25)]
        alpha: f64,
        /// Number of grid intervals on [0, 1].
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run every listed config; results land in numbered subdirectories.
    #[arg(long, num_args = 1.., conflicts_with = "config")]
    grid: Vec<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    beta_test: Option<f64>,
    #[arg(long)]
    gamma_test: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tolerance: Option<f64>,
    #[arg(long)]
    penalty_weight: Option<f64>,
    #[arg(long)]
    penalty_anneal_iters: Option<usize>,
    /// Reference label law as `P0(+1),P0(-1)`.
    #[arg(long, value_delimiter = ',')]
    reference_label_dist: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    transforms: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    transform_dist: Option<Vec<f64>>,
    #[arg(long)]
    cf_tolerance: Option<f64>,
}

enum Failure {
    /// Bad input or a failed computation.
    Error(String),
    /// Everything ran but some audit did not pass.
    Audit,
}

impl From<cisa_core::Error> for Failure {
    fn from(e: cisa_core::Error) -> Self {
        Failure::Error(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// `%g`-style formatting with six significant digits.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

impl RunArgs {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<(), cisa_core::Error> {
        if let Some(v) = &self.name {
            spec.name = v.clone();
        }
        if let Some(v) = &self.dgp {
            spec.env.dgp = v.parse::<DgpKind>()?;
        }
        if let Some(v) = &self.method {
            spec.method = v.parse::<Method>()?;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.sample_size {
            spec.sample_size = v;
        }
        let env = &mut spec.env;
        if let Some(v) = self.alpha {
            env.alpha = v;
        }
        if let Some(v) = &self.beta {
            env.beta = v.clone();
        }
        if let Some(v) = &self.gamma {
            env.gamma = v.clone();
        }
        if let Some(v) = self.beta_test {
            env.beta_test = v;
        }
        if let Some(v) = self.gamma_test {
            env.gamma_test = v;
        }
        let train = &mut spec.train;
        if let Some(v) = &self.loss {
            train.loss = v.parse::<LossKind>()?;
        }
        if let Some(v) = &self.optimizer {
            train.optimizer = v.parse::<Optimizer>()?;
        }
        if let Some(v) = self.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = self.max_iters {
            train.max_iters = v;
        }
        if let Some(v) = self.grad_tolerance {
            train.grad_tolerance = v;
        }
        if let Some(v) = self.penalty_weight {
            train.penalty_weight = v;
        }
        if let Some(v) = self.penalty_anneal_iters {
            train.penalty_anneal_iters = v;
        }
        if let Some(v) = &self.reference_label_dist {
            let [p, n] = v[..] else {
                return Err(cisa_core::Error::Config(
                    "--reference-label-dist takes two values".into(),
                ));
            };
            train.reference_label_dist = [p, n];
        }
        if let Some(v) = &self.transforms {
            spec.transforms.transforms = v.clone();
        }
        if let Some(v) = &self.transform_dist {
            spec.transforms.transform_dist = v.clone();
        }
        if let Some(v) = self.cf_tolerance {
            spec.audit.cf_tolerance = v;
        }
        Ok(())
    }

    fn load(&self, path: Option<&Path>) -> Result<ExperimentSpec, cisa_core::Error> {
        let mut spec = match path {
            Some(p) => ExperimentSpec::from_file(p)?,
            None => ExperimentSpec::default(),
        };
        self.apply(&mut spec)?;
        if spec.name == ExperimentSpec::default().name && self.name.is_none() && path.is_none() {
            spec.name = format!("{}-{}", spec.env.dgp.name(), spec.method.name());
        }
        Ok(spec)
    }
}

fn describe(outcome: &ExperimentOutcome) -> String {
    let r = &outcome.report;
    let a = &r.audit;
    let s = a.scores;
    let mut out = String::new();
    writeln!(out, "{} ({} on {})", r.name, r.method, r.dgp).unwrap();
    writeln!(out, "  f(+1,+1) = {:>10}   f(+1,-1) = {:>10}", sig6(s[0]), sig6(s[1])).unwrap();
    writeln!(out, "  f(-1,+1) = {:>10}   f(-1,-1) = {:>10}", sig6(s[2]), sig6(s[3])).unwrap();
    writeln!(out, "  cf_invariant = {}, trivial = {}", a.cf_invariant, a.trivial).unwrap();
    writeln!(
        out,
        "  test accuracy = {}, test risk = {}",
        sig6(a.test.accuracy),
        sig6(a.test.risk)
    )
    .unwrap();
    write!(
        out,
        "  iterations = {}, gradient norm = {}",
        r.fit.iterations,
        sig6(r.fit.grad_norm)
    )
    .unwrap();
    out
}

fn run_experiment_cmd(args: &RunArgs) -> CmdResult {
    if args.grid.is_empty() {
        let spec = args.load(args.config.as_deref())?;
        let outcome = run_experiment(&spec)?;
        let dir = args
            .out
            .clone()
            .or(spec.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name));
        outcome.artifacts.write_to(&dir)?;
        println!("{}", describe(&outcome));
        println!("  artifacts written to {}", dir.display());
        return Ok(());
    }

    let specs = args
        .grid
        .iter()
        .map(|p| args.load(Some(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let root = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join("grid"));
    let outcomes: Vec<Result<ExperimentOutcome, cisa_core::Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || run_experiment(spec)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });
    let mut summary = summary_header();
    summary.push('\n');
    for (i, (spec, outcome)) in specs.iter().zip(outcomes).enumerate() {
        let outcome = outcome.map_err(|e| Failure::Error(format!("{}: {e}", args.grid[i].display())))?;
        outcome
            .artifacts
            .write_to(&root.join(format!("{i:03}-{}", spec.name)))?;
        summary.push_str(outcome.artifacts.summary_csv.lines().nth(1).unwrap_or_default());
        summary.push('\n');
        println!("{}", describe(&outcome));
    }
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("summary.csv"), summary)?;
    println!("grid of {} runs written to {}", specs.len(), root.display());
    Ok(())
}

fn classify_dag_cmd(path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    let dag = CausalDag::parse(&text)?;
    println!("{}", classify_cisa(&dag).label());
    Ok(())
}

fn enumerate_dags_cmd(out: Option<&Path>) -> CmdResult {
    let dags = enumerate_cisa_dags();
    let mut text = String::new();
    for (i, (dag, subtype)) in dags.iter().enumerate() {
        writeln!(text, "# dag {i} {}", subtype.label()).unwrap();
        text.push_str(&dag.to_text());
        text.push('\n');
    }
    match out {
        Some(p) => {
            std::fs::write(p, &text)?;
            let mut counts = std::collections::BTreeMap::new();
            for (_, st) in &dags {
                *counts.entry(st.label()).or_insert(0usize) += 1;
            }
            for (label, n) in counts {
                println!("{label}: {n}");
            }
            println!("total: {}", dags.len());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn audit_theorems_cmd(config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let spec = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Error(format!("{}: {e}", p.display())))?;
            TheoremAuditSpec::from_toml(&text)?
        }
        None => TheoremAuditSpec::default(),
    };
    let checks = audit_theorems(&spec)?;
    let mut csv = String::from("check,passed,detail\n");
    for c in &checks {
        println!("{} {:<36} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        writeln!(csv, "{},{},\"{}\"", c.name, c.passed, c.detail).unwrap();
    }
    if let Some(p) = out {
        std::fs::write(p, csv)?;
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Audit)
    }
}

fn analyze_reweighting_cmd(alpha: f64, steps: usize, out: Option<&Path>) -> CmdResult {
    if steps == 0 {
        return Err(Failure::Error("--steps must be at least 1".into()));
    }
    let mut csv = String::from("gamma,g\n");
    for i in 0..=steps {
        let gamma = i as f64 / steps as f64;
        writeln!(csv, "{gamma},{}", g_of_gamma(gamma, alpha)?).unwrap();
    }
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunExperiment(args) => run_experiment_cmd(args),
        Command::ClassifyDag { path } => classify_dag_cmd(path),
        Command::EnumerateDags { out } => enumerate_dags_cmd(out.as_deref()),
        Command::AuditTheorems { config, out } => audit_theorems_cmd(config.as_deref(), out.as_deref()),
        Command::AnalyzeReweighting { alpha, steps, out } => analyze_reweighting_cmd(*alpha, *steps, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Audit) => ExitCode::from(1),
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.75), "0.75");
        assert_eq!(sig6(1.1061431), "1.10614");
        assert_eq!(sig6(-0.0331431234), "-0.0331431");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(3.5e-12), "3.5e-12");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(12.0), "12");
    }
}
