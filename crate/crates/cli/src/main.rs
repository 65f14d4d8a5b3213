//! `recwin` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data
//! validation error, 4 numerical failure. Failures print one JSON object
//! `{"error", "message", "exit_code"}` on stderr.

mod failure;

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use failure::Failure;
use recwin::data::{export_counting_process, export_wide, load_counting_process, load_wide, ColumnMap};
use recwin::design::{
    jfm_design, jfm_power, jfm_sample_size, lwr_power_curve, ncp_for_power, power_from_ncp, schoenfeld_plan, select_n,
    wr_model_based_n, wr_model_based_raw, DesignError, DesignInputs, GridPoint, JfmDesign, SampleGrid,
};
use recwin::jfm::{fit_jfm, treatment_contrast, wald_joint, wald_univariate, AlphaSpec, BaselineFamily, FitOptions, JfmSpec};
use recwin::sim::{
    planning_design, lwr_design, benchmark_scenario, simulate_dataset, stratified_power_variant, PlanningHazards,
    ScenarioSpec, TREATMENT,
};
use recwin::study::{run_study, StudyConfig};
use recwin::{wr_stratified, wr_unstratified, Dataset, WinRule};

#[derive(Parser)]
#[command(name = "recwin", version, about = "Recurrent-event win ratios, joint frailty models and trial design")]
struct Cli {
    /// Worker threads (falls back to RECWIN_THREADS, then to all cores).
    #[arg(long, global = true, env = "RECWIN_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// Win ratio analysis of a dataset.
    Wr(WrArgs),
    /// Fit a gamma-frailty joint model.
    Jfm(JfmArgs),
    /// Event-driven sample size with accrual-averaged event probability.
    SsSchoenfeld(SchoenfeldArgs),
    /// Joint frailty model sample size from Monte Carlo Fisher information.
    SsJfm(JfmDesignArgs),
    /// Power of the joint frailty model Wald test at a given size.
    PowerJfm(PowerJfmArgs),
    /// Model-based sample size for the standard win ratio.
    SsWr(WrDesignArgs),
    /// Simulation-based sample size for the last-event-assisted win ratio.
    SsLwrSim(LwrSimArgs),
    /// Monte Carlo replicate study from a study document.
    ReplicateStudy(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CsvSchema {
    /// Counting process rows.
    A,
    /// One row per subject.
    B,
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV file, `-` for stdin.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "a")]
    schema: CsvSchema,
    #[arg(long, default_value = "id")]
    col_id: String,
    #[arg(long, default_value = "tstart")]
    col_tstart: String,
    #[arg(long, default_value = "tstop")]
    col_tstop: String,
    #[arg(long, default_value = "event")]
    col_event: String,
    #[arg(long, default_value = "death")]
    col_death: String,
    #[arg(long, default_value = "trt")]
    col_trt: String,
    #[arg(long, default_value = "stratum")]
    col_stratum: String,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON document.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: scenario-1 .. scenario-6, scenario-5-stratified,
    /// planning-constant, planning-increasing, lwr-design.
    #[arg(long)]
    preset: Option<String>,
    /// Frailty variance for the planning-* and lwr-design presets.
    #[arg(long)]
    theta: Option<f64>,
    /// Recurrent-event hazard ratio for the planning-* and lwr-design presets.
    #[arg(long)]
    hr_recurrent: Option<f64>,
    /// Death hazard ratio for the planning-* and lwr-design presets.
    #[arg(long)]
    hr_death: Option<f64>,
    /// Override the number of subjects.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "a")]
    schema: CsvSchema,
    /// Output CSV; a `<out>.json` manifest with seed and scenario is written
    /// next to it. Without it the CSV goes to stdout and the manifest to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WrArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "lwr", value_parser = parse_rule)]
    rule: WinRule,
    /// Stratify on this covariate; `stratum` uses the stratum column.
    #[arg(long)]
    stratify: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Weibull,
    Exponential,
}

#[derive(Args)]
struct JfmArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Association power: `fixed:<value>` or `estimate`.
    #[arg(long, default_value = "fixed:1", value_parser = parse_alpha)]
    alpha: AlphaSpec,
    #[arg(long, value_enum, default_value = "weibull")]
    baseline: Baseline,
    /// Recurrent-event covariates (comma separated); default: treatment and
    /// every covariate column.
    #[arg(long, value_delimiter = ',')]
    recurrent_covariates: Option<Vec<String>>,
    /// Death covariates (comma separated); default as for recurrences.
    #[arg(long, value_delimiter = ',')]
    terminal_covariates: Option<Vec<String>>,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct Levels {
    /// Two-sided type I error.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Dropout inflation fraction, e.g. 0.05.
    #[arg(long, default_value_t = 0.0)]
    inflation: f64,
    /// Fraction allocated to the experimental arm.
    #[arg(long, default_value_t = 0.5)]
    allocation: f64,
}

impl Levels {
    fn inputs(&self) -> DesignInputs {
        DesignInputs { alpha: self.alpha, power: self.power, allocation: self.allocation, inflation: self.inflation }
    }
}

#[derive(Args)]
struct SchoenfeldArgs {
    /// Control event probability at one time unit.
    #[arg(long, default_value_t = 0.30)]
    p_control: f64,
    /// Ratio of treated to control event probability at two time units.
    #[arg(long, default_value_t = 0.89)]
    two_year_ratio: f64,
    #[arg(long, default_value_t = 3.0)]
    accrual: f64,
    #[arg(long, default_value_t = 4.0)]
    study_end: f64,
    #[command(flatten)]
    levels: Levels,
}

#[derive(Clone, Copy, ValueEnum)]
enum JfmTest {
    /// Both treatment effects jointly (2 df).
    Joint,
    Recurrent,
    Terminal,
}

#[derive(Args)]
struct JfmDesignArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: u64,
    /// Number of simulated datasets for the information estimate.
    #[arg(long, default_value_t = 100)]
    n_datasets: usize,
    #[arg(long, value_enum, default_value = "joint")]
    test: JfmTest,
    #[command(flatten)]
    levels: Levels,
}

#[derive(Args)]
struct PowerJfmArgs {
    #[command(flatten)]
    design: JfmDesignArgs,
    /// Total sample size at which to evaluate power.
    #[arg(long = "total-n")]
    total_n: f64,
}

#[derive(Args)]
struct WrDesignArgs {
    #[arg(long)]
    zeta0: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xi: Vec<f64>,
    #[command(flatten)]
    levels: Levels,
}

#[derive(Args)]
struct LwrSimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    grid_min: usize,
    #[arg(long)]
    grid_max: usize,
    #[arg(long, default_value_t = 100)]
    grid_step: usize,
    #[arg(long, default_value_t = 500)]
    n_sim: usize,
    /// Two-sided type I error.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Also write the power curve as CSV.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

#[derive(Args)]
struct StudyArgs {
    /// Study JSON document (scenario, methods, reps, seed).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write replicates.csv, summary.json and summary.md here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Format printed to stdout when no output directory is given.
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
}

fn parse_rule(s: &str) -> Result<WinRule, String> {
    s.parse().map_err(|_| format!("unknown rule `{s}` (swr, nwr, fwr, lwr)"))
}

fn parse_alpha(s: &str) -> Result<AlphaSpec, String> {
    if s == "estimate" {
        return Ok(AlphaSpec::Estimated);
    }
    s.strip_prefix("fixed:")
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .map(AlphaSpec::Fixed)
        .ok_or_else(|| format!("expected `fixed:<value>` or `estimate`, got `{s}`"))
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t as usize).build_global() {
            Failure::usage(format!("thread pool: {e}")).exit();
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Wr(a) => wr(a),
        Command::Jfm(a) => jfm(a),
        Command::SsSchoenfeld(a) => ss_schoenfeld(a),
        Command::SsJfm(a) => ss_jfm(a),
        Command::PowerJfm(a) => power_jfm(a),
        Command::SsWr(a) => ss_wr(a),
        Command::SsLwrSim(a) => ss_lwr_sim(a),
        Command::ReplicateStudy(a) => replicate_study(a),
    };
    if let Err(f) = result {
        f.exit();
    }
}

type CmdResult = Result<(), Failure>;

fn print_json(v: &Value) -> CmdResult {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| Failure::io(e.into()))?;
    writeln!(out).map_err(Failure::io)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    let mut s = String::new();
    if path == Path::new("-") {
        io::stdin().read_to_string(&mut s).map_err(Failure::io)?;
    } else {
        s = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    Ok(s)
}

fn load(args: &InputArgs) -> Result<Dataset, Failure> {
    let map = ColumnMap {
        id: args.col_id.clone(),
        tstart: args.col_tstart.clone(),
        tstop: args.col_tstop.clone(),
        event: args.col_event.clone(),
        death: args.col_death.clone(),
        trt: args.col_trt.clone(),
        stratum: args.col_stratum.clone(),
    };
    let text = read_text(&args.input)?;
    let ds = match args.schema {
        CsvSchema::A => load_counting_process(text.as_bytes(), &map),
        CsvSchema::B => load_wide(text.as_bytes(), &map),
    };
    ds.map_err(Failure::from)
}

fn scenario(a: &ScenarioArgs) -> Result<ScenarioSpec, Failure> {
    let mut spec = match (&a.scenario, &a.preset) {
        (Some(path), _) => ScenarioSpec::from_json(&read_text(path)?).map_err(Failure::usage)?,
        (None, Some(name)) => {
            let theta = a.theta.unwrap_or(1.0);
            let hr_r = a.hr_recurrent.unwrap_or(0.8);
            let hr_d = a.hr_death.unwrap_or(0.9);
            match name.as_str() {
                "scenario-5-stratified" => stratified_power_variant(),
                "planning-constant" => planning_design(PlanningHazards::Constant, theta, hr_r, hr_d),
                "planning-increasing" => planning_design(PlanningHazards::Increasing, theta, hr_r, hr_d),
                "lwr-design" => lwr_design(a.theta.unwrap_or(0.5), a.hr_recurrent.unwrap_or(0.7), a.hr_death.unwrap_or(0.8)),
                other => match other.strip_prefix("scenario-").and_then(|k| k.parse::<u8>().ok()) {
                    Some(k @ 1..=6) => benchmark_scenario(k),
                    _ => return Err(Failure::usage(format!("unknown preset `{other}`"))),
                },
            }
        }
        (None, None) => return Err(Failure::usage("give --scenario FILE or --preset NAME")),
    };
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(spec)
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let spec = scenario(&a.scenario)?;
    let ds = simulate_dataset(&spec, a.seed);
    let manifest = json!({ "seed": a.seed, "scenario": spec, "summary": ds.summary() });
    let write = |w: &mut dyn Write| match a.schema {
        CsvSchema::A => export_counting_process(&ds, w),
        CsvSchema::B => export_wide(&ds, w),
    };
    match &a.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path).map_err(Failure::io)?);
            write(&mut f).map_err(Failure::from)?;
            let mut m = path.clone().into_os_string();
            m.push(".json");
            fs::write(&m, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n").map_err(Failure::io)?;
        }
        None => {
            write(&mut io::stdout().lock()).map_err(Failure::from)?;
            eprintln!("{manifest}");
        }
    }
    Ok(())
}

fn wr(a: WrArgs) -> CmdResult {
    let ds = load(&a.input)?;
    let res = match a.stratify.as_deref() {
        None => wr_unstratified(&ds, a.rule),
        Some("stratum") if ds.subjects().iter().all(|s| s.stratum().is_some()) => wr_stratified(&ds, a.rule),
        Some(col) => wr_stratified(&ds.stratified_by_covariate(col).map_err(Failure::from)?, a.rule),
    }
    .map_err(Failure::from)?;
    print_json(&res.to_json())
}

fn jfm(a: JfmArgs) -> CmdResult {
    let ds = load(&a.input)?;
    let default_covs = || {
        let mut v = vec![TREATMENT.to_string()];
        v.extend(ds.covariate_names().into_iter().filter(|c| c != TREATMENT));
        v
    };
    let family = match a.baseline {
        Baseline::Weibull => BaselineFamily::Weibull,
        Baseline::Exponential => BaselineFamily::Exponential,
    };
    let spec = JfmSpec {
        recurrent_baseline: family,
        terminal_baseline: family,
        recurrent_covariates: a.recurrent_covariates.clone().unwrap_or_else(default_covs),
        terminal_covariates: a.terminal_covariates.clone().unwrap_or_else(default_covs),
        alpha: a.alpha,
        ..JfmSpec::default()
    };
    let opts = FitOptions { max_iter: a.max_iter, ..FitOptions::default() };
    let fit = fit_jfm(&ds, &spec, &opts).map_err(Failure::from)?;
    let mut tests = Vec::new();
    for name in fit.names.iter().filter(|n| n.starts_with("beta_")) {
        if let Ok(w) = wald_univariate(&fit, name, 0.0) {
            tests.push(json!({ "test": "univariate", "parameter": name, "stat": w.stat, "df": 1, "p": w.p }));
        }
    }
    if let Ok(c) = treatment_contrast(&fit) {
        if let Ok(w) = wald_joint(&fit, &c) {
            tests.push(json!({ "test": "joint-treatment", "stat": w.stat, "df": w.df, "p": w.p }));
        }
    }
    print_json(&fit.to_json(&tests))
}

fn ss_schoenfeld(a: SchoenfeldArgs) -> CmdResult {
    let plan = schoenfeld_plan(a.p_control, a.two_year_ratio, &a.levels.inputs(), a.accrual, a.study_end)
        .map_err(Failure::from)?;
    print_json(&json!({
        "method": "schoenfeld",
        "rate_control": plan.rate_control,
        "rate_treated": plan.rate_treated,
        "hr": plan.hr,
        "log_hr": plan.hr.ln(),
        "events": plan.events,
        "prob_control": plan.prob_control,
        "prob_treated": plan.prob_treated,
        "mean_prob": plan.mean_prob,
        "n": plan.n,
        "inflation": a.levels.inflation,
    }))
}

fn design_for(a: &JfmDesignArgs) -> Result<(ScenarioSpec, JfmDesign, nalgebra::DMatrix<f64>), Failure> {
    let spec = scenario(&a.scenario)?;
    let d = jfm_design(&spec, a.n_datasets, a.seed).map_err(Failure::from)?;
    let c = match a.test {
        JfmTest::Joint => d.treatment_contrast(),
        JfmTest::Recurrent => d.contrast(&[&format!("beta_r.{TREATMENT}")]),
        JfmTest::Terminal => d.contrast(&[&format!("beta_d.{TREATMENT}")]),
    }
    .map_err(Failure::from)?;
    Ok((spec, d, c))
}

fn design_json(a: &JfmDesignArgs, spec: &ScenarioSpec, d: &JfmDesign, c: &nalgebra::DMatrix<f64>) -> Result<Value, Failure> {
    let info: Vec<Vec<f64>> = (0..d.info.nrows()).map(|i| d.info.row(i).iter().copied().collect()).collect();
    Ok(json!({
        "seed": a.seed,
        "n_datasets": a.n_datasets,
        "simulated_subjects": d.n_subjects_total,
        "df": c.nrows(),
        "ncp_per_subject": d.ncp_per_subject(c).map_err(Failure::from)?,
        "parameters": d.names,
        "planning_values": d.omega,
        "fisher_information": info,
        "scenario": spec,
    }))
}

fn ss_jfm(a: JfmDesignArgs) -> CmdResult {
    let (spec, d, c) = design_for(&a)?;
    let inputs = a.levels.inputs();
    let n = jfm_sample_size(&d, &c, &inputs).map_err(Failure::from)?;
    let mut out = design_json(&a, &spec, &d, &c)?;
    out["method"] = json!("jfm");
    out["n"] = json!(n);
    out["ncp"] = json!(ncp_for_power(c.nrows(), inputs.alpha, inputs.power).map_err(Failure::from)?);
    out["power_at_n"] = json!(jfm_power(&d, &c, n as f64, inputs.alpha).map_err(Failure::from)?);
    out["alpha"] = json!(inputs.alpha);
    out["target_power"] = json!(inputs.power);
    out["inflation"] = json!(inputs.inflation);
    print_json(&out)
}

fn power_jfm(a: PowerJfmArgs) -> CmdResult {
    if !(a.total_n > 0.0) {
        return Err(Failure::usage("--total-n must be positive"));
    }
    let (spec, d, c) = design_for(&a.design)?;
    let alpha = a.design.levels.alpha;
    let per = d.ncp_per_subject(&c).map_err(Failure::from)?;
    let mut out = design_json(&a.design, &spec, &d, &c)?;
    out["method"] = json!("jfm-power");
    out["n"] = json!(a.total_n);
    out["alpha"] = json!(alpha);
    out["ncp"] = json!(a.total_n * per);
    out["power"] = json!(power_from_ncp(c.nrows(), alpha, a.total_n * per));
    print_json(&out)
}

fn ss_wr(a: WrDesignArgs) -> CmdResult {
    let inputs = a.levels.inputs();
    let n = wr_model_based_n(a.zeta0, &a.delta0, &a.xi, &inputs).map_err(Failure::from)?;
    let raw = wr_model_based_raw(a.zeta0, &a.delta0, &a.xi, &inputs).map_err(Failure::from)?;
    print_json(&json!({
        "method": "standard-wr",
        "n": n,
        "n_unrounded": raw,
        "alpha": inputs.alpha,
        "power": inputs.power,
        "allocation": inputs.allocation,
    }))
}

fn ss_lwr_sim(a: LwrSimArgs) -> CmdResult {
    let alt = scenario(&a.scenario)?;
    let null = alt.null_version();
    let grid = SampleGrid { min: a.grid_min, max: a.grid_max, step: a.grid_step };
    if a.n_sim < 100 {
        return Err(Failure::usage("--n-sim must be at least 100"));
    }
    let curve = lwr_power_curve(&alt, &null, &grid, a.n_sim, a.alpha, a.seed).map_err(Failure::from)?;
    if let Some(path) = &a.curve_csv {
        write_curve(path, &curve).map_err(|e| Failure::io(io::Error::other(e)))?;
    }
    let chosen = select_n(&curve, a.alpha, a.power);
    print_json(&json!({
        "method": "lwr-simulation",
        "seed": a.seed,
        "grid": grid,
        "n_sim": a.n_sim,
        "alpha": a.alpha,
        "target_power": a.power,
        "chosen": chosen,
        "curve": curve,
        "scenario": alt,
    }))?;
    match chosen {
        Some(_) => Ok(()),
        None => Err(DesignError::NoFeasibleN.into()),
    }
}

fn write_curve(path: &Path, curve: &[GridPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "power", "power_mcse", "type1", "type1_mcse", "degenerate"])?;
    for p in curve {
        w.write_record([
            p.n.to_string(),
            p.power.to_string(),
            p.power_mcse.to_string(),
            p.type1.to_string(),
            p.type1_mcse.to_string(),
            p.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn replicate_study(a: StudyArgs) -> CmdResult {
    let mut cfg = StudyConfig::from_json(&read_text(&a.config)?).map_err(Failure::usage)?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let rep = run_study(&cfg).map_err(Failure::usage)?;
    match &a.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Failure::io)?;
            let f = BufWriter::new(File::create(dir.join("replicates.csv")).map_err(Failure::io)?);
            rep.write_csv(f).map_err(|e| Failure::io(io::Error::other(e)))?;
            let text = serde_json::to_string_pretty(&rep.to_json()).expect("serializable") + "\n";
            fs::write(dir.join("summary.json"), text).map_err(Failure::io)?;
            fs::write(dir.join("summary.md"), rep.to_markdown()).map_err(Failure::io)?;
            Ok(())
        }
        None => match a.format {
            ReportFormat::Json => print_json(&rep.to_json()),
            ReportFormat::Markdown => {
                print!("{}", rep.to_markdown());
                Ok(())
            }
            ReportFormat::Csv => rep.write_csv(io::stdout().lock()).map_err(|e| Failure::io(io::Error::other(e))),
        },
    }
}
