//! `ampsim` command-line driver: run scenarios, verify the solvers against
//! their oracles, and sweep a parameter across runs.

mod scenario;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ampsim::equilibrium::{brute_force_equilibrium, myopic_equilibrium, threshold};
use ampsim::measures::{check_decentralization_axioms, DecentralizationMeasure};
use ampsim::policies::StagePolicy;
use ampsim::sybil::{candidate_profiles, max_sybil_gain, sybil_proofness_condition, sybil_stage, GainSettings, SplitGrid};
use ampsim::virtualstake::{check_invariance, longrun_share, dilution_counterexample, VirtualStakeState};
use ampsim::{
    golden, monitor_properties, run, Behavior, Instance, PolicySpec, RunConfig, Scalar, StageGame, StakeProfile, Trace,
    ValueFunction,
};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use scenario::{BehaviorKind, PolicyKind, Scenario, BUILTINS};

#[derive(Parser)]
#[command(name = "ampsim", version, about = "Participation games under algorithmic monetary policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and export its trace.
    Run {
        /// Path to a TOML scenario, or a built-in name.
        scenario: String,
        /// Trace destination; standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override the scenario's round count.
        #[arg(long)]
        rounds: Option<u64>,
        /// Also count rounds whose value falls below the recovery threshold.
        #[arg(long)]
        theta: bool,
    },
    /// Run a verification suite and print a JSON report.
    Verify {
        suite: Suite,
        /// Largest vector length for the axiom check.
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Comma-separated stake grid for the axiom check.
        #[arg(long, default_value = "1,2,3,4")]
        grid: String,
        /// Comma-separated index thresholds for the axiom check.
        #[arg(long, default_value = "1/2")]
        tau: String,
        /// Random instances (oracle) or random states (invariance).
        #[arg(long, default_value_t = 200)]
        instances: usize,
        /// Expected steps per invariance state.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Treat a second equilibrium next to the solver's as a violation.
        #[arg(long)]
        require_unique: bool,
        /// Stake grid for sybil splits.
        #[arg(long, default_value = "1/4")]
        granularity: String,
        /// Maximum number of sybil parts.
        #[arg(long, default_value_t = 3)]
        parts: usize,
    },
    /// Run one trace per parameter value and write a summary table.
    Sweep {
        /// Path to a TOML scenario, or a built-in name.
        scenario: String,
        #[arg(long, value_enum)]
        parameter: Parameter,
        /// Comma-separated values, e.g. `0,1/4,1/2`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Print a scenario in normalized TOML form.
    Show { scenario: String },
    /// List the built-in scenarios.
    Builtins,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Suite {
    GoldenTraces,
    Axioms,
    Invariance,
    Sybil,
    Oracle,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Parameter {
    Alpha,
    #[value(name = "M", alias = "m")]
    M,
    Rounds,
    Epsilon,
}

enum Failure {
    /// Bad input: exit 2.
    Usage(anyhow::Error),
    /// A check failed or a run could not complete: exit 1.
    Violation(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Violation(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, output, rounds, theta } => cmd_run(&scenario, output.as_deref(), rounds, theta),
        Command::Verify { suite, n, grid, tau, instances, steps, seed, require_unique, granularity, parts } => {
            cmd_verify(suite, VerifyOptions { n, grid, tau, instances, steps, seed, require_unique, granularity, parts })
        }
        Command::Sweep { scenario, parameter, values, output_dir } => cmd_sweep(&scenario, parameter, &values, &output_dir),
        Command::Show { scenario } => load_scenario(&scenario).map(|s| print!("{}", s.to_toml())),
        Command::Builtins => {
            for (name, _) in BUILTINS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(source: &str) -> Result<Scenario, Failure> {
    if let Some(s) = Scenario::builtin(source) {
        return Ok(s);
    }
    let text = fs::read_to_string(source)
        .with_context(|| format!("cannot read scenario `{source}` (not a file or built-in)"))
        .map_err(usage)?;
    Scenario::parse(&text).map_err(|e| usage(anyhow!("{source}: {e}")))
}

fn validated_instance(s: &Scenario) -> Result<Instance, Failure> {
    let inst = s.instance();
    let report = ampsim::validate_instance(&inst);
    if !report.is_ok() {
        return Err(usage(anyhow!("invalid scenario: {}", report.errors.join("; "))));
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(inst)
}

fn parse_list(text: &str) -> Result<Vec<Scalar>, Failure> {
    let values: Vec<Scalar> = text
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<Scalar>().map_err(|e| usage(anyhow!("bad value `{v}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(usage(anyhow!("value list is empty")));
    }
    Ok(values)
}

/// Writes through a sibling temporary file so readers never see a partial trace.
fn write_atomically(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("moving trace into {}", path.display()))?;
    Ok(())
}

fn stake_list(p: &StakeProfile) -> Vec<String> {
    p.values().map(|s| s.to_string()).collect()
}

fn summary(trace: &Trace) -> Value {
    let ds = trace.records.iter().map(|r| r.d);
    json!({
        "rounds": trace.len(),
        "final_stakes": stake_list(trace.final_stakes()),
        "min_d": ds.clone().min(),
        "max_d": ds.max(),
    })
}

fn cmd_run(source: &str, output: Option<&Path>, rounds: Option<u64>, theta: bool) -> CmdResult {
    let s = load_scenario(source)?;
    let inst = validated_instance(&s)?;
    let cfg = s.config();
    let rounds = rounds.unwrap_or(s.rounds);
    let trace = run(&inst, &cfg, rounds).map_err(anyhow::Error::from)?;
    let mut report = summary(&trace);
    if theta {
        let behavior = match s.policy {
            PolicyKind::MuEll => Behavior::Lookahead { horizon_cap: s.horizon_cap },
            _ => s.behavior(),
        };
        let th = threshold(&inst, behavior, rounds).map_err(anyhow::Error::from)?;
        let props = monitor_properties(&trace, &th).map_err(anyhow::Error::from)?;
        report["theta"] = json!(th.per_player.iter().map(|(id, t)| (id.to_string(), t.as_ref().map(|x| x.to_string()))).collect::<std::collections::BTreeMap<_, _>>());
        report["rounds_below_theta"] = json!(props.below_threshold.len());
    }
    let csv = trace.to_csv_string().map_err(anyhow::Error::from)?;
    match output {
        Some(path) => {
            write_atomically(path, csv.as_bytes())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
        }
        None => {
            print!("{csv}");
            eprintln!("{}", serde_json::to_string(&report).expect("json"));
        }
    }
    Ok(())
}

struct VerifyOptions {
    n: usize,
    grid: String,
    tau: String,
    instances: usize,
    steps: usize,
    seed: u64,
    require_unique: bool,
    granularity: String,
    parts: usize,
}

fn cmd_verify(suite: Suite, opts: VerifyOptions) -> CmdResult {
    let (pass, report) = match suite {
        Suite::GoldenTraces => verify_golden_traces()?,
        Suite::Axioms => verify_axioms(&opts)?,
        Suite::Invariance => verify_invariance(&opts)?,
        Suite::Sybil => verify_sybil(&opts)?,
        Suite::Oracle => verify_oracle(&opts)?,
    };
    println!("{}", serde_json::to_string_pretty(&json!({ "suite": format!("{suite:?}"), "pass": pass, "report": report })).expect("json"));
    if pass {
        Ok(())
    } else {
        Err(Failure::Violation(anyhow!("suite {suite:?} found violations")))
    }
}

fn verify_golden_traces() -> Result<(bool, Value), Failure> {
    let cases = [
        ("example1-myopic", golden::EXAMPLE1_MYOPIC),
        ("example2-lookahead", golden::EXAMPLE2_LOOKAHEAD),
        ("example3-muell", golden::EXAMPLE3_SHADOW),
    ];
    let mut pass = true;
    let mut tables = Vec::new();
    for (name, reference) in cases {
        let s = Scenario::builtin(name).expect("built-in");
        let csv = run(&s.instance(), &s.config(), s.rounds).and_then(|t| t.to_csv_string()).map_err(anyhow::Error::from)?;
        let mut mismatches = Vec::new();
        let got: Vec<&str> = csv.lines().collect();
        let want: Vec<&str> = reference.lines().collect();
        if got.len() != want.len() {
            mismatches.push(json!({ "rows": { "got": got.len() - 1, "want": want.len() - 1 } }));
        }
        let header: Vec<&str> = want[0].split(',').collect();
        for (row, (g, w)) in got.iter().zip(&want).enumerate() {
            let mut rg = csv_fields(g);
            let rw = csv_fields(w);
            rg.resize(rw.len(), String::new());
            for (k, (a, b)) in rg.iter().zip(&rw).enumerate() {
                if a != b {
                    mismatches.push(json!({ "row": row, "field": header.get(k), "got": a, "want": b }));
                }
            }
        }
        pass &= mismatches.is_empty();
        tables.push(json!({ "scenario": name, "rows": want.len() - 1, "mismatches": mismatches }));
    }
    Ok((pass, json!(tables)))
}

fn csv_fields(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    out.push(cur);
    out
}

fn verify_axioms(opts: &VerifyOptions) -> Result<(bool, Value), Failure> {
    let grid = parse_list(&opts.grid)?;
    let mut results = Vec::new();
    let mut pass = true;
    for tau in parse_list(&opts.tau)? {
        let measure = DecentralizationMeasure::TauIndex(tau.clone());
        let r = check_decentralization_axioms(&measure, opts.n, &grid).map_err(usage)?;
        pass &= r.is_clean();
        results.push(json!({
            "tau": tau.to_string(),
            "vectors_checked": r.vectors_checked,
            "violations": r.violations.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>(),
        }));
    }
    Ok((pass, json!(results)))
}

fn verify_invariance(opts: &VerifyOptions) -> Result<(bool, Value), Failure> {
    if opts.steps == 0 {
        return Err(usage(anyhow!("--steps must be at least 1")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut broken = Vec::new();
    for k in 0..opts.instances {
        let n = rng.gen_range(2..=5);
        let alpha = Scalar::ratio(rng.gen_range(0..=12), 12);
        let types = (0..n).map(|_| Scalar::ratio(rng.gen_range(4..=24), 4)).collect();
        let stakes = (0..n).map(|_| Scalar::ratio(rng.gen_range(1..=30), rng.gen_range(1..=5))).collect();
        let state = VirtualStakeState::new(alpha, types, stakes).map_err(anyhow::Error::from)?;
        let r = check_invariance(&state, opts.steps).map_err(anyhow::Error::from)?;
        if !r.holds() {
            broken.push(json!({ "state": k, "report": format!("{r:?}") }));
        }
    }
    Ok((broken.is_empty(), json!({ "states": opts.instances, "steps": opts.steps, "broken": broken })))
}

fn verify_sybil(opts: &VerifyOptions) -> Result<(bool, Value), Failure> {
    let granularity: Scalar = opts.granularity.parse().map_err(|e| usage(anyhow!("bad granularity: {e}")))?;
    if !granularity.is_positive() || opts.parts == 0 {
        return Err(usage(anyhow!("granularity must be positive and --parts at least 1")));
    }
    let grid = SplitGrid::new(granularity, opts.parts);
    let inst = Instance::example1().with_types(&[Scalar::from_int(3), Scalar::ratio(5, 2), Scalar::from_int(2)]);
    let shadow = PolicySpec::MuEll { horizon_cap: 10 };
    let harmful = StakeProfile::from_values([3i64, 1, 1]);
    let profiles = candidate_profiles(&inst, &shadow, 10, &[harmful]).map_err(anyhow::Error::from)?;
    let cond = sybil_proofness_condition(&inst, &shadow, &profiles, &grid).map_err(anyhow::Error::from)?;
    let settings = GainSettings::default();
    let gain = max_sybil_gain(&inst, &sybil_stage(&shadow), &profiles, &grid, &settings).map_err(anyhow::Error::from)?;
    let all_pay =
        max_sybil_gain(&inst, &StagePolicy::AllPay, std::slice::from_ref(&inst.initial_stakes), &grid, &settings).map_err(anyhow::Error::from)?;
    let best = |g: &ampsim::sybil::GainSearch| g.best.as_ref().map(|b| b.0.clone()).unwrap_or_default();
    let (max_gain, all_pay_gain) = (best(&gain), best(&all_pay));
    let pass = cond.is_satisfied() && !max_gain.is_positive() && all_pay_gain.is_positive();
    Ok((
        pass,
        json!({
            "types": ["3", "5/2", "2"],
            "profiles_checked": cond.profiles_checked,
            "harmful_cases": cond.findings.len(),
            "condition_satisfied": cond.is_satisfied(),
            "splits_checked": gain.splits_checked,
            "max_gain": max_gain.to_string(),
            "all_pay_max_gain": all_pay_gain.to_string(),
        }),
    ))
}

fn verify_oracle(opts: &VerifyOptions) -> Result<(bool, Value), Failure> {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut not_equilibrium = Vec::new();
    let mut multiple = Vec::new();
    for k in 0..opts.instances {
        let n = rng.gen_range(1..=5);
        let types: Vec<Scalar> = (0..n).map(|_| Scalar::from_int(rng.gen_range(1..=6))).collect();
        let stakes: Vec<Scalar> = (0..n).map(|_| Scalar::from_int(rng.gen_range(1..=6))).collect();
        let inst = Instance::simple(&types, &stakes, Scalar::ratio(1, 5), Scalar::ratio(1, 2), ValueFunction::Identity);
        let policy = if k % 2 == 0 { StagePolicy::TopType { epsilon: Scalar::zero() } } else { StagePolicy::AllPay };
        let game = StageGame::new(&inst, &policy);
        let eq = myopic_equilibrium(&game, &inst.initial_stakes).map_err(anyhow::Error::from)?;
        let bf = brute_force_equilibrium(&game, &inst.initial_stakes, Behavior::Myopic).map_err(anyhow::Error::from)?;
        let case = || {
            json!({
                "instance": k,
                "types": types.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "stakes": stakes.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "policy": format!("{policy:?}"),
                "solver": eq.to_string(),
                "oracle": bf.equilibria.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            })
        };
        if !bf.equilibria.contains(&eq) {
            not_equilibrium.push(case());
        } else if bf.equilibria.len() > 1 {
            multiple.push(case());
        }
    }
    let pass = not_equilibrium.is_empty() && (!opts.require_unique || multiple.is_empty());
    Ok((
        pass,
        json!({
            "instances": opts.instances,
            "solver_not_an_equilibrium": not_equilibrium,
            "multiple_equilibria": multiple.len(),
            "first_multiple_equilibria": multiple.first(),
        }),
    ))
}

fn cmd_sweep(source: &str, parameter: Parameter, values: &str, output_dir: &Path) -> CmdResult {
    let base = load_scenario(source)?;
    let values = parse_list(values)?;
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display())).map_err(usage)?;
    let mut table = String::from("value,rounds,min_d,final_shares\n");
    let mut rows = Vec::new();
    for (k, value) in values.iter().enumerate() {
        let (inst, cfg, rounds) = sweep_point(&base, parameter, value)?;
        let trace = run(&inst, &cfg, rounds).with_context(|| format!("value {value}"))?;
        let csv = trace.to_csv_string().map_err(anyhow::Error::from)?;
        write_atomically(&output_dir.join(format!("trace_{k:03}.csv")), csv.as_bytes())?;
        let fin = trace.final_stakes();
        let total = fin.total();
        let shares: Vec<Scalar> = fin.values().map(|s| s / &total).collect();
        let min_d = trace.records.iter().map(|r| r.d).min().unwrap_or(1);
        let joined = shares.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
        table.push_str(&format!("{value},{rounds},{min_d},{joined}\n"));
        let longrun = match &cfg.policy {
            PolicySpec::MuAlpha { alpha } => Some(
                longrun_share(&VirtualStakeState::from_instance(&inst, alpha.clone()).map_err(anyhow::Error::from)?)
                    .iter()
                    .map(Scalar::to_string)
                    .collect::<Vec<_>>(),
            ),
            _ => None,
        };
        rows.push(json!({
            "value": value.to_string(),
            "longrun_share": longrun,
            "min_d": min_d,
            "final_shares": shares.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            "final_shares_approx": shares.iter().map(Scalar::to_f64).collect::<Vec<_>>(),
        }));
    }
    write_atomically(&output_dir.join("summary.csv"), table.as_bytes())?;
    println!("{}", serde_json::to_string_pretty(&json!({ "parameter": format!("{parameter:?}"), "points": rows })).expect("json"));
    Ok(())
}

fn sweep_point(base: &Scenario, parameter: Parameter, value: &Scalar) -> Result<(Instance, RunConfig, u64), Failure> {
    let mut s = base.clone();
    match parameter {
        Parameter::Alpha => match &mut s.policy {
            PolicyKind::MuAlpha { alpha } => *alpha = value.clone(),
            _ => return Err(usage(anyhow!("alpha sweeps need a mu_alpha scenario"))),
        },
        Parameter::Epsilon => match &mut s.policy {
            PolicyKind::MuStar { epsilon } => *epsilon = value.clone(),
            _ => return Err(usage(anyhow!("epsilon sweeps need a mu_star scenario"))),
        },
        Parameter::Rounds => {
            if !value.is_integer() || !value.is_positive() {
                return Err(usage(anyhow!("rounds must be a positive integer, got {value}")));
            }
            s.rounds = value.floor_i64().and_then(|r| u64::try_from(r).ok()).ok_or_else(|| usage(anyhow!("rounds out of range")))?;
        }
        Parameter::M => {
            let PolicyKind::MuAlpha { alpha } = &s.policy else {
                return Err(usage(anyhow!("M sweeps need a mu_alpha scenario")));
            };
            if s.behavior != BehaviorKind::Full {
                return Err(usage(anyhow!("M sweeps run under full participation")));
            }
            let types: Vec<Scalar> = s.players.iter().map(|p| p.type_.clone()).collect();
            let inst = dilution_counterexample(alpha, &types, value).map_err(usage)?;
            return Ok((inst, s.config(), s.rounds));
        }
    }
    let inst = validated_instance(&s)?;
    Ok((inst, s.config(), s.rounds))
}
