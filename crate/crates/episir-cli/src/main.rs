//! Command-line front end: solve allocations, simulate paths under saved
//! policies, sweep parameters, and calibrate the death-state utility.
//!
//! Every run writes its artifacts plus a `manifest.txt` carrying the resolved
//! configuration and its hash; outputs are byte-identical across runs of the
//! same configuration except for the manifest timestamp line. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 solver non-convergence.

// negated comparisons on floats are NaN guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use clap::{Parser, Subcommand};
use config::{AllocationChoice, RunConfig, SweepAxis};
use episir::*;
use rayon::prelude::*;
use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "episir",
    version,
    about = "Behavioral SIR epidemic model: planner and equilibrium solvers, path simulation, sweeps, calibration"
)]
struct Cli {
    /// Flat key = value configuration file, applied before flag overrides
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Per-field overrides mirroring the configuration keys; any flag given here
/// wins over the config file.
#[derive(clap::Args, Debug, Default)]
struct Overrides {
    /// Discount rate per day
    #[arg(long, help_heading = "Model")]
    r: Option<f64>,
    /// Vaccine arrival hazard per day
    #[arg(long, help_heading = "Model")]
    nu: Option<f64>,
    /// Transmission rate
    #[arg(long, help_heading = "Model")]
    beta: Option<f64>,
    /// Removal rate
    #[arg(long, help_heading = "Model")]
    gamma: Option<f64>,
    /// Diagnosis probability at infection
    #[arg(long, help_heading = "Model")]
    sigma: Option<f64>,
    /// Infection fatality rate
    #[arg(long, help_heading = "Model")]
    delta0: Option<f64>,
    /// Relative risk aversion of activity utility
    #[arg(long, help_heading = "Model")]
    alpha: Option<f64>,
    /// Lower bound on activity
    #[arg(long, help_heading = "Model")]
    a_min: Option<f64>,
    /// Flow utility while dead (negative)
    #[arg(long, help_heading = "Model", allow_hyphen_values = true)]
    u_d: Option<f64>,
    /// Activity of diagnosed infected agents
    #[arg(long, help_heading = "Model")]
    a_ik: Option<f64>,
    /// Flow utility of diagnosed infected agents (nonpositive)
    #[arg(long, help_heading = "Model", allow_hyphen_values = true)]
    u_ik_flow: Option<f64>,
    /// Susceptible grid nodes
    #[arg(long, help_heading = "Grid")]
    n_s: Option<usize>,
    /// Susceptible grid lower bound
    #[arg(long, help_heading = "Grid")]
    s_lo: Option<f64>,
    /// Susceptible grid upper bound
    #[arg(long, help_heading = "Grid")]
    s_hi: Option<f64>,
    /// Prevalence grid nodes
    #[arg(long, help_heading = "Grid")]
    n_i: Option<usize>,
    /// Prevalence grid lower bound
    #[arg(long, help_heading = "Grid")]
    i_lo: Option<f64>,
    /// Prevalence grid upper bound
    #[arg(long, help_heading = "Grid")]
    i_hi: Option<f64>,
    /// Prevalence grid median node
    #[arg(long, help_heading = "Grid")]
    i_median: Option<f64>,
    /// Belief grid nodes for the recall equilibrium
    #[arg(long, help_heading = "Grid")]
    n_mu: Option<usize>,
    /// Integration step in days
    #[arg(long, help_heading = "Run")]
    dt: Option<f64>,
    /// Simulation horizon in days
    #[arg(long, help_heading = "Run")]
    horizon: Option<f64>,
    /// Initial susceptible share
    #[arg(long, help_heading = "Run")]
    s0: Option<f64>,
    /// Initial prevalence
    #[arg(long, help_heading = "Run")]
    i0: Option<f64>,
    /// Initial dead share
    #[arg(long, help_heading = "Run")]
    d0: Option<f64>,
    /// Policy iteration stopping tolerance
    #[arg(long, help_heading = "Solver")]
    policy_tol: Option<f64>,
    /// Stationary solve residual tolerance
    #[arg(long, help_heading = "Solver")]
    linear_tol: Option<f64>,
    /// Policy iteration cap
    #[arg(long, help_heading = "Solver")]
    max_outer: Option<usize>,
    /// Recall equilibrium outer fixed-point tolerance
    #[arg(long, help_heading = "Solver")]
    prme_outer_tol: Option<f64>,
    /// Recall equilibrium best-response tolerance
    #[arg(long, help_heading = "Solver")]
    prme_inner_tol: Option<f64>,
    /// Recall equilibrium outer iteration cap
    #[arg(long, help_heading = "Solver")]
    prme_max_outer: Option<usize>,
    /// Recall equilibrium inner iteration cap
    #[arg(long, help_heading = "Solver")]
    prme_max_inner: Option<usize>,
    /// Recall equilibrium outer damping in (0, 1]
    #[arg(long, help_heading = "Solver")]
    prme_damping: Option<f64>,
    /// Chain wiring: decoupled or joint
    #[arg(long, help_heading = "Solver")]
    wiring: Option<String>,
    /// Parallel sweep jobs; 0 means one per core
    #[arg(long, help_heading = "Run")]
    jobs: Option<usize>,
    /// Population behind the epidemic data counts
    #[arg(long, help_heading = "Calibration")]
    population: Option<f64>,
    /// Lower end of the death-utility search bracket
    #[arg(long, help_heading = "Calibration", allow_hyphen_values = true)]
    bracket_lo: Option<f64>,
    /// Upper end of the death-utility search bracket
    #[arg(long, help_heading = "Calibration", allow_hyphen_values = true)]
    bracket_hi: Option<f64>,
    /// Peak prevalence to calibrate to; estimated from the data when unset
    #[arg(long, help_heading = "Calibration")]
    target_peak: Option<f64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply_to(&self, cfg: &mut RunConfig) -> CliResult {
        macro_rules! set {
            ($field:expr, $target:expr) => {
                if let Some(v) = $field {
                    $target = v;
                }
            };
        }
        set!(self.r, cfg.params.r);
        set!(self.nu, cfg.params.nu);
        set!(self.beta, cfg.params.beta);
        set!(self.gamma, cfg.params.gamma);
        set!(self.sigma, cfg.params.sigma);
        set!(self.delta0, cfg.params.delta0);
        set!(self.alpha, cfg.params.alpha);
        set!(self.a_min, cfg.params.a_min);
        set!(self.u_d, cfg.params.u_d);
        set!(self.a_ik, cfg.params.a_ik);
        set!(self.u_ik_flow, cfg.params.u_ik_flow);
        set!(self.n_s, cfg.grid.n_s);
        set!(self.s_lo, cfg.grid.s_lo);
        set!(self.s_hi, cfg.grid.s_hi);
        set!(self.n_i, cfg.grid.n_i);
        set!(self.i_lo, cfg.grid.i_lo);
        set!(self.i_hi, cfg.grid.i_hi);
        set!(self.i_median, cfg.grid.i_median);
        set!(self.n_mu, cfg.grid.n_mu);
        set!(self.dt, cfg.dt);
        set!(self.horizon, cfg.horizon);
        set!(self.s0, cfg.s0);
        set!(self.i0, cfg.i0);
        set!(self.d0, cfg.d0);
        set!(self.policy_tol, cfg.iter.policy_tol);
        if let Some(v) = self.linear_tol {
            cfg.iter.linear_tol = v;
            cfg.prme.linear_tol = v;
        }
        set!(self.max_outer, cfg.iter.max_outer);
        set!(self.prme_outer_tol, cfg.prme.outer_tol);
        set!(self.prme_inner_tol, cfg.prme.inner_tol);
        set!(self.prme_max_outer, cfg.prme.max_outer);
        set!(self.prme_max_inner, cfg.prme.max_inner);
        set!(self.prme_damping, cfg.prme.damping);
        if let Some(w) = &self.wiring {
            cfg.apply("wiring", w).map_err(config_err)?;
        }
        set!(self.jobs, cfg.jobs);
        set!(self.population, cfg.population);
        set!(self.bracket_lo, cfg.bracket.0);
        set!(self.bracket_hi, cfg.bracket.1);
        if let Some(t) = self.target_peak {
            cfg.target_peak = Some(t);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ValueForm {
    /// Non-diagnosed agent value field
    Agents,
    /// Planner cost field
    Planner,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the selected allocation(s) and write policy/value fields
    Solve {
        /// Allocation to solve
        #[arg(long, value_enum)]
        allocation: Option<AllocationChoice>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Integrate the epidemic path under a saved policy field
    Simulate {
        /// Policy field CSV produced by `solve`
        #[arg(long, value_name = "FILE")]
        policy: PathBuf,
        /// Value field CSV; enables the welfare cost in the metrics
        #[arg(long, value_name = "FILE")]
        value: Option<PathBuf>,
        /// How to read the value artifact
        #[arg(long, value_enum, default_value = "agents")]
        value_form: ValueForm,
        /// Planner policy tabulated along the path (default: spp_policy.csv
        /// next to the policy artifact, when present)
        #[arg(long, value_name = "FILE")]
        planner_policy: Option<PathBuf>,
        /// Static-efficient policy tabulated along the path (default:
        /// static_efficient_policy.csv next to the policy artifact)
        #[arg(long, value_name = "FILE")]
        static_policy: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve and simulate across a parameter sweep, one summary row per
    /// (allocation, value)
    Sweep {
        /// Sweep axis
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        /// Comma-separated sweep values; T_vaccine values are in years
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        /// Allocation(s) to sweep
        #[arg(long, value_enum)]
        allocation: Option<AllocationChoice>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit the death-state utility to an epidemic time series
    Calibrate {
        /// CSV with "date,cum_cases,cum_deaths" rows
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

struct CliError {
    code: i32,
    message: String,
}

/// episir's glob export includes its own single-parameter `Result`; the CLI
/// needs the two-sided form for its exit-code errors.
type CliResult<T = ()> = std::result::Result<T, CliError>;

fn config_err(message: String) -> CliError {
    CliError { code: 2, message }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParams(_) | Error::InvalidGrid(_) | Error::Domain(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Solver(_) => 4,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 3,
            message: format!("i/o error: {e}"),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn run(cli: Cli) -> CliResult {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path).map_err(config_err)?;
    }
    match &cli.command {
        Command::Solve {
            allocation,
            overrides,
        } => {
            overrides.apply_to(&mut cfg)?;
            if let Some(a) = allocation {
                cfg.allocation = *a;
            }
            cfg.validate().map_err(config_err)?;
            cmd_solve(&cfg)
        }
        Command::Simulate {
            policy,
            value,
            value_form,
            planner_policy,
            static_policy,
            overrides,
        } => {
            overrides.apply_to(&mut cfg)?;
            cfg.validate().map_err(config_err)?;
            cmd_simulate(
                &cfg,
                policy,
                value.as_deref(),
                *value_form,
                planner_policy.as_deref(),
                static_policy.as_deref(),
            )
        }
        Command::Sweep {
            axis,
            values,
            allocation,
            overrides,
        } => {
            overrides.apply_to(&mut cfg)?;
            if let Some(a) = axis {
                cfg.axis = *a;
            }
            if let Some(v) = values {
                cfg.apply("values", v).map_err(config_err)?;
            }
            if let Some(a) = allocation {
                cfg.allocation = *a;
            }
            cfg.validate().map_err(config_err)?;
            cmd_sweep(&cfg)
        }
        Command::Calibrate { data, overrides } => {
            overrides.apply_to(&mut cfg)?;
            cfg.validate().map_err(config_err)?;
            cmd_calibrate(&cfg, data)
        }
    }
}

/// Writes `manifest.txt`: a timestamp, the hash of the resolved
/// configuration, the configuration itself, and per-run report lines. The
/// timestamp is the only line that varies between identical runs.
fn write_manifest(cfg: &RunConfig, command: &str, extra: &[String]) -> CliResult {
    let config_block = format!("command = {command}\n{}", cfg.render());
    let mut h = DefaultHasher::new();
    config_block.hash(&mut h);
    let body = format!(
        "# episir run manifest\ntimestamp = {}\nconfig_hash = {:016x}\n{config_block}{}",
        chrono::Utc::now().to_rfc3339(),
        h.finish(),
        extra.concat()
    );
    std::fs::write(cfg.out_dir.join("manifest.txt"), body)?;
    Ok(())
}

fn report_lines(extra: &mut Vec<String>, label: &str, report: &SolveReport) {
    extra.push(format!("{label}_iterations = {}\n", report.outer_iterations));
    extra.push(format!(
        "{label}_linear_residual = {:e}\n",
        report.linear_residual
    ));
    extra.push(format!(
        "{label}_policy_change = {:e}\n",
        report.policy_change
    ));
    extra.push(format!("{label}_converged = {}\n", report.converged));
}

fn cmd_solve(cfg: &RunConfig) -> CliResult {
    let grid = StateGrid::from_spec(&cfg.grid)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let list: Vec<AllocationChoice> = match cfg.allocation {
        AllocationChoice::All => vec![
            AllocationChoice::Myopic,
            AllocationChoice::Spp,
            AllocationChoice::Pbe,
            AllocationChoice::Prme,
            AllocationChoice::StaticEfficient,
        ],
        one => vec![one],
    };
    if list.contains(&AllocationChoice::Prme) && cfg.grid.n_mu < 2 {
        return Err(config_err(
            "the recall equilibrium needs a belief grid: set n_mu >= 2".into(),
        ));
    }

    let mut extra = Vec::new();
    let mut outputs = Vec::new();
    let mut failed = Vec::new();
    let mut pbe_cache: Option<AllocationResult> = None;

    let write_field = |field: &Field, name: &str, outputs: &mut Vec<String>| -> CliResult {
        field.write_csv(&grid, &cfg.out_dir.join(name))?;
        outputs.push(name.to_string());
        Ok(())
    };

    for choice in list {
        let t0 = Instant::now();
        match choice {
            AllocationChoice::Myopic | AllocationChoice::Spp | AllocationChoice::Pbe => {
                let res = match choice {
                    AllocationChoice::Myopic => solve_myopic(&cfg.params, &grid)?,
                    AllocationChoice::Spp => solve_spp(&cfg.params, &grid, &cfg.iter)?,
                    _ => solve_pbe(&cfg.params, &grid, &cfg.iter, cfg.wiring)?,
                };
                let label = res.allocation.label();
                write_field(&res.policy, &format!("{label}_policy.csv"), &mut outputs)?;
                write_field(&res.value, &format!("{label}_value.csv"), &mut outputs)?;
                report_lines(&mut extra, label, &res.report);
                println!(
                    "{label}: {} iterations, residual {:.2e}, {:.2} s",
                    res.report.outer_iterations,
                    res.report.linear_residual,
                    t0.elapsed().as_secs_f64()
                );
                if !res.report.converged {
                    failed.push(label.to_string());
                }
                if choice == AllocationChoice::Pbe {
                    pbe_cache = Some(res);
                }
            }
            AllocationChoice::Prme => {
                let prme = solve_prme(&cfg.params, &grid, &cfg.prme)?;
                let label = prme.result.allocation.label();
                write_field(&prme.result.policy, &format!("{label}_policy.csv"), &mut outputs)?;
                write_field(&prme.result.value, &format!("{label}_value.csv"), &mut outputs)?;
                write_field(&prme.policy_mu, &format!("{label}_policy_mu.csv"), &mut outputs)?;
                write_field(&prme.value_mu, &format!("{label}_value_mu.csv"), &mut outputs)?;
                report_lines(&mut extra, label, &prme.result.report);
                println!(
                    "{label}: {} outer iterations, residual {:.2e}, {:.2} s",
                    prme.result.report.outer_iterations,
                    prme.result.report.linear_residual,
                    t0.elapsed().as_secs_f64()
                );
                if !prme.result.report.converged {
                    failed.push(label.to_string());
                }
            }
            AllocationChoice::StaticEfficient => {
                let owned;
                let pbe = match pbe_cache.as_ref() {
                    Some(r) => r,
                    None => {
                        owned = solve_pbe(&cfg.params, &grid, &cfg.iter, cfg.wiring)?;
                        if !owned.report.converged {
                            failed.push("pbe (for static_efficient)".to_string());
                        }
                        &owned
                    }
                };
                let lockdown = static_efficient_lockdown(pbe, &cfg.params, &grid)?;
                let quarantine = static_efficient_quarantine(pbe, &cfg.params, &grid)?;
                write_field(&lockdown, "static_efficient_policy.csv", &mut outputs)?;
                write_field(&quarantine, "static_efficient_quarantine.csv", &mut outputs)?;
                extra.push("static_efficient_source = pbe\n".to_string());
                println!(
                    "static_efficient: rules from the equilibrium values, {:.2} s",
                    t0.elapsed().as_secs_f64()
                );
            }
            AllocationChoice::All => unreachable!(),
        }
    }
    extra.push(format!("outputs = {}\n", outputs.join(", ")));
    write_manifest(cfg, "solve", &extra)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: 4,
            message: format!(
                "allocations did not converge within the iteration caps: {}",
                failed.join(", ")
            ),
        })
    }
}

fn cmd_simulate(
    cfg: &RunConfig,
    policy_path: &Path,
    value_path: Option<&Path>,
    value_form: ValueForm,
    planner_policy: Option<&Path>,
    static_policy: Option<&Path>,
) -> CliResult {
    let grid = StateGrid::from_spec(&cfg.grid)?;
    let policy = Field::read_csv(&grid, policy_path, "policy")?;
    let z0 = InitialState {
        s: cfg.s0,
        i: cfg.i0,
        d: cfg.d0,
    };
    let path = simulate_path(
        &PolicySource::Field {
            grid: &grid,
            field: &policy,
        },
        z0,
        &cfg.params,
        cfg.horizon,
        cfg.dt,
    )?;
    let wc = match value_path {
        Some(vp) => {
            let vf = Field::read_csv(&grid, vp, "value")?;
            match value_form {
                ValueForm::Agents => welfare_cost(
                    WelfareInput::Agents {
                        v_u: &vf,
                        v_ik: value_known_infected(&cfg.params),
                    },
                    z0,
                    &cfg.params,
                    &grid,
                )?,
                ValueForm::Planner => welfare_cost(
                    WelfareInput::Planner { cost: &vf },
                    z0,
                    &cfg.params,
                    &grid,
                )?,
            }
        }
        None => f64::NAN,
    };
    let metrics = path_metrics(&path, &cfg.params, wc);

    std::fs::create_dir_all(&cfg.out_dir)?;
    path.write_csv(&cfg.out_dir.join("path.csv"))?;
    std::fs::write(cfg.out_dir.join("metrics.txt"), metrics.to_text())?;
    let mut outputs = vec!["path.csv".to_string(), "metrics.txt".to_string()];

    // planner and static-efficient activity along this path, when available
    let sibling = |name: &str| -> Option<PathBuf> {
        let candidate = policy_path.parent()?.join(name);
        (candidate.is_file() && candidate != policy_path).then_some(candidate)
    };
    let planner = planner_policy
        .map(Path::to_path_buf)
        .or_else(|| sibling("spp_policy.csv"));
    let static_eff = static_policy
        .map(Path::to_path_buf)
        .or_else(|| sibling("static_efficient_policy.csv"));
    let mut overlays: Vec<(&str, Vec<f64>)> = Vec::new();
    if let Some(p) = &planner {
        let f = Field::read_csv(&grid, p, "planner_policy")?;
        overlays.push(("planner", field_along_path(&path, &grid, &f)));
    }
    if let Some(p) = &static_eff {
        let f = Field::read_csv(&grid, p, "static_policy")?;
        overlays.push(("static_efficient", field_along_path(&path, &grid, &f)));
    }
    if !overlays.is_empty() {
        let mut text = String::from("t,activity");
        for (name, _) in &overlays {
            write!(text, ",{name}").unwrap();
        }
        text.push('\n');
        for k in 0..path.t.len() {
            write!(text, "{:.16e},{:.16e}", path.t[k], path.a_u[k]).unwrap();
            for (_, col) in &overlays {
                write!(text, ",{:.16e}", col[k]).unwrap();
            }
            text.push('\n');
        }
        std::fs::write(cfg.out_dir.join("activity_along_path.csv"), text)?;
        outputs.push("activity_along_path.csv".to_string());
    }

    let mut extra = vec![format!("input_policy = {}\n", policy_path.display())];
    if let Some(vp) = value_path {
        extra.push(format!("input_value = {}\n", vp.display()));
    }
    extra.push(format!("outputs = {}\n", outputs.join(", ")));
    write_manifest(cfg, "simulate", &extra)?;
    print!("{}", metrics.to_text());
    Ok(())
}

fn quote_csv(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

/// Solves one sweep point and formats its summary row; solver trouble is
/// recorded in the warning column instead of aborting the sweep.
fn sweep_row(cfg: &RunConfig, grid: &StateGrid, alloc: Allocation, value: f64) -> String {
    let label = alloc.label();
    let axis = cfg.axis.label();
    let mut p = cfg.params;
    match cfg.axis {
        SweepAxis::Sigma => p.sigma = value,
        SweepAxis::TVaccine => {
            if !(value > 0.0) {
                return format!(
                    "{label},{axis},{value},nan,nan,nan,none,{}\n",
                    quote_csv("T_vaccine values must be positive years")
                );
            }
            p.nu = 1.0 / (365.25 * value);
        }
        SweepAxis::AIk => p.a_ik = value,
        SweepAxis::None => unreachable!(),
    }
    match sweep_point(cfg, grid, alloc, &p) {
        Ok((m, warning)) => {
            let herd = match m.herd_immunity_day {
                Some(day) => format!("{day}"),
                None => "none".to_string(),
            };
            format!(
                "{label},{axis},{value},{},{},{},{herd},{}\n",
                m.welfare_cost,
                m.expected_deaths_per_100k,
                m.peak_prevalence,
                quote_csv(&warning)
            )
        }
        Err(e) => format!(
            "{label},{axis},{value},nan,nan,nan,none,{}\n",
            quote_csv(&e.to_string())
        ),
    }
}

fn sweep_point(
    cfg: &RunConfig,
    grid: &StateGrid,
    alloc: Allocation,
    p: &ModelParams,
) -> Result<(PathMetrics, String)> {
    let res = match alloc {
        Allocation::Myopic => solve_myopic(p, grid)?,
        Allocation::Spp => solve_spp(p, grid, &cfg.iter)?,
        Allocation::Pbe => solve_pbe(p, grid, &cfg.iter, cfg.wiring)?,
        Allocation::Prme => solve_prme(p, grid, &cfg.prme)?.result,
        Allocation::StaticEfficient => unreachable!(),
    };
    let warning = if res.report.converged {
        String::new()
    } else {
        format!(
            "did not converge: last policy change {:.3e}",
            res.report.policy_change
        )
    };
    let z0 = InitialState {
        s: cfg.s0,
        i: cfg.i0,
        d: cfg.d0,
    };
    let path = simulate_path(
        &PolicySource::Field {
            grid,
            field: &res.policy,
        },
        z0,
        p,
        cfg.horizon,
        cfg.dt,
    )?;
    let wc = match alloc {
        Allocation::Spp => welfare_cost(WelfareInput::Planner { cost: &res.value }, z0, p, grid)?,
        _ => welfare_cost(
            WelfareInput::Agents {
                v_u: &res.value,
                v_ik: res.v_ik,
            },
            z0,
            p,
            grid,
        )?,
    };
    Ok((path_metrics(&path, p, wc), warning))
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult {
    if cfg.axis == SweepAxis::None {
        return Err(config_err(
            "sweep needs an axis: set axis to sigma, T_vaccine, or a_Ik, and give values".into(),
        ));
    }
    let allocs: Vec<Allocation> = match cfg.allocation {
        AllocationChoice::All => vec![Allocation::Myopic, Allocation::Spp, Allocation::Pbe],
        AllocationChoice::Myopic => vec![Allocation::Myopic],
        AllocationChoice::Spp => vec![Allocation::Spp],
        AllocationChoice::Pbe => vec![Allocation::Pbe],
        AllocationChoice::Prme => vec![Allocation::Prme],
        AllocationChoice::StaticEfficient => {
            return Err(config_err(
                "sweep supports the myopic, spp, pbe, and prme allocations (or all)".into(),
            ))
        }
    };
    if allocs.contains(&Allocation::Prme) && cfg.grid.n_mu < 2 {
        return Err(config_err(
            "the recall equilibrium needs a belief grid: set n_mu >= 2".into(),
        ));
    }
    let grid = StateGrid::from_spec(&cfg.grid)?;
    let points: Vec<(Allocation, f64)> = allocs
        .iter()
        .flat_map(|&a| cfg.values.iter().map(move |&v| (a, v)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| config_err(format!("cannot build the sweep thread pool: {e}")))?;
    let rows: Vec<String> = pool.install(|| {
        points
            .par_iter()
            .map(|&(alloc, v)| sweep_row(cfg, &grid, alloc, v))
            .collect()
    });

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from(
        "allocation,axis,value,welfare_cost,expected_deaths_per_100k,peak_prevalence,herd_immunity_day,warning\n",
    );
    for row in &rows {
        text.push_str(row);
    }
    std::fs::write(cfg.out_dir.join("sweep.csv"), text)?;
    let extra = vec![format!("points = {}\n", rows.len()), "outputs = sweep.csv\n".to_string()];
    write_manifest(cfg, "sweep", &extra)?;
    println!(
        "sweep over {} wrote {} rows to {}",
        cfg.axis.label(),
        rows.len(),
        cfg.out_dir.join("sweep.csv").display()
    );
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig, data: &Path) -> CliResult {
    // the statistical-life conversion is printed on every calibration run as
    // an external cross-check on the fitted magnitude
    let vsl = vsl_u_d(238.7, 0.05);
    println!("vsl_cross_check (v = 238.7, annual discount 0.05) = {vsl:.3}");

    let series = load_epidemic_csv(data, cfg.population)?;
    let grid = StateGrid::from_spec(&cfg.grid)?;
    let cfr = case_fatality_series(&series);
    let prevalence = prevalence_estimate(&series, &cfg.params)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from("date,cfr\n");
    for (date, value) in series.dates.iter().zip(&cfr) {
        match value {
            Some(v) => writeln!(text, "{date},{v}").unwrap(),
            None => writeln!(text, "{date},").unwrap(),
        }
    }
    std::fs::write(cfg.out_dir.join("cfr.csv"), text)?;

    let mut text = String::from("date,prevalence\n");
    for (date, value) in series.dates.iter().zip(&prevalence) {
        writeln!(text, "{date},{value}").unwrap();
    }
    std::fs::write(cfg.out_dir.join("prevalence.csv"), text)?;

    let target = cfg
        .target_peak
        .unwrap_or_else(|| prevalence.iter().cloned().fold(0.0, f64::max));
    let report = calibrate_u_d(target, &cfg.params, &grid, cfg.bracket, true)?;

    let mut text = String::new();
    writeln!(text, "u_d = {}", report.u_d).unwrap();
    writeln!(text, "target_peak = {}", report.target_peak).unwrap();
    writeln!(text, "achieved_peak = {}", report.achieved_peak).unwrap();
    writeln!(text, "evaluations = {}", report.evaluations).unwrap();
    writeln!(text, "bracket = ({}, {})", report.bracket.0, report.bracket.1).unwrap();
    writeln!(
        text,
        "bracket_peaks = ({}, {})",
        report.bracket_peaks.0, report.bracket_peaks.1
    )
    .unwrap();
    writeln!(
        text,
        "peak_monotone_in_u_d = {}",
        report.peak_monotone_in_u_d
    )
    .unwrap();
    let points: Vec<String> = report
        .diagnostic_points
        .iter()
        .map(|(u, pk)| format!("({u}, {pk})"))
        .collect();
    writeln!(text, "diagnostic_points = {}", points.join(" ")).unwrap();
    writeln!(text, "vsl_cross_check = {vsl:.3}").unwrap();
    std::fs::write(cfg.out_dir.join("calibration.txt"), text)?;

    let extra = vec![
        format!("input_data = {}\n", data.display()),
        format!("fitted_u_d = {}\n", report.u_d),
        format!("calibration_evaluations = {}\n", report.evaluations),
        "outputs = cfr.csv, prevalence.csv, calibration.txt\n".to_string(),
    ];
    write_manifest(cfg, "calibrate", &extra)?;
    println!(
        "fitted u_D = {:.4} (target peak {:.5}, achieved {:.5}, {} evaluations)",
        report.u_d, report.target_peak, report.achieved_peak, report.evaluations
    );
    Ok(())
}
