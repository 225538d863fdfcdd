//! Epidemic time-series ingestion, prevalence reconstruction from death
//! counts, and calibration of the death-state utility to a target peak.

use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::kernel::{IterationConfig, Wiring};
use crate::model::ModelParams;
use crate::pathsim::{simulate_path, InitialState, PolicySource};
use crate::solvers::solve_pbe;
use chrono::NaiveDate;
use std::path::Path;

/// Cumulative confirmed cases and deaths, per capita, on consecutive days.
#[derive(Debug, Clone)]
pub struct EpidemicSeries {
    pub dates: Vec<NaiveDate>,
    pub cum_cases: Vec<f64>,
    pub cum_deaths: Vec<f64>,
    pub population: f64,
}

/// Reads "date,cum_cases,cum_deaths" rows with ISO dates and nonnegative
/// integer counts, dividing by the population. Rejects files whose cumulative
/// columns ever decrease, whose dates are not consecutive days, or whose
/// deaths exceed cases, naming the offending row.
pub fn load_epidemic_csv(path: &Path, population: f64) -> Result<EpidemicSeries> {
    if !(population > 0.0) {
        return Err(Error::InvalidParams(format!(
            "population must be positive, got {population}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?;
    let expect = ["date", "cum_cases", "cum_deaths"];
    if headers.len() != 3 || headers.iter().zip(expect).any(|(h, e)| h != e) {
        return Err(Error::Data(format!(
            "expected header 'date,cum_cases,cum_deaths', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut series = EpidemicSeries {
        dates: Vec::new(),
        cum_cases: Vec::new(),
        cum_deaths: Vec::new(),
        population,
    };
    let mut first_case_seen = false;
    for (idx, record) in reader.records().enumerate() {
        let rowno = idx + 2; // 1-based, counting the header line
        let record = record.map_err(|e| Error::Data(format!("row {rowno}: {e}")))?;
        if record.len() != 3 {
            return Err(Error::Data(format!(
                "row {rowno}: expected 3 fields, found {}",
                record.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("row {rowno}: bad date '{}': {e}", &record[0])))?;
        let parse_count = |field: &str, name: &str| -> Result<u64> {
            field.parse::<u64>().map_err(|_| {
                Error::Data(format!(
                    "row {rowno}: {name} must be a nonnegative integer, found '{field}'"
                ))
            })
        };
        let cases = parse_count(&record[1], "cum_cases")?;
        let deaths = parse_count(&record[2], "cum_deaths")?;
        if let Some(&prev) = series.dates.last() {
            if prev.succ_opt() != Some(date) {
                return Err(Error::Data(format!(
                    "row {rowno}: date {date} does not follow {prev} by one day"
                )));
            }
        }
        let cases = cases as f64 / population;
        let deaths = deaths as f64 / population;
        if let Some(&prev) = series.cum_cases.last() {
            if cases < prev {
                return Err(Error::Data(format!(
                    "row {rowno}: cum_cases decreases ({} -> {})",
                    prev * population,
                    cases * population
                )));
            }
        }
        if let Some(&prev) = series.cum_deaths.last() {
            if deaths < prev {
                return Err(Error::Data(format!(
                    "row {rowno}: cum_deaths decreases ({} -> {})",
                    prev * population,
                    deaths * population
                )));
            }
        }
        if cases > 0.0 {
            first_case_seen = true;
        }
        if first_case_seen && deaths > cases {
            return Err(Error::Data(format!(
                "row {rowno}: cum_deaths exceeds cum_cases"
            )));
        }
        series.dates.push(date);
        series.cum_cases.push(cases);
        series.cum_deaths.push(deaths);
    }
    if series.dates.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no data rows",
            path.display()
        )));
    }
    Ok(series)
}

/// Deaths over confirmed cases, day by day; undefined before the first case.
pub fn case_fatality_series(series: &EpidemicSeries) -> Vec<Option<f64>> {
    series
        .cum_cases
        .iter()
        .zip(series.cum_deaths.iter())
        .map(|(&c, &d)| if c > 0.0 { Some(d / c) } else { None })
        .collect()
}

/// Prevalence implied by the death accounting: daily death increments equal
/// gamma * delta0 * I, so I_t = (D_{t+1} - D_t) / (gamma * delta0), smoothed
/// by a centered 7-day moving average truncated at the series ends. The
/// population fatality rate delta0 plays the role of the per-infection death
/// probability regardless of how many infections are diagnosed.
pub fn prevalence_estimate(series: &EpidemicSeries, params: &ModelParams) -> Result<Vec<f64>> {
    let n = series.cum_deaths.len();
    if n < 8 {
        return Err(Error::Data(format!(
            "prevalence estimation needs at least 8 days of data, got {n}"
        )));
    }
    let scale = params.gamma * params.delta0;
    let raw: Vec<f64> = series
        .cum_deaths
        .windows(2)
        .map(|w| (w[1] - w[0]) / scale)
        .collect();
    let m = raw.len();
    let mut smooth = Vec::with_capacity(m);
    for t in 0..m {
        let lo = t.saturating_sub(3);
        let hi = (t + 3).min(m - 1);
        let window = &raw[lo..=hi];
        smooth.push(window.iter().sum::<f64>() / window.len() as f64);
    }
    Ok(smooth)
}

/// Record of one calibration run.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub u_d: f64,
    pub target_peak: f64,
    pub achieved_peak: f64,
    pub evaluations: usize,
    pub bracket: (f64, f64),
    pub bracket_peaks: (f64, f64),
    /// (u_d, peak) probe points across the bracket, recorded when requested.
    pub diagnostic_points: Vec<(f64, f64)>,
    /// Whether the probe points were increasing in u_d.
    pub peak_monotone_in_u_d: bool,
}

/// Peak prevalence of the equilibrium path at the given death-state utility.
fn equilibrium_peak(u_d: f64, base: &ModelParams, grid: &StateGrid) -> Result<f64> {
    let mut params = *base;
    params.u_d = u_d;
    let pbe = solve_pbe(&params, grid, &IterationConfig::default(), Wiring::Decoupled)?;
    if !pbe.report.converged {
        return Err(Error::Solver(format!(
            "equilibrium solve at u_d={u_d} did not converge (last change {:.3e})",
            pbe.report.policy_change
        )));
    }
    let path = simulate_path(
        &PolicySource::Field {
            grid,
            field: &pbe.policy,
        },
        InitialState::default(),
        &params,
        3650.0,
        0.1,
    )?;
    Ok(path.i.iter().cloned().fold(0.0, f64::max))
}

/// Bisection on u_D until the equilibrium path's peak prevalence matches the
/// target within 1e-3. Each evaluation is a full equilibrium solve plus a
/// path simulation; the evaluation budget is capped at 40.
pub fn calibrate_u_d(
    target_peak: f64,
    params: &ModelParams,
    grid: &StateGrid,
    bounds: (f64, f64),
    with_diagnostics: bool,
) -> Result<CalibrationReport> {
    if !(target_peak > 0.0 && target_peak < 1.0) {
        return Err(Error::InvalidParams(format!(
            "target peak must lie in (0, 1), got {target_peak}"
        )));
    }
    let (mut lo, mut hi) = bounds;
    if !(lo < hi && hi < 0.0) {
        return Err(Error::InvalidParams(format!(
            "u_d bracket must be ordered and negative, got ({lo}, {hi})"
        )));
    }
    const MAX_EVALS: usize = 40;
    let mut evals = 0;
    let peak_at = |u: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        equilibrium_peak(u, params, grid)
    };
    let peak_lo = peak_at(lo, &mut evals)?;
    let peak_hi = peak_at(hi, &mut evals)?;
    if !(peak_lo <= target_peak && target_peak <= peak_hi) {
        return Err(Error::Solver(format!(
            "target peak {target_peak} is not bracketed: peak({lo}) = {peak_lo}, peak({hi}) = {peak_hi}"
        )));
    }
    let bracket_peaks = (peak_lo, peak_hi);
    let bracket = (lo, hi);

    let mut diagnostic_points = Vec::new();
    let mut peak_monotone = true;
    if with_diagnostics {
        let mut last = f64::NEG_INFINITY;
        for k in 0..5 {
            let u = lo + (hi - lo) * k as f64 / 4.0;
            let pk = match k {
                0 => peak_lo,
                4 => peak_hi,
                _ => peak_at(u, &mut evals)?,
            };
            peak_monotone &= pk >= last;
            last = pk;
            diagnostic_points.push((u, pk));
        }
    }

    let (mut u_mid, mut peak_mid) = (0.5 * (lo + hi), f64::NAN);
    loop {
        if evals >= MAX_EVALS {
            return Err(Error::Solver(format!(
                "calibration used {MAX_EVALS} evaluations without reaching the peak tolerance; last peak {peak_mid} at u_d {u_mid}"
            )));
        }
        u_mid = 0.5 * (lo + hi);
        peak_mid = peak_at(u_mid, &mut evals)?;
        if (peak_mid - target_peak).abs() <= 1e-3 {
            break;
        }
        if peak_mid < target_peak {
            lo = u_mid;
        } else {
            hi = u_mid;
        }
    }
    Ok(CalibrationReport {
        u_d: u_mid,
        target_peak,
        achieved_peak: peak_mid,
        evaluations: evals,
        bracket,
        bracket_peaks,
        diagnostic_points,
        peak_monotone_in_u_d: peak_monotone,
    })
}

/// Death-state utility implied by a value of statistical life expressed in
/// per-period consumption units: u_D = -annual_discount * v, the linearized
/// trade-off between a period of life and the discounted value of losing all
/// future ones.
pub fn vsl_u_d(v: f64, annual_discount: f64) -> f64 {
    -annual_discount * v
}
