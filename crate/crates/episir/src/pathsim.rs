//! Deterministic epidemic trajectories under a fixed activity policy, with
//! welfare, death-toll, and herd-immunity metrics.

use crate::error::{Error, Result};
use crate::grid::{Field, StateGrid};
use crate::model::{effective_r, inverse_utility, ModelParams};
use std::io::Write as _;
use std::path::Path;

/// Activity rule applied along the path.
pub enum PolicySource<'a> {
    Constant(f64),
    Field { grid: &'a StateGrid, field: &'a Field },
}

impl PolicySource<'_> {
    pub fn activity(&self, s: f64, i: f64) -> f64 {
        match self {
            PolicySource::Constant(a) => *a,
            PolicySource::Field { grid, field } => grid.interpolate(&field.values, s, i),
        }
    }
}

/// Initial population shares (susceptible, infected, dead).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub s: f64,
    pub i: f64,
    pub d: f64,
}

impl Default for InitialState {
    /// One infection per million in an otherwise susceptible population.
    fn default() -> Self {
        InitialState {
            s: 1.0 - 1e-6,
            i: 1e-6,
            d: 0.0,
        }
    }
}

impl InitialState {
    pub fn validate(&self) -> Result<()> {
        let ok = self.s >= 0.0
            && self.i >= 0.0
            && self.d >= 0.0
            && self.s + self.i + self.d <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::Domain(format!(
                "initial shares ({}, {}, {}) are not a valid population split",
                self.s, self.i, self.d
            )));
        }
        Ok(())
    }
}

/// Sampled trajectory. Recovered share is implied: R + D = 1 - S - I.
pub struct PathSeries {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub d: Vec<f64>,
    /// Activity applied at each sample.
    pub a_u: Vec<f64>,
    pub r_eff: Vec<f64>,
    pub dt: f64,
}

/// Summary numbers of one trajectory.
#[derive(Debug, Clone, Copy)]
pub struct PathMetrics {
    pub peak_prevalence: f64,
    pub herd_immunity_day: Option<f64>,
    /// Permanent-consumption share lost, from the solved value fields.
    pub welfare_cost: f64,
    pub expected_deaths_per_100k: f64,
    pub terminal_day: f64,
    /// Upper bound on deaths unaccounted for because the path was truncated
    /// with prevalence still positive; zero when the tail is negligible.
    pub deaths_truncation_bound: f64,
}

/// Fixed-step 4th-order integration of the epidemic law of motion
/// dS = -beta a S ((1-sigma) a + sigma a_ik) I, dI = same - gamma I,
/// dD = gamma delta sigma I, with the activity read from the policy at every
/// stage point. Stops early once prevalence is below 1e-12.
pub fn simulate_path(
    policy: &PolicySource,
    z0: InitialState,
    params: &ModelParams,
    horizon: f64,
    dt: f64,
) -> Result<PathSeries> {
    params.validate()?;
    z0.validate()?;
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::Domain(format!(
            "need positive step and horizon, got dt={dt} horizon={horizon}"
        )));
    }
    let death_rate = params.gamma * params.delta() * params.sigma;
    let deriv = |s: f64, i: f64| -> (f64, f64, f64) {
        let a = policy.activity(s, i);
        let lambda = params.beta * a * s * ((1.0 - params.sigma) * a + params.sigma * params.a_ik) * i;
        (-lambda, lambda - params.gamma * i, death_rate * i)
    };
    let n_steps = (horizon / dt).round() as usize;
    let mut series = PathSeries {
        t: Vec::with_capacity(n_steps + 1),
        s: Vec::with_capacity(n_steps + 1),
        i: Vec::with_capacity(n_steps + 1),
        d: Vec::with_capacity(n_steps + 1),
        a_u: Vec::with_capacity(n_steps + 1),
        r_eff: Vec::with_capacity(n_steps + 1),
        dt,
    };
    let (mut s, mut i, mut d) = (z0.s, z0.i, z0.d);
    let record = |t: f64, s: f64, i: f64, d: f64, series: &mut PathSeries| {
        let a = policy.activity(s, i);
        series.t.push(t);
        series.s.push(s);
        series.i.push(i);
        series.d.push(d);
        series.a_u.push(a);
        series.r_eff.push(effective_r(s, a, params));
    };
    record(0.0, s, i, d, &mut series);
    for step in 1..=n_steps {
        let (k1s, k1i, k1d) = deriv(s, i);
        let (k2s, k2i, k2d) = deriv(s + 0.5 * dt * k1s, i + 0.5 * dt * k1i);
        let (k3s, k3i, k3d) = deriv(s + 0.5 * dt * k2s, i + 0.5 * dt * k2i);
        let (k4s, k4i, k4d) = deriv(s + dt * k3s, i + dt * k3i);
        s += dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        i += dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
        d += dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        let t = step as f64 * dt;
        let out_of_bounds = !(-1e-10..=1.0 + 1e-10).contains(&s)
            || !(-1e-10..=1.0 + 1e-10).contains(&i)
            || !(-1e-10..=1.0 + 1e-10).contains(&d)
            || s + i + d > 1.0 + 1e-10;
        if out_of_bounds {
            return Err(Error::Domain(format!(
                "state left the unit simplex at t={t}: ({s}, {i}, {d}); reduce dt"
            )));
        }
        s = s.clamp(0.0, 1.0);
        i = i.clamp(0.0, 1.0);
        d = d.clamp(0.0, 1.0);
        record(t, s, i, d, &mut series);
        if i < 1e-12 {
            break;
        }
    }
    Ok(series)
}

/// First sampled day with S at or below the herd-immunity threshold
/// gamma / beta; none if the path never reaches it.
pub fn herd_immunity_day(path: &PathSeries, params: &ModelParams) -> Option<f64> {
    let threshold = params.gamma / params.beta;
    path.t
        .iter()
        .zip(path.s.iter())
        .find(|(_, &s)| s <= threshold)
        .map(|(&t, _)| t)
}

/// Composite quadrature of uniformly sampled values, 4th-order accurate:
/// Simpson's rule, with a 3/8 block when the interval count is odd.
fn integrate_uniform(f: &[f64], dt: f64) -> f64 {
    let m = f.len().saturating_sub(1);
    match m {
        0 => 0.0,
        1 => 0.5 * dt * (f[0] + f[1]),
        2 => dt / 3.0 * (f[0] + 4.0 * f[1] + f[2]),
        3 => 3.0 * dt / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3]),
        _ => {
            let (simpson_end, tail) = if m.is_multiple_of(2) {
                (m, 0.0)
            } else {
                let b = m - 3;
                let t = 3.0 * dt / 8.0 * (f[b] + 3.0 * f[b + 1] + 3.0 * f[b + 2] + f[b + 3]);
                (b, t)
            };
            let mut acc = f[0] + f[simpson_end];
            let mut j = 1;
            while j < simpson_end {
                acc += if j % 2 == 1 { 4.0 * f[j] } else { 2.0 * f[j] };
                j += 1;
            }
            dt / 3.0 * acc + tail
        }
    }
}

/// Expected terminal death toll per 100k over the random vaccine arrival:
/// 1e5 times the integral of nu e^{-nu t} (D_t + delta sigma I_t) dt plus the
/// analytic tail e^{-nu T} (D_T + delta sigma I_T). If the vaccine arrives at
/// t, everyone already dead stays dead and the fraction delta of currently
/// diagnosed infected still dies; nobody else does.
pub fn expected_deaths(path: &PathSeries, params: &ModelParams) -> f64 {
    let ds = params.delta() * params.sigma;
    let toll: Vec<f64> = path
        .t
        .iter()
        .zip(path.d.iter().zip(path.i.iter()))
        .map(|(&t, (&d, &i))| params.nu * (-params.nu * t).exp() * (d + ds * i))
        .collect();
    let t_end = *path.t.last().unwrap();
    let d_end = *path.d.last().unwrap();
    let i_end = *path.i.last().unwrap();
    let tail = (-params.nu * t_end).exp() * (d_end + ds * i_end);
    1e5 * (integrate_uniform(&toll, path.dt) + tail)
}

/// Bound on deaths the tail formula cannot see when the path was cut off with
/// prevalence still material: at worst every remaining susceptible is
/// infected and dies at the population fatality rate.
pub fn deaths_truncation_bound(path: &PathSeries, params: &ModelParams) -> f64 {
    let i_end = *path.i.last().unwrap();
    if i_end < 1e-10 {
        return 0.0;
    }
    let t_end = *path.t.last().unwrap();
    let s_end = *path.s.last().unwrap();
    1e5 * (-params.nu * t_end).exp() * params.delta0 * s_end
}

/// Value fields entering the welfare aggregate.
pub enum WelfareInput<'a> {
    /// Equilibrium-side aggregate (sigma S + 1 - sigma) V_U + sigma I V_Ik
    /// + D u_D.
    Agents { v_u: &'a Field, v_ik: f64 },
    /// Planner form D u_D - C(S, I).
    Planner { cost: &'a Field },
}

/// Welfare cost of the epidemic at a state: the permanent consumption share
/// that, removed forever in a disease-free world, produces the same welfare.
pub fn welfare_cost(
    input: WelfareInput,
    z0: InitialState,
    params: &ModelParams,
    grid: &StateGrid,
) -> Result<f64> {
    z0.validate()?;
    if z0.i == 0.0 && z0.d == 0.0 {
        return Ok(0.0);
    }
    let w = match input {
        WelfareInput::Agents { v_u, v_ik } => {
            let vu = grid.interpolate(&v_u.values, z0.s, z0.i);
            (params.sigma * z0.s + 1.0 - params.sigma) * vu
                + params.sigma * z0.i * v_ik
                + z0.d * params.u_d
        }
        WelfareInput::Planner { cost } => {
            z0.d * params.u_d - grid.interpolate(&cost.values, z0.s, z0.i)
        }
    };
    if w > 1e-12 {
        return Err(Error::Domain(format!(
            "aggregate welfare {w} is positive; value fields are inconsistent"
        )));
    }
    Ok(1.0 - inverse_utility(w.min(0.0), params.alpha)?)
}

/// A grid field read along the path's (S, I) samples.
pub fn field_along_path(path: &PathSeries, grid: &StateGrid, field: &Field) -> Vec<f64> {
    path.s
        .iter()
        .zip(path.i.iter())
        .map(|(&s, &i)| grid.interpolate(&field.values, s, i))
        .collect()
}

/// Metrics of one simulated path; welfare comes from the solved value fields.
pub fn path_metrics(path: &PathSeries, params: &ModelParams, welfare_cost: f64) -> PathMetrics {
    let peak = path.i.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    PathMetrics {
        peak_prevalence: peak,
        herd_immunity_day: herd_immunity_day(path, params),
        welfare_cost,
        expected_deaths_per_100k: expected_deaths(path, params),
        terminal_day: *path.t.last().unwrap(),
        deaths_truncation_bound: deaths_truncation_bound(path, params),
    }
}

impl PathSeries {
    /// One row per sample: "t,S,I,D,a_U,R_eff" at full double precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,S,I,D,a_U,R_eff")?;
        for k in 0..self.t.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.t[k], self.s[k], self.i[k], self.d[k], self.a_u[k], self.r_eff[k]
            )?;
        }
        Ok(())
    }
}

impl PathMetrics {
    pub fn to_text(&self) -> String {
        let herd = match self.herd_immunity_day {
            Some(day) => format!("{day:.16e}"),
            None => "none".to_string(),
        };
        format!(
            "peak_prevalence = {:.16e}\nherd_immunity_day = {herd}\nwelfare_cost = {:.16e}\nexpected_deaths_per_100k = {:.16e}\nterminal_day = {:.16e}\ndeaths_truncation_bound = {:.16e}\n",
            self.peak_prevalence,
            self.welfare_cost,
            self.expected_deaths_per_100k,
            self.terminal_day,
            self.deaths_truncation_bound
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ModelParams {
        ModelParams::benchmark()
    }

    #[test]
    fn disease_free_initial_state_stays_put() {
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState { s: 0.7, i: 0.0, d: 0.1 },
            &p(),
            100.0,
            0.1,
        )
        .unwrap();
        assert!(path.s.iter().all(|&s| s == 0.7));
        assert!(path.d.iter().all(|&d| d == 0.1));
        // early stop: prevalence is already below threshold after one step
        assert!(path.t.len() <= 2);
    }

    #[test]
    fn no_transmission_gives_exponential_decay() {
        let mut params = p();
        params.beta = 1e-30;
        let i0 = 1e-3;
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState { s: 0.9, i: i0, d: 0.0 },
            &params,
            200.0,
            0.1,
        )
        .unwrap();
        for (k, &t) in path.t.iter().enumerate() {
            let expect = i0 * (-params.gamma * t).exp();
            assert!(
                (path.i[k] - expect).abs() <= 1e-8 * expect,
                "t={t}: {} vs {expect}",
                path.i[k]
            );
        }
    }

    #[test]
    fn unmitigated_peak_matches_closed_form() {
        // with activity 1 the contact term collapses and the classic final
        // size machinery applies: I_peak = S0 + I0 - (1 + ln(R0 S0)) / R0
        let params = p();
        let z0 = InitialState::default();
        let path = simulate_path(&PolicySource::Constant(1.0), z0, &params, 3650.0, 0.1).unwrap();
        let r0 = params.beta / params.gamma;
        let expect = z0.s + z0.i - (1.0 + (r0 * z0.s).ln()) / r0;
        let peak = path.i.iter().cloned().fold(0.0, f64::max);
        assert!((peak - expect).abs() < 1e-4, "peak {peak} vs {expect}");
        assert!((peak - 0.2334842).abs() < 1e-4);
    }

    #[test]
    fn herd_immunity_examples() {
        let params = p();
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let day = herd_immunity_day(&path, &params).unwrap();
        assert!(day > 0.0 && day < 3650.0);
        let k = path.t.iter().position(|&t| t == day).unwrap();
        assert!(path.s[k] <= 0.4 && path.s[k - 1] > 0.4);

        let already = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState { s: 0.3, i: 1e-6, d: 0.0 },
            &params,
            10.0,
            0.1,
        )
        .unwrap();
        assert_eq!(herd_immunity_day(&already, &params), Some(0.0));

        let clean = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState { s: 1.0, i: 0.0, d: 0.0 },
            &params,
            10.0,
            0.1,
        )
        .unwrap();
        assert_eq!(herd_immunity_day(&clean, &params), None);
    }

    #[test]
    fn death_conservation_along_path() {
        let params = p();
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let integral = integrate_uniform(&path.i, path.dt);
        let expect = params.sigma * params.delta() * params.gamma * integral;
        let got = path.d.last().unwrap() - path.d.first().unwrap();
        assert!((got - expect).abs() <= 1e-8, "dD {got} vs {expect}");
        for w in path.s.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn effective_r_crosses_one_at_peak() {
        let params = p();
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let peak_idx = path
            .i
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let cross_idx = path.r_eff.iter().position(|&r| r <= 1.0).unwrap();
        assert!(
            (path.t[cross_idx] - path.t[peak_idx]).abs() <= path.dt + 1e-12,
            "crossing {} vs peak {}",
            path.t[cross_idx],
            path.t[peak_idx]
        );
    }

    #[test]
    fn expected_deaths_flat_path() {
        let params = p();
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState { s: 0.5, i: 0.0, d: 0.012 },
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        // degenerate path: the arrival-time average of a constant toll
        let deaths = expected_deaths(&path, &params);
        assert!((deaths - 1e5 * 0.012).abs() < 1e-6);
    }

    #[test]
    fn expected_deaths_tiny_hazard_is_terminal_toll() {
        let mut params = p();
        params.nu = 1e-12;
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let deaths = expected_deaths(&path, &params);
        let terminal = 1e5 * (path.d.last().unwrap() + params.delta() * params.sigma * path.i.last().unwrap());
        assert!((deaths - terminal).abs() < 1e-4 * terminal);
    }

    #[test]
    fn expected_deaths_matches_two_stage_arrival_average() {
        // brute force: average the post-arrival toll D_tau + delta sigma I_tau
        // over an arrival-time grid with exact exponential weights
        let params = p();
        let path = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let ds = params.delta() * params.sigma;
        let toll = |k: usize| path.d[k] + ds * path.i[k];
        let step = 10; // one-day arrival grid on the 0.1-day samples
        let mut brute = 0.0;
        let mut k = 0;
        while k + step < path.t.len() {
            let w = (-params.nu * path.t[k]).exp() - (-params.nu * path.t[k + step]).exp();
            brute += w * 0.5 * (toll(k) + toll(k + step));
            k += step;
        }
        let t_last = path.t[k];
        brute += (-params.nu * t_last).exp() * toll(k);
        let brute = 1e5 * brute;
        let quad = expected_deaths(&path, &params);
        assert!(
            (quad - brute).abs() <= 1e-3 * brute.abs(),
            "quadrature {quad} vs two-stage {brute}"
        );
    }

    #[test]
    fn dt_refinement_is_negligible() {
        let params = p();
        let coarse = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.1,
        )
        .unwrap();
        let fine = simulate_path(
            &PolicySource::Constant(1.0),
            InitialState::default(),
            &params,
            3650.0,
            0.05,
        )
        .unwrap();
        let pc = coarse.i.iter().cloned().fold(0.0, f64::max);
        let pf = fine.i.iter().cloned().fold(0.0, f64::max);
        assert!((pc - pf).abs() <= 1e-6, "peak moved {}", (pc - pf).abs());
        let dc = expected_deaths(&coarse, &params);
        let df = expected_deaths(&fine, &params);
        assert!((dc - df).abs() <= 1e-6 * dc.max(1.0), "deaths moved {}", (dc - df).abs());
    }

    #[test]
    fn integrator_rule_is_exact_on_cubics() {
        let dt = 0.5;
        for n in [2usize, 3, 4, 5, 6, 7, 10, 11] {
            let f: Vec<f64> = (0..=n)
                .map(|k| {
                    let x = k as f64 * dt;
                    2.0 * x * x * x - x * x + 3.0 * x - 5.0
                })
                .collect();
            let b = n as f64 * dt;
            let exact = 0.5 * b.powi(4) - b.powi(3) / 3.0 + 1.5 * b * b - 5.0 * b;
            let got = integrate_uniform(&f, dt);
            assert!((got - exact).abs() < 1e-10 * exact.abs().max(1.0), "n={n}: {got} vs {exact}");
        }
    }

    #[test]
    fn welfare_cost_disease_free_is_zero() {
        let params = p();
        let g = StateGrid::from_spec(&crate::grid::GridSpec::benchmark()).unwrap();
        let mut v = Field::new2(g.n_s(), g.n_i(), "v", 0);
        v.values.fill(-0.5);
        let cost = welfare_cost(
            WelfareInput::Agents { v_u: &v, v_ik: -1.0 },
            InitialState { s: 1.0, i: 0.0, d: 0.0 },
            &params,
            &g,
        )
        .unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn welfare_cost_planner_form() {
        let params = p();
        let g = StateGrid::from_spec(&crate::grid::GridSpec::benchmark()).unwrap();
        let mut c = Field::new2(g.n_s(), g.n_i(), "c", 0);
        c.values.fill(0.02);
        let cost = welfare_cost(
            WelfareInput::Planner { cost: &c },
            InitialState::default(),
            &params,
            &g,
        )
        .unwrap();
        // flat cost field: welfare is -0.02, cost 1 - e^{-0.02}
        assert!((cost - (1.0 - (-0.02f64).exp())).abs() < 1e-12);
        assert!((0.0..1.0).contains(&cost));
    }

    #[test]
    fn positive_welfare_is_rejected() {
        let params = p();
        let g = StateGrid::from_spec(&crate::grid::GridSpec::benchmark()).unwrap();
        let mut v = Field::new2(g.n_s(), g.n_i(), "v", 0);
        v.values.fill(0.3);
        let err = welfare_cost(
            WelfareInput::Agents { v_u: &v, v_ik: 0.0 },
            InitialState::default(),
            &params,
            &g,
        );
        assert!(err.is_err());
    }
}
