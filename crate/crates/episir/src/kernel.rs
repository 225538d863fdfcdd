//! Locally consistent Markov-chain stencils on the (S, I) grid, the stationary
//! linear solver, and the policy-iteration driver shared by all allocations.
//!
//! The state system is block lower-triangular in S (susceptibles only fall),
//! so the stationary equations solve by a single sweep over S columns with a
//! tridiagonal solve along the prevalence axis in each column.

use crate::error::{Error, Result};
use crate::grid::StateGrid;
use crate::model::{belief_mu, utility, ModelParams};
use std::time::Instant;

/// Target of the susceptible-decrement transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    /// S decrements land on (S - dS, I); prevalence moves separately through
    /// upwinded net-drift rates. Both first moments are locally consistent.
    #[default]
    Decoupled,
    /// S decrements land on the joint target (S - dS, I + dS), interpolated
    /// along the prevalence axis of the previous column. Kept as a switchable
    /// alternative; combined with the upwinded prevalence rates it over-counts
    /// prevalence inflow by one infection flux.
    Joint,
}

/// Per-node transition rates and flow payoffs of one stationary system.
///
/// Rates are per unit time (probabilities already divided by the time step).
/// `p_uk` absorbs into the scalar `absorb_value`; `p_mu_minus` moves to the
/// same (S, I) node of the already-solved lower belief slice `mu_prev`.
#[derive(Debug, Clone)]
pub struct TransitionStencil {
    pub n_s: usize,
    pub n_i: usize,
    pub wiring: Wiring,
    pub p_s_minus: Vec<f64>,
    pub p_i_plus: Vec<f64>,
    pub p_i_minus: Vec<f64>,
    pub p_uk: Vec<f64>,
    pub p_mu_minus: Vec<f64>,
    pub flow: Vec<f64>,
    pub absorb_value: f64,
    pub mu_prev: Option<Vec<f64>>,
    /// Discount rate applied uniformly on the diagonal.
    pub discount: f64,
}

impl TransitionStencil {
    fn zeros(n_s: usize, n_i: usize, discount: f64, wiring: Wiring) -> Self {
        let n = n_s * n_i;
        TransitionStencil {
            n_s,
            n_i,
            wiring,
            p_s_minus: vec![0.0; n],
            p_i_plus: vec![0.0; n],
            p_i_minus: vec![0.0; n],
            p_uk: vec![0.0; n],
            p_mu_minus: vec![0.0; n],
            flow: vec![0.0; n],
            absorb_value: 0.0,
            mu_prev: None,
            discount,
        }
    }

    /// Rate nonnegativity, finiteness, and the boundary-row zeros.
    pub fn validate(&self, grid: &StateGrid) -> Result<()> {
        if self.n_s != grid.n_s() || self.n_i != grid.n_i() {
            return Err(Error::Solver(format!(
                "stencil shape {}x{} does not match grid {}x{}",
                self.n_s,
                self.n_i,
                grid.n_s(),
                grid.n_i()
            )));
        }
        let n_i = self.n_i;
        for (name, rates) in [
            ("p_s_minus", &self.p_s_minus),
            ("p_i_plus", &self.p_i_plus),
            ("p_i_minus", &self.p_i_minus),
            ("p_uk", &self.p_uk),
            ("p_mu_minus", &self.p_mu_minus),
        ] {
            if let Some(k) = rates.iter().position(|r| !r.is_finite() || *r < 0.0) {
                return Err(Error::Solver(format!(
                    "stencil rate {name} invalid at node ({}, {}): {}",
                    k / n_i,
                    k % n_i,
                    rates[k]
                )));
            }
        }
        for ji in 0..n_i {
            if self.p_s_minus[ji] != 0.0 {
                return Err(Error::Solver("nonzero S decrement at the lowest S node".into()));
            }
        }
        for js in 0..self.n_s {
            if self.p_i_minus[js * n_i] != 0.0 {
                return Err(Error::Solver("nonzero I decrement at the lowest I node".into()));
            }
            if self.p_i_plus[js * n_i + n_i - 1] != 0.0 {
                return Err(Error::Solver("nonzero I increment at the highest I node".into()));
            }
        }
        Ok(())
    }
}

/// Maximum admissible activity at the top prevalence node: keeps the upward
/// prevalence drift nonpositive so the chain cannot leave the grid. For
/// sigma < 1 this is the positive root of beta*S*(1-sigma)*a^2 +
/// beta*S*sigma*a_ik*a - gamma = 0; the sigma = 1 case degenerates to a linear
/// equation. Clamped to [a_min, 1]; inactive (1.0) when no infection is
/// possible.
pub fn boundary_cap(s: f64, params: &ModelParams) -> f64 {
    if s <= 0.0 || params.beta == 0.0 {
        return 1.0;
    }
    let bs = params.beta * s;
    let x = bs * params.sigma * params.a_ik;
    if params.sigma >= 1.0 {
        let cap = if x > 0.0 { params.gamma / x } else { 1.0 };
        return cap.min(1.0).max(params.a_min);
    }
    let q = bs * (1.0 - params.sigma);
    let cap = (-x + (x * x + 4.0 * params.gamma * q).sqrt()) / (2.0 * q);
    cap.min(1.0).max(params.a_min)
}

/// Planner stencil: gross transition flows and the per-node social flow cost.
///
/// Rates per node: S decrement Lambda / dS (zero at the lowest S node),
/// I increment Lambda / dI+ and I decrement gamma*I / dI- (zero where the
/// boundary step vanishes), with Lambda = beta*S*I*a*((1-sigma)*a + sigma*a_ik).
/// Flow: r*((1-sigma+sigma*S)*(-u(a)) + sigma*I*(-u_ik_flow))
/// + gamma*delta*sigma*I*(-u_d) + nu*C_vac*I. Discount r + nu.
pub fn spp_stencil(
    params: &ModelParams,
    grid: &StateGrid,
    policy: &[f64],
) -> Result<TransitionStencil> {
    let (n_s, n_i) = (grid.n_s(), grid.n_i());
    debug_assert_eq!(policy.len(), n_s * n_i);
    let d = params.derived();
    let mut st = TransitionStencil::zeros(n_s, n_i, params.r + params.nu, Wiring::Decoupled);
    for js in 0..n_s {
        let s = grid.s[js];
        for ji in 0..n_i {
            let k = js * n_i + ji;
            let i = grid.i[ji];
            let a = policy[k];
            let lambda = params.beta * s * i * a * ((1.0 - params.sigma) * a + params.sigma * params.a_ik);
            if js > 0 {
                st.p_s_minus[k] = lambda / grid.delta_s;
            }
            if grid.d_i_plus[ji] > 0.0 {
                st.p_i_plus[k] = lambda / grid.d_i_plus[ji];
            }
            if grid.d_i_minus[ji] > 0.0 {
                st.p_i_minus[k] = params.gamma * i / grid.d_i_minus[ji];
            }
            st.flow[k] = params.r
                * ((1.0 - params.sigma + params.sigma * s) * (-utility(a, params.alpha)?)
                    + params.sigma * i * (-params.u_ik_flow))
                + params.gamma * d.delta * params.sigma * i * (-params.u_d)
                + params.nu * d.c_vac * i;
        }
    }
    st.validate(grid)?;
    Ok(st)
}

/// Belief entering the known-infection hazard of an individual agent.
#[derive(Debug, Clone, Copy)]
pub enum BeliefRule {
    /// Equilibrium belief mu(S) = S / (sigma*S + 1 - sigma) at each node.
    Consistent,
    /// A fixed belief level (one slice of the belief-augmented state space).
    Fixed(f64),
}

/// Individual stencil: population state driven by the aggregate activity,
/// own infection hazard driven by the agent's own activity and belief.
///
/// State rates use the aggregate profile: S decrement Lambda / dS with
/// Lambda = beta*S*atilde*((1-sigma)*atilde + sigma*a_ik)*I and upwinded net
/// prevalence drift Lambda - gamma*I split into max(.,0)/dI+ and
/// max(-.,0)/dI-. The hazard of becoming known infected is
/// p_uk = sigma*mu*beta*a*((1-sigma)*atilde + sigma*a_ik)*I, absorbing into
/// `absorb_value`. Flow r*u(a); discount r + nu.
pub fn agent_stencil(
    params: &ModelParams,
    grid: &StateGrid,
    own: &[f64],
    aggregate: &[f64],
    belief: BeliefRule,
    absorb_value: f64,
    wiring: Wiring,
) -> Result<TransitionStencil> {
    let (n_s, n_i) = (grid.n_s(), grid.n_i());
    debug_assert_eq!(own.len(), n_s * n_i);
    debug_assert_eq!(aggregate.len(), n_s * n_i);
    let mut st = TransitionStencil::zeros(n_s, n_i, params.r + params.nu, wiring);
    st.absorb_value = absorb_value;
    for js in 0..n_s {
        let s = grid.s[js];
        let mu = match belief {
            BeliefRule::Consistent => belief_mu(s, params.sigma),
            BeliefRule::Fixed(m) => m,
        };
        for ji in 0..n_i {
            let k = js * n_i + ji;
            let i = grid.i[ji];
            let at = aggregate[k];
            let contact = (1.0 - params.sigma) * at + params.sigma * params.a_ik;
            let lambda = params.beta * s * at * contact * i;
            let drift = lambda - params.gamma * i;
            if js > 0 {
                st.p_s_minus[k] = lambda / grid.delta_s;
            }
            if grid.d_i_plus[ji] > 0.0 && drift > 0.0 {
                st.p_i_plus[k] = drift / grid.d_i_plus[ji];
            }
            if grid.d_i_minus[ji] > 0.0 && drift < 0.0 {
                st.p_i_minus[k] = -drift / grid.d_i_minus[ji];
            }
            st.p_uk[k] = params.sigma * mu * params.beta * own[k] * contact * i;
            st.flow[k] = params.r * utility(own[k], params.alpha)?;
        }
    }
    st.validate(grid)?;
    Ok(st)
}

/// Tridiagonal solve along one column: sub[j]*v[j-1] + diag[j]*v[j] +
/// sup[j]*v[j+1] = rhs[j]. Overwrites `rhs` with the solution. The assembled
/// systems are strictly diagonally dominant, so no pivoting is needed.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for j in 1..n {
        let m = diag[j] - sub[j] * scratch[j - 1];
        scratch[j] = sup[j] / m;
        rhs[j] = (rhs[j] - sub[j] * rhs[j - 1]) / m;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= scratch[j] * rhs[j + 1];
    }
}

/// Solution of one stationary system with its sup-norm relative residual.
pub fn solve_stationary(
    stencil: &TransitionStencil,
    grid: &StateGrid,
    residual_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let (n_s, n_i) = (stencil.n_s, stencil.n_i);
    let mut values = vec![0.0; n_s * n_i];
    let mut diag = vec![0.0; n_i];
    let mut sub = vec![0.0; n_i];
    let mut sup = vec![0.0; n_i];
    let mut rhs = vec![0.0; n_i];
    let mut scratch = vec![0.0; n_i];
    let zero_prev = vec![0.0; n_i];
    for js in 0..n_s {
        for ji in 0..n_i {
            let k = js * n_i + ji;
            diag[ji] = stencil.discount
                + stencil.p_s_minus[k]
                + stencil.p_i_plus[k]
                + stencil.p_i_minus[k]
                + stencil.p_uk[k]
                + stencil.p_mu_minus[k];
            sub[ji] = -stencil.p_i_minus[k];
            sup[ji] = -stencil.p_i_plus[k];
            rhs[ji] = stencil.flow[k] + stencil.p_uk[k] * stencil.absorb_value;
            if let Some(prev) = &stencil.mu_prev {
                rhs[ji] += stencil.p_mu_minus[k] * prev[k];
            }
        }
        let prev_col = if js > 0 {
            &values[(js - 1) * n_i..js * n_i]
        } else {
            &zero_prev[..]
        };
        match stencil.wiring {
            Wiring::Decoupled => {
                for ji in 0..n_i {
                    rhs[ji] += stencil.p_s_minus[js * n_i + ji] * prev_col[ji];
                }
            }
            Wiring::Joint => {
                for ji in 0..n_i {
                    let rate = stencil.p_s_minus[js * n_i + ji];
                    if rate > 0.0 {
                        let target = grid.i[ji] + grid.delta_s;
                        rhs[ji] += rate * grid.interp_column(prev_col, target);
                    }
                }
            }
        }
        thomas(&sub, &diag, &sup, &mut rhs, &mut scratch);
        values[js * n_i..(js + 1) * n_i].copy_from_slice(&rhs);
    }

    // residual against the assembled rows, relative to each row's term scale
    let mut worst = 0.0f64;
    for js in 0..n_s {
        for ji in 0..n_i {
            let k = js * n_i + ji;
            let d = stencil.discount
                + stencil.p_s_minus[k]
                + stencil.p_i_plus[k]
                + stencil.p_i_minus[k]
                + stencil.p_uk[k]
                + stencil.p_mu_minus[k];
            let mut rhs_k = stencil.flow[k] + stencil.p_uk[k] * stencil.absorb_value;
            if let Some(prev) = &stencil.mu_prev {
                rhs_k += stencil.p_mu_minus[k] * prev[k];
            }
            if js > 0 {
                let prev_col = &values[(js - 1) * n_i..js * n_i];
                rhs_k += match stencil.wiring {
                    Wiring::Decoupled => stencil.p_s_minus[k] * prev_col[ji],
                    Wiring::Joint => {
                        if stencil.p_s_minus[k] > 0.0 {
                            stencil.p_s_minus[k] * grid.interp_column(prev_col, grid.i[ji] + grid.delta_s)
                        } else {
                            0.0
                        }
                    }
                };
            }
            let down = if ji > 0 { stencil.p_i_minus[k] * values[k - 1] } else { 0.0 };
            let up = if ji + 1 < n_i { stencil.p_i_plus[k] * values[k + 1] } else { 0.0 };
            let lhs = d * values[k] - down - up;
            let scale = (d * values[k]).abs() + down.abs() + up.abs() + rhs_k.abs() + 1e-30;
            worst = worst.max((lhs - rhs_k).abs() / scale);
        }
    }
    if !worst.is_finite() || worst > residual_tol {
        return Err(Error::Solver(format!(
            "stationary solve residual {worst:.3e} exceeds tolerance {residual_tol:.1e}"
        )));
    }
    Ok((values, worst))
}

/// Convergence controls for the outer policy loop and the linear solves.
#[derive(Debug, Clone, Copy)]
pub struct IterationConfig {
    /// Sup-norm policy change below which the outer loop stops.
    pub policy_tol: f64,
    pub max_outer: usize,
    /// Maximum acceptable relative residual of each stationary solve.
    pub linear_tol: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            policy_tol: 1e-8,
            max_outer: 500,
            linear_tol: 1e-10,
        }
    }
}

/// Outcome report of one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub outer_iterations: usize,
    /// Sup-norm relative residual of the last stationary solve.
    pub linear_residual: f64,
    /// Sup-norm policy change in the last outer step.
    pub policy_change: f64,
    pub wall_time: f64,
    pub converged: bool,
}

/// Values and policy produced by [`policy_iteration`].
pub struct PolicySolution {
    pub values: Vec<f64>,
    pub policy: Vec<f64>,
    pub report: SolveReport,
}

/// Alternates stationary evaluation and node-wise improvement until the
/// sup-norm policy change falls below tolerance. The returned policy is the
/// improvement of the returned values, so first-order conditions hold exactly
/// against the stored field. Hitting the iteration cap is reported, not an
/// error.
pub fn policy_iteration(
    grid: &StateGrid,
    initial_policy: Vec<f64>,
    cfg: &IterationConfig,
    mut build: impl FnMut(&[f64]) -> Result<TransitionStencil>,
    mut improve: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<PolicySolution> {
    let start = Instant::now();
    let mut policy = initial_policy;
    let mut values = Vec::new();
    let mut residual = 0.0;
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_outer {
        iterations += 1;
        let stencil = build(&policy)?;
        let (v, res) = solve_stationary(&stencil, grid, cfg.linear_tol)?;
        let next = improve(&v)?;
        debug_assert_eq!(next.len(), policy.len());
        change = next
            .iter()
            .zip(policy.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        policy = next;
        values = v;
        residual = res;
        if change <= cfg.policy_tol {
            converged = true;
            break;
        }
    }
    Ok(PolicySolution {
        values,
        policy,
        report: SolveReport {
            outer_iterations: iterations,
            linear_residual: residual,
            policy_change: change,
            wall_time: start.elapsed().as_secs_f64(),
            converged,
        },
    })
}
