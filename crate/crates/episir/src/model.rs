//! Scalar model primitives: parameters, CRRA utility, beliefs, reproduction
//! numbers, closed-form values, and the activity first-order condition shared
//! by every allocation.

use crate::error::{Error, Result};

/// Model parameters. All rates are per day; population quantities are shares.
///
/// Agents pick an activity level `a` in `[a_min, 1]`. Infected agents are
/// diagnosed with probability `sigma` at infection time; diagnosed agents act
/// at the fixed level `a_ik` and receive flow utility `u_ik_flow` (either
/// `u(a_ik)`, or 0 when quarantine is compensated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Discount rate.
    pub r: f64,
    /// Vaccine arrival hazard.
    pub nu: f64,
    /// Transmission rate.
    pub beta: f64,
    /// Removal (recovery or death) rate.
    pub gamma: f64,
    /// Diagnosis probability at infection, in (0, 1].
    pub sigma: f64,
    /// Infection fatality rate among all infections, in (0, 1].
    pub delta0: f64,
    /// Relative risk aversion of the activity utility.
    pub alpha: f64,
    /// Lower bound on activity, in [0, 1).
    pub a_min: f64,
    /// Flow utility while dead (negative).
    pub u_d: f64,
    /// Activity of diagnosed infected agents, in [a_min, 1].
    pub a_ik: f64,
    /// Flow utility of diagnosed infected agents (<= 0).
    pub u_ik_flow: f64,
}

impl ModelParams {
    /// Baseline calibration: discounting 5% a year, vaccine expected in one
    /// year, R0 = 2.5 over a 13.5-day infectious period, 40% diagnosis rate,
    /// 0.27% infection fatality rate, log utility, diagnosed agents
    /// unrestricted.
    pub fn benchmark() -> Self {
        ModelParams {
            r: 0.05 / 365.25,
            nu: 1.0 / 365.25,
            beta: 1.0 / 5.4,
            gamma: 1.0 / 13.5,
            sigma: 0.4,
            delta0: 0.0027,
            alpha: 1.0,
            a_min: 0.01,
            u_d: -12.22,
            a_ik: 1.0,
            u_ik_flow: 0.0,
        }
    }

    /// Case fatality rate among diagnosed infections, `delta0 / sigma`.
    pub fn delta(&self) -> f64 {
        self.delta0 / self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.r > 0.0) {
            return err("discount rate r must be positive");
        }
        if !(self.nu >= 0.0) {
            return err("vaccine hazard nu must be nonnegative");
        }
        if !(self.beta > 0.0) {
            return err("transmission rate beta must be positive");
        }
        if !(self.gamma > 0.0) {
            return err("removal rate gamma must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return err("diagnosis rate sigma must lie in (0, 1]");
        }
        if !(self.delta0 > 0.0 && self.delta0 <= 1.0) {
            return err("fatality rate delta0 must lie in (0, 1]");
        }
        if self.delta() > 1.0 {
            return err("delta0 / sigma exceeds 1: diagnosed fatality is not a probability");
        }
        if !(self.alpha > 0.0) {
            return err("risk aversion alpha must be positive");
        }
        if !(self.a_min >= 0.0 && self.a_min < 1.0) {
            return err("a_min must lie in [0, 1)");
        }
        if !(self.a_ik >= self.a_min && self.a_ik <= 1.0) {
            return err("a_ik must lie in [a_min, 1]");
        }
        if !(self.u_ik_flow <= 0.0) {
            return err("u_ik_flow must be nonpositive");
        }
        if !(self.u_d < self.u_ik_flow) {
            return err("u_d must be strictly below u_ik_flow");
        }
        Ok(())
    }

    pub fn derived(&self) -> DerivedConstants {
        DerivedConstants {
            delta: self.delta(),
            r0: self.beta / self.gamma,
            herd_threshold: self.gamma / self.beta,
            v_ik: value_known_infected(self),
            c_vac: cost_post_vaccine(self),
            i_bar: full_activity_threshold(self),
        }
    }

    /// Order-independent hash of the parameter values, for artifact manifests.
    pub fn hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in [
            self.r,
            self.nu,
            self.beta,
            self.gamma,
            self.sigma,
            self.delta0,
            self.alpha,
            self.a_min,
            self.u_d,
            self.a_ik,
            self.u_ik_flow,
        ] {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Quantities determined by the parameters alone.
#[derive(Debug, Clone, Copy)]
pub struct DerivedConstants {
    /// Fatality rate among diagnosed infections.
    pub delta: f64,
    /// Basic reproduction number beta / gamma.
    pub r0: f64,
    /// Susceptible share below which herd immunity holds, gamma / beta.
    pub herd_threshold: f64,
    /// Lifetime value of a diagnosed infected agent (state independent).
    pub v_ik: f64,
    /// Planner cost coefficient per unit of prevalence after vaccine arrival.
    pub c_vac: f64,
    /// Prevalence below which unrestricted activity is individually optimal.
    pub i_bar: f64,
}

/// CRRA flow utility, normalized so that u(1) = 0.
pub fn utility(a: f64, alpha: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("utility undefined for activity {a}")));
    }
    if (alpha - 1.0).abs() < 1e-12 {
        Ok(a.ln())
    } else {
        Ok((a.powf(1.0 - alpha) - 1.0) / (1.0 - alpha))
    }
}

/// Inverse of [`utility`] on (0, 1], defined for w <= 0.
pub fn inverse_utility(w: f64, alpha: f64) -> Result<f64> {
    if w > 0.0 {
        return Err(Error::Domain(format!(
            "no activity in (0, 1] attains utility {w}"
        )));
    }
    if (alpha - 1.0).abs() < 1e-12 {
        Ok(w.exp())
    } else {
        let base = 1.0 + (1.0 - alpha) * w;
        if base <= 0.0 {
            return Err(Error::Domain(format!(
                "utility {w} is below the infimum for alpha {alpha}"
            )));
        }
        Ok(base.powf(1.0 / (1.0 - alpha)))
    }
}

/// Probability that a non-diagnosed agent is susceptible, S / (sigma S + 1 - sigma).
///
/// Valid along any path started from a fully susceptible population: the
/// non-diagnosed share shrinks only through diagnosed infections, which keeps
/// it equal to sigma S + 1 - sigma. Returns 0 at S = 0 (covers the sigma = 1
/// degenerate case).
pub fn belief_mu(s: f64, sigma: f64) -> f64 {
    let denom = sigma * s + 1.0 - sigma;
    if denom <= 0.0 {
        return 0.0;
    }
    s / denom
}

/// Lifetime value of a diagnosed infected agent.
///
/// Diagnosed agents leave the infected state at rate gamma, dying with
/// probability delta; recovery is worth 0, so the value solves
/// (r + gamma) V = r u_ik_flow + gamma delta u_d.
pub fn value_known_infected(p: &ModelParams) -> f64 {
    (p.r * p.u_ik_flow + p.gamma * p.delta() * p.u_d) / (p.r + p.gamma)
}

/// Planner flow-cost coefficient per unit of prevalence once the vaccine has
/// arrived: remaining infections still resolve and the diagnosed share still
/// pays its utility and fatality costs.
pub fn cost_post_vaccine(p: &ModelParams) -> f64 {
    p.sigma / (p.r + p.gamma) * (-p.gamma * p.delta() * p.u_d - p.r * p.u_ik_flow)
}

/// Effective reproduction number at susceptible share `s` when non-diagnosed
/// agents act at `a_u`: (beta/gamma) a_u s ((1-sigma) a_u + sigma a_ik).
pub fn effective_r(s: f64, a_u: f64, p: &ModelParams) -> f64 {
    p.beta / p.gamma * a_u * s * ((1.0 - p.sigma) * a_u + p.sigma * p.a_ik)
}

/// Prevalence threshold below which full activity is individually optimal
/// regardless of the rest of the state: r u'(1) / (sigma beta |V_Ik|).
pub fn full_activity_threshold(p: &ModelParams) -> f64 {
    let v_ik = value_known_infected(p);
    if v_ik == 0.0 {
        return f64::INFINITY;
    }
    -p.r / (p.sigma * p.beta * v_ik)
}

/// Which marginal-infection term the activity FOC carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FocBranch {
    /// Planner view: own activity enters the contact term twice, giving the
    /// FOC a^{-alpha} + c (sigma a_ik + 2 (1-sigma) a) = 0.
    Internalized,
    /// Best response to a fixed average activity of the non-diagnosed:
    /// a = (-c ((1-sigma) a_tilde + sigma a_ik))^{-1/alpha}.
    Response { a_tilde: f64 },
    /// Equilibrium: best response with average activity equal to own,
    /// a^{-alpha} + c ((1-sigma) a + sigma a_ik) = 0.
    SelfConsistent,
}

/// Maximizer over [a_min, 1] of u(a) + c a (sigma a_ik + (1-sigma) a_other),
/// where a_other is own activity (internalized or self-consistent) or a fixed
/// average. Nonnegative c means activity is not costly, so the answer is 1.
pub fn foc_activity(c: f64, branch: FocBranch, p: &ModelParams) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::Solver(format!("non-finite FOC coefficient {c}")));
    }
    if c >= 0.0 {
        return Ok(1.0);
    }
    let clamp = |a: f64| a.clamp(p.a_min, 1.0);
    match branch {
        FocBranch::Response { a_tilde } => {
            let b = c * ((1.0 - p.sigma) * a_tilde + p.sigma * p.a_ik);
            if b == 0.0 {
                // no infection channel, activity is free
                return Ok(1.0);
            }
            Ok(clamp((-b).powf(-1.0 / p.alpha)))
        }
        FocBranch::Internalized => {
            foc_root(c * 2.0 * (1.0 - p.sigma), c * p.sigma * p.a_ik, p).map(clamp)
        }
        FocBranch::SelfConsistent => {
            foc_root(c * (1.0 - p.sigma), c * p.sigma * p.a_ik, p).map(clamp)
        }
    }
}

/// Root of a^{-alpha} + q a + l = 0 on (0, inf), with q <= 0, l <= 0, i.e.
/// the stationary point of the concave objective it derives from. Closed-form
/// quadratic for log utility, bisection otherwise. Both coefficients zero
/// means the objective is unconstrained and the caller's upper clamp applies.
fn foc_root(q: f64, l: f64, p: &ModelParams) -> Result<f64> {
    debug_assert!(q <= 0.0 && l <= 0.0);
    if (p.alpha - 1.0).abs() < 1e-12 {
        // q a^2 + l a + 1 = 0
        if q.abs() < 1e-300 {
            if l.abs() < 1e-300 {
                return Ok(f64::INFINITY);
            }
            return Ok(-1.0 / l);
        }
        let disc = l * l - 4.0 * q;
        Ok((l + disc.sqrt()) / (-2.0 * q))
    } else {
        // g(a) = a^{-alpha} + q a + l is strictly decreasing; bracket on
        // [a_min, 1] and bisect, letting the caller clamp past a boundary.
        let g = |a: f64| a.powf(-p.alpha) + q * a + l;
        let lo = p.a_min.max(1e-12);
        if g(1.0) >= 0.0 {
            return Ok(1.0);
        }
        if g(lo) <= 0.0 {
            return Ok(lo);
        }
        let (mut lo, mut hi) = (lo, 1.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ModelParams {
        ModelParams::benchmark()
    }

    #[test]
    fn benchmark_validates() {
        p().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_sets() {
        let mut q = p();
        q.sigma = 0.0;
        assert!(q.validate().is_err());
        let mut q = p();
        q.sigma = 0.001; // delta0 / sigma = 2.7 > 1
        assert!(q.validate().is_err());
        let mut q = p();
        q.u_d = 0.0;
        assert!(q.validate().is_err());
        let mut q = p();
        q.a_min = 1.0;
        assert!(q.validate().is_err());
    }

    #[test]
    fn utility_values() {
        assert_eq!(utility(1.0, 1.0).unwrap(), 0.0);
        assert!((utility(0.5, 1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((utility(0.5, 2.0).unwrap() - (-1.0)).abs() < 1e-12);
        assert!(utility(0.0, 1.0).is_err());
        assert!(utility(-0.1, 2.0).is_err());
    }

    #[test]
    fn inverse_utility_values() {
        assert_eq!(inverse_utility(0.0, 1.0).unwrap(), 1.0);
        assert!((inverse_utility(-std::f64::consts::LN_2, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((inverse_utility(-1.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(inverse_utility(0.1, 1.0).is_err());
    }

    #[test]
    fn utility_round_trip() {
        // deterministic pseudo-random points over activities and alphas
        let mut x: u64 = 0x9e3779b97f4a7c15;
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let a = 0.01 + 0.99 * next();
            let alpha = 0.25 + 3.75 * next();
            let w = utility(a, alpha).unwrap();
            let back = inverse_utility(w, alpha).unwrap();
            assert!((back - a).abs() <= 1e-12 * a.max(1e-3), "a={a} alpha={alpha} back={back}");
        }
    }

    #[test]
    fn belief_examples_and_monotonicity() {
        assert!((belief_mu(1.0, 0.4) - 1.0).abs() < 1e-15);
        assert_eq!(belief_mu(0.0, 0.4), 0.0);
        assert!((belief_mu(0.5, 0.4) - 0.625).abs() < 1e-15);
        assert_eq!(belief_mu(0.0, 1.0), 0.0);
        let mut last = -1.0;
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            let m = belief_mu(s, 0.4);
            assert!((-1e-15..=1.0 + 1e-15).contains(&m));
            assert!(m >= last);
            last = m;
        }
    }

    #[test]
    fn value_known_infected_benchmark() {
        // frozen against an independent scalar recomputation
        let v = value_known_infected(&p());
        assert!((v - (-0.0823328448452552)).abs() < 1e-15, "v = {v}");
        let mut q = p();
        q.u_d = -1e-9;
        q.u_ik_flow = -1e-10; // keep ordering u_d < u_ik_flow
        assert!(value_known_infected(&q).abs() < 1e-9);
        // gamma large with delta = 1: value tends to u_d
        let mut q = p();
        q.gamma = 1e9;
        q.sigma = 1.0;
        q.delta0 = 1.0;
        assert!((value_known_infected(&q) - q.u_d).abs() < 1e-6);
    }

    #[test]
    fn cost_post_vaccine_benchmark() {
        let c = cost_post_vaccine(&p());
        assert!((c - 0.03293313793810208).abs() < 1e-15, "c = {c}");
        // algebraic identity when the diagnosed flow utility is zero
        assert!((c + p().sigma * value_known_infected(&p())).abs() < 1e-18);
    }

    #[test]
    fn effective_r_examples() {
        assert!((effective_r(1.0, 1.0, &p()) - 2.5).abs() < 1e-12);
        assert!((effective_r(0.4, 1.0, &p()) - 1.0).abs() < 1e-12);
        let mut q = p();
        q.sigma = 1.0;
        q.a_ik = 0.4;
        assert!((effective_r(1.0, 1.0, &q) - 1.0).abs() < 1e-12);
        // herd threshold restatement
        let d = p().derived();
        assert!((effective_r(d.herd_threshold, 1.0, &p()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_activity_threshold_benchmark() {
        let t = full_activity_threshold(&p());
        assert!((t - 0.0224460758617971).abs() < 1e-14, "t = {t}");
        // with zero diagnosed flow utility the threshold is
        // r (r + gamma) / (sigma beta gamma delta (-u_d)): doubling r scales
        // it by 2 (2r + gamma) / (r + gamma)
        let mut q = p();
        q.r *= 2.0;
        let expect = t * 2.0 * (2.0 * p().r + p().gamma) / (p().r + p().gamma);
        assert!((full_activity_threshold(&q) - expect).abs() < 1e-12 * expect);
        q = p();
        q.u_d = -1e12;
        assert!(full_activity_threshold(&q) < 1e-10);
    }

    #[test]
    fn derived_sign_invariants() {
        let d = p().derived();
        assert!(d.v_ik < 0.0);
        assert!(d.c_vac >= 0.0);
        assert!(d.herd_threshold > 0.0 && d.herd_threshold < 1.0);
        assert!(d.i_bar > 0.0);
    }

    #[test]
    fn foc_examples() {
        // nonnegative coefficient: full activity
        assert_eq!(foc_activity(0.5, FocBranch::Internalized, &p()).unwrap(), 1.0);
        assert_eq!(foc_activity(0.0, FocBranch::SelfConsistent, &p()).unwrap(), 1.0);
        // internalized log-utility quadratic 1.2 a^2 + 0.4 a - 1 = 0
        let a = foc_activity(-1.0, FocBranch::Internalized, &p()).unwrap();
        let exact = (-0.4 + (0.16f64 + 4.8).sqrt()) / 2.4;
        assert!((a - exact).abs() < 1e-14, "a = {a}");
        assert!((a - 0.7612940604716705).abs() < 1e-12);
        // fixed-average response: 1 / (2 (0.6 + 0.4))
        let a = foc_activity(-2.0, FocBranch::Response { a_tilde: 1.0 }, &p()).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn foc_clamps() {
        // enormous cost: both branches squeeze onto the floor
        let q = p();
        let a1 = foc_activity(-1e9, FocBranch::SelfConsistent, &q).unwrap();
        let a2 = foc_activity(-1e9, FocBranch::Internalized, &q).unwrap();
        assert_eq!(a1, q.a_min);
        assert_eq!(a2, q.a_min);
    }

    #[test]
    fn foc_sigma_one_branches_coincide() {
        let mut q = p();
        q.sigma = 1.0;
        for &c in &[-0.3, -1.0, -7.5] {
            let a1 = foc_activity(c, FocBranch::SelfConsistent, &q).unwrap();
            let a2 = foc_activity(c, FocBranch::Internalized, &q).unwrap();
            assert_eq!(a1, a2);
        }
    }

    #[test]
    fn foc_matches_brute_force_sample() {
        // small deterministic sample; the full 1000-case scan runs in the
        // acceptance suite
        let mut state: u64 = 42;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let mut q = ModelParams::benchmark();
            q.sigma = 0.05 + 0.95 * next();
            q.alpha = 0.3 + 3.0 * next();
            q.a_ik = q.a_min + (1.0 - q.a_min) * next();
            let c = -10.0f64.powf(-2.0 + 4.0 * next());
            let internal = next() < 0.5;
            let a_tilde = q.a_min + (1.0 - q.a_min) * next();
            let (branch, k_obj): (FocBranch, Box<dyn Fn(f64) -> f64>) = if internal {
                (
                    FocBranch::Internalized,
                    Box::new(move |a: f64| {
                        utility(a, q.alpha).unwrap()
                            + c * a * (q.sigma * q.a_ik + (1.0 - q.sigma) * a)
                    }),
                )
            } else {
                (
                    FocBranch::Response { a_tilde },
                    Box::new(move |a: f64| {
                        utility(a, q.alpha).unwrap()
                            + c * a * (q.sigma * q.a_ik + (1.0 - q.sigma) * a_tilde)
                    }),
                )
            };
            let a = foc_activity(c, branch, &q).unwrap();
            let mut best = (q.a_min, k_obj(q.a_min));
            let n = 20_000;
            for i in 0..=n {
                let x = q.a_min + (1.0 - q.a_min) * i as f64 / n as f64;
                let v = k_obj(x);
                if v > best.1 {
                    best = (x, v);
                }
            }
            assert!(
                (a - best.0).abs() < 2.0e-4,
                "foc {a} vs scan {} (c={c}, internal={internal})",
                best.0
            );
        }
    }
}
