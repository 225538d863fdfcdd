//! Run configuration: defaults, flat key = value file parsing, and flag
//! overrides share one `apply` path so every field is settable from either
//! place and unknown keys are rejected with the same message.

use episir::{GridSpec, IterationConfig, ModelParams, PrmeConfig, Wiring};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AllocationChoice {
    #[value(name = "myopic")]
    Myopic,
    #[value(name = "spp")]
    Spp,
    #[value(name = "pbe")]
    Pbe,
    #[value(name = "prme")]
    Prme,
    #[value(name = "static_efficient")]
    StaticEfficient,
    #[value(name = "all")]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    #[value(name = "none")]
    None,
    #[value(name = "sigma")]
    Sigma,
    #[value(name = "T_vaccine")]
    TVaccine,
    #[value(name = "a_Ik")]
    AIk,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Sigma => "sigma",
            SweepAxis::TVaccine => "T_vaccine",
            SweepAxis::AIk => "a_Ik",
        }
    }
}

fn parse_value_enum<T: clap::ValueEnum>(value: &str, what: &str) -> Result<T, String> {
    T::from_str(value, false).map_err(|_| {
        let names: Vec<String> = T::value_variants()
            .iter()
            .filter_map(|v| v.to_possible_value())
            .map(|p| p.get_name().to_string())
            .collect();
        format!("{what} must be one of {}, got '{value}'", names.join(", "))
    })
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub allocation: AllocationChoice,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub out_dir: PathBuf,
    pub dt: f64,
    pub horizon: f64,
    pub s0: f64,
    pub i0: f64,
    pub d0: f64,
    pub iter: IterationConfig,
    pub prme: PrmeConfig,
    pub wiring: Wiring,
    /// Parallel sweep jobs; 0 means one per available core.
    pub jobs: usize,
    pub population: f64,
    pub bracket: (f64, f64),
    /// Calibration target; estimated from the data when unset.
    pub target_peak: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ModelParams::benchmark(),
            grid: GridSpec::benchmark().with_mu(51),
            allocation: AllocationChoice::Pbe,
            axis: SweepAxis::None,
            values: Vec::new(),
            out_dir: PathBuf::from("out"),
            dt: 0.1,
            horizon: 3650.0,
            s0: 1.0 - 1e-6,
            i0: 1e-6,
            d0: 0.0,
            iter: IterationConfig::default(),
            prme: PrmeConfig::default(),
            wiring: Wiring::Decoupled,
            jobs: 0,
            population: 10_380_000.0,
            bracket: (-30.0, -4.0),
            target_peak: None,
        }
    }
}

impl RunConfig {
    /// Sets one field from its config key. Both the config file loader and
    /// the flag overrides go through here.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num(value: &str, key: &str) -> Result<f64, String> {
            value
                .parse()
                .map_err(|_| format!("key {key}: expected a number, got '{value}'"))
        }
        fn int(value: &str, key: &str) -> Result<usize, String> {
            value
                .parse()
                .map_err(|_| format!("key {key}: expected a nonnegative integer, got '{value}'"))
        }
        match key {
            "r" => self.params.r = num(value, key)?,
            "nu" => self.params.nu = num(value, key)?,
            "beta" => self.params.beta = num(value, key)?,
            "gamma" => self.params.gamma = num(value, key)?,
            "sigma" => self.params.sigma = num(value, key)?,
            "delta0" => self.params.delta0 = num(value, key)?,
            "alpha" => self.params.alpha = num(value, key)?,
            "a_min" => self.params.a_min = num(value, key)?,
            "u_d" => self.params.u_d = num(value, key)?,
            "a_ik" => self.params.a_ik = num(value, key)?,
            "u_ik_flow" => self.params.u_ik_flow = num(value, key)?,
            "n_s" => self.grid.n_s = int(value, key)?,
            "s_lo" => self.grid.s_lo = num(value, key)?,
            "s_hi" => self.grid.s_hi = num(value, key)?,
            "n_i" => self.grid.n_i = int(value, key)?,
            "i_lo" => self.grid.i_lo = num(value, key)?,
            "i_hi" => self.grid.i_hi = num(value, key)?,
            "i_median" => self.grid.i_median = num(value, key)?,
            "n_mu" => self.grid.n_mu = int(value, key)?,
            "allocation" => self.allocation = parse_value_enum(value, "allocation")?,
            "axis" => self.axis = parse_value_enum(value, "axis")?,
            "values" => {
                self.values = value
                    .split(',')
                    .map(|v| num(v.trim(), key))
                    .collect::<Result<_, _>>()?
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "dt" => self.dt = num(value, key)?,
            "horizon" => self.horizon = num(value, key)?,
            "s0" => self.s0 = num(value, key)?,
            "i0" => self.i0 = num(value, key)?,
            "d0" => self.d0 = num(value, key)?,
            "policy_tol" => self.iter.policy_tol = num(value, key)?,
            "linear_tol" => {
                self.iter.linear_tol = num(value, key)?;
                self.prme.linear_tol = self.iter.linear_tol;
            }
            "max_outer" => self.iter.max_outer = int(value, key)?,
            "prme_outer_tol" => self.prme.outer_tol = num(value, key)?,
            "prme_inner_tol" => self.prme.inner_tol = num(value, key)?,
            "prme_max_outer" => self.prme.max_outer = int(value, key)?,
            "prme_max_inner" => self.prme.max_inner = int(value, key)?,
            "prme_damping" => self.prme.damping = num(value, key)?,
            "wiring" => {
                self.wiring = match value {
                    "decoupled" => Wiring::Decoupled,
                    "joint" => Wiring::Joint,
                    _ => {
                        return Err(format!(
                            "wiring must be 'decoupled' or 'joint', got '{value}'"
                        ))
                    }
                }
            }
            "jobs" => self.jobs = int(value, key)?,
            "population" => self.population = num(value, key)?,
            "bracket_lo" => self.bracket.0 = num(value, key)?,
            "bracket_hi" => self.bracket.1 = num(value, key)?,
            "target_peak" => self.target_peak = Some(num(value, key)?),
            _ => return Err(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    /// Applies a flat key = value file; `#` starts a comment, blank lines are
    /// skipped, errors carry the line number.
    pub fn load_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value, got '{line}'", idx + 1))?;
            self.apply(key.trim(), value.trim())
                .map_err(|e| format!("config line {}: {e}", idx + 1))?;
        }
        Ok(())
    }

    /// Full validation of everything a run needs before any job starts.
    pub fn validate(&self) -> Result<(), String> {
        self.params.validate().map_err(|e| e.to_string())?;
        self.grid.validate().map_err(|e| e.to_string())?;
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(format!(
                "dt and horizon must be positive, got {} and {}",
                self.dt, self.horizon
            ));
        }
        episir::InitialState {
            s: self.s0,
            i: self.i0,
            d: self.d0,
        }
        .validate()
        .map_err(|e| e.to_string())?;
        if self.axis != SweepAxis::None && self.values.is_empty() {
            return Err("sweep axis is set but the value list is empty".into());
        }
        Ok(())
    }

    /// Fixed-order key = value rendering of the resolved configuration; the
    /// manifest embeds it and hashes it.
    pub fn render(&self) -> String {
        let p = &self.params;
        let g = &self.grid;
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("r", format!("{}", p.r));
        push("nu", format!("{}", p.nu));
        push("beta", format!("{}", p.beta));
        push("gamma", format!("{}", p.gamma));
        push("sigma", format!("{}", p.sigma));
        push("delta0", format!("{}", p.delta0));
        push("alpha", format!("{}", p.alpha));
        push("a_min", format!("{}", p.a_min));
        push("u_d", format!("{}", p.u_d));
        push("a_ik", format!("{}", p.a_ik));
        push("u_ik_flow", format!("{}", p.u_ik_flow));
        push("n_s", format!("{}", g.n_s));
        push("s_lo", format!("{}", g.s_lo));
        push("s_hi", format!("{}", g.s_hi));
        push("n_i", format!("{}", g.n_i));
        push("i_lo", format!("{}", g.i_lo));
        push("i_hi", format!("{}", g.i_hi));
        push("i_median", format!("{}", g.i_median));
        push("n_mu", format!("{}", g.n_mu));
        push("dt", format!("{}", self.dt));
        push("horizon", format!("{}", self.horizon));
        push("s0", format!("{}", self.s0));
        push("i0", format!("{}", self.i0));
        push("d0", format!("{}", self.d0));
        push("policy_tol", format!("{}", self.iter.policy_tol));
        push("linear_tol", format!("{}", self.iter.linear_tol));
        push("max_outer", format!("{}", self.iter.max_outer));
        push("prme_outer_tol", format!("{}", self.prme.outer_tol));
        push("prme_inner_tol", format!("{}", self.prme.inner_tol));
        push("prme_max_outer", format!("{}", self.prme.max_outer));
        push("prme_max_inner", format!("{}", self.prme.max_inner));
        push("prme_damping", format!("{}", self.prme.damping));
        push(
            "wiring",
            match self.wiring {
                Wiring::Decoupled => "decoupled".into(),
                Wiring::Joint => "joint".into(),
            },
        );
        push("jobs", format!("{}", self.jobs));
        push("population", format!("{}", self.population));
        push("bracket_lo", format!("{}", self.bracket.0));
        push("bracket_hi", format!("{}", self.bracket.1));
        push(
            "target_peak",
            match self.target_peak {
                Some(t) => format!("{t}"),
                None => "from_data".into(),
            },
        );
        push("params_hash", format!("{:016x}", p.hash()));
        push("grid_hash", format!("{:016x}", g.hash()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("betaa", "0.2").unwrap_err();
        assert!(err.contains("unknown config key 'betaa'"));
    }

    #[test]
    fn file_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# comment line\nsigma = 0.6   # trailing comment\n\nn_s = 24\nallocation = spp\nvalues = 0.2, 0.4\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.params.sigma, 0.6);
        assert_eq!(cfg.grid.n_s, 24);
        assert_eq!(cfg.allocation, AllocationChoice::Spp);
        assert_eq!(cfg.values, vec![0.2, 0.4]);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "sigma = 0.6\nnot a pair\n").unwrap();
        let err = RunConfig::default().load_file(&path).unwrap_err();
        assert!(err.contains("config line 2"), "{err}");
    }

    #[test]
    fn sweep_needs_values() {
        let mut cfg = RunConfig::default();
        cfg.apply("axis", "sigma").unwrap();
        assert!(cfg.validate().unwrap_err().contains("value list is empty"));
        cfg.apply("values", "0.2,0.4").unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn render_is_deterministic_and_tracks_fields() {
        let mut cfg = RunConfig::default();
        let before = cfg.render();
        assert_eq!(before, cfg.render());
        cfg.apply("sigma", "0.8").unwrap();
        assert_ne!(before, cfg.render());
        assert!(cfg.render().contains("sigma = 0.8\n"));
    }
}
