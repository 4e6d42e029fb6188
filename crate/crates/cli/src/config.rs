//! The `key = value` run configuration.
//!
//! Top-level keys apply to every command. Keys under `[certify]`, `[solve]`
//! or `[sweep]` apply only when that command runs and then override the
//! top-level value. Keys in inactive sections are still validated.

use std::fmt;
use std::path::PathBuf;

use proxcert_core::problems::{LassoMode, FIXTURE_NAMES};
use proxcert_core::solvers::ScheduleKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Certify,
    Solve,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Certify => "certify",
            Self::Solve => "solve",
            Self::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "certify" => Some(Self::Certify),
            "solve" => Some(Self::Solve),
            "sweep" => Some(Self::Sweep),
            _ => None,
        }
    }
}

/// What `certify` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// The fixture's full regression table; passes iff every row agrees.
    Table,
    Psm,
    Psr,
    /// Marginal conditions on a saddle problem (`lasso`, `tv1d`).
    Marginal,
}

impl CheckMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Table => "table",
            Self::Psm => "psm",
            Self::Psr => "psr",
            Self::Marginal => "marginal",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Table, Self::Psm, Self::Psr, Self::Marginal].into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    /// PDHGM for saddle problems, proximal point otherwise.
    Auto,
    ProxPoint,
    Pdhgm,
}

impl MethodChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::ProxPoint => "prox_point",
            Self::Pdhgm => "pdhgm",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Auto, Self::ProxPoint, Self::Pdhgm].into_iter().find(|c| c.as_str() == s)
    }
}

/// Parameters a sweep may vary.
pub const SWEEP_PARAMS: [&str; 10] =
    ["gamma_tilde", "gamma", "rho", "tau", "sigma", "delta", "xi", "alpha", "seed", "step_product"];

/// A validated run configuration. Defaults are listed per field.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Required.
    pub command: Command,

    // problem selection
    /// Default `dist_pm1`.
    pub fixture: String,
    /// Instance file (`lasso` or `tv1d` text format); replaces `fixture`. Default none.
    pub instance: Option<PathBuf>,
    /// Lasso/TV primal dimension. Default: fixture default (lasso 10, tv1d 20).
    pub n: Option<usize>,
    /// Lasso rows. Default 8.
    pub m: Option<usize>,
    /// Regularization weight or ball radius. Default: fixture default (lasso 1, tv1d 0.1, ball 1).
    pub alpha: Option<f64>,
    /// Lasso generator mode. Default `strict`.
    pub mode: LassoMode,
    /// Generator and sampling seed. Default 7.
    pub seed: u64,
    /// `dist_dyadic` depth. Default 20.
    pub levels: Option<usize>,
    /// `subspace_mu` half width. Default 0.5.
    pub mu: Option<f64>,
    /// `cone_gamma` opening. Default 0.5.
    pub cone_gamma: Option<f64>,
    /// `ball_indicator` base `‖q*‖`. Default 1.
    pub q_norm: Option<f64>,
    /// `abs_value` base `q*`. Default 0.3.
    pub q: Option<f64>,

    // certifier
    /// Default `table`.
    pub check: CheckMode,
    /// Primal scale of `Ξ` (PSM) or `P` (PSR). Default 0.
    pub xi: Option<f64>,
    /// Dual scale of `Ξ`/`P`. Default: `xi`.
    pub xi_dual: Option<f64>,
    /// Default 1.
    pub n_weight: f64,
    /// Default: `n_weight`.
    pub n_weight_dual: Option<f64>,
    /// Default 1.
    pub m_weight: f64,
    /// Default: `m_weight`.
    pub m_weight_dual: Option<f64>,
    /// Neighbourhood radius; replaces per-axis widths. Default: fixture's.
    pub radius: Option<f64>,
    /// Grid points per axis. Default: fixture's.
    pub grid: Option<usize>,
    /// Uniform random samples. Default: fixture's.
    pub random_samples: Option<usize>,
    /// Verdict slack. Default 1e-9.
    pub slack: f64,
    /// Default 100.
    pub max_counterexamples: usize,
    /// Default 1000.
    pub revalidation_samples: usize,

    // solver
    /// Default `auto`.
    pub method: MethodChoice,
    /// Default `linear`.
    pub schedule: ScheduleKind,
    /// Initial primal step. Default: derived from `sigma` and `step_product`,
    /// or `√step_product/‖K‖` when `sigma` is unset too. Proximal point: fixture's.
    pub tau: Option<f64>,
    /// Initial dual step. Default: derived like `tau`.
    pub sigma: Option<f64>,
    /// `τσ‖K‖²` used to derive missing steps. Default 0.5.
    pub step_product: f64,
    /// Primal constant `γ`. Default: lasso 0.1, tv1d 1, else 0.
    pub gamma: Option<f64>,
    /// Dual constant `ρ`. Default: lasso 1, tv1d flatness/α, else 0.
    pub rho: Option<f64>,
    /// Acceleration `γ̃`. Default 1.
    pub gamma_tilde: f64,
    /// Default 0.5.
    pub delta: f64,
    /// Default 1.
    pub phi0: f64,
    /// Default 2000.
    pub max_iter: usize,
    /// Stop once the optimality residual drops below this. Default 0 (never).
    pub stop_tol: f64,
    /// Default 1e6.
    pub divergence_factor: f64,
    /// Trailing records used by the rate fit (at least 5). Default 200.
    pub window: usize,
    /// Constant primal start. Default 0.1 (proximal point: fixture's start).
    pub x0: Option<f64>,
    /// Constant dual start. Default 0.
    pub y0: f64,

    // sweep
    /// One of [`SWEEP_PARAMS`]. Required for `sweep`.
    pub sweep_param: Option<String>,
    /// Comma separated values. Required for `sweep`.
    pub sweep_values: Vec<f64>,

    /// Output directory. Default `proxcert-out`.
    pub output: PathBuf,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            fixture: "dist_pm1".into(),
            instance: None,
            n: None,
            m: None,
            alpha: None,
            mode: LassoMode::StrictlyComplementary,
            seed: 7,
            levels: None,
            mu: None,
            cone_gamma: None,
            q_norm: None,
            q: None,
            check: CheckMode::Table,
            xi: None,
            xi_dual: None,
            n_weight: 1.0,
            n_weight_dual: None,
            m_weight: 1.0,
            m_weight_dual: None,
            radius: None,
            grid: None,
            random_samples: None,
            slack: 1e-9,
            max_counterexamples: 100,
            revalidation_samples: 1000,
            method: MethodChoice::Auto,
            schedule: ScheduleKind::Linear,
            tau: None,
            sigma: None,
            step_product: 0.5,
            gamma: None,
            rho: None,
            gamma_tilde: 1.0,
            delta: 0.5,
            phi0: 1.0,
            max_iter: 2000,
            stop_tol: 0.0,
            divergence_factor: 1e6,
            window: 200,
            x0: None,
            y0: 0.0,
            sweep_param: None,
            sweep_values: Vec::new(),
            output: PathBuf::from("proxcert-out"),
        }
    }

    /// Sets a sweep parameter by name (validated as in the config file).
    pub fn set_sweep_value(&mut self, param: &str, v: f64) -> Result<(), ConfigError> {
        let text = if param == "seed" { format!("{}", v as u64) } else { format!("{v:e}") };
        self.set(param, &text, 0)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<(), ConfigError> {
        let e = |msg: String| ConfigError::at(msg, line);
        match key {
            "command" => {
                return Err(e("'command' must be a top-level key".into()));
            }
            "fixture" => {
                if !FIXTURE_NAMES.contains(&v) {
                    return Err(e(format!("unknown fixture '{v}'")));
                }
                self.fixture = v.into();
            }
            "instance" => self.instance = Some(PathBuf::from(v)),
            "n" => self.n = Some(int(key, v, 1, line)?),
            "m" => self.m = Some(int(key, v, 1, line)?),
            "alpha" => self.alpha = Some(num(key, v, line, |x| x >= 0.0, "must be >= 0")?),
            "mode" => self.mode = LassoMode::parse(v).ok_or_else(|| e(format!("unknown mode '{v}'")))?,
            "seed" => self.seed = int(key, v, 0, line)? as u64,
            "levels" => self.levels = Some(int(key, v, 0, line)?),
            "mu" => self.mu = Some(num(key, v, line, |x| x > 0.0, "must be > 0")?),
            "cone_gamma" => {
                self.cone_gamma = Some(num(key, v, line, |x| (0.0..=1.0).contains(&x), "must lie in [0, 1]")?)
            }
            "q_norm" => self.q_norm = Some(num(key, v, line, |x| x > 0.0, "must be > 0")?),
            "q" => self.q = Some(num(key, v, line, |x| x.abs() < 1.0, "must satisfy |q| < 1")?),
            "check" => self.check = CheckMode::parse(v).ok_or_else(|| e(format!("unknown check '{v}'")))?,
            "xi" => self.xi = Some(num(key, v, line, |_| true, "")?),
            "xi_dual" => self.xi_dual = Some(num(key, v, line, |_| true, "")?),
            "n_weight" => self.n_weight = num(key, v, line, |_| true, "")?,
            "n_weight_dual" => self.n_weight_dual = Some(num(key, v, line, |_| true, "")?),
            "m_weight" => self.m_weight = num(key, v, line, |x| x >= 0.0, "must be >= 0")?,
            "m_weight_dual" => self.m_weight_dual = Some(num(key, v, line, |x| x >= 0.0, "must be >= 0")?),
            "radius" => self.radius = Some(num(key, v, line, |x| x > 0.0, "must be > 0")?),
            "grid" => self.grid = Some(int(key, v, 3, line)?),
            "random_samples" => self.random_samples = Some(int(key, v, 0, line)?),
            "slack" => self.slack = num(key, v, line, |x| x >= 0.0, "must be >= 0")?,
            "max_counterexamples" => self.max_counterexamples = int(key, v, 0, line)?,
            "revalidation_samples" => self.revalidation_samples = int(key, v, 0, line)?,
            "method" => self.method = MethodChoice::parse(v).ok_or_else(|| e(format!("unknown method '{v}'")))?,
            "schedule" => {
                self.schedule = ScheduleKind::parse(v).ok_or_else(|| e(format!("unknown schedule '{v}'")))?
            }
            "tau" => self.tau = Some(num(key, v, line, |x| x > 0.0, "must be > 0")?),
            "sigma" => self.sigma = Some(num(key, v, line, |x| x > 0.0, "must be > 0")?),
            "step_product" => {
                self.step_product = num(key, v, line, |x| x > 0.0 && x < 1.0, "must lie in (0, 1)")?
            }
            "gamma" => self.gamma = Some(num(key, v, line, |x| x >= 0.0, "must be >= 0")?),
            "rho" => self.rho = Some(num(key, v, line, |x| x >= 0.0, "must be >= 0")?),
            "gamma_tilde" => self.gamma_tilde = num(key, v, line, |x| x > 0.0, "must be > 0")?,
            "delta" => self.delta = num(key, v, line, |x| x > 0.0 && x < 1.0, "must lie in (0, 1)")?,
            "phi0" => self.phi0 = num(key, v, line, |x| x > 0.0, "must be > 0")?,
            "max_iter" => self.max_iter = int(key, v, 0, line)?,
            "stop_tol" => self.stop_tol = num(key, v, line, |x| x >= 0.0, "must be >= 0")?,
            "divergence_factor" => self.divergence_factor = num(key, v, line, |x| x > 1.0, "must be > 1")?,
            "window" => self.window = int(key, v, 5, line)?,
            "x0" => self.x0 = Some(num(key, v, line, |_| true, "")?),
            "y0" => self.y0 = num(key, v, line, |_| true, "")?,
            "sweep_param" => {
                if !SWEEP_PARAMS.contains(&v) {
                    return Err(e(format!("unknown sweep_param '{v}'")));
                }
                self.sweep_param = Some(v.into());
            }
            "sweep_values" => {
                let vals: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
                match vals {
                    Ok(vs) if !vs.is_empty() && vs.iter().all(|x| x.is_finite()) => self.sweep_values = vs,
                    _ => return Err(e(format!("invalid value for 'sweep_values': '{v}'"))),
                }
            }
            "output" => self.output = PathBuf::from(v),
            _ => return Err(e(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

fn num(key: &str, v: &str, line: usize, ok: impl Fn(f64) -> bool, why: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && ok(x) => Ok(x),
        Ok(x) if x.is_finite() => Err(ConfigError::at(format!("invalid value for '{key}': {x} {why}"), line)),
        _ => Err(ConfigError::at(format!("invalid value for '{key}': '{v}' is not a number"), line)),
    }
}

fn int(key: &str, v: &str, min: usize, line: usize) -> Result<usize, ConfigError> {
    match v.parse::<usize>() {
        Ok(x) if x >= min => Ok(x),
        Ok(x) => Err(ConfigError::at(format!("invalid value for '{key}': {x} must be >= {min}"), line)),
        Err(_) => Err(ConfigError::at(format!("invalid value for '{key}': '{v}' is not a non-negative integer"), line)),
    }
}

/// A configuration error; `line` is 1-based, 0 when not tied to a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub message: String,
    pub line: usize,
}

impl ConfigError {
    fn at(message: String, line: usize) -> Self {
        Self { message, line }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "{} (line {})", self.message, self.line)
        } else {
            f.write_str(&self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

struct Entry<'a> {
    section: Option<Command>,
    key: &'a str,
    value: &'a str,
    line: usize,
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut section = None;
    let mut command = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            section = Some(Command::parse(name).ok_or_else(|| ConfigError::at(format!("unknown section '{name}'"), line))?);
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::at(format!("expected 'key = value', got '{s}'"), line))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::at("empty key".into(), line));
        }
        if key == "command" {
            if section.is_some() {
                return Err(ConfigError::at("'command' must be a top-level key".into(), line));
            }
            if command.is_some() {
                return Err(ConfigError::at("duplicate key 'command'".into(), line));
            }
            command = Some(
                Command::parse(value).ok_or_else(|| ConfigError::at(format!("unknown command '{value}'"), line))?,
            );
            continue;
        }
        entries.push(Entry { section, key, value, line });
    }
    let command = command.ok_or_else(|| ConfigError::at("missing required key: command".into(), 0))?;
    let mut cfg = RunConfig::new(command);
    let mut scratch = RunConfig::new(command);
    for e in entries.iter().filter(|e| e.section.is_none()) {
        cfg.set(e.key, e.value, e.line)?;
    }
    for e in entries.iter().filter(|e| e.section.is_some()) {
        if e.section == Some(command) {
            cfg.set(e.key, e.value, e.line)?;
        } else {
            scratch.set(e.key, e.value, e.line)?;
        }
    }
    if command == Command::Sweep {
        if cfg.sweep_param.is_none() {
            return Err(ConfigError::at("missing required key: sweep_param".into(), 0));
        }
        if cfg.sweep_values.is_empty() {
            return Err(ConfigError::at("missing required key: sweep_values".into(), 0));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path() {
        let c = parse_config("command = solve\nfixture = lasso\nn = 10\nm = 8\nalpha = 1.0\nseed = 7\nschedule = linear")
            .unwrap();
        assert_eq!(c.command, Command::Solve);
        assert_eq!((c.fixture.as_str(), c.n, c.m, c.alpha, c.seed), ("lasso", Some(10), Some(8), Some(1.0), 7));
        assert_eq!(c.schedule, ScheduleKind::Linear);
    }

    #[test]
    fn error_messages_name_key_and_line() {
        let text = "command = solve\nfixture = lasso\nn = 10\nm = 8\nalpha = 1.0\nseed = 7\nschedule = warp\n";
        assert_eq!(parse_config(text).unwrap_err().to_string(), "unknown schedule 'warp' (line 7)");
        assert_eq!(parse_config("").unwrap_err().to_string(), "missing required key: command");
        assert_eq!(parse_config("command = solve\nbogus = 1").unwrap_err().to_string(), "unknown key 'bogus' (line 2)");
        let e = parse_config("command = solve\n\n# c\ndelta = 1.5").unwrap_err().to_string();
        assert!(e.contains("'delta'") && e.ends_with("(line 4)"), "{e}");
        let e = parse_config("command = certify\n[sweep]\nsweep_values = 1, x").unwrap_err().to_string();
        assert!(e.contains("sweep_values") && e.ends_with("(line 3)"), "{e}");
        assert!(parse_config("command = sweep\nsweep_values = 1").unwrap_err().to_string().contains("sweep_param"));
    }

    #[test]
    fn sections_override_only_for_their_command() {
        let text = "command = solve\nmax_iter = 10\n[solve]\nmax_iter = 20 # inline\n[certify]\nmax_iter = 30\n";
        assert_eq!(parse_config(text).unwrap().max_iter, 20);
        let text = text.replace("command = solve", "command = certify");
        assert_eq!(parse_config(&text).unwrap().max_iter, 30);
        assert!(parse_config("command = solve\n[plot]\n").is_err());
        assert!(parse_config("[solve]\ncommand = solve\n").is_err());
    }
}
