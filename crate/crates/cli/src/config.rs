//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, keys are dotted
//! (`cmlmc.eps`). Unknown or repeated keys are errors, and every error
//! that can be traced to a line names it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use mlmc_risk::errors::BootstrapSettings;
use mlmc_risk::hierarchy::Model;
use mlmc_risk::models::poisson_var_cvar_exact;
use mlmc_risk::{BlackScholesModel, CmlmcConfig, CostModel, PoissonModel, StatisticKind};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "`{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every recognised key with its default. `None` means the default depends
/// on the model or the key is optional.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("model.name", Some("poisson")),
    ("model.forcing", Some("432")),
    ("model.r", Some("0.05")),
    ("model.sigma", Some("0.2")),
    ("model.maturity", Some("1")),
    ("model.strike", Some("10")),
    ("model.s0", Some("10")),
    ("model.steps0", Some("4")),
    ("seed", Some("0")),
    ("statistic", Some("cvar")),
    ("cost.model", Some("theoretical")),
    ("tau", Some("0.7")),
    ("theta.min", None),
    ("theta.max", None),
    ("cmlmc.eps", Some("0.05")),
    ("cmlmc.w_i", Some("0.1")),
    ("cmlmc.w_b", Some("0.3")),
    ("cmlmc.w_s", Some("0.6")),
    ("cmlmc.d", Some("3")),
    ("cmlmc.lambda", Some("1.5")),
    ("cmlmc.kappa", Some("1.1")),
    ("cmlmc.initial_nodes", Some("10")),
    ("cmlmc.max_nodes", Some("1000")),
    ("cmlmc.max_iterations", Some("25")),
    ("cmlmc.l_cap", None),
    ("cmlmc.n_fine", Some("1000")),
    ("cmlmc.kde_max_samples", Some("4000")),
    ("screening.levels", None),
    ("screening.samples", None),
    ("bootstrap.initial", Some("100")),
    ("bootstrap.cap", Some("12800")),
    ("var.refine_min", None),
    ("var.refine_max", None),
    ("var.refine_nodes", Some("10")),
    ("study.repetitions", Some("20")),
    ("study.tolerances", Some("0.1, 0.05, 0.025")),
    ("study.reference", Some("exact")),
    ("study.reference_file", None),
    ("study.n_ref", Some("1000")),
    ("compare.interp_nodes", Some("5, 10, 20, 40, 80")),
    ("compare.bias_level", Some("5")),
    ("compare.bias_samples", Some("10, 100, 1000, 10000")),
    ("compare.decay_levels", Some("5")),
    ("compare.decay_samples", Some("100")),
    ("compare.nodes", Some("10")),
    ("compare.repetitions", Some("20")),
    ("compare.stat_levels", Some("5")),
    ("compare.stat_n0", Some("50, 200")),
    ("compare.stat_r", Some("-1, 0, 1")),
    ("compare.stat_bootstrap", Some("100")),
    ("compare.lemma_sizes", Some("400, 100, 25")),
    ("compare.lemma_repetitions", Some("500")),
];

/// Parsed but untyped file: key → (value, line).
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |key: Option<&str>, message: String| ConfigError {
                line: Some(lineno),
                key: key.map(str::to_string),
                message,
            };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(None, format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(err(None, "missing key before `=`".into()));
            }
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(err(Some(key), "unknown key".into()));
            }
            if value.is_empty() {
                return Err(err(Some(key), "missing value".into()));
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(err(Some(key), format!("duplicate key (first set on line {first})")));
            }
            entries.insert(key.to_string(), (value.to_string(), lineno));
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), (value, 0));
    }

    fn get(&self, key: &str) -> Option<(&str, Option<usize>)> {
        self.entries
            .get(key)
            .map(|(v, l)| (v.as_str(), (*l > 0).then_some(*l)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Poisson { forcing: f64 },
    BlackScholes(BlackScholesModel),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Poisson { .. } => "poisson",
            ModelSpec::BlackScholes(_) => "black_scholes",
        }
    }

    pub fn build(&self) -> Arc<dyn Model> {
        match self {
            ModelSpec::Poisson { forcing } => Arc::new(PoissonModel::new(*forcing).expect("forcing checked on load")),
            ModelSpec::BlackScholes(m) => Arc::new(m.clone()),
        }
    }

    /// Exact `(VaR, CVaR)` of the limiting QoI.
    pub fn exact_var_cvar(&self, tau: f64) -> mlmc_risk::Result<(f64, f64)> {
        match self {
            // Q = (C/72) ξ; both risk measures are positively homogeneous.
            ModelSpec::Poisson { forcing } => {
                let (q, c) = poisson_var_cvar_exact(tau)?;
                let s = forcing / 432.0;
                Ok((s * q, s * c))
            }
            ModelSpec::BlackScholes(m) => m.var_cvar_exact(tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Exact,
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub repetitions: usize,
    pub tolerances: Vec<f64>,
    pub reference: Reference,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSettings {
    pub interp_nodes: Vec<usize>,
    pub bias_level: usize,
    pub bias_samples: Vec<usize>,
    pub decay_levels: usize,
    pub decay_samples: usize,
    pub nodes: usize,
    pub repetitions: usize,
    pub stat_levels: usize,
    pub stat_n0: Vec<usize>,
    pub stat_r: Vec<i32>,
    pub stat_bootstrap: usize,
    pub lemma_sizes: Vec<usize>,
    pub lemma_repetitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarRefine {
    pub theta_min: f64,
    pub theta_max: f64,
    pub nodes: usize,
}

/// A fully typed and validated configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub model: ModelSpec,
    pub cmlmc: CmlmcConfig,
    pub statistic: StatisticKind,
    pub var_refine: Option<VarRefine>,
    pub study: StudySettings,
    pub compare: CompareSettings,
    /// Effective value of every key, defaults included.
    pub effective: BTreeMap<String, String>,
}

impl Settings {
    pub fn from_text(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        if let Some(s) = seed_override {
            raw.set("seed", s.to_string());
        }
        Self::from_raw(&raw)
    }

    pub fn load(path: &std::path::Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_text(&text, seed_override)
    }

    pub fn seed(&self) -> u64 {
        self.cmlmc.seed
    }

    /// SHA-256 over the effective `key=value` lines, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.effective {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut r = Reader { raw, effective: BTreeMap::new() };

        let name = r.string("model.name")?;
        let model = match name.as_str() {
            "poisson" => ModelSpec::Poisson { forcing: r.f64("model.forcing", |v| v > 0.0, "a positive number")? },
            "black_scholes" => {
                let m = BlackScholesModel {
                    r: r.f64("model.r", |_| true, "a number")?,
                    sigma: r.f64("model.sigma", |v| v > 0.0, "a positive number")?,
                    maturity: r.f64("model.maturity", |v| v > 0.0, "a positive number")?,
                    strike: r.f64("model.strike", |v| v >= 0.0, "a non-negative number")?,
                    s0: r.f64("model.s0", |v| v > 0.0, "a positive number")?,
                    steps0: r.usize("model.steps0", |v| v >= 1, "a positive integer")?,
                };
                ModelSpec::BlackScholes(m)
            }
            other => return Err(r.fail("model.name", format!("expected `poisson` or `black_scholes`, got `{other}`"))),
        };
        let is_bs = matches!(model, ModelSpec::BlackScholes(_));
        let built = model.build();
        let mut cfg = CmlmcConfig::new(built.clone());

        cfg.seed = r.u64("seed")?;
        let statistic: StatisticKind = {
            let s = r.string("statistic")?;
            s.parse().map_err(|_| r.fail("statistic", format!("expected phi0|phi1|phi2|cdf|pdf|var|cvar, got `{s}`")))?
        };
        cfg.cost_model = match r.string("cost.model")?.as_str() {
            "theoretical" => CostModel::Theoretical,
            "measured" => CostModel::Measured,
            other => return Err(r.fail("cost.model", format!("expected `theoretical` or `measured`, got `{other}`"))),
        };
        cfg.tau = r.f64("tau", |v| v > 0.0 && v < 1.0, "a number in (0, 1)")?;
        let (tmin, tmax) = if is_bs { ("0.5", "2") } else { ("1.5", "2.5") };
        cfg.theta_min = r.f64_or("theta.min", tmin, |_| true, "a number")?;
        cfg.theta_max = r.f64_or("theta.max", tmax, |_| true, "a number")?;
        if !(cfg.theta_max > cfg.theta_min) {
            return Err(r.fail("theta.max", "must exceed theta.min".into()));
        }

        cfg.eps = r.f64("cmlmc.eps", |v| v > 0.0, "a positive number")?;
        let w_i = r.f64("cmlmc.w_i", |v| v > 0.0, "a positive number")?;
        let w_b = r.f64("cmlmc.w_b", |v| v > 0.0, "a positive number")?;
        let w_s = r.f64("cmlmc.w_s", |v| v > 0.0, "a positive number")?;
        if ((w_i + w_b + w_s) - 1.0).abs() > 1e-9 {
            let anchor = ["cmlmc.w_s", "cmlmc.w_b", "cmlmc.w_i"]
                .into_iter()
                .find(|k| raw.get(k).is_some())
                .unwrap_or("cmlmc.w_s");
            return Err(r.fail(anchor, format!("weights must sum to 1, got {}", w_i + w_b + w_s)));
        }
        cfg.weights = [w_i, w_b, w_s];
        cfg.d = r.usize("cmlmc.d", |_| true, "a non-negative integer")?;
        cfg.lambda = r.f64("cmlmc.lambda", |v| v > 1.0, "a number above 1")?;
        cfg.kappa = r.f64("cmlmc.kappa", |v| v > 1.0, "a number above 1")?;
        if !(cfg.lambda > cfg.kappa) {
            return Err(r.fail("cmlmc.kappa", "must be smaller than cmlmc.lambda".into()));
        }
        cfg.initial_nodes = r.usize("cmlmc.initial_nodes", |v| v >= 4, "an integer >= 4")?;
        cfg.max_nodes = r.usize("cmlmc.max_nodes", |v| v >= 4, "an integer >= 4")?;
        if cfg.max_nodes < cfg.initial_nodes {
            return Err(r.fail("cmlmc.max_nodes", "must be at least cmlmc.initial_nodes".into()));
        }
        cfg.max_iterations = r.usize("cmlmc.max_iterations", |v| v >= 1, "a positive integer")?;
        let max_level = built.max_level();
        let default_cap = max_level.min(10).to_string();
        cfg.l_cap = r.usize_or("cmlmc.l_cap", &default_cap, |v| v <= max_level, &format!("an integer <= {max_level}"))?;
        cfg.n_fine = r.usize("cmlmc.n_fine", |v| v >= 7, "an integer >= 7")?;
        cfg.kde_max_samples = r.usize("cmlmc.kde_max_samples", |v| v >= 2, "an integer >= 2")?;

        let (sl, ss) = if is_bs { ("4", "1000") } else { ("3", "25") };
        cfg.screening_levels = r.usize_or("screening.levels", sl, |v| v >= 3, "an integer >= 3")?;
        cfg.screening_samples = r.usize_or("screening.samples", ss, |v| v >= 2, "an integer >= 2")?;
        if cfg.screening_levels > cfg.l_cap + 1 {
            return Err(r.fail("screening.levels", format!("needs l_cap >= {}", cfg.screening_levels - 1)));
        }

        let initial = r.usize("bootstrap.initial", |v| v >= 2, "an integer >= 2")?;
        let cap = r.usize("bootstrap.cap", |v| v >= 2, "an integer >= 2")?;
        if cap < initial {
            return Err(r.fail("bootstrap.cap", "must be at least bootstrap.initial".into()));
        }
        cfg.bootstrap = BootstrapSettings { initial, cap, n_fine: cfg.n_fine };

        let var_refine = match (raw.get("var.refine_min"), raw.get("var.refine_max")) {
            (None, None) => {
                r.usize("var.refine_nodes", |v| v >= 4, "an integer >= 4")?;
                None
            }
            (Some(_), Some(_)) => {
                let a = r.f64_or("var.refine_min", "", |_| true, "a number")?;
                let b = r.f64_or("var.refine_max", "", |_| true, "a number")?;
                if !(b > a) {
                    return Err(r.fail("var.refine_max", "must exceed var.refine_min".into()));
                }
                let nodes = r.usize("var.refine_nodes", |v| v >= 4, "an integer >= 4")?;
                Some(VarRefine { theta_min: a, theta_max: b, nodes })
            }
            (Some(_), None) => return Err(r.fail("var.refine_min", "var.refine_max must be set too".into())),
            (None, Some(_)) => return Err(r.fail("var.refine_max", "var.refine_min must be set too".into())),
        };

        let study = StudySettings {
            repetitions: r.usize("study.repetitions", |v| v >= 1, "a positive integer")?,
            tolerances: r.f64_list("study.tolerances", |v| v > 0.0, "positive numbers")?,
            reference: match r.string("study.reference")?.as_str() {
                "exact" => Reference::Exact,
                "file" => match raw.get("study.reference_file") {
                    Some(_) => Reference::File(r.string("study.reference_file")?),
                    None => return Err(r.fail("study.reference", "`file` needs study.reference_file".into())),
                },
                other => return Err(r.fail("study.reference", format!("expected `exact` or `file`, got `{other}`"))),
            },
            n_ref: r.usize("study.n_ref", |v| v >= 2, "an integer >= 2")?,
        };

        let compare = CompareSettings {
            interp_nodes: r.usize_list("compare.interp_nodes", |v| v >= 4, "integers >= 4")?,
            bias_level: r.usize("compare.bias_level", |v| v >= 1 && v <= max_level, "a level >= 1 the model supports")?,
            bias_samples: r.usize_list("compare.bias_samples", |v| v >= 2, "integers >= 2")?,
            decay_levels: r.usize("compare.decay_levels", |v| v >= 2 && v <= max_level, "a level >= 2 the model supports")?,
            decay_samples: r.usize("compare.decay_samples", |v| v >= 2, "an integer >= 2")?,
            nodes: r.usize("compare.nodes", |v| v >= 4, "an integer >= 4")?,
            repetitions: r.usize("compare.repetitions", |v| v >= 1, "a positive integer")?,
            stat_levels: r.usize("compare.stat_levels", |v| v <= max_level, "a level the model supports")?,
            stat_n0: r.usize_list("compare.stat_n0", |v| v >= 1, "positive integers")?,
            stat_r: r.i32_list("compare.stat_r")?,
            stat_bootstrap: r.usize("compare.stat_bootstrap", |v| v >= 2, "an integer >= 2")?,
            lemma_sizes: r.usize_list("compare.lemma_sizes", |v| v >= 2, "integers >= 2")?,
            lemma_repetitions: r.usize("compare.lemma_repetitions", |v| v >= 2, "an integer >= 2")?,
        };
        if compare.lemma_sizes.len() > max_level + 1 {
            return Err(r.fail("compare.lemma_sizes", "more levels than the model supports".into()));
        }

        // Anything the checks above missed; no single line to blame here.
        cfg.validate().map_err(|e| ConfigError { line: None, key: None, message: e.to_string() })?;

        // Keys only relevant to the other model still enter the hash with
        // their defaults, so the hash does not depend on which are listed.
        for (k, d) in KEYS {
            if !r.effective.contains_key(*k) {
                if let Some((v, _)) = raw.get(k) {
                    r.effective.insert(k.to_string(), v.to_string());
                } else if let Some(d) = d {
                    r.effective.insert(k.to_string(), d.to_string());
                }
            }
        }
        Ok(Self { model, cmlmc: cfg, statistic, var_refine, study, compare, effective: r.effective })
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
    effective: BTreeMap<String, String>,
}

impl Reader<'_> {
    fn fail(&self, key: &str, message: String) -> ConfigError {
        ConfigError { line: self.raw.get(key).and_then(|(_, l)| l), key: Some(key.to_string()), message }
    }

    fn text(&mut self, key: &str, fallback: &str) -> String {
        let default = KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d).unwrap_or(fallback);
        let v = self.raw.get(key).map(|(v, _)| v).unwrap_or(default).to_string();
        self.effective.insert(key.to_string(), v.clone());
        v
    }

    fn string(&mut self, key: &str) -> Result<String> {
        Ok(self.text(key, ""))
    }

    fn f64_or(&mut self, key: &str, fallback: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64> {
        let s = self.text(key, fallback);
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && ok(v) => Ok(v),
            _ => Err(self.fail(key, format!("expected {what}, got `{s}`"))),
        }
    }

    fn f64(&mut self, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64> {
        self.f64_or(key, "", ok, what)
    }

    fn usize_or(&mut self, key: &str, fallback: &str, ok: impl Fn(usize) -> bool, what: &str) -> Result<usize> {
        let s = self.text(key, fallback);
        match s.parse::<usize>() {
            Ok(v) if ok(v) => Ok(v),
            _ => Err(self.fail(key, format!("expected {what}, got `{s}`"))),
        }
    }

    fn usize(&mut self, key: &str, ok: impl Fn(usize) -> bool, what: &str) -> Result<usize> {
        self.usize_or(key, "", ok, what)
    }

    fn u64(&mut self, key: &str) -> Result<u64> {
        let s = self.text(key, "");
        s.parse().map_err(|_| self.fail(key, format!("expected an unsigned 64-bit integer, got `{s}`")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, ok: impl Fn(&T) -> bool, what: &str) -> Result<Vec<T>> {
        let s = self.text(key, "");
        let items: Option<Vec<T>> = s.split(',').map(|p| p.trim().parse().ok().filter(|v| ok(v))).collect();
        match items {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(self.fail(key, format!("expected a comma-separated list of {what}, got `{s}`"))),
        }
    }

    fn f64_list(&mut self, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<Vec<f64>> {
        self.list(key, |v: &f64| v.is_finite() && ok(*v), what)
    }

    fn usize_list(&mut self, key: &str, ok: impl Fn(usize) -> bool, what: &str) -> Result<Vec<usize>> {
        self.list(key, |v: &usize| ok(*v), what)
    }

    fn i32_list(&mut self, key: &str) -> Result<Vec<i32>> {
        self.list(key, |v: &i32| v.abs() <= 4, "integers in [-4, 4]")
    }
}

/// Reads `var = …` / `cvar = …` from a reference file in the same format.
pub fn read_reference_file(path: &std::path::Path) -> std::result::Result<(Option<f64>, Option<f64>), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        key: None,
        message: format!("cannot read reference file {}: {e}", path.display()),
    })?;
    let mut out = (None, None);
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |m: String| ConfigError { line: Some(i + 1), key: None, message: m };
        let (k, v) = body.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| err(format!("`{}` is not a number", v.trim())))?;
        match k.trim() {
            "var" => out.0 = Some(v),
            "cvar" => out.1 = Some(v),
            other => return Err(err(format!("unknown reference key `{other}`"))),
        }
    }
    Ok(out)
}
