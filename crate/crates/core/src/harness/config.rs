//! Experiment configuration and its flat `section.key = value` file format.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key is
//! optional and falls back to [`ExperimentConfig::default`]. Keys:
//!
//! ```text
//! model.d1, model.d2, model.r, model.bound, model.alpha, model.n
//! model.kappa          = auto | <real>      (auto: realized sup-norm)
//! prior.kind           = student | factor
//! prior.tau            = auto | <real>      (auto: 1/n)
//! prior.k              = auto | <int>       (auto: min(d1, d2))
//! prior.a              = <real>
//! prior.b              = auto | <real>      (auto: the default scale for n, d1, d2, K, B)
//! prior.family         = inverse_gamma | gamma
//! pi.kind              = uniform | tilted
//! pi.strength          = <real ≥ 1>
//! mala.step_size, mala.n_steps, mala.thin, mala.factor_init_scale
//! mala.burn_in         = auto | <int>       (auto or absent: 20% of n_steps)
//! mala.adapt, mala.unadjusted, mala.precondition, mala.anneal = true | false
//! bounds.rate_constant = auto | <real>      (auto: explicit KL-bound constant)
//! run.replications, run.master_seed, run.workers
//! sweep.n_grid, sweep.r_grid = comma-separated integers (may be empty)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{b_default, kl_rho_pi_bound};
use crate::error::{contract, io_err, Error, Result};
use crate::model::FractionalExponent;
use crate::priors::{FactorPriorConfig, GammaFamily, StudentPriorConfig};
use crate::samplers::MalaConfig;

use super::synth::PiSpec;

/// A value that is either derived from the rest of the config or fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Auto<T> {
    Auto,
    Fixed(T),
}

impl<T: Copy> Auto<T> {
    pub fn resolve(self, derived: impl FnOnce() -> T) -> T {
        match self {
            Auto::Auto => derived(),
            Auto::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PriorChoice {
    Student {
        tau: Auto<f64>,
    },
    Factor {
        k: Auto<usize>,
        a: f64,
        b: Auto<f64>,
        family: GammaFamily,
    },
}

/// Prior with all `auto` values resolved for one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResolvedPrior {
    Student(StudentPriorConfig),
    Factor(FactorPriorConfig),
}

impl ResolvedPrior {
    pub fn label(&self) -> String {
        match self {
            ResolvedPrior::Student(c) => format!("student(tau={:?})", c.tau),
            ResolvedPrior::Factor(c) => format!(
                "factor(k={},a={:?},b={:?},family={})",
                c.k,
                c.a,
                c.b,
                c.family.name()
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub bound: f64,
    pub kappa: Auto<f64>,
    pub alpha: f64,
    pub n: usize,
    pub prior: PriorChoice,
    pub pi: PiSpec,
    pub mala: MalaConfig,
    pub rate_constant: Auto<f64>,
    pub replications: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub n_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d1: 12,
            d2: 12,
            r: 1,
            bound: 1.0,
            kappa: Auto::Auto,
            alpha: 0.99,
            n: 4000,
            prior: PriorChoice::Student { tau: Auto::Auto },
            pi: PiSpec::Uniform,
            mala: MalaConfig {
                step_size: 0.05,
                n_steps: 50_000,
                burn_in: 10_000,
                ..MalaConfig::default()
            },
            rate_constant: Auto::Auto,
            replications: 20,
            master_seed: 1,
            workers: 1,
            n_grid: vec![500, 1000, 2000, 4000, 8000],
            r_grid: vec![1, 2],
        }
    }
}

const KEYS: &[&str] = &[
    "model.d1",
    "model.d2",
    "model.r",
    "model.bound",
    "model.kappa",
    "model.alpha",
    "model.n",
    "prior.kind",
    "prior.tau",
    "prior.k",
    "prior.a",
    "prior.b",
    "prior.family",
    "pi.kind",
    "pi.strength",
    "mala.step_size",
    "mala.n_steps",
    "mala.burn_in",
    "mala.thin",
    "mala.adapt",
    "mala.unadjusted",
    "mala.precondition",
    "mala.anneal",
    "mala.factor_init_scale",
    "bounds.rate_constant",
    "run.replications",
    "run.master_seed",
    "run.workers",
    "sweep.n_grid",
    "sweep.r_grid",
];

/// Keys that do not change any output and are left out of the digest.
const UNDIGESTED: &[&str] = &["run.master_seed", "run.workers"];

fn fmt_auto<T: std::fmt::Debug>(v: &Auto<T>) -> String {
    match v {
        Auto::Auto => "auto".into(),
        Auto::Fixed(x) => format!("{x:?}"),
    }
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses the flat text format; `origin` is used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `section.key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if entries.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        let mut cfg = Self::default();
        let mut prior_kind = None;
        let mut pi_kind = None;
        let (mut tau, mut k, mut a, mut b, mut family) = (Auto::Auto, Auto::Auto, 1.0, Auto::Auto, GammaFamily::InverseGamma);
        let mut strength = 4.0;
        let mut burn_in = Auto::Auto;
        for (key, (line, value)) in &entries {
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: *line,
                message: format!("{key}: {message}"),
            };
            let int = || value.parse::<usize>().map_err(|e| err(e.to_string()));
            let real = || value.parse::<f64>().map_err(|e| err(e.to_string()));
            let boolean = || value.parse::<bool>().map_err(|e| err(e.to_string()));
            let auto_real = || -> Result<Auto<f64>> {
                if value == "auto" { Ok(Auto::Auto) } else { real().map(Auto::Fixed) }
            };
            let auto_int = || -> Result<Auto<usize>> {
                if value == "auto" { Ok(Auto::Auto) } else { int().map(Auto::Fixed) }
            };
            let list = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|e| err(e.to_string())))
                    .collect()
            };
            match key.as_str() {
                "model.d1" => cfg.d1 = int()?,
                "model.d2" => cfg.d2 = int()?,
                "model.r" => cfg.r = int()?,
                "model.bound" => cfg.bound = real()?,
                "model.kappa" => cfg.kappa = auto_real()?,
                "model.alpha" => cfg.alpha = real()?,
                "model.n" => cfg.n = int()?,
                "prior.kind" => prior_kind = Some(value.clone()),
                "prior.tau" => tau = auto_real()?,
                "prior.k" => k = auto_int()?,
                "prior.a" => a = real()?,
                "prior.b" => b = auto_real()?,
                "prior.family" => family = GammaFamily::parse(value).map_err(|e| err(e.to_string()))?,
                "pi.kind" => pi_kind = Some(value.clone()),
                "pi.strength" => strength = real()?,
                "mala.step_size" => cfg.mala.step_size = real()?,
                "mala.n_steps" => cfg.mala.n_steps = int()?,
                "mala.burn_in" => burn_in = auto_int()?,
                "mala.thin" => cfg.mala.thin = int()?,
                "mala.adapt" => cfg.mala.adapt = boolean()?,
                "mala.unadjusted" => cfg.mala.unadjusted = boolean()?,
                "mala.precondition" => cfg.mala.precondition = boolean()?,
                "mala.anneal" => cfg.mala.anneal = boolean()?,
                "mala.factor_init_scale" => cfg.mala.factor_init_scale = real()?,
                "bounds.rate_constant" => cfg.rate_constant = auto_real()?,
                "run.replications" => cfg.replications = int()?,
                "run.master_seed" => cfg.master_seed = value.parse::<u64>().map_err(|e| err(e.to_string()))?,
                "run.workers" => cfg.workers = int()?,
                "sweep.n_grid" => cfg.n_grid = list()?,
                "sweep.r_grid" => cfg.r_grid = list()?,
                _ => unreachable!("keys are checked against KEYS"),
            }
        }
        let kind_line = |key: &str| entries.get(key).map_or(0, |(l, _)| *l);
        cfg.prior = match prior_kind.as_deref() {
            None | Some("student") => PriorChoice::Student { tau },
            Some("factor") => PriorChoice::Factor { k, a, b, family },
            Some(other) => {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: kind_line("prior.kind"),
                    message: format!("prior.kind: expected student or factor, got `{other}`"),
                })
            }
        };
        cfg.pi = match pi_kind.as_deref() {
            None | Some("uniform") => PiSpec::Uniform,
            Some("tilted") => PiSpec::Tilted(strength),
            Some(other) => {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: kind_line("pi.kind"),
                    message: format!("pi.kind: expected uniform or tilted, got `{other}`"),
                })
            }
        };
        cfg.mala.burn_in = burn_in.resolve(|| cfg.mala.n_steps / 5);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(contract("d1 and d2 must be positive"));
        }
        if self.r > self.d1.min(self.d2) {
            return Err(contract(format!("r = {} exceeds min(d1, d2)", self.r)));
        }
        if !(self.bound > 0.0) {
            return Err(contract("model.bound must be positive"));
        }
        if let Auto::Fixed(k) = self.kappa {
            if !(k >= 0.0) {
                return Err(contract("model.kappa must be nonnegative"));
            }
        }
        FractionalExponent::new(self.alpha)?;
        if self.n == 0 {
            return Err(contract("model.n must be positive"));
        }
        self.pi.validate()?;
        self.mala.validate()?;
        if self.replications == 0 {
            return Err(contract("run.replications must be at least 1"));
        }
        if self.workers == 0 {
            return Err(contract("run.workers must be at least 1"));
        }
        self.resolve_prior()?;
        Ok(())
    }

    /// The prior with `auto` values filled in for this config's `n`.
    pub fn resolve_prior(&self) -> Result<ResolvedPrior> {
        match self.prior {
            PriorChoice::Student { tau } => Ok(ResolvedPrior::Student(StudentPriorConfig::new(
                tau.resolve(|| StudentPriorConfig::auto(self.n).tau),
            )?)),
            PriorChoice::Factor { k, a, b, family } => {
                let k = k.resolve(|| self.d1.min(self.d2));
                let b = b.resolve(|| b_default(self.n, self.d1, self.d2, k, self.bound));
                Ok(ResolvedPrior::Factor(FactorPriorConfig::new(k, a, b, family)?))
            }
        }
    }

    /// `C` in the factorized rate; `auto` makes the rate equal the explicit
    /// KL bound divided by `n`.
    pub fn resolve_rate_constant(&self) -> Result<f64> {
        match (self.rate_constant, self.prior) {
            (Auto::Fixed(c), _) => Ok(c),
            (Auto::Auto, PriorChoice::Factor { a, .. }) => {
                let ndd = (self.n * self.d1 * self.d2) as f64;
                let per_rank = kl_rho_pi_bound(self.n, self.d1, self.d2, 1, a)?;
                Ok(per_rank / ((self.d1 + self.d2) as f64 * ndd.ln()))
            }
            (Auto::Auto, PriorChoice::Student { .. }) => Ok(1.0),
        }
    }

    /// All keys in a fixed order, one per line.
    pub fn to_canonical_string(&self) -> String {
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        put("model.d1", self.d1.to_string());
        put("model.d2", self.d2.to_string());
        put("model.r", self.r.to_string());
        put("model.bound", format!("{:?}", self.bound));
        put("model.kappa", fmt_auto(&self.kappa));
        put("model.alpha", format!("{:?}", self.alpha));
        put("model.n", self.n.to_string());
        match &self.prior {
            PriorChoice::Student { tau } => {
                put("prior.kind", "student".into());
                put("prior.tau", fmt_auto(tau));
            }
            PriorChoice::Factor { k, a, b, family } => {
                put("prior.kind", "factor".into());
                put("prior.k", fmt_auto(k));
                put("prior.a", format!("{a:?}"));
                put("prior.b", fmt_auto(b));
                put("prior.family", family.name().into());
            }
        }
        match self.pi {
            PiSpec::Uniform => put("pi.kind", "uniform".into()),
            PiSpec::Tilted(s) => {
                put("pi.kind", "tilted".into());
                put("pi.strength", format!("{s:?}"));
            }
        }
        put("mala.step_size", format!("{:?}", self.mala.step_size));
        put("mala.n_steps", self.mala.n_steps.to_string());
        put("mala.burn_in", self.mala.burn_in.to_string());
        put("mala.thin", self.mala.thin.to_string());
        put("mala.adapt", self.mala.adapt.to_string());
        put("mala.unadjusted", self.mala.unadjusted.to_string());
        put("mala.precondition", self.mala.precondition.to_string());
        put("mala.anneal", self.mala.anneal.to_string());
        put("mala.factor_init_scale", format!("{:?}", self.mala.factor_init_scale));
        put("bounds.rate_constant", fmt_auto(&self.rate_constant));
        put("run.replications", self.replications.to_string());
        put("run.master_seed", self.master_seed.to_string());
        put("run.workers", self.workers.to_string());
        put("sweep.n_grid", fmt_list(&self.n_grid));
        put("sweep.r_grid", fmt_list(&self.r_grid));
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 (first 16 hex digits) of the canonical form without the seed
    /// and worker count.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for line in self.to_canonical_string().lines() {
            if UNDIGESTED.iter().any(|k| line.starts_with(&format!("{k} "))) {
                continue;
            }
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Copy at a different grid point.
    pub fn at_point(&self, n: usize, r: usize) -> Self {
        Self {
            n,
            r,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.prior = PriorChoice::Factor {
            k: Auto::Fixed(3),
            a: 1.5,
            b: Auto::Auto,
            family: GammaFamily::Gamma,
        };
        cfg.pi = PiSpec::Tilted(3.0);
        cfg.mala.burn_in = 123;
        cfg.r_grid.clear();
        let text = cfg.to_canonical_string();
        let back = ExperimentConfig::parse(&text, Path::new("x")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn digest_ignores_seed_and_workers() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            master_seed: 99,
            workers: 4,
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.at_point(1000, 1).digest());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "model.d1 = 4\n# comment\nmodel.nope = 3\n";
        match ExperimentConfig::parse(text, Path::new("c.cfg")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ExperimentConfig::parse("model.d1 = 4\nmodel.d1 = 5\n", Path::new("c")).is_err());
        assert!(ExperimentConfig::parse("model.d1 4\n", Path::new("c")).is_err());
        assert!(ExperimentConfig::parse("model.alpha = 1.0\n", Path::new("c")).is_err());
    }

    #[test]
    fn auto_values_resolve() {
        let cfg = ExperimentConfig::parse("model.n = 250\nprior.kind = student\n", Path::new("c")).unwrap();
        match cfg.resolve_prior().unwrap() {
            ResolvedPrior::Student(s) => assert_eq!(s.tau, 1.0 / 250.0),
            _ => panic!(),
        }
        assert_eq!(cfg.mala.burn_in, cfg.mala.n_steps / 5);
        let f = ExperimentConfig::parse(
            "model.n = 10\nmodel.d1 = 2\nmodel.d2 = 3\nprior.kind = factor\nprior.k = 2\nprior.a = 1\n",
            Path::new("c"),
        )
        .unwrap();
        match f.resolve_prior().unwrap() {
            ResolvedPrior::Factor(c) => assert_eq!(c.b, b_default(10, 2, 3, 2, 1.0)),
            _ => panic!(),
        }
    }
}
