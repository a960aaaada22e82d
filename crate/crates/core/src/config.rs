//! Run configuration with a TOML text form.
//!
//! ```toml
//! seed = 20240601
//! output = "out"
//!
//! [model]
//! chi = 0.5
//! n_half = 16
//! rule = "gauss"
//!
//! [stationary]
//! nx = 400          # half-line cells; the box has twice as many
//! # length = 15.8   # default 10/β
//! epsilon = 0.0
//! ```
//!
//! Every section and key is optional; missing values take the defaults
//! below. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::Rule;
use crate::kinetic::{InitialCondition, Scheme};
use crate::macroscopic::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub chi: f64,
    pub n_half: usize,
    pub rule: Rule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            chi: 0.5,
            n_half: 16,
            rule: Rule::Gauss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolConfig {
    /// Root tolerance of the dispersion relation.
    pub root: f64,
    /// Fixed-point tolerance of the half-space solver.
    pub fixed_point: f64,
    /// Power-iteration tolerance.
    pub eigen: f64,
    pub max_iter: usize,
}

impl Default for TolConfig {
    fn default() -> Self {
        Self {
            root: 1e-12,
            fixed_point: 1e-13,
            eigen: 1e-13,
            max_iter: 500_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub nx: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    pub epsilon: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            nx: 400,
            length: None,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    /// Box cells (even).
    pub nx: usize,
    /// Half-width of the box.
    pub length: f64,
    pub t_end: f64,
    pub cfl: f64,
    pub scheme: String,
    pub ic: String,
    pub record_every: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            nx: 400,
            length: 4.0,
            t_end: 250.0,
            cfl: 0.5,
            scheme: "heun".into(),
            ic: "uniform".into(),
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorsConfig {
    /// Box cells (even).
    pub nx: usize,
    pub n_half: usize,
    pub length: f64,
    pub epsilon: f64,
    pub trials: usize,
}

impl Default for OperatorsConfig {
    fn default() -> Self {
        Self {
            nx: 60,
            n_half: 6,
            length: 3.0,
            epsilon: 0.1,
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    pub variant: String,
    /// Box cells (even) for the weak-bias and two-velocity solvers.
    pub nx: usize,
    /// Half-width; `None` picks `4` (weak-bias, rescaled) or `2.5/χ` (two-velocity).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    pub cfl: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            variant: "weak-bias".into(),
            nx: 160,
            length: None,
            cfl: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: String,
    pub model: ModelConfig,
    pub tolerances: TolConfig,
    pub stationary: StationaryConfig,
    pub evolve: EvolveConfig,
    pub operators: OperatorsConfig,
    #[serde(rename = "macro")]
    pub macroscopic: MacroConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            output: "out".into(),
            model: ModelConfig::default(),
            tolerances: TolConfig::default(),
            stationary: StationaryConfig::default(),
            evolve: EvolveConfig::default(),
            operators: OperatorsConfig::default(),
            macroscopic: MacroConfig::default(),
        }
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {x}")))
    }
}

fn even_cells(name: &'static str, n: usize) -> Result<()> {
    if n >= 2 && n.is_multiple_of(2) {
        Ok(())
    } else {
        Err(invalid(name, format!("needs an even cell count ≥ 2, got {n}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn scheme(&self) -> Result<Scheme> {
        self.evolve.scheme.parse()
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        self.evolve.ic.parse()
    }

    pub fn variant(&self) -> Result<Variant> {
        self.macroscopic.variant.parse()
    }

    /// Checks every field against the preconditions of the solvers it feeds.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.chi > 0.0 && m.chi < 1.0) {
            return Err(invalid("model.chi", format!("must lie in (0, 1), got {}", m.chi)));
        }
        if m.n_half == 0 {
            return Err(invalid("model.n_half", "must be at least 1"));
        }
        let t = &self.tolerances;
        positive("tolerances.root", t.root)?;
        positive("tolerances.fixed_point", t.fixed_point)?;
        positive("tolerances.eigen", t.eigen)?;
        if t.max_iter == 0 {
            return Err(invalid("tolerances.max_iter", "must be at least 1"));
        }
        let s = &self.stationary;
        if s.nx < 4 {
            return Err(invalid("stationary.nx", "needs at least 4 cells"));
        }
        if let Some(l) = s.length {
            positive("stationary.length", l)?;
        }
        if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
            return Err(invalid("stationary.epsilon", "must be nonnegative"));
        }
        let e = &self.evolve;
        even_cells("evolve.nx", e.nx)?;
        positive("evolve.length", e.length)?;
        positive("evolve.t_end", e.t_end)?;
        if !(e.cfl > 0.0 && e.cfl <= 1.0) {
            return Err(invalid("evolve.cfl", "must lie in (0, 1]"));
        }
        if e.record_every == 0 {
            return Err(invalid("evolve.record_every", "must be at least 1"));
        }
        self.scheme()?;
        self.initial_condition()?;
        let o = &self.operators;
        even_cells("operators.nx", o.nx)?;
        if o.n_half == 0 {
            return Err(invalid("operators.n_half", "must be at least 1"));
        }
        positive("operators.length", o.length)?;
        if !(o.epsilon > 0.0 && o.epsilon < 1.0) {
            return Err(invalid("operators.epsilon", "must lie in (0, 1)"));
        }
        let mc = &self.macroscopic;
        self.variant()?;
        even_cells("macro.nx", mc.nx)?;
        if let Some(l) = mc.length {
            positive("macro.length", l)?;
        }
        if !(mc.cfl > 0.0 && mc.cfl <= 1.0) {
            return Err(invalid("macro.cfl", "must lie in (0, 1]"));
        }
        if self.output.is_empty() {
            return Err(invalid("output", "must name a directory"));
        }
        Ok(())
    }
}
