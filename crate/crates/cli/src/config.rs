//! Experiment configuration (TOML).

use std::sync::Arc;

use reduite::envelope::{Fvp, ReduiteOptions};
use reduite::geometry::{Domain, Grid, GridField, Point};
use reduite::kernels::OperatorSpec;
use reduite::measures::MeasureData;
use reduite::reconstruct::{Cutoff, NonlocalOptions};
use reduite::solve::{normalized_weight, SolveMethod};
use reduite::stochastic::{Start, StoppingFamily};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    /// Subcommand the config was written for, e.g. "tail" or "mc classd".
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub measure: Option<MeasureData>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub reduite: ReduiteOptions,
    /// Points where grid solutions are compared with closed forms.
    #[serde(default)]
    pub probes: Vec<Point>,
    #[serde(default)]
    pub fvp: Option<FvpConfig>,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub expect: Option<Expect>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub h: Option<f64>,
    /// Refinement study: one run per spacing, coarse to fine.
    #[serde(default)]
    pub hs: Option<Vec<f64>>,
    #[serde(default)]
    pub method: SolveMethod,
    #[serde(default)]
    pub max_nodes: Option<usize>,
}

/// ρ: a probability density on the domain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    #[default]
    Uniform,
    /// Proportional to exp(-|x - center|² / (2 width²)).
    Gaussian { center: Point, width: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FvpConfig {
    pub phi: Fvp,
    pub caps: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default = "default_cutoff")]
    pub eta: Cutoff,
    #[serde(default)]
    pub nonlocal: NonlocalOptions,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            eta: Cutoff::One,
            nonlocal: NonlocalOptions::default(),
        }
    }
}

fn default_cutoff() -> Cutoff {
    Cutoff::One
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    #[serde(default)]
    pub family: Option<StoppingFamily>,
    /// Fixed start point; otherwise starts are drawn from the weight.
    #[serde(default)]
    pub start: Option<Point>,
    /// Reducing levels k for `mc reducing`.
    #[serde(default)]
    pub k: Vec<f64>,
    /// Tail level n for `mc reducing`.
    #[serde(default)]
    pub n: f64,
    /// Time step for path discretizations.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Known limit ∫ R^D ρ d|μ_c|, reported alongside the estimates.
    #[serde(default)]
    pub target: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "all_criteria")]
    pub criteria: Vec<u32>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            criteria: all_criteria(),
        }
    }
}

fn all_criteria() -> Vec<u32> {
    (1..=14).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default = "default_alphas")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            alpha: default_alphas(),
            dims: default_dims(),
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 1.0, 1.5]
}

fn default_dims() -> Vec<usize> {
    vec![1, 2, 3]
}

/// Acceptance checks evaluated after a run; a failed check gives exit code 2.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Expected verdict string ("concentrated-like", "class-d", "pass", ...).
    #[serde(default)]
    pub verdict: Option<String>,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    /// Every reported value must be exactly zero.
    #[serde(default)]
    pub exact_zero: bool,
    /// Errors against the target must not grow under refinement.
    #[serde(default)]
    pub monotone_refinement: bool,
    /// Values must be nonincreasing in the level.
    #[serde(default)]
    pub nonincreasing: bool,
    /// Minimum relative shrinkage of |value - target| from the first to the last level.
    #[serde(default)]
    pub gap_shrink: Option<f64>,
    #[serde(default)]
    pub max_error: Option<f64>,
    #[serde(default)]
    pub min_order: Option<f64>,
    #[serde(default)]
    pub max_stderr: Option<f64>,
    /// |estimate - reference| ≤ within_stderr · stderr.
    #[serde(default)]
    pub within_stderr: Option<f64>,
    #[serde(default)]
    pub max_residual: Option<f64>,
    /// Largest successive relative change allowed in a refinement trace.
    #[serde(default)]
    pub max_trace_change: Option<f64>,
    /// Estimates at levels at or above sup |u| must be exactly zero.
    #[serde(default)]
    pub exact_zero_above_sup: bool,
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl Expect {
    /// Names of the fields that are set.
    pub fn set_fields(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut add = |on: bool, name: &'static str| {
            if on {
                v.push(name);
            }
        };
        add(self.verdict.is_some(), "verdict");
        add(self.target.is_some(), "target");
        add(self.rel_tol.is_some(), "rel_tol");
        add(self.abs_tol.is_some(), "abs_tol");
        add(self.exact_zero, "exact_zero");
        add(self.monotone_refinement, "monotone_refinement");
        add(self.nonincreasing, "nonincreasing");
        add(self.gap_shrink.is_some(), "gap_shrink");
        add(self.max_error.is_some(), "max_error");
        add(self.min_order.is_some(), "min_order");
        add(self.max_stderr.is_some(), "max_stderr");
        add(self.within_stderr.is_some(), "within_stderr");
        add(self.max_residual.is_some(), "max_residual");
        add(self.max_trace_change.is_some(), "max_trace_change");
        add(self.exact_zero_above_sup, "exact_zero_above_sup");
        add(self.max_seconds.is_some(), "max_seconds");
        v
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// File stem for the CSV and JSON outputs (default: config name or command).
    #[serde(default)]
    pub stem: Option<String>,
    /// Also write nodal fields (solution, envelope).
    #[serde(default)]
    pub fields: bool,
}

/// Parse a TOML document; errors name the offending field path.
pub fn parse(text: &str) -> CliResult<ExperimentConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| CliError::Config {
        path: String::new(),
        message: e.to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            path: if path == "." { String::new() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

fn field<T>(v: Option<T>, path: &str, command: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Config {
        path: path.into(),
        message: format!("required by `{command}`"),
    })
}

fn bad(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn domain(&self, command: &str) -> CliResult<Domain> {
        let d = field(self.domain.clone(), "domain", command)?;
        d.validate().map_err(|e| bad("domain", e.to_string()))?;
        Ok(d)
    }

    pub fn operator(&self, command: &str) -> CliResult<OperatorSpec> {
        let op = field(self.operator.clone(), "operator", command)?;
        op.validate().map_err(|e| bad("operator", e.to_string()))?;
        Ok(op)
    }

    pub fn measure(&self, command: &str) -> CliResult<MeasureData> {
        let mu = field(self.measure.clone(), "measure", command)?;
        if let Some(dom) = &self.domain {
            mu.validate(dom)
                .map_err(|e| bad("measure", e.to_string()))?;
        }
        Ok(mu)
    }

    /// Grid spacings, coarse to fine.
    pub fn spacings(&self, command: &str) -> CliResult<Vec<f64>> {
        let g = field(self.grid.as_ref(), "grid", command)?;
        let hs = match (g.h, &g.hs) {
            (Some(h), None) => vec![h],
            (None, Some(hs)) if !hs.is_empty() => hs.clone(),
            (Some(_), Some(_)) => return Err(bad("grid", "set either `h` or `hs`, not both")),
            _ => return Err(bad("grid.h", "missing grid spacing")),
        };
        for (i, h) in hs.iter().enumerate() {
            if !(*h > 0.0) {
                let p = if g.h.is_some() {
                    "grid.h".to_string()
                } else {
                    format!("grid.hs[{i}]")
                };
                return Err(bad(&p, "grid spacing must be positive"));
            }
        }
        if hs.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(bad("grid.hs", "spacings must be strictly decreasing"));
        }
        Ok(hs)
    }

    pub fn single_spacing(&self, command: &str) -> CliResult<f64> {
        let hs = self.spacings(command)?;
        if hs.len() != 1 {
            return Err(bad(
                "grid.hs",
                format!("`{command}` runs on a single grid; use `grid.h`"),
            ));
        }
        Ok(hs[0])
    }

    pub fn build_grid(&self, dom: &Domain, h: f64) -> CliResult<Arc<Grid>> {
        let grid = match self.grid.as_ref().and_then(|g| g.max_nodes) {
            Some(cap) => Grid::build_with_cap(dom, h, cap),
            None => Grid::build(dom, h),
        };
        grid.map_err(|e| bad("grid", e.to_string()))
    }

    pub fn method(&self) -> SolveMethod {
        self.grid.as_ref().map(|g| g.method).unwrap_or_default()
    }

    /// Positive, strictly increasing levels.
    pub fn levels(&self, command: &str) -> CliResult<Vec<f64>> {
        if self.levels.is_empty() {
            return Err(bad("levels", format!("required by `{command}`")));
        }
        for (i, n) in self.levels.iter().enumerate() {
            if !(*n > 0.0) {
                return Err(bad(&format!("levels[{i}]"), "levels must be positive"));
            }
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(bad("levels", "levels must be strictly increasing"));
        }
        Ok(self.levels.clone())
    }

    pub fn seed(&self, command: &str) -> CliResult<u64> {
        field(self.seed, "seed", command)
    }

    pub fn mc(&self, command: &str) -> CliResult<&McConfig> {
        let mc = field(self.mc.as_ref(), "mc", command)?;
        if mc.samples < 2 {
            return Err(bad("mc.samples", "need at least two samples"));
        }
        if !(mc.dt > 0.0) {
            return Err(bad("mc.dt", "time step must be positive"));
        }
        Ok(mc)
    }

    /// Output file stem.
    pub fn stem(&self, command: &str) -> String {
        self.output
            .stem
            .clone()
            .or_else(|| self.name.clone())
            .unwrap_or_else(|| command.replace(' ', "-"))
    }
}

impl WeightSpec {
    pub fn field(&self, grid: &Arc<Grid>) -> CliResult<GridField> {
        let r = match self {
            WeightSpec::Uniform => normalized_weight(grid, |_| 1.0),
            WeightSpec::Gaussian { center, width } => {
                if !(*width > 0.0) {
                    return Err(bad("weight.width", "width must be positive"));
                }
                let (c, w) = (*center, *width);
                normalized_weight(grid, move |x| (-x.sub(&c).norm_sq() / (2.0 * w * w)).exp())
            }
        };
        r.map_err(|e| bad("weight", e.to_string()))
    }

    /// Start distribution for Monte Carlo runs matching this weight.
    pub fn start(&self, dom: &Domain) -> Start {
        match self {
            WeightSpec::Uniform => Start::uniform(dom),
            WeightSpec::Gaussian { center, width } => {
                let (c, w) = (*center, *width);
                Start::Density {
                    rho: Arc::new(move |x: &Point| (-x.sub(&c).norm_sq() / (2.0 * w * w)).exp()),
                    max: 1.0,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_nested_field_is_reported_with_its_path() {
        let text = "[grid]\nh = 0.1\nspacing = 2\n";
        match parse(text) {
            Err(CliError::Config { path, message }) => {
                assert_eq!(path, "grid.spacing");
                assert!(message.contains("spacing"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_deep_in_measure() {
        let text = "[measure]\natoms = [{ point = [0.0, 0.0], weight = \"heavy\" }]\n";
        match parse(text) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "measure.atoms[0].weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tagged_domain_and_operator() {
        let text = r#"
            [domain]
            kind = "ball"
            center = [0.0, 0.0]
            radius = 1.0
            [operator]
            kind = "fractional"
            alpha = 0.5
        "#;
        let c = parse(text).unwrap();
        assert_eq!(c.domain.unwrap(), Domain::unit_ball(2));
        assert_eq!(c.operator.unwrap().alpha(), Some(0.5));
    }

    #[test]
    fn grid_spacings_validated() {
        let c = parse("[grid]\nhs = [0.1, 0.2]\n").unwrap();
        assert!(
            matches!(c.spacings("tail"), Err(CliError::Config { path, .. }) if path == "grid.hs")
        );
        let c = parse("[grid]\nh = -1.0\n").unwrap();
        assert!(
            matches!(c.spacings("tail"), Err(CliError::Config { path, .. }) if path == "grid.h")
        );
    }
}
