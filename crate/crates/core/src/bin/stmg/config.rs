use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use stmg_core::driver::{manufactured, shm_spec, Perturbation, ProblemSpec};
use stmg_core::krylov::GmresSettings;
use stmg_core::mesh::CoefficientField;
use stmg_core::st_operator::Equation;
use stmg_core::stmg::{Coarsening, MultigridSettings};
use stmg_core::time_basis::TimeScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Smooth manufactured solution on the unit cube.
    Manufactured,
    /// Layered-coefficient wave problem with a compact initial pulse.
    Shm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub equation: Equation,
    pub scheme: TimeScheme,
    pub k: usize,
    pub p: usize,
    pub dim: usize,
    /// Convergence runs visit every entry; single runs use the last one.
    pub refinements: Vec<usize>,
    pub frequency: f64,
    pub base_cells: Option<usize>,
    pub base_intervals: Option<usize>,
    pub t_final: Option<f64>,
    pub batch: usize,
    /// Constant coefficient replacing the problem default.
    pub coefficient: Option<f64>,
    /// Vertex shift as a fraction of the shortest adjacent edge; 0 keeps the grid Cartesian.
    pub perturbation: f64,
    pub pulse_width: f64,
    pub probes: Option<Vec<Vec<f64>>>,
    pub probe_samples: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Manufactured,
            equation: Equation::Heat,
            scheme: TimeScheme::DG,
            k: 1,
            p: 1,
            dim: 2,
            refinements: vec![2, 3, 4],
            frequency: 2.0,
            base_cells: None,
            base_intervals: None,
            t_final: None,
            batch: 2,
            coefficient: None,
            perturbation: 0.0,
            pulse_width: 0.3,
            probes: None,
            probe_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub n_smooth: usize,
    pub coarse_dense_limit: usize,
    pub relaxation_iters: usize,
    pub lambda_max_safety: f64,
    pub omega: Option<f64>,
    /// Full coarsening sequence from the finest level, e.g. `["h", "h", "p", "tau", "k"]`.
    pub strategy: Option<Vec<Coarsening>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let g = GmresSettings {
            max_iter: 500,
            ..GmresSettings::default()
        };
        let m = MultigridSettings::default();
        Self {
            abs_tol: g.abs_tol,
            rel_tol: g.rel_tol,
            max_iter: g.max_iter,
            restart: g.restart,
            n_smooth: m.n_smooth,
            coarse_dense_limit: m.coarse_dense_limit,
            relaxation_iters: m.relaxation_iters,
            lambda_max_safety: m.lambda_max_safety,
            omega: m.omega,
            strategy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write `trajectory.csv` with every temporal coefficient vector.
    pub trajectory: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "stmg-out".into(),
            trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub seed: u64,
    /// Worker threads; 0 lets the thread pool decide.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
            seed: 1,
            threads: 0,
        }
    }
}

/// Parse a `--set` value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let mut table = root;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Read the optional file, apply `key=value` overrides and validate.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => {
                // typed parse first so that errors point at a line of the file
                toml::from_str::<Config>(t).context("invalid config file")?;
                toml::from_str(t).context("malformed config")?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .context("invalid config after overrides")?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let p = &self.problem;
        if p.refinements.is_empty() {
            bail!("problem.refinements must not be empty");
        }
        if p.kind == ProblemKind::Shm && (p.equation != Equation::Wave || p.dim != 3) {
            bail!("the shm problem is a 3D wave problem; set problem.equation = \"wave\" and problem.dim = 3");
        }
        if !(0.0..0.5).contains(&p.perturbation) {
            bail!("problem.perturbation must lie in [0, 0.5)");
        }
        for r in &p.refinements {
            let spec = self.spec(*r)?;
            spec.validate()?;
            spec.plan()?;
        }
        Ok(())
    }

    pub fn finest_refinement(&self) -> usize {
        *self.problem.refinements.last().expect("checked non-empty")
    }

    pub fn spec(&self, refinements: usize) -> Result<ProblemSpec> {
        let p = &self.problem;
        let s = &self.solver;
        let mut spec = match p.kind {
            ProblemKind::Manufactured => manufactured(p.equation, p.scheme, p.k, p.p, p.dim, refinements, p.frequency),
            ProblemKind::Shm => shm_spec(p.scheme, p.k, p.p, refinements, p.pulse_width),
        };
        if let Some(b) = p.base_cells {
            spec.base_cells = b;
        }
        if let Some(b) = p.base_intervals {
            spec.base_intervals = b;
        }
        if let Some(t) = p.t_final {
            spec.t_final = t;
        }
        if let Some(c) = p.coefficient {
            spec.coefficient = CoefficientField::Constant(c);
        }
        if let Some(pr) = &p.probes {
            spec.probes = pr.clone();
        }
        spec.batch = p.batch;
        spec.probe_samples = p.probe_samples;
        if p.perturbation > 0.0 {
            spec.perturbation = Some(Perturbation {
                magnitude: p.perturbation,
                seed: self.seed,
            });
        }
        spec.gmres = GmresSettings {
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            max_iter: s.max_iter,
            restart: s.restart,
        };
        spec.multigrid = MultigridSettings {
            n_smooth: s.n_smooth,
            coarse_dense_limit: s.coarse_dense_limit,
            relaxation_iters: s.relaxation_iters,
            lambda_max_safety: s.lambda_max_safety,
            seed: self.seed,
            omega: s.omega,
        };
        spec.strategy = s.strategy.clone();
        spec.keep_trajectory = self.output.trajectory;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = Config::default();
        cfg.problem.probes = Some(vec![vec![0.25, 0.5]]);
        cfg.solver.strategy = Some(vec![Coarsening::H, Coarsening::Tau]);
        cfg.solver.omega = Some(0.7);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(Config::load(Some(&text), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = Config::load(
            Some("[problem]\nk = 2\n"),
            &["problem.scheme=cgp".into(), "solver.n_smooth=2".into(), "problem.refinements=[1,2]".into()],
        )
        .unwrap();
        assert_eq!(cfg.problem.k, 2);
        assert_eq!(cfg.problem.scheme, TimeScheme::CGP);
        assert_eq!(cfg.solver.n_smooth, 2);
        assert_eq!(cfg.problem.refinements, vec![1, 2]);

        let err = Config::load(Some("[problem]\nkk = 2\n"), &[]).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("kk") && msg.contains("line 2"), "{msg}");
        assert!(Config::load(None, &["solver.bogus=1".into()]).is_err());
        assert!(Config::load(None, &["problem.k".into()]).is_err());
        assert!(Config::load(None, &["problem.scheme=cgp".into(), "problem.k=0".into()]).is_err());
    }
}
