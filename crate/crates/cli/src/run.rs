//! The four run modes and the files they write.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use contact_core::adaptive::{run, AdaptiveConfig, AdaptiveError, RunLog};
use contact_core::fem::FemError;
use contact_core::io::{diagnostics_csv, step_vtk};
use contact_core::mesh::MeshError;
use contact_core::verification::{
    contact_interval, convergence_rate, lift_residual, reference_solution, Reference, VerificationError,
};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Adaptive loop with the configured marking fraction.
    Adaptive,
    /// Every element refined at every step.
    UniformStudy,
    /// One mesh, regularization and Newton loops only.
    SingleSolve,
    /// Adaptive run against a reference solution, with the lifted residual norm at every step.
    Verify,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("thread pool: {0}")]
    Threads(String),
}

impl CliError {
    /// Short module tag for the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Mesh(_) => "mesh",
            CliError::Fem(_) => "femcore",
            CliError::Adaptive(_) => "adaptive_driver",
            CliError::Verification(_) => "verification",
            CliError::Threads(_) => "threads",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Threads(_) => 3,
            _ => 4,
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

/// What a mode reports on stdout, one `key = value` line each.
#[derive(Debug, Default)]
pub struct Summary {
    pub lines: Vec<(String, String)>,
}

impl Summary {
    fn push(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }
}

fn rates(log: &RunLog, summary: &mut Summary) {
    let dofs: Vec<usize> = log.steps.iter().map(|s| s.n_dofs).collect();
    let errs: Vec<_> = log.steps.iter().filter_map(|s| s.errors).collect();
    if errs.len() != dofs.len() {
        return;
    }
    let h1: Vec<f64> = errs.iter().map(|e| e.norms.h1).collect();
    let en: Vec<f64> = errs.iter().map(|e| e.norms.energy).collect();
    if let (Ok(a), Ok(b)) = (convergence_rate(&dofs, &h1), convergence_rate(&dofs, &en)) {
        summary.push("rate_h1", format!("{a:.16e}"));
        summary.push("rate_energy", format!("{b:.16e}"));
    }
}

pub fn execute(mode: Mode, cfg: &RunConfig) -> Result<Summary, CliError> {
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let data = cfg.problem_data()?;
    let mesh = cfg.benchmark.mesh()?;
    let adaptive = match mode {
        Mode::Adaptive | Mode::Verify => cfg.adaptive.clone(),
        Mode::UniformStudy => AdaptiveConfig {
            marking_fraction: 1.0,
            max_steps: cfg.uniform_steps,
            evenness_ratio: None,
            ..cfg.adaptive.clone()
        },
        Mode::SingleSolve => AdaptiveConfig { max_steps: 0, ..cfg.adaptive.clone() },
    };
    let mut summary = Summary::default();

    let want_reference = mode == Mode::Verify || (cfg.verify.errors && mode != Mode::SingleSolve);
    let reference = if want_reference {
        if cfg.tractions.top != [0.0; 2] || cfg.tractions.left != [0.0; 2] {
            return Err(ConfigError::Range {
                key: "load.traction_top".into(),
                reason: "reference solutions support only the right-edge traction".into(),
            }
            .into());
        }
        log::info!("computing reference solution at h = {}", cfg.verify.reference.h);
        let field = reference_solution(&cfg.benchmark, &cfg.verify.reference)?;
        if let Some((a, b)) = contact_interval(&field, &data, cfg.verify.reference.gamma0) {
            summary.push("contact_interval", format!("{a:.16e} {b:.16e}"));
        }
        summary.push("reference_elements", field.mesh().n_elements());
        Some(Reference::new(field))
    } else {
        None
    };

    let log = run(mesh, &data, &adaptive, reference.as_ref(), |_| {})?;

    let lifted: Vec<Option<f64>> = if mode == Mode::Verify {
        log.steps
            .iter()
            .map(|s| lift_residual(&s.solution, &data, adaptive.gamma0, cfg.verify.lifting).map(|l| Some(l.norm)))
            .collect::<Result<_, _>>()?
    } else {
        vec![None; log.steps.len()]
    };

    for s in &log.steps {
        let k = s.step;
        if cfg.output.estimators {
            write(dir, &format!("estimators_step_{k:02}.csv"), &s.report.to_csv(&s.mesh))?;
        }
        if cfg.output.vtk {
            write(dir, &format!("solution_step_{k:02}.vtk"), &step_vtk(s, &data.coeff))?;
        }
        if cfg.output.mesh {
            write(dir, &format!("mesh_step_{k:02}.txt"), &s.mesh.to_text())?;
        }
    }
    write(dir, "runlog.csv", &log.to_csv())?;
    write(dir, "diagnostics.csv", &diagnostics_csv(&log, &lifted))?;

    let last = log.steps.last().expect("a run visits at least one mesh");
    summary.push("steps", log.steps.len());
    summary.push("elements", last.n_elements);
    summary.push("eta_tot", format!("{:.16e}", last.report.global.tot));
    summary.push("flagged", log.steps.iter().any(|s| s.flagged));
    if mode == Mode::Verify {
        let holds = log.steps.iter().zip(&lifted).all(|(s, l)| l.is_some_and(|z| z <= s.bound));
        summary.push("bound_holds", holds);
    }
    rates(&log, &mut summary);
    Ok(summary)
}
