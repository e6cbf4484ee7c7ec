//! Conic standard form and the solver backend interface.
//!
//! A program is `min c'x  s.t.  A x + s = b,  s ∈ K` where `K` is a product
//! of zero, nonnegative and second-order cones laid out in row order. Duals
//! follow the Lagrangian `c'x + z'(A x − b)` with `z ∈ K*`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonneg(d) | Cone::Soc(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub n_vars: usize,
    pub c: Vec<f64>,
    /// `A` as `(row, col, value)` triplets.
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn check(&self) -> Result<()> {
        let rows: usize = self.cones.iter().map(Cone::dim).sum();
        if rows != self.b.len() || self.c.len() != self.n_vars {
            return Err(Error::ShapeMismatch(format!(
                "cone program: cones cover {rows} rows, b has {}, c has {} of {} vars",
                self.b.len(),
                self.c.len(),
                self.n_vars
            )));
        }
        if let Some(&(r, c, _)) = self
            .a
            .iter()
            .find(|(r, c, _)| *r >= rows || *c >= self.n_vars)
        {
            return Err(Error::ShapeMismatch(format!(
                "cone program: entry ({r}, {c}) outside {rows} × {}",
                self.n_vars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub backend: String,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            backend: "clarabel".into(),
            tol_gap_abs: 1e-10,
            tol_gap_rel: 1e-10,
            tol_feas: 1e-10,
            max_iter: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConicStatus {
    Optimal,
    /// Solved to the backend's reduced accuracy.
    NearOptimal,
    Infeasible,
    NumericalFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
    pub solve_time_s: f64,
}

pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConeProgram, options: &SolverOptions) -> Result<ConicSolution>;
}

/// Embedded interior-point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, program: &ConeProgram, options: &SolverOptions) -> Result<ConicSolution> {
        program.check()?;
        let m = program.n_rows();
        let n = program.n_vars;
        let (mut ri, mut ci, mut vi) = (Vec::new(), Vec::new(), Vec::new());
        for &(r, c, v) in &program.a {
            ri.push(r);
            ci.push(c);
            vi.push(v);
        }
        let a = CscMatrix::new_from_triplets(m, n, ri, ci, vi);
        let p = CscMatrix::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = program
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
                Cone::Nonneg(d) => SupportedConeT::NonnegativeConeT(d),
                Cone::Soc(d) => SupportedConeT::SecondOrderConeT(d),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(options.verbose)
            .tol_gap_abs(options.tol_gap_abs)
            .tol_gap_rel(options.tol_gap_rel)
            .tol_feas(options.tol_feas)
            .max_iter(options.max_iter)
            .presolve_enable(false)
            .build()
            .map_err(|e| Error::Numerical(format!("invalid solver settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &program.c, &a, &program.b, &cones, settings)
            .map_err(|e| Error::Numerical(format!("solver setup failed: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => ConicStatus::Optimal,
            SolverStatus::AlmostSolved => ConicStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            other => ConicStatus::NumericalFailure(format!("{other:?}")),
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            s: sol.s.clone(),
            z: sol.z.clone(),
            primal_objective: sol.obj_val,
            dual_objective: sol.obj_val_dual,
            iterations: sol.iterations,
            solve_time_s: sol.solve_time,
        })
    }
}

/// Resolves a backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend>> {
    match name {
        "clarabel" => Ok(Box::new(ClarabelBackend)),
        other => Err(Error::Validation(format!(
            "unknown solver backend `{other}` (available: clarabel)"
        ))),
    }
}
