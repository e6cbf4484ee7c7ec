//! Additive decomposition of nodal marginal costs.
//!
//! For a withdrawal at node `j'` in period `t'`:
//!
//! ```text
//! λ = c + c^P Σ r ∂l + c^Q Σ x ∂l + Σ (μ̄ − μ̲) ∂v + Σ ν ∂l + Σ_y π_y ∂l_y
//! ```
//!
//! with `c = c^P` (or `c^Q`) and the transformer coefficient
//!
//! ```text
//! π_t' = ε (Σ_{t ≥ t'} δ^{t − t'} α̃_t + δ^{T − t'} ρ) + η α̃_t',   α̃_t = Σ_κ ξ_{t,κ} a_κ.
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{CostInputs, FeederTopology};
use crate::opf::DualSolution;
use crate::sensitivity::{Kind, SensitivityTensor};
use crate::thermal::LinearizedCoeffs;

/// Relative tolerance for matching decomposed totals to balance duals.
pub const RECONCILE_TOL: f64 = 1e-4;

/// `α̃_t` for one transformer from its aging-row duals `[t − 1][κ]`.
pub fn alpha_tilde(xi: &[Vec<f64>], slopes: &[f64]) -> Vec<f64> {
    xi.iter()
        .map(|row| row.iter().zip(slopes).map(|(x, a)| x * a).sum())
        .collect()
}

/// π at period `t'` (1-based) from `α̃` over the modeled horizon.
pub fn pi_from_alpha(coeffs: &LinearizedCoeffs, alpha: &[f64], rho: f64, t_prime: usize) -> f64 {
    let t_end = alpha.len();
    let mut acc = 0.0;
    let mut w = 1.0;
    for a in &alpha[t_prime - 1..] {
        acc += w * a;
        w *= coeffs.delta;
    }
    let tail = coeffs.delta.powi((t_end - t_prime) as i32) * rho;
    coeffs.epsilon * (acc + tail) + coeffs.eta * alpha[t_prime - 1]
}

/// π of transformer `y` (child node) in period `t'`.
pub fn transformer_pi(
    coeffs: &LinearizedCoeffs,
    duals: &DualSolution,
    slopes: &[f64],
    y: usize,
    t_prime: usize,
) -> Result<f64> {
    let k = duals
        .transformers
        .iter()
        .position(|&t| t == y)
        .ok_or_else(|| {
            Error::MissingDual(format!("no aging duals for transformer at node #{y}"))
        })?;
    let xi = &duals.xi[k];
    if t_prime == 0 || t_prime > xi.len() {
        return Err(Error::MissingDual(format!(
            "no aging duals for period {t_prime}"
        )));
    }
    if xi.iter().any(|r| r.len() != slopes.len()) {
        return Err(Error::MissingDual(
            "aging duals do not match the segment count".into(),
        ));
    }
    let rho = duals.rho.get(k).copied().flatten().unwrap_or(0.0);
    Ok(pi_from_alpha(
        coeffs,
        &alpha_tilde(xi, slopes),
        rho,
        t_prime,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiCoefficients {
    pub transformers: Vec<usize>,
    /// `[transformer][t − 1]` over the modeled horizon.
    pub pi: Vec<Vec<f64>>,
    pub alpha_tilde: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub coeffs: Vec<LinearizedCoeffs>,
}

impl PiCoefficients {
    pub fn compute(
        coeffs: &[LinearizedCoeffs],
        duals: &DualSolution,
        slopes: &[f64],
    ) -> Result<Self> {
        if coeffs.len() != duals.transformers.len() {
            return Err(Error::MissingDual(format!(
                "{} transformers but duals for {}",
                coeffs.len(),
                duals.transformers.len()
            )));
        }
        let mut pi = Vec::new();
        let mut alpha = Vec::new();
        let mut rho = Vec::new();
        for (k, &y) in duals.transformers.iter().enumerate() {
            let periods = duals.xi[k].len();
            pi.push(
                (1..=periods)
                    .map(|t| transformer_pi(&coeffs[k], duals, slopes, y, t))
                    .collect::<Result<Vec<_>>>()?,
            );
            alpha.push(alpha_tilde(&duals.xi[k], slopes));
            rho.push(duals.rho[k].unwrap_or(0.0));
        }
        Ok(Self {
            transformers: duals.transformers.clone(),
            pi,
            alpha_tilde: alpha,
            rho,
            coeffs: coeffs.to_vec(),
        })
    }

    pub fn get(&self, y: usize, t: usize) -> Option<f64> {
        let k = self.transformers.iter().position(|&x| x == y)?;
        self.pi[k].get(t.checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlmcRow {
    pub node: usize,
    pub period: usize,
    pub kind: Kind,
    pub substation: f64,
    pub real_loss: f64,
    pub reactive_loss: f64,
    pub voltage: f64,
    pub ampacity: f64,
    pub transformer: f64,
    pub total: f64,
    /// Balance dual from the solve.
    pub solver_dual: f64,
}

impl DlmcRow {
    pub fn components(&self) -> [f64; 6] {
        [
            self.substation,
            self.real_loss,
            self.reactive_loss,
            self.voltage,
            self.ampacity,
            self.transformer,
        ]
    }

    fn with_total(mut self) -> Self {
        self.total = self.components().iter().sum();
        self
    }
}

/// Decomposition at node `site`, period `t'` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn decompose(
    topology: &FeederTopology,
    tensor: &SensitivityTensor,
    duals: &DualSolution,
    costs: &CostInputs,
    pi: &PiCoefficients,
    site: usize,
    t_prime: usize,
    kind: Kind,
) -> Result<DlmcRow> {
    let k = t_prime
        .checked_sub(1)
        .filter(|&k| k < costs.energy.len() && k < duals.lambda_p.len())
        .ok_or_else(|| Error::MissingDual(format!("no duals for period {t_prime}")))?;
    let (cp, cq) = (costs.energy[k], costs.reactive[k]);
    let lambda = match kind {
        Kind::P => &duals.lambda_p,
        Kind::Q => &duals.lambda_q,
    };
    let solver_dual = *lambda[k]
        .get(site)
        .ok_or_else(|| Error::UnknownNode(format!("#{site}")))?;
    let substation = match kind {
        Kind::P => cp,
        Kind::Q => cq,
    };
    let mut row = DlmcRow {
        node: site,
        period: t_prime,
        kind,
        substation,
        real_loss: 0.0,
        reactive_loss: 0.0,
        voltage: 0.0,
        ampacity: 0.0,
        transformer: 0.0,
        total: 0.0,
        solver_dual,
    };
    if site == 0 {
        return Ok(row.with_total());
    }
    let s = tensor.get(site, t_prime, kind).ok_or_else(|| {
        Error::MissingDual(format!(
            "no sensitivities for node #{site}, period {t_prime}, kind {}",
            kind.as_str()
        ))
    })?;
    let (mut rl, mut xl, mut volt, mut amp) = (0.0, 0.0, 0.0, 0.0);
    for j in 1..topology.n_nodes() {
        let line = topology.line_into(j);
        rl += line.r * s.dl(j);
        xl += line.x * s.dl(j);
        volt += duals.mu(t_prime, j) * s.dv(j);
        amp += duals.nu[k][j] * s.dl(j);
    }
    row.real_loss = cp * rl;
    row.reactive_loss = cq * xl;
    row.voltage = volt;
    row.ampacity = amp;
    row.transformer = pi
        .transformers
        .iter()
        .map(|&y| pi.get(y, t_prime).map(|p| p * s.dl(y)))
        .sum::<Option<f64>>()
        .ok_or_else(|| {
            Error::MissingDual(format!("no transformer coefficient for period {t_prime}"))
        })?;
    Ok(row.with_total())
}

/// Every non-root node, every period in `1..=periods`, both kinds.
pub fn decompose_all(
    topology: &FeederTopology,
    tensor: &SensitivityTensor,
    duals: &DualSolution,
    costs: &CostInputs,
    pi: &PiCoefficients,
    periods: usize,
) -> Result<Vec<DlmcRow>> {
    let mut rows = Vec::with_capacity(2 * periods * topology.n_lines());
    for t in 1..=periods {
        for j in 1..topology.n_nodes() {
            for kind in Kind::BOTH {
                rows.push(decompose(topology, tensor, duals, costs, pi, j, t, kind)?);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconcileEntry {
    pub node: usize,
    pub period: usize,
    pub kind: Kind,
    pub total: f64,
    pub solver_dual: f64,
    pub gap: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconciliation {
    pub tolerance: f64,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub flagged: usize,
    pub entries: Vec<ReconcileEntry>,
}

/// Relative gap `|total − λ| / max(|λ|, |c^P_t|, |c^Q_t|)`.
pub fn relative_gap(total: f64, dual: f64, cp: f64, cq: f64) -> f64 {
    let scale = dual.abs().max(cp.abs()).max(cq.abs());
    if scale == 0.0 {
        (total - dual).abs()
    } else {
        (total - dual).abs() / scale
    }
}

pub fn reconcile(rows: &[DlmcRow], costs: &CostInputs, tolerance: f64) -> Reconciliation {
    let entries: Vec<ReconcileEntry> = rows
        .iter()
        .map(|r| {
            let k = r.period - 1;
            let gap = relative_gap(r.total, r.solver_dual, costs.energy[k], costs.reactive[k]);
            ReconcileEntry {
                node: r.node,
                period: r.period,
                kind: r.kind,
                total: r.total,
                solver_dual: r.solver_dual,
                gap,
                flagged: !(gap <= tolerance),
            }
        })
        .collect();
    let max_gap = entries.iter().map(|e| e.gap).fold(0.0, f64::max);
    let mean_gap = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.gap).sum::<f64>() / entries.len() as f64
    };
    Reconciliation {
        tolerance,
        max_gap,
        mean_gap,
        flagged: entries.iter().filter(|e| e.flagged).count(),
        entries,
    }
}
