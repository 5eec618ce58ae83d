//! Sparse convex program in maximization form.
//!
//! Variables carry optional box bounds, constraints are named linear rows or
//! two-dimensional second-order cones, and the objective is a linear part plus
//! concave nonlinear terms. Every nonlinear term is stored as the negative of
//! a convex function, so maximizing the sum is a convex problem.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl LinearRow {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let d = self.activity(x) - self.rhs;
        match self.sense {
            Sense::Eq => d.abs(),
            Sense::Le => d.max(0.0),
            Sense::Ge => (-d).max(0.0),
        }
    }
}

/// `sqrt(a² + b²) ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskCone {
    pub name: String,
    pub a: VarId,
    pub b: VarId,
    pub radius: f64,
}

/// Concave objective terms. Each contributes `-weight * f(x)` to the
/// maximized objective with `f` convex.
#[derive(Debug, Clone, PartialEq)]
pub enum ConcaveTerm {
    /// `f = (Σ aᵢxᵢ + c)²`.
    Square {
        weight: f64,
        terms: Vec<(VarId, f64)>,
        constant: f64,
    },
    /// `f = ∫₀ᵛ t0·(1 + α(u/cap)^β) du` (BPR link cost integral).
    BprIntegral {
        weight: f64,
        var: VarId,
        t0: f64,
        cap: f64,
        alpha: f64,
        beta: f64,
    },
    /// `f = q(ln q − 1 − shift)` with `0·ln 0 = 0`.
    Entropy { weight: f64, var: VarId, shift: f64 },
}

impl ConcaveTerm {
    pub fn weight(&self) -> f64 {
        match self {
            ConcaveTerm::Square { weight, .. }
            | ConcaveTerm::BprIntegral { weight, .. }
            | ConcaveTerm::Entropy { weight, .. } => *weight,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut t = self.clone();
        match &mut t {
            ConcaveTerm::Square { weight, .. }
            | ConcaveTerm::BprIntegral { weight, .. }
            | ConcaveTerm::Entropy { weight, .. } => *weight *= k,
        }
        t
    }

    /// The convex function value `weight * f(x)` (positive cost).
    pub fn cost(&self, x: &[f64]) -> f64 {
        match self {
            ConcaveTerm::Square {
                weight,
                terms,
                constant,
            } => {
                let s: f64 = terms.iter().map(|&(v, a)| a * x[v.0]).sum::<f64>() + constant;
                weight * s * s
            }
            ConcaveTerm::BprIntegral {
                weight,
                var,
                t0,
                cap,
                alpha,
                beta,
            } => {
                let v = x[var.0].max(0.0);
                weight * bpr_integral_raw(*t0, *cap, *alpha, *beta, v)
            }
            ConcaveTerm::Entropy { weight, var, shift } => {
                weight * entropy_raw(x[var.0], *shift)
            }
        }
    }
}

pub(crate) fn bpr_integral_raw(t0: f64, cap: f64, alpha: f64, beta: f64, v: f64) -> f64 {
    t0 * (v + alpha * cap / (beta + 1.0) * (v / cap).powf(beta + 1.0))
}

/// `q(ln q − 1 − shift)`; zero at `q = 0`.
pub(crate) fn entropy_raw(q: f64, shift: f64) -> f64 {
    if q <= 0.0 {
        0.0
    } else {
        q * (q.ln() - 1.0 - shift)
    }
}

/// A convex program to be maximized.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub vars: Vec<Variable>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<DiskCone>,
    /// Linear objective coefficients (maximize).
    pub linear: Vec<f64>,
    pub concave: Vec<ConcaveTerm>,
    pub constant: f64,
    var_names: HashMap<String, VarId>,
    row_names: HashMap<String, RowId>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> VarId {
        let name = name.into();
        let id = VarId(self.vars.len());
        let prev = self.var_names.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate variable name {name}");
        self.vars.push(Variable { name, lower, upper });
        self.linear.push(0.0);
        id
    }

    pub fn nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, Some(0.0), None)
    }

    pub fn free(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, None, None)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> RowId {
        let name = name.into();
        for (v, _) in &terms {
            assert!(v.0 < self.vars.len(), "row {name} references unknown variable");
        }
        let id = RowId(self.rows.len());
        let prev = self.row_names.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate row name {name}");
        self.rows.push(LinearRow {
            name,
            terms,
            sense,
            rhs,
        });
        id
    }

    pub fn add_disk(&mut self, name: impl Into<String>, a: VarId, b: VarId, radius: f64) -> ConeId {
        let id = ConeId(self.cones.len());
        self.cones.push(DiskCone {
            name: name.into(),
            a,
            b,
            radius,
        });
        id
    }

    pub fn add_linear(&mut self, v: VarId, coef: f64) {
        self.linear[v.0] += coef;
    }

    pub fn add_concave(&mut self, term: ConcaveTerm) {
        assert!(term.weight() >= 0.0, "concave term with negative weight");
        self.concave.push(term);
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.var_names.get(name).copied()
    }

    pub fn row(&self, name: &str) -> Option<RowId> {
        self.row_names.get(name).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let cost: f64 = self.concave.iter().map(|t| t.cost(x)).sum();
        self.constant + lin - cost
    }

    /// Largest violation of any row, bound or cone at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xv)| {
                let lo = v.lower.map_or(0.0, |l| (l - xv).max(0.0));
                let hi = v.upper.map_or(0.0, |u| (xv - u).max(0.0));
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        let cones = self
            .cones
            .iter()
            .map(|c| (x[c.a.0].hypot(x[c.b.0]) - c.radius).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds).max(cones)
    }
}

impl ConvexProgram {
    /// Largest violation with each row, bound and cone scaled by
    /// `1 + |rhs|`, so that rows with large right-hand sides are judged
    /// relative to their magnitude.
    pub fn max_scaled_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .rows
            .iter()
            .map(|r| r.violation(x) / (1.0 + r.rhs.abs()))
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xv)| {
                let lo = v.lower.map_or(0.0, |l| (l - xv).max(0.0) / (1.0 + l.abs()));
                let hi = v.upper.map_or(0.0, |u| (xv - u).max(0.0) / (1.0 + u.abs()));
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        let cones = self
            .cones
            .iter()
            .map(|c| (x[c.a.0].hypot(x[c.b.0]) - c.radius).max(0.0) / (1.0 + c.radius))
            .fold(0.0, f64::max);
        rows.max(bounds).max(cones)
    }
}
