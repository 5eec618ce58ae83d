//! Primal-dual solve of a [`ConvexProgram`] through the Clarabel conic
//! interior-point solver.
//!
//! Lowering:
//! - equality rows go to the zero cone, inequality rows and variable bounds
//!   to the nonnegative orthant;
//! - disk constraints become 3-dimensional second-order cones (a zero radius
//!   is emitted as two equalities, since that cone has no interior);
//! - `q(ln q − 1 − shift)` is epigraphed with `(−t, q, 1) ∈ K_exp`;
//! - the BPR integral uses `u ≥ (v/cap)^(β+1)` via `(u, 1, v/cap) ∈ K_pow(1/(β+1))`;
//! - squares go to the quadratic objective.
//!
//! Reported row duals are sensitivities of the optimal (maximized) objective
//! with respect to the row right-hand side: `dual = ∂V*/∂rhs`. With that
//! convention an equality `demand − supply = 0` has a dual equal to the price
//! of extra supply.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::program::{ConcaveTerm, ConvexProgram, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative and absolute duality-gap tolerance.
    pub gap_tol: f64,
    /// Primal/dual feasibility tolerance.
    pub feas_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            max_iter: 200,
        }
    }
}

impl SolveOptions {
    pub fn with_gap(gap_tol: f64) -> Self {
        SolveOptions {
            gap_tol,
            ..Self::default()
        }
    }
}

/// Primal and dual values of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionBundle {
    pub status: Status,
    /// One value per program variable.
    pub primal: Vec<f64>,
    /// One value per linear row, as `∂V*/∂rhs`.
    pub row_duals: Vec<f64>,
    /// Sensitivity of the objective to each disk radius.
    pub cone_duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative duality gap; present only for optimal bundles.
    pub gap: Option<f64>,
    pub iterations: u32,
    /// Wall time in seconds.
    pub solve_time: f64,
    /// Row names carrying the largest infeasibility-certificate weights.
    pub infeasibility_hint: Vec<String>,
}

/// Largest scaled row, bound or cone violation accepted for an optimal
/// bundle (see [`ConvexProgram::max_scaled_violation`]).
pub const PRIMAL_FEAS_TOL: f64 = 1e-8;

/// The solver is asked for a gap this much tighter than requested. Entropy
/// terms are nearly flat at the optimum, so primal accuracy on `q` goes
/// roughly as the square root of the gap.
const INNER_GAP_FACTOR: f64 = 1e-4;

/// `|primal − dual| / (1 + |primal|)`.
pub fn relative_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual).abs() / (1.0 + primal.abs())
}

/// Relative duality gap of an optimal bundle.
pub fn duality_gap(b: &SolutionBundle) -> Result<f64, ModelError> {
    if b.status != Status::Optimal {
        return Err(ModelError::NotOptimal(b.status));
    }
    Ok(relative_gap(b.primal_objective, b.dual_objective))
}

enum RowSlot {
    Row { index: usize },
    Bound,
    Disk,
}

struct Builder {
    // Triplets of A (rows × cols).
    ai: Vec<usize>,
    aj: Vec<usize>,
    av: Vec<f64>,
    b: Vec<f64>,
    slots: Vec<RowSlot>,
}

impl Builder {
    fn push_row(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64, slot: RowSlot) -> usize {
        let r = self.b.len();
        for (j, v) in terms {
            if v != 0.0 {
                self.ai.push(r);
                self.aj.push(j);
                self.av.push(v);
            }
        }
        self.b.push(rhs);
        self.slots.push(slot);
        r
    }
}

/// Solves `program` to primal-dual optimality.
pub fn solve_program(program: &ConvexProgram, opts: &SolveOptions) -> Result<SolutionBundle, ModelError> {
    let start = Instant::now();
    let n_prog = program.num_vars();
    if n_prog == 0 {
        return Ok(empty_solution(program, start));
    }

    // Epigraph columns for cone-represented terms.
    let mut n = n_prog;
    let mut epi = Vec::with_capacity(program.concave.len());
    for term in &program.concave {
        match term {
            ConcaveTerm::BprIntegral { alpha, .. } if *alpha > 0.0 => {
                epi.push(Some(n));
                n += 1;
            }
            ConcaveTerm::Entropy { .. } => {
                epi.push(Some(n));
                n += 1;
            }
            _ => epi.push(None),
        }
    }

    // Objective: minimize -(max objective).
    let mut q = vec![0.0; n];
    for (j, c) in program.linear.iter().enumerate() {
        q[j] = -c;
    }
    let mut pi = Vec::new();
    let mut pj = Vec::new();
    let mut pv = Vec::new();
    let mut min_constant = 0.0;
    for (term, col) in program.concave.iter().zip(&epi) {
        match term {
            ConcaveTerm::Square {
                weight,
                terms,
                constant,
            } => {
                for &(a, ca) in terms {
                    q[a.0] += 2.0 * weight * constant * ca;
                    for &(b, cb) in terms {
                        if a.0 <= b.0 {
                            pi.push(a.0);
                            pj.push(b.0);
                            pv.push(2.0 * weight * ca * cb);
                        }
                    }
                }
                min_constant += weight * constant * constant;
            }
            ConcaveTerm::BprIntegral {
                weight,
                var,
                t0,
                cap,
                alpha,
                beta,
            } => {
                q[var.0] += weight * t0;
                if let Some(u) = col {
                    q[*u] += weight * t0 * alpha * cap / (beta + 1.0);
                }
            }
            ConcaveTerm::Entropy { weight, var, shift } => {
                let t = col.expect("entropy epigraph column");
                q[t] += weight;
                q[var.0] -= weight * (1.0 + shift);
            }
        }
    }
    let p_mat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

    let mut bld = Builder {
        ai: Vec::new(),
        aj: Vec::new(),
        av: Vec::new(),
        b: Vec::new(),
        slots: Vec::new(),
    };
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row_pos = vec![0usize; program.rows.len()];
    let mut cone_pos: Vec<(usize, bool)> = vec![(0, false); program.cones.len()];

    // Zero cone: equality rows and degenerate disks.
    let zero_start = bld.b.len();
    for (k, row) in program.rows.iter().enumerate() {
        if row.sense == Sense::Eq {
            row_pos[k] = bld.push_row(
                row.terms.iter().map(|&(v, a)| (v.0, a)),
                row.rhs,
                RowSlot::Row { index: k },
            );
        }
    }
    for (k, c) in program.cones.iter().enumerate() {
        if c.radius <= 0.0 {
            let r = bld.push_row([(c.a.0, 1.0)], 0.0, RowSlot::Disk);
            bld.push_row([(c.b.0, 1.0)], 0.0, RowSlot::Disk);
            cone_pos[k] = (r, true);
        }
    }
    let n_zero = bld.b.len() - zero_start;
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }

    // Nonnegative orthant: inequalities then bounds.
    let nn_start = bld.b.len();
    for (k, row) in program.rows.iter().enumerate() {
        match row.sense {
            Sense::Le => {
                row_pos[k] = bld.push_row(
                    row.terms.iter().map(|&(v, a)| (v.0, a)),
                    row.rhs,
                    RowSlot::Row { index: k },
                );
            }
            Sense::Ge => {
                row_pos[k] = bld.push_row(
                    row.terms.iter().map(|&(v, a)| (v.0, -a)),
                    -row.rhs,
                    RowSlot::Row { index: k },
                );
            }
            Sense::Eq => {}
        }
    }
    for (j, v) in program.vars.iter().enumerate() {
        if let Some(lo) = v.lower {
            bld.push_row([(j, -1.0)], -lo, RowSlot::Bound);
        }
        if let Some(hi) = v.upper {
            bld.push_row([(j, 1.0)], hi, RowSlot::Bound);
        }
    }
    let n_nn = bld.b.len() - nn_start;
    if n_nn > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nn));
    }

    for (k, c) in program.cones.iter().enumerate() {
        if c.radius > 0.0 {
            let r = bld.push_row([], c.radius, RowSlot::Disk);
            bld.push_row([(c.a.0, -1.0)], 0.0, RowSlot::Disk);
            bld.push_row([(c.b.0, -1.0)], 0.0, RowSlot::Disk);
            cone_pos[k] = (r, false);
            cones.push(SupportedConeT::SecondOrderConeT(3));
        }
    }

    for (term, col) in program.concave.iter().zip(&epi) {
        if let ConcaveTerm::Entropy { var, .. } = term {
            let t = col.expect("entropy epigraph column");
            bld.push_row([(t, 1.0)], 0.0, RowSlot::Bound);
            bld.push_row([(var.0, -1.0)], 0.0, RowSlot::Bound);
            bld.push_row([], 1.0, RowSlot::Bound);
            cones.push(SupportedConeT::ExponentialConeT());
        }
    }
    for (term, col) in program.concave.iter().zip(&epi) {
        if let (ConcaveTerm::BprIntegral { var, cap, beta, .. }, Some(u)) = (term, col) {
            bld.push_row([(*u, -1.0)], 0.0, RowSlot::Bound);
            bld.push_row([], 1.0, RowSlot::Bound);
            bld.push_row([(var.0, -1.0 / cap)], 0.0, RowSlot::Bound);
            cones.push(SupportedConeT::PowerConeT(1.0 / (beta + 1.0)));
        }
    }

    let m = bld.b.len();
    let a_mat = CscMatrix::new_from_triplets(m, n, bld.ai, bld.aj, bld.av);

    // Equilibration off first: on these programs Clarabel's ruiz scaling
    // occasionally stalls with a large gap. The scaled solve is the fallback.
    let attempt = |equilibrate: bool| {
        let settings = DefaultSettings {
            verbose: false,
            max_iter: opts.max_iter,
            tol_gap_abs: opts.gap_tol * INNER_GAP_FACTOR,
            tol_gap_rel: opts.gap_tol * INNER_GAP_FACTOR,
            tol_feas: opts.feas_tol,
            tol_ktratio: 1e-8,
            presolve_enable: false,
            equilibrate_enable: equilibrate,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &bld.b, &cones, settings)
            .map_err(|e| ModelError::Solver(format!("{e:?}")))?;
        solver.solve();
        let sol = solver.solution;
        let primal = sol.x[..n_prog].to_vec();
        let primal_objective = program.constant - (sol.obj_val + min_constant);
        let dual_objective = program.constant - (sol.obj_val_dual + min_constant);

        // A reduced-accuracy stop still counts when the certificate we report
        // (relative gap and row feasibility) meets the requested tolerances.
        let certified = || {
            relative_gap(primal_objective, dual_objective) <= opts.gap_tol
                && program.max_scaled_violation(&primal) <= PRIMAL_FEAS_TOL
        };
        let status = match sol.status {
            SolverStatus::Solved => Status::Optimal,
            SolverStatus::AlmostSolved
            | SolverStatus::MaxIterations
            | SolverStatus::MaxTime
            | SolverStatus::InsufficientProgress
                if certified() =>
            {
                Status::Optimal
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
            _ => Status::IterationLimit,
        };
        Ok::<_, ModelError>((status, sol, primal, primal_objective, dual_objective))
    };
    let mut result = attempt(false)?;
    if result.0 == Status::IterationLimit {
        let retry = attempt(true)?;
        if retry.0 != Status::IterationLimit {
            result = retry;
        }
    }
    let (status, sol, primal, primal_objective, dual_objective) = result;

    let row_duals: Vec<f64> = program
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let sign = if row.sense == Sense::Ge { -1.0 } else { 1.0 };
            sign * sol.z[row_pos[k]]
        })
        .collect();
    let cone_duals = cone_pos
        .iter()
        .map(|&(r, degenerate)| {
            if degenerate {
                sol.z[r].hypot(sol.z[r + 1])
            } else {
                sol.z[r]
            }
        })
        .collect();

    let infeasibility_hint = if status == Status::Infeasible {
        let mut weighted: Vec<(f64, String)> = bld
            .slots
            .iter()
            .enumerate()
            .filter_map(|(r, slot)| match slot {
                RowSlot::Row { index, .. } if sol.z[r].abs() > 1e-9 => {
                    Some((sol.z[r].abs(), program.rows[*index].name.clone()))
                }
                _ => None,
            })
            .collect();
        weighted.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        weighted.into_iter().take(5).map(|(_, name)| name).collect()
    } else {
        Vec::new()
    };

    let gap = (status == Status::Optimal).then(|| relative_gap(primal_objective, dual_objective));

    Ok(SolutionBundle {
        status,
        primal,
        row_duals,
        cone_duals,
        primal_objective,
        dual_objective,
        gap,
        iterations: sol.iterations,
        solve_time: start.elapsed().as_secs_f64(),
        infeasibility_hint,
    })
}

/// A program without variables: feasible iff every row holds at zero.
fn empty_solution(program: &ConvexProgram, start: Instant) -> SolutionBundle {
    let feasible = program.rows.iter().all(|r| r.violation(&[]) <= PRIMAL_FEAS_TOL)
        && program.cones.is_empty();
    let status = if feasible { Status::Optimal } else { Status::Infeasible };
    SolutionBundle {
        status,
        primal: Vec::new(),
        row_duals: vec![0.0; program.rows.len()],
        cone_duals: Vec::new(),
        primal_objective: program.constant,
        dual_objective: program.constant,
        gap: feasible.then_some(0.0),
        iterations: 0,
        solve_time: start.elapsed().as_secs_f64(),
        infeasibility_hint: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::ConvexProgram;

    #[test]
    fn empty_program_is_trivially_optimal() {
        let mut p = ConvexProgram::new();
        p.constant = 3.0;
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(b.status, Status::Optimal);
        assert_eq!(b.primal_objective, 3.0);
        p.add_row("bad", vec![], Sense::Ge, 1.0);
        assert_eq!(solve_program(&p, &SolveOptions::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn lp_duals_are_rhs_sensitivities() {
        // max 3x + 2y s.t. x + y <= 4, x <= 3, x,y >= 0 -> x=3,y=1, V=11.
        let mut p = ConvexProgram::new();
        let x = p.nonneg("x");
        let y = p.nonneg("y");
        p.add_linear(x, 3.0);
        p.add_linear(y, 2.0);
        p.add_row("cap", vec![(x, 1.0), (y, 1.0)], Sense::Le, 4.0);
        p.add_row("xmax", vec![(x, 1.0)], Sense::Le, 3.0);
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(b.status, Status::Optimal);
        assert!((b.primal_objective - 11.0).abs() < 1e-7);
        assert!((b.row_duals[0] - 2.0).abs() < 1e-6);
        assert!((b.row_duals[1] - 1.0).abs() < 1e-6);
        assert!(duality_gap(&b).unwrap() <= 1e-8);
    }

    #[test]
    fn ge_and_eq_duals() {
        // max -x - 2y s.t. x + y = 3, y >= 1 -> x=2,y=1, V=-4.
        let mut p = ConvexProgram::new();
        let x = p.nonneg("x");
        let y = p.nonneg("y");
        p.add_linear(x, -1.0);
        p.add_linear(y, -2.0);
        p.add_row("sum", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 3.0);
        p.add_row("ymin", vec![(y, 1.0)], Sense::Ge, 1.0);
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        assert!((b.primal_objective + 4.0).abs() < 1e-7);
        assert!((b.row_duals[0] + 1.0).abs() < 1e-6);
        assert!((b.row_duals[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_maximization_is_uniform() {
        // max -Σ q ln q + Σ q  s.t. Σ q = 1  -> q = 1/3 each.
        let mut p = ConvexProgram::new();
        let qs: Vec<_> = (0..3).map(|k| p.nonneg(format!("q{k}"))).collect();
        for &q in &qs {
            p.add_concave(ConcaveTerm::Entropy {
                weight: 1.0,
                var: q,
                shift: 0.0,
            });
        }
        p.add_row("sum", qs.iter().map(|&q| (q, 1.0)).collect(), Sense::Eq, 1.0);
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(b.status, Status::Optimal);
        // The objective is flat at the optimum: a 1e-8 gap pins q to ~1e-5.
        for &q in &qs {
            assert!((b.primal[q.0] - 1.0 / 3.0).abs() < 1e-5);
        }
        // V = ln 3 + 1 - 1... objective = -Σ q(ln q - 1) = ln 3 + 1.
        assert!((b.primal_objective - (3f64.ln() + 1.0)).abs() < 1e-7);
    }

    #[test]
    fn bpr_integral_epigraph_matches_closed_form() {
        // min ∫tt over a single link with fixed flow 40.
        let mut p = ConvexProgram::new();
        let v = p.nonneg("v");
        p.add_concave(ConcaveTerm::BprIntegral {
            weight: 1.0,
            var: v,
            t0: 1.0,
            cap: 20.0,
            alpha: 0.15,
            beta: 4.0,
        });
        p.add_row("fix", vec![(v, 1.0)], Sense::Eq, 40.0);
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        let expected = 40.0 + 0.15 * 20.0 / 5.0 * 2f64.powi(5);
        assert!((b.primal_objective + expected).abs() < 1e-6, "{}", b.primal_objective);
        // Marginal cost of flow equals the link time, 3.4 h.
        assert!((b.row_duals[0] + 3.4).abs() < 1e-4, "{}", b.row_duals[0]);
    }

    #[test]
    fn disk_and_degenerate_disk() {
        let mut p = ConvexProgram::new();
        let a = p.free("a");
        let b = p.free("b");
        let c = p.free("c");
        let d = p.free("d");
        p.add_linear(a, 3.0);
        p.add_linear(b, 4.0);
        p.add_linear(c, 1.0);
        p.add_disk("k", a, b, 2.0);
        p.add_disk("z", c, d, 0.0);
        let s = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.primal_objective - 10.0).abs() < 1e-7);
        assert!((s.cone_duals[0] - 5.0).abs() < 1e-6);
        assert!(s.primal[c.0].abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = ConvexProgram::new();
        let x = p.nonneg("pd");
        p.add_linear(x, 1.0);
        p.add_row("lo", vec![(x, 1.0)], Sense::Ge, 0.5);
        p.add_row("hi", vec![(x, 1.0)], Sense::Le, 0.2);
        let b = solve_program(&p, &SolveOptions::default()).unwrap();
        assert_eq!(b.status, Status::Infeasible);
        assert!(b.gap.is_none());
        assert!(duality_gap(&b).is_err());
        assert!(!b.infeasibility_hint.is_empty());
    }

    #[test]
    fn gap_arithmetic() {
        assert_eq!(relative_gap(10.0, 10.0), 0.0);
        assert!((relative_gap(10.0, 10.1) - 0.1 / 11.0).abs() < 1e-15);
    }
}
