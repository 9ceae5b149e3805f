//! Small dense two-phase simplex solver.
//!
//! Intended for the allocation problems in this crate: a few dozen variables
//! with box bounds and a handful of rows. Bland's rule is used for both the
//! entering and leaving variable, so the solver never cycles and the result
//! is a deterministic function of the input.

use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Relation {
    LessEq,
    GreaterEq,
    Equal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub constraints: Vec<Constraint>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("objective is unbounded")]
    Unbounded,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

impl LpProblem {
    /// Variables default to `0 <= x` with no upper bound.
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            sense,
            objective,
            lower: vec![0.0; n],
            upper: vec![None; n],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn bound(&mut self, var: usize, lower: f64, upper: Option<f64>) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Malformed(format!(
                    "row {i} has {} coefficients",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(LpError::Malformed(format!("row {i} is not finite")));
            }
        }
        if self.lower.iter().any(|v| !v.is_finite()) || self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite objective or lower bound".into()));
        }
        Ok(())
    }

    /// Largest violation of any bound or row at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - v);
            if let Some(u) = self.upper[i] {
                worst = worst.max(v - u);
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let gap = match c.relation {
                Relation::LessEq => lhs - c.rhs,
                Relation::GreaterEq => c.rhs - lhs,
                Relation::Equal => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }
}

/// Dense tableau: `rows` constraint rows plus the objective row at the end.
/// The last column holds the right-hand side.
struct Tableau {
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.a[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[row].clone();
        for (r, line) in self.a.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f.abs() > 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                line[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes the objective row over columns `allowed`. Returns false when
    /// unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let m = self.basis.len();
        loop {
            let obj = &self.a[m];
            let Some(enter) = (0..allowed).find(|&j| obj[j] < -EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let coef = self.a[r][enter];
                if coef > EPS {
                    let ratio = self.rhs(r) / coef;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS || (ratio <= lratio + EPS && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.num_vars();

    // Shift x = x' + lower so that every structural variable is >= 0, and
    // turn finite upper bounds into rows.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &problem.constraints {
        let shift: f64 = c.coeffs.iter().zip(&problem.lower).map(|(a, l)| a * l).sum();
        rows.push((c.coeffs.clone(), c.relation, c.rhs - shift));
    }
    for i in 0..n {
        if let Some(u) = problem.upper[i] {
            if !u.is_finite() {
                continue;
            }
            let mut coeffs = vec![0.0; n];
            coeffs[i] = 1.0;
            rows.push((coeffs, Relation::LessEq, u - problem.lower[i]));
        }
    }
    for (coeffs, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::LessEq => Relation::GreaterEq,
                Relation::GreaterEq => Relation::LessEq,
                Relation::Equal => Relation::Equal,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Relation::Equal).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::LessEq).count();
    let art_start = n + n_slack;
    let cols = art_start + n_art;

    let mut a = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut slack, mut art) = (n, art_start);
    for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        a[r][..n].copy_from_slice(coeffs);
        a[r][cols] = *rhs;
        match rel {
            Relation::LessEq => {
                a[r][slack] = 1.0;
                basis[r] = slack;
                slack += 1;
            }
            Relation::GreaterEq => {
                a[r][slack] = -1.0;
                slack += 1;
                a[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
            Relation::Equal => {
                a[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
    }
    let mut t = Tableau { a, basis, cols };

    // Phase one: minimize the sum of artificials.
    if n_art > 0 {
        for r in 0..m {
            if t.basis[r] >= art_start {
                for j in 0..=cols {
                    let v = t.a[r][j];
                    t.a[m][j] -= v;
                }
            }
        }
        for j in art_start..cols {
            t.a[m][j] = 0.0;
        }
        t.optimize(cols);
        let infeasibility = -t.a[m][cols];
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeasibility > EPS * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: vec![f64::NAN; n],
                objective: f64::NAN,
            });
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| t.a[r][j].abs() > EPS) {
                    t.pivot(r, j);
                }
            }
        }
    }

    // Phase two objective (always minimized internally).
    let sign = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let obj_row: Vec<f64> = (0..=cols)
        .map(|j| if j < n { sign * problem.objective[j] } else { 0.0 })
        .collect();
    t.a[m] = obj_row;
    for r in 0..m {
        let b = t.basis[r];
        let f = t.a[m][b];
        if f != 0.0 {
            for j in 0..=cols {
                let v = t.a[r][j];
                t.a[m][j] -= f * v;
            }
        }
    }
    // Artificial columns stay out of phase two; any that remain basic sit on
    // redundant rows at zero.
    if !t.optimize(art_start) {
        return Err(LpError::Unbounded);
    }

    let mut values = problem.lower.clone();
    for r in 0..m {
        let b = t.basis[r];
        if b < n {
            values[b] += t.rhs(r);
        }
    }
    let objective = values.iter().zip(&problem.objective).map(|(x, c)| x * c).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective,
    })
}
