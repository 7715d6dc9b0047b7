//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! Small problems only: the tableau is stored densely and every pivot touches
//! every nonzero row. Works over any [`Scalar`], so the same code is the exact
//! rational oracle and the float solver.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    NonNeg,
    Free,
}

#[derive(Clone, Debug)]
pub struct Constraint<S> {
    pub coeffs: Vec<S>,
    pub relation: Relation,
    pub rhs: S,
}

/// `maximize objective · x` subject to the constraints.
#[derive(Clone, Debug)]
pub struct LinearProgram<S> {
    pub objective: Vec<S>,
    pub vars: Vec<VarKind>,
    pub constraints: Vec<Constraint<S>>,
}

#[derive(Clone, Debug)]
pub struct LpSolution<S> {
    pub value: S,
    pub x: Vec<S>,
    /// One multiplier per constraint: `value = duals · rhs`, `objective_j <=
    /// duals · column_j` for nonnegative variables and equality for free ones.
    /// Signs: `>= 0` for `Le` rows, `<= 0` for `Ge` rows.
    pub duals: Vec<S>,
}

#[derive(Clone, Debug)]
pub enum LpOutcome<S> {
    Optimal(LpSolution<S>),
    Infeasible,
    Unbounded,
}

impl<S> LpOutcome<S> {
    pub fn optimal(self) -> Option<LpSolution<S>> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            objective: vec![S::zero(); num_vars],
            vars: vec![VarKind::NonNeg; num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add(&mut self, coeffs: Vec<S>, relation: Relation, rhs: S) {
        debug_assert_eq!(coeffs.len(), self.num_vars());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn solve(&self) -> LpOutcome<S> {
        Tableau::build(self).run(self)
    }
}

struct Tableau<S> {
    rows: Vec<Vec<S>>,
    rhs: Vec<S>,
    basis: Vec<usize>,
    /// Column of the identity entry of each row's initial basic variable.
    initial: Vec<usize>,
    flipped: Vec<bool>,
    num_struct: usize,
    first_artificial: usize,
    num_cols: usize,
    /// structural column -> (original var, sign)
    col_map: Vec<(usize, bool)>,
}

impl<S: Scalar> Tableau<S> {
    fn build(lp: &LinearProgram<S>) -> Self {
        let mut col_map = Vec::new();
        for (j, kind) in lp.vars.iter().enumerate() {
            col_map.push((j, true));
            if *kind == VarKind::Free {
                col_map.push((j, false));
            }
        }
        let num_struct = col_map.len();
        let m = lp.constraints.len();
        let num_slack = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();

        let mut rows = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut flipped = Vec::with_capacity(m);
        let mut slack_of_row = Vec::with_capacity(m);
        let mut next_slack = num_struct;
        for c in &lp.constraints {
            let flip = c.rhs < S::zero();
            let sign = |v: S| if flip { -v } else { v };
            let mut row = Vec::with_capacity(num_struct + num_slack);
            for &(j, pos) in &col_map {
                let v = c.coeffs[j].clone();
                row.push(sign(if pos { v } else { -v }));
            }
            row.resize(num_struct + num_slack, S::zero());
            let slack = match c.relation {
                Relation::Eq => None,
                Relation::Le => {
                    row[next_slack] = sign(S::one());
                    next_slack += 1;
                    Some(next_slack - 1)
                }
                Relation::Ge => {
                    row[next_slack] = sign(-S::one());
                    next_slack += 1;
                    Some(next_slack - 1)
                }
            };
            slack_of_row.push(slack);
            rhs.push(sign(c.rhs.clone()));
            flipped.push(flip);
            rows.push(row);
        }

        let first_artificial = num_struct + num_slack;
        let mut basis = vec![0; m];
        let mut initial = vec![0; m];
        let mut num_cols = first_artificial;
        for i in 0..m {
            match slack_of_row[i] {
                Some(s) if rows[i][s] == S::one() => {
                    basis[i] = s;
                    initial[i] = s;
                }
                _ => {
                    basis[i] = num_cols;
                    initial[i] = num_cols;
                    num_cols += 1;
                }
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.resize(num_cols, S::zero());
            if initial[i] >= first_artificial {
                row[initial[i]] = S::one();
            }
        }

        Tableau {
            rows,
            rhs,
            basis,
            initial,
            flipped,
            num_struct,
            first_artificial,
            num_cols,
            col_map,
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            *v = v.clone() / piv.clone();
        }
        self.rhs[r] = self.rhs[r].clone() / piv;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r].clone();
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][c].clone();
            if f == S::zero() {
                continue;
            }
            for (v, p) in self.rows[i].iter_mut().zip(&prow) {
                if *p != S::zero() {
                    *v = v.clone() - f.clone() * p.clone();
                }
            }
            self.rhs[i] = self.rhs[i].clone() - f * prhs.clone();
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row `c_B B^-1 a_j - c_j` for the given column costs.
    fn reduced_costs(&self, cost: &[S]) -> Vec<S> {
        let mut red: Vec<S> = cost.iter().map(|c| -c.clone()).collect();
        for (i, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[i]].clone();
            if cb == S::zero() {
                continue;
            }
            for (r, v) in red.iter_mut().zip(row) {
                if *v != S::zero() {
                    *r = r.clone() + cb.clone() * v.clone();
                }
            }
        }
        red
    }

    /// Runs Bland's rule over columns `< limit`. Returns false when unbounded.
    fn optimize(&mut self, cost: &[S], limit: usize) -> bool {
        let tol = S::opt_tol();
        loop {
            let red = self.reduced_costs(cost);
            let entering = (0..limit).find(|&j| red[j] < -tol.clone());
            let Some(c) = entering else {
                return true;
            };
            let mut best: Option<(usize, S)> = None;
            for i in 0..self.rows.len() {
                let a = &self.rows[i][c];
                if *a > tol {
                    let ratio = self.rhs[i].clone() / a.clone();
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br || (ratio == br && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }

    fn run(mut self, lp: &LinearProgram<S>) -> LpOutcome<S> {
        let m = self.rows.len();
        if self.num_cols > self.first_artificial {
            let mut cost = vec![S::zero(); self.num_cols];
            for c in cost.iter_mut().skip(self.first_artificial) {
                *c = -S::one();
            }
            // phase one is bounded by construction
            self.optimize(&cost, self.num_cols);
            let infeas = (0..m)
                .filter(|&i| self.basis[i] >= self.first_artificial)
                .fold(S::zero(), |acc, i| acc + self.rhs[i].clone());
            if infeas > S::feas_tol() {
                return LpOutcome::Infeasible;
            }
            // drive zero-level artificials out of the basis
            for i in 0..m {
                if self.basis[i] < self.first_artificial {
                    continue;
                }
                if let Some(c) =
                    (0..self.first_artificial).find(|&j| self.rows[i][j].abs() > S::opt_tol())
                {
                    self.pivot(i, c);
                }
            }
        }

        let mut cost = vec![S::zero(); self.num_cols];
        for (k, &(j, pos)) in self.col_map.iter().enumerate() {
            let c = lp.objective[j].clone();
            cost[k] = if pos { c } else { -c };
        }
        if !self.optimize(&cost, self.first_artificial) {
            return LpOutcome::Unbounded;
        }

        let mut x = vec![S::zero(); lp.num_vars()];
        for i in 0..m {
            let b = self.basis[i];
            if b < self.num_struct {
                let (j, pos) = self.col_map[b];
                let v = self.rhs[i].clone();
                x[j] = if pos { x[j].clone() + v } else { x[j].clone() - v };
            }
        }
        let value = lp
            .objective
            .iter()
            .zip(&x)
            .fold(S::zero(), |acc, (c, v)| acc + c.clone() * v.clone());

        let mut duals = vec![S::zero(); m];
        for (k, dual) in duals.iter_mut().enumerate() {
            let col = self.initial[k];
            let mut y = S::zero();
            for i in 0..m {
                let cb = cost[self.basis[i]].clone();
                if cb != S::zero() {
                    y = y + cb * self.rows[i][col].clone();
                }
            }
            *dual = if self.flipped[k] { -y } else { y };
        }

        LpOutcome::Optimal(LpSolution { value, x, duals })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let sol = lp.solve().optimal().unwrap();
        assert!((sol.value - 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
        // duals (0, 3/2, 1)
        assert!((sol.duals[0]).abs() < 1e-12);
        assert!((sol.duals[1] - 1.5).abs() < 1e-12);
        assert!((sol.duals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_equality_form_with_duals() {
        // max p1 + p3 over {p >= 0, sum p = 1, -p1 + p3 = 0}: value 1
        let mut lp = LinearProgram::<Rational>::new(3);
        lp.objective = vec![r(1, 1), r(0, 1), r(1, 1)];
        lp.add(vec![r(1, 1), r(1, 1), r(1, 1)], Relation::Eq, r(1, 1));
        lp.add(vec![r(-1, 1), r(0, 1), r(1, 1)], Relation::Eq, r(0, 1));
        let sol = lp.solve().optimal().unwrap();
        assert_eq!(sol.value, r(1, 1));
        assert_eq!(sol.x, vec![r(1, 2), r(0, 1), r(1, 2)]);
        // dual objective equals primal
        assert_eq!(sol.duals[0].clone(), r(1, 1));
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::<f64>::new(1);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(lp.solve(), LpOutcome::Infeasible));

        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.vars[0] = VarKind::Free;
        lp.add(vec![1.0, -1.0], Relation::Eq, 0.0);
        assert!(matches!(lp.solve(), LpOutcome::Unbounded));
    }

    #[test]
    fn free_variables_and_ge_rows() {
        // min x0 st x0 + h >= 1, x0 - h >= 1 (h free) -> 1 at h = 0
        let mut lp = LinearProgram::<Rational>::new(2);
        lp.vars = vec![VarKind::Free, VarKind::Free];
        lp.objective = vec![r(-1, 1), r(0, 1)];
        lp.add(vec![r(1, 1), r(1, 1)], Relation::Ge, r(1, 1));
        lp.add(vec![r(1, 1), r(-1, 1)], Relation::Ge, r(1, 1));
        let sol = lp.solve().optimal().unwrap();
        assert_eq!(sol.value, r(-1, 1));
        assert_eq!(sol.x, vec![r(1, 1), r(0, 1)]);
        for d in &sol.duals {
            assert!(*d <= r(0, 1));
        }
        let dual_obj = sol.duals[0].clone() + sol.duals[1].clone();
        assert_eq!(dual_obj, sol.value);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::<Rational>::new(2);
        lp.objective = vec![r(1, 1), r(2, 1)];
        lp.add(vec![r(1, 1), r(1, 1)], Relation::Eq, r(1, 1));
        lp.add(vec![r(2, 1), r(2, 1)], Relation::Eq, r(2, 1));
        let sol = lp.solve().optimal().unwrap();
        assert_eq!(sol.value, r(2, 1));
    }

    #[test]
    fn negative_rhs_rows_are_flipped() {
        // max -x st x >= 3 written as -x <= -3
        let mut lp = LinearProgram::<f64>::new(1);
        lp.objective = vec![-1.0];
        lp.add(vec![-1.0], Relation::Le, -3.0);
        let sol = lp.solve().optimal().unwrap();
        assert!((sol.value + 3.0).abs() < 1e-12);
        assert!(sol.duals[0] >= 0.0);
        assert!((sol.duals[0] * -3.0 - sol.value).abs() < 1e-12);
    }
}
