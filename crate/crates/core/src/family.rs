//! Measure families and their one-step kernel polytopes.
//!
//! Every family here is node-local: a tree measure belongs to it iff each
//! kernel at a charged node lies in the one-step polytope of that node. The
//! polytope for a node is
//!
//! ```text
//! { p >= 0 : sum p = 1,
//!            sum p_c (x_c - x_n) = 0           (martingale, var-bounded)
//!            lo <= sum p_c |x_c - x_n|^2 <= hi  (var-bounded) }
//! ```
//!
//! optionally with `p_c = 0` forced on a set of excluded children.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::claim::Claim;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::scalar::{convert_vec, dot, Scalar};
use crate::tree::{MarketTree, NodeId, TreePath};

/// Children count above which vertex enumeration refuses to run.
pub const ORACLE_MAX_CHILDREN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyClass {
    All,
    Martingale,
    VarBounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub class: FamilyClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_hi: Option<f64>,
    /// Excludes measures charging leaves where the claim is `-inf`.
    #[serde(default)]
    pub claim_restricted: bool,
}

impl FamilySpec {
    pub fn all() -> Self {
        FamilySpec {
            class: FamilyClass::All,
            var_lo: None,
            var_hi: None,
            claim_restricted: false,
        }
    }

    pub fn martingale() -> Self {
        FamilySpec {
            class: FamilyClass::Martingale,
            ..Self::all()
        }
    }

    pub fn var_bounded(lo: f64, hi: f64) -> Self {
        FamilySpec {
            class: FamilyClass::VarBounded,
            var_lo: Some(lo),
            var_hi: Some(hi),
            claim_restricted: false,
        }
    }

    pub fn restricted(mut self) -> Self {
        self.claim_restricted = true;
        self
    }

    pub fn with_restriction(mut self, on: bool) -> Self {
        self.claim_restricted = on;
        self
    }

    pub fn has_martingale_rows(&self) -> bool {
        self.class != FamilyClass::All
    }

    /// Variance bounds `(lo, hi)` for the var-bounded class.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.class {
            FamilyClass::VarBounded => Some((self.var_lo?, self.var_hi?)),
            _ => None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.class != FamilyClass::VarBounded {
            return Ok(());
        }
        let (Some(lo), Some(hi)) = (self.var_lo, self.var_hi) else {
            return Err(Error::InvalidFamily("var_bounded needs var_lo and var_hi".into()));
        };
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 {
            return Err(Error::InvalidFamily(format!(
                "variance bounds must be finite and strictly positive, got [{lo}, {hi}]"
            )));
        }
        if lo > hi {
            return Err(Error::InvalidFamily(format!("var_lo {lo} exceeds var_hi {hi}")));
        }
        if dim != 1 {
            // the psd order on one-step covariance matrices is not polyhedral
            return Err(Error::InvalidFamily(
                "var_bounded is supported for one-dimensional trees only".into(),
            ));
        }
        Ok(())
    }
}

/// Feasible kernels at one node.
#[derive(Clone, Debug)]
pub struct OneStepPolytope<S> {
    pub node: NodeId,
    pub children: Vec<NodeId>,
    pub allowed: Vec<bool>,
    pub increments: Vec<Vec<S>>,
    pub squares: Vec<S>,
    pub martingale: bool,
    pub variance: Option<(S, S)>,
}

/// Optimal kernel of a one-step LP together with its dual certificate.
#[derive(Clone, Debug)]
pub struct OneStepLp<S> {
    pub value: S,
    pub probs: Vec<S>,
    /// Multiplier of the normalization row.
    pub intercept: S,
    pub hedge: Vec<S>,
    /// Net multiplier on `|x_c - x_n|^2` (zero without variance rows).
    pub variance_position: S,
}

impl<S: Scalar> OneStepPolytope<S> {
    pub fn new(tree: &MarketTree, node: NodeId, fam: &FamilySpec) -> Self {
        let children = tree.children(node).to_vec();
        let increments: Vec<Vec<S>> = children
            .iter()
            .map(|&c| convert_vec(&tree.increment(node, c)))
            .collect();
        let squares = increments.iter().map(|v| dot(v, v)).collect();
        OneStepPolytope {
            node,
            allowed: vec![true; children.len()],
            children,
            increments,
            squares,
            martingale: fam.has_martingale_rows(),
            variance: fam.bounds().map(|(lo, hi)| (S::from_f64(lo), S::from_f64(hi))),
        }
    }

    pub fn with_allowed(mut self, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), self.children.len());
        self.allowed = allowed;
        self
    }

    fn dim(&self) -> usize {
        self.increments.first().map_or(0, |v| v.len())
    }

    fn allowed_idx(&self) -> Vec<usize> {
        (0..self.children.len()).filter(|&i| self.allowed[i]).collect()
    }

    /// LP over the allowed children; variable `k` is child `idx[k]`.
    fn program(&self, objective: &[S]) -> (LinearProgram<S>, Vec<usize>) {
        let idx = self.allowed_idx();
        let mut lp = LinearProgram::new(idx.len());
        lp.objective = idx.iter().map(|&i| objective[i].clone()).collect();
        lp.add(vec![S::one(); idx.len()], Relation::Eq, S::one());
        if self.martingale {
            for k in 0..self.dim() {
                lp.add(
                    idx.iter().map(|&i| self.increments[i][k].clone()).collect(),
                    Relation::Eq,
                    S::zero(),
                );
            }
        }
        if let Some((lo, hi)) = &self.variance {
            let row: Vec<S> = idx.iter().map(|&i| self.squares[i].clone()).collect();
            lp.add(row.clone(), Relation::Le, hi.clone());
            lp.add(row, Relation::Ge, lo.clone());
        }
        (lp, idx)
    }

    /// Maximizes `objective · p`; `None` when the polytope is empty.
    pub fn maximize(&self, objective: &[S]) -> Option<OneStepLp<S>> {
        let (lp, idx) = self.program(objective);
        if idx.is_empty() {
            return None;
        }
        let sol = match lp.solve() {
            LpOutcome::Optimal(sol) => sol,
            LpOutcome::Infeasible => return None,
            // probabilities are bounded
            LpOutcome::Unbounded => unreachable!("one-step LP over a simplex cannot be unbounded"),
        };
        let mut probs = vec![S::zero(); self.children.len()];
        for (k, &i) in idx.iter().enumerate() {
            probs[i] = sol.x[k].clone();
        }
        let d = self.dim();
        let (hedge, variance_position) = if self.martingale {
            let h = sol.duals[1..=d].to_vec();
            let g = if self.variance.is_some() {
                sol.duals[d + 1].clone() + sol.duals[d + 2].clone()
            } else {
                S::zero()
            };
            (h, g)
        } else {
            (vec![S::zero(); d], S::zero())
        };
        Some(OneStepLp {
            value: sol.value,
            probs,
            intercept: sol.duals[0].clone(),
            hedge,
            variance_position,
        })
    }

    pub fn is_feasible(&self) -> bool {
        self.maximize(&vec![S::zero(); self.children.len()]).is_some()
    }

    /// Children charged by at least one feasible kernel (one LP per child).
    pub fn chargeable(&self) -> Vec<bool> {
        (0..self.children.len())
            .map(|c| {
                if !self.allowed[c] {
                    return false;
                }
                let mut obj = vec![S::zero(); self.children.len()];
                obj[c] = S::one();
                self.maximize(&obj).is_some_and(|s| s.value.is_positive_tol())
            })
            .collect()
    }

    /// One-step mean of the increment and the scalar second moment.
    pub fn moments(&self, probs: &[S]) -> (Vec<S>, S) {
        let d = self.dim();
        let mut mean = vec![S::zero(); d];
        let mut second = S::zero();
        for (i, p) in probs.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(&self.increments[i]) {
                *m = m.clone() + p.clone() * x.clone();
            }
            second = second + p.clone() * self.squares[i].clone();
        }
        (mean, second)
    }

    /// Why `probs` is outside the polytope, or `None` if it is inside.
    pub fn violation(&self, probs: &[S], tol: &S) -> Option<String> {
        if probs.len() != self.children.len() {
            return Some("kernel does not match the node's children".into());
        }
        for (i, p) in probs.iter().enumerate() {
            if !self.allowed[i] && p.is_positive_tol() {
                return Some(format!("charges excluded child {}", self.children[i]));
            }
        }
        let (mean, second) = self.moments(probs);
        if self.martingale {
            if let Some((k, m)) = mean.iter().enumerate().find(|(_, m)| m.abs() > *tol) {
                return Some(format!(
                    "increment mean {} in coordinate {k} (martingale condition)",
                    m.to_f64()
                ));
            }
        }
        if let Some((lo, hi)) = &self.variance {
            if second.clone() < lo.clone() - tol.clone() || second.clone() > hi.clone() + tol.clone() {
                return Some(format!(
                    "one-step variance {} outside [{}, {}]",
                    second.to_f64(),
                    lo.to_f64(),
                    hi.to_f64()
                ));
            }
        }
        None
    }

    /// All vertices, sorted lexicographically by probability vector.
    pub fn vertices(&self) -> Result<Vec<Vec<S>>> {
        if self.children.len() > ORACLE_MAX_CHILDREN {
            return Err(Error::OracleScale(format!(
                "node {} has {} children (limit {ORACLE_MAX_CHILDREN})",
                self.node,
                self.children.len()
            )));
        }
        let idx = self.allowed_idx();
        let eq_rows = 1 + if self.martingale { self.dim() } else { 0 };
        let max_support = eq_rows + usize::from(self.variance.is_some());
        let mut out: Vec<Vec<S>> = Vec::new();
        for size in 1..=max_support.min(idx.len()) {
            for support in combinations(&idx, size) {
                for active in self.active_sets() {
                    if let Some(p) = self.solve_on_support(&support, active) {
                        if !out.iter().any(|q| same_point(q, &p)) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| lex_cmp(a, b));
        Ok(out)
    }

    /// 0 = none, 1 = upper bound active, 2 = lower bound active.
    fn active_sets(&self) -> Vec<u8> {
        if self.variance.is_some() {
            vec![0, 1, 2]
        } else {
            vec![0]
        }
    }

    fn solve_on_support(&self, support: &[usize], active: u8) -> Option<Vec<S>> {
        let mut rows: Vec<Vec<S>> = vec![vec![S::one(); support.len()]];
        let mut rhs = vec![S::one()];
        if self.martingale {
            for k in 0..self.dim() {
                rows.push(support.iter().map(|&i| self.increments[i][k].clone()).collect());
                rhs.push(S::zero());
            }
        }
        if let Some((lo, hi)) = &self.variance {
            match active {
                1 => {
                    rows.push(support.iter().map(|&i| self.squares[i].clone()).collect());
                    rhs.push(hi.clone());
                }
                2 => {
                    rows.push(support.iter().map(|&i| self.squares[i].clone()).collect());
                    rhs.push(lo.clone());
                }
                _ => {}
            }
        }
        let sol = solve_unique(rows, rhs)?;
        if sol.iter().any(|p| !p.is_positive_tol()) {
            return None;
        }
        let mut probs = vec![S::zero(); self.children.len()];
        for (k, &i) in support.iter().enumerate() {
            probs[i] = sol[k].clone();
        }
        let tol = S::feas_tol() * S::from_f64(100.0);
        if let Some((lo, hi)) = &self.variance {
            let (_, second) = self.moments(&probs);
            if second.clone() < lo.clone() - tol.clone() || second > hi.clone() + tol {
                return None;
            }
        }
        Some(probs)
    }
}

fn same_point<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x.clone() - y.clone()).is_zero_tol())
}

pub(crate) fn lex_cmp<S: Scalar>(a: &[S], b: &[S]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x.clone() - y.clone()).is_zero_tol() {
            continue;
        }
        return x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal);
    }
    std::cmp::Ordering::Equal
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// Unique solution of `a x = b` (rank equal to the number of unknowns and a
/// consistent system), by Gauss-Jordan elimination.
pub(crate) fn solve_unique<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Option<Vec<S>> {
    let m = a.len();
    let n = a.first().map_or(0, |r| r.len());
    let mut row = 0;
    let mut pivots = Vec::with_capacity(n);
    for col in 0..n {
        // largest pivot for floats; first nonzero for exact arithmetic
        let mut best: Option<usize> = None;
        for r in row..m {
            if a[r][col].is_zero_tol() {
                continue;
            }
            best = match best {
                None => Some(r),
                Some(bi) if !S::EXACT && a[r][col].abs() > a[bi][col].abs() => Some(r),
                keep => keep,
            };
        }
        let Some(p) = best else {
            return None;
        };
        a.swap(row, p);
        b.swap(row, p);
        let piv = a[row][col].clone();
        for v in a[row].iter_mut() {
            *v = v.clone() / piv.clone();
        }
        b[row] = b[row].clone() / piv;
        for r in 0..m {
            if r == row || a[r][col].is_zero_tol() {
                continue;
            }
            let f = a[r][col].clone();
            for c in 0..n {
                a[r][c] = a[r][c].clone() - f.clone() * a[row][c].clone();
            }
            b[r] = b[r].clone() - f * b[row].clone();
        }
        pivots.push(col);
        row += 1;
    }
    if pivots.len() < n {
        return None;
    }
    let tol = S::feas_tol() * S::from_f64(100.0);
    if b[n..].iter().any(|v| v.abs() > tol) {
        return None;
    }
    Some(b[..n].to_vec())
}

/// Children of `n` charged by some kernel of the family at `n`.
pub fn chargeable_children(tree: &MarketTree, n: NodeId, fam: &FamilySpec) -> BTreeSet<NodeId> {
    let poly = OneStepPolytope::<f64>::new(tree, n, fam);
    poly.children
        .iter()
        .zip(poly.chargeable())
        .filter(|(_, ok)| *ok)
        .map(|(c, _)| *c)
        .collect()
}

/// Nodes from which some family measure can proceed to the leaves.
///
/// A leaf is viable unless `exclude_neg_inf` and the claim is `-inf` there;
/// an internal node is viable iff the family admits a kernel charging only
/// viable children.
pub fn viable_nodes<S: Scalar>(
    tree: &MarketTree,
    fam: &FamilySpec,
    claim: &Claim,
    exclude_neg_inf: bool,
) -> Vec<bool> {
    let mut viable = vec![false; tree.len()];
    for id in (0..tree.len()).rev().map(NodeId) {
        viable[id.0] = if tree.is_leaf(id) {
            !(exclude_neg_inf && claim.get(id).is_none_or(|v| v.is_neg_inf()))
        } else {
            let allowed = tree.children(id).iter().map(|c| viable[c.0]).collect();
            OneStepPolytope::<S>::new(tree, id, fam)
                .with_allowed(allowed)
                .is_feasible()
        };
    }
    viable
}

/// Per node, the children that some measure of the family (restricted by
/// the claim when requested) charges. Empty at non-viable nodes.
pub fn charged_edges(tree: &MarketTree, fam: &FamilySpec, claim: &Claim) -> Vec<Vec<bool>> {
    let viable = viable_nodes::<f64>(tree, fam, claim, fam.claim_restricted);
    tree.nodes()
        .iter()
        .map(|node| {
            if node.children.is_empty() || !viable[node.id.0] {
                return vec![false; node.children.len()];
            }
            let allowed = node.children.iter().map(|c| viable[c.0]).collect();
            OneStepPolytope::<f64>::new(tree, node.id, fam)
                .with_allowed(allowed)
                .chargeable()
        })
        .collect()
}

/// Root-to-leaf paths charged by no measure of the family.
///
/// A path is returned iff one of its steps is not chargeable once every
/// node from which no family measure can avoid a `-inf` leaf has been
/// excluded (only when the family is claim-restricted). This is exactly the
/// set of paths no measure of the (restricted) family charges.
pub fn polar_paths(tree: &MarketTree, fam: &FamilySpec, claim: &Claim) -> Vec<TreePath> {
    let edges = charged_edges(tree, fam, claim);
    let mut open = vec![false; tree.len()];
    open[tree.root().0] = true;
    for node in tree.nodes() {
        if !open[node.id.0] {
            continue;
        }
        for (k, c) in node.children.iter().enumerate() {
            open[c.0] = edges[node.id.0][k];
        }
    }
    tree.leaves()
        .filter(|l| !open[l.0])
        .map(|l| tree.path_to(l))
        .collect()
}

/// Nodes lying on at least one non-polar path.
pub fn charged_region(tree: &MarketTree, fam: &FamilySpec, claim: &Claim) -> Vec<bool> {
    let edges = charged_edges(tree, fam, claim);
    let mut open = vec![false; tree.len()];
    open[tree.root().0] = true;
    for node in tree.nodes() {
        if !open[node.id.0] {
            continue;
        }
        for (k, c) in node.children.iter().enumerate() {
            open[c.0] = edges[node.id.0][k];
        }
    }
    let mut reaches_leaf = vec![false; tree.len()];
    for id in (0..tree.len()).rev() {
        let node = &tree.nodes()[id];
        reaches_leaf[id] = open[id]
            && (node.children.is_empty() || node.children.iter().any(|c| reaches_leaf[c.0]));
    }
    reaches_leaf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{ExtReal, Rational};
    use crate::tree::{Generator, TreeSpec};

    fn tree_with(offsets: Vec<f64>, depth: usize) -> MarketTree {
        MarketTree::from_offsets(1, depth, |_, _, _| {
            Ok(offsets.iter().map(|&o| vec![o]).collect())
        })
        .unwrap()
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn family_validation() {
        assert!(FamilySpec::var_bounded(0.5, 0.2).validate(1).is_err());
        assert!(FamilySpec::var_bounded(0.0, 0.2).validate(1).is_err());
        assert!(FamilySpec::var_bounded(0.2, 0.5).validate(2).is_err());
        assert!(FamilySpec::var_bounded(0.2, 0.5).validate(1).is_ok());
        let fam: FamilySpec = serde_json::from_str(
            r#"{"class":"var_bounded","var_lo":0.2,"var_hi":0.6,"claim_restricted":true}"#,
        )
        .unwrap();
        assert_eq!(fam.bounds(), Some((0.2, 0.6)));
        assert!(fam.claim_restricted);
    }

    #[test]
    fn martingale_vertices_on_trinomial_node() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let poly = OneStepPolytope::<Rational>::new(&t, t.root(), &FamilySpec::martingale());
        let verts = poly.vertices().unwrap();
        assert_eq!(
            verts,
            vec![vec![r(0, 1), r(1, 1), r(0, 1)], vec![r(1, 2), r(0, 1), r(1, 2)]]
        );
    }

    #[test]
    fn binomial_vertex_is_unique() {
        let t = tree_with(vec![-1.0, 1.0], 1);
        let poly = OneStepPolytope::<Rational>::new(&t, t.root(), &FamilySpec::martingale());
        assert_eq!(poly.vertices().unwrap(), vec![vec![r(1, 2), r(1, 2)]]);
    }

    #[test]
    fn all_family_vertices_are_diracs() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let poly = OneStepPolytope::<Rational>::new(&t, t.root(), &FamilySpec::all());
        let verts = poly.vertices().unwrap();
        assert_eq!(verts.len(), 3);
        for v in &verts {
            assert_eq!(v.iter().filter(|p| **p == r(1, 1)).count(), 1);
        }
    }

    #[test]
    fn variance_active_vertices() {
        // var in [0.2, 0.6] on {-1, 0, 1}: kernels (q, 1-2q, q) with q in [0.1, 0.3]
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let fam = FamilySpec::var_bounded(0.2, 0.6);
        let poly = OneStepPolytope::<Rational>::new(&t, t.root(), &fam);
        let verts = poly.vertices().unwrap();
        assert_eq!(
            verts,
            vec![
                vec![r(1, 10), r(4, 5), r(1, 10)],
                vec![r(3, 10), r(2, 5), r(3, 10)],
            ]
        );
    }

    #[test]
    fn martingale_infeasible_node() {
        let t = tree_with(vec![1.0, 2.0], 1);
        let poly = OneStepPolytope::<f64>::new(&t, t.root(), &FamilySpec::martingale());
        assert!(!poly.is_feasible());
        assert!(poly.vertices().unwrap().is_empty());
        assert!(chargeable_children(&t, t.root(), &FamilySpec::martingale()).is_empty());
    }

    #[test]
    fn chargeability() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        assert_eq!(chargeable_children(&t, t.root(), &FamilySpec::martingale()).len(), 3);
        let t = tree_with(vec![0.0, 1.0], 1);
        // only the Dirac at the current spot is a martingale kernel
        assert_eq!(
            chargeable_children(&t, t.root(), &FamilySpec::martingale()),
            [NodeId(1)].into_iter().collect()
        );
        assert_eq!(chargeable_children(&t, t.root(), &FamilySpec::all()).len(), 2);
    }

    #[test]
    fn polar_path_examples() {
        let bin = MarketTree::build(&TreeSpec {
            dim: 1,
            depth: 2,
            generator: Generator::Binomial { u: 1.0 },
        })
        .unwrap();
        let claim = Claim::constant(&bin, 1.0);
        assert!(polar_paths(&bin, &FamilySpec::martingale(), &claim).is_empty());

        let bad = tree_with(vec![1.0, 2.0], 1);
        let claim = Claim::constant(&bad, 1.0);
        assert_eq!(polar_paths(&bad, &FamilySpec::martingale(), &claim).len(), 2);

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let zero_path = tri.leaves().find(|l| tri.path_to(*l).0.iter().all(|n| tri.spot(*n)[0] == 0.0)).unwrap();
        let claim = Claim::from_fn(&tri, |l| {
            if l == zero_path {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(1.0)
            }
        });
        let fam = FamilySpec::martingale().restricted();
        let polar = polar_paths(&tri, &fam, &claim);
        assert_eq!(polar, vec![tri.path_to(zero_path)]);
        // unrestricted family charges the -inf path
        assert!(polar_paths(&tri, &FamilySpec::martingale(), &claim).is_empty());
    }

    #[test]
    fn neg_inf_propagates_through_forced_nodes() {
        // root {-1, +1}; the -1 node has children {-1, +1} with a -inf leaf:
        // every martingale kernel there charges it, so the whole -1 subtree is polar,
        // and the root cannot avoid it either.
        let t = tree_with(vec![-1.0, 1.0], 2);
        let claim = Claim::from_fn(&t, |l| {
            if l == NodeId(3) {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(0.0)
            }
        });
        let fam = FamilySpec::martingale().restricted();
        assert_eq!(polar_paths(&t, &fam, &claim).len(), 4);
    }

    #[test]
    fn gaussian_solver_rank_checks() {
        let a = vec![vec![r(1, 1), r(1, 1)], vec![r(2, 1), r(2, 1)]];
        assert!(solve_unique(a, vec![r(1, 1), r(2, 1)]).is_none());
        let a = vec![vec![r(1, 1), r(1, 1)], vec![r(-1, 1), r(2, 1)]];
        assert_eq!(solve_unique(a, vec![r(1, 1), r(0, 1)]).unwrap(), vec![r(2, 3), r(1, 3)]);
        let a = vec![vec![r(1, 1)], vec![r(1, 1)]];
        assert!(solve_unique(a, vec![r(1, 1), r(2, 1)]).is_none());
    }
}
