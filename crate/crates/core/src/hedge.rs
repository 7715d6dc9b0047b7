//! Superhedging strategies: extraction from the dual recursion, the primal
//! LP, pathwise verification and the Doob–Meyer compensator.
//!
//! Quasi-sure statements are checked off the polar paths of the claim-
//! restricted family, whatever the restriction flag of the family passed in:
//! paths that every finite-value measure avoids carry no constraint.
//!
//! In the variance-bounded family the stock alone does not close the duality
//! gap on a tree, so a strategy also holds a one-step position `g` in the
//! squared increment, bought at `g·hi` when `g > 0` and sold at `g·lo`
//! otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claim::Claim;
use crate::dual::{backward_solve, step_gain, DualSolution, ValueField};
use crate::error::{Error, Result};
use crate::family::{charged_edges, charged_region, polar_paths, FamilyClass, FamilySpec, OneStepPolytope};
use crate::lp::{LinearProgram, LpOutcome, Relation, VarKind};
use crate::measure::{property_tol, TreeMeasure};
use crate::oracle::ORACLE_MAX_LEAVES;
use crate::scalar::{convert_vec, dot, tol, ExtReal, Scalar};
use crate::tree::{MarketTree, NodeId, TreePath};

#[derive(Clone, Debug, PartialEq)]
pub struct Strategy<S = f64> {
    pub stock: BTreeMap<NodeId, Vec<S>>,
    /// Present only for the variance-bounded family.
    pub variance: BTreeMap<NodeId, S>,
    /// Nodes set to zero because no finite-value measure reaches them.
    pub flagged: BTreeSet<NodeId>,
    pub bounds: Option<(S, S)>,
}

impl<S: Scalar> Strategy<S> {
    pub fn zero(tree: &MarketTree, fam: &FamilySpec) -> Self {
        let bounds = fam.bounds().map(|(lo, hi)| (S::from_f64(lo), S::from_f64(hi)));
        Strategy {
            stock: tree.non_leaves().map(|n| (n, vec![S::zero(); tree.dim()])).collect(),
            variance: if bounds.is_some() {
                tree.non_leaves().map(|n| (n, S::zero())).collect()
            } else {
                BTreeMap::new()
            },
            flagged: BTreeSet::new(),
            bounds,
        }
    }

    /// Gain on the edge `n -> c`.
    pub fn gain(&self, tree: &MarketTree, n: NodeId, c: NodeId) -> S {
        let dx: Vec<S> = convert_vec(&tree.increment(n, c));
        let zero = vec![S::zero(); tree.dim()];
        let h = self.stock.get(&n).unwrap_or(&zero);
        let g = self.variance.get(&n).cloned().unwrap_or_else(S::zero);
        step_gain(h, &g, self.bounds.as_ref(), &dx)
    }

    pub fn to_f64(&self) -> Strategy<f64> {
        Strategy {
            stock: self
                .stock
                .iter()
                .map(|(n, h)| (*n, h.iter().map(|x| x.to_f64()).collect()))
                .collect(),
            variance: self.variance.iter().map(|(n, g)| (*n, g.to_f64())).collect(),
            flagged: self.flagged.clone(),
            bounds: self.bounds.as_ref().map(|(a, b)| (a.to_f64(), b.to_f64())),
        }
    }
}

/// Wire form of a strategy: `{node: h}` plus optional variance positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyDoc {
    pub stock: BTreeMap<NodeId, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub variance: BTreeMap<NodeId, f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flagged: BTreeSet<NodeId>,
}

impl Strategy<f64> {
    pub fn to_doc(&self) -> StrategyDoc {
        StrategyDoc {
            stock: self.stock.clone(),
            variance: self.variance.clone(),
            flagged: self.flagged.clone(),
        }
    }
}

fn restricted(fam: &FamilySpec) -> FamilySpec {
    fam.clone().with_restriction(true)
}

/// One-step multipliers of the dual recursion, zero and flagged where `Y = -inf`.
pub fn extract_strategy<S: Scalar>(tree: &MarketTree, dual: &DualSolution<S>, fam: &FamilySpec) -> Result<Strategy<S>> {
    if dual.root_value().is_neg_inf() {
        return Err(Error::EmptyFamily);
    }
    let mut strategy = Strategy::zero(tree, fam);
    for n in tree.non_leaves() {
        match dual.steps.get(&n) {
            Some(step) if step.value.is_finite() => {
                strategy.stock.insert(n, step.hedge.clone());
                if strategy.bounds.is_some() {
                    strategy.variance.insert(n, step.variance_position.clone());
                }
            }
            _ => {
                strategy.flagged.insert(n);
            }
        }
    }
    Ok(strategy)
}

/// `X0 + sum of step gains` along `path`.
pub fn wealth<S: Scalar>(tree: &MarketTree, x0: &S, strategy: &Strategy<S>, path: &TreePath) -> S {
    path.edges()
        .fold(x0.clone(), |acc, (n, c)| acc + strategy.gain(tree, n, c))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperhedgeReport<S = f64> {
    pub ok: bool,
    /// Smallest `wealth - claim` over non-polar paths.
    pub min_slack: Option<S>,
    pub slacks: BTreeMap<NodeId, S>,
    pub violating: Vec<NodeId>,
    pub polar: Vec<TreePath>,
}

/// Checks `wealth >= claim - 1e-9` on every path charged by the restricted family.
pub fn verify_superhedge<S: Scalar>(
    tree: &MarketTree,
    x0: &S,
    strategy: &Strategy<S>,
    claim: &Claim,
    fam: &FamilySpec,
) -> SuperhedgeReport<S> {
    let polar = polar_paths(tree, &restricted(fam), claim);
    let polar_leaves: BTreeSet<NodeId> = polar.iter().filter_map(|p| p.last()).collect();
    let tol = property_tol::<S>();
    let mut slacks = BTreeMap::new();
    let mut violating = Vec::new();
    let mut min_slack: Option<S> = None;
    for leaf in tree.leaves() {
        if polar_leaves.contains(&leaf) {
            continue;
        }
        let Some(v) = claim.value_as::<S>(leaf).finite().cloned() else { continue };
        let slack = wealth(tree, x0, strategy, &tree.path_to(leaf)) - v;
        if slack < -tol.clone() {
            violating.push(leaf);
        }
        if min_slack.as_ref().is_none_or(|m| slack < *m) {
            min_slack = Some(slack.clone());
        }
        slacks.insert(leaf, slack);
    }
    SuperhedgeReport {
        ok: violating.is_empty(),
        min_slack,
        slacks,
        violating,
        polar,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalSolution<S = f64> {
    /// `-inf` when every path is polar.
    pub value: ExtReal<S>,
    pub strategy: Option<Strategy<S>>,
}

/// `min X0` such that the wealth dominates the claim off polar paths.
pub fn primal_lp<S: Scalar>(tree: &MarketTree, claim: &Claim, fam: &FamilySpec) -> Result<PrimalSolution<S>> {
    fam.validate(tree.dim())?;
    claim.check_covers(tree)?;
    let leaves = tree.leaves().count();
    if leaves > ORACLE_MAX_LEAVES {
        return Err(Error::OracleScale(format!("{leaves} leaves (limit {ORACLE_MAX_LEAVES})")));
    }
    let rfam = restricted(fam);
    let polar: BTreeSet<NodeId> = polar_paths(tree, &rfam, claim)
        .iter()
        .filter_map(|p| p.last())
        .collect();
    let region = charged_region(tree, &rfam, claim);
    let edges = charged_edges(tree, &rfam, claim);
    let d = tree.dim();
    let bounds = fam.bounds().map(|(lo, hi)| (S::from_f64(lo), S::from_f64(hi)));

    // columns: X0, then per active node h (d free) and g+, g- when bounded
    let active: Vec<NodeId> = tree.non_leaves().filter(|n| region[n.0]).collect();
    let per = d + if bounds.is_some() { 2 } else { 0 };
    let col: BTreeMap<NodeId, usize> = active.iter().enumerate().map(|(i, n)| (*n, 1 + i * per)).collect();
    let nvars = 1 + active.len() * per;
    let mut lp = LinearProgram::new(nvars);
    lp.objective[0] = -S::one();
    lp.vars[0] = VarKind::Free;
    for &base in col.values() {
        for k in 0..d {
            lp.vars[base + k] = VarKind::Free;
        }
    }
    let mut constrained = false;
    for leaf in tree.leaves() {
        if polar.contains(&leaf) {
            continue;
        }
        let Some(v) = claim.value_as::<S>(leaf).finite().cloned() else { continue };
        let mut row = vec![S::zero(); nvars];
        row[0] = S::one();
        for (n, c) in tree.path_to(leaf).edges() {
            let Some(&base) = col.get(&n) else { continue };
            let dx: Vec<S> = convert_vec(&tree.increment(n, c));
            for k in 0..d {
                row[base + k] = dx[k].clone();
            }
            if let Some((lo, hi)) = &bounds {
                let sq = dot(&dx, &dx);
                row[base + d] = sq.clone() - hi.clone();
                row[base + d + 1] = lo.clone() - sq;
            }
        }
        lp.add(row, Relation::Ge, v);
        constrained = true;
    }
    if !constrained {
        return Ok(PrimalSolution {
            value: ExtReal::NegInf,
            strategy: None,
        });
    }
    if fam.class == FamilyClass::All {
        // no drift under any Dirac kernel the family may use
        for (&n, &base) in &col {
            for (k, &c) in tree.children(n).iter().enumerate() {
                if !edges[n.0][k] {
                    continue;
                }
                let dx: Vec<S> = convert_vec(&tree.increment(n, c));
                let mut row = vec![S::zero(); nvars];
                for j in 0..d {
                    row[base + j] = dx[j].clone();
                }
                lp.add(row, Relation::Le, S::zero());
            }
        }
    }
    let sol = match lp.solve() {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Unbounded => {
            return Ok(PrimalSolution {
                value: ExtReal::NegInf,
                strategy: None,
            })
        }
        LpOutcome::Infeasible => {
            return Err(Error::Numerical("superhedging LP reported infeasible".into()));
        }
    };
    let mut strategy = Strategy::zero(tree, fam);
    for n in tree.non_leaves() {
        match col.get(&n) {
            Some(&base) => {
                strategy.stock.insert(n, sol.x[base..base + d].to_vec());
                if bounds.is_some() {
                    let g = sol.x[base + d].clone() - sol.x[base + d + 1].clone();
                    strategy.variance.insert(n, g);
                }
            }
            None => {
                strategy.flagged.insert(n);
            }
        }
    }
    Ok(PrimalSolution {
        value: ExtReal::Finite(sol.x[0].clone()),
        strategy: Some(strategy),
    })
}

/// Cumulative compensator `K` on the nodes charged by a measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Compensator<S = f64> {
    pub values: BTreeMap<NodeId, S>,
}

impl<S: Scalar> Compensator<S> {
    pub fn at(&self, n: NodeId) -> Option<&S> {
        self.values.get(&n)
    }

    /// `E^P[K_N]`.
    pub fn terminal_mean(&self, tree: &MarketTree, p: &TreeMeasure<S>) -> S {
        p.leaf_law(tree)
            .into_iter()
            .fold(S::zero(), |acc, (l, q)| acc + q * self.values[&l].clone())
    }
}

/// `K(c) = K(n) + Y(n) + gain(n, c) - Y(c)` along every edge charged by `p`.
pub fn doob_meyer<S: Scalar>(
    tree: &MarketTree,
    y: &ValueField<S>,
    strategy: &Strategy<S>,
    p: &TreeMeasure<S>,
) -> Result<Compensator<S>> {
    let reach = p.reach(tree);
    let mut values = BTreeMap::new();
    values.insert(p.root, S::zero());
    let tol = S::from_f64(tol::PROPERTY);
    for n in reach.keys() {
        let Some(k) = p.kernel(*n) else { continue };
        let kn = values[n].clone();
        for c in k.support() {
            let (Some(yn), Some(yc)) = (y.finite_at(*n), y.finite_at(c)) else {
                return Err(Error::InvalidMeasure(format!(
                    "measure charges the edge {n} -> {c} with infinite value"
                )));
            };
            let inc = yn.clone() + strategy.gain(tree, *n, c) - yc.clone();
            if inc < -tol.clone() {
                return Err(Error::NegativeIncrement {
                    node: *n,
                    child: c,
                    increment: inc.to_f64(),
                });
            }
            values.insert(c, kn.clone() + inc);
        }
    }
    Ok(Compensator { values })
}

/// `E^P[gain | n] <= 1e-12` at every charged node, for every vertex kernel of
/// the restricted family.
pub fn check_admissible<S: Scalar>(tree: &MarketTree, strategy: &Strategy<S>, fam: &FamilySpec, claim: &Claim) -> Result<bool> {
    let rfam = restricted(fam);
    let edges = charged_edges(tree, &rfam, claim);
    let region = charged_region(tree, &rfam, claim);
    let tol = if S::EXACT {
        S::zero()
    } else {
        S::from_f64(tol::FEASIBILITY)
    };
    for n in tree.non_leaves().filter(|n| region[n.0]) {
        let allowed = edges[n.0].clone();
        let poly = OneStepPolytope::<S>::new(tree, n, fam).with_allowed(allowed);
        let gains: Vec<S> = tree.children(n).iter().map(|&c| strategy.gain(tree, n, c)).collect();
        for v in poly.vertices()? {
            if dot(&v, &gains) > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Dual value, strategy and its verification in one call.
pub fn solve_and_hedge<S: Scalar>(
    tree: &MarketTree,
    claim: &Claim,
    fam: &FamilySpec,
) -> Result<(DualSolution<S>, Option<(Strategy<S>, SuperhedgeReport<S>)>)> {
    let dual = backward_solve::<S>(tree, claim, fam)?;
    let Some(x0) = dual.root_value().finite().cloned() else {
        return Ok((dual, None));
    };
    let strategy = extract_strategy(tree, &dual, fam)?;
    let report = verify_superhedge(tree, &x0, &strategy, claim, fam);
    Ok((dual, Some((strategy, report))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::Payoff;
    use crate::measure::Kernel;
    use crate::scalar::Rational;

    fn tree_with(offsets: Vec<f64>, depth: usize) -> MarketTree {
        MarketTree::from_offsets(1, depth, |_, _, _| {
            Ok(offsets.iter().map(|&o| vec![o]).collect())
        })
        .unwrap()
    }

    fn hedge_from(tree: &MarketTree, claim: &Claim, fam: &FamilySpec) -> (f64, Strategy) {
        let dual = backward_solve::<f64>(tree, claim, fam).unwrap();
        let s = extract_strategy(tree, &dual, fam).unwrap();
        (dual.root_value().finite().copied().unwrap(), s)
    }

    #[test]
    fn extracted_strategies() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let fam = FamilySpec::martingale();
        let (x0, s) = hedge_from(&tri, &Payoff::Abs.claim(&tri), &fam);
        assert_eq!((x0, s.stock[&tri.root()][0]), (1.0, 0.0));

        let bin = tree_with(vec![-1.0, 2.0], 1);
        let (x0, s) = hedge_from(&bin, &Payoff::Square.claim(&bin), &fam);
        assert_eq!((x0, s.stock[&bin.root()][0]), (2.0, 1.0));

        let deep = tree_with(vec![-1.0, 0.0, 2.0], 3);
        let claim = Payoff::Linear.claim(&deep);
        let dual = backward_solve::<f64>(&deep, &claim, &fam).unwrap();
        let s = extract_strategy(&deep, &dual, &fam).unwrap();
        for n in deep.non_leaves() {
            assert!((dual.values.at(n).to_f64() - deep.spot(n)[0]).abs() < 1e-12);
            assert!((s.stock[&n][0] - 1.0).abs() < 1e-12);
        }

        let pos = tree_with(vec![1.0, 2.0], 1);
        let dual = backward_solve::<f64>(&pos, &Payoff::Abs.claim(&pos), &fam).unwrap();
        assert_eq!(extract_strategy(&pos, &dual, &fam), Err(Error::EmptyFamily));
    }

    #[test]
    fn wealth_examples() {
        let bin = tree_with(vec![-1.0, 2.0], 2);
        let fam = FamilySpec::martingale();
        let zero = Strategy::<f64>::zero(&bin, &fam);
        let mut one = zero.clone();
        for h in one.stock.values_mut() {
            h[0] = 1.0;
        }
        for leaf in bin.leaves() {
            let p = bin.path_to(leaf);
            assert_eq!(wealth(&bin, &3.0, &zero, &p), 3.0);
            assert_eq!(wealth(&bin, &3.0, &one, &p), 3.0 + bin.spot(leaf)[0]);
        }
        let one_step = tree_with(vec![-1.0, 2.0], 1);
        let mut s = Strategy::<f64>::zero(&one_step, &fam);
        s.stock.insert(one_step.root(), vec![1.0]);
        let w: Vec<f64> = one_step.leaves().map(|l| wealth(&one_step, &2.0, &s, &one_step.path_to(l))).collect();
        assert_eq!(w, vec![1.0, 4.0]);
    }

    #[test]
    fn verification_examples() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let fam = FamilySpec::martingale();
        let claim = Payoff::Abs.claim(&tri);
        let (x0, s) = hedge_from(&tri, &claim, &fam);
        let r = verify_superhedge(&tri, &x0, &s, &claim, &fam);
        assert!(r.ok);
        assert_eq!(r.min_slack, Some(0.0));
        assert_eq!(r.slacks[&NodeId(2)], 1.0);

        let r = verify_superhedge(&tri, &(x0 - 0.1), &s, &claim, &fam);
        assert!(!r.ok);
        assert_eq!(r.violating, vec![NodeId(1), NodeId(3)]);

        let holey = Claim::from_fn(&tri, |l| {
            if tri.spot(l)[0] == 0.0 {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(1.0)
            }
        });
        let zero = Strategy::zero(&tri, &fam);
        let r = verify_superhedge(&tri, &1.0, &zero, &holey, &fam.clone().restricted());
        assert!(r.ok);
        assert_eq!(r.polar, vec![tri.path_to(NodeId(2))]);
    }

    #[test]
    fn primal_examples() {
        let fam = FamilySpec::martingale();
        let bin = tree_with(vec![-1.0, 1.0], 1);
        let p = primal_lp::<Rational>(&bin, &Payoff::Abs.claim(&bin), &fam).unwrap();
        assert_eq!(p.value, ExtReal::Finite(Rational::from_f64(1.0)));
        assert_eq!(p.strategy.unwrap().stock[&bin.root()], vec![Rational::from_f64(0.0)]);

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let p = primal_lp::<Rational>(&tri, &Payoff::Call(0.0).claim(&tri), &fam).unwrap();
        assert_eq!(p.value, ExtReal::Finite(Rational::from_f64(0.5)));
        assert_eq!(p.strategy.unwrap().stock[&tri.root()], vec![Rational::from_f64(0.5)]);

        let pos = tree_with(vec![1.0, 2.0], 2);
        let p = primal_lp::<f64>(&pos, &Payoff::Abs.claim(&pos), &fam).unwrap();
        assert!(p.value.is_neg_inf());
    }

    #[test]
    fn variance_positions_close_the_gap() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let claim = Claim::from_fn(&tri, |l| ExtReal::Finite(tri.spot(l)[0].abs()));
        let fam = FamilySpec::var_bounded(0.2, 0.6);
        let p = primal_lp::<Rational>(&tri, &claim, &fam).unwrap();
        assert_eq!(p.value, ExtReal::Finite(Rational::from_f64(0.6)));
        // with the stock alone the cheapest superhedge costs the full 1
        let stock_only = primal_lp::<Rational>(&tri, &claim, &FamilySpec::martingale()).unwrap();
        assert_eq!(stock_only.value, ExtReal::Finite(Rational::from_f64(1.0)));
        let (x0, s) = hedge_from(&tri, &claim, &fam);
        assert!((x0 - 0.6).abs() < 1e-12);
        assert!(verify_superhedge(&tri, &x0, &s, &claim, &fam).ok);
    }

    #[test]
    fn compensator_examples() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let fam = FamilySpec::martingale();
        let claim = Payoff::Abs.claim(&tri);
        let dual = backward_solve::<f64>(&tri, &claim, &fam).unwrap();
        let s = extract_strategy(&tri, &dual, &fam).unwrap();
        let opt = TreeMeasure::from_kernels(&tri, tri.root(), dual.kernels().into_values()).unwrap();
        let k = doob_meyer(&tri, &dual.values, &s, &opt).unwrap();
        assert!(k.values.values().all(|v| *v == 0.0));

        let lazy = TreeMeasure::from_kernels(&tri, tri.root(), [Kernel::dirac(&tri, tri.root(), NodeId(2))]).unwrap();
        let k = doob_meyer(&tri, &dual.values, &s, &lazy).unwrap();
        assert_eq!(k.at(NodeId(2)), Some(&1.0));

        let claim = Payoff::Linear.claim(&tri);
        let dual = backward_solve::<f64>(&tri, &claim, &fam).unwrap();
        let s = extract_strategy(&tri, &dual, &fam).unwrap();
        for p in [opt, lazy] {
            let k = doob_meyer(&tri, &dual.values, &s, &p).unwrap();
            assert!(k.values.values().all(|v| v.abs() < 1e-12));
        }

        let mut bad = s.clone();
        bad.stock.insert(tri.root(), vec![5.0]);
        let p = TreeMeasure::from_kernels(&tri, tri.root(), [Kernel::new(&tri, tri.root(), vec![0.5, 0.0, 0.5]).unwrap()]).unwrap();
        assert!(matches!(
            doob_meyer(&tri, &dual.values, &bad, &p),
            Err(Error::NegativeIncrement { .. })
        ));
    }

    #[test]
    fn admissibility() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let claim = Payoff::Abs.claim(&tri);
        let mut one = Strategy::<f64>::zero(&tri, &FamilySpec::martingale());
        for h in one.stock.values_mut() {
            h[0] = 1.0;
        }
        assert!(check_admissible(&tri, &one, &FamilySpec::martingale(), &claim).unwrap());
        assert!(!check_admissible(&tri, &one, &FamilySpec::all(), &claim).unwrap());
        for fam in [FamilySpec::all(), FamilySpec::martingale(), FamilySpec::var_bounded(0.2, 0.6)] {
            let zero = Strategy::<f64>::zero(&tri, &fam);
            assert!(check_admissible(&tri, &zero, &fam, &claim).unwrap());
        }
    }

    #[test]
    fn all_family_primal_matches_max() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let claim = Payoff::Call(0.5).claim(&tri);
        let p = primal_lp::<f64>(&tri, &claim, &FamilySpec::all()).unwrap();
        assert!((p.value.to_f64() - 1.5).abs() < 1e-12);
        assert!(check_admissible(&tri, p.strategy.as_ref().unwrap(), &FamilySpec::all(), &claim).unwrap());
    }
}
