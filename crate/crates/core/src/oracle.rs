//! Brute-force oracles: the path-measure LP, vertex kernels, and the
//! ess-sup and upward-directedness checks.

use std::collections::BTreeMap;

use crate::claim::Claim;
use crate::dual::backward_value;
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::family::OneStepPolytope;
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::measure::{bifurcate, in_family, paste, property_tol, rcpd, Kernel, TreeMeasure};
use crate::scalar::{convert_vec, dot, ExtReal, Scalar};
use crate::tree::{shift_claim, validate_stopping_time_from, MarketTree, NodeId, StoppingTime};

pub const ORACLE_MAX_LEAVES: usize = 2000;

/// Leaf-law LP over the subtree of `root`.
///
/// Columns are the leaves with finite claim value; `-inf` leaves are forced
/// to zero by omission. Row 0 is the normalization, then per non-leaf node
/// one martingale row per coordinate, then the two variance rows.
#[derive(Clone, Debug)]
pub struct PathLp<S> {
    pub root: NodeId,
    pub leaves: Vec<NodeId>,
    /// Row labels: `(node, Some(k))` martingale coordinate `k`, `(node, None)` variance.
    pub rows: Vec<(NodeId, Option<usize>)>,
    pub program: LinearProgram<S>,
}

impl<S: Scalar> PathLp<S> {
    pub fn new(tree: &MarketTree, claim: &Claim, fam: &FamilySpec, root: NodeId) -> Result<Self> {
        fam.validate(tree.dim())?;
        let below = tree.leaves_below(root);
        if below.len() > ORACLE_MAX_LEAVES {
            return Err(Error::OracleScale(format!(
                "{} leaves below node {root} (limit {ORACLE_MAX_LEAVES})",
                below.len()
            )));
        }
        let leaves: Vec<NodeId> = below
            .into_iter()
            .filter(|&l| claim.value_as::<S>(l).is_finite())
            .collect();
        let col: BTreeMap<NodeId, usize> = leaves.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let mut lp = LinearProgram::new(leaves.len());
        lp.objective = leaves
            .iter()
            .map(|&l| claim.value_as::<S>(l).finite().cloned().expect("finite column"))
            .collect();
        lp.add(vec![S::one(); leaves.len()], Relation::Eq, S::one());
        let mut rows = vec![(root, None)];
        let bounds = fam.bounds().map(|(lo, hi)| (S::from_f64(lo), S::from_f64(hi)));
        for n in tree.subtree(root) {
            if tree.is_leaf(n) {
                continue;
            }
            let d = tree.dim();
            // increment at n along each leaf below n
            let mut incs: Vec<(usize, Vec<S>)> = Vec::new();
            for &c in tree.children(n) {
                let dx: Vec<S> = convert_vec(&tree.increment(n, c));
                for l in tree.leaves_below(c) {
                    if let Some(&j) = col.get(&l) {
                        incs.push((j, dx.clone()));
                    }
                }
            }
            if fam.has_martingale_rows() {
                for k in 0..d {
                    let mut row = vec![S::zero(); leaves.len()];
                    for (j, dx) in &incs {
                        row[*j] = dx[k].clone();
                    }
                    lp.add(row, Relation::Eq, S::zero());
                    rows.push((n, Some(k)));
                }
            }
            if let Some((lo, hi)) = &bounds {
                let mut up = vec![S::zero(); leaves.len()];
                let mut down = vec![S::zero(); leaves.len()];
                for (j, dx) in &incs {
                    let sq = dot(dx, dx);
                    up[*j] = sq.clone() - hi.clone();
                    down[*j] = sq - lo.clone();
                }
                lp.add(up, Relation::Le, S::zero());
                lp.add(down, Relation::Ge, S::zero());
                rows.push((n, None));
                rows.push((n, None));
            }
        }
        Ok(PathLp {
            root,
            leaves,
            rows,
            program: lp,
        })
    }

    /// Optimal value and leaf law; `None` when infeasible.
    pub fn solve(&self) -> Option<(S, BTreeMap<NodeId, S>)> {
        if self.leaves.is_empty() {
            return None;
        }
        match self.program.solve() {
            LpOutcome::Optimal(sol) => {
                let law = self.leaves.iter().copied().zip(sol.x).collect();
                Some((sol.value, law))
            }
            LpOutcome::Infeasible => None,
            LpOutcome::Unbounded => unreachable!("leaf laws are bounded"),
        }
    }

    /// Whether a leaf law over `self.leaves` satisfies every row.
    pub fn contains_law(&self, law: &BTreeMap<NodeId, S>) -> bool {
        let x: Vec<S> = self
            .leaves
            .iter()
            .map(|l| law.get(l).cloned().unwrap_or_else(S::zero))
            .collect();
        if law.keys().any(|l| !self.leaves.contains(l) && law[l].is_positive_tol()) {
            return false;
        }
        let tol = property_tol::<S>();
        if x.iter().any(|v| *v < -tol.clone()) {
            return false;
        }
        self.program.constraints.iter().all(|c| {
            let lhs = dot(&c.coeffs, &x);
            match c.relation {
                Relation::Eq => (lhs - c.rhs.clone()).abs() <= tol,
                Relation::Le => lhs <= c.rhs.clone() + tol.clone(),
                Relation::Ge => lhs >= c.rhs.clone() - tol.clone(),
            }
        })
    }
}

/// Vertices of the one-step polytope at `n`, as kernels.
pub fn enumerate_vertex_kernels<S: Scalar>(tree: &MarketTree, n: NodeId, fam: &FamilySpec) -> Result<Vec<Kernel<S>>> {
    if tree.is_leaf(n) {
        return Err(Error::LeafNode(n));
    }
    let poly = OneStepPolytope::<S>::new(tree, n, fam);
    Ok(poly
        .vertices()?
        .into_iter()
        .map(|probs| Kernel {
            node: n,
            children: tree.children(n).to_vec(),
            probs,
        })
        .collect())
}

/// Kernel used at nodes a factorized measure does not charge.
pub fn completion_kernel<S: Scalar>(tree: &MarketTree, n: NodeId, fam: &FamilySpec) -> Kernel<S> {
    let poly = OneStepPolytope::<S>::new(tree, n, fam);
    let probs = match poly.vertices() {
        Ok(v) => v.into_iter().next(),
        Err(_) => poly
            .maximize(&vec![S::zero(); poly.children.len()])
            .map(|s| s.probs),
    };
    match probs {
        Some(probs) => Kernel {
            node: n,
            children: tree.children(n).to_vec(),
            probs,
        },
        None => Kernel::dirac(tree, n, tree.children(n)[0]),
    }
}

/// Conditional kernels of a leaf law on the subtree of `root`.
pub fn factorize<S: Scalar>(
    tree: &MarketTree,
    root: NodeId,
    law: &BTreeMap<NodeId, S>,
    fam: &FamilySpec,
) -> TreeMeasure<S> {
    let nodes = tree.subtree(root);
    let mut mass: BTreeMap<NodeId, S> = BTreeMap::new();
    for &n in nodes.iter().rev() {
        let m = if tree.is_leaf(n) {
            law.get(&n).cloned().unwrap_or_else(S::zero)
        } else {
            tree.children(n)
                .iter()
                .fold(S::zero(), |acc, c| acc + mass[c].clone())
        };
        mass.insert(n, m);
    }
    let mut kernels = BTreeMap::new();
    for &n in &nodes {
        if tree.is_leaf(n) {
            continue;
        }
        let total = mass[&n].clone();
        let k = if total.is_positive_tol() {
            Kernel {
                node: n,
                children: tree.children(n).to_vec(),
                probs: tree
                    .children(n)
                    .iter()
                    .map(|c| {
                        let p = mass[c].clone() / total.clone();
                        if p < S::zero() {
                            S::zero()
                        } else {
                            p
                        }
                    })
                    .collect(),
            }
        } else {
            completion_kernel(tree, n, fam)
        };
        kernels.insert(n, k);
    }
    TreeMeasure { root, kernels }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalSup<S = f64> {
    pub value: ExtReal<S>,
    pub measure: Option<TreeMeasure<S>>,
    pub leaf_law: BTreeMap<NodeId, S>,
}

/// `sup E^P[claim]` over family measures on the subtree of `root`.
pub fn global_sup_lp_at<S: Scalar>(
    tree: &MarketTree,
    claim: &Claim,
    fam: &FamilySpec,
    root: NodeId,
) -> Result<GlobalSup<S>> {
    let lp = PathLp::<S>::new(tree, claim, fam, root)?;
    Ok(match lp.solve() {
        None => GlobalSup {
            value: ExtReal::NegInf,
            measure: None,
            leaf_law: BTreeMap::new(),
        },
        Some((value, law)) => GlobalSup {
            value: ExtReal::Finite(value),
            measure: Some(factorize(tree, root, &law, fam)),
            leaf_law: law,
        },
    })
}

pub fn global_sup_lp<S: Scalar>(tree: &MarketTree, claim: &Claim, fam: &FamilySpec) -> Result<GlobalSup<S>> {
    global_sup_lp_at(tree, claim, fam, tree.root())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssSupCheck<S = f64> {
    pub ok: bool,
    pub checked: usize,
    pub worst_gap: S,
    /// τ-nodes where the dynamic value and the re-optimized value disagree.
    pub failures: Vec<NodeId>,
}

/// At each τ-node charged by `p`, the dynamic value equals the LP supremum on
/// the subtree, and pasting the subtree optimizers onto `p` attains it.
pub fn ess_sup_check<S: Scalar>(
    tree: &MarketTree,
    claim: &Claim,
    fam: &FamilySpec,
    tau: &StoppingTime,
    p: &TreeMeasure<S>,
) -> Result<EssSupCheck<S>> {
    let membership = in_family(tree, p, fam, Some(claim));
    if !membership.ok {
        return Err(Error::NotInFamily(format!("{:?}", membership.violation)));
    }
    let check = validate_stopping_time_from(tree, p.root, tau);
    if !check.ok {
        return Err(Error::InvalidStoppingTime(format!("{:?}", check.violations)));
    }
    let y = backward_value::<S>(tree, claim, fam)?;
    let reach = p.reach(tree);
    let tol = property_tol::<S>();
    let mut worst_gap = S::zero();
    let mut failures = Vec::new();
    let mut nu = BTreeMap::new();
    let mut checked = 0;
    let record = |failures: &mut Vec<NodeId>, m: NodeId, a: &ExtReal<S>, b: &ExtReal<S>, worst: &mut S| match a.gap(b) {
        Some(g) => {
            if g > tol {
                failures.push(m);
            }
            *worst = S::max_of(worst.clone(), g);
        }
        None => failures.push(m),
    };
    for m in tau.iter() {
        if !reach.contains_key(&m) {
            continue;
        }
        checked += 1;
        if tree.is_leaf(m) {
            let v = claim.value_as::<S>(m);
            record(&mut failures, m, y.at(m), &v, &mut worst_gap);
            continue;
        }
        let shifted = shift_claim(tree, claim, m);
        let sup = global_sup_lp_at::<S>(tree, &shifted, fam, m)?;
        record(&mut failures, m, y.at(m), &sup.value, &mut worst_gap);
        nu.insert(m, sup.measure.unwrap_or(rcpd(tree, p, m)?));
    }
    let pasted = paste(tree, p, tau, &nu)?;
    if !in_family(tree, &pasted, fam, Some(claim)).ok {
        failures.push(p.root);
    }
    for (m, sub) in &nu {
        let attained = sub.expectation(tree, claim);
        let conditional = pasted.conditional_expectation(tree, claim, *m)?;
        record(&mut failures, *m, &attained, &conditional, &mut worst_gap);
        record(&mut failures, *m, y.at(*m), &conditional, &mut worst_gap);
    }
    failures.sort();
    failures.dedup();
    Ok(EssSupCheck {
        ok: failures.is_empty(),
        checked,
        worst_gap,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpwardCheck<S = f64> {
    pub ok: bool,
    pub measure: TreeMeasure<S>,
    pub worst_gap: S,
}

/// Bifurcates `p1` and `p2` at the level of `n` onto whichever is better and
/// checks that the result attains the pointwise maximum of the two.
pub fn upward_directed_check<S: Scalar>(
    tree: &MarketTree,
    claim: &Claim,
    fam: &FamilySpec,
    n: NodeId,
    p1: &TreeMeasure<S>,
    p2: &TreeMeasure<S>,
) -> Result<UpwardCheck<S>> {
    for p in [p1, p2] {
        let m = in_family(tree, p, fam, Some(claim));
        if !m.ok {
            return Err(Error::NotInFamily(format!("{:?}", m.violation)));
        }
    }
    let tau = StoppingTime::at_level(tree, tree.time(n));
    let cond = |p: &TreeMeasure<S>, m: NodeId| p.conditional_expectation(tree, claim, m);
    let mut better = std::collections::BTreeSet::new();
    for m in tau.iter() {
        if cond(p2, m)? <= cond(p1, m)? {
            better.insert(m);
        }
    }
    let bar = bifurcate(tree, p1, p2, &tau, &better)?;
    let reach = bar.reach(tree);
    let tol = if S::EXACT {
        S::zero()
    } else {
        S::from_f64(crate::scalar::tol::FEASIBILITY)
    };
    let mut ok = true;
    let mut worst_gap = S::zero();
    for m in tau.iter().filter(|m| reach.contains_key(m)) {
        let target = cond(p1, m)?.max(cond(p2, m)?);
        match cond(&bar, m)?.gap(&target) {
            Some(g) => {
                ok &= g <= tol;
                worst_gap = S::max_of(worst_gap, g);
            }
            None => ok = false,
        }
    }
    Ok(UpwardCheck {
        ok,
        measure: bar,
        worst_gap,
    })
}

/// Upper concave envelope of `points` evaluated at `x`, by a monotone-chain
/// upper hull; `None` when `x` lies outside their range.
pub fn concave_envelope_at(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // keep the highest value per abscissa
    let mut dedup: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        match dedup.last_mut() {
            Some(last) if last.0 == p.0 => last.1 = last.1.max(p.1),
            _ => dedup.push(p),
        }
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in dedup {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let first = hull.first()?;
    let last = hull.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    hull.windows(2)
        .find(|w| w[0].0 <= x && x <= w[1].0)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
        })
        .or_else(|| hull.iter().find(|p| p.0 == x).map(|p| p.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::Payoff;
    use crate::scalar::Rational;

    fn tree_with(offsets: Vec<f64>, depth: usize) -> MarketTree {
        MarketTree::from_offsets(1, depth, |_, _, _| {
            Ok(offsets.iter().map(|&o| vec![o]).collect())
        })
        .unwrap()
    }

    #[test]
    fn envelope_examples() {
        let pts = [(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)];
        assert_eq!(concave_envelope_at(&pts, 0.0), Some(1.0));
        let pts = [(-1.0, 0.0), (0.0, 0.0), (2.0, 2.0)];
        assert_eq!(concave_envelope_at(&pts, 0.0), Some(2.0 / 3.0));
        assert_eq!(concave_envelope_at(&[(1.0, 3.0)], 1.0), Some(3.0));
        assert_eq!(concave_envelope_at(&[(1.0, 3.0), (2.0, 0.0)], 0.0), None);
    }

    #[test]
    fn vertex_kernel_examples() {
        let r = |x: f64| Rational::from_f64(x);
        let bin = tree_with(vec![-1.0, 1.0], 1);
        let v = enumerate_vertex_kernels::<Rational>(&bin, bin.root(), &FamilySpec::martingale()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].probs, vec![r(0.5), r(0.5)]);

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let v = enumerate_vertex_kernels::<Rational>(&tri, tri.root(), &FamilySpec::martingale()).unwrap();
        let probs: Vec<_> = v.into_iter().map(|k| k.probs).collect();
        assert_eq!(probs, vec![vec![r(0.0), r(1.0), r(0.0)], vec![r(0.5), r(0.0), r(0.5)]]);

        let v = enumerate_vertex_kernels::<Rational>(&tri, tri.root(), &FamilySpec::all()).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|k| k.probs.iter().filter(|p| **p == r(1.0)).count() == 1));
    }

    #[test]
    fn global_sup_examples() {
        let bin = tree_with(vec![-1.0, 1.0], 1);
        let g = global_sup_lp::<f64>(&bin, &Payoff::Abs.claim(&bin), &FamilySpec::martingale()).unwrap();
        assert_eq!(g.value, ExtReal::Finite(1.0));

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let g = global_sup_lp::<Rational>(&tri, &Payoff::Abs.claim(&tri), &FamilySpec::martingale()).unwrap();
        assert_eq!(g.value, ExtReal::Finite(Rational::from_f64(1.0)));
        assert_eq!(g.measure.unwrap().kernels[&tri.root()].probs[1], Rational::from_f64(0.0));

        let claim = Claim::from_fn(&tri, |l| {
            if tri.spot(l)[0] == 0.0 {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(1.0)
            }
        });
        let fam = FamilySpec::martingale().restricted();
        let g = global_sup_lp::<f64>(&tri, &claim, &fam).unwrap();
        assert_eq!(g.value, ExtReal::Finite(1.0));
        assert!(!g.leaf_law.contains_key(&NodeId(2)));
        assert!(in_family(&tri, g.measure.as_ref().unwrap(), &fam, Some(&claim)).ok);

        let pos = tree_with(vec![1.0, 2.0], 2);
        let g = global_sup_lp::<f64>(&pos, &Payoff::Abs.claim(&pos), &FamilySpec::martingale()).unwrap();
        assert!(g.value.is_neg_inf());
    }

    #[test]
    fn factorization_reproduces_value() {
        let t = tree_with(vec![-2.0, 0.0, 1.0], 3);
        let claim = Payoff::Lookback(0.5).claim(&t);
        for fam in [FamilySpec::martingale(), FamilySpec::var_bounded(0.5, 1.5), FamilySpec::all()] {
            let g = global_sup_lp::<Rational>(&t, &claim, &fam).unwrap();
            let p = g.measure.unwrap();
            assert!(in_family(&t, &p, &fam, Some(&claim)).ok, "{fam:?}");
            assert_eq!(p.expectation(&t, &claim), g.value);
            let y = backward_value::<Rational>(&t, &claim, &fam).unwrap();
            assert_eq!(y.at(t.root()), &g.value);
        }
    }

    #[test]
    fn oracle_scale_limit() {
        let t = tree_with(vec![-1.0, 1.0], 11);
        assert!(matches!(
            PathLp::<f64>::new(&t, &Payoff::Abs.claim(&t), &FamilySpec::martingale(), t.root()),
            Err(Error::OracleScale(_))
        ));
    }

    #[test]
    fn ess_sup_trivial_stopping_times() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let claim = Payoff::Abs.claim(&t);
        let fam = FamilySpec::martingale();
        let p = global_sup_lp::<f64>(&t, &Payoff::Square.claim(&t), &fam)
            .unwrap()
            .measure
            .unwrap();
        for tau in [StoppingTime::root(&t), StoppingTime::leaves(&t), StoppingTime::at_level(&t, 1)] {
            let c = ess_sup_check(&t, &claim, &fam, &tau, &p).unwrap();
            assert!(c.ok, "{c:?}");
            assert!(c.checked > 0);
        }
    }

    #[test]
    fn upward_directed_examples() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let claim = Payoff::Call(0.5).claim(&t);
        let fam = FamilySpec::martingale();
        let opt = global_sup_lp::<f64>(&t, &claim, &fam).unwrap().measure.unwrap();
        let c = upward_directed_check(&t, &claim, &fam, NodeId(1), &opt, &opt).unwrap();
        assert!(c.ok);
        assert_eq!(c.measure, opt);

        // same root kernel, Dirac-at-self below level 1
        let mut lazy = opt.clone();
        for m in [NodeId(1), NodeId(2), NodeId(3)] {
            lazy.kernels.insert(m, Kernel::dirac(&t, m, t.children(m)[1]));
        }
        let c = upward_directed_check(&t, &claim, &fam, NodeId(1), &opt, &lazy).unwrap();
        assert!(c.ok);
        assert_eq!(c.measure, opt);
    }
}
