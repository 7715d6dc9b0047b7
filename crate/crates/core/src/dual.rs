//! Backward dynamic programming for the dynamic dual value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claim::Claim;
use crate::error::{Error, Result};
use crate::family::{FamilyClass, FamilySpec, OneStepPolytope};
use crate::measure::{in_family, property_tol, Kernel, TreeMeasure};
use crate::scalar::{convert_vec, dot, ExtReal, Scalar};
use crate::tree::{validate_stopping_time_from, MarketTree, NodeId, StoppingTime};

/// Node-indexed extended-real values; serializes as `{node: value | "-inf"}`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ValueField<S = f64>(pub BTreeMap<NodeId, ExtReal<S>>);

impl<S: Scalar> ValueField<S> {
    pub fn get(&self, n: NodeId) -> Option<&ExtReal<S>> {
        self.0.get(&n)
    }

    /// Value at `n`; panics on nodes outside the field.
    pub fn at(&self, n: NodeId) -> &ExtReal<S> {
        &self.0[&n]
    }

    pub fn finite_at(&self, n: NodeId) -> Option<&S> {
        self.0.get(&n).and_then(|v| v.finite())
    }

    pub fn to_f64(&self) -> ValueField<f64> {
        ValueField(
            self.0
                .iter()
                .map(|(n, v)| (*n, v.finite().map_or(ExtReal::NegInf, |x| ExtReal::Finite(x.to_f64()))))
                .collect(),
        )
    }
}

impl Serialize for ValueField<f64> {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ValueField<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        BTreeMap::deserialize(d).map(ValueField)
    }
}

/// Optimal one-step kernel with its superhedging certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepSolution<S = f64> {
    pub node: NodeId,
    pub value: ExtReal<S>,
    /// Absent iff `value` is `-inf`.
    pub kernel: Option<Kernel<S>>,
    pub hedge: Vec<S>,
    /// Position in the one-step squared increment; zero outside VAR_BOUNDED.
    pub variance_position: S,
    /// `value + increment - V_c` per child; `None` at `-inf` children.
    pub slack: Vec<Option<S>>,
}

/// Cost of a one-step position `g` in `|dB|^2` when its price lies in `[lo, hi]`.
pub fn variance_cost<S: Scalar>(g: &S, bounds: Option<&(S, S)>) -> S {
    match bounds {
        None => S::zero(),
        Some((lo, hi)) => {
            if *g > S::zero() {
                g.clone() * hi.clone()
            } else {
                g.clone() * lo.clone()
            }
        }
    }
}

fn bounds_of<S: Scalar>(fam: &FamilySpec) -> Option<(S, S)> {
    fam.bounds().map(|(lo, hi)| (S::from_f64(lo), S::from_f64(hi)))
}

/// Hedging gain along one edge: `h·dx + g|dx|^2 - cost(g)`.
pub fn step_gain<S: Scalar>(hedge: &[S], g: &S, bounds: Option<&(S, S)>, dx: &[S]) -> S {
    let mut gain = dot(hedge, dx);
    if bounds.is_some() {
        gain = gain + g.clone() * dot(dx, dx) - variance_cost(g, bounds);
    }
    gain
}

/// Candidate supports of the d = 1 martingale polytope, in tie-break order.
fn two_point_candidates<S: Scalar>(dx: &[S], allowed: &[bool]) -> Vec<(Vec<usize>, Vec<S>)> {
    let idx: Vec<usize> = (0..dx.len()).filter(|&i| allowed[i]).collect();
    let mut out = Vec::new();
    for &i in &idx {
        if dx[i].is_zero_tol() {
            out.push((vec![i], vec![S::one()]));
        }
    }
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let (xi, xj) = (dx[i].clone(), dx[j].clone());
            let opposite = (xi.is_positive_tol() && (-xj.clone()).is_positive_tol())
                || ((-xi.clone()).is_positive_tol() && xj.is_positive_tol());
            if !opposite {
                continue;
            }
            // p_i x_i + p_j x_j = 0
            let pi = xj.clone() / (xj.clone() - xi.clone());
            let pj = S::one() - pi.clone();
            out.push((vec![i, j], vec![pi, pj]));
        }
    }
    out
}

fn supergradient_interval<S: Scalar>(value: &S, dx: &[S], v: &[ExtReal<S>]) -> (Option<S>, Option<S>) {
    let mut lo: Option<S> = None;
    let mut hi: Option<S> = None;
    for (x, vc) in dx.iter().zip(v) {
        let Some(vc) = vc.finite() else { continue };
        if x.is_zero_tol() {
            continue;
        }
        let bound = (vc.clone() - value.clone()) / x.clone();
        if x.is_positive_tol() {
            lo = Some(match lo {
                Some(l) => S::max_of(l, bound),
                None => bound,
            });
        } else if (-x.clone()).is_positive_tol() {
            hi = Some(match hi {
                Some(h) => S::min_of(h, bound),
                None => bound,
            });
        }
    }
    (lo, hi)
}

/// Midpoint of the supergradient interval, or its finite endpoint.
fn pick_hedge<S: Scalar>(interval: (Option<S>, Option<S>)) -> S {
    match interval {
        (Some(lo), Some(hi)) => (lo + hi) / S::from_usize(2),
        (Some(lo), None) => lo,
        (None, Some(hi)) => hi,
        (None, None) => S::zero(),
    }
}

fn slacks<S: Scalar>(
    value: &S,
    hedge: &[S],
    g: &S,
    bounds: Option<&(S, S)>,
    incs: &[Vec<S>],
    v: &[ExtReal<S>],
) -> Vec<Option<S>> {
    incs.iter()
        .zip(v)
        .map(|(dx, vc)| {
            vc.finite()
                .map(|vc| value.clone() + step_gain(hedge, g, bounds, dx) - vc.clone())
        })
        .collect()
}

/// `sup_p sum_c p_c V_c` over the family's kernels at `n`, never charging `-inf` children.
pub fn one_step_sup<S: Scalar>(
    tree: &MarketTree,
    n: NodeId,
    values: &BTreeMap<NodeId, ExtReal<S>>,
    fam: &FamilySpec,
) -> Result<OneStepSolution<S>> {
    if tree.is_leaf(n) {
        return Err(Error::LeafNode(n));
    }
    let children = tree.children(n);
    let mut v = Vec::with_capacity(children.len());
    for &c in children {
        match values.get(&c) {
            Some(x) => v.push(x.clone()),
            None => return Err(Error::MissingChildValue { node: n, child: c }),
        }
    }
    Ok(solve_step(tree, n, &v, fam))
}

pub(crate) fn solve_step<S: Scalar>(tree: &MarketTree, n: NodeId, v: &[ExtReal<S>], fam: &FamilySpec) -> OneStepSolution<S> {
    let children = tree.children(n);
    let d = tree.dim();
    let incs: Vec<Vec<S>> = children
        .iter()
        .map(|&c| convert_vec(&tree.increment(n, c)))
        .collect();
    let allowed: Vec<bool> = v.iter().map(|x| x.is_finite()).collect();
    let bounds = bounds_of::<S>(fam);
    let infeasible = || OneStepSolution {
        node: n,
        value: ExtReal::NegInf,
        kernel: None,
        hedge: vec![S::zero(); d],
        variance_position: S::zero(),
        slack: vec![None; children.len()],
    };
    let finite = |i: usize| v[i].finite().cloned().unwrap_or_else(S::zero);
    let kernel_of = |probs: Vec<S>| Kernel {
        node: n,
        children: children.to_vec(),
        probs,
    };

    match fam.class {
        FamilyClass::All => {
            let mut best: Option<usize> = None;
            for i in (0..v.len()).filter(|&i| allowed[i]) {
                if best.is_none_or(|b| finite(i) > finite(b)) {
                    best = Some(i);
                }
            }
            let Some(b) = best else { return infeasible() };
            let mut probs = vec![S::zero(); v.len()];
            probs[b] = S::one();
            let value = finite(b);
            let hedge = vec![S::zero(); d];
            OneStepSolution {
                node: n,
                slack: slacks(&value, &hedge, &S::zero(), None, &incs, v),
                value: ExtReal::Finite(value),
                kernel: Some(kernel_of(probs)),
                hedge,
                variance_position: S::zero(),
            }
        }
        FamilyClass::Martingale if d == 1 => {
            let dx: Vec<S> = incs.iter().map(|x| x[0].clone()).collect();
            let cands = two_point_candidates(&dx, &allowed);
            let eval = |(support, probs): &(Vec<usize>, Vec<S>)| {
                support
                    .iter()
                    .zip(probs)
                    .fold(S::zero(), |acc, (&i, p)| acc + p.clone() * finite(i))
            };
            let scores: Vec<S> = cands.iter().map(eval).collect();
            let Some(best) = scores.iter().cloned().reduce(S::max_of) else {
                return infeasible();
            };
            let tol = if S::EXACT { S::zero() } else { S::opt_tol() };
            let pick = scores
                .iter()
                .position(|s| s.clone() >= best.clone() - tol.clone())
                .expect("the maximum is attained");
            let (support, p) = &cands[pick];
            let mut probs = vec![S::zero(); v.len()];
            for (&i, q) in support.iter().zip(p) {
                probs[i] = q.clone();
            }
            let value = scores[pick].clone();
            let hedge = vec![pick_hedge(supergradient_interval(&value, &dx, v))];
            OneStepSolution {
                node: n,
                slack: slacks(&value, &hedge, &S::zero(), None, &incs, v),
                value: ExtReal::Finite(value),
                kernel: Some(kernel_of(probs)),
                hedge,
                variance_position: S::zero(),
            }
        }
        _ => {
            let poly = OneStepPolytope::<S>::new(tree, n, fam).with_allowed(allowed);
            let objective: Vec<S> = (0..v.len()).map(finite).collect();
            let Some(sol) = poly.maximize(&objective) else {
                return infeasible();
            };
            let g = sol.variance_position.clone();
            OneStepSolution {
                node: n,
                slack: slacks(&sol.value, &sol.hedge, &g, bounds.as_ref(), &incs, v),
                value: ExtReal::Finite(sol.value),
                kernel: Some(kernel_of(sol.probs)),
                hedge: sol.hedge,
                variance_position: g,
            }
        }
    }
}

/// Values and one-step certificates of the backward recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution<S = f64> {
    pub root: NodeId,
    pub values: ValueField<S>,
    /// One entry per non-terminal node of the recursion.
    pub steps: BTreeMap<NodeId, OneStepSolution<S>>,
}

impl<S: Scalar> DualSolution<S> {
    pub fn root_value(&self) -> &ExtReal<S> {
        self.values.at(self.root)
    }

    /// The optimal kernels, one per node with finite value.
    pub fn kernels(&self) -> BTreeMap<NodeId, Kernel<S>> {
        self.steps
            .iter()
            .filter_map(|(n, s)| s.kernel.clone().map(|k| (*n, k)))
            .collect()
    }
}

/// Backward recursion on the subtree of `root`, stopping wherever `terminal`
/// supplies a value. Leaves must be covered by `terminal`.
pub fn backward_from<S: Scalar>(
    tree: &MarketTree,
    root: NodeId,
    fam: &FamilySpec,
    mut terminal: impl FnMut(NodeId) -> Option<ExtReal<S>>,
) -> Result<DualSolution<S>> {
    fam.validate(tree.dim())?;
    let mut values = BTreeMap::new();
    let mut steps = BTreeMap::new();
    // post-order via reversed pre-order: children are finished before parents
    let mut order = Vec::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        order.push(n);
        if let Some(t) = terminal(n) {
            values.insert(n, t);
            continue;
        }
        if tree.is_leaf(n) {
            return Err(Error::InvalidClaim(format!("no terminal value at leaf {n}")));
        }
        stack.extend(tree.children(n).iter().copied());
    }
    for &n in order.iter().rev() {
        if values.contains_key(&n) {
            continue;
        }
        let sol = one_step_sup(tree, n, &values, fam)?;
        values.insert(n, sol.value.clone());
        steps.insert(n, sol);
    }
    Ok(DualSolution {
        root,
        values: ValueField(values),
        steps,
    })
}

pub fn backward_solve<S: Scalar>(tree: &MarketTree, claim: &Claim, fam: &FamilySpec) -> Result<DualSolution<S>> {
    claim.check_covers(tree)?;
    backward_from(tree, tree.root(), fam, |n| {
        tree.is_leaf(n).then(|| claim.value_as::<S>(n))
    })
}

/// `Y(n) = sup_P E^P[claim | n]` at every node.
pub fn backward_value<S: Scalar>(tree: &MarketTree, claim: &Claim, fam: &FamilySpec) -> Result<ValueField<S>> {
    backward_solve(tree, claim, fam).map(|s| s.values)
}

/// `sum_c p_c Y(c)` for a kernel, `-inf` when it charges a `-inf` child.
pub fn kernel_value<S: Scalar>(kernel: &Kernel<S>, y: &BTreeMap<NodeId, ExtReal<S>>) -> ExtReal<S> {
    let mut acc = S::zero();
    for (c, p) in kernel.children.iter().zip(&kernel.probs) {
        if !p.is_positive_tol() {
            continue;
        }
        match y.get(c) {
            Some(ExtReal::Finite(v)) => acc = acc + p.clone() * v.clone(),
            _ => return ExtReal::NegInf,
        }
    }
    ExtReal::Finite(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupermartingaleCheck<S = f64> {
    pub ok: bool,
    /// Node with the largest `E[Y(child)] - Y(n)` and that excess.
    pub worst: Option<(NodeId, S)>,
    pub checked: usize,
}

/// `sum_c p_c Y(c) <= Y(n) + tol` at every node charged by `p`.
pub fn check_supermartingale<S: Scalar>(
    tree: &MarketTree,
    y: &ValueField<S>,
    p: &TreeMeasure<S>,
    fam: &FamilySpec,
    claim: &Claim,
    tol: &S,
) -> Result<SupermartingaleCheck<S>> {
    let membership = in_family(tree, p, fam, Some(claim));
    if !membership.ok {
        return Err(Error::NotInFamily(format!("{:?}", membership.violation)));
    }
    let mut worst: Option<(NodeId, S)> = None;
    let mut ok = true;
    let mut checked = 0;
    for n in p.reach(tree).keys() {
        let Some(k) = p.kernel(*n) else { continue };
        checked += 1;
        let lhs = kernel_value(k, &y.0);
        let Some(yn) = y.finite_at(*n) else {
            // Y(n) = -inf forces every kernel to charge -inf
            if lhs.is_finite() {
                ok = false;
            }
            continue;
        };
        if let ExtReal::Finite(lhs) = lhs {
            let excess = lhs - yn.clone();
            if excess > tol.clone() {
                ok = false;
            }
            if worst.as_ref().is_none_or(|(_, w)| excess > *w) {
                worst = Some((*n, excess));
            }
        }
    }
    Ok(SupermartingaleCheck { ok, worst, checked })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TowerCheck<S = f64> {
    pub ok: bool,
    pub worst_gap: S,
    /// σ-nodes where exactly one side is `-inf`.
    pub mismatched: Vec<NodeId>,
}

/// Re-solves from each σ-node with terminal data `Y` on τ and compares with `Y`.
pub fn check_tower<S: Scalar>(
    tree: &MarketTree,
    claim: &Claim,
    fam: &FamilySpec,
    sigma: &StoppingTime,
    tau: &StoppingTime,
) -> Result<TowerCheck<S>> {
    for (name, st) in [("sigma", sigma), ("tau", tau)] {
        let check = validate_stopping_time_from(tree, tree.root(), st);
        if !check.ok {
            return Err(Error::InvalidStoppingTime(format!("{name}: {:?}", check.violations)));
        }
    }
    if !sigma.precedes(tree, tau) {
        return Err(Error::InvalidStoppingTime("sigma does not precede tau".into()));
    }
    let y = backward_value::<S>(tree, claim, fam)?;
    let tol = property_tol::<S>();
    let mut worst_gap = S::zero();
    let mut mismatched = Vec::new();
    for m in sigma.iter() {
        let sub = backward_from(tree, m, fam, |n| tau.contains(n).then(|| y.at(n).clone()))?;
        match sub.root_value().gap(y.at(m)) {
            Some(g) => worst_gap = S::max_of(worst_gap, g),
            None => mismatched.push(m),
        }
    }
    Ok(TowerCheck {
        ok: mismatched.is_empty() && worst_gap <= tol,
        worst_gap,
        mismatched,
    })
}

/// Optimal one-step kernels at every node with finite value.
///
/// On a finite tree the supremum is attained, so the selection is exact for
/// every `eps >= 0`.
pub fn eps_optimal_selection<S: Scalar>(
    tree: &MarketTree,
    y: &ValueField<S>,
    fam: &FamilySpec,
    eps: &S,
) -> Result<BTreeMap<NodeId, Kernel<S>>> {
    if *eps < S::zero() {
        return Err(Error::Numerical("eps must be nonnegative".into()));
    }
    let mut out = BTreeMap::new();
    for n in tree.non_leaves() {
        if !y.finite_at(n).is_some() {
            continue;
        }
        if tree.children(n).iter().any(|c| y.get(*c).is_none()) {
            continue;
        }
        if let Some(k) = one_step_sup(tree, n, &y.0, fam)?.kernel {
            out.insert(n, k);
        }
    }
    Ok(out)
}

/// `sum_c p_c Y(c) >= min(Y(n) - eps, 1/eps)`.
pub fn is_eps_optimal<S: Scalar>(kernel: &Kernel<S>, y: &ValueField<S>, eps: &S) -> bool {
    let Some(yn) = y.finite_at(kernel.node) else {
        return false;
    };
    let mut target = yn.clone() - eps.clone();
    if *eps > S::zero() {
        target = S::min_of(target, S::one() / eps.clone());
    }
    match kernel_value(kernel, &y.0) {
        ExtReal::Finite(v) => v >= target - property_tol::<S>(),
        ExtReal::NegInf => false,
    }
}

/// Nodes where `Y` is `-inf` although the node is not a leaf.
pub fn infeasible_nodes<S: Scalar>(tree: &MarketTree, y: &ValueField<S>) -> BTreeSet<NodeId> {
    y.0.iter()
        .filter(|(n, v)| v.is_neg_inf() && !tree.is_leaf(**n))
        .map(|(n, _)| *n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::Payoff;
    use crate::scalar::Rational;
    use crate::tree::{Generator, TreeSpec};

    fn tree_with(offsets: Vec<f64>, depth: usize) -> MarketTree {
        MarketTree::from_offsets(1, depth, |_, _, _| {
            Ok(offsets.iter().map(|&o| vec![o]).collect())
        })
        .unwrap()
    }

    fn values(tree: &MarketTree, v: &[ExtReal]) -> BTreeMap<NodeId, ExtReal> {
        tree.children(tree.root()).iter().copied().zip(v.iter().cloned()).collect()
    }

    fn f(x: f64) -> ExtReal {
        ExtReal::Finite(x)
    }

    #[test]
    fn one_step_examples() {
        let bin = tree_with(vec![-1.0, 1.0], 1);
        let s = one_step_sup(&bin, bin.root(), &values(&bin, &[f(1.0), f(1.0)]), &FamilySpec::martingale()).unwrap();
        assert_eq!(s.value, f(1.0));
        assert_eq!(s.kernel.unwrap().probs, vec![0.5, 0.5]);
        assert_eq!(s.hedge, vec![0.0]);

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let s = one_step_sup(&tri, tri.root(), &values(&tri, &[f(1.0), f(0.0), f(1.0)]), &FamilySpec::martingale()).unwrap();
        assert_eq!(s.value, f(1.0));
        assert_eq!(s.kernel.unwrap().probs, vec![0.5, 0.0, 0.5]);

        let pos = tree_with(vec![1.0, 2.0], 1);
        let s = one_step_sup(&pos, pos.root(), &values(&pos, &[f(3.0), f(-1.0)]), &FamilySpec::martingale()).unwrap();
        assert!(s.value.is_neg_inf());
        assert!(s.kernel.is_none());

        let s = one_step_sup(
            &tri,
            tri.root(),
            &values(&tri, &[f(1.0), ExtReal::NegInf, f(1.0)]),
            &FamilySpec::martingale(),
        )
        .unwrap();
        assert_eq!(s.value, f(1.0));
        assert_eq!(s.kernel.unwrap().probs[1], 0.0);
    }

    #[test]
    fn variance_bound_binds() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let v: BTreeMap<NodeId, ExtReal<Rational>> = tri
            .children(tri.root())
            .iter()
            .zip([1.0, 0.0, 1.0])
            .map(|(c, x)| (*c, ExtReal::Finite(Rational::from_f64(x))))
            .collect();
        let s = one_step_sup(&tri, tri.root(), &v, &FamilySpec::var_bounded(0.2, 0.6)).unwrap();
        let r = |x: f64| Rational::from_f64(x);
        assert_eq!(s.value, ExtReal::Finite(r(0.6)));
        assert_eq!(s.kernel.unwrap().probs, vec![r(0.3), r(0.4), r(0.3)]);
        // certificate: 0.6 + g(x^2) - 0.6 g >= V with g = 1 binds everywhere
        assert_eq!(s.variance_position, r(1.0));
        assert!(s.slack.iter().all(|x| x.as_ref().unwrap() >= &r(0.0)));
    }

    #[test]
    fn all_family_picks_dirac() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let s = one_step_sup(&tri, tri.root(), &values(&tri, &[f(2.0), f(5.0), f(5.0)]), &FamilySpec::all()).unwrap();
        assert_eq!(s.value, f(5.0));
        assert_eq!(s.kernel.unwrap().probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_child_value() {
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let mut v = values(&tri, &[f(1.0), f(0.0), f(1.0)]);
        v.remove(&NodeId(2));
        assert!(matches!(
            one_step_sup(&tri, tri.root(), &v, &FamilySpec::martingale()),
            Err(Error::MissingChildValue { .. })
        ));
    }

    #[test]
    fn supergradient_is_midpoint_at_kinks() {
        // |x| on {-1, 0, 1}: value 1 at 0... the envelope is flat, h = 0
        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let s = one_step_sup(&tri, tri.root(), &values(&tri, &[f(1.0), f(0.0), f(1.0)]), &FamilySpec::martingale()).unwrap();
        assert_eq!(s.hedge, vec![0.0]);
        // (x)^+ on {-1, 0, 1}: envelope (x+1)/2, unique slope 1/2
        let s = one_step_sup(&tri, tri.root(), &values(&tri, &[f(0.0), f(0.0), f(1.0)]), &FamilySpec::martingale()).unwrap();
        assert_eq!(s.value, f(0.5));
        assert_eq!(s.hedge, vec![0.5]);
        // V = (0, 1, 0): value 1 at the zero child, slopes in [-1, 1]
        let s = one_step_sup(&tri, tri.root(), &values(&tri, &[f(0.0), f(1.0), f(0.0)]), &FamilySpec::martingale()).unwrap();
        assert_eq!(s.kernel.unwrap().probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.hedge, vec![0.0]);
    }

    #[test]
    fn backward_examples() {
        let bin = tree_with(vec![-1.0, 1.0], 1);
        let y = backward_value::<f64>(&bin, &Payoff::Abs.claim(&bin), &FamilySpec::martingale()).unwrap();
        assert_eq!(y.at(bin.root()), &f(1.0));

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let y = backward_value::<f64>(&tri, &Payoff::Abs.claim(&tri), &FamilySpec::martingale()).unwrap();
        assert_eq!(y.at(tri.root()), &f(1.0));

        let deep = tree_with(vec![-1.0, 0.0, 2.0], 3);
        for fam in [FamilySpec::all(), FamilySpec::martingale(), FamilySpec::var_bounded(0.5, 1.5)] {
            let y = backward_value::<f64>(&deep, &Claim::constant(&deep, 2.5), &fam).unwrap();
            assert!(y.0.values().all(|v| v.gap(&f(2.5)).unwrap() < 1e-12), "{fam:?}");
        }
    }

    #[test]
    fn rational_and_float_agree() {
        let t = MarketTree::build(&TreeSpec {
            dim: 1,
            depth: 3,
            generator: Generator::Trinomial { u: 1.0 },
        })
        .unwrap();
        let claim = Payoff::Lookback(0.5).claim(&t);
        for fam in [FamilySpec::martingale(), FamilySpec::var_bounded(0.2, 0.6)] {
            let a = backward_value::<f64>(&t, &claim, &fam).unwrap();
            let b = backward_value::<Rational>(&t, &claim, &fam).unwrap();
            for (n, v) in &a.0 {
                assert!((v.to_f64() - b.at(*n).to_f64()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tower_identities() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 3);
        let claim = Payoff::Call(0.0).claim(&t);
        let fam = FamilySpec::martingale();
        let root = StoppingTime::root(&t);
        let leaves = StoppingTime::leaves(&t);
        assert!(check_tower::<f64>(&t, &claim, &fam, &root, &leaves).unwrap().ok);
        let l1 = StoppingTime::at_level(&t, 1);
        assert!(check_tower::<f64>(&t, &claim, &fam, &l1, &l1).unwrap().ok);
        assert!(check_tower::<f64>(&t, &claim, &fam, &leaves, &root).is_err());
    }

    #[test]
    fn optimizer_is_a_martingale_of_y() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 3);
        let claim = Payoff::Abs.claim(&t);
        let fam = FamilySpec::martingale();
        let sol = backward_solve::<f64>(&t, &claim, &fam).unwrap();
        let p = TreeMeasure::from_kernels(&t, t.root(), sol.kernels().into_values()).unwrap();
        let check = check_supermartingale(&t, &sol.values, &p, &fam, &claim, &1e-9).unwrap();
        assert!(check.ok);
        assert!(check.worst.unwrap().1.abs() < 1e-12);
    }

    #[test]
    fn eps_selection() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let claim = Payoff::Abs.claim(&t);
        let fam = FamilySpec::martingale();
        let sol = backward_solve::<f64>(&t, &claim, &fam).unwrap();
        let sel = eps_optimal_selection(&t, &sol.values, &fam, &0.0).unwrap();
        assert_eq!(sel, sol.kernels());
        // mixing in the Dirac at 0 loses 0.4 at the root
        let mut k = sel[&t.root()].clone();
        k.probs = vec![0.3, 0.4, 0.3];
        assert!(is_eps_optimal(&k, &sol.values, &0.5));
        assert!(!is_eps_optimal(&k, &sol.values, &0.1));

        let pos = tree_with(vec![1.0, 2.0], 1);
        let y = backward_value::<f64>(&pos, &Payoff::Abs.claim(&pos), &fam).unwrap();
        assert!(eps_optimal_selection(&pos, &y, &fam, &0.0).unwrap().is_empty());
        assert_eq!(infeasible_nodes(&pos, &y), [pos.root()].into());
    }

    #[test]
    fn value_field_json() {
        let pos = tree_with(vec![1.0, 2.0], 1);
        let y = backward_value::<f64>(&pos, &Payoff::Abs.claim(&pos), &FamilySpec::martingale()).unwrap();
        let s = serde_json::to_string(&y).unwrap();
        assert_eq!(s, r#"{"0":"-inf","1":1.0,"2":2.0}"#);
        let back: ValueField = serde_json::from_str(&s).unwrap();
        assert_eq!(back, y);
    }
}
