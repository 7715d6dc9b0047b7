//! Kernels, tree measures and measure surgery.
//!
//! A [`TreeMeasure`] stores one kernel per non-leaf node of the subtree below
//! its `root`; restricting it to a deeper root is the regular conditional
//! probability given the path up to that node. Membership in a family is
//! decided at charged nodes only: kernels at nodes the measure never reaches
//! carry no mass and are only required to be probability vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claim::Claim;
use crate::error::{Error, Result};
use crate::family::{FamilySpec, OneStepPolytope};
use crate::scalar::{tol, ExtReal, Scalar};
use crate::tree::{validate_stopping_time_from, MarketTree, NodeId, StoppingTime};

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<S = f64> {
    pub node: NodeId,
    pub children: Vec<NodeId>,
    pub probs: Vec<S>,
}

impl<S: Scalar> Kernel<S> {
    pub fn new(tree: &MarketTree, node: NodeId, probs: Vec<S>) -> Result<Self> {
        let k = Kernel {
            node,
            children: tree.children(node).to_vec(),
            probs,
        };
        k.validate(tree)?;
        Ok(k)
    }

    pub fn dirac(tree: &MarketTree, node: NodeId, child: NodeId) -> Self {
        let children = tree.children(node).to_vec();
        let probs = children
            .iter()
            .map(|&c| if c == child { S::one() } else { S::zero() })
            .collect();
        Kernel {
            node,
            children,
            probs,
        }
    }

    pub fn prob(&self, child: NodeId) -> Option<&S> {
        self.children
            .iter()
            .position(|&c| c == child)
            .map(|i| &self.probs[i])
    }

    pub fn validate(&self, tree: &MarketTree) -> Result<()> {
        if !tree.contains(self.node) || tree.children(self.node) != self.children.as_slice() {
            return Err(Error::InvalidMeasure(format!(
                "kernel at node {} does not match its children",
                self.node
            )));
        }
        if self.probs.len() != self.children.len() {
            return Err(Error::InvalidMeasure(format!(
                "kernel at node {} has {} probabilities for {} children",
                self.node,
                self.probs.len(),
                self.children.len()
            )));
        }
        if self.probs.iter().any(|p| *p < -S::feas_tol()) {
            return Err(Error::InvalidMeasure(format!(
                "negative probability at node {}",
                self.node
            )));
        }
        let total = self.probs.iter().cloned().fold(S::zero(), |a, b| a + b);
        if !(total.clone() - S::one()).is_zero_tol() {
            return Err(Error::InvalidMeasure(format!(
                "kernel at node {} sums to {}",
                self.node,
                total.to_f64()
            )));
        }
        Ok(())
    }

    pub fn convert<T: Scalar>(&self) -> Kernel<T> {
        Kernel {
            node: self.node,
            children: self.children.clone(),
            probs: self.probs.iter().map(|p| T::from_f64(p.to_f64())).collect(),
        }
    }

    /// Children carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| p.is_positive_tol())
            .map(|(c, _)| *c)
    }
}

/// `sum_c p_c x_c`.
pub fn kernel_mean<S: Scalar>(tree: &MarketTree, kernel: &Kernel<S>) -> Vec<S> {
    let mut mean = vec![S::zero(); tree.dim()];
    for (c, p) in kernel.children.iter().zip(&kernel.probs) {
        for (m, x) in mean.iter_mut().zip(tree.spot(*c)) {
            *m = m.clone() + p.clone() * S::from_f64(*x);
        }
    }
    mean
}

pub fn is_martingale_kernel<S: Scalar>(tree: &MarketTree, kernel: &Kernel<S>, tol: &S) -> bool {
    kernel_mean(tree, kernel)
        .iter()
        .zip(tree.spot(kernel.node))
        .all(|(m, x)| (m.clone() - S::from_f64(*x)).abs() <= *tol)
}

/// `sum_c p_c (x_c - x_n)(x_c - x_n)^T` as a dense `d x d` matrix.
pub fn kernel_variance<S: Scalar>(tree: &MarketTree, kernel: &Kernel<S>) -> Vec<Vec<S>> {
    let d = tree.dim();
    let mut cov = vec![vec![S::zero(); d]; d];
    for (c, p) in kernel.children.iter().zip(&kernel.probs) {
        let inc: Vec<S> = tree
            .increment(kernel.node, *c)
            .into_iter()
            .map(S::from_f64)
            .collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] = cov[i][j].clone() + p.clone() * inc[i].clone() * inc[j].clone();
            }
        }
    }
    cov
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeMeasure<S = f64> {
    pub root: NodeId,
    pub kernels: BTreeMap<NodeId, Kernel<S>>,
}

impl<S: Scalar> TreeMeasure<S> {
    pub fn from_kernels(
        tree: &MarketTree,
        root: NodeId,
        kernels: impl IntoIterator<Item = Kernel<S>>,
    ) -> Result<Self> {
        let m = TreeMeasure {
            root,
            kernels: kernels.into_iter().map(|k| (k.node, k)).collect(),
        };
        m.validate(tree)?;
        Ok(m)
    }

    pub fn kernel(&self, n: NodeId) -> Option<&Kernel<S>> {
        self.kernels.get(&n)
    }

    /// Every non-leaf node below the root carries a valid kernel, and nothing else does.
    pub fn validate(&self, tree: &MarketTree) -> Result<()> {
        if !tree.contains(self.root) {
            return Err(Error::InvalidMeasure(format!("unknown root {}", self.root)));
        }
        let nodes = tree.subtree(self.root);
        let inner: BTreeSet<NodeId> = nodes.iter().copied().filter(|&n| !tree.is_leaf(n)).collect();
        for n in &inner {
            match self.kernels.get(n) {
                None => {
                    return Err(Error::InvalidMeasure(format!("no kernel at node {n}")));
                }
                Some(k) => k.validate(tree)?,
            }
        }
        if let Some(extra) = self.kernels.keys().find(|k| !inner.contains(k)) {
            return Err(Error::InvalidMeasure(format!(
                "kernel at node {extra} outside the measure's subtree"
            )));
        }
        Ok(())
    }

    /// Probability of reaching each charged node (positive mass only).
    pub fn reach(&self, tree: &MarketTree) -> BTreeMap<NodeId, S> {
        let mut out = BTreeMap::new();
        out.insert(self.root, S::one());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            let Some(k) = self.kernels.get(&n) else {
                continue;
            };
            let pn = out[&n].clone();
            for (c, p) in k.children.iter().zip(&k.probs) {
                if p.is_positive_tol() {
                    out.insert(*c, pn.clone() * p.clone());
                    stack.push(*c);
                }
            }
        }
        let _ = tree;
        out
    }

    pub fn charges(&self, tree: &MarketTree, n: NodeId) -> bool {
        self.reach(tree).contains_key(&n)
    }

    /// Induced probabilities of the charged leaves.
    pub fn leaf_law(&self, tree: &MarketTree) -> BTreeMap<NodeId, S> {
        self.reach(tree)
            .into_iter()
            .filter(|(n, _)| tree.is_leaf(*n))
            .collect()
    }

    /// `E[claim]`; `-inf` as soon as a charged leaf carries `-inf`.
    pub fn expectation(&self, tree: &MarketTree, claim: &Claim) -> ExtReal<S> {
        let mut acc = S::zero();
        for (leaf, q) in self.leaf_law(tree) {
            match claim.value_as::<S>(leaf) {
                ExtReal::NegInf => return ExtReal::NegInf,
                ExtReal::Finite(v) => acc = acc + q * v,
            }
        }
        ExtReal::Finite(acc)
    }

    /// `E[f(leaf)]` for a finite leaf functional.
    pub fn expect_with(&self, tree: &MarketTree, mut f: impl FnMut(NodeId) -> S) -> S {
        self.leaf_law(tree)
            .into_iter()
            .fold(S::zero(), |acc, (l, q)| acc + q * f(l))
    }

    /// `E[claim | reach n]` computed from the conditional law at `n`.
    pub fn conditional_expectation(&self, tree: &MarketTree, claim: &Claim, n: NodeId) -> Result<ExtReal<S>> {
        if tree.is_leaf(n) {
            return Ok(claim.value_as(n));
        }
        Ok(rcpd(tree, self, n)?.expectation(tree, claim))
    }

    pub fn convert<T: Scalar>(&self) -> TreeMeasure<T> {
        TreeMeasure {
            root: self.root,
            kernels: self.kernels.iter().map(|(n, k)| (*n, k.convert())).collect(),
        }
    }
}

/// Wire form: `{"root": id, "kernels": {node: {child: prob}}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureDoc {
    #[serde(default)]
    pub root: NodeId,
    pub kernels: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
}

impl TreeMeasure<f64> {
    pub fn to_doc(&self) -> MeasureDoc {
        MeasureDoc {
            root: self.root,
            kernels: self
                .kernels
                .iter()
                .map(|(n, k)| (*n, k.children.iter().copied().zip(k.probs.iter().copied()).collect()))
                .collect(),
        }
    }

    pub fn from_doc(tree: &MarketTree, doc: &MeasureDoc) -> Result<Self> {
        let mut kernels = Vec::with_capacity(doc.kernels.len());
        for (n, probs) in &doc.kernels {
            if !tree.contains(*n) {
                return Err(Error::InvalidMeasure(format!("unknown node {n}")));
            }
            let children = tree.children(*n).to_vec();
            if probs.keys().any(|c| !children.contains(c)) {
                return Err(Error::InvalidMeasure(format!("kernel at {n} charges a non-child")));
            }
            let p = children.iter().map(|c| probs.get(c).copied().unwrap_or(0.0)).collect();
            kernels.push(Kernel {
                node: *n,
                children,
                probs: p,
            });
        }
        TreeMeasure::from_kernels(tree, doc.root, kernels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipViolation {
    pub node: NodeId,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub ok: bool,
    pub violation: Option<MembershipViolation>,
}

impl Membership {
    fn pass() -> Self {
        Membership {
            ok: true,
            violation: None,
        }
    }

    fn fail(node: NodeId, reason: String) -> Self {
        Membership {
            ok: false,
            violation: Some(MembershipViolation { node, reason }),
        }
    }
}

pub(crate) fn property_tol<S: Scalar>() -> S {
    if S::EXACT {
        S::zero()
    } else {
        S::from_f64(tol::PROPERTY)
    }
}

/// Family membership, with the `-inf` filter when the family is claim-restricted.
pub fn in_family<S: Scalar>(
    tree: &MarketTree,
    p: &TreeMeasure<S>,
    fam: &FamilySpec,
    claim: Option<&Claim>,
) -> Membership {
    if let Err(e) = p.validate(tree) {
        return Membership::fail(p.root, e.to_string());
    }
    if let Err(e) = fam.validate(tree.dim()) {
        return Membership::fail(p.root, e.to_string());
    }
    let reach = p.reach(tree);
    let tol = property_tol::<S>();
    for n in reach.keys() {
        if let Some(k) = p.kernels.get(n) {
            let poly = OneStepPolytope::<S>::new(tree, *n, fam);
            if let Some(reason) = poly.violation(&k.probs, &tol) {
                return Membership::fail(*n, reason);
            }
        }
    }
    if fam.claim_restricted {
        if let Some(claim) = claim {
            for n in reach.keys() {
                if tree.is_leaf(*n) && claim.value_as::<S>(*n).is_neg_inf() {
                    return Membership::fail(*n, "charges a leaf where the claim is -inf".into());
                }
            }
        }
    }
    Membership::pass()
}

/// Conditional law of `p` given the path up to `n`.
pub fn rcpd<S: Scalar>(tree: &MarketTree, p: &TreeMeasure<S>, n: NodeId) -> Result<TreeMeasure<S>> {
    if tree.is_leaf(n) {
        return Err(Error::LeafNode(n));
    }
    if !tree.is_ancestor_or_self(p.root, n) {
        return Err(Error::InvalidMeasure(format!(
            "node {n} is not below the measure root {}",
            p.root
        )));
    }
    let kernels = tree
        .subtree(n)
        .into_iter()
        .filter_map(|m| p.kernels.get(&m).cloned())
        .map(|k| (k.node, k))
        .collect();
    Ok(TreeMeasure { root: n, kernels })
}

fn check_stopping(tree: &MarketTree, root: NodeId, tau: &StoppingTime) -> Result<()> {
    let check = validate_stopping_time_from(tree, root, tau);
    if !check.ok {
        return Err(Error::InvalidStoppingTime(format!("{:?}", check.violations)));
    }
    Ok(())
}

/// For each node of the subtree, the stopping-time member at or above it.
fn tau_owner(tree: &MarketTree, root: NodeId, tau: &StoppingTime) -> BTreeMap<NodeId, NodeId> {
    let mut owner = BTreeMap::new();
    let mut stack = vec![(root, None::<NodeId>)];
    while let Some((n, own)) = stack.pop() {
        let own = own.or(if tau.contains(n) { Some(n) } else { None });
        if let Some(o) = own {
            owner.insert(n, o);
        }
        for &c in tree.children(n) {
            stack.push((c, own));
        }
    }
    owner
}

/// Pastes `nu[m]` below each stopping node `m` onto `p`.
///
/// Stopping nodes missing from `nu` keep the kernels of `p`; that is only
/// allowed where `p` does not charge them.
pub fn paste<S: Scalar>(
    tree: &MarketTree,
    p: &TreeMeasure<S>,
    tau: &StoppingTime,
    nu: &BTreeMap<NodeId, TreeMeasure<S>>,
) -> Result<TreeMeasure<S>> {
    p.validate(tree)?;
    check_stopping(tree, p.root, tau)?;
    let reach = p.reach(tree);
    for m in tau.iter() {
        match nu.get(&m) {
            Some(sub) => {
                if sub.root != m {
                    return Err(Error::InvalidMeasure(format!(
                        "kernel family for node {m} is rooted at {}",
                        sub.root
                    )));
                }
                sub.validate(tree)?;
            }
            None if reach.contains_key(&m) && !tree.is_leaf(m) => {
                return Err(Error::InvalidMeasure(format!(
                    "no subtree measure for charged stopping node {m}"
                )));
            }
            None => {}
        }
    }
    let owner = tau_owner(tree, p.root, tau);
    let kernels = p
        .kernels
        .iter()
        .map(|(n, k)| {
            let k = owner
                .get(n)
                .and_then(|m| nu.get(m))
                .and_then(|sub| sub.kernels.get(n))
                .unwrap_or(k)
                .clone();
            (*n, k)
        })
        .collect();
    Ok(TreeMeasure {
        root: p.root,
        kernels,
    })
}

fn kernels_agree<S: Scalar>(a: &Kernel<S>, b: &Kernel<S>) -> bool {
    a.probs
        .iter()
        .zip(&b.probs)
        .all(|(x, y)| (x.clone() - y.clone()).is_zero_tol())
}

/// `p1` below the stopping nodes in `a`, `p2` below the others.
pub fn bifurcate<S: Scalar>(
    tree: &MarketTree,
    p1: &TreeMeasure<S>,
    p2: &TreeMeasure<S>,
    tau: &StoppingTime,
    a: &BTreeSet<NodeId>,
) -> Result<TreeMeasure<S>> {
    p1.validate(tree)?;
    p2.validate(tree)?;
    if p1.root != p2.root {
        return Err(Error::InvalidMeasure("measures have different roots".into()));
    }
    check_stopping(tree, p1.root, tau)?;
    let owner = tau_owner(tree, p1.root, tau);
    let mut kernels = BTreeMap::new();
    for (n, k1) in &p1.kernels {
        let k2 = &p2.kernels[n];
        let k = match owner.get(n) {
            None => {
                if !kernels_agree(k1, k2) {
                    return Err(Error::MeasuresDisagree(*n));
                }
                k1
            }
            Some(m) if a.contains(m) => k1,
            Some(_) => k2,
        };
        kernels.insert(*n, k.clone());
    }
    Ok(TreeMeasure {
        root: p1.root,
        kernels,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `E[|B_N - x_n|]` under the conditional law of `p` at `n`.
pub fn conditional_abs_terminal<S: Scalar>(tree: &MarketTree, p: &TreeMeasure<S>, n: NodeId) -> Result<f64> {
    if tree.is_leaf(n) {
        return Ok(0.0);
    }
    let sub = rcpd(tree, p, n)?;
    let origin = tree.spot(n).to_vec();
    Ok(sub
        .leaf_law(tree)
        .into_iter()
        .map(|(l, q)| {
            let d: Vec<f64> = tree.spot(l).iter().zip(&origin).map(|(a, b)| a - b).collect();
            q.to_f64() * norm(&d)
        })
        .sum())
}

#[derive(Clone, Debug)]
pub struct Truncation<S = f64> {
    pub kernels: BTreeMap<NodeId, TreeMeasure<S>>,
    /// Stopping nodes whose kernel family was kept.
    pub kept: BTreeSet<NodeId>,
}

/// Replaces subtree measures whose conditional first absolute moment exceeds
/// `threshold` by the conditional law of `p`. Missing entries of `nu` count as
/// the conditional law of `p`.
pub fn truncate_kernels<S: Scalar>(
    tree: &MarketTree,
    p: &TreeMeasure<S>,
    tau: &StoppingTime,
    nu: &BTreeMap<NodeId, TreeMeasure<S>>,
    threshold: f64,
) -> Result<Truncation<S>> {
    check_stopping(tree, p.root, tau)?;
    let mut kernels = BTreeMap::new();
    let mut kept = BTreeSet::new();
    for m in tau.iter() {
        if tree.is_leaf(m) {
            kept.insert(m);
            continue;
        }
        let own = rcpd(tree, p, m)?;
        let candidate = nu.get(&m).cloned().unwrap_or_else(|| own.clone());
        if conditional_abs_terminal(tree, &candidate, m)? <= threshold {
            kept.insert(m);
            kernels.insert(m, candidate);
        } else {
            kernels.insert(m, own);
        }
    }
    Ok(Truncation { kernels, kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use crate::tree::{Generator, TreeSpec};

    fn tree_with(offsets: Vec<f64>, depth: usize) -> MarketTree {
        MarketTree::from_offsets(1, depth, |_, _, _| {
            Ok(offsets.iter().map(|&o| vec![o]).collect())
        })
        .unwrap()
    }

    fn uniform_on(tree: &MarketTree, probs: &[f64]) -> TreeMeasure {
        TreeMeasure::from_kernels(
            tree,
            tree.root(),
            tree.non_leaves().map(|n| Kernel::new(tree, n, probs.to_vec()).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn kernel_means() {
        let t = tree_with(vec![-1.0, 1.0], 1);
        let k = Kernel::new(&t, t.root(), vec![0.5, 0.5]).unwrap();
        assert_eq!(kernel_mean(&t, &k), vec![0.0]);

        let t = tree_with(vec![-1.0, 2.0], 1);
        let third = Rational::new(1.into(), 3.into());
        let k = Kernel::new(&t, t.root(), vec![<Rational as Scalar>::one() - third.clone(), third]).unwrap();
        assert_eq!(kernel_mean(&t, &k), vec![<Rational as Scalar>::zero()]);

        let t = tree_with(vec![3.0], 1);
        let k = Kernel::<f64>::dirac(&t, t.root(), NodeId(1));
        assert_eq!(kernel_mean(&t, &k), vec![3.0]);
    }

    #[test]
    fn martingale_kernel_tests() {
        let t = tree_with(vec![-1.0, 1.0], 1);
        assert!(is_martingale_kernel(&t, &Kernel::new(&t, t.root(), vec![0.5, 0.5]).unwrap(), &1e-12));
        let t = tree_with(vec![1.0, 2.0], 1);
        for q in [0.0, 0.3, 1.0] {
            let k = Kernel::new(&t, t.root(), vec![q, 1.0 - q]).unwrap();
            assert!(!is_martingale_kernel(&t, &k, &1e-12));
        }
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let k = Kernel::new(&t, t.root(), vec![0.3, 0.4, 0.3]).unwrap();
        assert!(is_martingale_kernel(&t, &k, &1e-12));
    }

    #[test]
    fn kernel_variances() {
        let t = tree_with(vec![-1.0, 1.0], 1);
        let k = Kernel::new(&t, t.root(), vec![0.5, 0.5]).unwrap();
        assert_eq!(kernel_variance(&t, &k), vec![vec![1.0]]);
        let t = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let q = 0.15;
        let k = Kernel::new(&t, t.root(), vec![q, 1.0 - 2.0 * q, q]).unwrap();
        assert!((kernel_variance(&t, &k)[0][0] - 2.0 * q).abs() < 1e-15);
        let k = Kernel::<f64>::dirac(&t, t.root(), NodeId(2));
        assert_eq!(kernel_variance(&t, &k), vec![vec![0.0]]);
    }

    #[test]
    fn kernel_validation_errors() {
        let t = tree_with(vec![-1.0, 1.0], 1);
        assert!(Kernel::new(&t, t.root(), vec![0.5, 0.6]).is_err());
        assert!(Kernel::new(&t, t.root(), vec![1.5, -0.5]).is_err());
        assert!(Kernel::new(&t, t.root(), vec![1.0]).is_err());
    }

    #[test]
    fn membership_examples() {
        let t = MarketTree::build(&TreeSpec {
            dim: 1,
            depth: 2,
            generator: Generator::Binomial { u: 1.0 },
        })
        .unwrap();
        let p = uniform_on(&t, &[0.5, 0.5]);
        assert!(in_family(&t, &p, &FamilySpec::martingale(), None).ok);

        let one = tree_with(vec![-1.0, 1.0], 1);
        let p1 = uniform_on(&one, &[0.5, 0.5]);
        let claim = Claim::from_fn(&one, |l| {
            if one.spot(l)[0] < 0.0 {
                ExtReal::NegInf
            } else {
                ExtReal::Finite(1.0)
            }
        });
        let fam = FamilySpec::martingale().restricted();
        let m = in_family(&one, &p1, &fam, Some(&claim));
        assert!(!m.ok);
        assert_eq!(m.violation.unwrap().node, NodeId(1));

        let tri = tree_with(vec![-1.0, 0.0, 1.0], 1);
        let p = uniform_on(&tri, &[0.1, 0.8, 0.1]);
        let fam = FamilySpec::var_bounded(0.5, 1.0);
        assert!(!in_family(&tri, &p, &fam, None).ok);
    }

    #[test]
    fn uncharged_nodes_are_not_tested() {
        // root {-1, 0, 1}, Dirac at 0: the +-1 nodes carry arbitrary kernels
        let t = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let mut kernels: Vec<Kernel> = vec![Kernel::dirac(&t, t.root(), NodeId(2))];
        for n in [NodeId(1), NodeId(3)] {
            kernels.push(Kernel::dirac(&t, n, t.children(n)[0]));
        }
        kernels.push(Kernel::new(&t, NodeId(2), vec![0.5, 0.0, 0.5]).unwrap());
        let p = TreeMeasure::from_kernels(&t, t.root(), kernels).unwrap();
        assert!(in_family(&t, &p, &FamilySpec::martingale(), None).ok);
    }

    #[test]
    fn rcpd_examples() {
        let t = MarketTree::build(&TreeSpec {
            dim: 1,
            depth: 2,
            generator: Generator::Binomial { u: 1.0 },
        })
        .unwrap();
        let p = uniform_on(&t, &[0.5, 0.5]);
        assert_eq!(rcpd(&t, &p, t.root()).unwrap(), p);
        let up = NodeId(2);
        let sub = rcpd(&t, &p, up).unwrap();
        assert_eq!(sub.root, up);
        assert_eq!(sub.kernels.len(), 1);
        assert_eq!(sub.kernels[&up].probs, vec![0.5, 0.5]);
        assert!(matches!(rcpd(&t, &p, NodeId(3)), Err(Error::LeafNode(_))));
    }

    #[test]
    fn paste_and_bifurcate_extremes() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let p = uniform_on(&t, &[0.25, 0.5, 0.25]);
        let q = uniform_on(&t, &[0.5, 0.0, 0.5]);
        let root = StoppingTime::root(&t);
        let nu: BTreeMap<_, _> = [(t.root(), q.clone())].into();
        assert_eq!(paste(&t, &p, &root, &nu).unwrap(), q);
        let leaves = StoppingTime::leaves(&t);
        assert_eq!(paste(&t, &p, &leaves, &BTreeMap::new()).unwrap(), p);

        let level1 = StoppingTime::at_level(&t, 1);
        let all: BTreeSet<NodeId> = level1.iter().collect();
        // both share the root kernel only if we make them agree there
        let mut q2 = q.clone();
        q2.kernels.insert(t.root(), p.kernels[&t.root()].clone());
        assert_eq!(bifurcate(&t, &p, &q2, &level1, &all).unwrap(), p);
        assert_eq!(bifurcate(&t, &p, &q2, &level1, &BTreeSet::new()).unwrap(), q2);
        assert!(matches!(
            bifurcate(&t, &p, &q, &level1, &all),
            Err(Error::MeasuresDisagree(_))
        ));
    }

    #[test]
    fn paste_requires_charged_nodes() {
        let t = tree_with(vec![-1.0, 1.0], 2);
        let p = uniform_on(&t, &[0.5, 0.5]);
        let level1 = StoppingTime::at_level(&t, 1);
        let only_one: BTreeMap<_, _> = [(NodeId(1), rcpd(&t, &p, NodeId(1)).unwrap())].into();
        assert!(paste(&t, &p, &level1, &only_one).is_err());
        let bad_tau = StoppingTime::new([NodeId(1)]);
        assert!(paste(&t, &p, &bad_tau, &only_one).is_err());
    }

    #[test]
    fn conditional_moments() {
        let one = tree_with(vec![-1.0, 1.0], 1);
        let p = uniform_on(&one, &[0.5, 0.5]);
        assert_eq!(conditional_abs_terminal(&one, &p, one.root()).unwrap(), 1.0);
        assert_eq!(conditional_abs_terminal(&one, &p, NodeId(1)).unwrap(), 0.0);
        let two = tree_with(vec![-1.0, 1.0], 2);
        // |B_2| in {2, 0, 0, 2} with equal weights
        let p = uniform_on(&two, &[0.5, 0.5]);
        assert_eq!(conditional_abs_terminal(&two, &p, two.root()).unwrap(), 1.0);
    }

    #[test]
    fn truncation_examples() {
        let t = tree_with(vec![-3.0, 0.0, 3.0], 2);
        let q = 0.1;
        let p = uniform_on(&t, &[q, 1.0 - 2.0 * q, q]);
        let tau = StoppingTime::at_level(&t, 1);
        let mut nu = BTreeMap::new();
        for m in tau.iter() {
            let probs = if m == NodeId(2) { vec![0.5, 0.0, 0.5] } else { vec![0.05, 0.9, 0.05] };
            let k = Kernel::new(&t, m, probs).unwrap();
            nu.insert(m, TreeMeasure::from_kernels(&t, m, [k]).unwrap());
        }
        assert!((conditional_abs_terminal(&t, &nu[&NodeId(2)], NodeId(2)).unwrap() - 3.0).abs() < 1e-15);

        let none = truncate_kernels(&t, &p, &tau, &nu, f64::INFINITY).unwrap();
        assert_eq!(none.kernels, nu);
        assert_eq!(none.kept, tau.0);

        let zero = truncate_kernels(&t, &p, &tau, &nu, 0.0).unwrap();
        assert!(zero.kept.is_empty());
        for m in tau.iter() {
            assert_eq!(zero.kernels[&m], rcpd(&t, &p, m).unwrap());
        }

        let mixed = truncate_kernels(&t, &p, &tau, &nu, 2.0).unwrap();
        let replaced: Vec<NodeId> = tau.iter().filter(|m| !mixed.kept.contains(m)).collect();
        assert_eq!(replaced, vec![NodeId(2)]);
    }

    #[test]
    fn measure_doc_round_trip() {
        let t = tree_with(vec![-1.0, 0.0, 1.0], 2);
        let p = uniform_on(&t, &[0.25, 0.5, 0.25]);
        let doc = p.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains(r#""kernels":{"0":{"1":0.25,"2":0.5,"3":0.25}"#));
        let back: MeasureDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(TreeMeasure::from_doc(&t, &back).unwrap(), p);
    }
}
