//! Seeded random instances and the property checks run over them.
//!
//! Every case is a pure function of its suite and its seed, so a failing
//! case can be replayed from `(suite, seed)` alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claim::{Claim, Payoff};
use crate::dual::{backward_solve, backward_value, check_supermartingale, check_tower};
use crate::error::{Error, Result};
use crate::family::{viable_nodes, FamilyClass, FamilySpec, OneStepPolytope};
use crate::hedge::{doob_meyer, extract_strategy, primal_lp, verify_superhedge, wealth};
use crate::measure::{
    bifurcate, conditional_abs_terminal, in_family, paste, rcpd, truncate_kernels, Kernel, TreeMeasure,
};
use crate::oracle::{completion_kernel, ess_sup_check, global_sup_lp, upward_directed_check};
use crate::scalar::{tol, ExtReal, Rational, Scalar};
use crate::tree::{shift_claim, MarketTree, NodeId, StoppingTime};

pub type Rng64 = ChaCha8Rng;

pub fn rng_for(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of random trees.
#[derive(Clone, Copy, Debug)]
pub struct TreeShape {
    pub depth: (usize, usize),
    pub branching: (usize, usize),
    /// Offsets are drawn without replacement from `-span..=span`.
    pub span: i32,
    pub p_single_child: f64,
    /// Probability that a node's offsets straddle zero.
    pub p_straddle: f64,
}

impl TreeShape {
    pub const SUITE: TreeShape = TreeShape {
        depth: (1, 4),
        branching: (2, 4),
        span: 3,
        p_single_child: 0.03,
        p_straddle: 0.9,
    };

    /// Trees with at most 40 nodes.
    pub const SMALL: TreeShape = TreeShape {
        depth: (1, 3),
        branching: (2, 3),
        span: 3,
        p_single_child: 0.03,
        p_straddle: 0.9,
    };
}

fn random_offsets(rng: &mut Rng64, shape: &TreeShape) -> Vec<f64> {
    let values: Vec<i32> = (-shape.span..=shape.span).collect();
    if rng.random_bool(shape.p_single_child) {
        let v = if rng.random_bool(0.7) { 0 } else { values[rng.random_range(0..values.len())] };
        return vec![v as f64];
    }
    let b = rng.random_range(shape.branching.0..=shape.branching.1);
    loop {
        let mut picked: Vec<i32> = sample(rng, values.len(), b).into_iter().map(|i| values[i]).collect();
        picked.sort();
        let straddles = picked.contains(&0) || (picked[0] < 0 && picked[b - 1] > 0);
        if straddles || !rng.random_bool(shape.p_straddle) {
            return picked.into_iter().map(f64::from).collect();
        }
    }
}

pub fn random_tree(rng: &mut Rng64, shape: &TreeShape) -> MarketTree {
    let depth = rng.random_range(shape.depth.0..=shape.depth.1);
    MarketTree::from_offsets(1, depth, |_, _, _| {
        Ok(random_offsets(rng, shape).into_iter().map(|o| vec![o]).collect())
    })
    .expect("random offsets are valid")
}

/// Named payoff or random integer table with occasional `-inf` entries.
pub fn random_claim(rng: &mut Rng64, tree: &MarketTree) -> (String, Claim) {
    let strikes = [-1.0, 0.0, 0.5, 1.0, 2.0];
    let k = strikes[rng.random_range(0..strikes.len())];
    let payoff = match rng.random_range(0..6) {
        0 => Payoff::Call(k),
        1 => Payoff::Abs,
        2 => Payoff::Lookback(k),
        3 => Payoff::Asian(k),
        4 => Payoff::Digital(k),
        _ => {
            let claim = Claim::from_fn(tree, |_| {
                if rng.random_bool(0.05) {
                    ExtReal::NegInf
                } else {
                    ExtReal::Finite(rng.random_range(-3..=5) as f64)
                }
            });
            return ("table".into(), claim);
        }
    };
    (payoff.to_string(), payoff.claim(tree))
}

pub fn random_family(rng: &mut Rng64) -> FamilySpec {
    let fam = match rng.random_range(0..20) {
        0..=11 => FamilySpec::martingale(),
        12..=16 => {
            let lo = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            let width = [0.0, 0.5, 1.0, 3.0][rng.random_range(0..4)];
            FamilySpec::var_bounded(lo, lo + width)
        }
        _ => FamilySpec::all(),
    };
    fam.with_restriction(rng.random_bool(0.5))
}

fn family_of(class: FamilyClass, rng: &mut Rng64) -> FamilySpec {
    match class {
        FamilyClass::All => FamilySpec::all(),
        FamilyClass::Martingale => FamilySpec::martingale(),
        FamilyClass::VarBounded => {
            let lo = [0.5, 1.0][rng.random_range(0..2)];
            FamilySpec::var_bounded(lo, lo + [0.5, 1.0, 3.0][rng.random_range(0..3)])
        }
    }
}

/// One randomized (tree, claim, family) triple.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub tree: MarketTree,
    pub payoff: String,
    pub claim: Claim,
    pub family: FamilySpec,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng_for(seed);
    let tree = random_tree(&mut rng, &TreeShape::SUITE);
    let (payoff, claim) = random_claim(&mut rng, &tree);
    let family = random_family(&mut rng);
    Instance {
        seed,
        tree,
        payoff,
        claim,
        family,
    }
}

fn random_weights(rng: &mut Rng64, n: usize) -> Vec<f64> {
    if n == 1 || rng.random_bool(0.3) {
        let mut w = vec![0.0; n];
        w[rng.random_range(0..n)] = 1.0;
        return w;
    }
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random kernel of the family at `n` charging only `allowed` children.
pub fn random_kernel(
    rng: &mut Rng64,
    tree: &MarketTree,
    n: NodeId,
    fam: &FamilySpec,
    allowed: Vec<bool>,
) -> Option<Kernel> {
    let poly = OneStepPolytope::<f64>::new(tree, n, fam).with_allowed(allowed);
    let vertices = poly.vertices().ok()?;
    if vertices.is_empty() {
        return None;
    }
    let w = random_weights(rng, vertices.len());
    let mut probs = vec![0.0; tree.children(n).len()];
    for (v, wi) in vertices.iter().zip(&w) {
        for (p, q) in probs.iter_mut().zip(v) {
            *p += wi * q;
        }
    }
    Some(Kernel {
        node: n,
        children: tree.children(n).to_vec(),
        probs,
    })
}

/// Random family measure on the subtree of `root` avoiding `-inf` leaves;
/// `None` when no such measure exists.
pub fn random_measure(
    rng: &mut Rng64,
    tree: &MarketTree,
    root: NodeId,
    fam: &FamilySpec,
    claim: &Claim,
) -> Option<TreeMeasure> {
    let viable = viable_nodes::<f64>(tree, fam, claim, true);
    if !viable[root.0] {
        return None;
    }
    let mut kernels = BTreeMap::new();
    for n in tree.subtree(root) {
        if tree.is_leaf(n) {
            continue;
        }
        let k = if viable[n.0] {
            let allowed = tree.children(n).iter().map(|c| viable[c.0]).collect();
            random_kernel(rng, tree, n, fam, allowed)?
        } else {
            completion_kernel(tree, n, fam)
        };
        kernels.insert(n, k);
    }
    Some(TreeMeasure { root, kernels })
}

/// Random stopping time on the subtree of `root`, stopping at each node with probability `p`.
pub fn random_stopping_time(rng: &mut Rng64, tree: &MarketTree, root: NodeId, p: f64) -> StoppingTime {
    let mut out = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        if tree.is_leaf(n) || rng.random_bool(p) {
            out.insert(n);
        } else {
            stack.extend(tree.children(n).iter().copied());
        }
    }
    StoppingTime(out)
}

/// Ordered pair `sigma <= tau`.
pub fn random_ordered_pair(rng: &mut Rng64, tree: &MarketTree) -> (StoppingTime, StoppingTime) {
    let sigma = random_stopping_time(rng, tree, tree.root(), 0.4);
    let mut tau = BTreeSet::new();
    for m in sigma.iter() {
        tau.extend(random_stopping_time(rng, tree, m, 0.4).0);
    }
    (sigma, StoppingTime(tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Duality,
    DualityExact,
    Tower,
    Supermartingale,
    EssSup,
    UpwardDirected,
    Truncation,
    PasteAll,
    PasteMartingale,
    PasteVarBounded,
    BifurcateAll,
    BifurcateMartingale,
    BifurcateVarBounded,
    RcpdAll,
    RcpdMartingale,
    RcpdVarBounded,
    Membership,
}

impl Suite {
    pub const ALL: [Suite; 17] = [
        Suite::Duality,
        Suite::DualityExact,
        Suite::Tower,
        Suite::Supermartingale,
        Suite::EssSup,
        Suite::UpwardDirected,
        Suite::Truncation,
        Suite::PasteAll,
        Suite::PasteMartingale,
        Suite::PasteVarBounded,
        Suite::BifurcateAll,
        Suite::BifurcateMartingale,
        Suite::BifurcateVarBounded,
        Suite::RcpdAll,
        Suite::RcpdMartingale,
        Suite::RcpdVarBounded,
        Suite::Membership,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Duality => "duality",
            Suite::DualityExact => "duality_exact",
            Suite::Tower => "tower",
            Suite::Supermartingale => "supermartingale",
            Suite::EssSup => "ess_sup",
            Suite::UpwardDirected => "upward_directed",
            Suite::Truncation => "truncation",
            Suite::PasteAll => "paste_all",
            Suite::PasteMartingale => "paste_martingale",
            Suite::PasteVarBounded => "paste_var_bounded",
            Suite::BifurcateAll => "bifurcate_all",
            Suite::BifurcateMartingale => "bifurcate_martingale",
            Suite::BifurcateVarBounded => "bifurcate_var_bounded",
            Suite::RcpdAll => "rcpd_all",
            Suite::RcpdMartingale => "rcpd_martingale",
            Suite::RcpdVarBounded => "rcpd_var_bounded",
            Suite::Membership => "membership",
        }
    }

    /// Instance count used by the default configuration.
    pub fn default_count(&self) -> usize {
        match self {
            Suite::Duality | Suite::DualityExact | Suite::Tower | Suite::EssSup | Suite::Truncation => 100,
            Suite::Supermartingale => 500,
            Suite::Membership => 100,
            _ => 200,
        }
    }

    fn tag(&self) -> u64 {
        Suite::ALL.iter().position(|s| s == self).expect("listed") as u64 + 1
    }

    /// Seed of instance `index` under `base`; distinct suites draw distinct streams.
    pub fn case_seed(&self, base: u64, index: usize) -> u64 {
        base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.tag() << 40)
            .wrapping_add(index as u64)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .find(|x| x.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidFamily(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub suite: Suite,
    pub seed: u64,
    pub ok: bool,
    /// Instances the property was not applicable to (for example an empty family).
    pub skipped: bool,
    pub node: Option<NodeId>,
    pub detail: String,
}

impl CaseOutcome {
    fn pass(suite: Suite, seed: u64) -> Self {
        CaseOutcome {
            suite,
            seed,
            ok: true,
            skipped: false,
            node: None,
            detail: String::new(),
        }
    }

    fn skip(suite: Suite, seed: u64, why: &str) -> Self {
        CaseOutcome {
            skipped: true,
            detail: why.into(),
            ..Self::pass(suite, seed)
        }
    }

    fn fail(suite: Suite, seed: u64, node: Option<NodeId>, detail: String) -> Self {
        CaseOutcome {
            suite,
            seed,
            ok: false,
            skipped: false,
            node,
            detail,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CaseOptions {
    /// Shift one charged kernel's mean by 0.1 before membership checks.
    pub mutate_kernel: bool,
}

pub fn run_case(suite: Suite, seed: u64, opts: CaseOptions) -> CaseOutcome {
    let result = match suite {
        Suite::Duality => duality_case::<f64>(seed).map(|r| r.check()),
        Suite::DualityExact => duality_case::<Rational>(seed).map(|r| r.check()),
        Suite::Tower => tower_case(seed),
        Suite::Supermartingale => supermartingale_case(seed),
        Suite::EssSup => ess_sup_case(seed),
        Suite::UpwardDirected => upward_case(seed),
        Suite::Truncation => truncation_case(seed),
        Suite::PasteAll => paste_case(seed, FamilyClass::All),
        Suite::PasteMartingale => paste_case(seed, FamilyClass::Martingale),
        Suite::PasteVarBounded => paste_case(seed, FamilyClass::VarBounded),
        Suite::BifurcateAll => bifurcate_case(seed, FamilyClass::All),
        Suite::BifurcateMartingale => bifurcate_case(seed, FamilyClass::Martingale),
        Suite::BifurcateVarBounded => bifurcate_case(seed, FamilyClass::VarBounded),
        Suite::RcpdAll => rcpd_case(seed, FamilyClass::All),
        Suite::RcpdMartingale => rcpd_case(seed, FamilyClass::Martingale),
        Suite::RcpdVarBounded => rcpd_case(seed, FamilyClass::VarBounded),
        Suite::Membership => membership_case(seed, opts),
    };
    match result {
        Ok(Check::Pass) => CaseOutcome::pass(suite, seed),
        Ok(Check::Skip(why)) => CaseOutcome::skip(suite, seed, why),
        Ok(Check::Fail(node, detail)) => CaseOutcome::fail(suite, seed, node, detail),
        Err(e) => CaseOutcome::fail(suite, seed, None, format!("error: {e}")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Check {
    Pass,
    Skip(&'static str),
    Fail(Option<NodeId>, String),
}

fn fail(detail: impl Into<String>) -> Result<Check> {
    Ok(Check::Fail(None, detail.into()))
}

/// All three values of the duality and the hedge verification for one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityRecord {
    pub seed: u64,
    pub exact: bool,
    pub leaves: usize,
    pub payoff: String,
    pub family: String,
    pub dp: ExtReal<f64>,
    pub lp: ExtReal<f64>,
    pub primal: ExtReal<f64>,
    /// `None` when exactly one side is `-inf`.
    pub gap_lp: Option<f64>,
    pub gap_primal: Option<f64>,
    /// Exact comparisons in rational mode.
    pub exact_match: Option<bool>,
    pub factorization_ok: bool,
    pub min_slack: Option<f64>,
    pub hedge_ok: bool,
    pub primal_hedge_ok: bool,
}

impl DualityRecord {
    pub fn gaps_ok(&self) -> bool {
        let close = |g: Option<f64>| g.is_some_and(|g| g <= tol::PROPERTY);
        close(self.gap_lp) && close(self.gap_primal) && self.exact_match.unwrap_or(true)
    }

    fn check(&self) -> Check {
        if !self.gaps_ok() {
            return Check::Fail(
                None,
                format!("dp {} lp {} primal {}", self.dp, self.lp, self.primal),
            );
        }
        if !self.factorization_ok {
            return Check::Fail(None, "factorized LP measure rejected".into());
        }
        if !(self.hedge_ok && self.primal_hedge_ok) {
            return Check::Fail(None, format!("superhedge fails, min slack {:?}", self.min_slack));
        }
        Check::Pass
    }
}

pub fn duality_case<S: Scalar>(seed: u64) -> Result<DualityRecord> {
    let inst = random_instance(seed);
    duality_record::<S>(&inst)
}

pub fn duality_record<S: Scalar>(inst: &Instance) -> Result<DualityRecord> {
    let (tree, claim, fam) = (&inst.tree, &inst.claim, &inst.family);
    let dual = backward_solve::<S>(tree, claim, fam)?;
    let lp = global_sup_lp::<S>(tree, claim, fam)?;
    let primal = primal_lp::<S>(tree, claim, fam)?;
    let dp = dual.root_value().clone();
    let exact_match = S::EXACT.then(|| dp == lp.value && dp == primal.value);
    let factorization_ok = match &lp.measure {
        None => lp.value.is_neg_inf(),
        Some(p) => {
            let tol = if S::EXACT { S::zero() } else { S::from_f64(tol::PROPERTY) };
            in_family(tree, p, fam, Some(claim)).ok
                && p.expectation(tree, claim).gap(&lp.value).is_some_and(|g| g <= tol)
        }
    };
    let (mut hedge_ok, mut min_slack, mut primal_hedge_ok) = (true, None, true);
    if let Some(x0) = dp.finite() {
        let strategy = extract_strategy(tree, &dual, fam)?;
        let report = verify_superhedge(tree, x0, &strategy, claim, fam);
        hedge_ok = report.ok;
        min_slack = report.min_slack.map(|s| s.to_f64());
    }
    if let (Some(x0), Some(strategy)) = (primal.value.finite(), &primal.strategy) {
        primal_hedge_ok = verify_superhedge(tree, x0, strategy, claim, fam).ok;
    }
    let f = |v: &ExtReal<S>| v.convert::<f64>();
    Ok(DualityRecord {
        seed: inst.seed,
        exact: S::EXACT,
        leaves: tree.leaves().count(),
        payoff: inst.payoff.clone(),
        family: family_label(fam),
        gap_lp: dp.gap(&lp.value).map(|g| g.to_f64()),
        gap_primal: dp.gap(&primal.value).map(|g| g.to_f64()),
        dp: f(&dp),
        lp: f(&lp.value),
        primal: f(&primal.value),
        exact_match,
        factorization_ok,
        min_slack,
        hedge_ok,
        primal_hedge_ok,
    })
}

pub fn family_label(fam: &FamilySpec) -> String {
    let base = match fam.class {
        FamilyClass::All => "all".to_string(),
        FamilyClass::Martingale => "martingale".to_string(),
        FamilyClass::VarBounded => {
            let (lo, hi) = fam.bounds().unwrap_or((f64::NAN, f64::NAN));
            format!("var_bounded[{lo},{hi}]")
        }
    };
    if fam.claim_restricted {
        format!("{base}+restricted")
    } else {
        base
    }
}

fn tower_case(seed: u64) -> Result<Check> {
    let inst = random_instance(seed);
    let mut rng = rng_for(seed ^ 0x7074);
    let (sigma, tau) = random_ordered_pair(&mut rng, &inst.tree);
    let c = check_tower::<f64>(&inst.tree, &inst.claim, &inst.family, &sigma, &tau)?;
    if c.ok {
        Ok(Check::Pass)
    } else {
        Ok(Check::Fail(
            c.mismatched.first().copied(),
            format!("tower gap {} mismatched {:?}", c.worst_gap, c.mismatched),
        ))
    }
}

/// First instance derived from `seed` whose family is nonempty, with a random member.
fn instance_with_measure(seed: u64, salt: u64) -> Option<(Instance, Rng64, TreeMeasure)> {
    (0..20u64).find_map(|attempt| {
        let inst = random_instance(seed.wrapping_add(attempt << 56));
        let mut rng = rng_for(seed ^ salt ^ attempt);
        let p = random_measure(&mut rng, &inst.tree, inst.tree.root(), &inst.family, &inst.claim)?;
        Some((inst, rng, p))
    })
}

fn supermartingale_case(seed: u64) -> Result<Check> {
    let Some((inst, _, p)) = instance_with_measure(seed, 0x736d) else {
        return Ok(Check::Skip("empty family"));
    };
    let (tree, claim, fam) = (&inst.tree, &inst.claim, &inst.family);
    let dual = backward_solve::<f64>(tree, claim, fam)?;
    let c = check_supermartingale(tree, &dual.values, &p, fam, claim, &tol::PROPERTY)?;
    if !c.ok {
        return Ok(Check::Fail(c.worst.map(|w| w.0), format!("excess {:?}", c.worst)));
    }
    // Doob–Meyer: K nondecreasing and E[K_N] = Y_0 + E[gains] - E[claim]
    let strategy = extract_strategy(tree, &dual, fam)?;
    let k = match doob_meyer(tree, &dual.values, &strategy, &p) {
        Ok(k) => k,
        Err(Error::NegativeIncrement { node, child, increment }) => {
            return Ok(Check::Fail(Some(node), format!("K decreases by {increment} on {node} -> {child}")));
        }
        Err(e) => return Err(e),
    };
    let y0 = *dual.root_value().finite().expect("viable root");
    let mean_claim = p.expect_with(tree, |l| claim.get(l).and_then(|v| v.finite().copied()).unwrap_or(0.0));
    let mean_gain = p.expect_with(tree, |l| wealth(tree, &0.0, &strategy, &tree.path_to(l)));
    let lhs = k.terminal_mean(tree, &p);
    if (lhs - (y0 + mean_gain - mean_claim)).abs() > tol::PROPERTY {
        return fail(format!("E[K_N] = {lhs}, expected {}", y0 + mean_gain - mean_claim));
    }
    if fam.bounds().is_none() && mean_gain.abs() > tol::PROPERTY {
        return fail(format!("stock gains have mean {mean_gain}"));
    }
    Ok(Check::Pass)
}

fn ess_sup_case(seed: u64) -> Result<Check> {
    let Some((inst, mut rng, p)) = instance_with_measure(seed, 0x6573) else {
        return Ok(Check::Skip("empty family"));
    };
    let (tree, claim, fam) = (&inst.tree, &inst.claim, &inst.family);
    let tau = random_stopping_time(&mut rng, tree, tree.root(), 0.4);
    let c = ess_sup_check(tree, claim, fam, &tau, &p)?;
    if c.ok {
        Ok(Check::Pass)
    } else {
        Ok(Check::Fail(c.failures.first().copied(), format!("gap {} at {:?}", c.worst_gap, c.failures)))
    }
}

fn trinomial3() -> MarketTree {
    MarketTree::from_offsets(1, 3, |_, _, _| Ok(vec![vec![-1.0], vec![0.0], vec![1.0]])).expect("valid")
}

fn upward_case(seed: u64) -> Result<Check> {
    let tree = trinomial3();
    let mut rng = rng_for(seed);
    let (_, claim) = random_claim(&mut rng, &tree);
    let fam = FamilySpec::martingale().with_restriction(rng.random_bool(0.5));
    let Some(p1) = random_measure(&mut rng, &tree, tree.root(), &fam, &claim) else {
        return Ok(Check::Skip("empty family"));
    };
    let level = rng.random_range(1..=tree.depth());
    let n = tree.level(level).next().expect("nonempty level");
    let tau = StoppingTime::at_level(&tree, level);
    let mut nu = BTreeMap::new();
    for m in tau.iter().filter(|m| !tree.is_leaf(*m)) {
        if let Some(sub) = random_measure(&mut rng, &tree, m, &fam, &claim) {
            nu.insert(m, sub);
        } else {
            nu.insert(m, rcpd(&tree, &p1, m)?);
        }
    }
    let p2 = paste(&tree, &p1, &tau, &nu)?;
    let c = upward_directed_check(&tree, &claim, &fam, n, &p1, &p2)?;
    if c.ok {
        Ok(Check::Pass)
    } else {
        fail(format!("bifurcated measure misses the maximum by {}", c.worst_gap))
    }
}

fn truncation_case(seed: u64) -> Result<Check> {
    let mut rng = rng_for(seed);
    let shape = TreeShape {
        depth: (2, 3),
        branching: (2, 4),
        span: 3,
        p_single_child: 0.0,
        p_straddle: 1.0,
    };
    let tree = random_tree(&mut rng, &shape);
    let fam = FamilySpec::martingale();
    let none = Claim::constant(&tree, 0.0);
    let Some(p) = random_measure(&mut rng, &tree, tree.root(), &fam, &none) else {
        return Ok(Check::Skip("empty family"));
    };
    let tau = random_stopping_time(&mut rng, &tree, tree.root(), 0.5);
    let mut nu = BTreeMap::new();
    for m in tau.iter().filter(|m| !tree.is_leaf(*m)) {
        if let Some(sub) = random_measure(&mut rng, &tree, m, &fam, &none) {
            nu.insert(m, sub);
        }
    }
    let mut moments: Vec<f64> = vec![0.0];
    for m in tau.iter().filter(|m| !tree.is_leaf(*m)) {
        let own = rcpd(&tree, &p, m)?;
        moments.push(conditional_abs_terminal(&tree, nu.get(&m).unwrap_or(&own), m)?);
    }
    moments.sort_by(f64::total_cmp);
    let max = *moments.last().expect("nonempty");
    let mut levels: Vec<f64> = moments.iter().flat_map(|&x| [x, x + 0.5]).collect();
    levels.sort_by(f64::total_cmp);
    levels.push(f64::INFINITY);
    let mut previous: Option<BTreeSet<NodeId>> = None;
    for n in levels {
        let t = truncate_kernels(&tree, &p, &tau, &nu, n)?;
        if let Some(prev) = &previous {
            if !prev.is_subset(&t.kept) {
                return fail(format!("E_n shrinks at n = {n}"));
            }
        }
        if n >= max && t.kept != tau.0 {
            return fail(format!("E_n misses {:?} at n = {n}", tau.0.difference(&t.kept).collect::<Vec<_>>()));
        }
        let pasted = paste(&tree, &p, &tau, &t.kernels)?;
        let m = in_family(&tree, &pasted, &fam, None);
        if !m.ok {
            let v = m.violation.expect("failing report");
            return Ok(Check::Fail(Some(v.node), v.reason));
        }
        previous = Some(t.kept);
    }
    Ok(Check::Pass)
}

fn closure_setup(seed: u64, class: FamilyClass, shape: &TreeShape) -> Option<(Rng64, MarketTree, FamilySpec, Claim, TreeMeasure)> {
    let mut rng = rng_for(seed);
    for _ in 0..100 {
        let tree = random_tree(&mut rng, shape);
        let fam = family_of(class, &mut rng);
        let claim = Claim::constant(&tree, 0.0);
        if let Some(p) = random_measure(&mut rng, &tree, tree.root(), &fam, &claim) {
            return Some((rng, tree, fam, claim, p));
        }
    }
    None
}

fn membership_failure(tree: &MarketTree, p: &TreeMeasure, fam: &FamilySpec, what: &str) -> Option<Check> {
    let m = in_family(tree, p, fam, None);
    (!m.ok).then(|| {
        let v = m.violation.expect("failing report");
        Check::Fail(Some(v.node), format!("{what}: {}", v.reason))
    })
}

fn subtree_measures(
    rng: &mut Rng64,
    tree: &MarketTree,
    tau: &StoppingTime,
    fam: &FamilySpec,
    claim: &Claim,
    p: &TreeMeasure,
) -> Result<BTreeMap<NodeId, TreeMeasure>> {
    let mut nu = BTreeMap::new();
    for m in tau.iter().filter(|m| !tree.is_leaf(*m)) {
        let sub = match random_measure(rng, tree, m, fam, claim) {
            Some(sub) => sub,
            None => rcpd(tree, p, m)?,
        };
        nu.insert(m, sub);
    }
    Ok(nu)
}

fn paste_case(seed: u64, class: FamilyClass) -> Result<Check> {
    let Some((mut rng, tree, fam, claim, p)) = closure_setup(seed, class, &TreeShape::SUITE) else {
        return Ok(Check::Skip("empty family"));
    };
    let tau = random_stopping_time(&mut rng, &tree, tree.root(), 0.4);
    let nu = subtree_measures(&mut rng, &tree, &tau, &fam, &claim, &p)?;
    let pasted = paste(&tree, &p, &tau, &nu)?;
    if let Some(f) = membership_failure(&tree, &pasted, &fam, "pasted") {
        return Ok(f);
    }
    let reach = p.reach(&tree);
    for (m, sub) in &nu {
        if reach.contains_key(m) && rcpd(&tree, &pasted, *m)? != *sub {
            return Ok(Check::Fail(Some(*m), "conditional law differs from the pasted kernels".into()));
        }
    }
    Ok(Check::Pass)
}

fn bifurcate_case(seed: u64, class: FamilyClass) -> Result<Check> {
    let Some((mut rng, tree, fam, claim, p1)) = closure_setup(seed, class, &TreeShape::SUITE) else {
        return Ok(Check::Skip("empty family"));
    };
    let tau = random_stopping_time(&mut rng, &tree, tree.root(), 0.4);
    let nu = subtree_measures(&mut rng, &tree, &tau, &fam, &claim, &p1)?;
    let p2 = paste(&tree, &p1, &tau, &nu)?;
    let a: BTreeSet<NodeId> = tau.iter().filter(|_| rng.random_bool(0.5)).collect();
    let out = bifurcate(&tree, &p1, &p2, &tau, &a)?;
    Ok(membership_failure(&tree, &out, &fam, "bifurcated").unwrap_or(Check::Pass))
}

fn rcpd_case(seed: u64, class: FamilyClass) -> Result<Check> {
    let Some((mut rng, tree, fam, _, p)) = closure_setup(seed, class, &TreeShape::SMALL) else {
        return Ok(Check::Skip("empty family"));
    };
    let claim = Claim::from_fn(&tree, |_| ExtReal::Finite(rng.random_range(-5.0..5.0)));
    let reach = p.reach(&tree);
    for (&n, &pn) in &reach {
        if tree.is_leaf(n) {
            continue;
        }
        let sub = rcpd(&tree, &p, n)?;
        if let Some(f) = membership_failure(&tree, &sub, &fam, "conditional law") {
            return Ok(f);
        }
        // E[claim 1{reach n}] = P(n) E^{rcpd}[shifted claim]
        let below: BTreeSet<NodeId> = tree.leaves_below(n).into_iter().collect();
        let lhs = p.expect_with(&tree, |l| {
            if below.contains(&l) {
                claim.get(l).and_then(|v| v.finite().copied()).unwrap_or(0.0)
            } else {
                0.0
            }
        });
        let shifted = shift_claim(&tree, &claim, n);
        let rhs = pn * sub.expectation(&tree, &shifted).to_f64();
        if (lhs - rhs).abs() > tol::FEASIBILITY {
            return Ok(Check::Fail(Some(n), format!("conditional identity off by {}", lhs - rhs)));
        }
    }
    let total: f64 = p.leaf_law(&tree).values().sum();
    if (total - 1.0).abs() > tol::FEASIBILITY {
        return fail(format!("leaf law sums to {total}"));
    }
    Ok(Check::Pass)
}

/// Moves mass to the highest child so the mean at `n` rises by `shift`.
pub fn mutate_kernel(tree: &MarketTree, p: &TreeMeasure, n: NodeId, shift: f64) -> Option<TreeMeasure> {
    let k = p.kernel(n)?;
    let (top, dx) = k
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| (i, tree.increment(n, *c)[0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    let mean: f64 = k
        .children
        .iter()
        .zip(&k.probs)
        .map(|(c, q)| q * tree.increment(n, *c)[0])
        .sum();
    let gap = dx - mean;
    if gap < shift {
        return None;
    }
    let alpha = shift / gap;
    let mut probs: Vec<f64> = k.probs.iter().map(|q| (1.0 - alpha) * q).collect();
    probs[top] += alpha;
    let mut out = p.clone();
    out.kernels.insert(
        n,
        Kernel {
            probs,
            ..k.clone()
        },
    );
    Some(out)
}

fn membership_case(seed: u64, opts: CaseOptions) -> Result<Check> {
    let Some((_, tree, fam, claim, p)) = closure_setup(seed, FamilyClass::Martingale, &TreeShape::SUITE) else {
        return Ok(Check::Skip("empty family"));
    };
    let mut measure = p.clone();
    let mut mutated = None;
    if opts.mutate_kernel {
        let target = p
            .reach(&tree)
            .keys()
            .copied()
            .find(|&n| !tree.is_leaf(n) && mutate_kernel(&tree, &p, n, 0.1).is_some());
        let Some(n) = target else {
            return Ok(Check::Skip("no kernel can be shifted"));
        };
        measure = mutate_kernel(&tree, &p, n, 0.1).expect("checked above");
        mutated = Some(n);
    }
    let m = in_family(&tree, &measure, &fam, Some(&claim));
    Ok(match m.violation {
        None => Check::Pass,
        Some(v) => {
            let note = mutated.map_or(String::new(), |n| format!(" (mutated node {n})"));
            Check::Fail(Some(v.node), format!("{}{note}", v.reason))
        }
    })
}

/// Pass/fail counts of one suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub suite: Suite,
    pub base_seed: u64,
    pub instances: usize,
    pub passed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub failures: Vec<CaseOutcome>,
}

pub fn summarize(suite: Suite, base_seed: u64, outcomes: Vec<CaseOutcome>) -> SuiteSummary {
    let failures: Vec<CaseOutcome> = outcomes.iter().filter(|o| !o.ok).cloned().collect();
    SuiteSummary {
        suite,
        base_seed,
        instances: outcomes.len(),
        passed: outcomes.iter().filter(|o| o.ok && !o.skipped).count(),
        skipped: outcomes.iter().filter(|o| o.skipped).count(),
        failed: failures.len(),
        failures,
    }
}

/// Runs a suite sequentially.
pub fn run_suite(suite: Suite, base_seed: u64, count: usize, opts: CaseOptions) -> SuiteSummary {
    let outcomes = (0..count)
        .map(|i| run_case(suite, suite.case_seed(base_seed, i), opts))
        .collect();
    summarize(suite, base_seed, outcomes)
}

/// The dual value of an instance, for callers that only need `Y`.
pub fn instance_value(inst: &Instance) -> Result<ExtReal<f64>> {
    Ok(backward_value::<f64>(&inst.tree, &inst.claim, &inst.family)?.at(inst.tree.root()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let a = random_instance(7);
        let b = random_instance(7);
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.claim, b.claim);
        assert_eq!(a.family, b.family);
        assert!(a.tree.depth() >= 1 && a.tree.depth() <= 4);
    }

    #[test]
    fn random_measures_are_in_the_family() {
        for seed in 0..30 {
            let inst = random_instance(seed);
            let mut rng = rng_for(seed);
            if let Some(p) = random_measure(&mut rng, &inst.tree, inst.tree.root(), &inst.family, &inst.claim) {
                assert!(in_family(&inst.tree, &p, &inst.family, Some(&inst.claim)).ok, "seed {seed}");
            }
        }
    }

    #[test]
    fn ordered_pairs_are_ordered() {
        let mut rng = rng_for(3);
        for _ in 0..100 {
            let tree = random_tree(&mut rng, &TreeShape::SUITE);
            let (s, t) = random_ordered_pair(&mut rng, &tree);
            assert!(s.precedes(&tree, &t));
        }
    }

    #[test]
    fn mutation_is_detected_at_the_mutated_node() {
        let out = run_case(Suite::Membership, 11, CaseOptions { mutate_kernel: true });
        assert!(!out.ok);
        let node = out.node.expect("pinpointed node");
        assert!(out.detail.ends_with(&format!("(mutated node {node})")), "{}", out.detail);
        assert!(run_case(Suite::Membership, 11, CaseOptions::default()).ok);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
    }

    #[test]
    fn a_few_cases_of_each_suite_pass() {
        for s in Suite::ALL {
            let summary = run_suite(s, 1, 3, CaseOptions::default());
            assert_eq!(summary.failed, 0, "{s}: {:?}", summary.failures);
        }
    }
}
