//! Path-dependent claims on the leaves of a scenario tree.
//!
//! Named payoffs act on the scalar observable `s(x) = x_1 + ... + x_d`
//! (the spot itself when `d = 1`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ExtReal, Scalar};
use crate::tree::{MarketTree, NodeId};

/// Terminal values indexed by leaf id; `+inf` is unrepresentable.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Claim {
    pub values: BTreeMap<NodeId, ExtReal<f64>>,
}

impl Claim {
    pub fn from_fn(tree: &MarketTree, mut f: impl FnMut(NodeId) -> ExtReal<f64>) -> Self {
        Claim {
            values: tree.leaves().map(|l| (l, f(l))).collect(),
        }
    }

    pub fn constant(tree: &MarketTree, c: f64) -> Self {
        Self::from_fn(tree, |_| ExtReal::Finite(c))
    }

    pub fn get(&self, leaf: NodeId) -> Option<&ExtReal<f64>> {
        self.values.get(&leaf)
    }

    /// Value at `leaf` in the requested backend; `-inf` when absent.
    pub fn value_as<S: Scalar>(&self, leaf: NodeId) -> ExtReal<S> {
        self.values
            .get(&leaf)
            .map(|v| v.convert())
            .unwrap_or(ExtReal::NegInf)
    }

    pub fn neg_inf_leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.values
            .iter()
            .filter(|(_, v)| v.is_neg_inf())
            .map(|(k, _)| *k)
    }

    /// Errors unless the claim covers exactly the leaves of `tree`.
    pub fn check_covers(&self, tree: &MarketTree) -> Result<()> {
        for l in tree.leaves() {
            if !self.values.contains_key(&l) {
                return Err(Error::InvalidClaim(format!("no value for leaf {l}")));
            }
        }
        for k in self.values.keys() {
            if !tree.contains(*k) || !tree.is_leaf(*k) {
                return Err(Error::InvalidClaim(format!("node {k} is not a leaf")));
            }
        }
        Ok(())
    }

    /// Pointwise `self + lambda * s(B_N)`.
    pub fn add_linear(&self, tree: &MarketTree, lambda: f64) -> Claim {
        Claim {
            values: self
                .values
                .iter()
                .map(|(l, v)| {
                    let v = match v {
                        ExtReal::NegInf => ExtReal::NegInf,
                        ExtReal::Finite(x) => ExtReal::Finite(x + lambda * observable(tree.spot(*l))),
                    };
                    (*l, v)
                })
                .collect(),
        }
    }
}

fn observable(x: &[f64]) -> f64 {
    x.iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payoff {
    Call(f64),
    Put(f64),
    Abs,
    Square,
    Linear,
    /// `(max_t s(B_t) - k)^+`
    Lookback(f64),
    /// `(mean_{t=1..N} s(B_t) - k)^+`
    Asian(f64),
    /// `1{s(B_N) >= k}`
    Digital(f64),
}

impl Payoff {
    pub fn evaluate(&self, tree: &MarketTree, leaf: NodeId) -> f64 {
        let path = tree.path_to(leaf);
        let s: Vec<f64> = path.0.iter().map(|&n| observable(tree.spot(n))).collect();
        let last = *s.last().expect("path is never empty");
        match *self {
            Payoff::Call(k) => (last - k).max(0.0),
            Payoff::Put(k) => (k - last).max(0.0),
            Payoff::Abs => last.abs(),
            Payoff::Square => last * last,
            Payoff::Linear => last,
            Payoff::Lookback(k) => (s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - k).max(0.0),
            Payoff::Asian(k) => {
                let avg = s[1..].iter().sum::<f64>() / (s.len() - 1) as f64;
                (avg - k).max(0.0)
            }
            Payoff::Digital(k) => {
                if last >= k {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn claim(&self, tree: &MarketTree) -> Claim {
        Claim::from_fn(tree, |l| ExtReal::Finite(self.evaluate(tree, l)))
    }
}

impl FromStr for Payoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::InvalidClaim("empty payoff name".into()))?;
        let strike = |parts: &mut std::str::SplitWhitespace<'_>| -> Result<f64> {
            let raw = parts
                .next()
                .ok_or_else(|| Error::InvalidClaim(format!("payoff {name:?} needs a strike")))?;
            let k: f64 = raw
                .parse()
                .map_err(|_| Error::InvalidClaim(format!("bad strike {raw:?} in {s:?}")))?;
            if !k.is_finite() {
                return Err(Error::InvalidClaim(format!("non-finite strike in {s:?}")));
            }
            Ok(k)
        };
        let payoff = match name {
            "call" => Payoff::Call(strike(&mut parts)?),
            "put" => Payoff::Put(strike(&mut parts)?),
            "lookback" => Payoff::Lookback(strike(&mut parts)?),
            "asian" => Payoff::Asian(strike(&mut parts)?),
            "digital" => Payoff::Digital(strike(&mut parts)?),
            "abs" => Payoff::Abs,
            "square" => Payoff::Square,
            "linear" => Payoff::Linear,
            other => return Err(Error::InvalidClaim(format!("unknown payoff {other:?}"))),
        };
        if parts.next().is_some() {
            return Err(Error::InvalidClaim(format!("trailing tokens in payoff {s:?}")));
        }
        Ok(payoff)
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Call(k) => write!(f, "call {k}"),
            Payoff::Put(k) => write!(f, "put {k}"),
            Payoff::Abs => write!(f, "abs"),
            Payoff::Square => write!(f, "square"),
            Payoff::Linear => write!(f, "linear"),
            Payoff::Lookback(k) => write!(f, "lookback {k}"),
            Payoff::Asian(k) => write!(f, "asian {k}"),
            Payoff::Digital(k) => write!(f, "digital {k}"),
        }
    }
}

/// Configuration form of a claim: a named payoff or an explicit leaf table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimSpec {
    Named(String),
    Table {
        #[serde(deserialize_with = "leaf_table")]
        table: BTreeMap<NodeId, ExtReal<f64>>,
    },
}

// Untagged enums buffer map keys as strings, so ids are parsed by hand.
fn leaf_table<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<NodeId, ExtReal<f64>>, D::Error> {
    let raw = BTreeMap::<String, ExtReal<f64>>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|id| (NodeId(id), v))
                .map_err(|_| serde::de::Error::custom(format!("bad leaf id {k:?}")))
        })
        .collect()
}

impl ClaimSpec {
    pub fn resolve(&self, tree: &MarketTree) -> Result<Claim> {
        match self {
            ClaimSpec::Named(name) => Ok(name.parse::<Payoff>()?.claim(tree)),
            ClaimSpec::Table { table } => {
                let claim = Claim {
                    values: table.clone(),
                };
                claim.check_covers(tree)?;
                Ok(claim)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Generator, TreeSpec};

    fn tri(depth: usize) -> MarketTree {
        MarketTree::build(&TreeSpec {
            dim: 1,
            depth,
            generator: Generator::Trinomial { u: 1.0 },
        })
        .unwrap()
    }

    #[test]
    fn named_payoffs() {
        let t = tri(2);
        // leaf 4: path 0 -> 1 (x=-1) -> 4 (x=-2)
        assert_eq!(t.spot(NodeId(4)), &[-2.0]);
        assert_eq!(Payoff::Abs.evaluate(&t, NodeId(4)), 2.0);
        assert_eq!(Payoff::Put(0.0).evaluate(&t, NodeId(4)), 2.0);
        assert_eq!(Payoff::Asian(-2.0).evaluate(&t, NodeId(4)), 0.5);
        // leaf 10: path 0 -> 3 (x=1) -> 10 (x=0)
        assert_eq!(t.spot(NodeId(10)), &[0.0]);
        assert_eq!(Payoff::Lookback(0.0).evaluate(&t, NodeId(10)), 1.0);
        assert_eq!(Payoff::Digital(0.0).evaluate(&t, NodeId(10)), 1.0);
        assert_eq!(Payoff::Call(0.5).evaluate(&t, NodeId(10)), 0.0);
    }

    #[test]
    fn parse_and_display() {
        for s in ["call 1", "put -0.5", "abs", "lookback 2", "asian 0", "digital 1", "square", "linear"] {
            let p: Payoff = s.parse().unwrap();
            assert_eq!(p.to_string().parse::<Payoff>().unwrap(), p);
        }
        assert!("call".parse::<Payoff>().is_err());
        assert!("strangle 1".parse::<Payoff>().is_err());
        assert!("abs 3".parse::<Payoff>().is_err());
    }

    #[test]
    fn table_claims_must_cover_leaves() {
        let t = tri(1);
        let spec: ClaimSpec =
            serde_json::from_str(r#"{"table":{"1":1,"2":"-inf","3":1}}"#).unwrap();
        let c = spec.resolve(&t).unwrap();
        assert_eq!(c.neg_inf_leaves().collect::<Vec<_>>(), vec![NodeId(2)]);
        let partial: ClaimSpec = serde_json::from_str(r#"{"table":{"1":1}}"#).unwrap();
        assert!(partial.resolve(&t).is_err());
        let named: ClaimSpec = serde_json::from_str(r#""abs""#).unwrap();
        assert_eq!(named.resolve(&t).unwrap().get(NodeId(1)), Some(&ExtReal::Finite(1.0)));
    }
}
