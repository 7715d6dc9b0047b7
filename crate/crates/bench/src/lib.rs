//! Fixtures shared by the benchmarks.

use robusthedge_core::{Claim, MarketTree, Payoff, TreeSpec};
use robusthedge_core::tree::Generator;

pub fn trinomial(depth: usize) -> MarketTree {
    MarketTree::build(&TreeSpec {
        dim: 1,
        depth,
        generator: Generator::Trinomial { u: 1.0 },
    })
    .expect("valid trinomial spec")
}

pub fn abs_claim(tree: &MarketTree) -> Claim {
    Payoff::Abs.claim(tree)
}
