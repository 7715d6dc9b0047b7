pub mod claim;
pub mod counterexample;
pub mod dual;
pub mod error;
pub mod family;
pub mod hedge;
pub mod lp;
pub mod measure;
pub mod oracle;
pub mod quadrature;
pub mod scalar;
pub mod suite;
pub mod tree;

pub use claim::{Claim, ClaimSpec, Payoff};
pub use dual::{backward_solve, backward_value, one_step_sup, DualSolution, ValueField};
pub use error::{Error, Result};
pub use family::{FamilyClass, FamilySpec, OneStepPolytope};
pub use hedge::{extract_strategy, primal_lp, verify_superhedge, Strategy, SuperhedgeReport};
pub use measure::{Kernel, TreeMeasure};
pub use oracle::global_sup_lp;
pub use scalar::{ExtReal, Rational, Scalar};
pub use tree::{MarketTree, NodeId, StoppingTime, TreePath, TreeSpec};
