//! Distributed mechanisms for unicast and multirate-multicast rate
//! allocation, together with a centralized convex oracle and tooling to
//! construct and check Nash equilibria of the induced games.

// Index loops mirror the set notation; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod generate;
pub mod graph;
pub mod instance;
pub mod mechanism;
pub mod oracle;
pub mod valuation;

pub use instance::{IndexSets, ProblemInstance, Protocol};
pub use mechanism::{Game, Mechanism, Profile, Topology, TopologyOptions};
pub use oracle::{CentralSolution, SolverOptions};
pub use valuation::{Family, Valuation, ValuationSpec};
