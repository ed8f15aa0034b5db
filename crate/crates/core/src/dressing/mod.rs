//! Dressing of bare response cumulants by retarded propagators: a
//! brute-force functional oracle, the connected-diagram engine, and the
//! closed solutions in terms of dressed cumulants.

pub mod cumulants;
pub mod diagrams;
pub mod mean_field;
pub mod oracle;
pub mod poly;
pub mod solution;

pub use cumulants::{CausalPropagator, CumulantBand, CumulantKind, CumulantSet, Propagators};
pub use diagrams::{dress_by_diagrams, enumerate_diagrams, evaluate_diagram, Diagram};
pub use mean_field::{mean_field_identity, MeanFieldRun};
pub use oracle::{dress_functional_oracle, OracleOutput};
pub use poly::{FunctionalPoly, Monomial, Pairing, Truncation};
