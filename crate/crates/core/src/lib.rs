//! Control-flow attestation over a small control-flow IR.

pub mod attack;
pub mod corpus;
pub mod exec;
pub mod instrument;
pub mod ir;
pub mod prepared;
pub mod protocol;
pub mod prover;
pub mod schemes;
pub mod verifier;

pub use attack::AttackSpec;
pub use exec::{Inputs, Fault};
pub use instrument::{IndirectTargetList, InstrumentationPlan};
pub use ir::{Addr, BlockId, ProgramCfg};
pub use prepared::PreparedProgram;
pub use prover::{AttestationReport, Keys, Nonce, OccurrenceTrace};
pub use schemes::{Scheme, SizeReport};
pub use verifier::{Reason, Verdict, VerifyOptions};
