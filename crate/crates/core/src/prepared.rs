//! A program loaded together with everything both parties derive from it.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Inputs;
use crate::instrument::{build_itl, plan_instrumentation, IndirectTargetList, InstrumentationPlan, TrainingError};
use crate::ir::{compute_dominators, DominatorInfo, LoadError, ProgramCfg};
use crate::prover::{Attestation, Keys, Nonce};
use crate::verifier::{VerifierContext, VerifyOptions};

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

#[derive(Clone, Debug)]
pub struct PreparedProgram {
    pub cfg: ProgramCfg,
    pub dom: DominatorInfo,
    pub plan: InstrumentationPlan,
    pub itl: IndirectTargetList,
}

impl PreparedProgram {
    /// Parses, validates and plans `text`; `training` inputs widen the indirect target list.
    pub fn load(text: &str, training: &[Inputs]) -> Result<PreparedProgram, PrepareError> {
        let cfg = ProgramCfg::load(text)?;
        let itl = build_itl(&cfg, training)?;
        Ok(PreparedProgram::with_itl(cfg, itl))
    }

    pub fn with_itl(cfg: ProgramCfg, itl: IndirectTargetList) -> PreparedProgram {
        let dom = compute_dominators(&cfg);
        let plan = plan_instrumentation(&cfg, &dom);
        PreparedProgram { cfg, dom, plan, itl }
    }

    /// SHA-256 over the canonical CFG JSON followed by the plan JSON.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.cfg.to_json());
        h.update(self.plan.to_json(&self.cfg));
        h.finalize().into()
    }

    pub fn attestation<'a>(&'a self, keys: &'a Keys) -> Attestation<'a> {
        Attestation { cfg: &self.cfg, plan: &self.plan, itl: &self.itl, keys }
    }

    pub fn verifier<'a>(&'a self, keys: &'a Keys, expected_nonce: Nonce, options: VerifyOptions) -> VerifierContext<'a> {
        VerifierContext { cfg: &self.cfg, plan: &self.plan, itl: &self.itl, keys, expected_nonce, options }
    }
}
