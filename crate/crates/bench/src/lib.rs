//! Fixtures shared by the attestation benchmarks.

use cfa_core::corpus::builtin;
use cfa_core::exec::RunOptions;
use cfa_core::prover::{execute, ProverConfig, ProverRun};
use cfa_core::verifier::{DataMode, VerifyOptions};
use cfa_core::{AttestationReport, Inputs, Keys, Nonce, PreparedProgram};

pub const NONCE: Nonce = [0x5c; 16];

pub struct Workload {
    pub name: String,
    pub program: PreparedProgram,
    pub inputs: Inputs,
    pub keys: Keys,
}

impl Workload {
    /// Loads a bundled program or generator instance (see `corpus::builtin`).
    pub fn builtin(name: &str) -> Workload {
        let (text, inputs) = builtin(name).unwrap_or_else(|| panic!("unknown builtin {name}"));
        let program = PreparedProgram::load(&text, &[]).expect("bundled programs load");
        Workload { name: name.to_string(), program, inputs, keys: Keys::from_bytes(&[0x42; 48]).unwrap() }
    }

    pub fn prover_config(record_events: bool) -> ProverConfig {
        ProverConfig { run: RunOptions { record_events, ..RunOptions::default() }, ..ProverConfig::default() }
    }

    pub fn prove(&self, record_events: bool) -> ProverRun {
        execute(&self.program.attestation(&self.keys), NONCE, &self.inputs, &Self::prover_config(record_events))
            .expect("bundled programs attest")
    }

    pub fn report(&self) -> AttestationReport {
        self.prove(false).report
    }

    pub fn verify_options(&self, data: DataMode) -> VerifyOptions {
        VerifyOptions { data, ..VerifyOptions::default() }
    }
}
