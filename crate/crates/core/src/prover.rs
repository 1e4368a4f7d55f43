//! Attestation engine: occurrence trace, chained measurements and signed reports.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use serde::Serialize;
use sha2::Sha256;
use thiserror::Error;

use crate::exec::{run, Event, ExecutionLog, Fault, Inputs, Monitor, RunOptions};
use crate::instrument::{scan_code, IndirectTargetList, InstrumentationPlan, LintConfig, LintReport};
use crate::ir::{Addr, BlockId, ProgramCfg};

type HmacSha256 = Hmac<Sha256>;

pub const DEFAULT_MAX_ILLEGAL: usize = 16;
pub const REPORT_MAGIC: &[u8; 4] = b"CFA1";
pub const KEY_FILE_LEN: usize = 48;

pub type Nonce = [u8; 16];

#[derive(Clone, PartialEq, Eq)]
pub struct MeasurementKey(pub [u8; 16]);

#[derive(Clone, PartialEq, Eq)]
pub struct AttestationKey(pub [u8; 32]);

impl fmt::Debug for MeasurementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MeasurementKey(..)")
    }
}

impl fmt::Debug for AttestationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AttestationKey(..)")
    }
}

/// Pre-shared key pair; the key file is `k_m (16 bytes) || k_a (32 bytes)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Keys {
    pub k_m: MeasurementKey,
    pub k_a: AttestationKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("key material must be {KEY_FILE_LEN} bytes, got {0}")]
pub struct KeyLengthError(pub usize);

impl Keys {
    pub fn from_bytes(bytes: &[u8]) -> Result<Keys, KeyLengthError> {
        if bytes.len() != KEY_FILE_LEN {
            return Err(KeyLengthError(bytes.len()));
        }
        let mut k_m = [0u8; 16];
        let mut k_a = [0u8; 32];
        k_m.copy_from_slice(&bytes[..16]);
        k_a.copy_from_slice(&bytes[16..]);
        Ok(Keys { k_m: MeasurementKey(k_m), k_a: AttestationKey(k_a) })
    }

    pub fn to_bytes(&self) -> [u8; KEY_FILE_LEN] {
        let mut out = [0u8; KEY_FILE_LEN];
        out[..16].copy_from_slice(&self.k_m.0);
        out[16..].copy_from_slice(&self.k_a.0);
        out
    }

    pub fn random(rng: &mut impl RngCore) -> Keys {
        let mut bytes = [0u8; KEY_FILE_LEN];
        rng.fill_bytes(&mut bytes);
        Keys::from_bytes(&bytes).expect("fixed length")
    }
}

/// Deterministic nonce drawn from a ChaCha20 stream seeded with `seed`.
pub fn seeded_nonce(seed: u64) -> Nonce {
    let mut n = [0u8; 16];
    rand_chacha::ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut n);
    n
}

/// Keyed 32-bit MAC used for both measurement chains.
#[derive(Clone)]
pub struct Measurer {
    keyed: HmacSha256,
}

impl Measurer {
    pub fn new(key: &MeasurementKey) -> Measurer {
        Measurer { keyed: HmacSha256::new_from_slice(&key.0).expect("hmac accepts any key length") }
    }

    /// First four bytes (little-endian) of `HMAC-SHA256(k_m, prev_le || dest_le)`.
    pub fn step(&self, prev: u32, dest: Addr) -> u32 {
        let mut mac = self.keyed.clone();
        mac.update(&prev.to_le_bytes());
        mac.update(&dest.to_le_bytes());
        let tag = mac.finalize().into_bytes();
        u32::from_le_bytes([tag[0], tag[1], tag[2], tag[3]])
    }
}

pub fn measure_step(prev: u32, dest: Addr, key: &MeasurementKey) -> u32 {
    Measurer::new(key).step(prev, dest)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct MeasurementState {
    pub m_f: u32,
    pub m_b: u32,
}

/// Per-block execution counts plus the illegal indirect targets seen.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OccurrenceTrace {
    pub counts: BTreeMap<Addr, u64>,
    pub illegal: Vec<Addr>,
}

impl OccurrenceTrace {
    /// Bytes of trace payload: 8 per counted block.
    pub fn payload_bytes(&self) -> usize {
        8 * self.counts.len()
    }

    /// Authenticator size: trace entries, illegal targets and the two measurements.
    pub fn auth_bytes(&self) -> usize {
        self.payload_bytes() + 4 * self.illegal.len() + 8
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Compact authenticator: `(addr, count)` as two little-endian `u32` per entry, the
    /// illegal targets, then `m_f` and `m_b`. `None` if a count does not fit in 32 bits.
    pub fn encode_auth(&self, m_f: u32, m_b: u32) -> Option<Vec<u8>> {
        let mut out = Vec::with_capacity(self.auth_bytes());
        for (&a, &c) in &self.counts {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&u32::try_from(c).ok()?.to_le_bytes());
        }
        for &a in &self.illegal {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&m_f.to_le_bytes());
        out.extend_from_slice(&m_b.to_le_bytes());
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationReport {
    pub nonce: Nonce,
    pub trace: OccurrenceTrace,
    pub m_f: u32,
    pub m_b: u32,
    pub signature: [u8; 32],
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReportDecodeError {
    #[error("report truncated")]
    Truncated,
    #[error("bad report magic")]
    BadMagic,
    #[error("{0} trailing bytes after report")]
    Trailing(usize),
    #[error("trace entries not strictly ascending")]
    Unsorted,
}

/// Canonical bytes covered by the signature.
pub fn auth_bytes(nonce: &Nonce, trace: &OccurrenceTrace, m_f: u32, m_b: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 12 * trace.counts.len() + 4 * trace.illegal.len() + 8);
    out.extend_from_slice(REPORT_MAGIC);
    out.extend_from_slice(nonce);
    out.extend_from_slice(&(trace.counts.len() as u32).to_le_bytes());
    for (&a, &c) in &trace.counts {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(trace.illegal.len() as u32).to_le_bytes());
    for &a in &trace.illegal {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&m_f.to_le_bytes());
    out.extend_from_slice(&m_b.to_le_bytes());
    out
}

fn sign_bytes(bytes: &[u8], key: &AttestationKey) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("hmac accepts any key length");
    mac.update(bytes);
    mac.finalize().into_bytes().into()
}

pub fn sign_report(trace: OccurrenceTrace, m: MeasurementState, nonce: Nonce, key: &AttestationKey) -> AttestationReport {
    let signature = sign_bytes(&auth_bytes(&nonce, &trace, m.m_f, m.m_b), key);
    AttestationReport { nonce, trace, m_f: m.m_f, m_b: m.m_b, signature }
}

impl AttestationReport {
    pub fn signed_bytes(&self) -> Vec<u8> {
        auth_bytes(&self.nonce, &self.trace, self.m_f, self.m_b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AttestationReport, ReportDecodeError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != REPORT_MAGIC {
            return Err(ReportDecodeError::BadMagic);
        }
        let nonce: Nonce = cur.take(16)?.try_into().expect("16 bytes");
        let entries = cur.u32()? as usize;
        let mut counts = BTreeMap::new();
        let mut last: Option<Addr> = None;
        for _ in 0..entries {
            let a = cur.u32()?;
            let c = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            if last.is_some_and(|l| l >= a) {
                return Err(ReportDecodeError::Unsorted);
            }
            last = Some(a);
            counts.insert(a, c);
        }
        let n_illegal = cur.u32()? as usize;
        let mut illegal = Vec::with_capacity(n_illegal.min(1024));
        for _ in 0..n_illegal {
            illegal.push(cur.u32()?);
        }
        let m_f = cur.u32()?;
        let m_b = cur.u32()?;
        let signature: [u8; 32] = cur.take(32)?.try_into().expect("32 bytes");
        if cur.pos != bytes.len() {
            return Err(ReportDecodeError::Trailing(bytes.len() - cur.pos));
        }
        Ok(AttestationReport { nonce, trace: OccurrenceTrace { counts, illegal }, m_f, m_b, signature })
    }

    /// Signature check only.
    pub fn signature_valid(&self, key: &AttestationKey) -> bool {
        let mut mac = HmacSha256::new_from_slice(&key.0).expect("hmac accepts any key length");
        mac.update(&self.signed_bytes());
        mac.verify_slice(&self.signature).is_ok()
    }
}

/// True iff the signature matches the canonical bytes and the nonce is the expected one.
pub fn verify_signature(report: &AttestationReport, key: &AttestationKey, expected_nonce: &Nonce) -> bool {
    report.signature_valid(key) && &report.nonce == expected_nonce
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ReportDecodeError> {
        let end = self.pos.checked_add(n).ok_or(ReportDecodeError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ReportDecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ReportDecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Engine state held behind the attestation boundary.
#[derive(Clone)]
pub struct EngineState {
    measurer: Measurer,
    k_a: AttestationKey,
    pub nonce: Nonce,
    pub itl: IndirectTargetList,
    pub max_illegal: usize,
    pub trace: OccurrenceTrace,
    pub measurements: MeasurementState,
}

impl fmt::Debug for EngineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EngineState")
            .field("nonce", &hex::encode(self.nonce))
            .field("trace", &self.trace)
            .field("measurements", &self.measurements)
            .finish_non_exhaustive()
    }
}

impl EngineState {
    pub fn report_direct(&mut self, dest: Addr) {
        *self.trace.counts.entry(dest).or_insert(0) += 1;
    }

    pub fn report_indirect(&mut self, dest: Addr) -> Result<(), Fault> {
        if self.itl.contains(dest) {
            self.report_direct(dest);
        } else {
            if self.trace.illegal.len() >= self.max_illegal {
                return Err(Fault::IllegalOverflow { addr: dest });
            }
            self.trace.illegal.push(dest);
        }
        Ok(())
    }

    pub fn measure_forward(&mut self, dest: Addr) {
        self.measurements.m_f = self.measurer.step(self.measurements.m_f, dest);
    }

    pub fn measure_backward(&mut self, ret: Addr) {
        self.measurements.m_b = self.measurer.step(self.measurements.m_b, ret);
    }

    pub fn finish(self) -> AttestationReport {
        sign_report(self.trace, self.measurements, self.nonce, &self.k_a)
    }
}

pub fn init_engine(keys: &Keys, nonce: Nonce, itl: IndirectTargetList, max_illegal: usize) -> EngineState {
    EngineState {
        measurer: Measurer::new(&keys.k_m),
        k_a: keys.k_a.clone(),
        nonce,
        itl,
        max_illegal,
        trace: OccurrenceTrace::default(),
        measurements: MeasurementState::default(),
    }
}

/// Monitor driving the engine from instrumented sites.
pub struct InstrumentedRun<'a> {
    pub plan: &'a InstrumentationPlan,
    pub engine: EngineState,
}

impl Monitor for InstrumentedRun<'_> {
    fn on_block_entry(&mut self, block: BlockId, addr: Addr) -> Result<(), Fault> {
        if self.plan.is_direct(block) {
            self.engine.report_direct(addr);
            self.engine.measure_forward(addr);
        }
        Ok(())
    }

    fn on_indirect(&mut self, _site: BlockId, dest: Addr) -> Result<(), Fault> {
        self.engine.report_indirect(dest)?;
        self.engine.measure_forward(dest);
        Ok(())
    }

    fn on_return(&mut self, _site: BlockId, ret: Addr) -> Result<(), Fault> {
        self.engine.measure_backward(ret);
        Ok(())
    }
}

/// Wraps the engine monitor with steering (attack injection) from another monitor.
struct Steered<'a, S: Monitor> {
    inner: InstrumentedRun<'a>,
    steer: S,
}

impl<S: Monitor> Monitor for Steered<'_, S> {
    fn on_block_entry(&mut self, block: BlockId, addr: Addr) -> Result<(), Fault> {
        self.steer.on_block_entry(block, addr)?;
        self.inner.on_block_entry(block, addr)
    }
    fn on_indirect(&mut self, site: BlockId, dest: Addr) -> Result<(), Fault> {
        self.steer.on_indirect(site, dest)?;
        self.inner.on_indirect(site, dest)
    }
    fn on_return(&mut self, site: BlockId, ret: Addr) -> Result<(), Fault> {
        self.steer.on_return(site, ret)?;
        self.inner.on_return(site, ret)
    }
    fn on_event(&mut self, event: &Event) {
        self.steer.on_event(event)
    }
    fn steer_branch(&mut self, site: BlockId, natural: bool) -> bool {
        self.steer.steer_branch(site, natural)
    }
    fn steer_indirect(&mut self, site: BlockId, natural: Addr) -> Addr {
        self.steer.steer_indirect(site, natural)
    }
    fn steer_return(&mut self, site: BlockId, depth: usize, natural: Addr) -> Addr {
        self.steer.steer_return(site, depth, natural)
    }
}

#[derive(Clone, Debug)]
pub struct ProverConfig {
    pub max_illegal: usize,
    pub run: RunOptions,
    pub lint: LintConfig,
}

impl Default for ProverConfig {
    fn default() -> Self {
        ProverConfig { max_illegal: DEFAULT_MAX_ILLEGAL, run: RunOptions::default(), lint: LintConfig::default() }
    }
}

#[derive(Clone, Debug)]
pub struct ProverRun {
    /// Always produced, including after an abort (carrying the partial trace).
    pub report: AttestationReport,
    pub log: ExecutionLog,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProverError {
    #[error("program fails the code scan ({} findings)", .0.findings.len())]
    DirtyProgram(LintReport),
}

pub struct Attestation<'a> {
    pub cfg: &'a ProgramCfg,
    pub plan: &'a InstrumentationPlan,
    pub itl: &'a IndirectTargetList,
    pub keys: &'a Keys,
}

/// Executes the instrumented program and emits the signed report.
pub fn execute(
    att: &Attestation<'_>,
    nonce: Nonce,
    inputs: &Inputs,
    config: &ProverConfig,
) -> Result<ProverRun, ProverError> {
    execute_steered(att, nonce, inputs, config, crate::exec::NoMonitor)
}

/// [`execute`] with an extra monitor that may steer execution (attack injection).
pub fn execute_steered<S: Monitor>(
    att: &Attestation<'_>,
    nonce: Nonce,
    inputs: &Inputs,
    config: &ProverConfig,
    steer: S,
) -> Result<ProverRun, ProverError> {
    let lint = scan_code(att.cfg, &config.lint);
    if !lint.clean {
        return Err(ProverError::DirtyProgram(lint));
    }
    let engine = init_engine(att.keys, nonce, att.itl.clone(), config.max_illegal);
    let mut monitor = Steered { inner: InstrumentedRun { plan: att.plan, engine }, steer };
    let out = run(att.cfg, inputs, &config.run, &mut monitor);
    Ok(ProverRun { report: monitor.inner.engine.finish(), log: out.log, fault: out.fault })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_key() -> MeasurementKey {
        MeasurementKey(std::array::from_fn(|i| i as u8))
    }

    #[test]
    fn measure_step_golden_vectors() {
        assert_eq!(measure_step(0, 0x1000_0441, &seq_key()), 0x41e5_d58f);
        assert_eq!(measure_step(0, 0x1000_0441, &MeasurementKey([0; 16])), 0x96cb_d44e);
        assert_eq!(measure_step(0x41e5_d58f, 0x1000_0465, &seq_key()), 0x432d_296f);
        assert_eq!(measure_step(7, 9, &seq_key()), measure_step(7, 9, &seq_key()));
    }

    #[test]
    fn zero_report_golden_signature() {
        let r = sign_report(OccurrenceTrace::default(), MeasurementState::default(), [0; 16], &AttestationKey([0; 32]));
        let body = r.signed_bytes();
        assert_eq!(hex::encode(&body), format!("43464131{}", "00".repeat(32)));
        assert_eq!(hex::encode(r.signature), "7896992d535601737b682ab69dcd89c1ea57e364eab0763d188ff72b78f70b22");
    }

    #[test]
    fn report_round_trip_and_tamper() {
        let trace = OccurrenceTrace { counts: BTreeMap::from([(0x10, 3), (0x20, 1)]), illegal: vec![0x99] };
        let key = AttestationKey([7; 32]);
        let r = sign_report(trace, MeasurementState { m_f: 5, m_b: 6 }, [1; 16], &key);
        let bytes = r.to_bytes();
        assert_eq!(AttestationReport::from_bytes(&bytes).unwrap(), r);
        assert!(verify_signature(&r, &key, &[1; 16]));
        assert!(!verify_signature(&r, &key, &[2; 16]));
        let mut t = r.clone();
        t.m_f ^= 1;
        assert!(!verify_signature(&t, &key, &[1; 16]));
        let mut raw = bytes.clone();
        raw[28] ^= 0x80;
        assert!(!verify_signature(&AttestationReport::from_bytes(&raw).unwrap(), &key, &[1; 16]));
        assert_eq!(AttestationReport::from_bytes(&bytes[..bytes.len() - 1]), Err(ReportDecodeError::Truncated));
    }

    #[test]
    fn engine_illegal_cap() {
        let keys = Keys::from_bytes(&[0u8; 48]).unwrap();
        let mut e = init_engine(&keys, [0; 16], IndirectTargetList::default(), 0);
        assert_eq!(e.report_indirect(0x1234), Err(Fault::IllegalOverflow { addr: 0x1234 }));
        let mut e = init_engine(&keys, [0; 16], IndirectTargetList::default(), 16);
        for i in 0..16 {
            e.report_indirect(i).unwrap();
        }
        assert!(e.report_indirect(99).is_err());
        assert_eq!(e.trace.illegal.len(), 16);
    }

    #[test]
    fn fresh_engines_are_identical() {
        let keys = Keys::from_bytes(&[3u8; 48]).unwrap();
        let a = init_engine(&keys, [9; 16], IndirectTargetList::default(), 16);
        let b = init_engine(&keys, [9; 16], IndirectTargetList::default(), 16);
        assert_eq!(a.measurements, MeasurementState { m_f: 0, m_b: 0 });
        assert!(a.trace.counts.is_empty() && a.trace.illegal.is_empty());
        assert_eq!(a.clone().finish(), b.finish());
    }

    #[test]
    fn key_file_round_trip() {
        let bytes: Vec<u8> = (0..48).collect();
        let keys = Keys::from_bytes(&bytes).unwrap();
        assert_eq!(keys.to_bytes().to_vec(), bytes);
        assert_eq!(Keys::from_bytes(&bytes[..47]), Err(KeyLengthError(47)));
    }
}
