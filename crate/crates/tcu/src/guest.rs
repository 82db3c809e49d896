//! Deterministic guest execution substrate shared by both backends.
//!
//! A guest is a pure function over (external-input payloads, predecessor
//! receipts, confidential internal input, public parameters) producing a
//! journal. Both backends run guests through the same [`GuestVm`], which
//! meters every primitive; the SimZk backend additionally folds each step
//! into a transcript hash. One transcript entry is appended per primitive:
//! a fixed-point arithmetic op, one 64-byte hash block, or one signature
//! verification. `cycle_count` is the number of entries. The full primitive
//! set is documented in `docs/guest-abi.md`.

use sha2::{Digest as _, Sha256};
use std::time::Instant;
use thiserror::Error;

use crate::encode::{
    put_array32, put_bytes, put_count, ByteReader, CanonicalDecode, CanonicalEncode, DecodeError,
};
use crate::softtee::{self, AttestationDocument};
use crate::types::{BackendKind, ProgramId, Receipt};

/// Fixed-point value, Q16.16.
pub type Fx = i32;

/// 1.0 in Q16.16.
pub const FX_ONE: Fx = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuestError {
    #[error("predecessor {index}: {reason}")]
    Eiv { index: usize, reason: String },
    #[error("dataset signature does not verify")]
    BadDatasetSignature,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("round mismatch across input models")]
    RoundMismatch,
    #[error("weight count {weights} does not match model count {models}")]
    WeightCountMismatch { weights: usize, models: usize },
    #[error("weights do not sum to one within tolerance")]
    UnnormalizedWeights,
    #[error("cycle budget exceeded: limit {limit}, observed {observed}")]
    CycleBudgetExceeded { limit: u64, observed: u64 },
    #[error("malformed guest input: {0}")]
    Malformed(String),
}

impl From<DecodeError> for GuestError {
    fn from(e: DecodeError) -> Self {
        GuestError::Malformed(e.to_string())
    }
}

/// Execution phases tracked for metrics. EIV and the commit step are part
/// of the proven computation, so their cycles count like any other work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Eiv = 0,
    Execute = 1,
    Commit = 2,
}

/// Transcript op tags. The `aux` word for arithmetic ops is the low 32 bits
/// of the result; hash blocks record their block ordinal and signature
/// verifications their boolean outcome, so the commitment salt never
/// reaches the transcript.
#[derive(Debug, Clone, Copy)]
pub enum Op {
    Add = 1,
    Mul = 2,
    Relu = 3,
    HashBlock = 4,
    SigVerify = 5,
}

/// Per-phase and total execution metrics. Wall-clock numbers are for
/// reporting only; cycle counts are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ExecMetrics {
    pub cycles_total: u64,
    pub cycles_by_phase: [u64; 3],
    pub wall_by_phase_ns: [u128; 3],
}

impl ExecMetrics {
    pub fn cycles(&self, phase: Phase) -> u64 {
        self.cycles_by_phase[phase as usize]
    }

    pub fn wall_ns(&self, phase: Phase) -> u128 {
        self.wall_by_phase_ns[phase as usize]
    }
}

/// Incremental transcript hasher. Entries are 5 bytes (tag, aux) and are
/// buffered before being fed to SHA-256 so metering stays cheap.
struct Transcript {
    hasher: Sha256,
    buf: Vec<u8>,
}

const TRANSCRIPT_FLUSH: usize = 4096;

impl Transcript {
    fn new() -> Self {
        Self {
            hasher: Sha256::new(),
            buf: Vec::with_capacity(TRANSCRIPT_FLUSH + 8),
        }
    }

    #[inline]
    fn entry(&mut self, tag: u8, aux: u32) {
        self.buf.push(tag);
        self.buf.extend_from_slice(&aux.to_be_bytes());
        if self.buf.len() >= TRANSCRIPT_FLUSH {
            self.hasher.update(&self.buf);
            self.buf.clear();
        }
    }

    fn root(mut self) -> [u8; 32] {
        if !self.buf.is_empty() {
            self.hasher.update(&self.buf);
        }
        self.hasher.finalize().into()
    }
}

/// The metered execution environment handed to guest code.
///
/// Guests perform all observable work through this handle: fixed-point
/// arithmetic, hashing and signature verification. Budget enforcement
/// happens at [`GuestVm::checkpoint`] calls placed at row/model boundaries.
pub struct GuestVm {
    transcript: Option<Transcript>,
    cycles: u64,
    budget: Option<u64>,
    phase: Phase,
    phase_cycles: [u64; 3],
    phase_wall_ns: [u128; 3],
    phase_started: Instant,
}

impl GuestVm {
    /// Plain metering VM (SoftTee path): cycles are counted, no transcript.
    pub fn metering() -> Self {
        Self::build(false, None)
    }

    /// Recording VM (SimZk path): cycles counted and folded into a
    /// transcript hash, with an optional cycle budget.
    pub fn recording(budget: Option<u64>) -> Self {
        Self::build(true, budget)
    }

    fn build(record: bool, budget: Option<u64>) -> Self {
        Self {
            transcript: record.then(Transcript::new),
            cycles: 0,
            budget,
            phase: Phase::Eiv,
            phase_cycles: [0; 3],
            phase_wall_ns: [0; 3],
            phase_started: Instant::now(),
        }
    }

    pub fn set_phase(&mut self, phase: Phase) {
        let elapsed = self.phase_started.elapsed().as_nanos();
        self.phase_wall_ns[self.phase as usize] += elapsed;
        self.phase_started = Instant::now();
        self.phase = phase;
    }

    #[inline]
    fn step(&mut self, tag: u8, aux: u32) {
        self.cycles += 1;
        self.phase_cycles[self.phase as usize] += 1;
        if let Some(t) = &mut self.transcript {
            t.entry(tag, aux);
        }
    }

    /// Saturating Q16.16 addition.
    #[inline]
    pub fn add(&mut self, a: Fx, b: Fx) -> Fx {
        let r = a.saturating_add(b);
        self.step(Op::Add as u8, r as u32);
        r
    }

    /// Saturating Q16.16 subtraction.
    #[inline]
    pub fn sub(&mut self, a: Fx, b: Fx) -> Fx {
        let r = a.saturating_sub(b);
        self.step(Op::Add as u8, r as u32);
        r
    }

    /// Metered i64 accumulator addition (Q32.32 intermediates).
    #[inline]
    pub fn acc_add(&mut self, acc: i64, term: i64) -> i64 {
        let r = acc.saturating_add(term);
        self.step(Op::Add as u8, r as u32);
        r
    }

    /// Metered i64 product of two Q16.16 values (a Q32.32 intermediate).
    #[inline]
    pub fn mul_q32(&mut self, a: Fx, b: Fx) -> i64 {
        let p = a as i64 * b as i64;
        self.step(Op::Mul as u8, p as u32);
        p
    }

    /// Q16.16 multiplication, rounding half up (toward +inf), saturating.
    #[inline]
    pub fn mul(&mut self, a: Fx, b: Fx) -> Fx {
        let wide = (a as i64 * b as i64 + (1 << 15)) >> 16;
        let r = wide.clamp(i32::MIN as i64, i32::MAX as i64) as Fx;
        self.step(Op::Mul as u8, r as u32);
        r
    }

    #[inline]
    pub fn relu(&mut self, a: Fx) -> Fx {
        let r = a.max(0);
        self.step(Op::Relu as u8, r as u32);
        r
    }

    /// Dot product of equal-length Q16.16 vectors, accumulated exactly in
    /// Q32.32 before a single rounding by the caller.
    pub fn dot_q32(&mut self, xs: &[Fx], ys: &[Fx]) -> i64 {
        debug_assert_eq!(xs.len(), ys.len());
        let mut acc: i64 = 0;
        for (&x, &y) in xs.iter().zip(ys) {
            let p = x as i64 * y as i64;
            self.step(Op::Mul as u8, p as u32);
            acc = acc.saturating_add(p);
            self.step(Op::Add as u8, acc as u32);
        }
        acc
    }

    /// Rounds a Q32.32 accumulator to Q16.16, half up, saturating.
    #[inline]
    pub fn round_q32(&mut self, acc: i64) -> Fx {
        let r = ((acc + (1 << 15)) >> 16).clamp(i32::MIN as i64, i32::MAX as i64) as Fx;
        self.step(Op::Add as u8, r as u32);
        r
    }

    /// Metered SHA-256: one transcript entry per 64-byte compression block.
    /// Entries record block ordinals, not data, so private bytes never
    /// shape the transcript.
    pub fn hash(&mut self, bytes: &[u8]) -> [u8; 32] {
        let blocks = (bytes.len().div_ceil(64)).max(1) as u32;
        for i in 0..blocks {
            self.step(Op::HashBlock as u8, i);
        }
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        hasher.finalize().into()
    }

    /// Metered Ed25519 verification: one entry for the curve check plus the
    /// hash-block entries for digesting the message.
    pub fn verify_signature(&mut self, public_key: &[u8; 32], message: &[u8], sig: &[u8]) -> bool {
        let blocks = (message.len().div_ceil(64)).max(1) as u32;
        for i in 0..blocks {
            self.step(Op::HashBlock as u8, i);
        }
        let ok = softtee::verify_signature(public_key, message, sig);
        self.step(Op::SigVerify as u8, ok as u32);
        ok
    }

    /// Budget check; guests call this at row/model boundaries so the
    /// overshoot past a budget is bounded by one checkpoint interval.
    pub fn checkpoint(&self) -> Result<(), GuestError> {
        if let Some(limit) = self.budget {
            if self.cycles > limit {
                return Err(GuestError::CycleBudgetExceeded {
                    limit,
                    observed: self.cycles,
                });
            }
        }
        Ok(())
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Finalizes metering; returns metrics and, for a recording VM, the
    /// transcript root.
    pub fn finish(mut self) -> (ExecMetrics, Option<[u8; 32]>) {
        let elapsed = self.phase_started.elapsed().as_nanos();
        self.phase_wall_ns[self.phase as usize] += elapsed;
        let metrics = ExecMetrics {
            cycles_total: self.cycles,
            cycles_by_phase: self.phase_cycles,
            wall_by_phase_ns: self.phase_wall_ns,
        };
        (metrics, self.transcript.map(Transcript::root))
    }
}

/// Verification material for one allowed predecessor program, resolved from
/// the registry at manifest-load time and baked into the guest context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredecessorKey {
    pub program_id: ProgramId,
    pub backend_kind: BackendKind,
    pub verification_key: Vec<u8>,
    /// Present for SoftTee predecessors.
    pub attestation: Option<AttestationDocument>,
}

impl PredecessorKey {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.program_id.as_bytes());
        self.backend_kind.encode_into(out);
        put_bytes(out, &self.verification_key);
        crate::encode::put_option(out, self.attestation.as_ref(), |o, a| a.encode_into(o));
    }

    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            program_id: ProgramId(reader.read_array32()?),
            backend_kind: BackendKind::decode_from(reader)?,
            verification_key: reader.read_bytes()?,
            attestation: reader.read_option(AttestationDocument::decode_from)?,
        })
    }
}

/// Everything a guest sees. Pure data: guests never touch the registry or
/// any other ambient state.
#[derive(Debug, Clone)]
pub struct GuestInput<'a> {
    /// External-input payloads, one per predecessor receipt, same order.
    pub ein_payloads: &'a [Vec<u8>],
    pub ein_receipts: &'a [Receipt],
    /// Confidential internal input.
    pub iin: &'a [u8],
    /// Public caller parameters.
    pub params: &'a [u8],
    /// Commitment salt; used only for the in-guest commit step.
    pub iin_salt: &'a [u8; 32],
    /// Predecessor verification material plus the root-of-trust key.
    pub keys: &'a GuestKeySet,
}

/// Predecessor key table plus the attestation root, as baked into guest
/// parameters at manifest-load time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GuestKeySet {
    pub root_public_key: [u8; 32],
    pub predecessors: Vec<PredecessorKey>,
}

impl GuestKeySet {
    pub fn find(&self, id: &ProgramId) -> Option<&PredecessorKey> {
        self.predecessors.iter().find(|k| k.program_id == *id)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_array32(&mut out, &self.root_public_key);
        put_count(&mut out, self.predecessors.len());
        for k in &self.predecessors {
            k.encode_into(&mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = ByteReader::new(bytes);
        let root_public_key = reader.read_array32()?;
        let n = reader.read_count()?;
        let mut predecessors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            predecessors.push(PredecessorKey::decode_from(&mut reader)?);
        }
        reader.finish()?;
        Ok(Self {
            root_public_key,
            predecessors,
        })
    }
}

/// What a guest hands back: the public journal and the commitment to its
/// internal input, both covered by the backend seal.
#[derive(Debug, Clone)]
pub struct GuestOutcome {
    pub journal: Vec<u8>,
    pub iin_commitment: crate::types::InputCommitment,
}

/// In-guest external input verification for one predecessor receipt.
///
/// Rebuilds the sealed record from the supplied payload (so a payload that
/// differs from the sealed journal fails), checks the backend seal against
/// the baked-in key table, and recomputes the receipt digest. This runs
/// inside the proven computation; the host-side check in the pipeline is
/// the fail-fast copy of the same logic.
pub fn eiv_check(
    vm: &mut GuestVm,
    index: usize,
    payload: &[u8],
    receipt: &Receipt,
    keys: &GuestKeySet,
) -> Result<(), GuestError> {
    let key = keys.find(&receipt.program_id).ok_or_else(|| GuestError::Eiv {
        index,
        reason: format!("program {} not an allowed predecessor", receipt.program_id),
    })?;
    if key.backend_kind != receipt.backend_kind {
        return Err(GuestError::Eiv {
            index,
            reason: "receipt backend does not match registered backend".into(),
        });
    }

    let record = Receipt::sealed_record(
        &receipt.program_id,
        payload,
        &receipt.iin_commitment,
        &receipt.ein_refs,
    );
    let seal_ok = match receipt.backend_kind {
        BackendKind::SoftTee => {
            let Some(att) = &key.attestation else {
                return Err(GuestError::Eiv {
                    index,
                    reason: "registered SoftTee predecessor lacks attestation".into(),
                });
            };
            // metered pieces: attestation check + record signature
            let att_preimage = AttestationDocument::signed_preimage(
                &att.measurement,
                &att.tee_public_key,
                att.issued_at,
            );
            let att_ok =
                vm.verify_signature(&keys.root_public_key, &att_preimage, &att.root_signature);
            let Ok(vk32) = <[u8; 32]>::try_from(key.verification_key.as_slice()) else {
                return Err(GuestError::Eiv {
                    index,
                    reason: "registered verification key is not 32 bytes".into(),
                });
            };
            att_ok
                && att.measurement == receipt.program_id
                && att.tee_public_key == vk32
                && vm.verify_signature(&vk32, &record, &receipt.seal)
        }
        BackendKind::SimZk => {
            crate::simzk::verify_metered(vm, &receipt.seal, &record, &receipt.program_id)
        }
    };
    if !seal_ok {
        return Err(GuestError::Eiv {
            index,
            reason: "seal verification failed".into(),
        });
    }

    // digest recompute, metered as hashing work
    let digest = vm.hash(&receipt.digest_preimage());
    if digest != receipt.receipt_digest.0 {
        return Err(GuestError::Eiv {
            index,
            reason: "receipt digest does not recompute".into(),
        });
    }
    Ok(())
}

/// Runs the commit step inside the guest: commitment to the internal input
/// under the supplied salt, metered as hashing work.
pub fn commit_iin(vm: &mut GuestVm, iin: &[u8], salt: &[u8; 32]) -> crate::types::InputCommitment {
    vm.set_phase(Phase::Commit);
    // tag byte + salt + payload is what the hash covers
    let blocks = ((1 + 32 + iin.len()).div_ceil(64)).max(1) as u32;
    for i in 0..blocks {
        vm.step(Op::HashBlock as u8, i);
    }
    crate::types::commit(iin, salt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_rounds_half_up() {
        let mut vm = GuestVm::metering();
        // 1.5 * 1.5 = 2.25
        let r = vm.mul(3 << 15, 3 << 15);
        assert_eq!(r, 9 << 14);
        // 0.5 * (1/65536): product is 0.5 ulp, rounds up to 1
        assert_eq!(vm.mul(1 << 15, 1), 1);
        // negative half rounds toward +inf: -0.5 ulp -> 0
        assert_eq!(vm.mul(-(1 << 15), 1), 0);
    }

    #[test]
    fn cycles_count_every_primitive() {
        let mut vm = GuestVm::metering();
        vm.add(1, 2);
        vm.mul(FX_ONE, FX_ONE);
        vm.relu(-5);
        vm.hash(&[0u8; 130]); // 3 blocks of 64 bytes, ceil
        let cycles = vm.cycles();
        // add + mul + relu + 3 hash blocks (ceil(130/64) = 3)
        assert_eq!(cycles, 6);
    }

    #[test]
    fn transcript_root_deterministic_and_op_sensitive() {
        let run = |ops: &[(Fx, Fx)]| {
            let mut vm = GuestVm::recording(None);
            for &(a, b) in ops {
                vm.mul(a, b);
            }
            vm.finish().1.unwrap()
        };
        let a = run(&[(FX_ONE, FX_ONE), (2 * FX_ONE, 3 * FX_ONE)]);
        let b = run(&[(FX_ONE, FX_ONE), (2 * FX_ONE, 3 * FX_ONE)]);
        let c = run(&[(FX_ONE, FX_ONE), (2 * FX_ONE, 4 * FX_ONE)]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn budget_trips_at_checkpoint() {
        let mut vm = GuestVm::recording(Some(3));
        for _ in 0..5 {
            vm.add(1, 1);
        }
        let err = vm.checkpoint().unwrap_err();
        assert!(matches!(
            err,
            GuestError::CycleBudgetExceeded { limit: 3, observed: 5 }
        ));
    }

    #[test]
    fn hash_entries_do_not_expose_data() {
        // same length, different content: identical transcript contribution
        let root_of = |data: &[u8]| {
            let mut vm = GuestVm::recording(None);
            vm.hash(data);
            vm.finish().1.unwrap()
        };
        assert_eq!(root_of(&[0u8; 100]), root_of(&[0xffu8; 100]));
    }

    #[test]
    fn keyset_round_trips() {
        let keys = GuestKeySet {
            root_public_key: [7; 32],
            predecessors: vec![PredecessorKey {
                program_id: ProgramId([1; 32]),
                backend_kind: BackendKind::SimZk,
                verification_key: vec![1; 32],
                attestation: None,
            }],
        };
        assert_eq!(GuestKeySet::decode(&keys.encode()).unwrap(), keys);
    }
}
