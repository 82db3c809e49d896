//! Structural emulation of the zkVM backend.
//!
//! Receipts are keyed by an ImageID (the program id of the artifact), carry
//! a journal, and are sealed with a binding transcript commitment plus a
//! deterministic cycle count. A calibrated cost model reports what proving
//! would cost on a real zkVM.
//!
//! **Emulation boundary, stated loudly:** the seal is NOT zero-knowledge
//! and NOT succinct — it is a hash binding over the execution transcript.
//! Anyone with the inputs could forge one. The properties this crate
//! actually tests — chaining, registry binding, tamper-evidence, interface
//! parity across backends — are real; the soundness of this particular
//! backend is simulated. See README and `docs/guest-abi.md`.

use std::time::Duration;

use thiserror::Error;

use crate::encode::{
    put_array32, put_bytes, put_u64, ByteReader, CanonicalDecode, CanonicalEncode, DecodeError,
};
use crate::fl;
use crate::guest::{ExecMetrics, GuestError, GuestInput, GuestOutcome, GuestVm};
use crate::types::{program_id_of, sha256, ProgramId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimZkError {
    #[error("artifact is empty")]
    EmptyArtifact,
    #[error("cycle budget exceeded: limit {limit}, observed {observed}")]
    CycleBudgetExceeded { limit: u64, observed: u64 },
    #[error("guest trap at step {step}: {reason}")]
    GuestTrap { step: u64, reason: String },
}

/// Seal of a simulated zkVM receipt: the ImageID the proof claims, the
/// transcript root, the step count, and a binding hash tying all of it to
/// the sealed record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZkReceiptSeal {
    pub image_id: ProgramId,
    /// Hash-fold over the per-step execution transcript.
    pub trace_root: [u8; 32],
    /// Deterministic step count of guest execution.
    pub cycle_count: u64,
    /// `SHA-256(canonical(image_id, trace_root, cycle_count, record))`.
    pub binding: [u8; 32],
}

impl ZkReceiptSeal {
    /// Preimage of the binding hash.
    pub fn binding_preimage(
        image_id: &ProgramId,
        trace_root: &[u8; 32],
        cycle_count: u64,
        record: &[u8],
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(record.len() + 80);
        put_array32(&mut out, image_id.as_bytes());
        put_array32(&mut out, trace_root);
        put_u64(&mut out, cycle_count);
        put_bytes(&mut out, record);
        out
    }

    pub fn new(image_id: ProgramId, trace_root: [u8; 32], cycle_count: u64, record: &[u8]) -> Self {
        let binding = sha256(&Self::binding_preimage(
            &image_id,
            &trace_root,
            cycle_count,
            record,
        ));
        Self {
            image_id,
            trace_root,
            cycle_count,
            binding,
        }
    }
}

impl CanonicalEncode for ZkReceiptSeal {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.image_id.as_bytes());
        put_array32(out, &self.trace_root);
        put_u64(out, self.cycle_count);
        put_array32(out, &self.binding);
    }
}

impl CanonicalDecode for ZkReceiptSeal {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            image_id: ProgramId(reader.read_array32()?),
            trace_root: reader.read_array32()?,
            cycle_count: reader.read_u64()?,
            binding: reader.read_array32()?,
        })
    }
}

/// Relative cost profile of simulated proving. Durations are reported in
/// metrics and CSV output; no wall-clock sleeping happens unless a caller
/// opts in.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub prove_base: Duration,
    pub prove_per_cycle: Duration,
    pub verify_base: Duration,
    /// Exponent on the cycle count, expressing the zk-vs-native gap. At the
    /// default 1.0 the prove time is exactly
    /// `prove_base + prove_per_cycle * cycle_count` (computed in integer
    /// nanoseconds, so reruns reproduce it bit-for-bit).
    pub slowdown_exponent: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            prove_base: Duration::from_millis(50),
            prove_per_cycle: Duration::from_micros(10),
            verify_base: Duration::from_millis(5),
            slowdown_exponent: 1.0,
        }
    }
}

impl CostModel {
    pub fn simulated_prove_time(&self, cycle_count: u64) -> Duration {
        if self.slowdown_exponent == 1.0 {
            let nanos = (self.prove_per_cycle.as_nanos() as u64).saturating_mul(cycle_count);
            self.prove_base + Duration::from_nanos(nanos)
        } else {
            let scaled = (self.prove_per_cycle.as_nanos() as f64)
                * (cycle_count as f64).powf(self.slowdown_exponent);
            self.prove_base + Duration::from_nanos(scaled as u64)
        }
    }

    pub fn simulated_verify_time(&self) -> Duration {
        self.verify_base
    }
}

/// One-time setup: derives the ImageID. Transparent and deterministic — no
/// trusted setup, no hidden parameters.
pub fn setup(artifact: &[u8]) -> Result<ProgramId, SimZkError> {
    program_id_of(artifact).map_err(|_| SimZkError::EmptyArtifact)
}

/// Output of a simulated proving session.
#[derive(Debug, Clone)]
pub struct ProveOutput {
    pub outcome: GuestOutcome,
    pub seal: ZkReceiptSeal,
    pub simulated_prove_time: Duration,
    pub metrics: ExecMetrics,
}

/// Executes the guest under a recording VM and seals the result.
///
/// The journal, transcript root and cycle count are a pure function of
/// (artifact, ein, iin, params); the commitment salt influences only the
/// commitment itself.
pub fn prove(
    artifact: &[u8],
    input: &GuestInput<'_>,
    cost_model: &CostModel,
    cycle_budget: Option<u64>,
) -> Result<ProveOutput, SimZkError> {
    let image_id = setup(artifact)?;
    let mut vm = GuestVm::recording(cycle_budget);
    let outcome = match fl::run_guest(artifact, input, &mut vm) {
        Ok(outcome) => outcome,
        Err(GuestError::CycleBudgetExceeded { limit, observed }) => {
            return Err(SimZkError::CycleBudgetExceeded { limit, observed })
        }
        Err(e) => {
            return Err(SimZkError::GuestTrap {
                step: vm.cycles(),
                reason: e.to_string(),
            })
        }
    };
    let (metrics, trace_root) = vm.finish();
    let trace_root = trace_root.expect("recording VM always yields a transcript root");

    let record = crate::types::Receipt::sealed_record(
        &image_id,
        &outcome.journal,
        &outcome.iin_commitment,
        &ein_refs_of(input),
    );
    let seal = ZkReceiptSeal::new(image_id, trace_root, metrics.cycles_total, &record);
    let simulated_prove_time = cost_model.simulated_prove_time(seal.cycle_count);
    Ok(ProveOutput {
        outcome,
        seal,
        simulated_prove_time,
        metrics,
    })
}

fn ein_refs_of(input: &GuestInput<'_>) -> Vec<crate::types::EinRef> {
    input
        .ein_receipts
        .iter()
        .map(|r| crate::types::EinRef {
            receipt_digest: r.receipt_digest,
            program_id: r.program_id,
        })
        .collect()
}

/// Verifies a seal against a record and the expected ImageID.
pub fn verify(seal: &ZkReceiptSeal, record: &[u8], expected_image_id: &ProgramId) -> bool {
    if seal.image_id != *expected_image_id {
        return false;
    }
    let preimage =
        ZkReceiptSeal::binding_preimage(&seal.image_id, &seal.trace_root, seal.cycle_count, record);
    sha256(&preimage) == seal.binding
}

/// Seal verification from raw seal bytes, metered on the supplied VM; the
/// in-guest EIV path for SimZk predecessors.
pub fn verify_metered(
    vm: &mut GuestVm,
    seal_bytes: &[u8],
    record: &[u8],
    expected_image_id: &ProgramId,
) -> bool {
    let Ok(seal) = ZkReceiptSeal::decode(seal_bytes) else {
        return false;
    };
    if seal.image_id != *expected_image_id {
        return false;
    }
    let preimage =
        ZkReceiptSeal::binding_preimage(&seal.image_id, &seal.trace_root, seal.cycle_count, record);
    vm.hash(&preimage) == seal.binding
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_is_the_program_id() {
        let artifact = b"some artifact";
        assert_eq!(
            setup(artifact).unwrap(),
            program_id_of(artifact).unwrap()
        );
        assert_eq!(setup(artifact).unwrap(), setup(artifact).unwrap());
        assert_ne!(
            setup(b"artifact one").unwrap(),
            setup(b"artifact two").unwrap()
        );
        assert_eq!(setup(b""), Err(SimZkError::EmptyArtifact));
    }

    #[test]
    fn seal_binds_record_and_image() {
        let image = ProgramId([1; 32]);
        let seal = ZkReceiptSeal::new(image, [2; 32], 123, b"record");
        assert!(verify(&seal, b"record", &image));
        assert!(!verify(&seal, b"recorD", &image));
        assert!(!verify(&seal, b"record", &ProgramId([9; 32])));

        // tampered cycle count breaks the binding
        let mut tampered = seal.clone();
        tampered.cycle_count += 1;
        assert!(!verify(&tampered, b"record", &image));
    }

    #[test]
    fn seal_round_trips() {
        let seal = ZkReceiptSeal::new(ProgramId([3; 32]), [4; 32], 7, b"r");
        assert_eq!(ZkReceiptSeal::decode(&seal.encode()).unwrap(), seal);
    }

    #[test]
    fn default_cost_model_is_linear_in_cycles() {
        let cm = CostModel::default();
        let t1 = cm.simulated_prove_time(1_000);
        let t2 = cm.simulated_prove_time(2_000);
        assert_eq!(
            t2 - t1,
            Duration::from_nanos(cm.prove_per_cycle.as_nanos() as u64 * 1_000)
        );
        // strictly increasing
        assert!(cm.simulated_prove_time(11) > cm.simulated_prove_time(10));
    }

    #[test]
    fn superlinear_exponent_grows_faster() {
        let cm = CostModel {
            slowdown_exponent: 1.3,
            ..CostModel::default()
        };
        let linear = CostModel::default();
        assert!(cm.simulated_prove_time(1 << 20) > linear.simulated_prove_time(1 << 20));
    }
}
