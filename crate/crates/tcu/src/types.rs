//! Core domain types shared by every backend: program identities, input
//! commitments, receipts and compute jobs.
//!
//! One fixed 256-bit hash (SHA-256) is used everywhere a digest appears —
//! program ids, commitments, receipt digests, ledger hashes, blob refs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::encode::{
    put_array32, put_bytes, put_count, put_u64, put_u8, ByteReader, CanonicalDecode,
    CanonicalEncode, DecodeError,
};

/// Commitment scheme tag for the salted SHA-256 commitment. The tag byte is
/// both stored in [`InputCommitment`] and mixed into the hash input.
pub const COMMIT_SCHEME_SALTED_SHA256: u8 = 1;

/// SHA-256 of arbitrary bytes.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("artifact is empty")]
    EmptyArtifact,
}

/// Content-derived identifier of a program artifact.
///
/// Plays the role of both the zkVM ImageID and the TEE boot measurement:
/// the plain SHA-256 of the artifact bytes, recomputable with any external
/// SHA-256 tool.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProgramId(pub [u8; 32]);

impl ProgramId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; 32] = raw.try_into().ok()?;
        Some(Self(arr))
    }
}

impl fmt::Debug for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProgramId({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Digest of a full receipt encoding; the handle predecessors are
/// referenced by.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReceiptDigest(pub [u8; 32]);

impl ReceiptDigest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        let arr: [u8; 32] = raw.try_into().ok()?;
        Some(Self(arr))
    }
}

impl fmt::Debug for ReceiptDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReceiptDigest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for ReceiptDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Computes the program id of an artifact: SHA-256 of its bytes.
pub fn program_id_of(artifact: &[u8]) -> Result<ProgramId, CoreError> {
    if artifact.is_empty() {
        return Err(CoreError::EmptyArtifact);
    }
    Ok(ProgramId(sha256(artifact)))
}

/// Which verifiable-computation backend produced a proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "softtee")]
    SoftTee,
    #[serde(rename = "simzk")]
    SimZk,
}

impl BackendKind {
    pub fn as_u8(self) -> u8 {
        match self {
            BackendKind::SoftTee => 1,
            BackendKind::SimZk => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self, DecodeError> {
        match v {
            1 => Ok(BackendKind::SoftTee),
            2 => Ok(BackendKind::SimZk),
            value => Err(DecodeError::BadDiscriminant {
                what: "backend kind",
                value,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::SoftTee => "softtee",
            BackendKind::SimZk => "simzk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softtee" => Some(BackendKind::SoftTee),
            "simzk" => Some(BackendKind::SimZk),
            _ => None,
        }
    }
}

impl CanonicalEncode for BackendKind {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u8(out, self.as_u8());
    }
}

impl CanonicalDecode for BackendKind {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        BackendKind::from_u8(reader.read_u8()?)
    }
}

/// Salted hash commitment to a confidential internal input.
///
/// `digest = SHA-256(scheme_tag || salt || payload)`. Binding comes from
/// collision resistance; hiding from the 32-byte random salt, which the
/// producing organization keeps private.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputCommitment {
    pub scheme_tag: u8,
    pub digest: [u8; 32],
}

impl InputCommitment {
    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

impl CanonicalEncode for InputCommitment {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_u8(out, self.scheme_tag);
        put_array32(out, &self.digest);
    }
}

impl CanonicalDecode for InputCommitment {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            scheme_tag: reader.read_u8()?,
            digest: reader.read_array32()?,
        })
    }
}

/// Commits to `payload` under a fresh 32-byte salt.
pub fn commit(payload: &[u8], salt: &[u8; 32]) -> InputCommitment {
    let mut hasher = Sha256::new();
    hasher.update([COMMIT_SCHEME_SALTED_SHA256]);
    hasher.update(salt);
    hasher.update(payload);
    InputCommitment {
        scheme_tag: COMMIT_SCHEME_SALTED_SHA256,
        digest: hasher.finalize().into(),
    }
}

/// Opens a commitment: true iff the digest recomputes from (payload, salt).
pub fn verify_commitment(c: &InputCommitment, payload: &[u8], salt: &[u8; 32]) -> bool {
    if c.scheme_tag != COMMIT_SCHEME_SALTED_SHA256 {
        return false;
    }
    commit(payload, salt) == *c
}

/// Reference to a predecessor receipt: (digest of that receipt, producing
/// program). Order is caller-supplied and part of the sealed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EinRef {
    pub receipt_digest: ReceiptDigest,
    pub program_id: ProgramId,
}

impl CanonicalEncode for EinRef {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.receipt_digest.as_bytes());
        put_array32(out, self.program_id.as_bytes());
    }
}

impl CanonicalDecode for EinRef {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            receipt_digest: ReceiptDigest(reader.read_array32()?),
            program_id: ProgramId(reader.read_array32()?),
        })
    }
}

/// Proof of one computation: the public output journal, the internal-input
/// commitment, references to predecessor receipts, and a backend-specific
/// seal over all of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub program_id: ProgramId,
    pub backend_kind: BackendKind,
    pub journal: Vec<u8>,
    pub iin_commitment: InputCommitment,
    pub ein_refs: Vec<EinRef>,
    pub seal: Vec<u8>,
    /// SHA-256 over the canonical encoding of all preceding fields.
    pub receipt_digest: ReceiptDigest,
}

impl Receipt {
    /// Canonical bytes the backend seal is computed over:
    /// `(program_id, journal, iin_commitment, ein_refs)`.
    pub fn sealed_record(
        program_id: &ProgramId,
        journal: &[u8],
        iin_commitment: &InputCommitment,
        ein_refs: &[EinRef],
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(journal.len() + 128);
        put_array32(&mut out, program_id.as_bytes());
        put_bytes(&mut out, journal);
        iin_commitment.encode_into(&mut out);
        put_count(&mut out, ein_refs.len());
        for r in ein_refs {
            r.encode_into(&mut out);
        }
        out
    }

    /// The sealed record of this receipt, taking the journal from the
    /// receipt itself.
    pub fn record(&self) -> Vec<u8> {
        Self::sealed_record(
            &self.program_id,
            &self.journal,
            &self.iin_commitment,
            &self.ein_refs,
        )
    }

    /// Canonical bytes the receipt digest is taken over: every field but
    /// the digest itself, in declaration order.
    pub fn digest_preimage(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.journal.len() + self.seal.len() + 160);
        put_array32(&mut out, self.program_id.as_bytes());
        self.backend_kind.encode_into(&mut out);
        put_bytes(&mut out, &self.journal);
        self.iin_commitment.encode_into(&mut out);
        put_count(&mut out, self.ein_refs.len());
        for r in &self.ein_refs {
            r.encode_into(&mut out);
        }
        put_bytes(&mut out, &self.seal);
        out
    }

    /// Recomputes the receipt digest from the current field values.
    pub fn compute_digest(&self) -> ReceiptDigest {
        ReceiptDigest(sha256(&self.digest_preimage()))
    }

    /// Assembles a receipt, filling in the digest.
    pub fn assemble(
        program_id: ProgramId,
        backend_kind: BackendKind,
        journal: Vec<u8>,
        iin_commitment: InputCommitment,
        ein_refs: Vec<EinRef>,
        seal: Vec<u8>,
    ) -> Self {
        let mut receipt = Self {
            program_id,
            backend_kind,
            journal,
            iin_commitment,
            ein_refs,
            seal,
            receipt_digest: ReceiptDigest([0; 32]),
        };
        receipt.receipt_digest = receipt.compute_digest();
        receipt
    }
}

impl CanonicalEncode for Receipt {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.program_id.as_bytes());
        self.backend_kind.encode_into(out);
        put_bytes(out, &self.journal);
        self.iin_commitment.encode_into(out);
        put_count(out, self.ein_refs.len());
        for r in &self.ein_refs {
            r.encode_into(out);
        }
        put_bytes(out, &self.seal);
        put_array32(out, self.receipt_digest.as_bytes());
    }
}

impl CanonicalDecode for Receipt {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let program_id = ProgramId(reader.read_array32()?);
        let backend_kind = BackendKind::decode_from(reader)?;
        let journal = reader.read_bytes()?;
        let iin_commitment = InputCommitment::decode_from(reader)?;
        let n = reader.read_count()?;
        let mut ein_refs = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            ein_refs.push(EinRef::decode_from(reader)?);
        }
        let seal = reader.read_bytes()?;
        let receipt_digest = ReceiptDigest(reader.read_array32()?);
        Ok(Self {
            program_id,
            backend_kind,
            journal,
            iin_commitment,
            ein_refs,
            seal,
            receipt_digest,
        })
    }
}

/// Identity, backend, artifact reference and verification key of a TCU's
/// program, plus the predecessor set checked during EIV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramManifest {
    pub program_id: ProgramId,
    pub backend_kind: BackendKind,
    /// Content hash into the blob store; resolves to bytes whose hash
    /// equals `program_id`.
    pub artifact_ref: [u8; 32],
    /// Backend-specific public verification material: the TEE public key
    /// for SoftTee, the ImageID bytes for SimZk. May be empty before a
    /// SoftTee instance has booted.
    pub verification_key: Vec<u8>,
    /// Programs accepted as EIn producers. Kept sorted; this is a set.
    pub predecessor_program_ids: Vec<ProgramId>,
    pub version: u64,
}

impl ProgramManifest {
    pub fn new(
        program_id: ProgramId,
        backend_kind: BackendKind,
        verification_key: Vec<u8>,
        mut predecessor_program_ids: Vec<ProgramId>,
        version: u64,
    ) -> Self {
        predecessor_program_ids.sort();
        predecessor_program_ids.dedup();
        Self {
            program_id,
            backend_kind,
            artifact_ref: program_id.0,
            verification_key,
            predecessor_program_ids,
            version,
        }
    }

    pub fn accepts_predecessor(&self, id: &ProgramId) -> bool {
        self.predecessor_program_ids.binary_search(id).is_ok()
    }
}

impl CanonicalEncode for ProgramManifest {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.program_id.as_bytes());
        self.backend_kind.encode_into(out);
        put_array32(out, &self.artifact_ref);
        put_bytes(out, &self.verification_key);
        put_count(out, self.predecessor_program_ids.len());
        for id in &self.predecessor_program_ids {
            put_array32(out, id.as_bytes());
        }
        put_u64(out, self.version);
    }
}

impl CanonicalDecode for ProgramManifest {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let program_id = ProgramId(reader.read_array32()?);
        let backend_kind = BackendKind::decode_from(reader)?;
        let artifact_ref = reader.read_array32()?;
        let verification_key = reader.read_bytes()?;
        let n = reader.read_count()?;
        let mut predecessor_program_ids = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            predecessor_program_ids.push(ProgramId(reader.read_array32()?));
        }
        let version = reader.read_u64()?;
        Ok(Self {
            program_id,
            backend_kind,
            artifact_ref,
            verification_key,
            predecessor_program_ids,
            version,
        })
    }
}

/// Lifecycle of a scheduled computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    /// Whether `next` is a legal forward transition from `self`.
    pub fn can_advance_to(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Pending, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

/// A scheduled computation tracked by the service.
#[derive(Debug, Clone)]
pub struct ComputeJob {
    pub job_id: u64,
    pub status: JobStatus,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub journal: Vec<u8>,
    pub receipt: Receipt,
}

impl ComputeJob {
    pub fn new(job_id: u64) -> Self {
        Self {
            job_id,
            status: JobStatus::Pending,
            result: None,
            error: None,
        }
    }

    /// Moves the job forward; transitions only advance, never rewind.
    pub fn advance(&mut self, next: JobStatus) {
        assert!(
            self.status.can_advance_to(next),
            "illegal job transition {:?} -> {:?}",
            self.status,
            next
        );
        self.status = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference digests computed with an external SHA-256 tool before this
    // module was written.
    const SHA256_TCU_TEST_VECTOR: &str =
        "cb36a86d06c5a083f839778f78a71fad9fdd08d5a90e202afc47bb9f00274fc2";
    const SHA256_ABC: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    const SHA256_TCU_TEST_VECTOR_BIT_FLIPPED: &str =
        "4f0404c83559421c2f9424e623adaf2cefd8b7b31b2bbdf272232714e899804f";

    fn sample_commitment() -> InputCommitment {
        commit(b"payload", &[7u8; 32])
    }

    fn sample_receipt() -> Receipt {
        Receipt::assemble(
            ProgramId([1; 32]),
            BackendKind::SoftTee,
            b"journal".to_vec(),
            sample_commitment(),
            vec![EinRef {
                receipt_digest: ReceiptDigest([2; 32]),
                program_id: ProgramId([3; 32]),
            }],
            b"seal".to_vec(),
        )
    }

    #[test]
    fn program_id_matches_external_sha256() {
        let id = program_id_of(b"tcu-test-vector").unwrap();
        assert_eq!(id.to_hex(), SHA256_TCU_TEST_VECTOR);
        assert_eq!(program_id_of(b"abc").unwrap().to_hex(), SHA256_ABC);
    }

    #[test]
    fn program_id_is_deterministic_and_bit_sensitive() {
        let a = program_id_of(b"tcu-test-vector").unwrap();
        let b = program_id_of(b"tcu-test-vector").unwrap();
        assert_eq!(a, b);

        let mut flipped = b"tcu-test-vector".to_vec();
        flipped[0] ^= 1;
        let c = program_id_of(&flipped).unwrap();
        assert_ne!(a, c);
        assert_eq!(c.to_hex(), SHA256_TCU_TEST_VECTOR_BIT_FLIPPED);
    }

    #[test]
    fn empty_artifact_rejected() {
        assert_eq!(program_id_of(b""), Err(CoreError::EmptyArtifact));
    }

    #[test]
    fn commitment_opens_only_with_matching_triple() {
        let salt = [9u8; 32];
        let c = commit(b"secret", &salt);
        assert!(verify_commitment(&c, b"secret", &salt));
        assert!(!verify_commitment(&c, b"public", &salt));
        assert!(!verify_commitment(&c, b"secret", &[8u8; 32]));
    }

    #[test]
    fn commitment_open_check_over_small_payload_set() {
        // Exhaustive cross-check: each commitment opens only for its own
        // payload.
        let salt = [3u8; 32];
        let payloads: Vec<Vec<u8>> = (0u8..16).map(|i| vec![i, i ^ 0x5a]).collect();
        let commitments: Vec<InputCommitment> =
            payloads.iter().map(|p| commit(p, &salt)).collect();
        for (i, c) in commitments.iter().enumerate() {
            for (j, p) in payloads.iter().enumerate() {
                assert_eq!(verify_commitment(c, p, &salt), i == j);
            }
        }
    }

    #[test]
    fn commitment_salt_hiding_no_repeats() {
        use rand::RngCore;
        // Hiding proxy: over a fixed payload, random salts give no repeated
        // digests in 10^4 samples.
        let mut rng = rand::thread_rng();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            let mut salt = [0u8; 32];
            rng.fill_bytes(&mut salt);
            assert!(seen.insert(commit(b"fixed payload", &salt).digest));
        }
    }

    #[test]
    fn receipt_digest_recomputes() {
        let receipt = sample_receipt();
        assert_eq!(receipt.compute_digest(), receipt.receipt_digest);
    }

    #[test]
    fn receipt_round_trip() {
        let receipt = sample_receipt();
        let decoded = Receipt::decode(&receipt.encode()).unwrap();
        assert_eq!(decoded, receipt);
    }

    #[test]
    fn manifest_round_trip() {
        let manifest = ProgramManifest::new(
            ProgramId([4; 32]),
            BackendKind::SimZk,
            vec![4; 32],
            vec![ProgramId([5; 32]), ProgramId([1; 32])],
            3,
        );
        let decoded = ProgramManifest::decode(&manifest.encode()).unwrap();
        assert_eq!(decoded, manifest);
        // predecessor set is kept sorted
        assert!(manifest.predecessor_program_ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn encoding_differs_when_a_field_differs() {
        let a = sample_receipt();
        let mut b = a.clone();
        b.journal = b"journal!".to_vec();
        let b = Receipt::assemble(
            b.program_id,
            b.backend_kind,
            b.journal,
            b.iin_commitment,
            b.ein_refs,
            b.seal,
        );
        assert_ne!(a.encode(), b.encode());
    }

    #[test]
    fn job_transitions_only_forward() {
        let mut job = ComputeJob::new(1);
        job.advance(JobStatus::Running);
        job.advance(JobStatus::Done);
        assert!(!job.status.can_advance_to(JobStatus::Pending));
        assert!(!job.status.can_advance_to(JobStatus::Running));
        assert!(!JobStatus::Pending.can_advance_to(JobStatus::Done));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_commitment() -> impl Strategy<Value = InputCommitment> {
            (any::<[u8; 32]>(), proptest::collection::vec(any::<u8>(), 0..64))
                .prop_map(|(salt, payload)| commit(&payload, &salt))
        }

        fn arb_receipt() -> impl Strategy<Value = Receipt> {
            (
                any::<[u8; 32]>(),
                prop_oneof![Just(BackendKind::SoftTee), Just(BackendKind::SimZk)],
                proptest::collection::vec(any::<u8>(), 0..128),
                arb_commitment(),
                proptest::collection::vec(any::<([u8; 32], [u8; 32])>(), 0..4),
                proptest::collection::vec(any::<u8>(), 0..96),
            )
                .prop_map(|(pid, backend, journal, commitment, refs, seal)| {
                    Receipt::assemble(
                        ProgramId(pid),
                        backend,
                        journal,
                        commitment,
                        refs.into_iter()
                            .map(|(d, p)| EinRef {
                                receipt_digest: ReceiptDigest(d),
                                program_id: ProgramId(p),
                            })
                            .collect(),
                        seal,
                    )
                })
        }

        proptest! {
            #[test]
            fn encode_is_deterministic(r in arb_receipt()) {
                prop_assert_eq!(r.encode(), r.encode());
            }

            #[test]
            fn encode_round_trips(r in arb_receipt()) {
                prop_assert_eq!(Receipt::decode(&r.encode()).unwrap(), r);
            }

            #[test]
            fn encode_injective_on_distinct_receipts(a in arb_receipt(), b in arb_receipt()) {
                if a != b {
                    prop_assert_ne!(a.encode(), b.encode());
                }
            }
        }
    }
}
