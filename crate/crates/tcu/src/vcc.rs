//! The verifiable computation pipeline: external input verification, guest
//! execution, internal-input commitment — plus receipt verification and
//! full-chain audit.
//!
//! EIV runs twice on purpose: once host-side before anything else (fail
//! fast) and once inside the guest, where it is covered by the seal. Only
//! the in-guest check is part of the proven computation.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use rand::RngCore;
use thiserror::Error;

use crate::encode::{CanonicalDecode, CanonicalEncode};
use crate::fl;
use crate::guest::{ExecMetrics, GuestError, GuestInput, GuestKeySet, GuestVm, PredecessorKey};
use crate::registry::Registry;
use crate::simzk::{self, CostModel, ZkReceiptSeal};
use crate::softtee::{self, AttestationDocument, RootAuthority, SoftTeeKeys};
use crate::types::{
    BackendKind, EinRef, InputCommitment, ProgramId, ProgramManifest, Receipt, ReceiptDigest,
};

#[derive(Debug, Error)]
pub enum ComputeError {
    #[error("external input {index} failed verification: {reason}")]
    EivFailure { index: usize, reason: String },
    #[error("program {0} is not a registered, allowed predecessor")]
    UnknownPredecessor(ProgramId),
    #[error("this program is not registered (program {0})")]
    NotRegistered(ProgramId),
    #[error("backend error: {0}")]
    BackendError(String),
    #[error("guest produced differing results on re-execution")]
    NonDeterminismDetected,
    #[error("guest error: {0}")]
    Guest(#[from] GuestError),
    #[error("registry error: {0}")]
    Registry(#[from] crate::registry::RegistryError),
}

/// One external input: the predecessor's output payload and the receipt
/// attesting to it.
#[derive(Debug, Clone)]
pub struct EinEntry {
    pub payload: Vec<u8>,
    pub receipt: Receipt,
}

impl EinEntry {
    pub fn from_receipt(receipt: Receipt) -> Self {
        Self {
            payload: receipt.journal.clone(),
            receipt,
        }
    }
}

/// Why a receipt failed verification; the diagnostic sibling of
/// [`verify_receipt`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReceiptFlaw {
    #[error("program not present in the registry")]
    UnknownProgram,
    #[error("receipt backend differs from the registered backend")]
    BackendMismatch,
    #[error("seal verification failed")]
    SealInvalid,
    #[error("receipt digest does not recompute")]
    DigestMismatch,
}

/// Verifies a receipt against a claimed journal and the registry: (a) the
/// program is registered, (b) the backend seal verifies over the sealed
/// record under the registered verification key, (c) the receipt digest
/// recomputes.
pub fn check_receipt(
    receipt: &Receipt,
    journal: &[u8],
    registry: &Registry,
) -> Result<(), ReceiptFlaw> {
    let entry = registry
        .lookup(&receipt.program_id)
        .ok_or(ReceiptFlaw::UnknownProgram)?;
    if entry.manifest.backend_kind != receipt.backend_kind {
        return Err(ReceiptFlaw::BackendMismatch);
    }
    let record = Receipt::sealed_record(
        &receipt.program_id,
        journal,
        &receipt.iin_commitment,
        &receipt.ein_refs,
    );
    let seal_ok = match receipt.backend_kind {
        BackendKind::SoftTee => {
            let Some(att) = &entry.attestation else {
                return Err(ReceiptFlaw::SealInvalid);
            };
            softtee::verify(
                &receipt.seal,
                &record,
                &entry.manifest.verification_key,
                att,
                &receipt.program_id,
                &registry.root_public_key(),
            )
        }
        BackendKind::SimZk => match ZkReceiptSeal::decode(&receipt.seal) {
            Ok(seal) => simzk::verify(&seal, &record, &entry.program_id()),
            Err(_) => false,
        },
    };
    if !seal_ok {
        return Err(ReceiptFlaw::SealInvalid);
    }
    if receipt.compute_digest() != receipt.receipt_digest {
        return Err(ReceiptFlaw::DigestMismatch);
    }
    Ok(())
}

/// Boolean form of [`check_receipt`].
pub fn verify_receipt(receipt: &Receipt, journal: &[u8], registry: &Registry) -> bool {
    check_receipt(receipt, journal, registry).is_ok()
}

/// Backend-specific runtime state of a loaded TCU.
pub enum BackendRuntime {
    SoftTee {
        keys: SoftTeeKeys,
        attestation: AttestationDocument,
    },
    SimZk {
        cost_model: CostModel,
        cycle_budget: Option<u64>,
    },
}

/// Pipeline knobs.
#[derive(Debug, Clone, Default)]
pub struct ComputeOptions {
    /// Debug mode: execute the guest twice and fail on any divergence in
    /// (journal, commitment) — and for SimZk also (trace_root, cycle_count).
    pub recheck_determinism: bool,
}

/// Timing and cost metrics for one compute call.
#[derive(Debug, Clone, Default)]
pub struct ComputeMetrics {
    pub exec: ExecMetrics,
    /// SimZk only: deterministic step count.
    pub cycle_count: Option<u64>,
    /// SimZk only: cost-model proving time (not slept by default).
    pub simulated_prove_time: Option<Duration>,
    /// Wall time of the host-side fail-fast EIV.
    pub host_eiv_wall: Duration,
    /// Wall time of guest execution + sealing.
    pub prove_wall: Duration,
}

/// Result of a compute call. The salt opens the internal-input commitment
/// and must stay with the producing organization; nothing in the service
/// layer ever transmits it.
#[derive(Debug)]
pub struct ComputeOutput {
    pub journal: Vec<u8>,
    pub receipt: Receipt,
    pub iin_salt: [u8; 32],
    pub iin_commitment: InputCommitment,
    pub metrics: ComputeMetrics,
}

/// A loaded TCU: manifest, artifact, backend keys and the predecessor
/// verification material baked in at load time.
pub struct TcuInstance {
    manifest: ProgramManifest,
    artifact: Vec<u8>,
    backend: BackendRuntime,
    keys: RwLock<GuestKeySet>,
    options: ComputeOptions,
}

impl TcuInstance {
    /// Loads an instance, checking the artifact against the manifest and
    /// resolving whatever predecessor keys are already registered.
    /// Predecessors registered later are picked up lazily at compute time.
    pub fn load(
        manifest: ProgramManifest,
        artifact: Vec<u8>,
        backend: BackendRuntime,
        registry: &Registry,
        options: ComputeOptions,
    ) -> Result<Self, ComputeError> {
        let actual = crate::types::program_id_of(&artifact)
            .map_err(|e| ComputeError::BackendError(e.to_string()))?;
        if actual != manifest.program_id {
            return Err(ComputeError::BackendError(
                "artifact bytes do not hash to the manifest program id".into(),
            ));
        }
        let mut keys = GuestKeySet {
            root_public_key: registry.root_public_key(),
            predecessors: Vec::new(),
        };
        for id in &manifest.predecessor_program_ids {
            if let Some(entry) = registry.lookup(id) {
                keys.predecessors.push(PredecessorKey {
                    program_id: *id,
                    backend_kind: entry.manifest.backend_kind,
                    verification_key: entry.manifest.verification_key.clone(),
                    attestation: entry.attestation.clone(),
                });
            }
        }
        Ok(Self {
            manifest,
            artifact,
            backend,
            keys: RwLock::new(keys),
            options,
        })
    }

    pub fn manifest(&self) -> &ProgramManifest {
        &self.manifest
    }

    pub fn artifact(&self) -> &[u8] {
        &self.artifact
    }

    pub fn program_id(&self) -> ProgramId {
        self.manifest.program_id
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.manifest.backend_kind
    }

    /// The verification key this running instance seals under.
    pub fn runtime_verification_key(&self) -> Vec<u8> {
        match &self.backend {
            BackendRuntime::SoftTee { keys, .. } => keys.tee_public_key().to_vec(),
            BackendRuntime::SimZk { .. } => self.manifest.program_id.0.to_vec(),
        }
    }

    pub fn attestation(&self) -> Option<&AttestationDocument> {
        match &self.backend {
            BackendRuntime::SoftTee { attestation, .. } => Some(attestation),
            BackendRuntime::SimZk { .. } => None,
        }
    }

    /// Resolves a predecessor key that was not yet registered at load time.
    fn ensure_predecessor_key(
        &self,
        id: &ProgramId,
        registry: &Registry,
    ) -> Result<(), ComputeError> {
        if self.keys.read().find(id).is_some() {
            return Ok(());
        }
        let _ = registry.refresh();
        let entry = registry
            .lookup(id)
            .ok_or(ComputeError::UnknownPredecessor(*id))?;
        let mut keys = self.keys.write();
        if keys.find(id).is_none() {
            keys.predecessors.push(PredecessorKey {
                program_id: *id,
                backend_kind: entry.manifest.backend_kind,
                verification_key: entry.manifest.verification_key.clone(),
                attestation: entry.attestation.clone(),
            });
        }
        Ok(())
    }

    /// The full VCC pipeline: host-side EIV, guest execution (with in-guest
    /// EIV and commitment), backend sealing.
    pub fn compute(
        &self,
        ein: &[EinEntry],
        iin: &[u8],
        params: &[u8],
        registry: &Registry,
        rng: &mut dyn RngCore,
    ) -> Result<ComputeOutput, ComputeError> {
        // the manifest must be registered and must match this runtime
        let entry = registry
            .lookup(&self.manifest.program_id)
            .ok_or(ComputeError::NotRegistered(self.manifest.program_id))?;
        if entry.manifest.verification_key != self.runtime_verification_key() {
            return Err(ComputeError::BackendError(
                "registered verification key differs from this instance's keys \
                 (stale registration?)"
                    .into(),
            ));
        }

        // host-side fail-fast EIV
        let eiv_started = Instant::now();
        for (index, e) in ein.iter().enumerate() {
            if !self.manifest.accepts_predecessor(&e.receipt.program_id) {
                return Err(ComputeError::UnknownPredecessor(e.receipt.program_id));
            }
            self.ensure_predecessor_key(&e.receipt.program_id, registry)?;
            check_receipt(&e.receipt, &e.payload, registry).map_err(|flaw| {
                ComputeError::EivFailure {
                    index,
                    reason: flaw.to_string(),
                }
            })?;
        }
        let host_eiv_wall = eiv_started.elapsed();

        let mut iin_salt = [0u8; 32];
        rng.fill_bytes(&mut iin_salt);

        let payloads: Vec<Vec<u8>> = ein.iter().map(|e| e.payload.clone()).collect();
        let receipts: Vec<Receipt> = ein.iter().map(|e| e.receipt.clone()).collect();
        let ein_refs: Vec<EinRef> = receipts
            .iter()
            .map(|r| EinRef {
                receipt_digest: r.receipt_digest,
                program_id: r.program_id,
            })
            .collect();
        let keys = self.keys.read().clone();
        let input = GuestInput {
            ein_payloads: &payloads,
            ein_receipts: &receipts,
            iin,
            params,
            iin_salt: &iin_salt,
            keys: &keys,
        };

        let prove_started = Instant::now();
        let (journal, iin_commitment, seal_bytes, mut metrics) = match &self.backend {
            BackendRuntime::SoftTee { keys: tee_keys, .. } => {
                let mut vm = GuestVm::metering();
                let outcome = fl::run_guest(&self.artifact, &input, &mut vm).map_err(map_guest)?;
                let (exec, _) = vm.finish();
                if self.options.recheck_determinism {
                    let mut vm2 = GuestVm::metering();
                    let again = fl::run_guest(&self.artifact, &input, &mut vm2).map_err(map_guest)?;
                    if again.journal != outcome.journal
                        || again.iin_commitment != outcome.iin_commitment
                    {
                        return Err(ComputeError::NonDeterminismDetected);
                    }
                }
                let record = Receipt::sealed_record(
                    &self.manifest.program_id,
                    &outcome.journal,
                    &outcome.iin_commitment,
                    &ein_refs,
                );
                let seal = softtee::prove(tee_keys, &record);
                (
                    outcome.journal,
                    outcome.iin_commitment,
                    seal,
                    ComputeMetrics {
                        exec,
                        ..Default::default()
                    },
                )
            }
            BackendRuntime::SimZk {
                cost_model,
                cycle_budget,
            } => {
                let proved = simzk::prove(&self.artifact, &input, cost_model, *cycle_budget)
                    .map_err(|e| ComputeError::BackendError(e.to_string()))?;
                if self.options.recheck_determinism {
                    let again = simzk::prove(&self.artifact, &input, cost_model, *cycle_budget)
                        .map_err(|e| ComputeError::BackendError(e.to_string()))?;
                    if again.outcome.journal != proved.outcome.journal
                        || again.seal != proved.seal
                    {
                        return Err(ComputeError::NonDeterminismDetected);
                    }
                }
                (
                    proved.outcome.journal,
                    proved.outcome.iin_commitment,
                    proved.seal.encode(),
                    ComputeMetrics {
                        exec: proved.metrics,
                        cycle_count: Some(proved.seal.cycle_count),
                        simulated_prove_time: Some(proved.simulated_prove_time),
                        ..Default::default()
                    },
                )
            }
        };
        metrics.host_eiv_wall = host_eiv_wall;
        metrics.prove_wall = prove_started.elapsed();

        let receipt = Receipt::assemble(
            self.manifest.program_id,
            self.manifest.backend_kind,
            journal.clone(),
            iin_commitment,
            ein_refs,
            seal_bytes,
        );
        Ok(ComputeOutput {
            journal,
            receipt,
            iin_salt,
            iin_commitment,
            metrics,
        })
    }
}

fn map_guest(e: GuestError) -> ComputeError {
    match e {
        GuestError::Eiv { index, reason } => ComputeError::EivFailure { index, reason },
        other => ComputeError::Guest(other),
    }
}

/// Lookup of receipts by digest during a chain audit.
pub trait ReceiptStore {
    fn get(&self, digest: &ReceiptDigest) -> Option<Receipt>;
}

impl ReceiptStore for HashMap<ReceiptDigest, Receipt> {
    fn get(&self, digest: &ReceiptDigest) -> Option<Receipt> {
        HashMap::get(self, digest).cloned()
    }
}

/// Directory of receipts stored as `<digest hex>.receipt` files.
pub struct DirReceiptStore {
    dir: PathBuf,
}

impl DirReceiptStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, digest: &ReceiptDigest) -> PathBuf {
        self.dir.join(format!("{}.receipt", digest.to_hex()))
    }

    pub fn put(&self, receipt: &Receipt) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path_for(&receipt.receipt_digest), receipt.encode())
    }
}

impl ReceiptStore for DirReceiptStore {
    fn get(&self, digest: &ReceiptDigest) -> Option<Receipt> {
        let bytes = std::fs::read(self.path_for(digest)).ok()?;
        Receipt::decode(&bytes).ok()
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cycle detected at receipt {0}")]
    CycleDetected(ReceiptDigest),
}

/// Outcome of a full-chain audit: every receipt reachable from the root,
/// each verified against the registry, with failures named by digest.
#[derive(Debug, Clone)]
pub struct ChainReport {
    pub root_receipt_digest: ReceiptDigest,
    /// (digest, producing program, verification outcome), one row per
    /// distinct receipt in DFS order.
    pub visited: Vec<(ReceiptDigest, ProgramId, bool)>,
    pub overall: bool,
    pub failures: Vec<(ReceiptDigest, String)>,
}

/// Depth-first audit over `ein_refs`, verifying every reachable receipt.
/// Unresolvable references are reported as failures, not errors; a
/// non-DAG reference structure is an error.
pub fn audit_chain(
    root: &Receipt,
    store: &dyn ReceiptStore,
    registry: &Registry,
) -> Result<ChainReport, AuditError> {
    let mut report = ChainReport {
        root_receipt_digest: root.receipt_digest,
        visited: Vec::new(),
        overall: true,
        failures: Vec::new(),
    };
    let mut seen: HashSet<ReceiptDigest> = HashSet::new();
    let mut path: HashSet<ReceiptDigest> = HashSet::new();
    visit(root, store, registry, &mut report, &mut seen, &mut path)?;
    report.overall = report.overall && report.failures.is_empty();
    Ok(report)
}

fn visit(
    receipt: &Receipt,
    store: &dyn ReceiptStore,
    registry: &Registry,
    report: &mut ChainReport,
    seen: &mut HashSet<ReceiptDigest>,
    path: &mut HashSet<ReceiptDigest>,
) -> Result<(), AuditError> {
    let digest = receipt.receipt_digest;
    if !seen.insert(digest) {
        return Ok(()); // deduplicated: shared predecessors audit once
    }
    path.insert(digest);

    let ok = verify_receipt(receipt, &receipt.journal, registry);
    report.visited.push((digest, receipt.program_id, ok));
    if !ok {
        let reason = check_receipt(receipt, &receipt.journal, registry)
            .err()
            .map(|f| f.to_string())
            .unwrap_or_else(|| "unknown".into());
        report.failures.push((digest, reason));
    }

    for ein_ref in &receipt.ein_refs {
        if path.contains(&ein_ref.receipt_digest) {
            return Err(AuditError::CycleDetected(ein_ref.receipt_digest));
        }
        match store.get(&ein_ref.receipt_digest) {
            None => {
                report
                    .failures
                    .push((ein_ref.receipt_digest, "unresolvable reference".into()));
            }
            Some(child) => {
                if child.compute_digest() != ein_ref.receipt_digest {
                    report.failures.push((
                        ein_ref.receipt_digest,
                        "stored receipt does not match referenced digest".into(),
                    ));
                } else if child.program_id != ein_ref.program_id {
                    report.failures.push((
                        ein_ref.receipt_digest,
                        "referenced program id does not match stored receipt".into(),
                    ));
                } else {
                    visit(&child, store, registry, report, seen, path)?;
                }
            }
        }
    }
    path.remove(&digest);
    Ok(())
}

/// Everything needed to set up one TCU: artifact, identity, predecessors
/// and backend choice. `provision` registers the program and returns a
/// loaded instance.
pub struct ProvisionSpec<'a> {
    pub tcu_id: &'a str,
    pub artifact: Vec<u8>,
    pub backend_kind: BackendKind,
    pub predecessors: Vec<ProgramId>,
    pub version: u64,
    pub registrant: &'a ed25519_dalek::SigningKey,
    /// Required for SoftTee boots.
    pub root: Option<&'a RootAuthority>,
    pub cost_model: CostModel,
    pub cycle_budget: Option<u64>,
    pub options: ComputeOptions,
}

/// One-time setup for a TCU: stores the artifact, boots the backend,
/// registers (tcu_id, program, VK) and loads the instance.
pub fn provision(
    registry: &Registry,
    spec: ProvisionSpec<'_>,
    rng: &mut dyn RngCore,
) -> Result<TcuInstance, ComputeError> {
    let program_id = crate::types::program_id_of(&spec.artifact)
        .map_err(|e| ComputeError::BackendError(e.to_string()))?;
    registry.put_artifact(&spec.artifact)?;

    let (backend, verification_key, attestation) = match spec.backend_kind {
        BackendKind::SoftTee => {
            let root = spec.root.ok_or_else(|| {
                ComputeError::BackendError(softtee::SoftTeeError::RootUnavailable(
                    "SoftTee provisioning requires a root of trust".into(),
                )
                .to_string())
            })?;
            let (keys, attestation) = softtee::boot(&spec.artifact, root, rng)
                .map_err(|e| ComputeError::BackendError(e.to_string()))?;
            let vk = keys.tee_public_key().to_vec();
            (
                BackendRuntime::SoftTee {
                    keys,
                    attestation: attestation.clone(),
                },
                vk,
                Some(attestation),
            )
        }
        BackendKind::SimZk => {
            let image_id = simzk::setup(&spec.artifact)
                .map_err(|e| ComputeError::BackendError(e.to_string()))?;
            (
                BackendRuntime::SimZk {
                    cost_model: spec.cost_model.clone(),
                    cycle_budget: spec.cycle_budget,
                },
                image_id.0.to_vec(),
                None,
            )
        }
    };

    let manifest = ProgramManifest::new(
        program_id,
        spec.backend_kind,
        verification_key,
        spec.predecessors.clone(),
        spec.version,
    );
    registry.register(
        spec.tcu_id,
        manifest.clone(),
        attestation,
        spec.registrant.verifying_key().to_bytes(),
        spec.registrant,
    )?;
    TcuInstance::load(manifest, spec.artifact, backend, registry, spec.options)
}
