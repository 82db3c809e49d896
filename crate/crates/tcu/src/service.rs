//! The application component: a minimal HTTP service per TCU exposing
//! compute scheduling, proof retrieval and metadata.
//!
//! Wire format is HTTP/1.1 + JSON with base64 fields for opaque bytes.
//! JSON is the external contract only — every digest and signature is
//! computed over canonical encoding, never over JSON. Authentication
//! beyond an optional shared token is delegated to gateways.
//!
//! Confidential internal inputs are loaded from the TCU's local
//! configuration and never accepted in request bodies nor emitted in
//! responses; commitment salts stay in process memory.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use crate::encode::CanonicalDecode;
use crate::registry::Registry;
use crate::types::{ComputeJob, JobStatus, Receipt};
use crate::vcc::{EinEntry, TcuInstance};

/// Shared-token header checked when a token is configured.
pub const AUTH_HEADER: &str = "x-tcu-token";

/// Where the service reads its confidential internal input from.
pub enum IinSource {
    Bytes(Vec<u8>),
    File(PathBuf),
}

impl IinSource {
    fn load(&self) -> std::io::Result<Vec<u8>> {
        match self {
            IinSource::Bytes(b) => Ok(b.clone()),
            IinSource::File(p) => std::fs::read(p),
        }
    }
}

/// Everything a running service needs. Construct with a provisioned
/// [`TcuInstance`]; the CLI builds this from a config file.
pub struct ServiceRuntime {
    pub tcu_id: String,
    pub instance: TcuInstance,
    pub registry: Arc<Registry>,
    pub iin: IinSource,
    pub auth_token: Option<String>,
    pub queue_capacity: usize,
    /// Seed for commitment salts; `None` draws from OS entropy.
    pub salt_seed: Option<u64>,
}

struct JobRecord {
    job: ComputeJob,
    request: Option<JobRequest>,
}

struct JobRequest {
    ein: Vec<EinEntry>,
    params: Vec<u8>,
}

struct ServiceState {
    tcu_id: String,
    instance: Arc<TcuInstance>,
    registry: Arc<Registry>,
    iin: IinSource,
    auth_token: Option<String>,
    jobs: RwLock<HashMap<u64, JobRecord>>,
    next_job: AtomicU64,
    queue: mpsc::Sender<u64>,
    salt_rng: Mutex<ChaCha12Rng>,
}

/// A bound, running TCU service.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<()>,
    worker: tokio::task::JoinHandle<()>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.server.await;
        self.worker.abort();
    }
}

/// Builds the router and starts serving on `listen` (port 0 picks a free
/// port). One worker executes jobs in order.
pub async fn spawn(runtime: ServiceRuntime, listen: &str) -> std::io::Result<ServiceHandle> {
    let (queue_tx, mut queue_rx) = mpsc::channel::<u64>(runtime.queue_capacity.max(1));
    let salt_rng = match runtime.salt_seed {
        Some(seed) => ChaCha12Rng::seed_from_u64(seed),
        None => ChaCha12Rng::from_rng(rand::thread_rng()).expect("seed rng"),
    };
    let state = Arc::new(ServiceState {
        tcu_id: runtime.tcu_id,
        instance: Arc::new(runtime.instance),
        registry: runtime.registry,
        iin: runtime.iin,
        auth_token: runtime.auth_token,
        jobs: RwLock::new(HashMap::new()),
        next_job: AtomicU64::new(1),
        queue: queue_tx,
        salt_rng: Mutex::new(salt_rng),
    });

    let worker_state = state.clone();
    let worker = tokio::spawn(async move {
        while let Some(job_id) = queue_rx.recv().await {
            run_job(worker_state.clone(), job_id).await;
        }
    });

    let app = router(state);
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await;
    });
    Ok(ServiceHandle {
        addr,
        shutdown: Some(shutdown_tx),
        server,
        worker,
    })
}

fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/compute", post(handle_compute))
        .route("/proofRetrieval/:job_id", get(handle_proof_retrieval))
        .route("/info", get(handle_info))
        .route("/registry/entries", get(handle_registry_entries))
        .with_state(state)
}

async fn run_job(state: Arc<ServiceState>, job_id: u64) {
    let request = {
        let mut jobs = state.jobs.write();
        let Some(record) = jobs.get_mut(&job_id) else {
            return;
        };
        record.job.advance(JobStatus::Running);
        record.request.take()
    };
    let Some(request) = request else { return };

    let instance = state.instance.clone();
    let registry = state.registry.clone();
    let iin = state.iin.load();
    let mut salt_source = {
        let mut rng = state.salt_rng.lock();
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        ChaCha12Rng::from_seed(seed)
    };
    let outcome = tokio::task::spawn_blocking(move || {
        let iin = iin.map_err(|e| format!("internal input unavailable: {e}"))?;
        instance
            .compute(&request.ein, &iin, &request.params, &registry, &mut salt_source)
            .map_err(|e| e.to_string())
    })
    .await;

    let mut jobs = state.jobs.write();
    let Some(record) = jobs.get_mut(&job_id) else {
        return;
    };
    match outcome {
        Ok(Ok(output)) => {
            record.job.advance(JobStatus::Done);
            record.job.result = Some(crate::types::JobResult {
                journal: output.journal,
                receipt: output.receipt,
            });
            // output.iin_salt intentionally dropped here: the commitment
            // salt never reaches the job store or any response
        }
        Ok(Err(message)) => {
            record.job.advance(JobStatus::Failed);
            record.job.error = Some(message);
        }
        Err(join_err) => {
            record.job.advance(JobStatus::Failed);
            record.job.error = Some(format!("execution panicked: {join_err}"));
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComputeRequestWire {
    #[serde(default)]
    ein: Vec<EinEntryWire>,
    /// Base64 canonical guest parameters.
    #[serde(default)]
    params: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinEntryWire {
    /// Base64 predecessor output payload.
    pub payload: String,
    /// Base64 canonical receipt.
    pub receipt: String,
}

impl EinEntryWire {
    pub fn from_entry(entry: &EinEntry) -> Self {
        use crate::encode::CanonicalEncode as _;
        Self {
            payload: B64.encode(&entry.payload),
            receipt: B64.encode(entry.receipt.encode()),
        }
    }

    pub fn to_entry(&self) -> Result<EinEntry, String> {
        let payload = B64.decode(&self.payload).map_err(|e| e.to_string())?;
        let receipt_bytes = B64.decode(&self.receipt).map_err(|e| e.to_string())?;
        let receipt = Receipt::decode(&receipt_bytes).map_err(|e| e.to_string())?;
        Ok(EinEntry { payload, receipt })
    }
}

#[derive(Debug, Serialize)]
struct ErrorWire {
    error: String,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorWire {
            error: message.into(),
        }),
    )
        .into_response()
}

fn check_token(state: &ServiceState, headers: &HeaderMap) -> Result<(), Response> {
    if let Some(expected) = &state.auth_token {
        let supplied = headers.get(AUTH_HEADER).and_then(|v| v.to_str().ok());
        if supplied != Some(expected.as_str()) {
            return Err(error_response(StatusCode::UNAUTHORIZED, "bad token"));
        }
    }
    Ok(())
}

async fn handle_compute(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    body: String,
) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return resp;
    }
    // strict parse: unknown fields (in particular any attempt to supply
    // `iin` in the body) are a 400
    let wire: ComputeRequestWire = match serde_json::from_str(&body) {
        Ok(w) => w,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let mut ein = Vec::with_capacity(wire.ein.len());
    for entry in &wire.ein {
        match entry.to_entry() {
            Ok(e) => ein.push(e),
            Err(e) => {
                return error_response(StatusCode::BAD_REQUEST, format!("malformed ein entry: {e}"))
            }
        }
    }
    let params = match &wire.params {
        None => Vec::new(),
        Some(p) => match B64.decode(p) {
            Ok(p) => p,
            Err(e) => {
                return error_response(StatusCode::BAD_REQUEST, format!("malformed params: {e}"))
            }
        },
    };

    let job_id = state.next_job.fetch_add(1, Ordering::Relaxed);
    state.jobs.write().insert(
        job_id,
        JobRecord {
            job: ComputeJob::new(job_id),
            request: Some(JobRequest { ein, params }),
        },
    );
    if state.queue.try_send(job_id).is_err() {
        state.jobs.write().remove(&job_id);
        return error_response(StatusCode::TOO_MANY_REQUESTS, "job queue full");
    }
    (
        StatusCode::ACCEPTED,
        Json(serde_json::json!({ "job_id": format!("j-{job_id}") })),
    )
        .into_response()
}

#[derive(Debug, Serialize)]
struct ProofRetrievalWire {
    job_id: String,
    status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    journal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    receipt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iin_commitment: Option<CommitmentWire>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct CommitmentWire {
    scheme_tag: u8,
    digest: String,
}

async fn handle_proof_retrieval(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    Path(job_id): Path<String>,
) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return resp;
    }
    let Some(id) = job_id.strip_prefix("j-").and_then(|v| v.parse::<u64>().ok()) else {
        return error_response(StatusCode::NOT_FOUND, "unknown job");
    };
    let jobs = state.jobs.read();
    let Some(record) = jobs.get(&id) else {
        return error_response(StatusCode::NOT_FOUND, "unknown job");
    };
    use crate::encode::CanonicalEncode as _;
    let wire = ProofRetrievalWire {
        job_id: job_id.clone(),
        status: record.job.status,
        journal: record.job.result.as_ref().map(|r| B64.encode(&r.journal)),
        receipt: record
            .job
            .result
            .as_ref()
            .map(|r| B64.encode(r.receipt.encode())),
        iin_commitment: record.job.result.as_ref().map(|r| CommitmentWire {
            scheme_tag: r.receipt.iin_commitment.scheme_tag,
            digest: r.receipt.iin_commitment.digest_hex(),
        }),
        error: record.job.error.clone(),
    };
    (StatusCode::OK, Json(wire)).into_response()
}

#[derive(Debug, Serialize)]
struct InfoWire {
    tcu_id: String,
    program_id: String,
    backend_kind: crate::types::BackendKind,
    artifact_ref: String,
    verification_key: String,
    registry_seq: u64,
    version: u64,
}

async fn handle_info(State(state): State<Arc<ServiceState>>, headers: HeaderMap) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return resp;
    }
    let _ = state.registry.refresh();
    let Some(entry) = state.registry.latest_for_tcu(&state.tcu_id) else {
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "not yet registered");
    };
    let wire = InfoWire {
        tcu_id: state.tcu_id.clone(),
        program_id: entry.manifest.program_id.to_hex(),
        backend_kind: entry.manifest.backend_kind,
        artifact_ref: hex::encode(entry.manifest.artifact_ref),
        verification_key: B64.encode(&entry.manifest.verification_key),
        registry_seq: entry.seq,
        version: entry.manifest.version,
    };
    (StatusCode::OK, Json(wire)).into_response()
}

#[derive(Debug, Serialize)]
struct RegistryEntryWire {
    seq: u64,
    tcu_id: String,
    program_id: String,
    backend_kind: crate::types::BackendKind,
    version: u64,
    registrant: String,
}

/// Read-only ledger listing, so external parties can cross-check `/info`
/// against the registry without filesystem access.
async fn handle_registry_entries(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
) -> Response {
    if let Err(resp) = check_token(&state, &headers) {
        return resp;
    }
    let _ = state.registry.refresh();
    let entries: Vec<RegistryEntryWire> = state
        .registry
        .entries()
        .iter()
        .map(|e| RegistryEntryWire {
            seq: e.seq,
            tcu_id: e.tcu_id.clone(),
            program_id: e.manifest.program_id.to_hex(),
            backend_kind: e.manifest.backend_kind,
            version: e.manifest.version,
            registrant: hex::encode(e.registrant),
        })
        .collect();
    (StatusCode::OK, Json(entries)).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softtee::RootAuthority;
    use crate::types::BackendKind;
    use crate::vcc::{provision, ComputeOptions, ProvisionSpec};
    use crate::workflow::{FlConfig, FlWorkflow};
    use ed25519_dalek::SigningKey;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use tempfile::TempDir;

    struct TestWorld {
        _tmp: TempDir,
        registry: Arc<Registry>,
        root: RootAuthority,
    }

    fn test_world(seed: u64) -> TestWorld {
        let tmp = TempDir::new().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let root = RootAuthority::generate(&mut rng);
        let registry = Arc::new(Registry::create(tmp.path(), root.public_key()).unwrap());
        TestWorld {
            _tmp: tmp,
            registry,
            root,
        }
    }

    /// Learner service runtime over a provisioned workflow instance.
    fn learner_runtime(w: &TestWorld, seed: u64, token: Option<&str>) -> ServiceRuntime {
        let flow = FlWorkflow::provision(&w.registry, &w.root, FlConfig::small(seed)).unwrap();
        let mut learners = flow.learners;
        let org = learners.remove(0);
        ServiceRuntime {
            tcu_id: "org-0/learner".into(),
            instance: org.instance,
            registry: w.registry.clone(),
            iin: IinSource::Bytes({
                use crate::encode::CanonicalEncode as _;
                org.dataset.encode()
            }),
            auth_token: token.map(Into::into),
            queue_capacity: 4,
            salt_seed: Some(seed),
        }
    }

    fn learner_params_b64(flowseed: u64) -> String {
        let params = crate::fl::LearnerParams {
            epochs: 1,
            learning_rate: crate::guest::FX_ONE / 10,
            init_seed: flowseed.wrapping_add(7777),
        };
        B64.encode(params.encode())
    }

    async fn poll_done(client: &reqwest::Client, url: &str) -> serde_json::Value {
        for _ in 0..200 {
            let resp = client.get(url).send().await.unwrap();
            assert_eq!(resp.status(), 200);
            let body: serde_json::Value = resp.json().await.unwrap();
            match body["status"].as_str().unwrap() {
                "done" | "failed" => return body,
                _ => tokio::time::sleep(std::time::Duration::from_millis(10)).await,
            }
        }
        panic!("job never finished");
    }

    #[tokio::test]
    async fn compute_and_proof_retrieval_round_trip() {
        let w = test_world(40);
        let handle = spawn(learner_runtime(&w, 40, None), "127.0.0.1:0")
            .await
            .unwrap();
        let client = reqwest::Client::new();

        let resp = client
            .post(format!("{}/compute", handle.base_url()))
            .json(&serde_json::json!({ "params": learner_params_b64(40) }))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 202);
        let body: serde_json::Value = resp.json().await.unwrap();
        let job_id = body["job_id"].as_str().unwrap().to_string();

        let url = format!("{}/proofRetrieval/{}", handle.base_url(), job_id);
        let done = poll_done(&client, &url).await;
        assert_eq!(done["status"], "done");

        // the receipt verifies through the full stack
        let receipt_bytes = B64.decode(done["receipt"].as_str().unwrap()).unwrap();
        let receipt = Receipt::decode(&receipt_bytes).unwrap();
        let journal = B64.decode(done["journal"].as_str().unwrap()).unwrap();
        assert!(crate::vcc::verify_receipt(&receipt, &journal, &w.registry));

        // done payload is byte-stable across repeated GETs
        let a = client.get(&url).send().await.unwrap().text().await.unwrap();
        let b = client.get(&url).send().await.unwrap().text().await.unwrap();
        assert_eq!(a, b);

        handle.shutdown().await;
    }

    #[tokio::test]
    async fn iin_in_body_is_rejected() {
        let w = test_world(41);
        let handle = spawn(learner_runtime(&w, 41, None), "127.0.0.1:0")
            .await
            .unwrap();
        let client = reqwest::Client::new();
        let resp = client
            .post(format!("{}/compute", handle.base_url()))
            .json(&serde_json::json!({ "iin": "c2VjcmV0", "params": null }))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400);
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn bad_token_is_401() {
        let w = test_world(42);
        let handle = spawn(learner_runtime(&w, 42, Some("sesame")), "127.0.0.1:0")
            .await
            .unwrap();
        let client = reqwest::Client::new();
        let url = format!("{}/compute", handle.base_url());
        let resp = client
            .post(&url)
            .json(&serde_json::json!({}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 401);
        let resp = client
            .post(&url)
            .header(AUTH_HEADER, "sesame")
            .json(&serde_json::json!({}))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 202);
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn unknown_job_is_404() {
        let w = test_world(43);
        let handle = spawn(learner_runtime(&w, 43, None), "127.0.0.1:0")
            .await
            .unwrap();
        let resp = reqwest::get(format!("{}/proofRetrieval/j-999", handle.base_url()))
            .await
            .unwrap();
        assert_eq!(resp.status(), 404);
        let resp = reqwest::get(format!("{}/proofRetrieval/nonsense", handle.base_url()))
            .await
            .unwrap();
        assert_eq!(resp.status(), 404);
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn info_matches_registry_and_artifact_rehashes() {
        let w = test_world(44);
        let handle = spawn(learner_runtime(&w, 44, None), "127.0.0.1:0")
            .await
            .unwrap();
        let resp = reqwest::get(format!("{}/info", handle.base_url()))
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let info: serde_json::Value = resp.json().await.unwrap();
        let program_hex = info["program_id"].as_str().unwrap();
        let entry = w
            .registry
            .latest_for_tcu(info["tcu_id"].as_str().unwrap())
            .unwrap();
        assert_eq!(entry.manifest.program_id.to_hex(), program_hex);

        // client-side recomputation: blob at artifact_ref hashes to program_id
        let artifact_ref = hex::decode(info["artifact_ref"].as_str().unwrap()).unwrap();
        let artifact = w
            .registry
            .get_artifact(&artifact_ref.try_into().unwrap())
            .unwrap();
        assert_eq!(
            crate::types::program_id_of(&artifact).unwrap().to_hex(),
            program_hex
        );
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn info_before_registration_is_503() {
        let w = test_world(45);
        // provision registers; build an unregistered instance by hand
        let account = SigningKey::from_bytes(&[3u8; 32]);
        let artifact = crate::fl::build_artifact(
            crate::fl::GuestKind::Learner,
            [4, 8, 8, 2],
            account.verifying_key().to_bytes(),
        );
        // register a DIFFERENT tcu so the registry is non-empty but this
        // tcu_id has no entry
        let _other = provision(
            &w.registry,
            ProvisionSpec {
                tcu_id: "org-other/learner",
                artifact: crate::fl::build_artifact(
                    crate::fl::GuestKind::Learner,
                    [4, 8, 8, 2],
                    [9u8; 32],
                ),
                backend_kind: BackendKind::SimZk,
                predecessors: vec![],
                version: 1,
                registrant: &account,
                root: Some(&w.root),
                cost_model: Default::default(),
                cycle_budget: None,
                options: ComputeOptions::default(),
            },
            &mut ChaCha12Rng::seed_from_u64(1),
        )
        .unwrap();

        let manifest = crate::types::ProgramManifest::new(
            crate::types::program_id_of(&artifact).unwrap(),
            BackendKind::SimZk,
            crate::types::program_id_of(&artifact).unwrap().0.to_vec(),
            vec![],
            1,
        );
        let instance = TcuInstance::load(
            manifest,
            artifact,
            crate::vcc::BackendRuntime::SimZk {
                cost_model: Default::default(),
                cycle_budget: None,
            },
            &w.registry,
            ComputeOptions::default(),
        )
        .unwrap();
        let handle = spawn(
            ServiceRuntime {
                tcu_id: "org-unregistered/learner".into(),
                instance,
                registry: w.registry.clone(),
                iin: IinSource::Bytes(vec![]),
                auth_token: None,
                queue_capacity: 2,
                salt_seed: Some(1),
            },
            "127.0.0.1:0",
        )
        .await
        .unwrap();
        let resp = reqwest::get(format!("{}/info", handle.base_url()))
            .await
            .unwrap();
        assert_eq!(resp.status(), 503);
        handle.shutdown().await;
    }

    #[tokio::test]
    async fn queue_overflow_is_429() {
        let w = test_world(46);
        let mut runtime = learner_runtime(&w, 46, None);
        runtime.queue_capacity = 1;
        let handle = spawn(runtime, "127.0.0.1:0").await.unwrap();
        let client = reqwest::Client::new();
        let url = format!("{}/compute", handle.base_url());
        // heavy jobs keep the single worker busy while the queue fills
        let heavy = crate::fl::LearnerParams {
            epochs: 2000,
            learning_rate: crate::guest::FX_ONE / 10,
            init_seed: 46u64.wrapping_add(7777),
        };
        let body = serde_json::json!({ "params": B64.encode(heavy.encode()) });
        let mut saw_429 = false;
        for _ in 0..50 {
            let resp = client.post(&url).json(&body).send().await.unwrap();
            if resp.status() == 429 {
                saw_429 = true;
                break;
            }
            assert_eq!(resp.status(), 202);
        }
        assert!(saw_429, "queue never overflowed");
        handle.shutdown().await;
    }
}
