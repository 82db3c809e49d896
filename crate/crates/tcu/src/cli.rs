//! Operator CLI: key management, artifact builds, registration, serving,
//! cross-organization proof transfer, verification, audit and the
//! benchmark harness. Each subcommand is a thin wrapper over the
//! corresponding library operation.
//!
//! Exit codes: 0 success, 1 usage/environment error, 2 receipt
//! verification failed, 3 chain audit failed, 4 bench trend assertion
//! failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use clap::{Args, Parser, Subcommand};
use ed25519_dalek::SigningKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchConfig};
use crate::encode::{CanonicalDecode, CanonicalEncode};
use crate::fl::{self, GuestKind};
use crate::guest::Fx;
use crate::registry::Registry;
use crate::service::{self, IinSource, ServiceRuntime, AUTH_HEADER};
use crate::simzk::CostModel;
use crate::softtee::{RootAuthority, SoftTeeKeys};
use crate::types::{program_id_of, BackendKind, ProgramId, ProgramManifest, Receipt};
use crate::vcc::{
    audit_chain, check_receipt, BackendRuntime, ChainReport, ComputeOptions, DirReceiptStore,
    EinEntry, TcuInstance,
};

pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_AUDIT_FAILED: i32 = 3;
pub const EXIT_TREND_FAILED: i32 = 4;

#[derive(Parser)]
#[command(name = "tcu", version, about = "Chainable verifiable computations across heterogeneous proof backends")]
struct Cli {
    /// Emit machine-readable JSON instead of human-oriented text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an account (or root-of-trust) keypair.
    Keygen(KeygenArgs),
    /// Build a guest program artifact and print its program id.
    Build(BuildArgs),
    /// Create a fresh registry directory anchored to a root key.
    InitRegistry(InitRegistryArgs),
    /// Register a program into the registry.
    Register(RegisterArgs),
    /// Run a TCU service from a config file.
    Serve(ServeArgs),
    /// Schedule a computation on a running TCU service.
    Compute(ComputeArgs),
    /// Retrieve a proof (receipt + journal) for a finished job.
    FetchProof(FetchProofArgs),
    /// Retrieve a proof from one TCU and submit it to a successor.
    Submit(SubmitArgs),
    /// Verify a receipt file against a registry.
    Verify(VerifyArgs),
    /// Audit the full proof chain reachable from a receipt.
    Audit(AuditArgs),
    /// Generate confidential internal-input files.
    GenIin(GenIinArgs),
    /// Benchmark experiments e1-e4 and plotting.
    Bench(BenchArgs),
}

/// Runs the CLI; the thin `tcu` binary calls this.
pub fn main() {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            if json {
                println!("{}", serde_json::json!({ "error": err.to_string() }));
            } else {
                eprintln!("error: {err:#}");
            }
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Keygen(args) => keygen(args, cli.json),
        Command::Build(args) => build(args, cli.json),
        Command::InitRegistry(args) => init_registry(args, cli.json),
        Command::Register(args) => register(args, cli.json),
        Command::Serve(args) => serve(args),
        Command::Compute(args) => compute(args, cli.json),
        Command::FetchProof(args) => fetch_proof(args, cli.json),
        Command::Submit(args) => submit(args, cli.json),
        Command::Verify(args) => verify(args, cli.json),
        Command::Audit(args) => audit(args, cli.json),
        Command::GenIin(args) => gen_iin(args, cli.json),
        Command::Bench(args) => run_bench(args, cli.json),
    }
}

// -------------------------------------------------------------------
// key files
// -------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct KeyFile {
    public_key: String,
    secret_key: String,
    #[serde(default)]
    label: Option<String>,
}

fn write_key_file(path: &Path, key: &SigningKey, label: Option<String>) -> Result<()> {
    let file = KeyFile {
        public_key: hex::encode(key.verifying_key().to_bytes()),
        secret_key: hex::encode(key.to_bytes()),
        label,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("writing {}", path.display()))?;
    restrict_permissions(path);
    Ok(())
}

fn read_key_file(path: &Path) -> Result<SigningKey> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: KeyFile = serde_json::from_str(&raw)?;
    let secret: [u8; 32] = hex::decode(&file.secret_key)?
        .try_into()
        .map_err(|_| anyhow!("secret key must be 32 bytes"))?;
    Ok(SigningKey::from_bytes(&secret))
}

#[cfg(unix)]
fn restrict_permissions(path: &Path) {
    use std::os::unix::fs::PermissionsExt;
    let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o600));
}

#[cfg(not(unix))]
fn restrict_permissions(_path: &Path) {}

#[derive(Args)]
struct KeygenArgs {
    /// Output key file (JSON, hex-encoded Ed25519 keypair).
    #[arg(long)]
    out: PathBuf,
    /// Human-readable organization alias.
    #[arg(long)]
    label: Option<String>,
    /// Derive deterministically from a seed instead of OS entropy.
    #[arg(long)]
    seed: Option<u64>,
}

fn keygen(args: KeygenArgs, json: bool) -> Result<i32> {
    let key = match args.seed {
        Some(seed) => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            SigningKey::from_bytes(&secret)
        }
        None => {
            let mut secret = [0u8; 32];
            rand::thread_rng().fill_bytes(&mut secret);
            SigningKey::from_bytes(&secret)
        }
    };
    write_key_file(&args.out, &key, args.label)?;
    let public = hex::encode(key.verifying_key().to_bytes());
    if json {
        println!("{}", serde_json::json!({ "public_key": public, "path": args.out }));
    } else {
        println!("wrote {} (public key {public})", args.out.display());
    }
    Ok(0)
}

// -------------------------------------------------------------------
// build
// -------------------------------------------------------------------

#[derive(Args)]
struct BuildArgs {
    /// Guest kind: learner | aggregator | inference.
    #[arg(long)]
    guest: String,
    /// Network shape d_in,h1,h2,d_out.
    #[arg(long, default_value = "4,8,8,2")]
    dims: String,
    /// Owning organization's key file; its public key is compiled into
    /// the artifact.
    #[arg(long)]
    owner_key: PathBuf,
    /// Output artifact file.
    #[arg(long)]
    out: PathBuf,
}

fn parse_dims(s: &str) -> Result<[u32; 4]> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .context("dims must be four comma-separated integers")?;
    let dims: [u32; 4] = parts
        .try_into()
        .map_err(|_| anyhow!("dims must have exactly four entries"))?;
    if dims.iter().any(|&d| d == 0) {
        bail!("layer dimensions must be >= 1");
    }
    Ok(dims)
}

fn build(args: BuildArgs, json: bool) -> Result<i32> {
    let kind = GuestKind::parse(&args.guest)
        .ok_or_else(|| anyhow!("unknown guest kind {:?}", args.guest))?;
    let dims = parse_dims(&args.dims)?;
    let owner = read_key_file(&args.owner_key)?;
    let artifact = fl::build_artifact(kind, dims, owner.verifying_key().to_bytes());
    let program_id = program_id_of(&artifact)?;
    fs::write(&args.out, &artifact)?;
    if json {
        println!(
            "{}",
            serde_json::json!({ "program_id": program_id.to_hex(), "path": args.out, "bytes": artifact.len() })
        );
    } else {
        println!("{}", program_id.to_hex());
    }
    Ok(0)
}

// -------------------------------------------------------------------
// registry commands
// -------------------------------------------------------------------

#[derive(Args)]
struct InitRegistryArgs {
    /// Registry directory to create.
    #[arg(long)]
    registry: PathBuf,
    /// Root-of-trust key file (its public half anchors the ledger).
    #[arg(long)]
    root_key: PathBuf,
}

fn init_registry(args: InitRegistryArgs, json: bool) -> Result<i32> {
    let root = RootAuthority::from_secret(&read_key_file(&args.root_key)?.to_bytes());
    Registry::create(&args.registry, root.public_key())?;
    if json {
        println!("{}", serde_json::json!({ "registry": args.registry }));
    } else {
        println!("initialized registry at {}", args.registry.display());
    }
    Ok(0)
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    tcu_id: String,
    /// softtee | simzk.
    #[arg(long)]
    backend: String,
    /// Registrant account key file.
    #[arg(long)]
    account_key: PathBuf,
    /// Root-of-trust key file (SoftTee only; performs the boot).
    #[arg(long)]
    root_key: Option<PathBuf>,
    /// Sealed TEE key file to write (SoftTee only), so `serve` can reuse
    /// the booted identity.
    #[arg(long)]
    tee_key_out: Option<PathBuf>,
    /// Comma-separated predecessor program ids (hex).
    #[arg(long, default_value = "")]
    predecessors: String,
    #[arg(long, default_value_t = 1)]
    version: u64,
}

fn parse_predecessors(s: &str) -> Result<Vec<ProgramId>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            ProgramId::from_hex(p.trim()).ok_or_else(|| anyhow!("bad program id hex {:?}", p))
        })
        .collect()
}

fn register(args: RegisterArgs, json: bool) -> Result<i32> {
    let backend = BackendKind::parse(&args.backend)
        .ok_or_else(|| anyhow!("unknown backend {:?}", args.backend))?;
    let registry = Registry::open(&args.registry)?;
    let artifact = fs::read(&args.artifact)?;
    let program_id = program_id_of(&artifact)?;
    let account = read_key_file(&args.account_key)?;
    let predecessors = parse_predecessors(&args.predecessors)?;
    registry.put_artifact(&artifact)?;

    let (verification_key, attestation) = match backend {
        BackendKind::SoftTee => {
            let root_path = args
                .root_key
                .as_ref()
                .ok_or_else(|| anyhow!("--root-key is required for softtee registration"))?;
            let root = RootAuthority::from_secret(&read_key_file(root_path)?.to_bytes());
            let (keys, doc) = crate::softtee::boot(&artifact, &root, &mut rand::thread_rng())?;
            if let Some(out) = &args.tee_key_out {
                let sealed = SigningKey::from_bytes(&keys.secret_bytes());
                write_key_file(out, &sealed, Some("sealed tee keypair".into()))?;
            }
            (keys.tee_public_key().to_vec(), Some(doc))
        }
        BackendKind::SimZk => (program_id.0.to_vec(), None),
    };

    let manifest = ProgramManifest::new(
        program_id,
        backend,
        verification_key,
        predecessors,
        args.version,
    );
    let seq = registry.register(
        &args.tcu_id,
        manifest,
        attestation,
        account.verifying_key().to_bytes(),
        &account,
    )?;
    if json {
        println!(
            "{}",
            serde_json::json!({ "seq": seq, "program_id": program_id.to_hex(), "tcu_id": args.tcu_id })
        );
    } else {
        println!("registered {} as seq {seq} (program {})", args.tcu_id, program_id.to_hex());
    }
    Ok(0)
}

// -------------------------------------------------------------------
// serve
// -------------------------------------------------------------------

/// On-disk service configuration. Environment variables `TCU_LISTEN` and
/// `TCU_AUTH_TOKEN` override the corresponding fields.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfigFile {
    pub listen: String,
    pub tcu_id: String,
    /// softtee | simzk.
    pub backend: String,
    pub registry_path: PathBuf,
    pub artifact_path: PathBuf,
    /// Confidential internal input; loaded locally, never from requests.
    pub iin_path: PathBuf,
    pub account_key_path: PathBuf,
    /// SoftTee: root-of-trust key for boot-time attestation.
    #[serde(default)]
    pub root_key_path: Option<PathBuf>,
    /// SoftTee: sealed boot keypair written by `tcu register`.
    #[serde(default)]
    pub tee_key_path: Option<PathBuf>,
    #[serde(default)]
    pub auth_token: Option<String>,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: usize,
    #[serde(default = "default_version")]
    pub version: u64,
    /// Predecessor program ids (hex).
    #[serde(default)]
    pub predecessors: Vec<String>,
    /// Register at startup when this TCU id has no matching entry yet.
    #[serde(default = "default_true")]
    pub auto_register: bool,
    /// Reproducible commitment salts (testing / benchmarking only).
    #[serde(default)]
    pub salt_seed: Option<u64>,
    #[serde(default)]
    pub cost_model: Option<CostModelFile>,
    #[serde(default)]
    pub cycle_budget: Option<u64>,
}

fn default_queue_capacity() -> usize {
    16
}

fn default_version() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

/// Cost-model section of the config file, in integer time units.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelFile {
    pub prove_base_us: u64,
    pub prove_per_cycle_ns: u64,
    pub verify_base_us: u64,
    #[serde(default = "default_exponent")]
    pub slowdown_exponent: f64,
}

fn default_exponent() -> f64 {
    1.0
}

impl CostModelFile {
    pub fn to_model(&self) -> CostModel {
        CostModel {
            prove_base: Duration::from_micros(self.prove_base_us),
            prove_per_cycle: Duration::from_nanos(self.prove_per_cycle_ns),
            verify_base: Duration::from_micros(self.verify_base_us),
            slowdown_exponent: self.slowdown_exponent,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file; see docs/service-api.md for the schema.
    #[arg(long)]
    config: PathBuf,
}

fn serve(args: ServeArgs) -> Result<i32> {
    let raw = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg: ServiceConfigFile = toml::from_str(&raw)?;
    if let Ok(listen) = std::env::var("TCU_LISTEN") {
        cfg.listen = listen;
    }
    if let Ok(token) = std::env::var("TCU_AUTH_TOKEN") {
        cfg.auth_token = Some(token);
    }

    let backend = BackendKind::parse(&cfg.backend)
        .ok_or_else(|| anyhow!("unknown backend {:?}", cfg.backend))?;
    let registry = Arc::new(Registry::open(&cfg.registry_path)?);
    let artifact = fs::read(&cfg.artifact_path)?;
    let program_id = program_id_of(&artifact)?;
    let account = read_key_file(&cfg.account_key_path)?;
    let predecessors: Vec<ProgramId> = cfg
        .predecessors
        .iter()
        .map(|p| ProgramId::from_hex(p).ok_or_else(|| anyhow!("bad predecessor hex {p:?}")))
        .collect::<Result<_>>()?;
    let cost_model = cfg
        .cost_model
        .as_ref()
        .map(CostModelFile::to_model)
        .unwrap_or_default();

    // startup self-check and registration reuse: an existing entry for this
    // tcu_id must match the loaded artifact
    registry.refresh().ok();
    let existing = registry.latest_for_tcu(&cfg.tcu_id);
    if let Some(entry) = &existing {
        if entry.manifest.program_id != program_id {
            bail!(
                "registered program for {} is {}, but the configured artifact hashes to {}",
                cfg.tcu_id,
                entry.manifest.program_id.to_hex(),
                program_id.to_hex()
            );
        }
    }

    let (runtime_backend, manifest) = match backend {
        BackendKind::SoftTee => {
            let sealed = cfg
                .tee_key_path
                .as_ref()
                .filter(|p| p.exists())
                .map(|p| read_key_file(p))
                .transpose()?
                .map(|k| SoftTeeKeys::from_secret(&k.to_bytes()));
            let root = cfg
                .root_key_path
                .as_ref()
                .map(|p| read_key_file(p).map(|k| RootAuthority::from_secret(&k.to_bytes())))
                .transpose()?;

            match (sealed, existing.clone()) {
                // sealed keys + matching registration: reuse
                (Some(keys), Some(entry))
                    if entry.manifest.verification_key == keys.tee_public_key().to_vec() =>
                {
                    let attestation = entry
                        .attestation
                        .clone()
                        .ok_or_else(|| anyhow!("registered entry lacks an attestation"))?;
                    (
                        BackendRuntime::SoftTee { keys, attestation },
                        entry.manifest.clone(),
                    )
                }
                _ if !cfg.auto_register => {
                    bail!(
                        "no usable registration for {} and auto_register is off",
                        cfg.tcu_id
                    )
                }
                _ => {
                    // boot fresh keys and (re)register under the next version
                    let root = root.ok_or_else(|| {
                        anyhow!("root_key_path is required to boot a SoftTee service")
                    })?;
                    let (keys, attestation) =
                        crate::softtee::boot(&artifact, &root, &mut rand::thread_rng())?;
                    if let Some(out) = &cfg.tee_key_path {
                        let sealedkey = SigningKey::from_bytes(&keys.secret_bytes());
                        write_key_file(out, &sealedkey, Some("sealed tee keypair".into()))?;
                    }
                    let version = existing
                        .as_ref()
                        .map(|e| e.manifest.version + 1)
                        .unwrap_or(cfg.version);
                    let manifest = ProgramManifest::new(
                        program_id,
                        backend,
                        keys.tee_public_key().to_vec(),
                        predecessors.clone(),
                        version,
                    );
                    registry.register(
                        &cfg.tcu_id,
                        manifest.clone(),
                        Some(attestation.clone()),
                        account.verifying_key().to_bytes(),
                        &account,
                    )?;
                    (BackendRuntime::SoftTee { keys, attestation }, manifest)
                }
            }
        }
        BackendKind::SimZk => {
            let manifest = match existing {
                Some(entry) => entry.manifest.clone(),
                None if cfg.auto_register => {
                    let manifest = ProgramManifest::new(
                        program_id,
                        backend,
                        program_id.0.to_vec(),
                        predecessors.clone(),
                        cfg.version,
                    );
                    registry.register(
                        &cfg.tcu_id,
                        manifest.clone(),
                        None,
                        account.verifying_key().to_bytes(),
                        &account,
                    )?;
                    manifest
                }
                None => bail!(
                    "no registration for {} and auto_register is off",
                    cfg.tcu_id
                ),
            };
            (
                BackendRuntime::SimZk {
                    cost_model,
                    cycle_budget: cfg.cycle_budget,
                },
                manifest,
            )
        }
    };

    let instance = TcuInstance::load(
        manifest,
        artifact,
        runtime_backend,
        &registry,
        ComputeOptions::default(),
    )?;
    let runtime = ServiceRuntime {
        tcu_id: cfg.tcu_id.clone(),
        instance,
        registry,
        iin: IinSource::File(cfg.iin_path.clone()),
        auth_token: cfg.auth_token.clone(),
        queue_capacity: cfg.queue_capacity,
        salt_seed: cfg.salt_seed,
    };

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let handle = service::spawn(runtime, &cfg.listen).await?;
        println!("serving {} on http://{}", cfg.tcu_id, handle.addr);
        // run until killed
        futures_never().await;
        #[allow(unreachable_code)]
        Ok::<_, anyhow::Error>(0)
    })
}

async fn futures_never() {
    loop {
        tokio::time::sleep(Duration::from_secs(3600)).await;
    }
}

// -------------------------------------------------------------------
// client commands
// -------------------------------------------------------------------

fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("http client")
}

fn with_token(
    req: reqwest::blocking::RequestBuilder,
    token: &Option<String>,
) -> reqwest::blocking::RequestBuilder {
    match token {
        Some(t) => req.header(AUTH_HEADER, t),
        None => req,
    }
}

#[derive(Args)]
struct ComputeArgs {
    /// Base URL of the target TCU service.
    #[arg(long)]
    url: String,
    /// External input: a receipt file, optionally `receipt.bin=payload.bin`
    /// when the payload differs from the embedded journal. Repeatable.
    #[arg(long = "ein")]
    ein: Vec<String>,
    /// Raw canonical guest parameters file.
    #[arg(long)]
    params_file: Option<PathBuf>,
    /// Learner convenience: epochs (builds learner params).
    #[arg(long)]
    epochs: Option<u32>,
    /// Learner convenience: SGD learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Learner convenience: round-1 model init seed.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    token: Option<String>,
    /// Poll until the job finishes and print the outcome.
    #[arg(long)]
    wait: bool,
}

fn load_ein_entry(spec: &str) -> Result<EinEntry> {
    let (receipt_path, payload_path) = match spec.split_once('=') {
        Some((r, p)) => (r, Some(p)),
        None => (spec, None),
    };
    let receipt = Receipt::decode(&fs::read(receipt_path)?)
        .map_err(|e| anyhow!("decoding receipt {receipt_path}: {e}"))?;
    let payload = match payload_path {
        Some(p) => fs::read(p)?,
        None => receipt.journal.clone(),
    };
    Ok(EinEntry { payload, receipt })
}

fn build_params(args: &ComputeArgs) -> Result<Vec<u8>> {
    if let Some(path) = &args.params_file {
        return Ok(fs::read(path)?);
    }
    if args.epochs.is_some() || args.learning_rate.is_some() || args.init_seed.is_some() {
        let lr = args.learning_rate.unwrap_or(0.1);
        let params = fl::LearnerParams {
            epochs: args.epochs.unwrap_or(1),
            learning_rate: (lr * crate::guest::FX_ONE as f64).round() as Fx,
            init_seed: args.init_seed.unwrap_or(0),
        };
        return Ok(params.encode());
    }
    Ok(Vec::new())
}

fn post_compute(
    url: &str,
    ein: &[EinEntry],
    params: &[u8],
    token: &Option<String>,
) -> Result<String> {
    let wire_ein: Vec<service::EinEntryWire> =
        ein.iter().map(service::EinEntryWire::from_entry).collect();
    let body = serde_json::json!({
        "ein": wire_ein,
        "params": if params.is_empty() { None } else { Some(B64.encode(params)) },
    });
    let resp = with_token(http_client().post(format!("{url}/compute")), token)
        .json(&body)
        .send()?;
    let status = resp.status();
    let body: serde_json::Value = resp.json()?;
    if status != reqwest::StatusCode::ACCEPTED {
        bail!("compute rejected ({status}): {body}");
    }
    Ok(body["job_id"]
        .as_str()
        .ok_or_else(|| anyhow!("no job_id in response"))?
        .to_string())
}

fn poll_job(url: &str, job_id: &str, token: &Option<String>) -> Result<serde_json::Value> {
    let client = http_client();
    loop {
        let resp = with_token(
            client.get(format!("{url}/proofRetrieval/{job_id}")),
            token,
        )
        .send()?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            bail!("unknown job {job_id}");
        }
        let body: serde_json::Value = resp.json()?;
        match body["status"].as_str() {
            Some("done") | Some("failed") => return Ok(body),
            _ => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

fn compute(args: ComputeArgs, json: bool) -> Result<i32> {
    let ein: Vec<EinEntry> = args
        .ein
        .iter()
        .map(|s| load_ein_entry(s))
        .collect::<Result<_>>()?;
    let params = build_params(&args)?;
    let job_id = post_compute(&args.url, &ein, &params, &args.token)?;
    if !args.wait {
        if json {
            println!("{}", serde_json::json!({ "job_id": job_id }));
        } else {
            println!("{job_id}");
        }
        return Ok(0);
    }
    let outcome = poll_job(&args.url, &job_id, &args.token)?;
    if json {
        println!("{outcome}");
    } else {
        println!("{} -> {}", job_id, outcome["status"].as_str().unwrap_or("?"));
        if let Some(err) = outcome["error"].as_str() {
            eprintln!("job error: {err}");
        }
    }
    Ok(if outcome["status"] == "done" { 0 } else { 1 })
}

#[derive(Args)]
struct FetchProofArgs {
    #[arg(long)]
    url: String,
    #[arg(long)]
    job: String,
    /// Write the canonical receipt here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the journal bytes here.
    #[arg(long)]
    journal_out: Option<PathBuf>,
    /// Also file the receipt into this receipt-store directory under its
    /// digest, for later audits.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    token: Option<String>,
    /// Poll until the job finishes instead of failing on pending jobs.
    #[arg(long)]
    wait: bool,
}

fn fetch_proof(args: FetchProofArgs, json: bool) -> Result<i32> {
    let body = if args.wait {
        poll_job(&args.url, &args.job, &args.token)?
    } else {
        let resp = with_token(
            http_client().get(format!("{}/proofRetrieval/{}", args.url, args.job)),
            &args.token,
        )
        .send()?;
        if resp.status() == reqwest::StatusCode::NOT_FOUND {
            bail!("unknown job {}", args.job);
        }
        resp.json()?
    };
    if body["status"] != "done" {
        bail!("job {} is {} — nothing to fetch", args.job, body["status"]);
    }
    let receipt_bytes = B64.decode(
        body["receipt"]
            .as_str()
            .ok_or_else(|| anyhow!("done job without receipt"))?,
    )?;
    let receipt = Receipt::decode(&receipt_bytes).map_err(|e| anyhow!("bad receipt: {e}"))?;
    let journal = B64.decode(
        body["journal"]
            .as_str()
            .ok_or_else(|| anyhow!("done job without journal"))?,
    )?;
    if let Some(out) = &args.out {
        fs::write(out, &receipt_bytes)?;
    }
    if let Some(out) = &args.journal_out {
        fs::write(out, &journal)?;
    }
    if let Some(store) = &args.store {
        DirReceiptStore::new(store).put(&receipt)?;
    }
    if json {
        println!(
            "{}",
            serde_json::json!({
                "job_id": args.job,
                "receipt_digest": receipt.receipt_digest.to_hex(),
                "program_id": receipt.program_id.to_hex(),
                "journal_bytes": journal.len(),
            })
        );
    } else {
        println!("receipt {}", receipt.receipt_digest.to_hex());
    }
    Ok(0)
}

#[derive(Args)]
struct SubmitArgs {
    /// Predecessor service the proof is retrieved from.
    #[arg(long)]
    from: String,
    /// Finished job id on the predecessor.
    #[arg(long)]
    job: String,
    /// Successor service the proof is submitted to.
    #[arg(long)]
    to: String,
    #[arg(long)]
    params_file: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    from_token: Option<String>,
    #[arg(long)]
    to_token: Option<String>,
    /// Poll the successor job to completion.
    #[arg(long)]
    wait: bool,
}

/// Retrieve-then-submit: pulls (journal, receipt) from the predecessor's
/// proof-retrieval endpoint and posts them as external input to the
/// successor's compute endpoint.
fn submit(args: SubmitArgs, json: bool) -> Result<i32> {
    let body = poll_job(&args.from, &args.job, &args.from_token)?;
    if body["status"] != "done" {
        bail!("predecessor job {} is {}", args.job, body["status"]);
    }
    let receipt = Receipt::decode(&B64.decode(body["receipt"].as_str().unwrap_or_default())?)
        .map_err(|e| anyhow!("bad receipt: {e}"))?;
    let payload = B64.decode(body["journal"].as_str().unwrap_or_default())?;
    let entry = EinEntry { payload, receipt };

    let compute_args = ComputeArgs {
        url: args.to.clone(),
        ein: vec![],
        params_file: args.params_file.clone(),
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        init_seed: args.init_seed,
        token: args.to_token.clone(),
        wait: false,
    };
    let params = build_params(&compute_args)?;
    let job_id = post_compute(&args.to, &[entry], &params, &args.to_token)?;
    if !args.wait {
        if json {
            println!("{}", serde_json::json!({ "job_id": job_id }));
        } else {
            println!("{job_id}");
        }
        return Ok(0);
    }
    let outcome = poll_job(&args.to, &job_id, &args.to_token)?;
    if json {
        println!("{outcome}");
    } else {
        println!("{} -> {}", job_id, outcome["status"].as_str().unwrap_or("?"));
    }
    Ok(if outcome["status"] == "done" { 0 } else { 1 })
}

// -------------------------------------------------------------------
// verify / audit
// -------------------------------------------------------------------

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    receipt: PathBuf,
    /// Journal to verify against; defaults to the receipt's embedded
    /// journal.
    #[arg(long)]
    journal: Option<PathBuf>,
}

fn verify(args: VerifyArgs, json: bool) -> Result<i32> {
    let registry = Registry::open(&args.registry)?;
    let receipt = Receipt::decode(&fs::read(&args.receipt)?)
        .map_err(|e| anyhow!("bad receipt file: {e}"))?;
    let journal = match &args.journal {
        Some(p) => fs::read(p)?,
        None => receipt.journal.clone(),
    };
    let outcome = check_receipt(&receipt, &journal, &registry);
    let ok = outcome.is_ok();
    if json {
        println!(
            "{}",
            serde_json::json!({
                "ok": ok,
                "receipt_digest": receipt.receipt_digest.to_hex(),
                "flaw": outcome.err().map(|f| f.to_string()),
            })
        );
    } else if ok {
        println!("ok {}", receipt.receipt_digest.to_hex());
    } else {
        println!(
            "FAILED {}: {}",
            receipt.receipt_digest.to_hex(),
            outcome.unwrap_err()
        );
    }
    Ok(if ok { 0 } else { EXIT_VERIFY_FAILED })
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    registry: PathBuf,
    /// Receipt to start the audit from (the chain sink).
    #[arg(long)]
    receipt: PathBuf,
    /// Receipt-store directory resolving predecessor digests.
    #[arg(long)]
    store: PathBuf,
}

fn report_to_json(report: &ChainReport) -> serde_json::Value {
    serde_json::json!({
        "root": report.root_receipt_digest.to_hex(),
        "overall": report.overall,
        "visited": report
            .visited
            .iter()
            .map(|(d, p, ok)| serde_json::json!({
                "receipt_digest": d.to_hex(),
                "program_id": p.to_hex(),
                "ok": ok,
            }))
            .collect::<Vec<_>>(),
        "failures": report
            .failures
            .iter()
            .map(|(d, reason)| serde_json::json!({
                "receipt_digest": d.to_hex(),
                "reason": reason,
            }))
            .collect::<Vec<_>>(),
    })
}

fn audit(args: AuditArgs, json: bool) -> Result<i32> {
    let registry = Registry::open(&args.registry)?;
    let root_receipt = Receipt::decode(&fs::read(&args.receipt)?)
        .map_err(|e| anyhow!("bad receipt file: {e}"))?;
    let store = DirReceiptStore::new(&args.store);
    let report = audit_chain(&root_receipt, &store, &registry)
        .map_err(|e| anyhow!("audit error: {e}"))?;
    if json {
        println!("{}", report_to_json(&report));
    } else {
        for (digest, program, ok) in &report.visited {
            println!(
                "{} {} program {}",
                if *ok { "ok    " } else { "FAILED" },
                digest.to_hex(),
                &program.to_hex()[..16]
            );
        }
        for (digest, reason) in &report.failures {
            println!("failure {}: {reason}", digest.to_hex());
        }
        println!(
            "chain {}: {} node(s)",
            if report.overall { "CLEAN" } else { "TAMPERED" },
            report.visited.len()
        );
    }
    Ok(if report.overall { 0 } else { EXIT_AUDIT_FAILED })
}

// -------------------------------------------------------------------
// iin generators
// -------------------------------------------------------------------

#[derive(Args)]
struct GenIinArgs {
    #[command(subcommand)]
    what: GenIinCommand,
}

#[derive(Subcommand)]
enum GenIinCommand {
    /// Synthetic signed dataset for a learner.
    Dataset {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        d_in: usize,
        /// Owner account key used to sign the rows.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregation weight scheme.
    Weights {
        /// Either `--uniform N` or explicit `--values 0.5,0.5`.
        #[arg(long)]
        uniform: Option<usize>,
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature vector for inference.
    Features {
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_fx_list(s: &str) -> Result<Vec<Fx>> {
    s.split(',')
        .map(|v| {
            let f: f64 = v.trim().parse()?;
            Ok((f * crate::guest::FX_ONE as f64).round() as Fx)
        })
        .collect()
}

fn gen_iin(args: GenIinArgs, json: bool) -> Result<i32> {
    let (path, what) = match args.what {
        GenIinCommand::Dataset {
            seed,
            rows,
            d_in,
            key,
            out,
        } => {
            let key = read_key_file(&key)?;
            let dataset = fl::Dataset::sign(fl::synthetic_rows(seed, rows, d_in), &key);
            fs::write(&out, dataset.encode())?;
            restrict_permissions(&out);
            (out, "dataset")
        }
        GenIinCommand::Weights { uniform, values, out } => {
            let scheme = match (uniform, values) {
                (Some(n), None) => fl::WeightScheme::uniform(n),
                (None, Some(v)) => fl::WeightScheme {
                    weights: parse_fx_list(&v)?,
                },
                _ => bail!("specify exactly one of --uniform or --values"),
            };
            fs::write(&out, scheme.encode())?;
            restrict_permissions(&out);
            (out, "weights")
        }
        GenIinCommand::Features { values, out } => {
            let features = parse_fx_list(&values)?;
            fs::write(&out, fl::encode_features(&features))?;
            restrict_permissions(&out);
            (out, "features")
        }
    };
    if json {
        println!("{}", serde_json::json!({ "path": path, "kind": what }));
    } else {
        println!("wrote {} ({what})", path.display());
    }
    Ok(0)
}

// -------------------------------------------------------------------
// bench
// -------------------------------------------------------------------

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    experiment: BenchCommand,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Setup/registration timing and registry event counts.
    E1(BenchCommon),
    /// 2x2 backend matrix for learning and aggregation.
    E2(BenchCommon),
    /// Learner sweep over dataset rows (Fig. 3 analogue).
    E3(BenchCommon),
    /// Aggregator sweep over learner counts (Fig. 4 analogue).
    E4(BenchCommon),
    /// Render SVG plots from previously emitted CSV files.
    Plot {
        /// Directory holding the e3/e4 CSV output.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BenchCommon {
    /// Output directory for CSV files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Reduced sweeps for a quick smoke run.
    #[arg(long)]
    quick: bool,
}

fn run_bench(args: BenchArgs, json: bool) -> Result<i32> {
    match args.experiment {
        BenchCommand::E1(common) => {
            let cfg = BenchConfig::new(common.seed, &common.out);
            let rows = bench::run_e1(&cfg)?;
            emit_bench_summary(json, "e1", rows.len(), None);
            Ok(0)
        }
        BenchCommand::E2(common) => {
            let cfg = BenchConfig::new(common.seed, &common.out);
            let rows = bench::run_e2(&cfg)?;
            emit_bench_summary(json, "e2", rows.len(), None);
            Ok(0)
        }
        BenchCommand::E3(common) => {
            let cfg = BenchConfig::new(common.seed, &common.out);
            let counts = if common.quick {
                vec![20, 40, 80, 160]
            } else {
                bench::e3_row_counts()
            };
            let rows = bench::run_e3(&cfg, &counts)?;
            let trend = if common.quick {
                Ok(())
            } else {
                bench::assert_e3_trends(&rows)
            };
            emit_bench_summary(json, "e3", rows.len(), trend.as_ref().err().map(|e| e.to_string()));
            Ok(if trend.is_ok() { 0 } else { EXIT_TREND_FAILED })
        }
        BenchCommand::E4(common) => {
            let cfg = BenchConfig::new(common.seed, &common.out);
            let counts = if common.quick {
                vec![2, 4, 8, 16]
            } else {
                bench::e4_model_counts()
            };
            let rows = bench::run_e4(&cfg, &counts)?;
            let trend = bench::assert_e4_trends(&rows);
            emit_bench_summary(json, "e4", rows.len(), trend.as_ref().err().map(|e| e.to_string()));
            Ok(if trend.is_ok() { 0 } else { EXIT_TREND_FAILED })
        }
        BenchCommand::Plot { out } => {
            let plots = plot_from_csv(&out)?;
            if json {
                println!("{}", serde_json::json!({ "plots": plots }));
            } else {
                for p in plots {
                    println!("wrote {p}");
                }
            }
            Ok(0)
        }
    }
}

fn emit_bench_summary(json: bool, name: &str, rows: usize, trend_failure: Option<String>) {
    if json {
        println!(
            "{}",
            serde_json::json!({ "experiment": name, "rows": rows, "trend_failure": trend_failure })
        );
    } else {
        match trend_failure {
            None => println!("{name}: {rows} rows, trends ok"),
            Some(e) => println!("{name}: {rows} rows, TREND FAILURE: {e}"),
        }
    }
}

/// Re-reads the e3/e4 CSVs and renders the figure analogues.
fn plot_from_csv(dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let e3 = dir.join("e3_learner_sweep.csv");
    if e3.exists() {
        let rows = read_e3_csv(&e3)?;
        let svg = bench::plot_e3(&rows);
        let path = dir.join("e3_learner_sweep.svg");
        fs::write(&path, svg)?;
        written.push(path.display().to_string());
    }
    let e4 = dir.join("e4_aggregator_sweep.csv");
    if e4.exists() {
        let rows = read_e4_csv(&e4)?;
        let svg = bench::plot_e4(&rows);
        let path = dir.join("e4_aggregator_sweep.svg");
        fs::write(&path, svg)?;
        written.push(path.display().to_string());
    }
    if written.is_empty() {
        bail!("no e3/e4 CSV files found under {}", dir.display());
    }
    Ok(written)
}

fn read_e3_csv(path: &Path) -> Result<Vec<bench::E3Row>> {
    let raw = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in raw.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 7 {
            continue;
        }
        rows.push(bench::E3Row {
            rows: fields[0].parse()?,
            backend: BackendKind::parse(fields[1])
                .ok_or_else(|| anyhow!("bad backend {:?}", fields[1]))?,
            train: Duration::from_micros(fields[2].parse()?),
            prove_or_sim: Duration::from_micros(fields[3].parse()?),
            verify: Duration::from_micros(fields[4].parse()?),
            cycle_count: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse()?)
            },
            journal_digest: {
                let mut d = [0u8; 32];
                hex::decode_to_slice(fields[6], &mut d).ok();
                d
            },
        });
    }
    Ok(rows)
}

fn read_e4_csv(path: &Path) -> Result<Vec<bench::E4Row>> {
    let raw = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in raw.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 6 {
            continue;
        }
        rows.push(bench::E4Row {
            n_models: fields[0].parse()?,
            backend: BackendKind::parse(fields[1])
                .ok_or_else(|| anyhow!("bad backend {:?}", fields[1]))?,
            eiv_total: Duration::from_micros(fields[2].parse()?),
            aggregate: Duration::from_micros(fields[3].parse()?),
            eiv_cycles: fields[4].parse()?,
            total_cycles: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse()?)
            },
        });
    }
    Ok(rows)
}
