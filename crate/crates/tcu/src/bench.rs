//! Benchmark harness: four experiments measuring setup cost, backend
//! interoperability, dataset scaling and aggregation scaling, emitted as
//! CSV with trend assertions suitable for CI.
//!
//! Absolute times depend on the host; the assertions are about trends
//! (near-constant TEE-style verification, linear-in-cycles simulated
//! proving), not wall-clock values. Every run is seeded: rerunning with
//! the same seed reproduces identical journals, receipts and cycle
//! counts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::encode::CanonicalEncode;
use crate::fl::{build_artifact, synthetic_rows, Dataset, GuestKind, LearnerParams, WeightScheme};
use crate::guest::{Phase, FX_ONE};
use crate::registry::Registry;
use crate::simzk::CostModel;
use crate::softtee::RootAuthority;
use crate::types::{sha256, BackendKind, ProgramId};
use crate::vcc::{
    provision, verify_receipt, ComputeOptions, ComputeOutput, EinEntry, ProvisionSpec, TcuInstance,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("compute: {0}")]
    Compute(#[from] crate::vcc::ComputeError),
    #[error("registry: {0}")]
    Registry(#[from] crate::registry::RegistryError),
    #[error("trend assertion failed: {0}")]
    TrendAssertion(String),
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dims: [u32; 4],
    pub cost_model: CostModel,
    /// Verification timings are medians over this many repetitions.
    pub verify_reps: usize,
}

impl BenchConfig {
    pub fn new(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed,
            out_dir: out_dir.into(),
            dims: [4, 8, 8, 2],
            cost_model: CostModel::default(),
            verify_reps: 21,
        }
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::with_capacity(rows.len() * 64 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out)
}

fn median_us(samples: &mut [u128]) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Median wall time of `verify_receipt` over the configured repetitions.
fn measure_verify(
    receipt: &crate::types::Receipt,
    journal: &[u8],
    registry: &Registry,
    reps: usize,
) -> Duration {
    assert!(verify_receipt(receipt, journal, registry));
    let mut samples: Vec<u128> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            let ok = verify_receipt(receipt, journal, registry);
            debug_assert!(ok);
            t.elapsed().as_nanos()
        })
        .collect();
    Duration::from_nanos(median_us(&mut samples) as u64)
}

struct Org {
    account: SigningKey,
    instance: TcuInstance,
}

fn keygen(rng: &mut ChaCha12Rng) -> SigningKey {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    SigningKey::from_bytes(&secret)
}

fn provision_learner(
    registry: &Registry,
    root: &RootAuthority,
    backend: BackendKind,
    dims: [u32; 4],
    tcu_id: &str,
    predecessors: Vec<ProgramId>,
    cost_model: &CostModel,
    rng: &mut ChaCha12Rng,
) -> Result<Org, BenchError> {
    let account = keygen(rng);
    let artifact = build_artifact(GuestKind::Learner, dims, account.verifying_key().to_bytes());
    let instance = provision(
        registry,
        ProvisionSpec {
            tcu_id,
            artifact,
            backend_kind: backend,
            predecessors,
            version: 1,
            registrant: &account,
            root: Some(root),
            cost_model: cost_model.clone(),
            cycle_budget: None,
            options: ComputeOptions::default(),
        },
        rng,
    )?;
    Ok(Org { account, instance })
}

fn provision_aggregator(
    registry: &Registry,
    root: &RootAuthority,
    backend: BackendKind,
    dims: [u32; 4],
    tcu_id: &str,
    predecessors: Vec<ProgramId>,
    cost_model: &CostModel,
    rng: &mut ChaCha12Rng,
) -> Result<Org, BenchError> {
    let account = keygen(rng);
    let artifact = build_artifact(GuestKind::Aggregator, dims, account.verifying_key().to_bytes());
    let instance = provision(
        registry,
        ProvisionSpec {
            tcu_id,
            artifact,
            backend_kind: backend,
            predecessors,
            version: 1,
            registrant: &account,
            root: Some(root),
            cost_model: cost_model.clone(),
            cycle_budget: None,
            options: ComputeOptions::default(),
        },
        rng,
    )?;
    Ok(Org { account, instance })
}

fn learner_compute(
    org: &mut Org,
    rows: usize,
    epochs: u32,
    seed: u64,
    d_in: usize,
    ein: &[EinEntry],
    registry: &Registry,
    rng: &mut ChaCha12Rng,
) -> Result<ComputeOutput, BenchError> {
    let dataset = Dataset::sign(synthetic_rows(seed, rows, d_in), &org.account);
    let params = LearnerParams {
        epochs,
        learning_rate: FX_ONE / 10,
        init_seed: seed,
    };
    Ok(org
        .instance
        .compute(ein, &dataset.encode(), &params.encode(), registry, rng)?)
}

// ---------------------------------------------------------------------
// E1: setup and registration cost
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct E1Row {
    pub backend: BackendKind,
    pub phase: &'static str,
    pub duration: Duration,
    pub blob_puts: u64,
    pub entry_appends: u64,
}

/// Measures TCU instantiation (artifact build + backend boot/setup) and
/// registration for both backends, counting registry events. Registration
/// of one TCU is exactly one blob put and one ledger append.
pub fn run_e1(cfg: &BenchConfig) -> Result<Vec<E1Row>, BenchError> {
    let mut rows = Vec::new();
    for backend in [BackendKind::SoftTee, BackendKind::SimZk] {
        let tmp = tempdir_in(&cfg.out_dir)?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let root = RootAuthority::generate(&mut rng);
        let registry = Registry::create(&tmp, root.public_key())?;
        let account = keygen(&mut rng);

        let before = registry.events();
        let t = Instant::now();
        let artifact =
            build_artifact(GuestKind::Learner, cfg.dims, account.verifying_key().to_bytes());
        // instantiation: compile-equivalent artifact build plus key setup
        let boot_probe = match backend {
            BackendKind::SoftTee => {
                crate::softtee::boot(&artifact, &root, &mut rng).map(|_| ()).ok()
            }
            BackendKind::SimZk => crate::simzk::setup(&artifact).map(|_| ()).ok(),
        };
        assert!(boot_probe.is_some());
        let instantiate = t.elapsed();

        let t = Instant::now();
        let org = match backend {
            BackendKind::SoftTee => provision_learner(
                &registry,
                &root,
                backend,
                cfg.dims,
                "org-e1/learner",
                vec![],
                &cfg.cost_model,
                &mut rng,
            )?,
            BackendKind::SimZk => provision_learner(
                &registry,
                &root,
                backend,
                cfg.dims,
                "org-e1/learner",
                vec![],
                &cfg.cost_model,
                &mut rng,
            )?,
        };
        let register = t.elapsed();
        let after = registry.events();
        let _ = org;

        let blob_puts = after.blob_puts - before.blob_puts;
        let entry_appends = after.entry_appends - before.entry_appends;
        if blob_puts != 1 || entry_appends != 1 {
            return Err(BenchError::TrendAssertion(format!(
                "expected 1 blob put + 1 entry append per registration, saw {blob_puts}+{entry_appends}"
            )));
        }
        rows.push(E1Row {
            backend,
            phase: "instantiate",
            duration: instantiate,
            blob_puts: 0,
            entry_appends: 0,
        });
        rows.push(E1Row {
            backend,
            phase: "register",
            duration: register,
            blob_puts,
            entry_appends,
        });
        fs::remove_dir_all(&tmp).ok();
    }

    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.backend.name(),
                r.phase,
                r.duration.as_micros(),
                r.blob_puts,
                r.entry_appends
            )
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("e1_setup.csv"),
        "backend,phase,duration_us,blob_puts,entry_appends",
        &csv,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------
// E2: 2x2 backend matrix for learning and aggregation
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct E2Row {
    pub task: &'static str,
    pub vcc_backend: BackendKind,
    pub ein_backend: BackendKind,
    pub eiv: Duration,
    pub execute: Duration,
    pub commit: Duration,
    pub prove_wall: Duration,
    pub simulated_prove: Option<Duration>,
    pub verify: Duration,
}

/// Runs the same compute job under each backend while verifying
/// predecessor proofs from each backend: all four combinations per task.
pub fn run_e2(cfg: &BenchConfig) -> Result<Vec<E2Row>, BenchError> {
    let mut rows = Vec::new();
    for task in ["learner", "aggregator"] {
        for vcc_backend in [BackendKind::SoftTee, BackendKind::SimZk] {
            for ein_backend in [BackendKind::SoftTee, BackendKind::SimZk] {
                let tmp = tempdir_in(&cfg.out_dir)?;
                let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
                let root = RootAuthority::generate(&mut rng);
                let registry = Registry::create(&tmp, root.public_key())?;

                let out = match task {
                    "learner" => {
                        // predecessor chain: bootstrap learner -> aggregator
                        // (ein backend) -> measured learner (vcc backend)
                        let mut boot_learner = provision_learner(
                            &registry, &root, ein_backend, cfg.dims, "org-boot/learner",
                            vec![], &cfg.cost_model, &mut rng,
                        )?;
                        let boot_out = learner_compute(
                            &mut boot_learner, 8, 1, cfg.seed + 1, cfg.dims[0] as usize, &[],
                            &registry, &mut rng,
                        )?;
                        let agg = provision_aggregator(
                            &registry, &root, ein_backend, cfg.dims, "org-agg/aggregator",
                            vec![boot_learner.instance.program_id()], &cfg.cost_model, &mut rng,
                        )?;
                        let weights = WeightScheme::uniform(1);
                        let global = agg.instance.compute(
                            &[EinEntry::from_receipt(boot_out.receipt.clone())],
                            &weights.encode(),
                            &[],
                            &registry,
                            &mut rng,
                        )?;
                        let mut measured = provision_learner(
                            &registry, &root, vcc_backend, cfg.dims, "org-measured/learner",
                            vec![agg.instance.program_id()], &cfg.cost_model, &mut rng,
                        )?;
                        learner_compute(
                            &mut measured, 8, 1, cfg.seed + 2, cfg.dims[0] as usize,
                            &[EinEntry::from_receipt(global.receipt.clone())],
                            &registry, &mut rng,
                        )?
                    }
                    _ => {
                        // two learners (ein backend) -> measured aggregator
                        let mut locals = Vec::new();
                        let mut ids = Vec::new();
                        for i in 0..2 {
                            let mut learner = provision_learner(
                                &registry, &root, ein_backend, cfg.dims,
                                &format!("org-{i}/learner"), vec![], &cfg.cost_model, &mut rng,
                            )?;
                            let out = learner_compute(
                                &mut learner, 8, 1, cfg.seed + 10 + i as u64,
                                cfg.dims[0] as usize, &[], &registry, &mut rng,
                            )?;
                            ids.push(learner.instance.program_id());
                            locals.push(EinEntry::from_receipt(out.receipt));
                        }
                        let agg = provision_aggregator(
                            &registry, &root, vcc_backend, cfg.dims, "org-agg/aggregator",
                            ids, &cfg.cost_model, &mut rng,
                        )?;
                        agg.instance.compute(
                            &locals,
                            &WeightScheme::uniform(2).encode(),
                            &[],
                            &registry,
                            &mut rng,
                        )?
                    }
                };

                let verify = measure_verify(&out.receipt, &out.journal, &registry, cfg.verify_reps);
                rows.push(E2Row {
                    task: if task == "learner" { "learner" } else { "aggregator" },
                    vcc_backend,
                    ein_backend,
                    eiv: Duration::from_nanos(out.metrics.exec.wall_ns(Phase::Eiv) as u64),
                    execute: Duration::from_nanos(out.metrics.exec.wall_ns(Phase::Execute) as u64),
                    commit: Duration::from_nanos(out.metrics.exec.wall_ns(Phase::Commit) as u64),
                    prove_wall: out.metrics.prove_wall,
                    simulated_prove: out.metrics.simulated_prove_time,
                    verify,
                });
                fs::remove_dir_all(&tmp).ok();
            }
        }
    }

    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.task,
                r.vcc_backend.name(),
                r.ein_backend.name(),
                r.eiv.as_micros(),
                r.execute.as_micros(),
                r.commit.as_micros(),
                r.prove_wall.as_micros(),
                r.simulated_prove.map(|d| d.as_micros()).unwrap_or(0),
                r.verify.as_micros()
            )
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("e2_matrix.csv"),
        "task,vcc_backend,ein_backend,eiv_us,execute_us,commit_us,prove_wall_us,simulated_prove_us,verify_us",
        &csv,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------
// E3: learner sweep over dataset rows
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct E3Row {
    pub rows: usize,
    pub backend: BackendKind,
    pub train: Duration,
    /// SoftTee: wall sealing time; SimZk: cost-model proving time.
    pub prove_or_sim: Duration,
    pub verify: Duration,
    pub cycle_count: Option<u64>,
    pub journal_digest: [u8; 32],
}

/// Doubling sweep 20..=10240.
pub fn e3_row_counts() -> Vec<usize> {
    (0..10).map(|i| 20 << i).collect()
}

/// Sweeps dataset volume for the learner under both backends and checks
/// the trends: near-constant SoftTee verification, >=100x simulated
/// proving growth, and journal determinism across backends at every
/// sweep point.
pub fn run_e3(cfg: &BenchConfig, counts: &[usize]) -> Result<Vec<E3Row>, BenchError> {
    let tmp = tempdir_in(&cfg.out_dir)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let root = RootAuthority::generate(&mut rng);
    let registry = Registry::create(&tmp, root.public_key())?;

    let mut orgs = vec![
        provision_learner(
            &registry, &root, BackendKind::SoftTee, cfg.dims, "org-tee/learner", vec![],
            &cfg.cost_model, &mut rng,
        )?,
        provision_learner(
            &registry, &root, BackendKind::SimZk, cfg.dims, "org-zk/learner", vec![],
            &cfg.cost_model, &mut rng,
        )?,
    ];

    let mut rows = Vec::new();
    for &n in counts {
        let mut digests = Vec::new();
        for org in orgs.iter_mut() {
            let out =
                learner_compute(org, n, 1, cfg.seed + n as u64, cfg.dims[0] as usize, &[], &registry, &mut rng)?;
            let backend = out.receipt.backend_kind;
            let train = Duration::from_nanos(out.metrics.exec.wall_ns(Phase::Execute) as u64);
            let prove_or_sim = match backend {
                BackendKind::SoftTee => {
                    let guest_total: u128 = (0..3)
                        .map(|p| out.metrics.exec.wall_by_phase_ns[p])
                        .sum();
                    out.metrics
                        .prove_wall
                        .saturating_sub(Duration::from_nanos(guest_total as u64))
                }
                BackendKind::SimZk => out.metrics.simulated_prove_time.unwrap(),
            };
            let verify = measure_verify(&out.receipt, &out.journal, &registry, cfg.verify_reps);
            digests.push(sha256(&out.journal));
            rows.push(E3Row {
                rows: n,
                backend,
                train,
                prove_or_sim,
                verify,
                cycle_count: out.metrics.cycle_count,
                journal_digest: sha256(&out.journal),
            });
        }
        if digests[0] != digests[1] {
            return Err(BenchError::TrendAssertion(format!(
                "journals diverge across backends at {n} rows"
            )));
        }
    }
    fs::remove_dir_all(&tmp).ok();

    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.rows,
                r.backend.name(),
                r.train.as_micros(),
                r.prove_or_sim.as_micros(),
                r.verify.as_micros(),
                r.cycle_count.map(|c| c.to_string()).unwrap_or_default(),
                hex::encode(r.journal_digest)
            )
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("e3_learner_sweep.csv"),
        "rows,backend,train_us,prove_or_sim_us,verify_us,cycle_count,journal_digest",
        &csv,
    )?;
    Ok(rows)
}

/// Fig. 3 analogue assertions over E3 rows.
pub fn assert_e3_trends(rows: &[E3Row]) -> Result<(), BenchError> {
    let tee_verifies: Vec<u128> = rows
        .iter()
        .filter(|r| r.backend == BackendKind::SoftTee)
        .map(|r| r.verify.as_nanos())
        .collect();
    let (min, max) = (
        *tee_verifies.iter().min().unwrap(),
        *tee_verifies.iter().max().unwrap(),
    );
    if max >= 2 * min {
        return Err(BenchError::TrendAssertion(format!(
            "SoftTee verify varies {}x (>= 2x) across the sweep",
            max as f64 / min as f64
        )));
    }

    let sim: Vec<(usize, u128)> = rows
        .iter()
        .filter(|r| r.backend == BackendKind::SimZk)
        .map(|r| (r.rows, r.prove_or_sim.as_nanos()))
        .collect();
    let at = |n: usize| sim.iter().find(|(rows, _)| *rows == n).map(|(_, t)| *t);
    let (small, large) = (at(20), at(10240));
    if let (Some(small), Some(large)) = (small, large) {
        if large < 100 * small {
            return Err(BenchError::TrendAssertion(format!(
                "simulated prove time grew only {:.1}x from 20 to 10240 rows",
                large as f64 / small as f64
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// E4: aggregator sweep over learner counts
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct E4Row {
    pub n_models: usize,
    pub backend: BackendKind,
    pub eiv_total: Duration,
    pub aggregate: Duration,
    pub eiv_cycles: u64,
    pub total_cycles: Option<u64>,
}

/// Doubling sweep 2..=512 plus the paper's 800 endpoint.
pub fn e4_model_counts() -> Vec<usize> {
    let mut counts: Vec<usize> = (1..10).map(|i| 2 << (i - 1)).collect();
    counts.push(800);
    counts
}

/// Sweeps the number of local models through the aggregator for both
/// backends. Learner receipts are produced once (SoftTee producers for the
/// SoftTee aggregator, SimZk producers for the SimZk one) and subsets are
/// fed to one reusable aggregator per backend.
pub fn run_e4(cfg: &BenchConfig, counts: &[usize]) -> Result<Vec<E4Row>, BenchError> {
    let max_n = counts.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for backend in [BackendKind::SoftTee, BackendKind::SimZk] {
        let tmp = tempdir_in(&cfg.out_dir)?;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let root = RootAuthority::generate(&mut rng);
        let registry = Registry::create(&tmp, root.public_key())?;

        let mut locals = Vec::with_capacity(max_n);
        let mut ids = Vec::with_capacity(max_n);
        for i in 0..max_n {
            let mut learner = provision_learner(
                &registry, &root, backend, cfg.dims, &format!("org-{i}/learner"), vec![],
                &cfg.cost_model, &mut rng,
            )?;
            let out = learner_compute(
                &mut learner, 4, 1, cfg.seed + i as u64, cfg.dims[0] as usize, &[], &registry,
                &mut rng,
            )?;
            ids.push(learner.instance.program_id());
            locals.push(EinEntry::from_receipt(out.receipt));
        }
        let agg = provision_aggregator(
            &registry, &root, backend, cfg.dims, "org-agg/aggregator", ids, &cfg.cost_model,
            &mut rng,
        )?;

        for &n in counts {
            // median over repeated runs keeps small-n timings stable
            let mut eiv_samples = Vec::new();
            let mut agg_samples = Vec::new();
            let mut eiv_cycles = 0;
            let mut total_cycles = None;
            for _ in 0..3 {
                let out = agg.instance.compute(
                    &locals[..n],
                    &WeightScheme::uniform(n).encode(),
                    &[],
                    &registry,
                    &mut rng,
                )?;
                eiv_samples.push(out.metrics.exec.wall_ns(Phase::Eiv));
                agg_samples.push(out.metrics.exec.wall_ns(Phase::Execute));
                eiv_cycles = out.metrics.exec.cycles(Phase::Eiv);
                total_cycles = out.metrics.cycle_count;
            }
            rows.push(E4Row {
                n_models: n,
                backend,
                eiv_total: Duration::from_nanos(median_us(&mut eiv_samples) as u64),
                aggregate: Duration::from_nanos(median_us(&mut agg_samples) as u64),
                eiv_cycles,
                total_cycles,
            });
        }
        fs::remove_dir_all(&tmp).ok();
    }

    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.n_models,
                r.backend.name(),
                r.eiv_total.as_micros(),
                r.aggregate.as_micros(),
                r.eiv_cycles,
                r.total_cycles.map(|c| c.to_string()).unwrap_or_default()
            )
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("e4_aggregator_sweep.csv"),
        "n_models,backend,eiv_total_us,aggregate_us,eiv_cycles,total_cycles",
        &csv,
    )?;
    Ok(rows)
}

/// Least-squares linear fit, returning (slope, intercept, r_squared).
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| {
            let fit = slope * x + intercept;
            (y - fit) * (y - fit)
        })
        .sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r_squared)
}

/// Fig. 4 analogue assertions: per-model EIV time constant within +/-50%
/// of its median across the sweep, and SimZk total cycles fitting a line
/// with R^2 >= 0.95.
pub fn assert_e4_trends(rows: &[E4Row]) -> Result<(), BenchError> {
    for backend in [BackendKind::SoftTee, BackendKind::SimZk] {
        let mut per_model: Vec<f64> = rows
            .iter()
            .filter(|r| r.backend == backend)
            .map(|r| r.eiv_total.as_nanos() as f64 / r.n_models as f64)
            .collect();
        let mut sorted = per_model.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for v in per_model.drain(..) {
            if v < 0.5 * median || v > 1.5 * median {
                return Err(BenchError::TrendAssertion(format!(
                    "{} per-model EIV time {v:.0}ns outside +/-50% of median {median:.0}ns",
                    backend.name()
                )));
            }
        }
    }

    let zk_points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.backend == BackendKind::SimZk)
        .filter_map(|r| r.total_cycles.map(|c| (r.n_models as f64, c as f64)))
        .collect();
    let (_, _, r_squared) = linear_fit(&zk_points);
    if r_squared < 0.95 {
        return Err(BenchError::TrendAssertion(format!(
            "SimZk cycle counts fit a line with R^2 = {r_squared:.4} < 0.95"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// plotting
// ---------------------------------------------------------------------

/// Renders a minimal log-log SVG line plot of (x, series of y) points; the
/// Fig. 3 / Fig. 4 analogues. No styling ambitions — gridless axes, one
/// polyline per series, labels on the right.
pub fn render_svg_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (min_x, max_x) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
    let (min_y, max_y) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), (_, y)| (lo.min(*y), hi.max(*y)));
    let lx = |x: f64| {
        let (a, b) = (min_x.max(1e-9).log10(), max_x.max(1e-9).log10());
        M + (x.max(1e-9).log10() - a) / (b - a).max(1e-9) * (W - 2.0 * M)
    };
    let ly = |y: f64| {
        let (a, b) = (min_y.max(1e-9).log10(), max_y.max(1e-9).log10());
        H - M - (y.max(1e-9).log10() - a) / (b - a).max(1e-9) * (H - 2.0 * M)
    };

    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>
<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label} (log)</text>
<text x="16" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{y_label} (log)</text>
"#,
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 16.0,
        H / 2.0,
        H / 2.0,
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", lx(*x), ly(*y))).collect();
        let _ = write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>
"#,
            path.join(" ")
        );
        if let Some((x, y)) = pts.last() {
            let _ = write!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>
"#,
                lx(*x) + 4.0,
                ly(*y)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders the Fig. 3 analogue from e3 rows.
pub fn plot_e3(rows: &[E3Row]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = [
        ("tee train", BackendKind::SoftTee, true),
        ("tee verify", BackendKind::SoftTee, false),
        ("zk sim-prove", BackendKind::SimZk, true),
        ("zk verify", BackendKind::SimZk, false),
    ]
    .into_iter()
    .map(|(name, backend, wants_cost)| {
        let pts = rows
            .iter()
            .filter(|r| r.backend == backend)
            .map(|r| {
                let y = if wants_cost {
                    if backend == BackendKind::SimZk {
                        r.prove_or_sim.as_micros() as f64
                    } else {
                        r.train.as_micros() as f64
                    }
                } else {
                    r.verify.as_micros() as f64
                };
                (r.rows as f64, y.max(1.0))
            })
            .collect();
        (name.to_string(), pts)
    })
    .collect();
    render_svg_plot("Learner scaling over dataset rows", "rows", "time (us)", &series)
}

/// Renders the Fig. 4 analogue from e4 rows.
pub fn plot_e4(rows: &[E4Row]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = [
        ("tee eiv", BackendKind::SoftTee),
        ("zk eiv", BackendKind::SimZk),
    ]
    .into_iter()
    .map(|(name, backend)| {
        let pts = rows
            .iter()
            .filter(|r| r.backend == backend)
            .map(|r| (r.n_models as f64, (r.eiv_total.as_micros() as f64).max(1.0)))
            .collect();
        (name.to_string(), pts)
    })
    .collect();
    render_svg_plot(
        "Aggregator EIV scaling over model count",
        "models",
        "time (us)",
        &series,
    )
}

fn tempdir_in(out_dir: &Path) -> std::io::Result<PathBuf> {
    let dir = out_dir.join(format!(
        ".bench-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn e1_counts_one_put_and_one_append() {
        let tmp = TempDir::new().unwrap();
        let cfg = BenchConfig::new(5, tmp.path());
        let rows = run_e1(&cfg).unwrap();
        assert_eq!(rows.len(), 4); // 2 backends x 2 phases
        assert!(tmp.path().join("e1_setup.csv").exists());
    }

    #[test]
    fn e2_all_four_combinations_succeed_per_task() {
        let tmp = TempDir::new().unwrap();
        let cfg = BenchConfig::new(6, tmp.path());
        let rows = run_e2(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
    }

    #[test]
    fn e3_small_sweep_has_trends_and_is_reproducible() {
        let tmp = TempDir::new().unwrap();
        let mut cfg = BenchConfig::new(7, tmp.path());
        cfg.verify_reps = 5;
        let counts = vec![20, 40, 80];
        let a = run_e3(&cfg, &counts).unwrap();
        let b = run_e3(&cfg, &counts).unwrap();
        // same seed: identical journals and cycle counts, timings aside
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.journal_digest, rb.journal_digest);
            assert_eq!(ra.cycle_count, rb.cycle_count);
        }
        // cycles strictly increase with rows
        let zk: Vec<&E3Row> = a.iter().filter(|r| r.backend == BackendKind::SimZk).collect();
        assert!(zk.windows(2).all(|w| w[0].cycle_count < w[1].cycle_count));
    }

    #[test]
    fn e4_small_sweep_fits_a_line() {
        let tmp = TempDir::new().unwrap();
        let cfg = BenchConfig::new(8, tmp.path());
        let counts = vec![2, 4, 8, 16];
        let rows = run_e4(&cfg, &counts).unwrap();
        assert_e4_trends(&rows).unwrap();
        let svg = plot_e4(&rows);
        assert!(svg.contains("<svg"));
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let points: Vec<(f64, f64)> = (1..20).map(|i| (i as f64, 3.0 * i as f64 + 2.0)).collect();
        let (slope, intercept, r2) = linear_fit(&points);
        assert!((slope - 3.0).abs() < 1e-9);
        assert!((intercept - 2.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
