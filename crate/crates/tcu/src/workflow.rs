//! End-to-end federated-learning workflow driver: provisions learner,
//! aggregator and inference TCUs against one registry and runs compute
//! rounds through the full pipeline. Used by the benchmark harness, the
//! examples and the test suites.

use ed25519_dalek::SigningKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::encode::CanonicalEncode;
use crate::fl::{
    build_artifact, synthetic_rows, Dataset, GuestKind, LearnerParams, WeightScheme,
};
use crate::guest::{Fx, FX_ONE};
use crate::registry::Registry;
use crate::simzk::CostModel;
use crate::softtee::RootAuthority;
use crate::types::{BackendKind, ProgramId};
use crate::vcc::{provision, ComputeError, ComputeOptions, ComputeOutput, EinEntry, ProvisionSpec, TcuInstance};

/// Shape and hyperparameters of the demo workload.
#[derive(Debug, Clone)]
pub struct FlConfig {
    pub dims: [u32; 4],
    pub n_learners: usize,
    pub rows_per_learner: usize,
    pub epochs: u32,
    pub learning_rate: Fx,
    /// Base seed; datasets, account keys, salts and model init derive
    /// from it, so a rerun with the same seed reproduces every receipt.
    pub seed: u64,
    pub learner_backends: Vec<BackendKind>,
    pub aggregator_backend: BackendKind,
    pub inference_backend: BackendKind,
    pub cost_model: CostModel,
    pub cycle_budget: Option<u64>,
    pub options: ComputeOptions,
}

impl FlConfig {
    /// Three SoftTee learners, SoftTee aggregation and inference — the
    /// cheapest full workflow.
    pub fn small(seed: u64) -> Self {
        Self {
            dims: [4, 8, 8, 2],
            n_learners: 3,
            rows_per_learner: 20,
            epochs: 1,
            learning_rate: FX_ONE / 10,
            seed,
            learner_backends: vec![BackendKind::SoftTee; 3],
            aggregator_backend: BackendKind::SoftTee,
            inference_backend: BackendKind::SoftTee,
            cost_model: CostModel::default(),
            cycle_budget: None,
            options: ComputeOptions::default(),
        }
    }

    pub fn with_backends(
        mut self,
        learners: BackendKind,
        aggregator: BackendKind,
        inference: BackendKind,
    ) -> Self {
        self.learner_backends = vec![learners; self.n_learners];
        self.aggregator_backend = aggregator;
        self.inference_backend = inference;
        self
    }
}

/// One learner organization: its account, TCU instance and signed dataset.
pub struct LearnerOrg {
    pub account: SigningKey,
    pub instance: TcuInstance,
    pub dataset: Dataset,
}

/// Fully provisioned workflow over one registry.
pub struct FlWorkflow {
    pub config: FlConfig,
    pub learners: Vec<LearnerOrg>,
    pub aggregator: TcuInstance,
    pub aggregator_weights: WeightScheme,
    pub inference: TcuInstance,
    rng: ChaCha12Rng,
}

impl FlWorkflow {
    /// Provisions every TCU: stores artifacts, boots backends, registers
    /// programs and loads instances. Learner manifests name the aggregator
    /// program as their allowed predecessor and vice versa.
    pub fn provision(
        registry: &Registry,
        root: &RootAuthority,
        config: FlConfig,
    ) -> Result<Self, ComputeError> {
        assert_eq!(config.learner_backends.len(), config.n_learners);
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

        let mut learner_keys = Vec::with_capacity(config.n_learners);
        for _ in 0..config.n_learners {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            learner_keys.push(SigningKey::from_bytes(&secret));
        }
        let mut agg_secret = [0u8; 32];
        rng.fill_bytes(&mut agg_secret);
        let aggregator_account = SigningKey::from_bytes(&agg_secret);
        let mut inf_secret = [0u8; 32];
        rng.fill_bytes(&mut inf_secret);
        let inference_account = SigningKey::from_bytes(&inf_secret);

        // program identities are computable before anything is registered
        let learner_artifacts: Vec<Vec<u8>> = learner_keys
            .iter()
            .map(|k| build_artifact(GuestKind::Learner, config.dims, k.verifying_key().to_bytes()))
            .collect();
        let learner_ids: Vec<ProgramId> = learner_artifacts
            .iter()
            .map(|a| crate::types::program_id_of(a).unwrap())
            .collect();
        let aggregator_artifact = build_artifact(
            GuestKind::Aggregator,
            config.dims,
            aggregator_account.verifying_key().to_bytes(),
        );
        let aggregator_id = crate::types::program_id_of(&aggregator_artifact).unwrap();
        let inference_artifact = build_artifact(
            GuestKind::Inference,
            config.dims,
            inference_account.verifying_key().to_bytes(),
        );

        let mut learners = Vec::with_capacity(config.n_learners);
        for (i, (key, artifact)) in learner_keys.into_iter().zip(learner_artifacts).enumerate() {
            let instance = provision(
                registry,
                ProvisionSpec {
                    tcu_id: &format!("org-{i}/learner"),
                    artifact,
                    backend_kind: config.learner_backends[i],
                    predecessors: vec![aggregator_id],
                    version: 1,
                    registrant: &key,
                    root: Some(root),
                    cost_model: config.cost_model.clone(),
                    cycle_budget: config.cycle_budget,
                    options: config.options.clone(),
                },
                &mut rng,
            )?;
            let rows = synthetic_rows(
                config.seed.wrapping_add(1000 + i as u64),
                config.rows_per_learner,
                config.dims[0] as usize,
            );
            let dataset = Dataset::sign(rows, &key);
            learners.push(LearnerOrg {
                account: key,
                instance,
                dataset,
            });
        }

        let aggregator = provision(
            registry,
            ProvisionSpec {
                tcu_id: "org-agg/aggregator",
                artifact: aggregator_artifact,
                backend_kind: config.aggregator_backend,
                predecessors: learner_ids,
                version: 1,
                registrant: &aggregator_account,
                root: Some(root),
                cost_model: config.cost_model.clone(),
                cycle_budget: config.cycle_budget,
                options: config.options.clone(),
            },
            &mut rng,
        )?;

        let inference = provision(
            registry,
            ProvisionSpec {
                tcu_id: "org-inf/inference",
                artifact: inference_artifact,
                backend_kind: config.inference_backend,
                predecessors: vec![aggregator_id],
                version: 1,
                registrant: &inference_account,
                root: Some(root),
                cost_model: config.cost_model.clone(),
                cycle_budget: config.cycle_budget,
                options: config.options.clone(),
            },
            &mut rng,
        )?;

        let aggregator_weights = WeightScheme::uniform(config.n_learners);
        Ok(Self {
            config,
            learners,
            aggregator,
            aggregator_weights,
            inference,
            rng,
        })
    }

    pub fn learner_params(&self) -> LearnerParams {
        LearnerParams {
            epochs: self.config.epochs,
            learning_rate: self.config.learning_rate,
            init_seed: self.config.seed.wrapping_add(7777),
        }
    }

    /// Runs local training for learner `i`; `global` is the previous
    /// round's aggregated model (absent in round 1).
    pub fn run_learner(
        &mut self,
        i: usize,
        global: Option<&EinEntry>,
        registry: &Registry,
    ) -> Result<ComputeOutput, ComputeError> {
        let ein: Vec<EinEntry> = global.cloned().into_iter().collect();
        let iin = self.learners[i].dataset.encode();
        let params = self.learner_params().encode();
        self.learners[i]
            .instance
            .compute(&ein, &iin, &params, registry, &mut self.rng)
    }

    /// Aggregates local models under the confidential weight scheme.
    pub fn run_aggregation(
        &mut self,
        locals: &[EinEntry],
        registry: &Registry,
    ) -> Result<ComputeOutput, ComputeError> {
        let iin = self.aggregator_weights.encode();
        self.aggregator
            .compute(locals, &iin, &[], registry, &mut self.rng)
    }

    /// Applies the aggregated model to one confidential feature vector.
    pub fn run_inference(
        &mut self,
        global: &EinEntry,
        features: &[Fx],
        registry: &Registry,
    ) -> Result<ComputeOutput, ComputeError> {
        let iin = crate::fl::encode_features(features);
        self.inference
            .compute(&[global.clone()], &iin, &[], registry, &mut self.rng)
    }

    /// One full federation round: every learner trains (from `global` if
    /// given), then the aggregator combines the local models. Returns the
    /// learner outputs and the aggregation output.
    pub fn run_round(
        &mut self,
        global: Option<&EinEntry>,
        registry: &Registry,
    ) -> Result<(Vec<ComputeOutput>, ComputeOutput), ComputeError> {
        let mut locals = Vec::with_capacity(self.learners.len());
        for i in 0..self.learners.len() {
            locals.push(self.run_learner(i, global, registry)?);
        }
        let entries: Vec<EinEntry> = locals
            .iter()
            .map(|o| EinEntry::from_receipt(o.receipt.clone()))
            .collect();
        let aggregated = self.run_aggregation(&entries, registry)?;
        Ok((locals, aggregated))
    }

    /// All training rows across learners, for loss evaluation.
    pub fn all_rows(&self) -> Vec<crate::fl::Row> {
        self.learners
            .iter()
            .flat_map(|l| l.dataset.rows.iter().cloned())
            .collect()
    }
}
