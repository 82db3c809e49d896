//! The federated-learning workload: learner, aggregator and inference guest
//! programs with deterministic Q16.16 numerics, dataset authentication and
//! confidential aggregation weights.
//!
//! Guest artifacts are canonical byte descriptions (magic, ABI version,
//! guest kind, network shape); the artifact bytes are what program ids and
//! ImageIDs are derived from, so changing the network shape changes the
//! program identity.

mod data;
mod model;

pub use data::{synthetic_rows, Dataset, Row, WeightScheme};
pub use model::{InferenceOutput, Layer, ModelParams};

use crate::encode::{
    put_array32, put_u32, put_u64, put_u8, ByteReader, CanonicalDecode, CanonicalEncode,
    DecodeError,
};
use crate::guest::{commit_iin, eiv_check, Fx, GuestError, GuestInput, GuestOutcome, GuestVm, Phase};

/// Artifact magic; "TCUG" followed by the ABI version.
pub const ARTIFACT_MAGIC: &[u8; 4] = b"TCUG";
pub const ABI_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuestKind {
    Learner,
    Aggregator,
    Inference,
}

impl GuestKind {
    pub fn as_u8(self) -> u8 {
        match self {
            GuestKind::Learner => 1,
            GuestKind::Aggregator => 2,
            GuestKind::Inference => 3,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self, DecodeError> {
        match v {
            1 => Ok(GuestKind::Learner),
            2 => Ok(GuestKind::Aggregator),
            3 => Ok(GuestKind::Inference),
            value => Err(DecodeError::BadDiscriminant {
                what: "guest kind",
                value,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GuestKind::Learner => "learner",
            GuestKind::Aggregator => "aggregator",
            GuestKind::Inference => "inference",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learner" => Some(GuestKind::Learner),
            "aggregator" => Some(GuestKind::Aggregator),
            "inference" => Some(GuestKind::Inference),
            _ => None,
        }
    }
}

/// Builds a guest artifact for the given kind, network shape
/// `[d_in, h1, h2, d_out]` and owning organization.
///
/// The owner's account public key is compiled into the artifact — the
/// learner authenticates its dataset against it, and for every kind it
/// makes the program identity organization-specific, the way a TEE
/// measurement covers org-specific configuration in the deployed binary.
pub fn build_artifact(kind: GuestKind, layer_dims: [u32; 4], owner_public_key: [u8; 32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(ARTIFACT_MAGIC);
    put_u32(&mut out, ABI_VERSION);
    put_u8(&mut out, kind.as_u8());
    for d in layer_dims {
        put_u32(&mut out, d);
    }
    put_array32(&mut out, &owner_public_key);
    out
}

/// Parses an artifact back into (kind, layer dims, owner key).
pub fn parse_artifact(artifact: &[u8]) -> Result<(GuestKind, [u32; 4], [u8; 32]), GuestError> {
    let mut reader = ByteReader::new(artifact);
    let magic = reader.take(4)?;
    if magic != ARTIFACT_MAGIC {
        return Err(GuestError::Malformed("bad artifact magic".into()));
    }
    let version = reader.read_u32()?;
    if version != ABI_VERSION {
        return Err(GuestError::Malformed(format!(
            "unsupported ABI version {version}"
        )));
    }
    let kind = GuestKind::from_u8(reader.read_u8()?)?;
    let mut dims = [0u32; 4];
    for d in &mut dims {
        *d = reader.read_u32()?;
    }
    let owner_public_key = reader.read_array32()?;
    reader.finish()?;
    if dims.iter().any(|&d| d == 0) {
        return Err(GuestError::Malformed("zero layer dimension".into()));
    }
    Ok((kind, dims, owner_public_key))
}

/// Public caller parameters for the learner guest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnerParams {
    pub epochs: u32,
    /// SGD learning rate, Q16.16.
    pub learning_rate: Fx,
    /// Seed for the round-1 model initialization.
    pub init_seed: u64,
}

impl LearnerParams {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        put_u32(&mut out, self.epochs);
        crate::encode::put_i32(&mut out, self.learning_rate);
        put_u64(&mut out, self.init_seed);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = ByteReader::new(bytes);
        let params = Self {
            epochs: reader.read_u32()?,
            learning_rate: reader.read_i32()?,
            init_seed: reader.read_u64()?,
        };
        reader.finish()?;
        Ok(params)
    }
}

/// Executes a guest artifact over the supplied input on the given VM. The
/// single dispatcher used by both backends, which is what makes journals
/// byte-identical across them.
pub fn run_guest(
    artifact: &[u8],
    input: &GuestInput<'_>,
    vm: &mut GuestVm,
) -> Result<GuestOutcome, GuestError> {
    let (kind, dims, owner_public_key) = parse_artifact(artifact)?;
    if input.ein_payloads.len() != input.ein_receipts.len() {
        return Err(GuestError::Malformed(
            "payload/receipt count mismatch".into(),
        ));
    }
    match kind {
        GuestKind::Learner => run_learner(dims, owner_public_key, input, vm),
        GuestKind::Aggregator => run_aggregator(dims, input, vm),
        GuestKind::Inference => run_inference(dims, input, vm),
    }
}

fn run_eiv(input: &GuestInput<'_>, vm: &mut GuestVm) -> Result<(), GuestError> {
    vm.set_phase(Phase::Eiv);
    for (index, (payload, receipt)) in input
        .ein_payloads
        .iter()
        .zip(input.ein_receipts)
        .enumerate()
    {
        eiv_check(vm, index, payload, receipt, input.keys)?;
        vm.checkpoint()?;
    }
    Ok(())
}

/// Local training: verifies the (optional) global-model receipt and the
/// dataset signature, then runs SGD for the configured epochs.
fn run_learner(
    dims: [u32; 4],
    owner_public_key: [u8; 32],
    input: &GuestInput<'_>,
    vm: &mut GuestVm,
) -> Result<GuestOutcome, GuestError> {
    let params = LearnerParams::decode(input.params)
        .map_err(|e| GuestError::Malformed(format!("learner params: {e}")))?;
    if input.ein_receipts.len() > 1 {
        return Err(GuestError::DimensionMismatch(
            "learner accepts at most one global-model input".into(),
        ));
    }

    run_eiv(input, vm)?;

    vm.set_phase(Phase::Execute);
    let dataset = Dataset::decode(input.iin)
        .map_err(|e| GuestError::Malformed(format!("dataset: {e}")))?;
    // dataset authentication: signature from the owning node over the rows
    let rows_hash = vm.hash(&dataset.rows_encoding());
    if !vm.verify_signature(&owner_public_key, &rows_hash, &dataset.owner_signature) {
        return Err(GuestError::BadDatasetSignature);
    }
    for row in &dataset.rows {
        if row.features.len() != dims[0] as usize {
            return Err(GuestError::DimensionMismatch(format!(
                "row has {} features, network expects {}",
                row.features.len(),
                dims[0]
            )));
        }
        if row.label >= dims[3] {
            return Err(GuestError::DimensionMismatch(format!(
                "label {} out of range for {} classes",
                row.label, dims[3]
            )));
        }
    }

    let mut model = match input.ein_payloads.first() {
        Some(payload) => {
            let global = ModelParams::decode(payload)
                .map_err(|e| GuestError::Malformed(format!("global model: {e}")))?;
            if global.layer_dims != dims {
                return Err(GuestError::DimensionMismatch(
                    "global model shape differs from program shape".into(),
                ));
            }
            global
        }
        None => ModelParams::init_from_seed(dims, params.init_seed),
    };
    let base_round = model.round;

    for _ in 0..params.epochs {
        for row in &dataset.rows {
            model.sgd_step(vm, row, params.learning_rate);
            vm.checkpoint()?;
        }
    }
    model.round = base_round + 1;

    let commitment = commit_iin(vm, input.iin, input.iin_salt);
    Ok(GuestOutcome {
        journal: model.encode(),
        iin_commitment: commitment,
    })
}

/// Federated averaging: verifies every local-model receipt, then takes the
/// weighted elementwise mean under the confidential weight scheme.
fn run_aggregator(
    dims: [u32; 4],
    input: &GuestInput<'_>,
    vm: &mut GuestVm,
) -> Result<GuestOutcome, GuestError> {
    if input.ein_receipts.is_empty() {
        return Err(GuestError::DimensionMismatch(
            "aggregator requires at least one local model".into(),
        ));
    }

    run_eiv(input, vm)?;

    vm.set_phase(Phase::Execute);
    let weights = WeightScheme::decode(input.iin)
        .map_err(|e| GuestError::Malformed(format!("weight scheme: {e}")))?;
    let mut models = Vec::with_capacity(input.ein_payloads.len());
    for payload in input.ein_payloads {
        let m = ModelParams::decode(payload)
            .map_err(|e| GuestError::Malformed(format!("local model: {e}")))?;
        if m.layer_dims != dims {
            return Err(GuestError::DimensionMismatch(
                "local model shape differs from program shape".into(),
            ));
        }
        models.push(m);
    }
    weights.validate(models.len())?;
    if models.iter().any(|m| m.round != models[0].round) {
        return Err(GuestError::RoundMismatch);
    }

    let global = ModelParams::aggregate(vm, &models, &weights)?;
    for _ in &models {
        vm.checkpoint()?;
    }

    let commitment = commit_iin(vm, input.iin, input.iin_salt);
    Ok(GuestOutcome {
        journal: global.encode(),
        iin_commitment: commitment,
    })
}

/// Forward pass over one confidential feature vector with a verified
/// aggregated model.
fn run_inference(
    dims: [u32; 4],
    input: &GuestInput<'_>,
    vm: &mut GuestVm,
) -> Result<GuestOutcome, GuestError> {
    if input.ein_receipts.len() != 1 {
        return Err(GuestError::DimensionMismatch(
            "inference requires exactly one model input".into(),
        ));
    }

    run_eiv(input, vm)?;

    vm.set_phase(Phase::Execute);
    let model = ModelParams::decode(&input.ein_payloads[0])
        .map_err(|e| GuestError::Malformed(format!("model: {e}")))?;
    if model.layer_dims != dims {
        return Err(GuestError::DimensionMismatch(
            "model shape differs from program shape".into(),
        ));
    }
    let features = decode_features(input.iin)?;
    if features.len() != dims[0] as usize {
        return Err(GuestError::DimensionMismatch(format!(
            "{} features, network expects {}",
            features.len(),
            dims[0]
        )));
    }

    let output = model.infer(vm, &features);
    vm.checkpoint()?;

    let commitment = commit_iin(vm, input.iin, input.iin_salt);
    Ok(GuestOutcome {
        journal: output.encode(),
        iin_commitment: commitment,
    })
}

/// Canonical feature-vector payload: `list<i32>` of Q16.16 values.
pub fn encode_features(features: &[Fx]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + features.len() * 4);
    crate::encode::put_count(&mut out, features.len());
    for &f in features {
        crate::encode::put_i32(&mut out, f);
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<Fx>, GuestError> {
    let mut reader = ByteReader::new(bytes);
    let n = reader.read_count()?;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        out.push(reader.read_i32()?);
    }
    reader.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::FX_ONE;
    use ed25519_dalek::SigningKey;

    const DIMS: [u32; 4] = [4, 8, 8, 2];

    fn owner_key() -> SigningKey {
        SigningKey::from_bytes(&[21u8; 32])
    }

    fn learner_input<'a>(
        iin: &'a [u8],
        params: &'a [u8],
        salt: &'a [u8; 32],
        keys: &'a crate::guest::GuestKeySet,
    ) -> GuestInput<'a> {
        GuestInput {
            ein_payloads: &[],
            ein_receipts: &[],
            iin,
            params,
            iin_salt: salt,
            keys,
        }
    }

    fn run_learner_once(lr: Fx, epochs: u32, n_rows: usize) -> (ModelParams, Vec<u8>) {
        let rows = synthetic_rows(3, n_rows, DIMS[0] as usize);
        let dataset = Dataset::sign(rows, &owner_key());
        let iin = dataset.encode();
        let params = LearnerParams {
            epochs,
            learning_rate: lr,
            init_seed: 99,
        }
        .encode();
        let artifact =
            build_artifact(GuestKind::Learner, DIMS, owner_key().verifying_key().to_bytes());
        let salt = [5u8; 32];
        let keys = crate::guest::GuestKeySet::default();
        let input = learner_input(&iin, &params, &salt, &keys);
        let mut vm = GuestVm::metering();
        let outcome = run_guest(&artifact, &input, &mut vm).unwrap();
        (ModelParams::decode(&outcome.journal).unwrap(), outcome.journal)
    }

    // test-side float oracle, independent of the metered fixed-point path
    fn forward_f64(model: &ModelParams, x: &[f64]) -> Vec<f64> {
        let f = |v: Fx| v as f64 / FX_ONE as f64;
        let mut act: Vec<f64> = x.to_vec();
        for (li, layer) in model.layers.iter().enumerate() {
            let n_in = act.len();
            let n_out = layer.biases.len();
            let mut next = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut acc = f(layer.biases[o]);
                for i in 0..n_in {
                    acc += f(layer.weights[o * n_in + i]) * act[i];
                }
                next.push(if li < 2 { acc.max(0.0) } else { acc });
            }
            act = next;
        }
        act
    }

    fn loss_f64(model: &ModelParams, rows: &[Row]) -> f64 {
        let d_out = model.layer_dims[3] as usize;
        let mut total = 0.0;
        for row in rows {
            let x: Vec<f64> = row.features.iter().map(|&v| v as f64 / FX_ONE as f64).collect();
            let scores = forward_f64(model, &x);
            for (k, s) in scores.iter().enumerate() {
                let y = if k as u32 == row.label { 1.0 } else { 0.0 };
                total += (s - y) * (s - y);
            }
        }
        total / (rows.len() * d_out) as f64
    }

    fn hand_model() -> ModelParams {
        let fx = |v: f64| (v * FX_ONE as f64).round() as Fx;
        ModelParams {
            layer_dims: [2, 2, 2, 2],
            layers: vec![
                Layer {
                    weights: vec![fx(0.5), fx(-0.25), fx(1.0), fx(0.75)],
                    biases: vec![fx(0.125), fx(-0.5)],
                },
                Layer {
                    weights: vec![fx(1.0), fx(0.5), fx(-0.5), fx(0.25)],
                    biases: vec![fx(0.0), fx(0.25)],
                },
                Layer {
                    weights: vec![fx(0.75), fx(-1.0), fx(0.5), fx(0.5)],
                    biases: vec![fx(0.0625), fx(-0.125)],
                },
            ],
            round: 1,
        }
    }

    #[test]
    fn artifact_round_trip_and_identity() {
        let owner = owner_key().verifying_key().to_bytes();
        let a = build_artifact(GuestKind::Learner, DIMS, owner);
        let (kind, dims, parsed_owner) = parse_artifact(&a).unwrap();
        assert_eq!(kind, GuestKind::Learner);
        assert_eq!(dims, DIMS);
        assert_eq!(parsed_owner, owner);
        // distinct kind, dims or owner = distinct artifact = distinct program
        assert_ne!(a, build_artifact(GuestKind::Aggregator, DIMS, owner));
        assert_ne!(a, build_artifact(GuestKind::Learner, [4, 8, 8, 3], owner));
        assert_ne!(a, build_artifact(GuestKind::Learner, DIMS, [0u8; 32]));
        assert!(parse_artifact(b"XXXX....").is_err());
    }

    #[test]
    fn hand_computed_2222_forward_pass() {
        // frozen from a scalar computation done outside this crate
        let model = hand_model();
        let mut vm = GuestVm::metering();
        let x = vec![FX_ONE, -(FX_ONE / 2)];
        let out = model.infer(&mut vm, &x);
        assert_eq!(out.scores, vec![44032, 18432]);
        assert_eq!(out.argmax, 0);
    }

    #[test]
    fn zero_model_gives_equal_scores() {
        let model = ModelParams {
            layer_dims: [2, 2, 2, 2],
            layers: ModelParams::layer_shapes([2, 2, 2, 2])
                .iter()
                .map(|&(o, i)| Layer {
                    weights: vec![0; o * i],
                    biases: vec![0; o],
                })
                .collect(),
            round: 1,
        };
        let mut vm = GuestVm::metering();
        let out = model.infer(&mut vm, &[FX_ONE, FX_ONE]);
        assert!(out.scores.iter().all(|&s| s == out.scores[0]));
        assert_eq!(out.argmax, 0); // tie broken toward lowest index
    }

    #[test]
    fn inference_deterministic() {
        let model = hand_model();
        let x = vec![12345, -6789];
        let mut vm1 = GuestVm::metering();
        let mut vm2 = GuestVm::metering();
        assert_eq!(model.infer(&mut vm1, &x), model.infer(&mut vm2, &x));
    }

    #[test]
    fn zero_learning_rate_is_noop_sgd() {
        let (trained, _) = run_learner_once(0, 1, 10);
        let init = ModelParams::init_from_seed(DIMS, 99);
        assert_eq!(trained.layers, init.layers);
        assert_eq!(trained.round, 1); // round still increments
    }

    #[test]
    fn training_is_deterministic() {
        let (_, j1) = run_learner_once(FX_ONE / 10, 2, 20);
        let (_, j2) = run_learner_once(FX_ONE / 10, 2, 20);
        assert_eq!(j1, j2);
    }

    #[test]
    fn one_epoch_reduces_loss_on_separable_set() {
        let rows = synthetic_rows(3, 20, DIMS[0] as usize);
        let before = loss_f64(&ModelParams::init_from_seed(DIMS, 99), &rows);
        let (trained, _) = run_learner_once(FX_ONE / 10, 1, 20);
        let after = loss_f64(&trained, &rows);
        assert!(after < before, "loss did not decrease: {before} -> {after}");
    }

    #[test]
    fn bad_dataset_signature_rejected() {
        let rows = synthetic_rows(3, 5, DIMS[0] as usize);
        let wrong = SigningKey::from_bytes(&[9u8; 32]);
        let dataset = Dataset::sign(rows, &wrong);
        let iin = dataset.encode();
        let params = LearnerParams {
            epochs: 1,
            learning_rate: FX_ONE / 10,
            init_seed: 1,
        }
        .encode();
        let artifact =
            build_artifact(GuestKind::Learner, DIMS, owner_key().verifying_key().to_bytes());
        let salt = [5u8; 32];
        let keys = crate::guest::GuestKeySet::default();
        let input = learner_input(&iin, &params, &salt, &keys);
        let mut vm = GuestVm::metering();
        assert!(matches!(
            run_guest(&artifact, &input, &mut vm),
            Err(GuestError::BadDatasetSignature)
        ));
    }

    #[test]
    fn feature_count_mismatch_rejected() {
        let rows = synthetic_rows(3, 5, 3); // 3 features, network wants 4
        let dataset = Dataset::sign(rows, &owner_key());
        let iin = dataset.encode();
        let params = LearnerParams {
            epochs: 1,
            learning_rate: FX_ONE / 10,
            init_seed: 1,
        }
        .encode();
        let artifact =
            build_artifact(GuestKind::Learner, DIMS, owner_key().verifying_key().to_bytes());
        let salt = [5u8; 32];
        let keys = crate::guest::GuestKeySet::default();
        let input = learner_input(&iin, &params, &salt, &keys);
        let mut vm = GuestVm::metering();
        assert!(matches!(
            run_guest(&artifact, &input, &mut vm),
            Err(GuestError::DimensionMismatch(_))
        ));
    }

    fn constant_model(value: Fx, round: u64) -> ModelParams {
        ModelParams {
            layer_dims: [2, 2, 2, 2],
            layers: ModelParams::layer_shapes([2, 2, 2, 2])
                .iter()
                .map(|&(o, i)| Layer {
                    weights: vec![value; o * i],
                    biases: vec![value; o],
                })
                .collect(),
            round,
        }
    }

    #[test]
    fn aggregate_half_half_averages() {
        let models = [constant_model(2 * FX_ONE, 1), constant_model(4 * FX_ONE, 1)];
        let weights = WeightScheme {
            weights: vec![FX_ONE / 2, FX_ONE / 2],
        };
        let mut vm = GuestVm::metering();
        let out = ModelParams::aggregate(&mut vm, &models, &weights).unwrap();
        assert_eq!(out, constant_model(3 * FX_ONE, 1));
    }

    #[test]
    fn aggregate_degenerate_weight_selects_first() {
        let models = [constant_model(7 * FX_ONE, 2), constant_model(-3 * FX_ONE, 2)];
        let weights = WeightScheme {
            weights: vec![FX_ONE, 0],
        };
        let mut vm = GuestVm::metering();
        let out = ModelParams::aggregate(&mut vm, &models, &weights).unwrap();
        assert_eq!(out, models[0]);
    }

    #[test]
    fn aggregate_matches_elementwise_mean_oracle_within_one_ulp() {
        // independent brute-force oracle in f64 over every parameter
        let models: Vec<ModelParams> = (0..4)
            .map(|i| {
                let mut m = ModelParams::init_from_seed([3, 4, 4, 2], 1000 + i);
                m.round = 3;
                m
            })
            .collect();
        let weights = WeightScheme::uniform(4);
        let mut vm = GuestVm::metering();
        let out = ModelParams::aggregate(&mut vm, &models, &weights).unwrap();
        assert_eq!(out.round, 3);
        for li in 0..3 {
            for wi in 0..out.layers[li].weights.len() {
                let oracle: f64 = models
                    .iter()
                    .zip(&weights.weights)
                    .map(|(m, &w)| {
                        (w as f64 / FX_ONE as f64) * m.layers[li].weights[wi] as f64
                    })
                    .sum();
                let got = out.layers[li].weights[wi] as f64;
                assert!(
                    (got - oracle).abs() <= 1.0,
                    "layer {li} weight {wi}: {got} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn aggregate_uniform_is_permutation_invariant() {
        // exactly representable uniform weights (n divides 2^16)
        let models: Vec<ModelParams> = (0..4)
            .map(|i| {
                let mut m = ModelParams::init_from_seed([3, 4, 4, 2], 2000 + i);
                m.round = 1;
                m
            })
            .collect();
        let weights = WeightScheme::uniform(4);
        let mut permuted = models.clone();
        permuted.rotate_left(1);
        let mut vm1 = GuestVm::metering();
        let mut vm2 = GuestVm::metering();
        let a = ModelParams::aggregate(&mut vm1, &models, &weights).unwrap();
        let b = ModelParams::aggregate(&mut vm2, &permuted, &weights).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_round_trips() {
        let m = ModelParams::init_from_seed(DIMS, 7);
        assert_eq!(ModelParams::decode(&m.encode()).unwrap(), m);
        let out = InferenceOutput {
            scores: vec![1, -2, 3],
            argmax: 2,
        };
        assert_eq!(InferenceOutput::decode(&out.encode()).unwrap(), out);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn fixed_point_forward_matches_float_oracle(
                seed in 0u64..1_000_000,
                d_in in 1u32..6,
                h in 1u32..8,
                d_out in 2u32..5,
            ) {
                let dims = [d_in, h, h, d_out];
                let model = {
                    let mut m = ModelParams::init_from_seed(dims, seed);
                    m.round = 1;
                    m
                };
                let x_fx: Vec<Fx> = (0..d_in as usize)
                    .map(|i| {
                        let mut s = seed.wrapping_add(i as u64 + 1);
                        s = s.wrapping_mul(0x2545F4914F6CDD1D);
                        ((s >> 40) as Fx & 0x3ffff) - 0x20000 // [-2.0, 2.0)
                    })
                    .collect();
                let mut vm = GuestVm::metering();
                let got = model.forward(&mut vm, &x_fx);
                let x_f: Vec<f64> = x_fx.iter().map(|&v| v as f64 / FX_ONE as f64).collect();
                let want = forward_f64(&model, &x_f);
                for (g, w) in got.iter().zip(&want) {
                    let g = *g as f64 / FX_ONE as f64;
                    let err = (g - w).abs() / w.abs().max(1.0);
                    prop_assert!(err <= 1e-3, "fx {g} vs float {w}");
                }
            }
        }
    }
}
