//! Datasets (authenticated confidential inputs of learners) and the
//! confidential per-learner weight scheme of the aggregator.

use ed25519_dalek::{Signer, SigningKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::encode::{
    put_bytes, put_count, put_i32, put_u32, ByteReader, CanonicalDecode, CanonicalEncode,
    DecodeError,
};
use crate::guest::{Fx, GuestError, FX_ONE};
use crate::types::sha256;

/// One training sample: Q16.16 feature vector plus an integer class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub features: Vec<Fx>,
    pub label: u32,
}

/// A learner's confidential dataset, authenticated by the owning node's
/// account key. The signature covers `SHA-256(canonical rows)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub rows: Vec<Row>,
    pub owner_signature: Vec<u8>,
}

impl Dataset {
    /// Canonical encoding of the row list alone; the signed content.
    pub fn rows_encoding(&self) -> Vec<u8> {
        encode_rows(&self.rows)
    }

    /// Signs `rows` with the node's account key.
    pub fn sign(rows: Vec<Row>, owner_key: &SigningKey) -> Self {
        let digest = sha256(&encode_rows(&rows));
        let owner_signature = owner_key.sign(&digest).to_bytes().to_vec();
        Self {
            rows,
            owner_signature,
        }
    }

    /// Unmetered signature check, for host-side validation.
    pub fn verify_owner(&self, owner_public_key: &[u8; 32]) -> bool {
        let digest = sha256(&self.rows_encoding());
        crate::softtee::verify_signature(owner_public_key, &digest, &self.owner_signature)
    }
}

fn encode_rows(rows: &[Row]) -> Vec<u8> {
    let mut out = Vec::new();
    put_count(&mut out, rows.len());
    for row in rows {
        put_count(&mut out, row.features.len());
        for &f in &row.features {
            put_i32(&mut out, f);
        }
        put_u32(&mut out, row.label);
    }
    out
}

impl CanonicalEncode for Dataset {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.rows_encoding());
        put_bytes(out, &self.owner_signature);
    }
}

impl CanonicalDecode for Dataset {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let n = reader.read_count()?;
        let mut rows = Vec::with_capacity(n.min(65536));
        for _ in 0..n {
            let nf = reader.read_count()?;
            let mut features = Vec::with_capacity(nf.min(4096));
            for _ in 0..nf {
                features.push(reader.read_i32()?);
            }
            let label = reader.read_u32()?;
            rows.push(Row { features, label });
        }
        let owner_signature = reader.read_bytes()?;
        Ok(Self {
            rows,
            owner_signature,
        })
    }
}

/// Seeded synthetic rows: two Gaussian-like clusters built from integer
/// arithmetic only (sum of four uniforms), so generation is reproducible on
/// any host. Class `i % 2`, cluster centers at ±0.75 on every feature.
pub fn synthetic_rows(seed: u64, n_rows: usize, d_in: usize) -> Vec<Row> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let center: Fx = (3 * FX_ONE) / 4;
    (0..n_rows)
        .map(|i| {
            let label = (i % 2) as u32;
            let sign: Fx = if label == 0 { -1 } else { 1 };
            let features = (0..d_in)
                .map(|_| {
                    // triangular-ish noise in about [-0.25, 0.25]
                    let noise: i64 = (0..4)
                        .map(|_| (rng.next_u32() % (FX_ONE as u32 / 4)) as i64 - FX_ONE as i64 / 8)
                        .sum();
                    sign * center + (noise / 4) as Fx
                })
                .collect();
            Row { features, label }
        })
        .collect()
}

/// Confidential per-learner aggregation weights, Q16.16, non-negative and
/// summing to 1.0 within one unit of least precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightScheme {
    pub weights: Vec<Fx>,
}

impl WeightScheme {
    /// Uniform weights over `n` learners, summing to exactly 1.0: the
    /// remainder of `FX_ONE / n` is spread one ulp at a time over the first
    /// learners.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        let base = FX_ONE / n as Fx;
        let rem = (FX_ONE - base * n as Fx) as usize;
        Self {
            weights: (0..n).map(|i| base + Fx::from(i < rem)).collect(),
        }
    }

    pub fn validate(&self, n_models: usize) -> Result<(), GuestError> {
        if self.weights.len() != n_models {
            return Err(GuestError::WeightCountMismatch {
                weights: self.weights.len(),
                models: n_models,
            });
        }
        if self.weights.iter().any(|&w| w < 0) {
            return Err(GuestError::UnnormalizedWeights);
        }
        let sum: i64 = self.weights.iter().map(|&w| w as i64).sum();
        if (sum - FX_ONE as i64).abs() > 1 {
            return Err(GuestError::UnnormalizedWeights);
        }
        Ok(())
    }
}

impl CanonicalEncode for WeightScheme {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_count(out, self.weights.len());
        for &w in &self.weights {
            put_i32(out, w);
        }
    }
}

impl CanonicalDecode for WeightScheme {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let n = reader.read_count()?;
        let mut weights = Vec::with_capacity(n.min(65536));
        for _ in 0..n {
            weights.push(reader.read_i32()?);
        }
        Ok(Self { weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SigningKey {
        SigningKey::from_bytes(&[11u8; 32])
    }

    #[test]
    fn dataset_signature_round_trip() {
        let rows = synthetic_rows(1, 8, 4);
        let ds = Dataset::sign(rows, &key());
        let pubkey = key().verifying_key().to_bytes();
        assert!(ds.verify_owner(&pubkey));
        assert!(!ds.verify_owner(&[0u8; 32]));

        let mut tampered = ds.clone();
        tampered.rows[0].label ^= 1;
        assert!(!tampered.verify_owner(&pubkey));

        let decoded = Dataset::decode(&ds.encode()).unwrap();
        assert_eq!(decoded, ds);
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic_rows(7, 20, 4);
        let b = synthetic_rows(7, 20, 4);
        assert_eq!(a, b);
        assert_ne!(a, synthetic_rows(8, 20, 4));
        assert_eq!(a.iter().filter(|r| r.label == 0).count(), 10);
        // clusters sit on opposite sides
        for row in &a {
            let mean: i64 = row.features.iter().map(|&f| f as i64).sum::<i64>()
                / row.features.len() as i64;
            if row.label == 0 {
                assert!(mean < 0);
            } else {
                assert!(mean > 0);
            }
        }
    }

    #[test]
    fn uniform_weights_sum_to_one_exactly() {
        for n in 1..50 {
            let scheme = WeightScheme::uniform(n);
            assert_eq!(scheme.weights.iter().map(|&w| w as i64).sum::<i64>(), FX_ONE as i64);
            scheme.validate(n).unwrap();
        }
    }

    #[test]
    fn weight_validation_rejects_bad_schemes() {
        let scheme = WeightScheme {
            weights: vec![FX_ONE / 2, FX_ONE / 2],
        };
        scheme.validate(2).unwrap();
        assert!(matches!(
            scheme.validate(3),
            Err(GuestError::WeightCountMismatch { .. })
        ));
        let negative = WeightScheme {
            weights: vec![-1, FX_ONE + 1],
        };
        assert!(matches!(
            negative.validate(2),
            Err(GuestError::UnnormalizedWeights)
        ));
        let short = WeightScheme {
            weights: vec![FX_ONE / 2, FX_ONE / 4],
        };
        assert!(matches!(
            short.validate(2),
            Err(GuestError::UnnormalizedWeights)
        ));
    }
}
