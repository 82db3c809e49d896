//! Software emulation of the TEE backend: per-TCU signing keypair created
//! at boot, a root-signed attestation document binding that key to the
//! program measurement, and Ed25519 signature seals.
//!
//! The emulation is cryptographically sound under software key secrecy.
//! What it does not provide is hardware memory isolation — the threat
//! covered is tamper-evidence of outputs, not protection of data in use.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use crate::encode::{
    put_array32, put_bytes, put_u64, ByteReader, CanonicalDecode, CanonicalEncode, DecodeError,
};
use crate::types::{program_id_of, ProgramId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SoftTeeError {
    #[error("artifact is empty")]
    EmptyArtifact,
    #[error("root of trust unavailable: {0}")]
    RootUnavailable(String),
}

/// Root-signed statement binding a TEE public key to a program measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationDocument {
    /// Program id of the deployed artifact.
    pub measurement: ProgramId,
    /// Ed25519 verification key generated at boot; the VK role.
    pub tee_public_key: [u8; 32],
    /// Issuance sequence number assigned by the root.
    pub issued_at: u64,
    /// Root signature over `canonical(measurement, tee_public_key, issued_at)`.
    pub root_signature: Vec<u8>,
}

impl AttestationDocument {
    /// Bytes the root signs.
    pub fn signed_preimage(
        measurement: &ProgramId,
        tee_public_key: &[u8; 32],
        issued_at: u64,
    ) -> Vec<u8> {
        let mut out = Vec::with_capacity(80);
        put_array32(&mut out, measurement.as_bytes());
        put_array32(&mut out, tee_public_key);
        put_u64(&mut out, issued_at);
        out
    }
}

impl CanonicalEncode for AttestationDocument {
    fn encode_into(&self, out: &mut Vec<u8>) {
        put_array32(out, self.measurement.as_bytes());
        put_array32(out, &self.tee_public_key);
        put_u64(out, self.issued_at);
        put_bytes(out, &self.root_signature);
    }
}

impl CanonicalDecode for AttestationDocument {
    fn decode_from(reader: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            measurement: ProgramId(reader.read_array32()?),
            tee_public_key: reader.read_array32()?,
            issued_at: reader.read_u64()?,
            root_signature: reader.read_bytes()?,
        })
    }
}

/// Emulated manufacturer root of trust. Stands in for the PKI a real TEE
/// vendor would operate; generated once by the operator or test harness.
pub struct RootAuthority {
    signing_key: SigningKey,
    issue_counter: AtomicU64,
}

impl RootAuthority {
    pub fn generate(rng: &mut dyn RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_secret(&seed)
    }

    pub fn from_secret(secret: &[u8; 32]) -> Self {
        Self {
            signing_key: SigningKey::from_bytes(secret),
            issue_counter: AtomicU64::new(0),
        }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing_key.verifying_key().to_bytes()
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing_key.to_bytes()
    }

    fn issue(&self, measurement: ProgramId, tee_public_key: [u8; 32]) -> AttestationDocument {
        let issued_at = self.issue_counter.fetch_add(1, Ordering::Relaxed);
        let preimage =
            AttestationDocument::signed_preimage(&measurement, &tee_public_key, issued_at);
        let root_signature = self.signing_key.sign(&preimage).to_bytes().to_vec();
        AttestationDocument {
            measurement,
            tee_public_key,
            issued_at,
            root_signature,
        }
    }
}

/// Per-TCU keypair generated at boot. The signing key plays the PK role and
/// stays inside the TCU process; the public half is the VK.
pub struct SoftTeeKeys {
    signing_key: SigningKey,
}

impl SoftTeeKeys {
    pub fn tee_public_key(&self) -> [u8; 32] {
        self.signing_key.verifying_key().to_bytes()
    }

    /// Raw key bytes, for sealing to local storage only.
    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing_key.to_bytes()
    }

    pub fn from_secret(secret: &[u8; 32]) -> Self {
        Self {
            signing_key: SigningKey::from_bytes(secret),
        }
    }
}

/// Boots an emulated TEE for `artifact`: generates a fresh keypair and a
/// root-signed attestation whose measurement is the artifact's program id.
pub fn boot(
    artifact: &[u8],
    root: &RootAuthority,
    rng: &mut dyn RngCore,
) -> Result<(SoftTeeKeys, AttestationDocument), SoftTeeError> {
    let measurement = program_id_of(artifact).map_err(|_| SoftTeeError::EmptyArtifact)?;
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let keys = SoftTeeKeys::from_secret(&seed);
    let document = root.issue(measurement, keys.tee_public_key());
    Ok((keys, document))
}

/// Re-issues an attestation for already-booted keys (used when a sealed
/// keypair is loaded instead of freshly generated).
pub fn attest(
    artifact: &[u8],
    keys: &SoftTeeKeys,
    root: &RootAuthority,
) -> Result<AttestationDocument, SoftTeeError> {
    let measurement = program_id_of(artifact).map_err(|_| SoftTeeError::EmptyArtifact)?;
    Ok(root.issue(measurement, keys.tee_public_key()))
}

/// Signs a sealed record with the TEE's private key. The signature is the
/// proof of computational integrity for this backend.
pub fn prove(keys: &SoftTeeKeys, record: &[u8]) -> Vec<u8> {
    keys.signing_key.sign(record).to_bytes().to_vec()
}

/// Verifies an attestation document against the root public key.
pub fn verify_attestation(doc: &AttestationDocument, root_public_key: &[u8; 32]) -> bool {
    let Ok(root_vk) = VerifyingKey::from_bytes(root_public_key) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(doc.root_signature.as_slice()) else {
        return false;
    };
    let preimage =
        AttestationDocument::signed_preimage(&doc.measurement, &doc.tee_public_key, doc.issued_at);
    root_vk
        .verify(&preimage, &Signature::from_bytes(&sig_bytes))
        .is_ok()
}

/// Verifies a raw Ed25519 signature. Shared by seal checks and every other
/// signature in the system (ledger entries, dataset authentication).
pub fn verify_signature(public_key: &[u8; 32], message: &[u8], signature: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    vk.verify(message, &Signature::from_bytes(&sig_bytes)).is_ok()
}

/// Full SoftTee seal verification: signature valid under `vk`, attestation
/// root-signed, measurement matches the expected program, and the attested
/// key is the verification key in use.
pub fn verify(
    seal: &[u8],
    record: &[u8],
    vk: &[u8],
    attestation: &AttestationDocument,
    expected_program: &ProgramId,
    root_public_key: &[u8; 32],
) -> bool {
    let Ok(vk32) = <[u8; 32]>::try_from(vk) else {
        return false;
    };
    verify_signature(&vk32, record, seal)
        && verify_attestation(attestation, root_public_key)
        && attestation.measurement == *expected_program
        && attestation.tee_public_key == vk32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::time::Instant;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(42)
    }

    #[test]
    fn boot_yields_verifying_attestation() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let (_keys, doc) = boot(b"artifact-a", &root, &mut rng).unwrap();
        assert!(verify_attestation(&doc, &root.public_key()));
        assert_eq!(doc.measurement, program_id_of(b"artifact-a").unwrap());
    }

    #[test]
    fn altered_measurement_fails_attestation() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let (_keys, mut doc) = boot(b"artifact-a", &root, &mut rng).unwrap();
        doc.measurement = program_id_of(b"artifact-b").unwrap();
        assert!(!verify_attestation(&doc, &root.public_key()));
    }

    #[test]
    fn non_root_signer_rejected() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let impostor = RootAuthority::generate(&mut rng);
        let (keys, _) = boot(b"artifact-a", &root, &mut rng).unwrap();
        let doc = impostor.issue(program_id_of(b"artifact-a").unwrap(), keys.tee_public_key());
        assert!(!verify_attestation(&doc, &root.public_key()));
    }

    #[test]
    fn two_boots_same_measurement_fresh_keys() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let (k1, d1) = boot(b"artifact-a", &root, &mut rng).unwrap();
        let (k2, d2) = boot(b"artifact-a", &root, &mut rng).unwrap();
        assert_eq!(d1.measurement, d2.measurement);
        assert_ne!(k1.tee_public_key(), k2.tee_public_key());
    }

    #[test]
    fn seal_binds_record_and_key() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let (keys, _) = boot(b"artifact-a", &root, &mut rng).unwrap();
        let (other, _) = boot(b"artifact-a", &root, &mut rng).unwrap();
        let seal = prove(&keys, b"record");
        assert!(verify_signature(&keys.tee_public_key(), b"record", &seal));
        assert!(!verify_signature(&keys.tee_public_key(), b"recorD", &seal));
        assert!(!verify_signature(&other.tee_public_key(), b"record", &seal));
    }

    #[test]
    fn full_verify_honest_and_mismatched_paths() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let program = program_id_of(b"artifact-a").unwrap();
        let (keys, doc) = boot(b"artifact-a", &root, &mut rng).unwrap();
        let seal = prove(&keys, b"record");
        let vk = keys.tee_public_key();

        assert!(verify(&seal, b"record", &vk, &doc, &program, &root.public_key()));

        // measurement mismatch: attestation from a different artifact
        let (keys_b, doc_b) = boot(b"artifact-b", &root, &mut rng).unwrap();
        let seal_b = prove(&keys_b, b"record");
        assert!(!verify(
            &seal_b,
            b"record",
            &keys_b.tee_public_key(),
            &doc_b,
            &program,
            &root.public_key()
        ));

        // attestation key differs from the vk used for the seal
        assert!(!verify(&seal, b"record", &vk, &doc_b, &program, &root.public_key()));
    }

    #[test]
    fn attestation_verification_is_fast_and_size_independent() {
        let mut rng = rng();
        let root = RootAuthority::generate(&mut rng);
        let small = vec![1u8; 64];
        let large = vec![1u8; 1 << 20];
        let (_, doc_small) = boot(&small, &root, &mut rng).unwrap();
        let (_, doc_large) = boot(&large, &root, &mut rng).unwrap();
        let root_pub = root.public_key();

        // warm up, then take the median of repeated runs
        for _ in 0..10 {
            assert!(verify_attestation(&doc_small, &root_pub));
        }
        let median = |doc: &AttestationDocument| {
            let mut samples: Vec<u128> = (0..31)
                .map(|_| {
                    let t = Instant::now();
                    assert!(verify_attestation(doc, &root_pub));
                    t.elapsed().as_nanos()
                })
                .collect();
            samples.sort();
            samples[samples.len() / 2]
        };
        let t_small = median(&doc_small);
        let t_large = median(&doc_large);
        // < 10 ms each, regardless of artifact size
        assert!(t_small < 10_000_000, "small: {t_small}ns");
        assert!(t_large < 10_000_000, "large: {t_large}ns");
    }
}
