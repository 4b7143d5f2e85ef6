//! Append-only encrypted vault files.
//!
//! Each line of `vault-<session>.jsonl` is a JSON envelope holding one
//! ChaCha20-Poly1305 encrypted [`VaultEntry`]. The cipher key is derived from
//! the master key and the session id; the vault kind and session are bound as
//! associated data so lines cannot be moved between vaults.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{VaultEntry, VaultError, VaultId};

/// 32-byte master key for vault files.
#[derive(Clone)]
pub struct VaultKey([u8; 32]);

impl std::fmt::Debug for VaultKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VaultKey(..)")
    }
}

impl VaultKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, VaultError> {
        let raw = hex::decode(s.trim()).map_err(|e| VaultError::Persist(format!("key: {e}")))?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|_| VaultError::Persist("key must be 32 bytes (64 hex chars)".into()))?;
        Ok(Self(bytes))
    }

    fn session_cipher(&self, session: &str) -> ChaCha20Poly1305 {
        let mut h = Sha256::new();
        h.update(b"contextguard-vault-v1\0");
        h.update(self.0);
        h.update(session.as_bytes());
        let derived = h.finalize();
        ChaCha20Poly1305::new(Key::from_slice(&derived))
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    nonce: String,
    ct: String,
}

pub struct VaultFile {
    path: PathBuf,
    aad: Vec<u8>,
    cipher: ChaCha20Poly1305,
}

impl std::fmt::Debug for VaultFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VaultFile")
            .field("path", &self.path)
            .finish()
    }
}

impl VaultFile {
    /// Both vaults of a session share one file; the associated data keeps
    /// their lines apart.
    pub fn open(dir: &Path, id: &VaultId, key: &VaultKey) -> Result<Self, VaultError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            path: dir.join(format!("vault-{}.jsonl", sanitize(&id.session))),
            aad: format!("{}:{}", id.kind.tag(), id.session).into_bytes(),
            cipher: key.session_cipher(&id.session),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries belonging to this vault; lines of the sibling vault are skipped.
    pub fn load(&self) -> Result<Vec<VaultEntry>, VaultError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let env: Envelope = serde_json::from_str(&line)
                .map_err(|e| VaultError::Persist(format!("line {}: {e}", n + 1)))?;
            let nonce = B64
                .decode(env.nonce)
                .map_err(|e| VaultError::Persist(format!("line {}: {e}", n + 1)))?;
            let ct = B64
                .decode(env.ct)
                .map_err(|e| VaultError::Persist(format!("line {}: {e}", n + 1)))?;
            if nonce.len() != 12 {
                return Err(VaultError::Persist(format!("line {}: bad nonce", n + 1)));
            }
            let Ok(plain) = self.cipher.decrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &ct,
                    aad: &self.aad,
                },
            ) else {
                continue;
            };
            let entry: VaultEntry = serde_json::from_slice(&plain)
                .map_err(|e| VaultError::Persist(format!("line {}: {e}", n + 1)))?;
            out.push(entry);
        }
        Ok(out)
    }

    pub fn append(&mut self, entry: &VaultEntry) -> Result<(), VaultError> {
        let plain = serde_json::to_vec(entry).map_err(|e| VaultError::Persist(e.to_string()))?;
        let mut nonce = [0u8; 12];
        rand::thread_rng().fill_bytes(&mut nonce);
        let ct = self
            .cipher
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &plain,
                    aad: &self.aad,
                },
            )
            .map_err(|_| VaultError::Persist("encryption failed".into()))?;
        let env = Envelope {
            v: 1,
            nonce: B64.encode(nonce),
            ct: B64.encode(ct),
        };
        let mut line =
            serde_json::to_string(&env).map_err(|e| VaultError::Persist(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }
}

pub(crate) fn sanitize(session: &str) -> String {
    session
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
