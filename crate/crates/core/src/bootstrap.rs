//! Per-node key pairs and time-windowed private key delivery.
//!
//! Every install generates a fresh key pair for the node. Site secrets are
//! stored encrypted to the node's public key, so the store itself can sit on
//! an untrusted install server. The private key is handed out exactly once,
//! during a short window opened just before the install.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_WINDOW_SECS: u64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BootstrapError {
    #[error("no key for node {0}")]
    UnknownNode(String),
    #[error("node {node}: epoch {requested} is not newer than {current}")]
    NonIncreasingEpoch { node: String, requested: u64, current: u64 },
    #[error("node {0}: a key window is already open")]
    WindowAlreadyOpen(String),
    #[error("node {0}: no key window open")]
    NoWindow(String),
    #[error("node {0}: key window expired")]
    WindowExpired(String),
    #[error("node {0}: key already fetched in this window")]
    AlreadyFetched(String),
    #[error("node {node}: key epoch {key} does not match secret epoch {secret}")]
    EpochMismatch { node: String, key: u64, secret: u64 },
    #[error("node {node}: no secret labelled {label}")]
    NoSecret { node: String, label: String },
    #[error("crypto provider: {0}")]
    Provider(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl BootstrapError {
    /// Short code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            BootstrapError::UnknownNode(_) => "unknown-node",
            BootstrapError::NonIncreasingEpoch { .. } => "non-increasing-epoch",
            BootstrapError::WindowAlreadyOpen(_) => "window-open",
            BootstrapError::NoWindow(_) => "no-window",
            BootstrapError::WindowExpired(_) => "window-expired",
            BootstrapError::AlreadyFetched(_) => "already-fetched",
            BootstrapError::EpochMismatch { .. } => "epoch-mismatch",
            BootstrapError::NoSecret { .. } => "no-secret",
            BootstrapError::Provider(_) => "provider-failure",
            BootstrapError::BadRequest(_) => "bad-request",
        }
    }
}

/// Opaque key handle. Only the provider that issued it can use it.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyHandle {
    pub node: String,
    pub epoch: u64,
    material: [u8; 32],
}

impl KeyHandle {
    pub fn new(node: impl Into<String>, epoch: u64, material: [u8; 32]) -> Self {
        Self {
            node: node.into(),
            epoch,
            material,
        }
    }

    pub fn material(&self) -> &[u8; 32] {
        &self.material
    }

    /// `node:epoch:hex`
    pub fn to_wire(&self) -> String {
        format!("{}:{}:{}", self.node, self.epoch, hex::encode(self.material))
    }

    pub fn from_wire(text: &str) -> Result<Self, BootstrapError> {
        let bad = || BootstrapError::BadRequest(format!("malformed key handle `{text}`"));
        let mut parts = text.splitn(3, ':');
        let (node, epoch, material) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(e), Some(m)) => (n, e, m),
            _ => return Err(bad()),
        };
        let epoch = epoch.parse().map_err(|_| bad())?;
        let bytes = hex::decode(material).map_err(|_| bad())?;
        let material = bytes.try_into().map_err(|_| bad())?;
        Ok(Self::new(node, epoch, material))
    }
}

impl fmt::Debug for KeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyHandle({}@{})", self.node, self.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeKeyPair {
    pub node: String,
    pub public_part: KeyHandle,
    pub private_part: KeyHandle,
    pub created_at: u64,
    pub install_epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyWindow {
    pub opens_at: u64,
    pub closes_at: u64,
}

impl KeyWindow {
    pub fn contains(&self, t: u64) -> bool {
        self.opens_at <= t && t < self.closes_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedSecret {
    pub node: String,
    pub label: String,
    pub ciphertext: Vec<u8>,
    pub key_epoch: u64,
}

pub trait CryptoProvider {
    fn keygen(&mut self, node: &str, epoch: u64) -> (KeyHandle, KeyHandle);
    fn encrypt(&mut self, public: &KeyHandle, payload: &[u8]) -> Result<Vec<u8>, String>;
    fn decrypt(&self, private: &KeyHandle, ciphertext: &[u8]) -> Result<Vec<u8>, String>;
}

/// Deterministic stand-in for a public-key cipher: a SHA-256 keystream with
/// an authentication tag. The provider remembers which private key belongs
/// to each public key, which is what makes public-only holders unable to
/// decrypt.
#[derive(Debug, Clone)]
pub struct MockCrypto {
    seed: u64,
    nonce: u64,
    private_of: BTreeMap<[u8; 32], [u8; 32]>,
}

const TAG_LEN: usize = 16;

impl MockCrypto {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            nonce: 0,
            private_of: BTreeMap::new(),
        }
    }

    fn keystream_xor(secret: &[u8; 32], nonce: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let pad = Sha256::new()
                .chain_update(secret)
                .chain_update(nonce)
                .chain_update((block as u64).to_be_bytes())
                .finalize();
            for (b, p) in chunk.iter_mut().zip(pad.iter()) {
                *b ^= p;
            }
        }
    }

    fn tag(secret: &[u8; 32], nonce: &[u8], body: &[u8]) -> [u8; TAG_LEN] {
        let full = Sha256::new()
            .chain_update(b"tag")
            .chain_update(secret)
            .chain_update(nonce)
            .chain_update(body)
            .finalize();
        let mut tag = [0; TAG_LEN];
        tag.copy_from_slice(&full[..TAG_LEN]);
        tag
    }
}

impl CryptoProvider for MockCrypto {
    fn keygen(&mut self, node: &str, epoch: u64) -> (KeyHandle, KeyHandle) {
        let private: [u8; 32] = Sha256::new()
            .chain_update(self.seed.to_be_bytes())
            .chain_update(node.as_bytes())
            .chain_update(epoch.to_be_bytes())
            .finalize()
            .into();
        let public: [u8; 32] = Sha256::new().chain_update(b"public").chain_update(private).finalize().into();
        self.private_of.insert(public, private);
        (KeyHandle::new(node, epoch, public), KeyHandle::new(node, epoch, private))
    }

    fn encrypt(&mut self, public: &KeyHandle, payload: &[u8]) -> Result<Vec<u8>, String> {
        let secret = *self
            .private_of
            .get(public.material())
            .ok_or_else(|| "unknown public key".to_string())?;
        self.nonce += 1;
        let nonce = self.nonce.to_be_bytes();
        let mut body = payload.to_vec();
        Self::keystream_xor(&secret, &nonce, &mut body);
        let tag = Self::tag(&secret, &nonce, &body);
        let mut out = nonce.to_vec();
        out.extend_from_slice(&body);
        out.extend_from_slice(&tag);
        Ok(out)
    }

    fn decrypt(&self, private: &KeyHandle, ciphertext: &[u8]) -> Result<Vec<u8>, String> {
        if ciphertext.len() < 8 + TAG_LEN {
            return Err("ciphertext too short".into());
        }
        let (nonce, rest) = ciphertext.split_at(8);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        if Self::tag(private.material(), nonce, body) != tag {
            return Err("authentication failed".into());
        }
        let mut plain = body.to_vec();
        Self::keystream_xor(private.material(), nonce, &mut plain);
        Ok(plain)
    }
}

#[derive(Debug, Clone)]
struct WindowState {
    window: KeyWindow,
    fetched: bool,
}

/// The key server. All operations for one node go through `&mut self`, so
/// they are serialized.
#[derive(Debug, Clone)]
pub struct KeyServer<P: CryptoProvider = MockCrypto> {
    provider: P,
    keys: BTreeMap<String, NodeKeyPair>,
    windows: BTreeMap<String, WindowState>,
    secrets: BTreeMap<(String, String), EncryptedSecret>,
    default_window: u64,
}

impl KeyServer<MockCrypto> {
    pub fn with_seed(seed: u64) -> Self {
        Self::new(MockCrypto::new(seed))
    }
}

impl<P: CryptoProvider> KeyServer<P> {
    pub fn new(provider: P) -> Self {
        Self {
            provider,
            keys: BTreeMap::new(),
            windows: BTreeMap::new(),
            secrets: BTreeMap::new(),
            default_window: DEFAULT_WINDOW_SECS,
        }
    }

    pub fn default_window(&self) -> u64 {
        self.default_window
    }

    pub fn set_default_window(&mut self, secs: u64) {
        self.default_window = secs;
    }

    pub fn current_key(&self, node: &str) -> Option<&NodeKeyPair> {
        self.keys.get(node)
    }

    pub fn current_epoch(&self, node: &str) -> Option<u64> {
        self.keys.get(node).map(|k| k.install_epoch)
    }

    /// Registers a fresh pair for `node`; every earlier epoch stops working.
    pub fn generate_node_key(&mut self, node: &str, epoch: u64, now: u64) -> Result<NodeKeyPair, BootstrapError> {
        if let Some(current) = self.current_epoch(node) {
            if epoch <= current {
                return Err(BootstrapError::NonIncreasingEpoch {
                    node: node.to_string(),
                    requested: epoch,
                    current,
                });
            }
        }
        let (public_part, private_part) = self.provider.keygen(node, epoch);
        let pair = NodeKeyPair {
            node: node.to_string(),
            public_part,
            private_part,
            created_at: now,
            install_epoch: epoch,
        };
        self.keys.insert(node.to_string(), pair.clone());
        Ok(pair)
    }

    /// Key for the next install: one epoch past the current one.
    pub fn rekey(&mut self, node: &str, now: u64) -> Result<NodeKeyPair, BootstrapError> {
        let next = self.current_epoch(node).unwrap_or(0) + 1;
        self.generate_node_key(node, next, now)
    }

    /// Opens `[now, now + duration)`. A previous window counts as open until
    /// it expires or its key has been fetched.
    pub fn open_window(&mut self, node: &str, now: u64, duration: u64) -> Result<KeyWindow, BootstrapError> {
        if let Some(w) = self.windows.get(node) {
            if !w.fetched && now < w.window.closes_at {
                return Err(BootstrapError::WindowAlreadyOpen(node.to_string()));
            }
        }
        if duration == 0 {
            return Err(BootstrapError::BadRequest("window duration must be positive".into()));
        }
        let window = KeyWindow {
            opens_at: now,
            closes_at: now + duration,
        };
        self.windows.insert(node.to_string(), WindowState { window, fetched: false });
        Ok(window)
    }

    pub fn window(&self, node: &str) -> Option<KeyWindow> {
        self.windows.get(node).map(|w| w.window)
    }

    /// Hands out the current private key, at most once per window and only
    /// while the window is open.
    pub fn fetch_private_key(&mut self, node: &str, now: u64) -> Result<KeyHandle, BootstrapError> {
        let state = self
            .windows
            .get_mut(node)
            .ok_or_else(|| BootstrapError::NoWindow(node.to_string()))?;
        if state.fetched {
            return Err(BootstrapError::AlreadyFetched(node.to_string()));
        }
        if now >= state.window.closes_at {
            return Err(BootstrapError::WindowExpired(node.to_string()));
        }
        if now < state.window.opens_at {
            return Err(BootstrapError::NoWindow(node.to_string()));
        }
        let key = self
            .keys
            .get(node)
            .ok_or_else(|| BootstrapError::UnknownNode(node.to_string()))?;
        state.fetched = true;
        Ok(key.private_part.clone())
    }

    /// Encrypts `payload` to the node's current public key and stores it.
    pub fn encrypt_secret(&mut self, node: &str, label: &str, payload: &[u8]) -> Result<EncryptedSecret, BootstrapError> {
        let key = self
            .keys
            .get(node)
            .ok_or_else(|| BootstrapError::UnknownNode(node.to_string()))?;
        let ciphertext = self
            .provider
            .encrypt(&key.public_part, payload)
            .map_err(BootstrapError::Provider)?;
        let secret = EncryptedSecret {
            node: node.to_string(),
            label: label.to_string(),
            ciphertext,
            key_epoch: key.install_epoch,
        };
        self.secrets
            .insert((node.to_string(), label.to_string()), secret.clone());
        Ok(secret)
    }

    /// Fails closed on any epoch mismatch, including a key from a revoked epoch.
    pub fn decrypt_secret(&self, node_key: &KeyHandle, blob: &EncryptedSecret) -> Result<Vec<u8>, BootstrapError> {
        let current = self
            .current_epoch(&node_key.node)
            .ok_or_else(|| BootstrapError::UnknownNode(node_key.node.clone()))?;
        if node_key.node != blob.node || node_key.epoch != blob.key_epoch || node_key.epoch != current {
            return Err(BootstrapError::EpochMismatch {
                node: node_key.node.clone(),
                key: node_key.epoch,
                secret: blob.key_epoch,
            });
        }
        self.provider
            .decrypt(node_key, &blob.ciphertext)
            .map_err(BootstrapError::Provider)
    }

    pub fn secret(&self, node: &str, label: &str) -> Result<&EncryptedSecret, BootstrapError> {
        self.secrets
            .get(&(node.to_string(), label.to_string()))
            .ok_or_else(|| BootstrapError::NoSecret {
                node: node.to_string(),
                label: label.to_string(),
            })
    }

    pub fn secrets_for<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a EncryptedSecret> + 'a {
        self.secrets.values().filter(move |s| s.node == node)
    }

    /// The whole encrypted store, as anyone with read access to the install
    /// server would see it.
    pub fn dump_store(&self) -> Vec<EncryptedSecret> {
        self.secrets.values().cloned().collect()
    }

    /// Handles one request line at sim time `now`, returning `OK <payload>`
    /// or `ERR <code>`.
    pub fn handle_line(&mut self, line: &str, now: u64) -> String {
        match self.dispatch(line, now) {
            Ok(payload) => format!("OK {payload}"),
            Err(e) => format!("ERR {}", e.code()),
        }
    }

    fn dispatch(&mut self, line: &str, now: u64) -> Result<String, BootstrapError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let bad = || BootstrapError::BadRequest(line.to_string());
        match words.as_slice() {
            ["OPENWIN", node, duration] => {
                let duration = duration.parse().map_err(|_| bad())?;
                let w = self.open_window(node, now, duration)?;
                Ok(format!("{} {}", w.opens_at, w.closes_at))
            }
            ["OPENWIN", node] => {
                let w = self.open_window(node, now, self.default_window)?;
                Ok(format!("{} {}", w.opens_at, w.closes_at))
            }
            ["FETCHKEY", node] => Ok(B64.encode(self.fetch_private_key(node, now)?.to_wire())),
            ["PUTSECRET", node, label, payload] => {
                let payload = B64.decode(payload).map_err(|_| bad())?;
                let s = self.encrypt_secret(node, label, &payload)?;
                Ok(format!("{} {}", s.label, s.key_epoch))
            }
            ["GETSECRET", node, label] => {
                let s = self.secret(node, label)?;
                Ok(format!("{}:{}", s.key_epoch, B64.encode(&s.ciphertext)))
            }
            _ => Err(bad()),
        }
    }
}

/// Parses a `GETSECRET` reply payload back into a secret.
pub fn parse_secret_reply(node: &str, label: &str, payload: &str) -> Result<EncryptedSecret, BootstrapError> {
    let bad = || BootstrapError::BadRequest(format!("malformed secret `{payload}`"));
    let (epoch, data) = payload.split_once(':').ok_or_else(bad)?;
    Ok(EncryptedSecret {
        node: node.to_string(),
        label: label.to_string(),
        ciphertext: B64.decode(data).map_err(|_| bad())?,
        key_epoch: epoch.parse().map_err(|_| bad())?,
    })
}

/// Parses a `FETCHKEY` reply payload.
pub fn parse_key_reply(payload: &str) -> Result<KeyHandle, BootstrapError> {
    let raw = B64
        .decode(payload)
        .map_err(|_| BootstrapError::BadRequest("key reply is not base64".into()))?;
    let text = String::from_utf8(raw).map_err(|_| BootstrapError::BadRequest("key reply is not utf-8".into()))?;
    KeyHandle::from_wire(&text)
}

/// Early-install bootstrap as the node performs it: fetch the private key
/// inside the window, then decrypt every secret stored for the node.
pub fn bootstrap_node<P: CryptoProvider>(
    server: &mut KeyServer<P>,
    node: &str,
    now: u64,
) -> Result<BTreeMap<String, Vec<u8>>, BootstrapError> {
    let key = server.fetch_private_key(node, now)?;
    let blobs: Vec<EncryptedSecret> = server.secrets_for(node).cloned().collect();
    blobs
        .iter()
        .map(|b| Ok((b.label.clone(), server.decrypt_secret(&key, b)?)))
        .collect()
}
