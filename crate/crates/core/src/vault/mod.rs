//! Dual segregated vaults mapping secrets to stable placeholders.
//!
//! Personal secrets and institutional secrets live in separate [`Vault`]s.
//! A placeholder names its vault (`PER` or `INS`) and can only ever be
//! resolved through that vault, so a caller authorised for one vault cannot
//! recover originals from the other.
//!
//! Placeholder format: `[[SECRET:<VAULT>:<CLASS>:<NNNNNN>]]`.

mod persist;

use std::collections::HashMap;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scanner::{SecretClass, SecretSpan, Typology};

pub(crate) use persist::sanitize as sanitize_session;
pub use persist::{VaultFile, VaultKey};

const SIGIL: &str = "SECRET:";
const MAX_COUNTER: u32 = 999_999;

static PLACEHOLDER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\[\[SECRET:(PER|INS):([A-Z0-9_]+):(\d{6})\]\]").unwrap());
static ESCAPED_SIGIL: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[\[(\\*)SECRET:").unwrap());

#[derive(Debug, Error)]
pub enum VaultError {
    #[error(
        "span {start}..{end} ({class}) is outside text of length {len} or not on a char boundary"
    )]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
        class: &'static str,
    },
    #[error("span surface does not match text at {start}..{end}")]
    SurfaceMismatch { start: usize, end: usize },
    #[error("vault handle mismatch: expected {expected:?}, got {got:?}")]
    WrongVault { expected: VaultId, got: VaultId },
    #[error("vault {0:?} exhausted its placeholder counter")]
    Exhausted(VaultId),
    #[error("vault file: {0}")]
    Persist(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VaultKind {
    Personal,
    Institutional,
}

impl VaultKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Personal => "PER",
            Self::Institutional => "INS",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "PER" => Some(Self::Personal),
            "INS" => Some(Self::Institutional),
            _ => None,
        }
    }

    /// Vault responsible for a typology; quasi-identifiers have none.
    pub fn for_typology(t: Typology) -> Option<Self> {
        match t {
            Typology::Personal => Some(Self::Personal),
            Typology::Institutional => Some(Self::Institutional),
            Typology::QuasiIdentifier => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VaultId {
    pub kind: VaultKind,
    pub session: String,
}

impl VaultId {
    pub fn new(kind: VaultKind, session: impl Into<String>) -> Self {
        Self {
            kind,
            session: session.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultEntry {
    pub placeholder: String,
    pub class: SecretClass,
    pub original: String,
    pub first_seen_turn: u64,
}

/// One segregated placeholder store.
#[derive(Debug)]
pub struct Vault {
    id: VaultId,
    entries: Vec<VaultEntry>,
    by_original: HashMap<String, usize>,
    by_placeholder: HashMap<String, usize>,
    counter: u32,
    file: Option<VaultFile>,
}

impl Vault {
    pub fn new(id: VaultId) -> Self {
        Self {
            id,
            entries: Vec::new(),
            by_original: HashMap::new(),
            by_placeholder: HashMap::new(),
            counter: 0,
            file: None,
        }
    }

    /// Opens (or creates) the encrypted `vault-<session>.jsonl` file in
    /// `dir`, replaying its entries.
    pub fn open_persistent(id: VaultId, dir: &Path, key: &VaultKey) -> Result<Self, VaultError> {
        let file = VaultFile::open(dir, &id, key)?;
        let mut vault = Self::new(id);
        for entry in file.load()? {
            vault.insert_loaded(entry)?;
        }
        vault.file = Some(file);
        Ok(vault)
    }

    fn insert_loaded(&mut self, entry: VaultEntry) -> Result<(), VaultError> {
        let counter = parse_placeholder(&entry.placeholder)
            .filter(|p| p.kind == self.id.kind)
            .map(|p| p.counter)
            .ok_or_else(|| {
                VaultError::Persist(format!("foreign placeholder {}", entry.placeholder))
            })?;
        self.counter = self.counter.max(counter);
        let idx = self.entries.len();
        self.by_original.insert(entry.original.clone(), idx);
        self.by_placeholder.insert(entry.placeholder.clone(), idx);
        self.entries.push(entry);
        Ok(())
    }

    pub fn id(&self) -> &VaultId {
        &self.id
    }

    pub fn kind(&self) -> VaultKind {
        self.id.kind
    }

    pub fn entries(&self) -> &[VaultEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Placeholder for `original`, allocating the next counter value on first
    /// sight. Returns the entry and whether it was newly created.
    pub fn intern(
        &mut self,
        class: SecretClass,
        original: &str,
        turn: u64,
    ) -> Result<(VaultEntry, bool), VaultError> {
        if let Some(&idx) = self.by_original.get(original) {
            return Ok((self.entries[idx].clone(), false));
        }
        if self.counter >= MAX_COUNTER {
            return Err(VaultError::Exhausted(self.id.clone()));
        }
        self.counter += 1;
        let entry = VaultEntry {
            placeholder: format!(
                "[[{SIGIL}{}:{}:{:06}]]",
                self.id.kind.tag(),
                class.tag(),
                self.counter
            ),
            class,
            original: original.to_string(),
            first_seen_turn: turn,
        };
        if let Some(file) = &mut self.file {
            file.append(&entry)?;
        }
        let idx = self.entries.len();
        self.by_original.insert(entry.original.clone(), idx);
        self.by_placeholder.insert(entry.placeholder.clone(), idx);
        self.entries.push(entry.clone());
        Ok((entry, true))
    }

    /// Resolves a placeholder issued by this vault. Placeholders tagged for
    /// the other vault never resolve here.
    pub fn lookup(&self, placeholder: &str) -> Option<&VaultEntry> {
        let parsed = parse_placeholder(placeholder)?;
        if parsed.kind != self.id.kind {
            return None;
        }
        self.by_placeholder
            .get(placeholder)
            .map(|&idx| &self.entries[idx])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedPlaceholder {
    pub kind: VaultKind,
    pub class: Option<SecretClass>,
    pub counter: u32,
}

pub fn parse_placeholder(s: &str) -> Option<ParsedPlaceholder> {
    let caps = PLACEHOLDER.captures(s)?;
    if caps.get(0)?.as_str().len() != s.len() {
        return None;
    }
    Some(ParsedPlaceholder {
        kind: VaultKind::from_tag(&caps[1])?,
        class: SecretClass::from_tag(&caps[2]),
        counter: caps[3].parse().ok()?,
    })
}

/// Result of [`redact`].
#[derive(Debug, Clone, PartialEq)]
pub struct Redaction {
    pub text: String,
    /// Distinct entries referenced by this redaction, in first-use order.
    pub entries: Vec<VaultEntry>,
}

/// Replaces Personal and Institutional spans with placeholders from the
/// matching vault. Quasi-identifier spans are ignored. Overlapping spans are
/// resolved longest-first.
pub fn redact(
    text: &str,
    spans: &[SecretSpan],
    personal: &mut Vault,
    institutional: &mut Vault,
    turn: u64,
) -> Result<Redaction, VaultError> {
    if personal.kind() != VaultKind::Personal {
        return Err(VaultError::WrongVault {
            expected: VaultId::new(VaultKind::Personal, personal.id.session.clone()),
            got: personal.id.clone(),
        });
    }
    if institutional.kind() != VaultKind::Institutional {
        return Err(VaultError::WrongVault {
            expected: VaultId::new(VaultKind::Institutional, institutional.id.session.clone()),
            got: institutional.id.clone(),
        });
    }

    let mut targets = Vec::new();
    for span in spans {
        if span.start >= span.end
            || span.end > text.len()
            || !text.is_char_boundary(span.start)
            || !text.is_char_boundary(span.end)
        {
            return Err(VaultError::SpanOutOfBounds {
                start: span.start,
                end: span.end,
                len: text.len(),
                class: span.class.id(),
            });
        }
        if text[span.start..span.end] != span.surface {
            return Err(VaultError::SurfaceMismatch {
                start: span.start,
                end: span.end,
            });
        }
        if !span.class.is_quasi() {
            targets.push(span.clone());
        }
    }
    let mut chosen = crate::scanner::resolve_overlaps(targets);
    chosen.sort_by_key(|s| s.start);

    let mut out = String::with_capacity(text.len());
    let mut entries: Vec<VaultEntry> = Vec::new();
    let mut cursor = 0;
    for span in &chosen {
        out.push_str(&text[cursor..span.start]);
        let vault = match VaultKind::for_typology(span.class.typology()) {
            Some(VaultKind::Personal) => &mut *personal,
            Some(VaultKind::Institutional) => &mut *institutional,
            None => unreachable!("quasi spans filtered above"),
        };
        let (entry, _) = vault.intern(span.class, &span.surface, turn)?;
        out.push_str(&entry.placeholder);
        if !entries.iter().any(|e| e.placeholder == entry.placeholder) {
            entries.push(entry);
        }
        cursor = span.end;
    }
    out.push_str(&text[cursor..]);
    Ok(Redaction { text: out, entries })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RehydrateWarning {
    /// Placeholder belongs to a vault the caller is not authorised for.
    Segregated { placeholder: String },
    /// Well-formed placeholder with no entry in its vault.
    Unknown { placeholder: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rehydration {
    pub text: String,
    pub restored: usize,
    pub warnings: Vec<RehydrateWarning>,
}

/// Restores placeholders whose vault is in `authorized`. Single pass: restored
/// originals are never re-examined.
pub fn rehydrate(response: &str, vaults: &[&Vault], authorized: &[VaultKind]) -> Rehydration {
    let mut warnings = Vec::new();
    let mut restored = 0;
    let text = PLACEHOLDER.replace_all(response, |caps: &regex::Captures<'_>| {
        let placeholder = &caps[0];
        let kind = VaultKind::from_tag(&caps[1]).expect("regex admits PER|INS only");
        if !authorized.contains(&kind) {
            warnings.push(RehydrateWarning::Segregated {
                placeholder: placeholder.to_string(),
            });
            return placeholder.to_string();
        }
        match vaults
            .iter()
            .filter(|v| v.kind() == kind)
            .find_map(|v| v.lookup(placeholder))
        {
            Some(entry) => {
                restored += 1;
                entry.original.clone()
            }
            None => {
                warnings.push(RehydrateWarning::Unknown {
                    placeholder: placeholder.to_string(),
                });
                placeholder.to_string()
            }
        }
    });
    Rehydration {
        text: text.into_owned(),
        restored,
        warnings,
    }
}

/// Neutralises user-typed placeholder sigils: `[[` + k backslashes +
/// `SECRET:` gains one backslash.
pub fn escape_sigils(text: &str) -> String {
    ESCAPED_SIGIL
        .replace_all(text, |caps: &regex::Captures<'_>| {
            format!("[[\\{}{SIGIL}", &caps[1])
        })
        .into_owned()
}

/// Inverse of [`escape_sigils`].
pub fn unescape_sigils(text: &str) -> String {
    ESCAPED_SIGIL
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let slashes = &caps[1];
            if slashes.is_empty() {
                // a live placeholder; leave it alone
                caps[0].to_string()
            } else {
                format!("[[{}{SIGIL}", &slashes[1..])
            }
        })
        .into_owned()
}

/// The personal and institutional vault of one session.
#[derive(Debug)]
pub struct DualVault {
    personal: Vault,
    institutional: Vault,
}

impl DualVault {
    pub fn new(session: &str) -> Self {
        Self {
            personal: Vault::new(VaultId::new(VaultKind::Personal, session)),
            institutional: Vault::new(VaultId::new(VaultKind::Institutional, session)),
        }
    }

    pub fn open_persistent(session: &str, dir: &Path, key: &VaultKey) -> Result<Self, VaultError> {
        Ok(Self {
            personal: Vault::open_persistent(VaultId::new(VaultKind::Personal, session), dir, key)?,
            institutional: Vault::open_persistent(
                VaultId::new(VaultKind::Institutional, session),
                dir,
                key,
            )?,
        })
    }

    pub fn personal(&self) -> &Vault {
        &self.personal
    }

    pub fn institutional(&self) -> &Vault {
        &self.institutional
    }

    pub fn redact(
        &mut self,
        text: &str,
        spans: &[SecretSpan],
        turn: u64,
    ) -> Result<Redaction, VaultError> {
        redact(
            text,
            spans,
            &mut self.personal,
            &mut self.institutional,
            turn,
        )
    }

    pub fn rehydrate(&self, response: &str, authorized: &[VaultKind]) -> Rehydration {
        rehydrate(response, &[&self.personal, &self.institutional], authorized)
    }
}
