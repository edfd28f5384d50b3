//! Fact-checking structured claims against a key-value reference store.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::records::{Claim, ClaimValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactEntry {
    pub value: ClaimValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<NaiveDate>,
}

/// Reference facts keyed by claim key. Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FactStore {
    entries: BTreeMap<String, FactEntry>,
}

impl FactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, entry: FactEntry) -> Result<()> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::Load("empty fact key".into()));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Load(format!("duplicate fact key {key:?}")));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&FactEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &FactEntry)> {
        self.entries.iter()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl<'de> Deserialize<'de> for FactStore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct StoreVisitor;

        impl<'de> Visitor<'de> for StoreVisitor {
            type Value = FactStore;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping fact keys to entries")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<FactStore, A::Error> {
                let mut store = FactStore::new();
                while let Some((key, entry)) = map.next_entry::<String, FactEntry>()? {
                    store.insert(key, entry).map_err(serde::de::Error::custom)?;
                }
                Ok(store)
            }
        }

        deserializer.deserialize_map(StoreVisitor)
    }
}

pub fn load_fact_store<R: std::io::Read>(reader: R) -> Result<FactStore> {
    serde_json::from_reader(reader).map_err(|e| Error::Load(e.to_string()))
}

pub fn load_fact_store_str(text: &str) -> Result<FactStore> {
    load_fact_store(text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Match,
    Mismatch,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub key: String,
    pub claimed: ClaimValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ClaimValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_unit: Option<String>,
    pub status: VerdictStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn as_number(v: &ClaimValue) -> Option<f64> {
    match v {
        ClaimValue::Number(x) => Some(*x),
        ClaimValue::Text(s) => s.trim().parse().ok(),
    }
}

fn values_match(claim: &Claim, entry: &FactEntry, tol: Tolerance) -> bool {
    match (&claim.value, &entry.value) {
        (ClaimValue::Text(a), ClaimValue::Text(b)) => normalize_text(a) == normalize_text(b),
        (c, r) => match (as_number(c), as_number(r)) {
            (Some(c), Some(r)) => {
                claim.unit == entry.unit && (c - r).abs() <= tol.abs_tol.max(tol.rel_tol * r.abs())
            }
            _ => false,
        },
    }
}

/// One verdict per claim, in claim order.
pub fn check_claims(
    claims: &[Claim],
    store: &FactStore,
    tol: Tolerance,
) -> Result<Vec<ClaimVerdict>> {
    if !(tol.rel_tol >= 0.0 && tol.abs_tol >= 0.0) {
        return Err(Error::domain("fact-check tolerances must be non-negative"));
    }
    Ok(claims
        .iter()
        .map(|c| {
            let entry = store.get(&c.key);
            let status = match entry {
                None => VerdictStatus::Unknown,
                Some(e) if values_match(c, e, tol) => VerdictStatus::Match,
                Some(_) => VerdictStatus::Mismatch,
            };
            ClaimVerdict {
                key: c.key.clone(),
                claimed: c.value.clone(),
                claimed_unit: c.unit.clone(),
                reference: entry.map(|e| e.value.clone()),
                reference_unit: entry.and_then(|e| e.unit.clone()),
                status,
            }
        })
        .collect())
}
