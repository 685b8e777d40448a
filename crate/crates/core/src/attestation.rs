//! Registry of processor attestations.
//!
//! Hardware key attestation is abstracted to a signed-off record carrying a
//! device label, an ordinal security level and a half-open validity interval
//! `[issued_at, expires_at)`. Only processors with a valid record at match
//! time are eligible for deployments.

use crate::domain::{AccountId, Timestamp};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestationError {
    #[error("processor {0} already has a non-revoked attestation")]
    DuplicateAttestation(AccountId),
    #[error("attestation for {0} has issued_at >= expires_at")]
    InvalidInterval(AccountId),
    #[error("no attestation for processor {0}")]
    UnknownProcessor(AccountId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationRecord {
    pub processor: AccountId,
    pub device_model: String,
    /// Ordinal, 0 is the lowest level.
    pub security_level: u8,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    #[serde(default)]
    pub revoked: bool,
}

impl AttestationRecord {
    pub fn is_valid_at(&self, at: Timestamp) -> bool {
        !self.revoked && self.issued_at <= at && at < self.expires_at
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<AttestationRecord>", into = "Vec<AttestationRecord>")]
pub struct AttestationRegistry {
    records: BTreeMap<AccountId, AttestationRecord>,
}

impl AttestationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a registry from records, rejecting the same inputs `register`
    /// would.
    pub fn from_records(
        records: impl IntoIterator<Item = AttestationRecord>,
    ) -> Result<Self, AttestationError> {
        let mut registry = Self::new();
        for record in records {
            let revoked = record.revoked;
            let processor = record.processor.clone();
            registry.register(AttestationRecord {
                revoked: false,
                ..record
            })?;
            if revoked {
                registry.revoke(&processor)?;
            }
        }
        Ok(registry)
    }

    /// Stores a record. A revoked record may be superseded by a fresh one.
    pub fn register(&mut self, record: AttestationRecord) -> Result<(), AttestationError> {
        if record.issued_at >= record.expires_at {
            return Err(AttestationError::InvalidInterval(record.processor));
        }
        if let Some(existing) = self.records.get(&record.processor) {
            if !existing.revoked {
                return Err(AttestationError::DuplicateAttestation(record.processor));
            }
        }
        self.records.insert(record.processor.clone(), record);
        Ok(())
    }

    /// Revokes the processor's record. Revoking twice is a no-op.
    pub fn revoke(&mut self, processor: &AccountId) -> Result<(), AttestationError> {
        let record = self
            .records
            .get_mut(processor)
            .ok_or_else(|| AttestationError::UnknownProcessor(processor.clone()))?;
        record.revoked = true;
        Ok(())
    }

    pub fn is_valid(&self, processor: &AccountId, at: Timestamp) -> bool {
        self.records
            .get(processor)
            .is_some_and(|r| r.is_valid_at(at))
    }

    pub fn get(&self, processor: &AccountId) -> Option<&AttestationRecord> {
        self.records.get(processor)
    }

    pub fn security_level(&self, processor: &AccountId) -> Option<u8> {
        self.records.get(processor).map(|r| r.security_level)
    }

    pub fn records(&self) -> impl Iterator<Item = &AttestationRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl From<Vec<AttestationRecord>> for AttestationRegistry {
    // Used by deserialization only; invalid dumps keep their last record.
    fn from(records: Vec<AttestationRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| (r.processor.clone(), r))
                .collect(),
        }
    }
}

impl From<AttestationRegistry> for Vec<AttestationRecord> {
    fn from(registry: AttestationRegistry) -> Self {
        registry.records.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> AttestationRecord {
        AttestationRecord {
            processor: id.into(),
            device_model: "pixel-8".into(),
            security_level: 1,
            issued_at: 100,
            expires_at: 200,
            revoked: false,
        }
    }

    #[test]
    fn fresh_record_is_valid_inside_interval() {
        let mut reg = AttestationRegistry::new();
        reg.register(record("p1")).unwrap();
        let p1 = AccountId::from("p1");
        assert!(reg.is_valid(&p1, 100));
        assert!(reg.is_valid(&p1, 199));
        assert!(!reg.is_valid(&p1, 200));
        assert!(!reg.is_valid(&p1, 99));
        assert_eq!(reg.security_level(&p1), Some(1));
    }

    #[test]
    fn duplicate_is_rejected() {
        let mut reg = AttestationRegistry::new();
        reg.register(record("p1")).unwrap();
        assert_eq!(
            reg.register(record("p1")),
            Err(AttestationError::DuplicateAttestation("p1".into()))
        );
    }

    #[test]
    fn empty_interval_is_rejected() {
        let mut reg = AttestationRegistry::new();
        let mut r = record("p1");
        r.issued_at = r.expires_at;
        assert!(matches!(
            reg.register(r),
            Err(AttestationError::InvalidInterval(_))
        ));
        assert!(reg.is_empty());
    }

    #[test]
    fn revocation_is_permanent_and_idempotent() {
        let mut reg = AttestationRegistry::new();
        reg.register(record("p1")).unwrap();
        let p1 = AccountId::from("p1");
        reg.revoke(&p1).unwrap();
        reg.revoke(&p1).unwrap();
        for t in [0, 100, 150, 199, 10_000] {
            assert!(!reg.is_valid(&p1, t));
        }
        assert_eq!(
            reg.revoke(&"ghost".into()),
            Err(AttestationError::UnknownProcessor("ghost".into()))
        );
    }

    #[test]
    fn revoked_record_can_be_superseded() {
        let mut reg = AttestationRegistry::new();
        reg.register(record("p1")).unwrap();
        reg.revoke(&"p1".into()).unwrap();
        let mut renewed = record("p1");
        renewed.issued_at = 300;
        renewed.expires_at = 400;
        reg.register(renewed).unwrap();
        assert!(reg.is_valid(&"p1".into(), 350));
    }

    #[test]
    fn unknown_processor_is_invalid() {
        assert!(!AttestationRegistry::new().is_valid(&"nobody".into(), 0));
    }

    #[test]
    fn dump_and_load() {
        let mut reg = AttestationRegistry::new();
        reg.register(record("p2")).unwrap();
        reg.register(record("p1")).unwrap();
        reg.revoke(&"p2".into()).unwrap();
        let json = serde_json::to_string(&reg).unwrap();
        let back: AttestationRegistry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reg);
        let loaded = AttestationRegistry::from_records(Vec::from(reg.clone())).unwrap();
        assert_eq!(loaded, reg);
    }
}
