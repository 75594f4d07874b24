//! Service configuration file (TOML) and environment keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use memos_core::operator::PartitionPath;
use memos_core::scheduler::TransformationRule;
use memos_core::PrincipalId;
use serde::{Deserialize, Serialize};

use crate::backend::{FileTreeBackend, InMemoryBackend, StorageBackend};
use crate::kernel::{ClockMode, Kernel, KernelConfig, KernelError};
use crate::store::MemStore;

pub const ENV_WATERMARK_KEY: &str = "MEMOS_WATERMARK_KEY";
pub const ENV_MIP_KEY: &str = "MEMOS_MIP_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Filetree,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaultSection {
    pub backend: BackendKind,
    pub path: PathBuf,
}

impl Default for VaultSection {
    fn default() -> Self {
        VaultSection { backend: BackendKind::Filetree, path: PathBuf::from("memos-vault") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub cache_capacity: usize,
    pub token_budget: u64,
    pub default_k: usize,
    pub min_score: f64,
    /// Replaces the default rule set when non-empty.
    pub rules: Vec<TransformationRule>,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let d = KernelConfig::default();
        SchedulerSection {
            cache_capacity: d.cache_capacity,
            token_budget: d.token_budget,
            default_k: d.default_k,
            min_score: d.min_score,
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernanceSection {
    pub admins: BTreeSet<PrincipalId>,
    /// Known principals; empty accepts any well-formed name.
    pub principals: BTreeSet<PrincipalId>,
}

impl Default for GovernanceSection {
    fn default() -> Self {
        GovernanceSection { admins: KernelConfig::default().admins, principals: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub seed: u64,
    pub default_partition: String,
    pub clock: ClockMode,
    pub vault: VaultSection,
    pub scheduler: SchedulerSection,
    pub governance: GovernanceSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:7070".into(),
            seed: 0,
            default_partition: "default".into(),
            clock: ClockMode::System,
            vault: VaultSection::default(),
            scheduler: SchedulerSection::default(),
            governance: GovernanceSection::default(),
        }
    }
}

/// Signing and watermark keys. A missing key disables the feature.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Keys {
    pub watermark: Option<Vec<u8>>,
    pub mip: Option<Vec<u8>>,
}

impl Keys {
    pub fn from_env() -> Self {
        let get = |k| std::env::var(k).ok().filter(|v| !v.is_empty()).map(String::into_bytes);
        Keys { watermark: get(ENV_WATERMARK_KEY), mip: get(ENV_MIP_KEY) }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: ServiceConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        PartitionPath::new(&self.default_partition).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.scheduler.cache_capacity == 0 {
            return Err(ConfigError::Invalid("scheduler.cache_capacity must be positive".into()));
        }
        if self.scheduler.default_k == 0 {
            return Err(ConfigError::Invalid("scheduler.default_k must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.scheduler.min_score) {
            return Err(ConfigError::Invalid("scheduler.min_score must lie in [-1,1]".into()));
        }
        Ok(())
    }

    pub fn kernel_config(&self, keys: &Keys) -> KernelConfig {
        let d = KernelConfig::default();
        KernelConfig {
            seed: self.seed,
            cache_capacity: self.scheduler.cache_capacity,
            token_budget: self.scheduler.token_budget,
            default_k: self.scheduler.default_k,
            min_score: self.scheduler.min_score,
            rules: if self.scheduler.rules.is_empty() { d.rules } else { self.scheduler.rules.clone() },
            admins: self.governance.admins.clone(),
            watermark_key: keys.watermark.clone(),
            mip_key: keys.mip.clone(),
            clock: self.clock,
            default_partition: PartitionPath::new(&self.default_partition).expect("validated"),
            ..d
        }
    }

    pub fn knows(&self, p: &PrincipalId) -> bool {
        self.governance.principals.is_empty() || self.governance.principals.contains(p) || self.governance.admins.contains(p)
    }

    /// Opens the configured backend and store and builds a kernel over them.
    pub fn open_kernel(&self, keys: &Keys) -> Result<Kernel, ConfigError> {
        let config = self.kernel_config(keys);
        let (backend, store): (Box<dyn StorageBackend>, MemStore) = match self.vault.backend {
            BackendKind::Memory => (Box::new(InMemoryBackend::new()), MemStore::in_memory()),
            BackendKind::Filetree => {
                let b = FileTreeBackend::open(&self.vault.path).map_err(KernelError::from)?;
                let s = MemStore::open(self.vault.path.join("store.log"))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                (Box::new(b), s)
            }
        };
        Ok(Kernel::open_with_store(backend, config, store)?)
    }
}
