use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use stflow_core::data::{dataset::parse_timestamp, SplitSpec};
use stflow_core::model::Variant;
use stflow_core::trainer::TrainConfig;
use stflow_core::ModelConfig;

use crate::CliError;

/// Where the dataset lives and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory; relative paths resolve against the config file.
    pub dir: Option<PathBuf>,
    /// First test instant (`YYYY-MM-DDTHH:MM:SS`). Overrides `test_days`.
    pub boundary: Option<String>,
    /// Length of the test period at the end of the series.
    pub test_days: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            boundary: None,
            test_days: 10,
        }
    }
}

impl DataSection {
    pub fn split(&self) -> Result<SplitSpec, CliError> {
        match &self.boundary {
            Some(b) => Ok(SplitSpec::Boundary(parse_timestamp(b)?)),
            None => Ok(SplitSpec::TestDays(self.test_days)),
        }
    }
}

/// Ablation switches applied on top of `model`: first the named variant,
/// then any individual override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub variant: Option<Variant>,
    pub long_skip: Option<bool>,
    pub attention: Option<bool>,
    pub external: Option<bool>,
    pub closeness: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub ablation: AblationSection,
}

impl RunConfigFile {
    /// Reads `path` (or starts from defaults) and applies `key.path=value`
    /// overrides before strict parsing.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {}", p.display(), e)))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e)))?
            }
            None => Value::Object(Default::default()),
        };
        let mut cfg = Self::from_doc(doc, sets)?;
        if let (Some(dir), Some(p)) = (&cfg.data.dir, path) {
            if dir.is_relative() {
                cfg.data.dir = Some(p.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        Ok(cfg)
    }

    /// Defaults with `model` replaced by `model`, then the overrides.
    pub fn with_model(model: &ModelConfig, sets: &[String]) -> Result<Self, CliError> {
        let doc = serde_json::json!({ "model": model });
        Self::from_doc(doc, sets)
    }

    fn from_doc(mut doc: Value, sets: &[String]) -> Result<Self, CliError> {
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid config: {}", e)))
    }

    /// The model actually built: `model` with the ablation section applied.
    pub fn effective_model(&self) -> ModelConfig {
        let a = &self.ablation;
        let mut m = a.variant.unwrap_or(Variant::Base).apply(&self.model);
        if let Some(v) = a.long_skip {
            m.flags.long_skip = v;
        }
        if let Some(v) = a.attention {
            m.flags.attention = v;
        }
        if let Some(v) = a.external {
            m.flags.external = v;
        }
        if let Some(p) = a.closeness {
            m.closeness = p;
        }
        m
    }

    /// SHA-256 of the canonical JSON of the whole configuration, with every
    /// seed cleared so replicas of one run share it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.model.seed = 0;
        c.train.seeds.clear();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// `section.key=value`; the value is read as JSON, falling back to a bare string.
fn apply_set(doc: &mut Value, set: &str) -> Result<(), CliError> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects section.key=value, got {:?}", set)))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("--set key must be section.key, got {:?}", path)));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("--set {}: {:?} is not a section", path, k)))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("--set {}: parent is not a section", path)))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
