use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::buffer::Policy;
use crate::data::{make_image_stream, make_synthetic_stream, CorruptionSpec, ImageStreamSpec, SyntheticSpec, TaskStream};
use crate::error::{Error, Result};
use crate::model::{EncoderSpec, LossKind};

/// Prefix of environment variables that override config keys,
/// e.g. `ACR_EPOCHS=5` or `ACR_STREAM__SIDE=16` (`__` separates nesting).
pub const ENV_PREFIX: &str = "ACR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StreamConfig {
    Image(ImageStreamSpec),
    Synthetic(SyntheticSpec),
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig::Image(ImageStreamSpec::default())
    }
}

impl StreamConfig {
    /// The stream for one run seed; the data seed is the spec's seed offset by the run seed.
    pub fn build(&self, run_seed: u64) -> Result<TaskStream> {
        match self {
            StreamConfig::Image(spec) => make_image_stream(&ImageStreamSpec {
                seed: spec.seed.wrapping_add(run_seed),
                ..spec.clone()
            }),
            StreamConfig::Synthetic(spec) => make_synthetic_stream(&SyntheticSpec {
                seed: spec.seed.wrapping_add(run_seed),
                ..spec.clone()
            }),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, StreamConfig::Image(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stream: StreamConfig,
    pub policy: Policy,
    pub loss: LossKind,
    pub buffer_size: usize,
    /// Current-task batch size `b`; the same number is drawn from the buffer.
    pub batch_size: usize,
    /// Epochs per task `m`.
    pub epochs: usize,
    /// Leading epochs `E` whose confidences enter the variance.
    pub confidence_epochs: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    /// Evaluated on image streams only; empty disables OOD evaluation.
    pub corruptions: Vec<CorruptionSpec>,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub normalize: bool,
    pub out_dir: PathBuf,
    /// Write per-task confidence trajectories as CSV.
    pub dump_confidence: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stream: StreamConfig::default(),
            policy: Policy::Challenging,
            loss: LossKind::Pcl,
            buffer_size: 200,
            batch_size: 16,
            epochs: 20,
            confidence_epochs: 5,
            temperature: 0.1,
            learning_rate: 0.05,
            seeds: (0..5).collect(),
            corruptions: CorruptionSpec::full_suite(),
            hidden: vec![64],
            embed_dim: 32,
            normalize: false,
            out_dir: PathBuf::from("out"),
            dump_confidence: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.buffer_size == 0 {
            return bad("buffer_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.confidence_epochs == 0 || self.confidence_epochs > self.epochs {
            return bad(format!(
                "confidence_epochs must lie in 1..=epochs ({}), got {}",
                self.epochs, self.confidence_epochs
            ));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if let Some(s) = self.corruptions.iter().find(|s| s.severity > crate::data::MAX_SEVERITY) {
            return bad(format!("corruption severity {} outside 0..=5", s.severity));
        }
        Ok(())
    }

    pub fn encoder_spec(&self, input_dim: usize) -> EncoderSpec {
        EncoderSpec {
            input_dim,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
        }
    }

    /// Sets a dotted key (`stream.side`, `epochs`) from a string. The value is
    /// read as JSON when it parses, otherwise as a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let value = parse_value(key, raw);
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}={raw}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` pairs in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for pair in pairs {
            let pair = pair.as_ref();
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies `ACR_*` variables from `vars`, sorted by name.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.strip_prefix(ENV_PREFIX)?;
                Some((key.to_ascii_lowercase().replace("__", "."), v))
            })
            .filter(|(k, _)| k != "log")
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k, &v)?;
        }
        Ok(())
    }
}

fn parse_value(key: &str, raw: &str) -> Value {
    // Comma lists for the list-valued keys: seeds=0,1,2 and corruptions=gaussian-noise:1,pixelate:5.
    if key == "corruptions" && !raw.trim_start().starts_with('[') {
        let specs: Vec<Value> = raw
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| match s.trim().parse::<CorruptionSpec>() {
                Ok(spec) => serde_json::to_value(spec).expect("spec serializes"),
                Err(_) => Value::String(s.to_string()),
            })
            .collect();
        return Value::Array(specs);
    }
    if matches!(key, "seeds" | "hidden") && raw.contains(',') && !raw.starts_with('[') {
        return serde_json::from_str(&format!("[{raw}]")).unwrap_or_else(|_| Value::String(raw.into()));
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()))
}
