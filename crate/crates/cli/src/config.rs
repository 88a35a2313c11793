//! Run configuration: defaults, then a JSON file, then `--set` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ddmem::evaluation::EvalOptions;
use ddmem::model::ModelConfig;
use ddmem::pipeline::FlagConfig;
use ddmem::training::{desk_schedule, FinetuneConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
    /// Training phases, run in order.
    pub train: Vec<TrainConfig>,
    pub finetune: FinetuneConfig,
    pub eval: EvalOptions,
    pub flags: FlagConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            model: ModelConfig::default(),
            train: desk_schedule().to_vec(),
            finetune: FinetuneConfig::default(),
            eval: EvalOptions::default(),
            flags: FlagConfig::default(),
        }
    }
}

impl RunConfig {
    /// Derives every component seed from one run seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        for (i, phase) in self.train.iter_mut().enumerate() {
            phase.seed = seed.wrapping_add(i as u64 + 1);
        }
        self.finetune.seed = seed.wrapping_add(100);
    }

    pub fn set_workers(&mut self, workers: usize) {
        self.workers = workers.max(1);
        self.eval.workers = self.workers;
    }
}

/// Applies `key.path=value` to a JSON tree. The key must already exist;
/// array elements are addressed by index. Values parse as JSON, falling
/// back to a plain string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| format!("override {assignment:?} is not key=value"))?;
    let mut node = tree;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| format!("unknown config key {key:?}"))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Builds the effective config from defaults, an optional file and overrides.
pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<RunConfig, String> {
    let mut tree = match file {
        Some(text) => {
            let parsed: RunConfig = serde_json::from_str(text).map_err(|e| format!("config file: {e}"))?;
            serde_json::to_value(parsed).expect("config serialises")
        }
        None => serde_json::to_value(RunConfig::default()).expect("config serialises"),
    };
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    serde_json::from_value(tree).map_err(|e| format!("config: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = resolve(None, &["model.channels=16".into(), "train.1.steps=7".into(), "eval.oracle=box".into()]).unwrap();
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.train[1].steps, 7);
        assert_eq!(c.eval.oracle.to_string(), "box");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, &["model.width=3".into()]).is_err());
        assert!(resolve(None, &["seed".into()]).is_err());
        assert!(resolve(Some(r#"{"seeds": 3}"#), &[]).is_err());
        assert!(resolve(None, &["model.channels=\"many\"".into()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let c = resolve(Some(r#"{"seed": 5, "workers": 2}"#), &["seed=9".into()]).unwrap();
        assert_eq!((c.seed, c.workers), (9, 2));
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.reseed(42);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(resolve(Some(&text), &[]).unwrap(), c);
    }
}
