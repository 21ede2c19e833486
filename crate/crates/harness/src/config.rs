//! Experiment configuration: presets, JSON files and `--key value` overrides.

use std::path::{Path, PathBuf};

use obftf_core::data::RegressionSpec;
use obftf_core::sampler::GammaMode;
use obftf_core::{Budget, Error, LrSchedule, Reduction, Result, SamplerSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    Regression(RegressionSpec),
    Mnist(MnistConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistConfig {
    /// Directory holding the four IDX files under their standard names.
    pub dir: PathBuf,
    /// Divide pixels by 255.
    #[serde(default = "yes")]
    pub scale: bool,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    #[serde(rename = "linear-1d")]
    Linear1d,
    Mlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub sampler: SamplerSpec,
    pub budget: Budget,
    pub batch_size: usize,
    pub epochs: u64,
    pub lr: LrSchedule,
    #[serde(default)]
    pub reduction: Reduction,
    /// Master seed; data, init, shuffle and sampler streams derive from it.
    pub seed: u64,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    /// Record wall-clock times. Off by default so outputs are byte-stable.
    #[serde(default)]
    pub timing: bool,
}

pub const PRESETS: [&str; 4] = ["regression-paper", "regression-outliers", "mnist-desk", "mnist-paper"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let regression = |outliers: usize| ExperimentConfig {
            dataset: DatasetConfig::Regression(RegressionSpec {
                outlier_count: outliers,
                ..RegressionSpec::default()
            }),
            model: ModelConfig::Linear1d,
            sampler: SamplerSpec::obftf(),
            budget: Budget::Ratio(0.25),
            batch_size: 128,
            epochs: 150,
            // Eight steps per epoch; the rate halves every 25 epochs.
            lr: LrSchedule::StepDecay {
                rate: 0.02,
                factor: 0.5,
                period: 200,
            },
            reduction: Reduction::Mean,
            seed: 0,
            eval_every: 10,
            out_dir: PathBuf::from("runs").join(name),
            precision: Precision::F64,
            timing: false,
        };
        let mnist = |epochs: u64| ExperimentConfig {
            dataset: DatasetConfig::Mnist(MnistConfig {
                dir: PathBuf::from("data/mnist"),
                scale: true,
                train_limit: None,
                test_limit: None,
            }),
            model: ModelConfig::Mlp {
                hidden: vec![256, 256],
            },
            sampler: SamplerSpec::obftf(),
            budget: Budget::Ratio(0.25),
            batch_size: 128,
            epochs,
            lr: LrSchedule::constant(0.1),
            reduction: Reduction::Mean,
            seed: 0,
            eval_every: 1,
            out_dir: PathBuf::from("runs").join(name),
            precision: Precision::F64,
            timing: false,
        };
        match name {
            "regression-paper" => Ok(regression(0)),
            "regression-outliers" => Ok(regression(20)),
            "mnist-desk" => Ok(mnist(5)),
            "mnist-paper" => Ok(mnist(500)),
            other => Err(Error::config(
                "preset",
                format!("unknown preset '{other}'; expected one of {}", PRESETS.join(", ")),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        self.budget.validate()?;
        self.lr.validate()?;
        self.sampler.validate()?;
        match (&self.dataset, &self.model) {
            (DatasetConfig::Regression(spec), ModelConfig::Linear1d) => spec.validate(),
            (DatasetConfig::Mnist(_), ModelConfig::Mlp { hidden }) => {
                if hidden.contains(&0) {
                    Err(Error::config("model.hidden", "layer widths must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::config(
                "model",
                "linear-1d pairs with regression data and mlp with mnist",
            )),
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.dataset, DatasetConfig::Regression(_))
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))
    }
}

/// Resolves a configuration from an optional preset, an optional JSON file
/// and a list of `(dotted.key, value)` overrides, applied in that order.
pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut value = ExperimentConfig::preset(preset.unwrap_or("regression-paper"))?.to_json();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        merge(&mut value, patch);
    }
    for (key, raw) in overrides {
        set_path(&mut value, key, parse_value(raw))?;
    }
    let config = ExperimentConfig::from_json(value)?;
    config.validate()?;
    Ok(config)
}

/// JSON if it parses, otherwise a plain string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Recursive object merge; non-object values in `patch` replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            // A new `kind` switches variant, so the old variant's fields go.
            if let Some(kind) = p.get("kind") {
                if b.get("kind") != Some(kind) {
                    b.clear();
                }
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c` inside `root`, creating objects along the way. Setting a
/// `kind` resets the enclosing object; setting one key of a single-key
/// object such as `budget` replaces that key.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut patch = value;
    for part in parts.iter().rev() {
        let mut obj = serde_json::Map::new();
        obj.insert((*part).to_string(), patch);
        patch = Value::Object(obj);
    }
    let parent_pointer: String = parts[..parts.len() - 1].iter().map(|p| format!("/{p}")).collect();
    if let Some(Value::Object(parent)) = root.pointer_mut(&parent_pointer) {
        let last = parts[parts.len() - 1];
        let single_key = parent.len() == 1 && !parent.contains_key(last) && !parent.contains_key("kind");
        if single_key && parts.len() >= 2 && last != "kind" {
            parent.clear();
        }
    }
    merge(root, patch);
    Ok(())
}

/// `prob` with the threshold calibrated to the selection rate.
pub fn calibrated_prob() -> SamplerSpec {
    SamplerSpec::Prob {
        gamma: 0.5,
        gamma_mode: GammaMode::Calibrated,
    }
}

/// A sampler from a short name or an inline JSON object.
pub fn sampler_from_arg(arg: &str) -> Result<SamplerSpec> {
    let arg = arg.trim();
    if arg.starts_with('{') {
        let spec: SamplerSpec =
            serde_json::from_str(arg).map_err(|e| Error::config("sampler", e.to_string()))?;
        spec.validate()?;
        return Ok(spec);
    }
    match arg {
        "prob-calibrated" => Ok(calibrated_prob()),
        other => SamplerSpec::from_kind(other),
    }
}

/// Display label of a sampler in sweep outputs.
pub fn sampler_label(spec: &SamplerSpec) -> String {
    match spec {
        SamplerSpec::Prob {
            gamma_mode: GammaMode::Calibrated,
            ..
        } => "prob-calibrated".into(),
        other => other.kind_name().into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use obftf_core::sampler::MinkMode;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(c.to_json()).unwrap(), c);
        }
        assert!(matches!(ExperimentConfig::preset("nope"), Err(Error::Config { .. })));
    }

    #[test]
    fn overrides_apply_in_order() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = resolve(
            Some("mnist-desk"),
            None,
            &[o("epochs", "2"), o("lr.rate", "0.05"), o("dataset.train_limit", "100"), o("sampler.kind", "mink")],
        )
        .unwrap();
        assert_eq!(c.epochs, 2);
        assert_eq!(c.lr, LrSchedule::constant(0.05));
        assert_eq!(c.sampler, SamplerSpec::Mink { mode: MinkMode::TopB });
        match c.dataset {
            DatasetConfig::Mnist(m) => assert_eq!(m.train_limit, Some(100)),
            _ => panic!(),
        }

        let c = resolve(None, None, &[o("budget.count", "16"), o("dataset.outlier_count", "20")]).unwrap();
        assert_eq!(c.budget, Budget::Count(16));
        assert!(matches!(c.dataset, DatasetConfig::Regression(RegressionSpec { outlier_count: 20, .. })));

        let c = resolve(None, None, &[o("sampler", r#"{"kind":"prob","gamma":2.0}"#)]).unwrap();
        assert_eq!(c.sampler, SamplerSpec::prob(2.0));
    }

    #[test]
    fn bad_fields_name_themselves() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let e = resolve(None, None, &[o("batch_size", "0")]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "batch_size"), "{e}");
        let e = resolve(None, None, &[o("budget.ratio", "1.5")]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "budget.ratio"));
        let e = resolve(None, None, &[o("bogus", "1")]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = resolve(None, None, &[o("model.kind", "mlp"), o("model.hidden", "[4]")]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "model"));
    }

    #[test]
    fn config_file_merges_under_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 3, "seed": 9, "sampler": {"kind": "uniform"}}"#).unwrap();
        let c = resolve(None, Some(&path), &[("seed".into(), "4".into())]).unwrap();
        assert_eq!((c.epochs, c.seed), (3, 4));
        assert_eq!(c.sampler, SamplerSpec::uniform());
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(resolve(None, Some(&path), &[]), Err(Error::Config { .. })));
    }

    #[test]
    fn sampler_args() {
        assert_eq!(sampler_from_arg("obftf").unwrap(), SamplerSpec::obftf());
        assert_eq!(sampler_label(&sampler_from_arg("prob-calibrated").unwrap()), "prob-calibrated");
        assert_eq!(sampler_from_arg(r#"{"kind":"mink","mode":"pooled-single"}"#).unwrap(), SamplerSpec::Mink { mode: MinkMode::PooledSingle });
        assert!(sampler_from_arg("nope").is_err());
    }
}
