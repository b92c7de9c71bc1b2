//! Flat `key = value` run configuration. A file is read first, then flags
//! override individual keys; the fully resolved set is written back out as
//! `config.resolved` so a run can be repeated from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lpca_core::data_io::{DefectKind, SynthSpec};
use lpca_core::model::config::format_stage_mask;
use lpca_core::model::{parse_stage_mask, ModelConfig, Preset};
use lpca_core::training::{AugmentSpec, TrainPlan};
use lpca_core::{Error, Result};
use lpca_tensor::layers::{PoolKind, UpsampleMode};

pub const RESOLVED_NAME: &str = "config.resolved";

/// Every key a configuration may set, in the order they are written.
pub const KEYS: &[&str] = &[
    "seed",
    "preset",
    "data",
    "eval_data",
    "checkpoint",
    "out",
    "data.normalization",
    "model.input",
    "model.depth_channels",
    "model.heads",
    "model.cam",
    "model.sfe_stages",
    "model.upsample",
    "model.pool",
    "model.bn_eps",
    "model.bn_momentum",
    "train.epochs",
    "train.batch",
    "train.lr",
    "train.lr_min",
    "train.weight_decay",
    "train.checkpoint_every",
    "train.eval_every",
    "augment",
    "augment.flip_prob",
    "augment.crop_prob",
    "augment.crop_scale",
    "augment.rotate_prob",
    "augment.rotation_degrees",
    "augment.gaussian_sigma",
    "augment.impulse_prob",
    "augment.seed",
    "synth.n",
    "synth.size",
    "synth.defects",
    "synth.kinds",
    "synth.scale",
    "synth.depth_amplitude",
    "synth.texture_amplitude",
    "synth.noise_sigma",
];

/// Raw key/value pairs; later inserts win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    map: BTreeMap<String, String>,
}

impl Overrides {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut out = Overrides::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{origin}:{}: expected key = value", lineno + 1)));
            };
            out.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown configuration key {key:?}")));
        }
        self.map.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn set_opt<V: ToString>(&mut self, key: &str, value: Option<V>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }
}

/// Everything a command needs, with preset defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub plan: TrainPlan,
    /// Kept even when augmentation is off so its values stay on record.
    pub augment: AugmentSpec,
    pub synth: SynthSpec,
    pub synth_count: usize,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {expected}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn switch(key: &str, v: &str, on: &str, off: &str) -> Result<bool> {
    match v {
        _ if v == on => Ok(true),
        _ if v == off => Ok(false),
        _ => Err(bad(key, v, &format!("{on} or {off}"))),
    }
}

/// `HxW`, e.g. `64x64`.
pub fn parse_hw(v: &str) -> Result<(usize, usize)> {
    let err = || bad("size", v, "HxW with positive integers");
    let (h, w) = v.split_once(['x', 'X']).ok_or_else(err)?;
    let (h, w) = (h.trim().parse().map_err(|_| err())?, w.trim().parse().map_err(|_| err())?);
    if h == 0 || w == 0 {
        return Err(err());
    }
    Ok((h, w))
}

/// `lo-hi` or a single number.
pub fn parse_range(key: &str, v: &str) -> Result<(usize, usize)> {
    let err = || bad(key, v, "N or LO-HI");
    match v.split_once('-') {
        Some((lo, hi)) => Ok((lo.trim().parse().map_err(|_| err())?, hi.trim().parse().map_err(|_| err())?)),
        None => {
            let n = v.parse().map_err(|_| err())?;
            Ok((n, n))
        }
    }
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let err = || bad(key, v, "LO,HI");
    let (a, b) = v.split_once(',').ok_or_else(err)?;
    Ok((a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?))
}

fn pool_name(p: PoolKind) -> &'static str {
    match p {
        PoolKind::Max => "max",
        PoolKind::Avg => "avg",
    }
}

fn path_or_none(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (v != "none" && !v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Preset defaults, then every key in `o`.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let preset: Preset = o.get("preset").unwrap_or("tiny").parse()?;
        let plan = match preset {
            Preset::Paper => TrainPlan::paper(),
            Preset::Tiny => TrainPlan::tiny(),
        };
        let mut c = RunConfig {
            seed: 0,
            model: ModelConfig::for_preset(preset),
            augment: plan.augment.clone().unwrap_or_default(),
            plan,
            synth: SynthSpec::default(),
            synth_count: 8,
            data: None,
            eval_data: None,
            checkpoint: None,
            out: None,
        };
        let mut augment_on = c.plan.augment.is_some();
        for (k, v) in &o.map {
            let v = v.as_str();
            match k.as_str() {
                "preset" => {}
                "seed" => c.seed = num(k, v)?,
                "data" => c.data = opt_path(v),
                "eval_data" => c.eval_data = opt_path(v),
                "checkpoint" => c.checkpoint = opt_path(v),
                "out" => c.out = opt_path(v),
                "data.normalization" => {
                    if v != "unit" {
                        return Err(bad(k, v, "unit (pixel values scaled to [0,1])"));
                    }
                }
                "model.input" => c.model.input_hw = parse_hw(v)?,
                "model.depth_channels" => {
                    let parts = v.split(',').map(|s| num::<usize>(k, s.trim())).collect::<Result<Vec<_>>>()?;
                    c.model.depth_channels = parts.try_into().map_err(|_| bad(k, v, "four comma-separated widths"))?;
                }
                "model.heads" => c.model.num_heads = num(k, v)?,
                "model.cam" => c.model.use_cam = switch(k, v, "enabled", "disabled")?,
                "model.sfe_stages" => c.model.sfe_stage_mask = parse_stage_mask(v)?,
                "model.upsample" => {
                    c.model.upsample_mode = v.parse::<UpsampleMode>().map_err(|e| Error::Config(e.to_string()))?
                }
                "model.pool" => {
                    c.model.pool_kind = match v {
                        "max" => PoolKind::Max,
                        "avg" => PoolKind::Avg,
                        _ => return Err(bad(k, v, "max or avg")),
                    }
                }
                "model.bn_eps" => c.model.bn_eps = num(k, v)?,
                "model.bn_momentum" => c.model.bn_momentum = num(k, v)?,
                "train.epochs" => c.plan.epochs = num(k, v)?,
                "train.batch" => c.plan.batch_size = num(k, v)?,
                "train.lr" => c.plan.lr_base = num(k, v)?,
                "train.lr_min" => c.plan.lr_min = num(k, v)?,
                "train.weight_decay" => c.plan.weight_decay = num(k, v)?,
                "train.checkpoint_every" => c.plan.checkpoint_every = num(k, v)?,
                "train.eval_every" => c.plan.eval_every = num(k, v)?,
                "augment" => augment_on = switch(k, v, "on", "off")?,
                "augment.flip_prob" => c.augment.flip_prob = num(k, v)?,
                "augment.crop_prob" => c.augment.crop_prob = num(k, v)?,
                "augment.crop_scale" => c.augment.crop_scale = pair(k, v)?,
                "augment.rotate_prob" => c.augment.rotate_prob = num(k, v)?,
                "augment.rotation_degrees" => c.augment.rotation_degrees = num(k, v)?,
                "augment.gaussian_sigma" => c.augment.gaussian_sigma = num(k, v)?,
                "augment.impulse_prob" => c.augment.impulse_prob = num(k, v)?,
                "augment.seed" => {}
                "synth.n" => c.synth_count = num(k, v)?,
                "synth.size" => (c.synth.height, c.synth.width) = parse_hw(v)?,
                "synth.defects" => c.synth.defect_count = parse_range(k, v)?,
                "synth.kinds" => {
                    c.synth.kinds = v.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<DefectKind>>>()?
                }
                "synth.scale" => c.synth.defect_scale = pair(k, v)?,
                "synth.depth_amplitude" => c.synth.depth_amplitude = num(k, v)?,
                "synth.texture_amplitude" => c.synth.texture_amplitude = num(k, v)?,
                "synth.noise_sigma" => c.synth.noise_sigma = num(k, v)?,
                other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
            }
        }
        c.plan.seed = c.seed;
        c.synth.seed = c.seed;
        c.augment.seed = match o.get("augment.seed") {
            Some(v) => num("augment.seed", v)?,
            None => c.seed,
        };
        c.augment.validate()?;
        c.plan.augment = augment_on.then(|| c.augment.clone());
        Ok(c)
    }

    /// All keys, one per line, in [`KEYS`] order. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &self.augment;
        let s = &self.synth;
        let p = &self.plan;
        let dc = m.depth_channels.map(|c| c.to_string()).join(",");
        let kinds: Vec<&str> = s.kinds.iter().map(|k| k.name()).collect();
        let values: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("preset", m.preset.to_string()),
            ("data", path_or_none(&self.data)),
            ("eval_data", path_or_none(&self.eval_data)),
            ("checkpoint", path_or_none(&self.checkpoint)),
            ("out", path_or_none(&self.out)),
            ("data.normalization", "unit".into()),
            ("model.input", format!("{}x{}", m.input_hw.0, m.input_hw.1)),
            ("model.depth_channels", dc),
            ("model.heads", m.num_heads.to_string()),
            ("model.cam", if m.use_cam { "enabled" } else { "disabled" }.into()),
            ("model.sfe_stages", format_stage_mask(m.sfe_stage_mask)),
            ("model.upsample", m.upsample_mode.to_string()),
            ("model.pool", pool_name(m.pool_kind).into()),
            ("model.bn_eps", m.bn_eps.to_string()),
            ("model.bn_momentum", m.bn_momentum.to_string()),
            ("train.epochs", p.epochs.to_string()),
            ("train.batch", p.batch_size.to_string()),
            ("train.lr", p.lr_base.to_string()),
            ("train.lr_min", p.lr_min.to_string()),
            ("train.weight_decay", p.weight_decay.to_string()),
            ("train.checkpoint_every", p.checkpoint_every.to_string()),
            ("train.eval_every", p.eval_every.to_string()),
            ("augment", if p.augment.is_some() { "on" } else { "off" }.into()),
            ("augment.flip_prob", a.flip_prob.to_string()),
            ("augment.crop_prob", a.crop_prob.to_string()),
            ("augment.crop_scale", format!("{},{}", a.crop_scale.0, a.crop_scale.1)),
            ("augment.rotate_prob", a.rotate_prob.to_string()),
            ("augment.rotation_degrees", a.rotation_degrees.to_string()),
            ("augment.gaussian_sigma", a.gaussian_sigma.to_string()),
            ("augment.impulse_prob", a.impulse_prob.to_string()),
            ("augment.seed", a.seed.to_string()),
            ("synth.n", self.synth_count.to_string()),
            ("synth.size", format!("{}x{}", s.height, s.width)),
            ("synth.defects", format!("{}-{}", s.defect_count.0, s.defect_count.1)),
            ("synth.kinds", kinds.join(",")),
            ("synth.scale", format!("{},{}", s.defect_scale.0, s.defect_scale.1)),
            ("synth.depth_amplitude", s.depth_amplitude.to_string()),
            ("synth.texture_amplitude", s.texture_amplitude.to_string()),
            ("synth.noise_sigma", s.noise_sigma.to_string()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_NAME);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut o = Overrides::default();
        o.set("preset", "tiny").unwrap();
        o.set("model.cam", "disabled").unwrap();
        o.set("train.lr", "0.003").unwrap();
        o.set("augment", "off").unwrap();
        o.set("synth.defects", "0-2").unwrap();
        o.set("seed", "11").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert!(!c.model.use_cam);
        assert_eq!(c.plan.augment, None);
        assert_eq!(c.augment.seed, 11);
        let again = RunConfig::resolve(&Overrides::parse(&c.to_text(), "resolved").unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn every_key_is_written() {
        let text = RunConfig::resolve(&Overrides::default()).unwrap().to_text();
        let written: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(written, KEYS);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Overrides::parse("nonsense = 1", "t").is_err());
        assert!(Overrides::parse("train.lr 3", "t").is_err());
        let o = Overrides::parse("train.lr = fast", "t").unwrap();
        assert!(RunConfig::resolve(&o).is_err());
        let o = Overrides::parse("model.cam = maybe", "t").unwrap();
        assert!(RunConfig::resolve(&o).is_err());
        assert!(parse_hw("64x0").is_err());
        assert_eq!(parse_hw("32x96").unwrap(), (32, 96));
        assert_eq!(parse_range("d", "2").unwrap(), (2, 2));
    }

    #[test]
    fn comments_and_blank_lines() {
        let o = Overrides::parse("# run\n\nseed = 4  # trailing\npreset = paper\n", "t").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.model, ModelConfig::paper());
        assert_eq!(c.plan.epochs, 100);
    }
}
