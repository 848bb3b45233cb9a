//! Run configuration: flat `key=value` text files with CLI-style
//! overrides, validated into a typed struct.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, UgnError};
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    NodeClass,
    EdgeClass,
    LinkPred,
    Community,
    Translation,
    KgCompletion,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "node-class" => Ok(TaskKind::NodeClass),
            "edge-class" => Ok(TaskKind::EdgeClass),
            "link-pred" => Ok(TaskKind::LinkPred),
            "community" => Ok(TaskKind::Community),
            "translation" => Ok(TaskKind::Translation),
            "kg-completion" => Ok(TaskKind::KgCompletion),
            other => Err(UgnError::Config(format!(
                "task: unknown kind {other} (expected node-class, edge-class, \
                 link-pred, community, translation, or kg-completion)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::NodeClass => "node-class",
            TaskKind::EdgeClass => "edge-class",
            TaskKind::LinkPred => "link-pred",
            TaskKind::Community => "community",
            TaskKind::Translation => "translation",
            TaskKind::KgCompletion => "kg-completion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Identity matrix features (one-hot per node).
    OneHot,
    /// Synthesized supernode connection features.
    Supernode,
}

/// Validated run settings. All values have explicit defaults except
/// `task` and `seed`, which must be set.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub precision: Precision,
    pub graph: Option<String>,
    pub labels: Option<String>,
    pub pairs: Option<String>,
    pub triples: Option<String>,
    pub vocab: Option<String>,
    pub features: FeatureKind,
    pub supernodes: usize,
    pub rand_dim: usize,
    pub encoder_dims: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub classes: Option<usize>,
    pub labeled_per_class: usize,
    pub train_fraction: f64,
    pub edge_sample_cap: usize,
    pub negative_ratio: f64,
    pub unsup_loss: bool,
    pub mlp_head: bool,
    pub use_mtcm: bool,
    pub patience: Option<usize>,
    pub few_shot_cap: Option<usize>,
    raw: BTreeMap<String, String>,
}

fn parse_key<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|e| UgnError::Config(format!("{key}: {e}"))),
    }
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str, default: bool) -> Result<bool> {
    match map.get(key).map(String::as_str) {
        None => Ok(default),
        Some("true") | Some("1") => Ok(true),
        Some("false") | Some("0") => Ok(false),
        Some(other) => Err(UgnError::Config(format!(
            "{key}: expected true/false, got {other}"
        ))),
    }
}

fn parse_dims(map: &BTreeMap<String, String>, key: &str, default: &[usize]) -> Result<Vec<usize>> {
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) if v.trim().is_empty() => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|e| UgnError::Config(format!("{key}: {e}")))
            })
            .collect(),
    }
}

impl RunConfig {
    /// Parse a `key=value` file ('#' comments, blank lines ignored).
    pub fn parse_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| UgnError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: "expected key=value".into(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    /// Apply `key=value` override strings on top of a parsed map.
    pub fn apply_overrides(
        map: &mut BTreeMap<String, String>,
        overrides: &[String],
    ) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| {
                UgnError::Config(format!("override {o} is not key=value"))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        const KNOWN: &[&str] = &[
            "task", "seed", "epochs", "lr", "precision", "graph", "labels", "pairs",
            "triples", "vocab", "features", "supernodes", "rand_dim", "encoder_dims",
            "decoder_channels", "decoder_hidden", "head_hidden", "classes",
            "labeled_per_class", "train_fraction", "edge_sample_cap", "negative_ratio",
            "unsup_loss", "mlp_head", "no_intermediate_matrix", "use_mtcm", "patience",
            "few_shot_cap",
        ];
        for k in map.keys() {
            if !KNOWN.contains(&k.as_str()) {
                return Err(UgnError::Config(format!("unknown key {k}")));
            }
        }
        let task = TaskKind::parse(
            map.get("task")
                .ok_or_else(|| UgnError::Config("task: missing".into()))?,
        )?;
        let seed: u64 = parse_key(&map, "seed")?
            .ok_or_else(|| UgnError::Config("seed: missing (no entropy defaults)".into()))?;
        let lr: f64 = parse_key(&map, "lr")?.unwrap_or(0.005);
        if lr <= 0.0 {
            return Err(UgnError::Config(format!("lr: must be > 0, got {lr}")));
        }
        let epochs: usize = parse_key(&map, "epochs")?.unwrap_or(100);
        let precision = match map.get("precision").map(String::as_str) {
            None | Some("f64") => Precision::F64,
            Some("f32") => Precision::F32,
            Some(other) => {
                return Err(UgnError::Config(format!(
                    "precision: expected f64 or f32, got {other}"
                )))
            }
        };
        let features = match map.get("features").map(String::as_str) {
            None | Some("onehot") => FeatureKind::OneHot,
            Some("supernode") => FeatureKind::Supernode,
            Some(other) => {
                return Err(UgnError::Config(format!(
                    "features: expected onehot or supernode, got {other}"
                )))
            }
        };
        let train_fraction: f64 = parse_key(&map, "train_fraction")?.unwrap_or(0.8);
        if !(0.0 < train_fraction && train_fraction < 1.0) {
            return Err(UgnError::Config(format!(
                "train_fraction: must be in (0,1), got {train_fraction}"
            )));
        }
        let negative_ratio: f64 = parse_key(&map, "negative_ratio")?.unwrap_or(1.0);
        if negative_ratio <= 0.0 {
            return Err(UgnError::Config(format!(
                "negative_ratio: must be > 0, got {negative_ratio}"
            )));
        }
        // The "no intermediate matrix" ablation routes through the same
        // latent-product head as the MLP ablation.
        let mlp_head = parse_bool(&map, "mlp_head", false)?
            || parse_bool(&map, "no_intermediate_matrix", false)?;
        let config = RunConfig {
            task,
            seed,
            epochs,
            lr,
            precision,
            graph: map.get("graph").cloned(),
            labels: map.get("labels").cloned(),
            pairs: map.get("pairs").cloned(),
            triples: map.get("triples").cloned(),
            vocab: map.get("vocab").cloned(),
            features,
            supernodes: parse_key(&map, "supernodes")?.unwrap_or(10),
            rand_dim: parse_key(&map, "rand_dim")?.unwrap_or(10),
            encoder_dims: parse_dims(&map, "encoder_dims", &[32, 16])?,
            decoder_channels: parse_dims(&map, "decoder_channels", &[8, 16, 32])?,
            decoder_hidden: parse_dims(&map, "decoder_hidden", &[64, 32])?,
            head_hidden: parse_dims(&map, "head_hidden", &[])?,
            classes: parse_key(&map, "classes")?,
            labeled_per_class: parse_key(&map, "labeled_per_class")?.unwrap_or(1),
            train_fraction,
            edge_sample_cap: parse_key(&map, "edge_sample_cap")?.unwrap_or(14_250),
            negative_ratio,
            unsup_loss: parse_bool(&map, "unsup_loss", true)?,
            mlp_head,
            use_mtcm: parse_bool(&map, "use_mtcm", true)?,
            patience: parse_key(&map, "patience")?,
            few_shot_cap: parse_key(&map, "few_shot_cap")?,
            raw: map,
        };
        if config.encoder_dims.is_empty() {
            return Err(UgnError::Config("encoder_dims: needs at least one layer".into()));
        }
        match config.task {
            TaskKind::Translation => {
                if config.pairs.is_none() {
                    return Err(UgnError::Config("pairs: required for translation".into()));
                }
            }
            TaskKind::KgCompletion => {
                if config.triples.is_none() {
                    return Err(UgnError::Config(
                        "triples: required for kg-completion".into(),
                    ));
                }
            }
            _ => {
                if config.graph.is_none() {
                    return Err(UgnError::Config(format!(
                        "graph: required for {}",
                        config.task.as_str()
                    )));
                }
            }
        }
        if matches!(config.task, TaskKind::NodeClass | TaskKind::Community)
            && config.labels.is_none()
        {
            return Err(UgnError::Config(format!(
                "labels: required for {}",
                config.task.as_str()
            )));
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let mut map = Self::parse_file(path)?;
        Self::apply_overrides(&mut map, overrides)?;
        Self::from_map(map)
    }

    /// The explicit settings of this run as sorted `key=value` lines.
    /// Defaults that were never set are not echoed, so the text is stable
    /// across library versions that add new defaulted keys.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.raw {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// FNV-1a hash of the canonical text, for checkpoint compatibility.
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_map() -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("task".into(), "community".into());
        m.insert("seed".into(), "7".into());
        m.insert("graph".into(), "g.edges".into());
        m.insert("labels".into(), "g.labels".into());
        m
    }

    #[test]
    fn defaults_applied() {
        let c = RunConfig::from_map(base_map()).unwrap();
        assert_eq!(c.lr, 0.005);
        assert_eq!(c.edge_sample_cap, 14_250);
        assert_eq!(c.encoder_dims, vec![32, 16]);
        assert!(c.unsup_loss);
        assert!(!c.mlp_head);
    }

    #[test]
    fn missing_seed_names_field() {
        let mut m = base_map();
        m.remove("seed");
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut m = base_map();
        m.insert("learning_rate".into(), "0.1".into());
        assert!(RunConfig::from_map(m).is_err());
    }

    #[test]
    fn bad_lr_rejected() {
        let mut m = base_map();
        m.insert("lr".into(), "0".into());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("lr"), "{err}");
    }

    #[test]
    fn overrides_win() {
        let mut m = base_map();
        RunConfig::apply_overrides(&mut m, &["lr=0.1".into(), "epochs=3".into()]).unwrap();
        let c = RunConfig::from_map(m).unwrap();
        assert_eq!(c.lr, 0.1);
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn no_intermediate_matrix_implies_mlp_head() {
        let mut m = base_map();
        m.insert("no_intermediate_matrix".into(), "true".into());
        let c = RunConfig::from_map(m).unwrap();
        assert!(c.mlp_head);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_map(base_map()).unwrap();
        let mut m = base_map();
        m.insert("epochs".into(), "5".into());
        let b = RunConfig::from_map(m).unwrap();
        assert_ne!(a.hash(), b.hash());
        let a2 = RunConfig::from_map(base_map()).unwrap();
        assert_eq!(a.hash(), a2.hash());
    }

    #[test]
    fn translation_requires_pairs() {
        let mut m = BTreeMap::new();
        m.insert("task".into(), "translation".into());
        m.insert("seed".into(), "1".into());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("pairs"), "{err}");
    }
}
