//! Content-addressed artifact layout.
//!
//! Every artifact name carries a hash of everything that determines its
//! content, plus the run seed. A stage whose output already exists is
//! skipped, so an interrupted pipeline resumes where it stopped and a changed
//! configuration writes new files next to the old ones.
//!
//! ```text
//! <root>/data-<hash>-s<seed>/{train.jsonl,test.jsonl,vocab.json}
//! <root>/models/<system><index>-<hash>-s<seed>.ckpt
//! <root>/outputs/<setting>-<hash>-s<seed>.{raw,post}.jsonl
//! <root>/reports/<setting>-<hash>-s<seed>.json
//! <root>/results-<hash>-s<seed>.{txt,json}
//! <root>/sweep-<hash>-s<seed>.csv
//! ```

use std::path::{Path, PathBuf};

use lexcon_core::experiment::{ExperimentConfig, Setting, SystemKind};
use serde::Serialize;
use serde_json::json;

use crate::config::digest;
use crate::error::{CliResult, Context};

pub struct Store {
    root: PathBuf,
    cfg: ExperimentConfig,
    data_key: String,
}

/// File name of a setting, as used in artifact paths.
pub fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::Base => "base",
        Setting::BaseLcd => "base_lcd",
        Setting::Leca => "leca",
        Setting::LecaLcd => "leca_lcd",
        Setting::LecaLcdEnsemble => "leca_lcd_ensemble",
    }
}

impl Store {
    pub fn new(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Self {
        let data_key = digest(&json!({
            "version": cfg.version,
            "data": cfg.data_config(),
            "sampler": cfg.sampler,
        }));
        Self { root: root.into(), cfg: cfg.clone(), data_key }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn tag(&self, key: &str) -> String {
        format!("{key}-s{}", self.cfg.seed)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(format!("config-{}.toml", self.tag(&digest(&self.cfg))))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join(format!("data-{}", self.tag(&self.data_key)))
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir().join("train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.data_dir().join("test.jsonl")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.data_dir().join("vocab.json")
    }

    fn model_key(&self, kind: SystemKind, index: usize) -> String {
        digest(&json!({
            "data": self.data_key,
            "model": self.cfg.model,
            "train": self.cfg.train_config(kind, index),
            "init": self.cfg.init_seed(kind, index),
            "two_phase": self.cfg.two_phase,
        }))
    }

    pub fn model_path(&self, kind: SystemKind, index: usize) -> PathBuf {
        let name = format!("{}{index}-{}.ckpt", kind.as_str(), self.tag(&self.model_key(kind, index)));
        self.root.join("models").join(name)
    }

    /// Members a setting decodes with: the base model, the first augmented
    /// model, or the whole augmented ensemble.
    pub fn members(&self, s: Setting) -> Vec<(SystemKind, usize)> {
        match s {
            Setting::Base | Setting::BaseLcd => vec![(SystemKind::Base, 0)],
            Setting::Leca | Setting::LecaLcd => vec![(SystemKind::Leca, 0)],
            Setting::LecaLcdEnsemble => (0..self.cfg.ensemble_size).map(|i| (SystemKind::Leca, i)).collect(),
        }
    }

    /// Every checkpoint the grid needs.
    pub fn all_members(&self) -> Vec<(SystemKind, usize)> {
        let mut all = vec![(SystemKind::Base, 0)];
        all.extend((0..self.cfg.ensemble_size).map(|i| (SystemKind::Leca, i)));
        all
    }

    fn setting_key(&self, s: Setting) -> String {
        let models: Vec<String> = self.members(s).into_iter().map(|(k, i)| self.model_key(k, i)).collect();
        digest(&json!({
            "data": self.data_key,
            "models": models,
            "decode": self.cfg.decode.for_setting(s),
            "space": self.cfg.ensemble_space,
            "sampler": self.cfg.sampler,
            "setting": setting_name(s),
        }))
    }

    fn setting_file(&self, dir: &str, s: Setting, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{}-{}.{ext}", setting_name(s), self.tag(&self.setting_key(s))))
    }

    pub fn raw_path(&self, s: Setting) -> PathBuf {
        self.setting_file("outputs", s, "raw.jsonl")
    }

    pub fn post_path(&self, s: Setting) -> PathBuf {
        self.setting_file("outputs", s, "post.jsonl")
    }

    pub fn report_path(&self, s: Setting) -> PathBuf {
        self.setting_file("reports", s, "json")
    }

    fn results_key(&self) -> String {
        let keys: Vec<String> = Setting::ALL.iter().map(|&s| self.setting_key(s)).collect();
        digest(&keys)
    }

    pub fn results_path(&self, ext: &str) -> PathBuf {
        self.root.join(format!("results-{}.{ext}", self.tag(&self.results_key())))
    }

    pub fn sweep_path(&self, beams: &[usize]) -> PathBuf {
        let key = digest(&json!({
            "data": self.data_key,
            "models": [self.model_key(SystemKind::Base, 0), self.model_key(SystemKind::Leca, 0)],
            "decode": self.cfg.decode,
            "sampler": self.cfg.sampler,
            "beams": beams,
        }));
        self.root.join(format!("sweep-{}.csv", self.tag(&key)))
    }
}

/// Write through a temporary file and rename, so a partial write never
/// looks like a finished artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn jsonl_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize to JSON");
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_change_with_their_inputs() {
        let a = ExperimentConfig::default();
        let store = Store::new("w", &a);
        let mut b = a.clone();
        b.decode.lcd_beam = 3;
        let other = Store::new("w", &b);
        assert_eq!(store.data_dir(), other.data_dir());
        assert_eq!(store.model_path(SystemKind::Leca, 0), other.model_path(SystemKind::Leca, 0));
        assert_eq!(store.raw_path(Setting::Leca), other.raw_path(Setting::Leca));
        assert_ne!(store.raw_path(Setting::LecaLcd), other.raw_path(Setting::LecaLcd));

        b.train.steps += 1;
        let retrained = Store::new("w", &b);
        assert_eq!(store.data_dir(), retrained.data_dir());
        assert_ne!(store.model_path(SystemKind::Base, 0), retrained.model_path(SystemKind::Base, 0));

        let reseeded = Store::new("w", &ExperimentConfig { seed: 9, ..a });
        assert_ne!(store.data_dir(), reseeded.data_dir());
        assert!(reseeded.data_dir().to_string_lossy().ends_with("-s9"));
    }

    #[test]
    fn ensemble_members() {
        let store = Store::new("w", &ExperimentConfig { ensemble_size: 3, ..ExperimentConfig::default() });
        assert_eq!(store.members(Setting::LecaLcdEnsemble).len(), 3);
        assert_eq!(store.all_members().len(), 4);
    }

    #[test]
    fn atomic_write_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_atomic(&path, b"x").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"x");
        assert!(!dir.path().join("a/b/c.txt.tmp").exists());
    }
}
