//! On-disk synthetic datasets.
//!
//! ```text
//! index.json
//! observed/<id>/ms.pfr   MS as the sensor delivers it (1/r)
//! observed/<id>/pan.pfr
//! oracle/<id>/hrms.pfr   ground truth, read only by evaluation
//! oracle/<id>/lrpan.pfr  PAN through the hidden operator
//! oracle/hidden.json     the hidden operator itself
//! prior/<id>/ph.pfr      P^h maps, written by `train-hdlm`
//! ```
//! Training code only ever opens `observed/` (and `prior/`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::DatasetSpec;
use crate::error::{Error, Result};
use crate::numerics::{pfr, Raster};
use crate::scene::generate_set;

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Index {
    pub version: u32,
    pub seed: u64,
    pub r: usize,
    pub bands: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One observed MS/PAN pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub id: String,
    pub ms: Raster,
    pub pan: Raster,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: Index,
}

fn band_names(n: usize) -> Vec<String> {
    (1..=n).map(|b| format!("b{b}")).collect()
}

/// Generates `spec.train + spec.test` scenes and writes them under `root`.
pub fn synth_dataset(spec: &DatasetSpec, seed: u64, root: &Path) -> Result<Dataset> {
    let scenes = generate_set(&spec.scene, spec.train + spec.test, seed)?;
    let bands = band_names(spec.scene.bands);
    let id = |i: usize| {
        if i < spec.train {
            format!("train_{i:03}")
        } else {
            format!("test_{:03}", i - spec.train)
        }
    };
    std::fs::create_dir_all(root)?;
    for (i, s) in scenes.iter().enumerate() {
        let id = id(i);
        pfr::write(&root.join("observed").join(&id).join("ms.pfr"), &s.lrms, &bands)?;
        pfr::write(&root.join("observed").join(&id).join("pan.pfr"), &s.pan, &["pan".into()])?;
        pfr::write(&root.join("oracle").join(&id).join("hrms.pfr"), &s.hrms, &bands)?;
        pfr::write(&root.join("oracle").join(&id).join("lrpan.pfr"), &s.lrpan, &["pan".into()])?;
    }
    std::fs::create_dir_all(root.join("oracle"))?;
    std::fs::write(
        root.join("oracle").join("hidden.json"),
        serde_json::to_string_pretty(&spec.scene.hidden)?,
    )?;
    let index = Index {
        version: INDEX_VERSION,
        seed,
        r: spec.scene.hidden.r,
        bands,
        train: (0..spec.train).map(id).collect(),
        test: (spec.train..spec.train + spec.test).map(id).collect(),
    };
    std::fs::write(root.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(Dataset {
        root: root.to_path_buf(),
        index,
    })
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("index.json");
        if !path.exists() {
            return Err(Error::MissingUpstream { path, command: "synth" });
        }
        let index: Index = serde_json::from_slice(&std::fs::read(&path)?).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if index.version != INDEX_VERSION {
            return Err(Error::Format {
                path,
                reason: format!("index version {} (expected {INDEX_VERSION})", index.version),
            });
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.index.train,
            Split::Test => &self.index.test,
        }
    }

    pub fn observed(&self, split: Split) -> Result<Vec<Observed>> {
        self.ids(split)
            .iter()
            .map(|id| {
                let dir = self.root.join("observed").join(id);
                Ok(Observed {
                    id: id.clone(),
                    ms: pfr::read_raster(&dir.join("ms.pfr"))?,
                    pan: pfr::read_raster(&dir.join("pan.pfr"))?,
                })
            })
            .collect()
    }

    pub fn prior_path(&self, id: &str) -> PathBuf {
        self.root.join("prior").join(id).join("ph.pfr")
    }

    pub fn write_prior(&self, id: &str, ph: &Raster) -> Result<()> {
        pfr::write(&self.prior_path(id), ph, &["ph".into()])
    }

    pub fn read_prior(&self, id: &str) -> Result<Raster> {
        let path = self.prior_path(id);
        if !path.exists() {
            return Err(Error::MissingUpstream { path, command: "train-hdlm" });
        }
        pfr::read_raster(&path)
    }

    /// Ground-truth HRMS; only evaluation may call this.
    pub fn oracle_hrms(&self, id: &str) -> Result<Raster> {
        pfr::read_raster(&self.root.join("oracle").join(id).join("hrms.pfr"))
    }

    pub fn has_oracle(&self) -> bool {
        self.root.join("oracle").is_dir()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{mix_pan, SceneSpec};

    fn spec(train: usize, test: usize) -> DatasetSpec {
        DatasetSpec {
            train,
            test,
            scene: SceneSpec {
                height: 16,
                width: 16,
                texture: 0.0,
                ..Default::default()
            },
        }
    }

    #[test]
    fn empty_dataset_writes_an_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(&spec(0, 0), 1, dir.path()).unwrap();
        assert!(ds.index.train.is_empty() && ds.index.test.is_empty());
        assert!(Dataset::open(dir.path()).unwrap().observed(Split::Train).unwrap().is_empty());
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_dataset(&spec(2, 1), 4, a.path()).unwrap();
        synth_dataset(&spec(2, 1), 4, b.path()).unwrap();
        for rel in ["index.json", "observed/train_001/pan.pfr", "oracle/test_000/hrms.pfr"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn stored_pan_is_the_spectral_mix_of_stored_hrms() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(1, 1);
        let ds = synth_dataset(&s, 2, dir.path()).unwrap();
        for o in ds.observed(Split::Test).unwrap() {
            let hrms = ds.oracle_hrms(&o.id).unwrap();
            let remix = mix_pan(&hrms, &s.scene.pan_weights);
            assert!(o.pan.max_abs_diff(&remix).unwrap() < 1e-6);
        }
    }

    #[test]
    fn missing_artifacts_name_their_command() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::open(dir.path()).unwrap_err();
        assert!(err.to_string().contains("padsharp synth"), "{err}");
        let ds = synth_dataset(&spec(1, 0), 2, dir.path()).unwrap();
        let err = ds.read_prior("train_000").unwrap_err();
        assert!(err.to_string().contains("padsharp train-hdlm"), "{err}");
    }
}
