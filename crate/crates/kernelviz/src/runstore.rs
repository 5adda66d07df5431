//! Run directories: a JSON manifest plus one tensor file per factor.
//!
//! ```text
//! <root>/<run_id>/
//!     manifest.json
//!     video.tensor     stage-1 video, THWC
//!     static.tensor    static factor, HWC
//!     deform.tensor    deformation sequence, THWV
//!     *.png, animation.gif
//! ```
//!
//! A run is assembled in a hidden staging directory and renamed into place
//! only after the manifest is complete, so a readable manifest always has
//! every file it lists.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kernelviz_core::flow::HUE_CONVENTION;
use kernelviz_core::stage1::Stage1Config;
use kernelviz_core::stage2::{self, LossComponents, Stage2Config};
use kernelviz_core::{DeformationSequence, StaticFactor, VideoTensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::TensorContainer;
use crate::error::{Error, IoContext, Result};

pub const SCHEMA_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAX_TRACE_POINTS: usize = 2000;
const VIDEO_FILE: &str = "video.tensor";
const STATIC_FILE: &str = "static.tensor";
const DEFORM_FILE: &str = "deform.tensor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterRecord {
    pub name: String,
    pub checkpoint: Option<String>,
    /// Hex SHA-256 of the adapter's architecture and weights.
    pub weights_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub stage1: u64,
    pub stage2: u64,
    pub rng: String,
}

/// A loss history sampled at `steps`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

impl TraceRecord {
    /// Keeps at most `max` evenly spaced points, always including the first
    /// and the last.
    pub fn downsample(values: &[f64], max: usize) -> Self {
        let idx: Vec<usize> = if values.len() <= max || max < 2 {
            (0..values.len()).collect()
        } else {
            (0..max).map(|i| i * (values.len() - 1) / (max - 1)).collect()
        };
        TraceRecord {
            values: idx.iter().map(|&i| values[i]).collect(),
            steps: idx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalLoss {
    pub total: f64,
    pub components: LossComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub convention: String,
    /// `"per-frame-max"` or `"fixed"`.
    pub norm: String,
    /// Magnitude mapped to full brightness in each flow image.
    pub max_magnitude: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u64,
    pub run_id: String,
    /// RFC 3339 creation time.
    pub created_at: String,
    pub toolkit_version: String,
    pub adapter: AdapterRecord,
    pub kernel: String,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub seeds: Seeds,
    pub stage1_trace: TraceRecord,
    pub stage2_trace: TraceRecord,
    pub final_loss: FinalLoss,
    /// Tensor name to path relative to the run directory.
    pub tensors: BTreeMap<String, String>,
    /// Rendered files relative to the run directory.
    pub artifacts: Vec<String>,
    pub flow: Option<FlowRecord>,
}

impl RunManifest {
    /// A deterministic identifier derived from everything that determines
    /// the run's numbers: adapter weights, kernel and both configs.
    pub fn derive_run_id(adapter: &AdapterRecord, kernel: &str, s1: &Stage1Config, s2: &Stage2Config) -> String {
        let mut h = Sha256::new();
        h.update(adapter.name.as_bytes());
        h.update([0]);
        h.update(adapter.weights_digest.as_bytes());
        h.update([0]);
        h.update(kernel.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(s1).expect("config serializes"));
        h.update(serde_json::to_vec(s2).expect("config serializes"));
        let digest = h.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        let slug: String = kernel
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        format!("{slug}-s{}-{hex}", s1.seed)
    }

    pub fn default_flow_record(max_magnitude: Vec<f32>) -> FlowRecord {
        FlowRecord {
            convention: HUE_CONVENTION.into(),
            norm: "per-frame-max".into(),
            max_magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTensors {
    pub video: VideoTensor,
    pub static_factor: StaticFactor,
    pub deform: DeformationSequence,
}

/// A run directory under construction.
pub struct StagedRun {
    final_dir: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl StagedRun {
    pub fn begin(root: &Path, run_id: &str) -> Result<Self> {
        let final_dir = root.join(run_id);
        if final_dir.exists() {
            return Err(Error::AlreadyExists(final_dir));
        }
        fs::create_dir_all(root).at(root)?;
        let staging = root.join(format!(".{run_id}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).at(&staging)?;
        }
        fs::create_dir(&staging).at(&staging)?;
        Ok(StagedRun {
            final_dir,
            staging,
            committed: false,
        })
    }

    /// Directory that receives rendered files before commit.
    pub fn dir(&self) -> &Path {
        &self.staging
    }

    /// Writes tensors and the manifest, then moves the run into place.
    pub fn commit(mut self, manifest: &mut RunManifest, tensors: &RunTensors) -> Result<PathBuf> {
        let entries = [
            ("video", VIDEO_FILE, TensorContainer::from_video(&tensors.video)),
            ("static", STATIC_FILE, TensorContainer::from_static(&tensors.static_factor)),
            ("deform", DEFORM_FILE, TensorContainer::from_deform(&tensors.deform)),
        ];
        manifest.tensors.clear();
        for (name, file, tensor) in entries {
            tensor.save(&self.staging.join(file))?;
            manifest.tensors.insert(name.into(), file.into());
        }
        for a in &manifest.artifacts {
            let p = self.staging.join(a);
            if !p.is_file() {
                return Err(Error::integrity(&p, "listed artifact was not written"));
            }
        }
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        let tmp = self.staging.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, text).at(&tmp)?;
        let dest = self.staging.join(MANIFEST_FILE);
        fs::rename(&tmp, &dest).at(&dest)?;
        if self.final_dir.exists() {
            return Err(Error::AlreadyExists(self.final_dir.clone()));
        }
        fs::rename(&self.staging, &self.final_dir).at(&self.final_dir)?;
        self.committed = true;
        Ok(self.final_dir.clone())
    }
}

impl Drop for StagedRun {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Saves a run without rendered files and returns its directory.
pub fn save_run(manifest: &mut RunManifest, tensors: &RunTensors, root: &Path) -> Result<PathBuf> {
    StagedRun::begin(root, &manifest.run_id)?.commit(manifest, tensors)
}

/// Relative tolerance for the stored-versus-recomputed final loss check.
pub const LOSS_RTOL: f64 = 1e-5;

pub fn load_run(dir: &Path) -> Result<(RunManifest, RunTensors)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::integrity(&path, e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::integrity(&path, "missing schema_version"))?;
    if version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            path,
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: RunManifest = serde_json::from_value(raw).map_err(|e| Error::integrity(&path, e.to_string()))?;
    for rel in manifest.tensors.values().chain(&manifest.artifacts) {
        let p = dir.join(rel);
        if !p.is_file() {
            return Err(Error::integrity(&p, "referenced by the manifest but missing"));
        }
    }
    let tensor = |name: &str| -> Result<(PathBuf, TensorContainer)> {
        let rel = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::integrity(&path, format!("no '{name}' tensor listed")))?;
        let p = dir.join(rel);
        let t = TensorContainer::load(&p)?;
        Ok((p, t))
    };
    let (p, t) = tensor("video")?;
    let video = t.into_video(&p)?;
    let (p, t) = tensor("static")?;
    let static_factor = t.into_static(&p)?;
    let (p, t) = tensor("deform")?;
    let deform = t.into_deform(&p)?;
    let (recomputed, _) = stage2::stage2_loss(&video, &static_factor, &deform, &manifest.stage2.weights())
        .map_err(|e| Error::integrity(&path, e.to_string()))?;
    let stored = manifest.final_loss.total;
    if (recomputed - stored).abs() > LOSS_RTOL * stored.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::integrity(
            &path,
            format!("stored final loss {stored} but factors give {recomputed}"),
        ));
    }
    Ok((
        manifest,
        RunTensors {
            video,
            static_factor,
            deform,
        },
    ))
}
