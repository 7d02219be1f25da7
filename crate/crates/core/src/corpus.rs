//! Paired ground-truth/degraded scenes in memory, and conversion of frames,
//! guidance and camera geometry into model tensors.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, Array6};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, read_json, scene_dir_name, write_json, SequenceMeta};
use crate::degrade::{build_triplets, corrupt_sequence, CorruptionManifest, CorruptionSpec, Provenance, TrainingTriplet};
use crate::error::{Error, Result};
use crate::objectives::{geometry_teacher, teacher_projection, TeacherFeatures, TrainBatch};
use crate::rng;
use crate::stdt::{HistoryInput, ModelConfig, GEOMETRY_DIM, GUIDANCE_CHANNELS};
use crate::synthworld::{
    ego_trajectory, generate_scene, render_views, CameraRig, MultiViewSequence, RigPreset, Scene, SceneConfig, SEM_GROUND,
    SEM_SKY,
};

pub const DEGRADED_DIR: &str = "degraded";
pub const CORRUPTION_MANIFEST: &str = "corruption_manifest.json";
pub const TRIPLET_INDEX: &str = "triplets.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub scenes: usize,
    /// Index of the first scene; scene `i` is generated from seed `seed + i`.
    pub first_scene: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub rig: RigPreset,
    pub height: usize,
    pub width: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            scenes: 16,
            first_scene: 0,
            seed: 0,
            scene: SceneConfig::default(),
            rig: RigPreset::Frontal3,
            height: 64,
            width: 64,
        }
    }
}

impl CorpusConfig {
    pub fn scene_seed(&self, index: usize) -> u64 {
        rng::child_seed(self.seed, &format!("scene/{index}"))
    }
}

/// Render the ground-truth sequence of scene `index`.
pub fn render_scene(cfg: &CorpusConfig, index: usize) -> Result<(Scene, MultiViewSequence)> {
    let scene = generate_scene(&cfg.scene, cfg.scene_seed(index))?;
    let rig = CameraRig::preset(cfg.rig, cfg.height, cfg.width, ego_trajectory(&cfg.scene));
    let seq = render_views(&scene, &rig, (cfg.height, cfg.width))?;
    Ok((scene, seq))
}

/// One scene with its ground truth and degraded render.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    pub gt: MultiViewSequence,
    pub degraded: MultiViewSequence,
    pub far_plane: f64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub scenes: Vec<SceneRecord>,
}

impl Corpus {
    /// Render and corrupt `cfg.scenes` scenes in memory.
    pub fn generate(cfg: &CorpusConfig, spec: &CorruptionSpec) -> Result<Self> {
        let scenes = (cfg.first_scene..cfg.first_scene + cfg.scenes)
            .map(|i| {
                let (scene, gt) = render_scene(cfg, i)?;
                let id = scene_dir_name(i);
                let (degraded, _) = corrupt_sequence(&scene, &gt, spec, spec.scene_seed(&id))?;
                Ok(SceneRecord {
                    id,
                    far_plane: cfg.scene.far_plane,
                    scene,
                    gt,
                    degraded,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scenes })
    }

    /// Load every `scene_*` directory under `root` that has a degraded
    /// render. Scenes are regenerated from their recorded config and seed.
    pub fn load(root: &Path) -> Result<Self> {
        let mut scenes = Vec::new();
        for dir in dataset::list_scenes(root)? {
            let (gt, meta) = dataset::read_sequence(&dir)?;
            let (degraded, _) = dataset::read_sequence(&dir.join(DEGRADED_DIR))?;
            let scene = generate_scene(&meta.scene_config, meta.seed)?;
            scenes.push(SceneRecord {
                id: meta.scene_id.clone(),
                far_plane: meta.scene_config.far_plane,
                scene,
                gt,
                degraded,
            });
        }
        if scenes.is_empty() {
            return Err(Error::MissingInput(root.join("scene_*")));
        }
        Ok(Self { scenes })
    }

    pub fn triplets(&self, h: usize) -> Result<Vec<TrainingTriplet>> {
        let mut out = Vec::new();
        for s in &self.scenes {
            out.extend(build_triplets(&s.id, &s.gt, &s.degraded, h)?);
        }
        Ok(out)
    }

    pub fn scene(&self, id: &str) -> Result<&SceneRecord> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("scene {id} not in corpus")))
    }
}

/// Write a ground-truth scene directory.
pub fn write_gt_scene(root: &Path, cfg: &CorpusConfig, index: usize) -> Result<PathBuf> {
    let (_, seq) = render_scene(cfg, index)?;
    let id = scene_dir_name(index);
    let dir = root.join(&id);
    let meta = SequenceMeta::for_sequence(&seq, &id, cfg.scene_seed(index), &cfg.scene);
    dataset::write_sequence(&dir, &seq, &meta)?;
    Ok(dir)
}

/// Corrupt the ground truth stored in `scene_dir`, writing `degraded/` and
/// its corruption manifest.
pub fn write_degraded_scene(scene_dir: &Path, spec: &CorruptionSpec) -> Result<CorruptionManifest> {
    let (gt, meta) = dataset::read_sequence(scene_dir)?;
    let scene = generate_scene(&meta.scene_config, meta.seed)?;
    // Corrupt the exact render rather than the quantised copy so the
    // manifest replays bit-exactly.
    let fresh = render_views(&scene, &meta.rig, (meta.height, meta.width))?;
    if fresh.timesteps() != gt.timesteps() || fresh.num_views() != gt.num_views() {
        return Err(Error::Schema {
            path: scene_dir.join("meta.json"),
            msg: "stored frames do not match the recorded scene".into(),
        });
    }
    let (dg, manifest) = corrupt_sequence(&scene, &fresh, spec, spec.scene_seed(&meta.scene_id))?;
    let out = scene_dir.join(DEGRADED_DIR);
    let mut dmeta = meta.clone();
    dmeta.provenance = serde_json::json!({ "corruption_manifest": CORRUPTION_MANIFEST });
    dataset::write_sequence(&out, &dg, &dmeta)?;
    write_json(&out.join(CORRUPTION_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// One line of the triplet index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    #[serde(flatten)]
    pub triplet: TrainingTriplet,
    /// Relative path of the current ground-truth frame set.
    pub current_gt: String,
    pub current_corrupted: String,
    pub history_refs: Vec<String>,
    pub corruption_manifest: String,
}

pub fn triplet_record(t: &TrainingTriplet) -> TripletRecord {
    let sid = &t.scene_id;
    let frames = |sub: &str, tt: usize| format!("{sid}/{sub}rgb/t{tt:03}_c*.png");
    TripletRecord {
        current_gt: frames("", t.t),
        current_corrupted: frames("degraded/", t.t),
        history_refs: t
            .history
            .iter()
            .map(|h| match h.provenance {
                Provenance::Gt => frames("", h.t),
                Provenance::Dg => frames("degraded/", h.t),
            })
            .collect(),
        corruption_manifest: format!("{sid}/{DEGRADED_DIR}/{CORRUPTION_MANIFEST}"),
        triplet: t.clone(),
    }
}

pub fn write_triplet_index(path: &Path, triplets: &[TrainingTriplet]) -> Result<()> {
    let mut text = String::new();
    for t in triplets {
        text.push_str(&serde_json::to_string(&triplet_record(t)).map_err(|e| Error::json(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_triplet_index(path: &Path) -> Result<Vec<TrainingTriplet>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<TripletRecord>(l)
                .map(|r| r.triplet)
                .map_err(|e| Error::json(path, e))
        })
        .collect()
}

/// `[0, 1]` image to the model range `[−1, 1]`.
pub fn to_model_range(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| 2.0 * v - 1.0)
}

pub fn from_model_range(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Guidance channels: depth over the far plane (sky = 1) and the semantic
/// one-hot for sky, ground and object.
pub fn guidance_image(depth: &Array2<f32>, sem: &Array2<u8>, far_plane: f64) -> Array3<f32> {
    let (h, w) = depth.dim();
    let far = far_plane as f32;
    Array3::from_shape_fn((h, w, GUIDANCE_CHANNELS), |(i, j, c)| match c {
        0 => {
            let d = depth[[i, j]];
            if d.is_finite() {
                (d / far).min(1.0)
            } else {
                1.0
            }
        }
        1 => (sem[[i, j]] == SEM_SKY) as u8 as f32,
        2 => (sem[[i, j]] == SEM_GROUND) as u8 as f32,
        _ => (sem[[i, j]] > SEM_GROUND) as u8 as f32,
    })
}

pub fn geometry_vectors(rig: &CameraRig, height: usize, width: usize) -> Array2<f32> {
    let k = rig.num_cameras();
    let mut out = Array2::zeros((k, GEOMETRY_DIM));
    for c in 0..k {
        for (j, v) in rig.geometry_vector(c, height, width).iter().enumerate() {
            out[[c, j]] = *v as f32;
        }
    }
    out
}

/// Builds model batches from triplets, caching teacher features.
pub struct Assembler<'a> {
    pub corpus: &'a Corpus,
    pub model: ModelConfig,
    /// `[scene][t][k]`
    teacher: Vec<Vec<Vec<TeacherFeatures>>>,
}

impl<'a> Assembler<'a> {
    pub fn new(corpus: &'a Corpus, model: &ModelConfig, teacher_seed: u64) -> Self {
        let proj = teacher_projection(teacher_seed, model.geo_channels);
        let teacher = corpus
            .scenes
            .iter()
            .map(|s| {
                (0..s.gt.timesteps())
                    .map(|t| {
                        (0..s.gt.num_views())
                            .map(|k| geometry_teacher(&s.gt.depth[t][k], &s.gt.rig, k, model.patch, s.far_plane, &proj))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            corpus,
            model: model.clone(),
            teacher,
        }
    }

    /// Assemble a batch. The current window is `[t, t + t_cur)`; history
    /// slots take frames from the ground truth or the degraded render by
    /// provenance, while all guidance comes from the degraded render.
    pub fn batch(&self, triplets: &[&TrainingTriplet]) -> Result<TrainBatch<f32>> {
        let first = self.corpus.scene(&triplets[0].scene_id)?;
        let (v, h, w) = (first.gt.num_views(), first.gt.height, first.gt.width);
        let (tc, hl) = (self.model.t_cur, self.model.history);
        let b = triplets.len();
        let n = (h / self.model.patch) * (w / self.model.patch);
        let mut x0 = Array6::zeros((b, v, tc, h, w, 3));
        let mut corrupted = Array6::zeros((b, v, tc, h, w, 3));
        let mut guidance = Array6::zeros((b, v, tc, h, w, GUIDANCE_CHANNELS));
        let mut hist = Array6::zeros((b, v, hl, h, w, 3));
        let mut hist_g = Array6::zeros((b, v, hl, h, w, GUIDANCE_CHANNELS));
        let mut geometry = Array3::zeros((b, v, GEOMETRY_DIM));
        let mut teacher = Array2::zeros((b * v * tc * n, self.model.geo_channels));
        let mut mask = vec![false; b * v * tc * n];
        for (bi, tr) in triplets.iter().enumerate() {
            let si = self
                .corpus
                .scenes
                .iter()
                .position(|s| s.id == tr.scene_id)
                .ok_or_else(|| Error::config(format!("scene {} not in corpus", tr.scene_id)))?;
            let s = &self.corpus.scenes[si];
            if (s.gt.num_views(), s.gt.height, s.gt.width) != (v, h, w) {
                return Err(Error::shape("batch scene dims", format!("{:?}", (v, h, w)), format!("{:?}", (s.gt.num_views(), s.gt.height, s.gt.width))));
            }
            if tr.t + tc > s.gt.timesteps() || tr.history.len() != hl {
                return Err(Error::config(format!("triplet at t={} does not fit the model window", tr.t)));
            }
            geometry.slice_mut(s![bi, .., ..]).assign(&geometry_vectors(&s.gt.rig, h, w));
            for k in 0..v {
                for ti in 0..tc {
                    let t = tr.t + ti;
                    x0.slice_mut(s![bi, k, ti, .., .., ..]).assign(&to_model_range(&s.gt.frames[t][k]));
                    corrupted.slice_mut(s![bi, k, ti, .., .., ..]).assign(&to_model_range(&s.degraded.frames[t][k]));
                    guidance
                        .slice_mut(s![bi, k, ti, .., .., ..])
                        .assign(&guidance_image(&s.degraded.depth[t][k], &s.degraded.semantic[t][k], s.far_plane));
                    let tf = &self.teacher[si][t][k];
                    let base = ((bi * v + k) * tc + ti) * n;
                    teacher.slice_mut(s![base..base + n, ..]).assign(&tf.features);
                    mask[base..base + n].copy_from_slice(&tf.mask);
                }
                for (slot, hs) in tr.history.iter().enumerate() {
                    let src = match hs.provenance {
                        Provenance::Gt => &s.gt,
                        Provenance::Dg => &s.degraded,
                    };
                    hist.slice_mut(s![bi, k, slot, .., .., ..]).assign(&to_model_range(&src.frames[hs.t][k]));
                    hist_g
                        .slice_mut(s![bi, k, slot, .., .., ..])
                        .assign(&guidance_image(&s.degraded.depth[hs.t][k], &s.degraded.semantic[hs.t][k], s.far_plane));
                }
            }
        }
        Ok(TrainBatch {
            x0,
            corrupted,
            guidance,
            history: (hl > 0).then_some(HistoryInput {
                frames: hist,
                guidance: hist_g,
            }),
            geometry,
            teacher,
            teacher_mask: mask,
        })
    }
}

/// Read the scene meta of a scene directory.
pub fn scene_meta(dir: &Path) -> Result<SequenceMeta> {
    read_json(&dir.join("meta.json"))
}
