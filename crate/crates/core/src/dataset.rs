//! On-disk dataset layout.
//!
//! ```text
//! scene_<id>/
//!   meta.json
//!   rgb/t{ttt}_c{k}.png     8-bit RGB
//!   depth/t{ttt}_c{k}.png   16-bit luma + alpha; value·depth_scale metres,
//!                           alpha 0 (and value 0) marks sky
//!   sem/t{ttt}_c{k}.png     8-bit semantic ids
//! ```
//!
//! Degraded renders and restored outputs use the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, LumaA, Rgb};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthworld::{CameraRig, MultiViewSequence, SceneConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub format_version: u32,
    pub scene_id: String,
    pub seed: u64,
    pub scene_config: SceneConfig,
    /// Rig used for rendering, including the ego trajectory.
    pub rig: CameraRig,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub num_cameras: usize,
    /// Metres per unit of the stored 16-bit depth.
    pub depth_scale: f64,
    /// Free-form provenance (corruption manifest path, checkpoint digest...).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl SequenceMeta {
    pub fn for_sequence(seq: &MultiViewSequence, scene_id: &str, seed: u64, scene_config: &SceneConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            scene_id: scene_id.to_string(),
            seed,
            scene_config: scene_config.clone(),
            rig: seq.rig.clone(),
            height: seq.height,
            width: seq.width,
            timesteps: seq.timesteps(),
            num_cameras: seq.num_views(),
            depth_scale: scene_config.far_plane / 65535.0,
            provenance: serde_json::Value::Null,
        }
    }
}

pub fn scene_dir_name(id: usize) -> String {
    format!("scene_{id:04}")
}

fn frame_name(t: usize, k: usize) -> String {
    format!("t{t:03}_c{k}.png")
}

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn save_png<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn open_png(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `seq` under `dir` in the dataset layout.
pub fn write_sequence(dir: &Path, seq: &MultiViewSequence, meta: &SequenceMeta) -> Result<()> {
    seq.validate()?;
    for sub in ["rgb", "depth", "sem"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (h, w) = (seq.height, seq.width);
    for t in 0..seq.timesteps() {
        for k in 0..seq.num_views() {
            let name = frame_name(t, k);
            let f = &seq.frames[t][k];
            let rgb = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (i, j) = (y as usize, x as usize);
                Rgb([quantize_u8(f[[i, j, 0]]), quantize_u8(f[[i, j, 1]]), quantize_u8(f[[i, j, 2]])])
            });
            save_png(&dir.join("rgb").join(&name), &rgb)?;

            let d = &seq.depth[t][k];
            let depth = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let z = d[[y as usize, x as usize]] as f64;
                if z.is_finite() {
                    let q = (z / meta.depth_scale).round().clamp(1.0, 65535.0) as u16;
                    LumaA([q, u16::MAX])
                } else {
                    LumaA([0u16, 0u16])
                }
            });
            save_png(&dir.join("depth").join(&name), &depth)?;

            let s = &seq.semantic[t][k];
            let sem = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([s[[y as usize, x as usize]]]));
            save_png(&dir.join("sem").join(&name), &sem)?;
        }
    }
    write_json(&dir.join("meta.json"), meta)
}

/// Read a sequence written by [`write_sequence`].
pub fn read_sequence(dir: &Path) -> Result<(MultiViewSequence, SequenceMeta)> {
    let meta: SequenceMeta = read_json(&dir.join("meta.json"))?;
    let (h, w) = (meta.height, meta.width);
    let mut frames = Vec::with_capacity(meta.timesteps);
    let mut depth = Vec::with_capacity(meta.timesteps);
    let mut semantic = Vec::with_capacity(meta.timesteps);
    for t in 0..meta.timesteps {
        let (mut fr, mut de, mut se) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..meta.num_cameras {
            let name = frame_name(t, k);
            let rgb_path = dir.join("rgb").join(&name);
            let rgb = open_png(&rgb_path)?.to_rgb8();
            if rgb.dimensions() != (w as u32, h as u32) {
                return Err(Error::Schema {
                    path: rgb_path,
                    msg: format!("expected {w}x{h}, found {:?}", rgb.dimensions()),
                });
            }
            fr.push(Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
                rgb.get_pixel(j as u32, i as u32)[c] as f32 / 255.0
            }));

            let depth_path = dir.join("depth").join(&name);
            let dimg = open_png(&depth_path)?.to_luma_alpha16();
            if dimg.dimensions() != (w as u32, h as u32) {
                return Err(Error::Schema {
                    path: depth_path,
                    msg: "depth size mismatch".into(),
                });
            }
            de.push(Array2::from_shape_fn((h, w), |(i, j)| {
                let px = dimg.get_pixel(j as u32, i as u32);
                if px[1] == 0 {
                    f32::INFINITY
                } else {
                    (px[0] as f64 * meta.depth_scale) as f32
                }
            }));

            let sem_path = dir.join("sem").join(&name);
            let simg = open_png(&sem_path)?.to_luma8();
            if simg.dimensions() != (w as u32, h as u32) {
                return Err(Error::Schema {
                    path: sem_path,
                    msg: "semantic size mismatch".into(),
                });
            }
            se.push(Array2::from_shape_fn((h, w), |(i, j)| simg.get_pixel(j as u32, i as u32)[0]));
        }
        frames.push(fr);
        depth.push(de);
        semantic.push(se);
    }
    let seq = MultiViewSequence {
        height: h,
        width: w,
        frames,
        depth,
        semantic,
        rig: meta.rig.clone(),
    };
    Ok((seq, meta))
}

/// Check that `dir` holds a complete sequence in the dataset layout.
pub fn validate_layout(dir: &Path) -> Result<SequenceMeta> {
    let meta_path = dir.join("meta.json");
    let meta: SequenceMeta = read_json(&meta_path)?;
    let schema = |msg: String| Error::Schema {
        path: meta_path.clone(),
        msg,
    };
    if meta.format_version != FORMAT_VERSION {
        return Err(schema(format!("unsupported format_version {}", meta.format_version)));
    }
    if meta.rig.num_cameras() != meta.num_cameras || meta.rig.timesteps() != meta.timesteps {
        return Err(schema("rig does not match declared T/K".into()));
    }
    if !(meta.depth_scale > 0.0) {
        return Err(schema("depth_scale must be positive".into()));
    }
    for t in 0..meta.timesteps {
        for k in 0..meta.num_cameras {
            for sub in ["rgb", "depth", "sem"] {
                let p = dir.join(sub).join(frame_name(t, k));
                if !p.is_file() {
                    return Err(Error::MissingInput(p));
                }
            }
        }
    }
    Ok(meta)
}

/// Scene directories directly under `root`, sorted by name.
pub fn list_scenes(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingInput(root.to_path_buf()));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("scene_"))
        })
        .collect();
    out.sort();
    Ok(out)
}
