use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::JitterSpec;
use crate::synthworld::CameraRig;

/// Perturbation applied to one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJitter {
    pub axis: [f64; 3],
    pub angle: f64,
    pub translation: [f64; 3],
}

impl CameraJitter {
    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && self.translation == [0.0; 3]
    }
}

fn clamped_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (z * sigma).clamp(-3.0 * sigma, 3.0 * sigma)
}

/// Perturb every camera's extrinsic by a random rotation (angle ~ N(0, σ_rot)
/// about a uniform axis) and a translation offset (~ N(0, σ_trans·I)), both
/// clamped to 3σ. Zero sigmas return the rig unchanged.
pub fn jitter_extrinsics(rig: &CameraRig, spec: &JitterSpec, rng: &mut impl Rng) -> (CameraRig, Vec<CameraJitter>) {
    let mut out = rig.clone();
    let mut draws = Vec::with_capacity(rig.num_cameras());
    for cam in out.cameras.iter_mut() {
        let mut record = CameraJitter {
            axis: [0.0, 0.0, 1.0],
            angle: 0.0,
            translation: [0.0; 3],
        };
        if spec.sigma_rot > 0.0 {
            let mut n = || -> f64 { StandardNormal.sample(rng) };
            let raw = Vector3::new(n(), n(), n());
            let axis = Unit::new_normalize(raw);
            let angle = clamped_normal(rng, spec.sigma_rot);
            let delta = Rotation3::from_axis_angle(&axis, angle);
            cam.rotation = delta.matrix() * cam.rotation;
            record.axis = [axis.x, axis.y, axis.z];
            record.angle = angle;
        }
        if spec.sigma_trans > 0.0 {
            let off = [
                clamped_normal(rng, spec.sigma_trans),
                clamped_normal(rng, spec.sigma_trans),
                clamped_normal(rng, spec.sigma_trans),
            ];
            cam.translation += Vector3::from(off);
            record.translation = off;
        }
        draws.push(record);
    }
    (out, draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthworld::{EgoPose, RigPreset};

    fn rig() -> CameraRig {
        CameraRig::preset(RigPreset::Frontal3, 64, 64, vec![EgoPose::identity(); 2])
    }

    #[test]
    fn zero_sigma_is_bit_identical() {
        let r = rig();
        let spec = JitterSpec {
            sigma_rot: 0.0,
            sigma_trans: 0.0,
        };
        let (out, draws) = jitter_extrinsics(&r, &spec, &mut rng::stream(1, "j"));
        assert_eq!(serde_json::to_string(&out).unwrap(), serde_json::to_string(&r).unwrap());
        assert!(draws.iter().all(CameraJitter::is_identity));
    }

    #[test]
    fn translation_offsets_have_requested_spread() {
        let spec = JitterSpec {
            sigma_rot: 0.0,
            sigma_trans: 0.05,
        };
        let r = CameraRig::preset(RigPreset::Frontal3, 64, 64, vec![EgoPose::identity()]);
        let mut rng = rng::stream(5, "jitter-mc");
        let mut samples = [Vec::new(), Vec::new(), Vec::new()];
        // 1000 draws per axis: 334 calls x 3 cameras.
        for _ in 0..334 {
            let (_, draws) = jitter_extrinsics(&r, &spec, &mut rng);
            for d in draws {
                for a in 0..3 {
                    samples[a].push(d.translation[a]);
                }
            }
        }
        for s in &samples {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let std = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            // Clamping at 3 sigma shrinks the std by ~1.5%.
            assert!((std - 0.05).abs() < 0.005, "std {std}");
            assert!(s.iter().all(|x| x.abs() <= 0.15 + 1e-12));
        }
    }

    #[test]
    fn rotations_stay_orthonormal() {
        let spec = JitterSpec {
            sigma_rot: 0.2,
            sigma_trans: 0.3,
        };
        let mut rng = rng::stream(9, "j");
        for _ in 0..50 {
            let (out, draws) = jitter_extrinsics(&rig(), &spec, &mut rng);
            assert!(out.orthonormality_error() < 1e-6);
            assert!(draws.iter().all(|d| d.angle.abs() <= 0.6 + 1e-12));
        }
    }
}
