use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{uniform, RadiometricSpec};
use crate::error::Result;
use crate::synthworld::MultiViewSequence;

/// Per-camera exposure and white-balance draw, constant over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiometricDraw {
    pub gain: f64,
    pub offset: f64,
    pub white_balance: [f64; 3],
}

impl RadiometricDraw {
    pub fn apply(&self, x: f32, channel: usize) -> f32 {
        let g = (self.gain * self.white_balance[channel]) as f32;
        (g * x + self.offset as f32).clamp(0.0, 1.0)
    }
}

/// Map every pixel of camera k to `clamp(g_k·wb_k ⊙ x + b_k, 0, 1)`.
pub fn degrade_radiometric(
    seq: &MultiViewSequence,
    spec: &RadiometricSpec,
    rng: &mut impl Rng,
) -> Result<(MultiViewSequence, Vec<RadiometricDraw>)> {
    let draws: Vec<RadiometricDraw> = (0..seq.num_views())
        .map(|_| RadiometricDraw {
            gain: uniform(rng, spec.gain),
            offset: uniform(rng, spec.offset),
            white_balance: [
                uniform(rng, spec.white_balance),
                uniform(rng, spec.white_balance),
                uniform(rng, spec.white_balance),
            ],
        })
        .collect();
    let frames = seq
        .frames
        .iter()
        .map(|views| {
            views
                .iter()
                .zip(&draws)
                .map(|(f, d)| {
                    let mut out = f.clone();
                    for ((_, _, c), v) in out.indexed_iter_mut() {
                        *v = d.apply(*v, c);
                    }
                    out
                })
                .collect()
        })
        .collect();
    Ok((seq.with_frames(frames), draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthworld::{CameraRig, EgoPose, RigPreset};
    use ndarray::{Array2, Array3};

    fn gradient_sequence(views: usize, max: f32) -> MultiViewSequence {
        let f = Array3::from_shape_fn((4, 4, 3), |(i, j, _)| max * (i * 4 + j) as f32 / 15.0);
        MultiViewSequence {
            height: 4,
            width: 4,
            frames: vec![vec![f; views]],
            depth: vec![vec![Array2::from_elem((4, 4), 5.0); views]],
            semantic: vec![vec![Array2::from_elem((4, 4), 1); views]],
            rig: CameraRig::preset(RigPreset::Frontal3, 4, 4, vec![EgoPose::identity()]),
        }
    }

    #[test]
    fn unit_gain_is_identity() {
        let seq = gradient_sequence(3, 1.0);
        let spec = RadiometricSpec {
            gain: (1.0, 1.0),
            offset: (0.0, 0.0),
            white_balance: (1.0, 1.0),
        };
        let (out, _) = degrade_radiometric(&seq, &spec, &mut rng::stream(0, "r")).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn doubled_gain_saturates_upper_half() {
        let seq = gradient_sequence(3, 0.6);
        let spec = RadiometricSpec {
            gain: (2.0, 2.0),
            offset: (0.0, 0.0),
            white_balance: (1.0, 1.0),
        };
        let (out, _) = degrade_radiometric(&seq, &spec, &mut rng::stream(0, "r")).unwrap();
        for k in 0..3 {
            for (a, b) in seq.frames[0][k].iter().zip(out.frames[0][k].iter()) {
                assert!(*b <= 1.0);
                if *a >= 0.5 {
                    assert_eq!(*b, 1.0);
                } else {
                    assert!((b - 2.0 * a).abs() < 1e-6);
                }
            }
        }
    }
}
