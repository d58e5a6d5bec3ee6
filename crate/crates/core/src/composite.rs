//! Places an object and its predicted shadow onto a background.
//!
//! The shadow map is reversed into a transmittance `1 − min(1, I·shadow)`
//! that multiplies the background; object pixels are pasted unchanged:
//!
//! `out = m·object + (1 − m)·background·(1 − min(1, I·shadow))`

use thiserror::Error;

use crate::image::{GrayImage, Mask, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum CompositeError {
    #[error("{what} is {got:?}, expected {expected:?}")]
    Resolution {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("intensity must be finite and non-negative, got {0}")]
    BadIntensity(f64),
}

pub struct CompositeInputs<'a> {
    pub object: &'a RgbImage,
    pub mask: &'a Mask,
    pub shadow: &'a GrayImage,
    pub background: &'a RgbImage,
    pub intensity: f64,
}

pub fn composite(inputs: &CompositeInputs<'_>) -> Result<RgbImage, CompositeError> {
    let expected = inputs.background.shape();
    for (what, got) in [
        ("object", inputs.object.shape()),
        ("mask", inputs.mask.shape()),
        ("shadow", inputs.shadow.shape()),
    ] {
        if got != expected {
            return Err(CompositeError::Resolution {
                what,
                got,
                expected,
            });
        }
    }
    if !(inputs.intensity.is_finite() && inputs.intensity >= 0.0) {
        return Err(CompositeError::BadIntensity(inputs.intensity));
    }
    let data = (0..inputs.background.data.len())
        .map(|i| {
            if inputs.mask.data[i] != 0 {
                inputs.object.data[i].map(|c| c.clamp(0.0, 1.0))
            } else {
                let t = 1.0 - (inputs.intensity * inputs.shadow.data[i]).min(1.0);
                inputs.background.data[i].map(|c| (c * t).clamp(0.0, 1.0))
            }
        })
        .collect();
    Ok(RgbImage {
        width: expected.0,
        height: expected.1,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::intensity_augment;
    use proptest::prelude::*;

    fn scene(shadow: Vec<f64>) -> (RgbImage, Mask, GrayImage, RgbImage) {
        let n = shadow.len();
        let object = RgbImage {
            width: n,
            height: 1,
            data: (0..n).map(|i| [0.1 * (i % 7) as f64, 0.3, 0.9]).collect(),
        };
        let mask = Mask {
            width: n,
            height: 1,
            data: (0..n).map(|i| u8::from(i % 3 == 0)).collect(),
        };
        let background = RgbImage {
            width: n,
            height: 1,
            data: (0..n).map(|i| [0.9, 0.05 * (i % 11) as f64, 0.6]).collect(),
        };
        (object, mask, GrayImage::from_vec(n, 1, shadow), background)
    }

    fn run(o: &RgbImage, m: &Mask, s: &GrayImage, b: &RgbImage, i: f64) -> RgbImage {
        composite(&CompositeInputs {
            object: o,
            mask: m,
            shadow: s,
            background: b,
            intensity: i,
        })
        .unwrap()
    }

    #[test]
    fn zero_intensity_keeps_background() {
        let (o, m, s, b) = scene(vec![0.7; 12]);
        let out = run(&o, &m, &s, &b, 0.0);
        for i in 0..12 {
            if m.data[i] == 0 {
                assert_eq!(out.data[i], b.data[i]);
            }
        }
    }

    #[test]
    fn no_shadow_is_a_masked_paste() {
        let (o, m, s, b) = scene(vec![0.0; 12]);
        let out = run(&o, &m, &s, &b, 1.0);
        for i in 0..12 {
            assert_eq!(
                out.data[i],
                if m.data[i] != 0 { o.data[i] } else { b.data[i] }
            );
        }
    }

    #[test]
    fn full_occlusion_is_black() {
        let (o, m, s, b) = scene(vec![1.0; 12]);
        let out = run(&o, &m, &s, &b, 1.0);
        assert_eq!(out.data[1], [0.0; 3]);
    }

    #[test]
    fn resolution_mismatch() {
        let (o, m, _, b) = scene(vec![0.0; 12]);
        let s = GrayImage::new(11, 1);
        let err = composite(&CompositeInputs {
            object: &o,
            mask: &m,
            shadow: &s,
            background: &b,
            intensity: 1.0,
        });
        assert!(matches!(
            err,
            Err(CompositeError::Resolution { what: "shadow", .. })
        ));
    }

    proptest! {
        #[test]
        fn object_pixels_ignore_shadow(shadow in prop::collection::vec(0.0f64..1.0, 12), i in 0.0f64..3.0) {
            let (o, m, s, b) = scene(shadow);
            let out = run(&o, &m, &s, &b, i);
            for k in 0..12 {
                if m.data[k] != 0 {
                    prop_assert_eq!(out.data[k], o.data[k]);
                }
            }
        }

        #[test]
        fn more_intensity_never_brightens(shadow in prop::collection::vec(0.0f64..1.0, 12), i in 0.0f64..2.0, d in 0.0f64..2.0) {
            let (o, m, s, b) = scene(shadow);
            let lo = run(&o, &m, &s, &b, i);
            let hi = run(&o, &m, &s, &b, i + d);
            for k in 0..12 {
                for c in 0..3 {
                    prop_assert!(hi.data[k][c] <= lo.data[k][c]);
                }
            }
        }

        #[test]
        fn intensity_paths_agree(shadow in prop::collection::vec(0.0f64..1.0, 12), i in 0.1f64..1.9) {
            let (o, m, s, b) = scene(shadow);
            let direct = run(&o, &m, &s, &b, i);
            let augmented = run(&o, &m, &intensity_augment(&s, i), &b, 1.0);
            prop_assert_eq!(direct, augmented);
        }
    }
}
