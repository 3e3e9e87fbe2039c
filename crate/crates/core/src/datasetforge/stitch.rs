//! Builds one overhead label from a posed frame sequence: each frame
//! contributes only its near-field trust band, mapped into frame 0's raster,
//! overwriting whatever earlier frames put there.

use super::{ForgeError, SequenceFrame};
use crate::geometry::{derive_ground_homography, pose_to_bev_shift, BevSpec, CameraRig};
use crate::warp::{sample_bilinear_pixel, ImageBuffer};

/// Iterates frames in order; for each one, resamples the band of ground
/// x ∈ [x_min, x_min + trust_depth] (in that frame's own coordinates)
/// through its homography and writes it into frame 0's raster at the pose's
/// position. Later frames overwrite earlier ones. Stops at the first frame
/// whose pose has advanced past the far edge of frame 0's view.
///
/// Returns the label and a single-channel coverage mask of written pixels.
pub fn stitch_labels(
    frames: &[SequenceFrame],
    rig: &CameraRig,
    spec: &BevSpec,
    trust_depth: f64,
) -> Result<(ImageBuffer, ImageBuffer), ForgeError> {
    if frames.is_empty() {
        return Err(ForgeError::EmptySequence);
    }
    if frames[0].pose.x.abs() > 1e-9 || frames[0].pose.y.abs() > 1e-9 || frames[0].pose.yaw.abs() > 1e-9
    {
        return Err(ForgeError::BadSequence("frame 0 must carry the identity pose".into()));
    }
    for pair in frames.windows(2) {
        if pair[1].pose.x < pair[0].pose.x {
            return Err(ForgeError::BadSequence("poses must progress forward".into()));
        }
    }
    let trust_depth = trust_depth.min(spec.x_max - spec.x_min);
    let h_cam = derive_ground_homography(rig, spec)?;
    let (w, h) = (spec.width_px(), spec.height_px());
    let channels = frames[0].image.channels;
    let mut label = ImageBuffer::<f32>::new(h, w, channels);
    let mut mask = ImageBuffer::<f32>::new(h, w, 1);
    let mut sample = vec![0.0f32; channels];

    for frame in frames {
        if frame.pose.x >= spec.x_max {
            break;
        }
        let shift = pose_to_bev_shift(&frame.pose, spec);
        let to_frame = shift.inverse().ok_or_else(|| {
            ForgeError::BadSequence("pose shift is singular".into())
        })?;
        for py in 0..h {
            for px in 0..w {
                // position of this frame-0 pixel in the moving frame's raster
                let Some((fu, fv)) = to_frame.apply(px as f64, py as f64) else {
                    continue;
                };
                if fu < -0.5 || fu > w as f64 - 0.5 || fv < -0.5 || fv > h as f64 - 0.5 {
                    continue;
                }
                // ground range in the moving frame: keep only the trust band
                let local_x = spec.x_max - (fv + 0.5) * spec.mpp;
                if local_x < spec.x_min || local_x > spec.x_min + trust_depth {
                    continue;
                }
                let Some((cu, cv)) = h_cam.apply(fu, fv) else {
                    continue;
                };
                // full bilinear support only: edge samples would blend with
                // padding and write half-dark pixels into the label
                if cu < 0.0 || cu > rig.width as f64 - 1.0 || cv < 0.0 || cv > rig.height as f64 - 1.0
                {
                    continue;
                }
                sample_bilinear_pixel(&frame.image, cu, cv, &mut sample);
                let base = (py * w + px) * channels;
                label.data[base..base + channels].copy_from_slice(&sample);
                *mask.at_mut(py, px, 0) = 1.0;
            }
        }
    }
    Ok((label, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PosePlanar;
    use crate::warp::warp_image;

    fn test_rig() -> CameraRig {
        CameraRig {
            fx: 90.0,
            fy: 90.0,
            cx: 63.5,
            cy: 47.5,
            width: 128,
            height: 96,
            cam_height: 1.5,
            pitch: 0.25,
            roll: 0.0,
            yaw: 0.0,
        }
    }

    fn test_spec() -> BevSpec {
        BevSpec { x_min: 3.0, x_max: 12.6, y_half: 6.4, mpp: 0.1 }
    }

    fn gradient_frame(rig: &CameraRig, pose: PosePlanar, t: f64) -> SequenceFrame {
        let mut image = ImageBuffer::<f32>::new(rig.height, rig.width, 3);
        for y in 0..rig.height {
            for x in 0..rig.width {
                *image.at_mut(y, x, 0) = x as f32 / rig.width as f32;
                *image.at_mut(y, x, 1) = y as f32 / rig.height as f32;
                *image.at_mut(y, x, 2) = 0.5;
            }
        }
        SequenceFrame { image, pose, timestamp: t }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let err = stitch_labels(&[], &test_rig(), &test_spec(), 6.0).unwrap_err();
        assert!(matches!(err, ForgeError::EmptySequence));
    }

    #[test]
    fn single_identity_frame_matches_plain_warp_on_trust_band() {
        let rig = test_rig();
        let spec = test_spec();
        let frame = gradient_frame(&rig, PosePlanar::identity(), 0.0);
        let (label, mask) = stitch_labels(&[frame.clone()], &rig, &spec, 6.0).unwrap();
        let h = derive_ground_homography(&rig, &spec).unwrap();
        let plain = warp_image(&frame.image, &h, spec.height_px(), spec.width_px()).unwrap();
        let mut band_px = 0usize;
        for py in 0..label.height {
            for px in 0..label.width {
                let x = spec.x_max - (py as f64 + 0.5) * spec.mpp;
                let in_band = (spec.x_min..=spec.x_min + 6.0).contains(&x);
                let covered = mask.at(py, px, 0) > 0.5;
                if covered {
                    band_px += 1;
                    assert!(in_band, "coverage outside trust band at row {py}");
                    for c in 0..3 {
                        let d = (label.at(py, px, c) - plain.at(py, px, c)).abs();
                        assert!(d < 1e-5, "({py},{px},{c}): {d}");
                    }
                } else if in_band {
                    // inside the band but the camera pixel fell outside the
                    // raster (lateral wedge) — plain warp reads zero there
                }
            }
        }
        assert!(band_px > 1000, "band coverage {band_px}");
    }

    #[test]
    fn last_writer_wins_on_every_pixel() {
        let rig = test_rig();
        let spec = test_spec();
        // two constant-color frames so overlap attribution is unambiguous
        let solid = |v: f32, pose: PosePlanar| -> SequenceFrame {
            let mut image = ImageBuffer::<f32>::new(rig.height, rig.width, 3);
            image.data.iter_mut().for_each(|p| *p = v);
            SequenceFrame { image, pose, timestamp: 0.0 }
        };
        let f0 = solid(0.25, PosePlanar::identity());
        let f1 = solid(0.75, PosePlanar::new(2.0, 0.0, 0.0));
        let (label, mask) = stitch_labels(&[f0.clone(), f1.clone()], &rig, &spec, 6.0).unwrap();

        // instrument per-frame coverage: frame 0 alone, and frame 1 behind a
        // black frame 0 (any bright pixel then came from frame 1)
        let (_, mask0) = stitch_labels(&[f0.clone()], &rig, &spec, 6.0).unwrap();
        let black = solid(0.0, PosePlanar::identity());
        let (probe1, _) = stitch_labels(&[black, f1], &rig, &spec, 6.0).unwrap();

        for py in 0..label.height {
            for px in 0..label.width {
                let covered0 = mask0.at(py, px, 0) > 0.5;
                let covered1 = probe1.at(py, px, 0) > 0.5;
                let v = label.at(py, px, 0);
                if covered1 {
                    assert!((v - 0.75).abs() < 1e-4, "({py},{px}): {v} should be frame 1");
                } else if covered0 {
                    assert!((v - 0.25).abs() < 1e-4, "({py},{px}): {v} should be frame 0");
                } else {
                    assert!(mask.at(py, px, 0) < 0.5, "({py},{px}) covered by neither");
                }
                // coverage grows monotonically with frames
                if covered0 {
                    assert!(mask.at(py, px, 0) > 0.5);
                }
            }
        }
    }

    #[test]
    fn frames_past_the_view_end_are_ignored() {
        let rig = test_rig();
        let spec = test_spec();
        let f0 = gradient_frame(&rig, PosePlanar::identity(), 0.0);
        let far = {
            let mut f = gradient_frame(&rig, PosePlanar::new(spec.x_max + 1.0, 0.0, 0.0), 1.0);
            f.image.data.iter_mut().for_each(|v| *v = 1.0);
            f
        };
        let (with_far, _) = stitch_labels(&[f0.clone(), far], &rig, &spec, 6.0).unwrap();
        let (without, _) = stitch_labels(&[f0], &rig, &spec, 6.0).unwrap();
        assert_eq!(with_far.data, without.data);
    }
}
