//! PNG and pose-CSV serialization.

use std::path::Path;

use image::{GrayImage, RgbImage};

use super::ForgeError;
use crate::geometry::PosePlanar;
use crate::warp::ImageBuffer;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1-channel buffer as 8-bit grayscale, 3-channel as 8-bit RGB.
pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<(), ForgeError> {
    let err = |detail: String| ForgeError::Image { path: path.display().to_string(), detail };
    match img.channels {
        1 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            GrayImage::from_raw(img.width as u32, img.height as u32, buf)
                .ok_or_else(|| err("size mismatch".into()))?
                .save(path)
                .map_err(|e| err(e.to_string()))
        }
        3 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            RgbImage::from_raw(img.width as u32, img.height as u32, buf)
                .ok_or_else(|| err("size mismatch".into()))?
                .save(path)
                .map_err(|e| err(e.to_string()))
        }
        c => Err(err(format!("cannot encode {c}-channel image"))),
    }
}

/// Loads a PNG as f32 in [0, 1]; grayscale files come back 1-channel,
/// everything else 3-channel RGB.
pub fn load_png(path: &Path) -> Result<ImageBuffer, ForgeError> {
    let err = |detail: String| ForgeError::Image { path: path.display().to_string(), detail };
    let img = image::open(path).map_err(|e| err(e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(ImageBuffer::from_data(h, w, 1, data))
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data = rgb.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Ok(ImageBuffer::from_data(h, w, 3, data))
        }
    }
}

/// `frame,x,y,yaw,timestamp` with full round-trip float formatting.
pub fn write_poses_csv(path: &Path, poses: &[(PosePlanar, f64)]) -> Result<(), ForgeError> {
    let mut out = String::from("frame,x,y,yaw,timestamp\n");
    for (i, (p, t)) in poses.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", p.x, p.y, p.yaw, t));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_poses_csv(path: &Path) -> Result<Vec<(PosePlanar, f64)>, ForgeError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ForgeError::Manifest("empty pose file".into()))?;
    if header.trim() != "frame,x,y,yaw,timestamp" {
        return Err(ForgeError::Manifest(format!("unexpected pose header `{header}`")));
    }
    let mut poses = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(ForgeError::Manifest(format!("pose line {} malformed", n + 2)));
        }
        let parse = |s: &str| -> Result<f64, ForgeError> {
            s.trim()
                .parse()
                .map_err(|_| ForgeError::Manifest(format!("pose line {}: bad float `{s}`", n + 2)))
        };
        poses.push((
            PosePlanar::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?),
            parse(fields[4])?,
        ));
    }
    Ok(poses)
}
