//! Image files for videos, static factors and motion fields.
//!
//! [`render_outputs`] writes, inside one directory:
//!
//! - `video_{t:03}.png` for every source frame,
//! - `static_000.png`,
//! - `flow_{t:03}.png` for every adjacent pair of deformation fields,
//! - `legend_000.png`, the direction color wheel,
//! - `animation.gif`: source, reconstruction and motion side by side.
//!
//! Flow images show content motion, `-(D_{t+1} - D_t)`, so the hue is the
//! direction in which the picture appears to move.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgb, RgbImage};
use kernelviz_core::flow::{self, FlowImage, FlowNorm};
use kernelviz_core::warp::warp_sequence;
use kernelviz_core::{DeformationSequence, StaticFactor, VideoTensor};

use crate::error::{Error, IoContext, Result};

pub const LEGEND_SIZE: usize = 128;

fn to_rgb(data: &[f32], h: usize, w: usize, c: usize) -> RgbImage {
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = (y as usize * w + x as usize) * c;
        let px = |k: usize| flow::unit_to_u8(data[i + k.min(c - 1)] as f64);
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn video_frame(v: &VideoTensor, t: usize) -> RgbImage {
    to_rgb(v.frame(t), v.height(), v.width(), v.channels())
}

pub fn static_image(i: &StaticFactor) -> RgbImage {
    let [h, w, c] = i.shape();
    to_rgb(i.data(), h, w, c)
}

pub fn flow_image(f: &FlowImage) -> RgbImage {
    RgbImage::from_raw(f.width as u32, f.height as u32, f.rgb.clone()).expect("flow buffer matches its size")
}

/// Lays `tiles` out row by row, `cols` per row. Tiles may differ in size;
/// each cell takes the largest tile's extent and unused area stays black.
pub fn tile(tiles: &[RgbImage], cols: usize) -> RgbImage {
    let cols = cols.max(1);
    let cw = tiles.iter().map(|t| t.width()).max().unwrap_or(0);
    let ch = tiles.iter().map(|t| t.height()).max().unwrap_or(0);
    let rows = tiles.len().div_ceil(cols);
    let mut out = RgbImage::new(cw * cols.min(tiles.len().max(1)) as u32, ch * rows as u32);
    for (i, t) in tiles.iter().enumerate() {
        let (ox, oy) = ((i % cols) as u32 * cw, (i / cols) as u32 * ch);
        image::imageops::replace(&mut out, t, ox as i64, oy as i64);
    }
    out
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Content-motion images for every adjacent pair of fields.
pub fn flow_frames(deform: &DeformationSequence, norm: FlowNorm) -> Result<Vec<FlowImage>> {
    let motion = flow::deformation_diff(deform)?.content_motion();
    (0..motion.frames())
        .map(|t| Ok(flow::flow_to_rgb(motion.field(t), motion.height(), motion.width(), norm)?))
        .collect()
}

/// Files written by [`render_outputs`], relative to its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFiles {
    pub files: Vec<String>,
    /// Magnitude (px/frame) mapped to full brightness, per flow image.
    pub flow_max: Vec<f32>,
}

pub fn render_outputs(
    video: &VideoTensor,
    static_factor: &StaticFactor,
    deform: &DeformationSequence,
    dir: &Path,
    norm: FlowNorm,
) -> Result<RenderedFiles> {
    fs::create_dir_all(dir).at(dir)?;
    let mut files = Vec::new();
    let mut put = |name: String, img: &RgbImage| -> Result<()> {
        save_png(img, &dir.join(&name))?;
        files.push(name);
        Ok(())
    };
    for t in 0..video.frames() {
        put(format!("video_{t:03}.png"), &video_frame(video, t))?;
    }
    put("static_000.png".into(), &static_image(static_factor))?;
    let flows = flow_frames(deform, norm)?;
    let flow_imgs: Vec<RgbImage> = flows.iter().map(flow_image).collect();
    for (t, img) in flow_imgs.iter().enumerate() {
        put(format!("flow_{t:03}.png"), img)?;
    }
    put("legend_000.png".into(), &flow_image(&flow::color_wheel(LEGEND_SIZE)))?;

    let recon = warp_sequence(static_factor, deform)?;
    let name = "animation.gif".to_string();
    let panels: Vec<RgbImage> = (0..video.frames())
        .map(|t| {
            let motion = &flow_imgs[t.min(flow_imgs.len() - 1)];
            tile(&[video_frame(video, t), video_frame(&recon, t), motion.clone()], 3)
        })
        .collect();
    save_gif(&panels, video.frame_rate_hint, &dir.join(&name))?;
    files.push(name);
    Ok(RenderedFiles {
        files,
        flow_max: flows.iter().map(|f| f.max_magnitude).collect(),
    })
}

pub fn save_gif(frames: &[RgbImage], fps: f32, path: &Path) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let image_err = |e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut enc = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    enc.set_repeat(Repeat::Infinite).map_err(image_err)?;
    let ms = (1000.0 / fps.max(1.0)).round() as u32;
    for f in frames {
        let rgba = image::DynamicImage::ImageRgb8(f.clone()).into_rgba8();
        enc.encode_frame(Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(ms, 1)))
            .map_err(image_err)?;
    }
    Ok(())
}
