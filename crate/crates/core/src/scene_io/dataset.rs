//! Posed image sets and their JSON pose manifest.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, Image};
use crate::math::Mat3;
use crate::scene_io::Camera;

pub const MANIFEST_NAME: &str = "transforms.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Linear,
    Srgb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub color_space: ColorSpace,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    /// Image path relative to the manifest. A frame without a file is a camera
    /// with no image and fails validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedImageSet {
    images: Vec<Image>,
    cameras: Vec<Camera>,
}

impl PosedImageSet {
    pub fn new(images: Vec<Image>, cameras: Vec<Camera>) -> Result<Self> {
        if images.len() != cameras.len() {
            return Err(Error::Schema(format!(
                "{} cameras but {} images",
                cameras.len(),
                images.len()
            )));
        }
        if images.is_empty() {
            return Err(Error::InvalidArgument("a posed image set needs at least one image".into()));
        }
        let (w, h) = (images[0].width(), images[0].height());
        for (i, (img, cam)) in images.iter().zip(&cameras).enumerate() {
            if img.width() != w || img.height() != h {
                return Err(Error::Schema(format!(
                    "image {i} is {}x{}, expected {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
            if cam.width as usize != w || cam.height as usize != h {
                return Err(Error::Schema(format!("camera {i} size does not match its image")));
            }
            cam.validate()
                .map_err(|e| Error::Schema(format!("camera {i}: {e}")))?;
        }
        Ok(PosedImageSet { images, cameras })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(width, height)` shared by all images.
    pub fn image_size(&self) -> (usize, usize) {
        (self.images[0].width(), self.images[0].height())
    }

    /// Splits off every `every`-th view (indices `every-1, 2*every-1, ...`) as
    /// a held-out set. Returns `(train, held_out)`; `held_out` is `None` if no
    /// view qualifies.
    pub fn hold_out_every(&self, every: usize) -> Result<(PosedImageSet, Option<PosedImageSet>)> {
        if every < 2 {
            return Err(Error::InvalidArgument("hold-out stride must be at least 2".into()));
        }
        let (mut ti, mut tc, mut hi, mut hc) = (vec![], vec![], vec![], vec![]);
        for (i, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
            if (i + 1) % every == 0 {
                hi.push(img.clone());
                hc.push(cam.clone());
            } else {
                ti.push(img.clone());
                tc.push(cam.clone());
            }
        }
        let held = if hi.is_empty() {
            None
        } else {
            Some(PosedImageSet::new(hi, hc)?)
        };
        Ok((PosedImageSet::new(ti, tc)?, held))
    }
}

pub fn srgb_to_linear(v: f32) -> f32 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Loads a dataset from its manifest; pixel values are returned as linear
/// RGB in `[0, 1]`.
pub fn load_dataset(manifest_path: &Path) -> Result<PosedImageSet> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", manifest_path.display())))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));

    let files: Vec<&String> = manifest.frames.iter().filter_map(|f| f.file.as_ref()).collect();
    if files.len() != manifest.frames.len() {
        return Err(Error::Schema(format!(
            "{} cameras but {} images",
            manifest.frames.len(),
            files.len()
        )));
    }
    let mut images = Vec::with_capacity(files.len());
    let mut cameras = Vec::with_capacity(files.len());
    for (i, frame) in manifest.frames.iter().enumerate() {
        let file = frame.file.as_ref().expect("checked above");
        let cam = Camera::new(
            frame.rotation,
            frame.translation,
            frame.focal_px,
            [frame.cx, frame.cy],
            manifest.width,
            manifest.height,
        )
        .map_err(|e| Error::Schema(format!("frame {i} ({file}): {e}")))?;
        let mut img = read_png(&root.join(file))?;
        if img.width() != manifest.width as usize || img.height() != manifest.height as usize {
            return Err(Error::Schema(format!(
                "frame {i} ({file}) is {}x{}, manifest says {}x{}",
                img.width(),
                img.height(),
                manifest.width,
                manifest.height
            )));
        }
        if manifest.color_space == ColorSpace::Srgb {
            img.data_mut().iter_mut().for_each(|v| *v = srgb_to_linear(*v));
        }
        images.push(img);
        cameras.push(cam);
    }
    PosedImageSet::new(images, cameras)
}

/// Writes `frame_XXXX.png` files and the manifest into `dir`; returns the
/// manifest path. Pixels are stored as 8-bit linear values.
pub fn save_dataset(set: &PosedImageSet, dir: &Path) -> Result<PathBuf> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("cannot save an empty dataset".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = set.image_size();
    let mut frames = Vec::with_capacity(set.len());
    for (i, (img, cam)) in set.images().iter().zip(set.cameras()).enumerate() {
        let name = format!("frame_{i:04}.png");
        write_png(img, &dir.join(&name))?;
        frames.push(Frame {
            file: Some(name),
            focal_px: cam.focal,
            cx: cam.principal_point[0],
            cy: cam.principal_point[1],
            rotation: cam.rotation,
            translation: cam.translation,
        });
    }
    let manifest = Manifest {
        width: w as u32,
        height: h as u32,
        color_space: ColorSpace::Linear,
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Image(format!("{}: unsupported color type {other:?}", path.display())))
        }
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks_exact(channels) {
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
    }
    Image::from_vec(w, h, data)
}
