//! Multi-view manifests and image decoding.
//!
//! A manifest is line oriented. `key = value` lines set options and each
//! `view = <image> <camera>` line adds a view, in order. A camera is either
//! `lf_grid <u> <v> <baseline>` or 21 reals: K row-major then the 3×4
//! world-to-camera pose row-major. Image paths are relative to the manifest.
//!
//! ```text
//! central = 4
//! view = view_0_0.png lf_grid -1 -1 1.0
//! view = cam1.png 500 0 256 0 500 256 0 0 1  1 0 0 0  0 1 0 0  0 0 1 0
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::camera::{CameraMode, CameraModel, Mat3, Pose};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image};

#[derive(Debug, Clone)]
pub struct View {
    pub name: String,
    pub image: Image,
    pub camera: CameraModel,
}

#[derive(Debug, Clone)]
pub struct MultiViewSet {
    views: Vec<View>,
    central: usize,
}

impl MultiViewSet {
    pub fn new(views: Vec<View>, central: usize) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::DimensionMismatch("manifest lists no views".into()));
        }
        if central >= views.len() {
            return Err(Error::Config(format!(
                "central index {central} out of range for {} views",
                views.len()
            )));
        }
        let first = &views[0];
        let (w, h) = (first.image.width(), first.image.height());
        for (i, v) in views.iter().enumerate() {
            if v.image.width() != w || v.image.height() != h {
                return Err(Error::DimensionMismatch(format!(
                    "view {i} ({}) is {}x{}, expected {w}x{h}",
                    v.name,
                    v.image.width(),
                    v.image.height()
                )));
            }
            if v.camera.is_light_field() != first.camera.is_light_field() {
                return Err(Error::Camera(format!(
                    "view {i} ({}) mixes light-field and projective cameras",
                    v.name
                )));
            }
            if v.camera.is_light_field() && v.camera.intrinsics != first.camera.intrinsics {
                return Err(Error::Camera(format!(
                    "view {i} ({}): light-field views must share intrinsics",
                    v.name
                )));
            }
        }
        if views.len() == 1 {
            log::warn!("single-view set: the reprojection loss has no views to compare");
        }
        Ok(MultiViewSet { views, central })
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn central_index(&self) -> usize {
        self.central
    }

    pub fn central(&self) -> &View {
        &self.views[self.central]
    }

    pub fn width(&self) -> usize {
        self.views[0].image.width()
    }

    pub fn height(&self) -> usize {
        self.views[0].image.height()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Views other than the central one.
    pub fn others(&self) -> impl Iterator<Item = &View> {
        let c = self.central;
        self.views
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != c)
            .map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Box-filter downsampling factor (1 = none).
    pub downsample: usize,
    /// Apply the sRGB decoding curve to 8-bit values.
    pub linearize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            downsample: 1,
            linearize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub image: PathBuf,
    pub camera: CameraModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub central: usize,
    pub views: Vec<ViewEntry>,
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let mut central = None;
    let mut views = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "central" => {
                central = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| err(line_no, format!("bad central index {value:?}")))?,
                )
            }
            "view" => {
                let mut tokens = value.split_whitespace();
                let image = tokens
                    .next()
                    .ok_or_else(|| err(line_no, "view without image path".into()))?;
                let rest: Vec<&str> = tokens.collect();
                let camera = parse_camera(&rest).map_err(|m| {
                    err(line_no, format!("view {} ({image}): {m}", views.len()))
                })?;
                views.push(ViewEntry {
                    image: base.join(image),
                    camera,
                });
            }
            other => return Err(err(line_no, format!("unknown key {other:?}"))),
        }
    }
    let central = central.ok_or_else(|| err(0, "missing `central`".into()))?;
    if central >= views.len() {
        return Err(err(
            0,
            format!("central index {central} out of range for {} views", views.len()),
        ));
    }
    Ok(Manifest { central, views })
}

fn parse_camera(tokens: &[&str]) -> std::result::Result<CameraModel, String> {
    let reals = |ts: &[&str]| -> std::result::Result<Vec<f64>, String> {
        ts.iter()
            .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
            .collect()
    };
    match tokens.first() {
        Some(&"lf_grid") => {
            let v = reals(&tokens[1..])?;
            if v.len() != 3 {
                return Err(format!("lf_grid needs `u v baseline`, got {} values", v.len()));
            }
            CameraModel::light_field(v[0], v[1], v[2]).map_err(|e| e.to_string())
        }
        _ => {
            let v = reals(tokens)?;
            if v.len() != 21 {
                return Err(format!("camera needs 9 + 12 reals, got {}", v.len()));
            }
            let mut k: Mat3 = [[0.0; 3]; 3];
            let mut pose: Pose = [[0.0; 4]; 3];
            for i in 0..9 {
                k[i / 3][i % 3] = v[i];
            }
            for i in 0..12 {
                pose[i / 4][i % 4] = v[9 + i];
            }
            CameraModel::projective(k, pose).map_err(|e| e.to_string())
        }
    }
}

pub fn format_camera(cam: &CameraModel) -> String {
    match cam.mode {
        CameraMode::LightFieldShift {
            u, v, baseline_u, ..
        } => format!("lf_grid {u:?} {v:?} {baseline_u:?}"),
        CameraMode::Projective => cam
            .intrinsics
            .iter()
            .flatten()
            .chain(cam.pose.iter().flatten())
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Writes a manifest; image paths are written as given.
pub fn write_manifest(path: &Path, central: usize, views: &[(String, CameraModel)]) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("central = {central}\n");
    for (image, cam) in views {
        text.push_str(&format!("view = {image} {}\n", format_camera(cam)));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn load_image(path: &Path, opts: LoadOptions) -> Result<Image> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data: Vec<f64> = rgb
        .as_raw()
        .iter()
        .map(|&v| {
            let v = v as f64;
            if opts.linearize {
                srgb_to_linear(v)
            } else {
                v
            }
        })
        .collect();
    let image = Image::from_vec(w, h, 3, data)?;
    Ok(downsample(&image, opts.downsample))
}

/// Box-filter downsampling by an integer factor; trailing rows and columns
/// that do not fill a whole block are dropped.
pub fn downsample(img: &Image, factor: usize) -> Image {
    if factor <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    let norm = (factor * factor) as f64;
    Image::from_fn(w, h, img.channels(), |x, y, c| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(x * factor + dx, y * factor + dy, c);
            }
        }
        acc / norm
    })
}

/// [`downsample`] for a single-channel grid.
pub fn downsample_grid(grid: &Grid, factor: usize) -> Grid {
    if factor <= 1 {
        return grid.clone();
    }
    let img = Image::from_vec(grid.width(), grid.height(), 1, grid.as_slice().to_vec())
        .expect("grid buffer has one value per pixel");
    let small = downsample(&img, factor);
    Grid::from_vec(small.width(), small.height(), small.as_slice().to_vec())
        .expect("one channel per pixel")
}

/// Saves an RGB image in [0,1] as 8-bit PNG.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_multiview(manifest_path: &Path, opts: LoadOptions) -> Result<MultiViewSet> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = parse_manifest(&text, manifest_path)?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let image = load_image(&entry.image, opts)?;
        views.push(View {
            name: entry.image.display().to_string(),
            image,
            camera: entry.camera.downsampled(opts.downsample),
        });
    }
    MultiViewSet::new(views, manifest.central)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, w: u32, h: u32) {
        let buf = vec![128u8; (w * h * 3) as usize];
        image::save_buffer(dir.join(name), &buf, w, h, image::ExtendedColorType::Rgb8).unwrap();
    }

    #[test]
    fn lf_grid_manifest_with_81_views() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("central = 40\n");
        let mut names = Vec::new();
        for v in 0..9 {
            for u in 0..9 {
                let name = format!("v_{u}_{v}.png");
                write_png(dir.path(), &name, 8, 8);
                text.push_str(&format!("view = {name} lf_grid {u} {v} 1.0\n"));
                names.push(name);
            }
        }
        let path = dir.path().join("m.txt");
        fs::write(&path, text).unwrap();
        let set = load_multiview(&path, LoadOptions::default()).unwrap();
        assert_eq!(set.len(), 81);
        match set.central().camera.mode {
            CameraMode::LightFieldShift { u, v, .. } => assert_eq!((u, v), (4.0, 4.0)),
            _ => panic!("expected light-field camera"),
        }
        assert!((set.central().image.get(0, 0, 0) - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn single_view_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 4, 4);
        let path = dir.path().join("m.txt");
        fs::write(&path, "central = 0\nview = a.png lf_grid 0 0 1\n").unwrap();
        assert_eq!(load_multiview(&path, LoadOptions::default()).unwrap().len(), 1);
    }

    #[test]
    fn mismatched_dimensions_name_the_second_image() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "big.png", 512, 512);
        write_png(dir.path(), "small.png", 256, 256);
        let path = dir.path().join("m.txt");
        fs::write(
            &path,
            "central = 0\nview = big.png lf_grid 0 0 1\nview = small.png lf_grid 1 0 1\n",
        )
        .unwrap();
        let msg = load_multiview(&path, LoadOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("small.png"), "{msg}");
        assert!(msg.contains("256x256"), "{msg}");
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        fs::write(&path, "central = 0\nview = nope.png lf_grid 0 0 1\n").unwrap();
        let msg = load_multiview(&path, LoadOptions::default()).unwrap_err().to_string();
        assert!(msg.contains("nope.png"), "{msg}");
    }

    #[test]
    fn malformed_camera_names_the_entry() {
        let text = "central = 0\nview = a.png 1 2 3\n";
        let msg = parse_manifest(text, Path::new("m.txt")).unwrap_err().to_string();
        assert!(msg.contains("view 0 (a.png)"), "{msg}");
        let text = "central = 0\nview = a.png 500 0 10 0 500 10 0 0 1 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(parse_manifest(text, Path::new("m.txt")).is_ok());
        let text = "central = 0\nview = a.png 500 0 10 3 500 10 0 0 1 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(parse_manifest(text, Path::new("m.txt")).is_err());
    }

    #[test]
    fn camera_text_roundtrip() {
        let cam = CameraModel::projective(
            [[512.5, 0.0, 255.5], [0.0, 512.5, 255.5], [0.0, 0.0, 1.0]],
            [[1.0, 0.0, 0.0, 0.25], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        )
        .unwrap();
        let text = format!("central = 0\nview = a.png {}\n", format_camera(&cam));
        let m = parse_manifest(&text, Path::new("m.txt")).unwrap();
        assert_eq!(m.views[0].camera, cam);
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let img = Image::from_fn(4, 2, 1, |x, _, _| x as f64);
        let d = downsample(&img, 2);
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.get(0, 0, 0), 0.5);
        assert_eq!(d.get(1, 0, 0), 2.5);
    }
}
