//! Posed-image datasets in the `transforms.json` layout.
//!
//! Manifests store camera-to-world matrices in the OpenGL convention (x
//! right, y up, camera looking down -z). Internally cameras are world-to-camera
//! with x right, y down, looking down +z, so a manifest matrix `[R | c]`
//! becomes the extrinsic `R' = (R F)^T`, `t = -R' c` with `F = diag(1, -1, -1)`.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::io::image_files::{read_image, write_image};
use crate::math::{Mat3, Rgb, Vec3};
use crate::scene::Camera;

/// Axis flip between the manifest and internal camera frames.
pub fn axis_flip() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub path: PathBuf,
    pub camera: Camera,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub frames: Vec<Frame>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &Frame)> {
        self.frames.iter().enumerate().filter(move |(_, f)| f.split == split)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    frames: Vec<TransformsFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

/// Extrinsic rotation and translation of a manifest camera-to-world matrix.
pub fn extrinsic_from_c2w(m: &[Vec<f64>]) -> Result<(Mat3, Vec3)> {
    if m.len() != 4 || m.iter().any(|r| r.len() != 4) {
        return Err(Error::MalformedMatrix("transform_matrix must be 4x4".into()));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::MalformedMatrix("non-finite entry".into()));
    }
    let bottom = [0.0, 0.0, 0.0, 1.0];
    if m[3].iter().zip(bottom).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(Error::MalformedMatrix("last row must be 0 0 0 1".into()));
    }
    let r = Mat3::from_fn(|i, j| m[i][j]);
    let err = (r * r.transpose() - Mat3::identity()).abs().max();
    if err > 1e-6 || r.determinant() <= 0.0 {
        return Err(Error::MalformedMatrix(format!(
            "rotation block is not a proper rotation (orthogonality error {err:.2e})"
        )));
    }
    let c = Vec3::new(m[0][3], m[1][3], m[2][3]);
    let rot = (r * axis_flip()).transpose();
    Ok((rot, -(rot * c)))
}

/// Inverse of [`extrinsic_from_c2w`].
pub fn c2w_from_camera(cam: &Camera) -> Vec<Vec<f64>> {
    let r = cam.rotation.transpose() * axis_flip();
    let c = cam.center();
    vec![
        vec![r[(0, 0)], r[(0, 1)], r[(0, 2)], c.x],
        vec![r[(1, 0)], r[(1, 1)], r[(1, 2)], c.y],
        vec![r[(2, 0)], r[(2, 1)], r[(2, 2)], c.z],
        vec![0.0, 0.0, 0.0, 1.0],
    ]
}

fn resolve(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.extension().is_some() && p.exists() {
        return Ok(p);
    }
    for ext in ["png", "pfm", "hdr"] {
        let q = p.with_extension(ext);
        if q.exists() {
            return Ok(q);
        }
    }
    Err(Error::MissingFile(p))
}

fn image_size(path: &Path) -> Result<(usize, usize)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "png" {
        let (w, h) = image::image_dimensions(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        return Ok((w as usize, h as usize));
    }
    let img = read_image(path, &Rgb::zeros())?;
    Ok((img.width, img.height))
}

/// Reads the `transforms_<split>.json` manifests (or a single
/// `transforms.json`, tagged train) found in `dir`.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let mut sources = Vec::new();
    for split in Split::ALL {
        let p = dir.join(format!("transforms_{}.json", split.name()));
        if p.exists() {
            sources.push((p, split));
        }
    }
    if sources.is_empty() {
        let p = dir.join("transforms.json");
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        sources.push((p, Split::Train));
    }
    let mut manifest = DatasetManifest::default();
    for (path, split) in sources {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let tf: TransformsFile =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut size: Option<(usize, usize)> = None;
        for fr in &tf.frames {
            let file = resolve(dir, &fr.file_path)?;
            let (w, h) = match (tf.w, tf.h) {
                (Some(w), Some(h)) => (w, h),
                _ => image_size(&file)?,
            };
            match size {
                None => size = Some((w, h)),
                Some(s) if s != (w, h) => {
                    return Err(Error::InconsistentResolution(format!(
                        "{} is {w}x{h}, expected {}x{} in split {}",
                        file.display(),
                        s.0,
                        s.1,
                        split.name()
                    )))
                }
                _ => {}
            }
            let (rotation, translation) = extrinsic_from_c2w(&fr.transform_matrix)?;
            let fx = tf.fl_x.unwrap_or(0.5 * w as f64 / (0.5 * tf.camera_angle_x).tan());
            let camera = Camera::new(
                fx,
                tf.fl_y.unwrap_or(fx),
                tf.cx.unwrap_or(0.5 * w as f64),
                tf.cy.unwrap_or(0.5 * h as f64),
                rotation,
                translation,
                w,
                h,
                0.01,
                1000.0,
            )?;
            manifest.frames.push(Frame {
                path: file,
                camera,
                split,
            });
        }
    }
    Ok(manifest)
}

/// Loads images on a background thread, at most `depth` ahead of the consumer.
pub struct Prefetcher {
    rx: Receiver<Result<Image>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn new(paths: Vec<PathBuf>, background: Rgb, depth: usize) -> Self {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || {
            for p in paths {
                if tx.send(read_image(&p, &background)).is_err() {
                    break;
                }
            }
        });
        Prefetcher {
            rx,
            handle: Some(handle),
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Result<Image>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        let (_, dead) = sync_channel(1);
        drop(std::mem::replace(&mut self.rx, dead));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub const PREFETCH_DEPTH: usize = 4;

/// Manifest plus decoded linear images, in manifest order.
pub fn load_dataset(dir: &Path, background: &Rgb) -> Result<(DatasetManifest, Vec<Image>)> {
    let manifest = load_manifest(dir)?;
    let paths = manifest.frames.iter().map(|f| f.path.clone()).collect();
    let mut images = Vec::with_capacity(manifest.frames.len());
    for (frame, img) in manifest.frames.iter().zip(Prefetcher::new(paths, *background, PREFETCH_DEPTH)) {
        let img = img?;
        if img.width != frame.camera.width || img.height != frame.camera.height {
            return Err(Error::InconsistentResolution(format!(
                "{} is {}x{}, manifest says {}x{}",
                frame.path.display(),
                img.width,
                img.height,
                frame.camera.width,
                frame.camera.height
            )));
        }
        images.push(img);
    }
    Ok((manifest, images))
}

/// Writes `views` as `<split>/r_<k>.<ext>` plus `transforms_<split>.json`.
pub fn write_split(dir: &Path, split: Split, views: &[(Camera, Image)], ext: &str) -> Result<()> {
    let sub = dir.join(split.name());
    std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let first = views
        .first()
        .map(|v| &v.0)
        .ok_or_else(|| Error::InvalidParameter("no views to write".into()))?;
    let mut frames = Vec::with_capacity(views.len());
    for (k, (cam, img)) in views.iter().enumerate() {
        if cam.fx != first.fx || cam.width != first.width || cam.height != first.height {
            return Err(Error::InconsistentResolution("views of one split must share intrinsics".into()));
        }
        let rel = format!("{}/r_{k}.{ext}", split.name());
        write_image(&dir.join(&rel), img)?;
        frames.push(TransformsFrame {
            file_path: rel,
            transform_matrix: c2w_from_camera(cam),
        });
    }
    let tf = TransformsFile {
        camera_angle_x: 2.0 * (0.5 * first.width as f64 / first.fx).atan(),
        fl_x: Some(first.fx),
        fl_y: Some(first.fy),
        cx: Some(first.cx),
        cy: Some(first.cy),
        w: Some(first.width),
        h: Some(first.height),
        frames,
    };
    let path = dir.join(format!("transforms_{}.json", split.name()));
    let text = serde_json::to_string_pretty(&tf).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose_is_the_axis_flip() {
        let id: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let (r, t) = extrinsic_from_c2w(&id).unwrap();
        assert_eq!(r, axis_flip());
        assert_eq!(t, Vec3::zeros());
    }

    #[test]
    fn malformed_matrices_are_rejected() {
        let mut m: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        m[0][0] = 2.0;
        assert!(matches!(extrinsic_from_c2w(&m), Err(Error::MalformedMatrix(_))));
        assert!(matches!(extrinsic_from_c2w(&m[..3]), Err(Error::MalformedMatrix(_))));
    }
}
