use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::GrayImage;

use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// A grayscale image in [0, 1] and its binary target mask, both `[1, H, W]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor, mask: Tensor, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if image.rank() != 3 || image.shape()[0] != 1 || image.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "sample (image vs mask, expects [1, H, W])",
                lhs: image.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidArgument {
                op: "sample",
                msg: format!("mask of {id} is not binary"),
            });
        }
        Ok(Self { image, mask, id })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

/// Stack samples into `([B, 1, H, W] images, [B, 1, H, W] masks)`.
pub fn stack(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument { op: "stack", msg: "empty batch".into() });
    };
    let (h, w) = first.size();
    let mut images = Vec::with_capacity(samples.len() * h * w);
    let mut masks = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.size() != (h, w) {
            return Err(Error::SizeMismatch {
                path: s.id.clone().into(),
                msg: format!("{:?} differs from batch size {h}x{w}", s.size()),
            });
        }
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
    }
    let shape = [samples.len(), 1, h, w];
    Ok((Tensor::new(&shape, images)?, Tensor::new(&shape, masks)?))
}

/// Seeded shuffle, then the first `floor(0.8 n)` samples train and the rest
/// evaluate.
pub fn split_dataset(samples: Vec<Sample>, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::InvalidArgument {
            op: "split_dataset",
            msg: format!("need at least 5 samples, got {n}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = n * 8 / 10;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("index used twice");
    let train = order[..n_train].iter().map(&mut take).collect();
    let eval = order[n_train..].iter().map(&mut take).collect();
    Ok((train, eval))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// `(H, W)`
    pub size: (usize, usize),
    /// Peak-to-peak span of the linear background ramp.
    pub gradient_amplitude: f64,
    pub noise_std: f64,
    /// Inclusive range of targets per image.
    pub targets: (usize, usize),
    /// Inclusive range of the Gaussian blob sigma, in pixels.
    pub sigma: (f64, f64),
    /// Inclusive range of the blob peak amplitude.
    pub amplitude: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 32,
            size: (64, 64),
            gradient_amplitude: 0.3,
            noise_std: 0.02,
            targets: (1, 3),
            sigma: (0.5, 2.0),
            amplitude: (0.5, 0.8),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.size.0 < 3 || self.size.1 < 3 {
            return bad("images must be at least 3x3");
        }
        if !(1..=3).contains(&self.targets.0) || self.targets.0 > self.targets.1 || self.targets.1 > 3 {
            return bad("targets per image must lie in 1..=3");
        }
        if !(0.5..=2.0).contains(&self.sigma.0) || self.sigma.0 > self.sigma.1 || self.sigma.1 > 2.0 {
            return bad("sigma range must lie in [0.5, 2.0]");
        }
        if !(self.amplitude.0 > 0.0 && self.amplitude.0 <= self.amplitude.1 && self.amplitude.1 <= 1.0) {
            return bad("amplitude range must lie in (0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.gradient_amplitude >= 0.0) {
            return bad("noise and gradient must be non-negative");
        }
        Ok(())
    }
}

/// Linear background ramp plus Gaussian noise, with 1-3 Gaussian blobs
/// centred on whole pixels. A blob's mask is where its own contribution
/// exceeds half its peak, so the centre pixel is always included and
/// `sigma <= 2` bounds each target to at most 21 pixels.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut rng = Rng::new(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for idx in 0..spec.count {
        let base = rng.uniform(0.1, 0.3);
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let (gx, gy) = (angle.cos(), angle.sin());
        let mut img: Vec<f64> = (0..h * w)
            .map(|p| {
                let (y, x) = ((p / w) as f64 / h as f64, (p % w) as f64 / w as f64);
                base + spec.gradient_amplitude * 0.5 * (1.0 + gx * (x - 0.5) + gy * (y - 0.5))
            })
            .collect();
        let mut mask = vec![0.0; h * w];
        let n_targets = rng.range_inclusive(spec.targets.0, spec.targets.1);
        for _ in 0..n_targets {
            let cy = rng.range_inclusive(0, h - 1) as f64;
            let cx = rng.range_inclusive(0, w - 1) as f64;
            let sigma = rng.uniform(spec.sigma.0, spec.sigma.1);
            let amp = rng.uniform(spec.amplitude.0, spec.amplitude.1);
            let reach = (3.0 * sigma).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (y, x) = (cy as isize + dy, cx as isize + dx);
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        continue;
                    }
                    let r2 = (dy * dy + dx * dx) as f64;
                    let v = amp * (-r2 / (2.0 * sigma * sigma)).exp();
                    let p = y as usize * w + x as usize;
                    img[p] += v;
                    if v > amp / 2.0 {
                        mask[p] = 1.0;
                    }
                }
            }
        }
        for v in img.iter_mut() {
            *v = (*v + rng.normal(0.0, spec.noise_std)).clamp(0.0, 1.0);
        }
        out.push(Sample::new(
            Tensor::new(&[1, h, w], img)?,
            Tensor::new(&[1, h, w], mask)?,
            format!("synth_{idx:04}"),
        )?);
    }
    Ok(out)
}

fn data_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm")
    )
}

fn list_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| data_err(dir, e.to_string()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| data_err(dir, e.to_string()))?.path();
        if path.is_file() && is_image(&path) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if let Some(prev) = out.insert(stem, path.clone()) {
                return Err(data_err(&path, format!("duplicate stem with {}", prev.display())));
            }
        }
    }
    Ok(out)
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(|e| data_err(path, e.to_string()))?.to_luma8())
}

/// Load `dir/images/*` paired with `dir/masks/*` by file stem (PNG or PGM).
/// Images are bilinearly resized to `size`, masks nearest-neighbour resized
/// and binarized at `> 127`. An image whose mask has different dimensions
/// is a [`Error::SizeMismatch`].
pub fn load_dataset(dir: &Path, size: (usize, usize)) -> Result<Vec<Sample>> {
    let images = list_by_stem(&dir.join("images"))?;
    let masks = list_by_stem(&dir.join("masks"))?;
    if images.is_empty() {
        return Err(data_err(dir, "no PNG/PGM images found in images/"));
    }
    let (h, w) = size;
    let mut out = Vec::with_capacity(images.len());
    for (stem, img_path) in &images {
        let mask_path = masks
            .get(stem)
            .ok_or_else(|| data_err(img_path, format!("no mask named {stem}.* in masks/")))?;
        let img = read_gray(img_path)?;
        let mask = read_gray(mask_path)?;
        if img.dimensions() != mask.dimensions() {
            return Err(Error::SizeMismatch {
                path: mask_path.clone(),
                msg: format!("mask is {:?} but image is {:?}", mask.dimensions(), img.dimensions()),
            });
        }
        let img = imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
        let mask = imageops::resize(&mask, w as u32, h as u32, FilterType::Nearest);
        out.push(Sample::new(
            Tensor::new(&[1, h, w], img.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?,
            Tensor::new(&[1, h, w], mask.pixels().map(|p| if p.0[0] > 127 { 1.0 } else { 0.0 }).collect())?,
            stem.clone(),
        )?);
    }
    Ok(out)
}

/// Grayscale image from values in [0, 1] (clamped, rounded to 8 bits).
pub fn to_gray(values: &[f64], h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[y as usize * w + x as usize].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    })
}

/// Write samples as `dir/images/<id>.png` and `dir/masks/<id>.png`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for s in samples {
        let (h, w) = s.size();
        for (sub, t) in [("images", &s.image), ("masks", &s.mask)] {
            let path = dir.join(sub).join(format!("{}.png", s.id));
            to_gray(t.data(), h, w)
                .save(&path)
                .map_err(|e| data_err(&path, e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = Tensor::full(&[1, 2, 2], i as f64 / n as f64).unwrap();
                Sample::new(t, Tensor::zeros(&[1, 2, 2]).unwrap(), format!("s{i}")).unwrap()
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        for (n, tr) in [(10, 8), (7, 5), (5, 4)] {
            let (a, b) = split_dataset(dummy(n), 1).unwrap();
            assert_eq!((a.len(), b.len()), (tr, n - tr));
            let mut ids: Vec<_> = a.iter().chain(&b).map(|s| s.id.clone()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), n);
        }
        assert!(split_dataset(dummy(4), 1).is_err());
        let ids = |v: Vec<Sample>| v.into_iter().map(|s| s.id).collect::<Vec<_>>();
        assert_eq!(ids(split_dataset(dummy(10), 3).unwrap().0), ids(split_dataset(dummy(10), 3).unwrap().0));
    }

    #[test]
    fn synthetic_masks_are_small_and_present() {
        let spec = SyntheticSpec { count: 16, ..Default::default() };
        let data = synth_generate(&spec).unwrap();
        assert_eq!(data.len(), 16);
        for s in &data {
            let area = s.mask.data().iter().filter(|&&m| m == 1.0).count();
            assert!((1..=3 * 21).contains(&area), "{area}");
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let again = synth_generate(&spec).unwrap();
        assert!(data.iter().zip(&again).all(|(a, b)| a.image.bit_eq(&b.image) && a.mask.bit_eq(&b.mask)));
    }

    #[test]
    fn tight_blobs_cover_one_to_nine_pixels() {
        let spec = SyntheticSpec {
            count: 20,
            targets: (1, 1),
            sigma: (0.5, 0.5),
            amplitude: (1.0, 1.0),
            ..Default::default()
        };
        for s in synth_generate(&spec).unwrap() {
            let area = s.mask.data().iter().filter(|&&m| m == 1.0).count();
            assert!((1..=9).contains(&area));
        }
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticSpec { count: 0, ..Default::default() },
            SyntheticSpec { targets: (0, 2), ..Default::default() },
            SyntheticSpec { sigma: (0.1, 1.0), ..Default::default() },
        ] {
            assert!(synth_generate(&spec).is_err());
        }
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { count: 3, size: (16, 16), ..Default::default() };
        let data = synth_generate(&spec).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(dir.path(), (16, 16)).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert!(a.mask.bit_eq(&b.mask));
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-12);
        }
        assert!(load_dataset(&dir.path().join("missing"), (16, 16)).is_err());
    }
}
