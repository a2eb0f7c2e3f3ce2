//! Datasets: MNIST-style IDX files and seeded synthetic blobs.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Result, WingsError};
use crate::linalg::Matrix;
use crate::rng::Rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        ensure!(
            labels.len() == samples.rows(),
            "{} labels for {} samples",
            labels.len(),
            samples.rows()
        );
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(WingsError::contract(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        ensure!(
            samples.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "sample values must lie in [0, 1]"
        );
        Ok(Dataset {
            samples,
            labels,
            n_classes,
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Samples and labels at the given indices, in order.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.samples.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (samples, labels) = self.batch(idx);
        Dataset {
            samples,
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Rows `start..end`.
    pub fn range(&self, start: usize, end: usize) -> Dataset {
        let idx: Vec<usize> = (start..end.min(self.len())).collect();
        self.subset(&idx)
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        ensure!(self.dim() == other.dim(), "dataset dimension mismatch");
        let mut data = self.samples.data().to_vec();
        data.extend_from_slice(other.samples.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            samples: Matrix::from_raw(labels.len(), self.dim(), data),
            labels,
            n_classes: self.n_classes.max(other.n_classes),
        })
    }
}

/// Read an IDX image file (`0x00000803`) and label file (`0x00000801`).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let be = |b: &[u8], at: usize, what: &str| -> Result<u32> {
        b.get(at..at + 4)
            .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
            .ok_or_else(|| WingsError::format(at, format!("truncated {what} header")))
    };
    let magic = be(images, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(WingsError::format(
            0,
            format!("bad image magic {magic:#010x}"),
        ));
    }
    let n = be(images, 4, "image")? as usize;
    let rows = be(images, 8, "image")? as usize;
    let cols = be(images, 12, "image")? as usize;
    let d = rows * cols;
    let need = 16 + n * d;
    if images.len() < need {
        return Err(WingsError::format(
            images.len(),
            format!("image file truncated: expected {need} bytes"),
        ));
    }

    let lmagic = be(labels, 0, "label")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(WingsError::format(
            0,
            format!("bad label magic {lmagic:#010x}"),
        ));
    }
    let ln = be(labels, 4, "label")? as usize;
    if ln != n {
        return Err(WingsError::format(
            4,
            format!("label count {ln} does not match image count {n}"),
        ));
    }
    if labels.len() < 8 + n {
        return Err(WingsError::format(
            labels.len(),
            format!("label file truncated: expected {} bytes", 8 + n),
        ));
    }

    let pixels: Vec<f32> = images[16..need].iter().map(|&p| p as f32 / 255.0).collect();
    let labs: Vec<usize> = labels[8..8 + n].iter().map(|&l| l as usize).collect();
    let n_classes = labs.iter().max().map_or(1, |m| m + 1);
    Ok(Dataset {
        samples: Matrix::from_raw(n, d, pixels),
        labels: labs,
        n_classes,
    })
}

/// Encode as IDX. Pixels are rounded to the nearest multiple of 1/255.
pub fn encode_idx(ds: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    ensure!(
        rows * cols == ds.dim(),
        "image shape {rows}x{cols} does not match dimension {}",
        ds.dim()
    );
    ensure!(ds.n_classes <= 256, "IDX labels are single bytes");
    let n = u32::try_from(ds.len()).map_err(|_| WingsError::contract("too many samples"))?;
    let mut img = Vec::with_capacity(16 + ds.samples.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(ds.samples.data().iter().map(|&v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((img, lab))
}

pub fn write_idx(
    ds: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let (img, lab) = encode_idx(ds, rows, cols)?;
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Load the MNIST train or test split from a directory of un-gzipped files.
pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    for sep in ["-", "."] {
        let images = dir.join(format!("{prefix}-images{sep}idx3-ubyte"));
        let labels = dir.join(format!("{prefix}-labels{sep}idx1-ubyte"));
        if images.exists() && labels.exists() {
            return load_idx(&images, &labels);
        }
    }
    Err(WingsError::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no MNIST {prefix} files in {}", dir.display()),
    )))
}

/// Gaussian class blobs squashed into [0, 1].
///
/// Each class draws a latent `z ~ N(mu_c, I)`, where the class means are
/// mutually orthogonal (when `n_classes <= d`) and pairwise `separation`
/// apart. Samples are `clamp(0.1 + 0.1 z, 0, 1)`, so the separation is in
/// units of the latent noise scale. Labels are balanced and shuffled.
pub fn gen_synth(n: usize, d: usize, n_classes: usize, separation: f32, seed: u64) -> Dataset {
    assert!(
        n >= 1 && d >= 1 && n_classes >= 1,
        "gen_synth needs n, d, n_classes >= 1"
    );
    let root = Rng::new(seed);
    let mut mrng = root.derive("synth-means", &[]);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut v: Vec<f64> = (0..d).map(|_| mrng.normal()).collect();
        if dirs.len() < d {
            for u in &dirs {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|a| *a /= norm);
        dirs.push(v);
    }
    let radius = separation as f64 / std::f64::consts::SQRT_2;

    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let order = root.derive("synth-order", &[]).permutation(n);
    labels = order.iter().map(|&i| labels[i]).collect();

    let mut srng = root.derive("synth-samples", &[]);
    let mut data = Vec::with_capacity(n * d);
    for &c in &labels {
        for &u in &dirs[c][..d] {
            let z = radius * u + srng.normal();
            data.push((0.1 + 0.1 * z).clamp(0.0, 1.0) as f32);
        }
    }
    Dataset {
        samples: Matrix::from_raw(n, d, data),
        labels,
        n_classes,
    }
}

/// Stroke images, `h x w`, one channel, values in [0, 1].
///
/// Each class gets a template of three random line strokes. A sample is its
/// class template shifted by up to two pixels each way, scaled by an
/// intensity in [0.6, 1], plus Gaussian pixel noise of std `noise`.
pub fn gen_synth_images(
    n: usize,
    h: usize,
    w: usize,
    n_classes: usize,
    noise: f32,
    seed: u64,
) -> Dataset {
    assert!(
        n >= 1 && h >= 8 && w >= 8 && n_classes >= 1,
        "gen_synth_images needs n >= 1, h, w >= 8"
    );
    let root = Rng::new(seed);
    let mut trng = root.derive("synth-templates", &[]);
    let templates: Vec<Vec<f32>> = (0..n_classes)
        .map(|_| {
            let mut t = vec![0.0f32; h * w];
            for _ in 0..3 {
                let p0 = (
                    trng.uniform(3.0, h as f32 - 4.0),
                    trng.uniform(3.0, w as f32 - 4.0),
                );
                let p1 = (
                    trng.uniform(3.0, h as f32 - 4.0),
                    trng.uniform(3.0, w as f32 - 4.0),
                );
                for y in 0..h {
                    for x in 0..w {
                        let d = segment_distance((y as f32, x as f32), p0, p1);
                        let v = (-d * d / 2.0).exp();
                        t[y * w + x] = t[y * w + x].max(v);
                    }
                }
            }
            t
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let order = root.derive("synth-order", &[]).permutation(n);
    labels = order.iter().map(|&i| labels[i]).collect();

    let mut srng = root.derive("synth-samples", &[]);
    let mut data = Vec::with_capacity(n * h * w);
    for &c in &labels {
        let dy = srng.below(5) as isize - 2;
        let dx = srng.below(5) as isize - 2;
        let a = srng.uniform(0.6, 1.0);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (sy, sx) = (y - dy, x - dx);
                let base = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    templates[c][sy as usize * w + sx as usize]
                } else {
                    0.0
                };
                let v = a * base + noise * srng.normal() as f32;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Dataset {
        samples: Matrix::from_raw(n, h * w, data),
        labels,
        n_classes,
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * vx - p.0, a.1 + t * vy - p.1);
    (qx * qx + qy * qy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0]]);
        assert!(Dataset::new(m.clone(), vec![0, 1], 2).is_err());
        assert!(Dataset::new(m.clone(), vec![2], 2).is_err());
        assert!(Dataset::new(Matrix::from_rows(&[vec![1.5]]), vec![0], 1).is_err());
        assert!(Dataset::new(m, vec![1], 2).is_ok());
    }

    #[test]
    fn two_image_fixture_scales_endpoints() {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 128, 255, 7]);
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[3, 1]);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples().get(0, 0), 0.0);
        assert_eq!(ds.samples().get(1, 0), 1.0);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.n_classes(), 4);
    }

    #[test]
    fn label_count_mismatch_is_format_error() {
        let ds = gen_synth(2, 4, 2, 1.0, 0);
        let (img, _) = encode_idx(&ds, 2, 2).unwrap();
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&3u32.to_be_bytes());
        lab.extend_from_slice(&[0, 1, 0]);
        assert!(matches!(
            parse_idx(&img, &lab),
            Err(WingsError::Format { .. })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let ds = gen_synth(3, 4, 2, 1.0, 0);
        let (mut img, lab) = encode_idx(&ds, 2, 2).unwrap();
        let short = &img[..img.len() - 1];
        assert!(matches!(
            parse_idx(short, &lab),
            Err(WingsError::Format { .. })
        ));
        img[3] = 0x01;
        assert!(matches!(
            parse_idx(&img, &lab),
            Err(WingsError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn idx_round_trip_of_quantized_fixture() {
        let ds = gen_synth(20, 6, 3, 4.0, 9);
        let (img, lab) = encode_idx(&ds, 2, 3).unwrap();
        let back = parse_idx(&img, &lab).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.samples().data().iter().zip(ds.samples().data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        // once quantized, the round trip is exact
        let (img2, lab2) = encode_idx(&back, 2, 3).unwrap();
        assert_eq!(parse_idx(&img2, &lab2).unwrap(), back);
    }

    #[test]
    fn synth_is_deterministic_and_in_range() {
        let a = gen_synth(100, 5, 3, 6.0, 42);
        let b = gen_synth(100, 5, 3, 6.0, 42);
        assert_eq!(a, b);
        assert_ne!(a, gen_synth(100, 5, 3, 6.0, 43));
        assert!(a.samples().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.labels().iter().all(|&l| l < 3));
    }

    #[test]
    fn synth_class_means_are_separated() {
        // With little clamping (separation small relative to the 0.1 offset
        // scale), empirical mean distance in x-space is ~0.1 * separation.
        let ds = gen_synth(20_000, 8, 2, 3.0, 5);
        let mut mean = [[0.0f64; 8]; 2];
        let mut cnt = [0usize; 2];
        for i in 0..ds.len() {
            let c = ds.labels()[i];
            cnt[c] += 1;
            for (j, m) in mean[c].iter_mut().enumerate() {
                *m += ds.samples().get(i, j) as f64;
            }
        }
        let dist: f64 = (0..8)
            .map(|j| (mean[0][j] / cnt[0] as f64 - mean[1][j] / cnt[1] as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        // clamping at zero shrinks it somewhat
        assert!(dist > 0.2 && dist < 0.32, "distance {dist}");
    }

    #[test]
    fn stroke_images_are_seeded_and_bounded() {
        let a = gen_synth_images(50, 12, 12, 5, 0.2, 3);
        assert_eq!(a.dim(), 144);
        assert!(a.samples().data().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..5 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 10);
        }
        assert_eq!(a, gen_synth_images(50, 12, 12, 5, 0.2, 3));
        assert_ne!(a, gen_synth_images(50, 12, 12, 5, 0.2, 4));
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(segment_distance((0.0, 0.0), (0.0, 0.0), (0.0, 4.0)), 0.0);
        assert_eq!(segment_distance((3.0, 2.0), (0.0, 0.0), (0.0, 4.0)), 3.0);
        assert_eq!(segment_distance((0.0, 7.0), (0.0, 0.0), (0.0, 4.0)), 3.0);
    }
}
