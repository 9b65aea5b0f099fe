//! Pixel-intensity segmentation with a Poisson mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::density::empirical_pmf;
use crate::dm::{fit_multistart, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::io::GrayImage;
use crate::mixtures::{Family, MixtureSpec};

/// Class labels in `1..=K`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Parameter(format!(
                "{} labels do not fill a {width}x{height} image",
                labels.len()
            )));
        }
        Ok(LabelImage { width, height, labels })
    }

    /// Fraction of pixels whose label agrees with `truth`.
    pub fn accuracy(&self, truth: &LabelImage) -> Result<f64> {
        if self.labels.len() != truth.labels.len() {
            return Err(Error::Parameter("label images differ in size".into()));
        }
        let hit = self.labels.iter().zip(&truth.labels).filter(|(a, b)| a == b).count();
        Ok(hit as f64 / self.labels.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Gray image with class `j` drawn as `values[j - 1]`.
    pub fn render(&self, values: &[u8]) -> Result<GrayImage> {
        let px = self
            .labels
            .iter()
            .map(|&l| {
                values
                    .get(usize::from(l).wrapping_sub(1))
                    .copied()
                    .ok_or_else(|| Error::Parameter(format!("no display value for class {l}")))
            })
            .collect::<Result<Vec<u8>>>()?;
        GrayImage::new(self.width, self.height, px)
    }
}

/// Evenly spaced display values in `[0, 255]`, one per class.
pub fn display_values(k: usize) -> Vec<u8> {
    if k <= 1 {
        return vec![255; k];
    }
    (0..k).map(|j| (255.0 * j as f64 / (k - 1) as f64).round() as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Fitted mixture with components in increasing mean; class `j` is
    /// component `j - 1`.
    pub theta: MixtureSpec,
    pub labels: LabelImage,
    pub fit: FitResult,
}

/// Fits a K-component Poisson mixture to the pixel intensities (empirical
/// pmf) and labels each pixel by its largest responsibility.
pub fn segment(img: &GrayImage, k: usize, cfg: &FitConfig) -> Result<Segmentation> {
    if k < 2 {
        return Err(Error::Parameter("segmentation needs K >= 2".into()));
    }
    if k > 255 {
        return Err(Error::Parameter("at most 255 classes".into()));
    }
    if img.pixels.is_empty() {
        return Err(Error::EmptyData);
    }
    let counts: Vec<i64> = img.pixels.iter().map(|&p| i64::from(p)).collect();
    let est = empirical_pmf(&counts)?;
    let fit = fit_multistart(&est, Family::Poisson, k, cfg, 1)?;
    let theta = fit.theta_hat.order_by_mean();
    let mut by_value = [0u8; 256];
    for (v, slot) in by_value.iter_mut().enumerate() {
        let w = theta.responsibilities(v as f64)?;
        let mut best = 0;
        for j in 1..k {
            if w[j] > w[best] {
                best = j;
            }
        }
        *slot = best as u8 + 1;
    }
    let labels = img.pixels.iter().map(|&p| by_value[usize::from(p)]).collect();
    Ok(Segmentation { theta, labels: LabelImage::new(img.width, img.height, labels)?, fit })
}

/// Vertical bands of equal width, band `j` filled with `min(Poisson(λ_j), 255)`
/// draws. Returns the image and its true labels.
pub fn phantom(width: usize, height: usize, lambdas: &[f64], seed: u64) -> Result<(GrayImage, LabelImage)> {
    if lambdas.is_empty() || width < lambdas.len() || height == 0 {
        return Err(Error::Parameter("phantom needs at least one column per class".into()));
    }
    let dists = lambdas
        .iter()
        .map(|&l| Poisson::new(l).map_err(|e| Error::Parameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = lambdas.len();
    let mut px = Vec::with_capacity(width * height);
    let mut lab = Vec::with_capacity(width * height);
    for _ in 0..height {
        for c in 0..width {
            let j = c * k / width;
            px.push(dists[j].sample(&mut rng).min(255.0) as u8);
            lab.push(j as u8 + 1);
        }
    }
    Ok((GrayImage::new(width, height, px)?, LabelImage::new(width, height, lab)?))
}

/// Replaces each pixel with probability `prob` by `min(Poisson(mean), 255)`.
pub fn contaminate_image(img: &GrayImage, prob: f64, mean: f64, seed: u64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Parameter(format!("probability must lie in [0, 1], got {prob}")));
    }
    let d = Poisson::new(mean).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = img
        .pixels
        .iter()
        .map(|&p| {
            let hit = rng.random::<f64>() < prob;
            let v = d.sample(&mut rng).min(255.0) as u8;
            if hit { v } else { p }
        })
        .collect();
    GrayImage::new(img.width, img.height, px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::Divergence;

    #[test]
    fn display_spacing() {
        assert_eq!(display_values(3), vec![0, 128, 255]);
        assert_eq!(display_values(2), vec![0, 255]);
    }

    #[test]
    fn two_level_image_is_recovered_exactly() {
        let mut px = vec![20u8; 50];
        px.extend(vec![200u8; 50]);
        let img = GrayImage::new(10, 10, px).unwrap();
        let s = segment(&img, 2, &FitConfig::new(Divergence::Hellinger)).unwrap();
        let expect: Vec<u8> = (0..100).map(|i| if i < 50 { 1 } else { 2 }).collect();
        assert_eq!(s.labels.labels, expect);
        let out = s.labels.render(&display_values(2)).unwrap();
        assert_eq!(out.pixels[0], 0);
        assert_eq!(out.pixels[99], 255);
    }

    #[test]
    fn phantom_layout() {
        let (img, lab) = phantom(6, 2, &[10.0, 100.0, 200.0], 1).unwrap();
        assert_eq!(lab.labels, vec![1, 1, 2, 2, 3, 3, 1, 1, 2, 2, 3, 3]);
        assert_eq!(img.pixels.len(), 12);
        assert!(segment(&img, 1, &FitConfig::default()).is_err());
    }

    #[test]
    fn contamination_probability_extremes() {
        let (img, _) = phantom(30, 30, &[10.0, 100.0], 3).unwrap();
        assert_eq!(contaminate_image(&img, 0.0, 250.0, 1).unwrap(), img);
        let all = contaminate_image(&img, 1.0, 250.0, 1).unwrap();
        assert!(all.pixels.iter().all(|&p| p > 180));
    }
}
