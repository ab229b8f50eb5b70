//! Weak (geometric) and strong (geometric + intensity) augmentation
//! pipelines.
//!
//! The strong view reuses the weak view's geometric transform, so a pseudo
//! label predicted on the weak view stays pixel-aligned with the strong
//! view it supervises.

use crate::error::Result;
use crate::grid::{Grid, OneHotMap};
use crate::rng::SplitRng;

/// Sampling ranges for both pipelines; zeros give identity transforms.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    /// Spatial size the ranges apply to.
    pub height: usize,
    pub width: usize,
    /// Rotation drawn from [-rotation_deg, rotation_deg].
    pub rotation_deg: f64,
    /// Crop offsets drawn from [-crop_pad, crop_pad] pixels per axis.
    pub crop_pad: f64,
    pub flip_prob: f64,
    /// Elastic displacement magnitude drawn from [0, elastic_max] pixels.
    pub elastic_max: f64,
    /// Gaussian smoothing of the raw displacement field.
    pub elastic_sigma: f64,
    /// Brightness shift drawn from [-brightness, brightness].
    pub brightness: f64,
    /// Contrast scale drawn from [contrast.0, contrast.1].
    pub contrast: (f64, f64),
    /// Blur sigma drawn from [0, blur_sigma_max].
    pub blur_sigma_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            rotation_deg: 25.0,
            crop_pad: 8.0,
            flip_prob: 0.5,
            elastic_max: 4.0,
            elastic_sigma: 4.0,
            brightness: 0.2,
            contrast: (0.8, 1.2),
            blur_sigma_max: 1.0,
        }
    }
}

impl AugmentRanges {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rotation_deg: 0.0,
            crop_pad: 0.0,
            flip_prob: 0.0,
            elastic_max: 0.0,
            elastic_sigma: 1.0,
            brightness: 0.0,
            contrast: (1.0, 1.0),
            blur_sigma_max: 0.0,
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }
}

/// One sampled geometric transform. Applying the same parameters to an image
/// and its label keeps them pixel-aligned.
#[derive(Clone, Debug)]
pub struct GeoParams {
    pub crop_offset: (f64, f64),
    pub rotation_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    /// H×W×2 displacement field (dy, dx) in pixels, or None when disabled.
    pub elastic: Option<Grid>,
}

impl GeoParams {
    pub fn identity() -> Self {
        Self {
            crop_offset: (0.0, 0.0),
            rotation_deg: 0.0,
            flip_h: false,
            flip_v: false,
            elastic: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_offset == (0.0, 0.0)
            && self.rotation_deg == 0.0
            && !self.flip_h
            && !self.flip_v
            && self.elastic.is_none()
    }
}

/// One sampled intensity perturbation; applies to images only.
#[derive(Clone, Debug)]
pub struct IntensityParams {
    pub brightness_shift: f64,
    pub contrast_scale: f64,
    pub blur_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Draw geometric parameters uniformly from the configured ranges.
pub fn sample_weak(rng: &mut SplitRng, ranges: &AugmentRanges) -> GeoParams {
    let rotation_deg = if ranges.rotation_deg > 0.0 {
        rng.uniform_in(-ranges.rotation_deg, ranges.rotation_deg)
    } else {
        0.0
    };
    let crop_offset = if ranges.crop_pad > 0.0 {
        (
            rng.uniform_in(-ranges.crop_pad, ranges.crop_pad),
            rng.uniform_in(-ranges.crop_pad, ranges.crop_pad),
        )
    } else {
        (0.0, 0.0)
    };
    let (flip_h, flip_v) = if ranges.flip_prob > 0.0 {
        (rng.bernoulli(ranges.flip_prob), rng.bernoulli(ranges.flip_prob))
    } else {
        (false, false)
    };
    let elastic = if ranges.elastic_max > 0.0 {
        Some(sample_elastic_field(rng, ranges))
    } else {
        None
    };
    GeoParams { crop_offset, rotation_deg, flip_h, flip_v, elastic }
}

/// Smooth random displacement field with max magnitude drawn from
/// [0, elastic_max].
fn sample_elastic_field(rng: &mut SplitRng, ranges: &AugmentRanges) -> Grid {
    let (h, w) = (ranges.height, ranges.width);
    let magnitude = rng.uniform_in(0.0, ranges.elastic_max);
    let mut field = Grid::zeros(h, w, 2);
    for v in field.data_mut() {
        *v = rng.uniform_in(-1.0, 1.0);
    }
    let smoothed = gaussian_blur(&field, ranges.elastic_sigma);
    let peak = smoothed.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak < 1e-12 {
        return Grid::zeros(h, w, 2);
    }
    smoothed.map(|v| v * magnitude / peak)
}

/// Draw intensity parameters uniformly from the configured ranges.
pub fn sample_intensity(rng: &mut SplitRng, ranges: &AugmentRanges) -> IntensityParams {
    let brightness_shift = if ranges.brightness > 0.0 {
        rng.uniform_in(-ranges.brightness, ranges.brightness)
    } else {
        0.0
    };
    let contrast_scale = if ranges.contrast.0 < ranges.contrast.1 {
        rng.uniform_in(ranges.contrast.0, ranges.contrast.1)
    } else {
        ranges.contrast.0
    };
    let blur_sigma =
        if ranges.blur_sigma_max > 0.0 { rng.uniform_in(0.0, ranges.blur_sigma_max) } else { 0.0 };
    IntensityParams { brightness_shift, contrast_scale, blur_sigma }
}

/// Apply a geometric transform. Out-of-bounds samples take the border value;
/// nearest interpolation copies all channels from one source pixel, so
/// one-hot inputs stay one-hot.
pub fn apply_geo(grid: &Grid, params: &GeoParams, interp: Interp) -> Grid {
    if params.is_identity() {
        return grid.clone();
    }
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = params.rotation_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let mut out = Grid::zeros(h, w, c);

    for r in 0..h {
        for col in 0..w {
            let mut x = col as f64;
            let mut y = r as f64;
            if params.flip_h {
                x = w as f64 - 1.0 - x;
            }
            if params.flip_v {
                y = h as f64 - 1.0 - y;
            }
            // Inverse rotation about the grid center.
            let dx = x - cx;
            let dy = y - cy;
            let mut sx = cx + cos_t * dx + sin_t * dy;
            let mut sy = cy - sin_t * dx + cos_t * dy;
            sy += params.crop_offset.0;
            sx += params.crop_offset.1;
            if let Some(e) = &params.elastic {
                sy += e.get(r, col, 0);
                sx += e.get(r, col, 1);
            }
            match interp {
                Interp::Nearest => {
                    let ny = (sy + 0.5).floor().clamp(0.0, h as f64 - 1.0) as usize;
                    let nx = (sx + 0.5).floor().clamp(0.0, w as f64 - 1.0) as usize;
                    for k in 0..c {
                        out.set(r, col, k, grid.get(ny, nx, k));
                    }
                }
                Interp::Bilinear => {
                    let fy = sy.clamp(0.0, h as f64 - 1.0);
                    let fx = sx.clamp(0.0, w as f64 - 1.0);
                    let y0 = fy.floor() as usize;
                    let x0 = fx.floor() as usize;
                    let y1 = (y0 + 1).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let ty = fy - y0 as f64;
                    let tx = fx - x0 as f64;
                    for k in 0..c {
                        let top = grid.get(y0, x0, k) * (1.0 - tx) + grid.get(y0, x1, k) * tx;
                        let bot = grid.get(y1, x0, k) * (1.0 - tx) + grid.get(y1, x1, k) * tx;
                        out.set(r, col, k, top * (1.0 - ty) + bot * ty);
                    }
                }
            }
        }
    }
    out
}

/// Nearest-neighbor transform of a label map; output revalidated as one-hot.
pub fn apply_geo_onehot(label: &OneHotMap, params: &GeoParams) -> Result<OneHotMap> {
    OneHotMap::new(apply_geo(label.grid(), params, Interp::Nearest))
}

/// Separable Gaussian blur truncated at 3 sigma, replicate border.
pub fn gaussian_blur(img: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    if radius == 0 {
        return img.clone();
    }
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= norm;
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut horiz = Grid::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let sx = (x as i64 + j as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += kv * img.get(y, sx, ch);
                }
                horiz.set(y, x, ch, acc);
            }
        }
    }
    let mut out = Grid::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let sy = (y as i64 + j as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += kv * horiz.get(sy, x, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}

/// Intensity perturbation: clamp(contrast * blur(image) + brightness, -1, 1).
pub fn apply_strong(image: &Grid, p: &IntensityParams) -> Grid {
    let blurred = gaussian_blur(image, p.blur_sigma);
    blurred.map(|v| (p.contrast_scale * v + p.brightness_shift).clamp(-1.0, 1.0))
}

/// Produce the weak and strong views of an unlabeled image from one
/// geometric draw; the strong view adds only non-geometric perturbations on
/// top of the weak view.
pub fn make_views(u: &Grid, rng: &mut SplitRng, ranges: &AugmentRanges) -> (Grid, Grid) {
    let g = sample_weak(rng, ranges);
    let ip = sample_intensity(rng, ranges);
    let u_w = apply_geo(u, &g, Interp::Bilinear);
    let u_s = apply_strong(&u_w, &ip);
    (u_w, u_s)
}

/// Like [`make_views`] but also returns the geometric draw, for callers that
/// need to align diagnostics with the views.
pub fn make_views_with_geo(
    u: &Grid,
    rng: &mut SplitRng,
    ranges: &AugmentRanges,
) -> (Grid, Grid, GeoParams) {
    let g = sample_weak(rng, ranges);
    let ip = sample_intensity(rng, ranges);
    let u_w = apply_geo(u, &g, Interp::Bilinear);
    let u_s = apply_strong(&u_w, &ip);
    (u_w, u_s, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_image(rng: &mut SplitRng, h: usize, w: usize) -> Grid {
        Grid::new(h, w, 1, (0..h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_ranges_sample_identity() {
        let ranges = AugmentRanges::identity(8, 8);
        let g = sample_weak(&mut SplitRng::new(1), &ranges);
        assert!(g.is_identity());
        let ip = sample_intensity(&mut SplitRng::new(1), &ranges);
        assert_eq!(ip.brightness_shift, 0.0);
        assert_eq!(ip.contrast_scale, 1.0);
        assert_eq!(ip.blur_sigma, 0.0);
    }

    #[test]
    fn same_rng_same_params() {
        let ranges = AugmentRanges::default().with_size(8, 8);
        let a = sample_weak(&mut SplitRng::new(7), &ranges);
        let b = sample_weak(&mut SplitRng::new(7), &ranges);
        assert_eq!(a.rotation_deg, b.rotation_deg);
        assert_eq!(a.crop_offset, b.crop_offset);
        assert_eq!(a.flip_h, b.flip_h);
        assert_eq!(a.flip_v, b.flip_v);
    }

    #[test]
    fn rotation_draw_mean_is_centered() {
        let ranges = AugmentRanges::default().with_size(4, 4);
        let mut rng = SplitRng::new(8);
        let mut acc = 0.0;
        for _ in 0..1000 {
            acc += sample_weak(&mut rng, &ranges).rotation_deg;
        }
        let mean = acc / 1000.0;
        assert!(mean.abs() < 2.0, "rotation mean {mean}");
    }

    #[test]
    fn identity_geo_is_identity() {
        let mut rng = SplitRng::new(9);
        let img = rand_image(&mut rng, 6, 7);
        let out = apply_geo(&img, &GeoParams::identity(), Interp::Bilinear);
        assert_eq!(out, img);
    }

    #[test]
    fn horizontal_flip_is_involution() {
        let mut rng = SplitRng::new(10);
        let img = rand_image(&mut rng, 5, 8);
        let flip = GeoParams { flip_h: true, ..GeoParams::identity() };
        let once = apply_geo(&img, &flip, Interp::Bilinear);
        let twice = apply_geo(&once, &flip, Interp::Bilinear);
        assert_eq!(twice, img);
        assert_eq!(once.get(0, 0, 0), img.get(0, 7, 0));
    }

    #[test]
    fn quarter_turn_moves_delta_to_rotated_coordinate() {
        // Delta at (r=1, c=2) on 5x5; rotating the image content by +90
        // degrees about the center sends it to (r=2, c=3).
        let mut img = Grid::zeros(5, 5, 1);
        img.set(1, 2, 0, 1.0);
        let rot = GeoParams { rotation_deg: 90.0, ..GeoParams::identity() };
        let out = apply_geo(&img, &rot, Interp::Bilinear);
        assert!((out.get(2, 3, 0) - 1.0).abs() < 1e-9);
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "mass should stay on one pixel");
    }

    #[test]
    fn nearest_keeps_labels_one_hot() {
        let mut rng = SplitRng::new(11);
        let ranges = AugmentRanges::default().with_size(9, 9);
        let label = OneHotMap::from_classes(
            9,
            9,
            3,
            &(0..81).map(|_| rng.below(3)).collect::<Vec<_>>(),
        )
        .unwrap();
        for _ in 0..25 {
            let g = sample_weak(&mut rng, &ranges);
            assert!(apply_geo_onehot(&label, &g).is_ok());
        }
    }

    #[test]
    fn strong_identity_params() {
        let mut rng = SplitRng::new(12);
        let img = rand_image(&mut rng, 6, 6);
        let p = IntensityParams { brightness_shift: 0.0, contrast_scale: 1.0, blur_sigma: 0.0 };
        assert_eq!(apply_strong(&img, &p), img);
    }

    #[test]
    fn strong_shift_on_zero_image() {
        let img = Grid::zeros(4, 4, 1);
        let p = IntensityParams { brightness_shift: 0.5, contrast_scale: 1.0, blur_sigma: 0.0 };
        let out = apply_strong(&img, &p);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn blur_preserves_mean_of_interior_supported_image() {
        // Support away from the border by > 3 sigma, so replicate padding
        // never sees nonzero values and the normalized kernel keeps the mean.
        let mut img = Grid::zeros(16, 16, 1);
        let mut rng = SplitRng::new(13);
        for y in 6..10 {
            for x in 6..10 {
                img.set(y, x, 0, rng.uniform_in(-1.0, 1.0));
            }
        }
        let before: f64 = img.data().iter().sum::<f64>() / 256.0;
        let out = gaussian_blur(&img, 1.0);
        let after: f64 = out.data().iter().sum::<f64>() / 256.0;
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn views_share_one_geometric_draw() {
        // make_views must equal an explicit sample_weak + sample_intensity
        // from the same stream: exactly one geometric draw, in that order.
        let mut rng = SplitRng::new(14);
        let ranges = AugmentRanges::default().with_size(8, 8);
        let u = rand_image(&mut rng, 8, 8);

        let mut a = SplitRng::new(99);
        let (u_w, u_s) = make_views(&u, &mut a, &ranges);

        let mut b = SplitRng::new(99);
        let g = sample_weak(&mut b, &ranges);
        let ip = sample_intensity(&mut b, &ranges);
        let expect_w = apply_geo(&u, &g, Interp::Bilinear);
        let expect_s = apply_strong(&expect_w, &ip);
        assert_eq!(u_w, expect_w);
        assert_eq!(u_s, expect_s);
    }

    #[test]
    fn views_identical_without_intensity_ranges() {
        let mut ranges = AugmentRanges::default().with_size(8, 8);
        ranges.brightness = 0.0;
        ranges.contrast = (1.0, 1.0);
        ranges.blur_sigma_max = 0.0;
        let mut rng = SplitRng::new(15);
        let u = rand_image(&mut rng, 8, 8);
        let (u_w, u_s) = make_views(&u, &mut rng, &ranges);
        assert_eq!(u_w, u_s);
    }

    #[test]
    fn label_alignment_across_views() {
        // A label carried through the shared geometric transform aligns
        // exactly with both views by construction.
        let mut rng = SplitRng::new(16);
        let ranges = AugmentRanges::default().with_size(8, 8);
        let u = rand_image(&mut rng, 8, 8);
        let label = OneHotMap::from_classes(
            8,
            8,
            2,
            &(0..64).map(|_| rng.below(2)).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut s1 = SplitRng::new(42);
        let (_, _, g) = make_views_with_geo(&u, &mut s1, &ranges);
        let l1 = apply_geo_onehot(&label, &g).unwrap();
        let l2 = apply_geo_onehot(&label, &g).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn same_rng_same_views() {
        let mut rng = SplitRng::new(17);
        let ranges = AugmentRanges::default().with_size(8, 8);
        let u = rand_image(&mut rng, 8, 8);
        let (w1, s1) = make_views(&u, &mut SplitRng::new(5), &ranges);
        let (w2, s2) = make_views(&u, &mut SplitRng::new(5), &ranges);
        assert_eq!(w1, w2);
        assert_eq!(s1, s2);
    }
}
