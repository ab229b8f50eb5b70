//! Unified copy-paste: one centered binary mask drives both embedding
//! directions between a labeled and an unlabeled sample at once, producing
//! intermediate images together with their mixed probability maps, pseudo
//! labels, and weight maps.

use crate::error::{Error, Result};
use crate::grid::{elementwise_mix, Grid, OneHotMap};
use crate::rng::SplitRng;

/// Binary H×W mask whose ones form a single axis-aligned rectangle centered
/// on the image center.
#[derive(Clone, Debug)]
pub struct CenterMask {
    grid: Grid,
    pub ratio: (f64, f64),
}

impl CenterMask {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Complement mask (roles of the two directions exchanged).
    pub fn inverted(&self) -> CenterMask {
        CenterMask { grid: self.grid.map(|v| 1.0 - v), ratio: self.ratio }
    }

    /// Build directly from size ratios; `generate_center_mask` draws them.
    pub fn from_ratios(h: usize, w: usize, r_h: f64, r_w: f64) -> Result<CenterMask> {
        if !(0.0..=1.0).contains(&r_h) || !(0.0..=1.0).contains(&r_w) {
            return Err(Error::Config(format!("mask ratios ({r_h}, {r_w}) outside [0, 1]")));
        }
        let round_half_up = |x: f64| (x + 0.5).floor() as usize;
        let rect_h = round_half_up(r_h * h as f64).min(h);
        let rect_w = round_half_up(r_w * w as f64).min(w);
        let y0 = (h - rect_h) / 2;
        let x0 = (w - rect_w) / 2;
        let mut grid = Grid::zeros(h, w, 1);
        for y in y0..y0 + rect_h {
            for x in x0..x0 + rect_w {
                grid.set(y, x, 0, 1.0);
            }
        }
        Ok(CenterMask { grid, ratio: (r_h, r_w) })
    }
}

/// Draw a centered rectangle mask with height/width ratios sampled
/// independently and uniformly from `ratio_range`.
pub fn generate_center_mask(
    h: usize,
    w: usize,
    ratio_range: (f64, f64),
    rng: &mut SplitRng,
) -> Result<CenterMask> {
    let (lo, hi) = ratio_range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Config(format!("invalid mask ratio range [{lo}, {hi}]")));
    }
    let r_h = rng.uniform_in(lo, hi);
    let r_w = rng.uniform_in(lo, hi);
    CenterMask::from_ratios(h, w, r_h, r_w)
}

/// Both intermediate samples and everything riding along with them.
///
/// `*_in` carries labeled content inside the mask; `*_out` is the
/// complementary direction.
#[derive(Clone, Debug)]
pub struct MixedTriple {
    pub sample_in: Grid,
    pub sample_out: Grid,
    pub prob_in: Grid,
    pub prob_out: Grid,
    pub pseudo_in: OneHotMap,
    pub pseudo_out: OneHotMap,
    pub weight_in: Grid,
    pub weight_out: Grid,
}

/// Apply both copy-paste directions with one mask.
///
/// Labeled regions are fully trusted: the mixed weight maps carry 1 where
/// ground truth landed and inherit the confidence weight `w` elsewhere.
pub fn unified_copy_paste(
    x_w: &Grid,
    y_w: &OneHotMap,
    u_s: &Grid,
    p_w: &Grid,
    p_hat: &OneHotMap,
    w: &Grid,
    m: &CenterMask,
) -> Result<MixedTriple> {
    let mask = m.grid();
    let sample_in = elementwise_mix(x_w, u_s, mask)?;
    let sample_out = elementwise_mix(u_s, x_w, mask)?;
    let prob_in = elementwise_mix(y_w.grid(), p_w, mask)?;
    let prob_out = elementwise_mix(p_w, y_w.grid(), mask)?;
    let pseudo_in = OneHotMap::new(elementwise_mix(y_w.grid(), p_hat.grid(), mask)?)?;
    let pseudo_out = OneHotMap::new(elementwise_mix(p_hat.grid(), y_w.grid(), mask)?)?;
    let ones = Grid::filled(mask.height(), mask.width(), 1, 1.0);
    let weight_in = elementwise_mix(&ones, w, mask)?;
    let weight_out = elementwise_mix(w, &ones, mask)?;
    Ok(MixedTriple {
        sample_in,
        sample_out,
        prob_in,
        prob_out,
        pseudo_in,
        pseudo_out,
        weight_in,
        weight_out,
    })
}

/// Reassemble a pseudo label for the unlabeled image from the regions of the
/// two intermediate predictions that carried unlabeled content: the
/// out-variant inside the mask, the in-variant outside.
pub fn merge_unlabeled_regions(
    p_hat_w_out: &OneHotMap,
    p_hat_w_in: &OneHotMap,
    m: &CenterMask,
) -> Result<OneHotMap> {
    OneHotMap::new(elementwise_mix(p_hat_w_out.grid(), p_hat_w_in.grid(), m.grid())?)
}
