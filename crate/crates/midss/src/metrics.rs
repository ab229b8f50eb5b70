//! Segmentation quality metrics: Dice, Jaccard, 95th-percentile Hausdorff
//! distance, and average surface distance, aggregated per domain and class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::OneHotMap;

/// Binary H×W mask.
#[derive(Clone, Debug)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), h * w);
        Self { h, w, bits }
    }

    /// Mask of pixels predicted/labeled as class `c`.
    pub fn from_onehot_class(map: &OneHotMap, c: usize) -> Self {
        let g = map.grid();
        let (h, w) = (g.height(), g.width());
        let bits = (0..h * w).map(|i| g.data()[i * g.channels() + c] == 1.0).collect();
        Self { h, w, bits }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Mask pixels with at least one background 4-neighbor; pixels beyond
    /// the image border count as background.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = (y == 0 || !self.get(y - 1, x))
                    || (y + 1 == self.h || !self.get(y + 1, x))
                    || (x == 0 || !self.get(y, x - 1))
                    || (x + 1 == self.w || !self.get(y, x + 1));
                if edge {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// 2 |P∩G| / (|P| + |G|); both empty -> 1.
pub fn dice(pred: &Mask, gt: &Mask) -> f64 {
    assert_eq!((pred.h, pred.w), (gt.h, gt.w), "mask shapes differ");
    let inter = pred.bits.iter().zip(&gt.bits).filter(|(a, b)| **a && **b).count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / total as f64
}

/// |P∩G| / |P∪G|; both empty -> 1.
pub fn jaccard(pred: &Mask, gt: &Mask) -> f64 {
    assert_eq!((pred.h, pred.w), (gt.h, gt.w), "mask shapes differ");
    let inter = pred.bits.iter().zip(&gt.bits).filter(|(a, b)| **a && **b).count();
    let union = pred.bits.iter().zip(&gt.bits).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

fn directed_distances(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(gy, gx)| {
                    let dy = y as f64 - gy as f64;
                    let dx = x as f64 - gx as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Percentile by linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// (hd95, asd) over boundary sets with exact pairwise distances.
///
/// hd95 is the 95th percentile of the pooled directed boundary-distance
/// multiset; asd is the mean of the two directed mean distances. One empty
/// mask yields the image diagonal as a sentinel; two empty masks yield 0.
pub fn surface_distances(pred: &Mask, gt: &Mask) -> (f64, f64) {
    assert_eq!((pred.h, pred.w), (gt.h, gt.w), "mask shapes differ");
    let bp = pred.boundary();
    let bg = gt.boundary();
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return (0.0, 0.0),
        (true, false) | (false, true) => {
            let diag = ((pred.h * pred.h + pred.w * pred.w) as f64).sqrt();
            return (diag, diag);
        }
        _ => {}
    }
    let d_pg = directed_distances(&bp, &bg);
    let d_gp = directed_distances(&bg, &bp);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let asd = 0.5 * (mean(&d_pg) + mean(&d_gp));
    let mut pooled: Vec<f64> = d_pg.iter().chain(d_gp.iter()).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let hd95 = percentile(&pooled, 0.95);
    (hd95, asd)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MetricQuad {
    pub dc: f64,
    pub jc: f64,
    pub hd95: f64,
    pub asd: f64,
}

/// Per-domain, per-class metrics plus grand averages.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalResult {
    /// domain id -> class id -> metrics (means over that domain's samples).
    pub domains: BTreeMap<u32, BTreeMap<usize, MetricQuad>>,
    pub averages: MetricQuad,
}

impl EvalResult {
    /// Assemble from per-sample measurements.
    pub fn from_samples(samples: &[(u32, usize, MetricQuad)]) -> EvalResult {
        let mut sums: BTreeMap<(u32, usize), (MetricQuad, usize)> = BTreeMap::new();
        for &(domain, class, q) in samples {
            let e = sums.entry((domain, class)).or_default();
            e.0.dc += q.dc;
            e.0.jc += q.jc;
            e.0.hd95 += q.hd95;
            e.0.asd += q.asd;
            e.1 += 1;
        }
        let mut domains: BTreeMap<u32, BTreeMap<usize, MetricQuad>> = BTreeMap::new();
        let mut avg = MetricQuad::default();
        let mut cells = 0usize;
        for ((domain, class), (sum, n)) in sums {
            let q = MetricQuad {
                dc: sum.dc / n as f64,
                jc: sum.jc / n as f64,
                hd95: sum.hd95 / n as f64,
                asd: sum.asd / n as f64,
            };
            domains.entry(domain).or_default().insert(class, q);
            avg.dc += q.dc;
            avg.jc += q.jc;
            avg.hd95 += q.hd95;
            avg.asd += q.asd;
            cells += 1;
        }
        if cells > 0 {
            avg.dc /= cells as f64;
            avg.jc /= cells as f64;
            avg.hd95 /= cells as f64;
            avg.asd /= cells as f64;
        }
        EvalResult { domains, averages: avg }
    }

    /// Mean Dice over the per-domain per-class cells of selected domains.
    pub fn mean_dice_over(&self, mut keep: impl FnMut(u32) -> bool) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (&d, classes) in &self.domains {
            if !keep(d) {
                continue;
            }
            for q in classes.values() {
                acc += q.dc;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

/// Compare a prediction against ground truth for every foreground class.
pub fn per_class_metrics(pred: &OneHotMap, gt: &OneHotMap) -> Vec<(usize, MetricQuad)> {
    let classes = gt.grid().channels();
    (1..classes)
        .map(|c| {
            let pm = Mask::from_onehot_class(pred, c);
            let gm = Mask::from_onehot_class(gt, c);
            let (hd95, asd) = surface_distances(&pm, &gm);
            (c, MetricQuad { dc: dice(&pm, &gm), jc: jaccard(&pm, &gm), hd95, asd })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn mask_from(h: usize, w: usize, ones: &[(usize, usize)]) -> Mask {
        let mut bits = vec![false; h * w];
        for &(y, x) in ones {
            bits[y * w + x] = true;
        }
        Mask::new(h, w, bits)
    }

    #[test]
    fn dice_jaccard_basics() {
        let a = mask_from(4, 4, &[(1, 1), (1, 2), (2, 1)]);
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &a), 1.0);
        let b = mask_from(4, 4, &[(3, 3)]);
        assert_eq!(dice(&a, &b), 0.0);
        assert_eq!(jaccard(&a, &b), 0.0);
        let empty = mask_from(4, 4, &[]);
        assert_eq!(dice(&empty, &empty), 1.0);
        assert_eq!(jaccard(&empty, &empty), 1.0);
    }

    #[test]
    fn counted_fixture() {
        // |P|=4, |G|=6, |P∩G|=3 -> DC 0.6, JC 3/7.
        let p = mask_from(4, 6, &[(0, 0), (0, 1), (0, 2), (3, 5)]);
        let g = mask_from(4, 6, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        let dc = dice(&p, &g);
        let jc = jaccard(&p, &g);
        assert!((dc - 0.6).abs() < 1e-15);
        assert!((jc - 3.0 / 7.0).abs() < 1e-15);
        assert!((jc - dc / (2.0 - dc)).abs() < 1e-15);
    }

    #[test]
    fn jc_dc_identity_on_random_masks() {
        let mut rng = SplitRng::new(1);
        for _ in 0..1000 {
            let bits_p: Vec<bool> = (0..48).map(|_| rng.bernoulli(0.4)).collect();
            let bits_g: Vec<bool> = (0..48).map(|_| rng.bernoulli(0.4)).collect();
            let p = Mask::new(6, 8, bits_p);
            let g = Mask::new(6, 8, bits_g);
            let dc = dice(&p, &g);
            let jc = jaccard(&p, &g);
            assert!((jc - dc / (2.0 - dc)).abs() < 1e-12);
            assert!(jc <= dc + 1e-12);
            assert_eq!(dice(&p, &g), dice(&g, &p));
            assert_eq!(jaccard(&p, &g), jaccard(&g, &p));
        }
    }

    #[test]
    fn surface_distance_identical_masks() {
        let a = mask_from(6, 6, &[(2, 2), (2, 3), (3, 2), (3, 3)]);
        assert_eq!(surface_distances(&a, &a), (0.0, 0.0));
    }

    #[test]
    fn two_pixels_five_apart() {
        let p = mask_from(8, 8, &[(4, 1)]);
        let g = mask_from(8, 8, &[(4, 6)]);
        let (hd95, asd) = surface_distances(&p, &g);
        assert!((hd95 - 5.0).abs() < 1e-12);
        assert!((asd - 5.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_surface_distances() {
        let mut rng = SplitRng::new(2);
        for _ in 0..50 {
            let p = Mask::new(7, 7, (0..49).map(|_| rng.bernoulli(0.3)).collect());
            let g = Mask::new(7, 7, (0..49).map(|_| rng.bernoulli(0.3)).collect());
            let (h1, a1) = surface_distances(&p, &g);
            let (h2, a2) = surface_distances(&g, &p);
            assert_eq!(h1, h2);
            assert_eq!(a1, a2);
        }
    }

    #[test]
    fn dilated_square_has_submaximal_asd() {
        // gt: 6x6 square; pred: its 4-connected dilation.
        let mut gt_px = Vec::new();
        let mut pred_px = Vec::new();
        for y in 4..10 {
            for x in 4..10 {
                gt_px.push((y, x));
            }
        }
        for &(y, x) in &gt_px {
            pred_px.push((y, x));
            pred_px.push((y - 1, x));
            pred_px.push((y + 1, x));
            pred_px.push((y, x - 1));
            pred_px.push((y, x + 1));
        }
        pred_px.sort();
        pred_px.dedup();
        let gt = mask_from(16, 16, &gt_px);
        let pred = mask_from(16, 16, &pred_px);
        let (_, asd) = surface_distances(&pred, &gt);
        assert!(asd > 0.0 && asd <= 1.0, "asd {asd}");
    }

    #[test]
    fn empty_mask_sentinel_is_diagonal() {
        let empty = mask_from(3, 4, &[]);
        let full = mask_from(3, 4, &[(1, 1)]);
        let (hd, asd) = surface_distances(&empty, &full);
        let diag = (9.0f64 + 16.0).sqrt();
        assert_eq!(hd, diag);
        assert_eq!(asd, diag);
    }

    #[test]
    fn boundary_excludes_interior() {
        let mut ones = Vec::new();
        for y in 1..5 {
            for x in 1..5 {
                ones.push((y, x));
            }
        }
        let m = mask_from(6, 6, &ones);
        let b = m.boundary();
        assert_eq!(b.len(), 12); // 4x4 block has 12 boundary, 4 interior
        assert!(!b.contains(&(2, 2)));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert!((percentile(&v, 0.5) - 1.5).abs() < 1e-15);
        assert!((percentile(&v, 0.95) - 2.85).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn eval_result_aggregates_means() {
        let q = |dc: f64| MetricQuad { dc, jc: dc / (2.0 - dc), hd95: 1.0, asd: 0.5 };
        let samples = vec![(1u32, 1usize, q(0.8)), (1, 1, q(0.6)), (2, 1, q(0.4))];
        let r = EvalResult::from_samples(&samples);
        assert!((r.domains[&1][&1].dc - 0.7).abs() < 1e-12);
        assert!((r.domains[&2][&1].dc - 0.4).abs() < 1e-12);
        assert!((r.averages.dc - 0.55).abs() < 1e-12);
        assert!((r.mean_dice_over(|d| d != 1) - 0.4).abs() < 1e-12);
    }
}
