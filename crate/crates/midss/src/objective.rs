//! Loss terms and schedules: confidence weight maps, weighted cross-entropy
//! and Dice, intermediate-sample losses, the XOR ensemble weight, the
//! symmetric loss, and the warmed-up total objective.

use crate::error::{Error, Result};
use crate::grid::{Grid, OneHotMap};
use crate::ucp::MixedTriple;

/// Probabilities are clipped to [EPS, 1-EPS] before any log.
pub const PROB_CLIP_EPS: f64 = 1e-7;
/// Smoothing added to Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1e-5;

/// All loss terms of one iteration plus the warm-up coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBundle {
    pub l_s: f64,
    pub l_in: f64,
    pub l_out: f64,
    pub l_sym: f64,
    pub lambda: f64,
    pub l_total: f64,
}

/// Per-pixel gate keeping only pseudo-label pixels whose max class
/// probability reaches `tau` (inclusive).
pub fn confidence_weight(p_w: &Grid, tau: f64) -> Grid {
    let (h, w, c) = (p_w.height(), p_w.width(), p_w.channels());
    let mut out = Grid::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::NEG_INFINITY;
            for k in 0..c {
                best = best.max(p_w.get(y, x, k));
            }
            if best >= tau {
                out.set(y, x, 0, 1.0);
            }
        }
    }
    out
}

fn assert_loss_shapes(y: &Grid, p: &Grid, w: &Grid) {
    assert!(y.same_shape(p), "target/prediction shape mismatch");
    assert!(w.spatial_matches(p) && w.channels() == 1, "weight map shape mismatch");
}

/// Weighted multi-class cross entropy, normalized by pixel count:
/// -(1/(H*W)) sum_i w_i sum_c y_ic log p_ic.
pub fn weighted_ce(y: &OneHotMap, p: &Grid, w: &Grid) -> f64 {
    let yg = y.grid();
    assert_loss_shapes(yg, p, w);
    let (h, ww, c) = (p.height(), p.width(), p.channels());
    let mut acc = 0.0;
    for i in 0..h * ww {
        let wi = w.data()[i];
        if wi == 0.0 {
            continue;
        }
        for k in 0..c {
            let yv = yg.data()[i * c + k];
            if yv != 0.0 {
                let pv = p.data()[i * c + k].clamp(PROB_CLIP_EPS, 1.0 - PROB_CLIP_EPS);
                acc -= wi * yv * pv.ln();
            }
        }
    }
    acc / (h * ww) as f64
}

/// Weighted soft Dice loss, averaged over foreground channels (c >= 1):
/// 1 - (2 sum w p y + s) / (sum w (p^2 + y^2) + s) per channel.
pub fn weighted_dice(y: &OneHotMap, p: &Grid, w: &Grid) -> f64 {
    let yg = y.grid();
    assert_loss_shapes(yg, p, w);
    let (h, ww, c) = (p.height(), p.width(), p.channels());
    assert!(c >= 2, "dice needs a foreground channel");
    let mut acc = 0.0;
    for k in 1..c {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..h * ww {
            let wi = w.data()[i];
            if wi == 0.0 {
                continue;
            }
            let pv = p.data()[i * c + k];
            let yv = yg.data()[i * c + k];
            num += wi * pv * yv;
            den += wi * (pv * pv + yv * yv);
        }
        acc += 1.0 - (2.0 * num + DICE_SMOOTH) / (den + DICE_SMOOTH);
    }
    acc / (c - 1) as f64
}

/// Gradient of weighted_ce + weighted_dice with respect to `p`.
pub fn ce_dice_grad(y: &OneHotMap, p: &Grid, w: &Grid) -> Grid {
    let yg = y.grid();
    assert_loss_shapes(yg, p, w);
    let (h, ww, c) = (p.height(), p.width(), p.channels());
    let n = (h * ww) as f64;
    let mut grad = Grid::zeros(h, ww, c);

    for i in 0..h * ww {
        let wi = w.data()[i];
        if wi == 0.0 {
            continue;
        }
        for k in 0..c {
            let yv = yg.data()[i * c + k];
            if yv != 0.0 {
                let pv = p.data()[i * c + k];
                // Clip saturation zeroes the derivative outside the band.
                if pv > PROB_CLIP_EPS && pv < 1.0 - PROB_CLIP_EPS {
                    grad.data_mut()[i * c + k] -= wi * yv / (pv * n);
                }
            }
        }
    }

    for k in 1..c {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..h * ww {
            let wi = w.data()[i];
            if wi == 0.0 {
                continue;
            }
            let pv = p.data()[i * c + k];
            let yv = yg.data()[i * c + k];
            num += wi * pv * yv;
            den += wi * (pv * pv + yv * yv);
        }
        let num_s = 2.0 * num + DICE_SMOOTH;
        let den_s = den + DICE_SMOOTH;
        let scale = 1.0 / (c - 1) as f64;
        for i in 0..h * ww {
            let wi = w.data()[i];
            if wi == 0.0 {
                continue;
            }
            let pv = p.data()[i * c + k];
            let yv = yg.data()[i * c + k];
            // d/dp [1 - N/D] = (N * D' - N' * D) / D^2 with N' = 2wy, D' = 2wp.
            let g = (num_s * 2.0 * wi * pv - 2.0 * wi * yv * den_s) / (den_s * den_s);
            grad.data_mut()[i * c + k] += scale * g;
        }
    }
    grad
}

/// Losses on the two intermediate samples: CE + Dice of each mixed pseudo
/// label against the student prediction, gated by the mixed weight maps.
pub fn intermediate_losses(triple: &MixedTriple, p_s_in: &Grid, p_s_out: &Grid) -> (f64, f64) {
    let l_in = weighted_ce(&triple.pseudo_in, p_s_in, &triple.weight_in)
        + weighted_dice(&triple.pseudo_in, p_s_in, &triple.weight_in);
    let l_out = weighted_ce(&triple.pseudo_out, p_s_out, &triple.weight_out)
        + weighted_dice(&triple.pseudo_out, p_s_out, &triple.weight_out);
    (l_in, l_out)
}

/// Agreement gate between the direct and merged pseudo labels:
/// w_ens = (1 - xor(p_hat, p_hat_mg)) * w * w_mg, all per pixel.
pub fn ensemble_weight(
    p_hat: &OneHotMap,
    p_hat_mg: &OneHotMap,
    w: &Grid,
    w_mg: &Grid,
) -> Result<Grid> {
    let a = p_hat.grid();
    let b = p_hat_mg.grid();
    if !a.same_shape(b) || !w.spatial_matches(a) || !w_mg.spatial_matches(a) {
        return Err(Error::Shape("ensemble weight operand shapes differ".into()));
    }
    let (h, ww) = (a.height(), a.width());
    let mut out = Grid::zeros(h, ww, 1);
    for y in 0..h {
        for x in 0..ww {
            let agree = p_hat.class_at(y, x) == p_hat_mg.class_at(y, x);
            if agree {
                out.set(y, x, 0, w.get(y, x, 0) * w_mg.get(y, x, 0));
            }
        }
    }
    Ok(out)
}

/// CE + Dice of the merged pseudo label against the student prediction on
/// the unlabeled strong view.
pub fn symmetric_loss(p_hat_mg: &OneHotMap, p_s: &Grid, w_sym: &Grid) -> f64 {
    weighted_ce(p_hat_mg, p_s, w_sym) + weighted_dice(p_hat_mg, p_s, w_sym)
}

/// Gaussian warm-up coefficient exp(-5 (1 - t/t_total)).
pub fn lambda_schedule(t: u64, t_total: u64) -> f64 {
    if t_total == 0 {
        return 1.0;
    }
    let frac = (t as f64 / t_total as f64).min(1.0);
    (-5.0 * (1.0 - frac)).exp()
}

/// Supervised loss on the labeled weak view: CE + Dice with all weights 1.
pub fn supervised_loss(y_w: &OneHotMap, p_x: &Grid) -> f64 {
    let ones = Grid::filled(p_x.height(), p_x.width(), 1, 1.0);
    weighted_ce(y_w, p_x, &ones) + weighted_dice(y_w, p_x, &ones)
}

/// Combine per-term means into the total objective
/// l_s + lambda (l_in + l_out) + lambda^2 l_sym.
pub fn total_loss(
    l_s: f64,
    l_in: f64,
    l_out: f64,
    l_sym: f64,
    t: u64,
    t_total: u64,
) -> Result<LossBundle> {
    for (name, v) in [("l_s", l_s), ("l_in", l_in), ("l_out", l_out), ("l_sym", l_sym)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::TrainingIntegrity {
                term: name.into(),
                msg: format!("value {v} is not a finite nonnegative loss"),
            });
        }
    }
    let lambda = lambda_schedule(t, t_total);
    let l_total = l_s + lambda * (l_in + l_out) + lambda * lambda * l_sym;
    Ok(LossBundle { l_s, l_in, l_out, l_sym, lambda, l_total })
}
