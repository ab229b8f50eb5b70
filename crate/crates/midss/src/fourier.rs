//! 2D Fourier transform, amplitude/phase decomposition, and progressive
//! random amplitude mixing between image pairs.
//!
//! Low-frequency amplitude carries style; phase carries structure. Mixing a
//! growing fraction of a second image's low-frequency amplitude into the
//! first shifts its style while keeping its content (and thus its labels)
//! intact.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{elementwise_mix, Grid};
use crate::rng::SplitRng;

/// Largest imaginary residue tolerated when reconstructing a real image.
const IMAG_RESIDUE_LIMIT: f64 = 1e-3;

/// Amplitude/phase form of a transformed image, one plane per channel.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// |F|, nonnegative everywhere.
    pub amplitude: Grid,
    /// arg F in (-pi, pi].
    pub phase: Grid,
    /// True when the DC bin sits at (H/2, W/2) (quadrant-swapped layout).
    pub dc_centered: bool,
}

/// Real mask that is `rho` inside the DC-centered low-frequency window and
/// zero outside.
#[derive(Clone, Debug)]
pub struct SpectralMask {
    pub grid: Grid,
    pub beta: f64,
    pub rho: f64,
}

fn fft_1d_rows(h: usize, w: usize, buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in 0..h {
        fft.process(&mut buf[row * w..(row + 1) * w]);
    }
}

fn fft_1d_cols(h: usize, w: usize, buf: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Move the DC bin to (H/2, W/2); exact inverse of [`unshift_plane`] for any
/// (odd or even) size.
fn shift_plane(h: usize, w: usize, src: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); h * w];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + h / 2) % h;
            let sx = (x + w / 2) % w;
            out[sy * w + sx] = src[y * w + x];
        }
    }
    out
}

fn unshift_plane(h: usize, w: usize, src: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); h * w];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + h / 2) % h;
            let sx = (x + w / 2) % w;
            out[y * w + x] = src[sy * w + sx];
        }
    }
    out
}

/// Forward unnormalized DFT per channel, returned DC-centered.
pub fn fft2(image: &Grid) -> Spectrum {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut amplitude = Grid::zeros(h, w, c);
    let mut phase = Grid::zeros(h, w, c);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = (0..h * w)
            .map(|i| Complex::new(image.data()[i * c + ch], 0.0))
            .collect();
        fft_1d_rows(h, w, &mut buf, false);
        fft_1d_cols(h, w, &mut buf, false);
        let buf = shift_plane(h, w, &buf);
        for (i, z) in buf.iter().enumerate() {
            amplitude.data_mut()[i * c + ch] = z.norm();
            phase.data_mut()[i * c + ch] = z.im.atan2(z.re);
        }
    }
    Spectrum { amplitude, phase, dc_centered: true }
}

/// Inverse transform back to a real image. Errors if the reconstruction
/// carries imaginary residue above 1e-3, which signals a corrupted spectrum.
pub fn ifft2(s: &Spectrum) -> Result<Grid> {
    let (h, w, c) = (s.amplitude.height(), s.amplitude.width(), s.amplitude.channels());
    if !s.amplitude.same_shape(&s.phase) {
        return Err(Error::Shape("spectrum amplitude/phase shapes differ".into()));
    }
    let norm = 1.0 / (h * w) as f64;
    let mut out = Grid::zeros(h, w, c);
    let mut worst_residue = 0.0f64;
    for ch in 0..c {
        let plane: Vec<Complex<f64>> = (0..h * w)
            .map(|i| {
                let a = s.amplitude.data()[i * c + ch];
                let p = s.phase.data()[i * c + ch];
                Complex::new(a * p.cos(), a * p.sin())
            })
            .collect();
        let mut buf = if s.dc_centered { unshift_plane(h, w, &plane) } else { plane };
        fft_1d_rows(h, w, &mut buf, true);
        fft_1d_cols(h, w, &mut buf, true);
        for (i, z) in buf.iter().enumerate() {
            let re = z.re * norm;
            let im = z.im * norm;
            worst_residue = worst_residue.max(im.abs());
            out.data_mut()[i * c + ch] = re;
        }
    }
    if worst_residue > IMAG_RESIDUE_LIMIT {
        return Err(Error::NumericalIntegrity(format!(
            "ifft2 imaginary residue {worst_residue:.3e} exceeds {IMAG_RESIDUE_LIMIT:.0e}"
        )));
    }
    Ok(out)
}

/// Linear mixing-ceiling schedule: t / t_total, clamped to 1 past the end.
pub fn phi_schedule(t: u64, t_total: u64) -> f64 {
    if t_total == 0 {
        return 0.0;
    }
    if t > t_total {
        log::warn!("phi_schedule called with t={t} > t_total={t_total}; clamping to 1");
        return 1.0;
    }
    t as f64 / t_total as f64
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Low-frequency window mask: value `rho` in a centered window of
/// round(2*beta*W) x round(2*beta*H) bins (minimum 1x1), zero elsewhere.
///
/// A partial window is rounded down to odd so it is conjugate-symmetric
/// about the DC bin; an asymmetric window would leave the mixed spectrum
/// non-Hermitian and the inverse transform complex.
pub fn spectral_mask(h: usize, w: usize, beta: f64, rho: f64) -> Result<SpectralMask> {
    if !(beta > 0.0 && beta <= 0.5) {
        return Err(Error::Config(format!("beta must be in (0, 0.5], got {beta}")));
    }
    let symmetric = |win: usize, dim: usize| -> usize {
        if win < dim && win % 2 == 0 {
            (win - 1).max(1)
        } else {
            win
        }
    };
    let win_h = symmetric(round_half_up(2.0 * beta * h as f64).clamp(1, h), h);
    let win_w = symmetric(round_half_up(2.0 * beta * w as f64).clamp(1, w), w);
    // Anchor on the DC bin at (h/2, w/2) so a 1x1 window is exactly DC.
    let y0 = h / 2 - win_h / 2;
    let x0 = w / 2 - win_w / 2;
    let mut grid = Grid::zeros(h, w, 1);
    for y in y0..(y0 + win_h).min(h) {
        for x in x0..(x0 + win_w).min(w) {
            grid.set(y, x, 0, rho);
        }
    }
    Ok(SpectralMask { grid, beta, rho })
}

/// Core amplitude mixing with an explicit ratio: replaces a `rho` fraction of
/// the low-frequency amplitude of `x` with that of `u`, keeps the phase of
/// `x`, and clamps the result to [-1, 1].
pub fn amplitude_mix(x: &Grid, u: &Grid, beta: f64, rho: f64) -> Result<Grid> {
    if !x.same_shape(u) {
        return Err(Error::Shape(format!(
            "amplitude_mix operands differ: {}x{}x{} vs {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            u.height(),
            u.width(),
            u.channels()
        )));
    }
    let sx = fft2(x);
    let su = fft2(u);
    let mask = spectral_mask(x.height(), x.width(), beta, rho)?;
    let mixed = elementwise_mix(&su.amplitude, &sx.amplitude, &mask.grid)?;
    let out = ifft2(&Spectrum { amplitude: mixed, phase: sx.phase, dc_centered: true })?;
    Ok(out.map(|v| v.clamp(-1.0, 1.0)))
}

/// Training-progress-aware random amplitude mixing: the ratio is drawn
/// uniformly from [0, phi(t)], so early iterations stay close to `x_w` and
/// the admissible style shift grows linearly over training.
pub fn tp_ram(
    x_w: &Grid,
    u_w: &Grid,
    beta: f64,
    t: u64,
    t_total: u64,
    rng: &mut SplitRng,
) -> Result<Grid> {
    let phi = phi_schedule(t, t_total);
    let rho = rng.uniform_in(0.0, phi);
    amplitude_mix(x_w, u_w, beta, rho)
}

/// Ablation variant: the ratio is drawn uniformly from [0, 1] regardless of
/// training progress.
pub fn ram(x_w: &Grid, u_w: &Grid, beta: f64, rng: &mut SplitRng) -> Result<Grid> {
    let rho = rng.uniform_in(0.0, 1.0);
    amplitude_mix(x_w, u_w, beta, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn rand_image(rng: &mut SplitRng, h: usize, w: usize) -> Grid {
        Grid::new(h, w, 1, (0..h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
    }

    /// Naive O(N^2) DFT straight from the transform definition; the
    /// independent oracle for the fast path.
    fn naive_dft(image: &Grid) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (image.height(), image.width());
        let mut amp = vec![0.0; h * w];
        let mut ph = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -std::f64::consts::TAU
                            * (y as f64 * u as f64 / h as f64 + x as f64 * v as f64 / w as f64);
                        let val = image.get(y, x, 0);
                        re += val * ang.cos();
                        im += val * ang.sin();
                    }
                }
                amp[u * w + v] = (re * re + im * im).sqrt();
                ph[u * w + v] = im.atan2(re);
            }
        }
        (amp, ph)
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = SplitRng::new(10);
        for &(h, w) in &[(5usize, 7usize), (8, 8), (6, 9)] {
            let img = rand_image(&mut rng, h, w);
            let s = fft2(&img);
            let (amp, ph) = naive_dft(&img);
            for y in 0..h {
                for x in 0..w {
                    // fft2 output is DC-centered; naive oracle is not.
                    let cy = (y + h / 2) % h;
                    let cx = (x + w / 2) % w;
                    let a_fast = s.amplitude.get(cy, cx, 0);
                    let a_ref = amp[y * w + x];
                    assert!((a_fast - a_ref).abs() < 1e-8, "amp at ({y},{x}): {a_fast} vs {a_ref}");
                    if a_ref > 1e-9 {
                        let mut dp = s.phase.get(cy, cx, 0) - ph[y * w + x];
                        while dp > std::f64::consts::PI {
                            dp -= std::f64::consts::TAU;
                        }
                        while dp < -std::f64::consts::PI {
                            dp += std::f64::consts::TAU;
                        }
                        assert!(dp.abs() < 1e-8, "phase at ({y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_image_concentrates_at_dc() {
        let c = 0.75;
        let img = Grid::filled(6, 4, 1, c);
        let s = fft2(&img);
        let dc = s.amplitude.get(3, 2, 0);
        assert!((dc - 24.0 * c).abs() < 1e-9);
        assert!(s.phase.get(3, 2, 0).abs() < 1e-9, "DC phase zero for positive constant");
        for y in 0..6 {
            for x in 0..4 {
                if (y, x) != (3, 2) {
                    assert!(s.amplitude.get(y, x, 0) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn round_trip_within_1e6() {
        let mut rng = SplitRng::new(11);
        for &(h, w) in &[(8usize, 8usize), (5, 9), (16, 12)] {
            let img = rand_image(&mut rng, h, w);
            let back = ifft2(&fft2(&img)).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = SplitRng::new(12);
        let img = rand_image(&mut rng, 12, 10);
        let s = fft2(&img);
        let spatial: f64 = img.data().iter().map(|v| v * v).sum();
        let spectral: f64 =
            s.amplitude.data().iter().map(|v| v * v).sum::<f64>() / (12.0 * 10.0);
        assert!((spatial - spectral).abs() / spatial < 1e-6);
    }

    #[test]
    fn corrupted_spectrum_is_rejected() {
        let mut rng = SplitRng::new(13);
        let img = rand_image(&mut rng, 8, 8);
        let mut s = fft2(&img);
        // Breaking conjugate symmetry hard enough leaves imaginary residue.
        let i = s.amplitude.idx(1, 1, 0);
        s.amplitude.data_mut()[i] += 50.0;
        let err = ifft2(&s).unwrap_err();
        assert!(matches!(err, Error::NumericalIntegrity(_)));
    }

    #[test]
    fn phi_schedule_closed_form() {
        assert_eq!(phi_schedule(0, 100), 0.0);
        assert_eq!(phi_schedule(100, 100), 1.0);
        assert_eq!(phi_schedule(50, 100), 0.5);
        assert_eq!(phi_schedule(150, 100), 1.0); // clamped
    }

    #[test]
    fn spectral_mask_window_geometry() {
        // beta=0.25 on 8x8: round(2*0.25*8)=4, rounded down to 3 for
        // conjugate symmetry, anchored on DC at (4,4).
        let m = spectral_mask(8, 8, 0.25, 0.5).unwrap();
        let mut nonzero = 0;
        for y in 0..8 {
            for x in 0..8 {
                let v = m.grid.get(y, x, 0);
                if v != 0.0 {
                    assert_eq!(v, 0.5);
                    assert!((3..6).contains(&y) && (3..6).contains(&x), "({y},{x})");
                    nonzero += 1;
                }
            }
        }
        assert_eq!(nonzero, 9);
        // Tiny beta still covers the DC bin.
        let tiny = spectral_mask(16, 16, 0.01, 1.0).unwrap();
        assert_eq!(tiny.grid.get(8, 8, 0), 1.0);
        assert_eq!(tiny.grid.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(spectral_mask(8, 8, 0.0, 0.5).is_err());
        assert!(spectral_mask(8, 8, 0.7, 0.5).is_err());
    }

    #[test]
    fn tp_ram_at_t0_is_identity() {
        let mut rng = SplitRng::new(14);
        let x = rand_image(&mut rng, 8, 8);
        let u = rand_image(&mut rng, 8, 8);
        let mut draw = rng.fork(0);
        let out = tp_ram(&x, &u, 0.1, 0, 100, &mut draw).unwrap();
        for (a, b) in x.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mixing_identical_amplitudes_is_identity() {
        let mut rng = SplitRng::new(15);
        let x = rand_image(&mut rng, 8, 8);
        let out = amplitude_mix(&x, &x, 0.5, 0.73).unwrap();
        for (a, b) in x.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn full_window_rho_one_swaps_amplitude_keeps_phase() {
        let mut rng = SplitRng::new(16);
        // Scaled down so the swap cannot overshoot the clamp range.
        let x = rand_image(&mut rng, 8, 8).map(|v| 0.3 * v);
        let u = rand_image(&mut rng, 8, 8).map(|v| 0.3 * v);
        let out = amplitude_mix(&x, &u, 0.5, 1.0).unwrap();
        let so = fft2(&out);
        let sx = fft2(&x);
        let su = fft2(&u);
        for i in 0..so.amplitude.data().len() {
            assert!(
                (so.amplitude.data()[i] - su.amplitude.data()[i]).abs() < 1e-6,
                "amplitude should come from u"
            );
            if so.amplitude.data()[i] > 1e-6 {
                let mut dp = so.phase.data()[i] - sx.phase.data()[i];
                while dp > std::f64::consts::PI {
                    dp -= std::f64::consts::TAU;
                }
                while dp < -std::f64::consts::PI {
                    dp += std::f64::consts::TAU;
                }
                assert!(dp.abs() < 1e-4, "phase should come from x");
            }
        }
    }

    #[test]
    fn phase_preserved_at_significant_bins() {
        let mut rng = SplitRng::new(17);
        let x = rand_image(&mut rng, 12, 12).map(|v| 0.4 * v);
        let u = rand_image(&mut rng, 12, 12).map(|v| 0.4 * v);
        let out = amplitude_mix(&x, &u, 0.2, 0.6).unwrap();
        let so = fft2(&out);
        let sx = fft2(&x);
        for i in 0..so.phase.data().len() {
            if so.amplitude.data()[i] > 1e-6 && sx.amplitude.data()[i] > 1e-6 {
                let mut dp = so.phase.data()[i] - sx.phase.data()[i];
                while dp > std::f64::consts::PI {
                    dp -= std::f64::consts::TAU;
                }
                while dp < -std::f64::consts::PI {
                    dp += std::f64::consts::TAU;
                }
                assert!(dp.abs() < 1e-4);
            }
        }
    }

    #[test]
    fn centering_convention_does_not_change_output() {
        // Same mixing computed on the unshifted spectrum with a congruent
        // window must give the same image.
        let mut rng = SplitRng::new(18);
        let x = rand_image(&mut rng, 10, 8).map(|v| 0.4 * v);
        let u = rand_image(&mut rng, 10, 8).map(|v| 0.4 * v);
        let (beta, rho) = (0.2, 0.5);
        let centered = amplitude_mix(&x, &u, beta, rho).unwrap();

        let sx = fft2(&x);
        let su = fft2(&u);
        let centered_mask = spectral_mask(10, 8, beta, rho).unwrap();
        // Build the unshifted mask by inverse-shifting the centered one.
        let mut unshifted_mask = Grid::zeros(10, 8, 1);
        for y in 0..10 {
            for x2 in 0..8 {
                let sy = (y + 5) % 10;
                let sx2 = (x2 + 4) % 8;
                unshifted_mask.set(y, x2, 0, centered_mask.grid.get(sy, sx2, 0));
            }
        }
        // Unshift both spectra, mix there, and reconstruct flagging the
        // layout as not centered.
        let unshift = |g: &Grid| {
            let mut out = Grid::zeros(10, 8, 1);
            for y in 0..10 {
                for x2 in 0..8 {
                    let sy = (y + 5) % 10;
                    let sx2 = (x2 + 4) % 8;
                    out.set(y, x2, 0, g.get(sy, sx2, 0));
                }
            }
            out
        };
        let mixed = elementwise_mix(&unshift(&su.amplitude), &unshift(&sx.amplitude), &unshifted_mask)
            .unwrap();
        let alt = ifft2(&Spectrum {
            amplitude: mixed,
            phase: unshift(&sx.phase),
            dc_centered: false,
        })
        .unwrap()
        .map(|v| v.clamp(-1.0, 1.0));
        for (a, b) in centered.data().iter().zip(alt.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn expected_displacement_monotone_in_t() {
        // The admissible style shift grows with t: at fixed draws, the mean
        // amplitude displacement over several rho samples is nondecreasing.
        let mut rng = SplitRng::new(19);
        let x = rand_image(&mut rng, 8, 8).map(|v| 0.4 * v);
        let u = rand_image(&mut rng, 8, 8).map(|v| 0.4 * v);
        let t_total = 100;
        let mut prev = -1.0f64;
        for &t in &[0u64, 25, 50, 75, 100] {
            let mut acc = 0.0;
            for k in 0..16 {
                let mut draw = SplitRng::new(999).fork(k);
                let out = tp_ram(&x, &u, 0.2, t, t_total, &mut draw).unwrap();
                let sa = fft2(&out);
                let sx = fft2(&x);
                let disp: f64 = sa
                    .amplitude
                    .data()
                    .iter()
                    .zip(sx.amplitude.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                acc += disp;
            }
            let mean = acc / 16.0;
            assert!(mean >= prev - 1e-9, "displacement at t={t}: {mean} < {prev}");
            prev = mean;
        }
    }
}
