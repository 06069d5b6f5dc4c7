//! Image and depth metrics.

use crate::{HarnessError, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(HarnessError::Contract(format!("image sizes {} and {} differ or are empty", a.len(), b.len())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for values in [0, 1], capped at 99 dB
/// when the mean squared error drops below 1e-10.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Luma of an interleaved RGB image.
pub fn luma(rgb: &[f64]) -> Vec<f64> {
    rgb.chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect()
}

/// Mean SSIM of the luma channel over 8×8 windows placed every 4 pixels.
/// Inputs are interleaved RGB of size `height × width`.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != height * width * 3 {
        return Err(HarnessError::Contract(format!("{} values for a {height}x{width} RGB image", a.len())));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(HarnessError::Contract(format!("{height}x{width} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (la, lb) = (luma(a), luma(b));
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in (0..=height - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for j0 in (0..=width - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in i0..i0 + SSIM_WINDOW {
                for j in j0..j0 + SSIM_WINDOW {
                    let (x, y) = (la[i * width + j], lb[i * width + j]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean of `|pred - gt| / gt`. Ground truth must be positive.
pub fn depth_abs_rel(pred: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(pred, gt)?;
    if gt.iter().any(|&g| !(g > 0.0)) {
        return Err(HarnessError::Contract("ground-truth depth must be positive".into()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs() / g).sum::<f64>() / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn psnr_edges() {
        assert_eq!(psnr(&[0.3; 12], &[0.3; 12]).unwrap(), 99.0);
        assert_eq!(psnr(&[0.0; 12], &[1.0; 12]).unwrap(), 0.0);
        assert!(psnr(&[0.0; 12], &[0.0; 11]).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_image(&mut rng, 300), random_image(&mut rng, 300));
        let mut mse = 0.0;
        for k in 0..300 {
            mse += (a[k] - b[k]).powi(2);
        }
        mse /= 300.0;
        let oracle = -10.0 * mse.log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    /// Windowed SSIM written from the two-pass mean/variance definition.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let gray = |img: &[f64], i: usize, j: usize| {
            let k = (i * w + j) * 3;
            0.299 * img[k] + 0.587 * img[k + 1] + 0.114 * img[k + 2]
        };
        let mut vals = Vec::new();
        let mut i0 = 0;
        while i0 + 8 <= h {
            let mut j0 = 0;
            while j0 + 8 <= w {
                let xs: Vec<f64> = (0..64).map(|k| gray(a, i0 + k / 8, j0 + k % 8)).collect();
                let ys: Vec<f64> = (0..64).map(|k| gray(b, i0 + k / 8, j0 + k % 8)).collect();
                let mx = xs.iter().sum::<f64>() / 64.0;
                let my = ys.iter().sum::<f64>() / 64.0;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 64.0;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 64.0;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 64.0;
                let (c1, c2) = (1e-4, 9e-4);
                vals.push((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
                j0 += 4;
            }
            i0 += 4;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(8, 8), (16, 12), (32, 32), (13, 9)] {
            let a = random_image(&mut rng, h * w * 3);
            let b: Vec<f64> = a.iter().map(|x| (x + 0.3 * rng.random::<f64>()).min(1.0)).collect();
            assert!((ssim(&a, &b, h, w).unwrap() - ssim_oracle(&a, &b, h, w)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 16 * 16 * 3);
        assert!((ssim(&x, &x, 16, 16).unwrap() - 1.0).abs() < 1e-9);
        let bin: Vec<f64> = (0..16 * 16).flat_map(|_| [if rng.random::<bool>() { 1.0 } else { 0.0 }; 3]).collect();
        let inv: Vec<f64> = bin.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&bin, &inv, 16, 16).unwrap() < 0.0);
        assert!(ssim(&x[..7 * 7 * 3], &x[..7 * 7 * 3], 7, 7).is_err());
    }

    #[test]
    fn depth_error_edges() {
        let gt = [1.0, 2.0, 4.0];
        assert_eq!(depth_abs_rel(&gt, &gt).unwrap(), 0.0);
        assert_eq!(depth_abs_rel(&[2.0, 4.0, 8.0], &gt).unwrap(), 1.0);
        assert!(depth_abs_rel(&gt, &[1.0, 0.0, 1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..50).map(|_| 0.5 + rng.random::<f64>() * 5.0).collect();
        let p: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 6.0).collect();
        let mut oracle = 0.0;
        for k in 0..50 {
            oracle += ((p[k] - g[k]) / g[k]).abs();
        }
        assert!((depth_abs_rel(&p, &g).unwrap() - oracle / 50.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_flip_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (16, 16);
            let a = random_image(&mut rng, h * w * 3);
            let b = random_image(&mut rng, h * w * 3);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let s = ssim(&a, &b, h, w).unwrap();
            prop_assert!((s - ssim(&b, &a, h, w).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
            // Flipping both images by 180 degrees maps the window grid onto itself.
            let flip = |img: &[f64]| -> Vec<f64> { img.chunks_exact(3).rev().flatten().copied().collect() };
            prop_assert!((ssim(&flip(&a), &flip(&b), h, w).unwrap() - s).abs() < 1e-9);
            prop_assert!((psnr(&flip(&a), &flip(&b)).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-9);
        }
    }
}
