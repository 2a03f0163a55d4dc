use crate::numerics::NumericsError;

/// Value reported when the reconstruction is exact.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio for unit dynamic range, capped at 100 dB.
pub fn psnr(x: &[f64], reference: &[f64]) -> Result<f64, NumericsError> {
    if x.len() != reference.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: reference.len(),
            found: x.len(),
        });
    }
    if x.is_empty() {
        return Err(NumericsError::EmptyDimension);
    }
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over non-overlapping windows of an `h × w` row-major image,
/// with `L = 1`. Windows are `min(8, h) × min(8, w)`; a partial trailing
/// band of rows or columns is not scored.
pub fn ssim(x: &[f64], reference: &[f64], shape: (usize, usize)) -> Result<f64, NumericsError> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(NumericsError::EmptyDimension);
    }
    for v in [x, reference] {
        if v.len() != h * w {
            return Err(NumericsError::DimensionMismatch {
                expected: h * w,
                found: v.len(),
            });
        }
    }
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for bi in 0..h / wh {
        for bj in 0..w / ww {
            let idx = |k: usize| (bi * wh + k / ww) * w + bj * ww + k % ww;
            let k = (wh * ww) as f64;
            let (mut mx, mut my) = (0.0, 0.0);
            for t in 0..wh * ww {
                mx += x[idx(t)];
                my += reference[idx(t)];
            }
            mx /= k;
            my /= k;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for t in 0..wh * ww {
                let dx = x[idx(t)] - mx;
                let dy = reference[idx(t)] - my;
                vx += dx * dx;
                vy += dy * dy;
                cxy += dx * dy;
            }
            vx /= k;
            vy /= k;
            cxy /= k;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
