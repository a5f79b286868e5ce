//! Spectrogram quality metrics.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Min-max normalizes in place to `[0, 1]`. Constant input maps to zeros.
/// Returns the original `(min, max)`.
pub fn min_max_normalize(x: &mut Array2<f64>) -> (f64, f64) {
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let range = max - min;
    if range > 0.0 {
        x.mapv_inplace(|v| (v - min) / range);
    } else {
        x.fill(0.0);
    }
    (min, max)
}

fn same_shape(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty spectrogram".into()));
    }
    Ok(())
}

/// Root mean squared difference over the whole spectrogram.
pub fn rmse(recon: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(&recon, &gt)?;
    let sse: f64 = recon.iter().zip(gt.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / recon.len() as f64).sqrt())
}

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all `8 x 8` uniform windows (stride 1), dynamic range 1.
/// Images narrower than the window along an axis use the full extent on
/// that axis, so an image smaller than `8 x 8` is one single window.
pub fn ssim(recon: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(&recon, &gt)?;
    let (rows, cols) = recon.dim();
    let wr = SSIM_WINDOW.min(rows);
    let wc = SSIM_WINDOW.min(cols);
    let n = (wr * wc) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - wr {
        for c0 in 0..=cols - wc {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + wr {
                for c in c0..c0 + wc {
                    let x = recon[[r, c]];
                    let y = gt[[r, c]];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cxy = sxy / n - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean and standard error `sigma / sqrt(n)` of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
