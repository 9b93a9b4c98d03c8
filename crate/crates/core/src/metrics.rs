//! Image-quality and classification metrics.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const PSNR_RANGE: f64 = 2.0;
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same<F: Element>(what: &str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for images in [-1, 1].
pub fn psnr<F: Element>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    check_same("psnr", pred, target)?;
    let n = pred.numel() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (PSNR_RANGE * PSNR_RANGE / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim(format!("expected a single image, got shape {shape:?}")));
    }
    Ok((shape[shape.len() - 2], shape[shape.len() - 1]))
}

/// Separable valid-mode filter: `(h, w)` in, `(h - 10, w - 10)` out.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = g.iter().enumerate().map(|(k, gk)| gk * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = g.iter().enumerate().map(|(k, gk)| gk * rows[(y + k) * wo + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM after shifting both images from [-1, 1] to [0, 1].
pub fn ssim<F: Element>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    check_same("ssim", pred, target)?;
    let (h, w) = image_dims(pred.shape())?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let shift = |t: &Tensor<F>| t.data().iter().map(|v| (v.as_f64() + 1.0) / 2.0).collect::<Vec<_>>();
    let (a, b) = (shift(pred), shift(target));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let g = gaussian_window();
    let mu_a = filter_valid(&a, h, w, &g);
    let mu_b = filter_valid(&b, h, w, &g);
    let e_aa = filter_valid(&prod(&a, &a), h, w, &g);
    let e_bb = filter_valid(&prod(&b, &b), h, w, &g);
    let e_ab = filter_valid(&prod(&a, &b), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Mann-Whitney AuROC with half credit for ties, via average ranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("auroc: {} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&z| z > 1) {
        return Err(Error::contract(format!("auroc: label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("auroc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&z| z == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "auroc needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // twice the rank sum keeps tied average ranks integral
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += avg2 * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank2_pos - np * (np + 1);
    Ok(u2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Degenerate("aggregate of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Per-epoch, per-fold evaluation summary.
///
/// Reconstruction fields are NaN when the pool had no mono targets;
/// `auroc` is an error message when it was undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub fold_id: usize,
    pub epoch: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub auroc: std::result::Result<f64, String>,
}

impl MetricsReport {
    pub fn auroc_or_nan(&self) -> f64 {
        self.auroc.as_ref().copied().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let v: Vec<f64> = (0..h * w).map(f).collect();
        Tensor::from_f64(vec![1, h, w], &v).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img(4, 4, |i| (i as f64 * 0.1).sin());
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = img(4, 4, |i| (i as f64 * 0.1).sin() + 0.1);
        assert!((psnr(&a, &b).unwrap() - 26.020_599_913_279_625).abs() < 1e-6);
    }

    #[test]
    fn ssim_identity_and_offset() {
        let a = img(16, 16, |i| ((i * 37 % 17) as f64 / 17.0) - 0.5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = img(16, 16, |i| ((i * 37 % 17) as f64 / 17.0) - 0.3);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0 && s > 0.5);
        let small = img(8, 8, |_| 0.0);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[3.0]).unwrap(), (3.0, 0.0));
        assert_eq!(aggregate(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(aggregate(&[]).is_err());
    }
}
