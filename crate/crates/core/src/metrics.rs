//! PSNR and SSIM on `[0, 1]` images, and per-subset aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::Subset;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error over every channel and pixel.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / mse)` over all channels jointly; `+inf` for identical images.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Normalized 11x11 Gaussian window with sigma 1.5, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx / (s * s));
        }
    }
    w
}

fn luma_plane(img: &ImageTensor) -> Result<Vec<f64>> {
    let gray = match img.channels() {
        1 => img.clone(),
        3 => img.to_grayscale()?,
        _ => img.rgb()?.to_grayscale()?,
    };
    Ok(gray.data().iter().map(|&v| v as f64).collect())
}

/// Structural similarity of the gray levels, averaged over every valid
/// placement of the Gaussian window (no padding).
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let (_, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let pa = luma_plane(a)?;
    let pb = luma_plane(b)?;
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                let row = (oy + ky) * w + ox;
                for kx in 0..SSIM_WINDOW {
                    let wt = win[ky * SSIM_WINDOW + kx];
                    let x = pa[row + kx];
                    let y = pb[row + kx];
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetMetrics {
    /// Mean PSNR; `+inf` when any pair in the subset was identical.
    #[serde(serialize_with = "ser_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub n: usize,
    pub accuracy: Option<f64>,
}

impl SubsetMetrics {
    pub fn psnr_is_infinite(&self) -> bool {
        self.psnr_db.is_infinite()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_subset: BTreeMap<Subset, SubsetMetrics>,
}

impl MetricsReport {
    /// Count-weighted average over all reported subsets.
    pub fn overall(&self) -> Option<SubsetMetrics> {
        let n: usize = self.per_subset.values().map(|m| m.n).sum();
        if n == 0 {
            return None;
        }
        let weighted = |f: &dyn Fn(&SubsetMetrics) -> f64| {
            self.per_subset
                .values()
                .map(|m| m.n as f64 * f(m))
                .sum::<f64>()
                / n as f64
        };
        let accuracy = if self.per_subset.values().all(|m| m.accuracy.is_some()) {
            Some(weighted(&|m| m.accuracy.unwrap_or(0.0)))
        } else {
            None
        };
        Some(SubsetMetrics {
            psnr_db: weighted(&|m| m.psnr_db),
            ssim: weighted(&|m| m.ssim),
            n,
            accuracy,
        })
    }

    /// Plain-text table, one row per subset plus the weighted average.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>8}{:>12}{:>10}{:>10}", "subset", "n", "psnr_db", "ssim", "accuracy");
        let mut row = |name: &str, m: &SubsetMetrics| {
            let psnr = if m.psnr_db.is_finite() {
                format!("{:.3}", m.psnr_db)
            } else {
                "inf".to_string()
            };
            let acc = m
                .accuracy
                .map(|a| format!("{:.2}%", 100.0 * a))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<10}{:>8}{:>12}{:>10.4}{:>10}", name, m.n, psnr, m.ssim, acc);
        };
        for (s, m) in &self.per_subset {
            row(s.as_str(), m);
        }
        if let Some(avg) = self.overall() {
            row("average", &avg);
        }
        out
    }
}

/// Unweighted per-subset means of PSNR and SSIM. Subsets with no pairs are omitted.
pub fn aggregate_report<I>(pairs: I) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (ImageTensor, ImageTensor, Subset)>,
{
    let mut sums: BTreeMap<Subset, (f64, f64, usize)> = BTreeMap::new();
    for (sr, hr, subset) in pairs {
        let p = psnr(&sr, &hr)?;
        let s = ssim(&sr, &hr)?;
        let e = sums.entry(subset).or_insert((0.0, 0.0, 0));
        e.0 += p;
        e.1 += s;
        e.2 += 1;
    }
    if sums.is_empty() {
        return Err(Error::InvalidInput("no pairs to aggregate".into()));
    }
    Ok(MetricsReport {
        per_subset: sums
            .into_iter()
            .map(|(s, (p, q, n))| {
                (
                    s,
                    SubsetMetrics {
                        psnr_db: p / n as f64,
                        ssim: q / n as f64,
                        n,
                        accuracy: None,
                    },
                )
            })
            .collect(),
    })
}
