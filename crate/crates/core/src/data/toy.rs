//! Rendered-text toy dataset: fixed 8x8 bitmap glyphs drawn at 2x into the
//! canonical HR canvas, with LR produced by synthetic degradation.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::degrade::make_synthetic_lr;
use crate::data::manifest::{write_manifest, DatasetManifest, ManifestRow};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::{Direction, Source, Subset, HR_SHAPE};

pub const TOY_CHARSET: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
/// Side of one rendered glyph cell in HR pixels.
pub const GLYPH_CELL: usize = 16;
const GLYPH_SCALE: usize = GLYPH_CELL / 8;
pub const MAX_TOY_CHARS: usize = HR_SHAPE.1 / GLYPH_CELL;
/// Top row of the glyph band in HR pixels.
pub const GLYPH_TOP: usize = (HR_SHAPE.0 - GLYPH_CELL) / 2;

/// 8x8 bitmap of `c`, row-major, `true` for ink.
pub fn glyph_bitmap(c: char) -> Option<[[bool; 8]; 8]> {
    let rows = BASIC_FONTS.get(c)?;
    let mut out = [[false; 8]; 8];
    for (y, bits) in rows.iter().enumerate() {
        for (x, cell) in out[y].iter_mut().enumerate() {
            *cell = bits & (1 << x) != 0;
        }
    }
    Some(out)
}

/// Left edge of the glyph band for a centered string of `n` characters.
pub fn text_left(n: usize) -> usize {
    (HR_SHAPE.1 - n * GLYPH_CELL) / 2
}

/// Draws `text` centered on a 32x128 canvas.
pub fn render_text(text: &str, fg: [f32; 3], bg: [f32; 3]) -> Result<ImageTensor> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() > MAX_TOY_CHARS {
        return Err(Error::InvalidInput(format!(
            "toy text holds at most {MAX_TOY_CHARS} characters, got {}",
            chars.len()
        )));
    }
    let (h, w) = HR_SHAPE;
    let mut data = Array3::<f32>::zeros((3, h, w));
    for c in 0..3 {
        data.index_axis_mut(ndarray::Axis(0), c).fill(bg[c]);
    }
    let left = text_left(chars.len());
    for (i, &ch) in chars.iter().enumerate() {
        let glyph = glyph_bitmap(ch)
            .ok_or_else(|| Error::InvalidInput(format!("no glyph for {ch:?}")))?;
        for (gy, row) in glyph.iter().enumerate() {
            for (gx, &ink) in row.iter().enumerate() {
                if !ink {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let y = GLYPH_TOP + gy * GLYPH_SCALE + dy;
                        let x = left + i * GLYPH_CELL + gx * GLYPH_SCALE + dx;
                        for c in 0..3 {
                            data[[c, y, x]] = fg[c];
                        }
                    }
                }
            }
        }
    }
    ImageTensor::new(data)
}

/// Separable `[1, 2, 1] / 4` blur with clamped borders.
pub fn blur3(img: &ImageTensor) -> Result<ImageTensor> {
    let (c, h, w) = img.dims();
    let src = img.data();
    let mut tmp = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let l = src[[ch, y, x.saturating_sub(1)]];
                let r = src[[ch, y, (x + 1).min(w - 1)]];
                tmp[[ch, y, x]] = 0.25 * l + 0.5 * src[[ch, y, x]] + 0.25 * r;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let u = tmp[[ch, y.saturating_sub(1), x]];
                let d = tmp[[ch, (y + 1).min(h - 1), x]];
                out[[ch, y, x]] = 0.25 * u + 0.5 * tmp[[ch, y, x]] + 0.25 * d;
            }
        }
    }
    ImageTensor::new_clamped(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPair {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
    pub text: String,
    pub subset: Subset,
}

/// Extra LR blur passes applied on top of the x2 downsample per subset.
pub fn toy_blur_passes(subset: Subset) -> usize {
    match subset {
        Subset::Train | Subset::Easy => 0,
        Subset::Medium => 1,
        Subset::Hard => 2,
    }
}

fn random_text<R: Rng>(rng: &mut R, min_len: usize, max_len: usize) -> String {
    let charset: Vec<char> = TOY_CHARSET.chars().collect();
    let n = rng.gen_range(min_len..=max_len);
    (0..n).map(|_| charset[rng.gen_range(0..charset.len())]).collect()
}

fn random_colors<R: Rng>(rng: &mut R) -> ([f32; 3], [f32; 3]) {
    let dark: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.25));
    let light: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.75..1.0));
    if rng.gen_bool(0.5) {
        (dark, light)
    } else {
        (light, dark)
    }
}

/// `n` rendered pairs; subsets are assigned round-robin from `subsets`.
pub fn toy_pairs(n: usize, seed: u64, subsets: &[Subset]) -> Result<Vec<ToyPair>> {
    if subsets.is_empty() {
        return Err(Error::InvalidInput("no subsets given".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let subset = subsets[i % subsets.len()];
            let text = random_text(&mut rng, 3, 6);
            let (fg, bg) = random_colors(&mut rng);
            let hr = render_text(&text, fg, bg)?;
            let mut lr = make_synthetic_lr(&hr)?;
            for _ in 0..toy_blur_passes(subset) {
                lr = blur3(&lr)?;
            }
            Ok(ToyPair { lr, hr, text, subset })
        })
        .collect()
}

/// Writes [`toy_pairs`] as PNGs plus `manifest.jsonl` under `dir`.
pub fn write_toy_dataset(dir: impl AsRef<Path>, n: usize, seed: u64, subsets: &[Subset]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("lr")).map_err(|e| Error::io(dir, e))?;
    std::fs::create_dir_all(dir.join("hr")).map_err(|e| Error::io(dir, e))?;
    let pairs = toy_pairs(n, seed, subsets)?;
    let mut rows = Vec::with_capacity(n);
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("{i:05}.png");
        p.lr.save_png(dir.join("lr").join(&name))?;
        p.hr.save_png(dir.join("hr").join(&name))?;
        rows.push(ManifestRow {
            lr_path: format!("lr/{name}"),
            hr_path: format!("hr/{name}"),
            text: p.text.clone(),
            source: Source::Synthetic,
            focal_lr_mm: 1.0,
            focal_hr_mm: 2.0,
            direction: Direction::Horizontal,
            subset: p.subset,
        });
    }
    write_manifest(dir.join("manifest.jsonl"), &rows)?;
    Ok(DatasetManifest {
        root: dir.to_path_buf(),
        records: rows,
    })
}
