//! Composed digit images with a controlled number of shared class bits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_bsc, load_idx, ClassBits, IdxData, PairBatch, BANK_LIMIT};
use crate::nn::Matrix;
use crate::rng;
use crate::{Error, Result};

/// Square grayscale plane with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels for a {side}x{side} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { side, pixels })
    }

    pub fn constant(side: usize, value: f64) -> Self {
        Self {
            side,
            pixels: vec![value.clamp(0.0, 1.0); side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.side + c]
    }
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(image: &Image, new_side: usize) -> Result<Image> {
    if new_side < 2 {
        return Err(Error::Domain(format!("target side {new_side} is below 2")));
    }
    let old = image.side;
    if old == 0 {
        return Err(Error::Domain("cannot resize an empty image".into()));
    }
    if old == new_side {
        return Ok(image.clone());
    }
    let scale = old as f64 / new_side as f64;
    let taps: Vec<(usize, usize, f64)> = (0..new_side)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (old - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(old - 1);
            (lo, hi, src - lo as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(new_side * new_side);
    for &(r0, r1, fr) in &taps {
        for &(c0, c1, fc) in &taps {
            let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
            let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
            pixels.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0));
        }
    }
    Ok(Image {
        side: new_side,
        pixels,
    })
}

/// `max(digit, eta * background)` per pixel: the digit stays on top.
pub fn add_nuisance(image: &Image, background: &Image, eta: f64) -> Result<Image> {
    if image.side != background.side {
        return Err(Error::Shape(format!(
            "image side {} vs background side {}",
            image.side, background.side
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(Image {
        side: image.side,
        pixels: image
            .pixels
            .iter()
            .zip(&background.pixels)
            .map(|(&d, &b)| d.max(eta * b))
            .collect(),
    })
}

/// A nuisance image as one or three planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    planes: Vec<Image>,
}

impl Background {
    pub fn new(planes: Vec<Image>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Shape("background needs at least one plane".into()));
        }
        if planes.iter().any(|p| p.side != planes[0].side) {
            return Err(Error::Shape("background planes differ in size".into()));
        }
        Ok(Self { planes })
    }

    pub fn planes(&self) -> &[Image] {
        &self.planes
    }

    /// Plane used for output channel `c`; grayscale backgrounds repeat.
    pub fn plane(&self, c: usize) -> &Image {
        &self.planes[c % self.planes.len()]
    }

    fn resized(&self, side: usize) -> Result<Self> {
        Ok(Self {
            planes: self
                .planes
                .iter()
                .map(|p| resize_bilinear(p, side))
                .collect::<Result<_>>()?,
        })
    }
}

/// Source images by class label plus an optional background bank.
#[derive(Debug, Clone, Default)]
pub struct SourceBank {
    digits: BTreeMap<u8, Vec<Image>>,
    backgrounds: Vec<Background>,
    provenance: String,
}

impl SourceBank {
    pub fn new(provenance: impl Into<String>) -> Self {
        Self {
            provenance: provenance.into(),
            ..Self::default()
        }
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn add_digit(&mut self, label: u8, image: Image) {
        self.digits.entry(label).or_default().push(image);
    }

    pub fn add_background(&mut self, background: Background) {
        self.backgrounds.push(background);
    }

    pub fn set_backgrounds(&mut self, backgrounds: Vec<Background>) {
        self.backgrounds = backgrounds;
    }

    pub fn digits(&self, label: u8) -> &[Image] {
        self.digits.get(&label).map_or(&[], Vec::as_slice)
    }

    pub fn backgrounds(&self) -> &[Background] {
        &self.backgrounds
    }

    pub fn digit_count(&self) -> usize {
        self.digits.values().map(Vec::len).sum()
    }

    /// Loads labelled images from an IDX image/label file pair, keeping only
    /// `classes` and at most [`BANK_LIMIT`] images.
    pub fn from_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: &[u8]) -> Result<Self> {
        let (images, labels) = (images.as_ref(), labels.as_ref());
        let data = load_idx(images)?;
        let IdxData::Images { count, rows, cols, .. } = &data else {
            return Err(Error::config("data.images", format!("{} holds labels", images.display())));
        };
        let (count, rows, cols) = (*count, *rows, *cols);
        if rows != cols {
            return Err(Error::config("data.images", format!("non-square {rows}x{cols} images")));
        }
        let IdxData::Labels(lab) = load_idx(labels)? else {
            return Err(Error::config("data.labels", format!("{} holds images", labels.display())));
        };
        if lab.len() != count {
            return Err(Error::config(
                "data.labels",
                format!("{} labels for {count} images", lab.len()),
            ));
        }
        let mut bank = Self::new(format!("idx:{}", images.display()));
        for (i, &label) in lab.iter().enumerate() {
            if bank.digit_count() >= BANK_LIMIT {
                break;
            }
            if classes.contains(&label) {
                let px = data.image(i).expect("index in range").to_vec();
                bank.add_digit(label, Image { side: rows, pixels: px });
            }
        }
        Ok(bank)
    }

    /// Procedurally rendered 28x28 glyphs for classes 0 (a ring) and 1 (a
    /// slanted stroke), with random placement, size and stroke width. Used
    /// when no IDX digit files are available.
    pub fn synthetic_digits(per_class: usize, seed: u64) -> Self {
        let per_class = per_class.min(BANK_LIMIT / 2);
        let mut rng = rng::stream(seed, rng::purpose::BANK);
        let mut bank = Self::new(format!("synthetic-glyphs:{per_class}:{seed}"));
        for label in [0u8, 1] {
            for _ in 0..per_class {
                bank.add_digit(label, render_glyph(label, &mut rng));
            }
        }
        bank
    }

    /// Smooth random textures standing in for natural-image backgrounds.
    pub fn synthetic_backgrounds(count: usize, side: usize, seed: u64) -> Vec<Background> {
        let mut rng = rng::stream(seed, rng::purpose::BANK + 100);
        (0..count)
            .map(|_| {
                let planes = (0..3).map(|_| render_texture(side, &mut rng)).collect();
                Background { planes }
            })
            .collect()
    }

    /// Reads every decodable image file in `dir` (sorted by name) as an RGB
    /// background, centre-cropped to a square and resized to `side`.
    pub fn load_backgrounds(dir: impl AsRef<Path>, side: usize) -> Result<Vec<Background>> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for path in paths.into_iter().take(BANK_LIMIT) {
            let Ok(img) = image::open(&path) else {
                log::warn!("skipping undecodable background {}", path.display());
                continue;
            };
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let s = w.min(h);
            let (x0, y0) = ((w - s) / 2, (h - s) / 2);
            let planes = (0..3)
                .map(|c| {
                    let px = (0..s)
                        .flat_map(|r| (0..s).map(move |q| (r, q)))
                        .map(|(r, q)| f64::from(rgb.get_pixel(x0 + q, y0 + r)[c]) / 255.0)
                        .collect();
                    resize_bilinear(&Image { side: s as usize, pixels: px }, side)
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(Background { planes });
        }
        Ok(out)
    }
}

fn glyph_coverage(distance: f64, half_width: f64) -> f64 {
    (half_width - distance + 0.5).clamp(0.0, 1.0)
}

fn render_glyph<R: Rng + ?Sized>(label: u8, rng: &mut R) -> Image {
    const SIDE: usize = 28;
    let cx = 13.5 + rng.random_range(-1.5..1.5);
    let cy = 13.5 + rng.random_range(-1.5..1.5);
    let half_width = rng.random_range(0.9..1.6);
    let ink = rng.random_range(0.85..1.0);
    let mut pixels = vec![0.0; SIDE * SIDE];
    match label {
        0 => {
            let rx = rng.random_range(5.5..7.5);
            let ry = rng.random_range(8.0..10.0);
            let tilt: f64 = rng.random_range(-0.25..0.25);
            let (sn, cs) = tilt.sin_cos();
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                    let (u, v) = (cs * dx + sn * dy, -sn * dx + cs * dy);
                    let rho = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                    // Radial distance to the ellipse, scaled back to pixels.
                    let dist = (rho - 1.0).abs() * (rx * ry).sqrt();
                    pixels[r * SIDE + c] = ink * glyph_coverage(dist, half_width);
                }
            }
        }
        _ => {
            let slant = rng.random_range(-0.3..0.3);
            let half_len = rng.random_range(8.0..10.0);
            let (ax, ay) = (cx - slant * half_len, cy - half_len);
            let (bx, by) = (cx + slant * half_len, cy + half_len);
            let (ex, ey) = (bx - ax, by - ay);
            let len2 = ex * ex + ey * ey;
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let (px, py) = (c as f64 - ax, r as f64 - ay);
                    let t = ((px * ex + py * ey) / len2).clamp(0.0, 1.0);
                    let dist = ((px - t * ex).powi(2) + (py - t * ey).powi(2)).sqrt();
                    pixels[r * SIDE + c] = ink * glyph_coverage(dist, half_width);
                }
            }
        }
    }
    Image { side: SIDE, pixels }
}

fn render_texture<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Image {
    let coarse = 4;
    let grid: Vec<f64> = (0..coarse * coarse).map(|_| rng.random::<f64>()).collect();
    let base = Image {
        side: coarse,
        pixels: grid,
    };
    resize_bilinear(&base, side.max(2)).expect("side >= 2")
}

fn default_grid() -> usize {
    2
}
fn default_channels() -> usize {
    1
}
fn default_side() -> usize {
    64
}
fn default_class_pair() -> [u8; 2] {
    [0, 1]
}

/// Layout of a composed image dataset. `grid^2 * channels` independent
/// class bits are shared between `x` and `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Output side length in pixels; must be divisible by `grid`.
    #[serde(default = "default_side")]
    pub side: usize,
    /// Background strength in `[0, 1]`.
    #[serde(default)]
    pub eta: f64,
    /// Channel crossover probability in `[0, 0.5]`.
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_class_pair")]
    pub class_pair: [u8; 2],
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            channels: default_channels(),
            side: default_side(),
            eta: 0.0,
            beta: 0.0,
            class_pair: default_class_pair(),
        }
    }
}

impl ImageSpec {
    /// `d_s`.
    pub fn sources(&self) -> usize {
        self.grid * self.grid * self.channels
    }

    pub fn tile_side(&self) -> usize {
        self.side / self.grid.max(1)
    }

    /// Flattened observation width, `channels * side^2`.
    pub fn flat_dim(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::config("dataset.grid", "must be at least 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("dataset.channels", "must be 1 or 3"));
        }
        if !self.side.is_multiple_of(self.grid) {
            return Err(Error::config(
                "dataset.side",
                format!("side {} is not divisible by grid {}", self.side, self.grid),
            ));
        }
        if self.tile_side() < 2 {
            return Err(Error::config("dataset.side", "tiles must be at least 2 pixels wide"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("dataset.eta", "eta must lie in [0, 1]"));
        }
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::config("dataset.beta", "beta must lie in [0, 0.5]"));
        }
        if self.class_pair[0] == self.class_pair[1] {
            return Err(Error::config("dataset.class_pair", "classes must differ"));
        }
        Ok(())
    }
}

/// A bank prepared for one [`ImageSpec`]: digits resized to the tile side and
/// backgrounds to the full side.
#[derive(Debug, Clone)]
pub struct ImageComposer {
    spec: ImageSpec,
    tiles: [Vec<Image>; 2],
    backgrounds: Vec<Background>,
}

/// A composed batch together with the bank index used for every tile.
#[derive(Debug, Clone)]
pub struct ComposedBatch {
    pub batch: PairBatch,
    pub tile_index_x: Vec<usize>,
    pub tile_index_y: Vec<usize>,
}

impl ImageComposer {
    pub fn new(spec: &ImageSpec, bank: &SourceBank) -> Result<Self> {
        spec.validate()?;
        let ts = spec.tile_side();
        let mut tiles: [Vec<Image>; 2] = Default::default();
        for (slot, &label) in tiles.iter_mut().zip(&spec.class_pair) {
            let src = bank.digits(label);
            if src.is_empty() {
                return Err(Error::config(
                    "dataset.class_pair",
                    format!("source bank `{}` has no images of class {label}", bank.provenance()),
                ));
            }
            *slot = src.iter().map(|im| resize_bilinear(im, ts)).collect::<Result<_>>()?;
        }
        let backgrounds = if spec.eta > 0.0 {
            if bank.backgrounds().is_empty() {
                return Err(Error::config("dataset.eta", "eta > 0 needs a background bank"));
            }
            bank.backgrounds()
                .iter()
                .map(|b| b.resized(spec.side))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            spec: *spec,
            tiles,
            backgrounds,
        })
    }

    pub fn spec(&self) -> &ImageSpec {
        &self.spec
    }

    /// Retunes the channel crossover without re-preparing the bank.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(0.0..=0.5).contains(&beta) {
            return Err(Error::Domain(format!("beta must lie in [0, 0.5], got {beta}")));
        }
        self.spec.beta = beta;
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<PairBatch> {
        Ok(self.sample_audited(k, rng)?.batch)
    }

    /// Draws `k` pairs. Class bits (and their channel flips) are drawn for
    /// the whole batch before any image, so the labels do not depend on
    /// `eta`.
    pub fn sample_audited<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<ComposedBatch> {
        let spec = &self.spec;
        let ds = spec.sources();
        let bits_x: Vec<bool> = (0..k * ds).map(|_| rng.random::<bool>()).collect();
        let bits_y = apply_bsc(&bits_x, spec.beta, rng)?;

        let mut idx_x = Vec::with_capacity(k * ds);
        let mut idx_y = Vec::with_capacity(k * ds);
        for (&bx, &by) in bits_x.iter().zip(&bits_y) {
            let pool_x = self.tiles[bx as usize].len();
            let pool_y = self.tiles[by as usize].len();
            let ix = rng.random_range(0..pool_x);
            let iy = if bx == by && pool_y > 1 {
                // Same class: a different sample of it.
                let j = rng.random_range(0..pool_y - 1);
                if j >= ix { j + 1 } else { j }
            } else {
                rng.random_range(0..pool_y)
            };
            idx_x.push(ix);
            idx_y.push(iy);
        }

        let flat = spec.flat_dim();
        let mut x = vec![0.0; k * flat];
        let mut y = vec![0.0; k * flat];
        for row in 0..k {
            for b in 0..ds {
                let at = row * ds + b;
                self.paint(&mut x[row * flat..(row + 1) * flat], b, &self.tiles[bits_x[at] as usize][idx_x[at]]);
                self.paint(&mut y[row * flat..(row + 1) * flat], b, &self.tiles[bits_y[at] as usize][idx_y[at]]);
            }
        }
        if spec.eta > 0.0 {
            for buf in [&mut x, &mut y] {
                for row in 0..k {
                    let bg = self.backgrounds.choose(rng).expect("non-empty");
                    self.composite(&mut buf[row * flat..(row + 1) * flat], bg);
                }
            }
        }
        Ok(ComposedBatch {
            batch: PairBatch {
                x: Matrix::from_vec(k, flat, x)?,
                y: Matrix::from_vec(k, flat, y)?,
                class_bits_x: ClassBits::new(k, ds, bits_x)?,
                class_bits_y: ClassBits::new(k, ds, bits_y)?,
            },
            tile_index_x: idx_x,
            tile_index_y: idx_y,
        })
    }

    /// Source `b` lives in channel `b / grid^2` at grid cell `b % grid^2`
    /// (row-major).
    fn paint(&self, out: &mut [f64], source: usize, tile: &Image) {
        let g = self.spec.grid;
        let side = self.spec.side;
        let ts = tile.side;
        let channel = source / (g * g);
        let cell = source % (g * g);
        let (tr, tc) = (cell / g, cell % g);
        let plane = &mut out[channel * side * side..(channel + 1) * side * side];
        for r in 0..ts {
            let dst = (tr * ts + r) * side + tc * ts;
            plane[dst..dst + ts].copy_from_slice(&tile.pixels[r * ts..(r + 1) * ts]);
        }
    }

    fn composite(&self, out: &mut [f64], bg: &Background) {
        let plane_len = self.spec.side * self.spec.side;
        let eta = self.spec.eta;
        for c in 0..self.spec.channels {
            let p = bg.plane(c);
            for (o, &b) in out[c * plane_len..(c + 1) * plane_len].iter_mut().zip(&p.pixels) {
                *o = o.max(eta * b);
            }
        }
    }
}

/// One-shot composition; prefer [`ImageComposer`] when sampling repeatedly.
pub fn compose_image_pair<R: Rng + ?Sized>(
    spec: &ImageSpec,
    bank: &SourceBank,
    k: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    ImageComposer::new(spec, bank)?.sample(k, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn bank() -> SourceBank {
        let mut b = SourceBank::synthetic_digits(20, 1);
        b.set_backgrounds(SourceBank::synthetic_backgrounds(5, 16, 2));
        b
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = render_glyph(0, &mut seeded(0));
        let same = resize_bilinear(&img, 28).unwrap();
        for (a, b) in img.pixels().iter().zip(same.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
        let flat = Image::constant(7, 0.3);
        for side in [2, 5, 7, 19, 64] {
            let r = resize_bilinear(&flat, side).unwrap();
            assert!(r.pixels().iter().all(|v| (v - 0.3).abs() < 1e-12));
        }
        assert!(resize_bilinear(&flat, 1).is_err());
    }

    #[test]
    fn resize_checkerboard_by_hand() {
        let board = Image::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let up = resize_bilinear(&board, 4).unwrap();
        // Output centre d maps to source coordinate (d + 0.5) / 2 - 0.5,
        // clamped: [0, 0.25, 0.75, 1].
        let coord = [0.0, 0.25, 0.75, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                let (fy, fx) = (coord[r], coord[c]);
                let want = (1.0 - fy) * (1.0 - fx) * 1.0 + fy * fx * 1.0;
                assert!((up.get(r, c) - want).abs() < 1e-12, "({r},{c})");
            }
        }
        assert!((up.get(1, 1) - 0.625).abs() < 1e-12);
        assert!((up.get(1, 2) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn nuisance_rules() {
        let digit = render_glyph(1, &mut seeded(3));
        let bg = render_texture(28, &mut seeded(4));
        assert_eq!(add_nuisance(&digit, &bg, 0.0).unwrap(), digit);
        let full = add_nuisance(&Image::constant(28, 0.0), &bg, 1.0).unwrap();
        assert_eq!(full, bg);
        let half = add_nuisance(&digit, &bg, 0.5).unwrap();
        for ((o, d), b) in half.pixels().iter().zip(digit.pixels()).zip(bg.pixels()) {
            assert!(*o >= 0.5 * b && *o >= *d && *o <= 1.0);
        }
        assert!(add_nuisance(&digit, &Image::constant(27, 0.0), 0.5).is_err());
        assert!(add_nuisance(&digit, &bg, 1.5).is_err());
    }

    #[test]
    fn glyphs_are_in_range_and_distinct() {
        let bank = SourceBank::synthetic_digits(10, 0);
        for label in [0, 1] {
            for im in bank.digits(label) {
                assert!(im.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
                assert!(im.pixels().iter().sum::<f64>() > 20.0);
            }
        }
        // A ring leaves the centre empty; a stroke crosses it.
        let centre = |im: &Image| (12..16).flat_map(|r| (12..16).map(move |c| (r, c))).map(|(r, c)| im.get(r, c)).sum::<f64>();
        assert!(bank.digits(0).iter().all(|im| centre(im) < 0.5));
        assert!(bank.digits(1).iter().all(|im| centre(im) > 1.0));
    }

    #[test]
    fn single_digit_on_black() {
        let spec = ImageSpec {
            grid: 1,
            side: 28,
            ..ImageSpec::default()
        };
        let b = bank();
        let batch = compose_image_pair(&spec, &b, 6, &mut seeded(1)).unwrap();
        assert_eq!(batch.x.cols(), 784);
        for i in 0..6 {
            let want = if batch.class_bits_x.get(i, 0) { 1 } else { 0 };
            let row = batch.x.row(i);
            assert!(b.digits(want).iter().any(|im| im.pixels() == row));
        }
    }

    #[test]
    fn grid_layout_and_label_agreement() {
        let spec = ImageSpec {
            grid: 2,
            side: 16,
            ..ImageSpec::default()
        };
        let b = bank();
        let comp = ImageComposer::new(&spec, &b).unwrap();
        let out = comp.sample_audited(8, &mut seeded(2)).unwrap();
        assert_eq!(spec.sources(), 4);
        assert_eq!(out.batch.x.cols(), 256);
        assert_eq!(out.batch.class_bits_x, out.batch.class_bits_y);
        for (ix, iy) in out.tile_index_x.iter().zip(&out.tile_index_y) {
            assert_ne!(ix, iy);
        }
        // Top-right tile of row 0 is source 1.
        let bit = out.batch.class_bits_x.get(0, 1) as usize;
        let tile = &comp.tiles[bit][out.tile_index_x[1]];
        for r in 0..8 {
            assert_eq!(&out.batch.x.row(0)[r * 16 + 8..r * 16 + 16], &tile.pixels()[r * 8..r * 8 + 8]);
        }
    }

    #[test]
    fn channel_stacking() {
        let spec = ImageSpec {
            grid: 1,
            channels: 3,
            side: 12,
            ..ImageSpec::default()
        };
        let batch = compose_image_pair(&spec, &bank(), 4, &mut seeded(3)).unwrap();
        assert_eq!(spec.sources(), 3);
        assert_eq!(batch.x.cols(), 3 * 144);
        assert_eq!(batch.class_bits_x.sources(), 3);
    }

    #[test]
    fn nuisance_keeps_labels() {
        let plain = ImageSpec {
            grid: 2,
            side: 16,
            ..ImageSpec::default()
        };
        let noisy = ImageSpec { eta: 0.7, ..plain };
        let b = bank();
        let a = compose_image_pair(&plain, &b, 10, &mut seeded(9)).unwrap();
        let n = compose_image_pair(&noisy, &b, 10, &mut seeded(9)).unwrap();
        assert_eq!(a.class_bits_x, n.class_bits_x);
        assert_eq!(a.class_bits_y, n.class_bits_y);
        for (p, q) in a.x.data().iter().zip(n.x.data()) {
            assert!(q >= p);
        }
        assert_ne!(a.x, n.x);
    }

    #[test]
    fn channel_noise_decouples_labels() {
        let spec = ImageSpec {
            grid: 2,
            side: 16,
            beta: 0.5,
            ..ImageSpec::default()
        };
        let batch = compose_image_pair(&spec, &bank(), 500, &mut seeded(4)).unwrap();
        let agree = batch
            .class_bits_x
            .as_slice()
            .iter()
            .zip(batch.class_bits_y.as_slice())
            .filter(|(a, b)| a == b)
            .count() as f64
            / 2000.0;
        assert!((agree - 0.5).abs() < 0.05);
    }

    #[test]
    fn config_errors() {
        let empty = SourceBank::new("empty");
        assert!(ImageComposer::new(&ImageSpec::default(), &empty).is_err());
        let no_bg = SourceBank::synthetic_digits(3, 0);
        let spec = ImageSpec {
            eta: 0.5,
            ..ImageSpec::default()
        };
        assert!(ImageComposer::new(&spec, &no_bg).is_err());
        assert!(ImageSpec { side: 30, grid: 4, ..ImageSpec::default() }.validate().is_err());
        assert!(ImageSpec { channels: 2, ..ImageSpec::default() }.validate().is_err());
        assert!(ImageSpec { beta: 0.6, ..ImageSpec::default() }.validate().is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let spec = ImageSpec {
            grid: 2,
            side: 16,
            eta: 0.3,
            beta: 0.1,
            ..ImageSpec::default()
        };
        let b = bank();
        let a = compose_image_pair(&spec, &b, 5, &mut seeded(77)).unwrap();
        let c = compose_image_pair(&spec, &b, 5, &mut seeded(77)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn background_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ::image::RgbImage::new(6, 4);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = ::image::Rgb([(x * 40) as u8, (y * 60) as u8, 255]);
        }
        img.save(dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"not an image").unwrap();
        let bgs = SourceBank::load_backgrounds(dir.path(), 8).unwrap();
        assert_eq!(bgs.len(), 1);
        assert_eq!(bgs[0].planes().len(), 3);
        assert_eq!(bgs[0].plane(0).side(), 8);
        assert!(bgs[0].plane(2).pixels().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
