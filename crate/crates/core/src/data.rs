//! Procedurally rendered factor datasets, labeled pools and batch sampling.
//!
//! Every dataset enumerates the full Cartesian product of its discrete
//! factors exactly once, in row-major order with the last factor varying
//! fastest. Labels are each factor's value mapped affinely onto [-1, 1].

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DATA_MAGIC: &str = "LARVAE-DATA v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 16×16 grayscale sprites: shape (3) × scale (4) × posX (8) × posY (8).
    DspritesMini,
    /// 16×16 RGB squares: objectHue (5) × backgroundHue (5) × posX (4) × posY (4).
    ColorsMini,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::DspritesMini => "dsprites-mini",
            Preset::ColorsMini => "colors-mini",
        }
    }

    pub fn generate(self) -> FactorDataset {
        match self {
            Preset::DspritesMini => generate_dsprites_mini(),
            Preset::ColorsMini => generate_colors_mini(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsprites-mini" => Ok(Preset::DspritesMini),
            "colors-mini" => Ok(Preset::ColorsMini),
            other => Err(Error::Invalid(format!(
                "unknown preset `{other}` (expected dsprites-mini or colors-mini)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub name: String,
    /// Ordered raw values, each in [0, 1].
    pub values: Vec<f64>,
}

impl Factor {
    fn new(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            values,
        }
    }

    fn evenly_spaced(name: &str, n: usize) -> Self {
        Self::new(name, (0..n).map(|i| i as f64 / (n - 1) as f64).collect())
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    fn range(&self) -> (f64, f64) {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Affine map of a raw value onto [-1, 1].
    pub fn normalize(&self, value: f64) -> f64 {
        let (lo, hi) = self.range();
        2.0 * (value - lo) / (hi - lo) - 1.0
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, label: f64) -> f64 {
        let (lo, hi) = self.range();
        lo + (label + 1.0) * 0.5 * (hi - lo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
    /// `[channels, height, width]`
    pub image_shape: [usize; 3],
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::Invalid("factor spec without factors".into()));
        }
        for f in &self.factors {
            if f.values.len() < 2 {
                return Err(Error::Invalid(format!(
                    "factor `{}` needs >= 2 values",
                    f.name
                )));
            }
            if f.name.is_empty() || f.name.contains([';', '\n', ',']) {
                return Err(Error::Invalid(format!("bad factor name `{}`", f.name)));
            }
            let (lo, hi) = f.range();
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!(
                    "factor `{}` has a degenerate range",
                    f.name
                )));
            }
        }
        if self.image_shape.contains(&0) {
            return Err(Error::Invalid("empty image shape".into()));
        }
        Ok(())
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(Factor::cardinality).collect()
    }

    /// Number of items in the full Cartesian product.
    pub fn size(&self) -> usize {
        self.cardinalities().iter().product()
    }

    pub fn pixels(&self) -> usize {
        self.image_shape.iter().product()
    }

    /// Factor value indices of item `i` in enumeration order.
    pub fn combination(&self, mut i: usize) -> Vec<usize> {
        let cards = self.cardinalities();
        let mut out = vec![0; cards.len()];
        for k in (0..cards.len()).rev() {
            out[k] = i % cards[k];
            i /= cards[k];
        }
        out
    }

    /// Inverse of [`combination`](Self::combination).
    pub fn item_index(&self, combination: &[usize]) -> usize {
        self.cardinalities()
            .iter()
            .zip(combination)
            .fold(0, |acc, (&card, &c)| acc * card + c)
    }

    /// Renders every combination with `render(raw_values, pixels_out)`.
    pub fn build(self, mut render: impl FnMut(&[f64], &mut [f64])) -> FactorDataset {
        let n = self.size();
        let k = self.num_factors();
        let p = self.pixels();
        let mut images = vec![0.0; n * p];
        let mut labels = Vec::with_capacity(n * k);
        let mut factor_indices = Vec::with_capacity(n * k);
        let mut raw = vec![0.0; k];
        for i in 0..n {
            let combo = self.combination(i);
            for (j, &c) in combo.iter().enumerate() {
                raw[j] = self.factors[j].values[c];
                labels.push(self.factors[j].normalize(raw[j]));
            }
            factor_indices.extend_from_slice(&combo);
            render(&raw, &mut images[i * p..(i + 1) * p]);
        }
        FactorDataset {
            images: Tensor::new([n, p], images).expect("image buffer"),
            labels: Tensor::new([n, k], labels).expect("label buffer"),
            factor_indices,
            spec: self,
        }
    }
}

/// Images, normalized labels and the factor index table for every item.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorDataset {
    pub spec: FactorSpec,
    /// `[N, C*H*W]`, values in [0, 1].
    pub images: Tensor,
    /// `[N, K]`, values in [-1, 1].
    pub labels: Tensor,
    /// Row-major `[N, K]` value indices.
    pub factor_indices: Vec<usize>,
}

impl FactorDataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_factors(&self) -> usize {
        self.spec.num_factors()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.spec.pixels();
        &self.images.data()[i * p..(i + 1) * p]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        let k = self.num_factors();
        &self.labels.data()[i * k..(i + 1) * k]
    }

    pub fn factor_index(&self, i: usize, k: usize) -> usize {
        self.factor_indices[i * self.num_factors() + k]
    }

    /// Observed `(min, max)` of label dimension `k`.
    pub fn label_range(&self, k: usize) -> (f64, f64) {
        let kk = self.num_factors();
        self.labels
            .data()
            .iter()
            .skip(k)
            .step_by(kk)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{DATA_MAGIC}")?;
        for f in &self.spec.factors {
            let vals: Vec<String> = f.values.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{};{}", f.name, vals.join(","))?;
        }
        let [c, h, wd] = self.spec.image_shape;
        writeln!(w, "{c} {h} {wd}")?;
        for v in self.images.data().iter().chain(self.labels.data()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            kind: "dataset",
            detail,
        };
        let mut line = String::new();
        let mut next_line = |line: &mut String| -> Result<()> {
            line.clear();
            r.read_line(line).map_err(|e| bad(e.to_string()))?;
            if line.is_empty() {
                return Err(bad("unexpected end of header".into()));
            }
            Ok(())
        };
        next_line(&mut line)?;
        if line.trim_end() != DATA_MAGIC {
            return Err(bad(format!("bad magic `{}`", line.trim_end())));
        }
        let mut factors = Vec::new();
        let image_shape = loop {
            next_line(&mut line)?;
            let l = line.trim_end();
            if let Some((name, vals)) = l.split_once(';') {
                let values = vals
                    .split(',')
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| bad(format!("value `{v}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                factors.push(Factor::new(name, values));
            } else {
                let dims = l
                    .split_whitespace()
                    .map(|d| {
                        d.parse::<usize>()
                            .map_err(|e| bad(format!("dim `{d}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let [c, h, w] = dims[..] else {
                    return Err(bad(format!("image shape line `{l}`")));
                };
                break [c, h, w];
            }
        };
        let spec = FactorSpec {
            factors,
            image_shape,
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        let (n, k, p) = (spec.size(), spec.num_factors(), spec.pixels());
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)
                .map_err(|e| bad(format!("payload: {e}")))?;
            Ok(buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let images = read_block(n * p)?;
        let labels = read_block(n * k)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let factor_indices = (0..n).flat_map(|i| spec.combination(i)).collect();
        Ok(Self {
            images: Tensor::new([n, p], images)?,
            labels: Tensor::new([n, k], labels)?,
            factor_indices,
            spec,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

// -------------------------------------------------------------------------
// presets
// -------------------------------------------------------------------------

/// Side length of the mini presets.
pub const MINI_SIDE: usize = 16;

pub const SPRITE_SHAPES: [&str; 3] = ["square", "ellipse", "triangle"];

/// Half-extent in pixels of a sprite at a given raw scale value.
pub fn sprite_half_extent(scale: f64) -> f64 {
    4.0 * scale
}

/// Pixel-space center for a raw position value in [0, 1].
pub fn sprite_center(pos: f64) -> f64 {
    4.0 + 8.0 * pos
}

/// Whether the pixel center `(px, py)` lies inside a sprite.
pub fn sprite_covers(shape: usize, half: f64, cx: f64, cy: f64, px: f64, py: f64) -> bool {
    let (dx, dy) = (px - cx, py - cy);
    match shape {
        0 => dx.abs() <= half && dy.abs() <= half,
        1 => (dx / half).powi(2) + (dy / (0.6 * half)).powi(2) <= 1.0,
        _ => dy >= -half && dy <= half && dx.abs() <= 0.5 * (dy + half),
    }
}

/// Desk-scale sprite dataset: N = 3 · 4 · 8 · 8 = 768.
pub fn generate_dsprites_mini() -> FactorDataset {
    let spec = FactorSpec {
        factors: vec![
            Factor::evenly_spaced("shape", 3),
            Factor::new("scale", vec![0.5, 4.0 / 6.0, 5.0 / 6.0, 1.0]),
            Factor::evenly_spaced("posX", 8),
            Factor::evenly_spaced("posY", 8),
        ],
        image_shape: [1, MINI_SIDE, MINI_SIDE],
    };
    spec.build(|raw, px| {
        let shape = (raw[0] * 2.0).round() as usize;
        let half = sprite_half_extent(raw[1]);
        let (cx, cy) = (sprite_center(raw[2]), sprite_center(raw[3]));
        for y in 0..MINI_SIDE {
            for x in 0..MINI_SIDE {
                if sprite_covers(shape, half, cx, cy, x as f64 + 0.5, y as f64 + 0.5) {
                    px[y * MINI_SIDE + x] = 1.0;
                }
            }
        }
    })
}

/// HSV (all in [0, 1]) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Half-size of the square object in the colors preset.
pub const COLOR_OBJECT_HALF: f64 = 3.0;

/// Desk-scale color dataset: N = 5 · 5 · 4 · 4 = 400.
pub fn generate_colors_mini() -> FactorDataset {
    let hues = vec![0.0, 0.2, 0.4, 0.6, 0.8];
    let spec = FactorSpec {
        factors: vec![
            Factor::new("objectHue", hues.clone()),
            Factor::new("backgroundHue", hues),
            Factor::evenly_spaced("posX", 4),
            Factor::evenly_spaced("posY", 4),
        ],
        image_shape: [3, MINI_SIDE, MINI_SIDE],
    };
    let plane = MINI_SIDE * MINI_SIDE;
    spec.build(|raw, px| {
        let fg = hsv_to_rgb(raw[0], 1.0, 1.0);
        let bg = hsv_to_rgb(raw[1], 0.6, 0.5);
        let (cx, cy) = (sprite_center(raw[2]), sprite_center(raw[3]));
        for y in 0..MINI_SIDE {
            for x in 0..MINI_SIDE {
                let inside =
                    sprite_covers(0, COLOR_OBJECT_HALF, cx, cy, x as f64 + 0.5, y as f64 + 0.5);
                let rgb = if inside { fg } else { bg };
                for (ch, v) in rgb.iter().enumerate() {
                    px[ch * plane + y * MINI_SIDE + x] = *v;
                }
            }
        }
    })
}

// -------------------------------------------------------------------------
// labeled pool and batches
// -------------------------------------------------------------------------

/// Indices of the items whose labels are observed.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPool {
    /// Sorted, unique.
    pub indices: Vec<usize>,
    pub eta: f64,
}

impl LabeledPool {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Samples `round(eta * N)` (at least one) labeled items without replacement.
pub fn make_labeled_pool(
    dataset: &FactorDataset,
    eta: f64,
    rng: &mut impl Rng,
) -> Result<LabeledPool> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Invalid(format!("eta must be in (0, 1], got {eta}")));
    }
    let n = dataset.len();
    let size = ((eta * n as f64).round() as usize).clamp(1, n);
    let mut indices = index::sample(rng, n, size).into_vec();
    indices.sort_unstable();
    Ok(LabeledPool { indices, eta })
}

/// Images only; labels are deliberately absent.
#[derive(Clone, Debug)]
pub struct UnlabeledBatch {
    pub indices: Vec<usize>,
    pub images: Tensor,
}

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Tensor,
}

/// `size` items drawn uniformly from the whole dataset, without replacement
/// when the dataset is large enough.
pub fn sample_unlabeled(
    dataset: &FactorDataset,
    size: usize,
    rng: &mut impl Rng,
) -> Result<UnlabeledBatch> {
    if size == 0 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    let n = dataset.len();
    let indices = if size <= n {
        index::sample(rng, n, size).into_vec()
    } else {
        (0..size).map(|_| rng.gen_range(0..n)).collect()
    };
    Ok(UnlabeledBatch {
        images: dataset.images.gather_rows(&indices)?,
        indices,
    })
}

/// `size` items drawn uniformly from the pool, with replacement when the
/// pool is smaller than the batch.
pub fn sample_labeled(
    dataset: &FactorDataset,
    pool: &LabeledPool,
    size: usize,
    rng: &mut impl Rng,
) -> Result<LabeledBatch> {
    if pool.is_empty() {
        return Err(Error::Invalid("labeled pool is empty".into()));
    }
    if size == 0 {
        return Err(Error::Invalid("batch size must be >= 1".into()));
    }
    let m = pool.len();
    let picks: Vec<usize> = if size <= m {
        index::sample(rng, m, size).into_vec()
    } else {
        (0..size).map(|_| rng.gen_range(0..m)).collect()
    };
    let indices: Vec<usize> = picks.into_iter().map(|p| pool.indices[p]).collect();
    Ok(LabeledBatch {
        images: dataset.images.gather_rows(&indices)?,
        labels: dataset.labels.gather_rows(&indices)?,
        indices,
    })
}

/// One unlabeled batch from the dataset and one labeled batch from the pool.
pub fn sample_batches(
    dataset: &FactorDataset,
    pool: &LabeledPool,
    size: usize,
    rng: &mut impl Rng,
) -> Result<(UnlabeledBatch, LabeledBatch)> {
    let unlabeled = sample_unlabeled(dataset, size, rng)?;
    let labeled = sample_labeled(dataset, pool, size, rng)?;
    Ok((unlabeled, labeled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn dsprites_mini_size_and_label_width() {
        let d = generate_dsprites_mini();
        assert_eq!(d.len(), 768);
        assert_eq!(d.labels.shape(), &[768, 4]);
        assert_eq!(d.images.shape(), &[768, 256]);
    }

    #[test]
    fn largest_centered_square_pixel_count() {
        let d = generate_dsprites_mini();
        // shape=square (0), scale=1.0 (3), posX=posY=3 (closest to center from below)
        let spec = &d.spec;
        let i = spec.item_index(&[0, 3, 3, 3]);
        let drawn = d.image(i).iter().filter(|&&v| v > 0.0).count();
        // independent interval count of pixel centers j + 0.5 within [c - h, c + h]
        let c = sprite_center(3.0 / 7.0);
        let h = sprite_half_extent(1.0);
        let lo = (c - h - 0.5).ceil() as i64;
        let hi = (c + h - 0.5).floor() as i64;
        let side = (hi.min(15) - lo.max(0) + 1) as usize;
        assert_eq!(side, 8);
        assert_eq!(drawn, side * side);
    }

    #[test]
    fn every_sprite_draws_foreground() {
        let d = generate_dsprites_mini();
        for i in 0..d.len() {
            assert!(d.image(i).iter().any(|&v| v > 0.0), "item {i} is blank");
        }
    }

    #[test]
    fn colors_mini_properties() {
        let d = generate_colors_mini();
        assert_eq!(d.len(), 400);
        assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // changing object hue only touches foreground pixels
        let a = d.spec.item_index(&[0, 2, 1, 1]);
        let b = d.spec.item_index(&[3, 2, 1, 1]);
        let plane = MINI_SIDE * MINI_SIDE;
        let (cx, cy) = (sprite_center(1.0 / 3.0), sprite_center(1.0 / 3.0));
        for y in 0..MINI_SIDE {
            for x in 0..MINI_SIDE {
                let fg =
                    sprite_covers(0, COLOR_OBJECT_HALF, cx, cy, x as f64 + 0.5, y as f64 + 0.5);
                for ch in 0..3 {
                    let k = ch * plane + y * MINI_SIDE + x;
                    if !fg {
                        assert_eq!(d.image(a)[k], d.image(b)[k]);
                    }
                }
            }
        }
        assert_ne!(d.image(a), d.image(b));
    }

    #[test]
    fn labels_unique_and_in_range() {
        for d in [generate_dsprites_mini(), generate_colors_mini()] {
            let rows: HashSet<Vec<u64>> = (0..d.len())
                .map(|i| d.label(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(rows.len(), d.len());
            assert!(d.labels.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn labels_and_indices_are_mutually_recoverable() {
        let d = generate_dsprites_mini();
        for i in (0..d.len()).step_by(7) {
            for k in 0..d.num_factors() {
                let f = &d.spec.factors[k];
                let raw = f.denormalize(d.label(i)[k]);
                let idx = f
                    .values
                    .iter()
                    .position(|v| (v - raw).abs() < 1e-12)
                    .unwrap();
                assert_eq!(idx, d.factor_index(i, k));
            }
        }
    }

    #[test]
    fn factor_marginals_are_uniform() {
        let d = generate_dsprites_mini();
        for (k, f) in d.spec.factors.iter().enumerate() {
            let mut counts = vec![0; f.cardinality()];
            for i in 0..d.len() {
                counts[d.factor_index(i, k)] += 1;
            }
            assert!(counts.iter().all(|&c| c == d.len() / f.cardinality()));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(generate_dsprites_mini(), generate_dsprites_mini());
        assert_eq!(generate_colors_mini(), generate_colors_mini());
    }

    #[test]
    fn serialization_round_trip_is_bit_identical() {
        let d = generate_colors_mini();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = FactorDataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let d = generate_dsprites_mini();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(FactorDataset::read_from(&mut buf.as_slice()).is_err());
        assert!(FactorDataset::read_from(&mut &b"LARVAE-DATA v2\n"[..]).is_err());
    }

    #[test]
    fn pool_sizes() {
        let d = generate_dsprites_mini();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = make_labeled_pool(&d, 1.0, &mut rng).unwrap();
        assert_eq!(all.indices, (0..768).collect::<Vec<_>>());
        let small = make_labeled_pool(&d, 0.01, &mut rng).unwrap();
        assert_eq!(small.len(), 8);
        let uniq: HashSet<_> = small.indices.iter().collect();
        assert_eq!(uniq.len(), 8);
        assert!(make_labeled_pool(&d, 0.0, &mut rng).is_err());
        assert!(make_labeled_pool(&d, 1.5, &mut rng).is_err());
    }

    #[test]
    fn equal_seeds_equal_pools() {
        let d = generate_dsprites_mini();
        let a = make_labeled_pool(&d, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_labeled_pool(&d, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batches_have_requested_size_and_repeat_from_small_pool() {
        let d = generate_dsprites_mini();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = make_labeled_pool(&d, 0.01, &mut rng).unwrap();
        let (u, l) = sample_batches(&d, &pool, 64, &mut rng).unwrap();
        assert_eq!(u.indices.len(), 64);
        assert_eq!(u.images.shape(), &[64, 256]);
        assert_eq!(l.indices.len(), 64);
        assert_eq!(l.labels.shape(), &[64, 4]);
        let distinct: HashSet<_> = l.indices.iter().collect();
        assert!(distinct.len() <= 8);
        assert!(l.indices.iter().all(|i| pool.indices.contains(i)));
        for (row, &i) in l.indices.iter().enumerate() {
            assert_eq!(&l.labels.data()[row * 4..row * 4 + 4], d.label(i));
        }
    }

    #[test]
    fn empty_pool_is_an_error() {
        let d = generate_dsprites_mini();
        let pool = LabeledPool {
            indices: vec![],
            eta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_labeled(&d, &pool, 4, &mut rng).is_err());
    }
}
