//! Data generation and file formats: synthetic fixed-effect data, LIBSVM,
//! dense CSV, PGM images and the block-corruption pipeline.

use std::io::{BufRead, Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::matmul;
use crate::linalg::polar_factor;
use crate::types::{DataMatrix, StiefelPoint};

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Polar factor of a `d x k` standard Gaussian matrix drawn from `rng`.
pub fn random_stiefel_from<R: Rng>(rng: &mut R, d: usize, k: usize) -> Result<StiefelPoint> {
    if k == 0 || k > d {
        return Err(Error::shape(format!(
            "need 1 <= K <= d, got d = {d}, K = {k}"
        )));
    }
    polar_factor(gaussian_matrix(rng, d, k).view())
}

/// Seeded random point of St(d, k).
pub fn random_stiefel(d: usize, k: usize, seed: u64) -> Result<StiefelPoint> {
    random_stiefel_from(&mut ChaCha8Rng::seed_from_u64(seed), d, k)
}

/// Seeded starting point for the solver. Uses a different stream of the
/// generator than the data generators, so the start never coincides with a
/// planted subspace drawn from the same seed.
pub fn initial_point(d: usize, k: usize, seed: u64) -> Result<StiefelPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    random_stiefel_from(&mut rng, d, k)
}

/// Inverse CDF of the zero-mean Laplace distribution with scale `b`.
pub fn laplace_sample(b: f64, u: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::domain(format!(
            "Laplace scale must be positive, got {b}"
        )));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!(
            "uniform draw must lie in (0,1), got {u}"
        )));
    }
    let c = u - 0.5;
    Ok(-b * c.signum() * (1.0 - 2.0 * c.abs()).ln())
}

/// One Laplace draw with scale `b`, rejecting `u = 0`.
pub fn laplace_draw<R: Rng>(rng: &mut R, b: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return laplace_sample(b, u).expect("scale checked by caller");
        }
    }
}

/// Planted subspace behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub q_true: StiefelPoint,
    pub sigma: f64,
    pub seed: u64,
}

/// Fixed-effect model `X = Q_true S + N`, row-centered.
///
/// Draw order from one seeded stream: `Q_true` (polar factor of a Gaussian
/// `d x K`), the `K x n` Gaussian coefficients, then the Laplace noise with
/// variance `sigma^2`.
pub fn gen_synthetic(
    d: usize,
    n: usize,
    k: usize,
    sigma: f64,
    seed: u64,
) -> Result<(DataMatrix, SyntheticTruth)> {
    if k == 0 || k > d.min(n) {
        return Err(Error::shape(format!(
            "need 1 <= K <= min(d, n), got d = {d}, n = {n}, K = {k}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_true = random_stiefel_from(&mut rng, d, k)?;
    let coeffs = gaussian_matrix(&mut rng, k, n);
    let mut x = matmul(q_true.values(), coeffs.view());
    if sigma > 0.0 {
        let b = sigma / std::f64::consts::SQRT_2;
        x.iter_mut().for_each(|v| *v += laplace_draw(&mut rng, b));
    }
    let (x, _) = center_values(x);
    Ok((
        x,
        SyntheticTruth {
            q_true,
            sigma,
            seed,
        },
    ))
}

/// Subtracts each row's mean; returns the centered data and the means.
pub fn center_values(mut values: Array2<f64>) -> (DataMatrix, Array1<f64>) {
    let means = if values.ncols() == 0 {
        Array1::zeros(values.nrows())
    } else {
        values.mean_axis(Axis(1)).expect("nonempty rows")
    };
    for (mut row, &m) in values.axis_iter_mut(Axis(0)).zip(means.iter()) {
        row.mapv_inplace(|v| v - m);
    }
    (DataMatrix::centered_unchecked(values), means)
}

/// Row-centered copy of `x`.
pub fn center_features(x: &DataMatrix) -> DataMatrix {
    center_values(x.values().to_owned()).0
}

/// Samples with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: DataMatrix,
    pub labels: Vec<i64>,
}

impl LabeledDataset {
    pub fn new(x: DataMatrix, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != x.n() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                x.n()
            )));
        }
        Ok(Self { x, labels })
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses sparse LIBSVM text into dense columns.
///
/// `dim` fixes the feature count; otherwise it is the largest index seen.
/// Text after `#` on a line is ignored.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_idx = 0usize;
    let mut rounded = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(parse_err(lineno, "non-finite label"));
        }
        if label.fract() != 0.0 {
            rounded += 1;
        }
        labels.push(label.round() as i64);

        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad value {val:?}")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_err(lineno, format!("index {idx} does not increase")));
            }
            if !val.is_finite() {
                return Err(parse_err(
                    lineno,
                    format!("non-finite value at index {idx}"),
                ));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(parse_err(
                        lineno,
                        format!("index {idx} exceeds dimension {d}"),
                    ));
                }
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        max_idx = max_idx.max(last);
        columns.push(entries);
    }
    if rounded > 0 {
        log::warn!("{rounded} non-integer labels rounded");
    }
    if columns.is_empty() {
        return Err(parse_err(0, "no samples"));
    }
    let d = dim.unwrap_or(max_idx);
    if d == 0 {
        return Err(parse_err(0, "no features"));
    }
    let mut x = Array2::<f64>::zeros((d, columns.len()));
    for (j, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            x[[i, j]] = v;
        }
    }
    LabeledDataset::new(DataMatrix::new(x)?, labels)
}

/// Writes nonzero entries in LIBSVM format.
pub fn write_libsvm<W: Write>(data: &LabeledDataset, mut out: W) -> Result<()> {
    let x = data.x.values();
    for (j, label) in data.labels.iter().enumerate() {
        write!(out, "{label}")?;
        for (i, &v) in x.column(j).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a headerless comma-separated matrix (one row per line).
pub fn read_csv_matrix<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if cols.is_some_and(|c| c != rec.len()) {
            return Err(parse_err(i + 1, "ragged row"));
        }
        cols = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad number {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(0, "empty matrix"))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| parse_err(0, e.to_string()))
}

/// Writes a matrix as comma-separated rows with round-trip exact numbers.
pub fn write_csv_matrix<W: Write>(m: ArrayView2<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Two balanced Gaussian clusters with means `+-separation/2 * u` for a random
/// unit `u`, isotropic noise `noise`, then row-centered. Labels are 0 and 1.
pub fn gen_planted_clusters(
    d: usize,
    n: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if d == 0 || n < 2 {
        return Err(Error::shape(format!(
            "need d >= 1 and n >= 2, got d = {d}, n = {n}"
        )));
    }
    if !(separation >= 0.0 && noise >= 0.0) {
        return Err(Error::domain("separation and noise must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array1<f64> = Array1::from_shape_simple_fn(d, || rng.sample(StandardNormal));
    u /= u.dot(&u).sqrt();
    let labels: Vec<i64> = (0..n).map(|j| (j % 2) as i64).collect();
    let mut x = gaussian_matrix(&mut rng, d, n);
    x *= noise;
    for (j, &l) in labels.iter().enumerate() {
        let sign = if l == 0 { -0.5 } else { 0.5 };
        x.column_mut(j).scaled_add(sign * separation, &u);
    }
    LabeledDataset::new(center_values(x).0, labels)
}

/// Grayscale image with pixel values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: Array2<f64>,
}

impl GrayImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Image("image has no pixels".into()));
        }
        if pixels.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::Image("pixel values must lie in [0, 255]".into()));
        }
        Ok(Self { pixels })
    }

    /// Clips values into `[0, 255]` first.
    pub fn from_clipped(pixels: Array2<f64>) -> Result<Self> {
        Self::new(pixels.mapv(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0) }))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// P2
    Ascii,
    /// P5
    Binary,
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("missing or bad {what}")))
    }
}

/// Reads a P2 or P5 PGM with `maxval <= 255`. Pixel values are kept as stored.
pub fn read_pgm<R: Read>(mut reader: R) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let format = match bytes.get(..2) {
        Some(b"P2") => PgmFormat::Ascii,
        Some(b"P5") => PgmFormat::Binary,
        _ => return Err(Error::Image("unsupported magic number".into())),
    };
    let mut cur = HeaderCursor {
        bytes: &bytes,
        pos: 2,
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Image("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("maxval {maxval} outside 1..=255")));
    }
    let count = width * height;
    let mut values = Vec::with_capacity(count);
    match format {
        PgmFormat::Binary => {
            // exactly one whitespace byte separates header and payload
            let start = cur.pos + 1;
            let payload = bytes.get(start..).unwrap_or(&[]);
            if payload.len() < count {
                return Err(Error::Image(format!(
                    "truncated payload: {} of {count} bytes",
                    payload.len()
                )));
            }
            values.extend(payload[..count].iter().map(|&b| b as f64));
        }
        PgmFormat::Ascii => {
            for i in 0..count {
                let v = cur.number("pixel").map_err(|_| {
                    Error::Image(format!("truncated payload: {i} of {count} pixels"))
                })?;
                values.push(v as f64);
            }
        }
    }
    if values.iter().any(|&v| v > maxval as f64) {
        return Err(Error::Image("pixel exceeds maxval".into()));
    }
    GrayImage::new(Array2::from_shape_vec((height, width), values).expect("sized above"))
}

/// Writes an 8-bit PGM; pixels are rounded to the nearest integer.
pub fn write_pgm<W: Write>(img: &GrayImage, format: PgmFormat, mut out: W) -> Result<()> {
    let px = img.pixels.iter().map(|v| v.round() as u8);
    match format {
        PgmFormat::Binary => {
            write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
            out.write_all(&px.collect::<Vec<u8>>())?;
        }
        PgmFormat::Ascii => {
            writeln!(out, "P2\n{} {}\n255", img.width(), img.height())?;
            for row in img.pixels.rows() {
                let line: Vec<String> = row.iter().map(|v| (v.round() as u8).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
    }
    Ok(())
}

/// Center crop to the largest size whose sides are multiples of `m`.
pub fn crop_to_multiple(img: &GrayImage, m: usize) -> Result<GrayImage> {
    let (h, w) = (img.height(), img.width());
    let (h2, w2) = (h - h % m, w - w % m);
    if h2 == 0 || w2 == 0 {
        return Err(Error::Image(format!(
            "{h}x{w} image is smaller than {m}x{m}"
        )));
    }
    if (h2, w2) == (h, w) {
        return Ok(img.clone());
    }
    log::warn!("cropping {h}x{w} image to {h2}x{w2}");
    let (top, left) = ((h - h2) / 2, (w - w2) / 2);
    GrayImage::new(
        img.pixels
            .slice(ndarray::s![top..top + h2, left..left + w2])
            .to_owned(),
    )
}

/// Intermediate results of [`corrupt_image`].
#[derive(Debug, Clone)]
pub struct Corruption {
    /// Cropped image plus outliers, before rescaling.
    pub raw: Array2<f64>,
    /// Pixels that received an outlier.
    pub mask: Array2<bool>,
    /// `raw` affinely mapped onto `[0, 255]`.
    pub image: GrayImage,
}

/// Adds uniform `{1..200}` outliers to the top-left and bottom-right quadrants
/// of block `block` (1..=9, row-major over a 3x3 grid) and rescales the whole
/// image to `[0, 255]`. Images are first center-cropped to multiples of 6.
pub fn corrupt_image_detailed(img: &GrayImage, block: usize, seed: u64) -> Result<Corruption> {
    if !(1..=9).contains(&block) {
        return Err(Error::domain(format!(
            "block index must be in 1..=9, got {block}"
        )));
    }
    let img = crop_to_multiple(img, 6)?;
    let (bh, bw) = (img.height() / 3, img.width() / 3);
    let (qh, qw) = (bh / 2, bw / 2);
    let (r0, c0) = (((block - 1) / 3) * bh, ((block - 1) % 3) * bw);

    let mut raw = img.pixels.clone();
    let mut mask = Array2::from_elem(raw.dim(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (dr, dc) in [(0, 0), (qh, qw)] {
        for i in r0 + dr..r0 + dr + qh {
            for j in c0 + dc..c0 + dc + qw {
                raw[[i, j]] += rng.random_range(1..=200) as f64;
                mask[[i, j]] = true;
            }
        }
    }
    let image = GrayImage::new(rescale(&raw))?;
    Ok(Corruption { raw, mask, image })
}

pub fn corrupt_image(img: &GrayImage, block: usize, seed: u64) -> Result<GrayImage> {
    Ok(corrupt_image_detailed(img, block, seed)?.image)
}

fn rescale(m: &Array2<f64>) -> Array2<f64> {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return m.clone();
    }
    let scale = 255.0 / (hi - lo);
    m.mapv(|v| ((v - lo) * scale).clamp(0.0, 255.0))
}

/// Images vectorized column-major into the columns of a centered matrix.
#[derive(Debug, Clone)]
pub struct StackedImages {
    pub x: DataMatrix,
    /// Row means removed by centering.
    pub means: Array1<f64>,
    pub height: usize,
    pub width: usize,
}

impl StackedImages {
    /// Adds the means back to `m` (same shape as `x`) and clips to images.
    pub fn restore(&self, m: ArrayView2<f64>) -> Result<Vec<GrayImage>> {
        if m.dim() != (self.x.d(), self.x.n()) {
            return Err(Error::shape("restored matrix does not match the stack"));
        }
        let mut full = m.to_owned();
        for (mut row, &mu) in full.axis_iter_mut(Axis(0)).zip(self.means.iter()) {
            row += mu;
        }
        unstack_images(full.view(), self.height, self.width)
    }
}

/// Column-major `vec` of each image as one column, then row-centered.
pub fn stack_images(images: &[GrayImage]) -> Result<StackedImages> {
    let first = images
        .first()
        .ok_or_else(|| Error::Image("no images to stack".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut x = Array2::<f64>::zeros((h * w, images.len()));
    for (j, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Image(format!(
                "image {j} is {}x{}, expected {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        x.column_mut(j)
            .iter_mut()
            .zip(img.pixels.t().iter())
            .for_each(|(d, &s)| *d = s);
    }
    let (x, means) = center_values(x);
    Ok(StackedImages {
        x,
        means,
        height: h,
        width: w,
    })
}

/// Inverse of the column-major vectorization; values are clipped to `[0, 255]`.
pub fn unstack_images(m: ArrayView2<f64>, height: usize, width: usize) -> Result<Vec<GrayImage>> {
    if m.nrows() != height * width {
        return Err(Error::shape(format!(
            "{} rows cannot hold {height}x{width} images",
            m.nrows()
        )));
    }
    m.columns()
        .into_iter()
        .map(|col| {
            let px = Array2::from_shape_vec((width, height), col.to_vec())
                .expect("sized above")
                .reversed_axes();
            GrayImage::from_clipped(px.as_standard_layout().to_owned())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::frobenius;
    use ndarray::array;

    #[test]
    fn laplace_examples() {
        assert_eq!(laplace_sample(1.3, 0.5).unwrap(), 0.0);
        let u = 1.0 - (-1.0f64).exp() / 2.0;
        assert!((laplace_sample(2.0, u).unwrap() - 2.0).abs() < 1e-12);
        for u in [0.01, 0.2, 0.37, 0.49] {
            let a = laplace_sample(0.7, u).unwrap();
            let b = laplace_sample(0.7, 1.0 - u).unwrap();
            assert!((a + b).abs() < 1e-12);
        }
        assert!(laplace_sample(1.0, 0.0).is_err());
        assert!(laplace_sample(1.0, 1.0).is_err());
        assert!(laplace_sample(0.0, 0.3).is_err());
    }

    #[test]
    fn synthetic_noiseless_lies_in_subspace() {
        let (x, truth) = gen_synthetic(12, 30, 3, 0.0, 4).unwrap();
        assert!(x.is_centered());
        let q = truth.q_true.values();
        let proj = q.dot(&q.t().dot(&x.values()));
        assert!(frobenius((&proj - &x.values()).view()) <= 1e-9 * x.frobenius_norm());
    }

    #[test]
    fn initial_point_differs_from_planted_subspace() {
        let (_, truth) = gen_synthetic(6, 10, 2, 0.0, 8).unwrap();
        let q0 = initial_point(6, 2, 8).unwrap();
        assert!(frobenius((&q0.values() - &truth.q_true.values()).view()) > 1e-3);
        assert_eq!(q0, initial_point(6, 2, 8).unwrap());
    }

    #[test]
    fn synthetic_is_seeded() {
        let (a, _) = gen_synthetic(8, 20, 2, 0.5, 11).unwrap();
        let (b, _) = gen_synthetic(8, 20, 2, 0.5, 11).unwrap();
        let (c, _) = gen_synthetic(8, 20, 2, 0.5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(gen_synthetic(3, 20, 4, 0.5, 1).is_err());
        assert!(gen_synthetic(8, 20, 2, -1.0, 1).is_err());
    }

    #[test]
    fn centering_examples() {
        let x = DataMatrix::new(array![[1.0, 3.0]]).unwrap();
        assert_eq!(center_features(&x).values(), array![[-1.0, 1.0]]);
        let c = DataMatrix::new(array![[1.0, -1.0], [2.0, -2.0]]).unwrap();
        assert_eq!(center_features(&c), c);
        let m = DataMatrix::new(Array2::from_shape_fn((5, 7), |(i, j)| {
            (i * 7 + j) as f64 * 1.7 + 3.0
        }))
        .unwrap();
        let cm = center_features(&m);
        let norm = frobenius(cm.row_means().insert_axis(Axis(0)).view());
        assert!(norm <= 1e-12 * m.frobenius_norm().max(1.0));
    }

    #[test]
    fn libsvm_examples() {
        let ds = parse_libsvm("1 3:0.5 7:-2\n-1\n".as_bytes(), None).unwrap();
        assert_eq!(ds.labels, vec![1, -1]);
        assert_eq!(ds.x.d(), 7);
        let col = ds.x.values().column(0).to_vec();
        assert_eq!(col, vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0, -2.0]);
        assert!(ds.x.values().column(1).iter().all(|&v| v == 0.0));

        let ds = parse_libsvm("+1 1:1 # note\n\n2.6 2:3e-3\n".as_bytes(), Some(4)).unwrap();
        assert_eq!(ds.labels, vec![1, 3]);
        assert_eq!(ds.x.d(), 4);
    }

    #[test]
    fn libsvm_errors_carry_line_numbers() {
        let bad = parse_libsvm("1 1:2\n1 3:1 2:1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 2, .. }));
        let bad = parse_libsvm("1 1:2\n\n1 x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 3, .. }));
        assert!(parse_libsvm("1 0:2\n".as_bytes(), None).is_err());
        assert!(parse_libsvm("1 5:2\n".as_bytes(), Some(3)).is_err());
        assert!(parse_libsvm("".as_bytes(), None).is_err());
    }

    #[test]
    fn libsvm_round_trip() {
        let x = array![[0.1, 0.0, -3.25], [0.0, 0.0, 1e-17], [2.0 / 3.0, 5.0, 0.0]];
        let ds = LabeledDataset::new(DataMatrix::new(x).unwrap(), vec![1, -1, 7]).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&ds, &mut buf).unwrap();
        let back = parse_libsvm(buf.as_slice(), Some(3)).unwrap();
        assert_eq!(back.x.values(), ds.x.values());
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn csv_round_trip() {
        let m = array![[1.0, -2.5, 1.0 / 3.0], [1e-300, 0.0, 7e10]];
        let mut buf = Vec::new();
        write_csv_matrix(m.view(), &mut buf).unwrap();
        assert_eq!(read_csv_matrix(buf.as_slice()).unwrap(), m);
        assert!(read_csv_matrix("1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv_matrix("1,a\n".as_bytes()).is_err());
    }

    #[test]
    fn planted_clusters_are_balanced_and_centered() {
        let ds = gen_planted_clusters(5, 40, 10.0, 1.0, 3).unwrap();
        assert_eq!(ds.classes(), vec![0, 1]);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 20);
        assert!(ds.x.is_centered());
    }

    #[test]
    fn pgm_examples() {
        let img = read_pgm("P2 2 1 255\n0 255\n".as_bytes()).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.pixels(), array![[0.0, 255.0]]);

        let img = read_pgm("P2\n# comment\n2 2\n15\n1 2\n3 15\n".as_bytes()).unwrap();
        assert_eq!(img.pixels(), array![[1.0, 2.0], [3.0, 15.0]]);

        let mut trunc = b"P5 2 2 255\n".to_vec();
        trunc.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(read_pgm(trunc.as_slice()), Err(Error::Image(_))));
        assert!(read_pgm("P3 1 1 255\n0\n".as_bytes()).is_err());
        assert!(read_pgm("P2 1 1 65535\n0\n".as_bytes()).is_err());
        assert!(read_pgm("P2 2 1 255\n0\n".as_bytes()).is_err());
    }

    #[test]
    fn pgm_round_trip_both_formats() {
        let px = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 37 + j * 11) % 256) as f64);
        let img = GrayImage::new(px).unwrap();
        for fmt in [PgmFormat::Ascii, PgmFormat::Binary] {
            let mut buf = Vec::new();
            write_pgm(&img, fmt, &mut buf).unwrap();
            assert_eq!(read_pgm(buf.as_slice()).unwrap(), img);
        }
    }

    #[test]
    fn binary_pgm_payload_may_start_with_whitespace_byte() {
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[b' ', 9]);
        let img = read_pgm(bytes.as_slice()).unwrap();
        assert_eq!(img.pixels(), array![[32.0, 9.0]]);
    }

    #[test]
    fn corruption_touches_half_of_block() {
        let img = GrayImage::new(Array2::from_elem((12, 18), 100.0)).unwrap();
        for block in 1..=9 {
            let c = corrupt_image_detailed(&img, block, 5).unwrap();
            let count = c.mask.iter().filter(|&&m| m).count();
            assert_eq!(count, (12 / 3) * (18 / 3) / 2);
            let (r0, c0) = (((block - 1) / 3) * 4, ((block - 1) % 3) * 6);
            for ((i, j), &m) in c.mask.indexed_iter() {
                let inside = (r0..r0 + 4).contains(&i) && (c0..c0 + 6).contains(&j);
                assert!(!m || inside);
                let tl = (r0..r0 + 2).contains(&i) && (c0..c0 + 3).contains(&j);
                let br = (r0 + 2..r0 + 4).contains(&i) && (c0 + 3..c0 + 6).contains(&j);
                assert_eq!(m, tl || br);
                let delta = c.raw[[i, j]] - 100.0;
                if m {
                    assert!((1.0..=200.0).contains(&delta) && delta.fract() == 0.0);
                } else {
                    assert_eq!(delta, 0.0);
                }
            }
        }
        assert!(corrupt_image(&img, 0, 1).is_err());
        assert!(corrupt_image(&img, 10, 1).is_err());
    }

    #[test]
    fn corruption_is_seeded_and_rescaled() {
        let img = GrayImage::new(Array2::zeros((6, 6))).unwrap();
        let a = corrupt_image_detailed(&img, 5, 9).unwrap();
        let b = corrupt_image(&img, 5, 9).unwrap();
        assert_eq!(a.image, b);
        let max = a.image.pixels().iter().copied().fold(0.0, f64::max);
        assert_eq!(max, 255.0);
        for ((i, j), &m) in a.mask.indexed_iter() {
            let v = a.image.pixels()[[i, j]];
            assert!(if m { v > 0.0 } else { v == 0.0 });
        }
    }

    #[test]
    fn corruption_preserves_outside_ratios() {
        let px = Array2::from_shape_fn((12, 12), |(i, j)| (i * 12 + j) as f64);
        let img = GrayImage::new(px.clone()).unwrap();
        let c = corrupt_image_detailed(&img, 1, 2).unwrap();
        // untouched pixels move by one common affine map
        let out = c.image.pixels();
        let (a, b) = ((11, 11), (6, 0));
        let scale = (out[a] - out[b]) / (px[a] - px[b]);
        for ((i, j), &m) in c.mask.indexed_iter() {
            if !m {
                let expect = out[b] + scale * (px[[i, j]] - px[b]);
                assert!((out[[i, j]] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crop_is_centered() {
        let px = Array2::from_shape_fn((8, 13), |(i, j)| (i * 13 + j) as f64);
        let img = GrayImage::new(px).unwrap();
        let c = crop_to_multiple(&img, 6).unwrap();
        assert_eq!((c.height(), c.width()), (6, 12));
        assert_eq!(c.pixels()[[0, 0]], 13.0);
        assert!(crop_to_multiple(&img, 9).is_err());
    }

    #[test]
    fn stack_examples() {
        let img = GrayImage::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let other = GrayImage::new(array![[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let s = stack_images(&[img.clone(), other.clone()]).unwrap();
        let raw = s.x.values().to_owned() + &s.means.clone().insert_axis(Axis(1));
        assert_eq!(raw.column(0).to_vec(), vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.restore(s.x.values()).unwrap(), vec![img.clone(), other]);

        let same = stack_images(&vec![img.clone(); 9]).unwrap();
        assert!(same.x.values().iter().all(|&v| v == 0.0));

        let tall = GrayImage::new(array![[1.0], [2.0]]).unwrap();
        assert!(stack_images(&[img, tall]).is_err());
        assert!(stack_images(&[]).is_err());
    }
}
