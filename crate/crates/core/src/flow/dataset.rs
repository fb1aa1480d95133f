use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng::seeded_rng;

/// Binary classification data with labels in `{-1, +1}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassificationDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl ClassificationDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Shape { expected: points.len(), got: labels.len() });
        }
        if let Some(d) = points.first().map(Vec::len) {
            if let Some(bad) = points.iter().find(|p| p.len() != d) {
                return Err(Error::Shape { expected: d, got: bad.len() });
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(Error::Parse(format!("label {l} is not -1 or +1")));
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if labels[i] != labels[j] && points[i] == points[j] {
                    return Err(Error::Parse(format!("points {i} and {j} coincide with opposite labels")));
                }
            }
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    /// `y_n x_n` for every sample.
    pub fn signed_points(&self) -> Vec<Vec<f64>> {
        self.iter().map(|(x, y)| x.iter().map(|v| v * y).collect()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p.iter().map(|v| v * c).collect()).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), labels)
    }

    /// Minimum `y_n wᵀx_n` of a linear classifier.
    pub fn linear_margin(&self, w: &[f64]) -> f64 {
        self.iter().map(|(x, y)| y * dot(w, x)).fold(f64::INFINITY, f64::min)
    }

    /// Rows `label,x1,...,xd`; lines starting with `#` are ignored.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {i}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < 2 {
                return Err(Error::Parse(format!("row {i}: need a label and at least one coordinate")));
            }
            labels.push(vals[0]);
            points.push(vals[1..].to_vec());
        }
        Self::new(points, labels)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (x, y) in self.iter() {
            out.push_str(&format!("{y}"));
            for v in x {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Points drawn uniformly in the unit ball of R^dim and labelled by a
    /// random hyperplane through the origin; points closer than `gap` to
    /// the hyperplane are rejected, so the data are separable with margin
    /// at least `gap`.
    pub fn random_linear_separable(seed: u64, count: usize, dim: usize, gap: f64) -> Self {
        let mut rng = seeded_rng(seed);
        let normal = random_unit(&mut rng, dim);
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        while points.len() < count {
            let x = random_in_ball(&mut rng, dim);
            let s = dot(&normal, &x);
            if s.abs() < gap {
                continue;
            }
            labels.push(s.signum());
            points.push(x);
        }
        Self { points, labels }
    }

    /// Three samples whose L2 max-margin direction is fixed by the single
    /// support vector `(1, 0.5)`, while the L1 max-margin direction is the
    /// vertex `e₁`; the two optima are `atan(0.5)` radians apart.
    pub fn asymmetric_support() -> Self {
        Self {
            points: vec![vec![1.0, 0.5], vec![1.5, 1.5], vec![-1.0, -1.2]],
            labels: vec![1.0, 1.0, -1.0],
        }
    }

    /// Two isotropic Gaussian blobs centred at `±(separation / 2) e_1` in
    /// the plane, with points inside the band `|x_1| < margin / 2` rejected.
    /// Half the points come from each blob.
    pub fn gaussian_blobs(seed: u64, count: usize, separation: f64, std: f64, margin: f64) -> Self {
        Self::gaussian_blobs_in(seed, count, 2, separation, std, margin)
    }

    /// [`Self::gaussian_blobs`] in `R^dim`; the blob centres stay on the first axis.
    pub fn gaussian_blobs_in(seed: u64, count: usize, dim: usize, separation: f64, std: f64, margin: f64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        while points.len() < count {
            let y = if points.len() % 2 == 0 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..dim.max(1)).map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            }).collect();
            x[0] += y * separation / 2.0;
            if y * x[0] < margin / 2.0 {
                continue;
            }
            points.push(x);
            labels.push(y);
        }
        Self { points, labels }
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let u = random_unit(rng, dim);
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    u.into_iter().map(|x| x * r).collect()
}
