//! Synthetic datasets and CSV interchange.
//!
//! Every generator consumes a caller-provided stream in a documented
//! per-point draw order, so datasets are bitwise reproducible from a seed.
//! CSV files carry one point per row; a file is treated as labeled when it
//! has at least two columns and the last column parses as a bare integer
//! on every row.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MfError, Result};
use crate::oracle::GmmSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Points with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    /// Unlabeled points of consistent dimension.
    pub fn unlabeled(points: Vec<Tensor>) -> Result<Self> {
        Self::build(points, None, 0)
    }

    /// Labeled points; every label must be below `num_classes`.
    pub fn labeled(points: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::build(points, Some(labels), num_classes)
    }

    fn build(
        points: Vec<Tensor>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(MfError::DegenerateInput {
                what: "dataset",
                reason: "no points".into(),
            });
        }
        let dim = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.rank() != 1 || p.len() != dim {
                return Err(MfError::InvalidSpec(format!(
                    "point {i} has shape {:?}, expected [{dim}]",
                    p.shape()
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != points.len() {
                return Err(MfError::InvalidSpec(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(MfError::InvalidSpec(format!(
                    "label {bad} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            num_classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 0 for unlabeled data.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_conditional(&self) -> bool {
        self.labels.is_some()
    }
}

/// Draws `n` points from a mixture. Per point: one categorical draw, then
/// `dim` normals. With `labeled`, component indices become class labels.
pub fn sample_gmm(gmm: &GmmSpec, n: usize, labeled: bool, rng: &mut Rng) -> Result<Dataset> {
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, k) = gmm.sample(rng);
        points.push(x);
        labels.push(k);
    }
    if labeled {
        Dataset::labeled(points, labels, gmm.num_components())
    } else {
        Dataset::unlabeled(points)
    }
}

/// `k` equal-weight Gaussians with means on a circle of the given radius
/// and shared isotropic variance. Returns the labeled sample and the exact
/// mixture it came from. Per point: one categorical draw, two normals.
pub fn make_gmm_ring(
    k: usize,
    radius: f64,
    var: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<(Dataset, GmmSpec)> {
    if k == 0 {
        return Err(MfError::InvalidSpec("ring needs at least one component".into()));
    }
    let means: Vec<(Tensor, f64)> = (0..k)
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            (
                Tensor::vector(vec![radius * angle.cos(), radius * angle.sin()]),
                var,
            )
        })
        .collect();
    let gmm = GmmSpec::equal_weights(means)?;
    let data = sample_gmm(&gmm, n, true, rng)?;
    Ok((data, gmm))
}

/// Two interleaved half-circles with Gaussian jitter; labels alternate
/// with the point index. Per point: one uniform (the angle), two normals.
pub fn make_moons(n: usize, noise: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(MfError::DomainError {
            what: "moons noise",
            value: noise,
            range: "[0, ∞)",
        });
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let theta = rng.uniform() * std::f64::consts::PI;
        let (bx, by) = if label == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        let x = bx + noise * rng.normal();
        let y = by + noise * rng.normal();
        points.push(Tensor::vector(vec![x, y]));
        labels.push(label);
    }
    Dataset::labeled(points, labels, 2)
}

/// Unlabeled checkerboard over roughly [−2, 2]², built constructively:
/// per point one uniform for the horizontal coordinate, one band pick, one
/// uniform for the vertical offset; the band parity follows ⌊x₁⌋.
pub fn make_checkerboard(n: usize, rng: &mut Rng) -> Result<Dataset> {
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.uniform() * 4.0 - 2.0;
        let band = rng.index(2) as f64;
        let x2 = rng.uniform() - 2.0 * band + (x1.floor() as i64).rem_euclid(2) as f64;
        points.push(Tensor::vector(vec![x1, x2]));
    }
    Dataset::unlabeled(points)
}

fn is_bare_integer(field: &str) -> bool {
    let digits = field.strip_prefix('-').unwrap_or(field);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Parses headerless numeric CSV. When every row's last column is a bare
/// integer (and there are at least two columns), that column becomes the
/// class label; labels must be non-negative. Errors name the first
/// offending line.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| MfError::InvalidSpec(format!("read {}: {e}", path.display())))?;
    parse_csv(&text)
}

/// [`load_csv`] on in-memory text.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(MfError::InvalidSpec(format!(
                    "line {line_no}: {} columns, expected {w}",
                    fields.len()
                )))
            }
            _ => {}
        }
        rows.push((line_no, fields));
    }
    if rows.is_empty() {
        return Err(MfError::DegenerateInput {
            what: "csv",
            reason: "no data rows".into(),
        });
    }
    let width = width.expect("rows nonempty");
    let labeled = width >= 2 && rows.iter().all(|(_, f)| is_bare_integer(&f[width - 1]));

    let coord_cols = if labeled { width - 1 } else { width };
    let mut points = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut max_label = 0usize;
    for (line_no, fields) in &rows {
        let mut coords = Vec::with_capacity(coord_cols);
        for field in &fields[..coord_cols] {
            let v: f64 = field.parse().map_err(|_| {
                MfError::InvalidSpec(format!("line {line_no}: bad number {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(MfError::InvalidSpec(format!(
                    "line {line_no}: non-finite value {field:?}"
                )));
            }
            coords.push(v);
        }
        points.push(Tensor::vector(coords));
        if labeled {
            let l: i64 = fields[width - 1].parse().map_err(|_| {
                MfError::InvalidSpec(format!(
                    "line {line_no}: bad label {:?}",
                    fields[width - 1]
                ))
            })?;
            if l < 0 {
                return Err(MfError::InvalidSpec(format!(
                    "line {line_no}: negative label {l}"
                )));
            }
            max_label = max_label.max(l as usize);
            labels.push(l as usize);
        }
    }
    if labeled {
        Dataset::labeled(points, labels, max_label + 1)
    } else {
        Dataset::unlabeled(points)
    }
}

/// Writes headerless CSV. Coordinates print in round-trip form (integral
/// values keep a trailing `.0`, so they never masquerade as labels);
/// labels print as bare integers in the last column.
pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    for (i, p) in data.points.iter().enumerate() {
        let mut fields: Vec<String> = p.data().iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = &data.labels {
            fields.push(labels[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| MfError::InvalidSpec(format!("write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        assert!(Dataset::unlabeled(vec![]).is_err());
        let mixed = Dataset::unlabeled(vec![
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![1.0, 2.0]),
        ]);
        assert!(mixed.is_err());
        let bad_label = Dataset::labeled(vec![Tensor::vector(vec![0.0])], vec![3], 2);
        assert!(bad_label.is_err());
        let count = Dataset::labeled(vec![Tensor::vector(vec![0.0])], vec![0, 1], 2);
        assert!(count.is_err());
    }

    #[test]
    fn ring_means_sit_on_the_circle() {
        let mut rng = Rng::seed_from_u64(1);
        let (data, gmm) = make_gmm_ring(8, 3.0, 0.01, 500, &mut rng).unwrap();
        assert_eq!(data.num_classes(), 8);
        assert_eq!(data.dim(), 2);
        for c in gmm.components() {
            let r = c.mean.norm();
            assert!((r - 3.0).abs() < 1e-12);
        }
        // Points cluster near their component mean.
        let labels = data.labels.as_ref().unwrap();
        for (p, &l) in data.points.iter().zip(labels) {
            let d = p.sub(&gmm.components()[l].mean).unwrap().norm();
            assert!(d < 1.0, "point strayed {d} from its mean");
        }
    }

    #[test]
    fn ring_label_frequencies_are_balanced() {
        let mut rng = Rng::seed_from_u64(2);
        let (data, _) = make_gmm_ring(4, 2.0, 0.05, 20_000, &mut rng).unwrap();
        let labels = data.labels.as_ref().unwrap();
        for class in 0..4 {
            let frac = labels.iter().filter(|&&l| l == class).count() as f64 / 20_000.0;
            assert!((frac - 0.25).abs() < 0.02, "class {class} fraction {frac}");
        }
    }

    #[test]
    fn moons_geometry() {
        let mut rng = Rng::seed_from_u64(3);
        let data = make_moons(2000, 0.0, &mut rng).unwrap();
        let labels = data.labels.as_ref().unwrap();
        for (p, &l) in data.points.iter().zip(labels) {
            let (x, y) = (p.data()[0], p.data()[1]);
            if l == 0 {
                // Noise-free upper moon lies on the unit circle.
                assert!((x * x + y * y - 1.0).abs() < 1e-9);
                assert!(y >= -1e-12);
            } else {
                let (cx, cy) = (x - 1.0, y - 0.5);
                assert!((cx * cx + cy * cy - 1.0).abs() < 1e-9);
                assert!(y <= 0.5 + 1e-12);
            }
        }
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 1000);
    }

    #[test]
    fn checkerboard_occupies_alternating_cells() {
        let mut rng = Rng::seed_from_u64(4);
        let data = make_checkerboard(5000, &mut rng).unwrap();
        assert!(data.labels.is_none());
        for p in &data.points {
            let (x, y) = (p.data()[0], p.data()[1]);
            assert!((-2.0..2.0).contains(&x));
            // Cell parity of (⌊x⌋, ⌊y⌋) is constant on the support.
            let parity = ((x.floor() as i64).rem_euclid(2) + (y.floor() as i64).rem_euclid(2))
                .rem_euclid(2);
            assert_eq!(parity, 0, "point ({x}, {y}) landed on an empty cell");
        }
    }

    #[test]
    fn sample_gmm_moments() {
        let gmm = GmmSpec::single(Tensor::vector(vec![2.0]), 0.25).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let data = sample_gmm(&gmm, 40_000, false, &mut rng).unwrap();
        let mean: f64 = data.points.iter().map(|p| p.data()[0]).sum::<f64>() / 40_000.0;
        let var: f64 = data
            .points
            .iter()
            .map(|p| (p.data()[0] - mean).powi(2))
            .sum::<f64>()
            / 39_999.0;
        assert!((mean - 2.0).abs() < 0.02);
        assert!((var - 0.25).abs() < 0.01);
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let mut rng = Rng::seed_from_u64(6);
        let (data, _) = make_gmm_ring(3, 1.0, 0.2, 50, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.csv");
        save_csv(&path, &data).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.num_classes(), data.num_classes());
        for (a, b) in back.points.iter().zip(&data.points) {
            assert!(a.bitwise_eq(b), "coordinates must round-trip exactly");
        }

        let unlabeled = Dataset::unlabeled(data.points.clone()).unwrap();
        let path2 = dir.path().join("plain.csv");
        save_csv(&path2, &unlabeled).unwrap();
        let back2 = load_csv(&path2).unwrap();
        assert!(back2.labels.is_none());
    }

    #[test]
    fn integral_coordinates_do_not_become_labels() {
        // 2.0 serializes as "2.0", which is not a bare integer.
        let data = Dataset::unlabeled(vec![
            Tensor::vector(vec![2.0, 4.0]),
            Tensor::vector(vec![-1.0, 0.0]),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ints.csv");
        save_csv(&path, &data).unwrap();
        let back = load_csv(&path).unwrap();
        assert!(back.labels.is_none());
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_csv("1.0,2.0\n1.0,oops\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
        let err = parse_csv("1.0,2.0\n3.0\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
        assert!(parse_csv("\n\n").is_err());
    }

    #[test]
    fn labeled_csv_is_detected() {
        let data = parse_csv("0.5,1.5,0\n-0.25,2.0,1\n0.125,0.5,1\n").unwrap();
        assert_eq!(data.num_classes(), 2);
        assert_eq!(data.labels.as_ref().unwrap(), &vec![0, 1, 1]);
        assert_eq!(data.dim(), 2);
        // Single-column integers stay coordinates: labels need ≥ 2 columns.
        let single = parse_csv("1\n2\n").unwrap();
        assert!(single.labels.is_none());
        // A negative label is rejected with its line.
        let err = parse_csv("0.5,-1\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "got: {err}");
    }
}
