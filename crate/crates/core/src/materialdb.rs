//! Strain-stress databases, the C̄ scaling that makes the data distance
//! Euclidean, and a k-d tree whose leaf distances go through a pluggable
//! backend.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qdistance::{squared_distance, DataVector};

/// Uniaxial Ramberg-Osgood law ε = σ/E + α(σ/E)(|σ|/σ₀)^(β−1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RambergOsgoodParams {
    pub e: f64,
    pub alpha: f64,
    pub sigma0: f64,
    pub beta: f64,
}

impl Default for RambergOsgoodParams {
    fn default() -> Self {
        RambergOsgoodParams {
            e: 1.0e4,
            alpha: 0.5,
            sigma0: 5.0,
            beta: 3.0,
        }
    }
}

impl RambergOsgoodParams {
    pub fn new(e: f64, alpha: f64, sigma0: f64, beta: f64) -> Result<Self> {
        let p = RambergOsgoodParams { e, alpha, sigma0, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.e, self.alpha, self.sigma0, self.beta]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.e <= 0.0 || self.sigma0 <= 0.0 || self.beta < 1.0 || self.alpha < 0.0 {
            return Err(Error::contract(format!("invalid Ramberg-Osgood parameters {self:?}")));
        }
        Ok(())
    }

    pub fn strain(&self, sigma: f64) -> f64 {
        let s = sigma / self.e;
        s + self.alpha * s * (sigma.abs() / self.sigma0).powf(self.beta - 1.0)
    }

    /// dε/dσ, always ≥ 1/E.
    pub fn compliance(&self, sigma: f64) -> f64 {
        (1.0 + self.alpha * self.beta * (sigma.abs() / self.sigma0).powf(self.beta - 1.0)) / self.e
    }

    /// Inverts ε(σ) with Newton steps kept inside a shrinking bracket.
    pub fn stress(&self, strain: f64) -> Result<f64> {
        if strain == 0.0 {
            return Ok(0.0);
        }
        // |σ| ≤ E|ε| since the law is at least as compliant as the linear part.
        let (mut lo, mut hi) = if strain > 0.0 {
            (0.0, self.e * strain)
        } else {
            (self.e * strain, 0.0)
        };
        let mut sigma = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = self.strain(sigma) - strain;
            if r > 0.0 {
                hi = sigma;
            } else {
                lo = sigma;
            }
            if r.abs() <= 1e-12 * strain.abs() || hi - lo <= 1e-15 * hi.abs().max(lo.abs()) {
                return Ok(sigma);
            }
            let next = sigma - r / self.compliance(sigma);
            sigma = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        Err(Error::NoConvergence {
            iterations: 200,
            residual: (self.strain(sigma) - strain).abs(),
        })
    }
}

/// SPD weight C̄ together with its square root and inverse square root.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMetric {
    c: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl ScalingMetric {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        let n = c.nrows();
        if n == 0 || c.ncols() != n || c.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("scaling matrix must be square, finite and non-empty"));
        }
        let asym = (&c - c.transpose()).amax();
        if asym > 1e-12 * c.amax() {
            return Err(Error::contract("scaling matrix is not symmetric"));
        }
        let eig = c.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::contract("scaling matrix is not positive definite"));
        }
        let v = &eig.eigenvectors;
        let with = |f: fn(f64) -> f64| {
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            v * d * v.transpose()
        };
        Ok(ScalingMetric {
            sqrt: with(f64::sqrt),
            inv_sqrt: with(|l| 1.0 / l.sqrt()),
            c,
        })
    }

    pub fn scalar(c: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, c))
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }
}

/// One strain-stress datum.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialPoint {
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

impl MaterialPoint {
    pub fn uniaxial(strain: f64, stress: f64) -> Self {
        MaterialPoint {
            strain: vec![strain],
            stress: vec![stress],
        }
    }
}

fn check_dim(x: &[f64], m: usize, what: &str) -> Result<()> {
    if x.len() != m {
        return Err(Error::contract(format!(
            "{what} has {} components, metric expects {m}",
            x.len()
        )));
    }
    Ok(())
}

/// (C̄^½ ε, C̄^−½ σ), so the Euclidean distance equals the data distance.
pub fn scale_point(point: &MaterialPoint, metric: &ScalingMetric) -> Result<DataVector> {
    let m = metric.dim();
    check_dim(&point.strain, m, "strain")?;
    check_dim(&point.stress, m, "stress")?;
    let e = metric.sqrt() * nalgebra::DVector::from_column_slice(&point.strain);
    let s = metric.inv_sqrt() * nalgebra::DVector::from_column_slice(&point.stress);
    DataVector::new(e.iter().chain(s.iter()).copied().collect())
}

pub fn unscale(v: &DataVector, metric: &ScalingMetric) -> Result<MaterialPoint> {
    let m = metric.dim();
    let c = v.components();
    if c.len() != 2 * m {
        return Err(Error::contract("scaled vector has the wrong length"));
    }
    let inv = metric.inv_sqrt();
    let e = inv * nalgebra::DVector::from_column_slice(&c[..m]);
    let s = metric.sqrt() * nalgebra::DVector::from_column_slice(&c[m..]);
    Ok(MaterialPoint {
        strain: e.iter().copied().collect(),
        stress: s.iter().copied().collect(),
    })
}

/// (ε − ε*)ᵀ C̄ (ε − ε*) + (σ − σ*)ᵀ C̄⁻¹ (σ − σ*) evaluated directly.
pub fn data_distance(a: &MaterialPoint, b: &MaterialPoint, metric: &ScalingMetric) -> Result<f64> {
    let m = metric.dim();
    for p in [a, b] {
        check_dim(&p.strain, m, "strain")?;
        check_dim(&p.stress, m, "stress")?;
    }
    let de = nalgebra::DVector::from_iterator(m, a.strain.iter().zip(&b.strain).map(|(x, y)| x - y));
    let ds = nalgebra::DVector::from_iterator(m, a.stress.iter().zip(&b.stress).map(|(x, y)| x - y));
    let c_inv = metric
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::contract("scaling matrix lost definiteness"))?
        .inverse();
    Ok(de.dot(&(metric.matrix() * &de)) + ds.dot(&(c_inv * &ds)))
}

#[derive(Debug, Clone)]
pub struct MaterialDatabase {
    points: Vec<MaterialPoint>,
    scaled: Vec<DataVector>,
    metric: ScalingMetric,
}

impl MaterialDatabase {
    pub fn new(points: Vec<MaterialPoint>, metric: ScalingMetric) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("material database is empty"));
        }
        let scaled = points
            .iter()
            .map(|p| scale_point(p, &metric))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaterialDatabase { points, scaled, metric })
    }

    pub fn with_metric(self, metric: ScalingMetric) -> Result<Self> {
        Self::new(self.points, metric)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn points(&self) -> &[MaterialPoint] {
        &self.points
    }

    pub fn scaled(&self) -> &[DataVector] {
        &self.scaled
    }

    pub fn metric(&self) -> &ScalingMetric {
        &self.metric
    }

    /// Reads the comma-separated format: a `strain_dim,stress_dim` header,
    /// then one point per line. Lines starting with `#` are skipped.
    pub fn parse(text: &str, metric: ScalingMetric) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = rows.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(hline, format!("bad header: {e}")))?;
        let [ne, ns] = dims[..] else {
            return Err(Error::parse(hline, "header must be `strain_dim,stress_dim`"));
        };
        if ne != ns || ne != metric.dim() {
            return Err(Error::parse(
                hline,
                format!(
                    "dimensions {ne},{ns} do not match the {}-dimensional metric",
                    metric.dim()
                ),
            ));
        }
        let mut points = Vec::new();
        for (line, row) in rows {
            let vals: Vec<f64> = row
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(line, e.to_string()))?;
            if vals.len() != ne + ns {
                return Err(Error::parse(
                    line,
                    format!("expected {} columns, found {}", ne + ns, vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(line, "non-finite value"));
            }
            points.push(MaterialPoint {
                strain: vals[..ne].to_vec(),
                stress: vals[ne..].to_vec(),
            });
        }
        Self::new(points, metric)
    }

    pub fn load(path: impl AsRef<Path>, metric: ScalingMetric) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, metric)
    }

    pub fn to_csv_string(&self) -> String {
        let m = self.dim();
        let mut out = format!("{m},{m}\n");
        for p in &self.points {
            let row: Vec<String> = p.strain.iter().chain(&p.stress).map(|x| format!("{x:e}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// `n` uniformly spaced stresses on [σ_min, σ_max] with their strains; the
/// metric defaults to the scalar C̄ = E.
pub fn generate_db(params: &RambergOsgoodParams, sigma_min: f64, sigma_max: f64, n: usize) -> Result<MaterialDatabase> {
    params.validate()?;
    if n < 2 || !(sigma_min < sigma_max) {
        return Err(Error::contract("need N ≥ 2 and σ_min < σ_max"));
    }
    let step = (sigma_max - sigma_min) / (n - 1) as f64;
    let points = (0..n)
        .map(|i| {
            // symmetric ranges give exactly odd-symmetric samples
            let sigma = if i < n / 2 || sigma_min + sigma_max != 0.0 {
                sigma_min + step * i as f64
            } else {
                -(sigma_min + step * (n - 1 - i) as f64)
            };
            MaterialPoint::uniaxial(params.strain(sigma), sigma)
        })
        .collect();
    MaterialDatabase::new(points, ScalingMetric::scalar(params.e)?)
}

/// A distance oracle used at the leaves of the nearest-neighbour search.
pub trait DistanceBackend {
    fn distance(&mut self, query: &DataVector, point: &DataVector) -> Result<f64>;
}

/// Classical squared Euclidean distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactBackend;

impl DistanceBackend for ExactBackend {
    fn distance(&mut self, query: &DataVector, point: &DataVector) -> Result<f64> {
        Ok(squared_distance(query, point))
    }
}

impl<B: DistanceBackend + ?Sized> DistanceBackend for &mut B {
    fn distance(&mut self, query: &DataVector, point: &DataVector) -> Result<f64> {
        (**self).distance(query, point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub index: usize,
    pub distance: f64,
    pub calls: usize,
}

pub const DEFAULT_LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// k-d tree over scaled coordinates. Splits on the widest dimension at the
/// median; pruning uses exact plane distances.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<DataVector>,
    root: Node,
    leaf_size: usize,
}

struct Search<'a, B: ?Sized> {
    query: &'a DataVector,
    backend: &'a mut B,
    best: Option<(f64, usize)>,
    calls: usize,
}

impl KdTree {
    pub fn build(points: Vec<DataVector>, leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("cannot build a k-d tree over no points"));
        }
        if leaf_size == 0 {
            return Err(Error::contract("leaf size must be positive"));
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::contract("points have mixed dimensions"));
        }
        let idx: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(&points, idx, leaf_size);
        Ok(KdTree {
            points,
            root,
            leaf_size,
        })
    }

    pub fn from_database(db: &MaterialDatabase, leaf_size: usize) -> Result<Self> {
        Self::build(db.scaled().to_vec(), leaf_size)
    }

    fn build_node(points: &[DataVector], mut idx: Vec<usize>, leaf_size: usize) -> Node {
        if idx.len() <= leaf_size {
            return Node::Leaf(idx);
        }
        let coord = |i: usize, d: usize| points[i].components()[d];
        let dims = points[0].dim();
        let spread = |d: usize| {
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(coord(i, d)), hi.max(coord(i, d)))
            });
            hi - lo
        };
        let dim = (0..dims)
            .max_by(|&a, &b| spread(a).total_cmp(&spread(b)).then(b.cmp(&a)))
            .unwrap_or(0);
        if spread(dim) == 0.0 {
            return Node::Leaf(idx);
        }
        idx.sort_by(|&a, &b| coord(a, dim).total_cmp(&coord(b, dim)).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let threshold = coord(idx[mid], dim);
        let right = idx.split_off(mid);
        Node::Split {
            dim,
            threshold,
            left: Box::new(Self::build_node(points, idx, leaf_size)),
            right: Box::new(Self::build_node(points, right, leaf_size)),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn points(&self) -> &[DataVector] {
        &self.points
    }

    /// Indices per leaf in tree order.
    pub fn leaves(&self) -> Vec<Vec<usize>> {
        fn walk(n: &Node, out: &mut Vec<Vec<usize>>) {
            match n {
                Node::Leaf(ix) => out.push(ix.clone()),
                Node::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn nearest<B: DistanceBackend + ?Sized>(&self, query: &DataVector, backend: &mut B) -> Result<Nearest> {
        if query.dim() != self.points[0].dim() {
            return Err(Error::contract("query dimension differs from the tree"));
        }
        let mut s = Search {
            query,
            backend,
            best: None,
            calls: 0,
        };
        self.visit(&self.root, &mut s)?;
        let (distance, index) = s.best.expect("non-empty tree yields a candidate");
        Ok(Nearest {
            index,
            distance,
            calls: s.calls,
        })
    }

    fn visit<B: DistanceBackend + ?Sized>(&self, node: &Node, s: &mut Search<'_, B>) -> Result<()> {
        match node {
            Node::Leaf(ix) => {
                for &i in ix {
                    let d = s
                        .backend
                        .distance(s.query, &self.points[i])
                        .map_err(|e| Error::Backend {
                            index: i,
                            source: Box::new(e),
                        })?;
                    s.calls += 1;
                    let better = match s.best {
                        None => true,
                        Some((bd, bi)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        s.best = Some((d, i));
                    }
                }
            }
            Node::Split {
                dim,
                threshold,
                left,
                right,
            } => {
                let diff = s.query.components()[*dim] - threshold;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, s)?;
                let prune = matches!(s.best, Some((bd, _)) if diff * diff > bd);
                if !prune {
                    self.visit(far, s)?;
                }
            }
        }
        Ok(())
    }
}

/// Linear scan with the same tie-breaking as the tree.
pub fn brute_force_nearest<B: DistanceBackend + ?Sized>(
    points: &[DataVector],
    query: &DataVector,
    backend: &mut B,
) -> Result<Nearest> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = backend.distance(query, p).map_err(|e| Error::Backend {
            index: i,
            source: Box::new(e),
        })?;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (distance, index) = best.ok_or_else(|| Error::contract("empty point set"))?;
    Ok(Nearest {
        index,
        distance,
        calls: points.len(),
    })
}
