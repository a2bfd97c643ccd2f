//! Data-driven solver for pin-jointed plane trusses, the nonlinear
//! reference solve and the stress error metric.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materialdb::{
    brute_force_nearest, scale_point, DistanceBackend, KdTree, MaterialDatabase, MaterialPoint, Nearest,
    RambergOsgoodParams, ScalingMetric,
};

pub const DEFAULT_MAX_ITER: usize = 500;

/// Default C̄ as a fraction of Young's modulus. At C̄ = E the alternating
/// scheme on a statically determinate truss keeps whatever strain the
/// current datum has, since moving to a closer stress costs at least as
/// much strain distance as it saves; a softer C̄ lets stresses lead.
pub const DEFAULT_C_BAR_FRACTION: f64 = 0.25;

/// C̄ = E/4 for a Ramberg-Osgood database.
pub fn default_scaling(ro: &RambergOsgoodParams) -> Result<ScalingMetric> {
    ScalingMetric::scalar(ro.e * DEFAULT_C_BAR_FRACTION)
}

/// The roof truss shipped with the crate.
pub const ROOF_TRUSS: &str = include_str!("../data/roof_truss.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub id: usize,
    /// Indices into `TrussModel::nodes`.
    pub nodes: [usize; 2],
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrussModel {
    pub nodes: Vec<Node>,
    pub bars: Vec<Bar>,
    /// Per node: (x fixed, y fixed).
    pub fixed: Vec<[bool; 2]>,
    /// Per node: (Fx, Fy) in N.
    pub loads: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Nodes,
    Bars,
    Supports,
    Loads,
}

fn fields(line: usize, text: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(line, format!("`{t}`: {e}"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::parse(line, format!("expected {n} fields, found {}", vals.len())));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(line, "non-finite value"));
    }
    Ok(vals)
}

fn as_id(line: usize, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::parse(line, format!("`{v}` is not an id")));
    }
    Ok(v as usize)
}

impl TrussModel {
    /// Parses the sectioned text format (NODES, BARS, SUPPORTS, LOADS).
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = Section::None;
        let mut nodes = Vec::new();
        let mut raw_bars = Vec::new();
        let mut raw_supports = Vec::new();
        let mut raw_loads = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            match t.to_ascii_uppercase().as_str() {
                "NODES" => section = Section::Nodes,
                "BARS" => section = Section::Bars,
                "SUPPORTS" => section = Section::Supports,
                "LOADS" => section = Section::Loads,
                _ => match section {
                    Section::None => return Err(Error::parse(line, "data outside a section")),
                    Section::Nodes => {
                        let v = fields(line, t, 3)?;
                        nodes.push((
                            line,
                            Node {
                                id: as_id(line, v[0])?,
                                x: v[1],
                                y: v[2],
                            },
                        ));
                    }
                    Section::Bars => {
                        let v = fields(line, t, 4)?;
                        raw_bars.push((line, as_id(line, v[0])?, as_id(line, v[1])?, as_id(line, v[2])?, v[3]));
                    }
                    Section::Supports => {
                        let v = fields(line, t, 3)?;
                        let flag = |x: f64| match x {
                            0.0 => Ok(false),
                            1.0 => Ok(true),
                            _ => Err(Error::parse(line, "support flags must be 0 or 1")),
                        };
                        raw_supports.push((line, as_id(line, v[0])?, [flag(v[1])?, flag(v[2])?]));
                    }
                    Section::Loads => {
                        let v = fields(line, t, 3)?;
                        raw_loads.push((line, as_id(line, v[0])?, [v[1], v[2]]));
                    }
                },
            }
        }
        let mut index = HashMap::new();
        for (k, (line, n)) in nodes.iter().enumerate() {
            if index.insert(n.id, k).is_some() {
                return Err(Error::parse(*line, format!("duplicate node {}", n.id)));
            }
        }
        let lookup = |line: usize, id: usize| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::parse(line, format!("unknown node {id}")))
        };
        let mut bar_ids = HashMap::new();
        let mut bars = Vec::new();
        for (line, id, a, b, area) in raw_bars {
            if bar_ids.insert(id, ()).is_some() {
                return Err(Error::parse(line, format!("duplicate bar {id}")));
            }
            if area <= 0.0 {
                return Err(Error::parse(line, "bar area must be positive"));
            }
            bars.push(Bar {
                id,
                nodes: [lookup(line, a)?, lookup(line, b)?],
                area,
            });
        }
        let mut fixed = vec![[false; 2]; nodes.len()];
        for (line, id, f) in raw_supports {
            let k = lookup(line, id)?;
            fixed[k] = [fixed[k][0] || f[0], fixed[k][1] || f[1]];
        }
        let mut loads = vec![[0.0; 2]; nodes.len()];
        for (line, id, f) in raw_loads {
            let k = lookup(line, id)?;
            loads[k][0] += f[0];
            loads[k][1] += f[1];
        }
        let model = TrussModel {
            nodes: nodes.into_iter().map(|(_, n)| n).collect(),
            bars,
            fixed,
            loads,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn roof_truss() -> Self {
        Self::parse(ROOF_TRUSS).expect("shipped truss file is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.bars.is_empty() {
            return Err(Error::contract("truss needs nodes and bars"));
        }
        for b in &self.bars {
            if b.nodes[0] == b.nodes[1] || self.length(b) == 0.0 {
                return Err(Error::contract(format!("bar {} has zero length", b.id)));
            }
            if !(b.area > 0.0) {
                return Err(Error::contract(format!("bar {} has non-positive area", b.id)));
            }
        }
        // connectivity by union-find
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for b in &self.bars {
            let (r0, r1) = (root(&mut parent, b.nodes[0]), root(&mut parent, b.nodes[1]));
            parent[r0] = r1;
        }
        let r = root(&mut parent, 0);
        if (0..self.nodes.len()).any(|i| root(&mut parent, i) != r) {
            return Err(Error::contract("truss is not connected"));
        }
        Ok(())
    }

    pub fn length(&self, bar: &Bar) -> f64 {
        let (a, b) = (&self.nodes[bar.nodes[0]], &self.nodes[bar.nodes[1]]);
        (b.x - a.x).hypot(b.y - a.y)
    }

    /// Bar volumes A·L, the integration weights.
    pub fn weights(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.area * self.length(b)).collect()
    }

    /// Copy with every load multiplied by `factor`.
    pub fn scaled_loads(&self, factor: f64) -> Self {
        let mut t = self.clone();
        for l in &mut t.loads {
            l[0] *= factor;
            l[1] *= factor;
        }
        t
    }
}

/// Strain-displacement rows, weights and the factored K = Σ w C̄ Bᵀ B.
#[derive(Debug, Clone)]
pub struct Assembly {
    /// Per bar: (free DOF, coefficient) pairs of B̄_e.
    b: Vec<Vec<(usize, f64)>>,
    w: Vec<f64>,
    c: f64,
    f: DVector<f64>,
    k: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Assembly {
    pub fn n_free(&self) -> usize {
        self.f.len()
    }

    pub fn n_bars(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn load_vector(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// B̄_e as a dense row over free DOFs.
    pub fn b_row(&self, e: usize) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_free());
        for &(i, v) in &self.b[e] {
            r[i] = v;
        }
        r
    }

    /// B̄_e x
    pub fn strain(&self, e: usize, x: &DVector<f64>) -> f64 {
        self.b[e].iter().map(|&(i, v)| v * x[i]).sum()
    }

    /// Σ w_e B̄_eᵀ s_e
    pub fn gather(&self, per_bar: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_free());
        for (e, s) in per_bar.iter().enumerate() {
            for &(i, v) in &self.b[e] {
                out[i] += self.w[e] * v * s;
            }
        }
        out
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// Free-DOF numbering and per-bar B̄_e rows (small-strain kinematics).
fn kinematics(truss: &TrussModel) -> (Vec<Option<usize>>, Vec<Vec<(usize, f64)>>) {
    let mut map = Vec::with_capacity(2 * truss.nodes.len());
    let mut next = 0;
    for f in &truss.fixed {
        for &fixed in f {
            map.push(if fixed {
                None
            } else {
                next += 1;
                Some(next - 1)
            });
        }
    }
    let rows = truss
        .bars
        .iter()
        .map(|bar| {
            let (a, b) = (&truss.nodes[bar.nodes[0]], &truss.nodes[bar.nodes[1]]);
            let l = truss.length(bar);
            let (c, s) = ((b.x - a.x) / l, (b.y - a.y) / l);
            let coeffs = [-c / l, -s / l, c / l, s / l];
            let dofs = [
                2 * bar.nodes[0],
                2 * bar.nodes[0] + 1,
                2 * bar.nodes[1],
                2 * bar.nodes[1] + 1,
            ];
            dofs.iter()
                .zip(coeffs)
                .filter_map(|(&d, v)| map[d].map(|i| (i, v)))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect();
    (map, rows)
}

fn free_loads(truss: &TrussModel, map: &[Option<usize>], n_free: usize) -> DVector<f64> {
    let mut f = DVector::zeros(n_free);
    for (k, l) in truss.loads.iter().enumerate() {
        for d in 0..2 {
            if let Some(i) = map[2 * k + d] {
                f[i] += l[d];
            }
        }
    }
    f
}

fn factor(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = k.clone().cholesky().ok_or(Error::UnderConstrained)?;
    // reject numerically singular pivots too
    let l = chol.l_dirty();
    let kmax = k.diagonal().max();
    if (0..k.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * kmax) {
        return Err(Error::UnderConstrained);
    }
    Ok(chol)
}

/// Assembles and factors K = Σ w_e B̄ᵀ C̄ B̄ for scalar C̄.
pub fn assemble(truss: &TrussModel, c: f64) -> Result<Assembly> {
    truss.validate()?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::contract("scaling constant must be positive"));
    }
    let (map, b) = kinematics(truss);
    let n_free = map.iter().flatten().count();
    if n_free == 0 {
        return Err(Error::contract("truss has no free degrees of freedom"));
    }
    let w = truss.weights();
    let mut k = DMatrix::zeros(n_free, n_free);
    for (row, we) in b.iter().zip(&w) {
        for &(i, vi) in row {
            for &(j, vj) in row {
                k[(i, j)] += we * c * vi * vj;
            }
        }
    }
    let chol = factor(&k)?;
    Ok(Assembly {
        f: free_loads(truss, &map, n_free),
        b,
        w,
        c,
        k,
        chol,
    })
}

/// Scalar C̄ of a uniaxial database.
fn uniaxial_c(db: &MaterialDatabase) -> Result<f64> {
    if db.dim() != 1 {
        return Err(Error::contract("truss bars need a one-dimensional database"));
    }
    Ok(db.metric().matrix()[(0, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DDState {
    pub assignments: Vec<usize>,
    pub u: DVector<f64>,
    pub eta: DVector<f64>,
    /// Admissible strains ε̄_e = B̄_e ū.
    pub strain: Vec<f64>,
    /// Admissible stresses σ̄_e = σ̄*_e + C̄ B̄_e η̄.
    pub stress: Vec<f64>,
}

impl DDState {
    pub fn new(assignments: Vec<usize>, n_free: usize) -> Self {
        let m = assignments.len();
        DDState {
            assignments,
            u: DVector::zeros(n_free),
            eta: DVector::zeros(n_free),
            strain: vec![0.0; m],
            stress: vec![0.0; m],
        }
    }

    pub fn random<R: Rng + ?Sized>(n_bars: usize, n_free: usize, db_len: usize, rng: &mut R) -> Self {
        Self::new((0..n_bars).map(|_| rng.random_range(0..db_len)).collect(), n_free)
    }
}

/// How the per-bar nearest neighbour is searched.
#[derive(Debug, Clone, Copy)]
pub enum Search<'a> {
    Tree(&'a KdTree),
    Full,
}

impl Search<'_> {
    fn nearest<B: DistanceBackend + ?Sized>(
        &self,
        db: &MaterialDatabase,
        query: &crate::qdistance::DataVector,
        backend: &mut B,
    ) -> Result<Nearest> {
        match self {
            Search::Tree(t) => t.nearest(query, backend),
            Search::Full => brute_force_nearest(db.scaled(), query, backend),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IterationStats {
    /// Global distance after the projection step.
    pub global_distance: f64,
    pub distance_calls: usize,
    pub searches: usize,
    pub changed: bool,
}

/// Projection onto the equilibrium/compatibility constraints for the
/// current assignments.
pub fn project(state: &mut DDState, asm: &Assembly, db: &MaterialDatabase) -> Result<()> {
    let pts = db.points();
    if state.assignments.len() != asm.n_bars() || state.assignments.iter().any(|&i| i >= pts.len()) {
        return Err(Error::contract("assignments do not match the truss and database"));
    }
    let c = asm.c();
    let eps_star: Vec<f64> = state.assignments.iter().map(|&i| pts[i].strain[0]).collect();
    let sig_star: Vec<f64> = state.assignments.iter().map(|&i| pts[i].stress[0]).collect();
    let rhs_u = asm.gather(&eps_star.iter().map(|e| c * e).collect::<Vec<_>>());
    state.u = asm.solve(&rhs_u);
    let rhs_eta = asm.load_vector() - asm.gather(&sig_star);
    state.eta = asm.solve(&rhs_eta);
    for e in 0..asm.n_bars() {
        state.strain[e] = asm.strain(e, &state.u);
        state.stress[e] = sig_star[e] + c * asm.strain(e, &state.eta);
    }
    Ok(())
}

/// ½ Σ w_e F̄_e between admissible states and assigned data.
pub fn global_distance(state: &DDState, asm: &Assembly, db: &MaterialDatabase) -> f64 {
    let c = asm.c();
    let pts = db.points();
    0.5 * state
        .assignments
        .iter()
        .enumerate()
        .map(|(e, &i)| {
            let de = state.strain[e] - pts[i].strain[0];
            let ds = state.stress[e] - pts[i].stress[0];
            asm.weights()[e] * (c * de * de + ds * ds / c)
        })
        .sum::<f64>()
}

/// One projection followed by a nearest-neighbour reassignment of every bar.
pub fn dd_iterate<B: DistanceBackend + ?Sized>(
    state: &mut DDState,
    asm: &Assembly,
    db: &MaterialDatabase,
    search: Search<'_>,
    backend: &mut B,
) -> Result<IterationStats> {
    project(state, asm, db)?;
    let mut stats = IterationStats {
        global_distance: global_distance(state, asm, db),
        ..Default::default()
    };
    for e in 0..asm.n_bars() {
        let z = MaterialPoint::uniaxial(state.strain[e], state.stress[e]);
        let query = scale_point(&z, db.metric())?;
        let hit = search.nearest(db, &query, backend)?;
        stats.distance_calls += hit.calls;
        stats.searches += 1;
        if hit.index != state.assignments[e] {
            stats.changed = true;
            state.assignments[e] = hit.index;
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Global distance after each projection.
    pub history: Vec<f64>,
    pub global_distance: f64,
    pub assignments: Vec<usize>,
    /// Stress of each bar's assigned data point.
    pub data_stress: Vec<f64>,
    pub admissible_stress: Vec<f64>,
    pub admissible_strain: Vec<f64>,
    pub distance_calls: usize,
    pub searches: usize,
}

impl SolveReport {
    pub fn mean_calls_per_search(&self) -> f64 {
        if self.searches == 0 {
            0.0
        } else {
            self.distance_calls as f64 / self.searches as f64
        }
    }
}

/// Random initial assignments, then iterate until no assignment changes or
/// `max_iter` iterations ran.
pub fn solve<B: DistanceBackend + ?Sized, R: Rng + ?Sized>(
    asm: &Assembly,
    db: &MaterialDatabase,
    search: Search<'_>,
    backend: &mut B,
    rng: &mut R,
    max_iter: usize,
) -> Result<SolveReport> {
    if max_iter == 0 {
        return Err(Error::contract("max_iter must be at least 1"));
    }
    let c = uniaxial_c(db)?;
    if (c - asm.c()).abs() > 1e-12 * c {
        return Err(Error::contract("assembly and database use different scaling"));
    }
    let mut state = DDState::random(asm.n_bars(), asm.n_free(), db.len(), rng);
    let mut history = Vec::new();
    let (mut calls, mut searches) = (0, 0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let stats = dd_iterate(&mut state, asm, db, search, backend)?;
        history.push(stats.global_distance);
        calls += stats.distance_calls;
        searches += stats.searches;
        if !stats.changed {
            converged = true;
            break;
        }
    }
    // admissible state consistent with the final assignments
    project(&mut state, asm, db)?;
    let pts = db.points();
    Ok(SolveReport {
        iterations,
        converged,
        global_distance: global_distance(&state, asm, db),
        history,
        data_stress: state.assignments.iter().map(|&i| pts[i].stress[0]).collect(),
        admissible_stress: state.stress.clone(),
        admissible_strain: state.strain.clone(),
        assignments: state.assignments,
        distance_calls: calls,
        searches,
    })
}

/// Nonlinear equilibrium with the Ramberg-Osgood law, by Newton iteration
/// on the free displacements. Returns bar stresses.
pub fn reference_solution(truss: &TrussModel, ro: &RambergOsgoodParams) -> Result<Vec<f64>> {
    ro.validate()?;
    truss.validate()?;
    let (map, b) = kinematics(truss);
    let n = map.iter().flatten().count();
    let f = free_loads(truss, &map, n);
    let w = truss.weights();
    let fnorm = f.norm();
    let stresses = |u: &DVector<f64>| -> Result<Vec<f64>> {
        b.iter()
            .map(|row| ro.stress(row.iter().map(|&(i, v)| v * u[i]).sum()))
            .collect()
    };
    let residual = |sig: &[f64]| {
        let mut r = f.clone();
        for ((row, we), s) in b.iter().zip(&w).zip(sig) {
            for &(i, v) in row {
                r[i] -= we * v * s;
            }
        }
        r
    };
    let mut u = DVector::zeros(n);
    let mut sig = vec![0.0; b.len()];
    let mut r = f.clone();
    const MAX_NEWTON: usize = 100;
    for _ in 0..MAX_NEWTON {
        if r.norm() <= 1e-10 * fnorm || fnorm == 0.0 {
            return Ok(sig);
        }
        let mut kt = DMatrix::zeros(n, n);
        for ((row, we), s) in b.iter().zip(&w).zip(&sig) {
            let et = 1.0 / ro.compliance(*s);
            for &(i, vi) in row {
                for &(j, vj) in row {
                    kt[(i, j)] += we * et * vi * vj;
                }
            }
        }
        let du = factor(&kt)?.solve(&r);
        // backtracking keeps the residual decreasing
        let mut step = 1.0;
        loop {
            let trial = &u + &du * step;
            let ts = stresses(&trial)?;
            let tr = residual(&ts);
            if tr.norm() < r.norm() || step < 1e-6 {
                u = trial;
                sig = ts;
                r = tr;
                break;
            }
            step *= 0.5;
        }
    }
    if r.norm() <= 1e-10 * fnorm {
        return Ok(sig);
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON,
        residual: r.norm(),
    })
}

/// √(Σ w(σ − σ_ref)² / Σ w σ_ref²)
pub fn rms_stress_error(sigma: &[f64], sigma_ref: &[f64], w: &[f64]) -> Result<f64> {
    if sigma.len() != sigma_ref.len() || sigma.len() != w.len() || sigma.is_empty() {
        return Err(Error::contract("stress error needs equal, non-zero lengths"));
    }
    let den: f64 = w.iter().zip(sigma_ref).map(|(w, s)| w * s * s).sum();
    if den == 0.0 {
        return Err(Error::DegenerateInput("reference stresses are all zero".into()));
    }
    let num: f64 = w
        .iter()
        .zip(sigma.iter().zip(sigma_ref))
        .map(|(w, (s, r))| w * (s - r) * (s - r))
        .sum();
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materialdb::{generate_db, ExactBackend};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ONE_BAR: &str = "
NODES
1 0 0
2 1000 0
BARS
1 1 2 100
SUPPORTS
1 1 1
2 0 1
LOADS
2 500 0
";

    fn standard_db() -> MaterialDatabase {
        let ro = RambergOsgoodParams::default();
        generate_db(&ro, -6.0, 6.0, 161)
            .unwrap()
            .with_metric(default_scaling(&ro).unwrap())
            .unwrap()
    }

    /// Bar forces from nodal equilibrium alone (the roof truss is statically
    /// determinate), independent of any material law.
    fn statics_stresses(t: &TrussModel) -> Vec<f64> {
        let (map, b) = kinematics(t);
        let n = map.iter().flatten().count();
        let w = t.weights();
        let mut eq = DMatrix::zeros(n, t.bars.len());
        for (e, row) in b.iter().enumerate() {
            for &(i, v) in row {
                eq[(i, e)] = w[e] * v;
            }
        }
        let f = free_loads(t, &map, n);
        eq.lu().solve(&f).unwrap().iter().copied().collect()
    }

    #[test]
    fn parses_roof_truss() {
        let t = TrussModel::roof_truss();
        assert_eq!(t.nodes.len(), 7);
        assert_eq!(t.bars.len(), 11);
        assert!(t.bars.iter().all(|b| b.area == 100.0));
        assert_eq!(t.fixed[0], [true, true]);
        assert_eq!(t.fixed[6], [false, true]);
        let total: f64 = t.loads.iter().map(|l| l[1]).sum();
        assert_eq!(total, -600.0);
    }

    #[test]
    fn parse_errors_have_lines() {
        let bad = "NODES\n1 0 0\nBARS\n1 1 9 100\n";
        assert!(matches!(TrussModel::parse(bad), Err(Error::Parse { line: 4, .. })));
        assert!(matches!(TrussModel::parse("1 0 0"), Err(Error::Parse { line: 1, .. })));
        assert!(TrussModel::parse("NODES\n1 0 0\n2 0 0\nBARS\n1 1 2 100\n").is_err());
        assert!(TrussModel::parse("NODES\n1 0 0\n2 1 0\n3 5 5\nBARS\n1 1 2 100\n").is_err());
    }

    #[test]
    fn single_bar_assembly() {
        let t = TrussModel::parse(ONE_BAR).unwrap();
        let asm = assemble(&t, 1e4).unwrap();
        assert_eq!(asm.n_free(), 1);
        let b = asm.b_row(0);
        assert!((b[0] - 1e-3).abs() < 1e-18);
        // K = A L C / L²
        assert!((asm.stiffness()[(0, 0)] - 100.0 * 1000.0 * 1e4 / 1e6).abs() < 1e-9);
    }

    #[test]
    fn unconstrained_truss_rejected() {
        let free = ONE_BAR.replace("2 0 1", "2 0 0");
        assert!(matches!(
            assemble(&TrussModel::parse(&free).unwrap(), 1e4),
            Err(Error::UnderConstrained)
        ));
    }

    #[test]
    fn roof_truss_stiffness_is_spd() {
        let asm = assemble(&TrussModel::roof_truss(), 1e4).unwrap();
        let eig = asm.stiffness().clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn shared_factorization_matches_dense_solve() {
        let asm = assemble(&TrussModel::roof_truss(), 1e4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rhs = DVector::from_fn(asm.n_free(), |_, _| rng.random_range(-1.0..1.0));
        let a = asm.solve(&rhs);
        let b = asm.stiffness().clone().lu().solve(&rhs).unwrap();
        assert!((a - &b).norm() < 1e-10 * b.norm());
    }

    #[test]
    fn stress_update_satisfies_equilibrium() {
        let db = standard_db();
        let asm = assemble(&TrussModel::roof_truss(), 2.5e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut s = DDState::random(asm.n_bars(), asm.n_free(), db.len(), &mut rng);
            project(&mut s, &asm, &db).unwrap();
            let r = asm.gather(&s.stress) - asm.load_vector();
            assert!(r.norm() < 1e-8 * asm.load_vector().norm());
        }
    }

    #[test]
    fn fixed_point_with_exact_solution_data() {
        let t = TrussModel::roof_truss();
        let ro = RambergOsgoodParams::default();
        let sig = reference_solution(&t, &ro).unwrap();
        // symmetric bars share stresses; keep one datum per distinct value
        let mut unique: Vec<f64> = Vec::new();
        for &s in &sig {
            if !unique.iter().any(|u| (u - s).abs() < 1e-9) {
                unique.push(s);
            }
        }
        let pts: Vec<MaterialPoint> = unique
            .iter()
            .map(|&s| MaterialPoint::uniaxial(ro.strain(s), s))
            .collect();
        let metric = default_scaling(&ro).unwrap();
        let c = metric.matrix()[(0, 0)];
        let db = MaterialDatabase::new(pts, metric).unwrap();
        let asm = assemble(&t, c).unwrap();
        let start = sig
            .iter()
            .map(|s| unique.iter().position(|u| (u - s).abs() < 1e-9).unwrap())
            .collect();
        let mut state = DDState::new(start, asm.n_free());
        let stats = dd_iterate(&mut state, &asm, &db, Search::Full, &mut ExactBackend).unwrap();
        assert!(!stats.changed);
        assert!(state.eta.norm() < 1e-10);
        assert!(stats.global_distance < 1e-12);

        let report = solve(
            &asm,
            &db,
            Search::Full,
            &mut ExactBackend,
            &mut ChaCha8Rng::seed_from_u64(1),
            50,
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.global_distance < 1e-12);
    }

    #[test]
    fn one_bar_two_points_reaches_cheapest_assignment() {
        let t = TrussModel::parse(ONE_BAR).unwrap();
        let asm = assemble(&t, 1e4).unwrap();
        let metric = ScalingMetric::scalar(1e4).unwrap();
        let candidates = [
            MaterialPoint::uniaxial(5e-4, 4.5),
            MaterialPoint::uniaxial(5.05e-4, 5.8),
        ];
        let db = MaterialDatabase::new(candidates.to_vec(), metric).unwrap();
        // enumerate both assignments and evaluate the cost directly
        let cost = |k: usize| {
            let mut s = DDState::new(vec![k], asm.n_free());
            project(&mut s, &asm, &db).unwrap();
            global_distance(&s, &asm, &db)
        };
        let best = if cost(0) <= cost(1) { 0 } else { 1 };
        for start in 0..2 {
            let mut s = DDState::new(vec![start], asm.n_free());
            let mut iters = 0;
            loop {
                iters += 1;
                if !dd_iterate(&mut s, &asm, &db, Search::Full, &mut ExactBackend)
                    .unwrap()
                    .changed
                {
                    break;
                }
            }
            assert!(iters <= 2);
            assert_eq!(s.assignments[0], best);
        }
    }

    #[test]
    fn global_distance_never_increases_with_exact_backend() {
        let db = standard_db();
        let tree = KdTree::from_database(&db, 8).unwrap();
        let asm = assemble(&TrussModel::roof_truss(), 2.5e3).unwrap();
        for seed in 0..5 {
            let r = solve(
                &asm,
                &db,
                Search::Tree(&tree),
                &mut ExactBackend,
                &mut ChaCha8Rng::seed_from_u64(seed),
                500,
            )
            .unwrap();
            assert!(r.converged);
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.history);
            }
        }
    }

    #[test]
    fn single_bar_reference_is_statics() {
        let t = TrussModel::parse(ONE_BAR).unwrap();
        let ro = RambergOsgoodParams::default();
        let s = reference_solution(&t, &ro).unwrap();
        assert!((s[0] - 5.0).abs() < 1e-10);
    }

    #[test]
    fn roof_reference_matches_statics() {
        let t = TrussModel::roof_truss();
        let s = reference_solution(&t, &RambergOsgoodParams::default()).unwrap();
        for (a, b) in s.iter().zip(statics_stresses(&t)) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0));
        }
        assert!(s.iter().all(|x| x.abs() < 6.0));
    }

    #[test]
    fn linear_regime_matches_linear_fem() {
        // an indeterminate variant so the material law matters
        let mut t = TrussModel::roof_truss();
        t.fixed[6] = [true, true];
        let t = t.scaled_loads(1e-3);
        let ro = RambergOsgoodParams::default();
        let s = reference_solution(&t, &ro).unwrap();
        let asm = assemble(&t, ro.e).unwrap();
        let u = asm.solve(asm.load_vector());
        for (e, se) in s.iter().enumerate() {
            let lin = ro.e * asm.strain(e, &u);
            assert!((se - lin).abs() <= 1e-3 * lin.abs().max(1e-6), "{se} vs {lin}");
        }
    }

    #[test]
    fn zero_load_gives_zero_stress() {
        let t = TrussModel::roof_truss().scaled_loads(0.0);
        let s = reference_solution(&t, &RambergOsgoodParams::default()).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
        assert!(rms_stress_error(&s, &s, &t.weights()).is_err());
    }

    #[test]
    fn rms_error_examples() {
        let r = [1.0, -2.0, 3.0];
        let w = [1.0, 2.0, 0.5];
        assert_eq!(rms_stress_error(&r, &r, &w).unwrap(), 0.0);
        let s: Vec<f64> = r.iter().map(|x| 1.1 * x).collect();
        assert!((rms_stress_error(&s, &r, &w).unwrap() - 0.1).abs() < 1e-12);
    }
}
