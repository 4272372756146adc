//! Geometric ground truth and dataset samplers.
//!
//! The label oracles are deliberately brute force: a Delaunay edge is one
//! that belongs to some triangle whose circumcircle is empty, a hull
//! triangle is one whose plane has every other point strictly on one side.
//! Both are O(n⁴) scans over the relevant predicates and serve as the
//! reference implementation at desk scale. Generators resample whenever a
//! predicate magnitude falls below [`DEGENERACY_EPS`] instead of resorting
//! to exact arithmetic; for continuous random data this is a measure-zero
//! event.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tensor::Tensor;

/// Predicate magnitudes below this are treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("expected {need}-dimensional points, got {got}")]
    WrongDimension { need: usize, got: usize },
    #[error("K={k} must be smaller than the set size n={n}")]
    KnnTooLarge { k: usize, n: usize },
    #[error("index pair ({i},{j}) invalid for n={n}")]
    InvalidEdge { i: usize, j: usize, n: usize },
    #[error("triple {0:?} invalid for n={1}")]
    InvalidTriple([usize; 3], usize),
    #[error("coordinates must be finite")]
    NonFinite,
}

// ── Core data types ──────────────────────────────────────────────────

/// One input set: `n` points of dimension `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(coords: Vec<f64>, n: usize, dim: usize) -> Result<Self, GeometryError> {
        if coords.len() != n * dim || coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(PointSet { n, dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut coords = Vec::with_capacity(n * dim);
        for r in rows {
            if r.len() != dim {
                return Err(GeometryError::WrongDimension {
                    need: dim,
                    got: r.len(),
                });
            }
            coords.extend_from_slice(r);
        }
        PointSet::new(coords, n, dim)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.point(i).to_vec()).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.coords.clone(), &[self.n, self.dim]).expect("valid point set")
    }
}

/// Symmetric zero-diagonal adjacency over ordered pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLabels {
    n: usize,
    adj: Vec<bool>,
}

impl EdgeLabels {
    pub fn empty(n: usize) -> Self {
        EdgeLabels {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GeometryError> {
        let mut out = EdgeLabels::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(GeometryError::InvalidEdge { i, j, n });
            }
            out.set(i, j);
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sets both orientations; the diagonal stays zero by construction.
    pub fn set(&mut self, i: usize, j: usize) {
        self.adj[i * self.n + j] = true;
        self.adj[j * self.n + i] = true;
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Undirected edges as sorted pairs, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Dense 0/1 tensor view (diagonal zero).
    pub fn to_tensor(&self) -> Tensor {
        let data = self.adj.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(data, &[self.n, self.n]).expect("square")
    }
}

/// Sorted, deduplicated candidate triples with hull-membership labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletCandidates {
    n: usize,
    triples: Vec<[usize; 3]>,
    labels: Vec<bool>,
}

impl TripletCandidates {
    pub fn new(
        n: usize,
        triples: Vec<[usize; 3]>,
        labels: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        assert_eq!(triples.len(), labels.len());
        for w in triples.windows(2) {
            if w[0] >= w[1] {
                return Err(GeometryError::InvalidTriple(w[1], n));
            }
        }
        for t in &triples {
            if !(t[0] < t[1] && t[1] < t[2] && t[2] < n) {
                return Err(GeometryError::InvalidTriple(*t, n));
            }
        }
        Ok(TripletCandidates { n, triples, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[[usize; 3]] {
        &self.triples
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

/// Cluster id per element; ids are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    ids: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Relabels arbitrary ids to contiguous ones in order of first
    /// appearance.
    pub fn from_ids(raw: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut ids = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len();
            let id = *remap.entry(r).or_insert(next);
            ids.push(id);
        }
        Partition {
            ids,
            n_clusters: remap.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters];
        for &id in &self.ids {
            sizes[id] += 1;
        }
        sizes
    }
}

/// Same-cluster relation as a symmetric zero-diagonal adjacency.
pub fn partition_to_adjacency(part: &Partition) -> EdgeLabels {
    let n = part.n();
    let mut out = EdgeLabels::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if part.ids()[i] == part.ids()[j] {
                out.set(i, j);
            }
        }
    }
    out
}

// ── Planar predicates and Delaunay oracle ────────────────────────────

/// Twice the signed area of triangle (a, b, c); positive when
/// counterclockwise.
pub fn orient2d(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Empty-circumcircle predicate: +1 when `d` lies strictly inside the
/// circumcircle of (a, b, c), −1 strictly outside, 0 when the determinant
/// (or the orientation of a, b, c) is degenerate below [`DEGENERACY_EPS`].
pub fn incircle(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> i8 {
    let orient = orient2d(a, b, c);
    if orient.abs() < DEGENERACY_EPS {
        return 0;
    }
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let (alift, blift, clift) = (
        adx * adx + ady * ady,
        bdx * bdx + bdy * bdy,
        cdx * cdx + cdy * cdy,
    );
    let det = adx * (bdy * clift - cdy * blift) - ady * (bdx * clift - cdx * blift)
        + alift * (bdx * cdy - cdx * bdy);
    if det.abs() < DEGENERACY_EPS {
        return 0;
    }
    // normalize so the answer is orientation-independent
    let signed = if orient > 0.0 { det } else { -det };
    if signed > 0.0 {
        1
    } else {
        -1
    }
}

/// Brute-force Delaunay edges via the empty-circumcircle definition.
///
/// Edge (i, j) is labeled iff some triangle (i, j, l) has a circumcircle
/// strictly empty of all other points. Errors on any near-degenerate
/// predicate so generators can resample.
pub fn delaunay_edges(p: &PointSet) -> Result<EdgeLabels, GeometryError> {
    if p.dim() != 2 {
        return Err(GeometryError::WrongDimension {
            need: 2,
            got: p.dim(),
        });
    }
    let n = p.len();
    if n < 3 {
        return Err(GeometryError::TooFewPoints { need: 3, got: n });
    }
    let mut labels = EdgeLabels::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let mut member = false;
            for l in 0..n {
                if l == i || l == j {
                    continue;
                }
                if orient2d(p.point(i), p.point(j), p.point(l)).abs() < DEGENERACY_EPS {
                    return Err(GeometryError::Degenerate("collinear triple"));
                }
                let mut empty = true;
                for m in 0..n {
                    if m == i || m == j || m == l {
                        continue;
                    }
                    match incircle(p.point(i), p.point(j), p.point(l), p.point(m)) {
                        0 => return Err(GeometryError::Degenerate("cocircular quadruple")),
                        1 => empty = false,
                        _ => {}
                    }
                }
                if empty {
                    member = true;
                }
            }
            if member {
                labels.set(i, j);
            }
        }
    }
    Ok(labels)
}

/// Indices of the strict 2D convex hull (Andrew's monotone chain).
pub fn convex_hull_2d(p: &PointSet) -> Vec<usize> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (p.point(a), p.point(b));
        pa[0].partial_cmp(&pb[0])
            .unwrap()
            .then(pa[1].partial_cmp(&pb[1]).unwrap())
    });
    let build = |indices: &mut dyn Iterator<Item = usize>| {
        let mut chain: Vec<usize> = Vec::new();
        for idx in indices {
            while chain.len() >= 2
                && orient2d(
                    p.point(chain[chain.len() - 2]),
                    p.point(chain[chain.len() - 1]),
                    p.point(idx),
                ) <= 0.0
            {
                chain.pop();
            }
            chain.push(idx);
        }
        chain
    };
    let lower = build(&mut order.iter().copied());
    let upper = build(&mut order.iter().rev().copied());
    let mut hull = lower;
    hull.pop();
    hull.extend_from_slice(&upper[..upper.len().saturating_sub(1)]);
    hull
}

// ── 3D hull oracle ───────────────────────────────────────────────────

/// 6× the signed volume of tetrahedron (a, b, c, d).
pub fn signed_volume(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let (ux, uy, uz) = (b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    let (vx, vy, vz) = (c[0] - a[0], c[1] - a[1], c[2] - a[2]);
    let (wx, wy, wz) = (d[0] - a[0], d[1] - a[1], d[2] - a[2]);
    ux * (vy * wz - vz * wy) - uy * (vx * wz - vz * wx) + uz * (vx * wy - vy * wx)
}

/// Brute-force supporting triangles of the 3D convex hull.
///
/// A sorted triple is included iff every other point lies strictly on one
/// side of its plane; any near-coplanar quadruple raises a degeneracy.
pub fn convex_hull_triangles(p: &PointSet) -> Result<Vec<[usize; 3]>, GeometryError> {
    if p.dim() != 3 {
        return Err(GeometryError::WrongDimension {
            need: 3,
            got: p.dim(),
        });
    }
    let n = p.len();
    if n < 4 {
        return Err(GeometryError::TooFewPoints { need: 4, got: n });
    }
    let mut faces = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                let mut pos = 0usize;
                let mut neg = 0usize;
                for m in 0..n {
                    if m == i || m == j || m == l {
                        continue;
                    }
                    let v = signed_volume(p.point(i), p.point(j), p.point(l), p.point(m));
                    if v.abs() < DEGENERACY_EPS {
                        return Err(GeometryError::Degenerate("coplanar quadruple"));
                    }
                    if v > 0.0 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
                if pos == 0 || neg == 0 {
                    faces.push([i, j, l]);
                }
            }
        }
    }
    Ok(faces)
}

/// Checks that every edge of the triangle set is shared by exactly two
/// triangles (a closed 2-manifold).
pub fn is_closed_manifold(faces: &[[usize; 3]]) -> bool {
    let mut counts = std::collections::HashMap::new();
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[0], f[2]), (f[1], f[2])] {
            *counts.entry((a, b)).or_insert(0usize) += 1;
        }
    }
    !counts.is_empty() && counts.values().all(|&c| c == 2)
}

/// Union of all triples {q, a, b} with a, b among q's K nearest neighbors
/// (Euclidean, ties by index); sorted and deduplicated.
pub fn knn_triples(p: &PointSet, k: usize) -> Result<Vec<[usize; 3]>, GeometryError> {
    let n = p.len();
    if k >= n {
        return Err(GeometryError::KnnTooLarge { k, n });
    }
    let mut set = std::collections::BTreeSet::new();
    for q in 0..n {
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&o| o != q)
            .map(|o| {
                let d2: f64 = p
                    .point(q)
                    .iter()
                    .zip(p.point(o))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                (d2, o)
            })
            .collect();
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let neigh: Vec<usize> = by_dist[..k].iter().map(|&(_, o)| o).collect();
        for ai in 0..neigh.len() {
            for bi in ai + 1..neigh.len() {
                let mut t = [q, neigh[ai], neigh[bi]];
                t.sort_unstable();
                set.insert(t);
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Labels K-NN candidate triples by membership in a known hull triangle
/// set, without recomputing the hull oracle.
pub fn candidates_from_hull(
    p: &PointSet,
    k: usize,
    hull: &[[usize; 3]],
) -> Result<TripletCandidates, GeometryError> {
    let triples = knn_triples(p, k)?;
    let hull_set: std::collections::HashSet<[usize; 3]> = hull.iter().copied().collect();
    let labels: Vec<bool> = triples.iter().map(|t| hull_set.contains(t)).collect();
    TripletCandidates::new(p.len(), triples, labels)
}

/// Candidate triangles from K-nearest-neighbor neighborhoods, labeled by
/// the hull oracle. Ties in the distance ordering break by index.
pub fn knn_triplet_candidates(
    p: &PointSet,
    k: usize,
) -> Result<TripletCandidates, GeometryError> {
    if k >= p.len() {
        return Err(GeometryError::KnnTooLarge { k, n: p.len() });
    }
    let hull = convex_hull_triangles(p)?;
    candidates_from_hull(p, k, &hull)
}

/// Fraction of hull triangles captured by a candidate set.
pub fn candidate_recall(p: &PointSet, cands: &TripletCandidates) -> Result<f64, GeometryError> {
    let hull = convex_hull_triangles(p)?;
    if hull.is_empty() {
        return Ok(1.0);
    }
    let have: std::collections::HashSet<[usize; 3]> = cands
        .triples()
        .iter()
        .zip(cands.labels())
        .filter(|&(_, &l)| l)
        .map(|(t, _)| *t)
        .collect();
    Ok(hull.iter().filter(|t| have.contains(*t)).count() as f64 / hull.len() as f64)
}

// ── Samplers ─────────────────────────────────────────────────────────

/// `n` i.i.d. points uniform on the unit square.
pub fn sample_uniform_square(n: usize, rng: &mut ChaCha8Rng) -> PointSet {
    let coords = (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect();
    PointSet::new(coords, n, 2).expect("finite")
}

/// `n` i.i.d. standard-normal points in R³.
pub fn sample_gaussian3(n: usize, rng: &mut ChaCha8Rng) -> PointSet {
    let coords = (0..3 * n)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    PointSet::new(coords, n, 3).expect("finite")
}

/// `n` points on the unit sphere (normalized Gaussians).
pub fn sample_sphere(n: usize, rng: &mut ChaCha8Rng) -> PointSet {
    let mut coords = Vec::with_capacity(3 * n);
    for _ in 0..n {
        loop {
            let v: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-6 {
                coords.extend(v.iter().map(|&c| c / norm));
                break;
            }
        }
    }
    PointSet::new(coords, n, 3).expect("finite")
}

/// Uniform-square set with its Delaunay labels; resamples on degeneracy.
pub fn delaunay_sample(n: usize, rng: &mut ChaCha8Rng) -> (PointSet, EdgeLabels) {
    assert!(n >= 3, "Delaunay sample needs n >= 3");
    loop {
        let points = sample_uniform_square(n, rng);
        match delaunay_edges(&points) {
            Ok(labels) => {
                let h = convex_hull_2d(&points).len();
                assert_eq!(
                    labels.edge_count(),
                    3 * n - 3 - h,
                    "Euler edge-count cross-check failed"
                );
                return (points, labels);
            }
            Err(GeometryError::Degenerate(_)) => continue,
            Err(e) => panic!("unexpected generation error: {e}"),
        }
    }
}

/// 3D set with K-NN triangle candidates labeled by the hull oracle;
/// resamples on degeneracy. Also returns the full hull triangle list.
pub fn hull_sample(
    n: usize,
    k: usize,
    spherical: bool,
    rng: &mut ChaCha8Rng,
) -> (PointSet, TripletCandidates, Vec<[usize; 3]>) {
    assert!(n >= 4, "hull sample needs n >= 4");
    assert!(k < n, "hull sample needs K < n");
    loop {
        let points = if spherical {
            sample_sphere(n, rng)
        } else {
            sample_gaussian3(n, rng)
        };
        let faces = match convex_hull_triangles(&points) {
            Ok(faces) => faces,
            Err(GeometryError::Degenerate(_)) => continue,
            Err(e) => panic!("unexpected generation error: {e}"),
        };
        assert!(
            is_closed_manifold(&faces),
            "hull triangles are not a closed 2-manifold"
        );
        let cands = candidates_from_hull(&points, k, &faces).expect("K validated by caller");
        return (points, cands, faces);
    }
}

/// Synthetic partitioned set: Gaussian cluster centers, Gaussian spread,
/// features are the coordinates.
pub fn sample_partition_set(
    n_range: (usize, usize),
    cluster_range: (usize, usize),
    d_in: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> (PointSet, Partition) {
    let n = rng.random_range(n_range.0..=n_range.1);
    let k = rng.random_range(cluster_range.0..=cluster_range.1).min(n);
    let centers: Vec<f64> = (0..k * d_in).map(|_| StandardNormal.sample(rng)).collect();
    let mut coords = Vec::with_capacity(n * d_in);
    let mut raw_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        raw_ids.push(c);
        for j in 0..d_in {
            let noise: f64 = StandardNormal.sample(rng);
            coords.push(centers[c * d_in + j] + spread * noise);
        }
    }
    let points = PointSet::new(coords, n, d_in).expect("finite");
    (points, Partition::from_ids(&raw_ids))
}
