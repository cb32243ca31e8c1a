//! Configuration-space obstacle geometry: unit-cube scaling, isosurface
//! extraction of the singular set, and exact closest-point queries.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::mc_tables::{EDGE_TABLE, TRI_TABLE};

pub type Point3 = Vector3<f64>;

/// Triangles at or below this area are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Per-axis affine map into `[0, 1]³`. Axes with zero extent map to 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCubeScale {
    pub min: [f64; 3],
    pub extent: [f64; 3],
}

impl UnitCubeScale {
    pub fn from_ranges(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let mut extent = [0.0; 3];
        for k in 0..3 {
            if !(max[k] >= min[k]) || !min[k].is_finite() || !max[k].is_finite() {
                return Err(Error::InvalidParameter {
                    name: "range",
                    reason: format!(
                        "axis {k}: [{}, {}] is not a finite interval",
                        min[k], max[k]
                    ),
                });
            }
            extent[k] = max[k] - min[k];
        }
        Ok(Self { min, extent })
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyCloud)?;
        let mut lo = [first.x, first.y, first.z];
        let mut hi = lo;
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Self::from_ranges(lo, hi)
    }

    pub fn to_unit(&self, p: &Point3) -> Point3 {
        Point3::from_fn(|k, _| {
            if self.extent[k] > 0.0 {
                (p[k] - self.min[k]) / self.extent[k]
            } else {
                0.5
            }
        })
    }

    pub fn from_unit(&self, q: &Point3) -> Point3 {
        Point3::from_fn(|k, _| self.min[k] + q[k] * self.extent[k])
    }

    /// `∂(unit)/∂(raw)` per axis; zero on collapsed axes.
    pub fn metric(&self) -> Point3 {
        Point3::from_fn(|k, _| {
            if self.extent[k] > 0.0 {
                1.0 / self.extent[k]
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// Points in unit-cube coordinates.
    pub points: Vec<Point3>,
    pub scale: UnitCubeScale,
}

impl PointCloud {
    pub fn unscaled(&self) -> Vec<Point3> {
        self.points
            .iter()
            .map(|p| self.scale.from_unit(p))
            .collect()
    }
}

pub fn scale_to_unit_cube(points: &[Point3]) -> Result<PointCloud> {
    let scale = UnitCubeScale::from_points(points)?;
    Ok(PointCloud {
        points: points.iter().map(|p| scale.to_unit(p)).collect(),
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Face,
    Edge,
    Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    pub point: Point3,
    pub distance: f64,
    pub component_id: usize,
    pub feature: Feature,
    /// Index of the triangle the point lies on.
    pub triangle: usize,
    /// Barycentric weights of `point` on that triangle.
    pub barycentric: [f64; 3],
}

pub fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Closest point on a triangle by Voronoi-region classification.
pub fn closest_point_on_triangle(
    query: &Point3,
    a: &Point3,
    b: &Point3,
    c: &Point3,
) -> Result<ClosestPointResult> {
    let area = triangle_area(a, b, c);
    if !(area > MIN_TRIANGLE_AREA) {
        return Err(Error::DegenerateTriangle { area });
    }
    let (bary, feature) = closest_barycentric(query, a, b, c);
    let point = a * bary[0] + b * bary[1] + c * bary[2];
    Ok(ClosestPointResult {
        point,
        distance: (query - point).norm(),
        component_id: 0,
        feature,
        triangle: 0,
        barycentric: bary,
    })
}

fn closest_barycentric(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> ([f64; 3], Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], Feature::Vertex);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], Feature::Vertex);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], Feature::Edge);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], Feature::Vertex);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], Feature::Edge);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], Feature::Edge);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], Feature::Face)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Point3::repeat(f64::INFINITY),
            hi: Point3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn distance_squared(&self, p: &Point3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
enum BvhNode {
    Leaf {
        bounds: Aabb,
        start: usize,
        end: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over the triangles of one component.
#[derive(Debug, Clone, PartialEq)]
struct Bvh {
    nodes: Vec<BvhNode>,
    /// Triangle indices, permuted so each leaf owns a contiguous run.
    order: Vec<usize>,
}

impl Bvh {
    fn build(tris: Vec<usize>, vertices: &[Point3], triangles: &[[usize; 3]]) -> Self {
        let boxes: HashMap<usize, Aabb> = tris
            .iter()
            .map(|&t| {
                let mut b = Aabb::empty();
                for &v in &triangles[t] {
                    b.grow(&vertices[v]);
                }
                // Pad so rounding in the closest-point arithmetic can never
                // push a candidate outside its box.
                let pad = 1e-9 * (1.0 + b.lo.amax().max(b.hi.amax()));
                b.lo -= Point3::repeat(pad);
                b.hi += Point3::repeat(pad);
                (t, b)
            })
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: tris,
        };
        let n = bvh.order.len();
        bvh.split(0, n, &boxes);
        bvh
    }

    fn split(&mut self, start: usize, end: usize, boxes: &HashMap<usize, Aabb>) -> usize {
        let mut bounds = Aabb::empty();
        let mut centroids = Aabb::empty();
        for t in &self.order[start..end] {
            let b = &boxes[t];
            bounds.merge(b);
            centroids.grow(&((b.lo + b.hi) * 0.5));
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let axis = (centroids.hi - centroids.lo).imax();
        let centre = |t: &usize| boxes[t].lo[axis] + boxes[t].hi[axis];
        self.order[start..end].sort_by(|a, b| centre(a).total_cmp(&centre(b)).then(a.cmp(b)));
        let mid = start + (end - start) / 2;
        self.nodes.push(BvhNode::Leaf { bounds, start, end });
        let left = self.split(start, mid, boxes);
        let right = self.split(mid, end, boxes);
        self.nodes[id] = BvhNode::Inner {
            bounds,
            left,
            right,
        };
        id
    }
}

/// Triangle soup with per-triangle component ids and one BVH per component.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
    pub component_ids: Vec<usize>,
    bvhs: Vec<Bvh>,
}

impl TriangleMesh {
    /// Validates indices and areas, labels components by shared vertices
    /// (numbered in order of their lowest triangle), and builds the BVHs.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidParameter {
                    name: "triangles",
                    reason: format!("triangle {i} references vertex {bad} of {}", vertices.len()),
                });
            }
            let area = triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::DegenerateTriangle { area });
            }
        }
        let component_ids = label_components(vertices.len(), &triangles);
        let count = component_ids.iter().map(|c| c + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); count];
        for (t, &c) in component_ids.iter().enumerate() {
            members[c].push(t);
        }
        let bvhs = members
            .into_iter()
            .map(|tris| Bvh::build(tris, &vertices, &triangles))
            .collect();
        Ok(Self {
            vertices,
            triangles,
            component_ids,
            bvhs,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            component_ids: Vec::new(),
            bvhs: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.bvhs.len()
    }

    pub fn component_triangles(&self, component: usize) -> Result<Vec<usize>> {
        if component >= self.component_count() {
            return Err(Error::UnknownComponent(component));
        }
        let mut t = self.bvhs[component].order.clone();
        t.sort_unstable();
        Ok(t)
    }

    pub fn corners(&self, t: usize) -> [&Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [&self.vertices[a], &self.vertices[b], &self.vertices[c]]
    }

    fn triangle_query(&self, t: usize, query: &Point3) -> (f64, [f64; 3], Feature) {
        let [a, b, c] = self.corners(t);
        let (bary, feature) = closest_barycentric(query, a, b, c);
        let p = a * bary[0] + b * bary[1] + c * bary[2];
        ((query - p).norm_squared(), bary, feature)
    }

    fn result(
        &self,
        t: usize,
        query: &Point3,
        bary: [f64; 3],
        feature: Feature,
    ) -> ClosestPointResult {
        let [a, b, c] = self.corners(t);
        let point = a * bary[0] + b * bary[1] + c * bary[2];
        ClosestPointResult {
            point,
            distance: (query - point).norm(),
            component_id: self.component_ids[t],
            feature,
            triangle: t,
            barycentric: bary,
        }
    }

    /// Exact nearest point of one component. Ties go to the lowest
    /// triangle index.
    pub fn closest_point(&self, component: usize, query: &Point3) -> Result<ClosestPointResult> {
        let bvh = self
            .bvhs
            .get(component)
            .ok_or(Error::UnknownComponent(component))?;
        let mut best: Option<(f64, usize, [f64; 3], Feature)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &bvh.nodes[n];
            if let Some((d2, ..)) = best {
                if node.bounds().distance_squared(query) > d2 {
                    continue;
                }
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &bvh.order[start..end] {
                        let (d2, bary, feature) = self.triangle_query(t, query);
                        let better = match best {
                            None => true,
                            Some((bd, bt, ..)) => d2 < bd || (d2 == bd && t < bt),
                        };
                        if better {
                            best = Some((d2, t, bary, feature));
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = bvh.nodes[left].bounds().distance_squared(query);
                    let dr = bvh.nodes[right].bounds().distance_squared(query);
                    // Nearer child is popped first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        let (_, t, bary, feature) = best.ok_or(Error::UnknownComponent(component))?;
        Ok(self.result(t, query, bary, feature))
    }

    /// Linear scan over a component; the reference the BVH must match.
    pub fn closest_point_brute_force(
        &self,
        component: usize,
        query: &Point3,
    ) -> Result<ClosestPointResult> {
        let mut best: Option<(f64, usize, [f64; 3], Feature)> = None;
        for t in self.component_triangles(component)? {
            let (d2, bary, feature) = self.triangle_query(t, query);
            if best.is_none_or(|(bd, ..)| d2 < bd) {
                best = Some((d2, t, bary, feature));
            }
        }
        let (_, t, bary, feature) = best.ok_or(Error::UnknownComponent(component))?;
        Ok(self.result(t, query, bary, feature))
    }

    /// Nearest point on every component, in component order.
    pub fn closest_per_component(&self, query: &Point3) -> Vec<ClosestPointResult> {
        (0..self.component_count())
            .into_par_iter()
            .map(|c| self.closest_point(c, query).expect("component exists"))
            .collect()
    }

    /// Many queries against one component.
    pub fn closest_points(
        &self,
        component: usize,
        queries: &[Point3],
    ) -> Result<Vec<ClosestPointResult>> {
        queries
            .par_iter()
            .map(|q| self.closest_point(component, q))
            .collect()
    }

    /// Wavefront OBJ with one group per component.
    pub fn write_obj<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {:e} {:e} {:e}", v.x, v.y, v.z)?;
        }
        for c in 0..self.component_count() {
            writeln!(out, "g component_{c}")?;
            for t in self.component_triangles(c)? {
                let [a, b, d] = self.triangles[t];
                writeln!(out, "f {} {} {}", a + 1, b + 1, d + 1)?;
            }
        }
        Ok(())
    }

    pub fn map_vertices(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self> {
        Self::new(
            self.vertices.iter().map(f).collect(),
            self.triangles.clone(),
        )
    }
}

pub fn closest_point_on_mesh(
    mesh: &TriangleMesh,
    component: usize,
    query: &Point3,
) -> Result<ClosestPointResult> {
    mesh.closest_point(component, query)
}

/// `h = ½(d² − δ²)` and `∇h = query − p_O` with `p_O` held fixed.
pub fn distance_barrier_value_and_gradient(
    query: &Point3,
    result: &ClosestPointResult,
    delta: f64,
) -> (f64, Point3) {
    let diff = query - result.point;
    (0.5 * (diff.norm_squared() - delta * delta), diff)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn label_components(vertex_count: usize, triangles: &[[usize; 3]]) -> Vec<usize> {
    let mut uf = UnionFind::new(vertex_count);
    for t in triangles {
        uf.union(t[0], t[1]);
        uf.union(t[0], t[2]);
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    triangles
        .iter()
        .map(|t| {
            let root = uf.find(t[0]);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

// Corner k of a cell sits at these unit offsets along (axis0, axis1, axis2).
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    /// Crossing strictly inside the edge from `node` along `axis`.
    Edge { node: usize, axis: usize },
    /// The field equals the iso level (to rounding) at this node.
    Node(usize),
}

/// Marching-cubes isosurface of a 3-D grid field. A node is inside when its
/// value is below `iso`; nodes within rounding of `iso` become mesh
/// vertices. Vertices are shared between cells, numbered in the order cells
/// are visited (last axis fastest), and triangles that collapse below
/// [`MIN_TRIANGLE_AREA`] are dropped.
pub fn extract_boundary_mesh(field: &GridField, iso: f64) -> Result<TriangleMesh> {
    let grid = &field.grid;
    if grid.dim() != 3 {
        return Err(Error::MalformedGrid(format!(
            "isosurface extraction needs a 3-axis grid, got {}",
            grid.dim()
        )));
    }
    let (lo, hi) = field.min_max();
    if !(iso > lo && iso < hi) {
        return Ok(TriangleMesh::empty());
    }
    // Nodes this close to the iso level are treated as lying on the surface,
    // so near-coincident crossings around them weld into one vertex.
    let snap = 1e-12 * iso.abs().max(1.0);
    let n = grid.counts();
    let position = |node: usize| {
        let c = grid.node(node);
        Point3::new(c[0], c[1], c[2])
    };

    let mut index: HashMap<VertexKey, usize> = HashMap::new();
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for i in 0..n[0] - 1 {
        for j in 0..n[1] - 1 {
            for k in 0..n[2] - 1 {
                let nodes: [usize; 8] = std::array::from_fn(|c| {
                    let o = CORNERS[c];
                    grid.flatten(&[i + o[0], j + o[1], k + o[2]])
                });
                let vals: [f64; 8] = std::array::from_fn(|c| field.values[nodes[c]]);
                let case = (0..8).fold(0usize, |acc, c| acc | (((vals[c] < iso) as usize) << c));
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[c0, c1]) in EDGES.iter().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let (inside, outside) = if vals[c0] < iso { (c0, c1) } else { (c1, c0) };
                    let key = if (vals[outside] - iso).abs() <= snap {
                        VertexKey::Node(nodes[outside])
                    } else if (iso - vals[inside]).abs() <= snap {
                        VertexKey::Node(nodes[inside])
                    } else {
                        let (a, b) = if nodes[c0] < nodes[c1] {
                            (c0, c1)
                        } else {
                            (c1, c0)
                        };
                        let axis = (0..3).find(|&d| CORNERS[a][d] != CORNERS[b][d]).unwrap();
                        VertexKey::Edge {
                            node: nodes[a],
                            axis,
                        }
                    };
                    edge_vertex[e] = *index.entry(key).or_insert_with(|| {
                        let (pi, po) = (position(nodes[inside]), position(nodes[outside]));
                        let p = match key {
                            VertexKey::Node(node) => position(node),
                            VertexKey::Edge { .. } => {
                                let t = (iso - vals[inside]) / (vals[outside] - vals[inside]);
                                pi + (po - pi) * t
                            }
                        };
                        vertices.push(p);
                        vertices.len() - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    let t = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[1] as usize],
                        edge_vertex[tri[2] as usize],
                    ];
                    let area = triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
                    if area > MIN_TRIANGLE_AREA {
                        triangles.push(t);
                    }
                }
            }
        }
    }

    // Vertices orphaned by dropped triangles are removed so every vertex is
    // referenced, keeping first-use order.
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::new();
    for t in triangles.iter_mut() {
        for v in t.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = kept.len();
                kept.push(vertices[*v]);
            }
            *v = remap[*v];
        }
    }
    TriangleMesh::new(kept, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridAxis, GridSpec};
    use approx::assert_relative_eq;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    fn cube_grid(lo: f64, hi: f64, n: usize) -> GridSpec {
        GridSpec::new(vec![GridAxis::new(lo, hi, n); 3]).unwrap()
    }

    #[test]
    fn scaling_examples() {
        let cloud = scale_to_unit_cube(&[p(0.0, 0.0, 0.0), p(2.0, 4.0, 8.0)]).unwrap();
        assert_eq!(cloud.points[1], p(1.0, 1.0, 1.0));
        assert_eq!(cloud.scale.metric(), p(0.5, 0.25, 0.125));

        let single = scale_to_unit_cube(&[p(3.0, -1.0, 7.0)]).unwrap();
        assert_eq!(single.points[0], p(0.5, 0.5, 0.5));
        assert_eq!(single.unscaled()[0], p(3.0, -1.0, 7.0));

        assert!(matches!(scale_to_unit_cube(&[]), Err(Error::EmptyCloud)));
    }

    #[test]
    fn triangle_regions() {
        let (a, b, c) = (p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0));
        let face = closest_point_on_triangle(&p(0.25, 0.25, 1.0), &a, &b, &c).unwrap();
        assert_eq!(face.point, p(0.25, 0.25, 0.0));
        assert_eq!(face.distance, 1.0);
        assert_eq!(face.feature, Feature::Face);

        let edge = closest_point_on_triangle(&p(2.0, 2.0, 0.0), &a, &b, &c).unwrap();
        assert_relative_eq!(edge.point, p(0.5, 0.5, 0.0), epsilon = 1e-15);
        assert_relative_eq!(edge.distance, 4.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(edge.feature, Feature::Edge);

        let vertex = closest_point_on_triangle(&p(-1.0, -1.0, 0.0), &a, &b, &c).unwrap();
        assert_eq!(vertex.point, a);
        assert_relative_eq!(vertex.distance, 2f64.sqrt());
        assert_eq!(vertex.feature, Feature::Vertex);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let r = closest_point_on_triangle(
            &p(0.0, 0.0, 1.0),
            &p(0.0, 0.0, 0.0),
            &p(1.0, 1.0, 1.0),
            &p(2.0, 2.0, 2.0),
        );
        assert!(matches!(r, Err(Error::DegenerateTriangle { .. })));
    }

    #[test]
    fn single_triangle_mesh_matches_triangle_query() {
        let v = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0)];
        let mesh = TriangleMesh::new(v.clone(), vec![[0, 1, 2]]).unwrap();
        for q in [p(0.25, 0.25, 1.0), p(2.0, 2.0, 0.0), p(-1.0, -1.0, 0.3)] {
            let a = mesh.closest_point(0, &q).unwrap();
            let b = closest_point_on_triangle(&q, &v[0], &v[1], &v[2]).unwrap();
            assert_eq!(a, b);
        }
        assert!(matches!(
            mesh.closest_point(1, &p(0.0, 0.0, 0.0)),
            Err(Error::UnknownComponent(1))
        ));
    }

    #[test]
    fn linear_field_gives_plane() {
        let field = GridField::from_fn(cube_grid(0.0, 1.0, 3), |x| x[0]).unwrap();
        let mesh = extract_boundary_mesh(&field, 0.5).unwrap();
        assert_eq!(mesh.triangles.len(), 8);
        assert_eq!(mesh.component_count(), 1);
        for v in &mesh.vertices {
            assert!((v.x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn iso_outside_range_gives_empty_mesh() {
        let field = GridField::from_fn(cube_grid(0.0, 1.0, 3), |x| x[0]).unwrap();
        assert!(extract_boundary_mesh(&field, 1.0).unwrap().is_empty());
        assert!(extract_boundary_mesh(&field, -0.1).unwrap().is_empty());
    }

    #[test]
    fn two_blobs_give_two_components() {
        let field = GridField::from_fn(cube_grid(-1.0, 1.0, 21), |x| {
            let d1 = ((x[0] + 0.5).powi(2) + x[1].powi(2) + x[2].powi(2)).sqrt();
            let d2 = ((x[0] - 0.5).powi(2) + x[1].powi(2) + x[2].powi(2)).sqrt();
            d1.min(d2)
        })
        .unwrap();
        let mesh = extract_boundary_mesh(&field, 0.3).unwrap();
        assert_eq!(mesh.component_count(), 2);
        // Component 0 is the one containing the first triangle, which the
        // cell order puts on the −x blob.
        assert!(mesh.vertices[mesh.triangles[0][0]].x < 0.0);
    }

    #[test]
    fn barrier_value_and_gradient() {
        let v = vec![p(0.0, -1.0, -1.0), p(0.0, 1.0, -1.0), p(0.0, 0.0, 1.0)];
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let q = p(1.0, 0.0, 0.0);
        let r = mesh.closest_point(0, &q).unwrap();
        let (h, g) = distance_barrier_value_and_gradient(&q, &r, 0.5);
        assert_relative_eq!(h, 0.375, epsilon = 1e-15);
        assert_relative_eq!(g, p(1.0, 0.0, 0.0), epsilon = 1e-15);
        let (h0, _) = distance_barrier_value_and_gradient(&q, &r, 1.0);
        assert_eq!(h0, 0.0);
    }

    #[test]
    fn obj_groups_by_component() {
        let v = vec![
            p(0.0, 0.0, 0.0),
            p(1.0, 0.0, 0.0),
            p(0.0, 1.0, 0.0),
            p(5.0, 0.0, 0.0),
            p(6.0, 0.0, 0.0),
            p(5.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(v, vec![[3, 4, 5], [0, 1, 2]]).unwrap();
        let mut buf = Vec::new();
        mesh.write_obj(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("g component_0\nf 4 5 6\ng component_1\nf 1 2 3\n"));
    }
}
