use std::collections::HashMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::mesh::CrossSectionMesh;

/// Polynomial degree of the triangle elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ElementOrder {
    P1,
    #[default]
    P2,
}

impl ElementOrder {
    pub fn degree(self) -> u8 {
        match self {
            ElementOrder::P1 => 1,
            ElementOrder::P2 => 2,
        }
    }

    fn local_nodes(self) -> usize {
        match self {
            ElementOrder::P1 => 3,
            ElementOrder::P2 => 6,
        }
    }
}

impl std::str::FromStr for ElementOrder {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "1" => Ok(ElementOrder::P1),
            "p2" | "2" => Ok(ElementOrder::P2),
            _ => Err(crate::Error::InvalidArgument(format!("unknown element order '{s}'"))),
        }
    }
}

/// Degree-2 rule (barycentric points, weights summing to one).
const RULE2: [([f64; 2], f64); 3] = [
    ([1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

/// Degree-4 rule, used for L² norms of P2 fields.
const RULE4: [([f64; 2], f64); 6] = [
    ([0.445_948_490_915_965, 0.445_948_490_915_965], 0.223_381_589_678_011),
    ([0.445_948_490_915_965, 0.108_103_018_168_070], 0.223_381_589_678_011),
    ([0.108_103_018_168_070, 0.445_948_490_915_965], 0.223_381_589_678_011),
    ([0.091_576_213_509_771, 0.091_576_213_509_771], 0.109_951_743_655_322),
    ([0.091_576_213_509_771, 0.816_847_572_980_459], 0.109_951_743_655_322),
    ([0.816_847_572_980_459, 0.091_576_213_509_771], 0.109_951_743_655_322),
];

/// Shape values and reference gradients at reference point `(ξ, η)`.
fn shape(order: ElementOrder, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let l = [1.0 - xi - eta, xi, eta];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    match order {
        ElementOrder::P1 => (l.to_vec(), dl.to_vec()),
        ElementOrder::P2 => {
            let mut n = Vec::with_capacity(6);
            let mut g = Vec::with_capacity(6);
            for i in 0..3 {
                n.push(l[i] * (2.0 * l[i] - 1.0));
                g.push([(4.0 * l[i] - 1.0) * dl[i][0], (4.0 * l[i] - 1.0) * dl[i][1]]);
            }
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                n.push(4.0 * l[a] * l[b]);
                g.push([4.0 * (l[a] * dl[b][0] + l[b] * dl[a][0]), 4.0 * (l[a] * dl[b][1] + l[b] * dl[a][1])]);
            }
            (n, g)
        }
    }
}

/// Scalar Lagrange space on a cross-section mesh together with the
/// quadrature data of the degree-2 rule. Quadrature weights include the
/// `1/|S|` of the area average.
#[derive(Debug, Clone)]
pub struct FeSpace {
    pub order: ElementOrder,
    pub node_coords: Vec<[f64; 2]>,
    /// `elem_nodes[t * nl + a]`: global node of local function `a` in triangle `t`.
    pub elem_nodes: Vec<usize>,
    pub nl: usize,
    pub nq: usize,
    /// Area-average weight per (triangle, point).
    pub weights: Vec<f64>,
    /// Physical quadrature points per (triangle, point).
    pub points: Vec<[f64; 2]>,
    /// Shape values per (point, local function); identical on every triangle.
    pub values: Vec<f64>,
    /// Physical gradients per (triangle, point, local function).
    pub grads: Vec<[f64; 2]>,
    pub area: f64,
}

impl FeSpace {
    pub fn new(mesh: &CrossSectionMesh, order: ElementOrder) -> Self {
        let nv = mesh.vertices().len();
        let nl = order.local_nodes();
        let mut node_coords = mesh.vertices().to_vec();
        let mut elem_nodes = Vec::with_capacity(nl * mesh.n_triangles());
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in mesh.triangles() {
            elem_nodes.extend_from_slice(t);
            if order == ElementOrder::P2 {
                for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                    let key = (t[a].min(t[b]), t[a].max(t[b]));
                    let next = nv + edges.len();
                    let id = *edges.entry(key).or_insert(next);
                    if id == next {
                        let (p, q) = (mesh.vertices()[key.0], mesh.vertices()[key.1]);
                        node_coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    }
                    elem_nodes.push(id);
                }
            }
        }
        let nq = RULE2.len();
        let area = mesh.area();
        let mut values = Vec::with_capacity(nq * nl);
        let mut ref_grads = Vec::with_capacity(nq * nl);
        for (p, _) in RULE2 {
            let (n, g) = shape(order, p[0], p[1]);
            values.extend(n);
            ref_grads.extend(g);
        }
        let nt = mesh.n_triangles();
        let mut weights = Vec::with_capacity(nt * nq);
        let mut points = Vec::with_capacity(nt * nq);
        let mut grads = Vec::with_capacity(nt * nq * nl);
        for t in 0..nt {
            let [a, b, c] = mesh.corners(t);
            let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            // Inverse-transpose maps reference gradients to physical ones.
            let jit = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
            for (q, (p, w)) in RULE2.iter().enumerate() {
                weights.push(w * mesh.areas()[t] / area);
                points.push([a[0] + p[0] * j[0][0] + p[1] * j[0][1], a[1] + p[0] * j[1][0] + p[1] * j[1][1]]);
                for l in 0..nl {
                    let g = ref_grads[q * nl + l];
                    grads.push([jit[0][0] * g[0] + jit[0][1] * g[1], jit[1][0] * g[0] + jit[1][1] * g[1]]);
                }
            }
        }
        FeSpace { order, node_coords, elem_nodes, nl, nq, weights, points, values, grads, area }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.weights.len() / self.nq
    }

    #[inline]
    pub fn node(&self, t: usize, a: usize) -> usize {
        self.elem_nodes[t * self.nl + a]
    }

    #[inline]
    pub fn grad(&self, t: usize, q: usize, a: usize) -> [f64; 2] {
        self.grads[(t * self.nq + q) * self.nl + a]
    }

    /// Node adjacency through shared triangles.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for t in 0..self.n_triangles() {
            for a in 0..self.nl {
                for b in 0..self.nl {
                    if a != b {
                        adj[self.node(t, a)].push(self.node(t, b));
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// `⨍ f²` of a nodal scalar field, with a degree-4 rule.
    pub fn mean_square(&self, mesh: &CrossSectionMesh, nodal: &[f64]) -> f64 {
        let shapes: Vec<Vec<f64>> = RULE4.iter().map(|(p, _)| shape(self.order, p[0], p[1]).0).collect();
        let mut acc = 0.0;
        for t in 0..self.n_triangles() {
            for (q, (_, w)) in RULE4.iter().enumerate() {
                let v: f64 = (0..self.nl).map(|a| shapes[q][a] * nodal[self.node(t, a)]).sum();
                acc += w * mesh.areas()[t] * v * v;
            }
        }
        acc / self.area
    }
}

/// A matrix field sampled at the quadrature points of an [`FeSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    pub values: Vec<Matrix3<f64>>,
}

impl StrainField {
    pub fn zeros(space: &FeSpace) -> Self {
        StrainField { values: vec![Matrix3::zeros(); space.weights.len()] }
    }

    /// Samples `f(point, triangle)` at every quadrature point.
    pub fn from_fn(space: &FeSpace, f: impl Fn([f64; 2], usize) -> Matrix3<f64>) -> Self {
        let values = space.points.iter().enumerate().map(|(k, &p)| f(p, k / space.nq)).collect();
        StrainField { values }
    }

    /// `Σ c_k F_k`.
    pub fn combine(terms: &[(f64, &StrainField)]) -> Self {
        let n = terms[0].1.values.len();
        let values = (0..n)
            .map(|k| terms.iter().fold(Matrix3::zeros(), |acc, (c, f)| acc + f.values[k] * *c))
            .collect();
        StrainField { values }
    }
}
