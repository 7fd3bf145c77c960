//! One-dimensional finite elements on a uniform mesh of `[0, L]`: C¹ Hermite
//! cubics for the centerline, continuous P1 for frame vector and director,
//! Gauss quadrature and the metric matrices of the gradient flow.
//!
//! Flat dof layout: Hermite node `i` owns `6i + c` (value) and `6i + 3 + c`
//! (derivative) for component `c`; P1 node `i` owns `3i + c`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{SymmetricBuilder, UpperCsc};

/// Uniform partition of `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    length: f64,
    nodes: Vec<f64>,
}

impl Mesh1D {
    pub fn uniform(length: f64, n_elements: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() || n_elements == 0 {
            return Err(Error::InvalidArgument(format!(
                "mesh needs L > 0 and at least one element (L = {length}, n = {n_elements})"
            )));
        }
        let h = length / n_elements as f64;
        let mut nodes: Vec<f64> = (0..=n_elements).map(|i| i as f64 * h).collect();
        nodes[n_elements] = length;
        Ok(Mesh1D { length, nodes })
    }

    /// Mesh with element size closest to `h` that divides `L` evenly.
    pub fn with_spacing(length: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("mesh size must be positive, got {h}")));
        }
        Self::uniform(length, ((length / h).round() as usize).max(1))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn h(&self) -> f64 {
        self.length / self.n_elements() as f64
    }

    /// Element containing `x` and the local coordinate `s ∈ [0, 1]`. Interior
    /// nodes belong to the element on their left.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let tol = 1e-12 * self.length;
        if !(x >= -tol && x <= self.length + tol) {
            return Err(Error::InvalidArgument(format!("x = {x} outside [0, {}]", self.length)));
        }
        let ne = self.n_elements();
        let t = x / self.h();
        let e = ((t.ceil() as isize) - 1).clamp(0, ne as isize - 1) as usize;
        let s = ((x - self.nodes[e]) / self.h()).clamp(0.0, 1.0);
        Ok((e, s))
    }

    /// Trapezoid weights: `∫ I[g] = Σ w_i g(x_i)` for the P1 interpolant.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n_nodes()];
        w[0] = 0.5 * h;
        *w.last_mut().unwrap() = 0.5 * h;
        w
    }
}

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule with `n` points (1..=5), exact up to degree `2n − 1`.
pub fn gauss_quadrature(n: usize) -> Result<GaussRule> {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[0.555_555_555_555_555_6, 0.888_888_888_888_888_9, 0.555_555_555_555_555_6],
        ),
        4 => (
            &[-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6],
            &[0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9],
        ),
        5 => (
            &[
                -0.906_179_845_938_664,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664,
            ],
            &[
                0.236_926_885_056_189_1,
                0.478_628_670_499_366_5,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_5,
                0.236_926_885_056_189_1,
            ],
        ),
        _ => return Err(Error::InvalidArgument(format!("no {n}-point Gauss rule"))),
    };
    Ok(GaussRule {
        points: x.iter().map(|p| 0.5 * (p + 1.0)).collect(),
        weights: w.iter().map(|v| 0.5 * v).collect(),
    })
}

/// The rule used for every non-interpolated integrand.
pub fn default_rule() -> GaussRule {
    gauss_quadrature(4).expect("4-point rule exists")
}

/// Hermite shape functions on an element of size `h` at local `s`: row `d` is
/// the `d`-th x-derivative of (value@left, slope@left, value@right, slope@right).
pub fn hermite_shape(s: f64, h: f64) -> [[f64; 4]; 3] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        [1.0 - 3.0 * s2 + 2.0 * s3, h * (s - 2.0 * s2 + s3), 3.0 * s2 - 2.0 * s3, h * (s3 - s2)],
        [(6.0 * s2 - 6.0 * s) / h, 1.0 - 4.0 * s + 3.0 * s2, (6.0 * s - 6.0 * s2) / h, 3.0 * s2 - 2.0 * s],
        [(12.0 * s - 6.0) / (h * h), (6.0 * s - 4.0) / h, (6.0 - 12.0 * s) / (h * h), (6.0 * s - 2.0) / h],
    ]
}

/// P1 shape functions: row 0 values, row 1 x-derivatives.
pub fn p1_shape(s: f64, h: f64) -> [[f64; 2]; 2] {
    [[1.0 - s, s], [-1.0 / h, 1.0 / h]]
}

/// Scalar Hermite dof (without component offset) of local function `a` on element `e`.
#[inline]
pub fn hermite_dof(e: usize, a: usize) -> usize {
    6 * (e + a / 2) + 3 * (a % 2)
}

/// C¹ piecewise cubic vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteField {
    pub values: Vec<Vector3<f64>>,
    pub derivs: Vec<Vector3<f64>>,
}

impl HermiteField {
    pub fn interpolate(mesh: &Mesh1D, f: impl Fn(f64) -> Vector3<f64>, df: impl Fn(f64) -> Vector3<f64>) -> Self {
        HermiteField {
            values: mesh.nodes().iter().map(|&x| f(x)).collect(),
            derivs: mesh.nodes().iter().map(|&x| df(x)).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * self.n_nodes());
        for (v, d) in self.values.iter().zip(&self.derivs) {
            out.extend(v.iter());
            out.extend(d.iter());
        }
        out
    }

    pub fn from_dofs(dofs: &[f64]) -> Self {
        let n = dofs.len() / 6;
        HermiteField {
            values: (0..n).map(|i| Vector3::from_column_slice(&dofs[6 * i..6 * i + 3])).collect(),
            derivs: (0..n).map(|i| Vector3::from_column_slice(&dofs[6 * i + 3..6 * i + 6])).collect(),
        }
    }

    /// Local coefficient of shape function `a` on element `e`.
    #[inline]
    pub fn local(&self, e: usize, a: usize) -> &Vector3<f64> {
        if a % 2 == 0 {
            &self.values[e + a / 2]
        } else {
            &self.derivs[e + a / 2]
        }
    }

    /// Value and first two derivatives on element `e` at local `s`.
    pub fn eval_local(&self, mesh: &Mesh1D, e: usize, s: f64) -> [Vector3<f64>; 3] {
        let sh = hermite_shape(s, mesh.h());
        let mut out = [Vector3::zeros(); 3];
        for (d, row) in sh.iter().enumerate() {
            for (a, &w) in row.iter().enumerate() {
                out[d] += self.local(e, a) * w;
            }
        }
        out
    }

    /// Derivative of order 0, 1 or 2 at `x`.
    pub fn evaluate(&self, mesh: &Mesh1D, x: f64, order: usize) -> Result<Vector3<f64>> {
        if order > 2 {
            return Err(Error::InvalidArgument(format!("Hermite fields have no derivative of order {order}")));
        }
        self.check(mesh)?;
        let (e, s) = mesh.locate(x)?;
        Ok(self.eval_local(mesh, e, s)[order])
    }

    fn check(&self, mesh: &Mesh1D) -> Result<()> {
        if self.values.len() != mesh.n_nodes() || self.derivs.len() != mesh.n_nodes() {
            return Err(Error::InvalidArgument("field does not match mesh".into()));
        }
        Ok(())
    }
}

/// Continuous piecewise linear vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Field {
    pub values: Vec<Vector3<f64>>,
}

impl P1Field {
    pub fn interpolate(mesh: &Mesh1D, f: impl Fn(f64) -> Vector3<f64>) -> Self {
        P1Field { values: mesh.nodes().iter().map(|&x| f(x)).collect() }
    }

    pub fn constant(mesh: &Mesh1D, v: Vector3<f64>) -> Self {
        P1Field { values: vec![v; mesh.n_nodes()] }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn to_dofs(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn from_dofs(dofs: &[f64]) -> Self {
        P1Field { values: dofs.chunks_exact(3).map(Vector3::from_column_slice).collect() }
    }

    /// Value and derivative on element `e` at local `s`.
    pub fn eval_local(&self, mesh: &Mesh1D, e: usize, s: f64) -> [Vector3<f64>; 2] {
        let (a, b) = (&self.values[e], &self.values[e + 1]);
        [a * (1.0 - s) + b * s, (b - a) / mesh.h()]
    }

    pub fn evaluate(&self, mesh: &Mesh1D, x: f64, order: usize) -> Result<Vector3<f64>> {
        if order > 1 {
            return Err(Error::InvalidArgument(format!("P1 fields have no derivative of order {order}")));
        }
        if self.values.len() != mesh.n_nodes() {
            return Err(Error::InvalidArgument("field does not match mesh".into()));
        }
        let (e, s) = mesh.locate(x)?;
        Ok(self.eval_local(mesh, e, s)[order])
    }
}

/// Scalar nodal interpolant `I[g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct P1Scalar {
    pub values: Vec<f64>,
}

/// Wraps one sample per node as its piecewise linear interpolant.
pub fn nodal_interpolation_p1(mesh: &Mesh1D, samples: Vec<f64>) -> Result<P1Scalar> {
    if samples.len() != mesh.n_nodes() {
        return Err(Error::InvalidArgument("need one sample per node".into()));
    }
    Ok(P1Scalar { values: samples })
}

impl P1Scalar {
    pub fn evaluate(&self, mesh: &Mesh1D, x: f64) -> Result<f64> {
        let (e, s) = mesh.locate(x)?;
        Ok(self.values[e] * (1.0 - s) + self.values[e + 1] * s)
    }

    /// Exact integral, i.e. the trapezoid sum of the samples.
    pub fn integral(&self, mesh: &Mesh1D) -> f64 {
        mesh.trapezoid_weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
}

/// Adds `scale·∫ D^d u · D^d v` over Hermite fields (all three components).
pub fn add_hermite_form(b: &mut SymmetricBuilder, mesh: &Mesh1D, order: usize, scale: f64) {
    let rule = default_rule();
    let h = mesh.h();
    let mut local = [[0.0; 4]; 4];
    for (&s, &w) in rule.points.iter().zip(&rule.weights) {
        let sh = hermite_shape(s, h)[order];
        for a in 0..4 {
            for c in 0..4 {
                local[a][c] += w * h * sh[a] * sh[c];
            }
        }
    }
    for e in 0..mesh.n_elements() {
        for a in 0..4 {
            for c in 0..4 {
                for comp in 0..3 {
                    b.push(hermite_dof(e, a) + comp, hermite_dof(e, c) + comp, scale * local[a][c]);
                }
            }
        }
    }
}

/// Adds `scale·∫ D^d u · D^d v` over P1 fields (all three components).
pub fn add_p1_form(b: &mut SymmetricBuilder, mesh: &Mesh1D, order: usize, scale: f64) {
    let h = mesh.h();
    let local = if order == 0 {
        [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
    } else {
        [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
    };
    for e in 0..mesh.n_elements() {
        for a in 0..2 {
            for c in 0..2 {
                for comp in 0..3 {
                    b.push(3 * (e + a) + comp, 3 * (e + c) + comp, scale * local[a][c]);
                }
            }
        }
    }
}

/// Metrics of the gradient flow: `(u,v)_Y = (u,v) + h(u'',v'')` on Hermite
/// fields and `(u,v)_X = (u,v)_Z = (u,v) + h(u',v')` on P1 fields.
#[derive(Debug, Clone)]
pub struct InnerProducts {
    pub y: UpperCsc,
    pub x: UpperCsc,
}

impl InnerProducts {
    pub fn z(&self) -> &UpperCsc {
        &self.x
    }
}

pub fn assemble_inner_products(mesh: &Mesh1D) -> InnerProducts {
    InnerProducts { y: hermite_metric(mesh, 1.0).build(), x: p1_metric(mesh, 1.0).build() }
}

/// `scale·Y` as a builder, ready for further implicit terms.
pub fn hermite_metric(mesh: &Mesh1D, scale: f64) -> SymmetricBuilder {
    let mut b = SymmetricBuilder::new(6 * mesh.n_nodes());
    add_hermite_form(&mut b, mesh, 0, scale);
    add_hermite_form(&mut b, mesh, 2, scale * mesh.h());
    b
}

/// `scale·X` as a builder, ready for further implicit terms.
pub fn p1_metric(mesh: &Mesh1D, scale: f64) -> SymmetricBuilder {
    let mut b = SymmetricBuilder::new(3 * mesh.n_nodes());
    add_p1_form(&mut b, mesh, 0, scale);
    add_p1_form(&mut b, mesh, 1, scale * mesh.h());
    b
}
