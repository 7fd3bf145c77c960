use nalgebra::Matrix3;

use super::fe::{ElementOrder, FeSpace, StrainField};
use super::law::IsotropicLaw;
use super::mesh::CrossSectionMesh;
use crate::error::{Error, Result};
use crate::sparse::{nested_dissection, SaddleFactor, SaddlePoint, SparseRow, SymmetricBuilder};

/// Residual above which a corrector solve is reported as failed.
const RESIDUAL_LIMIT: f64 = 1e-10;
const ND_LEAF: usize = 64;

/// Constrained minimizer of `(a, φ) ↦ ⨍ Q(F + G(a, φ))` where `G(a, φ)` has
/// columns `a e₁, ∂₂φ, ∂₃φ`, subject to `⨍φ = 0` and `⨍(∂₃φ₂ − ∂₂φ₃) = 0`.
#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub a: f64,
    /// Nodal values of φ on the finite element nodes.
    pub phi: Vec<[f64; 3]>,
    /// `G(a, φ)` at the quadrature points.
    pub strain: StrainField,
    /// Relative residual of the constrained optimality system.
    pub residual: f64,
}

impl CorrectorSolution {
    /// `F + G(a, φ)`.
    pub fn relaxed(&self, f: &StrainField) -> StrainField {
        StrainField::combine(&[(1.0, f), (1.0, &self.strain)])
    }
}

/// Factored corrector problem of one mesh and law, reused for every
/// right-hand side.
#[derive(Debug, Clone)]
pub struct CorrectorSystem {
    space: FeSpace,
    law: IsotropicLaw,
    factor: SaddleFactor,
    rows: Vec<SparseRow>,
}

#[inline]
fn lift(g: [f64; 2]) -> [f64; 3] {
    [0.0, g[0], g[1]]
}

impl CorrectorSystem {
    pub fn new(mesh: &CrossSectionMesh, law: IsotropicLaw, order: ElementOrder) -> Result<Self> {
        let space = FeSpace::new(mesh, order);
        let nn = space.n_nodes();
        let n = 3 * nn + 1;
        let a_dof = 3 * nn;
        let nl = space.nl;
        let (lam, mu) = (law.lambda, law.mu);
        let mut b = SymmetricBuilder::with_capacity(n, space.n_triangles() * (3 * nl + 1) * (3 * nl + 1) / 2);
        let mut local = vec![0.0; (3 * nl + 1) * (3 * nl + 1)];
        let ld = 3 * nl + 1;
        for t in 0..space.n_triangles() {
            local.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..space.nq {
                let w = space.weights[t * space.nq + q];
                for ia in 0..nl {
                    let ga = lift(space.grad(t, q, ia));
                    for ib in 0..nl {
                        let gb = lift(space.grad(t, q, ib));
                        let dot = ga[1] * gb[1] + ga[2] * gb[2];
                        for c in 0..3 {
                            for d in 0..3 {
                                let mut v = 0.5 * lam * ga[c] * gb[d] + 0.5 * mu * ga[d] * gb[c];
                                if c == d {
                                    v += 0.5 * mu * dot;
                                }
                                local[(3 * ia + c) * ld + 3 * ib + d] += w * v;
                            }
                        }
                    }
                    for c in 1..3 {
                        let v = w * 0.5 * lam * ga[c];
                        local[(3 * ia + c) * ld + 3 * nl] += v;
                        local[(3 * nl) * ld + 3 * ia + c] += v;
                    }
                }
                local[(3 * nl) * ld + 3 * nl] += w * (0.5 * lam + mu);
            }
            let glob = |i: usize| if i == 3 * nl { a_dof } else { 3 * space.node(t, i / 3) + i % 3 };
            for i in 0..ld {
                for j in 0..ld {
                    b.push(glob(i), glob(j), local[i * ld + j]);
                }
            }
        }

        let mut mean = vec![0.0; nn];
        let mut rot = vec![0.0; 3 * nn];
        for t in 0..space.n_triangles() {
            for q in 0..space.nq {
                let w = space.weights[t * space.nq + q];
                for ia in 0..nl {
                    let node = space.node(t, ia);
                    mean[node] += w * space.values[q * nl + ia];
                    let g = space.grad(t, q, ia);
                    rot[3 * node + 1] += w * g[1];
                    rot[3 * node + 2] -= w * g[0];
                }
            }
        }
        let mut rows = Vec::with_capacity(4);
        for c in 0..3 {
            let mut r = SparseRow::new();
            for (node, &v) in mean.iter().enumerate() {
                r.push(3 * node + c, v);
            }
            rows.push(r);
        }
        let mut r = SparseRow::new();
        for (i, &v) in rot.iter().enumerate() {
            r.push(i, v);
        }
        rows.push(r);

        let node_order = nested_dissection(&space.node_coords, &space.adjacency(), ND_LEAF);
        let mut order: Vec<usize> = node_order.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect();
        order.push(a_dof);
        let problem = SaddlePoint::new(b.build(), rows.clone());
        let factor = problem.factor(Some(&order)).map_err(|e| match e {
            Error::Solver(m) => Error::Config(format!("corrector system could not be factored: {m}")),
            other => other,
        })?;
        Ok(CorrectorSystem { space, law, factor, rows })
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn law(&self) -> &IsotropicLaw {
        &self.law
    }

    /// Number of primal unknowns (three per node plus the stretch `a`).
    pub fn unknowns(&self) -> usize {
        3 * self.space.n_nodes() + 1
    }

    /// Area-averaged pairing `(F, G)_Q = ⨍ (λ/2) tr F tr G + μ sym F · sym G`.
    pub fn inner(&self, f: &StrainField, g: &StrainField) -> f64 {
        f.values
            .iter()
            .zip(&g.values)
            .zip(&self.space.weights)
            .map(|((a, b), w)| w * self.law.pair(a, b))
            .sum()
    }

    /// Values of the constraint functionals (three means and the mean
    /// rotation) at a solution.
    pub fn constraint_values(&self, sol: &CorrectorSolution) -> [f64; 4] {
        let x: Vec<f64> = sol.phi.iter().flatten().copied().chain([sol.a]).collect();
        [self.rows[0].dot(&x), self.rows[1].dot(&x), self.rows[2].dot(&x), self.rows[3].dot(&x)]
    }

    pub fn solve(&self, f: &StrainField) -> Result<CorrectorSolution> {
        let sp = &self.space;
        if f.values.len() != sp.weights.len() {
            return Err(Error::InvalidArgument("strain field does not match the mesh".into()));
        }
        let nn = sp.n_nodes();
        let (lam, mu) = (self.law.lambda, self.law.mu);
        let mut rhs = vec![0.0; 3 * nn + 1];
        for t in 0..sp.n_triangles() {
            for q in 0..sp.nq {
                let k = t * sp.nq + q;
                let fm = &f.values[k];
                let sym = (fm + fm.transpose()) * 0.5;
                let tr = fm.trace();
                let w = sp.weights[k];
                for ia in 0..sp.nl {
                    let g = lift(sp.grad(t, q, ia));
                    let node = sp.node(t, ia);
                    for c in 0..3 {
                        let v = 0.5 * lam * tr * g[c] + mu * (sym[(c, 1)] * g[1] + sym[(c, 2)] * g[2]);
                        rhs[3 * node + c] -= w * v;
                    }
                }
                rhs[3 * nn] -= w * (0.5 * lam * tr + mu * sym[(0, 0)]);
            }
        }
        let sol = self.factor.solve(&rhs, &[0.0; 4])?;
        if sol.report.residual > RESIDUAL_LIMIT {
            return Err(Error::Solver(format!(
                "corrector residual {:.3e} exceeds {RESIDUAL_LIMIT:e}",
                sol.report.residual
            )));
        }
        let x = sol.x;
        let a = x[3 * nn];
        let phi: Vec<[f64; 3]> = (0..nn).map(|i| [x[3 * i], x[3 * i + 1], x[3 * i + 2]]).collect();
        let mut strain = StrainField::zeros(sp);
        for t in 0..sp.n_triangles() {
            for q in 0..sp.nq {
                let mut m = Matrix3::zeros();
                m[(0, 0)] = a;
                for ia in 0..sp.nl {
                    let g = sp.grad(t, q, ia);
                    let p = &phi[sp.node(t, ia)];
                    for c in 0..3 {
                        m[(c, 1)] += p[c] * g[0];
                        m[(c, 2)] += p[c] * g[1];
                    }
                }
                strain.values[t * sp.nq + q] = m;
            }
        }
        Ok(CorrectorSolution { a, phi, strain, residual: sol.report.residual })
    }
}

/// One-off corrector solve; see [`CorrectorSystem`] for repeated solves.
pub fn solve_corrector(mesh: &CrossSectionMesh, law: IsotropicLaw, order: ElementOrder, f: impl Fn([f64; 2], usize) -> Matrix3<f64>) -> Result<(CorrectorSystem, StrainField, CorrectorSolution)> {
    let sys = CorrectorSystem::new(mesh, law, order)?;
    let field = StrainField::from_fn(sys.space(), f);
    let sol = sys.solve(&field)?;
    Ok((sys, field, sol))
}

/// Warping function of the cross-section and its torsion constant.
#[derive(Debug, Clone)]
pub struct WarpingSolution {
    pub space: FeSpace,
    /// Nodal values of α.
    pub alpha: Vec<f64>,
    /// `c_S = ⨍ |∇α + (x₃, −x₂)/√2|²`.
    pub c_s: f64,
    /// `(∫ α²)^{1/2}`.
    pub l2_norm: f64,
    pub residual: f64,
}

/// Minimizes `⨍|∇α + (x₃, −x₂)/√2|²` subject to `∫α = ∫∂₂α = ∫∂₃α = 0`.
pub fn solve_warping(mesh: &CrossSectionMesh, order: ElementOrder) -> Result<WarpingSolution> {
    let sp = FeSpace::new(mesh, order);
    let nn = sp.n_nodes();
    let nl = sp.nl;
    let twist = |p: [f64; 2]| [p[1] * std::f64::consts::FRAC_1_SQRT_2, -p[0] * std::f64::consts::FRAC_1_SQRT_2];
    let mut b = SymmetricBuilder::with_capacity(nn, sp.n_triangles() * nl * nl);
    let mut rhs = vec![0.0; nn];
    let mut rows = vec![vec![0.0; nn]; 3];
    for t in 0..sp.n_triangles() {
        for q in 0..sp.nq {
            let k = t * sp.nq + q;
            let w = sp.weights[k];
            let v = twist(sp.points[k]);
            for ia in 0..nl {
                let ga = sp.grad(t, q, ia);
                let na = sp.node(t, ia);
                for ib in 0..nl {
                    let gb = sp.grad(t, q, ib);
                    b.push(na, sp.node(t, ib), w * (ga[0] * gb[0] + ga[1] * gb[1]));
                }
                rhs[na] -= w * (ga[0] * v[0] + ga[1] * v[1]);
                rows[0][na] += w * sp.values[q * nl + ia];
                rows[1][na] += w * ga[0];
                rows[2][na] += w * ga[1];
            }
        }
    }
    let rows: Vec<SparseRow> = rows
        .into_iter()
        .map(|r| {
            let mut s = SparseRow::new();
            for (i, v) in r.into_iter().enumerate() {
                s.push(i, v);
            }
            s
        })
        .collect();
    let order_nodes = nested_dissection(&sp.node_coords, &sp.adjacency(), ND_LEAF);
    let sol = SaddlePoint::new(b.build(), rows).factor(Some(&order_nodes))?.solve(&rhs, &[0.0; 3])?;
    if sol.report.residual > RESIDUAL_LIMIT {
        return Err(Error::Solver(format!("warping residual {:.3e} exceeds {RESIDUAL_LIMIT:e}", sol.report.residual)));
    }
    let alpha = sol.x;
    let mut c_s = 0.0;
    for t in 0..sp.n_triangles() {
        for q in 0..sp.nq {
            let k = t * sp.nq + q;
            let v = twist(sp.points[k]);
            let mut g = v;
            for ia in 0..nl {
                let d = sp.grad(t, q, ia);
                let al = alpha[sp.node(t, ia)];
                g[0] += al * d[0];
                g[1] += al * d[1];
            }
            c_s += sp.weights[k] * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    let l2_norm = (sp.mean_square(mesh, &alpha) * sp.area).sqrt();
    Ok(WarpingSolution { space: sp, alpha, c_s, l2_norm, residual: sol.report.residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dev_basis, skew_basis};

    fn law() -> IsotropicLaw {
        IsotropicLaw::new(1000.0, 1.0).unwrap()
    }

    fn sym_kx(i: usize) -> impl Fn([f64; 2], usize) -> Matrix3<f64> {
        move |p, _| {
            let v = skew_basis(i) * nalgebra::Vector3::new(0.0, p[0], p[1]);
            let mut m = Matrix3::zeros();
            m.set_column(0, &v);
            (m + m.transpose()) * 0.5
        }
    }

    #[test]
    fn zero_load_gives_zero_corrector() {
        let mesh = CrossSectionMesh::disc_halfplane(4).unwrap();
        let (_, _, sol) = solve_corrector(&mesh, law(), ElementOrder::P1, |_, _| Matrix3::zeros()).unwrap();
        assert_eq!(sol.a, 0.0);
        assert!(sol.phi.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bending_corrector_matches_closed_form() {
        // φ₂ = −λ/(4√2(λ+μ)) (0, x₂² − x₃², 2x₂x₃) + const.
        let mesh = CrossSectionMesh::disc_halfplane(8).unwrap();
        let l = law();
        let (sys, _, sol) = solve_corrector(&mesh, l, ElementOrder::P2, sym_kx(1)).unwrap();
        let c = -l.lambda / (4.0 * 2f64.sqrt() * (l.lambda + l.mu));
        let sp = sys.space();
        let exact: Vec<[f64; 3]> =
            sp.node_coords.iter().map(|p| [0.0, c * (p[0] * p[0] - p[1] * p[1]), c * 2.0 * p[0] * p[1]]).collect();
        // Remove the mean so both satisfy the same normalization.
        let mut mean = [0.0; 3];
        for t in 0..sp.n_triangles() {
            for q in 0..sp.nq {
                let w = sp.weights[t * sp.nq + q];
                for a in 0..sp.nl {
                    for d in 0..3 {
                        mean[d] += w * sp.values[q * sp.nl + a] * exact[sp.node(t, a)][d];
                    }
                }
            }
        }
        let mut err = 0.0f64;
        for (p, e) in sol.phi.iter().zip(&exact) {
            for d in 0..3 {
                err = err.max((p[d] - (e[d] - mean[d])).abs());
            }
        }
        assert!(err < 2e-3, "max nodal error {err}");
        let cv = sys.constraint_values(&sol);
        assert!(cv.iter().all(|v| v.abs() < 1e-12), "{cv:?}");
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn nematic_load_is_relaxed() {
        let mesh = CrossSectionMesh::disc_halfplane(6).unwrap();
        let sys = CorrectorSystem::new(&mesh, law(), ElementOrder::P1).unwrap();
        let f = StrainField::from_fn(sys.space(), |_, t| if mesh.in_s0()[t] { dev_basis(3) } else { Matrix3::zeros() });
        let sol = sys.solve(&f).unwrap();
        let relaxed = sol.relaxed(&f);
        assert!(sys.inner(&relaxed, &relaxed) < sys.inner(&f, &f) - 1e-6);
    }

    #[test]
    fn warping_on_disc_vanishes() {
        let mesh = CrossSectionMesh::disc_halfplane(8).unwrap();
        let w = solve_warping(&mesh, ElementOrder::P2).unwrap();
        assert!(w.l2_norm < 1e-3, "{}", w.l2_norm);
        let bound = 0.5 * (mesh.second_moments()[0] + mesh.second_moments()[1]) / mesh.area();
        assert!(w.c_s <= bound + 1e-15);
        assert!((w.c_s - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 2e-3);
    }
}
