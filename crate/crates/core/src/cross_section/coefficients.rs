use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Matrix5, SMatrix, Vector3, Vector5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corrector::{solve_warping, CorrectorSystem};
use super::fe::{ElementOrder, StrainField};
use super::law::IsotropicLaw;
use super::mesh::{CrossSectionMesh, MeshStats};
use crate::error::{Error, Result};
use crate::tensor::{dev_basis, skew_basis};

/// Rod coefficients of a cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCoefficients {
    pub law: IsotropicLaw,
    /// Twist and the two bending moduli.
    pub q: [f64; 3],
    /// Full `(Ψ_i, Ψ_j)_Q`; diagonal for isotropic laws on centered sections.
    pub qmatrix: Matrix3<f64>,
    /// Skew coordinates of `K_pre(U)` are `M u`.
    pub m: SMatrix<f64, 3, 5>,
    pub eres: Matrix5<f64>,
    pub c_s: Option<f64>,
    pub alpha_s_l2: Option<f64>,
    /// Largest `|(Φ_j, Ψ_i)_Q|` relative to `‖ℚ‖`; zero by construction.
    pub orthogonality_defect: f64,
    pub mesh_stats: Option<MeshStats>,
    pub source: String,
}

/// `F = sym(K_i x̄ ⊗ e₁)` with `x̄ = (0, x₂, x₃)`.
fn bending_load(i: usize, p: [f64; 2]) -> Matrix3<f64> {
    let v = skew_basis(i) * Vector3::new(0.0, p[0], p[1]);
    let mut m = Matrix3::zeros();
    m.set_column(0, &v);
    (m + m.transpose()) * 0.5
}

fn nematic_load(mesh: &CrossSectionMesh, j: usize, t: usize) -> Matrix3<f64> {
    if mesh.in_s0()[t] {
        dev_basis(j)
    } else {
        Matrix3::zeros()
    }
}

/// Coefficients with quadratic elements.
pub fn assemble_coefficients(mesh: &CrossSectionMesh, law: IsotropicLaw) -> Result<EffectiveCoefficients> {
    let system = CorrectorSystem::new(mesh, law, ElementOrder::P2)?;
    assemble_coefficients_with(&system, mesh)
}

/// Solves the three bending and five nematic corrector problems on a
/// factored system and assembles `ℚ`, `M = ℚ⁻¹𝕌` and `E_res`, plus the
/// warping diagnostics.
pub fn assemble_coefficients_with(system: &CorrectorSystem, mesh: &CrossSectionMesh) -> Result<EffectiveCoefficients> {
    let sp = system.space();
    if sp.n_triangles() != mesh.n_triangles() {
        return Err(Error::InvalidArgument("corrector system belongs to another mesh".into()));
    }
    let loads: Vec<StrainField> = (0..8)
        .map(|k| {
            if k < 3 {
                StrainField::from_fn(sp, |p, _| bending_load(k, p))
            } else {
                StrainField::from_fn(sp, |_, t| nematic_load(mesh, k - 3, t))
            }
        })
        .collect();
    let relaxed: Vec<StrainField> = loads
        .par_iter()
        .map(|f| system.solve(f).map(|s| s.relaxed(f)))
        .collect::<Result<_>>()?;
    let (psi, ur) = relaxed.split_at(3);

    let qmatrix = Matrix3::from_fn(|i, j| system.inner(&psi[i], &psi[j]));
    let qm = (qmatrix + qmatrix.transpose()) * 0.5;
    let chol = qm.cholesky().ok_or_else(|| Error::Config("bending matrix is not positive definite".into()))?;
    let umat = SMatrix::<f64, 3, 5>::from_fn(|i, j| system.inner(&loads[3 + j], &psi[i]));
    let m = chol.solve(&umat);

    let phi: Vec<StrainField> = (0..5)
        .map(|j| {
            let mut terms: Vec<(f64, &StrainField)> = vec![(1.0, &ur[j])];
            for i in 0..3 {
                terms.push((-m[(i, j)], &psi[i]));
            }
            StrainField::combine(&terms)
        })
        .collect();
    let eres = Matrix5::from_fn(|i, j| system.inner(&phi[i], &phi[j]));
    let eres = (eres + eres.transpose()) * 0.5;
    let scale = qm.norm().max(f64::MIN_POSITIVE);
    let mut defect = 0.0f64;
    for f in &phi {
        for p in psi {
            defect = defect.max(system.inner(f, p).abs() / scale);
        }
    }

    let warping = solve_warping(mesh, sp.order)?;
    let mut stats = mesh.stats();
    stats.element_order = Some(sp.order.degree());
    stats.unknowns = Some(system.unknowns());
    Ok(EffectiveCoefficients {
        law: *system.law(),
        q: [qm[(0, 0)], qm[(1, 1)], qm[(2, 2)]],
        qmatrix: qm,
        m,
        eres,
        c_s: Some(warping.c_s),
        alpha_s_l2: Some(warping.l2_norm),
        orthogonality_defect: defect,
        mesh_stats: Some(stats),
        source: format!("computed: P{} corrector solves on {} triangles", sp.order.degree(), mesh.n_triangles()),
    })
}

/// Minimum over the corrector space of `⨍ Q(sym(K x̄⊗e₁) + (r̄/2) 1_{S₀} U + G(a, φ))`
/// for `K = Σ k_i K_i` and `U = Σ 2u_j U_j`, by a single direct solve.
pub fn relaxed_cell_energy(system: &CorrectorSystem, mesh: &CrossSectionMesh, k: &Vector3<f64>, u: &Vector5<f64>, rbar: f64) -> Result<f64> {
    let kmat = (0..3).fold(Matrix3::zeros(), |acc, i| acc + skew_basis(i) * k[i]);
    let umat = (0..5).fold(Matrix3::zeros(), |acc, j| acc + dev_basis(j) * (2.0 * u[j]));
    let f = StrainField::from_fn(system.space(), |p, t| {
        let v = kmat * Vector3::new(0.0, p[0], p[1]);
        let mut g = Matrix3::zeros();
        g.set_column(0, &v);
        let mut out = (g + g.transpose()) * 0.5;
        if mesh.in_s0()[t] {
            out += umat * (0.5 * rbar);
        }
        out
    });
    let sol = system.solve(&f)?;
    let r = sol.relaxed(&f);
    Ok(system.inner(&r, &r))
}

/// Closed-form coefficients of the unit-area disc with half-disc subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscClosedForm {
    pub q: [f64; 3],
    pub m: SMatrix<f64, 3, 5>,
    pub c_s: f64,
}

pub fn closed_form_disc(law: IsotropicLaw) -> DiscClosedForm {
    let (l, mu) = (law.lambda, law.mu);
    let qb = mu * (3.0 * l + 2.0 * mu) / (16.0 * PI * (l + mu));
    let mut m = SMatrix::<f64, 3, 5>::zeros();
    m[(0, 1)] = 8.0 / (3.0 * PI.sqrt());
    m[(2, 3)] = 16.0 / (3.0 * (3.0 * PI).sqrt());
    DiscClosedForm { q: [mu / (8.0 * PI), qb, qb], m, c_s: 1.0 / (4.0 * PI) }
}

/// `q₁ = (μ/2) c_S` from the warping problem and `q₂, q₃` from second moments.
pub fn qbar_general_isotropic(mesh: &CrossSectionMesh, law: IsotropicLaw, order: ElementOrder) -> Result<[f64; 3]> {
    let w = solve_warping(mesh, order)?;
    let [s22, s33, _] = mesh.second_moments();
    let area = mesh.area();
    let c = law.mu * (3.0 * law.lambda + 2.0 * law.mu) / (law.lambda + law.mu);
    Ok([0.5 * law.mu * w.c_s, c * s22 / area / 4.0, c * s33 / area / 4.0])
}

/// Tabulated residual matrix of the unit-area disc with half-disc
/// subdomain at `λ = 1000, μ = 1`, as used by the presets. The corrector
/// computation of this crate converges to a different matrix; see the
/// README.
pub fn reference_disc_halfplane_eres() -> Matrix5<f64> {
    let mut e = Matrix5::from_diagonal(&Vector5::new(0.95, 10.77, 0.18, 34.94, 4.9));
    e[(1, 2)] = -0.01;
    e[(2, 1)] = -0.01;
    e * 1e-2
}

impl EffectiveCoefficients {
    /// Closed-form `q` and `M` of the disc with the tabulated residual matrix.
    pub fn disc_halfplane_reference() -> Self {
        let law = IsotropicLaw { lambda: 1000.0, mu: 1.0 };
        let cf = closed_form_disc(law);
        EffectiveCoefficients {
            law,
            q: cf.q,
            qmatrix: Matrix3::from_diagonal(&Vector3::from(cf.q)),
            m: cf.m,
            eres: reference_disc_halfplane_eres(),
            c_s: Some(cf.c_s),
            alpha_s_l2: Some(0.0),
            orthogonality_defect: 0.0,
            mesh_stats: None,
            source: "disc-halfplane: closed-form moduli and K_pre, tabulated E_res".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            return Err(Error::Config(format!("moduli must be positive, got {:?}", self.q)));
        }
        if self.m.iter().chain(self.eres.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        let asym = (self.eres - self.eres.transpose()).abs().max();
        let norm = self.eres.norm();
        if asym > 1e-12 * norm.max(1.0) {
            return Err(Error::Config("E_res is not symmetric".into()));
        }
        let min_eig = self.eres.symmetric_eigenvalues().min();
        if min_eig < -1e-10 * norm {
            return Err(Error::Config(format!("E_res is not positive semidefinite (eigenvalue {min_eig:e})")));
        }
        Ok(())
    }

    pub fn to_file(&self) -> CoefficientsFile {
        CoefficientsFile {
            lambda: self.law.lambda,
            mu: self.law.mu,
            q1: self.q[0],
            q2: self.q[1],
            q3: self.q[2],
            m: (0..3).map(|i| (0..5).map(|j| self.m[(i, j)]).collect()).collect(),
            eres: (0..5).map(|i| (0..5).map(|j| self.eres[(i, j)]).collect()).collect(),
            c_s: self.c_s,
            alpha_s_l2: self.alpha_s_l2,
            mesh_stats: self.mesh_stats.clone(),
            source: Some(self.source.clone()),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let file: CoefficientsFile =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))?;
        file.into_coefficients()
    }
}

/// JSON form of [`EffectiveCoefficients`]; `M` and `Eres` are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsFile {
    pub lambda: f64,
    pub mu: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "Eres")]
    pub eres: Vec<Vec<f64>>,
    #[serde(rename = "cS", default)]
    pub c_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_s_l2: Option<f64>,
    #[serde(default)]
    pub mesh_stats: Option<MeshStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl CoefficientsFile {
    pub fn into_coefficients(self) -> Result<EffectiveCoefficients> {
        let shape_ok = self.m.len() == 3
            && self.m.iter().all(|r| r.len() == 5)
            && self.eres.len() == 5
            && self.eres.iter().all(|r| r.len() == 5);
        if !shape_ok {
            return Err(Error::Config("M must be 3×5 and Eres 5×5 (lists of rows)".into()));
        }
        let law = IsotropicLaw::new(self.lambda, self.mu)?;
        let q = [self.q1, self.q2, self.q3];
        let c = EffectiveCoefficients {
            law,
            q,
            qmatrix: Matrix3::from_diagonal(&Vector3::from(q)),
            m: SMatrix::<f64, 3, 5>::from_fn(|i, j| self.m[i][j]),
            eres: Matrix5::from_fn(|i, j| self.eres[i][j]),
            c_s: self.c_s,
            alpha_s_l2: self.alpha_s_l2,
            orthogonality_defect: 0.0,
            mesh_stats: self.mesh_stats,
            source: self.source.unwrap_or_else(|| "file".into()),
        };
        c.validate()?;
        Ok(c)
    }
}
