//! Discrete rod energy: bending, twist, Frank–Oseen, frame-orthogonality
//! penalty, bending anisotropy, nematic residual and coupling terms, plus an
//! external field and weak director anchoring, together with exact gradients
//! and the Hessians of the terms the flow treats implicitly.
//!
//! The frame is `R = (y′, b, y′∧b)` evaluated pointwise (not renormalized
//! between nodes) and the director `n̂` lives in frame coordinates, so the
//! global director is `R n̂`. Director-only factors (`k(U(n̂))`, `E_res`) are
//! nodal quantities and enter integrals through their P1 interpolants; frame
//! factors are sampled at Gauss points.

use nalgebra::{Matrix3, Matrix5, SMatrix, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::cross_section::EffectiveCoefficients;
use crate::error::{Error, Result};
use crate::fem1d::{default_rule, hermite_dof, hermite_shape, p1_shape, HermiteField, Mesh1D, P1Field};
use crate::sparse::SymmetricBuilder;
use crate::tensor::{director_dev_coords, director_dev_jacobian};

/// Centerline, frame vector and frame-relative director.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    pub y: HermiteField,
    pub b: P1Field,
    pub nhat: P1Field,
}

impl RodState {
    /// Straight rod along `e₁` from the origin with constant `b` and `n̂`.
    pub fn straight(mesh: &Mesh1D, b: Vector3<f64>, nhat: Vector3<f64>) -> Self {
        RodState {
            y: HermiteField::interpolate(mesh, |x| Vector3::new(x, 0.0, 0.0), |_| Vector3::x()),
            b: P1Field::constant(mesh, b),
            nhat: P1Field::constant(mesh, nhat),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.b.n_nodes()
    }

    pub fn check(&self, mesh: &Mesh1D) -> Result<()> {
        let n = mesh.n_nodes();
        if self.y.values.len() != n || self.y.derivs.len() != n || self.b.n_nodes() != n || self.nhat.n_nodes() != n {
            return Err(Error::InvalidArgument(format!("state does not match a mesh with {n} nodes")));
        }
        Ok(())
    }

    /// Largest `| |v(z)| − 1 |` over nodes for `y′`, `b` and `n̂`.
    pub fn unit_defects(&self) -> [f64; 3] {
        let dev = |vs: &[Vector3<f64>]| vs.iter().fold(0.0f64, |m, v| m.max((v.norm() - 1.0).abs()));
        [dev(&self.y.derivs), dev(&self.b.values), dev(&self.nhat.values)]
    }

    /// Global director `R n̂` at the nodes.
    pub fn global_director(&self) -> Vec<Vector3<f64>> {
        (0..self.n_nodes())
            .map(|i| {
                let (t, b, n) = (self.y.derivs[i], self.b.values[i], self.nhat.values[i]);
                t * n[0] + b * n[1] + t.cross(&b) * n[2]
            })
            .collect()
    }

    /// Applies a rigid rotation to centerline and frame.
    pub fn rotated(&self, q: &Matrix3<f64>) -> Self {
        RodState {
            y: HermiteField {
                values: self.y.values.iter().map(|v| q * v).collect(),
                derivs: self.y.derivs.iter().map(|v| q * v).collect(),
            },
            b: P1Field { values: self.b.values.iter().map(|v| q * v).collect() },
            nhat: self.nhat.clone(),
        }
    }
}

/// Parameters of the rod energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Twist and the two bending moduli.
    pub q: [f64; 3],
    /// Skew coordinates of the spontaneous curvature are `M u`.
    pub m: SMatrix<f64, 3, 5>,
    pub eres: Matrix5<f64>,
    /// Nematic coupling strength.
    pub rbar: f64,
    /// Frank constant.
    pub kappa: f64,
    /// Orthogonality penalty parameter.
    pub eps: f64,
}

impl ModelParams {
    pub fn from_coefficients(c: &EffectiveCoefficients, rbar: f64, kappa: f64, eps: f64) -> Result<Self> {
        let p = ModelParams { q: c.q, m: c.m, eres: c.eres, rbar, kappa, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::Config(format!("moduli must be positive, got {:?}", self.q)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("Frank constant must be non-negative, got {}", self.kappa)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("penalty parameter must be positive, got {}", self.eps)));
        }
        if !self.rbar.is_finite() || self.m.iter().chain(self.eres.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite model parameter".into()));
        }
        let norm = self.eres.norm();
        if (self.eres - self.eres.transpose()).abs().max() > 1e-12 * norm.max(1.0) {
            return Err(Error::Config("E_res is not symmetric".into()));
        }
        if self.eres.symmetric_eigenvalues().min() < -1e-10 * norm {
            return Err(Error::Config("E_res is not positive semidefinite".into()));
        }
        Ok(())
    }
}

/// `k = (1/√2) M u`: frame-coordinate spontaneous curvature of a
/// deviatoric strain with coordinates `u`.
pub fn k_of_dev(u: &Vector5<f64>, m: &SMatrix<f64, 3, 5>) -> Vector3<f64> {
    m * u * std::f64::consts::FRAC_1_SQRT_2
}

/// Spatially uniform external field `f(t)`, piecewise constant in time on
/// left-open intervals `(t_{m−1}, t_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingField {
    #[default]
    None,
    Constant { value: [f64; 3] },
    /// `odd` on intervals with odd index `m` (counting from 1), `even` otherwise.
    Alternating { interval: f64, odd: [f64; 3], even: [f64; 3] },
    /// `values[i]` on `(breakpoints[i−1], breakpoints[i]]`; the last value
    /// holds after the last breakpoint.
    Piecewise { breakpoints: Vec<f64>, values: Vec<[f64; 3]> },
}

/// Relative slack when deciding which interval a time belongs to.
const SCHEDULE_TOL: f64 = 1e-9;

impl ForcingField {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            ForcingField::None => true,
            ForcingField::Constant { value } => finite(value),
            ForcingField::Alternating { interval, odd, even } => *interval > 0.0 && finite(odd) && finite(even),
            ForcingField::Piecewise { breakpoints, values } => {
                values.len() == breakpoints.len() + 1
                    && breakpoints.windows(2).all(|w| w[0] < w[1])
                    && breakpoints.iter().all(|t| t.is_finite())
                    && values.iter().all(finite)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid forcing schedule {self:?}")))
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        match self {
            ForcingField::None => Vector3::zeros(),
            ForcingField::Constant { value } => Vector3::from(*value),
            ForcingField::Alternating { interval, odd, even } => {
                let m = ((t / interval - SCHEDULE_TOL).ceil() as i64).max(1);
                Vector3::from(if m % 2 == 1 { *odd } else { *even })
            }
            ForcingField::Piecewise { breakpoints, values } => {
                let i = breakpoints.iter().take_while(|&&b| t > b + SCHEDULE_TOL * b.abs().max(1.0)).count();
                Vector3::from(values[i])
            }
        }
    }

    /// Times in `(t0, t1]` where the field switches.
    pub fn breakpoints_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            ForcingField::Alternating { interval, .. } => {
                let first = (t0 / interval).floor() as i64 + 1;
                (first..)
                    .map(|m| m as f64 * interval)
                    .take_while(|&t| t <= t1)
                    .filter(|&t| t > t0)
                    .collect()
            }
            ForcingField::Piecewise { breakpoints, .. } => {
                breakpoints.iter().copied().filter(|&t| t > t0 && t <= t1).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Whether the field never changes after `t`.
    pub fn is_settled_after(&self, t: f64) -> bool {
        match self {
            ForcingField::None | ForcingField::Constant { .. } => true,
            ForcingField::Alternating { .. } => false,
            ForcingField::Piecewise { breakpoints, .. } => breakpoints.last().map_or(true, |&b| t >= b),
        }
    }
}

/// Which semi-norm weak anchoring uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnchoringMode {
    #[default]
    None,
    /// All three components.
    Full,
    /// Components 2 and 3, i.e. everything off the tangent.
    Tangential,
    /// Component 1, the tangential part.
    Normal,
}

impl AnchoringMode {
    fn weights(self) -> Vector3<f64> {
        match self {
            AnchoringMode::None => Vector3::zeros(),
            AnchoringMode::Full => Vector3::new(1.0, 1.0, 1.0),
            AnchoringMode::Tangential => Vector3::new(0.0, 1.0, 1.0),
            AnchoringMode::Normal => Vector3::new(1.0, 0.0, 0.0),
        }
    }
}

/// `ρ̄ ∫ |n̂ − n̂_bc|²_a` with the semi-norm chosen by `mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoringSpec {
    pub mode: AnchoringMode,
    pub weight: f64,
    /// Nodal target; only the components seen by the semi-norm matter.
    pub target: Option<P1Field>,
}

impl Default for AnchoringSpec {
    fn default() -> Self {
        AnchoringSpec::none()
    }
}

impl AnchoringSpec {
    pub fn none() -> Self {
        AnchoringSpec { mode: AnchoringMode::None, weight: 0.0, target: None }
    }

    pub fn full(weight: f64, target: P1Field) -> Self {
        AnchoringSpec { mode: AnchoringMode::Full, weight, target: Some(target) }
    }

    /// Pulls the director onto the tangent.
    pub fn tangential(weight: f64) -> Self {
        AnchoringSpec { mode: AnchoringMode::Tangential, weight, target: None }
    }

    /// Pulls the director off the tangent.
    pub fn normal(weight: f64) -> Self {
        AnchoringSpec { mode: AnchoringMode::Normal, weight, target: None }
    }

    pub fn is_active(&self) -> bool {
        self.mode != AnchoringMode::None && self.weight != 0.0
    }

    pub fn validate(&self, mesh: &Mesh1D) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config(format!("anchoring weight must be non-negative, got {}", self.weight)));
        }
        match (&self.mode, &self.target) {
            (AnchoringMode::Full, None) => Err(Error::Config("full anchoring needs a target director".into())),
            (_, Some(t)) if self.mode != AnchoringMode::None => {
                if t.n_nodes() != mesh.n_nodes() {
                    return Err(Error::Config("anchoring target does not match the mesh".into()));
                }
                if t.values.iter().any(|v| (v.norm() - 1.0).abs() > 1e-10) {
                    return Err(Error::Config("anchoring target must be unit length at nodes".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn target_at(&self, e: usize, s: f64) -> Vector3<f64> {
        match (&self.target, self.mode) {
            (Some(t), _) => t.values[e] * (1.0 - s) + t.values[e + 1] * s,
            (None, AnchoringMode::Tangential) => Vector3::x(),
            (None, _) => Vector3::y(),
        }
    }
}

/// Individual energy terms, for term-wise gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Bending,
    Twist,
    FrankOseen,
    Penalty,
    /// `½(q₂ − q₁ − q₃)∫(y″·b)²`.
    Anisotropy,
    Residual,
    Coupling,
    Forcing,
    Anchoring,
}

impl Term {
    pub const ALL: [Term; 9] = [
        Term::Bending,
        Term::Twist,
        Term::FrankOseen,
        Term::Penalty,
        Term::Anisotropy,
        Term::Residual,
        Term::Coupling,
        Term::Forcing,
        Term::Anchoring,
    ];
}

/// Energy split by term. `total` is the rod energy without the external
/// field and the anchoring, which are reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub bending: f64,
    pub twist: f64,
    pub frank_oseen: f64,
    pub penalty: f64,
    pub anisotropy: f64,
    pub residual: f64,
    pub coupling: f64,
    pub forcing: f64,
    pub anchoring: f64,
}

impl EnergyBreakdown {
    /// The functional the flow descends: `total + forcing + anchoring`.
    pub fn flow_energy(&self) -> f64 {
        self.total + self.forcing + self.anchoring
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Bending => self.bending,
            Term::Twist => self.twist,
            Term::FrankOseen => self.frank_oseen,
            Term::Penalty => self.penalty,
            Term::Anisotropy => self.anisotropy,
            Term::Residual => self.residual,
            Term::Coupling => self.coupling,
            Term::Forcing => self.forcing,
            Term::Anchoring => self.anchoring,
        }
    }

    fn add(&mut self, term: Term, v: f64) {
        let slot = match term {
            Term::Bending => &mut self.bending,
            Term::Twist => &mut self.twist,
            Term::FrankOseen => &mut self.frank_oseen,
            Term::Penalty => &mut self.penalty,
            Term::Anisotropy => &mut self.anisotropy,
            Term::Residual => &mut self.residual,
            Term::Coupling => &mut self.coupling,
            Term::Forcing => &mut self.forcing,
            Term::Anchoring => &mut self.anchoring,
        };
        *slot += v;
    }
}

/// The rod variable a variation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Y,
    B,
    N,
}

/// Gradient with respect to the flat dofs of `y`, `b` and `n̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    pub y: Vec<f64>,
    pub b: Vec<f64>,
    pub n: Vec<f64>,
}

impl StateGradient {
    pub fn zeros(n_nodes: usize) -> Self {
        StateGradient { y: vec![0.0; 6 * n_nodes], b: vec![0.0; 3 * n_nodes], n: vec![0.0; 3 * n_nodes] }
    }

    pub fn part(&self, v: Variable) -> &[f64] {
        match v {
            Variable::Y => &self.y,
            Variable::B => &self.b,
            Variable::N => &self.n,
        }
    }
}

/// Pointwise frame data: rotation-like matrix `(y′, b, y′∧b)`, twist rate
/// and the two bending components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameQuantities {
    pub r: Matrix3<f64>,
    pub beta: f64,
    pub kappa_b: f64,
    pub kappa_d: f64,
}

/// `R`, `β = b′·(y′∧b)`, `κ_b = y″·b`, `κ_d = y″·(y′∧b)` at `x`.
pub fn frame_quantities(mesh: &Mesh1D, state: &RodState, x: f64) -> Result<FrameQuantities> {
    state.check(mesh)?;
    let (e, s) = mesh.locate(x)?;
    let [_, y1, y2] = state.y.eval_local(mesh, e, s);
    let [b, b1] = state.b.eval_local(mesh, e, s);
    let d = y1.cross(&b);
    Ok(FrameQuantities {
        r: Matrix3::from_columns(&[y1, b, d]),
        beta: b1.dot(&d),
        kappa_b: y2.dot(&b),
        kappa_d: y2.dot(&d),
    })
}

/// Mesh, parameters and anchoring: everything the energy needs except the
/// state and the current external field.
#[derive(Debug, Clone)]
pub struct RodModel {
    pub mesh: Mesh1D,
    pub params: ModelParams,
    pub anchoring: AnchoringSpec,
}

/// Partials of a pointwise integrand with respect to the sampled quantities.
#[derive(Default)]
struct Partials {
    y1: Vector3<f64>,
    y2: Vector3<f64>,
    b: Vector3<f64>,
    b1: Vector3<f64>,
    n: Vector3<f64>,
    n1: Vector3<f64>,
}

impl RodModel {
    pub fn new(mesh: Mesh1D, params: ModelParams, anchoring: AnchoringSpec) -> Result<Self> {
        params.validate()?;
        anchoring.validate(&mesh)?;
        Ok(RodModel { mesh, params, anchoring })
    }

    /// Nodal `k(U(n̂))` and its 3×3 Jacobian in `n̂`.
    fn nodal_curvature(&self, n: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let m = &self.params.m;
        let u = director_dev_coords(n);
        (k_of_dev(&u, m), m * director_dev_jacobian(n) * std::f64::consts::FRAC_1_SQRT_2)
    }

    /// Energy breakdown under external field `f`.
    pub fn energy(&self, state: &RodState, f: &Vector3<f64>) -> Result<EnergyBreakdown> {
        state.check(&self.mesh)?;
        Ok(self.evaluate(state, f, &Term::ALL, None))
    }

    /// Gradient of `total + forcing + anchoring`.
    pub fn gradient(&self, state: &RodState, f: &Vector3<f64>) -> Result<StateGradient> {
        self.terms_gradient(state, f, &Term::ALL)
    }

    /// Gradient of the sum of the selected terms.
    pub fn terms_gradient(&self, state: &RodState, f: &Vector3<f64>, terms: &[Term]) -> Result<StateGradient> {
        state.check(&self.mesh)?;
        let mut g = StateGradient::zeros(state.n_nodes());
        self.evaluate(state, f, terms, Some(&mut g));
        Ok(g)
    }

    /// Sum of the selected terms.
    pub fn terms_energy(&self, state: &RodState, f: &Vector3<f64>, terms: &[Term]) -> Result<f64> {
        state.check(&self.mesh)?;
        let e = self.evaluate(state, f, terms, None);
        Ok(terms.iter().map(|&t| e.get(t)).sum())
    }

    /// Directional derivative of `total + forcing + anchoring` in one variable.
    pub fn first_variation(&self, state: &RodState, f: &Vector3<f64>, which: Variable, direction: &[f64]) -> Result<f64> {
        let g = self.gradient(state, f)?;
        dot_checked(g.part(which), direction)
    }

    /// Directional derivative of `−∫ f·(R n̂)`.
    pub fn forcing_functional(&self, state: &RodState, f: &Vector3<f64>, which: Variable, direction: &[f64]) -> Result<f64> {
        let g = self.terms_gradient(state, f, &[Term::Forcing])?;
        dot_checked(g.part(which), direction)
    }

    /// Anchoring energy and its gradient in `n̂`.
    pub fn anchoring_energy(&self, state: &RodState) -> Result<(f64, Vec<f64>)> {
        let mut g = StateGradient::zeros(state.n_nodes());
        state.check(&self.mesh)?;
        let e = self.evaluate(state, &Vector3::zeros(), &[Term::Anchoring], Some(&mut g));
        Ok((e.anchoring, g.n))
    }

    fn evaluate(&self, state: &RodState, f: &Vector3<f64>, terms: &[Term], mut grad: Option<&mut StateGradient>) -> EnergyBreakdown {
        let want = |t: Term| terms.contains(&t);
        let p = &self.params;
        let [q1, q2, q3] = p.q;
        let qv = Vector3::new(q1, q2, q3);
        let aniso = q2 - q1 - q3;
        let kap2 = p.kappa * p.kappa;
        let mesh = &self.mesh;
        let h = mesh.h();
        let rule = default_rule();
        let mut out = EnergyBreakdown::default();

        let nodal: Vec<(Vector3<f64>, Matrix3<f64>)> =
            state.nhat.values.iter().map(|n| self.nodal_curvature(n)).collect();
        let anchor_w = self.anchoring.mode.weights() * self.anchoring.weight;
        let anchoring_on = want(Term::Anchoring) && self.anchoring.is_active();

        for e in 0..mesh.n_elements() {
            for (&s, &wq) in rule.points.iter().zip(&rule.weights) {
                let w = wq * h;
                let hs = hermite_shape(s, h);
                let ps = p1_shape(s, h);
                let [_, y1, y2] = state.y.eval_local(mesh, e, s);
                let [b, b1] = state.b.eval_local(mesh, e, s);
                let [n, n1] = state.nhat.eval_local(mesh, e, s);
                let d = y1.cross(&b);
                let dp = y2.cross(&b) + y1.cross(&b1);
                let beta = b1.dot(&d);
                let kb = y2.dot(&b);
                let kd = y2.dot(&d);
                let mut g = Partials::default();

                if want(Term::Bending) {
                    out.add(Term::Bending, 0.5 * w * q3 * y2.norm_squared());
                    g.y2 += y2 * q3;
                }
                if want(Term::Twist) {
                    out.add(Term::Twist, 0.5 * w * q1 * b1.norm_squared());
                    g.b1 += b1 * q1;
                }
                if want(Term::FrankOseen) && kap2 != 0.0 {
                    let dn = y1 * n1[0] + y2 * n[0] + b * n1[1] + b1 * n[1] + d * n1[2] + dp * n[2];
                    out.add(Term::FrankOseen, 0.5 * w * kap2 * dn.norm_squared());
                    let gv = dn * kap2;
                    g.y1 += gv * n1[0] + b.cross(&gv) * n1[2] + b1.cross(&gv) * n[2];
                    g.y2 += gv * n[0] + b.cross(&gv) * n[2];
                    g.b += gv * n1[1] + gv.cross(&y1) * n1[2] + gv.cross(&y2) * n[2];
                    g.b1 += gv * n[1] + gv.cross(&y1) * n[2];
                    g.n += Vector3::new(gv.dot(&y2), gv.dot(&b1), gv.dot(&dp));
                    g.n1 += Vector3::new(gv.dot(&y1), gv.dot(&b), gv.dot(&d));
                }
                if want(Term::Anisotropy) {
                    out.add(Term::Anisotropy, 0.5 * w * aniso * kb * kb);
                    g.y2 += b * (aniso * kb);
                    g.b += y2 * (aniso * kb);
                }
                if want(Term::Coupling) && p.rbar != 0.0 {
                    let ik = nodal[e].0 * (1.0 - s) + nodal[e + 1].0 * s;
                    let strain = Vector3::new(beta, kb, kd);
                    out.add(Term::Coupling, -w * p.rbar * qv.component_mul(&ik).dot(&strain));
                    let c = -p.rbar * qv.component_mul(&ik);
                    g.b1 += d * c[0];
                    g.y1 += b.cross(&b1) * c[0] + b.cross(&y2) * c[2];
                    g.b += b1.cross(&y1) * c[0] + y2 * c[1] + y2.cross(&y1) * c[2];
                    g.y2 += b * c[1] + d * c[2];
                    if let Some(gr) = grad.as_deref_mut() {
                        let dk = -p.rbar * qv.component_mul(&strain);
                        for (a, phi) in [(0, 1.0 - s), (1, s)] {
                            let gn = nodal[e + a].1.transpose() * dk * (w * phi);
                            for c in 0..3 {
                                gr.n[3 * (e + a) + c] += gn[c];
                            }
                        }
                    }
                }
                if want(Term::Forcing) && f.norm_squared() != 0.0 {
                    let nv = y1 * n[0] + b * n[1] + d * n[2];
                    out.add(Term::Forcing, -w * f.dot(&nv));
                    g.y1 -= f * n[0] + b.cross(f) * n[2];
                    g.b -= f * n[1] + f.cross(&y1) * n[2];
                    g.n -= Vector3::new(f.dot(&y1), f.dot(&b), f.dot(&d));
                }
                if anchoring_on {
                    let diff = n - self.anchoring.target_at(e, s);
                    out.add(Term::Anchoring, w * anchor_w.dot(&diff.component_mul(&diff)));
                    g.n += anchor_w.component_mul(&diff) * 2.0;
                }

                if let Some(gr) = grad.as_deref_mut() {
                    for a in 0..4 {
                        let dof = hermite_dof(e, a);
                        let v = (g.y1 * hs[1][a] + g.y2 * hs[2][a]) * w;
                        for c in 0..3 {
                            gr.y[dof + c] += v[c];
                        }
                    }
                    for a in 0..2 {
                        let vb = (g.b * ps[0][a] + g.b1 * ps[1][a]) * w;
                        let vn = (g.n * ps[0][a] + g.n1 * ps[1][a]) * w;
                        for c in 0..3 {
                            gr.b[3 * (e + a) + c] += vb[c];
                            gr.n[3 * (e + a) + c] += vn[c];
                        }
                    }
                }
            }
        }

        let tw = mesh.trapezoid_weights();
        for (z, &wz) in tw.iter().enumerate() {
            let t = state.y.derivs[z];
            let b = state.b.values[z];
            let n = state.nhat.values[z];
            if want(Term::Penalty) {
                let c = t.dot(&b);
                out.add(Term::Penalty, wz * c * c / (2.0 * p.eps));
                if let Some(gr) = grad.as_deref_mut() {
                    let s = wz * c / p.eps;
                    for k in 0..3 {
                        gr.y[6 * z + 3 + k] += s * b[k];
                        gr.b[3 * z + k] += s * t[k];
                    }
                }
            }
            if want(Term::Residual) && p.rbar != 0.0 {
                let u = director_dev_coords(&n);
                let eu = p.eres * u;
                let r2 = p.rbar * p.rbar;
                out.add(Term::Residual, 0.5 * r2 * wz * u.dot(&eu));
                if let Some(gr) = grad.as_deref_mut() {
                    let gn = director_dev_jacobian(&n).transpose() * eu * (r2 * wz);
                    for k in 0..3 {
                        gr.n[3 * z + k] += gn[k];
                    }
                }
            }
            if want(Term::Coupling) && p.rbar != 0.0 {
                let (k, jac) = &nodal[z];
                let r2 = p.rbar * p.rbar;
                out.add(Term::Coupling, 0.5 * r2 * wz * qv.dot(&k.component_mul(k)));
                if let Some(gr) = grad.as_deref_mut() {
                    let gn = jac.transpose() * qv.component_mul(k) * (r2 * wz);
                    for c in 0..3 {
                        gr.n[3 * z + c] += gn[c];
                    }
                }
            }
        }

        out.total = out.bending + out.twist + out.frank_oseen + out.penalty + out.anisotropy + out.residual + out.coupling;
        out
    }

    /// Adds `scale·(q₃ y″·y″ + penalty Hessian in y at fixed b)` to a Hermite builder.
    pub fn add_y_implicit(&self, builder: &mut SymmetricBuilder, b: &P1Field, scale: f64) {
        crate::fem1d::add_hermite_form(builder, &self.mesh, 2, scale * self.params.q[2]);
        let tw = self.mesh.trapezoid_weights();
        for (z, &wz) in tw.iter().enumerate() {
            let bz = b.values[z];
            for i in 0..3 {
                for j in i..3 {
                    let v = scale * wz * bz[i] * bz[j] / self.params.eps;
                    builder.push_sym(6 * z + 3 + i, 6 * z + 3 + j, v);
                }
            }
        }
    }

    /// Adds `scale·(q₁ b′·b′ + penalty Hessian in b at fixed y)` to a P1 builder.
    pub fn add_b_implicit(&self, builder: &mut SymmetricBuilder, y: &HermiteField, scale: f64) {
        crate::fem1d::add_p1_form(builder, &self.mesh, 1, scale * self.params.q[0]);
        let tw = self.mesh.trapezoid_weights();
        for (z, &wz) in tw.iter().enumerate() {
            let t = y.derivs[z];
            for i in 0..3 {
                for j in i..3 {
                    builder.push_sym(3 * z + i, 3 * z + j, scale * wz * t[i] * t[j] / self.params.eps);
                }
            }
        }
    }

    /// Adds `scale·(κ²((R n̂)′, (R δn̂)′) + anchoring Hessian)` at the frame of
    /// `(y, b)` to a P1 builder.
    pub fn add_n_implicit(&self, builder: &mut SymmetricBuilder, y: &HermiteField, b: &P1Field, scale: f64) {
        let mesh = &self.mesh;
        let h = mesh.h();
        let rule = default_rule();
        let kap2 = self.params.kappa * self.params.kappa;
        let anchor_w = self.anchoring.mode.weights() * self.anchoring.weight;
        let anchored = self.anchoring.is_active();
        for e in 0..mesh.n_elements() {
            let mut local = [[0.0; 6]; 6];
            for (&s, &wq) in rule.points.iter().zip(&rule.weights) {
                let w = wq * h;
                let ps = p1_shape(s, h);
                let [_, y1, y2] = y.eval_local(mesh, e, s);
                let [bv, b1] = b.eval_local(mesh, e, s);
                let r = Matrix3::from_columns(&[y1, bv, y1.cross(&bv)]);
                let rp = Matrix3::from_columns(&[y2, b1, y2.cross(&bv) + y1.cross(&b1)]);
                // Column (a, c) of the map from local dofs to (R n̂)′.
                let mut cols = [Vector3::zeros(); 6];
                for a in 0..2 {
                    for c in 0..3 {
                        cols[3 * a + c] = rp.column(c) * ps[0][a] + r.column(c) * ps[1][a];
                    }
                }
                for i in 0..6 {
                    for j in 0..6 {
                        let mut v = kap2 * cols[i].dot(&cols[j]);
                        if anchored && i % 3 == j % 3 {
                            v += 2.0 * anchor_w[i % 3] * ps[0][i / 3] * ps[0][j / 3];
                        }
                        local[i][j] += w * v;
                    }
                }
            }
            for (i, row) in local.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    builder.push(3 * e + i, 3 * e + j, scale * v);
                }
            }
        }
    }
}

fn dot_checked(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("direction has {} dofs, expected {}", b.len(), a.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{closed_form_disc, IsotropicLaw};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc_params(rbar: f64, kappa: f64) -> ModelParams {
        ModelParams::from_coefficients(&EffectiveCoefficients::disc_halfplane_reference(), rbar, kappa, 1.0 / 200.0)
            .unwrap()
    }

    fn model(l: f64, n: usize, p: ModelParams, a: AnchoringSpec) -> RodModel {
        RodModel::new(Mesh1D::uniform(l, n).unwrap(), p, a).unwrap()
    }

    #[test]
    fn alternating_schedule() {
        let f = ForcingField::Alternating { interval: 10.0, odd: [0.0, 1.0, 0.0], even: [1.0, 0.0, 0.0] };
        assert_eq!(f.at(5.0), Vector3::y());
        assert_eq!(f.at(15.0), Vector3::x());
        assert_eq!(f.at(60.0 - 1e-9), Vector3::x());
        assert_eq!(f.at(10.0), Vector3::y());
        assert_eq!(f.at(4000.0 * 0.0025), Vector3::y());
        assert_eq!(f.at(0.0), Vector3::y());
        assert_eq!(f.breakpoints_in(0.0, 35.0), vec![10.0, 20.0, 30.0]);
        assert!(!f.is_settled_after(100.0));
        let p = ForcingField::Piecewise { breakpoints: vec![1.0], values: vec![[0.0; 3], [1.0, 0.0, 0.0]] };
        assert_eq!(p.at(1.0), Vector3::zeros());
        assert_eq!(p.at(1.5), Vector3::x());
        assert!(p.is_settled_after(1.0) && !p.is_settled_after(0.5));
        assert!(ForcingField::Piecewise { breakpoints: vec![1.0], values: vec![] }.validate().is_err());
    }

    #[test]
    fn k_of_dev_examples() {
        let m = closed_form_disc(IsotropicLaw::new(1000.0, 1.0).unwrap()).m;
        let k = k_of_dev(&director_dev_coords(&Vector3::y()), &m);
        assert!(k[0].abs() < 1e-15 && k[1].abs() < 1e-15);
        // (1/√2)·16/(3√(3π))·¼√(2/3) = 4/(9√π).
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert!((k[2] - 4.0 / (9.0 * sqrt_pi)).abs() < 1e-15, "{}", k[2]);
        assert!((k[2] - 0.250751).abs() < 1e-6);
        let k = k_of_dev(&director_dev_coords(&Vector3::x()), &m);
        assert!((k[2] + 8.0 / (9.0 * sqrt_pi)).abs() < 1e-15, "{}", k[2]);
        assert_eq!(k_of_dev(&Vector5::zeros(), &m), Vector3::zeros());
    }

    #[test]
    fn straight_state_energies() {
        let md = model(2.0, 20, disc_params(0.0, 1.0), AnchoringSpec::none());
        let s = RodState::straight(&md.mesh, Vector3::y(), Vector3::y());
        let e = md.energy(&s, &Vector3::zeros()).unwrap();
        assert!(e.total.abs() < 1e-20 && e.flow_energy().abs() < 1e-20);

        let md = model(2.0, 20, disc_params(1.0, 1.0), AnchoringSpec::none());
        let e = md.energy(&s, &Vector3::zeros()).unwrap();
        let q2 = closed_form_disc(IsotropicLaw::new(1000.0, 1.0).unwrap()).q[1];
        let k3 = 4.0 / (9.0 * std::f64::consts::PI.sqrt());
        assert!((e.coupling - 0.5 * q2 * k3 * k3 * 2.0).abs() < 1e-15, "{}", e.coupling);
        assert!((e.coupling - 3.7514e-3).abs() < 1e-7);
        assert!((e.residual - 2.0683e-2).abs() < 1e-6, "{}", e.residual);
        assert!((e.bending + e.twist + e.frank_oseen + e.penalty).abs() < 1e-20);
    }

    #[test]
    fn penalty_example() {
        let p = disc_params(0.0, 0.0);
        let eps = p.eps;
        let md = model(2.0, 10, p, AnchoringSpec::none());
        let mut s = RodState::straight(&md.mesh, Vector3::y(), Vector3::y());
        s.b = P1Field::constant(&md.mesh, Vector3::new(1.0, 1.0, 0.0).normalize());
        let e = md.energy(&s, &Vector3::zeros()).unwrap();
        assert!((e.penalty - 0.5 / eps * 0.5 * 2.0).abs() < 1e-10);
    }

    #[test]
    fn anchoring_examples() {
        let md = model(2.0, 10, disc_params(0.0, 0.0), AnchoringSpec::tangential(1.0));
        let s = RodState::straight(&md.mesh, Vector3::y(), Vector3::y());
        let (e, _) = md.anchoring_energy(&s).unwrap();
        assert!((e - 2.0).abs() < 1e-13);
        let target = P1Field::constant(&md.mesh, Vector3::y());
        let md = model(2.0, 10, disc_params(0.0, 0.0), AnchoringSpec::full(3.0, target));
        let (e, g) = md.anchoring_energy(&s).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let md = model(2.0, 10, disc_params(0.0, 0.0), AnchoringSpec::none());
        assert_eq!(md.anchoring_energy(&s).unwrap().0, 0.0);
    }

    #[test]
    fn frame_quantities_examples() {
        let mesh = Mesh1D::uniform(1.0, 40).unwrap();
        let s = RodState::straight(&mesh, Vector3::y(), Vector3::y());
        let fq = frame_quantities(&mesh, &s, 0.37).unwrap();
        assert!((fq.r - Matrix3::identity()).norm() < 1e-14);
        assert_eq!((fq.beta, fq.kappa_b, fq.kappa_d), (0.0, 0.0, 0.0));

        // Helical frame: β equals the turning rate up to P1 interpolation error.
        let th = 2.0;
        let mut s2 = s.clone();
        s2.b = P1Field::interpolate(&mesh, |x| Vector3::new(0.0, (th * x).cos(), (th * x).sin()));
        let x = 0.5 * (mesh.nodes()[10] + mesh.nodes()[11]);
        let fq = frame_quantities(&mesh, &s2, x).unwrap();
        assert!((fq.beta - th).abs() < 1e-3, "{}", fq.beta);
        assert!(fq.kappa_b.abs() < 1e-14 && fq.kappa_d.abs() < 1e-14);

        // Unit circle in the (e1, e2) plane with b the inward normal.
        let y = HermiteField::interpolate(&mesh, |x| Vector3::new(x.sin(), 1.0 - x.cos(), 0.0), |x| {
            Vector3::new(x.cos(), x.sin(), 0.0)
        });
        let b = P1Field::interpolate(&mesh, |x| Vector3::new(-x.sin(), x.cos(), 0.0));
        let s3 = RodState { y, b, nhat: s.nhat.clone() };
        let fq = frame_quantities(&mesh, &s3, x).unwrap();
        assert!((fq.kappa_b - 1.0).abs() < 1e-3, "{}", fq.kappa_b);
        assert!(fq.beta.abs() < 1e-12 && fq.kappa_d.abs() < 1e-12);
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() > 0.1 {
                return v.normalize();
            }
        }
    }

    fn random_state(mesh: &Mesh1D, rng: &mut ChaCha8Rng) -> RodState {
        let n = mesh.n_nodes();
        let mut y = HermiteField { values: Vec::new(), derivs: Vec::new() };
        for i in 0..n {
            y.values.push(Vector3::new(mesh.nodes()[i], 0.0, 0.0) + random_unit(rng) * 0.05);
            y.derivs.push(random_unit(rng));
        }
        RodState {
            y,
            b: P1Field { values: (0..n).map(|_| random_unit(rng)).collect() },
            nhat: P1Field { values: (0..n).map(|_| random_unit(rng)).collect() },
        }
    }

    fn perturbed(s: &RodState, v: Variable, dir: &[f64], t: f64) -> RodState {
        let mut out = s.clone();
        match v {
            Variable::Y => {
                let d: Vec<f64> = s.y.to_dofs().iter().zip(dir).map(|(a, b)| a + t * b).collect();
                out.y = HermiteField::from_dofs(&d);
            }
            Variable::B => {
                let d: Vec<f64> = s.b.to_dofs().iter().zip(dir).map(|(a, b)| a + t * b).collect();
                out.b = P1Field::from_dofs(&d);
            }
            Variable::N => {
                let d: Vec<f64> = s.nhat.to_dofs().iter().zip(dir).map(|(a, b)| a + t * b).collect();
                out.nhat = P1Field::from_dofs(&d);
            }
        }
        out
    }

    #[test]
    fn term_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = P1Field::constant(&Mesh1D::uniform(2.0, 20).unwrap(), Vector3::new(0.0, 0.6, 0.8));
        let md = model(2.0, 20, disc_params(2.0, 0.7), AnchoringSpec::full(0.8, target));
        let f = Vector3::new(0.3, -1.0, 0.5);
        for _ in 0..5 {
            let s = random_state(&md.mesh, &mut rng);
            for term in Term::ALL {
                let g = md.terms_gradient(&s, &f, &[term]).unwrap();
                for v in [Variable::Y, Variable::B, Variable::N] {
                    let dir: Vec<f64> = (0..g.part(v).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let an: f64 = g.part(v).iter().zip(&dir).map(|(a, b)| a * b).sum();
                    let st = 1e-5;
                    let ep = md.terms_energy(&perturbed(&s, v, &dir, st), &f, &[term]).unwrap();
                    let em = md.terms_energy(&perturbed(&s, v, &dir, -st), &f, &[term]).unwrap();
                    let fd = (ep - em) / (2.0 * st);
                    assert!((fd - an).abs() / (1.0 + an.abs()) < 1e-6, "{term:?} {v:?}: fd {fd} an {an}");
                }
            }
        }
    }

    #[test]
    fn implicit_operators_reproduce_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = P1Field::constant(&Mesh1D::uniform(1.5, 12).unwrap(), Vector3::z());
        let md = model(1.5, 12, disc_params(1.0, 0.9), AnchoringSpec::full(0.5, target.clone()));
        let s = random_state(&md.mesh, &mut rng);
        let zero = Vector3::zeros();
        let n = md.mesh.n_nodes();

        let mut by = SymmetricBuilder::new(6 * n);
        md.add_y_implicit(&mut by, &s.b, 1.0);
        let gy = by.build().mul_vec(&s.y.to_dofs());
        let expect = md.terms_gradient(&s, &zero, &[Term::Bending, Term::Penalty]).unwrap().y;
        assert!(gy.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-9 * (1.0 + b.abs())));

        let mut bb = SymmetricBuilder::new(3 * n);
        md.add_b_implicit(&mut bb, &s.y, 1.0);
        let gb = bb.build().mul_vec(&s.b.to_dofs());
        let expect = md.terms_gradient(&s, &zero, &[Term::Twist, Term::Penalty]).unwrap().b;
        assert!(gb.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-9 * (1.0 + b.abs())));

        // The anchoring gradient is affine: Hessian times (n̂ − target).
        let mut bn = SymmetricBuilder::new(3 * n);
        md.add_n_implicit(&mut bn, &s.y, &s.b, 1.0);
        let diff: Vec<f64> = s.nhat.to_dofs().iter().zip(target.to_dofs()).map(|(a, b)| a - b).collect();
        let hn = bn.build();
        let fo_only = model(1.5, 12, disc_params(1.0, 0.9), AnchoringSpec::none());
        let mut bfo = SymmetricBuilder::new(3 * n);
        fo_only.add_n_implicit(&mut bfo, &s.y, &s.b, 1.0);
        let hfo = bfo.build();
        let got: Vec<f64> = hfo
            .mul_vec(&s.nhat.to_dofs())
            .iter()
            .zip(hn.mul_vec(&diff).iter().zip(hfo.mul_vec(&diff)))
            .map(|(a, (b, c))| a + b - c)
            .collect();
        let expect = md.terms_gradient(&s, &zero, &[Term::FrankOseen, Term::Anchoring]).unwrap().n;
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} {b}");
        }
    }

    #[test]
    fn forcing_functional_examples() {
        let md = model(2.0, 10, disc_params(1.0, 1.0), AnchoringSpec::none());
        let s = RodState::straight(&md.mesh, Vector3::y(), Vector3::y());
        let n = md.mesh.n_nodes();
        let f = Vector3::y();
        let dir = |v: Vector3<f64>| P1Field::constant(&md.mesh, v).to_dofs();
        assert_eq!(md.forcing_functional(&s, &Vector3::zeros(), Variable::N, &dir(Vector3::x())).unwrap(), 0.0);
        assert!(md.forcing_functional(&s, &f, Variable::N, &dir(Vector3::z())).unwrap().abs() < 1e-15);
        assert!(md.forcing_functional(&s, &f, Variable::N, &dir(Vector3::x())).unwrap().abs() < 1e-15);
        assert!(md.forcing_functional(&s, &f, Variable::B, &dir(Vector3::z())).unwrap().abs() < 1e-15);
        // Moving n̂ towards f lowers the forcing energy at rate ∫|f|² = L.
        let g = md.forcing_functional(&s, &f, Variable::N, &dir(Vector3::y())).unwrap();
        assert!((g + 2.0).abs() < 1e-13);
        assert!(md.first_variation(&s, &f, Variable::Y, &vec![0.0; 6 * n]).unwrap() == 0.0);
        assert!(md.first_variation(&s, &f, Variable::Y, &[0.0; 3]).is_err());
    }

    #[test]
    fn energy_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let md = model(2.0, 16, disc_params(1.5, 0.8), AnchoringSpec::tangential(0.3));
        for _ in 0..10 {
            let s = random_state(&md.mesh, &mut rng);
            let axis = nalgebra::Unit::new_normalize(random_unit(&mut rng));
            let q = nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..6.0)).into_inner();
            let e0 = md.energy(&s, &Vector3::zeros()).unwrap();
            let e1 = md.energy(&s.rotated(&q), &Vector3::zeros()).unwrap();
            assert!((e0.total - e1.total).abs() < 1e-12 * (1.0 + e0.total.abs()));
            assert!((e0.anchoring - e1.anchoring).abs() < 1e-12);
            assert!(e0.residual >= 0.0);
        }
    }

    #[test]
    fn orthonormal_helix_frame_identity() {
        // On a helix with an exactly orthonormal frame the Gauss-point
        // integrand of the bending, twist and anisotropy terms equals the
        // frame-coordinate form q₁β² + q₂κ_b² + q₃κ_d².
        let (a, c) = (0.6f64, 0.8f64);
        let p = disc_params(0.0, 0.0);
        let [q1, q2, q3] = p.q;
        for &x in &[0.1f64, 0.7, 1.3] {
            let t = Vector3::new(c, -a * x.sin(), a * x.cos());
            let tp = Vector3::new(0.0, -a * x.cos(), -a * x.sin());
            let b = Vector3::new(0.0, -x.cos(), -x.sin());
            let bp = Vector3::new(0.0, x.sin(), -x.cos());
            let d = t.cross(&b);
            let (beta, kb, kd) = (bp.dot(&d), tp.dot(&b), tp.dot(&d));
            let lhs = q3 * tp.norm_squared() + q1 * bp.norm_squared() + (q2 - q1 - q3) * kb * kb;
            let rhs = q1 * beta * beta + q2 * kb * kb + q3 * kd * kd;
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} {rhs}");
        }
    }
}
