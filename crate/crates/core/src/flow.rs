//! Semi-implicit gradient flow on the nodal unit-length constraint set.
//!
//! Each step updates `y`, then `b`, then `n̂`. A substep solves
//! `(M + τA) d = −∇E` for the velocity `d` in the tangent space at the
//! previous iterate, where `M` is the metric of the variable and `A` the
//! Hessian of the terms treated implicitly (bending or twist with the
//! orthogonality penalty, Frank–Oseen with anchoring). Because `A d` plus the
//! explicit gradient equals the semi-implicit right-hand side, only full
//! gradients at the current mixed iterate are needed. Tangency and boundary
//! conditions enter as Lagrange rows of one saddle-point solve.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{assemble_inner_products, hermite_metric, p1_metric, HermiteField, InnerProducts, P1Field};
use crate::rod::{EnergyBreakdown, ForcingField, RodModel, RodState};
use crate::sparse::{SaddlePoint, SparseRow, SymmetricBuilder, UpperCsc};

/// What is prescribed at one end of the rod for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EndCondition {
    #[default]
    Free,
    /// Value prescribed.
    Fixed,
    /// Value and, for the centerline, the tangent prescribed. Same as
    /// `Fixed` for `b` and `n̂`.
    Clamped,
}

/// Rigid motion of the right end of the centerline:
/// `y(L, t) = y(L, 0) + velocity·min(t, until)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingEnd {
    pub velocity: [f64; 3],
    pub until: f64,
}

/// Boundary conditions at `x₁ = 0` (index 0) and `x₁ = L` (index 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BoundaryConditions {
    pub y: [EndCondition; 2],
    pub b: [EndCondition; 2],
    pub nhat: [EndCondition; 2],
    /// Identifies the two ends for all variables; end conditions must then be free.
    #[serde(default)]
    pub periodic: bool,
    #[serde(default)]
    pub moving_end: Option<MovingEnd>,
}

impl BoundaryConditions {
    /// Left end clamped (centerline, tangent and frame), everything else free.
    pub fn cantilever() -> Self {
        BoundaryConditions {
            y: [EndCondition::Clamped, EndCondition::Free],
            b: [EndCondition::Fixed, EndCondition::Free],
            ..Default::default()
        }
    }

    /// Both ends clamped, director free.
    pub fn clamped_both() -> Self {
        BoundaryConditions {
            y: [EndCondition::Clamped; 2],
            b: [EndCondition::Fixed; 2],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_free = |e: &[EndCondition; 2]| e.iter().all(|c| *c == EndCondition::Free);
        if self.periodic && !(all_free(&self.y) && all_free(&self.b) && all_free(&self.nhat)) {
            return Err(Error::Config("periodic rods cannot have end conditions".into()));
        }
        if let Some(m) = &self.moving_end {
            if self.y[1] == EndCondition::Free || self.periodic {
                return Err(Error::Config("a moving end needs a fixed or clamped right centerline end".into()));
            }
            if !(m.until >= 0.0) || m.velocity.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("invalid moving-end schedule".into()));
            }
        }
        Ok(())
    }

    /// Whether the prescribed data still change after `t`.
    pub fn is_settled_after(&self, t: f64) -> bool {
        self.moving_end.map_or(true, |m| t >= m.until)
    }

    /// Checks that a state satisfies these conditions relative to the
    /// reference state (usually the initial one).
    pub fn check_state(&self, state: &RodState, reference: &RodState, tol: f64) -> Result<()> {
        let last = state.n_nodes() - 1;
        if self.periodic {
            let gap = (state.y.values[0] - state.y.values[last]).norm()
                + (state.y.derivs[0] - state.y.derivs[last]).norm()
                + (state.b.values[0] - state.b.values[last]).norm()
                + (state.nhat.values[0] - state.nhat.values[last]).norm();
            if gap > tol {
                return Err(Error::Config(format!("state is not periodic (gap {gap:e})")));
            }
        }
        for (j, z) in [(0, 0), (1, last)] {
            let moving = j == 1 && self.moving_end.is_some();
            if self.y[j] != EndCondition::Free && !moving && (state.y.values[z] - reference.y.values[z]).norm() > tol {
                return Err(Error::Config(format!("centerline end {j} moved")));
            }
            if self.y[j] == EndCondition::Clamped && (state.y.derivs[z] - reference.y.derivs[z]).norm() > tol {
                return Err(Error::Config(format!("tangent at end {j} changed")));
            }
            if self.b[j] != EndCondition::Free && (state.b.values[z] - reference.b.values[z]).norm() > tol {
                return Err(Error::Config(format!("frame vector at end {j} changed")));
            }
            if self.nhat[j] != EndCondition::Free && (state.nhat.values[z] - reference.nhat.values[z]).norm() > tol {
                return Err(Error::Config(format!("director at end {j} changed")));
            }
        }
        Ok(())
    }
}

/// Prescribed right-end centerline position at time `t`, if it moves.
pub fn moving_bc_update(bc: &BoundaryConditions, initial_end: &Vector3<f64>, t: f64) -> Option<Vector3<f64>> {
    bc.moving_end.map(|m| initial_end + Vector3::from(m.velocity) * t.clamp(0.0, m.until))
}

/// Step size, stopping threshold and final time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tau: f64,
    /// Stop once `‖d_t y‖_Y + ‖d_t b‖_X + ‖d_t n̂‖_Z` drops to this value,
    /// provided forcing and boundary data no longer change.
    pub eps_stop: f64,
    pub t_final: f64,
    /// A step fails if the relative saddle-point residual exceeds this.
    pub abort_residual: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { tau: 1.0 / 400.0, eps_stop: 1e-6, t_final: 1.0, abort_residual: 1e-6 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.tau)));
        }
        if !(self.eps_stop >= 0.0) || !(self.t_final >= 0.0) || !(self.abort_residual > 0.0) {
            return Err(Error::Config("stopping threshold, final time and abort residual must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_final`.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.tau - 1e-9).ceil().max(0.0) as usize
    }
}

/// One accepted step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub k: usize,
    pub t: f64,
    /// Velocities `d_t y`, `d_t b`, `d_t n̂` as flat dofs.
    pub dy: Vec<f64>,
    pub db: Vec<f64>,
    pub dn: Vec<f64>,
    /// `‖d_t y‖_Y`, `‖d_t b‖_X`, `‖d_t n̂‖_Z`.
    pub norms: [f64; 3],
    /// Energy of the new state under `f(t)`.
    pub energy: EnergyBreakdown,
    /// Largest relative saddle-point residual of the three solves.
    pub solver_residual: f64,
    /// Largest violation of a tangency or boundary row, relative to the
    /// size of the update.
    pub constraint_residual: f64,
}

impl StepReport {
    pub fn update_norm(&self) -> f64 {
        self.norms.iter().sum()
    }
}

/// Why [`Flow::run`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    FinalTime,
    Interrupted,
}

/// A running gradient flow.
#[derive(Debug, Clone)]
pub struct Flow {
    model: RodModel,
    bc: BoundaryConditions,
    forcing: ForcingField,
    config: FlowConfig,
    metrics: InnerProducts,
    y_metric: SymmetricBuilder,
    p1_metric: SymmetricBuilder,
    state: RodState,
    initial_end: Vector3<f64>,
    k: usize,
}

impl Flow {
    pub fn new(
        model: RodModel,
        initial: RodState,
        bc: BoundaryConditions,
        forcing: ForcingField,
        config: FlowConfig,
    ) -> Result<Self> {
        config.validate()?;
        bc.validate()?;
        forcing.validate()?;
        initial.check(&model.mesh)?;
        let defects = initial.unit_defects();
        if defects.iter().any(|d| *d > 1e-12) {
            return Err(Error::Config(format!("initial state violates the unit-length constraints by {defects:?}")));
        }
        bc.check_state(&initial, &initial, 0.0)?;
        let metrics = assemble_inner_products(&model.mesh);
        let y_metric = hermite_metric(&model.mesh, 1.0);
        let p1 = p1_metric(&model.mesh, 1.0);
        let initial_end = *initial.y.values.last().unwrap();
        Ok(Flow {
            model,
            bc,
            forcing,
            config,
            metrics,
            y_metric,
            p1_metric: p1,
            state: initial,
            initial_end,
            k: 0,
        })
    }

    pub fn state(&self) -> &RodState {
        &self.state
    }

    pub fn model(&self) -> &RodModel {
        &self.model
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn forcing(&self) -> &ForcingField {
        &self.forcing
    }

    pub fn steps_taken(&self) -> usize {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.config.tau
    }

    /// Energy of the current state under the field active at the current time.
    pub fn energy(&self) -> Result<EnergyBreakdown> {
        self.model.energy(&self.state, &self.forcing.at(self.time()))
    }

    /// Rows shared by the three substeps: tangency at free nodes plus
    /// homogeneous or lifted boundary rows. `stride`/`offset` locate the
    /// constrained 3-vector of node `z` at `stride·z + offset`.
    fn rows(
        &self,
        vectors: &[Vector3<f64>],
        ends: &[EndCondition; 2],
        stride: usize,
        offset: usize,
        hermite: bool,
        lift: Option<Vector3<f64>>,
    ) -> (Vec<SparseRow>, Vec<f64>) {
        let n = vectors.len();
        let last = n - 1;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let pinned = |z: usize| -> bool {
            let j = if z == 0 { 0 } else if z == last { 1 } else { return false };
            match ends[j] {
                EndCondition::Free => false,
                EndCondition::Fixed => !hermite,
                EndCondition::Clamped => true,
            }
        };
        for (z, v) in vectors.iter().enumerate() {
            if pinned(z) || (self.bc.periodic && z == last) {
                continue;
            }
            let mut row = SparseRow::new();
            for c in 0..3 {
                row.push(stride * z + offset + c, v[c]);
            }
            rows.push(row);
            rhs.push(0.0);
        }
        for (j, z) in [(0, 0), (1, last)] {
            let cond = ends[j];
            if cond == EndCondition::Free {
                continue;
            }
            // Prescribed value: centerline value dofs for Hermite fields.
            let g = if j == 1 { lift.unwrap_or_else(Vector3::zeros) } else { Vector3::zeros() };
            for c in 0..3 {
                rows.push(SparseRow::unit(stride * z + c));
                rhs.push(g[c]);
            }
            if hermite && cond == EndCondition::Clamped {
                for c in 0..3 {
                    rows.push(SparseRow::unit(stride * z + offset + c));
                    rhs.push(0.0);
                }
            }
        }
        if self.bc.periodic {
            let width = if hermite { 6 } else { 3 };
            for c in 0..width {
                let mut row = SparseRow::new();
                row.push(c, 1.0);
                row.push(stride * last + c, -1.0);
                rows.push(row);
                rhs.push(0.0);
            }
        }
        (rows, rhs)
    }

    fn solve(
        &self,
        a: UpperCsc,
        rows: Vec<SparseRow>,
        rhs_rows: &[f64],
        grad: &[f64],
        what: &str,
        t: f64,
    ) -> Result<(Vec<f64>, f64, f64)> {
        let step_err = |message: String| Error::StepFailed { step: self.k + 1, t, message };
        let problem = SaddlePoint::new(a, rows);
        let factor = problem.factor(None).map_err(|e| step_err(format!("{what}: {e}")))?;
        let f: Vec<f64> = grad.iter().map(|g| -g).collect();
        let sol = factor.solve(&f, rhs_rows).map_err(|e| step_err(format!("{what}: {e}")))?;
        let dmax = sol.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cres = problem
            .rows
            .iter()
            .zip(rhs_rows)
            .map(|(r, g)| (r.dot(&sol.x) - g).abs() / r.norm())
            .fold(0.0f64, f64::max)
            / (1.0 + dmax);
        if !(sol.report.residual <= self.config.abort_residual) || !(cres <= self.config.abort_residual) {
            return Err(step_err(format!(
                "{what}: residual {:e}, constraint residual {cres:e}",
                sol.report.residual
            )));
        }
        Ok((sol.x, sol.report.residual, cres))
    }

    /// Performs one full `y`, `b`, `n̂` sweep.
    pub fn step(&mut self) -> Result<StepReport> {
        let tau = self.config.tau;
        let k = self.k + 1;
        let t = k as f64 * tau;
        let f = self.forcing.at(t);
        let model = &self.model;
        let n = self.state.n_nodes();

        // Centerline.
        let mut a = self.y_metric.clone();
        model.add_y_implicit(&mut a, &self.state.b, tau);
        let lift = moving_bc_update(&self.bc, &self.initial_end, t).map(|target| (target - self.state.y.values[n - 1]) / tau);
        let (rows, g) = self.rows(&self.state.y.derivs, &self.bc.y, 6, 3, true, lift);
        let grad = model.gradient(&self.state, &f)?;
        let (dy, r1, c1) = self.solve(a.build(), rows, &g, &grad.y, "centerline", t)?;
        let mut next = self.state.clone();
        next.y = HermiteField::from_dofs(&axpy(&self.state.y.to_dofs(), tau, &dy));

        // Frame vector.
        let mut a = self.p1_metric.clone();
        model.add_b_implicit(&mut a, &next.y, tau);
        let (rows, g) = self.rows(&next.b.values, &self.bc.b, 3, 0, false, None);
        let grad = model.gradient(&next, &f)?;
        let (db, r2, c2) = self.solve(a.build(), rows, &g, &grad.b, "frame", t)?;
        next.b = P1Field::from_dofs(&axpy(&next.b.to_dofs(), tau, &db));

        // Director.
        let mut a = self.p1_metric.clone();
        model.add_n_implicit(&mut a, &next.y, &next.b, tau);
        let (rows, g) = self.rows(&next.nhat.values, &self.bc.nhat, 3, 0, false, None);
        let grad = model.gradient(&next, &f)?;
        let (dn, r3, c3) = self.solve(a.build(), rows, &g, &grad.n, "director", t)?;
        next.nhat = P1Field::from_dofs(&axpy(&next.nhat.to_dofs(), tau, &dn));

        let norms = [
            self.metrics.y.bilinear(&dy, &dy).max(0.0).sqrt(),
            self.metrics.x.bilinear(&db, &db).max(0.0).sqrt(),
            self.metrics.z().bilinear(&dn, &dn).max(0.0).sqrt(),
        ];
        let energy = model.energy(&next, &f)?;
        if !energy.flow_energy().is_finite() {
            return Err(Error::StepFailed { step: k, t, message: "energy is not finite".into() });
        }
        self.state = next;
        self.k = k;
        Ok(StepReport {
            k,
            t,
            dy,
            db,
            dn,
            norms,
            energy,
            solver_residual: r1.max(r2).max(r3),
            constraint_residual: c1.max(c2).max(c3),
        })
    }

    /// Steps until convergence or the final time. The observer sees every
    /// accepted step together with the state before it and may return
    /// `false` to stop early.
    pub fn run(&mut self, mut observer: impl FnMut(&RodState, &StepReport, &RodState) -> bool) -> Result<StopReason> {
        let n_steps = self.config.n_steps();
        while self.k < n_steps {
            let before = self.state.clone();
            let report = self.step()?;
            if !observer(&before, &report, &self.state) {
                return Ok(StopReason::Interrupted);
            }
            let settled = self.forcing.is_settled_after(report.t) && self.bc.is_settled_after(report.t);
            if settled && report.update_norm() <= self.config.eps_stop {
                return Ok(StopReason::Converged);
            }
        }
        Ok(StopReason::FinalTime)
    }
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

/// Per-step energy, update norms and constraint defects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub k: usize,
    pub energy: EnergyBreakdown,
    pub norms: [f64; 3],
    /// Largest `| |v(z)| − 1 |` for `y′`, `b`, `n̂`.
    pub unit_defects: [f64; 3],
}

/// The recorded history of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub rows: Vec<TraceRow>,
}

impl FlowTrace {
    pub const HEADER: &'static str = "t,k,E_total,E_bend,E_twist,E_FO,E_pen,E_G,E_res,E_N,E_force,E_anchor,\
dty_Y,dtb_X,dtn_Z,max_abs_y1_minus_1,max_abs_b_minus_1,max_abs_n_minus_1";

    pub fn push(&mut self, report: &StepReport, state: &RodState) {
        self.rows.push(TraceRow {
            t: report.t,
            k: report.k,
            energy: report.energy,
            norms: report.norms,
            unit_defects: state.unit_defects(),
        });
    }

    pub fn csv_row(r: &TraceRow) -> String {
        let e = &r.energy;
        let vals = [
            e.total,
            e.bending,
            e.twist,
            e.frank_oseen,
            e.penalty,
            e.anisotropy,
            e.residual,
            e.coupling,
            e.forcing,
            e.anchoring,
            r.norms[0],
            r.norms[1],
            r.norms[2],
            r.unit_defects[0],
            r.unit_defects[1],
            r.unit_defects[2],
        ];
        let mut s = format!("{},{}", r.t, r.k);
        for v in vals {
            s.push_str(&format!(",{v:e}"));
        }
        s
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(out, "{}", Self::csv_row(r))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path.as_ref(), e))
    }
}
