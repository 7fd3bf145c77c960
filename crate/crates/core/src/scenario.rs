//! Run configurations, presets, output writers and parameter sweeps.
//!
//! A [`ScenarioConfig`] is a TOML (or JSON) document. [`run_scenario`] checks
//! everything before it touches the output directory, then writes
//!
//! * `trace.csv`: one row per step, columns of [`FlowTrace::HEADER`];
//! * `snapshots.jsonl`: one [`Snapshot`] per line, every `snapshot_dt`, at
//!   every forcing or boundary switch and at the end;
//! * `snapshots/snap_NNNNN.vtk` when VTK output is on;
//! * `manifest.json`: the resolved config with inline coefficients, which
//!   can be fed back to `run` to repeat the run bit for bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix5, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_section::{CoefficientsFile, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::fem1d::{HermiteField, Mesh1D, P1Field};
use crate::flow::{BoundaryConditions, Flow, FlowConfig, FlowTrace, MovingEnd, StopReason};
use crate::rod::{AnchoringMode, AnchoringSpec, EnergyBreakdown, ForcingField, ModelParams, RodModel, RodState};

/// Rod length and target element size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodSpec {
    pub length: f64,
    pub h: f64,
}

/// Where the effective coefficients come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSource {
    /// Closed-form moduli and coupling of the unit-area disc with half-disc
    /// subdomain at `λ = 1000, μ = 1`. `E_res` is the tabulated matrix
    /// unless `eres_file` names a JSON file with an `Eres` entry.
    DiscHalfplane {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eres_file: Option<PathBuf>,
    },
    /// A coefficients JSON file as written by `lcerod coefficients`.
    File { path: PathBuf },
    Inline { coefficients: CoefficientsFile },
}

impl Default for CoefficientSource {
    fn default() -> Self {
        CoefficientSource::DiscHalfplane { eres_file: None }
    }
}

#[derive(Deserialize)]
struct EresOnly {
    #[serde(rename = "Eres")]
    eres: Vec<Vec<f64>>,
}

impl CoefficientSource {
    pub fn resolve(&self) -> Result<EffectiveCoefficients> {
        match self {
            CoefficientSource::DiscHalfplane { eres_file } => {
                let mut c = EffectiveCoefficients::disc_halfplane_reference();
                if let Some(path) = eres_file {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let e: EresOnly =
                        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                    if e.eres.len() != 5 || e.eres.iter().any(|r| r.len() != 5) {
                        return Err(Error::Config(format!("{}: Eres must be 5×5", path.display())));
                    }
                    c.eres = Matrix5::from_fn(|i, j| e.eres[i][j]);
                    c.source = format!("disc-halfplane: closed-form moduli and K_pre, E_res from {}", path.display());
                    c.validate()?;
                }
                Ok(c)
            }
            CoefficientSource::File { path } => {
                let mut c = EffectiveCoefficients::read_json(path)?;
                c.source = format!("{} ({})", path.display(), c.source);
                Ok(c)
            }
            CoefficientSource::Inline { coefficients } => coefficients.clone().into_coefficients(),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match self {
            CoefficientSource::DiscHalfplane { eres_file: Some(p) } | CoefficientSource::File { path: p } => fix(p),
            _ => {}
        }
    }
}

/// Coupling strength, Frank constant and orthogonality penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub rbar: f64,
    pub kappa: f64,
    pub eps: f64,
}

/// Initial configuration: a straight centerline `y(x) = x e₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Constant frame vector `b` and director `n̂`.
    Straight { b: [f64; 3], nhat: [f64; 3] },
    /// `b(x) = cos(θ) e₂ + sin(θ) e₃` with `θ = 2π·turns·x/L`, so the frame
    /// makes `turns` full revolutions about the centerline.
    Twisted { turns: f64, nhat: [f64; 3] },
}

impl InitialState {
    pub fn build(&self, mesh: &Mesh1D) -> Result<RodState> {
        let unit = |v: &[f64; 3], what: &str| -> Result<Vector3<f64>> {
            let v = Vector3::from(*v);
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("initial {what} must be a unit vector, got {v:?}")));
            }
            Ok(v)
        };
        match self {
            InitialState::Straight { b, nhat } => {
                let b = unit(b, "b")?;
                if b.x.abs() > 1e-12 {
                    return Err(Error::Config("initial b must be orthogonal to the tangent e1".into()));
                }
                Ok(RodState::straight(mesh, b, unit(nhat, "nhat")?))
            }
            InitialState::Twisted { turns, nhat } => {
                if !turns.is_finite() {
                    return Err(Error::Config("number of turns must be finite".into()));
                }
                let mut s = RodState::straight(mesh, Vector3::y(), unit(nhat, "nhat")?);
                let w = 2.0 * std::f64::consts::PI * turns / mesh.length();
                s.b = P1Field::interpolate(mesh, |x| Vector3::new(0.0, (w * x).cos(), (w * x).sin()));
                Ok(s)
            }
        }
    }
}

/// Weak anchoring of `n̂`; `target` is a constant unit vector if given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnchoringConfig {
    pub mode: AnchoringMode,
    #[serde(default)]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
}

impl AnchoringConfig {
    pub fn build(&self, mesh: &Mesh1D) -> AnchoringSpec {
        AnchoringSpec {
            mode: self.mode,
            weight: self.weight,
            target: self.target.map(|t| P1Field::constant(mesh, Vector3::from(t))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Snapshot spacing in time; switches of forcing or boundary data are
    /// always captured in addition.
    #[serde(default = "default_snapshot_dt")]
    pub snapshot_dt: f64,
    #[serde(default)]
    pub vtk: bool,
}

fn default_snapshot_dt() -> f64 {
    1.0
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { snapshot_dt: default_snapshot_dt(), vtk: false }
    }
}

/// Everything needed to run one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub rod: RodSpec,
    #[serde(default)]
    pub coefficients: CoefficientSource,
    pub model: ModelSpec,
    pub initial: InitialState,
    #[serde(default)]
    pub boundary: BoundaryConditions,
    #[serde(default)]
    pub forcing: ForcingField,
    #[serde(default)]
    pub anchoring: AnchoringConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Command-line style overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub rbar: Option<f64>,
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
    pub h: Option<f64>,
    pub tau: Option<f64>,
    pub t_final: Option<f64>,
    pub snapshot_dt: Option<f64>,
    pub vtk: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ScenarioConfig) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.model.rbar, self.rbar);
        set(&mut c.model.kappa, self.kappa);
        set(&mut c.model.eps, self.eps);
        set(&mut c.rod.h, self.h);
        set(&mut c.flow.tau, self.tau);
        set(&mut c.flow.t_final, self.t_final);
        set(&mut c.output.snapshot_dt, self.snapshot_dt);
        if let Some(v) = self.vtk {
            c.output.vtk = v;
        }
    }
}

/// A config turned into solver objects.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub coefficients: EffectiveCoefficients,
    pub model: RodModel,
    pub initial: RodState,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// JSON input may be a bare config or a run manifest with a `config` entry.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(c) = v.get_mut("config") {
            v = c.take();
        }
        serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a `.json` or TOML file; relative paths inside are taken
    /// relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut c = if is_json { Self::from_json_str(&text) } else { Self::from_toml_str(&text) }
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        c.coefficients.rebase(dir);
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn mesh(&self) -> Result<Mesh1D> {
        if !(self.rod.length > 0.0 && self.rod.length.is_finite()) {
            return Err(Error::Config(format!("rod length must be positive, got {}", self.rod.length)));
        }
        if !(self.rod.h > 0.0 && self.rod.h <= self.rod.length) {
            return Err(Error::Config(format!("mesh size must be in (0, L], got {}", self.rod.h)));
        }
        Mesh1D::with_spacing(self.rod.length, self.rod.h)
    }

    /// Validates the config and builds model and initial state. Reads
    /// coefficient files but writes nothing.
    pub fn prepare(&self) -> Result<Prepared> {
        if !(self.output.snapshot_dt > 0.0) {
            return Err(Error::Config(format!("snapshot spacing must be positive, got {}", self.output.snapshot_dt)));
        }
        self.flow.validate()?;
        self.boundary.validate()?;
        self.forcing.validate()?;
        let mesh = self.mesh()?;
        let coefficients = self.coefficients.resolve()?;
        let params = ModelParams::from_coefficients(&coefficients, self.model.rbar, self.model.kappa, self.model.eps)?;
        let anchoring = self.anchoring.build(&mesh);
        let model = RodModel::new(mesh.clone(), params, anchoring)?;
        let initial = self.initial.build(&mesh)?;
        Ok(Prepared { coefficients, model, initial })
    }

    /// The same run with the coefficients written out inline.
    pub fn resolved(&self, coefficients: &EffectiveCoefficients) -> Self {
        ScenarioConfig { coefficients: CoefficientSource::Inline { coefficients: coefficients.to_file() }, ..self.clone() }
    }
}

/// Straight cantilever from `(0,0,0)` to `(2,0,0)`, clamped at the left end,
/// driven by a uniform field that alternates between `e₂` on odd and `e₁`
/// on even intervals of length 10, up to `T = 60`.
pub fn preset_magnetic_bending() -> ScenarioConfig {
    ScenarioConfig {
        name: "magnetic-bending".into(),
        rod: RodSpec { length: 2.0, h: 1.0 / 200.0 },
        coefficients: CoefficientSource::default(),
        model: ModelSpec { rbar: 1.0, kappa: 1.0, eps: 1.0 / 200.0 },
        initial: InitialState::Straight { b: [0.0, 1.0, 0.0], nhat: [0.0, 1.0, 0.0] },
        boundary: BoundaryConditions::cantilever(),
        forcing: ForcingField::Alternating { interval: 10.0, odd: [0.0, 1.0, 0.0], even: [1.0, 0.0, 0.0] },
        anchoring: AnchoringConfig::default(),
        flow: FlowConfig { tau: 1.0 / 400.0, eps_stop: 1e-6, t_final: 60.0, abort_residual: 1e-6 },
        output: OutputSpec::default(),
    }
}

/// Rod clamped at both ends with the frame turned twice about the
/// centerline and `n = b`; the right end moves to `(1,0,0)` during
/// `t ∈ [0, 1]` and is then held while the rod relaxes up to `T = 50`.
pub fn preset_buckling(rbar: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "buckling".into(),
        rod: RodSpec { length: 2.0, h: 1.0 / 200.0 },
        coefficients: CoefficientSource::default(),
        model: ModelSpec { rbar, kappa: 0.4, eps: 1.0 / 200.0 },
        initial: InitialState::Twisted { turns: 2.0, nhat: [0.0, 1.0, 0.0] },
        boundary: BoundaryConditions {
            moving_end: Some(MovingEnd { velocity: [-1.0, 0.0, 0.0], until: 1.0 }),
            ..BoundaryConditions::clamped_both()
        },
        forcing: ForcingField::None,
        anchoring: AnchoringConfig::default(),
        flow: FlowConfig { tau: 1.0 / 400.0, eps_stop: 1e-6, t_final: 50.0, abort_residual: 1e-6 },
        output: OutputSpec::default(),
    }
}

/// Names and one-line descriptions of the built-in presets.
pub const PRESETS: [(&str, &str); 2] = [
    ("magnetic-bending", "cantilever in a field alternating between e2 and e1 every 10 time units, T = 60"),
    ("buckling", "doubly twisted rod, both ends clamped, right end pushed to x = 1, T = 50 (rbar = 1 unless overridden)"),
];

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "magnetic-bending" => Ok(preset_magnetic_bending()),
        "buckling" => Ok(preset_buckling(1.0)),
        _ => {
            let known: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            Err(Error::Config(format!("unknown preset '{name}', expected one of {known:?}")))
        }
    }
}

/// State of the rod at one time, in global coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub k: usize,
    pub x: Vec<f64>,
    pub y: Vec<[f64; 3]>,
    pub dy: Vec<[f64; 3]>,
    pub b: Vec<[f64; 3]>,
    pub nhat: Vec<[f64; 3]>,
    /// `n = R n̂` with `R = (y′, b, y′×b)`.
    pub n: Vec<[f64; 3]>,
    /// `|y″|` at element midpoints.
    pub curvature: Vec<f64>,
}

impl Snapshot {
    pub fn capture(mesh: &Mesh1D, state: &RodState, t: f64, k: usize) -> Self {
        let arr = |v: &Vec<Vector3<f64>>| v.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
        Snapshot {
            t,
            k,
            x: mesh.nodes().to_vec(),
            y: arr(&state.y.values),
            dy: arr(&state.y.derivs),
            b: arr(&state.b.values),
            nhat: arr(&state.nhat.values),
            n: arr(&state.global_director()),
            curvature: midpoint_curvature(mesh, &state.y),
        }
    }

    /// Legacy VTK polydata: the centerline as `ne` segments, nodal director
    /// and frame vector, and curvature per segment.
    pub fn to_vtk(&self) -> String {
        let n = self.y.len();
        let mut s = String::new();
        writeln!(s, "# vtk DataFile Version 3.0\nlcerod snapshot t={} k={}\nASCII\nDATASET POLYDATA", self.t, self.k)
            .unwrap();
        writeln!(s, "POINTS {n} double").unwrap();
        for p in &self.y {
            writeln!(s, "{:e} {:e} {:e}", p[0], p[1], p[2]).unwrap();
        }
        writeln!(s, "LINES {} {}", n - 1, 3 * (n - 1)).unwrap();
        for i in 0..n - 1 {
            writeln!(s, "2 {} {}", i, i + 1).unwrap();
        }
        writeln!(s, "POINT_DATA {n}").unwrap();
        for (name, data) in [("director", &self.n), ("frame_b", &self.b), ("tangent", &self.dy)] {
            writeln!(s, "VECTORS {name} double").unwrap();
            for p in data {
                writeln!(s, "{:e} {:e} {:e}", p[0], p[1], p[2]).unwrap();
            }
        }
        writeln!(s, "CELL_DATA {}\nSCALARS curvature double 1\nLOOKUP_TABLE default", n - 1).unwrap();
        for c in &self.curvature {
            writeln!(s, "{c:e}").unwrap();
        }
        s
    }
}

pub fn midpoint_curvature(mesh: &Mesh1D, y: &HermiteField) -> Vec<f64> {
    (0..mesh.n_elements()).map(|e| y.eval_local(mesh, e, 0.5)[2].norm()).collect()
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub stop_reason: String,
    pub steps: usize,
    pub t_end: f64,
    pub wall_seconds: f64,
    pub snapshots: usize,
    pub final_energy: EnergyBreakdown,
    pub max_unit_defects: [f64; 3],
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    coefficient_provenance: &'a str,
    n_elements: usize,
    h: f64,
    config: &'a ScenarioConfig,
    result: &'a RunSummary,
    files: Vec<String>,
}

struct Outputs {
    trace: BufWriter<File>,
    trace_path: PathBuf,
    snaps: BufWriter<File>,
    snaps_path: PathBuf,
    vtk_dir: Option<PathBuf>,
    n_snaps: usize,
}

impl Outputs {
    fn create(dir: &Path, vtk: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<(BufWriter<File>, PathBuf)> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok((BufWriter::new(f), p))
        };
        let (mut trace, trace_path) = open("trace.csv")?;
        writeln!(trace, "{}", FlowTrace::HEADER).map_err(|e| Error::io(&trace_path, e))?;
        let (snaps, snaps_path) = open("snapshots.jsonl")?;
        let vtk_dir = if vtk {
            let d = dir.join("snapshots");
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            Some(d)
        } else {
            None
        };
        Ok(Outputs { trace, trace_path, snaps, snaps_path, vtk_dir, n_snaps: 0 })
    }

    fn snapshot(&mut self, s: &Snapshot) -> Result<()> {
        let line = serde_json::to_string(s).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(self.snaps, "{line}").map_err(|e| Error::io(&self.snaps_path, e))?;
        if let Some(d) = &self.vtk_dir {
            let p = d.join(format!("snap_{:05}.vtk", self.n_snaps));
            std::fs::write(&p, s.to_vtk()).map_err(|e| Error::io(&p, e))?;
        }
        self.n_snaps += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<usize> {
        self.trace.flush().map_err(|e| Error::io(&self.trace_path, e))?;
        self.snaps.flush().map_err(|e| Error::io(&self.snaps_path, e))?;
        Ok(self.n_snaps)
    }
}

/// Whether the step ending at `t` should be captured: it is the first step
/// at or past a multiple of `dt`, or a schedule switch falls into it.
fn wants_snapshot(config: &ScenarioConfig, t: f64, tau: f64) -> bool {
    let (lo, hi) = (t - 0.5 * tau, t + 0.5 * tau);
    let dt = config.output.snapshot_dt;
    if (hi / dt).floor() > (lo / dt).floor() {
        return true;
    }
    if !config.forcing.breakpoints_in(lo, hi).is_empty() {
        return true;
    }
    config.boundary.moving_end.is_some_and(|m| m.until > lo && m.until <= hi)
}

/// Runs one scenario and writes its outputs into `out_dir`. Configuration
/// errors are reported before anything is created.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    let prepared = config.prepare()?;
    let Prepared { coefficients, model, initial } = prepared;
    let mesh = model.mesh.clone();
    let mut flow = Flow::new(model, initial, config.boundary.clone(), config.forcing.clone(), config.flow)?;
    let start = Instant::now();
    let mut out = Outputs::create(out_dir, config.output.vtk)?;
    out.snapshot(&Snapshot::capture(&mesh, flow.state(), 0.0, 0))?;

    let tau = config.flow.tau;
    let mut io_error = None;
    let mut last = (0.0, 0);
    let mut max_defects = flow.state().unit_defects();
    log::info!("{}: {} elements, {} steps", config.name, mesh.n_elements(), config.flow.n_steps());
    let stop = flow.run(|_, report, state| {
        let mut row = FlowTrace::default();
        row.push(report, state);
        let r = &row.rows[0];
        for (m, d) in max_defects.iter_mut().zip(r.unit_defects) {
            *m = m.max(d);
        }
        last = (report.t, report.k);
        let res = writeln!(out.trace, "{}", FlowTrace::csv_row(r)).map_err(|e| Error::io(&out.trace_path, e));
        let res = res.and_then(|_| {
            if wants_snapshot(config, report.t, tau) {
                out.snapshot(&Snapshot::capture(&mesh, state, report.t, report.k))
            } else {
                Ok(())
            }
        });
        match res {
            Ok(()) => true,
            Err(e) => {
                io_error = Some(e);
                false
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let stop = stop?;
    let (t_end, k_end) = last;
    if k_end > 0 && !wants_snapshot(config, t_end, tau) {
        out.snapshot(&Snapshot::capture(&mesh, flow.state(), t_end, k_end))?;
    }
    let snapshots = out.finish()?;
    let summary = RunSummary {
        name: config.name.clone(),
        stop_reason: match stop {
            StopReason::Converged => "converged",
            StopReason::FinalTime => "final_time",
            StopReason::Interrupted => "interrupted",
        }
        .into(),
        steps: flow.steps_taken(),
        t_end,
        wall_seconds: start.elapsed().as_secs_f64(),
        snapshots,
        final_energy: flow.energy()?,
        max_unit_defects: max_defects,
    };
    let mut files = vec!["trace.csv".to_string(), "snapshots.jsonl".to_string()];
    if config.output.vtk {
        files.push("snapshots/".into());
    }
    let resolved = config.resolved(&coefficients);
    let manifest = Manifest {
        program: "lcerod",
        version: env!("CARGO_PKG_VERSION"),
        coefficient_provenance: &coefficients.source,
        n_elements: mesh.n_elements(),
        h: mesh.h(),
        config: &resolved,
        result: &summary,
        files,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    log::info!("{}: {} after {} steps ({:.1} s)", config.name, summary.stop_reason, summary.steps, summary.wall_seconds);
    Ok(summary)
}

/// A config field that a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Rbar,
    Kappa,
    Eps,
    H,
    Tau,
    TFinal,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Rbar => "rbar",
            SweepParam::Kappa => "kappa",
            SweepParam::Eps => "eps",
            SweepParam::H => "h",
            SweepParam::Tau => "tau",
            SweepParam::TFinal => "T",
        }
    }

    pub fn set(self, c: &mut ScenarioConfig, v: f64) {
        match self {
            SweepParam::Rbar => c.model.rbar = v,
            SweepParam::Kappa => c.model.kappa = v,
            SweepParam::Eps => c.model.eps = v,
            SweepParam::H => c.rod.h = v,
            SweepParam::Tau => c.flow.tau = v,
            SweepParam::TFinal => c.flow.t_final = v,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rbar" => SweepParam::Rbar,
            "kappa" => SweepParam::Kappa,
            "eps" => SweepParam::Eps,
            "h" => SweepParam::H,
            "tau" => SweepParam::Tau,
            "T" | "t_final" => SweepParam::TFinal,
            _ => return Err(Error::Config(format!("cannot sweep over '{s}' (rbar, kappa, eps, h, tau, T)"))),
        })
    }
}

/// One sweep member: its directory and either a summary or the error.
#[derive(Debug)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: PathBuf,
    pub outcome: Result<RunSummary>,
}

/// Runs the template once per distinct value, in parallel, each into
/// `out_dir/<param>_<value>`, and writes `out_dir/summary.csv`. Duplicate
/// values are dropped with a warning; an empty list does nothing. A failed
/// member is recorded and the others continue.
pub fn sweep(template: &ScenarioConfig, param: SweepParam, values: &[f64], out_dir: &Path) -> Result<Vec<SweepEntry>> {
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values {
        if distinct.iter().any(|d| d.to_bits() == v.to_bits()) {
            log::warn!("dropping duplicate {} = {v}", param.name());
        } else {
            distinct.push(v);
        }
    }
    if distinct.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<SweepEntry> = distinct
        .par_iter()
        .map(|&v| {
            let mut c = template.clone();
            param.set(&mut c, v);
            c.name = format!("{}_{}_{v}", template.name, param.name());
            let dir = out_dir.join(format!("{}_{v}", param.name()));
            let outcome = run_scenario(&c, &dir);
            if let Err(e) = &outcome {
                log::error!("{} = {v}: {e}", param.name());
            }
            SweepEntry { value: v, dir, outcome }
        })
        .collect();
    write_sweep_summary(&entries, param, &out_dir.join("summary.csv"))?;
    Ok(entries)
}

fn write_sweep_summary(entries: &[SweepEntry], param: SweepParam, path: &Path) -> Result<()> {
    let mut s = format!(
        "{},status,stop_reason,steps,t_end,E_total,E_bend,E_twist,E_FO,E_pen,E_G,E_res,E_N,E_force,E_anchor,wall_seconds,error\n",
        param.name()
    );
    for e in entries {
        match &e.outcome {
            Ok(r) => {
                let f = &r.final_energy;
                writeln!(
                    s,
                    "{},ok,{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:.3},",
                    e.value,
                    r.stop_reason,
                    r.steps,
                    r.t_end,
                    f.total,
                    f.bending,
                    f.twist,
                    f.frank_oseen,
                    f.penalty,
                    f.anisotropy,
                    f.residual,
                    f.coupling,
                    f.forcing,
                    f.anchoring,
                    r.wall_seconds
                )
                .unwrap();
            }
            Err(err) => {
                let msg = err.to_string().replace(['"', '\n'], "'");
                writeln!(s, "{},failed,,,,,,,,,,,,,,,\"{msg}\"", e.value).unwrap();
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV written by [`run_scenario`] into columns keyed by header.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse(format!("{}: empty trace", path.display())))?;
    let mut cols: Vec<(String, Vec<f64>)> = header.split(',').map(|h| (h.to_string(), Vec::new())).collect();
    for (i, l) in lines.enumerate() {
        let vals: Vec<&str> = l.split(',').collect();
        if vals.len() != cols.len() {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), i + 2, vals.len())));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.1.push(v.parse().map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), i + 2)))?);
        }
    }
    Ok(cols)
}
