use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lcerod::cross_section::{
    assemble_coefficients_with, CorrectorSystem, CrossSectionMesh, ElementOrder, IsotropicLaw,
};
use lcerod::scenario::{self, Overrides, ScenarioConfig, SweepParam, PRESETS};

#[derive(Parser)]
#[command(name = "lcerod", version, about = "Nematic LCE rods: cross-section coefficients and gradient-flow runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute rod coefficients of a cross-section and write them as JSON.
    Coefficients(CoefficientsArgs),
    /// Run one scenario.
    Run(RunArgs),
    /// Run a scenario for several values of one parameter, in parallel.
    Sweep(SweepArgs),
    /// Built-in scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Print preset names and descriptions.
    List,
    /// Print a preset as a TOML config.
    Show { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Section {
    /// Unit-area disc, nematic upper half.
    Disc,
    /// Unit square, nematic upper half.
    Square,
}

#[derive(Args)]
struct CoefficientsArgs {
    /// Built-in cross-section (ignored with --mesh).
    #[arg(long, value_enum, default_value = "disc")]
    section: Section,
    /// Mesh file (`vertices N ... triangles M ...` text format).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Refinement level of the built-in mesh (disc: 6·(8·2^level)² triangles).
    #[arg(long, default_value_t = 3)]
    refine: u32,
    #[arg(long, default_value_t = 1000.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Element order, p1 or p2.
    #[arg(long, default_value = "p2")]
    order: String,
    /// Also write the mesh used.
    #[arg(long)]
    write_mesh: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Config file (TOML, or JSON including run manifests).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see `presets list`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    rbar: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Element size along the rod.
    #[arg(long)]
    h: Option<f64>,
    /// Time step.
    #[arg(long)]
    tau: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    snapshot_dt: Option<f64>,
    /// Write VTK polylines next to the JSON snapshots.
    #[arg(long)]
    vtk: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => ScenarioConfig::load(p)?,
            (None, Some(name)) => scenario::preset(name)?,
            (None, None) => bail!("either --config or --preset is required"),
        };
        Overrides {
            rbar: self.rbar,
            kappa: self.kappa,
            eps: self.eps,
            h: self.h,
            tau: self.tau,
            t_final: self.t_final,
            snapshot_dt: self.snapshot_dt,
            vtk: self.vtk.then_some(true),
        }
        .apply(&mut c);
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Parameter to vary: rbar, kappa, eps, h, tau or T.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Vec<f64>,
    /// Parent directory; one subdirectory per value plus summary.csv.
    #[arg(long)]
    out: PathBuf,
}

fn coefficients(a: &CoefficientsArgs) -> Result<()> {
    let law = IsotropicLaw::new(a.lambda, a.mu)?;
    let order: ElementOrder = a.order.parse()?;
    let mesh = match (&a.mesh, a.section) {
        (Some(p), _) => CrossSectionMesh::read(p)?,
        (None, Section::Disc) => CrossSectionMesh::disc_halfplane_level(a.refine)?,
        (None, Section::Square) => CrossSectionMesh::square_halfplane(8 << a.refine.min(6))?,
    };
    if let Some(p) = &a.write_mesh {
        mesh.write(p)?;
    }
    log::info!("{} triangles, P{} elements", mesh.n_triangles(), order.degree());
    let system = CorrectorSystem::new(&mesh, law, order)?;
    let c = assemble_coefficients_with(&system, &mesh)?;
    c.write_json(&a.out)?;
    println!("q = [{:.6e}, {:.6e}, {:.6e}]", c.q[0], c.q[1], c.q[2]);
    println!("M =\n{:.6}", c.m);
    println!("Eres =\n{:.6}", c.eres);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let c = a.scenario.load()?;
    let s = scenario::run_scenario(&c, &a.out).with_context(|| format!("run '{}' failed", c.name))?;
    println!(
        "{}: {} after {} steps (t = {}), E = {:.6e}, {} snapshots, {:.1} s",
        s.name, s.stop_reason, s.steps, s.t_end, s.final_energy.total, s.snapshots, s.wall_seconds
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let c = a.scenario.load()?;
    let param: SweepParam = a.param.parse()?;
    let entries = scenario::sweep(&c, param, &a.values, &a.out)?;
    if entries.is_empty() {
        println!("no values given, nothing to do");
        return Ok(());
    }
    let mut failed = 0;
    for e in &entries {
        match &e.outcome {
            Ok(s) => println!("{} = {}: {} at t = {}, E = {:.6e}", param.name(), e.value, s.stop_reason, s.t_end, s.final_energy.total),
            Err(err) => {
                failed += 1;
                println!("{} = {}: failed: {err}", param.name(), e.value);
            }
        }
    }
    println!("wrote {}", a.out.join("summary.csv").display());
    if failed > 0 {
        bail!("{failed} of {} runs failed", entries.len());
    }
    Ok(())
}

fn presets(action: &PresetAction) -> Result<()> {
    match action {
        PresetAction::List => {
            for (name, desc) in PRESETS {
                println!("{name:18} {desc}");
            }
        }
        PresetAction::Show { name } => print!("{}", scenario::preset(name)?.to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Coefficients(a) => coefficients(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Presets { action } => presets(action),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
