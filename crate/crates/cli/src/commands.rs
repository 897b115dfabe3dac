use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::Args;
use pfrecon::config::RunConfig;
use pfrecon::integrator::{solve_into, Snapshot, SnapshotSink};
use pfrecon::io::{self, HistoryWriter};
use pfrecon::metrics::{metrics as compare, MetricsConfig};
use pfrecon::reconstruction::{
    initial_guess, reconstruct as run_reconstruction, IterationView, Measurement, Observer,
    Problem, Truth,
};
use pfrecon::spline::{transfer, Field, SplineSpace};
use pfrecon::synthetic::{add_noise, initial_state, make_ground_truth, GroundTruth};
use pfrecon::systems::{GalerkinSystem, SystemKind};
use pfrecon::Error;

use crate::Global;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome = std::result::Result<(), Failure>;

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: error.into(),
    }
}

/// Input and configuration problems exit with 2, everything else with 3.
fn classify(error: anyhow::Error) -> Failure {
    let code = match error.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::Config(_)
            | Error::Format(_)
            | Error::DegenerateMeasurement(_)
            | Error::ZeroReferenceVolume
            | Error::SpaceMismatch
            | Error::Dimension { .. },
        ) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    };
    Failure { code, error }
}

trait OrFail<T> {
    fn or_fail(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for std::result::Result<T, E> {
    fn or_fail(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| classify(e.into()))
    }
}

/// Effective configuration and output location of one run.
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    fn load(
        global: &Global,
        extra: Option<&Path>,
        out: PathBuf,
    ) -> std::result::Result<Run, Failure> {
        let mut paths: Vec<&Path> = global.config.iter().map(PathBuf::as_path).collect();
        paths.extend(extra);
        let mut cfg = RunConfig::load(&paths).map_err(config_error)?;
        if let Some(seed) = global.seed {
            cfg.seed = seed;
        }
        if let Some(k) = global.dump_stride {
            cfg.output.dump_stride = k;
        }
        let hash = cfg.hash();
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating {}", out.display()))
            .map_err(|e| Failure {
                code: EXIT_SOLVER,
                error: e,
            })?;
        Ok(Run { cfg, hash, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_field(&self, name: &str, field: &Field) -> Outcome {
        io::write_field(self.path(&format!("{name}.pff")), field, Some(&self.hash)).or_fail()?;
        if self.cfg.output.vtk {
            io::write_vtk(
                self.path(&format!("{name}.vtk")),
                &[(name, field)],
                Some(&self.hash),
            )
            .or_fail()?;
        }
        Ok(())
    }

    /// Writes the effective configuration and `run_manifest.txt`.
    fn manifest(&self, entries: &[(&str, String)]) -> Outcome {
        std::fs::write(self.path("effective_config.toml"), self.cfg.canonical())
            .with_context(|| format!("writing {}", self.path("effective_config.toml").display()))
            .map_err(|e| Failure {
                code: EXIT_SOLVER,
                error: e,
            })?;
        io::write_manifest(&self.out, &self.hash, entries).or_fail()
    }

    fn spaces(&self) -> std::result::Result<(Arc<SplineSpace>, Arc<SplineSpace>), Failure> {
        let side = self.cfg.mesh.domain_side;
        let work = SplineSpace::new(self.cfg.mesh.elements_per_side, side).map_err(config_error)?;
        let fine = SplineSpace::new(self.cfg.ground_truth.fine_elements_per_side, side)
            .map_err(config_error)?;
        Ok((work, fine))
    }

    /// Snapshot stride in steps for a stride of `days`.
    fn step_stride(&self) -> std::result::Result<Option<usize>, Failure> {
        let days = self.cfg.output.dump_stride;
        if days == 0 {
            return Ok(None);
        }
        let ratio = days as f64 / self.cfg.time.dt.abs();
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(config_error(anyhow!(
                "dump stride {days} days is not a multiple of dt = {}",
                self.cfg.time.dt
            )));
        }
        Ok(Some(ratio.round() as usize))
    }
}

/// Runs `f` once, or once per scenario overlay with at most `jobs` in flight.
pub fn scenarios<F>(global: &Global, f: F) -> Outcome
where
    F: Fn(&Global, Run) -> Outcome + Sync,
{
    if global.scenarios.is_empty() {
        return f(global, Run::load(global, None, global.out.clone())?);
    }
    let jobs = global.jobs.max(1);
    let results: Vec<Outcome> = std::thread::scope(|scope| {
        let mut results = Vec::new();
        for chunk in global.scenarios.chunks(jobs) {
            let handles: Vec<_> = chunk
                .iter()
                .map(|s| {
                    let f = &f;
                    scope.spawn(move || {
                        let stem = s
                            .file_stem()
                            .map_or("scenario".into(), |x| x.to_string_lossy().into_owned());
                        let run = Run::load(global, Some(s), global.out.join(stem))?;
                        f(global, run)
                    })
                })
                .collect();
            results.extend(
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scenario thread panicked")),
            );
        }
        results
    });
    results.into_iter().find(Result::is_err).unwrap_or(Ok(()))
}

fn ground_truth_for(run: &Run) -> std::result::Result<GroundTruth, Failure> {
    let (_, fine) = run.spaces()?;
    let params = run.cfg.params().map_err(config_error)?;
    let ellipse = run.cfg.ground_truth.ellipse(run.cfg.mesh.domain_side);
    make_ground_truth(&ellipse, &fine, &params, &run.cfg.solver()).or_fail()
}

/// Working-mesh measurement of a reference run, noisy when configured.
fn measurement_of(
    run: &Run,
    gt: &GroundTruth,
) -> std::result::Result<(Field, Option<Field>), Failure> {
    let (work, _) = run.spaces()?;
    let clean = transfer(&gt.phi_meas, &work, true).or_fail()?;
    let noisy = match &run.cfg.noise {
        Some(n) => Some(add_noise(&clean, n, run.cfg.seed).or_fail()?),
        None => None,
    };
    Ok((clean, noisy))
}

pub fn ground_truth(_: &Global, run: Run) -> Outcome {
    let gt = ground_truth_for(&run)?;
    run.write_field("phi0_ref", &gt.phi0)?;
    run.write_field("phi_meas_fine", &gt.phi_meas)?;
    let (clean, noisy) = measurement_of(&run, &gt)?;
    run.write_field("phi_meas", &clean)?;
    if let Some(n) = &noisy {
        run.write_field("phi_meas_noisy", n)?;
    }
    let mut written = 0;
    if let Some(stride) = run.step_stride()? {
        let n = gt.space.n_f();
        for (k, snap) in gt
            .trajectory
            .snapshots()
            .iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0)
        {
            let phi = Field::new(gt.space.clone(), snap.u[..n].to_vec()).or_fail()?;
            run.write_field(&snapshot_name(snap.t), &phi)?;
            written = k;
        }
    }
    run.manifest(&[
        ("command", "ground-truth".into()),
        ("seed", run.cfg.seed.to_string()),
        ("noisy", noisy.is_some().to_string()),
        ("last_dumped_step", written.to_string()),
    ])
}

fn snapshot_name(t: f64) -> String {
    format!("traj_phi_t{t:09.3}")
}

#[derive(Args, Debug)]
pub struct ForwardArgs {
    /// Initial phase field; defaults to the configured ellipse.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
}

/// Keeps the latest state and dumps `φ` every `stride` snapshots.
struct DumpSink<'a> {
    run: &'a Run,
    space: Arc<SplineSpace>,
    stride: Option<usize>,
    count: usize,
    last: Option<Snapshot>,
}

impl SnapshotSink for DumpSink<'_> {
    fn push(&mut self, snap: Snapshot) -> pfrecon::Result<()> {
        if self.stride.is_some_and(|s| self.count % s == 0) {
            let n = self.space.n_f();
            let phi = Field::new(self.space.clone(), snap.u[..n].to_vec())?;
            io::write_field(
                self.run.path(&format!("{}.pff", snapshot_name(snap.t))),
                &phi,
                Some(&self.run.hash),
            )?;
        }
        self.count += 1;
        self.last = Some(snap);
        Ok(())
    }
}

fn read_on(path: &Path, space: &Arc<SplineSpace>) -> std::result::Result<Field, Failure> {
    let f = io::read_field(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_error)?;
    if f.space().same_as(space) {
        Ok(f)
    } else {
        transfer(&f, space, true).or_fail()
    }
}

pub fn forward(_: &Global, run: Run, args: &ForwardArgs) -> Outcome {
    let (work, _) = run.spaces()?;
    let params = run.cfg.params().map_err(config_error)?;
    let phi0 = match &args.input {
        Some(p) => read_on(p, &work)?,
        None => run
            .cfg
            .ground_truth
            .ellipse(run.cfg.mesh.domain_side)
            .project(&work)
            .or_fail()?,
    };
    let solver = run.cfg.solver();
    let steps = solver.time.steps().map_err(config_error)?;
    let sys = GalerkinSystem::new(work.clone(), &params, SystemKind::Forward);
    let mut sink = DumpSink {
        run: &run,
        space: work.clone(),
        stride: run.step_stride()?,
        count: 0,
        last: None,
    };
    let u0 = initial_state(&params, &phi0).to_flat();
    solve_into(
        &sys,
        0.0,
        u0,
        solver.time.dt.abs(),
        steps,
        &solver,
        &mut sink,
    )
    .or_fail()?;
    let last = sink.last.take().expect("solver pushes the initial state");
    let n = work.n_f();
    run.write_field("phi0", &phi0)?;
    for (k, name) in ["phi_T", "sigma_T", "p_T"].iter().enumerate() {
        let f = Field::new(work.clone(), last.u[k * n..(k + 1) * n].to_vec()).or_fail()?;
        run.write_field(name, &f)?;
    }
    run.manifest(&[
        ("command", "forward".into()),
        ("t_end", format!("{:?}", last.t)),
    ])
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Measurement at T; without it the reference run is computed first.
    #[arg(long, value_name = "FILE")]
    pub measurement: Option<PathBuf>,
    /// Initial iterate; defaults to the configured disc at the
    /// measurement's centre of mass.
    #[arg(long, value_name = "FILE")]
    pub guess: Option<PathBuf>,
    /// Reference initial field for the metrics columns.
    #[arg(long, value_name = "FILE", requires = "reference_t")]
    pub reference0: Option<PathBuf>,
    /// Reference terminal field for the metrics columns.
    #[arg(long = "reference-t", value_name = "FILE", requires = "reference0")]
    pub reference_t: Option<PathBuf>,
}

struct HistoryObserver<'a> {
    run: &'a Run,
    writer: HistoryWriter,
    stride: usize,
}

impl Observer for HistoryObserver<'_> {
    fn on_iteration(&mut self, view: &IterationView<'_>) -> pfrecon::Result<()> {
        self.writer.push(view.record)?;
        let j = view.record.j;
        if self.stride > 0 && j % self.stride == 0 {
            io::write_field(
                self.run.path(&format!("iter_{j:05}_phi0.pff")),
                view.phi0,
                Some(&self.run.hash),
            )?;
        }
        Ok(())
    }
}

pub fn reconstruct(_: &Global, run: Run, args: &ReconstructArgs) -> Outcome {
    let (work, _) = run.spaces()?;
    let params = run.cfg.params().map_err(config_error)?;
    let (measurement, truth) = match &args.measurement {
        Some(p) => {
            let truth = match (&args.reference0, &args.reference_t) {
                (Some(a), Some(b)) => Some(Truth {
                    phi0: io::read_field(a).map_err(config_error)?,
                    phi_t: io::read_field(b).map_err(config_error)?,
                }),
                _ => None,
            };
            (read_on(p, &work)?, truth)
        }
        None => {
            let gt = ground_truth_for(&run)?;
            let (clean, noisy) = measurement_of(&run, &gt)?;
            let truth = Truth {
                phi0: gt.phi0,
                phi_t: gt.phi_meas,
            };
            (noisy.unwrap_or(clean), Some(truth))
        }
    };
    let guess = match &args.guess {
        Some(p) => read_on(p, &work)?,
        None => initial_guess(&measurement, &run.cfg.recon.guess).or_fail()?,
    };
    run.write_field("phi_meas_used", &measurement)?;

    let problem = Problem {
        space: work.clone(),
        params: &params,
        solver: run.cfg.solver(),
        measurement: Measurement::phi_only(measurement),
        kappa: run.cfg.recon.kappa,
        truth,
        metrics: run.cfg.metrics.clone(),
    };
    let mut observer = HistoryObserver {
        run: &run,
        writer: HistoryWriter::create(run.path("history.csv")).or_fail()?,
        stride: run.cfg.output.dump_stride,
    };
    let outcome = run_reconstruction(&problem, &guess, &run.cfg.recon, &mut observer).or_fail()?;
    run.write_field("phi0_rec", &outcome.phi0)?;
    run.write_field("phiT_rec", &outcome.phi_t)?;
    let last = outcome.history.last().map_or(0, |r| r.j);
    run.manifest(&[
        ("command", "reconstruct".into()),
        ("method", format!("{:?}", run.cfg.recon.method)),
        ("seed", run.cfg.seed.to_string()),
        ("iterations", outcome.history.len().to_string()),
        ("converged", outcome.converged.to_string()),
        ("history", "history.csv".into()),
    ])?;
    if outcome.converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            error: anyhow!("no convergence by iteration {last}; last iterate written"),
        })
    }
}

fn metrics_config(global: &Global) -> std::result::Result<MetricsConfig, Failure> {
    if global.config.is_empty() {
        return Ok(MetricsConfig::default());
    }
    Ok(RunConfig::load(&global.config)
        .map_err(config_error)?
        .metrics)
}

pub fn metrics(global: &Global, reference: &Path, reconstruction: &Path) -> Outcome {
    let cfg = metrics_config(global)?;
    let read = |p: &Path| {
        io::read_field(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(config_error)
    };
    let (a, b) = (read(reference)?, read(reconstruction)?);
    let m = compare(&a, &b, &cfg).or_fail()?;
    println!("eV,dsc,eL2,ccc");
    println!("{},{},{},{}", m.e_v, m.dsc, m.e_l2, m.ccc);
    std::fs::create_dir_all(&global.out).or_fail()?;
    io::write_metrics_csv(global.out.join("metrics.csv"), &m).or_fail()
}

pub fn noise(global: &Global, input: &Path) -> Outcome {
    let (cfg, seed, hash) = if global.config.is_empty() {
        (Default::default(), global.seed.unwrap_or(0), None)
    } else {
        let mut rc = RunConfig::load(&global.config).map_err(config_error)?;
        if let Some(s) = global.seed {
            rc.seed = s;
        }
        (
            rc.noise.clone().unwrap_or_default(),
            rc.seed,
            Some(rc.hash()),
        )
    };
    let field = io::read_field(input)
        .with_context(|| format!("reading {}", input.display()))
        .map_err(config_error)?;
    let noisy = add_noise(&field, &cfg, seed).or_fail()?;
    std::fs::create_dir_all(&global.out).or_fail()?;
    let stem = input
        .file_stem()
        .map_or("field".into(), |s| s.to_string_lossy().into_owned());
    io::write_field(
        global.out.join(format!("{stem}_noisy.pff")),
        &noisy,
        hash.as_deref(),
    )
    .or_fail()
}
