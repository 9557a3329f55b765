use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use slq_core::autodiff::{synthetic_batch, Batch, HessianOperator, Model};
use slq_core::column_probe::{column_report, multi_seed_probe, probe_column, render_seed_table, ColumnProbeReport};
use slq_core::diagnostics::{
    classify_near_zero, detect_ghosts, precision_report, GhostReport, NearZeroSplit,
};
use slq_core::lanczos::{PartialRun, RunDiagnostics, Termination};
use slq_core::operators::{spiked_operator, wigner_operator};
use slq_core::quadrature::{average_spectra, default_bandwidth, smooth_density};
use slq_core::runtime::{MessageStats, PoolOptions};
use slq_core::{
    lanczos_run, ritz_decompose, DenseSymmetric, Element, Error, LanczosConfig, LocalEngine, OperatorHandle,
    Precision, Reorthogonalization, RitzSpectrum, ShardLayout, TridiagonalMatrix, VectorEngine, WorkerPool,
};

use crate::artifact::{density_csv, spectrum_csv, Artifact, OutputDir};
use crate::config::{DataSource, OperatorSource, RunConfig};
use crate::CliError;

/// Largest stored Lanczos basis `compare-ortho` will allocate.
pub const MAX_BASIS_BYTES: usize = 1 << 31;

type Result<T> = std::result::Result<T, CliError>;

fn setup<T>(r: slq_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

pub fn build_operator<T: Element>(src: &OperatorSource) -> Result<OperatorHandle<T>> {
    let dense = |m: slq_core::Result<DenseSymmetric>| -> Result<OperatorHandle<T>> { Ok(Arc::new(setup(m)?)) };
    match src {
        OperatorSource::Dense { path } => dense(DenseSymmetric::load(path)),
        OperatorSource::Wigner { n, sigma, seed } => dense(wigner_operator(*n, *sigma, *seed)),
        OperatorSource::Spiked { n, sigma, spikes, seed } => dense(spiked_operator(*n, *sigma, spikes, *seed)),
        OperatorSource::Identity { n } => dense(DenseSymmetric::identity(*n)),
        OperatorSource::Diagonal { values } => dense(DenseSymmetric::diagonal(values)),
        OperatorSource::Autodiff {
            model,
            init_seed,
            data,
            batch_size,
        } => {
            let batch = match data {
                DataSource::File(path) => setup(Batch::load(path))?,
                DataSource::Synthetic { samples, seed } => {
                    setup(synthetic_batch(*samples, model.input_dim(), model.target_kind(), *seed))?
                }
            };
            let mut sizes = vec![*batch_size; batch.len() / batch_size];
            if batch.len() % batch_size != 0 {
                sizes.push(batch.len() % batch_size);
            }
            let batches = setup(batch.split(&sizes))?;
            let model = setup(Model::<T>::init(model.clone(), *init_seed))?;
            Ok(Arc::new(setup(HessianOperator::new(model, batches))?))
        }
    }
}

/// One Lanczos run, reduced to what the reports need.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub tridiagonal: TridiagonalMatrix,
    pub diagnostics: RunDiagnostics,
    pub orthogonality_loss: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct BreakdownInfo {
    pub seed: u64,
    pub reason: String,
    pub partial: PartialRun,
    pub completed: Vec<SeedRun>,
}

enum RunFailure {
    Breakdown(Box<BreakdownInfo>),
    Other(CliError),
}

impl From<CliError> for RunFailure {
    fn from(e: CliError) -> Self {
        RunFailure::Other(e)
    }
}

fn run_on_engine<T: Element, E: VectorEngine<T>>(
    engine: &mut E,
    op: &OperatorHandle<T>,
    lanczos: &LanczosConfig,
    seeds: &[u64],
) -> std::result::Result<Vec<SeedRun>, RunFailure> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = LanczosConfig {
            probe: lanczos.probe.with_seed(seed),
            ..lanczos.clone()
        };
        let start = Instant::now();
        match lanczos_run(engine, op, &cfg) {
            Ok(run) => runs.push(SeedRun {
                seed,
                orthogonality_loss: run.loss_of_orthogonality().ok(),
                tridiagonal: run.tridiagonal,
                diagnostics: run.diagnostics,
                wall_seconds: start.elapsed().as_secs_f64(),
            }),
            Err(Error::Breakdown { reason, partial }) => {
                return Err(RunFailure::Breakdown(Box::new(BreakdownInfo {
                    seed,
                    reason,
                    partial: *partial,
                    completed: runs,
                })))
            }
            Err(e) => return Err(RunFailure::Other(e.into())),
        }
    }
    Ok(runs)
}

/// Runs Lanczos once per seed, on a worker pool when `workers > 1`.
fn run_seeds<T: Element>(
    op: &OperatorHandle<T>,
    workers: usize,
    lanczos: &LanczosConfig,
    seeds: &[u64],
) -> std::result::Result<(Vec<SeedRun>, Option<MessageStats>), RunFailure> {
    let layout = setup(ShardLayout::even(op.dim(), workers))?;
    if workers == 1 {
        let mut engine = LocalEngine::new(layout);
        return Ok((run_on_engine(&mut engine, op, lanczos, seeds)?, None));
    }
    let mut pool = WorkerPool::<T>::spawn(layout, PoolOptions::default()).map_err(CliError::from)?;
    let runs = run_on_engine(&mut pool, op, lanczos, seeds);
    let stats = pool.shutdown().map_err(CliError::from)?;
    Ok((runs?, Some(stats)))
}

fn run_seeds_at(
    cfg: &RunConfig,
    lanczos: &LanczosConfig,
    seeds: &[u64],
) -> std::result::Result<(usize, String, Vec<SeedRun>, Option<MessageStats>), RunFailure> {
    match cfg.precision {
        Precision::F64 => {
            let op = build_operator::<f64>(&cfg.operator)?;
            let (runs, stats) = run_seeds(&op, cfg.workers, lanczos, seeds)?;
            Ok((op.dim(), op.label(), runs, stats))
        }
        Precision::F32 => {
            let op = build_operator::<f32>(&cfg.operator)?;
            let (runs, stats) = run_seeds(&op, cfg.workers, lanczos, seeds)?;
            Ok((op.dim(), op.label(), runs, stats))
        }
    }
}

fn termination_text(t: &Termination) -> String {
    match t {
        Termination::IterationLimit => "iteration_limit".into(),
        Termination::Converged { step, beta } => format!("converged step={step} beta={beta:e}"),
    }
}

fn seed_section(a: &mut Artifact, run: &SeedRun) {
    a.section(&format!("lanczos seed={}", run.seed));
    a.tridiagonal(&run.tridiagonal);
    a.kv("termination", termination_text(&run.diagnostics.termination));
    a.kv("breakdown_tol", format!("{:e}", run.diagnostics.tolerance));
    let overlaps: Vec<f64> = run.diagnostics.steps.iter().filter_map(|s| s.start_overlap).collect();
    a.kv("start_overlap", crate::artifact::join_floats(&overlaps));
    a.kv(
        "orthogonality_loss",
        run.orthogonality_loss.map_or("unavailable".into(), |x| format!("{x:e}")),
    );
}

fn stats_section(a: &mut Artifact, workers: usize, stats: Option<MessageStats>) {
    a.section("runtime");
    a.kv("workers", workers);
    if let Some(s) = stats {
        a.kv("messages.scatter", s.scatter);
        a.kv("messages.gather", s.gather);
        a.kv("messages.dot_partial", s.dot_partial);
        a.kv("messages.axpy", s.axpy);
        a.kv("messages.scale", s.scale);
        a.kv("messages.apply_shard", s.apply_shard);
        a.kv("messages.free", s.free);
        a.kv("messages.shutdown", s.shutdown);
        a.kv("messages.total", s.total());
    }
}

fn timing_section(a: &mut Artifact, runs: &[SeedRun], total: f64) {
    a.section("timing");
    for r in runs {
        a.kv(&format!("seed.{}.wall_seconds", r.seed), format!("{:.6}", r.wall_seconds));
        a.kv(
            &format!("seed.{}.apply_seconds", r.seed),
            format!("{:.6}", r.diagnostics.total_apply_seconds()),
        );
    }
    a.kv("total_seconds", format!("{total:.6}"));
}

fn breakdown_failure(
    cfg: &RunConfig,
    out: &mut OutputDir,
    info: BreakdownInfo,
    started: Instant,
) -> CliError {
    let mut a = Artifact::new();
    a.section("config").block(&cfg.echo());
    a.section("status").kv("status", "breakdown").kv("seed", info.seed).kv("reason", &info.reason);
    for run in &info.completed {
        seed_section(&mut a, run);
    }
    a.section(&format!("partial seed={}", info.seed));
    a.tridiagonal(&info.partial.tridiagonal);
    a.kv("steps_recorded", info.partial.diagnostics.steps.len());
    timing_section(&mut a, &info.completed, started.elapsed().as_secs_f64());
    let message = format!("numerical breakdown for seed {}: {}", info.seed, info.reason);
    match out.write("run.slq", &a.finish()) {
        Ok(path) => CliError::Breakdown {
            message,
            artifact: Some(path),
        },
        Err(e) => CliError::Io(e),
    }
}

/// Everything `slq` computed, besides the files it wrote.
#[derive(Debug)]
pub struct SlqOutput {
    pub runs: Vec<SeedRun>,
    pub spectra: Vec<RitzSpectrum>,
    pub ghosts: Vec<GhostReport>,
    pub averaged: RitzSpectrum,
    pub near_zero: NearZeroSplit,
    pub files: Vec<PathBuf>,
}

pub fn cmd_slq(cfg: &RunConfig) -> Result<SlqOutput> {
    let started = Instant::now();
    let mut out = OutputDir::new(&cfg.out);
    let (dim, label, runs, stats) = match run_seeds_at(cfg, &cfg.lanczos, &cfg.seeds) {
        Ok(r) => r,
        Err(RunFailure::Breakdown(info)) => return Err(breakdown_failure(cfg, &mut out, *info, started)),
        Err(RunFailure::Other(e)) => return Err(e),
    };

    let spectra = runs
        .iter()
        .map(|r| ritz_decompose(&r.tridiagonal))
        .collect::<slq_core::Result<Vec<_>>>()?;
    let ghosts: Vec<GhostReport> = spectra
        .iter()
        .map(|s| detect_ghosts(s, cfg.cluster_tol, cfg.ghost_weight))
        .collect();
    let averaged = average_spectra(&spectra)?;
    let sigma = cfg.density_sigma.unwrap_or_else(|| default_bandwidth(&averaged));
    let density = smooth_density(&averaged, sigma, cfg.density_points)?;
    let near_zero = classify_near_zero(&averaged, cfg.near_zero_eps());
    let precision = precision_report(cfg.precision, cfg.lanczos.k_max);

    out.write("spectrum.csv", &spectrum_csv(&averaged))?;
    if spectra.len() > 1 {
        for (run, s) in runs.iter().zip(&spectra) {
            out.write(&format!("spectrum_seed{}.csv", run.seed), &spectrum_csv(s))?;
        }
    }
    out.write("density.csv", &density_csv(&density))?;

    let mut diag = String::new();
    let _ = writeln!(diag, "operator = {label}\ndim = {dim}\nseeds = {}\n", runs.len());
    diag.push_str("# precision\n");
    diag.push_str(&precision.render());
    for ((run, s), g) in runs.iter().zip(&spectra).zip(&ghosts) {
        let _ = writeln!(diag, "\n# seed {}", run.seed);
        let _ = writeln!(diag, "k = {}", run.tridiagonal.k());
        let _ = writeln!(diag, "termination = {}", termination_text(&run.diagnostics.termination));
        let _ = writeln!(
            diag,
            "orthogonality_loss = {}",
            run.orthogonality_loss.map_or("unavailable".into(), |x| format!("{x:e}"))
        );
        diag.push_str(&g.render(s));
    }
    diag.push_str("\n# averaged spectrum\n");
    let _ = writeln!(diag, "density_sigma = {sigma:e}");
    diag.push_str(&near_zero.render());
    out.write("diagnostics.txt", &diag)?;

    let mut a = Artifact::new();
    a.section("config").block(&cfg.echo());
    a.section("operator").kv("label", &label).kv("dim", dim);
    for ((run, s), g) in runs.iter().zip(&spectra).zip(&ghosts) {
        seed_section(&mut a, run);
        a.section(&format!("spectrum seed={}", run.seed)).block(&spectrum_csv(s));
        a.section(&format!("ghosts seed={}", run.seed)).block(&g.render(s));
    }
    a.section("spectrum averaged").block(&spectrum_csv(&averaged));
    a.section("precision").block(&precision.render());
    a.section("near_zero").block(&near_zero.render());
    stats_section(&mut a, cfg.workers, stats);
    timing_section(&mut a, &runs, started.elapsed().as_secs_f64());
    out.write("run.slq", &a.finish())?;

    Ok(SlqOutput {
        runs,
        spectra,
        ghosts,
        averaged,
        near_zero,
        files: out.into_written(),
    })
}

#[derive(Debug)]
pub struct ProbeOutput {
    pub reports: Vec<ColumnProbeReport>,
    pub files: Vec<PathBuf>,
}

fn probe_reports<T: Element>(cfg: &RunConfig) -> Result<Vec<ColumnProbeReport>> {
    let op = build_operator::<T>(&cfg.operator)?;
    let layout = setup(ShardLayout::even(op.dim(), cfg.workers))?;
    match cfg.probe_index {
        Some(index) => {
            let col = setup(probe_column(&op, &layout, index))?;
            Ok(vec![column_report(&col, index, &cfg.probe_thresholds, cfg.probe_bins)?])
        }
        None => Ok(multi_seed_probe(
            &op,
            &layout,
            &cfg.seeds,
            &cfg.probe_thresholds,
            cfg.probe_bins,
        )?),
    }
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<ProbeOutput> {
    let reports = match cfg.precision {
        Precision::F64 => probe_reports::<f64>(cfg)?,
        Precision::F32 => probe_reports::<f32>(cfg)?,
    };
    let mut out = OutputDir::new(&cfg.out);
    for r in &reports {
        let stem = match r.seed {
            Some(seed) => format!("probe_seed{seed}"),
            None => format!("probe_col{}", r.column_index),
        };
        out.write(&format!("{stem}.txt"), &r.render_table())?;
        out.write(&format!("{stem}_fractions.csv"), &r.fractions_csv())?;
        out.write(&format!("{stem}_histogram.csv"), &r.histogram_csv())?;
    }
    if reports.iter().all(|r| r.seed.is_some()) {
        out.write("probe_table.txt", &render_seed_table(&reports)?)?;
    }
    Ok(ProbeOutput {
        reports,
        files: out.into_written(),
    })
}

#[derive(Debug)]
pub struct CompareOutput {
    pub full: (SeedRun, RitzSpectrum, GhostReport),
    pub none: (SeedRun, RitzSpectrum, GhostReport),
    pub files: Vec<PathBuf>,
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| format!("{:>14}", "-"), |v| format!("{v:>14.6e}"))
}

fn compare_table(full: &(SeedRun, RitzSpectrum, GhostReport), none: &(SeedRun, RitzSpectrum, GhostReport)) -> String {
    let (fr, fs, fg) = full;
    let (nr, ns, ng) = none;
    let mut t = String::new();
    let _ = writeln!(t, "seed = {}", fr.seed);
    let _ = writeln!(t, "k_full = {}\nk_none = {}", fs.len(), ns.len());
    for (name, r) in [("full", fr), ("none", nr)] {
        let _ = writeln!(
            t,
            "orthogonality_loss_{name} = {}",
            r.orthogonality_loss.map_or("unavailable".into(), |x| format!("{x:e}"))
        );
    }
    let _ = writeln!(t, "ghosts_full = {}\nghosts_none = {}\n", fg.ghost_count(), ng.ghost_count());
    let _ = writeln!(
        t,
        "{:>4} | {:>14} | {:>14} | {:>14} | {:>14} | ghost",
        "i", "theta_full", "weight_full", "theta_none", "weight_none"
    );
    for i in 0..fs.len().max(ns.len()) {
        let f = fs.values().get(i).map(|&v| (v, fs.weights()[i]));
        let n = ns.values().get(i).map(|&v| (v, ns.weights()[i]));
        let flag = if ng.ghost_flags.get(i).copied().unwrap_or(false) { "*" } else { "" };
        let _ = writeln!(
            t,
            "{i:>4} | {} | {} | {} | {} | {flag}",
            cell(f.map(|p| p.0)),
            cell(f.map(|p| p.1)),
            cell(n.map(|p| p.0)),
            cell(n.map(|p| p.1)),
        );
    }
    let only_none: Vec<String> = ns
        .iter()
        .zip(&ng.ghost_flags)
        .filter(|(_, &g)| g)
        .map(|((v, w), _)| format!("{v:e} (weight {w:e})"))
        .collect();
    let _ = writeln!(t, "\nghosts without reorthogonalization: {}", only_none.len());
    for line in only_none {
        let _ = writeln!(t, "  {line}");
    }
    t
}

pub fn cmd_compare_ortho(cfg: &RunConfig) -> Result<CompareOutput> {
    let started = Instant::now();
    let seed = cfg.seeds[0];
    let mut out = OutputDir::new(&cfg.out);
    let dim = match &cfg.operator {
        OperatorSource::Dense { .. } | OperatorSource::Autodiff { .. } => None,
        OperatorSource::Wigner { n, .. } | OperatorSource::Spiked { n, .. } | OperatorSource::Identity { n } => Some(*n),
        OperatorSource::Diagonal { values } => Some(values.len()),
    };
    let elem = match cfg.precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let check_basis = |dim: usize| -> Result<()> {
        let bytes = dim.saturating_mul(cfg.lanczos.k_max + 1).saturating_mul(elem);
        if bytes > MAX_BASIS_BYTES {
            return Err(CliError::Config(format!(
                "compare-ortho needs a stored basis of {bytes} bytes, above the {MAX_BASIS_BYTES} byte limit"
            )));
        }
        Ok(())
    };
    if let Some(d) = dim {
        check_basis(d)?;
    }

    let mut variants = Vec::new();
    for mode in [Reorthogonalization::Full, Reorthogonalization::None] {
        let lanczos = LanczosConfig {
            reorthogonalize: mode,
            store_basis: true,
            ..cfg.lanczos.clone()
        };
        let (dim, _, mut runs, _) = match run_seeds_at(cfg, &lanczos, &[seed]) {
            Ok(r) => r,
            Err(RunFailure::Breakdown(info)) => return Err(breakdown_failure(cfg, &mut out, *info, started)),
            Err(RunFailure::Other(e)) => return Err(e),
        };
        check_basis(dim)?;
        let run = runs.remove(0);
        let s = ritz_decompose(&run.tridiagonal)?;
        let g = detect_ghosts(&s, cfg.cluster_tol, cfg.ghost_weight);
        variants.push((run, s, g));
    }
    let none = variants.pop().expect("two variants");
    let full = variants.pop().expect("two variants");

    out.write("spectrum_full.csv", &spectrum_csv(&full.1))?;
    out.write("spectrum_none.csv", &spectrum_csv(&none.1))?;
    out.write("compare.txt", &compare_table(&full, &none))?;

    let mut a = Artifact::new();
    a.section("config").block(&cfg.echo());
    for (name, (run, s, g)) in [("full", &full), ("none", &none)] {
        a.section(&format!("variant {name}"));
        a.tridiagonal(&run.tridiagonal);
        a.kv("termination", termination_text(&run.diagnostics.termination));
        a.kv(
            "orthogonality_loss",
            run.orthogonality_loss.map_or("unavailable".into(), |x| format!("{x:e}")),
        );
        a.section(&format!("spectrum {name}")).block(&spectrum_csv(s));
        a.section(&format!("ghosts {name}")).block(&g.render(s));
    }
    a.section("timing");
    for (name, run) in [("full", &full.0), ("none", &none.0)] {
        a.kv(&format!("{name}.wall_seconds"), format!("{:.6}", run.wall_seconds));
    }
    a.kv("total_seconds", format!("{:.6}", started.elapsed().as_secs_f64()));
    out.write("compare.slq", &a.finish())?;

    Ok(CompareOutput {
        full,
        none,
        files: out.into_written(),
    })
}
