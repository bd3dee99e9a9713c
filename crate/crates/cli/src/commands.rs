use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use randcorr::bisep::{scan_bound, ScanConfig, ScanMode};
use randcorr::distributions::{histogram, product_distribution_test, theoretical_density, TheoreticalModel};
use randcorr::io;
use randcorr::moments::{witness_report, ReportOptions, WitnessReport};
use randcorr::quantum::{correlation_tensor, make_reference_state, CorrelationTensor, SubsetMask};
use randcorr::sampling::{run_experiment, ExperimentConfig};

use crate::config::RunConfig;
use crate::{CliError, Common};

pub fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

pub fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(f),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

/// Writes one output file, attaching the path to any error.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> randcorr::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| match e {
        randcorr::Error::Io(e) => io_err(path, e),
        other => other.into(),
    })?;
    w.flush().map_err(|e| io_err(path, e))
}

fn output_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

/// Parses a state spec into its correlation tensor.
pub fn resolve_state(spec: &str) -> Result<CorrelationTensor, CliError> {
    let spec = spec.trim();
    if let Some(path) = spec.strip_prefix("tensor:") {
        let path = Path::new(path);
        let t = io::read_tensor(open(path)?)?;
        // reject tensors that do not describe a state
        randcorr::quantum::state_from_tensor(&t)?;
        return Ok(t);
    }
    if let Some(n) = spec.strip_prefix("mixed:") {
        let n: usize = n.parse().map_err(|_| CliError::Usage(format!("bad qubit count in `{spec}`")))?;
        return Ok(CorrelationTensor::identity(n)?);
    }
    let kind = spec.parse()?;
    Ok(correlation_tensor(&make_reference_state(kind)))
}

pub fn simulate(config: &RunConfig, output: &str) -> Result<(), CliError> {
    config.validate().map_err(CliError::Usage)?;
    let state = resolve_state(&config.state)?;
    let experiment = ExperimentConfig {
        settings: config.settings,
        shots: config.shots().map_err(CliError::Usage)?,
        noise: config.noise().map_err(CliError::Usage)?,
        seed: config.seed,
    };
    let ds = run_experiment(&state, config.state.trim(), &experiment)?;
    let path = output_dir(config)?.join(output);
    write_file(&path, |w| io::write_dataset(&ds, w))?;
    println!("wrote {} settings to {}", ds.settings(), path.display());
    Ok(())
}

/// Bipartitions of the full set, labelled by the side holding qubit 1.
fn cuts(n: usize) -> Vec<(SubsetMask, SubsetMask)> {
    let full = SubsetMask::full(n);
    (1..1u32 << n)
        .map(SubsetMask)
        .filter(|a| a.contains(0) && *a != full)
        .map(|a| (a, full.minus(a)))
        .collect()
}

pub fn analyze(config: &RunConfig, dataset: &Path) -> Result<(), CliError> {
    config.validate().map_err(CliError::Usage)?;
    let ds = io::read_dataset(open(dataset)?).map_err(|e| match e {
        randcorr::Error::Io(e) => io_err(dataset, e),
        other => CliError::Io(format!("{}: {other}", dataset.display())),
    })?;
    let dir = output_dir(config)?;
    let options = ReportOptions { z: config.z, ..ReportOptions::default() };
    let report = witness_report(&ds, &options)?;
    write_file(&dir.join("report.txt"), |w| io::write_report(&report, w))?;

    for subset in SubsetMask::all_nonempty(ds.n) {
        let h = histogram(&ds, subset, config.bins, false)?.density();
        let title = format!("density of |E| for subset {subset}, {} settings", ds.settings());
        write_file(&dir.join(format!("hist_{subset}.txt")), |w| io::write_histogram(&h, &title, w))?;
    }
    let grid: Vec<f64> = (1..=200).map(|i| i as f64 / 200.0).collect();
    let models = (1..=ds.n as u32).map(TheoreticalModel::ProductPure).chain([TheoreticalModel::Uniform]);
    for model in models {
        let density = theoretical_density(model, &grid)?;
        write_file(&dir.join(format!("theory_{model}.txt")), |w| {
            io::write_curve(&grid, &density, &format!("density of |E|, {model}"), w)
        })?;
    }
    if ds.n >= 2 {
        let tests = cuts(ds.n)
            .into_iter()
            .map(|(a, b)| Ok((a, b, product_distribution_test(&ds, a, b, config.alpha)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        write_file(&dir.join("product_tests.txt"), |w| io::write_product_tests(&tests, w))?;
    }
    print!("{}", render_report(&report));
    println!("outputs in {}", dir.display());
    Ok(())
}

pub fn scan(config: &RunConfig, scan: &ScanConfig, accumulate: bool) -> Result<(), CliError> {
    let dir = output_dir(config)?;
    let path = dir.join(format!("frontier_{}_n{}.txt", scan.mode, scan.n));
    let mut table = scan_bound(scan)?;
    if accumulate && path.exists() {
        let mut previous = io::read_frontier(open(&path)?)?;
        if previous.mode != scan.mode || previous.tolerance != scan.tolerance {
            return Err(CliError::Usage(format!("{} was produced with other scan settings", path.display())));
        }
        previous.merge(&table)?;
        table = previous;
    }
    write_file(&path, |w| io::write_frontier(&table, w))?;
    println!(
        "{} samples, {} above the bound (tolerance {:e}); frontier in {}",
        table.samples,
        table.violation_count(),
        table.tolerance,
        path.display()
    );
    if scan.mode != ScanMode::AllStates && !table.violations.is_empty() {
        let dump = dir.join(format!("violations_n{}.txt", scan.n));
        write_file(&dump, |w| io::write_violations(&table.violations, w))?;
        for v in table.violations.iter().take(10) {
            eprintln!("violation: seed {} index {} purity {} witness {} bound {}", v.seed, v.index, v.purity, v.witness, v.bound);
        }
        return Err(CliError::Science(format!(
            "{} samples exceed the biseparable bound; seeds in {}",
            table.violation_count(),
            dump.display()
        )));
    }
    Ok(())
}

pub fn render_report(report: &WitnessReport) -> String {
    let mut out = format!(
        "{} qubits, {} settings, shots {}, estimator {}, z = {}\n",
        report.n, report.settings, report.shots, report.estimator, report.z
    );
    out.push_str(&format!(
        "{:<7}{:>12}{:>12}{:>12}{:>12}{:>12}{:>10}  {}\n",
        "subset", "moment", "purity", "witness", "error", "bound", "signif", "verdict"
    ));
    for r in &report.subsets {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{:<7}{:>12.6}{:>12.6}{:>12}{:>12}{:>12}{:>10}  {}\n",
            r.subset.to_string(),
            r.moment.value,
            r.purity.value,
            opt(r.witness.map(|w| w.value)),
            opt(r.witness.map(|w| w.error)),
            opt(r.bound.map(|b| b.value)),
            r.significance().map_or("-".to_string(), |s| format!("{s:.1}")),
            r.verdict.label(r.subset.len())
        ));
    }
    out
}

pub fn report(file: &Path) -> Result<(), CliError> {
    let report = io::read_report(open(file)?).map_err(|e| match e {
        randcorr::Error::Io(e) => io_err(file, e),
        other => CliError::Io(format!("{}: {other}", file.display())),
    })?;
    print!("{}", render_report(&report));
    Ok(())
}
