//! Line-oriented text formats.
//!
//! Every document starts with optional `#` comments and a `version <major>.<minor>` line;
//! readers accept any minor revision of major version 1. Floats are written in their
//! shortest round-trip form, so write/read cycles are lossless.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::bisep::{FrontierBin, FrontierTable, ScanMode, Violation};
use crate::distributions::{Histogram, KsVerdict, TestResult};
use crate::moments::{Estimator, Measured, MomentEstimate, SubsetReport, Verdict, WitnessReport};
use crate::quantum::{format_pauli_string, parse_pauli_string, pauli_index, pauli_string, CorrelationTensor, SubsetMask};
use crate::sampling::{CorrelationDataset, NoiseModel, SettingRecord, Shots};
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: &str = "1";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
struct Lines {
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl Lines {
    fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                lines.push((i + 1, trimmed.to_string()));
            }
        }
        Ok(Self { lines, pos: 0 })
    }

    fn peek(&self) -> Option<&(usize, String)> {
        self.lines.get(self.pos)
    }

    fn next(&mut self) -> Option<(usize, String)> {
        let line = self.lines.get(self.pos).cloned();
        self.pos += 1;
        line
    }

    fn last_line(&self) -> usize {
        self.lines.last().map_or(0, |l| l.0)
    }

    /// Next line as `key value`, requiring the given key.
    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let end = self.last_line();
        let (line, text) = self.next().ok_or_else(|| parse_err(end, format!("missing `{key}`")))?;
        match split_key(&text) {
            (k, v) if k == key => Ok((line, v.to_string())),
            (k, _) => Err(parse_err(line, format!("expected `{key}`, found `{k}`"))),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, v) = self.field(key)?;
        parse_value(line, key, &v)
    }

    fn version(&mut self) -> Result<()> {
        let (_, v) = self.field("version")?;
        check_version(&v)
    }
}

fn split_key(text: &str) -> (&str, &str) {
    match text.split_once(char::is_whitespace) {
        Some((k, v)) => (k, v.trim()),
        None => (text, ""),
    }
}

fn parse_value<T: FromStr>(line: usize, what: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| parse_err(line, format!("bad {what} `{v}`")))
}

fn check_version(v: &str) -> Result<()> {
    let major = v.split('.').next().unwrap_or("");
    if major != SUPPORTED_MAJOR || v.split('.').any(|p| p.parse::<u32>().is_err()) {
        return Err(Error::Version(v.to_string()));
    }
    Ok(())
}

fn parse_shots(line: usize, v: &str) -> Result<Shots> {
    v.parse().map_err(|_| parse_err(line, format!("bad shots `{v}`")))
}

fn parse_noise(line: usize, v: &str) -> Result<NoiseModel> {
    v.parse().map_err(|_| parse_err(line, format!("bad noise `{v}`")))
}

fn direction_columns(n: usize) -> impl Iterator<Item = String> {
    (1..=n).flat_map(|q| ["x", "y", "z"].map(move |c| format!("{c}{q}")))
}

fn dataset_columns(n: usize) -> Vec<String> {
    std::iter::once("index".to_string())
        .chain(direction_columns(n))
        .chain(SubsetMask::all_nonempty(n).map(|s| format!("E{s}")))
        .collect()
}

/// Header, then one line per setting: index, Bloch directions (12 significant digits)
/// and `E_A` for every nonempty subset in bitmask order.
pub fn write_dataset(ds: &CorrelationDataset, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# randcorr correlation dataset").unwrap();
    writeln!(out, "version {FORMAT_VERSION}").unwrap();
    writeln!(out, "n {}", ds.n).unwrap();
    writeln!(out, "state {}", ds.state).unwrap();
    writeln!(out, "settings {}", ds.records.len()).unwrap();
    writeln!(out, "shots {}", ds.shots).unwrap();
    writeln!(out, "seed {}", ds.seed).unwrap();
    writeln!(out, "noise {}", ds.noise).unwrap();
    writeln!(out, "columns {}", dataset_columns(ds.n).join(" ")).unwrap();
    w.write_all(out.as_bytes())?;
    for r in &ds.records {
        out.clear();
        write!(out, "{}", r.index).unwrap();
        for d in &r.directions {
            for c in d {
                write!(out, " {c:.11e}").unwrap();
            }
        }
        for e in &r.correlations[1..] {
            write!(out, " {e}").unwrap();
        }
        out.push('\n');
        w.write_all(out.as_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(reader: impl BufRead) -> Result<CorrelationDataset> {
    let mut lines = Lines::read(reader)?;
    lines.version()?;
    let (n_line, n_text) = lines.field("n")?;
    let n: usize = parse_value(n_line, "qubit count", &n_text)?;
    crate::quantum::check_qubits(n).map_err(|e| parse_err(n_line, e.to_string()))?;
    let (_, state) = lines.field("state")?;
    let settings: usize = lines.parsed("settings")?;
    let (line, v) = lines.field("shots")?;
    let shots = parse_shots(line, &v)?;
    let seed: u64 = lines.parsed("seed")?;
    let (line, v) = lines.field("noise")?;
    let noise = parse_noise(line, &v)?;
    let (line, v) = lines.field("columns")?;
    let expected = dataset_columns(n);
    let found: Vec<&str> = v.split_whitespace().collect();
    if found != expected {
        return Err(parse_err(line, format!("columns do not match a {n}-qubit dataset")));
    }
    let mut records = Vec::with_capacity(settings);
    while let Some((line, text)) = lines.next() {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != expected.len() {
            return Err(parse_err(line, format!("expected {} columns, found {}", expected.len(), fields.len())));
        }
        let index: u64 = parse_value(line, "index", fields[0])?;
        let nums = fields[1..]
            .iter()
            .map(|f| parse_value::<f64>(line, "number", f))
            .collect::<Result<Vec<_>>>()?;
        let (dirs, es) = nums.split_at(3 * n);
        let directions: Vec<[f64; 3]> = dirs.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        for d in &directions {
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(parse_err(line, format!("direction norm {norm}")));
            }
        }
        if let Some(e) = es.iter().find(|e| !(e.abs() <= 1.0 + 1e-9)) {
            return Err(parse_err(line, format!("correlation {e} outside [-1, 1]")));
        }
        let correlations = std::iter::once(1.0).chain(es.iter().copied()).collect();
        records.push(SettingRecord { index, directions, correlations });
    }
    if records.len() != settings {
        return Err(parse_err(
            lines.last_line(),
            format!("header declares {settings} settings, body has {}", records.len()),
        ));
    }
    Ok(CorrelationDataset { n, state, shots, noise, seed, records })
}

fn measured_text(m: &Measured) -> String {
    format!("{} {}", m.value, m.error)
}

fn verdict_from_label(line: usize, s: &str) -> Result<Verdict> {
    match s {
        "entangled" | "gme-detected" => Ok(Verdict::Detected),
        "not-detected" => Ok(Verdict::NotDetected),
        "no-bound" => Ok(Verdict::NoBound),
        _ => Err(parse_err(line, format!("unknown verdict `{s}`"))),
    }
}

fn estimator_from_label(line: usize, s: &str) -> Result<Estimator> {
    match s {
        "raw" => Ok(Estimator::Raw),
        "bayes" => Ok(Estimator::BayesCorrected),
        "exact" => Ok(Estimator::Exact),
        _ => Err(parse_err(line, format!("unknown estimator `{s}`"))),
    }
}

/// Key-value header followed by one `[subset <qubits>]` block per subset.
pub fn write_report(report: &WitnessReport, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# randcorr witness report").unwrap();
    writeln!(out, "version {FORMAT_VERSION}").unwrap();
    writeln!(out, "kind witness-report").unwrap();
    writeln!(out, "n {}", report.n).unwrap();
    writeln!(out, "settings {}", report.settings).unwrap();
    writeln!(out, "shots {}", report.shots).unwrap();
    writeln!(out, "z {}", report.z).unwrap();
    writeln!(out, "estimator {}", report.estimator).unwrap();
    for r in &report.subsets {
        writeln!(out, "\n[subset {}]", r.subset).unwrap();
        writeln!(out, "raw_moment {} {}", r.raw_moment.value, r.raw_moment.error).unwrap();
        writeln!(out, "moment {} {}", r.moment.value, r.moment.error).unwrap();
        writeln!(out, "purity {}", measured_text(&r.purity)).unwrap();
        if let Some(m) = &r.witness {
            writeln!(out, "witness {}", measured_text(m)).unwrap();
        }
        if let Some(b) = &r.bound {
            writeln!(out, "bound {}", measured_text(b)).unwrap();
        }
        if let Some(s) = r.significance() {
            writeln!(out, "significance {s}").unwrap();
        }
        writeln!(out, "verdict {}", r.verdict.label(r.subset.len())).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

fn parse_pair(line: usize, key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(parse_err(line, format!("`{key}` needs a value and an error")));
    }
    Ok((parse_value(line, key, parts[0])?, parse_value(line, key, parts[1])?))
}

fn block_header<'a>(line: usize, text: &'a str, kind: &str) -> Result<&'a str> {
    text.strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .and_then(|t| t.strip_prefix(kind))
        .map(str::trim)
        .ok_or_else(|| parse_err(line, format!("expected `[{kind} ...]`")))
}

fn expect_kind(lines: &mut Lines, kind: &str) -> Result<()> {
    let (line, v) = lines.field("kind")?;
    if v != kind {
        return Err(parse_err(line, format!("expected a {kind} document, found `{v}`")));
    }
    Ok(())
}

pub fn read_report(reader: impl BufRead) -> Result<WitnessReport> {
    let mut lines = Lines::read(reader)?;
    lines.version()?;
    expect_kind(&mut lines, "witness-report")?;
    let n: usize = lines.parsed("n")?;
    crate::quantum::check_qubits(n)?;
    let settings: usize = lines.parsed("settings")?;
    let (line, v) = lines.field("shots")?;
    let shots = parse_shots(line, &v)?;
    let z: f64 = lines.parsed("z")?;
    let (line, v) = lines.field("estimator")?;
    let estimator = estimator_from_label(line, &v)?;
    let raw_estimator = if estimator == Estimator::Exact { Estimator::Exact } else { Estimator::Raw };

    let mut subsets = Vec::new();
    while let Some((line, text)) = lines.next() {
        let label = block_header(line, &text, "subset")?;
        let subset: SubsetMask = label.parse().map_err(|_| parse_err(line, format!("bad subset `{label}`")))?;
        subset.check_nonempty(n).map_err(|e| parse_err(line, e.to_string()))?;
        let mut fields = std::collections::HashMap::new();
        while let Some((l, t)) = lines.peek().cloned() {
            if t.starts_with('[') {
                break;
            }
            lines.next();
            let (k, v) = split_key(&t);
            fields.insert(k.to_string(), (l, v.to_string()));
        }
        let get = |key: &str| fields.get(key).ok_or_else(|| parse_err(line, format!("subset {subset} lacks `{key}`")));
        let measured = |key: &str| -> Result<Option<Measured>> {
            fields
                .get(key)
                .map(|(l, v)| parse_pair(*l, key, v).map(|(value, error)| Measured { value, error }))
                .transpose()
        };
        let estimate = |key: &str, tag: Estimator| -> Result<MomentEstimate> {
            let (l, v) = get(key)?;
            let (value, error) = parse_pair(*l, key, v)?;
            Ok(MomentEstimate { subset, order: 2, value, error, estimator: tag })
        };
        let (vl, vv) = get("verdict")?;
        subsets.push(SubsetReport {
            subset,
            raw_moment: estimate("raw_moment", raw_estimator)?,
            moment: estimate("moment", estimator)?,
            purity: measured("purity")?.ok_or_else(|| parse_err(line, format!("subset {subset} lacks `purity`")))?,
            witness: measured("witness")?,
            bound: measured("bound")?,
            verdict: verdict_from_label(*vl, vv)?,
        });
    }
    if subsets.len() != (1 << n) - 1 || subsets.last().map(|r| r.subset) != Some(SubsetMask::full(n)) {
        return Err(parse_err(lines.last_line(), "report does not cover every subset"));
    }
    Ok(WitnessReport { n, settings, shots, z, estimator, subsets })
}

/// Two columns per line: bin center and value. `title` goes into a leading comment.
pub fn write_histogram(h: &Histogram, title: &str, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# {title}").unwrap();
    writeln!(out, "# center value").unwrap();
    for (c, v) in h.centers().iter().zip(&h.values) {
        writeln!(out, "{c} {v}").unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Theoretical curve sampled at `grid`, in the histogram layout.
pub fn write_curve(grid: &[f64], values: &[f64], title: &str, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# {title}").unwrap();
    writeln!(out, "# x density").unwrap();
    for (x, v) in grid.iter().zip(values) {
        writeln!(out, "{x} {v}").unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads back the two-column layout of `write_histogram` and `write_curve`.
pub fn read_columns(reader: impl BufRead) -> Result<Vec<(f64, f64)>> {
    let lines = Lines::read(reader)?;
    lines
        .lines
        .iter()
        .map(|(line, text)| {
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(parse_err(*line, format!("expected 2 columns, found {}", parts.len())));
            }
            Ok((parse_value(*line, "x", parts[0])?, parse_value(*line, "value", parts[1])?))
        })
        .collect()
}

/// One block per cut `A|B` tested for product-distribution consistency.
pub fn write_product_tests(results: &[(SubsetMask, SubsetMask, TestResult)], mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# randcorr product-distribution tests").unwrap();
    writeln!(out, "version {FORMAT_VERSION}").unwrap();
    writeln!(out, "kind product-test").unwrap();
    for (a, b, r) in results {
        writeln!(out, "\n[cut {a}|{b}]").unwrap();
        writeln!(out, "statistic {}", r.statistic).unwrap();
        writeln!(out, "threshold {}", r.threshold).unwrap();
        writeln!(out, "alpha {}", r.alpha).unwrap();
        writeln!(out, "verdict {}", r.label()).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_product_tests(reader: impl BufRead) -> Result<Vec<(SubsetMask, SubsetMask, TestResult)>> {
    let mut lines = Lines::read(reader)?;
    lines.version()?;
    expect_kind(&mut lines, "product-test")?;
    let mut out = Vec::new();
    while let Some((line, text)) = lines.next() {
        let cut = block_header(line, &text, "cut")?;
        let (a, b) = cut.split_once('|').ok_or_else(|| parse_err(line, format!("bad cut `{cut}`")))?;
        let a: SubsetMask = a.parse().map_err(|_| parse_err(line, format!("bad subset `{a}`")))?;
        let b: SubsetMask = b.parse().map_err(|_| parse_err(line, format!("bad subset `{b}`")))?;
        let statistic = lines.parsed("statistic")?;
        let threshold = lines.parsed("threshold")?;
        let alpha = lines.parsed("alpha")?;
        let (vl, v) = lines.field("verdict")?;
        let verdict = match v.as_str() {
            "consistent-with-product" => KsVerdict::Consistent,
            "product-rejected" => KsVerdict::Rejected,
            _ => return Err(parse_err(vl, format!("unknown verdict `{v}`"))),
        };
        out.push((a, b, TestResult { statistic, threshold, alpha, verdict }));
    }
    Ok(out)
}

fn violation_line(v: &Violation) -> String {
    format!("{} {} {} {} {} {}", v.seed, v.index, v.purity, v.witness, v.bound, v.excess())
}

fn parse_violation(line: usize, fields: &[&str]) -> Result<Violation> {
    if fields.len() != 6 {
        return Err(parse_err(line, "violation needs seed, index, purity, witness, bound, excess"));
    }
    Ok(Violation {
        seed: parse_value(line, "seed", fields[0])?,
        index: parse_value(line, "index", fields[1])?,
        purity: parse_value(line, "purity", fields[2])?,
        witness: parse_value(line, "witness", fields[3])?,
        bound: parse_value(line, "bound", fields[4])?,
    })
}

const FRONTIER_COLUMNS: &str = "lo hi count max_witness purity_at_max bound_at_max index_at_max violations";

/// Per-bin frontier rows followed by `violation` rows; empty bins print `-` for their maxima.
pub fn write_frontier(table: &FrontierTable, mut w: impl Write) -> Result<()> {
    let mut per_bin = vec![0usize; table.bins.len()];
    for v in &table.violations {
        per_bin[table.bin_of(v.purity)] += 1;
    }
    let mut out = String::new();
    writeln!(out, "# randcorr witness frontier").unwrap();
    writeln!(out, "version {FORMAT_VERSION}").unwrap();
    writeln!(out, "kind frontier").unwrap();
    writeln!(out, "n {}", table.n).unwrap();
    writeln!(out, "mode {}", table.mode).unwrap();
    writeln!(out, "samples {}", table.samples).unwrap();
    writeln!(out, "bin_width {}", table.bin_width).unwrap();
    writeln!(out, "tolerance {}", table.tolerance).unwrap();
    writeln!(out, "violations {}", table.violations.len()).unwrap();
    writeln!(out, "columns {FRONTIER_COLUMNS}").unwrap();
    for (b, count) in table.bins.iter().zip(per_bin) {
        match b.max_witness {
            Some(m) => writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                b.lo, b.hi, b.count, m, b.purity_at_max, b.bound_at_max, b.index_at_max, count
            ),
            None => writeln!(out, "{} {} {} - - - - {}", b.lo, b.hi, b.count, count),
        }
        .unwrap();
    }
    for v in &table.violations {
        writeln!(out, "violation {}", violation_line(v)).unwrap();
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_frontier(reader: impl BufRead) -> Result<FrontierTable> {
    let mut lines = Lines::read(reader)?;
    lines.version()?;
    expect_kind(&mut lines, "frontier")?;
    let n: usize = lines.parsed("n")?;
    let (line, v) = lines.field("mode")?;
    let mode: ScanMode = v.parse().map_err(|_| parse_err(line, format!("bad mode `{v}`")))?;
    let samples: u64 = lines.parsed("samples")?;
    let bin_width: f64 = lines.parsed("bin_width")?;
    let tolerance: f64 = lines.parsed("tolerance")?;
    let declared: usize = lines.parsed("violations")?;
    let (line, v) = lines.field("columns")?;
    if v.split_whitespace().ne(FRONTIER_COLUMNS.split_whitespace()) {
        return Err(parse_err(line, "unexpected frontier columns"));
    }
    let mut table = FrontierTable::empty(n, mode, bin_width, tolerance)?;
    table.samples = samples;
    let mut rows = 0;
    while let Some((line, text)) = lines.next() {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.first() == Some(&"violation") {
            table.violations.push(parse_violation(line, &fields[1..])?);
            continue;
        }
        if fields.len() != 8 {
            return Err(parse_err(line, format!("expected 8 columns, found {}", fields.len())));
        }
        let bin = table.bins.get_mut(rows).ok_or_else(|| parse_err(line, "more rows than bins"))?;
        let lo: f64 = parse_value(line, "lo", fields[0])?;
        if (lo - bin.lo).abs() > 1e-12 {
            return Err(parse_err(line, format!("bin edge {lo} does not match {}", bin.lo)));
        }
        bin.count = parse_value(line, "count", fields[2])?;
        if fields[3] != "-" {
            *bin = FrontierBin {
                max_witness: Some(parse_value(line, "max_witness", fields[3])?),
                purity_at_max: parse_value(line, "purity_at_max", fields[4])?,
                bound_at_max: parse_value(line, "bound_at_max", fields[5])?,
                index_at_max: parse_value(line, "index_at_max", fields[6])?,
                ..*bin
            };
        }
        rows += 1;
    }
    if rows != table.bins.len() || table.violations.len() != declared {
        return Err(parse_err(lines.last_line(), "frontier table is incomplete"));
    }
    Ok(table)
}

/// One line per violation: seed, sample index, purity, witness, bound, excess.
pub fn write_violations(violations: &[Violation], mut w: impl Write) -> Result<()> {
    let mut out = String::from("# seed index purity witness bound excess\n");
    for v in violations {
        out.push_str(&violation_line(v));
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_violations(reader: impl BufRead) -> Result<Vec<Violation>> {
    let lines = Lines::read(reader)?;
    lines
        .lines
        .iter()
        .map(|(line, text)| parse_violation(*line, &text.split_whitespace().collect::<Vec<_>>()))
        .collect()
}

/// `n <qubits>` followed by `<pauli string> <value>` lines; omitted entries are zero.
pub fn write_tensor(t: &CorrelationTensor, mut w: impl Write) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "n {}", t.n()).unwrap();
    for (idx, &v) in t.entries().iter().enumerate() {
        if v != 0.0 {
            writeln!(out, "{} {v}", format_pauli_string(&pauli_string(t.n(), idx))).unwrap();
        }
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_tensor(reader: impl BufRead) -> Result<CorrelationTensor> {
    let mut lines = Lines::read(reader)?;
    let n: usize = lines.parsed("n")?;
    crate::quantum::check_qubits(n)?;
    let mut entries = vec![0.0; 1 << (2 * n)];
    entries[0] = 1.0;
    let mut seen = vec![false; entries.len()];
    while let Some((line, text)) = lines.next() {
        let (label, value) = split_key(&text);
        let paulis = parse_pauli_string(label)
            .filter(|p| p.len() == n)
            .ok_or_else(|| parse_err(line, format!("bad Pauli string `{label}`")))?;
        let idx = pauli_index(&paulis);
        if std::mem::replace(&mut seen[idx], true) {
            return Err(parse_err(line, format!("duplicate entry {label}")));
        }
        let v: f64 = parse_value(line, "value", value)?;
        if !v.is_finite() {
            return Err(parse_err(line, format!("bad value `{value}`")));
        }
        entries[idx] = v;
    }
    CorrelationTensor::from_entries(n, entries)
}
