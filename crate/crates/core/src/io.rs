//! Matrix Market reading and writing, permutation and vector files, the
//! manufactured-solution benchmark and line-delimited JSON reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::pipeline::{solve_sparse, PipelineConfig, PipelineReport, Timings};
use crate::sparse::SparseMatrix;

/// Relative error a benchmark case must meet to count as a success.
pub const SUCCESS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

fn parse_err(line: usize, msg: impl Into<String>) -> SapError {
    SapError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(Format, Symmetry)> {
    let words: Vec<String> = line
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(parse_err(lineno, format!("malformed header {line:?}")));
    }
    let format = match words[2].as_str() {
        "coordinate" => Format::Coordinate,
        "array" => Format::Array,
        f => return Err(parse_err(lineno, format!("unknown format {f:?}"))),
    };
    match words[3].as_str() {
        "real" | "integer" | "double" => {}
        "pattern" => {
            return Err(parse_err(
                lineno,
                "pattern matrices carry no values to solve with",
            ))
        }
        "complex" => return Err(parse_err(lineno, "complex matrices are not supported")),
        f => return Err(parse_err(lineno, format!("unknown field {f:?}"))),
    }
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        s => return Err(parse_err(lineno, format!("unsupported symmetry {s:?}"))),
    };
    Ok((format, symmetry))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, lineno: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(lineno, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(lineno, format!("invalid {what} {tok:?}")))
}

/// Parse Matrix Market text. Symmetric and skew-symmetric storage is
/// expanded; the matrix must be square.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<SparseMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let (format, symmetry) = parse_header(&header?, hl)?;

    // size line, skipping comments and blank lines
    let mut data = lines.filter_map(|(no, l)| match l {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('%')).then(|| Ok((no, t.to_string())))
        }
        Err(e) => Some(Err(e)),
    });
    let (sl, size) = data
        .next()
        .ok_or_else(|| parse_err(hl, "missing size line"))??;
    let mut tok = size.split_whitespace();
    let nrows: usize = parse_num(tok.next(), sl, "row count")?;
    let ncols: usize = parse_num(tok.next(), sl, "column count")?;
    if nrows != ncols {
        return Err(parse_err(
            sl,
            format!("matrix is {nrows} x {ncols}, not square"),
        ));
    }
    let n = nrows;
    let mut t = Vec::new();
    let mut push = |i: usize, j: usize, v: f64| {
        t.push((i, j, v));
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => t.push((j, i, v)),
                Symmetry::Skew => t.push((j, i, -v)),
            }
        }
    };
    let mut last = sl;
    match format {
        Format::Coordinate => {
            let nnz: usize = parse_num(tok.next(), sl, "entry count")?;
            for _ in 0..nnz {
                let (no, l) = data
                    .next()
                    .ok_or_else(|| parse_err(last + 1, format!("expected {nnz} entries")))??;
                last = no;
                let mut w = l.split_whitespace();
                let i: usize = parse_num(w.next(), no, "row index")?;
                let j: usize = parse_num(w.next(), no, "column index")?;
                let v: f64 = parse_num(w.next(), no, "value")?;
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(parse_err(no, format!("index ({i}, {j}) outside 1..={n}")));
                }
                if symmetry != Symmetry::General && j > i {
                    return Err(parse_err(
                        no,
                        format!("entry ({i}, {j}) above the diagonal in symmetric storage"),
                    ));
                }
                if symmetry == Symmetry::Skew && i == j {
                    return Err(parse_err(no, "diagonal entry in skew-symmetric storage"));
                }
                push(i - 1, j - 1, v);
            }
        }
        Format::Array => {
            for j in 0..n {
                let first = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::Skew => j + 1,
                };
                for i in first..n {
                    let (no, l) = data
                        .next()
                        .ok_or_else(|| parse_err(last + 1, "too few array entries"))??;
                    last = no;
                    let v: f64 = parse_num(l.split_whitespace().next(), no, "value")?;
                    if v != 0.0 {
                        push(i, j, v);
                    }
                }
            }
        }
    }
    if let Some(extra) = data.next() {
        let (no, _) = extra?;
        return Err(parse_err(no, "unexpected data after the last entry"));
    }
    SparseMatrix::from_triplets(n, n, &t)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

/// Write in coordinate real general form with round-trip precision.
pub fn write_matrix_market_to<W: Write>(mut w: W, a: &SparseMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_market(path: impl AsRef<Path>, a: &SparseMatrix) -> Result<()> {
    write_matrix_market_to(BufWriter::new(File::create(path)?), a)
}

/// Read a vector: a Matrix Market `n x 1` array file, or one value per line.
pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut header = true;
    let mut array = false;
    for (i, l) in BufReader::new(File::open(path)?).lines().enumerate() {
        let l = l?;
        let t = l.trim();
        if header && t.to_ascii_lowercase().starts_with("%%matrixmarket") {
            if !t.to_ascii_lowercase().contains("array") {
                return Err(parse_err(i + 1, "vector files must use the array format"));
            }
            array = true;
            header = false;
            continue;
        }
        header = false;
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        if array {
            // size line
            let mut w = t.split_whitespace();
            let _rows: usize = parse_num(w.next(), i + 1, "row count")?;
            let cols: usize = parse_num(w.next(), i + 1, "column count")?;
            if cols != 1 {
                return Err(parse_err(i + 1, "vector files must have one column"));
            }
            array = false;
            continue;
        }
        out.push(parse_num(t.split_whitespace().next(), i + 1, "value")?);
    }
    Ok(out)
}

/// One 0-based index per line.
pub fn write_permutation(path: impl AsRef<Path>, perm: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in perm {
        writeln!(w, "{p}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_permutation(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, l) in BufReader::new(File::open(path)?).lines().enumerate() {
        let l = l?;
        if !l.trim().is_empty() {
            out.push(parse_num(Some(l.trim()), i + 1, "index")?);
        }
    }
    Ok(out)
}

/// Parabolic solution profile: `x_j = 1 + 399 (1 - t_j^2)` with
/// `t_j = 2j/(n-1) - 1`, so the ends are 1 and the middle is 400.
pub fn manufactured_solution(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![400.0];
    }
    let h = (n - 1) as f64;
    (0..n)
        .map(|j| {
            let t = 2.0 * j as f64 / h - 1.0;
            1.0 + 399.0 * (1.0 - t * t)
        })
        .collect()
}

/// `||x - x*||_2 / ||x*||_2`
pub fn relative_error(x: &[f64], x_star: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = x_star.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub path: PathBuf,
    pub n: usize,
    pub nnz: usize,
    pub config: PipelineConfig,
    pub x_star: Vec<f64>,
    pub outcome: Outcome,
    pub relative_error: Option<f64>,
    pub report: Option<PipelineReport>,
}

impl BenchmarkCase {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn record(&self) -> ReportRecord {
        ReportRecord::from_case(self)
    }
}

/// Run the manufactured-solution protocol on an in-memory matrix.
pub fn run_case_matrix(path: PathBuf, a: &SparseMatrix, cfg: &PipelineConfig) -> BenchmarkCase {
    let x_star = manufactured_solution(a.n());
    let b = a.mul_vec(&x_star);
    let mut case = BenchmarkCase {
        path,
        n: a.n(),
        nnz: a.nnz(),
        config: cfg.clone(),
        x_star,
        outcome: Outcome::Success,
        relative_error: None,
        report: None,
    };
    match solve_sparse(a, &b, cfg) {
        Ok((x, report)) => {
            let err = relative_error(&x, &case.x_star);
            case.relative_error = Some(err);
            case.report = Some(report);
            if err.is_nan() || err > SUCCESS_THRESHOLD {
                case.outcome = Outcome::Failure {
                    stage: "accuracy".into(),
                    message: format!("relative error {err:e} above {SUCCESS_THRESHOLD}"),
                };
            }
        }
        Err(e) => {
            case.outcome = Outcome::Failure {
                stage: e.stage().into(),
                message: e.to_string(),
            };
            if let SapError::NotConverged { report, .. } = e {
                case.report = Some(*report);
            }
        }
    }
    case
}

/// Read and solve one file; read failures become an `io` stage failure.
pub fn run_case(path: &Path, cfg: &PipelineConfig) -> BenchmarkCase {
    match read_matrix_market(path) {
        Ok(a) => run_case_matrix(path.to_path_buf(), &a, cfg),
        Err(e) => BenchmarkCase {
            path: path.to_path_buf(),
            n: 0,
            nnz: 0,
            config: cfg.clone(),
            x_star: Vec::new(),
            outcome: Outcome::Failure {
                stage: e.stage().into(),
                message: e.to_string(),
            },
            relative_error: None,
            report: None,
        },
    }
}

/// Run every case with at most `jobs` worker threads (0 lets the pool pick).
/// Results follow input order.
pub fn run_benchmark<P: AsRef<Path> + Sync>(
    paths: &[P],
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<BenchmarkCase>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SapError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        paths
            .par_iter()
            .map(|p| run_case(p.as_ref(), cfg))
            .collect()
    }))
}

/// Matrix Market files (`*.mtx`) directly inside `dir`, sorted by name.
pub fn list_matrices(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub cases: usize,
    pub successes: usize,
    /// Failure count per stage name.
    pub failures: BTreeMap<String, usize>,
    /// Median of each timing over cases that produced a report.
    pub median_timings: BTreeMap<String, f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn summarize(cases: &[BenchmarkCase]) -> BenchmarkSummary {
    let mut failures = BTreeMap::new();
    for c in cases {
        if let Outcome::Failure { stage, .. } = &c.outcome {
            *failures.entry(stage.clone()).or_insert(0) += 1;
        }
    }
    let timings: Vec<Timings> = cases
        .iter()
        .filter_map(|c| c.report.as_ref().map(|r| r.timings))
        .collect();
    let median_timings = Timings::default()
        .entries()
        .iter()
        .enumerate()
        .map(|(k, &(name, _))| {
            (
                name.to_string(),
                median(timings.iter().map(|t| t.entries()[k].1).collect()),
            )
        })
        .collect();
    BenchmarkSummary {
        cases: cases.len(),
        successes: cases.iter().filter(|c| c.is_success()).count(),
        failures,
        median_timings,
    }
}

/// Flat per-case record written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub matrix: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_stage: Option<String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub nnz: usize,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "P")]
    pub p: Option<usize>,
    pub d_estimate: Option<f64>,
    pub iterations: Option<f64>,
    pub relative_error: Option<f64>,
    #[serde(flatten)]
    pub timings: Timings,
}

impl ReportRecord {
    pub fn from_case(c: &BenchmarkCase) -> Self {
        let r = c.report.as_ref();
        let (status, failed_stage) = match &c.outcome {
            Outcome::Success => ("success".to_string(), None),
            Outcome::Failure { stage, .. } => ("failure".to_string(), Some(stage.clone())),
        };
        Self {
            matrix: c.path.display().to_string(),
            status,
            failed_stage,
            n: c.n,
            nnz: c.nnz,
            k: r.map(|r| r.k),
            p: r.map(|r| r.p),
            d_estimate: r.and_then(|r| r.d_estimate),
            iterations: r.and_then(|r| r.stats.as_ref()).map(|s| s.iterations),
            relative_error: c.relative_error,
            timings: r.map(|r| r.timings).unwrap_or_default(),
        }
    }

    /// Record for a single solve outside the benchmark protocol.
    pub fn from_report(matrix: &str, report: &PipelineReport, relative_error: Option<f64>) -> Self {
        Self {
            matrix: matrix.to_string(),
            status: if report.success { "success" } else { "failure" }.into(),
            failed_stage: (!report.success).then(|| "Krylov".to_string()),
            n: report.n,
            nnz: report.nnz,
            k: Some(report.k),
            p: Some(report.p),
            d_estimate: report.d_estimate,
            iterations: report.stats.as_ref().map(|s| s.iterations),
            relative_error,
            timings: report.timings,
        }
    }
}

pub fn write_records_to<W: Write>(mut w: W, records: &[ReportRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(path: impl AsRef<Path>, records: &[ReportRecord]) -> Result<()> {
    write_records_to(BufWriter::new(File::create(path)?), records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ReportRecord>> {
    let mut out = Vec::new();
    for (i, l) in BufReader::new(File::open(path)?).lines().enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SparseMatrix> {
        parse_matrix_market(s.as_bytes())
    }

    #[test]
    fn coordinate_diagonal() {
        let a = parse(
            "%%MatrixMarket matrix coordinate real general\n% c\n3 3 3\n1 1 1.0\n2 2 2\n3 3 3e0\n",
        )
        .unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(2, 2), 3.0);
        assert_eq!(a.half_bandwidth(), 0);
    }

    #[test]
    fn symmetric_expansion() {
        let a = parse("%%MatrixMarket matrix coordinate real symmetric\n3 3 4\n1 1 4\n2 1 -1\n3 2 -1\n3 3 4\n").unwrap();
        assert_eq!(a.nnz(), 2 * 4 - 2);
        assert_eq!(a.get(0, 1), -1.0);
        assert!(a.is_pattern_symmetric());
    }

    #[test]
    fn skew_symmetric_expansion() {
        let a = parse("%%MatrixMarket matrix coordinate integer skew-symmetric\n2 2 1\n2 1 5\n")
            .unwrap();
        assert_eq!(a.get(1, 0), 5.0);
        assert_eq!(a.get(0, 1), -5.0);
    }

    #[test]
    fn array_formats() {
        let a = parse("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n").unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
        let s = parse("%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n4\n").unwrap();
        assert_eq!(s.to_dense(), vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            (
                "%%MatrixMarket matrix coordinate pattern general\n2 2 1\n1 1\n",
                1,
            ),
            (
                "%%MatrixMarket matrix coordinate complex general\n2 2 1\n1 1 1 0\n",
                1,
            ),
            ("%%MatrixMarket vector coordinate real general\n", 1),
            ("%%MatrixMarket matrix coordinate real general\n2 3 0\n", 2),
            (
                "%%MatrixMarket matrix coordinate real general\n2 2 1\n% x\n3 1 1\n",
                4,
            ),
            (
                "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n",
                4,
            ),
            (
                "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n",
                3,
            ),
            (
                "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 1\n",
                3,
            ),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(SapError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn write_read_round_trip() {
        let a = crate::gallery::random_sparse(30, 0.1, 4).scale(1.0 / 3.0);
        let mut buf = Vec::new();
        write_matrix_market_to(&mut buf, &a).unwrap();
        assert_eq!(parse_matrix_market(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn manufactured_examples() {
        assert_eq!(
            manufactured_solution(5),
            vec![1.0, 300.25, 400.0, 300.25, 1.0]
        );
        assert_eq!(manufactured_solution(2), vec![1.0, 1.0]);
        assert_eq!(manufactured_solution(1), vec![400.0]);
        let x = manufactured_solution(1001);
        assert_eq!(x[500], 400.0);
        assert!(x.iter().all(|&v| v <= 400.0));
    }

    #[test]
    fn identity_case_succeeds() {
        let c = run_case_matrix(
            "eye".into(),
            &SparseMatrix::identity(50),
            &PipelineConfig::default(),
        );
        assert!(c.is_success());
        assert!(c.relative_error.unwrap() < 1e-14);
    }

    #[test]
    fn singular_case_recorded() {
        let a =
            SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 0, 1.0), (2, 2, 1.0)]).unwrap();
        let c = run_case_matrix("sing".into(), &a, &PipelineConfig::default());
        assert_eq!(
            c.outcome,
            Outcome::Failure {
                stage: "DB".into(),
                message: c.outcome_message()
            }
        );
    }

    impl BenchmarkCase {
        fn outcome_message(&self) -> String {
            match &self.outcome {
                Outcome::Failure { message, .. } => message.clone(),
                Outcome::Success => String::new(),
            }
        }
    }

    #[test]
    fn record_round_trip_and_field_names() {
        let c = run_case_matrix(
            "p".into(),
            &crate::gallery::poisson_2d(6),
            &PipelineConfig::default(),
        );
        let rec = c.record();
        let mut buf = Vec::new();
        write_records_to(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for key in [
            "N",
            "nnz",
            "K",
            "d_estimate",
            "iterations",
            "relative_error",
            "T_DB",
            "T_CM",
            "T_Drop",
            "T_Asmbl",
            "T_BC",
            "T_LU",
            "T_SPK",
            "T_LUrdcd",
            "T_Kry",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ReportRecord = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn summary_counts() {
        let ok = run_case_matrix(
            "a".into(),
            &SparseMatrix::identity(4),
            &PipelineConfig::default(),
        );
        let bad = run_case(
            Path::new("/nonexistent/file.mtx"),
            &PipelineConfig::default(),
        );
        let s = summarize(&[ok, bad]);
        assert_eq!(s.cases, 2);
        assert_eq!(s.successes, 1);
        assert_eq!(s.failures.get("io"), Some(&1));
        assert!(s.median_timings.contains_key("T_Kry"));
    }
}
