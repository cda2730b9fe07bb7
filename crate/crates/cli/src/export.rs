//! CSV artifacts. Header row, LF line endings, `.` as decimal separator,
//! 1-based matrix indices.

use std::path::Path;

use dtflat::linalg::Matrix;
use dtflat::linearize::LTVSystem;
use dtflat::ltv::ReachabilityAnalysis;
use dtflat::planner::Plan;
use dtflat::Error;

pub type CsvResult = Result<(), csv::Error>;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, csv::Error> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)
}

fn cell(v: f64) -> String {
    format!("{v}")
}

/// Columns `k, A[i][s], B[i][j]` for every `k` in `[lo, hi]` where both
/// matrices are available.
pub fn write_ltv(path: &Path, ltv: &LTVSystem, (lo, hi): (i64, i64)) -> CsvResult {
    let mut w = writer(path)?;
    let mut header = vec!["k".to_string()];
    for i in 1..=ltv.n {
        header.extend((1..=ltv.n).map(|s| format!("A[{i}][{s}]")));
    }
    for i in 1..=ltv.n {
        header.extend((1..=ltv.m).map(|j| format!("B[{i}][{j}]")));
    }
    w.write_record(&header)?;
    for k in lo..=hi {
        let (Ok(a), Ok(b)) = (ltv.a_at(k), ltv.b_at(k)) else { continue };
        let mut row = vec![k.to_string()];
        row.extend(a.row_iter().flat_map(|r| r.iter().map(|v| cell(*v)).collect::<Vec<_>>()));
        row.extend(b.row_iter().flat_map(|r| r.iter().map(|v| cell(*v)).collect::<Vec<_>>()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per tested window: `k0, kf, rank, sigma[1..]`.
pub fn write_windows(path: &Path, analyses: &[ReachabilityAnalysis], n: usize) -> CsvResult {
    let mut w = writer(path)?;
    let mut header = vec!["k0".to_string(), "kf".to_string(), "rank".to_string()];
    header.extend((1..=n).map(|i| format!("sigma[{i}]")));
    w.write_record(&header)?;
    for a in analyses {
        let mut row = vec![a.k0.to_string(), a.kf.to_string(), a.rank.to_string()];
        row.extend((0..n).map(|i| a.singular_values.get(i).map_or_else(String::new, |s| cell(*s))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The matrix row by row, columns `c[1..]`.
pub fn write_matrix(path: &Path, m: &Matrix) -> CsvResult {
    let mut w = writer(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("c[{j}]")))?;
    for r in m.row_iter() {
        w.write_record(r.iter().map(|v| cell(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `k, y*, x*, u*` over the planned `y` window; `x` and `u` cells are
/// empty where the plan does not define them.
pub fn write_plan(path: &Path, plan: &Plan, n: usize, m: usize, (lo, hi): (i64, i64)) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = writer(path)?;
    let mut header = vec!["k".to_string()];
    header.extend((1..=m).map(|j| format!("y{j}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    let optional = |v: Result<Vec<f64>, Error>, len: usize| -> Vec<String> {
        match v {
            Ok(v) => v.into_iter().map(cell).collect(),
            Err(_) => vec![String::new(); len],
        }
    };
    for k in lo..=hi {
        let mut row = vec![k.to_string()];
        row.extend(plan.y.at(k)?.into_iter().map(cell));
        row.extend(optional(plan.realized.x.at(k), n));
        row.extend(optional(plan.realized.u.at(k), m));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
