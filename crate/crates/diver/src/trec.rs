//! TREC run files: `query_id Q0 doc_id rank score tag`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use diver_core::eval::RunFile;

use crate::error::{AppError, AppResult};
use crate::jsonl::create_file;

/// Scores print in shortest round-trip form so reading a run back yields the
/// same values.
pub fn write_run(path: &Path, run: &RunFile, tag: &str) -> AppResult<()> {
    let mut w = create_file(path)?;
    write_run_to(&mut w, run, tag).map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_run_to<W: Write + ?Sized>(w: &mut W, run: &RunFile, tag: &str) -> std::io::Result<()> {
    for (qid, ranking) in run.iter() {
        for (rank, (doc, score)) in ranking.iter().enumerate() {
            writeln!(w, "{qid} Q0 {doc} {} {score:?} {tag}", rank + 1)?;
        }
    }
    Ok(())
}

pub fn read_run(path: &Path) -> AppResult<RunFile> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let bad = |n: usize, why: &str| AppError::Data(format!("{}:{n}: {why}", path.display()));
    let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| AppError::io(path, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(bad(n, "expected 6 columns: qid Q0 doc rank score tag"));
        }
        let rank: usize = cols[3].parse().map_err(|_| bad(n, "rank is not an integer"))?;
        let score: f64 = cols[4].parse().map_err(|_| bad(n, "score is not a number"))?;
        per_query.entry(cols[0].to_string()).or_default().push((rank, cols[2].to_string(), score));
    }
    let mut run = RunFile::new();
    for (qid, mut rows) in per_query {
        rows.sort_by_key(|r| r.0);
        run.insert(qid.clone(), rows.into_iter().map(|(_, d, s)| (d, s)).collect())
            .map_err(|e| AppError::Data(format!("{}: query `{qid}`: {e}", path.display())))?;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut run = RunFile::new();
        run.insert("q1", vec![("d1".into(), 1.0 / 3.0), ("d2".into(), 0.1 + 0.2)]).unwrap();
        run.insert("q2", vec![("d9".into(), 5.0)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.trec");
        write_run(&p, &run, "diver").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("q1 Q0 d2 2 0.30000000000000004 diver\n"));
        assert_eq!(read_run(&p).unwrap(), run);
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.trec");
        std::fs::write(&p, "q1 Q0 d1 1 0.5 t\nq1 Q0 d2 two 0.4 t\n").unwrap();
        assert!(read_run(&p).unwrap_err().to_string().contains(":2:"));
        std::fs::write(&p, "q1 Q0 d1 1 0.5 t\nq1 Q0 d1 2 0.4 t\n").unwrap();
        assert!(read_run(&p).is_err());
    }
}
