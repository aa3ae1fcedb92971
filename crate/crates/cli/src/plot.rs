//! CSV → gnuplot data blocks (separated by two blank lines, usable with `index`).
//!
//! Study files give one block per `N` with columns `t mse stderr fit`, where
//! `fit` is the through-origin rate line. SPSA files give one block per
//! trajectory plus their average.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use enkbf_core::experiments::{rate_summary, MseRow};
use enkbf_core::Variant;

use crate::error::{CliError, CliResult};
use crate::io::{num, write_text};

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => data_err(path, e),
    })?;
    let header = reader
        .headers()
        .map_err(|e| data_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(|f| f.trim().to_string()).collect())
                .map_err(|e| data_err(path, e))
        })
        .collect::<CliResult<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| data_err(path, format!("`{field}`: {e}")))
}

pub fn plot(input: &Path, out: &Path) -> CliResult<()> {
    let (header, rows) = read_table(input)?;
    let text = match header.first().map(String::as_str) {
        Some("variant") => study_blocks(input, &header, &rows)?,
        Some("trajectory") => spsa_blocks(input, &header, &rows)?,
        _ => return Err(data_err(input, "expected an mse-study or spsa CSV")),
    };
    write_text(out, &text)
}

fn study_blocks(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<String> {
    let expected = ["variant", "t", "N", "M", "mse", "rate", "stderr"];
    if header != expected {
        return Err(data_err(path, format!("header must be {}", expected.join(","))));
    }
    let mut parsed = Vec::with_capacity(rows.len());
    for r in rows {
        let variant: Variant = parse(path, &r[0])?;
        parsed.push(MseRow {
            variant,
            t: parse(path, &r[1])?,
            n: parse(path, &r[2])?,
            m: parse(path, &r[3])?,
            mse: parse(path, &r[4])?,
            rate: parse(path, &r[5])?,
            stderr: parse(path, &r[6])?,
            bias: f64::NAN,
            bias_stderr: f64::NAN,
        });
    }
    let summary = rate_summary(&parsed)?;
    let mut by_n: BTreeMap<usize, Vec<&MseRow>> = BTreeMap::new();
    for r in &parsed {
        by_n.entry(r.n).or_default().push(r);
    }
    let mut s = String::new();
    let law = if summary.variant == Variant::F3 { "c/N" } else { "c*t/N" };
    let _ = writeln!(s, "# variant {} fit mse = {law}, c = {}", summary.variant, num(summary.constant));
    for (i, (n, rows)) in by_n.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# N = {n}");
        let _ = writeln!(s, "# t mse stderr fit");
        let mut rows = rows.clone();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        for r in rows {
            let scale = if summary.variant == Variant::F3 { 1.0 } else { r.t };
            let fit = summary.constant * scale / r.n as f64;
            let _ = writeln!(s, "{} {} {} {}", num(r.t), num(r.mse), num(r.stderr), num(fit));
        }
    }
    Ok(s)
}

fn spsa_blocks(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<String> {
    let d = header.len().saturating_sub(2);
    if d == 0 || header[1] != "t" || (1..=d).any(|k| header[k + 1] != format!("theta_{k}")) {
        return Err(data_err(path, "header must be trajectory,t,theta_1..theta_d"));
    }
    let mut by_traj: BTreeMap<usize, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        let j: usize = parse(path, &r[0])?;
        let t: usize = parse(path, &r[1])?;
        let theta = r[2..].iter().map(|f| parse(path, f)).collect::<CliResult<Vec<f64>>>()?;
        by_traj.entry(j).or_default().push((t, theta));
    }
    let mut s = String::new();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, (j, pts)) in by_traj.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# trajectory {j}");
        for (t, theta) in pts {
            let _ = write!(s, "{t}");
            for v in theta {
                let _ = write!(s, " {}", num(*v));
            }
            s.push('\n');
            let e = sums.entry(*t).or_insert_with(|| (vec![0.0; d], 0));
            e.0.iter_mut().zip(theta).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
    }
    if !by_traj.is_empty() {
        s.push_str("\n\n# average\n");
        for (t, (sum, count)) in &sums {
            let _ = write!(s, "{t}");
            for v in sum {
                let _ = write!(s, " {}", num(v / *count as f64));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_plot_has_one_block_per_n() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("s.csv");
        write_text(
            &input,
            "variant,t,N,M,mse,rate,stderr\n\
             f1,50,1000,100,2.2e-4,4.4e-3,1e-5\n\
             f1,200,1000,100,1.0e-3,5.0e-3,1e-4\n\
             f1,50,500,100,4.4e-4,4.4e-3,1e-5\n",
        )
        .unwrap();
        let out = dir.path().join("s.dat");
        plot(&input, &out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert_eq!(text.matches("# N = ").count(), 2);
        assert_eq!(text.matches("\n\n\n").count(), 1);
    }

    #[test]
    fn spsa_plot_has_trajectories_and_average() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("t.csv");
        write_text(&input, "trajectory,t,theta_1\n0,1,2.0\n0,2,3.0\n1,1,4.0\n1,2,5.0\n").unwrap();
        let out = dir.path().join("t.dat");
        plot(&input, &out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.contains("# trajectory 1"));
        assert!(text.contains("# average\n1 3.0\n2 4.0\n"));
    }

    #[test]
    fn unknown_layout_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.csv");
        write_text(&input, "a,b\n1,2\n").unwrap();
        assert!(matches!(plot(&input, &dir.path().join("x.dat")), Err(CliError::Data(_))));
    }
}
