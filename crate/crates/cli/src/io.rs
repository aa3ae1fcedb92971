//! CSV persistence: `.` decimals, `\n` line ends, mandatory header row.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use enkbf_core::models::{grid_dt, PathPair};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
    buf: Vec<String>,
}

impl CsvOut {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let mut out = Self {
            writer,
            path: path.to_path_buf(),
            buf: Vec::new(),
        };
        out.row(header.iter().map(|h| h.as_ref().to_string()))?;
        Ok(out)
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> CliResult<()> {
        self.buf.clear();
        self.buf.extend(fields);
        self.writer
            .write_record(&self.buf)
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> CliResult<()> {
        let path = self.path.clone();
        self.writer
            .flush()
            .map_err(|e| CliError::io(&path, e))?;
        let inner = self
            .writer
            .into_inner()
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        inner
            .into_inner()
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
            .sync_all()
            .map_err(|e| CliError::io(&path, e))
    }
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Writes `t,x_1..x_r1,y_1..y_r2`.
pub fn write_path_pair(path: &Path, pp: &PathPair<f64>) -> CliResult<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("x", pp.state_dim()))
        .chain(numbered("y", pp.obs_dim()))
        .collect();
    let mut out = CsvOut::create(path, &header)?;
    let (x, y) = (pp.signal(), pp.observation());
    for k in 0..pp.len() {
        let row = std::iter::once(num(pp.time(k)))
            .chain((0..x.nrows()).map(|i| num(x[(i, k)])))
            .chain((0..y.nrows()).map(|i| num(y[(i, k)])));
        out.row(row)?;
    }
    out.finish()
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

/// Reads a `t,x_..,y_..` file and recovers the grid level from its spacing.
pub fn read_path_pair(path: &Path) -> CliResult<PathPair<f64>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(|e| data_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.first() != Some(&"t") {
        return Err(data_err(path, "first column must be `t`"));
    }
    let r1 = names.iter().filter(|h| h.starts_with("x_")).count();
    let r2 = names.iter().filter(|h| h.starts_with("y_")).count();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("x", r1))
        .chain(numbered("y", r2))
        .collect();
    if r1 == 0 || r2 == 0 || names != expected {
        return Err(data_err(path, "header must be t,x_1..x_r1,y_1..y_r2"));
    }
    let mut times = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e))?;
        if rec.len() != 1 + r1 + r2 {
            return Err(data_err(path, format!("row {} has {} fields", line + 2, rec.len())));
        }
        let mut vals = rec.iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| data_err(path, format!("row {}: `{f}`: {e}", line + 2)))
        });
        times.push(vals.next().expect("length checked")?);
        for _ in 0..r1 {
            xs.push(vals.next().expect("length checked")?);
        }
        for _ in 0..r2 {
            ys.push(vals.next().expect("length checked")?);
        }
    }
    if times.len() < 2 {
        return Err(data_err(path, "need at least two grid times"));
    }
    let dt = times[1] - times[0];
    let level = -dt.log2();
    if !(dt > 0.0) || level.fract() != 0.0 || !(0.0..=60.0).contains(&level) {
        return Err(data_err(path, format!("time step {dt} is not 2^-L")));
    }
    let level = level as u32;
    let step: f64 = grid_dt(level);
    for (k, &t) in times.iter().enumerate() {
        if t != k as f64 * step {
            return Err(data_err(path, format!("row {}: t = {t} is off the 2^-{level} grid", k + 2)));
        }
    }
    let n = times.len();
    let signal = DMatrix::from_column_slice(r1, n, &xs);
    let observation = DMatrix::from_column_slice(r2, n, &ys);
    PathPair::new(level, signal, observation).map_err(|e| data_err(path, e))
}

/// Writes `text` to `path` in one go.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use enkbf_core::models::{simulate_truth, LinearGaussianModel};

    #[test]
    fn path_pair_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let model = LinearGaussianModel::new(
            DMatrix::identity(2, 2) * -1.0,
            DMatrix::from_row_slice(1, 2, &[0.3, 0.7]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1) * 0.5,
            enkbf_core::models::InitialLaw::isotropic(2, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        let pp = simulate_truth(&model, 2.0, 5, 13).unwrap();
        let path = dir.path().join("pp.csv");
        write_path_pair(&path, &pp).unwrap();
        let back = read_path_pair(&path).unwrap();
        assert_eq!(back, pp);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x_1,x_2,y_1\n"));
        assert_eq!(text.lines().count(), 2 * 32 + 2);
    }

    #[test]
    fn rejects_bad_grids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        write_text(&path, "t,x_1,y_1\n0,1,0\n0.3,1,0.1\n").unwrap();
        assert!(matches!(read_path_pair(&path), Err(CliError::Data(_))));
        write_text(&path, "t,x_1,y_1\n0,1,0.5\n0.5,1,0.1\n").unwrap();
        assert!(matches!(read_path_pair(&path), Err(CliError::Data(_))));
        write_text(&path, "t,x_1,y_1\n0,1,0\n0.5,1,zz\n").unwrap();
        assert!(matches!(read_path_pair(&path), Err(CliError::Data(_))));
    }
}
