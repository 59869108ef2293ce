//! Results table: a time column plus named value columns, stored as CSV with
//! round-trippable doubles.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub times: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

/// 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl ResultTable {
    pub fn new(times: Vec<f64>) -> Self {
        Self { times, columns: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.times.len() {
            return Err(Error::DimensionMismatch(format!(
                "column `{name}` has {} rows, table has {}",
                values.len(),
                self.times.len()
            )));
        }
        if name == "t" || self.column(&name).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate column `{name}`")));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn header(&self) -> Vec<&str> {
        std::iter::once("t").chain(self.columns.iter().map(|c| c.0.as_str())).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if name == "t" {
            return Some(&self.times);
        }
        self.columns.iter().find(|c| c.0 == name).map(|c| c.1.as_slice())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(self.header()).map_err(csv_err)?;
        for (i, t) in self.times.iter().enumerate() {
            let row = std::iter::once(format_value(*t)).chain(self.columns.iter().map(|c| format_value(c.1[i])));
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(r);
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Io("results table must start with column `t`".into()));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Io(format!("row {}: `{field}` is not a number", line + 2)))?;
                cols[j].push(v);
            }
        }
        let mut cols = cols.into_iter();
        let times = cols.next().unwrap_or_default();
        Ok(Self { times, columns: header.into_iter().skip(1).zip(cols).collect() })
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }
}
