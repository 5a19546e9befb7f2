//! Bit-stable CSV emission.
//!
//! Rows are written in input order, reals with 17 significant digits, so the
//! same results always serialize to byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Str(String),
    Uint(u64),
    Real(f64),
    Bool(bool),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Str(s) => s.clone(),
            Field::Uint(v) => v.to_string(),
            Field::Real(v) => format!("{v:.16e}"),
            Field::Bool(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let rendered: Vec<String> = row.iter().map(Field::render).collect();
            writeln!(out, "{}", rendered.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()
    }
}
