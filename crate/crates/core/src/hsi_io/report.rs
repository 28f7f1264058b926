use std::fs;
use std::path::Path;

use super::HsiError;

/// Header plus rows of already-formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvReport {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows
            .push(row.into_iter().map(|c| c.to_string()).collect());
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses one column as floats.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        self.rows.iter().map(|r| r.get(c)?.parse().ok()).collect()
    }
}

pub fn write_csv_report(report: &CsvReport, path: impl AsRef<Path>) -> Result<(), HsiError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| HsiError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&report.header)?;
    for row in &report.rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| HsiError::io(path, e))
}

pub fn read_csv_report(path: impl AsRef<Path>) -> Result<CsvReport, HsiError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| HsiError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()?;
    Ok(CsvReport { header, rows })
}

/// Writes a 0/1 raster as binary PGM with changed pixels at 255.
pub fn write_change_map(
    predictions: &[u8],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<(), HsiError> {
    let path = path.as_ref();
    if predictions.len() != height * width {
        return Err(HsiError::ShapeMismatch {
            left: vec![height, width],
            right: vec![predictions.len()],
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for (index, &p) in predictions.iter().enumerate() {
        match p {
            0 => out.push(0),
            1 => out.push(255),
            value => return Err(HsiError::InvalidLabel { value, index }),
        }
    }
    fs::write(path, out).map_err(|e| HsiError::io(path, e))
}

/// Reads a binary PGM back into `(height, width, 0/1 values)`.
pub fn read_change_map(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>), HsiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HsiError::io(path, e))?;
    let malformed = || HsiError::Malformed(format!("{}: not a P5 change map", path.display()));
    // header: magic, width, height, maxval, each whitespace-terminated
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed());
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| malformed())?
                .to_owned(),
        );
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(malformed());
    }
    let width: usize = fields[1].parse().map_err(|_| malformed())?;
    let height: usize = fields[2].parse().map_err(|_| malformed())?;
    let payload = bytes.get(pos..).ok_or_else(malformed)?;
    if payload.len() != width * height {
        return Err(HsiError::Truncated {
            expected: width * height,
            found: payload.len(),
        });
    }
    Ok((
        height,
        width,
        payload.iter().map(|&b| u8::from(b > 127)).collect(),
    ))
}
