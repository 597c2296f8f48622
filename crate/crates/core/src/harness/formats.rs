//! On-disk formats.
//!
//! Matrix file: `SSM1`, rows and cols as u64 LE, then rows×cols f64 LE in
//! row-major order. Model file: `SSE1`, a u64 LE section count, then per
//! section a u64 LE name length, the UTF-8 name, and a matrix payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::network::{EncoderParams, LayerParams, Tying};
use crate::problem::{Dictionary, GroupStructure};
use crate::prox::ThresholdPair;

pub const MATRIX_MAGIC: &[u8; 4] = b"SSM1";
pub const MODEL_MAGIC: &[u8; 4] = b"SSE1";

/// Longest section name accepted when reading.
const MAX_NAME: u64 = 4096;

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    ensure!(
        &b == magic,
        Format,
        "bad magic {:?} for {what}, expected {:?}",
        String::from_utf8_lossy(&b),
        String::from_utf8_lossy(magic)
    );
    Ok(())
}

fn located(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| located(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| located(path, e))
}

pub fn write_matrix(w: &mut impl Write, a: &Array2<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for row in a.rows() {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix(r: &mut impl Read) -> Result<Array2<f64>> {
    check_magic(r, MATRIX_MAGIC, "matrix")?;
    let rows = read_u64(r, "matrix header")?;
    let cols = read_u64(r, "matrix header")?;
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n <= (isize::MAX as u64) / 8)
        .ok_or_else(|| Error::Format(format!("matrix shape {rows}x{cols} is too large")))?;
    let (rows, cols) = (usize::try_from(rows).unwrap_or(usize::MAX), cols as usize);
    let mut bytes = Vec::new();
    r.take(len * 8).read_to_end(&mut bytes)?;
    ensure!(
        bytes.len() as u64 == len * 8,
        Format,
        "truncated matrix: expected {len} values, found {}",
        bytes.len() / 8
    );
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_matrix(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    write_matrix(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix(&mut BufReader::new(open(path)?))
}

pub fn save_dictionary(path: &Path, d: &Dictionary) -> Result<()> {
    save_matrix(path, d.atoms())
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    Dictionary::new(load_matrix(path)?)
}

/// Matrix as headerless CSV, one row per line. Values are written in the
/// shortest form that parses back to the same f64.
pub fn write_matrix_csv(w: impl Write, a: &Array2<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in a.rows() {
        out.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(r: impl Read) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        ensure!(
            *cols.get_or_insert(rec.len()) == rec.len(),
            Format,
            "CSV row {} has {} fields, expected {}",
            i + 1,
            rec.len(),
            cols.unwrap_or(0)
        );
        for field in rec.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("CSV row {}: '{field}' is not a number", i + 1)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_matrix_csv(path: &Path, a: &Array2<f64>) -> Result<()> {
    write_matrix_csv(create(path)?, a)
}

pub fn load_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    read_matrix_csv(open(path)?)
}

/// Loads a matrix by extension: `.csv` as CSV, anything else as a matrix file.
pub fn load_any_matrix(path: &Path) -> Result<Array2<f64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_matrix_csv(path)
    } else {
        load_matrix(path)
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text form of a group structure: `p <int>`, one line of indices per
/// group, then a `lambda` line and a `mu` line.
pub fn structure_to_string(gs: &GroupStructure) -> String {
    let mut out = format!("p {}\n", gs.p());
    for g in gs.groups() {
        out.push_str(&g.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    out.push_str(&format!("lambda {}\n", join(gs.lambda().iter().copied())));
    out.push_str(&format!("mu {}\n", join(gs.mu().iter().copied())));
    out
}

fn parse_values(line: &str, key: &str, n: usize, lineno: usize) -> Result<Array1<f64>> {
    let rest = line
        .strip_prefix(key)
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .ok_or_else(|| Error::Format(format!("line {lineno}: expected '{key}'")))?;
    let vals = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {lineno}: '{t}' is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        vals.len() == n,
        Format,
        "line {lineno}: '{key}' has {} values, expected {n}",
        vals.len()
    );
    Ok(Array1::from(vals))
}

pub fn parse_structure(text: &str) -> Result<GroupStructure> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    ensure!(lines.len() >= 3, Format, "group structure file is too short");
    let (_, head) = lines[0];
    let p: usize = head
        .strip_prefix("p ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format("line 1: expected 'p <int>'".into()))?;
    let n = lines.len();
    let mut groups = Vec::new();
    for &(lineno, l) in &lines[1..n - 2] {
        groups.push(
            l.split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Format(format!("line {lineno}: '{t}' is not an index")))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let (ln, l) = lines[n - 2];
    let lambda = parse_values(l, "lambda", p, ln)?;
    let (ln, l) = lines[n - 1];
    let mu = parse_values(l, "mu", groups.len(), ln)?;
    GroupStructure::new(groups, lambda, mu).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_structure(path: &Path, gs: &GroupStructure) -> Result<()> {
    std::fs::write(path, structure_to_string(gs)).map_err(|e| located(path, e))
}

pub fn load_structure(path: &Path) -> Result<GroupStructure> {
    parse_structure(&std::fs::read_to_string(path).map_err(|e| located(path, e))?)
}

/// SHA-256 of the structure's text form.
pub fn structure_digest(gs: &GroupStructure) -> [u8; 32] {
    Sha256::digest(structure_to_string(gs).as_bytes()).into()
}

fn row(values: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    Array2::from_shape_vec((1, v.len()), v).expect("one row")
}

fn scalar(v: f64) -> Array2<f64> {
    row([v])
}

/// Named matrices in file order.
pub type Sections = Vec<(String, Array2<f64>)>;

pub fn write_sections(w: &mut impl Write, sections: &Sections) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(sections.len() as u64).to_le_bytes())?;
    for (name, m) in sections {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_matrix(w, m)?;
    }
    Ok(())
}

pub fn read_sections(r: &mut impl Read) -> Result<Sections> {
    check_magic(r, MODEL_MAGIC, "model")?;
    let count = read_u64(r, "model header")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(r, "section name length")?;
        ensure!(len <= MAX_NAME, Format, "section name of {len} bytes is too long");
        let mut name = vec![0u8; len as usize];
        read_exact(r, &mut name, "section name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("section name is not UTF-8".into()))?;
        let m = read_matrix(r).map_err(|e| Error::Format(format!("section '{name}': {e}")))?;
        out.push((name, m));
    }
    Ok(out)
}

fn take<'a>(sections: &'a Sections, name: &str) -> Result<&'a Array2<f64>> {
    sections
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Format(format!("model is missing section '{name}'")))
}

fn take_row(sections: &Sections, name: &str) -> Result<Array1<f64>> {
    let m = take(sections, name)?;
    ensure!(m.nrows() == 1, Format, "section '{name}' must be a single row");
    Ok(m.row(0).to_owned())
}

fn take_scalar(sections: &Sections, name: &str) -> Result<f64> {
    let v = take_row(sections, name)?;
    ensure!(v.len() == 1, Format, "section '{name}' must hold one value");
    Ok(v[0])
}

fn take_count(sections: &Sections, name: &str) -> Result<usize> {
    let v = take_scalar(sections, name)?;
    ensure!(
        v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(52),
        Format,
        "section '{name}' must be a nonnegative integer, got {v}"
    );
    Ok(v as usize)
}

pub fn model_sections(params: &EncoderParams) -> Sections {
    let gs = &params.structure;
    let mut out: Sections = vec![("W".into(), params.filter.clone())];
    let layer_sections = |l: &LayerParams, suffix: &str, out: &mut Sections| {
        out.push((format!("S{suffix}"), l.inhibition.clone()));
        out.push((format!("t{suffix}"), row(l.thresholds.t.iter().copied())));
        out.push((format!("s{suffix}"), row(l.thresholds.s.iter().copied())));
    };
    match params.tying {
        Tying::Tied => layer_sections(&params.layers[0], "", &mut out),
        Tying::Untied => {
            for (k, l) in params.layers.iter().enumerate() {
                layer_sections(l, &format!("_{}", k + 1), &mut out);
            }
        }
    }
    out.push(("T".into(), scalar(params.depth as f64)));
    out.push((
        "tying".into(),
        scalar(match params.tying {
            Tying::Tied => 0.0,
            Tying::Untied => 1.0,
        }),
    ));
    out.push(("alpha_init".into(), scalar(params.alpha_init)));
    out.push((
        "group_sizes".into(),
        row(gs.groups().iter().map(|g| g.len() as f64)),
    ));
    out.push((
        "group_indices".into(),
        row(gs.groups().iter().flatten().map(|&j| j as f64)),
    ));
    out.push(("lambda".into(), row(gs.lambda().iter().copied())));
    out.push(("mu".into(), row(gs.mu().iter().copied())));
    out.push((
        "structure_digest".into(),
        row(structure_digest(gs).iter().map(|&b| b as f64)),
    ));
    out
}

pub fn model_from_sections(sections: &Sections) -> Result<EncoderParams> {
    let sizes = take_row(sections, "group_sizes")?;
    let indices = take_row(sections, "group_indices")?;
    let mut groups = Vec::with_capacity(sizes.len());
    let mut it = indices.iter();
    for &size in &sizes {
        ensure!(
            size >= 0.0 && size.fract() == 0.0,
            Format,
            "bad group size {size}"
        );
        let g = it
            .by_ref()
            .take(size as usize)
            .map(|&j| {
                ensure!(j >= 0.0 && j.fract() == 0.0, Format, "bad group index {j}");
                Ok(j as usize)
            })
            .collect::<Result<Vec<_>>>()?;
        ensure!(g.len() == size as usize, Format, "group indices are truncated");
        groups.push(g);
    }
    ensure!(it.next().is_none(), Format, "extra group indices");
    let gs = GroupStructure::new(groups, take_row(sections, "lambda")?, take_row(sections, "mu")?)
        .map_err(|e| Error::Format(format!("model structure: {e}")))?;
    let digest = take_row(sections, "structure_digest")?;
    let expected = structure_digest(&gs);
    ensure!(
        digest.len() == 32 && digest.iter().zip(expected.iter()).all(|(&a, &b)| a == b as f64),
        Format,
        "structure digest mismatch"
    );

    let depth = take_count(sections, "T")?;
    let tying = match take_scalar(sections, "tying")? {
        0.0 => Tying::Tied,
        1.0 => Tying::Untied,
        v => return Err(Error::Format(format!("unknown tying code {v}"))),
    };
    let layer = |suffix: &str| -> Result<LayerParams> {
        Ok(LayerParams {
            inhibition: take(sections, &format!("S{suffix}"))?.clone(),
            thresholds: ThresholdPair::new(
                take_row(sections, &format!("t{suffix}"))?,
                take_row(sections, &format!("s{suffix}"))?,
            )
            .map_err(|e| Error::Format(format!("layer thresholds{suffix}: {e}")))?,
        })
    };
    let layers = match tying {
        Tying::Tied => vec![layer("")?],
        Tying::Untied => (1..=depth)
            .map(|k| layer(&format!("_{k}")))
            .collect::<Result<_>>()?,
    };
    EncoderParams::from_parts(
        take(sections, "W")?.clone(),
        layers,
        depth,
        tying,
        gs,
        take_scalar(sections, "alpha_init")?,
    )
    .map_err(|e| Error::Format(format!("model: {e}")))
}

pub fn write_model(w: &mut impl Write, params: &EncoderParams) -> Result<()> {
    write_sections(w, &model_sections(params))
}

pub fn read_model(r: &mut impl Read) -> Result<EncoderParams> {
    model_from_sections(&read_sections(r)?)
}

pub fn save_model(path: &Path, params: &EncoderParams) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    write_model(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EncoderParams> {
    read_model(&mut BufReader::new(open(path)?))
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        out.write_record(&self.header).map_err(fmt)?;
        for r in &self.rows {
            out.write_record(r).map_err(fmt)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("UTF-8 fields")
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let header = rdr.headers().map_err(fmt)?.iter().map(String::from).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(fmt))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(create(path)?)
    }
}
