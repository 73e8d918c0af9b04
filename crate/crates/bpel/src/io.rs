//! CSV and JSON file formats.
//!
//! Floating-point values are written in shortest round-trip form, so reading
//! a file back reproduces every value bit for bit.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use bpel_core::{Chain, Dataset, WeightedSamples};
use serde::Serialize;

use crate::error::{Error, Result};

/// Shortest round-trip text of a float (`1e-300` rather than 300 zeros).
pub fn fmt_f64(v: &f64) -> String {
    format!("{v:?}")
}

/// How the columns of a dataset file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `y,u1,u2,z1..zr`.
    Iv { r: usize },
    /// `x1..xd`.
    Generic,
}

pub fn iv_header(r: usize) -> Vec<String> {
    let mut h = vec![String::from("y"), String::from("u1"), String::from("u2")];
    h.extend((1..=r).map(|j| format!("z{j}")));
    h
}

pub fn generic_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

fn layout_of(header: &[String]) -> Option<Layout> {
    let d = header.len();
    if d >= 4 && header == iv_header(d - 3).as_slice() {
        Some(Layout::Iv { r: d - 3 })
    } else if header == generic_header(d).as_slice() {
        Some(Layout::Generic)
    } else {
        None
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, Layout)> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let layout = layout_of(&header).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: format!("header must be `y,u1,u2,z1,..,zr` or `x1,..,xd`, got `{}`", header.join(",")),
    })?;
    let d = header.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("row {}, column {}: `{field}` is not a number", i + 1, header[j]),
            })?;
            values.push(v);
        }
        n += 1;
    }
    let label = path.display().to_string();
    let data = Dataset::from_row_major(values, n, d, label).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok((data, layout))
}

pub fn write_dataset(path: &Path, data: &Dataset, layout: Layout) -> Result<()> {
    let header = match layout {
        Layout::Iv { r } if r + 3 == data.d() => iv_header(r),
        Layout::Iv { r } => {
            return Err(Error::Config(format!("an IV layout with r = {r} needs {} columns, got {}", r + 3, data.d())))
        }
        Layout::Generic => generic_header(data.d()),
    };
    let mut w = writer(path)?;
    w.write_record(&header).map_err(csv_err(path))?;
    for row in data.rows() {
        w.write_record(row.iter().map(fmt_f64)).map_err(csv_err(path))?;
    }
    finish(w, path)
}

fn theta_columns(prefix: &str, p: usize) -> impl Iterator<Item = String> + '_ {
    (1..=p).map(move |k| format!("{prefix}_{k}"))
}

/// `step,theta_1..theta_p,log_post,accepted` for the post-burn-in draws.
pub fn write_chain(path: &Path, chain: &Chain) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![String::from("step")];
    header.extend(theta_columns("theta", chain.p));
    header.extend([String::from("log_post"), String::from("accepted")]);
    w.write_record(&header).map_err(csv_err(path))?;
    for k in 0..chain.len() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(chain.draw(k).iter().map(fmt_f64));
        rec.push(fmt_f64(&chain.log_post[k]));
        rec.push(u8::from(chain.accepted_flags[k]).to_string());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// `stage,i,theta_1..theta_p,weight` with the normalized recycled weights.
pub fn write_weighted(path: &Path, ws: &WeightedSamples) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![String::from("stage"), String::from("i")];
    header.extend(theta_columns("theta", ws.p));
    header.push(String::from("weight"));
    w.write_record(&header).map_err(csv_err(path))?;
    let mut i_in_stage = 0;
    let mut last_stage = usize::MAX;
    for ((stage, theta), weight) in ws.draws().zip(&ws.recycled_weights) {
        if stage != last_stage {
            i_in_stage = 0;
            last_stage = stage;
        }
        i_in_stage += 1;
        let mut rec = vec![(stage + 1).to_string(), i_in_stage.to_string()];
        rec.extend(theta.iter().map(fmt_f64));
        rec.push(fmt_f64(weight));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// Writes serializable rows with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    finish(w, path)
}

/// Writes a header and pre-formatted records.
pub fn write_table(path: &Path, header: &[String], records: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for rec in records {
        w.write_record(rec).map_err(csv_err(path))?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
