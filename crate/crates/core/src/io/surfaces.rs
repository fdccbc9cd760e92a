//! Surface CSV files: header `surface_id,c0,c1,...`, one row per surface,
//! `NaN` for invalid columns.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{surface_index, SurfaceSet, NUM_SURFACES, SURFACE_IDS};

pub fn write_surfaces(set: &SurfaceSet, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["surface_id".to_string()];
    header.extend((0..set.width()).map(|c| format!("c{c}")));
    w.write_record(&header).map_err(csv_io)?;
    for k in 0..NUM_SURFACES {
        let mut row = vec![SURFACE_IDS[k].to_string()];
        row.extend((0..set.width()).map(|c| match set.get(k, c) {
            // `{:?}` keeps enough digits to read the value back exactly.
            Some(v) => format!("{v:?}"),
            None => "NaN".to_string(),
        }));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a surface CSV. `expected_width` rejects files whose column count differs.
pub fn read_surfaces(input: impl Read, source: &str, expected_width: Option<usize>) -> Result<SurfaceSet> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| Error::format(source, Some(1), e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("surface_id") {
        return Err(Error::format(source, Some(1), "first header field must be surface_id"));
    }
    let width = header.len() - 1;
    for (c, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("c{c}") {
            return Err(Error::format(source, Some(1), format!("header field {} should be c{c}, got {name:?}", c + 1)));
        }
    }
    if let Some(w) = expected_width {
        if w != width {
            return Err(Error::format(
                source,
                Some(1),
                format!("surface file has {width} columns but the image is {w} wide"),
            ));
        }
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; NUM_SURFACES];
    for (i, rec) in r.records().enumerate() {
        let line = Some(i + 2);
        let rec = rec.map_err(|e| Error::format(source, line, e.to_string()))?;
        if rec.len() != width + 1 {
            return Err(Error::format(source, line, format!("expected {} fields, got {}", width + 1, rec.len())));
        }
        let id: u8 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(source, line, format!("bad surface id {:?}", &rec[0])))?;
        let k = surface_index(id).ok_or_else(|| Error::format(source, line, format!("unknown surface id {id}")))?;
        if rows[k].is_some() {
            return Err(Error::format(source, line, format!("surface {id} appears twice")));
        }
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, f)| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(source, line, format!("column c{c}: bad number {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows[k] = Some(values);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(k, r)| r.ok_or_else(|| Error::format(source, None, format!("surface {} missing", SURFACE_IDS[k]))))
        .collect::<Result<Vec<_>>>()?;
    SurfaceSet::from_rows(rows)
}

pub fn save_surfaces(set: &SurfaceSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_surfaces(set, std::io::BufWriter::new(file))
}

pub fn load_surfaces(path: &Path, expected_width: Option<usize>) -> Result<SurfaceSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::format(path.display().to_string(), None, e.to_string()))?;
    read_surfaces(std::io::BufReader::new(file), &path.display().to_string(), expected_width)
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
