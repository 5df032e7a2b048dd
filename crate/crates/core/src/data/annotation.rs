use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// The annotated retinal surfaces, top to bottom.
pub const SURFACE_NAMES: [&str; 5] = ["ILM", "RNFL-GCL", "IPL-INL", "OPL-ONL", "ONL-IS"];
pub const N_SURFACES: usize = SURFACE_NAMES.len();

pub fn surface_index(name: &str) -> Option<usize> {
    SURFACE_NAMES.iter().position(|&n| n == name)
}

/// Per slice, per surface, per column row positions with validity.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet {
    pub slices: usize,
    pub width: usize,
    /// `[slice][surface][col]`.
    pub rows: Vec<f64>,
    pub valid: Vec<bool>,
}

impl BoundarySet {
    /// All columns invalid.
    pub fn empty(slices: usize, width: usize) -> Self {
        let n = slices * N_SURFACES * width;
        Self {
            slices,
            width,
            rows: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    fn offset(&self, slice: usize, surface: usize) -> usize {
        (slice * N_SURFACES + surface) * self.width
    }

    pub fn surface(&self, slice: usize, surface: usize) -> (&[f64], &[bool]) {
        let o = self.offset(slice, surface);
        (&self.rows[o..o + self.width], &self.valid[o..o + self.width])
    }

    /// `[surface][col]` rows and validity of one slice.
    pub fn slice(&self, slice: usize) -> (&[f64], &[bool]) {
        let n = N_SURFACES * self.width;
        (&self.rows[slice * n..][..n], &self.valid[slice * n..][..n])
    }

    pub fn set(&mut self, slice: usize, surface: usize, col: usize, row: f64, valid: bool) {
        let i = self.offset(slice, surface) + col;
        self.rows[i] = row;
        self.valid[i] = valid;
    }

    /// Whether any column of the slice carries a label.
    pub fn is_annotated(&self, slice: usize) -> bool {
        self.slice(slice).1.iter().any(|&v| v)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    slice: usize,
    surface: String,
    column: usize,
    row: Option<f64>,
    valid: u8,
}

/// Writes every column of every slice, valid or not.
pub fn write_annotations(set: &BoundarySet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    for j in 0..set.slices {
        for (k, name) in SURFACE_NAMES.iter().enumerate() {
            let (rows, valid) = set.surface(j, k);
            for u in 0..set.width {
                w.serialize(Record {
                    slice: j,
                    surface: name.to_string(),
                    column: u,
                    row: valid[u].then_some(rows[u]),
                    valid: valid[u] as u8,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an annotation CSV for a `slices × height × width` volume. Columns
/// that never appear are invalid.
pub fn read_annotations(path: &Path, slices: usize, height: usize, width: usize) -> Result<BoundarySet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations_from(file, slices, height, width)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_annotations_from(r: impl std::io::Read, slices: usize, height: usize, width: usize) -> Result<BoundarySet> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(|e| Error::Data(e.to_string()))?;
    if header != vec!["slice", "surface", "column", "row", "valid"] {
        return Err(Error::Data(format!(
            "annotation header must be slice,surface,column,row,valid, got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut set = BoundarySet::empty(slices, width);
    let mut seen = vec![false; set.rows.len()];
    for (line, rec) in reader.deserialize::<Record>().enumerate() {
        let line = line + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let k = surface_index(&rec.surface)
            .ok_or_else(|| Error::Data(format!("line {line}: unknown surface {:?}", rec.surface)))?;
        if rec.slice >= slices || rec.column >= width {
            return Err(Error::Data(format!(
                "line {line}: slice {} column {} outside a {slices}-slice, {width}-column volume",
                rec.slice, rec.column
            )));
        }
        let valid = match rec.valid {
            0 => false,
            1 => true,
            v => return Err(Error::Data(format!("line {line}: valid must be 0 or 1, got {v}"))),
        };
        let row = match (valid, rec.row) {
            (true, Some(r)) if r.is_finite() && r >= 0.0 && r < height as f64 => r,
            (true, r) => return Err(Error::Data(format!("line {line}: row {r:?} outside [0, {height})"))),
            (false, r) => r.unwrap_or(0.0),
        };
        let i = set.offset(rec.slice, k) + rec.column;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!(
                "line {line}: duplicate entry for slice {} {} column {}",
                rec.slice, rec.surface, rec.column
            )));
        }
        set.rows[i] = row;
        set.valid[i] = valid;
    }
    Ok(set)
}

/// Class map `[H][W]` from one slice's `[surface][col]` boundaries: pixel row
/// `v` gets class `k` when `s_k ≤ v < s_{k+1}` (class 0 above the first
/// surface, class `S` below the last). Columns with any invalid surface are
/// labelled `-1`.
pub fn mask_from_boundaries(rows: &[f64], valid: &[bool], height: usize, width: usize) -> Result<Vec<i32>> {
    if rows.len() % width.max(1) != 0 || rows.len() != valid.len() || width == 0 {
        return Err(shape_err!("boundaries of length {} for width {width}", rows.len()));
    }
    let s = rows.len() / width;
    let mut out = vec![-1i32; height * width];
    for u in 0..width {
        if (0..s).any(|k| !valid[k * width + u]) {
            continue;
        }
        for k in 1..s {
            let (a, b) = (rows[(k - 1) * width + u], rows[k * width + u]);
            if b < a {
                return Err(Error::Data(format!(
                    "column {u}: surface {} at row {b} lies above surface {} at row {a}",
                    k + 1,
                    k
                )));
            }
        }
        for v in 0..height {
            let class = (0..s).filter(|&k| rows[k * width + u] <= v as f64).count();
            out[v * width + u] = class as i32;
        }
    }
    Ok(out)
}
