use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::preprocess::BScan;

pub const VOLUME_MAGIC: &[u8; 8] = b"OCTVOL01";
/// Magic, four u32 fields and three f64 spacings.
pub const HEADER_LEN: usize = 8 + 4 * 4 + 3 * 8;

/// On-disk sample type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8 = 1,
    F32 = 2,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::U8),
            2 => Ok(Dtype::F32),
            _ => Err(Error::Data(format!("unknown volume dtype code {code}"))),
        }
    }
}

/// An ordered stack of B-scans with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    /// Storage type used when the volume is written.
    pub dtype: Dtype,
    /// Row, column and slice spacing in µm.
    pub spacing_um: [f64; 3],
    /// `[slice][row][col]`.
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(slices: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != slices * height * width {
            return Err(shape_err!("{slices}x{height}x{width} volume given {} samples", data.len()));
        }
        if slices == 0 || height == 0 || width == 0 {
            return Err(shape_err!("empty volume {slices}x{height}x{width}"));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("volume intensity {v} outside [0,1]")));
        }
        Ok(Self {
            slices,
            height,
            width,
            dtype: Dtype::F32,
            spacing_um: [1.0; 3],
            data,
        })
    }

    pub fn from_bscans(scans: &[BScan]) -> Result<Self> {
        let first = scans.first().ok_or_else(|| shape_err!("no B-scans"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(scans.len() * h * w);
        for s in scans {
            if (s.height(), s.width()) != (h, w) {
                return Err(shape_err!("B-scans differ in size"));
            }
            data.extend_from_slice(s.pixels());
        }
        Self::new(scans.len(), h, w, data)
    }

    pub fn slice(&self, j: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn bscan(&self, j: usize) -> Result<BScan> {
        if j >= self.slices {
            return Err(Error::InvalidArgument(format!("slice {j} of a {}-slice volume", self.slices)));
        }
        let mut b = BScan::new(self.height, self.width, self.slice(j).to_vec())?;
        b.row_spacing_um = Some(self.spacing_um[0]);
        b.col_spacing_um = Some(self.spacing_um[1]);
        Ok(b)
    }

    pub fn file_size(&self) -> usize {
        HEADER_LEN + self.slices * self.height * self.width * self.dtype.size()
    }
}

pub fn write_volume(vol: &Volume, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    write_volume_to(vol, &mut f).map_err(io)?;
    f.flush().map_err(io)
}

pub fn write_volume_to(vol: &Volume, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(VOLUME_MAGIC)?;
    for v in [vol.slices, vol.height, vol.width] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(vol.dtype as u32).to_le_bytes())?;
    for s in vol.spacing_um {
        w.write_all(&s.to_le_bytes())?;
    }
    match vol.dtype {
        Dtype::U8 => {
            let raw: Vec<u8> = vol.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
            w.write_all(&raw)
        }
        Dtype::F32 => {
            let raw: Vec<u8> = vol.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&raw)
        }
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_volume_from(&mut BufReader::new(f)).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_volume_from(r: &mut impl Read) -> Result<Volume> {
    let truncated = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Data("volume file is truncated".into()),
        _ => Error::Data(format!("reading volume: {e}")),
    };
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(truncated)?;
    if &header[..8] != VOLUME_MAGIC {
        return Err(Error::Data("not a volume file (bad magic)".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(header[24 + 8 * i..32 + 8 * i].try_into().unwrap());
    let (s, h, w) = (u32_at(0) as usize, u32_at(1) as usize, u32_at(2) as usize);
    let dtype = Dtype::from_code(u32_at(3))?;
    let spacing_um = [f64_at(0), f64_at(1), f64_at(2)];
    let n = s
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Data("volume dimensions overflow".into()))?;
    let mut raw = vec![0u8; n * dtype.size()];
    r.read_exact(&mut raw).map_err(truncated)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(truncated)? != 0 {
        return Err(Error::Data("trailing bytes after volume data".into()));
    }
    let data: Vec<f32> = match dtype {
        Dtype::U8 => raw.iter().map(|&v| v as f32 / 255.0).collect(),
        Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let mut vol = Volume::new(s, h, w, data)?;
    vol.dtype = dtype;
    vol.spacing_um = spacing_um;
    Ok(vol)
}
