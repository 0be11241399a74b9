//! NIfTI-1 single-file reader and writer.
//!
//! Only the `n+1` single-file flavour is accepted, optionally wrapped in
//! gzip. Extensions are skipped on read and never written. Volumes are
//! decoded to `f64` after applying `scl_slope`/`scl_inter`; label masks are
//! decoded to `u8` and must hold integral values in `0..=255`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::grid::{Affine, Geometry, GridError, LabelMask3, Volume3};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("wrong magic {found:?}: {reason}")]
    WrongMagic {
        found: [u8; 4],
        reason: &'static str,
    },
    #[error("unsupported datatype code {0} (expected uint8, int16, int32, float32 or float64)")]
    UnsupportedDatatype(i16),
    #[error("corrupt header field `{field}`: {reason}")]
    CorruptHeader { field: &'static str, reason: String },
    #[error("data truncated: expected {expected} bytes after vox_offset, found {found}")]
    DataTruncated { expected: usize, found: usize },
    #[error("value overflow: {0}")]
    ValueOverflow(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn corrupt(field: &'static str, reason: impl Into<String>) -> NiftiError {
    NiftiError::CorruptHeader {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    pub fn bitpix(self) -> i16 {
        (self.byte_size() * 8) as i16
    }

    pub fn byte_size(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    pub const ALL: [Datatype; 5] = [
        Datatype::Uint8,
        Datatype::Int16,
        Datatype::Int32,
        Datatype::Float32,
        Datatype::Float64,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Endian {
    #[default]
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern_b: f32,
    pub quatern_c: f32,
    pub quatern_d: f32,
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub magic: [u8; 4],
    pub endian: Endian,
}

impl NiftiHeader {
    /// Header for a 3D volume with an axis-aligned sform.
    pub fn for_geometry(geometry: &Geometry, datatype: Datatype) -> Self {
        let [nx, ny, nz] = geometry.shape;
        let [sx, sy, sz] = geometry.spacing;
        let a = &geometry.affine;
        let row = |r: usize| {
            [
                a[r][0] as f32,
                a[r][1] as f32,
                a[r][2] as f32,
                a[r][3] as f32,
            ]
        };
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim: [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1],
            datatype,
            bitpix: datatype.bitpix(),
            pixdim: [1.0, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0],
            vox_offset: DATA_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            // mm + seconds
            xyzt_units: 2 | 8,
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 1,
            quatern_b: 0.0,
            quatern_c: 0.0,
            quatern_d: 0.0,
            qoffset: [0.0; 3],
            srow_x: row(0),
            srow_y: row(1),
            srow_z: row(2),
            magic: MAGIC_SINGLE,
            endian: Endian::Little,
        }
    }

    /// Spatial extents, padding missing axes with 1.
    pub fn shape(&self) -> [usize; 3] {
        let rank = self.dim[0] as usize;
        let mut s = [1usize; 3];
        for (a, slot) in s.iter_mut().enumerate() {
            if a < rank {
                *slot = self.dim[a + 1] as usize;
            }
        }
        s
    }

    pub fn voxel_count(&self) -> usize {
        let rank = self.dim[0] as usize;
        self.dim[1..=rank].iter().map(|&d| d as usize).product()
    }

    /// Voxel size from `pixdim[1..=3]`, widened via [`widen`].
    pub fn spacing(&self) -> [f64; 3] {
        [
            widen(self.pixdim[1]),
            widen(self.pixdim[2]),
            widen(self.pixdim[3]),
        ]
    }

    /// `scl_slope` with the zero-means-identity convention applied.
    pub fn effective_slope(&self) -> f64 {
        if self.scl_slope == 0.0 {
            1.0
        } else {
            self.scl_slope as f64
        }
    }

    /// sform when `sform_code > 0`, else qform when `qform_code > 0`, else
    /// the pixdim diagonal.
    pub fn affine(&self) -> Affine {
        if self.sform_code > 0 {
            let r = |row: &[f32; 4]| row.map(widen);
            [r(&self.srow_x), r(&self.srow_y), r(&self.srow_z)]
        } else if self.qform_code > 0 {
            self.qform_affine()
        } else {
            crate::grid::diagonal_affine(self.spacing())
        }
    }

    fn qform_affine(&self) -> Affine {
        let (b, c, d) = (
            self.quatern_b as f64,
            self.quatern_c as f64,
            self.quatern_d as f64,
        );
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let [sx, sy, sz] = self.spacing();
        let sz = sz * qfac;
        let r = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            ],
        ];
        let q = self.qoffset.map(|v| v as f64);
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            out[i] = [r[i][0] * sx, r[i][1] * sy, r[i][2] * sz, q[i]];
        }
        out
    }
}

/// Widen a stored `f32` to the `f64` nearest its shortest decimal form, so
/// values such as 1.2 written from `f64` read back as the same `f64`.
pub fn widen(v: f32) -> f64 {
    if v.is_finite() {
        v.to_string().parse().unwrap_or(v as f64)
    } else {
        v as f64
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        b
    }
    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(at)),
            Endian::Big => i16::from_be_bytes(self.bytes(at)),
        }
    }
    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(at)),
            Endian::Big => f32::from_be_bytes(self.bytes(at)),
        }
    }
    fn f32s<const N: usize>(&self, at: usize) -> [f32; N] {
        std::array::from_fn(|n| self.f32(at + 4 * n))
    }
}

/// Decode a 348-byte NIfTI-1 header, detecting byte order from `sizeof_hdr`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() != HEADER_SIZE {
        return Err(corrupt(
            "sizeof_hdr",
            format!(
                "header buffer must be {HEADER_SIZE} bytes, got {}",
                bytes.len()
            ),
        ));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let endian = if le == HEADER_SIZE as i32 {
        Endian::Little
    } else if be == HEADER_SIZE as i32 {
        Endian::Big
    } else if le == 540 || be == 540 {
        return Err(corrupt("sizeof_hdr", "NIfTI-2 headers are not supported"));
    } else {
        return Err(corrupt("sizeof_hdr", format!("expected 348, read {le}")));
    };
    let c = Cursor { buf: bytes, endian };

    let magic: [u8; 4] = c.bytes(344);
    if magic == MAGIC_PAIR {
        return Err(NiftiError::WrongMagic {
            found: magic,
            reason: "detached .hdr/.img pairs are not supported",
        });
    }
    if magic != MAGIC_SINGLE {
        return Err(NiftiError::WrongMagic {
            found: magic,
            reason: "expected single-file \"n+1\"",
        });
    }

    let dim: [i16; 8] = std::array::from_fn(|n| c.i16(40 + 2 * n));
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(corrupt("dim", format!("dim[0] = {rank} outside 1..=7")));
    }
    if let Some(bad) = dim[1..=rank as usize].iter().position(|&d| d < 1) {
        return Err(corrupt(
            "dim",
            format!("dim[{}] = {} must be >= 1", bad + 1, dim[bad + 1]),
        ));
    }

    let datatype = Datatype::from_code(c.i16(70))?;
    let bitpix = c.i16(72);
    if bitpix != datatype.bitpix() {
        return Err(corrupt(
            "bitpix",
            format!("{bitpix} inconsistent with datatype {:?}", datatype),
        ));
    }
    let pixdim: [f32; 8] = c.f32s(76);
    let vox_offset = c.f32(108);
    if !vox_offset.is_finite() || vox_offset < DATA_OFFSET as f32 {
        return Err(corrupt(
            "vox_offset",
            format!("{vox_offset} is below {DATA_OFFSET}"),
        ));
    }
    let scl_slope = c.f32(112);
    let scl_inter = c.f32(116);
    if !scl_slope.is_finite() || !scl_inter.is_finite() {
        return Err(corrupt("scl_slope", "scaling must be finite"));
    }

    Ok(NiftiHeader {
        sizeof_hdr: HEADER_SIZE as i32,
        dim,
        datatype,
        bitpix,
        pixdim,
        vox_offset,
        scl_slope,
        scl_inter,
        xyzt_units: bytes[123],
        descrip: c.bytes(148),
        qform_code: c.i16(252),
        sform_code: c.i16(254),
        quatern_b: c.f32(256),
        quatern_c: c.f32(260),
        quatern_d: c.f32(264),
        qoffset: c.f32s(268),
        srow_x: c.f32s(280),
        srow_y: c.f32s(296),
        srow_z: c.f32s(312),
        magic,
        endian,
    })
}

/// Encode a header into its 348-byte layout using `header.endian`.
pub fn encode_header(h: &NiftiHeader) -> [u8; HEADER_SIZE] {
    let mut b = [0u8; HEADER_SIZE];
    let big = h.endian == Endian::Big;
    let mut put = |at: usize, bytes: &[u8]| b[at..at + bytes.len()].copy_from_slice(bytes);
    macro_rules! num {
        ($v:expr) => {
            if big {
                $v.to_be_bytes()
            } else {
                $v.to_le_bytes()
            }
        };
    }
    put(0, &num!(h.sizeof_hdr));
    for (n, d) in h.dim.iter().enumerate() {
        put(40 + 2 * n, &num!(*d));
    }
    put(70, &num!(h.datatype.code()));
    put(72, &num!(h.bitpix));
    for (n, p) in h.pixdim.iter().enumerate() {
        put(76 + 4 * n, &num!(*p));
    }
    put(108, &num!(h.vox_offset));
    put(112, &num!(h.scl_slope));
    put(116, &num!(h.scl_inter));
    put(123, &[h.xyzt_units]);
    put(148, &h.descrip);
    put(252, &num!(h.qform_code));
    put(254, &num!(h.sform_code));
    put(256, &num!(h.quatern_b));
    put(260, &num!(h.quatern_c));
    put(264, &num!(h.quatern_d));
    for (n, v) in h.qoffset.iter().enumerate() {
        put(268 + 4 * n, &num!(*v));
    }
    for (row, at) in [(&h.srow_x, 280), (&h.srow_y, 296), (&h.srow_z, 312)] {
        for (n, v) in row.iter().enumerate() {
            put(at + 4 * n, &num!(*v));
        }
    }
    put(344, &h.magic);
    b
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let raw = fs::read(path)?;
    if is_gzip(&raw) {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Raw stored values (before scaling) of an in-memory `.nii` image.
fn decode_raw(bytes: &[u8]) -> Result<(NiftiHeader, Vec<f64>), NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::DataTruncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let header = parse_header(&bytes[..HEADER_SIZE])?;
    let ext_flag = bytes.get(HEADER_SIZE).copied().unwrap_or(0);
    if ext_flag != 0 {
        log::warn!("NIfTI extensions present; they are skipped");
    }
    let n = header.voxel_count();
    let shape = header.shape();
    if n != shape.iter().product::<usize>() {
        return Err(corrupt(
            "dim",
            format!("only 3D volumes are supported, got dim {:?}", header.dim),
        ));
    }
    let width = header.datatype.byte_size();
    let start = header.vox_offset as usize;
    let expected = n * width;
    let available = bytes.len().saturating_sub(start);
    if available < expected {
        return Err(NiftiError::DataTruncated {
            expected,
            found: available,
        });
    }
    let payload = &bytes[start..start + expected];
    let big = header.endian == Endian::Big;
    macro_rules! decode {
        ($t:ty, $w:expr) => {
            payload
                .chunks_exact($w)
                .map(|ch| {
                    let arr: [u8; $w] = ch.try_into().unwrap();
                    (if big {
                        <$t>::from_be_bytes(arr)
                    } else {
                        <$t>::from_le_bytes(arr)
                    }) as f64
                })
                .collect::<Vec<f64>>()
        };
    }
    let values = match header.datatype {
        Datatype::Uint8 => payload.iter().map(|&v| v as f64).collect(),
        Datatype::Int16 => decode!(i16, 2),
        Datatype::Int32 => decode!(i32, 4),
        Datatype::Float32 => decode!(f32, 4),
        Datatype::Float64 => decode!(f64, 8),
    };
    Ok((header, values))
}

fn geometry_of(header: &NiftiHeader) -> Result<Geometry, NiftiError> {
    let spacing = header.spacing();
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(corrupt(
            "pixdim",
            format!("spacing {spacing:?} must be positive"),
        ));
    }
    Ok(Geometry::with_affine(
        header.shape(),
        spacing,
        header.affine(),
    )?)
}

/// Decode an uncompressed or gzip-compressed in-memory NIfTI image.
pub fn decode_volume(bytes: &[u8]) -> Result<(Volume3, NiftiHeader), NiftiError> {
    let owned;
    let bytes = if is_gzip(bytes) {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        owned = out;
        owned.as_slice()
    } else {
        bytes
    };
    let (header, raw) = decode_raw(bytes)?;
    let slope = header.effective_slope();
    let inter = header.scl_inter as f64;
    let identity = slope == 1.0 && inter == 0.0;
    let data = if identity {
        raw
    } else {
        raw.into_iter().map(|v| v * slope + inter).collect()
    };
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(NiftiError::Grid(GridError::NonFinite(idx)));
    }
    let geometry = geometry_of(&header)?;
    Ok((Volume3::from_vec(geometry, data)?, header))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume3, NiftiHeader), NiftiError> {
    let bytes = read_maybe_gzip(path.as_ref())?;
    decode_volume(&bytes)
}

/// Read a label map. Scaled values must be integers in `0..=255`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(LabelMask3, NiftiHeader), NiftiError> {
    let (vol, header) = read_volume(path)?;
    let labels = vol
        .data()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(NiftiError::ValueOverflow(format!(
                    "label value {v} at index {idx} is not an integer in 0..=255"
                )))
            }
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Ok((
        LabelMask3::from_vec(vol.geometry().clone(), labels)?,
        header,
    ))
}

fn check_representable(v: f64, dtype: Datatype, idx: usize) -> Result<(), NiftiError> {
    let ok = match dtype {
        Datatype::Float64 => v.is_finite(),
        Datatype::Float32 => v.is_finite() && v.abs() <= f32::MAX as f64,
        Datatype::Uint8 => v.fract() == 0.0 && (0.0..=u8::MAX as f64).contains(&v),
        Datatype::Int16 => v.fract() == 0.0 && (i16::MIN as f64..=i16::MAX as f64).contains(&v),
        Datatype::Int32 => v.fract() == 0.0 && (i32::MIN as f64..=i32::MAX as f64).contains(&v),
    };
    if ok {
        Ok(())
    } else {
        Err(NiftiError::ValueOverflow(format!(
            "value {v} at index {idx} cannot be stored as {dtype:?}"
        )))
    }
}

/// Serialize a volume to uncompressed `.nii` bytes.
///
/// Integer targets require integral in-range values; float32 rounds to
/// nearest. NaN and infinities are always rejected.
pub fn encode_volume(v: &Volume3, dtype: Datatype, endian: Endian) -> Result<Vec<u8>, NiftiError> {
    let shape = v.shape();
    if shape.iter().any(|&n| n > i16::MAX as usize) {
        return Err(corrupt("dim", format!("extent in {shape:?} exceeds 32767")));
    }
    for (idx, &x) in v.data().iter().enumerate() {
        check_representable(x, dtype, idx)?;
    }
    let mut header = NiftiHeader::for_geometry(v.geometry(), dtype);
    header.endian = endian;
    let mut out = Vec::with_capacity(DATA_OFFSET + v.len() * dtype.byte_size());
    out.extend_from_slice(&encode_header(&header));
    out.extend_from_slice(&[0u8; 4]);
    let big = endian == Endian::Big;
    macro_rules! emit {
        ($t:ty) => {
            for &x in v.data() {
                let y = x as $t;
                out.extend_from_slice(&if big {
                    y.to_be_bytes()
                } else {
                    y.to_le_bytes()
                });
            }
        };
    }
    match dtype {
        Datatype::Uint8 => out.extend(v.data().iter().map(|&x| x as u8)),
        Datatype::Int16 => emit!(i16),
        Datatype::Int32 => emit!(i32),
        Datatype::Float32 => emit!(f32),
        Datatype::Float64 => emit!(f64),
    }
    Ok(out)
}

/// Compress with a fixed gzip header (zero mtime) so output bytes are stable.
pub fn gzip_bytes(raw: &[u8]) -> Result<Vec<u8>, NiftiError> {
    let mut enc = GzEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::new(6));
    enc.write_all(raw)?;
    Ok(enc.finish()?)
}

fn wants_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Write a volume as little-endian NIfTI-1; `.gz` paths are gzip-compressed.
/// The file is written to a sibling temp path and renamed into place.
pub fn write_volume(
    v: &Volume3,
    path: impl AsRef<Path>,
    dtype: Datatype,
) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let raw = encode_volume(v, dtype, Endian::Little)?;
    let bytes = if wants_gzip(path) {
        gzip_bytes(&raw)?
    } else {
        raw
    };
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Write a label map as uint8.
pub fn write_mask(m: &LabelMask3, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let v = m.map(|&l| l as f64);
    write_volume(&v, path, Datatype::Uint8)
}

/// Write `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(shape: [usize; 3]) -> Geometry {
        Geometry::new(shape, [0.5, 0.75, 1.2]).unwrap()
    }

    #[test]
    fn float32_header_constants() {
        let v = Volume3::filled(geom([2, 3, 4]), 1.5);
        let bytes = encode_volume(&v, Datatype::Float32, Endian::Little).unwrap();
        let h = parse_header(&bytes[..HEADER_SIZE]).unwrap();
        assert_eq!(h.datatype.code(), 16);
        assert_eq!(h.bitpix, 32);
        assert_eq!(h.vox_offset, 352.0);
        assert_eq!(h.scl_slope, 1.0);
        assert_eq!(h.scl_inter, 0.0);
        assert_eq!(h.shape(), [2, 3, 4]);
    }

    #[test]
    fn byte_swapped_header_parses_identically() {
        let v = Volume3::filled(geom([2, 3, 4]), 1.5);
        let le = encode_volume(&v, Datatype::Float32, Endian::Little).unwrap();
        let good = parse_header(&le[..HEADER_SIZE]).unwrap();
        // Reverse every multi-byte numeric field by re-encoding big-endian,
        // then confirm the raw sizeof_hdr reads as the swapped constant.
        let mut swapped = good.clone();
        swapped.endian = Endian::Big;
        let be = encode_header(&swapped);
        assert_eq!(i32::from_le_bytes(be[0..4].try_into().unwrap()), 1543569408);
        let parsed = parse_header(&be).unwrap();
        assert_eq!(parsed.endian, Endian::Big);
        let mut cmp = parsed.clone();
        cmp.endian = Endian::Little;
        assert_eq!(cmp, good);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let v = Volume3::filled(geom([1, 1, 1]), 0.0);
        let mut bytes = encode_volume(&v, Datatype::Uint8, Endian::Little).unwrap();
        bytes[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(
            parse_header(&bytes[..HEADER_SIZE]),
            Err(NiftiError::WrongMagic { .. })
        ));
        bytes[344..348].copy_from_slice(b"ni1\0");
        let err = parse_header(&bytes[..HEADER_SIZE]).unwrap_err();
        assert!(err.to_string().contains("detached"));
    }

    #[test]
    fn header_rejections_name_the_field() {
        let v = Volume3::filled(geom([2, 2, 2]), 0.0);
        let good = encode_volume(&v, Datatype::Int16, Endian::Little).unwrap();

        let mut b = good.clone();
        b[70..72].copy_from_slice(&256i16.to_le_bytes());
        assert!(matches!(
            parse_header(&b[..HEADER_SIZE]),
            Err(NiftiError::UnsupportedDatatype(256))
        ));

        let mut b = good.clone();
        b[40..42].copy_from_slice(&9i16.to_le_bytes());
        let e = parse_header(&b[..HEADER_SIZE]).unwrap_err();
        assert!(matches!(e, NiftiError::CorruptHeader { field: "dim", .. }));

        let mut b = good.clone();
        b[44..46].copy_from_slice(&0i16.to_le_bytes());
        let e = parse_header(&b[..HEADER_SIZE]).unwrap_err();
        assert!(matches!(e, NiftiError::CorruptHeader { field: "dim", .. }));

        let mut b = good.clone();
        b[72..74].copy_from_slice(&8i16.to_le_bytes());
        let e = parse_header(&b[..HEADER_SIZE]).unwrap_err();
        assert!(matches!(
            e,
            NiftiError::CorruptHeader {
                field: "bitpix",
                ..
            }
        ));

        let mut b = good;
        b[0..4].copy_from_slice(&540i32.to_le_bytes());
        let e = parse_header(&b[..HEADER_SIZE]).unwrap_err();
        assert!(matches!(
            e,
            NiftiError::CorruptHeader {
                field: "sizeof_hdr",
                ..
            }
        ));

        assert!(parse_header(&[0u8; 100]).is_err());
    }

    #[test]
    fn scaling_is_applied_on_read() {
        let v = Volume3::filled(geom([1, 1, 1]), 5.0);
        let mut bytes = encode_volume(&v, Datatype::Int16, Endian::Little).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        let (back, h) = decode_volume(&bytes).unwrap();
        assert_eq!(h.scl_slope, 2.0);
        assert_eq!(back.data(), &[11.0]);

        // slope 0 means identity
        bytes[112..116].copy_from_slice(&0.0f32.to_le_bytes());
        let (back, _) = decode_volume(&bytes).unwrap();
        assert_eq!(back.data(), &[6.0]);
    }

    #[test]
    fn truncated_data_is_reported() {
        let v = Volume3::filled(geom([4, 4, 4]), 1.0);
        let bytes = encode_volume(&v, Datatype::Float32, Endian::Little).unwrap();
        let err = decode_volume(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(
            err,
            NiftiError::DataTruncated {
                expected: 256,
                found: 253
            }
        ));
    }

    #[test]
    fn nan_and_overflow_are_rejected_on_write() {
        let mut v = Volume3::filled(geom([2, 1, 1]), 1.0);
        v.data_mut()[1] = f64::NAN;
        for dt in Datatype::ALL {
            assert!(matches!(
                encode_volume(&v, dt, Endian::Little),
                Err(NiftiError::ValueOverflow(_))
            ));
        }
        let v = Volume3::filled(geom([1, 1, 1]), 300.0);
        assert!(encode_volume(&v, Datatype::Uint8, Endian::Little).is_err());
        let v = Volume3::filled(geom([1, 1, 1]), 0.5);
        assert!(encode_volume(&v, Datatype::Int32, Endian::Little).is_err());
    }

    #[test]
    fn mask_round_trip_and_gzip_detection() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabelMask3::from_fn(geom([5, 4, 3]), |i, j, k| ((i + j + k) % 3) as u8);
        let p = dir.path().join("m.nii.gz");
        write_mask(&m, &p).unwrap();
        let (back, h) = read_mask(&p).unwrap();
        assert_eq!(h.datatype, Datatype::Uint8);
        assert_eq!(back, m);

        // gzip stream under a plain `.nii` name still decodes
        let plain = dir.path().join("plain.nii");
        write_mask(&m, &plain).unwrap();
        let disguised = dir.path().join("disguised.nii");
        fs::copy(&p, &disguised).unwrap();
        let a = read_volume(&plain).unwrap().0;
        let b = read_volume(&disguised).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn uncompressed_file_size_matches_layout() {
        // 123x512x511 at 4 bytes per voxel, checked arithmetically: the
        // encoder's length formula is exercised on a smaller grid below.
        let expected: u64 = 352 + 4 * 123 * 512 * 511;
        assert_eq!(expected, 128_723_296);
        let v = Volume3::filled(geom([7, 5, 3]), 0.25);
        let bytes = encode_volume(&v, Datatype::Float32, Endian::Little).unwrap();
        assert_eq!(bytes.len(), 352 + 4 * 7 * 5 * 3);
    }

    #[test]
    fn qform_fallback_when_no_sform() {
        let v = Volume3::filled(geom([2, 2, 2]), 0.0);
        let mut h = NiftiHeader::for_geometry(v.geometry(), Datatype::Float32);
        h.sform_code = 0;
        h.qform_code = 1;
        h.qoffset = [10.0, 20.0, 30.0];
        let a = h.affine();
        assert_eq!(a[0], [0.5, 0.0, 0.0, 10.0]);
        assert_eq!(a[1], [0.0, 0.75, 0.0, 20.0]);
        assert!((a[2][2] - 1.2).abs() < 1e-6);
        h.qform_code = 0;
        assert_eq!(h.affine()[2][3], 0.0);
    }
}
