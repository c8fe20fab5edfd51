//! Minimal single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Only the header fields needed to carry a 3D/4D volume are honored: `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset`, `scl_slope`, `scl_inter` and
//! the magic string. Compressed files are not handled.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::volume::{SignalKind, SignalVolume};

pub const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC: [u8; 4] = *b"n+1\0";

/// Storage types the reader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDtype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::I32 => 8,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => NiftiDtype::U8,
            4 => NiftiDtype::I16,
            8 => NiftiDtype::I32,
            16 => NiftiDtype::F32,
            64 => NiftiDtype::F64,
            other => return Err(Error::UnsupportedDtype(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 => 2,
            NiftiDtype::I32 | NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }
}

/// Header fields of a parsed file.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub dtype: NiftiDtype,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub big_endian: bool,
}

struct Fields<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        self.buf[off..off + N].try_into().unwrap()
    }

    fn i16(&self, off: usize) -> i16 {
        let b = self.bytes(off);
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b = self.bytes(off);
        if self.big {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_bits(self.i32(off) as u32)
    }

    fn f64(&self, off: usize) -> f64 {
        let b = self.bytes(off);
        if self.big {
            f64::from_be_bytes(b)
        } else {
            f64::from_le_bytes(b)
        }
    }
}

pub fn parse_header(buf: &[u8]) -> Result<NiftiHeader> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            expected: HEADER_SIZE,
            found: buf.len(),
        });
    }
    let le = i32::from_le_bytes(buf[0..4].try_into().unwrap());
    let big = match le {
        348 => false,
        _ if le.swap_bytes() == 348 => true,
        other => return Err(Error::BadHeaderSize(other)),
    };
    let f = Fields { buf, big };
    let magic: [u8; 4] = f.bytes(344);
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = f.i16(40 + 2 * i);
    }
    let dtype = NiftiDtype::from_code(f.i16(70))?;
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = f.f32(76 + 4 * i);
    }
    Ok(NiftiHeader {
        dim,
        dtype,
        pixdim,
        vox_offset: f.f32(108),
        scl_slope: f.f32(112),
        scl_inter: f.f32(116),
        big_endian: big,
    })
}

/// Decodes a complete `.nii` byte buffer.
pub fn from_bytes(buf: &[u8]) -> Result<SignalVolume> {
    let hdr = parse_header(buf)?;
    let ndim = hdr.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::invalid(format!("NIfTI dim[0] = {ndim} out of range")));
    }
    let extent = |i: usize| -> Result<usize> {
        if i as i16 > ndim {
            return Ok(1);
        }
        let d = hdr.dim[i];
        if d < 1 {
            return Err(Error::invalid(format!("NIfTI dim[{i}] = {d} must be positive")));
        }
        Ok(d as usize)
    };
    let dims = [extent(1)?, extent(2)?, extent(3)?];
    let n_frames = extent(4)?;
    for i in 5..=7 {
        if extent(i)? != 1 {
            return Err(Error::invalid(
                "NIfTI volumes with more than 4 dimensions are not supported",
            ));
        }
    }
    let n_vox = dims[0] * dims[1] * dims[2];
    let count = n_vox * n_frames;
    let offset = hdr.vox_offset as usize;
    let expected = offset + count * hdr.dtype.size();
    if buf.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: buf.len(),
        });
    }
    let f = Fields {
        buf,
        big: hdr.big_endian,
    };
    let raw = |i: usize| -> f64 {
        let off = offset + i * hdr.dtype.size();
        match hdr.dtype {
            NiftiDtype::U8 => buf[off] as f64,
            NiftiDtype::I16 => f.i16(off) as f64,
            NiftiDtype::I32 => f.i32(off) as f64,
            NiftiDtype::F32 => f.f32(off) as f64,
            NiftiDtype::F64 => f.f64(off),
        }
    };
    let (slope, inter) = if hdr.scl_slope == 0.0 || !hdr.scl_slope.is_finite() {
        (1.0, 0.0)
    } else {
        (
            hdr.scl_slope as f64,
            if hdr.scl_inter.is_finite() {
                hdr.scl_inter as f64
            } else {
                0.0
            },
        )
    };
    // file order: x fastest, then y, z, frame; memory order: voxel-major
    let mut data = vec![0.0; count];
    for t in 0..n_frames {
        for v in 0..n_vox {
            data[v * n_frames + t] = raw(t * n_vox + v) * slope + inter;
        }
    }
    let mut vol = SignalVolume::new(dims, n_frames, data, SignalKind::Raw)?;
    vol.voxel_size = [hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]].map(|p| if p > 0.0 { p } else { 1.0 });
    Ok(vol)
}

pub fn read_nifti(path: &Path) -> Result<SignalVolume> {
    let buf = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&buf)
}

/// Reads a mask volume: nonzero voxels of the first frame are inside.
pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let vol = read_nifti(path)?;
    Ok(vol.frame(0).into_iter().map(|v| v != 0.0).collect())
}

/// Encodes a volume as little-endian NIfTI-1 with unit scaling.
pub fn to_bytes(volume: &SignalVolume, dtype: NiftiDtype) -> Vec<u8> {
    let dims = volume.dims();
    let n_frames = volume.n_frames();
    let n_vox = volume.n_voxels();
    let mut buf = vec![0u8; DATA_OFFSET + n_vox * n_frames * dtype.size()];
    let put = |buf: &mut [u8], off: usize, bytes: &[u8]| buf[off..off + bytes.len()].copy_from_slice(bytes);

    put(&mut buf, 0, &(HEADER_SIZE as i32).to_le_bytes());
    let ndim: i16 = if n_frames > 1 { 4 } else { 3 };
    let dim = [
        ndim,
        dims[0] as i16,
        dims[1] as i16,
        dims[2] as i16,
        n_frames as i16,
        1,
        1,
        1,
    ];
    for (i, d) in dim.iter().enumerate() {
        put(&mut buf, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut buf, 70, &dtype.code().to_le_bytes());
    put(&mut buf, 72, &((dtype.size() * 8) as i16).to_le_bytes());
    let vs = volume.voxel_size;
    let pixdim = [1.0f32, vs[0], vs[1], vs[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut buf, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut buf, 108, &(DATA_OFFSET as f32).to_le_bytes());
    put(&mut buf, 112, &1.0f32.to_le_bytes());
    put(&mut buf, 116, &0.0f32.to_le_bytes());
    // mm + s
    buf[123] = 2 | 8;
    // sform: scaled identity
    put(&mut buf, 254, &2i16.to_le_bytes());
    for (row, off) in [280usize, 296, 312].iter().enumerate() {
        put(&mut buf, off + 4 * row, &vs[row].to_le_bytes());
    }
    put(&mut buf, 344, &MAGIC);

    let mut off = DATA_OFFSET;
    for t in 0..n_frames {
        for v in 0..n_vox {
            let x = volume.data()[v * n_frames + t];
            match dtype {
                NiftiDtype::U8 => buf[off] = x.round().clamp(0.0, 255.0) as u8,
                NiftiDtype::I16 => put(&mut buf, off, &(x.round() as i16).to_le_bytes()),
                NiftiDtype::I32 => put(&mut buf, off, &(x.round() as i32).to_le_bytes()),
                NiftiDtype::F32 => put(&mut buf, off, &(x as f32).to_le_bytes()),
                NiftiDtype::F64 => put(&mut buf, off, &x.to_le_bytes()),
            }
            off += dtype.size();
        }
    }
    buf
}

pub fn write_nifti(volume: &SignalVolume, path: &Path) -> Result<()> {
    write_nifti_as(volume, path, NiftiDtype::F32)
}

pub fn write_nifti_as(volume: &SignalVolume, path: &Path, dtype: NiftiDtype) -> Result<()> {
    std::fs::write(path, to_bytes(volume, dtype)).map_err(|e| Error::file(path, e))
}
