//! Volume files.
//!
//! Native format (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HYPSVOL\0"
//! 8       4     u32 version (1)
//! 12      4     u32 voxel type: 1 = u8, 2 = f64
//! 16      12    u32 dims nx, ny, nz
//! 28      24    f64 spacing sx, sy, sz (mm)
//! 52      ...   nx·ny·nz voxels, x fastest
//! ```
//!
//! NIfTI-1 single-file (`n+1`) images are read with datatypes uint8, int16
//! and float32, either byte order, no extensions beyond `vox_offset`, no
//! compression. Spacing comes from `pixdim[1..=3]` and `scl_slope`/`scl_inter`
//! are applied when the slope is non-zero.

use std::path::Path;

use super::{BinaryMask, Volume};
use crate::error::{Error, Result};

pub const NATIVE_MAGIC: &[u8; 8] = b"HYPSVOL\0";
pub const NATIVE_VERSION: u32 = 1;
const NATIVE_HEADER: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum VoxelType {
    U8 = 1,
    F64 = 2,
}

fn native_bytes(dims: [usize; 3], spacing: [f64; 3], ty: VoxelType, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(NATIVE_HEADER + payload.len());
    out.extend_from_slice(NATIVE_MAGIC);
    out.extend_from_slice(&NATIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(ty as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Encodes a scalar volume as native f64.
pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let payload: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    native_bytes(v.dims(), v.spacing(), VoxelType::F64, &payload)
}

/// Encodes a mask as native u8 (0/1).
pub fn encode_mask(m: &BinaryMask) -> Vec<u8> {
    let payload: Vec<u8> = m.voxels().iter().map(|&b| b as u8).collect();
    native_bytes(m.dims(), m.spacing(), VoxelType::U8, &payload)
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    std::fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn write_mask(m: &BinaryMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask(m))?;
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Decodes the native format.
pub fn decode_native(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < NATIVE_HEADER {
        return Err(Error::format(bytes.len(), format!("truncated header: {} of {NATIVE_HEADER} bytes", bytes.len())));
    }
    if &bytes[..8] != NATIVE_MAGIC {
        return Err(Error::format(0, "bad volume magic"));
    }
    let version = u32_at(bytes, 8);
    if version != NATIVE_VERSION {
        return Err(Error::format(8, format!("unsupported volume version {version}")));
    }
    let ty = match u32_at(bytes, 12) {
        1 => VoxelType::U8,
        2 => VoxelType::F64,
        other => return Err(Error::format(12, format!("unsupported voxel type {other}"))),
    };
    let dims = [u32_at(bytes, 16), u32_at(bytes, 20), u32_at(bytes, 24)].map(|d| d as usize);
    let spacing = [f64_at(bytes, 28), f64_at(bytes, 36), f64_at(bytes, 44)];
    if dims.contains(&0) {
        return Err(Error::format(16, format!("zero dimension in {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::format(28, format!("invalid spacing {spacing:?}")));
    }
    let n = dims[0] as u128 * dims[1] as u128 * dims[2] as u128;
    let width = match ty {
        VoxelType::U8 => 1u128,
        VoxelType::F64 => 8,
    };
    let need = n * width;
    let have = (bytes.len() - NATIVE_HEADER) as u128;
    if have != need {
        return Err(Error::format(
            NATIVE_HEADER,
            format!("payload holds {have} bytes, dims {dims:?} need {need}"),
        ));
    }
    let payload = &bytes[NATIVE_HEADER..];
    let data: Vec<f64> = match ty {
        VoxelType::U8 => payload.iter().map(|&b| b as f64).collect(),
        VoxelType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(NATIVE_HEADER + i * 8, "non-finite voxel"));
    }
    Volume::new(dims, spacing, data).map_err(|e| Error::format(16, e.to_string()))
}

/// NIfTI-1 datatype codes accepted by [`decode_nifti`].
pub mod nifti_type {
    pub const UINT8: i16 = 2;
    pub const INT16: i16 = 4;
    pub const FLOAT32: i16 = 16;
}

pub const NIFTI_HEADER_SIZE: usize = 348;

/// Decodes a single-file NIfTI-1 image.
pub fn decode_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < NIFTI_HEADER_SIZE {
        return Err(Error::format(bytes.len(), format!("truncated NIfTI header: {} of 348 bytes", bytes.len())));
    }
    let le = match (i32::from_le_bytes(bytes[0..4].try_into().expect("4")), i32::from_be_bytes(bytes[0..4].try_into().expect("4"))) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(Error::format(0, "sizeof_hdr is not 348")),
    };
    let i16_at = |at: usize| {
        let b: [u8; 2] = bytes[at..at + 2].try_into().expect("2");
        if le {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    };
    let f32_at = |at: usize| {
        let b: [u8; 4] = bytes[at..at + 4].try_into().expect("4");
        if le {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(Error::format(344, format!("unsupported NIfTI magic {magic:?} (only single-file n+1)")));
    }
    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(40, format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 3];
    for (i, d) in dims.iter_mut().enumerate().take((ndim as usize).min(3)) {
        let v = i16_at(42 + 2 * i);
        if v < 1 {
            return Err(Error::format(42 + 2 * i, format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    for i in 3..ndim as usize {
        let v = i16_at(42 + 2 * i);
        if v > 1 {
            return Err(Error::format(42 + 2 * i, format!("only 3D images are supported, dim[{}] = {v}", i + 1)));
        }
    }
    let datatype = i16_at(70);
    let width = match datatype {
        nifti_type::UINT8 => 1,
        nifti_type::INT16 => 2,
        nifti_type::FLOAT32 => 4,
        other => return Err(Error::format(70, format!("unsupported NIfTI datatype {other}"))),
    };
    let mut spacing = [1.0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let at = 80 + 4 * i;
        let v = f32_at(at).abs() as f64;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::format(at, format!("pixdim[{}] = {v} is not a positive spacing", i + 1)));
        }
        *s = v;
    }
    let vox_offset = f32_at(108);
    if !(vox_offset.is_finite() && vox_offset >= NIFTI_HEADER_SIZE as f32) {
        return Err(Error::format(108, format!("vox_offset {vox_offset} precedes the header end")));
    }
    let start = vox_offset as usize;
    let end = dims
        .iter()
        .try_fold(width, |acc: usize, &d| acc.checked_mul(d))
        .and_then(|len| len.checked_add(start));
    let end = match end {
        Some(e) if e <= bytes.len() => e,
        _ => {
            let need = end.map_or_else(|| "more than usize::MAX".to_string(), |e| e.to_string());
            return Err(Error::format(bytes.len(), format!("truncated payload: need {need} bytes, file has {}", bytes.len())));
        }
    };
    let payload = &bytes[start..end];
    let mut data: Vec<f64> = match datatype {
        nifti_type::UINT8 => payload.iter().map(|&b| b as f64).collect(),
        nifti_type::INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }) as f64
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                (if le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
            })
            .collect(),
    };
    let (slope, inter) = (f32_at(112) as f64, f32_at(116) as f64);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(start + i * width, "non-finite voxel"));
    }
    Volume::new(dims, spacing, data).map_err(|e| Error::format(40, e.to_string()))
}

/// Decodes either format, chosen by the leading bytes.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() >= 8 && &bytes[..8] == NATIVE_MAGIC {
        decode_native(bytes)
    } else if bytes.len() >= 4 {
        decode_nifti(bytes)
    } else {
        Err(Error::format(0, "file too short to identify"))
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&std::fs::read(path)?)
}

/// Reads a volume and treats every non-zero voxel as foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(read_volume(path)?.threshold_nonzero())
}

impl Volume {
    pub fn threshold_nonzero(&self) -> BinaryMask {
        BinaryMask::new(self.dims(), self.spacing(), self.data().iter().map(|&v| v != 0.0).collect())
            .expect("same geometry")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn nifti_fixture(datatype: i16, payload: &[u8]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dims: [i16; 8] = [3, 2, 2, 2, 1, 1, 1, 1];
        for (i, d) in dims.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        let pixdim: [f32; 8] = [1.0, 0.5, 1.5, 2.0, 1.0, 0.0, 0.0, 0.0];
        for (i, p) in pixdim.iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }

    #[test]
    fn native_round_trip() {
        let v = Volume::new([2, 3, 1], [0.7, 1.0, 2.5], vec![0.0, -1.5, 3.25, 1e-300, 7.0, 0.1]).unwrap();
        let back = decode_volume(&encode_volume(&v)).unwrap();
        assert_eq!(back, v);
        let m = v.threshold(0.05);
        let back = decode_volume(&encode_mask(&m)).unwrap().threshold_nonzero();
        assert_eq!(back, m);
    }

    #[test]
    fn native_errors() {
        let v = Volume::zeros([2, 2, 2], [1.0; 3]);
        let bytes = encode_volume(&v);
        for cut in [0, 7, 30, 51, 60, bytes.len() - 1] {
            assert!(decode_native(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[12] = 9;
        assert!(matches!(decode_native(&bad), Err(Error::Format { offset: 12, .. })));
        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_native(&bad).is_err());
    }

    #[test]
    fn nifti_uint8_fixture() {
        let payload: Vec<u8> = (0..8).map(|i| i * 10).collect();
        let v = decode_volume(&nifti_fixture(nifti_type::UINT8, &payload)).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.spacing(), [0.5, 1.5, 2.0]);
        assert_eq!(v.data(), payload.iter().map(|&b| b as f64).collect::<Vec<_>>().as_slice());
        assert_eq!(v.get(1, 0, 0), 10.0);
        assert_eq!(v.get(0, 1, 0), 20.0);
        assert_eq!(v.get(0, 0, 1), 40.0);
    }

    #[test]
    fn nifti_int16_and_float32() {
        let vals: [i16; 8] = [-3, 0, 1, 2, 300, -300, 7, 8];
        let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let v = decode_nifti(&nifti_fixture(nifti_type::INT16, &payload)).unwrap();
        assert_eq!(v.data(), vals.map(f64::from).as_slice());
        let vals: [f32; 8] = [0.5, -1.25, 2.0, 0.0, 1.0, 3.0, 4.0, 5.0];
        let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let v = decode_nifti(&nifti_fixture(nifti_type::FLOAT32, &payload)).unwrap();
        assert_eq!(v.data(), vals.map(f64::from).as_slice());
    }

    #[test]
    fn nifti_errors() {
        let good = nifti_fixture(nifti_type::UINT8, &[1; 8]);
        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(decode_nifti(&bad), Err(Error::Format { offset: 70, .. })));
        assert!(decode_nifti(&good[..355]).is_err());
        assert!(decode_nifti(&good[..100]).is_err());
        let mut bad = good.clone();
        bad[344..348].copy_from_slice(b"ni1\0");
        assert!(decode_nifti(&bad).is_err());
        let mut bad = good.clone();
        bad[0..4].copy_from_slice(&12i32.to_le_bytes());
        assert!(decode_nifti(&bad).is_err());
        let mut bad = good.clone();
        bad[80..84].copy_from_slice(&0f32.to_le_bytes());
        assert!(decode_nifti(&bad).is_err());
        let mut bad = good;
        bad[108..112].copy_from_slice(&1e30f32.to_le_bytes());
        assert!(decode_nifti(&bad).is_err());
    }
}
