use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel index with x varying fastest.
#[inline]
pub fn voxel_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_geometry(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Shape(format!("volume dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Shape(format!("voxel spacing must be positive, got {spacing:?}")));
    }
    let n = dims[0] * dims[1] * dims[2];
    if n != len {
        return Err(Error::Shape(format!("dims {dims:?} need {n} voxels, got {len}")));
    }
    Ok(())
}

/// Scalar 3D image with physical voxel spacing in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self::new(dims, spacing, vec![0.0; dims[0] * dims[1] * dims[2]]).expect("valid geometry")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[voxel_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = voxel_index(self.dims, x, y, z);
        self.data[i] = v;
    }

    /// Voxels strictly above `level` become foreground.
    pub fn threshold(&self, level: f64) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing.map(f64::to_bits),
            voxels: self.data.iter().map(|&v| v > level).collect(),
        }
    }

    /// Voxels equal to `label` become foreground.
    pub fn label_mask(&self, label: f64) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing.map(f64::to_bits),
            voxels: self.data.iter().map(|&v| v == label).collect(),
        }
    }
}

/// Foreground/background voxel grid with spacing in mm.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    dims: [usize; 3],
    #[serde(with = "spacing_bits")]
    spacing: [u64; 3],
    voxels: Vec<bool>,
}

// Spacing is stored as raw bits so masks can be `Eq + Hash`.
mod spacing_bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bits: &[u64; 3], s: S) -> Result<S::Ok, S::Error> {
        bits.map(f64::from_bits).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u64; 3], D::Error> {
        Ok(<[f64; 3]>::deserialize(d)?.map(f64::to_bits))
    }
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<bool>) -> Result<Self> {
        check_geometry(dims, spacing, voxels.len())?;
        Ok(Self {
            dims,
            spacing: spacing.map(f64::to_bits),
            voxels,
        })
    }

    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self::new(dims, spacing, vec![false; dims[0] * dims[1] * dims[2]]).expect("valid geometry")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing.map(f64::from_bits)
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.voxels[voxel_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = voxel_index(self.dims, x, y, z);
        self.voxels[i] = v;
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    /// Same dims and spacing.
    pub fn same_grid(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub(crate) fn check_same_grid(&self, other: &BinaryMask) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask grids differ: {:?} @ {:?} vs {:?} @ {:?}",
                self.dims,
                self.spacing(),
                other.dims,
                other.spacing()
            )))
        }
    }

    /// 1.0 for foreground, 0.0 for background.
    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing(),
            data: self.voxels.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.voxels.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}
