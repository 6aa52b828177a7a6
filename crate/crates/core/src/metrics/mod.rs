//! Segmentation evaluation and post-processing on 3D voxel grids.

mod components;
mod io;
mod overlap;
mod volume;

pub use components::{
    filter_small_components, label_components, measure_volume, ComponentLabeling, DEFAULT_MIN_COMPONENT_VOXELS,
};
pub use io::{
    decode_native, decode_nifti, decode_volume, encode_mask, encode_volume, nifti_type, read_mask, read_volume,
    write_mask, write_volume, VoxelType, NATIVE_MAGIC, NATIVE_VERSION, NIFTI_HEADER_SIZE,
};
pub use overlap::{dice_score, hd95, score, squared_distance_field, surface_voxels, SegScore};
pub use volume::{voxel_index, BinaryMask, Volume};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Left and right structure volumes (cm³) from a label map.
///
/// Label 1 is left and label 2 right. A map holding a single foreground
/// label is split at the x midline instead: voxels with `x < nx/2` count as
/// left.
pub fn hemisphere_volumes(labels: &Volume) -> (f64, f64) {
    let has_two = labels.data().contains(&2.0);
    if has_two {
        return (measure_volume(&labels.label_mask(1.0)), measure_volume(&labels.label_mask(2.0)));
    }
    let fg = labels.threshold_nonzero();
    let [nx, ny, nz] = fg.dims();
    let mut left = BinaryMask::empty(fg.dims(), fg.spacing());
    let mut right = left.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if fg.get(x, y, z) {
                    if x < nx / 2 {
                        left.set(x, y, z, true);
                    } else {
                        right.set(x, y, z, true);
                    }
                }
            }
        }
    }
    (measure_volume(&left), measure_volume(&right))
}

/// One evaluated subject.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SubjectRow {
    pub id: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub left_volume_cm3: f64,
    pub right_volume_cm3: f64,
}

/// Scores `(id, prediction, truth)` triples, optionally filtering small
/// components from the prediction first. Rows come back in input order.
pub fn evaluate_batch(
    subjects: &[(String, Volume, Volume)],
    min_component: Option<usize>,
    exec: Exec,
) -> Result<Vec<SubjectRow>> {
    exec.map(subjects, |(id, pred, truth)| {
        let mut pm = pred.threshold_nonzero();
        let tm = truth.threshold_nonzero();
        let mut pred_labels = pred.clone();
        if let Some(min) = min_component {
            pm = filter_small_components(&pm, min);
            for (v, keep) in pred_labels.data_mut().iter_mut().zip(pm.voxels()) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        let dice = dice_score(&tm, &pm)?;
        let hd95 = match hd95(&tm, &pm) {
            Ok(h) => Some(h),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let (l, r) = hemisphere_volumes(&pred_labels);
        Ok(SubjectRow {
            id: id.clone(),
            dice,
            hd95,
            left_volume_cm3: l,
            right_volume_cm3: r,
        })
    })
    .into_iter()
    .collect()
}

/// `id,dice,hd95,left_volume_cm3,right_volume_cm3` rows with a header. An
/// undefined HD95 is left blank.
pub fn rows_to_csv(rows: &[SubjectRow]) -> String {
    let mut s = String::from("id,dice,hd95,left_volume_cm3,right_volume_cm3\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{},{:.6},{:.6}\n",
            r.id,
            r.dice,
            r.hd95.map_or(String::new(), |h| format!("{h:.6}")),
            r.left_volume_cm3, r.right_volume_cm3
        ));
    }
    s
}
