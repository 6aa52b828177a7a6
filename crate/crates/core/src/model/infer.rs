use super::ToyModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::Volume;

/// Non-overlapping sliding-window inference.
///
/// The volume is zero-padded up to a multiple of the model patch, cut into
/// `patch³` tiles, each tile is predicted independently and the stitched
/// probabilities are cropped back to the input grid.
pub fn sliding_window_infer(model: &ToyModel, volume: &Volume, exec: Exec) -> Result<Volume> {
    let p = model.config.patch;
    let dims = volume.dims();
    if dims.iter().any(|&d| d < p) {
        return Err(Error::Shape(format!("volume {dims:?} is smaller than the {p}³ patch")));
    }
    let tiles = dims.map(|d| d.div_ceil(p));
    let origins: Vec<[usize; 3]> = (0..tiles[2])
        .flat_map(|tz| (0..tiles[1]).flat_map(move |ty| (0..tiles[0]).map(move |tx| [tx * p, ty * p, tz * p])))
        .collect();
    let preds = exec.map(&origins, |o| {
        let mut tile = Volume::zeros([p; 3], volume.spacing());
        for z in 0..p {
            for y in 0..p {
                for x in 0..p {
                    let (sx, sy, sz) = (o[0] + x, o[1] + y, o[2] + z);
                    if sx < dims[0] && sy < dims[1] && sz < dims[2] {
                        tile.set(x, y, z, volume.get(sx, sy, sz));
                    }
                }
            }
        }
        model.forward(&tile)
    });
    let mut out = Volume::zeros(dims, volume.spacing());
    for (o, pred) in origins.iter().zip(preds) {
        let pred = pred?;
        for z in 0..p {
            for y in 0..p {
                for x in 0..p {
                    let (sx, sy, sz) = (o[0] + x, o[1] + y, o[2] + z);
                    if sx < dims[0] && sy < dims[1] && sz < dims[2] {
                        out.set(sx, sy, sz, pred.get(x, y, z));
                    }
                }
            }
        }
    }
    Ok(out)
}
