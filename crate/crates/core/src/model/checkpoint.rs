use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{attach_adapters, build_model, ToyModel, ToyModelConfig};
use crate::adapters::{read_container, write_container, AdapterSpec, Container, Variant};
use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Manifest of a model checkpoint: the architecture needed to rebuild the
/// parameter skeleton, plus the adapter spec its registry layers carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: String,
    pub architecture: ToyModelConfig,
    pub variant: Variant,
    pub adapter: AdapterSpec,
}

pub const MODEL_KIND: &str = "toy-model";

pub fn model_to_container(model: &ToyModel) -> Container {
    let manifest = ModelManifest {
        kind: MODEL_KIND.into(),
        architecture: model.config.clone(),
        variant: model.variant,
        adapter: model.blocks[0].q.spec,
    };
    Container {
        manifest: serde_json::to_value(&manifest).expect("manifest serializes"),
        tensors: model.params().into_iter().map(|(n, m)| (n, m.clone())).collect(),
    }
}

pub fn model_from_container(c: &Container) -> Result<ToyModel> {
    let manifest: ModelManifest = serde_json::from_value(c.manifest.clone())
        .map_err(|e| Error::format(16, format!("not a model manifest: {e}")))?;
    if manifest.kind != MODEL_KIND {
        return Err(Error::format(16, format!("checkpoint kind {:?} is not {MODEL_KIND:?}", manifest.kind)));
    }
    let mut rng = Rng::new(0);
    let mut model = build_model(&manifest.architecture, &mut rng)?;
    if manifest.adapter.variant != Variant::FullTuning {
        model = attach_adapters(&model, &manifest.adapter, &mut rng)?.0;
    }
    model.variant = manifest.variant;
    if c.tensors.len() != model.params().len() {
        return Err(Error::format(
            0,
            format!("checkpoint holds {} tensors, architecture needs {}", c.tensors.len(), model.params().len()),
        ));
    }
    for (name, slot) in model.params_mut() {
        let t = c
            .tensor(&name)
            .ok_or_else(|| Error::format(0, format!("missing tensor {name:?}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::format(
                0,
                format!("tensor {name:?} is {:?}, architecture needs {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t.clone();
    }
    Ok(model)
}

pub fn write_model(model: &ToyModel, path: &Path) -> Result<()> {
    write_container(&model_to_container(model), path)
}

pub fn read_model(path: &Path) -> Result<ToyModel> {
    model_from_container(&read_container(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_plain_and_adapted() {
        let mut rng = Rng::new(11);
        let c = ToyModelConfig {
            patch: 8,
            embed_dim: 8,
            window: 2,
            ..ToyModelConfig::default()
        };
        let base = build_model(&c, &mut rng).unwrap();
        let (hyps, _) = attach_adapters(&base, &AdapterSpec::new(Variant::HyPS, 2), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for m in [base, hyps] {
            let p = dir.path().join("m.ckpt");
            write_model(&m, &p).unwrap();
            assert_eq!(read_model(&p).unwrap(), m);
        }
    }
}
