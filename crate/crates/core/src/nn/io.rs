//! Model directories: `manifest.json` (config, kernel, parameter names and
//! shapes), `params.bin` (little-endian f64 values in manifest order,
//! followed by the Adam moments), `template.json` and a sidecar
//! `template.sidecar.json` holding `{"sigma_ratio": r}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Model, ModelConfig, ParamSpec};
use crate::error::{Error, Result};
use crate::geometry::{read_shape, write_shape};
use crate::varifold::KernelConfig;
use crate::varigrad::Template;

pub const FORMAT: &str = "varigrad-model/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
pub const TEMPLATE_FILE: &str = "template.json";
pub const SIDECAR_FILE: &str = "template.sidecar.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub config: ModelConfig,
    pub kernel: KernelConfig,
    pub params: Vec<ParamSpec>,
    pub optimizer_step: u64,
    /// Whether `params.bin` carries Adam moments after the parameter values.
    pub optimizer_moments: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateSidecar {
    pub sigma_ratio: f64,
}

pub fn manifest(model: &Model) -> ModelManifest {
    ModelManifest {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        kernel: model.kernel,
        params: model.params().into_iter().map(ParamSpec::from).collect(),
        optimizer_step: model.optimizer.step,
        optimizer_moments: !model.optimizer.m.is_empty(),
    }
}

pub fn params_blob(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for p in model.params() {
        put(&p.value);
    }
    for m in model.optimizer.m.iter().chain(&model.optimizer.v) {
        put(m);
    }
    out
}

pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = serde_json::to_vec_pretty(&manifest(model)).map_err(|e| Error::ModelFormat(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), m)?;
    fs::write(dir.join(BLOB_FILE), params_blob(model))?;
    fs::write(dir.join(TEMPLATE_FILE), write_shape(model.template.shape()))?;
    let sidecar = TemplateSidecar {
        sigma_ratio: model.config.sigma_ratio,
    };
    fs::write(
        dir.join(SIDECAR_FILE),
        serde_json::to_vec(&sidecar).map_err(|e| Error::ModelFormat(e.to_string()))?,
    )?;
    Ok(())
}

fn take(bytes: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    if bytes.len() < 8 * n {
        return Err(Error::ModelFormat("parameter blob is truncated".into()));
    }
    let (head, rest) = bytes.split_at(8 * n);
    *bytes = rest;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let manifest: ModelManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::ModelFormat(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::ModelFormat(format!("unsupported format {:?}", manifest.format)));
    }
    let template = Template::new(read_shape(&fs::read(dir.join(TEMPLATE_FILE))?)?)?;
    let kernel = KernelConfig::new(manifest.kernel.a)?;
    let mut model = Model::new(manifest.config.clone(), template, kernel)?;
    let expected: Vec<ParamSpec> = model.params().into_iter().map(ParamSpec::from).collect();
    if expected != manifest.params {
        return Err(Error::ModelFormat("parameter layout does not match the configuration".into()));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let mut rest = &blob[..];
    for p in model.params_mut() {
        p.value = take(&mut rest, p.len())?;
    }
    let mut state = AdamState {
        step: manifest.optimizer_step,
        ..AdamState::default()
    };
    if manifest.optimizer_moments {
        let sizes: Vec<usize> = model.params().iter().map(|p| if p.trainable { p.len() } else { 0 }).collect();
        for &n in &sizes {
            state.m.push(take(&mut rest, n)?);
        }
        for &n in &sizes {
            state.v.push(take(&mut rest, n)?);
        }
    }
    if !rest.is_empty() {
        return Err(Error::ModelFormat("parameter blob has trailing bytes".into()));
    }
    model.optimizer = state;
    Ok(model)
}
