//! Checkpoint archive: one safetensors file holding online and target
//! parameters plus Adam moments, with the run configuration and progress
//! counters in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::SafeTensors;

use crate::config::RunConfig;
use crate::distill::{Adam, ModelState};
use crate::error::{Result, SspdError};
use crate::model::{Network, ParamStore};

pub const FORMAT_TAG: &str = "sspd-ckpt-v1";

const ONLINE: &str = "online/";
const TARGET: &str = "target/";
const ADAM_M: &str = "adam/m/";
const ADAM_V: &str = "adam/v/";

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, state: &ModelState) -> Result<()> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (prefix, store) in [(ONLINE, &state.online), (TARGET, &state.target)] {
        for (name, var) in store.iter() {
            tensors.insert(format!("{prefix}{name}"), var.as_tensor().detach());
        }
    }
    for (prefix, moments) in [(ADAM_M, &state.adam.m), (ADAM_V, &state.adam.v)] {
        for (name, t) in moments {
            tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }
    let meta: BTreeMap<String, String> = [
        ("format", FORMAT_TAG.to_string()),
        ("epoch", state.epoch.to_string()),
        ("step", state.step.to_string()),
        ("adam_step", state.adam.step.to_string()),
        ("config", cfg.to_toml()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let fail = |e: String| SspdError::Checkpoint(format!("{}: {e}", path.display()));
    let hashed: HashMap<String, String> = meta.clone().into_iter().collect();
    let mut buf = safetensors::serialize(tensors.iter().map(|(k, v)| (k.clone(), v)), Some(hashed))
        .map_err(|e| fail(e.to_string()))?;
    sort_header_metadata(&mut buf, &meta).map_err(fail)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf).map_err(|e| SspdError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| SspdError::io(path, e))
}

/// Rewrites the `__metadata__` object, which the serializer emits first in
/// hash order, with sorted keys so equal states give equal bytes.
fn sort_header_metadata(buf: &mut [u8], meta: &BTreeMap<String, String>) -> std::result::Result<(), String> {
    const LEAD: &[u8] = b"{\"__metadata__\":";
    let sorted = serde_json::to_string(meta).map_err(|e| e.to_string())?;
    let start = 8 + LEAD.len();
    let end = start + sorted.len();
    if buf.len() < end || &buf[8..start] != LEAD || buf[end] != b',' {
        return Err("unexpected safetensors header layout".into());
    }
    buf[start..end].copy_from_slice(sorted.as_bytes());
    Ok(())
}

fn meta_value<'a>(meta: &'a HashMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| SspdError::Checkpoint(format!("{}: missing metadata key {key:?}", path.display())))
}

fn parse_meta<T: std::str::FromStr>(meta: &HashMap<String, String>, key: &str, path: &Path) -> Result<T> {
    meta_value(meta, key, path)?
        .parse()
        .map_err(|_| SspdError::Checkpoint(format!("{}: bad value for {key:?}", path.display())))
}

/// Fills a freshly built parameter store from `prefix`-named tensors.
fn restore_store(net: &Network, tensors: &HashMap<String, Tensor>, prefix: &str, dtype: DType) -> Result<ParamStore> {
    let store = net.init_params(dtype, 0)?;
    for (name, var) in store.iter() {
        let key = format!("{prefix}{name}");
        let t = tensors
            .get(&key)
            .ok_or_else(|| SspdError::Checkpoint(format!("missing tensor {key}")))?;
        if t.dims() != var.dims() {
            return Err(SspdError::Checkpoint(format!("tensor {key} has shape {:?}, expected {:?}", t.dims(), var.dims())));
        }
        var.set(&t.to_dtype(dtype)?)?;
    }
    Ok(store)
}

/// Configuration and full training state from a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, ModelState)> {
    let buf = std::fs::read(path).map_err(|e| SspdError::io(path, e))?;
    let (_, header) =
        SafeTensors::read_metadata(&buf).map_err(|e| SspdError::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| SspdError::Checkpoint(format!("{}: no metadata", path.display())))?;
    let tag = meta_value(&meta, "format", path)?;
    if tag != FORMAT_TAG {
        return Err(SspdError::Checkpoint(format!(
            "{}: format {tag:?}, expected {FORMAT_TAG:?}",
            path.display()
        )));
    }
    let cfg = RunConfig::from_toml(meta_value(&meta, "config", path)?)?;
    let tensors = candle_core::safetensors::load_buffer(&buf, &Device::Cpu)?;
    let dtype = tensors
        .iter()
        .find(|(k, _)| k.starts_with(ONLINE))
        .map(|(_, t)| t.dtype())
        .unwrap_or(DType::F32);
    let net = Network::new(cfg.model.clone())?;
    let online = restore_store(&net, &tensors, ONLINE, dtype)?;
    let target = restore_store(&net, &tensors, TARGET, dtype)?;
    let collect = |prefix: &str| -> BTreeMap<String, Tensor> {
        tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
            .collect()
    };
    let mut adam = Adam::new(cfg.adam_config());
    adam.restore(parse_meta(&meta, "adam_step", path)?, collect(ADAM_M), collect(ADAM_V))?;
    let state = ModelState {
        online,
        target,
        adam,
        epoch: parse_meta(&meta, "epoch", path)?,
        step: parse_meta(&meta, "step", path)?,
    };
    Ok((cfg, state))
}
