//! Checkpoints: a JSON manifest (config, seed, step, parameter name/shape
//! table) next to a single file of concatenated DUT1 tensor records in
//! manifest order.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::network::{ArchitectureConfig, NetworkState};
use crate::scalar::{Precision, Scalar};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.dut1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ArchitectureConfig,
    pub seed: u64,
    pub step: u64,
    pub precision: Precision,
    pub params: Vec<ParamEntry>,
}

pub fn save<T: Scalar>(dir: &Path, net: &NetworkState<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let params = net.named_params();
    let manifest = Manifest {
        config: net.config.clone(),
        seed: net.seed,
        step: net.step,
        precision: net.precision(),
        params: params
            .iter()
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape.0,
            })
            .collect(),
    };
    let f = std::fs::File::create(dir.join(MANIFEST_FILE))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
    let mut f = BufWriter::new(std::fs::File::create(dir.join(PARAMS_FILE))?);
    for (_, t) in &params {
        io::write_tensor(&mut f, t)?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let f = std::fs::File::open(dir.join(MANIFEST_FILE)).map_err(|e| {
        Error::Checkpoint(format!(
            "cannot open {}: {e}",
            dir.join(MANIFEST_FILE).display()
        ))
    })?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Rebuild the network from its manifest and overwrite every parameter
/// from the payload, casting dtype if needed.
pub fn load<T: Scalar>(dir: &Path) -> Result<NetworkState<T>> {
    let manifest = load_manifest(dir)?;
    let mut net = NetworkState::<T>::build(&manifest.config, manifest.seed)?;
    net.step = manifest.step;
    let mut f = BufReader::new(std::fs::File::open(dir.join(PARAMS_FILE))?);
    let mut loaded: Vec<(String, crate::tensor::Tensor<T>)> = Vec::new();
    for entry in &manifest.params {
        let t = io::read_tensor::<T, _>(&mut f).map_err(|e| {
            Error::Checkpoint(format!("while reading tensor '{}': {e}", entry.name))
        })?;
        if t.shape.0 != entry.shape {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has shape {} but manifest says {:?}",
                entry.name, t.shape, entry.shape
            )));
        }
        loaded.push((entry.name.clone(), t));
    }
    let mut idx = 0usize;
    let mut mismatch = None;
    net.visit_params_mut(&mut |name, tensor| {
        if mismatch.is_some() {
            return;
        }
        if idx >= loaded.len() || loaded[idx].0 != name {
            mismatch = Some(name);
            return;
        }
        if loaded[idx].1.shape != tensor.shape {
            mismatch = Some(format!("{name} (shape)"));
            return;
        }
        tensor.data = std::mem::take(&mut loaded[idx].1.data);
        idx += 1;
    });
    if let Some(name) = mismatch {
        return Err(Error::Checkpoint(format!(
            "checkpoint does not match architecture at parameter '{name}'"
        )));
    }
    if idx != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} extra parameter tensors",
            loaded.len() - idx
        )));
    }
    Ok(net)
}
