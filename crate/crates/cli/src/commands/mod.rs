pub mod evaluate;
pub mod fit_decision;
pub mod generate;
pub mod report;
pub mod sei;
pub mod train;

use std::path::Path;

use iqsei::nn::NetworkModel;
use iqsei::{fsutil, Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config;
use crate::Common;

/// Resolves the configuration, then applies `flags`. Returns `None` after
/// printing it when `--print-config` was given.
pub fn resolve<T>(common: &Common, flags: impl FnOnce(&mut T)) -> Result<Option<T>>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut cfg: T = config::resolve(common.config.as_deref(), &common.overrides)?;
    flags(&mut cfg);
    if common.print_config {
        print!("{}", config::to_toml(&cfg)?);
        return Ok(None);
    }
    Ok(Some(cfg))
}

/// Loads a checkpoint, naming the path in the error when it is missing.
pub fn load_model(path: &Path) -> Result<(NetworkModel<f32>, u32)> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    let bytes = fsutil::read(path)?;
    let model = NetworkModel::<f32>::from_bytes(&bytes)?;
    Ok((model, crc32fast::hash(&bytes)))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File-name friendly rendering of a number: `12.5` becomes `12p5`, `-3`
/// becomes `m3`.
pub fn tag(v: f64) -> String {
    format!("{v}").replace('-', "m").replace('.', "p")
}
