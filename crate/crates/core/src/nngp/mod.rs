//! GP regression with the covariance of an infinite-width deep network.
//!
//! The kernel starts from a scaled dot product and is pushed through `L`
//! layers of `K ← σ_b² + σ_w² F_φ(K)`, where `F_φ` is the Gaussian expectation
//! of the nonlinearity product, read from a precomputed [`NonlinearityTable`]
//! by bilinear interpolation. Inputs are rescaled to a common norm so every
//! layer sees a single variance.

mod config;
mod kernel;
mod model;
mod table;

use std::path::Path;
use std::sync::Arc;

pub use config::{NngpConfig, Nonlinearity};
pub use kernel::{arccos_relu, base_kernel, scale_to_constant_norm, NngpKernel};
pub use model::{FeatureMap, NngpModel};
pub use table::{NonlinearityTable, TableParams};

use crate::error::Result;

/// Loads the table from `cache_dir` when a matching file exists, otherwise
/// builds it. Rows are filled lazily either way; call [`store_table`] after
/// use to persist what was computed.
pub fn load_or_build_table(
    nonlinearity: Nonlinearity,
    params: TableParams,
    cache_dir: Option<&Path>,
) -> Result<Arc<NonlinearityTable>> {
    if let Some(dir) = cache_dir {
        let path = dir.join(NonlinearityTable::cache_file_name(nonlinearity, &params));
        if path.exists() {
            match NonlinearityTable::load(&path, nonlinearity, params) {
                Ok(t) => return Ok(Arc::new(t)),
                Err(e) => log::warn!("ignoring table cache {}: {e}", path.display()),
            }
        }
    }
    Ok(Arc::new(NonlinearityTable::build(nonlinearity, params)?))
}

/// Writes the table into `cache_dir` under its canonical file name.
pub fn store_table(table: &NonlinearityTable, cache_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(cache_dir)?;
    table.save(&cache_dir.join(NonlinearityTable::cache_file_name(
        table.nonlinearity(),
        table.params(),
    )))
}
