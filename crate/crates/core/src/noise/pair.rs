//! On-disk synthesized pairs: `low/` and `gt/` containers plus `pair.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DarkSample, NoiseParams};
use crate::error::Result;
use crate::lightfield::io::{read_json, read_light_field, write_dir_atomic, write_json, write_light_field, ViewFormat, PAIR_FILE};
use crate::lightfield::LightField;

pub const LOW_DIR: &str = "low";
pub const GT_DIR: &str = "gt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub beta: f64,
    pub params: NoiseParams,
    pub seed: u64,
}

pub fn save_pair(dir: &Path, sample: &DarkSample, gt: &LightField, seed: u64, format: ViewFormat) -> Result<()> {
    write_dir_atomic(dir, |staging| {
        write_light_field(&sample.l_in, &staging.join(LOW_DIR), format)?;
        write_light_field(gt, &staging.join(GT_DIR), format)?;
        write_json(
            &staging.join(PAIR_FILE),
            &PairRecord {
                beta: sample.beta,
                params: sample.params.clone(),
                seed,
            },
        )
    })
}

/// Returns `(low, gt, record)`.
pub fn load_pair(dir: &Path) -> Result<(LightField, LightField, PairRecord)> {
    let record = read_json(&dir.join(PAIR_FILE))?;
    Ok((read_light_field(&dir.join(LOW_DIR))?, read_light_field(&dir.join(GT_DIR))?, record))
}
