//! Regional model sets as deterministic JSON.

use std::path::Path;

use crate::error::Result;
use crate::io::json::{read_json, write_json};
use crate::normalcy::RegionalModelSet;

pub fn write_model_set(path: &Path, models: &RegionalModelSet) -> Result<()> {
    write_json(path, models)
}

pub fn read_model_set(path: &Path) -> Result<RegionalModelSet> {
    read_json(path)
}
