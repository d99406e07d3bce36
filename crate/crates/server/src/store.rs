use std::fs;
use std::path::{Path, PathBuf};

use swphm_core::ingest::{backlog_to_json, load_dataset, releases_to_json};
use swphm_core::model::Dataset;
use swphm_core::pipeline::TrainedModel;
use swphm_core::{Error, Result};

const BACKLOG: &str = "backlog.json";
const RELEASES: &str = "releases.json";
const MODEL: &str = "model.json";

/// Session files in a state directory, in the same formats the command
/// line reads and writes.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load(&self) -> Result<(Option<Dataset>, Option<TrainedModel>)> {
        let backlog = self.dir.join(BACKLOG);
        let releases = self.dir.join(RELEASES);
        if !(backlog.exists() && releases.exists()) {
            return Ok((None, None));
        }
        let dataset = load_dataset(&backlog, &releases)?;
        let model_path = self.dir.join(MODEL);
        let model = if model_path.exists() {
            let text = fs::read_to_string(&model_path).map_err(|e| Error::io(&model_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        Ok((Some(dataset), model))
    }

    pub fn save_dataset(&self, dataset: &Dataset) -> Result<()> {
        let (items, releases) = dataset.clone().into_parts();
        self.write(BACKLOG, &backlog_to_json(&items)?)?;
        self.write(RELEASES, &releases_to_json(&releases)?)
    }

    pub fn save_model(&self, model: &TrainedModel) -> Result<()> {
        self.write(MODEL, &serde_json::to_string_pretty(model)?)
    }

    pub fn clear_model(&self) -> Result<()> {
        let path = self.dir.join(MODEL);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(&path, e)),
            _ => Ok(()),
        }
    }

    // write then rename so a crash never leaves a half-written file
    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let path = self.dir.join(name);
        fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
