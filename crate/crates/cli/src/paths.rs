//! Workdir layout shared by the stages.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Layout {
    pub workdir: PathBuf,
}

impl Layout {
    pub fn new(workdir: &Path) -> Self {
        Self {
            workdir: workdir.to_path_buf(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.workdir.join("dataset")
    }

    pub fn index_path(&self) -> PathBuf {
        self.dataset_dir().join("index.json")
    }

    pub fn translate_dir(&self) -> PathBuf {
        self.workdir.join("translate")
    }

    pub fn augmented_dir(&self) -> PathBuf {
        self.workdir.join("augmented")
    }

    pub fn index_ss_path(&self) -> PathBuf {
        self.augmented_dir().join("index_ss.json")
    }

    pub fn index_st_path(&self) -> PathBuf {
        self.augmented_dir().join("index_st.json")
    }

    pub fn generator_stem(&self) -> PathBuf {
        self.workdir.join("generator").join("g")
    }

    pub fn records_dir(&self) -> PathBuf {
        self.workdir.join("records")
    }

    pub fn segmentor_stem(&self) -> PathBuf {
        self.workdir.join("segmentor").join("s")
    }

    pub fn infer_dir(&self) -> PathBuf {
        self.workdir.join("infer")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.workdir.join("eval")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.workdir.join("logs")
    }

    pub fn stage_log(&self, stage: &str) -> PathBuf {
        self.logs_dir().join(format!("{stage}.stage.json"))
    }
}
