//! Layout of `runs/<name>/`.
//!
//! ```text
//! config.json            resolved config, rewritten by every subcommand
//! data/                  dataset (manifest.json, states.csv, trajNNNN/*.ppm)
//! stage1.ckpt            stage1.json
//! latents.csv            intdim.json
//! stage2.ckpt            stage2.json   nsv.csv
//! dynamics.ckpt          dynamics.json
//! stability.json         stability.csv
//! evaluate.json
//! regress.json           nsv_pca.csv
//! report.json            report.md
//! logs/<subcommand>.log
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

/// An artifact, the subcommand that writes it and its file name.
#[derive(Clone, Copy, Debug)]
pub struct Artifact {
    pub what: &'static str,
    pub producer: &'static str,
    pub file: &'static str,
}

pub const DATA: Artifact = Artifact {
    what: "dataset",
    producer: "generate",
    file: "data",
};
pub const STAGE1: Artifact = Artifact {
    what: "stage-1 checkpoint",
    producer: "train-stage1",
    file: "stage1.ckpt",
};
pub const INTDIM: Artifact = Artifact {
    what: "intrinsic dimension estimate",
    producer: "estimate-id",
    file: "intdim.json",
};
pub const STAGE2: Artifact = Artifact {
    what: "stage-2 checkpoint",
    producer: "train-stage2",
    file: "stage2.ckpt",
};
pub const DYNAMICS: Artifact = Artifact {
    what: "latent dynamics checkpoint",
    producer: "train-latent-dynamics",
    file: "dynamics.ckpt",
};

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("logs")).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn open(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    /// Path of an artifact that must already exist.
    pub fn require(&self, a: Artifact) -> Result<PathBuf> {
        let p = self.path(a.file);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing {
                artifact: a.what,
                path: p.display().to_string(),
                producer: a.producer,
            })
        }
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(file);
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_text(&self, file: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(file);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn read_json(&self, file: &str) -> Result<Option<serde_json::Value>> {
        let p = self.path(file);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::BadArtifact {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
    }
}
