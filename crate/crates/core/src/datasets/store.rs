//! On-disk layout:
//!
//! ```text
//! manifest.json
//! states.csv                 traj,frame,time,<state components...>
//! traj0000/frame0000.ppm     binary P6, maxval 255
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetError, Manifest, Result};
use crate::systems::{StateVector, SystemKind};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn bad(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::BadFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub(crate) fn frame_path(root: &Path, traj: usize, t: usize) -> PathBuf {
    root.join(format!("traj{traj:04}"))
        .join(format!("frame{t:04}.ppm"))
}

/// Writes a square RGB raster as binary PPM.
pub fn write_ppm(path: &Path, size: usize, rgb: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(rgb.len() + 32);
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(rgb, size as u32, size as u32, ExtendedColorType::Rgb8)
        .map_err(|e| bad(path, e))?;
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads a binary PPM; returns `(width, height, rgb bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let dec = PnmDecoder::new(BufReader::new(file)).map_err(|e| bad(path, e))?;
    if dec.color_type() != image::ColorType::Rgb8 {
        return Err(bad(
            path,
            format!("expected 8-bit RGB, found {:?}", dec.color_type()),
        ));
    }
    let (w, h) = dec.dimensions();
    let mut rgb = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut rgb).map_err(|e| bad(path, e))?;
    Ok((w as usize, h as usize, rgb))
}

fn digest(files: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn encoded_frames(data: &Dataset, traj: usize) -> Result<Vec<Vec<u8>>> {
    let size = data.size();
    (0..data.steps())
        .map(|t| {
            let mut buf = Vec::new();
            PnmEncoder::new(&mut buf)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(
                    data.frame_bytes(traj, t),
                    size as u32,
                    size as u32,
                    ExtendedColorType::Rgb8,
                )
                .map_err(|e| bad(&frame_path(Path::new("."), traj, t), e))?;
            Ok(buf)
        })
        .collect()
}

fn state_header(kind: SystemKind) -> Vec<String> {
    let mut h = vec!["traj".to_string(), "frame".to_string(), "time".to_string()];
    h.extend(kind.state_names().iter().map(|s| s.to_string()));
    h
}

impl Dataset {
    /// Writes frames, states and manifest under `root`, creating it if
    /// needed. With `checksums` the manifest records a SHA-256 per
    /// trajectory, which [`Dataset::load`] then verifies.
    pub fn save(&self, root: &Path, checksums: bool) -> Result<()> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let mut sums = Vec::new();
        for traj in 0..self.trajectories() {
            let dir = root.join(format!("traj{traj:04}"));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let files = encoded_frames(self, traj)?;
            for (t, bytes) in files.iter().enumerate() {
                let p = frame_path(root, traj, t);
                fs::write(&p, bytes).map_err(io_err(&p))?;
            }
            if checksums {
                sums.push(digest(&files));
            }
        }

        let path = root.join("states.csv");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let csv_err = |e: csv::Error| bad(&path, e);
        w.write_record(state_header(self.spec().system))
            .map_err(csv_err)?;
        let dt = self.obs_dt();
        for traj in 0..self.trajectories() {
            for (t, s) in self.states(traj).iter().enumerate() {
                let mut row = vec![
                    traj.to_string(),
                    t.to_string(),
                    format!("{:?}", t as f64 * dt),
                ];
                row.extend(s.0.iter().map(|v| format!("{v:?}")));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(io_err(&path))?;

        let mut manifest = self.manifest.clone();
        manifest.checksums = checksums.then_some(sums);
        let path = root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Dataset> {
        let manifest = read_manifest(root)?;
        let cfg = &manifest.config;
        let frame_len = cfg.size * cfg.size * 3;
        let mut frames = Vec::with_capacity(cfg.trajectories);
        for traj in 0..cfg.trajectories {
            let dir = root.join(format!("traj{traj:04}"));
            let count = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter(|e| {
                    e.as_ref()
                        .is_ok_and(|e| e.path().extension().is_some_and(|x| x == "ppm"))
                })
                .count();
            if count != cfg.steps {
                return Err(bad(
                    &dir,
                    format!("{count} frame files, manifest says {}", cfg.steps),
                ));
            }
            let mut bytes = Vec::with_capacity(cfg.steps * frame_len);
            let mut raw = Vec::new();
            for t in 0..cfg.steps {
                let p = frame_path(root, traj, t);
                let (w, h, rgb) = read_ppm(&p)?;
                if w != cfg.size || h != cfg.size {
                    return Err(bad(
                        &p,
                        format!("{w}x{h} frame, manifest says {0}x{0}", cfg.size),
                    ));
                }
                if manifest.checksums.is_some() {
                    raw.push(fs::read(&p).map_err(io_err(&p))?);
                }
                bytes.extend(rgb);
            }
            if let Some(sums) = &manifest.checksums {
                if digest(&raw) != sums[traj] {
                    return Err(DatasetError::Checksum { path: dir });
                }
            }
            frames.push(bytes);
        }
        let states = read_states(root, &manifest)?;
        Ok(Dataset {
            manifest,
            frames,
            states,
        })
    }
}

fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let invalid = |reason: String| DatasetError::Manifest {
        path: path.clone(),
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    let system = value
        .pointer("/spec/system")
        .and_then(|v| v.as_str())
        .ok_or_else(|| invalid("missing spec.system".into()))?;
    system
        .parse::<SystemKind>()
        .map_err(|e| invalid(e.to_string()))?;
    let m: Manifest = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
    m.spec.validate().map_err(|e| invalid(e.to_string()))?;
    let bad_cfg = m.config.validate();
    if !bad_cfg.is_empty() {
        return Err(invalid(bad_cfg.join("; ")));
    }
    if m.splits.len() != m.config.trajectories {
        return Err(invalid(format!(
            "{} split entries for {} trajectories",
            m.splits.len(),
            m.config.trajectories
        )));
    }
    if m.checksums
        .as_ref()
        .is_some_and(|c| c.len() != m.config.trajectories)
    {
        return Err(invalid(
            "checksum count differs from trajectory count".into(),
        ));
    }
    Ok(m)
}

fn read_states(root: &Path, m: &Manifest) -> Result<Vec<Vec<StateVector>>> {
    let path = root.join("states.csv");
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(&path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != state_header(m.spec.system) {
        return Err(bad(&path, format!("unexpected header {header:?}")));
    }
    let dim = m.spec.true_id();
    let mut states = vec![Vec::with_capacity(m.config.steps); m.config.trajectories];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(&path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| bad(&path, format!("row {}: bad {what}", line + 1));
        let traj: usize = field(0).parse().map_err(|_| parse_err("traj"))?;
        let t: usize = field(1).parse().map_err(|_| parse_err("frame"))?;
        if traj >= m.config.trajectories || t != states[traj].len() {
            return Err(parse_err("traj/frame order"));
        }
        let q = (0..dim)
            .map(|i| {
                field(3 + i)
                    .parse::<f64>()
                    .map_err(|_| parse_err("state value"))
            })
            .collect::<Result<Vec<f64>>>()?;
        states[traj].push(StateVector(q));
    }
    if states.iter().any(|s| s.len() != m.config.steps) {
        return Err(bad(&path, "row count disagrees with the manifest"));
    }
    Ok(states)
}
