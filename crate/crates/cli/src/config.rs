//! Flat `key = value` run-configuration files, overridable by CLI flags.
//!
//! Recognized keys mirror the solve flags: `matrix`, `laplacian` (three
//! grid sizes), `interval` (two reals), `slices` (`auto` or a count), `phi`,
//! `damping`, `tol`, `threads`, `seed`, `engine`, `m_factor`, `its_factor`,
//! `out`, `vectors`, `report`. Lines starting with `#` are comments.

use std::path::PathBuf;

use eigslice::{DampingKind, Engine};

#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub matrix: Option<PathBuf>,
    pub laplacian: Option<(usize, usize, usize)>,
    pub interval: Option<(f64, f64)>,
    pub slices: Option<Option<usize>>, // None = key absent, Some(None) = auto
    pub phi: Option<f64>,
    pub damping: Option<DampingKind>,
    pub tol: Option<f64>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub engine: Option<Engine>,
    pub m_factor: Option<usize>,
    pub its_factor: Option<usize>,
    pub out: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn parse_config(text: &str) -> Result<FileConfig, String> {
    let mut cfg = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let err = |msg: &str| format!("line {}: {msg}", lineno + 1);
        match key {
            "matrix" => cfg.matrix = Some(PathBuf::from(value)),
            "laplacian" => {
                let dims: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("laplacian needs three grid sizes"))?;
                if dims.len() != 3 {
                    return Err(err("laplacian needs three grid sizes"));
                }
                cfg.laplacian = Some((dims[0], dims[1], dims[2]));
            }
            "interval" => {
                let ends: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err("interval needs two reals"))?;
                if ends.len() != 2 {
                    return Err(err("interval needs two reals"));
                }
                cfg.interval = Some((ends[0], ends[1]));
            }
            "slices" => {
                cfg.slices = Some(if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| err("bad slice count"))?)
                });
            }
            "phi" => cfg.phi = Some(value.parse().map_err(|_| err("bad phi"))?),
            "damping" => cfg.damping = Some(value.parse().map_err(|e: String| err(&e))?),
            "tol" => cfg.tol = Some(value.parse().map_err(|_| err("bad tol"))?),
            "threads" => cfg.threads = Some(value.parse().map_err(|_| err("bad threads"))?),
            "seed" => cfg.seed = Some(value.parse().map_err(|_| err("bad seed"))?),
            "engine" => cfg.engine = Some(value.parse().map_err(|e: String| err(&e))?),
            "m_factor" => cfg.m_factor = Some(value.parse().map_err(|_| err("bad m_factor"))?),
            "its_factor" => {
                cfg.its_factor = Some(value.parse().map_err(|_| err("bad its_factor"))?)
            }
            "out" => cfg.out = Some(PathBuf::from(value)),
            "vectors" => cfg.vectors = Some(PathBuf::from(value)),
            "report" => cfg.report = Some(PathBuf::from(value)),
            other => return Err(err(&format!("unknown key '{other}'"))),
        }
    }
    Ok(cfg)
}
