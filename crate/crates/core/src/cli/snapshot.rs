//! Field snapshots: raw little-endian `f64` in row-major lattice order plus
//! a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub d: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub components: usize,
    pub name: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub sample: Option<u64>,
}

/// Writes `<dir>/<name>.bin` and `<dir>/<name>.json`; returns the data path.
///
/// Components are stored one after another, each in lattice order.
pub fn write_components(
    dir: &Path,
    name: &str,
    grid: &Grid,
    components: &[&[f64]],
    seed: Option<u64>,
    sample: Option<u64>,
) -> Result<PathBuf> {
    if components.iter().any(|c| c.len() != grid.len()) {
        return Err(invalid("component length does not match the grid"));
    }
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(8 * grid.len() * components.len());
    for c in components {
        for v in c.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let data = dir.join(format!("{name}.bin"));
    fs::write(&data, bytes)?;
    let side = Sidecar {
        d: grid.dim(),
        length: grid.length(),
        n: grid.points_per_dim(),
        components: components.len(),
        name: name.to_string(),
        seed,
        sample,
    };
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&side)?)?;
    Ok(data)
}

pub fn write_scalar(dir: &Path, name: &str, f: &ScalarField, seed: Option<u64>, sample: Option<u64>) -> Result<PathBuf> {
    write_components(dir, name, f.grid(), &[f.values()], seed, sample)
}

pub fn write_vector(dir: &Path, name: &str, f: &VectorField, seed: Option<u64>, sample: Option<u64>) -> Result<PathBuf> {
    let comps: Vec<&[f64]> = (0..f.grid().dim()).map(|i| f.component(i)).collect();
    write_components(dir, name, f.grid(), &comps, seed, sample)
}

pub fn write_matrix(dir: &Path, name: &str, f: &MatrixField, seed: Option<u64>, sample: Option<u64>) -> Result<PathBuf> {
    let d = f.grid().dim();
    let comps: Vec<&[f64]> = (0..d * d).map(|ij| f.entry(ij / d, ij % d)).collect();
    write_components(dir, name, f.grid(), &comps, seed, sample)
}

/// Reads a snapshot back as its sidecar, grid and components.
pub fn read_components(data: &Path) -> Result<(Sidecar, Grid, Vec<Vec<f64>>)> {
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(data.with_extension("json"))?)?;
    let grid = Grid::new(side.d, side.length, side.n)?;
    let bytes = fs::read(data)?;
    if bytes.len() != 8 * grid.len() * side.components {
        return Err(invalid(format!("{} has {} bytes, sidecar implies {}", data.display(), bytes.len(), 8 * grid.len() * side.components)));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let comps = values.chunks(grid.len()).map(|c| c.to_vec()).collect();
    Ok((side, grid, comps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(2, 3.0, 8).unwrap();
        let f = VectorField::from_fn(g, |x| [x[0].sin(), -x[1], 0.0]);
        let path = write_vector(dir.path(), "grad", &f, Some(7), Some(2)).unwrap();
        let (side, g2, comps) = read_components(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(side.components, 2);
        assert_eq!(side.seed, Some(7));
        assert_eq!(comps[0], f.component(0));
        assert_eq!(comps[1], f.component(1));
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * 64 * 2);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(1, 1.0, 8).unwrap();
        let path = write_scalar(dir.path(), "u", &ScalarField::constant(g, 1.5), None, None).unwrap();
        std::fs::write(&path, [0u8; 16]).unwrap();
        assert!(read_components(&path).is_err());
    }
}
