//! On-disk formats: a JSON manifest next to a raw little-endian f64 blob, and
//! CSV export of 2-D slices.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{Grid2D, ScalarField, SpaceTimeField, TimeGrid};
use crate::{Error, Result};

pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    pub dtype: String,
    /// Outermost axis first: `[nt, ny, nx]` or `[ny, nx]`.
    pub shape: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
    /// Blob file name, relative to the manifest.
    pub data: String,
}

impl FieldManifest {
    pub fn scalar(name: &str, grid: Grid2D) -> Self {
        Self {
            name: name.to_string(),
            nx: grid.nx(),
            ny: grid.ny(),
            nt: None,
            t_final: None,
            dtype: DTYPE.into(),
            shape: vec![grid.ny(), grid.nx()],
            seed: None,
            params: serde_json::Value::Null,
            data: format!("{name}.bin"),
        }
    }

    pub fn spacetime(name: &str, grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            nt: Some(time.nt()),
            t_final: Some(time.t_final()),
            shape: vec![time.nt(), grid.ny(), grid.nx()],
            ..Self::scalar(name, grid)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, path: &Path) -> Result<()> {
        let fail = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if self.dtype != DTYPE {
            return Err(fail(format!("unsupported dtype {}", self.dtype)));
        }
        let expect = match self.nt {
            Some(nt) => vec![nt, self.ny, self.nx],
            None => vec![self.ny, self.nx],
        };
        if self.shape != expect {
            return Err(fail(format!(
                "shape {:?} disagrees with nx/ny/nt",
                self.shape
            )));
        }
        Ok(())
    }
}

pub fn write_f64le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of f64", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

/// Write `<dir>/<name>.json` and its blob; returns the manifest path.
pub fn write_dump(dir: &Path, manifest: &FieldManifest, values: &[f64]) -> Result<PathBuf> {
    if values.len() != manifest.len() {
        return Err(Error::Shape(format!(
            "{} values for a manifest of shape {:?}",
            values.len(),
            manifest.shape
        )));
    }
    fs::create_dir_all(dir)?;
    let path = manifest_path(dir, &manifest.name);
    manifest.check(&path)?;
    write_f64le(&dir.join(&manifest.data), values)?;
    write_json(&path, manifest)?;
    Ok(path)
}

pub fn read_dump(manifest: &Path) -> Result<(FieldManifest, Vec<f64>)> {
    let m: FieldManifest = read_json(manifest)?;
    m.check(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let values = read_f64le(&dir.join(&m.data))?;
    if values.len() != m.len() {
        return Err(Error::Format {
            path: manifest.to_path_buf(),
            reason: format!(
                "blob holds {} values, shape needs {}",
                values.len(),
                m.len()
            ),
        });
    }
    Ok((m, values))
}

pub fn dump_scalar(
    dir: &Path,
    name: &str,
    field: &ScalarField,
    seed: Option<u64>,
    params: serde_json::Value,
) -> Result<PathBuf> {
    let mut m = FieldManifest::scalar(name, field.grid()).with_params(params);
    m.seed = seed;
    write_dump(dir, &m, field.values())
}

pub fn dump_spacetime(
    dir: &Path,
    name: &str,
    field: &SpaceTimeField,
    seed: Option<u64>,
    params: serde_json::Value,
) -> Result<PathBuf> {
    let mut m = FieldManifest::spacetime(name, field.grid(), field.time()).with_params(params);
    m.seed = seed;
    write_dump(dir, &m, field.values())
}

/// A dump read back as whichever field type its manifest describes.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedField {
    Scalar(ScalarField),
    SpaceTime(SpaceTimeField),
}

impl LoadedField {
    pub fn values(&self) -> &[f64] {
        match self {
            Self::Scalar(f) => f.values(),
            Self::SpaceTime(f) => f.values(),
        }
    }
}

pub fn load_field(manifest: &Path) -> Result<(FieldManifest, LoadedField)> {
    let (m, values) = read_dump(manifest)?;
    let grid = Grid2D::new(m.nx, m.ny)?;
    let field = match m.nt {
        Some(nt) => {
            let time = TimeGrid::new(nt, m.t_final.unwrap_or(1.0))?;
            LoadedField::SpaceTime(SpaceTimeField::from_values(grid, time, values)?)
        }
        None => LoadedField::Scalar(ScalarField::new(grid, values)?),
    };
    Ok((m, field))
}

/// CSV with header `x,y,value`, rows in `[y][x]` order.
pub fn write_slice_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let mut out = String::from("x,y,value\n");
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            out.push_str(&format!("{},{},{}\n", g.x(i), g.y(j), field.at(i, j)));
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
