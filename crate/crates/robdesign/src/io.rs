//! Design files and tabular outputs.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use robdesign_core::model::{Design, DesignSpace, ExactDesign};

/// Continuous or exact design together with its candidate points.
///
/// `weights` is present for continuous designs; `counts` holds `round(n ξ_i)`
/// for those and the replicate counts for exact designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl DesignFile {
    pub fn continuous(space: &DesignSpace, design: &Design, counts: Vec<usize>) -> Self {
        DesignFile {
            n: design.n(),
            points: space.points().to_vec(),
            weights: Some(design.weights().to_vec()),
            counts,
        }
    }

    pub fn exact(space: &DesignSpace, exact: &ExactDesign) -> Self {
        DesignFile {
            n: exact.n(),
            points: space.points().to_vec(),
            weights: None,
            counts: exact.counts().to_vec(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: DesignFile =
            serde_json::from_str(&text).with_context(|| format!("parsing design file {}", path.display()))?;
        ensure!(
            file.counts.len() == file.points.len(),
            "design file: one count per point required"
        );
        if let Some(w) = &file.weights {
            ensure!(
                w.len() == file.points.len(),
                "design file: one weight per point required"
            );
        }
        Ok(file)
    }

    pub fn space(&self) -> Result<DesignSpace> {
        Ok(DesignSpace::new(self.points.clone())?)
    }

    /// The continuous design, or the exact one read as proportions.
    pub fn design(&self) -> Result<Design> {
        match &self.weights {
            Some(w) => Ok(Design::new(w.clone(), self.n)?),
            None => Ok(self.exact_design()?.to_design()),
        }
    }

    pub fn exact_design(&self) -> Result<ExactDesign> {
        let exact = ExactDesign::new(self.counts.clone())?;
        ensure!(
            exact.n() == self.n,
            "design file: counts sum to {} but n is {}",
            exact.n(),
            self.n
        );
        Ok(exact)
    }

    pub fn is_exact(&self) -> bool {
        self.weights.is_none()
    }

    /// Fails unless the file was written for `space`.
    pub fn check_space(&self, space: &DesignSpace) -> Result<()> {
        ensure!(
            self.points.as_slice() == space.points(),
            "design file points do not match the configured design space"
        );
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn coordinate_headers(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["x".to_string()]
    } else {
        (1..=dim).map(|j| format!("x{j}")).collect()
    }
}

/// One row per point: `index, x…, <named columns…>`.
pub fn write_point_table(path: &Path, space: &DesignSpace, columns: &[(&str, Vec<String>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["index".to_string()];
    header.extend(coordinate_headers(space.dim()));
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for (i, x) in space.points().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.extend(columns.iter().map(|(_, vals)| vals[i].clone()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmt_all<T: ToString>(values: &[T]) -> Vec<String> {
    values.iter().map(T::to_string).collect()
}
