//! Run exports. All numbers are written with 17 significant digits.
//!
//! | file                | content                                              |
//! |---------------------|------------------------------------------------------|
//! | `mesh.txt`          | mesh with electrode labels (see [`crate::mesh::write_mesh`]) |
//! | `sigma_true.field`  | `element_index value` per line, `# mesh mesh.txt` header |
//! | `sigma_final.field` | same format, reconstructed conductivity              |
//! | `voltages.csv`      | `electrode,U_ini,U_star,U_end`                       |
//! | `measurements.txt`  | [`MeasurementSet`] text format                       |
//! | `history.csv`       | per-iteration log                                    |
//! | `metrics.json`      | [`Metrics`]                                          |
//! | `stage1.json`       | [`Stage1Summary`]                                    |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Metrics, Scenario, Stage1Result, Stage2Result};
use crate::electrode_model::{MeasurementSet, VoltageFit};
use crate::error::{check_len, Error, Result};
use crate::fem::{ConductivityField, Discretization};
use crate::gpm::write_history;
use crate::mesh::write_mesh;

pub const MESH_FILE: &str = "mesh.txt";
pub const SIGMA_TRUE_FILE: &str = "sigma_true.field";
pub const SIGMA_FINAL_FILE: &str = "sigma_final.field";
pub const VOLTAGES_FILE: &str = "voltages.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const STAGE1_FILE: &str = "stage1.json";

pub fn write_field<W: Write>(mut w: W, values: &[f64], mesh_file: &str) -> Result<()> {
    writeln!(w, "# mesh {mesh_file}")?;
    for (e, v) in values.iter().enumerate() {
        writeln!(w, "{e} {v:.16e}")?;
    }
    Ok(())
}

/// Reads a field file; indices must run `0..n` in order.
pub fn read_field<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(i), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("bad field record {line:?}")));
        };
        if i.parse::<usize>().ok() != Some(values.len()) {
            return Err(Error::Parse(format!("field index {i} out of sequence")));
        }
        values.push(v.parse().map_err(|_| Error::Parse(format!("bad field value {v:?}")))?);
    }
    Ok(values)
}

pub fn write_voltages<W: Write>(mut w: W, u_ini: &[f64], u_star: &[f64], u_end: &[f64]) -> Result<()> {
    check_len("U*", u_ini.len(), u_star.len())?;
    check_len("U_end", u_ini.len(), u_end.len())?;
    writeln!(w, "electrode,U_ini,U_star,U_end")?;
    for l in 0..u_ini.len() {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e}", l + 1, u_ini[l], u_star[l], u_end[l])?;
    }
    Ok(())
}

/// Returns the `U_ini`, `U_star` and `U_end` columns.
pub fn read_voltages<R: BufRead>(r: R) -> Result<[Vec<f64>; 3]> {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("voltage record {line:?} needs 4 fields")));
        }
        for (c, f) in cols.iter_mut().zip(&fields[1..]) {
            c.push(f.trim().parse().map_err(|_| Error::Parse(format!("bad voltage {f:?}")))?);
        }
    }
    Ok(cols)
}

/// Stage-1 output needed to run stage 2 separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub u_star: Vec<f64>,
    pub residual: f64,
    pub relative_residual: f64,
    pub rank: usize,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    File::open(dir.join(name))
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.join(name).display())))
}

pub fn write_mesh_file(dir: &Path, disc: &Discretization) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let labels = disc.layout().labels(disc.mesh().num_facets());
    let mut w = create(dir, MESH_FILE)?;
    write_mesh(&mut w, disc.mesh(), &labels)?;
    w.flush()?;
    Ok(())
}

pub fn write_stage1(dir: &Path, scenario: &Scenario, stage1: &Stage1Result) -> Result<()> {
    write_mesh_file(dir, &scenario.disc)?;
    let mut w = create(dir, SIGMA_TRUE_FILE)?;
    write_field(&mut w, stage1.sigma_true.values(), MESH_FILE)?;
    w.flush()?;
    let summary = Stage1Summary {
        u_star: stage1.fit.voltages.clone(),
        residual: stage1.fit.residual,
        relative_residual: stage1.fit.relative_residual,
        rank: stage1.fit.rank,
    };
    let mut w = create(dir, STAGE1_FILE)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads stage-1 outputs written by [`write_stage1`] for the same scenario.
pub fn read_stage1(dir: &Path, scenario: &Scenario) -> Result<Stage1Result> {
    let summary: Stage1Summary =
        serde_json::from_reader(open(dir, STAGE1_FILE)?).map_err(|e| Error::Parse(e.to_string()))?;
    check_len("U*", scenario.disc.num_electrodes(), summary.u_star.len())?;
    let sigma = read_field(open(dir, SIGMA_TRUE_FILE)?)?;
    check_len("true conductivity", scenario.disc.num_elements(), sigma.len())?;
    Ok(Stage1Result {
        sigma_true: ConductivityField::new(sigma, scenario.bounds)?,
        fit: VoltageFit {
            voltages: summary.u_star,
            residual: summary.residual,
            relative_residual: summary.relative_residual,
            rank: summary.rank,
        },
    })
}

pub fn write_stage2(dir: &Path, scenario: &Scenario, stage1: &Stage1Result, stage2: &Stage2Result) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if !dir.join(MESH_FILE).exists() {
        write_mesh_file(dir, &scenario.disc)?;
    }
    let state = &stage2.outcome.state;

    let mut w = create(dir, SIGMA_FINAL_FILE)?;
    write_field(&mut w, state.sigma.values(), MESH_FILE)?;
    w.flush()?;

    let mut w = create(dir, VOLTAGES_FILE)?;
    write_voltages(&mut w, &stage2.initial_voltages, stage1.u_star(), &state.voltages)?;
    w.flush()?;

    let mut w = create(dir, MEASUREMENTS_FILE)?;
    stage2.measurements.write(&mut w)?;
    w.flush()?;

    let mut w = create(dir, HISTORY_FILE)?;
    write_history(&mut w, &stage2.outcome.history, scenario.config.output.record_wall_time)?;
    w.flush()?;

    write_metrics(dir, &stage2.metrics)
}

pub fn write_metrics(dir: &Path, metrics: &Metrics) -> Result<()> {
    let mut w = create(dir, METRICS_FILE)?;
    serde_json::to_writer_pretty(&mut w, metrics).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_metrics(dir: &Path) -> Result<Metrics> {
    serde_json::from_reader(open(dir, METRICS_FILE)?).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_measurements(dir: &Path) -> Result<MeasurementSet> {
    MeasurementSet::read(open(dir, MEASUREMENTS_FILE)?)
}

/// Final conductivity and voltages of a previous run in `dir`.
pub fn read_endpoint(dir: &Path, disc: &Discretization) -> Result<(Vec<f64>, Vec<f64>)> {
    let sigma = read_field(open(dir, SIGMA_FINAL_FILE)?)?;
    check_len("warm-start conductivity", disc.num_elements(), sigma.len())?;
    let [_, _, u_end] = read_voltages(open(dir, VOLTAGES_FILE)?)?;
    check_len("warm-start voltages", disc.num_electrodes(), u_end.len())?;
    Ok((sigma, u_end))
}
