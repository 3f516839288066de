//! Frame geometry and per-iteration statistics output.
//!
//! Frames are Wavefront OBJ: surface triangles for tet meshes (extracted once
//! at load), the triangles themselves for shells, `l` records for edge nets.
//! Stats rows use the shortest round-trip float formatting, so replays are
//! byte-comparable.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{Element, ElementKind, Mesh};
use crate::stepper::IterationRecord;

pub const STATS_HEADER: &str =
    "step,iter,n3,n12,coarse_dof,active_ratio,pcg_iters,post_iters,energy,d_inf";

pub fn write_frame_obj<W: Write>(
    mut w: W,
    positions: &[Vec3],
    surface: &[[usize; 3]],
    mesh: &Mesh,
) -> std::io::Result<()> {
    for p in positions {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    match mesh.kind() {
        Some(ElementKind::Edge) => {
            for elem in &mesh.elements {
                if let Element::Edge([a, b]) = elem {
                    writeln!(w, "l {} {}", a + 1, b + 1)?;
                }
            }
        }
        _ => {
            for [a, b, c] in surface {
                writeln!(w, "f {} {} {}", a + 1, b + 1, c + 1)?;
            }
        }
    }
    Ok(())
}

pub fn stats_csv_string(records: &[IterationRecord]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.iter,
            r.n3,
            r.n12,
            r.coarse_dof,
            r.active_ratio,
            r.pcg_iters,
            r.post_iters,
            r.energy,
            r.d_inf
        ));
    }
    out
}

pub fn parse_stats_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == STATS_HEADER => {}
        other => {
            return Err(Error::MalformedCsv(format!(
                "bad header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::MalformedCsv(format!(
                "row {} has {} fields, expected 10",
                i + 2,
                fields.len()
            )));
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|e| Error::MalformedCsv(format!("row {}: {e}", i + 2)))
        };
        let parse_f64 = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| Error::MalformedCsv(format!("row {}: {e}", i + 2)))
        };
        records.push(IterationRecord {
            step: parse_usize(fields[0])?,
            iter: parse_usize(fields[1])?,
            n3: parse_usize(fields[2])?,
            n12: parse_usize(fields[3])?,
            coarse_dof: parse_usize(fields[4])?,
            active_ratio: parse_f64(fields[5])?,
            pcg_iters: parse_usize(fields[6])?,
            post_iters: parse_usize(fields[7])?,
            energy: parse_f64(fields[8])?,
            d_inf: parse_f64(fields[9])?,
        });
    }
    Ok(records)
}

/// Aggregate statistics in the per-iteration-averages layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsSummary {
    pub total_newton_iters: usize,
    /// Coarse plus post-coarsening PCG iterations.
    pub total_pcg_iters: usize,
    pub mean_n3: f64,
    pub mean_n12: f64,
    pub mean_coarse_dof: f64,
    pub mean_active_ratio: f64,
}

pub fn summarize(records: &[IterationRecord]) -> StatsSummary {
    let n = records.len();
    if n == 0 {
        return StatsSummary {
            total_newton_iters: 0,
            total_pcg_iters: 0,
            mean_n3: 0.0,
            mean_n12: 0.0,
            mean_coarse_dof: 0.0,
            mean_active_ratio: 0.0,
        };
    }
    let nf = n as f64;
    StatsSummary {
        total_newton_iters: n,
        total_pcg_iters: records.iter().map(|r| r.pcg_iters + r.post_iters).sum(),
        mean_n3: records.iter().map(|r| r.n3 as f64).sum::<f64>() / nf,
        mean_n12: records.iter().map(|r| r.n12 as f64).sum::<f64>() / nf,
        mean_coarse_dof: records.iter().map(|r| r.coarse_dof as f64).sum::<f64>() / nf,
        mean_active_ratio: records.iter().map(|r| r.active_ratio).sum::<f64>() / nf,
    }
}

impl std::fmt::Display for StatsSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "TotalNewtonIter   {}", self.total_newton_iters)?;
        writeln!(f, "TotalPCGIter      {}", self.total_pcg_iters)?;
        writeln!(f, "mean 3DoF node    {:.2}", self.mean_n3)?;
        writeln!(f, "mean 12DoF node   {:.2}", self.mean_n12)?;
        writeln!(f, "mean coarse DoF   {:.2}", self.mean_coarse_dof)?;
        writeln!(f, "mean active ratio {:.4}", self.mean_active_ratio)
    }
}

pub fn write_text_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
