//! Plot-ready CSV files. The first line of each file is a comment naming
//! the schema, its version and the columns, e.g.
//! `# swarm-mesh dmin_dorigin v1: set,index,tick,t,d_min,d_origin`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::compute_dmin_dorigin;
use super::compute_makespan;
use crate::runtime::EpisodeTrace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

impl CsvSchema {
    pub const MAKESPANS: CsvSchema = CsvSchema {
        name: "makespans",
        version: 1,
        columns: &["set", "index", "repetition", "episode", "makespan"],
    };
    pub const POSITIONS: CsvSchema = CsvSchema {
        name: "positions",
        version: 1,
        columns: &["set", "index", "tick", "agent", "x", "y"],
    };
    pub const DMIN_DORIGIN: CsvSchema = CsvSchema {
        name: "dmin_dorigin",
        version: 1,
        columns: &["set", "index", "tick", "t", "d_min", "d_origin"],
    };
    pub const CDF: CsvSchema = CsvSchema {
        name: "cdf",
        version: 1,
        columns: &["delay_ms", "fraction"],
    };

    pub fn header(&self) -> String {
        format!(
            "# swarm-mesh {} v{}: {}\n{}\n",
            self.name,
            self.version,
            self.columns.join(","),
            self.columns.join(",")
        )
    }
}

struct Csv {
    path: std::path::PathBuf,
    w: BufWriter<File>,
}

impl Csv {
    fn create(path: &Path, schema: &CsvSchema) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut csv = Self {
            path: path.to_path_buf(),
            w: BufWriter::new(file),
        };
        csv.raw(&schema.header())?;
        Ok(csv)
    }

    fn raw(&mut self, s: &str) -> Result<()> {
        self.w.write_all(s.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        let line = fields.join(",") + "\n";
        self.raw(&line)
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes `makespans.csv`, `positions.csv` and `dmin_dorigin.csv` into
/// `dir` for one or more labelled trace sets.
pub fn write_distributions(dir: &Path, sets: &[(&str, &[EpisodeTrace])]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut mk = Csv::create(&dir.join("makespans.csv"), &CsvSchema::MAKESPANS)?;
    let mut pos = Csv::create(&dir.join("positions.csv"), &CsvSchema::POSITIONS)?;
    let mut dd = Csv::create(&dir.join("dmin_dorigin.csv"), &CsvSchema::DMIN_DORIGIN)?;
    for (label, traces) in sets {
        for tr in traces.iter() {
            let h = &tr.header;
            if let Some(m) = compute_makespan(tr, h.world.thresholds.goal)? {
                mk.row(&[
                    label.to_string(),
                    h.index.to_string(),
                    h.repetition.to_string(),
                    h.episode.to_string(),
                    m.to_string(),
                ])?;
            }
            for tick in &tr.ticks {
                for a in &tick.agents {
                    pos.row(&[
                        label.to_string(),
                        h.index.to_string(),
                        tick.tick.to_string(),
                        a.agent.to_string(),
                        a.p[0].to_string(),
                        a.p[1].to_string(),
                    ])?;
                }
            }
            if h.agents.len() >= 2 {
                for (tick, (d_min, d_origin)) in tr.ticks.iter().zip(compute_dmin_dorigin(tr)?) {
                    dd.row(&[
                        label.to_string(),
                        h.index.to_string(),
                        tick.tick.to_string(),
                        tick.t.to_string(),
                        d_min.to_string(),
                        d_origin.to_string(),
                    ])?;
                }
            }
        }
    }
    mk.finish()?;
    pos.finish()?;
    dd.finish()
}

/// Writes a latency CDF as `(delay_ms, fraction)` rows.
pub fn write_cdf_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut csv = Csv::create(path, &CsvSchema::CDF)?;
    for (d, f) in points {
        csv.row(&[d.to_string(), f.to_string()])?;
    }
    csv.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_names_schema_and_columns() {
        let h = CsvSchema::DMIN_DORIGIN.header();
        let mut lines = h.lines();
        assert_eq!(
            lines.next().unwrap(),
            "# swarm-mesh dmin_dorigin v1: set,index,tick,t,d_min,d_origin"
        );
        assert_eq!(lines.next().unwrap(), "set,index,tick,t,d_min,d_origin");
    }

    #[test]
    fn cdf_file_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cdf_ideal_10.csv");
        write_cdf_csv(&p, &[(0.0, 1.0), (0.5, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.ends_with("delay_ms,fraction\n0,1\n0.5,1\n"));
    }
}
