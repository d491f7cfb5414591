//! Artifact files. Each file has exactly one writer; nothing here depends
//! on wall-clock time or thread count, so identical inputs give identical
//! bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sllg_core::bubble::BlowupEvent;
use sllg_core::field::write_snapshot;
use sllg_core::{TrajectoryRecord, VectorField3};

use crate::config::SimConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Manifest<'a, D: Serialize> {
    version: &'static str,
    command: &'a str,
    config: &'a SimConfig,
    derived: &'a D,
}

#[derive(Serialize)]
pub struct SeriesRow<'a> {
    pub traj_id: u64,
    pub t: f64,
    pub quantity: &'a str,
    pub value: f64,
}

pub struct Artifacts {
    dir: PathBuf,
    csv: bool,
    json: bool,
    snapshots: bool,
}

impl Artifacts {
    pub fn create(cfg: &SimConfig) -> Result<Self, CliError> {
        Self::create_in(&cfg.output.dir, cfg)
    }

    pub fn create_in(dir: &Path, cfg: &SimConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv: cfg.wants("csv"),
            json: cfg.wants("json"),
            snapshots: cfg.output.snapshots,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The resolved configuration plus run-derived constants.
    pub fn manifest<D: Serialize>(&self, command: &str, cfg: &SimConfig, derived: &D) -> Result<(), CliError> {
        let m = Manifest {
            version: VERSION,
            command,
            config: cfg,
            derived,
        };
        self.json_file("manifest.json", &m)
    }

    pub fn verdicts<V: Serialize>(&self, verdicts: &V) -> Result<(), CliError> {
        if self.json {
            self.json_file("verdicts.json", verdicts)?;
        }
        Ok(())
    }

    /// Long-format `traj_id,t,quantity,value`.
    pub fn series<'a>(&self, rows: impl IntoIterator<Item = SeriesRow<'a>>) -> Result<(), CliError> {
        if !self.csv {
            return Ok(());
        }
        let mut w = csv::Writer::from_path(self.dir.join("series.csv"))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Any serialisable row type as a CSV file with a header.
    pub fn table<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<(), CliError> {
        if !self.csv {
            return Ok(());
        }
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per bubbling event. Always written, possibly empty.
    pub fn ledger<'a>(&self, events: impl IntoIterator<Item = &'a BlowupEvent>) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(self.dir.join("ledger.jsonl"))?);
        for e in events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn snapshot(&self, name: &str, u: &VectorField3) -> Result<(), CliError> {
        if !self.snapshots {
            return Ok(());
        }
        let dir = self.dir.join("snapshots");
        fs::create_dir_all(&dir)?;
        let w = BufWriter::new(File::create(dir.join(format!("{name}.bin")))?);
        let [a, b, c] = u.components();
        write_snapshot(w, &[a, b, c]).map_err(|e| CliError::Internal(e.to_string()))
    }

    fn json_file<V: Serialize>(&self, name: &str, v: &V) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut w, v)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Per-sample scalars of one trajectory, in a fixed quantity order.
pub fn record_rows<'a>(traj_id: u64, record: &'a TrajectoryRecord, c_phi: f64) -> Vec<SeriesRow<'a>> {
    let e0 = record.initial.energy;
    let mut rows = Vec::new();
    for s in record.all_samples() {
        let mut push = |quantity: &'a str, value: f64| {
            rows.push(SeriesRow {
                traj_id,
                t: s.t,
                quantity,
                value,
            })
        };
        push("energy", s.energy);
        push("tension_sq", s.tension_sq);
        push("tension_integral", s.tension_integral);
        push("martingale", s.energy - e0 + s.tension_integral - c_phi * s.t);
        push("qv", s.qv);
        push("gain", s.energy - c_phi * s.t);
        push("grad_sq_integral", s.grad_sq_integral);
        push("grad_l4_4", s.grad_l4_4);
        push("hessian_sq", s.hessian_sq);
        push("sphere_deviation", s.sphere_deviation);
        for (name, v) in record.extra_names.iter().zip(&s.extras) {
            push(name, *v);
        }
    }
    rows
}
