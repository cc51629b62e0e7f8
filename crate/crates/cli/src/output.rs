//! Atomic file output and the CSV layouts.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use selfstab_core::exitlab::{ExitRecord, KramersPoint};
use selfstab_core::flow::PathSample;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temp file in the target directory, renamed into place
    /// once complete.
    pub fn write<F>(&self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.path(name);
        let dir = target.parent().unwrap_or(&self.root);
        std::fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)
            .with_context(|| format!("cannot create temp file in {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.persist(&target)
            .with_context(|| format!("cannot write {}", target.display()))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

/// `foo.csv` + `bar` → `foo_bar.csv`.
pub fn with_suffix(name: &str, suffix: &str) -> String {
    let p = Path::new(name);
    match (p.file_stem(), p.extension()) {
        (Some(stem), Some(ext)) => {
            let file = format!("{}_{suffix}.{}", stem.to_string_lossy(), ext.to_string_lossy());
            p.with_file_name(file).to_string_lossy().into_owned()
        }
        _ => format!("{name}_{suffix}"),
    }
}

/// Sidecar name for the resolved config of a run writing `output`.
pub fn sidecar_name(output: &str) -> String {
    let p = Path::new(output);
    let stem = p
        .file_stem()
        .map_or_else(|| output.to_string(), |s| s.to_string_lossy().into_owned());
    p.with_file_name(format!("{stem}.resolved.toml"))
        .to_string_lossy()
        .into_owned()
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::WriterBuilder::new().from_writer(w)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// `trial,particle,time_index,t,x1..xd`.
pub fn write_paths(w: &mut dyn Write, paths: &[(u64, u64, &PathSample)]) -> Result<()> {
    let d = paths.first().map_or(0, |p| p.2.dim());
    let mut out = csv_writer(w);
    let mut header = vec!["trial".to_string(), "particle".into(), "time_index".into(), "t".into()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    for (trial, particle, path) in paths {
        for k in 0..path.len() {
            let mut row = vec![
                trial.to_string(),
                particle.to_string(),
                k.to_string(),
                num(path.time(k)),
            ];
            row.extend(path.state(k).iter().map(|v| num(*v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `trial,seed,exit_time,exit_x1..exit_xd,boundary_param,censored`.
pub fn write_exit_records(w: &mut dyn Write, dim: usize, records: &[ExitRecord]) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["trial".to_string(), "seed".into(), "exit_time".into()];
    header.extend((1..=dim).map(|i| format!("exit_x{i}")));
    header.extend(["boundary_param".into(), "censored".into()]);
    out.write_record(&header)?;
    for r in records {
        let mut row = vec![r.trial.to_string(), r.seed.to_string(), num(r.exit_time)];
        row.extend(r.exit_point.iter().map(|v| num(*v)));
        row.push(num(r.boundary_param));
        row.push(r.censored.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub const KRAMERS_HEADER: [&str; 6] = [
    "epsilon",
    "n_trials",
    "n_censored",
    "mean_exit_time",
    "stderr",
    "eps_log_mean",
];

pub fn write_kramers(w: &mut dyn Write, points: &[KramersPoint]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(KRAMERS_HEADER)?;
    for p in points {
        out.write_record([
            num(p.epsilon),
            p.n_trials.to_string(),
            p.n_censored.to_string(),
            num(p.mean_exit_time),
            num(p.stderr),
            num(p.eps_log_mean()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_kramers(path: &Path) -> Result<Vec<KramersPoint>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != KRAMERS_HEADER {
        anyhow::bail!(
            "{}: expected header {}, got {}",
            path.display(),
            KRAMERS_HEADER.join(","),
            header.join(",")
        );
    }
    let mut points = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let f = |k: usize| -> Result<f64> {
            row[k]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("row {}: bad {}", i + 1, KRAMERS_HEADER[k]))
        };
        points.push(KramersPoint {
            epsilon: f(0)?,
            n_trials: f(1)? as usize,
            n_censored: f(2)? as usize,
            mean_exit_time: f(3)?,
            stderr: f(4)?,
        });
    }
    Ok(points)
}
