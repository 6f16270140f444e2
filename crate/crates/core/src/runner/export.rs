//! Output directory layout:
//!
//! ```text
//! rf_scores.csv            dataset,n,p,n_classes,n_estimators,max_depth,cv_weighted_f1,test_accuracy,test_weighted_f1,error
//! kc_by_metric.csv         dataset,representation,metric,n_classes,k_c,k_c_raw,abs_diff
//! clustering_accuracy.csv  dataset,n_classes,<one column per representation>
//! correlations.csv         metric,representation,r,std,n_datasets,note   (values at K = class count)
//! correlations_at_kc.csv   same columns, values at each metric's selected K
//! scores.csv               dataset,representation,k,metric,value
//! cells.csv                dataset,representation,status,n_points,seed,error
//! scatter/<ds>_<rep>.csv   id,x,y,label
//! embedding/<ds>.csv       id,dim_1..dim_m,label
//! stress/<ds>.csv          dim,stress
//! assignments/<ds>_<rep>.csv  id,k,cluster
//! manifest.json            seeds, resolved config and per-cell parameters
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{CorrelationEntry, RunReport};
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Top-level files every export contains.
pub const ARTIFACTS: [&str; 8] = [
    "rf_scores.csv",
    "kc_by_metric.csv",
    "clustering_accuracy.csv",
    "correlations.csv",
    "correlations_at_kc.csv",
    "scores.csv",
    "cells.csv",
    "manifest.json",
];

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn csv(&self, rel: &str) -> Result<(PathBuf, csv::Writer<fs::File>)> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, csv::Writer::from_writer(file)))
    }

    fn finish(&self, (path, mut w): (PathBuf, csv::Writer<fs::File>)) -> Result<()> {
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn export_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Out { dir: dir.to_path_buf() };
    write_rf_scores(&out, report)?;
    write_kc(&out, report)?;
    write_accuracy(&out, report)?;
    write_correlations(&out, "correlations.csv", &report.correlations)?;
    write_correlations(&out, "correlations_at_kc.csv", &report.correlations_at_k_c)?;
    write_scores(&out, report)?;
    write_cells(&out, report)?;
    write_points(&out, report)?;
    write_manifest(dir, report)
}

fn write_rf_scores(out: &Out, report: &RunReport) -> Result<()> {
    let (p, mut w) = out.csv("rf_scores.csv")?;
    w.write_record([
        "dataset",
        "n",
        "p",
        "n_classes",
        "n_estimators",
        "max_depth",
        "cv_weighted_f1",
        "test_accuracy",
        "test_weighted_f1",
        "error",
    ])?;
    for d in &report.datasets {
        let error = d.error.clone().or_else(|| d.rf_error.clone()).unwrap_or_default();
        match &d.rf {
            Some(rf) => w.write_record([
                d.name.clone(),
                d.n.to_string(),
                d.p.to_string(),
                d.n_classes.to_string(),
                rf.best.n_estimators.to_string(),
                rf.best.max_depth.map_or("none".into(), |v| v.to_string()),
                fmt(rf.cv_weighted_f1),
                fmt(rf.test_accuracy),
                fmt(rf.test_weighted_f1),
                error,
            ])?,
            None => w.write_record([
                d.name.clone(),
                d.n.to_string(),
                d.p.to_string(),
                d.n_classes.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                error,
            ])?,
        }
    }
    out.finish((p, w))
}

fn write_kc(out: &Out, report: &RunReport) -> Result<()> {
    let (p, mut w) = out.csv("kc_by_metric.csv")?;
    w.write_record(["dataset", "representation", "metric", "n_classes", "k_c", "k_c_raw", "abs_diff"])?;
    for d in &report.datasets {
        for c in d.cells.iter().filter(|c| c.is_ok()) {
            for (m, k) in &c.k_c {
                w.write_record([
                    d.name.clone(),
                    c.representation.to_string(),
                    m.to_string(),
                    d.n_classes.to_string(),
                    k.to_string(),
                    c.k_c_raw[m].to_string(),
                    c.k_c_abs_diff[m].to_string(),
                ])?;
            }
        }
    }
    out.finish((p, w))
}

fn write_accuracy(out: &Out, report: &RunReport) -> Result<()> {
    let (p, mut w) = out.csv("clustering_accuracy.csv")?;
    let mut header = vec!["dataset".to_string(), "n_classes".to_string()];
    header.extend(report.representations.iter().map(|r| r.to_string()));
    w.write_record(&header)?;
    for d in &report.datasets {
        let mut row = vec![d.name.clone(), d.n_classes.to_string()];
        for &r in &report.representations {
            row.push(opt(d.cell(r).and_then(|c| c.accuracy_at_class_count)));
        }
        w.write_record(&row)?;
    }
    out.finish((p, w))
}

fn write_correlations(out: &Out, name: &str, entries: &[CorrelationEntry]) -> Result<()> {
    let (p, mut w) = out.csv(name)?;
    w.write_record(["metric", "representation", "r", "std", "n_datasets", "note"])?;
    for e in entries {
        w.write_record([
            e.metric.to_string(),
            e.representation.to_string(),
            opt(e.r),
            opt(e.std),
            e.n_datasets.to_string(),
            e.note.clone().unwrap_or_default(),
        ])?;
    }
    out.finish((p, w))
}

fn write_scores(out: &Out, report: &RunReport) -> Result<()> {
    let (p, mut w) = out.csv("scores.csv")?;
    w.write_record(["dataset", "representation", "k", "metric", "value"])?;
    for d in &report.datasets {
        for c in d.cells.iter().filter(|c| c.is_ok()) {
            for m in Metric::ALL {
                for &k in &c.scores.ks {
                    if let Some(v) = c.scores.get(m, k) {
                        w.write_record([d.name.clone(), c.representation.to_string(), k.to_string(), m.to_string(), fmt(v)])?;
                    }
                }
            }
        }
    }
    out.finish((p, w))
}

fn write_cells(out: &Out, report: &RunReport) -> Result<()> {
    let (p, mut w) = out.csv("cells.csv")?;
    w.write_record(["dataset", "representation", "status", "n_points", "seed", "error"])?;
    for d in &report.datasets {
        for c in &d.cells {
            w.write_record([
                d.name.clone(),
                c.representation.to_string(),
                if c.is_ok() { "ok" } else { "failed" }.to_string(),
                c.n_points.to_string(),
                c.seed.to_string(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    out.finish((p, w))
}

fn write_points(out: &Out, report: &RunReport) -> Result<()> {
    for d in &report.datasets {
        let stem = file_stem(&d.name);
        let label = |row: usize| d.class_names[d.labels[row]].clone();
        for c in d.cells.iter().filter(|c| c.is_ok()) {
            let rep = c.representation;
            if let Some((rows, xy)) = &c.scatter {
                let (p, mut w) = out.csv(&format!("scatter/{stem}_{rep}.csv"))?;
                w.write_record(["id", "x", "y", "label"])?;
                for (i, &r) in rows.iter().enumerate() {
                    w.write_record([r.to_string(), fmt(xy[[i, 0]]), fmt(xy[[i, 1]]), label(r)])?;
                }
                out.finish((p, w))?;
                if let Some(coords) = &c.embedding_coords {
                    let (p, mut w) = out.csv(&format!("embedding/{stem}.csv"))?;
                    let mut header = vec!["id".to_string()];
                    header.extend((1..=coords.ncols()).map(|j| format!("dim_{j}")));
                    header.push("label".into());
                    w.write_record(&header)?;
                    for (i, &r) in rows.iter().enumerate() {
                        let mut rec = vec![r.to_string()];
                        rec.extend(coords.row(i).iter().map(|&v| fmt(v)));
                        rec.push(label(r));
                        w.write_record(&rec)?;
                    }
                    out.finish((p, w))?;
                }
            }
            if let Some(e) = &c.embedding {
                let (p, mut w) = out.csv(&format!("stress/{stem}.csv"))?;
                w.write_record(["dim", "stress"])?;
                for &(m, s) in &e.stress_by_dim {
                    w.write_record([m.to_string(), fmt(s)])?;
                }
                out.finish((p, w))?;
            }
            if !c.assignments.is_empty() {
                let (p, mut w) = out.csv(&format!("assignments/{stem}_{rep}.csv"))?;
                w.write_record(["id", "k", "cluster"])?;
                for (k, assign) in &c.assignments {
                    let k = k.to_string();
                    for (i, a) in assign.iter().enumerate() {
                        w.write_record([i.to_string(), k.clone(), a.to_string()])?;
                    }
                }
                out.finish((p, w))?;
            }
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, report: &RunReport) -> Result<()> {
    let datasets: Vec<_> = report
        .datasets
        .iter()
        .map(|d| {
            let cells: Vec<_> = d
                .cells
                .iter()
                .map(|c| {
                    json!({
                        "representation": c.representation,
                        "status": if c.is_ok() { "ok" } else { "failed" },
                        "error": c.error,
                        "seed": c.seed,
                        "preprocessing": c.preprocessing,
                        "n_points": c.n_points,
                        "k_range": [c.scores.ks.first(), c.scores.ks.last()],
                        "embedding": c.embedding,
                        "mmc": c.mmc,
                    })
                })
                .collect();
            json!({
                "name": d.name,
                "seed": d.seed,
                "error": d.error,
                "n": d.n,
                "p": d.p,
                "n_classes": d.n_classes,
                "class_names": d.class_names,
                "rf": d.rf.as_ref().map(|rf| json!({
                    "best": rf.best,
                    "n_train": rf.n_train,
                    "n_test": rf.n_test,
                    "grid": rf.cv_scores,
                })),
                "rf_error": d.rf_error,
                "cells": cells,
            })
        })
        .collect();
    let manifest = json!({
        "format": "catclust-run",
        "version": 1,
        "seed": report.seed,
        "config": report.config,
        "representations": report.representations,
        "accuracy_k": "number of classes",
        "correlation_target": "forest test weighted F1",
        "datasets": datasets,
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Human-readable summary of an exported run directory.
pub fn summarize_run_dir(dir: &Path) -> Result<String> {
    let mut s = String::new();
    for name in ["rf_scores.csv", "clustering_accuracy.csv", "correlations.csv"] {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::InvalidInput(format!("{} is not a run directory: {name} missing", dir.display())));
        }
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows: Vec<Vec<String>> = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(shorten(cell).len());
            }
        }
        s.push_str(&format!("== {name}\n"));
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{:<w$}", shorten(c), w = *w))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        s.push_str(&line(&header));
        s.push('\n');
        for row in &rows {
            s.push_str(&line(row));
            s.push('\n');
        }
        s.push('\n');
    }
    Ok(s)
}

/// Numbers to four decimals for display; everything else as is.
fn shorten(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') || cell.contains('e') => format!("{v:.4}"),
        _ => cell.to_string(),
    }
}
