//! CSV and SVG emission for sweep results.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::plot::{line_plot, Series};
use crate::harness::sweep::{seed_average, BoundRow, SweepResult};
use crate::metrics::TrialRecord;
use crate::neighbours::Dataset;

pub const RECORD_COLUMNS: [&str; 11] = [
    "n",
    "d",
    "m",
    "l_hat",
    "kernel_gen",
    "kernel_model",
    "seed",
    "mse",
    "cal",
    "nll",
    "wall_time_s",
];
pub const FIT_COLUMNS: [&str; 11] = [
    "d",
    "l_hat",
    "kernel_gen",
    "kernel_model",
    "slope",
    "intercept",
    "r_squared",
    "floor_used",
    "points",
    "reference_slope",
    "status",
];
pub const BOUND_COLUMNS: [&str; 14] = [
    "d",
    "l_hat",
    "kernel_gen",
    "kernel_model",
    "n",
    "m",
    "c_gen",
    "p_gen",
    "c_model",
    "p_model",
    "floor",
    "mse_bound",
    "cal_lower",
    "cal_upper",
];
pub const FAILURE_COLUMNS: [&str; 7] = [
    "n",
    "d",
    "l_hat",
    "kernel_gen",
    "kernel_model",
    "seed",
    "error",
];

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, Serialize)]
pub struct Emitted {
    pub records: PathBuf,
    pub fits: PathBuf,
    pub bounds: PathBuf,
    pub failures: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

/// Writes rows under an explicit header, so empty tables still carry one.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Records CSV, header included, to any sink.
pub fn write_records_to<W: Write>(sink: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(sink);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<stream>", e))
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_csv(path, &RECORD_COLUMNS, records)
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_COLUMNS {
        return Err(Error::Config(format!(
            "{} does not have the records header {}",
            path.display(),
            RECORD_COLUMNS.join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Writes a dataset as `x_1..x_d[,f],y`.
pub fn export_dataset(path: &Path, data: &Dataset, latent: Option<&[f64]>) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|k| format!("x_{k}")).collect();
    if latent.is_some() {
        header.push("f".into());
    }
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(f64::to_string).collect();
        if let Some(f) = latent {
            row.push(f[i].to_string());
        }
        row.push(data.targets()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn log_points(points: impl Iterator<Item = (usize, f64)>) -> Vec<(f64, f64)> {
    points
        .filter(|(_, e)| *e > 0.0)
        .map(|(n, e)| ((n as f64).log10(), e.log10()))
        .collect()
}

/// Log-log excess-MSE plot for one `(d, kernel pair)`: an empirical and a
/// bound curve per model lengthscale, and the reference slope dashed.
pub fn pair_plot(result: &SweepResult, d: usize, kernel_model: &str) -> Option<String> {
    let fits: Vec<_> = result
        .fits
        .iter()
        .filter(|f| f.d == d && f.kernel_model == kernel_model)
        .collect();
    let first = fits.first()?;
    let mut series = Vec::new();
    let mut anchor = None;
    for (i, fit) in fits.iter().enumerate() {
        let l_hat = fit.l_hat;
        let colour = PALETTE[i % PALETTE.len()];
        let bounds: Vec<&BoundRow> = result
            .bounds
            .iter()
            .filter(|b| b.d == d && b.kernel_model == kernel_model && b.l_hat == l_hat)
            .collect();
        let floor = |n: usize| {
            bounds
                .iter()
                .find(|b| b.n == n)
                .map_or(fit.floor_used, |b| b.floor)
        };
        let empirical = log_points(
            seed_average(&result.records, d, kernel_model, l_hat, |r| r.mse)
                .into_iter()
                .map(|(n, mse)| (n, mse - floor(n))),
        );
        if anchor.is_none() {
            if let (Some(&a), Some(&b)) = (empirical.first(), empirical.last()) {
                anchor = Some((a, b.0, fit.reference_slope));
            }
        }
        let suffix = if fits.len() > 1 {
            format!(" l_hat={l_hat}")
        } else {
            String::new()
        };
        series.push(Series {
            name: format!("empirical{suffix}"),
            points: empirical,
            colour,
            dashed: false,
        });
        let bound_pts = log_points(bounds.iter().map(|b| (b.n, b.mse_bound - b.floor)));
        if !bound_pts.is_empty() {
            series.push(Series {
                name: format!("bound{suffix}"),
                points: bound_pts,
                colour: "#d62728",
                dashed: false,
            });
        }
    }
    if let Some(((x0, y0), x1, slope)) = anchor {
        if slope.is_finite() && x1 > x0 {
            series.push(Series {
                name: format!("slope {slope:.3}"),
                points: vec![(x0, y0), (x1, y0 + slope * (x1 - x0))],
                colour: "#2ca02c",
                dashed: true,
            });
        }
    }
    if series.iter().all(|s| s.points.is_empty()) {
        return None;
    }
    let title = format!("d={d} {} -> {kernel_model}", first.kernel_gen);
    line_plot(&title, "log10 n", "log10 excess MSE", &series)
}

/// Writes records, fits, bounds and failures CSVs and one plot per cell.
pub fn emit_outputs(result: &SweepResult, dir: &Path, plots: bool) -> Result<Emitted> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Emitted {
        records: dir.join("records.csv"),
        fits: dir.join("fits.csv"),
        bounds: dir.join("bounds.csv"),
        failures: dir.join("failures.csv"),
        plots: Vec::new(),
    };
    write_records(&out.records, &result.records)?;
    write_csv(&out.fits, &FIT_COLUMNS, &result.fits)?;
    write_csv(&out.bounds, &BOUND_COLUMNS, &result.bounds)?;
    write_csv(&out.failures, &FAILURE_COLUMNS, &result.failures)?;
    let mut out = out;
    if plots {
        let pairs: BTreeSet<(usize, String, String)> = result
            .records
            .iter()
            .map(|r| (r.d, r.kernel_gen.clone(), r.kernel_model.clone()))
            .collect();
        for (d, gen, model) in pairs {
            if let Some(svg) = pair_plot(result, d, &model) {
                let path = dir.join(format!("plot_d{d}_{}_{}.svg", slug(&gen), slug(&model)));
                std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
                out.plots.push(path);
            }
        }
    }
    Ok(out)
}
