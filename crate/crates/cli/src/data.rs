//! CSV datasets: header `x1,…,xd,y[,omega]`, UTF-8, '.' decimals.

use std::path::Path;

use rescaled_gp::gp::Dataset;
use rescaled_gp::Points;
use serde::{Deserialize, Serialize};

use crate::config::Preprocess;
use crate::error::{CliError, CliResult};

/// Parsed CSV contents before any preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub x: Points,
    pub y: Option<Vec<f64>>,
    /// Value of the omega column, which must be constant when present.
    pub omega: Option<f64>,
}

fn cfg_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.display()))
}

/// Reads a table whose header is x1..xd followed by optional y and omega.
pub fn read_table(path: &Path, require_y: bool) -> CliResult<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
            _ => cfg_err(path, e),
        })?;
    let headers = rdr.headers().map_err(|e| cfg_err(path, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let d = names
        .iter()
        .take_while(|n| n.starts_with('x') && n[1..].parse::<usize>().is_ok())
        .count();
    for (i, n) in names[..d].iter().enumerate() {
        if *n != format!("x{}", i + 1) {
            return Err(cfg_err(
                path,
                format!("header column {} must be x{}, found {n}", i + 1, i + 1),
            ));
        }
    }
    if d == 0 {
        return Err(cfg_err(path, "header must start with x1"));
    }
    let rest = &names[d..];
    let (has_y, has_omega) = match rest {
        [] => (false, false),
        ["y"] => (true, false),
        ["y", "omega"] => (true, true),
        _ => {
            return Err(cfg_err(
                path,
                format!("after x1..x{d} the header may only contain y and then omega, found {rest:?}"),
            ))
        }
    };
    if require_y && !has_y {
        return Err(cfg_err(path, "a y column is required"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut omega: Option<f64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| cfg_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() {
            return Err(cfg_err(
                path,
                format!("line {line}: expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let parse = |k: usize| -> CliResult<f64> {
            let v: f64 = rec[k].parse().map_err(|_| {
                cfg_err(
                    path,
                    format!("line {line}, column {}: cannot parse {:?}", names[k], &rec[k]),
                )
            })?;
            if !v.is_finite() {
                return Err(cfg_err(
                    path,
                    format!("line {line}, column {}: value is not finite", names[k]),
                ));
            }
            Ok(v)
        };
        for k in 0..d {
            xs.push(parse(k)?);
        }
        if has_y {
            ys.push(parse(d)?);
        }
        if has_omega {
            let o = parse(d + 1)?;
            if !(o > 0.0) {
                return Err(cfg_err(path, format!("line {line}: omega must be positive")));
            }
            match omega {
                None => omega = Some(o),
                Some(prev) if prev != o => {
                    return Err(cfg_err(path, format!("line {line}: omega column must be constant")))
                }
                _ => {}
            }
        }
    }
    Ok(CsvTable {
        x: Points::new(d, xs).map_err(|e| cfg_err(path, e))?,
        y: has_y.then_some(ys),
        omega,
    })
}

/// Affine maps applied to coordinates and responses before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    /// Column means subtracted from x, or empty when coordinates are untouched.
    pub x_mean: Vec<f64>,
    pub x_factor: f64,
    /// Responses are divided by this.
    pub y_scale: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            x_mean: Vec::new(),
            x_factor: 1.0,
            y_scale: 1.0,
        }
    }

    pub fn fit(x: &Points, y: &[f64], p: &Preprocess) -> CliResult<Self> {
        let mut t = Self::identity();
        if let Some(f) = p.center_scale {
            let n = x.len() as f64;
            t.x_mean = (0..x.dim()).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
            t.x_factor = f;
        }
        if p.scale_response_by_max {
            let m = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m == 0.0 {
                return Err(CliError::config(
                    "data.preprocess.scale_response_by_max",
                    "all responses are zero",
                ));
            }
            t.y_scale = m;
        }
        Ok(t)
    }

    pub fn apply_x(&self, x: &Points) -> CliResult<Points> {
        if self.x_mean.is_empty() {
            return Ok(x.clone());
        }
        if x.dim() != self.x_mean.len() {
            return Err(CliError::Config(format!(
                "test points have {} coordinates, training data has {}",
                x.dim(),
                self.x_mean.len()
            )));
        }
        let data = x
            .iter()
            .flat_map(|r| r.iter().zip(&self.x_mean).map(|(v, m)| self.x_factor * (v - m)))
            .collect();
        Ok(Points::new(x.dim(), data)?)
    }

    pub fn apply_y(&self, y: f64) -> f64 {
        y / self.y_scale
    }

    pub fn invert_y(&self, y: f64) -> f64 {
        y * self.y_scale
    }

    /// Noise variance on the transformed response scale.
    pub fn apply_omega(&self, omega: f64) -> f64 {
        omega / (self.y_scale * self.y_scale)
    }
}

/// Reads a training CSV, applies the preprocessing, and returns the
/// transformed dataset together with the transform. `omega` is on the
/// original response scale; an omega column takes precedence.
pub fn ingest_csv(path: &Path, preprocess: &Preprocess, omega: Option<f64>) -> CliResult<(Dataset, Transform)> {
    let table = read_table(path, true)?;
    let y = table.y.expect("y column required");
    if y.len() < 2 {
        return Err(cfg_err(path, "at least 2 rows are required for fitting"));
    }
    let omega = table
        .omega
        .or(omega)
        .ok_or_else(|| CliError::config("data.omega", "required when the data file has no omega column"))?;
    let t = Transform::fit(&table.x, &y, preprocess)?;
    let x = t.apply_x(&table.x)?;
    let y = y.iter().map(|v| t.apply_y(*v)).collect();
    let data = Dataset::new(x, y, t.apply_omega(omega)).map_err(|e| cfg_err(path, e))?;
    Ok((data, t))
}

/// Noise variance estimated from pairs of observations at most `radius`
/// apart as Σ(yᵢ − yⱼ)² / (2·#pairs). A convenience for real data; the
/// regression model itself treats ω as known.
pub fn estimate_noise_from_duplicates(x: &Points, y: &[f64], radius: f64) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2.sqrt() <= radius {
                sum += (y[i] - y[j]).powi(2);
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| (sum / (2.0 * pairs as f64), pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_round_trip() {
        let f = file("x1,y\n0.25,1.5\n0.75,-2\n");
        let (d, t) = ingest_csv(f.path(), &Preprocess::default(), Some(0.3)).unwrap();
        assert_eq!(d.x.as_slice(), &[0.25, 0.75]);
        assert_eq!(d.y, vec![1.5, -2.0]);
        assert_eq!(d.omega, 0.3);
        assert_eq!(t, Transform::identity());
    }

    #[test]
    fn constant_response_scales_to_one() {
        let f = file("x1,x2,y\n0,0,4\n1,0,4\n0,1,4\n");
        let p = Preprocess {
            center_scale: None,
            scale_response_by_max: true,
        };
        let (d, _) = ingest_csv(f.path(), &p, Some(16.0)).unwrap();
        assert_eq!(d.y, vec![1.0; 3]);
        assert_eq!(d.omega, 1.0);
    }

    #[test]
    fn preprocessing_matches_hand_computation() {
        let f = file("x1,x2,y,omega\n1,10,-5,0.5\n3,14,2,0.5\n5,12,4,0.5\n");
        let p = Preprocess {
            center_scale: Some(100.0),
            scale_response_by_max: true,
        };
        let (d, t) = ingest_csv(f.path(), &p, None).unwrap();
        assert_eq!(t.x_mean, vec![3.0, 12.0]);
        assert_eq!(d.x.as_slice(), &[-200.0, -200.0, 0.0, 200.0, 200.0, 0.0]);
        assert_eq!(d.y, vec![-1.0, 0.4, 0.8]);
        assert_eq!(d.omega, 0.02);
        assert_eq!(t.invert_y(0.4), 2.0);
    }

    #[test]
    fn malformed_rows_report_line() {
        let f = file("x1,y\n0.1,2\n0.2,abc\n");
        let e = ingest_csv(f.path(), &Preprocess::default(), Some(1.0)).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let f = file("x1,y\n0.1,2\n0.2,inf\n");
        assert!(ingest_csv(f.path(), &Preprocess::default(), Some(1.0)).is_err());
        let f = file("x2,y\n0.1,2\n");
        assert!(ingest_csv(f.path(), &Preprocess::default(), Some(1.0)).is_err());
        let f = file("x1,y\n0.1,2\n0.2,3\n");
        let e = ingest_csv(f.path(), &Preprocess::default(), None).unwrap_err();
        assert!(e.to_string().contains("data.omega"), "{e}");
    }

    #[test]
    fn noise_from_pairs() {
        let x = Points::from_1d(&[0.0, 0.0, 1.0, 1.001]).unwrap();
        let (w, pairs) = estimate_noise_from_duplicates(&x, &[1.0, 3.0, 0.0, 1.0], 0.01).unwrap();
        assert_eq!(pairs, 2);
        assert!((w - (4.0 + 1.0) / 4.0).abs() < 1e-15);
        assert!(estimate_noise_from_duplicates(&x, &[0.0; 4], 1e-6).is_some());
        assert!(estimate_noise_from_duplicates(&Points::from_1d(&[0.0, 1.0]).unwrap(), &[0.0; 2], 0.1).is_none());
    }
}
