//! CSV trajectories and JSON model, moment and report files.
//!
//! Trajectory CSV: header `t,<name1>,..,<namen>[,eta1,..,etan]`, one row per
//! sample, values written with 17 significant digits. Noise columns are
//! recognized by an `eta` prefix and must match the state width. Lines
//! starting with `#` are comments.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lim::{GammaScan, LinModel};
use crate::linalg::SpdMatrix;
use crate::model::{NoiseSpec, QuadModel};
use crate::moments::MomentSet;
use crate::nonlinear::{BlockResiduals, FitReport, MomentMatch};
use crate::sim::{Trajectory, WallSpec};
use crate::tensor::{QuadTensor, Tensor};

pub const SCHEMA_VERSION: u32 = 1;

/// A trajectory together with its column names.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTrajectory {
    pub trajectory: Trajectory,
    pub names: Vec<String>,
}

pub fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

pub fn read_trajectory<R: Read>(reader: R) -> Result<NamedTrajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be `t`".into(),
        });
    }
    let eta_start = header.iter().position(|h| h.starts_with("eta")).unwrap_or(header.len());
    let n = eta_start - 1;
    let n_eta = header.len() - eta_start;
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no state columns".into(),
        });
    }
    if n_eta != 0 && n_eta != n {
        return Err(Error::Parse {
            line: 1,
            message: format!("{n_eta} noise columns for {n} state columns"),
        });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut noise = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < header.len() {
            return Err(Error::Parse {
                line,
                message: format!("missing column `{}`", header[record.len()]),
            });
        }
        if record.len() > header.len() {
            return Err(Error::Parse {
                line,
                message: format!("{} fields for {} columns", record.len(), header.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse {field:?}", header[c]),
            })?;
            if c == 0 {
                times.push(v);
            } else if c < eta_start {
                values.push(v);
            } else {
                noise.push(v);
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::TooShort(format!("{} samples; at least 2 are needed", times.len())));
    }
    let count = times.len();
    let dt = (times[count - 1] - times[0]) / (count - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::NonUniformSampling(1));
    }
    for k in 1..count {
        let expected = times[0] + k as f64 * dt;
        let tol = 1e-9 * dt + 4.0 * f64::EPSILON * times[k].abs();
        if (times[k] - expected).abs() > tol {
            return Err(Error::NonUniformSampling(k));
        }
    }
    let mut trajectory = Trajectory::new(n, dt, values)?;
    trajectory.t0 = times[0];
    if n_eta > 0 {
        trajectory.noise = Some(noise);
    }
    Ok(NamedTrajectory {
        trajectory,
        names: header[1..eta_start].to_vec(),
    })
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<NamedTrajectory> {
    read_trajectory(File::open(path)?)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the CSV; each line of `comment` becomes a leading `# ` line.
pub fn write_trajectory<W: Write>(mut writer: W, traj: &Trajectory, names: &[String], comment: Option<&str>) -> Result<()> {
    if names.len() != traj.n {
        return Err(Error::DimensionMismatch(format!(
            "{} names for {} columns",
            names.len(),
            traj.n
        )));
    }
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    if traj.noise.is_some() {
        header.extend((1..=traj.n).map(|i| format!("eta{i}")));
    }
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for k in 0..traj.len() {
        let mut rec = vec![fmt17(traj.t0 + k as f64 * traj.dt)];
        rec.extend(traj.row(k).iter().map(|v| fmt17(*v)));
        if let Some(eta) = traj.noise_row(k) {
            rec.extend(eta.iter().map(|v| fmt17(*v)));
        }
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory, names: &[String], comment: Option<&str>) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), traj, names, comment)
}

// ---------------------------------------------------------------------------
// JSON helpers

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("ragged rows in {what}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    let m = matrix_from_rows(rows, what)?;
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Models

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    WhiteLim,
    ColoredLim,
    WhiteNlim,
    ColoredNlim,
}

impl ModelKind {
    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::WhiteLim | ModelKind::ColoredLim)
    }

    pub fn is_colored(self) -> bool {
        matches!(self, ModelKind::ColoredLim | ModelKind::ColoredNlim)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::WhiteLim => "white-lim",
            ModelKind::ColoredLim => "colored-lim",
            ModelKind::WhiteNlim => "white-nlim",
            ModelKind::ColoredNlim => "colored-nlim",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white-lim" => Ok(ModelKind::WhiteLim),
            "colored-lim" => Ok(ModelKind::ColoredLim),
            "white-nlim" => Ok(ModelKind::WhiteNlim),
            "colored-nlim" => Ok(ModelKind::ColoredNlim),
            _ => Err(Error::InvalidParameter(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Serialized model. `B` rows list `B_ijk` over pairs `j <= k` in
/// lexicographic order; linear kinds omit `B` and `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub n: usize,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Wall used when simulating this model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<WallSpec>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl ModelFile {
    pub fn from_quad(model: &QuadModel, kind: ModelKind) -> Self {
        let linear = kind.is_linear();
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            n: model.n(),
            b: (!linear).then(|| model.b.rows()),
            a: matrix_rows(&model.a),
            c: (!linear).then(|| model.c.iter().copied().collect()),
            q: matrix_rows(model.q.matrix()),
            gamma: model.noise.gamma(),
            wall: None,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn from_linear(model: &LinModel) -> Self {
        let kind = match model.noise {
            NoiseSpec::White => ModelKind::WhiteLim,
            NoiseSpec::Colored { .. } => ModelKind::ColoredLim,
        };
        Self::from_quad(&model.to_quad(), kind)
    }

    pub fn to_quad(&self) -> Result<QuadModel> {
        let n = self.n;
        let a = square(&self.a, n, "A")?;
        let q = SpdMatrix::new(square(&self.q, n, "Q")?)?;
        let b = match &self.b {
            Some(rows) => QuadTensor::from_rows(rows)?,
            None => QuadTensor::zeros(n),
        };
        let c = match &self.c {
            Some(c) => DVector::from_column_slice(c),
            None => DVector::zeros(n),
        };
        let noise = match (self.kind.is_colored(), self.gamma) {
            (true, Some(g)) => NoiseSpec::colored(g)?,
            (true, None) => {
                return Err(Error::InvalidParameter(format!("{} model needs gamma", self.kind.as_str())))
            }
            (false, _) => NoiseSpec::White,
        };
        QuadModel::new(b, a, c, q, noise)
    }
}

// ---------------------------------------------------------------------------
// Moments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentFile {
    pub schema_version: u32,
    pub n: usize,
    pub dt: f64,
    pub mean: Vec<f64>,
    /// `K(k dt)` as row lists.
    #[serde(rename = "K")]
    pub k: Vec<Vec<Vec<f64>>>,
    /// `M(k dt)` flattened row-major over `(i, j, k)`.
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    /// `S(k dt)` flattened row-major over `(i, j, k, w)`.
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
}

impl MomentFile {
    pub fn from_moments(m: &MomentSet) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n: m.n,
            dt: m.dt,
            mean: m.mean.iter().copied().collect(),
            k: m.k.iter().map(matrix_rows).collect(),
            m: m.m.iter().map(|t| t.data().to_vec()).collect(),
            s: m.s.iter().map(|t| t.data().to_vec()).collect(),
        }
    }

    pub fn to_moments(&self) -> Result<MomentSet> {
        let n = self.n;
        Ok(MomentSet {
            n,
            dt: self.dt,
            mean: DVector::from_column_slice(&self.mean),
            k: self.k.iter().map(|r| square(r, n, "K")).collect::<Result<_>>()?,
            m: self.m.iter().map(|d| Tensor::from_vec(n, 3, d.clone())).collect::<Result<_>>()?,
            s: self.s.iter().map(|d| Tensor::from_vec(n, 4, d.clone())).collect::<Result<_>>()?,
        })
    }
}

// ---------------------------------------------------------------------------
// Fit reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    #[serde(rename = "K_eta_x")]
    pub k_eta_x: Vec<Vec<f64>>,
    /// Flattened row-major over `(i, j, k)`.
    #[serde(rename = "M_eta_x")]
    pub m_eta_x: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    #[serde(rename = "Q0")]
    pub q0: Vec<Vec<f64>>,
    pub objective_q0: f64,
    pub objective: f64,
    pub wall_activity: f64,
    pub objective_trace: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
    pub refined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub schema_version: u32,
    pub method: ModelKind,
    pub model: ModelFile,
    pub condition: f64,
    #[serde(default)]
    pub least_squares: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<BlockResiduals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdr_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_match: Option<MomentMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_scan: Option<GammaScan>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl FitFile {
    pub fn from_nonlinear(report: &FitReport, kind: ModelKind) -> Self {
        let diagnostics = report.diagnostics.as_ref().map(|d| DiagnosticsFile {
            k_eta_x: matrix_rows(&d.k_eta_x),
            m_eta_x: d.m_eta_x.data().to_vec(),
            g: matrix_rows(&d.g),
            h: d.h.data().to_vec(),
            q0: matrix_rows(&d.q0),
            objective_q0: d.objective_q0,
            objective: d.objective,
            wall_activity: d.wall_activity,
            objective_trace: d.objective_trace.clone(),
            evaluations: d.evaluations,
            converged: d.converged,
            refined: d.refined,
        });
        Self {
            schema_version: SCHEMA_VERSION,
            method: kind,
            model: ModelFile::from_quad(&report.model, kind),
            condition: report.condition,
            least_squares: report.least_squares,
            residuals: Some(report.residuals),
            fdr_residual: None,
            moment_match: report.moment_match.clone(),
            diagnostics,
            gamma_scan: None,
            warnings: report.warnings.clone(),
            config: serde_json::Value::Null,
        }
    }

    pub fn from_linear(fit: &crate::lim::LimFit) -> Self {
        let model = ModelFile::from_linear(&fit.model);
        Self {
            schema_version: SCHEMA_VERSION,
            method: model.kind,
            model,
            condition: fit.condition,
            least_squares: false,
            residuals: None,
            fdr_residual: Some(fit.fdr_residual),
            moment_match: None,
            diagnostics: None,
            gamma_scan: None,
            warnings: fit.warnings.clone(),
            config: serde_json::Value::Null,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_file() {
        let text = "t,x1,x2\n0,1,2\n0.5,3,4\n";
        let t = read_trajectory(text.as_bytes()).unwrap();
        assert_eq!(t.trajectory.len(), 2);
        assert_eq!(t.trajectory.dt, 0.5);
        assert_eq!(t.names, vec!["x1", "x2"]);
        assert_eq!(t.trajectory.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "t,x1,x2\n0,1,2\n1,3\n";
        match read_trajectory(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("x2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_uniform_time() {
        let text = "t,x\n0,1\n1,2\n2.5,3\n3,4\n";
        assert!(matches!(read_trajectory(text.as_bytes()), Err(Error::NonUniformSampling(_))));
    }

    #[test]
    fn round_trip_is_bit_stable() {
        let values: Vec<f64> = (0..30).map(|k| ((k as f64) * 0.37).sin() / 3.0 + 1e-9 * k as f64).collect();
        let mut traj = Trajectory::new(3, 0.01, values).unwrap();
        traj.noise = Some((0..30).map(|k| (k as f64).sqrt() * std::f64::consts::PI).collect());
        let names = default_names(3);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, &names, Some("seed = 3\nnote")).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.trajectory.values, traj.values);
        assert_eq!(back.trajectory.noise, traj.noise);
        let mut again = Vec::new();
        write_trajectory(&mut again, &back.trajectory, &back.names, Some("seed = 3\nnote")).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn model_round_trip() {
        let model = QuadModel::two_dimensional_benchmark(NoiseSpec::Colored { gamma: 0.5 });
        let file = ModelFile::from_quad(&model, ModelKind::ColoredNlim);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_quad().unwrap(), model);

        let lin = ModelFile::from_quad(&model, ModelKind::WhiteLim);
        let text = serde_json::to_string(&lin).unwrap();
        assert!(!text.contains("\"B\"") && !text.contains("\"C\""));
    }

    #[test]
    fn colored_kind_needs_gamma() {
        let model = QuadModel::two_dimensional_benchmark(NoiseSpec::White);
        let mut file = ModelFile::from_quad(&model, ModelKind::ColoredNlim);
        file.gamma = None;
        assert!(file.to_quad().is_err());
    }
}
