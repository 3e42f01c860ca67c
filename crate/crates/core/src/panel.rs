//! Balanced panel container, long-format CSV ingestion and the singular-value
//! tail diagnostic.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MissingCell, PanelError, Result};

/// An N×T balanced panel with K regressors.
///
/// Rows index units and columns index periods. `gamma_true` and `beta_true`
/// are only populated for simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    gamma_true: Option<DMatrix<f64>>,
    beta_true: Option<Vec<f64>>,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, t) = y.shape();
        if n == 0 || t == 0 {
            return Err(PanelError::domain("panel must have at least one unit and one period"));
        }
        if x.is_empty() {
            return Err(PanelError::domain("at least one regressor is required"));
        }
        for (k, xk) in x.iter().enumerate() {
            if xk.shape() != (n, t) {
                return Err(PanelError::domain(format!(
                    "regressor {} has shape {:?}, expected {:?}",
                    k + 1,
                    xk.shape(),
                    (n, t)
                )));
            }
        }
        check_finite("y", &y)?;
        for (k, xk) in x.iter().enumerate() {
            check_finite(&format!("x{}", k + 1), xk)?;
        }
        Ok(PanelData {
            unit_labels: (1..=n).map(|i| i.to_string()).collect(),
            time_labels: (1..=t).map(|i| i.to_string()).collect(),
            y,
            x,
            gamma_true: None,
            beta_true: None,
        })
    }

    /// Attach the simulation truth (heterogeneity matrix and coefficient).
    pub fn with_truth(mut self, gamma: DMatrix<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.shape() != self.y.shape() {
            return Err(PanelError::domain("gamma_true must be N×T"));
        }
        if beta.len() != self.k() {
            return Err(PanelError::domain("beta_true must have length K"));
        }
        check_finite("gamma_true", &gamma)?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(PanelError::domain("beta_true has non-finite entries"));
        }
        self.gamma_true = Some(gamma);
        self.beta_true = Some(beta);
        Ok(self)
    }

    pub fn with_labels(mut self, units: Vec<String>, times: Vec<String>) -> Result<Self> {
        if units.len() != self.n_units() || times.len() != self.n_periods() {
            return Err(PanelError::domain("label counts must match panel dimensions"));
        }
        self.unit_labels = units;
        self.time_labels = times;
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    /// Number of regressors.
    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    pub fn gamma_true(&self) -> Option<&DMatrix<f64>> {
        self.gamma_true.as_ref()
    }

    pub fn beta_true(&self) -> Option<&[f64]> {
        self.beta_true.as_deref()
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Copy of the rectangle `units × periods`, truth and labels included.
    pub fn subpanel(&self, units: Range<usize>, periods: Range<usize>) -> Result<PanelData> {
        if units.is_empty() || periods.is_empty() || units.end > self.n_units() || periods.end > self.n_periods() {
            return Err(PanelError::domain(format!(
                "subpanel {:?}×{:?} outside {}×{} panel",
                units,
                periods,
                self.n_units(),
                self.n_periods()
            )));
        }
        let (nr, nc) = (units.len(), periods.len());
        let cut = |m: &DMatrix<f64>| m.view((units.start, periods.start), (nr, nc)).into_owned();
        Ok(PanelData {
            y: cut(&self.y),
            x: self.x.iter().map(cut).collect(),
            gamma_true: self.gamma_true.as_ref().map(cut),
            beta_true: self.beta_true.clone(),
            unit_labels: self.unit_labels[units].to_vec(),
            time_labels: self.time_labels[periods].to_vec(),
        })
    }

    /// Stack the listed unit rows (repetition allowed) into a new panel.
    pub fn select_units(&self, rows: &[usize]) -> Result<PanelData> {
        if rows.is_empty() || rows.iter().any(|&r| r >= self.n_units()) {
            return Err(PanelError::domain("row selection empty or out of range"));
        }
        let pick = |m: &DMatrix<f64>| m.select_rows(rows.iter());
        Ok(PanelData {
            y: pick(&self.y),
            x: self.x.iter().map(pick).collect(),
            gamma_true: self.gamma_true.as_ref().map(pick),
            beta_true: self.beta_true.clone(),
            unit_labels: rows.iter().map(|&r| self.unit_labels[r].clone()).collect(),
            time_labels: self.time_labels.clone(),
        })
    }

    /// Same regressors, new outcome matrix.
    pub fn with_y(&self, y: DMatrix<f64>) -> Result<PanelData> {
        if y.shape() != self.y.shape() {
            return Err(PanelError::domain("replacement outcome must be N×T"));
        }
        check_finite("y", &y)?;
        Ok(PanelData { y, ..self.clone() })
    }
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (i, t) = (pos % m.nrows(), pos / m.nrows());
        return Err(PanelError::domain(format!("{name} has a non-finite entry at ({i},{t})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "GFE")]
    Gfe,
    #[serde(rename = "GFE_SPLIT")]
    GfeSplit,
    #[serde(rename = "OLS")]
    Ols,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "LS",
            EstimatorKind::Gfe => "GFE",
            EstimatorKind::GfeSplit => "GFE_SPLIT",
            EstimatorKind::Ols => "OLS",
        }
    }
}

/// Estimator label such as `LS` or `GFE_JK`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EstimatorTag {
    pub kind: EstimatorKind,
    pub jackknife: bool,
}

impl EstimatorTag {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorTag { kind, jackknife: false }
    }

    pub fn jackknifed(self) -> Self {
        EstimatorTag { jackknife: true, ..self }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        if self.jackknife {
            f.write_str("_JK")?;
        }
        Ok(())
    }
}

impl Serialize for EstimatorTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EstimatorTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (base, jackknife) = match s.strip_suffix("_JK") {
            Some(b) => (b, true),
            None => (s.as_str(), false),
        };
        let kind = match base {
            "LS" => EstimatorKind::Ls,
            "GFE" => EstimatorKind::Gfe,
            "GFE_SPLIT" => EstimatorKind::GfeSplit,
            "OLS" => EstimatorKind::Ols,
            other => return Err(serde::de::Error::custom(format!("unknown estimator tag {other}"))),
        };
        Ok(EstimatorTag { kind, jackknife })
    }
}

/// Point estimate plus optional standard errors and named scalar metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub beta_hat: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub estimator_tag: EstimatorTag,
    pub metadata: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn new(tag: EstimatorTag, beta_hat: Vec<f64>) -> Self {
        EstimateReport { beta_hat, se: None, estimator_tag: tag, metadata: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    /// Attach standard errors; they must match `beta_hat` in length and be
    /// strictly positive.
    pub fn with_se(mut self, se: Vec<f64>) -> Result<Self> {
        if se.len() != self.beta_hat.len() {
            return Err(PanelError::domain("se length must equal K"));
        }
        if se.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(PanelError::domain(format!("standard errors must be finite and positive, got {se:?}")));
        }
        self.se = Some(se);
        Ok(self)
    }
}

/// Read a long-format panel `unit_id,time_id,y,x1..xK`.
///
/// Units are ordered by first appearance, periods by sorted label (numeric
/// order when every label parses as a number).
pub fn load_panel_csv(path: impl AsRef<Path>, k: usize) -> Result<PanelData> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel_csv(file, k)
}

pub fn read_panel_csv<R: Read>(reader: R, k: usize) -> Result<PanelData> {
    if k == 0 {
        return Err(PanelError::domain("regressor count must be at least 1"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(e, 1))?.clone();
    let mut expected = vec!["unit_id".to_string(), "time_id".to_string(), "y".to_string()];
    expected.extend((1..=k).map(|j| format!("x{j}")));
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(PanelError::Parse {
            row: 1,
            message: format!("header must start with {}, got {}", expected.join(","), got.join(",")),
        });
    }

    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut unit_labels: Vec<String> = Vec::new();
    let mut records: Vec<(usize, String, Vec<f64>)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = idx + 2;
        let rec = rec.map_err(|e| csv_err(e, row))?;
        if rec.len() < 3 + k {
            return Err(PanelError::Parse { row, message: format!("expected {} fields, found {}", 3 + k, rec.len()) });
        }
        let unit = rec[0].to_string();
        let time = rec[1].to_string();
        let mut values = Vec::with_capacity(1 + k);
        for (j, field) in rec.iter().skip(2).take(1 + k).enumerate() {
            let v: f64 = field.parse().map_err(|_| PanelError::Parse {
                row,
                message: format!("column {} is not numeric: {field:?}", expected[2 + j]),
            })?;
            if !v.is_finite() {
                return Err(PanelError::Parse { row, message: format!("column {} is not finite", expected[2 + j]) });
            }
            values.push(v);
        }
        let u = *unit_index.entry(unit.clone()).or_insert_with(|| {
            unit_labels.push(unit);
            unit_labels.len() - 1
        });
        records.push((u, time, values));
    }
    if records.is_empty() {
        return Err(PanelError::Parse { row: 2, message: "no data rows".into() });
    }

    let mut time_labels: Vec<String> = records.iter().map(|r| r.1.clone()).collect();
    sort_time_labels(&mut time_labels);
    time_labels.dedup();
    let time_index: HashMap<&str, usize> = time_labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let (n, t) = (unit_labels.len(), time_labels.len());
    let mut seen = vec![false; n * t];
    let mut y = DMatrix::zeros(n, t);
    let mut x = vec![DMatrix::zeros(n, t); k];
    for (idx, (u, time, values)) in records.iter().enumerate() {
        let c = time_index[time.as_str()];
        if std::mem::replace(&mut seen[u + c * n], true) {
            return Err(PanelError::Parse {
                row: idx + 2,
                message: format!("duplicate cell ({},{})", unit_labels[*u], time),
            });
        }
        y[(*u, c)] = values[0];
        for (xk, v) in x.iter_mut().zip(&values[1..]) {
            xk[(*u, c)] = *v;
        }
    }
    let missing: Vec<MissingCell> = (0..n)
        .flat_map(|i| (0..t).map(move |c| (i, c)))
        .filter(|&(i, c)| !seen[i + c * n])
        .map(|(i, c)| MissingCell { unit: unit_labels[i].clone(), time: time_labels[c].clone() })
        .collect();
    if !missing.is_empty() {
        return Err(PanelError::Balance { missing });
    }
    PanelData::new(y, x)?.with_labels(unit_labels, time_labels)
}

fn sort_time_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let (fa, fb) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            fa.total_cmp(&fb).then_with(|| a.cmp(b))
        }),
        None => labels.sort(),
    }
}

fn csv_err(e: csv::Error, row: usize) -> PanelError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(row);
    PanelError::Parse { row, message: e.to_string() }
}

/// Write the panel in the long format accepted by [`load_panel_csv`].
pub fn write_panel_csv<W: Write>(panel: &PanelData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit_id".to_string(), "time_id".to_string(), "y".to_string()];
    header.extend((1..=panel.k()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_io)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            row.clear();
            row.push(panel.unit_labels[i].clone());
            row.push(panel.time_labels[t].clone());
            row.push(format_float(panel.y[(i, t)]));
            row.extend(panel.x.iter().map(|xk| format_float(xk[(i, t)])));
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same bits.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn csv_io(e: csv::Error) -> PanelError {
    PanelError::Io(std::io::Error::other(e.to_string()))
}

/// Mean squared mass of the singular values beyond the first `r`:
/// `(‖m‖²_F − Σ_{ℓ≤r} σ_ℓ²) / (N·T)`.
pub fn singular_tail_share(m: &DMatrix<f64>, r: usize) -> Result<f64> {
    let (n, t) = m.shape();
    if r > n.min(t) {
        return Err(PanelError::domain(format!("r = {r} exceeds min(N,T) = {}", n.min(t))));
    }
    let total = m.norm_squared();
    if r == 0 {
        return Ok(total / (n * t) as f64);
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let head: f64 = sv.iter().take(r).map(|s| s * s).sum();
    // subtraction can dip below zero by rounding when the tail is empty
    let tail = if r >= sv.len() { 0.0 } else { (total - head).max(0.0) };
    Ok(tail / (n * t) as f64)
}
