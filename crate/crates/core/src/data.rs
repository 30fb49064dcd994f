//! Observations, CSV ingestion and body/tail binning.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{NphError, Result};

/// An exact observation `y > 0` carrying a positive multiplicity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedObservation {
    pub y: f64,
    pub weight: f64,
}

impl WeightedObservation {
    pub fn new(y: f64, weight: f64) -> Result<Self> {
        if !(y > 0.0) || !y.is_finite() {
            return Err(NphError::InvalidInput(format!("observation y = {y} must be finite and positive")));
        }
        check_weight(weight)?;
        Ok(Self { y, weight })
    }
}

/// Knowledge `Y ∈ (lower, upper]`; `lower = 0` is left censoring and
/// `upper = ∞` right censoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CensoredObservation {
    pub lower: f64,
    pub upper: f64,
    pub weight: f64,
}

impl CensoredObservation {
    pub fn new(lower: f64, upper: f64, weight: f64) -> Result<Self> {
        if !(lower >= 0.0) || !lower.is_finite() || !(upper > lower) {
            return Err(NphError::InvalidInput(format!(
                "censoring interval ({lower}, {upper}] needs 0 <= lower < upper"
            )));
        }
        check_weight(weight)?;
        Ok(Self { lower, upper, weight })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(lower, upper, 1.0)
    }

    pub fn right(lower: f64) -> Result<Self> {
        Self::new(lower, f64::INFINITY, 1.0)
    }

    pub fn is_right_censored(&self) -> bool {
        self.upper.is_infinite()
    }

    /// A single value standing in for the interval when a rough location is
    /// enough, e.g. to set the initial scale.
    fn representative(&self) -> f64 {
        if self.is_right_censored() {
            self.lower
        } else {
            0.5 * (self.lower + self.upper)
        }
    }
}

fn check_weight(weight: f64) -> Result<()> {
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(NphError::InvalidInput(format!("weight {weight} must be finite and positive")));
    }
    Ok(())
}

/// Exact and censored observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub exact: Vec<WeightedObservation>,
    pub censored: Vec<CensoredObservation>,
    /// Source path and any transformation applied.
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        exact: Vec<WeightedObservation>,
        censored: Vec<CensoredObservation>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let provenance = provenance.into();
        if exact.is_empty() && censored.is_empty() {
            return Err(NphError::EmptyDataset(provenance));
        }
        Ok(Self { exact, censored, provenance })
    }

    /// Unit-weight exact observations.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let exact = values.iter().map(|&y| WeightedObservation::new(y, 1.0)).collect::<Result<Vec<_>>>()?;
        Self::new(exact, Vec::new(), "in-memory")
    }

    pub fn from_weighted(pairs: &[(f64, f64)]) -> Result<Self> {
        let exact = pairs.iter().map(|&(y, w)| WeightedObservation::new(y, w)).collect::<Result<Vec<_>>>()?;
        Self::new(exact, Vec::new(), "in-memory")
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty() && self.censored.is_empty()
    }

    /// `M`, the total weight of all observations.
    pub fn total_weight(&self) -> f64 {
        self.exact.iter().map(|o| o.weight).sum::<f64>() + self.censored.iter().map(|o| o.weight).sum::<f64>()
    }

    /// Merges exact observations with equal values into one weighted point;
    /// the result is sorted by value.
    pub fn collapse_duplicates(&self) -> Dataset {
        let pairs: Vec<(f64, f64)> = self.exact.iter().map(|o| (o.y, o.weight)).collect();
        Dataset {
            exact: collapse(pairs).into_iter().map(|(y, weight)| WeightedObservation { y, weight }).collect(),
            censored: self.censored.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Weighted `u`-quantile of the observation locations (censored
    /// observations enter through a representative point).
    pub fn weighted_quantile(&self, u: f64) -> Option<f64> {
        let mut points: Vec<(f64, f64)> = self.exact.iter().map(|o| (o.y, o.weight)).collect();
        points.extend(self.censored.iter().map(|o| (o.representative(), o.weight)));
        points.retain(|(y, _)| *y > 0.0);
        weighted_quantile(points, u)
    }

    /// Replaces exact observations below `split` by `bins` equal-width bin
    /// representatives and collapses duplicates among the rest.
    pub fn bin_body_tail(&self, split: f64, bins: usize, representative: Representative) -> Result<Dataset> {
        let pairs: Vec<(f64, f64)> = self.exact.iter().map(|o| (o.y, o.weight)).collect();
        let mut out = bin_values(&pairs, split, bins, representative)?;
        out.censored = self.censored.clone();
        out.provenance = format!("{}; {}", self.provenance, out.provenance);
        Ok(out)
    }
}

/// Placement of a body bin's representative point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Representative {
    #[default]
    Midpoint,
    /// Left endpoint, except the first bin keeps its midpoint so no mass
    /// lands at zero.
    LeftShifted,
}

impl FromStr for Representative {
    type Err = NphError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Self::Midpoint),
            "left-shifted" | "left" => Ok(Self::LeftShifted),
            other => Err(NphError::InvalidInput(format!(
                "unknown representative '{other}' (expected midpoint or left-shifted)"
            ))),
        }
    }
}

/// Body/tail reduction of raw `(value, weight)` pairs. Values may be zero
/// here as long as they fall in the body; negative values are rejected.
pub fn bin_values(pairs: &[(f64, f64)], split: f64, bins: usize, representative: Representative) -> Result<Dataset> {
    if bins == 0 || !(split > 0.0) || !split.is_finite() {
        return Err(NphError::InvalidInput(format!(
            "binning needs a positive split and at least one bin, got {split}:{bins}"
        )));
    }
    let width = split / bins as f64;
    let mut counts = vec![0.0; bins];
    let mut tail = Vec::new();
    for &(y, w) in pairs {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(NphError::InvalidInput(format!("cannot bin value {y}")));
        }
        check_weight(w)?;
        if y < split {
            let b = ((y / width) as usize).min(bins - 1);
            counts[b] += w;
        } else {
            tail.push((y, w));
        }
    }
    let mut exact = Vec::new();
    for (b, &count) in counts.iter().enumerate() {
        if count > 0.0 {
            let left = b as f64 * width;
            let y = match representative {
                Representative::LeftShifted if b > 0 => left,
                _ => left + 0.5 * width,
            };
            exact.push(WeightedObservation { y, weight: count });
        }
    }
    exact.extend(collapse(tail).into_iter().map(|(y, weight)| WeightedObservation { y, weight }));
    Dataset::new(exact, Vec::new(), format!("binned [0, {split}) into {bins} bins"))
}

fn collapse(mut pairs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (y, w) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == y => last.1 += w,
            _ => out.push((y, w)),
        }
    }
    out
}

fn weighted_quantile(mut points: Vec<(f64, f64)>, u: f64) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(y, w) in &points {
        acc += w;
        if acc >= u * total {
            return Some(y);
        }
    }
    points.last().map(|p| p.0)
}

/// CSV layouts accepted by [`load_csv`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    /// Header `y`.
    Exact,
    /// Header `y,weight`.
    Weighted,
    /// Header `lower,upper,weight`; `upper` may be `inf`.
    Censored,
}

impl CsvKind {
    fn header(&self) -> &'static [&'static str] {
        match self {
            CsvKind::Exact => &["y"],
            CsvKind::Weighted => &["y", "weight"],
            CsvKind::Censored => &["lower", "upper", "weight"],
        }
    }
}

impl fmt::Display for CsvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header().join(","))
    }
}

/// Rows of a CSV file as numbers, checked against the expected header.
/// Returns `(line, fields)` pairs.
pub fn read_rows(path: &Path, kind: CsvKind) -> Result<Vec<(usize, Vec<f64>)>> {
    let parse_err = |line: usize, message: String| NphError::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => NphError::Io { path: path.to_path_buf(), source },
            other => parse_err(1, format!("{other:?}")),
        }
    })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(NphError::EmptyDataset(path.display().to_string()));
    }
    if header != kind.header() {
        return Err(parse_err(1, format!("expected header '{kind}', found '{}'", header.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != kind.header().len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", kind.header().len(), record.len())));
        }
        let fields = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(line, format!("'{f}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        if fields.iter().any(|v| v.is_nan()) {
            return Err(parse_err(line, "NaN value".into()));
        }
        rows.push((line, fields));
    }
    if rows.is_empty() {
        return Err(NphError::EmptyDataset(path.display().to_string()));
    }
    Ok(rows)
}

/// Loads a dataset. Every nonpositive exact value is reported with its line.
pub fn load_csv(path: &Path, kind: CsvKind) -> Result<Dataset> {
    let rows = read_rows(path, kind)?;
    let parse_err = |line: usize, message: String| NphError::Parse { path: path.to_path_buf(), line, message };
    let mut exact = Vec::new();
    let mut censored = Vec::new();
    let mut nonpositive = Vec::new();
    for (line, fields) in rows {
        match kind {
            CsvKind::Exact | CsvKind::Weighted => {
                let y = fields[0];
                let w = if kind == CsvKind::Weighted { fields[1] } else { 1.0 };
                if !(y > 0.0) {
                    nonpositive.push(line);
                    continue;
                }
                exact.push(WeightedObservation::new(y, w).map_err(|e| parse_err(line, e.to_string()))?);
            }
            CsvKind::Censored => {
                censored.push(
                    CensoredObservation::new(fields[0], fields[1], fields[2])
                        .map_err(|e| parse_err(line, e.to_string()))?,
                );
            }
        }
    }
    if let Some(&first) = nonpositive.first() {
        let lines: Vec<String> = nonpositive.iter().map(|l| l.to_string()).collect();
        return Err(parse_err(first, format!("observations must be positive; rejected line(s) {}", lines.join(", "))));
    }
    Dataset::new(exact, censored, path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_each_kind() {
        let f = csv_file("y\n1\n2\n3\n");
        let d = load_csv(f.path(), CsvKind::Exact).unwrap();
        assert_eq!(d.exact.len(), 3);
        assert!(d.exact.iter().all(|o| o.weight == 1.0));

        let f = csv_file("y,weight\n1.5,2\n3,0.25\n");
        let d = load_csv(f.path(), CsvKind::Weighted).unwrap();
        assert_eq!(d.total_weight(), 2.25);

        let f = csv_file("lower,upper,weight\n5,inf,1\n0,2,3\n");
        let d = load_csv(f.path(), CsvKind::Censored).unwrap();
        assert!(d.censored[0].is_right_censored());
        assert_eq!(d.censored[0].lower, 5.0);
        assert_eq!(d.censored[1].lower, 0.0);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let f = csv_file("y\n0.0\n");
        let err = load_csv(f.path(), CsvKind::Exact).unwrap_err();
        assert!(matches!(err, NphError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line(s) 2"));

        let f = csv_file("y\n1\n-3\n2\n0\n");
        let err = load_csv(f.path(), CsvKind::Exact).unwrap_err().to_string();
        assert!(err.contains("3, 5"), "{err}");

        let f = csv_file("y\n1\nabc\n");
        assert!(matches!(load_csv(f.path(), CsvKind::Exact).unwrap_err(), NphError::Parse { line: 3, .. }));

        let f = csv_file("y,weight\n1,2\n");
        assert!(matches!(load_csv(f.path(), CsvKind::Exact).unwrap_err(), NphError::Parse { line: 1, .. }));

        let f = csv_file("lower,upper,weight\n3,2,1\n");
        assert!(load_csv(f.path(), CsvKind::Censored).is_err());
    }

    #[test]
    fn empty_and_missing_files() {
        let f = csv_file("");
        assert!(matches!(load_csv(f.path(), CsvKind::Exact).unwrap_err(), NphError::EmptyDataset(_)));
        let f = csv_file("y\n");
        assert!(matches!(load_csv(f.path(), CsvKind::Exact).unwrap_err(), NphError::EmptyDataset(_)));
        let err = load_csv(Path::new("/nonexistent/data.csv"), CsvKind::Exact).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"));
    }

    #[test]
    fn binning_examples() {
        let d = Dataset::from_values(&[0.1, 0.1, 9.0]).unwrap();
        let b = d.bin_body_tail(5.0, 10, Representative::Midpoint).unwrap();
        assert_eq!(
            b.exact,
            vec![WeightedObservation { y: 0.25, weight: 2.0 }, WeightedObservation { y: 9.0, weight: 1.0 }]
        );
        let d = Dataset::from_values(&[0.3, 1.0, 4.9]).unwrap();
        let b = d.bin_body_tail(5.0, 1, Representative::Midpoint).unwrap();
        assert_eq!(b.exact, vec![WeightedObservation { y: 2.5, weight: 3.0 }]);

        let d = Dataset::from_values(&[0.1, 0.7, 6.0, 6.0]).unwrap();
        let b = d.bin_body_tail(5.0, 10, Representative::LeftShifted).unwrap();
        let ys: Vec<f64> = b.exact.iter().map(|o| o.y).collect();
        assert_eq!(ys, vec![0.25, 0.5, 6.0]);
        assert_eq!(b.exact[2].weight, 2.0);
    }

    #[test]
    fn binning_preserves_weight_and_accepts_zero_in_body() {
        let values: Vec<(f64, f64)> = (0..500).map(|k| ((k % 37) as f64 * 0.31, 1.0)).collect();
        let b = bin_values(&values, 5.0, 17, Representative::Midpoint).unwrap();
        assert!((b.total_weight() - 500.0).abs() < 1e-12);
        assert!(b.exact.iter().all(|o| o.y > 0.0));
    }

    #[test]
    fn collapse_and_quantiles() {
        let d = Dataset::from_values(&[3.0, 1.0, 3.0, 2.0, 3.0]).unwrap();
        let c = d.collapse_duplicates();
        assert_eq!(c.exact.len(), 3);
        assert_eq!(c.exact[2], WeightedObservation { y: 3.0, weight: 3.0 });
        assert_eq!(d.weighted_quantile(0.5), Some(3.0));
        assert_eq!(d.weighted_quantile(0.2), Some(1.0));
        assert_eq!(c.weighted_quantile(0.5), Some(3.0));
    }
}
