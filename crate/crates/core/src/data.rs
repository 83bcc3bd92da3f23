//! Observed series and CSV ingestion.
//!
//! Two data shapes cover every estimator:
//!
//! * [`ObservationSet`] — public company: prices `P_0..P_T`, dividends
//!   `d_1..d_T`, covariates `c_1..c_T` with `c_{1t} = 1`.
//! * [`PrivateObservationSet`] — private company: book-growth rates
//!   `b_1..b_T`, dividend-to-book ratios `Δ_1..Δ_T` (empty for a
//!   non-dividend payer), covariates.
//!
//! CSV is the single ingestion format. Columns are selected by header name,
//! never by position, because quarterly vendor exports vary in ordering.
//! The constant covariate column is prepended automatically. `T` is always
//! inferred from the file; a length mismatch is an error, not a truncation.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Aligned public-company series. Prices are indexed `t = 0..T` (length
/// `T+1`); dividends and covariate rows are indexed `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    prices: Vec<f64>,
    dividends: Vec<f64>,
    covariates: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl ObservationSet {
    pub fn new(
        prices: Vec<f64>,
        dividends: Vec<f64>,
        covariates: DMatrix<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let t = dividends.len();
        if prices.len() != t + 1 {
            return Err(Error::Validation(format!(
                "expected {} prices for {} dividends, got {}",
                t + 1,
                t,
                prices.len()
            )));
        }
        if covariates.nrows() != t {
            return Err(Error::Validation(format!(
                "covariate matrix has {} rows, expected T = {}",
                covariates.nrows(),
                t
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::Validation("covariate matrix needs n >= 1 columns".into()));
        }
        if let Some(ref l) = labels {
            if l.len() != t {
                return Err(Error::Validation(format!(
                    "{} labels for T = {} periods",
                    l.len(),
                    t
                )));
            }
        }
        for (i, p) in prices.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::Validation(format!(
                    "price at t = {i} must be strictly positive and finite, got {p}"
                )));
            }
        }
        for (i, d) in dividends.iter().enumerate() {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(Error::Validation(format!(
                    "dividend at t = {} must be non-negative and finite, got {d}",
                    i + 1
                )));
            }
        }
        for t_idx in 0..t {
            if (covariates[(t_idx, 0)] - 1.0).abs() > 0.0 {
                return Err(Error::Validation(format!(
                    "first covariate column must be identically 1, found {} at t = {}",
                    covariates[(t_idx, 0)],
                    t_idx + 1
                )));
            }
        }
        Ok(Self {
            prices,
            dividends,
            covariates,
            labels,
        })
    }

    /// Number of observed transitions `T`.
    pub fn len(&self) -> usize {
        self.dividends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of covariates `n` (including the constant).
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn dividends(&self) -> &[f64] {
        &self.dividends
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Realized return series `k_t = (P_t + d_t) / P_{t-1} - 1` for `t = 1..T`.
    pub fn realized_returns(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| (self.prices[i + 1] + self.dividends[i]) / self.prices[i] - 1.0)
            .collect()
    }
}

/// Aligned private-company series, `t = 1..T` throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateObservationSet {
    book_growth: Vec<f64>,
    div_to_book: Vec<f64>,
    covariates: DMatrix<f64>,
    paying: bool,
    labels: Option<Vec<String>>,
}

impl PrivateObservationSet {
    pub fn new(
        book_growth: Vec<f64>,
        div_to_book: Vec<f64>,
        covariates: DMatrix<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let t = book_growth.len();
        if t == 0 {
            return Err(Error::Validation("need at least one observation".into()));
        }
        let paying = !div_to_book.is_empty();
        if paying && div_to_book.len() != t {
            return Err(Error::Validation(format!(
                "{} dividend-to-book ratios for T = {t} growth rates",
                div_to_book.len()
            )));
        }
        if covariates.nrows() != t || covariates.ncols() == 0 {
            return Err(Error::Validation(format!(
                "covariate matrix is {}x{}, expected {t}xn with n >= 1",
                covariates.nrows(),
                covariates.ncols()
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != t {
                return Err(Error::Validation(format!("{} labels for T = {t} periods", l.len())));
            }
        }
        for (i, b) in book_growth.iter().enumerate() {
            // Book value must stay positive, so growth is bounded below by -1.
            if !(b.is_finite() && *b > -1.0) {
                return Err(Error::Validation(format!(
                    "book growth at t = {} must be finite and exceed -1, got {b}",
                    i + 1
                )));
            }
        }
        for (i, d) in div_to_book.iter().enumerate() {
            if !(d.is_finite() && *d >= 0.0) {
                return Err(Error::Validation(format!(
                    "dividend-to-book ratio at t = {} must be non-negative, got {d}",
                    i + 1
                )));
            }
        }
        for t_idx in 0..t {
            if (covariates[(t_idx, 0)] - 1.0).abs() > 0.0 {
                return Err(Error::Validation(format!(
                    "first covariate column must be identically 1, found {} at t = {}",
                    covariates[(t_idx, 0)],
                    t_idx + 1
                )));
            }
        }
        Ok(Self {
            book_growth,
            div_to_book,
            covariates,
            paying,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.book_growth.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn paying(&self) -> bool {
        self.paying
    }

    pub fn book_growth(&self) -> &[f64] {
        &self.book_growth
    }

    pub fn div_to_book(&self) -> &[f64] {
        &self.div_to_book
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// Column mapping for [`load_public_csv`]. `dividend: None` reads every
/// dividend as zero (non-dividend payer).
#[derive(Debug, Clone, Default)]
pub struct PublicSchema {
    pub price: String,
    pub dividend: Option<String>,
    pub covariates: Vec<String>,
    pub label: Option<String>,
}

/// Column mapping for [`load_private_csv`]. `div_to_book: None` marks a
/// non-dividend payer.
#[derive(Debug, Clone, Default)]
pub struct PrivateSchema {
    pub growth: String,
    pub div_to_book: Option<String>,
    pub covariates: Vec<String>,
    pub label: Option<String>,
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    Ok(RawTable { headers, rows })
}

impl RawTable {
    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column '{name}' (headers: {:?})", self.headers)))
    }

    /// Numeric cell at `row` (0-based data row). Empty cells return `default`
    /// when one is given, otherwise an error naming the row.
    fn numeric(&self, row: usize, col: usize, name: &str, default: Option<f64>) -> Result<f64> {
        let cell = self.rows[row].get(col).map(String::as_str).unwrap_or("");
        if cell.is_empty() {
            return default.ok_or_else(|| {
                Error::Parse(format!("empty cell in column '{name}' at data row {}", row + 1))
            });
        }
        cell.parse::<f64>().map_err(|_| {
            Error::Parse(format!(
                "non-numeric cell '{cell}' in column '{name}' at data row {}",
                row + 1
            ))
        })
    }
}

/// Load a public-company file: `T+1` data rows, prices on every row,
/// dividends and covariates used from the second row on. Missing dividend
/// cells read as 0.
pub fn load_public_csv(path: impl AsRef<Path>, schema: &PublicSchema) -> Result<ObservationSet> {
    let table = read_table(path.as_ref())?;
    if table.rows.len() < 2 {
        return Err(Error::Parse(format!(
            "need at least 2 data rows (T >= 1), got {}",
            table.rows.len()
        )));
    }
    let t = table.rows.len() - 1;
    let price_col = table.column_index(&schema.price)?;
    let div_col = schema.dividend.as_deref().map(|n| table.column_index(n)).transpose()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|n| table.column_index(n).map(|i| (n.clone(), i)))
        .collect::<Result<Vec<_>>>()?;
    let label_col = schema.label.as_deref().map(|n| table.column_index(n)).transpose()?;

    let mut prices = Vec::with_capacity(t + 1);
    for row in 0..=t {
        let p = table.numeric(row, price_col, &schema.price, None)?;
        if !(p > 0.0) {
            return Err(Error::Parse(format!(
                "non-positive price {p} in column '{}' at data row {}",
                schema.price,
                row + 1
            )));
        }
        prices.push(p);
    }
    let mut dividends = vec![0.0; t];
    if let Some(col) = div_col {
        let name = schema.dividend.as_deref().unwrap();
        for row in 1..=t {
            dividends[row - 1] = table.numeric(row, col, name, Some(0.0))?;
        }
    }
    let mut covariates = DMatrix::from_element(t, 1 + cov_cols.len(), 1.0);
    for (j, (name, col)) in cov_cols.iter().enumerate() {
        for row in 1..=t {
            covariates[(row - 1, j + 1)] = table.numeric(row, *col, name, None)?;
        }
    }
    let labels = label_col.map(|col| {
        (1..=t)
            .map(|row| table.rows[row].get(col).cloned().unwrap_or_default())
            .collect()
    });
    ObservationSet::new(prices, dividends, covariates, labels)
}

/// Load a private-company file: `T` data rows, all columns aligned.
pub fn load_private_csv(
    path: impl AsRef<Path>,
    schema: &PrivateSchema,
) -> Result<PrivateObservationSet> {
    let table = read_table(path.as_ref())?;
    if table.rows.is_empty() {
        return Err(Error::Parse("file has no data rows".into()));
    }
    let t = table.rows.len();
    let growth_col = table.column_index(&schema.growth)?;
    let dtb_col = schema
        .div_to_book
        .as_deref()
        .map(|n| table.column_index(n))
        .transpose()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|n| table.column_index(n).map(|i| (n.clone(), i)))
        .collect::<Result<Vec<_>>>()?;
    let label_col = schema.label.as_deref().map(|n| table.column_index(n)).transpose()?;

    let mut book_growth = Vec::with_capacity(t);
    for row in 0..t {
        book_growth.push(table.numeric(row, growth_col, &schema.growth, None)?);
    }
    let mut div_to_book = Vec::new();
    if let Some(col) = dtb_col {
        let name = schema.div_to_book.as_deref().unwrap();
        for row in 0..t {
            div_to_book.push(table.numeric(row, col, name, Some(0.0))?);
        }
    }
    let mut covariates = DMatrix::from_element(t, 1 + cov_cols.len(), 1.0);
    for (j, (name, col)) in cov_cols.iter().enumerate() {
        for row in 0..t {
            covariates[(row, j + 1)] = table.numeric(row, *col, name, None)?;
        }
    }
    let labels = label_col.map(|col| {
        (0..t)
            .map(|row| table.rows[row].get(col).cloned().unwrap_or_default())
            .collect()
    });
    PrivateObservationSet::new(book_growth, div_to_book, covariates, labels)
}

/// Write a public-company set in the layout [`load_public_csv`] reads.
/// Floats are written in shortest round-trip form, so numeric content
/// survives a write/load cycle bit-exactly.
pub fn write_public_csv(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let n_extra = obs.n_covariates() - 1;
    let mut headers = vec!["price".to_string(), "dividend".to_string()];
    for j in 0..n_extra {
        headers.push(format!("c{}", j + 2));
    }
    if obs.labels().is_some() {
        headers.push("label".to_string());
    }
    writer.write_record(&headers)?;
    let empty_tail = 1 + n_extra + usize::from(obs.labels().is_some());
    let mut first = vec![format!("{}", obs.prices()[0])];
    first.extend(std::iter::repeat_n(String::new(), empty_tail));
    writer.write_record(&first)?;
    for t in 0..obs.len() {
        let mut row = vec![
            format!("{}", obs.prices()[t + 1]),
            format!("{}", obs.dividends()[t]),
        ];
        for j in 0..n_extra {
            row.push(format!("{}", obs.covariates()[(t, j + 1)]));
        }
        if let Some(labels) = obs.labels() {
            row.push(labels[t].clone());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a private-company set in the layout [`load_private_csv`] reads.
pub fn write_private_csv(path: impl AsRef<Path>, obs: &PrivateObservationSet) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let n_extra = obs.n_covariates() - 1;
    let mut headers = vec!["growth".to_string()];
    if obs.paying() {
        headers.push("div_to_book".to_string());
    }
    for j in 0..n_extra {
        headers.push(format!("c{}", j + 2));
    }
    if obs.labels().is_some() {
        headers.push("label".to_string());
    }
    writer.write_record(&headers)?;
    for t in 0..obs.len() {
        let mut row = vec![format!("{}", obs.book_growth()[t])];
        if obs.paying() {
            row.push(format!("{}", obs.div_to_book()[t]));
        }
        for j in 0..n_extra {
            row.push(format!("{}", obs.covariates()[(t, j + 1)]));
        }
        if let Some(labels) = obs.labels() {
            row.push(labels[t].clone());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
