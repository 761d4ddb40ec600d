//! Streaming CSV ingestion: column selection, one-hot categorical blocks,
//! optional per-column affine transforms, missing-row dropping and logistic
//! label mapping. Rows are read and converted one at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use rwsgd::{ModelKind, Observation};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A column named in the header, or a 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// All-digit strings are 1-based positions; anything else is a header name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) if i > 0 => ColumnRef::Index(i),
            _ => ColumnRef::Name(s.to_string()),
        }
    }

    fn resolve(&self, headers: Option<&csv::StringRecord>) -> Result<usize, CliError> {
        match (self, headers) {
            (ColumnRef::Index(i), _) => Ok(i - 1),
            (ColumnRef::Name(name), Some(h)) => h
                .iter()
                .position(|c| c.trim() == name)
                .ok_or_else(|| CliError::Config(format!("unknown column `{name}`"))),
            (ColumnRef::Name(name), None) => Err(CliError::Config(format!(
                "column `{name}` referenced by name but the file has no header"
            ))),
        }
    }

    fn label(&self, headers: Option<&csv::StringRecord>, idx: usize) -> String {
        match self {
            ColumnRef::Name(n) => n.clone(),
            ColumnRef::Index(_) => headers
                .and_then(|h| h.get(idx))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| format!("col{}", idx + 1)),
        }
    }
}

/// How a raw categorical field maps onto a category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CategoryRule {
    /// The trimmed field is the label.
    Exact,
    /// A clock time (`HH:MM[:SS]`) or integer hour binned into `width`-hour
    /// labels `"0-2"`, `"3-5"`, ...
    HourBins { width: u32 },
}

impl CategoryRule {
    fn label(&self, raw: &str) -> Option<String> {
        match self {
            CategoryRule::Exact => Some(raw.to_string()),
            CategoryRule::HourBins { width } => {
                let hour: u32 = raw.split(':').next()?.trim().parse().ok()?;
                if hour > 23 || *width == 0 {
                    return None;
                }
                let lo = hour / width * width;
                Some(format!("{}-{}", lo, (lo + width - 1).min(23)))
            }
        }
    }

    /// Every label the rule can produce, where that set is finite and known.
    pub fn all_labels(&self) -> Option<Vec<String>> {
        match self {
            CategoryRule::Exact => None,
            CategoryRule::HourBins { width } if *width > 0 => Some(
                (0..24)
                    .step_by(*width as usize)
                    .map(|lo| format!("{}-{}", lo, (lo + width - 1).min(23)))
                    .collect(),
            ),
            CategoryRule::HourBins { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub column: ColumnRef,
    /// Declared categories, in block order. Empty means "derive from the rule".
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default = "exact_rule")]
    pub rule: CategoryRule,
}

fn exact_rule() -> CategoryRule {
    CategoryRule::Exact
}

impl CategoricalSpec {
    /// Parses `column`, `column:a|b|c` or `column@hours3`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if let Some((col, rule)) = s.split_once('@') {
            let width = rule
                .strip_prefix("hours")
                .and_then(|w| w.parse::<u32>().ok())
                .filter(|w| (1..=24).contains(w))
                .ok_or_else(|| CliError::Config(format!("bad categorical rule `{rule}` (expected hoursN)")))?;
            return Ok(CategoricalSpec {
                column: ColumnRef::parse(col),
                categories: Vec::new(),
                rule: CategoryRule::HourBins { width },
            });
        }
        let (col, cats) = match s.split_once(':') {
            Some((c, list)) => (c, list.split('|').map(|v| v.trim().to_string()).collect()),
            None => (s, Vec::new()),
        };
        Ok(CategoricalSpec {
            column: ColumnRef::parse(col),
            categories: cats,
            rule: CategoryRule::Exact,
        })
    }

    fn resolved_categories(&self) -> Result<Vec<String>, CliError> {
        if !self.categories.is_empty() {
            return Ok(self.categories.clone());
        }
        self.rule.all_labels().ok_or_else(|| {
            CliError::Config(format!(
                "categorical column {:?} needs declared categories (or a discovery pass)",
                self.column
            ))
        })
    }
}

/// Affine transform `(value - shift) / scale` for one numeric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionSpec {
    pub response: ColumnRef,
    #[serde(default)]
    pub covariates: Vec<ColumnRef>,
    #[serde(default)]
    pub categorical: Vec<CategoricalSpec>,
    #[serde(default)]
    pub intercept: bool,
    #[serde(default = "yes")]
    pub has_header: bool,
    #[serde(default = "default_missing")]
    pub missing_tokens: Vec<String>,
    /// Raw response label -> -1/+1, for the logistic model.
    #[serde(default)]
    pub label_mapping: Option<BTreeMap<String, f64>>,
    /// Keyed by covariate label (header name or `colN`).
    #[serde(default)]
    pub transforms: BTreeMap<String, Affine>,
}

fn yes() -> bool {
    true
}

fn default_missing() -> Vec<String> {
    ["", "?", "NA", "NaN", "nan", "null"].iter().map(|s| s.to_string()).collect()
}

impl IngestionSpec {
    pub fn new(response: ColumnRef) -> Self {
        IngestionSpec {
            response,
            covariates: Vec::new(),
            categorical: Vec::new(),
            intercept: false,
            has_header: true,
            missing_tokens: default_missing(),
            label_mapping: None,
            transforms: BTreeMap::new(),
        }
    }

    /// Parses `label=value` pairs such as `banana=1,wine=-1`.
    pub fn parse_label_mapping(s: &str) -> Result<BTreeMap<String, f64>, CliError> {
        s.split(',')
            .map(|pair| {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("bad label mapping `{pair}` (expected label=+1/-1)")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .ok()
                    .filter(|v| *v == 1.0 || *v == -1.0)
                    .ok_or_else(|| CliError::Config(format!("label `{k}` must map to 1 or -1")))?;
                Ok((k.trim().to_string(), v))
            })
            .collect()
    }

    /// Reads a `column,shift,scale` transform file.
    pub fn load_transforms(path: &Path) -> Result<BTreeMap<String, Affine>, CliError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| CliError::Config(format!("transform file {}: {e}", path.display())))?;
        let mut out = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Config(format!("transform file: {e}")))?;
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let shift: f64 = get(1)
                .parse()
                .map_err(|_| CliError::Config(format!("transform for `{}`: bad shift", get(0))))?;
            let scale: f64 = get(2)
                .parse()
                .ok()
                .filter(|s: &f64| *s != 0.0 && s.is_finite())
                .ok_or_else(|| CliError::Config(format!("transform for `{}`: scale must be finite and nonzero", get(0))))?;
            out.insert(get(0).to_string(), Affine { shift, scale });
        }
        Ok(out)
    }
}

/// Row accounting for one ingestion pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_emitted: u64,
    pub rows_skipped_missing: u64,
    pub rows_skipped_unparseable: u64,
    pub rows_skipped_unknown_category: u64,
}

impl IngestStats {
    pub fn rows_skipped(&self) -> u64 {
        self.rows_skipped_missing + self.rows_skipped_unparseable + self.rows_skipped_unknown_category
    }

    pub fn add(&mut self, other: &IngestStats) {
        self.rows_read += other.rows_read;
        self.rows_emitted += other.rows_emitted;
        self.rows_skipped_missing += other.rows_skipped_missing;
        self.rows_skipped_unparseable += other.rows_skipped_unparseable;
        self.rows_skipped_unknown_category += other.rows_skipped_unknown_category;
    }
}

struct NumericColumn {
    index: usize,
    transform: Option<Affine>,
}

struct CategoricalColumn {
    index: usize,
    rule: CategoryRule,
    categories: Vec<String>,
}

enum Row {
    Emit(Observation),
    Missing,
    Unparseable,
    UnknownCategory,
}

/// Iterator of observations over one CSV file. Iterate it by reference
/// (`reader.by_ref()`) to read [`stats`](Self::stats) afterwards.
pub struct ObservationReader {
    records: csv::StringRecordsIntoIter<File>,
    response: usize,
    numeric: Vec<NumericColumn>,
    categorical: Vec<CategoricalColumn>,
    intercept: bool,
    missing: BTreeSet<String>,
    labels: Option<BTreeMap<String, f64>>,
    model: ModelKind,
    names: Vec<String>,
    stats: IngestStats,
    path: PathBuf,
    failed: bool,
}

/// Opens `path` for streaming ingestion under `spec`.
pub fn ingest_csv(path: &Path, spec: &IngestionSpec, model: &ModelKind) -> Result<ObservationReader, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers = if spec.has_header {
        Some(
            rdr.headers()
                .map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?
                .clone(),
        )
    } else {
        None
    };
    let h = headers.as_ref();

    let response = spec.response.resolve(h)?;
    let mut names = Vec::new();
    if spec.intercept {
        names.push("intercept".to_string());
    }
    let mut numeric = Vec::new();
    for c in &spec.covariates {
        let index = c.resolve(h)?;
        if index == response {
            return Err(CliError::Config(format!("response column {:?} is also a covariate", c)));
        }
        let label = c.label(h, index);
        numeric.push(NumericColumn {
            index,
            transform: spec.transforms.get(&label).copied(),
        });
        names.push(label);
    }
    let mut categorical = Vec::new();
    for cat in &spec.categorical {
        let index = cat.column.resolve(h)?;
        if index == response {
            return Err(CliError::Config(format!("response column {:?} is also a covariate", cat.column)));
        }
        let label = cat.column.label(h, index);
        let categories = cat.resolved_categories()?;
        names.extend(categories.iter().map(|c| format!("{label} {c}")));
        categorical.push(CategoricalColumn {
            index,
            rule: cat.rule.clone(),
            categories,
        });
    }
    if names.is_empty() {
        return Err(CliError::Config("no covariates selected".into()));
    }
    if let Some(bad) = spec.transforms.keys().find(|k| !names.contains(k)) {
        return Err(CliError::Config(format!("transform refers to unknown covariate `{bad}`")));
    }

    Ok(ObservationReader {
        records: rdr.into_records(),
        response,
        numeric,
        categorical,
        intercept: spec.intercept,
        missing: spec.missing_tokens.iter().cloned().collect(),
        labels: spec.label_mapping.clone(),
        model: *model,
        names,
        stats: IngestStats::default(),
        path: path.to_path_buf(),
        failed: false,
    })
}

impl ObservationReader {
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    /// Covariate names in observation order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    fn convert(&self, rec: &csv::StringRecord) -> Result<Row, CliError> {
        let field = |i: usize| rec.get(i).filter(|v| !self.missing.contains(*v));

        let Some(raw_y) = field(self.response) else {
            return Ok(Row::Missing);
        };
        let y = match (&self.model, &self.labels) {
            (ModelKind::Logistic, Some(map)) => *map.get(raw_y).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}: label `{raw_y}` is not in the label mapping",
                    self.path.display(),
                    self.stats.rows_read
                ))
            })?,
            (ModelKind::Logistic, None) => match raw_y.parse::<f64>() {
                Ok(v) if v == 1.0 || v == -1.0 => v,
                _ => {
                    return Err(CliError::Data(format!(
                        "{}: row {}: logistic label `{raw_y}` is not -1/+1 (use a label mapping)",
                        self.path.display(),
                        self.stats.rows_read
                    )))
                }
            },
            _ => match raw_y.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return Ok(Row::Unparseable),
            },
        };

        let mut x = Vec::with_capacity(self.names.len());
        if self.intercept {
            x.push(1.0);
        }
        for col in &self.numeric {
            let Some(raw) = field(col.index) else {
                return Ok(Row::Missing);
            };
            let Ok(v) = raw.parse::<f64>() else {
                return Ok(Row::Unparseable);
            };
            if !v.is_finite() {
                return Ok(Row::Unparseable);
            }
            x.push(match col.transform {
                Some(t) => (v - t.shift) / t.scale,
                None => v,
            });
        }
        for col in &self.categorical {
            let Some(raw) = field(col.index) else {
                return Ok(Row::Missing);
            };
            let Some(label) = col.rule.label(raw) else {
                return Ok(Row::UnknownCategory);
            };
            let Some(hit) = col.categories.iter().position(|c| *c == label) else {
                return Ok(Row::UnknownCategory);
            };
            let start = x.len();
            x.resize(start + col.categories.len(), 0.0);
            x[start + hit] = 1.0;
        }
        Ok(Row::Emit(Observation::new(y, x)))
    }
}

impl Iterator for ObservationReader {
    type Item = Result<Observation, CliError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let rec = match self.records.next()? {
                Ok(r) => r,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(CliError::Data(format!("{}: {e}", self.path.display()))));
                }
            };
            self.stats.rows_read += 1;
            match self.convert(&rec) {
                Ok(Row::Emit(z)) => {
                    self.stats.rows_emitted += 1;
                    return Some(Ok(z));
                }
                Ok(Row::Missing) => self.stats.rows_skipped_missing += 1,
                Ok(Row::Unparseable) => self.stats.rows_skipped_unparseable += 1,
                Ok(Row::UnknownCategory) => self.stats.rows_skipped_unknown_category += 1,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Separate pass collecting the distinct labels of one categorical column,
/// in first-seen order. Use only when categories cannot be declared upfront.
pub fn discover_categories(path: &Path, spec: &IngestionSpec, cat: &CategoricalSpec) -> Result<Vec<String>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers = if spec.has_header {
        Some(rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone())
    } else {
        None
    };
    let index = cat.column.resolve(headers.as_ref())?;
    let missing: BTreeSet<&str> = spec.missing_tokens.iter().map(String::as_str).collect();
    let mut seen = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        if let Some(label) = rec
            .get(index)
            .filter(|v| !missing.contains(v))
            .and_then(|v| cat.rule.label(v))
        {
            if !seen.contains(&label) {
                seen.push(label);
            }
        }
    }
    Ok(seen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn collect(reader: &mut ObservationReader) -> Vec<Observation> {
        reader.by_ref().collect::<Result<Vec<_>, _>>().unwrap()
    }

    #[test]
    fn drops_rows_with_missing_fields() {
        let f = write_csv("y,a,b\n1,2,3\n4,,6\n7,8,9\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("y"));
        spec.covariates = vec![ColumnRef::parse("a"), ColumnRef::parse("b")];
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::LeastSquares).unwrap();
        let obs = collect(&mut r);
        assert_eq!(obs.len(), 2);
        let s = r.stats();
        assert_eq!((s.rows_read, s.rows_emitted, s.rows_skipped()), (3, 2, 1));
        assert_eq!(obs[1].x.as_slice(), &[8.0, 9.0]);
    }

    #[test]
    fn one_hot_hour_bins() {
        let f = write_csv("Date;Time;Sub\n16/12/2006;01:24:00;0\n16/12/2006;17:30:00;2\n16/12/2006;?;1\n".replace(';', ",").as_str());
        let mut spec = IngestionSpec::new(ColumnRef::parse("Sub"));
        spec.categorical = vec![CategoricalSpec::parse("Time@hours3").unwrap()];
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::LeastSquares).unwrap();
        assert_eq!(r.dim(), 8);
        assert_eq!(r.names()[0], "Time 0-2");
        assert_eq!(r.names()[7], "Time 21-23");
        let obs = collect(&mut r);
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].x.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(obs[1].x[5], 1.0);
        for z in &obs {
            assert_eq!(z.x.iter().filter(|v| **v == 1.0).count(), 1);
        }
        assert_eq!(r.stats().rows_skipped_missing, 1);
    }

    #[test]
    fn declared_categories_and_unknown_values() {
        let cats = "0-2|3-5|6-8|9-11|12-14|15-17|18-20|21-23";
        let f = write_csv("t,y\n0-2,1\n3-5,2\nnoon,3\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("y"));
        spec.categorical = vec![CategoricalSpec::parse(&format!("t:{cats}")).unwrap()];
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::LeastSquares).unwrap();
        let obs = collect(&mut r);
        assert_eq!(obs[0].x.len(), 8);
        assert_eq!(obs[0].x[0], 1.0);
        assert_eq!(r.stats().rows_skipped_unknown_category, 1);
    }

    #[test]
    fn logistic_label_mapping() {
        let f = write_csv("class,r1\nbanana,0.5\nwine,0.1\nbanana,0.2\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("class"));
        spec.covariates = vec![ColumnRef::parse("r1")];
        spec.label_mapping = Some(IngestionSpec::parse_label_mapping("banana=1,wine=-1").unwrap());
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::Logistic).unwrap();
        let ys: Vec<f64> = collect(&mut r).iter().map(|z| z.y).collect();
        assert_eq!(ys, vec![1.0, -1.0, 1.0]);

        let f = write_csv("class,r1\nbanana,0.5\nbackground,0.1\n");
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::Logistic).unwrap();
        assert!(r.next().unwrap().is_ok());
        assert!(matches!(r.next(), Some(Err(CliError::Data(_)))));
        assert!(r.next().is_none());
    }

    #[test]
    fn unknown_column_and_overlap_are_config_errors() {
        let f = write_csv("y,a\n1,2\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("y"));
        spec.covariates = vec![ColumnRef::parse("zzz")];
        assert!(matches!(ingest_csv(f.path(), &spec, &ModelKind::LeastSquares), Err(CliError::Config(_))));
        spec.covariates = vec![ColumnRef::parse("y")];
        assert!(matches!(ingest_csv(f.path(), &spec, &ModelKind::LeastSquares), Err(CliError::Config(_))));
    }

    #[test]
    fn positional_columns_intercept_and_transforms() {
        let f = write_csv("5,10,x\n7,20,y\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("1"));
        spec.has_header = false;
        spec.intercept = true;
        spec.covariates = vec![ColumnRef::parse("2")];
        spec.transforms.insert("col2".into(), Affine { shift: 10.0, scale: 5.0 });
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::LeastSquares).unwrap();
        let obs = collect(&mut r);
        assert_eq!(r.names(), &["intercept".to_string(), "col2".to_string()]);
        assert_eq!(obs[0].x.as_slice(), &[1.0, 0.0]);
        assert_eq!(obs[1].x.as_slice(), &[1.0, 2.0]);
        assert_eq!(obs[1].y, 7.0);
    }

    #[test]
    fn unparseable_numbers_are_skipped_and_counted() {
        let f = write_csv("y,a\n1,2\nabc,3\n2,x7\n3,4\n");
        let mut spec = IngestionSpec::new(ColumnRef::parse("y"));
        spec.covariates = vec![ColumnRef::parse("a")];
        let mut r = ingest_csv(f.path(), &spec, &ModelKind::LeastSquares).unwrap();
        assert_eq!(collect(&mut r).len(), 2);
        let s = r.stats();
        assert_eq!(s.rows_skipped_unparseable, 2);
        assert_eq!(s.rows_emitted + s.rows_skipped(), s.rows_read);
    }

    #[test]
    fn discovery_pass_lists_labels_in_order() {
        let f = write_csv("g,y\nb,1\na,2\nb,3\n?,4\n");
        let spec = IngestionSpec::new(ColumnRef::parse("y"));
        let cat = CategoricalSpec::parse("g").unwrap();
        assert_eq!(discover_categories(f.path(), &spec, &cat).unwrap(), vec!["b", "a"]);
    }
}
