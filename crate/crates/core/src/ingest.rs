//! Loading, fetching and aligning daily series.
//!
//! Every series travels as a two-column CSV (`date,value`, ISO dates). Chain
//! statistics can come from a fixture directory (offline, the default for
//! tests) or from a live charts endpoint when the `live` feature is enabled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// A named, strictly date-ordered series of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Builds a series from points in any order. Points are sorted by date;
    /// duplicate dates and non-finite values are rejected.
    pub fn from_points(
        name: impl Into<String>,
        mut points: Vec<(NaiveDate, f64)>,
    ) -> Result<Self> {
        let name = name.into();
        if let Some((date, value)) = points.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "series `{name}`: non-finite value {value} on {date}"
            )));
        }
        points.sort_by_key(|(d, _)| *d);
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!(
                "series `{name}`: duplicate date {}",
                w[0].0
            )));
        }
        let (dates, values) = points.into_iter().unzip();
        Ok(Self {
            name,
            dates,
            values,
        })
    }

    /// Builds a series from parallel vectors that must already be strictly increasing in date.
    pub fn new(name: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dates.len() != values.len() {
            return Err(Error::Size(format!(
                "series `{name}`: {} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "series `{name}`: dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "series `{name}`: non-finite value on {}",
                dates[i]
            )));
        }
        Ok(Self {
            name,
            dates,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates.iter().copied().zip(self.values.iter().copied())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Value on `date`, if observed.
    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.values[i])
    }

    /// Same series restricted to `start..=end`.
    pub fn clip(&self, start: NaiveDate, end: NaiveDate) -> Self {
        let (dates, values) = self
            .points()
            .filter(|(d, _)| *d >= start && *d <= end)
            .unzip();
        Self {
            name: self.name.clone(),
            dates,
            values,
        }
    }
}

/// Reads a `date,value` CSV. The header row is optional; an empty input is an empty series.
pub fn read_series<R: Read>(reader: R, name: &str) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if idx == 0 && record.get(0) == Some("date") {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT).map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let value: f64 = record[1].parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad value `{}`: {e}", &record[1]),
        })?;
        points.push((date, value));
    }
    TimeSeries::from_points(name, points)
}

/// Loads a series from a CSV file.
pub fn load_series(path: impl AsRef<Path>, name: &str) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    read_series(std::io::BufReader::new(file), name)
}

pub fn write_series_to<W: Write>(series: &TimeSeries, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(["date", "value"]).map_err(io)?;
    for (date, value) in series.points() {
        wtr.write_record([date.format(DATE_FORMAT).to_string(), value.to_string()])
            .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_series(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_series_to(series, std::io::BufWriter::new(file))
}

/// Column-aligned daily data with a designated target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dates: Vec<NaiveDate>,
    columns: BTreeMap<String, Vec<f64>>,
    target_name: String,
}

impl Dataset {
    pub fn new(
        dates: Vec<NaiveDate>,
        columns: BTreeMap<String, Vec<f64>>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let target_name = target_name.into();
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "dataset dates not strictly increasing at {}",
                w[1]
            )));
        }
        for (name, col) in &columns {
            if col.len() != dates.len() {
                return Err(Error::Size(format!(
                    "column `{name}` has {} values for {} dates",
                    col.len(),
                    dates.len()
                )));
            }
        }
        if !columns.contains_key(&target_name) {
            return Err(Error::NotFound(format!("target column `{target_name}`")));
        }
        Ok(Self {
            dates,
            columns,
            target_name,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target(&self) -> &[f64] {
        &self.columns[&self.target_name]
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("column `{name}`")))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn series(&self, name: &str) -> Result<TimeSeries> {
        TimeSeries::new(name, self.dates.clone(), self.column(name)?.to_vec())
    }

    /// Rows whose date satisfies `keep`, in order.
    pub fn filter_dates(&self, keep: impl Fn(NaiveDate) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.dates[i])).collect();
        Self {
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
            target_name: self.target_name.clone(),
        }
    }

    /// Loads `<dir>/<name>.csv` for the target and every feature, then aligns them.
    pub fn load_dir(
        dir: impl AsRef<Path>,
        target: &str,
        features: &[String],
        policy: AlignPolicy,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let mut names: Vec<&str> = vec![target];
        names.extend(features.iter().map(String::as_str).filter(|f| *f != target));
        let series = names
            .iter()
            .map(|n| load_series(dir.join(format!("{n}.csv")), n))
            .collect::<Result<Vec<_>>>()?;
        align(&series, policy, target)
    }

    /// Writes one `<column>.csv` per column into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for name in self.columns.keys() {
            write_series(&self.series(name)?, dir.join(format!("{name}.csv")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignPolicy {
    Intersect,
    /// Union of dates over the common span; a missing day takes the last
    /// observed value if it is at most `max_gap_days` old.
    ForwardFill { max_gap_days: u32 },
}

impl Default for AlignPolicy {
    fn default() -> Self {
        AlignPolicy::ForwardFill { max_gap_days: 3 }
    }
}

/// Aligns series onto common dates. The result does not depend on the order of `series`.
pub fn align(series: &[TimeSeries], policy: AlignPolicy, target: &str) -> Result<Dataset> {
    if series.is_empty() {
        return Err(Error::Alignment("no series to align".into()));
    }
    let mut seen = BTreeSet::new();
    for s in series {
        if !seen.insert(s.name()) {
            return Err(Error::Validation(format!("duplicate series name `{}`", s.name())));
        }
    }
    if let Some(s) = series.iter().find(|s| s.is_empty()) {
        return Err(Error::Alignment(format!("series `{}` is empty", s.name())));
    }

    let dates: Vec<NaiveDate> = match policy {
        AlignPolicy::Intersect => {
            let mut common: BTreeSet<NaiveDate> = series[0].dates().iter().copied().collect();
            for s in &series[1..] {
                let other: BTreeSet<NaiveDate> = s.dates().iter().copied().collect();
                common = common.intersection(&other).copied().collect();
            }
            common.into_iter().collect()
        }
        AlignPolicy::ForwardFill { .. } => {
            let start = series.iter().map(|s| s.dates()[0]).max().unwrap();
            let end = series.iter().map(|s| *s.dates().last().unwrap()).min().unwrap();
            let all: BTreeSet<NaiveDate> = series
                .iter()
                .flat_map(|s| s.dates().iter().copied())
                .filter(|d| *d >= start && *d <= end)
                .collect();
            all.into_iter().collect()
        }
    };
    if dates.is_empty() {
        return Err(Error::Alignment("series share no common dates".into()));
    }

    let mut columns = BTreeMap::new();
    for s in series {
        let col = match policy {
            AlignPolicy::Intersect => dates.iter().map(|d| s.get(*d).unwrap()).collect(),
            AlignPolicy::ForwardFill { max_gap_days } => forward_fill(s, &dates, max_gap_days)?,
        };
        columns.insert(s.name().to_string(), col);
    }
    Dataset::new(dates, columns, target)
}

fn forward_fill(series: &TimeSeries, dates: &[NaiveDate], max_gap_days: u32) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dates.len());
    let mut cursor = 0;
    let mut last: Option<(NaiveDate, f64)> = None;
    for &date in dates {
        while cursor < series.len() && series.dates()[cursor] <= date {
            last = Some((series.dates()[cursor], series.values()[cursor]));
            cursor += 1;
        }
        match last {
            Some((seen, value)) if (date - seen).num_days() <= i64::from(max_gap_days) => {
                out.push(value)
            }
            Some((seen, _)) => {
                return Err(Error::Alignment(format!(
                    "series `{}` has a {}-day gap before {date} (max {max_gap_days})",
                    series.name(),
                    (date - seen).num_days()
                )))
            }
            None => {
                return Err(Error::Alignment(format!(
                    "series `{}` has no value on or before {date}",
                    series.name()
                )))
            }
        }
    }
    Ok(out)
}

/// Chain statistics served by the charts endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMetric {
    TotalBitcoins,
    MarketPrice,
    TradeVolume,
    Difficulty,
    NUniqueAddresses,
}

impl ChainMetric {
    pub const ALL: [ChainMetric; 5] = [
        ChainMetric::TotalBitcoins,
        ChainMetric::MarketPrice,
        ChainMetric::TradeVolume,
        ChainMetric::Difficulty,
        ChainMetric::NUniqueAddresses,
    ];

    /// Identifier used by the endpoint and for fixture file names.
    pub fn as_str(self) -> &'static str {
        match self {
            ChainMetric::TotalBitcoins => "total-bitcoins",
            ChainMetric::MarketPrice => "market-price",
            ChainMetric::TradeVolume => "trade-volume",
            ChainMetric::Difficulty => "difficulty",
            ChainMetric::NUniqueAddresses => "n-unique-addresses",
        }
    }

    /// Column name used in model datasets.
    pub fn column_name(self) -> &'static str {
        match self {
            ChainMetric::TotalBitcoins => "total_bitcoins",
            ChainMetric::MarketPrice => "price",
            ChainMetric::TradeVolume => "volume",
            ChainMetric::Difficulty => "difficulty",
            ChainMetric::NUniqueAddresses => "n_unique_addresses",
        }
    }
}

impl fmt::Display for ChainMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChainMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChainMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown metric `{s}`; expected one of {}",
                    ChainMetric::ALL.map(|m| m.as_str()).join(", ")
                ))
            })
    }
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::Usage(format!("empty date range {start}..{end}")));
        }
        Ok(Self { start, end })
    }
}

pub const ENV_BASE_URL: &str = "PIVOTFIT_STAT_BASE_URL";
pub const ENV_TIMEOUT: &str = "PIVOTFIT_STAT_TIMEOUT_SECS";
pub const ENV_FIXTURE_DIR: &str = "PIVOTFIT_FIXTURE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatClientConfig {
    pub base_url: Option<String>,
    pub timeout_secs: u64,
    /// When set, series are read from `<fixture_dir>/<metric>.csv` and the network is never touched.
    pub fixture_dir: Option<PathBuf>,
}

impl Default for StatClientConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            timeout_secs: 30,
            fixture_dir: None,
        }
    }
}

impl StatClientConfig {
    pub fn fixtures(dir: impl Into<PathBuf>) -> Self {
        Self {
            fixture_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn live(base_url: impl Into<String>) -> Self {
        Self {
            base_url: Some(base_url.into()),
            ..Self::default()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies `PIVOTFIT_*` overrides using the given lookup (normally `std::env::var`).
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(url) = lookup(ENV_BASE_URL) {
            self.base_url = Some(url);
        }
        if let Some(t) = lookup(ENV_TIMEOUT) {
            self.timeout_secs = t
                .parse()
                .map_err(|_| Error::Usage(format!("{ENV_TIMEOUT}: not an integer: `{t}`")))?;
        }
        if let Some(dir) = lookup(ENV_FIXTURE_DIR) {
            self.fixture_dir = Some(dir.into());
        }
        Ok(self)
    }
}

/// Fetches a daily chain statistic.
///
/// Fixture mode returns exactly what [`load_series`] gives for
/// `<fixture_dir>/<metric>.csv`; live mode downloads the full chart and clips it to `range`.
pub fn fetch_chain_stat(
    metric: &str,
    range: DateRange,
    client: &StatClientConfig,
) -> Result<TimeSeries> {
    let metric: ChainMetric = metric.parse()?;
    if let Some(dir) = &client.fixture_dir {
        return load_series(dir.join(format!("{metric}.csv")), metric.as_str());
    }
    match &client.base_url {
        Some(base) => fetch_live(metric, range, base, client.timeout_secs),
        None => Err(Error::Usage(
            "stat client needs either a fixture directory or a base URL".into(),
        )),
    }
}

#[cfg(feature = "live")]
fn fetch_live(
    metric: ChainMetric,
    range: DateRange,
    base: &str,
    timeout_secs: u64,
) -> Result<TimeSeries> {
    use std::time::Duration;

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .build()
        .into();
    let url = format!(
        "{}/charts/{metric}?timespan=all&sampled=false&format=json",
        base.trim_end_matches('/')
    );
    let transport = |e: ureq::Error| match e {
        ureq::Error::StatusCode(status) => Error::Transport {
            status: Some(status),
            message: format!("GET {url} failed"),
        },
        other => Error::Transport {
            status: None,
            message: format!("GET {url}: {other}"),
        },
    };
    let body = agent
        .get(&url)
        .call()
        .map_err(transport)?
        .body_mut()
        .read_to_string()
        .map_err(transport)?;
    let series = parse_chart_json(&body, metric.as_str())?;
    Ok(series.clip(range.start, range.end))
}

#[cfg(not(feature = "live"))]
fn fetch_live(
    metric: ChainMetric,
    _range: DateRange,
    base: &str,
    _timeout_secs: u64,
) -> Result<TimeSeries> {
    Err(Error::Transport {
        status: None,
        message: format!("cannot fetch {metric} from {base}: built without the `live` feature"),
    })
}

/// Parses the charts payload `{"values": [{"x": unix_seconds, "y": value}, ...]}`.
/// Several samples on one UTC day keep the last one.
pub fn parse_chart_json(body: &str, name: &str) -> Result<TimeSeries> {
    #[derive(Deserialize)]
    struct Chart {
        values: Vec<ChartPoint>,
    }
    #[derive(Deserialize)]
    struct ChartPoint {
        x: i64,
        y: f64,
    }

    let chart: Chart = serde_json::from_str(body)?;
    let mut by_day = BTreeMap::new();
    for p in chart.values {
        let date = chrono::DateTime::from_timestamp(p.x, 0)
            .ok_or_else(|| Error::Validation(format!("timestamp {} out of range", p.x)))?
            .date_naive();
        by_day.insert(date, p.y);
    }
    TimeSeries::from_points(name, by_day.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn day(n: i64) -> NaiveDate {
        d("2017-01-01") + chrono::Duration::days(n - 1)
    }

    fn series(name: &str, days: impl IntoIterator<Item = i64>) -> TimeSeries {
        let pts = days.into_iter().map(|n| (day(n), n as f64)).collect();
        TimeSeries::from_points(name, pts).unwrap()
    }

    #[test]
    fn reads_two_rows() {
        let s = read_series("date,value\n2017-01-01,1.0\n2017-01-02,2.0\n".as_bytes(), "x").unwrap();
        assert_eq!(s.dates(), &[d("2017-01-01"), d("2017-01-02")]);
        assert_eq!(s.values(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_input_is_empty_series() {
        assert!(read_series("".as_bytes(), "x").unwrap().is_empty());
        assert!(read_series("date,value\n".as_bytes(), "x").unwrap().is_empty());
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let s = read_series("2017-01-02,2\n2017-01-01,1\n".as_bytes(), "x").unwrap();
        let mut expected = vec![(d("2017-01-02"), 2.0), (d("2017-01-01"), 1.0)];
        expected.sort_by_key(|p| p.0);
        assert_eq!(s.points().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read_series("date,value\n2017-01-01,1\n2017-01-02,abc\n".as_bytes(), "x")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = read_series("2017-13-01,1\n".as_bytes(), "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_and_non_finite_rejected() {
        let dup = read_series("2017-01-01,1\n2017-01-01,2\n".as_bytes(), "x").unwrap_err();
        assert!(matches!(dup, Error::Validation(_)));
        let nan = read_series("2017-01-01,NaN\n".as_bytes(), "x").unwrap_err();
        assert!(matches!(nan, Error::Validation(_)));
        let inf = read_series("2017-01-01,inf\n".as_bytes(), "x").unwrap_err();
        assert!(matches!(inf, Error::Validation(_)));
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load_series("/nonexistent/dir/x.csv", "x").unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn align_identical_dates() {
        let a = series("a", 1..=5);
        let b = series("b", 1..=5).with_name("b");
        let ds = align(&[a.clone(), b], AlignPolicy::Intersect, "a").unwrap();
        assert_eq!(ds.dates(), a.dates());
        assert_eq!(ds.column_names().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn align_intersects_ranges() {
        let a = series("a", 1..=10);
        let b = series("b", 5..=15);
        let ds = align(&[a, b], AlignPolicy::Intersect, "a").unwrap();
        assert_eq!(ds.dates(), (5..=10).map(day).collect::<Vec<_>>());
        assert_eq!(ds.column("b").unwrap(), &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn align_forward_fills_short_gap() {
        let a = series("a", 1..=10);
        let b = series("b", (1..=10).filter(|&n| n != 7));
        let ds = align(&[a, b], AlignPolicy::ForwardFill { max_gap_days: 2 }, "a").unwrap();
        assert_eq!(ds.len(), 10);
        let b = ds.column("b").unwrap();
        assert_eq!(b[6], 6.0);
        assert_eq!(b[7], 8.0);
    }

    #[test]
    fn align_rejects_long_gap_and_names_it() {
        let a = series("a", 1..=10);
        let b = series("b", [1, 2, 3, 8, 9, 10]);
        let err = align(&[a, b], AlignPolicy::ForwardFill { max_gap_days: 2 }, "a").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Alignment(_)));
        assert!(msg.contains("`b`") && msg.contains("2017-01-06"), "{msg}");
    }

    #[test]
    fn align_empty_intersection() {
        let err = align(
            &[series("a", 1..=3), series("b", 4..=6)],
            AlignPolicy::Intersect,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("difficulty".parse::<ChainMetric>().unwrap(), ChainMetric::Difficulty);
        assert!("hashcats".parse::<ChainMetric>().unwrap_err().is_usage());
    }

    #[test]
    fn env_overrides_config() {
        let cfg = StatClientConfig::live("http://a")
            .with_env(|k| match k {
                ENV_BASE_URL => Some("http://b".into()),
                ENV_TIMEOUT => Some("7".into()),
                _ => None,
            })
            .unwrap();
        assert_eq!(cfg.base_url.as_deref(), Some("http://b"));
        assert_eq!(cfg.timeout_secs, 7);
        assert!(cfg.fixture_dir.is_none());
    }

    #[test]
    fn chart_json_keeps_last_sample_per_day() {
        let body = r#"{"values":[{"x":1483228800,"y":1.0},{"x":1483272000,"y":1.5},{"x":1483315200,"y":2.0}]}"#;
        let s = parse_chart_json(body, "m").unwrap();
        assert_eq!(s.points().collect::<Vec<_>>(), [(day(1), 1.5), (day(2), 2.0)]);
    }
}
