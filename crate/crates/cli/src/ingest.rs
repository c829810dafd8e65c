//! CSV ingestion: maps named columns onto a trial dataset, expanding
//! categorical covariates to one-hot indicators and applying a missing-value
//! policy. Time, event and treatment must be complete in every row; only
//! covariates may be imputed.

use crate::{fail, AppResult};
use augsurv::Dataset;
use clap::ValueEnum;
use std::collections::BTreeMap;
use std::path::Path;

/// What to do when a covariate value is missing (empty field or `NA`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingPolicy {
    /// Reject the file at the first missing covariate value.
    Fail,
    /// Fill with the median of the observed values (continuous) or the most
    /// frequent level (categorical), and report how many values were filled.
    MedianImpute,
}

/// Which columns play which role in the analysis.
pub struct ColumnRoles<'a> {
    pub time: &'a str,
    pub event: &'a str,
    pub treatment: &'a str,
    pub continuous: &'a [String],
    pub categorical: &'a [String],
}

/// Parsed dataset plus the bookkeeping the caller reports to the user.
#[derive(Debug)]
pub struct Ingested {
    pub data: Dataset,
    /// Design matrix columns: continuous covariates in the order given, then
    /// one `col=level` indicator per non-reference level of each categorical
    /// covariate (levels sorted; the alphabetically first is the reference).
    pub design_columns: Vec<String>,
    pub n_imputed: usize,
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw == "NA"
}

fn parse_number(raw: &str, line: u64, column: &str) -> AppResult<f64> {
    raw.parse::<f64>()
        .map_err(|_| fail(format!("line {line}: column {column:?}: cannot parse {raw:?} as a number")))
}

fn parse_indicator(raw: &str, line: u64, column: &str, what: &str) -> AppResult<u8> {
    let v = parse_number(raw, line, column)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(fail(format!("line {line}: column {column:?}: {what} {raw:?} (expected 0 or 1)")))
    }
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Most frequent level; ties go to the alphabetically first.
fn mode(counts: &BTreeMap<String, usize>) -> String {
    let mut best: Option<(&str, usize)> = None;
    for (level, &count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((level, count));
        }
    }
    best.expect("at least one observed level").0.to_string()
}

pub fn ingest_csv(
    path: &Path,
    roles: &ColumnRoles<'_>,
    pi: f64,
    policy: MissingPolicy,
) -> AppResult<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| fail(format!("cannot read header row: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();

    let locate = |name: &str| -> AppResult<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            fail(format!("unknown column {name:?} (file has: {})", headers.join(", ")))
        })
    };
    let time_ix = locate(roles.time)?;
    let event_ix = locate(roles.event)?;
    let trt_ix = locate(roles.treatment)?;
    let cont_ix: Vec<usize> = roles.continuous.iter().map(|c| locate(c)).collect::<AppResult<_>>()?;
    let cat_ix: Vec<usize> = roles.categorical.iter().map(|c| locate(c)).collect::<AppResult<_>>()?;

    let mut seen = vec![time_ix, event_ix, trt_ix];
    seen.extend(&cont_ix);
    seen.extend(&cat_ix);
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(fail(format!("column {:?} is listed in more than one role", headers[w[0]])));
    }

    let mut time = Vec::new();
    let mut event = Vec::new();
    let mut treatment = Vec::new();
    let mut cont: Vec<Vec<Option<f64>>> = vec![Vec::new(); cont_ix.len()];
    let mut cat: Vec<Vec<Option<String>>> = vec![Vec::new(); cat_ix.len()];

    for record in reader.records() {
        let record = record.map_err(|e| fail(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |ix: usize| record.get(ix).unwrap_or("");

        for ix in [time_ix, event_ix, trt_ix] {
            if is_missing(field(ix)) {
                return Err(fail(format!(
                    "line {line}: missing value in column {:?}; time, event and treatment must be complete",
                    headers[ix]
                )));
            }
        }
        time.push(parse_number(field(time_ix), line, &headers[time_ix])?);
        event.push(parse_indicator(field(event_ix), line, &headers[event_ix], "event indicator must be 0 or 1, got")?);
        treatment.push(parse_indicator(field(trt_ix), line, &headers[trt_ix], "non-binary treatment value")?);

        for (j, &ix) in cont_ix.iter().enumerate() {
            let raw = field(ix);
            if is_missing(raw) {
                if policy == MissingPolicy::Fail {
                    return Err(fail(format!(
                        "line {line}: missing value in column {:?} (missing policy is fail)",
                        headers[ix]
                    )));
                }
                cont[j].push(None);
            } else {
                cont[j].push(Some(parse_number(raw, line, &headers[ix])?));
            }
        }
        for (j, &ix) in cat_ix.iter().enumerate() {
            let raw = field(ix);
            if is_missing(raw) {
                if policy == MissingPolicy::Fail {
                    return Err(fail(format!(
                        "line {line}: missing value in column {:?} (missing policy is fail)",
                        headers[ix]
                    )));
                }
                cat[j].push(None);
            } else {
                cat[j].push(Some(raw.to_string()));
            }
        }
    }

    let n = time.len();
    if n == 0 {
        return Err(fail(format!("{} has a header but no data rows", path.display())));
    }

    let mut n_imputed = 0usize;
    let mut cont_filled: Vec<Vec<f64>> = Vec::with_capacity(cont.len());
    for (j, column) in cont.iter().enumerate() {
        let mut observed: Vec<f64> = column.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(fail(format!("column {:?}: every value is missing", roles.continuous[j])));
        }
        let fill = median(&mut observed);
        n_imputed += column.iter().filter(|v| v.is_none()).count();
        cont_filled.push(column.iter().map(|v| v.unwrap_or(fill)).collect());
    }
    let mut cat_filled: Vec<Vec<String>> = Vec::with_capacity(cat.len());
    for (j, column) in cat.iter().enumerate() {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for level in column.iter().flatten() {
            *counts.entry(level.clone()).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(fail(format!("column {:?}: every value is missing", roles.categorical[j])));
        }
        let fill = mode(&counts);
        n_imputed += column.iter().filter(|v| v.is_none()).count();
        cat_filled.push(column.iter().map(|v| v.clone().unwrap_or_else(|| fill.clone())).collect());
    }

    // one-hot expansion: sorted levels, alphabetically first is the reference
    let mut design_columns: Vec<String> = roles.continuous.to_vec();
    let mut cat_levels: Vec<Vec<String>> = Vec::with_capacity(cat_filled.len());
    for (j, column) in cat_filled.iter().enumerate() {
        let mut levels: Vec<String> = column.clone();
        levels.sort();
        levels.dedup();
        for level in levels.iter().skip(1) {
            design_columns.push(format!("{}={}", roles.categorical[j], level));
        }
        cat_levels.push(levels);
    }

    let p = design_columns.len();
    let mut covariates = Vec::with_capacity(n * p);
    for i in 0..n {
        for column in &cont_filled {
            covariates.push(column[i]);
        }
        for (j, levels) in cat_levels.iter().enumerate() {
            for level in levels.iter().skip(1) {
                covariates.push(if &cat_filled[j][i] == level { 1.0 } else { 0.0 });
            }
        }
    }

    let data = Dataset::new(covariates, p, treatment, time, event, pi)?;
    Ok(Ingested { data, design_columns, n_imputed })
}

/// "1 value imputed" / "k values imputed".
pub fn imputed_note(n_imputed: usize) -> String {
    if n_imputed == 1 {
        "1 value imputed (median for continuous, most frequent level for categorical)".to_string()
    } else {
        format!("{n_imputed} values imputed (median for continuous, most frequent level for categorical)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::PathBuf;

    fn fixture() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/trial40.csv")
    }

    fn roles<'a>(cont: &'a [String], cat: &'a [String]) -> ColumnRoles<'a> {
        ColumnRoles { time: "time", event: "status", treatment: "trt", continuous: cont, categorical: cat }
    }

    /// Writes the parsed dataset back out as CSV with shortest round-trip
    /// float formatting, design columns listed as plain numbers.
    fn export_csv(ing: &Ingested) -> String {
        let data = &ing.data;
        let mut out = String::from("time,status,trt");
        for c in &ing.design_columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for i in 0..data.n() {
            out.push_str(&format!("{},{},{}", data.time()[i], data.event()[i], data.treatment()[i]));
            for v in data.covariate_row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    #[test]
    fn fixture_parses_with_expected_shape() {
        let cont = ["age".to_string(), "marker".to_string()];
        let cat = ["stage".to_string(), "sex".to_string()];
        let ing = ingest_csv(&fixture(), &roles(&cont, &cat), 0.5, MissingPolicy::MedianImpute).unwrap();
        assert_eq!(ing.data.n(), 40);
        assert_eq!(ing.n_imputed, 0);
        // stage levels I < II < III, reference I; sex levels f < m, reference f
        assert_eq!(
            ing.design_columns,
            vec!["age", "marker", "stage=II", "stage=III", "sex=m"]
        );
        assert_eq!(ing.data.p(), 5);
        assert_eq!(ing.data.event().iter().filter(|&&e| e == 1).count(), 29);
    }

    #[test]
    fn round_trip_is_lossless() {
        let cont = ["age".to_string(), "marker".to_string()];
        let cat = ["stage".to_string(), "sex".to_string()];
        let first = ingest_csv(&fixture(), &roles(&cont, &cat), 0.5, MissingPolicy::Fail).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("export.csv");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(export_csv(&first).as_bytes())
            .unwrap();

        // re-ingest listing every design column as continuous
        let cont2 = first.design_columns.clone();
        let second = ingest_csv(&path, &roles(&cont2, &[]), 0.5, MissingPolicy::Fail).unwrap();
        assert_eq!(first.data.time(), second.data.time());
        assert_eq!(first.data.event(), second.data.event());
        assert_eq!(first.data.treatment(), second.data.treatment());
        assert_eq!(first.data.covariates(), second.data.covariates());
    }

    #[test]
    fn missing_markers_and_mode_ties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        // b is missing twice (empty and NA); level tie a/b resolves to a
        std::fs::write(
            &path,
            "time,status,trt,x,g\n1,1,0,2.0,a\n2,1,1,,b\n3,0,0,4.0,a\n4,1,1,NA,b\n5,1,0,6.0,\n6,0,1,8.0,NA\n",
        )
        .unwrap();
        let cont = ["x".to_string()];
        let cat = ["g".to_string()];
        let ing = ingest_csv(&path, &roles(&cont, &cat), 0.5, MissingPolicy::MedianImpute).unwrap();
        assert_eq!(ing.n_imputed, 4);
        // median of {2,4,6,8} = 5
        assert_eq!(ing.data.covariate_row(1)[0], 5.0);
        assert_eq!(ing.data.covariate_row(3)[0], 5.0);
        // g: observed a,b,a,b -> tie, mode = a; indicator column g=b
        assert_eq!(ing.design_columns, vec!["x", "g=b"]);
        assert_eq!(ing.data.covariate_row(4)[1], 0.0);
        assert_eq!(ing.data.covariate_row(5)[1], 0.0);

        let err = ingest_csv(&path, &roles(&cont, &cat), 0.5, MissingPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn role_and_parse_errors_are_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "time,status,trt\n1,1,0\n2,oops,1\n").unwrap();
        let err = ingest_csv(&path, &roles(&[], &[]), 0.5, MissingPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("status"), "{err}");

        std::fs::write(&path, "time,status,trt\n1,1,2\n").unwrap();
        let err = ingest_csv(&path, &roles(&[], &[]), 0.5, MissingPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("non-binary treatment"), "{err}");

        let missing_col = ["nope".to_string()];
        let err = ingest_csv(&path, &roles(&missing_col, &[]), 0.5, MissingPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("unknown column"), "{err}");

        let dup = ["time".to_string()];
        let err = ingest_csv(&path, &roles(&dup, &[]), 0.5, MissingPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("more than one role"), "{err}");
    }
}
