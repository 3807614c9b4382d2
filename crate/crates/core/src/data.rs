//! Respondent-level DIF data: records, ingestion from delimited files, and
//! per-cluster tabulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One respondent: binary response, binary group, matching trait, optional cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    response: u8,
    group: u8,
    trait_score: f64,
    cluster: Option<usize>,
}

impl RespondentRecord {
    pub fn new(response: u8, group: u8, trait_score: f64, cluster: Option<usize>) -> Result<Self> {
        if response > 1 {
            return Err(Error::Data(format!("response must be 0 or 1, got {response}")));
        }
        if group > 1 {
            return Err(Error::Data(format!("group must be 0 or 1, got {group}")));
        }
        if !trait_score.is_finite() {
            return Err(Error::Data(format!("trait value must be finite, got {trait_score}")));
        }
        Ok(Self { response, group, trait_score, cluster })
    }

    pub fn response(&self) -> u8 {
        self.response
    }

    /// 0 = reference, 1 = focal.
    pub fn group(&self) -> u8 {
        self.group
    }

    pub fn trait_score(&self) -> f64 {
        self.trait_score
    }

    pub fn cluster(&self) -> Option<usize> {
        self.cluster
    }
}

/// Where a dataset came from and what was dropped on the way in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub rows_read: usize,
    /// Dropped row counts keyed by reason (`response`, `group`, `missing:<column>`, ...).
    pub dropped: BTreeMap<String, usize>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Self { source: source.into(), ..Self::default() }
    }

    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Immutable collection of validated respondent records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifDataset {
    records: Vec<RespondentRecord>,
    cluster_labels: Vec<String>,
    provenance: Provenance,
}

impl DifDataset {
    /// Cluster indices in `records` must lie in `0..cluster_labels.len()`.
    pub fn new(
        records: Vec<RespondentRecord>,
        cluster_labels: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let k = cluster_labels.len();
        for (i, r) in records.iter().enumerate() {
            match r.cluster {
                Some(c) if c >= k => {
                    return Err(Error::Data(format!(
                        "record {i} has cluster index {c} but only {k} clusters are declared"
                    )))
                }
                None if k > 0 => {
                    return Err(Error::Data(format!("record {i} has no cluster label")));
                }
                _ => {}
            }
        }
        Ok(Self { records, cluster_labels, provenance })
    }

    pub fn records(&self) -> &[RespondentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_labels.len()
    }

    /// Original cluster labels, indexed by internal cluster id.
    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// `[reference, focal]` record counts.
    pub fn group_counts(&self) -> [usize; 2] {
        let focal = self.records.iter().filter(|r| r.group == 1).count();
        [self.records.len() - focal, focal]
    }

    /// `[no, yes]` response counts.
    pub fn response_counts(&self) -> [usize; 2] {
        let yes = self.records.iter().filter(|r| r.response == 1).count();
        [self.records.len() - yes, yes]
    }

    pub fn require_both_groups(&self) -> Result<()> {
        let [r, f] = self.group_counts();
        if r == 0 || f == 0 {
            return Err(Error::Precondition(format!(
                "DIF analysis needs both groups (reference {r}, focal {f})"
            )));
        }
        Ok(())
    }

    /// Same data with reference and focal labels exchanged.
    pub fn with_swapped_groups(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| RespondentRecord { group: 1 - r.group, ..*r })
            .collect();
        Self {
            records,
            cluster_labels: self.cluster_labels.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the canonical `response,group,trait,cluster` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["response", "group", "trait", "cluster"])?;
        for r in &self.records {
            let cluster = r.cluster.map(|c| self.cluster_labels[c].clone()).unwrap_or_default();
            w.write_record([
                r.response.to_string(),
                r.group.to_string(),
                r.trait_score.to_string(),
                cluster,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file produced by [`DifDataset::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        let has_clusters = {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let headers = rdr.headers()?.clone();
            match find_column(&headers, "cluster") {
                Ok(c) => rdr.records().any(|row| row.map(|r| !is_missing(&r[c])).unwrap_or(false)),
                Err(_) => false,
            }
        };
        let mut spec = RecodeSpec::identity(
            "response",
            "group",
            "trait",
            has_clusters.then_some("cluster"),
        );
        spec.delimiter = Some(',');
        ingest_reader(text.as_bytes(), &spec, &path.display().to_string())
    }
}

/// Target of a raw code: a binary value or exclusion of the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeTarget {
    Value(u8),
    Drop,
}

impl Serialize for CodeTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CodeTarget::Value(v) => s.serialize_u8(*v),
            CodeTarget::Drop => s.serialize_str("drop"),
        }
    }
}

impl<'de> Deserialize<'de> for CodeTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Ok(CodeTarget::Value(0)),
            Raw::Int(1) => Ok(CodeTarget::Value(1)),
            Raw::Str(s) => match s.trim().to_ascii_lowercase().as_str() {
                "0" => Ok(CodeTarget::Value(0)),
                "1" => Ok(CodeTarget::Value(1)),
                "drop" => Ok(CodeTarget::Drop),
                other => Err(serde::de::Error::custom(format!(
                    "code target must be 0, 1 or \"drop\", got {other:?}"
                ))),
            },
            Raw::Int(v) => Err(serde::de::Error::custom(format!(
                "code target must be 0, 1 or \"drop\", got {v}"
            ))),
        }
    }
}

/// Declarative recoding of a raw survey extract into a [`DifDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecodeSpec {
    pub response_column: String,
    pub group_column: String,
    pub trait_column: String,
    #[serde(default)]
    pub cluster_column: Option<String>,
    /// Raw response code -> 0, 1 or drop. Empty map means the column is already 0/1.
    #[serde(default)]
    pub response_map: BTreeMap<String, CodeTarget>,
    #[serde(default)]
    pub group_map: BTreeMap<String, CodeTarget>,
    /// Raw codes that exclude a row wherever they appear in a required column.
    #[serde(default)]
    pub drop_codes: Vec<String>,
    /// Field delimiter; sniffed from the header line when absent.
    #[serde(default)]
    pub delimiter: Option<char>,
}

impl RecodeSpec {
    /// Spec for data that is already coded 0/1.
    pub fn identity(response: &str, group: &str, trait_col: &str, cluster: Option<&str>) -> Self {
        Self {
            response_column: response.into(),
            group_column: group.into(),
            trait_column: trait_col.into(),
            cluster_column: cluster.map(Into::into),
            response_map: BTreeMap::new(),
            group_map: BTreeMap::new(),
            drop_codes: Vec::new(),
            delimiter: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("recode config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<()> {
        for (name, map) in [("response_map", &self.response_map), ("group_map", &self.group_map)] {
            let mut seen = BTreeSet::new();
            for key in map.keys() {
                if !seen.insert(normalize_code(key)) {
                    return Err(Error::Config(format!("{name} lists code {key:?} twice")));
                }
            }
        }
        Ok(())
    }
}

/// Canonical form of a raw code: integral numbers lose their decimal part.
pub(crate) fn normalize_code(raw: &str) -> String {
    let t = raw.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        _ => t.to_string(),
    }
}

pub(crate) fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

pub(crate) fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h.trim() == name) {
        return Ok(i);
    }
    let hits: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().eq_ignore_ascii_case(name))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => Err(Error::Config(format!("column {name:?} not found in header"))),
        _ => Err(Error::Config(format!("column {name:?} matches several headers"))),
    }
}

pub(crate) fn sniff_delimiter(first_line: &str) -> u8 {
    if first_line.contains('\t') && !first_line.contains(',') {
        b'\t'
    } else if first_line.contains(';') && !first_line.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Reads and recodes a delimited file.
pub fn ingest(path: impl AsRef<Path>, spec: &RecodeSpec) -> Result<DifDataset> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, spec, &path.display().to_string())
}

enum Outcome<T> {
    Keep(T),
    Drop(&'static str),
}

fn map_binary(
    raw: &str,
    map: &BTreeMap<String, CodeTarget>,
    drop_codes: &BTreeSet<String>,
    what: &'static str,
    line: usize,
) -> Result<Outcome<u8>> {
    let code = normalize_code(raw);
    if drop_codes.contains(&code) {
        return Ok(Outcome::Drop(what));
    }
    if map.is_empty() {
        return match code.as_str() {
            "0" => Ok(Outcome::Keep(0)),
            "1" => Ok(Outcome::Keep(1)),
            _ => Err(Error::Data(format!("unmapped {what} code {raw:?} on line {line}"))),
        };
    }
    match map.iter().find(|(k, _)| normalize_code(k) == code) {
        Some((_, CodeTarget::Value(v))) => Ok(Outcome::Keep(*v)),
        Some((_, CodeTarget::Drop)) => Ok(Outcome::Drop(what)),
        None => Err(Error::Data(format!("unmapped {what} code {raw:?} on line {line}"))),
    }
}

/// [`ingest`] over any reader; `source` is recorded in the provenance.
pub fn ingest_reader<R: Read>(mut reader: R, spec: &RecodeSpec, source: &str) -> Result<DifDataset> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Data(format!("{source}: {e}")))?;
    let delimiter = match spec.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => return Err(Error::Config(format!("delimiter {c:?} is not ASCII"))),
        None => sniff_delimiter(text.lines().next().unwrap_or("")),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let resp_col = find_column(&headers, &spec.response_column)?;
    let group_col = find_column(&headers, &spec.group_column)?;
    let trait_col = find_column(&headers, &spec.trait_column)?;
    let cluster_col = spec.cluster_column.as_deref().map(|c| find_column(&headers, c)).transpose()?;

    let drop_codes: BTreeSet<String> = spec.drop_codes.iter().map(|c| normalize_code(c)).collect();
    let mut provenance = Provenance::new(source);
    let mut kept: Vec<(u8, u8, f64, Option<String>)> = Vec::new();

    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        provenance.rows_read += 1;
        let mut drop = |reason: String| *provenance.dropped.entry(reason).or_insert(0) += 1;

        let required = [
            (resp_col, spec.response_column.as_str()),
            (group_col, spec.group_column.as_str()),
            (trait_col, spec.trait_column.as_str()),
        ];
        let missing = required
            .iter()
            .copied()
            .chain(cluster_col.map(|c| (c, spec.cluster_column.as_deref().unwrap_or(""))))
            .find(|(c, _)| is_missing(&row[*c]));
        if let Some((_, name)) = missing {
            drop(format!("missing:{name}"));
            continue;
        }

        let response = match map_binary(&row[resp_col], &spec.response_map, &drop_codes, "response", line)? {
            Outcome::Keep(v) => v,
            Outcome::Drop(why) => {
                drop(why.to_string());
                continue;
            }
        };
        let group = match map_binary(&row[group_col], &spec.group_map, &drop_codes, "group", line)? {
            Outcome::Keep(v) => v,
            Outcome::Drop(why) => {
                drop(why.to_string());
                continue;
            }
        };
        let raw_trait = &row[trait_col];
        if drop_codes.contains(&normalize_code(raw_trait)) {
            drop("trait".to_string());
            continue;
        }
        let trait_score: f64 = raw_trait.trim().parse().map_err(|_| {
            Error::Data(format!("trait value {raw_trait:?} on line {line} is not a number"))
        })?;
        if !trait_score.is_finite() {
            return Err(Error::Data(format!("trait value {raw_trait:?} on line {line} is not finite")));
        }
        let cluster = match cluster_col {
            Some(c) => {
                let code = normalize_code(&row[c]);
                if drop_codes.contains(&code) {
                    drop("cluster".to_string());
                    continue;
                }
                Some(code)
            }
            None => None,
        };
        kept.push((response, group, trait_score, cluster));
    }

    if kept.is_empty() {
        let reasons: Vec<String> =
            provenance.dropped.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        return Err(Error::Data(format!(
            "no records left after recoding {} rows (dropped by {})",
            provenance.rows_read,
            if reasons.is_empty() { "nothing".to_string() } else { reasons.join(", ") }
        )));
    }

    let labels = sorted_labels(kept.iter().filter_map(|k| k.3.clone()));
    let index: BTreeMap<&str, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let records = kept
        .iter()
        .map(|(y, g, t, c)| RespondentRecord::new(*y, *g, *t, c.as_deref().map(|c| index[c])))
        .collect::<Result<Vec<_>>>()?;
    DifDataset::new(records, labels, provenance)
}

/// Distinct labels, numerically ordered when every label is a number.
fn sorted_labels(labels: impl Iterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = labels.collect();
    let mut v: Vec<String> = set.into_iter().collect();
    let numeric: Option<Vec<f64>> = v.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        v = pairs.into_iter().map(|p| p.1).collect();
    }
    v
}

/// Per-cluster counts by group and by response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub label: String,
    pub reference: usize,
    pub focal: usize,
    pub no: usize,
    pub yes: usize,
}

impl ClusterRow {
    pub fn total(&self) -> usize {
        self.reference + self.focal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub rows: Vec<ClusterRow>,
}

impl ClusterTable {
    pub fn totals(&self) -> ClusterRow {
        self.rows.iter().fold(
            ClusterRow { label: "Total".into(), reference: 0, focal: 0, no: 0, yes: 0 },
            |mut acc, r| {
                acc.reference += r.reference;
                acc.focal += r.focal;
                acc.no += r.no;
                acc.yes += r.yes;
                acc
            },
        )
    }
}

pub fn cluster_table(ds: &DifDataset) -> Result<ClusterTable> {
    if ds.cluster_count() == 0 {
        return Err(Error::Precondition("dataset declares no clusters".into()));
    }
    let mut rows: Vec<ClusterRow> = ds
        .cluster_labels()
        .iter()
        .map(|l| ClusterRow { label: l.clone(), reference: 0, focal: 0, no: 0, yes: 0 })
        .collect();
    for r in ds.records() {
        let row = &mut rows[r.cluster.expect("clustered dataset")];
        if r.group == 1 {
            row.focal += 1;
        } else {
            row.reference += 1;
        }
        if r.response == 1 {
            row.yes += 1;
        } else {
            row.no += 1;
        }
    }
    Ok(ClusterTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nsduh_like_spec() -> RecodeSpec {
        RecodeSpec::from_toml_str(
            r#"
            response_column = "ADDPREV"
            group_column = "PDEN10"
            trait_column = "KSSLR6MON"
            cluster_column = "IREDUHIGHST2"
            drop_codes = ["85", "94", "97", "98", "99"]
            [response_map]
            "1" = 1
            "2" = 0
            [group_map]
            "1" = 1
            "2" = 0
            "3" = "drop"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn six_row_fixture_with_one_refusal() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n\
                   1,1,5,8\n2,2,3,9\n97,1,4,8\n2,1,0,11\n1,2,12,8\n1.0,2,7.5,9\n";
        let ds = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "fixture").unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.provenance().total_dropped(), 1);
        assert_eq!(ds.provenance().dropped["response"], 1);
        assert_eq!(ds.cluster_labels(), ["8", "9", "11"]);
        assert_eq!(ds.records()[0].response(), 1);
        assert_eq!(ds.records()[1].group(), 0);
        assert_eq!(ds.records()[4].trait_score(), 7.5);
    }

    #[test]
    fn exclusions_apply_response_first_then_group() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n\
                   94,3,5,8\n1,3,3,9\n2,1,4,8\n";
        let ds = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.provenance().dropped["response"], 1);
        assert_eq!(ds.provenance().dropped["group"], 1);
    }

    #[test]
    fn all_dropped_is_a_data_error() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n99,1,5,8\n98,2,3,9\n97,1,4,8\n";
        let err = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f").unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("response: 3")), "{err}");
    }

    #[test]
    fn unmapped_code_names_code_and_line() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n1,1,5,8\n7,2,3,9\n";
        let err = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f").unwrap_err();
        match err {
            Error::Data(m) => assert!(m.contains("\"7\"") && m.contains("line 3"), "{m}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_column_is_config_error() {
        let csv = "ADDPREV,PDEN10,IREDUHIGHST2\n1,1,8\n";
        assert!(matches!(
            ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_cells_are_dropped_and_counted() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n1,1,,8\n2,2,3,NA\n1,2,3,9\n";
        let ds = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.provenance().dropped["missing:KSSLR6MON"], 1);
        assert_eq!(ds.provenance().dropped["missing:IREDUHIGHST2"], 1);
    }

    #[test]
    fn tab_delimiter_and_case_insensitive_columns() {
        let tsv = "addprev\tpden10\tksslr6mon\tireduhighst2\n1\t1\t5\t8\n2\t2\t3\t9\n";
        let ds = ingest_reader(tsv.as_bytes(), &nsduh_like_spec(), "f").unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn record_invariants_checked_on_construction() {
        assert!(RespondentRecord::new(2, 0, 0.0, None).is_err());
        assert!(RespondentRecord::new(0, 2, 0.0, None).is_err());
        assert!(RespondentRecord::new(0, 0, f64::NAN, None).is_err());
        let r = RespondentRecord::new(1, 0, 0.0, Some(3)).unwrap();
        assert!(DifDataset::new(vec![r], vec!["a".into()], Provenance::default()).is_err());
    }

    #[test]
    fn twenty_record_two_cluster_tally() {
        // cluster A: records 0..12, cluster B: 12..20
        let mut recs = Vec::new();
        for i in 0..20u8 {
            let cluster = if i < 12 { 0 } else { 1 };
            let group = i % 2;
            let response = u8::from(i % 3 == 0);
            recs.push(RespondentRecord::new(response, group, i as f64, Some(cluster)).unwrap());
        }
        let ds = DifDataset::new(recs, vec!["A".into(), "B".into()], Provenance::default()).unwrap();
        let t = cluster_table(&ds).unwrap();
        // hand tally: A has i=0..11 -> 6 even/6 odd; yes at i=0,3,6,9 -> 4
        assert_eq!(t.rows[0], ClusterRow { label: "A".into(), reference: 6, focal: 6, no: 8, yes: 4 });
        // B has i=12..19 -> 4/4; yes at 12,15,18 -> 3
        assert_eq!(t.rows[1], ClusterRow { label: "B".into(), reference: 4, focal: 4, no: 5, yes: 3 });
        let tot = t.totals();
        assert_eq!(tot.total(), 20);
        assert_eq!([tot.reference, tot.focal], ds.group_counts());
        assert_eq!([tot.no, tot.yes], ds.response_counts());
    }

    #[test]
    fn single_cluster_table_totals_equal_n() {
        let recs = (0..7)
            .map(|i| RespondentRecord::new((i % 2) as u8, 0, 1.0, Some(0)).unwrap())
            .collect();
        let ds = DifDataset::new(recs, vec!["only".into()], Provenance::default()).unwrap();
        let t = cluster_table(&ds).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].total(), 7);
    }

    #[test]
    fn cluster_table_needs_clusters() {
        let recs = vec![RespondentRecord::new(1, 0, 1.0, None).unwrap()];
        let ds = DifDataset::new(recs, vec![], Provenance::default()).unwrap();
        assert!(matches!(cluster_table(&ds), Err(Error::Precondition(_))));
    }

    #[test]
    fn canonical_csv_round_trips() {
        let csv = "ADDPREV,PDEN10,KSSLR6MON,IREDUHIGHST2\n1,1,5,8\n2,2,3.25,9\n2,1,0,11\n";
        let ds = ingest_reader(csv.as_bytes(), &nsduh_like_spec(), "f").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        ds.write_csv(File::create(&p).unwrap()).unwrap();
        let back = DifDataset::read_csv(&p).unwrap();
        assert_eq!(back.records(), ds.records());
        assert_eq!(back.cluster_labels(), ds.cluster_labels());
    }

    #[test]
    fn canonical_csv_without_clusters() {
        let recs = vec![
            RespondentRecord::new(1, 0, 1.5, None).unwrap(),
            RespondentRecord::new(0, 1, 2.0, None).unwrap(),
        ];
        let ds = DifDataset::new(recs, vec![], Provenance::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        ds.write_csv(File::create(&p).unwrap()).unwrap();
        let back = DifDataset::read_csv(&p).unwrap();
        assert_eq!(back.records(), ds.records());
        assert_eq!(back.cluster_count(), 0);
    }
}
