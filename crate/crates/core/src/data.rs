//! Schema-typed tabular records: CSV ingestion with persisted vocabularies,
//! rare-entity filtering, min-max normalization and seeded mini-batching.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Token reserved for unseen categories under [`UnseenPolicy::Reserved`].
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Continuous,
    /// Ground-truth column; never fed to the model.
    Label,
}

/// Field layout: `k` categorical fields followed by `r` continuous ones.
///
/// The on-disk form is a JSON object mapping field name to kind, e.g.
/// `{"proto": "categorical", "bytes": "continuous", "class": "label"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, FieldKind>", into = "IndexMap<String, FieldKind>")]
pub struct RecordSchema {
    categorical: Vec<String>,
    continuous: Vec<String>,
    label: Option<String>,
}

impl RecordSchema {
    pub fn new(categorical: Vec<String>, continuous: Vec<String>, label: Option<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for name in categorical.iter().chain(&continuous).chain(label.iter()) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate field name '{name}'")));
            }
        }
        if categorical.is_empty() && continuous.is_empty() {
            return Err(Error::Schema("schema has no feature fields".into()));
        }
        Ok(Self {
            categorical,
            continuous,
            label,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn categorical(&self) -> &[String] {
        &self.categorical
    }

    pub fn continuous(&self) -> &[String] {
        &self.continuous
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// k
    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    /// r
    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    /// Hex SHA-256 over the ordered feature fields; the label column is excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.categorical {
            h.update(b"c:");
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for name in &self.continuous {
            h.update(b"r:");
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl TryFrom<IndexMap<String, FieldKind>> for RecordSchema {
    type Error = Error;

    fn try_from(map: IndexMap<String, FieldKind>) -> Result<Self> {
        let mut cat = Vec::new();
        let mut cont = Vec::new();
        let mut label = None;
        for (name, kind) in map {
            match kind {
                FieldKind::Categorical => cat.push(name),
                FieldKind::Continuous => cont.push(name),
                FieldKind::Label => {
                    if label.replace(name).is_some() {
                        return Err(Error::Schema("more than one label column".into()));
                    }
                }
            }
        }
        RecordSchema::new(cat, cont, label)
    }
}

impl From<RecordSchema> for IndexMap<String, FieldKind> {
    fn from(s: RecordSchema) -> Self {
        let mut map = IndexMap::new();
        for n in s.categorical {
            map.insert(n, FieldKind::Categorical);
        }
        for n in s.continuous {
            map.insert(n, FieldKind::Continuous);
        }
        if let Some(l) = s.label {
            map.insert(l, FieldKind::Label);
        }
        map
    }
}

/// String ↔ index mapping for one categorical field.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(values: Vec<String>) -> Self {
        let index = values.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        Self { values, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.values
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn encode(&self, value: &str) -> Option<usize> {
        self.index.get(value).copied()
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.values.get(index).map(String::as_str)
    }

    /// Index for `value`, appending it if new.
    pub fn intern(&mut self, value: &str) -> usize {
        if let Some(&i) = self.index.get(value) {
            return i;
        }
        let i = self.values.len();
        self.values.push(value.to_string());
        self.index.insert(value.to_string(), i);
        i
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Nominal,
    Anomaly,
}

impl Label {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "nominal" | "normal" | "false" => Some(Label::Nominal),
            "1" | "anomaly" | "anomalous" | "attack" | "true" => Some(Label::Anomaly),
            _ => None,
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Nominal => "nominal",
            Label::Anomaly => "anomaly",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: usize,
    /// One index per categorical field, within that field's arity.
    pub cats: Vec<usize>,
    pub cont: Vec<f64>,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: RecordSchema,
    pub vocabs: Vec<Vocabulary>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arities(&self) -> Vec<usize> {
        self.vocabs.iter().map(Vocabulary::len).collect()
    }

    pub fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            vocabs: self.vocabs.clone(),
            records,
        }
    }

    /// Checks every record against the schema and vocabulary sizes.
    pub fn validate(&self) -> Result<()> {
        let arities = self.arities();
        for r in &self.records {
            if r.cats.len() != arities.len() || r.cont.len() != self.schema.n_continuous() {
                return Err(Error::Schema(format!("record {} does not match schema width", r.id)));
            }
            if let Some((w, &c)) = r.cats.iter().enumerate().find(|(w, &c)| c >= arities[*w]) {
                return Err(Error::Schema(format!(
                    "record {}: index {c} out of range for field '{}' (arity {})",
                    r.id, self.schema.categorical[w], arities[w]
                )));
            }
        }
        Ok(())
    }

    /// Re-indexes categorical values against `vocabs` (e.g. a trained model's
    /// filtered vocabularies). Rows with values missing from `vocabs` are
    /// handled per `policy`; rejected rows are returned in the report.
    pub fn reencode(&self, vocabs: &[Vocabulary], policy: UnseenPolicy) -> Result<(Dataset, LoadReport)> {
        if vocabs.len() != self.vocabs.len() {
            return Err(Error::ModelMismatch(format!(
                "{} target vocabularies for {} categorical fields",
                vocabs.len(),
                self.vocabs.len()
            )));
        }
        let unknown: Vec<Option<usize>> = vocabs.iter().map(|v| v.encode(UNKNOWN_TOKEN)).collect();
        let mut report = LoadReport {
            rows_read: self.len(),
            ..Default::default()
        };
        let mut records = Vec::with_capacity(self.len());
        'rows: for r in &self.records {
            let mut cats = Vec::with_capacity(r.cats.len());
            for (w, &c) in r.cats.iter().enumerate() {
                let value = self.vocabs[w].decode(c).unwrap_or("");
                match (vocabs[w].encode(value), policy, unknown[w]) {
                    (Some(i), _, _) => cats.push(i),
                    (None, UnseenPolicy::Reserved, Some(u)) => cats.push(u),
                    _ => {
                        report.dropped_unseen += 1;
                        report.rejected.push(RejectedRow {
                            row: r.id + 1,
                            column: self.schema.categorical[w].clone(),
                            value: value.to_string(),
                        });
                        continue 'rows;
                    }
                }
            }
            records.push(Record { cats, ..r.clone() });
        }
        report.rows_kept = records.len();
        report.arity = self
            .schema
            .categorical
            .iter()
            .cloned()
            .zip(vocabs.iter().map(Vocabulary::len))
            .collect();
        Ok((
            Dataset {
                schema: self.schema.clone(),
                vocabs: vocabs.to_vec(),
                records,
            },
            report,
        ))
    }

    /// Writes records back out as CSV with decoded categorical values.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = vec!["record_id"];
        header.extend(self.schema.categorical.iter().map(String::as_str));
        header.extend(self.schema.continuous.iter().map(String::as_str));
        header.push("label");
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.to_string()];
            for (w_idx, &c) in r.cats.iter().enumerate() {
                row.push(self.vocabs[w_idx].decode(c).unwrap_or("").to_string());
            }
            row.extend(r.cont.iter().map(|v| v.to_string()));
            row.push(r.label.map(|l| l.as_str().to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnseenPolicy {
    /// Drop the row and count it in the load report.
    #[default]
    Reject,
    /// Map to [`UNKNOWN_TOKEN`], which must be present in the vocabulary.
    Reserved,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Fixed vocabularies (scoring/test time). `None` builds them from the file.
    pub vocabs: Option<Vec<Vocabulary>>,
    pub unseen: UnseenPolicy,
    /// When building vocabularies, seed each with [`UNKNOWN_TOKEN`].
    pub reserve_unknown: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub column: String,
    pub value: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_unseen: usize,
    pub rejected: Vec<RejectedRow>,
    pub arity: IndexMap<String, usize>,
}

pub fn load_csv(path: &Path, schema: &RecordSchema, opts: &LoadOptions) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, opts)
}

/// Parses RFC-4180 CSV with a header row naming the schema fields (any order;
/// extra columns are ignored).
pub fn read_csv<R: Read>(input: R, schema: &RecordSchema, opts: &LoadOptions) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let cat_cols: Vec<usize> = schema.categorical.iter().map(|n| column(n)).collect::<Result<_>>()?;
    let cont_cols: Vec<usize> = schema.continuous.iter().map(|n| column(n)).collect::<Result<_>>()?;
    let label_col = schema.label().map(column).transpose()?;

    let building = opts.vocabs.is_none();
    let mut vocabs = match &opts.vocabs {
        Some(v) => {
            if v.len() != schema.n_categorical() {
                return Err(Error::ModelMismatch(format!(
                    "{} vocabularies for {} categorical fields",
                    v.len(),
                    schema.n_categorical()
                )));
            }
            v.clone()
        }
        None => {
            let mut v = vec![Vocabulary::default(); schema.n_categorical()];
            if opts.reserve_unknown {
                for voc in &mut v {
                    voc.intern(UNKNOWN_TOKEN);
                }
            }
            v
        }
    };
    let unknown_index: Vec<Option<usize>> = vocabs.iter().map(|v| v.encode(UNKNOWN_TOKEN)).collect();
    if !building && opts.unseen == UnseenPolicy::Reserved && unknown_index.iter().any(Option::is_none) {
        return Err(Error::config(
            "unseen policy 'reserved' needs vocabularies built with a reserved unknown token",
        ));
    }

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    'rows: for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        report.rows_read += 1;
        let cell = |c: usize| row.get(c).map(str::trim).unwrap_or("");
        let all_cols = cat_cols.iter().chain(&cont_cols).chain(label_col.iter());
        if all_cols.into_iter().any(|&c| cell(c).is_empty()) {
            report.dropped_missing += 1;
            continue;
        }

        let mut cont = Vec::with_capacity(cont_cols.len());
        for (name, &c) in schema.continuous.iter().zip(&cont_cols) {
            let v: f64 = cell(c).parse().map_err(|_| Error::Parse {
                row: row_no,
                column: name.clone(),
                message: format!("'{}' is not a number", cell(c)),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    column: name.clone(),
                    message: format!("'{}' is not finite", cell(c)),
                });
            }
            cont.push(v);
        }

        let label = match label_col {
            Some(c) => Some(Label::parse(cell(c)).ok_or_else(|| Error::Parse {
                row: row_no,
                column: schema.label.clone().unwrap_or_default(),
                message: format!("unrecognised label '{}'", cell(c)),
            })?),
            None => None,
        };

        let mut cats = Vec::with_capacity(cat_cols.len());
        for (w, &c) in cat_cols.iter().enumerate() {
            let value = cell(c);
            let idx = if building {
                Some(vocabs[w].intern(value))
            } else {
                vocabs[w].encode(value)
            };
            match (idx, opts.unseen) {
                (Some(idx), _) => cats.push(idx),
                (None, UnseenPolicy::Reserved) => cats.push(unknown_index[w].expect("checked above")),
                (None, UnseenPolicy::Reject) => {
                    report.dropped_unseen += 1;
                    report.rejected.push(RejectedRow {
                        row: row_no,
                        column: schema.categorical[w].clone(),
                        value: value.to_string(),
                    });
                    continue 'rows;
                }
            }
        }
        records.push(Record {
            id: i,
            cats,
            cont,
            label,
        });
    }
    report.rows_kept = records.len();
    report.arity = schema
        .categorical
        .iter()
        .cloned()
        .zip(vocabs.iter().map(Vocabulary::len))
        .collect();
    let ds = Dataset {
        schema: schema.clone(),
        vocabs,
        records,
    };
    Ok((ds, report))
}

/// Removes rows holding any categorical value seen fewer than `min_count`
/// times, repeating until no rare value remains, then compacts vocabularies.
pub fn filter_rare_entities(dataset: &Dataset, min_count: usize) -> Result<Dataset> {
    if min_count == 0 {
        return Err(Error::config("min_count must be at least 1"));
    }
    let k = dataset.schema.n_categorical();
    let mut keep: Vec<&Record> = dataset.records.iter().collect();
    loop {
        let mut counts: Vec<HashMap<usize, usize>> = vec![HashMap::new(); k];
        for r in &keep {
            for (w, &c) in r.cats.iter().enumerate() {
                *counts[w].entry(c).or_default() += 1;
            }
        }
        let before = keep.len();
        keep.retain(|r| r.cats.iter().enumerate().all(|(w, c)| counts[w][c] >= min_count));
        if keep.len() == before {
            break;
        }
    }

    // Surviving values keep their original relative order.
    let mut remap: Vec<Vec<Option<usize>>> = dataset.vocabs.iter().map(|v| vec![None; v.len()]).collect();
    for r in &keep {
        for (w, &c) in r.cats.iter().enumerate() {
            remap[w][c] = Some(0);
        }
    }
    let mut vocabs = Vec::with_capacity(k);
    for (w, voc) in dataset.vocabs.iter().enumerate() {
        let mut fresh = Vocabulary::default();
        for (old, slot) in remap[w].iter_mut().enumerate() {
            if slot.is_some() {
                *slot = Some(fresh.intern(voc.decode(old).expect("index within vocabulary")));
            }
        }
        if fresh.len() < 2 {
            warn!(
                "field '{}' has arity {} after rare-entity filtering",
                dataset.schema.categorical[w],
                fresh.len()
            );
        }
        vocabs.push(fresh);
    }
    let records = keep
        .into_iter()
        .map(|r| Record {
            cats: r
                .cats
                .iter()
                .enumerate()
                .map(|(w, &c)| remap[w][c].expect("surviving value"))
                .collect(),
            ..r.clone()
        })
        .collect();
    Ok(Dataset {
        schema: dataset.schema.clone(),
        vocabs,
        records,
    })
}

/// Per-continuous-field range seen on the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let r = train.schema.n_continuous();
        if r > 0 && train.is_empty() {
            return Err(Error::config("cannot fit normalization on an empty dataset"));
        }
        let mut min = vec![f64::INFINITY; r];
        let mut max = vec![f64::NEG_INFINITY; r];
        for rec in &train.records {
            for (j, &v) in rec.cont.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for j in 0..r {
            if max[j] == min[j] {
                warn!(
                    "continuous field '{}' is constant on the training data; it maps to 0.5",
                    train.schema.continuous[j]
                );
            }
        }
        Ok(Self { min, max })
    }

    pub fn transform_value(&self, field: usize, v: f64, clamp: bool) -> f64 {
        let (lo, hi) = (self.min[field], self.max[field]);
        let mut out = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        if clamp {
            out = out.clamp(0.0, 1.0);
        }
        out
    }

    pub fn apply(&self, dataset: &Dataset, clamp: bool) -> Result<Dataset> {
        if self.min.len() != dataset.schema.n_continuous() {
            return Err(Error::ModelMismatch(format!(
                "normalization covers {} continuous fields, dataset has {}",
                self.min.len(),
                dataset.schema.n_continuous()
            )));
        }
        let records = dataset
            .records
            .iter()
            .map(|r| Record {
                cont: r
                    .cont
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| self.transform_value(j, v, clamp))
                    .collect(),
                ..r.clone()
            })
            .collect();
        Ok(dataset.with_records(records))
    }
}

/// Seeded epoch-wise shuffler producing index batches; the final partial
/// batch is kept.
#[derive(Clone, Debug)]
pub struct BatchIter {
    len: usize,
    batch_size: usize,
    rng: Rng,
}

impl BatchIter {
    pub fn new(len: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(Self { len, batch_size, rng })
    }

    /// Reshuffles and returns the batches for the next epoch.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}
