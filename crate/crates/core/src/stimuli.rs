//! Stimulus datasets: CSV ingestion, reliability-based selection and the
//! embedded 20-item reference tables.
//!
//! CSV layout: optional `#key=value` metadata lines (`#scale=` is required,
//! `#kind=` defaults to `situation`), then a header
//! `id,text,v,a,d[,sd_v,sd_a,sd_d]`.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect_space::{AffectError, Octant, Scale, VadTriple};
use crate::occ_engine::EmotionLabel;

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("no items")]
    NoItems,
    #[error("missing `#scale=` metadata line")]
    MissingScale,
    #[error("bad metadata: {0}")]
    BadMetadata(String),
    #[error("header must be `id,text,v,a,d[,sd_v,sd_a,sd_d]`, got `{0}`")]
    BadHeader(String),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("row {row}: {source}")]
    Range { row: u64, source: AffectError },
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: u64, id: String },
    #[error("stimulus `{0}` has no standard deviations")]
    MissingSd(String),
    #[error("cannot select {k} items from a dataset of {n}")]
    TooMany { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StimulusKind {
    Situation,
    Word,
}

impl fmt::Display for StimulusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StimulusKind::Situation => "situation",
            StimulusKind::Word => "word",
        })
    }
}

impl FromStr for StimulusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "situation" => Ok(StimulusKind::Situation),
            "word" => Ok(StimulusKind::Word),
            other => Err(format!("unknown stimulus kind `{other}`")),
        }
    }
}

/// Per-dimension standard deviations, on the same scale as the ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadSd {
    pub v: f64,
    pub a: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub kind: StimulusKind,
    pub text: String,
    pub ground_truth: VadTriple,
    pub sd: Option<VadSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub kind: StimulusKind,
    pub scale: Scale,
    pub items: Vec<Stimulus>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Stimulus> {
        self.items.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|s| s.id.as_str()).collect()
    }
}

/// Sum of squared per-dimension SDs; lower is more reliable.
pub fn reliability_score(s: &Stimulus) -> Result<f64, StimuliError> {
    let sd = s.sd.ok_or_else(|| StimuliError::MissingSd(s.id.clone()))?;
    Ok(sd.v * sd.v + sd.a * sd.a + sd.d * sd.d)
}

/// The `k` most reliable items, ordered by ascending score then id.
pub fn select_most_reliable(d: &Dataset, k: usize) -> Result<Dataset, StimuliError> {
    if k == 0 {
        return Err(StimuliError::ZeroK);
    }
    if k > d.items.len() {
        return Err(StimuliError::TooMany { k, n: d.items.len() });
    }
    let mut scored = d
        .items
        .iter()
        .map(|s| reliability_score(s).map(|score| (score, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(Dataset {
        name: format!("{}-top{k}", d.name),
        kind: d.kind,
        scale: d.scale,
        items: scored.into_iter().take(k).map(|(_, s)| s.clone()).collect(),
    })
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    id: String,
    text: String,
    v: f64,
    a: f64,
    d: f64,
    #[serde(default)]
    sd_v: Option<f64>,
    #[serde(default)]
    sd_a: Option<f64>,
    #[serde(default)]
    sd_d: Option<f64>,
}

pub fn load_dataset_csv<R: Read>(name: &str, mut source: R) -> Result<Dataset, StimuliError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    parse_dataset_csv(name, &text)
}

pub fn parse_dataset_csv(name: &str, text: &str) -> Result<Dataset, StimuliError> {
    let mut scale = None;
    let mut kind = StimulusKind::Situation;
    let mut body_start = 0;
    let mut meta_lines = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        let Some(meta) = trimmed.strip_prefix('#') else {
            break;
        };
        body_start += line.len();
        meta_lines += 1;
        let (key, value) = meta
            .split_once('=')
            .ok_or_else(|| StimuliError::BadMetadata(trimmed.to_string()))?;
        match key.trim() {
            "scale" => {
                scale = Some(
                    value
                        .parse::<Scale>()
                        .map_err(|e| StimuliError::BadMetadata(e.to_string()))?,
                )
            }
            "kind" => kind = value.parse().map_err(StimuliError::BadMetadata)?,
            other => return Err(StimuliError::BadMetadata(format!("unknown key `{other}`"))),
        }
    }
    let scale = scale.ok_or(StimuliError::MissingScale)?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(&text.as_bytes()[body_start..]);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let ok = cols.len() >= 5
        && cols[..5] == ["id", "text", "v", "a", "d"]
        && (cols.len() == 5 || cols[5..] == ["sd_v", "sd_a", "sd_d"]);
    if !ok {
        return Err(StimuliError::BadHeader(cols.join(",")));
    }

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0) + meta_lines;
        let raw: CsvRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| StimuliError::Row { row, message: e.to_string() })?;
        let ground_truth =
            VadTriple::new(raw.v, raw.a, raw.d, scale).map_err(|source| StimuliError::Range { row, source })?;
        let sd = match (raw.sd_v, raw.sd_a, raw.sd_d) {
            (None, None, None) => None,
            (Some(v), Some(a), Some(d)) => {
                if [v, a, d].iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(StimuliError::Row {
                        row,
                        message: "standard deviations must be finite and non-negative".into(),
                    });
                }
                Some(VadSd { v, a, d })
            }
            _ => {
                return Err(StimuliError::Row {
                    row,
                    message: "either all or none of sd_v, sd_a, sd_d must be given".into(),
                })
            }
        };
        if !seen.insert(raw.id.clone()) {
            return Err(StimuliError::DuplicateId { row, id: raw.id });
        }
        items.push(Stimulus {
            id: raw.id,
            kind,
            text: raw.text,
            ground_truth,
            sd,
        });
    }
    if items.is_empty() {
        return Err(StimuliError::NoItems);
    }
    Ok(Dataset {
        name: name.to_string(),
        kind,
        scale,
        items,
    })
}

/// Canonical CSV form of a dataset. Numbers use the shortest representation
/// that round-trips.
pub fn dataset_to_csv(d: &Dataset) -> Result<String, StimuliError> {
    let mut out = format!("#scale={}\n#kind={}\n", d.scale, d.kind);
    let with_sd = d.items.iter().any(|s| s.sd.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["id", "text", "v", "a", "d"];
    if with_sd {
        header.extend(["sd_v", "sd_a", "sd_d"]);
    }
    w.write_record(&header)?;
    for s in &d.items {
        let t = s.ground_truth;
        let mut rec = vec![s.id.clone(), s.text.clone(), t.v().to_string(), t.a().to_string(), t.d().to_string()];
        if with_sd {
            match s.sd {
                Some(sd) => rec.extend([sd.v.to_string(), sd.a.to_string(), sd.d.to_string()]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| StimuliError::Io(e.into_error()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionVariant {
    Normal,
    /// Dominance produced without the perspective clause in the prompt.
    FailedDominance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub stimulus_id: String,
    pub vad: VadTriple,
    pub variant: PredictionVariant,
}

/// One row of the situation/word mapping table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    pub id: String,
    /// Word picked from numeric VAD values, with the distance and rank
    /// reported for that session.
    pub numeric_word: String,
    pub numeric_distance: f64,
    pub numeric_rank: usize,
    /// Free-form two-word pick, verbatim (parenthesised alternates included).
    pub free_mapping: String,
    pub expert_mapping: String,
}

impl MappingRow {
    pub fn expert_pair(&self) -> (String, String) {
        let mut it = self.expert_mapping.split(',').map(|w| w.trim().to_string());
        let a = it.next().unwrap_or_default();
        let b = it.next().unwrap_or_default();
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OctantRow {
    pub octant: Octant,
    pub generated: String,
    /// Rater's classification as printed (kept verbatim, typos included).
    pub rating: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRow {
    /// Emotion name as printed in the table.
    pub emotion: String,
    pub label: EmotionLabel,
    pub rule: String,
    pub situation: String,
    /// Model answer as printed.
    pub prediction: String,
}

#[derive(Debug, Clone)]
pub struct Fixtures {
    pub anet20: Dataset,
    pub words20: Dataset,
    pub anet20_predictions: Vec<PredictionRecord>,
    pub words20_predictions: Vec<PredictionRecord>,
    pub word_mapping: Vec<MappingRow>,
    pub octants: Vec<OctantRow>,
    pub elicitation: Vec<ElicitationRow>,
}

impl Fixtures {
    pub fn predictions_for(&self, dataset: &str, variant: PredictionVariant) -> Vec<&PredictionRecord> {
        let source = match dataset {
            "anet20" => &self.anet20_predictions,
            "words20" => &self.words20_predictions,
            _ => return Vec::new(),
        };
        source.iter().filter(|p| p.variant == variant).collect()
    }

    pub fn dataset(&self, name: &str) -> Option<&Dataset> {
        match name {
            "anet20" => Some(&self.anet20),
            "words20" => Some(&self.words20),
            _ => None,
        }
    }
}

/// Raw embedded fixture files as (file name, contents).
pub const FIXTURE_FILES: [(&str, &str); 7] = [
    ("anet20.csv", include_str!("../data/anet20.csv")),
    ("anet20_predictions.csv", include_str!("../data/anet20_predictions.csv")),
    ("words20.csv", include_str!("../data/words20.csv")),
    ("words20_predictions.csv", include_str!("../data/words20_predictions.csv")),
    ("word_mapping.csv", include_str!("../data/word_mapping.csv")),
    ("octants.csv", include_str!("../data/octants.csv")),
    ("elicitation.csv", include_str!("../data/elicitation.csv")),
];

fn fixture_file(name: &str) -> &'static str {
    FIXTURE_FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .expect("fixture file is embedded")
}

fn read_records<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    csv::Reader::from_reader(fixture_file(name).as_bytes())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .unwrap_or_else(|e| panic!("embedded fixture {name} is malformed: {e}"))
}

fn load_predictions(name: &str, failed_column: bool) -> Vec<PredictionRecord> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        v: f64,
        a: f64,
        d: f64,
        #[serde(default)]
        d_failed: Option<f64>,
    }
    let rows: Vec<Row> = read_records(name);
    let mut out = Vec::new();
    for r in &rows {
        out.push(PredictionRecord {
            stimulus_id: r.id.clone(),
            vad: VadTriple::unit(r.v, r.a, r.d).expect("fixture predictions lie in [0,1]"),
            variant: PredictionVariant::Normal,
        });
    }
    if failed_column {
        for r in &rows {
            let d = r.d_failed.expect("failed dominance column present");
            out.push(PredictionRecord {
                stimulus_id: r.id.clone(),
                vad: VadTriple::unit(r.v, r.a, d).expect("fixture predictions lie in [0,1]"),
                variant: PredictionVariant::FailedDominance,
            });
        }
    }
    out
}

fn build_fixtures() -> Fixtures {
    let anet20 = parse_dataset_csv("anet20", fixture_file("anet20.csv")).expect("anet20 fixture");
    let words20 = parse_dataset_csv("words20", fixture_file("words20.csv")).expect("words20 fixture");

    #[derive(Deserialize)]
    struct OctRaw {
        prompt: String,
        generated: String,
        rating: String,
    }
    let octants = read_records::<OctRaw>("octants.csv")
        .into_iter()
        .map(|r| OctantRow {
            octant: r.prompt.parse().expect("fixture octant signature"),
            generated: r.generated,
            rating: r.rating,
        })
        .collect();

    #[derive(Deserialize)]
    struct ElicitRaw {
        emotion: String,
        rule: String,
        situation: String,
        prediction: String,
    }
    let elicitation = read_records::<ElicitRaw>("elicitation.csv")
        .into_iter()
        .map(|r| ElicitationRow {
            label: r.emotion.parse().expect("fixture emotion name"),
            emotion: r.emotion,
            rule: r.rule,
            situation: r.situation,
            prediction: r.prediction,
        })
        .collect();

    Fixtures {
        anet20_predictions: load_predictions("anet20_predictions.csv", true),
        words20_predictions: load_predictions("words20_predictions.csv", false),
        word_mapping: read_records("word_mapping.csv"),
        octants,
        elicitation,
        anet20,
        words20,
    }
}

/// Embedded reference tables, parsed once.
pub fn fixtures() -> &'static Fixtures {
    static CELL: OnceLock<Fixtures> = OnceLock::new();
    CELL.get_or_init(build_fixtures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stim(id: &str, sd: Option<(f64, f64, f64)>) -> Stimulus {
        Stimulus {
            id: id.to_string(),
            kind: StimulusKind::Situation,
            text: format!("text {id}"),
            ground_truth: VadTriple::new(5.0, 5.0, 5.0, Scale::Anet1To9).unwrap(),
            sd: sd.map(|(v, a, d)| VadSd { v, a, d }),
        }
    }

    fn dataset(items: Vec<Stimulus>) -> Dataset {
        Dataset {
            name: "t".into(),
            kind: StimulusKind::Situation,
            scale: Scale::Anet1To9,
            items,
        }
    }

    #[test]
    fn reliability_scores() {
        assert_eq!(reliability_score(&stim("a", Some((0.0, 0.0, 0.0)))).unwrap(), 0.0);
        assert_eq!(reliability_score(&stim("a", Some((1.0, 2.0, 2.0)))).unwrap(), 9.0);
        assert!(matches!(reliability_score(&stim("a", None)), Err(StimuliError::MissingSd(_))));
    }

    #[test]
    fn selection_basics() {
        let d = dataset(vec![
            stim("x", Some((3f64.sqrt(), 0.0, 0.0))),
            stim("y", Some((1.0, 0.0, 0.0))),
            stim("z", Some((2f64.sqrt(), 0.0, 0.0))),
        ]);
        let one = select_most_reliable(&d, 1).unwrap();
        assert_eq!(one.ids(), ["y"]);
        let all = select_most_reliable(&d, 3).unwrap();
        let mut ids = all.ids();
        ids.sort();
        assert_eq!(ids, ["x", "y", "z"]);
        assert!(matches!(select_most_reliable(&d, 4), Err(StimuliError::TooMany { .. })));
        let missing = dataset(vec![stim("x", None)]);
        assert!(matches!(select_most_reliable(&missing, 1), Err(StimuliError::MissingSd(_))));
    }

    #[test]
    fn selection_ties_break_by_id() {
        let d = dataset(vec![
            stim("b", Some((1.0, 1.0, 1.0))),
            stim("a", Some((1.0, 1.0, 1.0))),
            stim("c", Some((0.5, 0.5, 0.5))),
        ]);
        assert_eq!(select_most_reliable(&d, 2).unwrap().ids(), ["c", "a"]);
    }

    #[test]
    fn csv_examples() {
        let err = parse_dataset_csv("x", "#scale=anet_1_9\nid,text,v,a,d\n").unwrap_err();
        assert_eq!(err.to_string(), "no items");

        let one = parse_dataset_csv(
            "x",
            "#scale=anet_1_9\nid,text,v,a,d\n4650,\"You are both aroused, breathless.\",8.34,8.10,6.2\n",
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.items[0].ground_truth.components(), [8.34, 8.10, 6.2]);

        let err = parse_dataset_csv("x", "#scale=anet_1_9\nid,text,v,a,d\n1,t,12,5,5\n").unwrap_err();
        assert!(matches!(err, StimuliError::Range { row: 3, .. }), "{err}");
    }

    #[test]
    fn csv_errors_name_rows() {
        let dup = "#scale=unit_0_1\nid,text,v,a,d\na,t,0.1,0.1,0.1\na,t,0.2,0.2,0.2\n";
        assert!(matches!(parse_dataset_csv("x", dup), Err(StimuliError::DuplicateId { row: 4, .. })));
        let bad = "#scale=unit_0_1\nid,text,v,a,d\na,t,zero,0.1,0.1\n";
        assert!(matches!(parse_dataset_csv("x", bad), Err(StimuliError::Row { row: 3, .. })));
        let partial_sd = "#scale=unit_0_1\nid,text,v,a,d,sd_v,sd_a,sd_d\na,t,0.1,0.1,0.1,0.1,,\n";
        assert!(matches!(parse_dataset_csv("x", partial_sd), Err(StimuliError::Row { .. })));
        assert!(matches!(parse_dataset_csv("x", "id,text,v,a,d\n"), Err(StimuliError::MissingScale)));
        assert!(matches!(
            parse_dataset_csv("x", "#scale=unit_0_1\nid,words,v,a,d\n"),
            Err(StimuliError::BadHeader(_))
        ));
    }

    #[test]
    fn fixture_spot_values() {
        let f = fixtures();
        assert_eq!(f.anet20.len(), 20);
        assert_eq!(f.words20.len(), 20);
        assert_eq!(f.word_mapping.len(), 20);
        assert_eq!(f.octants.len(), 9);
        assert_eq!(f.elicitation.len(), 12);
        assert_eq!(f.anet20.get("2510").unwrap().ground_truth.components(), [1.78, 7.69, 2.08]);
        let loved = f.words20.get("loved").unwrap();
        assert_eq!(loved.ground_truth.components(), [0.87, 0.54, -0.18]);
        assert_eq!(loved.text, "loved");
        assert_eq!(loved.kind, StimulusKind::Word);
        let joy = f.elicitation.iter().find(|r| r.label == EmotionLabel::Joy).unwrap();
        assert_eq!(joy.rule, "a desirable event for Anne just happened");
        assert_eq!(f.anet20.get("2880").unwrap().ground_truth.d(), 4.4);
        assert_eq!(f.anet20_predictions.len(), 40);
        assert_eq!(f.words20_predictions.len(), 20);
    }

    #[test]
    fn fixture_predictions_align_with_datasets() {
        let f = fixtures();
        for (ds, variant) in [
            ("anet20", PredictionVariant::Normal),
            ("anet20", PredictionVariant::FailedDominance),
            ("words20", PredictionVariant::Normal),
        ] {
            let preds = f.predictions_for(ds, variant);
            assert_eq!(preds.iter().map(|p| p.stimulus_id.as_str()).collect::<Vec<_>>(), f.dataset(ds).unwrap().ids());
        }
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        proptest::collection::vec(
            (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, proptest::option::of((0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64))),
            1..15,
        )
        .prop_map(|rows| {
            let with_sd = rows[0].3.is_some();
            Dataset {
                name: "gen".into(),
                kind: StimulusKind::Word,
                scale: Scale::Unit0To1,
                items: rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (v, a, d, sd))| Stimulus {
                        id: format!("w{i}"),
                        kind: StimulusKind::Word,
                        text: format!("word, \"{i}\""),
                        ground_truth: VadTriple::unit(v, a, d).unwrap(),
                        sd: if with_sd {
                            let (v, a, d) = sd.unwrap_or((0.0, 0.0, 0.0));
                            Some(VadSd { v, a, d })
                        } else {
                            None
                        },
                    })
                    .collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn canonical_csv_round_trips(d in arb_dataset()) {
            let text = dataset_to_csv(&d).unwrap();
            let back = parse_dataset_csv("gen", &text).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(dataset_to_csv(&back).unwrap(), text);
        }

        #[test]
        fn selection_matches_sort_oracle_and_is_idempotent(
            sds in proptest::collection::vec((0.0..3.0f64, 0.0..3.0f64, 0.0..3.0f64), 1..40),
            k_frac in 0.0..1.0f64,
        ) {
            let d = dataset(sds.iter().enumerate().map(|(i, s)| stim(&format!("{i:03}"), Some(*s))).collect());
            let k = 1 + ((d.len() - 1) as f64 * k_frac) as usize;
            let got = select_most_reliable(&d, k).unwrap();
            // oracle: sort (score, id) tuples directly
            let mut keyed: Vec<(f64, String)> = sds.iter().enumerate()
                .map(|(i, (v, a, dd))| (v * v + a * a + dd * dd, format!("{i:03}")))
                .collect();
            keyed.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let expect: Vec<String> = keyed.into_iter().take(k).map(|(_, id)| id).collect();
            prop_assert_eq!(got.ids(), expect.iter().map(String::as_str).collect::<Vec<_>>());
            let again = select_most_reliable(&got, k).unwrap();
            prop_assert_eq!(again.ids(), got.ids());
        }
    }
}
