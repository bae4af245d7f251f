//! Replay tables of per-query, per-model `(score, cost)` pairs.
//!
//! Table: comma-separated, header `query_id,<model>__score,<model>__cost,...`.
//! Manifest: TOML with one `[[model]]` entry per model:
//!
//! ```toml
//! [[model]]
//! model_id = "gpt-3.5-turbo-1106"
//! alpha = 1.0
//! release_index = 7
//! ```
//!
//! Models are released in ascending `release_index` order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ModelId;

pub const SCORE_SUFFIX: &str = "__score";
pub const COST_SUFFIX: &str = "__cost";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub model_id: ModelId,
    pub alpha: f64,
    pub release_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "model")]
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Toml {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        manifest.models.sort_by_key(|m| m.release_index);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Schema("manifest lists no models".into()));
        }
        for w in self.models.windows(2) {
            if w[0].release_index == w[1].release_index {
                return Err(Error::Schema(format!(
                    "models `{}` and `{}` share release_index {}",
                    w[0].model_id, w[1].model_id, w[0].release_index
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if !seen.insert(&m.model_id) {
                return Err(Error::Schema(format!(
                    "duplicate manifest model `{}`",
                    m.model_id
                )));
            }
            if !(m.alpha > 0.0 && m.alpha <= 1.0) {
                return Err(Error::Schema(format!(
                    "model `{}`: alpha {} outside (0, 1]",
                    m.model_id, m.alpha
                )));
            }
        }
        Ok(())
    }
}

/// Validated replay data. Scores and costs are stored row-major
/// (`query * n_models + model`) with models in release order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    pub manifest: Manifest,
    pub query_ids: Vec<String>,
    scores: Vec<f64>,
    costs: Vec<f64>,
}

impl ReplayDataset {
    pub fn from_parts(
        manifest: Manifest,
        query_ids: Vec<String>,
        scores: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        manifest.validate()?;
        let m = manifest.models.len();
        if query_ids.is_empty() {
            return Err(Error::Schema("dataset has no queries".into()));
        }
        if scores.len() != query_ids.len() * m || costs.len() != scores.len() {
            return Err(Error::Schema("score/cost matrix shape mismatch".into()));
        }
        for (cell, (&s, &c)) in scores.iter().zip(&costs).enumerate() {
            let (row, col) = (cell / m, cell % m);
            let id = &manifest.models[col].model_id;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::OutOfRange {
                    row,
                    column: format!("{id}{SCORE_SUFFIX}"),
                    value: s,
                });
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::NonPositiveCost {
                    row,
                    column: format!("{id}{COST_SUFFIX}"),
                    value: c,
                });
            }
        }
        Ok(Self {
            manifest,
            query_ids,
            scores,
            costs,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_models(&self) -> usize {
        self.manifest.models.len()
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &ModelId> {
        self.manifest.models.iter().map(|m| &m.model_id)
    }

    #[inline]
    pub fn pair(&self, query: usize, model: usize) -> (f64, f64) {
        let i = query * self.n_models() + model;
        (self.scores[i], self.costs[i])
    }

    /// Column averages `(mean score, mean cost)` per model, in release order.
    pub fn column_means(&self) -> Vec<(f64, f64)> {
        let m = self.n_models();
        let mut sums = vec![(0.0, 0.0); m];
        for q in 0..self.n_queries() {
            for (j, acc) in sums.iter_mut().enumerate() {
                let (s, c) = self.pair(q, j);
                acc.0 += s;
                acc.1 += c;
            }
        }
        let n = self.n_queries() as f64;
        sums.into_iter().map(|(s, c)| (s / n, c / n)).collect()
    }

    /// Smallest and largest recorded cost.
    pub fn cost_range(&self) -> (f64, f64) {
        self.costs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                (lo.min(c), hi.max(c))
            })
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["query_id".to_owned()];
        for id in self.model_ids() {
            header.push(format!("{id}{SCORE_SUFFIX}"));
            header.push(format!("{id}{COST_SUFFIX}"));
        }
        w.write_record(&header)?;
        for (q, qid) in self.query_ids.iter().enumerate() {
            let mut rec = vec![qid.clone()];
            for j in 0..self.n_models() {
                let (s, c) = self.pair(q, j);
                rec.push(s.to_string());
                rec.push(c.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Loads and validates a replay table against its manifest.
pub fn load_replay_dataset(table: &Path, manifest: &Path) -> Result<ReplayDataset> {
    let manifest = Manifest::load(manifest)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(table)?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("query_id") {
        return Err(Error::Schema(format!(
            "{}: first column must be `query_id`",
            table.display()
        )));
    }

    let mut score_col: HashMap<&str, usize> = HashMap::new();
    let mut cost_col: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate().skip(1) {
        if let Some(model) = name.strip_suffix(SCORE_SUFFIX) {
            score_col.insert(model, i);
        } else if let Some(model) = name.strip_suffix(COST_SUFFIX) {
            cost_col.insert(model, i);
        } else {
            return Err(Error::Schema(format!(
                "unexpected column `{name}` (expected `<model>{SCORE_SUFFIX}` or `<model>{COST_SUFFIX}`)"
            )));
        }
    }
    let mut columns = Vec::with_capacity(manifest.models.len());
    for m in &manifest.models {
        let id = m.model_id.as_str();
        let s = score_col.get(id).ok_or_else(|| {
            Error::Schema(format!(
                "missing column `{id}{SCORE_SUFFIX}` for manifest model"
            ))
        })?;
        let c = cost_col.get(id).ok_or_else(|| {
            Error::Schema(format!(
                "missing column `{id}{COST_SUFFIX}` for manifest model"
            ))
        })?;
        columns.push((*s, *c));
    }

    let mut query_ids = Vec::new();
    let mut scores = Vec::new();
    let mut costs = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        query_ids.push(rec.get(0).unwrap_or_default().to_owned());
        for &(s, c) in &columns {
            scores.push(parse_cell(&rec, row, s, &header)?);
            costs.push(parse_cell(&rec, row, c, &header)?);
        }
    }
    ReplayDataset::from_parts(manifest, query_ids, scores, costs)
}

fn parse_cell(
    rec: &csv::StringRecord,
    row: usize,
    col: usize,
    header: &csv::StringRecord,
) -> Result<f64> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse::<f64>().map_err(|_| {
        Error::Schema(format!(
            "row {row}, column `{}`: cannot parse `{raw}` as a number",
            &header[col]
        ))
    })
}

/// Converts a RouterBench-style export (one row per prompt, a score column
/// named after each model and a `<model>|total_cost` column) into the replay
/// table layout. `models` fixes the release order; all other columns are
/// ignored. Returns the dataset with every model given cap `alpha`.
pub fn convert_routerbench(
    source: &Path,
    models: &[ModelId],
    alpha: f64,
    id_column: &str,
) -> Result<ReplayDataset> {
    let mut reader = csv::Reader::from_path(source)?;
    let header = reader.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col =
        find(id_column).ok_or_else(|| Error::Schema(format!("missing id column `{id_column}`")))?;
    let mut columns = Vec::with_capacity(models.len());
    for m in models {
        let s =
            find(m.as_str()).ok_or_else(|| Error::Schema(format!("missing score column `{m}`")))?;
        let cost_name = format!("{m}|total_cost");
        let c = find(&cost_name)
            .ok_or_else(|| Error::Schema(format!("missing cost column `{cost_name}`")))?;
        columns.push((s, c));
    }
    let manifest = Manifest {
        models: models
            .iter()
            .enumerate()
            .map(|(i, m)| ManifestEntry {
                model_id: m.clone(),
                alpha,
                release_index: i as u32,
            })
            .collect(),
    };
    let mut query_ids = Vec::new();
    let mut scores = Vec::new();
    let mut costs = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        query_ids.push(rec.get(id_col).unwrap_or_default().to_owned());
        for &(s, c) in &columns {
            scores.push(parse_cell(&rec, row, s, &header)?);
            costs.push(parse_cell(&rec, row, c, &header)?);
        }
    }
    ReplayDataset::from_parts(manifest, query_ids, scores, costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const MANIFEST: &str = r#"
[[model]]
model_id = "b"
alpha = 1.0
release_index = 1

[[model]]
model_id = "a"
alpha = 0.5
release_index = 0
"#;

    #[test]
    fn loads_well_formed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.toml", MANIFEST);
        let t = write(
            dir.path(),
            "t.csv",
            "query_id,a__score,a__cost,b__score,b__cost\nq1,1,0.001,0,0.002\nq2,0.5,0.003,1,0.002\nq3,0,0.002,1,0.002\n",
        );
        let ds = load_replay_dataset(&t, &m).unwrap();
        assert_eq!(ds.n_queries(), 3);
        assert_eq!(ds.manifest.models[0].model_id, ModelId::from("a"));
        assert_eq!(ds.pair(1, 0), (0.5, 0.003));
        let means = ds.column_means();
        assert!((means[0].0 - 0.5).abs() < 1e-15);
        assert!((means[1].1 - 0.002).abs() < 1e-15);
        assert_eq!(ds.cost_range(), (0.001, 0.003));
    }

    #[test]
    fn score_out_of_range_names_cell() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.toml", MANIFEST);
        let t = write(
            dir.path(),
            "t.csv",
            "query_id,a__score,a__cost,b__score,b__cost\nq1,1.2,0.001,0,0.002\n",
        );
        match load_replay_dataset(&t, &m).unwrap_err() {
            Error::OutOfRange { row, column, value } => {
                assert_eq!((row, column.as_str(), value), (0, "a__score", 1.2));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_positive_cost_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.toml", MANIFEST);
        let t = write(
            dir.path(),
            "t.csv",
            "query_id,a__score,a__cost,b__score,b__cost\nq1,1,0.001,0,0\n",
        );
        assert!(matches!(
            load_replay_dataset(&t, &m).unwrap_err(),
            Error::NonPositiveCost { row: 0, .. }
        ));
    }

    #[test]
    fn missing_model_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.toml", MANIFEST);
        let t = write(
            dir.path(),
            "t.csv",
            "query_id,a__score,a__cost\nq1,1,0.001\n",
        );
        assert!(matches!(
            load_replay_dataset(&t, &m).unwrap_err(),
            Error::Schema(msg) if msg.contains("b__score")
        ));
    }

    #[test]
    fn converts_routerbench_layout() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(
            dir.path(),
            "rb.csv",
            "sample_id,prompt,eval_name,x,x|model_response,x|total_cost,y,y|model_response,y|total_cost\n\
             s1,hi,mmlu,1,ok,0.002,0,no,0.0001\n\
             s2,yo,gsm8k,0,meh,0.003,1,yes,0.0002\n",
        );
        let ds = convert_routerbench(&src, &["y".into(), "x".into()], 1.0, "sample_id").unwrap();
        assert_eq!(ds.manifest.models[0].model_id, ModelId::from("y"));
        assert_eq!(ds.pair(1, 0), (1.0, 0.0002));
        assert_eq!(ds.pair(0, 1), (1.0, 0.002));

        let table = dir.path().join("t.csv");
        let man = dir.path().join("m.toml");
        ds.write_table(&table).unwrap();
        fs::write(&man, ds.manifest.to_toml()).unwrap();
        assert_eq!(load_replay_dataset(&table, &man).unwrap(), ds);
    }
}
