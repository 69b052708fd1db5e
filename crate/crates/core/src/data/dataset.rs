use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::LlmCatalog;
use super::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub dataset_tag: String,
    pub perf: BTreeMap<String, f64>,
}

/// Validated queries resolved against a catalog. `perf[q][i]` is the score
/// of catalog entry `i` on record `q`. Records are sorted by id.
#[derive(Clone, Debug)]
pub struct Dataset {
    catalog: LlmCatalog,
    records: Vec<QueryRecord>,
    perf: Vec<Vec<f64>>,
    embeddings: Option<Tensor>,
}

fn check_perf(id: &str, llm: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(Error::Validation(format!(
            "query {id:?}: performance {v} for {llm:?} is outside [0, 1]"
        )));
    }
    Ok(())
}

impl Dataset {
    pub fn new(catalog: LlmCatalog, mut records: Vec<QueryRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        for w in records.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Validation(format!("duplicate query id {:?}", w[0].id)));
            }
        }
        let mut perf = Vec::with_capacity(records.len());
        for r in &records {
            for name in r.perf.keys() {
                if catalog.index_of(name).is_none() {
                    return Err(Error::Validation(format!(
                        "query {:?}: unknown LLM {name:?}",
                        r.id
                    )));
                }
            }
            let row = catalog
                .entries()
                .iter()
                .map(|e| {
                    let v = *r.perf.get(&e.name).ok_or_else(|| {
                        Error::Validation(format!(
                            "query {:?}: missing performance for LLM {:?}",
                            r.id, e.name
                        ))
                    })?;
                    check_perf(&r.id, &e.name, v)?;
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            perf.push(row);
        }
        Ok(Self {
            catalog,
            records,
            perf,
            embeddings: None,
        })
    }

    /// Reads a JSONL file of [`QueryRecord`]s. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>, catalog: &LlmCatalog) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        if records.is_empty() {
            log::warn!("{}: dataset is empty", path.display());
        }
        Self::new(catalog.clone(), records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn catalog(&self) -> &LlmCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn perf(&self) -> &[Vec<f64>] {
        &self.perf
    }

    pub fn tags(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.dataset_tag.as_str()).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// Distinct dataset tags in sorted order.
    pub fn tag_set(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.dataset_tag.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Row `q` of the attached embedding matrix.
    pub fn embedding(&self, q: usize) -> Option<&[f64]> {
        self.embeddings.as_ref().map(|t| t.row(q))
    }

    pub fn embeddings(&self) -> Option<&Tensor> {
        self.embeddings.as_ref()
    }

    pub fn require_embeddings(&self) -> Result<&Tensor> {
        self.embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("dataset has no embeddings attached".into()))
    }

    /// Aligns rows of `table` to records by id. Every record must have an
    /// embedding; extra table rows are ignored.
    pub fn attach_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        let d = table.header.d_enc;
        let mut data = Vec::with_capacity(self.len() * d);
        for r in &self.records {
            let row = table.row_by_id(&r.id).ok_or_else(|| {
                Error::Validation(format!("query {:?} has no embedding in the manifest", r.id))
            })?;
            data.extend_from_slice(row);
        }
        self.embeddings = Some(Tensor::new(self.len(), d, data)?);
        Ok(())
    }

    pub fn with_embeddings(mut self, table: &EmbeddingTable) -> Result<Self> {
        self.attach_embeddings(table)?;
        Ok(self)
    }

    /// Records at `indices` in the given order, keeping embeddings aligned.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        for &q in indices {
            if q >= self.len() {
                return Err(Error::Index(format!("query {q} of {}", self.len())));
            }
        }
        let embeddings = match &self.embeddings {
            Some(t) => {
                let mut data = Vec::with_capacity(indices.len() * t.cols());
                for &q in indices {
                    data.extend_from_slice(t.row(q));
                }
                Some(Tensor::new(indices.len(), t.cols(), data)?)
            }
            None => None,
        };
        Ok(Self {
            catalog: self.catalog.clone(),
            records: indices.iter().map(|&q| self.records[q].clone()).collect(),
            perf: indices.iter().map(|&q| self.perf[q].clone()).collect(),
            embeddings,
        })
    }

    /// Same queries against a sub-pool of the catalog. Performance entries
    /// for dropped LLMs are removed from the records.
    pub fn restrict_pool(&self, llms: &[usize]) -> Result<Self> {
        let catalog = self.catalog.subset(llms)?;
        let keep: HashSet<&str> = catalog.names().into_iter().collect();
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.perf.retain(|k, _| keep.contains(k.as_str()));
                r
            })
            .collect();
        Ok(Self {
            perf: self
                .perf
                .iter()
                .map(|row| llms.iter().map(|&i| row[i]).collect())
                .collect(),
            catalog,
            records,
            embeddings: self.embeddings.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> LlmCatalog {
        LlmCatalog::from_pairs([("a", 1.0), ("b", 2.0)]).unwrap()
    }

    fn rec(id: &str, a: f64, b: f64) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            text: None,
            dataset_tag: "T".into(),
            perf: [("a".to_string(), a), ("b".to_string(), b)].into(),
        }
    }

    #[test]
    fn sorted_by_id_and_resolved_in_catalog_order() {
        let d = Dataset::new(catalog(), vec![rec("z", 0.1, 0.2), rec("m", 1.0, 0.0)]).unwrap();
        assert_eq!(d.ids(), vec!["m", "z"]);
        assert_eq!(d.perf()[1], vec![0.1, 0.2]);
    }

    #[test]
    fn missing_llm_is_named() {
        let mut r = rec("q", 0.5, 0.5);
        r.perf.remove("b");
        let err = Dataset::new(catalog(), vec![r]).unwrap_err().to_string();
        assert!(err.contains("\"b\""), "{err}");
    }

    #[test]
    fn unknown_llm_and_range_rejected() {
        let mut r = rec("q", 0.5, 0.5);
        r.perf.insert("c".into(), 0.5);
        assert!(Dataset::new(catalog(), vec![r]).is_err());
        assert!(Dataset::new(catalog(), vec![rec("q", 1.5, 0.0)]).is_err());
        assert!(Dataset::new(catalog(), vec![rec("q", f64::NAN, 0.0)]).is_err());
        assert!(Dataset::new(catalog(), vec![rec("q", 0.0, 0.0), rec("q", 0.0, 0.0)]).is_err());
    }

    #[test]
    fn restrict_pool_reindexes() {
        let d = Dataset::new(catalog(), vec![rec("q", 0.25, 0.75)]).unwrap();
        let r = d.restrict_pool(&[1]).unwrap();
        assert_eq!(r.catalog().names(), vec!["b"]);
        assert_eq!(r.perf()[0], vec![0.75]);
        assert_eq!(r.records()[0].perf.len(), 1);
    }
}
