//! JSON-lines corpora, prediction files and versioned checkpoints.
//!
//! Every record and file carries `schema_version`; readers reject versions
//! they do not know.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, Mat, Model, ModelParams, Real};
use crate::error::{Error, Result};
use crate::table::{CellCoord, Table, TablePermutation, TableTextPair};

pub const SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "relbias-checkpoint";

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "{what} has schema_version {found}, expected {SCHEMA_VERSION}"
        )))
    }
}

/// On-disk form of a [`TableTextPair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub sentence: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default)]
    pub gold_cells: Vec<CellCoord>,
}

impl From<&TableTextPair> for PairRecord {
    fn from(pair: &TableTextPair) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sentence: pair.sentence.clone(),
            headers: pair.table().headers().to_vec(),
            rows: pair.table().rows().to_vec(),
            gold_cells: pair.gold_cells().iter().copied().collect(),
        }
    }
}

impl TryFrom<PairRecord> for TableTextPair {
    type Error = Error;

    fn try_from(r: PairRecord) -> Result<Self> {
        check_version(r.schema_version, "pair record")?;
        TableTextPair::new(r.sentence, Table::new(r.headers, r.rows)?, r.gold_cells)
    }
}

/// Cells selected for one example, optionally on a permuted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub selected: Vec<CellCoord>,
    /// When present, `selected` refers to the table after this permutation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<TablePermutation>,
}

impl PredictionRecord {
    /// Selected cells in the coordinates of the unpermuted table.
    pub fn original_cells(&self) -> std::collections::BTreeSet<CellCoord> {
        match &self.permutation {
            None => self.selected.iter().copied().collect(),
            Some(p) => {
                let inv = p.inverse();
                self.selected.iter().map(|&c| inv.apply(c)).collect()
            }
        }
    }
}

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<TableTextPair>> {
    let records: Vec<PairRecord> = read_jsonl(BufReader::new(File::open(path)?))?;
    records
        .into_iter()
        .enumerate()
        .map(|(n, r)| TableTextPair::try_from(r).map_err(|e| Error::Format(format!("record {}: {e}", n + 1))))
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[TableTextPair]) -> Result<()> {
    let records: Vec<PairRecord> = pairs.iter().map(PairRecord::from).collect();
    write_jsonl(BufWriter::new(File::create(path)?), &records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = read_jsonl(BufReader::new(File::open(path)?))?;
    for r in &records {
        check_version(r.schema_version, "prediction record")?;
    }
    Ok(records)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), records)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing parameter container. Values are stored as f64 whatever
/// the model precision; JSON round-trips f64 exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub format: String,
    pub config: EncoderConfig,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>) -> Self {
        let tensors = model
            .params
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorRecord {
                name,
                shape: [m.rows(), m.cols()],
                data: m.as_slice().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            format: CHECKPOINT_FORMAT.into(),
            config: model.config.clone(),
            tensors,
        }
    }

    pub fn into_model<T: Real>(self) -> Result<Model<T>> {
        check_version(self.schema_version, "checkpoint")?;
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", self.format)));
        }
        self.config.validate()?;
        let mut params = ModelParams::<T>::init(&self.config, 0)?;
        let mut slots = params.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has {} tensors, configuration needs {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), rec) in slots.iter_mut().zip(self.tensors) {
            if *name != rec.name || [slot.rows(), slot.cols()] != rec.shape || rec.data.len() != slot.len() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {} {:?} does not fit slot {name} [{}, {}]",
                    rec.name,
                    rec.shape,
                    slot.rows(),
                    slot.cols()
                )));
            }
            **slot = Mat::from_vec(
                rec.shape[0],
                rec.shape[1],
                rec.data.iter().map(|&v| T::lit(v)).collect(),
            );
        }
        drop(slots);
        Model::from_parts(self.config, params)
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>) -> Result<()> {
    write_json(path, &Checkpoint::from_model(model))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    read_json::<Checkpoint>(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::random_permutation;

    fn pair() -> TableTextPair {
        let table = Table::from_strs(&["name", "age"], &[&["ann", "31"], &["bo", ""]]).unwrap();
        TableTextPair::new("age of ann", table, [CellCoord::new(0, 1)]).unwrap()
    }

    #[test]
    fn pair_record_round_trip() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[PairRecord::from(&pair())]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"gold_cells\":[[0,1]]"));
        assert!(text.contains("\"schema_version\":1"));
        let back: Vec<PairRecord> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(TableTextPair::try_from(back[0].clone()).unwrap(), pair());
    }

    #[test]
    fn bad_records_are_rejected() {
        let bad = b"{\"sentence\":\"q\",\"headers\":[\"a\"],\"rows\":[[\"x\"]],\"gold_cells\":[[3,0]]}\n";
        let recs: Vec<PairRecord> = read_jsonl(&bad[..]).unwrap();
        assert!(TableTextPair::try_from(recs[0].clone()).is_err());
        let future = b"{\"schema_version\":9,\"sentence\":\"q\",\"headers\":[\"a\"],\"rows\":[]}\n";
        let recs: Vec<PairRecord> = read_jsonl(&future[..]).unwrap();
        assert!(matches!(
            TableTextPair::try_from(recs[0].clone()),
            Err(Error::Format(_))
        ));
        let r: Result<Vec<PairRecord>> = read_jsonl(&b"\n{not json\n"[..]);
        match r {
            Err(Error::Format(msg)) => assert!(msg.starts_with("line 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prediction_maps_back() {
        let perm = random_permutation(3, 2, 4);
        let rec = PredictionRecord {
            schema_version: SCHEMA_VERSION,
            selected: vec![perm.apply(CellCoord::new(2, 1))],
            permutation: Some(perm),
        };
        let json = serde_json::to_string(&rec).unwrap();
        let back: PredictionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.original_cells(), [CellCoord::new(2, 1)].into());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let config = EncoderConfig::new(1, 2, 4).with_vocab(16, 16);
        let mut model = Model::<f64>::new(config, 9).unwrap();
        model.params.randomize_bias_scalars(1, 0.3);
        let json = serde_json::to_string(&Checkpoint::from_model(&model)).unwrap();
        let back: Model<f64> = serde_json::from_str::<Checkpoint>(&json).unwrap().into_model().unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn checkpoint_shape_mismatch() {
        let model = Model::<f64>::new(EncoderConfig::new(1, 2, 4).with_vocab(16, 16), 9).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        ck.config.layers = 2;
        assert!(matches!(
            ck.clone().into_model::<f64>(),
            Err(Error::DimensionMismatch(_))
        ));
        ck.config.layers = 1;
        ck.tensors[0].data.pop();
        assert!(matches!(ck.into_model::<f64>(), Err(Error::DimensionMismatch(_))));
    }
}
