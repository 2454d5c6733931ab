//! File formats: datasets, simulation truth, fit artifacts and the CSV
//! outputs of prediction and selection.
//!
//! A dataset is one JSON document:
//!
//! ```text
//! { "format": "comet-dataset/1", "D": 2, "p": [2, 3], "q": [2, 2],
//!   "n": 2, "m": [3, 1], "encoding": "json",
//!   "subjects": [ { "y": [..m_i], "x": [..m_i p*], "z": [..m_i q*] }, .. ] }
//! ```
//!
//! `x` and `z` hold the observations' tensors back to back, each flattened
//! first mode fastest. `y` may be omitted everywhere for prediction inputs.
//! With `"encoding": "f64le"` the `subjects` array is replaced by a
//! `"sidecar"` path (relative to the JSON file) holding, subject after
//! subject, `y` (when `"responses": true`), `x` and `z` as little-endian
//! 64-bit floats in the same order.
//!
//! A fit artifact is a JSON header line followed by one JSON line per
//! retained iteration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compression::{draw_projections, ProjectionSet};
use crate::error::{CometError, Result};
use crate::model::{ClusteredDataset, Observation, Subject};
use crate::posterior::{Chain, ChainHeader, PredictionInterval, Snapshot, FIT_FORMAT};
use crate::sim::Truth;
use crate::tensor::{CpDecomposition, DenseTensor};

pub const DATASET_FORMAT: &str = "comet-dataset/1";
pub const TRUTH_FORMAT: &str = "comet-truth/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Json,
    F64le,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubjectRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<Vec<f64>>,
    x: Vec<f64>,
    z: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format: String,
    #[serde(rename = "D")]
    order: usize,
    p: Vec<usize>,
    q: Vec<usize>,
    n: usize,
    m: Vec<usize>,
    #[serde(default)]
    encoding: Encoding,
    #[serde(default = "yes")]
    responses: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    subjects: Vec<SubjectRecord>,
}

fn yes() -> bool {
    true
}

/// A dataset as read from disk; without responses every `y` is zero.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: ClusteredDataset,
    pub responses: bool,
}

fn bad(msg: impl Into<String>) -> CometError {
    CometError::Format(msg.into())
}

fn header_of(ds: &ClusteredDataset, encoding: Encoding, responses: bool) -> DatasetFile {
    DatasetFile {
        format: DATASET_FORMAT.into(),
        order: ds.order(),
        p: ds.p.clone(),
        q: ds.q.clone(),
        n: ds.n_subjects(),
        m: ds.cluster_sizes(),
        encoding,
        responses,
        sidecar: None,
        subjects: Vec::new(),
    }
}

fn flatten(s: &Subject) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let y = s.observations.iter().map(|o| o.y).collect();
    let x = s.observations.iter().flat_map(|o| o.x.data().iter().copied()).collect();
    let z = s.observations.iter().flat_map(|o| o.z.data().iter().copied()).collect();
    (y, x, z)
}

/// Writes `ds` as a single JSON document.
pub fn write_dataset_json<W: Write>(ds: &ClusteredDataset, responses: bool, w: W) -> Result<()> {
    let mut file = header_of(ds, Encoding::Json, responses);
    file.subjects = ds
        .subjects
        .iter()
        .map(|s| {
            let (y, x, z) = flatten(s);
            SubjectRecord {
                y: responses.then_some(y),
                x,
                z,
            }
        })
        .collect();
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the header to `path` and the values to a sidecar next to it.
pub fn write_dataset_f64le(ds: &ClusteredDataset, responses: bool, path: &Path) -> Result<()> {
    let sidecar = path.with_extension("f64");
    let mut file = header_of(ds, Encoding::F64le, responses);
    file.sidecar = Some(
        sidecar
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| bad("sidecar path is not valid UTF-8"))?
            .to_string(),
    );
    let mut bin = BufWriter::new(File::create(&sidecar)?);
    for s in &ds.subjects {
        let (y, x, z) = flatten(s);
        let values = if responses { [y, x, z].concat() } else { [x, z].concat() };
        for v in values {
            bin.write_all(&v.to_le_bytes())?;
        }
    }
    bin.flush()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn take<'a>(values: &mut &'a [f64], n: usize, what: &str) -> Result<&'a [f64]> {
    if values.len() < n {
        return Err(bad(format!("{what}: need {n} values, found {}", values.len())));
    }
    let (head, tail) = values.split_at(n);
    *values = tail;
    Ok(head)
}

fn build_subject(file: &DatasetFile, m: usize, y: Option<&[f64]>, x: &[f64], z: &[f64]) -> Result<Subject> {
    let (ps, qs) = (file.p.iter().product::<usize>(), file.q.iter().product::<usize>());
    if x.len() != m * ps || z.len() != m * qs || y.is_some_and(|y| y.len() != m) {
        return Err(bad(format!(
            "subject arrays have lengths y {:?}, x {}, z {}; expected {m}, {}, {}",
            y.map(|y| y.len()),
            x.len(),
            z.len(),
            m * ps,
            m * qs
        )));
    }
    let observations = (0..m)
        .map(|j| {
            Ok(Observation {
                y: y.map_or(0.0, |y| y[j]),
                x: DenseTensor::new(file.p.clone(), x[j * ps..(j + 1) * ps].to_vec())?,
                z: DenseTensor::new(file.q.clone(), z[j * qs..(j + 1) * qs].to_vec())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Subject { observations })
}

/// Reads a dataset; `base` resolves a relative sidecar path.
pub fn read_dataset<R: Read>(r: R, base: Option<&Path>) -> Result<LoadedDataset> {
    let file: DatasetFile = serde_json::from_reader(BufReader::new(r))?;
    if file.format != DATASET_FORMAT {
        return Err(bad(format!("expected format {DATASET_FORMAT}, found {}", file.format)));
    }
    if file.order != file.p.len() || file.order != file.q.len() {
        return Err(bad(format!("D = {} does not match p {:?} and q {:?}", file.order, file.p, file.q)));
    }
    if file.n != file.m.len() {
        return Err(bad(format!("n = {} but {} cluster sizes", file.n, file.m.len())));
    }
    let subjects = match file.encoding {
        Encoding::Json => {
            if file.subjects.len() != file.n {
                return Err(bad(format!("n = {} but {} subject records", file.n, file.subjects.len())));
            }
            file.subjects
                .iter()
                .zip(&file.m)
                .map(|(rec, &m)| {
                    if file.responses != rec.y.is_some() {
                        return Err(bad("responses flag disagrees with subject records"));
                    }
                    build_subject(&file, m, rec.y.as_deref(), &rec.x, &rec.z)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Encoding::F64le => {
            let name = file.sidecar.as_deref().ok_or_else(|| bad("f64le encoding needs a sidecar"))?;
            let path = base.map_or_else(|| PathBuf::from(name), |b| b.join(name));
            let mut bytes = Vec::new();
            File::open(&path)?.read_to_end(&mut bytes)?;
            if bytes.len() % 8 != 0 {
                return Err(bad("sidecar length is not a multiple of 8"));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let mut rest = values.as_slice();
            let (ps, qs) = (file.p.iter().product::<usize>(), file.q.iter().product::<usize>());
            let subjects = file
                .m
                .iter()
                .map(|&m| {
                    let y = if file.responses { Some(take(&mut rest, m, "y")?) } else { None };
                    let x = take(&mut rest, m * ps, "x")?;
                    let z = take(&mut rest, m * qs, "z")?;
                    build_subject(&file, m, y, x, z)
                })
                .collect::<Result<Vec<_>>>()?;
            if !rest.is_empty() {
                return Err(bad(format!("{} trailing values in sidecar", rest.len())));
            }
            subjects
        }
    };
    let dataset = ClusteredDataset {
        p: file.p,
        q: file.q,
        subjects,
    };
    dataset.validate()?;
    Ok(LoadedDataset {
        dataset,
        responses: file.responses,
    })
}

pub fn read_dataset_path(path: &Path) -> Result<LoadedDataset> {
    read_dataset(File::open(path)?, path.parent())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    format: String,
    p: Vec<usize>,
    q: Vec<usize>,
    rank: usize,
    /// `vec(B)`, first mode fastest.
    b: Vec<f64>,
    factors: Vec<Vec<f64>>,
    rho: f64,
    tau2: f64,
    /// Mode covariances, column by column.
    sigma: Vec<Vec<f64>>,
}

pub fn write_truth<W: Write>(t: &Truth, q: &[usize], w: W) -> Result<()> {
    let file = TruthFile {
        format: TRUTH_FORMAT.into(),
        p: t.b.dims().to_vec(),
        q: q.to_vec(),
        rank: t.factors.rank(),
        b: t.b.data().to_vec(),
        factors: t.factors.factors().iter().map(|f| f.as_slice().to_vec()).collect(),
        rho: t.rho,
        tau2: t.tau2,
        sigma: t.sigma.iter().map(|s| s.as_slice().to_vec()).collect(),
    };
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(r: R) -> Result<Truth> {
    let f: TruthFile = serde_json::from_reader(BufReader::new(r))?;
    if f.format != TRUTH_FORMAT {
        return Err(bad(format!("expected format {TRUTH_FORMAT}, found {}", f.format)));
    }
    if f.factors.len() != f.p.len() || f.sigma.len() != f.q.len() {
        return Err(bad("truth has the wrong number of factors or covariances"));
    }
    let factors = f
        .p
        .iter()
        .zip(&f.factors)
        .map(|(&pd, v)| {
            if v.len() != pd * f.rank {
                return Err(bad("factor length does not match p and rank"));
            }
            Ok(DMatrix::from_column_slice(pd, f.rank, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma = f
        .q
        .iter()
        .zip(&f.sigma)
        .map(|(&qd, v)| {
            if v.len() != qd * qd {
                return Err(bad("covariance length does not match q"));
            }
            Ok(DMatrix::from_column_slice(qd, qd, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Truth {
        factors: CpDecomposition::new(factors)?,
        b: DenseTensor::new(f.p, f.b)?,
        sigma,
        rho: f.rho,
        tau2: f.tau2,
    })
}

pub fn write_fit<W: Write>(chain: &Chain, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    serde_json::to_writer(&mut w, &chain.header)?;
    w.write_all(b"\n")?;
    for s in &chain.snapshots {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fit<R: Read>(r: R) -> Result<Chain> {
    let mut lines = BufReader::new(r).lines();
    let first = lines.next().ok_or_else(|| bad("fit artifact is empty"))??;
    let header: ChainHeader = serde_json::from_str(&first)?;
    if header.format != FIT_FORMAT {
        return Err(bad(format!("expected format {FIT_FORMAT}, found {}", header.format)));
    }
    let mut chain = Chain::new(header);
    let cells: usize = chain.header.p.iter().product();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let s: Snapshot = serde_json::from_str(&line)?;
        if s.b.len() != cells {
            return Err(bad(format!("snapshot {} has {} cells, expected {cells}", i + 1, s.b.len())));
        }
        chain.push(s);
    }
    Ok(chain)
}

/// Regenerates the training projections recorded in a fit header.
pub fn projections_for(header: &ChainHeader) -> Result<ProjectionSet> {
    let seed = header
        .projection_seed
        .ok_or_else(|| bad("fit was made with a known covariance and has no projections"))?;
    draw_projections(&header.q, &header.k, seed)
}

pub const PREDICTION_COLUMNS: [&str; 6] = ["subject", "observation", "mean", "lo", "hi", "y"];

/// One row per new observation, 1-based subject and observation numbers;
/// `y` is left empty when responses are unknown.
pub fn write_predictions_csv<W: Write>(
    intervals: &[Vec<PredictionInterval>],
    responses: Option<&[Vec<f64>]>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PREDICTION_COLUMNS)?;
    for (i, subject) in intervals.iter().enumerate() {
        for (j, pi) in subject.iter().enumerate() {
            let y = responses.map_or_else(String::new, |r| r[i][j].to_string());
            out.write_record([
                (i + 1).to_string(),
                (j + 1).to_string(),
                pi.mean.to_string(),
                pi.lo.to_string(),
                pi.hi.to_string(),
                y,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-cell posterior summary of `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSelection {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    pub s2m: bool,
    pub ci: bool,
}

/// Columns: 1-based index per mode `j1..jD`, then median, lo, hi, and the
/// two selection flags as 0/1.
pub fn write_selection_csv<W: Write>(dims: &[usize], cells: &[CellSelection], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=dims.len()).map(|d| format!("j{d}")).collect();
    header.extend(["median", "lo", "hi", "s2m", "ci_excludes_zero"].map(String::from));
    out.write_record(&header)?;
    for (c, cell) in cells.iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        let mut rem = c;
        for &d in dims {
            rec.push((rem % d + 1).to_string());
            rem /= d;
        }
        rec.push(cell.median.to_string());
        rec.push(cell.lo.to_string());
        rec.push(cell.hi.to_string());
        rec.push(u8::from(cell.s2m).to_string());
        rec.push(u8::from(cell.ci).to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::Method;
    use crate::model::Hyperparams;

    fn ds() -> ClusteredDataset {
        let obs = |v: f64| Observation {
            y: v * 0.1 + 1.0 / 3.0,
            x: DenseTensor::from_fn(vec![2, 3], |i| v + i[0] as f64 * 0.7 - i[1] as f64 / 7.0).unwrap(),
            z: DenseTensor::from_fn(vec![2, 2], |i| v - i[1] as f64 + 1e-17).unwrap(),
        };
        ClusteredDataset {
            p: vec![2, 3],
            q: vec![2, 2],
            subjects: vec![
                Subject { observations: vec![obs(1.0), obs(2.0), obs(3.0)] },
                Subject { observations: vec![obs(4.0)] },
            ],
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let d = ds();
        let mut buf = Vec::new();
        write_dataset_json(&d, true, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), None).unwrap();
        assert!(back.responses);
        assert_eq!(back.dataset, d);
        let mut again = Vec::new();
        write_dataset_json(&back.dataset, true, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn missing_responses_read_as_zero() {
        let mut buf = Vec::new();
        write_dataset_json(&ds(), false, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), None).unwrap();
        assert!(!back.responses);
        assert!(back.dataset.subjects.iter().flat_map(|s| &s.observations).all(|o| o.y == 0.0));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = std::env::temp_dir().join(format!("comet-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.json");
        write_dataset_f64le(&ds(), true, &path).unwrap();
        let back = read_dataset_path(&path).unwrap();
        assert_eq!(back.dataset, ds());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let text = r#"{"format":"comet-dataset/1","D":1,"p":[2],"q":[1],"n":1,"m":[1],
            "subjects":[{"y":[1.0],"x":[1.0],"z":[1.0]}]}"#;
        assert!(matches!(read_dataset(text.as_bytes(), None), Err(CometError::Format(_))));
        let text = r#"{"format":"comet-dataset/1","D":1,"p":[1],"q":[1],"n":1,"m":[1],"extra":1,
            "subjects":[{"y":[1.0],"x":[1.0],"z":[1.0]}]}"#;
        assert!(matches!(read_dataset(text.as_bytes(), None), Err(CometError::Json(_))));
    }

    #[test]
    fn fit_round_trip() {
        let d = ds();
        let hp = Hyperparams::defaults_for(&d.p, &d.q);
        let mut chain = Chain::new(ChainHeader::new(&d, &hp, Some(5), Method::Comet));
        for t in 0..3 {
            chain.push(Snapshot {
                b: (0..6).map(|c| (c * t) as f64 / 3.0).collect(),
                factors: vec![vec![0.1; 4], vec![0.2; 6]],
                gamma: vec![vec![1.0 / 7.0; 4], vec![2.0; 4]],
                tau2: 0.3 + t as f64,
                lambda2: None,
                delta2: Some(vec![1.5, 2.5]),
                dtilde: None,
            });
        }
        let mut buf = Vec::new();
        write_fit(&chain, &mut buf).unwrap();
        let back = read_fit(buf.as_slice()).unwrap();
        assert_eq!(back.header, chain.header);
        assert_eq!(back.snapshots, chain.snapshots);
        assert_eq!(projections_for(&back.header).unwrap().k(), &hp.k[..]);
    }

    #[test]
    fn selection_csv_indices_are_one_based_first_mode_fastest() {
        let cells: Vec<CellSelection> = (0..4)
            .map(|c| CellSelection {
                median: c as f64,
                lo: -1.0,
                hi: 1.0,
                s2m: c == 3,
                ci: false,
            })
            .collect();
        let mut buf = Vec::new();
        write_selection_csv(&[2, 2], &cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "j1,j2,median,lo,hi,s2m,ci_excludes_zero");
        assert_eq!(lines[2], "2,1,1,-1,1,0,0");
        assert_eq!(lines[4], "2,2,3,-1,1,1,0");
    }
}
