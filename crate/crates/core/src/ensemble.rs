//! Late fusion of per-stream class scores.
//!
//! Streams are combined as `S = sum_s w_s * logits_s` with rows matched by
//! sample id; a softmax over the fused row gives class probabilities.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    sample_ids: Vec<String>,
    logits: Array2<f64>,
    stream_name: String,
}

impl ScoreMatrix {
    pub fn new(
        stream_name: impl Into<String>,
        sample_ids: Vec<String>,
        logits: Array2<f64>,
    ) -> Result<Self> {
        if logits.nrows() != sample_ids.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} score rows",
                sample_ids.len(),
                logits.nrows()
            )));
        }
        if logits.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "score matrix needs at least 2 classes, got {}",
                logits.ncols()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Alignment(format!("duplicate sample id `{dup}`")));
        }
        Ok(ScoreMatrix {
            sample_ids,
            logits: logits.as_standard_layout().into_owned(),
            stream_name: stream_name.into(),
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn stream_name(&self) -> &str {
        &self.stream_name
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.stream_name = name.into();
        self
    }

    /// Per-row argmax, lowest class index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect()
    }

    /// Rows reordered to follow `ids`, which must be the same id set.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Array2<f64>> {
        if ids.len() != self.sample_ids.len() {
            return Err(Error::Alignment(format!(
                "stream `{}` has {} samples, expected {}",
                self.stream_name,
                self.sample_ids.len(),
                ids.len()
            )));
        }
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut out = Array2::zeros((ids.len(), self.num_classes()));
        for (row, id) in ids.iter().enumerate() {
            let src = *index.get(id.as_str()).ok_or_else(|| {
                Error::Alignment(format!(
                    "sample `{id}` missing from stream `{}`",
                    self.stream_name
                ))
            })?;
            out.row_mut(row).assign(&self.logits.row(src));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(format!(
                "fusion weights must be finite and non-negative: {weights:?}"
            )));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Argument("at least one fusion weight must be positive".into()));
        }
        Ok(FusionWeights(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Whether fusion combines raw logits (default) or per-stream softmax outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionInput {
    #[default]
    Logits,
    Probabilities,
}

fn check_streams(streams: &[ScoreMatrix]) -> Result<()> {
    let first = streams
        .first()
        .ok_or_else(|| Error::Argument("no streams to fuse".into()))?;
    for s in streams {
        if s.num_classes() != first.num_classes() {
            return Err(Error::Dimension(format!(
                "stream `{}` has {} classes, `{}` has {}",
                s.stream_name,
                s.num_classes(),
                first.stream_name,
                first.num_classes()
            )));
        }
    }
    Ok(())
}

fn aligned_stack(streams: &[ScoreMatrix], input: FusionInput) -> Result<Vec<Array2<f64>>> {
    check_streams(streams)?;
    let ids = streams[0].sample_ids();
    streams
        .iter()
        .map(|s| {
            let m = s.aligned_to(ids)?;
            Ok(match input {
                FusionInput::Logits => m,
                FusionInput::Probabilities => softmax_rows(&m),
            })
        })
        .collect()
}

fn weighted_sum(mats: &[Array2<f64>], weights: &[f64]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(mats[0].raw_dim());
    for (m, &w) in mats.iter().zip(weights) {
        out.scaled_add(w, m);
    }
    out
}

/// Weighted sum of stream logits, rows aligned by sample id in the first
/// stream's order.
pub fn fuse_scores(streams: &[ScoreMatrix], weights: &FusionWeights) -> Result<ScoreMatrix> {
    fuse_scores_with(streams, weights, FusionInput::Logits)
}

pub fn fuse_scores_with(
    streams: &[ScoreMatrix],
    weights: &FusionWeights,
    input: FusionInput,
) -> Result<ScoreMatrix> {
    if weights.len() != streams.len() {
        return Err(Error::Argument(format!(
            "{} weights for {} streams",
            weights.len(),
            streams.len()
        )));
    }
    let mats = aligned_stack(streams, input)?;
    let fused = weighted_sum(&mats, weights.as_slice());
    ScoreMatrix::new("fused", streams[0].sample_ids.clone(), fused)
}

fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Row-wise max-shifted softmax.
pub fn softmax_scores(s: &ScoreMatrix) -> ScoreMatrix {
    ScoreMatrix {
        sample_ids: s.sample_ids.clone(),
        logits: softmax_rows(&s.logits),
        stream_name: s.stream_name.clone(),
    }
}

/// Labels for the first stream's ids, looked up by sample id.
pub fn labels_for(ids: &[String], labels: &[(String, usize)]) -> Result<Vec<usize>> {
    let map: HashMap<&str, usize> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    if map.len() != ids.len() {
        return Err(Error::Alignment(format!(
            "{} labels for {} scored samples",
            map.len(),
            ids.len()
        )));
    }
    ids.iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Alignment(format!("no label for sample `{id}`")))
        })
        .collect()
}

/// Grid points per axis: `0, step, 2*step, ...` up to and including 1.
pub fn grid_axis(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Argument(format!("grid step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut axis: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if (axis[n] - 1.0).abs() > 1e-9 {
        axis.push(1.0);
    } else {
        axis[n] = 1.0;
    }
    Ok(axis)
}

/// Largest number of grid points an exhaustive search will visit.
pub const MAX_GRID_POINTS: usize = 20_000_000;

/// Exhaustive search over `{0, step, ..., 1}^S` minus the origin for the
/// weights maximizing top-1 accuracy. Points are visited in lexicographic
/// order and only a strictly better accuracy replaces the incumbent, so ties
/// go to the lexicographically smallest weight vector. A single stream gets
/// weight 1.
pub fn grid_search_weights(
    streams: &[ScoreMatrix],
    labels: &[(String, usize)],
    grid_step: f64,
) -> Result<(FusionWeights, f64)> {
    grid_search_weights_with(streams, labels, grid_step, FusionInput::Logits)
}

pub fn grid_search_weights_with(
    streams: &[ScoreMatrix],
    labels: &[(String, usize)],
    grid_step: f64,
    input: FusionInput,
) -> Result<(FusionWeights, f64)> {
    let axis = grid_axis(grid_step)?;
    let mats = aligned_stack(streams, input)?;
    let y = labels_for(streams[0].sample_ids(), labels)?;
    let s = streams.len();
    if s == 1 {
        // every positive weight ranks classes identically
        let correct = mats[0]
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(r, l)| argmax(r.iter().copied()) == **l)
            .count();
        return Ok((FusionWeights::new(vec![1.0])?, correct as f64 / y.len().max(1) as f64));
    }
    let points = (axis.len() as f64).powi(s as i32);
    if points > MAX_GRID_POINTS as f64 {
        return Err(Error::Config(format!(
            "{s} streams at step {grid_step} give {points:.0} grid points; fuse in groups or use a coarser step"
        )));
    }
    let (n, k) = mats[0].dim();
    let mut idx = vec![0usize; s];
    let mut best: Option<(Vec<f64>, usize)> = None;
    let mut fused = vec![0.0; k];
    loop {
        // odometer increment, last coordinate fastest
        let mut pos = s;
        loop {
            if pos == 0 {
                let (w, correct) = best.expect("grid has at least one non-zero point");
                return Ok((FusionWeights::new(w)?, correct as f64 / n.max(1) as f64));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axis.len() {
                break;
            }
            idx[pos] = 0;
        }
        let w: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let mut correct = 0usize;
        for (row, &label) in y.iter().enumerate() {
            fused.iter_mut().for_each(|f| *f = 0.0);
            for (m, &ws) in mats.iter().zip(&w) {
                if ws != 0.0 {
                    for (f, &x) in fused.iter_mut().zip(m.row(row)) {
                        *f += ws * x;
                    }
                }
            }
            if argmax(fused.iter().copied()) == label {
                correct += 1;
            }
        }
        if best.as_ref().is_none_or(|(_, c)| correct > *c) {
            best = Some((w, correct));
        }
    }
}

/// Write `sample_id,c0,...,c{K-1}` with 17 significant digits per value.
pub fn write_scores(path: impl AsRef<Path>, s: &ScoreMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scores_to_csv(s)).map_err(|e| Error::io(path, e))
}

pub fn scores_to_csv(s: &ScoreMatrix) -> String {
    let mut out = String::from("sample_id");
    for c in 0..s.num_classes() {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for (id, row) in s.sample_ids.iter().zip(s.logits.rows()) {
        out.push_str(id);
        for x in row {
            out.push_str(&format!(",{x:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    scores_from_csv(&text, &name).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn scores_from_csv(text: &str, stream_name: &str) -> Result<ScoreMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("score header: {e}")))?
        .clone();
    let k = header.len().saturating_sub(1);
    let header_ok = header.get(0) == Some("sample_id")
        && k >= 2
        && (0..k).all(|c| header.get(c + 1) == Some(format!("c{c}").as_str()));
    if !header_ok {
        return Err(Error::Format(format!(
            "score header must be `sample_id,c0,...,c{{K-1}}` with K >= 2, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("score row {}: {e}", line + 2)))?;
        if record.len() != k + 1 {
            return Err(Error::Format(format!(
                "score row {} has {} fields, expected {}",
                line + 2,
                record.len(),
                k + 1
            )));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let x: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("score row {}: `{field}` is not a number", line + 2))
            })?;
            values.push(x);
        }
    }
    let n = ids.len();
    let logits = Array2::from_shape_vec((n, k), values).expect("row lengths checked");
    ScoreMatrix::new(stream_name, ids, logits).map_err(|e| match e {
        Error::NonFinite(m) => Error::Format(format!("non-finite value in {m}")),
        other => other,
    })
}
