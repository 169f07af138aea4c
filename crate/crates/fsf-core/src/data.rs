//! Trace-log ingestion and windowed dataset construction.
//!
//! A trace log is a CSV of per-message telemetry rows (fixed header, one row
//! per broadcast message). The pipeline turns it into fixed-length windows:
//!
//! ```text
//! parse_trace_log -> build_windows -> split_dataset -> FeatureScaler::fit/apply
//! ```
//!
//! plus [`compute_class_weights`] for imbalance-aware losses,
//! [`generate_corpus`] for a deterministic synthetic data source, and
//! [`partition_clients`] for federation experiments.

use ndarray::Array2;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::rng::{derive_rng, Stream};

/// Features per message, in CSV column order after the two id columns:
/// `ts, pos_x, pos_y, spd_x, spd_y, acl_x, acl_y, hed_x, hed_y`.
pub const FEATURES: usize = 9;

/// Default window length (messages per sample).
pub const WINDOW: usize = 20;

/// Default window stride.
pub const STRIDE: usize = 10;

/// Number of behaviour classes (0 = normal, 1..=19 = attack families).
pub const NUM_CLASSES: usize = 20;

/// Label reserved for exported generator output; never valid in a trace log.
pub const GENERATED_LABEL: u8 = 20;

/// Expected CSV header line.
pub const CSV_HEADER: &str =
    "vehicle_id,msg_index,ts,pos_x,pos_y,spd_x,spd_y,acl_x,acl_y,hed_x,hed_y,label";

const FEATURE_NAMES: [&str; FEATURES] = [
    "ts", "pos_x", "pos_y", "spd_x", "spd_y", "acl_x", "acl_y", "hed_x", "hed_y",
];

/// Split ratios for train / validation / test.
pub const SPLIT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(thiserror::Error, Debug)]
pub enum DataError {
    #[error("line {line}: malformed row: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("line {line}: feature `{field}` is not finite")]
    NonFiniteFeature { line: u64, field: &'static str },
    #[error("line {line}: label {label} outside 0..=19")]
    LabelOutOfRange { line: u64, label: i64 },
    #[error("bad header: expected `{CSV_HEADER}`")]
    BadHeader,
    #[error("class mix must be non-negative and sum to 1 (sum = {0})")]
    BadClassMix(f64),
    #[error("cannot partition {samples} samples across {clients} clients")]
    TooManyClients { clients: usize, samples: usize },
    #[error("window/stride must be positive")]
    BadWindowing,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One telemetry message.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub vehicle_id: u64,
    pub msg_index: u64,
    pub features: [f64; FEATURES],
    pub label: u8,
}

/// One windowed sample: a `window x FEATURES` matrix and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub values: Array2<f64>,
    pub label: u8,
}

impl SequenceSample {
    pub fn window_len(&self) -> usize {
        self.values.nrows()
    }
}

/// Stratified train/validation/test split.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub validation: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub seed: u64,
}

/// Parses a trace log, validating the header, field arity and types, feature
/// finiteness, and the label range. Errors carry the 1-based line number.
pub fn parse_trace_log<R: io::Read>(reader: R) -> Result<Vec<TraceRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    {
        let headers = rdr.headers()?;
        let expected: Vec<&str> = CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(DataError::BadHeader);
        }
    }
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 + FEATURES + 1 {
            return Err(DataError::MalformedRow {
                line,
                msg: format!("expected {} fields, found {}", 2 + FEATURES + 1, record.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_u64 = |i: usize, name: &str| {
            field(i).parse::<u64>().map_err(|e| DataError::MalformedRow {
                line,
                msg: format!("{name}: {e}"),
            })
        };
        let vehicle_id = parse_u64(0, "vehicle_id")?;
        let msg_index = parse_u64(1, "msg_index")?;
        let mut features = [0.0; FEATURES];
        for (j, slot) in features.iter_mut().enumerate() {
            let name = FEATURE_NAMES[j];
            let v: f64 = field(2 + j).parse().map_err(|e| DataError::MalformedRow {
                line,
                msg: format!("{name}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteFeature { line, field: name });
            }
            *slot = v;
        }
        let label: i64 = field(2 + FEATURES)
            .parse()
            .map_err(|e| DataError::MalformedRow { line, msg: format!("label: {e}") })?;
        if !(0..NUM_CLASSES as i64).contains(&label) {
            return Err(DataError::LabelOutOfRange { line, label });
        }
        out.push(TraceRecord { vehicle_id, msg_index, features, label: label as u8 });
    }
    Ok(out)
}

/// Writes records in the trace-log CSV layout.
pub fn write_trace_log<W: io::Write>(records: &[TraceRecord], writer: W) -> Result<(), DataError> {
    let mut w = io::BufWriter::new(writer);
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        write!(w, "{},{}", r.vehicle_id, r.msg_index)?;
        for v in &r.features {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", r.label)?;
    }
    Ok(())
}

/// Number of windows a stream of length `len` yields.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Slices per-vehicle streams into windows of `window` messages every
/// `stride`. Records are grouped by vehicle id and ordered by message index;
/// windows whose messages disagree on the label are discarded.
pub fn build_windows(
    records: &[TraceRecord],
    window: usize,
    stride: usize,
) -> Result<Vec<SequenceSample>, DataError> {
    if window == 0 || stride == 0 {
        return Err(DataError::BadWindowing);
    }
    let mut by_vehicle: BTreeMap<u64, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for stream in by_vehicle.values_mut() {
        stream.sort_by_key(|r| r.msg_index);
        let n = window_count(stream.len(), window, stride);
        for w in 0..n {
            let start = w * stride;
            let slice = &stream[start..start + window];
            let label = slice[0].label;
            if slice.iter().any(|r| r.label != label) {
                continue;
            }
            let mut values = Array2::zeros((window, FEATURES));
            for (t, r) in slice.iter().enumerate() {
                for (j, &v) in r.features.iter().enumerate() {
                    values[[t, j]] = v;
                }
            }
            out.push(SequenceSample { values, label });
        }
    }
    Ok(out)
}

/// Stratified 70/15/15 split, deterministic per seed.
///
/// Membership is drawn per class from a seed-derived stream. Counts use a
/// largest-remainder rounding that tracks the global deficit of each split,
/// so overall sizes stay within one sample of the exact ratios while each
/// class stays within two samples of its own exact shares.
pub fn split_dataset(samples: Vec<SequenceSample>, seed: u64) -> DatasetSplit {
    let mut by_class: BTreeMap<u8, Vec<SequenceSample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label).or_default().push(s);
    }

    let mut parts: [Vec<SequenceSample>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut alloc = [0usize; 3];
    let mut processed = 0usize;
    for (&class, members) in by_class.iter_mut() {
        let mut rng = derive_rng(seed, Stream::Split, &[u64::from(class)]);
        shuffle(members, &mut rng);

        let n = members.len();
        processed += n;
        let exact: Vec<f64> = SPLIT_RATIOS.iter().map(|r| r * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut leftover = n - counts.iter().sum::<usize>();
        while leftover > 0 {
            // Give the spare sample to the split lagging furthest behind its
            // global target; break ties toward the larger fractional share.
            let target = |s: usize| SPLIT_RATIOS[s] * processed as f64;
            let best = (0..3)
                .max_by(|&a, &b| {
                    let da = target(a) - (alloc[a] + counts[a]) as f64;
                    let db = target(b) - (alloc[b] + counts[b]) as f64;
                    da.partial_cmp(&db)
                        .unwrap()
                        .then_with(|| {
                            let fa = exact[a] - exact[a].floor();
                            let fb = exact[b] - exact[b].floor();
                            fa.partial_cmp(&fb).unwrap()
                        })
                        .then(b.cmp(&a))
                })
                .unwrap();
            counts[best] += 1;
            leftover -= 1;
        }

        let mut drain = members.drain(..);
        for (part, &c) in parts.iter_mut().zip(&counts) {
            part.extend(drain.by_ref().take(c));
        }
        for s in 0..3 {
            alloc[s] += counts[s];
        }
    }
    let [train, validation, test] = parts;
    DatasetSplit { train, validation, test, seed }
}

fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    // Fisher-Yates; kept local so the draw sequence is pinned by this crate
    // rather than by a dependency's implementation details.
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Returns a shuffled copy of `0..n` using `rng`.
pub fn shuffled_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, rng);
    idx
}

/// Inverse-frequency class weights: `w_i = N / (C_present * n_i)` for classes
/// present in `samples`, 0 for absent classes. The weighted sample count
/// `sum_i n_i * w_i` equals the total sample count.
pub fn compute_class_weights(samples: &[SequenceSample]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for s in samples {
        counts[s.label as usize] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let total = samples.len() as f64;
    let mut weights = [0.0; NUM_CLASSES];
    if present == 0 {
        return weights;
    }
    for (w, &c) in weights.iter_mut().zip(&counts) {
        if c > 0 {
            *w = total / (present as f64 * c as f64);
        }
    }
    weights
}

/// Per-feature z-score parameters fitted on the training split only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
}

/// A feature whose stdev falls below this is passed through unscaled.
pub const SCALER_MIN_STD: f64 = 1e-12;

impl FeatureScaler {
    /// Fits population mean/stdev per feature over every timestep of every
    /// sample.
    pub fn fit(samples: &[SequenceSample]) -> Self {
        let mut mean = [0.0; FEATURES];
        let mut std = [0.0; FEATURES];
        let count: usize = samples.iter().map(|s| s.values.nrows()).sum();
        if count == 0 {
            return Self { mean, std };
        }
        for s in samples {
            for row in s.values.rows() {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for s in samples {
            for row in s.values.rows() {
                for (j, &v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    std[j] += d * d;
                }
            }
        }
        for sd in &mut std {
            *sd = (*sd / count as f64).sqrt();
        }
        Self { mean, std }
    }

    /// Applies the transform in place. Features with near-zero stdev are
    /// centered but not divided, so constant channels stay finite.
    pub fn apply(&self, samples: &mut [SequenceSample]) {
        for s in samples {
            for mut row in s.values.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    let sd = self.std[j];
                    *v -= self.mean[j];
                    if sd >= SCALER_MIN_STD {
                        *v /= sd;
                    }
                }
            }
        }
    }
}

/// One simulated client's local data.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub class_weights: [f64; NUM_CLASSES],
}

/// Splits a train pool and a test pool across `n_clients` disjoint shards
/// with near-uniform sizes (`jitter` relative spread, e.g. 0.05). Shards keep
/// pool-relative sample order, so a single-client partition is the identity.
pub fn partition_clients(
    train_pool: &[SequenceSample],
    test_pool: &[SequenceSample],
    n_clients: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<ClientShard>, DataError> {
    if n_clients == 0 || n_clients > train_pool.len() {
        return Err(DataError::TooManyClients {
            clients: n_clients,
            samples: train_pool.len(),
        });
    }
    let mut rng = derive_rng(seed, Stream::Partition, &[n_clients as u64]);
    let mut weights = vec![1.0; n_clients];
    for w in &mut weights {
        *w += jitter * rng.gen_range(-1.0..=1.0);
    }
    let train_sizes = proportional_sizes(train_pool.len(), &weights, true);
    let test_sizes = proportional_sizes(test_pool.len(), &weights, false);

    let train_chunks = chunk_by_sizes(train_pool, &train_sizes, &mut rng);
    let test_chunks = chunk_by_sizes(test_pool, &test_sizes, &mut rng);

    Ok(train_chunks
        .into_iter()
        .zip(test_chunks)
        .enumerate()
        .map(|(client_id, (train, test))| {
            let class_weights = compute_class_weights(&train);
            ClientShard { client_id, train, test, class_weights }
        })
        .collect())
}

/// Largest-remainder apportionment of `total` items by `weights`; when
/// `at_least_one`, every bucket gets a minimum of one item.
fn proportional_sizes(total: usize, weights: &[f64], at_least_one: bool) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut next = 0;
    while leftover > 0 {
        sizes[order[next % order.len()]] += 1;
        next += 1;
        leftover -= 1;
    }
    if at_least_one && total >= sizes.len() {
        // Steal from the largest bucket until no bucket is empty.
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let largest = (0..sizes.len()).max_by_key(|&i| sizes[i]).unwrap();
            if sizes[largest] <= 1 {
                break;
            }
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
    }
    sizes
}

fn chunk_by_sizes<R: Rng>(
    pool: &[SequenceSample],
    sizes: &[usize],
    rng: &mut R,
) -> Vec<Vec<SequenceSample>> {
    let perm = shuffled_indices(pool.len(), rng);
    let mut chunks = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for &size in sizes {
        let mut idx: Vec<usize> = perm[cursor..cursor + size].to_vec();
        cursor += size;
        // Restore pool-relative order inside the shard so the identity
        // partition really is the identity.
        idx.sort_unstable();
        chunks.push(idx.into_iter().map(|i| pool[i].clone()).collect());
    }
    chunks
}

pub mod synth;

pub use synth::{generate_corpus, SynthSpec};

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(vehicle: u64, idx: u64, label: u8) -> TraceRecord {
        let mut features = [0.0; FEATURES];
        features[0] = idx as f64;
        features[1] = vehicle as f64 * 10.0 + idx as f64;
        TraceRecord { vehicle_id: vehicle, msg_index: idx, features, label }
    }

    fn samples_with_labels(labels: &[u8]) -> Vec<SequenceSample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| SequenceSample {
                values: Array2::from_elem((2, FEATURES), i as f64),
                label,
            })
            .collect()
    }

    #[test]
    fn parse_header_only_gives_empty() {
        let records = parse_trace_log(CSV_HEADER.as_bytes()).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn parse_rejects_wrong_header() {
        let err = parse_trace_log("a,b,c\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::BadHeader));
    }

    #[test]
    fn parse_reports_line_of_malformed_row() {
        let text = format!("{CSV_HEADER}\n1,0,0,0,0,0,0,0,0,0,0,0\n1,1,oops,0,0,0,0,0,0,0,0,0\n");
        let err = parse_trace_log(text.as_bytes()).unwrap_err();
        match err {
            DataError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_missing_fields() {
        let text = format!("{CSV_HEADER}\n1,0,0,0\n");
        let err = parse_trace_log(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn parse_rejects_non_finite_feature() {
        let text = format!("{CSV_HEADER}\n1,0,0,NaN,0,0,0,0,0,0,0,0\n");
        let err = parse_trace_log(text.as_bytes()).unwrap_err();
        match err {
            DataError::NonFiniteFeature { line, field } => {
                assert_eq!(line, 2);
                assert_eq!(field, "pos_x");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_label_out_of_range() {
        let text = format!("{CSV_HEADER}\n1,0,0,0,0,0,0,0,0,0,0,20\n");
        let err = parse_trace_log(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { line: 2, label: 20 }));
    }

    #[test]
    fn csv_round_trip() {
        let records: Vec<TraceRecord> = (0..25).map(|i| rec(i % 3, i / 3, (i % 5) as u8)).collect();
        let mut buf = Vec::new();
        write_trace_log(&records, &mut buf).unwrap();
        let back = parse_trace_log(buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn window_counts_match_brute_force() {
        // Oracle: enumerate start positions directly.
        for len in 0..=100usize {
            for window in 1..=30usize {
                for stride in 1..=30usize {
                    let brute = (0..)
                        .map(|k| k * stride)
                        .take_while(|&s| s + window <= len)
                        .count();
                    assert_eq!(
                        window_count(len, window, stride),
                        brute,
                        "len={len} window={window} stride={stride}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_window_yields_one_sample() {
        let records: Vec<TraceRecord> = (0..20).map(|i| rec(1, i, 4)).collect();
        let windows = build_windows(&records, WINDOW, STRIDE).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].label, 4);
        assert_eq!(windows[0].values.dim(), (WINDOW, FEATURES));
        // Row t carries record t's features.
        assert_eq!(windows[0].values[[7, 0]], 7.0);
    }

    #[test]
    fn nineteen_records_yield_no_sample() {
        let records: Vec<TraceRecord> = (0..19).map(|i| rec(1, i, 0)).collect();
        assert!(build_windows(&records, WINDOW, STRIDE).unwrap().is_empty());
    }

    #[test]
    fn mixed_label_windows_are_discarded() {
        // 30 records with the label flipping at index 10: the window starting
        // at 0 (records 0..19) mixes labels and is discarded; the window
        // starting at 10 (records 10..29) is pure label 1 and is kept.
        let records: Vec<TraceRecord> = (0..30)
            .map(|i| rec(1, i, if i < 10 { 0 } else { 1 }))
            .collect();
        let windows = build_windows(&records, WINDOW, STRIDE).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].label, 1);
    }

    #[test]
    fn windows_sort_by_msg_index() {
        let mut records: Vec<TraceRecord> = (0..20).map(|i| rec(1, i, 0)).collect();
        records.reverse();
        let windows = build_windows(&records, WINDOW, STRIDE).unwrap();
        assert_eq!(windows[0].values[[0, 0]], 0.0);
        assert_eq!(windows[0].values[[19, 0]], 19.0);
    }

    #[test]
    fn split_single_class_1000() {
        let split = split_dataset(samples_with_labels(&vec![3u8; 1000]), 9);
        assert_eq!(split.train.len(), 700);
        assert_eq!(split.validation.len(), 150);
        assert_eq!(split.test.len(), 150);
    }

    #[test]
    fn split_two_classes_keeps_per_class_shares() {
        let mut labels = vec![0u8; 800];
        labels.extend(vec![1u8; 200]);
        let split = split_dataset(samples_with_labels(&labels), 9);
        let count = |part: &[SequenceSample], label: u8| {
            part.iter().filter(|s| s.label == label).count()
        };
        assert_eq!(count(&split.train, 0), 560);
        assert_eq!(count(&split.train, 1), 140);
        assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 1000);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let labels: Vec<u8> = (0..331).map(|i| (i % 7) as u8).collect();
        let a = split_dataset(samples_with_labels(&labels), 42);
        let b = split_dataset(samples_with_labels(&labels), 42);
        let key = |part: &[SequenceSample]| {
            let mut v: Vec<(u8, i64)> =
                part.iter().map(|s| (s.label, s.values[[0, 0]] as i64)).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(key(&a.train), key(&b.train));
        assert_eq!(key(&a.validation), key(&b.validation));
        assert_eq!(key(&a.test), key(&b.test));

        let mut all = key(&a.train);
        all.extend(key(&a.validation));
        all.extend(key(&a.test));
        let before = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(before, all.len(), "splits overlap");
        assert_eq!(before, labels.len(), "samples lost");
    }

    #[test]
    fn split_sizes_within_one_of_ratios_across_many_profiles() {
        // Randomised class profiles; global sizes must stay within 1 sample
        // of the exact ratios and per-class within 2.
        let mut rng = derive_rng(7, Stream::Test, &[1]);
        for case in 0..200 {
            let classes = rng.gen_range(1..=20usize);
            let mut labels = Vec::new();
            for c in 0..classes {
                let n = rng.gen_range(1..=60usize);
                labels.extend(std::iter::repeat(c as u8).take(n));
            }
            let n = labels.len() as f64;
            let per_class: Vec<usize> = (0..classes)
                .map(|c| labels.iter().filter(|&&l| l == c as u8).count())
                .collect();
            let split = split_dataset(samples_with_labels(&labels), case);
            let sizes = [split.train.len(), split.validation.len(), split.test.len()];
            for (s, r) in sizes.iter().zip(SPLIT_RATIOS) {
                assert!(
                    (*s as f64 - r * n).abs() <= 1.0 + 1e-9,
                    "case {case}: size {s} vs exact {}",
                    r * n
                );
            }
            for (c, &nc) in per_class.iter().enumerate() {
                let parts = [&split.train, &split.validation, &split.test];
                for (part, r) in parts.iter().zip(SPLIT_RATIOS) {
                    let got = part.iter().filter(|s| s.label == c as u8).count() as f64;
                    assert!(
                        (got - r * nc as f64).abs() <= 2.0 + 1e-9,
                        "case {case} class {c}: {got} vs exact {}",
                        r * nc as f64
                    );
                }
            }
        }
    }

    #[test]
    fn class_weights_balanced_sets_are_uniform() {
        let mut labels = Vec::new();
        for c in 0..4u8 {
            labels.extend(std::iter::repeat(c).take(100));
        }
        let w = compute_class_weights(&samples_with_labels(&labels));
        for c in 0..4 {
            assert!((w[c] - 1.0).abs() < 1e-12);
        }
        for c in 4..NUM_CLASSES {
            assert_eq!(w[c], 0.0);
        }
    }

    #[test]
    fn class_weights_weighted_count_identity() {
        let labels: Vec<u8> = (0..517).map(|i| (i * i % 11) as u8).collect();
        let samples = samples_with_labels(&labels);
        let w = compute_class_weights(&samples);
        let mut counts = [0usize; NUM_CLASSES];
        for s in &samples {
            counts[s.label as usize] += 1;
        }
        let weighted: f64 = counts.iter().zip(&w).map(|(&n, &wi)| n as f64 * wi).sum();
        assert!((weighted - samples.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn scaler_normalizes_to_zero_mean_unit_std() {
        let mut rng = derive_rng(3, Stream::Test, &[2]);
        let mut samples: Vec<SequenceSample> = (0..40)
            .map(|_| SequenceSample {
                values: Array2::from_shape_fn((WINDOW, FEATURES), |(_, j)| {
                    rng.gen_range(-1.0..1.0) * (j + 1) as f64 + j as f64
                }),
                label: 0,
            })
            .collect();
        let scaler = FeatureScaler::fit(&samples);
        scaler.apply(&mut samples);
        let refit = FeatureScaler::fit(&samples);
        for j in 0..FEATURES {
            assert!(refit.mean[j].abs() < 1e-9, "feature {j} mean {}", refit.mean[j]);
            assert!((refit.std[j] - 1.0).abs() < 1e-9, "feature {j} std {}", refit.std[j]);
        }
    }

    #[test]
    fn scaler_passes_constant_features_through() {
        let mut samples = vec![SequenceSample {
            values: Array2::from_elem((WINDOW, FEATURES), 5.0),
            label: 0,
        }];
        let scaler = FeatureScaler::fit(&samples);
        scaler.apply(&mut samples);
        // Centered to zero but not divided by the near-zero stdev.
        assert!(samples[0].values.iter().all(|v| v.abs() < 1e-12));
        assert!(samples[0].values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn partition_single_client_is_identity() {
        let train = samples_with_labels(&[0, 1, 2, 3, 4, 0, 1]);
        let test = samples_with_labels(&[2, 2, 1]);
        let shards = partition_clients(&train, &test, 1, 0.05, 11).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].train, train);
        assert_eq!(shards[0].test, test);
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let labels: Vec<u8> = (0..203).map(|i| (i % 5) as u8).collect();
        let train = samples_with_labels(&labels);
        let test = samples_with_labels(&labels[..40]);
        let shards = partition_clients(&train, &test, 7, 0.05, 5).unwrap();
        assert_eq!(shards.len(), 7);
        let total: usize = shards.iter().map(|s| s.train.len()).sum();
        assert_eq!(total, train.len());
        let mut seen: Vec<i64> = shards
            .iter()
            .flat_map(|s| s.train.iter().map(|t| t.values[[0, 0]] as i64))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), train.len(), "shards overlap");
        let test_total: usize = shards.iter().map(|s| s.test.len()).sum();
        assert_eq!(test_total, test.len());
    }

    #[test]
    fn partition_sizes_respect_jitter_bounds() {
        let train = samples_with_labels(&vec![0u8; 1000]);
        let test = samples_with_labels(&vec![0u8; 200]);
        let shards = partition_clients(&train, &test, 10, 0.05, 3).unwrap();
        for s in &shards {
            let size = s.train.len() as f64;
            // 1000/10 = 100 nominal; 5% jitter plus one sample of rounding.
            assert!((size - 100.0).abs() <= 100.0 * 0.05 + 1.0 + 1e-9, "size {size}");
        }
    }

    #[test]
    fn partition_rejects_more_clients_than_samples() {
        let train = samples_with_labels(&[0, 1]);
        let err = partition_clients(&train, &[], 3, 0.0, 1).unwrap_err();
        assert!(matches!(err, DataError::TooManyClients { clients: 3, samples: 2 }));
    }
}
