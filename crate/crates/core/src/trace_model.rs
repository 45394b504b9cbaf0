//! Synthetic AES first-round S-box leakage traces.
//!
//! Stands in for a captured dataset: each trace is Gaussian background
//! noise carrying the Hamming weight of the (optionally masked) S-box
//! output at a fixed leakage point, with an optional second point leaking
//! the mask byte. Supports per-trace random-shift desynchronization,
//! balanced class sampling, and min-max normalization into [-1, 1].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// The AES forward S-box (FIPS-197).
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// AES forward S-box lookup.
#[inline]
pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

#[inline]
pub fn hamming_weight(x: u8) -> u32 {
    x.count_ones()
}

/// Masked S-box intermediate: `SBOX(p ^ k) ^ r` when masking is enabled,
/// `SBOX(p ^ k)` otherwise.
#[inline]
pub fn intermediate(p: u8, k: u8, r: u8, masking: bool) -> u8 {
    let v = sbox(p ^ k);
    if masking {
        v ^ r
    } else {
        v
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("leakage point {point} out of range for {n_samples}-sample traces")]
    LeakPointOutOfRange { point: usize, n_samples: usize },
    #[error("mask leakage point must differ from the value leakage point ({point})")]
    MaskPointCollision { point: usize },
    #[error("max_desync {max_desync} must be smaller than the trace length {n_samples}")]
    MaxDesyncTooLarge { max_desync: usize, n_samples: usize },
    #[error("noise_sigma must be non-negative, got {0}")]
    NegativeNoiseSigma(f64),
    #[error("trace set must contain at least one trace")]
    EmptyTraceSet,
    #[error("label {label:#04x} has only {available} traces, need {required} per class")]
    DeficientLabel {
        label: u8,
        available: usize,
        required: usize,
    },
}

/// Parameters of the synthetic leakage model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceParams {
    /// Points per trace.
    pub n_samples_per_trace: usize,
    /// Sample index carrying the Hamming weight of the S-box output.
    pub leak_point_value: usize,
    /// Optional sample index carrying the Hamming weight of the mask byte.
    pub leak_point_mask: Option<usize>,
    /// Standard deviation of the additive Gaussian background noise.
    pub noise_sigma: f64,
    /// Upper bound (inclusive) of the random per-trace shift.
    pub max_desync: usize,
    /// Apply a fresh uniform Boolean mask to each trace's S-box output.
    pub masking_enabled: bool,
    /// Fixed key byte shared by all traces.
    pub key_byte: u8,
    /// Seed for trace generation.
    pub seed: u64,
}

impl TraceParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let n = self.n_samples_per_trace;
        if n == 0 {
            return Err(TraceError::EmptyTraceSet);
        }
        if self.leak_point_value >= n {
            return Err(TraceError::LeakPointOutOfRange {
                point: self.leak_point_value,
                n_samples: n,
            });
        }
        if let Some(m) = self.leak_point_mask {
            if m >= n {
                return Err(TraceError::LeakPointOutOfRange {
                    point: m,
                    n_samples: n,
                });
            }
            if m == self.leak_point_value {
                return Err(TraceError::MaskPointCollision { point: m });
            }
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(TraceError::NegativeNoiseSigma(self.noise_sigma));
        }
        if self.max_desync >= n {
            return Err(TraceError::MaxDesyncTooLarge {
                max_desync: self.max_desync,
                n_samples: n,
            });
        }
        Ok(())
    }
}

/// A matrix of leakage traces with per-trace plaintext, key, optional mask,
/// and label. Labels always hold the unmasked S-box output
/// `SBOX(p XOR k)` regardless of masking.
///
/// `noise_sigma` and `shifts` are transient bookkeeping (noise level used
/// for desynchronization fill, and the shifts that were applied); they are
/// not persisted by the trace store and do not take part in equality.
#[derive(Debug, Clone)]
pub struct TraceSet {
    n_samples: usize,
    traces: Vec<f32>,
    plaintexts: Vec<u8>,
    keys: Vec<u8>,
    masks: Option<Vec<u8>>,
    labels: Vec<u8>,
    normalized: bool,
    pub noise_sigma: f64,
    pub shifts: Option<Vec<usize>>,
}

impl PartialEq for TraceSet {
    fn eq(&self, other: &Self) -> bool {
        self.n_samples == other.n_samples
            && self.traces == other.traces
            && self.plaintexts == other.plaintexts
            && self.keys == other.keys
            && self.masks == other.masks
            && self.labels == other.labels
            && self.normalized == other.normalized
    }
}

impl TraceSet {
    /// Assembles a trace set from raw parts, recomputing nothing. The
    /// caller is responsible for label consistency.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_samples: usize,
        traces: Vec<f32>,
        plaintexts: Vec<u8>,
        keys: Vec<u8>,
        masks: Option<Vec<u8>>,
        labels: Vec<u8>,
        normalized: bool,
    ) -> Self {
        let n_traces = if n_samples == 0 { 0 } else { traces.len() / n_samples };
        assert_eq!(traces.len(), n_traces * n_samples, "ragged trace matrix");
        assert_eq!(plaintexts.len(), n_traces);
        assert_eq!(keys.len(), n_traces);
        assert_eq!(labels.len(), n_traces);
        if let Some(m) = &masks {
            assert_eq!(m.len(), n_traces);
        }
        TraceSet {
            n_samples,
            traces,
            plaintexts,
            keys,
            masks,
            labels,
            normalized,
            noise_sigma: 0.0,
            shifts: None,
        }
    }

    pub fn n_traces(&self) -> usize {
        self.plaintexts.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        &self.traces[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn samples(&self) -> &[f32] {
        &self.traces
    }

    pub fn plaintexts(&self) -> &[u8] {
        &self.plaintexts
    }

    pub fn keys(&self) -> &[u8] {
        &self.keys
    }

    pub fn masks(&self) -> Option<&[u8]> {
        self.masks.as_deref()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Trace matrix as f64 rows, the network engine's input layout.
    pub fn to_matrix(&self) -> ndarray::Array2<f64> {
        let data: Vec<f64> = self.traces.iter().map(|&v| v as f64).collect();
        ndarray::Array2::from_shape_vec((self.n_traces(), self.n_samples), data)
            .expect("trace matrix is rectangular")
    }

    /// Per-label trace counts.
    pub fn label_histogram(&self) -> [usize; 256] {
        let mut hist = [0usize; 256];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// New set containing the given rows, in order.
    fn select(&self, indices: &[usize]) -> TraceSet {
        let mut traces = Vec::with_capacity(indices.len() * self.n_samples);
        let mut plaintexts = Vec::with_capacity(indices.len());
        let mut keys = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut masks = self.masks.as_ref().map(|_| Vec::with_capacity(indices.len()));
        let mut shifts = self.shifts.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            traces.extend_from_slice(self.trace(i));
            plaintexts.push(self.plaintexts[i]);
            keys.push(self.keys[i]);
            labels.push(self.labels[i]);
            if let (Some(out), Some(src)) = (masks.as_mut(), self.masks.as_ref()) {
                out.push(src[i]);
            }
            if let (Some(out), Some(src)) = (shifts.as_mut(), self.shifts.as_ref()) {
                out.push(src[i]);
            }
        }
        TraceSet {
            n_samples: self.n_samples,
            traces,
            plaintexts,
            keys,
            masks,
            labels,
            normalized: self.normalized,
            noise_sigma: self.noise_sigma,
            shifts,
        }
    }
}

/// Generates `n_traces` synthetic traces under `params`.
///
/// Each trace is Gaussian background noise of std. dev. `noise_sigma`; the
/// sample at `leak_point_value` additionally carries the Hamming weight of
/// the (masked) S-box output, and the sample at `leak_point_mask` (if set)
/// carries the Hamming weight of the mask byte. Plaintexts are uniform
/// i.i.d., all keys equal `params.key_byte`. Bit-identical for equal seeds.
pub fn generate(params: &TraceParams, n_traces: usize) -> Result<TraceSet, TraceError> {
    params.validate()?;
    if n_traces == 0 {
        return Err(TraceError::EmptyTraceSet);
    }
    let n_samples = params.n_samples_per_trace;
    let mut rng = rng::from_seed(params.seed);
    let normal = StandardNormal;

    let mut traces = Vec::with_capacity(n_traces * n_samples);
    let mut plaintexts = Vec::with_capacity(n_traces);
    let mut labels = Vec::with_capacity(n_traces);
    let mut masks = params.masking_enabled.then(|| Vec::with_capacity(n_traces));

    for _ in 0..n_traces {
        let p: u8 = rng.random();
        let r: u8 = if params.masking_enabled { rng.random() } else { 0 };
        let z = intermediate(p, params.key_byte, r, params.masking_enabled);

        let start = traces.len();
        for _ in 0..n_samples {
            let noise: f64 = normal.sample(&mut rng);
            traces.push((params.noise_sigma * noise) as f32);
        }
        traces[start + params.leak_point_value] += hamming_weight(z) as f32;
        if let Some(mp) = params.leak_point_mask {
            traces[start + mp] += hamming_weight(r) as f32;
        }

        plaintexts.push(p);
        labels.push(sbox(p ^ params.key_byte));
        if let Some(m) = masks.as_mut() {
            m.push(r);
        }
    }

    Ok(TraceSet {
        n_samples,
        traces,
        plaintexts,
        keys: vec![params.key_byte; n_traces],
        masks,
        labels,
        normalized: false,
        noise_sigma: params.noise_sigma,
        shifts: None,
    })
}

/// Shifts every trace right by an independent uniform amount in
/// `[0, max_desync]`. Vacated leading samples are filled with fresh noise
/// at the source set's noise level; samples shifted past the end are
/// dropped. Applied shifts are recorded on the returned set.
pub fn desynchronize(ts: &TraceSet, max_desync: usize, seed: u64) -> Result<TraceSet, TraceError> {
    if max_desync >= ts.n_samples {
        return Err(TraceError::MaxDesyncTooLarge {
            max_desync,
            n_samples: ts.n_samples,
        });
    }
    let mut rng = rng::from_seed(seed);
    let normal = StandardNormal;
    let n_samples = ts.n_samples;
    let mut out = ts.clone();
    let mut shifts = Vec::with_capacity(ts.n_traces());

    for i in 0..ts.n_traces() {
        let d: usize = rng.random_range(0..=max_desync);
        shifts.push(d);
        if d == 0 {
            continue;
        }
        let row = &mut out.traces[i * n_samples..(i + 1) * n_samples];
        row.copy_within(0..n_samples - d, d);
        for s in row.iter_mut().take(d) {
            let noise: f64 = normal.sample(&mut rng);
            *s = (ts.noise_sigma * noise) as f32;
        }
    }
    out.shifts = Some(shifts);
    Ok(out)
}

/// Draws exactly `n_per_class` traces for each of the 256 labels and
/// shuffles the result. Reports the first deficient label when a class has
/// too few traces.
pub fn sample_balanced(ts: &TraceSet, n_per_class: usize, seed: u64) -> Result<TraceSet, TraceError> {
    if n_per_class == 0 || ts.n_traces() == 0 {
        return Err(TraceError::EmptyTraceSet);
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &l) in ts.labels.iter().enumerate() {
        buckets[l as usize].push(i);
    }
    for (label, bucket) in buckets.iter().enumerate() {
        if bucket.len() < n_per_class {
            return Err(TraceError::DeficientLabel {
                label: label as u8,
                available: bucket.len(),
                required: n_per_class,
            });
        }
    }
    let mut rng = rng::from_seed(seed);
    let mut selected = Vec::with_capacity(256 * n_per_class);
    for bucket in buckets.iter_mut() {
        partial_shuffle(bucket, n_per_class, &mut rng);
        selected.extend_from_slice(&bucket[..n_per_class]);
    }
    shuffle(&mut selected, &mut rng);
    Ok(ts.select(&selected))
}

/// Fisher-Yates; only the first `k` positions end up uniformly drawn.
fn partial_shuffle<T>(items: &mut [T], k: usize, rng: &mut impl Rng) {
    let n = items.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    let n = items.len();
    if n < 2 {
        return;
    }
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Per-sample-index min-max scaling parameters fitted on a profiling set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

/// Fits per-sample-index min-max scaling on `ts` and applies it, mapping
/// the set into [-1, 1]. Constant sample indices map to 0. The returned
/// parameters can be reused on held-out (e.g. attack) traces.
pub fn normalize(ts: &TraceSet) -> Result<(TraceSet, NormParams), TraceError> {
    if ts.n_traces() == 0 {
        return Err(TraceError::EmptyTraceSet);
    }
    let n = ts.n_samples;
    let mut min = vec![f32::INFINITY; n];
    let mut max = vec![f32::NEG_INFINITY; n];
    for i in 0..ts.n_traces() {
        for (j, &v) in ts.trace(i).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let params = NormParams { min, max };
    Ok((apply_normalization(ts, &params), params))
}

/// Applies previously fitted scaling parameters. Values inside the fitted
/// range land in [-1, 1]; out-of-range values may exceed it.
pub fn apply_normalization(ts: &TraceSet, params: &NormParams) -> TraceSet {
    assert_eq!(params.min.len(), ts.n_samples, "normalization arity mismatch");
    let mut out = ts.clone();
    let n = ts.n_samples;
    for i in 0..ts.n_traces() {
        let row = &mut out.traces[i * n..(i + 1) * n];
        for (j, v) in row.iter_mut().enumerate() {
            let range = params.max[j] - params.min[j];
            *v = if range > 0.0 {
                2.0 * (*v - params.min[j]) / range - 1.0
            } else {
                0.0
            };
        }
    }
    out.normalized = true;
    out
}
