//! Micro-benchmark ingestion and interpolated lookup.
//!
//! Three CSV files describe a platform profile (header rows mandatory):
//!
//! ```text
//! attention.csv  series,seq_len,batch_size,tflops
//! gemm.csv       series,num_tokens,batch_size,tflops
//! a2a.csv        num_gpus,num_nodes,message_bytes,bandwidth_bytes_per_sec
//! ```
//!
//! Attention and GEMM series use the naming convention `hd<head_dim>` and
//! `ffn<ffn_dim>`. The a2a `message_bytes` column is the directed
//! per-pair message size and `bandwidth_bytes_per_sec` the effective
//! per-GPU injection bandwidth at that size.
//!
//! Lookups interpolate log-log for bandwidth (it varies over decades of
//! message size) and linearly for compute throughput, clamping to the
//! endpoints outside the measured range. A deterministic synthetic
//! generator produces plausible saturating curves for desk-scale testing;
//! its series are tagged `synthetic`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelArch, PlatformSpec};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file} line {line}: {msg}")]
    Malformed {
        file: String,
        line: u64,
        msg: String,
    },
    #[error("{file} line {line}: duplicate key {key}")]
    DuplicateKey {
        file: String,
        line: u64,
        key: String,
    },
    #[error("{file}: series {series} has {points} point(s); at least 2 required")]
    ShortSeries {
        file: String,
        series: String,
        points: usize,
    },
    #[error("no {family} series loaded")]
    NoSeries { family: &'static str },
    #[error("no {family} series named {name}")]
    MissingSeries { family: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnPoint {
    pub seq_len: u64,
    pub batch_size: u64,
    pub tflops: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemmPoint {
    pub num_tokens: u64,
    pub batch_size: u64,
    pub tflops: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2aPoint {
    pub num_gpus: u64,
    pub num_nodes: u64,
    pub message_bytes: u64,
    pub bandwidth_bytes_per_sec: f64,
}

/// An immutable, validated set of measurement curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchProfile {
    pub attention: BTreeMap<String, Vec<AttnPoint>>,
    pub gemm: BTreeMap<String, Vec<GemmPoint>>,
    pub a2a: Vec<A2aPoint>,
    /// Effective peak throughput in flop/s; defaults to the best observed
    /// GEMM throughput.
    pub effective_peak_flops: f64,
}

impl BenchProfile {
    pub fn empty() -> Self {
        BenchProfile {
            attention: BTreeMap::new(),
            gemm: BTreeMap::new(),
            a2a: Vec::new(),
            effective_peak_flops: 0.0,
        }
    }

    fn derive_peak(&mut self) {
        let best = self
            .gemm
            .values()
            .flatten()
            .map(|p| p.tflops)
            .fold(0.0, f64::max);
        self.effective_peak_flops = best * 1e12;
    }

    pub fn with_effective_peak(mut self, flops: f64) -> Self {
        self.effective_peak_flops = flops;
        self
    }
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    line: u64,
    name: &str,
    raw: &str,
) -> Result<T, ProfileError> {
    raw.trim().parse().map_err(|_| ProfileError::Malformed {
        file: file.to_string(),
        line,
        msg: format!("cannot parse {name} from {raw:?}"),
    })
}

fn positive(file: &str, line: u64, name: &str, v: f64) -> Result<f64, ProfileError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ProfileError::Malformed {
            file: file.to_string(),
            line,
            msg: format!("{name} must be positive, got {v}"),
        })
    }
}

fn read_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, ProfileError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })
}

/// Loads `attention.csv`, `gemm.csv`, and `a2a.csv` from `dir`. Missing
/// files yield empty curve families; the errors surface at lookup time.
pub fn load_profile(dir: &Path) -> Result<BenchProfile, ProfileError> {
    if !dir.is_dir() {
        return Err(ProfileError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "profile directory"),
        });
    }
    let mut profile = BenchProfile::empty();

    let attn_path = dir.join("attention.csv");
    if attn_path.exists() {
        let file = "attention.csv";
        let mut rdr = read_csv(&attn_path)?;
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx as u64 + 2; // header is line 1
            let rec = rec.map_err(|e| ProfileError::Malformed {
                file: file.into(),
                line,
                msg: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(ProfileError::Malformed {
                    file: file.into(),
                    line,
                    msg: format!("expected 4 columns, got {}", rec.len()),
                });
            }
            let series = rec[0].to_string();
            let point = AttnPoint {
                seq_len: parse_field(file, line, "seq_len", &rec[1])?,
                batch_size: parse_field(file, line, "batch_size", &rec[2])?,
                tflops: positive(file, line, "tflops", parse_field(file, line, "tflops", &rec[3])?)?,
            };
            let pts = profile.attention.entry(series.clone()).or_default();
            if pts
                .iter()
                .any(|p| p.seq_len == point.seq_len && p.batch_size == point.batch_size)
            {
                return Err(ProfileError::DuplicateKey {
                    file: file.into(),
                    line,
                    key: format!("{series}/{}/{}", point.seq_len, point.batch_size),
                });
            }
            pts.push(point);
        }
        for (series, pts) in &mut profile.attention {
            pts.sort_by_key(|p| (p.seq_len, p.batch_size));
            if pts.len() < 2 {
                return Err(ProfileError::ShortSeries {
                    file: file.into(),
                    series: series.clone(),
                    points: pts.len(),
                });
            }
        }
    }

    let gemm_path = dir.join("gemm.csv");
    if gemm_path.exists() {
        let file = "gemm.csv";
        let mut rdr = read_csv(&gemm_path)?;
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx as u64 + 2;
            let rec = rec.map_err(|e| ProfileError::Malformed {
                file: file.into(),
                line,
                msg: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(ProfileError::Malformed {
                    file: file.into(),
                    line,
                    msg: format!("expected 4 columns, got {}", rec.len()),
                });
            }
            let series = rec[0].to_string();
            let point = GemmPoint {
                num_tokens: parse_field(file, line, "num_tokens", &rec[1])?,
                batch_size: parse_field(file, line, "batch_size", &rec[2])?,
                tflops: positive(file, line, "tflops", parse_field(file, line, "tflops", &rec[3])?)?,
            };
            let pts = profile.gemm.entry(series.clone()).or_default();
            if pts
                .iter()
                .any(|p| p.num_tokens == point.num_tokens && p.batch_size == point.batch_size)
            {
                return Err(ProfileError::DuplicateKey {
                    file: file.into(),
                    line,
                    key: format!("{series}/{}/{}", point.num_tokens, point.batch_size),
                });
            }
            pts.push(point);
        }
        for (series, pts) in &mut profile.gemm {
            pts.sort_by_key(|p| (p.num_tokens, p.batch_size));
            if pts.len() < 2 {
                return Err(ProfileError::ShortSeries {
                    file: file.into(),
                    series: series.clone(),
                    points: pts.len(),
                });
            }
        }
    }

    let a2a_path = dir.join("a2a.csv");
    if a2a_path.exists() {
        let file = "a2a.csv";
        let mut rdr = read_csv(&a2a_path)?;
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx as u64 + 2;
            let rec = rec.map_err(|e| ProfileError::Malformed {
                file: file.into(),
                line,
                msg: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(ProfileError::Malformed {
                    file: file.into(),
                    line,
                    msg: format!("expected 4 columns, got {}", rec.len()),
                });
            }
            let point = A2aPoint {
                num_gpus: parse_field(file, line, "num_gpus", &rec[0])?,
                num_nodes: parse_field(file, line, "num_nodes", &rec[1])?,
                message_bytes: parse_field(file, line, "message_bytes", &rec[2])?,
                bandwidth_bytes_per_sec: positive(
                    file,
                    line,
                    "bandwidth_bytes_per_sec",
                    parse_field(file, line, "bandwidth_bytes_per_sec", &rec[3])?,
                )?,
            };
            if profile
                .a2a
                .iter()
                .any(|p| p.num_gpus == point.num_gpus && p.message_bytes == point.message_bytes)
            {
                return Err(ProfileError::DuplicateKey {
                    file: file.into(),
                    line,
                    key: format!("{}/{}", point.num_gpus, point.message_bytes),
                });
            }
            profile.a2a.push(point);
        }
        profile.a2a.sort_by_key(|p| (p.num_gpus, p.message_bytes));
        let mut by_gpus: BTreeMap<u64, usize> = BTreeMap::new();
        for p in &profile.a2a {
            *by_gpus.entry(p.num_gpus).or_default() += 1;
        }
        for (gpus, count) in by_gpus {
            if count < 2 {
                return Err(ProfileError::ShortSeries {
                    file: file.into(),
                    series: format!("num_gpus={gpus}"),
                    points: count,
                });
            }
        }
    }

    profile.derive_peak();
    // optional override written by save_profile / the synthetic generator
    let peak_path = dir.join("effective_peak.csv");
    if peak_path.exists() {
        let file = "effective_peak.csv";
        let text = std::fs::read_to_string(&peak_path).map_err(|e| ProfileError::Io {
            path: peak_path.display().to_string(),
            source: e,
        })?;
        let mut lines = text.lines();
        if lines.next() != Some("effective_peak_flops") {
            return Err(ProfileError::Malformed {
                file: file.into(),
                line: 1,
                msg: "expected header effective_peak_flops".into(),
            });
        }
        let raw = lines.next().unwrap_or_default();
        let v: f64 = parse_field(file, 2, "effective_peak_flops", raw)?;
        profile.effective_peak_flops = positive(file, 2, "effective_peak_flops", v)?;
    }
    Ok(profile)
}

/// Writes the profile back out in canonical form (sorted rows, shortest
/// round-trip float formatting), so load -> save -> load is the identity.
pub fn save_profile(profile: &BenchProfile, dir: &Path) -> Result<(), ProfileError> {
    let io_err = |path: &Path, e: std::io::Error| ProfileError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut out = String::from("series,seq_len,batch_size,tflops\n");
    for (series, pts) in &profile.attention {
        for p in pts {
            writeln!(out, "{series},{},{},{}", p.seq_len, p.batch_size, p.tflops).unwrap();
        }
    }
    let path = dir.join("attention.csv");
    std::fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    let mut out = String::from("series,num_tokens,batch_size,tflops\n");
    for (series, pts) in &profile.gemm {
        for p in pts {
            writeln!(out, "{series},{},{},{}", p.num_tokens, p.batch_size, p.tflops).unwrap();
        }
    }
    let path = dir.join("gemm.csv");
    std::fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    let mut out = String::from("num_gpus,num_nodes,message_bytes,bandwidth_bytes_per_sec\n");
    for p in &profile.a2a {
        writeln!(
            out,
            "{},{},{},{}",
            p.num_gpus, p.num_nodes, p.message_bytes, p.bandwidth_bytes_per_sec
        )
        .unwrap();
    }
    let path = dir.join("a2a.csv");
    std::fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    let path = dir.join("effective_peak.csv");
    std::fs::write(
        &path,
        format!("effective_peak_flops\n{}\n", profile.effective_peak_flops),
    )
    .map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn lerp(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Interpolates over (key, value) knots, linear in the given transforms,
/// clamped to the endpoints outside the range. Knots must be sorted by
/// key and exact at the knots.
fn interp(knots: &[(f64, f64)], x: f64, log_space: bool) -> f64 {
    debug_assert!(!knots.is_empty());
    if x <= knots[0].0 {
        return knots[0].1;
    }
    if x >= knots[knots.len() - 1].0 {
        return knots[knots.len() - 1].1;
    }
    for w in knots.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x == x0 {
            return y0;
        }
        if x > x0 && x <= x1 {
            if x == x1 {
                return y1;
            }
            return if log_space {
                lerp(x0.ln(), y0.ln(), x1.ln(), y1.ln(), x.ln()).exp()
            } else {
                lerp(x0, y0, x1, y1, x)
            };
        }
    }
    knots[knots.len() - 1].1
}

/// Effective all-to-all bandwidth for `num_gpus` participants at the
/// given per-pair message size, log-log interpolated over the measured
/// curve. Falls back to the nearest participant count (with a warning)
/// when the exact one was not measured.
pub fn a2a_bandwidth(
    profile: &BenchProfile,
    num_gpus: u64,
    message_bytes: u64,
) -> Result<f64, ProfileError> {
    if profile.a2a.is_empty() {
        return Err(ProfileError::NoSeries { family: "a2a" });
    }
    let series_gpus = if profile.a2a.iter().any(|p| p.num_gpus == num_gpus) {
        num_gpus
    } else {
        let nearest = profile
            .a2a
            .iter()
            .map(|p| p.num_gpus)
            .min_by_key(|&g| (g.abs_diff(num_gpus), g))
            .unwrap();
        log::warn!("no a2a series at {num_gpus} GPUs; using nearest measured ({nearest})");
        nearest
    };
    let knots: Vec<(f64, f64)> = profile
        .a2a
        .iter()
        .filter(|p| p.num_gpus == series_gpus)
        .map(|p| (p.message_bytes as f64, p.bandwidth_bytes_per_sec))
        .collect();
    Ok(interp(&knots, message_bytes as f64, true))
}

/// Best measured attention throughput (flop/s) for a series at a sequence
/// length: per seq_len the best batch size wins, interpolating linearly
/// between measured lengths.
pub fn attention_flops(
    profile: &BenchProfile,
    series: &str,
    seq_len: u64,
) -> Result<f64, ProfileError> {
    let pts = lookup_series(&profile.attention, series, "attention")?;
    let knots = max_by_key(pts.iter().map(|p| (p.seq_len as f64, p.tflops)));
    Ok(interp(&knots, seq_len as f64, false) * 1e12)
}

/// Best measured expert-GEMM throughput (flop/s) for a series at a token
/// count.
pub fn gemm_flops(
    profile: &BenchProfile,
    series: &str,
    num_tokens: u64,
) -> Result<f64, ProfileError> {
    let pts = lookup_series(&profile.gemm, series, "gemm")?;
    let knots = max_by_key(pts.iter().map(|p| (p.num_tokens as f64, p.tflops)));
    Ok(interp(&knots, num_tokens as f64, false) * 1e12)
}

fn lookup_series<'a, T>(
    family: &'a BTreeMap<String, Vec<T>>,
    series: &str,
    name: &'static str,
) -> Result<&'a [T], ProfileError> {
    if family.is_empty() {
        return Err(ProfileError::NoSeries { family: name });
    }
    if let Some(pts) = family.get(series) {
        return Ok(pts);
    }
    // A profile with a single series serves any request for that family.
    if family.len() == 1 {
        let (only, pts) = family.iter().next().unwrap();
        log::warn!("no {name} series named {series}; using the only series ({only})");
        return Ok(pts);
    }
    Err(ProfileError::MissingSeries {
        family: name,
        name: series.to_string(),
    })
}

/// Collapses (key, value) pairs to per-key maxima, sorted by key.
fn max_by_key(pairs: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for (k, v) in pairs {
        let bits = k.to_bits();
        let e = best.entry(bits).or_insert(v);
        if v > *e {
            *e = v;
        }
    }
    best.into_iter()
        .map(|(bits, v)| (f64::from_bits(bits), v))
        .collect()
}

/// A batch size on which both curve families agree, paired with each
/// family's best tuple at that batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapePick {
    pub batch_size: u64,
    pub attention_series: String,
    pub attention_seq_len: u64,
    pub attention_tflops: f64,
    pub gemm_series: String,
    pub gemm_num_tokens: u64,
    pub gemm_tflops: f64,
    /// min(attention, gemm) throughput; the ranking key.
    pub ranking_tflops: f64,
}

/// For each batch size present in both families, pairs the
/// max-throughput attention tuple with the max-throughput GEMM tuple,
/// ranked by the weaker of the two (descending). Empty when the families
/// share no batch size.
pub fn select_best_shapes(profile: &BenchProfile) -> Vec<ShapePick> {
    let mut attn_best: BTreeMap<u64, (&str, &AttnPoint)> = BTreeMap::new();
    for (series, pts) in &profile.attention {
        for p in pts {
            let e = attn_best.entry(p.batch_size).or_insert((series, p));
            if p.tflops > e.1.tflops {
                *e = (series, p);
            }
        }
    }
    let mut gemm_best: BTreeMap<u64, (&str, &GemmPoint)> = BTreeMap::new();
    for (series, pts) in &profile.gemm {
        for p in pts {
            let e = gemm_best.entry(p.batch_size).or_insert((series, p));
            if p.tflops > e.1.tflops {
                *e = (series, p);
            }
        }
    }
    let mut picks: Vec<ShapePick> = attn_best
        .iter()
        .filter_map(|(batch, (aseries, ap))| {
            gemm_best.get(batch).map(|(gseries, gp)| ShapePick {
                batch_size: *batch,
                attention_series: aseries.to_string(),
                attention_seq_len: ap.seq_len,
                attention_tflops: ap.tflops,
                gemm_series: gseries.to_string(),
                gemm_num_tokens: gp.num_tokens,
                gemm_tflops: gp.tflops,
                ranking_tflops: ap.tflops.min(gp.tflops),
            })
        })
        .collect();
    if picks.is_empty() && !(profile.attention.is_empty() || profile.gemm.is_empty()) {
        log::warn!("attention and gemm curves share no batch_size; no shape picks");
    }
    picks.sort_by(|a, b| {
        b.ranking_tflops
            .partial_cmp(&a.ranking_tflops)
            .unwrap()
            .then(a.batch_size.cmp(&b.batch_size))
    });
    picks
}

/// Deterministic synthetic profile for an architecture on a platform:
/// saturating throughput curves toward a fraction of peak, and an a2a
/// bandwidth curve that steps down when the group leaves one node. The
/// numbers are plausible, clearly synthetic, and stable across runs.
pub fn synthetic_profile(arch: &ModelArch, platform: &PlatformSpec) -> BenchProfile {
    let peak_tf = platform.peak_gpu_flops / 1e12;
    let mut profile = BenchProfile::empty();

    let attn_series = format!("hd{}", arch.head_dim);
    let mut attn = Vec::new();
    for (i, seq) in [256u64, 1024, 4096, 16384, 65536].into_iter().enumerate() {
        for batch in [1u64, 4, 16] {
            // saturates toward ~60% of peak with sequence length and batch
            let sat = seq as f64 / (seq as f64 + 2048.0);
            let batch_gain = batch as f64 / (batch as f64 + 2.0);
            let tflops = peak_tf * 0.6 * sat * (0.7 + 0.3 * batch_gain) + i as f64 * 1e-3;
            attn.push(AttnPoint {
                seq_len: seq,
                batch_size: batch,
                tflops,
            });
        }
    }
    profile.attention.insert(attn_series, attn);

    let gemm_series = format!("ffn{}", arch.ffn_dim_moe);
    let mut gemm = Vec::new();
    for tokens in [64u64, 512, 4096, 32768, 262144] {
        for batch in [1u64, 4, 16] {
            // tall-and-skinny GEMMs climb toward ~80% of peak
            let sat = tokens as f64 / (tokens as f64 + 1024.0);
            let width = arch.ffn_dim_moe as f64 / (arch.ffn_dim_moe as f64 + 4096.0);
            let tflops = peak_tf * 0.8 * sat * (0.5 + 0.5 * width) * (0.9 + 0.1 * (batch as f64 / 16.0));
            gemm.push(GemmPoint {
                num_tokens: tokens,
                batch_size: batch,
                tflops,
            });
        }
    }
    profile.gemm.insert(gemm_series, gemm);

    for gpus in [2u64, 4, 8, 16, 32, 64] {
        let nodes = gpus.div_ceil(platform.gpus_per_node);
        // per-GPU effective bandwidth: intra-node fabric inside one node,
        // NIC share beyond it, ramping up with message size
        let ceiling = if nodes <= 1 {
            platform.intra_node_bandwidth
        } else {
            platform.nic_bandwidth * platform.nics_per_node as f64
                / platform.gpus_per_node as f64
        };
        for msg in [4096u64, 65536, 1048576, 16777216] {
            let ramp = msg as f64 / (msg as f64 + 262144.0);
            profile.a2a.push(A2aPoint {
                num_gpus: gpus,
                num_nodes: nodes,
                message_bytes: msg,
                bandwidth_bytes_per_sec: ceiling * (0.15 + 0.85 * ramp),
            });
        }
    }
    profile.a2a.sort_by_key(|p| (p.num_gpus, p.message_bytes));
    profile.derive_peak();
    // synthetic curves promise throughput <= effective peak for both
    // families, so MFU stays in [0, 1] by construction
    let attn_best = profile
        .attention
        .values()
        .flatten()
        .map(|p| p.tflops)
        .fold(0.0, f64::max);
    profile.effective_peak_flops = profile.effective_peak_flops.max(attn_best * 1e12);
    profile
}
