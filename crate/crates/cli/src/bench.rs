//! Benchmark harness: runs the same seeded queries through the engine, the
//! Borda baseline and the exact oracle, and reports per-query IO and
//! accuracy plus per-method aggregates.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use imglsh::baseline::BordaBaseline;
use imglsh::data::{accuracy, DatasetBundle};
use imglsh::engine::{QueryEngine, QueryReport, RankedImage, StopReason};
use imglsh::index::{IndexReader, IoMeter};
use imglsh::model::{exact_top_k, sim_query, Params, QueryImage};
use imglsh::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum Method {
    Engine,
    Borda,
    Exact,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Engine => "engine",
            Method::Borda => "borda",
            Method::Exact => "exact",
        };
        f.write_str(name)
    }
}

/// One benchmark row: a (method, query) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub query_image_id: u32,
    pub acc: Option<f64>,
    pub bucket_bytes_read: u64,
    pub data_bytes_read: u64,
    pub files_read: u64,
    pub files_skipped: u64,
    pub stop_reason: StopReason,
    pub final_radius_exponent: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub queries: usize,
    pub mean_bucket_bytes_read: f64,
    pub mean_data_bytes_read: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub n: u64,
    pub s: u32,
    pub d: usize,
    pub m: usize,
    pub file_count: usize,
    pub bucket_bytes_total: u64,
    pub bitmap_bytes_total: u64,
    /// Bitmap catalog bytes / bucket bytes.
    pub bitmap_overhead_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<MethodAggregate>,
    /// Baseline mean bucket bytes minus engine mean; present when both ran.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub io_savings_bytes: Option<f64>,
    pub index_stats: IndexStats,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub num_queries: usize,
    pub methods: Vec<Method>,
    /// Seed for query sampling; all bench randomness flows from here.
    pub seed: u64,
    /// Exclude each query's own image from its rankings.
    pub holdout: bool,
    /// Radius for the exact oracle's image-distance definition.
    pub exact_radius: f64,
    /// Keep wall-clock timings in the report (non-reproducible output).
    pub timings: bool,
}

fn strip_self(report: &mut QueryReport, query_image_id: u32, k: usize) {
    report.top_k.retain(|r| r.image_id != query_image_id);
    report.top_k.truncate(k);
}

/// Exact-oracle report: full quadratic scan, zero index IO.
pub fn run_exact_report(
    bundle: &DatasetBundle,
    query: &QueryImage,
    k: usize,
    radius: f64,
) -> Result<QueryReport> {
    let ids = exact_top_k(query, k, radius, bundle)?;
    let top_k = ids
        .into_iter()
        .map(|image_id| {
            let sim = sim_query(query, bundle.image(image_id)?, radius, bundle)?;
            Ok(RankedImage {
                image_id,
                score: sim,
                c_dist: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryReport {
        top_k,
        stop_reason: StopReason::Exact,
        final_radius_exponent: 0,
        io: IoMeter::default(),
        wall_time_ms: None,
    })
}

/// Runs one query under one method, honoring the holdout flag by requesting
/// one extra result and filtering the query's own image out afterwards.
pub fn run_method(
    method: Method,
    reader: &IndexReader,
    bundle: &DatasetBundle,
    params: &Params,
    query_image_id: u32,
    cfg: &BenchConfig,
) -> Result<QueryReport> {
    let query = QueryImage::from_image(bundle, query_image_id)?;
    let mut params = params.clone();
    if cfg.holdout {
        params.k += 1;
        params.k_prime = params.k_prime.max(params.k);
    }
    let mut report = match method {
        Method::Engine => {
            let engine = QueryEngine::new(reader, bundle, params.clone())?;
            engine.run(&query)?.report
        }
        Method::Borda => {
            let baseline = BordaBaseline::new(reader, bundle, params.clone())?;
            baseline.run(&query)?.report
        }
        Method::Exact => {
            let k = params.k.min(bundle.image_count());
            run_exact_report(bundle, &query, k, cfg.exact_radius)?
        }
    };
    if cfg.holdout {
        strip_self(&mut report, query_image_id, params.k - 1);
    }
    if !cfg.timings {
        report.wall_time_ms = None;
    }
    Ok(report)
}

/// Runs the full benchmark: seeded query sampling, every method on every
/// query, per-method aggregates and index storage stats.
pub fn run_bench(
    reader: &IndexReader,
    bundle: &DatasetBundle,
    params: &Params,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.num_queries == 0 || cfg.num_queries > bundle.image_count() {
        return Err(Error::InvalidParams(format!(
            "num_queries must be in 1..={}, got {}",
            bundle.image_count(),
            cfg.num_queries
        )));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidParams("no methods selected".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    for &m in &cfg.methods {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let with_acc = bundle.has_categories();
    if !with_acc {
        eprintln!("warning: dataset has no categories; accuracy is omitted");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let query_ids: Vec<u32> = rand::seq::index::sample(&mut rng, bundle.image_count(), cfg.num_queries)
        .into_iter()
        .map(|i| i as u32)
        .collect();

    let mut rows = Vec::with_capacity(methods.len() * cfg.num_queries);
    for &method in &methods {
        for &query_image_id in &query_ids {
            let report = run_method(method, reader, bundle, params, query_image_id, cfg)?;
            let acc = if with_acc {
                let returned: Vec<u32> = report.top_k.iter().map(|r| r.image_id).collect();
                let category = bundle.image(query_image_id)?.category.unwrap();
                Some(accuracy(&returned, category, bundle, params.k)?)
            } else {
                None
            };
            rows.push(BenchRow {
                method,
                query_image_id,
                acc,
                bucket_bytes_read: report.io.bucket_bytes_read,
                data_bytes_read: report.io.data_bytes_read,
                files_read: report.io.bucket_files_read,
                files_skipped: report.io.bucket_files_skipped,
                stop_reason: report.stop_reason,
                final_radius_exponent: report.final_radius_exponent,
                wall_time_ms: report.wall_time_ms,
            });
        }
    }

    let aggregates: Vec<MethodAggregate> = methods
        .iter()
        .map(|&method| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method).collect();
            let len = group.len() as f64;
            MethodAggregate {
                method,
                queries: group.len(),
                mean_bucket_bytes_read: group.iter().map(|r| r.bucket_bytes_read as f64).sum::<f64>() / len,
                mean_data_bytes_read: group.iter().map(|r| r.data_bytes_read as f64).sum::<f64>() / len,
                mean_acc: if with_acc {
                    Some(group.iter().filter_map(|r| r.acc).sum::<f64>() / len)
                } else {
                    None
                },
            }
        })
        .collect();

    let mean_of = |m: Method| {
        aggregates
            .iter()
            .find(|a| a.method == m)
            .map(|a| a.mean_bucket_bytes_read)
    };
    let io_savings_bytes = match (mean_of(Method::Borda), mean_of(Method::Engine)) {
        (Some(borda), Some(engine)) => Some(borda - engine),
        _ => None,
    };

    let manifest = reader.manifest();
    let index_stats = IndexStats {
        n: manifest.n,
        s: manifest.s,
        d: manifest.d,
        m: manifest.params.m,
        file_count: manifest.files.len(),
        bucket_bytes_total: manifest.bucket_bytes_total,
        bitmap_bytes_total: manifest.bitmap_bytes_total,
        bitmap_overhead_ratio: manifest.bitmap_overhead_ratio(),
    };

    Ok(BenchReport {
        rows,
        aggregates,
        io_savings_bytes,
        index_stats,
    })
}

/// RFC 4180 CSV of the per-query rows. Timings are deliberately excluded so
/// identical flags always produce identical bytes.
pub fn bench_csv(report: &BenchReport) -> Result<String> {
    #[derive(Serialize)]
    struct CsvRow<'a> {
        method: &'a Method,
        query_image_id: u32,
        acc: Option<f64>,
        bucket_bytes_read: u64,
        data_bytes_read: u64,
        files_read: u64,
        files_skipped: u64,
        stop_reason: StopReason,
        final_radius_exponent: u32,
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        writer
            .serialize(CsvRow {
                method: &row.method,
                query_image_id: row.query_image_id,
                acc: row.acc,
                bucket_bytes_read: row.bucket_bytes_read,
                data_bytes_read: row.data_bytes_read,
                files_read: row.files_read,
                files_skipped: row.files_skipped,
                stop_reason: row.stop_reason,
                final_radius_exponent: row.final_radius_exponent,
            })
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

/// Human-readable aggregate lines, MB reported in powers of ten.
pub fn bench_summary(report: &BenchReport) -> String {
    let mut out = String::new();
    for a in &report.aggregates {
        out.push_str(&format!(
            "{}: queries={} mean IndexIO={:.6} MB mean data IO={:.6} MB",
            a.method,
            a.queries,
            a.mean_bucket_bytes_read / 1e6,
            a.mean_data_bytes_read / 1e6
        ));
        if let Some(acc) = a.mean_acc {
            out.push_str(&format!(" mean acc={acc:.4}"));
        }
        out.push('\n');
    }
    if let Some(savings) = report.io_savings_bytes {
        out.push_str(&format!("IndexIO savings (borda - engine): {:.6} MB\n", savings / 1e6));
    }
    out.push_str(&format!(
        "index: files={} bucket bytes={} bitmap bytes={} overhead ratio={:.4}\n",
        report.index_stats.file_count,
        report.index_stats.bucket_bytes_total,
        report.index_stats.bitmap_bytes_total,
        report.index_stats.bitmap_overhead_ratio
    ));
    out
}
