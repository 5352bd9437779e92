//! Subcommand argument definitions and implementations.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use imglsh::data::{generate_synthetic, load_dataset, write_fvecs, write_image_map, DatasetBundle, SyntheticConfig};
use imglsh::engine::QueryReport;
use imglsh::index::{build_index, IndexManifest, IndexReader};
use imglsh::model::{Params, QueryImage};
use imglsh::{Error, Result};

use crate::bench::{bench_csv, bench_summary, run_bench, run_method, BenchConfig, Method};

#[derive(Debug, Parser)]
#[command(
    name = "imglsh",
    about = "Disk-backed similarity search over images stored as bags of descriptors",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clustered dataset (fvecs + image map).
    Synth(SynthArgs),
    /// Build an index from a descriptor file and its image map.
    Build(BuildArgs),
    /// Run a single top-k image query and print its JSON report.
    Query(QueryArgs),
    /// Run the benchmark over seeded queries and write JSON/CSV reports.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Descriptor vectors (.fvecs, or .bvecs for byte vectors).
    #[arg(long)]
    pub data: PathBuf,
    /// Sidecar image map: one `imageId[,category]` line per point.
    #[arg(long)]
    pub image_map: PathBuf,
}

impl DatasetArgs {
    pub fn load(&self) -> Result<DatasetBundle> {
        load_dataset(&self.data, &self.image_map)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub images: u32,
    #[arg(long)]
    pub per_image: u32,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub categories: u32,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the descriptor vectors.
    #[arg(long)]
    pub out_fvecs: PathBuf,
    /// Output path for the image map.
    #[arg(long)]
    pub out_map: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Index output directory (must be empty or absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of projections; default scales with the dataset.
    #[arg(long)]
    pub m: Option<usize>,
    /// Base bucket width in projected units.
    #[arg(long)]
    pub w: Option<f64>,
    /// Approximation ratio and radius-schedule base.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Query-time knobs shared by `query` and `bench`. Structural parameters
/// (m, w, c, seed) always come from the index manifest.
#[derive(Debug, Args)]
pub struct QueryParamArgs {
    /// Requested number of result images.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Per-descriptor candidate target for point queries.
    #[arg(long, default_value_t = 100)]
    pub k_prime: usize,
    /// Collision-index threshold for gamma-closeness.
    #[arg(long, default_value_t = 0.000475)]
    pub gamma: f64,
    /// Minimum maybe-useful share a bucket file needs to be read.
    #[arg(long, default_value_t = 0.03)]
    pub uthres: f64,
    /// Allowed false-positive images; defaults to k.
    #[arg(long)]
    pub v_images: Option<usize>,
    /// Allowed false-positive points per descriptor query.
    #[arg(long, default_value_t = 100)]
    pub v_prime: usize,
    /// Collision threshold; defaults to the index's build-time value.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub max_radius_exponent: Option<u32>,
    /// Use the literal c_dist >= gamma reading of the S1 usefulness test.
    #[arg(long, default_value_t = false)]
    pub s1_literal: bool,
}

impl QueryParamArgs {
    pub fn resolve(&self, manifest: &IndexManifest) -> Params {
        let mut params = manifest.params.clone();
        params.k = self.k;
        params.k_prime = self.k_prime;
        params.gamma = self.gamma;
        params.uthres = self.uthres;
        params.v_images = self.v_images.unwrap_or(self.k);
        params.v_prime_points = self.v_prime;
        if let Some(l) = self.l {
            params.l = l;
        }
        if let Some(cap) = self.max_radius_exponent {
            params.max_radius_exponent = cap;
        }
        params.s1_literal = self.s1_literal;
        params
    }
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index directory (not needed for --method exact).
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub method: Method,
    /// Query with an indexed image's own descriptor bag.
    #[arg(long, conflicts_with = "query_fvecs")]
    pub query_id: Option<u32>,
    /// Query with all vectors of an fvecs file as one image.
    #[arg(long)]
    pub query_fvecs: Option<PathBuf>,
    #[command(flatten)]
    pub params: QueryParamArgs,
    /// Radius for the exact oracle's image-distance definition.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Exclude the query's own image from the ranking (only with --query-id).
    #[arg(long, default_value_t = false)]
    pub holdout: bool,
    /// Include wall-clock timings (makes output non-reproducible).
    #[arg(long, default_value_t = false)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value_t = 5)]
    pub num_queries: usize,
    /// Methods to run.
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Engine, Method::Borda, Method::Exact])]
    pub methods: Vec<Method>,
    /// Seed for query sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub params: QueryParamArgs,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Exclude each query's own image from its rankings.
    #[arg(long, default_value_t = false)]
    pub holdout: bool,
    /// Include wall-clock timings in the JSON report.
    #[arg(long, default_value_t = false)]
    pub timings: bool,
    /// Report path prefix: writes <out>.json and <out>.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let bundle = generate_synthetic(&SyntheticConfig {
        images: args.images,
        per_image: args.per_image,
        dim: args.dim,
        categories: args.categories,
        spread: args.spread,
        seed: args.seed,
    })?;
    write_fvecs(&bundle, &args.out_fvecs)?;
    write_image_map(&bundle, &args.out_map)?;
    Ok(format!(
        "wrote {} points ({} images, {} categories, d={}) to {} and {}",
        bundle.n(),
        bundle.image_count(),
        args.categories,
        bundle.dim,
        args.out_fvecs.display(),
        args.out_map.display()
    ))
}

pub fn cmd_build(args: &BuildArgs) -> Result<String> {
    let bundle = args.dataset.load()?;
    let mut params = Params::for_dataset_size(bundle.n());
    if let Some(m) = args.m {
        params.m = m;
        params.l = (0.6 * m as f64).ceil() as usize;
    }
    if let Some(w) = args.w {
        params.w = w;
    }
    if let Some(c) = args.c {
        params.c = c;
    }
    params.seed = args.seed;
    let manifest = build_index(&bundle, &params, &args.out)?;
    Ok(format!(
        "built index at {}\nn={} S={} d={} m={}\nfiles={} bucket bytes={} bitmap bytes={} overhead ratio={:.4}",
        args.out.display(),
        manifest.n,
        manifest.s,
        manifest.d,
        manifest.params.m,
        manifest.files.len(),
        manifest.bucket_bytes_total,
        manifest.bitmap_bytes_total,
        manifest.bitmap_overhead_ratio()
    ))
}

fn load_query(args: &QueryArgs, bundle: &DatasetBundle) -> Result<(Option<u32>, QueryImage)> {
    match (args.query_id, &args.query_fvecs) {
        (Some(id), None) => Ok((Some(id), QueryImage::from_image(bundle, id)?)),
        (None, Some(path)) => {
            let (vectors, _) = imglsh::data::load_fvecs(path)?;
            Ok((None, QueryImage::new(vectors)?))
        }
        _ => Err(Error::InvalidParams(
            "exactly one of --query-id and --query-fvecs is required".into(),
        )),
    }
}

pub fn cmd_query(args: &QueryArgs) -> Result<String> {
    let bundle = args.dataset.load()?;
    let (query_id, query) = load_query(args, &bundle)?;
    if args.holdout && query_id.is_none() {
        return Err(Error::InvalidParams("--holdout requires --query-id".into()));
    }

    let report: QueryReport = match args.method {
        Method::Exact => {
            let k = args.params.k.min(bundle.image_count());
            let request = if args.holdout { (k + 1).min(bundle.image_count()) } else { k };
            let mut report = crate::bench::run_exact_report(&bundle, &query, request, args.radius)?;
            if args.holdout {
                report.top_k.retain(|r| Some(r.image_id) != query_id);
                report.top_k.truncate(k);
            }
            report
        }
        method => {
            let index_dir = args
                .index
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("--index is required for this method".into()))?;
            let reader = IndexReader::open(index_dir)?;
            let params = args.params.resolve(reader.manifest());
            let cfg = BenchConfig {
                num_queries: 1,
                methods: vec![method],
                seed: 0,
                holdout: args.holdout,
                exact_radius: args.radius,
                timings: args.timings,
            };
            match query_id {
                Some(id) => run_method(method, &reader, &bundle, &params, id, &cfg)?,
                None => {
                    // External query bag: run directly without holdout.
                    let mut report = match method {
                        Method::Engine => {
                            imglsh::engine::QueryEngine::new(&reader, &bundle, params)?.run(&query)?.report
                        }
                        Method::Borda => {
                            imglsh::baseline::BordaBaseline::new(&reader, &bundle, params)?.run(&query)?.report
                        }
                        Method::Exact => unreachable!(),
                    };
                    if !args.timings {
                        report.wall_time_ms = None;
                    }
                    report
                }
            }
        }
    };

    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    Ok(json)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<String> {
    let bundle = args.dataset.load()?;
    let reader = IndexReader::open(&args.index)?;
    let params = args.params.resolve(reader.manifest());
    let cfg = BenchConfig {
        num_queries: args.num_queries,
        methods: args.methods.clone(),
        seed: args.seed,
        holdout: args.holdout,
        exact_radius: args.radius,
        timings: args.timings,
    };
    let report = run_bench(&reader, &bundle, &params, &cfg)?;

    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    let csv = bench_csv(&report)?;
    if let Some(prefix) = &args.out {
        let json_path = prefix.with_extension("json");
        let csv_path = prefix.with_extension("csv");
        fs::write(&json_path, &json)?;
        fs::write(&csv_path, csv.as_bytes())?;
        Ok(format!(
            "{}wrote {} and {}",
            bench_summary(&report),
            json_path.display(),
            csv_path.display()
        ))
    } else {
        Ok(format!("{}{}", String::from_utf8_lossy(&json), bench_summary(&report)))
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Build(args) => cmd_build(args),
        Command::Query(args) => cmd_query(args),
        Command::Bench(args) => cmd_bench(args),
    }
}
