//! `cco`: run, stream, compare and benchmark the carry-over encoder from the
//! command line.
//!
//! Exit codes: 0 success, 2 tolerance or invariant failure, 3 input error.

mod grid;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cco_core::accounting::{bench_stream, memory_report};
use cco_core::attention::{encoder_forward_offline, EncoderStack};
use cco_core::config::{ms_to_frames, CcoConfig, Precision};
use cco_core::dct::{DctDraw, DctSampler, CHUNK_MAX_FRAMES, CHUNK_MIN_FRAMES};
use cco_core::grad::gradient_check;
use cco_core::mask::{build_cco_mask, ChunkLayout, ExtendedLayout, LayerClass, MaskSpec};
use cco_core::streaming::{compare_offline, StreamSession};
use cco_core::synth::{gen_frames, gen_stack, StackSpec};
use cco_core::tensor::{Matrix, Scalar};
use cco_core::weights;

/// Environment variable holding the default precision (`single` or `double`).
const PRECISION_ENV: &str = "CCO_PRECISION";

#[derive(Parser)]
#[command(
    name = "cco",
    version,
    about = "Streaming encoder with context carry-over"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic weights file and frames file.
    Gen(GenArgs),
    /// Print an attention mask as an ASCII grid, optionally as CSV.
    MaskDump(MaskDumpArgs),
    /// Offline masked forward pass; writes the output frames as CSV.
    RunOffline(RunArgs),
    /// Chunk-by-chunk streaming pass; writes outputs and per-chunk timings.
    RunStream(RunArgs),
    /// Check the streaming path against the offline reference.
    Compare(CompareArgs),
    /// Compare analytic layer gradients against central finite differences.
    GradCheck(GradCheckArgs),
    /// Draw dynamic-chunk-training configurations.
    SampleDct(SampleDctArgs),
    /// Latency and key-count sweep over a grid file.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerArg {
    First,
    Later,
}

#[derive(Args)]
struct ChunkingArgs {
    /// Chunk size in frames.
    #[arg(long, conflicts_with = "chunk_ms")]
    chunk_frames: Option<usize>,
    /// Chunk size in milliseconds; must be a multiple of 40 ms.
    #[arg(long)]
    chunk_ms: Option<usize>,
    /// Attendable left context, in chunks.
    #[arg(long, default_value_t = 1)]
    lc: usize,
    /// Preceding context embeddings attendable in layers after the first.
    #[arg(long, default_value_t = 1)]
    n_ctx: usize,
    /// Disable context carry-over (plain chunked attention, implies n_ctx 0).
    #[arg(long)]
    no_cco: bool,
}

impl ChunkingArgs {
    fn chunk_size(&self) -> Result<usize> {
        match (self.chunk_frames, self.chunk_ms) {
            (Some(frames), None) => Ok(frames),
            (None, Some(ms)) => Ok(ms_to_frames(ms)?),
            (None, None) => Ok(8),
            (Some(_), Some(_)) => unreachable!("clap conflict"),
        }
    }

    fn config(&self, d_model: usize) -> Result<CcoConfig> {
        let cfg = CcoConfig {
            chunk_size: self.chunk_size()?,
            lc: self.lc,
            n_ctx: if self.no_cco { 0 } else { self.n_ctx },
            cco_enabled: !self.no_cco,
            d_model,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SyntheticArgs {
    /// Frames to synthesize when no input file is given.
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    d_ff: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl SyntheticArgs {
    fn stack_spec(&self) -> StackSpec {
        StackSpec {
            d_model: self.d_model,
            head_count: self.heads,
            layer_count: self.layers,
            d_ff: self.d_ff,
            seed: self.seed,
            ln_eps: 1e-5,
        }
    }
}

#[derive(Args)]
struct ModelInputArgs {
    /// Weights file; synthesized deterministically when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Frames file; synthesized deterministically when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    synthetic: SyntheticArgs,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    synthetic: SyntheticArgs,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Output path for the weights file.
    #[arg(long, default_value = "cco-weights.bin")]
    weights_out: PathBuf,
    /// Output path for the frames file.
    #[arg(long, default_value = "cco-frames.bin")]
    frames_out: PathBuf,
}

#[derive(Args)]
struct MaskDumpArgs {
    /// Total frames covered by the mask.
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[command(flatten)]
    chunking: ChunkingArgs,
    /// Which layer's mask variant to build.
    #[arg(long, value_enum, default_value_t = LayerArg::Later)]
    layer: LayerArg,
    /// Optional CSV output of the 0/1 matrix.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelInputArgs,
    #[command(flatten)]
    chunking: ChunkingArgs,
    /// CSV output of the encoded frames.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// CSV output of per-chunk wall times (run-stream only).
    #[arg(long)]
    timings_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelInputArgs,
    #[command(flatten)]
    chunking: ChunkingArgs,
    /// Largest allowed |streaming - offline|; defaults to 1e-10 (double) or
    /// 1e-5 (single).
    #[arg(long)]
    tolerance: Option<f64>,
    /// CSV output of per-chunk discrepancies.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    d_ff: usize,
    /// Frames in the probe activation (extended by one slot per chunk).
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    chunk_frames: usize,
    #[arg(long, default_value_t = 1)]
    lc: usize,
    #[arg(long, default_value_t = 1)]
    n_ctx: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleDctArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid file of key=value lines; list values expand to a cross product.
    #[arg(long)]
    grid: PathBuf,
    #[arg(short, long, default_value = "cco-bench.csv")]
    out: PathBuf,
}

/// Command result: distinguishes clean completion from a tolerance failure.
enum Outcome {
    Ok,
    ToleranceFailure(String),
}

fn env_precision() -> Result<Option<Precision>> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => Ok(Some(Precision::parse(&v)?)),
        Err(_) => Ok(None),
    }
}

/// Flag, then file header, then environment, then double.
fn resolve_precision(flag: Option<PrecisionArg>, paths: &[&Option<PathBuf>]) -> Result<Precision> {
    if let Some(p) = flag {
        return Ok(p.into());
    }
    if let Some(path) = paths.iter().filter_map(|p| p.as_ref()).next() {
        return Ok(weights::peek_precision(path)?);
    }
    if let Some(p) = env_precision()? {
        return Ok(p);
    }
    Ok(Precision::Double)
}

fn load_model_input<S: Scalar>(args: &ModelInputArgs) -> Result<(EncoderStack<S>, Matrix<S>)> {
    let stack = match &args.weights {
        Some(path) => weights::load_stack::<S>(path)
            .with_context(|| format!("loading weights from {}", path.display()))?,
        None => gen_stack::<S>(&args.synthetic.stack_spec())?,
    };
    let frames = match &args.input {
        Some(path) => weights::load_frames::<S>(path)
            .with_context(|| format!("loading frames from {}", path.display()))?,
        None => gen_frames::<S>(args.synthetic.frames, stack.d_model(), args.synthetic.seed),
    };
    if frames.cols() != stack.d_model() {
        bail!(
            "frames width {} does not match stack d_model {}",
            frames.cols(),
            stack.d_model()
        );
    }
    Ok((stack, frames))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are not errors.
            let code = if err.use_stderr() { 3 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceFailure(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::MaskDump(args) => cmd_mask_dump(args),
        Command::RunOffline(args) => cmd_run_offline(args),
        Command::RunStream(args) => cmd_run_stream(args),
        Command::Compare(args) => cmd_compare(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::SampleDct(args) => cmd_sample_dct(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<Outcome> {
    let precision = resolve_precision(args.precision, &[])?;
    match precision {
        Precision::Double => gen_files::<f64>(&args),
        Precision::Single => gen_files::<f32>(&args),
    }?;
    println!(
        "gen: wrote {} and {} (T={}, d_model={}, layers={}, seed={}, {})",
        args.weights_out.display(),
        args.frames_out.display(),
        args.synthetic.frames,
        args.synthetic.d_model,
        args.synthetic.layers,
        args.synthetic.seed,
        precision.as_str()
    );
    Ok(Outcome::Ok)
}

fn gen_files<S: Scalar>(args: &GenArgs) -> Result<()> {
    let stack = gen_stack::<S>(&args.synthetic.stack_spec())?;
    let frames = gen_frames::<S>(
        args.synthetic.frames,
        args.synthetic.d_model,
        args.synthetic.seed,
    );
    weights::save_stack(&args.weights_out, &stack)?;
    weights::save_frames(&args.frames_out, &frames)?;
    Ok(())
}

fn cmd_mask_dump(args: MaskDumpArgs) -> Result<Outcome> {
    let chunk_size = args.chunking.chunk_size()?;
    let layout = ChunkLayout::new(args.frames, chunk_size)?;
    let ext = ExtendedLayout::new(layout);
    let spec = MaskSpec {
        lc: args.chunking.lc,
        n_ctx: if args.chunking.no_cco {
            0
        } else {
            args.chunking.n_ctx
        },
        layer_class: match args.layer {
            LayerArg::First => LayerClass::First,
            LayerArg::Later => LayerClass::Later,
        },
        cco_enabled: !args.chunking.no_cco,
    };
    let mask = build_cco_mask(&ext, &spec)?;
    let config_echo = format!(
        "frames={} chunk_frames={chunk_size} lc={} n_ctx={} layer={} cco={}",
        args.frames,
        spec.lc,
        spec.n_ctx,
        spec.layer_class.as_str(),
        if spec.cco_enabled { "on" } else { "off" }
    );

    print!("{}", report::mask_ascii(&mask, &ext, spec.cco_enabled));
    println!(
        "mask-dump: {config_echo}, {}x{} ({} allowed entries)",
        mask.rows(),
        mask.cols(),
        (0..mask.rows())
            .map(|r| mask.row_popcount(r))
            .sum::<usize>()
    );
    if let Some(path) = &args.out {
        report::write_mask_csv(path, &mask, &config_echo)?;
        println!("mask-dump: wrote {}", path.display());
    }
    Ok(Outcome::Ok)
}

fn cmd_run_offline(args: RunArgs) -> Result<Outcome> {
    let precision = resolve_precision(
        args.model.precision,
        &[&args.model.weights, &args.model.input],
    )?;
    match precision {
        Precision::Double => run_offline_typed::<f64>(&args),
        Precision::Single => run_offline_typed::<f32>(&args),
    }
}

fn run_offline_typed<S: Scalar>(args: &RunArgs) -> Result<Outcome> {
    let (stack, frames) = load_model_input::<S>(&args.model)?;
    let cfg = args.chunking.config(stack.d_model())?;
    let start = Instant::now();
    let out = encoder_forward_offline(&frames, &stack, &cfg)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let echo = report::config_echo(&cfg, stack.layer_count(), S::PRECISION);
    if let Some(path) = &args.out {
        report::write_frames_csv(path, &out, &echo)?;
    }
    println!(
        "run-offline: T={} d_model={} layers={} in {elapsed_ms:.2} ms{}",
        out.rows(),
        out.cols(),
        stack.layer_count(),
        args.out
            .as_ref()
            .map(|p| format!(", wrote {}", p.display()))
            .unwrap_or_default()
    );
    Ok(Outcome::Ok)
}

fn cmd_run_stream(args: RunArgs) -> Result<Outcome> {
    let precision = resolve_precision(
        args.model.precision,
        &[&args.model.weights, &args.model.input],
    )?;
    match precision {
        Precision::Double => run_stream_typed::<f64>(&args),
        Precision::Single => run_stream_typed::<f32>(&args),
    }
}

fn run_stream_typed<S: Scalar>(args: &RunArgs) -> Result<Outcome> {
    let (stack, frames) = load_model_input::<S>(&args.model)?;
    let cfg = args.chunking.config(stack.d_model())?;
    let mut session = StreamSession::open(&stack, cfg)?;

    let mut outputs = Vec::new();
    let mut timings = Vec::new();
    let mut row = 0;
    while row < frames.rows() {
        let end = (row + cfg.chunk_size).min(frames.rows());
        let piece = frames.slice_rows(row, end);
        let start = Instant::now();
        let outs = session.push_frames(&piece)?;
        let dt = start.elapsed().as_secs_f64() * 1e3;
        for out in outs {
            timings.push((out.chunk_index, dt));
            outputs.push(out);
        }
        row = end;
    }
    let start = Instant::now();
    if let Some(tail) = session.flush()? {
        timings.push((tail.chunk_index, start.elapsed().as_secs_f64() * 1e3));
        outputs.push(tail);
    }

    let echo = report::config_echo(&cfg, stack.layer_count(), S::PRECISION);
    if let Some(path) = &args.out {
        let mut stitched = Matrix::zeros(frames.rows(), stack.d_model());
        let mut r = 0;
        for out in &outputs {
            for i in 0..out.values.rows() {
                stitched.row_mut(r).copy_from_slice(out.values.row(i));
                r += 1;
            }
        }
        report::write_frames_csv(path, &stitched, &echo)?;
    }
    if let Some(path) = &args.timings_out {
        report::write_timings_csv(path, &timings, &echo)?;
    }
    let total_ms: f64 = timings.iter().map(|(_, ms)| ms).sum();
    println!(
        "run-stream: {} chunks, {} frames, {total_ms:.2} ms total{}{}",
        outputs.len(),
        frames.rows(),
        args.out
            .as_ref()
            .map(|p| format!(", wrote {}", p.display()))
            .unwrap_or_default(),
        args.timings_out
            .as_ref()
            .map(|p| format!(", timings {}", p.display()))
            .unwrap_or_default()
    );
    Ok(Outcome::Ok)
}

fn cmd_compare(args: CompareArgs) -> Result<Outcome> {
    let precision = resolve_precision(
        args.model.precision,
        &[&args.model.weights, &args.model.input],
    )?;
    let default_tol = match precision {
        Precision::Double => 1e-10,
        Precision::Single => 1e-5,
    };
    let tolerance = args.tolerance.unwrap_or(default_tol);
    let (max_abs_diff, per_chunk, cfg, layer_count) = match precision {
        Precision::Double => compare_typed::<f64>(&args)?,
        Precision::Single => compare_typed::<f32>(&args)?,
    };
    let echo = report::config_echo(&cfg, layer_count, precision);
    if let Some(path) = &args.out {
        report::write_diffs_csv(path, &per_chunk, &echo)?;
    }
    println!(
        "compare: max_abs_diff={max_abs_diff:.3e} over {} chunks, tolerance={tolerance:.1e}",
        per_chunk.len()
    );
    if max_abs_diff > tolerance {
        return Ok(Outcome::ToleranceFailure(format!(
            "streaming diverged from offline: {max_abs_diff:.3e} > {tolerance:.1e}"
        )));
    }
    Ok(Outcome::Ok)
}

fn compare_typed<S: Scalar>(args: &CompareArgs) -> Result<(f64, Vec<f64>, CcoConfig, usize)> {
    let (stack, frames) = load_model_input::<S>(&args.model)?;
    let cfg = args.chunking.config(stack.d_model())?;
    let report = compare_offline(&frames, &stack, &cfg)?;
    Ok((
        report.max_abs_diff,
        report.per_chunk_diffs,
        cfg,
        stack.layer_count(),
    ))
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<Outcome> {
    let layout = ChunkLayout::new(args.frames, args.chunk_frames)?;
    let ext = ExtendedLayout::new(layout);
    let mask = build_cco_mask(
        &ext,
        &MaskSpec {
            lc: args.lc,
            n_ctx: args.n_ctx,
            layer_class: LayerClass::Later,
            cco_enabled: true,
        },
    )?;
    let params = gen_stack::<f64>(&StackSpec {
        d_model: args.d_model,
        head_count: args.heads,
        layer_count: 1,
        d_ff: args.d_ff,
        seed: args.seed,
        ln_eps: 1e-5,
    })?
    .layers()[0]
        .clone();
    let x = gen_frames::<f64>(ext.extended_len(), args.d_model, args.seed.wrapping_add(1));
    let upstream = gen_frames::<f64>(ext.extended_len(), args.d_model, args.seed.wrapping_add(2));

    let report = gradient_check(&x, &params, 1e-5, &mask, &upstream, args.step)?;
    let echo = format!(
        "d_model={} heads={} d_ff={} rows={} step={:.1e} seed={}",
        args.d_model,
        args.heads,
        args.d_ff,
        ext.extended_len(),
        args.step,
        args.seed
    );
    if let Some(path) = &args.out {
        report::write_grad_csv(path, &report.per_tensor, &echo)?;
    }
    for (name, err) in &report.per_tensor {
        println!("grad-check: {name:<12} max relative error {err:.3e}");
    }
    println!(
        "grad-check: overall {:.3e}, tolerance {:.1e}",
        report.max_rel_err, args.tolerance
    );
    if report.max_rel_err > args.tolerance {
        return Ok(Outcome::ToleranceFailure(format!(
            "gradient mismatch: {:.3e} > {:.1e}",
            report.max_rel_err, args.tolerance
        )));
    }
    Ok(Outcome::Ok)
}

fn cmd_sample_dct(args: SampleDctArgs) -> Result<Outcome> {
    let mut sampler = DctSampler::new(args.seed);
    let draws: Vec<DctDraw> = (0..args.draws).map(|_| sampler.sample()).collect();
    let full = draws.iter().filter(|d| d.is_full_contextual()).count();
    let fraction = full as f64 / args.draws.max(1) as f64;
    let mut seen = [false; CHUNK_MAX_FRAMES + 1];
    for draw in &draws {
        if let DctDraw::Chunked {
            chunk_size_frames, ..
        } = draw
        {
            seen[*chunk_size_frames] = true;
        }
    }
    let covered = (CHUNK_MIN_FRAMES..=CHUNK_MAX_FRAMES)
        .filter(|&s| seen[s])
        .count();
    let bins = CHUNK_MAX_FRAMES - CHUNK_MIN_FRAMES + 1;

    if let Some(path) = &args.out {
        report::write_dct_csv(path, &draws, args.seed)?;
        println!("sample-dct: wrote {}", path.display());
    }
    println!(
        "sample-dct: {} draws, full-contextual fraction {fraction:.4}, chunk sizes covered {covered}/{bins}",
        args.draws
    );

    if args.draws >= 1000 && (fraction - 0.40).abs() > 0.02 {
        return Ok(Outcome::ToleranceFailure(format!(
            "full-contextual fraction {fraction:.4} outside 0.40 +- 0.02"
        )));
    }
    if args.draws >= 10_000 && covered < bins {
        return Ok(Outcome::ToleranceFailure(format!(
            "only {covered}/{bins} chunk sizes drawn"
        )));
    }
    Ok(Outcome::Ok)
}

fn cmd_bench(args: BenchArgs) -> Result<Outcome> {
    let spec = grid::parse_grid_file(&args.grid)
        .with_context(|| format!("reading grid {}", args.grid.display()))?;
    let mut rows = Vec::new();
    for point in spec.points() {
        let row = match point.precision {
            Precision::Double => bench_point::<f64>(&point)?,
            Precision::Single => bench_point::<f32>(&point)?,
        };
        println!(
            "bench: chunk_frames={} lc={} n_ctx={} cco={} mean={:.4} ms p99={:.4} ms kv={} baseline_kv={}",
            point.chunk_frames,
            point.lc,
            point.n_ctx,
            if point.cco { "on" } else { "off" },
            row.mean_ms,
            row.p99_ms,
            row.kv_settled,
            row.kv_baseline_last
        );
        rows.push(row);
    }
    report::write_bench_csv(&args.out, &rows, &spec.scalar_echo())?;
    println!(
        "bench: wrote {} ({} configs)",
        args.out.display(),
        rows.len()
    );
    Ok(Outcome::Ok)
}

fn bench_point<S: Scalar>(point: &grid::GridPoint) -> Result<report::BenchRow> {
    let stack = gen_stack::<S>(&StackSpec {
        d_model: point.d_model,
        head_count: point.heads,
        layer_count: point.layers,
        d_ff: point.d_ff,
        seed: point.seed,
        ln_eps: 1e-5,
    })?;
    let cfg = CcoConfig {
        chunk_size: point.chunk_frames,
        lc: point.lc,
        n_ctx: if point.cco { point.n_ctx } else { 0 },
        cco_enabled: point.cco,
        d_model: point.d_model,
    };
    cfg.validate()?;
    let latency = bench_stream(
        &stack,
        &cfg,
        point.stream_chunks,
        point.repetitions,
        point.seed,
    )?;

    let memory = memory_report(
        point.chunk_frames,
        point.lc,
        if point.cco { point.n_ctx } else { 0 },
        point.stream_chunks.max(point.lc + point.n_ctx + 2),
    )?;
    let later: Vec<_> = memory
        .rows
        .iter()
        .filter(|r| r.layer_class == LayerClass::Later)
        .collect();
    let settled = later[(point.lc + point.n_ctx).min(later.len() - 1)];
    Ok(report::BenchRow {
        chunk_frames: point.chunk_frames,
        lc: point.lc,
        n_ctx: point.n_ctx,
        cco: point.cco,
        precision: point.precision,
        stream_chunks: point.stream_chunks,
        samples: latency.samples,
        mean_ms: latency.mean_ms,
        p99_ms: latency.p99_ms,
        kv_settled: if point.cco {
            settled.cco_kv
        } else {
            // Without carry-over the window itself is the whole key set.
            (point.lc + 1) * point.chunk_frames
        },
        kv_baseline_last: later.last().unwrap().baseline_kv,
    })
}
