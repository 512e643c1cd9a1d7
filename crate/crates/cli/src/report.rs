//! CSV and ASCII emission. Every CSV starts with a `# config:` comment line
//! echoing the run parameters, then a header row.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;

use cco_core::config::{CcoConfig, Precision};
use cco_core::dct::DctDraw;
use cco_core::mask::ExtendedLayout;
use cco_core::tensor::{BoolMatrix, Matrix, Scalar};

pub fn config_echo(cfg: &CcoConfig, layer_count: usize, precision: Precision) -> String {
    format!(
        "chunk_frames={} lc={} n_ctx={} cco={} d_model={} layers={layer_count} precision={}",
        cfg.chunk_size,
        cfg.lc,
        cfg.n_ctx,
        if cfg.cco_enabled { "on" } else { "off" },
        cfg.d_model,
        precision.as_str()
    )
}

/// Mask as a grid: `#` frame-to-frame dependency, `C` any dependency through
/// a context slot, `.` blocked.
pub fn mask_ascii(mask: &BoolMatrix, ext: &ExtendedLayout, cco_enabled: bool) -> String {
    let mut out = String::new();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            let ch = if !mask.get(r, c) {
                '.'
            } else if cco_enabled && (ext.is_slot(r) || ext.is_slot(c)) {
                'C'
            } else {
                '#'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

pub fn write_mask_csv(path: &Path, mask: &BoolMatrix, echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\n");
    s.push_str("row");
    for c in 0..mask.cols() {
        write!(s, ",k{c}")?;
    }
    s.push('\n');
    for r in 0..mask.rows() {
        write!(s, "{r}")?;
        for c in 0..mask.cols() {
            write!(s, ",{}", u8::from(mask.get(r, c)))?;
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_frames_csv<S: Scalar>(path: &Path, frames: &Matrix<S>, echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\n");
    s.push_str("frame");
    for c in 0..frames.cols() {
        write!(s, ",c{c}")?;
    }
    s.push('\n');
    for r in 0..frames.rows() {
        write!(s, "{r}")?;
        for c in 0..frames.cols() {
            write!(s, ",{}", frames.get(r, c))?;
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_timings_csv(path: &Path, timings: &[(usize, f64)], echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\nchunk,push_ms\n");
    for (chunk, ms) in timings {
        writeln!(s, "{chunk},{ms}")?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_diffs_csv(path: &Path, diffs: &[f64], echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\nchunk,max_abs_diff\n");
    for (chunk, diff) in diffs.iter().enumerate() {
        writeln!(s, "{chunk},{diff:e}")?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_grad_csv(path: &Path, per_tensor: &[(String, f64)], echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\ntensor,max_rel_err\n");
    for (name, err) in per_tensor {
        writeln!(s, "{name},{err:e}")?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_dct_csv(path: &Path, draws: &[DctDraw], seed: u64) -> Result<()> {
    let mut s = format!("# config: seed={seed} draws={}\n", draws.len());
    s.push_str("draw,mode,chunk_frames,chunk_ms,left_context\n");
    for (i, draw) in draws.iter().enumerate() {
        match draw {
            DctDraw::FullContextual => writeln!(s, "{i},full_contextual,,,")?,
            DctDraw::Chunked {
                chunk_size_frames,
                left_context,
            } => writeln!(
                s,
                "{i},chunked,{chunk_size_frames},{},{left_context}",
                chunk_size_frames * cco_core::FRAME_MS
            )?,
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub struct BenchRow {
    pub chunk_frames: usize,
    pub lc: usize,
    pub n_ctx: usize,
    pub cco: bool,
    pub precision: Precision,
    pub stream_chunks: usize,
    pub samples: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub kv_settled: usize,
    pub kv_baseline_last: usize,
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow], echo: &str) -> Result<()> {
    let mut s = format!("# config: {echo}\n");
    s.push_str(
        "chunk_frames,lc,n_ctx,cco,precision,stream_chunks,samples,mean_ms,p99_ms,kv_settled,kv_baseline_last\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.chunk_frames,
            r.lc,
            r.n_ctx,
            if r.cco { "on" } else { "off" },
            r.precision.as_str(),
            r.stream_chunks,
            r.samples,
            r.mean_ms,
            r.p99_ms,
            r.kv_settled,
            r.kv_baseline_last
        )?;
    }
    std::fs::write(path, s)?;
    Ok(())
}
