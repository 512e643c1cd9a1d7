//! Grid files for `cco bench`: one `key=value` per line, `#` comments
//! allowed. `chunk_frames`, `lc`, `n_ctx` and `cco` accept comma lists and
//! expand to a cross product; the remaining keys are scalars.

use std::path::Path;

use anyhow::{bail, Context, Result};

use cco_core::config::Precision;

#[derive(Debug, Clone)]
pub struct GridSpec {
    chunk_frames: Vec<usize>,
    lc: Vec<usize>,
    n_ctx: Vec<usize>,
    cco: Vec<bool>,
    d_model: usize,
    heads: usize,
    layers: usize,
    d_ff: usize,
    stream_chunks: usize,
    repetitions: usize,
    seed: u64,
    precision: Precision,
}

#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub chunk_frames: usize,
    pub lc: usize,
    pub n_ctx: usize,
    pub cco: bool,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub stream_chunks: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            chunk_frames: vec![8],
            lc: vec![1],
            n_ctx: vec![1],
            cco: vec![true],
            d_model: 16,
            heads: 2,
            layers: 2,
            d_ff: 32,
            stream_chunks: 100,
            repetitions: 1,
            seed: 7,
            precision: Precision::Double,
        }
    }
}

impl GridSpec {
    /// The non-swept keys, echoed into the output CSV.
    pub fn scalar_echo(&self) -> String {
        format!(
            "d_model={} heads={} layers={} d_ff={} stream_chunks={} repetitions={} seed={} precision={}",
            self.d_model,
            self.heads,
            self.layers,
            self.d_ff,
            self.stream_chunks,
            self.repetitions,
            self.seed,
            self.precision.as_str()
        )
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &chunk_frames in &self.chunk_frames {
            for &lc in &self.lc {
                for &n_ctx in &self.n_ctx {
                    for &cco in &self.cco {
                        out.push(GridPoint {
                            chunk_frames,
                            lc,
                            n_ctx,
                            cco,
                            d_model: self.d_model,
                            heads: self.heads,
                            layers: self.layers,
                            d_ff: self.d_ff,
                            stream_chunks: self.stream_chunks,
                            repetitions: self.repetitions,
                            seed: self.seed,
                            precision: self.precision,
                        });
                    }
                }
            }
        }
        out
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad value `{item}` for {key}: {e}"))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("bad value `{value}` for {key}: {e}"))
}

pub fn parse_grid_file(path: &Path) -> Result<GridSpec> {
    let text = std::fs::read_to_string(path)?;
    let mut spec = GridSpec::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected key=value, got `{line}`", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "chunk_frames" => spec.chunk_frames = parse_list(value, key)?,
            "lc" => spec.lc = parse_list(value, key)?,
            "n_ctx" => spec.n_ctx = parse_list(value, key)?,
            "cco" => {
                spec.cco = value
                    .split(',')
                    .map(|item| match item.trim() {
                        "on" | "true" | "1" => Ok(true),
                        "off" | "false" | "0" => Ok(false),
                        other => bail!("bad value `{other}` for cco"),
                    })
                    .collect::<Result<Vec<bool>>>()?
            }
            "d_model" => spec.d_model = parse_scalar(value, key)?,
            "heads" => spec.heads = parse_scalar(value, key)?,
            "layers" => spec.layers = parse_scalar(value, key)?,
            "d_ff" => spec.d_ff = parse_scalar(value, key)?,
            "stream_chunks" => spec.stream_chunks = parse_scalar(value, key)?,
            "repetitions" => spec.repetitions = parse_scalar(value, key)?,
            "seed" => spec.seed = parse_scalar(value, key)?,
            "precision" => {
                spec.precision = Precision::parse(value)
                    .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?
            }
            other => bail!("line {}: unknown key `{other}`", lineno + 1),
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_expansion() {
        let spec = GridSpec {
            chunk_frames: vec![8, 16],
            n_ctx: vec![0, 1, 16],
            ..GridSpec::default()
        };
        assert_eq!(spec.points().len(), 6);
    }

    #[test]
    fn parses_lists_and_scalars() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("cco-grid-test-{}.txt", std::process::id()));
        std::fs::write(
            &path,
            "# demo grid\nchunk_frames=8,16\nlc=0,2\nn_ctx=1\nd_model=8\nheads=2\nlayers=1\nd_ff=16\nstream_chunks=10\nseed=3\nprecision=single\n",
        )
        .unwrap();
        let spec = parse_grid_file(&path).unwrap();
        assert_eq!(spec.points().len(), 4);
        assert_eq!(spec.precision, Precision::Single);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("cco-grid-bad-{}.txt", std::process::id()));
        std::fs::write(&path, "bogus=1\n").unwrap();
        assert!(parse_grid_file(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
