//! Seeded sampler reproducing the dynamic-chunk-training configuration
//! distribution: 40% full-contextual steps, otherwise a chunk size drawn
//! uniformly from 8..=32 frames (320..=1280 ms) with a left context drawn
//! from a small menu of chunk counts.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::frames_to_ms;
use crate::error::{CcoError, Result};

pub const CHUNK_MIN_FRAMES: usize = 8;
pub const CHUNK_MAX_FRAMES: usize = 32;

/// Left context of one draw: a fixed number of chunks or all preceding ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftContext {
    Chunks(usize),
    All,
}

impl std::fmt::Display for LeftContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LeftContext::Chunks(n) => write!(f, "{n}"),
            LeftContext::All => write!(f, "all"),
        }
    }
}

/// One sampled training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DctDraw {
    FullContextual,
    Chunked {
        chunk_size_frames: usize,
        left_context: LeftContext,
    },
}

impl DctDraw {
    pub fn is_full_contextual(&self) -> bool {
        matches!(self, DctDraw::FullContextual)
    }

    pub fn chunk_size_ms(&self) -> Option<usize> {
        match self {
            DctDraw::FullContextual => None,
            DctDraw::Chunked {
                chunk_size_frames, ..
            } => Some(frames_to_ms(*chunk_size_frames)),
        }
    }
}

/// Sampler distribution parameters.
///
/// The exact left-context law is configurable; the default menu mirrors the
/// left-context settings exercised at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct DctConfig {
    pub full_contextual_prob: f64,
    pub chunk_min_frames: usize,
    pub chunk_max_frames: usize,
    pub left_context_menu: Vec<LeftContext>,
}

impl Default for DctConfig {
    fn default() -> Self {
        DctConfig {
            full_contextual_prob: 0.4,
            chunk_min_frames: CHUNK_MIN_FRAMES,
            chunk_max_frames: CHUNK_MAX_FRAMES,
            left_context_menu: vec![
                LeftContext::Chunks(0),
                LeftContext::Chunks(1),
                LeftContext::Chunks(2),
                LeftContext::Chunks(4),
                LeftContext::All,
            ],
        }
    }
}

/// Deterministic seeded sampler; owns its generator.
#[derive(Debug)]
pub struct DctSampler {
    rng: StdRng,
    cfg: DctConfig,
}

impl DctSampler {
    pub fn new(seed: u64) -> Self {
        DctSampler {
            rng: StdRng::seed_from_u64(seed),
            cfg: DctConfig::default(),
        }
    }

    pub fn with_config(seed: u64, cfg: DctConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.full_contextual_prob) {
            return Err(CcoError::InvalidArgument {
                context: "DctSampler",
                detail: "full_contextual_prob must lie in [0, 1]".to_string(),
            });
        }
        if cfg.chunk_min_frames == 0 || cfg.chunk_min_frames > cfg.chunk_max_frames {
            return Err(CcoError::InvalidArgument {
                context: "DctSampler",
                detail: "chunk frame range is empty".to_string(),
            });
        }
        if cfg.left_context_menu.is_empty() {
            return Err(CcoError::InvalidArgument {
                context: "DctSampler",
                detail: "left context menu must not be empty".to_string(),
            });
        }
        Ok(DctSampler {
            rng: StdRng::seed_from_u64(seed),
            cfg,
        })
    }

    pub fn config(&self) -> &DctConfig {
        &self.cfg
    }

    pub fn sample(&mut self) -> DctDraw {
        if self.rng.random::<f64>() < self.cfg.full_contextual_prob {
            return DctDraw::FullContextual;
        }
        let chunk_size_frames = self
            .rng
            .random_range(self.cfg.chunk_min_frames..=self.cfg.chunk_max_frames);
        let menu = &self.cfg.left_context_menu;
        let left_context = menu[self.rng.random_range(0..menu.len())];
        DctDraw::Chunked {
            chunk_size_frames,
            left_context,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_sequences() {
        let mut a = DctSampler::new(99);
        let mut b = DctSampler::new(99);
        for _ in 0..1000 {
            assert_eq!(a.sample(), b.sample());
        }
    }

    #[test]
    fn full_contextual_fraction_is_near_forty_percent() {
        let mut sampler = DctSampler::new(7);
        let n = 10_000;
        let full = (0..n)
            .filter(|_| sampler.sample().is_full_contextual())
            .count();
        let fraction = full as f64 / n as f64;
        assert!((fraction - 0.4).abs() <= 0.02, "fraction {fraction}");
    }

    #[test]
    fn chunk_sizes_cover_whole_range() {
        let mut sampler = DctSampler::new(11);
        let mut seen = [false; CHUNK_MAX_FRAMES + 1];
        for _ in 0..10_000 {
            if let DctDraw::Chunked {
                chunk_size_frames, ..
            } = sampler.sample()
            {
                assert!((CHUNK_MIN_FRAMES..=CHUNK_MAX_FRAMES).contains(&chunk_size_frames));
                seen[chunk_size_frames] = true;
            }
        }
        for size in CHUNK_MIN_FRAMES..=CHUNK_MAX_FRAMES {
            assert!(seen[size], "chunk size {size} never drawn");
        }
    }

    #[test]
    fn chunk_ms_conversion() {
        let draw = DctDraw::Chunked {
            chunk_size_frames: 8,
            left_context: LeftContext::Chunks(0),
        };
        assert_eq!(draw.chunk_size_ms(), Some(320));
        assert_eq!(DctDraw::FullContextual.chunk_size_ms(), None);
    }

    #[test]
    fn chunk_sizes_are_uniform_by_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};

        let mut sampler = DctSampler::new(5);
        let bins = CHUNK_MAX_FRAMES - CHUNK_MIN_FRAMES + 1;
        let mut counts = vec![0usize; bins];
        let mut chunked = 0usize;
        for _ in 0..25_000 {
            if let DctDraw::Chunked {
                chunk_size_frames, ..
            } = sampler.sample()
            {
                counts[chunk_size_frames - CHUNK_MIN_FRAMES] += 1;
                chunked += 1;
            }
        }
        let expected = chunked as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let critical = ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(stat < critical, "chi-square {stat} >= {critical}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_prob = DctConfig {
            full_contextual_prob: 1.5,
            ..DctConfig::default()
        };
        assert!(DctSampler::with_config(1, bad_prob).is_err());
        let bad_menu = DctConfig {
            left_context_menu: vec![],
            ..DctConfig::default()
        };
        assert!(DctSampler::with_config(1, bad_menu).is_err());
    }
}
