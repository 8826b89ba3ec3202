//! Versioned binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "MTSCKPT\0"
//! version      u32      1
//! kind         u8       0 naive-last, 1 seasonal-naive, 2 historical-average,
//!                       3 linear, 4 dlinear, 5 nlinear
//! channel_mode u8       0 independent, 1 per-channel-weights
//! history      u32
//! horizon      u32
//! kernel       u32
//! season       u32
//! n_sets       u32
//! in_dim       u32
//! per set:     in_dim * horizon f64 (w, row-major), horizon f64 (b)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::linear::{LinearFamily, LinearModel, LinearWeights};
use super::{ChannelMode, ForecasterKind, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MTSCKPT\0";
const VERSION: u32 = 1;

fn kind_code(kind: ForecasterKind) -> u8 {
    match kind {
        ForecasterKind::NaiveLast => 0,
        ForecasterKind::SeasonalNaive => 1,
        ForecasterKind::HistoricalAverage => 2,
        ForecasterKind::Linear => 3,
        ForecasterKind::Dlinear => 4,
        ForecasterKind::Nlinear => 5,
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    let (kind, mode, history, horizon, kernel, season, sets): (_, _, usize, usize, usize, usize, &[LinearWeights]) =
        match model {
            Model::NaiveLast { horizon } => (ForecasterKind::NaiveLast, ChannelMode::Independent, 0, *horizon, 1, 1, &[]),
            Model::SeasonalNaive { horizon, season } => {
                (ForecasterKind::SeasonalNaive, ChannelMode::Independent, 0, *horizon, 1, *season, &[])
            }
            Model::HistoricalAverage { horizon } => {
                (ForecasterKind::HistoricalAverage, ChannelMode::Independent, 0, *horizon, 1, 1, &[])
            }
            Model::Linear(m) => {
                let kernel = match m.family {
                    LinearFamily::DLinear { kernel } => kernel,
                    _ => 1,
                };
                (m.family.kind(), m.channel_mode, m.history, m.horizon, kernel, 1, &m.weights)
            }
        };
    out.push(kind_code(kind));
    out.push(match mode {
        ChannelMode::Independent => 0,
        ChannelMode::PerChannelWeights => 1,
    });
    for v in [history, horizon, kernel, season, sets.len()] {
        put(&mut out, v as u32);
    }
    put(&mut out, sets.first().map_or(0, |s| s.w.nrows()) as u32);
    for set in sets {
        for v in set.w.iter().chain(set.b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<Model> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let version = u32_at(take(4)?);
    if version != VERSION as usize {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let kind = take(1)?[0];
    let mode = match take(1)?[0] {
        0 => ChannelMode::Independent,
        1 => ChannelMode::PerChannelWeights,
        m => return Err(bad(&format!("unknown channel mode {m}"))),
    };
    let history = u32_at(take(4)?);
    let horizon = u32_at(take(4)?);
    let kernel = u32_at(take(4)?);
    let season = u32_at(take(4)?);
    let n_sets = u32_at(take(4)?);
    let in_dim = u32_at(take(4)?);

    let family = match kind {
        0 => return Ok(Model::NaiveLast { horizon }),
        1 => return Ok(Model::SeasonalNaive { horizon, season }),
        2 => return Ok(Model::HistoricalAverage { horizon }),
        3 => LinearFamily::Linear,
        4 => LinearFamily::DLinear { kernel },
        5 => LinearFamily::NLinear,
        k => return Err(bad(&format!("unknown model kind {k}"))),
    };
    if in_dim != family.feature_dim(history) || n_sets == 0 || horizon == 0 {
        return Err(bad("inconsistent dimensions"));
    }
    let mut weights = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect())
        };
        let w = Array2::from_shape_vec((in_dim, horizon), read(in_dim * horizon)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let b = Array1::from(read(horizon)?);
        weights.push(LinearWeights { w, b });
    }
    if pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Model::Linear(LinearModel {
        family,
        history,
        horizon,
        channel_mode: mode,
        weights,
    }))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ForecasterSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_models_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [ForecasterKind::Linear, ForecasterKind::Dlinear, ForecasterKind::Nlinear] {
            for mode in [ChannelMode::Independent, ChannelMode::PerChannelWeights] {
                let mut spec = ForecasterSpec::new(kind, 6, 3);
                spec.kernel = 5;
                spec.channel_mode = mode;
                let m = Model::Linear(LinearModel::init_uniform(&spec, 2, &mut rng).unwrap());
                let back = decode(&encode(&m)).unwrap();
                assert_eq!(back, m);
            }
        }
    }

    #[test]
    fn baselines_round_trip() {
        for m in [
            Model::NaiveLast { horizon: 4 },
            Model::SeasonalNaive { horizon: 4, season: 3 },
            Model::HistoricalAverage { horizon: 2 },
        ] {
            assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }

    #[test]
    fn corrupt_input() {
        let m = Model::NaiveLast { horizon: 4 };
        let mut buf = encode(&m);
        buf[0] = b'X';
        assert!(decode(&buf).is_err());
        let spec = ForecasterSpec::new(ForecasterKind::Linear, 2, 2);
        let buf = encode(&Model::Linear(LinearModel::zeros(&spec, 1).unwrap()));
        assert!(decode(&buf[..buf.len() - 3]).is_err());
    }
}
