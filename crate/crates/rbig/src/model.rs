//! Binary model file format.
//!
//! Little-endian, magic `GFLW`, version u16, full-precision quantile tables
//! and rotation matrices, CRC32 trailer. Loading a saved flow reproduces
//! forward outputs bit-exactly on the same platform.

use std::path::Path;

use ndarray::Array2;

use crate::data::{Seed, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::flow::{
    BinPolicy, FitConfig, FlowLayer, GaussianizationFlow, HeadKind, StopReason,
    SurrogateCalibration,
};
use crate::rotation::{RotationKind, RotationMatrix};
use crate::univariate::{EmpiricalCdf, MarginalMap, MarginalTarget};

const MAGIC: &[u8; 4] = b"GFLW";
pub const FORMAT_VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptModel("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Serialize a fitted flow to `path`.
pub fn save_model(flow: &GaussianizationFlow, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);

    let algo = RNG_ALGORITHM.as_bytes();
    w.u8(algo.len() as u8);
    w.0.extend_from_slice(algo);

    w.u32(flow.d() as u32);
    w.u32(flow.n_layers() as u32);
    w.u8(match flow.head() {
        HeadKind::None => 0,
        HeadKind::UniformHypercube => 1,
    });
    w.u8(match flow.stop_reason() {
        StopReason::Converged => 0,
        StopReason::MaxLayers => 1,
    });

    let config = flow.fit_config();
    w.u32(config.max_layers as u32);
    w.u8(match config.rotation_kind {
        RotationKind::Pca => 0,
        RotationKind::Random => 1,
    });
    w.u64(config.seed.0);
    match config.n_bins {
        BinPolicy::Auto => {
            w.u8(0);
            w.u32(0);
        }
        BinPolicy::Fixed(b) => {
            w.u8(1);
            w.u32(b as u32);
        }
    }
    w.f64(config.clamp_epsilon);
    w.u32(config.stop_window as u32);
    w.f64(config.stop_significance);

    w.f64(flow.total_delta_t());
    w.f64(flow.raw_total_delta_t());
    let surrogate = flow.surrogate();
    w.f64(surrogate.mean);
    w.f64(surrogate.std);
    w.f64(surrogate.threshold);

    for layer in flow.layers() {
        w.u32(layer.layer_index() as u32);
        w.f64(layer.delta_t());
        for map in layer.marginals() {
            w.u8(match map.target() {
                MarginalTarget::GaussianQuantile => 0,
                MarginalTarget::Identity => 1,
            });
            w.f64(map.clamp_epsilon());
            w.f64(map.cdf().tail_extension());
            let (support, levels) = map.cdf().knots();
            w.u32(support.len() as u32);
            for &v in support {
                w.f64(v);
            }
            for &v in levels {
                w.f64(v);
            }
        }
        let rotation = layer.rotation();
        w.u8(match rotation.kind() {
            RotationKind::Pca => 0,
            RotationKind::Random => 1,
        });
        match rotation.seed() {
            Some(seed) => {
                w.u8(1);
                w.u64(seed.0);
            }
            None => {
                w.u8(0);
                w.u64(0);
            }
        }
        for &v in rotation.matrix().iter() {
            w.f64(v);
        }
    }

    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    std::fs::write(path, &w.0)?;
    Ok(())
}

/// Load a flow saved by [`save_model`], verifying version and checksum.
pub fn load_model(path: impl AsRef<Path>) -> Result<GaussianizationFlow> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::CorruptModel("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptModel("bad magic".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let expected_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != expected_crc {
        return Err(Error::CorruptModel("checksum mismatch".into()));
    }

    let mut r = Reader {
        bytes: body,
        pos: 6,
    };
    let algo_len = r.u8()? as usize;
    let algo = r.take(algo_len)?;
    if algo != RNG_ALGORITHM.as_bytes() {
        return Err(Error::CorruptModel(format!(
            "unknown rng algorithm {:?}",
            String::from_utf8_lossy(algo)
        )));
    }

    let d = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let head = match r.u8()? {
        0 => HeadKind::None,
        1 => HeadKind::UniformHypercube,
        other => return Err(Error::CorruptModel(format!("bad head tag {other}"))),
    };
    let stop_reason = match r.u8()? {
        0 => StopReason::Converged,
        1 => StopReason::MaxLayers,
        other => return Err(Error::CorruptModel(format!("bad stop tag {other}"))),
    };

    let max_layers = r.u32()? as usize;
    let rotation_kind = read_rotation_kind(&mut r)?;
    let seed = Seed(r.u64()?);
    let n_bins = match (r.u8()?, r.u32()?) {
        (0, _) => BinPolicy::Auto,
        (1, b) => BinPolicy::Fixed(b as usize),
        (tag, _) => return Err(Error::CorruptModel(format!("bad bin policy tag {tag}"))),
    };
    let clamp_epsilon = r.f64()?;
    let stop_window = r.u32()? as usize;
    let stop_significance = r.f64()?;

    let total_delta_t = r.f64()?;
    let raw_total_delta_t = r.f64()?;
    let surrogate = SurrogateCalibration {
        mean: r.f64()?,
        std: r.f64()?,
        threshold: r.f64()?,
    };

    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer_index = r.u32()? as usize;
        let delta_t = r.f64()?;
        let mut marginals = Vec::with_capacity(d);
        for _ in 0..d {
            let target = match r.u8()? {
                0 => MarginalTarget::GaussianQuantile,
                1 => MarginalTarget::Identity,
                other => return Err(Error::CorruptModel(format!("bad target tag {other}"))),
            };
            let map_eps = r.f64()?;
            let tail_extension = r.f64()?;
            let k = r.u32()? as usize;
            let mut support = Vec::with_capacity(k);
            for _ in 0..k {
                support.push(r.f64()?);
            }
            let mut levels = Vec::with_capacity(k);
            for _ in 0..k {
                levels.push(r.f64()?);
            }
            let cdf = EmpiricalCdf::from_knots(support, levels, tail_extension)?;
            marginals.push(MarginalMap::from_parts(cdf, target, map_eps));
        }
        let kind = read_rotation_kind(&mut r)?;
        let rot_seed = match r.u8()? {
            0 => {
                r.u64()?;
                None
            }
            1 => Some(Seed(r.u64()?)),
            other => return Err(Error::CorruptModel(format!("bad seed tag {other}"))),
        };
        let mut matrix = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                matrix[[i, j]] = r.f64()?;
            }
        }
        let rotation = RotationMatrix::from_matrix(matrix, kind, rot_seed)?;
        layers.push(FlowLayer::new(marginals, rotation, delta_t, layer_index));
    }

    if r.pos != body.len() {
        return Err(Error::CorruptModel("trailing bytes".into()));
    }

    let fit_config = FitConfig {
        max_layers,
        rotation_kind,
        seed,
        n_bins,
        clamp_epsilon,
        stop_window,
        stop_significance,
        head,
    };
    GaussianizationFlow::from_parts(
        d,
        layers,
        head,
        fit_config,
        total_delta_t,
        raw_total_delta_t,
        stop_reason,
        surrogate,
    )
}

fn read_rotation_kind(r: &mut Reader<'_>) -> Result<RotationKind> {
    match r.u8()? {
        0 => Ok(RotationKind::Pca),
        1 => Ok(RotationKind::Random),
        other => Err(Error::CorruptModel(format!("bad rotation tag {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_gaussian, GaussianSpec};

    fn small_flow() -> GaussianizationFlow {
        let spec = GaussianSpec::equicorrelated(2, 0.5).unwrap();
        let data = sample_gaussian(&spec, 400, Seed(1)).unwrap();
        let config = FitConfig {
            max_layers: 3,
            stop_window: 2,
            ..FitConfig::default()
        };
        GaussianizationFlow::fit(&data, config).unwrap()
    }

    #[test]
    fn round_trip_bitwise_forward() {
        let flow = small_flow();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gflw");
        save_model(&flow, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        let probe = sample_gaussian(&GaussianSpec::standard(2), 100, Seed(2)).unwrap();
        let (a, lda) = flow.forward(&probe).unwrap();
        let (b, ldb) = loaded.forward(&probe).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(lda, ldb);
        assert_eq!(flow.total_delta_t(), loaded.total_delta_t());
        assert_eq!(flow.stop_reason(), loaded.stop_reason());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let flow = small_flow();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gflw");
        save_model(&flow, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn bumped_version_is_version_mismatch() {
        let flow = small_flow();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gflw");
        save_model(&flow, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn flipped_payload_byte_is_corrupt() {
        let flow = small_flow();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gflw");
        save_model(&flow, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::CorruptModel(_))));
    }
}
