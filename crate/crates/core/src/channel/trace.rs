//! Binary channel-trace files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 16   | magic `MMLAT-TRACE-V1\0\0`              |
//! | 16     | 4    | antennas `M` (u32)                      |
//! | 20     | 4    | subcarriers `N` (u32)                   |
//! | 24     | 4    | users `K` (u32)                         |
//! | 28     | 4    | frame count (u32)                       |
//! | 32     | 4    | complex encoding, `1` = f32 re/im pairs |
//! | 36     | ...  | payload                                 |
//!
//! The payload holds `frames * N * K * M` complex gains ordered frame-major,
//! then subcarrier, user, antenna.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;

use super::{complex_normal, effective_gain, per_antenna_gain, ChannelSample, GainDistribution};
use crate::error::{Error, Result};
use crate::multiuser::mu_per_antenna_gain;
use crate::rng::cell_rng;

pub const MAGIC: [u8; 16] = *b"MMLAT-TRACE-V1\0\0";
pub const HEADER_LEN: usize = 36;
pub const ENCODING_F32_INTERLEAVED: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub antennas: usize,
    pub subcarriers: usize,
    pub users: usize,
    pub frames: usize,
    pub gains: Vec<Complex<f32>>,
}

/// Re-estimation of trace channels, which are taken as the true channel.
///
/// Each gain `h` is replaced by the MMSE estimate from `tau` noisy pilots,
/// `(s h + sqrt(s) n) / (1 + s)` with `s = tau p_tau gamma` and unit-variance
/// pilot noise `n`. The estimate has variance `s / (1 + s)` and the residual
/// error variance `1 / (1 + s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimation {
    pub training_snr: f64,
    pub seed: u64,
}

fn trace_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Trace {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl TraceFile {
    pub fn new(antennas: usize, subcarriers: usize, users: usize, frames: usize, gains: Vec<Complex<f32>>) -> Result<Self> {
        let expected = frames * subcarriers * users * antennas;
        if gains.len() != expected {
            return Err(Error::Domain(format!(
                "trace payload holds {} gains, dimensions need {expected}",
                gains.len()
            )));
        }
        Ok(TraceFile {
            antennas,
            subcarriers,
            users,
            frames,
            gains,
        })
    }

    fn index(&self, frame: usize, subcarrier: usize, user: usize, antenna: usize) -> usize {
        ((frame * self.subcarriers + subcarrier) * self.users + user) * self.antennas + antenna
    }

    pub fn gain(&self, frame: usize, subcarrier: usize, user: usize, antenna: usize) -> Complex<f32> {
        self.gains[self.index(frame, subcarrier, user, antenna)]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.gains.len() * 8);
        out.extend_from_slice(&MAGIC);
        for v in [
            self.antennas as u32,
            self.subcarriers as u32,
            self.users as u32,
            self.frames as u32,
            ENCODING_F32_INTERLEAVED,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for z in &self.gains {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
            return Err(trace_err(0, "magic mismatch"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(trace_err(
                bytes.len(),
                format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        let field = |i: usize| {
            let at = 16 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        };
        let (m, n, k, frames, encoding) = (field(0), field(1), field(2), field(3), field(4));
        for (i, (name, v)) in [("antennas", m), ("subcarriers", n), ("users", k), ("frames", frames)]
            .into_iter()
            .enumerate()
        {
            if v == 0 {
                return Err(trace_err(16 + 4 * i, format!("dimension mismatch: {name} is zero")));
            }
        }
        if k > 1 && m <= k {
            return Err(trace_err(24, format!("dimension mismatch: {k} users need more than {m} antennas")));
        }
        if encoding != ENCODING_F32_INTERLEAVED {
            return Err(trace_err(32, format!("unknown complex encoding {encoding}")));
        }
        let count = (frames as u64) * (n as u64) * (k as u64) * (m as u64);
        let expected = count * 8;
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if actual != expected {
            let offset = HEADER_LEN as u64 + actual.min(expected);
            return Err(Error::Trace {
                offset,
                reason: format!("payload length mismatch: expected {expected} bytes, found {actual}"),
            });
        }
        let mut gains = Vec::with_capacity(count as usize);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
            let re = f32::from_le_bytes(chunk[..4].try_into().unwrap());
            let im = f32::from_le_bytes(chunk[4..].try_into().unwrap());
            if !(re.is_finite() && im.is_finite()) {
                return Err(trace_err(HEADER_LEN + 8 * i, "non-finite channel gain"));
            }
            gains.push(Complex::new(re, im));
        }
        Ok(TraceFile {
            antennas: m as usize,
            subcarriers: n as usize,
            users: k as usize,
            frames: frames as usize,
            gains,
        })
    }

    /// One effective-gain distribution per user, one sample per frame.
    /// Single-user traces use `||h||^2 / M`; multiuser traces use the
    /// zero-forcing gain of each user.
    pub fn gain_distributions(&self, estimation: Option<TraceEstimation>) -> Result<Vec<GainDistribution>> {
        (0..self.users)
            .map(|user| {
                let etas = (0..self.frames)
                    .into_par_iter()
                    .map(|frame| {
                        let kappas = (0..self.subcarriers)
                            .map(|sc| self.per_antenna_gain(frame, sc, user, estimation))
                            .collect::<Result<Vec<_>>>()?;
                        effective_gain(&kappas)
                    })
                    .collect::<Result<Vec<_>>>()?;
                GainDistribution::from_samples(etas)
            })
            .collect()
    }

    fn estimated_matrix(&self, frame: usize, subcarrier: usize, estimation: Option<TraceEstimation>) -> DMatrix<Complex<f64>> {
        let mut h = DMatrix::from_fn(self.antennas, self.users, |a, u| {
            let z = self.gain(frame, subcarrier, u, a);
            Complex::new(z.re as f64, z.im as f64)
        });
        if let Some(est) = estimation {
            let s = est.training_snr;
            let mut rng = cell_rng(est.seed, frame as u64, subcarrier);
            for z in h.iter_mut() {
                let noise = complex_normal(&mut rng, 1.0);
                *z = (*z * s + noise * s.sqrt()) / (1.0 + s);
            }
        }
        h
    }

    fn per_antenna_gain(
        &self,
        frame: usize,
        subcarrier: usize,
        user: usize,
        estimation: Option<TraceEstimation>,
    ) -> Result<f64> {
        let h = self.estimated_matrix(frame, subcarrier, estimation);
        if self.users == 1 {
            per_antenna_gain(&ChannelSample {
                estimated_channel: h.column(0).iter().copied().collect(),
                subcarrier_index: subcarrier + 1,
            })
        } else {
            mu_per_antenna_gain(&h, user)
        }
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &TraceFile) -> Result<()> {
    fs::write(path, trace.to_bytes())?;
    Ok(())
}

/// Reads a trace and derives the per-user gain distributions from the raw
/// (not re-estimated) channels.
pub fn load_trace(path: impl AsRef<Path>) -> Result<(TraceFile, Vec<GainDistribution>)> {
    let trace = TraceFile::from_bytes(&fs::read(path)?)?;
    let dists = trace.gain_distributions(None)?;
    Ok((trace, dists))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace(m: usize, n: usize, k: usize, frames: usize) -> TraceFile {
        let gains = (0..frames * n * k * m)
            .map(|i| Complex::new((i % 7) as f32 * 0.25 + 0.1, (i % 3) as f32 * -0.5))
            .collect();
        TraceFile::new(m, n, k, frames, gains).unwrap()
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = sample_trace(4, 3, 2, 5);
        write_trace(&path, &t).unwrap();
        let (back, dists) = load_trace(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(dists.len(), 2);
        assert_eq!(dists[0].len(), 5);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let mut bytes = sample_trace(4, 2, 1, 3).to_bytes();
        bytes.truncate(bytes.len() - 5);
        match TraceFile::from_bytes(&bytes) {
            Err(Error::Trace { offset, reason }) => {
                assert_eq!(offset as usize, bytes.len());
                assert!(reason.contains("expected 192"), "{reason}");
                assert!(reason.contains("found 187"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let good = sample_trace(4, 2, 1, 1).to_bytes();
        let mut bad = good.clone();
        bad[3] = b'x';
        assert!(matches!(TraceFile::from_bytes(&bad), Err(Error::Trace { offset: 0, .. })));
        assert!(matches!(TraceFile::from_bytes(&good[..20]), Err(Error::Trace { offset: 20, .. })));
        let mut bad = good.clone();
        bad[24..28].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(TraceFile::from_bytes(&bad), Err(Error::Trace { offset: 24, .. })));
        let mut bad = good.clone();
        bad[32..36].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(TraceFile::from_bytes(&bad), Err(Error::Trace { offset: 32, .. })));
        let mut bad = good;
        bad[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(TraceFile::from_bytes(&bad), Err(Error::Trace { offset: 44, .. })));
    }

    #[test]
    fn unit_gains_give_unit_kappa() {
        let t = TraceFile::new(4, 6, 1, 10, vec![Complex::new(1.0, 0.0); 4 * 6 * 10]).unwrap();
        let d = &t.gain_distributions(None).unwrap()[0];
        assert!(d.samples().iter().all(|&s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn re_estimation_shrinks_gain_toward_estimate_variance() {
        let t = TraceFile::new(64, 1, 1, 400, vec![Complex::new(1.0, 0.0); 64 * 400]).unwrap();
        // |s h + sqrt(s) n|^2 / (1+s)^2 averages (s^2 + s) / (1+s)^2 = s / (1+s).
        let est = TraceEstimation { training_snr: 4.0, seed: 5 };
        let d = &t.gain_distributions(Some(est)).unwrap()[0];
        assert!((d.mean() - 0.8).abs() < 0.01, "{}", d.mean());
    }
}
