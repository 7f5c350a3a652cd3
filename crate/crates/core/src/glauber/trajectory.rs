//! Binary trajectory dump.
//!
//! Layout (little-endian): a 16-byte header `"KISNTRAJ"`, `N: u32`,
//! `reserved: u32`, then one 13-byte record per measured attempt:
//! `attempt: u64`, `flipped spin: i32` (`-1` when rejected),
//! `resulting spin value: i8` (`0` when rejected).

use std::io::{self, Read, Write};

use super::Step;

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"KISNTRAJ";
const RECORD_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryRecord {
    pub attempt: u64,
    pub flipped: Option<u32>,
    pub value: i8,
}

pub struct TrajectoryWriter<W: Write> {
    inner: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut inner: W, n_spins: u32) -> io::Result<Self> {
        inner.write_all(TRAJECTORY_MAGIC)?;
        inner.write_all(&n_spins.to_le_bytes())?;
        inner.write_all(&0u32.to_le_bytes())?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn record(&mut self, step: &Step<'_>) -> io::Result<()> {
        let mut buf = [0u8; RECORD_LEN];
        buf[..8].copy_from_slice(&step.attempt.to_le_bytes());
        let (index, value) = if step.flipped { (step.spin as i32, step.state[step.spin]) } else { (-1, 0) };
        buf[8..12].copy_from_slice(&index.to_le_bytes());
        buf[12] = value as u8;
        self.inner.write_all(&buf)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads a whole dump; returns `(N, records)`.
pub fn read_trajectory<R: Read>(mut r: R) -> io::Result<(u32, Vec<TrajectoryRecord>)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != TRAJECTORY_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad trajectory magic"));
    }
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % RECORD_LEN != 0 {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated trajectory record"));
    }
    let records = body
        .chunks_exact(RECORD_LEN)
        .map(|c| {
            let attempt = u64::from_le_bytes(c[..8].try_into().unwrap());
            let index = i32::from_le_bytes(c[8..12].try_into().unwrap());
            TrajectoryRecord { attempt, flipped: u32::try_from(index).ok(), value: c[12] as i8 }
        })
        .collect();
    Ok((n, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glauber::{run, SimulationSchedule};
    use crate::sk_model::{sample_couplings_seeded, ModelParams};

    #[test]
    fn dump_replays_to_final_state() {
        let params = ModelParams::uniform(6, 1.0, 1.0, 1.0, 0.0, 1).unwrap();
        let j = sample_couplings_seeded(&params);
        let schedule = SimulationSchedule::new(0, 5_000, 2);
        let mut first_state = None;
        let mut writer = TrajectoryWriter::new(Vec::new(), 6).unwrap();
        let end = run(&params, &j, &schedule, |s| {
            if first_state.is_none() {
                let mut pre = s.state.to_vec();
                if s.flipped {
                    pre[s.spin] = -pre[s.spin];
                }
                first_state = Some(pre);
            }
            writer.record(s).unwrap();
        })
        .unwrap();
        let bytes = writer.finish().unwrap();
        assert_eq!(bytes.len(), 16 + 13 * 5_000);
        assert_eq!(&bytes[..8], b"KISNTRAJ");

        let (n, records) = read_trajectory(&bytes[..]).unwrap();
        assert_eq!(n, 6);
        let mut state = first_state.unwrap();
        for (k, rec) in records.iter().enumerate() {
            assert_eq!(rec.attempt, k as u64);
            if let Some(i) = rec.flipped {
                assert_eq!(state[i as usize], -rec.value);
                state[i as usize] = rec.value;
            } else {
                assert_eq!(rec.value, 0);
            }
        }
        assert_eq!(state, end.states());
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = [0u8; 16];
        assert!(read_trajectory(&bytes[..]).is_err());
    }
}
