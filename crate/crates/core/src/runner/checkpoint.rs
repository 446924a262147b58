//! Versioned binary checkpoints: config snapshot, flat parameters, sampler
//! and RNG states. Floats are stored as raw little-endian bits so restored
//! trajectories continue bitwise identically.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::RunnerError;
use crate::runner::config::RunConfig;
use crate::sampler::{GeometryWalker, Walker, WalkerState};
use crate::wfmodel::SignedLogAmplitude;

const MAGIC: &[u8; 8] = b"VMCCKPT\0";
const VERSION: u32 = 1;

/// Everything needed to resume a run exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub theta: Array1<f64>,
    pub step: u64,
    pub pretrain_done: bool,
    pub geometry_walkers: Vec<GeometryWalker>,
    pub samplers: Vec<WalkerState>,
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.out.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u128(&mut self, v: u128) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn bytes(&mut self, v: &[u8]) -> std::io::Result<()> {
        self.u64(v.len() as u64)?;
        self.out.write_all(v)
    }
    fn rng(&mut self, rng: &ChaCha8Rng) -> std::io::Result<()> {
        self.out.write_all(&rng.get_seed())?;
        self.u64(rng.get_stream())?;
        self.u128(rng.get_word_pos())
    }
}

struct Reader<R: Read> {
    input: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, RunnerError> {
        let mut b = [0u8; 1];
        self.input.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, RunnerError> {
        let mut b = [0u8; 4];
        self.input.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, RunnerError> {
        let mut b = [0u8; 8];
        self.input.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u128(&mut self) -> Result<u128, RunnerError> {
        let mut b = [0u8; 16];
        self.input.read_exact(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, RunnerError> {
        let mut b = [0u8; 8];
        self.input.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, RunnerError> {
        let len = self.u64()? as usize;
        if len > usize::MAX / 2 {
            return Err(RunnerError::Checkpoint("corrupt length field".into()));
        }
        let mut buf = vec![0u8; len];
        self.input.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn rng(&mut self) -> Result<ChaCha8Rng, RunnerError> {
        let mut seed = [0u8; 32];
        self.input.read_exact(&mut seed)?;
        let stream = self.u64()?;
        let word_pos = self.u128()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, out: W) -> Result<(), RunnerError> {
        let mut w = Writer { out };
        w.out.write_all(MAGIC)?;
        w.u32(VERSION)?;
        let config_json =
            serde_json::to_vec(&self.config).map_err(|e| RunnerError::Checkpoint(e.to_string()))?;
        w.bytes(&config_json)?;
        w.u64(self.theta.len() as u64)?;
        for v in self.theta.iter() {
            w.f64(*v)?;
        }
        w.u64(self.step)?;
        w.u8(self.pretrain_done as u8)?;
        w.u64(self.geometry_walkers.len() as u64)?;
        for gw in &self.geometry_walkers {
            w.f64(gw.lo)?;
            w.f64(gw.hi)?;
            w.f64(gw.current)?;
            w.rng(&gw.rng)?;
        }
        w.u64(self.samplers.len() as u64)?;
        for state in &self.samplers {
            w.f64(state.step_size)?;
            w.u64(state.walkers.len() as u64)?;
            for walker in &state.walkers {
                let n = walker.positions.nrows();
                w.u64(n as u64)?;
                for e in 0..n {
                    for c in 0..3 {
                        w.f64(walker.positions[(e, c)])?;
                    }
                }
                w.u8(walker.cached.sign as u8)?;
                w.f64(walker.cached.log_abs)?;
                w.rng(&walker.rng)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Checkpoint, RunnerError> {
        let mut r = Reader { input };
        let mut magic = [0u8; 8];
        r.input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RunnerError::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(RunnerError::Checkpoint(format!(
                "unsupported checkpoint format version {version} (expected {VERSION})"
            )));
        }
        let config_json = r.bytes()?;
        let config: RunConfig = serde_json::from_slice(&config_json)
            .map_err(|e| RunnerError::Checkpoint(format!("embedded config: {e}")))?;
        let theta_len = r.u64()? as usize;
        let mut theta = Vec::with_capacity(theta_len);
        for _ in 0..theta_len {
            theta.push(r.f64()?);
        }
        let step = r.u64()?;
        let pretrain_done = r.u8()? != 0;
        let n_geom = r.u64()? as usize;
        let mut geometry_walkers = Vec::with_capacity(n_geom);
        for _ in 0..n_geom {
            let lo = r.f64()?;
            let hi = r.f64()?;
            let current = r.f64()?;
            let rng = r.rng()?;
            geometry_walkers.push(GeometryWalker {
                lo,
                hi,
                current,
                rng,
            });
        }
        let n_states = r.u64()? as usize;
        let mut samplers = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let step_size = r.f64()?;
            let n_walkers = r.u64()? as usize;
            let mut walkers = Vec::with_capacity(n_walkers);
            for _ in 0..n_walkers {
                let n = r.u64()? as usize;
                let mut positions = Array2::zeros((n, 3));
                for e in 0..n {
                    for c in 0..3 {
                        positions[(e, c)] = r.f64()?;
                    }
                }
                let sign = r.u8()? as i8;
                let log_abs = r.f64()?;
                let rng = r.rng()?;
                walkers.push(Walker {
                    positions,
                    cached: SignedLogAmplitude { sign, log_abs },
                    rng,
                });
            }
            let mut state = WalkerState {
                walkers,
                step_size,
                accepted: 0,
                proposed: 0,
            };
            state.reset_acceptance();
            samplers.push(state);
        }
        Ok(Checkpoint {
            config,
            theta: Array1::from_vec(theta),
            step,
            pretrain_done,
            geometry_walkers,
            samplers,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RunnerError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint, RunnerError> {
        let file = std::fs::File::open(path)?;
        Checkpoint::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MolecularConfiguration;
    use crate::stubs::ExponentialStub;

    #[test]
    fn roundtrip_preserves_everything_bitwise() {
        let config = RunConfig::hydrogen_preset();
        let geom = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap();
        let stub = ExponentialStub::hydrogen_1s();
        let mut state = WalkerState::init(&geom, &stub, 4, 0.3, 99);
        state.run_chain(&stub, 10);
        let ckpt = Checkpoint {
            config: config.clone(),
            theta: Array1::from_vec(vec![0.25, -1.5, f64::MIN_POSITIVE, 3.25e17]),
            step: 41,
            pretrain_done: true,
            geometry_walkers: vec![GeometryWalker::new(1.0, 2.0, 7, 3)],
            samplers: vec![state.clone()],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let loaded = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.theta, ckpt.theta);
        assert_eq!(loaded.step, 41);
        assert!(loaded.pretrain_done);
        assert_eq!(loaded.geometry_walkers[0].current, 1.5);
        // Walker positions, caches and RNG states identical: continuing the
        // chain produces the same trajectory.
        let mut resumed = loaded.samplers[0].clone();
        let mut original = state;
        resumed.run_chain(&stub, 20);
        original.run_chain(&stub, 20);
        assert_eq!(resumed.batch(), original.batch());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let bad = b"NOTAFILE".to_vec();
        assert!(matches!(
            Checkpoint::read_from(bad.as_slice()),
            Err(RunnerError::Checkpoint(_))
        ));

        let config = RunConfig::default();
        let ckpt = Checkpoint {
            config,
            theta: Array1::zeros(1),
            step: 0,
            pretrain_done: false,
            geometry_walkers: vec![],
            samplers: vec![],
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        buf[8] = 99; // corrupt the version field
        let err = Checkpoint::read_from(buf.as_slice()).unwrap_err();
        match err {
            RunnerError::Checkpoint(msg) => assert!(msg.contains("version")),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
