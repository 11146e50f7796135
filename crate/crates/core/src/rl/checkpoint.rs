//! Versioned binary checkpoints. All integers are big-endian and parameters
//! are stored as raw f64 bit patterns, so a reload is bit-exact.
//!
//! ```text
//! magic "BBRPPO" | version u16 | seed u64 | iteration u64
//! input u32 | n_hidden u32 | hidden u32 * n | k_rt u32 | k_bw u32
//! hyper_len u32 | hyper JSON | n_params u64 | params f64 * n
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Layout, PolicyParams, PpoHyper, RlError};

const MAGIC: &[u8; 6] = b"BBRPPO";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub hyper: PpoHyper,
    pub seed: u64,
    pub iteration: u64,
}

fn err(m: impl Into<String>) -> RlError {
    RlError::Checkpoint(m.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = self.params.layout();
        let hyper = serde_json::to_vec(&self.hyper).expect("hyperparameters serialize");
        let mut b = Vec::with_capacity(64 + hyper.len() + 8 * self.params.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_be_bytes());
        b.extend_from_slice(&self.seed.to_be_bytes());
        b.extend_from_slice(&self.iteration.to_be_bytes());
        b.extend_from_slice(&(layout.input as u32).to_be_bytes());
        b.extend_from_slice(&(layout.hidden.len() as u32).to_be_bytes());
        for &h in &layout.hidden {
            b.extend_from_slice(&(h as u32).to_be_bytes());
        }
        b.extend_from_slice(&(layout.k_rt as u32).to_be_bytes());
        b.extend_from_slice(&(layout.k_bw as u32).to_be_bytes());
        b.extend_from_slice(&(hyper.len() as u32).to_be_bytes());
        b.extend_from_slice(&hyper);
        b.extend_from_slice(&(self.params.len() as u64).to_be_bytes());
        for v in self.params.as_slice() {
            b.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RlError> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| err("truncated header"))?;
        if &magic != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = u16::from_be_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let seed = u64::from_be_bytes(take(&mut r)?);
        let iteration = u64::from_be_bytes(take(&mut r)?);
        let input = u32::from_be_bytes(take(&mut r)?) as usize;
        let n_hidden = u32::from_be_bytes(take(&mut r)?) as usize;
        if n_hidden > 64 {
            return Err(err(format!("implausible layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden)
            .map(|_| take(&mut r).map(|b| u32::from_be_bytes(b) as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let k_rt = u32::from_be_bytes(take(&mut r)?) as usize;
        let k_bw = u32::from_be_bytes(take(&mut r)?) as usize;
        let hyper_len = u32::from_be_bytes(take(&mut r)?) as usize;
        if hyper_len > r.len() {
            return Err(err("truncated hyperparameters"));
        }
        let hyper: PpoHyper = serde_json::from_slice(&r[..hyper_len]).map_err(|e| err(e.to_string()))?;
        r = &r[hyper_len..];
        let n = u64::from_be_bytes(take(&mut r)?) as usize;
        if r.len() != n.saturating_mul(8) {
            return Err(err(format!("expected {n} parameters, found {} bytes", r.len())));
        }
        let data = r
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_be_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let params = PolicyParams::from_vec(Layout::new(input, &hidden, k_rt, k_bw), data)?;
        Ok(Self {
            params,
            hyper,
            seed,
            iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], RlError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| err("truncated checkpoint"))?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Checkpoint {
            params: PolicyParams::init(Layout::new(72, &[64, 64], 5, 5), &mut rng).unwrap(),
            hyper: PpoHyper::default(),
            seed: 9,
            iteration: 17,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let s: Vec<f64> = (0..72).map(|i| i as f64 / 72.0).collect();
        let a = c.params.forward(&s).unwrap();
        let b = back.params.forward(&s).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[7] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
