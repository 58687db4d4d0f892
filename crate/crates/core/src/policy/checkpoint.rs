//! Versioned binary checkpoint of both networks and their optimizers.
//!
//! Little-endian throughout, reals as `f64`:
//!
//! ```text
//! magic "CFSCKPT\0", version u32, l u32, p u32, episodes_done u64
//! network × 2 (actor, critic):
//!     n_sizes u32, sizes n_sizes × u32, n_params u64, params × f64
//! adam × 2 (actor, critic):
//!     lr f64, beta1 f64, beta2 f64, eps f64, t u64,
//!     n u64, m n × f64, v n × f64
//! trailer "CFSCEND\0"
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::adam::Adam;
use super::mlp::Mlp;
use super::{Actor, Critic};
use crate::env::state_dim;
use crate::error::{CfsError, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CFSCKPT\0";
const TRAILER: &[u8; 8] = b"CFSCEND\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub l: usize,
    pub p: usize,
    pub episodes_done: usize,
    pub actor: Actor<T>,
    pub critic: Critic<T>,
    pub actor_opt: Adam<T>,
    pub critic_opt: Adam<T>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails with a shape error unless the networks fit a context of
    /// length `l` and `p` factors.
    pub fn check_dims(&self, l: usize, p: usize) -> Result<()> {
        if self.l != l || self.p != p {
            return Err(CfsError::Shape(format!(
                "checkpoint was trained for l = {}, p = {}; data has l = {l}, p = {p}",
                self.l, self.p
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| CfsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CfsError::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        w.write_u32::<LittleEndian>(self.l as u32).unwrap();
        w.write_u32::<LittleEndian>(self.p as u32).unwrap();
        w.write_u64::<LittleEndian>(self.episodes_done as u64).unwrap();
        for net in [self.actor.network(), self.critic.network()] {
            w.write_u32::<LittleEndian>(net.sizes().len() as u32).unwrap();
            for &s in net.sizes() {
                w.write_u32::<LittleEndian>(s as u32).unwrap();
            }
            put_reals(&mut w, net.params());
        }
        for opt in [&self.actor_opt, &self.critic_opt] {
            for v in [opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon] {
                w.write_f64::<LittleEndian>(v.as_f64()).unwrap();
            }
            w.write_u64::<LittleEndian>(opt.steps()).unwrap();
            put_reals(&mut w, opt.first_moment());
            for &v in opt.second_moment() {
                w.write_f64::<LittleEndian>(v.as_f64()).unwrap();
            }
        }
        w.extend_from_slice(TRAILER);
        w
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CfsError::Checkpoint(m.to_string());
        let eof = |_| bad("file truncated");
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != CHECKPOINT_VERSION {
            return Err(CfsError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let l = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let p = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let episodes_done = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let n_sizes = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if !(2..=64).contains(&n_sizes) {
                return Err(bad("implausible layer count"));
            }
            let sizes = (0..n_sizes)
                .map(|_| r.read_u32::<LittleEndian>().map(|s| s as usize).map_err(eof))
                .collect::<Result<Vec<_>>>()?;
            let params = get_reals::<T>(&mut r)?;
            let net = Mlp::from_params(&sizes, params).map_err(|e| CfsError::Checkpoint(e.to_string()))?;
            if net.input_dim() != state_dim(l, p) {
                return Err(CfsError::Checkpoint(format!(
                    "network input {} does not match l = {l}, p = {p}",
                    net.input_dim()
                )));
            }
            nets.push(net);
        }
        let critic_net = nets.pop().expect("two networks");
        let actor_net = nets.pop().expect("two networks");
        let mut opts = Vec::with_capacity(2);
        for net in [&actor_net, &critic_net] {
            let mut h = [T::zero(); 4];
            for v in &mut h {
                *v = T::lit(r.read_f64::<LittleEndian>().map_err(eof)?);
            }
            let t = r.read_u64::<LittleEndian>().map_err(eof)?;
            let m = get_reals::<T>(&mut r)?;
            let v = (0..m.len())
                .map(|_| r.read_f64::<LittleEndian>().map(T::lit).map_err(eof))
                .collect::<Result<Vec<_>>>()?;
            if m.len() != net.num_params() {
                return Err(bad("optimizer state does not match network size"));
            }
            opts.push(Adam::from_state(h[0], h[1], h[2], h[3], t, m, v)?);
        }
        let mut trailer = [0u8; 8];
        r.read_exact(&mut trailer).map_err(eof)?;
        if &trailer != TRAILER || r.position() as usize != bytes.len() {
            return Err(bad("bad trailer"));
        }
        let critic_opt = opts.pop().expect("two optimizers");
        let actor_opt = opts.pop().expect("two optimizers");
        Ok(Checkpoint {
            l,
            p,
            episodes_done,
            actor: Actor::from_network(actor_net).map_err(|e| CfsError::Checkpoint(e.to_string()))?,
            critic: Critic::from_network(critic_net).map_err(|e| CfsError::Checkpoint(e.to_string()))?,
            actor_opt,
            critic_opt,
        })
    }
}

fn put_reals<T: Scalar>(w: &mut Vec<u8>, values: &[T]) {
    w.write_u64::<LittleEndian>(values.len() as u64).unwrap();
    for &v in values {
        w.write_f64::<LittleEndian>(v.as_f64()).unwrap();
    }
}

fn get_reals<T: Scalar>(r: &mut Cursor<&[u8]>) -> Result<Vec<T>> {
    let n = r
        .read_u64::<LittleEndian>()
        .map_err(|_| CfsError::Checkpoint("file truncated".into()))? as usize;
    let remaining = r.get_ref().len().saturating_sub(r.position() as usize);
    if n.saturating_mul(8) > remaining {
        return Err(CfsError::Checkpoint("file truncated".into()));
    }
    (0..n)
        .map(|_| {
            r.read_f64::<LittleEndian>()
                .map(T::lit)
                .map_err(|_| CfsError::Checkpoint("file truncated".into()))
        })
        .collect()
}
