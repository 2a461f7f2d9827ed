//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SWRMCKPT"
//! 8       4     u32 format version (1)
//! 12      4     u32 observation length
//! 16      4     u32 drone count N
//! 20      4     u32 lookahead window W
//! 24      4     u32 hidden width
//! 28      4     u32 number of arrays
//! 32      ...   arrays, each:
//!                 u16 name length, UTF-8 name,
//!                 u32 rank, rank × u32 dims,
//!                 prod(dims) × f64 values (row-major)
//! ...     8     f64 value-normalization mean μ
//! ...     8     f64 value-normalization variance σ² (before flooring)
//! ...     8     u64 value-normalization sample count
//! ```
//!
//! Arrays appear in the order `actor.l{0,1,2}.{weight,bias}`,
//! `critic.l{0,1,2}.{weight,bias}`, `log_std`. Weight matrices have shape
//! `[in, out]`. The file must end right after the count.

use std::path::Path;

use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::policy::{Mlp, PolicyParams};
use crate::trainer::ValueNormStats;

pub const MAGIC: &[u8; 8] = b"SWRMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub n_drones: usize,
    pub window: usize,
    pub params: PolicyParams,
    pub value_norm: ValueNormStats,
}

/// Named array shapes in file order.
pub fn array_shapes(params: &PolicyParams) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (prefix, net) in [("actor", &params.actor), ("critic", &params.critic)] {
        for l in 0..net.n_layers() {
            let (i, o) = (net.sizes()[l], net.sizes()[l + 1]);
            out.push((format!("{prefix}.l{l}.weight"), vec![i, o]));
            out.push((format!("{prefix}.l{l}.bias"), vec![o]));
        }
    }
    out.push(("log_std".into(), vec![params.log_std().len()]));
    out
}

fn array_ranges(params: &PolicyParams) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let push_net = |net: &Mlp, out: &mut Vec<std::ops::Range<usize>>| {
        for l in 0..net.n_layers() {
            let (i, o) = (net.sizes()[l], net.sizes()[l + 1]);
            let (wo, bo) = net.layer_offsets(l);
            out.push(wo..wo + i * o);
            out.push(bo..bo + o);
        }
    };
    push_net(&params.actor, &mut out);
    push_net(&params.critic, &mut out);
    let lo = params.log_std_offset();
    out.push(lo..params.theta.len());
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(64 + 8 * p.theta.len());
        buf.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            p.obs_len() as u32,
            self.n_drones as u32,
            self.window as u32,
            p.hidden() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let shapes = array_shapes(p);
        let ranges = array_ranges(p);
        buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
        for ((name, dims), range) in shapes.iter().zip(ranges) {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for x in &p.theta[range] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.value_norm.mean().to_le_bytes());
        buf.extend_from_slice(&self.value_norm.variance().to_le_bytes());
        buf.extend_from_slice(&self.value_norm.count().to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(r.fail_at(0, "bad magic"));
        }
        let version_at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail_at(version_at, format!("unsupported version {version}")));
        }
        let obs_at = r.pos;
        let obs_len = r.u32()? as usize;
        let n_drones = r.u32()? as usize;
        let window = r.u32()? as usize;
        let hidden_at = r.pos;
        let hidden = r.u32()? as usize;
        if n_drones == 0 || window == 0 {
            return Err(r.fail_at(obs_at + 4, "drone count and window must be positive"));
        }
        let expected_len = ObsLayout { window, n_drones }.len();
        if obs_len != expected_len {
            return Err(r.fail_at(
                obs_at,
                format!("observation length {obs_len} does not match N={n_drones}, W={window} (expected {expected_len})"),
            ));
        }
        if hidden == 0 || hidden > 1 << 16 {
            return Err(r.fail_at(hidden_at, format!("implausible hidden width {hidden}")));
        }

        let mut params = PolicyParams::zeros(obs_len, hidden);
        let shapes = array_shapes(&params);
        let ranges = array_ranges(&params);
        let count_at = r.pos;
        let n_arrays = r.u32()? as usize;
        if n_arrays != shapes.len() {
            return Err(r.fail_at(
                count_at,
                format!("expected {} arrays, found {n_arrays}", shapes.len()),
            ));
        }
        for ((name, dims), range) in shapes.iter().zip(ranges) {
            let at = r.pos;
            let len = r.u16()? as usize;
            let got_name = r.take(len)?;
            if got_name != name.as_bytes() {
                return Err(r.fail_at(
                    at,
                    format!("expected array `{name}`, found `{}`", String::from_utf8_lossy(got_name)),
                ));
            }
            let rank_at = r.pos;
            let rank = r.u32()? as usize;
            if rank != dims.len() {
                return Err(r.fail_at(rank_at, format!("array `{name}` has rank {rank}, expected {}", dims.len())));
            }
            for d in dims {
                let dim_at = r.pos;
                let got = r.u32()? as usize;
                if got != *d {
                    return Err(r.fail_at(dim_at, format!("array `{name}` dimension {got}, expected {d}")));
                }
            }
            for slot in &mut params.theta[range] {
                let at = r.pos;
                let x = r.f64()?;
                if !x.is_finite() {
                    return Err(r.fail_at(at, format!("non-finite value in `{name}`")));
                }
                *slot = x;
            }
        }
        let mean = r.f64()?;
        let var = r.f64()?;
        let count = r.u64()?;
        if !mean.is_finite() || !var.is_finite() || var < 0.0 {
            return Err(r.fail_at(r.pos - 24, "invalid value-normalization statistics"));
        }
        if r.pos != bytes.len() {
            return Err(r.fail_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            n_drones,
            window,
            params,
            value_norm: ValueNormStats::from_variance(mean, var, count),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable description: version, shapes, N, W and value statistics.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version: {VERSION}\n"));
        s.push_str(&format!("obs_len: {}\n", self.params.obs_len()));
        s.push_str(&format!("n_drones: {}\n", self.n_drones));
        s.push_str(&format!("window: {}\n", self.window));
        s.push_str(&format!("hidden: {}\n", self.params.hidden()));
        for (name, dims) in array_shapes(&self.params) {
            let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{name}: {}\n", dims.join("x")));
        }
        s.push_str(&format!("log_std: {:?}\n", self.params.log_std()));
        s.push_str(&format!(
            "value_norm: mean={} sigma={} count={}\n",
            self.value_norm.mean(),
            self.value_norm.sigma(),
            self.value_norm.count()
        ));
        s
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail_at(self.pos, format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
