//! Flat binary serialization for trajectory sets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DGTJ" | u16 version | u8 realm | u32 variant | u32 horizon
//! u32 h | u32 w | u32 c | u32 state_dim | u32 action_dim | u32 n_traj
//! per trajectory:
//!   horizon   x obs   (h*w*c f32, row-major)
//!   horizon+1 x state (state_dim f64)
//!   horizon   x action (action_dim f64)
//!   horizon   x r_true (f64)
//! ```
//!
//! Alongside the binary, a CSV manifest (`<path>.manifest.csv`) lists one
//! row per trajectory for quick inspection; the binary alone is
//! authoritative when loading.

use crate::env::{realm_info, Observation, RealmId, Trajectory, TrajectorySet};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"DGTJ";
const VERSION: u16 = 1;

fn bad_file(path: &Path, reason: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), reason)
}

fn realm_code(id: RealmId) -> u8 {
    match id {
        RealmId::Binaryworld => 0,
        RealmId::Pointreach => 1,
        RealmId::Cartbalance => 2,
    }
}

fn realm_from_code(code: u8, path: &Path) -> Result<RealmId> {
    match code {
        0 => Ok(RealmId::Binaryworld),
        1 => Ok(RealmId::Pointreach),
        2 => Ok(RealmId::Cartbalance),
        other => Err(bad_file(path, format!("unknown realm code {other}"))),
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.csv");
    path.with_file_name(name)
}

/// Serializes `set` to `path` and writes the CSV manifest next to it.
/// Ragged sets (a trajectory shorter than the realm horizon) are rejected.
pub fn save_trajectories(path: &Path, set: &TrajectorySet) -> Result<()> {
    let info = realm_info(set.realm);
    let state_dim = info.state_dim;
    let action_dim = set
        .trajectories
        .first()
        .and_then(|t| t.actions.first())
        .map_or(info.variants[set.variant.min(info.variants.len() - 1)].action_dim, Vec::len);
    for (i, t) in set.trajectories.iter().enumerate() {
        let ok = t.obs.len() == set.horizon
            && t.actions.len() == set.horizon
            && t.r_true.len() == set.horizon
            && t.states.len() == set.horizon + 1
            && t.states.iter().all(|s| s.len() == state_dim)
            && t.actions.iter().all(|a| a.len() == action_dim)
            && t.obs.iter().all(|o| o.shape == set.obs_shape);
        if !ok {
            return Err(Error::contract(format!(
                "trajectory {i} is ragged; expected {} steps of state dim {state_dim} and action dim {action_dim}",
                set.horizon
            )));
        }
    }

    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[realm_code(set.realm)]).map_err(io_err)?;
    for v in [
        set.variant as u32,
        set.horizon as u32,
        set.obs_shape.h as u32,
        set.obs_shape.w as u32,
        set.obs_shape.c as u32,
        state_dim as u32,
        action_dim as u32,
        set.trajectories.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    for t in &set.trajectories {
        for o in &t.obs {
            for &px in &o.data {
                w.write_all(&px.to_le_bytes()).map_err(io_err)?;
            }
        }
        for s in &t.states {
            for &v in s {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        for a in &t.actions {
            for &v in a {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        for &r in &t.r_true {
            w.write_all(&r.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;

    let mpath = manifest_path(path);
    let io_err = |e| Error::io(format!("writing {}", mpath.display()), e);
    let mut m = BufWriter::new(File::create(&mpath).map_err(io_err)?);
    writeln!(m, "traj_index,realm,variant,n_steps,total_return").map_err(io_err)?;
    for (i, t) in set.trajectories.iter().enumerate() {
        writeln!(
            m,
            "{i},{},{},{},{}",
            set.realm,
            set.variant,
            t.len(),
            t.total_return()
        )
        .map_err(io_err)?;
    }
    m.flush().map_err(io_err)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad_file(
                self.path,
                format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_trajectories(path: &Path) -> Result<TrajectorySet> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };

    if cur.take(4)? != MAGIC {
        return Err(bad_file(path, "bad magic, not a trajectory file".to_string()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(bad_file(path, format!("unsupported version {version}")));
    }
    let realm = realm_from_code(cur.take(1)?[0], path)?;
    let variant = cur.u32()? as usize;
    let horizon = cur.u32()? as usize;
    let (h, w, c) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    let state_dim = cur.u32()? as usize;
    let action_dim = cur.u32()? as usize;
    let n_traj = cur.u32()? as usize;

    let info = realm_info(realm);
    if info.obs_shape.len() != h * w * c || info.horizon != horizon {
        return Err(bad_file(
            path,
            format!(
                "header says {h}x{w}x{c} obs and horizon {horizon}, but realm {realm} uses {}x{}x{} and {}",
                info.obs_shape.h, info.obs_shape.w, info.obs_shape.c, info.horizon
            ),
        ));
    }
    if variant >= info.variants.len() {
        return Err(bad_file(
            path,
            format!("variant {variant} out of range for realm {realm}"),
        ));
    }

    let mut set = TrajectorySet::empty(realm, variant);
    for _ in 0..n_traj {
        let mut traj = Trajectory {
            states: Vec::with_capacity(horizon + 1),
            actions: Vec::with_capacity(horizon),
            obs: Vec::with_capacity(horizon),
            r_true: Vec::with_capacity(horizon),
        };
        for _ in 0..horizon {
            traj.obs.push(Observation {
                shape: info.obs_shape,
                data: cur.f32s(h * w * c)?,
            });
        }
        for _ in 0..=horizon {
            traj.states.push(cur.f64s(state_dim)?);
        }
        for _ in 0..horizon {
            traj.actions.push(cur.f64s(action_dim)?);
        }
        traj.r_true = cur.f64s(horizon)?;
        set.trajectories.push(traj);
    }
    if cur.pos != buf.len() {
        return Err(bad_file(
            path,
            format!("{} trailing bytes after {n_traj} trajectories", buf.len() - cur.pos),
        ));
    }
    Ok(set)
}
