//! Versioned binary checkpoint container: topology hash, widths, flags,
//! normalization statistics, and all parameter arrays as little-endian f64
//! in a fixed field order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::mobius::{init_network, MobiusNetwork};
use crate::train::NormalizationStats;

const MAGIC: &[u8; 4] = b"MGCN";
const VERSION: u32 = 1;

const FLAG_CENTER_OF_MASS: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.0.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
}

pub fn save_checkpoint(
    path: &Path,
    net: &MobiusNetwork,
    stats: &NormalizationStats,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer(std::io::BufWriter::new(file));
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u64(net.topology.hash())?;
    let mut flags = 0u32;
    if net.center_of_mass {
        flags |= FLAG_CENTER_OF_MASS;
    }
    w.u32(flags)?;
    w.u32(net.num_joints() as u32)?;
    // widths: in-channels of each block plus the final out-channels
    w.u32(net.blocks.len() as u32)?;
    for b in &net.blocks {
        w.u32(b.in_channels as u32)?;
    }
    w.u32(net.blocks.last().unwrap().out_channels as u32)?;
    // normalization stats
    w.f64s(&stats.input_offset)?;
    w.f64s(&stats.input_scale)?;
    w.f64s(&[stats.output_scale])?;
    w.u32(stats.canonical_bones.len() as u32)?;
    w.f64s(&stats.canonical_bones)?;
    // parameters in canonical order
    for arr in net.param_arrays() {
        w.f64s(arr)?;
    }
    w.0.flush()?;
    Ok(())
}

/// Reads only the topology hash from a checkpoint header.
pub fn peek_topology_hash(path: &Path) -> Result<u64> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader(std::io::BufReader::new(file));
    read_header(&mut r)
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<u64> {
    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.u64()
}

/// Loads a checkpoint against the given topology; rejects hash mismatches.
pub fn load_checkpoint(
    path: &Path,
    topo: &SkeletonTopology,
) -> Result<(MobiusNetwork, NormalizationStats)> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader(std::io::BufReader::new(file));
    let hash = read_header(&mut r)?;
    if hash != topo.hash() {
        return Err(Error::TopologyMismatch {
            checkpoint: hash,
            active: topo.hash(),
        });
    }
    let flags = r.u32()?;
    let n_joints = r.u32()? as usize;
    if n_joints != topo.num_joints() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n_joints} joints, topology has {}",
            topo.num_joints()
        )));
    }
    let num_blocks = r.u32()? as usize;
    if num_blocks == 0 || num_blocks > 1024 {
        return Err(Error::Checkpoint(format!("implausible block count {num_blocks}")));
    }
    let mut widths = Vec::with_capacity(num_blocks + 1);
    for _ in 0..=num_blocks {
        widths.push(r.u32()? as usize);
    }
    let stats = NormalizationStats {
        input_offset: {
            let v = r.f64s(2)?;
            [v[0], v[1]]
        },
        input_scale: {
            let v = r.f64s(2)?;
            [v[0], v[1]]
        },
        output_scale: r.f64s(1)?[0],
        canonical_bones: {
            let n = r.u32()? as usize;
            if n != topo.edges.len() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has {n} bones, topology has {}",
                    topo.edges.len()
                )));
            }
            r.f64s(n)?
        },
    };
    let mut net = init_network(topo, &widths, 0)?;
    net.center_of_mass = flags & FLAG_CENTER_OF_MASS != 0;
    for arr in net.param_arrays_mut() {
        let vals = r.f64s(arr.len())?;
        arr.copy_from_slice(&vals);
    }
    // trailing bytes indicate corruption
    let mut extra = [0u8; 1];
    match r.0.read(&mut extra)? {
        0 => Ok((net, stats)),
        _ => Err(Error::Checkpoint("trailing bytes after parameters".into())),
    }
}
