//! Binary dataset file (`FGD1`, little-endian).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, FactorKind, FailureFactor, FrameLayout, Label, Trajectory, Variant};

const MAGIC: &[u8; 4] = b"FGD1";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Data(format!("truncated dataset: {e}")))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

/// Sanity cap on counts read from disk before allocating.
const MAX_COUNT: u64 = 1 << 32;

fn get_count(r: &mut impl Read, what: &str) -> Result<usize> {
    let n = get_u64(r)?;
    if n > MAX_COUNT {
        return Err(Error::Data(format!("implausible {what} count {n}")));
    }
    Ok(n as usize)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u64(&mut w, ds.trajectories.len() as u64)?;
    put_u64(&mut w, ds.n_train as u64)?;
    w.write_all(&ds.model_hash)?;
    w.write_all(&ds.config_hash)?;
    let layout = ds.trajectories.first().map(|t| t.layout).unwrap_or(FrameLayout { n_links: 0, n_joints: 0 });
    put_u32(&mut w, layout.n_links as u32)?;
    put_u32(&mut w, layout.n_joints as u32)?;
    for t in &ds.trajectories {
        if t.layout != layout {
            return Err(Error::Data("trajectories with mixed frame layouts".into()));
        }
        put_u64(&mut w, t.seed)?;
        w.write_all(&[t.variant.code()])?;
        put_u64(&mut w, t.len() as u64)?;
        put_u64(&mut w, t.impact as u64)?;
        put_u32(&mut w, t.factors.len() as u32)?;
        for f in &t.factors {
            w.write_all(&[f.kind.code()])?;
            put_f64(&mut w, f.onset_s)?;
            put_f64(&mut w, f.magnitude)?;
            for a in f.aux {
                put_f64(&mut w, a)?;
            }
        }
        for v in &t.frames {
            w.write_all(&v.to_le_bytes())?;
        }
        let labels: Vec<u8> = t.labels.iter().map(|l| *l as u8).collect();
        w.write_all(&labels)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    if &get::<4>(&mut r)? != MAGIC {
        return Err(Error::Data(format!("{}: not a dataset file", path.display())));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported dataset version {version}")));
    }
    let n = get_count(&mut r, "trajectory")?;
    let n_train = get_count(&mut r, "train")?;
    if n_train > n {
        return Err(Error::Data("train split larger than dataset".into()));
    }
    let model_hash = get::<32>(&mut r)?;
    let config_hash = get::<32>(&mut r)?;
    let layout = FrameLayout {
        n_links: get_u32(&mut r)? as usize,
        n_joints: get_u32(&mut r)? as usize,
    };
    let dim = layout.frame_dim();
    let mut trajectories = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let seed = get_u64(&mut r)?;
        let [code] = get::<1>(&mut r)?;
        let variant = Variant::from_code(code).ok_or_else(|| Error::Data(format!("trajectory {i}: bad variant {code}")))?;
        let len = get_count(&mut r, "frame")?;
        let impact = get_count(&mut r, "impact")?;
        if len == 0 || impact > len {
            return Err(Error::Data(format!("trajectory {i}: impact {impact} outside {len} frames")));
        }
        let nf = get_u32(&mut r)? as usize;
        let mut factors = Vec::with_capacity(nf.min(16));
        for _ in 0..nf {
            let [k] = get::<1>(&mut r)?;
            let kind = FactorKind::from_code(k).ok_or_else(|| Error::Data(format!("trajectory {i}: bad factor {k}")))?;
            factors.push(FailureFactor {
                kind,
                onset_s: get_f64(&mut r)?,
                magnitude: get_f64(&mut r)?,
                aux: [get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?],
            });
        }
        let mut raw = vec![0u8; len * dim * 4];
        r.read_exact(&mut raw).map_err(|e| Error::Data(format!("trajectory {i}: truncated frames: {e}")))?;
        let frames = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut lb = vec![0u8; len];
        r.read_exact(&mut lb).map_err(|e| Error::Data(format!("trajectory {i}: truncated labels: {e}")))?;
        let labels = lb
            .iter()
            .map(|b| Label::from_u8(*b).ok_or_else(|| Error::Data(format!("trajectory {i}: bad label {b}"))))
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(Trajectory {
            seed,
            variant,
            impact,
            factors,
            layout,
            frames,
            labels,
        });
    }
    Ok(Dataset {
        trajectories,
        n_train,
        model_hash,
        config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let layout = FrameLayout { n_links: 2, n_joints: 1 };
        let len = 20;
        let traj = |seed: u64| Trajectory {
            seed,
            variant: Variant::GaitB,
            impact: 15,
            factors: vec![FailureFactor {
                kind: FactorKind::FootTrip,
                onset_s: 2.5,
                magnitude: 0.1,
                aux: [0.1, 0.4, 10.0],
            }],
            layout,
            frames: (0..len * layout.frame_dim()).map(|v| v as f32 * 0.5).collect(),
            labels: super::super::segment(15, len, 5).unwrap().labels,
        };
        Dataset {
            trajectories: vec![traj(1), traj(2), traj(3)],
            n_train: 2,
            model_hash: [7; 32],
            config_hash: [9; 32],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.fgd");
        let ds = tiny();
        write_dataset(&ds, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"FGD1");
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Data(_))));
    }
}
