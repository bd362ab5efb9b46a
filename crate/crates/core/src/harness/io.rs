//! File formats: binary echo sets, cost-map rasters and CSV tables.
//!
//! Echo set layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `DMEC` |
//! | 4     | format version, `u32` (1) |
//! | 4 × 3 | `M_r`, `L`, `N` as `u32` |
//! | 8     | noise variance `σ²`, `f64` watts |
//! | 8     | carrier `f`, `f64` hertz |
//! | 16 × M_r·L·N | samples ordered `[r][l][n]`, each `re` then `im` as `f64` |

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex;

use super::sweep::SweepRow;
use crate::error::{Error, Result};
use crate::estimator::{CostMap, EchoSet};
use crate::fisher::CoverageMap;
use crate::geometry::Position2D;

const ECHO_MAGIC: &[u8; 4] = b"DMEC";
const ECHO_VERSION: u32 = 1;
const RASTER_MAGIC: &str = "DMCOSTMAP 1";

pub fn write_echoes(w: &mut impl Write, echoes: &EchoSet<f64>) -> Result<()> {
    let (m_r, l, n) = (echoes.num_receivers(), echoes.length(), echoes.num_elements());
    for row in &echoes.samples {
        if row.len() != l || row.iter().any(|y| y.len() != n) {
            return Err(Error::Format("ragged echo set".into()));
        }
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()));
    w.write_all(ECHO_MAGIC)?;
    w.write_all(&ECHO_VERSION.to_le_bytes())?;
    for v in [m_r, l, n] {
        w.write_all(&dim(v)?.to_le_bytes())?;
    }
    w.write_all(&echoes.noise_power.to_le_bytes())?;
    w.write_all(&echoes.carrier_hz.to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * m_r * l * n);
    for y in echoes.samples.iter().flatten() {
        for z in y.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_echoes(r: &mut impl Read) -> Result<EchoSet<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ECHO_MAGIC {
        return Err(Error::Format("not an echo set file".into()));
    }
    let mut u = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = read_u32(r)?;
    if version != ECHO_VERSION {
        return Err(Error::Format(format!("unsupported echo set version {version}")));
    }
    let m_r = read_u32(r)? as usize;
    let l = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let mut f = [0u8; 8];
    let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    let noise_power = read_f64(r)?;
    let carrier_hz = read_f64(r)?;
    let total = m_r
        .checked_mul(l)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_mul(16))
        .ok_or_else(|| Error::Format("echo set dimensions overflow".into()))?;
    let mut buf = Vec::new();
    r.take(total as u64).read_to_end(&mut buf)?;
    if buf.len() != total {
        return Err(Error::Format(format!("truncated echo set: {} of {total} sample bytes", buf.len())));
    }
    let value = |i: usize| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    let mut k = 0;
    let mut samples = Vec::with_capacity(m_r);
    for _ in 0..m_r {
        let mut row = Vec::with_capacity(l);
        for _ in 0..l {
            row.push(DVector::from_fn(n, |_, _| {
                let z = Complex::new(value(2 * k), value(2 * k + 1));
                k += 1;
                z
            }));
        }
        samples.push(row);
    }
    Ok(EchoSet {
        samples,
        noise_power,
        carrier_hz,
    })
}

pub fn save_echoes(path: &Path, echoes: &EchoSet<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_echoes(&mut w, echoes)?;
    w.flush()?;
    Ok(())
}

pub fn load_echoes(path: &Path) -> Result<EchoSet<f64>> {
    read_echoes(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Plain-text raster: a magic line, a header line
/// `origin_x origin_y spacing nx ny energy`, then `ny` rows of `nx`
/// cost values from the lowest `y` upwards.
pub fn write_cost_map(w: &mut impl Write, map: &CostMap<f64>) -> Result<()> {
    writeln!(w, "{RASTER_MAGIC}")?;
    writeln!(
        w,
        "{:e} {:e} {:e} {} {} {:e}",
        map.origin.x, map.origin.y, map.spacing, map.nx, map.ny, map.energy
    )?;
    for iy in 0..map.ny {
        let row: Vec<String> = (0..map.nx).map(|ix| format!("{:e}", map.value(ix, iy))).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Reads a raster written by [`write_cost_map`]; detections are not stored.
pub fn read_cost_map(r: &mut impl BufRead) -> Result<CostMap<f64>> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("truncated cost map".into()))?
            .map_err(Error::from)
    };
    if next()?.trim() != RASTER_MAGIC {
        return Err(Error::Format("not a cost map raster".into()));
    }
    let header = next()?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 6 {
        return Err(Error::Format("bad cost map header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
    let count = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad count `{s}`")));
    let (nx, ny) = (count(h[3])?, count(h[4])?);
    let mut values = Vec::with_capacity(nx * ny);
    for _ in 0..ny {
        let line = next()?;
        let row = line.split_whitespace().map(num).collect::<Result<Vec<_>>>()?;
        if row.len() != nx {
            return Err(Error::Format("cost map row length mismatch".into()));
        }
        values.extend(row);
    }
    Ok(CostMap {
        origin: Position2D::new(num(h[0])?, num(h[1])?),
        spacing: num(h[2])?,
        nx,
        ny,
        values,
        energy: num(h[5])?,
        detections: Vec::new(),
        exceedances: 0,
    })
}

/// `x,y,peb` with one row per probe point.
pub fn write_coverage_csv(w: &mut impl Write, map: &CoverageMap<f64>) -> Result<()> {
    writeln!(w, "x,y,peb")?;
    for (p, peb) in map.points.iter().zip(&map.peb) {
        writeln!(w, "{},{},{}", p.x, p.y, peb)?;
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "axis,value,selection,metric,n,mean,std,median,q10,q90,ci_low,ci_high";

pub fn write_sweep_csv(w: &mut impl Write, rows: &[SweepRow], header: bool) -> Result<()> {
    if header {
        writeln!(w, "{SWEEP_HEADER}")?;
    }
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.axis, r.value, r.selection, r.metric, r.n, r.mean, r.std, r.median, r.q10, r.q90, r.ci_low, r.ci_high
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EchoSet<f64> {
        EchoSet {
            samples: (0..2)
                .map(|r| {
                    (0..3)
                        .map(|l| DVector::from_fn(4, |n, _| Complex::new((r * 100 + l * 10 + n) as f64, -(n as f64) * 0.5)))
                        .collect()
                })
                .collect(),
            noise_power: 4e-16,
            carrier_hz: 3.5e9,
        }
    }

    #[test]
    fn echo_round_trip_and_layout() {
        let e = sample();
        let mut buf = Vec::new();
        write_echoes(&mut buf, &e).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 12 + 16 + 16 * 2 * 3 * 4);
        assert_eq!(&buf[..4], b"DMEC");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        // First sample's imaginary part of element 1: [r0][l0][n1].
        let off = 36 + 16 + 8;
        assert_eq!(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), -0.5);
        assert_eq!(read_echoes(&mut buf.as_slice()).unwrap(), e);
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let mut buf = Vec::new();
        write_echoes(&mut buf, &sample()).unwrap();
        assert!(matches!(read_echoes(&mut &buf[..buf.len() - 1]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_echoes(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn raster_round_trip() {
        let map = CostMap {
            origin: Position2D::new(-5.0, 10.0),
            spacing: 2.5,
            nx: 3,
            ny: 2,
            values: vec![1.0, 2.0, 3.0, 4.5, 5.0, 6.25e-12],
            energy: 7.0,
            detections: Vec::new(),
            exceedances: 0,
        };
        let mut buf = Vec::new();
        write_cost_map(&mut buf, &map).unwrap();
        assert_eq!(read_cost_map(&mut buf.as_slice()).unwrap(), map);
    }
}
